//! Convolution kernels (im2col + GEMM) used by the tape.
//!
//! Convolutions are cross-correlations. `Same` padding pads `k / 2` on every
//! side so that the output extent is `ceil(n / stride)`; the transposed
//! convolution is the exact adjoint of that map and therefore multiplies
//! extents by `stride`.

use super::float::{gemm, MatRef};
use super::{Float, Tensor};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    Same,
    Valid,
}

/// Geometry of a forward convolution from `(cin, h, w)` to `(oh, ow)`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn new(cin: usize, h: usize, w: usize, k: usize, stride: usize, padding: Padding) -> Result<Self> {
        if k.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!("kernel size {k} must be odd")));
        }
        if stride == 0 {
            return Err(Error::InvalidArgument("stride must be positive".into()));
        }
        let pad = match padding {
            Padding::Same => k / 2,
            Padding::Valid => 0,
        };
        if h + 2 * pad < k || w + 2 * pad < k {
            return Err(Error::shape(
                "conv2d",
                format!("{h}x{w} input is smaller than the {k}x{k} kernel"),
            ));
        }
        let oh = (h + 2 * pad - k) / stride + 1;
        let ow = (w + 2 * pad - k) / stride + 1;
        Ok(Self {
            cin,
            h,
            w,
            k,
            stride,
            pad,
            oh,
            ow,
        })
    }

    /// Rows of the column matrix: `cin * k * k`.
    pub fn patch(&self) -> usize {
        self.cin * self.k * self.k
    }

    pub fn positions(&self) -> usize {
        self.oh * self.ow
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }
}

fn im2col<T: Float>(x: &[T], g: &ConvGeom, cols: &mut [T]) {
    let p = g.positions();
    for c in 0..g.cin {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let line = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize {
                        line.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        *v = if ix < 0 || ix >= g.w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-adds columns back into an image.
fn col2im<T: Float>(cols: &[T], g: &ConvGeom, x: &mut [T]) {
    let p = g.positions();
    for c in 0..g.cin {
        let plane = &mut x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, &v) in src[oy * g.ow..(oy + 1) * g.ow].iter().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

fn check_weight<T: Float>(op: &'static str, weight: &Tensor<T>, channels: usize) -> Result<(usize, usize, usize)> {
    let (a, b, kh, kw) = weight
        .dims4()
        .map_err(|_| Error::shape(op, format!("weight must be 4-D, got {:?}", weight.shape())))?;
    if kh != kw {
        return Err(Error::shape(op, format!("non-square kernel {kh}x{kw}")));
    }
    if b != channels && op == "conv2d" {
        return Err(Error::shape(
            op,
            format!("input has Cin={channels} but weight expects Cin={b}"),
        ));
    }
    if a != channels && op == "conv_transpose2d" {
        return Err(Error::shape(
            op,
            format!("input has {channels} channels but weight expects {a}"),
        ));
    }
    Ok((a, b, kh))
}

fn check_bias<T: Float>(op: &'static str, bias: Option<&Tensor<T>>, channels: usize) -> Result<()> {
    if let Some(b) = bias {
        if b.len() != channels {
            return Err(Error::shape(
                op,
                format!("bias has {} entries for {channels} output channels", b.len()),
            ));
        }
    }
    Ok(())
}

fn add_bias<T: Float>(out: &mut [T], bias: Option<&Tensor<T>>, plane: usize) {
    if let Some(b) = bias {
        for (chunk, &bv) in out.chunks_mut(plane).zip(b.data()) {
            chunk.iter_mut().for_each(|v| *v += bv);
        }
    }
}

pub(crate) struct ConvPlan {
    pub geom: ConvGeom,
    pub cout: usize,
    pub batch: usize,
}

pub(crate) fn plan_conv2d<T: Float>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    padding: Padding,
) -> Result<ConvPlan> {
    let (b, cin, h, w) = input.dims4()?;
    let (cout, _, k) = check_weight("conv2d", weight, cin)?;
    check_bias("conv2d", bias, cout)?;
    let geom = ConvGeom::new(cin, h, w, k, stride, padding)?;
    Ok(ConvPlan { geom, cout, batch: b })
}

pub fn conv2d<T: Float>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    padding: Padding,
) -> Result<Tensor<T>> {
    let plan = plan_conv2d(input, weight, bias, stride, padding)?;
    Ok(conv2d_planned(&plan, input, weight, bias))
}

pub(crate) fn conv2d_planned<T: Float>(
    plan: &ConvPlan,
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
) -> Tensor<T> {
    let g = &plan.geom;
    let (kk, p) = (g.patch(), g.positions());
    let in_n = g.cin * g.h * g.w;
    let out_n = plan.cout * p;
    let mut out = vec![T::zero(); plan.batch * out_n];
    let mut cols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); kk * p]
    };
    let wmat = MatRef::new(weight.data(), plan.cout, kk);
    for bi in 0..plan.batch {
        let x = &input.data()[bi * in_n..(bi + 1) * in_n];
        let colref = if g.is_pointwise() {
            x
        } else {
            im2col(x, g, &mut cols);
            &cols
        };
        let dst = &mut out[bi * out_n..(bi + 1) * out_n];
        gemm(wmat, MatRef::new(colref, kk, p), dst, false);
        add_bias(dst, bias, p);
    }
    Tensor::from_parts(vec![plan.batch, plan.cout, g.oh, g.ow], out)
}

/// Gradients of a forward convolution. Entries are `None` when not requested.
pub(crate) struct ConvGrads<T> {
    pub input: Option<Vec<T>>,
    pub weight: Option<Vec<T>>,
    pub bias: Option<Vec<T>>,
}

pub(crate) fn conv2d_backward<T: Float>(
    plan: &ConvPlan,
    input: &Tensor<T>,
    weight: &Tensor<T>,
    dout: &[T],
    want: [bool; 3],
) -> ConvGrads<T> {
    let g = &plan.geom;
    let (kk, p) = (g.patch(), g.positions());
    let in_n = g.cin * g.h * g.w;
    let out_n = plan.cout * p;
    let mut dx = want[0].then(|| vec![T::zero(); plan.batch * in_n]);
    let mut dw = want[1].then(|| vec![T::zero(); plan.cout * kk]);
    let db = want[2].then(|| bias_grad(dout, plan.batch, plan.cout, p));
    let mut cols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); kk * p]
    };
    let mut dcols = if g.is_pointwise() || dx.is_none() {
        Vec::new()
    } else {
        vec![T::zero(); kk * p]
    };
    let wmat = MatRef::new(weight.data(), plan.cout, kk);
    for bi in 0..plan.batch {
        let dy = MatRef::new(&dout[bi * out_n..(bi + 1) * out_n], plan.cout, p);
        if let Some(dw) = dw.as_mut() {
            let x = &input.data()[bi * in_n..(bi + 1) * in_n];
            let colref = if g.is_pointwise() {
                x
            } else {
                im2col(x, g, &mut cols);
                &cols
            };
            gemm(dy, MatRef::new(colref, kk, p).t(), dw, true);
        }
        if let Some(dx) = dx.as_mut() {
            let dst = &mut dx[bi * in_n..(bi + 1) * in_n];
            if g.is_pointwise() {
                gemm(wmat.t(), dy, dst, false);
            } else {
                gemm(wmat.t(), dy, &mut dcols, false);
                col2im(&dcols, g, dst);
            }
        }
    }
    ConvGrads {
        input: dx,
        weight: dw,
        bias: db,
    }
}

fn bias_grad<T: Float>(dout: &[T], batch: usize, channels: usize, plane: usize) -> Vec<T> {
    let mut db = vec![T::zero(); channels];
    for bi in 0..batch {
        for (c, acc) in db.iter_mut().enumerate() {
            let off = (bi * channels + c) * plane;
            *acc += dout[off..off + plane].iter().copied().sum::<T>();
        }
    }
    db
}

/// Transposed convolution; `geom` describes the forward convolution it is the
/// adjoint of (from the transposed output back to its input).
pub(crate) fn plan_conv_transpose2d<T: Float>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
) -> Result<ConvPlan> {
    let (b, cy, h, w) = input.dims4()?;
    let (_, cx, k) = check_weight("conv_transpose2d", weight, cy)?;
    check_bias("conv_transpose2d", bias, cx)?;
    let geom = ConvGeom::new(cx, h * stride, w * stride, k, stride, Padding::Same)?;
    debug_assert_eq!((geom.oh, geom.ow), (h, w));
    Ok(ConvPlan {
        geom,
        cout: cy,
        batch: b,
    })
}

pub fn conv_transpose2d<T: Float>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
) -> Result<Tensor<T>> {
    let plan = plan_conv_transpose2d(input, weight, bias, stride)?;
    Ok(conv_transpose2d_planned(&plan, input, weight, bias))
}

pub(crate) fn conv_transpose2d_planned<T: Float>(
    plan: &ConvPlan,
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
) -> Tensor<T> {
    let g = &plan.geom;
    let (kk, p) = (g.patch(), g.positions());
    let in_n = plan.cout * p;
    let out_n = g.cin * g.h * g.w;
    let mut out = vec![T::zero(); plan.batch * out_n];
    let mut cols = vec![T::zero(); kk * p];
    let wmat = MatRef::new(weight.data(), plan.cout, kk);
    for bi in 0..plan.batch {
        let y = MatRef::new(&input.data()[bi * in_n..(bi + 1) * in_n], plan.cout, p);
        let dst = &mut out[bi * out_n..(bi + 1) * out_n];
        if g.is_pointwise() {
            gemm(wmat.t(), y, dst, false);
        } else {
            gemm(wmat.t(), y, &mut cols, false);
            col2im(&cols, g, dst);
        }
        add_bias(dst, bias, g.h * g.w);
    }
    Tensor::from_parts(vec![plan.batch, g.cin, g.h, g.w], out)
}

pub(crate) fn conv_transpose2d_backward<T: Float>(
    plan: &ConvPlan,
    input: &Tensor<T>,
    weight: &Tensor<T>,
    dout: &[T],
    want: [bool; 3],
) -> ConvGrads<T> {
    let g = &plan.geom;
    let (kk, p) = (g.patch(), g.positions());
    let in_n = plan.cout * p;
    let out_n = g.cin * g.h * g.w;
    let mut dy = want[0].then(|| vec![T::zero(); plan.batch * in_n]);
    let mut dw = want[1].then(|| vec![T::zero(); plan.cout * kk]);
    let db = want[2].then(|| bias_grad(dout, plan.batch, g.cin, g.h * g.w));
    let mut dcols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); kk * p]
    };
    let wmat = MatRef::new(weight.data(), plan.cout, kk);
    for bi in 0..plan.batch {
        let d = &dout[bi * out_n..(bi + 1) * out_n];
        let dref = if g.is_pointwise() {
            d
        } else {
            im2col(d, g, &mut dcols);
            &dcols
        };
        let dc = MatRef::new(dref, kk, p);
        if let Some(dy) = dy.as_mut() {
            gemm(wmat, dc, &mut dy[bi * in_n..(bi + 1) * in_n], false);
        }
        if let Some(dw) = dw.as_mut() {
            let y = MatRef::new(&input.data()[bi * in_n..(bi + 1) * in_n], plan.cout, p);
            gemm(y, dc.t(), dw, true);
        }
    }
    ConvGrads {
        input: dy,
        weight: dw,
        bias: db,
    }
}
