//! Reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every operation in creation order, which is already a
//! topological order: an operation can only consume values recorded before
//! it. [`Tape::backward`] walks the records once in reverse.

use super::conv::{self, ConvPlan, Padding};
use super::{Float, Tensor};
use crate::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Height,
    Width,
}

/// Normalization statistics source for [`Tape::batch_norm`].
#[derive(Debug, Clone, Copy)]
pub enum NormMode<'a, T> {
    /// Normalize with the statistics of the current batch.
    Train,
    /// Normalize with frozen running statistics.
    Eval { mean: &'a [T], var: &'a [T] },
}

/// Per-channel statistics of a training-mode batch normalization.
#[derive(Debug, Clone)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Unbiased variance, used for running-statistics updates.
    pub var: Vec<T>,
}

enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Affine {
        x: Var,
        scale: T,
    },
    LeakyRelu {
        x: Var,
        slope: T,
    },
    Sigmoid {
        x: Var,
    },
    Log {
        x: Var,
    },
    Abs {
        x: Var,
    },
    Square {
        x: Var,
    },
    Clamp {
        x: Var,
        lo: T,
        hi: T,
    },
    Powf {
        x: Var,
        exponent: T,
    },
    Sum {
        x: Var,
    },
    Mean {
        x: Var,
    },
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        plan: ConvPlan,
    },
    ConvTranspose2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        plan: ConvPlan,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        train: bool,
    },
    GlobalAvgPool {
        x: Var,
    },
    Dense {
        x: Var,
        w: Var,
        b: Var,
    },
    GaussianFilter {
        x: Var,
        kernel: Vec<T>,
    },
    AvgPool2 {
        x: Var,
    },
    ForwardDiff {
        x: Var,
        axis: Axis,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Recorded computation. Confined to one thread at a time (it is `Send`).
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Float> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Tape::backward`], indexed by leaf [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Float> Gradients<T> {
    /// Gradient of a leaf that requires grad; `None` for other values.
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

impl<T: Float> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records an input value.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    /// A gradient-free copy of `v`.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::shape(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    fn binary(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T, rec: Op<T>) -> Result<Var> {
        self.same_shape(op, a, b)?;
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::from_parts(va.shape().to_vec(), data);
        Ok(self.push(out, rec, &[a, b]))
    }

    fn unary(&mut self, x: Var, f: impl Fn(T) -> T, rec: Op<T>) -> Var {
        let out = self.value(x).map(f);
        self.push(out, rec, &[x])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    /// `scale * x + shift`, elementwise.
    pub fn affine(&mut self, x: Var, scale: T, shift: T) -> Var {
        self.unary(x, |v| scale * v + shift, Op::Affine { x, scale })
    }

    pub fn scale(&mut self, x: Var, scale: T) -> Var {
        self.affine(x, scale, T::zero())
    }

    pub fn leaky_relu(&mut self, x: Var, slope: T) -> Var {
        self.unary(
            x,
            |v| if v > T::zero() { v } else { slope * v },
            Op::LeakyRelu { x, slope },
        )
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, |v| T::one() / (T::one() + (-v).exp()), Op::Sigmoid { x })
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, T::ln, Op::Log { x })
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, num_traits::Float::abs, Op::Abs { x })
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, |v| v * v, Op::Square { x })
    }

    pub fn clamp(&mut self, x: Var, lo: T, hi: T) -> Var {
        self.unary(x, |v| v.max(lo).min(hi), Op::Clamp { x, lo, hi })
    }

    pub fn powf(&mut self, x: Var, exponent: T) -> Var {
        self.unary(x, |v| v.powf(exponent), Op::Powf { x, exponent })
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        self.push(out, Op::Sum { x }, &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let out = Tensor::scalar(v.sum() / T::lit(v.len() as f64));
        self.push(out, Op::Mean { x }, &[x])
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, padding: Padding) -> Result<Var> {
        let (vx, vw) = (self.value(x), self.value(w));
        let vb = b.map(|b| self.value(b));
        let plan = conv::plan_conv2d(vx, vw, vb, stride, padding)?;
        let out = conv::conv2d_planned(&plan, vx, vw, vb);
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(out, Op::Conv2d { x, w, b, plan }, &inputs))
    }

    /// Adjoint of `conv2d(.., stride, Same)`; `w` is `[C_in, C_out, k, k]`.
    pub fn conv_transpose2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize) -> Result<Var> {
        let (vx, vw) = (self.value(x), self.value(w));
        let vb = b.map(|b| self.value(b));
        let plan = conv::plan_conv_transpose2d(vx, vw, vb, stride)?;
        let out = conv::conv_transpose2d_planned(&plan, vx, vw, vb);
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(out, Op::ConvTranspose2d { x, w, b, plan }, &inputs))
    }

    /// Per-channel normalization of a 4-D tensor followed by `gamma * xhat + beta`.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: T,
        mode: NormMode<'_, T>,
    ) -> Result<(Var, Option<BatchStats<T>>)> {
        let vx = self.value(x);
        let (b, c, h, w) = vx.dims4()?;
        for (name, p) in [("gamma", gamma), ("beta", beta)] {
            if self.value(p).len() != c {
                return Err(Error::shape(
                    "batch_norm",
                    format!("{name} has {} entries for {c} channels", self.value(p).len()),
                ));
            }
        }
        let plane = h * w;
        let count = b * plane;
        let (mean, var, stats, train) = match mode {
            NormMode::Train => {
                if count < 2 {
                    return Err(Error::InvalidArgument(format!(
                        "batch_norm in train mode needs at least 2 values per channel, got {count}"
                    )));
                }
                let mut mean = vec![T::zero(); c];
                let mut var = vec![T::zero(); c];
                for ch in 0..c {
                    let mut s = T::zero();
                    for bi in 0..b {
                        let off = (bi * c + ch) * plane;
                        s += vx.data()[off..off + plane].iter().copied().sum::<T>();
                    }
                    let m = s / T::lit(count as f64);
                    let mut ss = T::zero();
                    for bi in 0..b {
                        let off = (bi * c + ch) * plane;
                        ss += vx.data()[off..off + plane]
                            .iter()
                            .map(|&v| (v - m) * (v - m))
                            .sum::<T>();
                    }
                    mean[ch] = m;
                    var[ch] = ss / T::lit(count as f64);
                }
                let unbiased = T::lit(count as f64 / (count as f64 - 1.0));
                let stats = BatchStats {
                    mean: mean.clone(),
                    var: var.iter().map(|&v| v * unbiased).collect(),
                };
                (mean, var, Some(stats), true)
            }
            NormMode::Eval { mean, var } => {
                if mean.len() != c || var.len() != c {
                    return Err(Error::shape(
                        "batch_norm",
                        format!("running statistics sized {}/{} for {c} channels", mean.len(), var.len()),
                    ));
                }
                (mean.to_vec(), var.to_vec(), None, false)
            }
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let (g, bt) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![T::zero(); vx.len()];
        let mut out = vec![T::zero(); vx.len()];
        for bi in 0..b {
            for ch in 0..c {
                let off = (bi * c + ch) * plane;
                for i in off..off + plane {
                    let xh = (vx.data()[i] - mean[ch]) * inv_std[ch];
                    xhat[i] = xh;
                    out[i] = g[ch] * xh + bt[ch];
                }
            }
        }
        let out = Tensor::from_parts(vx.shape().to_vec(), out);
        let var_out = self.push(
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            },
            &[x, gamma, beta],
        );
        Ok((var_out, stats))
    }

    /// `[B, C, H, W] -> [B, C]` spatial mean.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let vx = self.value(x);
        let (b, c, h, w) = vx.dims4()?;
        let inv = T::lit(1.0 / (h * w) as f64);
        let data = vx
            .data()
            .chunks(h * w)
            .map(|p| p.iter().copied().sum::<T>() * inv)
            .collect();
        Ok(self.push(Tensor::from_parts(vec![b, c], data), Op::GlobalAvgPool { x }, &[x]))
    }

    /// `[B, F] x [O, F]^T + [O] -> [B, O]`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (vx, vw, vb) = (self.value(x), self.value(w), self.value(b));
        let (&[bs, f], &[o, fw]) = (vx.shape(), vw.shape()) else {
            return Err(Error::shape(
                "dense",
                format!(
                    "expected 2-D input and weight, got {:?} and {:?}",
                    vx.shape(),
                    vw.shape()
                ),
            ));
        };
        if f != fw || vb.len() != o {
            return Err(Error::shape(
                "dense",
                format!("input {:?}, weight {:?}, bias {:?}", vx.shape(), vw.shape(), vb.shape()),
            ));
        }
        let mut data = vec![T::zero(); bs * o];
        for bi in 0..bs {
            let row = &vx.data()[bi * f..(bi + 1) * f];
            for oi in 0..o {
                let wr = &vw.data()[oi * f..(oi + 1) * f];
                data[bi * o + oi] = row.iter().zip(wr).map(|(&a, &c)| a * c).sum::<T>() + vb.data()[oi];
            }
        }
        Ok(self.push(Tensor::from_parts(vec![bs, o], data), Op::Dense { x, w, b }, &[x, w, b]))
    }

    /// Separable "valid" filtering of every `[H, W]` plane with `kernel`
    /// applied along both axes.
    pub fn gaussian_filter(&mut self, x: Var, kernel: &[T]) -> Result<Var> {
        let vx = self.value(x);
        let (b, c, h, w) = vx.dims4()?;
        let k = kernel.len();
        if k == 0 || h < k || w < k {
            return Err(Error::shape(
                "gaussian_filter",
                format!("{h}x{w} planes are smaller than the {k}-tap window"),
            ));
        }
        let (oh, ow) = (h - k + 1, w - k + 1);
        let mut out = vec![T::zero(); b * c * oh * ow];
        let mut tmp = vec![T::zero(); h * ow];
        for (src, dst) in vx.data().chunks(h * w).zip(out.chunks_mut(oh * ow)) {
            filter_plane(src, h, w, kernel, &mut tmp, dst);
        }
        let out = Tensor::from_parts(vec![b, c, oh, ow], out);
        Ok(self.push(
            out,
            Op::GaussianFilter {
                x,
                kernel: kernel.to_vec(),
            },
            &[x],
        ))
    }

    /// 2x2 mean pooling; a trailing odd row or column is dropped.
    pub fn avg_pool2(&mut self, x: Var) -> Result<Var> {
        let vx = self.value(x);
        let (b, c, h, w) = vx.dims4()?;
        let (oh, ow) = (h / 2, w / 2);
        if oh == 0 || ow == 0 {
            return Err(Error::shape("avg_pool2", format!("{h}x{w} planes cannot be halved")));
        }
        let quarter = T::lit(0.25);
        let mut out = Vec::with_capacity(b * c * oh * ow);
        for p in vx.data().chunks(h * w) {
            for r in 0..oh {
                for q in 0..ow {
                    let i = 2 * r * w + 2 * q;
                    out.push((p[i] + p[i + 1] + p[i + w] + p[i + w + 1]) * quarter);
                }
            }
        }
        Ok(self.push(Tensor::from_parts(vec![b, c, oh, ow], out), Op::AvgPool2 { x }, &[x]))
    }

    /// Forward difference `x[i + 1] - x[i]` along one spatial axis.
    pub fn forward_diff(&mut self, x: Var, axis: Axis) -> Result<Var> {
        let vx = self.value(x);
        let (b, c, h, w) = vx.dims4()?;
        let (oh, ow) = match axis {
            Axis::Height => (h.checked_sub(1), Some(w)),
            Axis::Width => (Some(h), w.checked_sub(1)),
        };
        let (Some(oh), Some(ow)) = (oh.filter(|&v| v > 0), ow.filter(|&v| v > 0)) else {
            return Err(Error::shape("forward_diff", format!("{h}x{w} planes are too small")));
        };
        let mut out = Vec::with_capacity(b * c * oh * ow);
        for p in vx.data().chunks(h * w) {
            for r in 0..oh {
                for q in 0..ow {
                    let (i, j) = match axis {
                        Axis::Height => (r * w + q, (r + 1) * w + q),
                        Axis::Width => (r * w + q, r * w + q + 1),
                    };
                    out.push(p[j] - p[i]);
                }
            }
        }
        Ok(self.push(
            Tensor::from_parts(vec![b, c, oh, ow], out),
            Op::ForwardDiff { x, axis },
            &[x],
        ))
    }

    /// Accumulates `d loss / d leaf` for every leaf that requires grad.
    ///
    /// Leaves that require grad but do not influence `loss` receive zeros.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::InvalidArgument(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Vec<T>>> = (0..n).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        let mut out: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        for i in (0..n).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                let g = grads[i].take().unwrap_or_else(|| vec![T::zero(); node.value.len()]);
                out[i] = Some(Tensor::from_parts(node.value.shape().to_vec(), g));
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
        }
        // Leaves recorded after `loss` cannot influence it.
        for (i, node) in self.nodes.iter().enumerate().skip(n) {
            if node.requires_grad && matches!(node.op, Op::Leaf) {
                out[i] = Some(Tensor::zeros(node.value.shape()));
            }
        }
        Ok(Gradients { grads: out })
    }

    fn propagate(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let val = |v: Var| self.nodes[v.0].value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, |d| d.iter_mut().zip(g).for_each(|(d, &g)| *d += g));
                self.accumulate(grads, *b, |d| d.iter_mut().zip(g).for_each(|(d, &g)| *d += g));
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, |d| d.iter_mut().zip(g).for_each(|(d, &g)| *d += g));
                self.accumulate(grads, *b, |d| d.iter_mut().zip(g).for_each(|(d, &g)| *d -= g));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                self.accumulate(grads, *a, |d| zip3(d, g, vb, |g, y| g * y));
                self.accumulate(grads, *b, |d| zip3(d, g, va, |g, x| g * x));
            }
            Op::Div(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                self.accumulate(grads, *a, |d| zip3(d, g, vb, |g, y| g / y));
                self.accumulate(grads, *b, |d| {
                    for (((d, &g), &x), &y) in d.iter_mut().zip(g).zip(va).zip(vb) {
                        *d -= g * x / (y * y);
                    }
                });
            }
            Op::Affine { x, scale } => {
                self.accumulate(grads, *x, |d| d.iter_mut().zip(g).for_each(|(d, &g)| *d += g * *scale));
            }
            Op::LeakyRelu { x, slope } => {
                self.accumulate(grads, *x, |d| {
                    zip3(d, g, val(*x), |g, v| if v > T::zero() { g } else { g * *slope })
                });
            }
            Op::Sigmoid { x } => {
                let y = node.value.data();
                self.accumulate(grads, *x, |d| zip3(d, g, y, |g, y| g * y * (T::one() - y)));
            }
            Op::Log { x } => self.accumulate(grads, *x, |d| zip3(d, g, val(*x), |g, v| g / v)),
            Op::Abs { x } => self.accumulate(grads, *x, |d| {
                zip3(d, g, val(*x), |g, v| {
                    if v > T::zero() {
                        g
                    } else if v < T::zero() {
                        -g
                    } else {
                        T::zero()
                    }
                })
            }),
            Op::Square { x } => self.accumulate(grads, *x, |d| zip3(d, g, val(*x), |g, v| g * (v + v))),
            Op::Clamp { x, lo, hi } => self.accumulate(grads, *x, |d| {
                zip3(d, g, val(*x), |g, v| if v >= *lo && v <= *hi { g } else { T::zero() })
            }),
            Op::Powf { x, exponent } => self.accumulate(grads, *x, |d| {
                zip3(d, g, val(*x), |g, v| g * *exponent * v.powf(*exponent - T::one()))
            }),
            Op::Sum { x } => self.accumulate(grads, *x, |d| d.iter_mut().for_each(|d| *d += g[0])),
            Op::Mean { x } => {
                let s = g[0] / T::lit(val(*x).len() as f64);
                self.accumulate(grads, *x, |d| d.iter_mut().for_each(|d| *d += s));
            }
            Op::Conv2d { x, w, b, plan } => {
                let want = [self.needs(*x), self.needs(*w), b.is_some_and(|b| self.needs(b))];
                let cg = conv::conv2d_backward(plan, &self.nodes[x.0].value, &self.nodes[w.0].value, g, want);
                self.apply_conv_grads(grads, *x, *w, *b, cg);
            }
            Op::ConvTranspose2d { x, w, b, plan } => {
                let want = [self.needs(*x), self.needs(*w), b.is_some_and(|b| self.needs(b))];
                let cg = conv::conv_transpose2d_backward(plan, &self.nodes[x.0].value, &self.nodes[w.0].value, g, want);
                self.apply_conv_grads(grads, *x, *w, *b, cg);
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => {
                let (b, c, h, w) = node.value.dims4().expect("4-D batch norm");
                let plane = h * w;
                let count = T::lit((b * plane) as f64);
                let mut sum_g = vec![T::zero(); c];
                let mut sum_gx = vec![T::zero(); c];
                for bi in 0..b {
                    for ch in 0..c {
                        let off = (bi * c + ch) * plane;
                        for i in off..off + plane {
                            sum_g[ch] += g[i];
                            sum_gx[ch] += g[i] * xhat[i];
                        }
                    }
                }
                let gam = val(*gamma);
                self.accumulate(grads, *x, |d| {
                    for bi in 0..b {
                        for ch in 0..c {
                            let off = (bi * c + ch) * plane;
                            let k = gam[ch] * inv_std[ch];
                            for i in off..off + plane {
                                d[i] += if *train {
                                    k * (g[i] - sum_g[ch] / count - xhat[i] * sum_gx[ch] / count)
                                } else {
                                    k * g[i]
                                };
                            }
                        }
                    }
                });
                self.accumulate(grads, *gamma, |d| d.iter_mut().zip(&sum_gx).for_each(|(d, &s)| *d += s));
                self.accumulate(grads, *beta, |d| d.iter_mut().zip(&sum_g).for_each(|(d, &s)| *d += s));
            }
            Op::GlobalAvgPool { x } => {
                let (_, _, h, w) = self.nodes[x.0].value.dims4().expect("4-D pool input");
                let inv = T::lit(1.0 / (h * w) as f64);
                self.accumulate(grads, *x, |d| {
                    for (p, &gv) in d.chunks_mut(h * w).zip(g) {
                        p.iter_mut().for_each(|d| *d += gv * inv);
                    }
                });
            }
            Op::Dense { x, w, b } => {
                let (vx, vw) = (val(*x), val(*w));
                let o = self.nodes[b.0].value.len();
                let f = vw.len() / o;
                let bs = vx.len() / f;
                self.accumulate(grads, *x, |d| {
                    for bi in 0..bs {
                        for oi in 0..o {
                            let gv = g[bi * o + oi];
                            for fi in 0..f {
                                d[bi * f + fi] += gv * vw[oi * f + fi];
                            }
                        }
                    }
                });
                self.accumulate(grads, *w, |d| {
                    for bi in 0..bs {
                        for oi in 0..o {
                            let gv = g[bi * o + oi];
                            for fi in 0..f {
                                d[oi * f + fi] += gv * vx[bi * f + fi];
                            }
                        }
                    }
                });
                self.accumulate(grads, *b, |d| {
                    for bi in 0..bs {
                        for oi in 0..o {
                            d[oi] += g[bi * o + oi];
                        }
                    }
                });
            }
            Op::GaussianFilter { x, kernel } => {
                let (_, _, h, w) = self.nodes[x.0].value.dims4().expect("4-D filter input");
                let k = kernel.len();
                let (oh, ow) = (h - k + 1, w - k + 1);
                self.accumulate(grads, *x, |d| {
                    let mut tmp = vec![T::zero(); h * ow];
                    for (dp, gp) in d.chunks_mut(h * w).zip(g.chunks(oh * ow)) {
                        filter_plane_adjoint(gp, h, w, kernel, &mut tmp, dp);
                    }
                });
            }
            Op::AvgPool2 { x } => {
                let (_, _, h, w) = self.nodes[x.0].value.dims4().expect("4-D pool input");
                let (oh, ow) = (h / 2, w / 2);
                let quarter = T::lit(0.25);
                self.accumulate(grads, *x, |d| {
                    for (dp, gp) in d.chunks_mut(h * w).zip(g.chunks(oh * ow)) {
                        for r in 0..oh {
                            for q in 0..ow {
                                let gv = gp[r * ow + q] * quarter;
                                let i = 2 * r * w + 2 * q;
                                dp[i] += gv;
                                dp[i + 1] += gv;
                                dp[i + w] += gv;
                                dp[i + w + 1] += gv;
                            }
                        }
                    }
                });
            }
            Op::ForwardDiff { x, axis } => {
                let (_, _, h, w) = self.nodes[x.0].value.dims4().expect("4-D diff input");
                let (oh, ow) = match axis {
                    Axis::Height => (h - 1, w),
                    Axis::Width => (h, w - 1),
                };
                self.accumulate(grads, *x, |d| {
                    for (dp, gp) in d.chunks_mut(h * w).zip(g.chunks(oh * ow)) {
                        for r in 0..oh {
                            for q in 0..ow {
                                let (i, j) = match axis {
                                    Axis::Height => (r * w + q, (r + 1) * w + q),
                                    Axis::Width => (r * w + q, r * w + q + 1),
                                };
                                let gv = gp[r * ow + q];
                                dp[j] += gv;
                                dp[i] -= gv;
                            }
                        }
                    }
                });
            }
        }
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn accumulate(&self, grads: &mut [Option<Vec<T>>], v: Var, f: impl FnOnce(&mut [T])) {
        if !self.needs(v) {
            return;
        }
        let slot = grads[v.0].get_or_insert_with(|| vec![T::zero(); self.nodes[v.0].value.len()]);
        f(slot);
    }

    fn add_into(&self, grads: &mut [Option<Vec<T>>], v: Var, delta: Vec<T>) {
        match &mut grads[v.0] {
            Some(acc) => acc.iter_mut().zip(&delta).for_each(|(a, &d)| *a += d),
            slot @ None => *slot = Some(delta),
        }
    }

    fn apply_conv_grads(&self, grads: &mut [Option<Vec<T>>], x: Var, w: Var, b: Option<Var>, cg: conv::ConvGrads<T>) {
        if let Some(dx) = cg.input {
            self.add_into(grads, x, dx);
        }
        if let Some(dw) = cg.weight {
            self.add_into(grads, w, dw);
        }
        if let (Some(b), Some(db)) = (b, cg.bias) {
            self.add_into(grads, b, db);
        }
    }
}

fn zip3<T: Float>(d: &mut [T], g: &[T], v: &[T], f: impl Fn(T, T) -> T) {
    for ((d, &g), &v) in d.iter_mut().zip(g).zip(v) {
        *d += f(g, v);
    }
}

fn filter_plane<T: Float>(src: &[T], h: usize, w: usize, kernel: &[T], tmp: &mut [T], dst: &mut [T]) {
    let k = kernel.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    for r in 0..h {
        let row = &src[r * w..(r + 1) * w];
        for q in 0..ow {
            tmp[r * ow + q] = kernel.iter().zip(&row[q..q + k]).map(|(&a, &b)| a * b).sum();
        }
    }
    for r in 0..oh {
        for q in 0..ow {
            let mut acc = T::zero();
            for (i, &kv) in kernel.iter().enumerate() {
                acc += kv * tmp[(r + i) * ow + q];
            }
            dst[r * ow + q] = acc;
        }
    }
}

fn filter_plane_adjoint<T: Float>(g: &[T], h: usize, w: usize, kernel: &[T], tmp: &mut [T], dst: &mut [T]) {
    let k = kernel.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    tmp.iter_mut().for_each(|v| *v = T::zero());
    for r in 0..oh {
        for q in 0..ow {
            let gv = g[r * ow + q];
            for (i, &kv) in kernel.iter().enumerate() {
                tmp[(r + i) * ow + q] += kv * gv;
            }
        }
    }
    for r in 0..h {
        for q in 0..ow {
            let tv = tmp[r * ow + q];
            for (j, &kv) in kernel.iter().enumerate() {
                dst[r * w + q + j] += kv * tv;
            }
        }
    }
}
