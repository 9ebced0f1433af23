//! Independent reference implementations shared by the integration tests.
//!
//! Everything here is written with plain loops over `f64` buffers and only
//! borrows container types from the crate.

#![allow(dead_code)]

use std::collections::HashMap;

use essgan::autodiff::{Axis, NormMode, Padding, Tape, Tensor, Var};
use essgan::model::{Ablation, Model, ModelParameters, ParamRole, BN_EPS, LEAKY_SLOPE};
use essgan::{Result, SgConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

// ---------------------------------------------------------------- transforms

/// Unitary 2-D DFT by the double sum over all pixels.
pub fn naive_dft2(re: &[f64], im: &[f64], h: usize, w: usize) -> (Vec<f64>, Vec<f64>) {
    let scale = 1.0 / ((h * w) as f64).sqrt();
    let mut out_re = vec![0.0; h * w];
    let mut out_im = vec![0.0; h * w];
    for u in 0..h {
        for v in 0..w {
            let (mut sr, mut si) = (0.0, 0.0);
            for r in 0..h {
                for c in 0..w {
                    let phase = -2.0 * std::f64::consts::PI * ((u * r) as f64 / h as f64 + (v * c) as f64 / w as f64);
                    let (s, co) = phase.sin_cos();
                    let (a, b) = (re[r * w + c], im[r * w + c]);
                    sr += a * co - b * s;
                    si += a * s + b * co;
                }
            }
            out_re[u * w + v] = sr * scale;
            out_im[u * w + v] = si * scale;
        }
    }
    (out_re, out_im)
}

// -------------------------------------------------------------- convolutions

fn at(t: &Tensor<f64>, i: [usize; 4]) -> f64 {
    let s = t.shape();
    t.data()[((i[0] * s[1] + i[1]) * s[2] + i[2]) * s[3] + i[3]]
}

/// Cross-correlation of `[B, Ci, H, W]` with `[Co, Ci, k, k]`, zero padding `pad`.
pub fn naive_conv2d(
    x: &Tensor<f64>,
    w: &Tensor<f64>,
    b: Option<&Tensor<f64>>,
    stride: usize,
    pad: usize,
) -> Tensor<f64> {
    let (bs, ci, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (co, k) = (w.shape()[0], w.shape()[2]);
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (wd + 2 * pad - k) / stride + 1;
    let mut out = Tensor::zeros(&[bs, co, oh, ow]);
    for n in 0..bs {
        for o in 0..co {
            for r in 0..oh {
                for c in 0..ow {
                    let mut acc = b.map_or(0.0, |b| b.data()[o]);
                    for i in 0..ci {
                        for dr in 0..k {
                            for dc in 0..k {
                                let rr = (r * stride + dr) as isize - pad as isize;
                                let cc = (c * stride + dc) as isize - pad as isize;
                                if rr < 0 || cc < 0 || rr >= h as isize || cc >= wd as isize {
                                    continue;
                                }
                                acc += at(x, [n, i, rr as usize, cc as usize]) * at(w, [o, i, dr, dc]);
                            }
                        }
                    }
                    out.data_mut()[((n * co + o) * oh + r) * ow + c] = acc;
                }
            }
        }
    }
    out
}

/// Scatter form of the transposed convolution with weight `[Ci, Co, k, k]`:
/// every input pixel spreads `x * w` onto a `stride`-times larger grid.
pub fn naive_conv_transpose2d(x: &Tensor<f64>, w: &Tensor<f64>, b: Option<&Tensor<f64>>, stride: usize) -> Tensor<f64> {
    let (bs, ci, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (co, k) = (w.shape()[1], w.shape()[2]);
    let pad = k / 2;
    let (oh, ow) = (h * stride, wd * stride);
    let mut out = Tensor::zeros(&[bs, co, oh, ow]);
    for n in 0..bs {
        for o in 0..co {
            let bias = b.map_or(0.0, |b| b.data()[o]);
            for p in 0..oh * ow {
                out.data_mut()[(n * co + o) * oh * ow + p] = bias;
            }
        }
        for i in 0..ci {
            for r in 0..h {
                for c in 0..wd {
                    let v = at(x, [n, i, r, c]);
                    for o in 0..co {
                        for dr in 0..k {
                            for dc in 0..k {
                                let rr = (r * stride + dr) as isize - pad as isize;
                                let cc = (c * stride + dc) as isize - pad as isize;
                                if rr < 0 || cc < 0 || rr >= oh as isize || cc >= ow as isize {
                                    continue;
                                }
                                out.data_mut()[((n * co + o) * oh + rr as usize) * ow + cc as usize] +=
                                    v * at(w, [i, o, dr, dc]);
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

// ---------------------------------------------------------- finite differences

/// Central-difference gradient of `f` with respect to every entry of `inputs[which]`.
pub fn fd_gradient(f: &dyn Fn(&[Tensor<f64>]) -> f64, inputs: &[Tensor<f64>], which: usize, h: f64) -> Vec<f64> {
    let mut work = inputs.to_vec();
    (0..inputs[which].len())
        .map(|i| {
            let orig = work[which].data()[i];
            work[which].data_mut()[i] = orig + h;
            let up = f(&work);
            work[which].data_mut()[i] = orig - h;
            let down = f(&work);
            work[which].data_mut()[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// A differentiable function of tape inputs.
pub type TapeOp<'a> = &'a dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>;

/// Builds `sum(op(inputs) * proj)` on a fresh tape with every input
/// requiring grad; returns the value and the analytic gradients.
pub fn tape_value_and_grads(inputs: &[Tensor<f64>], proj: &Tensor<f64>, op: TapeOp) -> Result<(f64, Vec<Tensor<f64>>)> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = op(&mut tape, &vars)?;
    let p = tape.constant(proj.clone());
    let prod = tape.mul(out, p)?;
    let loss = tape.sum(prod);
    let value = tape.value(loss).item();
    let mut grads = tape.backward(loss)?;
    let g = vars
        .iter()
        .map(|&v| grads.take(v).expect("leaf requires grad"))
        .collect();
    Ok((value, g))
}

/// Output shape of `op` on `inputs`.
pub fn output_shape(inputs: &[Tensor<f64>], op: TapeOp) -> Result<Vec<usize>> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = op(&mut tape, &vars)?;
    Ok(tape.value(out).shape().to_vec())
}

/// Worst per-entry relative error between the tape gradients of
/// `sum(op * proj)` and central differences, over every input entry.
pub fn op_grad_error(inputs: &[Tensor<f64>], op: TapeOp, seed: u64, h: f64) -> Result<f64> {
    let shape = output_shape(inputs, op)?;
    let proj = uniform(&shape, -1.0, 1.0, &mut rng(seed ^ 0x5eed));
    let (_, analytic) = tape_value_and_grads(inputs, &proj, op)?;
    let f = |xs: &[Tensor<f64>]| tape_value_and_grads(xs, &proj, op).expect("forward").0;
    let mut worst: f64 = 0.0;
    for (k, a) in analytic.iter().enumerate() {
        let n = fd_gradient(&f, inputs, k, h);
        for (&ai, &ni) in a.data().iter().zip(&n) {
            worst = worst.max(rel_err(ai, ni, 1e-6));
        }
    }
    Ok(worst)
}

/// Step and seed count of the per-op checks; ops are evaluated on inputs
/// bounded away from their kinks, so the nominal step is never refined.
pub const OP_FD_STEP: f64 = 1e-3;
pub const OP_FD_SEEDS: u64 = 20;

/// Entries bounded away from zero so kinks at the origin are never crossed.
pub fn away(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut r = rng(seed);
    Tensor::from_fn(shape, |_| {
        let m = r.random_range(0.1..1.0);
        if r.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

pub fn positive(shape: &[usize], seed: u64) -> Tensor<f64> {
    uniform(shape, 0.2, 1.5, &mut rng(seed))
}

type OpFn = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>>;

pub struct OpCase {
    pub name: String,
    pub make: Box<dyn Fn(u64) -> Vec<Tensor<f64>>>,
    pub op: OpFn,
}

fn case(
    name: impl Into<String>,
    make: impl Fn(u64) -> Vec<Tensor<f64>> + 'static,
    op: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var> + 'static,
) -> OpCase {
    OpCase {
        name: name.into(),
        make: Box::new(make),
        op: Box::new(op),
    }
}

/// Every differentiable tape operation with an input generator.
pub fn op_catalog() -> Vec<OpCase> {
    const S: [usize; 3] = [2, 3, 4];
    let mut v = vec![
        case("add", |k| vec![away(&S, k), away(&S, k + 50)], |t, v| t.add(v[0], v[1])),
        case("sub", |k| vec![away(&S, k), away(&S, k + 50)], |t, v| t.sub(v[0], v[1])),
        case("mul", |k| vec![away(&S, k), away(&S, k + 50)], |t, v| t.mul(v[0], v[1])),
        case(
            "div",
            |k| vec![away(&S, k), positive(&S, k + 50)],
            |t, v| t.div(v[0], v[1]),
        ),
        case("affine", |k| vec![away(&S, k)], |t, v| Ok(t.affine(v[0], 1.7, -0.3))),
        case("scale", |k| vec![away(&S, k)], |t, v| Ok(t.scale(v[0], -2.5))),
        case("leaky_relu", |k| vec![away(&S, k)], |t, v| Ok(t.leaky_relu(v[0], 0.2))),
        case("sigmoid", |k| vec![away(&S, k)], |t, v| Ok(t.sigmoid(v[0]))),
        case("log", |k| vec![positive(&S, k)], |t, v| Ok(t.log(v[0]))),
        case("abs", |k| vec![away(&S, k)], |t, v| Ok(t.abs(v[0]))),
        case("square", |k| vec![away(&S, k)], |t, v| Ok(t.square(v[0]))),
        case(
            "clamp",
            |k| vec![away(&S, k).map(|x| x * 0.5)],
            |t, v| Ok(t.clamp(v[0], -0.55, 0.55)),
        ),
        case("powf", |k| vec![positive(&S, k)], |t, v| Ok(t.powf(v[0], 0.37))),
        case("sum", |k| vec![away(&S, k)], |t, v| Ok(t.sum(v[0]))),
        case("mean", |k| vec![away(&S, k)], |t, v| Ok(t.mean(v[0]))),
    ];
    for stride in [1, 2] {
        for padding in [Padding::Same, Padding::Valid] {
            v.push(case(
                format!("conv2d s{stride} {padding:?}"),
                |k| vec![away(&[2, 2, 6, 6], k), away(&[3, 2, 3, 3], k + 1), away(&[3], k + 2)],
                move |t, v| t.conv2d(v[0], v[1], Some(v[2]), stride, padding),
            ));
        }
        v.push(case(
            format!("conv_transpose2d s{stride}"),
            |k| vec![away(&[2, 3, 4, 4], k), away(&[3, 2, 3, 3], k + 1), away(&[2], k + 2)],
            move |t, v| t.conv_transpose2d(v[0], v[1], Some(v[2]), stride),
        ));
    }
    v.push(case(
        "batch_norm train",
        |k| vec![away(&[3, 2, 3, 3], k), positive(&[2], k + 1), away(&[2], k + 2)],
        |t, v| Ok(t.batch_norm(v[0], v[1], v[2], 1e-5, NormMode::Train)?.0),
    ));
    v.push(case(
        "batch_norm eval",
        |k| vec![away(&[2, 2, 3, 3], k), positive(&[2], k + 1), away(&[2], k + 2)],
        |t, v| {
            Ok(t.batch_norm(
                v[0],
                v[1],
                v[2],
                1e-5,
                NormMode::Eval {
                    mean: &[0.1, -0.2],
                    var: &[0.8, 1.3],
                },
            )?
            .0)
        },
    ));
    v.push(case(
        "global_avg_pool",
        |k| vec![away(&[2, 3, 4, 4], k)],
        |t, v| t.global_avg_pool(v[0]),
    ));
    v.push(case(
        "dense",
        |k| vec![away(&[2, 5], k), away(&[3, 5], k + 1), away(&[3], k + 2)],
        |t, v| t.dense(v[0], v[1], v[2]),
    ));
    v.push(case(
        "gaussian_filter",
        |k| vec![away(&[2, 1, 6, 7], k)],
        |t, v| t.gaussian_filter(v[0], &[0.2, 0.5, 0.3]),
    ));
    v.push(case(
        "avg_pool2",
        |k| vec![away(&[1, 2, 6, 5], k)],
        |t, v| t.avg_pool2(v[0]),
    ));
    v.push(case(
        "forward_diff h",
        |k| vec![away(&[1, 2, 4, 5], k)],
        |t, v| t.forward_diff(v[0], Axis::Height),
    ));
    v.push(case(
        "forward_diff w",
        |k| vec![away(&[1, 2, 4, 5], k)],
        |t, v| t.forward_diff(v[0], Axis::Width),
    ));
    v
}

// ------------------------------------------------------------------- SSIM

pub const WINDOW: usize = 11;
pub const SIGMA: f64 = 1.5;
pub const C1: f64 = 0.01 * 0.01;
pub const C2: f64 = 0.03 * 0.03;

fn gaussian_weights() -> Vec<f64> {
    let half = (WINDOW / 2) as f64;
    let g: Vec<f64> = (0..WINDOW)
        .map(|i| (-((i as f64 - half).powi(2)) / (2.0 * SIGMA * SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Luminance and contrast-structure maps over every fully contained window,
/// with explicit weighted mean, variance and covariance per window.
pub fn naive_ssim_maps(x: &[f64], y: &[f64], h: usize, w: usize) -> (Vec<f64>, Vec<f64>) {
    let g = gaussian_weights();
    let (oh, ow) = (h - WINDOW + 1, w - WINDOW + 1);
    let mut l = Vec::with_capacity(oh * ow);
    let mut cs = Vec::with_capacity(oh * ow);
    for r in 0..oh {
        for c in 0..ow {
            let (mut mx, mut my) = (0.0, 0.0);
            for i in 0..WINDOW {
                for j in 0..WINDOW {
                    let wt = g[i] * g[j];
                    mx += wt * x[(r + i) * w + c + j];
                    my += wt * y[(r + i) * w + c + j];
                }
            }
            let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
            for i in 0..WINDOW {
                for j in 0..WINDOW {
                    let wt = g[i] * g[j];
                    let dx = x[(r + i) * w + c + j] - mx;
                    let dy = y[(r + i) * w + c + j] - my;
                    vx += wt * dx * dx;
                    vy += wt * dy * dy;
                    cxy += wt * dx * dy;
                }
            }
            l.push((2.0 * mx * my + C1) / (mx * mx + my * my + C1));
            cs.push((2.0 * cxy + C2) / (vx + vy + C2));
        }
    }
    (l, cs)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn naive_ssim(x: &[f64], y: &[f64], h: usize, w: usize) -> f64 {
    let (l, cs) = naive_ssim_maps(x, y, h, w);
    mean(&l.iter().zip(&cs).map(|(a, b)| a * b).collect::<Vec<_>>())
}

fn halve(x: &[f64], h: usize, w: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(h / 2 * (w / 2));
    for r in 0..h / 2 {
        for c in 0..w / 2 {
            out.push(
                0.25 * (x[2 * r * w + 2 * c]
                    + x[2 * r * w + 2 * c + 1]
                    + x[(2 * r + 1) * w + 2 * c]
                    + x[(2 * r + 1) * w + 2 * c + 1]),
            );
        }
    }
    out
}

/// Multi-scale SSIM of one image pair: `mean(cs_j)^beta_j` at every scale but
/// the coarsest, where the luminance enters as `mean(l)^alpha` (or
/// `mean(l * cs)^beta` when the two exponents coincide). Scale means are
/// floored at `1e-6` before exponentiation.
pub fn naive_ms_ssim(x: &[f64], y: &[f64], mut h: usize, mut w: usize, betas: &[f64], alpha: f64) -> f64 {
    let floor = 1e-6;
    let (mut a, mut b) = (x.to_vec(), y.to_vec());
    let mut prod = 1.0;
    for (j, &beta) in betas.iter().enumerate() {
        let (l, cs) = naive_ssim_maps(&a, &b, h, w);
        if j + 1 < betas.len() {
            prod *= mean(&cs).max(floor).powf(beta);
            a = halve(&a, h, w);
            b = halve(&b, h, w);
            h /= 2;
            w /= 2;
        } else if alpha == beta {
            let lcs: Vec<f64> = l.iter().zip(&cs).map(|(p, q)| p * q).collect();
            prod *= mean(&lcs).max(floor).powf(beta);
        } else {
            prod *= mean(&l).max(floor).powf(alpha) * mean(&cs).max(floor).powf(beta);
        }
    }
    prod
}

// ------------------------------------------------------- generator transcription

/// The full architecture followed by each ablation switch alone and all together.
pub fn ablations() -> Vec<Ablation> {
    let mut out = vec![Ablation::default()];
    for (a, b, c) in [
        (true, false, false),
        (false, true, false),
        (false, false, true),
        (true, true, true),
    ] {
        out.push(Ablation {
            disable_strengthened: a,
            disable_shortcut_rirbs: b,
            block_rirbs: c,
        });
    }
    out
}

struct Oracle<'a> {
    p: &'a ModelParameters<f64>,
}

impl Oracle<'_> {
    fn t(&self, name: &str) -> &Tensor<f64> {
        self.p.get(name).unwrap_or_else(|_| panic!("missing parameter {name}"))
    }

    /// conv (+ bias), eval-mode normalization, leaky ReLU.
    fn cbl(&self, x: &Tensor<f64>, layer: &str, stride: usize, transpose: bool) -> Tensor<f64> {
        let w = self.t(&format!("{layer}.w"));
        let b = self.t(&format!("{layer}.b"));
        let mut y = if transpose {
            naive_conv_transpose2d(x, w, Some(b), stride)
        } else {
            naive_conv2d(x, w, Some(b), stride, w.shape()[2] / 2)
        };
        let g = self.t(&format!("{layer}.bn.gamma")).data().to_vec();
        let be = self.t(&format!("{layer}.bn.beta")).data().to_vec();
        let mu = self.t(&format!("{layer}.bn.mean")).data().to_vec();
        let var = self.t(&format!("{layer}.bn.var")).data().to_vec();
        let (c, plane) = (y.shape()[1], y.shape()[2] * y.shape()[3]);
        for (i, v) in y.data_mut().iter_mut().enumerate() {
            let ch = (i / plane) % c;
            let z = g[ch] * (*v - mu[ch]) / (var[ch] + BN_EPS).sqrt() + be[ch];
            *v = if z >= 0.0 { z } else { LEAKY_SLOPE * z };
        }
        y
    }

    fn rirb(&self, x: &Tensor<f64>, prefix: &str) -> Tensor<f64> {
        let y1 = self.cbl(x, &format!("{prefix}.cbl1"), 1, false);
        let y2 = self.cbl(&y1, &format!("{prefix}.cbl2"), 1, false);
        let y3 = add(&self.cbl(&y2, &format!("{prefix}.cbl3"), 1, false), &y1);
        add(&self.cbl(&y3, &format!("{prefix}.cbl4"), 1, false), x)
    }

    fn encoder(&self, x: &Tensor<f64>, block: &str, with_rirb: bool) -> Tensor<f64> {
        let y = self.cbl(x, &format!("{block}.conv_i"), 2, false);
        let y = self.cbl(&y, &format!("{block}.conv_o"), 1, false);
        if with_rirb {
            self.rirb(&y, &format!("{block}.rirb"))
        } else {
            y
        }
    }

    fn decoder(&self, x: &Tensor<f64>, block: &str, with_rirb: bool) -> Tensor<f64> {
        let mut y = self.cbl(x, &format!("{block}.deconv_i"), 1, true);
        if with_rirb {
            y = self.rirb(&y, &format!("{block}.rirb"));
        }
        self.cbl(&y, &format!("{block}.deconv_o"), 2, true)
    }
}

pub fn add(a: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
    assert_eq!(a.shape(), b.shape(), "addition of mismatched tensors");
    Tensor::from_fn(a.shape(), |i| a.data()[i] + b.data()[i])
}

/// Activations of autoencoder `n` read by autoencoder `n + 1`, 1-based keys.
#[derive(Default)]
pub struct Transcript {
    pub c2_in: Option<Tensor<f64>>,
    pub e_in: HashMap<usize, Tensor<f64>>,
    pub d_in: HashMap<usize, Tensor<f64>>,
}

/// Literal, 1-based transcription of one autoencoder in eval mode:
///
/// ```text
/// x_C1  = C(x_{n-1})
/// E1in  = x_C1 + R(C2in_{n-1})
/// Emin  = Em-1out + R(D(M-m+2)in_{n-1})        m = 2..M
/// D1in  = EMout + R(D1in_{n-1})
/// Dmin  = Dm-1out + R(E(M-m+2)in_n)            m = 2..M
/// x_n   = x_{n-1} + C2(DMout)
/// ```
///
/// Terms reading autoencoder `n - 1` vanish for `n = 1`.
pub fn transcribed_scae(
    params: &ModelParameters<f64>,
    cfg: &SgConfig,
    x_prev: &Tensor<f64>,
    prev: Option<&Transcript>,
    n: usize,
) -> (Tensor<f64>, Transcript) {
    let o = Oracle { p: params };
    let big_m = cfg.m;
    let inner = cfg.ablation.block_rirbs;
    let use_prev = prev.filter(|_| !cfg.ablation.disable_strengthened);
    let r = |x: &Tensor<f64>, name: String| {
        if cfg.ablation.disable_shortcut_rirbs {
            x.clone()
        } else {
            o.rirb(x, &name)
        }
    };
    let s = |part: &str| format!("sg.scae{n}.{part}");

    let x_c1 = o.cbl(x_prev, &s("c1"), 1, false);
    let mut e_in: HashMap<usize, Tensor<f64>> = HashMap::new();
    let mut e_out: HashMap<usize, Tensor<f64>> = HashMap::new();
    let mut d_in: HashMap<usize, Tensor<f64>> = HashMap::new();
    let mut d_out: HashMap<usize, Tensor<f64>> = HashMap::new();

    e_in.insert(
        1,
        match use_prev {
            Some(p) => add(&x_c1, &r(p.c2_in.as_ref().unwrap(), s("sc_enc1"))),
            None => x_c1.clone(),
        },
    );
    e_out.insert(1, o.encoder(&e_in[&1], &s("enc1"), inner));
    for m in 2..=big_m {
        let v = match use_prev {
            Some(p) => add(
                &e_out[&(m - 1)],
                &r(&p.d_in[&(big_m - m + 2)], s(&format!("sc_enc{m}"))),
            ),
            None => e_out[&(m - 1)].clone(),
        };
        e_in.insert(m, v);
        e_out.insert(m, o.encoder(&e_in[&m], &s(&format!("enc{m}")), inner));
    }
    d_in.insert(
        1,
        match use_prev {
            Some(p) => add(&e_out[&big_m], &r(&p.d_in[&1], s("sc_dec1"))),
            None => e_out[&big_m].clone(),
        },
    );
    d_out.insert(1, o.decoder(&d_in[&1], &s("dec1"), inner));
    for m in 2..=big_m {
        let v = add(&d_out[&(m - 1)], &r(&e_in[&(big_m - m + 2)], s(&format!("tc_dec{m}"))));
        d_in.insert(m, v);
        d_out.insert(m, o.decoder(&d_in[&m], &s(&format!("dec{m}")), inner));
    }
    let c2_in = d_out[&big_m].clone();
    let w = o.t(&format!("{}.w", s("c2")));
    let b = o.t(&format!("{}.b", s("c2")));
    let x_n = add(x_prev, &naive_conv2d(&c2_in, w, Some(b), 1, 1));
    (
        x_n,
        Transcript {
            c2_in: Some(c2_in),
            e_in,
            d_in,
        },
    )
}

pub fn transcribed_sg(params: &ModelParameters<f64>, cfg: &SgConfig, x0: &Tensor<f64>) -> Tensor<f64> {
    let (x1, t1) = transcribed_scae(params, cfg, x0, None, 1);
    transcribed_scae(params, cfg, &x1, Some(&t1), 2).0
}

/// Model whose zero-initialized tensors (final convolutions, biases,
/// normalization shifts and statistics) are replaced by small seeded random
/// values, so no branch is silenced by the initialization.
pub fn randomized_model(cfg: &SgConfig, seed: u64) -> Model<f64> {
    let mut model = Model::<f64>::new(cfg.clone(), seed).expect("valid config");
    let mut r = rng(seed.wrapping_mul(31).wrapping_add(7));
    let specs = model.params().specs().to_vec();
    for (i, spec) in specs.iter().enumerate() {
        let t = model.params_mut().value_mut(i);
        let fan_in: usize = spec.shape.iter().skip(1).product::<usize>().max(1);
        let std = (1.0 / fan_in as f64).sqrt();
        for v in t.data_mut() {
            *v = match spec.role {
                ParamRole::Weight if *v == 0.0 => r.random_range(-std..std) * 0.3,
                ParamRole::Weight => *v,
                ParamRole::Bias | ParamRole::Shift | ParamRole::RunningMean => r.random_range(-0.1..0.1),
                ParamRole::Scale => r.random_range(0.8..1.2),
                ParamRole::RunningVar => r.random_range(0.8..1.2),
            };
        }
    }
    model
}

pub fn tensor_of_padding(p: Padding, k: usize) -> usize {
    match p {
        Padding::Same => k / 2,
        Padding::Valid => 0,
    }
}

// ------------------------------------------------------- network gradients

use essgan::losses::l1_loss;
use essgan::model::{discriminator_forward, sg_forward, Network, Phase, Session};

/// Which network a finite-difference check differentiates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    /// `L1(SG(x0), target)`.
    Generator,
    /// `sum(D(x) * proj)`.
    Discriminator,
}

pub struct NetworkCase {
    pub model: Model<f64>,
    pub x: Tensor<f64>,
    /// L1 target for the generator, projection for the discriminator.
    pub aux: Tensor<f64>,
    pub target: Target,
    pub phase: Phase,
}

impl NetworkCase {
    fn network(&self) -> Network {
        match self.target {
            Target::Generator => Network::Generator,
            Target::Discriminator => Network::Discriminator,
        }
    }

    /// Loss value and gradients aligned with `trainable_indices`.
    pub fn value_and_grads(&self, model: &Model<f64>) -> (f64, Vec<Tensor<f64>>) {
        let net = self.network();
        let mut s = Session::new(model.params(), self.phase, &[net]);
        let x = s.input(self.x.clone());
        let aux = s.input(self.aux.clone());
        let loss = match self.target {
            Target::Generator => {
                let y = sg_forward(&mut s, x, model.config()).unwrap();
                l1_loss(&mut s.tape, y, aux).unwrap()
            }
            Target::Discriminator => {
                let d = discriminator_forward(&mut s, x, model.config()).unwrap();
                let p = s.tape.mul(d, aux).unwrap();
                s.tape.sum(p)
            }
        };
        let value = s.tape.value(loss).item();
        let mut grads = s.tape.backward(loss).unwrap();
        let g = s.param_grads(&mut grads, net);
        (value, g)
    }

    pub fn value(&self, model: &Model<f64>) -> f64 {
        let mut s = Session::new(model.params(), self.phase, &[]);
        let x = s.input(self.x.clone());
        let aux = s.input(self.aux.clone());
        let loss = match self.target {
            Target::Generator => {
                let y = sg_forward(&mut s, x, model.config()).unwrap();
                l1_loss(&mut s.tape, y, aux).unwrap()
            }
            Target::Discriminator => {
                let d = discriminator_forward(&mut s, x, model.config()).unwrap();
                let p = s.tape.mul(d, aux).unwrap();
                s.tape.sum(p)
            }
        };
        s.tape.value(loss).item()
    }

    pub fn trainable(&self) -> Vec<usize> {
        self.model.params().trainable_indices(self.network())
    }
}

/// Randomized model, batch of two inputs and an L1 target whose residuals
/// stay at least 0.5 away from zero, so the absolute value is smooth.
pub fn network_case(cfg: &SgConfig, target: Target, seed: u64, phase: Phase) -> NetworkCase {
    let model = randomized_model(cfg, seed);
    let mut r = rng(seed ^ 0xfeed);
    let x = uniform(&[2, 1, cfg.height, cfg.width], 0.0, 1.0, &mut r);
    let aux = match target {
        Target::Generator => {
            let y = {
                let mut s = Session::new(model.params(), phase, &[]);
                let xv = s.input(x.clone());
                let yv = sg_forward(&mut s, xv, cfg).unwrap();
                s.tape.value(yv).clone()
            };
            Tensor::from_fn(y.shape(), |i| {
                let off = r.random_range(0.5..1.0);
                y.data()[i] + if r.random_bool(0.5) { off } else { -off }
            })
        }
        Target::Discriminator => uniform(&[2, 1], -1.0, 1.0, &mut r),
    };
    NetworkCase {
        model,
        x,
        aux,
        target,
        phase,
    }
}

/// Central-difference step sizes. The first is the nominal step; smaller
/// ones are only tried when a leaky-ReLU kink lies inside `[x - h, x + h]`,
/// where the central difference no longer approximates the derivative.
pub const FD_STEPS: [f64; 6] = [1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8];
pub const FD_TOL: f64 = 1e-4;

/// Compares `analytic` with the central differences produced by `central`,
/// shrinking the step while the mismatch exceeds [`FD_TOL`]. A wrong
/// derivative rule never converges, whatever the step.
pub fn refined_error(analytic: f64, central: impl Fn(f64) -> f64, floor: f64) -> (f64, bool) {
    let mut err = f64::INFINITY;
    for (k, &h) in FD_STEPS.iter().enumerate() {
        err = rel_err(analytic, central(h), floor);
        if err < FD_TOL {
            return (err, k > 0);
        }
    }
    (err, true)
}

#[derive(Debug, Clone, Default)]
pub struct FdReport {
    pub checked: usize,
    /// Entries that needed a step below the nominal one.
    pub refined: usize,
    pub worst: f64,
    pub worst_at: String,
}

impl FdReport {
    fn record(&mut self, err: f64, refined: bool, at: impl FnOnce() -> String) {
        self.checked += 1;
        self.refined += refined as usize;
        if err > self.worst || self.worst_at.is_empty() {
            self.worst = err;
            self.worst_at = at();
        }
    }

    pub fn merge(&mut self, other: FdReport) {
        self.checked += other.checked;
        self.refined += other.refined;
        if other.worst > self.worst {
            self.worst = other.worst;
            self.worst_at = other.worst_at;
        }
    }

    pub fn passed(&self) -> bool {
        self.worst < FD_TOL
    }
}

/// Directional derivative along a random direction over all trainable
/// parameters.
pub fn directional_check(case: &NetworkCase, seed: u64) -> FdReport {
    let idx = case.trainable();
    let (_, grads) = case.value_and_grads(&case.model);
    let mut r = rng(seed ^ 0xd1);
    let dirs: Vec<Tensor<f64>> = idx
        .iter()
        .map(|&i| uniform(case.model.params().value(i).shape(), -1.0, 1.0, &mut r))
        .collect();
    let analytic: f64 = grads.iter().zip(&dirs).map(|(g, d)| g.dot(d)).sum();
    let shifted = |step: f64| {
        let mut m = case.model.clone();
        for (&i, d) in idx.iter().zip(&dirs) {
            let t = m.params_mut().value_mut(i);
            for (v, dv) in t.data_mut().iter_mut().zip(d.data()) {
                *v += step * dv;
            }
        }
        case.value(&m)
    };
    let (err, refined) = refined_error(analytic, |h| (shifted(h) - shifted(-h)) / (2.0 * h), 1e-8);
    let mut report = FdReport::default();
    report.record(err, refined, || format!("direction {seed}"));
    report
}

/// Per-entry comparison. `sample = None` checks every trainable entry;
/// `Some((k, seed))` checks `k` random entries of every parameter tensor.
pub fn elementwise_check(case: &NetworkCase, sample: Option<(usize, u64)>) -> FdReport {
    let idx = case.trainable();
    let (_, grads) = case.value_and_grads(&case.model);
    let mut m = case.model.clone();
    let mut report = FdReport::default();
    let mut r = rng(sample.map_or(0, |s| s.1));
    for (&i, g) in idx.iter().zip(&grads) {
        let entries: Vec<usize> = match sample {
            None => (0..g.len()).collect(),
            Some((k, _)) => (0..k.min(g.len())).map(|_| r.random_range(0..g.len())).collect(),
        };
        for e in entries {
            let orig = m.params().value(i).data()[e];
            let central = |h: f64| {
                let mut mm = m.clone();
                mm.params_mut().value_mut(i).data_mut()[e] = orig + h;
                let up = case.value(&mm);
                mm.params_mut().value_mut(i).data_mut()[e] = orig - h;
                let down = case.value(&mm);
                (up - down) / (2.0 * h)
            };
            let (err, refined) = refined_error(g.data()[e], central, 1e-6);
            let name = &m.params().specs()[i].name;
            report.record(err, refined, || format!("{name}[{e}]"));
        }
        m.params_mut()
            .value_mut(i)
            .data_mut()
            .copy_from_slice(case.model.params().value(i).data());
    }
    report
}
