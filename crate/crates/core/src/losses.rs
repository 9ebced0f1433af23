//! Training objectives, all composed from tape operations so they are
//! differentiable end to end.
//!
//! Image arguments are `[B, 1, H, W]` tape values; every loss returns a
//! scalar averaged over the batch.

use serde::{Deserialize, Serialize};

use crate::{Error, Float, Image, Result, Tape, Tensor, Var};

/// Probability clamp applied before logarithms.
pub const PROB_EPS: f64 = 1e-7;

/// Lower bound on per-scale contrast-structure means before exponentiation.
pub const CS_FLOOR: f64 = 1e-6;

/// Canonical five-scale exponents.
pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SsimParams {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    /// Dynamic range `L` of the pixel values.
    pub dynamic_range: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 1.0,
        }
    }
}

impl SsimParams {
    pub fn c1(&self) -> f64 {
        (self.k1 * self.dynamic_range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.dynamic_range).powi(2)
    }

    /// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
    pub fn kernel(&self) -> Vec<f64> {
        let c = (self.window as f64 - 1.0) / 2.0;
        let taps: Vec<f64> = (0..self.window)
            .map(|i| (-(i as f64 - c).powi(2) / (2.0 * self.sigma * self.sigma)).exp())
            .collect();
        let s: f64 = taps.iter().sum();
        taps.into_iter().map(|t| t / s).collect()
    }

    fn validate(&self) -> Result<()> {
        if self.window == 0
            || !(self.sigma > 0.0)
            || !(self.k1 > 0.0)
            || !(self.k2 > 0.0)
            || !(self.dynamic_range > 0.0)
        {
            return Err(Error::InvalidArgument(format!("invalid SSIM parameters {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MsSsimParams {
    pub ssim: SsimParams,
    /// Contrast-structure exponent per scale, finest first.
    pub betas: Vec<f64>,
    /// Luminance exponent at the coarsest scale.
    pub alpha: f64,
}

impl Default for MsSsimParams {
    fn default() -> Self {
        Self::with_scales(MS_SSIM_WEIGHTS.len())
    }
}

impl MsSsimParams {
    /// The first `scales` canonical weights renormalized to sum to one.
    pub fn with_scales(scales: usize) -> Self {
        let scales = scales.clamp(1, MS_SSIM_WEIGHTS.len());
        let w = &MS_SSIM_WEIGHTS[..scales];
        let s: f64 = w.iter().sum();
        let betas: Vec<f64> = w.iter().map(|v| v / s).collect();
        Self {
            ssim: SsimParams::default(),
            alpha: *betas.last().expect("at least one scale"),
            betas,
        }
    }

    /// Largest canonical scale count whose coarsest image still fits a window.
    pub fn for_extent(min_extent: usize) -> Result<Self> {
        let window = SsimParams::default().window;
        let scales = (1..=MS_SSIM_WEIGHTS.len())
            .rev()
            .find(|&s| min_extent >= window << (s - 1))
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "images of extent {min_extent} are smaller than the {window}-pixel window"
                ))
            })?;
        Ok(Self::with_scales(scales))
    }

    pub fn scales(&self) -> usize {
        self.betas.len()
    }

    fn validate(&self, h: usize, w: usize) -> Result<()> {
        self.ssim.validate()?;
        if self.betas.is_empty() || self.betas.iter().any(|&b| !(b > 0.0)) || !(self.alpha > 0.0) {
            return Err(Error::InvalidArgument("MS-SSIM exponents must be positive".into()));
        }
        let need = self.ssim.window << (self.scales() - 1);
        if h.min(w) < need {
            return Err(Error::InvalidArgument(format!(
                "{h}x{w} images are too small for {} MS-SSIM scales (need {need}); use fewer scales",
                self.scales()
            )));
        }
        Ok(())
    }
}

/// Weights of the pixel and structural terms in the generator objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 200.0,
            beta: 100.0,
        }
    }
}

fn same_shape<T: Float>(tape: &Tape<T>, op: &'static str, a: Var, b: Var) -> Result<()> {
    if tape.value(a).shape() != tape.value(b).shape() {
        return Err(Error::shape(
            op,
            format!("{:?} vs {:?}", tape.value(a).shape(), tape.value(b).shape()),
        ));
    }
    Ok(())
}

/// Mean squared error.
pub fn l2_loss<T: Float>(tape: &mut Tape<T>, xg: Var, x: Var) -> Result<Var> {
    same_shape(tape, "l2_loss", xg, x)?;
    let d = tape.sub(xg, x)?;
    let sq = tape.square(d);
    Ok(tape.mean(sq))
}

/// Mean absolute error.
pub fn l1_loss<T: Float>(tape: &mut Tape<T>, xg: Var, x: Var) -> Result<Var> {
    same_shape(tape, "l1_loss", xg, x)?;
    let d = tape.sub(xg, x)?;
    let a = tape.abs(d);
    Ok(tape.mean(a))
}

/// Luminance and contrast-structure maps over valid Gaussian windows.
pub fn ssim_components<T: Float>(tape: &mut Tape<T>, x: Var, y: Var, p: &SsimParams) -> Result<(Var, Var)> {
    same_shape(tape, "ssim", x, y)?;
    p.validate()?;
    let (_, _, h, w) = tape.value(x).dims4()?;
    if h < p.window || w < p.window {
        return Err(Error::InvalidArgument(format!(
            "{h}x{w} images are smaller than the {}-pixel SSIM window",
            p.window
        )));
    }
    let k: Vec<T> = p.kernel().into_iter().map(T::lit).collect();
    let (c1, c2) = (T::lit(p.c1()), T::lit(p.c2()));
    let two = T::lit(2.0);

    let mx = tape.gaussian_filter(x, &k)?;
    let my = tape.gaussian_filter(y, &k)?;
    let xx = tape.square(x);
    let yy = tape.square(y);
    let xy = tape.mul(x, y)?;
    let exx = tape.gaussian_filter(xx, &k)?;
    let eyy = tape.gaussian_filter(yy, &k)?;
    let exy = tape.gaussian_filter(xy, &k)?;
    let mx2 = tape.square(mx);
    let my2 = tape.square(my);
    let mxy = tape.mul(mx, my)?;
    let sxx = tape.sub(exx, mx2)?;
    let syy = tape.sub(eyy, my2)?;
    let sxy = tape.sub(exy, mxy)?;

    let l_num = tape.affine(mxy, two, c1);
    let l_den = tape.add(mx2, my2)?;
    let l_den = tape.affine(l_den, T::one(), c1);
    let l = tape.div(l_num, l_den)?;

    let cs_num = tape.affine(sxy, two, c2);
    let cs_den = tape.add(sxx, syy)?;
    let cs_den = tape.affine(cs_den, T::one(), c2);
    let cs = tape.div(cs_num, cs_den)?;
    Ok((l, cs))
}

/// Per-window `l * cs` map.
pub fn ssim_map<T: Float>(tape: &mut Tape<T>, x: Var, y: Var, p: &SsimParams) -> Result<Var> {
    let (l, cs) = ssim_components(tape, x, y, p)?;
    tape.mul(l, cs)
}

/// Mean of the SSIM map.
pub fn ssim<T: Float>(tape: &mut Tape<T>, x: Var, y: Var, p: &SsimParams) -> Result<Var> {
    let map = ssim_map(tape, x, y, p)?;
    Ok(tape.mean(map))
}

/// Multi-scale SSIM, computed per image and averaged over the batch.
///
/// Contrast-structure means are floored at [`CS_FLOOR`] so fractional
/// exponents stay real. When `alpha` equals the coarsest `beta` the coarsest
/// factor is `mean(l * cs)^beta`, which makes one scale coincide with SSIM.
pub fn ms_ssim<T: Float>(tape: &mut Tape<T>, x: Var, y: Var, p: &MsSsimParams) -> Result<Var> {
    same_shape(tape, "ms_ssim", x, y)?;
    let (_, _, h, w) = tape.value(x).dims4()?;
    p.validate(h, w)?;
    let floor = T::lit(CS_FLOOR);
    let big = T::lit(f64::MAX);
    let (mut a, mut b) = (x, y);
    let mut product: Option<Var> = None;
    let last = p.scales() - 1;
    for (j, &beta) in p.betas.iter().enumerate() {
        let (l, cs) = ssim_components(tape, a, b, &p.ssim)?;
        let factor = if j < last {
            let m = tape.global_avg_pool(cs)?;
            let m = tape.clamp(m, floor, big);
            tape.powf(m, T::lit(beta))
        } else if p.alpha == beta {
            let lcs = tape.mul(l, cs)?;
            let m = tape.global_avg_pool(lcs)?;
            let m = tape.clamp(m, floor, big);
            tape.powf(m, T::lit(beta))
        } else {
            let ml = tape.global_avg_pool(l)?;
            let ml = tape.clamp(ml, floor, big);
            let ml = tape.powf(ml, T::lit(p.alpha));
            let mc = tape.global_avg_pool(cs)?;
            let mc = tape.clamp(mc, floor, big);
            let mc = tape.powf(mc, T::lit(beta));
            tape.mul(ml, mc)?
        };
        product = Some(match product {
            None => factor,
            Some(prev) => tape.mul(prev, factor)?,
        });
        if j < last {
            a = tape.avg_pool2(a)?;
            b = tape.avg_pool2(b)?;
        }
    }
    Ok(tape.mean(product.expect("at least one scale")))
}

/// `1 - ms_ssim`.
pub fn ms_ssim_loss<T: Float>(tape: &mut Tape<T>, x: Var, y: Var, p: &MsSsimParams) -> Result<Var> {
    let v = ms_ssim(tape, x, y, p)?;
    Ok(tape.affine(v, -T::one(), T::one()))
}

/// Squared difference of forward-difference gradients along both axes,
/// divided by `B * H * W`.
pub fn grad_loss<T: Float>(tape: &mut Tape<T>, x: Var, xg: Var) -> Result<Var> {
    same_shape(tape, "grad_loss", x, xg)?;
    let (b, _, h, w) = tape.value(x).dims4()?;
    let mut total: Option<Var> = None;
    for axis in [crate::autodiff::Axis::Height, crate::autodiff::Axis::Width] {
        let gx = tape.forward_diff(x, axis)?;
        let gg = tape.forward_diff(xg, axis)?;
        let d = tape.sub(gx, gg)?;
        let sq = tape.square(d);
        let s = tape.sum(sq);
        total = Some(match total {
            None => s,
            Some(t) => tape.add(t, s)?,
        });
    }
    Ok(tape.scale(total.expect("two axes"), T::lit(1.0 / (b * h * w) as f64)))
}

/// Enhanced structural loss: `ms_ssim_loss + grad_loss`.
pub fn es_loss<T: Float>(tape: &mut Tape<T>, x: Var, xg: Var, p: &MsSsimParams) -> Result<Var> {
    let ms = ms_ssim_loss(tape, x, xg, p)?;
    let g = grad_loss(tape, x, xg)?;
    tape.add(ms, g)
}

fn check_probabilities<T: Float>(tape: &Tape<T>, v: Var, what: &str) -> Result<()> {
    if !tape.value(v).all_finite() {
        return Err(Error::NonFinite(format!("{what} discriminator output")));
    }
    Ok(())
}

/// `-mean(log d_real) - mean(log(1 - d_fake))` with clamped probabilities.
pub fn d_loss<T: Float>(tape: &mut Tape<T>, d_real: Var, d_fake: Var) -> Result<Var> {
    check_probabilities(tape, d_real, "real")?;
    check_probabilities(tape, d_fake, "fake")?;
    let (lo, hi) = (T::lit(PROB_EPS), T::lit(1.0 - PROB_EPS));
    let r = tape.clamp(d_real, lo, hi);
    let lr = tape.log(r);
    let mr = tape.mean(lr);
    let f = tape.clamp(d_fake, lo, hi);
    let one_minus = tape.affine(f, -T::one(), T::one());
    let lf = tape.log(one_minus);
    let mf = tape.mean(lf);
    let s = tape.add(mr, mf)?;
    Ok(tape.scale(s, -T::one()))
}

/// Non-saturating generator term `-mean(log d_fake)`.
pub fn g_adv_loss<T: Float>(tape: &mut Tape<T>, d_fake: Var) -> Result<Var> {
    check_probabilities(tape, d_fake, "fake")?;
    let f = tape.clamp(d_fake, T::lit(PROB_EPS), T::lit(1.0 - PROB_EPS));
    let l = tape.log(f);
    let m = tape.mean(l);
    Ok(tape.scale(m, -T::one()))
}

/// `adv + alpha * l1 + beta * es`.
pub fn total_g_loss<T: Float>(tape: &mut Tape<T>, adv: Var, l1: Var, es: Var, w: &LossWeights) -> Result<Var> {
    let a = tape.scale(l1, T::lit(w.alpha));
    let b = tape.scale(es, T::lit(w.beta));
    let s = tape.add(adv, a)?;
    tape.add(s, b)
}

fn image_tensor<T: Float>(img: &Image<T>) -> Tensor<T> {
    Tensor::new(&[1, 1, img.height(), img.width()], img.data().to_vec()).expect("image extents are positive")
}

/// SSIM of two images without recording gradients.
pub fn ssim_value(x: &Image<f64>, y: &Image<f64>, p: &SsimParams) -> Result<f64> {
    let mut tape = Tape::new();
    let a = tape.constant(image_tensor(x));
    let b = tape.constant(image_tensor(y));
    let s = ssim(&mut tape, a, b, p)?;
    Ok(tape.value(s).item())
}

/// MS-SSIM of two images without recording gradients.
pub fn ms_ssim_value(x: &Image<f64>, y: &Image<f64>, p: &MsSsimParams) -> Result<f64> {
    let mut tape = Tape::new();
    let a = tape.constant(image_tensor(x));
    let b = tape.constant(image_tensor(y));
    let s = ms_ssim(&mut tape, a, b, p)?;
    Ok(tape.value(s).item())
}

/// Outcome of the pointwise optimal-discriminator check.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimalDCheck {
    /// Grid-search minimizer of the pointwise discriminator loss.
    pub d_grid: Vec<f64>,
    /// `p_data / (p_data + p_g)`.
    pub d_closed: Vec<f64>,
    /// `sum p_data log d + p_g log(1 - d)` at the grid optimum.
    pub value_at_optimum: f64,
    /// `2 * JSD(p_data || p_g) - 2 log 2` computed from the distributions.
    pub jsd_expression: f64,
}

/// Jensen-Shannon divergence in nats.
pub fn jensen_shannon(p: &[f64], q: &[f64]) -> f64 {
    let kl = |a: &[f64], m: &[f64]| -> f64 {
        a.iter()
            .zip(m)
            .filter(|(&ai, _)| ai > 0.0)
            .map(|(&ai, &mi)| ai * (ai / mi).ln())
            .sum()
    };
    let m: Vec<f64> = p.iter().zip(q).map(|(a, b)| 0.5 * (a + b)).collect();
    0.5 * kl(p, &m) + 0.5 * kl(q, &m)
}

/// Grid-searches the discriminator optimum at every support point.
pub fn optimal_d_check(p_data: &[f64], p_g: &[f64], grid: usize) -> Result<OptimalDCheck> {
    if p_data.len() != p_g.len() || p_data.is_empty() || grid < 2 {
        return Err(Error::InvalidArgument(
            "distributions must be non-empty, equal length, grid >= 2".into(),
        ));
    }
    for p in [p_data, p_g] {
        let s: f64 = p.iter().sum();
        if p.iter().any(|&v| !(v >= 0.0)) || (s - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "{p:?} is not a probability distribution"
            )));
        }
    }
    let xlogy = |a: f64, d: f64| if a == 0.0 { 0.0 } else { a * d.ln() };
    let mut d_grid = Vec::with_capacity(p_data.len());
    let mut value = 0.0;
    for (&pd, &pg) in p_data.iter().zip(p_g) {
        let (mut best_d, mut best) = (0.5, f64::INFINITY);
        for i in 1..grid {
            let d = i as f64 / grid as f64;
            let loss = -(xlogy(pd, d) + xlogy(pg, 1.0 - d));
            if loss < best {
                best = loss;
                best_d = d;
            }
        }
        d_grid.push(best_d);
        value -= best;
    }
    let d_closed = p_data
        .iter()
        .zip(p_g)
        .map(|(&a, &b)| if a + b > 0.0 { a / (a + b) } else { 0.5 })
        .collect();
    Ok(OptimalDCheck {
        d_grid,
        d_closed,
        value_at_optimum: value,
        jsd_expression: 2.0 * jensen_shannon(p_data, p_g) - 2.0 * std::f64::consts::LN_2,
    })
}
