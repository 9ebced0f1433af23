use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::derive_seed;
use crate::Image;

/// Random augmentation ranges. Each transform is skipped when its range
/// collapses to the identity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentSpec {
    /// Horizontal flip with probability 1/2.
    pub flip: bool,
    /// Rotation angle drawn from `[-rotation_deg, rotation_deg]`.
    pub rotation_deg: f64,
    /// Per-axis translation drawn from `[-shift_px, shift_px]`.
    pub shift_px: f64,
    pub zoom: [f64; 2],
    /// Peak elastic displacement in pixels.
    pub elastic_alpha: f64,
    /// Smoothing width of the elastic displacement field.
    pub elastic_sigma: f64,
    pub brightness: [f64; 2],
    pub seed: u64,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        Self {
            flip: true,
            rotation_deg: 10.0,
            shift_px: 5.0,
            zoom: [0.9, 1.1],
            elastic_alpha: 2.0,
            elastic_sigma: 4.0,
            brightness: [0.9, 1.1],
            seed: 0,
        }
    }
}

impl AugmentSpec {
    pub fn identity() -> Self {
        Self {
            flip: false,
            rotation_deg: 0.0,
            shift_px: 0.0,
            zoom: [1.0, 1.0],
            elastic_alpha: 0.0,
            elastic_sigma: 4.0,
            brightness: [1.0, 1.0],
            seed: 0,
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

/// Mirrors an out-of-range index back into `0..n` (edge sample repeated).
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - 1 - m }) as usize
}

/// Bilinear sample at fractional `(y, x)` with reflect padding.
fn sample(img: &Image<f32>, y: f64, x: f64) -> f32 {
    let (h, w) = img.dims();
    let (y0, x0) = (y.floor(), x.floor());
    let (fy, fx) = ((y - y0) as f32, (x - x0) as f32);
    let (y0, x0) = (y0 as isize, x0 as isize);
    let at = |r: isize, c: isize| img.get(reflect(r, h), reflect(c, w));
    let top = at(y0, x0) * (1.0 - fx) + at(y0, x0 + 1) * fx;
    let bottom = at(y0 + 1, x0) * (1.0 - fx) + at(y0 + 1, x0 + 1) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Resamples through `src(r, c) -> (y, x)`.
fn warp(img: &Image<f32>, src: impl Fn(usize, usize) -> (f64, f64)) -> Image<f32> {
    let (h, w) = img.dims();
    Image::from_fn(h, w, |r, c| {
        let (y, x) = src(r, c);
        sample(img, y, x)
    })
}

pub fn flip_horizontal(img: &Image<f32>) -> Image<f32> {
    let w = img.width();
    Image::from_fn(img.height(), w, |r, c| img.get(r, w - 1 - c))
}

/// Rotation about the image center, counter-clockwise in degrees.
pub fn rotate(img: &Image<f32>, degrees: f64) -> Image<f32> {
    let (h, w) = img.dims();
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let (s, c) = degrees.to_radians().sin_cos();
    warp(img, |r, q| {
        let (dy, dx) = (r as f64 - cy, q as f64 - cx);
        (cy + c * dy - s * dx, cx + s * dy + c * dx)
    })
}

pub fn shift(img: &Image<f32>, dy: f64, dx: f64) -> Image<f32> {
    warp(img, |r, q| (r as f64 - dy, q as f64 - dx))
}

/// Magnification about the center (`factor > 1` enlarges).
pub fn zoom(img: &Image<f32>, factor: f64) -> Image<f32> {
    let (h, w) = img.dims();
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    warp(img, |r, q| {
        (cy + (r as f64 - cy) / factor, cx + (q as f64 - cx) / factor)
    })
}

fn gaussian_blur(field: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil().max(1.0) as isize;
    let taps: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = taps.iter().sum();
    let mut tmp = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            tmp[r * w + c] = taps
                .iter()
                .enumerate()
                .map(|(k, t)| t * field[r * w + reflect(c as isize + k as isize - radius, w)])
                .sum::<f64>()
                / norm;
        }
    }
    let mut out = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            out[r * w + c] = taps
                .iter()
                .enumerate()
                .map(|(k, t)| t * tmp[reflect(r as isize + k as isize - radius, h) * w + c])
                .sum::<f64>()
                / norm;
        }
    }
    out
}

/// Smoothed random displacement field `(dy, dx)` with peak magnitude `alpha`.
pub fn elastic_field(h: usize, w: usize, alpha: f64, sigma: f64, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
    let mut axis = || {
        let raw: Vec<f64> = (0..h * w).map(|_| rng.random_range(-1.0..=1.0)).collect();
        let smooth = gaussian_blur(&raw, h, w, sigma.max(1e-3));
        let peak = smooth.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if peak > 0.0 {
            smooth.into_iter().map(|v| alpha * v / peak).collect()
        } else {
            smooth
        }
    };
    let dy = axis();
    let dx = axis();
    (dy, dx)
}

pub fn elastic(img: &Image<f32>, dy: &[f64], dx: &[f64]) -> Image<f32> {
    let w = img.width();
    warp(img, |r, q| (r as f64 + dy[r * w + q], q as f64 + dx[r * w + q]))
}

/// Applies flip, rotation, shift, zoom, elastic distortion and brightness in
/// that order, then clamps to `[0, 1]`. Deterministic in `(spec, stream)`.
pub fn augment(img: &Image<f32>, spec: &AugmentSpec, stream: u64) -> Image<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &[stream]));
    let do_flip = spec.flip && rng.random_bool(0.5);
    let angle = uniform(&mut rng, -spec.rotation_deg.abs(), spec.rotation_deg.abs());
    let sy = uniform(&mut rng, -spec.shift_px.abs(), spec.shift_px.abs());
    let sx = uniform(&mut rng, -spec.shift_px.abs(), spec.shift_px.abs());
    let factor = uniform(&mut rng, spec.zoom[0], spec.zoom[1]);
    let gain = uniform(&mut rng, spec.brightness[0], spec.brightness[1]);

    let mut out = img.clone();
    if do_flip {
        out = flip_horizontal(&out);
    }
    if angle != 0.0 {
        out = rotate(&out, angle);
    }
    if sy != 0.0 || sx != 0.0 {
        out = shift(&out, sy, sx);
    }
    if factor != 1.0 && factor > 0.0 {
        out = zoom(&out, factor);
    }
    if spec.elastic_alpha != 0.0 {
        let (h, w) = out.dims();
        let (dy, dx) = elastic_field(h, w, spec.elastic_alpha, spec.elastic_sigma, &mut rng);
        out = elastic(&out, &dy, &dx);
    }
    if gain != 1.0 {
        out = out.map(|v| v * gain as f32);
    }
    out.map(|v| v.clamp(0.0, 1.0))
}
