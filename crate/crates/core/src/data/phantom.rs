use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::derive_seed;
use super::store::{normalize_min_max, Dataset, SliceRecord, Split};
use crate::{Error, Image, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhantomKind {
    /// Head-like outer ellipse with overlapping inner ellipses.
    Ellipses,
    /// Rotated rectangles of distinct intensities.
    Bars,
    /// Sums of anisotropic Gaussian blobs inside a disc.
    Blobs,
}

impl std::str::FromStr for PhantomKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ellipses" => Ok(Self::Ellipses),
            "bars" => Ok(Self::Bars),
            "blobs" => Ok(Self::Blobs),
            other => Err(Error::InvalidArgument(format!(
                "unknown phantom kind '{other}' (expected ellipses, bars or blobs)"
            ))),
        }
    }
}

impl PhantomKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Ellipses => "ellipses",
            Self::Bars => "bars",
            Self::Blobs => "blobs",
        }
    }
}

/// Point-in-rotated-ellipse test in normalized coordinates `[-1, 1]^2`.
fn in_ellipse(y: f64, x: f64, cy: f64, cx: f64, ay: f64, ax: f64, theta: f64) -> bool {
    let (s, c) = theta.sin_cos();
    let (dy, dx) = (y - cy, x - cx);
    let u = c * dx + s * dy;
    let v = -s * dx + c * dy;
    (u / ax).powi(2) + (v / ay).powi(2) <= 1.0
}

fn ellipses(size: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let outer = (rng.random_range(0.78..0.92), rng.random_range(0.65..0.8));
    let skull = rng.random_range(0.04..0.07);
    let mut shapes = vec![
        (0.0, 0.0, outer.0, outer.1, 0.0, 1.0),
        (0.0, 0.0, outer.0 - skull, outer.1 - skull, 0.0, -0.6),
    ];
    for _ in 0..rng.random_range(4..9) {
        let cy = rng.random_range(-0.5..0.5);
        let cx = rng.random_range(-0.4..0.4);
        let ay = rng.random_range(0.05..0.3);
        let ax = rng.random_range(0.05..0.3);
        let theta = rng.random_range(0.0..PI);
        let value = rng.random_range(-0.25..0.35);
        shapes.push((cy, cx, ay, ax, theta, value));
    }
    raster(size, |y, x| {
        shapes
            .iter()
            .filter(|s| in_ellipse(y, x, s.0, s.1, s.2, s.3, s.4))
            .map(|s| s.5)
            .sum()
    })
}

fn bars(size: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let base = rng.random_range(0.1..0.3);
    let rects: Vec<_> = (0..rng.random_range(3..7))
        .map(|_| {
            (
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
                rng.random_range(0.05..0.4),
                rng.random_range(0.03..0.15),
                rng.random_range(0.0..PI),
                rng.random_range(0.2..0.7),
            )
        })
        .collect();
    raster(size, |y, x| {
        let mut v = if y.abs() < 0.85 && x.abs() < 0.85 { base } else { 0.0 };
        for &(cy, cx, half_len, half_w, theta, val) in &rects {
            let (s, c) = f64::sin_cos(theta);
            let (dy, dx) = (y - cy, x - cx);
            if (c * dx + s * dy).abs() <= half_len && (-s * dx + c * dy).abs() <= half_w {
                v += val;
            }
        }
        v
    })
}

fn blobs(size: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let radius = rng.random_range(0.75..0.9);
    let gs: Vec<_> = (0..rng.random_range(4..10))
        .map(|_| {
            (
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
                rng.random_range(0.05..0.25),
                rng.random_range(0.05..0.25),
                rng.random_range(-0.4..0.6),
            )
        })
        .collect();
    raster(size, |y, x| {
        if y * y + x * x > radius * radius {
            return 0.0;
        }
        0.4 + gs
            .iter()
            .map(|&(cy, cx, sy, sx, a)| a * (-((y - cy) / sy).powi(2) / 2.0 - ((x - cx) / sx).powi(2) / 2.0).exp())
            .sum::<f64>()
    })
}

fn raster(size: usize, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    let coord = |i: usize| 2.0 * (i as f64 + 0.5) / size as f64 - 1.0;
    (0..size * size).map(|i| f(coord(i / size), coord(i % size))).collect()
}

/// Piecewise-smooth `size x size` test image in `[0, 1]`, deterministic per seed.
pub fn make_phantom(kind: PhantomKind, size: usize, seed: u64) -> Result<SliceRecord> {
    if !size.is_power_of_two() || size < 2 {
        return Err(Error::InvalidArgument(format!(
            "phantom size {size} must be a power of two >= 2"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[kind as u64]));
    let values = match kind {
        PhantomKind::Ellipses => ellipses(size, &mut rng),
        PhantomKind::Bars => bars(size, &mut rng),
        PhantomKind::Blobs => blobs(size, &mut rng),
    };
    let img = Image::new(size, size, values.into_iter().map(|v| v as f32).collect())?;
    Ok(SliceRecord {
        id: format!("{}-{seed:06}", kind.as_str()),
        image: normalize_min_max(&img),
        split: Split::Train,
    })
}

/// `counts[i]` phantoms for train / valid / test with consecutive seeds
/// starting at `seed`.
pub fn phantom_dataset(kind: PhantomKind, size: usize, counts: [usize; 3], seed: u64) -> Result<Dataset> {
    let mut records = Vec::with_capacity(counts.iter().sum());
    let mut next = seed;
    for (split, &n) in Split::ALL.iter().zip(&counts) {
        for _ in 0..n {
            let mut r = make_phantom(kind, size, next)?;
            r.split = *split;
            records.push(r);
            next += 1;
        }
    }
    Dataset::new(records)
}
