use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_pow2, shift_index, KSpaceGrid};
use crate::{Error, Float, Result};

/// Largest allowed gap between requested and achieved sampling rate.
pub const RATE_TOLERANCE: f64 = 0.005;

/// Fraction of phase-encode rows always sampled around DC by cartesian masks.
const CARTESIAN_CENTER_FRACTION: f64 = 0.04;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskKind {
    Radial,
    Cartesian,
    Spiral,
}

impl std::str::FromStr for MaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "radial" => Ok(Self::Radial),
            "cartesian" => Ok(Self::Cartesian),
            "spiral" => Ok(Self::Spiral),
            other => Err(Error::InvalidArgument(format!(
                "unknown mask kind '{other}' (expected radial, cartesian or spiral)"
            ))),
        }
    }
}

impl std::fmt::Display for MaskKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Radial => "radial",
            Self::Cartesian => "cartesian",
            Self::Spiral => "spiral",
        })
    }
}

/// Recipe for a sampling mask.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskSpec {
    pub kind: MaskKind,
    pub target_rate: f64,
    pub seed: u64,
    pub height: usize,
    pub width: usize,
}

/// Binary k-space sampling pattern, DC-anchored like [`KSpaceGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    spec: MaskSpec,
    data: Vec<u8>,
}

/// JSON record stored next to a mask image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskSidecar {
    #[serde(flatten)]
    pub spec: MaskSpec,
    pub achieved_rate: f64,
    /// Pixel layout of the image file; always `"centered"`.
    pub layout: String,
}

impl Mask {
    /// Builds a mask from a centered-view 0/1 grid.
    pub fn from_centered(spec: MaskSpec, centered: &[u8]) -> Result<Self> {
        let (h, w) = (spec.height, spec.width);
        if centered.len() != h * w {
            return Err(Error::shape(
                "Mask::from_centered",
                format!("{h}x{w} mask, {} values", centered.len()),
            ));
        }
        if centered.iter().any(|&v| v > 1) {
            return Err(Error::InvalidArgument("mask entries must be 0 or 1".into()));
        }
        let mut data = vec![0u8; h * w];
        for r in 0..h {
            for c in 0..w {
                data[shift_index(r, c, h, w)] = centered[r * w + c];
            }
        }
        Ok(Self { spec, data })
    }

    pub fn full(height: usize, width: usize) -> Self {
        Self {
            spec: MaskSpec {
                kind: MaskKind::Cartesian,
                target_rate: 1.0,
                seed: 0,
                height,
                width,
            },
            data: vec![1; height * width],
        }
    }

    pub fn spec(&self) -> &MaskSpec {
        &self.spec
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.spec.height, self.spec.width)
    }

    /// DC-anchored 0/1 entries.
    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn is_sampled(&self, row: usize, col: usize) -> bool {
        self.data[row * self.spec.width + col] == 1
    }

    /// Centered-view 0/1 entries (DC at `(H / 2, W / 2)`).
    pub fn centered(&self) -> Vec<u8> {
        let (h, w) = self.dims();
        (0..h * w).map(|i| self.data[shift_index(i / w, i % w, h, w)]).collect()
    }

    pub fn ones(&self) -> usize {
        self.data.iter().map(|&v| v as usize).sum()
    }

    pub fn achieved_rate(&self) -> f64 {
        self.ones() as f64 / self.data.len() as f64
    }

    /// Zeroes every unsampled entry of `grid`.
    pub fn apply<T: Float>(&self, grid: &KSpaceGrid<T>) -> Result<KSpaceGrid<T>> {
        if grid.dims() != self.dims() {
            return Err(Error::shape(
                "Mask::apply",
                format!("mask {:?} vs grid {:?}", self.dims(), grid.dims()),
            ));
        }
        let mut out = grid.clone();
        for (v, &m) in out.data_mut().iter_mut().zip(&self.data) {
            if m == 0 {
                *v = num_complex::Complex::new(T::zero(), T::zero());
            }
        }
        Ok(out)
    }

    pub fn sidecar(&self) -> MaskSidecar {
        MaskSidecar {
            spec: self.spec,
            achieved_rate: self.achieved_rate(),
            layout: "centered".into(),
        }
    }

    /// Writes `path` as an 8-bit 0/255 image (centered view) and a JSON
    /// sidecar next to it (`<path>.json`).
    pub fn save(&self, path: &Path) -> Result<()> {
        let (h, w) = self.dims();
        let pixels: Vec<u8> = self.centered().iter().map(|&v| v * 255).collect();
        let img = image::GrayImage::from_raw(w as u32, h as u32, pixels).expect("mask extents");
        img.save_with_format(path, image::ImageFormat::Png)?;
        let json = serde_json::to_string_pretty(&self.sidecar())?;
        let side = sidecar_path(path);
        std::fs::write(&side, json + "\n").map_err(|e| Error::io(side, e))
    }

    /// Reads a mask written by [`Mask::save`], checking it against its sidecar.
    pub fn load(path: &Path) -> Result<Self> {
        let side = sidecar_path(path);
        let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
        let sidecar: MaskSidecar = serde_json::from_str(&text)?;
        if sidecar.layout != "centered" {
            return Err(Error::Data(format!("unsupported mask layout '{}'", sidecar.layout)));
        }
        let img = image::open(path)?.to_luma8();
        let (w, h) = img.dimensions();
        if (h as usize, w as usize) != (sidecar.spec.height, sidecar.spec.width) {
            return Err(Error::Data(format!(
                "{}: image is {h}x{w} but sidecar says {}x{}",
                path.display(),
                sidecar.spec.height,
                sidecar.spec.width
            )));
        }
        let centered = img
            .into_raw()
            .into_iter()
            .map(|v| match v {
                0 => Ok(0),
                255 => Ok(1),
                other => Err(Error::Data(format!("{}: mask pixel value {other}", path.display()))),
            })
            .collect::<Result<Vec<u8>>>()?;
        let mask = Self::from_centered(sidecar.spec, &centered)?;
        if mask.achieved_rate() != sidecar.achieved_rate {
            return Err(Error::Data(format!(
                "{}: sampled fraction {} disagrees with sidecar {}",
                path.display(),
                mask.achieved_rate(),
                sidecar.achieved_rate
            )));
        }
        Ok(mask)
    }
}

pub fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

/// Generates the mask described by `spec`.
///
/// Deterministic in the `MaskSpec`; the achieved rate is within
/// [`RATE_TOLERANCE`] of the target or an error is returned.
pub fn make_mask(spec: &MaskSpec) -> Result<Mask> {
    let (h, w) = (spec.height, spec.width);
    check_pow2("make_mask", h, w)?;
    let rate = spec.target_rate;
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(Error::InvalidArgument(format!("target rate {rate} outside (0, 1]")));
    }
    if rate == 1.0 {
        return Mask::from_centered(*spec, &vec![1; h * w]);
    }
    let centered = match spec.kind {
        MaskKind::Cartesian => cartesian(spec)?,
        MaskKind::Radial => radial(spec)?,
        MaskKind::Spiral => spiral(spec)?,
    };
    let mask = Mask::from_centered(*spec, &centered)?;
    let achieved = mask.achieved_rate();
    if (achieved - rate).abs() > RATE_TOLERANCE {
        return Err(Error::InvalidArgument(format!(
            "{} mask cannot reach rate {rate} on {h}x{w} (closest {achieved:.4})",
            spec.kind
        )));
    }
    Ok(mask)
}

fn rate_of(grid: &[u8]) -> f64 {
    grid.iter().map(|&v| v as usize).sum::<usize>() as f64 / grid.len() as f64
}

/// Full-width phase-encode rows: a fully sampled center band plus rows drawn
/// with probability proportional to the inverse distance from DC.
fn cartesian(spec: &MaskSpec) -> Result<Vec<u8>> {
    let (h, w) = (spec.height, spec.width);
    let rows = (spec.target_rate * h as f64).round() as usize;
    if rows == 0 {
        return Err(Error::InvalidArgument(format!(
            "cartesian rate {} is below one line of {h}",
            spec.target_rate
        )));
    }
    let center = h / 2;
    let band = ((CARTESIAN_CENTER_FRACTION * h as f64).ceil() as usize).clamp(1, rows);
    let lo = center - band / 2;
    let mut chosen = vec![false; h];
    chosen[lo..lo + band].iter_mut().for_each(|v| *v = true);
    // Weighted sampling without replacement via exponential keys.
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut keyed: Vec<(f64, usize)> = (0..h)
        .map(|r| {
            let u: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
            let weight = 1.0 / (r as f64 - center as f64).abs().max(1.0);
            (u.ln() / weight, r)
        })
        .filter(|&(_, r)| !chosen[r])
        .collect();
    keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(_, r) in keyed.iter().take(rows - band) {
        chosen[r] = true;
    }
    let mut grid = vec![0u8; h * w];
    for (r, &on) in chosen.iter().enumerate() {
        if on {
            grid[r * w..(r + 1) * w].iter_mut().for_each(|v| *v = 1);
        }
    }
    Ok(grid)
}

fn draw_line(grid: &mut [u8], h: usize, w: usize, theta: f64) {
    let (cy, cx) = ((h / 2) as f64, (w / 2) as f64);
    let (dy, dx) = theta.sin_cos();
    if dx.abs() >= dy.abs() {
        for x in 0..w {
            let y = (cy + (x as f64 - cx) * dy / dx).round();
            if y >= 0.0 && y < h as f64 {
                grid[y as usize * w + x] = 1;
            }
        }
    } else {
        for y in 0..h {
            let x = (cx + (y as f64 - cy) * dx / dy).round();
            if x >= 0.0 && x < w as f64 {
                grid[y * w + x as usize] = 1;
            }
        }
    }
}

fn radial_grid(h: usize, w: usize, spokes: usize, phase: f64) -> Vec<u8> {
    let mut grid = vec![0u8; h * w];
    let step = PI / spokes as f64;
    for i in 0..spokes {
        draw_line(&mut grid, h, w, phase * step + i as f64 * step);
    }
    grid
}

/// Candidate rotation phases (fractions of the spoke spacing) for a seed.
fn phases(seed: u64, count: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    (0..count).map(|_| rng.random::<f64>()).collect()
}

/// Equiangular full-diameter spokes. The spoke count comes from bisection on
/// the achieved rate; the seeded rotation of the spoke set then fine-tunes
/// the overlap near DC.
fn radial(spec: &MaskSpec) -> Result<Vec<u8>> {
    let (h, w) = (spec.height, spec.width);
    let target = spec.target_rate;
    let phase_list = phases(spec.seed, 32);
    let rate = |s: usize, p: f64| rate_of(&radial_grid(h, w, s, p));
    let (mut lo, mut hi) = (1usize, 4 * (h + w));
    while lo < hi {
        let mid = (lo + hi) / 2;
        if rate(mid, phase_list[0]) < target {
            lo = mid + 1;
        } else {
            hi = mid;
        }
    }
    let mut best: Option<(f64, Vec<u8>)> = None;
    for s in lo.saturating_sub(2).max(1)..=lo + 2 {
        for &p in &phase_list {
            let grid = radial_grid(h, w, s, p);
            let err = (rate_of(&grid) - target).abs();
            if best.as_ref().is_none_or(|(e, _)| err < *e) {
                best = Some((err, grid));
            }
            if err <= RATE_TOLERANCE / 2.0 {
                return Ok(best.expect("set above").1);
            }
        }
    }
    let (err, grid) = best.expect("non-empty search");
    if err <= RATE_TOLERANCE {
        return Ok(grid);
    }
    // Small grids quantize too coarsely for whole spokes: take the densest
    // nearby spoke set and trim its outermost samples down to the target.
    let mut grid = radial_grid(h, w, lo + 2, phase_list[0]);
    trim_outermost(&mut grid, h, w, target);
    Ok(grid)
}

/// Clears sampled entries farthest from DC (ties broken by index) until the
/// rate no longer exceeds `target`.
fn trim_outermost(grid: &mut [u8], h: usize, w: usize, target: f64) {
    let (cy, cx) = ((h / 2) as i64, (w / 2) as i64);
    let mut on: Vec<(i64, usize)> = (0..h * w)
        .filter(|&i| grid[i] == 1)
        .map(|i| {
            let (dy, dx) = ((i / w) as i64 - cy, (i % w) as i64 - cx);
            (dy * dy + dx * dx, i)
        })
        .collect();
    on.sort_unstable_by(|a, b| b.cmp(a));
    let keep = (target * (h * w) as f64).round() as usize;
    for &(_, i) in on.iter().take(on.len().saturating_sub(keep)) {
        grid[i] = 0;
    }
}

/// Interleaved Archimedean spirals `r = a * phi` rasterized from DC outwards.
fn spiral_grid(h: usize, w: usize, arms: usize, pitch: f64, phase: f64) -> Vec<u8> {
    let mut grid = vec![0u8; h * w];
    let (cy, cx) = ((h / 2) as f64, (w / 2) as f64);
    let r_max = (cy * cy + cx * cx).sqrt() + 1.0;
    for arm in 0..arms {
        let rot = 2.0 * PI * (arm as f64 + phase) / arms as f64;
        let mut phi = 0.0f64;
        loop {
            let r = pitch * phi;
            if r > r_max {
                break;
            }
            let (s, c) = (phi + rot).sin_cos();
            let y = (cy + r * s).round();
            let x = (cx + r * c).round();
            if y >= 0.0 && y < h as f64 && x >= 0.0 && x < w as f64 {
                grid[y as usize * w + x as usize] = 1;
            }
            // Keep successive samples under half a pixel apart.
            phi += 0.5 / (r * r + pitch * pitch).sqrt();
        }
    }
    grid
}

/// Bisection on the spiral pitch for a sequence of arm counts.
fn spiral(spec: &MaskSpec) -> Result<Vec<u8>> {
    let (h, w) = (spec.height, spec.width);
    let target = spec.target_rate;
    let phase = phases(spec.seed, 1)[0];
    let mut best: Option<(f64, Vec<u8>)> = None;
    for arms in [4usize, 8, 2, 1, 16] {
        // Rate falls as the pitch grows; bisect in log-pitch.
        let (mut lo, mut hi) = (0.01f64.ln(), (h.max(w) as f64).ln());
        for _ in 0..48 {
            let mid = 0.5 * (lo + hi);
            let grid = spiral_grid(h, w, arms, mid.exp(), phase);
            let rate = rate_of(&grid);
            let err = (rate - target).abs();
            if best.as_ref().is_none_or(|(e, _)| err < *e) {
                best = Some((err, grid));
            }
            if err <= RATE_TOLERANCE / 2.0 {
                return Ok(best.expect("set above").1);
            }
            if rate > target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
    }
    Ok(best.expect("non-empty search").1)
}
