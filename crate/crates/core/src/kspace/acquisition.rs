use num_complex::Complex;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{fft2, ifft2, KSpaceGrid, Mask};
use crate::{Error, Float, Image, Result};

/// Complex Gaussian measurement noise, drawn independently for the real and
/// imaginary parts in unitary k-space units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub mean: f64,
    pub sigma: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ZeroFillMode {
    /// Real part of the inverse transform.
    #[default]
    Real,
    /// Modulus of the inverse transform.
    Magnitude,
}

/// `y = M (F x + b)`: sampled spectrum plus optional sampled noise.
pub fn undersample<T: Float>(x: &Image<T>, mask: &Mask, noise: Option<&NoiseSpec>) -> Result<KSpaceGrid<T>> {
    if x.dims() != mask.dims() {
        return Err(Error::shape(
            "undersample",
            format!("image {:?} vs mask {:?}", x.dims(), mask.dims()),
        ));
    }
    let mut k = fft2(x)?;
    if let Some(spec) = noise {
        if !(spec.sigma >= 0.0) || !spec.mean.is_finite() || !spec.sigma.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "noise needs finite mean and sigma >= 0, got {spec:?}"
            )));
        }
        let normal = Normal::new(spec.mean, spec.sigma).expect("validated");
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        // Noise is drawn for every location so the values do not depend on the mask.
        for v in k.data_mut() {
            let re = normal.sample(&mut rng);
            let im = normal.sample(&mut rng);
            *v = *v + Complex::new(T::lit(re), T::lit(im));
        }
    }
    mask.apply(&k)
}

/// Zero-filled reconstruction `x0 = Re(F^H y)`.
pub fn zero_fill<T: Float>(y: &KSpaceGrid<T>) -> Result<Image<T>> {
    zero_fill_with(y, ZeroFillMode::Real)
}

pub fn zero_fill_with<T: Float>(y: &KSpaceGrid<T>, mode: ZeroFillMode) -> Result<Image<T>> {
    let x = ifft2(y)?;
    Ok(match mode {
        ZeroFillMode::Real => x.real(),
        ZeroFillMode::Magnitude => x.magnitude(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kspace::{make_mask, MaskKind, MaskSpec};

    #[test]
    fn dc_only_mask_keeps_scaled_mean() {
        let x = Image::filled(8, 8, 0.25f64);
        let mut centered = vec![0u8; 64];
        centered[4 * 8 + 4] = 1;
        let spec = MaskSpec {
            kind: MaskKind::Cartesian,
            target_rate: 1.0 / 64.0,
            seed: 0,
            height: 8,
            width: 8,
        };
        let mask = Mask::from_centered(spec, &centered).unwrap();
        let y = undersample(&x, &mask, None).unwrap();
        assert!((y.get(0, 0).re - 0.25 * 8.0).abs() < 1e-12);
        let nonzero = y.data().iter().filter(|c| c.norm() != 0.0).count();
        assert_eq!(nonzero, 1);
    }

    #[test]
    fn full_mask_zero_fill_is_identity() {
        let x = Image::from_fn(16, 16, |r, c| ((r * 7 + c * 3) % 11) as f64 / 10.0);
        let y = undersample(&x, &Mask::full(16, 16), None).unwrap();
        let x0 = zero_fill(&y).unwrap();
        for (a, b) in x0.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn unsampled_entries_are_exactly_zero_with_noise() {
        let x = Image::filled(32, 32, 0.5f32);
        let mask = make_mask(&MaskSpec {
            kind: MaskKind::Radial,
            target_rate: 0.3,
            seed: 1,
            height: 32,
            width: 32,
        })
        .unwrap();
        let noise = NoiseSpec {
            mean: 0.0,
            sigma: 1.0,
            seed: 3,
        };
        let y = undersample(&x, &mask, Some(&noise)).unwrap();
        for (v, &m) in y.data().iter().zip(mask.data()) {
            if m == 0 {
                assert_eq!(v.re, 0.0);
                assert_eq!(v.im, 0.0);
            }
        }
    }

    #[test]
    fn extent_mismatch_is_an_error() {
        let x = Image::filled(16, 16, 0.0f64);
        assert!(undersample(&x, &Mask::full(8, 8), None).is_err());
    }

    #[test]
    fn zero_grid_fills_to_zero() {
        let y = KSpaceGrid::<f64>::zeros(8, 8);
        assert!(zero_fill(&y).unwrap().data().iter().all(|&v| v == 0.0));
    }
}
