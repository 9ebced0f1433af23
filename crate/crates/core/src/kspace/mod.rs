//! MRI acquisition simulation: unitary 2-D Fourier transforms, binary
//! sampling masks and the undersampled, noisy measurement model.
//!
//! K-space grids and masks are stored DC-anchored (the zero frequency at
//! index `(0, 0)`, matching the transform output). `centered()` accessors
//! give the shifted view with the DC term at `(H / 2, W / 2)`.

mod acquisition;
mod fft;
mod mask;

pub use acquisition::{undersample, zero_fill, zero_fill_with, NoiseSpec, ZeroFillMode};
pub use fft::{fft2, fft2_complex, ifft2, KSpaceGrid};
pub use mask::{make_mask, Mask, MaskKind, MaskSidecar, MaskSpec, RATE_TOLERANCE};

fn check_pow2(op: &'static str, h: usize, w: usize) -> crate::Result<()> {
    if !h.is_power_of_two() || !w.is_power_of_two() {
        return Err(crate::Error::shape(
            op,
            format!("extents {h}x{w} must be powers of two"),
        ));
    }
    Ok(())
}

/// Index permutation between DC-anchored storage and the centered view.
pub(crate) fn shift_index(r: usize, c: usize, h: usize, w: usize) -> usize {
    ((r + h / 2) % h) * w + (c + w / 2) % w
}
