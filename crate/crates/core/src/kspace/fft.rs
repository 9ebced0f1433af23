use num_complex::Complex;
use rustfft::{FftDirection, FftPlanner};

use super::{check_pow2, shift_index};
use crate::{Float, Image, Result};

/// Complex H x W grid, DC-anchored. Used for both k-space measurements and
/// complex images.
#[derive(Debug, Clone, PartialEq)]
pub struct KSpaceGrid<T> {
    height: usize,
    width: usize,
    data: Vec<Complex<T>>,
}

impl<T: Float> KSpaceGrid<T> {
    pub fn new(height: usize, width: usize, data: Vec<Complex<T>>) -> Result<Self> {
        if height * width != data.len() || data.is_empty() {
            return Err(crate::Error::shape(
                "KSpaceGrid::new",
                format!("{height}x{width} grid, {} values", data.len()),
            ));
        }
        Ok(Self { height, width, data })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![Complex::new(T::zero(), T::zero()); height * width],
        }
    }

    pub fn from_real(image: &Image<T>) -> Self {
        Self {
            height: image.height(),
            width: image.width(),
            data: image.data().iter().map(|&v| Complex::new(v, T::zero())).collect(),
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[Complex<T>] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex<T>] {
        &mut self.data
    }

    pub fn get(&self, row: usize, col: usize) -> Complex<T> {
        self.data[row * self.width + col]
    }

    /// Value at `(row, col)` of the centered view.
    pub fn get_centered(&self, row: usize, col: usize) -> Complex<T> {
        self.data[shift_index(row, col, self.height, self.width)]
    }

    /// Shifted copy with the DC term at `(H / 2, W / 2)`.
    pub fn centered(&self) -> Self {
        let (h, w) = self.dims();
        let data = (0..h * w).map(|i| self.data[shift_index(i / w, i % w, h, w)]).collect();
        Self {
            height: h,
            width: w,
            data,
        }
    }

    pub fn real(&self) -> Image<T> {
        Image::new(self.height, self.width, self.data.iter().map(|c| c.re).collect()).expect("extents")
    }

    pub fn magnitude(&self) -> Image<T> {
        Image::new(self.height, self.width, self.data.iter().map(|c| c.norm()).collect()).expect("extents")
    }

    /// Euclidean norm over all entries.
    pub fn norm(&self) -> T {
        self.data.iter().map(|c| c.norm_sqr()).sum::<T>().sqrt()
    }
}

fn transform<T: Float>(grid: &mut KSpaceGrid<T>, direction: FftDirection) -> Result<()> {
    let (h, w) = grid.dims();
    check_pow2(
        match direction {
            FftDirection::Forward => "fft2",
            FftDirection::Inverse => "ifft2",
        },
        h,
        w,
    )?;
    let mut planner = FftPlanner::<T>::new();
    let row_fft = planner.plan_fft(w, direction);
    for row in grid.data.chunks_mut(w) {
        row_fft.process(row);
    }
    let col_fft = planner.plan_fft(h, direction);
    let mut column = vec![Complex::new(T::zero(), T::zero()); h];
    for c in 0..w {
        for (r, v) in column.iter_mut().enumerate() {
            *v = grid.data[r * w + c];
        }
        col_fft.process(&mut column);
        for (r, v) in column.iter().enumerate() {
            grid.data[r * w + c] = *v;
        }
    }
    let norm = T::one() / T::lit((h * w) as f64).sqrt();
    grid.data.iter_mut().for_each(|v| *v = *v * norm);
    Ok(())
}

/// Unitary forward transform of a real image.
pub fn fft2<T: Float>(image: &Image<T>) -> Result<KSpaceGrid<T>> {
    fft2_complex(&KSpaceGrid::from_real(image))
}

/// Unitary forward transform of a complex image.
pub fn fft2_complex<T: Float>(image: &KSpaceGrid<T>) -> Result<KSpaceGrid<T>> {
    let mut out = image.clone();
    transform(&mut out, FftDirection::Forward)?;
    Ok(out)
}

/// Unitary inverse transform (the Hermitian transpose of [`fft2`]).
pub fn ifft2<T: Float>(grid: &KSpaceGrid<T>) -> Result<KSpaceGrid<T>> {
    let mut out = grid.clone();
    transform(&mut out, FftDirection::Inverse)?;
    Ok(out)
}
