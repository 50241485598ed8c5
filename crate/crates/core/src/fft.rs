//! Centered, orthonormal 2-D Fourier transforms.
//!
//! `fft2c` places the DC term at index `(H/2, W/2)` and scales by `1/sqrt(H*W)`
//! so the transform is unitary; `ifft2c` is its exact inverse (and adjoint).

use std::cell::RefCell;
use std::sync::Arc;

use ndarray::{Array2, ArrayView2, Axis};
use num_complex::Complex64;
use rustfft::{Fft, FftDirection, FftPlanner};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(len: usize, direction: FftDirection) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft(len, direction))
}

/// Circularly shifts so that index 0 moves to `floor(n/2)`.
pub fn fftshift(x: &Array2<Complex64>) -> Array2<Complex64> {
    let (h, w) = x.dim();
    roll(x.view(), h / 2, w / 2)
}

/// Inverse of [`fftshift`]; differs from it for odd sizes.
pub fn ifftshift(x: &Array2<Complex64>) -> Array2<Complex64> {
    let (h, w) = x.dim();
    roll(x.view(), h - h / 2, w - w / 2)
}

fn roll(x: ArrayView2<Complex64>, dy: usize, dx: usize) -> Array2<Complex64> {
    let (h, w) = x.dim();
    let mut out = Array2::zeros((h, w));
    for ((i, j), v) in x.indexed_iter() {
        out[[(i + dy) % h, (j + dx) % w]] = *v;
    }
    out
}

fn fft2_inplace(x: &mut Array2<Complex64>, direction: FftDirection) {
    let (h, w) = x.dim();
    let row_fft = plan(w, direction);
    let col_fft = plan(h, direction);
    let mut scratch = vec![Complex64::default(); row_fft.get_inplace_scratch_len().max(col_fft.get_inplace_scratch_len())];

    // rows are contiguous in standard layout
    {
        let data = x.as_slice_mut().expect("standard layout");
        for row in data.chunks_exact_mut(w) {
            row_fft.process_with_scratch(row, &mut scratch);
        }
    }
    let mut col = vec![Complex64::default(); h];
    for mut c in x.axis_iter_mut(Axis(1)) {
        for (dst, src) in col.iter_mut().zip(c.iter()) {
            *dst = *src;
        }
        col_fft.process_with_scratch(&mut col, &mut scratch);
        for (dst, src) in c.iter_mut().zip(col.iter()) {
            *dst = *src;
        }
    }
    let scale = 1.0 / ((h * w) as f64).sqrt();
    x.mapv_inplace(|v| v * scale);
}

/// Centered orthonormal forward transform.
pub fn fft2c(x: &Array2<Complex64>) -> Array2<Complex64> {
    let mut y = ifftshift(x);
    fft2_inplace(&mut y, FftDirection::Forward);
    fftshift(&y)
}

/// Centered orthonormal inverse transform.
pub fn ifft2c(x: &Array2<Complex64>) -> Array2<Complex64> {
    let mut y = ifftshift(x);
    fft2_inplace(&mut y, FftDirection::Inverse);
    fftshift(&y)
}
