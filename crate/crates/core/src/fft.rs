//! Thin 2-D FFT wrappers over rustfft.
//!
//! Forward/inverse here are unnormalized; callers apply whichever scaling
//! their convention needs (the masked-Fourier operator is unitary, the
//! convolution path folds the 1/N into the inverse transform).

use rustfft::num_complex::Complex;
use rustfft::{FftDirection, FftPlanner};

fn transform_rows(data: &mut [Complex<f64>], row_len: usize, direction: FftDirection) {
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft(row_len, direction);
    let mut scratch = vec![Complex::default(); fft.get_inplace_scratch_len()];
    for row in data.chunks_exact_mut(row_len) {
        fft.process_with_scratch(row, &mut scratch);
    }
}

fn transpose(data: &[Complex<f64>], rows: usize, cols: usize) -> Vec<Complex<f64>> {
    let mut out = vec![Complex::default(); data.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = data[r * cols + c];
        }
    }
    out
}

/// In-place unnormalized 2-D DFT of a row-major rows x cols grid.
pub(crate) fn fft2(data: &mut Vec<Complex<f64>>, rows: usize, cols: usize, inverse: bool) {
    debug_assert_eq!(data.len(), rows * cols);
    let direction = if inverse {
        FftDirection::Inverse
    } else {
        FftDirection::Forward
    };
    transform_rows(data, cols, direction);
    let mut t = transpose(data, rows, cols);
    transform_rows(&mut t, rows, direction);
    *data = transpose(&t, cols, rows);
}

/// Unitary 2-D DFT (1/sqrt(N) each direction folded into one pass).
pub(crate) fn unitary_fft2(data: &mut Vec<Complex<f64>>, rows: usize, cols: usize, inverse: bool) {
    fft2(data, rows, cols, inverse);
    let scale = 1.0 / ((rows * cols) as f64).sqrt();
    for v in data.iter_mut() {
        *v *= scale;
    }
}
