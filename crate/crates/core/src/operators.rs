//! Bounded linear operators of the measurement model: circular
//! convolutions, blur-then-downsample, masked Fourier sampling, and dense
//! matrices, each with a forward apply, an adjoint, and an operator-norm
//! bound (exact where the structure gives one).
//!
//! All convolutions use periodic boundaries, so they are exactly
//! circulant and their norms equal the peak magnitude of the kernel DFT.

use crate::fft::{fft2, unitary_fft2};
use crate::linalg::spectral_norm;
use crate::rng::Rng;
use crate::signal::{inner, norm2, Domain, Shape, Signal};
use rustfft::num_complex::Complex;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum OperatorError {
    #[error("input shape {got} does not match operator domain {expected}")]
    ShapeMismatch { expected: Shape, got: Shape },
    #[error("operator expects {expected:?} data, got {got:?}")]
    DomainMismatch { expected: Domain, got: Domain },
    #[error("convolution kernels must have odd dimensions, got {rows}x{cols}")]
    EvenKernel { rows: usize, cols: usize },
    #[error("kernel must be nonempty and match its declared size")]
    BadKernel,
    #[error("image dims {rows}x{cols} not divisible by scale {scale}")]
    IndivisibleDims {
        rows: usize,
        cols: usize,
        scale: usize,
    },
    #[error("scale must be >= 1")]
    BadScale,
    #[error("sampling fraction must lie in (0, 1], got {0}")]
    BadFraction(f64),
    #[error("mask is empty (no sampled cells)")]
    EmptyMask,
    #[error("mask grid {mask_rows}x{mask_cols} does not match image {rows}x{cols}")]
    MaskShapeMismatch {
        mask_rows: usize,
        mask_cols: usize,
        rows: usize,
        cols: usize,
    },
    #[error("dense matrix has {got} entries, expected {expected}")]
    BadMatrix { expected: usize, got: usize },
}

/// 2-D convolution kernel with odd dimensions, addressed around its center.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    rows: usize,
    cols: usize,
    weights: Vec<f64>,
}

impl Kernel {
    pub fn new(rows: usize, cols: usize, weights: Vec<f64>) -> Result<Self, OperatorError> {
        if rows.is_multiple_of(2) || cols.is_multiple_of(2) {
            return Err(OperatorError::EvenKernel { rows, cols });
        }
        if weights.len() != rows * cols || weights.is_empty() {
            return Err(OperatorError::BadKernel);
        }
        Ok(Kernel {
            rows,
            cols,
            weights,
        })
    }

    /// All-ones kernel normalized to sum 1 (the uniform PSF).
    pub fn uniform(size: usize) -> Result<Self, OperatorError> {
        let w = 1.0 / (size * size) as f64;
        Kernel::new(size, size, vec![w; size * size])
    }

    /// Truncated sampled Gaussian, normalized to sum 1.
    pub fn gaussian(size: usize, sigma: f64) -> Result<Self, OperatorError> {
        let half = (size / 2) as isize;
        let mut w = Vec::with_capacity(size * size);
        for r in -half..=half {
            for c in -half..=half {
                let d2 = (r * r + c * c) as f64;
                w.push((-d2 / (2.0 * sigma * sigma)).exp());
            }
        }
        let total: f64 = w.iter().sum();
        for v in &mut w {
            *v /= total;
        }
        Kernel::new(size, size, w)
    }

    /// 1 at the center, 0 elsewhere; convolution with it is the identity.
    pub fn delta() -> Self {
        Kernel::new(1, 1, vec![1.0]).expect("1x1 is odd")
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Kernel embedded on a rows x cols periodic grid, center at (0, 0).
    fn embed(&self, rows: usize, cols: usize) -> Vec<f64> {
        let mut img = vec![0.0; rows * cols];
        let hr = (self.rows / 2) as isize;
        let hc = (self.cols / 2) as isize;
        for kr in 0..self.rows {
            for kc in 0..self.cols {
                let dr = kr as isize - hr;
                let dc = kc as isize - hc;
                let r = dr.rem_euclid(rows as isize) as usize;
                let c = dc.rem_euclid(cols as isize) as usize;
                img[r * cols + c] += self.weights[kr * self.cols + kc];
            }
        }
        img
    }

    /// Eigenvalues of the circulant operator on the given grid.
    fn spectrum(&self, rows: usize, cols: usize) -> Vec<Complex<f64>> {
        let mut data: Vec<Complex<f64>> = self
            .embed(rows, cols)
            .into_iter()
            .map(|v| Complex::new(v, 0.0))
            .collect();
        fft2(&mut data, rows, cols, false);
        data
    }
}

/// Boolean sampling pattern on a Fourier grid; the DC cell is always kept.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingMask {
    rows: usize,
    cols: usize,
    grid: Vec<bool>,
    kind: MaskKind,
    seed: u64,
    fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskKind {
    Random,
    Radial,
    Cartesian,
}

impl std::fmt::Display for MaskKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MaskKind::Random => write!(f, "random"),
            MaskKind::Radial => write!(f, "radial"),
            MaskKind::Cartesian => write!(f, "cartesian"),
        }
    }
}

impl SamplingMask {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn grid(&self) -> &[bool] {
        &self.grid
    }

    pub fn kind(&self) -> MaskKind {
        self.kind
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Achieved fraction: (count of sampled cells) / (grid size).
    pub fn fraction(&self) -> f64 {
        self.fraction
    }

    pub fn true_count(&self) -> usize {
        self.grid.iter().filter(|&&b| b).count()
    }
}

/// Build a sampling mask.
///
/// random: a seeded exact-count subset of floor(fraction * n) cells, plus
/// the DC cell if the draw missed it. cartesian: round(fraction * rows)
/// full rows chosen without replacement, always containing row 0. radial:
/// the smallest number of uniformly spaced spokes through DC whose
/// rasterization (nearest cell, drawn on the centered grid and rolled so
/// DC lands at index 0) reaches the requested cell count; the seed sets a
/// global angular offset.
pub fn make_mask(
    kind: MaskKind,
    fraction: f64,
    rows: usize,
    cols: usize,
    seed: u64,
) -> Result<SamplingMask, OperatorError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(OperatorError::BadFraction(fraction));
    }
    let n = rows * cols;
    let mut grid = vec![false; n];
    let mut rng = Rng::new(seed);
    match kind {
        MaskKind::Random => {
            let target = ((fraction * n as f64).floor() as usize).max(1);
            let perm = rng.permutation(n);
            for &i in perm.iter().take(target) {
                grid[i] = true;
            }
            grid[0] = true; // DC
        }
        MaskKind::Cartesian => {
            let want = ((fraction * rows as f64).round() as usize).clamp(1, rows);
            let perm = rng.permutation(rows);
            let mut chosen: Vec<usize> = perm.into_iter().take(want).collect();
            if !chosen.contains(&0) {
                let last = chosen.len() - 1;
                chosen[last] = 0;
            }
            for r in chosen {
                for c in 0..cols {
                    grid[r * cols + c] = true;
                }
            }
        }
        MaskKind::Radial => {
            let target = ((fraction * n as f64).floor() as usize).max(1);
            let offset_unit = rng.next_f64();
            let mut best = None;
            for spokes in 1..=(rows + cols) * 4 {
                let g = rasterize_spokes(rows, cols, spokes, offset_unit);
                let count = g.iter().filter(|&&b| b).count();
                if count >= target || spokes == (rows + cols) * 4 {
                    best = Some(g);
                    break;
                }
            }
            grid = best.expect("spoke search terminates");
        }
    }
    let count = grid.iter().filter(|&&b| b).count();
    if count == 0 {
        return Err(OperatorError::EmptyMask);
    }
    Ok(SamplingMask {
        rows,
        cols,
        grid,
        kind,
        seed,
        fraction: count as f64 / n as f64,
    })
}

fn rasterize_spokes(rows: usize, cols: usize, spokes: usize, offset_unit: f64) -> Vec<bool> {
    let mut centered = vec![false; rows * cols];
    let rc = (rows / 2) as f64;
    let cc = (cols / 2) as f64;
    let reach = (rows.max(cols)) as f64;
    let steps = (4.0 * reach) as isize;
    for s in 0..spokes {
        let theta = (s as f64 + offset_unit) * std::f64::consts::PI / spokes as f64;
        let (dr, dc) = (theta.sin(), theta.cos());
        for t in -steps..=steps {
            let tt = t as f64 * 0.25;
            let r = (rc + tt * dr).round() as isize;
            let c = (cc + tt * dc).round() as isize;
            if r >= 0 && (r as usize) < rows && c >= 0 && (c as usize) < cols {
                centered[r as usize * cols + c as usize] = true;
            }
        }
    }
    // Roll so the centered DC cell sits at index (0, 0).
    let (r0, c0) = (rows / 2, cols / 2);
    let mut grid = vec![false; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            grid[r * cols + c] = centered[((r + r0) % rows) * cols + (c + c0) % cols];
        }
    }
    grid
}

/// A bounded linear operator with forward apply, adjoint, and an optional
/// upper bound on its operator norm (exact where the structure allows).
#[derive(Debug, Clone)]
pub enum LinearOperator {
    Identity {
        shape: Shape,
    },
    Dense {
        matrix: Vec<f64>,
        in_shape: Shape,
        out_shape: Shape,
        norm_bound: Option<f64>,
    },
    /// Circular (periodic-boundary) 2-D convolution, applied per channel.
    CircularConv {
        kernel: Kernel,
        shape: Shape,
        norm: f64,
    },
    /// Circular convolution followed by keep-every-scale-th-pixel decimation.
    DownsampleBlur {
        kernel: Kernel,
        in_shape: Shape,
        scale: usize,
        norm_upper: f64,
    },
    /// Unitary 2-D DFT followed by mask selection, on (re, im) channel pairs.
    MaskedFourier {
        mask: SamplingMask,
        shape: Shape,
    },
}

pub fn identity(shape: Shape) -> LinearOperator {
    LinearOperator::Identity { shape }
}

/// Dense matrix acting on the flattened sample vector.
///
/// The norm bound is computed exactly (Jacobi on A^T A) when the domain is
/// small enough; larger matrices leave it unset and callers fall back to
/// power iteration.
pub fn build_dense(
    matrix: Vec<f64>,
    in_shape: Shape,
    out_shape: Shape,
) -> Result<LinearOperator, OperatorError> {
    let expected = in_shape.len() * out_shape.len();
    if matrix.len() != expected {
        return Err(OperatorError::BadMatrix {
            expected,
            got: matrix.len(),
        });
    }
    let norm_bound = if in_shape.len() <= 512 {
        Some(spectral_norm(out_shape.len(), in_shape.len(), &matrix))
    } else {
        None
    };
    Ok(LinearOperator::Dense {
        matrix,
        in_shape,
        out_shape,
        norm_bound,
    })
}

/// Square dense matrix on column vectors, for small worked instances.
pub fn build_dense_square(n: usize, matrix: Vec<f64>) -> Result<LinearOperator, OperatorError> {
    let shape = Shape::new(n, 1, 1);
    build_dense(matrix, shape, shape)
}

/// Circular 2-D convolution; norm is exactly max |DFT(kernel)| on the grid.
pub fn build_conv2d_circular(
    kernel: Kernel,
    shape: Shape,
) -> Result<LinearOperator, OperatorError> {
    let norm = kernel
        .spectrum(shape.rows, shape.cols)
        .iter()
        .map(|v| v.norm())
        .fold(0.0f64, f64::max);
    Ok(LinearOperator::CircularConv {
        kernel,
        shape,
        norm,
    })
}

/// Circular blur then downsample-by-scale; scale 1 reduces to the plain
/// convolution. The stored norm is the convolution norm, an upper bound.
pub fn build_downsample_blur(
    kernel: Kernel,
    in_shape: Shape,
    scale: usize,
) -> Result<LinearOperator, OperatorError> {
    if scale == 0 {
        return Err(OperatorError::BadScale);
    }
    if !in_shape.rows.is_multiple_of(scale) || !in_shape.cols.is_multiple_of(scale) {
        return Err(OperatorError::IndivisibleDims {
            rows: in_shape.rows,
            cols: in_shape.cols,
            scale,
        });
    }
    if scale == 1 {
        return build_conv2d_circular(kernel, in_shape);
    }
    let norm_upper = kernel
        .spectrum(in_shape.rows, in_shape.cols)
        .iter()
        .map(|v| v.norm())
        .fold(0.0f64, f64::max);
    Ok(LinearOperator::DownsampleBlur {
        kernel,
        in_shape,
        scale,
        norm_upper,
    })
}

/// Masked unitary Fourier sampling on a complex (re, im) grid; norm 1.
pub fn build_masked_fourier(mask: SamplingMask) -> Result<LinearOperator, OperatorError> {
    if mask.true_count() == 0 {
        return Err(OperatorError::EmptyMask);
    }
    let shape = Shape::new(mask.rows, mask.cols, 2);
    Ok(LinearOperator::MaskedFourier { mask, shape })
}

impl LinearOperator {
    pub fn in_shape(&self) -> Shape {
        match self {
            LinearOperator::Identity { shape } => *shape,
            LinearOperator::Dense { in_shape, .. } => *in_shape,
            LinearOperator::CircularConv { shape, .. } => *shape,
            LinearOperator::DownsampleBlur { in_shape, .. } => *in_shape,
            LinearOperator::MaskedFourier { shape, .. } => *shape,
        }
    }

    pub fn out_shape(&self) -> Shape {
        match self {
            LinearOperator::Identity { shape } => *shape,
            LinearOperator::Dense { out_shape, .. } => *out_shape,
            LinearOperator::CircularConv { shape, .. } => *shape,
            LinearOperator::DownsampleBlur {
                in_shape, scale, ..
            } => Shape::new(in_shape.rows / scale, in_shape.cols / scale, in_shape.channels),
            LinearOperator::MaskedFourier { shape, .. } => *shape,
        }
    }

    pub fn in_domain(&self) -> Domain {
        match self {
            LinearOperator::MaskedFourier { .. } => Domain::Complex,
            _ => Domain::Real,
        }
    }

    pub fn out_domain(&self) -> Domain {
        self.in_domain()
    }

    /// Upper bound on the operator norm; exact for identity, circulant
    /// convolutions, masked Fourier, and small dense matrices.
    pub fn norm_bound(&self) -> Option<f64> {
        match self {
            LinearOperator::Identity { .. } => Some(1.0),
            LinearOperator::Dense { norm_bound, .. } => *norm_bound,
            LinearOperator::CircularConv { norm, .. } => Some(*norm),
            LinearOperator::DownsampleBlur { norm_upper, .. } => Some(*norm_upper),
            LinearOperator::MaskedFourier { .. } => Some(1.0),
        }
    }

    fn check_input(&self, x: &Signal, expected: Shape) -> Result<(), OperatorError> {
        if x.shape() != expected {
            return Err(OperatorError::ShapeMismatch {
                expected,
                got: x.shape(),
            });
        }
        if self.in_domain() == Domain::Complex && x.domain() != Domain::Complex {
            return Err(OperatorError::DomainMismatch {
                expected: Domain::Complex,
                got: x.domain(),
            });
        }
        Ok(())
    }

    pub fn apply(&self, x: &Signal) -> Result<Signal, OperatorError> {
        self.check_input(x, self.in_shape())?;
        Ok(match self {
            LinearOperator::Identity { .. } => x.clone(),
            LinearOperator::Dense {
                matrix,
                in_shape,
                out_shape,
                ..
            } => dense_mul(matrix, in_shape.len(), out_shape.len(), x, *out_shape, false),
            LinearOperator::CircularConv { kernel, shape, .. } => {
                convolve_channels(kernel, *shape, x, false)
            }
            LinearOperator::DownsampleBlur {
                kernel,
                in_shape,
                scale,
                ..
            } => {
                let blurred = convolve_channels(kernel, *in_shape, x, false);
                decimate(&blurred, *scale)
            }
            LinearOperator::MaskedFourier { mask, shape } => {
                masked_fourier_apply(mask, *shape, x, false)
            }
        })
    }

    pub fn adjoint(&self, u: &Signal) -> Result<Signal, OperatorError> {
        self.check_input(u, self.out_shape())?;
        Ok(match self {
            LinearOperator::Identity { .. } => u.clone(),
            LinearOperator::Dense {
                matrix,
                in_shape,
                out_shape,
                ..
            } => dense_mul(matrix, in_shape.len(), out_shape.len(), u, *in_shape, true),
            LinearOperator::CircularConv { kernel, shape, .. } => {
                convolve_channels(kernel, *shape, u, true)
            }
            LinearOperator::DownsampleBlur {
                kernel,
                in_shape,
                scale,
                ..
            } => {
                let upsampled = zero_fill(u, *in_shape, *scale);
                convolve_channels(kernel, *in_shape, &upsampled, true)
            }
            LinearOperator::MaskedFourier { mask, shape } => {
                masked_fourier_apply(mask, *shape, u, true)
            }
        })
    }

    /// Seeded random signal in the operator's domain (used by the norm
    /// estimator and the adjoint checker).
    pub fn random_input(&self, seed: u64) -> Signal {
        let s = Signal::gaussian(self.in_shape(), seed);
        match self.in_domain() {
            Domain::Real => s,
            Domain::Complex => s.with_domain(Domain::Complex).expect("even channels"),
        }
    }

    pub fn random_output(&self, seed: u64) -> Signal {
        let s = Signal::gaussian(self.out_shape(), seed);
        match self.out_domain() {
            Domain::Real => s,
            Domain::Complex => s.with_domain(Domain::Complex).expect("even channels"),
        }
    }
}

fn dense_mul(
    matrix: &[f64],
    in_len: usize,
    out_len: usize,
    x: &Signal,
    result_shape: Shape,
    transpose: bool,
) -> Signal {
    let data = x.data();
    let out = if transpose {
        // A^T u: iterate the matrix row-major once.
        let mut out = vec![0.0; in_len];
        for r in 0..out_len {
            let ur = data[r];
            if ur == 0.0 {
                continue;
            }
            let row = &matrix[r * in_len..(r + 1) * in_len];
            for (o, &m) in out.iter_mut().zip(row.iter()) {
                *o += m * ur;
            }
        }
        out
    } else {
        (0..out_len)
            .map(|r| {
                matrix[r * in_len..(r + 1) * in_len]
                    .iter()
                    .zip(data.iter())
                    .map(|(&m, &v)| m * v)
                    .sum()
            })
            .collect()
    };
    Signal::new(result_shape, x.domain(), out).expect("shape consistent by construction")
}

/// Dispatch between the direct and frequency-domain convolution paths.
/// Both compute the same circulant product; grids with a side >= 32 go
/// through the FFT.
fn convolve_channels(kernel: &Kernel, shape: Shape, x: &Signal, adjoint: bool) -> Signal {
    if shape.rows.max(shape.cols) >= 32 {
        convolve_channels_fft(kernel, shape, x, adjoint)
    } else {
        convolve_channels_direct(kernel, shape, x, adjoint)
    }
}

fn convolve_channels_direct(kernel: &Kernel, shape: Shape, x: &Signal, adjoint: bool) -> Signal {
    let (rows, cols, ch) = (shape.rows, shape.cols, shape.channels);
    let hr = (kernel.rows / 2) as isize;
    let hc = (kernel.cols / 2) as isize;
    let mut out = vec![0.0; shape.len()];
    let data = x.data();
    for r in 0..rows as isize {
        for c in 0..cols as isize {
            for (k_idx, &w) in kernel.weights.iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                let dr = (k_idx / kernel.cols) as isize - hr;
                let dc = (k_idx % kernel.cols) as isize - hc;
                // forward: y(p) = sum_d k(d) x(p - d); adjoint correlates.
                let (sr, sc) = if adjoint { (r + dr, c + dc) } else { (r - dr, c - dc) };
                let sr = sr.rem_euclid(rows as isize) as usize;
                let sc = sc.rem_euclid(cols as isize) as usize;
                for chan in 0..ch {
                    out[(r as usize * cols + c as usize) * ch + chan] +=
                        w * data[(sr * cols + sc) * ch + chan];
                }
            }
        }
    }
    Signal::new(shape, x.domain(), out).expect("shape preserved")
}

fn convolve_channels_fft(kernel: &Kernel, shape: Shape, x: &Signal, adjoint: bool) -> Signal {
    let (rows, cols, ch) = (shape.rows, shape.cols, shape.channels);
    let spectrum = kernel.spectrum(rows, cols);
    let scale = 1.0 / (rows * cols) as f64;
    let data = x.data();
    let mut out = vec![0.0; shape.len()];
    for chan in 0..ch {
        let mut plane: Vec<Complex<f64>> = (0..rows * cols)
            .map(|i| Complex::new(data[i * ch + chan], 0.0))
            .collect();
        fft2(&mut plane, rows, cols, false);
        for (v, s) in plane.iter_mut().zip(spectrum.iter()) {
            *v *= if adjoint { s.conj() } else { *s };
        }
        fft2(&mut plane, rows, cols, true);
        for (i, v) in plane.iter().enumerate() {
            out[i * ch + chan] = v.re * scale;
        }
    }
    Signal::new(shape, x.domain(), out).expect("shape preserved")
}

fn decimate(x: &Signal, scale: usize) -> Signal {
    let s = x.shape();
    let out_shape = Shape::new(s.rows / scale, s.cols / scale, s.channels);
    let mut out = Vec::with_capacity(out_shape.len());
    for r in 0..out_shape.rows {
        for c in 0..out_shape.cols {
            for chan in 0..s.channels {
                out.push(x.at(r * scale, c * scale, chan));
            }
        }
    }
    Signal::new(out_shape, x.domain(), out).expect("divisibility checked at build")
}

fn zero_fill(u: &Signal, in_shape: Shape, scale: usize) -> Signal {
    let s = u.shape();
    let mut out = vec![0.0; in_shape.len()];
    for r in 0..s.rows {
        for c in 0..s.cols {
            for chan in 0..s.channels {
                out[((r * scale) * in_shape.cols + c * scale) * in_shape.channels + chan] =
                    u.at(r, c, chan);
            }
        }
    }
    Signal::new(in_shape, u.domain(), out).expect("shape consistent")
}

fn masked_fourier_apply(mask: &SamplingMask, shape: Shape, x: &Signal, adjoint: bool) -> Signal {
    let (rows, cols) = (shape.rows, shape.cols);
    let data = x.data();
    let mut plane: Vec<Complex<f64>> = (0..rows * cols)
        .map(|i| Complex::new(data[2 * i], data[2 * i + 1]))
        .collect();
    if adjoint {
        // zero-fill to the full grid, then inverse unitary DFT
        for (v, &keep) in plane.iter_mut().zip(mask.grid.iter()) {
            if !keep {
                *v = Complex::new(0.0, 0.0);
            }
        }
        unitary_fft2(&mut plane, rows, cols, true);
    } else {
        unitary_fft2(&mut plane, rows, cols, false);
        for (v, &keep) in plane.iter_mut().zip(mask.grid.iter()) {
            if !keep {
                *v = Complex::new(0.0, 0.0);
            }
        }
    }
    let mut out = Vec::with_capacity(shape.len());
    for v in plane {
        out.push(v.re);
        out.push(v.im);
    }
    Signal::new(shape, Domain::Complex, out).expect("complex grid shape")
}

/// Result of the power-iteration norm estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormEstimate {
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Power iteration on A*A from a seeded random start; returns the square
/// root of the Rayleigh quotient once successive estimates move < tol.
pub fn op_norm_estimate(a: &LinearOperator, tol: f64, max_iter: usize) -> NormEstimate {
    assert!(tol > 0.0, "tolerance must be positive");
    let mut v = a.random_input(0x5eed_0a17);
    let nv = norm2(&v);
    if nv == 0.0 {
        return NormEstimate {
            value: 0.0,
            iterations: 0,
            converged: true,
        };
    }
    v = v.scale(1.0 / nv);
    let mut estimate = 0.0;
    for it in 1..=max_iter {
        let av = a.apply(&v).expect("shape fixed");
        let w = a.adjoint(&av).expect("shape fixed");
        let rho = inner(&v, &w).expect("same shape");
        let next = rho.max(0.0).sqrt();
        let wn = norm2(&w);
        if wn < 1e-300 {
            return NormEstimate {
                value: 0.0,
                iterations: it,
                converged: true,
            };
        }
        v = w.scale(1.0 / wn);
        if (next - estimate).abs() < tol {
            return NormEstimate {
                value: next,
                iterations: it,
                converged: true,
            };
        }
        estimate = next;
    }
    NormEstimate {
        value: estimate,
        iterations: max_iter,
        converged: false,
    }
}

/// Outcome of randomized adjoint verification.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjointReport {
    pub pass: bool,
    pub worst_violation: f64,
    pub trials: usize,
}

/// Checks |<Ax, u> - <x, A*u>| <= tol * (1 + |<Ax, u>|) over seeded random
/// pairs and reports the worst relative violation.
pub fn adjoint_check(a: &LinearOperator, trials: usize, tol: f64) -> AdjointReport {
    adjoint_check_fns(
        |x| a.apply(x).expect("shape fixed"),
        |u| a.adjoint(u).expect("shape fixed"),
        |seed| a.random_input(seed),
        |seed| a.random_output(seed),
        trials,
        tol,
    )
}

fn adjoint_check_fns(
    apply: impl Fn(&Signal) -> Signal,
    adjoint: impl Fn(&Signal) -> Signal,
    random_in: impl Fn(u64) -> Signal,
    random_out: impl Fn(u64) -> Signal,
    trials: usize,
    tol: f64,
) -> AdjointReport {
    assert!(trials >= 1);
    let mut worst = 0.0f64;
    for t in 0..trials {
        let x = random_in(0xADC0 + 2 * t as u64);
        let u = random_out(0xADC1 + 2 * t as u64);
        let lhs = inner(&apply(&x), &u).expect("out shapes agree");
        let rhs = inner(&x, &adjoint(&u)).expect("in shapes agree");
        let violation = (lhs - rhs).abs() / (1.0 + lhs.abs());
        worst = worst.max(violation);
    }
    AdjointReport {
        pass: worst <= tol,
        worst_violation: worst,
        trials,
    }
}
