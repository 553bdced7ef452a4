//! Dense signal container and the inner-product geometry on it.
//!
//! A [`Signal`] is an immutable row-major, channel-interleaved block of
//! f64 samples. Complex-valued data is stored as (re, im) channel pairs
//! and marked by [`Domain::Complex`]; operators decide how to interpret
//! the tag. All arithmetic is in 64-bit floats.

use crate::rng::Rng;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SignalError {
    #[error("shape mismatch: {0} vs {1}")]
    ShapeMismatch(Shape, Shape),
    #[error("data length {got} does not match shape {shape} ({} samples)", shape.len())]
    BadLength { shape: Shape, got: usize },
    #[error("complex signals need an even channel count, got {0}")]
    OddComplexChannels(usize),
    #[error("shape dimensions must be positive")]
    ZeroDimension,
    #[error("peak must be positive, got {0}")]
    NonPositivePeak(f64),
    #[error("noise sigma must be nonnegative, got {0}")]
    NegativeSigma(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub rows: usize,
    pub cols: usize,
    pub channels: usize,
}

impl Shape {
    pub fn new(rows: usize, cols: usize, channels: usize) -> Self {
        Shape {
            rows,
            cols,
            channels,
        }
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.rows, self.cols, self.channels)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    Real,
    /// Channels come in (re, im) pairs.
    Complex,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    shape: Shape,
    domain: Domain,
    data: Vec<f64>,
}

impl Signal {
    pub fn new(shape: Shape, domain: Domain, data: Vec<f64>) -> Result<Self, SignalError> {
        if shape.is_empty() {
            return Err(SignalError::ZeroDimension);
        }
        if data.len() != shape.len() {
            return Err(SignalError::BadLength {
                shape,
                got: data.len(),
            });
        }
        if domain == Domain::Complex && !shape.channels.is_multiple_of(2) {
            return Err(SignalError::OddComplexChannels(shape.channels));
        }
        Ok(Signal {
            shape,
            domain,
            data,
        })
    }

    pub fn zeros(shape: Shape) -> Self {
        Signal::new(shape, Domain::Real, vec![0.0; shape.len()]).expect("nonempty shape")
    }

    pub fn zeros_like(other: &Signal) -> Self {
        Signal {
            shape: other.shape,
            domain: other.domain,
            data: vec![0.0; other.data.len()],
        }
    }

    /// Column vector (n, 1, 1); the shape used throughout small worked examples.
    pub fn vector(values: &[f64]) -> Self {
        Signal::new(Shape::new(values.len(), 1, 1), Domain::Real, values.to_vec())
            .expect("nonempty vector")
    }

    /// Single-channel image.
    pub fn image(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, SignalError> {
        Signal::new(Shape::new(rows, cols, 1), Domain::Real, data)
    }

    /// Two-channel (re, im) complex grid.
    pub fn complex_image(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, SignalError> {
        Signal::new(Shape::new(rows, cols, 2), Domain::Complex, data)
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn at(&self, row: usize, col: usize, channel: usize) -> f64 {
        let s = self.shape;
        self.data[(row * s.cols + col) * s.channels + channel]
    }

    pub fn with_domain(mut self, domain: Domain) -> Result<Self, SignalError> {
        if domain == Domain::Complex && !self.shape.channels.is_multiple_of(2) {
            return Err(SignalError::OddComplexChannels(self.shape.channels));
        }
        self.domain = domain;
        Ok(self)
    }

    /// Same shape and data, new values from an elementwise map.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Signal {
        Signal {
            shape: self.shape,
            domain: self.domain,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    fn assert_same_shape(&self, other: &Signal) {
        assert_eq!(
            self.shape, other.shape,
            "signal shape mismatch: {} vs {}",
            self.shape, other.shape
        );
    }

    pub fn add(&self, other: &Signal) -> Signal {
        self.assert_same_shape(other);
        self.zip(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Signal) -> Signal {
        self.assert_same_shape(other);
        self.zip(other, |a, b| a - b)
    }

    pub fn scale(&self, c: f64) -> Signal {
        self.map(|v| c * v)
    }

    /// self + c * other
    pub fn axpy(&self, c: f64, other: &Signal) -> Signal {
        self.assert_same_shape(other);
        self.zip(other, |a, b| a + c * b)
    }

    /// (1 - t) * self + t * other
    pub fn lerp(&self, other: &Signal, t: f64) -> Signal {
        self.assert_same_shape(other);
        self.zip(other, |a, b| (1.0 - t) * a + t * b)
    }

    fn zip(&self, other: &Signal, f: impl Fn(f64, f64) -> f64) -> Signal {
        Signal {
            shape: self.shape,
            domain: self.domain,
            data: self
                .data
                .iter()
                .zip(other.data.iter())
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    /// Standard-normal samples in the given shape, from the seeded stream.
    pub fn gaussian(shape: Shape, seed: u64) -> Signal {
        let mut rng = Rng::new(seed);
        let data = (0..shape.len()).map(|_| rng.next_gaussian()).collect();
        Signal::new(shape, Domain::Real, data).expect("nonempty shape")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseKind {
    Gaussian,
}

/// Additive noise description: i.i.d. N(0, sigma^2) from a seeded stream.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub sigma: f64,
    pub seed: u64,
    pub kind: NoiseKind,
}

impl NoiseSpec {
    pub fn gaussian(sigma: f64, seed: u64) -> Result<Self, SignalError> {
        if sigma < 0.0 {
            return Err(SignalError::NegativeSigma(sigma));
        }
        Ok(NoiseSpec {
            sigma,
            seed,
            kind: NoiseKind::Gaussian,
        })
    }
}

/// Euclidean inner product over the flat sample vector.
pub fn inner(a: &Signal, b: &Signal) -> Result<f64, SignalError> {
    if a.shape() != b.shape() {
        return Err(SignalError::ShapeMismatch(a.shape(), b.shape()));
    }
    Ok(a.data()
        .iter()
        .zip(b.data().iter())
        .map(|(&x, &y)| x * y)
        .sum())
}

/// Euclidean norm.
pub fn norm2(a: &Signal) -> f64 {
    a.data().iter().map(|&x| x * x).sum::<f64>().sqrt()
}

/// x + n with n drawn i.i.d. N(0, sigma^2) from the seeded stream.
///
/// sigma = 0 returns the input bit-exactly (the stream is not consumed).
pub fn add_noise(x: &Signal, spec: &NoiseSpec) -> Signal {
    if spec.sigma == 0.0 {
        return x.clone();
    }
    let mut rng = Rng::new(spec.seed);
    let mut data = Vec::with_capacity(x.len());
    for &v in x.data() {
        data.push(v + spec.sigma * rng.next_gaussian());
    }
    Signal {
        shape: x.shape(),
        domain: x.domain(),
        data,
    }
}

/// Peak signal-to-noise ratio in dB; `f64::INFINITY` when the images agree.
///
/// The peak is caller-supplied (255 for 8-bit pipelines, 1.0 for
/// normalized data); no dynamic range is inferred.
pub fn psnr(reference: &Signal, test: &Signal, peak: f64) -> Result<f64, SignalError> {
    if reference.shape() != test.shape() {
        return Err(SignalError::ShapeMismatch(reference.shape(), test.shape()));
    }
    if peak <= 0.0 {
        return Err(SignalError::NonPositivePeak(peak));
    }
    let mse: f64 = reference
        .data()
        .iter()
        .zip(test.data().iter())
        .map(|(&a, &b)| (a - b) * (a - b))
        .sum::<f64>()
        / reference.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn inner_examples() {
        let a = Signal::vector(&[1.0, 0.0]);
        let b = Signal::vector(&[0.0, 1.0]);
        assert_eq!(inner(&a, &b).unwrap(), 0.0);
        let a = Signal::vector(&[1.0, 2.0]);
        let b = Signal::vector(&[3.0, 4.0]);
        assert_eq!(inner(&a, &b).unwrap(), 11.0);
    }

    #[test]
    fn inner_shape_mismatch() {
        let a = Signal::vector(&[1.0, 2.0]);
        let b = Signal::vector(&[1.0, 2.0, 3.0]);
        assert!(matches!(
            inner(&a, &b),
            Err(SignalError::ShapeMismatch(_, _))
        ));
    }

    #[test]
    fn norm_examples() {
        assert_eq!(norm2(&Signal::vector(&[3.0, 4.0])), 5.0);
        assert_eq!(norm2(&Signal::zeros(Shape::new(4, 4, 1))), 0.0);
    }

    #[test]
    fn complex_tag_needs_even_channels() {
        let err = Signal::new(Shape::new(2, 2, 3), Domain::Complex, vec![0.0; 12]);
        assert!(matches!(err, Err(SignalError::OddComplexChannels(3))));
    }

    #[test]
    fn noise_zero_sigma_is_identity() {
        let x = Signal::vector(&[1.0, -2.0, 3.5]);
        let spec = NoiseSpec::gaussian(0.0, 7).unwrap();
        assert_eq!(add_noise(&x, &spec), x);
    }

    #[test]
    fn noise_is_deterministic_per_seed() {
        let x = Signal::zeros(Shape::new(8, 8, 1));
        let spec = NoiseSpec::gaussian(1.5, 42).unwrap();
        assert_eq!(add_noise(&x, &spec), add_noise(&x, &spec));
        let other = NoiseSpec::gaussian(1.5, 43).unwrap();
        assert_ne!(add_noise(&x, &spec), add_noise(&x, &other));
    }

    #[test]
    fn noise_norm_concentrates() {
        // 128x128, sigma = sqrt(2): ||n|| / sqrt(n0 * 2) should sit near 1
        // by chi-distribution concentration.
        let shape = Shape::new(128, 128, 1);
        let x = Signal::zeros(shape);
        let sigma = 2.0_f64.sqrt();
        let spec = NoiseSpec::gaussian(sigma, 2024).unwrap();
        let n = add_noise(&x, &spec);
        let ratio = norm2(&n) / (shape.len() as f64 * 2.0).sqrt();
        assert!((0.95..=1.05).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn psnr_examples() {
        let a = Signal::zeros(Shape::new(4, 4, 1));
        assert_eq!(psnr(&a, &a, 255.0).unwrap(), f64::INFINITY);

        let b = a.map(|_| 1.0);
        let got = psnr(&a, &b, 255.0).unwrap();
        let want = 20.0 * 255.0_f64.log10();
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");

        let c = a.map(|_| 255.0);
        assert!((psnr(&a, &c, 255.0).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn psnr_rejects_bad_peak() {
        let a = Signal::vector(&[1.0]);
        assert!(matches!(
            psnr(&a, &a, 0.0),
            Err(SignalError::NonPositivePeak(_))
        ));
    }

    fn arb_pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (1usize..32).prop_flat_map(|n| {
            (
                proptest::collection::vec(-100.0..100.0f64, n),
                proptest::collection::vec(-100.0..100.0f64, n),
            )
        })
    }

    proptest! {
        #[test]
        fn cauchy_schwarz((a, b) in arb_pair()) {
            let a = Signal::vector(&a);
            let b = Signal::vector(&b);
            let lhs = inner(&a, &b).unwrap().abs();
            let rhs = norm2(&a) * norm2(&b);
            prop_assert!(lhs <= rhs * (1.0 + 1e-12) + 1e-12);
        }

        #[test]
        fn inner_self_is_norm_squared(a in proptest::collection::vec(-50.0..50.0f64, 1..32)) {
            let a = Signal::vector(&a);
            let i = inner(&a, &a).unwrap();
            let n = norm2(&a);
            prop_assert!((i - n * n).abs() <= 1e-12 * (1.0 + i.abs()));
        }

        #[test]
        fn norm_homogeneity(a in proptest::collection::vec(-50.0..50.0f64, 1..32), c in -10.0..10.0f64) {
            let a = Signal::vector(&a);
            let lhs = norm2(&a.scale(c));
            let rhs = c.abs() * norm2(&a);
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs));
        }

        #[test]
        fn psnr_antisymmetry((a, b) in arb_pair()) {
            let a = Signal::vector(&a);
            let b = Signal::vector(&b);
            let ab = psnr(&a, &b, 255.0).unwrap();
            let ba = psnr(&b, &a, 255.0).unwrap();
            prop_assert!(ab == ba || (ab - ba).abs() < 1e-12);
        }
    }
}
