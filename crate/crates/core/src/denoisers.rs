//! The denoiser operator and its fixed-point prior: analytically
//! characterized built-ins with provable demicontraction constants, the
//! averaged relaxation T_w, the demicontraction estimator, the RED value,
//! and a client for external denoiser processes.
//!
//! Built-ins are chosen so the constant alpha is provable rather than
//! learned: orthogonal projections and proximal maps advertise -1, the
//! reflection sits at the alpha = 0 boundary and is excluded from solver
//! defaults. External denoisers advertise nothing; the solver then
//! requires an explicit override.

use crate::fft::fft2;
use crate::rng::derive_seed;
use crate::signal::{inner, norm2, Domain, Shape, Signal};
use crate::span::{orthonormalize, project_span};
use rustfft::num_complex::Complex;
use std::io::{Read, Write};
use std::process::{Child, Command, Stdio};
use std::sync::Mutex;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DenoiseError {
    #[error("signal shape {got} unsupported by this denoiser (expects {expected})")]
    ShapeUnsupported { expected: Shape, got: Shape },
    #[error("relaxation weight {w} outside the admissible interval (0, {upper})")]
    BadWeight { w: f64, upper: f64 },
    #[error("spectral condition violated: {0}")]
    SpectralCondition(String),
    #[error("denoiser has no fixed-point oracle")]
    NoFixOracle,
    #[error("denoiser acted as the identity on every sample")]
    IdentityOnSamples,
    #[error("estimator needs at least one sample signal and one pair")]
    EmptySample,
    #[error("transport error talking to external denoiser: {0}")]
    Transport(String),
}

/// Generator of points known to lie in Fix(T), plus an exact projector
/// where the structure provides one.
#[derive(Debug, Clone)]
pub enum FixSet {
    /// The denoiser itself is the orthogonal projector onto its fixed set.
    SelfProjector,
    /// Fix(T) = span of an orthonormal basis (empty basis means {0}).
    Span(Vec<Signal>),
    /// Fix(T) = orthogonal complement of the span.
    Complement(Vec<Signal>),
    /// Every point is fixed.
    All,
    /// Nothing is known (external denoisers).
    Unknown,
}

#[derive(Debug)]
enum DenoiserKind {
    Zero {
        shape: Shape,
    },
    /// factor * Id with factor in [0, 1).
    Shrink {
        factor: f64,
        shape: Shape,
    },
    /// Orthogonal projection onto span(basis).
    Subspace {
        basis: Vec<Signal>,
    },
    /// Orthogonal projection onto a low-frequency Fourier subspace,
    /// applied per channel plane. The keep-mask is conjugate symmetric so
    /// real planes stay real.
    Lowpass {
        shape: Shape,
        keep: Vec<bool>,
    },
    /// Symmetric matrix with spectrum in [0, 1] acting on the flat vector.
    Linear {
        shape: Shape,
        matrix: Vec<f64>,
    },
    /// Soft-threshold of the coefficients on an orthonormal basis; the
    /// orthogonal complement passes through untouched.
    SoftThreshold {
        basis: Vec<Signal>,
        theta: f64,
    },
    /// 2 P - Id about span(basis); nonexpansive, alpha = 0 exactly.
    Reflection {
        basis: Vec<Signal>,
    },
    External {
        client: ExternalClient,
    },
    Relaxed {
        inner: Box<Denoiser>,
        w: f64,
    },
}

/// The operator T with its advertised demicontraction constant, strength
/// parameter, and fixed-point oracle.
#[derive(Debug)]
pub struct Denoiser {
    kind: DenoiserKind,
    alpha: Option<f64>,
    sigma_f: f64,
    fix: FixSet,
}

pub fn build_zero_denoiser(shape: Shape) -> Denoiser {
    Denoiser {
        kind: DenoiserKind::Zero { shape },
        alpha: Some(-1.0),
        sigma_f: 0.0,
        fix: FixSet::Span(Vec::new()),
    }
}

/// factor * Id. For factor in [0, 1) this is demicontractive with the
/// exact constant alpha = -(1 + factor) / (1 - factor).
pub fn build_shrink_denoiser(shape: Shape, factor: f64) -> Result<Denoiser, DenoiseError> {
    if !(0.0..1.0).contains(&factor) {
        return Err(DenoiseError::SpectralCondition(format!(
            "shrink factor must lie in [0, 1), got {factor}"
        )));
    }
    Ok(Denoiser {
        kind: DenoiserKind::Shrink { factor, shape },
        alpha: Some(-(1.0 + factor) / (1.0 - factor)),
        sigma_f: 0.0,
        fix: FixSet::Span(Vec::new()),
    })
}

/// Orthogonal projection onto the span of the given vectors
/// (orthonormalized at construction). alpha = -1.
pub fn build_subspace_denoiser(spanning: &[Signal]) -> Result<Denoiser, DenoiseError> {
    let basis = orthonormalize(spanning);
    if basis.is_empty() {
        return Err(DenoiseError::SpectralCondition(
            "subspace denoiser needs at least one independent vector".into(),
        ));
    }
    Ok(Denoiser {
        kind: DenoiserKind::Subspace { basis },
        alpha: Some(-1.0),
        sigma_f: 0.0,
        fix: FixSet::SelfProjector,
    })
}

/// Projection onto the subspace of Fourier modes with normalized radial
/// frequency <= cutoff, per channel. cutoff >= sqrt(2) keeps everything.
pub fn build_lowpass_denoiser(shape: Shape, cutoff: f64) -> Result<Denoiser, DenoiseError> {
    if cutoff <= 0.0 {
        return Err(DenoiseError::SpectralCondition(format!(
            "lowpass cutoff must be positive, got {cutoff}"
        )));
    }
    let (rows, cols) = (shape.rows, shape.cols);
    let mut keep = vec![false; rows * cols];
    let mut all = true;
    for r in 0..rows {
        for c in 0..cols {
            let fr = r.min(rows - r) as f64 / (rows as f64 / 2.0);
            let fc = c.min(cols - c) as f64 / (cols as f64 / 2.0);
            let inside = (fr * fr + fc * fc).sqrt() <= cutoff;
            keep[r * cols + c] = inside;
            all &= inside;
        }
    }
    let fix = if all { FixSet::All } else { FixSet::SelfProjector };
    Ok(Denoiser {
        kind: DenoiserKind::Lowpass { shape, keep },
        alpha: Some(-1.0),
        sigma_f: cutoff,
        fix,
    })
}

/// Symmetric matrix with spectrum in [0, 1]; Fix(T) is the eigenvalue-1
/// eigenspace. alpha = -1 (firmly nonexpansive).
pub fn build_linear_denoiser(shape: Shape, matrix: Vec<f64>) -> Result<Denoiser, DenoiseError> {
    let n = shape.len();
    if matrix.len() != n * n {
        return Err(DenoiseError::SpectralCondition(format!(
            "matrix has {} entries, expected {}",
            matrix.len(),
            n * n
        )));
    }
    let scale = matrix.iter().fold(1.0f64, |m, &v| m.max(v.abs()));
    for i in 0..n {
        for j in (i + 1)..n {
            if (matrix[i * n + j] - matrix[j * n + i]).abs() > 1e-10 * scale {
                return Err(DenoiseError::SpectralCondition(
                    "matrix is not symmetric".into(),
                ));
            }
        }
    }
    let (evals, evecs) = crate::linalg::sym_eigen(n, &matrix);
    if evals.iter().any(|&l| !(-1e-10..=1.0 + 1e-10).contains(&l)) {
        return Err(DenoiseError::SpectralCondition(format!(
            "spectrum [{:.6}, {:.6}] leaves [0, 1]",
            evals.first().unwrap(),
            evals.last().unwrap()
        )));
    }
    let fix_basis: Vec<Signal> = evals
        .iter()
        .zip(evecs.iter())
        .filter(|(&l, _)| l >= 1.0 - 1e-10)
        .map(|(_, v)| Signal::new(shape, Domain::Real, v.clone()).expect("shape matches n"))
        .collect();
    Ok(Denoiser {
        kind: DenoiserKind::Linear { shape, matrix },
        alpha: Some(-1.0),
        sigma_f: 0.0,
        fix: FixSet::Span(fix_basis),
    })
}

/// Soft-threshold by theta of the coefficients on an orthonormal basis;
/// Fix(T) is the orthogonal complement (all thresholded coefficients
/// zero). alpha = -1 (proximal map of a convex function).
pub fn build_soft_threshold_denoiser(
    spanning: &[Signal],
    theta: f64,
) -> Result<Denoiser, DenoiseError> {
    if theta <= 0.0 {
        return Err(DenoiseError::SpectralCondition(format!(
            "threshold must be positive, got {theta}"
        )));
    }
    let basis = orthonormalize(spanning);
    if basis.is_empty() {
        return Err(DenoiseError::SpectralCondition(
            "soft-threshold denoiser needs at least one independent vector".into(),
        ));
    }
    Ok(Denoiser {
        kind: DenoiserKind::SoftThreshold { basis, theta },
        alpha: Some(-1.0),
        sigma_f: theta,
        fix: FixSet::Complement(Vec::new()), // basis filled below
    })
    .map(|mut d| {
        if let DenoiserKind::SoftThreshold { basis, .. } = &d.kind {
            d.fix = FixSet::Complement(basis.clone());
        }
        d
    })
}

/// 2 P - Id about span(basis). Nonexpansive with alpha = 0 exactly; kept
/// out of solver defaults (the admissible w interval collapses to (0, 1)).
pub fn build_reflection_denoiser(spanning: &[Signal]) -> Result<Denoiser, DenoiseError> {
    let basis = orthonormalize(spanning);
    if basis.is_empty() {
        return Err(DenoiseError::SpectralCondition(
            "reflection denoiser needs at least one independent vector".into(),
        ));
    }
    Ok(Denoiser {
        kind: DenoiserKind::Reflection {
            basis: basis.clone(),
        },
        alpha: Some(0.0),
        sigma_f: 0.0,
        fix: FixSet::Span(basis),
    })
}

/// Denoiser backed by an external process speaking the DNZ1/DNR1 protocol
/// on its standard input/output. No alpha is advertised.
pub fn external_denoiser(
    program: &str,
    args: &[String],
    sigma_f: f64,
) -> Result<Denoiser, DenoiseError> {
    let client = ExternalClient::spawn(program, args)?;
    Ok(Denoiser {
        kind: DenoiserKind::External { client },
        alpha: None,
        sigma_f,
        fix: FixSet::Unknown,
    })
}

/// External-protocol denoiser over caller-supplied streams (tests, pipes).
pub fn external_denoiser_from_streams(
    reader: Box<dyn Read + Send>,
    writer: Box<dyn Write + Send>,
    sigma_f: f64,
) -> Denoiser {
    Denoiser {
        kind: DenoiserKind::External {
            client: ExternalClient::from_streams(reader, writer),
        },
        alpha: None,
        sigma_f,
        fix: FixSet::Unknown,
    }
}

/// T_w = w T + (1 - w) Id. When T advertises alpha, w must lie in
/// (0, 1 - alpha); the relaxed operator advertises 1 - (1 - alpha) / w and
/// keeps the same fixed-point set.
pub fn relax(denoiser: Denoiser, w: f64) -> Result<Denoiser, DenoiseError> {
    let upper = match denoiser.alpha {
        Some(alpha) => 1.0 - alpha,
        None => f64::INFINITY,
    };
    if !(w > 0.0 && w < upper) {
        return Err(DenoiseError::BadWeight { w, upper });
    }
    let alpha = denoiser.alpha.map(|a| 1.0 - (1.0 - a) / w);
    let sigma_f = denoiser.sigma_f;
    let fix = denoiser.fix.clone();
    Ok(Denoiser {
        kind: DenoiserKind::Relaxed {
            inner: Box::new(denoiser),
            w,
        },
        alpha,
        sigma_f,
        fix,
    })
}

impl Denoiser {
    /// Shape the denoiser accepts, when fixed at construction.
    pub fn expected_shape(&self) -> Option<Shape> {
        match &self.kind {
            DenoiserKind::Zero { shape }
            | DenoiserKind::Shrink { shape, .. }
            | DenoiserKind::Lowpass { shape, .. }
            | DenoiserKind::Linear { shape, .. } => Some(*shape),
            DenoiserKind::Subspace { basis }
            | DenoiserKind::SoftThreshold { basis, .. }
            | DenoiserKind::Reflection { basis } => Some(basis[0].shape()),
            DenoiserKind::External { .. } => None,
            DenoiserKind::Relaxed { inner, .. } => inner.expected_shape(),
        }
    }

    pub fn alpha(&self) -> Option<f64> {
        self.alpha
    }

    /// Overrides the advertised demicontraction constant (used when an
    /// external estimate is trusted for an external denoiser).
    pub fn advertise_alpha(&mut self, alpha: Option<f64>) {
        self.alpha = alpha;
    }

    pub fn sigma_f(&self) -> f64 {
        self.sigma_f
    }

    pub fn fix_set(&self) -> &FixSet {
        &self.fix
    }

    /// Deep copy for every kind except external clients (which own a live
    /// peer process and cannot be duplicated meaningfully).
    pub fn try_clone(&self) -> Option<Denoiser> {
        let kind = match &self.kind {
            DenoiserKind::Zero { shape } => DenoiserKind::Zero { shape: *shape },
            DenoiserKind::Shrink { factor, shape } => DenoiserKind::Shrink {
                factor: *factor,
                shape: *shape,
            },
            DenoiserKind::Subspace { basis } => DenoiserKind::Subspace {
                basis: basis.clone(),
            },
            DenoiserKind::Lowpass { shape, keep } => DenoiserKind::Lowpass {
                shape: *shape,
                keep: keep.clone(),
            },
            DenoiserKind::Linear { shape, matrix } => DenoiserKind::Linear {
                shape: *shape,
                matrix: matrix.clone(),
            },
            DenoiserKind::SoftThreshold { basis, theta } => DenoiserKind::SoftThreshold {
                basis: basis.clone(),
                theta: *theta,
            },
            DenoiserKind::Reflection { basis } => DenoiserKind::Reflection {
                basis: basis.clone(),
            },
            DenoiserKind::External { .. } => return None,
            DenoiserKind::Relaxed { inner, w } => DenoiserKind::Relaxed {
                inner: Box::new(inner.try_clone()?),
                w: *w,
            },
        };
        Some(Denoiser {
            kind,
            alpha: self.alpha,
            sigma_f: self.sigma_f,
            fix: self.fix.clone(),
        })
    }

    pub fn denoise(&self, x: &Signal) -> Result<Signal, DenoiseError> {
        if let Some(expected) = self.expected_shape() {
            if x.shape() != expected {
                return Err(DenoiseError::ShapeUnsupported {
                    expected,
                    got: x.shape(),
                });
            }
        }
        Ok(match &self.kind {
            DenoiserKind::Zero { .. } => Signal::zeros_like(x),
            DenoiserKind::Shrink { factor, .. } => x.scale(*factor),
            DenoiserKind::Subspace { basis } => project_span(basis, x),
            DenoiserKind::Lowpass { shape, keep } => lowpass_apply(*shape, keep, x),
            DenoiserKind::Linear { shape, matrix } => {
                let n = shape.len();
                let data = x.data();
                let out: Vec<f64> = (0..n)
                    .map(|r| {
                        matrix[r * n..(r + 1) * n]
                            .iter()
                            .zip(data.iter())
                            .map(|(&m, &v)| m * v)
                            .sum()
                    })
                    .collect();
                Signal::new(*shape, x.domain(), out).expect("square matrix keeps shape")
            }
            DenoiserKind::SoftThreshold { basis, theta } => {
                let mut out = x.clone();
                for b in basis {
                    let c = inner(x, b).expect("basis shape checked");
                    let shrunk = c.signum() * (c.abs() - theta).max(0.0);
                    out = out.axpy(shrunk - c, b);
                }
                out
            }
            DenoiserKind::Reflection { basis } => {
                project_span(basis, x).scale(2.0).axpy(-1.0, x)
            }
            DenoiserKind::External { client } => client.request(x, self.sigma_f)?,
            DenoiserKind::Relaxed { inner, w } => {
                let t = inner.denoise(x)?;
                t.scale(*w).axpy(1.0 - w, x)
            }
        })
    }

    /// Exact projection onto Fix(T), when an oracle exists.
    pub fn project_fix(&self, x: &Signal) -> Result<Signal, DenoiseError> {
        // Fix(T_w) = Fix(T), but the relaxed map itself is no projector.
        if let DenoiserKind::Relaxed { inner, .. } = &self.kind {
            return inner.project_fix(x);
        }
        match &self.fix {
            FixSet::SelfProjector => self.denoise(x),
            FixSet::Span(basis) => Ok(project_span(basis, x)),
            FixSet::Complement(basis) => Ok(x.sub(&project_span(basis, x))),
            FixSet::All => Ok(x.clone()),
            FixSet::Unknown => Err(DenoiseError::NoFixOracle),
        }
    }

    /// Seeded point of Fix(T): a Gaussian draw pushed through the oracle.
    pub fn sample_fix(&self, shape: Shape, seed: u64) -> Result<Signal, DenoiseError> {
        self.project_fix(&Signal::gaussian(shape, seed))
    }
}

fn lowpass_apply(shape: Shape, keep: &[bool], x: &Signal) -> Signal {
    let (rows, cols, ch) = (shape.rows, shape.cols, shape.channels);
    let data = x.data();
    let mut out = vec![0.0; shape.len()];
    let scale = 1.0 / (rows * cols) as f64;
    for chan in 0..ch {
        let mut plane: Vec<Complex<f64>> = (0..rows * cols)
            .map(|i| Complex::new(data[i * ch + chan], 0.0))
            .collect();
        fft2(&mut plane, rows, cols, false);
        for (v, &k) in plane.iter_mut().zip(keep.iter()) {
            if !k {
                *v = Complex::new(0.0, 0.0);
            }
        }
        fft2(&mut plane, rows, cols, true);
        for (i, v) in plane.iter().enumerate() {
            out[i * ch + chan] = v.re * scale;
        }
    }
    Signal::new(shape, x.domain(), out).expect("shape preserved")
}

/// Result of the demicontraction estimator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlphaEstimate {
    pub alpha_hat: f64,
    pub pairs_used: usize,
    pub pairs_skipped: usize,
}

/// Worst-case (or quantile) estimate of the demicontraction constant over
/// sampled (x, y in Fix(T)) pairs:
///
///   ratio = (||T(x) - y||^2 - ||x - y||^2) / ||T(x) - x||^2
///
/// Pairs where T acts as the identity on x (residual below
/// 1e-12 * (1 + ||x||)) are skipped and counted; if every pair is skipped
/// the distinguished identity-on-samples error is returned.
pub fn estimate_alpha(
    denoiser: &Denoiser,
    samples: &[Signal],
    pairs: usize,
    seed: u64,
    quantile: Option<f64>,
) -> Result<AlphaEstimate, DenoiseError> {
    if samples.is_empty() || pairs == 0 {
        return Err(DenoiseError::EmptySample);
    }
    let fixed = |i: usize, shape: Shape| denoiser.sample_fix(shape, derive_seed(seed, i as u64));
    estimate_alpha_impl(denoiser, samples, fixed, pairs, quantile)
}

/// Like [`estimate_alpha`] but pairs against caller-supplied fixed points
/// (for denoisers without a fixed-point oracle, e.g. external ones whose
/// fixed points are approximated by clean data).
pub fn estimate_alpha_against(
    denoiser: &Denoiser,
    samples: &[Signal],
    fixed_points: &[Signal],
    pairs: usize,
    quantile: Option<f64>,
) -> Result<AlphaEstimate, DenoiseError> {
    if samples.is_empty() || fixed_points.is_empty() || pairs == 0 {
        return Err(DenoiseError::EmptySample);
    }
    let fixed = |i: usize, _shape: Shape| Ok(fixed_points[i % fixed_points.len()].clone());
    estimate_alpha_impl(denoiser, samples, fixed, pairs, quantile)
}

fn estimate_alpha_impl(
    denoiser: &Denoiser,
    samples: &[Signal],
    fixed: impl Fn(usize, Shape) -> Result<Signal, DenoiseError>,
    pairs: usize,
    quantile: Option<f64>,
) -> Result<AlphaEstimate, DenoiseError> {
    let mut ratios = Vec::with_capacity(pairs);
    let mut skipped = 0usize;
    for i in 0..pairs {
        let x = &samples[i % samples.len()];
        let y = fixed(i, x.shape())?;
        let tx = denoiser.denoise(x)?;
        let residual = norm2(&tx.sub(x));
        if residual < 1e-12 * (1.0 + norm2(x)) {
            skipped += 1;
            continue;
        }
        let num = norm2(&tx.sub(&y)).powi(2) - norm2(&x.sub(&y)).powi(2);
        ratios.push(num / (residual * residual));
    }
    if ratios.is_empty() {
        return Err(DenoiseError::IdentityOnSamples);
    }
    ratios.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let alpha_hat = match quantile {
        None => *ratios.last().unwrap(),
        Some(q) => {
            let q = q.clamp(0.0, 1.0);
            let idx = ((q * ratios.len() as f64).ceil() as usize).clamp(1, ratios.len()) - 1;
            ratios[idx]
        }
    };
    Ok(AlphaEstimate {
        alpha_hat,
        pairs_used: ratios.len(),
        pairs_skipped: skipped,
    })
}

/// RED value g(x) = 1/2 <x, x - T(x)>; zero exactly on Fix(T) when T is
/// demicontractive with 0 in its fixed set.
pub fn red_value(denoiser: &Denoiser, x: &Signal) -> Result<f64, DenoiseError> {
    let tx = denoiser.denoise(x)?;
    Ok(0.5 * inner(x, &x.sub(&tx)).expect("same shape"))
}

// ---------------------------------------------------------------------
// External denoiser wire protocol (DNZ1 request / DNR1 response).
// One request per response; pipelining is forbidden.
// ---------------------------------------------------------------------

const REQUEST_MAGIC: &[u8; 4] = b"DNZ1";
const RESPONSE_MAGIC: &[u8; 4] = b"DNR1";

struct PeerIo {
    reader: Box<dyn Read + Send>,
    writer: Box<dyn Write + Send>,
    child: Option<Child>,
}

/// Client side of the protocol. Requests are serialized by a mutex; one
/// client owns one peer.
pub struct ExternalClient {
    io: Mutex<PeerIo>,
}

impl std::fmt::Debug for ExternalClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("ExternalClient")
    }
}

impl ExternalClient {
    pub fn spawn(program: &str, args: &[String]) -> Result<Self, DenoiseError> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| DenoiseError::Transport(format!("failed to spawn {program}: {e}")))?;
        let stdin = child
            .stdin
            .take()
            .ok_or_else(|| DenoiseError::Transport("child stdin unavailable".into()))?;
        let stdout = child
            .stdout
            .take()
            .ok_or_else(|| DenoiseError::Transport("child stdout unavailable".into()))?;
        Ok(ExternalClient {
            io: Mutex::new(PeerIo {
                reader: Box::new(stdout),
                writer: Box::new(stdin),
                child: Some(child),
            }),
        })
    }

    pub fn from_streams(reader: Box<dyn Read + Send>, writer: Box<dyn Write + Send>) -> Self {
        ExternalClient {
            io: Mutex::new(PeerIo {
                reader,
                writer,
                child: None,
            }),
        }
    }

    fn request(&self, x: &Signal, sigma_f: f64) -> Result<Signal, DenoiseError> {
        let mut io = self.io.lock().expect("client mutex");
        let shape = x.shape();
        let transport = |what: &str| DenoiseError::Transport(what.to_string());

        let mut msg = Vec::with_capacity(4 + 16 + 4 * x.len());
        msg.extend_from_slice(REQUEST_MAGIC);
        msg.extend_from_slice(&(shape.rows as u32).to_le_bytes());
        msg.extend_from_slice(&(shape.cols as u32).to_le_bytes());
        msg.extend_from_slice(&(shape.channels as u32).to_le_bytes());
        msg.extend_from_slice(&(sigma_f as f32).to_le_bytes());
        for &v in x.data() {
            msg.extend_from_slice(&(v as f32).to_le_bytes());
        }
        io.writer
            .write_all(&msg)
            .and_then(|_| io.writer.flush())
            .map_err(|e| DenoiseError::Transport(format!("request write failed: {e}")))?;

        let mut magic = [0u8; 4];
        io.reader
            .read_exact(&mut magic)
            .map_err(|e| DenoiseError::Transport(format!("short read on response magic: {e}")))?;
        if &magic != RESPONSE_MAGIC {
            return Err(transport("bad response magic"));
        }
        let mut header = [0u8; 16];
        io.reader
            .read_exact(&mut header)
            .map_err(|e| DenoiseError::Transport(format!("short read on response header: {e}")))?;
        let rows = u32::from_le_bytes(header[0..4].try_into().unwrap()) as usize;
        let cols = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
        let channels = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
        if rows != shape.rows || cols != shape.cols || channels != shape.channels {
            return Err(transport("response shape does not match request"));
        }
        let mut payload = vec![0u8; 4 * shape.len()];
        io.reader
            .read_exact(&mut payload)
            .map_err(|e| DenoiseError::Transport(format!("short read on samples: {e}")))?;
        let data: Vec<f64> = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect();
        Signal::new(shape, x.domain(), data)
            .map_err(|e| DenoiseError::Transport(format!("unusable response payload: {e}")))
    }
}

impl Drop for PeerIo {
    fn drop(&mut self) {
        if let Some(child) = &mut self.child {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

/// Reference peer behaviors shipped with the toolkit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MockBehavior {
    Identity,
    /// Multiplies every sample by 0.5.
    Half,
}

/// Serves the peer side of the protocol until EOF on the request stream.
/// This is the reference implementation behind the `mock-denoiser` CLI
/// subcommand; tests drive it over in-memory pipes.
pub fn serve_mock(
    behavior: MockBehavior,
    mut reader: impl Read,
    mut writer: impl Write,
) -> std::io::Result<()> {
    loop {
        let mut magic = [0u8; 4];
        match reader.read_exact(&mut magic) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => return Ok(()),
            Err(e) => return Err(e),
        }
        if &magic != REQUEST_MAGIC {
            return Err(std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                "bad request magic",
            ));
        }
        let mut header = [0u8; 16];
        reader.read_exact(&mut header)?;
        let rows = u32::from_le_bytes(header[0..4].try_into().unwrap()) as usize;
        let cols = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
        let channels = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
        let mut payload = vec![0u8; 4 * rows * cols * channels];
        reader.read_exact(&mut payload)?;

        let mut out = Vec::with_capacity(4 + 16 + payload.len());
        out.extend_from_slice(RESPONSE_MAGIC);
        out.extend_from_slice(&header);
        match behavior {
            MockBehavior::Identity => out.extend_from_slice(&payload),
            MockBehavior::Half => {
                for chunk in payload.chunks_exact(4) {
                    let v = f32::from_le_bytes(chunk.try_into().unwrap());
                    out.extend_from_slice(&(0.5 * v).to_le_bytes());
                }
            }
        }
        writer.write_all(&out)?;
        writer.flush()?;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn diag_w() -> Denoiser {
        // W = diag(1, 0.5): Fix = span{e1}
        build_linear_denoiser(Shape::new(2, 1, 1), vec![1.0, 0.0, 0.0, 0.5]).unwrap()
    }

    fn span_11() -> Denoiser {
        build_subspace_denoiser(&[Signal::vector(&[1.0, 1.0])]).unwrap()
    }

    #[test]
    fn zero_denoiser_maps_to_zero() {
        let t = build_zero_denoiser(Shape::new(2, 1, 1));
        let out = t.denoise(&Signal::vector(&[3.0, -4.0])).unwrap();
        assert_eq!(out.data(), &[0.0, 0.0]);
    }

    #[test]
    fn shrink_half_example() {
        let t = build_shrink_denoiser(Shape::new(2, 1, 1), 0.5).unwrap();
        let out = t.denoise(&Signal::vector(&[2.0, 4.0])).unwrap();
        assert_eq!(out.data(), &[1.0, 2.0]);
        assert!((t.alpha().unwrap() + 3.0).abs() < 1e-12);
    }

    #[test]
    fn subspace_projection_example() {
        let t = span_11();
        let out = t.denoise(&Signal::vector(&[2.0, 0.0])).unwrap();
        assert!((out.data()[0] - 1.0).abs() < 1e-12);
        assert!((out.data()[1] - 1.0).abs() < 1e-12);
        // fixed points map to themselves
        let z = Signal::vector(&[3.0, 3.0]);
        let tz = t.denoise(&z).unwrap();
        assert!(norm2(&tz.sub(&z)) < 1e-12 * (1.0 + norm2(&z)));
    }

    #[test]
    fn linear_denoiser_example() {
        let t = diag_w();
        let out = t.denoise(&Signal::vector(&[3.0, 2.0])).unwrap();
        assert_eq!(out.data(), &[3.0, 1.0]);
        // Fix = span{e1}: the oracle projects onto it
        let p = t.project_fix(&Signal::vector(&[5.0, 7.0])).unwrap();
        assert!((p.data()[0] - 5.0).abs() < 1e-10);
        assert!(p.data()[1].abs() < 1e-10);
    }

    #[test]
    fn linear_denoiser_rejects_bad_spectrum() {
        let err = build_linear_denoiser(Shape::new(2, 1, 1), vec![1.5, 0.0, 0.0, 0.5]);
        assert!(matches!(err, Err(DenoiseError::SpectralCondition(_))));
        let err = build_linear_denoiser(Shape::new(2, 1, 1), vec![0.5, 0.3, 0.0, 0.5]);
        assert!(matches!(err, Err(DenoiseError::SpectralCondition(_))));
    }

    #[test]
    fn soft_threshold_example() {
        // canonical basis, theta = 1: (2, 0.5) -> (1, 0)
        let t = build_soft_threshold_denoiser(
            &[Signal::vector(&[1.0, 0.0]), Signal::vector(&[0.0, 1.0])],
            1.0,
        )
        .unwrap();
        let out = t.denoise(&Signal::vector(&[2.0, 0.5])).unwrap();
        assert!((out.data()[0] - 1.0).abs() < 1e-12);
        assert!(out.data()[1].abs() < 1e-12);
    }

    #[test]
    fn soft_threshold_complement_passes_through() {
        // threshold only along (1,0): the e2 component is untouched
        let t = build_soft_threshold_denoiser(&[Signal::vector(&[1.0, 0.0])], 0.5).unwrap();
        let out = t.denoise(&Signal::vector(&[0.2, 9.0])).unwrap();
        assert!(out.data()[0].abs() < 1e-12);
        assert!((out.data()[1] - 9.0).abs() < 1e-12);
        // fix oracle generates complement points
        let z = t.sample_fix(Shape::new(2, 1, 1), 3).unwrap();
        let tz = t.denoise(&z).unwrap();
        assert!(norm2(&tz.sub(&z)) <= 1e-10 * (1.0 + norm2(&z)));
    }

    #[test]
    fn lowpass_is_projection() {
        let shape = Shape::new(16, 16, 1);
        let t = build_lowpass_denoiser(shape, 0.5).unwrap();
        let x = Signal::gaussian(shape, 4);
        let once = t.denoise(&x).unwrap();
        let twice = t.denoise(&once).unwrap();
        assert!(norm2(&once.sub(&twice)) < 1e-10 * (1.0 + norm2(&once)));
        // projection shrinks
        assert!(norm2(&once) <= norm2(&x) * (1.0 + 1e-12));
    }

    #[test]
    fn relax_examples() {
        // w = 0.5 on T = 0: T_w(x) = 0.5 x
        let tw = relax(build_zero_denoiser(Shape::new(2, 1, 1)), 0.5).unwrap();
        let out = tw.denoise(&Signal::vector(&[2.0, -2.0])).unwrap();
        assert_eq!(out.data(), &[1.0, -1.0]);

        // alpha = -1 projection: w = 1.5 accepted, w = 2.5 rejected
        assert!(relax(span_11(), 1.5).is_ok());
        match relax(span_11(), 2.5) {
            Err(DenoiseError::BadWeight { w, upper }) => {
                assert_eq!(w, 2.5);
                assert_eq!(upper, 2.0);
            }
            other => panic!("expected BadWeight, got {other:?}"),
        }
    }

    #[test]
    fn relax_keeps_fixed_points() {
        for w in [0.3, 1.0, 1.9] {
            let tw = relax(span_11(), w).unwrap();
            for seed in 0..50 {
                let z = tw.sample_fix(Shape::new(2, 1, 1), seed).unwrap();
                let tz = tw.denoise(&z).unwrap();
                assert!(norm2(&tz.sub(&z)) <= 1e-12 * (1.0 + norm2(&z)));
            }
        }
    }

    #[test]
    fn relaxed_alpha_bookkeeping() {
        // w = 1 keeps alpha; general w gives 1 - (1 - alpha) / w
        let t = relax(span_11(), 1.0).unwrap();
        assert!((t.alpha().unwrap() + 1.0).abs() < 1e-12);
        let t = relax(span_11(), 1.5).unwrap();
        assert!((t.alpha().unwrap() - (1.0 - 2.0 / 1.5)).abs() < 1e-12);
    }

    #[test]
    fn spc_inequality_holds_with_advertised_alpha() {
        let shape = Shape::new(4, 1, 1);
        let denoisers: Vec<Denoiser> = vec![
            build_zero_denoiser(shape),
            build_shrink_denoiser(shape, 0.5).unwrap(),
            build_subspace_denoiser(&[
                Signal::gaussian(shape, 1),
                Signal::gaussian(shape, 2),
            ])
            .unwrap(),
            build_linear_denoiser(
                shape,
                vec![
                    1.0, 0.0, 0.0, 0.0, //
                    0.0, 0.7, 0.0, 0.0, //
                    0.0, 0.0, 0.3, 0.0, //
                    0.0, 0.0, 0.0, 0.0,
                ],
            )
            .unwrap(),
            build_soft_threshold_denoiser(&[Signal::gaussian(shape, 3)], 0.8).unwrap(),
            build_reflection_denoiser(&[Signal::gaussian(shape, 4)]).unwrap(),
        ];
        for t in &denoisers {
            let alpha = t.alpha().unwrap();
            for i in 0..1000u64 {
                let x = Signal::gaussian(shape, 10_000 + i).scale(2.0);
                let y = t.sample_fix(shape, 20_000 + i).unwrap();
                let tx = t.denoise(&x).unwrap();
                let lhs = norm2(&tx.sub(&y)).powi(2);
                let rhs = norm2(&x.sub(&y)).powi(2) + alpha * norm2(&tx.sub(&x)).powi(2);
                assert!(
                    lhs <= rhs + 1e-10 * (1.0 + rhs.abs()),
                    "SPC violated: {lhs} > {rhs} (alpha {alpha})"
                );
            }
        }
    }

    #[test]
    fn relaxed_operator_is_sqne() {
        // T_w of an alpha-demicontractive T is (1 - alpha - w)/w SQNE.
        let shape = Shape::new(3, 1, 1);
        let base = || build_subspace_denoiser(&[Signal::gaussian(shape, 7)]).unwrap();
        for w in [0.5, 1.0, 1.5] {
            let alpha = -1.0;
            let rho = (1.0 - alpha - w) / w;
            let tw = relax(base(), w).unwrap();
            for i in 0..200u64 {
                let x = Signal::gaussian(shape, 400 + i).scale(3.0);
                let z = tw.sample_fix(shape, 800 + i).unwrap();
                let twx = tw.denoise(&x).unwrap();
                let lhs = norm2(&twx.sub(&z)).powi(2);
                let rhs = norm2(&x.sub(&z)).powi(2) - rho * norm2(&twx.sub(&x)).powi(2);
                assert!(lhs <= rhs + 1e-10 * (1.0 + rhs.abs()), "{lhs} > {rhs} at w {w}");
            }
        }
    }

    #[test]
    fn estimate_alpha_zero_denoiser() {
        let shape = Shape::new(3, 1, 1);
        let t = build_zero_denoiser(shape);
        let samples: Vec<Signal> = (0..10).map(|s| Signal::gaussian(shape, s)).collect();
        let est = estimate_alpha(&t, &samples, 100, 5, None).unwrap();
        assert!((est.alpha_hat + 1.0).abs() < 1e-12, "{}", est.alpha_hat);
        assert_eq!(est.pairs_skipped, 0);
    }

    #[test]
    fn estimate_alpha_projection_and_reflection() {
        let shape = Shape::new(4, 1, 1);
        let samples: Vec<Signal> = (0..20).map(|s| Signal::gaussian(shape, 50 + s)).collect();

        let proj = build_subspace_denoiser(&[Signal::gaussian(shape, 1), Signal::gaussian(shape, 2)])
            .unwrap();
        let est = estimate_alpha(&proj, &samples, 500, 7, None).unwrap();
        assert!(est.alpha_hat <= -1.0 + 1e-10, "{}", est.alpha_hat);
        assert!((est.alpha_hat + 1.0).abs() < 1e-8);

        let refl = build_reflection_denoiser(&[Signal::gaussian(shape, 1)]).unwrap();
        let est = estimate_alpha(&refl, &samples, 500, 7, None).unwrap();
        assert!(est.alpha_hat.abs() < 1e-10, "{}", est.alpha_hat);
    }

    #[test]
    fn estimate_alpha_identity_on_samples() {
        let shape = Shape::new(3, 1, 1);
        let t = build_subspace_denoiser(&[
            Signal::vector(&[1.0, 0.0, 0.0]),
            Signal::vector(&[0.0, 1.0, 0.0]),
            Signal::vector(&[0.0, 0.0, 1.0]),
        ])
        .unwrap();
        // projection onto the whole space: T = Id on every sample
        let samples = vec![Signal::gaussian(shape, 1)];
        match estimate_alpha(&t, &samples, 10, 3, None) {
            Err(DenoiseError::IdentityOnSamples) => {}
            other => panic!("expected IdentityOnSamples, got {other:?}"),
        }
    }

    #[test]
    fn estimate_alpha_quantile_option() {
        let shape = Shape::new(4, 1, 1);
        let t = build_shrink_denoiser(shape, 0.5).unwrap();
        let samples: Vec<Signal> = (0..10).map(|s| Signal::gaussian(shape, s)).collect();
        let max = estimate_alpha(&t, &samples, 200, 1, None).unwrap();
        let q50 = estimate_alpha(&t, &samples, 200, 1, Some(0.5)).unwrap();
        assert!(q50.alpha_hat <= max.alpha_hat + 1e-12);
    }

    #[test]
    fn red_value_examples() {
        let shape = Shape::new(2, 1, 1);
        // T = 0: g = 1/2 ||x||^2
        let zero = build_zero_denoiser(shape);
        let x = Signal::vector(&[3.0, 4.0]);
        assert!((red_value(&zero, &x).unwrap() - 12.5).abs() < 1e-12);

        // T = 0.5 Id, x = (2, 0): g = 1/2 <(2,0), (1,0)> = 1
        let half = build_shrink_denoiser(shape, 0.5).unwrap();
        let x = Signal::vector(&[2.0, 0.0]);
        assert!((red_value(&half, &x).unwrap() - 1.0).abs() < 1e-12);

        // x in Fix(T) -> 0
        let proj = span_11();
        let z = Signal::vector(&[2.0, 2.0]);
        assert!(red_value(&proj, &z).unwrap().abs() < 1e-12);
    }

    #[test]
    fn red_value_lower_bound() {
        // <x, x - T(x)> >= ((1 - alpha)/2) ||T(x) - x||^2 when 0 in Fix(T)
        let shape = Shape::new(4, 1, 1);
        let denoisers = vec![
            build_zero_denoiser(shape),
            build_shrink_denoiser(shape, 0.3).unwrap(),
            build_subspace_denoiser(&[Signal::gaussian(shape, 1)]).unwrap(),
            build_reflection_denoiser(&[Signal::gaussian(shape, 2)]).unwrap(),
        ];
        for t in &denoisers {
            let alpha = t.alpha().unwrap();
            for i in 0..200u64 {
                let x = Signal::gaussian(shape, 3000 + i).scale(2.0);
                let tx = t.denoise(&x).unwrap();
                let lhs = inner(&x, &x.sub(&tx)).unwrap();
                let rhs = 0.5 * (1.0 - alpha) * norm2(&tx.sub(&x)).powi(2);
                assert!(lhs >= rhs - 1e-10 * (1.0 + lhs.abs()), "{lhs} < {rhs}");
            }
        }
    }

    // -- protocol ------------------------------------------------------

    /// In-memory byte pipe so client and mock peer can run in one process.
    struct PipeReader {
        rx: std::sync::mpsc::Receiver<Vec<u8>>,
        buf: Vec<u8>,
        pos: usize,
    }

    impl Read for PipeReader {
        fn read(&mut self, out: &mut [u8]) -> std::io::Result<usize> {
            while self.pos >= self.buf.len() {
                match self.rx.recv() {
                    Ok(chunk) => {
                        self.buf = chunk;
                        self.pos = 0;
                    }
                    Err(_) => return Ok(0),
                }
            }
            let n = (self.buf.len() - self.pos).min(out.len());
            out[..n].copy_from_slice(&self.buf[self.pos..self.pos + n]);
            self.pos += n;
            Ok(n)
        }
    }

    struct PipeWriter {
        tx: std::sync::mpsc::Sender<Vec<u8>>,
    }

    impl Write for PipeWriter {
        fn write(&mut self, data: &[u8]) -> std::io::Result<usize> {
            let _ = self.tx.send(data.to_vec());
            Ok(data.len())
        }
        fn flush(&mut self) -> std::io::Result<()> {
            Ok(())
        }
    }

    fn pipe() -> (PipeWriter, PipeReader) {
        let (tx, rx) = std::sync::mpsc::channel();
        (
            PipeWriter { tx },
            PipeReader {
                rx,
                buf: Vec::new(),
                pos: 0,
            },
        )
    }

    fn spawn_mock(behavior: MockBehavior) -> Denoiser {
        let (to_peer_w, to_peer_r) = pipe();
        let (to_client_w, to_client_r) = pipe();
        std::thread::spawn(move || {
            let _ = serve_mock(behavior, to_peer_r, to_client_w);
        });
        external_denoiser_from_streams(Box::new(to_client_r), Box::new(to_peer_w), 2.5)
    }

    /// A signal whose samples survive the f32 narrowing bit-exactly.
    fn f32_grade_signal(shape: Shape, seed: u64) -> Signal {
        let mut rng = Rng::new(seed);
        let data = (0..shape.len())
            .map(|_| (rng.next_gaussian() as f32) as f64)
            .collect();
        Signal::new(shape, Domain::Real, data).unwrap()
    }

    #[test]
    fn mock_identity_roundtrip() {
        let t = spawn_mock(MockBehavior::Identity);
        let x = f32_grade_signal(Shape::new(3, 4, 1), 9);
        let y = t.denoise(&x).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn mock_half_roundtrip() {
        let t = spawn_mock(MockBehavior::Half);
        let x = f32_grade_signal(Shape::new(2, 2, 2), 11);
        let y = t.denoise(&x).unwrap();
        for (a, b) in x.data().iter().zip(y.data().iter()) {
            assert_eq!(*b, ((*a as f32) * 0.5) as f64);
        }
    }

    #[test]
    fn malformed_magic_is_transport_error() {
        let (to_peer_w, mut to_peer_r) = pipe();
        let (mut to_client_w, to_client_r) = pipe();
        std::thread::spawn(move || {
            // read the full request, then answer with a wrong magic
            let mut buf = [0u8; 4 + 16 + 4];
            let _ = to_peer_r.read_exact(&mut buf);
            let _ = to_client_w.write_all(b"XXXX");
            let _ = to_client_w.flush();
        });
        let t = external_denoiser_from_streams(Box::new(to_client_r), Box::new(to_peer_w), 1.0);
        match t.denoise(&Signal::vector(&[1.0])) {
            Err(DenoiseError::Transport(msg)) => assert!(msg.contains("magic"), "{msg}"),
            other => panic!("expected transport error, got {other:?}"),
        }
    }

    #[test]
    fn truncated_response_is_transport_error() {
        let (to_peer_w, mut to_peer_r) = pipe();
        let (mut to_client_w, to_client_r) = pipe();
        std::thread::spawn(move || {
            let mut buf = [0u8; 4 + 16 + 8];
            let _ = to_peer_r.read_exact(&mut buf);
            // valid magic and header, then hang up mid-payload
            let _ = to_client_w.write_all(b"DNR1");
            let _ = to_client_w.write_all(&buf[4..20]);
            let _ = to_client_w.write_all(&[0u8; 3]);
        });
        let t = external_denoiser_from_streams(Box::new(to_client_r), Box::new(to_peer_w), 1.0);
        match t.denoise(&Signal::vector(&[1.0, 2.0])) {
            Err(DenoiseError::Transport(msg)) => assert!(msg.contains("short read"), "{msg}"),
            other => panic!("expected transport error, got {other:?}"),
        }
    }

    #[test]
    fn mismatched_response_shape_is_transport_error() {
        let (to_peer_w, mut to_peer_r) = pipe();
        let (mut to_client_w, to_client_r) = pipe();
        std::thread::spawn(move || {
            let mut buf = [0u8; 4 + 16 + 8];
            let _ = to_peer_r.read_exact(&mut buf);
            let mut resp = Vec::new();
            resp.extend_from_slice(b"DNR1");
            resp.extend_from_slice(&5u32.to_le_bytes()); // wrong rows
            resp.extend_from_slice(&buf[8..20]);
            resp.extend_from_slice(&[0u8; 8]);
            let _ = to_client_w.write_all(&resp);
        });
        let t = external_denoiser_from_streams(Box::new(to_client_r), Box::new(to_peer_w), 1.0);
        match t.denoise(&Signal::vector(&[1.0, 2.0])) {
            Err(DenoiseError::Transport(msg)) => assert!(msg.contains("shape"), "{msg}"),
            other => panic!("expected transport error, got {other:?}"),
        }
    }
}
