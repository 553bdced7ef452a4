//! The PnP-PLO iteration and its gradient-based baselines, with trace
//! capture, a brute-force feasibility oracle for small instances, and the
//! checks that execute the convergence guarantees as assertions.

use crate::denoisers::{Denoiser, DenoiseError};
use crate::landweber::{residual_geometry, resolved_norm, LandweberError, StepRule};
use crate::operators::LinearOperator;
use crate::projections::ConvexSet;
use crate::signal::{norm2, psnr, Signal};
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SolveError {
    #[error(transparent)]
    Landweber(#[from] LandweberError),
    #[error(transparent)]
    Denoise(#[from] DenoiseError),
    #[error(transparent)]
    Operator(#[from] crate::operators::OperatorError),
    #[error(transparent)]
    Projection(#[from] crate::projections::ProjectionError),
    #[error("weight {w} outside the guaranteed interval (0, {upper}); rerun with the override flag to proceed anyway")]
    WOutsideGuarantee { w: f64, upper: f64 },
    #[error("denoiser advertises no demicontraction constant; an explicit override is required")]
    NoAdvertisedAlpha,
    #[error("invalid configuration: {0}")]
    BadConfig(String),
    #[error("feasibility oracle declared the instance infeasible (no certified point found)")]
    Infeasible,
    #[error("oracle needs an exact fixed-point projector (built-in denoisers only)")]
    NoFixOracle,
}

/// The split feasibility instance: find x in Fix(T) with Ax in Q.
#[derive(Debug)]
pub struct SCFPProblem {
    pub a: LinearOperator,
    pub q: ConvexSet,
    pub denoiser: Denoiser,
    pub ground_truth: Option<Signal>,
}

/// Borrowed view of a problem; lets callers that own the pieces
/// separately (e.g. language bindings) drive the solvers without moving
/// them into an [`SCFPProblem`].
#[derive(Clone, Copy)]
pub struct ProblemView<'a> {
    pub a: &'a LinearOperator,
    pub q: &'a ConvexSet,
    pub denoiser: &'a Denoiser,
    pub ground_truth: Option<&'a Signal>,
}

impl SCFPProblem {
    pub fn view(&self) -> ProblemView<'_> {
        ProblemView {
            a: &self.a,
            q: &self.q,
            denoiser: &self.denoiser,
            ground_truth: self.ground_truth.as_ref(),
        }
    }
}

/// Relaxation schedule for the lambda_k in [floor, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LambdaSchedule {
    Constant(f64),
    /// lambda_k = lambda0 * (k+1)^(-exponent), clamped into [floor, 1].
    Diminishing { lambda0: f64, exponent: f64 },
}

impl LambdaSchedule {
    fn at(&self, k: usize, floor: f64, clamp: bool) -> f64 {
        let raw = match *self {
            LambdaSchedule::Constant(v) => v,
            LambdaSchedule::Diminishing { lambda0, exponent } => {
                lambda0 * ((k + 1) as f64).powf(-exponent)
            }
        };
        if clamp {
            raw.clamp(floor, 1.0)
        } else {
            raw
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveConfig {
    pub max_iters: usize,
    pub lambda: LambdaSchedule,
    /// Floor of the admissible relaxation interval [floor, 1].
    pub relax_floor: f64,
    pub w: f64,
    pub step_rule: StepRule,
    /// Early-stop threshold on ||x^{k+1} - x^k||, relative to 1 + ||x^0||.
    pub stop_tol: f64,
    pub trace_every: usize,
    pub record_iterates: bool,
    /// Permits w outside the guaranteed interval, lambda below the floor,
    /// and denoisers without an advertised alpha. Convergence checks are
    /// meaningless for such runs.
    pub allow_unguarded: bool,
    pub psnr_peak: f64,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig {
            max_iters: 1000,
            lambda: LambdaSchedule::Constant(1.0),
            relax_floor: 1e-3,
            w: 1.0,
            step_rule: StepRule::TauExtrapolated,
            stop_tol: 1e-9,
            trace_every: 1,
            record_iterates: false,
            allow_unguarded: false,
            psnr_peak: 255.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub k: usize,
    /// f(x^k) = 1/2 ||A x^k - P_Q(A x^k)||^2
    pub f: f64,
    /// ||x^{k+1} - x^k||
    pub residual: f64,
    /// delta, t, or mu actually used at step k
    pub step: f64,
    /// distance of A x^k to Q
    pub dist_q: f64,
    /// ||T(x^k) - x^k||
    pub denoiser_residual: f64,
    /// ||grad f(x^k)||
    pub grad_norm: f64,
    pub psnr: Option<f64>,
    /// Measured wall time; excluded from determinism comparisons and
    /// exported as zero so files stay byte-reproducible.
    pub wall_ms: f64,
}

#[derive(Debug, Clone, Default)]
pub struct SolveTrace {
    pub records: Vec<TraceRecord>,
    /// x^0, x^1, ... when iterate recording is enabled.
    pub iterates: Vec<Signal>,
}

impl SolveTrace {
    /// Equality of everything except wall time.
    pub fn numeric_eq(&self, other: &SolveTrace) -> bool {
        self.records.len() == other.records.len()
            && self.iterates == other.iterates
            && self.records.iter().zip(other.records.iter()).all(|(a, b)| {
                a.k == b.k
                    && a.f == b.f
                    && a.residual == b.residual
                    && a.step == b.step
                    && a.dist_q == b.dist_q
                    && a.denoiser_residual == b.denoiser_residual
                    && a.grad_norm == b.grad_norm
                    && a.psnr == b.psnr
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Converged,
    MaxIters,
    /// Step rule hit a residual orthogonal to range(A).
    InfeasibleDirection,
}

#[derive(Debug)]
pub struct SolveResult {
    pub x: Signal,
    pub trace: SolveTrace,
    pub status: SolveStatus,
    pub iters_run: usize,
    pub wall_ms: f64,
}

fn validate_w_plo(denoiser: &Denoiser, w: f64, allow_unguarded: bool) -> Result<(), SolveError> {
    match denoiser.alpha() {
        Some(alpha) => {
            let upper = 1.0 - alpha;
            if (w > 0.0 && w < upper) || (allow_unguarded && w > 0.0) {
                Ok(())
            } else {
                Err(SolveError::WOutsideGuarantee { w, upper })
            }
        }
        None => {
            if allow_unguarded && w > 0.0 {
                Ok(())
            } else {
                Err(SolveError::NoAdvertisedAlpha)
            }
        }
    }
}

struct TraceBuilder {
    records: Vec<TraceRecord>,
    iterates: Vec<Signal>,
    every: usize,
    record_iterates: bool,
    started: Instant,
}

impl TraceBuilder {
    fn new(every: usize, record_iterates: bool, x0: &Signal) -> Self {
        let mut iterates = Vec::new();
        if record_iterates {
            iterates.push(x0.clone());
        }
        TraceBuilder {
            records: Vec::new(),
            iterates,
            every: every.max(1),
            record_iterates,
            started: Instant::now(),
        }
    }

    fn want(&self, k: usize) -> bool {
        k.is_multiple_of(self.every)
    }

    #[allow(clippy::too_many_arguments)]
    fn push(
        &mut self,
        k: usize,
        f: f64,
        residual: f64,
        step: f64,
        dist_q: f64,
        denoiser_residual: f64,
        grad_norm: f64,
        psnr_value: Option<f64>,
    ) {
        self.records.push(TraceRecord {
            k,
            f,
            residual,
            step,
            dist_q,
            denoiser_residual,
            grad_norm,
            psnr: psnr_value,
            wall_ms: self.started.elapsed().as_secs_f64() * 1e3,
        });
    }

    fn push_iterate(&mut self, x: &Signal) {
        if self.record_iterates {
            self.iterates.push(x.clone());
        }
    }

    fn finish(self) -> SolveTrace {
        SolveTrace {
            records: self.records,
            iterates: self.iterates,
        }
    }
}

fn trace_psnr(ground_truth: Option<&Signal>, x: &Signal, peak: f64) -> Option<f64> {
    ground_truth.and_then(|gt| psnr(gt, x, peak).ok())
}

/// One x^{k+1} = w T(v) + (1-w) v application.
fn denoise_relaxed(
    denoiser: &Denoiser,
    v: &Signal,
    w: f64,
) -> Result<Signal, DenoiseError> {
    let t = denoiser.denoise(v)?;
    Ok(t.scale(w).axpy(1.0 - w, v))
}

/// The PnP-PLO iteration:
///
///   v^k     = (1 - lambda_k) x^k + lambda_k L_delta{P_Q} x^k
///   x^{k+1} = w T(v^k) + (1 - w) v^k
///
/// With the tau rule the Landweber extrapolation is evaluated in its
/// norm-free form. The Polyak rule runs the tau-replaced configuration
/// (delta = 2 ||A||^2 t_k with lambda = 1/2 enforced), which collapses to
/// v^k = x^k - t_k grad f(x^k).
pub fn pnp_plo(
    problem: &SCFPProblem,
    config: &SolveConfig,
    x0: &Signal,
) -> Result<SolveResult, SolveError> {
    pnp_plo_view(problem.view(), config, x0)
}

pub fn pnp_plo_view(
    problem: ProblemView<'_>,
    config: &SolveConfig,
    x0: &Signal,
) -> Result<SolveResult, SolveError> {
    validate_w_plo(problem.denoiser, config.w, config.allow_unguarded)?;
    config.step_rule.validate()?;
    if config.max_iters == 0 {
        return Err(SolveError::BadConfig("max_iters must be >= 1".into()));
    }
    if !(config.relax_floor > 0.0 && config.relax_floor < 1.0) {
        return Err(SolveError::BadConfig(
            "relaxation floor must lie in (0, 1)".into(),
        ));
    }
    if matches!(config.step_rule, StepRule::Diminishing { .. }) {
        return Err(SolveError::BadConfig(
            "diminishing steps belong to the gradient baselines; use tau, polyak, or constant"
                .into(),
        ));
    }
    if let StepRule::Constant(c) = config.step_rule {
        // the extrapolation function maps into [1, tau]
        if c < 1.0 {
            return Err(SolveError::BadConfig(format!(
                "constant extrapolation must be >= 1, got {c}"
            )));
        }
    }

    let started = Instant::now();
    let a_norm = resolved_norm(problem.a);
    let norm_sq = a_norm * a_norm;
    let stop_at = config.stop_tol * (1.0 + norm2(x0));
    let mut tracer = TraceBuilder::new(config.trace_every, config.record_iterates, x0);
    let mut x = x0.clone();
    let mut status = SolveStatus::MaxIters;
    let mut iters_run = 0usize;

    for k in 0..config.max_iters {
        let geom = residual_geometry(problem.a, problem.q, &x)?;
        let lambda_k = config
            .lambda
            .at(k, config.relax_floor, !config.allow_unguarded);

        // v^k and the recorded step value
        let (v, step_value) = match config.step_rule {
            StepRule::TauExtrapolated => {
                if geom.inside {
                    (x.clone(), 1.0)
                } else {
                    if geom.back_norm < 1e-14 * a_norm * geom.residual_norm {
                        status = SolveStatus::InfeasibleDirection;
                        break;
                    }
                    let mu = (geom.residual_norm * geom.residual_norm)
                        / (geom.back_norm * geom.back_norm);
                    let tau = (a_norm * geom.residual_norm / geom.back_norm).powi(2);
                    (x.axpy(lambda_k * mu, &geom.back), tau)
                }
            }
            StepRule::Constant(c) => {
                if geom.inside {
                    (x.axpy(lambda_k / norm_sq, &geom.back), 1.0)
                } else {
                    if geom.back_norm < 1e-14 * a_norm * geom.residual_norm {
                        status = SolveStatus::InfeasibleDirection;
                        break;
                    }
                    let tau = (a_norm * geom.residual_norm / geom.back_norm).powi(2);
                    let delta = c.min(tau);
                    (x.axpy(lambda_k * delta / norm_sq, &geom.back), delta)
                }
            }
            StepRule::Polyak => {
                if geom.inside {
                    (x.clone(), 1.0)
                } else {
                    if geom.back_norm < 1e-14 * a_norm * geom.residual_norm {
                        status = SolveStatus::InfeasibleDirection;
                        break;
                    }
                    let t = 0.5 * geom.residual_norm * geom.residual_norm
                        / (geom.back_norm * geom.back_norm);
                    (x.axpy(t, &geom.back), t)
                }
            }
            StepRule::Diminishing { .. } => unreachable!("rejected above"),
        };

        let x_next = denoise_relaxed(problem.denoiser, &v, config.w)?;
        let residual = norm2(&x_next.sub(&x));

        if tracer.want(k) {
            let denoiser_residual = norm2(&problem.denoiser.denoise(&x)?.sub(&x));
            let f = 0.5 * geom.residual_norm * geom.residual_norm;
            tracer.push(
                k,
                f,
                residual,
                step_value,
                geom.residual_norm,
                denoiser_residual,
                geom.back_norm,
                trace_psnr(problem.ground_truth, &x, config.psnr_peak),
            );
        }
        tracer.push_iterate(&x_next);
        x = x_next;
        iters_run = k + 1;
        if residual < stop_at {
            status = SolveStatus::Converged;
            break;
        }
    }

    Ok(SolveResult {
        x,
        trace: tracer.finish(),
        status,
        iters_run,
        wall_ms: started.elapsed().as_secs_f64() * 1e3,
    })
}

/// RED steepest descent: x^{k+1} = x^k - mu (grad f + lambda (x - T x)).
pub fn red_sd(
    problem: &SCFPProblem,
    config: &SolveConfig,
    x0: &Signal,
    mu: f64,
    lambda_reg: f64,
) -> Result<SolveResult, SolveError> {
    red_sd_view(problem.view(), config, x0, mu, lambda_reg)
}

pub fn red_sd_view(
    problem: ProblemView<'_>,
    config: &SolveConfig,
    x0: &Signal,
    mu: f64,
    lambda_reg: f64,
) -> Result<SolveResult, SolveError> {
    if mu < 0.0 {
        return Err(SolveError::BadConfig(format!(
            "mu must be nonnegative, got {mu}"
        )));
    }
    if lambda_reg < 0.0 {
        return Err(SolveError::BadConfig(format!(
            "lambda must be nonnegative, got {lambda_reg}"
        )));
    }
    let started = Instant::now();
    let stop_at = config.stop_tol * (1.0 + norm2(x0));
    let mut tracer = TraceBuilder::new(config.trace_every, config.record_iterates, x0);
    let mut x = x0.clone();
    let mut status = SolveStatus::MaxIters;
    let mut iters_run = 0usize;

    for k in 0..config.max_iters {
        let geom = residual_geometry(problem.a, problem.q, &x)?;
        let tx = problem.denoiser.denoise(&x)?;
        let denoiser_residual = norm2(&tx.sub(&x));
        // grad f = -back; x_next = x + mu*back - mu*lambda*(x - Tx)
        let x_next = x
            .axpy(mu, &geom.back)
            .axpy(-mu * lambda_reg, &x.sub(&tx));
        let residual = norm2(&x_next.sub(&x));
        if tracer.want(k) {
            tracer.push(
                k,
                0.5 * geom.residual_norm * geom.residual_norm,
                residual,
                mu,
                geom.residual_norm,
                denoiser_residual,
                geom.back_norm,
                trace_psnr(problem.ground_truth, &x, config.psnr_peak),
            );
        }
        tracer.push_iterate(&x_next);
        x = x_next;
        iters_run = k + 1;
        if residual < stop_at {
            status = SolveStatus::Converged;
            break;
        }
    }
    Ok(SolveResult {
        x,
        trace: tracer.finish(),
        status,
        iters_run,
        wall_ms: started.elapsed().as_secs_f64() * 1e3,
    })
}

/// RED-PRO hybrid steepest descent: x^{k+1} = T_w(x^k - mu_k grad f(x^k))
/// with a constant or diminishing mu_k. The guaranteed weight interval for
/// this baseline is (0, (1 - alpha)/2).
pub fn red_pro(
    problem: &SCFPProblem,
    config: &SolveConfig,
    x0: &Signal,
    mu_schedule: StepRule,
) -> Result<SolveResult, SolveError> {
    red_pro_view(problem.view(), config, x0, mu_schedule)
}

pub fn red_pro_view(
    problem: ProblemView<'_>,
    config: &SolveConfig,
    x0: &Signal,
    mu_schedule: StepRule,
) -> Result<SolveResult, SolveError> {
    mu_schedule.validate()?;
    let w = config.w;
    match problem.denoiser.alpha() {
        Some(alpha) => {
            let upper = (1.0 - alpha) / 2.0;
            if !(w > 0.0 && w < upper) && !config.allow_unguarded {
                return Err(SolveError::WOutsideGuarantee { w, upper });
            }
        }
        None => {
            if !config.allow_unguarded {
                return Err(SolveError::NoAdvertisedAlpha);
            }
        }
    }
    let mu_at = |k: usize| -> Result<f64, SolveError> {
        match mu_schedule {
            StepRule::Constant(v) => Ok(v),
            StepRule::Diminishing { .. } => Ok(mu_schedule.diminishing_at(k + 1).unwrap()),
            _ => Err(SolveError::BadConfig(
                "red_pro takes a constant or diminishing step schedule".into(),
            )),
        }
    };
    mu_at(0)?;

    let started = Instant::now();
    let stop_at = config.stop_tol * (1.0 + norm2(x0));
    let mut tracer = TraceBuilder::new(config.trace_every, config.record_iterates, x0);
    let mut x = x0.clone();
    let mut status = SolveStatus::MaxIters;
    let mut iters_run = 0usize;

    for k in 0..config.max_iters {
        let geom = residual_geometry(problem.a, problem.q, &x)?;
        let mu_k = mu_at(k)?;
        let u = x.axpy(mu_k, &geom.back);
        let x_next = denoise_relaxed(problem.denoiser, &u, w)?;
        let residual = norm2(&x_next.sub(&x));
        if tracer.want(k) {
            let denoiser_residual = norm2(&problem.denoiser.denoise(&x)?.sub(&x));
            tracer.push(
                k,
                0.5 * geom.residual_norm * geom.residual_norm,
                residual,
                mu_k,
                geom.residual_norm,
                denoiser_residual,
                geom.back_norm,
                trace_psnr(problem.ground_truth, &x, config.psnr_peak),
            );
        }
        tracer.push_iterate(&x_next);
        x = x_next;
        iters_run = k + 1;
        if residual < stop_at {
            status = SolveStatus::Converged;
            break;
        }
    }
    Ok(SolveResult {
        x,
        trace: tracer.finish(),
        status,
        iters_run,
        wall_ms: started.elapsed().as_secs_f64() * 1e3,
    })
}

/// PnP forward-backward splitting: x^{k+1} = T(x^k - s grad f(x^k)).
pub fn pnp_fbs(
    problem: &SCFPProblem,
    config: &SolveConfig,
    x0: &Signal,
    s: f64,
) -> Result<SolveResult, SolveError> {
    pnp_fbs_view(problem.view(), config, x0, s)
}

pub fn pnp_fbs_view(
    problem: ProblemView<'_>,
    config: &SolveConfig,
    x0: &Signal,
    s: f64,
) -> Result<SolveResult, SolveError> {
    if s < 0.0 {
        return Err(SolveError::BadConfig(format!(
            "step size must be nonnegative, got {s}"
        )));
    }
    let started = Instant::now();
    let stop_at = config.stop_tol * (1.0 + norm2(x0));
    let mut tracer = TraceBuilder::new(config.trace_every, config.record_iterates, x0);
    let mut x = x0.clone();
    let mut status = SolveStatus::MaxIters;
    let mut iters_run = 0usize;

    for k in 0..config.max_iters {
        let geom = residual_geometry(problem.a, problem.q, &x)?;
        let u = x.axpy(s, &geom.back);
        let x_next = problem.denoiser.denoise(&u)?;
        let residual = norm2(&x_next.sub(&x));
        if tracer.want(k) {
            let denoiser_residual = norm2(&problem.denoiser.denoise(&x)?.sub(&x));
            tracer.push(
                k,
                0.5 * geom.residual_norm * geom.residual_norm,
                residual,
                s,
                geom.residual_norm,
                denoiser_residual,
                geom.back_norm,
                trace_psnr(problem.ground_truth, &x, config.psnr_peak),
            );
        }
        tracer.push_iterate(&x_next);
        x = x_next;
        iters_run = k + 1;
        if residual < stop_at {
            status = SolveStatus::Converged;
            break;
        }
    }
    Ok(SolveResult {
        x,
        trace: tracer.finish(),
        status,
        iters_run,
        wall_ms: started.elapsed().as_secs_f64() * 1e3,
    })
}

/// Certified feasible point via exact alternating projections between
/// Fix(T) (the denoiser's exact projector) and the preimage of Q (a
/// high-accuracy Landweber inner solve). The returned point x satisfies
/// ||T(x) - x|| <= tol and dist(Ax, Q) <= tol; if the cycle stops moving
/// without reaching that, the instance is declared infeasible.
pub fn oracle_feasible_point(
    problem: &SCFPProblem,
    start: &Signal,
    tol: f64,
) -> Result<Signal, SolveError> {
    oracle_feasible_point_view(problem.view(), start, tol)
}

pub fn oracle_feasible_point_view(
    problem: ProblemView<'_>,
    start: &Signal,
    tol: f64,
) -> Result<Signal, SolveError> {
    if matches!(problem.denoiser.fix_set(), crate::denoisers::FixSet::Unknown) {
        return Err(SolveError::NoFixOracle);
    }
    let a_norm = resolved_norm(problem.a);
    let norm_sq = (a_norm * a_norm).max(1e-300);
    let inner_tol = tol * 1e-3;
    let move_tol = tol * 1e-2;
    let mut x = problem.denoiser.project_fix(start)?;

    for _outer in 0..10_000 {
        // inner: walk into the preimage of Q
        let mut u = x.clone();
        let mut last_dist = f64::INFINITY;
        for _inner in 0..20_000 {
            let geom = residual_geometry(problem.a, problem.q, &u)?;
            if geom.residual_norm <= inner_tol {
                break;
            }
            // stagnation guard: the preimage may be empty
            if last_dist - geom.residual_norm < 1e-15 * (1.0 + geom.residual_norm) {
                break;
            }
            last_dist = geom.residual_norm;
            u = u.axpy(1.0 / norm_sq, &geom.back);
        }
        let x_next = problem.denoiser.project_fix(&u)?;
        let moved = norm2(&x_next.sub(&x));
        x = x_next;
        if moved < move_tol {
            let fix_residual = norm2(&problem.denoiser.denoise(&x)?.sub(&x));
            let dist = {
                let geom = residual_geometry(problem.a, problem.q, &x)?;
                geom.residual_norm
            };
            if fix_residual <= tol && dist <= tol {
                return Ok(x);
            }
            return Err(SolveError::Infeasible);
        }
    }
    Err(SolveError::Infeasible)
}

/// Distance from a point to the feasible set, measured through the
/// alternating-projection oracle.
pub fn oracle_distance(
    problem: &SCFPProblem,
    point: &Signal,
    tol: f64,
) -> Result<f64, SolveError> {
    let feasible = oracle_feasible_point(problem, point, tol)?;
    Ok(norm2(&point.sub(&feasible)))
}

/// The quantified Fejer constant c = min{1, (1 - alpha - w)/w} / 2.
pub fn fejer_constant(alpha: f64, w: f64) -> f64 {
    0.5 * 1.0f64.min((1.0 - alpha - w) / w)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FejerReport {
    pub steps: usize,
    pub violations: usize,
    /// min over k of (rhs - lhs); negative means the inequality failed.
    pub worst_margin: f64,
    pub pass: bool,
}

/// Checks the per-step inequality
/// ||x^{k+1} - x*||^2 <= ||x^k - x*||^2 - c ||x^{k+1} - x^k||^2
/// over a recorded iterate sequence, with relative slack
/// 1e-9 (1 + ||x^0 - x*||^2).
pub fn check_fejer(iterates: &[Signal], reference: &Signal, c: f64) -> FejerReport {
    if iterates.len() < 2 {
        return FejerReport {
            steps: 0,
            violations: 0,
            worst_margin: 0.0,
            pass: true,
        };
    }
    let slack = 1e-9 * (1.0 + norm2(&iterates[0].sub(reference)).powi(2));
    let mut worst = f64::INFINITY;
    let mut violations = 0usize;
    let mut prev_sq = norm2(&iterates[0].sub(reference)).powi(2);
    for pair in iterates.windows(2) {
        let next_sq = norm2(&pair[1].sub(reference)).powi(2);
        let step_sq = norm2(&pair[1].sub(&pair[0])).powi(2);
        let margin = (prev_sq - c * step_sq) - next_sq;
        if margin < worst {
            worst = margin;
        }
        if margin < -slack {
            violations += 1;
        }
        prev_sq = next_sq;
    }
    FejerReport {
        steps: iterates.len() - 1,
        violations,
        worst_margin: worst,
        pass: violations == 0,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateBoundsReport {
    pub partial_sum_violations: usize,
    pub summability_ok: bool,
    /// Violations of the Polyak objective bound, when checked.
    pub polyak_violations: Option<usize>,
    pub pass: bool,
}

/// Executes the partial-sum inequality
/// (k+1) c min_{i<=k} ||x^{i+1}-x^i||^2 <= ||x^0 - x*||^2 at every
/// recorded k, the summability bound, and (for Polyak runs) the objective
/// rate f_best^k <= L_f d0 / sqrt(k+1) with L_f the largest observed
/// gradient norm. Requires a full per-iteration trace.
pub fn check_rate_bounds(
    trace: &SolveTrace,
    x0: &Signal,
    x_star: &Signal,
    c: f64,
    polyak: bool,
) -> RateBoundsReport {
    let d0_sq = norm2(&x0.sub(x_star)).powi(2);
    let slack = 1e-9 * (1.0 + d0_sq);
    let mut best_sq = f64::INFINITY;
    let mut sum_sq = 0.0;
    let mut partial_violations = 0usize;
    for rec in &trace.records {
        let r_sq = rec.residual * rec.residual;
        best_sq = best_sq.min(r_sq);
        sum_sq += r_sq;
        let lhs = (rec.k + 1) as f64 * c * best_sq;
        if lhs > d0_sq + slack {
            partial_violations += 1;
        }
    }
    let summability_ok = c * sum_sq <= d0_sq + slack;

    let polyak_violations = if polyak {
        let d0 = d0_sq.sqrt();
        let l_f = trace
            .records
            .iter()
            .fold(0.0f64, |m, r| m.max(r.grad_norm));
        let mut f_best = f64::INFINITY;
        let mut violations = 0usize;
        for rec in &trace.records {
            f_best = f_best.min(rec.f);
            let bound = l_f * d0 / ((rec.k + 1) as f64).sqrt();
            if f_best > bound + 1e-9 * (1.0 + bound) {
                violations += 1;
            }
        }
        Some(violations)
    } else {
        None
    };

    let pass =
        partial_violations == 0 && summability_ok && polyak_violations.unwrap_or(0) == 0;
    RateBoundsReport {
        partial_sum_violations: partial_violations,
        summability_ok,
        polyak_violations,
        pass,
    }
}

/// Empirical contraction factor fitted on the tail of a distance sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct RateReport {
    pub q_hat: f64,
    /// RMS residual of the least-squares fit in log space.
    pub fit_residual: f64,
    /// Window of indices used for the fit.
    pub window: (usize, usize),
    /// Set when the fit does not show contraction (q_hat >= 1).
    pub flagged_nonconvergent: bool,
}

/// Least-squares slope of log d(x^k, F) over the tail window; distances
/// at or below 1e-14 truncate the usable prefix.
pub fn fit_linear_rate(distances: &[f64], tail: usize) -> RateReport {
    let valid: Vec<f64> = distances
        .iter()
        .take_while(|&&d| d > 1e-14)
        .copied()
        .collect();
    if valid.len() < 2 {
        return RateReport {
            q_hat: 1.0,
            fit_residual: 0.0,
            window: (0, valid.len()),
            flagged_nonconvergent: true,
        };
    }
    let start = valid.len().saturating_sub(tail.max(2));
    let window = &valid[start..];
    let n = window.len() as f64;
    let logs: Vec<f64> = window.iter().map(|d| d.ln()).collect();
    let mean_k = (n - 1.0) / 2.0;
    let mean_y = logs.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, &y) in logs.iter().enumerate() {
        let dk = i as f64 - mean_k;
        num += dk * (y - mean_y);
        den += dk * dk;
    }
    let slope = if den > 0.0 { num / den } else { 0.0 };
    let intercept = mean_y - slope * mean_k;
    let mut rss = 0.0;
    for (i, &y) in logs.iter().enumerate() {
        let fit = intercept + slope * i as f64;
        rss += (y - fit) * (y - fit);
    }
    let q_hat = slope.exp();
    RateReport {
        q_hat,
        fit_residual: (rss / n).sqrt(),
        window: (start, valid.len()),
        flagged_nonconvergent: q_hat >= 1.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoisers::build_subspace_denoiser;
    use crate::operators::{build_dense_square, identity};
    use crate::projections::ConvexSet;
    use crate::signal::Shape;

    fn two_d_instance() -> SCFPProblem {
        // A = diag(1, 2), Q = ball((1, 2), 0.1), Fix(T) = span{(1, 1)}.
        // F contains t (1,1) for t near 1: ||(t, 2t) - (1, 2)|| = |t-1| sqrt(5).
        SCFPProblem {
            a: build_dense_square(2, vec![1.0, 0.0, 0.0, 2.0]).unwrap(),
            q: ConvexSet::l2_ball(Signal::vector(&[1.0, 2.0]), 0.1).unwrap(),
            denoiser: build_subspace_denoiser(&[Signal::vector(&[1.0, 1.0])]).unwrap(),
            ground_truth: None,
        }
    }

    fn guarded_config() -> SolveConfig {
        SolveConfig {
            max_iters: 5000,
            stop_tol: 1e-13,
            record_iterates: true,
            ..SolveConfig::default()
        }
    }

    #[test]
    fn fixed_start_stays_fixed() {
        let problem = two_d_instance();
        // x = (1, 1) is in Fix(T) and A x = (1, 2) is the ball center.
        let x0 = Signal::vector(&[1.0, 1.0]);
        let result = pnp_plo(&problem, &guarded_config(), &x0).unwrap();
        assert_eq!(result.status, SolveStatus::Converged);
        assert!(norm2(&result.x.sub(&x0)) < 1e-12);
        for pair in result.trace.iterates.windows(2) {
            assert!(norm2(&pair[1].sub(&pair[0])) < 1e-12);
        }
    }

    #[test]
    fn two_d_instance_converges_to_feasibility() {
        let problem = two_d_instance();
        let x0 = Signal::vector(&[4.0, -3.0]);
        let result = pnp_plo(&problem, &guarded_config(), &x0).unwrap();
        let fix_res = norm2(&problem.denoiser.denoise(&result.x).unwrap().sub(&result.x));
        assert!(fix_res <= 1e-6, "fix residual {fix_res}");
        let ax = problem.a.apply(&result.x).unwrap();
        assert!(problem.q.distance(&ax).unwrap() <= 1e-6);

        // cross-check against the oracle
        let feasible = oracle_feasible_point(&problem, &result.x, 1e-9).unwrap();
        assert!(norm2(&result.x.sub(&feasible)) < 1e-4);
    }

    #[test]
    fn w_validation() {
        let problem = two_d_instance(); // alpha = -1, interval (0, 2)
        let mut config = guarded_config();
        config.w = 2.5;
        let err = pnp_plo(&problem, &config, &Signal::vector(&[1.0, 0.0]));
        assert!(matches!(
            err,
            Err(SolveError::WOutsideGuarantee { upper, .. }) if upper == 2.0
        ));
        config.allow_unguarded = true;
        config.max_iters = 3;
        assert!(pnp_plo(&problem, &config, &Signal::vector(&[1.0, 0.0])).is_ok());
    }

    #[test]
    fn converged_runs_are_feasible_at_stop_tol_scale() {
        let problem = two_d_instance();
        let config = SolveConfig {
            max_iters: 100_000,
            stop_tol: 1e-9,
            ..SolveConfig::default()
        };
        let x0 = Signal::vector(&[4.0, -3.0]);
        let result = pnp_plo(&problem, &config, &x0).unwrap();
        assert_eq!(result.status, SolveStatus::Converged);
        let budget = 10.0 * config.stop_tol * (1.0 + norm2(&x0));
        let fix_res = norm2(&problem.denoiser.denoise(&result.x).unwrap().sub(&result.x));
        assert!(fix_res <= budget, "fix residual {fix_res} > {budget}");
        let ax = problem.a.apply(&result.x).unwrap();
        let dist = problem.q.distance(&ax).unwrap();
        assert!(dist <= budget, "dist {dist} > {budget}");
    }

    #[test]
    fn determinism_bitwise() {
        let problem = two_d_instance();
        let config = SolveConfig {
            max_iters: 64,
            record_iterates: true,
            ..SolveConfig::default()
        };
        let x0 = Signal::vector(&[3.0, 0.5]);
        let r1 = pnp_plo(&problem, &config, &x0).unwrap();
        let r2 = pnp_plo(&problem, &config, &x0).unwrap();
        assert_eq!(r1.x, r2.x);
        assert!(r1.trace.numeric_eq(&r2.trace));
    }

    #[test]
    fn stall_surfaces_as_status() {
        // Rank-deficient A, singleton off the range, x0 in the kernel
        // direction: the first step already has no usable direction.
        let problem = SCFPProblem {
            a: build_dense_square(2, vec![1.0, 0.0, 0.0, 0.0]).unwrap(),
            q: ConvexSet::singleton(Signal::vector(&[0.0, 1.0])),
            denoiser: build_subspace_denoiser(&[
                Signal::vector(&[1.0, 0.0]),
                Signal::vector(&[0.0, 1.0]),
            ])
            .unwrap(),
            ground_truth: None,
        };
        let result = pnp_plo(
            &problem,
            &guarded_config(),
            &Signal::vector(&[0.0, 0.0]),
        )
        .unwrap();
        assert_eq!(result.status, SolveStatus::InfeasibleDirection);
    }

    #[test]
    fn red_sd_identity_denoiser_is_gradient_descent() {
        // T = Id (projection onto the whole space): the residual term
        // vanishes and red_sd must match plain gradient descent on f.
        let problem = SCFPProblem {
            a: build_dense_square(2, vec![1.0, 0.0, 0.0, 2.0]).unwrap(),
            q: ConvexSet::singleton(Signal::vector(&[1.0, 2.0])),
            denoiser: build_subspace_denoiser(&[
                Signal::vector(&[1.0, 0.0]),
                Signal::vector(&[0.0, 1.0]),
            ])
            .unwrap(),
            ground_truth: None,
        };
        let config = SolveConfig {
            max_iters: 50,
            record_iterates: true,
            stop_tol: 0.0,
            ..SolveConfig::default()
        };
        let x0 = Signal::vector(&[5.0, -1.0]);
        let result = red_sd(&problem, &config, &x0, 0.2, 3.0).unwrap();

        let mut x = x0.clone();
        for _ in 0..50 {
            let g = crate::landweber::grad_fidelity(&problem.a, &problem.q, &x).unwrap();
            x = x.axpy(-0.2, &g);
        }
        assert!(norm2(&result.x.sub(&x)) < 1e-10);
    }

    #[test]
    fn red_sd_agrees_with_long_run_tiny_step_oracle() {
        // Instance whose combined objective has the unique minimizer
        // z* = (1, 1): f is strictly convex (invertible A, singleton Q)
        // and both it and the denoiser residual vanish at z*.
        let a = build_dense_square(2, vec![1.0, 0.0, 0.0, 2.0]).unwrap();
        let z_star = Signal::vector(&[1.0, 1.0]);
        let y = a.apply(&z_star).unwrap();
        let problem = SCFPProblem {
            a,
            q: ConvexSet::singleton(y),
            denoiser: build_subspace_denoiser(&[Signal::vector(&[1.0, 1.0])]).unwrap(),
            ground_truth: None,
        };
        let x0 = Signal::vector(&[4.0, -2.0]);

        let fast_config = SolveConfig {
            max_iters: 20_000,
            stop_tol: 0.0,
            ..SolveConfig::default()
        };
        let fast = red_sd(&problem, &fast_config, &x0, 0.3, 0.5).unwrap();

        // long-run oracle: a million tiny steps
        let oracle_config = SolveConfig {
            max_iters: 1_000_000,
            stop_tol: 0.0,
            trace_every: 1_000_000,
            ..SolveConfig::default()
        };
        let oracle = red_sd(&problem, &oracle_config, &x0, 1e-3, 0.5).unwrap();

        let f_fast = crate::landweber::fidelity(&problem.a, &problem.q, &fast.x).unwrap();
        let f_oracle = crate::landweber::fidelity(&problem.a, &problem.q, &oracle.x).unwrap();
        assert!(f_fast < 1e-8, "fast f {f_fast}");
        assert!(f_oracle < 1e-8, "oracle f {f_oracle}");
        assert!(
            norm2(&fast.x.sub(&oracle.x)) < 1e-4,
            "minimizers differ: {:?} vs {:?}",
            fast.x,
            oracle.x
        );
    }

    #[test]
    fn red_sd_zero_step_is_constant() {
        let problem = two_d_instance();
        let config = SolveConfig {
            max_iters: 10,
            stop_tol: 0.0,
            ..SolveConfig::default()
        };
        let x0 = Signal::vector(&[2.0, 2.0]);
        let result = red_sd(&problem, &config, &x0, 0.0, 1.0).unwrap();
        assert_eq!(result.x, x0);
    }

    #[test]
    fn red_pro_zero_step_is_averaged_fixed_point_iteration() {
        let problem = two_d_instance();
        let config = SolveConfig {
            max_iters: 2000,
            w: 0.9, // inside (0, 1) for alpha = -1
            stop_tol: 1e-14,
            ..SolveConfig::default()
        };
        let x0 = Signal::vector(&[3.0, -1.0]);
        let result = red_pro(
            &problem,
            &config,
            &x0,
            StepRule::Constant(0.0),
        )
        .unwrap();
        // converges into Fix(T)
        let fix_res = norm2(&problem.denoiser.denoise(&result.x).unwrap().sub(&result.x));
        assert!(fix_res < 1e-10, "{fix_res}");
    }

    #[test]
    fn red_pro_w_interval_is_halved() {
        let problem = two_d_instance(); // alpha = -1 -> red_pro interval (0, 1)
        let mut config = guarded_config();
        config.w = 1.5;
        let err = red_pro(&problem, &config, &Signal::vector(&[1.0, 0.0]), StepRule::Constant(0.1));
        assert!(matches!(
            err,
            Err(SolveError::WOutsideGuarantee { upper, .. }) if upper == 1.0
        ));
    }

    #[test]
    fn pnp_fbs_zero_step_applies_denoiser_repeatedly() {
        let problem = two_d_instance();
        let config = SolveConfig {
            max_iters: 5,
            stop_tol: 0.0,
            ..SolveConfig::default()
        };
        let x0 = Signal::vector(&[2.0, 0.0]);
        let result = pnp_fbs(&problem, &config, &x0, 0.0).unwrap();
        // projection is idempotent, so one application decides the limit
        let once = problem.denoiser.denoise(&x0).unwrap();
        assert!(norm2(&result.x.sub(&once)) < 1e-12);
    }

    #[test]
    fn reduction_to_pnp_fbs_singleton() {
        // Q = {y}, delta = 1, lambda constant, w = 1: per-iterate match
        // with pnp_fbs at s = lambda / ||A||^2.
        let a = build_dense_square(2, vec![1.0, 0.3, 0.3, 2.0]).unwrap();
        let norm = resolved_norm(&a);
        let y = Signal::vector(&[0.5, -0.25]);
        let lambda = 0.8;
        let problem = SCFPProblem {
            a,
            q: ConvexSet::singleton(y),
            denoiser: build_subspace_denoiser(&[Signal::vector(&[1.0, 1.0])]).unwrap(),
            ground_truth: None,
        };
        let config = SolveConfig {
            max_iters: 100,
            lambda: LambdaSchedule::Constant(lambda),
            step_rule: StepRule::Constant(1.0),
            w: 1.0,
            stop_tol: 0.0,
            record_iterates: true,
            ..SolveConfig::default()
        };
        let x0 = Signal::vector(&[4.0, 3.0]);
        let plo = pnp_plo(&problem, &config, &x0).unwrap();
        let fbs = pnp_fbs(&problem, &config, &x0, lambda / (norm * norm)).unwrap();
        assert_eq!(plo.trace.iterates.len(), fbs.trace.iterates.len());
        for (u, v) in plo.trace.iterates.iter().zip(fbs.trace.iterates.iter()) {
            assert!(norm2(&u.sub(v)) <= 1e-10 * (1.0 + norm2(v)));
        }
    }

    #[test]
    fn reduction_to_red_pro_singleton() {
        // Q = {y}, delta = 1, diminishing lambda_k: per-iterate match with
        // red_pro at mu_k = lambda_k / ||A||^2.
        let a = build_dense_square(2, vec![1.5, 0.0, 0.2, 1.0]).unwrap();
        let norm = resolved_norm(&a);
        let problem = SCFPProblem {
            a,
            q: ConvexSet::singleton(Signal::vector(&[1.0, 0.5])),
            denoiser: build_subspace_denoiser(&[Signal::vector(&[2.0, 1.0])]).unwrap(),
            ground_truth: None,
        };
        let w = 0.7;
        let lambda0 = 0.9;
        let exponent = 0.1;
        let config = SolveConfig {
            max_iters: 100,
            lambda: LambdaSchedule::Diminishing { lambda0, exponent },
            step_rule: StepRule::Constant(1.0),
            w,
            stop_tol: 0.0,
            record_iterates: true,
            ..SolveConfig::default()
        };
        let x0 = Signal::vector(&[-2.0, 5.0]);
        let plo = pnp_plo(&problem, &config, &x0).unwrap();
        let pro = red_pro(
            &problem,
            &config,
            &x0,
            StepRule::Diminishing {
                mu0: lambda0 / (norm * norm),
                exponent,
            },
        )
        .unwrap();
        for (u, v) in plo.trace.iterates.iter().zip(pro.trace.iterates.iter()) {
            assert!(norm2(&u.sub(v)) <= 1e-10 * (1.0 + norm2(v)));
        }
    }

    #[test]
    fn oracle_examples() {
        // Q = {y}, A = Id, Fix(T) = everything -> returns y.
        let shape = Shape::new(2, 1, 1);
        let y = Signal::vector(&[1.0, -2.0]);
        let problem = SCFPProblem {
            a: identity(shape),
            q: ConvexSet::singleton(y.clone()),
            denoiser: build_subspace_denoiser(&[
                Signal::vector(&[1.0, 0.0]),
                Signal::vector(&[0.0, 1.0]),
            ])
            .unwrap(),
            ground_truth: None,
        };
        let x = oracle_feasible_point(&problem, &Signal::vector(&[9.0, 9.0]), 1e-8).unwrap();
        assert!(norm2(&x.sub(&y)) < 1e-7);
    }

    #[test]
    fn oracle_two_d_instance() {
        let problem = two_d_instance();
        let tol = 1e-8;
        let x = oracle_feasible_point(&problem, &Signal::vector(&[0.0, 0.0]), tol).unwrap();
        // feasible points are t(1,1) with |t - 1| <= 0.1/sqrt(5)
        let t = x.data()[0];
        assert!((x.data()[1] - t).abs() < 1e-6);
        assert!((t - 1.0).abs() <= 0.1 / 5.0_f64.sqrt() + 1e-6);
        let ax = problem.a.apply(&x).unwrap();
        assert!(norm2(&ax.sub(&Signal::vector(&[1.0, 2.0]))) <= 0.1 + tol);
    }

    #[test]
    fn oracle_declares_infeasible() {
        // ball far from the image of Fix(T): F is empty.
        let problem = SCFPProblem {
            a: identity(Shape::new(2, 1, 1)),
            q: ConvexSet::l2_ball(Signal::vector(&[0.0, 10.0]), 1.0).unwrap(),
            denoiser: build_subspace_denoiser(&[Signal::vector(&[1.0, 0.0])]).unwrap(),
            ground_truth: None,
        };
        match oracle_feasible_point(&problem, &Signal::vector(&[0.0, 0.0]), 1e-6) {
            Err(SolveError::Infeasible) => {}
            other => panic!("expected infeasible, got {other:?}"),
        }
    }

    #[test]
    fn fejer_constant_values() {
        assert_eq!(fejer_constant(-1.0, 1.0), 0.5);
        assert_eq!(fejer_constant(-1.0, 0.5), 0.5);
        assert!((fejer_constant(-1.0, 1.5) - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn fejer_holds_on_solver_runs() {
        let problem = two_d_instance();
        for w in [0.5, 1.0, 1.5] {
            let config = SolveConfig {
                w,
                ..guarded_config()
            };
            let x0 = Signal::vector(&[4.0, -1.0]);
            let result = pnp_plo(&problem, &config, &x0).unwrap();
            let x_star = oracle_feasible_point(&problem, &x0, 1e-10).unwrap();
            let c = fejer_constant(-1.0, w);
            let report = check_fejer(&result.trace.iterates, &x_star, c);
            assert!(report.pass, "w {w}: {report:?}");
        }
    }

    #[test]
    fn fejer_constant_sequence_has_zero_margins() {
        let x_star = Signal::vector(&[1.0, 1.0]);
        let iterates = vec![x_star.clone(), x_star.clone(), x_star.clone()];
        let report = check_fejer(&iterates, &x_star, 0.5);
        assert!(report.pass);
        assert!(report.worst_margin.abs() < 1e-15);
    }

    #[test]
    fn fejer_negative_control_over_relaxed_w() {
        // w = 2.5 > 1 - alpha: T_w expands away from the fixed set and the
        // inequality must fail somewhere.
        let problem = two_d_instance();
        let config = SolveConfig {
            w: 2.5,
            allow_unguarded: true,
            max_iters: 60,
            record_iterates: true,
            stop_tol: 0.0,
            ..SolveConfig::default()
        };
        let x0 = Signal::vector(&[4.0, -1.0]);
        let result = pnp_plo(&problem, &config, &x0).unwrap();
        let x_star = oracle_feasible_point(&problem, &x0, 1e-10).unwrap();
        let c = fejer_constant(-1.0, 2.5);
        let report = check_fejer(&result.trace.iterates, &x_star, c);
        assert!(!report.pass, "expected violations, got {report:?}");
    }

    #[test]
    fn rate_bounds_hold_on_tau_and_polyak_runs() {
        let problem = two_d_instance();
        let x0 = Signal::vector(&[4.0, -1.0]);
        let x_star = oracle_feasible_point(&problem, &x0, 1e-10).unwrap();
        for rule in [StepRule::TauExtrapolated, StepRule::Polyak] {
            let config = SolveConfig {
                step_rule: rule,
                max_iters: 1000,
                stop_tol: 0.0,
                record_iterates: true,
                ..SolveConfig::default()
            };
            let result = pnp_plo(&problem, &config, &x0).unwrap();
            let c = fejer_constant(-1.0, 1.0);
            let report = check_rate_bounds(
                &result.trace,
                &x0,
                &x_star,
                c,
                rule == StepRule::Polyak,
            );
            assert!(report.pass, "{rule:?}: {report:?}");
        }
    }

    #[test]
    fn fit_linear_rate_on_synthetic_sequences() {
        // exact geometric decay
        let d: Vec<f64> = (0..40).map(|k| 0.5f64.powi(k)).collect();
        let report = fit_linear_rate(&d, 20);
        assert!((report.q_hat - 0.5).abs() < 1e-6, "{}", report.q_hat);
        assert!(report.fit_residual < 1e-10);
        assert!(!report.flagged_nonconvergent);

        // stalled sequence
        let d = vec![0.3; 30];
        let report = fit_linear_rate(&d, 20);
        assert!((report.q_hat - 1.0).abs() < 1e-9);
        assert!(report.flagged_nonconvergent);
    }

    #[test]
    fn fit_linear_rate_on_solver_distances() {
        let problem = two_d_instance();
        let config = SolveConfig {
            max_iters: 60,
            stop_tol: 0.0,
            record_iterates: true,
            ..SolveConfig::default()
        };
        let x0 = Signal::vector(&[4.0, -1.0]);
        let result = pnp_plo(&problem, &config, &x0).unwrap();
        let distances: Vec<f64> = result
            .trace
            .iterates
            .iter()
            .map(|x| oracle_distance(&problem, x, 1e-12).unwrap())
            .collect();
        let report = fit_linear_rate(&distances, 30);
        assert!(report.q_hat < 1.0, "q {}", report.q_hat);
        assert!(report.q_hat > 0.0);
    }
}
