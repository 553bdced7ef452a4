//! Fidelity geometry and the projected/extrapolated Landweber steps.
//!
//! Everything here is built from one shared computation: project the
//! image of the iterate onto the constraint set and pull the residual
//! back through the adjoint. The extrapolated step with the tau rule
//! cancels the operator norm, so that path never touches a norm value;
//! the norm enters only the classical fixed-step form and the stall
//! detector.

use crate::operators::{op_norm_estimate, LinearOperator, OperatorError};
use crate::projections::{ConvexSet, ProjectionError};
use crate::signal::{norm2, Signal};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LandweberError {
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error(transparent)]
    Projection(#[from] ProjectionError),
    #[error("norm_sq must be positive, got {0}")]
    BadNormSq(f64),
    #[error("delta {delta} outside [1, tau = {tau}]")]
    DeltaOutOfRange { delta: f64, tau: f64 },
    #[error("residual is orthogonal to the range of A (infeasible direction)")]
    Stall,
    #[error("invalid step rule: {0}")]
    BadStepRule(String),
}

/// Per-iterate step strategy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepRule {
    /// delta(x) = tau(x): the norm-free extrapolated Landweber step.
    TauExtrapolated,
    /// Polyak's step t_k = f(x)/||grad f(x)||^2 with f_opt = 0, run as the
    /// tau-replaced, lambda = 1/2 configuration.
    Polyak,
    /// Constant extrapolation delta(x) = value, capped at tau(x).
    Constant(f64),
    /// mu_k = mu0 * k^(-exponent); meaningful for the gradient baselines.
    Diminishing { mu0: f64, exponent: f64 },
}

impl StepRule {
    pub fn validate(&self) -> Result<(), LandweberError> {
        match *self {
            StepRule::TauExtrapolated | StepRule::Polyak => Ok(()),
            StepRule::Constant(v) => {
                if v >= 0.0 && v.is_finite() {
                    Ok(())
                } else {
                    Err(LandweberError::BadStepRule(format!(
                        "constant step must be finite and nonnegative, got {v}"
                    )))
                }
            }
            StepRule::Diminishing { mu0, exponent } => {
                if mu0 <= 0.0 {
                    return Err(LandweberError::BadStepRule(format!(
                        "diminishing mu0 must be positive, got {mu0}"
                    )));
                }
                if !(exponent > 0.0 && exponent <= 1.0) {
                    return Err(LandweberError::BadStepRule(format!(
                        "diminishing exponent must lie in (0, 1], got {exponent}"
                    )));
                }
                Ok(())
            }
        }
    }

    /// mu_k for the diminishing rule (k counted from 1), mu0 at k = 0.
    pub fn diminishing_at(&self, k: usize) -> Option<f64> {
        match *self {
            StepRule::Diminishing { mu0, exponent } => {
                Some(mu0 * (k.max(1) as f64).powf(-exponent))
            }
            _ => None,
        }
    }
}

/// Shared geometry of one iterate: Ax, its projection onto Q, the
/// measurement residual, and the adjoint pull-back.
#[derive(Debug, Clone)]
pub struct ResidualGeometry {
    pub ax: Signal,
    pub projected: Signal,
    /// P_Q(Ax) - Ax
    pub residual: Signal,
    pub residual_norm: f64,
    /// A*(P_Q(Ax) - Ax) = -grad f(x)
    pub back: Signal,
    pub back_norm: f64,
    /// tol-relaxed membership of Ax in Q (the set's default tolerance)
    pub inside: bool,
}

pub fn residual_geometry(
    a: &LinearOperator,
    q: &ConvexSet,
    x: &Signal,
) -> Result<ResidualGeometry, LandweberError> {
    let ax = a.apply(x)?;
    let projected = q.project(&ax)?;
    let residual = projected.sub(&ax);
    let residual_norm = norm2(&residual);
    let inside = q.contains(&ax, q.default_tol())?;
    let (back, back_norm) = if residual_norm == 0.0 {
        (Signal::zeros_like(x), 0.0)
    } else {
        let back = a.adjoint(&residual)?;
        let n = norm2(&back);
        (back, n)
    };
    Ok(ResidualGeometry {
        ax,
        projected,
        residual,
        residual_norm,
        back,
        back_norm,
        inside,
    })
}

/// f(x) = 1/2 ||Ax - P_Q(Ax)||^2; zero exactly when Ax lies in Q.
pub fn fidelity(a: &LinearOperator, q: &ConvexSet, x: &Signal) -> Result<f64, LandweberError> {
    let geom = residual_geometry(a, q, x)?;
    Ok(0.5 * geom.residual_norm * geom.residual_norm)
}

/// grad f(x) = A*(Ax - P_Q(Ax)).
pub fn grad_fidelity(
    a: &LinearOperator,
    q: &ConvexSet,
    x: &Signal,
) -> Result<Signal, LandweberError> {
    let geom = residual_geometry(a, q, x)?;
    Ok(geom.back.scale(-1.0))
}

/// Upper bound on ||A|| for step sizing: the exact norm bound when the
/// operator carries one, otherwise a power-iteration estimate inflated by
/// a small safety factor.
pub fn resolved_norm(a: &LinearOperator) -> f64 {
    match a.norm_bound() {
        Some(b) => b,
        None => op_norm_estimate(a, 1e-10, 2000).value * (1.0 + 1e-6),
    }
}

/// Landweber step x + (1/norm_sq) A*(P_Q(Ax) - Ax); norm_sq must be an
/// upper bound on ||A||^2. Fixed points are exactly the preimage of Q.
pub fn landweber_apply(
    a: &LinearOperator,
    q: &ConvexSet,
    x: &Signal,
    norm_sq: f64,
) -> Result<Signal, LandweberError> {
    if norm_sq <= 0.0 {
        return Err(LandweberError::BadNormSq(norm_sq));
    }
    let geom = residual_geometry(a, q, x)?;
    Ok(x.axpy(1.0 / norm_sq, &geom.back))
}

fn stalled(geom: &ResidualGeometry, a_norm: f64) -> bool {
    !geom.inside
        && geom.residual_norm > 0.0
        && geom.back_norm < 1e-14 * a_norm * geom.residual_norm
}

fn tau_of(geom: &ResidualGeometry, a_norm: f64) -> Result<f64, LandweberError> {
    if geom.inside {
        return Ok(1.0);
    }
    if stalled(geom, a_norm) {
        return Err(LandweberError::Stall);
    }
    let ratio = a_norm * geom.residual_norm / geom.back_norm;
    Ok(ratio * ratio)
}

/// The extrapolation bound tau(x): 1 inside Q, otherwise
/// (||A|| ||P_Q(Ax) - Ax|| / ||A*(P_Q(Ax) - Ax)||)^2, always >= 1 up to
/// rounding. `a_norm` must be an upper bound on ||A|| (see
/// [`resolved_norm`]).
pub fn tau(
    a: &LinearOperator,
    q: &ConvexSet,
    x: &Signal,
    a_norm: f64,
) -> Result<f64, LandweberError> {
    let geom = residual_geometry(a, q, x)?;
    tau_of(&geom, a_norm)
}

/// Extrapolated Landweber step x + delta (L x - x) for an explicit delta
/// in [1, tau(x)]; this is the norm-carrying evaluation path.
pub fn extrapolated_landweber_apply(
    a: &LinearOperator,
    q: &ConvexSet,
    x: &Signal,
    delta: f64,
    norm_sq: f64,
) -> Result<Signal, LandweberError> {
    if norm_sq <= 0.0 {
        return Err(LandweberError::BadNormSq(norm_sq));
    }
    let geom = residual_geometry(a, q, x)?;
    let tau_val = tau_of(&geom, norm_sq.sqrt())?;
    if delta < 1.0 - 1e-12 || delta > tau_val + 1e-12 {
        return Err(LandweberError::DeltaOutOfRange {
            delta,
            tau: tau_val,
        });
    }
    Ok(x.axpy(delta / norm_sq, &geom.back))
}

/// The tau-extrapolated step in its norm-free form
/// x + mu(x) A*(P_Q(Ax) - Ax), mu(x) = ||residual||^2 / ||A* residual||^2.
/// No operator norm enters the step; `stall_scale` (an upper bound on
/// ||A||) is used only to recognize an infeasible direction.
pub fn extrapolated_landweber_tau_apply(
    a: &LinearOperator,
    q: &ConvexSet,
    x: &Signal,
    stall_scale: f64,
) -> Result<Signal, LandweberError> {
    let geom = residual_geometry(a, q, x)?;
    if geom.inside {
        return Ok(x.clone());
    }
    if stalled(&geom, stall_scale) {
        return Err(LandweberError::Stall);
    }
    let mu = (geom.residual_norm * geom.residual_norm) / (geom.back_norm * geom.back_norm);
    Ok(x.axpy(mu, &geom.back))
}

/// Polyak's step t = f(x)/||grad f(x)||^2 with f_opt = 0 (feasible
/// problem); 1 when Ax already lies in Q.
pub fn polyak_step(
    a: &LinearOperator,
    q: &ConvexSet,
    x: &Signal,
    a_norm: f64,
) -> Result<f64, LandweberError> {
    let geom = residual_geometry(a, q, x)?;
    if geom.inside {
        return Ok(1.0);
    }
    if stalled(&geom, a_norm) {
        return Err(LandweberError::Stall);
    }
    Ok(0.5 * geom.residual_norm * geom.residual_norm / (geom.back_norm * geom.back_norm))
}
