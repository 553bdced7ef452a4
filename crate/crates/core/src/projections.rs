//! Metric projections onto the constraint sets of the feasibility model,
//! plus the noise-radius rule that sizes the measurement ball.

use crate::signal::{norm2, Shape, Signal};
use crate::span::{orthonormalize, orthonormality_defect, project_span};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ProjectionError {
    #[error("signal shape {got} does not match the set's shape {expected}")]
    ShapeMismatch { expected: Shape, got: Shape },
    #[error("radius must be nonnegative, got {0}")]
    NegativeRadius(f64),
    #[error("epsilon must be positive, got {0}")]
    NonPositiveEpsilon(f64),
    #[error("box bounds must satisfy lower <= upper everywhere")]
    InvertedBounds,
    #[error("affine subspace needs at least one independent spanning vector")]
    DegenerateBasis,
}

/// A closed convex set with a computable metric projection.
#[derive(Debug, Clone)]
pub enum ConvexSet {
    L2Ball { center: Signal, radius: f64 },
    L1Ball { center: Signal, radius: f64 },
    Singleton { center: Signal },
    Box { lower: Signal, upper: Signal },
    AffineSubspace { basis: Vec<Signal>, offset: Signal },
}

/// sigma_eta = epsilon * sqrt(n0 * sigma^2): the noise-strength radius of
/// the measurement ball.
pub fn radius_from_noise(n0: usize, sigma: f64, epsilon: f64) -> Result<f64, ProjectionError> {
    if epsilon <= 0.0 {
        return Err(ProjectionError::NonPositiveEpsilon(epsilon));
    }
    if sigma < 0.0 {
        return Err(ProjectionError::NegativeRadius(sigma));
    }
    Ok(epsilon * (n0 as f64 * sigma * sigma).sqrt())
}

impl ConvexSet {
    pub fn l2_ball(center: Signal, radius: f64) -> Result<Self, ProjectionError> {
        if radius < 0.0 {
            return Err(ProjectionError::NegativeRadius(radius));
        }
        Ok(ConvexSet::L2Ball { center, radius })
    }

    pub fn l1_ball(center: Signal, radius: f64) -> Result<Self, ProjectionError> {
        if radius < 0.0 {
            return Err(ProjectionError::NegativeRadius(radius));
        }
        Ok(ConvexSet::L1Ball { center, radius })
    }

    pub fn singleton(center: Signal) -> Self {
        ConvexSet::Singleton { center }
    }

    pub fn boxed(lower: Signal, upper: Signal) -> Result<Self, ProjectionError> {
        if lower.shape() != upper.shape() {
            return Err(ProjectionError::ShapeMismatch {
                expected: lower.shape(),
                got: upper.shape(),
            });
        }
        if lower
            .data()
            .iter()
            .zip(upper.data().iter())
            .any(|(&l, &u)| l > u)
        {
            return Err(ProjectionError::InvertedBounds);
        }
        Ok(ConvexSet::Box { lower, upper })
    }

    /// Affine subspace offset + span(vectors). Spanning vectors are
    /// orthonormalized at construction (Gram-Schmidt), so the stored basis
    /// always satisfies the 1e-10 orthonormality invariant.
    pub fn affine_subspace(
        spanning: &[Signal],
        offset: Signal,
    ) -> Result<Self, ProjectionError> {
        let basis = orthonormalize(spanning);
        if basis.is_empty() {
            return Err(ProjectionError::DegenerateBasis);
        }
        debug_assert!(orthonormality_defect(&basis) < 1e-10);
        Ok(ConvexSet::AffineSubspace { basis, offset })
    }

    pub fn shape(&self) -> Shape {
        match self {
            ConvexSet::L2Ball { center, .. }
            | ConvexSet::L1Ball { center, .. }
            | ConvexSet::Singleton { center } => center.shape(),
            ConvexSet::Box { lower, .. } => lower.shape(),
            ConvexSet::AffineSubspace { offset, .. } => offset.shape(),
        }
    }

    pub fn radius(&self) -> f64 {
        match self {
            ConvexSet::L2Ball { radius, .. } | ConvexSet::L1Ball { radius, .. } => *radius,
            _ => 0.0,
        }
    }

    /// Membership tolerance used when callers don't supply one; scales
    /// with the radius so boundary checks stay meaningful on large balls.
    pub fn default_tol(&self) -> f64 {
        1e-12 * (1.0 + self.radius())
    }

    fn check_shape(&self, x: &Signal) -> Result<(), ProjectionError> {
        if x.shape() != self.shape() {
            return Err(ProjectionError::ShapeMismatch {
                expected: self.shape(),
                got: x.shape(),
            });
        }
        Ok(())
    }

    /// Metric projection onto the set. Idempotent and nonexpansive.
    pub fn project(&self, x: &Signal) -> Result<Signal, ProjectionError> {
        self.check_shape(x)?;
        Ok(match self {
            ConvexSet::L2Ball { center, radius } => {
                let diff = x.sub(center);
                let dist = norm2(&diff);
                if dist <= *radius {
                    x.clone()
                } else {
                    center.axpy(radius / dist, &diff)
                }
            }
            ConvexSet::L1Ball { center, radius } => {
                let v = x.sub(center);
                let l1: f64 = v.data().iter().map(|a| a.abs()).sum();
                if l1 <= *radius {
                    x.clone()
                } else {
                    center.add(&shrink_to_l1_ball(&v, *radius))
                }
            }
            ConvexSet::Singleton { center } => center.clone(),
            ConvexSet::Box { lower, upper } => {
                let data = x
                    .data()
                    .iter()
                    .zip(lower.data().iter().zip(upper.data().iter()))
                    .map(|(&v, (&l, &u))| v.clamp(l, u))
                    .collect();
                Signal::new(x.shape(), x.domain(), data).expect("shape preserved")
            }
            ConvexSet::AffineSubspace { basis, offset } => {
                offset.add(&project_span(basis, &x.sub(offset)))
            }
        })
    }

    /// tol-relaxed membership, consistent with `project` fixed points.
    pub fn contains(&self, x: &Signal, tol: f64) -> Result<bool, ProjectionError> {
        self.check_shape(x)?;
        Ok(match self {
            ConvexSet::L2Ball { center, radius } => norm2(&x.sub(center)) <= radius + tol,
            ConvexSet::L1Ball { center, radius } => {
                let l1: f64 = x.sub(center).data().iter().map(|a| a.abs()).sum();
                l1 <= radius + tol
            }
            ConvexSet::Singleton { center } => norm2(&x.sub(center)) <= tol,
            ConvexSet::Box { lower, upper } => x
                .data()
                .iter()
                .zip(lower.data().iter().zip(upper.data().iter()))
                .all(|(&v, (&l, &u))| v >= l - tol && v <= u + tol),
            ConvexSet::AffineSubspace { .. } => {
                let p = self.project(x)?;
                norm2(&x.sub(&p)) <= tol
            }
        })
    }

    /// Euclidean distance to the set.
    pub fn distance(&self, x: &Signal) -> Result<f64, ProjectionError> {
        self.check_shape(x)?;
        Ok(match self {
            ConvexSet::L2Ball { center, radius } => (norm2(&x.sub(center)) - radius).max(0.0),
            _ => norm2(&x.sub(&self.project(x)?)),
        })
    }
}

/// Exact Euclidean projection of v onto { z : ||z||_1 <= radius }, via the
/// sort-and-threshold method. Assumes ||v||_1 > radius.
fn shrink_to_l1_ball(v: &Signal, radius: f64) -> Signal {
    let mut mags: Vec<f64> = v.data().iter().map(|a| a.abs()).collect();
    mags.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, &m) in mags.iter().enumerate() {
        cumsum += m;
        let candidate = (cumsum - radius) / (j + 1) as f64;
        if m - candidate > 0.0 {
            theta = candidate;
        }
    }
    v.map(|a| a.signum() * (a.abs() - theta).max(0.0))
}
