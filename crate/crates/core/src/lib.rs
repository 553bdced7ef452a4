//! Solvers for inverse imaging posed as split convex feasibility
//! problems: find x in Fix(T) such that A x lies in Q, where T is a
//! denoiser with a demicontraction constant, A a bounded linear operator,
//! and Q a closed convex set around the measurements.
//!
//! The toolkit implements the PnP-PLO iteration built on projected and
//! extrapolated Landweber operators (with the norm-free tau step and
//! Polyak's step), the RED / RED-PRO / PnP-FBS baselines, the operator
//! and projection calculus they need, and a batch experiment layer with
//! deterministic file outputs.

pub mod denoisers;
pub mod experiments;
mod fft;
pub mod io;
pub mod landweber;
mod linalg;
pub mod operators;
pub mod projections;
pub mod rng;
pub mod signal;
pub mod solvers;
pub mod span;

pub use denoisers::{
    build_linear_denoiser, build_lowpass_denoiser, build_reflection_denoiser,
    build_shrink_denoiser, build_soft_threshold_denoiser, build_subspace_denoiser,
    build_zero_denoiser, estimate_alpha, estimate_alpha_against, external_denoiser,
    external_denoiser_from_streams, red_value, relax, serve_mock, AlphaEstimate, DenoiseError,
    Denoiser, FixSet, MockBehavior,
};
pub use experiments::{
    degrade, grid_search, parse_config, run_experiment, upsample_init, DenoiserSpec,
    ExperimentConfig, ExperimentError, ExperimentReport, GridTable, SolverChoice, Task,
};
pub use landweber::{
    extrapolated_landweber_apply, extrapolated_landweber_tau_apply, fidelity, grad_fidelity,
    landweber_apply, polyak_step, resolved_norm, residual_geometry, tau, LandweberError,
    ResidualGeometry, StepRule,
};
pub use operators::{
    adjoint_check, build_conv2d_circular, build_dense, build_dense_square,
    build_downsample_blur, build_masked_fourier, identity, make_mask, op_norm_estimate,
    AdjointReport, Kernel, LinearOperator, MaskKind, NormEstimate, OperatorError, SamplingMask,
};
pub use projections::{radius_from_noise, ConvexSet, ProjectionError};
pub use signal::{
    add_noise, inner, norm2, psnr, Domain, NoiseKind, NoiseSpec, Shape, Signal, SignalError,
};
pub use solvers::{
    check_fejer, check_rate_bounds, fejer_constant, fit_linear_rate, oracle_distance,
    oracle_feasible_point, oracle_feasible_point_view, pnp_fbs, pnp_fbs_view, pnp_plo,
    pnp_plo_view, red_pro, red_pro_view, red_sd, red_sd_view, FejerReport, LambdaSchedule,
    ProblemView, RateBoundsReport, RateReport, SCFPProblem, SolveConfig, SolveError, SolveResult,
    SolveStatus, SolveTrace, TraceRecord,
};
