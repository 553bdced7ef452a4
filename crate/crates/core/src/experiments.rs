//! Batch experiment front end: degradation pipelines for the deblurring,
//! super-resolution, and sampled-Fourier tasks, flat key=value
//! configuration files, experiment execution with file outputs, and
//! parameter grids.

use crate::denoisers::{
    build_lowpass_denoiser, build_shrink_denoiser, external_denoiser, Denoiser,
};
use crate::io::{
    load_pgm, load_rawf32, save_pgm, save_rawf32, write_summary_csv, write_trace_csv, IoError,
    SummaryRow,
};
use crate::landweber::StepRule;
use crate::operators::{
    build_conv2d_circular, build_downsample_blur, build_masked_fourier, make_mask, Kernel,
    LinearOperator, MaskKind, OperatorError, SamplingMask,
};
use crate::projections::{ConvexSet, ProjectionError};
use crate::rng::derive_seed;
use crate::signal::{add_noise, psnr, NoiseSpec, Shape, Signal, SignalError};
use crate::solvers::{
    pnp_fbs, pnp_plo, red_pro, red_sd, LambdaSchedule, SCFPProblem, SolveConfig, SolveError,
    SolveResult,
};
use std::collections::VecDeque;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error(transparent)]
    Projection(#[from] ProjectionError),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Denoise(#[from] crate::denoisers::DenoiseError),
    #[error(transparent)]
    Landweber(#[from] crate::landweber::LandweberError),
    #[error("configuration error: {0}")]
    Config(String),
}

impl ExperimentError {
    /// Process exit status: 1 for numerical failures, 2 for I/O, protocol,
    /// and configuration failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Io(_) | ExperimentError::Config(_) => 2,
            ExperimentError::Denoise(crate::denoisers::DenoiseError::Transport(_)) => 2,
            ExperimentError::Solve(SolveError::Denoise(
                crate::denoisers::DenoiseError::Transport(_),
            )) => 2,
            _ => 1,
        }
    }
}

fn config_err(msg: impl Into<String>) -> ExperimentError {
    ExperimentError::Config(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    DeblurUniform9,
    DeblurGaussian,
    SrX3,
    SrX2,
    Csmri,
}

impl Task {
    pub fn parse(s: &str) -> Result<Self, ExperimentError> {
        Ok(match s {
            "deblur_uniform9" => Task::DeblurUniform9,
            "deblur_gaussian" => Task::DeblurGaussian,
            "sr_x3" => Task::SrX3,
            "sr_x2" => Task::SrX2,
            "csmri" => Task::Csmri,
            other => return Err(config_err(format!("unknown task '{other}'"))),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Task::DeblurUniform9 => "deblur_uniform9",
            Task::DeblurGaussian => "deblur_gaussian",
            Task::SrX3 => "sr_x3",
            Task::SrX2 => "sr_x2",
            Task::Csmri => "csmri",
        }
    }

    pub fn scale(&self) -> usize {
        match self {
            Task::SrX3 => 3,
            Task::SrX2 => 2,
            _ => 1,
        }
    }

    fn default_sigma(&self) -> f64 {
        match self {
            Task::DeblurUniform9 | Task::DeblurGaussian => 2.0_f64.sqrt(),
            Task::SrX3 | Task::SrX2 => 5.0,
            Task::Csmri => 15.0,
        }
    }

    fn default_iters(&self) -> usize {
        match self {
            Task::Csmri => 100,
            _ => 1000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverChoice {
    PnpPlo,
    RedSd,
    RedPro,
    PnpFbs,
}

impl SolverChoice {
    pub fn parse(s: &str) -> Result<Self, ExperimentError> {
        Ok(match s {
            "pnp_plo" => SolverChoice::PnpPlo,
            "red_sd" => SolverChoice::RedSd,
            "red_pro" => SolverChoice::RedPro,
            "pnp_fbs" => SolverChoice::PnpFbs,
            other => return Err(config_err(format!("unknown solver '{other}'"))),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            SolverChoice::PnpPlo => "pnp_plo",
            SolverChoice::RedSd => "red_sd",
            SolverChoice::RedPro => "red_pro",
            SolverChoice::PnpFbs => "pnp_fbs",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DenoiserSpec {
    /// lowpass:<cutoff> — projection onto low Fourier frequencies.
    Lowpass { cutoff: f64 },
    /// shrink:<factor> — factor * Id.
    Shrink { factor: f64 },
    /// external:<command line> — spawn a protocol peer.
    External { command: Vec<String> },
}

impl DenoiserSpec {
    pub fn parse(s: &str) -> Result<Self, ExperimentError> {
        if let Some(rest) = s.strip_prefix("lowpass:") {
            let cutoff: f64 = rest
                .parse()
                .map_err(|_| config_err(format!("bad lowpass cutoff '{rest}'")))?;
            return Ok(DenoiserSpec::Lowpass { cutoff });
        }
        if let Some(rest) = s.strip_prefix("shrink:") {
            let factor: f64 = rest
                .parse()
                .map_err(|_| config_err(format!("bad shrink factor '{rest}'")))?;
            return Ok(DenoiserSpec::Shrink { factor });
        }
        if let Some(rest) = s.strip_prefix("external:") {
            let command: Vec<String> = rest.split_whitespace().map(str::to_string).collect();
            if command.is_empty() {
                return Err(config_err("external denoiser needs a command"));
            }
            return Ok(DenoiserSpec::External { command });
        }
        Err(config_err(format!(
            "unknown denoiser '{s}' (expected lowpass:<c>, shrink:<f>, or external:<cmd>)"
        )))
    }

    fn build(&self, shape: Shape, sigma_f: f64) -> Result<Denoiser, ExperimentError> {
        Ok(match self {
            DenoiserSpec::Lowpass { cutoff } => build_lowpass_denoiser(shape, *cutoff)?,
            DenoiserSpec::Shrink { factor } => build_shrink_denoiser(shape, *factor)?,
            DenoiserSpec::External { command } => {
                external_denoiser(&command[0], &command[1..], sigma_f)?
            }
        })
    }
}

/// Which grid supplies n0 in the radius formula; the measurement grid is
/// the default.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum N0Mode {
    Measurement,
    Reconstruction,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub task: Task,
    pub input: PathBuf,
    pub output_dir: PathBuf,
    pub sigma: f64,
    pub seed: u64,
    /// None selects the (sqrt(n0 sigma^2) - 0.2)/sqrt(n0 sigma^2) default.
    pub epsilon: Option<f64>,
    pub solver: SolverChoice,
    pub step_rule: StepRule,
    pub lambda: LambdaSchedule,
    pub w: f64,
    pub max_iters: usize,
    pub stop_tol: f64,
    pub trace_every: usize,
    pub denoiser: DenoiserSpec,
    pub sigma_f: f64,
    pub peak: f64,
    pub allow_unguarded: bool,
    pub mask_kind: MaskKind,
    pub mask_fraction: f64,
    pub n0_mode: N0Mode,
    /// red_sd step size.
    pub mu: f64,
    /// red_sd regularization weight.
    pub lambda_reg: f64,
    /// pnp_fbs step size; None takes 1 / ||A||^2.
    pub fbs_s: Option<f64>,
}

impl ExperimentConfig {
    pub fn new(task: Task, input: PathBuf, output_dir: PathBuf) -> Self {
        ExperimentConfig {
            task,
            input,
            output_dir,
            sigma: task.default_sigma(),
            seed: 0,
            epsilon: None,
            solver: SolverChoice::PnpPlo,
            step_rule: StepRule::TauExtrapolated,
            lambda: LambdaSchedule::Constant(1.0),
            w: 1.0,
            max_iters: task.default_iters(),
            stop_tol: 1e-9,
            trace_every: 1,
            denoiser: DenoiserSpec::Lowpass { cutoff: 0.3 },
            sigma_f: 0.0,
            peak: 255.0,
            allow_unguarded: false,
            mask_kind: MaskKind::Random,
            mask_fraction: 0.3,
            n0_mode: N0Mode::Measurement,
            mu: 1.5,
            lambda_reg: 0.01,
            fbs_s: None,
        }
    }
}

fn parse_step_rule(s: &str) -> Result<StepRule, ExperimentError> {
    if s == "tau" {
        return Ok(StepRule::TauExtrapolated);
    }
    if s == "polyak" {
        return Ok(StepRule::Polyak);
    }
    if let Some(rest) = s.strip_prefix("constant:") {
        let v: f64 = rest
            .parse()
            .map_err(|_| config_err(format!("bad constant step '{rest}'")))?;
        return Ok(StepRule::Constant(v));
    }
    if let Some(rest) = s.strip_prefix("diminishing:") {
        let mut it = rest.split(':');
        let mu0: f64 = it
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| config_err("diminishing needs mu0"))?;
        let exponent: f64 = it
            .next()
            .and_then(|t| t.parse().ok())
            .unwrap_or(0.1);
        return Ok(StepRule::Diminishing { mu0, exponent });
    }
    Err(config_err(format!("unknown step_rule '{s}'")))
}

fn parse_lambda(s: &str) -> Result<LambdaSchedule, ExperimentError> {
    if let Some(rest) = s.strip_prefix("constant:") {
        let v: f64 = rest
            .parse()
            .map_err(|_| config_err(format!("bad lambda '{rest}'")))?;
        return Ok(LambdaSchedule::Constant(v));
    }
    if let Some(rest) = s.strip_prefix("diminishing:") {
        let mut it = rest.split(':');
        let lambda0: f64 = it
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| config_err("diminishing lambda needs lambda0"))?;
        let exponent: f64 = it.next().and_then(|t| t.parse().ok()).unwrap_or(0.1);
        return Ok(LambdaSchedule::Diminishing { lambda0, exponent });
    }
    // bare number = constant
    if let Ok(v) = s.parse::<f64>() {
        return Ok(LambdaSchedule::Constant(v));
    }
    Err(config_err(format!("unknown lambda schedule '{s}'")))
}

/// Parses the flat key = value configuration format. Lines starting with
/// '#' are comments; unknown keys are rejected.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ExperimentError> {
    let mut pairs: Vec<(String, String)> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| config_err(format!("line {}: expected key = value", lineno + 1)))?;
        pairs.push((key.trim().to_string(), value.trim().to_string()));
    }
    let get = |key: &str| -> Option<&str> {
        pairs
            .iter()
            .rev()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    };

    let task = Task::parse(get("task").ok_or_else(|| config_err("missing key 'task'"))?)?;
    let input = PathBuf::from(get("input").ok_or_else(|| config_err("missing key 'input'"))?);
    let output_dir = PathBuf::from(
        get("output_dir").ok_or_else(|| config_err("missing key 'output_dir'"))?,
    );
    let mut config = ExperimentConfig::new(task, input, output_dir);

    for (key, value) in &pairs {
        match key.as_str() {
            "task" | "input" | "output_dir" => {}
            "sigma" => config.sigma = parse_num(key, value)?,
            "seed" => {
                config.seed = value
                    .parse()
                    .map_err(|_| config_err(format!("bad seed '{value}'")))?
            }
            "epsilon" => config.epsilon = Some(parse_num(key, value)?),
            "solver" => config.solver = SolverChoice::parse(value)?,
            "step_rule" => config.step_rule = parse_step_rule(value)?,
            "lambda" => config.lambda = parse_lambda(value)?,
            "w" => config.w = parse_num(key, value)?,
            "k" => {
                config.max_iters = value
                    .parse()
                    .map_err(|_| config_err(format!("bad k '{value}'")))?
            }
            "stop_tol" => config.stop_tol = parse_num(key, value)?,
            "trace_every" => {
                config.trace_every = value
                    .parse()
                    .map_err(|_| config_err(format!("bad trace_every '{value}'")))?
            }
            "denoiser" => config.denoiser = DenoiserSpec::parse(value)?,
            "sigma_f" => config.sigma_f = parse_num(key, value)?,
            "peak" => config.peak = parse_num(key, value)?,
            "allow_unguarded" => {
                config.allow_unguarded = value == "true" || value == "1";
            }
            "mask_kind" => {
                config.mask_kind = match value.as_str() {
                    "random" => MaskKind::Random,
                    "radial" => MaskKind::Radial,
                    "cartesian" => MaskKind::Cartesian,
                    other => return Err(config_err(format!("unknown mask_kind '{other}'"))),
                }
            }
            "mask_fraction" => config.mask_fraction = parse_num(key, value)?,
            "n0" => {
                config.n0_mode = match value.as_str() {
                    "measurement" => N0Mode::Measurement,
                    "reconstruction" => N0Mode::Reconstruction,
                    other => return Err(config_err(format!("unknown n0 mode '{other}'"))),
                }
            }
            "mu" => config.mu = parse_num(key, value)?,
            "lambda_reg" => config.lambda_reg = parse_num(key, value)?,
            "s" => config.fbs_s = Some(parse_num(key, value)?),
            other => return Err(config_err(format!("unknown key '{other}'"))),
        }
    }
    Ok(config)
}

fn parse_num(key: &str, value: &str) -> Result<f64, ExperimentError> {
    value
        .parse()
        .map_err(|_| config_err(format!("bad numeric value for '{key}': '{value}'")))
}

/// The measurement model and degraded data of one task instance.
#[derive(Debug)]
pub struct Degradation {
    pub y: Signal,
    pub a: LinearOperator,
    /// The clean signal in the operator's input domain (complex-tagged for
    /// the sampled-Fourier task).
    pub reference: Signal,
    pub mask: Option<SamplingMask>,
}

/// Builds the task operator and the noisy measurement y = A x + n.
///
/// For the sampled-Fourier task, noise is drawn per real component of the
/// sampled cells only; the measurement grid keeps zeros elsewhere.
pub fn degrade(
    image: &Signal,
    task: Task,
    sigma: f64,
    seed: u64,
    mask_kind: MaskKind,
    mask_fraction: f64,
) -> Result<Degradation, ExperimentError> {
    let shape = image.shape();
    match task {
        Task::DeblurUniform9 | Task::DeblurGaussian => {
            let kernel = match task {
                Task::DeblurUniform9 => Kernel::uniform(9)?,
                _ => Kernel::gaussian(9, 1.6)?,
            };
            let a = build_conv2d_circular(kernel, shape)?;
            let clean = a.apply(image)?;
            let y = add_noise(&clean, &NoiseSpec::gaussian(sigma, seed)?);
            Ok(Degradation {
                y,
                a,
                reference: image.clone(),
                mask: None,
            })
        }
        Task::SrX3 | Task::SrX2 => {
            let a = build_downsample_blur(Kernel::gaussian(7, 1.6)?, shape, task.scale())?;
            let clean = a.apply(image)?;
            let y = add_noise(&clean, &NoiseSpec::gaussian(sigma, seed)?);
            Ok(Degradation {
                y,
                a,
                reference: image.clone(),
                mask: None,
            })
        }
        Task::Csmri => {
            if shape.channels != 1 {
                return Err(config_err(
                    "the csmri task expects a single-channel input image",
                ));
            }
            let mask = make_mask(mask_kind, mask_fraction, shape.rows, shape.cols, seed)?;
            let a = build_masked_fourier(mask.clone())?;
            // embed the real image as a complex grid
            let mut data = Vec::with_capacity(shape.len() * 2);
            for &v in image.data() {
                data.push(v);
                data.push(0.0);
            }
            let reference = Signal::complex_image(shape.rows, shape.cols, data)?;
            let clean = a.apply(&reference)?;
            // noise per real component on the sampled cells
            let noise = add_noise(
                &Signal::zeros_like(&clean),
                &NoiseSpec::gaussian(sigma, derive_seed(seed, 1))?,
            );
            let mut y_data = clean.into_data();
            for (cell, &keep) in mask.grid().iter().enumerate() {
                if keep {
                    y_data[2 * cell] += noise.data()[2 * cell];
                    y_data[2 * cell + 1] += noise.data()[2 * cell + 1];
                }
            }
            let y = Signal::complex_image(shape.rows, shape.cols, y_data)?;
            Ok(Degradation {
                y,
                a,
                reference,
                mask: Some(mask),
            })
        }
    }
}

/// Initialization x^0 = upsample(y): the identity at scale 1, bilinear
/// interpolation (half-pixel-aligned, edge-clamped) for larger scales.
pub fn upsample_init(y: &Signal, scale: usize) -> Signal {
    if scale <= 1 {
        return y.clone();
    }
    let s = y.shape();
    let out_shape = Shape::new(s.rows * scale, s.cols * scale, s.channels);
    let mut data = vec![0.0; out_shape.len()];
    let src_coord = |idx: usize, n: usize| -> (usize, usize, f64) {
        let c = (idx as f64 + 0.5) / scale as f64 - 0.5;
        let c = c.clamp(0.0, (n - 1) as f64);
        let lo = c.floor() as usize;
        let hi = (lo + 1).min(n - 1);
        (lo, hi, c - lo as f64)
    };
    for r in 0..out_shape.rows {
        let (r0, r1, fr) = src_coord(r, s.rows);
        for c in 0..out_shape.cols {
            let (c0, c1, fc) = src_coord(c, s.cols);
            for ch in 0..s.channels {
                let v00 = y.at(r0, c0, ch);
                let v01 = y.at(r0, c1, ch);
                let v10 = y.at(r1, c0, ch);
                let v11 = y.at(r1, c1, ch);
                let top = v00 * (1.0 - fc) + v01 * fc;
                let bottom = v10 * (1.0 - fc) + v11 * fc;
                data[(r * out_shape.cols + c) * s.channels + ch] =
                    top * (1.0 - fr) + bottom * fr;
            }
        }
    }
    Signal::new(out_shape, y.domain(), data).expect("shape consistent")
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub summary: SummaryRow,
    pub degraded_psnr: Option<f64>,
    pub wall_ms: f64,
    pub trace_path: PathBuf,
    pub restored_path: PathBuf,
}

fn load_input(path: &Path) -> Result<Signal, ExperimentError> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("pgm") => Ok(load_pgm(path)?),
        Some("raw32") => Ok(load_rawf32(path)?),
        other => Err(config_err(format!(
            "unsupported input extension {other:?} (expected .pgm or .raw32)"
        ))),
    }
}

/// Degrade, solve, and write trace CSV, restored image, and a summary row.
/// Deterministic per config + seed.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport, ExperimentError> {
    let image = load_input(&config.input)?;
    let degradation = degrade(
        &image,
        config.task,
        config.sigma,
        config.seed,
        config.mask_kind,
        config.mask_fraction,
    )?;
    let (solve, report) = run_on_degradation(config, &degradation)?;

    std::fs::create_dir_all(&config.output_dir).map_err(IoError::from)?;
    let trace_path = config.output_dir.join("trace.csv");
    let mut trace_file = std::fs::File::create(&trace_path).map_err(IoError::from)?;
    write_trace_csv(&mut trace_file, &solve.trace.records)?;

    let restored_path = config.output_dir.join("restored.raw32");
    save_rawf32(&restored_path, &solve.x)?;
    if solve.x.shape().channels == 1 {
        save_pgm(&config.output_dir.join("restored.pgm"), &solve.x)?;
    }
    let summary_path = config.output_dir.join("summary.csv");
    let mut summary_file = std::fs::File::create(summary_path).map_err(IoError::from)?;
    write_summary_csv(&mut summary_file, std::slice::from_ref(&report.summary))?;

    Ok(ExperimentReport {
        trace_path,
        restored_path,
        ..report
    })
}

/// The solve stage of an experiment, shared by `run_experiment` and tests
/// that want the in-memory result.
pub fn run_on_degradation(
    config: &ExperimentConfig,
    degradation: &Degradation,
) -> Result<(SolveResult, ExperimentReport), ExperimentError> {
    let Degradation {
        y,
        a,
        reference,
        mask,
    } = degradation;

    let n0 = match config.n0_mode {
        N0Mode::Measurement => match mask {
            Some(m) => 2 * m.true_count(),
            None => y.len(),
        },
        N0Mode::Reconstruction => reference.len(),
    };
    let noise_scale = (n0 as f64 * config.sigma * config.sigma).sqrt();
    let (epsilon, radius) = match config.epsilon {
        Some(e) => (e, e * noise_scale),
        None => {
            // Table-style default: radius sqrt(n0 sigma^2) - 0.2
            let radius = (noise_scale - 0.2).max(0.0);
            let eps = if noise_scale > 0.0 {
                radius / noise_scale
            } else {
                1.0
            };
            (eps, radius)
        }
    };
    let q = ConvexSet::l2_ball(y.clone(), radius)?;
    let denoiser = config.denoiser.build(reference.shape(), config.sigma_f)?;
    let problem = SCFPProblem {
        a: a.clone(),
        q,
        denoiser,
        ground_truth: Some(reference.clone()),
    };
    let x0 = match config.task {
        Task::Csmri => problem.a.adjoint(y)?,
        _ => upsample_init(y, config.task.scale()),
    };
    let solve_config = SolveConfig {
        max_iters: config.max_iters,
        lambda: config.lambda,
        relax_floor: 1e-3,
        w: config.w,
        step_rule: config.step_rule,
        stop_tol: config.stop_tol,
        trace_every: config.trace_every,
        record_iterates: false,
        allow_unguarded: config.allow_unguarded,
        psnr_peak: config.peak,
    };
    let solve = match config.solver {
        SolverChoice::PnpPlo => pnp_plo(&problem, &solve_config, &x0)?,
        SolverChoice::RedSd => {
            red_sd(&problem, &solve_config, &x0, config.mu, config.lambda_reg)?
        }
        SolverChoice::RedPro => red_pro(&problem, &solve_config, &x0, config.step_rule)?,
        SolverChoice::PnpFbs => {
            let s = config.fbs_s.unwrap_or_else(|| {
                let n = crate::landweber::resolved_norm(&problem.a);
                1.0 / (n * n)
            });
            pnp_fbs(&problem, &solve_config, &x0, s)?
        }
    };

    let final_f = crate::landweber::fidelity(&problem.a, &problem.q, &solve.x)?;
    let final_psnr = psnr(reference, &solve.x, config.peak).ok();
    let degraded_psnr = if reference.shape() == x0.shape() {
        psnr(reference, &x0, config.peak).ok()
    } else {
        None
    };
    let step_rule_name = match config.step_rule {
        StepRule::TauExtrapolated => "tau".to_string(),
        StepRule::Polyak => "polyak".to_string(),
        StepRule::Constant(v) => format!("constant:{v}"),
        StepRule::Diminishing { mu0, exponent } => format!("diminishing:{mu0}:{exponent}"),
    };
    let report = ExperimentReport {
        summary: SummaryRow {
            task: config.task.name().to_string(),
            solver: config.solver.name().to_string(),
            step_rule: step_rule_name,
            w: config.w,
            epsilon,
            max_iters: config.max_iters,
            iters_run: solve.iters_run,
            final_f,
            final_psnr,
        },
        degraded_psnr,
        wall_ms: solve.wall_ms,
        trace_path: PathBuf::new(),
        restored_path: PathBuf::new(),
    };
    Ok((solve, report))
}

#[derive(Debug, Clone)]
pub struct GridEntryResult {
    pub index: usize,
    pub solver: String,
    pub report: Result<SummaryRow, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverAggregate {
    pub solver: String,
    pub runs: usize,
    pub failures: usize,
    pub average_psnr: Option<f64>,
    pub max_psnr: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct GridTable {
    pub entries: Vec<GridEntryResult>,
    pub per_solver: Vec<SolverAggregate>,
}

/// Runs every config (concurrently up to `workers`), recording individual
/// failures without aborting the grid, and aggregates average / max PSNR
/// per solver.
pub fn grid_search(configs: &[ExperimentConfig], workers: usize) -> GridTable {
    let queue: Mutex<VecDeque<(usize, ExperimentConfig)>> =
        Mutex::new(configs.iter().cloned().enumerate().collect());
    let results: Mutex<Vec<Option<GridEntryResult>>> = Mutex::new(vec![None; configs.len()]);
    let workers = workers.max(1).min(configs.len().max(1));

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let job = queue.lock().expect("queue lock").pop_front();
                let Some((index, config)) = job else { break };
                let solver = config.solver.name().to_string();
                let outcome = run_experiment(&config)
                    .map(|r| r.summary)
                    .map_err(|e| e.to_string());
                results.lock().expect("results lock")[index] = Some(GridEntryResult {
                    index,
                    solver,
                    report: outcome,
                });
            });
        }
    });

    let entries: Vec<GridEntryResult> = results
        .into_inner()
        .expect("results lock")
        .into_iter()
        .map(|r| r.expect("every index filled"))
        .collect();

    let mut solver_names: Vec<String> = entries.iter().map(|e| e.solver.clone()).collect();
    solver_names.sort();
    solver_names.dedup();
    let per_solver = solver_names
        .into_iter()
        .map(|name| {
            let mut psnrs = Vec::new();
            let mut runs = 0usize;
            let mut failures = 0usize;
            for e in entries.iter().filter(|e| e.solver == name) {
                runs += 1;
                match &e.report {
                    Ok(row) => {
                        if let Some(p) = row.final_psnr {
                            if p.is_finite() {
                                psnrs.push(p);
                            }
                        }
                    }
                    Err(_) => failures += 1,
                }
            }
            let average = if psnrs.is_empty() {
                None
            } else {
                Some(psnrs.iter().sum::<f64>() / psnrs.len() as f64)
            };
            let max = psnrs.iter().copied().fold(None, |m: Option<f64>, p| {
                Some(m.map_or(p, |m| m.max(p)))
            });
            SolverAggregate {
                solver: name,
                runs,
                failures,
                average_psnr: average,
                max_psnr: max,
            }
        })
        .collect();

    GridTable {
        entries,
        per_solver,
    }
}
