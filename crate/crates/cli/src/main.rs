//! `scfp` — batch front end for the split-feasibility solver toolkit.
//!
//! Subcommands: degrade, solve, estimate-alpha, grid, check-adjoint,
//! mock-denoiser. Exit status: 0 success, 1 numerical failure, 2 I/O,
//! configuration, or protocol failure.

use scfp_core::denoisers::{estimate_alpha, MockBehavior};
use scfp_core::experiments::{
    degrade, grid_search, parse_config, run_experiment, DenoiserSpec, ExperimentConfig,
    ExperimentError,
};
use scfp_core::io::{save_pgm, save_rawf32};
use scfp_core::operators::{
    adjoint_check, build_conv2d_circular, build_dense_square, build_downsample_blur,
    build_masked_fourier, identity, make_mask, op_norm_estimate, Kernel, LinearOperator,
    MaskKind,
};
use scfp_core::rng::{derive_seed, Rng};
use scfp_core::signal::{Shape, Signal};
use std::process::ExitCode;

const USAGE: &str = "\
scfp — split convex feasibility solvers for inverse imaging

USAGE:
    scfp degrade <config>                build the task operator and write the degraded data
    scfp solve <config>                  degrade, solve, and write trace/restored/summary files
    scfp grid <config>... [--workers N]  run several configs and report average/max PSNR per solver
    scfp estimate-alpha --denoiser <spec> --rows R --cols C [options]
                                         estimate the demicontraction constant of a denoiser
    scfp check-adjoint --op <spec> [--trials N] [--tol T]
                                         verify <A x, u> = <x, A* u> and the operator norm
    scfp mock-denoiser --behavior identity|half
                                         serve the external-denoiser protocol on stdin/stdout

Config files are flat `key = value` text; see the project README for keys.
Operator specs for check-adjoint:
    identity:RxC             conv:uniform:SIZE:RxC          conv:gaussian:SIZE:SIGMA:RxC
    sr:SIZE:SIGMA:SCALE:RxC  fourier:KIND:FRACTION:RxC:SEED dense:N:SEED
";

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let Some(command) = args.first() else {
        eprint!("{USAGE}");
        return ExitCode::from(2);
    };
    let rest = &args[1..];
    let outcome = match command.as_str() {
        "degrade" => cmd_degrade(rest),
        "solve" => cmd_solve(rest),
        "grid" => cmd_grid(rest),
        "estimate-alpha" => cmd_estimate_alpha(rest),
        "check-adjoint" => cmd_check_adjoint(rest),
        "mock-denoiser" => cmd_mock_denoiser(rest),
        "--help" | "-h" | "help" => {
            print!("{USAGE}");
            return ExitCode::SUCCESS;
        }
        other => {
            eprintln!("unknown subcommand '{other}'");
            eprint!("{USAGE}");
            return ExitCode::from(2);
        }
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn usage_err(msg: impl Into<String>) -> ExperimentError {
    ExperimentError::Config(msg.into())
}

fn load_config(path: &str) -> Result<ExperimentConfig, ExperimentError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| usage_err(format!("cannot read config '{path}': {e}")))?;
    parse_config(&text)
}

fn cmd_degrade(args: &[String]) -> Result<(), ExperimentError> {
    let [config_path] = args else {
        return Err(usage_err("usage: scfp degrade <config>"));
    };
    let config = load_config(config_path)?;
    let image = match config.input.extension().and_then(|e| e.to_str()) {
        Some("pgm") => scfp_core::io::load_pgm(&config.input)?,
        Some("raw32") => scfp_core::io::load_rawf32(&config.input)?,
        _ => return Err(usage_err("input must be .pgm or .raw32")),
    };
    let d = degrade(
        &image,
        config.task,
        config.sigma,
        config.seed,
        config.mask_kind,
        config.mask_fraction,
    )?;
    std::fs::create_dir_all(&config.output_dir).map_err(scfp_core::io::IoError::from)?;
    let y_path = config.output_dir.join("degraded.raw32");
    save_rawf32(&y_path, &d.y)?;
    if d.y.shape().channels == 1 {
        save_pgm(&config.output_dir.join("degraded.pgm"), &d.y)?;
    }
    save_rawf32(&config.output_dir.join("reference.raw32"), &d.reference)?;
    println!(
        "task {} input {} -> measurement {} (norm bound {})",
        config.task.name(),
        image.shape(),
        d.y.shape(),
        d.a.norm_bound()
            .map_or("unknown".to_string(), |b| format!("{b:.6}"))
    );
    if let Some(mask) = &d.mask {
        println!(
            "mask {} fraction {:.4} ({} cells)",
            mask.kind(),
            mask.fraction(),
            mask.true_count()
        );
    }
    println!("wrote {}", y_path.display());
    Ok(())
}

fn cmd_solve(args: &[String]) -> Result<(), ExperimentError> {
    let [config_path] = args else {
        return Err(usage_err("usage: scfp solve <config>"));
    };
    let config = load_config(config_path)?;
    let report = run_experiment(&config)?;
    let s = &report.summary;
    println!(
        "task {} solver {} step {} w {} epsilon {:.6}",
        s.task, s.solver, s.step_rule, s.w, s.epsilon
    );
    if let Some(p) = report.degraded_psnr {
        println!("degraded psnr {p:.4} dB");
    }
    match s.final_psnr {
        Some(p) => println!(
            "finished after {} iterations: f = {:.6e}, psnr = {:.4} dB ({:.1} ms)",
            s.iters_run, s.final_f, p, report.wall_ms
        ),
        None => println!(
            "finished after {} iterations: f = {:.6e} ({:.1} ms)",
            s.iters_run, s.final_f, report.wall_ms
        ),
    }
    println!("wrote {}", report.trace_path.display());
    println!("wrote {}", report.restored_path.display());
    Ok(())
}

fn cmd_grid(args: &[String]) -> Result<(), ExperimentError> {
    let mut configs = Vec::new();
    let mut workers = std::thread::available_parallelism().map_or(2, |n| n.get());
    let mut it = args.iter();
    while let Some(arg) = it.next() {
        if arg == "--workers" {
            workers = it
                .next()
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| usage_err("--workers needs a positive integer"))?;
        } else {
            configs.push(load_config(arg)?);
        }
    }
    if configs.is_empty() {
        return Err(usage_err("usage: scfp grid <config>... [--workers N]"));
    }
    let table = grid_search(&configs, workers);
    for entry in &table.entries {
        match &entry.report {
            Ok(row) => println!(
                "entry {}: {} {} -> psnr {}",
                entry.index,
                row.task,
                row.solver,
                row.final_psnr
                    .map_or("n/a".to_string(), |p| format!("{p:.4}"))
            ),
            Err(msg) => println!("entry {}: {} FAILED: {msg}", entry.index, entry.solver),
        }
    }
    println!("solver,runs,failures,average_psnr,max_psnr");
    for agg in &table.per_solver {
        println!(
            "{},{},{},{},{}",
            agg.solver,
            agg.runs,
            agg.failures,
            agg.average_psnr
                .map_or(String::new(), |p| format!("{p:.4}")),
            agg.max_psnr.map_or(String::new(), |p| format!("{p:.4}"))
        );
    }
    let failed = table.entries.iter().filter(|e| e.report.is_err()).count();
    if failed == table.entries.len() {
        return Err(usage_err("every grid entry failed"));
    }
    Ok(())
}

fn cmd_estimate_alpha(args: &[String]) -> Result<(), ExperimentError> {
    let mut denoiser_spec: Option<String> = None;
    let mut rows = 16usize;
    let mut cols = 16usize;
    let mut channels = 1usize;
    let mut samples = 32usize;
    let mut pairs = 1000usize;
    let mut seed = 0u64;
    let mut quantile: Option<f64> = None;
    let mut scale = 1.0f64;
    let mut sigma_f = 0.0f64;
    let mut fix_files: Vec<String> = Vec::new();

    let mut it = args.iter();
    while let Some(arg) = it.next() {
        let mut value = |name: &str| -> Result<&String, ExperimentError> {
            it.next()
                .ok_or_else(|| usage_err(format!("{name} needs a value")))
        };
        match arg.as_str() {
            "--denoiser" => denoiser_spec = Some(value("--denoiser")?.clone()),
            "--rows" => rows = parse_arg(value("--rows")?)?,
            "--cols" => cols = parse_arg(value("--cols")?)?,
            "--channels" => channels = parse_arg(value("--channels")?)?,
            "--samples" => samples = parse_arg(value("--samples")?)?,
            "--pairs" => pairs = parse_arg(value("--pairs")?)?,
            "--seed" => seed = parse_arg(value("--seed")?)?,
            "--quantile" => quantile = Some(parse_arg(value("--quantile")?)?),
            "--scale" => scale = parse_arg(value("--scale")?)?,
            "--sigma-f" => sigma_f = parse_arg(value("--sigma-f")?)?,
            "--fix" => fix_files.push(value("--fix")?.clone()),
            other => return Err(usage_err(format!("unknown option '{other}'"))),
        }
    }
    let spec = DenoiserSpec::parse(
        &denoiser_spec.ok_or_else(|| usage_err("--denoiser <spec> is required"))?,
    )?;
    let shape = Shape::new(rows, cols, channels);
    let denoiser = match &spec {
        DenoiserSpec::Lowpass { cutoff } => {
            scfp_core::denoisers::build_lowpass_denoiser(shape, *cutoff)?
        }
        DenoiserSpec::Shrink { factor } => {
            scfp_core::denoisers::build_shrink_denoiser(shape, *factor)?
        }
        DenoiserSpec::External { command } => {
            scfp_core::denoisers::external_denoiser(&command[0], &command[1..], sigma_f)?
        }
    };
    let sample_signals: Vec<Signal> = (0..samples.max(1))
        .map(|i| Signal::gaussian(shape, derive_seed(seed, i as u64)).scale(scale))
        .collect();
    let est = if fix_files.is_empty() {
        estimate_alpha(
            &denoiser,
            &sample_signals,
            pairs,
            derive_seed(seed, 777),
            quantile,
        )?
    } else {
        // fixed points supplied as files (clean data an external denoiser
        // is believed to leave untouched)
        let fixed: Vec<Signal> = fix_files
            .iter()
            .map(|p| scfp_core::io::load_rawf32(std::path::Path::new(p)))
            .collect::<Result<_, _>>()?;
        scfp_core::denoisers::estimate_alpha_against(
            &denoiser,
            &sample_signals,
            &fixed,
            pairs,
            quantile,
        )?
    };
    println!(
        "alpha_hat = {:.10} (pairs used {}, skipped {})",
        est.alpha_hat, est.pairs_used, est.pairs_skipped
    );
    if let Some(advertised) = denoiser.alpha() {
        println!("advertised alpha = {advertised}");
    }
    Ok(())
}

fn parse_arg<T: std::str::FromStr>(value: &str) -> Result<T, ExperimentError> {
    value
        .parse()
        .map_err(|_| usage_err(format!("cannot parse '{value}'")))
}

fn parse_dims(token: &str) -> Result<(usize, usize), ExperimentError> {
    let (r, c) = token
        .split_once('x')
        .ok_or_else(|| usage_err(format!("expected RxC dims, got '{token}'")))?;
    Ok((parse_arg(r)?, parse_arg(c)?))
}

fn parse_operator(spec: &str) -> Result<LinearOperator, ExperimentError> {
    let parts: Vec<&str> = spec.split(':').collect();
    let op = match parts.as_slice() {
        ["identity", dims] => {
            let (r, c) = parse_dims(dims)?;
            identity(Shape::new(r, c, 1))
        }
        ["conv", "uniform", size, dims] => {
            let (r, c) = parse_dims(dims)?;
            build_conv2d_circular(Kernel::uniform(parse_arg(size)?)?, Shape::new(r, c, 1))?
        }
        ["conv", "gaussian", size, sigma, dims] => {
            let (r, c) = parse_dims(dims)?;
            build_conv2d_circular(
                Kernel::gaussian(parse_arg(size)?, parse_arg(sigma)?)?,
                Shape::new(r, c, 1),
            )?
        }
        ["sr", size, sigma, scale, dims] => {
            let (r, c) = parse_dims(dims)?;
            build_downsample_blur(
                Kernel::gaussian(parse_arg(size)?, parse_arg(sigma)?)?,
                Shape::new(r, c, 1),
                parse_arg(scale)?,
            )?
        }
        ["fourier", kind, fraction, dims, seed] => {
            let (r, c) = parse_dims(dims)?;
            let kind = match *kind {
                "random" => MaskKind::Random,
                "radial" => MaskKind::Radial,
                "cartesian" => MaskKind::Cartesian,
                other => return Err(usage_err(format!("unknown mask kind '{other}'"))),
            };
            build_masked_fourier(make_mask(
                kind,
                parse_arg(fraction)?,
                r,
                c,
                parse_arg(seed)?,
            )?)?
        }
        ["dense", n, seed] => {
            let n: usize = parse_arg(n)?;
            let mut rng = Rng::new(parse_arg(seed)?);
            let matrix: Vec<f64> = (0..n * n).map(|_| rng.next_gaussian()).collect();
            build_dense_square(n, matrix)?
        }
        _ => return Err(usage_err(format!("unrecognized operator spec '{spec}'"))),
    };
    Ok(op)
}

fn cmd_check_adjoint(args: &[String]) -> Result<(), ExperimentError> {
    let mut op_spec: Option<String> = None;
    let mut trials = 100usize;
    let mut tol = 1e-10f64;
    let mut it = args.iter();
    while let Some(arg) = it.next() {
        let mut value = |name: &str| -> Result<&String, ExperimentError> {
            it.next()
                .ok_or_else(|| usage_err(format!("{name} needs a value")))
        };
        match arg.as_str() {
            "--op" => op_spec = Some(value("--op")?.clone()),
            "--trials" => trials = parse_arg(value("--trials")?)?,
            "--tol" => tol = parse_arg(value("--tol")?)?,
            other => return Err(usage_err(format!("unknown option '{other}'"))),
        }
    }
    let op = parse_operator(&op_spec.ok_or_else(|| usage_err("--op <spec> is required"))?)?;
    let report = adjoint_check(&op, trials, tol);
    let est = op_norm_estimate(&op, 1e-10, 2000);
    println!(
        "adjoint check: worst violation {:.3e} over {} trials (tol {:.1e})",
        report.worst_violation, report.trials, tol
    );
    println!(
        "operator norm: estimate {:.10} in {} iterations{}",
        est.value,
        est.iterations,
        op.norm_bound()
            .map_or(String::new(), |b| format!(", declared bound {b:.10}"))
    );
    if report.pass {
        println!("PASS");
        Ok(())
    } else {
        println!("FAIL");
        Err(ExperimentError::Solve(
            scfp_core::solvers::SolveError::BadConfig("adjoint identity violated".into()),
        ))
    }
}

fn cmd_mock_denoiser(args: &[String]) -> Result<(), ExperimentError> {
    let mut behavior = MockBehavior::Identity;
    let mut it = args.iter();
    while let Some(arg) = it.next() {
        match arg.as_str() {
            "--behavior" => {
                let value = it
                    .next()
                    .ok_or_else(|| usage_err("--behavior needs a value"))?;
                behavior = match value.as_str() {
                    "identity" => MockBehavior::Identity,
                    "half" => MockBehavior::Half,
                    other => return Err(usage_err(format!("unknown behavior '{other}'"))),
                };
            }
            other => return Err(usage_err(format!("unknown option '{other}'"))),
        }
    }
    let stdin = std::io::stdin();
    let stdout = std::io::stdout();
    scfp_core::denoisers::serve_mock(behavior, stdin.lock(), stdout.lock()).map_err(|e| {
        ExperimentError::Denoise(scfp_core::denoisers::DenoiseError::Transport(format!(
            "mock peer: {e}"
        )))
    })
}
