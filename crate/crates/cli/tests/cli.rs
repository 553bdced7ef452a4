//! End-to-end tests driving the `scfp` binary.

use scfp_core::io::save_pgm;
use scfp_core::rng::Rng;
use scfp_core::signal::Signal;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};

fn scfp() -> Command {
    Command::new(env!("CARGO_BIN_EXE_scfp"))
}

fn work_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("scfp_cli_{tag}_{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn synthetic_image(rows: usize, cols: usize, seed: u64) -> Signal {
    let mut rng = Rng::new(seed);
    let bumps: Vec<(f64, f64, f64, f64)> = (0..4)
        .map(|_| {
            (
                rng.next_f64() * rows as f64,
                rng.next_f64() * cols as f64,
                30.0 + 60.0 * rng.next_f64(),
                (rows.min(cols) as f64 / 6.0) * (0.5 + rng.next_f64()),
            )
        })
        .collect();
    let mut data = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let mut v = 90.0 + 40.0 * (c as f64 / cols as f64);
            for &(br, bc, amp, width) in &bumps {
                let d2 = (r as f64 - br).powi(2) + (c as f64 - bc).powi(2);
                v += amp * (-d2 / (2.0 * width * width)).exp();
            }
            data.push(v.clamp(0.0, 255.0));
        }
    }
    Signal::image(rows, cols, data).unwrap()
}

fn write_config(path: &Path, body: &str) {
    std::fs::write(path, body).unwrap();
}

#[test]
fn no_args_is_usage_error() {
    let out = scfp().output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_subcommand_exits_2() {
    let out = scfp().arg("frobnicate").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn help_exits_0() {
    let out = scfp().arg("--help").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    for sub in ["degrade", "solve", "grid", "estimate-alpha", "check-adjoint", "mock-denoiser"] {
        assert!(text.contains(sub), "usage missing {sub}");
    }
}

#[test]
fn malformed_config_exits_2() {
    let dir = work_dir("badcfg");
    let cfg = dir.join("bad.cfg");
    write_config(&cfg, "task = deblur_gaussian\nnot a key value line\n");
    let out = scfp().arg("solve").arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn degrade_then_solve_deterministically() {
    let dir = work_dir("solve");
    let input = dir.join("input.pgm");
    save_pgm(&input, &synthetic_image(32, 32, 7)).unwrap();
    let cfg = dir.join("run.cfg");
    write_config(
        &cfg,
        &format!(
            "task = deblur_gaussian\ninput = {}\noutput_dir = {}\nseed = 3\nk = 60\n\
             denoiser = lowpass:0.5\ntrace_every = 5\n",
            input.display(),
            dir.join("out").display()
        ),
    );

    let out = scfp().arg("degrade").arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.join("out/degraded.raw32").exists());
    assert!(dir.join("out/degraded.pgm").exists());

    let out = scfp().arg("solve").arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let trace1 = std::fs::read(dir.join("out/trace.csv")).unwrap();
    let restored1 = std::fs::read(dir.join("out/restored.raw32")).unwrap();
    let summary1 = std::fs::read(dir.join("out/summary.csv")).unwrap();
    assert!(String::from_utf8_lossy(&summary1).starts_with(
        "task,solver,step_rule,w,epsilon,K,iters_run,final_f,final_psnr,wall_ms"
    ));

    // re-run: byte-identical outputs
    let out = scfp().arg("solve").arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(trace1, std::fs::read(dir.join("out/trace.csv")).unwrap());
    assert_eq!(restored1, std::fs::read(dir.join("out/restored.raw32")).unwrap());
    assert_eq!(summary1, std::fs::read(dir.join("out/summary.csv")).unwrap());

    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn solve_with_external_mock_denoiser() {
    let dir = work_dir("external");
    let input = dir.join("input.pgm");
    save_pgm(&input, &synthetic_image(16, 16, 9)).unwrap();
    let cfg = dir.join("run.cfg");
    // the external peer is this very binary serving the protocol
    write_config(
        &cfg,
        &format!(
            "task = deblur_gaussian\ninput = {}\noutput_dir = {}\nseed = 1\nk = 5\n\
             denoiser = external:{} mock-denoiser --behavior identity\n\
             allow_unguarded = true\ntrace_every = 1\n",
            input.display(),
            dir.join("out").display(),
            env!("CARGO_BIN_EXE_scfp"),
        ),
    );
    let out = scfp().arg("solve").arg(&cfg).output().unwrap();
    assert_eq!(
        out.status.code(),
        Some(0),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(dir.join("out/restored.raw32").exists());
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn grid_reports_per_solver_aggregates() {
    let dir = work_dir("grid");
    let input = dir.join("input.pgm");
    save_pgm(&input, &synthetic_image(16, 16, 4)).unwrap();
    let mut cfgs = Vec::new();
    for (i, eps) in [0.9, 1.1].iter().enumerate() {
        let cfg = dir.join(format!("g{i}.cfg"));
        write_config(
            &cfg,
            &format!(
                "task = deblur_gaussian\ninput = {}\noutput_dir = {}\nseed = 2\nk = 25\n\
                 denoiser = lowpass:0.5\nepsilon = {eps}\ntrace_every = 5\n",
                input.display(),
                dir.join(format!("out{i}")).display()
            ),
        );
        cfgs.push(cfg);
    }
    let out = scfp()
        .arg("grid")
        .args(&cfgs)
        .args(["--workers", "2"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("solver,runs,failures,average_psnr,max_psnr"));
    let agg_line = text
        .lines()
        .find(|l| l.starts_with("pnp_plo,"))
        .expect("aggregate row");
    let fields: Vec<&str> = agg_line.split(',').collect();
    assert_eq!(fields[1], "2");
    assert_eq!(fields[2], "0");
    let avg: f64 = fields[3].parse().unwrap();
    let max: f64 = fields[4].parse().unwrap();
    assert!(max >= avg);
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn estimate_alpha_of_lowpass_projection() {
    let out = scfp()
        .args([
            "estimate-alpha",
            "--denoiser",
            "lowpass:0.5",
            "--rows",
            "8",
            "--cols",
            "8",
            "--pairs",
            "200",
            "--seed",
            "5",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    let line = text.lines().find(|l| l.starts_with("alpha_hat")).unwrap();
    let value: f64 = line
        .split('=')
        .nth(1)
        .unwrap()
        .split_whitespace()
        .next()
        .unwrap()
        .parse()
        .unwrap();
    assert!((value + 1.0).abs() < 1e-6, "alpha_hat {value}");
}

#[test]
fn check_adjoint_passes_on_shipped_operators() {
    for spec in [
        "identity:8x8",
        "conv:uniform:9:16x16",
        "conv:gaussian:9:1.6:16x16",
        "sr:7:1.6:3:12x12",
        "fourier:random:0.3:16x16:5",
        "dense:6:11",
    ] {
        let out = scfp()
            .args(["check-adjoint", "--op", spec, "--trials", "50"])
            .output()
            .unwrap();
        assert_eq!(
            out.status.code(),
            Some(0),
            "spec {spec}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        assert!(String::from_utf8_lossy(&out.stdout).contains("PASS"));
    }
}

#[test]
fn mock_denoiser_speaks_the_protocol() {
    let mut child = scfp()
        .args(["mock-denoiser", "--behavior", "half"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut stdin = child.stdin.take().unwrap();
    let mut stdout = child.stdout.take().unwrap();

    // one 1x2x1 request with samples [2.0, -4.0]
    let mut msg = Vec::new();
    msg.extend_from_slice(b"DNZ1");
    msg.extend_from_slice(&1u32.to_le_bytes());
    msg.extend_from_slice(&2u32.to_le_bytes());
    msg.extend_from_slice(&1u32.to_le_bytes());
    msg.extend_from_slice(&1.5f32.to_le_bytes());
    msg.extend_from_slice(&2.0f32.to_le_bytes());
    msg.extend_from_slice(&(-4.0f32).to_le_bytes());
    stdin.write_all(&msg).unwrap();
    stdin.flush().unwrap();

    let mut response = [0u8; 4 + 16 + 8];
    stdout.read_exact(&mut response).unwrap();
    assert_eq!(&response[0..4], b"DNR1");
    assert_eq!(&response[4..20], &msg[4..20]);
    let v0 = f32::from_le_bytes(response[20..24].try_into().unwrap());
    let v1 = f32::from_le_bytes(response[24..28].try_into().unwrap());
    assert_eq!(v0, 1.0);
    assert_eq!(v1, -2.0);

    drop(stdin); // EOF -> clean exit
    let status = child.wait().unwrap();
    assert_eq!(status.code(), Some(0));
}

#[test]
fn mock_denoiser_rejects_bad_magic() {
    let mut child = scfp()
        .args(["mock-denoiser", "--behavior", "identity"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child
        .stdin
        .take()
        .unwrap()
        .write_all(b"GARBAGE GARBAGE GARBAGE!")
        .unwrap();
    let out = child.wait_with_output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}
