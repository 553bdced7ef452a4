//! File formats: 8-bit PGM (P5), the RAWF32 float container, and the
//! trace/summary CSV layouts.
//!
//! RAWF32 is an ASCII header `RAWF32 <rows> <cols> <channels>\n` followed
//! by little-endian f32 samples, row-major and channel-interleaved.
//! Saving narrows f64 to f32; loading widens exactly, so save/load
//! round-trips bit-exactly on f32-grade data.

use crate::signal::{Shape, Signal};
use crate::solvers::TraceRecord;
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("malformed {format} data: {reason}")]
    Parse {
        format: &'static str,
        reason: String,
    },
}

fn parse_err(format: &'static str, reason: impl Into<String>) -> IoError {
    IoError::Parse {
        format,
        reason: reason.into(),
    }
}

// -- PGM (P5, 8-bit grayscale) ------------------------------------------

/// Quantization used when narrowing to 8 bits: round half away from zero,
/// then clamp into [0, 255].
pub fn quantize_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

pub fn write_pgm(out: &mut impl Write, image: &Signal) -> Result<(), IoError> {
    let shape = image.shape();
    if shape.channels != 1 {
        return Err(parse_err(
            "PGM",
            format!("PGM is single-channel, got {} channels", shape.channels),
        ));
    }
    write!(out, "P5\n{} {}\n255\n", shape.cols, shape.rows)?;
    let bytes: Vec<u8> = image.data().iter().map(|&v| quantize_u8(v)).collect();
    out.write_all(&bytes)?;
    Ok(())
}

pub fn read_pgm(input: &mut impl Read) -> Result<Signal, IoError> {
    let mut raw = Vec::new();
    input.read_to_end(&mut raw)?;
    let mut pos = 0usize;

    let mut next_token = |raw: &[u8]| -> Result<String, IoError> {
        // skip whitespace and # comments
        loop {
            while pos < raw.len() && raw[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < raw.len() && raw[pos] == b'#' {
                while pos < raw.len() && raw[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < raw.len() && !raw[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(parse_err("PGM", "unexpected end of header"));
        }
        Ok(String::from_utf8_lossy(&raw[start..pos]).into_owned())
    };

    if next_token(&raw)? != "P5" {
        return Err(parse_err("PGM", "missing P5 magic"));
    }
    let cols: usize = next_token(&raw)?
        .parse()
        .map_err(|_| parse_err("PGM", "bad width"))?;
    let rows: usize = next_token(&raw)?
        .parse()
        .map_err(|_| parse_err("PGM", "bad height"))?;
    let maxval: usize = next_token(&raw)?
        .parse()
        .map_err(|_| parse_err("PGM", "bad maxval"))?;
    if maxval != 255 {
        return Err(parse_err("PGM", format!("unsupported maxval {maxval}")));
    }
    pos += 1; // single whitespace byte after maxval
    if raw.len() < pos + rows * cols {
        return Err(parse_err("PGM", "truncated payload"));
    }
    let data: Vec<f64> = raw[pos..pos + rows * cols]
        .iter()
        .map(|&b| b as f64)
        .collect();
    Signal::image(rows, cols, data).map_err(|e| parse_err("PGM", e.to_string()))
}

// -- RAWF32 ---------------------------------------------------------------

pub fn write_rawf32(out: &mut impl Write, signal: &Signal) -> Result<(), IoError> {
    let s = signal.shape();
    writeln!(out, "RAWF32 {} {} {}", s.rows, s.cols, s.channels)?;
    let mut bytes = Vec::with_capacity(4 * signal.len());
    for &v in signal.data() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out.write_all(&bytes)?;
    Ok(())
}

pub fn read_rawf32(input: &mut impl Read) -> Result<Signal, IoError> {
    let mut raw = Vec::new();
    input.read_to_end(&mut raw)?;
    let header_end = raw
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| parse_err("RAWF32", "missing header line"))?;
    let header = String::from_utf8_lossy(&raw[..header_end]);
    let mut parts = header.split_whitespace();
    if parts.next() != Some("RAWF32") {
        return Err(parse_err("RAWF32", "missing RAWF32 magic"));
    }
    let mut dim = |name: &str| -> Result<usize, IoError> {
        parts
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| parse_err("RAWF32", format!("bad {name}")))
    };
    let rows = dim("rows")?;
    let cols = dim("cols")?;
    let channels = dim("channels")?;
    let shape = Shape::new(rows, cols, channels);
    let payload = &raw[header_end + 1..];
    if payload.len() != 4 * shape.len() {
        return Err(parse_err(
            "RAWF32",
            format!(
                "payload is {} bytes, header implies {}",
                payload.len(),
                4 * shape.len()
            ),
        ));
    }
    let data: Vec<f64> = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
        .collect();
    Signal::new(shape, crate::signal::Domain::Real, data)
        .map_err(|e| parse_err("RAWF32", e.to_string()))
}

pub fn save_rawf32(path: &Path, signal: &Signal) -> Result<(), IoError> {
    let mut file = std::fs::File::create(path)?;
    write_rawf32(&mut file, signal)
}

pub fn load_rawf32(path: &Path) -> Result<Signal, IoError> {
    let mut file = std::fs::File::open(path)?;
    read_rawf32(&mut file)
}

pub fn save_pgm(path: &Path, image: &Signal) -> Result<(), IoError> {
    let mut file = std::fs::File::create(path)?;
    write_pgm(&mut file, image)
}

pub fn load_pgm(path: &Path) -> Result<Signal, IoError> {
    let mut file = std::fs::File::open(path)?;
    read_pgm(&mut file)
}

// -- CSV ------------------------------------------------------------------

pub const TRACE_HEADER: &str = "k,f,residual,step,dist_Q,denoiser_residual,psnr,wall_ms";
pub const SUMMARY_HEADER: &str =
    "task,solver,step_rule,w,epsilon,K,iters_run,final_f,final_psnr,wall_ms";

/// Writes the per-iteration trace. PSNR is an empty cell when no ground
/// truth was available. The wall_ms column is written as 0 so repeated
/// runs stay byte-identical; measured timing is reported separately.
pub fn write_trace_csv(out: &mut impl Write, records: &[TraceRecord]) -> Result<(), IoError> {
    writeln!(out, "{TRACE_HEADER}")?;
    for r in records {
        let psnr = match r.psnr {
            Some(p) => format!("{p}"),
            None => String::new(),
        };
        writeln!(
            out,
            "{},{},{},{},{},{},{},0",
            r.k, r.f, r.residual, r.step, r.dist_q, r.denoiser_residual, psnr
        )?;
    }
    Ok(())
}

/// One summary row per experiment, same determinism rule for wall_ms.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub task: String,
    pub solver: String,
    pub step_rule: String,
    pub w: f64,
    pub epsilon: f64,
    pub max_iters: usize,
    pub iters_run: usize,
    pub final_f: f64,
    pub final_psnr: Option<f64>,
}

pub fn write_summary_csv(out: &mut impl Write, rows: &[SummaryRow]) -> Result<(), IoError> {
    writeln!(out, "{SUMMARY_HEADER}")?;
    for r in rows {
        let psnr = match r.final_psnr {
            Some(p) => format!("{p}"),
            None => String::new(),
        };
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},0",
            r.task,
            r.solver,
            r.step_rule,
            r.w,
            r.epsilon,
            r.max_iters,
            r.iters_run,
            r.final_f,
            psnr
        )?;
    }
    Ok(())
}
