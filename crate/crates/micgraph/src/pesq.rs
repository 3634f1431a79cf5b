//! Delegation of PESQ scoring to an external tool.

use std::process::Command;

use anyhow::{bail, Context, Result};
use log::warn;
use micgraph_core::signal::SAMPLE_RATE;

use crate::wav::{write_wav, Audio};

/// Runs `<cmd> <reference.wav> <degraded.wav>` and reads the last number it
/// prints as the score.
pub fn run_pesq(cmd: &str, estimate: &[f64], reference: &[f64]) -> Result<f64> {
    let mut parts = cmd.split_whitespace();
    let program = parts.next().context("empty PESQ command")?;
    let dir = tempfile::tempdir()?;
    let (ref_path, deg_path) = (dir.path().join("reference.wav"), dir.path().join("degraded.wav"));
    write_wav(&ref_path, &Audio::mono(SAMPLE_RATE, reference.to_vec()))?;
    write_wav(&deg_path, &Audio::mono(SAMPLE_RATE, estimate.to_vec()))?;
    let out = Command::new(program)
        .args(parts)
        .arg(&ref_path)
        .arg(&deg_path)
        .output()
        .with_context(|| format!("cannot run `{program}`"))?;
    if !out.status.success() {
        bail!("`{cmd}` exited with {}: {}", out.status, String::from_utf8_lossy(&out.stderr).trim());
    }
    let stdout = String::from_utf8_lossy(&out.stdout);
    stdout
        .split(|c: char| c.is_whitespace() || c == '=' || c == ',' || c == ':')
        .filter_map(|t| t.parse::<f64>().ok())
        .next_back()
        .with_context(|| format!("no score in output of `{cmd}`: {}", stdout.trim()))
}

/// Score or absent; failures are logged and never abort the caller.
pub fn pesq_hook(cmd: Option<&str>, estimate: &[f64], reference: &[f64], what: &str) -> Option<f64> {
    let cmd = cmd?;
    match run_pesq(cmd, estimate, reference) {
        Ok(v) => Some(v),
        Err(e) => {
            warn!("PESQ unavailable for {what}: {e:#}");
            None
        }
    }
}
