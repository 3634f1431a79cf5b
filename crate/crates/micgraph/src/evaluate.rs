//! Objective evaluation of a checkpoint over a manifest.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use log::{info, warn};
use micgraph_core::enhance::{enhance_waveform, EnhanceOptions};
use micgraph_core::metrics::{sdr, stoi, ConditionSummary, ExampleReport, MetricReport, Scores};
use micgraph_core::signal::SAMPLE_RATE;
use micgraph_core::Error;
use rayon::prelude::*;

use crate::checkpoint::Checkpoint;
use crate::dataset::load_example;
use crate::manifest::Manifest;
use crate::pesq::pesq_hook;

#[derive(Clone, Debug, Default)]
pub struct EvalOptions {
    pub enhance: EnhanceOptions,
    pub pesq_cmd: Option<String>,
}

fn score(est: &[f64], clean: &[f64], pesq_cmd: Option<&str>, what: &str) -> Result<Scores> {
    Ok(Scores {
        stoi: stoi(est, clean, SAMPLE_RATE).with_context(|| format!("STOI of {what}"))?,
        pesq: pesq_hook(pesq_cmd, est, clean, what),
        sdr: sdr(est, clean).with_context(|| format!("SDR of {what}"))?,
    })
}

/// Enhances every manifest entry and scores noisy and enhanced signals
/// against the clean target.
pub fn evaluate_manifest(ckpt: &Checkpoint, manifest: &Manifest, opts: &EvalOptions) -> Result<MetricReport> {
    if let Some(e) = manifest.entries.iter().find(|e| e.mics != ckpt.mics) {
        return Err(Error::ChannelMismatch { expected: ckpt.mics, got: e.mics })
            .with_context(|| format!("manifest entry {} does not match the checkpoint", e.id));
    }
    if opts.pesq_cmd.is_none() && !manifest.entries.is_empty() {
        warn!("no PESQ command configured; PESQ is reported as absent");
    }
    let pesq_cmd = opts.pesq_cmd.as_deref();
    let examples = manifest
        .entries
        .par_iter()
        .map(|entry| -> Result<ExampleReport> {
            let ex = load_example(manifest, entry)?;
            if ex.noisy.len() != ckpt.mics {
                return Err(Error::ChannelMismatch { expected: ckpt.mics, got: ex.noisy.len() })
                    .with_context(|| format!("audio of {}", entry.id));
            }
            let channels: Vec<Vec<f32>> = ex.noisy.iter().map(|c| c.iter().map(|&v| v as f32).collect()).collect();
            let out = enhance_waveform(&ckpt.model, &channels, ckpt.stft, &opts.enhance)?;
            let enhanced: Vec<f64> = out.samples.iter().map(|&v| f64::from(v)).collect();
            let reference = &ex.noisy[ckpt.model.config.ref_channel];
            Ok(ExampleReport {
                id: entry.id.clone(),
                condition: entry.condition(),
                noisy: score(reference, &ex.clean, pesq_cmd, &format!("{} (noisy)", entry.id))?,
                enhanced: score(&enhanced, &ex.clean, pesq_cmd, &format!("{} (enhanced)", entry.id))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    info!("evaluated {} mixtures", examples.len());
    Ok(MetricReport::new(examples))
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.2}"))
}

/// Plain-text table: one row per (geometry, mics, SNR) condition.
pub fn render_condition_table(rows: &[ConditionSummary]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<12} {:>4} {:>7} {:>5} | {:>6} {:>6} {:>7} | {:>6} {:>6} {:>7}",
        "geometry", "mics", "snr_db", "n", "STOI", "PESQ", "SDR", "STOI", "PESQ", "SDR"
    );
    let _ = writeln!(out, "{:<31} | {:^21} | {:^21}", "", "noisy", "enhanced");
    for r in rows {
        let _ = writeln!(
            out,
            "{:<12} {:>4} {:>7.1} {:>5} | {:>6.3} {:>6} {:>7.2} | {:>6.3} {:>6} {:>7.2}",
            r.condition.geometry,
            r.condition.mics,
            r.condition.snr_db,
            r.count,
            r.noisy.stoi,
            cell(r.noisy.pesq),
            r.noisy.sdr,
            r.enhanced.stoi,
            cell(r.enhanced.pesq),
            r.enhanced.sdr
        );
    }
    out
}

/// Writes `report.jsonl` (per example, then per condition) and `report.txt`.
pub fn write_report(report: &MetricReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut w = BufWriter::new(File::create(dir.join("report.jsonl"))?);
    for e in &report.examples {
        serde_json::to_writer(&mut w, &serde_json::json!({ "kind": "example", "example": e }))?;
        w.write_all(b"\n")?;
    }
    let summaries = report.summaries();
    for s in &summaries {
        serde_json::to_writer(&mut w, &serde_json::json!({ "kind": "condition", "summary": s }))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    std::fs::write(dir.join("report.txt"), render_condition_table(&summaries))?;
    Ok(())
}
