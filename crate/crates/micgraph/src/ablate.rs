//! One-axis ablation grids: train each cell, evaluate on the dev set, and
//! tabulate the results next to the unprocessed mixtures.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::info;
use micgraph_core::loss::LossVariant;
use micgraph_core::metrics::Scores;
use serde::Serialize;

use crate::checkpoint::Checkpoint;
use crate::config::{ConfigError, Settings};
use crate::evaluate::{evaluate_manifest, EvalOptions};
use crate::manifest::Manifest;
use crate::training::{run_training, TrainOutcome};

/// Base settings plus the swept key and its values.
#[derive(Clone, Debug)]
pub struct Grid {
    pub base: Settings,
    pub key: String,
    pub values: Vec<String>,
    pub train_manifest: Option<PathBuf>,
    pub dev_manifest: Option<PathBuf>,
}

impl Grid {
    /// Parses a grid file: ordinary config lines, `train_manifest` /
    /// `dev_manifest` paths, and exactly one `grid.<key> = v1 | v2 | ...`.
    pub fn parse(text: &str, origin: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut base = Settings::default();
        let held = base.apply_text(text, origin, &["grid.", "train_manifest", "dev_manifest"])?;
        base.apply_overrides(overrides)?;
        let mut axis = None;
        let (mut train_manifest, mut dev_manifest) = (None, None);
        for (k, v) in held {
            match k.as_str() {
                "train_manifest" => train_manifest = Some(PathBuf::from(v)),
                "dev_manifest" => dev_manifest = Some(PathBuf::from(v)),
                _ => {
                    let key = k.trim_start_matches("grid.").to_string();
                    if axis.is_some() {
                        return Err(ConfigError::Invalid(format!("grid sweeps more than one key (second: `{key}`)")));
                    }
                    let values: Vec<String> = v.split('|').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
                    axis = Some((key, values));
                }
            }
        }
        let (key, values) = axis.ok_or_else(|| ConfigError::Invalid("grid file has no `grid.<key> = ...` line".into()))?;
        if values.is_empty() {
            return Err(ConfigError::Invalid(format!("grid.{key} lists no values")));
        }
        // every cell must be a valid configuration before anything runs
        for v in &values {
            let mut s = base.clone();
            s.set(&key, v)?;
            s.validate()?;
        }
        base.validate()?;
        Ok(Self { base, key, values, train_manifest, dev_manifest })
    }

    pub fn cell(&self, value: &str) -> Settings {
        let mut s = self.base.clone();
        s.set(&self.key, value).expect("validated in parse");
        s
    }
}

/// Row label in the comparison table.
pub fn row_label(key: &str, value: &str) -> String {
    match key {
        "gcn_enabled" => match value {
            "true" => "w/ GCN".into(),
            _ => "w/o GCN".into(),
        },
        "loss" => value.parse::<LossVariant>().map_or_else(|_| value.to_string(), |l| l.label().to_string()),
        _ => format!("{key}={value}"),
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct AblationRow {
    pub label: String,
    pub value: String,
    pub scores: Scores,
    pub checkpoint: PathBuf,
    /// Parameter names of the trained model, for group comparisons.
    pub param_names: Vec<String>,
    #[serde(skip)]
    pub outcome: Option<TrainOutcome>,
}

#[derive(Clone, Debug, Serialize)]
pub struct AblationResult {
    pub key: String,
    pub noisy: Scores,
    pub rows: Vec<AblationRow>,
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.2}"))
}

impl AblationResult {
    /// `Method | PESQ | STOI | SDR` with the unprocessed mixtures first.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<14} | {:>6} | {:>6} | {:>7}", "Method", "PESQ", "STOI", "SDR");
        let mut row = |label: &str, s: &Scores| {
            let _ = writeln!(out, "{:<14} | {:>6} | {:>6.3} | {:>7.2}", label, cell(s.pesq), s.stoi, s.sdr);
        };
        row("Noisy", &self.noisy);
        for r in &self.rows {
            row(&r.label, &r.scores);
        }
        out
    }
}

fn safe_name(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' }).collect()
}

/// Trains and evaluates every cell under `out/<index>_<key>_<value>/`.
pub fn run_ablation(grid: &Grid, train: &Manifest, dev: &Manifest, out: &Path) -> Result<AblationResult> {
    if dev.entries.is_empty() {
        bail!("ablation needs a non-empty dev manifest");
    }
    let mut rows = Vec::new();
    let mut noisy = None;
    for (i, value) in grid.values.iter().enumerate() {
        let settings = grid.cell(value);
        let dir = out.join(format!("{i:02}_{}_{}", safe_name(&grid.key), safe_name(value)));
        info!("ablation cell {}/{}: {} = {value}", i + 1, grid.values.len(), grid.key);
        let outcome = run_training(&settings, train, Some(dev), &dir, None)?;
        let ckpt_path = outcome.best.clone().unwrap_or_else(|| outcome.last.clone());
        let ckpt = Checkpoint::load(&ckpt_path)?;
        let opts = EvalOptions { enhance: settings.enhance, pesq_cmd: settings.pesq_cmd.clone() };
        let report = evaluate_manifest(&ckpt, dev, &opts).with_context(|| format!("evaluating cell {value}"))?;
        let (n, e) = report.overall().context("empty evaluation")?;
        noisy.get_or_insert(n);
        rows.push(AblationRow {
            label: row_label(&grid.key, value),
            value: value.clone(),
            scores: e,
            checkpoint: ckpt_path,
            param_names: ckpt.model.params.keys().cloned().collect(),
            outcome: Some(outcome),
        });
    }
    let result = AblationResult { key: grid.key.clone(), noisy: noisy.expect("at least one cell"), rows };
    std::fs::write(out.join("ablation.txt"), result.render())?;
    std::fs::write(out.join("ablation.json"), serde_json::to_string_pretty(&result)?)?;
    Ok(result)
}
