//! Command-line front end.
//!
//! Exit codes: 0 on success, 2 on usage or configuration errors, 1 on
//! runtime failures.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;
use micgraph_core::sim::Split;

use crate::ablate::{run_ablation, Grid};
use crate::checkpoint::Checkpoint;
use crate::config::{key_reference, ConfigError, Settings};
use crate::dataset::generate_split;
use crate::evaluate::{evaluate_manifest, render_condition_table, write_report, EvalOptions};
use crate::infer::enhance_file;
use crate::manifest::Manifest;
use crate::training::run_training;

#[derive(Parser, Debug)]
#[command(name = "micgraph", version = env!("CARGO_PKG_VERSION"), about = "Multi-channel speech enhancement with a graph-convolutional U-Net")]
#[command(after_long_help = key_reference())]
pub struct Cli {
    /// More log output (-v debug, -vv trace).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    /// Only warnings and errors.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
struct ConfigArgs {
    /// Flat `key = value` config file (see `--help` for keys and defaults).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key; beats the config file. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate multi-channel mixtures and write per-split manifests.
    Simulate {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Output directory for audio and `<split>.jsonl` manifests.
        #[arg(long)]
        out: PathBuf,
        /// Splits to generate.
        #[arg(long, value_delimiter = ',', default_value = "train,dev,test")]
        splits: Vec<String>,
    },
    /// Train a model; writes loss.csv and checkpoints into --out.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        train_manifest: PathBuf,
        /// Dev manifest for best-checkpoint selection and early stopping.
        #[arg(long)]
        dev_manifest: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Continue from a checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Score noisy and enhanced signals of a manifest (STOI, SDR, optional PESQ).
    Evaluate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Directory for report.jsonl and report.txt (default: next to the manifest).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Bypass the network with a 1+0i mask.
        #[arg(long)]
        identity_mask: bool,
        /// External PESQ command, run as `<cmd> <ref.wav> <deg.wav>`.
        #[arg(long)]
        pesq_cmd: Option<String>,
    },
    /// Enhance a multi-channel WAV into a mono WAV.
    Enhance {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Write the learned channel adjacency matrices as JSON.
        #[arg(long)]
        dump_adjacency: Option<PathBuf>,
    },
    /// Train and evaluate every cell of a one-axis grid file.
    Ablate {
        /// Config lines plus `grid.<key> = v1 | v2 | ...`.
        #[arg(long)]
        grid: PathBuf,
        /// Overrides the grid file's `train_manifest`.
        #[arg(long)]
        train_manifest: Option<PathBuf>,
        /// Overrides the grid file's `dev_manifest`.
        #[arg(long)]
        dev_manifest: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Override a config key of every cell. Repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
}

fn load_settings(cfg: &ConfigArgs) -> Result<Settings, ConfigError> {
    Settings::load(cfg.config.as_deref(), &cfg.overrides)
}

/// Reproducibility header: version, seeds and every effective setting.
fn log_header(command: &str, settings: &Settings) {
    info!("micgraph {} {command}", crate::version());
    info!("seed {} (simulation seed {})", settings.train.seed, settings.sim.seed);
    for line in settings.render().lines() {
        info!("  {line}");
    }
}

fn split_by_name(name: &str) -> Result<Split, ConfigError> {
    Split::ALL
        .into_iter()
        .find(|s| s.name() == name)
        .ok_or_else(|| ConfigError::Invalid(format!("unknown split `{name}` (expected train, dev or test)")))
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Simulate { cfg, out, splits } => {
            let settings = load_settings(&cfg)?;
            let splits = splits.iter().map(|s| split_by_name(s)).collect::<Result<Vec<_>, _>>()?;
            log_header("simulate", &settings);
            std::fs::create_dir_all(&out)?;
            std::fs::write(out.join("config.txt"), settings.render())?;
            for split in splits {
                let m = generate_split(&settings.sim, split, &out)?;
                info!("wrote {} ({} mixtures)", out.join(format!("{}.jsonl", split.name())).display(), m.entries.len());
            }
        }
        Command::Train { cfg, train_manifest, dev_manifest, out, resume } => {
            let settings = load_settings(&cfg)?;
            log_header("train", &settings);
            let train = Manifest::read(&train_manifest)?;
            let dev = dev_manifest.as_deref().map(Manifest::read).transpose()?;
            std::fs::create_dir_all(&out)?;
            std::fs::write(out.join("config.txt"), settings.render())?;
            let o = run_training(&settings, &train, dev.as_ref(), &out, resume.as_deref())?;
            let last = o.losses.last().map_or(f64::NAN, |l| l.1);
            info!("finished after {} steps this run; last loss {last:.5}; best dev {:?}", o.losses.len(), o.best_dev);
        }
        Command::Evaluate { cfg, checkpoint, manifest, out, identity_mask, pesq_cmd } => {
            let settings = load_settings(&cfg)?;
            log_header("evaluate", &settings);
            let ckpt = Checkpoint::load(&checkpoint)?;
            let m = Manifest::read(&manifest)?;
            let mut enhance = settings.enhance;
            enhance.identity_mask |= identity_mask;
            let opts = EvalOptions { enhance, pesq_cmd: pesq_cmd.or(settings.pesq_cmd) };
            let report = evaluate_manifest(&ckpt, &m, &opts)?;
            let dir = out.unwrap_or_else(|| manifest.parent().unwrap_or(Path::new(".")).to_path_buf());
            write_report(&report, &dir)?;
            print!("{}", render_condition_table(&report.summaries()));
        }
        Command::Enhance { cfg, checkpoint, input, out, dump_adjacency } => {
            let settings = load_settings(&cfg)?;
            log_header("enhance", &settings);
            let ckpt = Checkpoint::load(&checkpoint)?;
            enhance_file(&ckpt, &input, &out, &settings.enhance, dump_adjacency.as_deref())?;
            info!("wrote {}", out.display());
        }
        Command::Ablate { grid, train_manifest, dev_manifest, out, overrides } => {
            let text = std::fs::read_to_string(&grid).with_context(|| format!("cannot read {}", grid.display()))?;
            let g = Grid::parse(&text, &grid.display().to_string(), &overrides)?;
            log_header("ablate", &g.base);
            info!("sweeping {} over {:?}", g.key, g.values);
            // manifest paths in the grid file are relative to the grid file
            let rel = |p: PathBuf| if p.is_absolute() { p } else { grid.parent().unwrap_or(Path::new(".")).join(p) };
            let train = train_manifest
                .or(g.train_manifest.clone().map(rel))
                .ok_or_else(|| ConfigError::Invalid("no train manifest (grid key `train_manifest` or --train-manifest)".into()))?;
            let dev = dev_manifest
                .or(g.dev_manifest.clone().map(rel))
                .ok_or_else(|| ConfigError::Invalid("no dev manifest (grid key `dev_manifest` or --dev-manifest)".into()))?;
            std::fs::create_dir_all(&out)?;
            let result = run_ablation(&g, &Manifest::read(&train)?, &Manifest::read(&dev)?, &out)?;
            print!("{}", result.render());
        }
    }
    Ok(())
}

fn is_usage_error(e: &anyhow::Error) -> bool {
    e.chain().any(|c| {
        c.is::<ConfigError>() || matches!(c.downcast_ref::<micgraph_core::Error>(), Some(micgraph_core::Error::Config(_)))
    })
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = match (cli.quiet, cli.verbose) {
        (true, _) => "warn",
        (false, 0) => "info",
        (false, 1) => "debug",
        _ => "trace",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).format_timestamp_secs().try_init();
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            log::error!("{e:#}");
            eprintln!("error: {e:#}");
            if is_usage_error(&e) {
                2
            } else {
                1
            }
        }
    }
}
