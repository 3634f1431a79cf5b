//! Training runs over manifests: loss log, checkpoints, dev-loss early stopping.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use log::{error, info};
use micgraph_core::model::Model;
use micgraph_core::train::{make_batch, tile_picks, TrainExample, Trainer};
use micgraph_core::Error;

use crate::checkpoint::Checkpoint;
use crate::config::Settings;
use crate::dataset::load_training_examples;
use crate::manifest::Manifest;

pub const LOSS_LOG: &str = "loss.csv";
pub const LAST_CHECKPOINT: &str = "last.safetensors";
pub const BEST_CHECKPOINT: &str = "best.safetensors";

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// `(step, loss)` for every update of this run.
    pub losses: Vec<(u64, f64)>,
    pub dev_losses: Vec<(u64, f64)>,
    pub best_dev: Option<f64>,
    pub stopped_early: bool,
    pub last: PathBuf,
    pub best: Option<PathBuf>,
}

/// Microphone count shared by every entry.
pub fn manifest_mics(manifest: &Manifest) -> Result<usize> {
    let first = manifest.entries.first().map(|e| e.mics).context("manifest has no entries")?;
    if let Some(e) = manifest.entries.iter().find(|e| e.mics != first) {
        bail!("manifest mixes microphone counts: {} has {}, others {first}", e.id, e.mics);
    }
    Ok(first)
}

/// Mean evaluation-mode loss over tiled dev chunks.
pub fn dev_loss(trainer: &Trainer<f32>, dev: &[TrainExample<f32>]) -> Result<f64> {
    let cfg = &trainer.config;
    let picks = tile_picks(dev, cfg.chunk_len, cfg.dev_chunks.max(1));
    let mut total = 0.0;
    for group in picks.chunks(cfg.batch) {
        let batch = make_batch(dev, group, cfg.chunk_len)?;
        total += trainer.eval_loss(&batch)? * group.len() as f64;
    }
    Ok(total / picks.len() as f64)
}

struct LossLog {
    out: BufWriter<File>,
}

impl LossLog {
    fn open(path: &Path, append: bool) -> Result<Self> {
        let fresh = !append || !path.exists();
        let file = OpenOptions::new()
            .create(true)
            .append(!fresh)
            .write(true)
            .truncate(fresh)
            .open(path)
            .with_context(|| format!("cannot open {}", path.display()))?;
        let mut out = BufWriter::new(file);
        if fresh {
            writeln!(out, "step,loss,wall_time")?;
        }
        Ok(Self { out })
    }

    fn record(&mut self, step: u64, loss: f64, wall: f64) -> Result<()> {
        writeln!(self.out, "{step},{loss},{wall:.3}")?;
        Ok(())
    }
}

/// Reads `(step, loss)` pairs back from a loss log.
pub fn read_loss_log(path: &Path) -> Result<Vec<(u64, f64)>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    text.lines()
        .skip(1)
        .map(|l| {
            let mut f = l.split(',');
            let step = f.next().context("empty line")?.parse()?;
            let loss = f.next().context("missing loss")?.parse()?;
            Ok((step, loss))
        })
        .collect()
}

/// Trains on `train` (optionally resuming from a checkpoint) and writes
/// `loss.csv`, `last.safetensors` and, with a dev set, `best.safetensors`
/// into `out`.
pub fn run_training(
    settings: &Settings,
    train: &Manifest,
    dev: Option<&Manifest>,
    out: &Path,
    resume: Option<&Path>,
) -> Result<TrainOutcome> {
    std::fs::create_dir_all(out)?;
    let mics = manifest_mics(train)?;
    let (mut trainer, stft, mut best_dev) = match resume {
        Some(path) => {
            let ckpt = Checkpoint::load(path)?;
            if ckpt.mics != mics {
                bail!("checkpoint was trained with {} microphones, manifest has {mics}", ckpt.mics);
            }
            info!("resuming from {} at step {}", path.display(), ckpt.step());
            let (stft, best) = (ckpt.stft, ckpt.best_dev);
            let mut t = ckpt.into_trainer()?;
            // the schedule may be extended; optimization settings stay as saved
            t.config.steps = settings.train.steps;
            t.config.checkpoint_every = settings.train.checkpoint_every;
            t.config.dev_every = settings.train.dev_every;
            t.config.patience = settings.train.patience;
            (t, stft, best)
        }
        None => {
            let model = Model::<f32>::new(settings.model.clone(), settings.train.seed)?;
            info!("model has {} parameters", model.param_count());
            (Trainer::new(model, settings.train.clone())?, settings.stft, None)
        }
    };
    if trainer.model.config.ref_channel >= mics {
        return Err(Error::Config(format!("ref_channel {} needs more than {mics} microphones", trainer.model.config.ref_channel)).into());
    }
    let examples = load_training_examples(train, &stft, Some(mics))?;
    let dev_examples = match dev {
        Some(d) if trainer.config.dev_every > 0 && !d.entries.is_empty() => Some(load_training_examples(d, &stft, Some(mics))?),
        _ => None,
    };
    info!("training on {} mixtures ({} microphones)", examples.len(), mics);

    let mut log = LossLog::open(&out.join(LOSS_LOG), resume.is_some())?;
    let last = out.join(LAST_CHECKPOINT);
    let best_path = out.join(BEST_CHECKPOINT);
    let mut outcome = TrainOutcome {
        losses: Vec::new(),
        dev_losses: Vec::new(),
        best_dev,
        stopped_early: false,
        last: last.clone(),
        best: None,
    };
    let mut stale = 0;
    let start = Instant::now();
    while trainer.step() < trainer.config.steps {
        let batch = trainer.next_batch(&examples)?;
        let loss = match trainer.train_step(&batch) {
            Ok(l) => l,
            Err(Error::Diverged(step)) => {
                error!("training diverged: non-finite loss at step {step}");
                log.out.flush()?;
                return Err(Error::Diverged(step).into());
            }
            Err(e) => return Err(e.into()),
        };
        let step = trainer.step();
        log.record(step, loss, start.elapsed().as_secs_f64())?;
        outcome.losses.push((step, loss));
        let cfg = &trainer.config;
        if cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 {
            log.out.flush()?;
            Checkpoint::from_trainer(&trainer, stft, mics, best_dev).save(&last)?;
        }
        if let Some(dev_ex) = &dev_examples {
            if step % cfg.dev_every == 0 {
                let d = dev_loss(&trainer, dev_ex)?;
                outcome.dev_losses.push((step, d));
                info!("step {step}: train loss {loss:.5}, dev loss {d:.5}");
                if best_dev.is_none_or(|b| d < b) {
                    best_dev = Some(d);
                    stale = 0;
                    Checkpoint::from_trainer(&trainer, stft, mics, best_dev).save(&best_path)?;
                    outcome.best = Some(best_path.clone());
                } else {
                    stale += 1;
                    if trainer.config.patience > 0 && stale >= trainer.config.patience {
                        info!("no dev improvement in {stale} evaluations; stopping at step {step}");
                        outcome.stopped_early = true;
                        break;
                    }
                }
            }
        }
        if step % 50 == 0 {
            info!("step {step}: loss {loss:.5}");
        }
    }
    log.out.flush()?;
    Checkpoint::from_trainer(&trainer, stft, mics, best_dev).save(&last)?;
    outcome.best_dev = best_dev;
    if outcome.best.is_none() && best_path.exists() {
        outcome.best = Some(best_path);
    }
    Ok(outcome)
}
