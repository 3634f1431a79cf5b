//! Chunked mini-batch training of the enhancement model.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{BatchStats, Tape};
use crate::error::{Error, Result};
use crate::loss::{record_loss, LossVariant};
use crate::model::{Mode, Model, INPUT_PLANES};
use crate::optim::{clip_global_norm, Adam, AdamConfig};
use crate::scalar::Scalar;
use crate::signal::{frames_to_samples, istft, ComplexSpectrogram, MultiChannelStack, StftParams};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Chunks per mini-batch.
    pub batch: usize,
    /// STFT frames per training chunk.
    pub chunk_len: usize,
    pub steps: u64,
    pub seed: u64,
    pub loss: LossVariant,
    /// Global gradient-norm clip; 0 disables it.
    pub clip_norm: f64,
    pub checkpoint_every: u64,
    /// Steps between dev-set evaluations; 0 disables them.
    pub dev_every: u64,
    /// Dev evaluations without improvement before stopping; 0 disables it.
    pub patience: usize,
    /// Upper bound on dev chunks scored per evaluation.
    pub dev_chunks: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            batch: 20,
            chunk_len: 128,
            steps: 20_000,
            seed: 0,
            loss: LossVariant::MagPlusRaw,
            clip_norm: 0.0,
            checkpoint_every: 1000,
            dev_every: 500,
            patience: 10,
            dev_chunks: 64,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.lr, beta1: self.beta1, beta2: self.beta2, eps: self.adam_eps }
    }

    pub fn validate(&self, min_frames: usize) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.batch == 0 {
            return Err(Error::Config("batch must be at least 1".into()));
        }
        if self.chunk_len < min_frames {
            return Err(Error::Config(format!(
                "chunk_len {} is below the encoder minimum of {min_frames} frames",
                self.chunk_len
            )));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.adam_eps > 0.0) {
            return Err(Error::Config("Adam betas must lie in [0, 1) and eps be positive".into()));
        }
        Ok(())
    }
}

/// One utterance: multi-channel noisy STFT and the clean reference-mic STFT.
#[derive(Clone, Debug)]
pub struct TrainExample<T> {
    pub noisy: MultiChannelStack<T>,
    pub clean: ComplexSpectrogram<T>,
}

impl<T: Scalar> TrainExample<T> {
    pub fn new(noisy: MultiChannelStack<T>, clean: ComplexSpectrogram<T>) -> Result<Self> {
        if noisy.frames() != clean.frames() || noisy.params() != clean.params() {
            return Err(Error::Shape(format!(
                "noisy has {} frames, clean has {}",
                noisy.frames(),
                clean.frames()
            )));
        }
        Ok(Self { noisy, clean })
    }

    pub fn frames(&self) -> usize {
        self.clean.frames()
    }

    pub fn mics(&self) -> usize {
        self.noisy.channels()
    }
}

/// Stacked chunks ready for a forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch<T> {
    /// `[B, M, 2, C, F]`.
    pub input: Tensor<T>,
    /// Clean reference planes `[B, 2, C*F]`.
    pub target: Tensor<T>,
    /// Clean chunk waveforms `[B, (C-1) * hop]`, resynthesized from `target`.
    pub target_wave: Tensor<T>,
    pub params: StftParams,
}

impl<T: Scalar> Batch<T> {
    pub fn size(&self) -> usize {
        self.input.shape()[0]
    }

    pub fn chunk_len(&self) -> usize {
        self.input.shape()[3]
    }
}

/// Copies frames `start..start+len` of a `[planes, T, F]` block, zero-filling
/// past the end.
fn copy_frames<T: Scalar>(src: &[T], planes: usize, frames: usize, bins: usize, start: usize, len: usize, out: &mut Vec<T>) {
    for p in 0..planes {
        for t in start..start + len {
            if t < frames {
                let off = (p * frames + t) * bins;
                out.extend_from_slice(&src[off..off + bins]);
            } else {
                out.extend(core::iter::repeat_n(T::zero(), bins));
            }
        }
    }
}

/// Builds a batch from `(example, start_frame)` picks.
pub fn make_batch<T: Scalar>(examples: &[TrainExample<T>], picks: &[(usize, usize)], chunk_len: usize) -> Result<Batch<T>> {
    let first = examples.first().ok_or_else(|| Error::Shape("no training examples".into()))?;
    let (m, bins, params) = (first.mics(), first.noisy.bins(), *first.noisy.params());
    let wave_len = frames_to_samples(chunk_len, &params);
    let mut input = Vec::with_capacity(picks.len() * m * INPUT_PLANES * chunk_len * bins);
    let mut target = Vec::with_capacity(picks.len() * INPUT_PLANES * chunk_len * bins);
    let mut waves = Vec::with_capacity(picks.len() * wave_len);
    for &(i, start) in picks {
        let ex = &examples[i];
        if ex.mics() != m || ex.noisy.bins() != bins {
            return Err(Error::ChannelMismatch { expected: m, got: ex.mics() });
        }
        let frames = ex.frames();
        let data = ex.noisy.tensor().data();
        let per_mic = INPUT_PLANES * frames * bins;
        for mic in 0..m {
            copy_frames(&data[mic * per_mic..(mic + 1) * per_mic], INPUT_PLANES, frames, bins, start, chunk_len, &mut input);
        }
        let planes = ex.clean.to_planes();
        let before = target.len();
        copy_frames(planes.data(), INPUT_PLANES, frames, bins, start, chunk_len, &mut target);
        let chunk = ComplexSpectrogram::from_planes(&target[before..], chunk_len, params)?;
        waves.extend(istft(&chunk, &params, wave_len)?);
    }
    let b = picks.len();
    Ok(Batch {
        input: Tensor::from_vec(&[b, m, INPUT_PLANES, chunk_len, bins], input)?,
        target: Tensor::from_vec(&[b, INPUT_PLANES, chunk_len * bins], target)?,
        target_wave: Tensor::from_vec(&[b, wave_len], waves)?,
        params,
    })
}

/// Random chunk positions for training step `step`; a pure function of
/// `(seed, step)` so resumed runs draw the same batches.
pub fn sample_picks<T: Scalar>(examples: &[TrainExample<T>], batch: usize, chunk_len: usize, seed: u64, step: u64) -> Vec<(usize, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step);
    (0..batch)
        .map(|_| {
            let i = rng.random_range(0..examples.len());
            let span = examples[i].frames().saturating_sub(chunk_len);
            (i, rng.random_range(0..=span))
        })
        .collect()
}

/// Deterministic tiling of the examples into non-overlapping chunks.
pub fn tile_picks<T: Scalar>(examples: &[TrainExample<T>], chunk_len: usize, max: usize) -> Vec<(usize, usize)> {
    let mut picks = Vec::new();
    for (i, ex) in examples.iter().enumerate() {
        let mut start = 0;
        loop {
            picks.push((i, start));
            start += chunk_len;
            if start + chunk_len > ex.frames() {
                break;
            }
        }
    }
    picks.truncate(max);
    picks
}

struct StepGrads<T> {
    grads: BTreeMap<String, Tensor<T>>,
    stats: Vec<(String, BatchStats<T>)>,
}

pub struct Trainer<T> {
    pub model: Model<T>,
    pub optimizer: Adam<T>,
    pub config: TrainConfig,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(model: Model<T>, config: TrainConfig) -> Result<Self> {
        config.validate(model.config.min_input_len())?;
        let optimizer = Adam::new(config.adam());
        Ok(Self { model, optimizer, config })
    }

    /// Updates applied so far.
    pub fn step(&self) -> u64 {
        self.optimizer.step
    }

    pub fn next_batch(&self, examples: &[TrainExample<T>]) -> Result<Batch<T>> {
        if examples.is_empty() {
            return Err(Error::Shape("no training examples".into()));
        }
        let picks = sample_picks(examples, self.config.batch, self.config.chunk_len, self.config.seed, self.step());
        make_batch(examples, &picks, self.config.chunk_len)
    }

    /// Loss of `batch` (and gradients by parameter name when `mode` is training).
    fn evaluate(&self, batch: &Batch<T>, mode: Mode) -> Result<(f64, Option<StepGrads<T>>)> {
        let tape = Tape::new();
        let train = mode == Mode::Train;
        let bound = self.model.bind(&tape, train);
        let x = tape.constant(batch.input.clone());
        let out = self.model.record(&tape, &bound, x, mode)?;
        let target = tape.constant(batch.target.clone());
        let waves = if self.config.loss.needs_waveform() {
            let (b, c, f) = (batch.size(), batch.chunk_len(), batch.input.shape()[4]);
            let planes = tape.reshape(out.enhanced, &[b, INPUT_PLANES, c, f]);
            let pred = tape.istft(planes, batch.params, batch.target_wave.shape()[1]);
            Some((pred, tape.constant(batch.target_wave.clone())))
        } else {
            None
        };
        let loss = record_loss(&tape, self.config.loss, out.enhanced, target, waves)?;
        let value = tape.value(loss).item().as_f64();
        if !train {
            return Ok((value, None));
        }
        let mut grads = tape.backward(loss);
        let named = bound.iter().filter_map(|(name, var)| grads.take(*var).map(|g| (name.clone(), g))).collect();
        Ok((value, Some(StepGrads { grads: named, stats: out.batch_stats })))
    }

    /// One optimizer update on `batch`; returns the loss before the update.
    pub fn train_step(&mut self, batch: &Batch<T>) -> Result<f64> {
        let (loss, rest) = self.evaluate(batch, Mode::Train)?;
        if !loss.is_finite() {
            return Err(Error::Diverged(self.step() + 1));
        }
        let StepGrads { mut grads, stats } = rest.expect("training mode returns gradients");
        if self.config.clip_norm > 0.0 {
            clip_global_norm(&mut grads, self.config.clip_norm);
        }
        self.optimizer.update(&mut self.model.params, &grads);
        self.model.update_running_stats(&stats);
        Ok(loss)
    }

    /// Evaluation-mode loss of `batch`.
    pub fn eval_loss(&self, batch: &Batch<T>) -> Result<f64> {
        Ok(self.evaluate(batch, Mode::Eval)?.0)
    }
}
