//! Multi-channel U-Net with a graph-convolution bottleneck.
//!
//! Every microphone channel goes through the same encoder. The bottleneck
//! embeddings of the `M` channels form the nodes of a per-sample graph; a GCN
//! mixes them at every bottleneck position, then the same decoder (with skip
//! connections) maps each channel back to a `2 x T x F` output. An attention
//! layer weights the `M` decoder outputs into one complex ratio mask that is
//! applied to the reference channel.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autograd::{BatchStats, Tape, Var};
use crate::error::{Error, Result};
use crate::graph::{record_adjacency, record_edge_scores, record_gcn_layer, Activation};
use crate::scalar::Scalar;
use crate::signal::{ComplexRatioMask, ComplexSpectrogram, MultiChannelStack};
use crate::tensor::{conv_out_len, Tensor};

/// Real and imaginary input planes per channel.
pub const INPUT_PLANES: usize = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub encoder_channels: Vec<usize>,
    pub kernel: usize,
    pub stride: usize,
    pub gcn_enabled: bool,
    pub gcn_layers: usize,
    pub scorer_hidden: usize,
    pub ref_channel: usize,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            encoder_channels: vec![64, 128, 128, 256, 256, 256],
            kernel: 3,
            stride: 2,
            gcn_enabled: true,
            gcn_layers: 2,
            scorer_hidden: 128,
            ref_channel: 0,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    /// Normal with variance `1 / fan_in`.
    LecunNormal { fan_in: usize },
    Zeros,
    Ones,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ModelConfig {
    pub fn levels(&self) -> usize {
        self.encoder_channels.len()
    }

    pub fn embedding_width(&self) -> usize {
        *self.encoder_channels.last().unwrap_or(&0)
    }

    /// Input channel counts of the decoder levels (skip channels excluded).
    pub fn decoder_channels(&self) -> Vec<usize> {
        self.encoder_channels.iter().rev().copied().collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.encoder_channels.is_empty() || self.encoder_channels.contains(&0) {
            return Err(Error::Config("encoder_channels must be a non-empty list of positive counts".into()));
        }
        if self.kernel == 0 || self.stride == 0 {
            return Err(Error::Config("kernel and stride must be positive".into()));
        }
        if self.gcn_enabled && (self.gcn_layers == 0 || self.scorer_hidden == 0) {
            return Err(Error::Config("gcn_layers and scorer_hidden must be positive when the GCN is enabled".into()));
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) || self.bn_eps <= 0.0 {
            return Err(Error::Config("bn_momentum must lie in [0, 1] and bn_eps be positive".into()));
        }
        Ok(())
    }

    /// Smallest extent along one axis that survives every encoder level:
    /// `n_{k-1} = stride * (n_k - 1) + kernel`, starting from `n_L = 1`.
    pub fn min_input_len(&self) -> usize {
        (0..self.levels()).fold(1, |n, _| self.stride * (n - 1) + self.kernel)
    }

    pub fn check_input(&self, frames: usize, bins: usize) -> Result<()> {
        let min = self.min_input_len();
        if frames < min || bins < min {
            return Err(Error::InputTooSmall {
                frames,
                bins,
                levels: self.levels(),
                min_frames: min,
                min_bins: min,
            });
        }
        Ok(())
    }

    /// Spatial extent at the input and after each encoder level.
    pub fn shape_trace(&self, frames: usize, bins: usize) -> Result<Vec<(usize, usize)>> {
        self.check_input(frames, bins)?;
        let mut trace = vec![(frames, bins)];
        for _ in 0..self.levels() {
            let (h, w) = *trace.last().unwrap();
            let next = (
                conv_out_len(h, self.kernel, self.stride).unwrap(),
                conv_out_len(w, self.kernel, self.stride).unwrap(),
            );
            trace.push(next);
        }
        Ok(trace)
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let k = self.kernel;
        let mut specs = Vec::new();
        let mut push = |name: String, shape: Vec<usize>, init: Init| specs.push(ParamSpec { name, shape, init });
        let enc = &self.encoder_channels;
        let levels = enc.len();
        let mut ci = INPUT_PLANES;
        for (l, &co) in enc.iter().enumerate() {
            push(format!("encoder.{l}.conv.weight"), vec![co, ci, k, k], Init::LecunNormal { fan_in: ci * k * k });
            push(format!("encoder.{l}.bn.gamma"), vec![co], Init::Ones);
            push(format!("encoder.{l}.bn.beta"), vec![co], Init::Zeros);
            ci = co;
        }
        for l in 0..levels {
            let from = enc[levels - 1 - l];
            let cin = if l == 0 { from } else { 2 * from };
            let last = l + 1 == levels;
            let cout = if last { INPUT_PLANES } else { enc[levels - 2 - l] };
            push(format!("decoder.{l}.deconv.weight"), vec![cin, cout, k, k], Init::LecunNormal { fan_in: cin * k * k });
            if last {
                push(format!("decoder.{l}.deconv.bias"), vec![cout], Init::Zeros);
            } else {
                push(format!("decoder.{l}.bn.gamma"), vec![cout], Init::Ones);
                push(format!("decoder.{l}.bn.beta"), vec![cout], Init::Zeros);
            }
        }
        if self.gcn_enabled {
            let n = self.embedding_width();
            let h = self.scorer_hidden;
            push("scorer.fc1.weight".into(), vec![2 * n, h], Init::LecunNormal { fan_in: 2 * n });
            push("scorer.fc1.bias".into(), vec![h], Init::Zeros);
            push("scorer.fc2.weight".into(), vec![h, 1], Init::LecunNormal { fan_in: h });
            push("scorer.fc2.bias".into(), vec![1], Init::Zeros);
            for l in 0..self.gcn_layers {
                push(format!("gcn.{l}.weight"), vec![n, n], Init::LecunNormal { fan_in: n });
            }
        }
        push("fusion.weight".into(), vec![INPUT_PLANES, 1], Init::LecunNormal { fan_in: INPUT_PLANES });
        push("fusion.bias".into(), vec![1], Init::Zeros);
        specs
    }

    /// Batch-norm running statistics: `(name, channels)` per normalized level.
    pub fn buffer_specs(&self) -> Vec<(String, usize)> {
        let enc = &self.encoder_channels;
        let levels = enc.len();
        let mut out = Vec::new();
        for (l, &c) in enc.iter().enumerate() {
            out.push((format!("encoder.{l}.bn"), c));
        }
        for l in 0..levels.saturating_sub(1) {
            out.push((format!("decoder.{l}.bn"), enc[levels - 2 - l]));
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.param_specs().iter().map(|s| s.shape.iter().product::<usize>()).sum()
    }
}

/// Name prefix identifying the parameter group of `name`.
pub fn param_group(name: &str) -> &str {
    name.split('.').next().unwrap_or(name)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in batch norm (and returned for running-stat updates).
    Train,
    /// Running statistics; deterministic.
    Eval,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub params: BTreeMap<String, Tensor<T>>,
    /// `<level>.running_mean` / `<level>.running_var` per batch-norm level.
    pub buffers: BTreeMap<String, Tensor<T>>,
}

/// Parameters recorded on a tape.
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn from_vars(vars: impl IntoIterator<Item = (String, Var)>) -> Self {
        Self { vars: vars.into_iter().collect() }
    }

    pub fn get(&self, name: &str) -> Var {
        *self.vars.get(name).unwrap_or_else(|| panic!("parameter {name} not bound"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }
}

/// Per-channel encoder activations for a batch of `batch x mics` channels.
#[derive(Clone, Debug)]
pub struct EncoderOutput {
    pub batch: usize,
    pub mics: usize,
    /// `[B*M, C, T', F']`.
    pub bottleneck: Var,
    /// Outputs of every encoder level except the last, shallowest first.
    pub skips: Vec<Var>,
    pub shape_trace: Vec<(usize, usize)>,
}

pub struct Recorded<T> {
    /// `[B, 2, T*F]`.
    pub mask: Var,
    /// Mask times reference spectrogram, `[B, 2, T*F]`.
    pub enhanced: Var,
    /// Symmetric adjacency `[B, M, M]` when the GCN is enabled.
    pub adjacency: Option<Var>,
    /// Attention weights `[B, M]`.
    pub fusion: Var,
    /// Batch statistics per normalized level (training mode only).
    pub batch_stats: Vec<(String, BatchStats<T>)>,
}

/// Evaluation-mode result for one multi-channel input.
#[derive(Clone, Debug)]
pub struct Enhanced<T> {
    pub spectrogram: ComplexSpectrogram<T>,
    pub mask: ComplexRatioMask<T>,
    pub adjacency: Option<Tensor<T>>,
    pub fusion: Vec<T>,
}

impl<T: Scalar> Model<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = BTreeMap::new();
        for spec in config.param_specs() {
            let n: usize = spec.shape.iter().product();
            let data = match spec.init {
                Init::Zeros => vec![T::zero(); n],
                Init::Ones => vec![T::one(); n],
                Init::LecunNormal { fan_in } => {
                    let std = 1.0 / libm::sqrt(fan_in as f64);
                    (0..n)
                        .map(|_| {
                            let z: f64 = StandardNormal.sample(&mut rng);
                            T::of(z * std)
                        })
                        .collect()
                }
            };
            params.insert(spec.name, Tensor::from_vec(&spec.shape, data)?);
        }
        let mut buffers = BTreeMap::new();
        for (name, c) in config.buffer_specs() {
            buffers.insert(format!("{name}.running_mean"), Tensor::zeros(&[c]));
            buffers.insert(format!("{name}.running_var"), Tensor::full(&[c], T::one()));
        }
        Ok(Self { config, params, buffers })
    }

    /// Assembles a model from stored tensors, checking names and shapes.
    pub fn from_parts(
        config: ModelConfig,
        params: BTreeMap<String, Tensor<T>>,
        buffers: BTreeMap<String, Tensor<T>>,
    ) -> Result<Self> {
        config.validate()?;
        let fresh = Model::<T>::new(config.clone(), 0)?;
        for (expected, given, what) in [(&fresh.params, &params, "parameter"), (&fresh.buffers, &buffers, "buffer")] {
            for (name, t) in expected {
                match given.get(name) {
                    None => return Err(Error::Shape(format!("missing {what} {name}"))),
                    Some(g) if g.shape() != t.shape() => {
                        return Err(Error::Shape(format!("{what} {name} has shape {:?}, expected {:?}", g.shape(), t.shape())))
                    }
                    Some(_) => {}
                }
            }
            if let Some(extra) = given.keys().find(|k| !expected.contains_key(*k)) {
                return Err(Error::UnknownParameter(extra.clone()));
            }
        }
        Ok(Self { config, params, buffers })
    }

    pub fn param_count(&self) -> usize {
        self.params.values().map(|t| t.len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            params: self.params.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
            buffers: self.buffers.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }

    /// Records every parameter on `tape`, as variables when `trainable`.
    pub fn bind(&self, tape: &Tape<T>, trainable: bool) -> Bound {
        let vars = self
            .params
            .iter()
            .map(|(k, v)| {
                let var = if trainable { tape.variable(v.clone()) } else { tape.constant(v.clone()) };
                (k.clone(), var)
            })
            .collect();
        Bound { vars }
    }

    /// Folds training-mode batch statistics into the running buffers.
    pub fn update_running_stats(&mut self, stats: &[(String, BatchStats<T>)]) {
        let m = T::of(self.config.bn_momentum);
        for (name, s) in stats {
            let unbias = if s.count > 1 { T::of(s.count as f64 / (s.count - 1) as f64) } else { T::one() };
            let mean = self.buffers.get_mut(&format!("{name}.running_mean")).expect("running mean buffer");
            for (r, &b) in mean.data_mut().iter_mut().zip(&s.mean) {
                *r = (T::one() - m) * *r + m * b;
            }
            let var = self.buffers.get_mut(&format!("{name}.running_var")).expect("running var buffer");
            for (r, &b) in var.data_mut().iter_mut().zip(&s.var) {
                *r = (T::one() - m) * *r + m * b * unbias;
            }
        }
    }

    fn norm(
        &self,
        tape: &Tape<T>,
        p: &Bound,
        name: &str,
        x: Var,
        mode: Mode,
        stats: &mut Vec<(String, BatchStats<T>)>,
    ) -> Var {
        let (gamma, beta) = (p.get(&format!("{name}.gamma")), p.get(&format!("{name}.beta")));
        let eps = T::of(self.config.bn_eps);
        match mode {
            Mode::Train => {
                let (y, s) = tape.batch_norm(x, gamma, beta, None, eps);
                stats.push((name.to_string(), s.expect("training-mode statistics")));
                y
            }
            Mode::Eval => {
                let mean = &self.buffers[&format!("{name}.running_mean")];
                let var = &self.buffers[&format!("{name}.running_var")];
                tape.batch_norm(x, gamma, beta, Some((mean.data(), var.data())), eps).0
            }
        }
    }

    /// Shared-weight encoder over `x: [B, M, 2, T, F]`.
    pub fn encode(
        &self,
        tape: &Tape<T>,
        p: &Bound,
        x: Var,
        mode: Mode,
        stats: &mut Vec<(String, BatchStats<T>)>,
    ) -> Result<EncoderOutput> {
        let s = tape.shape(x);
        if s.len() != 5 || s[2] != INPUT_PLANES || s[1] == 0 || s[0] == 0 {
            return Err(Error::Shape(format!("model input must be [B, M, 2, T, F], got {s:?}")));
        }
        let (batch, mics, frames, bins) = (s[0], s[1], s[3], s[4]);
        let shape_trace = self.config.shape_trace(frames, bins)?;
        let mut h = tape.reshape(x, &[batch * mics, INPUT_PLANES, frames, bins]);
        let mut skips = Vec::new();
        for l in 0..self.config.levels() {
            if l > 0 {
                skips.push(h);
            }
            let conv = tape.conv2d(h, p.get(&format!("encoder.{l}.conv.weight")), None, self.config.stride);
            let normed = self.norm(tape, p, &format!("encoder.{l}.bn"), conv, mode, stats);
            h = tape.selu(normed);
        }
        Ok(EncoderOutput { batch, mics, bottleneck: h, skips, shape_trace })
    }

    /// Mixes the channel embeddings with the learned graph; returns the new
    /// encoder output and the adjacency `[B, M, M]`.
    pub fn graph_bottleneck(&self, tape: &Tape<T>, p: &Bound, enc: EncoderOutput) -> (EncoderOutput, Var) {
        let s = tape.shape(enc.bottleneck);
        let (c, hh, ww) = (s[1], s[2], s[3]);
        let positions = hh * ww;
        let (b, m) = (enc.batch, enc.mics);
        let nodes = pool_embeddings(tape, &enc);
        let scores = record_edge_scores(
            tape,
            nodes,
            &[
                (p.get("scorer.fc1.weight"), p.get("scorer.fc1.bias")),
                (p.get("scorer.fc2.weight"), p.get("scorer.fc2.bias")),
            ],
        );
        let graph = record_adjacency(tape, scores);
        let flat = tape.reshape(enc.bottleneck, &[b * m, c, positions]);
        let per_position = tape.transpose_last2(flat);
        let mut h = tape.reshape(per_position, &[b, m, positions * c]);
        for l in 0..self.config.gcn_layers {
            h = record_gcn_layer(tape, graph.normalized, h, positions, p.get(&format!("gcn.{l}.weight")), Activation::Selu);
        }
        let back = tape.reshape(h, &[b * m, positions, c]);
        let back = tape.transpose_last2(back);
        let bottleneck = tape.reshape(back, &[b * m, c, hh, ww]);
        (EncoderOutput { bottleneck, ..enc }, graph.adjacency)
    }

    /// Shared-weight decoder with skip connections; `[B*M, 2, T, F]`.
    pub fn decode(
        &self,
        tape: &Tape<T>,
        p: &Bound,
        enc: &EncoderOutput,
        mode: Mode,
        stats: &mut Vec<(String, BatchStats<T>)>,
    ) -> Result<Var> {
        let levels = self.config.levels();
        if enc.shape_trace.len() != levels + 1 || enc.skips.len() + 1 != levels {
            return Err(Error::Shape(format!(
                "decoder needs a {}-entry shape trace and {} skips, got {} and {}",
                levels + 1,
                levels - 1,
                enc.shape_trace.len(),
                enc.skips.len()
            )));
        }
        let mut h = enc.bottleneck;
        for l in 0..levels {
            if l > 0 {
                h = tape.concat_axis1(h, enc.skips[levels - 1 - l]);
            }
            let target = enc.shape_trace[levels - 1 - l];
            let w = p.get(&format!("decoder.{l}.deconv.weight"));
            if l + 1 == levels {
                let bias = p.get(&format!("decoder.{l}.deconv.bias"));
                h = tape.conv_transpose2d(h, w, Some(bias), self.config.stride, target);
            } else {
                let up = tape.conv_transpose2d(h, w, None, self.config.stride, target);
                let normed = self.norm(tape, p, &format!("decoder.{l}.bn"), up, mode, stats);
                h = tape.selu(normed);
            }
        }
        Ok(h)
    }

    /// Full forward pass over `x: [B, M, 2, T, F]`.
    pub fn record(&self, tape: &Tape<T>, p: &Bound, x: Var, mode: Mode) -> Result<Recorded<T>> {
        let mut stats = Vec::new();
        let enc = self.encode(tape, p, x, mode, &mut stats)?;
        let (b, m) = (enc.batch, enc.mics);
        if self.config.ref_channel >= m {
            return Err(Error::ChannelMismatch { expected: self.config.ref_channel + 1, got: m });
        }
        let (enc, adjacency) = if self.config.gcn_enabled {
            let (e, a) = self.graph_bottleneck(tape, p, enc);
            (e, Some(a))
        } else {
            (enc, None)
        };
        let (frames, bins) = enc.shape_trace[0];
        let dec = self.decode(tape, p, &enc, mode, &mut stats)?;
        let (mask, fusion) = fuse(tape, dec, b, m, p.get("fusion.weight"), p.get("fusion.bias"));

        let xv = tape.value(x);
        let plane = INPUT_PLANES * frames * bins;
        let mut reference = Vec::with_capacity(b * plane);
        for i in 0..b {
            let start = (i * m + self.config.ref_channel) * plane;
            reference.extend_from_slice(&xv.data()[start..start + plane]);
        }
        let reference = tape.constant(Tensor::from_vec(&[b, INPUT_PLANES, frames * bins], reference)?);
        let enhanced = tape.complex_mul(mask, reference);
        Ok(Recorded { mask, enhanced, adjacency, fusion, batch_stats: stats })
    }

    /// Evaluation-mode forward of a single multi-channel input.
    pub fn forward(&self, x: &MultiChannelStack<T>) -> Result<Enhanced<T>> {
        if !x.tensor().all_finite() {
            return Err(Error::NonFinite("model input"));
        }
        let (m, frames, bins) = (x.channels(), x.frames(), x.bins());
        let tape = Tape::new();
        let p = self.bind(&tape, false);
        let input = tape.constant(x.tensor().clone().reshaped(&[1, m, INPUT_PLANES, frames, bins])?);
        let out = self.record(&tape, &p, input, Mode::Eval)?;
        let params = *x.params();
        let spectrogram = ComplexSpectrogram::from_planes(tape.value(out.enhanced).data(), frames, params)?;
        let mask = ComplexRatioMask::new((*tape.value(out.mask)).clone().reshaped(&[INPUT_PLANES, frames, bins])?)?;
        let adjacency = match out.adjacency {
            Some(a) => Some((*tape.value(a)).clone().reshaped(&[m, m])?),
            None => None,
        };
        let fusion = tape.value(out.fusion).data().to_vec();
        Ok(Enhanced { spectrogram, mask, adjacency, fusion })
    }
}

/// Node features: mean of each channel's bottleneck over `T' x F'`, `[B, M, C]`.
pub fn pool_embeddings<T: Scalar>(tape: &Tape<T>, enc: &EncoderOutput) -> Var {
    let s = tape.shape(enc.bottleneck);
    let c = s[1];
    let positions: usize = s[2..].iter().product();
    let flat = tape.reshape(enc.bottleneck, &[enc.batch * enc.mics, c, positions]);
    let pooled = tape.mean_last(flat);
    tape.reshape(pooled, &[enc.batch, enc.mics, c])
}

/// Attention fusion of decoder outputs `[B*M, 2, T, F]` into a mask
/// `[B, 2, T*F]`; also returns the weights `[B, M]`.
pub fn fuse<T: Scalar>(tape: &Tape<T>, dec: Var, batch: usize, mics: usize, weight: Var, bias: Var) -> (Var, Var) {
    let s = tape.shape(dec);
    let plane: usize = s[2..].iter().product();
    let per_plane = tape.reshape(dec, &[batch * mics, INPUT_PLANES, plane]);
    let pooled = tape.mean_last(per_plane);
    let logits = tape.linear(pooled, weight, Some(bias));
    let logits = tape.reshape(logits, &[batch, mics]);
    let alpha = tape.softmax_last(logits);
    let alpha_row = tape.reshape(alpha, &[batch, 1, mics]);
    let stacked = tape.reshape(dec, &[batch, mics, INPUT_PLANES * plane]);
    let mixed = tape.bmm(alpha_row, stacked);
    (tape.reshape(mixed, &[batch, INPUT_PLANES, plane]), alpha)
}
