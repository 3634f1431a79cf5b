//! Flat `key = value` run configuration.
//!
//! Values are resolved in three layers: built-in defaults, then the config
//! file, then command-line overrides. Unknown keys are rejected.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use micgraph_core::enhance::EnhanceOptions;
use micgraph_core::model::ModelConfig;
use micgraph_core::signal::StftParams;
use micgraph_core::sim::{Geometry, SNR_LEVELS};
use micgraph_core::train::TrainConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("invalid value `{value}` for `{key}`: {reason}")]
    InvalidValue { key: String, value: String, reason: String },
    #[error("{path}:{line}: expected `key = value`, got `{text}`")]
    Syntax { path: String, line: usize, text: String },
    #[error("cannot read config {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{0}")]
    Invalid(String),
}

/// Dataset simulation settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub seed: u64,
    pub geometry: Geometry,
    pub mics: usize,
    pub mic_spacing: f64,
    pub array_radius: f64,
    pub rt60: f64,
    pub snr_levels: Vec<f64>,
    pub train_examples: usize,
    pub dev_examples: usize,
    pub test_examples: usize,
    pub utterance_seconds: f64,
    pub speech_dir: Option<PathBuf>,
    pub noise_dir: Option<PathBuf>,
    pub reverberant_target: bool,
    /// Peak level of the loudest noisy channel after normalization.
    pub peak: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            geometry: Geometry::Linear,
            mics: 4,
            mic_spacing: 0.05,
            array_radius: 0.1,
            rt60: 0.5,
            snr_levels: SNR_LEVELS.to_vec(),
            train_examples: 200,
            dev_examples: 40,
            test_examples: 40,
            utterance_seconds: 4.0,
            speech_dir: None,
            noise_dir: None,
            reverberant_target: false,
            peak: 0.9,
        }
    }
}

/// Every tunable of a run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Settings {
    pub sim: SimConfig,
    pub stft: StftParams,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub enhance: EnhanceOptions,
    pub pesq_cmd: Option<String>,
}

type Getter = fn(&Settings) -> String;
type Setter = fn(&mut Settings, &str) -> Result<(), String>;

pub struct Key {
    pub name: &'static str,
    pub doc: &'static str,
    get: Getter,
    set: Setter,
}

fn parse<T: FromStr>(v: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>().map_err(|e| e.to_string())
}

fn parse_list<T: FromStr>(v: &str) -> Result<Vec<T>, String>
where
    T::Err: std::fmt::Display,
{
    v.split(',').map(|s| parse(s.trim())).collect()
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn opt_path(v: &str) -> Option<PathBuf> {
    if v.is_empty() {
        None
    } else {
        Some(PathBuf::from(v))
    }
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

macro_rules! key {
    ($name:literal, $doc:literal, |$s:ident| $get:expr, |$t:ident, $v:ident| $set:expr) => {
        Key {
            name: $name,
            doc: $doc,
            get: |$s: &Settings| $get,
            set: |$t: &mut Settings, $v: &str| {
                $set;
                Ok(())
            },
        }
    };
}

/// A key backed by a field with `FromStr` and `Display`.
macro_rules! field {
    ($name:literal, $doc:literal, $($f:ident).+) => {
        key!($name, $doc, |s| s.$($f).+.to_string(), |s, v| s.$($f).+ = parse(v)?)
    };
}

/// A comma-separated list field.
macro_rules! list {
    ($name:literal, $doc:literal, $($f:ident).+) => {
        key!($name, $doc, |s| join(&s.$($f).+), |s, v| s.$($f).+ = parse_list(v)?)
    };
}

pub static KEYS: &[Key] = &[
    field!("sim_seed", "seed of the dataset simulation", sim.seed),
    key!("geometry", "array geometry: linear, circular or distributed", |s| s.sim.geometry.name().into(), |s, v| {
        s.sim.geometry = Geometry::parse(v).map_err(|e| e.to_string())?
    }),
    field!("mics", "microphones per array", sim.mics),
    field!("mic_spacing", "linear array spacing in metres", sim.mic_spacing),
    field!("array_radius", "circular array radius in metres", sim.array_radius),
    field!("rt60", "reverberation time of every room in seconds", sim.rt60),
    list!("snr_levels", "input SNRs in dB, cycled over examples", sim.snr_levels),
    field!("train_examples", "simulated training mixtures", sim.train_examples),
    field!("dev_examples", "simulated development mixtures", sim.dev_examples),
    field!("test_examples", "simulated test mixtures", sim.test_examples),
    field!("utterance_seconds", "maximum mixture length in seconds", sim.utterance_seconds),
    key!("speech_dir", "directory of 16 kHz speech WAVs (empty: synthetic speech)", |s| show_path(&s.sim.speech_dir), |s, v| {
        s.sim.speech_dir = opt_path(v)
    }),
    key!("noise_dir", "directory of 16 kHz noise WAVs (empty: synthetic noise)", |s| show_path(&s.sim.noise_dir), |s, v| {
        s.sim.noise_dir = opt_path(v)
    }),
    field!("reverberant_target", "use the reverberant speech image as the clean target", sim.reverberant_target),
    field!("peak", "peak level of normalized mixtures", sim.peak),
    field!("window_length", "STFT window length in samples", stft.window_length),
    field!("hop", "STFT hop in samples", stft.hop),
    list!("encoder_channels", "output channels of each encoder level", model.encoder_channels),
    field!("kernel", "convolution kernel size", model.kernel),
    field!("stride", "convolution stride", model.stride),
    field!("gcn_enabled", "graph convolution in the bottleneck", model.gcn_enabled),
    field!("gcn_layers", "graph convolution layers", model.gcn_layers),
    field!("scorer_hidden", "hidden width of the edge scorer", model.scorer_hidden),
    field!("ref_channel", "reference microphone index", model.ref_channel),
    field!("bn_momentum", "batch-norm running-stat momentum", model.bn_momentum),
    field!("bn_eps", "batch-norm epsilon", model.bn_eps),
    field!("lr", "Adam learning rate", train.lr),
    field!("beta1", "Adam first-moment decay", train.beta1),
    field!("beta2", "Adam second-moment decay", train.beta2),
    field!("adam_eps", "Adam epsilon", train.adam_eps),
    field!("batch", "chunks per mini-batch", train.batch),
    field!("chunk_len", "STFT frames per training chunk", train.chunk_len),
    field!("steps", "optimizer steps", train.steps),
    field!("seed", "seed of initialization and batch sampling", train.seed),
    field!("loss", "loss variant: mag, spec, mag_spec or mag_raw", train.loss),
    field!("clip_norm", "global gradient-norm clip (0: off)", train.clip_norm),
    field!("checkpoint_every", "steps between checkpoints", train.checkpoint_every),
    field!("dev_every", "steps between dev evaluations (0: off)", train.dev_every),
    field!("patience", "dev evaluations without improvement before stopping (0: off)", train.patience),
    field!("dev_chunks", "maximum dev chunks per evaluation", train.dev_chunks),
    field!("enhance_chunk", "frames per forward pass at inference (0: whole utterance)", enhance.chunk_frames),
    field!("enhance_overlap", "cross-faded frames between inference chunks", enhance.overlap),
    field!("identity_mask", "bypass the network with a 1+0i mask", enhance.identity_mask),
    key!("pesq_cmd", "external PESQ command, run as `<cmd> <ref.wav> <deg.wav>` (empty: off)", |s| s.pesq_cmd.clone().unwrap_or_default(), |s, v| {
        s.pesq_cmd = if v.is_empty() { None } else { Some(v.to_string()) }
    }),
];

pub fn find_key(name: &str) -> Option<&'static Key> {
    KEYS.iter().find(|k| k.name == name)
}

/// Splits `key = value`; `#` starts a comment.
pub fn split_assignment(line: &str) -> Option<(&str, &str)> {
    let line = line.split('#').next().unwrap_or("").trim();
    let (k, v) = line.split_once('=')?;
    Some((k.trim(), v.trim()))
}

impl Settings {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let k = find_key(key).ok_or_else(|| ConfigError::UnknownKey(key.to_string()))?;
        (k.set)(self, value).map_err(|reason| ConfigError::InvalidValue {
            key: key.to_string(),
            value: value.to_string(),
            reason,
        })
    }

    pub fn get(&self, key: &str) -> Option<String> {
        find_key(key).map(|k| (k.get)(self))
    }

    /// Applies `key = value` lines. Lines whose key starts with one of
    /// `reserved` are returned instead of applied.
    pub fn apply_text(&mut self, text: &str, origin: &str, reserved: &[&str]) -> Result<Vec<(String, String)>, ConfigError> {
        let mut held = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let trimmed = raw.split('#').next().unwrap_or("").trim();
            if trimmed.is_empty() {
                continue;
            }
            let (k, v) = split_assignment(raw).ok_or_else(|| ConfigError::Syntax {
                path: origin.to_string(),
                line: i + 1,
                text: raw.to_string(),
            })?;
            if reserved.iter().any(|r| k.starts_with(r)) {
                held.push((k.to_string(), v.to_string()));
            } else {
                self.set(k, v)?;
            }
        }
        Ok(held)
    }

    /// Defaults, then `file`, then `overrides` (`key=value` strings).
    pub fn load(file: Option<&Path>, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut s = Settings::default();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
            s.apply_text(&text, &path.display().to_string(), &[])?;
        }
        s.apply_overrides(overrides)?;
        s.validate()?;
        Ok(s)
    }

    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<(), ConfigError> {
        for o in overrides {
            let (k, v) = split_assignment(o).ok_or_else(|| ConfigError::Syntax {
                path: "--set".into(),
                line: 0,
                text: o.clone(),
            })?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: micgraph_core::Error| ConfigError::Invalid(e.to_string());
        self.stft.validate().map_err(invalid)?;
        self.model.validate().map_err(invalid)?;
        self.train.validate(self.model.min_input_len()).map_err(invalid)?;
        self.model.check_input(self.model.min_input_len(), self.stft.n_freq_bins()).map_err(invalid)?;
        if self.sim.mics == 0 {
            return Err(ConfigError::Invalid("mics must be at least 1".into()));
        }
        if self.model.ref_channel >= self.sim.mics {
            return Err(ConfigError::Invalid(format!(
                "ref_channel {} is out of range for {} mics",
                self.model.ref_channel, self.sim.mics
            )));
        }
        if self.sim.snr_levels.is_empty() || !(self.sim.utterance_seconds > 0.0) || !(self.sim.peak > 0.0) {
            return Err(ConfigError::Invalid("snr_levels, utterance_seconds and peak must be non-empty/positive".into()));
        }
        Ok(())
    }

    /// Every key with its effective value, one `key = value` per line.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for k in KEYS {
            let _ = writeln!(out, "{} = {}", k.name, (k.get)(self));
        }
        out
    }
}

/// Key reference with defaults, for `--help`.
pub fn key_reference() -> String {
    let defaults = Settings::default();
    let mut out = String::from("Config keys (`key = value` files and --set overrides; defaults shown):\n");
    for k in KEYS {
        let _ = writeln!(out, "  {:<20} {:<28} {}", k.name, (k.get)(&defaults), k.doc);
    }
    out
}
