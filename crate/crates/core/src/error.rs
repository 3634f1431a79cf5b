use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("signal of {got} samples is shorter than one analysis window ({need} samples)")]
    SignalTooShort { got: usize, need: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("STFT parameters do not match: {0}")]
    ParamsMismatch(String),
    #[error("invalid STFT parameters: {0}")]
    InvalidParams(String),
    #[error("input of {frames} frames x {bins} bins is too small for a {levels}-level encoder; need at least {min_frames} frames x {min_bins} bins")]
    InputTooSmall { frames: usize, bins: usize, levels: usize, min_frames: usize, min_bins: usize },
    #[error("graph node {0} has zero degree")]
    ZeroDegree(usize),
    #[error("invalid geometry: {0}")]
    Geometry(String),
    #[error("silent {0} at the reference microphone")]
    Silent(&'static str),
    #[error("zero-energy reference signal")]
    ZeroReference,
    #[error("signal too short for STOI: {got} samples after silence removal, need {need}")]
    StoiTooShort { got: usize, need: usize },
    #[error("unsupported sample rate {0} Hz (expected 16000)")]
    SampleRate(u32),
    #[error("missing waveform for loss variant {0}")]
    MissingWaveform(&'static str),
    #[error("unknown parameter {0}")]
    UnknownParameter(String),
    #[error("channel count mismatch: model expects {expected}, input has {got}")]
    ChannelMismatch { expected: usize, got: usize },
    #[error("non-finite loss at step {0}")]
    Diverged(u64),
    #[error("invalid configuration: {0}")]
    Config(String),
}
