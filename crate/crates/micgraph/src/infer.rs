//! Enhancement of multi-channel WAV files.

use std::path::Path;

use anyhow::{Context, Result};
use micgraph_core::enhance::{enhance_waveform, EnhanceOptions};
use micgraph_core::signal::SAMPLE_RATE;
use micgraph_core::Error;

use crate::checkpoint::Checkpoint;
use crate::wav::{read_wav, write_wav, Audio};

/// Enhances `input` into a mono WAV at `output`; optionally dumps the channel
/// adjacency of each forward pass as JSON.
pub fn enhance_file(ckpt: &Checkpoint, input: &Path, output: &Path, opts: &EnhanceOptions, adjacency: Option<&Path>) -> Result<()> {
    let audio = read_wav(input)?;
    if audio.sample_rate != SAMPLE_RATE {
        return Err(Error::SampleRate(audio.sample_rate)).with_context(|| format!("reading {}", input.display()));
    }
    if audio.channels.len() != ckpt.mics {
        return Err(Error::ChannelMismatch { expected: ckpt.mics, got: audio.channels.len() })
            .with_context(|| format!("reading {}", input.display()));
    }
    let channels: Vec<Vec<f32>> = audio.channels.iter().map(|c| c.iter().map(|&v| v as f32).collect()).collect();
    let out = enhance_waveform(&ckpt.model, &channels, ckpt.stft, opts)?;
    write_wav(output, &Audio::mono(SAMPLE_RATE, out.samples.iter().map(|&v| f64::from(v)).collect()))?;
    if let Some(path) = adjacency {
        let mats: Vec<Vec<Vec<f32>>> = out
            .adjacency
            .iter()
            .map(|a| {
                let m = a.shape()[0];
                a.data().chunks(m).map(<[f32]>::to_vec).collect()
            })
            .collect();
        std::fs::write(path, serde_json::to_string_pretty(&mats)?)?;
    }
    Ok(())
}
