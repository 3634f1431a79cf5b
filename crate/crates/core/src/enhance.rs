//! Whole-utterance enhancement: STFT, model, optional chunking, iSTFT.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Model, INPUT_PLANES};
use crate::scalar::Scalar;
use crate::signal::{istft, stack_reim, stft, ComplexSpectrogram, MultiChannelStack, StftParams};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnhanceOptions {
    /// Frames per forward pass; 0 processes the whole utterance at once.
    pub chunk_frames: usize,
    /// Frames shared by neighbouring chunks, cross-faded linearly.
    pub overlap: usize,
    /// Skip the network and pass the reference channel through (mask 1+0i).
    pub identity_mask: bool,
}

impl Default for EnhanceOptions {
    fn default() -> Self {
        Self { chunk_frames: 0, overlap: 32, identity_mask: false }
    }
}

#[derive(Clone, Debug)]
pub struct EnhancedWave<T> {
    pub samples: Vec<T>,
    /// Channel adjacency of each forward pass (empty without a GCN or with
    /// the identity mask).
    pub adjacency: Vec<Tensor<T>>,
}

fn slice_frames<T: Scalar>(stack: &MultiChannelStack<T>, start: usize, len: usize) -> Result<MultiChannelStack<T>> {
    let (m, frames, bins) = (stack.channels(), stack.frames(), stack.bins());
    let data = stack.tensor().data();
    let mut out = Vec::with_capacity(m * INPUT_PLANES * len * bins);
    for block in 0..m * INPUT_PLANES {
        let off = (block * frames + start) * bins;
        out.extend_from_slice(&data[off..off + len * bins]);
    }
    MultiChannelStack::from_tensor(Tensor::from_vec(&[m, INPUT_PLANES, len, bins], out)?, *stack.params())
}

/// Chunk start frames covering `frames`; the last chunk ends at the end.
fn chunk_starts(frames: usize, chunk: usize, overlap: usize) -> Vec<usize> {
    let step = chunk - overlap;
    let mut starts = Vec::new();
    let mut s = 0;
    while s + chunk < frames {
        starts.push(s);
        s += step;
    }
    starts.push(frames - chunk);
    starts
}

/// Enhances equally long `channels` (reference channel per the model config)
/// and returns a waveform of the same length.
pub fn enhance_waveform<T: Scalar>(
    model: &Model<T>,
    channels: &[Vec<T>],
    params: StftParams,
    opts: &EnhanceOptions,
) -> Result<EnhancedWave<T>> {
    let len = channels.first().map_or(0, Vec::len);
    if channels.is_empty() || len == 0 {
        return Err(Error::Shape("no audio to enhance".into()));
    }
    if let Some((m, c)) = channels.iter().enumerate().find(|(_, c)| c.len() != len) {
        return Err(Error::Shape(format!("channel {m} has {} samples, channel 0 has {len}", c.len())));
    }
    let cfg = &model.config;
    if cfg.ref_channel >= channels.len() {
        return Err(Error::ChannelMismatch { expected: cfg.ref_channel + 1, got: channels.len() });
    }
    let min_frames = cfg.min_input_len();
    let chunked = opts.chunk_frames > 0;
    if chunked && (opts.chunk_frames < min_frames || opts.overlap >= opts.chunk_frames) {
        return Err(Error::Config(format!(
            "chunk of {} frames with overlap {} (need chunk >= {min_frames} and overlap < chunk)",
            opts.chunk_frames, opts.overlap
        )));
    }
    // pad so the utterance yields at least the encoder's minimum frame count
    let padded_len = len.max((min_frames - 1) * params.hop).max(params.window_length);
    let specs = channels
        .iter()
        .map(|c| {
            let mut x = c.clone();
            x.resize(padded_len, T::zero());
            stft(&x, &params)
        })
        .collect::<Result<Vec<_>>>()?;
    let frames = specs[0].frames();
    let mut adjacency = Vec::new();
    let spectrogram = if opts.identity_mask {
        specs[cfg.ref_channel].clone()
    } else {
        let stack = stack_reim(&specs)?;
        if !chunked || frames <= opts.chunk_frames {
            let out = model.forward(&stack)?;
            adjacency.extend(out.adjacency);
            out.spectrogram
        } else {
            let (chunk, overlap) = (opts.chunk_frames, opts.overlap);
            let bins = params.n_freq_bins();
            let mut acc = vec![Complex::new(T::zero(), T::zero()); frames * bins];
            let mut weight = vec![T::zero(); frames];
            let starts = chunk_starts(frames, chunk, overlap);
            for (i, &start) in starts.iter().enumerate() {
                let out = model.forward(&slice_frames(&stack, start, chunk)?)?;
                adjacency.extend(out.adjacency);
                for t in 0..chunk {
                    // linear ramps where this chunk overlaps a neighbour
                    let mut w = 1.0;
                    if i > 0 && t < overlap {
                        w = (t + 1) as f64 / (overlap + 1) as f64;
                    }
                    if i + 1 < starts.len() && t >= chunk - overlap {
                        w = w.min((chunk - t) as f64 / (overlap + 1) as f64);
                    }
                    let w = T::of(w);
                    weight[start + t] += w;
                    for f in 0..bins {
                        let a = &mut acc[(start + t) * bins + f];
                        *a = *a + out.spectrogram.get(t, f) * w;
                    }
                }
            }
            for (t, row) in acc.chunks_mut(bins).enumerate() {
                row.iter_mut().for_each(|c| *c = *c / weight[t]);
            }
            ComplexSpectrogram::new(frames, bins, acc, params)?
        }
    };
    let mut samples = istft(&spectrogram, &params, padded_len)?;
    samples.truncate(len);
    Ok(EnhancedWave { samples, adjacency })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunks_cover_every_frame() {
        for (frames, chunk, overlap) in [(300, 128, 32), (128, 128, 16), (129, 128, 0), (1000, 31, 30)] {
            let starts = chunk_starts(frames, chunk, overlap);
            assert_eq!(starts[0], 0);
            assert_eq!(*starts.last().unwrap() + chunk, frames);
            assert!(starts.windows(2).all(|w| w[1] > w[0] && w[1] <= w[0] + chunk - overlap));
        }
    }
}
