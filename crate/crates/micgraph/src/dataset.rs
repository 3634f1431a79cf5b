//! Simulated dataset generation and loading.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::{info, warn};
use micgraph_core::signal::{stack_reim, stft, StftParams, SAMPLE_RATE};
use micgraph_core::sim::{
    fit_length, random_scene, render_scene, synthetic_noise, synthetic_speech, ArraySpec, Room, RoomSpec, Split,
};
use micgraph_core::train::TrainExample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::SimConfig;
use crate::manifest::{Manifest, ManifestEntry};
use crate::wav::{read_wav, write_wav, Audio};

/// WAV files below `dir`, sorted for reproducibility.
pub fn list_wavs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).with_context(|| format!("cannot list {}", d.display()))? {
            let path = entry?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")) {
                out.push(path);
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Source of dry speech or noise: a WAV corpus or the synthetic generators.
enum Corpus {
    Files(Vec<PathBuf>),
    Synthetic,
}

impl Corpus {
    fn open(dir: Option<&Path>, what: &str) -> Result<Self> {
        match dir {
            Some(d) => {
                let files = list_wavs(d)?;
                if files.is_empty() {
                    bail!("no WAV files under {what} directory {}", d.display());
                }
                Ok(Corpus::Files(files))
            }
            None => {
                warn!("no {what} directory configured; using synthetic {what}");
                Ok(Corpus::Synthetic)
            }
        }
    }

    fn load(path: &Path) -> Result<Vec<f64>> {
        let audio = read_wav(path)?;
        if audio.sample_rate != SAMPLE_RATE {
            bail!("{} is sampled at {} Hz, expected {SAMPLE_RATE}", path.display(), audio.sample_rate);
        }
        // downmix multi-channel sources
        let n = audio.channels.len() as f64;
        Ok((0..audio.len()).map(|i| audio.channels.iter().map(|c| c[i]).sum::<f64>() / n).collect())
    }

    /// Speech: a whole file cut to at most `max_len` at a random offset.
    fn speech(&self, max_len: usize, rng: &mut impl Rng) -> Result<(Vec<f64>, Option<String>)> {
        match self {
            Corpus::Synthetic => Ok((synthetic_speech(max_len, SAMPLE_RATE as f64, rng), None)),
            Corpus::Files(files) => {
                let path = &files[rng.random_range(0..files.len())];
                let x = Self::load(path)?;
                let start = rng.random_range(0..=x.len().saturating_sub(max_len));
                let end = (start + max_len).min(x.len());
                Ok((x[start..end].to_vec(), Some(path.display().to_string())))
            }
        }
    }

    /// Noise: looped to `len` from a random offset.
    fn noise(&self, len: usize, rng: &mut impl Rng) -> Result<(Vec<f64>, Option<String>)> {
        match self {
            Corpus::Synthetic => Ok((synthetic_noise(len, rng), None)),
            Corpus::Files(files) => {
                let path = &files[rng.random_range(0..files.len())];
                let x = Self::load(path)?;
                if x.is_empty() {
                    bail!("{} is empty", path.display());
                }
                let offset = rng.random_range(0..x.len());
                Ok((fit_length(&x, len, offset), Some(path.display().to_string())))
            }
        }
    }
}

/// Independent per-example seed so examples can be rendered in any order.
fn example_seed(seed: u64, split: Split, index: usize) -> u64 {
    let split_id = Split::ALL.iter().position(|&s| s == split).unwrap() as u64;
    seed ^ (split_id + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (index as u64).wrapping_mul(0xD1B5_4A32_D192_ED03)
}

fn split_count(cfg: &SimConfig, split: Split) -> usize {
    match split {
        Split::Train => cfg.train_examples,
        Split::Dev => cfg.dev_examples,
        Split::Test => cfg.test_examples,
    }
}

/// Renders one split into `out/<split>/` and writes `out/<split>.jsonl`.
pub fn generate_split(cfg: &SimConfig, split: Split, out: &Path) -> Result<Manifest> {
    let dir = out.join(split.name());
    std::fs::create_dir_all(&dir)?;
    let speech = Corpus::open(cfg.speech_dir.as_deref(), "speech")?;
    let noise = Corpus::open(cfg.noise_dir.as_deref(), "noise")?;
    let fs = SAMPLE_RATE as f64;
    let rooms: Vec<Room> = split
        .rooms()
        .iter()
        .map(|&dims| Ok(Room::calibrated(RoomSpec::new(dims, cfg.rt60)?, fs)?))
        .collect::<Result<_>>()?;
    let array = ArraySpec { spacing: cfg.mic_spacing, radius: cfg.array_radius, ..ArraySpec::new(cfg.geometry, cfg.mics) };
    let max_len = (cfg.utterance_seconds * fs).round() as usize;
    let count = split_count(cfg, split);
    info!("simulating {count} {} mixtures", split.name());
    let entries = (0..count)
        .into_par_iter()
        .map(|i| -> Result<ManifestEntry> {
            let mut rng = ChaCha8Rng::seed_from_u64(example_seed(cfg.seed, split, i));
            let room = rooms[rng.random_range(0..rooms.len())];
            let snr = cfg.snr_levels[i % cfg.snr_levels.len()];
            let scene = random_scene(room, array, snr, &mut rng)?;
            let (dry, speech_src) = speech.speech(max_len, &mut rng)?;
            let mut sources: Vec<String> = speech_src.into_iter().collect();
            let mut clips = Vec::with_capacity(scene.noises.len());
            for _ in &scene.noises {
                let (clip, src) = noise.noise(dry.len(), &mut rng)?;
                clips.push(clip);
                sources.extend(src);
            }
            let mut ex = render_scene(&scene, &dry, &clips, fs, cfg.reverberant_target)?;
            // one gain for mixture and target keeps their relation intact
            let peak = ex.noisy.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
            if peak > 0.0 {
                let g = cfg.peak / peak;
                ex.noisy.iter_mut().flatten().for_each(|v| *v *= g);
                ex.clean_ref.iter_mut().for_each(|v| *v *= g);
            }
            let id = format!("{}_{i:05}", split.name());
            let noisy = PathBuf::from(split.name()).join(format!("{id}_noisy.wav"));
            let clean = PathBuf::from(split.name()).join(format!("{id}_clean.wav"));
            write_wav(&out.join(&noisy), &Audio { sample_rate: SAMPLE_RATE, channels: ex.noisy })?;
            write_wav(&out.join(&clean), &Audio::mono(SAMPLE_RATE, ex.clean_ref))?;
            Ok(ManifestEntry {
                id,
                split: split.name().into(),
                noisy,
                clean,
                geometry: cfg.geometry.name().into(),
                mics: cfg.mics,
                snr_db: snr,
                rt60: cfg.rt60,
                room: scene.room.spec.dims,
                ref_channel: scene.ref_channel,
                samples: dry.len(),
                sources,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = Manifest { root: out.to_path_buf(), entries };
    manifest.write(&out.join(format!("{}.jsonl", split.name())))?;
    Ok(manifest)
}

/// Generates every split under `out`.
pub fn generate_dataset(cfg: &SimConfig, out: &Path) -> Result<HashMap<Split, Manifest>> {
    Split::ALL.iter().map(|&s| Ok((s, generate_split(cfg, s, out)?))).collect()
}

/// Loaded mixture audio for one manifest entry.
pub struct LoadedExample {
    pub entry: ManifestEntry,
    pub noisy: Vec<Vec<f64>>,
    pub clean: Vec<f64>,
}

pub fn load_example(manifest: &Manifest, entry: &ManifestEntry) -> Result<LoadedExample> {
    let noisy = read_wav(&manifest.resolve(&entry.noisy))?;
    let clean = read_wav(&manifest.resolve(&entry.clean))?;
    for a in [&noisy, &clean] {
        if a.sample_rate != SAMPLE_RATE {
            bail!("{}: audio at {} Hz, expected {SAMPLE_RATE}", entry.id, a.sample_rate);
        }
    }
    if clean.channels.len() != 1 || clean.len() != noisy.len() {
        bail!("{}: clean target must be mono and as long as the mixture", entry.id);
    }
    Ok(LoadedExample { entry: entry.clone(), noisy: noisy.channels, clean: clean.channels.into_iter().next().unwrap() })
}

/// STFT training examples for every manifest entry.
pub fn load_training_examples(manifest: &Manifest, params: &StftParams, mics: Option<usize>) -> Result<Vec<TrainExample<f32>>> {
    manifest
        .entries
        .par_iter()
        .map(|e| {
            let ex = load_example(manifest, e)?;
            if let Some(m) = mics {
                if ex.noisy.len() != m {
                    bail!("{}: {} channels, expected {m}", e.id, ex.noisy.len());
                }
            }
            let to32 = |x: &[f64]| x.iter().map(|&v| v as f32).collect::<Vec<f32>>();
            let specs = ex.noisy.iter().map(|c| stft(&to32(c), params)).collect::<Result<Vec<_>, _>>()?;
            let clean = stft(&to32(&ex.clean), params)?;
            Ok(TrainExample::new(stack_reim(&specs)?, clean)?)
        })
        .collect()
}
