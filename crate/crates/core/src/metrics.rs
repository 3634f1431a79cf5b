//! Objective quality measures: SDR, STOI, and per-condition aggregation.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::Fft;

/// Upper bound reported by [`sdr`] for (near) perfect estimates.
pub const SDR_CAP_DB: f64 = 60.0;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Signal-to-distortion ratio in dB with a time-invariant gain allowance.
///
/// `est` is projected onto `ref`; the projection is the target component and
/// the remainder the distortion.
pub fn sdr(est: &[f64], reference: &[f64]) -> Result<f64> {
    if est.len() != reference.len() {
        return Err(Error::Shape(alloc::format!(
            "estimate has {} samples, reference {}",
            est.len(),
            reference.len()
        )));
    }
    let rr = dot(reference, reference);
    if !(rr > 0.0) {
        return Err(Error::ZeroReference);
    }
    let g = dot(est, reference) / rr;
    let target = g * g * rr;
    let err: f64 = est.iter().zip(reference).map(|(e, r)| {
        let d = e - g * r;
        d * d
    }).sum();
    if err <= 0.0 {
        return Ok(SDR_CAP_DB);
    }
    Ok((10.0 * libm::log10(target / err)).min(SDR_CAP_DB))
}

const STOI_FS: usize = 10_000;
const STOI_FRAME: usize = 256;
const STOI_NFFT: usize = 512;
const STOI_BANDS: usize = 15;
const STOI_MIN_FREQ: f64 = 150.0;
/// Frames per short-time segment (384 ms at the internal rate).
const STOI_SEGMENT: usize = 30;
const STOI_CLIP_DB: f64 = -15.0;
const STOI_DYN_RANGE: f64 = 40.0;
const EPS: f64 = 1e-12;

/// Input sample rate accepted by [`stoi`].
pub const STOI_INPUT_FS: u32 = 16_000;

/// Resamples 16 kHz to 10 kHz with a Blackman-windowed sinc (cutoff 4.8 kHz).
fn resample_16k_to_10k(x: &[f64]) -> Vec<f64> {
    // output n sits at input position 8n/5; five distinct fractional phases
    const UP: usize = 5;
    const DOWN: usize = 8;
    const HALF: isize = 32;
    let cutoff = 4800.0 / 16000.0;
    let phases: Vec<Vec<f64>> = (0..UP)
        .map(|p| {
            let frac = ((p * DOWN) % UP) as f64 / UP as f64;
            (-HALF + 1..=HALF)
                .map(|k| {
                    let t = k as f64 - frac;
                    let s = if t == 0.0 { 2.0 * cutoff } else { libm::sin(2.0 * PI * cutoff * t) / (PI * t) };
                    let w = (t + HALF as f64) / (2 * HALF) as f64;
                    let win = 0.42 - 0.5 * libm::cos(2.0 * PI * w) + 0.08 * libm::cos(4.0 * PI * w);
                    s * win
                })
                .collect()
        })
        .collect();
    let out_len = (x.len() * UP).div_ceil(DOWN);
    (0..out_len)
        .map(|n| {
            let base = (n * DOWN / UP) as isize;
            let taps = &phases[n % UP];
            let mut acc = 0.0;
            for (j, &h) in taps.iter().enumerate() {
                let i = base + j as isize - HALF + 1;
                if i >= 0 && (i as usize) < x.len() {
                    acc += h * x[i as usize];
                }
            }
            acc
        })
        .collect()
}

/// `np.hanning(n + 2)[1:-1]`: a Hann window without its zero end points.
fn stoi_window() -> Vec<f64> {
    let m = STOI_FRAME + 2;
    (1..=STOI_FRAME).map(|i| 0.5 - 0.5 * libm::cos(2.0 * PI * i as f64 / (m - 1) as f64)).collect()
}

fn frame_starts(len: usize) -> impl Iterator<Item = usize> {
    let hop = STOI_FRAME / 2;
    let count = if len >= STOI_FRAME { (len - STOI_FRAME) / hop + 1 } else { 0 };
    (0..count).map(move |i| i * hop)
}

/// Drops frames of `x` more than 40 dB below its loudest frame, applying the
/// same selection to `y`, and overlap-adds the survivors.
fn remove_silent_frames(x: &[f64], y: &[f64], window: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let hop = STOI_FRAME / 2;
    let starts: Vec<usize> = frame_starts(x.len()).collect();
    let energy: Vec<f64> = starts
        .iter()
        .map(|&s| {
            let e: f64 = x[s..s + STOI_FRAME].iter().zip(window).map(|(v, w)| (v * w) * (v * w)).sum();
            20.0 * libm::log10(libm::sqrt(e) + EPS)
        })
        .collect();
    let max = energy.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let keep: Vec<usize> = starts.iter().zip(&energy).filter(|(_, &e)| e > max - STOI_DYN_RANGE).map(|(&s, _)| s).collect();
    if keep.is_empty() {
        return (Vec::new(), Vec::new());
    }
    let len = (keep.len() - 1) * hop + STOI_FRAME;
    let (mut xs, mut ys) = (vec![0.0; len], vec![0.0; len]);
    for (j, &s) in keep.iter().enumerate() {
        for k in 0..STOI_FRAME {
            xs[j * hop + k] += x[s + k] * window[k];
            ys[j * hop + k] += y[s + k] * window[k];
        }
    }
    (xs, ys)
}

/// One-third-octave band matrix over the `NFFT/2 + 1` bins, as bin ranges.
fn third_octave_bands() -> Vec<(usize, usize)> {
    let bins = STOI_NFFT / 2 + 1;
    let freq = |k: usize| k as f64 * STOI_FS as f64 / STOI_NFFT as f64;
    let nearest = |f: f64| {
        (0..bins)
            .min_by(|&a, &b| (freq(a) - f).abs().partial_cmp(&(freq(b) - f).abs()).unwrap())
            .unwrap()
    };
    (0..STOI_BANDS)
        .map(|i| {
            let lo = STOI_MIN_FREQ * libm::pow(2.0, (2.0 * i as f64 - 1.0) / 6.0);
            let hi = STOI_MIN_FREQ * libm::pow(2.0, (2.0 * i as f64 + 1.0) / 6.0);
            (nearest(lo), nearest(hi))
        })
        .collect()
}

/// Band envelopes `[band][frame]`.
fn band_envelopes(x: &[f64], window: &[f64], fft: &Fft<f64>, bands: &[(usize, usize)]) -> Vec<Vec<f64>> {
    let mut out = vec![Vec::new(); bands.len()];
    let mut buf: Vec<Complex<f64>> = Vec::with_capacity(STOI_NFFT);
    for s in frame_starts(x.len()) {
        buf.clear();
        buf.extend(x[s..s + STOI_FRAME].iter().zip(window).map(|(v, w)| Complex::new(v * w, 0.0)));
        buf.resize(STOI_NFFT, Complex::new(0.0, 0.0));
        fft.forward(&mut buf);
        for (b, &(lo, hi)) in bands.iter().enumerate() {
            let e: f64 = buf[lo..hi].iter().map(|c| c.norm_sqr()).sum();
            out[b].push(libm::sqrt(e));
        }
    }
    out
}

/// Short-time objective intelligibility of `est` against the clean `reference`.
///
/// Both signals must be sampled at 16 kHz; they are resampled to 10 kHz
/// internally. After silent-frame removal at least 384 ms must remain.
pub fn stoi(est: &[f64], reference: &[f64], fs: u32) -> Result<f64> {
    if fs != STOI_INPUT_FS {
        return Err(Error::SampleRate(fs));
    }
    if est.len() != reference.len() {
        return Err(Error::Shape(alloc::format!(
            "estimate has {} samples, reference {}",
            est.len(),
            reference.len()
        )));
    }
    let x = resample_16k_to_10k(reference);
    let y = resample_16k_to_10k(est);
    let window = stoi_window();
    let (x, y) = remove_silent_frames(&x, &y, &window);
    let need = (STOI_SEGMENT - 1) * STOI_FRAME / 2 + STOI_FRAME;
    let frames = frame_starts(x.len()).count();
    if frames < STOI_SEGMENT {
        return Err(Error::StoiTooShort { got: x.len(), need });
    }
    let fft = Fft::new(STOI_NFFT);
    let bands = third_octave_bands();
    let xe = band_envelopes(&x, &window, &fft, &bands);
    let ye = band_envelopes(&y, &window, &fft, &bands);
    let clip = 1.0 + libm::pow(10.0, -STOI_CLIP_DB / 20.0);
    let mut total = 0.0;
    let segments = frames - STOI_SEGMENT + 1;
    for m in 0..segments {
        for (xb, yb) in xe.iter().zip(&ye) {
            let xs = &xb[m..m + STOI_SEGMENT];
            let ys = &yb[m..m + STOI_SEGMENT];
            let norm = libm::sqrt(dot(xs, xs)) / (libm::sqrt(dot(ys, ys)) + EPS);
            let yp: Vec<f64> = ys.iter().zip(xs).map(|(y, x)| (y * norm).min(x * clip)).collect();
            let n = STOI_SEGMENT as f64;
            let (mx, my) = (xs.iter().sum::<f64>() / n, yp.iter().sum::<f64>() / n);
            let xc: Vec<f64> = xs.iter().map(|v| v - mx).collect();
            let yc: Vec<f64> = yp.iter().map(|v| v - my).collect();
            let denom = (libm::sqrt(dot(&xc, &xc)) + EPS) * (libm::sqrt(dot(&yc, &yc)) + EPS);
            total += dot(&xc, &yc) / denom;
        }
    }
    Ok(total / (segments * STOI_BANDS) as f64)
}

/// Scores of one signal against the clean reference.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub stoi: f64,
    /// Absent when no PESQ tool is configured or the tool failed.
    pub pesq: Option<f64>,
    pub sdr: f64,
}

/// Evaluation condition: array geometry, microphone count and input SNR.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub geometry: String,
    pub mics: usize,
    pub snr_db: f64,
}

impl Condition {
    fn key(&self) -> (String, usize, i64) {
        // SNR levels are multiples of 0.5 dB; compare on a fixed grid
        (self.geometry.clone(), self.mics, libm::round(self.snr_db * 1000.0) as i64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExampleReport {
    pub id: String,
    pub condition: Condition,
    pub noisy: Scores,
    pub enhanced: Scores,
}

/// Arithmetic means over the examples of one condition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionSummary {
    pub condition: Condition,
    pub count: usize,
    pub noisy: Scores,
    pub enhanced: Scores,
}

fn mean_scores<'a>(scores: impl Iterator<Item = &'a Scores> + Clone) -> Scores {
    let n = scores.clone().count() as f64;
    let pesq: Vec<f64> = scores.clone().filter_map(|s| s.pesq).collect();
    Scores {
        stoi: scores.clone().map(|s| s.stoi).sum::<f64>() / n,
        pesq: if pesq.is_empty() { None } else { Some(pesq.iter().sum::<f64>() / pesq.len() as f64) },
        sdr: scores.map(|s| s.sdr).sum::<f64>() / n,
    }
}

/// Per-example results plus per-condition means.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub examples: Vec<ExampleReport>,
}

impl MetricReport {
    pub fn new(examples: Vec<ExampleReport>) -> Self {
        Self { examples }
    }

    /// Condition means, ordered by geometry, microphone count, then SNR.
    pub fn summaries(&self) -> Vec<ConditionSummary> {
        let mut groups: BTreeMap<(String, usize, i64), Vec<&ExampleReport>> = BTreeMap::new();
        for e in &self.examples {
            groups.entry(e.condition.key()).or_default().push(e);
        }
        groups
            .into_values()
            .map(|g| ConditionSummary {
                condition: g[0].condition.clone(),
                count: g.len(),
                noisy: mean_scores(g.iter().map(|e| &e.noisy)),
                enhanced: mean_scores(g.iter().map(|e| &e.enhanced)),
            })
            .collect()
    }

    /// Means over every example regardless of condition.
    pub fn overall(&self) -> Option<(Scores, Scores)> {
        if self.examples.is_empty() {
            return None;
        }
        Some((mean_scores(self.examples.iter().map(|e| &e.noisy)), mean_scores(self.examples.iter().map(|e| &e.enhanced))))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn band_edges_cover_expected_range() {
        let bands = third_octave_bands();
        assert_eq!(bands.len(), 15);
        // 150 Hz * 2^(-1/6) ~ 133.6 Hz -> bin 7 at 19.53 Hz spacing
        assert_eq!(bands[0].0, 7);
        assert!(bands.windows(2).all(|w| w[0].1 == w[1].0 || w[0].1 + 1 >= w[1].0));
        assert!(bands[14].1 <= 257);
    }

    #[test]
    fn resampler_keeps_a_low_tone() {
        let x: Vec<f64> = (0..16000).map(|n| libm::sin(2.0 * PI * 440.0 * n as f64 / 16000.0)).collect();
        let y = resample_16k_to_10k(&x);
        assert_eq!(y.len(), 10000);
        for (n, &v) in y.iter().enumerate().skip(100).take(9800) {
            let want = libm::sin(2.0 * PI * 440.0 * n as f64 / 10000.0);
            assert!((v - want).abs() < 1e-3, "{n}: {v} vs {want}");
        }
    }

    #[test]
    fn sdr_cap_and_errors() {
        let r = [1.0, -2.0, 3.0];
        assert_eq!(sdr(&r, &r).unwrap(), SDR_CAP_DB);
        assert_eq!(sdr(&r, &[0.0; 3]), Err(Error::ZeroReference));
        assert!(sdr(&r, &[1.0]).is_err());
    }
}
