//! Shoebox room acoustics: array placement, image-source impulse responses,
//! decay-time measurement and SNR-controlled mixing.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::Fft;

pub const SPEED_OF_SOUND: f64 = 343.0;
/// Minimum distance of any source or microphone from a wall, metres.
pub const WALL_MARGIN: f64 = 0.1;
/// Minimum source to microphone distance, metres.
pub const MIN_SOURCE_DISTANCE: f64 = 0.5;
/// Signal-to-noise ratios used for the simulated corpus, dB.
pub const SNR_LEVELS: [f64; 5] = [-7.5, -5.0, 0.0, 5.0, 7.5];

/// Half-length of the fractional-delay interpolator, samples.
const SINC_HALF: usize = 8;
/// Fractional-delay resolution of the interpolation table.
const SINC_STEPS: usize = 512;

pub type Point = [f64; 3];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    /// Room dimensions (width x depth x height, metres) assigned to the split.
    pub fn rooms(self) -> &'static [Point] {
        match self {
            Split::Train => &[[3.0, 3.0, 2.0], [5.0, 4.0, 6.0], [8.0, 9.0, 10.0]],
            Split::Dev => &[[5.0, 8.0, 3.0], [4.0, 7.0, 8.0]],
            Split::Test => &[[4.0, 5.0, 3.0], [6.0, 8.0, 5.0]],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoomSpec {
    pub dims: Point,
    pub rt60: f64,
}

impl RoomSpec {
    pub fn new(dims: Point, rt60: f64) -> Result<Self> {
        if dims.iter().any(|&d| !(d > 2.0 * WALL_MARGIN)) {
            return Err(Error::Geometry(format!("room {dims:?} is too small")));
        }
        if !(rt60 > 0.0) {
            return Err(Error::Geometry(format!("rt60 must be positive, got {rt60}")));
        }
        Ok(Self { dims, rt60 })
    }

    pub fn volume(&self) -> f64 {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn surface(&self) -> f64 {
        let [x, y, z] = self.dims;
        2.0 * (x * y + x * z + y * z)
    }

    /// Sabine absorption `alpha = 0.161 V / (S T60)`.
    pub fn sabine_absorption(&self) -> f64 {
        0.161 * self.volume() / (self.surface() * self.rt60)
    }

    pub fn contains(&self, p: &Point, margin: f64) -> bool {
        p.iter().zip(&self.dims).all(|(&c, &d)| c >= margin - 1e-12 && c <= d - margin + 1e-12)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Geometry {
    Linear,
    Circular,
    Distributed,
}

impl Geometry {
    pub const ALL: [Geometry; 3] = [Geometry::Linear, Geometry::Circular, Geometry::Distributed];

    pub fn name(self) -> &'static str {
        match self {
            Geometry::Linear => "linear",
            Geometry::Circular => "circular",
            Geometry::Distributed => "distributed",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|g| g.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown geometry `{s}` (expected linear, circular or distributed)")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArraySpec {
    pub geometry: Geometry,
    pub mics: usize,
    /// Inter-microphone spacing of linear arrays, metres.
    pub spacing: f64,
    /// Radius of circular arrays, metres.
    pub radius: f64,
}

impl ArraySpec {
    pub fn new(geometry: Geometry, mics: usize) -> Self {
        Self { geometry, mics, spacing: 0.05, radius: 0.1 }
    }
}

fn uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

fn distance(a: &Point, b: &Point) -> f64 {
    libm::sqrt((0..3).map(|i| (a[i] - b[i]) * (a[i] - b[i])).sum())
}

/// Microphone positions for `spec` inside `room`.
pub fn place_array(spec: &ArraySpec, room: &RoomSpec, rng: &mut impl Rng) -> Result<Vec<Point>> {
    if spec.mics == 0 {
        return Err(Error::Geometry("an array needs at least one microphone".into()));
    }
    let m = WALL_MARGIN;
    let [dx, dy, dz] = room.dims;
    let z = uniform(rng, m, dz - m);
    let positions = match spec.geometry {
        Geometry::Linear => {
            let len = spec.spacing * (spec.mics - 1) as f64;
            if spec.mics > 1 && !(spec.spacing > 0.0) {
                return Err(Error::Geometry("linear spacing must be positive".into()));
            }
            let axes: Vec<usize> = (0..2).filter(|&a| room.dims[a] - 2.0 * m >= len).collect();
            if axes.is_empty() {
                return Err(Error::Geometry(format!("a {len:.2} m linear array does not fit in room {:?}", room.dims)));
            }
            let axis = axes[rng.random_range(0..axes.len())];
            let other = 1 - axis;
            let start = uniform(rng, m, room.dims[axis] - m - len);
            let across = uniform(rng, m, room.dims[other] - m);
            (0..spec.mics)
                .map(|i| {
                    let mut p = [0.0, 0.0, z];
                    p[axis] = start + spec.spacing * i as f64;
                    p[other] = across;
                    p
                })
                .collect()
        }
        Geometry::Circular => {
            let r = spec.radius;
            if spec.mics > 1 && !(r > 0.0) {
                return Err(Error::Geometry("circular radius must be positive".into()));
            }
            if dx - 2.0 * (m + r) < 0.0 || dy - 2.0 * (m + r) < 0.0 {
                return Err(Error::Geometry(format!("a {r:.2} m radius array does not fit in room {:?}", room.dims)));
            }
            let cx = uniform(rng, m + r, dx - m - r);
            let cy = uniform(rng, m + r, dy - m - r);
            let rotation = uniform(rng, 0.0, 2.0 * PI);
            (0..spec.mics)
                .map(|i| {
                    let a = rotation + 2.0 * PI * i as f64 / spec.mics as f64;
                    [cx + r * libm::cos(a), cy + r * libm::sin(a), z]
                })
                .collect()
        }
        Geometry::Distributed => (0..spec.mics)
            .map(|_| [uniform(rng, m, dx - m), uniform(rng, m, dy - m), uniform(rng, m, dz - m)])
            .collect(),
    };
    Ok(positions)
}

/// `count` source positions at least [`MIN_SOURCE_DISTANCE`] from every
/// microphone.
pub fn place_sources(room: &RoomSpec, mics: &[Point], count: usize, rng: &mut impl Rng) -> Result<Vec<Point>> {
    let m = WALL_MARGIN;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let mut placed = None;
        for _ in 0..10_000 {
            let p = [
                uniform(rng, m, room.dims[0] - m),
                uniform(rng, m, room.dims[1] - m),
                uniform(rng, m, room.dims[2] - m),
            ];
            if mics.iter().all(|q| distance(&p, q) >= MIN_SOURCE_DISTANCE) {
                placed = Some(p);
                break;
            }
        }
        out.push(placed.ok_or_else(|| Error::Geometry(format!("no source position in room {:?} clears the array", room.dims)))?);
    }
    Ok(out)
}

/// Hann-windowed sinc taps for fractional delays `k / SINC_STEPS`.
fn sinc_table() -> Vec<[f64; 2 * SINC_HALF]> {
    let h = SINC_HALF as f64;
    (0..SINC_STEPS)
        .map(|k| {
            let f = k as f64 / SINC_STEPS as f64;
            let mut taps = [0.0; 2 * SINC_HALF];
            for (i, tap) in taps.iter_mut().enumerate() {
                // offset j = i - (H - 1), evaluated at x = j - f
                let x = i as f64 - (h - 1.0) - f;
                let sinc = if x == 0.0 { 1.0 } else { libm::sin(PI * x) / (PI * x) };
                let w = if x.abs() >= h { 0.0 } else { 0.5 * (1.0 + libm::cos(PI * x / h)) };
                *tap = sinc * w;
            }
            taps
        })
        .collect()
}

fn add_delayed(out: &mut [f64], table: &[[f64; 2 * SINC_HALF]], delay: f64, gain: f64) {
    let mut n0 = libm::floor(delay) as i64;
    let mut k = libm::round((delay - n0 as f64) * SINC_STEPS as f64) as usize;
    if k == SINC_STEPS {
        k = 0;
        n0 += 1;
    }
    let base = n0 - (SINC_HALF as i64 - 1);
    for (i, &tap) in table[k].iter().enumerate() {
        let n = base + i as i64;
        if n >= 0 && (n as usize) < out.len() {
            out[n as usize] += gain * tap;
        }
    }
}

fn check_inside(room_dims: &Point, p: &Point, what: &str) -> Result<()> {
    if p.iter().zip(room_dims).any(|(&c, &d)| !(c > 0.0 && c < d)) {
        return Err(Error::Geometry(format!("{what} {p:?} is outside room {room_dims:?}")));
    }
    Ok(())
}

/// Image-source impulse response of a shoebox room with uniform pressure
/// reflection coefficient `beta`, `len` samples long. Images farther than the
/// response length are skipped.
pub fn image_source_rir(dims: Point, beta: f64, src: Point, mic: Point, fs: f64, len: usize) -> Result<Vec<f64>> {
    check_inside(&dims, &src, "source")?;
    check_inside(&dims, &mic, "microphone")?;
    if distance(&src, &mic) < 1e-6 {
        return Err(Error::Geometry("source and microphone coincide".into()));
    }
    let table = sinc_table();
    let mut out = vec![0.0; len];
    let max_dist = SPEED_OF_SOUND * (len + SINC_HALF) as f64 / fs;
    let reach: Vec<i64> = dims.iter().map(|&d| libm::ceil(max_dist / (2.0 * d)) as i64 + 1).collect();
    let max_order = (reach.iter().sum::<i64>() as usize) * 2 + 3;
    let mut powers = vec![1.0; max_order + 1];
    for i in 1..=max_order {
        powers[i] = powers[i - 1] * beta;
    }
    // per axis: image coordinate offsets and reflection counts
    let axis_images = |a: usize| -> Vec<(f64, usize)> {
        let mut v = Vec::new();
        for n in -reach[a]..=reach[a] {
            for q in 0..2i64 {
                let pos = (1 - 2 * q) as f64 * src[a] + 2.0 * n as f64 * dims[a];
                let reflections = ((n - q).abs() + n.abs()) as usize;
                v.push((pos - mic[a], reflections));
            }
        }
        v
    };
    let (xs, ys, zs) = (axis_images(0), axis_images(1), axis_images(2));
    let r2 = max_dist * max_dist;
    for &(dx, rx) in &xs {
        let dx2 = dx * dx;
        if dx2 > r2 {
            continue;
        }
        for &(dy, ry) in &ys {
            let dxy2 = dx2 + dy * dy;
            if dxy2 > r2 {
                continue;
            }
            for &(dz, rz) in &zs {
                let d2 = dxy2 + dz * dz;
                if d2 > r2 {
                    continue;
                }
                let d = libm::sqrt(d2);
                let order = rx + ry + rz;
                let gain = powers[order] / (4.0 * PI * d);
                if gain == 0.0 {
                    continue;
                }
                add_delayed(&mut out, &table, d / SPEED_OF_SOUND * fs, gain);
            }
        }
    }
    Ok(out)
}

/// A room together with the wall reflection coefficient used for its
/// impulse responses.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Room {
    pub spec: RoomSpec,
    pub reflection: f64,
}

impl Room {
    /// Starts from Sabine's absorption and rescales `-ln(beta)` until the
    /// Schroeder decay time of a probe response matches `spec.rt60`.
    ///
    /// Specular image sources in a shoebox decay more slowly than the
    /// diffuse-field formula predicts, so Sabine's value alone overshoots.
    pub fn calibrated(spec: RoomSpec, fs: f64) -> Result<Self> {
        let alpha = spec.sabine_absorption().min(0.99);
        let mut beta = libm::sqrt(1.0 - alpha);
        let src = [0.31 * spec.dims[0], 0.27 * spec.dims[1], 0.43 * spec.dims[2]];
        let mic = [0.64 * spec.dims[0], 0.71 * spec.dims[1], 0.52 * spec.dims[2]];
        let len = libm::ceil(spec.rt60 * fs) as usize;
        for _ in 0..6 {
            let rir = image_source_rir(spec.dims, beta, src, mic, fs, len)?;
            let Some(rt) = schroeder_rt60(&rir, fs) else { break };
            if libm::fabs(rt - spec.rt60) < 0.01 * spec.rt60 {
                break;
            }
            beta = libm::exp(libm::log(beta) * rt / spec.rt60);
        }
        Ok(Self { spec, reflection: beta })
    }

    pub fn with_reflection(spec: RoomSpec, reflection: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&reflection) {
            return Err(Error::Geometry(format!("reflection coefficient {reflection} outside [0, 1]")));
        }
        Ok(Self { spec, reflection })
    }
}

/// Image-source response covering at least `rt60` seconds after the direct
/// path.
pub fn simulate_rir(room: &Room, src: Point, mic: Point, fs: f64) -> Result<Vec<f64>> {
    let direct = distance(&src, &mic) / SPEED_OF_SOUND;
    let len = libm::ceil((room.spec.rt60 + direct) * fs) as usize;
    image_source_rir(room.spec.dims, room.reflection, src, mic, fs, len)
}

/// Free-field response: the direct path only.
pub fn direct_path_rir(src: Point, mic: Point, fs: f64) -> Vec<f64> {
    let d = distance(&src, &mic);
    let delay = d / SPEED_OF_SOUND * fs;
    let mut out = vec![0.0; libm::ceil(delay) as usize + SINC_HALF + 1];
    add_delayed(&mut out, &sinc_table(), delay, 1.0 / (4.0 * PI * d));
    out
}

/// Decay time from Schroeder backward integration: a least-squares line
/// through the energy decay curve between -5 and -25 dB, extrapolated to
/// -60 dB. `None` when the curve never falls to -25 dB.
pub fn schroeder_rt60(rir: &[f64], fs: f64) -> Option<f64> {
    let mut edc = vec![0.0; rir.len()];
    let mut acc = 0.0;
    for i in (0..rir.len()).rev() {
        acc += rir[i] * rir[i];
        edc[i] = acc;
    }
    let total = *edc.first()?;
    if total <= 0.0 {
        return None;
    }
    let (mut n, mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let mut reached = false;
    for (i, &e) in edc.iter().enumerate() {
        let db = 10.0 * libm::log10(e / total);
        if db <= -25.0 {
            reached = true;
            break;
        }
        if db <= -5.0 {
            let t = i as f64 / fs;
            n += 1.0;
            sx += t;
            sy += db;
            sxx += t * t;
            sxy += t * db;
        }
    }
    if !reached || n < 2.0 {
        return None;
    }
    let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    (slope < 0.0).then(|| -60.0 / slope)
}

/// Linear convolution through the FFT, truncated to `out_len` samples.
pub fn convolve(signal: &[f64], ir: &[f64], out_len: usize) -> Vec<f64> {
    if signal.is_empty() || ir.is_empty() {
        return vec![0.0; out_len];
    }
    let full = signal.len() + ir.len() - 1;
    let n = full.next_power_of_two();
    let fft = Fft::<f64>::new(n);
    let mut a: Vec<Complex<f64>> = signal.iter().map(|&v| Complex::new(v, 0.0)).collect();
    a.resize(n, Complex::new(0.0, 0.0));
    let mut b: Vec<Complex<f64>> = ir.iter().map(|&v| Complex::new(v, 0.0)).collect();
    b.resize(n, Complex::new(0.0, 0.0));
    fft.forward(&mut a);
    fft.forward(&mut b);
    for (x, y) in a.iter_mut().zip(&b) {
        *x *= *y;
    }
    fft.inverse(&mut a);
    let scale = 1.0 / n as f64;
    (0..out_len).map(|i| if i < full { a[i].re * scale } else { 0.0 }).collect()
}

pub fn power(x: &[f64]) -> f64 {
    if x.is_empty() {
        0.0
    } else {
        x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
    }
}

/// Noise clip looped (or cut) to `len` samples starting at `offset`.
pub fn fit_length(noise: &[f64], len: usize, offset: usize) -> Vec<f64> {
    if noise.is_empty() {
        return vec![0.0; len];
    }
    (0..len).map(|i| noise[(offset + i) % noise.len()]).collect()
}

/// Multi-channel mixture and the global gain applied to the noise.
#[derive(Clone, Debug, PartialEq)]
pub struct Mixture {
    pub channels: Vec<Vec<f64>>,
    pub noise_gain: f64,
}

/// Adds the summed noise images to the speech images with one global gain
/// chosen so the reference channel reaches `snr_db`. `f64::INFINITY`
/// disables the noise.
pub fn mix_at_snr(speech: &[Vec<f64>], noises: &[Vec<Vec<f64>>], snr_db: f64, ref_channel: usize) -> Result<Mixture> {
    let m = speech.len();
    if ref_channel >= m {
        return Err(Error::ChannelMismatch { expected: ref_channel + 1, got: m });
    }
    let len = speech[0].len();
    if speech.iter().any(|c| c.len() != len) || noises.iter().any(|n| n.len() != m || n.iter().any(|c| c.len() != len)) {
        return Err(Error::Shape("speech and noise images must share channel count and length".into()));
    }
    if snr_db == f64::INFINITY {
        return Ok(Mixture { channels: speech.to_vec(), noise_gain: 0.0 });
    }
    if snr_db.is_nan() {
        return Err(Error::NonFinite("target SNR"));
    }
    let mut noise = vec![vec![0.0; len]; m];
    for src in noises {
        for (acc, ch) in noise.iter_mut().zip(src) {
            for (a, &v) in acc.iter_mut().zip(ch) {
                *a += v;
            }
        }
    }
    let ps = power(&speech[ref_channel]);
    let pn = power(&noise[ref_channel]);
    if ps == 0.0 {
        return Err(Error::Silent("speech"));
    }
    if pn == 0.0 {
        return Err(Error::Silent("noise"));
    }
    let gain = libm::sqrt(ps / (pn * libm::pow(10.0, snr_db / 10.0)));
    let channels = speech
        .iter()
        .zip(&noise)
        .map(|(s, n)| s.iter().zip(n).map(|(&a, &b)| a + gain * b).collect())
        .collect();
    Ok(Mixture { channels, noise_gain: gain })
}

pub fn snr_db(speech: &[f64], noise: &[f64]) -> f64 {
    10.0 * libm::log10(power(speech) / power(noise))
}

/// Fully resolved acoustic scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub room: Room,
    pub array: ArraySpec,
    pub mics: Vec<Point>,
    pub speech: Point,
    /// Exactly `M - 1` noise sources.
    pub noises: Vec<Point>,
    pub snr_db: f64,
    pub ref_channel: usize,
}

pub fn random_scene(room: Room, array: ArraySpec, snr_db: f64, rng: &mut impl Rng) -> Result<SceneSpec> {
    let mics = place_array(&array, &room.spec, rng)?;
    let sources = place_sources(&room.spec, &mics, array.mics, rng)?;
    Ok(SceneSpec { room, array, speech: sources[0], noises: sources[1..].to_vec(), mics, snr_db, ref_channel: 0 })
}

#[derive(Clone, Debug, PartialEq)]
pub struct MixtureExample {
    /// One waveform per microphone.
    pub noisy: Vec<Vec<f64>>,
    /// Target at the reference microphone.
    pub clean_ref: Vec<f64>,
    pub scene: SceneSpec,
}

/// Convolves dry speech and noise with the scene's responses and mixes them.
/// Noise clips must already have the speech length. The target is the direct
/// path at the reference mic, or its full reverberant image when
/// `reverberant_target` is set.
pub fn render_scene(scene: &SceneSpec, speech: &[f64], noises: &[Vec<f64>], fs: f64, reverberant_target: bool) -> Result<MixtureExample> {
    if noises.len() != scene.noises.len() {
        return Err(Error::Shape(format!("scene has {} noise sources, got {} clips", scene.noises.len(), noises.len())));
    }
    let len = speech.len();
    let image = |src: Point, signal: &[f64]| -> Result<Vec<Vec<f64>>> {
        scene
            .mics
            .iter()
            .map(|&mic| Ok(convolve(signal, &simulate_rir(&scene.room, src, mic, fs)?, len)))
            .collect()
    };
    let speech_img = image(scene.speech, speech)?;
    let noise_imgs = scene
        .noises
        .iter()
        .zip(noises)
        .map(|(&p, clip)| image(p, &fit_length(clip, len, 0)))
        .collect::<Result<Vec<_>>>()?;
    let clean_ref = if reverberant_target {
        speech_img[scene.ref_channel].clone()
    } else {
        convolve(speech, &direct_path_rir(scene.speech, scene.mics[scene.ref_channel], fs), len)
    };
    let noisy = if noise_imgs.is_empty() {
        speech_img
    } else {
        mix_at_snr(&speech_img, &noise_imgs, scene.snr_db, scene.ref_channel)?.channels
    };
    Ok(MixtureExample { noisy, clean_ref, scene: scene.clone() })
}

/// Raised-cosine attack and release of `ramp` samples around a flat body.
fn syllable_envelope(i: usize, dur: usize, ramp: usize) -> f64 {
    let edge = i.min(dur - 1 - i);
    if edge >= ramp {
        1.0
    } else {
        0.5 - 0.5 * libm::cos(PI * edge as f64 / ramp as f64)
    }
}

/// Speech-like test signal: voiced syllables (harmonic series with a gliding
/// pitch and random formant peaks) separated by short pauses, peak 0.5.
pub fn synthetic_speech(len: usize, fs: f64, rng: &mut impl Rng) -> Vec<f64> {
    let mut out = vec![0.0; len];
    let mut pos = (rng.random_range(0.02..0.1) * fs) as usize;
    while pos < len {
        let dur = (rng.random_range(0.12..0.3) * fs) as usize;
        let f0_start = rng.random_range(90.0..220.0);
        let f0_end = f0_start * rng.random_range(0.8..1.25);
        let formants = [rng.random_range(300.0..900.0), rng.random_range(900.0..2300.0), rng.random_range(2300.0..3500.0)];
        let gain = rng.random_range(0.3..1.0);
        let ramp = (rng.random_range(0.015..0.03) * fs) as usize;
        let mut phase = 0.0;
        for i in 0..dur.min(len - pos) {
            let u = i as f64 / dur as f64;
            let f0 = f0_start + (f0_end - f0_start) * u;
            phase += 2.0 * PI * f0 / fs;
            let env = syllable_envelope(i, dur, ramp);
            let mut v = 0.0;
            let mut h = 1;
            while (h as f64) * f0 < (fs / 2.0).min(4000.0) {
                let f = h as f64 * f0;
                let amp: f64 = formants.iter().map(|&fm| 1.0 / (1.0 + ((f - fm) / 120.0) * ((f - fm) / 120.0))).sum();
                v += amp * libm::sin(h as f64 * phase) / h as f64;
                h += 1;
            }
            out[pos + i] += gain * env * v;
        }
        pos += dur + (rng.random_range(0.03..0.15) * fs) as usize;
    }
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        out.iter_mut().for_each(|v| *v *= 0.5 / peak);
    }
    out
}

/// Stationary noise with a random spectral tilt (white through strongly
/// low-passed), unit variance.
pub fn synthetic_noise(len: usize, rng: &mut impl Rng) -> Vec<f64> {
    let a = rng.random_range(0.0..0.95);
    let mut state = 0.0;
    let mut out: Vec<f64> = (0..len)
        .map(|_| {
            let w: f64 = rng.sample(rand_distr::StandardNormal);
            state = a * state + w;
            state
        })
        .collect();
    let p = power(&out);
    if p > 0.0 {
        let s = 1.0 / libm::sqrt(p);
        out.iter_mut().for_each(|v| *v *= s);
    }
    out
}
