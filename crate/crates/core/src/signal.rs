//! STFT analysis/synthesis, real/imaginary stacking and complex ratio masks.
//!
//! Framing convention: the waveform is reflect-padded by `window_length / 2`
//! on both sides, so a signal of `L` samples yields
//! `T = 1 + floor(L / hop)` frames and frame `t` is centred on sample
//! `t * hop`. Synthesis overlap-adds windowed inverse frames, divides by the
//! overlap-added squared window and trims the padding again.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::fft::Fft;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const SAMPLE_RATE: u32 = 16_000;

/// Squared-window sums at or below this are treated as uncovered samples.
const WINDOW_SUM_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftParams {
    pub window_length: usize,
    pub hop: usize,
    pub sample_rate: u32,
}

impl Default for StftParams {
    fn default() -> Self {
        Self { window_length: 1024, hop: 512, sample_rate: SAMPLE_RATE }
    }
}

impl StftParams {
    pub fn new(window_length: usize, hop: usize) -> Result<Self> {
        let p = Self { window_length, hop, sample_rate: SAMPLE_RATE };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.window_length.is_power_of_two() || self.window_length < 4 {
            return Err(Error::InvalidParams(format!(
                "window length {} must be a power of two >= 4",
                self.window_length
            )));
        }
        if self.hop == 0 || self.hop > self.window_length / 2 {
            return Err(Error::InvalidParams(format!(
                "hop {} must be in 1..={} for a Hann window",
                self.hop,
                self.window_length / 2
            )));
        }
        Ok(())
    }

    pub fn n_freq_bins(&self) -> usize {
        self.window_length / 2 + 1
    }

    /// Frames produced for a signal of `len` samples.
    pub fn n_frames(&self, len: usize) -> usize {
        1 + len / self.hop
    }

    /// Periodic Hann window.
    pub fn window<T: Scalar>(&self) -> Vec<T> {
        let n = self.window_length as f64;
        (0..self.window_length)
            .map(|i| T::of(0.5 - 0.5 * libm::cos(2.0 * core::f64::consts::PI * i as f64 / n)))
            .collect()
    }

    /// Squared-window overlap-add over `frames` frames, in padded coordinates.
    fn window_sum<T: Scalar>(&self, frames: usize) -> Vec<T> {
        let w = self.window::<T>();
        let mut sum = vec![T::zero(); (frames.max(1) - 1) * self.hop + self.window_length];
        for t in 0..frames {
            for (s, &wv) in sum[t * self.hop..].iter_mut().zip(&w) {
                *s += wv * wv;
            }
        }
        sum
    }
}

/// `T x F` complex time-frequency representation of one channel.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexSpectrogram<T> {
    frames: usize,
    bins: usize,
    data: Vec<Complex<T>>,
    params: StftParams,
}

impl<T: Scalar> ComplexSpectrogram<T> {
    pub fn new(frames: usize, bins: usize, data: Vec<Complex<T>>, params: StftParams) -> Result<Self> {
        if bins != params.n_freq_bins() {
            return Err(Error::ParamsMismatch(format!(
                "{bins} bins but window length {} gives {}",
                params.window_length,
                params.n_freq_bins()
            )));
        }
        if data.len() != frames * bins {
            return Err(Error::Shape(format!("{} values for {frames} x {bins}", data.len())));
        }
        if data.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::NonFinite("spectrogram"));
        }
        Ok(Self { frames, bins, data, params })
    }

    pub fn zeros(frames: usize, params: StftParams) -> Self {
        let bins = params.n_freq_bins();
        Self { frames, bins, data: vec![Complex::new(T::zero(), T::zero()); frames * bins], params }
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn params(&self) -> &StftParams {
        &self.params
    }

    pub fn data(&self) -> &[Complex<T>] {
        &self.data
    }

    pub fn get(&self, t: usize, f: usize) -> Complex<T> {
        self.data[t * self.bins + f]
    }

    /// `[2, T, F]` real/imaginary planes.
    pub fn to_planes(&self) -> Tensor<T> {
        let mut out = Vec::with_capacity(2 * self.data.len());
        out.extend(self.data.iter().map(|c| c.re));
        out.extend(self.data.iter().map(|c| c.im));
        Tensor::from_vec(&[2, self.frames, self.bins], out).unwrap()
    }

    pub fn from_planes(planes: &[T], frames: usize, params: StftParams) -> Result<Self> {
        let bins = params.n_freq_bins();
        let n = frames * bins;
        if planes.len() != 2 * n {
            return Err(Error::Shape(format!("{} plane values for 2 x {frames} x {bins}", planes.len())));
        }
        let data = (0..n).map(|i| Complex::new(planes[i], planes[n + i])).collect();
        Self::new(frames, bins, data, params)
    }

    /// Frames `start..start + len`.
    pub fn slice_frames(&self, start: usize, len: usize) -> Self {
        assert!(start + len <= self.frames, "frame slice out of range");
        Self {
            frames: len,
            bins: self.bins,
            data: self.data[start * self.bins..(start + len) * self.bins].to_vec(),
            params: self.params,
        }
    }

    pub fn cast<U: Scalar>(&self) -> ComplexSpectrogram<U> {
        ComplexSpectrogram {
            frames: self.frames,
            bins: self.bins,
            data: self.data.iter().map(|c| Complex::new(U::of(c.re.as_f64()), U::of(c.im.as_f64()))).collect(),
            params: self.params,
        }
    }
}

/// `M x 2 x T x F` network input.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiChannelStack<T> {
    data: Tensor<T>,
    params: StftParams,
}

impl<T: Scalar> MultiChannelStack<T> {
    pub fn from_tensor(data: Tensor<T>, params: StftParams) -> Result<Self> {
        let s = data.shape();
        if s.len() != 4 || s[1] != 2 || s[3] != params.n_freq_bins() {
            return Err(Error::Shape(format!("expected [M, 2, T, {}], got {:?}", params.n_freq_bins(), s)));
        }
        Ok(Self { data, params })
    }

    pub fn channels(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn frames(&self) -> usize {
        self.data.shape()[2]
    }

    pub fn bins(&self) -> usize {
        self.data.shape()[3]
    }

    pub fn params(&self) -> &StftParams {
        &self.params
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.data
    }

    pub fn into_tensor(self) -> Tensor<T> {
        self.data
    }

    pub fn channel(&self, m: usize) -> ComplexSpectrogram<T> {
        let n = 2 * self.frames() * self.bins();
        ComplexSpectrogram::from_planes(&self.data.data()[m * n..(m + 1) * n], self.frames(), self.params)
            .expect("stack holds finite planes")
    }
}

/// `2 x T x F` real/imaginary mask planes.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexRatioMask<T> {
    data: Tensor<T>,
}

impl<T: Scalar> ComplexRatioMask<T> {
    pub fn new(data: Tensor<T>) -> Result<Self> {
        if data.shape().len() != 3 || data.shape()[0] != 2 {
            return Err(Error::Shape(format!("mask must be [2, T, F], got {:?}", data.shape())));
        }
        Ok(Self { data })
    }

    /// The same complex value at every bin.
    pub fn constant(frames: usize, bins: usize, value: Complex<T>) -> Self {
        let mut data = vec![value.re; frames * bins];
        data.extend(core::iter::repeat_n(value.im, frames * bins));
        Self { data: Tensor::from_vec(&[2, frames, bins], data).unwrap() }
    }

    pub fn frames(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn bins(&self) -> usize {
        self.data.shape()[2]
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.data
    }

    pub fn get(&self, t: usize, f: usize) -> Complex<T> {
        let n = self.frames() * self.bins();
        let i = t * self.bins() + f;
        Complex::new(self.data.data()[i], self.data.data()[n + i])
    }
}

fn reflect_pad<T: Scalar>(signal: &[T], pad: usize) -> Vec<T> {
    let n = signal.len();
    let mut out = Vec::with_capacity(n + 2 * pad);
    out.extend((1..=pad).rev().map(|i| signal[i]));
    out.extend_from_slice(signal);
    out.extend((0..pad).map(|i| signal[n - 2 - i]));
    out
}

pub fn stft<T: Scalar>(signal: &[T], params: &StftParams) -> Result<ComplexSpectrogram<T>> {
    params.validate()?;
    let n = params.window_length;
    if signal.len() < n {
        return Err(Error::SignalTooShort { got: signal.len(), need: n });
    }
    if signal.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("waveform"));
    }
    let padded = reflect_pad(signal, n / 2);
    let frames = params.n_frames(signal.len());
    let bins = params.n_freq_bins();
    let window = params.window::<T>();
    let fft = Fft::new(n);
    let mut scratch = Vec::with_capacity(n);
    let mut frame = vec![T::zero(); n];
    let mut data = Vec::with_capacity(frames * bins);
    for t in 0..frames {
        let seg = &padded[t * params.hop..t * params.hop + n];
        for ((f, &s), &w) in frame.iter_mut().zip(seg).zip(&window) {
            *f = s * w;
        }
        data.extend(fft.rfft(&frame, &mut scratch));
    }
    Ok(ComplexSpectrogram { frames, bins, data, params: *params })
}

/// Overlap-add synthesis of `[T, F]` half spectra given as re/im planes.
fn synthesize<T: Scalar>(re: &[T], im: &[T], frames: usize, params: &StftParams, out_length: usize) -> Vec<T> {
    let n = params.window_length;
    let bins = params.n_freq_bins();
    let window = params.window::<T>();
    let wsum = params.window_sum::<T>(frames);
    let fft = Fft::new(n);
    let mut buf = vec![T::zero(); wsum.len()];
    let mut scratch = Vec::with_capacity(n);
    let mut half = vec![Complex::new(T::zero(), T::zero()); bins];
    let mut frame = vec![T::zero(); n];
    for t in 0..frames {
        for (f, h) in half.iter_mut().enumerate() {
            *h = Complex::new(re[t * bins + f], im[t * bins + f]);
        }
        fft.irfft(&half, &mut scratch, &mut frame);
        for ((b, &v), &w) in buf[t * params.hop..].iter_mut().zip(&frame).zip(&window) {
            *b += v * w;
        }
    }
    let eps = T::of(WINDOW_SUM_EPS);
    let pad = n / 2;
    (0..out_length)
        .map(|i| {
            let j = i + pad;
            if j < buf.len() && wsum[j] > eps {
                buf[j] / wsum[j]
            } else {
                T::zero()
            }
        })
        .collect()
}

/// Adjoint of [`synthesize`]: maps a waveform gradient to re/im plane gradients.
fn synthesize_adjoint<T: Scalar>(grad: &[T], frames: usize, params: &StftParams) -> (Vec<T>, Vec<T>) {
    let n = params.window_length;
    let bins = params.n_freq_bins();
    let window = params.window::<T>();
    let wsum = params.window_sum::<T>(frames);
    let fft = Fft::new(n);
    let eps = T::of(WINDOW_SUM_EPS);
    let pad = n / 2;
    let mut buf = vec![T::zero(); wsum.len()];
    for (i, &g) in grad.iter().enumerate() {
        let j = i + pad;
        if j < buf.len() && wsum[j] > eps {
            buf[j] = g / wsum[j];
        }
    }
    let mut re = vec![T::zero(); frames * bins];
    let mut im = vec![T::zero(); frames * bins];
    let mut scratch = Vec::with_capacity(n);
    let mut seg = vec![T::zero(); n];
    let edge = T::one() / T::of(n as f64);
    let interior = edge + edge;
    for t in 0..frames {
        for ((s, &b), &w) in seg.iter_mut().zip(&buf[t * params.hop..]).zip(&window) {
            *s = b * w;
        }
        let spec = fft.rfft(&seg, &mut scratch);
        for (f, c) in spec.iter().enumerate() {
            let (scale, keep_im) = if f == 0 || f == bins - 1 { (edge, false) } else { (interior, true) };
            re[t * bins + f] = c.re * scale;
            im[t * bins + f] = if keep_im { c.im * scale } else { T::zero() };
        }
    }
    (re, im)
}

pub fn istft<T: Scalar>(spec: &ComplexSpectrogram<T>, params: &StftParams, out_length: usize) -> Result<Vec<T>> {
    if spec.params != *params {
        return Err(Error::ParamsMismatch(format!("spectrogram has {:?}, synthesis asked for {:?}", spec.params, params)));
    }
    params.validate()?;
    let re: Vec<T> = spec.data.iter().map(|c| c.re).collect();
    let im: Vec<T> = spec.data.iter().map(|c| c.im).collect();
    Ok(synthesize(&re, &im, spec.frames, params, out_length))
}

/// Samples covered by `frames` frames after trimming the centre padding.
pub fn frames_to_samples(frames: usize, params: &StftParams) -> usize {
    (frames.max(1) - 1) * params.hop
}

impl<T: Scalar> Tape<T> {
    /// Differentiable inverse STFT of `[B, 2, T, F]` planes into `[B, out_length]`.
    pub fn istft(&self, planes: Var, params: StftParams, out_length: usize) -> Var {
        let v = self.value(planes);
        let s = v.shape().to_vec();
        assert!(s.len() == 4 && s[1] == 2 && s[3] == params.n_freq_bins(), "istft expects [B, 2, T, F]");
        let (b, frames, bins) = (s[0], s[2], s[3]);
        let plane = frames * bins;
        let mut out = Vec::with_capacity(b * out_length);
        for x in v.data().chunks(2 * plane) {
            out.extend(synthesize(&x[..plane], &x[plane..], frames, &params, out_length));
        }
        let out = Tensor::from_vec(&[b, out_length], out).unwrap();
        self.push_op(out, &[planes], move |ctx| {
            let mut g = Vec::with_capacity(b * 2 * plane);
            for gy in ctx.grad.data().chunks(out_length) {
                let (re, im) = synthesize_adjoint(gy, frames, &params);
                g.extend(re);
                g.extend(im);
            }
            vec![Some(Tensor::from_vec(&s, g).unwrap())]
        })
    }
}

pub fn stack_reim<T: Scalar>(specs: &[ComplexSpectrogram<T>]) -> Result<MultiChannelStack<T>> {
    let first = specs.first().ok_or_else(|| Error::Shape("no channels to stack".into()))?;
    let mut data = Vec::with_capacity(specs.len() * 2 * first.data.len());
    for (m, s) in specs.iter().enumerate() {
        if s.frames != first.frames || s.bins != first.bins || s.params != first.params {
            return Err(Error::Shape(format!(
                "channel {m} is {}x{}, channel 0 is {}x{}",
                s.frames, s.bins, first.frames, first.bins
            )));
        }
        data.extend(s.data.iter().map(|c| c.re));
        data.extend(s.data.iter().map(|c| c.im));
    }
    let tensor = Tensor::from_vec(&[specs.len(), 2, first.frames, first.bins], data)?;
    Ok(MultiChannelStack { data: tensor, params: first.params })
}

pub fn unstack<T: Scalar>(stack: &MultiChannelStack<T>) -> Vec<ComplexSpectrogram<T>> {
    (0..stack.channels()).map(|m| stack.channel(m)).collect()
}

pub fn apply_crm<T: Scalar>(mask: &ComplexRatioMask<T>, reference: &ComplexSpectrogram<T>) -> Result<ComplexSpectrogram<T>> {
    if mask.frames() != reference.frames || mask.bins() != reference.bins {
        return Err(Error::Shape(format!(
            "mask is {}x{}, reference is {}x{}",
            mask.frames(),
            mask.bins(),
            reference.frames,
            reference.bins
        )));
    }
    let n = reference.data.len();
    let planes = mask.data.data();
    let data = reference
        .data
        .iter()
        .enumerate()
        .map(|(i, &r)| Complex::new(planes[i], planes[n + i]) * r)
        .collect();
    Ok(ComplexSpectrogram { data, ..reference.clone() })
}
