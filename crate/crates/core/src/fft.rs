//! In-place iterative radix-2 FFT.
//!
//! Only power-of-two lengths are supported; every transform length in this
//! crate (analysis windows, STOI frames, fast convolution) is chosen as one.

use alloc::vec::Vec;

use num_complex::Complex;

use crate::scalar::Scalar;

/// Precomputed twiddles and bit-reversal table for one transform length.
#[derive(Clone, Debug)]
pub struct Fft<T> {
    n: usize,
    twiddles: Vec<Complex<T>>,
    bitrev: Vec<usize>,
}

impl<T: Scalar> Fft<T> {
    pub fn new(n: usize) -> Self {
        assert!(n.is_power_of_two(), "fft length {n} is not a power of two");
        let twiddles = (0..n / 2)
            .map(|k| {
                let angle = -2.0 * core::f64::consts::PI * k as f64 / n as f64;
                Complex::new(T::of(libm::cos(angle)), T::of(libm::sin(angle)))
            })
            .collect();
        let bits = n.trailing_zeros();
        let bitrev = (0..n)
            .map(|i| if bits == 0 { 0 } else { i.reverse_bits() >> (usize::BITS - bits) })
            .collect();
        Self { n, twiddles, bitrev }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Unnormalized forward transform, `X[k] = sum_t x[t] e^{-2 pi i k t / n}`.
    pub fn forward(&self, buf: &mut [Complex<T>]) {
        self.transform(buf, false);
    }

    /// Unnormalized inverse transform (no `1/n` factor).
    pub fn inverse(&self, buf: &mut [Complex<T>]) {
        self.transform(buf, true);
    }

    fn transform(&self, buf: &mut [Complex<T>], inverse: bool) {
        let n = self.n;
        assert_eq!(buf.len(), n);
        for i in 0..n {
            let j = self.bitrev[i];
            if i < j {
                buf.swap(i, j);
            }
        }
        let mut len = 2;
        while len <= n {
            let half = len / 2;
            let step = n / len;
            for start in (0..n).step_by(len) {
                for k in 0..half {
                    let mut w = self.twiddles[k * step];
                    if inverse {
                        w = w.conj();
                    }
                    let a = buf[start + k];
                    let b = buf[start + k + half] * w;
                    buf[start + k] = a + b;
                    buf[start + k + half] = a - b;
                }
            }
            len <<= 1;
        }
    }

    /// Half spectrum (`n/2 + 1` bins) of a real frame.
    pub fn rfft(&self, frame: &[T], scratch: &mut Vec<Complex<T>>) -> Vec<Complex<T>> {
        scratch.clear();
        scratch.extend(frame.iter().map(|&v| Complex::new(v, T::zero())));
        self.forward(scratch);
        scratch[..self.n / 2 + 1].to_vec()
    }

    /// Real frame from a half spectrum, with the `1/n` normalization applied.
    ///
    /// Imaginary parts of the DC and Nyquist bins are ignored, matching the
    /// Hermitian extension used by every real inverse FFT.
    pub fn irfft(&self, half: &[Complex<T>], scratch: &mut Vec<Complex<T>>, out: &mut [T]) {
        let n = self.n;
        assert_eq!(half.len(), n / 2 + 1);
        scratch.clear();
        scratch.resize(n, Complex::new(T::zero(), T::zero()));
        scratch[0] = Complex::new(half[0].re, T::zero());
        if n > 1 {
            scratch[n / 2] = Complex::new(half[n / 2].re, T::zero());
        }
        for k in 1..n / 2 {
            scratch[k] = half[k];
            scratch[n - k] = half[k].conj();
        }
        self.inverse(scratch);
        let scale = T::one() / T::of(n as f64);
        for (o, v) in out.iter_mut().zip(scratch.iter()) {
            *o = v.re * scale;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn naive_dft(x: &[Complex<f64>]) -> Vec<Complex<f64>> {
        let n = x.len();
        (0..n)
            .map(|k| {
                x.iter().enumerate().fold(Complex::new(0.0, 0.0), |acc, (t, &v)| {
                    let a = -2.0 * core::f64::consts::PI * (k * t) as f64 / n as f64;
                    acc + v * Complex::new(a.cos(), a.sin())
                })
            })
            .collect()
    }

    #[test]
    fn matches_naive_dft() {
        for n in [1usize, 2, 8, 64] {
            let x: Vec<Complex<f64>> =
                (0..n).map(|i| Complex::new((i as f64 * 0.37).sin(), (i as f64 * 1.3).cos())).collect();
            let mut y = x.clone();
            Fft::new(n).forward(&mut y);
            for (a, b) in y.iter().zip(naive_dft(&x)) {
                assert!((a - b).norm() < 1e-9, "n={n}");
            }
        }
    }

    #[test]
    fn real_round_trip() {
        let n = 32;
        let fft = Fft::<f64>::new(n);
        let x: Vec<f64> = (0..n).map(|i| (i as f64 * 0.71).sin() + 0.1 * i as f64).collect();
        let mut scratch = Vec::new();
        let half = fft.rfft(&x, &mut scratch);
        let mut back = vec![0.0; n];
        fft.irfft(&half, &mut scratch, &mut back);
        for (a, b) in x.iter().zip(&back) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
