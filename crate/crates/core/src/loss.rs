//! Training objectives over magnitude, complex spectrogram and waveform.
//!
//! All terms are mean-reduced L1 distances, so a summed norm is the value
//! times the number of compared elements.

use alloc::format;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::signal::ComplexSpectrogram;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LossVariant {
    Mag,
    Spec,
    MagPlusSpec,
    #[default]
    MagPlusRaw,
}

impl LossVariant {
    pub const ALL: [LossVariant; 4] = [Self::Mag, Self::Spec, Self::MagPlusSpec, Self::MagPlusRaw];

    pub fn name(self) -> &'static str {
        match self {
            Self::Mag => "mag",
            Self::Spec => "spec",
            Self::MagPlusSpec => "mag_spec",
            Self::MagPlusRaw => "mag_raw",
        }
    }

    /// Row label used in result tables.
    pub fn label(self) -> &'static str {
        match self {
            Self::Mag => "L_Mag",
            Self::Spec => "L_Spec",
            Self::MagPlusSpec => "L_Mag+Spec",
            Self::MagPlusRaw => "L_Mag+Raw",
        }
    }

    pub fn needs_waveform(self) -> bool {
        self == Self::MagPlusRaw
    }
}

impl fmt::Display for LossVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown loss `{s}` (expected mag, spec, mag_spec or mag_raw)")))
    }
}

/// `mean | |pred| - |target| |` over `[B, 2, P]` planes.
pub fn record_loss_mag<T: Scalar>(tape: &Tape<T>, pred: Var, target: Var) -> Var {
    let (a, b) = (tape.magnitude(pred), tape.magnitude(target));
    tape.l1_mean(a, b)
}

/// `mean |pred - target|` over the stacked real and imaginary entries.
pub fn record_loss_spec<T: Scalar>(tape: &Tape<T>, pred: Var, target: Var) -> Var {
    tape.l1_mean(pred, target)
}

/// Combined objective. `waves` holds `(predicted, target)` waveforms and is
/// required for [`LossVariant::MagPlusRaw`].
pub fn record_loss<T: Scalar>(
    tape: &Tape<T>,
    variant: LossVariant,
    pred: Var,
    target: Var,
    waves: Option<(Var, Var)>,
) -> Result<Var> {
    Ok(match variant {
        LossVariant::Mag => record_loss_mag(tape, pred, target),
        LossVariant::Spec => record_loss_spec(tape, pred, target),
        LossVariant::MagPlusSpec => {
            let m = record_loss_mag(tape, pred, target);
            let s = record_loss_spec(tape, pred, target);
            tape.add(m, s)
        }
        LossVariant::MagPlusRaw => {
            let (pw, tw) = waves.ok_or(Error::MissingWaveform("mag_raw"))?;
            let m = record_loss_mag(tape, pred, target);
            let r = tape.l1_mean(pw, tw);
            tape.add(m, r)
        }
    })
}

fn planes<T: Scalar>(tape: &Tape<T>, s: &ComplexSpectrogram<T>) -> Var {
    let p = s.to_planes();
    tape.constant(p.reshaped(&[1, 2, s.frames() * s.bins()]).expect("planes"))
}

fn check_pair<T: Scalar>(pred: &ComplexSpectrogram<T>, target: &ComplexSpectrogram<T>) -> Result<()> {
    if (pred.frames(), pred.bins()) != (target.frames(), target.bins()) {
        return Err(Error::Shape(format!(
            "prediction is {}x{}, target is {}x{}",
            pred.frames(),
            pred.bins(),
            target.frames(),
            target.bins()
        )));
    }
    Ok(())
}

pub fn loss_mag<T: Scalar>(pred: &ComplexSpectrogram<T>, target: &ComplexSpectrogram<T>) -> Result<T> {
    check_pair(pred, target)?;
    let tape = Tape::new();
    let l = record_loss_mag(&tape, planes(&tape, pred), planes(&tape, target));
    Ok(tape.value(l).item())
}

pub fn loss_spec<T: Scalar>(pred: &ComplexSpectrogram<T>, target: &ComplexSpectrogram<T>) -> Result<T> {
    check_pair(pred, target)?;
    let tape = Tape::new();
    let l = record_loss_spec(&tape, planes(&tape, pred), planes(&tape, target));
    Ok(tape.value(l).item())
}

pub fn loss_combined<T: Scalar>(
    pred: &ComplexSpectrogram<T>,
    target: &ComplexSpectrogram<T>,
    pred_wave: Option<&[T]>,
    target_wave: Option<&[T]>,
    variant: LossVariant,
) -> Result<T> {
    check_pair(pred, target)?;
    let tape = Tape::new();
    let waves = match (pred_wave, target_wave) {
        (Some(p), Some(t)) => {
            if p.len() != t.len() || p.is_empty() {
                return Err(Error::Shape(format!("waveforms of {} and {} samples", p.len(), t.len())));
            }
            let wrap = |w: &[T]| tape.constant(Tensor::from_vec(&[1, w.len()], w.to_vec()).expect("wave"));
            Some((wrap(p), wrap(t)))
        }
        _ => None,
    };
    let l = record_loss(&tape, variant, planes(&tape, pred), planes(&tape, target), waves)?;
    Ok(tape.value(l).item())
}
