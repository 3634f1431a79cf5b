use micgraph_core::gradcheck::{check_gradients, GradCheckOptions};
use micgraph_core::loss::{loss_combined, loss_mag, loss_spec, record_loss, LossVariant};
use micgraph_core::signal::{istft, ComplexSpectrogram, StftParams};
use num_complex::Complex;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn params() -> StftParams {
    StftParams::new(16, 8).unwrap()
}

fn random_spec(frames: usize, rng: &mut impl Rng) -> ComplexSpectrogram<f64> {
    let data = (0..frames * 9).map(|_| Complex::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0))).collect();
    ComplexSpectrogram::new(frames, 9, data, params()).unwrap()
}

proptest! {
    #[test]
    fn nonnegative_zero_at_identity_and_additive(seed in any::<u64>(), frames in 2usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (p, t) = (random_spec(frames, &mut rng), random_spec(frames, &mut rng));
        let len = (frames - 1) * 8;
        let (pw, tw) = (istft(&p, &params(), len).unwrap(), istft(&t, &params(), len).unwrap());
        let mag = loss_mag(&p, &t).unwrap();
        let spec = loss_spec(&p, &t).unwrap();
        prop_assert!(mag >= 0.0 && spec >= 0.0);
        prop_assert_eq!(loss_combined(&p, &t, None, None, LossVariant::MagPlusSpec).unwrap(), mag + spec);
        let raw = pw.iter().zip(&tw).map(|(a, b)| (a - b).abs()).sum::<f64>() / len as f64;
        prop_assert_eq!(loss_combined(&p, &t, Some(&pw), Some(&tw), LossVariant::MagPlusRaw).unwrap(), mag + raw);
        for v in LossVariant::ALL {
            let (a, b) = if v.needs_waveform() { (Some(&pw[..]), Some(&pw[..])) } else { (None, None) };
            prop_assert_eq!(loss_combined(&p, &p, a, b, v).unwrap(), 0.0);
        }
    }
}

#[test]
fn variant_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let frames = 6;
    let pred = random_spec(frames, &mut rng).to_planes();
    let target = random_spec(frames, &mut rng).to_planes();
    let len = (frames - 1) * 8;
    for variant in LossVariant::ALL {
        let target = target.clone();
        let report = check_gradients(
            &[pred.clone().reshaped(&[1, 2, frames * 9]).unwrap()],
            |t, v| {
                let tg = t.constant(target.clone().reshaped(&[1, 2, frames * 9]).unwrap());
                let waves = variant.needs_waveform().then(|| {
                    let p4 = t.reshape(v[0], &[1, 2, frames, 9]);
                    let pw = t.istft(p4, params(), len);
                    let tw = t.istft(t.constant(target.clone().reshaped(&[1, 2, frames, 9]).unwrap()), params(), len);
                    (pw, tw)
                });
                record_loss(t, variant, v[0], tg, waves).unwrap()
            },
            &GradCheckOptions { max_coords: 108, ..Default::default() },
        );
        assert!(report.pass_fraction() >= 0.99, "{variant}: worst {:?}", report.worst());
    }
}
