use micgraph_core::metrics::*;
use micgraph_core::sim::{synthetic_noise, synthetic_speech};
use micgraph_core::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn utterance(seconds: f64, seed: u64) -> Vec<f64> {
    synthetic_speech((seconds * 16000.0) as usize, 16000.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn with_noise(x: &[f64], snr_db: f64, seed: u64) -> Vec<f64> {
    let n = synthetic_noise(x.len(), &mut ChaCha8Rng::seed_from_u64(seed));
    let ps = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
    let g = (ps / 10f64.powf(snr_db / 10.0)).sqrt();
    x.iter().zip(&n).map(|(a, b)| a + g * b).collect()
}

#[test]
fn sdr_of_orthogonal_noise() {
    for seed in 0..20 {
        let r = random(4000, seed);
        let mut n = random(4000, seed + 100);
        let rr: f64 = r.iter().map(|v| v * v).sum();
        let c = n.iter().zip(&r).map(|(a, b)| a * b).sum::<f64>() / rr;
        n.iter_mut().zip(&r).for_each(|(a, b)| *a -= c * b);
        let nn: f64 = n.iter().map(|v| v * v).sum();
        let s = (rr / 100.0 / nn).sqrt();
        let est: Vec<f64> = r.iter().zip(&n).map(|(a, b)| a + s * b).collect();
        assert!((sdr(&est, &r).unwrap() - 20.0).abs() < 0.01);
    }
}

#[test]
fn sdr_gain_allowance() {
    let r = random(1000, 1);
    let est: Vec<f64> = r.iter().map(|v| 3.0 * v).collect();
    assert_eq!(sdr(&est, &r).unwrap(), SDR_CAP_DB);
}

proptest! {
    #[test]
    fn sdr_is_scale_invariant(seed in any::<u64>(), a in 0.01f64..100.0) {
        let r = random(512, seed);
        let est: Vec<f64> = r.iter().zip(random(512, seed ^ 1)).map(|(x, n)| x + 0.3 * n).collect();
        let scaled: Vec<f64> = est.iter().map(|v| a * v).collect();
        prop_assert!((sdr(&scaled, &r).unwrap() - sdr(&est, &r).unwrap()).abs() < 0.01);
    }
}

#[test]
fn stoi_of_identical_speech() {
    for seed in 0..5 {
        let x = utterance(2.0, seed);
        assert!(stoi(&x, &x, 16000).unwrap() >= 0.99);
    }
}

#[test]
fn stoi_degrades_with_noise() {
    let x = utterance(3.0, 7);
    let scores: Vec<f64> = [10.0, 0.0, -10.0].iter().map(|&snr| stoi(&with_noise(&x, snr, 8), &x, 16000).unwrap()).collect();
    assert!(scores[0] > scores[1] && scores[1] > scores[2], "{scores:?}");
}

#[test]
fn stoi_of_white_noise() {
    // pinned against an independent reference implementation on the same samples
    let x = utterance(3.0, 0);
    let mut rng = ChaCha8Rng::seed_from_u64(1000);
    let noise: Vec<f64> = (0..x.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let d = stoi(&noise, &x, 16000).unwrap();
    assert!((d - 0.2408).abs() < 0.005, "{d}");
    let mean = (0..10u64)
        .map(|seed| {
            let x = utterance(3.0, seed);
            stoi(&random(x.len(), seed + 1000), &x, 16000).unwrap()
        })
        .sum::<f64>()
        / 10.0;
    assert!(mean < 0.3, "{mean}");
}

#[test]
fn stoi_preconditions() {
    let x = utterance(0.3, 11);
    assert!(matches!(stoi(&x, &x, 16000), Err(Error::StoiTooShort { .. })));
    let y = utterance(2.0, 12);
    assert_eq!(stoi(&y, &y, 8000), Err(Error::SampleRate(8000)));
    assert!(stoi(&y[..100], &y, 16000).is_err());
}

fn scores(stoi: f64, pesq: Option<f64>, sdr: f64) -> Scores {
    Scores { stoi, pesq, sdr }
}

fn example(id: &str, geometry: &str, mics: usize, snr_db: f64, noisy: Scores, enhanced: Scores) -> ExampleReport {
    ExampleReport { id: id.into(), condition: Condition { geometry: geometry.into(), mics, snr_db }, noisy, enhanced }
}

#[test]
fn grouping_matches_hand_built_table() {
    let report = MetricReport::new(vec![
        example("a", "linear", 4, 0.0, scores(0.5, None, 1.0), scores(0.7, Some(2.0), 5.0)),
        example("b", "circular", 2, -5.0, scores(0.4, None, -2.0), scores(0.6, None, 3.0)),
        example("c", "linear", 4, 0.0, scores(0.7, None, 3.0), scores(0.9, Some(3.0), 9.0)),
        example("d", "linear", 4, 5.0, scores(0.8, Some(1.5), 6.0), scores(0.95, Some(2.5), 12.0)),
    ]);
    let table = report.summaries();
    let want = vec![
        ConditionSummary {
            condition: Condition { geometry: "circular".into(), mics: 2, snr_db: -5.0 },
            count: 1,
            noisy: scores(0.4, None, -2.0),
            enhanced: scores(0.6, None, 3.0),
        },
        ConditionSummary {
            condition: Condition { geometry: "linear".into(), mics: 4, snr_db: 0.0 },
            count: 2,
            noisy: scores(0.6, None, 2.0),
            enhanced: scores(0.8, Some(2.5), 7.0),
        },
        ConditionSummary {
            condition: Condition { geometry: "linear".into(), mics: 4, snr_db: 5.0 },
            count: 1,
            noisy: scores(0.8, Some(1.5), 6.0),
            enhanced: scores(0.95, Some(2.5), 12.0),
        },
    ];
    assert_eq!(table.len(), 3);
    for (got, want) in table.iter().zip(&want) {
        assert_eq!(got.condition, want.condition);
        assert_eq!(got.count, want.count);
        for (g, w) in [(got.noisy, want.noisy), (got.enhanced, want.enhanced)] {
            assert!((g.stoi - w.stoi).abs() < 1e-12 && (g.sdr - w.sdr).abs() < 1e-12);
            assert_eq!(g.pesq, w.pesq);
        }
    }
    assert!(MetricReport::default().summaries().is_empty());
    assert!(MetricReport::default().overall().is_none());
}

proptest! {
    #[test]
    fn aggregates_are_plain_means(values in prop::collection::vec((0.0f64..1.0, -10.0f64..30.0), 1..20)) {
        let report = MetricReport::new(values.iter().enumerate().map(|(i, &(s, d))| {
            example(&i.to_string(), "linear", 2, 0.0, scores(s, None, d), scores(s, None, d))
        }).collect());
        let t = report.summaries();
        prop_assert_eq!(t.len(), 1);
        let n = values.len() as f64;
        prop_assert_eq!(t[0].noisy.stoi, values.iter().map(|v| v.0).sum::<f64>() / n);
        prop_assert_eq!(t[0].noisy.sdr, values.iter().map(|v| v.1).sum::<f64>() / n);
    }
}
