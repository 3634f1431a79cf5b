use micgraph_core::enhance::{enhance_waveform, EnhanceOptions};
use micgraph_core::model::{Model, ModelConfig};
use micgraph_core::signal::StftParams;
use micgraph_core::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_model() -> Model<f64> {
    let cfg = ModelConfig { encoder_channels: vec![4, 6, 8], scorer_hidden: 5, ..Default::default() };
    Model::new(cfg, 3).unwrap()
}

fn params() -> StftParams {
    StftParams::new(32, 16).unwrap()
}

fn channels(m: usize, len: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..m).map(|_| (0..len).map(|_| rng.random_range(-0.5..0.5)).collect()).collect()
}

#[test]
fn output_length_matches_input() {
    let model = small_model();
    for len in [1, 31, 100, 333, 2000] {
        let out = enhance_waveform(&model, &channels(3, len, len as u64), params(), &EnhanceOptions::default()).unwrap();
        assert_eq!(out.samples.len(), len);
        assert!(out.samples.iter().all(|v| v.is_finite()));
        assert_eq!(out.adjacency.len(), 1);
    }
}

#[test]
fn silence_in_silence_out() {
    let out = enhance_waveform(&small_model(), &vec![vec![0.0; 1000]; 2], params(), &EnhanceOptions::default()).unwrap();
    assert!(out.samples.iter().all(|v| v.is_finite() && v.abs() < 1e-12));
}

#[test]
fn identity_mask_passes_the_reference_through() {
    let x = channels(4, 1600, 9);
    let opts = EnhanceOptions { identity_mask: true, ..Default::default() };
    let out = enhance_waveform(&small_model(), &x, params(), &opts).unwrap();
    let peak = x[0].iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let err = x[0].iter().zip(&out.samples).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    assert!(err / peak < 1e-9, "{err}");
}

#[test]
fn chunked_processing_is_seamless_when_chunks_cover_everything() {
    let model = small_model();
    let x = channels(2, 1600, 4);
    let whole = enhance_waveform(&model, &x, params(), &EnhanceOptions::default()).unwrap();
    let single = EnhanceOptions { chunk_frames: 200, overlap: 8, identity_mask: false };
    assert_eq!(enhance_waveform(&model, &x, params(), &single).unwrap().samples, whole.samples);
    let chunked = EnhanceOptions { chunk_frames: 40, overlap: 10, identity_mask: false };
    let out = enhance_waveform(&model, &x, params(), &chunked).unwrap();
    assert_eq!(out.samples.len(), 1600);
    assert!(out.adjacency.len() > 1);
    assert!(out.samples.iter().all(|v| v.is_finite()));
}

#[test]
fn invalid_requests() {
    let model = small_model();
    let bad = EnhanceOptions { chunk_frames: 10, overlap: 2, identity_mask: false };
    assert!(matches!(enhance_waveform(&model, &channels(2, 1600, 1), params(), &bad), Err(Error::Config(_))));
    let mut ragged = channels(2, 100, 2);
    ragged[1].pop();
    assert!(enhance_waveform(&model, &ragged, params(), &EnhanceOptions::default()).is_err());
    assert!(enhance_waveform(&model, &[], params(), &EnhanceOptions::default()).is_err());
}
