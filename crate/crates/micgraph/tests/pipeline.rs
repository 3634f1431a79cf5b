use micgraph::checkpoint::Checkpoint;
use micgraph::config::{ConfigError, Settings};
use micgraph::dataset::{generate_split, load_training_examples};
use micgraph::evaluate::{evaluate_manifest, render_condition_table, EvalOptions};
use micgraph::infer::enhance_file;
use micgraph::manifest::Manifest;
use micgraph::wav::{read_wav, write_wav, Audio};
use micgraph_core::enhance::EnhanceOptions;
use micgraph_core::model::{Model, ModelConfig};
use micgraph_core::signal::StftParams;
use micgraph_core::sim::Split;
use micgraph_core::train::{TrainConfig, Trainer};
use micgraph_core::Error;
use tempfile::TempDir;

fn tiny_settings() -> Settings {
    let mut s = Settings::default();
    let o: Vec<String> = [
        "encoder_channels=4,6,8",
        "scorer_hidden=8",
        "window_length=64",
        "hop=32",
        "chunk_len=16",
        "batch=2",
        "lr=0.001",
        "train_examples=2",
        "utterance_seconds=1.5",
    ]
    .iter()
    .map(|x| x.to_string())
    .collect();
    s.apply_overrides(&o).unwrap();
    s.validate().unwrap();
    s
}

fn tiny_checkpoint(s: &Settings, mics: usize) -> Checkpoint {
    let model = Model::<f32>::new(s.model.clone(), 1).unwrap();
    Checkpoint::from_trainer(&Trainer::new(model, s.train.clone()).unwrap(), s.stft, mics, None)
}

#[test]
fn overrides_beat_file_beat_defaults() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("run.cfg");
    std::fs::write(&path, "lr = 0.002  # file\nbatch = 4\nloss = spec\n").unwrap();
    let s = Settings::load(Some(&path), &["batch=6".into()]).unwrap();
    assert_eq!(s.train.lr, 0.002);
    assert_eq!(s.train.batch, 6);
    assert_eq!(s.train.beta1, 0.9);

    // rendered settings load back to the same values
    std::fs::write(&path, s.render()).unwrap();
    assert_eq!(Settings::load(Some(&path), &[]).unwrap(), s);

    std::fs::write(&path, "lr 0.1\n").unwrap();
    assert!(matches!(Settings::load(Some(&path), &[]), Err(ConfigError::Syntax { line: 1, .. })));
    assert!(matches!(Settings::load(None, &["ref_channel=4".into()]), Err(ConfigError::Invalid(_))));
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let dir = TempDir::new().unwrap();
    let s = tiny_settings();
    let data = generate_split(&s.sim, Split::Train, dir.path()).unwrap();
    let examples = load_training_examples(&data, &s.stft, Some(4)).unwrap();
    let model = Model::<f32>::new(s.model.clone(), 2).unwrap();
    let mut trainer = Trainer::new(model, s.train.clone()).unwrap();
    for _ in 0..2 {
        let batch = trainer.next_batch(&examples).unwrap();
        trainer.train_step(&batch).unwrap();
    }
    let ckpt = Checkpoint::from_trainer(&trainer, s.stft, 4, Some(0.25));
    let path = dir.path().join("c.safetensors");
    ckpt.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back.model, ckpt.model);
    assert_eq!(back.optimizer, ckpt.optimizer);
    assert_eq!(back.train, ckpt.train);
    assert_eq!((back.stft, back.mics, back.best_dev, back.step()), (s.stft, 4, Some(0.25), 2));

    let mut resumed = back.into_trainer().unwrap();
    let batch = trainer.next_batch(&examples).unwrap();
    assert_eq!(resumed.next_batch(&examples).unwrap().size(), batch.size());
    let a = trainer.train_step(&batch).unwrap();
    let b = resumed.train_step(&batch).unwrap();
    assert_eq!(a, b);
    assert_eq!(trainer.model, resumed.model);

    std::fs::write(&path, b"not a checkpoint").unwrap();
    assert!(Checkpoint::load(&path).is_err());
}

#[test]
fn identity_mask_leaves_metrics_unchanged() {
    let dir = TempDir::new().unwrap();
    let s = tiny_settings();
    let data = generate_split(&s.sim, Split::Train, dir.path()).unwrap();
    let opts = EvalOptions { enhance: EnhanceOptions { identity_mask: true, ..Default::default() }, pesq_cmd: None };
    let report = evaluate_manifest(&tiny_checkpoint(&s, 4), &data, &opts).unwrap();
    assert_eq!(report.examples.len(), 2);
    for e in &report.examples {
        assert!((e.enhanced.stoi - e.noisy.stoi).abs() < 1e-4);
        assert!((e.enhanced.sdr - e.noisy.sdr).abs() < 1e-3);
        assert_eq!(e.enhanced.pesq, None);
    }
}

#[test]
fn empty_manifest_gives_empty_report() {
    let s = tiny_settings();
    let m = Manifest::default();
    let report = evaluate_manifest(&tiny_checkpoint(&s, 4), &m, &EvalOptions::default()).unwrap();
    assert!(report.examples.is_empty());
    assert!(report.overall().is_none());
    assert_eq!(render_condition_table(&report.summaries()).lines().count(), 2);
}

#[test]
fn microphone_mismatch_is_rejected() {
    let dir = TempDir::new().unwrap();
    let s = tiny_settings();
    let data = generate_split(&s.sim, Split::Train, dir.path()).unwrap();
    let err = evaluate_manifest(&tiny_checkpoint(&s, 6), &data, &EvalOptions::default()).unwrap_err();
    assert_eq!(err.downcast_ref::<Error>(), Some(&Error::ChannelMismatch { expected: 6, got: 4 }));
}

#[test]
fn enhancing_silence_stays_silent() {
    let dir = TempDir::new().unwrap();
    let s = tiny_settings();
    let ckpt = tiny_checkpoint(&s, 3);
    let input = dir.path().join("in.wav");
    let output = dir.path().join("out.wav");
    write_wav(&input, &Audio { sample_rate: 16000, channels: vec![vec![0.0; 5000]; 3] }).unwrap();
    enhance_file(&ckpt, &input, &output, &EnhanceOptions::default(), None).unwrap();
    let out = read_wav(&output).unwrap();
    assert_eq!(out.len(), 5000);
    assert!(out.channels[0].iter().all(|v| v.is_finite() && v.abs() < 1e-6));

    // chunked inference keeps the length too
    write_wav(&input, &Audio { sample_rate: 16000, channels: vec![(0..5000).map(|i| (i as f64 * 0.01).sin() * 0.3).collect(); 3] }).unwrap();
    let opts = EnhanceOptions { chunk_frames: 32, overlap: 8, identity_mask: false };
    enhance_file(&ckpt, &input, &output, &opts, None).unwrap();
    assert_eq!(read_wav(&output).unwrap().len(), 5000);
}

#[test]
fn settings_defaults_match_core_defaults() {
    let s = Settings::default();
    assert_eq!(s.stft, StftParams::default());
    assert_eq!(s.model, ModelConfig::default());
    assert_eq!(s.train, TrainConfig::default());
}
