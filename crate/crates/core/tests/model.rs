// oracles index several arrays per loop variable on purpose
#![allow(clippy::needless_range_loop)]

use std::collections::BTreeSet;

use micgraph_core::autograd::{Tape, Var};
use micgraph_core::gradcheck::{check_gradients, GradCheckOptions};
use micgraph_core::model::{fuse, Bound, param_group, pool_embeddings, EncoderOutput, Mode, Model, ModelConfig};
use micgraph_core::signal::{MultiChannelStack, StftParams};
use micgraph_core::{Error, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn tiny() -> ModelConfig {
    ModelConfig { encoder_channels: vec![4, 6], scorer_hidden: 5, ..Default::default() }
}

fn selu(x: f64) -> f64 {
    const L: f64 = 1.0507009873554805;
    const A: f64 = 1.6732632423543772;
    if x > 0.0 {
        L * x
    } else {
        L * A * (x.exp() - 1.0)
    }
}

#[test]
fn default_parameter_count() {
    let cfg = ModelConfig::default();
    // encoder: conv weights (no bias, batch norm follows) + gamma/beta
    let enc = [64, 128, 128, 256, 256, 256];
    let mut expected = 0;
    let mut ci = 2;
    for &co in &enc {
        expected += co * ci * 9 + 2 * co;
        ci = co;
    }
    assert_eq!(expected, 1_699_072);
    // decoder: (in, out) per level; the last level has a bias and no norm
    let dec = [(256, 256), (512, 256), (512, 128), (256, 128), (256, 64), (128, 2)];
    for (i, &(cin, cout)) in dec.iter().enumerate() {
        expected += cin * cout * 9 + if i == 5 { cout } else { 2 * cout };
    }
    // scorer 512 -> 128 -> 1, two 256x256 graph layers, 2 -> 1 fusion
    expected += 512 * 128 + 128 + 128 + 1 + 2 * 256 * 256 + 3;
    assert_eq!(expected, 4_701_574);
    assert_eq!(cfg.param_count(), expected);
    let model = Model::<f32>::new(cfg, 0).unwrap();
    assert_eq!(model.param_count(), 4_701_574);
}

#[test]
fn decoder_mirrors_encoder() {
    let cfg = ModelConfig::default();
    assert_eq!(cfg.decoder_channels(), vec![256, 256, 256, 128, 128, 64]);
    let specs = cfg.param_specs();
    for (l, &c) in cfg.decoder_channels().iter().enumerate() {
        let w = specs.iter().find(|s| s.name == format!("decoder.{l}.deconv.weight")).unwrap();
        let skip = if l == 0 { 1 } else { 2 };
        assert_eq!(w.shape[0], skip * c);
    }
}

#[test]
fn gcn_toggle_changes_only_graph_groups() {
    let on = Model::<f32>::new(ModelConfig::default(), 1).unwrap();
    let off = Model::<f32>::new(ModelConfig { gcn_enabled: false, ..Default::default() }, 1).unwrap();
    let a: BTreeSet<_> = on.params.keys().cloned().collect();
    let b: BTreeSet<_> = off.params.keys().cloned().collect();
    assert!(b.is_subset(&a));
    let groups: BTreeSet<_> = a.difference(&b).map(|n| param_group(n).to_string()).collect();
    assert_eq!(groups, BTreeSet::from(["gcn".to_string(), "scorer".to_string()]));
}

#[test]
fn minimum_input_size() {
    let cfg = ModelConfig::default();
    assert_eq!(cfg.min_input_len(), 127);
    match cfg.shape_trace(64, 513) {
        Err(Error::InputTooSmall { min_frames: 127, .. }) => {}
        other => panic!("expected a minimum-size error, got {other:?}"),
    }
    let trace = cfg.shape_trace(128, 513).unwrap();
    let want = [(128, 513), (63, 256), (31, 127), (15, 63), (7, 31), (3, 15), (1, 7)];
    assert_eq!(trace, want);
    // (n - 3) / 2 + 1 per level
    let mut n = (128usize, 513usize);
    for &(t, f) in &trace[1..] {
        n = ((n.0 - 3) / 2 + 1, (n.1 - 3) / 2 + 1);
        assert_eq!(n, (t, f));
    }
}

#[test]
fn default_model_smoke() {
    let model = Model::<f32>::new(ModelConfig::default(), 3).unwrap();
    let params = StftParams::default();
    let x = random(&[2, 2, 127, 513], 4).cast::<f32>();
    let stack = MultiChannelStack::from_tensor(x, params).unwrap();
    let out = model.forward(&stack).unwrap();
    assert_eq!((out.spectrogram.frames(), out.spectrogram.bins()), (127, 513));
    assert!(out.spectrogram.data().iter().all(|c| c.re.is_finite() && c.im.is_finite()));
    let a = out.adjacency.unwrap();
    assert_eq!(a.shape(), &[2, 2]);
    let s: f32 = out.fusion.iter().sum();
    assert!((s - 1.0).abs() < 1e-6);
}

fn stack(t: Tensor<f64>) -> MultiChannelStack<f64> {
    MultiChannelStack::from_tensor(t, StftParams::new(32, 16).unwrap()).unwrap()
}

#[test]
fn evaluation_is_bitwise_deterministic() {
    let model = Model::<f64>::new(tiny(), 5).unwrap();
    let x = stack(random(&[3, 2, 16, 17], 6));
    let a = model.forward(&x).unwrap();
    let b = model.forward(&x).unwrap();
    assert_eq!(a.spectrogram, b.spectrogram);
    assert_eq!(a.mask.tensor(), b.mask.tensor());
}

#[test]
fn identical_channels_share_every_intermediate() {
    let model = Model::<f64>::new(tiny(), 7).unwrap();
    let one = random(&[1, 2, 17, 15], 8);
    let mut data = one.data().to_vec();
    data.extend_from_slice(one.data());
    let x = Tensor::from_vec(&[1, 2, 2, 17, 15], data).unwrap();
    let tape = Tape::new();
    let p = model.bind(&tape, false);
    let xv = tape.constant(x);
    let mut stats = Vec::new();
    let enc = model.encode(&tape, &p, xv, Mode::Eval, &mut stats).unwrap();
    let b = tape.value(enc.bottleneck);
    let half = b.len() / 2;
    assert_eq!(b.data()[..half], b.data()[half..]);
    let (enc, adj) = model.graph_bottleneck(&tape, &p, enc);
    assert!(tape.value(adj).data().iter().all(|&v| (v - 0.5).abs() < 1e-15));
    let dec = model.decode(&tape, &p, &enc, Mode::Eval, &mut stats).unwrap();
    let d = tape.value(dec);
    assert_eq!(d.shape(), &[2, 2, 17, 15]);
    let half = d.len() / 2;
    assert_eq!(d.data()[..half], d.data()[half..]);
}

fn manual_encoder(tape: &Tape<f64>, bottleneck: Tensor<f64>, batch: usize, mics: usize) -> EncoderOutput {
    EncoderOutput { batch, mics, bottleneck: tape.constant(bottleneck), skips: vec![], shape_trace: vec![] }
}

#[test]
fn pooled_embeddings() {
    let tape = Tape::new();
    let ones = manual_encoder(&tape, Tensor::full(&[2, 256, 3, 4], 1.0), 1, 2);
    assert!(tape.value(pool_embeddings(&tape, &ones)).data().iter().all(|&v| v == 1.0));

    let b1 = random(&[1, 5, 2, 3], 9);
    let mut data = b1.data().iter().map(|v| 2.0 * v).collect::<Vec<_>>();
    data.extend_from_slice(b1.data());
    let enc = manual_encoder(&tape, Tensor::from_vec(&[2, 5, 2, 3], data.clone()).unwrap(), 1, 2);
    let f = tape.value(pool_embeddings(&tape, &enc));
    for c in 0..5 {
        assert!((f.data()[c] - 2.0 * f.data()[5 + c]).abs() < 1e-12);
        let mean: f64 = data[c * 6..c * 6 + 6].iter().sum::<f64>() / 6.0;
        assert!((f.data()[c] - mean).abs() < 1e-12);
    }
}

#[test]
fn single_microphone_graph_is_trivial() {
    let model = Model::<f64>::new(ModelConfig { encoder_channels: vec![3], ..tiny() }, 10).unwrap();
    let tape = Tape::new();
    let p = model.bind(&tape, false);
    let b = random(&[1, 3, 2, 2], 11);
    let enc = manual_encoder(&tape, b.clone(), 1, 1);
    let (out, adj) = model.graph_bottleneck(&tape, &p, enc);
    assert_eq!(tape.value(adj).data(), &[1.0]);
    // g(g(H W0) W1) per position
    let w0 = &model.params["gcn.0.weight"];
    let w1 = &model.params["gcn.1.weight"];
    let o = tape.value(out.bottleneck);
    for pos in 0..4 {
        let h: Vec<f64> = (0..3).map(|c| b.data()[c * 4 + pos]).collect();
        let layer = |h: &[f64], w: &Tensor<f64>| -> Vec<f64> {
            (0..3).map(|j| selu((0..3).map(|k| h[k] * w.data()[k * 3 + j]).sum())).collect()
        };
        let want = layer(&layer(&h, w0), w1);
        for c in 0..3 {
            assert!((o.data()[c * 4 + pos] - want[c]).abs() < 1e-12);
        }
    }
}

#[test]
fn graph_bottleneck_matches_positionwise_oracle() {
    let cfg = ModelConfig { encoder_channels: vec![4], scorer_hidden: 5, ..Default::default() };
    let model = Model::<f64>::new(cfg, 12).unwrap();
    let (m, c, h, w) = (3, 4, 2, 3);
    let b = random(&[m, c, h, w], 13);
    let tape = Tape::new();
    let p = model.bind(&tape, false);
    let (out, _) = model.graph_bottleneck(&tape, &p, manual_encoder(&tape, b.clone(), 1, m));
    let got = tape.value(out.bottleneck);

    let pm = &model.params;
    let at = |i: usize, ch: usize, pos: usize| b.data()[(i * c + ch) * h * w + pos];
    let pooled: Vec<Vec<f64>> = (0..m).map(|i| (0..c).map(|ch| (0..h * w).map(|q| at(i, ch, q)).sum::<f64>() / 6.0).collect()).collect();
    let score = |i: usize, j: usize| {
        let z: Vec<f64> = pooled[i].iter().chain(&pooled[j]).copied().collect();
        let (w1, b1, w2, b2) = (&pm["scorer.fc1.weight"], &pm["scorer.fc1.bias"], &pm["scorer.fc2.weight"], &pm["scorer.fc2.bias"]);
        let hidden: Vec<f64> = (0..5).map(|o| selu((0..2 * c).map(|k| z[k] * w1.data()[k * 5 + o]).sum::<f64>() + b1.data()[o])).collect();
        (0..5).map(|k| hidden[k] * w2.data()[k]).sum::<f64>() + b2.data()[0]
    };
    let mut soft = vec![vec![0.0; m]; m];
    for i in 0..m {
        let row: Vec<f64> = (0..m).map(|j| score(i, j)).collect();
        let mx = row.iter().cloned().fold(f64::MIN, f64::max);
        let z: f64 = row.iter().map(|s| (s - mx).exp()).sum();
        for j in 0..m {
            soft[i][j] = (row[j] - mx).exp() / z;
        }
    }
    let a: Vec<Vec<f64>> = (0..m).map(|i| (0..m).map(|j| 0.5 * (soft[i][j] + soft[j][i])).collect()).collect();
    let d: Vec<f64> = a.iter().map(|r| r.iter().sum()).collect();
    for pos in 0..h * w {
        let mut hcur: Vec<Vec<f64>> = (0..m).map(|i| (0..c).map(|ch| at(i, ch, pos)).collect()).collect();
        for l in 0..2 {
            let wl = &pm[&format!("gcn.{l}.weight")];
            let mut next = vec![vec![0.0; c]; m];
            for i in 0..m {
                for o in 0..c {
                    let mut s = 0.0;
                    for j in 0..m {
                        let aij = a[i][j] / (d[i] * d[j]).sqrt();
                        for k in 0..c {
                            s += aij * hcur[j][k] * wl.data()[k * c + o];
                        }
                    }
                    next[i][o] = selu(s);
                }
            }
            hcur = next;
        }
        for i in 0..m {
            for ch in 0..c {
                let g = got.data()[(i * c + ch) * h * w + pos];
                assert!((g - hcur[i][ch]).abs() < 1e-5);
            }
        }
    }
}

#[test]
fn fusion_weights() {
    let tape = Tape::new();
    let w = tape.constant(Tensor::from_vec(&[2, 1], vec![1.0, 0.0]).unwrap());
    let bias = tape.constant(Tensor::zeros(&[1]));

    let d1 = random(&[1, 2, 3, 4], 14);
    let (mask, alpha) = fuse(&tape, tape.constant(d1.clone()), 1, 1, w, bias);
    assert_eq!(tape.value(alpha).data(), &[1.0]);
    assert_eq!(tape.value(mask).data(), d1.data());

    // real-plane means 0 and ln 3 give logits (ln 1, ln 3)
    let mut data = vec![0.0; 2 * 2 * 12];
    for v in &mut data[24..36] {
        *v = 3f64.ln();
    }
    for (i, v) in data.iter_mut().enumerate().filter(|(i, _)| (12..24).contains(i) || (36..48).contains(i)) {
        *v = i as f64;
    }
    let (mask, alpha) = fuse(&tape, tape.constant(Tensor::from_vec(&[2, 2, 3, 4], data.clone()).unwrap()), 1, 2, w, bias);
    let al = tape.value(alpha);
    assert!((al.data()[0] - 0.25).abs() < 1e-12 && (al.data()[1] - 0.75).abs() < 1e-12);
    let mk = tape.value(mask);
    for i in 0..24 {
        assert!((mk.data()[i] - (0.25 * data[i] + 0.75 * data[24 + i])).abs() < 1e-12);
    }

    // equal logits average the channels
    let d = random(&[2, 2, 3, 4], 15);
    let zero_w = tape.constant(Tensor::zeros(&[2, 1]));
    let (mask, _) = fuse(&tape, tape.constant(d.clone()), 1, 2, zero_w, bias);
    for (i, &v) in tape.value(mask).data().iter().enumerate() {
        assert!((v - 0.5 * (d.data()[i] + d.data()[24 + i])).abs() < 1e-12);
    }
}

#[test]
fn permuting_other_channels_keeps_the_mask() {
    let mut model = Model::<f64>::new(ModelConfig { encoder_channels: vec![4, 6, 6], ..tiny() }, 16).unwrap();
    for (i, (_, b)) in model.buffers.iter_mut().enumerate() {
        let r = random(b.shape(), 100 + i as u64);
        *b = r.map(|v| 1.0 + 0.5 * v);
    }
    let x = random(&[4, 2, 17, 17], 17);
    let plane = 2 * 17 * 17;
    let perm = [0, 3, 1, 2];
    let mut data = Vec::new();
    for &m in &perm {
        data.extend_from_slice(&x.data()[m * plane..(m + 1) * plane]);
    }
    let a = model.forward(&stack(x)).unwrap();
    let b = model.forward(&stack(Tensor::from_vec(&[4, 2, 17, 17], data).unwrap())).unwrap();
    let diff = a.mask.tensor().zip_map(b.mask.tensor(), |p, q| p - q).max_abs();
    assert!(diff < 1e-5, "{diff}");
    let (aa, ab) = (a.adjacency.unwrap(), b.adjacency.unwrap());
    for i in 0..4 {
        assert!((a.fusion[perm[i]] - b.fusion[i]).abs() < 1e-9);
        for j in 0..4 {
            assert!((aa.data()[perm[i] * 4 + perm[j]] - ab.data()[i * 4 + j]).abs() < 1e-9);
        }
    }
}

#[test]
fn too_small_input_is_rejected() {
    let model = Model::<f64>::new(tiny(), 18).unwrap();
    assert_eq!(model.config.min_input_len(), 7);
    let err = model.forward(&stack(random(&[2, 2, 6, 17], 19))).unwrap_err();
    assert!(matches!(err, Error::InputTooSmall { frames: 6, min_frames: 7, .. }));
    assert!(err.to_string().contains("at least 7 frames"));
}

#[test]
fn running_statistics_follow_batches() {
    let mut model = Model::<f64>::new(tiny(), 20).unwrap();
    let tape = Tape::new();
    let p = model.bind(&tape, true);
    let x = tape.constant(random(&[2, 2, 2, 16, 16], 21));
    let out = model.record(&tape, &p, x, Mode::Train).unwrap();
    assert_eq!(out.batch_stats.len(), 3);
    let (name, s) = &out.batch_stats[0];
    assert_eq!(name, "encoder.0.bn");
    model.update_running_stats(&out.batch_stats);
    let rm = &model.buffers["encoder.0.bn.running_mean"];
    let rv = &model.buffers["encoder.0.bn.running_var"];
    for c in 0..4 {
        assert!((rm.data()[c] - 0.1 * s.mean[c]).abs() < 1e-15);
        let unbiased = s.var[c] * s.count as f64 / (s.count - 1) as f64;
        assert!((rv.data()[c] - (0.9 + 0.1 * unbiased)).abs() < 1e-12);
    }
}

#[test]
fn from_parts_checks_names_and_shapes() {
    let model = Model::<f32>::new(tiny(), 22).unwrap();
    let ok = Model::from_parts(model.config.clone(), model.params.clone(), model.buffers.clone()).unwrap();
    assert_eq!(ok, model);
    let mut missing = model.params.clone();
    missing.remove("gcn.1.weight");
    assert!(Model::from_parts(model.config.clone(), missing, model.buffers.clone()).is_err());
    let mut extra = model.params.clone();
    extra.insert("bogus".into(), Tensor::zeros(&[1]));
    assert_eq!(
        Model::from_parts(model.config.clone(), extra, model.buffers.clone()),
        Err(Error::UnknownParameter("bogus".into()))
    );
}

#[test]
fn tiny_model_gradients() {
    // M=2, two encoder levels, 16 x 16 input, training-mode batch norm
    let model = Model::<f64>::new(ModelConfig { encoder_channels: vec![3, 4], scorer_hidden: 4, ..Default::default() }, 23).unwrap();
    let names: Vec<String> = model.params.keys().cloned().collect();
    let inputs: Vec<Tensor<f64>> = names.iter().map(|n| model.params[n].clone()).collect();
    let x = random(&[1, 2, 2, 16, 16], 24);
    let target = random(&[1, 2, 256], 25);
    let build = |t: &Tape<f64>, v: &[Var]| {
        let bound = Bound::from_vars(names.iter().cloned().zip(v.iter().copied()));
        let xv = t.constant(x.clone());
        let out = model.record(t, &bound, xv, Mode::Train).unwrap();
        let tg = t.constant(target.clone());
        t.l1_mean(out.enhanced, tg)
    };
    let report = check_gradients(&inputs, build, &GradCheckOptions { max_coords: 6, ..Default::default() });
    assert!(report.pass_fraction() >= 0.95, "pass {} worst {:?}", report.pass_fraction(), report.worst());

    // every parameter group receives gradient
    let tape = Tape::new();
    let bound = model.bind(&tape, true);
    let xv = tape.constant(x.clone());
    let out = model.record(&tape, &bound, xv, Mode::Train).unwrap();
    let loss = tape.l1_mean(out.enhanced, tape.constant(target.clone()));
    let grads = tape.backward(loss);
    let mut norm_by_group = std::collections::BTreeMap::<String, f64>::new();
    for (name, var) in bound.iter() {
        let g = grads.get(*var).map_or(0.0, |g| g.max_abs());
        *norm_by_group.entry(param_group(name).to_string()).or_default() += g;
        // softmax is shift invariant, so biases added to every logit of a row get nothing
        if name == "scorer.fc2.bias" || name == "fusion.bias" {
            assert!(g < 1e-12, "{name}");
        } else {
            assert!(g > 0.0, "{name} has zero gradient");
        }
    }
    assert_eq!(norm_by_group.len(), 5);
    assert!(norm_by_group.values().all(|&v| v > 0.0));
}
