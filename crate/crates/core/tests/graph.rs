use micgraph_core::gradcheck::{check_gradients, GradCheckOptions};
use micgraph_core::graph::{
    build_adjacency, edge_scores, gcn_forward, gcn_layer, record_adjacency, record_edge_scores, record_gcn_layer,
    Activation, Affine, ChannelGraph, EdgeScorer, GcnWeights, NodeFeatures,
};
use micgraph_core::autograd::Tape;
use micgraph_core::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], rng: &mut impl Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
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

/// Straight triple loops over `g(D^-1/2 A D^-1/2 H W)`.
fn dense_gcn(h: &[Vec<f64>], a: &[Vec<f64>], w: &[Vec<f64>], act: Activation) -> Vec<Vec<f64>> {
    let m = a.len();
    let d: Vec<f64> = a.iter().map(|r| r.iter().sum()).collect();
    let mut ah = vec![vec![0.0; h[0].len()]; m];
    for i in 0..m {
        for j in 0..m {
            let aij = a[i][j] / (d[i].sqrt() * d[j].sqrt());
            for k in 0..h[0].len() {
                ah[i][k] += aij * h[j][k];
            }
        }
    }
    let mut out = vec![vec![0.0; w[0].len()]; m];
    for i in 0..m {
        for o in 0..w[0].len() {
            let mut s = 0.0;
            for k in 0..w.len() {
                s += ah[i][k] * w[k][o];
            }
            out[i][o] = match act {
                Activation::Identity => s,
                Activation::Selu => selu(s),
            };
        }
    }
    out
}

fn rows(t: &Tensor<f64>) -> Vec<Vec<f64>> {
    t.data().chunks(t.shape()[1]).map(|r| r.to_vec()).collect()
}

fn random_graph(m: usize, rng: &mut impl Rng) -> ChannelGraph<f64> {
    let scores = random(&[m, m], rng).map(|v| 3.0 * v);
    build_adjacency(&scores).unwrap()
}

fn scorer(n: usize, hidden: usize, rng: &mut impl Rng) -> EdgeScorer<f64> {
    EdgeScorer {
        layers: vec![
            Affine { weight: random(&[2 * n, hidden], rng), bias: random(&[hidden], rng) },
            Affine { weight: random(&[hidden, 1], rng), bias: random(&[1], rng) },
        ],
    }
}

#[test]
fn gcn_matches_dense_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for trial in 0..50 {
        let m = 1 + trial % 5;
        let k_in = 1 + rng.random_range(0..8);
        let k_out = 1 + rng.random_range(0..8);
        let g = random_graph(m, &mut rng);
        let h = random(&[m, k_in], &mut rng);
        let w = random(&[k_in, k_out], &mut rng);
        let act = if trial % 2 == 0 { Activation::Selu } else { Activation::Identity };
        let got = gcn_layer(&h, &g, &w, act).unwrap();
        let want = dense_gcn(&rows(&h), &rows(&g.adjacency), &rows(&w), act);
        for (r, wr) in rows(&got).iter().zip(&want) {
            for (a, b) in r.iter().zip(wr) {
                assert!((a - b).abs() < 1e-6, "trial {trial}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn two_layer_forward_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let g = random_graph(3, &mut rng);
    let h0 = random(&[3, 4], &mut rng);
    let ws = GcnWeights { layers: vec![random(&[4, 4], &mut rng), random(&[4, 4], &mut rng)], activation: Activation::Selu };
    let got = gcn_forward(&h0, &g, &ws).unwrap();
    assert_eq!(got.shape(), h0.shape());
    let a = rows(&g.adjacency);
    let h1 = dense_gcn(&rows(&h0), &a, &rows(&ws.layers[0]), Activation::Selu);
    let h2 = dense_gcn(&h1, &a, &rows(&ws.layers[1]), Activation::Selu);
    for (r, wr) in rows(&got).iter().zip(&h2) {
        for (x, y) in r.iter().zip(wr) {
            assert!((x - y).abs() < 1e-6);
        }
    }
}

#[test]
fn identical_nodes_give_uniform_adjacency() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for trial in 0..1000 {
        let m = 1 + trial % 6;
        let n = 1 + trial % 5;
        let row = random(&[1, n], &mut rng);
        let mut data = Vec::new();
        for _ in 0..m {
            data.extend_from_slice(row.data());
        }
        let x = NodeFeatures::new(Tensor::from_vec(&[m, n], data).unwrap()).unwrap();
        let s = scorer(n, 6, &mut rng);
        let g = build_adjacency(&edge_scores(&x, &s).unwrap()).unwrap();
        for &v in g.adjacency.data() {
            assert!((v - 1.0 / m as f64).abs() < 1e-12);
        }
    }
}

#[test]
fn different_inputs_give_different_graphs() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let s = scorer(5, 16, &mut rng);
    for _ in 0..20 {
        let a = NodeFeatures::new(random(&[3, 5], &mut rng)).unwrap();
        let b = NodeFeatures::new(random(&[3, 5], &mut rng)).unwrap();
        let ga = build_adjacency(&edge_scores(&a, &s).unwrap()).unwrap();
        let gb = build_adjacency(&edge_scores(&b, &s).unwrap()).unwrap();
        let diff = ga.adjacency.zip_map(&gb.adjacency, |x, y| x - y).max_abs();
        assert!(diff > 1e-6);
    }
}

fn permute_rows(t: &Tensor<f64>, p: &[usize]) -> Tensor<f64> {
    let c = t.shape()[1];
    let mut data = Vec::with_capacity(t.len());
    for &i in p {
        data.extend_from_slice(&t.data()[i * c..(i + 1) * c]);
    }
    Tensor::from_vec(t.shape(), data).unwrap()
}

fn permute_square(t: &Tensor<f64>, p: &[usize]) -> Tensor<f64> {
    let m = p.len();
    let mut data = vec![0.0; m * m];
    for i in 0..m {
        for j in 0..m {
            data[i * m + j] = t.data()[p[i] * m + p[j]];
        }
    }
    Tensor::from_vec(&[m, m], data).unwrap()
}

proptest! {
    #[test]
    fn adjacency_invariants(m in 1usize..7, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scores = random(&[m, m], &mut rng).map(|v| 20.0 * v);
        let g = build_adjacency(&scores).unwrap();
        for r in g.row_stochastic.data().chunks(m) {
            prop_assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-5);
        }
        for i in 0..m {
            let mut d = 0.0;
            for j in 0..m {
                prop_assert_eq!(g.a(i, j), g.a(j, i));
                prop_assert!(g.a(i, j) > 0.0);
                d += g.a(i, j);
            }
            prop_assert_eq!(g.degree[i], d);
        }
    }

    #[test]
    fn permutation_equivariance(m in 1usize..6, k in 1usize..6, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_graph(m, &mut rng);
        let h = random(&[m, k], &mut rng);
        let w = random(&[k, 3], &mut rng);
        let mut perm: Vec<usize> = (0..m).collect();
        for i in (1..m).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let out = gcn_layer(&h, &g, &w, Activation::Selu).unwrap();
        let pg = ChannelGraph::from_adjacency(permute_square(&g.adjacency, &perm)).unwrap();
        let pout = gcn_layer(&permute_rows(&h, &perm), &pg, &w, Activation::Selu).unwrap();
        let diff = permute_rows(&out, &perm).zip_map(&pout, |a, b| a - b).max_abs();
        prop_assert!(diff < 1e-5);
    }
}

#[test]
fn gradients_through_scorer_and_gcn() {
    // M=3 nodes, K=4 features, scorer hidden width 5
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random(&[1, 3, 4], &mut rng);
    let s = scorer(4, 5, &mut rng);
    let w1 = random(&[4, 4], &mut rng);
    let w2 = random(&[4, 4], &mut rng);
    let proj = random(&[1, 3, 4], &mut rng);
    let inputs = vec![
        x,
        s.layers[0].weight.clone(),
        s.layers[0].bias.clone(),
        s.layers[1].weight.clone(),
        s.layers[1].bias.clone(),
        w1,
        w2,
    ];
    let report = check_gradients(
        &inputs,
        |t: &Tape<f64>, v| {
            let scores = record_edge_scores(t, v[0], &[(v[1], v[2]), (v[3], v[4])]);
            let g = record_adjacency(t, scores);
            let h1 = record_gcn_layer(t, g.normalized, v[0], 1, v[5], Activation::Selu);
            let h2 = record_gcn_layer(t, g.normalized, h1, 1, v[6], Activation::Selu);
            let p = t.constant(proj.clone());
            let y = t.mul(h2, p);
            t.sum(y)
        },
        &GradCheckOptions::default(),
    );
    assert_eq!(report.passed(), report.checked(), "worst {:?}", report.worst());
}
