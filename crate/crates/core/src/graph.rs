//! Dynamic microphone graph and graph convolution.
//!
//! Each microphone is a node. Edge weights come from a learned scorer applied
//! to every ordered pair of node embeddings, normalized per row with a
//! softmax and then symmetrized so the graph is undirected. Convolution
//! follows `H' = g(D^{-1/2} A D^{-1/2} H W)`.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    #[default]
    Selu,
}

impl Activation {
    pub fn apply<T: Scalar>(self, tape: &Tape<T>, x: Var) -> Var {
        match self {
            Activation::Identity => x,
            Activation::Selu => tape.selu(x),
        }
    }
}

/// `|V| x N` node feature matrix; row `i` belongs to microphone `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeFeatures<T> {
    data: Tensor<T>,
}

impl<T: Scalar> NodeFeatures<T> {
    pub fn new(data: Tensor<T>) -> Result<Self> {
        if data.shape().len() != 2 || data.shape()[0] == 0 {
            return Err(Error::Shape(format!("node features must be [M, N], got {:?}", data.shape())));
        }
        if !data.all_finite() {
            return Err(Error::NonFinite("node features"));
        }
        Ok(Self { data })
    }

    pub fn nodes(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.data
    }
}

/// Weighted undirected graph over microphones.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelGraph<T> {
    /// Row-stochastic weights before symmetrization.
    pub row_stochastic: Tensor<T>,
    /// Symmetric adjacency `A`.
    pub adjacency: Tensor<T>,
    /// Diagonal of `D`, `D_ii = sum_j A_ij`.
    pub degree: Vec<T>,
}

impl<T: Scalar> ChannelGraph<T> {
    pub fn nodes(&self) -> usize {
        self.degree.len()
    }

    /// Graph from an explicit adjacency (used for fixed graphs in tests).
    pub fn from_adjacency(adjacency: Tensor<T>) -> Result<Self> {
        let m = square_side(&adjacency)?;
        if adjacency.data().iter().any(|&v| v < T::zero() || !v.is_finite()) {
            return Err(Error::Shape("adjacency entries must be finite and non-negative".into()));
        }
        let degree = adjacency.data().chunks(m).map(|r| r.iter().copied().sum()).collect();
        Ok(Self { row_stochastic: adjacency.clone(), adjacency, degree })
    }

    pub fn a(&self, i: usize, j: usize) -> T {
        self.adjacency.data()[i * self.nodes() + j]
    }
}

fn square_side<T: Scalar>(t: &Tensor<T>) -> Result<usize> {
    match t.shape() {
        [m, n] if m == n && *m > 0 => Ok(*m),
        s => Err(Error::Shape(format!("expected a square matrix, got {s:?}"))),
    }
}

/// One affine layer `y = x W + b`, `W: [in, out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Affine<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Pairwise edge scorer `F([f_i || f_j])`: affine layers with SELU between
/// them and a scalar output.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeScorer<T> {
    pub layers: Vec<Affine<T>>,
}

impl<T: Scalar> EdgeScorer<T> {
    pub fn input_width(&self) -> usize {
        self.layers[0].weight.shape()[0]
    }

    fn record(&self, tape: &Tape<T>) -> Vec<(Var, Var)> {
        self.layers
            .iter()
            .map(|l| (tape.constant(l.weight.clone()), tape.constant(l.bias.clone())))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GcnWeights<T> {
    pub layers: Vec<Tensor<T>>,
    pub activation: Activation,
}

/// Scores of all ordered node pairs, `[B, M, N] -> [B, M, M]`.
pub fn record_edge_scores<T: Scalar>(tape: &Tape<T>, features: Var, scorer: &[(Var, Var)]) -> Var {
    let s = tape.shape(features);
    let (b, m) = (s[0], s[1]);
    let mut h = tape.pair_concat(features);
    for (i, &(w, bias)) in scorer.iter().enumerate() {
        if i > 0 {
            h = tape.selu(h);
        }
        h = tape.linear(h, w, Some(bias));
    }
    assert_eq!(tape.shape(h)[1], 1, "edge scorer must end in a scalar");
    tape.reshape(h, &[b, m, m])
}

/// Recorded graph quantities for a batch of samples.
pub struct RecordedGraph {
    pub row_stochastic: Var,
    pub adjacency: Var,
    /// `D^{-1/2} A D^{-1/2}`.
    pub normalized: Var,
}

pub fn record_adjacency<T: Scalar>(tape: &Tape<T>, scores: Var) -> RecordedGraph {
    let row_stochastic = tape.softmax_last(scores);
    let adjacency = tape.symmetrize(row_stochastic);
    let normalized = tape.degree_normalize(adjacency);
    RecordedGraph { row_stochastic, adjacency, normalized }
}

/// One graph convolution over `[B, M, P * K_in]` node features (`P` positions
/// sharing the graph, feature axis fastest) with `W: [K_in, K_out]`.
pub fn record_gcn_layer<T: Scalar>(
    tape: &Tape<T>,
    normalized: Var,
    h: Var,
    positions: usize,
    weight: Var,
    activation: Activation,
) -> Var {
    let s = tape.shape(h);
    let (b, m) = (s[0], s[1]);
    let ws = tape.shape(weight);
    let (k_in, k_out) = (ws[0], ws[1]);
    assert_eq!(s[2], positions * k_in, "gcn layer: feature width mismatch");
    let mixed = tape.bmm(normalized, h);
    let flat = tape.reshape(mixed, &[b * m * positions, k_in]);
    let projected = tape.matmul(flat, weight);
    let out = tape.reshape(projected, &[b, m, positions * k_out]);
    activation.apply(tape, out)
}

pub fn edge_scores<T: Scalar>(features: &NodeFeatures<T>, scorer: &EdgeScorer<T>) -> Result<Tensor<T>> {
    if !features.tensor().all_finite() {
        return Err(Error::NonFinite("node features"));
    }
    if scorer.input_width() != 2 * features.width() {
        return Err(Error::Shape(format!(
            "scorer takes {} inputs, node pairs have {}",
            scorer.input_width(),
            2 * features.width()
        )));
    }
    let m = features.nodes();
    let tape = Tape::new();
    let f = tape.constant(features.tensor().clone().reshaped(&[1, m, features.width()])?);
    let vars = scorer.record(&tape);
    let scores = record_edge_scores(&tape, f, &vars);
    let out = (*tape.value(scores)).clone().reshaped(&[m, m])?;
    Ok(out)
}

pub fn build_adjacency<T: Scalar>(scores: &Tensor<T>) -> Result<ChannelGraph<T>> {
    let m = square_side(scores)?;
    if !scores.all_finite() {
        return Err(Error::NonFinite("edge scores"));
    }
    let tape = Tape::new();
    let s = tape.constant(scores.clone().reshaped(&[1, m, m])?);
    let g = record_adjacency(&tape, s);
    let adjacency = (*tape.value(g.adjacency)).clone().reshaped(&[m, m])?;
    let row_stochastic = (*tape.value(g.row_stochastic)).clone().reshaped(&[m, m])?;
    let degree = adjacency.data().chunks(m).map(|r| r.iter().copied().sum()).collect();
    Ok(ChannelGraph { row_stochastic, adjacency, degree })
}

pub fn gcn_layer<T: Scalar>(h: &Tensor<T>, graph: &ChannelGraph<T>, weight: &Tensor<T>, activation: Activation) -> Result<Tensor<T>> {
    let m = graph.nodes();
    if h.shape().len() != 2 || h.shape()[0] != m {
        return Err(Error::Shape(format!("features {:?} for a {m}-node graph", h.shape())));
    }
    if weight.shape().len() != 2 || weight.shape()[0] != h.shape()[1] {
        return Err(Error::Shape(format!("weight {:?} for features {:?}", weight.shape(), h.shape())));
    }
    if let Some(i) = graph.degree.iter().position(|&d| d <= T::zero()) {
        return Err(Error::ZeroDegree(i));
    }
    let k = h.shape()[1];
    let tape = Tape::new();
    let adj = tape.constant(graph.adjacency.clone().reshaped(&[1, m, m])?);
    let norm = tape.degree_normalize(adj);
    let hv = tape.constant(h.clone().reshaped(&[1, m, k])?);
    let w = tape.constant(weight.clone());
    let out = record_gcn_layer(&tape, norm, hv, 1, w, activation);
    let v = (*tape.value(out)).clone();
    v.reshaped(&[m, weight.shape()[1]])
}

pub fn gcn_forward<T: Scalar>(h0: &Tensor<T>, graph: &ChannelGraph<T>, weights: &GcnWeights<T>) -> Result<Tensor<T>> {
    if weights.layers.is_empty() {
        return Err(Error::Shape("GCN needs at least one layer".into()));
    }
    let mut h = h0.clone();
    for w in &weights.layers {
        h = gcn_layer(&h, graph, w, weights.activation)?;
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn zero_scorer_gives_constant_scores() {
        let scorer = EdgeScorer {
            layers: vec![
                Affine { weight: Tensor::zeros(&[4, 3]), bias: Tensor::zeros(&[3]) },
                Affine { weight: Tensor::zeros(&[3, 1]), bias: t(&[1], &[0.25]) },
            ],
        };
        let x = NodeFeatures::new(t(&[3, 2], &[1.0, 2.0, -3.0, 0.5, 7.0, 1.0])).unwrap();
        let s = edge_scores(&x, &scorer).unwrap();
        assert!(s.data().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn sum_scorer_closed_form() {
        let scorer = EdgeScorer { layers: vec![Affine { weight: Tensor::full(&[6], 1.0).reshaped(&[6, 1]).unwrap(), bias: Tensor::zeros(&[1]) }] };
        let x = NodeFeatures::new(t(&[2, 3], &[1.0, 2.0, 3.0, -1.0, 0.5, 4.0])).unwrap();
        let s = edge_scores(&x, &scorer).unwrap();
        assert!((s.data()[1] - (6.0 + 3.5)).abs() < 1e-12);
        assert!((s.data()[0] - 12.0).abs() < 1e-12);
    }

    #[test]
    fn edge_scores_reject_nan() {
        let scorer = EdgeScorer { layers: vec![Affine { weight: Tensor::zeros(&[2, 1]), bias: Tensor::zeros(&[1]) }] };
        let bad = NodeFeatures { data: t(&[2, 1], &[f64::NAN, 0.0]) };
        assert_eq!(edge_scores(&bad, &scorer), Err(Error::NonFinite("node features")));
        assert!(NodeFeatures::new(t(&[2, 1], &[f64::NAN, 0.0])).is_err());
    }

    #[test]
    fn uniform_scores_give_uniform_graph() {
        let g = build_adjacency(&Tensor::<f64>::full(&[4, 4], 3.2)).unwrap();
        assert!(g.adjacency.data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
        assert!(g.degree.iter().all(|&d| (d - 1.0).abs() < 1e-15));
    }

    #[test]
    fn softmax_by_hand() {
        let ln3 = 3f64.ln();
        let g = build_adjacency(&t(&[2, 2], &[0.0, ln3, ln3, 0.0])).unwrap();
        let want = [0.25, 0.75, 0.75, 0.25];
        for (a, b) in g.row_stochastic.data().iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(g.adjacency, g.row_stochastic);
        assert!(g.degree.iter().all(|&d| (d - 1.0).abs() < 1e-12));
    }

    #[test]
    fn identity_graph_and_uniform_two_node_graph() {
        let one = ChannelGraph::from_adjacency(t(&[1, 1], &[1.0])).unwrap();
        let h = t(&[1, 3], &[0.5, -1.0, 2.0]);
        let eye3 = t(&[3, 3], &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(gcn_layer(&h, &one, &eye3, Activation::Identity).unwrap(), h);

        let two = ChannelGraph::from_adjacency(t(&[2, 2], &[0.5; 4])).unwrap();
        let eye2 = t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        let out = gcn_layer(&eye2, &two, &eye2, Activation::Identity).unwrap();
        assert!(out.data().iter().all(|&v| (v - 0.5).abs() < 1e-15));
    }

    #[test]
    fn zero_degree_is_rejected() {
        let g = ChannelGraph::from_adjacency(t(&[2, 2], &[1.0, 0.0, 0.0, 0.0])).unwrap();
        let h = t(&[2, 1], &[1.0, 1.0]);
        assert_eq!(gcn_layer(&h, &g, &t(&[1, 1], &[1.0]), Activation::Identity), Err(Error::ZeroDegree(1)));
    }

    #[test]
    fn two_identity_layers_leave_features_unchanged() {
        let g = ChannelGraph::from_adjacency(t(&[1, 1], &[1.0])).unwrap();
        let h = t(&[1, 2], &[3.0, -4.0]);
        let eye = t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        let w = GcnWeights { layers: vec![eye.clone(), eye], activation: Activation::Identity };
        assert_eq!(gcn_forward(&h, &g, &w).unwrap(), h);
    }
}
