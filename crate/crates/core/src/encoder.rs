//! Message-passing state encoder.
//!
//! `H⁰ = input_proj(X)`, then for each round every node takes the
//! elementwise max of `message(H_u)` over its neighbors `u` (zero when it
//! has none) and updates `H_v = update([H_v, m_v])`. The final `H` is the
//! node-embedding matrix `Z`; the state vector is the mean row of `Z`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::Edge;
use crate::nn::{BoundLinear, BoundMlp, Csr, Gradients, Linear, Matrix, Mlp, Parameters, Tape, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    pub input_proj: Linear,
    pub message: Mlp,
    pub update: Mlp,
    pub rounds: usize,
}

/// One or more graphs over the same feature dimension, stacked as a
/// disjoint union so a single forward pass encodes all of them.
#[derive(Clone, Debug)]
pub struct GraphBatch {
    features: Matrix,
    adjacency: Csr,
    offsets: Vec<usize>,
}

impl GraphBatch {
    pub fn single(features: &Matrix, edges: &[Edge]) -> Result<Self> {
        Self::stacked(features, &[edges])
    }

    /// Every edge set shares the node features `features`.
    pub fn stacked(features: &Matrix, edge_sets: &[&[Edge]]) -> Result<Self> {
        let n = features.rows();
        let mut lists: Vec<Vec<usize>> = vec![Vec::new(); n * edge_sets.len()];
        for (b, edges) in edge_sets.iter().enumerate() {
            let base = b * n;
            for &(u, v) in *edges {
                if u >= n || v >= n {
                    return Err(Error::Argument(format!(
                        "edge ({u}, {v}) out of range for {n} feature rows"
                    )));
                }
                lists[base + v].push(base + u);
                lists[base + u].push(base + v);
            }
        }
        Ok(Self {
            features: features.tile_rows(edge_sets.len()),
            adjacency: Csr::from_lists(lists),
            offsets: (0..=edge_sets.len()).map(|b| b * n).collect(),
        })
    }

    pub fn graphs(&self) -> usize {
        self.offsets.len() - 1
    }
}

impl Encoder {
    pub fn new<R: Rng + ?Sized>(feature_dim: usize, embed_dim: usize, hidden: usize, rounds: usize, rng: &mut R) -> Self {
        assert!(embed_dim >= 1 && rounds >= 1, "encoder needs d >= 1 and p >= 1");
        Self {
            input_proj: Linear::new(feature_dim, embed_dim, rng),
            message: Mlp::new(&[embed_dim, hidden, embed_dim], rng),
            update: Mlp::new(&[2 * embed_dim, hidden, embed_dim], rng),
            rounds,
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.input_proj.inputs()
    }

    pub fn embed_dim(&self) -> usize {
        self.input_proj.outputs()
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundEncoder {
        BoundEncoder {
            input_proj: self.input_proj.bind(tape, trainable),
            message: self.message.bind(tape, trainable),
            update: self.update.bind(tape, trainable),
            rounds: self.rounds,
            proj_shapes: [self.input_proj.weight.shape(), self.input_proj.bias.shape()],
        }
    }

    fn check(&self, batch: &GraphBatch) -> Result<()> {
        if batch.features.cols() != self.feature_dim() {
            return Err(Error::Argument(format!(
                "features have {} columns, encoder expects {}",
                batch.features.cols(),
                self.feature_dim()
            )));
        }
        Ok(())
    }

    /// Node embeddings `Z` (n×d) of one graph.
    pub fn encode(&self, features: &Matrix, edges: &[Edge]) -> Result<Matrix> {
        let batch = GraphBatch::single(features, edges)?;
        self.check(&batch)?;
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let z = bound.forward(&mut tape, &batch);
        Ok(tape.value(z).clone())
    }

    /// Pooled state vectors, one row per graph of the batch.
    pub fn encode_pooled(&self, batch: &GraphBatch) -> Result<Matrix> {
        self.check(batch)?;
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let s = bound.pooled(&mut tape, batch);
        Ok(tape.value(s).clone())
    }
}

impl Parameters for Encoder {
    fn params(&self) -> Vec<&Matrix> {
        let mut p = self.input_proj.params();
        p.extend(self.message.params());
        p.extend(self.update.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Matrix> {
        let mut p = self.input_proj.params_mut();
        p.extend(self.message.params_mut());
        p.extend(self.update.params_mut());
        p
    }
}

#[derive(Clone, Debug)]
pub struct BoundEncoder {
    input_proj: BoundLinear,
    message: BoundMlp,
    update: BoundMlp,
    rounds: usize,
    proj_shapes: [(usize, usize); 2],
}

impl BoundEncoder {
    pub fn forward(&self, tape: &mut Tape, batch: &GraphBatch) -> Var {
        let x = tape.constant(batch.features.clone());
        let mut h = self.input_proj.forward(tape, x);
        for _ in 0..self.rounds {
            let msg = self.message.forward(tape, h);
            let agg = tape.neighbor_max(msg, &batch.adjacency);
            let joined = tape.concat_cols(&[h, agg]);
            let u = self.update.forward(tape, joined);
            // Bounded embeddings keep the policy gradient from inflating
            // state vectors that Q and the reward extrapolate on.
            h = tape.tanh(u);
        }
        h
    }

    pub fn pooled(&self, tape: &mut Tape, batch: &GraphBatch) -> Var {
        let z = self.forward(tape, batch);
        tape.segment_reduce(z, &batch.offsets, true)
    }

    /// Parameter gradients in [`Parameters::params`] order.
    pub fn grads(&self, g: &Gradients) -> Vec<Matrix> {
        let [w, b] = self.input_proj.vars();
        let mut out = vec![g.get(w, self.proj_shapes[0]), g.get(b, self.proj_shapes[1])];
        out.extend(self.message.grads(g));
        out.extend(self.update.grads(g));
        out
    }
}

/// Mean over node rows.
pub fn pool_state(z: &Matrix) -> Vec<f64> {
    assert!(z.rows() >= 1, "pooling needs at least one node");
    z.mean_rows()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn set_identity_linear(l: &mut Linear) {
        l.weight.data_mut().fill(0.0);
        for i in 0..l.inputs().min(l.outputs()) {
            l.weight.set(i, i, 1.0);
        }
        l.bias.data_mut().fill(0.0);
    }

    #[test]
    fn edgeless_graph_depends_only_on_own_features() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let enc = Encoder::new(3, 4, 8, 2, &mut rng);
        let x = Matrix::from_rows(&[vec![1.0, 0.0, 2.0], vec![1.0, 0.0, 2.0], vec![0.0, 1.0, 0.0]]);
        let z = enc.encode(&x, &[]).unwrap();
        assert_eq!(z.shape(), (3, 4));
        assert_eq!(z.row(0), z.row(1));
        let alone = enc.encode(&Matrix::from_rows(&[x.row(2).to_vec()]), &[]).unwrap();
        assert_eq!(z.row(2), alone.row(0));
    }

    /// One round on the path 0–1–2 with d = 2, computed by hand.
    #[test]
    fn one_round_on_a_path_matches_hand_computation() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut enc = Encoder::new(2, 2, 2, 1, &mut rng);
        set_identity_linear(&mut enc.input_proj);
        // message(h) = relu(h) with identity layers.
        for l in &mut enc.message.layers {
            set_identity_linear(l);
        }
        // update([h, m]) = relu(h + 2m) then identity, squashed by tanh.
        let up0 = &mut enc.update.layers[0];
        up0.weight = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![2.0, 0.0], vec![0.0, 2.0]]);
        up0.bias.data_mut().fill(0.0);
        set_identity_linear(&mut enc.update.layers[1]);

        let x = Matrix::from_rows(&[vec![1.0, -1.0], vec![0.5, 2.0], vec![-3.0, 0.25]]);
        let z = enc.encode(&x, &[(0, 1), (1, 2)]).unwrap();
        // m0 = relu(h1) = (0.5, 2); h0' = relu((1 + 1, -1 + 4)) = (2, 3)
        // m1 = max(relu(h0), relu(h2)) = max((1,0),(0,0.25)) = (1, 0.25)
        //   h1' = relu((0.5 + 2, 2 + 0.5)) = (2.5, 2.5)
        // m2 = relu(h1) = (0.5, 2); h2' = relu((-3 + 1, 0.25 + 4)) = (0, 4.25)
        let expect: Vec<f64> = [2.0, 3.0, 2.5, 2.5, 0.0, 4.25].iter().map(|v: &f64| v.tanh()).collect();
        assert_eq!(z.data(), expect.as_slice());
    }

    #[test]
    fn pooling() {
        let z = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert_eq!(pool_state(&z), vec![0.5, 0.5]);
        let same = Matrix::from_rows(&vec![vec![0.3, -2.0]; 4]);
        assert_eq!(pool_state(&same), vec![0.3, -2.0]);
    }

    #[test]
    fn batched_matches_single() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let enc = Encoder::new(2, 3, 5, 2, &mut rng);
        let x = Matrix::from_rows(&[vec![0.1, 0.2], vec![-0.3, 0.4], vec![0.5, -0.6], vec![0.0, 1.0]]);
        let e1: Vec<Edge> = vec![(0, 1)];
        let e2: Vec<Edge> = vec![(0, 2), (2, 3), (1, 3)];
        let batch = GraphBatch::stacked(&x, &[&e1, &e2]).unwrap();
        let pooled = enc.encode_pooled(&batch).unwrap();
        for (i, e) in [&e1, &e2].iter().enumerate() {
            let single = pool_state(&enc.encode(&x, e).unwrap());
            for (a, b) in pooled.row(i).iter().zip(&single) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rejects_dimension_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let enc = Encoder::new(2, 3, 5, 2, &mut rng);
        assert!(enc.encode(&Matrix::zeros(3, 4), &[]).is_err());
        assert!(enc.encode(&Matrix::zeros(3, 2), &[(0, 5)]).is_err());
    }
}
