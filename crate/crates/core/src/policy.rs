//! Squashed-Gaussian policy over the latent action space and the
//! similarity rule that maps action vectors to node pairs.

use std::f64::consts::{LN_2, PI};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::nn::{sigmoid, BoundMlp, Matrix, Mlp, Parameters, Tape, Var};

pub const LOG_VAR_MIN: f64 = -20.0;
pub const LOG_VAR_MAX: f64 = 2.0;

/// Gaussian head `s ↦ (μ, log σ²)`; both action components are drawn from
/// the same head and squashed with `tanh`.
#[derive(Clone, Debug, PartialEq)]
pub struct Policy {
    pub net: Mlp,
    pub log_var_min: f64,
    pub log_var_max: f64,
}

/// A latent action `(a⁽¹⁾, a⁽²⁾)` and its joint log-density.
#[derive(Clone, Debug, PartialEq)]
pub struct Action {
    pub a1: Vec<f64>,
    pub a2: Vec<f64>,
    pub log_prob: f64,
}

/// Standard-normal draws for both action components, one row per state.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionNoise {
    pub eps1: Matrix,
    pub eps2: Matrix,
}

impl ActionNoise {
    pub fn sample<R: Rng + ?Sized>(rng: &mut R, rows: usize, dim: usize) -> Self {
        let mut draw = || {
            Matrix::from_vec(
                rows,
                dim,
                (0..rows * dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect(),
            )
        };
        let eps1 = draw();
        let eps2 = draw();
        Self { eps1, eps2 }
    }

    pub fn zeros(rows: usize, dim: usize) -> Self {
        Self {
            eps1: Matrix::zeros(rows, dim),
            eps2: Matrix::zeros(rows, dim),
        }
    }
}

/// Reparameterized actions on a tape.
#[derive(Clone, Copy, Debug)]
pub struct TapeActions {
    pub a1: Var,
    pub a2: Var,
    /// Column of per-row joint log-densities.
    pub log_prob: Var,
}

impl Policy {
    pub fn new<R: Rng + ?Sized>(state_dim: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            net: Mlp::new(&[state_dim, hidden, 2 * state_dim], rng),
            log_var_min: LOG_VAR_MIN,
            log_var_max: LOG_VAR_MAX,
        }
    }

    pub fn action_dim(&self) -> usize {
        self.net.outputs() / 2
    }

    /// `a⁽ⁱ⁾ = tanh(μ + σ⊙εⁱ)` with `σ = exp(½ log σ²)`; the log-density is
    /// the Gaussian density of the pre-squash sample minus the `tanh`
    /// Jacobian, summed over both components.
    pub fn sample_on_tape(&self, tape: &mut Tape, net: &BoundMlp, states: Var, noise: &ActionNoise) -> TapeActions {
        let d = self.action_dim();
        let rows = tape.value(states).rows();
        assert_eq!(noise.eps1.shape(), (rows, d), "noise shape mismatch");
        let out = net.forward(tape, states);
        let mu = tape.slice_cols(out, 0, d);
        let raw_log_var = tape.slice_cols(out, d, d);
        let log_var = tape.clamp(raw_log_var, self.log_var_min, self.log_var_max);
        let half = tape.scale(log_var, 0.5);
        let sigma = tape.exp(half);
        let neg_half_log_var = tape.scale(log_var, -0.5);
        let log_var_term = tape.row_sum(neg_half_log_var);

        let mut component = |eps: &Matrix| {
            let e = tape.constant(eps.clone());
            let spread = tape.mul(sigma, e);
            let pre = tape.add(mu, spread);
            let action = tape.tanh(pre);
            // log(1 − tanh²u) = 2·(ln 2 − u − softplus(−2u))
            let m2u = tape.scale(pre, -2.0);
            let sp = tape.softplus(m2u);
            let inner = tape.add(pre, sp);
            let neg = tape.scale(inner, -2.0);
            let log_jac = tape.offset(neg, 2.0 * LN_2);
            let jac_sum = tape.row_sum(log_jac);
            let consts: Vec<f64> = (0..rows)
                .map(|r| -0.5 * eps.row(r).iter().map(|x| x * x).sum::<f64>() - 0.5 * d as f64 * (2.0 * PI).ln())
                .collect();
            let c = tape.constant(Matrix::col_vector(&consts));
            let gauss = tape.add(log_var_term, c);
            (action, tape.sub(gauss, jac_sum))
        };
        let (a1, lp1) = component(&noise.eps1);
        let (a2, lp2) = component(&noise.eps2);
        let log_prob = tape.add(lp1, lp2);
        TapeActions { a1, a2, log_prob }
    }

    /// Samples one action at state `s`. With `noise` given the draw is
    /// deterministic.
    pub fn sample_action<R: Rng + ?Sized>(&self, s: &[f64], noise: Option<&ActionNoise>, rng: &mut R) -> Result<Action> {
        if s.iter().any(|x| !x.is_finite()) {
            return Err(Error::Argument("state vector is not finite".into()));
        }
        let d = self.action_dim();
        let owned;
        let noise = match noise {
            Some(n) => n,
            None => {
                owned = ActionNoise::sample(rng, 1, d);
                &owned
            }
        };
        let mut tape = Tape::new();
        let net = self.net.bind(&mut tape, false);
        let sv = tape.constant(Matrix::row_vector(s));
        let acts = self.sample_on_tape(&mut tape, &net, sv, noise);
        Ok(Action {
            a1: tape.value(acts.a1).data().to_vec(),
            a2: tape.value(acts.a2).data().to_vec(),
            log_prob: tape.scalar(acts.log_prob),
        })
    }

    /// `tanh(μ)` for both components: the mode of the squashed policy.
    pub fn mean_action(&self, s: &[f64]) -> Vec<f64> {
        let out = self.net.eval(&Matrix::row_vector(s));
        out.data()[..self.action_dim()].iter().map(|x| x.tanh()).collect()
    }
}

impl Parameters for Policy {
    fn params(&self) -> Vec<&Matrix> {
        self.net.params()
    }

    fn params_mut(&mut self) -> Vec<&mut Matrix> {
        self.net.params_mut()
    }
}

fn argmax_by(scores: impl Iterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for (v, s) in scores.enumerate() {
        // Strict comparison keeps the lowest index on ties.
        if s > best_score {
            best = v;
            best_score = s;
        }
    }
    best
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Node whose embedding has the largest inner product with `a`.
///
/// The sigmoid in front of the similarity is strictly monotone, so it is
/// dropped here; see [`select_node_sigmoid`].
pub fn select_node(a: &[f64], z: &Matrix) -> usize {
    assert!(z.rows() >= 1, "node selection needs at least one node");
    argmax_by((0..z.rows()).map(|v| dot(a, z.row(v))))
}

/// [`select_node`] evaluated through `sigmoid(⟨a, z⟩)`.
pub fn select_node_sigmoid(a: &[f64], z: &Matrix) -> usize {
    assert!(z.rows() >= 1, "node selection needs at least one node");
    argmax_by((0..z.rows()).map(|v| sigmoid(dot(a, z.row(v)))))
}

pub fn select_nodes(action: &Action, z: &Matrix) -> (usize, usize) {
    (select_node(&action.a1, z), select_node(&action.a2, z))
}
