//! Maximum-entropy actor-critic updates: twin soft Q networks, a value
//! network with an exponentially averaged target, the reparameterized
//! policy loss (back-propagated into the encoder) and automatic tuning of
//! the entropy temperature.

use rand::Rng;

use crate::encoder::{Encoder, GraphBatch};
use crate::env::{ReplayBuffer, Transition};
use crate::error::{Error, Result};
use crate::graph::Edge;
use crate::nn::{Adam, Matrix, Mlp, Parameters, Tape, Var};
use crate::policy::{ActionNoise, Policy};

#[derive(Clone, Debug, PartialEq)]
pub struct SacConfig {
    pub discount: f64,
    pub soft_target_tau: f64,
    pub policy_lr: f64,
    pub qf_lr: f64,
    pub value_lr: f64,
    pub encoder_lr: f64,
    pub alpha_lr: f64,
    pub auto_entropy: bool,
    /// Defaults to `−2d`.
    pub target_entropy: Option<f64>,
    pub initial_alpha: f64,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            discount: 0.99,
            soft_target_tau: 0.001,
            policy_lr: 1e-4,
            qf_lr: 1e-3,
            value_lr: 1e-3,
            encoder_lr: 1e-4,
            alpha_lr: 1e-4,
            auto_entropy: true,
            target_entropy: None,
            initial_alpha: 1.0,
        }
    }
}

/// Single learnable scalar `log α`.
#[derive(Clone, Debug, PartialEq)]
pub struct Temperature {
    pub log_alpha: Matrix,
}

impl Temperature {
    pub fn new(alpha: f64) -> Self {
        Self {
            log_alpha: Matrix::filled(1, 1, alpha.ln()),
        }
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.data()[0].exp()
    }
}

impl Parameters for Temperature {
    fn params(&self) -> Vec<&Matrix> {
        vec![&self.log_alpha]
    }

    fn params_mut(&mut self) -> Vec<&mut Matrix> {
        vec![&mut self.log_alpha]
    }
}

/// Replay samples in matrix form.
#[derive(Clone, Debug)]
pub struct Batch {
    pub states: Matrix,
    pub a1: Matrix,
    pub a2: Matrix,
    pub rewards: Vec<f64>,
    pub next_states: Matrix,
    /// Edge set behind each row of `states`.
    pub edge_sets: Vec<Vec<Edge>>,
}

impl Batch {
    pub fn from_transitions(ts: &[&Transition]) -> Self {
        let rows = |f: &dyn Fn(&Transition) -> &[f64]| {
            Matrix::from_rows(&ts.iter().map(|t| f(t).to_vec()).collect::<Vec<_>>())
        };
        Self {
            states: rows(&|t| &t.s),
            a1: rows(&|t| &t.a.a1),
            a2: rows(&|t| &t.a.a2),
            rewards: ts.iter().map(|t| t.r).collect(),
            next_states: rows(&|t| &t.s_next),
            edge_sets: ts.iter().map(|t| t.adjacency.edges()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

#[derive(Clone, Debug)]
pub struct QLoss {
    pub loss: f64,
    pub q1_grads: Vec<Matrix>,
    pub q2_grads: Vec<Matrix>,
}

#[derive(Clone, Debug)]
pub struct ValueLoss {
    pub loss: f64,
    pub grads: Vec<Matrix>,
}

#[derive(Clone, Debug)]
pub struct PolicyLoss {
    pub loss: f64,
    pub policy_grads: Vec<Matrix>,
    /// Empty when the loss was evaluated on stored states.
    pub encoder_grads: Vec<Matrix>,
    pub log_probs: Vec<f64>,
}

/// Loss values from one [`SacAgent::train_step`].
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepStats {
    pub q_loss: f64,
    pub value_loss: f64,
    pub policy_loss: f64,
    pub alpha: f64,
}

/// Policy, encoder and critics together with their optimizers.
#[derive(Clone, Debug)]
pub struct SacAgent {
    pub encoder: Encoder,
    pub policy: Policy,
    pub q1: Mlp,
    pub q2: Mlp,
    pub value: Mlp,
    pub value_target: Mlp,
    pub temperature: Temperature,
    pub config: SacConfig,
    opt_encoder: Adam,
    opt_policy: Adam,
    opt_q1: Adam,
    opt_q2: Adam,
    opt_value: Adam,
    opt_alpha: Adam,
}

fn check_finite(what: &str, x: f64) -> Result<f64> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(Error::divergence(format!("{what} is {x}")))
    }
}

impl SacAgent {
    pub fn new<R: Rng + ?Sized>(
        feature_dim: usize,
        embed_dim: usize,
        hidden: usize,
        rounds: usize,
        config: SacConfig,
        rng: &mut R,
    ) -> Self {
        // Message and update nets are d→d; `hidden` sizes the other heads.
        let encoder = Encoder::new(feature_dim, embed_dim, embed_dim, rounds, rng);
        let policy = Policy::new(embed_dim, hidden, rng);
        let q_sizes = [3 * embed_dim, hidden, hidden, 1];
        let q1 = Mlp::new(&q_sizes, rng);
        let q2 = Mlp::new(&q_sizes, rng);
        let value = Mlp::new(&[embed_dim, hidden, hidden, 1], rng);
        Self::from_parts(encoder, policy, q1, q2, value, config)
    }

    pub fn from_parts(encoder: Encoder, policy: Policy, q1: Mlp, q2: Mlp, value: Mlp, config: SacConfig) -> Self {
        let temperature = Temperature::new(config.initial_alpha);
        Self {
            opt_encoder: Adam::new(config.encoder_lr),
            opt_policy: Adam::new(config.policy_lr),
            opt_q1: Adam::new(config.qf_lr),
            opt_q2: Adam::new(config.qf_lr),
            opt_value: Adam::new(config.value_lr),
            opt_alpha: Adam::new(config.alpha_lr),
            value_target: value.clone(),
            encoder,
            policy,
            q1,
            q2,
            value,
            temperature,
            config,
        }
    }

    pub fn embed_dim(&self) -> usize {
        self.encoder.embed_dim()
    }

    pub fn alpha(&self) -> f64 {
        self.temperature.alpha()
    }

    pub fn target_entropy(&self) -> f64 {
        self.config
            .target_entropy
            .unwrap_or(-2.0 * self.embed_dim() as f64)
    }

    /// `J_Q = mean_b ½·[(Q₁ − Q̂)² + (Q₂ − Q̂)²]/2` with
    /// `Q̂ = r + γ·V_target(s')` held constant.
    pub fn q_loss(&self, batch: &Batch) -> Result<QLoss> {
        let next_v = self.value_target.eval(&batch.next_states);
        let targets: Vec<f64> = batch
            .rewards
            .iter()
            .zip(next_v.data())
            .map(|(r, v)| r + self.config.discount * v)
            .collect();
        let mut tape = Tape::new();
        let q1 = self.q1.bind(&mut tape, true);
        let q2 = self.q2.bind(&mut tape, true);
        let s = tape.constant(batch.states.clone());
        let a1 = tape.constant(batch.a1.clone());
        let a2 = tape.constant(batch.a2.clone());
        let input = tape.concat_cols(&[s, a1, a2]);
        let target = tape.constant(Matrix::col_vector(&targets));
        let out1 = q1.forward(&mut tape, input);
        let out2 = q2.forward(&mut tape, input);
        let mut half_sq = |q: Var| {
            let diff = tape.sub(q, target);
            let sq = tape.mul(diff, diff);
            tape.scale(sq, 0.5)
        };
        let l1 = half_sq(out1);
        let l2 = half_sq(out2);
        let both = tape.add(l1, l2);
        let per = tape.scale(both, 0.5);
        let loss = tape.mean(per);
        let value = check_finite("J_Q", tape.scalar(loss))?;
        let g = tape.backward(loss);
        Ok(QLoss {
            loss: value,
            q1_grads: q1.grads(&g),
            q2_grads: q2.grads(&g),
        })
    }

    /// Soft state-value target `min(Q₁, Q₂)(s, ã) − α·log π(ã|s)` for a
    /// fresh action `ã` drawn with `noise`, evaluated without gradients.
    pub fn soft_value_targets(&self, states: &Matrix, noise: &ActionNoise) -> Vec<f64> {
        let mut tape = Tape::new();
        let pnet = self.policy.net.bind(&mut tape, false);
        let s = tape.constant(states.clone());
        let acts = self.policy.sample_on_tape(&mut tape, &pnet, s, noise);
        let q = self.min_q(&mut tape, s, acts.a1, acts.a2, false);
        let alpha = self.alpha();
        tape.value(q)
            .data()
            .iter()
            .zip(tape.value(acts.log_prob).data())
            .map(|(q, lp)| q - alpha * lp)
            .collect()
    }

    fn min_q(&self, tape: &mut Tape, s: Var, a1: Var, a2: Var, trainable: bool) -> Var {
        let q1 = self.q1.bind(tape, trainable);
        let q2 = self.q2.bind(tape, trainable);
        let input = tape.concat_cols(&[s, a1, a2]);
        let o1 = q1.forward(tape, input);
        let o2 = q2.forward(tape, input);
        tape.min(o1, o2)
    }

    /// `J_V = mean ½·(V(s) − soft target)²`.
    pub fn value_loss(&self, batch: &Batch, noise: &ActionNoise) -> Result<ValueLoss> {
        let targets = self.soft_value_targets(&batch.states, noise);
        let mut tape = Tape::new();
        let v = self.value.bind(&mut tape, true);
        let s = tape.constant(batch.states.clone());
        let out = v.forward(&mut tape, s);
        let t = tape.constant(Matrix::col_vector(&targets));
        let diff = tape.sub(out, t);
        let sq = tape.mul(diff, diff);
        let half = tape.scale(sq, 0.5);
        let loss = tape.mean(half);
        let value = check_finite("J_V", tape.scalar(loss))?;
        let g = tape.backward(loss);
        Ok(ValueLoss {
            loss: value,
            grads: v.grads(&g),
        })
    }

    /// `J_π = mean[α·log π(f(ε; s)|s) − min(Q₁, Q₂)(s, f(ε; s))]`.
    ///
    /// With `features` given, the batch states are re-encoded from their
    /// edge sets so the gradient also reaches the encoder.
    pub fn policy_loss(&self, batch: &Batch, features: Option<&Matrix>, noise: &ActionNoise) -> Result<PolicyLoss> {
        let mut tape = Tape::new();
        let pnet = self.policy.net.bind(&mut tape, true);
        let (s, enc) = match features {
            Some(x) => {
                let sets: Vec<&[Edge]> = batch.edge_sets.iter().map(Vec::as_slice).collect();
                let gb = GraphBatch::stacked(x, &sets)?;
                let enc = self.encoder.bind(&mut tape, true);
                (enc.pooled(&mut tape, &gb), Some(enc))
            }
            None => (tape.constant(batch.states.clone()), None),
        };
        let acts = self.policy.sample_on_tape(&mut tape, &pnet, s, noise);
        let q = self.min_q(&mut tape, s, acts.a1, acts.a2, false);
        let ent = tape.scale(acts.log_prob, self.alpha());
        let per = tape.sub(ent, q);
        let loss = tape.mean(per);
        let value = check_finite("J_pi", tape.scalar(loss))?;
        let g = tape.backward(loss);
        Ok(PolicyLoss {
            loss: value,
            policy_grads: pnet.grads(&g),
            encoder_grads: enc.map(|e| e.grads(&g)).unwrap_or_default(),
            log_probs: tape.value(acts.log_prob).data().to_vec(),
        })
    }

    /// Loss `−mean(log α·(log π + H̄))` and its derivative in `log α`.
    pub fn alpha_loss(&self, log_probs: &[f64]) -> (f64, f64) {
        let target = self.target_entropy();
        let m = log_probs.iter().map(|lp| lp + target).sum::<f64>() / log_probs.len() as f64;
        let log_alpha = self.temperature.log_alpha.data()[0];
        (-log_alpha * m, -m)
    }

    /// One gradient step on `log α`.
    pub fn tune_alpha(&mut self, log_probs: &[f64]) {
        let (_, grad) = self.alpha_loss(log_probs);
        self.opt_alpha
            .step(&mut self.temperature, &[Matrix::filled(1, 1, grad)]);
    }

    /// `ψ̄ ← τ·ψ + (1 − τ)·ψ̄`.
    pub fn soft_update(&mut self) {
        let tau = self.config.soft_target_tau;
        self.value_target.soft_update_from(&self.value, tau);
    }

    /// One update of every network from a single mini-batch: all gradients
    /// are taken at the current parameters, then applied.
    pub fn update(&mut self, batch: &Batch, features: Option<&Matrix>, rng: &mut impl Rng) -> Result<StepStats> {
        let d = self.embed_dim();
        let value_noise = ActionNoise::sample(rng, batch.len(), d);
        let policy_noise = ActionNoise::sample(rng, batch.len(), d);

        let q = self.q_loss(batch)?;
        let v = self.value_loss(batch, &value_noise)?;
        let p = self.policy_loss(batch, features, &policy_noise)?;

        self.opt_value.step(&mut self.value, &v.grads);
        self.opt_q1.step(&mut self.q1, &q.q1_grads);
        self.opt_q2.step(&mut self.q2, &q.q2_grads);
        self.opt_policy.step(&mut self.policy, &p.policy_grads);
        self.soft_update();
        if !p.encoder_grads.is_empty() {
            self.opt_encoder.step(&mut self.encoder, &p.encoder_grads);
        }
        if self.config.auto_entropy {
            self.tune_alpha(&p.log_probs);
        }

        for (name, ok) in [
            ("value network", self.value.all_finite()),
            ("Q networks", self.q1.all_finite() && self.q2.all_finite()),
            ("policy", self.policy.all_finite()),
            ("encoder", self.encoder.all_finite()),
            ("temperature", self.temperature.all_finite()),
        ] {
            if !ok {
                return Err(Error::divergence(format!("non-finite {name} parameters")));
            }
        }
        Ok(StepStats {
            q_loss: q.loss,
            value_loss: v.loss,
            policy_loss: p.loss,
            alpha: self.alpha(),
        })
    }

    /// Samples a mini-batch and calls [`SacAgent::update`]. Fails with
    /// [`Error::NotReady`] while the buffer is too small.
    pub fn train_step(
        &mut self,
        buffer: &ReplayBuffer,
        batch_size: usize,
        features: Option<&Matrix>,
        rng: &mut impl Rng,
    ) -> Result<StepStats> {
        let sample = buffer.sample_batch(batch_size, rng)?;
        let batch = Batch::from_transitions(&sample);
        self.update(&batch, features, rng)
    }
}
