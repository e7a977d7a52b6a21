//! Latent state reward and its maximum-entropy inverse-optimal-control fit
//! from expert (edge-permutation) and policy-generated trajectories.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::encoder::{Encoder, GraphBatch};
use crate::error::{Error, Result};
use crate::graph::{Edge, Graph};
use crate::nn::{Adam, Matrix, Mlp, Parameters, Tape};

/// Prefix states encoded per forward pass when building expert trajectories.
const PREFIX_CHUNK: usize = 48;

/// `R(s) = tanh(mlp(s))`: a perceptron from the pooled state to a scalar
/// in (−1, 1). The bound keeps returns within the trajectory length once
/// the contrastive objective starts separating the two pools.
#[derive(Clone, Debug, PartialEq)]
pub struct RewardNet {
    pub net: Mlp,
}

impl RewardNet {
    pub fn new<R: Rng + ?Sized>(state_dim: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            net: Mlp::new(&[state_dim, hidden, 1], rng),
        }
    }

    pub fn reward(&self, s: &[f64]) -> f64 {
        self.net.eval(&Matrix::row_vector(s)).data()[0].tanh()
    }

    /// One reward per row of `states`.
    pub fn rewards(&self, states: &Matrix) -> Vec<f64> {
        self.net.eval(states).into_vec().into_iter().map(f64::tanh).collect()
    }
}

impl Parameters for RewardNet {
    fn params(&self) -> Vec<&Matrix> {
        self.net.params()
    }

    fn params_mut(&mut self) -> Vec<&mut Matrix> {
        self.net.params_mut()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrajectorySource {
    Measured,
    Generated,
}

/// Ordered pooled states `s₀ … s_T`, one per row.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub states: Matrix,
    /// Sum of action log-probabilities; generated trajectories only.
    pub policy_log_prob: Option<f64>,
    pub source: TrajectorySource,
}

impl Trajectory {
    pub fn measured(states: Matrix) -> Self {
        Self {
            states,
            policy_log_prob: None,
            source: TrajectorySource::Measured,
        }
    }

    pub fn generated(states: Matrix, policy_log_prob: f64) -> Self {
        Self {
            states,
            policy_log_prob: Some(policy_log_prob),
            source: TrajectorySource::Generated,
        }
    }

    pub fn len(&self) -> usize {
        self.states.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.states.rows() == 0
    }
}

/// `Σ_t R(s_t)`.
pub fn trajectory_return(traj: &Trajectory, reward: &RewardNet) -> f64 {
    reward.rewards(&traj.states).iter().sum()
}

/// Pooled encoder states along an edge ordering: the edgeless state, then
/// the state after each insertion.
pub fn encode_edge_sequence(features: &Matrix, order: &[Edge], encoder: &Encoder) -> Result<Matrix> {
    let mut rows: Vec<Matrix> = Vec::new();
    let prefixes: Vec<usize> = (0..=order.len()).collect();
    for chunk in prefixes.chunks(PREFIX_CHUNK) {
        let sets: Vec<&[Edge]> = chunk.iter().map(|&k| &order[..k]).collect();
        let batch = GraphBatch::stacked(features, &sets)?;
        rows.push(encoder.encode_pooled(&batch)?);
    }
    Ok(Matrix::vstack(&rows.iter().collect::<Vec<_>>()))
}

/// `count` expert trajectories, each adding the observed edges in an
/// independent uniformly random order starting from the empty edge set.
pub fn expert_trajectories<R: Rng + ?Sized>(
    observed: &Graph,
    encoder: &Encoder,
    count: usize,
    rng: &mut R,
) -> Result<Vec<Trajectory>> {
    if observed.edge_count() == 0 {
        return Err(Error::Argument("expert trajectories need at least one edge".into()));
    }
    let features = observed
        .features()
        .ok_or_else(|| Error::Argument("observed graph has no node features".into()))?;
    (0..count)
        .map(|_| {
            let mut order = observed.edges().to_vec();
            order.shuffle(rng);
            encode_edge_sequence(features, &order, encoder).map(Trajectory::measured)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ImportanceWeights {
    /// `z_j = 1`.
    Uniform,
    /// `z_j ∝ exp(−log q(τ_j))`, scaled to average 1 over the batch.
    PolicyLikelihood,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IocConfig {
    pub l1_coeff: f64,
    pub weights: ImportanceWeights,
}

impl Default for IocConfig {
    fn default() -> Self {
        Self {
            l1_coeff: 0.1,
            weights: ImportanceWeights::Uniform,
        }
    }
}

#[derive(Clone, Debug)]
pub struct IocLoss {
    pub loss: f64,
    pub grads: Vec<Matrix>,
    pub mean_measured_return: f64,
    pub mean_generated_return: f64,
}

fn log_weights(generated: &[&Trajectory], mode: ImportanceWeights) -> Result<Vec<f64>> {
    let m = generated.len() as f64;
    match mode {
        ImportanceWeights::Uniform => Ok(vec![0.0; generated.len()]),
        ImportanceWeights::PolicyLikelihood => {
            let neg: Vec<f64> = generated
                .iter()
                .map(|t| {
                    t.policy_log_prob.map(|lp| -lp).ok_or_else(|| {
                        Error::Argument("likelihood weights need generated log-probabilities".into())
                    })
                })
                .collect::<Result<_>>()?;
            let max = neg.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + neg.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            Ok(neg.iter().map(|x| x - lse + m.ln()).collect())
        }
    }
}

/// `J_R = −mean_meas R(τ) + log[mean_gen z_j·exp R(τ_j)] + l1·mean_gen |R(τ_j)|`.
pub fn ioc_loss(
    measured: &[&Trajectory],
    generated: &[&Trajectory],
    reward: &RewardNet,
    config: &IocConfig,
) -> Result<IocLoss> {
    if measured.is_empty() || generated.is_empty() {
        return Err(Error::Argument("IOC loss needs measured and generated trajectories".into()));
    }
    let stack = |ts: &[&Trajectory]| {
        let mats: Vec<&Matrix> = ts.iter().map(|t| &t.states).collect();
        let mut offsets = vec![0];
        for t in ts {
            offsets.push(offsets.last().unwrap() + t.len());
        }
        (Matrix::vstack(&mats), offsets)
    };
    let (meas_states, meas_off) = stack(measured);
    let (gen_states, gen_off) = stack(generated);
    let m = generated.len() as f64;
    let offsets = log_weights(generated, config.weights)?;

    let mut tape = Tape::new();
    let net = reward.net.bind(&mut tape, true);
    let ms = tape.constant(meas_states);
    let gs = tape.constant(gen_states);
    let mr = net.forward(&mut tape, ms);
    let mr = tape.tanh(mr);
    let gr = net.forward(&mut tape, gs);
    let gr = tape.tanh(gr);
    let meas_returns = tape.segment_reduce(mr, &meas_off, false);
    let gen_returns = tape.segment_reduce(gr, &gen_off, false);

    let meas_mean = tape.mean(meas_returns);
    let lse = tape.log_sum_exp(gen_returns, &offsets);
    if !tape.scalar(lse).is_finite() {
        return Err(Error::Numerical("log-sum-exp over generated returns is not finite".into()));
    }
    let log_mean = tape.offset(lse, -m.ln());
    let abs = tape.abs(gen_returns);
    let l1_mean = tape.mean(abs);
    let l1 = tape.scale(l1_mean, config.l1_coeff);
    let contrast = tape.sub(log_mean, meas_mean);
    let loss = tape.add(contrast, l1);

    let value = tape.scalar(loss);
    if !value.is_finite() {
        return Err(Error::divergence(format!("J_R is {value}")));
    }
    let g = tape.backward(loss);
    Ok(IocLoss {
        loss: value,
        grads: net.grads(&g),
        mean_measured_return: tape.scalar(meas_mean),
        mean_generated_return: tape.value(gen_returns).sum() / m,
    })
}

/// Reward network plus its optimizer and sampling sizes.
#[derive(Clone, Debug)]
pub struct RewardLearner {
    pub reward: RewardNet,
    pub config: IocConfig,
    pub meas_samples: usize,
    pub gen_samples: usize,
    opt: Adam,
}

impl RewardLearner {
    pub fn new(reward: RewardNet, config: IocConfig, reward_lr: f64, meas_samples: usize, gen_samples: usize) -> Self {
        Self {
            reward,
            config,
            meas_samples,
            gen_samples,
            opt: Adam::new(reward_lr),
        }
    }

    /// `iterations` gradient steps, each on `meas_samples` measured and
    /// `gen_samples` generated trajectories drawn with replacement. Returns
    /// the last loss, or `None` when `iterations` is zero.
    pub fn update<R: Rng + ?Sized>(
        &mut self,
        measured_pool: &[Trajectory],
        generated_pool: &[Trajectory],
        iterations: usize,
        rng: &mut R,
    ) -> Result<Option<f64>> {
        if measured_pool.is_empty() || generated_pool.is_empty() {
            return Err(Error::Argument("reward update needs nonempty pools".into()));
        }
        let mut last = None;
        for _ in 0..iterations {
            let meas: Vec<&Trajectory> = (0..self.meas_samples)
                .map(|_| &measured_pool[rng.gen_range(0..measured_pool.len())])
                .collect();
            let generated: Vec<&Trajectory> = (0..self.gen_samples)
                .map(|_| &generated_pool[rng.gen_range(0..generated_pool.len())])
                .collect();
            let l = ioc_loss(&meas, &generated, &self.reward, &self.config)?;
            self.opt.step(&mut self.reward, &l.grads);
            if !self.reward.all_finite() {
                return Err(Error::divergence("non-finite reward parameters"));
            }
            last = Some(l.loss);
        }
        Ok(last)
    }
}

const TRAJECTORY_MAGIC: &[u8; 4] = b"GOTJ";

/// Binary pool: magic, `u32` state width, then per trajectory a `u32` state
/// count followed by the states as little-endian `f32`, row-major.
pub fn write_trajectories(path: &Path, trajectories: &[Trajectory]) -> Result<()> {
    let io = |e| Error::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    let d = trajectories.first().map_or(0, |t| t.states.cols());
    w.write_all(TRAJECTORY_MAGIC).map_err(io)?;
    w.write_all(&(d as u32).to_le_bytes()).map_err(io)?;
    for t in trajectories {
        if t.states.cols() != d {
            return Err(Error::Argument("trajectories differ in state width".into()));
        }
        w.write_all(&(t.len() as u32).to_le_bytes()).map_err(io)?;
        for &x in t.states.data() {
            w.write_all(&(x as f32).to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

pub fn read_trajectories(path: &Path, source: TrajectorySource) -> Result<Vec<Trajectory>> {
    let io = |e| Error::io(path, e);
    let mut bytes = Vec::new();
    BufReader::new(File::open(path).map_err(io)?)
        .read_to_end(&mut bytes)
        .map_err(io)?;
    let corrupt = |m: &str| Error::Integrity {
        array: path.display().to_string(),
        message: m.to_string(),
    };
    if bytes.len() < 8 || &bytes[..4] != TRAJECTORY_MAGIC {
        return Err(corrupt("missing trajectory header"));
    }
    let u32_at = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
    let d = u32_at(4);
    let mut pos = 8;
    let mut out = Vec::new();
    while pos < bytes.len() {
        if pos + 4 > bytes.len() {
            return Err(corrupt("truncated length field"));
        }
        let len = u32_at(pos);
        pos += 4;
        let need = len * d * 4;
        if pos + need > bytes.len() {
            return Err(corrupt("truncated state block"));
        }
        let data = bytes[pos..pos + need]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        pos += need;
        out.push(Trajectory {
            states: Matrix::from_vec(len, d, data),
            policy_log_prob: None,
            source,
        });
    }
    Ok(out)
}
