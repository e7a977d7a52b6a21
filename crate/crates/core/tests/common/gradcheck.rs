//! Analytic gradients of every trainable loss against central differences
//! on small networks.

use graphopt::encoder::{Encoder, GraphBatch};
use graphopt::graph::Edge;
use graphopt::irl::{ioc_loss, ImportanceWeights, IocConfig, RewardNet, Trajectory};
use graphopt::nn::{Matrix, Parameters, Tape};
use graphopt::policy::{ActionNoise, Policy};
use graphopt::sac::{Batch, SacAgent, SacConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{numeric_grads, param_count, relative_error};

const H: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct GradCase {
    pub name: &'static str,
    pub params: usize,
    pub rel_error: f64,
    /// Euclidean norm of the numeric gradient, to rule out vacuous passes.
    pub norm: f64,
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(lo..hi)).collect())
}

fn random_edges(rng: &mut ChaCha8Rng, n: usize, p: f64) -> Vec<Edge> {
    let mut out = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.gen_bool(p) {
                out.push((u, v));
            }
        }
    }
    out
}

fn small_agent(seed: u64) -> SacAgent {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let config = SacConfig {
        initial_alpha: 0.7,
        ..SacConfig::default()
    };
    SacAgent::new(3, 2, 6, 1, config, &mut rng)
}

fn small_batch(rng: &mut ChaCha8Rng, rows: usize, d: usize, n: usize) -> Batch {
    Batch {
        states: uniform(rng, rows, d, -1.0, 1.0),
        a1: uniform(rng, rows, d, -0.9, 0.9),
        a2: uniform(rng, rows, d, -0.9, 0.9),
        rewards: (0..rows).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        next_states: uniform(rng, rows, d, -1.0, 1.0),
        edge_sets: (0..rows).map(|_| random_edges(rng, n, 0.5)).collect(),
    }
}

fn trajectories(rng: &mut ChaCha8Rng, count: usize, d: usize) -> Vec<Trajectory> {
    (0..count)
        .map(|_| {
            let len = rng.gen_range(3..7);
            let lp = rng.gen_range(-3.0..0.0);
            Trajectory::generated(uniform(rng, len, d, -1.0, 1.0), lp)
        })
        .collect()
}

fn case(name: &'static str, params: usize, analytic: &[Matrix], numeric: &[Matrix]) -> GradCase {
    GradCase {
        name,
        params,
        rel_error: relative_error(analytic, numeric),
        norm: numeric.iter().flat_map(|m| m.data()).map(|x| x * x).sum::<f64>().sqrt(),
    }
}

pub fn q_loss_cases(seed: u64) -> Vec<GradCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut agent = small_agent(seed);
    let batch = small_batch(&mut rng, 5, 2, 5);
    let analytic = agent.q_loss(&batch).unwrap();
    let n1 = numeric_grads(&mut agent, |a| a.q1.params_mut(), |a| a.q_loss(&batch).unwrap().loss, H);
    let n2 = numeric_grads(&mut agent, |a| a.q2.params_mut(), |a| a.q_loss(&batch).unwrap().loss, H);
    vec![
        case("J_Q wrt Q1", param_count(&agent.q1.params()), &analytic.q1_grads, &n1),
        case("J_Q wrt Q2", param_count(&agent.q2.params()), &analytic.q2_grads, &n2),
    ]
}

pub fn value_loss_case(seed: u64) -> GradCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut agent = small_agent(seed);
    let batch = small_batch(&mut rng, 5, 2, 5);
    let noise = ActionNoise::sample(&mut rng, 5, 2);
    let analytic = agent.value_loss(&batch, &noise).unwrap();
    let numeric = numeric_grads(
        &mut agent,
        |a| a.value.params_mut(),
        |a| a.value_loss(&batch, &noise).unwrap().loss,
        H,
    );
    case("J_V wrt value", param_count(&agent.value.params()), &analytic.grads, &numeric)
}

pub fn policy_loss_cases(seed: u64) -> Vec<GradCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut agent = small_agent(seed);
    let batch = small_batch(&mut rng, 4, 2, 5);
    let noise = ActionNoise::sample(&mut rng, 4, 2);
    let features = uniform(&mut rng, 5, 3, -1.0, 1.0);

    let on_states = agent.policy_loss(&batch, None, &noise).unwrap();
    let n_pol = numeric_grads(
        &mut agent,
        |a| a.policy.params_mut(),
        |a| a.policy_loss(&batch, None, &noise).unwrap().loss,
        H,
    );

    let encoded = agent.policy_loss(&batch, Some(&features), &noise).unwrap();
    let n_enc = numeric_grads(
        &mut agent,
        |a| a.encoder.params_mut(),
        |a| a.policy_loss(&batch, Some(&features), &noise).unwrap().loss,
        H,
    );
    let n_pol_enc = numeric_grads(
        &mut agent,
        |a| a.policy.params_mut(),
        |a| a.policy_loss(&batch, Some(&features), &noise).unwrap().loss,
        H,
    );
    vec![
        case("J_pi wrt policy", param_count(&agent.policy.params()), &on_states.policy_grads, &n_pol),
        case("J_pi wrt encoder", param_count(&agent.encoder.params()), &encoded.encoder_grads, &n_enc),
        case(
            "J_pi wrt policy (re-encoded states)",
            param_count(&agent.policy.params()),
            &encoded.policy_grads,
            &n_pol_enc,
        ),
    ]
}

pub fn encoder_case(seed: u64) -> GradCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut enc = Encoder::new(3, 3, 3, 2, &mut rng);
    let features = uniform(&mut rng, 6, 3, -1.0, 1.0);
    let edges = random_edges(&mut rng, 6, 0.5);
    let weights = uniform(&mut rng, 6, 3, -1.0, 1.0);
    let batch = GraphBatch::single(&features, &edges).unwrap();

    let loss_of = |e: &Encoder| -> f64 {
        let z = e.encode(&features, &edges).unwrap();
        z.data().iter().zip(weights.data()).map(|(a, b)| a * b).sum::<f64>() / z.len() as f64
    };
    let mut tape = Tape::new();
    let bound = enc.bind(&mut tape, true);
    let z = bound.forward(&mut tape, &batch);
    let w = tape.constant(weights.clone());
    let prod = tape.mul(z, w);
    let loss = tape.mean(prod);
    let analytic = bound.grads(&tape.backward(loss));
    let numeric = numeric_grads(&mut enc, |e| e.params_mut(), loss_of, H);
    case("encoder output", param_count(&enc.params()), &analytic, &numeric)
}

pub fn log_prob_case(seed: u64) -> GradCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut policy = Policy::new(3, 5, &mut rng);
    let states = uniform(&mut rng, 4, 3, -1.0, 1.0);
    let noise = ActionNoise::sample(&mut rng, 4, 3);
    let row_noise = |r: usize| ActionNoise {
        eps1: Matrix::row_vector(noise.eps1.row(r)),
        eps2: Matrix::row_vector(noise.eps2.row(r)),
    };
    let loss_of = |p: &Policy| -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        (0..4)
            .map(|r| p.sample_action(states.row(r), Some(&row_noise(r)), &mut rng).unwrap().log_prob)
            .sum::<f64>()
            / 4.0
    };
    let mut tape = Tape::new();
    let net = policy.net.bind(&mut tape, true);
    let s = tape.constant(states.clone());
    let acts = policy.sample_on_tape(&mut tape, &net, s, &noise);
    let loss = tape.mean(acts.log_prob);
    let analytic = net.grads(&tape.backward(loss));
    let numeric = numeric_grads(&mut policy, |p| p.params_mut(), loss_of, H);
    case("policy log-prob", param_count(&policy.params()), &analytic, &numeric)
}

pub fn reward_cases(seed: u64) -> Vec<GradCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reward = RewardNet::new(3, 5, &mut rng);
    let measured: Vec<Trajectory> = trajectories(&mut rng, 3, 3)
        .into_iter()
        .map(|t| Trajectory::measured(t.states))
        .collect();
    let generated = trajectories(&mut rng, 4, 3);
    let m: Vec<&Trajectory> = measured.iter().collect();
    let g: Vec<&Trajectory> = generated.iter().collect();
    [
        ("J_R wrt reward (uniform weights)", ImportanceWeights::Uniform),
        ("J_R wrt reward (likelihood weights)", ImportanceWeights::PolicyLikelihood),
    ]
    .into_iter()
    .map(|(name, weights)| {
        let config = IocConfig {
            l1_coeff: 0.1,
            weights,
        };
        let analytic = ioc_loss(&m, &g, &reward, &config).unwrap();
        let numeric = numeric_grads(
            &mut reward,
            |r| r.params_mut(),
            |r| ioc_loss(&m, &g, r, &config).unwrap().loss,
            H,
        );
        case(name, param_count(&reward.params()), &analytic.grads, &numeric)
    })
    .collect()
}

/// Every case over one seed.
pub fn gradient_suite(seed: u64) -> Vec<GradCase> {
    let mut out = q_loss_cases(seed);
    out.push(value_loss_case(seed));
    out.extend(policy_loss_cases(seed));
    out.push(encoder_case(seed));
    out.push(log_prob_case(seed));
    out.extend(reward_cases(seed));
    out
}
