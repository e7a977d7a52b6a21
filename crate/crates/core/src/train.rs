//! The outer loop: environment interaction, actor-critic updates and
//! epoch-boundary reward fitting, plus run-directory bookkeeping.

use std::collections::VecDeque;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{Checkpoint, MANIFEST};
use crate::config::TrainConfig;
use crate::datasets::default_features;
use crate::eval::{
    binary_metrics, construction_eval, linkpred_split, score_edges, EvalReport, GenerationConfig, LearnedPolicy,
    ScoreMode,
};
use crate::env::{GraphEnv, ReplayBuffer};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::irl::{expert_trajectories, RewardLearner, RewardNet, Trajectory};
use crate::nn::Matrix;
use crate::policy::select_nodes;
use crate::sac::{Batch, SacAgent};

pub const METRICS_HEADER: &str = "epoch\tstep\tJ_Q\tJ_V\tJ_pi\tJ_R\talpha\tepisode_len\tnum_edges";

/// One row of `metrics.tsv`. Loss columns average the updates of the
/// epoch and are `None` when nothing was updated.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub step: usize,
    pub q_loss: Option<f64>,
    pub value_loss: Option<f64>,
    pub policy_loss: Option<f64>,
    pub reward_loss: Option<f64>,
    pub alpha: f64,
    /// Mean length of the episodes that ended this epoch, counting the
    /// unfinished one at the epoch boundary.
    pub episode_len: f64,
    pub num_edges: usize,
}

impl EpochRecord {
    pub fn tsv_row(&self) -> String {
        let f = |x: Option<f64>| x.map_or_else(|| "nan".to_string(), |v| format!("{v:.6}"));
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{:.6}\t{:.2}\t{}",
            self.epoch,
            self.step,
            f(self.q_loss),
            f(self.value_loss),
            f(self.policy_loss),
            f(self.reward_loss),
            self.alpha,
            self.episode_len,
            self.num_edges
        )
    }
}

#[derive(Default)]
struct Mean {
    sum: f64,
    n: usize,
}

impl Mean {
    fn push(&mut self, x: f64) {
        self.sum += x;
        self.n += 1;
    }

    fn get(&self) -> Option<f64> {
        (self.n > 0).then(|| self.sum / self.n as f64)
    }
}

/// Mutable training state for one observed graph.
pub struct Trainer {
    pub config: TrainConfig,
    pub observed: Graph,
    pub agent: SacAgent,
    pub reward: RewardLearner,
    /// Skip every reward update (transfer with a fixed reward).
    pub freeze_reward: bool,
    pub epochs_done: usize,
    buffer: ReplayBuffer,
    gen_pool: VecDeque<Trajectory>,
    /// Episodes stored since the last reward update.
    fresh_episodes: usize,
    rng: ChaCha8Rng,
    total_steps: usize,
}

impl Trainer {
    pub fn new(config: TrainConfig, observed: Graph) -> Result<Self> {
        let config = config.validated()?;
        let features = observed
            .features()
            .ok_or_else(|| Error::Argument("observed graph has no node features".into()))?;
        if observed.edge_count() == 0 {
            return Err(Error::Argument("observed graph has no edges".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let agent = SacAgent::new(
            features.cols(),
            config.n_embed_size,
            config.net_size,
            config.prop_rounds,
            config.sac_config(),
            &mut rng,
        );
        let reward_net = RewardNet::new(config.n_embed_size, config.net_size, &mut rng);
        let reward = RewardLearner::new(
            reward_net,
            config.ioc_config(),
            config.reward_lr,
            config.meas_samples,
            config.gen_samples,
        );
        Ok(Self {
            buffer: ReplayBuffer::new(config.replay_buffer_size),
            gen_pool: VecDeque::with_capacity(config.gen_from_policy),
            fresh_episodes: 0,
            config,
            observed,
            agent,
            reward,
            freeze_reward: false,
            epochs_done: 0,
            rng,
            total_steps: 0,
        })
    }

    /// Replaces the reward with `reward` and never updates it.
    pub fn with_frozen_reward(mut self, reward: RewardNet) -> Result<Self> {
        if reward.net.inputs() != self.config.n_embed_size {
            return Err(Error::Argument(format!(
                "reward expects {}-dimensional states, config has n_embed_size = {}",
                reward.net.inputs(),
                self.config.n_embed_size
            )));
        }
        self.reward.reward = reward;
        self.freeze_reward = true;
        Ok(self)
    }

    pub fn generated_pool(&self) -> impl Iterator<Item = &Trajectory> {
        self.gen_pool.iter()
    }

    fn store_generated(&mut self, states: Vec<Vec<f64>>, log_prob: f64) {
        if states.len() < 2 {
            return;
        }
        if self.gen_pool.len() == self.config.gen_from_policy {
            self.gen_pool.pop_front();
        }
        self.gen_pool
            .push_back(Trajectory::generated(Matrix::from_rows(&states), log_prob));
        self.fresh_episodes += 1;
    }

    /// One epoch of interaction and learning. `trace` receives
    /// `epoch<TAB>step<TAB>v1<TAB>v2<TAB>event` for every environment step.
    pub fn run_epoch(&mut self, trace: &mut dyn FnMut(&str)) -> Result<EpochRecord> {
        let epoch = self.epochs_done;
        let cfg = self.config.clone();
        let mut env = GraphEnv::new(cfg.env_config(), &self.observed.without_edges(), &self.agent.encoder)?;
        let mut states = vec![env.state().pooled.clone()];
        let mut log_prob = 0.0;
        let (mut q, mut v, mut p) = (Mean::default(), Mean::default(), Mean::default());
        let mut lengths = Mean::default();
        let mut edges_at_end = 0;

        for _ in 0..cfg.num_steps_per_epoch {
            let action = self
                .agent
                .policy
                .sample_action(&env.state().pooled, None, &mut self.rng)?;
            let (v1, v2) = select_nodes(&action, &env.state().z);
            let reward = &self.reward.reward;
            let out = env.step(v1, v2, &self.agent.encoder, &|s| reward.reward(s))?;
            trace(&format!("{epoch}\t{}", out.trace_line()));
            states.push(out.s_next.clone());
            log_prob += action.log_prob;
            let terminal = out.terminal;
            self.buffer.push(out.into_transition(action));
            self.total_steps += 1;

            if self.total_steps > cfg.num_steps_before_training_online
                && self.total_steps.is_multiple_of(cfg.train_every)
                && self.buffer.len() >= cfg.batch_size
            {
                let sample = self.buffer.sample_batch(cfg.batch_size, &mut self.rng)?;
                let mut batch = Batch::from_transitions(&sample);
                // Stored rewards predate later reward updates; relabel with
                // the current reward network.
                batch.rewards = self.reward.reward.rewards(&batch.next_states);
                let features = env.features().clone();
                let stats = self.agent.update(&batch, Some(&features), &mut self.rng)?;
                q.push(stats.q_loss);
                v.push(stats.value_loss);
                p.push(stats.policy_loss);
                env.refresh_embeddings(&self.agent.encoder)?;
            }

            if terminal {
                lengths.push((states.len() - 1) as f64);
                edges_at_end = env.state().graph.edge_count();
                let done = std::mem::take(&mut states);
                self.store_generated(done, log_prob);
                env.reset(&self.agent.encoder)?;
                states.push(env.state().pooled.clone());
                log_prob = 0.0;
            }
        }
        if states.len() > 1 {
            lengths.push((states.len() - 1) as f64);
            edges_at_end = env.state().graph.edge_count();
            self.store_generated(states, log_prob);
        }

        let mut reward_loss = None;
        if !self.freeze_reward && cfg.reward_iter > 0 && self.fresh_episodes >= cfg.irl_episode_per_train {
            self.fresh_episodes = 0;
            let measured = expert_trajectories(&self.observed, &self.agent.encoder, cfg.meas_samples, &mut self.rng)?;
            let pool: Vec<Trajectory> = self.gen_pool.iter().cloned().collect();
            reward_loss = self.reward.update(&measured, &pool, cfg.reward_iter, &mut self.rng)?;
        }

        self.epochs_done += 1;
        Ok(EpochRecord {
            epoch,
            step: self.total_steps,
            q_loss: q.get(),
            value_loss: v.get(),
            policy_loss: p.get(),
            reward_loss,
            alpha: self.agent.alpha(),
            episode_len: lengths.get().unwrap_or(0.0),
            num_edges: edges_at_end,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut cp = Checkpoint::new(self.epochs_done, self.config.hash());
        let features = self.observed.features().expect("checked at construction");
        cp.meta.insert("feature_dim".into(), features.cols().to_string());
        cp.meta.insert("reference_edges".into(), self.observed.edge_count().to_string());
        cp.meta.insert("reward_frozen".into(), self.freeze_reward.to_string());
        save_models(&mut cp, &self.agent, &self.reward.reward);
        cp
    }
}

fn save_models(cp: &mut Checkpoint, agent: &SacAgent, reward: &RewardNet) {
    cp.insert_params("encoder", &agent.encoder);
    cp.insert_params("policy", &agent.policy);
    cp.insert_params("q1", &agent.q1);
    cp.insert_params("q2", &agent.q2);
    cp.insert_params("value", &agent.value);
    cp.insert_params("value_target", &agent.value_target);
    cp.insert_params("log_alpha", &agent.temperature);
    cp.insert_params("reward", reward);
}

/// Trained networks rebuilt from a checkpoint.
pub struct Models {
    pub agent: SacAgent,
    pub reward: RewardNet,
    pub reference_edges: usize,
}

/// Rebuilds every network with `config`'s sizes and loads `cp` into it.
/// A differing config hash is only reported.
pub fn restore_models(cp: &Checkpoint, config: &TrainConfig) -> Result<Models> {
    if cp.config_hash != config.hash() {
        log::warn!("checkpoint was written under a different config (hash {})", cp.config_hash);
    }
    let feature_dim = cp.meta_usize("feature_dim")?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut agent = SacAgent::new(
        feature_dim,
        config.n_embed_size,
        config.net_size,
        config.prop_rounds,
        config.sac_config(),
        &mut rng,
    );
    let mut reward = RewardNet::new(config.n_embed_size, config.net_size, &mut rng);
    cp.restore_params("encoder", &mut agent.encoder)?;
    cp.restore_params("policy", &mut agent.policy)?;
    cp.restore_params("q1", &mut agent.q1)?;
    cp.restore_params("q2", &mut agent.q2)?;
    cp.restore_params("value", &mut agent.value)?;
    cp.restore_params("value_target", &mut agent.value_target)?;
    cp.restore_params("log_alpha", &mut agent.temperature)?;
    cp.restore_params("reward", &mut reward)?;
    Ok(Models {
        agent,
        reward,
        reference_edges: cp.meta_usize("reference_edges")?,
    })
}

/// Only the reward network of a checkpoint.
pub fn restore_reward(dir: &Path, config: &TrainConfig) -> Result<RewardNet> {
    let cp = Checkpoint::load_subset(dir, "reward.")?;
    if cp.arrays.is_empty() {
        return Err(Error::Argument(format!("{} holds no reward parameters", dir.display())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut reward = RewardNet::new(config.n_embed_size, config.net_size, &mut rng);
    cp.restore_params("reward", &mut reward)?;
    Ok(reward)
}

/// Paths inside a run directory.
#[derive(Clone, Debug)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.txt")
    }

    pub fn metrics(&self) -> PathBuf {
        self.root.join("metrics.tsv")
    }

    pub fn trace(&self) -> PathBuf {
        self.root.join("trace.tsv")
    }

    pub fn checkpoints(&self) -> PathBuf {
        self.root.join("checkpoints")
    }

    pub fn checkpoint(&self, epoch: usize) -> PathBuf {
        self.checkpoints().join(format!("epoch_{epoch:06}"))
    }

    /// The newest checkpoint directory, by epoch.
    pub fn latest_checkpoint(&self) -> Result<PathBuf> {
        let dir = self.checkpoints();
        let mut names: Vec<String> = std::fs::read_dir(&dir)
            .map_err(|e| Error::io(&dir, e))?
            .filter_map(|e| e.ok())
            .filter_map(|e| e.file_name().into_string().ok())
            .filter(|n| n.starts_with("epoch_"))
            .collect();
        names.sort();
        names
            .pop()
            .map(|n| dir.join(n))
            .ok_or_else(|| Error::Argument(format!("no checkpoints under {}", dir.display())))
    }
}

/// Accepts either a checkpoint directory or a run directory.
pub fn resolve_checkpoint(path: &Path) -> Result<PathBuf> {
    if path.join(MANIFEST).is_file() {
        return Ok(path.to_path_buf());
    }
    RunDir::new(path).latest_checkpoint()
}

/// Loads the configured dataset and trains on it.
pub fn run_train(config: &TrainConfig, run_dir: &Path) -> Result<Trainer> {
    let observed = config.dataset()?.load()?;
    let trainer = Trainer::new(config.clone(), observed)?;
    run_trainer(trainer, run_dir)
}

/// Runs every epoch of `trainer`, writing the frozen config, metrics,
/// edge-event trace and checkpoints under `run_dir`.
pub fn run_trainer(mut trainer: Trainer, run_dir: &Path) -> Result<Trainer> {
    let dir = RunDir::new(run_dir);
    std::fs::create_dir_all(dir.checkpoints()).map_err(|e| Error::io(dir.checkpoints(), e))?;
    std::fs::write(dir.config(), trainer.config.to_text()).map_err(|e| Error::io(dir.config(), e))?;
    let open = |p: PathBuf| File::create(&p).map(BufWriter::new).map_err(|e| Error::io(&p, e));
    let mut metrics = open(dir.metrics())?;
    let mut trace = open(dir.trace())?;
    writeln!(metrics, "{METRICS_HEADER}").map_err(|e| Error::io(dir.metrics(), e))?;
    writeln!(trace, "epoch\tstep\tv1\tv2\tevent").map_err(|e| Error::io(dir.trace(), e))?;

    let mut last_good = dir.checkpoint(trainer.epochs_done);
    trainer.checkpoint().save(&last_good)?;
    let epochs = trainer.config.num_epochs;
    let every = trainer.config.checkpoint_every;
    for _ in 0..epochs {
        let mut io_err = None;
        let result = trainer.run_epoch(&mut |line| {
            if io_err.is_none() {
                io_err = writeln!(trace, "{line}").err();
            }
        });
        if let Some(e) = io_err {
            return Err(Error::io(dir.trace(), e));
        }
        let record = match result {
            Ok(r) => r,
            Err(Error::Divergence { what, .. }) => {
                return Err(Error::Divergence {
                    what,
                    last_good: Some(last_good),
                })
            }
            Err(e) => return Err(e),
        };
        writeln!(metrics, "{}", record.tsv_row()).map_err(|e| Error::io(dir.metrics(), e))?;
        metrics.flush().map_err(|e| Error::io(dir.metrics(), e))?;
        log::info!("{}", record.tsv_row());
        if trainer.epochs_done.is_multiple_of(every) || trainer.epochs_done == epochs {
            last_good = dir.checkpoint(trainer.epochs_done);
            trainer.checkpoint().save(&last_good)?;
        }
    }
    metrics.flush().map_err(|e| Error::io(dir.metrics(), e))?;
    trace.flush().map_err(|e| Error::io(dir.trace(), e))?;
    Ok(trainer)
}

/// Mean of the learned reward over each trajectory, for diagnostics.
pub fn mean_returns(trajectories: &[Trajectory], reward: &RewardNet) -> f64 {
    let total: f64 = trajectories
        .iter()
        .map(|t| crate::irl::trajectory_return(t, reward))
        .sum();
    total / trajectories.len().max(1) as f64
}

/// Generation settings for rollouts against `reference_edges` edges.
pub fn generation_config(config: &TrainConfig, reference_edges: usize) -> GenerationConfig {
    GenerationConfig {
        env: config.eval_env_config(),
        edge_budget_multiple: config.edge_budget_multiple,
        reference_edges,
    }
}

/// Construction statistics of graphs sampled from a trained agent.
pub fn evaluate_agent(agent: &SacAgent, observed: &Graph, config: &TrainConfig, seed: u64) -> Result<EvalReport> {
    let mut policy = LearnedPolicy {
        policy: &agent.policy,
        deterministic: config.eval_deterministic,
    };
    let gen = generation_config(config, observed.edge_count());
    construction_eval(observed, &mut policy, &agent.encoder, &gen, config.eval_samples, seed)
}

/// Both arms of the reward-transfer protocol on one target graph.
#[derive(Clone, Debug)]
pub struct TransferReport {
    /// Fresh agent trained on the target against the frozen source reward.
    pub reward: EvalReport,
    /// Source agent deployed on the target without further learning.
    pub direct: EvalReport,
}

/// Freezes the reward of the checkpoint at `source`, trains a fresh agent
/// on `target` under `config` and compares it with the source agent used
/// as is. Training artifacts go to `run_dir`.
pub fn transfer_train(source: &Path, target: Graph, config: &TrainConfig, run_dir: &Path) -> Result<TransferReport> {
    let cp_dir = resolve_checkpoint(source)?;
    let reward = restore_reward(&cp_dir, config)?;
    let source_models = restore_models(&Checkpoint::load(&cp_dir)?, config)?;
    let trainer = Trainer::new(config.clone(), target.clone())?.with_frozen_reward(reward)?;
    let trainer = run_trainer(trainer, run_dir)?;
    Ok(TransferReport {
        reward: evaluate_agent(&trainer.agent, &target, config, config.seed)?,
        direct: evaluate_agent(&source_models.agent, &target, config, config.seed)?,
    })
}

/// AUC and AP of one scoring mode.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinkPredScore {
    pub mode: ScoreMode,
    pub auc: f64,
    pub ap: f64,
}

/// Holds out `test_frac` of `graph`'s edges, trains on the rest and scores
/// the held-out edges against sampled non-edges in both modes. Default
/// features are recomputed on the train graph so held-out edges do not
/// leak through degrees.
pub fn run_linkpred(graph: &Graph, test_frac: f64, config: &TrainConfig, run_dir: &Path) -> Result<Vec<LinkPredScore>> {
    let mut split = linkpred_split(graph, test_frac, config.seed)?;
    if config.features.is_none() {
        let x = default_features(&split.train_graph, config.seed);
        split.train_graph.set_features(x)?;
    }
    let trainer = run_trainer(Trainer::new(config.clone(), split.train_graph.clone())?, run_dir)?;
    let (_, labels) = split.candidates();
    let gen = generation_config(config, split.positives.len());
    let mut out = Vec::new();
    for mode in [ScoreMode::Policy, ScoreMode::Embed] {
        let mut policy = LearnedPolicy {
            policy: &trainer.agent.policy,
            deterministic: config.eval_deterministic,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let scores = score_edges(&split, mode, &mut policy, &trainer.agent.encoder, &gen, &mut rng)?;
        let (auc, ap) = binary_metrics(&scores, &labels)?;
        out.push(LinkPredScore { mode, auc, ap });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            graph: "ba:12:2".into(),
            num_epochs: 3,
            num_steps_per_epoch: 30,
            num_steps_before_training_online: 5,
            batch_size: 8,
            n_embed_size: 3,
            net_size: 8,
            reward_iter: 2,
            irl_episode_per_train: 1,
            checkpoint_every: 2,
            term_threshold: 2,
            ..TrainConfig::desk()
        }
    }

    #[test]
    fn zero_epochs_writes_initial_checkpoint_only() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = TrainConfig {
            num_epochs: 0,
            ..tiny_config()
        };
        run_train(&cfg, dir.path()).unwrap();
        let rd = RunDir::new(dir.path());
        let entries: Vec<_> = std::fs::read_dir(rd.checkpoints()).unwrap().collect();
        assert_eq!(entries.len(), 1);
        assert_eq!(rd.latest_checkpoint().unwrap(), rd.checkpoint(0));
        let metrics = std::fs::read_to_string(rd.metrics()).unwrap();
        assert_eq!(metrics.lines().count(), 1);
    }

    #[test]
    fn short_run_logs_and_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config();
        let trainer = run_train(&cfg, dir.path()).unwrap();
        let rd = RunDir::new(dir.path());
        let metrics = std::fs::read_to_string(rd.metrics()).unwrap();
        assert_eq!(metrics.lines().next().unwrap(), METRICS_HEADER);
        assert_eq!(metrics.lines().count(), 4);
        let trace = std::fs::read_to_string(rd.trace()).unwrap();
        assert_eq!(trace.lines().count(), 1 + 3 * 30);
        assert_eq!(rd.latest_checkpoint().unwrap(), rd.checkpoint(3));
        assert!(rd.checkpoint(2).join(MANIFEST).is_file());

        let frozen = TrainConfig::default().apply_text(&std::fs::read_to_string(rd.config()).unwrap()).unwrap();
        assert_eq!(frozen, cfg);
        let cp = Checkpoint::load(&rd.checkpoint(3)).unwrap();
        assert_eq!(cp.config_hash, cfg.hash());
        let models = restore_models(&cp, &cfg).unwrap();
        assert_eq!(models.agent.policy, trainer.agent.policy);
        assert_eq!(models.agent.encoder, trainer.agent.encoder);
        assert_eq!(models.reward, trainer.reward.reward);
        assert_eq!(restore_reward(&rd.checkpoint(3), &cfg).unwrap(), trainer.reward.reward);
    }

    #[test]
    fn frozen_reward_never_changes() {
        let cfg = tiny_config();
        let observed = cfg.dataset().unwrap().load().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let fixed = RewardNet::new(cfg.n_embed_size, cfg.net_size, &mut rng);
        let mut t = Trainer::new(cfg, observed).unwrap().with_frozen_reward(fixed.clone()).unwrap();
        for _ in 0..2 {
            let r = t.run_epoch(&mut |_| {}).unwrap();
            assert_eq!(r.reward_loss, None);
        }
        assert_eq!(t.reward.reward, fixed);
    }
}
