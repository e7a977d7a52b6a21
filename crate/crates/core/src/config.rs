//! Run configuration as flat `key = value` text.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::datasets::{DatasetSpec, GraphSource};
use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::irl::{ImportanceWeights, IocConfig};
use crate::sac::SacConfig;

/// Environment variable naming a config file to use instead of the one
/// given on the command line.
pub const CONFIG_ENV_VAR: &str = "GRAPHOPT_CONFIG";

/// Seed under which `ba:100:4` has 168 triangles, average clustering 0.144,
/// assortativity −0.096 and maximum degree 33.
pub const BA_FIXTURE_SEED: u64 = 2041;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub num_epochs: usize,
    pub num_steps_per_epoch: usize,
    pub num_steps_per_eval: usize,
    pub num_steps_before_training_online: usize,
    pub replay_buffer_size: usize,
    pub batch_size: usize,
    pub max_path_length: usize,
    pub discount: f64,
    pub reward_iter: usize,
    pub irl_episode_per_train: usize,
    pub meas_samples: usize,
    pub gen_samples: usize,
    pub prop_rounds: usize,
    pub reward_lr: f64,
    pub soft_target_tau: f64,
    pub policy_lr: f64,
    pub qf_lr: f64,
    pub train_with_reparameterization: bool,
    pub eval_deterministic: bool,
    pub auto_entropy: bool,
    pub gen_from_policy: usize,
    pub term_threshold: u32,
    pub l1_coeff: f64,
    pub n_embed_size: usize,
    pub net_size: usize,

    /// `ba:N:M`, `er:N:P` or an edge-list path.
    pub graph: String,
    pub features: Option<PathBuf>,
    pub one_indexed: bool,
    pub num_nodes: Option<usize>,
    /// Seed for synthetic graphs and default features; `seed` when unset.
    pub graph_seed: Option<u64>,
    pub seed: u64,
    pub value_lr: f64,
    pub encoder_lr: f64,
    pub alpha_lr: f64,
    pub initial_alpha: f64,
    pub target_entropy: Option<f64>,
    pub importance_weights: ImportanceWeights,
    /// Environment steps per gradient step once training is online.
    pub train_every: usize,
    pub edge_budget_multiple: f64,
    pub eval_samples: usize,
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    /// Paper-scale defaults.
    fn default() -> Self {
        Self {
            num_epochs: 10000,
            num_steps_per_epoch: 500,
            num_steps_per_eval: 1000,
            num_steps_before_training_online: 25,
            replay_buffer_size: 100_000,
            batch_size: 128,
            max_path_length: 1000,
            discount: 0.99,
            reward_iter: 30,
            irl_episode_per_train: 10,
            meas_samples: 5,
            gen_samples: 10,
            prop_rounds: 2,
            reward_lr: 0.01,
            soft_target_tau: 0.001,
            policy_lr: 1e-4,
            qf_lr: 1e-3,
            train_with_reparameterization: true,
            eval_deterministic: false,
            auto_entropy: true,
            gen_from_policy: 10,
            term_threshold: 100,
            l1_coeff: 0.1,
            n_embed_size: 32,
            net_size: 256,

            graph: "ba:100:4".into(),
            features: None,
            one_indexed: false,
            num_nodes: None,
            graph_seed: None,
            seed: 0,
            value_lr: 1e-3,
            encoder_lr: 1e-4,
            alpha_lr: 1e-4,
            initial_alpha: 1.0,
            target_entropy: None,
            importance_weights: ImportanceWeights::Uniform,
            train_every: 1,
            edge_budget_multiple: 2.0,
            eval_samples: 3,
            checkpoint_every: 1000,
        }
    }
}

macro_rules! fields {
    ($m:ident) => {
        $m!(num_epochs);
        $m!(num_steps_per_epoch);
        $m!(num_steps_per_eval);
        $m!(num_steps_before_training_online);
        $m!(replay_buffer_size);
        $m!(batch_size);
        $m!(max_path_length);
        $m!(discount);
        $m!(reward_iter);
        $m!(irl_episode_per_train);
        $m!(meas_samples);
        $m!(gen_samples);
        $m!(prop_rounds);
        $m!(reward_lr);
        $m!(soft_target_tau);
        $m!(policy_lr);
        $m!(qf_lr);
        $m!(train_with_reparameterization);
        $m!(eval_deterministic);
        $m!(auto_entropy);
        $m!(gen_from_policy);
        $m!(term_threshold);
        $m!(l1_coeff);
        $m!(n_embed_size);
        $m!(net_size);
        $m!(graph);
        $m!(features);
        $m!(one_indexed);
        $m!(num_nodes);
        $m!(graph_seed);
        $m!(seed);
        $m!(value_lr);
        $m!(encoder_lr);
        $m!(alpha_lr);
        $m!(initial_alpha);
        $m!(target_entropy);
        $m!(importance_weights);
        $m!(train_every);
        $m!(edge_budget_multiple);
        $m!(eval_samples);
        $m!(checkpoint_every);
    };
}

/// Spellings accepted for a few keys besides the canonical ones.
const ALIASES: [(&str, &str); 3] = [
    ("train_policy_with_reprarameterization", "train_with_reparameterization"),
    ("use_automatic_entropy_tuning", "auto_entropy"),
    ("k_repeat", "term_threshold"),
];

fn parse_value<T: std::str::FromStr>(key: &str, value: &str, line: usize) -> Result<T> {
    value.parse().map_err(|_| Error::Parse {
        line,
        message: format!("bad value {value:?} for {key}"),
    })
}

fn parse_bool(key: &str, value: &str, line: usize) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Parse {
            line,
            message: format!("bad boolean {value:?} for {key}"),
        }),
    }
}

trait ConfigValue: Sized {
    fn parse_cfg(key: &str, value: &str, line: usize) -> Result<Self>;
    fn show(&self) -> String;
}

macro_rules! plain_value {
    ($($t:ty),*) => {$(
        impl ConfigValue for $t {
            fn parse_cfg(key: &str, value: &str, line: usize) -> Result<Self> {
                parse_value(key, value, line)
            }
            fn show(&self) -> String {
                self.to_string()
            }
        }
    )*};
}
plain_value!(usize, u32, u64, f64, String);

impl ConfigValue for bool {
    fn parse_cfg(key: &str, value: &str, line: usize) -> Result<Self> {
        parse_bool(key, value, line)
    }
    fn show(&self) -> String {
        self.to_string()
    }
}

impl<T: ConfigValue> ConfigValue for Option<T> {
    fn parse_cfg(key: &str, value: &str, line: usize) -> Result<Self> {
        if value == "none" {
            Ok(None)
        } else {
            T::parse_cfg(key, value, line).map(Some)
        }
    }
    fn show(&self) -> String {
        self.as_ref().map_or_else(|| "none".to_string(), T::show)
    }
}

impl ConfigValue for PathBuf {
    fn parse_cfg(_key: &str, value: &str, _line: usize) -> Result<Self> {
        Ok(PathBuf::from(value))
    }
    fn show(&self) -> String {
        self.display().to_string()
    }
}

impl ConfigValue for ImportanceWeights {
    fn parse_cfg(key: &str, value: &str, line: usize) -> Result<Self> {
        match value {
            "uniform" => Ok(ImportanceWeights::Uniform),
            "policy" => Ok(ImportanceWeights::PolicyLikelihood),
            _ => Err(Error::Parse {
                line,
                message: format!("{key} must be uniform or policy, got {value:?}"),
            }),
        }
    }
    fn show(&self) -> String {
        match self {
            ImportanceWeights::Uniform => "uniform".into(),
            ImportanceWeights::PolicyLikelihood => "policy".into(),
        }
    }
}

impl TrainConfig {
    /// Small graphs and short runs that finish in minutes on one core.
    pub fn desk() -> Self {
        Self {
            graph: "ba:100:4".into(),
            graph_seed: Some(BA_FIXTURE_SEED),
            num_epochs: 500,
            num_steps_per_epoch: 400,
            num_steps_per_eval: 400,
            num_steps_before_training_online: 25,
            replay_buffer_size: 100_000,
            batch_size: 32,
            max_path_length: 1000,
            term_threshold: 2,
            n_embed_size: 16,
            net_size: 32,
            train_every: 4,
            // The policy gradient drives the encoder into tanh saturation
            // within a few thousand steps at the default rate.
            encoder_lr: 1e-6,
            checkpoint_every: 100,
            ..Self::default()
        }
    }

    /// Applies `key = value` lines on top of `self`. Blank lines and `#`
    /// comments are ignored; unknown keys are errors.
    pub fn apply_text(mut self, text: &str) -> Result<Self> {
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| Error::Parse {
                line,
                message: format!("expected key = value, got {content:?}"),
            })?;
            self.set(key.trim(), value.trim(), line)?;
        }
        Ok(self)
    }

    pub fn set(&mut self, key: &str, value: &str, line: usize) -> Result<()> {
        let key = ALIASES.iter().find(|(a, _)| *a == key).map_or(key, |(_, k)| k);
        macro_rules! assign {
            ($f:ident) => {
                if key == stringify!($f) {
                    self.$f = ConfigValue::parse_cfg(key, value, line)?;
                    return Ok(());
                }
            };
        }
        fields!(assign);
        Err(Error::Parse {
            line,
            message: format!("unknown key {key:?}"),
        })
    }

    /// Every key in a fixed order; [`TrainConfig::apply_text`] on the
    /// result reproduces `self`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        macro_rules! show {
            ($f:ident) => {
                writeln!(out, "{} = {}", stringify!($f), ConfigValue::show(&self.$f)).unwrap();
            };
        }
        fields!(show);
        out
    }

    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn load(path: &Path, base: TrainConfig) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        base.apply_text(&text)?.validated()
    }

    /// `path`, unless [`CONFIG_ENV_VAR`] names another file.
    pub fn resolve_path(path: Option<&Path>) -> Option<PathBuf> {
        match std::env::var_os(CONFIG_ENV_VAR) {
            Some(p) if !p.is_empty() => Some(PathBuf::from(p)),
            _ => path.map(Path::to_path_buf),
        }
    }

    pub fn validated(self) -> Result<Self> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        let counts = [
            ("num_steps_per_epoch", self.num_steps_per_epoch),
            ("num_steps_per_eval", self.num_steps_per_eval),
            ("replay_buffer_size", self.replay_buffer_size),
            ("batch_size", self.batch_size),
            ("max_path_length", self.max_path_length),
            ("meas_samples", self.meas_samples),
            ("gen_samples", self.gen_samples),
            ("prop_rounds", self.prop_rounds),
            ("gen_from_policy", self.gen_from_policy),
            ("n_embed_size", self.n_embed_size),
            ("net_size", self.net_size),
            ("train_every", self.train_every),
            ("checkpoint_every", self.checkpoint_every),
            ("term_threshold", self.term_threshold as usize),
        ];
        for (name, v) in counts {
            if v == 0 {
                return bad(&format!("{name} must be positive"));
            }
        }
        let rates = [
            ("reward_lr", self.reward_lr),
            ("policy_lr", self.policy_lr),
            ("qf_lr", self.qf_lr),
            ("value_lr", self.value_lr),
            ("encoder_lr", self.encoder_lr),
            ("alpha_lr", self.alpha_lr),
            ("initial_alpha", self.initial_alpha),
            ("l1_coeff", self.l1_coeff),
            ("edge_budget_multiple", self.edge_budget_multiple),
        ];
        for (name, v) in rates {
            if !(v.is_finite() && v >= 0.0) {
                return bad(&format!("{name} must be a non-negative number"));
            }
        }
        if self.initial_alpha <= 0.0 {
            return bad("initial_alpha must be positive");
        }
        if !(0.0..1.0).contains(&self.discount) {
            return bad("discount must lie in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.soft_target_tau) {
            return bad("soft_target_tau must lie in [0, 1]");
        }
        if !self.train_with_reparameterization {
            return bad("only the reparameterized policy gradient is implemented");
        }
        Ok(self)
    }

    pub fn dataset(&self) -> Result<DatasetSpec> {
        let mut source = DatasetSpec::parse_source(&self.graph)?;
        if let GraphSource::EdgeList {
            n_hint, one_indexed, ..
        } = &mut source
        {
            *n_hint = self.num_nodes;
            *one_indexed = self.one_indexed;
        }
        Ok(DatasetSpec {
            source,
            feature_path: self.features.clone(),
            seed: self.graph_seed.unwrap_or(self.seed),
        })
    }

    pub fn env_config(&self) -> EnvConfig {
        EnvConfig {
            k_repeat: self.term_threshold,
            max_path_length: self.max_path_length,
            seed: self.seed,
        }
    }

    /// Generation uses the evaluation rollout cap instead of the training
    /// path length.
    pub fn eval_env_config(&self) -> EnvConfig {
        EnvConfig {
            max_path_length: self.num_steps_per_eval,
            ..self.env_config()
        }
    }

    pub fn sac_config(&self) -> SacConfig {
        SacConfig {
            discount: self.discount,
            soft_target_tau: self.soft_target_tau,
            policy_lr: self.policy_lr,
            qf_lr: self.qf_lr,
            value_lr: self.value_lr,
            encoder_lr: self.encoder_lr,
            alpha_lr: self.alpha_lr,
            auto_entropy: self.auto_entropy,
            target_entropy: self.target_entropy,
            initial_alpha: self.initial_alpha,
        }
    }

    pub fn ioc_config(&self) -> IocConfig {
        IocConfig {
            l1_coeff: self.l1_coeff,
            weights: self.importance_weights,
        }
    }
}
