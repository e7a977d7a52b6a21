use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use graphopt::checkpoint::Checkpoint;
use graphopt::config::TrainConfig;
use graphopt::datasets::{default_features, load_features};
use graphopt::eval::{generate_graph, report_table, write_histograms, LearnedPolicy, RandomPolicy};
use graphopt::graph::Graph;
use graphopt::train::{
    evaluate_agent, generation_config, resolve_checkpoint, restore_models, run_linkpred, run_train, transfer_train,
};
use graphopt::{Error, Result};

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

#[derive(Parser)]
#[command(name = "graphopt", version, about = "Learn graph construction policies and rewards from an observed graph")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Desk,
    Paper,
}

#[derive(clap::Args)]
struct ConfigArgs {
    /// `key = value` config file; GRAPHOPT_CONFIG overrides it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Defaults the config file is applied on top of.
    #[arg(long, value_enum, default_value = "desk")]
    preset: Preset,
    /// Extra `key=value` overrides, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<TrainConfig> {
        let base = match self.preset {
            Preset::Desk => TrainConfig::desk(),
            Preset::Paper => TrainConfig::default(),
        };
        let mut cfg = match TrainConfig::resolve_path(self.config.as_deref()) {
            Some(p) => TrainConfig::load(&p, base)?,
            None => base,
        };
        for (i, kv) in self.overrides.iter().enumerate() {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Argument(format!("override {kv:?} is not key=value")))?;
            cfg.set(k.trim(), v.trim(), i + 1)?;
        }
        cfg.validated()
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train policy, critics and reward on the configured graph.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value = "runs/latest")]
        run_dir: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Sample one graph from a trained checkpoint and write its edge list.
    Generate {
        /// Checkpoint directory or run directory.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Node count of a fresh node set.
        #[arg(long, conflicts_with = "graph")]
        nodes: Option<usize>,
        /// Graph whose node set (and features) to build on.
        #[arg(long)]
        graph: Option<String>,
        /// Node feature file for `--nodes`.
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Statistics of sampled graphs against an observed graph.
    EvalStats {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Observed graph; defaults to the run's training graph.
        #[arg(long)]
        graph: Option<String>,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Directory for degree and clustering histograms.
        #[arg(long)]
        hist_dir: Option<PathBuf>,
    },
    /// Held-out edge prediction with a model trained on the remaining edges.
    Linkpred {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        graph: String,
        #[arg(long, default_value_t = 0.1)]
        test_frac: f64,
        #[arg(long, default_value = "runs/linkpred")]
        run_dir: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train on a target graph against a frozen reward from a source run.
    Transfer {
        #[arg(long)]
        source_run: PathBuf,
        #[arg(long)]
        target: String,
        #[arg(long, default_value = "runs/transfer")]
        run_dir: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// `key=value` overrides on top of the source run's config.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
}

fn load_graph(source: &str, config: &TrainConfig) -> Result<Graph> {
    let mut cfg = config.clone();
    cfg.graph = source.to_string();
    cfg.dataset()?.load()
}

fn run_config_for(checkpoint_dir: &Path) -> Result<TrainConfig> {
    let candidates = [checkpoint_dir.join("config.txt"), checkpoint_dir.join("../../config.txt")];
    let path = candidates
        .iter()
        .find(|p| p.is_file())
        .ok_or_else(|| Error::Argument(format!("no config.txt found for {}", checkpoint_dir.display())))?;
    TrainConfig::load(path, TrainConfig::default())
}

fn with_seed(mut cfg: TrainConfig, seed: Option<u64>) -> TrainConfig {
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Argument(format!("cannot write {}: {e}", path.display())))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config, run_dir, seed } => {
            let cfg = with_seed(config.resolve()?, seed);
            let trainer = run_train(&cfg, &run_dir)?;
            let report = evaluate_agent(&trainer.agent, &trainer.observed, &cfg, cfg.seed)?;
            let table = report_table(&[("graphopt", &report)]);
            write_file(&run_dir.join("eval.tsv"), &table)?;
            print!("{table}");
        }
        Command::Generate {
            checkpoint,
            nodes,
            graph,
            features,
            seed,
            out,
        } => {
            let dir = resolve_checkpoint(&checkpoint)?;
            let cfg = run_config_for(&dir)?;
            let models = restore_models(&Checkpoint::load(&dir)?, &cfg)?;
            let (node_set, reference) = match (nodes, graph) {
                (Some(n), None) => {
                    let mut g = Graph::new(n);
                    let x = match &features {
                        Some(p) => load_features(p)?,
                        None => default_features(&g, seed),
                    };
                    g.set_features(x)?;
                    (g, models.reference_edges)
                }
                (None, Some(src)) => {
                    let g = load_graph(&src, &cfg)?;
                    let e = g.edge_count();
                    (g, e)
                }
                _ => return Err(Error::Argument("generate needs exactly one of --nodes or --graph".into())),
            };
            let mut policy = LearnedPolicy {
                policy: &models.agent.policy,
                deterministic: cfg.eval_deterministic,
            };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let gen = generation_config(&cfg, reference);
            let r = generate_graph(&node_set, &mut policy, &models.agent.encoder, &gen, &mut rng)?;
            let text: String = r.graph.edges().iter().map(|(u, v)| format!("{u} {v}\n")).collect();
            write_file(&out, &text)?;
            println!("wrote {} edges on {} nodes to {}", r.graph.edge_count(), r.graph.node_count(), out.display());
        }
        Command::EvalStats {
            checkpoint,
            graph,
            samples,
            seed,
            hist_dir,
        } => {
            let dir = resolve_checkpoint(&checkpoint)?;
            let mut cfg = run_config_for(&dir)?;
            if let Some(s) = samples {
                cfg.eval_samples = s;
            }
            let observed = match graph {
                Some(src) => load_graph(&src, &cfg)?,
                None => cfg.dataset()?.load()?,
            };
            let models = restore_models(&Checkpoint::load(&dir)?, &cfg)?;
            let learned = evaluate_agent(&models.agent, &observed, &cfg, seed)?;
            let gen = generation_config(&cfg, observed.edge_count());
            let random = graphopt::eval::construction_eval(
                &observed,
                &mut RandomPolicy,
                &models.agent.encoder,
                &gen,
                cfg.eval_samples,
                seed,
            )?;
            print!("{}", report_table(&[("graphopt", &learned), ("random", &random)]));
            if let Some(h) = hist_dir {
                std::fs::create_dir_all(&h).map_err(|e| Error::Argument(format!("{}: {e}", h.display())))?;
                write_histograms(&h, "observed", &observed, 10)?;
                let mut policy = LearnedPolicy {
                    policy: &models.agent.policy,
                    deterministic: cfg.eval_deterministic,
                };
                for i in 0..cfg.eval_samples {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
                    let r = generate_graph(&observed, &mut policy, &models.agent.encoder, &gen, &mut rng)?;
                    write_histograms(&h, &format!("generated_{i}"), &r.graph, 10)?;
                }
            }
        }
        Command::Linkpred {
            config,
            graph,
            test_frac,
            run_dir,
            seed,
        } => {
            let cfg = with_seed(config.resolve()?, seed);
            let g = load_graph(&graph, &cfg)?;
            let scores = run_linkpred(&g, test_frac, &cfg, &run_dir)?;
            let mut table = String::from("mode\tAUC\tAP\n");
            for s in scores {
                table.push_str(&format!("{}\t{:.4}\t{:.4}\n", s.mode.name(), s.auc, s.ap));
            }
            write_file(&run_dir.join("linkpred.tsv"), &table)?;
            print!("{table}");
        }
        Command::Transfer {
            source_run,
            target,
            run_dir,
            seed,
            overrides,
        } => {
            let cp = resolve_checkpoint(&source_run)?;
            let mut cfg = with_seed(run_config_for(&cp)?, seed);
            for (i, kv) in overrides.iter().enumerate() {
                let (k, v) = kv
                    .split_once('=')
                    .ok_or_else(|| Error::Argument(format!("override {kv:?} is not key=value")))?;
                cfg.set(k.trim(), v.trim(), i + 1)?;
            }
            cfg.graph = target.clone();
            let cfg = cfg.validated()?;
            let target_graph = cfg.dataset()?.load()?;
            let report = transfer_train(&source_run, target_graph, &cfg, &run_dir)?;
            let table = report_table(&[("reward", &report.reward), ("direct", &report.direct)]);
            write_file(&run_dir.join("transfer.tsv"), &table)?;
            print!("{table}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
