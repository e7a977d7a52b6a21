//! Rollout-based graph generation, construction statistics against an
//! observed graph, and the non-relational link-prediction protocol.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::encoder::Encoder;
use crate::env::{EnvConfig, EnvState, GraphEnv, StepOutcome};
use crate::error::{Error, Result};
use crate::graph::{
    clustering_histogram, compute_stats, degree_histogram, percent_deviation, DeviationReport, StatKind, StatsReport,
};
use crate::graph::{canonical, Edge, Graph};
use crate::policy::{select_node, select_nodes, Policy};

/// Anything that proposes the next node pair from the current state.
pub trait EdgePolicy {
    fn choose(&mut self, state: &EnvState, rng: &mut dyn RngCore) -> Result<(usize, usize)>;
}

/// A trained policy mapped to node pairs through the encoder embeddings.
pub struct LearnedPolicy<'a> {
    pub policy: &'a Policy,
    /// Use `tanh(μ)` instead of sampling. Both components then share one
    /// vector and every step is a self-loop, so this is diagnostic only.
    pub deterministic: bool,
}

impl EdgePolicy for LearnedPolicy<'_> {
    fn choose(&mut self, state: &EnvState, rng: &mut dyn RngCore) -> Result<(usize, usize)> {
        if self.deterministic {
            let a = self.policy.mean_action(&state.pooled);
            let v = select_node(&a, &state.z);
            return Ok((v, v));
        }
        let action = self.policy.sample_action(&state.pooled, None, rng)?;
        Ok(select_nodes(&action, &state.z))
    }
}

/// Uniformly random distinct node pair.
pub struct RandomPolicy;

impl EdgePolicy for RandomPolicy {
    fn choose(&mut self, state: &EnvState, rng: &mut dyn RngCore) -> Result<(usize, usize)> {
        let n = state.graph.node_count();
        if n < 2 {
            return Err(Error::Argument("random edges need at least two nodes".into()));
        }
        let u = rng.gen_range(0..n);
        let mut v = rng.gen_range(0..n - 1);
        if v >= u {
            v += 1;
        }
        Ok((u, v))
    }
}

/// Replays a fixed edge list, then cycles through it again so that repeat
/// counters saturate and the episode terminates.
pub struct ReplayPolicy {
    edges: Vec<Edge>,
    next: usize,
}

impl ReplayPolicy {
    pub fn new(edges: &[Edge]) -> Self {
        Self {
            edges: edges.to_vec(),
            next: 0,
        }
    }
}

impl EdgePolicy for ReplayPolicy {
    fn choose(&mut self, _state: &EnvState, _rng: &mut dyn RngCore) -> Result<(usize, usize)> {
        if self.edges.is_empty() {
            return Err(Error::Argument("replay policy has no edges".into()));
        }
        let e = self.edges[self.next % self.edges.len()];
        self.next += 1;
        Ok(e)
    }
}

/// Generation limits shared by every rollout of an evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct GenerationConfig {
    pub env: EnvConfig,
    /// Stop once the graph holds this multiple of the reference edge count.
    pub edge_budget_multiple: f64,
    pub reference_edges: usize,
}

impl GenerationConfig {
    pub fn edge_budget(&self) -> usize {
        (self.edge_budget_multiple * self.reference_edges as f64).ceil() as usize
    }
}

#[derive(Clone, Debug)]
pub struct Rollout {
    pub graph: Graph,
    pub steps: Vec<StepOutcome>,
}

/// Runs `policy` from the edgeless graph on `node_set` until the
/// environment terminates or the edge budget is reached.
pub fn generate_graph(
    node_set: &Graph,
    policy: &mut dyn EdgePolicy,
    encoder: &Encoder,
    config: &GenerationConfig,
    rng: &mut dyn RngCore,
) -> Result<Rollout> {
    let env = GraphEnv::new(config.env.clone(), &node_set.without_edges(), encoder)?;
    rollout(env, policy, encoder, config.edge_budget(), rng)
}

fn rollout(
    mut env: GraphEnv,
    policy: &mut dyn EdgePolicy,
    encoder: &Encoder,
    edge_budget: usize,
    rng: &mut dyn RngCore,
) -> Result<Rollout> {
    let mut steps = Vec::new();
    while !env.is_terminal() && env.state().graph.edge_count() < edge_budget {
        let (v1, v2) = policy.choose(env.state(), rng)?;
        steps.push(env.step(v1, v2, encoder, &|_| 0.0)?);
    }
    Ok(Rollout {
        graph: env.state().graph.clone(),
        steps,
    })
}

/// Generated graphs and their deviations from the observed statistics.
#[derive(Clone, Debug)]
pub struct EvalReport {
    pub observed: StatsReport,
    pub generated: Vec<StatsReport>,
    pub deviations: Vec<DeviationReport>,
    pub edge_counts: Vec<usize>,
}

impl EvalReport {
    /// Mean and population standard deviation of the percent deviation;
    /// `None` if any sample is undefined for this statistic.
    pub fn mean_std(&self, kind: StatKind) -> Option<(f64, f64)> {
        let vals: Option<Vec<f64>> = self.deviations.iter().map(|d| d.get(kind).value()).collect();
        mean_std(&vals?)
    }
}

pub fn mean_std(xs: &[f64]) -> Option<(f64, f64)> {
    if xs.is_empty() {
        return None;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}

/// `samples` rollouts on `observed`'s node set, sample `i` seeded with
/// `seed + i`.
pub fn construction_eval(
    observed: &Graph,
    policy: &mut dyn EdgePolicy,
    encoder: &Encoder,
    config: &GenerationConfig,
    samples: usize,
    seed: u64,
) -> Result<EvalReport> {
    if observed.edge_count() == 0 {
        return Err(Error::Argument("construction eval needs a nonempty observed graph".into()));
    }
    let obs = compute_stats(observed);
    let mut report = EvalReport {
        observed: obs,
        generated: Vec::with_capacity(samples),
        deviations: Vec::with_capacity(samples),
        edge_counts: Vec::with_capacity(samples),
    };
    for i in 0..samples {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
        let r = generate_graph(observed, policy, encoder, config, &mut rng)?;
        let stats = compute_stats(&r.graph);
        report.deviations.push(percent_deviation(&obs, &stats));
        report.generated.push(stats);
        report.edge_counts.push(r.graph.edge_count());
    }
    Ok(report)
}

/// Rows of `label<TAB>mean ± std …`, one column per statistic.
pub fn report_table(rows: &[(&str, &EvalReport)]) -> String {
    let mut out = String::from("model");
    for k in StatKind::ALL {
        write!(out, "\t{}", k.name()).unwrap();
    }
    out.push('\n');
    for (label, report) in rows {
        out.push_str(label);
        for k in StatKind::ALL {
            match report.mean_std(k) {
                Some((m, s)) => write!(out, "\t{m:.2} ± {s:.2}").unwrap(),
                None => out.push_str("\tn/a"),
            }
        }
        out.push('\n');
    }
    out
}

/// Writes `<prefix>.degree.tsv` and `<prefix>.clustering.tsv` under `dir`.
pub fn write_histograms(dir: &Path, prefix: &str, g: &Graph, bins: usize) -> Result<()> {
    let mut deg = String::from("degree\tcount\n");
    for (d, c) in degree_histogram(g) {
        writeln!(deg, "{d}\t{c}").unwrap();
    }
    let mut clu = String::from("bin_start\tcount\n");
    for (i, c) in clustering_histogram(g, bins).into_iter().enumerate() {
        writeln!(clu, "{}\t{c}", i as f64 / bins as f64).unwrap();
    }
    for (name, text) in [("degree", deg), ("clustering", clu)] {
        let path = dir.join(format!("{prefix}.{name}.tsv"));
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct LinkPredSplit {
    pub train_graph: Graph,
    pub positives: Vec<Edge>,
    pub negatives: Vec<Edge>,
    pub seed: u64,
}

impl LinkPredSplit {
    /// Positives then negatives, with labels 1 and 0.
    pub fn candidates(&self) -> (Vec<Edge>, Vec<bool>) {
        let edges = self.positives.iter().chain(&self.negatives).copied().collect();
        let labels = std::iter::repeat_n(true, self.positives.len())
            .chain(std::iter::repeat_n(false, self.negatives.len()))
            .collect();
        (edges, labels)
    }
}

/// Holds out `⌊test_frac·|E|⌋` edges and samples as many non-edges.
pub fn linkpred_split(g: &Graph, test_frac: f64, seed: u64) -> Result<LinkPredSplit> {
    if !(0.0..1.0).contains(&test_frac) {
        return Err(Error::Argument(format!("test fraction {test_frac} outside [0, 1)")));
    }
    let n = g.node_count();
    let k = (test_frac * g.edge_count() as f64).floor() as usize;
    let non_edges = n * n.saturating_sub(1) / 2 - g.edge_count();
    if non_edges < k {
        return Err(Error::Argument(format!(
            "graph too dense: {non_edges} non-edges for {k} negatives"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<Edge> = g.edges().to_vec();
    order.shuffle(&mut rng);
    let positives: Vec<Edge> = order[..k].to_vec();
    let mut train_graph = Graph::from_edges(n, order[k..].iter().copied())?;
    if let Some(x) = g.features() {
        train_graph.set_features(x.clone())?;
    }

    let mut seen = BTreeSet::new();
    let mut negatives = Vec::with_capacity(k);
    while negatives.len() < k {
        let u = rng.gen_range(0..n);
        let v = rng.gen_range(0..n);
        if u == v || g.has_edge(u, v) || !seen.insert(canonical(u, v)) {
            continue;
        }
        negatives.push(canonical(u, v));
    }
    Ok(LinkPredSplit {
        train_graph,
        positives,
        negatives,
        seed,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScoreMode {
    /// Reciprocal creation rank in a rollout started at the train graph.
    Policy,
    /// Inner product of the trained node embeddings.
    Embed,
}

impl ScoreMode {
    pub fn name(self) -> &'static str {
        match self {
            ScoreMode::Policy => "policy",
            ScoreMode::Embed => "embed",
        }
    }
}

/// Scores for [`LinkPredSplit::candidates`], in the same order.
pub fn score_edges(
    split: &LinkPredSplit,
    mode: ScoreMode,
    policy: &mut dyn EdgePolicy,
    encoder: &Encoder,
    config: &GenerationConfig,
    rng: &mut dyn RngCore,
) -> Result<Vec<f64>> {
    let (candidates, _) = split.candidates();
    let features = split
        .train_graph
        .features()
        .ok_or_else(|| Error::Argument("train graph has no node features".into()))?;
    match mode {
        ScoreMode::Embed => {
            let z = encoder.encode(features, split.train_graph.edges())?;
            Ok(candidates
                .iter()
                .map(|&(u, v)| z.row(u).iter().zip(z.row(v)).map(|(a, b)| a * b).sum())
                .collect())
        }
        ScoreMode::Policy => {
            let env = GraphEnv::with_initial_graph(config.env.clone(), &split.train_graph, encoder)?;
            let start = split.train_graph.edge_count();
            let budget = start + config.edge_budget();
            let r = rollout(env, policy, encoder, budget, rng)?;
            let created = &r.graph.edges()[start..];
            Ok(candidates
                .iter()
                .map(|&e| {
                    created
                        .iter()
                        .position(|&c| c == canonical(e.0, e.1))
                        .map_or(0.0, |rank| 1.0 / (rank + 1) as f64)
                })
                .collect())
        }
    }
}

/// ROC AUC with midrank ties and average precision with one threshold per
/// distinct score.
pub fn binary_metrics(scores: &[f64], labels: &[bool]) -> Result<(f64, f64)> {
    if scores.len() != labels.len() {
        return Err(Error::Argument("scores and labels differ in length".into()));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Argument("binary metrics need both classes".into()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Argument("scores contain NaN".into()));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Ascending groups of tied scores.
    let mut groups: Vec<(usize, usize)> = Vec::new();
    let mut start = 0;
    for i in 1..=idx.len() {
        if i == idx.len() || scores[idx[i]] != scores[idx[start]] {
            groups.push((start, i));
            start = i;
        }
    }

    let mut pos_rank_sum = 0.0;
    for &(lo, hi) in &groups {
        let midrank = (lo + 1 + hi) as f64 / 2.0;
        pos_rank_sum += midrank * idx[lo..hi].iter().filter(|&&i| labels[i]).count() as f64;
    }
    let (p, q) = (pos as f64, neg as f64);
    let auc = (pos_rank_sum - p * (p + 1.0) / 2.0) / (p * q);

    let mut ap = 0.0;
    let mut tp = 0usize;
    let mut seen = 0usize;
    for &(lo, hi) in groups.iter().rev() {
        let group_tp = idx[lo..hi].iter().filter(|&&i| labels[i]).count();
        tp += group_tp;
        seen += hi - lo;
        ap += group_tp as f64 * (tp as f64 / seen as f64);
    }
    Ok((auc, ap / p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{default_features, gen_barabasi_albert};

    fn featured(g: Graph) -> Graph {
        let mut g = g;
        let x = default_features(&g, 3);
        g.set_features(x).unwrap();
        g
    }

    fn gen_config(reference_edges: usize, multiple: f64) -> GenerationConfig {
        GenerationConfig {
            env: EnvConfig {
                k_repeat: 2,
                max_path_length: 2000,
                seed: 0,
            },
            edge_budget_multiple: multiple,
            reference_edges,
        }
    }

    fn encoder_for(g: &Graph) -> Encoder {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        Encoder::new(g.features().unwrap().cols(), 4, 8, 2, &mut rng)
    }

    #[test]
    fn replay_policy_has_zero_deviation() {
        let g = featured(gen_barabasi_albert(30, 2, 5).unwrap());
        let enc = encoder_for(&g);
        let mut replay = ReplayPolicy::new(g.edges());
        let cfg = gen_config(g.edge_count(), 2.0);
        let report = construction_eval(&g, &mut replay, &enc, &cfg, 3, 0).unwrap();
        for k in StatKind::ALL {
            assert_eq!(report.mean_std(k), Some((0.0, 0.0)), "{}", k.name());
        }
        assert_eq!(report.edge_counts, vec![g.edge_count(); 3]);
    }

    #[test]
    fn zero_budget_gives_empty_graph() {
        let g = featured(gen_barabasi_albert(10, 2, 1).unwrap());
        let enc = encoder_for(&g);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = generate_graph(&g, &mut RandomPolicy, &enc, &gen_config(g.edge_count(), 0.0), &mut rng).unwrap();
        assert_eq!(r.graph.edge_count(), 0);
    }

    #[test]
    fn learned_rollouts_are_seed_deterministic() {
        let g = featured(gen_barabasi_albert(20, 2, 1).unwrap());
        let enc = encoder_for(&g);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let policy = Policy::new(4, 8, &mut rng);
        let cfg = gen_config(g.edge_count(), 1.0);
        let run = |seed| {
            let mut lp = LearnedPolicy {
                policy: &policy,
                deterministic: false,
            };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            generate_graph(&g, &mut lp, &enc, &cfg, &mut rng).unwrap().graph
        };
        assert_eq!(run(4).edges(), run(4).edges());
    }

    #[test]
    fn split_counts_and_disjointness() {
        let g = featured(gen_barabasi_albert(60, 2, 3).unwrap());
        let s = linkpred_split(&g, 0.1, 11).unwrap();
        let k = (0.1 * g.edge_count() as f64).floor() as usize;
        assert_eq!(s.positives.len(), k);
        assert_eq!(s.negatives.len(), k);
        for e in &s.positives {
            assert!(g.has_edge(e.0, e.1) && !s.train_graph.has_edge(e.0, e.1));
        }
        for e in &s.negatives {
            assert!(!g.has_edge(e.0, e.1));
        }
        assert_eq!(s.train_graph.edge_count() + k, g.edge_count());
        let again = linkpred_split(&g, 0.1, 11).unwrap();
        assert_eq!(again.positives, s.positives);
        assert_eq!(again.negatives, s.negatives);

        let empty = linkpred_split(&g, 0.0, 1).unwrap();
        assert!(empty.positives.is_empty() && empty.negatives.is_empty());
        let k4 = featured(Graph::from_edges(4, [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3)]).unwrap());
        assert!(linkpred_split(&k4, 0.5, 0).is_err());
    }

    #[test]
    fn metrics_hand_cases() {
        let labels = [true, true, false, false];
        assert_eq!(binary_metrics(&[0.9, 0.8, 0.1, 0.2], &labels).unwrap(), (1.0, 1.0));
        assert_eq!(binary_metrics(&[0.5; 4], &labels).unwrap().0, 0.5);
        // Descending: +, −, +, − → AP = ½·1 + ½·(2/3).
        let (auc, ap) = binary_metrics(&[4.0, 3.0, 2.0, 1.0], &[true, false, true, false]).unwrap();
        assert!((auc - 0.75).abs() < 1e-12);
        assert!((ap - (0.5 + 1.0 / 3.0)).abs() < 1e-12);
        assert!(binary_metrics(&[0.1, 0.2], &[true, true]).is_err());
    }

    /// Top-`k` eigenpairs of the adjacency matrix by orthogonal iteration on
    /// `A + n·I`, which shifts the spectrum positive without reordering it.
    fn spectral_embedding(g: &Graph, k: usize) -> Vec<Vec<f64>> {
        let n = g.node_count();
        let shift = n as f64;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut basis: Vec<Vec<f64>> = (0..k).map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let apply = |x: &[f64]| -> Vec<f64> {
            (0..n)
                .map(|v| shift * x[v] + g.neighbors(v).iter().map(|&u| x[u]).sum::<f64>())
                .collect()
        };
        for _ in 0..500 {
            for i in 0..k {
                let mut y = apply(&basis[i]);
                for b in &basis[..i] {
                    let p: f64 = y.iter().zip(b).map(|(a, c)| a * c).sum();
                    y.iter_mut().zip(b).for_each(|(a, c)| *a -= p * c);
                }
                let norm = y.iter().map(|a| a * a).sum::<f64>().sqrt();
                basis[i] = y.into_iter().map(|a| a / norm).collect();
            }
        }
        let lambdas: Vec<f64> = basis
            .iter()
            .map(|b| apply(b).iter().zip(b).map(|(a, c)| a * c).sum::<f64>() - shift)
            .collect();
        (0..n)
            .map(|v| (0..k).map(|i| basis[i][v] * lambdas[i].abs().sqrt()).collect())
            .collect()
    }

    #[test]
    fn spectral_embeddings_separate_planted_blocks() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut edges = Vec::new();
        for u in 0..40 {
            for v in u + 1..40 {
                let p = if (u < 20) == (v < 20) { 0.7 } else { 0.02 };
                if rng.gen_bool(p) {
                    edges.push((u, v));
                }
            }
        }
        let g = Graph::from_edges(40, edges).unwrap();
        let s = linkpred_split(&g, 0.1, 2).unwrap();
        let z = spectral_embedding(&s.train_graph, 2);
        let (candidates, labels) = s.candidates();
        let scores: Vec<f64> = candidates
            .iter()
            .map(|&(u, v)| z[u].iter().zip(&z[v]).map(|(a, b)| a * b).sum())
            .collect();
        let (auc, _) = binary_metrics(&scores, &labels).unwrap();
        assert!(auc > 0.8, "AUC {auc}");
    }

    #[test]
    fn identical_embeddings_give_chance_auc() {
        let g = featured(gen_barabasi_albert(40, 2, 3).unwrap());
        let mut s = linkpred_split(&g, 0.2, 1).unwrap();
        let n = g.node_count();
        s.train_graph.set_features(crate::nn::Matrix::filled(n, 16, 0.5)).unwrap();
        // A constant input layer and silent messages make every row of Z equal.
        let mut enc = encoder_for(&g);
        enc.input_proj.weight.data_mut().fill(0.0);
        let last = enc.message.layers.last_mut().unwrap();
        last.weight.data_mut().fill(0.0);
        last.bias.data_mut().fill(0.0);
        let cfg = gen_config(g.edge_count(), 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let scores = score_edges(&s, ScoreMode::Embed, &mut RandomPolicy, &enc, &cfg, &mut rng).unwrap();
        let (_, labels) = s.candidates();
        let (auc, _) = binary_metrics(&scores, &labels).unwrap();
        assert!(scores.windows(2).all(|w| (w[0] - w[1]).abs() < 1e-12));
        assert_eq!(auc, 0.5);
    }

    #[test]
    fn policy_mode_creating_positives_scores_perfectly() {
        let g = featured(gen_barabasi_albert(30, 2, 3).unwrap());
        let s = linkpred_split(&g, 0.2, 4).unwrap();
        let enc = encoder_for(&g);
        let mut replay = ReplayPolicy::new(&s.positives);
        let cfg = gen_config(s.positives.len(), 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let scores = score_edges(&s, ScoreMode::Policy, &mut replay, &enc, &cfg, &mut rng).unwrap();
        let (_, labels) = s.candidates();
        assert_eq!(binary_metrics(&scores, &labels).unwrap(), (1.0, 1.0));
    }

    #[test]
    fn report_table_layout() {
        let g = featured(gen_barabasi_albert(12, 2, 5).unwrap());
        let enc = encoder_for(&g);
        let mut replay = ReplayPolicy::new(g.edges());
        let report = construction_eval(&g, &mut replay, &enc, &gen_config(g.edge_count(), 2.0), 2, 0).unwrap();
        let table = report_table(&[("replay", &report)]);
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines[0], "model\ttriangle_count\tavg_clustering\tlargest_cc\tassortativity\tmax_degree");
        assert!(lines[1].starts_with("replay\t0.00 ± 0.00"));
    }
}
