//! Edge-list ingestion and synthetic graph generators.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::nn::Matrix;

/// Width of the one-hot degree-bucket block of the default features.
pub const DEGREE_BUCKETS: usize = 8;
/// Width of the seeded Gaussian block that distinguishes otherwise
/// identical nodes.
pub const IDENTITY_FEATURES: usize = 8;
pub const DEFAULT_FEATURE_DIM: usize = DEGREE_BUCKETS + IDENTITY_FEATURES;

/// Result of parsing an edge list, with the cleanup counts.
#[derive(Clone, Debug)]
pub struct EdgeListLoad {
    pub graph: Graph,
    pub self_loops_dropped: usize,
    pub duplicates_dropped: usize,
}

/// Parses `u v [type]` lines. `#` starts a comment.
pub fn parse_edge_list(text: &str, n_hint: Option<usize>, one_indexed: bool) -> Result<EdgeListLoad> {
    let mut raw = Vec::new();
    let mut max_index: Option<usize> = None;
    for (i, line) in text.lines().enumerate() {
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            line: i + 1,
            message,
        };
        let fields: Vec<&str> = body.split_whitespace().collect();
        if !(2..=3).contains(&fields.len()) {
            return Err(parse_err(format!(
                "expected `u v [type]`, found {} fields",
                fields.len()
            )));
        }
        let mut idx = [0usize; 2];
        for (slot, f) in idx.iter_mut().zip(&fields[..2]) {
            let v: usize = f
                .parse()
                .map_err(|_| parse_err(format!("invalid node index {f:?}")))?;
            *slot = if one_indexed {
                v.checked_sub(1)
                    .ok_or_else(|| parse_err("node index 0 in a 1-indexed file".into()))?
            } else {
                v
            };
        }
        let ty = match fields.get(2) {
            Some(f) => Some(
                f.parse::<u32>()
                    .map_err(|_| parse_err(format!("invalid edge type {f:?}")))?,
            ),
            None => None,
        };
        max_index = Some(max_index.unwrap_or(0).max(idx[0]).max(idx[1]));
        raw.push((idx[0], idx[1], ty));
    }

    let inferred = max_index.map_or(0, |m| m + 1);
    let n = match n_hint {
        Some(h) if h < inferred => {
            return Err(Error::Bounds {
                index: inferred - 1,
                n: h,
            })
        }
        Some(h) => h,
        None => inferred,
    };

    let mut graph = Graph::new(n);
    let (mut self_loops, mut duplicates) = (0, 0);
    for (u, v, ty) in raw {
        if u == v {
            self_loops += 1;
            continue;
        }
        if graph.add_edge(u, v)? {
            if let Some(t) = ty {
                graph.set_edge_type(u, v, t);
            }
        } else {
            duplicates += 1;
        }
    }
    if self_loops > 0 {
        log::warn!("dropped {self_loops} self-loop line(s)");
    }
    Ok(EdgeListLoad {
        graph,
        self_loops_dropped: self_loops,
        duplicates_dropped: duplicates,
    })
}

pub fn load_edge_list(path: &Path, n_hint: Option<usize>, one_indexed: bool) -> Result<EdgeListLoad> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_edge_list(&text, n_hint, one_indexed)
}

/// Whitespace-separated real matrix, one row per node.
pub fn parse_features(text: &str) -> Result<Matrix> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let row = body
            .split_whitespace()
            .map(|f| {
                f.parse::<f64>().map_err(|_| Error::Parse {
                    line: i + 1,
                    message: format!("invalid feature value {f:?}"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("expected {} values, found {}", first.len(), row.len()),
                });
            }
        }
        rows.push(row);
    }
    Ok(Matrix::from_rows(&rows))
}

pub fn load_features(path: &Path) -> Result<Matrix> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_features(&text)
}

/// Log-spaced degree bucket: 0, 1, 2–3, 4–7, …, with the last bucket open.
pub fn degree_bucket(degree: usize) -> usize {
    if degree == 0 {
        0
    } else {
        ((usize::BITS - degree.leading_zeros()) as usize).min(DEGREE_BUCKETS - 1)
    }
}

/// One-hot degree bucket of each node in `g`, followed by
/// [`IDENTITY_FEATURES`] standard-normal columns drawn from `seed`.
pub fn default_features(g: &Graph, seed: u64) -> Matrix {
    let n = g.node_count();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6665_6174_7572_6573);
    let mut m = Matrix::zeros(n, DEFAULT_FEATURE_DIM);
    for v in 0..n {
        m.set(v, degree_bucket(g.degree(v)), 1.0);
        for c in 0..IDENTITY_FEATURES {
            let x: f64 = rng.sample(StandardNormal);
            m.set(v, DEGREE_BUCKETS + c, x);
        }
    }
    m
}

/// Preferential attachment: `m_attach` initial nodes, then every new node
/// links to `m_attach` distinct existing nodes chosen proportionally to
/// degree. Produces exactly `m_attach·(n − m_attach)` edges.
pub fn gen_barabasi_albert(n: usize, m_attach: usize, seed: u64) -> Result<Graph> {
    if m_attach < 1 || m_attach >= n {
        return Err(Error::Argument(format!(
            "Barabasi-Albert requires 1 <= m_attach < n, got m_attach={m_attach}, n={n}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = Graph::new(n);
    let mut targets: Vec<usize> = (0..m_attach).collect();
    let mut repeated: Vec<usize> = Vec::with_capacity(2 * m_attach * n);
    for source in m_attach..n {
        for &t in &targets {
            g.add_edge(source, t)?;
        }
        repeated.extend_from_slice(&targets);
        repeated.extend(std::iter::repeat_n(source, m_attach));
        targets.clear();
        while targets.len() < m_attach {
            let pick = repeated[rng.gen_range(0..repeated.len())];
            if !targets.contains(&pick) {
                targets.push(pick);
            }
        }
    }
    Ok(g)
}

/// Each of the `n(n−1)/2` pairs is an edge independently with probability `p`.
pub fn gen_erdos_renyi(n: usize, p: f64, seed: u64) -> Result<Graph> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Argument(format!("edge probability {p} outside [0, 1]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = Graph::new(n);
    for u in 0..n {
        for v in u + 1..n {
            if rng.gen_bool(p) {
                g.add_edge(u, v)?;
            }
        }
    }
    Ok(g)
}

/// Uniform random sample of `k` distinct node pairs, in random order.
pub fn random_edge_sequence(n: usize, k: usize, seed: u64) -> Vec<(usize, usize)> {
    let pairs = n * (n - 1) / 2;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    index::sample(&mut rng, pairs, k.min(pairs))
        .into_iter()
        .map(|i| pair_from_index(n, i))
        .collect()
}

fn pair_from_index(n: usize, mut i: usize) -> (usize, usize) {
    for u in 0..n {
        let row = n - u - 1;
        if i < row {
            return (u, u + 1 + i);
        }
        i -= row;
    }
    unreachable!("pair index out of range")
}

/// Where a training graph comes from.
#[derive(Clone, Debug, PartialEq)]
pub enum GraphSource {
    EdgeList {
        path: PathBuf,
        n_hint: Option<usize>,
        one_indexed: bool,
    },
    BarabasiAlbert {
        n: usize,
        m_attach: usize,
    },
    ErdosRenyi {
        n: usize,
        p: f64,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSpec {
    pub source: GraphSource,
    pub feature_path: Option<PathBuf>,
    pub seed: u64,
}

impl DatasetSpec {
    /// Parses `ba:N:M`, `er:N:P` or an edge-list path.
    pub fn parse_source(text: &str) -> Result<GraphSource> {
        let parts: Vec<&str> = text.split(':').collect();
        let bad = || Error::Argument(format!("cannot parse graph source {text:?}"));
        match parts.as_slice() {
            ["ba", n, m] => Ok(GraphSource::BarabasiAlbert {
                n: n.parse().map_err(|_| bad())?,
                m_attach: m.parse().map_err(|_| bad())?,
            }),
            ["er", n, p] => Ok(GraphSource::ErdosRenyi {
                n: n.parse().map_err(|_| bad())?,
                p: p.parse().map_err(|_| bad())?,
            }),
            _ => Ok(GraphSource::EdgeList {
                path: PathBuf::from(text),
                n_hint: None,
                one_indexed: false,
            }),
        }
    }

    /// The graph with node features attached (default features when no
    /// sidecar file is configured).
    pub fn load(&self) -> Result<Graph> {
        let mut g = match &self.source {
            GraphSource::EdgeList {
                path,
                n_hint,
                one_indexed,
            } => load_edge_list(path, *n_hint, *one_indexed)?.graph,
            GraphSource::BarabasiAlbert { n, m_attach } => gen_barabasi_albert(*n, *m_attach, self.seed)?,
            GraphSource::ErdosRenyi { n, p } => gen_erdos_renyi(*n, *p, self.seed)?,
        };
        let features = match &self.feature_path {
            Some(p) => load_features(p)?,
            None => default_features(&g, self.seed),
        };
        g.set_features(features)?;
        Ok(g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_simple_list() {
        let l = parse_edge_list("0 1\n1 2", None, false).unwrap();
        assert_eq!(l.graph.node_count(), 3);
        assert_eq!(l.graph.edges(), &[(0, 1), (1, 2)]);
    }

    #[test]
    fn drops_self_loops_and_duplicates() {
        let l = parse_edge_list("# header\n0 1\n2 2\n1 0 # reversed\n\n1 2 7\n", None, false).unwrap();
        assert_eq!(l.self_loops_dropped, 1);
        assert_eq!(l.duplicates_dropped, 1);
        assert_eq!(l.graph.edge_count(), 2);
        assert_eq!(l.graph.edge_types().unwrap()[&(1, 2)], 7);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        match parse_edge_list("0 1\n1 x\n", None, false) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            parse_edge_list("0 1 2 3", None, false),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn node_hint_bounds() {
        assert!(matches!(
            parse_edge_list("0 5", Some(3), false),
            Err(Error::Bounds { index: 5, n: 3 })
        ));
        assert_eq!(parse_edge_list("0 1", Some(10), false).unwrap().graph.node_count(), 10);
    }

    #[test]
    fn one_indexed_rebases() {
        let l = parse_edge_list("1 2\n2 3", None, true).unwrap();
        assert_eq!(l.graph.edges(), &[(0, 1), (1, 2)]);
    }

    #[test]
    fn ba_edge_counts() {
        assert_eq!(gen_barabasi_albert(100, 4, 0).unwrap().edge_count(), 384);
        for (n, m) in [(5, 4), (10, 1), (30, 3), (50, 7)] {
            let g = gen_barabasi_albert(n, m, 11).unwrap();
            assert_eq!(g.edge_count(), m * (n - m));
        }
        assert!(gen_barabasi_albert(4, 4, 0).is_err());
        assert!(gen_barabasi_albert(4, 0, 0).is_err());
        assert_eq!(
            gen_barabasi_albert(60, 3, 9).unwrap(),
            gen_barabasi_albert(60, 3, 9).unwrap()
        );
    }

    #[test]
    fn er_extremes() {
        assert_eq!(gen_erdos_renyi(10, 0.0, 1).unwrap().edge_count(), 0);
        assert_eq!(gen_erdos_renyi(10, 1.0, 1).unwrap().edge_count(), 45);
        assert!(gen_erdos_renyi(10, 1.5, 1).is_err());
    }

    #[test]
    fn degree_buckets() {
        let b: Vec<usize> = [0, 1, 2, 3, 4, 7, 8, 33, 64, 1000].iter().map(|&d| degree_bucket(d)).collect();
        assert_eq!(b, vec![0, 1, 2, 2, 3, 3, 4, 6, 7, 7]);
    }

    #[test]
    fn random_sequences_are_distinct_pairs() {
        let seq = random_edge_sequence(6, 15, 3);
        let mut set: Vec<_> = seq.clone();
        set.sort();
        set.dedup();
        assert_eq!(set.len(), 15);
        assert!(seq.iter().all(|&(u, v)| u < v && v < 6));
    }

    #[test]
    fn source_parsing() {
        assert_eq!(
            DatasetSpec::parse_source("ba:100:4").unwrap(),
            GraphSource::BarabasiAlbert { n: 100, m_attach: 4 }
        );
        assert!(matches!(DatasetSpec::parse_source("er:5:0.5").unwrap(), GraphSource::ErdosRenyi { n: 5, .. }));
        assert!(matches!(DatasetSpec::parse_source("g.edges").unwrap(), GraphSource::EdgeList { .. }));
    }
}
