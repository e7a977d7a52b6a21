use std::collections::{BTreeMap, VecDeque};
use std::fmt;

use super::Graph;

/// The five structural statistics reported for a graph.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StatsReport {
    pub triangle_count: u64,
    pub avg_clustering: f64,
    pub largest_cc: usize,
    /// `None` when either endpoint-degree marginal has zero variance.
    pub assortativity: Option<f64>,
    pub max_degree: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StatKind {
    TriangleCount,
    AvgClustering,
    LargestCc,
    Assortativity,
    MaxDegree,
}

impl StatKind {
    pub const ALL: [StatKind; 5] = [
        StatKind::TriangleCount,
        StatKind::AvgClustering,
        StatKind::LargestCc,
        StatKind::Assortativity,
        StatKind::MaxDegree,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StatKind::TriangleCount => "triangle_count",
            StatKind::AvgClustering => "avg_clustering",
            StatKind::LargestCc => "largest_cc",
            StatKind::Assortativity => "assortativity",
            StatKind::MaxDegree => "max_degree",
        }
    }

    pub fn from_name(name: &str) -> Option<StatKind> {
        StatKind::ALL.into_iter().find(|k| k.name() == name)
    }
}

impl StatsReport {
    pub fn get(&self, kind: StatKind) -> Option<f64> {
        match kind {
            StatKind::TriangleCount => Some(self.triangle_count as f64),
            StatKind::AvgClustering => Some(self.avg_clustering),
            StatKind::LargestCc => Some(self.largest_cc as f64),
            StatKind::Assortativity => self.assortativity,
            StatKind::MaxDegree => Some(self.max_degree as f64),
        }
    }

    /// `name<TAB>value` lines; undefined assortativity is written as `undefined`.
    pub fn to_record(&self) -> String {
        let mut out = String::new();
        for kind in StatKind::ALL {
            let value = match self.get(kind) {
                Some(v) if matches!(kind, StatKind::AvgClustering | StatKind::Assortativity) => {
                    format!("{v}")
                }
                Some(v) => format!("{}", v as u64),
                None => "undefined".to_string(),
            };
            out.push_str(kind.name());
            out.push('\t');
            out.push_str(&value);
            out.push('\n');
        }
        out
    }

    pub fn from_record(text: &str) -> crate::Result<StatsReport> {
        let mut fields = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('\t').ok_or_else(|| crate::Error::Parse {
                line: i + 1,
                message: format!("expected name<TAB>value, got {line:?}"),
            })?;
            let kind = StatKind::from_name(k.trim()).ok_or_else(|| crate::Error::Parse {
                line: i + 1,
                message: format!("unknown statistic {k:?}"),
            })?;
            fields.insert(kind, (i + 1, v.trim().to_string()));
        }
        let num = |kind: StatKind| -> crate::Result<Option<f64>> {
            let (line, raw) = fields.get(&kind).ok_or_else(|| crate::Error::Parse {
                line: 0,
                message: format!("missing statistic {}", kind.name()),
            })?;
            if raw == "undefined" {
                return Ok(None);
            }
            raw.parse::<f64>().map(Some).map_err(|e| crate::Error::Parse {
                line: *line,
                message: format!("{}: {e}", kind.name()),
            })
        };
        let required = |kind: StatKind| -> crate::Result<f64> {
            num(kind)?.ok_or_else(|| crate::Error::Parse {
                line: fields[&kind].0,
                message: format!("{} cannot be undefined", kind.name()),
            })
        };
        Ok(StatsReport {
            triangle_count: required(StatKind::TriangleCount)? as u64,
            avg_clustering: required(StatKind::AvgClustering)?,
            largest_cc: required(StatKind::LargestCc)? as usize,
            assortativity: num(StatKind::Assortativity)?,
            max_degree: required(StatKind::MaxDegree)? as usize,
        })
    }
}

impl fmt::Display for StatsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_record())
    }
}

/// Local clustering coefficient of every node; nodes of degree < 2 get 0.
pub fn local_clustering(g: &Graph) -> Vec<f64> {
    (0..g.node_count())
        .map(|v| {
            let nbrs: Vec<usize> = g.neighbors(v).iter().copied().collect();
            let k = nbrs.len();
            if k < 2 {
                return 0.0;
            }
            let mut links = 0usize;
            for (i, &a) in nbrs.iter().enumerate() {
                for &b in &nbrs[i + 1..] {
                    if g.has_edge(a, b) {
                        links += 1;
                    }
                }
            }
            2.0 * links as f64 / (k * (k - 1)) as f64
        })
        .collect()
}

fn triangle_count(g: &Graph) -> u64 {
    // Each triangle u<v<w is counted once, from its lowest edge (u, v).
    let mut count = 0u64;
    for &(u, v) in g.edges() {
        count += g
            .neighbors(u)
            .range(v + 1..)
            .filter(|&&w| g.neighbors(v).contains(&w))
            .count() as u64;
    }
    count
}

fn largest_component(g: &Graph) -> usize {
    let n = g.node_count();
    let mut seen = vec![false; n];
    let mut best = 0;
    let mut queue = VecDeque::new();
    for s in 0..n {
        if seen[s] {
            continue;
        }
        seen[s] = true;
        queue.push_back(s);
        let mut size = 0;
        while let Some(v) = queue.pop_front() {
            size += 1;
            for &u in g.neighbors(v) {
                if !seen[u] {
                    seen[u] = true;
                    queue.push_back(u);
                }
            }
        }
        best = best.max(size);
    }
    best
}

fn degree_assortativity(g: &Graph) -> Option<f64> {
    let deg = g.degrees();
    // Both orientations of each edge, so the two marginals coincide.
    let pairs = 2 * g.edge_count() as i128;
    if pairs == 0 {
        return None;
    }
    let (mut sx, mut sxx, mut sxy) = (0i128, 0i128, 0i128);
    for &(u, v) in g.edges() {
        let (du, dv) = (deg[u] as i128, deg[v] as i128);
        sx += du + dv;
        sxx += du * du + dv * dv;
        sxy += 2 * du * dv;
    }
    let var = pairs * sxx - sx * sx;
    if var == 0 {
        return None;
    }
    let cov = pairs * sxy - sx * sx;
    Some(cov as f64 / var as f64)
}

/// Triangle count, average local clustering, largest component size,
/// degree assortativity and maximum degree.
pub fn compute_stats(g: &Graph) -> StatsReport {
    let clustering = local_clustering(g);
    let n = g.node_count();
    StatsReport {
        triangle_count: triangle_count(g),
        avg_clustering: if n == 0 {
            0.0
        } else {
            clustering.iter().sum::<f64>() / n as f64
        },
        largest_cc: largest_component(g),
        assortativity: degree_assortativity(g),
        max_degree: g.degrees().into_iter().max().unwrap_or(0),
    }
}

/// Number of nodes at each occurring degree.
pub fn degree_histogram(g: &Graph) -> BTreeMap<usize, usize> {
    let mut hist = BTreeMap::new();
    for d in g.degrees() {
        *hist.entry(d).or_insert(0) += 1;
    }
    hist
}

/// Counts of local clustering coefficients in `bins` equal-width bins over
/// `[0, 1]`; the value 1 falls in the last bin.
pub fn clustering_histogram(g: &Graph, bins: usize) -> Vec<usize> {
    let mut hist = vec![0; bins];
    for c in local_clustering(g) {
        let b = ((c * bins as f64) as usize).min(bins - 1);
        hist[b] += 1;
    }
    hist
}

/// One percent-deviation cell.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Deviation {
    Percent(f64),
    /// The observed statistic is zero.
    NotComparable,
    /// Assortativity is undefined on one side.
    Undefined,
}

impl Deviation {
    pub fn value(self) -> Option<f64> {
        match self {
            Deviation::Percent(p) => Some(p),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DeviationReport {
    pub entries: Vec<(StatKind, Deviation)>,
}

impl DeviationReport {
    pub fn get(&self, kind: StatKind) -> Deviation {
        self.entries
            .iter()
            .find(|(k, _)| *k == kind)
            .map(|(_, d)| *d)
            .expect("every statistic has an entry")
    }
}

/// `100·|generated − observed| / |observed|` for every statistic.
pub fn percent_deviation(observed: &StatsReport, generated: &StatsReport) -> DeviationReport {
    let entries = StatKind::ALL
        .into_iter()
        .map(|kind| {
            let dev = match (observed.get(kind), generated.get(kind)) {
                (Some(o), Some(g)) if o != 0.0 => Deviation::Percent(100.0 * (g - o).abs() / o.abs()),
                (Some(_), Some(_)) => Deviation::NotComparable,
                _ => Deviation::Undefined,
            };
            (kind, dev)
        })
        .collect();
    DeviationReport { entries }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn complete(n: usize) -> Graph {
        let mut g = Graph::new(n);
        for u in 0..n {
            for v in u + 1..n {
                g.add_edge(u, v).unwrap();
            }
        }
        g
    }

    #[test]
    fn empty_graph() {
        let s = compute_stats(&Graph::new(5));
        assert_eq!(
            s,
            StatsReport {
                triangle_count: 0,
                avg_clustering: 0.0,
                largest_cc: 1,
                assortativity: None,
                max_degree: 0
            }
        );
    }

    #[test]
    fn complete_and_star() {
        let s = compute_stats(&complete(4));
        assert_eq!(s.triangle_count, 4);
        assert_eq!(s.avg_clustering, 1.0);
        assert_eq!(s.largest_cc, 4);
        assert_eq!(s.max_degree, 3);
        // K4 is regular.
        assert_eq!(s.assortativity, None);

        let star = Graph::from_edges(4, [(0, 1), (0, 2), (0, 3)]).unwrap();
        let s = compute_stats(&star);
        assert_eq!(s.assortativity, Some(-1.0));
        assert_eq!(s.avg_clustering, 0.0);
    }

    #[test]
    fn histograms() {
        let h = degree_histogram(&Graph::new(3));
        assert_eq!(h, BTreeMap::from([(0, 3)]));
        let tri = Graph::from_edges(3, [(0, 1), (1, 2), (0, 2)]).unwrap();
        assert_eq!(degree_histogram(&tri), BTreeMap::from([(2, 3)]));
        let path = Graph::from_edges(4, [(0, 1), (1, 2), (2, 3)]).unwrap();
        assert_eq!(degree_histogram(&path), BTreeMap::from([(1, 2), (2, 2)]));
        assert_eq!(clustering_histogram(&tri, 4), vec![0, 0, 0, 3]);
    }

    #[test]
    fn deviation_formula() {
        let obs = StatsReport {
            triangle_count: 200,
            avg_clustering: 0.5,
            largest_cc: 10,
            assortativity: Some(-0.2),
            max_degree: 0,
        };
        let generated = StatsReport {
            triangle_count: 150,
            assortativity: None,
            ..obs
        };
        let d = percent_deviation(&obs, &generated);
        assert_eq!(d.get(StatKind::TriangleCount), Deviation::Percent(25.0));
        assert_eq!(d.get(StatKind::AvgClustering), Deviation::Percent(0.0));
        assert_eq!(d.get(StatKind::Assortativity), Deviation::Undefined);
        assert_eq!(d.get(StatKind::MaxDegree), Deviation::NotComparable);
    }

    #[test]
    fn record_round_trip() {
        let s = StatsReport {
            triangle_count: 504,
            avg_clustering: 0.147,
            largest_cc: 100,
            assortativity: Some(-0.096),
            max_degree: 33,
        };
        assert_eq!(StatsReport::from_record(&s.to_record()).unwrap(), s);
        let undef = StatsReport {
            assortativity: None,
            ..s
        };
        assert!(undef.to_record().contains("assortativity\tundefined"));
        assert_eq!(StatsReport::from_record(&undef.to_record()).unwrap(), undef);
    }
}
