//! Undirected simple graphs and the structural statistics used to compare
//! generated graphs against an observed one.

mod stats;

use std::collections::{BTreeMap, BTreeSet};

pub use stats::{
    clustering_histogram, compute_stats, degree_histogram, local_clustering, percent_deviation,
    Deviation, DeviationReport, StatKind, StatsReport,
};

use crate::error::{Error, Result};
use crate::nn::Matrix;

/// Canonical undirected edge, smaller endpoint first.
pub type Edge = (usize, usize);

/// Orders an endpoint pair so the smaller index comes first.
pub fn canonical(u: usize, v: usize) -> Edge {
    if u < v {
        (u, v)
    } else {
        (v, u)
    }
}

/// Fixed node set with a growable undirected edge set.
///
/// Edges are kept both as an insertion-ordered list and as per-node sorted
/// neighbor sets, so iteration order is deterministic.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    n: usize,
    edges: Vec<Edge>,
    adj: Vec<BTreeSet<usize>>,
    features: Option<Matrix>,
    edge_types: Option<BTreeMap<Edge, u32>>,
}

impl Graph {
    /// Edgeless graph on `n` nodes.
    pub fn new(n: usize) -> Self {
        Self {
            n,
            edges: Vec::new(),
            adj: vec![BTreeSet::new(); n],
            features: None,
            edge_types: None,
        }
    }

    pub fn from_edges(n: usize, edges: impl IntoIterator<Item = Edge>) -> Result<Self> {
        let mut g = Self::new(n);
        for (u, v) in edges {
            g.add_edge(u, v)?;
        }
        Ok(g)
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Edges in insertion order.
    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn neighbors(&self, v: usize) -> &BTreeSet<usize> {
        &self.adj[v]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adj[v].len()
    }

    pub fn degrees(&self) -> Vec<usize> {
        self.adj.iter().map(BTreeSet::len).collect()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        u < self.n && v < self.n && self.adj[u].contains(&v)
    }

    fn check_node(&self, v: usize) -> Result<()> {
        if v >= self.n {
            return Err(Error::Argument(format!(
                "node index {v} out of range for {} nodes",
                self.n
            )));
        }
        Ok(())
    }

    /// Inserts `{u, v}`. Returns `Ok(false)` if the edge already existed.
    pub fn add_edge(&mut self, u: usize, v: usize) -> Result<bool> {
        self.check_node(u)?;
        self.check_node(v)?;
        if u == v {
            return Err(Error::Argument(format!("self-loop on node {u}")));
        }
        if !self.adj[u].insert(v) {
            return Ok(false);
        }
        self.adj[v].insert(u);
        self.edges.push(canonical(u, v));
        Ok(true)
    }

    /// Same node set and features, no edges.
    pub fn without_edges(&self) -> Graph {
        Graph {
            n: self.n,
            edges: Vec::new(),
            adj: vec![BTreeSet::new(); self.n],
            features: self.features.clone(),
            edge_types: None,
        }
    }

    pub fn features(&self) -> Option<&Matrix> {
        self.features.as_ref()
    }

    pub fn set_features(&mut self, features: Matrix) -> Result<()> {
        if features.rows() != self.n {
            return Err(Error::Argument(format!(
                "feature matrix has {} rows for {} nodes",
                features.rows(),
                self.n
            )));
        }
        self.features = Some(features);
        Ok(())
    }

    pub fn edge_types(&self) -> Option<&BTreeMap<Edge, u32>> {
        self.edge_types.as_ref()
    }

    pub fn set_edge_type(&mut self, u: usize, v: usize, ty: u32) {
        self.edge_types
            .get_or_insert_with(BTreeMap::new)
            .insert(canonical(u, v), ty);
    }

    /// Graph with node `v` renamed to `perm[v]`; features move with nodes.
    pub fn relabel(&self, perm: &[usize]) -> Result<Graph> {
        assert_eq!(perm.len(), self.n, "permutation length mismatch");
        let mut g = Graph::from_edges(self.n, self.edges.iter().map(|&(u, v)| (perm[u], perm[v])))?;
        if let Some(f) = &self.features {
            let mut moved = Matrix::zeros(f.rows(), f.cols());
            for (v, &p) in perm.iter().enumerate() {
                moved.row_mut(p).copy_from_slice(f.row(v));
            }
            g.features = Some(moved);
        }
        Ok(g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn undirected_canonical_storage() {
        let mut g = Graph::new(4);
        assert!(g.add_edge(2, 1).unwrap());
        assert!(!g.add_edge(1, 2).unwrap());
        assert_eq!(g.edges(), &[(1, 2)]);
        assert!(g.has_edge(1, 2) && g.has_edge(2, 1));
        assert!(!g.has_edge(0, 1));
    }

    #[test]
    fn rejects_invalid_edges() {
        let mut g = Graph::new(3);
        assert!(g.add_edge(1, 1).is_err());
        assert!(g.add_edge(0, 3).is_err());
        assert_eq!(g.edge_count(), 0);
    }

    #[test]
    fn relabel_moves_edges_and_features() {
        let mut g = Graph::from_edges(3, [(0, 1)]).unwrap();
        g.set_features(Matrix::from_rows(&[vec![0.0], vec![1.0], vec![2.0]]))
            .unwrap();
        let h = g.relabel(&[2, 0, 1]).unwrap();
        assert!(h.has_edge(2, 0));
        assert_eq!(h.features().unwrap().data(), &[1.0, 2.0, 0.0]);
    }
}
