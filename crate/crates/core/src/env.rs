//! Graph-formation environment and the off-policy replay buffer.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::sync::{Arc, RwLock};

use rand::Rng;

use crate::encoder::{pool_state, Encoder};
use crate::error::{Error, Result};
use crate::graph::{canonical, Edge, Graph};
use crate::nn::Matrix;
use crate::policy::Action;

#[derive(Clone, Debug, PartialEq)]
pub struct EnvConfig {
    /// An episode ends once every existing edge has been re-selected this
    /// many times.
    pub k_repeat: u32,
    pub max_path_length: usize,
    pub seed: u64,
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_repeat < 1 || self.max_path_length < 1 {
            return Err(Error::Argument(
                "k_repeat and max_path_length must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// The edge set of one environment state: a prefix of the episode's
/// append-only edge log.
#[derive(Clone)]
pub struct EdgeSnapshot {
    log: Arc<RwLock<Vec<Edge>>>,
    len: usize,
}

impl EdgeSnapshot {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn edges(&self) -> Vec<Edge> {
        let log = self.log.read().expect("edge log lock poisoned");
        log[..self.len].to_vec()
    }
}

impl fmt::Debug for EdgeSnapshot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "EdgeSnapshot({} edges)", self.len)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EdgeEvent {
    New,
    Repeat,
    SelfLoop,
}

impl EdgeEvent {
    pub fn as_str(self) -> &'static str {
        match self {
            EdgeEvent::New => "new",
            EdgeEvent::Repeat => "repeat",
            EdgeEvent::SelfLoop => "selfloop",
        }
    }
}

/// Replay record `(s_t, a_t, r_t, s_{t+1}, A_{t+1})`. The edge set of `s_t`
/// is kept as well so the state can be re-encoded with fresh encoder
/// parameters.
#[derive(Clone, Debug)]
pub struct Transition {
    pub s: Vec<f64>,
    pub a: Action,
    pub r: f64,
    pub s_next: Vec<f64>,
    pub adjacency: EdgeSnapshot,
    pub adjacency_next: EdgeSnapshot,
}

/// Everything `step` produces except the action.
#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub v1: usize,
    pub v2: usize,
    pub step_index: usize,
    pub event: EdgeEvent,
    pub reward: f64,
    pub s: Vec<f64>,
    pub s_next: Vec<f64>,
    pub adjacency: EdgeSnapshot,
    pub adjacency_next: EdgeSnapshot,
    pub terminal: bool,
}

impl StepOutcome {
    pub fn into_transition(self, action: Action) -> Transition {
        Transition {
            s: self.s,
            a: action,
            r: self.reward,
            s_next: self.s_next,
            adjacency: self.adjacency,
            adjacency_next: self.adjacency_next,
        }
    }

    /// `step<TAB>v1<TAB>v2<TAB>event`
    pub fn trace_line(&self) -> String {
        format!("{}\t{}\t{}\t{}", self.step_index, self.v1, self.v2, self.event.as_str())
    }
}

/// Partial graph, its embeddings and per-edge repeat counters.
#[derive(Clone, Debug)]
pub struct EnvState {
    pub graph: Graph,
    pub z: Matrix,
    pub pooled: Vec<f64>,
    pub repeat_counts: BTreeMap<Edge, u32>,
    pub step_index: usize,
}

/// Single-threaded environment over a fixed node set.
pub struct GraphEnv {
    config: EnvConfig,
    features: Matrix,
    state: EnvState,
    log: Arc<RwLock<Vec<Edge>>>,
    saturated: usize,
}

impl GraphEnv {
    /// Starts at the edgeless graph on `node_set`'s nodes. `node_set` must
    /// carry features and no edges.
    pub fn new(config: EnvConfig, node_set: &Graph, encoder: &Encoder) -> Result<Self> {
        config.validate()?;
        if node_set.edge_count() != 0 {
            return Err(Error::Argument("environment reset needs an edgeless node set".into()));
        }
        Self::with_initial_graph(config, node_set, encoder)
    }

    /// Starts from `initial`'s edges; used to continue construction from an
    /// observed graph.
    pub fn with_initial_graph(config: EnvConfig, initial: &Graph, encoder: &Encoder) -> Result<Self> {
        config.validate()?;
        let features = initial
            .features()
            .cloned()
            .ok_or_else(|| Error::Argument("node set has no features".into()))?;
        let mut env = Self {
            config,
            features,
            state: EnvState {
                graph: initial.clone(),
                z: Matrix::zeros(0, 0),
                pooled: Vec::new(),
                repeat_counts: BTreeMap::new(),
                step_index: 0,
            },
            log: Arc::new(RwLock::new(Vec::new())),
            saturated: 0,
        };
        env.reset_to(initial, encoder)?;
        Ok(env)
    }

    /// Back to the edgeless graph.
    pub fn reset(&mut self, encoder: &Encoder) -> Result<&EnvState> {
        let empty = self.state.graph.without_edges();
        self.reset_to(&empty, encoder)?;
        Ok(&self.state)
    }

    fn reset_to(&mut self, start: &Graph, encoder: &Encoder) -> Result<()> {
        let mut graph = start.clone();
        graph.set_features(self.features.clone())?;
        let z = encoder.encode(&self.features, graph.edges())?;
        let pooled = pool_state(&z);
        self.log = Arc::new(RwLock::new(graph.edges().to_vec()));
        self.state = EnvState {
            repeat_counts: graph.edges().iter().map(|&e| (e, 0)).collect(),
            graph,
            z,
            pooled,
            step_index: 0,
        };
        self.saturated = 0;
        Ok(())
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn snapshot(&self) -> EdgeSnapshot {
        EdgeSnapshot {
            log: Arc::clone(&self.log),
            len: self.state.graph.edge_count(),
        }
    }

    pub fn is_terminal(&self) -> bool {
        let edges = self.state.graph.edge_count();
        (edges >= 1 && self.saturated == edges) || self.state.step_index >= self.config.max_path_length
    }

    /// Applies the edge action `{v1, v2}`. Self-loops are rejected without
    /// changing the state; repeats bump the edge's counter; new edges are
    /// inserted and trigger a full re-encode. The reward is
    /// `reward_fn(pooled s_{t+1})` in every case.
    pub fn step(
        &mut self,
        v1: usize,
        v2: usize,
        encoder: &Encoder,
        reward_fn: &dyn Fn(&[f64]) -> f64,
    ) -> Result<StepOutcome> {
        let n = self.state.graph.node_count();
        for v in [v1, v2] {
            if v >= n {
                return Err(Error::Argument(format!("node {v} out of range for {n} nodes")));
            }
        }
        let s = self.state.pooled.clone();
        let adjacency = self.snapshot();
        let event = if v1 == v2 {
            EdgeEvent::SelfLoop
        } else if self.state.graph.has_edge(v1, v2) {
            let count = self
                .state
                .repeat_counts
                .get_mut(&canonical(v1, v2))
                .expect("every present edge has a counter");
            *count += 1;
            if *count == self.config.k_repeat {
                self.saturated += 1;
            }
            EdgeEvent::Repeat
        } else {
            self.state.graph.add_edge(v1, v2)?;
            self.state.repeat_counts.insert(canonical(v1, v2), 0);
            self.log
                .write()
                .expect("edge log lock poisoned")
                .push(canonical(v1, v2));
            self.state.z = encoder.encode(&self.features, self.state.graph.edges())?;
            self.state.pooled = pool_state(&self.state.z);
            EdgeEvent::New
        };
        self.state.step_index += 1;
        let reward = reward_fn(&self.state.pooled);
        Ok(StepOutcome {
            v1,
            v2,
            step_index: self.state.step_index - 1,
            event,
            reward,
            s,
            s_next: self.state.pooled.clone(),
            adjacency,
            adjacency_next: self.snapshot(),
            terminal: self.is_terminal(),
        })
    }

    /// Recomputes `Z` for the current edge set, e.g. after encoder updates.
    pub fn refresh_embeddings(&mut self, encoder: &Encoder) -> Result<()> {
        self.state.z = encoder.encode(&self.features, self.state.graph.edges())?;
        self.state.pooled = pool_state(&self.state.z);
        Ok(())
    }
}

/// Fixed-capacity FIFO of transitions.
pub struct ReplayBuffer {
    capacity: usize,
    entries: VecDeque<Transition>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1, "replay capacity must be positive");
        Self {
            capacity,
            entries: VecDeque::with_capacity(capacity.min(1 << 16)),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, t: Transition) {
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(t);
    }

    pub fn get(&self, i: usize) -> Option<&Transition> {
        self.entries.get(i)
    }

    /// Uniform sampling with replacement.
    pub fn sample_batch<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<Vec<&Transition>> {
        if self.entries.len() < batch_size || batch_size == 0 {
            return Err(Error::NotReady {
                available: self.entries.len(),
                requested: batch_size,
            });
        }
        Ok((0..batch_size)
            .map(|_| &self.entries[rng.gen_range(0..self.entries.len())])
            .collect())
    }
}
