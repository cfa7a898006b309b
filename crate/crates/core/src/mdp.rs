//! Finite discounted-cost MDPs and the random-graph shortest-path family.
//!
//! State-action pairs are numbered `0..d` in state order, so a Q-function
//! is a plain vector `θ ∈ ℝᵈ` under the indicator basis.

use std::collections::{BTreeSet, VecDeque};
use std::fmt::Write as _;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{Mat, Vector};

/// Q-function indexed by pair.
pub type QTable = Vector;

/// Row-sum tolerance for transition laws.
pub const STOCHASTIC_TOL: f64 = 1e-12;

/// One feasible `(x, u)` pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Pair {
    pub state: usize,
    /// Action label; for graph MDPs the neighbor the agent aims for.
    pub action: usize,
    pub cost: f64,
    /// Sparse row of `P_u(x, ·)`, sorted by next state.
    pub next: Vec<(usize, f64)>,
    cumulative: Vec<f64>,
}

impl Pair {
    pub fn new(state: usize, action: usize, cost: f64, mut next: Vec<(usize, f64)>) -> Self {
        next.sort_by_key(|&(s, _)| s);
        let mut acc = 0.0;
        let cumulative = next
            .iter()
            .map(|&(_, p)| {
                acc += p;
                acc
            })
            .collect();
        Self {
            state,
            action,
            cost,
            next,
            cumulative,
        }
    }

    /// Draws `x' ~ P_u(x, ·)`.
    pub fn sample_next(&self, rng: &mut impl Rng) -> usize {
        let total = *self.cumulative.last().expect("empty transition row");
        let u = rng.gen::<f64>() * total;
        let k = self.cumulative.partition_point(|&c| c <= u);
        self.next[k.min(self.next.len() - 1)].0
    }
}

/// How a shortest-path MDP was built; kept for serialization.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphSpec {
    pub nodes: usize,
    pub edge_prob: f64,
    pub success_prob: f64,
    pub beta: f64,
    pub seed: u64,
    /// Undirected edges `(i, j)` with `i < j`.
    pub edges: Vec<(usize, usize)>,
}

/// A finite MDP with discount `β`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mdp {
    n_states: usize,
    beta: f64,
    pairs: Vec<Pair>,
    /// `pairs[offsets[x]..offsets[x+1]]` belong to state `x`.
    offsets: Vec<usize>,
    graph: Option<GraphSpec>,
}

impl Mdp {
    /// Builds an MDP from its pairs. Pairs are regrouped by state, keeping
    /// their relative order.
    pub fn new(n_states: usize, beta: f64, mut pairs: Vec<Pair>) -> Result<Self> {
        if !(beta > 0.0 && beta < 1.0) {
            return Err(Error::InvalidModel(format!("discount {beta} is not in (0,1)")));
        }
        if n_states == 0 {
            return Err(Error::InvalidModel("no states".into()));
        }
        pairs.sort_by_key(|p| p.state);
        for p in &pairs {
            if p.state >= n_states {
                return Err(Error::InvalidModel(format!("pair state {} out of range", p.state)));
            }
            if !p.cost.is_finite() {
                return Err(Error::InvalidModel(format!("non-finite cost at state {}", p.state)));
            }
            if p.next.is_empty() {
                return Err(Error::InvalidModel(format!(
                    "empty transition row at state {}",
                    p.state
                )));
            }
            let mut total = 0.0;
            for &(s, prob) in &p.next {
                if s >= n_states || !(0.0..=1.0).contains(&prob) {
                    return Err(Error::InvalidModel(format!(
                        "bad transition ({s}, {prob}) from state {}",
                        p.state
                    )));
                }
                total += prob;
            }
            if (total - 1.0).abs() > STOCHASTIC_TOL {
                return Err(Error::InvalidModel(format!(
                    "transition row from state {} sums to {total}",
                    p.state
                )));
            }
        }
        let mut offsets = vec![0; n_states + 1];
        for p in &pairs {
            offsets[p.state + 1] += 1;
        }
        for x in 0..n_states {
            if offsets[x + 1] == 0 {
                return Err(Error::InvalidModel(format!("state {x} has no feasible action")));
            }
            offsets[x + 1] += offsets[x];
        }
        Ok(Self {
            n_states,
            beta,
            pairs,
            offsets,
            graph: None,
        })
    }

    /// Shortest-path MDP on an undirected graph. The highest node is the
    /// absorbing, zero-cost goal with a single "stay" action. Elsewhere an
    /// action picks a neighbor: the move succeeds with `success_prob`, and
    /// otherwise the agent lands on a uniformly chosen neighbor (the intended
    /// one included). Every move costs 1.
    pub fn from_graph(spec: GraphSpec) -> Result<Self> {
        let GraphSpec {
            nodes,
            success_prob,
            beta,
            ..
        } = spec;
        if nodes < 2 {
            return Err(Error::InvalidModel("need at least two nodes".into()));
        }
        if !(success_prob > 0.0 && success_prob <= 1.0) {
            return Err(Error::InvalidModel(format!(
                "success probability {success_prob} is not in (0,1]"
            )));
        }
        let mut adj = vec![BTreeSet::new(); nodes];
        for &(i, j) in &spec.edges {
            if i >= nodes || j >= nodes || i == j {
                return Err(Error::InvalidModel(format!("bad edge ({i}, {j})")));
            }
            adj[i].insert(j);
            adj[j].insert(i);
        }
        let goal = nodes - 1;
        let mut pairs = Vec::new();
        for (x, nbrs) in adj.iter().enumerate() {
            if x == goal {
                pairs.push(Pair::new(goal, goal, 0.0, vec![(goal, 1.0)]));
                continue;
            }
            let slip = (1.0 - success_prob) / nbrs.len() as f64;
            for &y in nbrs {
                let next = nbrs
                    .iter()
                    .map(|&z| (z, if z == y { success_prob + slip } else { slip }))
                    .filter(|&(_, p)| p > 0.0)
                    .collect();
                pairs.push(Pair::new(x, y, 1.0, next));
            }
        }
        let mut mdp = Self::new(nodes, beta, pairs)?;
        if !connected(nodes, &adj) {
            return Err(Error::InvalidModel("graph is not connected".into()));
        }
        mdp.graph = Some(spec);
        Ok(mdp)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Number of state-action pairs.
    pub fn d(&self) -> usize {
        self.pairs.len()
    }

    pub fn pairs(&self) -> &[Pair] {
        &self.pairs
    }

    pub fn pair(&self, i: usize) -> &Pair {
        &self.pairs[i]
    }

    /// Pair indices feasible at `x`.
    pub fn actions(&self, x: usize) -> std::ops::Range<usize> {
        self.offsets[x]..self.offsets[x + 1]
    }

    pub fn graph(&self) -> Option<&GraphSpec> {
        self.graph.as_ref()
    }

    /// Goal node of a graph MDP.
    pub fn goal(&self) -> Option<usize> {
        self.graph.as_ref().map(|g| g.nodes - 1)
    }

    /// Dense `P_u(x, ·)` for pair `i`.
    pub fn transition_row(&self, i: usize) -> Vec<f64> {
        let mut row = vec![0.0; self.n_states];
        for &(s, p) in &self.pairs[i].next {
            row[s] += p;
        }
        row
    }

    /// `min_u Q(x, u)`.
    pub fn min_q(&self, q: &Vector, x: usize) -> f64 {
        self.actions(x).map(|i| q[i]).fold(f64::INFINITY, f64::min)
    }

    /// Greedy pair at `x`; ties go to the lowest index.
    pub fn greedy(&self, q: &Vector, x: usize) -> usize {
        let mut best = self.offsets[x];
        for i in self.actions(x).skip(1) {
            if q[i] < q[best] {
                best = i;
            }
        }
        best
    }

    /// Bellman operator `(TQ)(x,u) = c + β Σ P_u(x,x') min_{u'} Q(x',u')`.
    pub fn bellman(&self, q: &Vector) -> Vector {
        let v: Vec<f64> = (0..self.n_states).map(|x| self.min_q(q, x)).collect();
        Vector::from_iterator(
            self.d(),
            self.pairs.iter().map(|p| {
                p.cost + self.beta * p.next.iter().map(|&(s, pr)| pr * v[s]).sum::<f64>()
            }),
        )
    }

    /// Transition matrix of the chain on pairs under the greedy policy for
    /// `q`: `P(i, j) = P_{u_i}(x_i, x_j)` when `j` is greedy at `x_j`.
    pub fn greedy_pair_chain(&self, q: &Vector) -> Mat {
        let d = self.d();
        let greedy: Vec<usize> = (0..self.n_states).map(|x| self.greedy(q, x)).collect();
        let mut m = Mat::zeros(d, d);
        for (i, p) in self.pairs.iter().enumerate() {
            for &(s, pr) in &p.next {
                m[(i, greedy[s])] += pr;
            }
        }
        m
    }

    /// Plain-text form: a header of `key value` lines then the edge list.
    pub fn to_text(&self) -> Result<String> {
        let g = self
            .graph
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("only graph MDPs serialize".into()))?;
        let mut s = String::new();
        writeln!(s, "# shortest-path MDP, goal = node {}", g.nodes - 1).unwrap();
        writeln!(s, "nodes {}", g.nodes).unwrap();
        writeln!(s, "edge_prob {}", g.edge_prob).unwrap();
        writeln!(s, "success_prob {}", g.success_prob).unwrap();
        writeln!(s, "beta {}", g.beta).unwrap();
        writeln!(s, "seed {}", g.seed).unwrap();
        writeln!(s, "edges {}", g.edges.len()).unwrap();
        for (i, j) in &g.edges {
            writeln!(s, "{i} {j}").unwrap();
        }
        Ok(s)
    }

    /// Inverse of [`Mdp::to_text`].
    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'));
        let mut field = |key: &str| -> Result<String> {
            let line = lines
                .next()
                .ok_or_else(|| Error::Parse(format!("missing `{key}`")))?;
            match line.split_once(char::is_whitespace) {
                Some((k, v)) if k == key => Ok(v.trim().to_string()),
                _ => Err(Error::Parse(format!("expected `{key}`, found `{line}`"))),
            }
        };
        fn num<T: std::str::FromStr>(key: &str, raw: String) -> Result<T> {
            raw.parse()
                .map_err(|_| Error::Parse(format!("{key}: cannot parse `{raw}`")))
        }
        let nodes = num("nodes", field("nodes")?)?;
        let edge_prob = num("edge_prob", field("edge_prob")?)?;
        let success_prob = num("success_prob", field("success_prob")?)?;
        let beta = num("beta", field("beta")?)?;
        let seed = num("seed", field("seed")?)?;
        let count: usize = num("edges", field("edges")?)?;
        let mut edges = Vec::with_capacity(count);
        for line in lines.by_ref() {
            let mut it = line.split_whitespace();
            let (Some(i), Some(j), None) = (it.next(), it.next(), it.next()) else {
                return Err(Error::Parse(format!("bad edge line `{line}`")));
            };
            edges.push((num("edge", i.to_string())?, num("edge", j.to_string())?));
        }
        if edges.len() != count {
            return Err(Error::Parse(format!(
                "declared {count} edges, found {}",
                edges.len()
            )));
        }
        Self::from_graph(GraphSpec {
            nodes,
            edge_prob,
            success_prob,
            beta,
            seed,
            edges,
        })
    }
}

fn connected(n: usize, adj: &[BTreeSet<usize>]) -> bool {
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0]);
    seen[0] = true;
    while let Some(x) = queue.pop_front() {
        for &y in &adj[x] {
            if !seen[y] {
                seen[y] = true;
                queue.push_back(y);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

/// Random graph with i.i.d. edges of probability `edge_prob` plus the chain
/// edges `(i, i+1)`, turned into a shortest-path MDP.
pub fn random_graph_mdp(
    n_nodes: usize,
    edge_prob: f64,
    success_prob: f64,
    seed: u64,
    beta: f64,
) -> Result<Mdp> {
    if !(0.0..=1.0).contains(&edge_prob) {
        return Err(Error::InvalidModel(format!("edge probability {edge_prob} not in [0,1]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for i in 0..n_nodes {
        for j in i + 1..n_nodes {
            let draw = rng.gen::<f64>() < edge_prob;
            if draw || j == i + 1 {
                edges.push((i, j));
            }
        }
    }
    Mdp::from_graph(GraphSpec {
        nodes: n_nodes,
        edge_prob,
        success_prob,
        beta,
        seed,
        edges,
    })
}

/// Shipped instance with 19 state-action pairs.
pub const GRAPH_D19: &str = include_str!("../data/graph_d19.txt");
/// Shipped instance with 117 state-action pairs.
pub const GRAPH_D117: &str = include_str!("../data/graph_d117.txt");
/// Small six-node shortest-path problem (13 pairs).
pub const GRAPH_SIX: &str = include_str!("../data/graph_six.txt");

pub const MDP_PRESETS: &[&str] = &["six", "d19", "d117"];

/// Loads a shipped MDP by name.
pub fn preset(name: &str) -> Result<Mdp> {
    let text = match name {
        "six" => GRAPH_SIX,
        "d19" => GRAPH_D19,
        "d117" => GRAPH_D117,
        _ => {
            return Err(Error::InvalidArgument(format!(
                "unknown MDP preset `{name}` (known: {})",
                MDP_PRESETS.join(", ")
            )))
        }
    };
    Mdp::from_text(text)
}

/// Value iteration to a Bellman residual of at most `tol`.
pub fn q_value_iteration(mdp: &Mdp, tol: f64) -> Result<QTable> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance {tol} must be positive")));
    }
    let stop = tol * (1.0 - mdp.beta) / mdp.beta;
    let mut q = Vector::zeros(mdp.d());
    loop {
        let next = mdp.bellman(&q);
        let delta = (&next - &q).amax();
        q = next;
        if delta <= stop {
            return Ok(q);
        }
    }
}

/// Sup-norm Bellman residual `‖TQ − Q‖_∞`.
pub fn bellman_error(mdp: &Mdp, q: &Vector) -> f64 {
    (mdp.bellman(q) - q).amax()
}

/// One observed transition: pair index and the two states.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Transition {
    pub x: usize,
    pub pair: usize,
    pub x_next: usize,
}

/// How state-action pairs are visited.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExplorationKind {
    /// Follow the chain, choosing a uniformly random feasible action.
    Async,
    /// Cycle through all pairs in index order.
    Clock,
}

/// Stateful event source for one trial.
#[derive(Debug, Clone)]
pub struct ExplorationStream {
    kind: ExplorationKind,
    state: usize,
    position: usize,
}

impl ExplorationStream {
    /// Async streams start from a uniformly random state.
    pub fn new(kind: ExplorationKind, mdp: &Mdp, rng: &mut impl Rng) -> Self {
        let state = match kind {
            ExplorationKind::Async => rng.gen_range(0..mdp.n_states()),
            ExplorationKind::Clock => 0,
        };
        Self {
            kind,
            state,
            position: 0,
        }
    }

    pub fn kind(&self) -> ExplorationKind {
        self.kind
    }

    /// Next `(x, u, x')`. In async mode, an event at the goal is followed by
    /// a restart at a uniformly random state.
    pub fn next_event(&mut self, mdp: &Mdp, rng: &mut impl Rng) -> Transition {
        match self.kind {
            ExplorationKind::Clock => {
                let pair = self.position;
                self.position = (self.position + 1) % mdp.d();
                let p = mdp.pair(pair);
                Transition {
                    x: p.state,
                    pair,
                    x_next: p.sample_next(rng),
                }
            }
            ExplorationKind::Async => {
                let x = self.state;
                let acts = mdp.actions(x);
                let pair = rng.gen_range(acts);
                let x_next = mdp.pair(pair).sample_next(rng);
                self.state = if Some(x) == mdp.goal() {
                    rng.gen_range(0..mdp.n_states())
                } else {
                    x_next
                };
                Transition { x, pair, x_next }
            }
        }
    }
}
