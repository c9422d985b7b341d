//! Weighted graphs: finite graphs in CSR form, lazily explored infinite
//! graphs behind [`GraphOracle`], exhaustions, truncations and the
//! complement-component bookkeeping used to label ends.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type VertexKey = u64;

/// Relative tolerance used when comparing the two directions of an edge.
const SYMMETRY_TOL: f64 = 1e-12;

/// Finite connected graph with positive conductances, stored as CSR.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedGraph {
    offsets: Vec<usize>,
    targets: Vec<usize>,
    weights: Vec<f64>,
    pi: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct GraphFile {
    vertices: usize,
    edges: Vec<(usize, usize, f64)>,
}

impl WeightedGraph {
    /// Builds a graph from an edge list. Parallel edges are merged by
    /// summing conductances. Self-loops, non-positive conductances and
    /// disconnected graphs are rejected.
    pub fn from_edges(n: usize, edges: &[(usize, usize, f64)]) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidGraph("graph has no vertices".into()));
        }
        let mut merged: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for &(u, v, c) in edges {
            if u >= n || v >= n {
                return Err(Error::InvalidGraph(format!(
                    "edge ({u}, {v}) references a vertex outside 0..{n}"
                )));
            }
            if u == v {
                return Err(Error::InvalidGraph(format!("self-loop at vertex {u}")));
            }
            if !(c > 0.0) || !c.is_finite() {
                return Err(Error::InvalidGraph(format!(
                    "edge ({u}, {v}) has conductance {c}"
                )));
            }
            *merged.entry((u.min(v), u.max(v))).or_insert(0.0) += c;
        }
        let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for (&(u, v), &c) in &merged {
            adj[u].push((v, c));
            adj[v].push((u, c));
        }
        let g = Self::from_adjacency(adj);
        if !g.is_connected() {
            return Err(Error::InvalidGraph("graph is not connected".into()));
        }
        Ok(g)
    }

    fn from_adjacency(adj: Vec<Vec<(usize, f64)>>) -> Self {
        let mut offsets = Vec::with_capacity(adj.len() + 1);
        let mut targets = Vec::new();
        let mut weights = Vec::new();
        let mut pi = Vec::with_capacity(adj.len());
        offsets.push(0);
        for mut row in adj {
            row.sort_by_key(|&(v, _)| v);
            pi.push(row.iter().map(|&(_, c)| c).sum());
            for (v, c) in row {
                targets.push(v);
                weights.push(c);
            }
            offsets.push(targets.len());
        }
        Self {
            offsets,
            targets,
            weights,
            pi,
        }
    }

    pub fn vertex_count(&self) -> usize {
        self.pi.len()
    }

    pub fn edge_count(&self) -> usize {
        self.targets.len() / 2
    }

    /// Neighbours of `v` with conductances, sorted by neighbour index.
    pub fn neighbors(&self, v: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.offsets[v]..self.offsets[v + 1];
        self.targets[r.clone()]
            .iter()
            .copied()
            .zip(self.weights[r].iter().copied())
    }

    pub fn degree(&self, v: usize) -> usize {
        self.offsets[v + 1] - self.offsets[v]
    }

    /// Stationary measure: total conductance at `v`.
    pub fn pi(&self, v: usize) -> f64 {
        self.pi[v]
    }

    pub fn pi_all(&self) -> &[f64] {
        &self.pi
    }

    pub fn conductance(&self, u: usize, v: usize) -> Option<f64> {
        let r = self.offsets[u]..self.offsets[u + 1];
        self.targets[r.clone()]
            .binary_search(&v)
            .ok()
            .map(|i| self.weights[r.start + i])
    }

    /// Undirected edges `(u, v, c)` with `u < v`, in lexicographic order.
    pub fn edges(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::with_capacity(self.edge_count());
        for u in 0..self.vertex_count() {
            for (v, c) in self.neighbors(u) {
                if u < v {
                    out.push((u, v, c));
                }
            }
        }
        out
    }

    pub fn is_connected(&self) -> bool {
        let n = self.vertex_count();
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        let mut count = 1;
        while let Some(u) = stack.pop() {
            for (v, _) in self.neighbors(u) {
                if !seen[v] {
                    seen[v] = true;
                    count += 1;
                    stack.push(v);
                }
            }
        }
        count == n
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let file: GraphFile = serde_json::from_str(s)?;
        Self::from_edges(file.vertices, &file.edges)
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_json_string(&self) -> String {
        let file = GraphFile {
            vertices: self.vertex_count(),
            edges: self.edges(),
        };
        serde_json::to_string(&file).expect("graph serialization cannot fail")
    }

    /// Complete graph on `n` vertices with unit conductances.
    pub fn complete(n: usize) -> Result<Self> {
        let mut edges = Vec::new();
        for u in 0..n {
            for v in u + 1..n {
                edges.push((u, v, 1.0));
            }
        }
        Self::from_edges(n, &edges)
    }

    /// Cycle on `n >= 3` vertices with unit conductances.
    pub fn cycle(n: usize) -> Result<Self> {
        if n < 3 {
            return Err(Error::InvalidParameter(format!("cycle needs n >= 3, got {n}")));
        }
        let edges: Vec<_> = (0..n).map(|i| (i, (i + 1) % n, 1.0)).collect();
        Self::from_edges(n, &edges)
    }

    /// Path 0 - 1 - ... - (n-1) with unit conductances.
    pub fn path(n: usize) -> Result<Self> {
        let edges: Vec<_> = (1..n).map(|i| (i - 1, i, 1.0)).collect();
        Self::from_edges(n, &edges)
    }
}

/// Local view of a (possibly infinite) locally finite weighted graph.
pub trait GraphOracle: Send + Sync {
    /// Distinguished base vertex; exhaustions by balls are centred here.
    fn root(&self) -> VertexKey;

    /// Neighbours of `v` with conductances. Repeated neighbours are summed.
    fn neighbors(&self, v: VertexKey) -> Vec<(VertexKey, f64)>;

    /// Number of vertices if the graph is finite.
    fn finite_size(&self) -> Option<usize> {
        None
    }

    fn pi(&self, v: VertexKey) -> f64 {
        self.neighbors(v).iter().map(|&(_, c)| c).sum()
    }
}

/// Neighbour list with repeated keys merged.
pub(crate) fn merged_neighbors(oracle: &dyn GraphOracle, v: VertexKey) -> Vec<(VertexKey, f64)> {
    let mut raw = oracle.neighbors(v);
    if raw.len() < 2 {
        return raw;
    }
    let mut seen: HashMap<VertexKey, usize> = HashMap::with_capacity(raw.len());
    let mut out: Vec<(VertexKey, f64)> = Vec::with_capacity(raw.len());
    for (u, c) in raw.drain(..) {
        match seen.get(&u) {
            Some(&i) => out[i].1 += c,
            None => {
                seen.insert(u, out.len());
                out.push((u, c));
            }
        }
    }
    out
}

/// The integer lattice Z^d with unit conductances.
#[derive(Clone, Debug)]
pub struct Lattice {
    dim: usize,
    bits: u32,
}

impl Lattice {
    pub fn new(dim: usize) -> Result<Self> {
        if !(1..=8).contains(&dim) {
            return Err(Error::InvalidParameter(format!(
                "lattice dimension must be in 1..=8, got {dim}"
            )));
        }
        Ok(Self {
            dim,
            bits: (64 / dim as u32).min(63),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn bias(&self) -> i64 {
        1i64 << (self.bits - 1)
    }

    pub fn encode(&self, coords: &[i64]) -> VertexKey {
        assert_eq!(coords.len(), self.dim);
        let mask = if self.bits == 64 { u64::MAX } else { (1u64 << self.bits) - 1 };
        let mut key = 0u64;
        for (i, &x) in coords.iter().enumerate() {
            let shifted = x + self.bias();
            assert!(
                shifted >= 0 && (shifted as u64) <= mask,
                "lattice coordinate {x} out of range"
            );
            key |= (shifted as u64) << (self.bits * i as u32);
        }
        key
    }

    pub fn decode(&self, key: VertexKey) -> Vec<i64> {
        let mask = if self.bits == 64 { u64::MAX } else { (1u64 << self.bits) - 1 };
        (0..self.dim)
            .map(|i| ((key >> (self.bits * i as u32)) & mask) as i64 - self.bias())
            .collect()
    }
}

impl GraphOracle for Lattice {
    fn root(&self) -> VertexKey {
        self.encode(&vec![0; self.dim])
    }

    fn neighbors(&self, v: VertexKey) -> Vec<(VertexKey, f64)> {
        let x = self.decode(v);
        let mut out = Vec::with_capacity(2 * self.dim);
        let mut y = x.clone();
        for i in 0..self.dim {
            y[i] = x[i] + 1;
            out.push((self.encode(&y), 1.0));
            y[i] = x[i] - 1;
            out.push((self.encode(&y), 1.0));
            y[i] = x[i];
        }
        out
    }

    fn pi(&self, _v: VertexKey) -> f64 {
        2.0 * self.dim as f64
    }
}

/// Rooted b-ary tree in heap order: the children of `v` are
/// `b*v + 1 ..= b*v + b`. The edge from a vertex at depth `d` to its child
/// carries conductance `lambda^d`; `lambda = 1` gives the regular tree.
#[derive(Clone, Debug)]
pub struct Tree {
    branching: u64,
    lambda: f64,
}

impl Tree {
    pub fn regular(b: usize) -> Result<Self> {
        Self::biased(b, 1.0)
    }

    pub fn biased(b: usize, lambda: f64) -> Result<Self> {
        if b < 2 {
            return Err(Error::InvalidParameter(format!(
                "tree branching must be at least 2, got {b}"
            )));
        }
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "tree bias must be positive, got {lambda}"
            )));
        }
        Ok(Self {
            branching: b as u64,
            lambda,
        })
    }

    pub fn branching(&self) -> usize {
        self.branching as usize
    }

    pub fn parent(&self, v: VertexKey) -> Option<VertexKey> {
        (v > 0).then(|| (v - 1) / self.branching)
    }

    pub fn children(&self, v: VertexKey) -> impl Iterator<Item = VertexKey> {
        let b = self.branching;
        let first = v
            .checked_mul(b)
            .and_then(|x| x.checked_add(1))
            .expect("tree vertex key overflow");
        first..first + b
    }

    pub fn depth(&self, mut v: VertexKey) -> usize {
        let mut d = 0;
        while v > 0 {
            v = (v - 1) / self.branching;
            d += 1;
        }
        d
    }

    fn edge_weight(&self, parent_depth: usize) -> f64 {
        if self.lambda == 1.0 {
            1.0
        } else {
            self.lambda.powi(parent_depth as i32)
        }
    }
}

impl GraphOracle for Tree {
    fn root(&self) -> VertexKey {
        0
    }

    fn neighbors(&self, v: VertexKey) -> Vec<(VertexKey, f64)> {
        let d = self.depth(v);
        let mut out = Vec::with_capacity(self.branching as usize + 1);
        if let Some(p) = self.parent(v) {
            out.push((p, self.edge_weight(d - 1)));
        }
        let w = self.edge_weight(d);
        out.extend(self.children(v).map(|c| (c, w)));
        out
    }
}

/// A finite graph seen through the oracle interface; keys are vertex indices.
#[derive(Clone, Debug)]
pub struct FiniteOracle {
    graph: WeightedGraph,
    root: usize,
}

impl FiniteOracle {
    pub fn new(graph: WeightedGraph) -> Self {
        Self { graph, root: 0 }
    }

    pub fn with_root(graph: WeightedGraph, root: usize) -> Result<Self> {
        if root >= graph.vertex_count() {
            return Err(Error::InvalidParameter(format!("root {root} out of range")));
        }
        Ok(Self { graph, root })
    }

    pub fn graph(&self) -> &WeightedGraph {
        &self.graph
    }
}

impl GraphOracle for FiniteOracle {
    fn root(&self) -> VertexKey {
        self.root as VertexKey
    }

    fn neighbors(&self, v: VertexKey) -> Vec<(VertexKey, f64)> {
        let v = v as usize;
        if v >= self.graph.vertex_count() {
            return Vec::new();
        }
        self.graph
            .neighbors(v)
            .map(|(u, c)| (u as VertexKey, c))
            .collect()
    }

    fn finite_size(&self) -> Option<usize> {
        Some(self.graph.vertex_count())
    }

    fn pi(&self, v: VertexKey) -> f64 {
        self.graph.pi(v as usize)
    }
}

/// Named graph families.
#[derive(Clone, Debug)]
pub enum ZooSpec {
    LatticeZd { d: usize },
    RegularTree { b: usize },
    BiasedTree { b: usize, lambda: f64 },
    Finite(WeightedGraph),
}

impl ZooSpec {
    /// Parses `lattice:D`, `tree:B`, `biased:B:LAMBDA`, or a path to a graph
    /// JSON file.
    pub fn parse(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let num = |p: &str| -> Result<usize> {
            p.parse()
                .map_err(|_| Error::InvalidParameter(format!("bad integer '{p}' in '{s}'")))
        };
        match parts.as_slice() {
            ["lattice", d] => Ok(Self::LatticeZd { d: num(d)? }),
            ["tree", b] => Ok(Self::RegularTree { b: num(b)? }),
            ["biased", b, l] => Ok(Self::BiasedTree {
                b: num(b)?,
                lambda: l
                    .parse()
                    .map_err(|_| Error::InvalidParameter(format!("bad bias '{l}'")))?,
            }),
            _ if Path::new(s).exists() => Ok(Self::Finite(WeightedGraph::from_json_file(s)?)),
            _ => Err(Error::InvalidParameter(format!(
                "unknown graph '{s}' (expected lattice:D, tree:B, biased:B:L or a JSON file)"
            ))),
        }
    }

    pub fn build(&self) -> Result<Arc<dyn GraphOracle>> {
        Ok(match self {
            Self::LatticeZd { d } => Arc::new(Lattice::new(*d)?),
            Self::RegularTree { b } => Arc::new(Tree::regular(*b)?),
            Self::BiasedTree { b, lambda } => Arc::new(Tree::biased(*b, *lambda)?),
            Self::Finite(g) => Arc::new(FiniteOracle::new(g.clone())),
        })
    }
}

pub fn zoo(spec: &ZooSpec) -> Result<Arc<dyn GraphOracle>> {
    spec.build()
}

type LevelFn = dyn Fn(usize) -> Vec<VertexKey> + Send + Sync;

/// Increasing sequence of finite connected vertex sets V_1 ⊂ V_2 ⊂ ...
#[derive(Clone)]
pub enum Exhaustion {
    /// Graph-distance balls around the root. Level `n` is the ball of radius `n`.
    Ball,
    /// Caller-supplied level sets.
    Custom(Arc<LevelFn>),
}

impl std::fmt::Debug for Exhaustion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Ball => write!(f, "Ball"),
            Self::Custom(_) => write!(f, "Custom"),
        }
    }
}

impl Exhaustion {
    pub fn custom(f: impl Fn(usize) -> Vec<VertexKey> + Send + Sync + 'static) -> Self {
        Self::Custom(Arc::new(f))
    }

    /// The level set V_n in a deterministic order.
    pub fn level_set(&self, oracle: &dyn GraphOracle, n: usize) -> Result<Vec<VertexKey>> {
        if n == 0 {
            return Err(Error::InvalidParameter("levels start at 1".into()));
        }
        let set = match self {
            Self::Ball => ball(oracle, n).into_iter().map(|(k, _)| k).collect(),
            Self::Custom(f) => f(n),
        };
        if set.is_empty() {
            return Err(Error::InvalidParameter(format!("level set {n} is empty")));
        }
        Ok(set)
    }

    /// Exhaustion level of each vertex of V_n: the first `k >= 1` with the
    /// vertex in V_k.
    pub fn vertex_levels(
        &self,
        oracle: &dyn GraphOracle,
        n: usize,
    ) -> Result<HashMap<VertexKey, usize>> {
        match self {
            Self::Ball => Ok(ball(oracle, n)
                .into_iter()
                .map(|(k, d)| (k, d.max(1)))
                .collect()),
            Self::Custom(_) => {
                let mut out = HashMap::new();
                for k in 1..=n {
                    for v in self.level_set(oracle, k)? {
                        out.entry(v).or_insert(k);
                    }
                }
                Ok(out)
            }
        }
    }

    /// Smallest level `n >= from` whose level set contains every vertex of
    /// `required`, searching up to `n_max`.
    pub fn level_containing(
        &self,
        oracle: &dyn GraphOracle,
        required: &[VertexKey],
        from: usize,
        n_max: usize,
    ) -> Result<usize> {
        let mut n = from.max(1);
        if let Self::Ball = self {
            return match farthest_distance(oracle, required, n_max) {
                Some(d) => Ok(n.max(d)),
                None => Err(Error::InvalidParameter(format!(
                    "some required vertex is farther than {n_max} from the root"
                ))),
            };
        }
        while n <= n_max {
            let set: HashSet<VertexKey> = self.level_set(oracle, n)?.into_iter().collect();
            if required.iter().all(|v| set.contains(v)) {
                return Ok(n);
            }
            n += 1;
        }
        Err(Error::InvalidParameter(format!(
            "required vertices not contained in any level up to {n_max}"
        )))
    }

    /// Checks nestedness and connectivity of V_1..V_n.
    pub fn check(&self, oracle: &dyn GraphOracle, n: usize) -> Result<()> {
        let mut prev: HashSet<VertexKey> = HashSet::new();
        for k in 1..=n {
            let set: HashSet<VertexKey> = self.level_set(oracle, k)?.into_iter().collect();
            if let Some(v) = prev.iter().find(|v| !set.contains(v)) {
                return Err(Error::InvalidParameter(format!(
                    "exhaustion not nested: vertex {v} leaves at level {k}"
                )));
            }
            let start = *set.iter().next().unwrap();
            let mut seen = HashSet::from([start]);
            let mut stack = vec![start];
            while let Some(u) = stack.pop() {
                for (w, _) in oracle.neighbors(u) {
                    if set.contains(&w) && seen.insert(w) {
                        stack.push(w);
                    }
                }
            }
            if seen.len() != set.len() {
                return Err(Error::InvalidParameter(format!(
                    "level set {k} is not connected"
                )));
            }
            prev = set;
        }
        Ok(())
    }
}

/// Breadth-first ball of radius `r` around the root, as (key, distance)
/// in BFS order.
pub fn ball(oracle: &dyn GraphOracle, r: usize) -> Vec<(VertexKey, usize)> {
    let root = oracle.root();
    let mut dist: HashMap<VertexKey, usize> = HashMap::from([(root, 0)]);
    let mut order = vec![(root, 0)];
    let mut queue = VecDeque::from([root]);
    while let Some(u) = queue.pop_front() {
        let d = dist[&u];
        if d == r {
            continue;
        }
        for (w, _) in oracle.neighbors(u) {
            if let std::collections::hash_map::Entry::Vacant(e) = dist.entry(w) {
                e.insert(d + 1);
                order.push((w, d + 1));
                queue.push_back(w);
            }
        }
    }
    order
}

/// Largest root distance among `targets`, exploring no farther than `limit`.
fn farthest_distance(oracle: &dyn GraphOracle, targets: &[VertexKey], limit: usize) -> Option<usize> {
    let mut missing: HashSet<VertexKey> = targets.iter().copied().collect();
    let root = oracle.root();
    let mut dist: HashMap<VertexKey, usize> = HashMap::from([(root, 0)]);
    let mut queue = VecDeque::from([root]);
    let mut far = 0;
    missing.remove(&root);
    while let Some(u) = queue.pop_front() {
        if missing.is_empty() {
            return Some(far);
        }
        let d = dist[&u];
        if d == limit {
            continue;
        }
        for (w, _) in oracle.neighbors(u) {
            if let std::collections::hash_map::Entry::Vacant(e) = dist.entry(w) {
                e.insert(d + 1);
                if missing.remove(&w) {
                    far = far.max(d + 1);
                }
                queue.push_back(w);
            }
        }
    }
    missing.is_empty().then_some(far)
}

/// Finite induced subgraph on an explicit list of keys.
#[derive(Clone, Debug)]
pub struct Subgraph {
    keys: Vec<VertexKey>,
    index: HashMap<VertexKey, usize>,
    graph: WeightedGraph,
}

impl Subgraph {
    /// Induced subgraph on `keys`. Conductance symmetry is checked on every
    /// edge inside the set.
    pub fn induced(oracle: &dyn GraphOracle, keys: Vec<VertexKey>) -> Result<Self> {
        let index: HashMap<VertexKey, usize> =
            keys.iter().enumerate().map(|(i, &k)| (k, i)).collect();
        if index.len() != keys.len() {
            return Err(Error::InvalidParameter("duplicate vertex keys".into()));
        }
        let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); keys.len()];
        for (i, &k) in keys.iter().enumerate() {
            for (w, c) in merged_neighbors(oracle, k) {
                if w == k {
                    return Err(Error::Oracle {
                        vertex: k,
                        detail: "self-loop".into(),
                    });
                }
                if !(c > 0.0) || !c.is_finite() {
                    return Err(Error::Oracle {
                        vertex: k,
                        detail: format!("conductance {c} to {w}"),
                    });
                }
                if let Some(&j) = index.get(&w) {
                    adj[i].push((j, c));
                }
            }
        }
        for (i, row) in adj.iter().enumerate() {
            for &(j, c) in row {
                let back = adj[j].iter().find(|&&(t, _)| t == i).map(|&(_, c)| c);
                match back {
                    Some(b) if (b - c).abs() <= SYMMETRY_TOL * c.max(b) => {}
                    _ => {
                        return Err(Error::Oracle {
                            vertex: keys[i],
                            detail: format!(
                                "asymmetric conductance to {}: {c} vs {back:?}",
                                keys[j]
                            ),
                        })
                    }
                }
            }
        }
        let graph = WeightedGraph::from_adjacency(adj);
        if !graph.is_connected() {
            return Err(Error::InvalidParameter("induced subgraph is not connected".into()));
        }
        Ok(Self { keys, index, graph })
    }

    pub fn keys(&self) -> &[VertexKey] {
        &self.keys
    }

    pub fn local(&self, key: VertexKey) -> Option<usize> {
        self.index.get(&key).copied()
    }

    pub fn local_or_err(&self, key: VertexKey) -> Result<usize> {
        self.local(key).ok_or(Error::UnknownVertex(key))
    }

    pub fn graph(&self) -> &WeightedGraph {
        &self.graph
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }
}

/// The induced graph on B_1 G_n = V_n plus its outer vertex boundary.
/// Core vertices come first, in exhaustion order, followed by the shell.
#[derive(Clone, Debug)]
pub struct LevelGraph {
    level: usize,
    core_len: usize,
    sub: Subgraph,
    full_pi: Vec<f64>,
    vertex_level: Vec<usize>,
}

impl LevelGraph {
    pub fn level(&self) -> usize {
        self.level
    }

    pub fn core_len(&self) -> usize {
        self.core_len
    }

    pub fn len(&self) -> usize {
        self.sub.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sub.is_empty()
    }

    pub fn keys(&self) -> &[VertexKey] {
        self.sub.keys()
    }

    pub fn core(&self) -> &[VertexKey] {
        &self.sub.keys()[..self.core_len]
    }

    pub fn shell(&self) -> &[VertexKey] {
        &self.sub.keys()[self.core_len..]
    }

    pub fn local(&self, key: VertexKey) -> Option<usize> {
        self.sub.local(key)
    }

    pub fn is_core(&self, local: usize) -> bool {
        local < self.core_len
    }

    pub fn graph(&self) -> &WeightedGraph {
        self.sub.graph()
    }

    pub fn subgraph(&self) -> &Subgraph {
        &self.sub
    }

    /// Stationary measure in the whole graph (differs from the induced one
    /// on shell vertices).
    pub fn full_pi(&self, local: usize) -> f64 {
        self.full_pi[local]
    }

    /// Exhaustion level of a vertex; shell vertices report `level + 1`.
    pub fn vertex_level(&self, local: usize) -> usize {
        self.vertex_level[local]
    }
}

/// Builds the level-`n` graph B_1 G_n.
pub fn truncate(oracle: &dyn GraphOracle, exh: &Exhaustion, n: usize) -> Result<LevelGraph> {
    let core = exh.level_set(oracle, n)?;
    let levels = exh.vertex_levels(oracle, n)?;
    let core_set: HashSet<VertexKey> = core.iter().copied().collect();
    let mut shell = Vec::new();
    let mut shell_set = HashSet::new();
    for &v in &core {
        for (w, _) in oracle.neighbors(v) {
            if !core_set.contains(&w) && shell_set.insert(w) {
                shell.push(w);
            }
        }
    }
    let core_len = core.len();
    let mut keys = core;
    keys.extend(shell);
    let full_pi: Vec<f64> = keys.iter().map(|&k| oracle.pi(k)).collect();
    let vertex_level: Vec<usize> = keys
        .iter()
        .enumerate()
        .map(|(i, k)| {
            if i < core_len {
                levels.get(k).copied().unwrap_or(n)
            } else {
                n + 1
            }
        })
        .collect();
    let sub = Subgraph::induced(oracle, keys)?;
    for i in 0..core_len {
        let induced = sub.graph().pi(i);
        if (induced - full_pi[i]).abs() > SYMMETRY_TOL * full_pi[i] {
            return Err(Error::Oracle {
                vertex: sub.keys()[i],
                detail: "neighbour outside B_1 G_n".into(),
            });
        }
    }
    Ok(LevelGraph {
        level: n,
        core_len,
        sub,
        full_pi,
        vertex_level,
    })
}

/// Induced subgraph on V_n alone.
pub fn level_subgraph(oracle: &dyn GraphOracle, exh: &Exhaustion, n: usize) -> Result<Subgraph> {
    Subgraph::induced(oracle, exh.level_set(oracle, n)?)
}

/// Component labels on V_probe \ V_n. Each vertex maps to the smallest key
/// in its component.
pub fn component_labels(
    oracle: &dyn GraphOracle,
    exh: &Exhaustion,
    n: usize,
    probe_depth: usize,
) -> Result<HashMap<VertexKey, VertexKey>> {
    if probe_depth <= n {
        return Err(Error::InvalidParameter(format!(
            "probe depth {probe_depth} must exceed level {n}"
        )));
    }
    let inner: HashSet<VertexKey> = exh.level_set(oracle, n)?.into_iter().collect();
    let window: Vec<VertexKey> = exh
        .level_set(oracle, probe_depth)?
        .into_iter()
        .filter(|v| !inner.contains(v))
        .collect();
    let in_window: HashSet<VertexKey> = window.iter().copied().collect();
    let mut labels: HashMap<VertexKey, VertexKey> = HashMap::with_capacity(window.len());
    for &s in &window {
        if labels.contains_key(&s) {
            continue;
        }
        let mut comp = vec![s];
        let mut seen = HashSet::from([s]);
        let mut i = 0;
        while i < comp.len() {
            let u = comp[i];
            i += 1;
            for (w, _) in oracle.neighbors(u) {
                if in_window.contains(&w) && seen.insert(w) {
                    comp.push(w);
                }
            }
        }
        let id = *comp.iter().min().unwrap();
        for v in comp {
            labels.insert(v, id);
        }
    }
    Ok(labels)
}

/// Connected components of V_probe \ V_n, each sorted, ordered by their
/// smallest key. `probe_depth` defaults to `2n`.
pub fn complement_components(
    oracle: &dyn GraphOracle,
    exh: &Exhaustion,
    n: usize,
    probe_depth: Option<usize>,
) -> Result<Vec<Vec<VertexKey>>> {
    let probe = probe_depth.unwrap_or(2 * n).max(n + 1);
    let labels = component_labels(oracle, exh, n, probe)?;
    let mut comps: BTreeMap<VertexKey, Vec<VertexKey>> = BTreeMap::new();
    for (v, id) in labels {
        comps.entry(id).or_default().push(v);
    }
    Ok(comps
        .into_values()
        .map(|mut c| {
            c.sort_unstable();
            c
        })
        .collect())
}

/// Component ids at levels 1..=n of the complements containing a vertex or
/// a path to infinity.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EndPrefix(pub Vec<VertexKey>);

impl EndPrefix {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Component id at level `k` (1-based).
    pub fn at(&self, k: usize) -> Option<VertexKey> {
        k.checked_sub(1).and_then(|i| self.0.get(i).copied())
    }

    pub fn truncated(&self, k: usize) -> EndPrefix {
        EndPrefix(self.0[..k.min(self.0.len())].to_vec())
    }
}

/// End prefix of length `n` for a vertex lying outside V_n.
pub fn end_prefix(
    oracle: &dyn GraphOracle,
    exh: &Exhaustion,
    v: VertexKey,
    n: usize,
    probe_depth: Option<usize>,
) -> Result<EndPrefix> {
    let own = exh.level_containing(oracle, &[v], 1, 64 + n)?;
    if own <= n {
        return Err(Error::InvalidParameter(format!(
            "vertex {v} lies in V_{own}, inside V_{n}"
        )));
    }
    let mut ids = Vec::with_capacity(n);
    for k in 1..=n {
        let probe = probe_depth.unwrap_or(2 * k).max(own).max(k + 1);
        let labels = component_labels(oracle, exh, k, probe)?;
        ids.push(labels[&v]);
    }
    Ok(EndPrefix(ids))
}
