//! Spanning forest samplers driven by the level-n chain, plus exact
//! enumeration of weighted spanning trees of small finite graphs.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::{VertexKey, WeightedGraph};
use crate::linalg::reduced_laplacian_det;
use crate::rng::replica_rng;
use crate::walk::{LevelChainKernel, Walker};

/// One Wilson branch.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Branch {
    pub start: VertexKey,
    /// Vertices added to the forest by this branch.
    pub added: usize,
    /// The retained loop erasure passed through infinity.
    pub escaped: bool,
    /// Number of forest components after the branch was added.
    pub components: usize,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct Forest {
    pub vertices: Vec<VertexKey>,
    /// Undirected edges as (smaller key, larger key), sorted.
    pub edges: Vec<(VertexKey, VertexKey)>,
    /// Aldous–Broder: window vertices first entered by a jump from infinity,
    /// so that no parent edge exists at this resolution.
    pub unresolved: usize,
    pub branches: Vec<Branch>,
    /// Chain moves used.
    pub steps: usize,
}

impl Forest {
    /// Edges with both endpoints in `window`.
    pub fn edges_within(&self, window: &HashSet<VertexKey>) -> Vec<(VertexKey, VertexKey)> {
        self.edges
            .iter()
            .copied()
            .filter(|(u, v)| window.contains(u) && window.contains(v))
            .collect()
    }

    pub fn escaped_branches(&self) -> usize {
        self.branches.iter().filter(|b| b.escaped).count()
    }

    pub fn has_escape(&self) -> bool {
        self.branches.iter().any(|b| b.escaped)
    }
}

fn norm(u: VertexKey, v: VertexKey) -> (VertexKey, VertexKey) {
    (u.min(v), u.max(v))
}

fn core_locals(kernel: &LevelChainKernel, keys: &[VertexKey]) -> Result<Vec<usize>> {
    let mut seen = HashSet::with_capacity(keys.len());
    keys.iter()
        .map(|&k| {
            let l = kernel
                .local(k)
                .filter(|&l| kernel.is_core(l))
                .ok_or(Error::UnknownVertex(k))?;
            if !seen.insert(l) {
                return Err(Error::InvalidParameter(format!("vertex {k} listed twice")));
            }
            Ok(l)
        })
        .collect()
}

/// Chronological loop erasure of a sequence of (vertex, arrived through
/// infinity) pairs. From the current vertex, jump to its last occurrence and
/// keep the element after it. The returned flag is set when some retained
/// element after the first arrived through infinity.
pub fn loop_erase<V: Copy + Eq + std::hash::Hash>(seq: &[(V, bool)]) -> (Vec<(V, bool)>, bool) {
    if seq.is_empty() {
        return (Vec::new(), false);
    }
    let mut last: HashMap<V, usize> = HashMap::with_capacity(seq.len());
    for (i, &(v, _)) in seq.iter().enumerate() {
        last.insert(v, i);
    }
    let mut out = vec![(seq[0].0, false)];
    let mut via_any = false;
    let mut i = last[&seq[0].0];
    while i + 1 < seq.len() {
        let (v, via) = seq[i + 1];
        via_any |= via;
        out.push((v, via));
        i = last[&v];
    }
    (out, via_any)
}

/// Aldous–Broder on a window: run the level-n chain from `start` until all
/// of `cover` is visited and keep, for every vertex of `window` other than
/// the start, the edge along which it was first entered. Entries through
/// infinity leave the vertex without a parent and are counted as
/// unresolved. Requires start ∈ window ⊆ cover ⊆ V_n and every neighbour of
/// the window inside cover.
pub fn aldous_broder_window(
    kernel: &LevelChainKernel,
    start: VertexKey,
    window: &[VertexKey],
    cover: &[VertexKey],
    seed: u64,
    replica: u64,
    max_steps: usize,
) -> Result<Forest> {
    let w = core_locals(kernel, window)?;
    let c = core_locals(kernel, cover)?;
    let s = core_locals(kernel, &[start])?[0];
    let n = kernel.len();
    let mut in_window = vec![false; n];
    let mut in_cover = vec![false; n];
    for &x in &w {
        in_window[x] = true;
    }
    for &x in &c {
        in_cover[x] = true;
    }
    if !in_window[s] {
        return Err(Error::InvalidParameter("start must lie in the window".into()));
    }
    if let Some(&x) = w.iter().find(|&&x| !in_cover[x]) {
        return Err(Error::InvalidParameter(format!(
            "window vertex {} not in cover set",
            kernel.key(x)
        )));
    }
    let g = kernel.level_graph().graph();
    for &x in &w {
        if let Some((y, _)) = g.neighbors(x).find(|&(y, _)| !in_cover[y]) {
            return Err(Error::InvalidParameter(format!(
                "neighbour {} of window vertex {} lies outside the cover set",
                kernel.key(y),
                kernel.key(x)
            )));
        }
    }
    let mut visited = vec![false; n];
    visited[s] = true;
    let mut remaining = c.len() - 1;
    let mut forest = Forest {
        vertices: window.to_vec(),
        ..Forest::default()
    };
    let mut walker = Walker::new(kernel, s, replica_rng(seed, replica));
    while remaining > 0 {
        if forest.steps >= max_steps {
            return Err(Error::Timeout {
                budget: max_steps,
                partial: None,
            });
        }
        let mv = walker.advance();
        forest.steps += 1;
        let x = mv.to;
        if visited[x] {
            continue;
        }
        visited[x] = true;
        if in_cover[x] {
            remaining -= 1;
        }
        if in_window[x] {
            if mv.shell.is_some() {
                forest.unresolved += 1;
            } else {
                forest.edges.push(norm(kernel.key(mv.from), kernel.key(x)));
            }
        }
    }
    forest.edges.sort_unstable();
    Ok(forest)
}

struct Components {
    parent: Vec<usize>,
    count: usize,
}

impl Components {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            count: 0,
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra] = rb;
            self.count -= 1;
        }
    }
}

/// Wilson's algorithm with the level-n chain. `order[0]` starts the forest;
/// each later vertex not yet covered launches a loop-erased walk that stops
/// on reaching the forest. A retained step that went through infinity ends
/// the branch there: the erased path up to that point becomes a new
/// component.
pub fn wilson_sample(
    kernel: &LevelChainKernel,
    order: &[VertexKey],
    seed: u64,
    replica: u64,
    max_steps: usize,
) -> Result<Forest> {
    let ord = core_locals(kernel, order)?;
    let Some(&root) = ord.first() else {
        return Err(Error::InvalidParameter("empty vertex order".into()));
    };
    let n = kernel.len();
    let mut in_tree = vec![false; n];
    let mut next: Vec<(usize, bool)> = vec![(usize::MAX, false); n];
    let mut comps = Components::new(n);
    in_tree[root] = true;
    comps.count = 1;
    let mut forest = Forest {
        vertices: order.to_vec(),
        ..Forest::default()
    };
    let mut walker = Walker::new(kernel, root, replica_rng(seed, replica));
    for &x in &ord[1..] {
        if in_tree[x] {
            continue;
        }
        walker.restart(x);
        let mut u = x;
        while !in_tree[u] {
            if forest.steps >= max_steps {
                return Err(Error::Timeout {
                    budget: max_steps,
                    partial: None,
                });
            }
            let mv = walker.advance();
            forest.steps += 1;
            next[u] = (mv.to, mv.shell.is_some());
            u = mv.to;
        }

        let mut added = 0;
        let mut escaped = false;
        let mut u = x;
        loop {
            in_tree[u] = true;
            comps.count += 1;
            added += 1;
            let (v, via) = next[u];
            if via {
                escaped = true;
                break;
            }
            forest.edges.push(norm(kernel.key(u), kernel.key(v)));
            comps.union(u, v);
            if in_tree[v] {
                break;
            }
            u = v;
        }
        forest.branches.push(Branch {
            start: kernel.key(x),
            added,
            escaped,
            components: comps.count,
        });
    }
    forest.edges.sort_unstable();
    Ok(forest)
}

/// One spanning tree with its probability under the weighted uniform
/// spanning tree measure.
#[derive(Clone, Debug, Serialize)]
pub struct SpanningTree {
    pub edges: Vec<(usize, usize)>,
    pub weight: f64,
    pub probability: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct TreeDistribution {
    pub trees: Vec<SpanningTree>,
    #[serde(skip)]
    index: HashMap<Vec<(usize, usize)>, usize>,
}

impl TreeDistribution {
    /// Position of a tree given by its sorted (u < v) edge list.
    pub fn index_of(&self, edges: &[(usize, usize)]) -> Option<usize> {
        self.index.get(edges).copied()
    }

    pub fn len(&self) -> usize {
        self.trees.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trees.is_empty()
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.trees.iter().map(|t| t.probability).collect()
    }
}

/// Largest vertex count accepted by [`enumerate_ust`].
pub const ENUMERATION_MAX_VERTICES: usize = 10;
/// Largest number of spanning trees accepted by [`enumerate_ust`].
pub const ENUMERATION_MAX_TREES: f64 = 1e6;

/// Lists every spanning tree of a small graph with probability proportional
/// to the product of its conductances.
pub fn enumerate_ust(graph: &WeightedGraph) -> Result<TreeDistribution> {
    let n = graph.vertex_count();
    if n > ENUMERATION_MAX_VERTICES {
        return Err(Error::InvalidParameter(format!(
            "enumeration limited to {ENUMERATION_MAX_VERTICES} vertices, got {n}"
        )));
    }
    let edges = graph.edges();
    let unit: Vec<_> = edges.iter().map(|&(u, v, _)| (u, v, 1.0)).collect();
    let count = reduced_laplacian_det(&WeightedGraph::from_edges(n, &unit)?, 0).round();
    if count > ENUMERATION_MAX_TREES {
        return Err(Error::CountOverflow(count));
    }
    let mut found: Vec<(Vec<(usize, usize)>, f64)> = Vec::with_capacity(count as usize);
    let mut chosen = Vec::with_capacity(n.saturating_sub(1));
    let labels: Vec<usize> = (0..n).collect();
    extend_trees(&edges, 0, &labels, &mut chosen, 1.0, n - 1, &mut found);
    let total: f64 = found.iter().map(|(_, w)| w).sum();
    let mut trees = Vec::with_capacity(found.len());
    let mut index = HashMap::with_capacity(found.len());
    for (i, (e, w)) in found.into_iter().enumerate() {
        index.insert(e.clone(), i);
        trees.push(SpanningTree {
            edges: e,
            weight: w,
            probability: w / total,
        });
    }
    Ok(TreeDistribution { trees, index })
}

fn extend_trees(
    edges: &[(usize, usize, f64)],
    from: usize,
    labels: &[usize],
    chosen: &mut Vec<(usize, usize)>,
    weight: f64,
    need: usize,
    out: &mut Vec<(Vec<(usize, usize)>, f64)>,
) {
    if chosen.len() == need {
        out.push((chosen.clone(), weight));
        return;
    }
    if edges.len() - from < need - chosen.len() {
        return;
    }
    for i in from..edges.len() {
        let (u, v, c) = edges[i];
        let (lu, lv) = (labels[u], labels[v]);
        if lu == lv {
            continue;
        }
        let merged: Vec<usize> = labels.iter().map(|&l| if l == lv { lu } else { l }).collect();
        chosen.push((u, v));
        extend_trees(edges, i + 1, &merged, chosen, weight * c, need, out);
        chosen.pop();
    }
}

/// Probability that edge {u, v} lies in the weighted uniform spanning tree,
/// from the matrix-tree theorem: c(u,v) * T(G/uv) / T(G).
pub fn matrix_tree_edge_prob(graph: &WeightedGraph, u: usize, v: usize) -> Result<f64> {
    let c = graph
        .conductance(u, v)
        .ok_or_else(|| Error::InvalidParameter(format!("({u}, {v}) is not an edge")))?;
    let n = graph.vertex_count();
    let total = reduced_laplacian_det(graph, 0);
    if n == 2 {
        return Ok(c * 1.0 / total);
    }
    // Contract v into u and relabel densely.
    let relabel = |x: usize| {
        let x = if x == v { u } else { x };
        if x > v {
            x - 1
        } else {
            x
        }
    };
    let mut merged: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for (a, b, w) in graph.edges() {
        let (a, b) = (relabel(a), relabel(b));
        if a != b {
            *merged.entry((a.min(b), a.max(b))).or_insert(0.0) += w;
        }
    }
    let list: Vec<_> = merged.into_iter().map(|((a, b), w)| (a, b, w)).collect();
    let contracted = WeightedGraph::from_edges(n - 1, &list)?;
    Ok(c * reduced_laplacian_det(&contracted, 0) / total)
}
