//! The level-n chain on B_1 G_n and continuous-time trajectories of the
//! walk reflected off infinity.
//!
//! From a vertex of V_n the chain steps to a neighbour with probability
//! c(x,y)/pi(x). From a shell vertex it jumps back into V_n according to
//! the energy-minimizing harmonic measure of V_n, computed on a larger
//! truncation G_N. A step into the shell followed by the jump back is one
//! pass through infinity.

use std::collections::{HashMap, HashSet};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{
    component_labels, truncate, EndPrefix, Exhaustion, GraphOracle, LevelGraph, Subgraph,
    VertexKey,
};
use crate::harmonic::{check_probability_vector, harmonic_measure_rows, ExtensionConfig};
use crate::rng::{exponential, replica_rng, uniform, ReplicaRng};

/// How far out the shell jump law is computed.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum Reference {
    /// Grow N from n+1 in steps of `stride` until the jump law changes by at
    /// most `cauchy_tol` in sup norm.
    Escalate,
    /// Use exactly this truncation level.
    Fixed(usize),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KernelConfig {
    pub reference: Reference,
    pub extension: ExtensionConfig,
    /// Probe depth for labelling the ends seen from shell vertices.
    /// Defaults to the smallest level containing the shell.
    pub end_probe_depth: Option<usize>,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            reference: Reference::Escalate,
            extension: ExtensionConfig::default(),
            end_probe_depth: None,
        }
    }
}

impl KernelConfig {
    pub fn fixed(level: usize) -> Self {
        Self {
            reference: Reference::Fixed(level),
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug)]
struct Row {
    targets: Vec<u32>,
    probs: Vec<f64>,
    cumulative: Vec<f64>,
}

impl Row {
    fn new(entries: Vec<(u32, f64)>) -> Self {
        let mut targets = Vec::with_capacity(entries.len());
        let mut probs = Vec::with_capacity(entries.len());
        let mut cumulative = Vec::with_capacity(entries.len());
        let total: f64 = entries.iter().map(|&(_, p)| p.max(0.0)).sum();
        let mut acc = 0.0;
        for (t, p) in entries {
            targets.push(t);
            probs.push(p);
            acc += p.max(0.0) / total;
            cumulative.push(acc);
        }
        if let Some(last) = cumulative.last_mut() {
            *last = 1.0;
        }
        Self {
            targets,
            probs,
            cumulative,
        }
    }

    #[inline]
    fn sample(&self, u: f64) -> usize {
        let i = self.cumulative.partition_point(|&c| c <= u);
        self.targets[i.min(self.targets.len() - 1)] as usize
    }
}

/// Transition kernel of the level-n chain on B_1 G_n.
#[derive(Clone, Debug)]
pub struct LevelChainKernel {
    level: LevelGraph,
    rows: Vec<Row>,
    shell_prefix: Vec<EndPrefix>,
    reference_level: usize,
    achieved_tolerance: f64,
}

/// Builds the level-n chain.
pub fn build_kernel(
    oracle: &dyn GraphOracle,
    exh: &Exhaustion,
    n: usize,
    cfg: &KernelConfig,
) -> Result<LevelChainKernel> {
    let level = truncate(oracle, exh, n)?;
    let core_len = level.core_len();
    let g = level.graph();
    let mut rows = Vec::with_capacity(level.len());
    for x in 0..core_len {
        let pi = level.full_pi(x);
        rows.push(Row::new(
            g.neighbors(x).map(|(y, c)| (y as u32, c / pi)).collect(),
        ));
    }
    let shell: Vec<VertexKey> = level.shell().to_vec();
    let mut reference_level = n;
    let mut achieved_tolerance = 0.0;
    let mut shell_prefix = Vec::new();
    if !shell.is_empty() {
        let ext = &cfg.extension;
        let shell_level = exh.level_containing(oracle, &shell, n + 1, ext.n_max.max(n + 1))?;
        let core: Vec<VertexKey> = level.core().to_vec();
        let eval = |sub: &Subgraph| -> Result<Vec<f64>> {
            let a: Vec<usize> = core
                .iter()
                .map(|&k| sub.local_or_err(k))
                .collect::<Result<_>>()?;
            let s: Vec<usize> = shell
                .iter()
                .map(|&k| sub.local_or_err(k))
                .collect::<Result<_>>()?;
            Ok(harmonic_measure_rows(sub.graph(), &a, &s, &ext.solver)?
                .into_iter()
                .flatten()
                .collect())
        };
        let flat = match cfg.reference {
            Reference::Fixed(big) => {
                if big < shell_level {
                    return Err(Error::InvalidParameter(format!(
                        "reference level {big} does not contain the shell of level {n}"
                    )));
                }
                reference_level = big;
                let sub = Subgraph::induced(oracle, exh.level_set(oracle, big)?)?;
                eval(&sub)?
            }
            Reference::Escalate => {
                let mut required = core.clone();
                required.extend_from_slice(&shell);
                let ecfg = ExtensionConfig {
                    start_level: shell_level,
                    ..ext.clone()
                };
                let esc = crate::harmonic::escalate(oracle, exh, &required, &ecfg, eval)?;
                reference_level = esc.levels_used.1;
                achieved_tolerance = esc.achieved_tolerance;
                esc.values
            }
        };
        for row in flat.chunks(core_len) {
            check_probability_vector(row, "shell jump law")?;
            rows.push(Row::new(
                row.iter()
                    .enumerate()
                    .filter(|&(_, &p)| p > 0.0)
                    .map(|(j, &p)| (j as u32, p))
                    .collect(),
            ));
        }
        let probe = cfg.end_probe_depth.unwrap_or(shell_level).max(shell_level);
        let mut labels: Vec<HashMap<VertexKey, VertexKey>> = Vec::with_capacity(n);
        for k in 1..=n {
            labels.push(component_labels(oracle, exh, k, probe.max(k + 1))?);
        }
        for &s in &shell {
            shell_prefix.push(EndPrefix(labels.iter().map(|l| l[&s]).collect()));
        }
    }
    Ok(LevelChainKernel {
        level,
        rows,
        shell_prefix,
        reference_level,
        achieved_tolerance,
    })
}

impl LevelChainKernel {
    pub fn level_graph(&self) -> &LevelGraph {
        &self.level
    }

    pub fn level(&self) -> usize {
        self.level.level()
    }

    pub fn reference_level(&self) -> usize {
        self.reference_level
    }

    pub fn achieved_tolerance(&self) -> f64 {
        self.achieved_tolerance
    }

    pub fn len(&self) -> usize {
        self.level.len()
    }

    pub fn is_empty(&self) -> bool {
        self.level.is_empty()
    }

    pub fn core_len(&self) -> usize {
        self.level.core_len()
    }

    pub fn key(&self, local: usize) -> VertexKey {
        self.level.keys()[local]
    }

    pub fn local(&self, key: VertexKey) -> Option<usize> {
        self.level.local(key)
    }

    pub fn is_core(&self, local: usize) -> bool {
        self.level.is_core(local)
    }

    /// Transition probabilities out of a state, as (target, probability).
    pub fn row(&self, local: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = &self.rows[local];
        r.targets.iter().map(|&t| t as usize).zip(r.probs.iter().copied())
    }

    /// End prefix recorded for a shell state.
    pub fn shell_end_prefix(&self, local: usize) -> &EndPrefix {
        &self.shell_prefix[local - self.core_len()]
    }

    #[inline]
    pub fn sample(&self, local: usize, u: f64) -> usize {
        self.rows[local].sample(u)
    }

    /// Dense transition matrix over all states.
    pub fn dense(&self) -> DMatrix<f64> {
        let m = self.len();
        let mut p = DMatrix::zeros(m, m);
        for x in 0..m {
            for (y, q) in self.row(x) {
                p[(x, y)] += q;
            }
        }
        p
    }
}

/// One move of the discrete chain observed on V_n.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Move {
    pub from: usize,
    pub to: usize,
    /// Shell state passed through, if the move went through infinity.
    pub shell: Option<usize>,
}

/// Discrete-time walker on V_n that treats a shell visit and the jump back
/// as a single move.
pub struct Walker<'k> {
    kernel: &'k LevelChainKernel,
    rng: ReplicaRng,
    pos: usize,
}

impl<'k> Walker<'k> {
    pub fn new(kernel: &'k LevelChainKernel, start: usize, rng: ReplicaRng) -> Self {
        assert!(kernel.is_core(start));
        Self {
            kernel,
            rng,
            pos: start,
        }
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    /// Moves the walker to another vertex of V_n without consuming randomness.
    pub fn restart(&mut self, local: usize) {
        assert!(self.kernel.is_core(local));
        self.pos = local;
    }

    pub fn rng(&mut self) -> &mut ReplicaRng {
        &mut self.rng
    }

    #[inline]
    pub fn advance(&mut self) -> Move {
        let from = self.pos;
        let y = self.kernel.sample(from, self.rng.random::<f64>());
        let m = if self.kernel.is_core(y) {
            Move {
                from,
                to: y,
                shell: None,
            }
        } else {
            let to = self.kernel.sample(y, self.rng.random::<f64>());
            Move {
                from,
                to,
                shell: Some(y),
            }
        };
        self.pos = m.to;
        m
    }
}

/// Exponential holding rates w(x) = base * growth^level(x).
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct RateSchedule {
    pub base: f64,
    pub growth: f64,
}

impl Default for RateSchedule {
    fn default() -> Self {
        Self {
            base: 1.0,
            growth: 4.0,
        }
    }
}

impl RateSchedule {
    pub fn new(base: f64, growth: f64) -> Result<Self> {
        if !(base > 0.0 && base.is_finite() && growth > 0.0 && growth.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "rates need base > 0 and growth > 0, got {base}, {growth}"
            )));
        }
        Ok(Self { base, growth })
    }

    pub fn rate(&self, level: usize) -> f64 {
        self.base * self.growth.powi(level as i32)
    }

    fn state_rate(&self, kernel: &LevelChainKernel, local: usize) -> f64 {
        self.rate(kernel.level.vertex_level(local))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Visit {
        vertex: VertexKey,
        holding_time: f64,
        via_infinity: bool,
    },
    InfinityPass {
        end_prefix: EndPrefix,
        exit_vertex: VertexKey,
        shell_vertex: VertexKey,
        entry_vertex: VertexKey,
        holding_time: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    HitSet,
    Steps,
    Covered,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub events: Vec<Event>,
    /// Number of chain transitions (a shell visit counts as two).
    pub steps: usize,
    pub total_time: f64,
    pub stop: Option<StopReason>,
}

impl Trajectory {
    /// Vertices of V_n visited, in order.
    pub fn vertices(&self) -> Vec<VertexKey> {
        self.events
            .iter()
            .filter_map(|e| match e {
                Event::Visit { vertex, .. } => Some(*vertex),
                _ => None,
            })
            .collect()
    }

    pub fn to_json_lines(&self) -> String {
        let mut s = String::new();
        for e in &self.events {
            s.push_str(&serde_json::to_string(e).expect("event serialization"));
            s.push('\n');
        }
        s
    }
}

#[derive(Clone, Debug)]
pub enum StopRule {
    /// Stop on arrival at any of these vertices (checked at the start too).
    HitSet(Vec<VertexKey>),
    /// Stop after this many chain transitions.
    Steps(usize),
    /// Stop once every listed vertex has been visited.
    Cover(Vec<VertexKey>),
}

/// Simulates the continuous-time reflected walk at level n from `start`.
///
/// Per visit the stream is consumed as: one uniform for the move, then one
/// for the holding time. The vertex sequence therefore does not depend on
/// the rate schedule.
pub fn simulate(
    kernel: &LevelChainKernel,
    start: VertexKey,
    stop: &StopRule,
    rates: &RateSchedule,
    seed: u64,
    replica: u64,
    max_steps: usize,
) -> Result<Trajectory> {
    let x0 = kernel
        .local(start)
        .filter(|&l| kernel.is_core(l))
        .ok_or(Error::UnknownVertex(start))?;
    let to_locals = |keys: &[VertexKey]| -> Result<HashSet<usize>> {
        keys.iter()
            .map(|&k| {
                kernel
                    .local(k)
                    .filter(|&l| kernel.is_core(l))
                    .ok_or(Error::UnknownVertex(k))
            })
            .collect()
    };
    let (hit, mut cover, step_limit) = match stop {
        StopRule::HitSet(a) => (to_locals(a)?, HashSet::new(), usize::MAX),
        StopRule::Cover(s) => (HashSet::new(), to_locals(s)?, usize::MAX),
        StopRule::Steps(k) => (HashSet::new(), HashSet::new(), *k),
    };
    let covering = matches!(stop, StopRule::Cover(_));
    let mut rng = replica_rng(seed, replica);
    let mut traj = Trajectory {
        events: Vec::new(),
        steps: 0,
        total_time: 0.0,
        stop: None,
    };
    let mut x = x0;
    let mut via = false;
    loop {
        cover.remove(&x);
        let reason = if hit.contains(&x) {
            Some(StopReason::HitSet)
        } else if covering && cover.is_empty() {
            Some(StopReason::Covered)
        } else if traj.steps >= step_limit {
            Some(StopReason::Steps)
        } else {
            None
        };
        if let Some(r) = reason {
            let hold = exponential(uniform(&mut rng), rates.state_rate(kernel, x));
            traj.total_time += hold;
            traj.events.push(Event::Visit {
                vertex: kernel.key(x),
                holding_time: hold,
                via_infinity: via,
            });
            traj.stop = Some(r);
            return Ok(traj);
        }
        if traj.steps >= max_steps {
            return Err(Error::Timeout {
                budget: max_steps,
                partial: Some(Box::new(traj)),
            });
        }
        let y = kernel.sample(x, uniform(&mut rng));
        let hold = exponential(uniform(&mut rng), rates.state_rate(kernel, x));
        traj.total_time += hold;
        traj.events.push(Event::Visit {
            vertex: kernel.key(x),
            holding_time: hold,
            via_infinity: via,
        });
        traj.steps += 1;
        if kernel.is_core(y) {
            x = y;
            via = false;
        } else {
            let entry = kernel.sample(y, uniform(&mut rng));
            let hold = exponential(uniform(&mut rng), rates.state_rate(kernel, y));
            traj.total_time += hold;
            traj.events.push(Event::InfinityPass {
                end_prefix: kernel.shell_end_prefix(y).clone(),
                exit_vertex: kernel.key(x),
                shell_vertex: kernel.key(y),
                entry_vertex: kernel.key(entry),
                holding_time: hold,
            });
            traj.steps += 1;
            x = entry;
            via = true;
        }
    }
}

/// States beyond which the excursion-time system is solved iteratively.
const DENSE_EXCURSION_LIMIT: usize = 2500;

/// Expected time for the continuous-time chain to leave `start` and return
/// to it.
pub fn expected_excursion_time(
    kernel: &LevelChainKernel,
    rates: &RateSchedule,
    start: VertexKey,
) -> Result<f64> {
    let s = kernel
        .local(start)
        .filter(|&l| kernel.is_core(l))
        .ok_or(Error::UnknownVertex(start))?;
    let m = kernel.len();
    let hold: Vec<f64> = (0..m).map(|x| 1.0 / rates.state_rate(kernel, x)).collect();
    let others: Vec<usize> = (0..m).filter(|&x| x != s).collect();
    let mut pos = vec![usize::MAX; m];
    for (i, &x) in others.iter().enumerate() {
        pos[x] = i;
    }
    // Mean time to reach `start` from each other state.
    let t: Vec<f64> = if others.len() <= DENSE_EXCURSION_LIMIT {
        let k = others.len();
        let mut a = DMatrix::<f64>::identity(k, k);
        let mut b = DVector::<f64>::zeros(k);
        for (i, &x) in others.iter().enumerate() {
            b[i] = hold[x];
            for (y, p) in kernel.row(x) {
                if y != s {
                    a[(i, pos[y])] -= p;
                }
            }
        }
        a.lu()
            .solve(&b)
            .ok_or_else(|| Error::Singular("excursion system".into()))?
            .as_slice()
            .to_vec()
    } else {
        let mut t = vec![0.0; m];
        let mut change = f64::INFINITY;
        let mut sweeps = 0;
        while change > 1e-12 * t.iter().fold(1.0f64, |a, b| a.max(*b)) {
            change = 0.0;
            for &x in &others {
                let v = hold[x] + kernel.row(x).map(|(y, p)| p * t[y]).sum::<f64>();
                change = f64::max(change, (v - t[x]).abs());
                t[x] = v;
            }
            sweeps += 1;
            if sweeps > 10_000_000 / m.max(1) + 1000 {
                return Err(Error::NonConvergence {
                    residual: change,
                    iterations: sweeps,
                });
            }
        }
        others.iter().map(|&x| t[x]).collect()
    };
    Ok(hold[s]
        + kernel
            .row(s)
            .map(|(y, p)| if y == s { 0.0 } else { p * t[pos[y]] })
            .sum::<f64>())
}

/// Induced chain of the level-n chain on B_1 G_m, compared with the level-m
/// chain built from the same reference truncation. Returns the largest
/// entrywise difference.
pub fn consistency_check(
    oracle: &dyn GraphOracle,
    exh: &Exhaustion,
    m: usize,
    n: usize,
    reference_level: Option<usize>,
) -> Result<f64> {
    if m > n {
        return Err(Error::InvalidParameter(format!("need m <= n, got {m} > {n}")));
    }
    let big = reference_level.unwrap_or(n + 2);
    let cfg = KernelConfig::fixed(big);
    let km = build_kernel(oracle, exh, m, &cfg)?;
    if m == n {
        return Ok(0.0);
    }
    let kn = build_kernel(oracle, exh, n, &cfg)?;
    induced_deviation(&km, &kn)
}

/// Largest difference between the chain `coarse` and the chain `fine`
/// watched only on the states of `coarse`.
pub fn induced_deviation(coarse: &LevelChainKernel, fine: &LevelChainKernel) -> Result<f64> {
    let core_m: HashSet<VertexKey> = coarse.level.core().iter().copied().collect();
    let mut map = vec![usize::MAX; fine.len()];
    let mut transient = Vec::new();
    for x in 0..fine.len() {
        if !core_m.contains(&fine.key(x)) {
            map[x] = transient.len();
            transient.push(x);
        }
    }
    let absorbing: Vec<usize> = coarse
        .level
        .core()
        .iter()
        .map(|&k| fine.local(k).ok_or(Error::UnknownVertex(k)))
        .collect::<Result<_>>()?;
    let t = transient.len();
    let a_len = absorbing.len();
    let mut col_of = HashMap::with_capacity(a_len);
    for (j, &x) in absorbing.iter().enumerate() {
        col_of.insert(x, j);
    }
    let mut i_q = DMatrix::<f64>::identity(t, t);
    let mut r = DMatrix::<f64>::zeros(t, a_len);
    for (i, &x) in transient.iter().enumerate() {
        for (y, p) in fine.row(x) {
            if let Some(&j) = col_of.get(&y) {
                r[(i, j)] += p;
            } else {
                i_q[(i, map[y])] -= p;
            }
        }
    }
    let h = i_q
        .lu()
        .solve(&r)
        .ok_or_else(|| Error::Singular("absorbing chain".into()))?;
    let mut worst = 0.0f64;
    for x in 0..coarse.len() {
        let key = coarse.key(x);
        let mut expected = vec![0.0; coarse.len()];
        for (y, p) in coarse.row(x) {
            expected[y] += p;
        }
        let mut got = vec![0.0; coarse.len()];
        let fx = fine.local(key).ok_or(Error::UnknownVertex(key))?;
        if coarse.is_core(x) {
            for (y, p) in fine.row(fx) {
                let yk = fine.key(y);
                let cy = coarse.local(yk).ok_or(Error::UnknownVertex(yk))?;
                got[cy] += p;
            }
        } else {
            let i = map[fx];
            for j in 0..a_len {
                got[j] += h[(i, j)];
            }
        }
        for (e, g) in expected.iter().zip(&got) {
            worst = worst.max((e - g).abs());
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{FiniteOracle, Tree, WeightedGraph};

    fn finite_kernel(g: WeightedGraph, n: usize) -> LevelChainKernel {
        build_kernel(
            &FiniteOracle::new(g),
            &Exhaustion::Ball,
            n,
            &KernelConfig::default(),
        )
        .unwrap()
    }

    #[test]
    fn excursion_times_on_paths() {
        let flat = RateSchedule::new(1.0, 1.0).unwrap();
        let k2 = finite_kernel(WeightedGraph::path(2).unwrap(), 1);
        assert!((expected_excursion_time(&k2, &flat, 0).unwrap() - 2.0).abs() < 1e-12);
        let k3 = finite_kernel(WeightedGraph::path(3).unwrap(), 2);
        assert!((expected_excursion_time(&k3, &flat, 0).unwrap() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn tree_shell_jumps_back_to_parent() {
        let t = Tree::regular(2).unwrap();
        let k = build_kernel(&t, &Exhaustion::Ball, 2, &KernelConfig::default()).unwrap();
        for s in k.core_len()..k.len() {
            let row: Vec<_> = k.row(s).collect();
            assert_eq!(row.len(), 1);
            let parent = t.parent(k.key(s)).unwrap();
            assert_eq!(k.key(row[0].0), parent);
            assert!((row[0].1 - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn same_level_consistency_is_exact() {
        let t = Tree::regular(2).unwrap();
        assert_eq!(consistency_check(&t, &Exhaustion::Ball, 2, 2, None).unwrap(), 0.0);
    }

    #[test]
    fn vertex_sequence_ignores_rates() {
        let t = Tree::regular(3).unwrap();
        let k = build_kernel(&t, &Exhaustion::Ball, 3, &KernelConfig::default()).unwrap();
        let a = simulate(&k, 0, &StopRule::Steps(200), &RateSchedule::default(), 5, 0, 1000)
            .unwrap();
        let slow = RateSchedule::new(0.1, 2.0).unwrap();
        let b = simulate(&k, 0, &StopRule::Steps(200), &slow, 5, 0, 1000).unwrap();
        assert_eq!(a.vertices(), b.vertices());
        assert!(a.total_time != b.total_time);
    }
}
