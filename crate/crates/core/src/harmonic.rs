//! Energy-minimizing harmonic extensions and harmonic measure.
//!
//! On a finite graph the extension of boundary data is the ordinary
//! harmonic extension. On an infinite graph it is the limit of extensions
//! computed on the induced truncations G_N, each harmonic with respect to
//! G_N alone (no condition at the truncation edge). The limit is taken by
//! growing N until successive window values agree to `cauchy_tol`.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Exhaustion, GraphOracle, Subgraph, VertexKey, WeightedGraph};
use crate::linalg::{DirichletSolver, SolverConfig};
use crate::par;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExtensionConfig {
    /// Per-vertex harmonicity residual allowed at each level, relative to
    /// the size of the boundary data.
    pub solve_tol: f64,
    /// Sup-norm agreement required between successive truncation levels.
    pub cauchy_tol: f64,
    /// Level increment between successive truncations.
    pub stride: usize,
    /// Give up beyond this level.
    pub n_max: usize,
    /// First truncation level tried (raised to contain the data).
    pub start_level: usize,
    pub solver: SolverConfig,
}

impl Default for ExtensionConfig {
    fn default() -> Self {
        Self {
            solve_tol: 1e-8,
            cauchy_tol: 1e-6,
            stride: 2,
            n_max: 40,
            start_level: 1,
            solver: SolverConfig::default(),
        }
    }
}

/// Largest |sum_y c(x,y)(f(y) - f(x))| / pi(x) over non-boundary vertices.
pub fn harmonic_residual(graph: &WeightedGraph, boundary: &[usize], f: &[f64]) -> f64 {
    let mut on_boundary = vec![false; graph.vertex_count()];
    for &a in boundary {
        on_boundary[a] = true;
    }
    (0..graph.vertex_count())
        .filter(|&x| !on_boundary[x])
        .map(|x| {
            let s: f64 = graph.neighbors(x).map(|(y, c)| c * (f[y] - f[x])).sum();
            (s / graph.pi(x)).abs()
        })
        .fold(0.0, f64::max)
}

/// Boundary data for a finite Dirichlet problem.
#[derive(Clone, Debug)]
pub struct DirichletProblem<'a> {
    pub graph: &'a WeightedGraph,
    pub boundary: Vec<usize>,
    pub values: Vec<f64>,
}

/// Harmonic extension of the boundary values, checked to be harmonic off the
/// boundary within `tol` (relative to max |value|).
pub fn solve_free_dirichlet(
    problem: &DirichletProblem,
    tol: f64,
    solver: &SolverConfig,
) -> Result<Vec<f64>> {
    if problem.boundary.len() != problem.values.len() {
        return Err(Error::InvalidParameter(
            "boundary and values differ in length".into(),
        ));
    }
    let s = DirichletSolver::new(problem.graph, &problem.boundary, solver)?;
    let f = s.extend(&problem.values)?;
    check_residual(problem.graph, &problem.boundary, &f, &problem.values, tol)?;
    Ok(f)
}

fn check_residual(
    graph: &WeightedGraph,
    boundary: &[usize],
    f: &[f64],
    data: &[f64],
    tol: f64,
) -> Result<()> {
    let scale = data.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1e-300);
    let r = harmonic_residual(graph, boundary, f) / scale;
    if r > tol {
        return Err(Error::NonConvergence {
            residual: r,
            iterations: 0,
        });
    }
    Ok(())
}

#[derive(Clone, Debug, Serialize)]
pub struct EnergyReport {
    pub energy: f64,
    /// Directed gradient (u, v, c(u,v) * (f(v) - f(u))) over edges with u < v.
    pub gradient: Vec<(usize, usize, f64)>,
}

pub fn dirichlet_energy(graph: &WeightedGraph, f: &[f64]) -> EnergyReport {
    let mut energy = 0.0;
    let mut gradient = Vec::with_capacity(graph.edge_count());
    for (u, v, c) in graph.edges() {
        let d = f[v] - f[u];
        energy += c * d * d;
        gradient.push((u, v, c * d));
    }
    EnergyReport { energy, gradient }
}

/// Tests whether the gradient of `f` lies in the span of cycles once the
/// boundary set is collapsed to a point. That holds exactly when the
/// current c·∇f has no divergence away from the boundary, so the returned
/// value is the largest divergence |sum_y c(x,y)(f(y) - f(x))| off the
/// boundary. Zero means f is harmonic off the boundary.
pub fn cycle_orthogonality_check(graph: &WeightedGraph, boundary: &[usize], f: &[f64]) -> f64 {
    let mut on_boundary = vec![false; graph.vertex_count()];
    for &a in boundary {
        on_boundary[a] = true;
    }
    (0..graph.vertex_count())
        .filter(|&x| !on_boundary[x])
        .map(|x| {
            graph
                .neighbors(x)
                .map(|(y, c)| c * (f[y] - f[x]))
                .sum::<f64>()
                .abs()
        })
        .fold(0.0, f64::max)
}

/// Harmonic measure rows on a finite graph: for each viewpoint x, the
/// vector (hm_A^x(a))_{a in targets}, i.e. the value at x of the harmonic
/// extension of the indicator of a. Uses whichever of the direct solve
/// (one per target) or the adjoint solve (one per viewpoint) is cheaper.
pub fn harmonic_measure_rows(
    graph: &WeightedGraph,
    targets: &[usize],
    viewpoints: &[usize],
    solver: &SolverConfig,
) -> Result<Vec<Vec<f64>>> {
    let s = DirichletSolver::new(graph, targets, solver)?;
    let k = targets.len();
    let inner: Vec<usize> = {
        let mut seen = HashSet::new();
        viewpoints
            .iter()
            .copied()
            .filter(|&x| s.interior_index(x).is_some() && seen.insert(x))
            .collect()
    };
    let mut rows_inner: Vec<Vec<f64>> = Vec::with_capacity(inner.len());
    if inner.len() <= k {
        let m = s.interior().len();
        let solved: Vec<Result<Vec<f64>>> = par::map_slice(&inner, |&x| {
            let mut e = vec![0.0; m];
            e[s.interior_index(x).unwrap()] = 1.0;
            let z = s.solve_interior(&e)?;
            Ok(targets
                .iter()
                .map(|&a| {
                    graph
                        .neighbors(a)
                        .filter_map(|(w, c)| s.interior_index(w).map(|i| z[i] * c))
                        .sum()
                })
                .collect())
        });
        for r in solved {
            rows_inner.push(r?);
        }
    } else {
        let idx: Vec<usize> = (0..k).collect();
        let cols: Vec<Result<Vec<f64>>> = par::map_slice(&idx, |&j| {
            let mut phi = vec![0.0; k];
            phi[j] = 1.0;
            let h = s.extend(&phi)?;
            Ok(inner.iter().map(|&x| h[x]).collect())
        });
        let cols: Vec<Vec<f64>> = cols.into_iter().collect::<Result<_>>()?;
        for r in 0..inner.len() {
            rows_inner.push((0..k).map(|j| cols[j][r]).collect());
        }
    }
    let mut out = Vec::with_capacity(viewpoints.len());
    for &x in viewpoints {
        if let Some(j) = targets.iter().position(|&a| a == x) {
            let mut row = vec![0.0; k];
            row[j] = 1.0;
            out.push(row);
        } else {
            let r = inner.iter().position(|&y| y == x).unwrap();
            out.push(rows_inner[r].clone());
        }
    }
    Ok(out)
}

/// Outcome of a level-escalated computation.
#[derive(Clone, Debug, Serialize)]
pub struct Escalated {
    pub values: Vec<f64>,
    /// Sup-norm difference between the last two levels.
    pub achieved_tolerance: f64,
    /// (previous level, final level).
    pub levels_used: (usize, usize),
}

/// Evaluates `eval` on truncations V_N, N = n0, n0 + stride, ... until the
/// output stabilizes to `cfg.cauchy_tol`. `n0` is the first level at or
/// above `cfg.start_level` containing `required`.
pub fn escalate<F>(
    oracle: &dyn GraphOracle,
    exh: &Exhaustion,
    required: &[VertexKey],
    cfg: &ExtensionConfig,
    mut eval: F,
) -> Result<Escalated>
where
    F: FnMut(&Subgraph) -> Result<Vec<f64>>,
{
    if cfg.stride == 0 {
        return Err(Error::InvalidParameter("stride must be positive".into()));
    }
    let n0 = exh.level_containing(oracle, required, cfg.start_level, cfg.n_max)?;
    let mut n = n0;
    let mut prev: Option<(usize, Vec<f64>)> = None;
    let mut prev_size = 0;
    let mut last_diff = f64::INFINITY;
    while n <= cfg.n_max {
        let keys = exh.level_set(oracle, n)?;
        let size = keys.len();
        let sub = Subgraph::induced(oracle, keys)?;
        let values = eval(&sub)?;
        if let Some((pn, pv)) = &prev {
            let diff = pv
                .iter()
                .zip(&values)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            if diff <= cfg.cauchy_tol || size == prev_size {
                return Ok(Escalated {
                    values,
                    achieved_tolerance: diff,
                    levels_used: (*pn, n),
                });
            }
            last_diff = diff;
        }
        prev = Some((n, values));
        prev_size = size;
        n += cfg.stride;
    }
    Err(Error::NotCauchy {
        level: n - cfg.stride,
        last_difference: last_diff,
        tolerance: cfg.cauchy_tol,
    })
}

/// Energy-minimizing extensions of several boundary functions on a window.
#[derive(Clone, Debug, Serialize)]
pub struct Extension {
    pub window: Vec<VertexKey>,
    /// One row per boundary function, aligned with `window`.
    pub values: Vec<Vec<f64>>,
    pub achieved_tolerance: f64,
    pub levels_used: (usize, usize),
}

fn validate_boundary(boundary: &[VertexKey], data: &[Vec<f64>]) -> Result<()> {
    if boundary.is_empty() {
        return Err(Error::InvalidParameter("boundary set is empty".into()));
    }
    let distinct: HashSet<_> = boundary.iter().collect();
    if distinct.len() != boundary.len() {
        return Err(Error::InvalidParameter("boundary keys repeat".into()));
    }
    for d in data {
        if d.len() != boundary.len() {
            return Err(Error::InvalidParameter(
                "boundary data length differs from boundary set".into(),
            ));
        }
        if d.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter("non-finite boundary data".into()));
        }
    }
    Ok(())
}

/// Energy-minimizing extensions of each row of `data` (values on
/// `boundary`), evaluated on `window`.
pub fn min_energy_extension_many(
    oracle: &dyn GraphOracle,
    exh: &Exhaustion,
    boundary: &[VertexKey],
    data: &[Vec<f64>],
    window: &[VertexKey],
    cfg: &ExtensionConfig,
) -> Result<Extension> {
    validate_boundary(boundary, data)?;
    let mut required = boundary.to_vec();
    required.extend_from_slice(window);
    let k = data.len();
    let w = window.len();
    let esc = escalate(oracle, exh, &required, cfg, |sub| {
        let a: Vec<usize> = boundary
            .iter()
            .map(|&b| sub.local_or_err(b))
            .collect::<Result<_>>()?;
        let wl: Vec<usize> = window
            .iter()
            .map(|&x| sub.local_or_err(x))
            .collect::<Result<_>>()?;
        let s = DirichletSolver::new(sub.graph(), &a, &cfg.solver)?;
        let mut out = Vec::with_capacity(k * w);
        for d in data {
            let f = s.extend(d)?;
            check_residual(sub.graph(), &a, &f, d, cfg.solve_tol)?;
            out.extend(wl.iter().map(|&x| f[x]));
        }
        Ok(out)
    })?;
    Ok(Extension {
        window: window.to_vec(),
        values: esc.values.chunks(w.max(1)).take(k).map(|c| c.to_vec()).collect(),
        achieved_tolerance: esc.achieved_tolerance,
        levels_used: esc.levels_used,
    })
}

/// Energy-minimizing extension of one boundary function.
pub fn min_energy_extension(
    oracle: &dyn GraphOracle,
    exh: &Exhaustion,
    boundary: &[VertexKey],
    values: &[f64],
    window: &[VertexKey],
    cfg: &ExtensionConfig,
) -> Result<Extension> {
    min_energy_extension_many(oracle, exh, boundary, &[values.to_vec()], window, cfg)
}

#[derive(Clone, Debug, Serialize)]
pub struct HarmonicMeasure {
    pub viewpoint: VertexKey,
    pub targets: Vec<VertexKey>,
    pub probabilities: Vec<f64>,
    pub achieved_tolerance: f64,
    pub levels_used: (usize, usize),
}

/// Largest deviation of a probability vector from summing to one that is
/// accepted without complaint.
pub const PROBABILITY_SUM_TOL: f64 = 1e-8;

pub(crate) fn check_probability_vector(p: &[f64], what: &str) -> Result<()> {
    let sum: f64 = p.iter().sum();
    let min = p.iter().copied().fold(f64::INFINITY, f64::min);
    if (sum - 1.0).abs() > PROBABILITY_SUM_TOL || min < -PROBABILITY_SUM_TOL {
        return Err(Error::ConsistencyViolation(format!(
            "{what}: sum {sum}, minimum entry {min}"
        )));
    }
    Ok(())
}

/// Energy-minimizing harmonic measure of `targets` seen from `viewpoint`.
pub fn harmonic_measure(
    oracle: &dyn GraphOracle,
    exh: &Exhaustion,
    targets: &[VertexKey],
    viewpoint: VertexKey,
    cfg: &ExtensionConfig,
) -> Result<HarmonicMeasure> {
    validate_boundary(targets, &[])?;
    let mut required = targets.to_vec();
    required.push(viewpoint);
    let esc = escalate(oracle, exh, &required, cfg, |sub| {
        let a: Vec<usize> = targets
            .iter()
            .map(|&b| sub.local_or_err(b))
            .collect::<Result<_>>()?;
        let x = sub.local_or_err(viewpoint)?;
        let mut rows = harmonic_measure_rows(sub.graph(), &a, &[x], &cfg.solver)?;
        Ok(rows.pop().unwrap())
    })?;
    check_probability_vector(&esc.values, "harmonic measure")?;
    Ok(HarmonicMeasure {
        viewpoint,
        targets: targets.to_vec(),
        probabilities: esc.values,
        achieved_tolerance: esc.achieved_tolerance,
        levels_used: esc.levels_used,
    })
}
