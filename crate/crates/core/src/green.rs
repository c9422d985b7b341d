//! Green's functions of the reflected walk killed on a finite set, edge
//! marginals of the free spanning forest, and Gaussian free field samples.

use std::collections::HashSet;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::{merged_neighbors, Exhaustion, GraphOracle, VertexKey, WeightedGraph};
use crate::harmonic::{escalate, ExtensionConfig};
use crate::linalg::{DirichletSolver, SolverConfig};
use crate::par;
use crate::rng::replica_rng;

/// Green's function on a finite graph killed on `killing`: entry (i, j) is
/// the expected number of visits to `window[j]` before hitting the killing
/// set, starting from `window[i]`. Also returns, for every window column,
/// the full column over all vertices of the graph.
pub fn green_on_graph(
    graph: &WeightedGraph,
    killing: &[usize],
    window: &[usize],
    solver: &SolverConfig,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let s = DirichletSolver::new(graph, killing, solver)?;
    let m = s.interior().len();
    let n = graph.vertex_count();
    let columns: Vec<Result<Vec<f64>>> = par::map_slice(window, |&y| {
        let mut col = vec![0.0; n];
        if let Some(iy) = s.interior_index(y) {
            let mut e = vec![0.0; m];
            e[iy] = 1.0;
            let z = s.solve_interior(&e)?;
            let py = graph.pi(y);
            for (i, &x) in s.interior().iter().enumerate() {
                col[x] = z[i] * py;
            }
        }
        Ok(col)
    });
    let columns: Vec<Vec<f64>> = columns.into_iter().collect::<Result<_>>()?;
    let values = window
        .iter()
        .map(|&x| columns.iter().map(|c| c[x]).collect())
        .collect();
    Ok((values, columns))
}

/// The same Green's function computed from hitting probabilities:
/// G(x, y) = P_x(hit y before A) / P_y(leave y and hit A before returning).
pub fn green_via_hitting(
    graph: &WeightedGraph,
    killing: &[usize],
    window: &[usize],
    solver: &SolverConfig,
) -> Result<Vec<Vec<f64>>> {
    let killed: HashSet<usize> = killing.iter().copied().collect();
    let mut g = vec![vec![0.0; window.len()]; window.len()];
    for (j, &y) in window.iter().enumerate() {
        if killed.contains(&y) {
            continue;
        }
        let mut boundary = killing.to_vec();
        boundary.push(y);
        let mut data = vec![0.0; killing.len()];
        data.push(1.0);
        let h = DirichletSolver::new(graph, &boundary, solver)?.extend(&data)?;
        let back: f64 = graph.neighbors(y).map(|(z, c)| c * h[z]).sum::<f64>() / graph.pi(y);
        let escape = 1.0 - back;
        if !(escape > 0.0) {
            return Err(Error::Singular(format!("vertex {y} never reaches the killing set")));
        }
        for (i, &x) in window.iter().enumerate() {
            g[i][j] = h[x] / escape;
        }
    }
    Ok(g)
}

#[derive(Clone, Debug)]
struct LevelData {
    graph: WeightedGraph,
    killing: Vec<usize>,
    window: Vec<usize>,
    columns: Vec<Vec<f64>>,
}

/// Green's function of the reflected walk killed on A, restricted to a
/// window.
#[derive(Clone, Debug, Serialize)]
pub struct GreenMatrix {
    pub window: Vec<VertexKey>,
    pub killing: Vec<VertexKey>,
    /// values[i][j] = G_A(window[i], window[j]).
    pub values: Vec<Vec<f64>>,
    /// Stationary measure at the window vertices.
    pub pi: Vec<f64>,
    pub achieved_tolerance: f64,
    pub levels_used: (usize, usize),
    #[serde(skip)]
    level: Option<LevelData>,
}

impl GreenMatrix {
    /// The covariance matrix G(x, y) / pi(y).
    pub fn covariance(&self) -> DMatrix<f64> {
        let k = self.window.len();
        DMatrix::from_fn(k, k, |i, j| self.values[i][j] / self.pi[j])
    }

    fn killed_mask(&self) -> Vec<bool> {
        let a: HashSet<_> = self.killing.iter().collect();
        self.window.iter().map(|w| a.contains(w)).collect()
    }
}

/// Green's function killed on `killing`, on `window`, by growing truncations
/// until the window block is stable to `cfg.cauchy_tol`. Every truncation
/// contains the window together with its neighbours, so the stationary
/// measure on the window is exact.
pub fn green(
    oracle: &dyn GraphOracle,
    exh: &Exhaustion,
    killing: &[VertexKey],
    window: &[VertexKey],
    cfg: &ExtensionConfig,
) -> Result<GreenMatrix> {
    if killing.is_empty() {
        return Err(Error::InvalidParameter("killing set is empty".into()));
    }
    if window.is_empty() {
        return Err(Error::InvalidParameter("window is empty".into()));
    }
    let mut required = killing.to_vec();
    for &w in window {
        required.push(w);
        required.extend(merged_neighbors(oracle, w).into_iter().map(|(u, _)| u));
    }
    let mut last: Option<LevelData> = None;
    let k = window.len();
    let esc = escalate(oracle, exh, &required, cfg, |sub| {
        let a: Vec<usize> = killing
            .iter()
            .map(|&x| sub.local_or_err(x))
            .collect::<Result<_>>()?;
        let w: Vec<usize> = window
            .iter()
            .map(|&x| sub.local_or_err(x))
            .collect::<Result<_>>()?;
        let (values, columns) = green_on_graph(sub.graph(), &a, &w, &cfg.solver)?;
        last = Some(LevelData {
            graph: sub.graph().clone(),
            killing: a,
            window: w,
            columns,
        });
        Ok(values.into_iter().flatten().collect())
    })?;
    let level = last.expect("at least one level evaluated");
    let pi = level.window.iter().map(|&x| level.graph.pi(x)).collect();
    Ok(GreenMatrix {
        window: window.to_vec(),
        killing: killing.to_vec(),
        values: esc.values.chunks(k).map(|c| c.to_vec()).collect(),
        pi,
        achieved_tolerance: esc.achieved_tolerance,
        levels_used: esc.levels_used,
        level: Some(level),
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct GreenReport {
    /// max |G(x,y)/pi(y) - G(y,x)/pi(x)| over the window, relative to the
    /// largest covariance entry.
    pub symmetry_residual: f64,
    /// max over non-killed vertices x of the truncation and window columns
    /// y of |pi(x)G(x,y) - sum_z c(x,z)G(z,y) - pi(y)1[x=y]| / pi(y).
    pub laplacian_residual: f64,
    pub min_eigenvalue: f64,
    pub max_eigenvalue: f64,
    /// Every entry in a killed row or column is exactly zero.
    pub killed_entries_zero: bool,
}

pub fn validate_green(g: &GreenMatrix) -> GreenReport {
    let cov = g.covariance();
    let k = g.window.len();
    let scale = cov.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1e-300);
    let mut symmetry = 0.0f64;
    for i in 0..k {
        for j in 0..k {
            symmetry = symmetry.max((cov[(i, j)] - cov[(j, i)]).abs() / scale);
        }
    }
    let killed = g.killed_mask();
    let killed_entries_zero = (0..k).all(|i| {
        !killed[i] || (0..k).all(|j| g.values[i][j] == 0.0 && g.values[j][i] == 0.0)
    });
    let mut laplacian = 0.0f64;
    if let Some(level) = &g.level {
        let graph = &level.graph;
        let mut is_killed = vec![false; graph.vertex_count()];
        for &a in &level.killing {
            is_killed[a] = true;
        }
        for (col, &y) in level.columns.iter().zip(&level.window) {
            if is_killed[y] {
                continue;
            }
            let py = graph.pi(y);
            for x in (0..graph.vertex_count()).filter(|&x| !is_killed[x]) {
                let mut r = graph.pi(x) * col[x];
                for (z, c) in graph.neighbors(x) {
                    r -= c * col[z];
                }
                if x == y {
                    r -= py;
                }
                laplacian = laplacian.max(r.abs() / py);
            }
        }
    }
    let free: Vec<usize> = (0..k).filter(|&i| !killed[i]).collect();
    let (min_eigenvalue, max_eigenvalue) = if free.is_empty() {
        (0.0, 0.0)
    } else {
        let sym = DMatrix::from_fn(free.len(), free.len(), |a, b| {
            let (i, j) = (free[a], free[b]);
            0.5 * (cov[(i, j)] + cov[(j, i)])
        });
        let ev = SymmetricEigen::new(sym).eigenvalues;
        (ev.min(), ev.max())
    };
    GreenReport {
        symmetry_residual: symmetry,
        laplacian_residual: laplacian,
        min_eigenvalue,
        max_eigenvalue,
        killed_entries_zero,
    }
}

/// Probability that the edge {x, y} lies in the free spanning forest,
/// c(x,y) G_y(x,x) / pi(x).
pub fn kirkhoff_edge_prob(
    oracle: &dyn GraphOracle,
    exh: &Exhaustion,
    x: VertexKey,
    y: VertexKey,
    cfg: &ExtensionConfig,
) -> Result<f64> {
    let c = merged_neighbors(oracle, x)
        .into_iter()
        .find(|&(u, _)| u == y)
        .map(|(_, c)| c)
        .ok_or_else(|| Error::InvalidParameter(format!("{x} and {y} are not adjacent")))?;
    let g = green(oracle, exh, &[y], &[x], cfg)?;
    Ok(c * g.values[0][0] / oracle.pi(x))
}

/// Relative eigenvalue floor below which a covariance is rejected.
pub const PSD_TOL: f64 = 1e-8;
/// Dimension at and above which the field is factored by Cholesky.
pub const CHOLESKY_DIMENSION: usize = 200;

/// Linear map taking i.i.d. standard normals to field values.
#[derive(Clone, Debug)]
pub struct GffSampler {
    window: Vec<VertexKey>,
    free: Vec<usize>,
    factor: DMatrix<f64>,
}

impl GffSampler {
    pub fn new(g: &GreenMatrix) -> Result<Self> {
        let cov = g.covariance();
        let killed = g.killed_mask();
        let free: Vec<usize> = (0..g.window.len()).filter(|&i| !killed[i]).collect();
        let d = free.len();
        let sym = DMatrix::from_fn(d, d, |a, b| {
            let (i, j) = (free[a], free[b]);
            0.5 * (cov[(i, j)] + cov[(j, i)])
        });
        let factor = if d == 0 {
            DMatrix::zeros(0, 0)
        } else if d < CHOLESKY_DIMENSION {
            let eig = SymmetricEigen::new(sym);
            let max = eig.eigenvalues.max();
            let min = eig.eigenvalues.min();
            if min < -PSD_TOL * max.abs().max(1e-300) {
                return Err(Error::NotPsd {
                    eigenvalue: min,
                    scale: max,
                });
            }
            let roots = DVector::from_iterator(d, eig.eigenvalues.iter().map(|&l| l.max(0.0).sqrt()));
            let mut f = eig.eigenvectors;
            for (j, r) in roots.iter().enumerate() {
                f.column_mut(j).scale_mut(*r);
            }
            f
        } else {
            let scale = sym.diagonal().max();
            let mut jitter = 0.0;
            loop {
                let mut m = sym.clone();
                for i in 0..d {
                    m[(i, i)] += jitter;
                }
                if let Some(ch) = m.cholesky() {
                    break ch.l();
                }
                jitter = if jitter == 0.0 { 1e-12 * scale } else { jitter * 10.0 };
                if jitter > PSD_TOL * scale {
                    return Err(Error::NotPsd {
                        eigenvalue: -jitter,
                        scale,
                    });
                }
            }
        };
        Ok(Self {
            window: g.window.clone(),
            free,
            factor,
        })
    }

    /// One field sample; killed coordinates are exactly zero.
    pub fn sample(&self, seed: u64, replica: u64) -> Vec<f64> {
        let mut rng = replica_rng(seed, replica);
        let r = self.factor.ncols();
        let z = DVector::from_iterator(r, (0..r).map(|_| StandardNormal.sample(&mut rng)));
        let x = &self.factor * z;
        let mut out = vec![0.0; self.window.len()];
        for (a, &i) in self.free.iter().enumerate() {
            out[i] = x[a];
        }
        out
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct GffSamples {
    pub window: Vec<VertexKey>,
    /// One row per replica.
    pub rows: Vec<Vec<f64>>,
}

impl GffSamples {
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        let header: Vec<String> = self.window.iter().map(|k| k.to_string()).collect();
        s.push_str(&header.join(","));
        s.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|x| format!("{x:.17e}")).collect();
            s.push_str(&cells.join(","));
            s.push('\n');
        }
        s
    }
}

/// Draws `replicas` independent samples of the free field with covariance
/// G/pi on the window of `g`.
pub fn gff_sample(g: &GreenMatrix, replicas: u64, seed: u64) -> Result<GffSamples> {
    if replicas == 0 {
        return Err(Error::InvalidParameter("replicas must be at least 1".into()));
    }
    let sampler = GffSampler::new(g)?;
    let rows = par::map_replicas(replicas, |i| sampler.sample(seed, i));
    Ok(GffSamples {
        window: g.window.clone(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::FiniteOracle;

    #[test]
    fn path_green_is_resistance() {
        // Killed at 0 on the unit path 0-1-2: G(x,x)/pi(x) = R(x <-> 0) = x.
        let g = WeightedGraph::path(3).unwrap();
        let (vals, _) = green_on_graph(&g, &[0], &[1, 2], &SolverConfig::default()).unwrap();
        assert!((vals[0][0] / 2.0 - 1.0).abs() < 1e-12);
        assert!((vals[1][1] / 1.0 - 2.0).abs() < 1e-12);
        let via = green_via_hitting(&g, &[0], &[1, 2], &SolverConfig::default()).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!((vals[i][j] - via[i][j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn killed_coordinates_vanish() {
        let o = FiniteOracle::new(WeightedGraph::cycle(5).unwrap());
        let g = green(&o, &Exhaustion::Ball, &[0], &[0, 1, 2], &ExtensionConfig::default())
            .unwrap();
        let s = gff_sample(&g, 20, 3).unwrap();
        assert!(s.rows.iter().all(|r| r[0] == 0.0));
        assert!(validate_green(&g).killed_entries_zero);
    }
}
