//! Grounded Laplacian solves: dense Cholesky for small systems,
//! Jacobi-preconditioned conjugate gradients above a size threshold.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::WeightedGraph;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Systems with fewer unknowns than this use dense Cholesky.
    pub dense_threshold: usize,
    /// CG stops once max_i |r_i| / d_i <= rel_tol * max_i |b_i| / d_i.
    pub rel_tol: f64,
    pub max_iter: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            dense_threshold: 500,
            rel_tol: 1e-13,
            max_iter: 100_000,
        }
    }
}

enum Backend {
    Dense(Cholesky<f64, Dyn>),
    Iterative,
}

/// Solver for the Laplacian restricted to the complement of a boundary set
/// (the grounded Laplacian L_II with diagonal pi).
pub struct DirichletSolver<'g> {
    graph: &'g WeightedGraph,
    boundary: Vec<usize>,
    interior: Vec<usize>,
    local: Vec<usize>,
    backend: Backend,
    cfg: SolverConfig,
}

const NOT_INTERIOR: usize = usize::MAX;

impl<'g> DirichletSolver<'g> {
    pub fn new(graph: &'g WeightedGraph, boundary: &[usize], cfg: &SolverConfig) -> Result<Self> {
        let n = graph.vertex_count();
        let mut is_boundary = vec![false; n];
        for &a in boundary {
            if a >= n {
                return Err(Error::InvalidParameter(format!("boundary vertex {a} out of range")));
            }
            if is_boundary[a] {
                return Err(Error::InvalidParameter(format!("duplicate boundary vertex {a}")));
            }
            is_boundary[a] = true;
        }
        if boundary.is_empty() {
            return Err(Error::InvalidParameter("boundary set is empty".into()));
        }
        let interior: Vec<usize> = (0..n).filter(|&v| !is_boundary[v]).collect();
        let mut local = vec![NOT_INTERIOR; n];
        for (i, &v) in interior.iter().enumerate() {
            local[v] = i;
        }
        let backend = if interior.len() < cfg.dense_threshold {
            let m = interior.len();
            let mut l = DMatrix::<f64>::zeros(m, m);
            for (i, &v) in interior.iter().enumerate() {
                l[(i, i)] = graph.pi(v);
                for (w, c) in graph.neighbors(v) {
                    let j = local[w];
                    if j != NOT_INTERIOR {
                        l[(i, j)] -= c;
                    }
                }
            }
            let chol = Cholesky::new(l).ok_or_else(|| {
                Error::Singular("grounded Laplacian is not positive definite".into())
            })?;
            Backend::Dense(chol)
        } else {
            Backend::Iterative
        };
        Ok(Self {
            graph,
            boundary: boundary.to_vec(),
            interior,
            local,
            backend,
            cfg: cfg.clone(),
        })
    }

    pub fn interior(&self) -> &[usize] {
        &self.interior
    }

    pub fn boundary(&self) -> &[usize] {
        &self.boundary
    }

    /// Interior index of a graph vertex, if it is not on the boundary.
    pub fn interior_index(&self, v: usize) -> Option<usize> {
        let i = self.local[v];
        (i != NOT_INTERIOR).then_some(i)
    }

    /// Solves L_II z = rhs, with `rhs` and `z` indexed by interior position.
    pub fn solve_interior(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        assert_eq!(rhs.len(), self.interior.len());
        if self.interior.is_empty() {
            return Ok(Vec::new());
        }
        match &self.backend {
            Backend::Dense(chol) => {
                let b = DVector::from_column_slice(rhs);
                Ok(chol.solve(&b).as_slice().to_vec())
            }
            Backend::Iterative => self.pcg(rhs),
        }
    }

    /// Harmonic extension: values on the boundary (in boundary order) to a
    /// full vector harmonic at every interior vertex.
    pub fn extend(&self, values: &[f64]) -> Result<Vec<f64>> {
        assert_eq!(values.len(), self.boundary.len());
        let n = self.graph.vertex_count();
        let mut full = vec![0.0; n];
        for (&a, &x) in self.boundary.iter().zip(values) {
            full[a] = x;
        }
        let mut rhs = vec![0.0; self.interior.len()];
        for (i, &v) in self.interior.iter().enumerate() {
            for (w, c) in self.graph.neighbors(v) {
                if self.local[w] == NOT_INTERIOR {
                    rhs[i] += c * full[w];
                }
            }
        }
        let z = self.solve_interior(&rhs)?;
        for (i, &v) in self.interior.iter().enumerate() {
            full[v] = z[i];
        }
        Ok(full)
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (i, &v) in self.interior.iter().enumerate() {
            let mut s = self.graph.pi(v) * x[i];
            for (w, c) in self.graph.neighbors(v) {
                let j = self.local[w];
                if j != NOT_INTERIOR {
                    s -= c * x[j];
                }
            }
            out[i] = s;
        }
    }

    fn pcg(&self, b: &[f64]) -> Result<Vec<f64>> {
        let m = b.len();
        let diag: Vec<f64> = self.interior.iter().map(|&v| self.graph.pi(v)).collect();
        let scale = b
            .iter()
            .zip(&diag)
            .map(|(x, d)| (x / d).abs())
            .fold(0.0, f64::max);
        let mut x = vec![0.0; m];
        if scale == 0.0 {
            return Ok(x);
        }
        let target = self.cfg.rel_tol * scale;
        let mut r = b.to_vec();
        let mut z: Vec<f64> = r.iter().zip(&diag).map(|(r, d)| r / d).collect();
        let mut p = z.clone();
        let mut ap = vec![0.0; m];
        let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let mut resid = scale;
        for it in 0..self.cfg.max_iter {
            self.apply(&p, &mut ap);
            let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
            if pap <= 0.0 {
                return Err(Error::Singular("grounded Laplacian is not positive definite".into()));
            }
            let alpha = rz / pap;
            for i in 0..m {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            resid = r
                .iter()
                .zip(&diag)
                .map(|(r, d)| (r / d).abs())
                .fold(0.0, f64::max);
            if resid <= target {
                return Ok(x);
            }
            for i in 0..m {
                z[i] = r[i] / diag[i];
            }
            let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..m {
                p[i] = z[i] + beta * p[i];
            }
            if it + 1 == self.cfg.max_iter {
                break;
            }
        }
        Err(Error::NonConvergence {
            residual: resid / scale,
            iterations: self.cfg.max_iter,
        })
    }
}

/// Determinant of the Laplacian with row and column `drop` removed.
pub fn reduced_laplacian_det(graph: &WeightedGraph, drop: usize) -> f64 {
    let n = graph.vertex_count();
    if n == 1 {
        return 1.0;
    }
    let idx = |v: usize| if v < drop { v } else { v - 1 };
    let mut l = DMatrix::<f64>::zeros(n - 1, n - 1);
    for v in (0..n).filter(|&v| v != drop) {
        l[(idx(v), idx(v))] = graph.pi(v);
        for (w, c) in graph.neighbors(v) {
            if w != drop {
                l[(idx(v), idx(w))] -= c;
            }
        }
    }
    l.lu().determinant()
}
