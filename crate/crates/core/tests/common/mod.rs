//! Independent dense oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use reflected_walk::graph::{GraphOracle, VertexKey};

/// Harmonic extension of `values` on `boundary` over the graph induced on
/// `keys`, by a dense LU solve of the Laplacian written out directly from
/// the oracle's neighbour lists.
pub fn dense_extension(
    oracle: &dyn GraphOracle,
    keys: &[VertexKey],
    boundary: &[VertexKey],
    values: &[f64],
) -> HashMap<VertexKey, f64> {
    let fixed: HashMap<VertexKey, f64> = boundary.iter().copied().zip(values.iter().copied()).collect();
    let free: Vec<VertexKey> = keys.iter().copied().filter(|k| !fixed.contains_key(k)).collect();
    let index: HashMap<VertexKey, usize> = free.iter().enumerate().map(|(i, &k)| (k, i)).collect();
    let inside: std::collections::HashSet<VertexKey> = keys.iter().copied().collect();
    let m = free.len();
    let mut lap = DMatrix::<f64>::zeros(m, m);
    let mut rhs = DVector::<f64>::zeros(m);
    for (i, &x) in free.iter().enumerate() {
        for (y, c) in oracle.neighbors(x) {
            if !inside.contains(&y) {
                continue;
            }
            lap[(i, i)] += c;
            if let Some(&v) = fixed.get(&y) {
                rhs[i] += c * v;
            } else {
                lap[(i, index[&y])] -= c;
            }
        }
    }
    let sol = lap.lu().solve(&rhs).expect("dense Laplacian solve");
    let mut out = fixed;
    for (i, &x) in free.iter().enumerate() {
        out.insert(x, sol[i]);
    }
    out
}

/// Harmonic measure of `targets` from `x` on the graph induced on `keys`.
pub fn dense_harmonic_measure(
    oracle: &dyn GraphOracle,
    keys: &[VertexKey],
    targets: &[VertexKey],
    x: VertexKey,
) -> Vec<f64> {
    (0..targets.len())
        .map(|j| {
            let mut phi = vec![0.0; targets.len()];
            phi[j] = 1.0;
            dense_extension(oracle, keys, targets, &phi)[&x]
        })
        .collect()
}
