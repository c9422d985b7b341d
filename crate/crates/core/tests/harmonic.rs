mod common;

use reflected_walk::graph::{ball, level_subgraph, GraphOracle, Exhaustion, FiniteOracle, Lattice, Tree, WeightedGraph};
use reflected_walk::harmonic::{
    cycle_orthogonality_check, dirichlet_energy, harmonic_measure, min_energy_extension,
    solve_free_dirichlet, DirichletProblem, ExtensionConfig,
};
use reflected_walk::linalg::SolverConfig;
use reflected_walk::Error;

fn solve(g: &WeightedGraph, boundary: Vec<usize>, values: Vec<f64>) -> Vec<f64> {
    let p = DirichletProblem {
        graph: g,
        boundary,
        values,
    };
    solve_free_dirichlet(&p, 1e-10, &SolverConfig::default()).unwrap()
}

#[test]
fn path_midpoint_interpolates() {
    let g = WeightedGraph::path(3).unwrap();
    let f = solve(&g, vec![0, 2], vec![0.0, 1.0]);
    assert!((f[1] - 0.5).abs() < 1e-14);
}

#[test]
fn full_boundary_is_identity() {
    let g = WeightedGraph::cycle(5).unwrap();
    let phi = vec![0.3, -1.0, 2.0, 7.5, 0.0];
    let f = solve(&g, (0..5).collect(), phi.clone());
    assert_eq!(f, phi);
}

#[test]
fn single_boundary_point_gives_constant() {
    let g = WeightedGraph::complete(5).unwrap();
    let f = solve(&g, vec![3], vec![7.0]);
    assert!(f.iter().all(|&x| (x - 7.0).abs() < 1e-12));
}

#[test]
fn finite_segment_extension_matches_direct_solve() {
    let g = WeightedGraph::from_edges(5, &[(0, 1, 1.0), (1, 2, 2.0), (2, 3, 0.5), (3, 4, 1.0)]).unwrap();
    let direct = solve(&g, vec![0, 3], vec![1.0, -2.0]);
    let o = FiniteOracle::new(g);
    let ext = min_energy_extension(
        &o,
        &Exhaustion::Ball,
        &[0, 3],
        &[1.0, -2.0],
        &[1, 2, 4],
        &ExtensionConfig::default(),
    )
    .unwrap();
    for (i, &w) in [1usize, 2, 4].iter().enumerate() {
        assert!((ext.values[0][i] - direct[w]).abs() < 1e-10);
    }
}

#[test]
fn constant_data_on_tree_stays_constant() {
    let t = Tree::regular(2).unwrap();
    let ext = min_energy_extension(
        &t,
        &Exhaustion::Ball,
        &[0],
        &[1.0],
        &[1, 5, 12, 30],
        &ExtensionConfig::default(),
    )
    .unwrap();
    assert!(ext.values[0].iter().all(|&v| (v - 1.0).abs() < 1e-12));
}

#[test]
fn z3_level_eight_matches_dense_solve() {
    let z3 = Lattice::new(3).unwrap();
    let o = z3.encode(&[0, 0, 0]);
    let e1 = z3.encode(&[1, 0, 0]);
    let w = z3.encode(&[2, 0, 0]);
    let sub = level_subgraph(&z3, &Exhaustion::Ball, 8).unwrap();
    let a = [sub.local(o).unwrap(), sub.local(e1).unwrap()];
    let f = solve(sub.graph(), a.to_vec(), vec![0.0, 1.0]);
    let oracle = common::dense_extension(&z3, sub.keys(), &[o, e1], &[0.0, 1.0]);
    assert!((f[sub.local(w).unwrap()] - oracle[&w]).abs() < 1e-6);
}

#[test]
fn harmonic_measure_trivial_cases() {
    let t = Tree::regular(3).unwrap();
    let cfg = ExtensionConfig::default();
    let hm = harmonic_measure(&t, &Exhaustion::Ball, &[7], 20, &cfg).unwrap();
    assert!((hm.probabilities[0] - 1.0).abs() < 1e-12);
    let hm = harmonic_measure(&t, &Exhaustion::Ball, &[4, 8, 12], 8, &cfg).unwrap();
    assert_eq!(hm.probabilities, vec![0.0, 1.0, 0.0]);
}

#[test]
fn binary_tree_measure_matches_dense_solve() {
    let t = Tree::regular(2).unwrap();
    let hm = harmonic_measure(&t, &Exhaustion::Ball, &[0, 1], 2, &ExtensionConfig::default()).unwrap();
    let keys: Vec<u64> = ball(&t, 9).into_iter().map(|(k, _)| k).collect();
    let oracle = common::dense_harmonic_measure(&t, &keys, &[0, 1], 2);
    for (a, b) in hm.probabilities.iter().zip(&oracle) {
        assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }
    let sum: f64 = hm.probabilities.iter().sum();
    assert!((sum - 1.0).abs() < 1e-10);
}

#[test]
fn z3_measure_is_a_probability_vector() {
    let z3 = Lattice::new(3).unwrap();
    let a = [z3.encode(&[0, 0, 0]), z3.encode(&[1, 0, 0]), z3.encode(&[0, 1, 0])];
    let cfg = ExtensionConfig {
        cauchy_tol: 5e-3,
        n_max: 12,
        ..ExtensionConfig::default()
    };
    let hm = harmonic_measure(&z3, &Exhaustion::Ball, &a, z3.encode(&[3, 0, 0]), &cfg).unwrap();
    let sum: f64 = hm.probabilities.iter().sum();
    assert!((sum - 1.0).abs() < 1e-10);
    assert!(hm.probabilities.iter().all(|&p| p >= 0.0));
    assert!(hm.achieved_tolerance <= 5e-3);
}

#[test]
fn escalation_budget_exhaustion_is_reported() {
    let z3 = Lattice::new(3).unwrap();
    let cfg = ExtensionConfig {
        cauchy_tol: 1e-14,
        n_max: 5,
        ..ExtensionConfig::default()
    };
    let err = harmonic_measure(&z3, &Exhaustion::Ball, &[z3.root()], z3.encode(&[0, 0, 2]), &cfg);
    // A singleton target is exact at every level; two targets are not.
    assert!(err.is_ok());
    let err = harmonic_measure(
        &z3,
        &Exhaustion::Ball,
        &[z3.root(), z3.encode(&[1, 0, 0])],
        z3.encode(&[0, 0, 2]),
        &cfg,
    )
    .unwrap_err();
    assert!(matches!(err, Error::NotCauchy { .. }));
}

#[test]
fn cycle_orthogonality_examples() {
    let c4 = WeightedGraph::cycle(4).unwrap();
    let f = solve(&c4, vec![0, 2], vec![0.0, 1.0]);
    assert!(cycle_orthogonality_check(&c4, &[0, 2], &f) < 1e-10);
    assert!(cycle_orthogonality_check(&c4, &[0, 2], &[0.0, 0.9, 1.0, 0.1]) > 1e-3);
    let k3 = WeightedGraph::complete(3).unwrap();
    let f = solve(&k3, vec![0], vec![2.0]);
    assert!(cycle_orthogonality_check(&k3, &[0], &f) < 1e-12);
}

#[test]
fn single_vertex_perturbations_raise_energy() {
    let g = WeightedGraph::from_edges(
        5,
        &[(0, 1, 1.0), (1, 2, 2.0), (2, 3, 0.5), (3, 4, 1.0), (1, 3, 3.0), (0, 4, 0.7)],
    )
    .unwrap();
    let f = solve(&g, vec![0, 2], vec![-1.0, 2.0]);
    let e0 = dirichlet_energy(&g, &f).energy;
    for x in [1usize, 3, 4] {
        for eps in [1e-3, 1e-6, -1e-3, -1e-6] {
            let mut h = f.clone();
            h[x] += eps;
            assert!(dirichlet_energy(&g, &h).energy > e0);
        }
    }
}
