use reflected_walk::graph::{Exhaustion, FiniteOracle, GraphOracle, Tree, WeightedGraph};
use reflected_walk::green::{
    gff_sample, green, green_on_graph, green_via_hitting, kirkhoff_edge_prob, validate_green,
    CHOLESKY_DIMENSION,
};
use reflected_walk::harmonic::ExtensionConfig;
use reflected_walk::linalg::SolverConfig;
use reflected_walk::walk::{build_kernel, simulate, Event, KernelConfig, RateSchedule, StopRule};

fn path3() -> FiniteOracle {
    FiniteOracle::new(WeightedGraph::path(3).unwrap())
}

#[test]
fn path_green_function() {
    let g = green(&path3(), &Exhaustion::Ball, &[0], &[0, 1, 2], &ExtensionConfig::default()).unwrap();
    let expect = [[0.0, 0.0, 0.0], [0.0, 2.0, 1.0], [0.0, 2.0, 2.0]];
    for i in 0..3 {
        for j in 0..3 {
            assert!((g.values[i][j] - expect[i][j]).abs() < 1e-12, "{i} {j}");
        }
    }
    let cov = g.covariance();
    assert!((cov[(1, 2)] - 1.0).abs() < 1e-12 && (cov[(2, 1)] - 1.0).abs() < 1e-12);
    let r = validate_green(&g);
    assert!(r.symmetry_residual < 1e-12);
    assert!(r.laplacian_residual < 1e-12);
    assert!(r.killed_entries_zero);
}

#[test]
fn hitting_factorization_matches_fundamental_matrix() {
    let g = WeightedGraph::from_edges(
        6,
        &[(0, 1, 1.0), (1, 2, 2.5), (2, 3, 0.3), (3, 4, 1.0), (4, 5, 2.0), (5, 0, 1.0), (1, 4, 0.7)],
    )
    .unwrap();
    let window: Vec<usize> = (0..6).collect();
    let (a, _) = green_on_graph(&g, &[0, 3], &window, &SolverConfig::default()).unwrap();
    let b = green_via_hitting(&g, &[0, 3], &window, &SolverConfig::default()).unwrap();
    for i in 0..6 {
        for j in 0..6 {
            assert!((a[i][j] - b[i][j]).abs() < 1e-12);
        }
    }
}

#[test]
fn tree_window_green_is_valid() {
    let t = Tree::regular(3).unwrap();
    let window: Vec<u64> = (0..13).collect();
    let g = green(&t, &Exhaustion::Ball, &[0], &window, &ExtensionConfig::default()).unwrap();
    let r = validate_green(&g);
    assert!(r.symmetry_residual <= 1e-9);
    assert!(r.laplacian_residual <= 1e-8);
    assert!(r.min_eigenvalue >= -1e-8 * r.max_eigenvalue);
    // Killed at the root, G(v, v)/pi(v) is the effective resistance to the
    // root in the truncation, which is the depth on a unit tree.
    for (i, &v) in window.iter().enumerate().skip(1) {
        let depth = t.depth(v) as f64;
        assert!((g.values[i][i] / t.pi(v) - depth).abs() < 1e-9);
    }
}

#[test]
fn kirkhoff_examples() {
    let cfg = ExtensionConfig::default();
    let k3 = FiniteOracle::new(WeightedGraph::complete(3).unwrap());
    assert!((kirkhoff_edge_prob(&k3, &Exhaustion::Ball, 0, 1, &cfg).unwrap() - 2.0 / 3.0).abs() < 1e-12);
    let bridge = FiniteOracle::new(
        WeightedGraph::from_edges(4, &[(0, 1, 1.0), (1, 2, 1.0), (2, 0, 1.0), (2, 3, 0.4)]).unwrap(),
    );
    assert!((kirkhoff_edge_prob(&bridge, &Exhaustion::Ball, 2, 3, &cfg).unwrap() - 1.0).abs() < 1e-12);
    let wt = FiniteOracle::new(
        WeightedGraph::from_edges(3, &[(0, 1, 1.0), (1, 2, 2.0), (0, 2, 3.0)]).unwrap(),
    );
    assert!((kirkhoff_edge_prob(&wt, &Exhaustion::Ball, 0, 2, &cfg).unwrap() - 9.0 / 11.0).abs() < 1e-12);
    assert!(kirkhoff_edge_prob(&wt, &Exhaustion::Ball, 0, 0, &cfg).is_err());
    // Every tree edge is a bridge.
    let t = Tree::regular(3).unwrap();
    assert!((kirkhoff_edge_prob(&t, &Exhaustion::Ball, 5, 1, &cfg).unwrap() - 1.0).abs() < 1e-9);
}

#[test]
fn field_on_the_path() {
    let g = green(&path3(), &Exhaustion::Ball, &[0], &[0, 1, 2], &ExtensionConfig::default()).unwrap();
    let n = 100_000u64;
    let s = gff_sample(&g, n, 17).unwrap();
    assert!(s.rows.iter().all(|r| r[0] == 0.0));
    let xs: Vec<f64> = s.rows.iter().map(|r| r[1] * r[1]).collect();
    let m = xs.iter().sum::<f64>() / n as f64;
    let sd = (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n as f64 - 1.0)).sqrt();
    assert!((m - 1.0).abs() < 5.0 * sd / (n as f64).sqrt(), "variance {m}");
    let again = gff_sample(&g, n, 17).unwrap();
    assert_eq!(again.to_csv(), s.to_csv());
    assert!(gff_sample(&g, 0, 17).is_err());
}

#[test]
fn large_windows_use_the_cholesky_branch() {
    let n = CHOLESKY_DIMENSION + 20;
    let o = FiniteOracle::new(WeightedGraph::cycle(n).unwrap());
    let window: Vec<u64> = (0..n as u64).collect();
    let cfg = ExtensionConfig {
        n_max: n,
        ..ExtensionConfig::default()
    };
    let g = green(&o, &Exhaustion::Ball, &[0], &window, &cfg).unwrap();
    let s = gff_sample(&g, 5, 1).unwrap();
    assert_eq!(s.rows.len(), 5);
    assert!(s.rows.iter().all(|r| r.len() == n && r[0] == 0.0 && r.iter().all(|x| x.is_finite())));
}

#[test]
fn visit_counts_match_green_function() {
    let o = FiniteOracle::new(
        WeightedGraph::from_edges(4, &[(0, 1, 1.0), (1, 2, 2.0), (2, 3, 1.0), (3, 1, 0.5)]).unwrap(),
    );
    let g = green(&o, &Exhaustion::Ball, &[0], &[2, 3], &ExtensionConfig::default()).unwrap();
    let k = build_kernel(&o, &Exhaustion::Ball, 3, &KernelConfig::default()).unwrap();
    let stop = StopRule::HitSet(vec![0]);
    let reps = 100_000u64;
    let visits: Vec<f64> = (0..reps)
        .map(|r| {
            let t = simulate(&k, 2, &stop, &RateSchedule::default(), 23, r, 1_000_000).unwrap();
            t.events
                .iter()
                .filter(|e| matches!(e, Event::Visit { vertex: 3, .. }))
                .count() as f64
        })
        .collect();
    let m = visits.iter().sum::<f64>() / reps as f64;
    let sd = (visits.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (reps as f64 - 1.0)).sqrt();
    let se = sd / (reps as f64).sqrt();
    assert!((m - g.values[0][1]).abs() < 3.0 * se, "{m} vs {}", g.values[0][1]);
}
