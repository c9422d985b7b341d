use std::collections::HashSet;

use reflected_walk::forest::{
    aldous_broder_window, enumerate_ust, loop_erase, matrix_tree_edge_prob, wilson_sample,
};
use reflected_walk::graph::{ball, Exhaustion, FiniteOracle, Lattice, Tree, VertexKey, WeightedGraph};
use reflected_walk::linalg::reduced_laplacian_det;
use reflected_walk::stats::chi_square_gof;
use reflected_walk::walk::{build_kernel, KernelConfig};
use reflected_walk::Error;

fn weighted_triangle() -> WeightedGraph {
    WeightedGraph::from_edges(3, &[(0, 1, 1.0), (1, 2, 2.0), (0, 2, 3.0)]).unwrap()
}

#[test]
fn loop_erasure_examples() {
    let (a, b, c) = ('a', 'b', 'c');
    let (le, flag) = loop_erase(&[(a, false), (b, false), (a, false), (c, false)]);
    assert_eq!(le, vec![(a, false), (c, false)]);
    assert!(!flag);
    let (le, _) = loop_erase(&[(a, false), (b, false), (c, false)]);
    assert_eq!(le.len(), 3);
    let (le, flag) = loop_erase(&[(a, false), (b, false), (a, false), (c, true)]);
    assert_eq!(le, vec![(a, false), (c, true)]);
    assert!(flag);
    let (le, flag) = loop_erase(&[(a, false), (b, true), (a, false), (c, false)]);
    assert_eq!(le, vec![(a, false), (c, false)]);
    assert!(!flag);
}

#[test]
fn enumeration_counts() {
    let k3 = enumerate_ust(&WeightedGraph::complete(3).unwrap()).unwrap();
    assert_eq!(k3.len(), 3);
    assert!(k3.probabilities().iter().all(|&p| (p - 1.0 / 3.0).abs() < 1e-15));
    let c4 = enumerate_ust(&WeightedGraph::cycle(4).unwrap()).unwrap();
    assert_eq!(c4.len(), 4);
    assert!(c4.probabilities().iter().all(|&p| (p - 0.25).abs() < 1e-15));
    let k4 = WeightedGraph::complete(4).unwrap();
    assert_eq!(enumerate_ust(&k4).unwrap().len(), 16);
    assert!((reduced_laplacian_det(&k4, 0) - 16.0).abs() < 1e-9);
    let wt = enumerate_ust(&weighted_triangle()).unwrap();
    let mut p = wt.probabilities();
    p.sort_by(f64::total_cmp);
    for (a, b) in p.iter().zip([2.0 / 11.0, 3.0 / 11.0, 6.0 / 11.0]) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn enumeration_refuses_large_graphs() {
    assert!(enumerate_ust(&WeightedGraph::complete(11).unwrap()).is_err());
    let err = enumerate_ust(&WeightedGraph::complete(10).unwrap()).unwrap_err();
    assert!(matches!(err, Error::CountOverflow(_)));
}

#[test]
fn matrix_tree_examples() {
    let k3 = WeightedGraph::complete(3).unwrap();
    assert!((matrix_tree_edge_prob(&k3, 0, 1).unwrap() - 2.0 / 3.0).abs() < 1e-14);
    let p3 = WeightedGraph::path(3).unwrap();
    assert!((matrix_tree_edge_prob(&p3, 1, 2).unwrap() - 1.0).abs() < 1e-14);
    let wt = weighted_triangle();
    assert!((matrix_tree_edge_prob(&wt, 0, 2).unwrap() - 9.0 / 11.0).abs() < 1e-14);
    assert!(matrix_tree_edge_prob(&p3, 0, 2).is_err());
}

#[test]
fn wilson_on_a_path_is_deterministic() {
    let o = FiniteOracle::new(WeightedGraph::path(3).unwrap());
    let k = build_kernel(&o, &Exhaustion::Ball, 2, &KernelConfig::default()).unwrap();
    for r in 0..200 {
        let f = wilson_sample(&k, &[1, 0, 2], 4, r, 1000).unwrap();
        assert_eq!(f.edges, vec![(0, 1), (1, 2)]);
    }
}

#[test]
fn both_samplers_match_the_weighted_triangle() {
    let g = weighted_triangle();
    let dist = enumerate_ust(&g).unwrap();
    let o = FiniteOracle::new(g);
    let k = build_kernel(&o, &Exhaustion::Ball, 1, &KernelConfig::default()).unwrap();
    let all = [0u64, 1, 2];
    let mut ab = vec![0u64; 3];
    let mut wi = vec![0u64; 3];
    for r in 0..30_000 {
        let idx = |e: &[(VertexKey, VertexKey)]| {
            let e: Vec<(usize, usize)> = e.iter().map(|&(u, v)| (u as usize, v as usize)).collect();
            dist.index_of(&e).unwrap()
        };
        ab[idx(&aldous_broder_window(&k, 1, &all, &all, 8, r, 10_000).unwrap().edges)] += 1;
        wi[idx(&wilson_sample(&k, &[2, 0, 1], 8, r, 10_000).unwrap().edges)] += 1;
    }
    let p = dist.probabilities();
    assert!(chi_square_gof(&ab, &p).p_value > 0.01);
    assert!(chi_square_gof(&wi, &p).p_value > 0.01);
}

fn is_forest(vertices: &[VertexKey], edges: &[(VertexKey, VertexKey)]) -> usize {
    let idx = |k: VertexKey| vertices.iter().position(|&v| v == k).unwrap();
    let mut parent: Vec<usize> = (0..vertices.len()).collect();
    fn find(p: &mut [usize], x: usize) -> usize {
        let mut r = x;
        while p[r] != r {
            r = p[r];
        }
        p[x] = r;
        r
    }
    for &(u, v) in edges {
        let (a, b) = (find(&mut parent, idx(u)), find(&mut parent, idx(v)));
        assert_ne!(a, b, "cycle through ({u}, {v})");
        parent[a] = b;
    }
    vertices.len() - edges.len()
}

#[test]
fn wilson_on_z3_gives_forests_with_consistent_component_counts() {
    let z3 = Lattice::new(3).unwrap();
    let k = build_kernel(&z3, &Exhaustion::Ball, 2, &KernelConfig::fixed(5)).unwrap();
    let order: Vec<VertexKey> = ball(&z3, 2).into_iter().map(|(v, _)| v).collect();
    for r in 0..200 {
        let f = wilson_sample(&k, &order, 1, r, 10_000_000).unwrap();
        let comps = is_forest(&order, &f.edges);
        assert_eq!(comps, f.branches.last().map_or(1, |b| b.components));
        assert_eq!(comps, 1 + f.escaped_branches());
        assert!(f.branches.windows(2).all(|w| w[0].components <= w[1].components));
    }
}

#[test]
fn wilson_on_a_tree_never_escapes() {
    let t = Tree::regular(3).unwrap();
    let k = build_kernel(&t, &Exhaustion::Ball, 4, &KernelConfig::default()).unwrap();
    let order: Vec<VertexKey> = ball(&t, 4).into_iter().map(|(v, _)| v).collect();
    for r in 0..100 {
        let f = wilson_sample(&k, &order, 2, r, 10_000_000).unwrap();
        assert!(!f.has_escape());
        assert_eq!(is_forest(&order, &f.edges), 1);
    }
}

#[test]
fn aldous_broder_window_on_z3_is_acyclic() {
    let z3 = Lattice::new(3).unwrap();
    let k = build_kernel(&z3, &Exhaustion::Ball, 3, &KernelConfig::fixed(5)).unwrap();
    let window: Vec<VertexKey> = ball(&z3, 1).into_iter().map(|(v, _)| v).collect();
    let cover: Vec<VertexKey> = ball(&z3, 2).into_iter().map(|(v, _)| v).collect();
    let wset: HashSet<VertexKey> = window.iter().copied().collect();
    for r in 0..200 {
        let f = aldous_broder_window(&k, z3.encode(&[0, 0, 0]), &window, &cover, 3, r, 10_000_000)
            .unwrap();
        let inside = f.edges_within(&wset);
        is_forest(&window, &inside);
        assert_eq!(f.edges.len() + f.unresolved, window.len() - 1);
    }
    let bad = aldous_broder_window(&k, z3.encode(&[3, 0, 0]), &window, &cover, 3, 0, 100);
    assert!(bad.is_err());
}
