use std::f64::consts::TAU;

use nalgebra::{DMatrix, DVector};
use reflected_walk::graph::{end_prefix, VertexKey};
use reflected_walk::harmonic::ExtensionConfig;
use reflected_walk::planar::{
    boundary_trace, end_image, export_svg, face_convexity, render_svg, submap, tutte_embed,
    tutte_embed_infinite, CellMap, Marks, PlanarMap, PlanarOracle, SvgOptions,
};

fn cfg() -> ExtensionConfig {
    ExtensionConfig::default()
}

fn square_with_centre() -> PlanarMap {
    let pts = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0], [0.5, 0.5]];
    let mut edges: Vec<_> = (0..4).map(|k| (k, (k + 1) % 4, 1.0)).collect();
    edges.extend((0..4).map(|k| (k, 4, 1.0)));
    PlanarMap::from_straight_line(&pts, &edges, Marks { x: 4, y: 0 }).unwrap()
}

#[test]
fn boundary_trace_examples() {
    let sq = square_with_centre();
    assert_eq!(boundary_trace(&sq).unwrap(), vec![1, 2, 3, 0]);

    let pts = [[0.0, 0.0], [1.0, 0.0], [0.5, 1.0], [2.0, -0.5]];
    let pendant = PlanarMap::from_straight_line(
        &pts,
        &[(0, 1, 1.0), (1, 2, 1.0), (2, 0, 1.0), (1, 3, 1.0)],
        Marks { x: 2, y: 0 },
    )
    .unwrap();
    assert_eq!(boundary_trace(&pendant).unwrap(), vec![3, 1, 2, 0]);

    let tri = PlanarMap::from_straight_line(
        &[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]],
        &[(0, 1, 1.0), (1, 2, 1.0), (2, 0, 1.0)],
        Marks { x: 1, y: 0 },
    )
    .unwrap();
    let trace = boundary_trace(&tri).unwrap();
    assert_eq!(trace.len(), 3);
    assert_eq!(*trace.last().unwrap(), 0);
}

#[test]
fn wheels_land_on_roots_of_unity() {
    for m in [3usize, 5, 8, 11] {
        let w = PlanarMap::wheel(m).unwrap();
        let e = tutte_embed(&w, &cfg()).unwrap();
        for (k, &v) in e.boundary.iter().enumerate() {
            let t = TAU * (k + 1) as f64 / m as f64;
            let p = e.positions[v];
            assert!((p[0] - t.cos()).hypot(p[1] - t.sin()) < 1e-10);
        }
        let c = e.positions[m];
        assert!(c[0].hypot(c[1]) < 1e-10);
        assert_eq!(e.positions[w.marks().y], [1.0, 0.0]);
    }
}

#[test]
fn square_centre_goes_to_origin() {
    let e = tutte_embed(&square_with_centre(), &cfg()).unwrap();
    assert!(e.positions[4][0].abs() < 1e-12 && e.positions[4][1].abs() < 1e-12);
}

#[test]
fn grid_interior_matches_explicit_system() {
    let grid = PlanarMap::grid(3, 3).unwrap();
    let e = tutte_embed(&grid, &cfg()).unwrap();
    let boundary = &e.boundary;
    let interior: Vec<usize> = (0..9).filter(|v| !boundary.contains(v)).collect();
    assert_eq!(interior, vec![4]);
    // Write out the 9 x 9 system L f = 0 off the boundary, f = H on it.
    let g = grid.graph();
    for coord in 0..2 {
        let mut a = DMatrix::<f64>::zeros(9, 9);
        let mut b = DVector::<f64>::zeros(9);
        for v in 0..9 {
            if boundary.contains(&v) {
                a[(v, v)] = 1.0;
                b[v] = e.positions[v][coord];
            } else {
                for (u, c) in g.neighbors(v) {
                    a[(v, v)] += c;
                    a[(v, u)] -= c;
                }
            }
        }
        let f = a.lu().solve(&b).unwrap();
        for v in 0..9 {
            assert!((f[v] - e.positions[v][coord]).abs() < 1e-12);
        }
    }
}

#[test]
fn convexity_and_maximum_principle() {
    let w5 = PlanarMap::wheel(5).unwrap();
    let e = tutte_embed(&w5, &cfg()).unwrap();
    assert!(face_convexity(&e, &w5, 1e-12).max_defect <= 1e-12);
    let grid = PlanarMap::grid(4, 5).unwrap();
    let g = tutte_embed(&grid, &cfg()).unwrap();
    let rep = face_convexity(&g, &grid, 1e-9);
    assert!(rep.passed, "{}", rep.max_defect);
    assert!(g.positions.iter().all(|p| p[0].hypot(p[1]) <= 1.0 + 1e-12));

    let mut bent = g.clone();
    let x = grid.marks().x;
    bent.positions[x] = [0.95, 0.0];
    assert!(face_convexity(&bent, &grid, 1e-9).max_defect > 1e-3);
}

#[test]
fn angle_reconstruction_is_exact() {
    let grid = PlanarMap::grid(3, 4).unwrap();
    let e = tutte_embed(&grid, &cfg()).unwrap();
    for (a, b) in e.harmonic_measure_from_angles().iter().zip(&e.harmonic_measure) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn degenerate_and_invalid_maps_are_rejected() {
    let edge = PlanarMap::from_straight_line(&[[0.0, 0.0], [1.0, 0.0]], &[(0, 1, 1.0)], Marks { x: 1, y: 0 })
        .unwrap();
    assert!(tutte_embed(&edge, &cfg()).is_err());
    let w = PlanarMap::wheel(4).unwrap();
    let mut broken: serde_json::Value = serde_json::from_str(&w.to_json_string()).unwrap();
    broken["half_edges"][0]["twin"] = serde_json::json!(0);
    assert!(PlanarMap::from_json_str(&broken.to_string()).is_err());
    // K_{3,3}-free but non-planar rotation: swap two rotation successors.
    let mut twisted: serde_json::Value = serde_json::from_str(&w.to_json_string()).unwrap();
    let n0 = twisted["half_edges"][0]["next"].clone();
    let n1 = twisted["half_edges"][n0.as_u64().unwrap() as usize]["next"].clone();
    let n2 = twisted["half_edges"][n1.as_u64().unwrap() as usize]["next"].clone();
    twisted["half_edges"][0]["next"] = n1.clone();
    twisted["half_edges"][n1.as_u64().unwrap() as usize]["next"] = n0.clone();
    twisted["half_edges"][n0.as_u64().unwrap() as usize]["next"] = n2;
    assert!(PlanarMap::from_json_str(&twisted.to_string()).is_err());
    assert!(PlanarMap::wheel(2).is_err());
}

#[test]
fn json_round_trip() {
    let g = PlanarMap::grid(3, 3).unwrap();
    let back = PlanarMap::from_json_str(&g.to_json_string()).unwrap();
    assert_eq!(back.half_edges(), g.half_edges());
    assert_eq!(back.external_half_edge(), g.external_half_edge());
    assert_eq!(back.to_json_string(), g.to_json_string());
}

#[test]
fn svg_output() {
    let w5 = PlanarMap::wheel(5).unwrap();
    let e = tutte_embed(&w5, &cfg()).unwrap();
    let svg = render_svg(&e, &w5, &SvgOptions::default());
    assert_eq!(svg.matches(r#"class="vertex""#).count(), 6);
    let half = SvgOptions::default().size / 2.0;
    let scale = half * 0.95;
    let on_circle = e
        .boundary
        .iter()
        .map(|&v| e.positions[v])
        .filter(|p| ((p[0] * scale).hypot(p[1] * scale) - scale).abs() < 1e-6)
        .count();
    assert_eq!(on_circle, 5);

    let grid = PlanarMap::grid(3, 3).unwrap();
    let ge = tutte_embed(&grid, &cfg()).unwrap();
    let svg = render_svg(&ge, &grid, &SvgOptions::default());
    // Corners carry zero harmonic measure, so their edges to the boundary
    // neighbour collapse and are drawn as points.
    assert_eq!(ge.coincident_boundary, 4);
    let edges = svg.matches("<line ").count() + svg.matches(r#"class="edge""#).count();
    assert_eq!(edges, 12);
    assert_eq!(svg, render_svg(&ge, &grid, &SvgOptions::default()));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("grid.svg");
    export_svg(&ge, &grid, &path, &SvgOptions { fill_faces: true, ..SvgOptions::default() }).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.matches("<polygon").count(), 4);
}

#[test]
fn cell_map_submaps_are_triangulations() {
    for cm in [CellMap::binary(), CellMap::nested()] {
        let exh = cm.exhaustion();
        exh.check(&cm, 3).unwrap();
        let keys = exh.level_set(&cm, 3).unwrap();
        let m = submap(&cm, &keys).unwrap();
        let v = m.vertex_count() as i64;
        let e = m.edge_count() as i64;
        // A triangulated disk with a triangular outer face: E = 3V - 6.
        assert_eq!(e, 3 * v - 6);
        assert_eq!(boundary_trace(&m).unwrap(), vec![1, 2, 0]);
    }
}

#[test]
fn end_images_on_cell_maps() {
    let cm = CellMap::binary();
    let exh = cm.exhaustion();
    let (map, emb) = tutte_embed_infinite(&cm, 4, &cfg()).unwrap();
    assert!(emb.positions.iter().all(|p| p[0].hypot(p[1]) <= 1.0 + 1e-9));
    assert!(face_convexity(&emb, &map, 1e-5).passed);
    // Cell 31 is reached by always taking the first child.
    let deep: VertexKey = 3 * 31;
    let prefix = end_prefix(&cm, &exh, deep, 3, None).unwrap();
    let coarse = end_image(&cm, &map, &emb, &prefix, 1).unwrap();
    let fine = end_image(&cm, &map, &emb, &prefix, 3).unwrap();
    assert!(!coarse.polygons.is_empty() && !fine.polygons.is_empty());
    assert!(fine.polygons.len() < coarse.polygons.len());
    println!("binary end diameters: n=1 {} n=3 {}", coarse.diameter, fine.diameter);

    let nested = CellMap::nested();
    let (nmap, nemb) = tutte_embed_infinite(&nested, 4, &cfg()).unwrap();
    let prefix = end_prefix(&nested, &nested.exhaustion(), 3 * 6, 3, None).unwrap();
    for n in 1..=3 {
        let img = end_image(&nested, &nmap, &nemb, &prefix, n).unwrap();
        println!("one-ended diameter n={n}: {}", img.diameter);
    }

    let w = PlanarMap::wheel(6).unwrap();
    let e = tutte_embed(&w, &cfg()).unwrap();
    let img = end_image(&w, &w, &e, &prefix, 1).unwrap();
    assert!(img.polygons.is_empty());
}
