//! Planar maps as half-edge rotation systems, Tutte embeddings into the
//! closed unit disk, convexity checks and SVG export.
//!
//! Conventions: `next` turns counterclockwise around the origin vertex of a
//! half-edge. Faces are orbits of `h -> next(twin(h))`; the face of an orbit
//! lies to the right of each of its half-edges, so bounded faces are traced
//! clockwise and the external face counterclockwise.

use std::collections::{HashMap, HashSet};
use std::f64::consts::TAU;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{component_labels, EndPrefix, Exhaustion, GraphOracle, VertexKey, WeightedGraph};
use crate::harmonic::{
    check_probability_vector, harmonic_measure, harmonic_measure_rows, min_energy_extension_many,
    ExtensionConfig,
};
use crate::linalg::DirichletSolver;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HalfEdge {
    pub twin: usize,
    pub next: usize,
    pub origin: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Marks {
    /// Interior vertex from which harmonic measure is taken.
    pub x: usize,
    /// Boundary vertex sent to 1.
    pub y: usize,
}

#[derive(Serialize, Deserialize)]
struct PlanarFile {
    half_edges: Vec<HalfEdge>,
    external_face_half_edge: usize,
    marks: Marks,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    conductances: Option<Vec<f64>>,
}

/// Finite planar map given by a rotation system.
#[derive(Clone, Debug)]
pub struct PlanarMap {
    half_edges: Vec<HalfEdge>,
    conductance: Vec<f64>,
    vertex_count: usize,
    external: usize,
    marks: Marks,
    keys: Vec<VertexKey>,
    graph: WeightedGraph,
}

impl PlanarMap {
    /// Validates and builds a map. `conductance` is per half-edge and must
    /// agree on twins; `None` means unit conductances. `external` is any
    /// half-edge whose face (to its right) is the external face.
    pub fn new(
        half_edges: Vec<HalfEdge>,
        conductance: Option<Vec<f64>>,
        external: usize,
        marks: Marks,
    ) -> Result<Self> {
        let h = half_edges.len();
        if h == 0 || h % 2 != 0 {
            return Err(Error::Planar(format!("need a positive even number of half-edges, got {h}")));
        }
        let conductance = conductance.unwrap_or_else(|| vec![1.0; h]);
        if conductance.len() != h {
            return Err(Error::Planar("one conductance per half-edge required".into()));
        }
        let vertex_count = half_edges.iter().map(|e| e.origin).max().unwrap() + 1;
        for (i, e) in half_edges.iter().enumerate() {
            if e.twin >= h || e.next >= h {
                return Err(Error::Planar(format!("half-edge {i} points out of range")));
            }
            if e.twin == i || half_edges[e.twin].twin != i {
                return Err(Error::Planar(format!("twin is not a fixed-point-free involution at {i}")));
            }
            if half_edges[e.twin].origin == e.origin {
                return Err(Error::Planar(format!("half-edge {i} is a self-loop")));
            }
            if half_edges[e.next].origin != e.origin {
                return Err(Error::Planar(format!("next of half-edge {i} leaves its vertex")));
            }
            let c = conductance[i];
            if !(c > 0.0 && c.is_finite()) || c != conductance[e.twin] {
                return Err(Error::Planar(format!("bad conductance on half-edge {i}")));
            }
        }
        let mut out_count = vec![0usize; vertex_count];
        let mut first_out = vec![usize::MAX; vertex_count];
        for (i, e) in half_edges.iter().enumerate() {
            out_count[e.origin] += 1;
            if first_out[e.origin] == usize::MAX {
                first_out[e.origin] = i;
            }
        }
        for v in 0..vertex_count {
            if out_count[v] == 0 {
                return Err(Error::Planar(format!("vertex {v} is isolated")));
            }
            let mut len = 1;
            let mut e = half_edges[first_out[v]].next;
            while e != first_out[v] {
                len += 1;
                e = half_edges[e].next;
                if len > out_count[v] {
                    break;
                }
            }
            if len != out_count[v] {
                return Err(Error::Planar(format!("rotation at vertex {v} is not a single cycle")));
            }
        }
        if external >= h {
            return Err(Error::Planar("external half-edge out of range".into()));
        }
        if marks.x >= vertex_count || marks.y >= vertex_count || marks.x == marks.y {
            return Err(Error::Planar("marked vertices invalid".into()));
        }
        let edges: Vec<(usize, usize, f64)> = half_edges
            .iter()
            .enumerate()
            .filter(|&(i, e)| i < e.twin)
            .map(|(i, e)| (e.origin, half_edges[e.twin].origin, conductance[i]))
            .collect();
        let graph = WeightedGraph::from_edges(vertex_count, &edges)
            .map_err(|e| Error::Planar(format!("underlying graph: {e}")))?;
        let map = Self {
            half_edges,
            conductance,
            vertex_count,
            external,
            marks,
            keys: (0..vertex_count as VertexKey).collect(),
            graph,
        };
        let faces = map.faces().len();
        let euler = vertex_count as i64 - (h / 2) as i64 + faces as i64;
        if euler != 2 {
            return Err(Error::Planar(format!(
                "rotation system is not planar: V - E + F = {euler}"
            )));
        }
        Ok(map)
    }

    /// Builds a map from counterclockwise neighbour lists. `external` is a
    /// directed edge (u, v) with the external face on its right.
    pub fn from_rotation(
        rotation: &[Vec<(usize, f64)>],
        external: (usize, usize),
        marks: Marks,
    ) -> Result<Self> {
        let mut id: HashMap<(usize, usize), usize> = HashMap::new();
        let mut half_edges = Vec::new();
        let mut cond = Vec::new();
        for (u, rot) in rotation.iter().enumerate() {
            for &(v, c) in rot {
                if id.insert((u, v), half_edges.len()).is_some() {
                    return Err(Error::Planar(format!("repeated edge ({u}, {v})")));
                }
                half_edges.push(HalfEdge {
                    twin: usize::MAX,
                    next: usize::MAX,
                    origin: u,
                });
                cond.push(c);
            }
        }
        for (u, rot) in rotation.iter().enumerate() {
            for (i, &(v, _)) in rot.iter().enumerate() {
                let h = id[&(u, v)];
                let (w, _) = rot[(i + 1) % rot.len()];
                half_edges[h].next = id[&(u, w)];
                half_edges[h].twin = *id
                    .get(&(v, u))
                    .ok_or_else(|| Error::Planar(format!("edge ({u}, {v}) has no reverse")))?;
            }
        }
        let ext = *id
            .get(&external)
            .ok_or_else(|| Error::Planar("external edge not in map".into()))?;
        Self::new(half_edges, Some(cond), ext, marks)
    }

    /// Builds a map from a straight-line drawing: rotations come from sorting
    /// neighbours by angle and the external face is the one traced
    /// counterclockwise.
    pub fn from_straight_line(
        points: &[[f64; 2]],
        edges: &[(usize, usize, f64)],
        marks: Marks,
    ) -> Result<Self> {
        let n = points.len();
        let mut rotation: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for &(u, v, c) in edges {
            rotation[u].push((v, c));
            rotation[v].push((u, c));
        }
        for (u, rot) in rotation.iter_mut().enumerate() {
            let p = points[u];
            rot.sort_by(|a, b| {
                let ta = (points[a.0][1] - p[1]).atan2(points[a.0][0] - p[0]);
                let tb = (points[b.0][1] - p[1]).atan2(points[b.0][0] - p[0]);
                ta.total_cmp(&tb)
            });
        }
        let u = rotation
            .iter()
            .position(|r| !r.is_empty())
            .ok_or_else(|| Error::Planar("map has no edges".into()))?;
        let provisional = Self::from_rotation(&rotation, (u, rotation[u][0].0), marks)?;
        let area = |face: &[usize]| -> f64 {
            let pts: Vec<[f64; 2]> = face
                .iter()
                .map(|&h| points[provisional.half_edges[h].origin])
                .collect();
            signed_area(&pts)
        };
        let faces = provisional.faces();
        let ext_face = faces
            .iter()
            .max_by(|a, b| area(a).total_cmp(&area(b)))
            .expect("at least one face");
        let h = ext_face[0];
        let e = provisional.half_edges[h];
        let ext = (e.origin, provisional.half_edges[e.twin].origin);
        Self::from_rotation(&rotation, ext, marks)
    }

    /// Attaches the original vertex keys (for submaps of infinite maps).
    pub fn with_keys(mut self, keys: Vec<VertexKey>) -> Result<Self> {
        if keys.len() != self.vertex_count {
            return Err(Error::Planar("one key per vertex required".into()));
        }
        self.keys = keys;
        Ok(self)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let f: PlanarFile = serde_json::from_str(s)?;
        Self::new(f.half_edges, f.conductances, f.external_face_half_edge, f.marks)
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_json_string(&self) -> String {
        let unit = self.conductance.iter().all(|&c| c == 1.0);
        let f = PlanarFile {
            half_edges: self.half_edges.clone(),
            external_face_half_edge: self.external,
            marks: self.marks,
            conductances: (!unit).then(|| self.conductance.clone()),
        };
        serde_json::to_string(&f).expect("planar map serialization")
    }

    /// Wheel: an m-cycle 0..m-1 placed counterclockwise plus a hub `m`
    /// joined to every cycle vertex. Marks: x = hub, y = 0.
    pub fn wheel(m: usize) -> Result<Self> {
        if m < 3 {
            return Err(Error::InvalidParameter(format!("wheel needs m >= 3, got {m}")));
        }
        let mut pts: Vec<[f64; 2]> = (0..m)
            .map(|k| {
                let t = TAU * k as f64 / m as f64;
                [t.cos(), t.sin()]
            })
            .collect();
        pts.push([0.0, 0.0]);
        let mut edges: Vec<_> = (0..m).map(|k| (k, (k + 1) % m, 1.0)).collect();
        edges.extend((0..m).map(|k| (k, m, 1.0)));
        Self::from_straight_line(&pts, &edges, Marks { x: m, y: 0 })
    }

    /// rows x cols grid with unit conductances; vertex r*cols + c sits at
    /// (c, r). Marks: x = the most central vertex, y = 0.
    pub fn grid(rows: usize, cols: usize) -> Result<Self> {
        if rows < 3 || cols < 3 {
            return Err(Error::InvalidParameter("grid needs at least 3 x 3".into()));
        }
        let pts: Vec<[f64; 2]> = (0..rows * cols)
            .map(|i| [(i % cols) as f64, (i / cols) as f64])
            .collect();
        let mut edges = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                let v = r * cols + c;
                if c + 1 < cols {
                    edges.push((v, v + 1, 1.0));
                }
                if r + 1 < rows {
                    edges.push((v, v + cols, 1.0));
                }
            }
        }
        let x = (rows / 2) * cols + cols / 2;
        Self::from_straight_line(&pts, &edges, Marks { x, y: 0 })
    }

    pub fn vertex_count(&self) -> usize {
        self.vertex_count
    }

    pub fn edge_count(&self) -> usize {
        self.half_edges.len() / 2
    }

    pub fn half_edges(&self) -> &[HalfEdge] {
        &self.half_edges
    }

    pub fn marks(&self) -> Marks {
        self.marks
    }

    pub fn keys(&self) -> &[VertexKey] {
        &self.keys
    }

    pub fn graph(&self) -> &WeightedGraph {
        &self.graph
    }

    pub fn external_half_edge(&self) -> usize {
        self.external
    }

    /// Head vertex of a half-edge.
    pub fn target(&self, h: usize) -> usize {
        self.half_edges[self.half_edges[h].twin].origin
    }

    fn face_orbit(&self, start: usize) -> Vec<usize> {
        let mut orbit = vec![start];
        let mut h = self.half_edges[self.half_edges[start].twin].next;
        while h != start {
            orbit.push(h);
            h = self.half_edges[self.half_edges[h].twin].next;
        }
        orbit
    }

    /// All faces as half-edge orbits, in order of their smallest half-edge.
    pub fn faces(&self) -> Vec<Vec<usize>> {
        let mut seen = vec![false; self.half_edges.len()];
        let mut faces = Vec::new();
        for h in 0..self.half_edges.len() {
            if seen[h] {
                continue;
            }
            let orbit = self.face_orbit(h);
            for &e in &orbit {
                seen[e] = true;
            }
            faces.push(orbit);
        }
        faces
    }

    /// The external face orbit, starting at the external half-edge.
    pub fn external_face(&self) -> Vec<usize> {
        self.face_orbit(self.external)
    }

    /// Faces other than the external one, as vertex cycles.
    pub fn inner_faces(&self) -> Vec<Vec<usize>> {
        let ext: HashSet<usize> = self.external_face().into_iter().collect();
        self.faces()
            .into_iter()
            .filter(|f| !ext.contains(&f[0]))
            .map(|f| f.into_iter().map(|h| self.half_edges[h].origin).collect())
            .collect()
    }
}

fn signed_area(pts: &[[f64; 2]]) -> f64 {
    let n = pts.len();
    (0..n)
        .map(|i| {
            let (a, b) = (pts[i], pts[(i + 1) % n]);
            a[0] * b[1] - a[1] * b[0]
        })
        .sum::<f64>()
        / 2.0
}

/// Distinct boundary vertices y_1, ..., y_m = y, read counterclockwise along
/// the external face starting after y and ordered by their last visit.
pub fn boundary_trace(map: &PlanarMap) -> Result<Vec<usize>> {
    let orbit = map.external_face();
    let origins: Vec<usize> = orbit.iter().map(|&h| map.half_edges[h].origin).collect();
    let y = map.marks.y;
    let start = origins
        .iter()
        .position(|&v| v == y)
        .ok_or_else(|| Error::Planar(format!("marked vertex {y} is not on the external face")))?;
    let mut walk: Vec<usize> = origins[start + 1..].to_vec();
    walk.extend_from_slice(&origins[..start]);
    walk.push(y);
    let mut last: HashMap<usize, usize> = HashMap::new();
    for (i, &v) in walk.iter().enumerate() {
        last.insert(v, i);
    }
    let mut order: Vec<(usize, usize)> = last.into_iter().map(|(v, i)| (i, v)).collect();
    order.sort_unstable();
    Ok(order.into_iter().map(|(_, v)| v).collect())
}

/// Positions of every vertex of a map (or a window of an infinite map) in
/// the closed unit disk.
#[derive(Clone, Debug, Serialize)]
pub struct Embedding {
    pub positions: Vec<[f64; 2]>,
    /// Boundary vertices y_1..y_m in trace order.
    pub boundary: Vec<usize>,
    /// Harmonic measure of each boundary vertex seen from the marked
    /// interior vertex.
    pub harmonic_measure: Vec<f64>,
    /// Cumulative angles 2π(hm(y_1) + ... + hm(y_k)).
    pub boundary_angles: Vec<f64>,
    /// Boundary vertices whose image coincides with the previous one.
    pub coincident_boundary: usize,
    pub achieved_tolerance: f64,
    pub levels_used: (usize, usize),
}

impl Embedding {
    /// Recovers the harmonic measure from the boundary positions by angle
    /// differences.
    pub fn harmonic_measure_from_angles(&self) -> Vec<f64> {
        let mut prev = 0.0;
        self.boundary
            .iter()
            .map(|&v| {
                let p = self.positions[v];
                let mut a = p[1].atan2(p[0]);
                while a < prev - 1e-9 {
                    a += TAU;
                }
                let d = (a - prev) / TAU;
                prev = a;
                d
            })
            .collect()
    }

    /// Vertex polygons of the inner faces.
    pub fn face_polygons(&self, map: &PlanarMap) -> Vec<Vec<[f64; 2]>> {
        map.inner_faces()
            .into_iter()
            .map(|f| f.into_iter().map(|v| self.positions[v]).collect())
            .collect()
    }
}

fn boundary_positions(hm: &[f64]) -> (Vec<f64>, Vec<[f64; 2]>, usize) {
    let mut acc = 0.0;
    let m = hm.len();
    let mut angles = Vec::with_capacity(m);
    let mut pos = Vec::with_capacity(m);
    let mut coincident = 0;
    for (k, &p) in hm.iter().enumerate() {
        acc += p;
        let theta = if k + 1 == m { TAU } else { TAU * acc };
        angles.push(theta);
        if p <= 1e-15 {
            coincident += 1;
        }
        if k + 1 == m {
            pos.push([1.0, 0.0]);
        } else {
            pos.push([theta.cos(), theta.sin()]);
        }
    }
    (angles, pos, coincident)
}

/// Tutte embedding of a finite map: boundary vertices on the unit circle at
/// cumulative harmonic measure seen from the marked interior vertex, other
/// vertices at the harmonic extension of both coordinates.
pub fn tutte_embed(map: &PlanarMap, cfg: &ExtensionConfig) -> Result<Embedding> {
    let boundary = boundary_trace(map)?;
    if boundary.len() < 3 {
        return Err(Error::Planar(format!(
            "degenerate boundary with {} vertices",
            boundary.len()
        )));
    }
    let x = map.marks.x;
    if boundary.contains(&x) {
        return Err(Error::Planar(format!("marked vertex {x} lies on the boundary")));
    }
    let g = map.graph();
    let hm = harmonic_measure_rows(g, &boundary, &[x], &cfg.solver)?.pop().unwrap();
    check_probability_vector(&hm, "boundary harmonic measure")?;
    let (angles, bpos, coincident) = boundary_positions(&hm);
    let solver = DirichletSolver::new(g, &boundary, &cfg.solver)?;
    let re = solver.extend(&bpos.iter().map(|p| p[0]).collect::<Vec<_>>())?;
    let im = solver.extend(&bpos.iter().map(|p| p[1]).collect::<Vec<_>>())?;
    let mut positions: Vec<[f64; 2]> = re.iter().zip(&im).map(|(&a, &b)| [a, b]).collect();
    for (&v, &p) in boundary.iter().zip(&bpos) {
        positions[v] = p;
    }
    Ok(Embedding {
        positions,
        boundary,
        harmonic_measure: hm,
        boundary_angles: angles,
        coincident_boundary: coincident,
        achieved_tolerance: 0.0,
        levels_used: (0, 0),
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct ConvexityReport {
    /// Largest convexity violation per inner face.
    pub defects: Vec<f64>,
    pub max_defect: f64,
    pub passed: bool,
}

/// Convexity of inner face images. Inner faces are traced clockwise, so at
/// every corner the cross product of the incoming and outgoing edge should
/// be non-positive; the defect of a corner is its positive part.
/// Zero-length edges (coincident images) are skipped.
pub fn face_convexity(emb: &Embedding, map: &PlanarMap, tol: f64) -> ConvexityReport {
    let defects: Vec<f64> = emb
        .face_polygons(map)
        .into_iter()
        .map(|poly| polygon_defect(&poly))
        .collect();
    let max_defect = defects.iter().copied().fold(0.0, f64::max);
    ConvexityReport {
        passed: max_defect <= tol,
        defects,
        max_defect,
    }
}

fn polygon_defect(poly: &[[f64; 2]]) -> f64 {
    let mut pts: Vec<[f64; 2]> = Vec::with_capacity(poly.len());
    for &p in poly {
        if pts
            .last()
            .is_none_or(|q: &[f64; 2]| (p[0] - q[0]).hypot(p[1] - q[1]) > 1e-14)
        {
            pts.push(p);
        }
    }
    while pts.len() > 1 {
        let (a, b) = (pts[0], pts[pts.len() - 1]);
        if (a[0] - b[0]).hypot(a[1] - b[1]) > 1e-14 {
            break;
        }
        pts.pop();
    }
    let n = pts.len();
    if n < 3 {
        return 0.0;
    }
    (0..n)
        .map(|i| {
            let (a, b, c) = (pts[(i + n - 1) % n], pts[i], pts[(i + 1) % n]);
            let cross = (b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0]);
            cross.max(0.0)
        })
        .fold(0.0, f64::max)
}

/// Infinite planar map explored locally.
pub trait PlanarOracle: GraphOracle {
    /// Neighbours of `v` in counterclockwise order.
    fn rotation(&self, v: VertexKey) -> Vec<VertexKey>;
    /// A directed edge of V_1 with the external face on its right.
    fn external_edge(&self) -> (VertexKey, VertexKey);
    /// (interior mark, boundary mark).
    fn marks(&self) -> (VertexKey, VertexKey);
    fn exhaustion(&self) -> Exhaustion;
}

/// The finite submap induced on a set of vertices.
pub fn submap(oracle: &dyn PlanarOracle, keys: &[VertexKey]) -> Result<PlanarMap> {
    let index: HashMap<VertexKey, usize> = keys.iter().enumerate().map(|(i, &k)| (k, i)).collect();
    let weights: Vec<HashMap<VertexKey, f64>> = keys
        .iter()
        .map(|&k| oracle.neighbors(k).into_iter().collect())
        .collect();
    let rotation: Vec<Vec<(usize, f64)>> = keys
        .iter()
        .enumerate()
        .map(|(i, &k)| {
            oracle
                .rotation(k)
                .into_iter()
                .filter_map(|w| index.get(&w).map(|&j| (j, weights[i][&w])))
                .collect()
        })
        .collect();
    let (xk, yk) = oracle.marks();
    let (eu, ev) = oracle.external_edge();
    let local = |k: VertexKey| index.get(&k).copied().ok_or(Error::UnknownVertex(k));
    let marks = Marks {
        x: local(xk)?,
        y: local(yk)?,
    };
    PlanarMap::from_rotation(&rotation, (local(eu)?, local(ev)?), marks)?.with_keys(keys.to_vec())
}

/// Tutte embedding of an infinite map restricted to the window V_n. The
/// boundary harmonic measure and the interior extension are both computed
/// with level escalation. Returns the window submap and its embedding.
pub fn tutte_embed_infinite(
    oracle: &dyn PlanarOracle,
    n: usize,
    cfg: &ExtensionConfig,
) -> Result<(PlanarMap, Embedding)> {
    let exh = oracle.exhaustion();
    let keys = exh.level_set(oracle, n)?;
    let map = submap(oracle, &keys)?;
    let boundary = boundary_trace(&map)?;
    if boundary.len() < 3 {
        return Err(Error::Planar("degenerate boundary".into()));
    }
    let bkeys: Vec<VertexKey> = boundary.iter().map(|&v| keys[v]).collect();
    let (xk, _) = oracle.marks();
    let hm = harmonic_measure(oracle, &exh, &bkeys, xk, cfg)?;
    let (angles, bpos, coincident) = boundary_positions(&hm.probabilities);
    let data = vec![
        bpos.iter().map(|p| p[0]).collect::<Vec<_>>(),
        bpos.iter().map(|p| p[1]).collect::<Vec<_>>(),
    ];
    let ext = min_energy_extension_many(oracle, &exh, &bkeys, &data, &keys, cfg)?;
    let mut positions: Vec<[f64; 2]> = (0..keys.len())
        .map(|i| [ext.values[0][i], ext.values[1][i]])
        .collect();
    for (&v, &p) in boundary.iter().zip(&bpos) {
        positions[v] = p;
    }
    let emb = Embedding {
        positions,
        boundary,
        harmonic_measure: hm.probabilities,
        boundary_angles: angles,
        coincident_boundary: coincident,
        achieved_tolerance: hm.achieved_tolerance.max(ext.achieved_tolerance),
        levels_used: ext.levels_used,
    };
    Ok((map, emb))
}

#[derive(Clone, Debug, Serialize)]
pub struct EndImage {
    /// Images of the inner faces of the window lying entirely in the
    /// end's level-n complement component.
    pub polygons: Vec<Vec<[f64; 2]>>,
    pub diameter: f64,
}

/// Union of face images inside the level-n complement component selected by
/// `prefix`, using an embedding of the window V_N (N > n) computed by
/// [`tutte_embed_infinite`]. Finite maps have no ends, so the region is
/// empty.
pub fn end_image(
    oracle: &dyn PlanarOracle,
    map: &PlanarMap,
    emb: &Embedding,
    prefix: &EndPrefix,
    n: usize,
) -> Result<EndImage> {
    if oracle.finite_size().is_some() {
        return Ok(EndImage {
            polygons: Vec::new(),
            diameter: 0.0,
        });
    }
    let comp = prefix
        .at(n)
        .ok_or_else(|| Error::InvalidParameter(format!("end prefix shorter than level {n}")))?;
    let exh = oracle.exhaustion();
    let window_level = exh.level_containing(oracle, map.keys(), 1, 64)?;
    if window_level <= n {
        return Err(Error::InvalidParameter(format!(
            "window level {window_level} must exceed {n}"
        )));
    }
    let labels = component_labels(oracle, &exh, n, window_level)?;
    if !labels.values().any(|&c| c == comp) {
        return Err(Error::InvalidParameter(format!(
            "no complement component {comp} at level {n}"
        )));
    }
    let inside = |v: usize| labels.get(&map.keys()[v]) == Some(&comp);
    let polygons: Vec<Vec<[f64; 2]>> = map
        .inner_faces()
        .into_iter()
        .filter(|f| f.iter().all(|&v| inside(v)))
        .map(|f| f.into_iter().map(|v| emb.positions[v]).collect())
        .collect();
    let pts: Vec<[f64; 2]> = polygons.iter().flatten().copied().collect();
    let mut diameter = 0.0f64;
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            diameter = diameter.max((pts[i][0] - pts[j][0]).hypot(pts[i][1] - pts[j][1]));
        }
    }
    Ok(EndImage { polygons, diameter })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SvgOptions {
    pub size: f64,
    pub stroke_width: f64,
    pub vertex_radius: f64,
    pub fill_faces: bool,
}

impl Default for SvgOptions {
    fn default() -> Self {
        Self {
            size: 512.0,
            stroke_width: 1.0,
            vertex_radius: 2.5,
            fill_faces: false,
        }
    }
}

/// Deterministic SVG drawing: unit circle, faces (optional), edges as
/// segments (coincident endpoints as points), vertices as dots.
pub fn render_svg(emb: &Embedding, map: &PlanarMap, opts: &SvgOptions) -> String {
    let half = opts.size / 2.0;
    let scale = half * 0.95;
    let tx = |p: [f64; 2]| (half + scale * p[0], half - scale * p[1]);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{0:.0}" height="{0:.0}" viewBox="0 0 {0:.0} {0:.0}">"#,
        opts.size
    );
    let _ = writeln!(
        s,
        r##"<circle cx="{half:.6}" cy="{half:.6}" r="{scale:.6}" fill="none" stroke="#999" stroke-width="{:.6}"/>"##,
        opts.stroke_width
    );
    if opts.fill_faces {
        for poly in emb.face_polygons(map) {
            let pts: Vec<String> = poly
                .iter()
                .map(|&p| {
                    let (x, y) = tx(p);
                    format!("{x:.6},{y:.6}")
                })
                .collect();
            let _ = writeln!(
                s,
                r##"<polygon points="{}" fill="#dde6f0" stroke="none"/>"##,
                pts.join(" ")
            );
        }
    }
    for (h, e) in map.half_edges.iter().enumerate() {
        if h > e.twin {
            continue;
        }
        let (a, b) = (emb.positions[e.origin], emb.positions[map.target(h)]);
        let (x1, y1) = tx(a);
        let (x2, y2) = tx(b);
        if (a[0] - b[0]).hypot(a[1] - b[1]) <= 1e-12 {
            let _ = writeln!(
                s,
                r#"<circle class="edge" cx="{x1:.6}" cy="{y1:.6}" r="{:.6}" fill="black"/>"#,
                opts.stroke_width
            );
        } else {
            let _ = writeln!(
                s,
                r#"<line x1="{x1:.6}" y1="{y1:.6}" x2="{x2:.6}" y2="{y2:.6}" stroke="black" stroke-width="{:.6}"/>"#,
                opts.stroke_width
            );
        }
    }
    for &p in &emb.positions {
        let (x, y) = tx(p);
        let _ = writeln!(
            s,
            r#"<circle class="vertex" cx="{x:.6}" cy="{y:.6}" r="{:.6}" fill="black"/>"#,
            opts.vertex_radius
        );
    }
    s.push_str("</svg>\n");
    s
}

pub fn export_svg(
    emb: &Embedding,
    map: &PlanarMap,
    path: impl AsRef<Path>,
    opts: &SvgOptions,
) -> Result<()> {
    std::fs::write(path, render_svg(emb, map, opts))?;
    Ok(())
}

impl GraphOracle for PlanarMap {
    fn root(&self) -> VertexKey {
        self.marks.y as VertexKey
    }

    fn neighbors(&self, v: VertexKey) -> Vec<(VertexKey, f64)> {
        self.graph
            .neighbors(v as usize)
            .map(|(u, c)| (u as VertexKey, c))
            .collect()
    }

    fn finite_size(&self) -> Option<usize> {
        Some(self.vertex_count)
    }
}

impl PlanarOracle for PlanarMap {
    fn rotation(&self, v: VertexKey) -> Vec<VertexKey> {
        let v = v as usize;
        let Some(first) = self.half_edges.iter().position(|e| e.origin == v) else {
            return Vec::new();
        };
        let mut out = vec![self.target(first) as VertexKey];
        let mut h = self.half_edges[first].next;
        while h != first {
            out.push(self.target(h) as VertexKey);
            h = self.half_edges[h].next;
        }
        out
    }

    fn external_edge(&self) -> (VertexKey, VertexKey) {
        let e = self.half_edges[self.external];
        (e.origin as VertexKey, self.target(self.external) as VertexKey)
    }

    fn marks(&self) -> (VertexKey, VertexKey) {
        (self.marks.x as VertexKey, self.marks.y as VertexKey)
    }

    fn exhaustion(&self) -> Exhaustion {
        Exhaustion::Ball
    }
}

/// Slot-indexed template vertex: slot 0 is the parent triangle, slot s + 1
/// the s-th child triangle.
type Slot = (usize, usize);

/// Self-similar infinite triangulated map. The external face is the outside
/// of a root triangle; inside every triangle sit scaled copies (the child
/// cells), and the region between a triangle and its children is
/// triangulated by one fixed template. Cells are numbered in heap order, and
/// vertex `3*c + j` is corner `j` of cell `c`. With two children per cell the
/// map has a Cantor set of ends; with one child it is one-ended.
#[derive(Clone, Debug)]
pub struct CellMap {
    children: usize,
    scale: f64,
    offsets: Vec<[f64; 2]>,
    template: Arc<Vec<(Slot, Slot)>>,
}

fn corner(j: usize) -> [f64; 2] {
    let t = std::f64::consts::FRAC_PI_2 + TAU * j as f64 / 3.0;
    [t.cos(), t.sin()]
}

fn orient(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

fn segments_cross(p: [f64; 2], q: [f64; 2], r: [f64; 2], s: [f64; 2]) -> bool {
    let same = |a: [f64; 2], b: [f64; 2]| a == b;
    if same(p, r) || same(p, s) || same(q, r) || same(q, s) {
        return false;
    }
    let (d1, d2) = (orient(p, q, r), orient(p, q, s));
    let (d3, d4) = (orient(r, s, p), orient(r, s, q));
    (d1 * d2 <= 0.0) && (d3 * d4 <= 0.0)
}

impl CellMap {
    /// Two children per cell, scale 0.3.
    pub fn binary() -> Self {
        Self::with_children(0.3, vec![
            [0.45 * corner(1)[0], 0.45 * corner(1)[1]],
            [0.45 * corner(2)[0], 0.45 * corner(2)[1]],
        ])
    }

    /// One centred child per cell, scale 0.5.
    pub fn nested() -> Self {
        Self::with_children(0.5, vec![[0.0, 0.0]])
    }

    fn with_children(scale: f64, offsets: Vec<[f64; 2]>) -> Self {
        let k = offsets.len();
        let pt = |(slot, j): Slot| -> [f64; 2] {
            let c = corner(j);
            if slot == 0 {
                c
            } else {
                let o = offsets[slot - 1];
                [o[0] + scale * c[0], o[1] + scale * c[1]]
            }
        };
        let slots: Vec<Slot> = (0..=k).flat_map(|s| (0..3).map(move |j| (s, j))).collect();
        let mut fixed: Vec<(Slot, Slot)> = Vec::new();
        for s in 0..=k {
            for j in 0..3 {
                fixed.push(((s, j), (s, (j + 1) % 3)));
            }
        }
        let inside_child = |p: [f64; 2]| {
            (1..=k).any(|s| {
                (0..3).all(|j| orient(pt((s, j)), pt((s, (j + 1) % 3)), p) > 0.0)
            })
        };
        let mut candidates: Vec<(f64, Slot, Slot)> = Vec::new();
        for (i, &a) in slots.iter().enumerate() {
            for &b in &slots[i + 1..] {
                if a.0 == b.0 {
                    continue;
                }
                let (pa, pb) = (pt(a), pt(b));
                let mid = [(pa[0] + pb[0]) / 2.0, (pa[1] + pb[1]) / 2.0];
                if inside_child(mid) {
                    continue;
                }
                candidates.push(((pa[0] - pb[0]).hypot(pa[1] - pb[1]), a, b));
            }
        }
        candidates.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
        let mut edges = fixed;
        for (_, a, b) in candidates {
            let crosses = edges
                .iter()
                .any(|&(c, d)| segments_cross(pt(a), pt(b), pt(c), pt(d)));
            if !crosses {
                edges.push((a, b));
            }
        }
        Self {
            children: k,
            scale,
            offsets,
            template: Arc::new(edges),
        }
    }

    pub fn children_per_cell(&self) -> usize {
        self.children
    }

    fn cell_parent(&self, c: u64) -> Option<(u64, usize)> {
        let k = self.children as u64;
        (c > 0).then(|| ((c - 1) / k, ((c - 1) % k) as usize))
    }

    fn cell_child(&self, c: u64, s: usize) -> u64 {
        c * self.children as u64 + 1 + s as u64
    }

    pub fn cell_depth(&self, mut c: u64) -> usize {
        let mut d = 0;
        while let Some((p, _)) = self.cell_parent(c) {
            c = p;
            d += 1;
        }
        d
    }

    /// (centre, radius) of a cell's triangle.
    fn cell_frame(&self, c: u64) -> ([f64; 2], f64) {
        let mut path = Vec::new();
        let mut x = c;
        while let Some((p, s)) = self.cell_parent(x) {
            path.push(s);
            x = p;
        }
        let (mut centre, mut r) = ([0.0, 0.0], 1.0);
        for &s in path.iter().rev() {
            let o = self.offsets[s];
            centre = [centre[0] + r * o[0], centre[1] + r * o[1]];
            r *= self.scale;
        }
        (centre, r)
    }

    pub fn position(&self, v: VertexKey) -> [f64; 2] {
        let (centre, r) = self.cell_frame(v / 3);
        let c = corner((v % 3) as usize);
        [centre[0] + r * c[0], centre[1] + r * c[1]]
    }

    fn slot_key(&self, cell: u64, slot: Slot) -> VertexKey {
        let c = if slot.0 == 0 {
            cell
        } else {
            self.cell_child(cell, slot.0 - 1)
        };
        3 * c + slot.1 as u64
    }

    fn neighbor_keys(&self, v: VertexKey) -> Vec<VertexKey> {
        let cell = v / 3;
        let j = (v % 3) as usize;
        let mut out: Vec<VertexKey> = Vec::new();
        let mut push = |k: VertexKey| {
            if !out.contains(&k) {
                out.push(k);
            }
        };
        let mut visit = |host: u64, me: Slot| {
            for &(a, b) in self.template.iter() {
                if a == me {
                    push(self.slot_key(host, b));
                } else if b == me {
                    push(self.slot_key(host, a));
                }
            }
        };
        visit(cell, (0, j));
        if let Some((p, s)) = self.cell_parent(cell) {
            visit(p, (s + 1, j));
        }
        out
    }

    /// Vertices of all cells of depth at most n - 1.
    pub fn level_keys(&self, n: usize) -> Vec<VertexKey> {
        let k = self.children as u64;
        // Cells of depth < n form a heap prefix.
        let mut cells: u64 = 0;
        let mut width: u64 = 1;
        for _ in 0..n {
            cells += width;
            width *= k;
        }
        (0..3 * cells).collect()
    }
}

impl GraphOracle for CellMap {
    fn root(&self) -> VertexKey {
        0
    }

    fn neighbors(&self, v: VertexKey) -> Vec<(VertexKey, f64)> {
        self.neighbor_keys(v).into_iter().map(|w| (w, 1.0)).collect()
    }
}

impl PlanarOracle for CellMap {
    fn rotation(&self, v: VertexKey) -> Vec<VertexKey> {
        let p = self.position(v);
        let mut nb: Vec<(f64, VertexKey)> = self
            .neighbor_keys(v)
            .into_iter()
            .map(|w| {
                let q = self.position(w);
                ((q[1] - p[1]).atan2(q[0] - p[0]), w)
            })
            .collect();
        nb.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        nb.into_iter().map(|(_, w)| w).collect()
    }

    fn external_edge(&self) -> (VertexKey, VertexKey) {
        (0, 1)
    }

    fn marks(&self) -> (VertexKey, VertexKey) {
        (3, 0)
    }

    fn exhaustion(&self) -> Exhaustion {
        let me = self.clone();
        Exhaustion::custom(move |n| me.level_keys(n + 1))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_trace_is_cyclic() {
        let pts = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0], [0.5, 0.5]];
        let mut edges: Vec<_> = (0..4).map(|k| (k, (k + 1) % 4, 1.0)).collect();
        edges.extend((0..4).map(|k| (k, 4, 1.0)));
        let m = PlanarMap::from_straight_line(&pts, &edges, Marks { x: 4, y: 0 }).unwrap();
        assert_eq!(boundary_trace(&m).unwrap(), vec![1, 2, 3, 0]);
        let e = tutte_embed(&m, &ExtensionConfig::default()).unwrap();
        assert!(e.positions[4][0].abs() < 1e-12 && e.positions[4][1].abs() < 1e-12);
    }

    #[test]
    fn pendant_base_kept_at_last_visit() {
        // Triangle 0-1-2 with a pendant vertex 3 hanging off 1, drawn outside.
        let pts = [[0.0, 0.0], [1.0, 0.0], [0.5, 1.0], [2.0, -0.5]];
        let edges = [(0, 1, 1.0), (1, 2, 1.0), (2, 0, 1.0), (1, 3, 1.0)];
        let m = PlanarMap::from_straight_line(&pts, &edges, Marks { x: 2, y: 0 }).unwrap();
        let orbit: Vec<usize> = m
            .external_face()
            .iter()
            .map(|&h| m.half_edges()[h].origin)
            .collect();
        assert_eq!(orbit.iter().filter(|&&v| v == 1).count(), 2);
        assert_eq!(boundary_trace(&m).unwrap(), vec![3, 1, 2, 0]);
    }

    #[test]
    fn cell_maps_are_planar_triangulations() {
        for cm in [CellMap::binary(), CellMap::nested()] {
            let keys = cm.level_keys(3);
            let m = submap(&cm, &keys).unwrap();
            for f in m.inner_faces() {
                assert_eq!(f.len(), 3);
            }
        }
    }
}
