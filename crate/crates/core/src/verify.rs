//! Acceptance suites. Each check returns a pass flag with the statistics it
//! was judged on; reports are deterministic given the seed.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::f64::consts::TAU;

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::forest::{aldous_broder_window, enumerate_ust, matrix_tree_edge_prob, wilson_sample};
use crate::graph::{ball, Exhaustion, FiniteOracle, GraphOracle, Lattice, Tree, VertexKey, WeightedGraph};
use crate::green::{gff_sample, green, green_via_hitting, kirkhoff_edge_prob, validate_green};
use crate::harmonic::{harmonic_measure, ExtensionConfig};
use crate::linalg::SolverConfig;
use crate::par;
use crate::planar::{face_convexity, tutte_embed, PlanarMap};
use crate::rng::replica_rng;
use crate::stats::{chi_square_gof, chi_square_two_sample};
use crate::walk::{build_kernel, consistency_check, simulate, KernelConfig, RateSchedule, StopRule};

/// Significance level for the sampler checks.
pub const ALPHA: f64 = 0.01;
/// Chain moves allowed per replica before a run counts as timed out.
pub const MAX_STEPS: usize = 50_000_000;
/// Replica stream offset separating Wilson runs from Aldous–Broder runs.
const WILSON_STREAM: u64 = 1 << 40;

#[derive(Clone, Debug, Serialize)]
pub struct CheckOutcome {
    pub id: u32,
    pub name: String,
    pub passed: bool,
    pub stats: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl CheckOutcome {
    fn new(id: u32, name: &str) -> Self {
        Self {
            id,
            name: name.into(),
            passed: true,
            stats: BTreeMap::new(),
            note: None,
        }
    }

    fn stat(&mut self, key: impl Into<String>, v: f64) {
        self.stats.insert(key.into(), v);
    }

    fn require(&mut self, ok: bool) {
        self.passed &= ok;
    }

    /// One-line summary used by the acceptance test and the CLI.
    pub fn summary(&self) -> String {
        let stats: Vec<String> = self.stats.iter().map(|(k, v)| format!("{k}={v:.6e}")).collect();
        format!(
            "[{}] {} {}: {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            stats.join(" ")
        )
    }
}

#[derive(Clone, Debug, Default)]
pub struct VerifyOptions {
    pub seed: u64,
    /// Overrides every Monte Carlo replica count when set.
    pub replicas: Option<u64>,
}

impl VerifyOptions {
    pub fn new(seed: u64) -> Self {
        Self { seed, replicas: None }
    }

    fn reps(&self, default: u64) -> u64 {
        self.replicas.unwrap_or(default)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Suite {
    FiniteUst,
    Kirkhoff,
    Consistency,
    HittingLaw,
    Green,
    Gff,
    Tutte,
    LevelStability,
    WilsonEscape,
}

impl Suite {
    pub const ALL: [Suite; 9] = [
        Suite::FiniteUst,
        Suite::Kirkhoff,
        Suite::Consistency,
        Suite::HittingLaw,
        Suite::Green,
        Suite::Gff,
        Suite::Tutte,
        Suite::LevelStability,
        Suite::WilsonEscape,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::FiniteUst => "finite-ust",
            Suite::Kirkhoff => "kirkhoff",
            Suite::Consistency => "consistency",
            Suite::HittingLaw => "hitting-law",
            Suite::Green => "green",
            Suite::Gff => "gff",
            Suite::Tutte => "tutte",
            Suite::LevelStability => "level-stability",
            Suite::WilsonEscape => "wilson-escape",
        }
    }

    /// Parses a suite name; `all` expands to every suite.
    pub fn parse(s: &str) -> Result<Vec<Suite>> {
        if s == "all" {
            return Ok(Self::ALL.to_vec());
        }
        Self::ALL
            .iter()
            .find(|x| x.name() == s)
            .map(|&x| vec![x])
            .ok_or_else(|| Error::InvalidParameter(format!("unknown suite {s:?}")))
    }

    pub fn run(self, opts: &VerifyOptions) -> Result<CheckOutcome> {
        match self {
            Suite::FiniteUst => check_finite_ust(opts),
            Suite::Kirkhoff => check_kirkhoff(opts),
            Suite::Consistency => check_consistency(opts),
            Suite::HittingLaw => check_hitting_law(opts),
            Suite::Green => check_green(opts),
            Suite::Gff => check_gff(opts),
            Suite::Tutte => check_tutte(opts),
            Suite::LevelStability => check_level_stability(opts),
            Suite::WilsonEscape => check_wilson_escape(opts),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct VerifyReport {
    pub seed: u64,
    pub checks: Vec<CheckOutcome>,
    pub passed: bool,
}

impl VerifyReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization")
    }
}

pub fn run_suites(suites: &[Suite], opts: &VerifyOptions) -> Result<VerifyReport> {
    let checks = suites
        .iter()
        .map(|s| s.run(opts))
        .collect::<Result<Vec<_>>>()?;
    Ok(VerifyReport {
        seed: opts.seed,
        passed: checks.iter().all(|c| c.passed),
        checks,
    })
}

/// Random connected graph on `n_min..=n_max` vertices: a random tree plus
/// each remaining pair with probability `density`, conductances uniform on
/// [0.1, 5).
pub fn random_connected_graph(
    rng: &mut impl Rng,
    n_min: usize,
    n_max: usize,
    density: f64,
) -> WeightedGraph {
    let n = rng.random_range(n_min..=n_max);
    let mut edges = Vec::new();
    let mut present = HashSet::new();
    for v in 1..n {
        let u = rng.random_range(0..v);
        edges.push((u, v, rng.random_range(0.1..5.0)));
        present.insert((u, v));
    }
    for u in 0..n {
        for v in u + 1..n {
            if !present.contains(&(u, v)) && rng.random::<f64>() < density {
                edges.push((u, v, rng.random_range(0.1..5.0)));
            }
        }
    }
    WeightedGraph::from_edges(n, &edges).expect("random graph is connected")
}

fn tree_index(edges: &[(VertexKey, VertexKey)]) -> Vec<(usize, usize)> {
    edges.iter().map(|&(u, v)| (u as usize, v as usize)).collect()
}

/// Aldous–Broder and Wilson against exact enumeration on small graphs.
pub fn check_finite_ust(opts: &VerifyOptions) -> Result<CheckOutcome> {
    let mut out = CheckOutcome::new(1, "finite-graph spanning tree laws");
    let reps = opts.reps(100_000);
    let graphs = [
        ("k3", WeightedGraph::complete(3)?),
        ("k4", WeightedGraph::complete(4)?),
        (
            "weighted_triangle",
            WeightedGraph::from_edges(3, &[(0, 1, 1.0), (1, 2, 2.0), (0, 2, 3.0)])?,
        ),
        ("c4", WeightedGraph::cycle(4)?),
    ];
    for (name, g) in graphs {
        let n = g.vertex_count();
        let dist = enumerate_ust(&g)?;
        let probs = dist.probabilities();
        let oracle = FiniteOracle::new(g);
        let kernel = build_kernel(&oracle, &Exhaustion::Ball, n, &KernelConfig::default())?;
        let all: Vec<VertexKey> = (0..n as VertexKey).collect();
        let ab = par::map_replicas(reps, |r| {
            aldous_broder_window(&kernel, 0, &all, &all, opts.seed, r, MAX_STEPS)
                .map(|f| dist.index_of(&tree_index(&f.edges)))
        });
        let wi = par::map_replicas(reps, |r| {
            wilson_sample(&kernel, &all, opts.seed, WILSON_STREAM + r, MAX_STEPS)
                .map(|f| dist.index_of(&tree_index(&f.edges)))
        });
        for (label, draws) in [("aldous_broder", ab), ("wilson", wi)] {
            let mut counts = vec![0u64; dist.len()];
            for d in draws {
                let i = d?.ok_or_else(|| {
                    Error::ConsistencyViolation(format!("{label} on {name} produced a non-tree"))
                })?;
                counts[i] += 1;
            }
            let chi = chi_square_gof(&counts, &probs);
            out.stat(format!("{name}.{label}.p"), chi.p_value);
            out.require(chi.p_value > ALPHA);
        }
    }
    Ok(out)
}

/// Edge marginals from the Green's function against the matrix-tree theorem.
pub fn check_kirkhoff(opts: &VerifyOptions) -> Result<CheckOutcome> {
    let mut out = CheckOutcome::new(2, "edge marginals from the Green's function");
    let mut rng = replica_rng(opts.seed, 2);
    let cfg = ExtensionConfig::default();
    let mut worst = 0.0f64;
    let mut edges_checked = 0.0;
    for _ in 0..100 {
        let g = random_connected_graph(&mut rng, 4, 8, 0.4);
        let oracle = FiniteOracle::new(g.clone());
        for (u, v, _) in g.edges() {
            let exact = matrix_tree_edge_prob(&g, u, v)?;
            let got = kirkhoff_edge_prob(&oracle, &Exhaustion::Ball, u as u64, v as u64, &cfg)?;
            worst = worst.max((exact - got).abs());
            edges_checked += 1.0;
        }
    }
    out.stat("max_abs_error", worst);
    out.stat("edges", edges_checked);
    out.require(worst <= 1e-9);
    Ok(out)
}

/// Induced chains of finer levels against coarser ones.
pub fn check_consistency(_opts: &VerifyOptions) -> Result<CheckOutcome> {
    let mut out = CheckOutcome::new(3, "level consistency of the reflected chain");
    let tree = Tree::regular(2)?;
    let z3 = Lattice::new(3)?;
    let oracles: [(&str, &dyn GraphOracle); 2] = [("binary_tree", &tree), ("z3", &z3)];
    for (name, o) in oracles {
        for (m, n) in [(1, 3), (2, 4)] {
            let d = consistency_check(o, &Exhaustion::Ball, m, n, None)?;
            out.stat(format!("{name}.m{m}_n{n}.deviation"), d);
            out.require(d <= 1e-6);
        }
    }
    Ok(out)
}

/// First-hit law of the level-6 walk on the ternary tree against the
/// harmonic measure.
pub fn check_hitting_law(opts: &VerifyOptions) -> Result<CheckOutcome> {
    let mut out = CheckOutcome::new(4, "hitting law equals harmonic measure");
    let reps = opts.reps(100_000);
    let tree = Tree::regular(3)?;
    let exh = Exhaustion::Ball;
    let targets: [VertexKey; 3] = [4, 8, 12];
    let start = 5;
    let hm = harmonic_measure(&tree, &exh, &targets, start, &ExtensionConfig::default())?;
    let kernel = build_kernel(&tree, &exh, 6, &KernelConfig::default())?;
    let rates = RateSchedule::default();
    let stop = StopRule::HitSet(targets.to_vec());
    let hits = par::map_replicas(reps, |r| {
        simulate(&kernel, start, &stop, &rates, opts.seed, r, MAX_STEPS)
            .map(|t| *t.vertices().last().expect("non-empty trajectory"))
    });
    let mut counts = [0u64; 3];
    for h in hits {
        let h = h?;
        let i = targets.iter().position(|&t| t == h).expect("stopped on target");
        counts[i] += 1;
    }
    let chi = chi_square_gof(&counts, &hm.probabilities);
    for (i, p) in hm.probabilities.iter().enumerate() {
        out.stat(format!("hm.{}", targets[i]), *p);
        out.stat(format!("empirical.{}", targets[i]), counts[i] as f64 / reps as f64);
    }
    out.stat("p", chi.p_value);
    out.require(chi.p_value > ALPHA);
    Ok(out)
}

/// Symmetry, Laplacian identity and positivity of Green's functions.
pub fn check_green(opts: &VerifyOptions) -> Result<CheckOutcome> {
    let mut out = CheckOutcome::new(5, "Green's function identities");
    let cfg = ExtensionConfig::default();
    let mut rng = replica_rng(opts.seed, 5);
    let (mut sym, mut lap, mut eig, mut routes) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let mut record = |r: &crate::green::GreenReport| {
        sym = sym.max(r.symmetry_residual);
        lap = lap.max(r.laplacian_residual);
        let rel = if r.max_eigenvalue > 0.0 {
            -r.min_eigenvalue / r.max_eigenvalue
        } else {
            0.0
        };
        eig = eig.max(rel);
        r.killed_entries_zero
    };
    let mut zeros = true;
    for _ in 0..50 {
        let g = random_connected_graph(&mut rng, 4, 12, 0.3);
        let n = g.vertex_count();
        let k = rng.random_range(1..=2usize);
        let mut killing: Vec<usize> = Vec::new();
        while killing.len() < k {
            let a = rng.random_range(0..n);
            if !killing.contains(&a) {
                killing.push(a);
            }
        }
        let oracle = FiniteOracle::new(g.clone());
        let window: Vec<VertexKey> = (0..n as VertexKey).collect();
        let keys: Vec<VertexKey> = killing.iter().map(|&a| a as VertexKey).collect();
        let gm = green(&oracle, &Exhaustion::Ball, &keys, &window, &cfg)?;
        zeros &= record(&validate_green(&gm));
        let all: Vec<usize> = (0..n).collect();
        let via = green_via_hitting(&g, &killing, &all, &SolverConfig::default())?;
        let scale = gm.values.iter().flatten().fold(0.0f64, |m, x| m.max(x.abs()));
        for i in 0..n {
            for j in 0..n {
                routes = routes.max((via[i][j] - gm.values[i][j]).abs() / scale);
            }
        }
    }
    let tree = Tree::regular(3)?;
    for (killing, window) in [(vec![0u64], (0..13).collect::<Vec<_>>()), (vec![4], (0..20).collect())] {
        let gm = green(&tree, &Exhaustion::Ball, &killing, &window, &cfg)?;
        zeros &= record(&validate_green(&gm));
    }
    out.stat("symmetry_residual", sym);
    out.stat("laplacian_residual", lap);
    out.stat("negative_eigenvalue_ratio", eig);
    out.stat("hitting_route_difference", routes);
    out.require(sym <= 1e-9 && lap <= 1e-8 && eig <= 1e-8 && zeros && routes <= 1e-9);
    Ok(out)
}

/// Empirical free field covariance against G/pi.
pub fn check_gff(opts: &VerifyOptions) -> Result<CheckOutcome> {
    let mut out = CheckOutcome::new(6, "free field covariance");
    let reps = opts.reps(100_000);
    let tree = Tree::regular(3)?;
    let window: Vec<VertexKey> = (0..10).collect();
    let g = green(&tree, &Exhaustion::Ball, &[0], &window, &ExtensionConfig::default())?;
    let cov = g.covariance();
    let samples = gff_sample(&g, reps, opts.seed)?;
    let k = window.len();
    let n = reps as f64;
    let mut worst_z = 0.0f64;
    let mut killed_zero = true;
    for row in &samples.rows {
        killed_zero &= row[0] == 0.0;
    }
    for i in 0..k {
        for j in 0..k {
            let prod: Vec<f64> = samples.rows.iter().map(|r| r[i] * r[j]).collect();
            let mean = prod.iter().sum::<f64>() / n;
            let var = prod.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (n - 1.0);
            let se = (var / n).sqrt();
            let diff = (mean - cov[(i, j)]).abs();
            let z = if se > 0.0 {
                diff / se
            } else if diff == 0.0 {
                0.0
            } else {
                f64::INFINITY
            };
            worst_z = worst_z.max(z);
        }
    }
    out.stat("max_standard_errors", worst_z);
    out.stat("killed_exactly_zero", if killed_zero { 1.0 } else { 0.0 });
    out.require(worst_z <= 5.0 && killed_zero);
    Ok(out)
}

/// Tutte embeddings of the wheel W_8 and the 3 x 3 grid.
pub fn check_tutte(_opts: &VerifyOptions) -> Result<CheckOutcome> {
    let mut out = CheckOutcome::new(7, "Tutte embedding");
    let cfg = ExtensionConfig::default();
    let wheel = PlanarMap::wheel(8)?;
    let emb = tutte_embed(&wheel, &cfg)?;
    let mut root_err = 0.0f64;
    for (k, &v) in emb.boundary.iter().enumerate() {
        let t = TAU * (k + 1) as f64 / 8.0;
        let p = emb.positions[v];
        root_err = root_err.max((p[0] - t.cos()).hypot(p[1] - t.sin()));
    }
    let c = emb.positions[wheel.marks().x];
    let centre_err = c[0].hypot(c[1]);
    let recon = emb.harmonic_measure_from_angles();
    let hm_err = recon
        .iter()
        .zip(&emb.harmonic_measure)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let wheel_defect = face_convexity(&emb, &wheel, 1e-9).max_defect;
    let grid = PlanarMap::grid(3, 3)?;
    let gemb = tutte_embed(&grid, &cfg)?;
    let grid_defect = face_convexity(&gemb, &grid, 1e-9).max_defect;
    let grid_recon = gemb
        .harmonic_measure_from_angles()
        .iter()
        .zip(&gemb.harmonic_measure)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    out.stat("wheel.root_of_unity_error", root_err);
    out.stat("wheel.centre_error", centre_err);
    out.stat("wheel.convexity_defect", wheel_defect);
    out.stat("grid.convexity_defect", grid_defect);
    out.stat("angle_reconstruction_error", hm_err.max(grid_recon));
    out.require(
        root_err <= 1e-10
            && centre_err <= 1e-10
            && wheel_defect <= 1e-9
            && grid_defect <= 1e-9
            && hm_err.max(grid_recon) <= 1e-12,
    );
    Ok(out)
}

/// Window edge configuration of Aldous–Broder forests at two levels.
pub fn check_level_stability(opts: &VerifyOptions) -> Result<CheckOutcome> {
    let mut out = CheckOutcome::new(8, "forest window marginal across levels");
    let reps = opts.reps(50_000);
    let tree = Tree::regular(3)?;
    let window: Vec<VertexKey> = ball(&tree, 2).into_iter().map(|(k, _)| k).collect();
    let cover: Vec<VertexKey> = ball(&tree, 3).into_iter().map(|(k, _)| k).collect();
    let wset: HashSet<VertexKey> = window.iter().copied().collect();
    let mut configs: HashMap<Vec<(VertexKey, VertexKey)>, usize> = HashMap::new();
    let mut per_level = Vec::new();
    for (slot, level) in [4usize, 6].into_iter().enumerate() {
        let kernel = build_kernel(&tree, &Exhaustion::Ball, level, &KernelConfig::default())?;
        let draws = par::map_replicas(reps, |r| {
            aldous_broder_window(
                &kernel,
                0,
                &window,
                &cover,
                opts.seed,
                ((slot as u64) << 40) + r,
                MAX_STEPS,
            )
            .map(|f| f.edges_within(&wset))
        });
        let mut ids = Vec::with_capacity(draws.len());
        for d in draws {
            let e = d?;
            let next = configs.len();
            ids.push(*configs.entry(e).or_insert(next));
        }
        per_level.push(ids);
    }
    let mut a = vec![0u64; configs.len()];
    let mut b = vec![0u64; configs.len()];
    for &i in &per_level[0] {
        a[i] += 1;
    }
    for &i in &per_level[1] {
        b[i] += 1;
    }
    let chi = chi_square_two_sample(&a, &b);
    out.stat("configurations", configs.len() as f64);
    out.stat("p", chi.p_value);
    out.require(chi.p_value > ALPHA);
    if configs.len() == 1 {
        out.note = Some("single window configuration: the test has no power on a tree".into());
    }
    Ok(out)
}

/// Frequency of Wilson runs on the level-6 ternary tree in which some
/// retained branch passed through infinity.
pub fn check_wilson_escape(opts: &VerifyOptions) -> Result<CheckOutcome> {
    let mut out = CheckOutcome::new(9, "Wilson branches escaping through infinity");
    let reps = opts.reps(10_000);
    let tree = Tree::regular(3)?;
    let kernel = build_kernel(&tree, &Exhaustion::Ball, 6, &KernelConfig::default())?;
    let order: Vec<VertexKey> = ball(&tree, 6).into_iter().map(|(k, _)| k).collect();
    let escapes = par::map_replicas(reps, |r| {
        wilson_sample(&kernel, &order, opts.seed, WILSON_STREAM + r, MAX_STEPS).map(|f| f.has_escape())
    });
    let mut count = 0u64;
    for e in escapes {
        count += e? as u64;
    }
    out.stat("tree.runs", reps as f64);
    out.stat("tree.runs_with_escape", count as f64);
    out.require(count >= 10);

    // Same statistic on Z^3 for contrast; reported only.
    let z3 = Lattice::new(3)?;
    let zk = build_kernel(&z3, &Exhaustion::Ball, 2, &KernelConfig::fixed(6))?;
    let zorder: Vec<VertexKey> = ball(&z3, 2).into_iter().map(|(k, _)| k).collect();
    let zreps = (reps / 5).max(1);
    let zesc = par::map_replicas(zreps, |r| {
        wilson_sample(&zk, &zorder, opts.seed, WILSON_STREAM + r, MAX_STEPS).map(|f| f.has_escape())
    });
    let mut zcount = 0u64;
    for e in zesc {
        zcount += e? as u64;
    }
    out.stat("z3.runs", zreps as f64);
    out.stat("z3.runs_with_escape", zcount as f64);
    if count < 10 {
        out.note = Some(
            "on a tree every shell vertex re-enters at its own parent, so no retained step passes through infinity"
                .into(),
        );
    }
    Ok(out)
}
