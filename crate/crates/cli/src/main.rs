mod config;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use reflected_walk::forest::{aldous_broder_window, enumerate_ust, wilson_sample};
use reflected_walk::graph::{
    complement_components, truncate, Exhaustion, GraphOracle, Lattice, VertexKey, WeightedGraph,
    ZooSpec,
};
use reflected_walk::green::{gff_sample, green, kirkhoff_edge_prob, validate_green};
use reflected_walk::harmonic::{harmonic_measure, min_energy_extension, ExtensionConfig};
use reflected_walk::par;
use reflected_walk::planar::{
    face_convexity, render_svg, tutte_embed, tutte_embed_infinite, CellMap, PlanarMap, SvgOptions,
};
use reflected_walk::verify::{run_suites, Suite, VerifyOptions};
use reflected_walk::walk::{build_kernel, simulate, KernelConfig, RateSchedule, Reference, StopRule};
use reflected_walk::Error;

use config::{FileConfig, RunArgs, RunConfig};

const DEFAULT_MAX_STEPS: usize = 10_000_000;

#[derive(Parser, Debug)]
#[command(name = "rwalk", version, about = "Random walk reflected off infinity")]
struct Cli {
    /// TOML file with defaults for any run flag
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for replicas (0 = all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Summarize a level of a zoo graph
    Zoo {
        #[command(flatten)]
        run: RunArgs,
        /// Depth used to separate complement components
        #[arg(long)]
        probe: Option<usize>,
    },
    #[command(subcommand)]
    Harmonic(HarmonicCmd),
    #[command(subcommand)]
    Walk(WalkCmd),
    #[command(subcommand)]
    Forest(ForestCmd),
    #[command(subcommand)]
    Green(GreenCmd),
    #[command(subcommand)]
    Gff(GffCmd),
    /// Tutte embedding of a planar map, written as JSON and optionally SVG
    Embed(EmbedArgs),
    /// Run acceptance suites and write a JSON report
    Verify {
        #[command(flatten)]
        run: RunArgs,
        /// Suite name or "all"
        #[arg(long, default_value = "all")]
        suite: String,
    },
}

#[derive(Subcommand, Debug)]
enum HarmonicCmd {
    /// Harmonic measure of a target set seen from a vertex
    Hm {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        targets: String,
        /// Viewpoint (defaults to the root)
        #[arg(long)]
        from: Option<String>,
    },
    /// Energy-minimizing extension of boundary data to a window
    Extend {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        boundary: String,
        #[arg(long, allow_hyphen_values = true)]
        values: String,
        #[arg(long)]
        window: String,
    },
}

#[derive(Subcommand, Debug)]
enum WalkCmd {
    /// Simulate the level-n walk; one JSON event per line
    Simulate {
        #[command(flatten)]
        run: RunArgs,
        /// Start vertex (defaults to the root)
        #[arg(long)]
        start: Option<String>,
        /// hit=LIST, steps=K, cover=LIST or cover=all
        #[arg(long)]
        stop: String,
    },
}

#[derive(Subcommand, Debug)]
enum ForestCmd {
    /// Aldous-Broder forest on the window V_k
    Ab {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        start: Option<String>,
        #[arg(long, default_value_t = 1)]
        window_level: usize,
        /// Defaults to one more than the window level
        #[arg(long)]
        cover_level: Option<usize>,
    },
    /// Wilson forest with the vertices of V_k in key order
    Wilson {
        #[command(flatten)]
        run: RunArgs,
        /// Defaults to the simulation level
        #[arg(long)]
        order_level: Option<usize>,
    },
    /// List every spanning tree of a small finite graph
    Exact {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Chi-square tests of both samplers against enumeration
    Verify {
        #[command(flatten)]
        run: RunArgs,
    },
}

#[derive(Subcommand, Debug)]
enum GreenCmd {
    /// Green's function killed on a set, on a window
    Compute {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        killing: String,
        #[arg(long)]
        window: String,
    },
    /// Probability that an edge is in the free spanning forest
    Kirkhoff {
        #[command(flatten)]
        run: RunArgs,
        /// Two adjacent vertices
        #[arg(long)]
        edge: String,
    },
}

#[derive(Subcommand, Debug)]
enum GffCmd {
    /// Field samples as CSV, one replica per row
    Sample {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        killing: String,
        #[arg(long)]
        window: String,
    },
}

#[derive(Args, Debug)]
struct EmbedArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Planar map JSON file
    #[arg(long, conflicts_with = "builtin")]
    map: Option<PathBuf>,
    /// wheel:M, grid:RxC, binary or nested
    #[arg(long)]
    builtin: Option<String>,
    #[arg(long)]
    svg: Option<PathBuf>,
    #[arg(long)]
    fill_faces: bool,
    /// SVG width and height in pixels
    #[arg(long)]
    size: Option<f64>,
    /// Convexity tolerance
    #[arg(long, default_value_t = 1e-9)]
    convexity_tol: f64,
}

enum Failure {
    Usage(String),
    Lib(Error),
    Verification(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

impl From<String> for Failure {
    fn from(s: String) -> Self {
        Failure::Usage(s)
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Lib(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 2 } else { 1 })
        }
        Err(Failure::Verification(m)) => {
            eprintln!("verification failed: {m}");
            ExitCode::from(3)
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let threads = cli.threads.or(file.threads).unwrap_or(0);
    par::with_threads(threads, move || dispatch(cli.command, &file))
}

fn dispatch(cmd: Command, file: &FileConfig) -> CliResult<()> {
    let merge = |r: &RunArgs| RunConfig::merge(r, file).map_err(Failure::Usage);
    match cmd {
        Command::Zoo { run, probe } => zoo(&merge(&run)?, probe),
        Command::Harmonic(HarmonicCmd::Hm { run, targets, from }) => {
            harmonic_hm(&merge(&run)?, &targets, from.as_deref())
        }
        Command::Harmonic(HarmonicCmd::Extend {
            run,
            boundary,
            values,
            window,
        }) => harmonic_extend(&merge(&run)?, &boundary, &values, &window),
        Command::Walk(WalkCmd::Simulate { run, start, stop }) => {
            walk_simulate(&merge(&run)?, start.as_deref(), &stop)
        }
        Command::Forest(ForestCmd::Ab {
            run,
            start,
            window_level,
            cover_level,
        }) => forest_ab(&merge(&run)?, start.as_deref(), window_level, cover_level),
        Command::Forest(ForestCmd::Wilson { run, order_level }) => {
            forest_wilson(&merge(&run)?, order_level)
        }
        Command::Forest(ForestCmd::Exact { run }) => forest_exact(&merge(&run)?),
        Command::Forest(ForestCmd::Verify { run }) => {
            verify(&merge(&run)?, &[Suite::FiniteUst])
        }
        Command::Green(GreenCmd::Compute {
            run,
            killing,
            window,
        }) => green_compute(&merge(&run)?, &killing, &window),
        Command::Green(GreenCmd::Kirkhoff { run, edge }) => green_kirkhoff(&merge(&run)?, &edge),
        Command::Gff(GffCmd::Sample {
            run,
            killing,
            window,
        }) => gff(&merge(&run)?, &killing, &window),
        Command::Embed(args) => {
            let cfg = merge(&args.run)?;
            embed(&cfg, &args)
        }
        Command::Verify { run, suite } => {
            let suites = Suite::parse(&suite).map_err(|e| Failure::Usage(e.to_string()))?;
            verify(&merge(&run)?, &suites)
        }
    }
}

struct Loaded {
    spec: ZooSpec,
    oracle: Arc<dyn GraphOracle>,
    lattice: Option<Lattice>,
}

impl Loaded {
    fn new(cfg: &RunConfig) -> CliResult<Self> {
        let spec = ZooSpec::parse(cfg.graph()?).map_err(|e| Failure::Usage(e.to_string()))?;
        let oracle = spec.build().map_err(|e| Failure::Usage(e.to_string()))?;
        let lattice = match &spec {
            ZooSpec::LatticeZd { d } => Some(Lattice::new(*d)?),
            _ => None,
        };
        Ok(Self {
            spec,
            oracle,
            lattice,
        })
    }

    fn finite_graph(&self) -> CliResult<&WeightedGraph> {
        match &self.spec {
            ZooSpec::Finite(g) => Ok(g),
            _ => Err(Failure::Usage("this command needs a finite graph JSON file".into())),
        }
    }

    /// A vertex key, or lattice coordinates separated by ':'.
    fn vertex(&self, s: &str) -> CliResult<VertexKey> {
        let s = s.trim();
        if s.contains(':') {
            let lat = self
                .lattice
                .as_ref()
                .ok_or_else(|| Failure::Usage(format!("coordinates '{s}' need a lattice graph")))?;
            let coords: Vec<i64> = s
                .split(':')
                .map(|c| c.parse().map_err(|_| format!("bad coordinate in '{s}'")))
                .collect::<Result<_, _>>()?;
            if coords.len() != lat.dim() {
                return Err(Failure::Usage(format!(
                    "'{s}' has {} coordinates, lattice has dimension {}",
                    coords.len(),
                    lat.dim()
                )));
            }
            return Ok(lat.encode(&coords));
        }
        s.parse()
            .map_err(|_| Failure::Usage(format!("bad vertex '{s}'")))
    }

    fn vertices(&self, list: &str) -> CliResult<Vec<VertexKey>> {
        list.split(',')
            .filter(|t| !t.trim().is_empty())
            .map(|t| self.vertex(t))
            .collect()
    }

    fn vertex_or_root(&self, s: Option<&str>) -> CliResult<VertexKey> {
        match s {
            Some(s) => self.vertex(s),
            None => Ok(self.oracle.root()),
        }
    }
}

fn extension_config(cfg: &RunConfig) -> ExtensionConfig {
    let d = ExtensionConfig::default();
    ExtensionConfig {
        solve_tol: cfg.solve_tol.unwrap_or(d.solve_tol),
        cauchy_tol: cfg.cauchy_tol.unwrap_or(d.cauchy_tol),
        stride: cfg.stride.unwrap_or(d.stride),
        n_max: cfg.n_max.unwrap_or(d.n_max),
        ..d
    }
}

fn kernel_config(cfg: &RunConfig) -> CliResult<KernelConfig> {
    let reference = match cfg.reference.as_deref() {
        None | Some("escalate") => Reference::Escalate,
        Some(s) => Reference::Fixed(
            s.parse()
                .map_err(|_| format!("--reference must be 'escalate' or a level, got '{s}'"))?,
        ),
    };
    Ok(KernelConfig {
        reference,
        extension: extension_config(cfg),
        end_probe_depth: None,
    })
}

fn rates(cfg: &RunConfig) -> CliResult<RateSchedule> {
    let d = RateSchedule::default();
    RateSchedule::new(cfg.rate_base.unwrap_or(d.base), cfg.rate_growth.unwrap_or(d.growth))
        .map_err(|e| Failure::Usage(e.to_string()))
}

fn emit(out: &Option<PathBuf>, text: &str) -> CliResult<()> {
    let res = match out {
        Some(p) => std::fs::write(p, text),
        None => std::io::stdout().lock().write_all(text.as_bytes()),
    };
    res.map_err(|e| Failure::Lib(Error::from(e)))
}

fn emit_json<T: Serialize>(out: &Option<PathBuf>, value: &T) -> CliResult<()> {
    let mut s = serde_json::to_string_pretty(value).expect("json output");
    s.push('\n');
    emit(out, &s)
}

fn json_line(replica: u64, body: Value) -> String {
    let mut obj = serde_json::Map::new();
    obj.insert("replica".into(), json!(replica));
    match body {
        Value::Object(m) => obj.extend(m),
        other => {
            obj.insert("value".into(), other);
        }
    }
    let mut s = Value::Object(obj).to_string();
    s.push('\n');
    s
}

fn zoo(cfg: &RunConfig, probe: Option<usize>) -> CliResult<()> {
    let g = Loaded::new(cfg)?;
    let n = cfg.level()?;
    let exh = Exhaustion::Ball;
    let level = truncate(g.oracle.as_ref(), &exh, n)?;
    let comps = complement_components(g.oracle.as_ref(), &exh, n, probe)?;
    let summary = json!({
        "graph": cfg.graph()?,
        "level": n,
        "root": g.oracle.root(),
        "core_size": level.core_len(),
        "shell_size": level.shell().len(),
        "edges": level.graph().edge_count(),
        "complement_components": comps.len(),
        "component_sizes": comps.iter().map(|c| c.len()).collect::<Vec<_>>(),
        "component_ids": comps.iter().map(|c| c[0]).collect::<Vec<_>>(),
    });
    emit_json(&cfg.out, &summary)
}

fn harmonic_hm(cfg: &RunConfig, targets: &str, from: Option<&str>) -> CliResult<()> {
    let g = Loaded::new(cfg)?;
    let a = g.vertices(targets)?;
    let x = g.vertex_or_root(from)?;
    let hm = harmonic_measure(g.oracle.as_ref(), &Exhaustion::Ball, &a, x, &extension_config(cfg))?;
    emit_json(&cfg.out, &hm)
}

fn harmonic_extend(cfg: &RunConfig, boundary: &str, values: &str, window: &str) -> CliResult<()> {
    let g = Loaded::new(cfg)?;
    let b = g.vertices(boundary)?;
    let phi: Vec<f64> = values
        .split(',')
        .map(|v| v.trim().parse().map_err(|_| format!("bad value '{v}'")))
        .collect::<Result<_, _>>()?;
    let w = g.vertices(window)?;
    let ext = min_energy_extension(
        g.oracle.as_ref(),
        &Exhaustion::Ball,
        &b,
        &phi,
        &w,
        &extension_config(cfg),
    )?;
    emit_json(&cfg.out, &ext)
}

fn walk_simulate(cfg: &RunConfig, start: Option<&str>, stop: &str) -> CliResult<()> {
    let g = Loaded::new(cfg)?;
    let n = cfg.level()?;
    let seed = cfg.seed()?;
    let x0 = g.vertex_or_root(start)?;
    let kcfg = kernel_config(cfg)?;
    let rates = rates(cfg)?;
    let (kind, arg) = stop
        .split_once('=')
        .ok_or_else(|| format!("--stop must be hit=LIST, steps=K or cover=LIST, got '{stop}'"))?;
    let exh = Exhaustion::Ball;
    let rule = match kind {
        "hit" => StopRule::HitSet(g.vertices(arg)?),
        "steps" => StopRule::Steps(arg.parse().map_err(|_| format!("bad step count '{arg}'"))?),
        "cover" if arg == "all" => StopRule::Cover(exh.level_set(g.oracle.as_ref(), n)?),
        "cover" => StopRule::Cover(g.vertices(arg)?),
        _ => return Err(Failure::Usage(format!("unknown stop rule '{kind}'"))),
    };
    let kernel = build_kernel(g.oracle.as_ref(), &exh, n, &kcfg)?;
    let budget = cfg.max_steps.unwrap_or(DEFAULT_MAX_STEPS);
    let reps = cfg.replicas.unwrap_or(1);
    let trajs = par::map_replicas(reps, |r| simulate(&kernel, x0, &rule, &rates, seed, r, budget));
    let mut text = String::new();
    for (r, t) in trajs.into_iter().enumerate() {
        let t = t?;
        for e in &t.events {
            text.push_str(&json_line(r as u64, serde_json::to_value(e).expect("event")));
        }
        text.push_str(&json_line(
            r as u64,
            json!({"event": "stop", "reason": t.stop, "steps": t.steps, "total_time": t.total_time}),
        ));
    }
    emit(&cfg.out, &text)
}

fn forest_ab(
    cfg: &RunConfig,
    start: Option<&str>,
    window_level: usize,
    cover_level: Option<usize>,
) -> CliResult<()> {
    let g = Loaded::new(cfg)?;
    let n = cfg.level()?;
    let seed = cfg.seed()?;
    let cover_level = cover_level.unwrap_or(window_level + 1);
    if window_level == 0 || window_level > cover_level || cover_level > n {
        return Err(Failure::Usage(format!(
            "need 1 <= window level <= cover level <= level, got {window_level}, {cover_level}, {n}"
        )));
    }
    let exh = Exhaustion::Ball;
    let o = g.oracle.as_ref();
    let window = exh.level_set(o, window_level)?;
    let cover = exh.level_set(o, cover_level)?;
    let x0 = g.vertex_or_root(start)?;
    let kernel = build_kernel(o, &exh, n, &kernel_config(cfg)?)?;
    let budget = cfg.max_steps.unwrap_or(DEFAULT_MAX_STEPS);
    let forests = par::map_replicas(cfg.replicas.unwrap_or(1), |r| {
        aldous_broder_window(&kernel, x0, &window, &cover, seed, r, budget)
    });
    let mut text = String::new();
    for (r, f) in forests.into_iter().enumerate() {
        text.push_str(&json_line(r as u64, serde_json::to_value(f?).expect("forest")));
    }
    emit(&cfg.out, &text)
}

fn forest_wilson(cfg: &RunConfig, order_level: Option<usize>) -> CliResult<()> {
    let g = Loaded::new(cfg)?;
    let n = cfg.level()?;
    let seed = cfg.seed()?;
    let k = order_level.unwrap_or(n);
    if k == 0 || k > n {
        return Err(Failure::Usage(format!("order level must lie in 1..={n}")));
    }
    let exh = Exhaustion::Ball;
    let o = g.oracle.as_ref();
    let mut order = exh.level_set(o, k)?;
    order.sort_unstable();
    let kernel = build_kernel(o, &exh, n, &kernel_config(cfg)?)?;
    let budget = cfg.max_steps.unwrap_or(DEFAULT_MAX_STEPS);
    let forests = par::map_replicas(cfg.replicas.unwrap_or(1), |r| {
        wilson_sample(&kernel, &order, seed, r, budget)
    });
    let mut text = String::new();
    for (r, f) in forests.into_iter().enumerate() {
        text.push_str(&json_line(r as u64, serde_json::to_value(f?).expect("forest")));
    }
    emit(&cfg.out, &text)
}

fn forest_exact(cfg: &RunConfig) -> CliResult<()> {
    let g = Loaded::new(cfg)?;
    let dist = match enumerate_ust(g.finite_graph()?) {
        Err(Error::InvalidParameter(m)) => return Err(Failure::Usage(m)),
        other => other?,
    };
    emit_json(
        &cfg.out,
        &json!({"count": dist.len(), "trees": dist.trees}),
    )
}

fn green_compute(cfg: &RunConfig, killing: &str, window: &str) -> CliResult<()> {
    let g = Loaded::new(cfg)?;
    let a = g.vertices(killing)?;
    let w = g.vertices(window)?;
    let gm = green(g.oracle.as_ref(), &Exhaustion::Ball, &a, &w, &extension_config(cfg))?;
    let report = validate_green(&gm);
    emit_json(&cfg.out, &json!({"green": gm, "validation": report}))
}

fn green_kirkhoff(cfg: &RunConfig, edge: &str) -> CliResult<()> {
    let g = Loaded::new(cfg)?;
    let e = g.vertices(edge)?;
    let [x, y] = e[..] else {
        return Err(Failure::Usage("--edge needs exactly two vertices".into()));
    };
    let p = kirkhoff_edge_prob(g.oracle.as_ref(), &Exhaustion::Ball, x, y, &extension_config(cfg))?;
    emit_json(&cfg.out, &json!({"x": x, "y": y, "probability": p}))
}

fn gff(cfg: &RunConfig, killing: &str, window: &str) -> CliResult<()> {
    let g = Loaded::new(cfg)?;
    let seed = cfg.seed()?;
    let a = g.vertices(killing)?;
    let w = g.vertices(window)?;
    let gm = green(g.oracle.as_ref(), &Exhaustion::Ball, &a, &w, &extension_config(cfg))?;
    let samples = gff_sample(&gm, cfg.replicas.unwrap_or(1), seed)?;
    emit(&cfg.out, &samples.to_csv())
}

fn builtin_map(spec: &str) -> CliResult<Option<PlanarMap>> {
    let bad = || Failure::Usage(format!("unknown builtin map '{spec}'"));
    if let Some(m) = spec.strip_prefix("wheel:") {
        let m = m.parse().map_err(|_| bad())?;
        return Ok(Some(PlanarMap::wheel(m)?));
    }
    if let Some(rc) = spec.strip_prefix("grid:") {
        let (r, c) = rc.split_once('x').ok_or_else(bad)?;
        let r = r.parse().map_err(|_| bad())?;
        let c = c.parse().map_err(|_| bad())?;
        return Ok(Some(PlanarMap::grid(r, c)?));
    }
    match spec {
        "binary" | "nested" => Ok(None),
        _ => Err(bad()),
    }
}

fn embed(cfg: &RunConfig, args: &EmbedArgs) -> CliResult<()> {
    let ecfg = extension_config(cfg);
    let (map, emb, infinite) = match (&args.map, args.builtin.as_deref()) {
        (Some(p), _) => {
            let map = PlanarMap::from_json_file(p)?;
            let emb = tutte_embed(&map, &ecfg)?;
            (map, emb, false)
        }
        (None, Some(spec)) => match builtin_map(spec)? {
            Some(map) => {
                let emb = tutte_embed(&map, &ecfg)?;
                (map, emb, false)
            }
            None => {
                let cells = if spec == "binary" {
                    CellMap::binary()
                } else {
                    CellMap::nested()
                };
                let (map, emb) = tutte_embed_infinite(&cells, cfg.level()?, &ecfg)?;
                (map, emb, true)
            }
        },
        (None, None) => return Err(Failure::Usage("--map or --builtin is required".into())),
    };
    let convexity = face_convexity(&emb, &map, args.convexity_tol);
    if let Some(path) = &args.svg {
        let mut opts = SvgOptions {
            fill_faces: args.fill_faces,
            ..SvgOptions::default()
        };
        if let Some(s) = args.size {
            opts.size = s;
        }
        write_file(path, &render_svg(&emb, &map, &opts))?;
    }
    let keys: BTreeMap<usize, VertexKey> = map.keys().iter().copied().enumerate().collect();
    emit_json(
        &cfg.out,
        &json!({
            "infinite": infinite,
            "vertices": map.vertex_count(),
            "edges": map.edge_count(),
            "keys": keys,
            "embedding": emb,
            "convexity": convexity,
        }),
    )
}

fn write_file(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| Failure::Lib(Error::from(e)))
}

fn verify(cfg: &RunConfig, suites: &[Suite]) -> CliResult<()> {
    let opts = VerifyOptions {
        seed: cfg.seed()?,
        replicas: cfg.replicas,
    };
    let report = run_suites(suites, &opts)?;
    let mut text = report.to_json();
    text.push('\n');
    emit(&cfg.out, &text)?;
    if report.passed {
        Ok(())
    } else {
        let failed: Vec<String> = report
            .checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| format!("{} {}", c.id, c.name))
            .collect();
        Err(Failure::Verification(failed.join(", ")))
    }
}
