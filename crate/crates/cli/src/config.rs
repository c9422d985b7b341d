use std::path::{Path, PathBuf};

use clap::Args;
use serde::Deserialize;

/// Settings that may come from a TOML file. Every key has a flag of the same
/// name (underscores become dashes) and the flag wins.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub graph: Option<String>,
    pub level: Option<usize>,
    pub seed: Option<u64>,
    pub replicas: Option<u64>,
    pub solve_tol: Option<f64>,
    pub cauchy_tol: Option<f64>,
    pub stride: Option<usize>,
    pub n_max: Option<usize>,
    pub reference: Option<String>,
    pub rate_base: Option<f64>,
    pub rate_growth: Option<f64>,
    pub max_steps: Option<usize>,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| format!("bad config {}: {e}", path.display()))
    }
}

#[derive(Clone, Debug, Default, Args)]
pub struct RunArgs {
    /// lattice:D, tree:B, biased:B:LAMBDA or a graph JSON file
    #[arg(long)]
    pub graph: Option<String>,
    /// Simulation level n
    #[arg(long)]
    pub level: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub replicas: Option<u64>,
    /// Harmonicity residual per truncation solve
    #[arg(long)]
    pub solve_tol: Option<f64>,
    /// Sup-norm agreement between successive truncation levels
    #[arg(long)]
    pub cauchy_tol: Option<f64>,
    /// Level increment while escalating
    #[arg(long)]
    pub stride: Option<usize>,
    /// Largest truncation level tried
    #[arg(long)]
    pub n_max: Option<usize>,
    /// Shell jump reference: "escalate" or a fixed level N
    #[arg(long)]
    pub reference: Option<String>,
    #[arg(long)]
    pub rate_base: Option<f64>,
    #[arg(long)]
    pub rate_growth: Option<f64>,
    /// Chain transition budget per replica
    #[arg(long)]
    pub max_steps: Option<usize>,
    /// Output file (stdout when absent)
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Flags merged over the config file.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub graph: Option<String>,
    pub level: Option<usize>,
    pub seed: Option<u64>,
    pub replicas: Option<u64>,
    pub solve_tol: Option<f64>,
    pub cauchy_tol: Option<f64>,
    pub stride: Option<usize>,
    pub n_max: Option<usize>,
    pub reference: Option<String>,
    pub rate_base: Option<f64>,
    pub rate_growth: Option<f64>,
    pub max_steps: Option<usize>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn merge(flags: &RunArgs, file: &FileConfig) -> Result<Self, String> {
        let cfg = Self {
            graph: flags.graph.clone().or_else(|| file.graph.clone()),
            level: flags.level.or(file.level),
            seed: flags.seed.or(file.seed),
            replicas: flags.replicas.or(file.replicas),
            solve_tol: flags.solve_tol.or(file.solve_tol),
            cauchy_tol: flags.cauchy_tol.or(file.cauchy_tol),
            stride: flags.stride.or(file.stride),
            n_max: flags.n_max.or(file.n_max),
            reference: flags.reference.clone().or_else(|| file.reference.clone()),
            rate_base: flags.rate_base.or(file.rate_base),
            rate_growth: flags.rate_growth.or(file.rate_growth),
            max_steps: flags.max_steps.or(file.max_steps),
            out: flags.out.clone().or_else(|| file.out.clone()),
        };
        for (name, v) in [("solve-tol", cfg.solve_tol), ("cauchy-tol", cfg.cauchy_tol)] {
            if let Some(t) = v {
                if !(t > 0.0 && t.is_finite()) {
                    return Err(format!("--{name} must be positive"));
                }
            }
        }
        if cfg.replicas == Some(0) {
            return Err("--replicas must be at least 1".into());
        }
        if cfg.stride == Some(0) {
            return Err("--stride must be at least 1".into());
        }
        Ok(cfg)
    }

    pub fn graph(&self) -> Result<&str, String> {
        self.graph.as_deref().ok_or_else(|| "--graph is required".into())
    }

    pub fn level(&self) -> Result<usize, String> {
        match self.level {
            Some(0) => Err("--level must be at least 1".into()),
            Some(n) => Ok(n),
            None => Err("--level is required".into()),
        }
    }

    pub fn seed(&self) -> Result<u64, String> {
        self.seed
            .ok_or_else(|| "--seed is required for stochastic commands".into())
    }
}
