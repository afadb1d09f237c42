//! Command-line front end.
//!
//! Flags override the matching fields of the `--config` JSON. Exit codes:
//! 0 success, 2 configuration error, 3 data error, 4 numeric failure.

mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::RunConfig;

use crate::error::{Error, Result};

pub const THREADS_ENV: &str = "ATTNSHAP_THREADS";

#[derive(Debug, Parser)]
#[command(name = "attnshap", version, about = "Shapley attributions and concept sensitivity for small transformer encoders")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic task: datasets, concept sets and a model architecture.
    Synth,
    /// Train the toy transformer and save a checkpoint.
    Train,
    /// Per-input attribution scores for the selected methods.
    Attribute,
    /// F1, comprehensiveness and sufficiency per method.
    Evaluate,
    /// Relative CAVs for every concept and layer.
    Cav,
    /// Concept scores with significance tests.
    Tcav,
    /// Per-token heatmap images.
    Heatmap,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Train => "train",
            Command::Attribute => "attribute",
            Command::Evaluate => "evaluate",
            Command::Cav => "cav",
            Command::Tcav => "tcav",
            Command::Heatmap => "heatmap",
        }
    }
}

#[derive(Debug, Default, Args)]
pub struct Common {
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Comma-separated method names, or `all`.
    #[arg(long, global = true)]
    pub methods: Option<String>,
    /// Coalitions sampled per input.
    #[arg(long, global = true)]
    pub samples: Option<usize>,
    /// Block whose output is probed; repeat for several.
    #[arg(long, global = true)]
    pub layer: Vec<usize>,
    #[arg(long, global = true)]
    pub class: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Model checkpoint.
    #[arg(long, global = true)]
    pub model: Option<PathBuf>,
    /// JSONL dataset.
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
}

impl Common {
    /// The `--config` file (or defaults) with flags applied on top.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) if !p.exists() => return Err(Error::Config(format!("{} does not exist", p.display()))),
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if self.seed.is_some() {
            c.seed = self.seed;
        }
        if self.methods.is_some() {
            c.methods = self.methods.clone();
        }
        if let Some(n) = self.samples {
            c.sampling.n_samples = n;
        }
        if !self.layer.is_empty() {
            c.layers = self.layer.clone();
        }
        if self.class.is_some() {
            c.class = self.class;
        }
        if self.out.is_some() {
            c.out = self.out.clone();
        }
        if self.model.is_some() {
            c.model = self.model.clone();
        }
        if self.data.is_some() {
            c.data = self.data.clone();
        }
        Ok(c)
    }
}

fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("{} must be a positive integer, got `{}`", THREADS_ENV, v)))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(e.to_string()))
}

pub fn run(cli: &Cli) -> Result<()> {
    configure_threads()?;
    let cfg = cli.common.resolve()?;
    cfg.check_paths()?;
    if cfg.sampling.n_samples == 0 {
        return Err(Error::Config("--samples must be positive".into()));
    }
    cfg.methods()?;
    cfg.metrics.validate()?;
    let hash = cfg.hash(cli.command.name())?;
    match cli.command {
        Command::Synth => commands::synth(&cfg, &hash),
        Command::Train => commands::train_cmd(&cfg, &hash),
        Command::Attribute => commands::attribute_cmd(&cfg, &hash),
        Command::Evaluate => commands::evaluate_cmd(&cfg, &hash),
        Command::Cav => commands::cav_cmd(&cfg, &hash),
        Command::Tcav => commands::tcav_cmd(&cfg, &hash),
        Command::Heatmap => commands::heatmap_cmd(&cfg, &hash),
    }
}

/// Parses the process arguments, runs, and returns the exit code.
pub fn main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e);
            e.exit_code()
        }
    }
}
