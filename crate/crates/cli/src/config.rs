//! Command-line flags, the optional JSON config file and their merge.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use dope_core::{AdmmConfig, BlockSolverKind, Kernel, Overlap};
use serde::Deserialize;

use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "dope",
    version,
    about = "Distributed graph-cut segmentation on 2D images and 3D volumes"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the whole grid with a single solver.
    Serial(RunArgs),
    /// Solve with overlapping blocks and ADMM consensus.
    Dope(RunArgs),
    /// Run both on the same model and report energy gap and Dice.
    Compare(RunArgs),
    /// Run the randomized self-check suites.
    OracleCheck(OracleArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// Input image: PGM/PPM, or .raw with a .json descriptor for volumes.
    #[arg(long)]
    pub image: Option<PathBuf>,
    /// Seed mask: 0 unlabeled, 128 background, 255 foreground.
    #[arg(long)]
    pub seeds: Option<PathBuf>,
    /// Foreground probability map (raw float32), used instead of a color model.
    #[arg(long)]
    pub unaries: Option<PathBuf>,
    #[arg(long)]
    pub lambda: Option<f64>,
    /// 3, 5, 7 or 9.
    #[arg(long)]
    pub kernel: Option<usize>,
    /// Blocks per axis (AxB or AxBxC) or a total count K.
    #[arg(long)]
    pub blocks: Option<String>,
    /// Overlap percentage: 0, 10 or 25.
    #[arg(long)]
    pub overlap: Option<u32>,
    /// maxflow, icm or exhaustive.
    #[arg(long)]
    pub solver: Option<String>,
    #[arg(long)]
    pub mu0: Option<f64>,
    #[arg(long)]
    pub mu_fact: Option<f64>,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// Worker threads for block solves (0 = all cores).
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Contrast bandwidth; without it all pairwise weights are 1.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Record wall-clock times in trace.csv and report.json.
    #[arg(long)]
    pub timing: bool,
    /// JSON file with any of the above keys (kebab-case); flags win.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct OracleArgs {
    #[arg(long, default_value_t = 200)]
    pub cases: usize,
    /// Largest grid side for the exhaustive max-flow check.
    #[arg(long, default_value_t = 4)]
    pub flow_side: usize,
    #[arg(long, default_value_t = 8)]
    pub grid_side: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct FileConfig {
    pub image: Option<PathBuf>,
    pub seeds: Option<PathBuf>,
    pub unaries: Option<PathBuf>,
    pub lambda: Option<f64>,
    pub kernel: Option<usize>,
    pub blocks: Option<String>,
    pub overlap: Option<u32>,
    pub solver: Option<String>,
    pub mu0: Option<f64>,
    pub mu_fact: Option<f64>,
    pub eps: Option<f64>,
    pub max_iters: Option<usize>,
    pub threads: Option<usize>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub sigma: Option<f64>,
    pub timing: Option<bool>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BlockSpec {
    PerAxis(Vec<usize>),
    Total(usize),
}

impl FromStr for BlockSpec {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        let bad = || CliError::Config(format!("--blocks expects AxB, AxBxC or K, got {s:?}"));
        let parts: Vec<usize> = s
            .split(['x', 'X'])
            .map(|p| p.trim().parse::<usize>().map_err(|_| bad()))
            .collect::<Result<_, _>>()?;
        if parts.contains(&0) {
            return Err(bad());
        }
        match parts.len() {
            1 => Ok(Self::Total(parts[0])),
            2 | 3 => Ok(Self::PerAxis(parts)),
            _ => Err(bad()),
        }
    }
}

/// Fully resolved run settings.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub image: PathBuf,
    pub seeds: Option<PathBuf>,
    pub unaries: Option<PathBuf>,
    pub lambda: f64,
    pub kernel: Kernel,
    /// `None` means two blocks per axis.
    pub blocks: Option<BlockSpec>,
    pub overlap: Overlap,
    pub solver: BlockSolverKind,
    pub mu0: Option<f64>,
    pub mu_fact: f64,
    pub eps: Option<f64>,
    pub max_iters: usize,
    pub threads: usize,
    pub out: PathBuf,
    pub seed: u64,
    pub sigma: Option<f64>,
    pub timing: bool,
}

impl RunConfig {
    pub fn resolve(args: &RunArgs) -> Result<Self, CliError> {
        let file = match &args.config {
            Some(p) => FileConfig::load(p)?,
            None => FileConfig::default(),
        };
        let image = args
            .image
            .clone()
            .or(file.image)
            .ok_or_else(|| CliError::Config("--image is required".into()))?;
        let lambda = args
            .lambda
            .or(file.lambda)
            .ok_or_else(|| CliError::Config("--lambda is required".into()))?;
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(CliError::Config(format!(
                "lambda must be a finite value >= 0, got {lambda}"
            )));
        }
        let kernel = Kernel::new(args.kernel.or(file.kernel).unwrap_or(3))?;
        let blocks = args.blocks.clone().or(file.blocks).map(|b| b.parse()).transpose()?;
        let overlap = Overlap::from_pct(args.overlap.or(file.overlap).unwrap_or(0))?;
        let solver: BlockSolverKind = args
            .solver
            .clone()
            .or(file.solver)
            .unwrap_or_else(|| "maxflow".into())
            .parse()?;
        if let Some(s) = args.sigma.or(file.sigma) {
            if !(s > 0.0) {
                return Err(CliError::Config(format!("sigma must be > 0, got {s}")));
            }
        }
        let defaults = AdmmConfig::for_ndim(2);
        Ok(Self {
            image,
            seeds: args.seeds.clone().or(file.seeds),
            unaries: args.unaries.clone().or(file.unaries),
            lambda,
            kernel,
            blocks,
            overlap,
            solver,
            mu0: args.mu0.or(file.mu0),
            mu_fact: args.mu_fact.or(file.mu_fact).unwrap_or(defaults.mu_fact),
            eps: args.eps.or(file.eps),
            max_iters: args.max_iters.or(file.max_iters).unwrap_or(defaults.max_iters),
            threads: args.threads.or(file.threads).unwrap_or(0),
            out: args.out.clone().or(file.out).unwrap_or_else(|| PathBuf::from(".")),
            seed: args.seed.or(file.seed).unwrap_or(0),
            sigma: args.sigma.or(file.sigma),
            timing: args.timing || file.timing.unwrap_or(false),
        })
    }

    /// ADMM settings for a grid of `ndim` dimensions.
    pub fn admm(&self, ndim: usize) -> AdmmConfig {
        let base = AdmmConfig::for_ndim(ndim);
        AdmmConfig {
            mu0: self.mu0.unwrap_or(base.mu0),
            mu_fact: self.mu_fact,
            eps: self.eps,
            max_iters: self.max_iters,
            solver: self.solver,
            threads: self.threads,
        }
    }
}
