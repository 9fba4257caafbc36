//! Model construction and the serial / dope / compare drivers.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use dope_core::color::{apply_seed_constraints, compute_unaries, fit_color_model};
use dope_core::metrics::WallTimes;
use dope_core::{
    build_potts_weights, evaluate_labels, factor_blocks, make_partition, solve_block, AdmmOutcome, BlockSolverKind,
    ComparisonReport, Dope, EnergyModel, GridImage, GridShape, Partition, TraceRecord,
};
use serde::Serialize;

use crate::config::{BlockSpec, RunConfig};
use crate::error::CliError;
use crate::io;

type Result<T> = std::result::Result<T, CliError>;

/// Loads the image, seeds and unaries named in `cfg` and builds the energy.
pub fn load_model(cfg: &RunConfig) -> Result<(GridImage, EnergyModel)> {
    let mut image = io::load_image(&cfg.image)?;
    if let Some(path) = &cfg.seeds {
        let seeds = io::load_seeds(path, image.shape())?;
        image = image.with_seeds(seeds)?;
    }
    let model = build_model(cfg, &image)?;
    Ok((image, model))
}

/// Unaries come from the probability map when given, otherwise from a color
/// model fitted to the seeds. Seeds are pinned either way.
pub fn build_model(cfg: &RunConfig, image: &GridImage) -> Result<EnergyModel> {
    let n = image.shape().n();
    let unary = match &cfg.unaries {
        Some(path) => {
            let mut u = io::load_unaries(path, n)?;
            if let Some(seeds) = image.seeds() {
                apply_seed_constraints(&mut u, seeds)?;
            }
            u
        }
        None => {
            if image.seeds().is_none() {
                return Err(CliError::Config("either --unaries or --seeds is required".into()));
            }
            let color = fit_color_model(image, cfg.seed)?;
            compute_unaries(image, &color)?
        }
    };
    let weights = build_potts_weights(image, cfg.kernel, cfg.sigma.unwrap_or(1.0), cfg.sigma.is_some())?;
    Ok(EnergyModel::new(unary, weights, cfg.lambda)?)
}

pub fn build_partition(cfg: &RunConfig, shape: &GridShape) -> Result<Partition> {
    let per_axis = match &cfg.blocks {
        None => vec![2; shape.ndim()],
        Some(BlockSpec::Total(k)) => factor_blocks(shape, *k)?,
        Some(BlockSpec::PerAxis(v)) if v.len() == shape.ndim() => v.clone(),
        Some(BlockSpec::PerAxis(v)) => {
            return Err(CliError::Config(format!(
                "--blocks has {} factors for a {}-dimensional grid",
                v.len(),
                shape.ndim()
            )))
        }
    };
    Ok(make_partition(shape, &per_axis, cfg.overlap)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SerialRun {
    pub labels: Vec<u8>,
    pub energy: f64,
    pub elapsed: Duration,
}

/// Whole-grid solve with the configured solver (ICM starts from all zeros).
pub fn solve_serial(model: &EnergyModel, solver: BlockSolverKind) -> Result<SerialRun> {
    if solver == BlockSolverKind::MaxFlow && !model.is_submodular() {
        return Err(CliError::Config(
            "maxflow needs non-negative weights; use --solver icm".into(),
        ));
    }
    let start = Instant::now();
    let labels = solve_block(solver, model.unary(), model.weights(), model.lambda(), None)?;
    let elapsed = start.elapsed();
    let energy = evaluate_labels(model, &labels)?;
    Ok(SerialRun {
        labels,
        energy,
        elapsed,
    })
}

pub struct DopeRun {
    pub outcome: AdmmOutcome,
    pub blocks: usize,
    pub eps: f64,
    pub elapsed: Duration,
}

pub fn solve_dope(cfg: &RunConfig, model: &EnergyModel, partition: &Partition) -> Result<DopeRun> {
    let dope = Dope::new(model, partition, cfg.admm(partition.shape().ndim()))?;
    let start = Instant::now();
    let outcome = dope.run()?;
    Ok(DopeRun {
        outcome,
        blocks: partition.blocks().len(),
        eps: dope.eps(),
        elapsed: start.elapsed(),
    })
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

/// CSV with header `iter,mu,energy,residual,max_block_residual,ms`; the time
/// column is 0 unless `timing` is set so that reruns are byte-identical.
pub fn format_trace(trace: &[TraceRecord], timing: bool) -> String {
    let mut out = String::from("iter,mu,energy,residual,max_block_residual,ms\n");
    for r in trace {
        let t = if timing { ms(r.elapsed) } else { 0.0 };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.iter, r.mu, r.energy, r.residual, r.max_block_residual, t
        );
    }
    out
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn output_dir(cfg: &RunConfig) -> Result<&Path> {
    fs::create_dir_all(&cfg.out).map_err(|e| CliError::io(&cfg.out, e))?;
    Ok(&cfg.out)
}

/// Settings echoed into report.json.
#[derive(Debug, Clone, Serialize)]
pub struct ConfigEcho {
    pub dims: Vec<usize>,
    pub lambda: f64,
    pub kernel: usize,
    pub blocks_per_axis: Vec<usize>,
    pub overlap: u32,
    pub solver: String,
    pub mu0: f64,
    pub mu_fact: f64,
    pub eps: f64,
    pub max_iters: usize,
    pub seed: u64,
    pub sigma: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReportFile {
    #[serde(flatten)]
    pub report: ComparisonReport,
    pub config: ConfigEcho,
}

#[derive(Debug, Clone)]
pub struct Written {
    pub labels_serial: Option<PathBuf>,
    pub labels_dope: Option<PathBuf>,
    pub trace: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

pub fn run_serial(cfg: &RunConfig) -> Result<(SerialRun, Written)> {
    let (image, model) = load_model(cfg)?;
    let run = solve_serial(&model, cfg.solver)?;
    let dir = output_dir(cfg)?;
    let path = dir.join(io::label_file_name("labels_serial", image.shape()));
    io::write_labels(&path, image.shape(), &run.labels)?;
    Ok((
        run,
        Written {
            labels_serial: Some(path),
            labels_dope: None,
            trace: None,
            report: None,
        },
    ))
}

pub fn run_dope(cfg: &RunConfig) -> Result<(DopeRun, Written)> {
    let (image, model) = load_model(cfg)?;
    let partition = build_partition(cfg, image.shape())?;
    let run = solve_dope(cfg, &model, &partition)?;
    let dir = output_dir(cfg)?;
    let labels = dir.join(io::label_file_name("labels_dope", image.shape()));
    io::write_labels(&labels, image.shape(), &run.outcome.labels)?;
    let trace = dir.join("trace.csv");
    write_text(&trace, &format_trace(&run.outcome.state.trace, cfg.timing))?;
    Ok((
        run,
        Written {
            labels_serial: None,
            labels_dope: Some(labels),
            trace: Some(trace),
            report: None,
        },
    ))
}

pub fn run_compare(cfg: &RunConfig) -> Result<(ReportFile, Written)> {
    let (image, model) = load_model(cfg)?;
    let shape = image.shape();
    let partition = build_partition(cfg, shape)?;
    let serial = solve_serial(&model, cfg.solver)?;
    let dope = solve_dope(cfg, &model, &partition)?;
    let out = &dope.outcome;
    let mut report = ComparisonReport::new(
        (&serial.labels, serial.energy),
        (&out.labels, out.energy),
        out.state.iter,
        out.converged,
        dope.blocks,
        cfg.solver.name(),
    )?;
    if cfg.timing {
        report.wall_times = Some(WallTimes {
            serial_ms: ms(serial.elapsed),
            dope_ms: ms(dope.elapsed),
        });
    }
    let admm = cfg.admm(shape.ndim());
    let per_axis = (0..shape.ndim())
        .map(|axis| {
            let mut starts: Vec<usize> = partition.blocks().iter().map(|b| b.extent()[axis].start).collect();
            starts.sort_unstable();
            starts.dedup();
            starts.len()
        })
        .collect();
    let file = ReportFile {
        report,
        config: ConfigEcho {
            dims: shape.dims().to_vec(),
            lambda: cfg.lambda,
            kernel: cfg.kernel.size(),
            blocks_per_axis: per_axis,
            overlap: cfg.overlap.pct(),
            solver: cfg.solver.name().to_string(),
            mu0: admm.mu0,
            mu_fact: admm.mu_fact,
            eps: dope.eps,
            max_iters: admm.max_iters,
            seed: cfg.seed,
            sigma: cfg.sigma,
        },
    };
    let dir = output_dir(cfg)?;
    let ls = dir.join(io::label_file_name("labels_serial", shape));
    io::write_labels(&ls, shape, &serial.labels)?;
    let ld = dir.join(io::label_file_name("labels_dope", shape));
    io::write_labels(&ld, shape, &out.labels)?;
    let trace = dir.join("trace.csv");
    write_text(&trace, &format_trace(&out.state.trace, cfg.timing))?;
    let report_path = dir.join("report.json");
    let json = serde_json::to_string_pretty(&file).map_err(|e| CliError::Config(e.to_string()))?;
    write_text(&report_path, &(json + "\n"))?;
    Ok((
        file,
        Written {
            labels_serial: Some(ls),
            labels_dope: Some(ld),
            trace: Some(trace),
            report: Some(report_path),
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trace_has_zero_time_without_timing() {
        let rec = TraceRecord {
            iter: 1,
            mu: 100.0,
            energy: -2.5,
            residual: 0.25,
            max_block_residual: 0.5,
            clamped: false,
            elapsed: Duration::from_millis(7),
        };
        assert_eq!(
            format_trace(std::slice::from_ref(&rec), false),
            "iter,mu,energy,residual,max_block_residual,ms\n1,100,-2.5,0.25,0.5,0\n"
        );
        assert!(format_trace(&[rec], true).ends_with(",7\n"));
    }
}
