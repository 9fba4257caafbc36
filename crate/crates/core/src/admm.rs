//! ADMM coordinator: parallel block solves, closed-form global update,
//! multiplier update and the penalty schedule.
//!
//! Each iteration performs, for the current penalty `μ`:
//!
//! ```text
//! ŷ_k ← argmin_ŷ (û_k + λ(C_k + R_k S_k) y + μ(a_k − S_k y + ½))ᵀ ŷ + λ ŷᵀ L̂_k ŷ
//! y   ← (1/μ) Q⁻¹ Σ_k [ μ S_kᵀ(ŷ_k + a_k) − λ (C_k + R_k S_k)ᵀ ŷ_k ]   (clamped to [0, 1])
//! a_k ← a_k + (ŷ_k − S_k y)
//! μ   ← μ · μ_fact
//! ```
//!
//! and stops once `‖ŷ_k − S_k y‖₂ ≤ ε` for every block.

use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::blockform::{assemble_block_problems, block_objective, BlockProblem};
use crate::energy::{evaluate_energy, evaluate_labels, EnergyModel};
use crate::error::{DopeError, Result};
use crate::partition::{select, Partition};
use crate::solvers::{solve_block, BlockSolverKind};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdmmConfig {
    pub mu0: f64,
    pub mu_fact: f64,
    /// Residual threshold; `None` means `1e−3·sqrt(mean block size)`.
    pub eps: Option<f64>,
    pub max_iters: usize,
    pub solver: BlockSolverKind,
    /// Worker threads for block solves; 0 lets rayon decide.
    pub threads: usize,
}

impl AdmmConfig {
    /// Defaults for a grid of `ndim` dimensions (`μ₀` = 100 in 2D, 500 in 3D).
    pub fn for_ndim(ndim: usize) -> Self {
        Self {
            mu0: if ndim >= 3 { 500.0 } else { 100.0 },
            mu_fact: 1.05,
            eps: None,
            max_iters: 50,
            solver: BlockSolverKind::MaxFlow,
            threads: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu0 > 0.0) || !self.mu0.is_finite() {
            return Err(DopeError::InvalidParameter(format!(
                "mu0 must be > 0, got {}",
                self.mu0
            )));
        }
        if !(self.mu_fact >= 1.0) || !self.mu_fact.is_finite() {
            return Err(DopeError::InvalidParameter(format!(
                "mu_fact must be >= 1, got {}",
                self.mu_fact
            )));
        }
        if let Some(eps) = self.eps {
            if !(eps >= 0.0) {
                return Err(DopeError::InvalidParameter(format!("eps must be >= 0, got {eps}")));
            }
        }
        if self.max_iters == 0 {
            return Err(DopeError::InvalidParameter("max_iters must be >= 1".into()));
        }
        Ok(())
    }
}

/// One row of the iteration trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub iter: usize,
    /// Penalty used during this iteration.
    pub mu: f64,
    /// Energy of the relaxed global labeling.
    pub energy: f64,
    /// `Σ_k ‖ŷ_k − S_k y‖²`.
    pub residual: f64,
    /// `max_k ‖ŷ_k − S_k y‖`.
    pub max_block_residual: f64,
    /// Whether the global update had to be clamped to [0, 1].
    pub clamped: bool,
    pub elapsed: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdmmState {
    pub y: Vec<f64>,
    pub block_labels: Vec<Vec<u8>>,
    pub multipliers: Vec<Vec<f64>>,
    pub mu: f64,
    pub iter: usize,
    pub trace: Vec<TraceRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdmmOutcome {
    /// Binary output: `y ≥ 0.5`, or the best iterate if not converged.
    pub labels: Vec<u8>,
    pub energy: f64,
    pub converged: bool,
    pub state: AdmmState,
}

/// Threshold at 0.5, ties to 1.
pub fn binarize(y: &[f64]) -> Vec<u8> {
    y.iter().map(|&v| u8::from(v >= 0.5)).collect()
}

pub struct Dope<'a> {
    model: &'a EnergyModel,
    partition: &'a Partition,
    problems: Vec<BlockProblem>,
    config: AdmmConfig,
    eps: f64,
    pool: rayon::ThreadPool,
}

impl<'a> Dope<'a> {
    pub fn new(model: &'a EnergyModel, partition: &'a Partition, config: AdmmConfig) -> Result<Self> {
        config.validate()?;
        if matches!(config.solver, BlockSolverKind::MaxFlow) && !model.is_submodular() {
            return Err(DopeError::InvalidParameter(
                "max-flow blocks need non-negative weights; use the icm or exhaustive solver".into(),
            ));
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.threads)
            .build()
            .map_err(|e| DopeError::InvalidParameter(format!("thread pool: {e}")))?;
        let problems = pool.install(|| assemble_block_problems(model, partition))?;
        let eps = config.eps.unwrap_or_else(|| 1e-3 * partition.mean_block_size().sqrt());
        Ok(Self {
            model,
            partition,
            problems,
            config,
            eps,
            pool,
        })
    }

    pub fn problems(&self) -> &[BlockProblem] {
        &self.problems
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn config(&self) -> &AdmmConfig {
        &self.config
    }

    /// `y = ½·1`, `a_k = 0`, `ŷ_k = 0`, `μ = μ₀`.
    pub fn initial_state(&self) -> AdmmState {
        AdmmState {
            y: vec![0.5; self.model.n()],
            block_labels: self.problems.iter().map(|bp| vec![0; bp.len()]).collect(),
            multipliers: self.problems.iter().map(|bp| vec![0.0; bp.len()]).collect(),
            mu: self.config.mu0,
            iter: 0,
            trace: Vec::new(),
        }
    }

    fn check_state(&self, state: &AdmmState) -> Result<()> {
        if state.y.len() != self.model.n() {
            return Err(DopeError::LengthMismatch {
                expected: self.model.n(),
                got: state.y.len(),
            });
        }
        if state.block_labels.len() != self.problems.len() || state.multipliers.len() != self.problems.len() {
            return Err(DopeError::LengthMismatch {
                expected: self.problems.len(),
                got: state.block_labels.len().min(state.multipliers.len()),
            });
        }
        Ok(())
    }

    /// Re-solves every block subproblem in parallel against the current `y`.
    pub fn update_blocks(&self, state: &mut AdmmState) -> Result<()> {
        self.check_state(state)?;
        let lambda = self.model.lambda();
        let (y, mu, solver) = (&state.y, state.mu, self.config.solver);
        let labels = self.pool.install(|| {
            self.problems
                .par_iter()
                .zip(state.block_labels.par_iter())
                .zip(state.multipliers.par_iter())
                .map(|((bp, prev), a)| {
                    let obj = block_objective(bp, y, a, mu, lambda)?;
                    solve_block(solver, &obj.linear, obj.pairwise, obj.scale, Some(prev))
                })
                .enumerate()
                .map(|(k, r)| {
                    r.map_err(|e| DopeError::Block {
                        block: k,
                        source: Box::new(e),
                    })
                })
                .collect::<Result<Vec<_>>>()
        })?;
        state.block_labels = labels;
        Ok(())
    }

    /// Closed-form minimizer of the global subproblem, before clamping.
    pub fn global_update_unclamped(&self, state: &AdmmState) -> Result<Vec<f64>> {
        self.check_state(state)?;
        let mu = state.mu;
        if !(mu > 0.0) {
            return Err(DopeError::InvalidParameter(format!(
                "global update needs mu > 0, got {mu}"
            )));
        }
        let lambda = self.model.lambda();
        let mut acc = vec![0.0; self.model.n()];
        let mut coupling = vec![0.0; self.model.n()];
        for ((bp, labels), a) in self.problems.iter().zip(&state.block_labels).zip(&state.multipliers) {
            for ((&p, &l), &ak) in bp.block.pixels().iter().zip(labels).zip(a) {
                acc[p] += mu * (f64::from(l) + ak);
            }
            if lambda != 0.0 {
                let v: Vec<f64> = labels.iter().map(|&l| f64::from(l)).collect();
                bp.coupling_transpose_add(&v, &mut coupling);
            }
        }
        Ok(acc
            .iter()
            .zip(&coupling)
            .zip(self.partition.counts())
            .map(|((&s, &c), &q)| (s - lambda * c) / (mu * f64::from(q)))
            .collect())
    }

    /// Global update followed by clamping; returns whether clamping changed anything.
    pub fn update_global(&self, state: &mut AdmmState) -> Result<bool> {
        let mut y = self.global_update_unclamped(state)?;
        let mut clamped = false;
        for v in &mut y {
            let c = v.clamp(0.0, 1.0);
            if c != *v {
                clamped = true;
                *v = c;
            }
        }
        state.y = y;
        Ok(clamped)
    }

    /// Per-block `‖ŷ_k − S_k y‖₂`.
    pub fn block_residuals(&self, state: &AdmmState) -> Vec<f64> {
        self.problems
            .iter()
            .zip(&state.block_labels)
            .map(|(bp, labels)| {
                bp.block
                    .pixels()
                    .iter()
                    .zip(labels)
                    .map(|(&p, &l)| (f64::from(l) - state.y[p]).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .collect()
    }

    /// `a_k += ŷ_k − S_k y`, then `μ *= μ_fact`.
    pub fn update_multipliers(&self, state: &mut AdmmState) -> Result<()> {
        self.check_state(state)?;
        for ((bp, labels), a) in self
            .problems
            .iter()
            .zip(&state.block_labels)
            .zip(state.multipliers.iter_mut())
        {
            let sy = select(&bp.block, &state.y)?;
            for ((ak, &l), s) in a.iter_mut().zip(labels).zip(sy) {
                *ak += f64::from(l) - s;
            }
        }
        state.mu *= self.config.mu_fact;
        Ok(())
    }

    /// Full loop until every block residual is within `eps` or `max_iters`.
    /// Without convergence the lowest-energy binarized iterate is returned.
    pub fn run(&self) -> Result<AdmmOutcome> {
        let mut state = self.initial_state();
        let mut best: Option<(f64, Vec<u8>)> = None;
        let mut converged = false;
        while state.iter < self.config.max_iters {
            let start = Instant::now();
            let mu = state.mu;
            self.update_blocks(&mut state)?;
            let clamped = self.update_global(&mut state)?;
            let residuals = self.block_residuals(&state);
            let labels = binarize(&state.y);
            let bin_energy = evaluate_labels(self.model, &labels)?;
            if best.as_ref().is_none_or(|(e, _)| bin_energy < *e) {
                best = Some((bin_energy, labels));
            }
            state.iter += 1;
            let max_block_residual = residuals.iter().copied().fold(0.0, f64::max);
            state.trace.push(TraceRecord {
                iter: state.iter,
                mu,
                energy: evaluate_energy(self.model, &state.y)?,
                residual: residuals.iter().map(|r| r * r).sum(),
                max_block_residual,
                clamped,
                elapsed: start.elapsed(),
            });
            self.update_multipliers(&mut state)?;
            if max_block_residual <= self.eps {
                converged = true;
                break;
            }
        }
        let (labels, energy) = if converged {
            let labels = binarize(&state.y);
            let e = evaluate_labels(self.model, &labels)?;
            (labels, e)
        } else {
            let (e, l) = best.expect("at least one iteration runs");
            (l, e)
        };
        Ok(AdmmOutcome {
            labels,
            energy,
            converged,
            state,
        })
    }
}

/// Convenience wrapper around [`Dope::run`].
pub fn run(model: &EnergyModel, partition: &Partition, config: AdmmConfig) -> Result<AdmmOutcome> {
    Dope::new(model, partition, config)?.run()
}
