//! Reference implementations used to cross-check the fast paths: dense
//! matrix forms of the block quantities and randomized self-check suites.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::admm::{AdmmConfig, AdmmState, Dope};
use crate::blockform::{assemble_block_problems, block_sum_energy, BlockProblem};
use crate::energy::{evaluate_energy, labeling_energy, EnergyModel, SparseWeights};
use crate::error::Result;
use crate::grid::{neighbors, GridShape, Kernel};
use crate::maxflow;
use crate::partition::{make_partition, reconstruct, select, Overlap, Partition};
use crate::solvers::{exhaustive_minimize, BlockSolverKind};

/// `|Ω_k| × n` 0/1 selection matrix of block `k`.
pub fn dense_selection(partition: &Partition, k: usize) -> DMatrix<f64> {
    let block = &partition.blocks()[k];
    let mut s = DMatrix::zeros(block.len(), partition.n());
    for (i, &p) in block.pixels().iter().enumerate() {
        s[(i, p)] = 1.0;
    }
    s
}

pub fn dense_counts(partition: &Partition) -> DMatrix<f64> {
    let q: Vec<f64> = partition.counts().iter().map(|&c| f64::from(c)).collect();
    DMatrix::from_diagonal(&DVector::from_vec(q))
}

pub fn dense_weights(w: &SparseWeights) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(w.n(), w.n());
    for (i, j, v) in w.pairs() {
        m[(i, j)] = v;
        m[(j, i)] = v;
    }
    m
}

pub fn dense_degrees(w: &SparseWeights) -> DMatrix<f64> {
    DMatrix::from_diagonal(&DVector::from_vec(w.degrees()))
}

#[derive(Debug, Clone)]
pub struct DenseBlock {
    pub s: DMatrix<f64>,
    pub u_hat: DVector<f64>,
    pub w_hat: DMatrix<f64>,
    pub d_hat: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

/// Block quantities straight from their matrix definitions.
pub fn dense_block(model: &EnergyModel, partition: &Partition, k: usize) -> DenseBlock {
    let n = partition.n();
    let s = dense_selection(partition, k);
    let q_inv = dense_counts(partition).map(|v| if v == 0.0 { 0.0 } else { 1.0 / v });
    let w = dense_weights(model.weights());
    let d = dense_degrees(model.weights());
    let l = &d - &w;
    let u = DVector::from_column_slice(model.unary());
    let u_hat = &s * &q_inv * u;
    let w_hat = &s * &q_inv * &w * &q_inv * s.transpose();
    let d_hat = DMatrix::from_diagonal(&DVector::from_iterator(
        w_hat.nrows(),
        w_hat.row_iter().map(|r| r.sum()),
    ));
    let c = &s * &q_inv * &l * (DMatrix::identity(n, n) - &q_inv * s.transpose() * &s);
    let r = &s * &q_inv * &d * &q_inv * s.transpose() - &d_hat;
    DenseBlock {
        s,
        u_hat,
        w_hat,
        d_hat,
        c,
        r,
    }
}

/// Largest absolute difference between the sparse and dense block quantities.
pub fn block_problem_discrepancy(bp: &BlockProblem, dense: &DenseBlock) -> f64 {
    let m = bp.len();
    let n = dense.c.ncols();
    let mut worst = 0.0_f64;
    let mut note = |a: f64, b: f64| worst = worst.max((a - b).abs());
    for i in 0..m {
        note(bp.u_hat[i], dense.u_hat[i]);
        note(bp.d_hat[i], dense.d_hat[(i, i)]);
        for j in 0..m {
            let sparse = if i == j { 0.0 } else { bp.w_hat.get(i, j) };
            note(sparse, if i == j { 0.0 } else { dense.w_hat[(i, j)] });
            note(if i == j { bp.r_diag[i] } else { 0.0 }, dense.r[(i, j)]);
        }
        let mut row = vec![0.0; n];
        for (j, v) in bp.c_row(i) {
            row[j] += v;
        }
        for (j, v) in row.into_iter().enumerate() {
            note(v, dense.c[(i, j)]);
        }
    }
    worst
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub name: &'static str,
    pub seed: u64,
    pub cases: usize,
    pub failures: usize,
    /// Worst observed error statistic of the suite.
    pub worst: f64,
    pub tolerance: f64,
    pub first_failure: Option<String>,
}

impl SuiteReport {
    fn new(name: &'static str, seed: u64, tolerance: f64) -> Self {
        Self {
            name,
            seed,
            cases: 0,
            failures: 0,
            worst: 0.0,
            tolerance,
            first_failure: None,
        }
    }

    fn record(&mut self, err: f64, ok: bool, describe: impl FnOnce() -> String) {
        self.cases += 1;
        if err.is_nan() {
            self.worst = f64::NAN;
        } else if !self.worst.is_nan() {
            self.worst = self.worst.max(err);
        }
        if !ok {
            self.failures += 1;
            if self.first_failure.is_none() {
                self.first_failure = Some(describe());
            }
        }
    }

    pub fn passed(&self) -> bool {
        self.failures == 0 && self.cases > 0
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {}: {}/{} ok, worst {:.3e} (tol {:.1e}), seed {}",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.cases - self.failures,
            self.cases,
            self.worst,
            self.tolerance,
            self.seed
        )?;
        if let Some(msg) = &self.first_failure {
            write!(f, "; first failure: {msg}")?;
        }
        Ok(())
    }
}

/// Random non-negative weights on the kernel neighborhood of `shape`.
pub fn random_grid_weights(rng: &mut impl Rng, shape: &GridShape, kernel: Kernel) -> Result<SparseWeights> {
    let mut pairs = Vec::new();
    for i in 0..shape.n() {
        for j in neighbors(shape, i, kernel)? {
            if j > i {
                pairs.push((i, j, rng.random_range(0.0..1.0)));
            }
        }
    }
    SparseWeights::from_pairs(shape.n(), pairs, false)
}

pub fn random_shape(rng: &mut impl Rng, max_side: usize) -> GridShape {
    let dims = [rng.random_range(1..=max_side), rng.random_range(1..=max_side)];
    GridShape::new(&dims).expect("positive dims")
}

/// Random submodular model: unaries in [−5, 5], λ in [0, 2].
pub fn random_model(rng: &mut impl Rng, shape: &GridShape, kernel: Kernel) -> Result<EnergyModel> {
    let w = random_grid_weights(rng, shape, kernel)?;
    let unary = (0..shape.n()).map(|_| rng.random_range(-5.0..5.0)).collect();
    EnergyModel::new(unary, w, rng.random_range(0.0..2.0))
}

/// Regular split with random block counts and overlap, sometimes with an
/// extra random box on top, so pixels can be covered up to many times.
pub fn random_partition(rng: &mut impl Rng, shape: &GridShape) -> Result<Partition> {
    let k: Vec<usize> = shape.dims().iter().map(|&d| rng.random_range(1..=d.min(3))).collect();
    let overlap = [Overlap::Size00, Overlap::Size10, Overlap::Size25][rng.random_range(0..3)];
    let base = make_partition(shape, &k, overlap)?;
    if rng.random_bool(0.5) {
        return Ok(base);
    }
    let mut extents: Vec<_> = base.blocks().iter().map(|b| b.extent().to_vec()).collect();
    for _ in 0..rng.random_range(1..=2) {
        extents.push(
            shape
                .dims()
                .iter()
                .map(|&d| {
                    let a = rng.random_range(0..d);
                    let b = rng.random_range(a + 1..=d);
                    a..b
                })
                .collect(),
        );
    }
    Partition::from_extents(shape, extents)
}

/// Distinct labelings of equal energy may evaluate a few ulps apart.
pub const FLOW_TOL: f64 = 1e-12;

/// Max-flow energy against the exhaustive optimum (`max_side ≤ 4` keeps it ≤ 16 variables).
pub fn maxflow_suite(cases: usize, max_side: usize, seed: u64) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rep = SuiteReport::new("maxflow optimality", seed, FLOW_TOL);
    let kernel = Kernel::new(3)?;
    for case in 0..cases {
        let shape = random_shape(&mut rng, max_side);
        let m = random_model(&mut rng, &shape, kernel)?;
        let (labels, _) = maxflow::minimize(m.unary(), m.weights(), m.lambda())?;
        let e_flow = labeling_energy(m.unary(), m.weights(), m.lambda(), &labels);
        let (_, e_best) = exhaustive_minimize(m.unary(), m.weights(), m.lambda())?;
        let err = (e_flow - e_best) / (1.0 + e_best.abs());
        rep.record(err.abs(), err <= FLOW_TOL, || {
            format!("case {case} {:?}: cut {e_flow} vs optimum {e_best}", shape.dims())
        });
    }
    Ok(rep)
}

/// Relative gap between the block-sum objective and the global energy at binary `y`.
pub fn block_equivalence_error(model: &EnergyModel, problems: &[BlockProblem], y: &[f64]) -> Result<f64> {
    let global = evaluate_energy(model, y)?;
    let sum = block_sum_energy(problems, model.lambda(), y);
    let diff = (sum - global).abs();
    Ok(if diff == 0.0 {
        0.0
    } else {
        diff / global.abs().max(f64::MIN_POSITIVE)
    })
}

pub const EQUIVALENCE_TOL: f64 = 1e-9;

pub fn equivalence_suite(cases: usize, max_side: usize, seed: u64) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rep = SuiteReport::new("block-sum equivalence", seed, EQUIVALENCE_TOL);
    for case in 0..cases {
        let shape = random_shape(&mut rng, max_side);
        let kernel = Kernel::new(if rng.random_bool(0.5) { 3 } else { 5 })?;
        let m = random_model(&mut rng, &shape, kernel)?;
        let p = random_partition(&mut rng, &shape)?;
        let problems = assemble_block_problems(&m, &p)?;
        let y: Vec<f64> = (0..shape.n())
            .map(|_| f64::from(u8::from(rng.random::<bool>())))
            .collect();
        let err = block_equivalence_error(&m, &problems, &y)?;
        rep.record(err, err <= EQUIVALENCE_TOL, || {
            format!(
                "case {case} {:?}, {} blocks: rel err {err:e}",
                shape.dims(),
                p.blocks().len()
            )
        });
    }
    Ok(rep)
}

/// `reconstruct(select(y)) == y`, bit for bit.
pub fn reconstruction_suite(cases: usize, max_side: usize, seed: u64) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rep = SuiteReport::new("reconstruction", seed, 0.0);
    for case in 0..cases {
        let shape = random_shape(&mut rng, max_side);
        let p = random_partition(&mut rng, &shape)?;
        let y: Vec<f64> = (0..shape.n())
            .map(|_| f64::from(u8::from(rng.random::<bool>())))
            .collect();
        let parts = p.blocks().iter().map(|b| select(b, &y)).collect::<Result<Vec<_>>>()?;
        let back = reconstruct(&p, &parts)?;
        let err = back.iter().zip(&y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        rep.record(err, back == y, || {
            format!("case {case} {:?}: max err {err}", shape.dims())
        });
    }
    Ok(rep)
}

/// Objective minimized by the global update:
/// `λ Σ_k ŷ_kᵀ(C_k + R_k S_k) y + μ/2 Σ_k ‖S_k y − (ŷ_k + a_k)‖²`.
pub fn global_objective(problems: &[BlockProblem], state: &AdmmState, lambda: f64, y: &[f64]) -> f64 {
    let mut total = 0.0;
    for ((bp, labels), a) in problems.iter().zip(&state.block_labels).zip(&state.multipliers) {
        let coupling = bp.coupling(y);
        for (i, &p) in bp.block.pixels().iter().enumerate() {
            let l = f64::from(labels[i]);
            total += lambda * l * coupling[i] + 0.5 * state.mu * (y[p] - l - a[i]).powi(2);
        }
    }
    total
}

/// Per-coordinate magnitude scale of the global objective's gradient at `y`.
pub fn gradient_scale(
    problems: &[BlockProblem],
    partition: &Partition,
    state: &AdmmState,
    lambda: f64,
    y: &[f64],
) -> f64 {
    let n = y.len();
    let mut coupled = vec![0.0; n];
    let mut target = vec![0.0; n];
    for ((bp, labels), a) in problems.iter().zip(&state.block_labels).zip(&state.multipliers) {
        let v: Vec<f64> = labels.iter().map(|&l| f64::from(l)).collect();
        bp.coupling_transpose_add(&v, &mut coupled);
        for (i, &p) in bp.block.pixels().iter().enumerate() {
            target[p] += state.mu * (v[i] + a[i]);
        }
    }
    (0..n)
        .map(|p| {
            (lambda * coupled[p]).abs() + (state.mu * f64::from(partition.counts()[p]) * y[p]).abs() + target[p].abs()
        })
        .fold(0.0, f64::max)
}

/// Central finite-difference gradient of [`global_objective`] at `y`.
pub fn fd_gradient(problems: &[BlockProblem], state: &AdmmState, lambda: f64, y: &[f64], coords: &[usize]) -> Vec<f64> {
    let mut probe = y.to_vec();
    coords
        .iter()
        .map(|&i| {
            let h = 1e-4 * y[i].abs().max(1.0);
            probe[i] = y[i] + h;
            let up = global_objective(problems, state, lambda, &probe);
            probe[i] = y[i] - h;
            let down = global_objective(problems, state, lambda, &probe);
            probe[i] = y[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

pub const GRADIENT_TOL: f64 = 1e-6;

/// Random states: block labels, multipliers and μ drawn at random, then the
/// unclamped global update is checked for stationarity.
pub fn gradient_suite(cases: usize, max_side: usize, seed: u64) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rep = SuiteReport::new("global update stationarity", seed, GRADIENT_TOL);
    let kernel = Kernel::new(3)?;
    for case in 0..cases {
        let shape = random_shape(&mut rng, max_side);
        let m = random_model(&mut rng, &shape, kernel)?;
        let p = random_partition(&mut rng, &shape)?;
        let dope = Dope::new(
            &m,
            &p,
            AdmmConfig {
                solver: BlockSolverKind::Exhaustive,
                threads: 1,
                ..AdmmConfig::for_ndim(2)
            },
        )?;
        let mut state = dope.initial_state();
        state.mu = 10f64.powf(rng.random_range(-1.0..3.0));
        for (labels, a) in state.block_labels.iter_mut().zip(state.multipliers.iter_mut()) {
            labels.iter_mut().for_each(|l| *l = u8::from(rng.random::<bool>()));
            a.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        }
        let y = dope.global_update_unclamped(&state)?;
        let coords: Vec<usize> = (0..y.len()).collect();
        let g = fd_gradient(dope.problems(), &state, m.lambda(), &y, &coords);
        let gmax = g.iter().map(|v| v.abs()).fold(0.0, f64::max);
        let bound = GRADIENT_TOL * (1.0 + gradient_scale(dope.problems(), &p, &state, m.lambda(), &y));
        rep.record(gmax / bound * GRADIENT_TOL, gmax <= bound, || {
            format!("case {case} {:?}: |grad| {gmax:e} > {bound:e}", shape.dims())
        });
    }
    Ok(rep)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OracleLimits {
    pub cases: usize,
    /// Largest grid side for the exhaustive max-flow check.
    pub flow_side: usize,
    pub grid_side: usize,
}

impl Default for OracleLimits {
    fn default() -> Self {
        Self {
            cases: 200,
            flow_side: 4,
            grid_side: 8,
        }
    }
}

/// All four suites, each seeded from `seed`.
pub fn run_all(limits: OracleLimits, seed: u64) -> Result<Vec<SuiteReport>> {
    Ok(vec![
        maxflow_suite(limits.cases, limits.flow_side, seed)?,
        equivalence_suite(limits.cases, limits.grid_side, seed.wrapping_add(1))?,
        reconstruction_suite(limits.cases, limits.grid_side, seed.wrapping_add(2))?,
        gradient_suite(limits.cases, limits.grid_side, seed.wrapping_add(3))?,
    ])
}
