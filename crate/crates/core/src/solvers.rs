//! Block solvers behind one interface: max-flow, exhaustive search and ICM.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::energy::{labeling_energy, SparseWeights};
use crate::error::{DopeError, Result};
use crate::maxflow;

/// Largest problem the exhaustive solver accepts.
pub const EXHAUSTIVE_LIMIT: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IcmOptions {
    pub max_sweeps: usize,
    pub restarts: usize,
}

impl Default for IcmOptions {
    fn default() -> Self {
        Self {
            max_sweeps: 100,
            restarts: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockSolverKind {
    MaxFlow,
    Exhaustive,
    Icm(IcmOptions),
}

impl BlockSolverKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::MaxFlow => "maxflow",
            Self::Exhaustive => "exhaustive",
            Self::Icm(_) => "icm",
        }
    }
}

impl std::str::FromStr for BlockSolverKind {
    type Err = DopeError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "maxflow" => Ok(Self::MaxFlow),
            "exhaustive" => Ok(Self::Exhaustive),
            "icm" => Ok(Self::Icm(IcmOptions::default())),
            other => Err(DopeError::InvalidParameter(format!("unknown solver {other:?}"))),
        }
    }
}

/// Minimizes `linearᵀŷ + λ ŷᵀLŷ` over binary `ŷ` with the chosen solver.
/// `init` warm-starts ICM and defaults to all zeros.
pub fn solve_block(
    kind: BlockSolverKind,
    linear: &[f64],
    pairwise: &SparseWeights,
    lambda: f64,
    init: Option<&[u8]>,
) -> Result<Vec<u8>> {
    if pairwise.n() != linear.len() {
        return Err(DopeError::LengthMismatch {
            expected: linear.len(),
            got: pairwise.n(),
        });
    }
    match kind {
        BlockSolverKind::MaxFlow => Ok(maxflow::minimize(linear, pairwise, lambda)?.0),
        BlockSolverKind::Exhaustive => Ok(exhaustive_minimize(linear, pairwise, lambda)?.0),
        BlockSolverKind::Icm(opts) => {
            let start = match init {
                Some(l) if l.len() != linear.len() => {
                    return Err(DopeError::LengthMismatch {
                        expected: linear.len(),
                        got: l.len(),
                    })
                }
                Some(l) => l.to_vec(),
                None => vec![0; linear.len()],
            };
            Ok(icm(start, linear, pairwise, lambda, opts))
        }
    }
}

/// Exact minimum by enumerating all `2^m` labelings (variable `i` is bit
/// `i`); ties go to the smallest labeling read as an integer.
pub fn exhaustive_minimize(linear: &[f64], pairwise: &SparseWeights, lambda: f64) -> Result<(Vec<u8>, f64)> {
    let m = linear.len();
    if m > EXHAUSTIVE_LIMIT {
        return Err(DopeError::TooManyVariables {
            m,
            max: EXHAUSTIVE_LIMIT,
        });
    }
    if pairwise.n() != m {
        return Err(DopeError::LengthMismatch {
            expected: m,
            got: pairwise.n(),
        });
    }
    let decode = |x: u64| -> Vec<u8> { (0..m).map(|i| ((x >> i) & 1) as u8).collect() };
    let exact = |x: u64| labeling_energy(linear, pairwise, lambda, &decode(x));
    // Gray-code walk with incremental deltas; near-ties are settled exactly.
    let mut labels = vec![0u8; m];
    let mut running = 0.0;
    let mut best = (0u64, 0.0f64);
    let mut best_running = 0.0;
    let scale: f64 =
        linear.iter().map(|v| v.abs()).sum::<f64>() + lambda * pairwise.pairs().map(|(_, _, w)| w.abs()).sum::<f64>();
    let tol = 1e-9 * (1.0 + scale);
    for step in 1u64..(1u64 << m) {
        let bit = step.trailing_zeros() as usize;
        running += flip_delta(&labels, bit, linear, pairwise, lambda);
        labels[bit] ^= 1;
        let code = step ^ (step >> 1);
        if step % 4096 == 0 {
            running = exact(code);
        }
        if running < best_running - tol {
            best = (code, exact(code));
            best_running = running;
        } else if running <= best_running + tol {
            let e = exact(code);
            if e < best.1 || (e == best.1 && code < best.0) {
                best = (code, e);
                best_running = running;
            }
        }
    }
    Ok((decode(best.0), best.1))
}

/// Energy change from flipping variable `i`.
fn flip_delta(labels: &[u8], i: usize, linear: &[f64], pairwise: &SparseWeights, lambda: f64) -> f64 {
    let yi = labels[i];
    let sign = if yi == 0 { 1.0 } else { -1.0 };
    let pair: f64 = pairwise.row(i).map(|(j, w)| if labels[j] == yi { w } else { -w }).sum();
    sign * linear[i] + lambda * pair
}

/// One pass of greedy single-variable flips in ascending index order.
pub fn icm_sweep(mut labels: Vec<u8>, linear: &[f64], pairwise: &SparseWeights, lambda: f64) -> (Vec<u8>, bool) {
    let mut improved = false;
    for i in 0..labels.len() {
        if flip_delta(&labels, i, linear, pairwise, lambda) < 0.0 {
            labels[i] ^= 1;
            improved = true;
        }
    }
    (labels, improved)
}

fn icm_descent(
    mut labels: Vec<u8>,
    linear: &[f64],
    pairwise: &SparseWeights,
    lambda: f64,
    max_sweeps: usize,
) -> Vec<u8> {
    for _ in 0..max_sweeps {
        let (next, improved) = icm_sweep(labels, linear, pairwise, lambda);
        labels = next;
        if !improved {
            break;
        }
    }
    labels
}

/// ICM from `init`; extra restarts start from seeded random labelings and
/// the lowest-energy result wins (earlier on ties).
pub fn icm(init: Vec<u8>, linear: &[f64], pairwise: &SparseWeights, lambda: f64, opts: IcmOptions) -> Vec<u8> {
    let mut best = icm_descent(init, linear, pairwise, lambda, opts.max_sweeps);
    let mut best_e = labeling_energy(linear, pairwise, lambda, &best);
    for r in 1..opts.restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(r as u64);
        let start = (0..linear.len()).map(|_| u8::from(rng.random::<bool>())).collect();
        let cand = icm_descent(start, linear, pairwise, lambda, opts.max_sweeps);
        let e = labeling_energy(linear, pairwise, lambda, &cand);
        if e < best_e {
            best = cand;
            best_e = e;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::quadratic_energy;

    fn random_instance(m: usize, seed: u64, allow_negative: bool) -> (Vec<f64>, SparseWeights) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lin = (0..m).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mut pairs = Vec::new();
        for i in 0..m {
            for j in i + 1..m {
                if rng.random::<f64>() < 0.5 {
                    let w: f64 = rng.random();
                    pairs.push((
                        i,
                        j,
                        if allow_negative && rng.random::<f64>() < 0.3 {
                            -w
                        } else {
                            w
                        },
                    ));
                }
            }
        }
        (lin, SparseWeights::from_pairs(m, pairs, allow_negative).unwrap())
    }

    #[test]
    fn every_kind_solves_single_variable() {
        let w = SparseWeights::empty(1);
        for kind in [
            BlockSolverKind::MaxFlow,
            BlockSolverKind::Exhaustive,
            BlockSolverKind::Icm(IcmOptions::default()),
        ] {
            assert_eq!(solve_block(kind, &[-2.0], &w, 1.0, None).unwrap(), vec![1]);
        }
    }

    #[test]
    fn exhaustive_edge_cases() {
        let (l, e) = exhaustive_minimize(&[], &SparseWeights::empty(0), 1.0).unwrap();
        assert!(l.is_empty());
        assert_eq!(e, 0.0);
        let (l, e) = exhaustive_minimize(&[1.0, 1.0], &SparseWeights::empty(2), 1.0).unwrap();
        assert_eq!((l, e), (vec![0, 0], 0.0));
        assert!(matches!(
            exhaustive_minimize(&[0.0; 25], &SparseWeights::empty(25), 1.0),
            Err(DopeError::TooManyVariables { .. })
        ));
    }

    #[test]
    fn exhaustive_agrees_with_full_enumeration() {
        for seed in 0..10 {
            let (lin, w) = random_instance(3 + (seed as usize % 6), seed, seed % 2 == 1);
            let m = lin.len();
            let mut best = (f64::INFINITY, 0u64);
            for x in 0..(1u64 << m) {
                let y: Vec<f64> = (0..m).map(|i| ((x >> i) & 1) as f64).collect();
                let e = quadratic_energy(&lin, &w, 0.8, &y);
                if e < best.0 {
                    best = (e, x);
                }
            }
            let (labels, e) = exhaustive_minimize(&lin, &w, 0.8).unwrap();
            assert_eq!(e, best.0);
            let code: u64 = labels.iter().enumerate().map(|(i, &b)| u64::from(b) << i).sum();
            assert_eq!(code, best.1);
        }
    }

    #[test]
    fn exhaustive_ties_prefer_smallest_code() {
        let w = SparseWeights::from_pairs(2, [(0, 1, -1.0)], true).unwrap();
        let (labels, e) = exhaustive_minimize(&[0.0, 0.0], &w, 1.0).unwrap();
        assert_eq!(labels, vec![1, 0]);
        assert_eq!(e, -1.0);
    }

    #[test]
    fn icm_reaches_disagreement() {
        let w = SparseWeights::from_pairs(2, [(0, 1, -1.0)], true).unwrap();
        let kind = BlockSolverKind::Icm(IcmOptions::default());
        let labels = solve_block(kind, &[0.0, 0.0], &w, 1.0, Some(&[0, 0])).unwrap();
        assert_eq!(labeling_energy(&[0.0, 0.0], &w, 1.0, &labels), -1.0);
        assert!(matches!(
            solve_block(BlockSolverKind::MaxFlow, &[0.0, 0.0], &w, 1.0, None),
            Err(DopeError::NonSubmodular { .. })
        ));
    }

    #[test]
    fn icm_fixed_point_and_flip() {
        let (lin, w) = random_instance(8, 3, true);
        let (opt, _) = exhaustive_minimize(&lin, &w, 1.0).unwrap();
        let (same, improved) = icm_sweep(opt.clone(), &lin, &w, 1.0);
        assert!(!improved);
        assert_eq!(same, opt);
        let kind = BlockSolverKind::Icm(IcmOptions::default());
        assert_eq!(solve_block(kind, &lin, &w, 1.0, Some(&opt)).unwrap(), opt);
        let (l, improved) = icm_sweep(vec![1], &[5.0], &SparseWeights::empty(1), 1.0);
        assert_eq!(l, vec![0]);
        assert!(improved);
    }

    #[test]
    fn icm_sweep_never_increases_energy() {
        for seed in 0..20 {
            let (lin, w) = random_instance(9, 100 + seed, true);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut labels: Vec<u8> = (0..9).map(|_| u8::from(rng.random::<bool>())).collect();
            let mut e = labeling_energy(&lin, &w, 1.0, &labels);
            loop {
                let (next, improved) = icm_sweep(labels, &lin, &w, 1.0);
                let ne = labeling_energy(&lin, &w, 1.0, &next);
                assert!(ne <= e + 1e-12);
                labels = next;
                e = ne;
                if !improved {
                    break;
                }
            }
        }
    }

    #[test]
    fn restarts_keep_the_warm_start_when_better() {
        let (lin, w) = random_instance(10, 42, true);
        let one = icm(vec![0; 10], &lin, &w, 1.0, IcmOptions::default());
        let many = icm(
            vec![0; 10],
            &lin,
            &w,
            1.0,
            IcmOptions {
                max_sweeps: 100,
                restarts: 5,
            },
        );
        assert!(labeling_energy(&lin, &w, 1.0, &many) <= labeling_energy(&lin, &w, 1.0, &one));
    }
}
