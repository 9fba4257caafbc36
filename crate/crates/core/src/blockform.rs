//! Per-block reformulation of the global energy.
//!
//! For block `k` with selection `S_k` and block-count diagonal `Q`:
//!
//! ```text
//! û_k = S_k Q⁻¹ u
//! Ŵ_k = S_k Q⁻¹ W Q⁻¹ S_kᵀ,   D̂_k = diag(Ŵ_k 1),   L̂_k = D̂_k − Ŵ_k
//! C_k = S_k Q⁻¹ L (I − Q⁻¹ S_kᵀ S_k)
//! R_k = S_k Q⁻¹ D Q⁻¹ S_kᵀ − D̂_k          (diagonal)
//! ```
//!
//! With `ŷ_k = S_k y` for every block,
//! `Σ_k (û_k + λ(C_k + R_k S_k) y)ᵀ ŷ_k + λ Σ_k ŷ_kᵀ L̂_k ŷ_k = uᵀy + λ yᵀLy`.

use rayon::prelude::*;

use crate::energy::{EnergyModel, SparseWeights};
use crate::error::{DopeError, Result};
use crate::partition::{Block, Partition};

#[derive(Debug, Clone, PartialEq)]
pub struct BlockProblem {
    pub block: Block,
    pub u_hat: Vec<f64>,
    /// Block-local adjusted weights `Ŵ_k`.
    pub w_hat: SparseWeights,
    pub d_hat: Vec<f64>,
    /// Diagonal of `R_k`.
    pub r_diag: Vec<f64>,
    /// Rows of `C_k` in CSR form against global pixel indices.
    pub c_offsets: Vec<usize>,
    pub c_cols: Vec<usize>,
    pub c_vals: Vec<f64>,
}

impl BlockProblem {
    pub fn len(&self) -> usize {
        self.u_hat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u_hat.is_empty()
    }

    /// Row `i` of `C_k` as `(global column, coefficient)`.
    pub fn c_row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.c_offsets[i]..self.c_offsets[i + 1];
        self.c_cols[span.clone()]
            .iter()
            .copied()
            .zip(self.c_vals[span].iter().copied())
    }

    /// `(C_k + R_k S_k) y`.
    pub fn coupling(&self, y: &[f64]) -> Vec<f64> {
        self.block
            .pixels()
            .iter()
            .enumerate()
            .map(|(i, &p)| self.c_row(i).map(|(j, c)| c * y[j]).sum::<f64>() + self.r_diag[i] * y[p])
            .collect()
    }

    /// `acc += (C_k + R_k S_k)ᵀ v`.
    pub fn coupling_transpose_add(&self, v: &[f64], acc: &mut [f64]) {
        for (i, &p) in self.block.pixels().iter().enumerate() {
            let vi = v[i];
            if vi == 0.0 {
                continue;
            }
            for (j, c) in self.c_row(i) {
                acc[j] += c * vi;
            }
            acc[p] += self.r_diag[i] * vi;
        }
    }
}

fn assemble_one(model: &EnergyModel, counts: &[f64], degrees: &[f64], block: &Block) -> Result<BlockProblem> {
    let w = model.weights();
    let u = model.unary();
    let m = block.len();
    let mut u_hat = Vec::with_capacity(m);
    let mut pairs = Vec::new();
    let mut c_offsets = Vec::with_capacity(m + 1);
    let mut c_cols = Vec::new();
    let mut c_vals = Vec::new();
    c_offsets.push(0);
    for (i, &p) in block.pixels().iter().enumerate() {
        let qp = counts[p];
        u_hat.push(u[p] / qp);
        // C_k[i, j] = L_pj · (1 − [j ∈ Ω_k] / q_j) / q_p
        let diag = degrees[p] * (1.0 - 1.0 / qp) / qp;
        let mut row: Vec<(usize, f64)> = Vec::new();
        let mut diag_pushed = false;
        for (j, wpj) in w.row(p) {
            if !diag_pushed && j > p {
                if diag != 0.0 {
                    row.push((p, diag));
                }
                diag_pushed = true;
            }
            let local = block.local_index(j);
            let keep = match local {
                Some(lj) => {
                    if lj > i {
                        pairs.push((i, lj, wpj / (qp * counts[j])));
                    }
                    1.0 - 1.0 / counts[j]
                }
                None => 1.0,
            };
            let c = -wpj * keep / qp;
            if c != 0.0 {
                row.push((j, c));
            }
        }
        if !diag_pushed && diag != 0.0 {
            row.push((p, diag));
        }
        for (j, c) in row {
            c_cols.push(j);
            c_vals.push(c);
        }
        c_offsets.push(c_cols.len());
    }
    let w_hat = SparseWeights::from_pairs(m, pairs, !model.is_submodular())?;
    let d_hat = w_hat.degrees();
    let r_diag = block
        .pixels()
        .iter()
        .zip(&d_hat)
        .map(|(&p, &dh)| degrees[p] / (counts[p] * counts[p]) - dh)
        .collect();
    Ok(BlockProblem {
        block: block.clone(),
        u_hat,
        w_hat,
        d_hat,
        r_diag,
        c_offsets,
        c_cols,
        c_vals,
    })
}

/// Builds every block's problem in parallel on the current rayon pool.
pub fn assemble_block_problems(model: &EnergyModel, partition: &Partition) -> Result<Vec<BlockProblem>> {
    if model.n() != partition.n() {
        return Err(DopeError::LengthMismatch {
            expected: partition.n(),
            got: model.n(),
        });
    }
    let counts: Vec<f64> = partition.counts().iter().map(|&q| f64::from(q)).collect();
    let degrees = model.degrees();
    partition
        .blocks()
        .par_iter()
        .map(|b| {
            assemble_one(model, &counts, &degrees, b).map_err(|e| DopeError::Block {
                block: b.id(),
                source: Box::new(e),
            })
        })
        .collect()
}

/// Linear coefficients of one block subproblem; the pairwise part is
/// `scale · ŷᵀ L̂_k ŷ` with `L̂_k` the Laplacian of `pairwise`.
#[derive(Debug, Clone)]
pub struct BlockObjective<'a> {
    pub linear: Vec<f64>,
    pub pairwise: &'a SparseWeights,
    pub scale: f64,
}

/// `û_k + λ(C_k + R_k S_k) y + μ(a_k − S_k y + ½)`, valid for binary `ŷ`
/// only since `‖ŷ‖² = 1ᵀŷ` is folded into the linear term.
pub fn block_objective<'a>(
    bp: &'a BlockProblem,
    y: &[f64],
    multipliers: &[f64],
    mu: f64,
    lambda: f64,
) -> Result<BlockObjective<'a>> {
    let n: usize = bp.block.pixels().last().map_or(0, |&p| p + 1);
    if y.len() < n {
        return Err(DopeError::LengthMismatch {
            expected: n,
            got: y.len(),
        });
    }
    if multipliers.len() != bp.len() {
        return Err(DopeError::LengthMismatch {
            expected: bp.len(),
            got: multipliers.len(),
        });
    }
    if !(mu >= 0.0) || !(lambda >= 0.0) {
        return Err(DopeError::InvalidParameter(format!(
            "mu and lambda must be >= 0, got {mu}, {lambda}"
        )));
    }
    let coupling = if lambda == 0.0 {
        vec![0.0; bp.len()]
    } else {
        bp.coupling(y)
    };
    let linear = bp
        .block
        .pixels()
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let mut v = bp.u_hat[i] + lambda * coupling[i];
            if mu != 0.0 {
                v += mu * (multipliers[i] - y[p] + 0.5);
            }
            v
        })
        .collect();
    Ok(BlockObjective {
        linear,
        pairwise: &bp.w_hat,
        scale: lambda,
    })
}

/// Block-sum objective evaluated at `ŷ_k = S_k y`; equals the global energy.
pub fn block_sum_energy(problems: &[BlockProblem], lambda: f64, y: &[f64]) -> f64 {
    problems
        .iter()
        .map(|bp| {
            let local: Vec<f64> = bp.block.pixels().iter().map(|&p| y[p]).collect();
            let coupling = bp.coupling(y);
            let lin: f64 = local
                .iter()
                .zip(bp.u_hat.iter().zip(&coupling))
                .map(|(v, (u, c))| (u + lambda * c) * v)
                .sum();
            lin + lambda * bp.w_hat.laplacian_form(&local)
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::{build_potts_weights, evaluate_energy};
    use crate::grid::{GridImage, GridShape, Kernel};
    use crate::partition::{make_partition, Overlap};
    use crate::solvers::exhaustive_minimize;

    fn model(dims: &[usize], lambda: f64) -> EnergyModel {
        let shape = GridShape::new(dims).unwrap();
        let n = shape.n();
        let data: Vec<f64> = (0..n).map(|i| ((i * 7919) % 101) as f64 / 100.0).collect();
        let unary = (0..n).map(|i| ((i * 31) % 17) as f64 / 4.0 - 2.0).collect();
        let img = GridImage::new(shape, 1, data).unwrap();
        let w = build_potts_weights(&img, Kernel::new(3).unwrap(), 0.3, true).unwrap();
        EnergyModel::new(unary, w, lambda).unwrap()
    }

    #[test]
    fn single_block_degenerates_to_global() {
        let m = model(&[4, 5], 0.7);
        let p = make_partition(&GridShape::new(&[4, 5]).unwrap(), &[1, 1], Overlap::Size25).unwrap();
        let bp = &assemble_block_problems(&m, &p).unwrap()[0];
        assert_eq!(bp.u_hat, m.unary());
        assert_eq!(&bp.w_hat, m.weights());
        assert!(bp.c_vals.is_empty());
        assert!(bp.r_diag.iter().all(|&r| r.abs() < 1e-15));
    }

    #[test]
    fn disjoint_blocks_carry_cross_mass() {
        let dims = [4, 4];
        let m = model(&dims, 1.0);
        let p = make_partition(&GridShape::new(&dims).unwrap(), &[1, 2], Overlap::Size00).unwrap();
        let problems = assemble_block_problems(&m, &p).unwrap();
        let w = m.weights();
        for bp in &problems {
            for (i, &pi) in bp.block.pixels().iter().enumerate() {
                let inside: f64 = w
                    .row(pi)
                    .filter(|&(j, _)| bp.block.local_index(j).is_some())
                    .map(|(_, v)| v)
                    .sum();
                assert!((bp.r_diag[i] - (w.degree(pi) - inside)).abs() < 1e-12);
                let row: Vec<(usize, f64)> = bp.c_row(i).collect();
                let expect: Vec<(usize, f64)> = w
                    .row(pi)
                    .filter(|&(j, _)| bp.block.local_index(j).is_none())
                    .map(|(j, v)| (j, -v))
                    .collect();
                assert_eq!(row, expect);
                for (j, v) in w.row(pi) {
                    if let Some(lj) = bp.block.local_index(j) {
                        assert_eq!(bp.w_hat.get(i, lj), v);
                    }
                }
            }
        }
    }

    #[test]
    fn constants_are_annihilated() {
        let m = model(&[6, 6], 1.0);
        let p = make_partition(&GridShape::new(&[6, 6]).unwrap(), &[2, 2], Overlap::Size25).unwrap();
        for bp in assemble_block_problems(&m, &p).unwrap() {
            assert!(bp
                .w_hat
                .laplacian_apply(&vec![1.0; bp.len()])
                .iter()
                .all(|v| v.abs() < 1e-14));
        }
    }

    #[test]
    fn r_diag_goes_negative_beside_less_covered_neighbors() {
        // pixel 1 lies in both blocks (q = 2), its only neighbor 0 in one (q = 1):
        // r = w/4 − w/2 for pixel 1 inside the first block
        let w = SparseWeights::from_pairs(3, [(0, 1, 1.0)], false).unwrap();
        let m = EnergyModel::new(vec![0.0; 3], w, 1.0).unwrap();
        let shape = GridShape::new(&[1, 3]).unwrap();
        let p = Partition::from_extents(&shape, vec![vec![0..1, 0..2], vec![0..1, 1..3]]).unwrap();
        let problems = assemble_block_problems(&m, &p).unwrap();
        assert_eq!(problems[0].r_diag, vec![0.5, -0.25]);
    }

    #[test]
    fn objective_without_penalties_is_unary() {
        let m = model(&[4, 4], 1.0);
        let p = make_partition(&GridShape::new(&[4, 4]).unwrap(), &[2, 2], Overlap::Size25).unwrap();
        let bps = assemble_block_problems(&m, &p).unwrap();
        let y = vec![0.3; 16];
        let obj = block_objective(&bps[1], &y, &vec![0.0; bps[1].len()], 0.0, 0.0).unwrap();
        assert_eq!(obj.linear, bps[1].u_hat);
        assert!(block_objective(&bps[1], &y, &[0.0], 0.0, 0.0).is_err());
        assert!(block_objective(&bps[1], &y, &vec![0.0; bps[1].len()], -1.0, 0.0).is_err());
    }

    #[test]
    fn identity_block_problem_has_global_minimum() {
        let m = model(&[3, 3], 0.8);
        let p = make_partition(&GridShape::new(&[3, 3]).unwrap(), &[1, 1], Overlap::Size00).unwrap();
        let bps = assemble_block_problems(&m, &p).unwrap();
        let obj = block_objective(&bps[0], &[0.5; 9], &[0.0; 9], 0.0, m.lambda()).unwrap();
        let (lb, eb) = exhaustive_minimize(&obj.linear, obj.pairwise, obj.scale).unwrap();
        let (lg, eg) = exhaustive_minimize(m.unary(), m.weights(), m.lambda()).unwrap();
        assert_eq!(lb, lg);
        assert!((eb - eg).abs() < 1e-12);
    }

    #[test]
    fn block_sum_matches_global_on_binary() {
        let dims = [5, 6];
        let m = model(&dims, 1.3);
        let p = make_partition(&GridShape::new(&dims).unwrap(), &[2, 3], Overlap::Size25).unwrap();
        let bps = assemble_block_problems(&m, &p).unwrap();
        let y: Vec<f64> = (0..30).map(|i| f64::from(u8::from(i % 3 == 0 || i % 7 == 1))).collect();
        let e = evaluate_energy(&m, &y).unwrap();
        assert!((block_sum_energy(&bps, m.lambda(), &y) - e).abs() < 1e-9 * (1.0 + e.abs()));
    }
}
