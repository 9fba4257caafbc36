//! Pairwise weights and the global energy `uᵀy + λ·yᵀLy`.
//!
//! Weights are stored symmetrically in CSR form, every unordered pair
//! appearing in both rows. Quadratic forms use the Laplacian convention
//! `yᵀLy = Σ_{i<j} w_ij (y_i − y_j)²`, each unordered pair counted once.

use crate::error::{DopeError, Result};
use crate::grid::{self, GridImage, Kernel};

/// Symmetric sparse weight matrix without diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseWeights {
    n: usize,
    offsets: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    submodular: bool,
}

impl SparseWeights {
    /// Builds from unordered pairs. Each pair may be given in either
    /// orientation; repeated pairs are summed. Negative weights are
    /// rejected unless `allow_negative` is set.
    pub fn from_pairs<I>(n: usize, pairs: I, allow_negative: bool) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize, f64)>,
    {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for (i, j, w) in pairs {
            if i >= n || j >= n {
                return Err(DopeError::IndexOutOfRange { index: i.max(j), n });
            }
            if i == j {
                return Err(DopeError::InvalidParameter(format!("diagonal weight at {i}")));
            }
            if !w.is_finite() {
                return Err(DopeError::InvalidParameter(format!("non-finite weight on ({i}, {j})")));
            }
            if w < 0.0 && !allow_negative {
                return Err(DopeError::NonSubmodular { i, j, weight: w });
            }
            rows[i].push((j, w));
            rows[j].push((i, w));
        }
        let mut offsets = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        offsets.push(0);
        for mut row in rows {
            row.sort_by_key(|&(j, _)| j);
            let mut last: Option<usize> = None;
            for (j, w) in row {
                if last == Some(j) {
                    *vals.last_mut().unwrap() += w;
                } else {
                    cols.push(j);
                    vals.push(w);
                    last = Some(j);
                }
            }
            offsets.push(cols.len());
        }
        let submodular = vals.iter().all(|&w| w >= 0.0);
        Ok(Self {
            n,
            offsets,
            cols,
            vals,
            submodular,
        })
    }

    pub fn empty(n: usize) -> Self {
        Self {
            n,
            offsets: vec![0; n + 1],
            cols: Vec::new(),
            vals: Vec::new(),
            submodular: true,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// True when no stored weight is negative.
    pub fn is_submodular(&self) -> bool {
        self.submodular
    }

    /// Neighbors of `i` with their weights, ascending by index.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.offsets[i]..self.offsets[i + 1];
        self.cols[span.clone()]
            .iter()
            .copied()
            .zip(self.vals[span].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let span = self.offsets[i]..self.offsets[i + 1];
        match self.cols[span.clone()].binary_search(&j) {
            Ok(pos) => self.vals[span.start + pos],
            Err(_) => 0.0,
        }
    }

    /// Each unordered pair once, as `(i, j, w)` with `i < j`.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |i| self.row(i).filter(move |&(j, _)| j > i).map(move |(j, w)| (i, j, w)))
    }

    /// Number of stored unordered pairs.
    pub fn pair_count(&self) -> usize {
        self.cols.len() / 2
    }

    /// `d_ii = Σ_j w_ij`.
    pub fn degree(&self, i: usize) -> f64 {
        self.row(i).map(|(_, w)| w).sum()
    }

    pub fn degrees(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.degree(i)).collect()
    }

    /// `yᵀLy` without materializing `L`.
    pub fn laplacian_form(&self, y: &[f64]) -> f64 {
        self.pairs().map(|(i, j, w)| w * (y[i] - y[j]).powi(2)).sum()
    }

    /// `(L y)_i`.
    pub fn laplacian_apply(&self, y: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.row(i).map(|(j, w)| w * (y[i] - y[j])).sum())
            .collect()
    }
}

/// `linearᵀy + λ·yᵀLy` for any (binary or relaxed) `y`.
pub fn quadratic_energy(linear: &[f64], weights: &SparseWeights, lambda: f64, y: &[f64]) -> f64 {
    let unary: f64 = linear.iter().zip(y).map(|(u, v)| u * v).sum();
    unary + lambda * weights.laplacian_form(y)
}

/// Binary labeling energy from `u8` labels.
pub fn labeling_energy(linear: &[f64], weights: &SparseWeights, lambda: f64, labels: &[u8]) -> f64 {
    let y: Vec<f64> = labels.iter().map(|&l| f64::from(l)).collect();
    quadratic_energy(linear, weights, lambda, &y)
}

/// Global energy model: unaries, pairwise weights and regularization weight.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyModel {
    unary: Vec<f64>,
    weights: SparseWeights,
    lambda: f64,
}

impl EnergyModel {
    pub fn new(unary: Vec<f64>, weights: SparseWeights, lambda: f64) -> Result<Self> {
        if unary.len() != weights.n() {
            return Err(DopeError::LengthMismatch {
                expected: weights.n(),
                got: unary.len(),
            });
        }
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(DopeError::InvalidParameter(format!(
                "lambda must be >= 0, got {lambda}"
            )));
        }
        if unary.iter().any(|u| !u.is_finite()) {
            return Err(DopeError::InvalidParameter("non-finite unary".into()));
        }
        Ok(Self { unary, weights, lambda })
    }

    pub fn n(&self) -> usize {
        self.unary.len()
    }

    pub fn unary(&self) -> &[f64] {
        &self.unary
    }

    pub fn weights(&self) -> &SparseWeights {
        &self.weights
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn is_submodular(&self) -> bool {
        self.weights.is_submodular()
    }

    pub fn degrees(&self) -> Vec<f64> {
        self.weights.degrees()
    }
}

pub fn evaluate_energy(model: &EnergyModel, y: &[f64]) -> Result<f64> {
    if y.len() != model.n() {
        return Err(DopeError::LengthMismatch {
            expected: model.n(),
            got: y.len(),
        });
    }
    Ok(quadratic_energy(&model.unary, &model.weights, model.lambda, y))
}

pub fn evaluate_labels(model: &EnergyModel, labels: &[u8]) -> Result<f64> {
    let y: Vec<f64> = labels.iter().map(|&l| f64::from(l)).collect();
    evaluate_energy(model, &y)
}

/// Potts weights over the kernel neighborhood: constant 1, or the contrast
/// weight `exp(−‖x_i − x_j‖² / 2σ²)` when `contrast` is set.
pub fn build_potts_weights(image: &GridImage, kernel: Kernel, sigma: f64, contrast: bool) -> Result<SparseWeights> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(DopeError::InvalidParameter(format!("sigma must be > 0, got {sigma}")));
    }
    let shape = image.shape();
    let offsets = kernel.offsets(shape.ndim());
    // half the window is enough: every unordered pair is generated once
    let forward: Vec<&Vec<isize>> = offsets.iter().filter(|o| is_forward(o)).collect();
    let denom = 2.0 * sigma * sigma;
    let mut coords = vec![0; shape.ndim()];
    let mut scratch = vec![0; shape.ndim()];
    let mut pairs = Vec::with_capacity(shape.n() * forward.len());
    for i in 0..shape.n() {
        shape.fill_coords(i, &mut coords);
        for off in &forward {
            if !grid::shifted(shape, &coords, off, &mut scratch) {
                continue;
            }
            let j = shape.linear_unchecked(&scratch);
            let w = if contrast {
                let d2: f64 = image
                    .pixel(i)
                    .iter()
                    .zip(image.pixel(j))
                    .map(|(a, b)| (a - b).powi(2))
                    .sum();
                (-d2 / denom).exp()
            } else {
                1.0
            };
            pairs.push((i, j, w));
        }
    }
    SparseWeights::from_pairs(shape.n(), pairs, false)
}

fn is_forward(off: &[isize]) -> bool {
    // lexicographically positive
    off.iter().find(|&&d| d != 0).is_some_and(|&d| d > 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{neighbors, GridShape};

    fn image(dims: &[usize], channels: usize, data: Vec<f64>) -> GridImage {
        GridImage::new(GridShape::new(dims).unwrap(), channels, data).unwrap()
    }

    #[test]
    fn potts_constant_and_contrast() {
        let img = image(&[4, 5], 1, vec![0.3; 20]);
        let k = Kernel::new(3).unwrap();
        let w = build_potts_weights(&img, k, 0.1, true).unwrap();
        assert!(w.pairs().all(|(_, _, v)| v == 1.0));
        let noisy = image(&[4, 5], 1, (0..20).map(|i| i as f64 / 20.0).collect());
        let w = build_potts_weights(&noisy, k, 0.1, false).unwrap();
        assert!(w.pairs().all(|(_, _, v)| v == 1.0));
        // the stored pattern is exactly the neighborhood relation
        let shape = noisy.shape();
        for i in 0..shape.n() {
            let cols: Vec<usize> = w.row(i).map(|(j, _)| j).collect();
            assert_eq!(cols, neighbors(shape, i, k).unwrap());
        }
        assert!(build_potts_weights(&noisy, k, 0.0, true).is_err());
    }

    #[test]
    fn contrast_weight_two_pixels() {
        let sigma = 0.5f64;
        // ‖x1 − x2‖² = 2σ² with one channel
        let diff = (2.0 * sigma * sigma).sqrt();
        let img = image(&[1, 2], 1, vec![0.1, 0.1 + diff]);
        let w = build_potts_weights(&img, Kernel::new(3).unwrap(), sigma, true).unwrap();
        assert!((w.get(0, 1) - (-1.0f64).exp()).abs() < 1e-12);
        assert_eq!(w.get(0, 1), w.get(1, 0));
        assert!((w.get(0, 1) - 0.3679).abs() < 1e-4);
    }

    #[test]
    fn energy_examples() {
        let w = SparseWeights::from_pairs(2, [(0, 1, 0.5)], false).unwrap();
        let m = EnergyModel::new(vec![-1.0, 0.0], w, 1.0).unwrap();
        assert_eq!(evaluate_energy(&m, &[0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(evaluate_energy(&m, &[1.0, 1.0]).unwrap(), -1.0);
        assert!((evaluate_energy(&m, &[1.0, 0.0]).unwrap() + 0.5).abs() < 1e-15);
        assert!(evaluate_energy(&m, &[1.0]).is_err());
    }

    #[test]
    fn model_validation() {
        let w = SparseWeights::empty(3);
        assert!(EnergyModel::new(vec![0.0; 2], w.clone(), 1.0).is_err());
        assert!(EnergyModel::new(vec![0.0; 3], w.clone(), -1.0).is_err());
        assert!(EnergyModel::new(vec![f64::NAN, 0.0, 0.0], w, 1.0).is_err());
    }

    #[test]
    fn negative_weights_need_opt_in() {
        assert!(matches!(
            SparseWeights::from_pairs(2, [(0, 1, -1.0)], false),
            Err(DopeError::NonSubmodular { .. })
        ));
        let w = SparseWeights::from_pairs(2, [(1, 0, -1.0)], true).unwrap();
        assert!(!w.is_submodular());
        assert_eq!(w.get(0, 1), -1.0);
    }

    #[test]
    fn laplacian_matches_dense_form() {
        let w = SparseWeights::from_pairs(4, [(0, 1, 0.5), (1, 2, 2.0), (3, 0, 1.5), (1, 0, 0.25)], false).unwrap();
        assert_eq!(w.get(0, 1), 0.75);
        let y = [0.2, 0.9, 0.4, 0.0];
        let d = w.degrees();
        let mut dense = 0.0;
        for i in 0..4 {
            dense += d[i] * y[i] * y[i];
            for j in 0..4 {
                dense -= w.get(i, j) * y[i] * y[j];
            }
        }
        assert!((w.laplacian_form(&y) - dense).abs() < 1e-12);
        let ly = w.laplacian_apply(&y);
        let quad: f64 = ly.iter().zip(&y).map(|(a, b)| a * b).sum();
        assert!((quad - dense).abs() < 1e-12);
        assert_eq!(w.laplacian_form(&[0.7; 4]), 0.0);
    }
}
