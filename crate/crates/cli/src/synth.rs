//! Synthetic test instances: noisy two-region images and volumes, and
//! random non-submodular grid models.

use dope_core::grid::neighbors;
use dope_core::{EnergyModel, GridImage, GridShape, Kernel, Result, Seed, SparseWeights};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub const FG_LEVEL: f64 = 0.7;
pub const BG_LEVEL: f64 = 0.3;

/// 2D image with a bright disk on a dark background plus Gaussian noise,
/// seeded by a square patch at the disk center and patches in the corners.
/// Returns the image (with seeds) and the ground-truth mask.
pub fn two_region_image(rows: usize, cols: usize, noise: f64, seed: u64) -> Result<(GridImage, Vec<u8>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = GridShape::new(&[rows, cols])?;
    let side = rows.min(cols) as f64;
    let radius = side * rng.random_range(0.22..0.32);
    let cr = rows as f64 / 2.0 + rng.random_range(-0.1..0.1) * side;
    let cc = cols as f64 / 2.0 + rng.random_range(-0.1..0.1) * side;
    let normal = Normal::new(0.0, noise).expect("finite noise level");
    let mut truth = Vec::with_capacity(shape.n());
    let mut data = Vec::with_capacity(shape.n());
    let mut seeds = Vec::with_capacity(shape.n());
    let patch = (side / 16.0).ceil().max(2.0) as usize;
    for r in 0..rows {
        for c in 0..cols {
            let (dr, dc) = (r as f64 + 0.5 - cr, c as f64 + 0.5 - cc);
            let inside = dr * dr + dc * dc <= radius * radius;
            truth.push(u8::from(inside));
            let level = if inside { FG_LEVEL } else { BG_LEVEL };
            data.push((level + normal.sample(&mut rng)).clamp(0.0, 1.0));
            let center = dr.abs() < patch as f64 && dc.abs() < patch as f64;
            let corner = (r < patch || r >= rows - patch) && (c < patch || c >= cols - patch);
            seeds.push(if center {
                Seed::Foreground
            } else if corner {
                Seed::Background
            } else {
                Seed::Unlabeled
            });
        }
    }
    let image = GridImage::new(shape, 1, data)?.with_seeds(seeds)?;
    Ok((image, truth))
}

/// 3D volume with a bright ball, returned as intensities together with a
/// per-voxel foreground probability map derived from the noisy intensities.
pub fn two_region_volume(dims: [usize; 3], noise: f64, seed: u64) -> Result<(GridImage, Vec<f64>, Vec<u8>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = GridShape::new(&dims)?;
    let normal = Normal::new(0.0, noise).expect("finite noise level");
    let center: Vec<f64> = dims.iter().map(|&d| d as f64 / 2.0).collect();
    let radius = dims.iter().copied().min().unwrap_or(1) as f64 * 0.35;
    let mut data = Vec::with_capacity(shape.n());
    let mut prob = Vec::with_capacity(shape.n());
    let mut truth = Vec::with_capacity(shape.n());
    for i in 0..shape.n() {
        let coords = shape.coords_of(i)?;
        let d2: f64 = coords
            .iter()
            .zip(&center)
            .zip(&dims)
            .map(|((&x, &c), &d)| {
                // anisotropic: scale each axis to the shortest one
                let s = dims.iter().copied().min().unwrap_or(1) as f64 / d as f64;
                ((x as f64 + 0.5 - c) * s).powi(2)
            })
            .sum();
        let inside = d2 <= radius * radius;
        truth.push(u8::from(inside));
        let x = ((if inside { FG_LEVEL } else { BG_LEVEL }) + normal.sample(&mut rng)).clamp(0.0, 1.0);
        data.push(x);
        // two-class Gaussian posterior with the true levels
        let lf = -(x - FG_LEVEL).powi(2) / (2.0 * noise * noise);
        let lb = -(x - BG_LEVEL).powi(2) / (2.0 * noise * noise);
        prob.push(1.0 / (1.0 + (lb - lf).exp()));
    }
    Ok((GridImage::new(shape, 1, data)?, prob, truth))
}

/// Random kernel-3 grid model where a fraction `negative` of the pairwise
/// weights is negative. Unaries in [−1, 1], weights magnitude in [0, 1].
pub fn non_submodular_model(rows: usize, cols: usize, negative: f64, lambda: f64, seed: u64) -> Result<EnergyModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = GridShape::new(&[rows, cols])?;
    let kernel = Kernel::new(3)?;
    let mut pairs = Vec::new();
    for i in 0..shape.n() {
        for j in neighbors(&shape, i, kernel)? {
            if j > i {
                let w: f64 = rng.random_range(0.0..1.0);
                pairs.push((i, j, if rng.random_bool(negative) { -w } else { w }));
            }
        }
    }
    let weights = SparseWeights::from_pairs(shape.n(), pairs, true)?;
    let unary = (0..shape.n()).map(|_| rng.random_range(-1.0..1.0)).collect();
    EnergyModel::new(unary, weights, lambda)
}
