//! Seed-driven color models and log-posterior unaries.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{DopeError, Result};
use crate::grid::{GridImage, Seed};

/// Clusters per class.
pub const CLUSTERS: usize = 5;
const RESTARTS: usize = 10;
const MAX_ITERS: usize = 100;
const TOLERANCE: f64 = 1e-6;
/// Floor for the likelihood bandwidth when seeds sit exactly on centroids.
const MIN_BANDWIDTH: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    /// Sum of squared distances to assigned centroids.
    pub distortion: f64,
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = dist2(point, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus_init(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| dist2(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = d2.len() - 1;
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 && target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            rng.random_range(0..points.len())
        };
        let c = points[pick].clone();
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(dist2(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

fn lloyd(points: &[Vec<f64>], mut centroids: Vec<Vec<f64>>) -> KMeans {
    let k = centroids.len();
    let dim = points[0].len();
    let mut assignments = vec![0; points.len()];
    for _ in 0..MAX_ITERS {
        for (a, p) in assignments.iter_mut().zip(points) {
            *a = nearest(p, &centroids).0;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (&a, p) in assignments.iter().zip(points) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(p) {
                *s += v;
            }
        }
        let mut next: Vec<Vec<f64>> = sums
            .into_iter()
            .zip(&counts)
            .zip(&centroids)
            .map(|((s, &c), old)| {
                if c == 0 {
                    old.clone()
                } else {
                    s.into_iter().map(|v| v / c as f64).collect()
                }
            })
            .collect();
        for c in 0..k {
            if counts[c] == 0 {
                // re-seed at the point farthest from its centroid
                let mut far = (0, -1.0);
                for (i, p) in points.iter().enumerate() {
                    let d = dist2(p, &next[assignments[i]]);
                    if d > far.1 {
                        far = (i, d);
                    }
                }
                next[c] = points[far.0].clone();
                assignments[far.0] = c;
            }
        }
        let shift = centroids
            .iter()
            .zip(&next)
            .map(|(a, b)| dist2(a, b).sqrt())
            .fold(0.0, f64::max);
        centroids = next;
        if shift <= TOLERANCE {
            break;
        }
    }
    let mut distortion = 0.0;
    for (a, p) in assignments.iter_mut().zip(points) {
        let (c, d) = nearest(p, &centroids);
        *a = c;
        distortion += d;
    }
    KMeans {
        centroids,
        assignments,
        distortion,
    }
}

/// Lloyd's k-means with k-means++ seeding, best of ten restarts.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> Result<KMeans> {
    if k == 0 || points.len() < k {
        return Err(DopeError::InvalidParameter(format!(
            "k-means needs at least k={k} points, got {}",
            points.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<KMeans> = None;
    for _ in 0..RESTARTS {
        let run = lloyd(points, plus_plus_init(points, k, &mut rng));
        if best.as_ref().is_none_or(|b| run.distortion < b.distortion) {
            best = Some(run);
        }
    }
    Ok(best.unwrap())
}

/// Five-cluster isotropic mixtures for foreground and background.
#[derive(Debug, Clone, PartialEq)]
pub struct ColorModel {
    pub fg_centroids: Vec<Vec<f64>>,
    pub bg_centroids: Vec<Vec<f64>>,
    pub fg_weights: Vec<f64>,
    pub bg_weights: Vec<f64>,
    /// Gaussian bandwidth: mean distance of seeds to their nearest centroid.
    pub bandwidth: f64,
}

fn mixture_weights(km: &KMeans) -> Vec<f64> {
    let mut w = vec![0.0; km.centroids.len()];
    for &a in &km.assignments {
        w[a] += 1.0;
    }
    let total = km.assignments.len() as f64;
    w.iter_mut().for_each(|v| *v /= total);
    w
}

pub fn fit_color_model(image: &GridImage, seed: u64) -> Result<ColorModel> {
    let seeds = image
        .seeds()
        .ok_or_else(|| DopeError::InvalidParameter("color model needs a seed mask".into()))?;
    let collect = |class: Seed| -> Vec<Vec<f64>> {
        seeds
            .iter()
            .enumerate()
            .filter(|&(_, &s)| s == class)
            .map(|(i, _)| image.pixel(i).to_vec())
            .collect()
    };
    let fg = collect(Seed::Foreground);
    let bg = collect(Seed::Background);
    if fg.len() < CLUSTERS || bg.len() < CLUSTERS {
        return Err(DopeError::TooFewSeeds {
            foreground: fg.len(),
            background: bg.len(),
            needed: CLUSTERS,
        });
    }
    let fg_km = kmeans(&fg, CLUSTERS, seed)?;
    let bg_km = kmeans(&bg, CLUSTERS, seed.wrapping_add(1))?;
    let spread: f64 = fg
        .iter()
        .map(|p| nearest(p, &fg_km.centroids).1.sqrt())
        .chain(bg.iter().map(|p| nearest(p, &bg_km.centroids).1.sqrt()))
        .sum();
    let bandwidth = (spread / (fg.len() + bg.len()) as f64).max(MIN_BANDWIDTH);
    Ok(ColorModel {
        fg_weights: mixture_weights(&fg_km),
        bg_weights: mixture_weights(&bg_km),
        fg_centroids: fg_km.centroids,
        bg_centroids: bg_km.centroids,
        bandwidth,
    })
}

fn log_likelihood(x: &[f64], centroids: &[Vec<f64>], weights: &[f64], bandwidth: f64) -> f64 {
    let denom = 2.0 * bandwidth * bandwidth;
    let terms: Vec<f64> = centroids
        .iter()
        .zip(weights)
        .filter(|&(_, &w)| w > 0.0)
        .map(|(c, &w)| w.ln() - dist2(x, c) / denom)
        .collect();
    let top = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    top + terms.iter().map(|t| (t - top).exp()).sum::<f64>().ln()
}

/// `u_i = log Pr(y_i = 0 | x_i) − log Pr(y_i = 1 | x_i)` under equal class
/// priors; seeded pixels are pinned to `∓U_max`.
pub fn compute_unaries(image: &GridImage, model: &ColorModel) -> Result<Vec<f64>> {
    let n = image.shape().n();
    let mut u: Vec<f64> = (0..n)
        .map(|i| {
            let x = image.pixel(i);
            log_likelihood(x, &model.bg_centroids, &model.bg_weights, model.bandwidth)
                - log_likelihood(x, &model.fg_centroids, &model.fg_weights, model.bandwidth)
        })
        .collect();
    if let Some(seeds) = image.seeds() {
        apply_seed_constraints(&mut u, seeds)?;
    }
    Ok(u)
}

/// Pins seeded pixels: foreground to `−U_max`, background to `+U_max`, with
/// `U_max = 10⁶·(1 + max |u_i|)` over unseeded pixels.
pub fn apply_seed_constraints(unary: &mut [f64], seeds: &[Seed]) -> Result<()> {
    if seeds.len() != unary.len() {
        return Err(DopeError::LengthMismatch {
            expected: unary.len(),
            got: seeds.len(),
        });
    }
    let free_max = unary
        .iter()
        .zip(seeds)
        .filter(|&(_, &s)| s == Seed::Unlabeled)
        .map(|(u, _)| u.abs())
        .fold(0.0, f64::max);
    let u_max = 1e6 * (1.0 + free_max);
    for (u, s) in unary.iter_mut().zip(seeds) {
        match s {
            Seed::Foreground => *u = -u_max,
            Seed::Background => *u = u_max,
            Seed::Unlabeled => {}
        }
    }
    Ok(())
}
