//! Box partitions of the grid, selection operators and reconstruction.
//!
//! A block's pixel list is its selection operator `S_k`: `select` gathers
//! and `scatter_add` applies the transpose. Per-pixel block counts form the
//! diagonal of `Q = Σ_k S_kᵀ S_k`.

use std::ops::Range;

use crate::error::{DopeError, Result};
use crate::grid::GridShape;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    id: usize,
    extent: Vec<Range<usize>>,
    pixels: Vec<usize>,
    grid_dims: Vec<usize>,
}

impl Block {
    /// Axis-aligned box `extent` (per-axis `[lo, hi)`) inside `shape`.
    pub fn new(id: usize, shape: &GridShape, extent: Vec<Range<usize>>) -> Result<Self> {
        if extent.len() != shape.ndim() {
            return Err(DopeError::InvalidPartition(format!(
                "block {id} has {} axes, grid has {}",
                extent.len(),
                shape.ndim()
            )));
        }
        for (r, &d) in extent.iter().zip(shape.dims()) {
            if r.start >= r.end || r.end > d {
                return Err(DopeError::InvalidPartition(format!(
                    "block {id} has bad range {r:?} on axis of size {d}"
                )));
            }
        }
        let mut pixels = Vec::with_capacity(extent.iter().map(|r| r.len()).product());
        let mut coords: Vec<usize> = extent.iter().map(|r| r.start).collect();
        'outer: loop {
            pixels.push(shape.linear_unchecked(&coords));
            let mut axis = coords.len();
            loop {
                if axis == 0 {
                    break 'outer;
                }
                axis -= 1;
                coords[axis] += 1;
                if coords[axis] < extent[axis].end {
                    break;
                }
                coords[axis] = extent[axis].start;
            }
        }
        Ok(Self {
            id,
            extent,
            pixels,
            grid_dims: shape.dims().to_vec(),
        })
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn extent(&self) -> &[Range<usize>] {
        &self.extent
    }

    /// Global pixel indices, strictly increasing.
    pub fn pixels(&self) -> &[usize] {
        &self.pixels
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    /// Position of global pixel `p` inside the block, if it belongs to it.
    pub fn local_index(&self, mut p: usize) -> Option<usize> {
        let mut local = 0;
        let mut stride = 1;
        for axis in (0..self.grid_dims.len()).rev() {
            let c = p % self.grid_dims[axis];
            p /= self.grid_dims[axis];
            let r = &self.extent[axis];
            if c < r.start || c >= r.end {
                return None;
            }
            local += (c - r.start) * stride;
            stride *= r.len();
        }
        Some(local)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Overlap {
    Size00,
    Size10,
    Size25,
}

impl Overlap {
    pub fn from_pct(pct: u32) -> Result<Self> {
        match pct {
            0 => Ok(Self::Size00),
            10 => Ok(Self::Size10),
            25 => Ok(Self::Size25),
            other => Err(DopeError::InvalidParameter(format!(
                "overlap must be 0, 10 or 25, got {other}"
            ))),
        }
    }

    pub fn pct(self) -> u32 {
        match self {
            Self::Size00 => 0,
            Self::Size10 => 10,
            Self::Size25 => 25,
        }
    }

    /// Per-side growth for a base range of `len` pixels: `ceil(pct·len / 200)`.
    pub fn growth(self, len: usize) -> usize {
        (self.pct() as usize * len).div_ceil(200)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    shape: GridShape,
    blocks: Vec<Block>,
    counts: Vec<u32>,
}

impl Partition {
    /// Builds a partition from explicit boxes; fails unless every pixel is covered.
    pub fn from_extents(shape: &GridShape, extents: Vec<Vec<Range<usize>>>) -> Result<Self> {
        let blocks = extents
            .into_iter()
            .enumerate()
            .map(|(id, e)| Block::new(id, shape, e))
            .collect::<Result<Vec<_>>>()?;
        Self::from_blocks(shape, blocks)
    }

    pub fn from_blocks(shape: &GridShape, blocks: Vec<Block>) -> Result<Self> {
        if blocks.is_empty() {
            return Err(DopeError::InvalidPartition("no blocks".into()));
        }
        let mut counts = vec![0u32; shape.n()];
        for b in &blocks {
            for &p in b.pixels() {
                counts[p] += 1;
            }
        }
        if let Some(p) = counts.iter().position(|&c| c == 0) {
            return Err(DopeError::InvalidPartition(format!(
                "pixel {p} is not covered by any block"
            )));
        }
        Ok(Self {
            shape: shape.clone(),
            blocks,
            counts,
        })
    }

    pub fn shape(&self) -> &GridShape {
        &self.shape
    }

    pub fn n(&self) -> usize {
        self.shape.n()
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    /// Diagonal of `Q`.
    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn mean_block_size(&self) -> f64 {
        self.blocks.iter().map(Block::len).sum::<usize>() as f64 / self.blocks.len() as f64
    }
}

/// Splits each axis into `k_per_axis` near-equal ranges (remainder to the
/// first ranges) and grows every range by the overlap on both sides.
pub fn make_partition(shape: &GridShape, k_per_axis: &[usize], overlap: Overlap) -> Result<Partition> {
    if k_per_axis.len() != shape.ndim() {
        return Err(DopeError::InvalidPartition(format!(
            "expected {} block counts, got {}",
            shape.ndim(),
            k_per_axis.len()
        )));
    }
    let k: usize = k_per_axis.iter().product();
    if k == 0 || k > shape.n() {
        return Err(DopeError::InvalidPartition(format!(
            "{k} blocks for {} pixels",
            shape.n()
        )));
    }
    let mut axis_ranges = Vec::with_capacity(shape.ndim());
    for (&d, &parts) in shape.dims().iter().zip(k_per_axis) {
        if parts == 0 || parts > d {
            return Err(DopeError::InvalidPartition(format!(
                "cannot split an axis of {d} pixels into {parts} ranges"
            )));
        }
        let (base, rem) = (d / parts, d % parts);
        let mut ranges = Vec::with_capacity(parts);
        let mut start = 0usize;
        for r in 0..parts {
            let len = base + usize::from(r < rem);
            let g = overlap.growth(len);
            ranges.push(start.saturating_sub(g)..(start + len + g).min(d));
            start += len;
        }
        axis_ranges.push(ranges);
    }
    let mut extents = Vec::with_capacity(k);
    let mut idx = vec![0; shape.ndim()];
    'outer: loop {
        extents.push(
            idx.iter()
                .enumerate()
                .map(|(a, &i)| axis_ranges[a][i].clone())
                .collect(),
        );
        let mut axis = idx.len();
        loop {
            if axis == 0 {
                break 'outer;
            }
            axis -= 1;
            idx[axis] += 1;
            if idx[axis] < k_per_axis[axis] {
                break;
            }
            idx[axis] = 0;
        }
    }
    Partition::from_extents(shape, extents)
}

/// Factorizes `k` into per-axis counts whose blocks are as close to cubic as
/// possible (smallest spread of side lengths on a log scale).
pub fn factor_blocks(shape: &GridShape, k: usize) -> Result<Vec<usize>> {
    fn rec(k: usize, axis: usize, dims: &[usize], cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if axis + 1 == dims.len() {
            if k <= dims[axis] {
                cur.push(k);
                out.push(cur.clone());
                cur.pop();
            }
            return;
        }
        for f in (1..=k.min(dims[axis])).filter(|f| k.is_multiple_of(*f)) {
            cur.push(f);
            rec(k / f, axis + 1, dims, cur, out);
            cur.pop();
        }
    }
    let mut candidates = Vec::new();
    rec(k, 0, shape.dims(), &mut Vec::new(), &mut candidates);
    let spread = |f: &Vec<usize>| {
        let sides: Vec<f64> = shape
            .dims()
            .iter()
            .zip(f)
            .map(|(&d, &p)| (d as f64 / p as f64).ln())
            .collect();
        sides.iter().copied().fold(f64::MIN, f64::max) - sides.iter().copied().fold(f64::MAX, f64::min)
    };
    candidates
        .into_iter()
        .min_by(|a, b| spread(a).total_cmp(&spread(b)))
        .ok_or_else(|| DopeError::InvalidPartition(format!("{k} blocks do not fit grid {:?}", shape.dims())))
}

/// `S_k v`.
pub fn select(block: &Block, v: &[f64]) -> Result<Vec<f64>> {
    let n: usize = block.grid_dims.iter().product();
    if v.len() != n {
        return Err(DopeError::LengthMismatch {
            expected: n,
            got: v.len(),
        });
    }
    Ok(block.pixels.iter().map(|&p| v[p]).collect())
}

/// `acc + S_kᵀ w`.
pub fn scatter_add(block: &Block, w: &[f64], acc: &mut [f64]) -> Result<()> {
    if w.len() != block.len() {
        return Err(DopeError::LengthMismatch {
            expected: block.len(),
            got: w.len(),
        });
    }
    let n: usize = block.grid_dims.iter().product();
    if acc.len() != n {
        return Err(DopeError::LengthMismatch {
            expected: n,
            got: acc.len(),
        });
    }
    for (&p, &x) in block.pixels.iter().zip(w) {
        acc[p] += x;
    }
    Ok(())
}

/// `Q⁻¹ Σ_k S_kᵀ ŷ_k`: per-pixel mean of the block labels.
pub fn reconstruct(partition: &Partition, block_labels: &[Vec<f64>]) -> Result<Vec<f64>> {
    if block_labels.len() != partition.blocks.len() {
        return Err(DopeError::LengthMismatch {
            expected: partition.blocks.len(),
            got: block_labels.len(),
        });
    }
    let mut acc = vec![0.0; partition.n()];
    for (b, labels) in partition.blocks.iter().zip(block_labels) {
        scatter_add(b, labels, &mut acc)?;
    }
    for (a, &q) in acc.iter_mut().zip(&partition.counts) {
        *a /= f64::from(q);
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shape(d: &[usize]) -> GridShape {
        GridShape::new(d).unwrap()
    }

    fn dense_selection(block: &Block, n: usize) -> Vec<Vec<f64>> {
        let mut m = vec![vec![0.0; n]; block.len()];
        for (r, &p) in block.pixels().iter().enumerate() {
            m[r][p] = 1.0;
        }
        m
    }

    #[test]
    fn exact_tiling() {
        let p = make_partition(&shape(&[8, 8]), &[2, 2], Overlap::Size00).unwrap();
        assert_eq!(p.blocks().len(), 4);
        assert!(p.blocks().iter().all(|b| b.len() == 16));
        assert!(p.counts().iter().all(|&c| c == 1));
        assert_eq!(p.blocks()[1].extent(), &[0..4, 4..8]);
    }

    #[test]
    fn identity_partition() {
        for ov in [Overlap::Size00, Overlap::Size10, Overlap::Size25] {
            let p = make_partition(&shape(&[8, 8]), &[1, 1], ov).unwrap();
            assert_eq!(p.blocks()[0].pixels(), (0..64).collect::<Vec<_>>().as_slice());
            assert!(p.counts().iter().all(|&c| c == 1));
        }
    }

    #[test]
    fn overlap_counts_match_membership_scan() {
        let s = shape(&[8, 8]);
        let p = make_partition(&s, &[2, 2], Overlap::Size25).unwrap();
        // base 4, growth ceil(0.25*4/2) = 1 per side
        assert_eq!(p.blocks()[0].extent(), &[0..5, 0..5]);
        assert_eq!(p.blocks()[3].extent(), &[3..8, 3..8]);
        for i in 0..64 {
            let c = s.coords_of(i).unwrap();
            let inside = |r: &Range<usize>, x: usize| r.contains(&x);
            let brute = p
                .blocks()
                .iter()
                .filter(|b| inside(&b.extent()[0], c[0]) && inside(&b.extent()[1], c[1]))
                .count() as u32;
            assert_eq!(p.counts()[i], brute);
        }
        let fours: Vec<usize> = (0..64).filter(|&i| p.counts()[i] == 4).collect();
        assert_eq!(fours, vec![27, 28, 35, 36]);
        assert_eq!(p.counts()[s.index_of(&[3, 0]).unwrap()], 2);
        assert_eq!(p.counts()[s.index_of(&[0, 0]).unwrap()], 1);
    }

    #[test]
    fn remainder_goes_to_first_ranges() {
        let p = make_partition(&shape(&[7, 3]), &[3, 1], Overlap::Size00).unwrap();
        let rows: Vec<Range<usize>> = p.blocks().iter().map(|b| b.extent()[0].clone()).collect();
        assert_eq!(rows, vec![0..3, 3..5, 5..7]);
    }

    #[test]
    fn partition_errors() {
        let s = shape(&[4, 4]);
        assert!(make_partition(&s, &[5, 1], Overlap::Size00).is_err());
        assert!(make_partition(&s, &[2], Overlap::Size00).is_err());
        assert!(make_partition(&s, &[0, 1], Overlap::Size00).is_err());
        assert!(Partition::from_extents(&s, vec![vec![0..2, 0..4]]).is_err());
        assert!(Overlap::from_pct(20).is_err());
    }

    #[test]
    fn local_index_inverts_pixels() {
        let s = shape(&[5, 6, 4]);
        let b = Block::new(0, &s, vec![1..4, 2..6, 0..3]).unwrap();
        for (l, &p) in b.pixels().iter().enumerate() {
            assert_eq!(b.local_index(p), Some(l));
        }
        let inside = b.pixels().len();
        assert_eq!((0..s.n()).filter(|&p| b.local_index(p).is_some()).count(), inside);
    }

    #[test]
    fn select_and_scatter_match_dense() {
        let s = shape(&[6, 7]);
        let b = Block::new(0, &s, vec![1..5, 2..6]).unwrap();
        let v: Vec<f64> = (0..42).map(|i| (i as f64 * 0.37).sin()).collect();
        let dense = dense_selection(&b, 42);
        let picked = select(&b, &v).unwrap();
        for (r, row) in dense.iter().enumerate() {
            let expect: f64 = row.iter().zip(&v).map(|(a, b)| a * b).sum();
            assert_eq!(picked[r], expect);
        }
        let coords_as_values: Vec<f64> = (0..42).map(|i| i as f64).collect();
        let idx: Vec<f64> = b.pixels().iter().map(|&p| p as f64).collect();
        assert_eq!(select(&b, &coords_as_values).unwrap(), idx);

        let w: Vec<f64> = (0..b.len()).map(|i| i as f64 + 0.5).collect();
        let mut acc = vec![1.0; 42];
        scatter_add(&b, &w, &mut acc).unwrap();
        for (col, a) in acc.iter().enumerate() {
            let expect = 1.0 + (0..b.len()).map(|r| dense[r][col] * w[r]).sum::<f64>();
            assert_eq!(*a, expect);
        }
        let mut zero = vec![0.0; 42];
        scatter_add(&b, &vec![0.0; b.len()], &mut zero).unwrap();
        assert!(zero.iter().all(|&z| z == 0.0));
        assert!(select(&b, &[0.0; 3]).is_err());
        assert!(scatter_add(&b, &[0.0; 3], &mut zero).is_err());
    }

    #[test]
    fn reconstruct_means() {
        let s = shape(&[1, 3]);
        let p = Partition::from_extents(&s, vec![vec![0..1, 0..2], vec![0..1, 1..3]]).unwrap();
        let y = reconstruct(&p, &[vec![0.0, 1.0], vec![1.0, 1.0]]).unwrap();
        assert_eq!(y, vec![0.0, 1.0, 1.0]);
        let y = reconstruct(&p, &[vec![0.0, 0.0], vec![1.0, 1.0]]).unwrap();
        assert_eq!(y, vec![0.0, 0.5, 1.0]);
        let single = Partition::from_extents(&s, vec![vec![0..1, 0..3]]).unwrap();
        assert_eq!(
            reconstruct(&single, &[vec![1.0, 0.0, 1.0]]).unwrap(),
            vec![1.0, 0.0, 1.0]
        );
    }

    #[test]
    fn near_cubic_factorization() {
        assert_eq!(factor_blocks(&shape(&[64, 64]), 64).unwrap(), vec![8, 8]);
        assert_eq!(
            factor_blocks(&shape(&[64, 64]), 32).unwrap().iter().product::<usize>(),
            32
        );
        assert_eq!(factor_blocks(&shape(&[32, 32, 16]), 8).unwrap(), vec![2, 2, 2]);
        assert_eq!(factor_blocks(&shape(&[200, 200, 100]), 128).unwrap(), vec![4, 8, 4]);
        assert!(factor_blocks(&shape(&[2, 2]), 7).is_err());
    }
}
