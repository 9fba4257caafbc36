//! Pixel grids: shapes, row-major indexing and kernel neighborhoods.

use crate::error::{DopeError, Result};

/// Dimensions of a 2D or 3D grid. The last axis varies fastest.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GridShape {
    dims: Vec<usize>,
    n: usize,
}

impl GridShape {
    pub fn new(dims: &[usize]) -> Result<Self> {
        if !(2..=3).contains(&dims.len()) || dims.contains(&0) {
            return Err(DopeError::InvalidShape(dims.to_vec()));
        }
        Ok(Self {
            dims: dims.to_vec(),
            n: dims.iter().product(),
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn ndim(&self) -> usize {
        self.dims.len()
    }

    /// Total number of pixels.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn index_of(&self, coords: &[usize]) -> Result<usize> {
        if coords.len() != self.dims.len() || coords.iter().zip(&self.dims).any(|(c, d)| c >= d) {
            return Err(DopeError::CoordOutOfRange {
                coords: coords.to_vec(),
                dims: self.dims.clone(),
            });
        }
        Ok(self.linear_unchecked(coords))
    }

    pub fn coords_of(&self, index: usize) -> Result<Vec<usize>> {
        if index >= self.n {
            return Err(DopeError::IndexOutOfRange { index, n: self.n });
        }
        let mut coords = vec![0; self.dims.len()];
        self.fill_coords(index, &mut coords);
        Ok(coords)
    }

    pub(crate) fn linear_unchecked(&self, coords: &[usize]) -> usize {
        coords.iter().zip(&self.dims).fold(0, |acc, (&c, &d)| acc * d + c)
    }

    pub(crate) fn fill_coords(&self, mut index: usize, coords: &mut [usize]) {
        for axis in (0..self.dims.len()).rev() {
            coords[axis] = index % self.dims[axis];
            index /= self.dims[axis];
        }
    }
}

/// Neighborhood kernel. 2D kernels are square windows of side `size`;
/// 3D kernels are balls of Euclidean radius `size / 2` in voxel units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Kernel(usize);

impl Kernel {
    pub const SUPPORTED: [usize; 4] = [3, 5, 7, 9];

    pub fn new(size: usize) -> Result<Self> {
        if Self::SUPPORTED.contains(&size) {
            Ok(Self(size))
        } else {
            Err(DopeError::UnsupportedKernel(size))
        }
    }

    pub fn size(self) -> usize {
        self.0
    }

    /// Non-zero offsets of the window, in lexicographic order.
    pub fn offsets(self, ndim: usize) -> Vec<Vec<isize>> {
        let r = (self.0 / 2) as isize;
        let mut out = Vec::new();
        let mut cur = vec![-r; ndim];
        loop {
            if cur.iter().any(|&c| c != 0) && self.contains(&cur) {
                out.push(cur.clone());
            }
            // odometer increment
            let mut axis = ndim;
            loop {
                if axis == 0 {
                    return out;
                }
                axis -= 1;
                if cur[axis] < r {
                    cur[axis] += 1;
                    break;
                }
                cur[axis] = -r;
            }
        }
    }

    fn contains(self, offset: &[isize]) -> bool {
        if offset.len() == 2 {
            return true;
        }
        // |d|^2 <= (size/2)^2, kept in integers
        let sq: isize = offset.iter().map(|d| d * d).sum();
        4 * sq <= (self.0 * self.0) as isize
    }
}

/// All pixels within the kernel window around `index`, excluding `index`
/// itself, clipped at the grid border. Returned in ascending order.
pub fn neighbors(shape: &GridShape, index: usize, kernel: Kernel) -> Result<Vec<usize>> {
    if index >= shape.n() {
        return Err(DopeError::IndexOutOfRange { index, n: shape.n() });
    }
    let offsets = kernel.offsets(shape.ndim());
    let mut out = Vec::with_capacity(offsets.len());
    let mut coords = vec![0; shape.ndim()];
    shape.fill_coords(index, &mut coords);
    let mut scratch = vec![0; shape.ndim()];
    for off in &offsets {
        if shifted(shape, &coords, off, &mut scratch) {
            out.push(shape.linear_unchecked(&scratch));
        }
    }
    out.sort_unstable();
    Ok(out)
}

/// Writes `coords + off` into `dst`; false when it leaves the grid.
pub(crate) fn shifted(shape: &GridShape, coords: &[usize], off: &[isize], dst: &mut [usize]) -> bool {
    for axis in 0..coords.len() {
        let c = coords[axis] as isize + off[axis];
        if c < 0 || c >= shape.dims[axis] as isize {
            return false;
        }
        dst[axis] = c as usize;
    }
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Seed {
    Unlabeled,
    Background,
    Foreground,
}

/// Per-pixel feature vectors on a grid, with optional user seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct GridImage {
    shape: GridShape,
    channels: usize,
    data: Vec<f64>,
    seeds: Option<Vec<Seed>>,
}

impl GridImage {
    pub fn new(shape: GridShape, channels: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 {
            return Err(DopeError::InvalidParameter("image needs at least one channel".into()));
        }
        if data.len() != shape.n() * channels {
            return Err(DopeError::LengthMismatch {
                expected: shape.n() * channels,
                got: data.len(),
            });
        }
        Ok(Self {
            shape,
            channels,
            data,
            seeds: None,
        })
    }

    pub fn with_seeds(mut self, seeds: Vec<Seed>) -> Result<Self> {
        if seeds.len() != self.shape.n() {
            return Err(DopeError::LengthMismatch {
                expected: self.shape.n(),
                got: seeds.len(),
            });
        }
        self.seeds = Some(seeds);
        Ok(self)
    }

    pub fn shape(&self) -> &GridShape {
        &self.shape
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn seeds(&self) -> Option<&[Seed]> {
        self.seeds.as_deref()
    }

    /// Feature vector of pixel `i`.
    pub fn pixel(&self, i: usize) -> &[f64] {
        &self.data[i * self.channels..(i + 1) * self.channels]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_round_trip() {
        let s = GridShape::new(&[4, 4]).unwrap();
        assert_eq!(s.index_of(&[0, 0]).unwrap(), 0);
        assert_eq!(s.index_of(&[3, 3]).unwrap(), 15);
        assert!(s.index_of(&[4, 0]).is_err());
        let s = GridShape::new(&[2, 3, 4]).unwrap();
        for i in 0..s.n() {
            assert_eq!(s.index_of(&s.coords_of(i).unwrap()).unwrap(), i);
        }
        assert!(s.coords_of(24).is_err());
    }

    #[test]
    fn rejects_bad_shapes_and_kernels() {
        assert!(GridShape::new(&[4]).is_err());
        assert!(GridShape::new(&[4, 0]).is_err());
        assert!(GridShape::new(&[1, 1, 1, 1]).is_err());
        assert!(Kernel::new(4).is_err());
        assert!(Kernel::new(11).is_err());
    }

    #[test]
    fn small_2d_neighborhoods() {
        let s = GridShape::new(&[3, 3]).unwrap();
        let k = Kernel::new(3).unwrap();
        assert_eq!(neighbors(&s, 4, k).unwrap(), vec![0, 1, 2, 3, 5, 6, 7, 8]);
        assert_eq!(neighbors(&s, 0, k).unwrap(), vec![1, 3, 4]);
        assert!(neighbors(&s, 9, k).is_err());
    }

    #[test]
    fn sphere_kernel_matches_distance_scan() {
        let s = GridShape::new(&[5, 5, 5]).unwrap();
        let center = s.index_of(&[2, 2, 2]).unwrap();
        for size in Kernel::SUPPORTED {
            let radius = size as f64 / 2.0;
            let mut brute = Vec::new();
            for i in 0..s.n() {
                let c = s.coords_of(i).unwrap();
                let d2: f64 = c.iter().map(|&x| (x as f64 - 2.0).powi(2)).sum();
                if i != center && d2.sqrt() <= radius {
                    brute.push(i);
                }
            }
            assert_eq!(neighbors(&s, center, Kernel::new(size).unwrap()).unwrap(), brute);
        }
        // radius 1.5: 6 faces + 12 edges + 8 corners (sqrt 3 > 1.5 excluded)
        assert_eq!(neighbors(&s, center, Kernel::new(3).unwrap()).unwrap().len(), 18);
    }

    #[test]
    fn interior_counts_and_symmetry() {
        let s = GridShape::new(&[11, 12]).unwrap();
        for size in Kernel::SUPPORTED {
            let k = Kernel::new(size).unwrap();
            let center = s.index_of(&[5, 6]).unwrap();
            assert_eq!(neighbors(&s, center, k).unwrap().len(), size * size - 1);
            for i in 0..s.n() {
                for j in neighbors(&s, i, k).unwrap() {
                    assert!(neighbors(&s, j, k).unwrap().contains(&i));
                }
            }
        }
        let s3 = GridShape::new(&[4, 5, 3]).unwrap();
        let k = Kernel::new(5).unwrap();
        for i in 0..s3.n() {
            for j in neighbors(&s3, i, k).unwrap() {
                assert!(neighbors(&s3, j, k).unwrap().contains(&i));
            }
        }
    }

    #[test]
    fn image_validation() {
        let s = GridShape::new(&[2, 2]).unwrap();
        assert!(GridImage::new(s.clone(), 1, vec![0.0; 3]).is_err());
        let img = GridImage::new(s, 3, vec![0.5; 12]).unwrap();
        assert_eq!(img.pixel(1), &[0.5, 0.5, 0.5]);
        assert!(img.clone().with_seeds(vec![Seed::Unlabeled; 3]).is_err());
        assert!(img.with_seeds(vec![Seed::Unlabeled; 4]).is_ok());
    }
}
