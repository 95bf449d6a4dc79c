//! Dense 3D grid with x-fastest (row-major) layout.

use crate::{Error, Result};

/// Voxel grid; index order is `(k*ny + j)*nx + i`, so x varies fastest and
/// one axial slice (fixed k) is a contiguous run of `ny*nx` elements.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid3<T> {
    nx: usize,
    ny: usize,
    nz: usize,
    data: Vec<T>,
}

impl<T: Copy + Default> Grid3<T> {
    pub fn new(nx: usize, ny: usize, nz: usize) -> Self {
        Grid3 {
            nx,
            ny,
            nz,
            data: vec![T::default(); nx * ny * nz],
        }
    }

    pub fn from_vec(nx: usize, ny: usize, nz: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != nx * ny * nz {
            return Err(Error::shape(format!(
                "grid {nx}x{ny}x{nz} needs {} elements, got {}",
                nx * ny * nz,
                data.len()
            )));
        }
        Ok(Grid3 { nx, ny, nz, data })
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.nx, self.ny, self.nz)
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn nz(&self) -> usize {
        self.nz
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize, k: usize) -> T {
        debug_assert!(i < self.nx && j < self.ny && k < self.nz);
        self.data[(k * self.ny + j) * self.nx + i]
    }

    #[inline]
    pub fn at_mut(&mut self, i: usize, j: usize, k: usize) -> &mut T {
        debug_assert!(i < self.nx && j < self.ny && k < self.nz);
        &mut self.data[(k * self.ny + j) * self.nx + i]
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    /// Contiguous axial slice at height k, length ny*nx.
    pub fn slice_xy(&self, k: usize) -> &[T] {
        let plane = self.ny * self.nx;
        &self.data[k * plane..(k + 1) * plane]
    }

    pub fn slice_xy_mut(&mut self, k: usize) -> &mut [T] {
        let plane = self.ny * self.nx;
        &mut self.data[k * plane..(k + 1) * plane]
    }
}

impl Grid3<u8> {
    /// Number of nonzero voxels.
    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn any_in_slice(&self, k: usize) -> bool {
        self.slice_xy(k).iter().any(|&v| v != 0)
    }
}

impl Grid3<f32> {
    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_x_fastest() {
        let mut g = Grid3::<f32>::new(3, 2, 2);
        *g.at_mut(1, 0, 0) = 5.0;
        *g.at_mut(0, 1, 0) = 6.0;
        *g.at_mut(0, 0, 1) = 7.0;
        assert_eq!(g.data()[1], 5.0);
        assert_eq!(g.data()[3], 6.0);
        assert_eq!(g.data()[6], 7.0);
    }

    #[test]
    fn slice_xy_is_one_axial_plane() {
        let data: Vec<u8> = (0..12).collect();
        let g = Grid3::from_vec(2, 3, 2, data).unwrap();
        assert_eq!(g.slice_xy(1), &[6, 7, 8, 9, 10, 11]);
        assert!(g.any_in_slice(1));
    }

    #[test]
    fn from_vec_rejects_bad_length() {
        assert!(Grid3::<u8>::from_vec(2, 2, 2, vec![0; 7]).is_err());
    }

    #[test]
    fn count_ones_counts_nonzero() {
        let g = Grid3::from_vec(2, 2, 1, vec![0u8, 1, 1, 0]).unwrap();
        assert_eq!(g.count_ones(), 2);
    }
}
