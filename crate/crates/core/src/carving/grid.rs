use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned voxel grid split into equally sized blocks.
///
/// `origin` is the center of the corner voxel `(0, 0, 0)`; voxel `(i, j, k)`
/// is centered at `origin + voxel_size * (i, j, k)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub origin: [f64; 3],
    /// Length, width and height covered, meters.
    pub extent: [f64; 3],
    pub voxel_size: f64,
    /// Block edge lengths, meters.
    pub block_size: [f64; 3],
}

/// Voxel range of one block inside its grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BlockSpec {
    pub start: [usize; 3],
    pub dims: [usize; 3],
}

impl BlockSpec {
    pub fn voxel_count(&self) -> usize {
        self.dims.iter().product()
    }
}

const MULTIPLE_TOL: f64 = 1e-6;

fn count_of(length: f64, step: f64) -> Option<usize> {
    let n = length / step;
    let r = n.round();
    ((n - r).abs() <= MULTIPLE_TOL * r.max(1.0) && r >= 1.0).then_some(r as usize)
}

impl GridSpec {
    pub fn new(origin: [f64; 3], extent: [f64; 3], voxel_size: f64, block_size: [f64; 3]) -> Result<Self> {
        let grid = GridSpec {
            origin,
            extent,
            voxel_size,
            block_size,
        };
        grid.validate()?;
        Ok(grid)
    }

    /// Grid with a single block covering the whole extent.
    pub fn single_block(origin: [f64; 3], extent: [f64; 3], voxel_size: f64) -> Result<Self> {
        Self::new(origin, extent, voxel_size, extent)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.voxel_size > 0.0 && self.voxel_size.is_finite()) {
            return Err(Error::InvalidGrid(format!(
                "voxel size must be positive, got {}",
                self.voxel_size
            )));
        }
        if !self.origin.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidGrid("non-finite origin".into()));
        }
        for axis in 0..3 {
            let (e, b) = (self.extent[axis], self.block_size[axis]);
            let n = count_of(e, self.voxel_size).ok_or_else(|| {
                Error::InvalidGrid(format!(
                    "extent {e} on axis {axis} is not a positive multiple of voxel size {}",
                    self.voxel_size
                ))
            })?;
            let nb = count_of(b, self.voxel_size).ok_or_else(|| {
                Error::InvalidGrid(format!(
                    "block size {b} on axis {axis} is not a positive multiple of voxel size {}",
                    self.voxel_size
                ))
            })?;
            if n % nb != 0 {
                return Err(Error::InvalidGrid(format!(
                    "block size {b} does not divide extent {e} on axis {axis}"
                )));
            }
        }
        Ok(())
    }

    /// Same region and block layout at a different voxel size.
    pub fn with_voxel_size(&self, voxel_size: f64) -> Result<Self> {
        Self::new(self.origin, self.extent, voxel_size, self.block_size)
    }

    pub fn with_block_size(&self, block_size: [f64; 3]) -> Result<Self> {
        Self::new(self.origin, self.extent, self.voxel_size, block_size)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.extent
            .map(|e| count_of(e, self.voxel_size).expect("validated grid"))
    }

    pub fn block_dims(&self) -> [usize; 3] {
        self.block_size
            .map(|b| count_of(b, self.voxel_size).expect("validated grid"))
    }

    pub fn voxel_count(&self) -> usize {
        self.dims().iter().product()
    }

    pub fn block_count(&self) -> usize {
        let (d, b) = (self.dims(), self.block_dims());
        (0..3).map(|a| d[a] / b[a]).product()
    }

    /// All blocks, x fastest.
    pub fn blocks(&self) -> Vec<BlockSpec> {
        let (d, b) = (self.dims(), self.block_dims());
        let mut out = Vec::with_capacity(self.block_count());
        for bz in 0..d[2] / b[2] {
            for by in 0..d[1] / b[1] {
                for bx in 0..d[0] / b[0] {
                    out.push(BlockSpec {
                        start: [bx * b[0], by * b[1], bz * b[2]],
                        dims: b,
                    });
                }
            }
        }
        out
    }

    #[inline]
    pub fn voxel_center(&self, i: usize, j: usize, k: usize) -> Vector3<f64> {
        Vector3::new(
            self.origin[0] + self.voxel_size * i as f64,
            self.origin[1] + self.voxel_size * j as f64,
            self.origin[2] + self.voxel_size * k as f64,
        )
    }

    /// Global serialization index, x fastest.
    #[inline]
    pub fn linear_index(&self, i: usize, j: usize, k: usize) -> u64 {
        let d = self.dims();
        (i + d[0] * (j + d[1] * k)) as u64
    }

    /// Grid coordinates of the voxel containing `p`, if inside the grid.
    pub fn voxel_of(&self, p: &Vector3<f64>) -> Option<[usize; 3]> {
        let d = self.dims();
        let mut out = [0usize; 3];
        for a in 0..3 {
            let f = ((p[a] - self.origin[a]) / self.voxel_size + 0.5).floor();
            if f < 0.0 || f >= d[a] as f64 {
                return None;
            }
            out[a] = f as usize;
        }
        Some(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dims_and_blocks() {
        let g = GridSpec::new([0.0; 3], [10.0, 5.0, 2.0], 0.5, [5.0, 5.0, 1.0]).unwrap();
        assert_eq!(g.dims(), [20, 10, 4]);
        assert_eq!(g.block_dims(), [10, 10, 2]);
        assert_eq!(g.block_count(), 4);
        let blocks = g.blocks();
        assert_eq!(blocks.len(), 4);
        assert_eq!(blocks[1].start, [10, 0, 0]);
        assert_eq!(blocks[2].start, [0, 0, 2]);
        let total: usize = blocks.iter().map(BlockSpec::voxel_count).sum();
        assert_eq!(total, g.voxel_count());
    }

    #[test]
    fn city_scale_grid() {
        let g = GridSpec::new([0.0; 3], [550.0, 550.0, 80.0], 0.5, [50.0, 50.0, 80.0]).unwrap();
        assert_eq!(g.dims(), [1100, 1100, 160]);
        assert_eq!(g.block_count(), 121);
    }

    #[test]
    fn rejects_inconsistent_layouts() {
        assert!(GridSpec::new([0.0; 3], [10.2, 5.0, 2.0], 0.5, [10.2, 5.0, 2.0]).is_err());
        assert!(GridSpec::new([0.0; 3], [10.0, 5.0, 2.0], 0.5, [3.0, 5.0, 2.0]).is_err());
        assert!(GridSpec::new([0.0; 3], [10.0, 5.0, 2.0], 0.0, [10.0, 5.0, 2.0]).is_err());
        assert!(GridSpec::new([0.0; 3], [0.0, 5.0, 2.0], 0.5, [0.0, 5.0, 2.0]).is_err());
    }

    #[test]
    fn rescaling_keeps_region() {
        let g = GridSpec::new([-10.0, -10.0, -1.0], [20.0, 20.0, 6.0], 0.5, [10.0, 10.0, 6.0])
            .unwrap();
        let fine = g.with_voxel_size(0.125).unwrap();
        assert_eq!(fine.dims(), [160, 160, 48]);
        assert_eq!(fine.voxel_center(8, 8, 8), nalgebra::Vector3::new(-9.0, -9.0, 0.0));
        assert_eq!(fine.voxel_of(&nalgebra::Vector3::new(-9.01, -8.95, 0.06)), Some([8, 8, 8]));
        assert_eq!(fine.voxel_of(&nalgebra::Vector3::new(-11.0, 0.0, 0.0)), None);
    }
}
