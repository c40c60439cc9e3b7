use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::geometry::{in_bounds, CameraModel, Projection};
use crate::hsv::{HsvBin, BIN_COUNT};
use crate::image_io::DepthMap;

use super::grid::{BlockSpec, GridSpec};
use super::params::{f1, f2, CarveParams};
use super::model::CarvedVoxel;
use super::PreparedFrame;

/// Sparse per-voxel color histogram, entries kept sorted by bin index.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BinAccumulator {
    entries: Vec<(u16, f64)>,
}

impl BinAccumulator {
    #[inline]
    pub fn add(&mut self, bin: u16, weight: f64) {
        debug_assert!(bin < BIN_COUNT);
        match self.entries.binary_search_by_key(&bin, |e| e.0) {
            Ok(i) => self.entries[i].1 += weight,
            Err(i) => self.entries.insert(i, (bin, weight)),
        }
    }

    pub fn get(&self, bin: u16) -> f64 {
        self.entries
            .binary_search_by_key(&bin, |e| e.0)
            .map_or(0.0, |i| self.entries[i].1)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `(bin, weight)` pairs in increasing bin order.
    pub fn iter(&self) -> impl Iterator<Item = (u16, f64)> + '_ {
        self.entries.iter().copied()
    }

    /// Sum of weights, accumulated in bin order.
    pub fn total(&self) -> f64 {
        self.entries.iter().map(|e| e.1).sum()
    }

    /// Heaviest bin; ties go to the lowest index.
    pub fn argmax(&self) -> Option<(u16, f64)> {
        let mut best: Option<(u16, f64)> = None;
        for &(bin, w) in &self.entries {
            if best.is_none_or(|(_, bw)| w > bw) {
                best = Some((bin, w));
            }
        }
        best
    }

    /// Weights divided by their total. Empty when the total is zero.
    pub fn normalized(&self) -> Vec<(u16, f64)> {
        let total = self.total();
        if total > 0.0 {
            self.entries.iter().map(|&(b, w)| (b, w / total)).collect()
        } else {
            Vec::new()
        }
    }
}

/// Seen-vote test for one projection against one depth map.
///
/// Out-of-bounds projections and depth holes are never consistent.
#[inline]
pub fn depth_consistent(p: &Projection, depth: &DepthMap, params: &CarveParams) -> bool {
    let (w, h) = depth.dimensions();
    let bounds_ok = p.depth > 0.0 && p.x >= 0.0 && p.x < w as f64 && p.y >= 0.0 && p.y < h as f64;
    if !bounds_ok {
        return false;
    }
    match depth.measurement(p.x.floor() as u32, p.y.floor() as u32) {
        Some(expected) => (expected - p.depth).abs() < params.eps_seen,
        None => false,
    }
}

/// Wall-clock split of one accumulation pass.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StageTimes {
    pub projection: Duration,
    pub colorization: Duration,
}

impl std::ops::AddAssign for StageTimes {
    fn add_assign(&mut self, rhs: Self) {
        self.projection += rhs.projection;
        self.colorization += rhs.colorization;
    }
}

const NOT_VISIBLE: u32 = u32::MAX;

/// Accumulators for one block of the grid.
#[derive(Debug, Clone)]
pub struct VoxelBlock {
    grid: GridSpec,
    spec: BlockSpec,
    seen: Vec<u32>,
    bins: Vec<BinAccumulator>,
    frames: u32,
    scratch: Vec<(u32, f64)>,
}

impl VoxelBlock {
    pub fn new(grid: &GridSpec, spec: BlockSpec) -> Self {
        let n = spec.voxel_count();
        VoxelBlock {
            grid: *grid,
            spec,
            seen: vec![0; n],
            bins: vec![BinAccumulator::default(); n],
            frames: 0,
            scratch: Vec::new(),
        }
    }

    pub fn spec(&self) -> &BlockSpec {
        &self.spec
    }

    pub fn frames_processed(&self) -> u32 {
        self.frames
    }

    pub fn voxel_count(&self) -> usize {
        self.seen.len()
    }

    /// Local voxel index to grid coordinates; x fastest.
    #[inline]
    pub fn grid_coords(&self, local: usize) -> [usize; 3] {
        let [nx, ny, _] = self.spec.dims;
        let [sx, sy, sz] = self.spec.start;
        [sx + local % nx, sy + (local / nx) % ny, sz + local / (nx * ny)]
    }

    pub fn local_index(&self, i: usize, j: usize, k: usize) -> Option<usize> {
        let [nx, ny, nz] = self.spec.dims;
        let [sx, sy, sz] = self.spec.start;
        let (li, lj, lk) = (i.checked_sub(sx)?, j.checked_sub(sy)?, k.checked_sub(sz)?);
        (li < nx && lj < ny && lk < nz).then(|| li + nx * (lj + ny * lk))
    }

    pub fn seen(&self) -> &[u32] {
        &self.seen
    }

    pub fn bins(&self) -> &[BinAccumulator] {
        &self.bins
    }

    /// Adds one frame's depth and color votes to every voxel of the block.
    ///
    /// Voxels projecting in bounds and no farther than `max_distance` get a
    /// seen vote when depth-consistent, and a color vote of
    /// `f1(z) * f2(depth - z)` in the bin of the pixel they land on.
    /// Pixels without a depth measurement contribute nothing.
    pub fn accumulate(
        &mut self,
        frame: &PreparedFrame,
        cam: &CameraModel,
        params: &CarveParams,
    ) -> Result<StageTimes> {
        if frame.depth.dimensions() != (cam.width, cam.height) || frame.bins.len() != cam.pixel_count() {
            return Err(Error::DimensionMismatch(format!(
                "frame {} is {}x{}, camera expects {}x{}",
                frame.id,
                frame.depth.width(),
                frame.depth.height(),
                cam.width,
                cam.height
            )));
        }
        let n = self.voxel_count();
        let width = cam.width as usize;

        let t0 = Instant::now();
        self.scratch.clear();
        self.scratch.reserve(n);
        for local in 0..n {
            let [i, j, k] = self.grid_coords(local);
            let p = frame.view.project(&self.grid.voxel_center(i, j, k), cam);
            if in_bounds(&p, cam) && p.depth <= params.max_distance {
                let pixel = p.y.floor() as usize * width + p.x.floor() as usize;
                self.scratch.push((pixel as u32, p.depth));
            } else {
                self.scratch.push((NOT_VISIBLE, 0.0));
            }
        }
        let t1 = Instant::now();

        let depth = frame.depth.as_slice();
        for (local, &(pixel, z)) in self.scratch.iter().enumerate() {
            if pixel == NOT_VISIBLE {
                continue;
            }
            let d = depth[pixel as usize];
            if !(d.is_finite() && d > 0.0) {
                continue;
            }
            let diff = d as f64 - z;
            if diff.abs() < params.eps_seen {
                self.seen[local] += 1;
            }
            let weight = f1(z, params.alpha, params.max_distance) * f2(diff, params.sigma);
            self.bins[local].add(frame.bins[pixel as usize], weight);
        }
        self.frames += 1;
        Ok(StageTimes {
            projection: t1 - t0,
            colorization: t1.elapsed(),
        })
    }

    /// Whether local voxel `local` passes both the seen and the color test,
    /// and with which color bin.
    pub fn decide(&self, local: usize, params: &CarveParams) -> Option<HsvBin> {
        if self.seen[local] <= params.seen_threshold {
            return None;
        }
        let bins = &self.bins[local];
        let total = bins.total();
        if !(total > 0.0) {
            return None;
        }
        let (bin, weight) = bins.argmax()?;
        (weight / total > params.eps_hsv).then(|| HsvBin::new(bin).expect("stored bins are valid"))
    }

    /// Surviving voxels as `(global index, voxel)`, in increasing index order
    /// within the block's x-fastest traversal.
    pub fn finalize(&self, params: &CarveParams) -> Vec<(u64, CarvedVoxel)> {
        let mut out = Vec::new();
        for local in 0..self.voxel_count() {
            if let Some(bin) = self.decide(local, params) {
                let [i, j, k] = self.grid_coords(local);
                let c = self.grid.voxel_center(i, j, k);
                out.push((
                    self.grid.linear_index(i, j, k),
                    CarvedVoxel {
                        center: [c.x, c.y, c.z],
                        rgb: bin.to_rgb(),
                    },
                ));
            }
        }
        out
    }

    #[cfg(test)]
    pub(crate) fn set_votes(&mut self, local: usize, seen: u32, bins: BinAccumulator) {
        self.seen[local] = seen;
        self.bins[local] = bins;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::carving::Frame;
    use crate::geometry::{FramePose, PoseConvention};
    use image::RgbImage;
    use nalgebra::Vector3;

    fn cam() -> CameraModel {
        CameraModel::new(100.0, 100.0, 50.0, 40.0, 100, 80).unwrap()
    }

    fn flat_frame(depth: f32, color: [u8; 3], pose: FramePose) -> PreparedFrame {
        let c = cam();
        let frame = Frame {
            id: 0,
            pose,
            rgb: RgbImage::from_pixel(c.width, c.height, image::Rgb(color)),
            depth: DepthMap::filled(c.width, c.height, depth),
        };
        PreparedFrame::new(&frame, &c, &PoseConvention::default()).unwrap()
    }

    /// Single voxel straight ahead of a camera at the origin looking along +X.
    fn single_voxel_grid(distance: f64) -> GridSpec {
        GridSpec::single_block([distance, 0.0, 0.0], [0.5; 3], 0.5).unwrap()
    }

    #[test]
    fn accumulator_basics() {
        let mut acc = BinAccumulator::default();
        acc.add(7, 0.5);
        acc.add(3, 0.25);
        acc.add(7, 0.25);
        acc.add(1499, 0.75);
        assert_eq!(acc.get(7), 0.75);
        assert_eq!(acc.iter().map(|e| e.0).collect::<Vec<_>>(), vec![3, 7, 1499]);
        assert_eq!(acc.argmax(), Some((7, 0.75)));
        assert_eq!(acc.total(), 1.75);
        let sum: f64 = acc.normalized().iter().map(|e| e.1).sum();
        assert!((sum - 1.0).abs() < 1e-12);
        assert!(BinAccumulator::default().normalized().is_empty());
    }

    #[test]
    fn depth_test_examples() {
        let params = CarveParams {
            eps_seen: 1.0,
            ..CarveParams::for_voxel_size(0.5)
        };
        let p = Projection {
            x: 10.5,
            y: 10.5,
            depth: 10.0,
        };
        assert!(depth_consistent(&p, &DepthMap::filled(20, 20, 10.0), &params));
        assert!(!depth_consistent(&p, &DepthMap::filled(20, 20, 12.0), &params));
        assert!(!depth_consistent(&p, &DepthMap::filled(20, 20, f32::NAN), &params));
        assert!(!depth_consistent(&p, &DepthMap::filled(20, 20, 0.0), &params));
        assert!(!depth_consistent(&p, &DepthMap::filled(10, 10, 10.0), &params));
    }

    #[test]
    fn one_vote_case() {
        let grid = single_voxel_grid(20.0);
        let params = CarveParams::for_voxel_size(0.5);
        let frame = flat_frame(20.0, [200, 30, 30], FramePose::new(Vector3::zeros(), Vector3::zeros()).unwrap());
        let mut block = VoxelBlock::new(&grid, grid.blocks()[0]);
        block.accumulate(&frame, &cam(), &params).unwrap();
        assert_eq!(block.seen(), &[1]);
        let entries: Vec<_> = block.bins()[0].iter().collect();
        assert_eq!(entries.len(), 1);
        assert_eq!(entries[0].0, crate::hsv::rgb_bin([200, 30, 30]).index());
        assert_eq!(entries[0].1, f1(20.0, params.alpha, params.max_distance));
    }

    #[test]
    fn occluded_voxel_gets_almost_no_color() {
        let grid = single_voxel_grid(40.0);
        let params = CarveParams::for_voxel_size(0.5);
        // surface 20 m in front of a voxel at 40 m
        let frame = flat_frame(20.0, [10, 200, 10], FramePose::new(Vector3::zeros(), Vector3::zeros()).unwrap());
        let mut block = VoxelBlock::new(&grid, grid.blocks()[0]);
        block.accumulate(&frame, &cam(), &params).unwrap();
        assert_eq!(block.seen(), &[0]);
        assert!(block.bins()[0].total() < 0.012 * f1(40.0, params.alpha, params.max_distance));
    }

    #[test]
    fn beyond_max_distance_is_ignored() {
        let grid = single_voxel_grid(300.0);
        let params = CarveParams::for_voxel_size(0.5);
        let frame = flat_frame(300.0, [10, 200, 10], FramePose::new(Vector3::zeros(), Vector3::zeros()).unwrap());
        let mut block = VoxelBlock::new(&grid, grid.blocks()[0]);
        block.accumulate(&frame, &cam(), &params).unwrap();
        assert_eq!(block.seen(), &[0]);
        assert!(block.bins()[0].is_empty());
        assert_eq!(block.frames_processed(), 1);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let grid = single_voxel_grid(20.0);
        let params = CarveParams::for_voxel_size(0.5);
        let frame = flat_frame(20.0, [0, 0, 0], FramePose::new(Vector3::zeros(), Vector3::zeros()).unwrap());
        let other = CameraModel::new(100.0, 100.0, 50.0, 40.0, 101, 80).unwrap();
        let mut block = VoxelBlock::new(&grid, grid.blocks()[0]);
        assert!(matches!(
            block.accumulate(&frame, &other, &params),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn finalize_thresholds() {
        let grid = GridSpec::single_block([0.0; 3], [1.0, 0.5, 0.5], 0.5).unwrap();
        let params = CarveParams {
            seen_threshold: 3,
            eps_hsv: 0.5,
            ..CarveParams::for_voxel_size(0.5)
        };
        let mut block = VoxelBlock::new(&grid, grid.blocks()[0]);
        let mut steady = BinAccumulator::default();
        for _ in 0..10 {
            steady.add(42, 0.7);
        }
        block.set_votes(0, 10, steady);
        let mut split = BinAccumulator::default();
        for b in [1, 2, 3, 4] {
            split.add(b, 1.0);
        }
        block.set_votes(1, 10, split);
        let out = block.finalize(&params);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].0, 0);
        assert_eq!(out[0].1.rgb, HsvBin::new(42).unwrap().to_rgb());
    }

    #[test]
    fn strict_thresholds_and_zero_weight() {
        let grid = GridSpec::single_block([0.0; 3], [1.5, 0.5, 0.5], 0.5).unwrap();
        let params = CarveParams {
            seen_threshold: 3,
            eps_hsv: 0.5,
            ..CarveParams::for_voxel_size(0.5)
        };
        let mut block = VoxelBlock::new(&grid, grid.blocks()[0]);
        let mut one = BinAccumulator::default();
        one.add(5, 1.0);
        block.set_votes(0, 3, one.clone());
        let mut half = BinAccumulator::default();
        half.add(5, 1.0);
        half.add(6, 1.0);
        block.set_votes(1, 9, half);
        block.set_votes(2, 9, BinAccumulator::default());
        assert!(block.finalize(&params).is_empty());
    }

    #[test]
    fn argmax_tie_prefers_low_bin() {
        let mut acc = BinAccumulator::default();
        acc.add(900, 1.0);
        acc.add(12, 1.0);
        assert_eq!(acc.argmax(), Some((12, 1.0)));
    }
}
