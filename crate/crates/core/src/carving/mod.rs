//! Depth- and color-consistency voting over a block-partitioned voxel grid.
//!
//! Each block is independent: it sees every frame, in increasing frame id
//! order, and is finalized on its own. The scene model is the union of the
//! block results sorted by global voxel index, so it does not depend on how
//! the grid is partitioned or in which order blocks run.

mod block;
mod grid;
mod model;
mod params;

use std::time::{Duration, Instant};

use image::RgbImage;
use rayon::prelude::*;

pub use block::{depth_consistent, BinAccumulator, StageTimes, VoxelBlock};
pub use grid::{BlockSpec, GridSpec};
pub use model::{CarvedModel, CarvedVoxel, FORMAT_VERSION, MAGIC};
pub use params::{f1, f2, CarveParams};

use crate::error::{Error, Result};
use crate::geometry::{CameraModel, FramePose, PoseConvention, View};
use crate::hsv::rgb_bin;
use crate::image_io::DepthMap;

/// One posed RGB-D frame held in memory.
#[derive(Debug, Clone)]
pub struct Frame {
    pub id: u64,
    pub pose: FramePose,
    pub rgb: RgbImage,
    pub depth: DepthMap,
}

/// A frame reduced to what voting needs: extrinsics, per-pixel color bin,
/// and depth.
#[derive(Debug, Clone)]
pub struct PreparedFrame {
    pub id: u64,
    pub view: View,
    pub bins: Vec<u16>,
    pub depth: DepthMap,
}

impl PreparedFrame {
    pub fn new(frame: &Frame, cam: &CameraModel, convention: &PoseConvention) -> Result<Self> {
        frame.pose.validate()?;
        let dims = (cam.width, cam.height);
        if frame.rgb.dimensions() != dims || frame.depth.dimensions() != dims {
            return Err(Error::DimensionMismatch(format!(
                "frame {}: rgb {:?} / depth {:?} vs camera {:?}",
                frame.id,
                frame.rgb.dimensions(),
                frame.depth.dimensions(),
                dims
            )));
        }
        Ok(PreparedFrame {
            id: frame.id,
            view: View::new(&frame.pose, convention),
            bins: frame.rgb.pixels().map(|p| rgb_bin(p.0).index()).collect(),
            depth: frame.depth.clone(),
        })
    }
}

pub fn prepare_frames(
    frames: &[Frame],
    cam: &CameraModel,
    convention: &PoseConvention,
) -> Result<Vec<PreparedFrame>> {
    frames
        .par_iter()
        .map(|f| PreparedFrame::new(f, cam, convention))
        .collect()
}

/// Timing of a carving run. Stage times are summed over blocks.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CarveTimings {
    pub stages: StageTimes,
    pub wall: Duration,
    pub frames: usize,
    pub blocks: usize,
}

#[derive(Debug, Clone)]
pub struct CarveOutput {
    pub model: CarvedModel,
    pub timings: CarveTimings,
}

fn check_inputs(frames: &[PreparedFrame], grid: &GridSpec, params: &CarveParams) -> Result<()> {
    if frames.is_empty() {
        return Err(Error::EmptyDataset("carving needs at least one training frame".into()));
    }
    params.validate()?;
    grid.validate()?;
    if (grid.voxel_size - params.voxel_size).abs() > 1e-12 * params.voxel_size {
        return Err(Error::InvalidParams(format!(
            "grid voxel size {} differs from parameter voxel size {}",
            grid.voxel_size, params.voxel_size
        )));
    }
    Ok(())
}

fn sorted_by_id(frames: &[PreparedFrame]) -> Vec<&PreparedFrame> {
    let mut sorted: Vec<&PreparedFrame> = frames.iter().collect();
    sorted.sort_by_key(|f| f.id);
    sorted
}

/// Accumulates all frames into one block and returns its surviving voxels.
pub fn carve_block(
    grid: &GridSpec,
    spec: BlockSpec,
    frames: &[PreparedFrame],
    cam: &CameraModel,
    params: &CarveParams,
) -> Result<(Vec<(u64, CarvedVoxel)>, StageTimes)> {
    check_inputs(frames, grid, params)?;
    let (block, times) = accumulate_block(grid, spec, &sorted_by_id(frames), cam, params)?;
    Ok((block.finalize(params), times))
}

/// Runs every frame through a fresh block and returns the raw accumulators.
pub fn accumulate_block_votes(
    grid: &GridSpec,
    spec: BlockSpec,
    frames: &[PreparedFrame],
    cam: &CameraModel,
    params: &CarveParams,
) -> Result<VoxelBlock> {
    check_inputs(frames, grid, params)?;
    Ok(accumulate_block(grid, spec, &sorted_by_id(frames), cam, params)?.0)
}

fn accumulate_block(
    grid: &GridSpec,
    spec: BlockSpec,
    frames: &[&PreparedFrame],
    cam: &CameraModel,
    params: &CarveParams,
) -> Result<(VoxelBlock, StageTimes)> {
    let mut block = VoxelBlock::new(grid, spec);
    let mut times = StageTimes::default();
    for frame in frames {
        times += block.accumulate(frame, cam, params)?;
    }
    Ok((block, times))
}

/// Merges per-block survivors into a model ordered by global voxel index.
pub fn merge_fragments(
    fragments: impl IntoIterator<Item = Vec<(u64, CarvedVoxel)>>,
    voxel_size: f64,
    scene_id: &str,
    params: &CarveParams,
) -> CarvedModel {
    let mut all: Vec<(u64, CarvedVoxel)> = fragments.into_iter().flatten().collect();
    all.sort_by_key(|e| e.0);
    CarvedModel {
        voxel_size,
        voxels: all.into_iter().map(|e| e.1).collect(),
        scene_id: scene_id.to_string(),
        params: *params,
    }
}

/// Carves the whole grid, blocks in parallel on the current rayon pool.
pub fn carve_scene(
    frames: &[PreparedFrame],
    cam: &CameraModel,
    grid: &GridSpec,
    params: &CarveParams,
    scene_id: &str,
) -> Result<CarveOutput> {
    check_inputs(frames, grid, params)?;
    let start = Instant::now();
    let sorted = sorted_by_id(frames);
    let blocks = grid.blocks();
    let results: Vec<(Vec<(u64, CarvedVoxel)>, StageTimes)> = blocks
        .par_iter()
        .map(|&spec| {
            let (block, times) = accumulate_block(grid, spec, &sorted, cam, params)?;
            Ok((block.finalize(params), times))
        })
        .collect::<Result<_>>()?;
    let mut stages = StageTimes::default();
    let mut fragments = Vec::with_capacity(results.len());
    for (fragment, times) in results {
        stages += times;
        fragments.push(fragment);
    }
    let model = merge_fragments(fragments, grid.voxel_size, scene_id, params);
    Ok(CarveOutput {
        model,
        timings: CarveTimings {
            stages,
            wall: start.elapsed(),
            frames: frames.len(),
            blocks: blocks.len(),
        },
    })
}
