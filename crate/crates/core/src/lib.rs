//! Multi-scale voxel carving: reconstruct colored voxel models from posed
//! RGB-D frames, render them from new poses, and score the renders.
//!
//! The usual flow is [`dataset::load_scene`] → [`dataset::split_dataset`] →
//! [`carving::carve_scene`] per voxel size → [`render::render`] →
//! [`render::blend_scales`] → [`metrics::psnr`]; [`pipeline::run_pipeline`]
//! chains all of it.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod carving;
pub mod dataset;
pub mod error;
pub mod geometry;
pub mod hsv;
pub mod image_io;
pub mod metrics;
pub mod pipeline;
pub mod render;

pub use carving::{carve_scene, CarveParams, CarvedModel, CarvedVoxel, Frame, GridSpec, PreparedFrame};
pub use dataset::{load_scene, split_dataset, SceneDataset, Split, SyntheticSpec};
pub use error::{Error, Result};
pub use geometry::{CameraModel, FramePose, PoseConvention, View};
pub use metrics::{psnr, PsnrMode};
pub use pipeline::{run_pipeline, EvalReport, PipelineConfig};
pub use render::{blend_scales, render, render_parallel, RenderOptions, RenderedView, ScaleSet};
