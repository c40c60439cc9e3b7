//! Posed RGB-D scenes on disk, the train/test split, and synthetic scenes.
//!
//! A scene is a directory with a `manifest.toml`:
//!
//! ```toml
//! scene_id = "example"
//! frame_stride = 20          # optional, default 20
//!
//! [camera]
//! fx = 1000.0
//! fy = 1000.0
//! cx = 960.0
//! cy = 540.0
//! width = 1920
//! height = 1080
//!
//! [convention]               # optional
//! euler_order = "zyx"        # or "xyz"
//! mount_ypr_deg = [0.0, 0.0, 0.0]
//!
//! [grid]                     # optional, meters
//! origin = [-275.0, -275.0, -10.0]
//! extent = [550.0, 550.0, 80.0]
//! block_size = [50.0, 50.0, 80.0]
//!
//! [[frames]]
//! id = 0
//! rgb = "rgb/000000.png"
//! depth = "depth/000000.pfm"  # PFM meters, or 16-bit PNG millimeters
//! position = [0.0, 0.0, 50.0]
//! ypr_deg = [90.0, 60.0, 0.0] # yaw, pitch, roll
//! split = "train"             # optional
//! ```
//!
//! Depth values are camera-frame z in meters; 0 marks a missing measurement.

mod import;
mod synthetic;

use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use import::{import_telemetry, ImportOptions};
pub use synthetic::{
    generate_synthetic, render_truth, AaBox, Hit, NoiseSpec, Orbit, SceneGeometry, SyntheticScene,
    SyntheticSpec,
};

use crate::carving::{Frame, GridSpec};
use crate::error::{Error, FrameIssue, Result};
use crate::geometry::{euler_to_rotation, CameraModel, EulerOrder, FramePose, PoseConvention};
use crate::image_io::{depth_dimensions, image_dimensions, read_depth, read_rgb};

pub const MANIFEST_NAME: &str = "manifest.toml";
pub const DEFAULT_TRAIN_FRACTION: f64 = 0.8;
pub const DEFAULT_STRIDE: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Region covered by the voxel grid, independent of voxel size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridRegion {
    /// Center of the corner voxel.
    pub origin: [f64; 3],
    pub extent: [f64; 3],
    pub block_size: [f64; 3],
}

impl GridRegion {
    pub fn at_voxel_size(&self, voxel_size: f64) -> Result<GridSpec> {
        GridSpec::new(self.origin, self.extent, voxel_size, self.block_size)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConventionRecord {
    #[serde(default)]
    pub euler_order: EulerOrder,
    #[serde(default)]
    pub mount_ypr_deg: [f64; 3],
}

impl ConventionRecord {
    pub fn to_convention(&self) -> PoseConvention {
        let [y, p, r] = self.mount_ypr_deg;
        PoseConvention {
            order: self.euler_order,
            mount: euler_to_rotation(&Vector3::new(r.to_radians(), p.to_radians(), y.to_radians())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameEntry {
    pub id: u64,
    pub rgb: PathBuf,
    pub depth: PathBuf,
    pub position: [f64; 3],
    pub ypr_deg: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
}

/// On-disk manifest, paths relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub scene_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_stride: Option<usize>,
    pub camera: CameraModel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub convention: Option<ConventionRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridRegion>,
    pub frames: Vec<FrameEntry>,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Manifest {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = toml::to_string(self).map_err(|e| Error::Manifest {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// One frame of a loaded scene with resolved paths.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub id: u64,
    pub rgb_path: PathBuf,
    pub depth_path: PathBuf,
    pub pose: FramePose,
    pub split: Option<Split>,
}

/// A validated scene. Immutable once loaded; splitting returns a new value.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneDataset {
    pub root: PathBuf,
    pub scene_id: String,
    pub camera: CameraModel,
    pub convention: PoseConvention,
    pub grid: Option<GridRegion>,
    pub frame_stride: Option<usize>,
    pub frames: Vec<FrameRecord>,
}

fn manifest_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(MANIFEST_NAME)
    } else {
        path.to_path_buf()
    }
}

/// Loads and validates a scene from its directory or manifest file. All
/// per-frame problems are collected before failing.
pub fn load_scene(path: &Path) -> Result<SceneDataset> {
    let manifest_path = manifest_path(path);
    let manifest = Manifest::read(&manifest_path)?;
    manifest.camera.validate()?;
    let root = manifest_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default();
    let cam = manifest.camera;
    let expected = (cam.width, cam.height);

    let checked: Vec<(Option<FrameRecord>, Vec<FrameIssue>)> = manifest
        .frames
        .par_iter()
        .map(|entry| {
            let mut issues = Vec::new();
            let mut issue = |message: String| {
                issues.push(FrameIssue {
                    frame_id: entry.id,
                    message,
                })
            };
            let pose = FramePose::from_ypr_degrees(entry.position, entry.ypr_deg);
            if let Err(e) = &pose {
                issue(e.to_string());
            }
            let rgb_path = root.join(&entry.rgb);
            let depth_path = root.join(&entry.depth);
            if !rgb_path.is_file() {
                issue(format!("missing rgb file {}", rgb_path.display()));
            } else {
                match image_dimensions(&rgb_path) {
                    Ok(d) if d != expected => issue(format!(
                        "rgb {} is {}x{}, camera is {}x{}",
                        rgb_path.display(),
                        d.0,
                        d.1,
                        expected.0,
                        expected.1
                    )),
                    Ok(_) => {}
                    Err(e) => issue(e.to_string()),
                }
            }
            if !depth_path.is_file() {
                issue(format!("missing depth file {}", depth_path.display()));
            } else {
                match depth_dimensions(&depth_path) {
                    Ok(d) if d != expected => issue(format!(
                        "depth {} is {}x{}, camera is {}x{}",
                        depth_path.display(),
                        d.0,
                        d.1,
                        expected.0,
                        expected.1
                    )),
                    Ok(_) => {}
                    Err(e) => issue(e.to_string()),
                }
            }
            let record = pose.ok().map(|pose| FrameRecord {
                id: entry.id,
                rgb_path,
                depth_path,
                pose,
                split: entry.split,
            });
            (record, issues)
        })
        .collect();

    let mut issues = Vec::new();
    let mut frames = Vec::with_capacity(checked.len());
    for (record, mut frame_issues) in checked {
        issues.append(&mut frame_issues);
        frames.extend(record);
    }
    for pair in manifest.frames.windows(2) {
        if pair[1].id <= pair[0].id {
            issues.push(FrameIssue {
                frame_id: pair[1].id,
                message: format!("frame ids must be strictly increasing (after {})", pair[0].id),
            });
        }
    }
    if !issues.is_empty() {
        return Err(Error::Dataset(issues));
    }
    Ok(SceneDataset {
        root,
        scene_id: manifest.scene_id,
        camera: cam,
        convention: manifest
            .convention
            .map(|c| c.to_convention())
            .unwrap_or_default(),
        grid: manifest.grid,
        frame_stride: manifest.frame_stride,
        frames,
    })
}

impl SceneDataset {
    pub fn frames_in(&self, split: Split) -> impl Iterator<Item = &FrameRecord> {
        self.frames.iter().filter(move |f| f.split == Some(split))
    }

    pub fn load_frame(&self, record: &FrameRecord) -> Result<Frame> {
        let rgb = read_rgb(&record.rgb_path)?;
        let depth = read_depth(&record.depth_path)?;
        let expected = (self.camera.width, self.camera.height);
        if rgb.dimensions() != expected || depth.dimensions() != expected {
            return Err(Error::Dataset(vec![FrameIssue {
                frame_id: record.id,
                message: format!(
                    "rgb {:?} / depth {:?} do not match camera {:?}",
                    rgb.dimensions(),
                    depth.dimensions(),
                    expected
                ),
            }]));
        }
        Ok(Frame {
            id: record.id,
            pose: record.pose,
            rgb,
            depth,
        })
    }

    /// Decodes the frames of one split concurrently, in frame order.
    pub fn load_frames(&self, split: Split) -> Result<Vec<Frame>> {
        let records: Vec<&FrameRecord> = self.frames_in(split).collect();
        records.par_iter().map(|r| self.load_frame(r)).collect()
    }

    /// Manifest describing this dataset, paths made relative to `root` when possible.
    pub fn to_manifest(&self) -> Manifest {
        let rel = |p: &Path| p.strip_prefix(&self.root).unwrap_or(p).to_path_buf();
        Manifest {
            scene_id: self.scene_id.clone(),
            frame_stride: self.frame_stride,
            camera: self.camera,
            convention: None,
            grid: self.grid,
            frames: self
                .frames
                .iter()
                .map(|f| FrameEntry {
                    id: f.id,
                    rgb: rel(&f.rgb_path),
                    depth: rel(&f.depth_path),
                    position: f.pose.position.into(),
                    ypr_deg: f.pose.ypr_degrees(),
                    split: f.split,
                })
                .collect(),
        }
    }
}

/// Keeps every `stride`-th frame and tags the first `ceil(train_fraction * n)`
/// of them as training frames, the rest as test frames.
pub fn split_dataset(ds: &SceneDataset, train_fraction: f64, stride: usize) -> Result<SceneDataset> {
    if stride == 0 {
        return Err(Error::InvalidParams("stride must be at least 1".into()));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidParams(format!(
            "train fraction must be in (0, 1), got {train_fraction}"
        )));
    }
    let sampled: Vec<&FrameRecord> = ds.frames.iter().step_by(stride).collect();
    let n = sampled.len();
    if n < 2 {
        return Err(Error::EmptyDataset(format!(
            "{n} frame(s) after sampling every {stride}; need at least 2"
        )));
    }
    // guard against 0.8 * n landing a hair above an integer
    let n_train = ((train_fraction * n as f64) - 1e-9).ceil() as usize;
    if n_train >= n {
        return Err(Error::EmptyDataset(format!(
            "test split is empty: {n_train} of {n} sampled frames go to training"
        )));
    }
    let frames = sampled
        .into_iter()
        .enumerate()
        .map(|(i, f)| FrameRecord {
            split: Some(if i < n_train { Split::Train } else { Split::Test }),
            ..f.clone()
        })
        .collect();
    Ok(SceneDataset {
        frames,
        ..ds.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dataset(n: usize) -> SceneDataset {
        SceneDataset {
            root: PathBuf::new(),
            scene_id: "t".into(),
            camera: CameraModel::new(10.0, 10.0, 5.0, 5.0, 10, 10).unwrap(),
            convention: PoseConvention::default(),
            grid: None,
            frame_stride: None,
            frames: (0..n as u64)
                .map(|id| FrameRecord {
                    id,
                    rgb_path: PathBuf::new(),
                    depth_path: PathBuf::new(),
                    pose: FramePose::new(Vector3::zeros(), Vector3::zeros()).unwrap(),
                    split: None,
                })
                .collect(),
        }
    }

    fn counts(ds: &SceneDataset) -> (usize, usize) {
        (ds.frames_in(Split::Train).count(), ds.frames_in(Split::Test).count())
    }

    #[test]
    fn eighty_twenty() {
        assert_eq!(counts(&split_dataset(&dataset(100), 0.8, 1).unwrap()), (80, 20));
        assert_eq!(counts(&split_dataset(&dataset(5), 0.8, 1).unwrap()), (4, 1));
        assert_eq!(counts(&split_dataset(&dataset(7), 0.8, 1).unwrap()), (6, 1));
    }

    #[test]
    fn stride_sampling() {
        let s = split_dataset(&dataset(9000), 0.8, 20).unwrap();
        assert_eq!(s.frames.len(), 450);
        assert_eq!(counts(&s), (360, 90));
        assert_eq!(s.frames[1].id, 20);
    }

    #[test]
    fn chronological_partition() {
        let s = split_dataset(&dataset(37), 0.8, 3).unwrap();
        let train: Vec<u64> = s.frames_in(Split::Train).map(|f| f.id).collect();
        let test: Vec<u64> = s.frames_in(Split::Test).map(|f| f.id).collect();
        assert!(train.iter().max() < test.iter().min());
        assert_eq!(train.len() + test.len(), 13);
    }

    #[test]
    fn too_few_frames() {
        assert!(matches!(split_dataset(&dataset(2), 0.8, 1), Err(Error::EmptyDataset(_))));
        assert!(matches!(split_dataset(&dataset(1), 0.8, 1), Err(Error::EmptyDataset(_))));
        assert!(split_dataset(&dataset(100), 0.8, 20).is_ok());
        assert!(split_dataset(&dataset(30), 0.8, 20).is_err());
        assert!(split_dataset(&dataset(20), 0.8, 20).is_err());
        assert!(split_dataset(&dataset(10), 0.8, 0).is_err());
        assert!(split_dataset(&dataset(10), 1.0, 1).is_err());
    }
}
