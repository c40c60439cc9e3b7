//! End-to-end run: split, carve every scale, render and blend every frame,
//! score against the captured images, write artifacts and a report.
//!
//! Output directory layout:
//!
//! ```text
//! models/scale_<vs>.msvc (+ .json sidecar)
//! renders/<split>/<id>_s<vs>.png, _mask.png, _depth.pfm    one per scale
//! blended/<split>/<id>.png, <id>_mask.png                  final composite
//! outputs.json                                             per-frame index
//! report.txt, report.json
//! FAILED                                                   only on error
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::carving::{carve_scene, CarveParams, CarvedModel, PreparedFrame};
use crate::dataset::{split_dataset, FrameRecord, GridRegion, SceneDataset, Split, DEFAULT_STRIDE};
use crate::error::{Error, Result};
use crate::image_io::read_rgb;
use crate::metrics::{format_db, psnr, PsnrMode};
use crate::render::{blend_scales, render, RenderOptions, RenderedView, ScaleSet};

/// Parameter overrides; unset fields take the per-scale defaults.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParamOverrides {
    /// Absolute tolerance in meters, applied at every scale.
    pub eps_seen: Option<f64>,
    pub seen_threshold: Option<u32>,
    pub alpha: Option<f64>,
    pub sigma: Option<f64>,
    pub eps_hsv: Option<f64>,
    pub max_distance: Option<f64>,
}

impl ParamOverrides {
    pub fn params_for(&self, voxel_size: f64) -> CarveParams {
        let d = CarveParams::for_voxel_size(voxel_size);
        CarveParams {
            voxel_size,
            eps_seen: self.eps_seen.unwrap_or(d.eps_seen),
            seen_threshold: self.seen_threshold.unwrap_or(d.seen_threshold),
            alpha: self.alpha.unwrap_or(d.alpha),
            sigma: self.sigma.unwrap_or(d.sigma),
            eps_hsv: self.eps_hsv.unwrap_or(d.eps_hsv),
            max_distance: self.max_distance.unwrap_or(d.max_distance),
        }
    }

    /// Fields set in `other` replace ours.
    pub fn merged(self, other: ParamOverrides) -> Self {
        ParamOverrides {
            eps_seen: other.eps_seen.or(self.eps_seen),
            seen_threshold: other.seen_threshold.or(self.seen_threshold),
            alpha: other.alpha.or(self.alpha),
            sigma: other.sigma.or(self.sigma),
            eps_hsv: other.eps_hsv.or(self.eps_hsv),
            max_distance: other.max_distance.or(self.max_distance),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Voxel sizes in meters, any order.
    pub scales: Vec<f64>,
    #[serde(flatten)]
    pub params: ParamOverrides,
    pub train_fraction: f64,
    /// Frame subsampling; falls back to the manifest, then to 20.
    pub stride: Option<usize>,
    /// Replaces the manifest's grid region.
    pub grid: Option<GridRegion>,
    /// Worker threads; all cores when unset.
    pub jobs: Option<usize>,
    pub write_images: bool,
    pub write_models: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            scales: vec![0.5, 0.25, 0.125],
            params: ParamOverrides::default(),
            train_fraction: crate::dataset::DEFAULT_TRAIN_FRACTION,
            stride: None,
            grid: None,
            jobs: None,
            write_images: true,
            write_models: true,
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidParams(format!("config: {e}")))
    }

    pub fn scale_set(&self) -> Result<ScaleSet> {
        ScaleSet::from_unordered(self.scales.clone())
    }
}

/// PSNR in dB; serialized as a number, or the string `"inf"`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Db(pub f64);

impl Serialize for Db {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.0.is_finite() {
            s.serialize_f64(self.0)
        } else {
            s.serialize_str(&format_db(self.0))
        }
    }
}

impl<'de> Deserialize<'de> for Db {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Db(v)),
            Raw::Text(t) if t == "inf" => Ok(Db(f64::INFINITY)),
            Raw::Text(t) => Err(serde::de::Error::custom(format!("bad dB value {t:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameScore {
    pub id: u64,
    pub split: Split,
    pub psnr: Db,
    /// Over pixels some scale covered; absent when none did.
    pub psnr_unmasked: Option<Db>,
    pub empty_fraction: f64,
    /// Empty fraction of each scale's own render, finest first.
    pub scale_empty_fraction: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub frames: usize,
    pub mean_psnr: Db,
    pub mean_psnr_unmasked: Option<Db>,
    pub mean_empty_fraction: f64,
    pub mean_scale_empty_fraction: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleReport {
    pub voxel_size: f64,
    pub params: CarveParams,
    pub voxels: usize,
    pub blocks: usize,
    pub carve_seconds: f64,
    /// Stage times summed over blocks, divided by training images.
    pub projection_seconds_per_image: f64,
    pub colorization_seconds_per_image: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub scene_id: String,
    pub train_frames: Vec<u64>,
    pub test_frames: Vec<u64>,
    pub scales: Vec<ScaleReport>,
    pub train: SplitSummary,
    pub test: SplitSummary,
    pub frames: Vec<FrameScore>,
    pub render_seconds: f64,
    pub total_seconds: f64,
}

impl EvalReport {
    pub fn summary(&self, split: Split) -> &SplitSummary {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }

    /// `key = value` lines, one metric per line.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "scene_id = {}", self.scene_id);
        let _ = writeln!(s, "train_frames = {}", self.train_frames.len());
        let _ = writeln!(s, "test_frames = {}", self.test_frames.len());
        for sc in &self.scales {
            let p = format!("scale.{}", sc.voxel_size);
            let _ = writeln!(s, "{p}.voxels = {}", sc.voxels);
            let _ = writeln!(s, "{p}.blocks = {}", sc.blocks);
            let _ = writeln!(s, "{p}.carve_seconds = {:.4}", sc.carve_seconds);
            let _ = writeln!(s, "{p}.projection_seconds_per_image = {:.6}", sc.projection_seconds_per_image);
            let _ = writeln!(s, "{p}.colorization_seconds_per_image = {:.6}", sc.colorization_seconds_per_image);
        }
        for (name, sum) in [("train", &self.train), ("test", &self.test)] {
            let _ = writeln!(s, "{name}.mean_psnr = {}", format_db(sum.mean_psnr.0));
            let unmasked = sum.mean_psnr_unmasked.map_or("none".into(), |d| format_db(d.0));
            let _ = writeln!(s, "{name}.mean_psnr_unmasked = {unmasked}");
            let _ = writeln!(s, "{name}.empty_fraction = {:.6}", sum.mean_empty_fraction);
            for (sc, e) in self.scales.iter().zip(&sum.mean_scale_empty_fraction) {
                let _ = writeln!(s, "{name}.empty_fraction.scale.{} = {e:.6}", sc.voxel_size);
            }
        }
        let _ = writeln!(s, "render_seconds = {:.4}", self.render_seconds);
        let _ = writeln!(s, "total_seconds = {:.4}", self.total_seconds);
        s
    }
}

/// Per-frame entry of `outputs.json`, the hand-off to downstream tools.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputEntry {
    pub id: u64,
    pub split: Split,
    pub position: [f64; 3],
    pub ypr_deg: [f64; 3],
    pub ground_truth: PathBuf,
    pub blended: PathBuf,
    pub blended_mask: PathBuf,
    pub scales: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputIndex {
    pub scene_id: String,
    pub width: u32,
    pub height: u32,
    pub voxel_sizes: Vec<f64>,
    pub frames: Vec<OutputEntry>,
}

pub fn split_name(split: Split) -> &'static str {
    match split {
        Split::Train => "train",
        Split::Test => "test",
    }
}

fn mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn summarize(scores: &[FrameScore], split: Split, n_scales: usize) -> SplitSummary {
    let picked: Vec<&FrameScore> = scores.iter().filter(|f| f.split == split).collect();
    SplitSummary {
        frames: picked.len(),
        mean_psnr: Db(mean(picked.iter().map(|f| f.psnr.0)).unwrap_or(f64::NAN)),
        mean_psnr_unmasked: mean(picked.iter().filter_map(|f| f.psnr_unmasked.map(|d| d.0))).map(Db),
        mean_empty_fraction: mean(picked.iter().map(|f| f.empty_fraction)).unwrap_or(f64::NAN),
        mean_scale_empty_fraction: (0..n_scales)
            .map(|s| mean(picked.iter().map(|f| f.scale_empty_fraction[s])).unwrap_or(f64::NAN))
            .collect(),
    }
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn scale_tag(vs: f64) -> String {
    format!("{vs}")
}

/// Carves each scale from the training frames of an already split dataset.
pub fn carve_scales(
    ds: &SceneDataset,
    config: &PipelineConfig,
) -> Result<Vec<(CarvedModel, ScaleReport)>> {
    let scales = config.scale_set().map_err(|e| e.in_stage("carve"))?;
    let region = config
        .grid
        .or(ds.grid)
        .ok_or_else(|| Error::InvalidGrid("no grid region in the manifest or the configuration".into()))
        .map_err(|e| e.in_stage("carve"))?;
    let train: Vec<&FrameRecord> = ds.frames_in(Split::Train).collect();
    if train.is_empty() {
        return Err(Error::EmptyDataset("no training frames".into()).in_stage("carve"));
    }
    let prepared: Vec<PreparedFrame> = {
        use rayon::prelude::*;
        train
            .par_iter()
            .map(|r| PreparedFrame::new(&ds.load_frame(r)?, &ds.camera, &ds.convention))
            .collect::<Result<_>>()
            .map_err(|e| e.in_stage("load"))?
    };
    let n = prepared.len() as f64;
    scales
        .sizes()
        .iter()
        .map(|&vs| {
            let params = config.params.params_for(vs);
            let grid = region.at_voxel_size(vs)?;
            let out = carve_scene(&prepared, &ds.camera, &grid, &params, &ds.scene_id)?;
            let t = out.timings;
            let report = ScaleReport {
                voxel_size: vs,
                params,
                voxels: out.model.len(),
                blocks: t.blocks,
                carve_seconds: t.wall.as_secs_f64(),
                projection_seconds_per_image: t.stages.projection.as_secs_f64() / n,
                colorization_seconds_per_image: t.stages.colorization.as_secs_f64() / n,
            };
            Ok((out.model, report))
        })
        .collect::<Result<_>>()
        .map_err(|e: Error| e.in_stage("carve"))
}

fn run_inner(ds: &SceneDataset, config: &PipelineConfig, out: Option<&Path>) -> Result<EvalReport> {
    use rayon::prelude::*;

    let start = Instant::now();
    let stride = config.stride.or(ds.frame_stride).unwrap_or(DEFAULT_STRIDE);
    let ds = split_dataset(ds, config.train_fraction, stride).map_err(|e| e.in_stage("split"))?;
    let carved = carve_scales(&ds, config)?;
    let sizes: Vec<f64> = carved.iter().map(|(m, _)| m.voxel_size).collect();

    if let Some(dir) = out.filter(|_| config.write_models) {
        let models = dir.join("models");
        create_dir(&models).map_err(|e| e.in_stage("write"))?;
        for (model, _) in &carved {
            let path = models.join(format!("scale_{}.msvc", scale_tag(model.voxel_size)));
            model.save(&path).map_err(|e| e.in_stage("write"))?;
        }
    }
    let image_dirs = |root: &Path| -> Result<()> {
        for kind in ["renders", "blended"] {
            for split in ["train", "test"] {
                create_dir(&root.join(kind).join(split))?;
            }
        }
        Ok(())
    };
    let write_images = out.filter(|_| config.write_images);
    if let Some(dir) = write_images {
        image_dirs(dir).map_err(|e| e.in_stage("write"))?;
    }

    let render_start = Instant::now();
    let options = RenderOptions {
        max_distance: config.params.params_for(sizes[0]).max_distance,
        convention: ds.convention,
    };
    let records: Vec<&FrameRecord> = ds.frames.iter().collect();
    let results: Vec<(FrameScore, OutputEntry)> = records
        .par_iter()
        .map(|rec| -> Result<(FrameScore, OutputEntry)> {
            let split = rec.split.expect("split assigns every frame");
            let views: Vec<RenderedView> = carved
                .iter()
                .map(|(m, _)| render(m, &rec.pose, &ds.camera, &options))
                .collect();
            let blended = blend_scales(&views).map_err(|e| e.in_stage("render"))?;
            let gt = read_rgb(&rec.rgb_path).map_err(|e| e.in_stage("eval"))?;
            let full = psnr(&blended.rgb, &gt, PsnrMode::Full).map_err(|e| e.in_stage("eval"))?;
            let unmasked = psnr(&blended.rgb, &gt, PsnrMode::Unmasked(&blended.mask)).ok();
            let stem = format!("{:06}", rec.id);
            let sub = split_name(split);
            let mut entry = OutputEntry {
                id: rec.id,
                split,
                position: rec.pose.position.into(),
                ypr_deg: rec.pose.ypr_degrees(),
                ground_truth: rec.rgb_path.clone(),
                blended: PathBuf::from(format!("blended/{sub}/{stem}.png")),
                blended_mask: PathBuf::from(format!("blended/{sub}/{stem}_mask.png")),
                scales: sizes
                    .iter()
                    .map(|vs| PathBuf::from(format!("renders/{sub}/{stem}_s{}.png", scale_tag(*vs))))
                    .collect(),
            };
            if let Some(dir) = write_images {
                let write = || -> Result<()> {
                    for v in &views {
                        v.write(&dir.join("renders").join(sub), &format!("{stem}_s{}", scale_tag(v.voxel_size)))?;
                    }
                    blended.write(&dir.join("blended").join(sub), &stem)
                };
                write().map_err(|e| e.in_stage("write"))?;
            } else {
                entry.scales.clear();
            }
            let score = FrameScore {
                id: rec.id,
                split,
                psnr: Db(full),
                psnr_unmasked: unmasked.map(Db),
                empty_fraction: blended.empty_fraction(),
                scale_empty_fraction: views.iter().map(RenderedView::empty_fraction).collect(),
            };
            Ok((score, entry))
        })
        .collect::<Result<_>>()?;
    let render_seconds = render_start.elapsed().as_secs_f64();

    let (scores, entries): (Vec<FrameScore>, Vec<OutputEntry>) = results.into_iter().unzip();
    let report = EvalReport {
        scene_id: ds.scene_id.clone(),
        train_frames: ds.frames_in(Split::Train).map(|f| f.id).collect(),
        test_frames: ds.frames_in(Split::Test).map(|f| f.id).collect(),
        train: summarize(&scores, Split::Train, sizes.len()),
        test: summarize(&scores, Split::Test, sizes.len()),
        scales: carved.into_iter().map(|(_, r)| r).collect(),
        frames: scores,
        render_seconds,
        total_seconds: start.elapsed().as_secs_f64(),
    };

    if let Some(dir) = out {
        let write = || -> Result<()> {
            create_dir(dir)?;
            let index = OutputIndex {
                scene_id: report.scene_id.clone(),
                width: ds.camera.width,
                height: ds.camera.height,
                voxel_sizes: sizes.clone(),
                frames: entries,
            };
            write_json(&dir.join("outputs.json"), &index)?;
            write_json(&dir.join("report.json"), &report)?;
            let txt = dir.join("report.txt");
            std::fs::write(&txt, report.to_text()).map_err(|e| Error::io(&txt, e))
        };
        write().map_err(|e| e.in_stage("write"))?;
    }
    Ok(report)
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Runs the whole pipeline on a loaded dataset. With `out`, artifacts and
/// reports are written there, and a `FAILED` file with the error on failure.
pub fn run_pipeline(ds: &SceneDataset, config: &PipelineConfig, out: Option<&Path>) -> Result<EvalReport> {
    if let Some(dir) = out {
        create_dir(dir).map_err(|e| e.in_stage("write"))?;
        let _ = std::fs::remove_file(dir.join("FAILED"));
    }
    let result = match config.jobs {
        Some(0) => Err(Error::InvalidParams("jobs must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::InvalidParams(e.to_string()))
            .and_then(|pool| pool.install(|| run_inner(ds, config, out))),
        None => run_inner(ds, config, out),
    };
    if let (Err(e), Some(dir)) = (&result, out) {
        let _ = std::fs::write(dir.join("FAILED"), format!("{e}\n"));
    }
    result
}

/// Scores a directory of predictions named `<id>.png` (as written under
/// `blended/<split>/`, or by any tool following the same naming) against
/// the dataset images of `split`. A `<id>_mask.png` next to a prediction
/// enables the unmasked score.
pub fn evaluate_predictions(ds: &SceneDataset, pred_dir: &Path, split: Option<Split>) -> Result<Vec<FrameScore>> {
    use rayon::prelude::*;
    let records: Vec<&FrameRecord> = ds
        .frames
        .iter()
        .filter(|f| split.is_none() || f.split == split)
        .collect();
    if records.is_empty() {
        return Err(Error::EmptyDataset("no frames to evaluate".into()));
    }
    records
        .par_iter()
        .map(|rec| {
            let stem = format!("{:06}", rec.id);
            let pred = read_rgb(&pred_dir.join(format!("{stem}.png")))?;
            let gt = read_rgb(&rec.rgb_path)?;
            let mask_path = pred_dir.join(format!("{stem}_mask.png"));
            let mask = if mask_path.is_file() {
                Some(crate::image_io::read_mask(&mask_path)?.2)
            } else {
                None
            };
            let full = psnr(&pred, &gt, PsnrMode::Full)?;
            let unmasked = match &mask {
                Some(m) => psnr(&pred, &gt, PsnrMode::Unmasked(m)).ok(),
                None => Some(full),
            };
            let empty = mask
                .as_ref()
                .map_or(0.0, |m| m.iter().filter(|&&v| v).count() as f64 / m.len() as f64);
            Ok(FrameScore {
                id: rec.id,
                split: rec.split.unwrap_or(Split::Test),
                psnr: Db(full),
                psnr_unmasked: unmasked.map(Db),
                empty_fraction: empty,
                scale_empty_fraction: Vec::new(),
            })
        })
        .collect()
}

/// Mean PSNR of a score list, `None` when empty.
pub fn mean_psnr(scores: &[FrameScore]) -> Option<f64> {
    mean(scores.iter().map(|s| s.psnr.0))
}
