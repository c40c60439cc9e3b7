//! Converts a telemetry-dump directory into a scene manifest.
//!
//! Expected layout:
//!
//! ```text
//! <dir>/telemetry.csv   header: frame,x,y,z,yaw,pitch,roll  (meters, degrees)
//! <dir>/rgb/<frame>.png|jpg
//! <dir>/depth/<frame>.pfm|png
//! ```
//!
//! File stems are parsed as integers, so zero padding is free. Telemetry
//! rows without both images are skipped; the count is returned.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::{FrameEntry, GridRegion, Manifest, MANIFEST_NAME};
use crate::error::{Error, FrameIssue, Result};
use crate::geometry::CameraModel;
use crate::image_io::image_dimensions;

#[derive(Debug, Clone, PartialEq)]
pub struct ImportOptions {
    pub scene_id: Option<String>,
    pub fx: f64,
    pub fy: f64,
    /// Principal point; image center when absent.
    pub cx: Option<f64>,
    pub cy: Option<f64>,
    pub frame_stride: Option<usize>,
    pub grid: Option<GridRegion>,
}

#[derive(Debug, Deserialize)]
struct TelemetryRow {
    frame: u64,
    x: f64,
    y: f64,
    z: f64,
    yaw: f64,
    pitch: f64,
    roll: f64,
}

fn index_dir(dir: &Path, extensions: &[&str]) -> Result<BTreeMap<u64, PathBuf>> {
    let mut out = BTreeMap::new();
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase);
        if !ext.is_some_and(|e| extensions.contains(&e.as_str())) {
            continue;
        }
        if let Some(id) = path.file_stem().and_then(|s| s.to_str()).and_then(|s| s.parse().ok()) {
            out.insert(id, path);
        }
    }
    Ok(out)
}

/// Writes `<dir>/manifest.toml` and returns its path plus the number of
/// telemetry rows skipped for lack of images.
pub fn import_telemetry(dir: &Path, opts: &ImportOptions) -> Result<(PathBuf, usize)> {
    let csv_path = dir.join("telemetry.csv");
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(&csv_path)
        .map_err(|e| Error::Manifest {
            path: csv_path.clone(),
            message: e.to_string(),
        })?;
    let mut rows: Vec<TelemetryRow> = Vec::new();
    let mut issues = Vec::new();
    for (line, row) in reader.deserialize().enumerate() {
        match row {
            Ok(r) => rows.push(r),
            Err(e) => issues.push(FrameIssue {
                frame_id: line as u64,
                message: format!("telemetry row {}: {e}", line + 2),
            }),
        }
    }
    if !issues.is_empty() {
        return Err(Error::Dataset(issues));
    }
    rows.sort_by_key(|r| r.frame);
    rows.dedup_by_key(|r| r.frame);

    let rgb = index_dir(&dir.join("rgb"), &["png", "jpg", "jpeg"])?;
    let depth = index_dir(&dir.join("depth"), &["pfm", "png"])?;
    let rel = |p: &PathBuf| p.strip_prefix(dir).unwrap_or(p).to_path_buf();

    let mut frames = Vec::new();
    for r in &rows {
        if let (Some(c), Some(d)) = (rgb.get(&r.frame), depth.get(&r.frame)) {
            frames.push(FrameEntry {
                id: r.frame,
                rgb: rel(c),
                depth: rel(d),
                position: [r.x, r.y, r.z],
                ypr_deg: [r.yaw, r.pitch, r.roll],
                split: None,
            });
        }
    }
    let skipped = rows.len() - frames.len();
    let first = frames
        .first()
        .ok_or_else(|| Error::EmptyDataset(format!("no telemetry row in {} has images", dir.display())))?;
    let (width, height) = image_dimensions(&dir.join(&first.rgb))?;
    let camera = CameraModel::new(
        opts.fx,
        opts.fy,
        opts.cx.unwrap_or(width as f64 / 2.0),
        opts.cy.unwrap_or(height as f64 / 2.0),
        width,
        height,
    )?;
    let scene_id = opts.scene_id.clone().unwrap_or_else(|| {
        dir.file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "scene".into())
    });
    let manifest = Manifest {
        scene_id,
        frame_stride: opts.frame_stride,
        camera,
        convention: None,
        grid: opts.grid,
        frames,
    };
    let path = dir.join(MANIFEST_NAME);
    manifest.write(&path)?;
    Ok((path, skipped))
}
