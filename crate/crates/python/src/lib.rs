//! Python module `mscarve_py`: scene generation and loading, carving,
//! rendering, PSNR and the full pipeline.

use std::path::PathBuf;

use mscarve::carving::{prepare_frames, CarveParams as CoreParams};
use mscarve::dataset::{generate_synthetic as core_generate, NoiseSpec, Split, SyntheticSpec};
use mscarve::hsv;
use mscarve::image_io::{read_mask, read_rgb};
use mscarve::pipeline::{evaluate_predictions, PipelineConfig};
use mscarve::{CameraModel as CoreCamera, CarvedModel as CoreModel, FramePose, PsnrMode, RenderOptions};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyBytes;

fn to_py(e: mscarve::Error) -> PyErr {
    match e {
        mscarve::Error::Io { .. } | mscarve::Error::BareIo(_) => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn json_to_py<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

#[pyclass(module = "mscarve_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct CameraModel {
    inner: CoreCamera,
}

#[pymethods]
impl CameraModel {
    #[new]
    fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> PyResult<Self> {
        Ok(CameraModel {
            inner: CoreCamera::new(fx, fy, cx, cy, width, height).map_err(to_py)?,
        })
    }

    /// Square pixels, principal point at the center, horizontal FOV in degrees.
    #[staticmethod]
    fn from_hfov(width: u32, height: u32, hfov_deg: f64) -> PyResult<Self> {
        Ok(CameraModel {
            inner: CoreCamera::from_hfov(width, height, hfov_deg.to_radians()).map_err(to_py)?,
        })
    }

    #[getter]
    fn width(&self) -> u32 {
        self.inner.width
    }

    #[getter]
    fn height(&self) -> u32 {
        self.inner.height
    }

    #[getter]
    fn intrinsics(&self) -> (f64, f64, f64, f64) {
        (self.inner.fx, self.inner.fy, self.inner.cx, self.inner.cy)
    }

    /// Pixel coordinates and camera depth of a world point seen from a pose.
    fn project(&self, point: [f64; 3], position: [f64; 3], ypr_deg: [f64; 3]) -> PyResult<(f64, f64, f64)> {
        let pose = FramePose::from_ypr_degrees(position, ypr_deg).map_err(to_py)?;
        let p = mscarve::View::from_pose(&pose).project(&point.into(), &self.inner);
        Ok((p.x, p.y, p.depth))
    }

    fn __repr__(&self) -> String {
        let c = &self.inner;
        format!(
            "CameraModel(fx={}, fy={}, cx={}, cy={}, width={}, height={})",
            c.fx, c.fy, c.cx, c.cy, c.width, c.height
        )
    }
}

#[pyclass(module = "mscarve_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct CarveParams {
    inner: CoreParams,
}

#[pymethods]
impl CarveParams {
    /// Defaults for `voxel_size`; keyword arguments override single fields.
    #[new]
    #[pyo3(signature = (voxel_size, *, eps_seen=None, seen_threshold=None, alpha=None, sigma=None, eps_hsv=None, max_distance=None))]
    fn new(
        voxel_size: f64,
        eps_seen: Option<f64>,
        seen_threshold: Option<u32>,
        alpha: Option<f64>,
        sigma: Option<f64>,
        eps_hsv: Option<f64>,
        max_distance: Option<f64>,
    ) -> PyResult<Self> {
        let d = CoreParams::for_voxel_size(voxel_size);
        let inner = CoreParams {
            voxel_size,
            eps_seen: eps_seen.unwrap_or(d.eps_seen),
            seen_threshold: seen_threshold.unwrap_or(d.seen_threshold),
            alpha: alpha.unwrap_or(d.alpha),
            sigma: sigma.unwrap_or(d.sigma),
            eps_hsv: eps_hsv.unwrap_or(d.eps_hsv),
            max_distance: max_distance.unwrap_or(d.max_distance),
        };
        inner.validate().map_err(to_py)?;
        Ok(CarveParams { inner })
    }

    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        json_to_py(py, &self.inner)
    }
}

#[pyclass(module = "mscarve_py", frozen)]
struct CarvedModel {
    inner: CoreModel,
}

#[pymethods]
impl CarvedModel {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(CarvedModel {
            inner: CoreModel::load(&path).map_err(to_py)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(to_py)
    }

    #[getter]
    fn voxel_size(&self) -> f64 {
        self.inner.voxel_size
    }

    #[getter]
    fn scene_id(&self) -> &str {
        &self.inner.scene_id
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    /// `(x, y, z, r, g, b)` tuples in grid order.
    fn voxels(&self) -> Vec<(f64, f64, f64, u8, u8, u8)> {
        self.inner
            .voxels
            .iter()
            .map(|v| (v.center[0], v.center[1], v.center[2], v.rgb[0], v.rgb[1], v.rgb[2]))
            .collect()
    }

    fn bounds(&self) -> Option<([f64; 3], [f64; 3])> {
        self.inner.bounds()
    }

    /// Renders from a pose. Returns `(rgb, mask)` as row-major bytes:
    /// 3 bytes per pixel, and 1 for empty / 0 for covered.
    #[pyo3(signature = (camera, position, ypr_deg, max_distance=None))]
    fn render<'py>(
        &self,
        py: Python<'py>,
        camera: &CameraModel,
        position: [f64; 3],
        ypr_deg: [f64; 3],
        max_distance: Option<f64>,
    ) -> PyResult<(Bound<'py, PyBytes>, Bound<'py, PyBytes>)> {
        let pose = FramePose::from_ypr_degrees(position, ypr_deg).map_err(to_py)?;
        let mut opts = RenderOptions::default();
        if let Some(d) = max_distance {
            opts.max_distance = d;
        }
        let view = py.detach(|| mscarve::render_parallel(&self.inner, &pose, &camera.inner, &opts));
        let mask: Vec<u8> = view.mask.iter().map(|&m| u8::from(m)).collect();
        Ok((PyBytes::new(py, view.rgb.as_raw()), PyBytes::new(py, &mask)))
    }
}

#[pyclass(module = "mscarve_py", frozen)]
struct SceneDataset {
    inner: mscarve::SceneDataset,
}

#[pymethods]
impl SceneDataset {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(SceneDataset {
            inner: mscarve::load_scene(&path).map_err(to_py)?,
        })
    }

    #[getter]
    fn scene_id(&self) -> &str {
        &self.inner.scene_id
    }

    #[getter]
    fn camera(&self) -> CameraModel {
        CameraModel {
            inner: self.inner.camera,
        }
    }

    #[getter]
    fn frame_ids(&self) -> Vec<u64> {
        self.inner.frames.iter().map(|f| f.id).collect()
    }

    fn __len__(&self) -> usize {
        self.inner.frames.len()
    }

    /// `(train_ids, test_ids)` after stride sampling and the chronological split.
    #[pyo3(signature = (train_fraction=0.8, stride=None))]
    fn split(&self, train_fraction: f64, stride: Option<usize>) -> PyResult<(Vec<u64>, Vec<u64>)> {
        let stride = stride.or(self.inner.frame_stride).unwrap_or(mscarve::dataset::DEFAULT_STRIDE);
        let ds = mscarve::split_dataset(&self.inner, train_fraction, stride).map_err(to_py)?;
        let ids = |s: Split| ds.frames_in(s).map(|f| f.id).collect();
        Ok((ids(Split::Train), ids(Split::Test)))
    }

    /// Carves one scale from the training split.
    #[pyo3(signature = (params, train_fraction=0.8, stride=None))]
    fn carve(
        &self,
        py: Python<'_>,
        params: &CarveParams,
        train_fraction: f64,
        stride: Option<usize>,
    ) -> PyResult<CarvedModel> {
        let ds = &self.inner;
        let stride = stride.or(ds.frame_stride).unwrap_or(mscarve::dataset::DEFAULT_STRIDE);
        let p = params.inner;
        let model = py.detach(|| -> mscarve::Result<CoreModel> {
            let split = mscarve::split_dataset(ds, train_fraction, stride)?;
            let region = ds
                .grid
                .ok_or_else(|| mscarve::Error::InvalidGrid("manifest has no grid region".into()))?;
            let grid = region.at_voxel_size(p.voxel_size)?;
            let frames = prepare_frames(&split.load_frames(Split::Train)?, &ds.camera, &ds.convention)?;
            Ok(mscarve::carve_scene(&frames, &ds.camera, &grid, &p, &ds.scene_id)?.model)
        });
        Ok(CarvedModel {
            inner: model.map_err(to_py)?,
        })
    }
}

/// Writes the synthetic reference scene and returns the manifest path.
#[pyfunction]
#[pyo3(signature = (out_dir, seed=0, pose_sigma=0.0, depth_sigma=0.0, brightness=0.0, poses=None, width=None, height=None))]
#[allow(clippy::too_many_arguments)]
fn generate_synthetic(
    py: Python<'_>,
    out_dir: PathBuf,
    seed: u64,
    pose_sigma: f64,
    depth_sigma: f64,
    brightness: f64,
    poses: Option<usize>,
    width: Option<u32>,
    height: Option<u32>,
) -> PyResult<PathBuf> {
    let mut spec = SyntheticSpec::reference().with_noise(NoiseSpec {
        pose_sigma,
        depth_sigma,
        brightness,
    });
    spec.seed = seed;
    if let Some(n) = poses {
        spec.orbit.poses = n;
    }
    spec.width = width.unwrap_or(spec.width);
    spec.height = height.unwrap_or(spec.height);
    py.detach(|| core_generate(&spec)?.write(&out_dir)).map_err(to_py)
}

/// Runs carve, render, blend and evaluation; returns the report as a dict.
#[pyfunction]
#[pyo3(signature = (scene, out_dir=None, scales=None, write_images=true, config=None))]
fn run_pipeline<'py>(
    py: Python<'py>,
    scene: PathBuf,
    out_dir: Option<PathBuf>,
    scales: Option<Vec<f64>>,
    write_images: bool,
    config: Option<&str>,
) -> PyResult<Bound<'py, PyAny>> {
    let mut cfg = match config {
        Some(text) => PipelineConfig::from_toml(text).map_err(to_py)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = scales {
        cfg.scales = s;
    }
    cfg.write_images = write_images;
    let report = py
        .detach(|| {
            let ds = mscarve::load_scene(&scene).map_err(|e| e.in_stage("load"))?;
            mscarve::run_pipeline(&ds, &cfg, out_dir.as_deref())
        })
        .map_err(to_py)?;
    json_to_py(py, &report)
}

/// Scores `<id>.png` predictions in `pred_dir` against a split of the scene.
#[pyfunction]
#[pyo3(signature = (scene, pred_dir, split="test", train_fraction=0.8, stride=None))]
fn evaluate<'py>(
    py: Python<'py>,
    scene: PathBuf,
    pred_dir: PathBuf,
    split: &str,
    train_fraction: f64,
    stride: Option<usize>,
) -> PyResult<Bound<'py, PyAny>> {
    let which = match split {
        "train" => Some(Split::Train),
        "test" => Some(Split::Test),
        "all" => None,
        other => return Err(PyValueError::new_err(format!("split must be train, test or all, not {other:?}"))),
    };
    let scores = py
        .detach(|| {
            let ds = mscarve::load_scene(&scene)?;
            let stride = stride.or(ds.frame_stride).unwrap_or(mscarve::dataset::DEFAULT_STRIDE);
            let ds = mscarve::split_dataset(&ds, train_fraction, stride)?;
            evaluate_predictions(&ds, &pred_dir, which)
        })
        .map_err(to_py)?;
    json_to_py(py, &scores)
}

/// PSNR in dB between two PNG files; with a mask file only its zero pixels count.
#[pyfunction]
#[pyo3(signature = (pred, gt, mask=None))]
fn psnr(pred: PathBuf, gt: PathBuf, mask: Option<PathBuf>) -> PyResult<f64> {
    let a = read_rgb(&pred).map_err(to_py)?;
    let b = read_rgb(&gt).map_err(to_py)?;
    match mask {
        Some(m) => {
            let (_, _, m) = read_mask(&m).map_err(to_py)?;
            mscarve::psnr(&a, &b, PsnrMode::Unmasked(&m)).map_err(to_py)
        }
        None => mscarve::psnr(&a, &b, PsnrMode::Full).map_err(to_py),
    }
}

#[pyfunction]
fn rgb_bin(r: u8, g: u8, b: u8) -> u16 {
    hsv::rgb_bin([r, g, b]).index()
}

#[pyfunction]
fn bin_to_rgb(index: u16) -> PyResult<(u8, u8, u8)> {
    let [r, g, b] = hsv::bin_to_rgb(index).map_err(to_py)?;
    Ok((r, g, b))
}

#[pyfunction]
#[pyo3(signature = (distance, alpha=CoreParams::DEFAULT_ALPHA, max_distance=CoreParams::DEFAULT_MAX_DISTANCE))]
fn f1(distance: f64, alpha: f64, max_distance: f64) -> f64 {
    mscarve::carving::f1(distance, alpha, max_distance)
}

#[pyfunction]
#[pyo3(signature = (depth_diff, sigma=CoreParams::DEFAULT_SIGMA))]
fn f2(depth_diff: f64, sigma: f64) -> f64 {
    mscarve::carving::f2(depth_diff, sigma)
}

#[pymodule]
fn mscarve_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<CameraModel>()?;
    m.add_class::<CarveParams>()?;
    m.add_class::<CarvedModel>()?;
    m.add_class::<SceneDataset>()?;
    m.add_function(wrap_pyfunction!(generate_synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(psnr, m)?)?;
    m.add_function(wrap_pyfunction!(rgb_bin, m)?)?;
    m.add_function(wrap_pyfunction!(bin_to_rgb, m)?)?;
    m.add_function(wrap_pyfunction!(f1, m)?)?;
    m.add_function(wrap_pyfunction!(f2, m)?)?;
    Ok(())
}
