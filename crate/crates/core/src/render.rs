//! Square-splat z-buffer rendering of carved models and multi-scale blending.

use std::path::Path;

use image::{Rgb, RgbImage};
use rayon::prelude::*;

use crate::carving::CarvedModel;
use crate::error::{Error, Result};
use crate::geometry::{in_bounds, CameraModel, FramePose, PoseConvention, View};
use crate::image_io::{write_mask, write_pfm, write_rgb};

/// Color of pixels no voxel reached.
pub const VOID_COLOR: [u8; 3] = [255, 255, 255];

/// Output of rendering one model from one pose.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedView {
    pub rgb: RgbImage,
    /// `true` where nothing was splatted.
    pub mask: Vec<bool>,
    /// Camera-frame depth of the visible voxel, `+inf` where masked.
    pub zbuffer: Vec<f64>,
    pub pose: FramePose,
    pub voxel_size: f64,
}

impl RenderedView {
    fn empty(cam: &CameraModel, pose: FramePose, voxel_size: f64) -> Self {
        RenderedView {
            rgb: RgbImage::from_pixel(cam.width, cam.height, Rgb(VOID_COLOR)),
            mask: vec![true; cam.pixel_count()],
            zbuffer: vec![f64::INFINITY; cam.pixel_count()],
            pose,
            voxel_size,
        }
    }

    pub fn width(&self) -> u32 {
        self.rgb.width()
    }

    pub fn height(&self) -> u32 {
        self.rgb.height()
    }

    pub fn empty_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn empty_fraction(&self) -> f64 {
        self.empty_count() as f64 / self.mask.len() as f64
    }

    /// Writes `<stem>.png`, `<stem>_mask.png` and `<stem>_depth.pfm`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        let (w, h) = (self.width(), self.height());
        write_rgb(&dir.join(format!("{stem}.png")), &self.rgb)?;
        write_mask(&dir.join(format!("{stem}_mask.png")), w, h, &self.mask)?;
        let depth: Vec<f32> = self.zbuffer.iter().map(|&z| z as f32).collect();
        write_pfm(&dir.join(format!("{stem}_depth.pfm")), w, h, &depth)
    }
}

/// Voxel sizes for multi-scale reconstruction, finest first.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleSet(Vec<f64>);

impl ScaleSet {
    pub fn new(sizes: Vec<f64>) -> Result<Self> {
        if sizes.is_empty() {
            return Err(Error::InvalidParams("scale set is empty".into()));
        }
        if sizes.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidParams(format!("scales must be positive: {sizes:?}")));
        }
        if sizes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidParams(format!(
                "scales must be strictly increasing: {sizes:?}"
            )));
        }
        Ok(ScaleSet(sizes))
    }

    /// Sorts and deduplicates arbitrary input before validating.
    pub fn from_unordered(mut sizes: Vec<f64>) -> Result<Self> {
        sizes.sort_by(f64::total_cmp);
        sizes.dedup();
        Self::new(sizes)
    }

    pub fn sizes(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Half-width in pixels of the square splat for a voxel of edge `side` at
/// camera depth `depth`: `ceil(max(fx, fy) * side / (2 depth))`.
pub fn splat_extent(depth: f64, side: f64, cam: &CameraModel) -> u32 {
    let hw = (cam.fx.max(cam.fy) * side / (2.0 * depth)).ceil();
    if hw.is_finite() && hw > 0.0 {
        hw as u32
    } else {
        0
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RenderOptions {
    pub max_distance: f64,
    pub convention: PoseConvention,
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions {
            max_distance: crate::carving::CarveParams::DEFAULT_MAX_DISTANCE,
            convention: PoseConvention::default(),
        }
    }
}

/// Clipped pixel rectangle written by one voxel; bounds inclusive.
#[derive(Debug, Clone, Copy)]
struct Splat {
    x0: u32,
    x1: u32,
    y0: u32,
    y1: u32,
    depth: f64,
    rgb: [u8; 3],
}

fn splat_for(
    center: &[f64; 3],
    rgb: [u8; 3],
    side: f64,
    view: &View,
    cam: &CameraModel,
    max_distance: f64,
) -> Option<Splat> {
    let p = view.project(&(*center).into(), cam);
    if !in_bounds(&p, cam) || p.depth > max_distance {
        return None;
    }
    let hw = splat_extent(p.depth, side, cam) as i64;
    let (px, py) = (p.x.floor() as i64, p.y.floor() as i64);
    Some(Splat {
        x0: (px - hw).max(0) as u32,
        x1: (px + hw).min(cam.width as i64 - 1) as u32,
        y0: (py - hw).max(0) as u32,
        y1: (py + hw).min(cam.height as i64 - 1) as u32,
        depth: p.depth,
        rgb,
    })
}

/// Writes splats in order into the rows `[row0, row0 + rows)`. Strict depth
/// comparison keeps the earliest voxel on exact ties.
fn rasterize_rows(
    splats: &[Splat],
    width: usize,
    row0: usize,
    rgb: &mut [u8],
    zbuf: &mut [f64],
) {
    let rows = zbuf.len() / width;
    let row_end = row0 + rows;
    for s in splats {
        let (y0, y1) = (s.y0 as usize, s.y1 as usize);
        if y1 < row0 || y0 >= row_end {
            continue;
        }
        for y in y0.max(row0)..=y1.min(row_end - 1) {
            let line = (y - row0) * width;
            for x in s.x0 as usize..=s.x1 as usize {
                let i = line + x;
                if s.depth < zbuf[i] {
                    zbuf[i] = s.depth;
                    rgb[3 * i..3 * i + 3].copy_from_slice(&s.rgb);
                }
            }
        }
    }
}

fn finish(mut view: RenderedView) -> RenderedView {
    for (m, z) in view.mask.iter_mut().zip(&view.zbuffer) {
        *m = z.is_infinite();
    }
    view
}

/// Sequential reference renderer.
pub fn render(
    model: &CarvedModel,
    pose: &FramePose,
    cam: &CameraModel,
    options: &RenderOptions,
) -> RenderedView {
    let view = View::new(pose, &options.convention);
    let splats: Vec<Splat> = model
        .voxels
        .iter()
        .filter_map(|v| splat_for(&v.center, v.rgb, model.voxel_size, &view, cam, options.max_distance))
        .collect();
    let mut out = RenderedView::empty(cam, *pose, model.voxel_size);
    let width = cam.width as usize;
    rasterize_rows(&splats, width, 0, &mut out.rgb, &mut out.zbuffer);
    finish(out)
}

/// Parallel renderer: projects voxels concurrently, then rasterizes
/// horizontal strips concurrently. Bit-identical to [`render`].
pub fn render_parallel(
    model: &CarvedModel,
    pose: &FramePose,
    cam: &CameraModel,
    options: &RenderOptions,
) -> RenderedView {
    let view = View::new(pose, &options.convention);
    let splats: Vec<Splat> = model
        .voxels
        .par_iter()
        .with_min_len(4096)
        .filter_map(|v| splat_for(&v.center, v.rgb, model.voxel_size, &view, cam, options.max_distance))
        .collect();
    let mut out = RenderedView::empty(cam, *pose, model.voxel_size);
    let width = cam.width as usize;
    let strip_rows = (cam.height as usize).div_ceil(4 * rayon::current_num_threads()).max(1);
    let rgb: &mut [u8] = &mut out.rgb;
    rgb.par_chunks_mut(3 * width * strip_rows)
        .zip(out.zbuffer.par_chunks_mut(width * strip_rows))
        .enumerate()
        .for_each(|(strip, (rgb, zbuf))| {
            rasterize_rows(&splats, width, strip * strip_rows, rgb, zbuf);
        });
    finish(out)
}

/// Multi-scale composite: each pixel comes from the finest view that covers it.
#[derive(Debug, Clone, PartialEq)]
pub struct BlendedView {
    pub rgb: RgbImage,
    /// Pixels empty at every scale.
    pub mask: Vec<bool>,
    /// Index of the view each pixel came from, `None` where masked.
    pub source: Vec<Option<u8>>,
}

impl BlendedView {
    pub fn empty_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn empty_fraction(&self) -> f64 {
        self.empty_count() as f64 / self.mask.len() as f64
    }

    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        write_rgb(&dir.join(format!("{stem}.png")), &self.rgb)?;
        write_mask(
            &dir.join(format!("{stem}_mask.png")),
            self.rgb.width(),
            self.rgb.height(),
            &self.mask,
        )
    }
}

/// Blends views of one pose ordered by increasing voxel size.
pub fn blend_scales(views: &[RenderedView]) -> Result<BlendedView> {
    let first = views
        .first()
        .ok_or_else(|| Error::InvalidParams("no views to blend".into()))?;
    if views.len() > u8::MAX as usize {
        return Err(Error::InvalidParams("too many scales".into()));
    }
    let dims = first.rgb.dimensions();
    for w in views.windows(2) {
        if w[1].voxel_size <= w[0].voxel_size {
            return Err(Error::InvalidParams(format!(
                "views must be ordered by increasing voxel size ({} then {})",
                w[0].voxel_size, w[1].voxel_size
            )));
        }
    }
    for v in views {
        if v.rgb.dimensions() != dims || v.mask.len() != first.mask.len() {
            return Err(Error::DimensionMismatch(format!(
                "view at scale {} is {:?}, expected {:?}",
                v.voxel_size,
                v.rgb.dimensions(),
                dims
            )));
        }
        if v.pose != first.pose {
            return Err(Error::InvalidParams(format!(
                "view at scale {} has a different pose",
                v.voxel_size
            )));
        }
    }
    let mut rgb = RgbImage::from_pixel(dims.0, dims.1, Rgb(VOID_COLOR));
    let mut mask = vec![true; first.mask.len()];
    let mut source = vec![None; first.mask.len()];
    let width = dims.0 as usize;
    for (i, (m, src)) in mask.iter_mut().zip(source.iter_mut()).enumerate() {
        if let Some(s) = views.iter().position(|v| !v.mask[i]) {
            let (x, y) = ((i % width) as u32, (i / width) as u32);
            rgb.put_pixel(x, y, *views[s].rgb.get_pixel(x, y));
            *m = false;
            *src = Some(s as u8);
        }
    }
    Ok(BlendedView { rgb, mask, source })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::carving::{CarveParams, CarvedVoxel};
    use nalgebra::Vector3;

    fn cam() -> CameraModel {
        CameraModel::new(100.0, 100.0, 32.0, 24.0, 64, 48).unwrap()
    }

    fn model(voxels: Vec<CarvedVoxel>) -> CarvedModel {
        CarvedModel {
            voxel_size: 0.5,
            voxels,
            scene_id: String::new(),
            params: CarveParams::for_voxel_size(0.5),
        }
    }

    fn origin_pose() -> FramePose {
        FramePose::new(Vector3::zeros(), Vector3::zeros()).unwrap()
    }

    #[test]
    fn extent_examples() {
        let c = cam();
        assert_eq!(splat_extent(c.fx * 0.5, 0.5, &c), 1);
        assert_eq!(splat_extent(f64::INFINITY, 0.5, &c), 0);
        assert_eq!(splat_extent(10.0, 0.0, &c), 0);
        assert_eq!(splat_extent(10.0, 1.0, &c), 5);
    }

    #[test]
    fn single_voxel_splat() {
        let m = model(vec![CarvedVoxel {
            center: [25.0, 0.0, 0.0],
            rgb: [255, 0, 0],
        }]);
        let v = render(&m, &origin_pose(), &cam(), &RenderOptions::default());
        // half-width ceil(100 * 0.5 / 50) = 1 -> 3x3 around (32, 24)
        assert_eq!(v.empty_count(), 64 * 48 - 9);
        for y in 23..=25 {
            for x in 31..=33 {
                assert_eq!(v.rgb.get_pixel(x, y).0, [255, 0, 0]);
                assert!(!v.mask[(y * 64 + x) as usize]);
                assert_eq!(v.zbuffer[(y * 64 + x) as usize], 25.0);
            }
        }
        assert_eq!(v.rgb.get_pixel(0, 0).0, VOID_COLOR);
    }

    #[test]
    fn near_voxel_wins() {
        let m = model(vec![
            CarvedVoxel { center: [40.0, 0.0, 0.0], rgb: [0, 0, 255] },
            CarvedVoxel { center: [20.0, 0.0, 0.0], rgb: [0, 255, 0] },
        ]);
        let v = render(&m, &origin_pose(), &cam(), &RenderOptions::default());
        assert_eq!(v.rgb.get_pixel(32, 24).0, [0, 255, 0]);
    }

    #[test]
    fn exact_tie_keeps_first_voxel() {
        let m = model(vec![
            CarvedVoxel { center: [20.0, 0.0, 0.0], rgb: [1, 1, 1] },
            CarvedVoxel { center: [20.0, 0.0, 0.0], rgb: [2, 2, 2] },
        ]);
        let a = render(&m, &origin_pose(), &cam(), &RenderOptions::default());
        let b = render_parallel(&m, &origin_pose(), &cam(), &RenderOptions::default());
        assert_eq!(a.rgb.get_pixel(32, 24).0, [1, 1, 1]);
        assert_eq!(a, b);
    }

    #[test]
    fn empty_model_is_fully_masked() {
        let v = render(&model(vec![]), &origin_pose(), &cam(), &RenderOptions::default());
        assert_eq!(v.empty_fraction(), 1.0);
        assert!(v.zbuffer.iter().all(|z| z.is_infinite()));
    }

    #[test]
    fn far_voxels_are_culled() {
        let m = model(vec![CarvedVoxel { center: [300.0, 0.0, 0.0], rgb: [9, 9, 9] }]);
        let v = render(&m, &origin_pose(), &cam(), &RenderOptions::default());
        assert_eq!(v.empty_fraction(), 1.0);
    }

    #[test]
    fn scale_set_validation() {
        assert!(ScaleSet::new(vec![]).is_err());
        assert!(ScaleSet::new(vec![0.5, 0.25]).is_err());
        assert!(ScaleSet::new(vec![0.25, 0.25]).is_err());
        assert_eq!(
            ScaleSet::from_unordered(vec![0.5, 0.125, 0.25]).unwrap().sizes(),
            &[0.125, 0.25, 0.5]
        );
    }

    fn view_with(mask: Vec<bool>, color: [u8; 3], voxel_size: f64) -> RenderedView {
        let c = CameraModel::new(10.0, 10.0, 1.0, 0.5, 2, 1).unwrap();
        let mut v = RenderedView::empty(&c, origin_pose(), voxel_size);
        for (i, &m) in mask.iter().enumerate() {
            if !m {
                v.rgb.put_pixel(i as u32, 0, Rgb(color));
                v.zbuffer[i] = 1.0;
            }
        }
        finish(v)
    }

    #[test]
    fn blending_fills_from_coarser_scales() {
        let fine = view_with(vec![false, true], [1, 2, 3], 0.25);
        let coarse = view_with(vec![false, false], [7, 7, 7], 0.5);
        let b = blend_scales(&[fine.clone(), coarse.clone()]).unwrap();
        assert_eq!(b.rgb.get_pixel(0, 0).0, [1, 2, 3]);
        assert_eq!(b.rgb.get_pixel(1, 0).0, [7, 7, 7]);
        assert_eq!(b.empty_count(), 0);
        assert_eq!(b.source, vec![Some(0), Some(1)]);

        let alone = blend_scales(std::slice::from_ref(&coarse)).unwrap();
        assert_eq!(alone.rgb, coarse.rgb);
        assert!(blend_scales(&[coarse, fine]).is_err());
        assert!(blend_scales(&[]).is_err());
    }

    #[test]
    fn blending_rejects_mismatched_views() {
        let a = view_with(vec![true, true], [0; 3], 0.25);
        let mut b = view_with(vec![true, true], [0; 3], 0.5);
        b.pose = FramePose::new(Vector3::new(1.0, 0.0, 0.0), Vector3::zeros()).unwrap();
        assert!(blend_scales(&[a.clone(), b]).is_err());
        let c = RenderedView::empty(&cam(), origin_pose(), 0.5);
        assert!(matches!(blend_scales(&[a, c]), Err(Error::DimensionMismatch(_))));
    }
}
