//! Procedural scenes with exact depth: a textured ground plane at `z = 0`
//! plus axis-aligned boxes, observed from an orbit of poses.

use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{FrameEntry, GridRegion, Manifest, Split};
use crate::carving::{Frame, GridSpec};
use crate::error::{Error, Result};
use crate::geometry::{CameraModel, FramePose, View};
use crate::image_io::{write_pfm, write_rgb, DepthMap};

const GROUND_PALETTE: [[u8; 3]; 8] = [
    [96, 128, 56],  // grass
    [120, 150, 70], // light grass
    [70, 100, 45],  // dark grass
    [140, 110, 80], // soil
    [165, 140, 100],
    [110, 110, 105], // asphalt
    [150, 150, 140], // concrete
    [90, 120, 90],
];

const SKY: [u8; 3] = [200, 220, 240];

/// An axis-aligned solid box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AaBox {
    pub min: [f64; 3],
    pub max: [f64; 3],
    pub roof: [u8; 3],
    pub wall: [u8; 3],
}

impl AaBox {
    fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] && p[a] <= self.max[a])
    }

    /// Entry distance along `dir` and the slab axis that produced it.
    fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<(f64, usize)> {
        let mut t_near = f64::NEG_INFINITY;
        let mut t_far = f64::INFINITY;
        let mut axis = 0;
        for a in 0..3 {
            if dir[a] == 0.0 {
                if origin[a] < self.min[a] || origin[a] > self.max[a] {
                    return None;
                }
                continue;
            }
            let t0 = (self.min[a] - origin[a]) / dir[a];
            let t1 = (self.max[a] - origin[a]) / dir[a];
            let (lo, hi) = if t0 < t1 { (t0, t1) } else { (t1, t0) };
            if lo > t_near {
                t_near = lo;
                axis = a;
            }
            t_far = t_far.min(hi);
        }
        (t_near <= t_far && t_near > 0.0).then_some((t_near, axis))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneGeometry {
    /// Edge length of the square ground texture patches, meters.
    pub patch_size: f64,
    pub texture_seed: u64,
    pub boxes: Vec<AaBox>,
}

/// Circular trajectory at constant altitude, every pose aimed at `target`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Orbit {
    pub center: [f64; 2],
    pub radius: f64,
    pub altitude: f64,
    pub poses: usize,
    pub target: [f64; 3],
}

impl Orbit {
    pub fn poses(&self) -> Result<Vec<FramePose>> {
        (0..self.poses)
            .map(|i| {
                let a = std::f64::consts::TAU * i as f64 / self.poses as f64;
                let p = Vector3::new(
                    self.center[0] + self.radius * a.cos(),
                    self.center[1] + self.radius * a.sin(),
                    self.altitude,
                );
                FramePose::looking_at(p, Vector3::from(self.target))
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Std. dev. of the recorded position error per axis, meters.
    #[serde(default)]
    pub pose_sigma: f64,
    /// Relative std. dev. of per-pixel depth error (0.02 = 2 %).
    #[serde(default)]
    pub depth_sigma: f64,
    /// Per-frame brightness gain drawn from `1 ± brightness`.
    #[serde(default)]
    pub brightness: f64,
}

impl NoiseSpec {
    pub fn is_zero(&self) -> bool {
        self.pose_sigma == 0.0 && self.depth_sigma == 0.0 && self.brightness == 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub scene_id: String,
    pub width: u32,
    pub height: u32,
    pub hfov_deg: f64,
    pub geometry: SceneGeometry,
    pub orbit: Orbit,
    pub grid: GridRegion,
    /// Resolution of the exported ground-truth surface voxels.
    pub reference_voxel_size: f64,
    #[serde(default)]
    pub noise: NoiseSpec,
    #[serde(default)]
    pub seed: u64,
}

impl SyntheticSpec {
    /// The desk-scale reference scene: 480x270, 30-pose orbit at 30 m over a
    /// patchwork ground with four low buildings.
    pub fn reference() -> Self {
        let b = |min: [f64; 2], max: [f64; 2], h: f64, roof: [u8; 3], wall: [u8; 3]| AaBox {
            min: [min[0], min[1], 0.0],
            max: [max[0], max[1], h],
            roof,
            wall,
        };
        SyntheticSpec {
            scene_id: "synthetic-reference".into(),
            width: 480,
            height: 270,
            hfov_deg: 60.0,
            geometry: SceneGeometry {
                patch_size: 4.0,
                texture_seed: 7,
                boxes: vec![
                    b([-8.0, -6.0], [-2.0, 0.0], 3.0, [165, 85, 60], [130, 95, 80]),
                    b([3.0, 2.0], [9.0, 6.0], 2.5, [110, 110, 115], [150, 145, 135]),
                    b([-5.0, 5.0], [-1.0, 9.0], 2.0, [75, 90, 120], [140, 135, 125]),
                    b([6.0, -9.0], [10.0, -4.0], 3.0, [125, 90, 70], [150, 130, 110]),
                ],
            },
            orbit: Orbit {
                center: [0.0, 0.0],
                radius: 5.0,
                altitude: 30.0,
                poses: 30,
                target: [0.0, 0.0, 0.0],
            },
            grid: GridRegion {
                origin: [-26.0, -26.0, -1.0],
                extent: [52.0, 52.0, 6.0],
                block_size: [13.0, 13.0, 6.0],
            },
            reference_voxel_size: 0.125,
            noise: NoiseSpec::default(),
            seed: 0,
        }
    }

    pub fn with_noise(mut self, noise: NoiseSpec) -> Self {
        self.noise = noise;
        self
    }

    pub fn camera(&self) -> Result<CameraModel> {
        CameraModel::from_hfov(self.width, self.height, self.hfov_deg.to_radians())
    }
}

/// First surface hit along a ray.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub t: f64,
    pub rgb: [u8; 3],
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl SceneGeometry {
    pub fn validate(&self) -> Result<()> {
        if !(self.patch_size > 0.0) || !self.patch_size.is_finite() {
            return Err(Error::InvalidParams(format!(
                "patch size must be positive, got {}",
                self.patch_size
            )));
        }
        for b in &self.boxes {
            let ok = (0..3).all(|a| b.min[a].is_finite() && b.max[a].is_finite() && b.min[a] < b.max[a]);
            if !ok {
                return Err(Error::InvalidParams(format!("degenerate box {:?}..{:?}", b.min, b.max)));
            }
        }
        Ok(())
    }

    pub fn ground_color(&self, x: f64, y: f64) -> [u8; 3] {
        let cx = (x / self.patch_size).floor() as i64;
        let cy = (y / self.patch_size).floor() as i64;
        let h = splitmix(self.texture_seed ^ splitmix((cx as u64) << 32 ^ (cy as u64 & 0xffff_ffff)));
        let base = GROUND_PALETTE[(h % GROUND_PALETTE.len() as u64) as usize];
        let gain = 0.85 + 0.3 * ((h >> 16) & 0xffff) as f64 / 65535.0;
        base.map(|c| (c as f64 * gain).round().clamp(0.0, 255.0) as u8)
    }

    /// Solid test with closed boundaries: ground half-space or any box.
    pub fn is_solid(&self, p: &Vector3<f64>) -> bool {
        p.z <= 0.0 || self.boxes.iter().any(|b| b.contains(p))
    }

    /// Nearest intersection along `origin + t * dir`, `t > 0`.
    pub fn trace(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        if dir.z < 0.0 && origin.z > 0.0 {
            let t = -origin.z / dir.z;
            let p = origin + dir * t;
            best = Some(Hit {
                t,
                rgb: self.ground_color(p.x, p.y),
            });
        }
        for b in &self.boxes {
            if let Some((t, axis)) = b.intersect(origin, dir) {
                if best.is_none_or(|h| t < h.t) {
                    best = Some(Hit {
                        t,
                        rgb: if axis == 2 { b.roof } else { b.wall },
                    });
                }
            }
        }
        best
    }

    /// Voxels whose 27 corner, edge, face and center samples are neither all
    /// solid nor all empty.
    pub fn surface_voxels(&self, grid: &GridSpec) -> Vec<[usize; 3]> {
        let [nx, ny, nz] = grid.dims();
        let h = grid.voxel_size / 2.0;
        let offsets = [-h, 0.0, h];
        (0..nz)
            .into_par_iter()
            .flat_map_iter(|k| {
                let mut out = Vec::new();
                for j in 0..ny {
                    for i in 0..nx {
                        let c = grid.voxel_center(i, j, k);
                        let mut solid = 0;
                        for dz in offsets {
                            for dy in offsets {
                                for dx in offsets {
                                    solid += self.is_solid(&(c + Vector3::new(dx, dy, dz))) as u32;
                                }
                            }
                        }
                        if solid > 0 && solid < 27 {
                            out.push([i, j, k]);
                        }
                    }
                }
                out
            })
            .collect()
    }
}

/// Generated scene: frames carry the recorded (possibly noisy) poses, images
/// are always rendered from the true poses.
#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub spec: SyntheticSpec,
    pub camera: CameraModel,
    pub frames: Vec<Frame>,
    pub true_poses: Vec<FramePose>,
}

/// Renders exact RGB and camera-z depth for a pose.
pub fn render_truth(geometry: &SceneGeometry, pose: &FramePose, cam: &CameraModel) -> (RgbImage, DepthMap) {
    let view = View::from_pose(pose);
    let (w, h) = (cam.width, cam.height);
    let mut depth = DepthMap::filled(w, h, 0.0);
    let mut rgb = RgbImage::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let dir = view.ray_direction(x as f64 + 0.5, y as f64 + 0.5, cam);
            match geometry.trace(&view.position, &dir) {
                Some(hit) => {
                    // unit camera-z ray, so t is the depth
                    depth.set(x, y, hit.t as f32);
                    rgb.put_pixel(x, y, Rgb(hit.rgb));
                }
                None => rgb.put_pixel(x, y, Rgb(SKY)),
            }
        }
    }
    (rgb, depth)
}

/// Deterministic scene generation; identical specs give identical frames.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticScene> {
    spec.geometry.validate()?;
    let cam = spec.camera()?;
    let noise = spec.noise;
    for (name, v) in [
        ("pose_sigma", noise.pose_sigma),
        ("depth_sigma", noise.depth_sigma),
        ("brightness", noise.brightness),
    ] {
        if !(v >= 0.0) || !v.is_finite() {
            return Err(Error::InvalidParams(format!("{name} must be finite and >= 0, got {v}")));
        }
    }
    if noise.brightness >= 1.0 {
        return Err(Error::InvalidParams("brightness jitter must be below 1".into()));
    }
    if spec.orbit.poses == 0 {
        return Err(Error::DegenerateScene("trajectory has no poses".into()));
    }
    let true_poses = spec.orbit.poses()?;
    for (i, pose) in true_poses.iter().enumerate() {
        if spec.geometry.is_solid(&pose.position) {
            return Err(Error::DegenerateScene(format!(
                "pose {i} at {:?} is inside the scene geometry",
                pose.position.as_slice()
            )));
        }
    }

    let pose_noise = Normal::new(0.0, noise.pose_sigma.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::InvalidParams(e.to_string()))?;
    let depth_noise = Normal::new(0.0, noise.depth_sigma.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::InvalidParams(e.to_string()))?;

    let frames = true_poses
        .par_iter()
        .enumerate()
        .map(|(i, pose)| {
            let (mut rgb, mut depth) = render_truth(&spec.geometry, pose, &cam);
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(i as u64);
            let mut recorded = *pose;
            if noise.pose_sigma > 0.0 {
                for a in 0..3 {
                    recorded.position[a] += pose_noise.sample(&mut rng);
                }
            }
            if noise.brightness > 0.0 {
                let gain = Uniform::new_inclusive(1.0 - noise.brightness, 1.0 + noise.brightness)
                    .expect("valid range")
                    .sample(&mut rng);
                for p in rgb.pixels_mut() {
                    p.0 = p.0.map(|c| (c as f64 * gain).round().clamp(0.0, 255.0) as u8);
                }
            }
            if noise.depth_sigma > 0.0 {
                for d in depth.as_mut_slice() {
                    let e = depth_noise.sample(&mut rng);
                    if *d > 0.0 {
                        *d = (*d as f64 * (1.0 + e)).max(0.0) as f32;
                    }
                }
            }
            Frame {
                id: i as u64,
                pose: recorded,
                rgb,
                depth,
            }
        })
        .collect();

    Ok(SyntheticScene {
        spec: spec.clone(),
        camera: cam,
        frames,
        true_poses,
    })
}

impl SyntheticScene {
    pub fn grid(&self, voxel_size: f64) -> Result<GridSpec> {
        self.spec.grid.at_voxel_size(voxel_size)
    }

    /// Ground-truth surface voxels at the given resolution over the scene grid.
    pub fn surface_voxels(&self, voxel_size: f64) -> Result<Vec<[usize; 3]>> {
        Ok(self.spec.geometry.surface_voxels(&self.grid(voxel_size)?))
    }

    /// True when the world point is the first thing the true camera `frame`
    /// sees along its ray, within `tolerance` meters, and inside the image.
    pub fn is_visible(&self, point: &Vector3<f64>, frame: usize, tolerance: f64) -> bool {
        let pose = &self.true_poses[frame];
        let view = View::from_pose(pose);
        if view.project(point, &self.camera).pixel(&self.camera).is_none() {
            return false;
        }
        let d = point - pose.position;
        let len = d.norm();
        match self.spec.geometry.trace(&pose.position, &(d / len)) {
            Some(hit) => hit.t >= len - tolerance,
            None => true,
        }
    }

    /// Surface voxels visible from at least one of `frames`.
    pub fn visible_surface_voxels(&self, grid: &GridSpec, frames: &[usize]) -> Vec<[usize; 3]> {
        let tol = grid.voxel_size;
        self.spec
            .geometry
            .surface_voxels(grid)
            .into_par_iter()
            .filter(|&[i, j, k]| {
                let c = grid.voxel_center(i, j, k);
                frames.iter().any(|&f| self.is_visible(&c, f, tol))
            })
            .collect()
    }

    pub fn manifest(&self) -> Manifest {
        Manifest {
            scene_id: self.spec.scene_id.clone(),
            frame_stride: Some(1),
            camera: self.camera,
            convention: None,
            grid: Some(self.spec.grid),
            frames: self
                .frames
                .iter()
                .map(|f| FrameEntry {
                    id: f.id,
                    rgb: PathBuf::from(format!("rgb/{:06}.png", f.id)),
                    depth: PathBuf::from(format!("depth/{:06}.pfm", f.id)),
                    position: f.pose.position.into(),
                    ypr_deg: f.pose.ypr_degrees(),
                    split: None::<Split>,
                })
                .collect(),
        }
    }

    /// Writes the scene in the manifest layout plus `surface_voxels.txt`
    /// (`x y z` per line at the reference resolution) and `synthetic.json`
    /// (generator spec and true poses). Returns the manifest path.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        for sub in ["rgb", "depth"] {
            let d = dir.join(sub);
            std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        }
        let manifest = self.manifest();
        self.frames
            .par_iter()
            .zip(&manifest.frames)
            .try_for_each(|(f, entry)| -> Result<()> {
                write_rgb(&dir.join(&entry.rgb), &f.rgb)?;
                write_pfm(&dir.join(&entry.depth), f.depth.width(), f.depth.height(), f.depth.as_slice())
            })?;
        let path = dir.join(super::MANIFEST_NAME);
        manifest.write(&path)?;

        let grid = self.grid(self.spec.reference_voxel_size)?;
        let mut text = String::new();
        for [i, j, k] in self.spec.geometry.surface_voxels(&grid) {
            let c = grid.voxel_center(i, j, k);
            text.push_str(&format!("{} {} {}\n", c.x, c.y, c.z));
        }
        let voxels = dir.join("surface_voxels.txt");
        std::fs::write(&voxels, text).map_err(|e| Error::io(&voxels, e))?;

        #[derive(Serialize)]
        struct Truth<'a> {
            spec: &'a SyntheticSpec,
            true_poses: &'a [FramePose],
        }
        let truth = dir.join("synthetic.json");
        let json = serde_json::to_string_pretty(&Truth {
            spec: &self.spec,
            true_poses: &self.true_poses,
        })
        .expect("spec serializes");
        std::fs::write(&truth, json).map_err(|e| Error::io(&truth, e))?;
        Ok(path)
    }
}
