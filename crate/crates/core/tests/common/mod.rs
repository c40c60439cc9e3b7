#![allow(dead_code)]

use mscarve::carving::{CarveParams, Frame, GridSpec};
use mscarve::dataset::{generate_synthetic, AaBox, GridRegion, Orbit, SyntheticScene, SyntheticSpec};
use mscarve::geometry::{CameraModel, View};
use mscarve::hsv::{bin_to_rgb, rgb_bin, BIN_COUNT};

/// Small scene: 64x48 images, a 1.5 m box on a textured plane, orbit at 8 m.
/// The grid is 10x10x10 voxels of 0.5 m.
pub fn toy_spec(poses: usize) -> SyntheticSpec {
    let mut s = SyntheticSpec::reference();
    s.scene_id = "toy".into();
    s.width = 64;
    s.height = 48;
    s.geometry.patch_size = 1.0;
    s.geometry.boxes = vec![AaBox {
        min: [-1.0, -1.0, 0.0],
        max: [1.0, 0.5, 1.5],
        roof: [200, 60, 40],
        wall: [180, 170, 150],
    }];
    s.orbit = Orbit {
        center: [0.0, 0.0],
        radius: 3.0,
        altitude: 8.0,
        poses,
        target: [0.0, 0.0, 0.0],
    };
    s.grid = GridRegion {
        origin: [-2.25, -2.25, -0.5],
        extent: [5.0, 5.0, 5.0],
        block_size: [5.0, 5.0, 5.0],
    };
    s.reference_voxel_size = 0.5;
    s
}

pub fn toy_scene(poses: usize) -> SyntheticScene {
    generate_synthetic(&toy_spec(poses)).expect("toy scene generates")
}

/// Dense reference result of the voting rule.
pub struct Naive {
    pub seen: Vec<u32>,
    pub bins: Vec<Vec<f64>>,
    /// `(center, rgb)` in global index order.
    pub survivors: Vec<([f64; 3], [u8; 3])>,
}

/// Straightforward triple loop over the whole grid with dense 1500-entry
/// histograms and the weight formulas written out inline.
pub fn naive_carve(grid: &GridSpec, frames: &[Frame], cam: &CameraModel, p: &CarveParams) -> Naive {
    let [nx, ny, nz] = grid.dims();
    let n = nx * ny * nz;
    let mut seen = vec![0u32; n];
    let mut bins = vec![vec![0.0f64; BIN_COUNT as usize]; n];
    let mut order: Vec<&Frame> = frames.iter().collect();
    order.sort_by_key(|f| f.id);
    for frame in order {
        let view = View::from_pose(&frame.pose);
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    let idx = i + nx * (j + ny * k);
                    let proj = view.project(&grid.voxel_center(i, j, k), cam);
                    let z = proj.depth;
                    let inside = z > 0.0
                        && proj.x >= 0.0
                        && proj.x < cam.width as f64
                        && proj.y >= 0.0
                        && proj.y < cam.height as f64;
                    if !inside || z > p.max_distance {
                        continue;
                    }
                    let (px, py) = (proj.x.floor() as u32, proj.y.floor() as u32);
                    let d = frame.depth.get(px, py);
                    if !d.is_finite() || d <= 0.0 {
                        continue;
                    }
                    let diff = d as f64 - z;
                    if diff.abs() < p.eps_seen {
                        seen[idx] += 1;
                    }
                    let w1 = (-p.alpha.ln() / p.max_distance * z).exp();
                    let w2 = (-(diff * diff) / (2.0 * p.sigma * p.sigma)).exp();
                    let bin = rgb_bin(frame.rgb.get_pixel(px, py).0).index() as usize;
                    bins[idx][bin] += w1 * w2;
                }
            }
        }
    }
    let mut survivors = Vec::new();
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let idx = i + nx * (j + ny * k);
                if seen[idx] <= p.seen_threshold {
                    continue;
                }
                let total: f64 = bins[idx].iter().sum();
                if total <= 0.0 {
                    continue;
                }
                let mut best = 0;
                for b in 1..bins[idx].len() {
                    if bins[idx][b] > bins[idx][best] {
                        best = b;
                    }
                }
                if bins[idx][best] / total > p.eps_hsv {
                    let c = grid.voxel_center(i, j, k);
                    survivors.push(([c.x, c.y, c.z], bin_to_rgb(best as u16).unwrap()));
                }
            }
        }
    }
    Naive {
        seen,
        bins,
        survivors,
    }
}

/// Index of the voxel each pixel should show: the smallest camera depth among
/// voxels whose square footprint covers the pixel, earliest voxel on ties.
pub fn brute_force_owner(
    model: &mscarve::CarvedModel,
    pose: &mscarve::FramePose,
    cam: &CameraModel,
    max_distance: f64,
) -> Vec<Option<usize>> {
    let view = View::from_pose(pose);
    let (w, h) = (cam.width as i64, cam.height as i64);
    let mut owner: Vec<Option<(usize, f64)>> = vec![None; cam.pixel_count()];
    for (n, v) in model.voxels.iter().enumerate() {
        let p = view.project(&v.center.into(), cam);
        if !mscarve::geometry::in_bounds(&p, cam) || p.depth > max_distance {
            continue;
        }
        let hw = (cam.fx.max(cam.fy) * model.voxel_size / (2.0 * p.depth)).ceil() as i64;
        let (px, py) = (p.x.floor() as i64, p.y.floor() as i64);
        for y in 0..h {
            for x in 0..w {
                if (x - px).abs() > hw || (y - py).abs() > hw {
                    continue;
                }
                let slot = &mut owner[(y * w + x) as usize];
                if slot.is_none_or(|(_, z)| p.depth < z) {
                    *slot = Some((n, p.depth));
                }
            }
        }
    }
    owner.into_iter().map(|o| o.map(|(n, _)| n)).collect()
}

pub fn random_model(seed: u64, count: usize, voxel_size: f64) -> mscarve::CarvedModel {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let voxels = (0..count)
        .map(|_| mscarve::CarvedVoxel {
            // coarse lattice so exact depth ties happen
            center: [
                rng.random_range(-16..16) as f64 * voxel_size,
                rng.random_range(-16..16) as f64 * voxel_size,
                rng.random_range(0..8) as f64 * voxel_size,
            ],
            rgb: [rng.random(), rng.random(), rng.random()],
        })
        .collect();
    mscarve::CarvedModel {
        voxel_size,
        voxels,
        scene_id: "random".into(),
        params: CarveParams::for_voxel_size(voxel_size),
    }
}

/// Bins whose midpoint color, once rounded to 8 bits, lands in a neighbouring
/// bin. All are dark or nearly gray cells where one rounding step crosses a
/// saturation or value boundary.
pub const EIGHT_BIT_EXCEPTIONS: [u16; 36] = [
    1, 100, 102, 120, 300, 302, 320, 400, 401, 402, 410, 420, 501, 600, 602, 620, 800, 802, 820, 900, 901,
    902, 910, 920, 1001, 1100, 1102, 1120, 1300, 1302, 1320, 1400, 1401, 1402, 1410, 1420,
];
