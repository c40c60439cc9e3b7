//! Pinhole camera, Euler-angle poses and voxel backprojection.
//!
//! Conventions used throughout the crate:
//!
//! * World frame is right-handed with +Z up.
//! * A pose's Euler angles are `(roll, pitch, yaw)` about the body X, Y and Z
//!   axes. The default composition is intrinsic Z-Y-X, `R = Rz(yaw) Ry(pitch) Rx(roll)`,
//!   and `R` maps body axes to world axes.
//! * The body frame is forward-left-up: at zero rotation the camera looks
//!   along world +X. Positive pitch tilts the nose down, so a nadir-looking
//!   camera has `pitch = +pi/2`.
//! * The camera frame is +Z forward, +X right, +Y down.
//! * Pixel `(i, j)` covers `[i, i+1) x [j, j+1)`; a projection is looked up at
//!   `(floor(x), floor(y))`.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pinhole intrinsics plus image size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraModel {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self> {
        let cam = CameraModel {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Camera with the principal point at the image center and square pixels
    /// covering `hfov` radians horizontally.
    pub fn from_hfov(width: u32, height: u32, hfov: f64) -> Result<Self> {
        let f = width as f64 / 2.0 / (hfov / 2.0).tan();
        Self::new(f, f, width as f64 / 2.0, height as f64 / 2.0, width, height)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.fx, self.fy, self.cx, self.cy]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidCamera("non-finite intrinsics".into()));
        }
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::InvalidCamera(format!(
                "focal lengths must be positive (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidCamera("image size must be nonzero".into()));
        }
        if !(0.0..self.width as f64).contains(&self.cx)
            || !(0.0..self.height as f64).contains(&self.cy)
        {
            return Err(Error::InvalidCamera(format!(
                "principal point ({}, {}) outside {}x{} image",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }

    pub fn intrinsic_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            self.fx, 0.0, self.cx, //
            0.0, self.fy, self.cy, //
            0.0, 0.0, 1.0,
        )
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    /// Same intrinsics rescaled to a different output size.
    pub fn rescaled(&self, width: u32, height: u32) -> Result<Self> {
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        Self::new(
            self.fx * sx,
            self.fy * sy,
            self.cx * sx,
            self.cy * sy,
            width,
            height,
        )
    }
}

/// Order in which the three Euler rotations are composed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EulerOrder {
    /// `Rz(yaw) Ry(pitch) Rx(roll)`, the usual UAV telemetry convention.
    #[default]
    Zyx,
    /// `Rx(roll) Ry(pitch) Rz(yaw)`.
    Xyz,
}

fn rot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

fn rot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

fn rot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Body-to-world rotation for `(roll, pitch, yaw)` in radians, Z-Y-X order.
pub fn euler_to_rotation(angles: &Vector3<f64>) -> Matrix3<f64> {
    euler_to_rotation_ordered(angles, EulerOrder::Zyx)
}

pub fn euler_to_rotation_ordered(angles: &Vector3<f64>, order: EulerOrder) -> Matrix3<f64> {
    let (rx, ry, rz) = (rot_x(angles.x), rot_y(angles.y), rot_z(angles.z));
    match order {
        EulerOrder::Zyx => rz * ry * rx,
        EulerOrder::Xyz => rx * ry * rz,
    }
}

/// Drone position and orientation for one frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FramePose {
    /// World position in meters.
    pub position: Vector3<f64>,
    /// `(roll, pitch, yaw)` in radians.
    pub orientation: Vector3<f64>,
}

impl FramePose {
    pub fn new(position: Vector3<f64>, orientation: Vector3<f64>) -> Result<Self> {
        let pose = FramePose {
            position,
            orientation,
        };
        pose.validate()?;
        Ok(pose)
    }

    /// Builds a pose from yaw/pitch/roll given in degrees, the on-disk convention.
    pub fn from_ypr_degrees(position: [f64; 3], ypr: [f64; 3]) -> Result<Self> {
        Self::new(
            Vector3::from(position),
            Vector3::new(ypr[2].to_radians(), ypr[1].to_radians(), ypr[0].to_radians()),
        )
    }

    pub fn ypr_degrees(&self) -> [f64; 3] {
        [
            self.orientation.z.to_degrees(),
            self.orientation.y.to_degrees(),
            self.orientation.x.to_degrees(),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        if self.position.iter().chain(self.orientation.iter()).all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::InvalidPose(format!(
                "non-finite component in position {:?} / orientation {:?}",
                self.position.as_slice(),
                self.orientation.as_slice()
            )))
        }
    }

    /// Pose at `position` whose optical axis points at `target`, with zero roll.
    pub fn looking_at(position: Vector3<f64>, target: Vector3<f64>) -> Result<Self> {
        let d = target - position;
        let horizontal = (d.x * d.x + d.y * d.y).sqrt();
        let yaw = d.y.atan2(d.x);
        let pitch = (-d.z).atan2(horizontal);
        Self::new(position, Vector3::new(0.0, pitch, yaw))
    }
}

/// Fixed relation between the drone body and the camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseConvention {
    pub order: EulerOrder,
    /// Camera-to-body rotation of the gimbal, expressed in body axes.
    pub mount: Matrix3<f64>,
}

impl Default for PoseConvention {
    fn default() -> Self {
        PoseConvention {
            order: EulerOrder::Zyx,
            mount: Matrix3::identity(),
        }
    }
}

/// Maps forward-left-up body axes onto right-down-forward camera axes.
const BODY_TO_CAMERA_AXES: Matrix3<f64> = Matrix3::new(
    0.0, -1.0, 0.0, //
    0.0, 0.0, -1.0, //
    1.0, 0.0, 0.0,
);

/// Extrinsics of one frame, precomputed from its pose.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct View {
    pub position: Vector3<f64>,
    pub world_to_camera: Matrix3<f64>,
}

impl View {
    pub fn new(pose: &FramePose, convention: &PoseConvention) -> Self {
        let body_to_world = euler_to_rotation_ordered(&pose.orientation, convention.order);
        View {
            position: pose.position,
            world_to_camera: BODY_TO_CAMERA_AXES
                * convention.mount.transpose()
                * body_to_world.transpose(),
        }
    }

    pub fn from_pose(pose: &FramePose) -> Self {
        Self::new(pose, &PoseConvention::default())
    }

    #[inline]
    pub fn to_camera(&self, world: &Vector3<f64>) -> Vector3<f64> {
        self.world_to_camera * (world - self.position)
    }

    #[inline]
    pub fn to_world(&self, camera: &Vector3<f64>) -> Vector3<f64> {
        self.world_to_camera.transpose() * camera + self.position
    }

    /// Camera-space point -> intrinsic projection -> homogeneous division.
    #[inline]
    pub fn project(&self, world: &Vector3<f64>, cam: &CameraModel) -> Projection {
        let p = self.to_camera(world);
        let z = p.z;
        Projection {
            x: (cam.fx * p.x + cam.cx * z) / z,
            y: (cam.fy * p.y + cam.cy * z) / z,
            depth: z,
        }
    }

    /// World point seen at continuous pixel `(x, y)` with camera-frame depth `depth`.
    pub fn unproject(&self, x: f64, y: f64, depth: f64, cam: &CameraModel) -> Vector3<f64> {
        let p = Vector3::new(
            (x - cam.cx) * depth / cam.fx,
            (y - cam.cy) * depth / cam.fy,
            depth,
        );
        self.to_world(&p)
    }

    /// Unit-depth camera ray through continuous pixel `(x, y)`, in world axes.
    pub fn ray_direction(&self, x: f64, y: f64, cam: &CameraModel) -> Vector3<f64> {
        let d = Vector3::new((x - cam.cx) / cam.fx, (y - cam.cy) / cam.fy, 1.0);
        self.world_to_camera.transpose() * d
    }

    pub fn optical_axis(&self) -> Vector3<f64> {
        self.world_to_camera.row(2).transpose()
    }
}

/// A voxel: cube centered at `center` with edge `side`, both in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoxelCoord {
    pub center: Vector3<f64>,
    pub side: f64,
}

impl VoxelCoord {
    pub fn new(center: Vector3<f64>, side: f64) -> Result<Self> {
        if !(side > 0.0) || !side.is_finite() {
            return Err(Error::InvalidGrid(format!("voxel side must be positive, got {side}")));
        }
        Ok(VoxelCoord { center, side })
    }
}

/// Pixel coordinates of a projected point plus its camera-frame depth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub x: f64,
    pub y: f64,
    /// Camera-frame z in meters. Also the distance used for depth voting.
    pub depth: f64,
}

impl Projection {
    /// True when the point is on or behind the image plane; its pixel
    /// coordinates are meaningless then.
    pub fn is_behind(&self) -> bool {
        !(self.depth > 0.0)
    }

    /// Integer pixel for an in-bounds projection.
    pub fn pixel(&self, cam: &CameraModel) -> Option<(u32, u32)> {
        in_bounds(self, cam).then(|| (self.x.floor() as u32, self.y.floor() as u32))
    }
}

/// Projects a voxel center into the frame described by `pose`.
pub fn backproject(voxel: &VoxelCoord, pose: &FramePose, cam: &CameraModel) -> Projection {
    View::from_pose(pose).project(&voxel.center, cam)
}

/// Half-open image bounds test, also rejecting points behind the camera.
#[inline]
pub fn in_bounds(p: &Projection, cam: &CameraModel) -> bool {
    p.depth > 0.0
        && p.x >= 0.0
        && p.x < cam.width as f64
        && p.y >= 0.0
        && p.y < cam.height as f64
}
