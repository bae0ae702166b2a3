use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::{Pose, SceneError};

/// Pinhole intrinsics. Pixel `(x, y)` samples the image point `(x, y)`, so a
/// point on the optical axis lands exactly on pixel `(cx, cy)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    #[serde(default = "default_near")]
    pub near: f64,
    #[serde(default = "default_far")]
    pub far: f64,
}

fn default_near() -> f64 {
    0.01
}
fn default_far() -> f64 {
    100.0
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Self {
        CameraIntrinsics {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            near: default_near(),
            far: default_far(),
        }
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(SceneError::InvalidCamera("focal lengths must be positive".into()));
        }
        if !(self.near > 0.0 && self.near < self.far) {
            return Err(SceneError::InvalidCamera("need 0 < near < far".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(SceneError::InvalidCamera("empty image".into()));
        }
        Ok(())
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    /// Camera-frame point seen at pixel `(x, y)` with depth `z`.
    pub fn back_project(&self, x: f64, y: f64, z: f64) -> Vector3<f64> {
        Vector3::new((x - self.cx) * z / self.fx, (y - self.cy) * z / self.fy, z)
    }
}

/// Pixel position and camera depth of a projected point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub z: f64,
}

/// Projects a world point through `pose` (camera to world) and `k`.
pub fn project(pose: &Pose, k: &CameraIntrinsics, point: &Vector3<f64>) -> Result<Projection, SceneError> {
    let c = pose.to_camera(point);
    if c.z <= k.near {
        return Err(SceneError::BehindCamera { z: c.z });
    }
    Ok(Projection {
        u: k.fx * c.x / c.z + k.cx,
        v: k.fy * c.y / c.z + k.cy,
        z: c.z,
    })
}

/// Jacobian of `(u, v, z)` with respect to the world point.
pub fn projection_jacobian(pose: &Pose, k: &CameraIntrinsics, point: &Vector3<f64>) -> Matrix3<f64> {
    let c = pose.to_camera(point);
    let iz = 1.0 / c.z;
    let d_cam = Matrix3::new(
        k.fx * iz,
        0.0,
        -k.fx * c.x * iz * iz,
        0.0,
        k.fy * iz,
        -k.fy * c.y * iz * iz,
        0.0,
        0.0,
        1.0,
    );
    d_cam * pose.rotation_matrix().transpose()
}
