use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

/// Camera-to-world rigid transform: `x_world = R · x_cam + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Pose::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Pose { rotation, translation }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Pose::new(UnitQuaternion::identity(), t)
    }

    /// Builds a pose from raw quaternion coefficients `[w, x, y, z]`,
    /// renormalizing them.
    pub fn from_raw(q: [f64; 4], t: [f64; 3]) -> Self {
        Pose {
            rotation: UnitQuaternion::from_quaternion(Quaternion::new(q[0], q[1], q[2], q[3])),
            translation: Vector3::new(t[0], t[1], t[2]),
        }
    }

    /// Quaternion coefficients `[w, x, y, z]`.
    pub fn quaternion_wxyz(&self) -> [f64; 4] {
        let q = self.rotation.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    pub fn translation_array(&self) -> [f64; 3] {
        [self.translation.x, self.translation.y, self.translation.z]
    }

    /// Camera looking from `eye` toward `target`, with camera +y pointing
    /// roughly along `down` (image rows grow downward).
    pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>, down: Vector3<f64>) -> Self {
        let z = (target - eye).normalize();
        let x = down.cross(&z).normalize();
        let y = z.cross(&x);
        let r = Matrix3::from_columns(&[x, y, z]);
        let rot = nalgebra::Rotation3::from_matrix_unchecked(r);
        Pose::new(UnitQuaternion::from_rotation_matrix(&rot), eye)
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let inv = self.rotation.inverse();
        Pose {
            rotation: inv,
            translation: -(inv * self.translation),
        }
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    /// Camera to world.
    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// World to camera.
    pub fn to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.inverse() * (p - self.translation)
    }

    /// Rotation angle (degrees) and translation distance between two poses.
    pub fn distance(&self, other: &Pose) -> (f64, f64) {
        let ang = self.rotation.angle_to(&other.rotation).to_degrees();
        let d = (self.translation - other.translation).norm();
        (ang, d)
    }

    pub fn is_finite(&self) -> bool {
        self.quaternion_wxyz().iter().all(|v| v.is_finite())
            && self.translation.iter().all(|v| v.is_finite())
    }
}

/// Rotation matrix of the normalized quaternion `[w, x, y, z]`.
pub fn rotation_from_wxyz(q: [f64; 4]) -> Matrix3<f64> {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    let (w, x, y, z) = (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Pulls `dL/dR` back to the raw quaternion coefficients `[w, x, y, z]`,
/// including the normalization `q / |q|`.
pub fn quaternion_gradient(q: [f64; 4], d_r: &Matrix3<f64>) -> [f64; 4] {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    let (w, x, y, z) = (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
    let g = |r: usize, c: usize| d_r[(r, c)];
    let gw = 2.0
        * (-z * g(0, 1) + y * g(0, 2) + z * g(1, 0) - x * g(1, 2) - y * g(2, 0) + x * g(2, 1));
    let gx = 2.0 * (y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - 2.0 * x * g(1, 1) - w * g(1, 2) + z * g(2, 0)
        + w * g(2, 1)
        - 2.0 * x * g(2, 2));
    let gy = 2.0
        * (-2.0 * y * g(0, 0) + x * g(0, 1) + w * g(0, 2) + x * g(1, 0) + z * g(1, 2) - w * g(2, 0)
            + z * g(2, 1)
            - 2.0 * y * g(2, 2));
    let gz = 2.0
        * (-2.0 * z * g(0, 0) - w * g(0, 1) + x * g(0, 2) + w * g(1, 0) - 2.0 * z * g(1, 1)
            + y * g(1, 2)
            + x * g(2, 0)
            + y * g(2, 1));
    let unit = [w, x, y, z];
    let gu = [gw, gx, gy, gz];
    let dot: f64 = unit.iter().zip(&gu).map(|(a, b)| a * b).sum();
    [
        (gu[0] - unit[0] * dot) / n,
        (gu[1] - unit[1] * dot) / n,
        (gu[2] - unit[2] * dot) / n,
        (gu[3] - unit[3] * dot) / n,
    ]
}
