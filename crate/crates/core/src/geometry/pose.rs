use std::ops::Mul;

use nalgebra::{Matrix4, Vector3};
use serde::{Deserialize, Serialize};

use super::{GeometryError, Rotation};

/// Rigid transform in SE(3). Applied to a point as `R·x + t`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose {
    pub rotation: Rotation,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn new(rotation: Rotation, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::default()
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self::new(Rotation::identity(), t)
    }

    pub fn from_rotation(r: Rotation) -> Self {
        Self::new(r, Vector3::zeros())
    }

    /// `self ∘ other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation.compose(&other.rotation),
            translation: self.rotation.rotate(&other.translation) + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let r_inv = self.rotation.inverse();
        Pose {
            translation: -r_inv.rotate(&self.translation),
            rotation: r_inv,
        }
    }

    pub fn apply(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.rotate(x) + self.translation
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(self.rotation.matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn from_matrix(m: &Matrix4<f64>) -> Result<Pose, GeometryError> {
        let bottom = m.fixed_view::<1, 4>(3, 0);
        if (bottom[0].abs() + bottom[1].abs() + bottom[2].abs() + (bottom[3] - 1.0).abs()) > 1e-9 {
            return Err(GeometryError::NotRigid);
        }
        let rotation = Rotation::from_matrix(m.fixed_view::<3, 3>(0, 0).into_owned())?;
        let translation: Vector3<f64> = m.fixed_view::<3, 1>(0, 3).into_owned();
        if translation.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        Ok(Pose {
            rotation,
            translation,
        })
    }

    /// Row-major 4×4 rows, convenient for JSON output.
    pub fn to_rows(&self) -> [[f64; 4]; 4] {
        let m = self.to_matrix();
        std::array::from_fn(|i| std::array::from_fn(|j| m[(i, j)]))
    }

    /// Camera-style pose whose +z axis looks from `eye` towards `target`,
    /// returned as the world→camera transform.
    pub fn look_at(
        eye: &Vector3<f64>,
        target: &Vector3<f64>,
        up: &Vector3<f64>,
    ) -> Result<Pose, GeometryError> {
        let z = target - eye;
        let zn = z.norm();
        if !(zn > 0.0) {
            return Err(GeometryError::Degenerate);
        }
        let z = z / zn;
        // Image y points down, so camera x = z × up keeps images upright.
        let x = z.cross(up);
        let xn = x.norm();
        if !(xn > 1e-12) {
            return Err(GeometryError::Degenerate);
        }
        let x = x / xn;
        let y = z.cross(&x);
        let cam_to_world_r = Rotation::from_matrix(nalgebra::Matrix3::from_columns(&[x, y, z]))?;
        Ok(Pose::new(cam_to_world_r, *eye).inverse())
    }
}

impl Mul for Pose {
    type Output = Pose;

    fn mul(self, rhs: Pose) -> Pose {
        self.compose(&rhs)
    }
}

/// Uniform scaling `diag(s, s, s, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct ScaleTransform(f64);

impl ScaleTransform {
    pub fn new(s: f64) -> Result<Self, GeometryError> {
        if s.is_finite() && s > 0.0 {
            Ok(Self(s))
        } else {
            Err(GeometryError::InvalidScale(s))
        }
    }

    pub fn unit() -> Self {
        Self(1.0)
    }

    pub fn factor(&self) -> f64 {
        self.0
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        Matrix4::from_diagonal(&nalgebra::Vector4::new(self.0, self.0, self.0, 1.0))
    }
}

impl Default for ScaleTransform {
    fn default() -> Self {
        Self::unit()
    }
}

impl TryFrom<f64> for ScaleTransform {
    type Error = GeometryError;

    fn try_from(s: f64) -> Result<Self, GeometryError> {
        Self::new(s)
    }
}

impl From<ScaleTransform> for f64 {
    fn from(s: ScaleTransform) -> f64 {
        s.0
    }
}

/// Euclidean distance between two translations.
pub fn translation_distance(p1: &Vector3<f64>, p2: &Vector3<f64>) -> f64 {
    (p1 - p2).norm()
}
