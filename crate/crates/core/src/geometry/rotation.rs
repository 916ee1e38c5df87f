use std::ops::Mul;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::GeometryError;

/// Orthonormality error above which a matrix is projected back onto SO(3).
pub const RENORMALIZE_THRESHOLD: f64 = 1e-6;

/// A proper rotation matrix.
///
/// Every constructor either produces a matrix within `1e-9` of SO(3) or fails.
/// Inputs whose orthonormality error exceeds [`RENORMALIZE_THRESHOLD`] are
/// projected onto the nearest rotation (polar decomposition through an SVD).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[[f64; 3]; 3]", into = "[[f64; 3]; 3]")]
pub struct Rotation(Matrix3<f64>);

impl Rotation {
    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    /// Validates `m`, renormalizing it when it has drifted off SO(3).
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self, GeometryError> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        let m = if orthonormality_error(&m) > RENORMALIZE_THRESHOLD {
            project_to_orthogonal(&m)?
        } else {
            m
        };
        if m.determinant() < 0.0 {
            return Err(GeometryError::ImproperRotation);
        }
        Ok(Self(m))
    }

    /// Nearest proper rotation to an arbitrary matrix (reflections are
    /// resolved by flipping the weakest singular direction).
    pub fn nearest(m: &Matrix3<f64>) -> Result<Self, GeometryError> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        let svd = m.svd(true, true);
        let (u, v_t) = match (svd.u, svd.v_t) {
            (Some(u), Some(v_t)) => (u, v_t),
            _ => return Err(GeometryError::Degenerate),
        };
        let mut d = Matrix3::identity();
        if (u * v_t).determinant() < 0.0 {
            let weakest = svd.singular_values.imin();
            d[(weakest, weakest)] = -1.0;
        }
        Ok(Self(u * d * v_t))
    }

    /// Haar-uniform random rotation (normalized Gaussian quaternion).
    pub fn uniform<R: rand::Rng + ?Sized>(rng: &mut R) -> Self {
        use rand_distr::{Distribution, StandardNormal};
        loop {
            let q: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(rng));
            let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n > 1e-6 {
                let quat = nalgebra::UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(
                    q[0], q[1], q[2], q[3],
                ));
                return Self(*quat.to_rotation_matrix().matrix());
            }
        }
    }

    /// Rodrigues' formula for an axis-angle vector.
    pub fn exp(omega: &Vector3<f64>) -> Self {
        let theta = omega.norm();
        let k = skew(omega);
        if theta < 1e-12 {
            return Self(Matrix3::identity() + k);
        }
        let a = theta.sin() / theta;
        let b = (1.0 - theta.cos()) / (theta * theta);
        Self(Matrix3::identity() + k * a + k * k * b)
    }

    /// Axis-angle vector of this rotation, angle in `[0, π]`.
    pub fn log(&self) -> Vector3<f64> {
        let r = &self.0;
        let c = ((r.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
        let theta = c.acos();
        let w = Vector3::new(
            r[(2, 1)] - r[(1, 2)],
            r[(0, 2)] - r[(2, 0)],
            r[(1, 0)] - r[(0, 1)],
        );
        if theta < 1e-8 {
            return w * 0.5;
        }
        if std::f64::consts::PI - theta < 1e-6 {
            // Near π the skew part vanishes; recover the axis from the symmetric part.
            let s = (r + Matrix3::identity()) * 0.5;
            let col = (0..3)
                .max_by(|&i, &j| s[(i, i)].total_cmp(&s[(j, j)]))
                .unwrap_or(0);
            let mut axis: Vector3<f64> = s.column(col).into();
            axis /= axis.norm();
            if axis.dot(&w) < 0.0 {
                axis = -axis;
            }
            return axis * theta;
        }
        w * (theta / (2.0 * theta.sin()))
    }

    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        let n = axis.norm();
        if n == 0.0 {
            return Self::identity();
        }
        Self::exp(&(axis * (angle / n)))
    }

    pub fn rot_x(angle: f64) -> Self {
        Self::from_axis_angle(&Vector3::x(), angle)
    }

    pub fn rot_y(angle: f64) -> Self {
        Self::from_axis_angle(&Vector3::y(), angle)
    }

    pub fn rot_z(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self(Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0))
    }

    /// Gram-Schmidt decode of the continuous 6-entry representation
    /// (first two columns of the matrix).
    pub fn from_6d(first: &Vector3<f64>, second: &Vector3<f64>) -> Result<Self, GeometryError> {
        let n1 = first.norm();
        if !(n1 > 1e-12) {
            return Err(GeometryError::Degenerate);
        }
        let b1 = first / n1;
        let u2 = second - b1 * b1.dot(second);
        let n2 = u2.norm();
        if !(n2 > 1e-12) {
            return Err(GeometryError::Degenerate);
        }
        let b2 = u2 / n2;
        let b3 = b1.cross(&b2);
        Ok(Self(Matrix3::from_columns(&[b1, b2, b3])))
    }

    /// First two columns, the inverse of [`Rotation::from_6d`].
    pub fn to_6d(&self) -> [f64; 6] {
        let m = &self.0;
        [
            m[(0, 0)],
            m[(1, 0)],
            m[(2, 0)],
            m[(0, 1)],
            m[(1, 1)],
            m[(2, 1)],
        ]
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn inverse(&self) -> Self {
        Self(self.0.transpose())
    }

    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0 * v
    }

    pub fn compose(&self, other: &Rotation) -> Self {
        let m = self.0 * other.0;
        if orthonormality_error(&m) > RENORMALIZE_THRESHOLD {
            // Products of valid rotations only drift by rounding; projection
            // cannot fail here.
            Self::nearest(&m).unwrap_or(Self(m))
        } else {
            Self(m)
        }
    }

    /// Row-major entries.
    pub fn to_rows(&self) -> [[f64; 3]; 3] {
        let m = &self.0;
        [
            [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
            [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
            [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
        ]
    }
}

impl Default for Rotation {
    fn default() -> Self {
        Self::identity()
    }
}

impl Mul for Rotation {
    type Output = Rotation;

    fn mul(self, rhs: Rotation) -> Rotation {
        self.compose(&rhs)
    }
}

impl TryFrom<[[f64; 3]; 3]> for Rotation {
    type Error = GeometryError;

    fn try_from(rows: [[f64; 3]; 3]) -> Result<Self, Self::Error> {
        let m = Matrix3::from_fn(|i, j| rows[i][j]);
        Rotation::from_matrix(m)
    }
}

impl From<Rotation> for [[f64; 3]; 3] {
    fn from(r: Rotation) -> Self {
        r.to_rows()
    }
}

/// `max |mᵀm − I|`.
pub fn orthonormality_error(m: &Matrix3<f64>) -> f64 {
    (m.transpose() * m - Matrix3::identity()).abs().max()
}

fn project_to_orthogonal(m: &Matrix3<f64>) -> Result<Matrix3<f64>, GeometryError> {
    let svd = m.svd(true, true);
    match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => Ok(u * v_t),
        _ => Err(GeometryError::Degenerate),
    }
}

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Angle of the relative rotation, `arccos((Tr(r1ᵀ r2) − 1) / 2)`.
///
/// The arccos argument is clamped to `[-1, 1]`, so the result is always in
/// `[0, π]` even when rounding pushes the trace out of range.
pub fn geodesic_distance(r1: &Rotation, r2: &Rotation) -> f64 {
    let c = ((r1.0.transpose() * r2.0).trace() - 1.0) / 2.0;
    c.clamp(-1.0, 1.0).acos()
}
