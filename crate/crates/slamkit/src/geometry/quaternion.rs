//! Quaternion algebra over free 4-vectors.
//!
//! Storage order is `(w, x, y, z)` everywhere: in this struct, in state
//! blocks, in serialized dumps. The filter treats orientation as an
//! unconstrained 4-vector and renormalizes the mean after corrections, so
//! every formula here (rotation, composition, their Jacobians) is written
//! for a general, not-necessarily-unit quaternion.

use nalgebra::{Matrix3, Matrix4, SMatrix, Vector3, Vector4};

/// Unit-norm tolerance used by [`Quaternion::is_normalized`].
pub const UNIT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quaternion {
    pub const IDENTITY: Quaternion = Quaternion {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Self { w, x, y, z }
    }

    /// Components in storage order `(w, x, y, z)`.
    pub fn coords(&self) -> Vector4<f64> {
        Vector4::new(self.w, self.x, self.y, self.z)
    }

    pub fn from_coords(c: Vector4<f64>) -> Self {
        Self::new(c[0], c[1], c[2], c[3])
    }

    pub fn imag(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn norm(&self) -> f64 {
        self.coords().norm()
    }

    pub fn is_normalized(&self) -> bool {
        (self.norm() - 1.0).abs() < UNIT_TOL
    }

    pub fn normalized(&self) -> Self {
        let n = self.norm();
        Self::new(self.w / n, self.x / n, self.y / n, self.z / n)
    }

    pub fn conjugate(&self) -> Self {
        Self::new(self.w, -self.x, -self.y, -self.z)
    }

    /// Rotation by `angle` radians about `axis` (need not be unit length).
    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64) -> Self {
        let n = axis.norm();
        if n == 0.0 {
            return Self::IDENTITY;
        }
        Self::exp(axis * (angle / n))
    }

    /// Quaternion exponential of a rotation vector: rotates by `|theta|`
    /// about `theta`'s direction. Series expansion below `1e-8` rad.
    pub fn exp(theta: Vector3<f64>) -> Self {
        let a = theta.norm();
        let (w, s) = if a < 1e-8 {
            (1.0 - a * a / 8.0, 0.5 - a * a / 48.0)
        } else {
            ((a / 2.0).cos(), (a / 2.0).sin() / a)
        };
        Self::new(w, s * theta.x, s * theta.y, s * theta.z)
    }

    /// Rotation vector of a (near-unit) quaternion; inverse of [`Quaternion::exp`].
    /// The sign is chosen so the angle lies in `[0, pi]`.
    pub fn log(&self) -> Vector3<f64> {
        let q = if self.w < 0.0 {
            Quaternion::new(-self.w, -self.x, -self.y, -self.z)
        } else {
            *self
        };
        let v = q.imag();
        let vn = v.norm();
        if vn < 1e-12 {
            return v * 2.0;
        }
        let angle = 2.0 * vn.atan2(q.w);
        v * (angle / vn)
    }

    /// Jacobian of `exp(theta)` with respect to `theta` (4x3).
    pub fn exp_jacobian(theta: Vector3<f64>) -> SMatrix<f64, 4, 3> {
        let a = theta.norm();
        let mut j = SMatrix::<f64, 4, 3>::zeros();
        if a < 1e-8 {
            // d w / d theta = -theta/4 to first order; d xyz / d theta = I/2.
            j.fixed_view_mut::<1, 3>(0, 0)
                .copy_from(&(-theta.transpose() / 4.0));
            j.fixed_view_mut::<3, 3>(1, 0)
                .copy_from(&(Matrix3::identity() * 0.5));
            return j;
        }
        let half = a / 2.0;
        let s = half.sin() / a;
        let u = theta / a;
        j.fixed_view_mut::<1, 3>(0, 0)
            .copy_from(&(-(half.sin() / 2.0) * u.transpose()));
        let m = Matrix3::identity() * s + u * u.transpose() * (half.cos() / 2.0 - s);
        j.fixed_view_mut::<3, 3>(1, 0).copy_from(&m);
        j
    }

    /// Rotation matrix of a unit quaternion. For non-unit input this is the
    /// homogeneous form (scales by the squared norm), which is exactly what
    /// the observation Jacobians differentiate.
    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        let (w, x, y, z) = (self.w, self.x, self.y, self.z);
        Matrix3::new(
            w * w + x * x - y * y - z * z,
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            w * w - x * x + y * y - z * z,
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            w * w - x * x - y * y + z * z,
        )
    }

    /// `R(q) v`.
    pub fn rotate(&self, v: Vector3<f64>) -> Vector3<f64> {
        self.rotation_matrix() * v
    }

    /// `R(q)^T v`, the inverse rotation for unit q.
    pub fn rotate_inverse(&self, v: Vector3<f64>) -> Vector3<f64> {
        self.rotation_matrix().transpose() * v
    }

    /// Hamilton product `self ⊗ rhs`.
    pub fn compose(&self, rhs: &Quaternion) -> Quaternion {
        let (aw, ax, ay, az) = (self.w, self.x, self.y, self.z);
        let (bw, bx, by, bz) = (rhs.w, rhs.x, rhs.y, rhs.z);
        Quaternion::new(
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        )
    }

    /// Left-multiplication matrix: `(q ⊗ p).coords() = left_matrix(q) * p.coords()`.
    pub fn left_matrix(&self) -> Matrix4<f64> {
        let (w, x, y, z) = (self.w, self.x, self.y, self.z);
        Matrix4::new(
            w, -x, -y, -z, //
            x, w, -z, y, //
            y, z, w, -x, //
            z, -y, x, w,
        )
    }

    /// Right-multiplication matrix: `(q ⊗ p).coords() = right_matrix(p) * q.coords()`.
    pub fn right_matrix(&self) -> Matrix4<f64> {
        let (w, x, y, z) = (self.w, self.x, self.y, self.z);
        Matrix4::new(
            w, -x, -y, -z, //
            x, w, z, -y, //
            y, -z, w, x, //
            z, y, -x, w,
        )
    }

    /// Angle of the relative rotation `self^-1 ⊗ other`, in radians.
    pub fn angle_to(&self, other: &Quaternion) -> f64 {
        self.conjugate().compose(other).normalized().log().norm()
    }
}

/// Jacobian of `R(q) v` with respect to `q` (3x4), valid for any q.
pub fn rotate_jacobian_q(q: &Quaternion, v: Vector3<f64>) -> SMatrix<f64, 3, 4> {
    let w = q.w;
    let u = q.imag();
    let col_w = 2.0 * (w * v + u.cross(&v));
    // d/du [ (w^2 - u.u) v + 2 (u.v) u + 2 w (u x v) ]
    let m = -2.0 * v * u.transpose()
        + 2.0 * u * v.transpose()
        + Matrix3::identity() * (2.0 * u.dot(&v))
        - 2.0 * w * skew(v);
    let mut j = SMatrix::<f64, 3, 4>::zeros();
    j.set_column(0, &col_w);
    j.fixed_view_mut::<3, 3>(0, 1).copy_from(&m);
    j
}

/// Jacobian of `R(q)^T v` with respect to `q` (3x4).
pub fn rotate_inverse_jacobian_q(q: &Quaternion, v: Vector3<f64>) -> SMatrix<f64, 3, 4> {
    let mut j = rotate_jacobian_q(&q.conjugate(), v);
    // Chain through conjugation: imaginary columns flip sign.
    for c in 1..4 {
        let col = -j.column(c);
        j.set_column(c, &col);
    }
    j
}

pub fn skew(v: Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}
