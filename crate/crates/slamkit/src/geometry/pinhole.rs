//! Pure perspective camera model. No distortion: intrinsics are config
//! inputs, not estimated.

use nalgebra::{Matrix2x3, Matrix3x2, Vector2, Vector3};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ProjectionError {
    #[error("point at or behind the camera plane (z = {z})")]
    BehindCamera { z: f64 },
    #[error("pixel ({u}, {v}) outside the {width}x{height} image")]
    PixelOutOfBounds {
        u: f64,
        v: f64,
        width: u32,
        height: u32,
    },
}

/// Focal lengths, principal point and image size of a perspective camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PinholeIntrinsics {
    pub fu: f64,
    pub fv: f64,
    pub u0: f64,
    pub v0: f64,
    pub width: u32,
    pub height: u32,
}

/// A projected point: pixel plus the camera-frame depth that produced it,
/// so callers can run visibility tests without re-projecting.
#[derive(Debug, Clone, Copy)]
pub struct Projection {
    pub pixel: Vector2<f64>,
    pub depth: f64,
}

impl PinholeIntrinsics {
    pub fn new(fu: f64, fv: f64, u0: f64, v0: f64, width: u32, height: u32) -> Self {
        debug_assert!(fu > 0.0 && fv > 0.0);
        debug_assert!(u0 > 0.0 && u0 < width as f64);
        debug_assert!(v0 > 0.0 && v0 < height as f64);
        Self {
            fu,
            fv,
            u0,
            v0,
            width,
            height,
        }
    }

    pub fn contains(&self, pixel: Vector2<f64>, margin: f64) -> bool {
        pixel.x >= margin
            && pixel.y >= margin
            && pixel.x <= self.width as f64 - 1.0 - margin
            && pixel.y <= self.height as f64 - 1.0 - margin
    }

    /// Projects a camera-frame point. Fails when `z` is not safely positive.
    pub fn project(&self, p: Vector3<f64>) -> Result<Projection, ProjectionError> {
        if p.z <= 1e-12 {
            return Err(ProjectionError::BehindCamera { z: p.z });
        }
        Ok(Projection {
            pixel: Vector2::new(self.u0 + self.fu * p.x / p.z, self.v0 + self.fv * p.y / p.z),
            depth: p.z,
        })
    }

    /// Jacobian of the projected pixel with respect to the camera-frame point.
    pub fn project_jacobian(&self, p: Vector3<f64>) -> Matrix2x3<f64> {
        let iz = 1.0 / p.z;
        Matrix2x3::new(
            self.fu * iz,
            0.0,
            -self.fu * p.x * iz * iz,
            0.0,
            self.fv * iz,
            -self.fv * p.y * iz * iz,
        )
    }

    /// Unit direction in the camera frame whose projection is `pixel`.
    pub fn backproject(&self, pixel: Vector2<f64>) -> Result<Vector3<f64>, ProjectionError> {
        if !self.contains(pixel, 0.0) {
            return Err(ProjectionError::PixelOutOfBounds {
                u: pixel.x,
                v: pixel.y,
                width: self.width,
                height: self.height,
            });
        }
        Ok(self.backproject_unchecked(pixel))
    }

    pub(crate) fn backproject_unchecked(&self, pixel: Vector2<f64>) -> Vector3<f64> {
        Vector3::new(
            (pixel.x - self.u0) / self.fu,
            (pixel.y - self.v0) / self.fv,
            1.0,
        )
        .normalize()
    }

    /// Jacobian of the backprojected unit direction with respect to the pixel.
    pub fn backproject_jacobian(&self, pixel: Vector2<f64>) -> Matrix3x2<f64> {
        let d = Vector3::new(
            (pixel.x - self.u0) / self.fu,
            (pixel.y - self.v0) / self.fv,
            1.0,
        );
        let n = d.norm();
        let unit = d / n;
        let proj = (nalgebra::Matrix3::identity() - unit * unit.transpose()) / n;
        let dd = Matrix3x2::new(1.0 / self.fu, 0.0, 0.0, 1.0 / self.fv, 0.0, 0.0);
        proj * dd
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn k() -> PinholeIntrinsics {
        PinholeIntrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480)
    }

    #[test]
    fn optical_axis_hits_principal_point() {
        let p = k().project(Vector3::new(0.0, 0.0, 1.0)).unwrap();
        assert_relative_eq!(p.pixel, Vector2::new(320.0, 240.0));
        assert_relative_eq!(p.depth, 1.0);
    }

    #[test]
    fn off_axis_point() {
        let p = k().project(Vector3::new(0.1, 0.0, 1.0)).unwrap();
        assert_relative_eq!(p.pixel, Vector2::new(370.0, 240.0));
    }

    #[test]
    fn behind_camera_is_an_error() {
        let err = k().project(Vector3::new(0.0, 0.0, -1.0)).unwrap_err();
        assert_eq!(err, ProjectionError::BehindCamera { z: -1.0 });
    }

    #[test]
    fn backproject_principal_point() {
        let d = k().backproject(Vector2::new(320.0, 240.0)).unwrap();
        assert_relative_eq!(d, Vector3::new(0.0, 0.0, 1.0), epsilon = 1e-12);
    }

    #[test]
    fn backproject_45_degrees() {
        let d = k().backproject_unchecked(Vector2::new(320.0 + 500.0, 240.0));
        let expect = Vector3::new(1.0, 0.0, 1.0) / 2.0_f64.sqrt();
        assert_relative_eq!(d, expect, epsilon = 1e-12);
    }

    #[test]
    fn backproject_rejects_out_of_bounds() {
        assert!(k().backproject(Vector2::new(-1.0, 10.0)).is_err());
        assert!(k().backproject(Vector2::new(10.0, 480.0)).is_err());
    }

    #[test]
    fn project_backproject_round_trip() {
        let k = k();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..100 {
            let pixel = Vector2::new(
                rng.random_range(0.0..639.0),
                rng.random_range(0.0..479.0),
            );
            let dir = k.backproject(pixel).unwrap();
            let s = rng.random_range(0.1..20.0);
            let back = k.project(dir * s).unwrap();
            assert_relative_eq!(back.pixel, pixel, epsilon = 1e-9);
        }
    }

    #[test]
    fn jacobians_match_finite_differences() {
        let k = k();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let eps = 1e-6;
        for _ in 0..100 {
            let p = Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(0.5..5.0),
            );
            let j = k.project_jacobian(p);
            for c in 0..3 {
                let mut dp = Vector3::zeros();
                dp[c] = eps;
                let fd = (k.project(p + dp).unwrap().pixel - k.project(p - dp).unwrap().pixel)
                    / (2.0 * eps);
                assert_relative_eq!(j.column(c).into_owned(), fd, epsilon = 1e-5);
            }

            let pixel = Vector2::new(
                rng.random_range(1.0..638.0),
                rng.random_range(1.0..478.0),
            );
            let jb = k.backproject_jacobian(pixel);
            for c in 0..2 {
                let mut dpx = Vector2::zeros();
                dpx[c] = eps;
                let fd = (k.backproject_unchecked(pixel + dpx)
                    - k.backproject_unchecked(pixel - dpx))
                    / (2.0 * eps);
                assert_relative_eq!(jb.column(c).into_owned(), fd, epsilon = 1e-5);
            }
        }
    }
}
