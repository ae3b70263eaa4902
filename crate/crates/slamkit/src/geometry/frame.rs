//! Rigid transforms as translation + quaternion pairs.

use nalgebra::{SMatrix, Vector3};

use super::quaternion::{rotate_inverse_jacobian_q, rotate_jacobian_q, Quaternion};

/// A rigid frame: `to_global(p) = R(q) p + t`.
///
/// Used for robot poses, sensor extrinsics and anchor poses alike. The first
/// seven scalars of every robot state block are laid out as `(t, q)` in this
/// order so a `Frame` can be read straight out of the map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frame {
    pub t: Vector3<f64>,
    pub q: Quaternion,
}

impl Frame {
    pub const IDENTITY: Frame = Frame {
        t: Vector3::new(0.0, 0.0, 0.0),
        q: Quaternion::IDENTITY,
    };

    pub fn new(t: Vector3<f64>, q: Quaternion) -> Self {
        Self { t, q }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self::new(t, Quaternion::IDENTITY)
    }

    /// Local -> global.
    pub fn to_global(&self, p: Vector3<f64>) -> Vector3<f64> {
        self.q.rotate(p) + self.t
    }

    /// Global -> local; exact inverse of [`Frame::to_global`] for unit q.
    pub fn to_local(&self, p: Vector3<f64>) -> Vector3<f64> {
        self.q.rotate_inverse(p - self.t)
    }

    /// `self ∘ rhs`: first apply `rhs`, then `self`.
    pub fn compose(&self, rhs: &Frame) -> Frame {
        Frame::new(self.q.rotate(rhs.t) + self.t, self.q.compose(&rhs.q))
    }

    pub fn inverse(&self) -> Frame {
        let qi = self.q.conjugate();
        Frame::new(-qi.rotate(self.t), qi)
    }

    /// Jacobians of `to_global(p)` with respect to `(t, q)` (3x7) and `p` (3x3).
    pub fn to_global_jacobians(&self, p: Vector3<f64>) -> (SMatrix<f64, 3, 7>, SMatrix<f64, 3, 3>) {
        let mut j_frame = SMatrix::<f64, 3, 7>::zeros();
        j_frame
            .fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&SMatrix::<f64, 3, 3>::identity());
        j_frame
            .fixed_view_mut::<3, 4>(0, 3)
            .copy_from(&rotate_jacobian_q(&self.q, p));
        (j_frame, self.q.rotation_matrix())
    }

    /// Jacobians of `compose` with respect to `self` and `rhs`, each 7x7 over
    /// the `(t, q)` layout.
    pub fn compose_jacobians(&self, rhs: &Frame) -> (SMatrix<f64, 7, 7>, SMatrix<f64, 7, 7>) {
        let mut j_self = SMatrix::<f64, 7, 7>::zeros();
        j_self
            .fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&SMatrix::<f64, 3, 3>::identity());
        j_self
            .fixed_view_mut::<3, 4>(0, 3)
            .copy_from(&rotate_jacobian_q(&self.q, rhs.t));
        j_self
            .fixed_view_mut::<4, 4>(3, 3)
            .copy_from(&rhs.q.right_matrix());

        let mut j_rhs = SMatrix::<f64, 7, 7>::zeros();
        j_rhs
            .fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&self.q.rotation_matrix());
        j_rhs
            .fixed_view_mut::<4, 4>(3, 3)
            .copy_from(&self.q.left_matrix());
        (j_self, j_rhs)
    }

    /// Jacobians of `to_local(p)` with respect to `(t, q)` (3x7) and `p` (3x3).
    pub fn to_local_jacobians(&self, p: Vector3<f64>) -> (SMatrix<f64, 3, 7>, SMatrix<f64, 3, 3>) {
        let rt = self.q.rotation_matrix().transpose();
        let mut j_frame = SMatrix::<f64, 3, 7>::zeros();
        j_frame.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-rt));
        j_frame
            .fixed_view_mut::<3, 4>(0, 3)
            .copy_from(&rotate_inverse_jacobian_q(&self.q, p - self.t));
        (j_frame, rt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_frame(rng: &mut impl Rng) -> Frame {
        let t = Vector3::new(
            rng.random_range(-3.0..3.0),
            rng.random_range(-3.0..3.0),
            rng.random_range(-3.0..3.0),
        );
        let q = Quaternion::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        )
        .normalized();
        Frame::new(t, q)
    }

    #[test]
    fn identity_frame_is_noop() {
        let p = Vector3::new(0.3, -0.7, 2.0);
        assert_relative_eq!(Frame::IDENTITY.to_global(p), p);
        assert_relative_eq!(Frame::IDENTITY.to_local(p), p);
    }

    #[test]
    fn pure_translation() {
        let f = Frame::from_translation(Vector3::x());
        assert_relative_eq!(f.to_global(Vector3::zeros()), Vector3::x());
    }

    #[test]
    fn round_trip_and_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let f = random_frame(&mut rng);
            let p = Vector3::new(
                rng.random_range(-5.0..5.0),
                rng.random_range(-5.0..5.0),
                rng.random_range(-5.0..5.0),
            );
            assert_relative_eq!(f.to_local(f.to_global(p)), p, epsilon = 1e-9);

            let id = f.compose(&f.inverse());
            assert_relative_eq!(id.t, Vector3::zeros(), epsilon = 1e-9);
            assert!(id.q.normalized().angle_to(&Quaternion::IDENTITY) < 1e-9);
        }
    }

    #[test]
    fn compose_matches_sequential_transform() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let a = random_frame(&mut rng);
            let b = random_frame(&mut rng);
            let p = Vector3::new(rng.random(), rng.random(), rng.random());
            assert_relative_eq!(
                a.compose(&b).to_global(p),
                a.to_global(b.to_global(p)),
                epsilon = 1e-9
            );
        }
    }

    #[test]
    fn compose_jacobians_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let eps = 1e-6;
        let stacked = |f: &Frame| {
            let mut v = SMatrix::<f64, 7, 1>::zeros();
            v.fixed_view_mut::<3, 1>(0, 0).copy_from(&f.t);
            v.fixed_view_mut::<4, 1>(3, 0).copy_from(&f.q.coords());
            v
        };
        let unstack = |v: SMatrix<f64, 7, 1>| {
            Frame::new(
                Vector3::new(v[0], v[1], v[2]),
                Quaternion::from_coords(nalgebra::Vector4::new(v[3], v[4], v[5], v[6])),
            )
        };
        for _ in 0..50 {
            let a = random_frame(&mut rng);
            let b = random_frame(&mut rng);
            let (j_a, j_b) = a.compose_jacobians(&b);
            for side in 0..2 {
                let j = if side == 0 { j_a } else { j_b };
                for c in 0..7 {
                    let perturb = |sign: f64| {
                        let mut va = stacked(&a);
                        let mut vb = stacked(&b);
                        if side == 0 {
                            va[c] += sign * eps;
                        } else {
                            vb[c] += sign * eps;
                        }
                        stacked(&unstack(va).compose(&unstack(vb)))
                    };
                    let fd = (perturb(1.0) - perturb(-1.0)) / (2.0 * eps);
                    assert_relative_eq!(j.column(c).into_owned(), fd, epsilon = 1e-5);
                }
            }
        }
    }

    #[test]
    fn transform_jacobians_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let eps = 1e-6;
        for _ in 0..50 {
            let f = random_frame(&mut rng);
            let p = Vector3::new(
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
            );
            for local in [false, true] {
                let (j_frame, j_p) = if local {
                    f.to_local_jacobians(p)
                } else {
                    f.to_global_jacobians(p)
                };
                let eval = |f: &Frame, p: Vector3<f64>| {
                    if local {
                        f.to_local(p)
                    } else {
                        f.to_global(p)
                    }
                };
                for c in 0..7 {
                    let perturb = |sign: f64| {
                        let mut t = f.t;
                        let mut q = f.q.coords();
                        if c < 3 {
                            t[c] += sign * eps;
                        } else {
                            q[c - 3] += sign * eps;
                        }
                        eval(&Frame::new(t, Quaternion::from_coords(q)), p)
                    };
                    let fd = (perturb(1.0) - perturb(-1.0)) / (2.0 * eps);
                    assert_relative_eq!(j_frame.column(c).into_owned(), fd, epsilon = 1e-5);
                }
                for c in 0..3 {
                    let mut dp = Vector3::zeros();
                    dp[c] = eps;
                    let fd = (eval(&f, p + dp) - eval(&f, p - dp)) / (2.0 * eps);
                    assert_relative_eq!(j_p.column(c).into_owned(), fd, epsilon = 1e-5);
                }
            }
        }
    }
}
