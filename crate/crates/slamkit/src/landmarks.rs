//! Point landmark parametrizations.
//!
//! New points enter the map as anchored homogeneous points: the camera
//! position at first sight, the back-projected ray and an inverse distance
//! along it. The parametrization stays well behaved for distant points and
//! admits an almost-Gaussian prior over depth. Once the depth estimate has
//! converged enough that the Euclidean coordinates are themselves nearly
//! Gaussian (measured by [`linearity_index`]), the seven scalars collapse to
//! three via [`reparametrize`].

use nalgebra::{DMatrix, DVector, Matrix3, SMatrix, SVector, Vector2, Vector3};
use thiserror::Error;

use crate::ekf_map::{BlockHandle, MapError, StochasticMap};
use crate::geometry::{rotate_jacobian_q, Frame, PinholeIntrinsics, ProjectionError};
use crate::vision::{GrayImage, Patch};

/// Scalars an anchored homogeneous point occupies in the map.
pub const AHP_DIM: usize = 7;
/// Scalars a Euclidean point occupies in the map.
pub const EUCLIDEAN_DIM: usize = 3;

#[derive(Debug, Error)]
pub enum LandmarkError {
    #[error("inverse distance {rho} is not positive: point at or beyond infinity")]
    AtInfinity { rho: f64 },
    #[error("inverse-distance prior must be positive, got {rho0}")]
    InvalidPrior { rho0: f64 },
    #[error(transparent)]
    Projection(#[from] ProjectionError),
    #[error(transparent)]
    Map(#[from] MapError),
}

/// Anchored homogeneous point: `point = anchor + dir / (inv_dist * |dir|)`.
///
/// `dir` carries direction only; its length is a gauge freedom kept near one
/// by the map manager. `inv_dist` is the inverse of the anchor-to-point
/// distance in 1/m.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AhpLandmark {
    pub anchor: Vector3<f64>,
    pub dir: Vector3<f64>,
    pub inv_dist: f64,
}

impl AhpLandmark {
    pub fn to_vector(&self) -> SVector<f64, AHP_DIM> {
        let mut v = SVector::<f64, AHP_DIM>::zeros();
        v.fixed_rows_mut::<3>(0).copy_from(&self.anchor);
        v.fixed_rows_mut::<3>(3).copy_from(&self.dir);
        v[6] = self.inv_dist;
        v
    }

    pub fn from_vector(v: SVector<f64, AHP_DIM>) -> Self {
        Self {
            anchor: v.fixed_rows::<3>(0).into_owned(),
            dir: v.fixed_rows::<3>(3).into_owned(),
            inv_dist: v[6],
        }
    }
}

/// Converged point stored directly as world coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EuclideanLandmark {
    pub xyz: Vector3<f64>,
}

impl EuclideanLandmark {
    pub fn to_vector(&self) -> Vector3<f64> {
        self.xyz
    }

    pub fn from_vector(v: Vector3<f64>) -> Self {
        Self { xyz: v }
    }
}

/// Appearance side of a landmark: the template patch together with the
/// capture geometry, so the patch can later be warped into new viewpoints.
#[derive(Debug, Clone)]
pub struct LandmarkDescriptor {
    pub patch: Patch,
    /// Camera frame in the world at capture time.
    pub ref_pose: Frame,
    pub ref_pixel: Vector2<f64>,
}

impl LandmarkDescriptor {
    /// Cuts an odd-sided template centered on the nearest integer pixel.
    /// Returns `None` when the patch would cross the image border.
    pub fn capture(
        img: &GrayImage,
        pixel: Vector2<f64>,
        side: u32,
        cam_pose: Frame,
    ) -> Option<Self> {
        debug_assert!(side % 2 == 1, "template side must be odd");
        let patch = img.patch_at(pixel.x.round() as i32, pixel.y.round() as i32, side)?;
        Some(Self {
            patch,
            ref_pose: cam_pose,
            ref_pixel: pixel,
        })
    }
}

/// Mean and first-order model of a freshly initialized anchored point,
/// ready to be inserted with [`StochasticMap::augment`].
#[derive(Debug, Clone)]
pub struct AhpInit {
    pub mean: AhpLandmark,
    /// Jacobian with respect to the camera frame `(t, q)`.
    pub j_frame: SMatrix<f64, AHP_DIM, 7>,
    /// Jacobian with respect to the detection pixel.
    pub j_pixel: SMatrix<f64, AHP_DIM, 2>,
    /// Jacobian with respect to the inverse-distance prior.
    pub j_rho: SVector<f64, AHP_DIM>,
    /// Covariance contributed by pixel noise and the inverse-distance prior;
    /// the camera-pose part is added by `augment` through `j_frame`.
    pub prior_cov: SMatrix<f64, AHP_DIM, AHP_DIM>,
}

/// Builds an anchored homogeneous point from a single detection.
///
/// The anchor is the camera position, the direction is the back-projected
/// ray in world coordinates and the inverse distance starts at the prior
/// `rho0` with standard deviation `sigma_rho0`.
pub fn ahp_init(
    cam: &Frame,
    intr: &PinholeIntrinsics,
    pixel: Vector2<f64>,
    rho0: f64,
    sigma_rho0: f64,
    pixel_noise: f64,
) -> Result<AhpInit, LandmarkError> {
    if rho0 <= 0.0 {
        return Err(LandmarkError::InvalidPrior { rho0 });
    }
    let ray_cam = intr.backproject(pixel)?;
    let mean = AhpLandmark {
        anchor: cam.t,
        dir: cam.q.rotate(ray_cam),
        inv_dist: rho0,
    };

    let mut j_frame = SMatrix::<f64, AHP_DIM, 7>::zeros();
    j_frame
        .fixed_view_mut::<3, 3>(0, 0)
        .copy_from(&Matrix3::identity());
    j_frame
        .fixed_view_mut::<3, 4>(3, 3)
        .copy_from(&rotate_jacobian_q(&cam.q, ray_cam));

    let mut j_pixel = SMatrix::<f64, AHP_DIM, 2>::zeros();
    j_pixel
        .fixed_view_mut::<3, 2>(3, 0)
        .copy_from(&(cam.q.rotation_matrix() * intr.backproject_jacobian(pixel)));

    let mut j_rho = SVector::<f64, AHP_DIM>::zeros();
    j_rho[6] = 1.0;

    let mut prior_cov = j_pixel * j_pixel.transpose() * pixel_noise.powi(2);
    prior_cov[(6, 6)] += sigma_rho0.powi(2);

    Ok(AhpInit {
        mean,
        j_frame,
        j_pixel,
        j_rho,
        prior_cov,
    })
}

/// World coordinates of an anchored point; finite only for `inv_dist > 0`.
pub fn euclideanize(l: &AhpLandmark) -> Result<Vector3<f64>, LandmarkError> {
    if l.inv_dist <= 0.0 {
        return Err(LandmarkError::AtInfinity { rho: l.inv_dist });
    }
    Ok(l.anchor + l.dir / (l.inv_dist * l.dir.norm()))
}

/// 3x7 Jacobian of [`euclideanize`] over the `(anchor, dir, inv_dist)` layout.
pub fn euclideanize_jacobian(l: &AhpLandmark) -> SMatrix<f64, EUCLIDEAN_DIM, AHP_DIM> {
    debug_assert!(l.inv_dist > 0.0);
    let n = l.dir.norm();
    let u = l.dir / n;
    let mut j = SMatrix::<f64, EUCLIDEAN_DIM, AHP_DIM>::zeros();
    j.fixed_view_mut::<3, 3>(0, 0)
        .copy_from(&Matrix3::identity());
    j.fixed_view_mut::<3, 3>(0, 3)
        .copy_from(&((Matrix3::identity() - u * u.transpose()) / (n * l.inv_dist)));
    j.set_column(6, &(-u / l.inv_dist.powi(2)));
    j
}

/// How non-Gaussian the Euclidean coordinates of an anchored point would be.
///
/// `L = (4 sigma_rho / rho) |cos a|` where `a` is the angle between the
/// anchor-to-point and camera-to-point rays. Small L means the depth
/// uncertainty maps almost linearly to Euclidean space and the point can be
/// reparametrized without distorting the filter.
pub fn linearity_index(l: &AhpLandmark, sigma_rho: f64, cam_position: Vector3<f64>) -> f64 {
    debug_assert!(sigma_rho >= 0.0);
    if l.inv_dist <= 0.0 {
        return f64::INFINITY;
    }
    let point = l.anchor + l.dir / (l.inv_dist * l.dir.norm());
    let to_point = point - cam_position;
    let range = to_point.norm();
    if range < 1e-12 {
        return f64::INFINITY;
    }
    let cos = (l.dir.dot(&to_point) / (l.dir.norm() * range)).abs();
    4.0 * sigma_rho / l.inv_dist * cos
}

/// Collapses an anchored point block to its Euclidean coordinates in place,
/// propagating covariance and all cross terms. Frees four scalars.
pub fn reparametrize(
    map: &mut StochasticMap,
    handle: BlockHandle,
) -> Result<BlockHandle, LandmarkError> {
    let mean = map.block_mean(handle)?.into_owned();
    if mean.len() != AHP_DIM {
        return Err(MapError::DimensionMismatch {
            expected: AHP_DIM,
            got: mean.len(),
        }
        .into());
    }
    let l = AhpLandmark::from_vector(SVector::from_iterator(mean.iter().copied()));
    let xyz = euclideanize(&l)?;
    let j = euclideanize_jacobian(&l);
    let new_mean = DVector::from_column_slice(xyz.as_slice());
    let j_dyn = DMatrix::from_fn(EUCLIDEAN_DIM, AHP_DIM, |r, c| j[(r, c)]);
    Ok(map.replace_block(handle, &new_mean, &j_dyn)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ekf_map::BlockRole;
    use crate::geometry::Quaternion;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};
    use statrs::distribution::ContinuousCDF;

    fn intr() -> PinholeIntrinsics {
        PinholeIntrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480)
    }

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

    fn random_landmark(rng: &mut impl Rng) -> AhpLandmark {
        let dir = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let dir = dir / dir.norm() * rng.random_range(0.5..2.0);
        AhpLandmark {
            anchor: Vector3::new(
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
            ),
            dir,
            inv_dist: rng.random_range(0.1..5.0),
        }
    }

    #[test]
    fn init_at_principal_point_looks_along_axis() {
        let init = ahp_init(
            &Frame::IDENTITY,
            &intr(),
            Vector2::new(320.0, 240.0),
            0.5,
            0.25,
            0.5,
        )
        .unwrap();
        assert_relative_eq!(init.mean.anchor, Vector3::zeros());
        assert_relative_eq!(init.mean.dir, Vector3::new(0.0, 0.0, 1.0));
        assert_eq!(init.mean.inv_dist, 0.5);
        assert!(ahp_init(
            &Frame::IDENTITY,
            &intr(),
            Vector2::new(320.0, 240.0),
            0.0,
            0.25,
            0.5
        )
        .is_err());
    }

    #[test]
    fn init_point_lies_on_backprojected_ray() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let k = intr();
        for _ in 0..50 {
            let cam = random_frame(&mut rng);
            let pixel = Vector2::new(
                rng.random_range(1.0..639.0),
                rng.random_range(1.0..479.0),
            );
            let rho0 = rng.random_range(0.2..2.0);
            let init = ahp_init(&cam, &k, pixel, rho0, 0.25, 0.5).unwrap();
            let point = euclideanize(&init.mean).unwrap();
            let ray = cam.q.rotate(k.backproject(pixel).unwrap());
            let offset = point - cam.t;
            assert_relative_eq!(offset.cross(&ray), Vector3::zeros(), epsilon = 1e-9);
            assert!(offset.dot(&ray) > 0.0);
            assert_relative_eq!(offset.norm(), 1.0 / rho0, epsilon = 1e-9);
        }
    }

    #[test]
    fn init_covariance_matches_dense_propagation() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let k = intr();
        let (rho0, sigma_rho0, pixel_noise) = (0.5, 0.25, 0.7);
        for _ in 0..10 {
            let cam = random_frame(&mut rng);
            let pixel = Vector2::new(
                rng.random_range(20.0..620.0),
                rng.random_range(20.0..460.0),
            );

            let a = DMatrix::from_fn(7, 7, |_, _| rng.random_range(-0.1..0.1));
            let p_rr = &a * a.transpose();

            let mut map = StochasticMap::with_capacity(32);
            let robot = map.allocate(BlockRole::Robot, 7).unwrap();
            let mut pose = DVector::zeros(7);
            pose.fixed_rows_mut::<3>(0).copy_from(&cam.t);
            pose.fixed_rows_mut::<4>(3).copy_from(&cam.q.coords());
            map.set_block_mean(robot, &pose).unwrap();
            map.set_block_cov(robot, &p_rr).unwrap();

            let init = ahp_init(&cam, &k, pixel, rho0, sigma_rho0, pixel_noise).unwrap();
            let j_frame = DMatrix::from_fn(7, 7, |r, c| init.j_frame[(r, c)]);
            let prior = DMatrix::from_fn(7, 7, |r, c| init.prior_cov[(r, c)]);
            let mean = DVector::from_column_slice(init.mean.to_vector().as_slice());
            let lm = map.augment(robot, BlockRole::Landmark, &mean, &j_frame, &prior).unwrap();

            // finite-difference Jacobian of the whole init map over
            // (frame 7, pixel 2, rho 1)
            let eval = |v: &DVector<f64>| {
                let f = Frame::new(
                    Vector3::new(v[0], v[1], v[2]),
                    Quaternion::new(v[3], v[4], v[5], v[6]),
                );
                let px = Vector2::new(v[7], v[8]);
                let init = ahp_init(&f, &k, px, v[9], sigma_rho0, pixel_noise).unwrap();
                DVector::from_column_slice(init.mean.to_vector().as_slice())
            };
            let mut v0 = DVector::zeros(10);
            v0.rows_mut(0, 7).copy_from(&pose);
            v0[7] = pixel.x;
            v0[8] = pixel.y;
            v0[9] = rho0;
            let eps = 1e-6;
            let mut j_full = DMatrix::zeros(7, 10);
            for c in 0..10 {
                let mut hi = v0.clone();
                let mut lo = v0.clone();
                hi[c] += eps;
                lo[c] -= eps;
                j_full.set_column(c, &((eval(&hi) - eval(&lo)) / (2.0 * eps)));
            }

            let mut c_in = DMatrix::zeros(10, 10);
            c_in.view_mut((0, 0), (7, 7)).copy_from(&p_rr);
            c_in[(7, 7)] = pixel_noise * pixel_noise;
            c_in[(8, 8)] = pixel_noise * pixel_noise;
            c_in[(9, 9)] = sigma_rho0 * sigma_rho0;
            let p_ll_oracle = &j_full * &c_in * j_full.transpose();
            let cross_oracle = j_full.view((0, 0), (7, 7)) * &p_rr;

            let (_, joint) = map.joint(&[lm, robot]).unwrap();
            assert_relative_eq!(
                joint.view((0, 0), (7, 7)).into_owned(),
                p_ll_oracle,
                epsilon = 1e-6
            );
            assert_relative_eq!(
                joint.view((0, 7), (7, 7)).into_owned(),
                cross_oracle,
                epsilon = 1e-6
            );
        }
    }

    #[test]
    fn euclideanize_examples() {
        let l = AhpLandmark {
            anchor: Vector3::zeros(),
            dir: Vector3::new(0.0, 0.0, 1.0),
            inv_dist: 0.5,
        };
        assert_relative_eq!(euclideanize(&l).unwrap(), Vector3::new(0.0, 0.0, 2.0));

        // length of dir is a gauge freedom
        let scaled = AhpLandmark { dir: l.dir * 2.0, ..l };
        assert_relative_eq!(euclideanize(&scaled).unwrap(), Vector3::new(0.0, 0.0, 2.0));

        let near = AhpLandmark { inv_dist: 10.0, ..l };
        assert_relative_eq!(
            (euclideanize(&near).unwrap() - l.anchor).norm(),
            0.1,
            epsilon = 1e-12
        );

        assert!(matches!(
            euclideanize(&AhpLandmark { inv_dist: 0.0, ..l }),
            Err(LandmarkError::AtInfinity { .. })
        ));
    }

    #[test]
    fn euclideanize_jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let eps = 1e-6;
        for _ in 0..100 {
            let l = random_landmark(&mut rng);
            let j = euclideanize_jacobian(&l);
            let v0 = l.to_vector();
            for c in 0..AHP_DIM {
                let mut hi = v0;
                let mut lo = v0;
                hi[c] += eps;
                lo[c] -= eps;
                let fd = (euclideanize(&AhpLandmark::from_vector(hi)).unwrap()
                    - euclideanize(&AhpLandmark::from_vector(lo)).unwrap())
                    / (2.0 * eps);
                assert_relative_eq!(j.column(c).into_owned(), fd, epsilon = 1e-4);
            }
        }
    }

    /// The anchored form can be projected without going through Euclidean
    /// space: scale the camera-frame offset by the inverse distance. Both
    /// routes must land on the same pixel.
    #[test]
    fn projection_agrees_with_scaled_ray_route() {
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let k = intr();
        for _ in 0..100 {
            // a point seen by the camera, anchored somewhere else entirely
            let cam = random_frame(&mut rng);
            let seen = Vector2::new(
                rng.random_range(10.0..630.0),
                rng.random_range(10.0..470.0),
            );
            let depth = rng.random_range(0.5..10.0);
            let point = cam.to_global(k.backproject(seen).unwrap() * depth);
            let anchor = Vector3::new(
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
            );
            let gauge = rng.random_range(0.5..2.0);
            let l = AhpLandmark {
                anchor,
                dir: (point - anchor) * gauge,
                inv_dist: 1.0 / (point - anchor).norm(),
            };

            let direct = k.project(cam.to_local(euclideanize(&l).unwrap())).unwrap();
            let scaled = cam.q.rotate_inverse(
                (l.anchor - cam.t) * l.inv_dist + l.dir / l.dir.norm(),
            );
            let via_ray = k.project(scaled / l.inv_dist).unwrap();
            assert_relative_eq!(direct.pixel, via_ray.pixel, epsilon = 1e-9);
            assert_relative_eq!(direct.pixel, seen, epsilon = 1e-6);
        }
    }

    #[test]
    fn linearity_examples() {
        let l = AhpLandmark {
            anchor: Vector3::zeros(),
            dir: Vector3::new(0.0, 0.0, 1.0),
            inv_dist: 1.0,
        };
        // camera at the anchor: rays coincide, cos = 1
        assert_relative_eq!(linearity_index(&l, 0.0, Vector3::zeros()), 0.0);
        assert_relative_eq!(linearity_index(&l, 0.01, Vector3::zeros()), 0.04);
        assert_relative_eq!(linearity_index(&l, 0.5, Vector3::zeros()), 2.0);
        // camera abreast of the point: rays nearly orthogonal, index drops
        let side = linearity_index(&l, 0.5, Vector3::new(1.0, 0.0, 1.0));
        assert!(side < 0.01, "orthogonal view gave {side}");
        assert!(linearity_index(
            &AhpLandmark { inv_dist: 0.0, ..l },
            0.5,
            Vector3::zeros()
        )
        .is_infinite());

        let mut rng = ChaCha8Rng::seed_from_u64(35);
        for _ in 0..50 {
            let l = random_landmark(&mut rng);
            let cam = Vector3::new(rng.random(), rng.random(), rng.random());
            let (s0, s1) = (rng.random_range(0.0..0.5), rng.random_range(0.5..1.0));
            assert!(linearity_index(&l, s0, cam) <= linearity_index(&l, s1, cam));
        }
    }

    fn kolmogorov_distance_to_normal_fit(samples: &mut [f64]) -> f64 {
        samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
        let fit = statrs::distribution::Normal::new(mean, var.sqrt()).unwrap();
        let mut d: f64 = 0.0;
        for (i, s) in samples.iter().enumerate() {
            let f = fit.cdf(*s);
            d = d.max((f - i as f64 / n).abs());
            d = d.max((f - (i + 1) as f64 / n).abs());
        }
        d
    }

    /// Monte-Carlo justification of the 0.1 conversion threshold: push an
    /// inverse-distance Gaussian through euclideanize. At index 0.04 the
    /// depth distribution is still close to its Gaussian fit, at index 2 it
    /// is strongly skewed.
    #[test]
    fn linearity_threshold_separates_gaussian_depths() {
        let mut rng = ChaCha8Rng::seed_from_u64(36);
        let mut depths = |sigma: f64| {
            let noise = Normal::new(1.0, sigma).unwrap();
            let mut out = Vec::with_capacity(20_000);
            while out.len() < 20_000 {
                let rho: f64 = noise.sample(&mut rng);
                if rho > 1e-6 {
                    out.push(1.0 / rho);
                }
            }
            out
        };
        let mut accepted = depths(0.01); // L = 0.04
        let mut rejected = depths(0.5); // L = 2.0
        let d_accepted = kolmogorov_distance_to_normal_fit(&mut accepted);
        let d_rejected = kolmogorov_distance_to_normal_fit(&mut rejected);
        assert!(
            d_accepted < 0.02,
            "convertible case should look Gaussian, distance {d_accepted}"
        );
        assert!(
            d_rejected > 0.05,
            "kept case should look non-Gaussian, distance {d_rejected}"
        );
        assert!(d_accepted * 3.0 < d_rejected);
    }

    #[test]
    fn reparametrize_frees_four_scalars_and_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        for _ in 0..10 {
            let mut map = StochasticMap::with_capacity(24);
            let robot = map.allocate(BlockRole::Robot, 7).unwrap();
            let l = random_landmark(&mut rng);
            let mean = DVector::from_column_slice(l.to_vector().as_slice());

            // correlated joint covariance over (robot 7, landmark 7),
            // installed by factoring the cross term through augment
            let a = DMatrix::from_fn(14, 14, |_, _| rng.random_range(-0.1..0.1));
            let joint_cov = &a * a.transpose() + DMatrix::identity(14, 14) * 1e-3;
            let p_rr = joint_cov.view((0, 0), (7, 7)).into_owned();
            let cross = joint_cov.view((7, 0), (7, 7)).into_owned();
            let j_fake = &cross * p_rr.clone().try_inverse().unwrap();
            let extra = joint_cov.view((7, 7), (7, 7)).into_owned()
                - &j_fake * &p_rr * j_fake.transpose();
            map.set_block_cov(robot, &p_rr).unwrap();
            let lm = map
                .augment(robot, BlockRole::Landmark, &mean, &j_fake, &extra)
                .unwrap();

            let free_before = map.free_capacity();
            let (_, p_before) = map.joint(&[robot, lm]).unwrap();

            let new = reparametrize(&mut map, lm).unwrap();
            assert_eq!(map.free_capacity(), free_before + 4);

            let g_mean = map.block_mean(new).unwrap().into_owned();
            assert_relative_eq!(
                Vector3::new(g_mean[0], g_mean[1], g_mean[2]),
                euclideanize(&l).unwrap(),
                epsilon = 1e-12
            );

            // dense oracle: G blkdiag(I7, J) applied to the 14x14 joint
            let j = euclideanize_jacobian(&l);
            let mut g = DMatrix::zeros(10, 14);
            g.view_mut((0, 0), (7, 7))
                .copy_from(&DMatrix::identity(7, 7));
            for r in 0..3 {
                for c in 0..7 {
                    g[(7 + r, 7 + c)] = j[(r, c)];
                }
            }
            let oracle = &g * &p_before * g.transpose();
            let (_, p_after) = map.joint(&[robot, new]).unwrap();
            assert_relative_eq!(p_after, oracle, epsilon = 1e-9);

            // projecting the converged point is unchanged by the conversion
            let cam = random_frame(&mut rng);
            let k = intr();
            let before = k.project(cam.to_local(euclideanize(&l).unwrap()));
            let after = k.project(cam.to_local(Vector3::new(g_mean[0], g_mean[1], g_mean[2])));
            if let (Ok(b), Ok(a)) = (before, after) {
                assert!((b.pixel - a.pixel).norm() < 1e-6);
            }
        }
    }

    #[test]
    fn descriptor_capture_respects_borders() {
        let img = GrayImage::from_fn(64, 64, |x, y| (x * 3 + y * 5) as u8);
        let d = LandmarkDescriptor::capture(
            &img,
            Vector2::new(31.6, 30.2),
            11,
            Frame::IDENTITY,
        )
        .unwrap();
        assert_eq!(d.patch.side, 11);
        // centered on the rounded pixel (32, 30)
        assert_relative_eq!(d.patch.get(5, 5), (32 * 3 + 30 * 5) as f64);
        assert!(LandmarkDescriptor::capture(&img, Vector2::new(2.0, 30.0), 11, Frame::IDENTITY)
            .is_none());
    }
}
