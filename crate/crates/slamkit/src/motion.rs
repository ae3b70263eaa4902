//! Robot prediction models: constant-velocity kinematics and strapdown
//! inertial integration with accelerometer/gyrometer bias and gravity
//! estimation.
//!
//! Both models integrate first order within one period, with the exact
//! quaternion exponential for rotation. Process noise is specified as
//! continuous-time densities and discretized per step, so its variance
//! grows linearly with the integration period.
//!
//! State layouts (quaternion stored w,x,y,z):
//!   constant velocity, 13 states: p(3) q(4) v(3) w(3)
//!   inertial, 19 states:          p(3) q(4) v(3) a_b(3) w_b(3) g(3)

use nalgebra::{DMatrix, SMatrix, SVector, Vector3};
use thiserror::Error;

use crate::geometry::{rotate_jacobian_q, Quaternion};

pub const CV_DIM: usize = 13;
pub const IMU_DIM: usize = 19;
/// Inertial noise space: acc, gyro, acc bias walk, gyro bias walk.
pub const IMU_NOISE_DIM: usize = 12;
/// Constant-velocity noise space: velocity impulse, rate impulse.
pub const CV_NOISE_DIM: usize = 6;

#[derive(Debug, Error)]
pub enum MotionError {
    #[error("integration period must be positive, got {0}")]
    NonPositiveDt(f64),
    #[error("noise density must be non-negative, got {0}")]
    NegativeDensity(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CvState {
    pub p: Vector3<f64>,
    pub q: Quaternion,
    pub v: Vector3<f64>,
    pub w: Vector3<f64>,
}

impl CvState {
    pub fn at_rest() -> Self {
        Self {
            p: Vector3::zeros(),
            q: Quaternion::IDENTITY,
            v: Vector3::zeros(),
            w: Vector3::zeros(),
        }
    }

    pub fn to_vector(&self) -> SVector<f64, CV_DIM> {
        let mut x = SVector::<f64, CV_DIM>::zeros();
        x.fixed_rows_mut::<3>(0).copy_from(&self.p);
        x.fixed_rows_mut::<4>(3).copy_from(&self.q.coords());
        x.fixed_rows_mut::<3>(7).copy_from(&self.v);
        x.fixed_rows_mut::<3>(10).copy_from(&self.w);
        x
    }

    pub fn from_vector(x: &SVector<f64, CV_DIM>) -> Self {
        Self {
            p: x.fixed_rows::<3>(0).into_owned(),
            q: Quaternion::from_coords(x.fixed_rows::<4>(3).into_owned()),
            v: x.fixed_rows::<3>(7).into_owned(),
            w: x.fixed_rows::<3>(10).into_owned(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InertialState {
    pub p: Vector3<f64>,
    pub q: Quaternion,
    pub v: Vector3<f64>,
    pub a_b: Vector3<f64>,
    pub w_b: Vector3<f64>,
    pub g: Vector3<f64>,
}

impl InertialState {
    /// At rest with zero biases and gravity pointing down the world z axis.
    pub fn at_rest(gravity: f64) -> Self {
        Self {
            p: Vector3::zeros(),
            q: Quaternion::IDENTITY,
            v: Vector3::zeros(),
            a_b: Vector3::zeros(),
            w_b: Vector3::zeros(),
            g: Vector3::new(0.0, 0.0, -gravity),
        }
    }

    pub fn to_vector(&self) -> SVector<f64, IMU_DIM> {
        let mut x = SVector::<f64, IMU_DIM>::zeros();
        x.fixed_rows_mut::<3>(0).copy_from(&self.p);
        x.fixed_rows_mut::<4>(3).copy_from(&self.q.coords());
        x.fixed_rows_mut::<3>(7).copy_from(&self.v);
        x.fixed_rows_mut::<3>(10).copy_from(&self.a_b);
        x.fixed_rows_mut::<3>(13).copy_from(&self.w_b);
        x.fixed_rows_mut::<3>(16).copy_from(&self.g);
        x
    }

    pub fn from_vector(x: &SVector<f64, IMU_DIM>) -> Self {
        Self {
            p: x.fixed_rows::<3>(0).into_owned(),
            q: Quaternion::from_coords(x.fixed_rows::<4>(3).into_owned()),
            v: x.fixed_rows::<3>(7).into_owned(),
            a_b: x.fixed_rows::<3>(10).into_owned(),
            w_b: x.fixed_rows::<3>(13).into_owned(),
            g: x.fixed_rows::<3>(16).into_owned(),
        }
    }

    /// Audit band for a healthy gravity estimate, around standard g.
    pub fn gravity_in_band(&self) -> bool {
        let n = self.g.norm();
        (8.8..=10.8).contains(&n)
    }
}

/// One inertial measurement over `dt`, with per-axis rate saturation flags.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuSample {
    pub acc: Vector3<f64>,
    pub gyro: Vector3<f64>,
    pub dt: f64,
    pub saturated: [bool; 3],
}

impl ImuSample {
    pub fn new(acc: Vector3<f64>, gyro: Vector3<f64>, dt: f64) -> Self {
        debug_assert!(dt > 0.0);
        Self {
            acc,
            gyro,
            dt,
            saturated: [false; 3],
        }
    }

    /// Applies a hard rate limit the way a saturating gyro does: the output
    /// is clamped and the affected axes are flagged.
    pub fn clipped(acc: Vector3<f64>, gyro: Vector3<f64>, dt: f64, rate_limit: f64) -> Self {
        debug_assert!(dt > 0.0 && rate_limit > 0.0);
        let mut out = gyro;
        let mut saturated = [false; 3];
        for i in 0..3 {
            if gyro[i].abs() >= rate_limit {
                out[i] = gyro[i].signum() * rate_limit;
                saturated[i] = true;
            }
        }
        Self {
            acc,
            gyro: out,
            dt,
            saturated,
        }
    }

    pub fn any_saturated(&self) -> bool {
        self.saturated.iter().any(|&s| s)
    }
}

/// Per-axis continuous-time noise densities, in PSD units. The layout is
/// the model's noise space: velocity/rate for constant velocity, then
/// acc/gyro/acc-bias/gyro-bias walks for inertial.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousNoiseSpec {
    pub densities: Vec<f64>,
}

impl ContinuousNoiseSpec {
    pub fn cv(vel: f64, rate: f64) -> Self {
        let mut d = vec![vel; 3];
        d.extend_from_slice(&[rate; 3]);
        Self { densities: d }
    }

    pub fn imu(acc: f64, gyro: f64, acc_bias: f64, gyro_bias: f64) -> Self {
        let mut d = vec![acc; 3];
        d.extend_from_slice(&[gyro; 3]);
        d.extend_from_slice(&[acc_bias; 3]);
        d.extend_from_slice(&[gyro_bias; 3]);
        Self { densities: d }
    }
}

/// Discrete noise-space covariance over one step: diag(density · dt).
/// Doubling dt doubles every variance.
pub fn discretize_noise(spec: &ContinuousNoiseSpec, dt: f64) -> Result<DMatrix<f64>, MotionError> {
    if dt <= 0.0 && !(dt == 0.0) {
        return Err(MotionError::NonPositiveDt(dt));
    }
    if let Some(&bad) = spec.densities.iter().find(|&&d| d < 0.0) {
        return Err(MotionError::NegativeDensity(bad));
    }
    let n = spec.densities.len();
    let mut q = DMatrix::zeros(n, n);
    for (i, &d) in spec.densities.iter().enumerate() {
        q[(i, i)] = d * dt;
    }
    Ok(q)
}

/// Constant-velocity step: position integrates velocity, orientation
/// integrates the body rate, velocities persist. Returns the new state and
/// the transition Jacobian.
pub fn cv_predict(s: &CvState, dt: f64) -> (CvState, SMatrix<f64, CV_DIM, CV_DIM>) {
    let dq = Quaternion::exp(s.w * dt);
    let next = CvState {
        p: s.p + s.v * dt,
        q: s.q.compose(&dq),
        v: s.v,
        w: s.w,
    };

    let mut f = SMatrix::<f64, CV_DIM, CV_DIM>::identity();
    f.fixed_view_mut::<3, 3>(0, 7)
        .copy_from(&(nalgebra::Matrix3::identity() * dt));
    f.fixed_view_mut::<4, 4>(3, 3).copy_from(&dq.right_matrix());
    f.fixed_view_mut::<4, 3>(3, 10)
        .copy_from(&(s.q.left_matrix() * Quaternion::exp_jacobian(s.w * dt) * dt));
    (next, f)
}

/// Noise-space Jacobian of the constant-velocity step: impulses land on
/// the velocity and rate blocks directly.
pub fn cv_noise_jacobian() -> SMatrix<f64, CV_DIM, CV_NOISE_DIM> {
    let mut g = SMatrix::<f64, CV_DIM, CV_NOISE_DIM>::zeros();
    g.fixed_view_mut::<3, 3>(7, 0)
        .copy_from(&nalgebra::Matrix3::identity());
    g.fixed_view_mut::<3, 3>(10, 3)
        .copy_from(&nalgebra::Matrix3::identity());
    g
}

/// Strapdown inertial step. Bias-corrected specific force is rotated to
/// the world frame and gravity added back; biases and gravity persist as
/// random-walk means. Saturated samples integrate like any other, the flag
/// travels with the sample for divergence accounting downstream.
///
/// Returns the new state, the transition Jacobian and the noise Jacobian
/// (noise space: acc, gyro, acc bias walk, gyro bias walk).
pub fn imu_predict(
    s: &InertialState,
    u: &ImuSample,
) -> (
    InertialState,
    SMatrix<f64, IMU_DIM, IMU_DIM>,
    SMatrix<f64, IMU_DIM, IMU_NOISE_DIM>,
) {
    let dt = u.dt;
    let body_acc = u.acc - s.a_b;
    let a_world = s.q.rotate(body_acc) + s.g;
    let theta = (u.gyro - s.w_b) * dt;
    let dq = Quaternion::exp(theta);

    let next = InertialState {
        p: s.p + s.v * dt + a_world * (0.5 * dt * dt),
        q: s.q.compose(&dq),
        v: s.v + a_world * dt,
        a_b: s.a_b,
        w_b: s.w_b,
        g: s.g,
    };

    let r = s.q.rotation_matrix();
    let da_dq = rotate_jacobian_q(&s.q, body_acc);
    let half_dt2 = 0.5 * dt * dt;

    let mut f = SMatrix::<f64, IMU_DIM, IMU_DIM>::identity();
    // position row
    f.fixed_view_mut::<3, 4>(0, 3).copy_from(&(da_dq * half_dt2));
    f.fixed_view_mut::<3, 3>(0, 7)
        .copy_from(&(nalgebra::Matrix3::identity() * dt));
    f.fixed_view_mut::<3, 3>(0, 10).copy_from(&(-r * half_dt2));
    f.fixed_view_mut::<3, 3>(0, 16)
        .copy_from(&(nalgebra::Matrix3::identity() * half_dt2));
    // quaternion row
    f.fixed_view_mut::<4, 4>(3, 3).copy_from(&dq.right_matrix());
    f.fixed_view_mut::<4, 3>(3, 13)
        .copy_from(&(s.q.left_matrix() * Quaternion::exp_jacobian(theta) * (-dt)));
    // velocity row
    f.fixed_view_mut::<3, 4>(7, 3).copy_from(&(da_dq * dt));
    f.fixed_view_mut::<3, 3>(7, 10).copy_from(&(-r * dt));
    f.fixed_view_mut::<3, 3>(7, 16)
        .copy_from(&(nalgebra::Matrix3::identity() * dt));

    // Noise enters as body-frame velocity and angle impulses plus bias
    // walks, so G stays O(1) and all dt scaling lives in the discretized
    // noise covariance.
    let mut g = SMatrix::<f64, IMU_DIM, IMU_NOISE_DIM>::zeros();
    g.fixed_view_mut::<3, 3>(0, 0).copy_from(&(r * (0.5 * dt)));
    g.fixed_view_mut::<3, 3>(7, 0).copy_from(&r);
    g.fixed_view_mut::<4, 3>(3, 3)
        .copy_from(&(s.q.left_matrix() * Quaternion::exp_jacobian(theta)));
    g.fixed_view_mut::<3, 3>(10, 6)
        .copy_from(&nalgebra::Matrix3::identity());
    g.fixed_view_mut::<3, 3>(13, 9)
        .copy_from(&nalgebra::Matrix3::identity());

    (next, f, g)
}
