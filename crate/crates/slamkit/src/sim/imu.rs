//! Inertial measurement synthesis from ground truth: body-frame specific
//! force and rates with white noise, constant bias truth and optional gyro
//! saturation.

use nalgebra::Vector3;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::motion::ImuSample;
use crate::sim::trajectory::GroundTruth;

#[derive(Debug, Clone, PartialEq)]
pub struct ImuSpec {
    /// Continuous-time white noise densities, matching the filter's
    /// process-noise convention: per-sample std = sqrt(density / dt).
    pub acc_density: f64,
    pub gyro_density: f64,
    /// True constant biases.
    pub acc_bias: Vector3<f64>,
    pub gyro_bias: Vector3<f64>,
    /// Hard gyro rate limit (rad/s); saturating samples are clamped and
    /// flagged.
    pub rate_limit: Option<f64>,
    pub gravity: f64,
}

impl Default for ImuSpec {
    fn default() -> Self {
        Self {
            acc_density: 4e-4,
            gyro_density: 1e-5,
            acc_bias: Vector3::zeros(),
            gyro_bias: Vector3::zeros(),
            rate_limit: None,
            gravity: 9.81,
        }
    }
}

/// One sample per ground-truth interval. Sample k measures the rates and
/// specific force held over [t_k, t_{k+1}).
pub fn synth_imu(gt: &GroundTruth, spec: &ImuSpec, seed: u64) -> Vec<ImuSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = Vector3::new(0.0, 0.0, -spec.gravity);
    let acc_std = (spec.acc_density / gt.dt).sqrt();
    let gyro_std = (spec.gyro_density / gt.dt).sqrt();
    let mut noise3 = |std: f64| {
        Vector3::from_fn(|_, _| std * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
    };

    let mut out = Vec::with_capacity(gt.samples.len() - 1);
    for s in &gt.samples[..gt.samples.len() - 1] {
        let acc = s.pose.q.rotate_inverse(s.acc_world - g) + spec.acc_bias + noise3(acc_std);
        let gyro = s.omega_body + spec.gyro_bias + noise3(gyro_std);
        out.push(match spec.rate_limit {
            Some(limit) => ImuSample::clipped(acc, gyro, gt.dt, limit),
            None => ImuSample::new(acc, gyro, gt.dt),
        });
    }
    out
}
