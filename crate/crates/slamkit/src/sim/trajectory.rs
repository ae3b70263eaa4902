//! Ground-truth motion: a smooth analytic reference drives body rates and
//! world accelerations, which are then rolled out with the exact discrete
//! kinematics of the strapdown predictor. A noise-free inertial stream fed
//! back through the filter therefore reproduces this ground truth to
//! floating-point accuracy.

use nalgebra::Vector3;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::geometry::{Frame, Quaternion};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DynamicsClass {
    /// Rates stay well under gyro saturation.
    Low,
    /// A mid-run burst exceeds 400 deg/s yaw rate, 3000 deg/s^2 angular
    /// acceleration and 3 g linear acceleration.
    High,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySpec {
    pub duration_s: f64,
    pub cam_rate_hz: u32,
    pub imu_rate_hz: u32,
    pub dynamics: DynamicsClass,
}

impl TrajectorySpec {
    pub fn low(duration_s: f64) -> Self {
        Self {
            duration_s,
            cam_rate_hz: 50,
            imu_rate_hz: 100,
            dynamics: DynamicsClass::Low,
        }
    }

    pub fn high(duration_s: f64) -> Self {
        Self {
            dynamics: DynamicsClass::High,
            ..Self::low(duration_s)
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum TrajectoryError {
    #[error("imu rate {imu} Hz is not an integer multiple of camera rate {cam} Hz")]
    RateMismatch { imu: u32, cam: u32 },
    #[error("non-positive duration {0}")]
    BadDuration(f64),
    #[error("duration {duration}s too short for the {needed}s dynamics profile")]
    TooShort { duration: f64, needed: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GtSample {
    pub t: f64,
    pub pose: Frame,
    pub vel: Vector3<f64>,
    /// Body rate held over [t, t + dt).
    pub omega_body: Vector3<f64>,
    /// World-frame acceleration held over [t, t + dt).
    pub acc_world: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub dt: f64,
    /// IMU samples per camera frame.
    pub imu_per_cam: usize,
    pub samples: Vec<GtSample>,
    /// Stated truth measurement precision, used as an optional error
    /// normalization term: position (m) and per-axis angle (rad).
    pub pos_precision: f64,
    pub att_precision: f64,
}

impl GroundTruth {
    pub fn camera_frames(&self) -> usize {
        (self.samples.len() - 1) / self.imu_per_cam + 1
    }

    pub fn camera_sample(&self, frame: usize) -> &GtSample {
        &self.samples[frame * self.imu_per_cam]
    }
}

/// One mirrored strapdown step: the same discretization the filter's
/// inertial predictor applies.
pub fn rollout_step(
    pose: &Frame,
    vel: Vector3<f64>,
    omega_body: Vector3<f64>,
    acc_world: Vector3<f64>,
    dt: f64,
) -> (Frame, Vector3<f64>) {
    let next = Frame {
        t: pose.t + vel * dt + acc_world * (0.5 * dt * dt),
        q: pose.q.compose(&Quaternion::exp(omega_body * dt)),
    };
    (next, vel + acc_world * dt)
}

struct Sinusoid {
    amp: f64,
    freq: f64,
    phase: f64,
}

impl Sinusoid {
    fn value(&self, t: f64) -> f64 {
        self.amp * (self.freq * t + self.phase).sin()
    }

    fn rate(&self, t: f64) -> f64 {
        self.amp * self.freq * (self.freq * t + self.phase).cos()
    }

    fn accel(&self, t: f64) -> f64 {
        -self.amp * self.freq * self.freq * (self.freq * t + self.phase).sin()
    }
}

/// Smooth bump centered at `tc`, unit peak.
struct Bump {
    tc: f64,
    tau: f64,
}

impl Bump {
    fn value(&self, t: f64) -> f64 {
        let u = (t - self.tc) / self.tau;
        (-u * u).exp()
    }

    fn rate(&self, t: f64) -> f64 {
        let u = (t - self.tc) / self.tau;
        -2.0 * u / self.tau * (-u * u).exp()
    }
}

pub fn generate_trajectory(
    spec: &TrajectorySpec,
    seed: u64,
) -> Result<GroundTruth, TrajectoryError> {
    if spec.duration_s <= 0.0 {
        return Err(TrajectoryError::BadDuration(spec.duration_s));
    }
    if spec.cam_rate_hz == 0 || spec.imu_rate_hz == 0 || spec.imu_rate_hz % spec.cam_rate_hz != 0 {
        return Err(TrajectoryError::RateMismatch {
            imu: spec.imu_rate_hz,
            cam: spec.cam_rate_hz,
        });
    }
    if spec.dynamics == DynamicsClass::High && spec.duration_s < 4.0 {
        return Err(TrajectoryError::TooShort {
            duration: spec.duration_s,
            needed: 4.0,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut phase = || rng.random_range(0.0..std::f64::consts::TAU);

    // gentle wandering inside the room
    let pos_ref: Vec<Sinusoid> = [(0.9, 0.41), (0.9, 0.53), (0.45, 0.47)]
        .iter()
        .map(|&(amp, freq)| Sinusoid {
            amp,
            freq,
            phase: phase(),
        })
        .collect();
    // body rates, yaw dominant
    let rate_ref: Vec<Sinusoid> = [(0.25, 0.61), (0.25, 0.73), (0.7, 0.89)]
        .iter()
        .map(|&(amp, freq)| Sinusoid {
            amp,
            freq,
            phase: phase(),
        })
        .collect();

    // the high-dynamics burst sits past the midpoint so the filter has a
    // calm stretch first
    let burst = Bump {
        tc: 0.6 * spec.duration_s,
        tau: (spec.duration_s / 10.0).min(1.5),
    };
    let (burst_rate_amp, burst_rate_freq) = (7.5, 7.5);
    let (burst_pos_amp, burst_pos_freq) = (0.62, 7.5);
    let burst_pos_phase = phase();
    let burst_rate_phase = phase();
    let high = spec.dynamics == DynamicsClass::High;

    let p_ref = |t: f64| -> Vector3<f64> {
        let mut p = Vector3::from_fn(|i, _| pos_ref[i].value(t) - pos_ref[i].phase.sin() * pos_ref[i].amp);
        if high {
            let s = burst_pos_amp * burst.value(t) * (burst_pos_freq * t + burst_pos_phase).sin();
            p.x += s;
        }
        p
    };
    let v_ref = |t: f64| -> Vector3<f64> {
        let mut v = Vector3::from_fn(|i, _| pos_ref[i].rate(t));
        if high {
            let e = burst.value(t);
            let de = burst.rate(t);
            let arg = burst_pos_freq * t + burst_pos_phase;
            v.x += burst_pos_amp * (de * arg.sin() + e * burst_pos_freq * arg.cos());
        }
        v
    };
    let a_ref = |t: f64| -> Vector3<f64> {
        let mut a = Vector3::from_fn(|i, _| pos_ref[i].accel(t));
        if high {
            let e = burst.value(t);
            let de = burst.rate(t);
            let u = (t - burst.tc) / burst.tau;
            let dde = e * (4.0 * u * u - 2.0) / (burst.tau * burst.tau);
            let arg = burst_pos_freq * t + burst_pos_phase;
            a.x += burst_pos_amp
                * (dde * arg.sin() + 2.0 * de * burst_pos_freq * arg.cos()
                    - e * burst_pos_freq * burst_pos_freq * arg.sin());
        }
        a
    };
    let omega = |t: f64| -> Vector3<f64> {
        let mut w = Vector3::from_fn(|i, _| rate_ref[i].value(t));
        if high {
            w.z += burst_rate_amp * burst.value(t) * (burst_rate_freq * t + burst_rate_phase).cos();
        }
        w
    };

    let dt = 1.0 / spec.imu_rate_hz as f64;
    let steps = (spec.duration_s * spec.imu_rate_hz as f64).round() as usize;
    let imu_per_cam = (spec.imu_rate_hz / spec.cam_rate_hz) as usize;

    // PD tracking of the reference keeps the rollout bounded while the
    // acceleration samples stay exactly what the rollout integrates
    let (kp, kd) = (25.0, 10.0);
    let mut samples = Vec::with_capacity(steps + 1);
    let mut pose = Frame::new(p_ref(0.0), Quaternion::IDENTITY);
    let mut vel = v_ref(0.0);
    for k in 0..=steps {
        let t = k as f64 * dt;
        let w = omega(t);
        let a = a_ref(t) + kp * (p_ref(t) - pose.t) + kd * (v_ref(t) - vel);
        samples.push(GtSample {
            t,
            pose: pose.clone(),
            vel,
            omega_body: w,
            acc_world: a,
        });
        let (next_pose, next_vel) = rollout_step(&pose, vel, w, a, dt);
        pose = next_pose;
        vel = next_vel;
    }

    Ok(GroundTruth {
        dt,
        imu_per_cam,
        samples,
        pos_precision: 1e-3,
        att_precision: 0.57f64.to_radians(),
    })
}
