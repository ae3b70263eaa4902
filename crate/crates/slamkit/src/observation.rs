//! Per sensor-landmark pair bookkeeping.
//!
//! Each landmark a sensor can see gets one [`Observation`] that lives as long
//! as the landmark does. It caches the latest prediction (pixel, innovation
//! covariance, measurement Jacobians), the matched pixel, the innovation and
//! a set of event counters that drive the maintenance policy.

use nalgebra::{DMatrix, DVector, Matrix2, SMatrix, Vector2, Vector3};
use thiserror::Error;

use crate::ekf_map::{mahalanobis, BlockHandle, MapError, StochasticMap};
use crate::geometry::{Frame, PinholeIntrinsics, Quaternion};
use crate::landmarks::{
    euclideanize, euclideanize_jacobian, AhpLandmark, LandmarkDescriptor, AHP_DIM, EUCLIDEAN_DIM,
};
use crate::stats::chi_square_quantile;
use crate::vision::{AppearancePrediction, Match};

#[derive(Debug, Error)]
pub enum ObservationError {
    #[error("observation has no prediction for the current frame")]
    NotPredicted,
    #[error(transparent)]
    Map(#[from] MapError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObsStatus {
    Unmatched,
    Matched,
    GatedOut,
    Corrected,
}

/// Event counters over the landmark lifetime. All monotone except the
/// failure streak, which resets on every correction.
#[derive(Debug, Clone, Copy, Default)]
pub struct ObsCounters {
    pub predicted: u32,
    pub visible: u32,
    pub matched: u32,
    pub corrected: u32,
    pub consecutive_failures: u32,
}

/// Projection of the landmark estimate into the image, with its first-order
/// model. `h_full` spans the stacked `[robot, landmark]` blocks in that
/// order, ready for [`StochasticMap::correct`].
#[derive(Debug, Clone)]
pub struct Prediction {
    pub pixel: Vector2<f64>,
    /// Innovation covariance `H P Ht + R`.
    pub s: Matrix2<f64>,
    pub depth: f64,
    /// In bounds with margin and in front of the camera.
    pub visible: bool,
    pub h_pose: SMatrix<f64, 2, 7>,
    pub h_sensor: SMatrix<f64, 2, 7>,
    pub h_landmark: DMatrix<f64>,
    pub h_full: DMatrix<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct Innovation {
    pub y: Vector2<f64>,
    pub s: Matrix2<f64>,
    pub d2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationParams {
    /// Pixel measurement noise std.
    pub pixel_noise: f64,
    /// Mahalanobis-squared acceptance gate.
    pub gate: f64,
    /// Predicted pixel must sit this far inside the border to count as
    /// visible, so the template fits around it.
    pub visibility_margin: f64,
}

impl Default for ObservationParams {
    fn default() -> Self {
        Self {
            pixel_noise: 0.5,
            gate: chi_square_quantile(0.99, 2.0),
            visibility_margin: 6.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Observation {
    pub sensor: usize,
    pub landmark: BlockHandle,
    pub prediction: Option<Prediction>,
    pub appearance: Option<AppearancePrediction>,
    pub matched: Option<Match>,
    pub innovation: Option<Innovation>,
    pub status: ObsStatus,
    pub counters: ObsCounters,
}

impl Observation {
    pub fn new(sensor: usize, landmark: BlockHandle) -> Self {
        Self {
            sensor,
            landmark,
            prediction: None,
            appearance: None,
            matched: None,
            innovation: None,
            status: ObsStatus::Unmatched,
            counters: ObsCounters::default(),
        }
    }

    pub fn record_match(&mut self, m: Match) {
        self.matched = Some(m);
        self.counters.matched += 1;
        self.status = ObsStatus::Matched;
    }

    pub fn record_correction(&mut self) {
        self.counters.corrected += 1;
        self.counters.consecutive_failures = 0;
        self.status = ObsStatus::Corrected;
    }

    pub fn record_failure(&mut self) {
        self.counters.consecutive_failures += 1;
    }
}

/// Registry entry tying a landmark block to its appearance descriptor and
/// observation bookkeeping for one sensor.
#[derive(Debug, Clone)]
pub struct TrackedLandmark {
    pub handle: BlockHandle,
    pub descriptor: LandmarkDescriptor,
    pub obs: Observation,
    pub birth_frame: u64,
}

/// Reads the robot pose from the first seven scalars of its block.
pub fn pose_from_block(map: &StochasticMap, robot: BlockHandle) -> Result<Frame, MapError> {
    let rb = map.block_mean(robot)?;
    if rb.len() < 7 {
        return Err(MapError::DimensionMismatch {
            expected: 7,
            got: rb.len(),
        });
    }
    Ok(Frame::new(
        Vector3::new(rb[0], rb[1], rb[2]),
        Quaternion::new(rb[3], rb[4], rb[5], rb[6]),
    ))
}

/// Projects a landmark block through robot pose and sensor mount. Returns
/// `None` when the point is behind the camera or at non-positive inverse
/// distance; a well-formed prediction marked `visible: false` when it
/// projects outside the usable image area.
pub fn compute_prediction(
    map: &StochasticMap,
    robot: BlockHandle,
    landmark: BlockHandle,
    sensor_in_robot: &Frame,
    intr: &PinholeIntrinsics,
    params: &ObservationParams,
) -> Result<Option<Prediction>, ObservationError> {
    let robot_len = map.block_mean(robot)?.len();
    let r_frame = pose_from_block(map, robot)?;
    let lm_mean = map.block_mean(landmark)?.into_owned();

    let cam = r_frame.compose(sensor_in_robot);
    let (j_cam_robot, j_cam_sensor) = r_frame.compose_jacobians(sensor_in_robot);

    // world point and its Jacobian with respect to the landmark block
    let (point, j_point_lm) = match lm_mean.len() {
        EUCLIDEAN_DIM => (
            Vector3::new(lm_mean[0], lm_mean[1], lm_mean[2]),
            DMatrix::identity(3, 3),
        ),
        AHP_DIM => {
            let l = AhpLandmark::from_vector(nalgebra::SVector::from_iterator(
                lm_mean.iter().copied(),
            ));
            if l.inv_dist <= 0.0 {
                return Ok(None);
            }
            let j = euclideanize_jacobian(&l);
            (
                euclideanize(&l).expect("positive inverse distance"),
                DMatrix::from_fn(3, AHP_DIM, |r, c| j[(r, c)]),
            )
        }
        n => {
            return Err(MapError::DimensionMismatch {
                expected: AHP_DIM,
                got: n,
            }
            .into())
        }
    };

    let local = cam.to_local(point);
    let Ok(proj) = intr.project(local) else {
        return Ok(None);
    };

    let j_proj = intr.project_jacobian(local);
    let (j_local_cam, j_local_p) = cam.to_local_jacobians(point);
    let h_cam = j_proj * j_local_cam;
    let h_pose = h_cam * j_cam_robot;
    let h_sensor = h_cam * j_cam_sensor;
    let h_landmark = DMatrix::from_fn(2, 3, |r, c| (j_proj * j_local_p)[(r, c)]) * &j_point_lm;

    let lm_len = lm_mean.len();
    let mut h_full = DMatrix::zeros(2, robot_len + lm_len);
    for r in 0..2 {
        for c in 0..7 {
            h_full[(r, c)] = h_pose[(r, c)];
        }
    }
    h_full
        .view_mut((0, robot_len), (2, lm_len))
        .copy_from(&h_landmark);

    let r_mat = DMatrix::identity(2, 2) * params.pixel_noise.powi(2);
    let s_dyn = map.innovation_covariance(&[robot, landmark], &h_full, &r_mat)?;
    let s = Matrix2::new(s_dyn[(0, 0)], s_dyn[(0, 1)], s_dyn[(1, 0)], s_dyn[(1, 1)]);

    let visible = intr.contains(proj.pixel, params.visibility_margin);
    Ok(Some(Prediction {
        pixel: proj.pixel,
        s,
        depth: proj.depth,
        visible,
        h_pose,
        h_sensor,
        h_landmark,
        h_full,
    }))
}

/// Starts a fresh frame for this observation: clears match state, projects
/// the landmark and counts the prediction and visibility events.
pub fn predict_observation(
    obs: &mut Observation,
    map: &StochasticMap,
    robot: BlockHandle,
    sensor_in_robot: &Frame,
    intr: &PinholeIntrinsics,
    params: &ObservationParams,
) -> Result<(), ObservationError> {
    obs.prediction = None;
    obs.matched = None;
    obs.innovation = None;
    obs.status = ObsStatus::Unmatched;
    obs.counters.predicted += 1;

    let pred = compute_prediction(map, robot, obs.landmark, sensor_in_robot, intr, params)?;
    if pred.as_ref().is_some_and(|p| p.visible) {
        obs.counters.visible += 1;
    }
    obs.prediction = pred;
    Ok(())
}

/// Re-linearizes the prediction mid-frame after the map moved, without
/// counting a new frame event. The cached innovation goes stale and is
/// dropped; the matched pixel survives.
pub fn refresh_prediction(
    obs: &mut Observation,
    map: &StochasticMap,
    robot: BlockHandle,
    sensor_in_robot: &Frame,
    intr: &PinholeIntrinsics,
    params: &ObservationParams,
) -> Result<bool, ObservationError> {
    obs.innovation = None;
    obs.prediction = compute_prediction(map, robot, obs.landmark, sensor_in_robot, intr, params)?;
    Ok(obs.prediction.as_ref().is_some_and(|p| p.visible))
}

/// Scores a measured pixel against the cached prediction and applies the
/// gate. The innovation is kept on the observation either way.
pub fn innovate(
    obs: &mut Observation,
    z: Vector2<f64>,
    params: &ObservationParams,
) -> Result<Innovation, ObservationError> {
    let pred = obs.prediction.as_ref().ok_or(ObservationError::NotPredicted)?;
    let y = z - pred.pixel;
    let s = pred.s;
    let d2 = mahalanobis(
        &DVector::from_column_slice(y.as_slice()),
        &DMatrix::from_fn(2, 2, |r, c| s[(r, c)]),
    )?;
    let inn = Innovation { y, s, d2 };
    obs.innovation = Some(inn);
    if d2 > params.gate {
        obs.status = ObsStatus::GatedOut;
    }
    Ok(inn)
}
