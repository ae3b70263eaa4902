//! End-to-end filter runs over a dataset: motion prediction at the sensor
//! rate, active search and consensus correction per camera frame, map
//! upkeep, and truth-referenced scoring.

use std::time::Instant;

use nalgebra::{DMatrix, DVector, Matrix3, SVector, Vector3};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::data_manager::{
    DataManager, DataManagerConfig, Detection, FrameReport, ImageSource, RawSource, SearchOutcome,
    SearchRequest,
};
use crate::ekf_map::{BlockHandle, BlockRole, MapError, StochasticMap};

use crate::landmarks::{euclideanize, AhpLandmark, AHP_DIM, EUCLIDEAN_DIM};
use crate::map_manager::{LandmarkQualityPolicy, MapManager};
use crate::motion::{
    cv_noise_jacobian, cv_predict, discretize_noise, imu_predict, ContinuousNoiseSpec, CvState,
    InertialState, MotionError, CV_DIM, IMU_DIM,
};
use crate::observation::{ObsStatus, ObservationError};
use crate::sim::dataset::Dataset;
use crate::sim::metrics::{
    score_step, similarity_align, MetricsConfig, RunMetrics, StepMetric,
};
use crate::sim::render::{render_frame, RenderParams};
use crate::sim::source::{mix, SyntheticNoise, SyntheticSource};
use rand::SeedableRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Constant-velocity motion model, 13 robot scalars.
    Cv,
    /// Strapdown inertial prediction with bias and gravity states, 19
    /// robot scalars.
    Imu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backend {
    /// Labeled matches served straight from dataset projections.
    Synthetic,
    /// Frames rendered per camera step and processed by the detector and
    /// template matcher.
    Image,
}

/// Initial marginal stds of the robot block. Attitude enters through the
/// tangent, so the quaternion covariance stays rank three.
#[derive(Debug, Clone, PartialEq)]
pub struct InitUncertainty {
    pub pos: f64,
    pub att: f64,
    pub vel: f64,
    /// CV-mode body rate.
    pub rate: f64,
    pub acc_bias: f64,
    pub gyro_bias: f64,
    pub gravity: f64,
}

impl Default for InitUncertainty {
    fn default() -> Self {
        Self {
            pos: 1e-3,
            att: 1e-3,
            vel: 1e-3,
            rate: 0.5,
            acc_bias: 0.05,
            gyro_bias: 5e-3,
            gravity: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunnerConfig {
    pub mode: Mode,
    pub backend: Backend,
    /// Seeds the measurement noise stream, the detection grid and the
    /// rendering jitter; independent from the dataset seed.
    pub seed: u64,
    pub noise: SyntheticNoise,
    pub render: RenderParams,
    /// Correlation floor for image-backend template matching.
    pub match_threshold: f64,
    pub data: DataManagerConfig,
    pub policy: LandmarkQualityPolicy,
    pub linearity_threshold: f64,
    pub max_landmarks: usize,
    /// Real corrections spent per frame at most.
    pub correction_budget: u32,
    pub metrics: MetricsConfig,
    /// CV-mode process noise densities (velocity, body rate).
    pub cv_vel_density: f64,
    pub cv_rate_density: f64,
    /// Random-walk densities keeping the bias states alive.
    pub acc_bias_density: f64,
    pub gyro_bias_density: f64,
    pub init: InitUncertainty,
}

impl Default for RunnerConfig {
    fn default() -> Self {
        // the filter's measurement noise must match what the source serves
        let noise = SyntheticNoise::default();
        let mut data = DataManagerConfig::default();
        data.obs.pixel_noise = noise.pixel_std;
        data.max_new_per_frame = 2;
        Self {
            mode: Mode::Imu,
            backend: Backend::Synthetic,
            seed: 1,
            noise,
            render: RenderParams::default(),
            match_threshold: 0.8,
            data,
            policy: LandmarkQualityPolicy::slam(),
            linearity_threshold: 0.1,
            max_landmarks: 40,
            correction_budget: 20,
            metrics: MetricsConfig::default(),
            cv_vel_density: 0.05,
            cv_rate_density: 0.05,
            acc_bias_density: 1e-8,
            gyro_bias_density: 1e-10,
            init: InitUncertainty::default(),
        }
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    Observation(#[from] ObservationError),
    #[error(transparent)]
    Motion(#[from] MotionError),
}

/// Stage totals over the whole run, milliseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StageTiming {
    pub predict_ms: f64,
    pub track_ms: f64,
    pub detect_ms: f64,
    pub maintain_ms: f64,
}

#[derive(Debug)]
pub struct RunOutput {
    pub metrics: RunMetrics,
    pub reports: Vec<FrameReport>,
    pub timing: StageTiming,
    /// Landmarks alive at the end of the run.
    pub final_landmarks: usize,
}

enum ActiveSource {
    Synthetic(SyntheticSource),
    Image(Box<ImageSource>),
}

impl RawSource for ActiveSource {
    fn begin_frame(&mut self, frame: u64) {
        match self {
            ActiveSource::Synthetic(s) => s.begin_frame(frame),
            ActiveSource::Image(s) => s.begin_frame(frame),
        }
    }

    fn detect(&mut self, roi: crate::vision::PixelRect, template_side: u32) -> Option<Detection> {
        match self {
            ActiveSource::Synthetic(s) => s.detect(roi, template_side),
            ActiveSource::Image(s) => s.detect(roi, template_side),
        }
    }

    fn search(&mut self, req: &SearchRequest<'_>) -> SearchOutcome {
        match self {
            ActiveSource::Synthetic(s) => s.search(req),
            ActiveSource::Image(s) => s.search(req),
        }
    }

    fn bind(&mut self, handle: BlockHandle, tag: u64) {
        match self {
            ActiveSource::Synthetic(s) => s.bind(handle, tag),
            ActiveSource::Image(s) => s.bind(handle, tag),
        }
    }

    fn rebind(&mut self, old: BlockHandle, new: BlockHandle) {
        match self {
            ActiveSource::Synthetic(s) => s.rebind(old, new),
            ActiveSource::Image(s) => s.rebind(old, new),
        }
    }

    fn unbind(&mut self, handle: BlockHandle) {
        match self {
            ActiveSource::Synthetic(s) => s.unbind(handle),
            ActiveSource::Image(s) => s.unbind(handle),
        }
    }
}

fn dynamic<const R: usize, const C: usize>(m: &nalgebra::SMatrix<f64, R, C>) -> DMatrix<f64> {
    DMatrix::from_column_slice(R, C, m.as_slice())
}

/// Rank-3 quaternion covariance for an isotropic tangent std.
fn quaternion_cov(q: &crate::geometry::Quaternion, std: f64) -> nalgebra::Matrix4<f64> {
    let l = q.left_matrix();
    let b = 0.5 * l.fixed_view::<4, 3>(0, 1).into_owned();
    b * b.transpose() * (std * std)
}

fn initial_robot_cov(mode: Mode, q0: &crate::geometry::Quaternion, init: &InitUncertainty) -> DMatrix<f64> {
    let dim = match mode {
        Mode::Cv => CV_DIM,
        Mode::Imu => IMU_DIM,
    };
    let mut p = DMatrix::zeros(dim, dim);
    for i in 0..3 {
        p[(i, i)] = init.pos * init.pos;
    }
    p.view_mut((3, 3), (4, 4))
        .copy_from(&quaternion_cov(q0, init.att));
    for i in 7..10 {
        p[(i, i)] = init.vel * init.vel;
    }
    match mode {
        Mode::Cv => {
            for i in 10..13 {
                p[(i, i)] = init.rate * init.rate;
            }
        }
        Mode::Imu => {
            for i in 10..13 {
                p[(i, i)] = init.acc_bias * init.acc_bias;
            }
            for i in 13..16 {
                p[(i, i)] = init.gyro_bias * init.gyro_bias;
            }
            for i in 16..19 {
                p[(i, i)] = init.gravity * init.gravity;
            }
        }
    }
    p
}

/// Runs the filter over the dataset and scores it against the recorded
/// truth.
pub fn run(dataset: &Dataset, cfg: &RunnerConfig) -> Result<RunOutput, RunError> {
    let meta = &dataset.meta;
    let gt = &dataset.gt;
    let robot_dim = match cfg.mode {
        Mode::Cv => CV_DIM,
        Mode::Imu => IMU_DIM,
    };
    // transient slack: reparametrization holds old and new blocks at once
    let capacity = robot_dim + AHP_DIM * (cfg.max_landmarks + 1) + EUCLIDEAN_DIM;
    let mut map = StochasticMap::with_capacity(capacity);

    let s0 = gt.camera_sample(0);
    let mean0: DVector<f64> = match cfg.mode {
        Mode::Cv => {
            let state = CvState {
                p: s0.pose.t,
                q: s0.pose.q,
                v: s0.vel,
                w: s0.omega_body,
            };
            DVector::from_column_slice(state.to_vector().as_slice())
        }
        Mode::Imu => {
            let state = InertialState {
                p: s0.pose.t,
                q: s0.pose.q,
                v: s0.vel,
                a_b: Vector3::zeros(),
                w_b: Vector3::zeros(),
                g: Vector3::new(0.0, 0.0, -meta.imu.gravity),
            };
            DVector::from_column_slice(state.to_vector().as_slice())
        }
    };
    let robot = map.allocate(BlockRole::Robot, robot_dim)?;
    map.set_block_mean(robot, &mean0)?;
    map.set_block_cov(robot, &initial_robot_cov(cfg.mode, &s0.pose.q, &cfg.init))?;

    let mut dm = DataManager::new(
        0,
        meta.sensor_in_robot,
        meta.intrinsics,
        cfg.data.clone(),
        cfg.seed.wrapping_add(0x5851_f42d),
    );
    let mm = MapManager {
        policy: cfg.policy.clone(),
        linearity_threshold: cfg.linearity_threshold,
        max_landmarks: cfg.max_landmarks,
    };

    let mut source = match cfg.backend {
        Backend::Synthetic => ActiveSource::Synthetic(SyntheticSource::new(
            dataset.labels.clone(),
            cfg.noise.clone(),
            cfg.seed,
        )),
        Backend::Image => ActiveSource::Image(Box::new(ImageSource::new(
            meta.intrinsics,
            cfg.match_threshold,
        ))),
    };

    let imu_noise = ContinuousNoiseSpec::imu(
        meta.imu.acc_density,
        meta.imu.gyro_density,
        cfg.acc_bias_density,
        cfg.gyro_bias_density,
    );
    let cv_noise = ContinuousNoiseSpec::cv(cfg.cv_vel_density, cfg.cv_rate_density);
    let cam_dt = gt.dt * gt.imu_per_cam as f64;

    let mut steps: Vec<StepMetric> = Vec::with_capacity(gt.camera_frames());
    let mut skipped = 0usize;
    let mut reports = Vec::with_capacity(gt.camera_frames());
    let mut timing = StageTiming::default();
    let mut outliers_corrected = 0usize;

    for k in 0..gt.camera_frames() {
        let frame_t0 = Instant::now();
        let frame = k as u64;

        if k > 0 {
            let t0 = Instant::now();
            match cfg.mode {
                Mode::Imu => {
                    for i in (k - 1) * gt.imu_per_cam..k * gt.imu_per_cam {
                        let u = &dataset.imu[i];
                        let mean = map.block_mean(robot)?.into_owned();
                        let state = InertialState::from_vector(&SVector::from_iterator(
                            mean.iter().copied(),
                        ));
                        let (next, f_jac, g_jac) = imu_predict(&state, u);
                        let qn = discretize_noise(&imu_noise, u.dt)?;
                        let g = dynamic(&g_jac);
                        let q = &g * qn * g.transpose();
                        map.predict_block(
                            robot,
                            |_| DVector::from_column_slice(next.to_vector().as_slice()),
                            &dynamic(&f_jac),
                            &q,
                        )?;
                    }
                }
                Mode::Cv => {
                    let mean = map.block_mean(robot)?.into_owned();
                    let state =
                        CvState::from_vector(&SVector::from_iterator(mean.iter().copied()));
                    let (next, f_jac) = cv_predict(&state, cam_dt);
                    let g = dynamic(&cv_noise_jacobian());
                    let qn = discretize_noise(&cv_noise, cam_dt)?;
                    let q = &g * qn * g.transpose();
                    map.predict_block(
                        robot,
                        |_| DVector::from_column_slice(next.to_vector().as_slice()),
                        &dynamic(&f_jac),
                        &q,
                    )?;
                }
            }
            // keep the quaternion on the unit sphere; the correction step
            // does not
            map.edit_block_mean(robot, |mut v| {
                let n = (v[3] * v[3] + v[4] * v[4] + v[5] * v[5] + v[6] * v[6]).sqrt();
                if n > 0.0 {
                    for i in 3..7 {
                        v[i] /= n;
                    }
                }
            })?;
            timing.predict_ms += t0.elapsed().as_secs_f64() * 1e3;
        }

        if let ActiveSource::Image(src) = &mut source {
            let truth_cam = gt.camera_sample(k).pose.compose(&meta.sensor_in_robot);
            let mut rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, frame, 0x1111));
            let (img, _) = render_frame(&dataset.world, &truth_cam, &meta.intrinsics, &cfg.render, &mut rng);
            src.set_frame(img);
        }

        let t0 = Instant::now();
        let mut report = dm.process_frame(&mut map, robot, &mut source, frame, cfg.correction_budget)?;
        timing.track_ms += t0.elapsed().as_secs_f64() * 1e3;

        if let ActiveSource::Synthetic(src) = &source {
            for t in &dm.tracked {
                if t.obs.status != ObsStatus::Corrected {
                    continue;
                }
                let Some(tag) = src.tag_of(t.handle) else {
                    continue;
                };
                if src.served(frame, tag).is_some_and(|s| s.outlier) {
                    outliers_corrected += 1;
                }
            }
        }

        let t0 = Instant::now();
        report.new_landmarks = dm.detect_new_landmarks(&mut map, robot, &mut source, &mm, frame)?;
        timing.detect_ms += t0.elapsed().as_secs_f64() * 1e3;

        let t0 = Instant::now();
        let est_pose = crate::observation::pose_from_block(&map, robot)?;
        let cam_pos = est_pose.compose(&meta.sensor_in_robot).t;
        let mreport = mm.maintain(&mut map, &mut dm.tracked, cam_pos, frame);
        dm.sync_bindings(&mut source, &mreport);
        timing.maintain_ms += t0.elapsed().as_secs_f64() * 1e3;

        debug_assert!(dm.registry_consistent(&map));

        let truth = &gt.camera_sample(k).pose;
        let (_, block_cov) = map.joint(&[robot])?;
        let p77 = block_cov.view((0, 0), (7, 7)).into_owned();
        let frame_ms = frame_t0.elapsed().as_secs_f64() * 1e3;
        match score_step(
            frame,
            gt.camera_sample(k).t,
            truth,
            &crate::observation::pose_from_block(&map, robot)?,
            &p77,
            &cfg.metrics,
            frame_ms,
        ) {
            Some(m) => steps.push(m),
            None => skipped += 1,
        }
        reports.push(report);
    }

    let mut metrics = RunMetrics::from_steps(steps, skipped, &cfg.metrics);
    if let ActiveSource::Synthetic(src) = &source {
        metrics.outliers_served = src.outliers_served();
        metrics.outliers_corrected = outliers_corrected;
        metrics.map_alignment = align_map(dataset, &dm, &map, src);
    }
    Ok(RunOutput {
        final_landmarks: dm.tracked.len(),
        metrics,
        reports,
        timing,
    })
}

/// Similarity alignment of the final landmark estimates onto their true
/// world points, associated through the source bindings.
fn align_map(
    dataset: &Dataset,
    dm: &DataManager,
    map: &StochasticMap,
    src: &SyntheticSource,
) -> Option<crate::sim::metrics::SimilarityAlignment> {
    let mut est = Vec::new();
    let mut truth = Vec::new();
    for t in &dm.tracked {
        let Some(tag) = src.tag_of(t.handle) else {
            continue;
        };
        let Some(wp) = dataset.world.points.iter().find(|p| p.id == tag) else {
            continue;
        };
        let Ok(mean) = map.block_mean(t.handle) else {
            continue;
        };
        let point = match mean.len() {
            EUCLIDEAN_DIM => Vector3::new(mean[0], mean[1], mean[2]),
            AHP_DIM => {
                let l = AhpLandmark::from_vector(SVector::from_iterator(mean.iter().copied()));
                match euclideanize(&l) {
                    Ok(p) => p,
                    Err(_) => continue,
                }
            }
            _ => continue,
        };
        est.push(point);
        truth.push(wp.position);
    }
    similarity_align(&est, &truth)
}

fn _assert_role_matrix_shapes() {
    // compile-time sanity on the state layouts the runner assumes
    let _: [(); 13] = [(); CV_DIM];
    let _: [(); 19] = [(); IMU_DIM];
    let _ = Matrix3::<f64>::identity();
}
