//! Per-sensor processing: active search with a moving grid, landmark
//! initialization, and the one-point consensus update loop.
//!
//! Raw data enters through the [`RawSource`] trait so the same loop runs on
//! rendered images (through the vision module) and on labeled synthetic
//! detections. Every search is confined to the 3-sigma region of its
//! observation; hypothesis scoring then shrinks it further to a
//! strongly-compatible region before spending real corrections.

use std::time::Instant;

use nalgebra::{DMatrix, DVector, Matrix2, Vector2, Vector3};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::ekf_map::{BlockHandle, BlockRole, StochasticMap};
use crate::geometry::{Frame, PinholeIntrinsics};
use crate::landmarks::{ahp_init, euclideanize, AhpLandmark, LandmarkDescriptor, AHP_DIM};
use crate::map_manager::MapManager;
use crate::observation::{
    compute_prediction, innovate, pose_from_block, predict_observation, refresh_prediction,
    Observation, ObservationError, ObservationParams, ObsStatus, Prediction, TrackedLandmark,
};
use crate::stats::chi_square_quantile;
use crate::vision::{
    harris_best, predict_appearance, search_match, AppearancePrediction, GrayImage, HarrisParams,
    IntegralImage, Match, Patch, PixelRect,
};

/// A corner picked up in a detection region.
#[derive(Debug, Clone)]
pub struct Detection {
    pub pixel: Vector2<f64>,
    pub response: f64,
    pub patch: Patch,
    /// Source-internal identity, echoed back through [`RawSource::bind`]
    /// when the detection becomes a landmark.
    pub tag: u64,
}

/// Everything a source needs to look for one landmark's template.
#[derive(Debug)]
pub struct SearchRequest<'a> {
    pub landmark: BlockHandle,
    pub descriptor: &'a LandmarkDescriptor,
    /// Pixel region to scan; never exceeds the observation's 3-sigma bound.
    pub region: PixelRect,
    pub predicted_pixel: Vector2<f64>,
    /// Current camera-in-world estimate, for appearance warping.
    pub cam_pose: Frame,
    /// Current world-point estimate.
    pub landmark_point: Vector3<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct SearchOutcome {
    pub matched: Option<Match>,
    pub appearance: Option<AppearancePrediction>,
}

/// Raw measurement provider for one sensor.
pub trait RawSource {
    fn begin_frame(&mut self, _frame: u64) {}
    /// Strongest corner inside `roi` with an appearance template of
    /// `template_side` pixels, if any qualifies.
    fn detect(&mut self, roi: PixelRect, template_side: u32) -> Option<Detection>;
    /// Template search confined to `req.region`.
    fn search(&mut self, req: &SearchRequest<'_>) -> SearchOutcome;
    /// Associates a landmark block with the detection tag it came from.
    fn bind(&mut self, _handle: BlockHandle, _tag: u64) {}
    /// Moves a binding to the handle produced by reparametrization.
    fn rebind(&mut self, _old: BlockHandle, _new: BlockHandle) {}
    fn unbind(&mut self, _handle: BlockHandle) {}
}

/// Randomly offset grid that spreads detections over the field of view:
/// detection only happens in cells with no tracked feature.
#[derive(Debug, Clone)]
pub struct SearchGrid {
    rows: u32,
    cols: u32,
    width: u32,
    height: u32,
    offset: (f64, f64),
    occupied: Vec<bool>,
}

impl SearchGrid {
    pub fn new(rows: u32, cols: u32, width: u32, height: u32) -> Self {
        assert!(rows > 0 && cols > 0);
        Self {
            rows,
            cols,
            width,
            height,
            offset: (0.0, 0.0),
            occupied: vec![false; ((rows + 1) * (cols + 1)) as usize],
        }
    }

    fn pitch(&self) -> (f64, f64) {
        (
            self.width as f64 / self.cols as f64,
            self.height as f64 / self.rows as f64,
        )
    }

    /// One cell pitch of travel available; resampled every frame.
    pub fn resample_offset(&mut self, rng: &mut impl Rng) {
        let (px, py) = self.pitch();
        self.offset = (rng.random_range(0.0..px), rng.random_range(0.0..py));
    }

    pub fn clear(&mut self) {
        self.occupied.fill(false);
    }

    /// Grid-cell coordinates of a pixel; `None` outside the image.
    fn cell_of(&self, pixel: Vector2<f64>) -> Option<(u32, u32)> {
        if pixel.x < 0.0
            || pixel.y < 0.0
            || pixel.x >= self.width as f64
            || pixel.y >= self.height as f64
        {
            return None;
        }
        let (px, py) = self.pitch();
        let ix = ((pixel.x - self.offset.0) / px).floor() as i64 + 1;
        let iy = ((pixel.y - self.offset.1) / py).floor() as i64 + 1;
        debug_assert!(ix >= 0 && ix <= self.cols as i64);
        debug_assert!(iy >= 0 && iy <= self.rows as i64);
        Some((ix as u32, iy as u32))
    }

    pub fn mark(&mut self, pixel: Vector2<f64>) {
        if let Some((ix, iy)) = self.cell_of(pixel) {
            self.occupied[(iy * (self.cols + 1) + ix) as usize] = true;
        }
    }

    /// Pixel rect of a cell clipped to the image; empty cells at the border
    /// may collapse to nothing.
    pub fn cell_rect(&self, ix: u32, iy: u32) -> PixelRect {
        let (px, py) = self.pitch();
        let x0 = (self.offset.0 + (ix as f64 - 1.0) * px).ceil() as i32;
        let y0 = (self.offset.1 + (iy as f64 - 1.0) * py).ceil() as i32;
        let x1 = (self.offset.0 + ix as f64 * px).ceil() as i32 - 1;
        let y1 = (self.offset.1 + iy as f64 * py).ceil() as i32 - 1;
        PixelRect::new(x0, y0, x1, y1)
            .intersect(&PixelRect::new(0, 0, self.width as i32 - 1, self.height as i32 - 1))
    }

    /// Cells with no tracked feature, row-major order.
    pub fn empty_cells(&self) -> Vec<(u32, u32)> {
        let mut out = Vec::new();
        for iy in 0..=self.rows {
            for ix in 0..=self.cols {
                if !self.occupied[(iy * (self.cols + 1) + ix) as usize] {
                    out.push((ix, iy));
                }
            }
        }
        out
    }
}

/// How candidate observations are ranked for correction order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InfoRanking {
    /// Largest innovation-covariance determinant first.
    Determinant,
    /// Largest trace first.
    Trace,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RansacConfig {
    pub max_iterations: u32,
    /// Squared-Mahalanobis bound for strong compatibility after a
    /// hypothesis correction; well below the 3-sigma search bound.
    pub strong_gate: f64,
    /// Stop iterating once this probability of having seen an
    /// uncontaminated hypothesis is reached.
    pub confidence: f64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            max_iterations: 10,
            strong_gate: chi_square_quantile(0.95, 2.0),
            confidence: 0.99,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataManagerConfig {
    pub grid_rows: u32,
    pub grid_cols: u32,
    /// New landmarks initialized per frame at most.
    pub max_new_per_frame: u32,
    pub min_detection_response: f64,
    pub template_side: u32,
    pub rho0: f64,
    pub sigma_rho0: f64,
    pub ranking: InfoRanking,
    pub ransac: RansacConfig,
    pub obs: ObservationParams,
}

impl Default for DataManagerConfig {
    fn default() -> Self {
        Self {
            grid_rows: 4,
            grid_cols: 5,
            max_new_per_frame: 1,
            min_detection_response: 1e4,
            template_side: 11,
            rho0: 0.5,
            sigma_rho0: 0.25,
            ranking: InfoRanking::Determinant,
            ransac: RansacConfig::default(),
            obs: ObservationParams::default(),
        }
    }
}

/// Per-frame accounting, one row in the metrics log.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FrameReport {
    pub frame: u64,
    pub tracked: usize,
    pub visible: usize,
    pub searched: usize,
    pub matched: usize,
    /// Supporters of the winning hypothesis.
    pub strong: usize,
    pub corrected: usize,
    pub gated: usize,
    pub new_landmarks: usize,
    pub ransac_iterations: u32,
    pub elapsed_ms: f64,
}

pub struct DataManager {
    pub sensor_id: usize,
    pub sensor_in_robot: Frame,
    pub intr: PinholeIntrinsics,
    pub cfg: DataManagerConfig,
    pub tracked: Vec<TrackedLandmark>,
    pub grid: SearchGrid,
    rng: ChaCha8Rng,
}

/// Bounding rect of the `{y : y' S^-1 y <= chi2}` ellipse around `center`.
fn ellipse_rect(center: Vector2<f64>, s: &Matrix2<f64>, chi2: f64) -> PixelRect {
    let rx = (chi2 * s[(0, 0)].max(0.0)).sqrt();
    let ry = (chi2 * s[(1, 1)].max(0.0)).sqrt();
    PixelRect::around(center, rx, ry)
}

/// Squared Mahalanobis distance for a 2-vector; infinite when S is not
/// invertible.
fn mahal2(y: Vector2<f64>, s: &Matrix2<f64>) -> f64 {
    match s.try_inverse() {
        Some(si) => (y.transpose() * si * y)[(0, 0)],
        None => f64::INFINITY,
    }
}

/// The active-search bound: a search region for this prediction, at squared
/// radius `chi2`, clipped inside the 3-sigma rect.
fn search_region(pred: &Prediction, chi2: f64) -> PixelRect {
    let sigma3 = ellipse_rect(pred.pixel, &pred.s, 9.0);
    let wanted = ellipse_rect(pred.pixel, &pred.s, chi2);
    let clipped = wanted.intersect(&sigma3);
    debug_assert!(clipped.area() <= sigma3.area());
    clipped
}

impl DataManager {
    pub fn new(
        sensor_id: usize,
        sensor_in_robot: Frame,
        intr: PinholeIntrinsics,
        cfg: DataManagerConfig,
        seed: u64,
    ) -> Self {
        let grid = SearchGrid::new(cfg.grid_rows, cfg.grid_cols, intr.width, intr.height);
        Self {
            sensor_id,
            sensor_in_robot,
            intr,
            cfg,
            tracked: Vec::new(),
            grid,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// World-point estimate for a tracked landmark, if finite.
    fn landmark_point(&self, map: &StochasticMap, handle: BlockHandle) -> Option<Vector3<f64>> {
        let mean = map.block_mean(handle).ok()?;
        match mean.len() {
            3 => Some(Vector3::new(mean[0], mean[1], mean[2])),
            AHP_DIM => {
                let l = AhpLandmark::from_vector(nalgebra::SVector::from_iterator(
                    mean.iter().copied(),
                ));
                euclideanize(&l).ok()
            }
            _ => None,
        }
    }

    fn run_search<S: RawSource>(
        &mut self,
        source: &mut S,
        map: &StochasticMap,
        robot: BlockHandle,
        idx: usize,
        pred: &Prediction,
        chi2: f64,
    ) -> Result<Option<Match>, ObservationError> {
        let region = search_region(pred, chi2);
        if region.is_empty() {
            return Ok(None);
        }
        let t = &self.tracked[idx];
        let Some(point) = self.landmark_point(map, t.handle) else {
            return Ok(None);
        };
        let cam_pose = pose_from_block(map, robot)?.compose(&self.sensor_in_robot);
        let outcome = source.search(&SearchRequest {
            landmark: t.handle,
            descriptor: &t.descriptor,
            region,
            predicted_pixel: pred.pixel,
            cam_pose,
            landmark_point: point,
        });
        if let Some(app) = outcome.appearance {
            self.tracked[idx].obs.appearance = Some(app);
        }
        Ok(outcome.matched)
    }

    /// One full measurement-update round for this sensor's frame.
    ///
    /// Candidates are the visible predictions, ranked by expected
    /// information. Random single-match hypotheses are corrected on a map
    /// copy; the remaining candidates vote through matches inside their
    /// strongly-compatible regions. The winning hypothesis' supporters are
    /// corrected for real in ranked order until `budget` runs out, then
    /// leftovers get a chance through plain innovation gating. Measurements
    /// failing the gate are never corrected.
    pub fn process_frame<S: RawSource>(
        &mut self,
        map: &mut StochasticMap,
        robot: BlockHandle,
        source: &mut S,
        frame: u64,
        budget: u32,
    ) -> Result<FrameReport, ObservationError> {
        let t0 = Instant::now();
        source.begin_frame(frame);
        let mut report = FrameReport {
            frame,
            tracked: self.tracked.len(),
            ..FrameReport::default()
        };

        for t in self.tracked.iter_mut() {
            predict_observation(
                &mut t.obs,
                map,
                robot,
                &self.sensor_in_robot,
                &self.intr,
                &self.cfg.obs,
            )?;
        }

        let info = |p: &Prediction, ranking: InfoRanking| match ranking {
            InfoRanking::Determinant => p.s.determinant(),
            InfoRanking::Trace => p.s.trace(),
        };
        let mut ranked: Vec<usize> = (0..self.tracked.len())
            .filter(|&i| {
                self.tracked[i]
                    .obs
                    .prediction
                    .as_ref()
                    .is_some_and(|p| p.visible)
            })
            .collect();
        let ranking = self.cfg.ranking;
        ranked.sort_by(|&a, &b| {
            let ia = info(self.tracked[a].obs.prediction.as_ref().unwrap(), ranking);
            let ib = info(self.tracked[b].obs.prediction.as_ref().unwrap(), ranking);
            ib.partial_cmp(&ia).unwrap().then(a.cmp(&b))
        });
        report.visible = ranked.len();
        if ranked.is_empty() {
            report.elapsed_ms = t0.elapsed().as_secs_f64() * 1e3;
            return Ok(report);
        }

        // per-candidate measurement cache:
        // None = unsearched, Some(None) = searched and missed
        let mut measured: Vec<Option<Option<Match>>> = vec![None; self.tracked.len()];

        // hypothesis voting
        let mut best_supporters: Vec<usize> = Vec::new();
        let mut best_score = f64::NEG_INFINITY;
        let mut iterations = 0u32;
        let mut unseeded = ranked.clone();
        let n_cand = ranked.len() as f64;
        while iterations < self.cfg.ransac.max_iterations && !unseeded.is_empty() {
            if !best_supporters.is_empty() {
                let w = best_supporters.len() as f64 / n_cand;
                if 1.0 - (1.0 - w).powi(iterations as i32) >= self.cfg.ransac.confidence {
                    break;
                }
            }
            iterations += 1;
            let seed = unseeded.swap_remove(self.rng.random_range(0..unseeded.len()));

            let seed_pred = self.tracked[seed].obs.prediction.clone().unwrap();
            let z = match measured[seed] {
                Some(cached) => cached,
                None => {
                    let m = self.run_search(source, map, robot, seed, &seed_pred, 9.0)?;
                    report.searched += 1;
                    measured[seed] = Some(m);
                    m
                }
            };
            let Some(z) = z else { continue };
            if mahal2(z.pixel - seed_pred.pixel, &seed_pred.s) > self.cfg.obs.gate {
                continue;
            }

            // single-match correction on a scratch copy of the map
            let mut tentative = map.clone();
            let y = z.pixel - seed_pred.pixel;
            tentative.correct(
                &[robot, self.tracked[seed].handle],
                &seed_pred.h_full,
                &DVector::from_column_slice(y.as_slice()),
                &DMatrix::from_fn(2, 2, |r, c| seed_pred.s[(r, c)]),
            )?;

            let mut supporters = vec![seed];
            let mut score = z.score;
            for &c in &ranked {
                if c == seed {
                    continue;
                }
                let Some(pred_t) = compute_prediction(
                    &tentative,
                    robot,
                    self.tracked[c].handle,
                    &self.sensor_in_robot,
                    &self.intr,
                    &self.cfg.obs,
                )?
                else {
                    continue;
                };
                if !pred_t.visible {
                    continue;
                }
                let m = match measured[c] {
                    Some(m) => m,
                    None => {
                        let m = self.run_search(
                            source,
                            &tentative,
                            robot,
                            c,
                            &pred_t,
                            self.cfg.ransac.strong_gate,
                        )?;
                        report.searched += 1;
                        // a miss in this hypothesis' small region says nothing
                        // about other hypotheses; only hits are kept
                        if m.is_some() {
                            measured[c] = Some(m);
                        }
                        m
                    }
                };
                let Some(m) = m else { continue };
                if mahal2(m.pixel - pred_t.pixel, &pred_t.s) <= self.cfg.ransac.strong_gate {
                    supporters.push(c);
                    score += m.score;
                }
            }
            if supporters.len() > best_supporters.len()
                || (supporters.len() == best_supporters.len() && score > best_score)
            {
                best_supporters = supporters;
                best_score = score;
            }
        }
        report.ransac_iterations = iterations;
        report.strong = best_supporters.len();

        // real corrections: winning supporters first, in ranked order
        let mut is_supporter = vec![false; self.tracked.len()];
        for &i in &best_supporters {
            is_supporter[i] = true;
        }
        let mut corrected = vec![false; self.tracked.len()];
        for pass in 0..2 {
            for &i in &ranked {
                if report.corrected >= budget as usize {
                    break;
                }
                if corrected[i] || (pass == 0) != is_supporter[i] {
                    continue;
                }
                if !refresh_prediction(
                    &mut self.tracked[i].obs,
                    map,
                    robot,
                    &self.sensor_in_robot,
                    &self.intr,
                    &self.cfg.obs,
                )? {
                    continue;
                }
                let pred = self.tracked[i].obs.prediction.clone().unwrap();
                let z = match measured[i] {
                    Some(m) => m,
                    None => {
                        // leftovers may still be rescued from a fresh search
                        let m = self.run_search(source, map, robot, i, &pred, 9.0)?;
                        report.searched += 1;
                        measured[i] = Some(m);
                        m
                    }
                };
                let Some(z) = z else { continue };
                self.tracked[i].obs.record_match(z);
                let inn = innovate(&mut self.tracked[i].obs, z.pixel, &self.cfg.obs)?;
                if inn.d2 > self.cfg.obs.gate {
                    continue;
                }
                map.correct(
                    &[robot, self.tracked[i].handle],
                    &pred.h_full,
                    &DVector::from_column_slice(inn.y.as_slice()),
                    &DMatrix::from_fn(2, 2, |r, c| inn.s[(r, c)]),
                )?;
                self.tracked[i].obs.record_correction();
                corrected[i] = true;
                report.corrected += 1;
            }
        }

        for &i in &ranked {
            if !corrected[i] {
                self.tracked[i].obs.record_failure();
            }
        }
        report.matched = measured
            .iter()
            .filter(|m| matches!(m, Some(Some(_))))
            .count();
        report.gated = self
            .tracked
            .iter()
            .filter(|t| t.obs.status == ObsStatus::GatedOut)
            .count();
        report.elapsed_ms = t0.elapsed().as_secs_f64() * 1e3;
        Ok(report)
    }

    /// Scans empty grid cells for fresh corners and initializes up to the
    /// per-frame cap as anchored points, subject to map-manager granting.
    pub fn detect_new_landmarks<S: RawSource>(
        &mut self,
        map: &mut StochasticMap,
        robot: BlockHandle,
        source: &mut S,
        mgr: &MapManager,
        frame: u64,
    ) -> Result<usize, ObservationError> {
        self.grid.resample_offset(&mut self.rng);
        self.grid.clear();
        for t in &self.tracked {
            if let Some(p) = &t.obs.prediction {
                self.grid.mark(p.pixel);
            }
        }

        let mut cells = self.grid.empty_cells();
        cells.shuffle(&mut self.rng);

        let margin = self.cfg.obs.visibility_margin.ceil() as i32;
        let usable = PixelRect::new(
            margin,
            margin,
            self.intr.width as i32 - 1 - margin,
            self.intr.height as i32 - 1 - margin,
        );

        let mut created = 0;
        for (ix, iy) in cells {
            if created >= self.cfg.max_new_per_frame as usize {
                break;
            }
            let rect = self.grid.cell_rect(ix, iy).intersect(&usable);
            if rect.is_empty() || rect.width() < 8 || rect.height() < 8 {
                continue;
            }
            let Some(det) = source.detect(rect, self.cfg.template_side) else {
                continue;
            };
            if det.response < self.cfg.min_detection_response {
                continue;
            }
            if !mgr.grant_slot(map, self.tracked.len(), AHP_DIM) {
                break;
            }

            let robot_pose = pose_from_block(map, robot)?;
            let cam = robot_pose.compose(&self.sensor_in_robot);
            let Ok(init) = ahp_init(
                &cam,
                &self.intr,
                det.pixel,
                self.cfg.rho0,
                self.cfg.sigma_rho0,
                self.cfg.obs.pixel_noise,
            ) else {
                continue;
            };

            let (j_cam_robot, _) = robot_pose.compose_jacobians(&self.sensor_in_robot);
            let j_pose = init.j_frame * j_cam_robot;
            let robot_len = map.block_mean(robot)?.len();
            let mut j_parent = DMatrix::zeros(AHP_DIM, robot_len);
            for r in 0..AHP_DIM {
                for c in 0..7 {
                    j_parent[(r, c)] = j_pose[(r, c)];
                }
            }
            let mean = DVector::from_column_slice(init.mean.to_vector().as_slice());
            let prior = DMatrix::from_fn(AHP_DIM, AHP_DIM, |r, c| init.prior_cov[(r, c)]);
            let handle = map.augment(robot, BlockRole::Landmark, &mean, &j_parent, &prior)?;
            source.bind(handle, det.tag);
            self.tracked.push(TrackedLandmark {
                handle,
                descriptor: LandmarkDescriptor {
                    patch: det.patch,
                    ref_pose: cam,
                    ref_pixel: det.pixel,
                },
                obs: Observation::new(self.sensor_id, handle),
                birth_frame: frame,
            });
            created += 1;
        }
        Ok(created)
    }

    /// Applies a maintenance report to the source bindings and checks the
    /// registry: one tracked entry per landmark block.
    pub fn sync_bindings<S: RawSource>(
        &self,
        source: &mut S,
        report: &crate::map_manager::MaintainReport,
    ) {
        for h in &report.removed {
            source.unbind(*h);
        }
        for (old, new) in &report.converted {
            source.rebind(*old, *new);
        }
    }

    /// One observation per landmark block of this sensor, every handle live.
    pub fn registry_consistent(&self, map: &StochasticMap) -> bool {
        let landmark_blocks = map
            .handles()
            .filter(|(_, role)| *role == BlockRole::Landmark)
            .count();
        landmark_blocks == self.tracked.len()
            && self
                .tracked
                .iter()
                .all(|t| t.obs.landmark == t.handle && map.block_mean(t.handle).is_ok())
    }
}

/// Vision-backed measurement source: Harris corners for detection, warped
/// template correlation for tracking.
pub struct ImageSource {
    intr: PinholeIntrinsics,
    pub harris: HarrisParams,
    /// Correlation score a match must reach.
    pub match_threshold: f64,
    img: GrayImage,
    integral: IntegralImage,
    half: GrayImage,
}

impl ImageSource {
    pub fn new(intr: PinholeIntrinsics, match_threshold: f64) -> Self {
        let img = GrayImage::new(intr.width, intr.height);
        let integral = IntegralImage::build(&img);
        let half = img.half_resolution();
        Self {
            intr,
            harris: HarrisParams::default(),
            match_threshold,
            img,
            integral,
            half,
        }
    }

    /// Swaps in the image for the coming frame and rebuilds its pyramids.
    pub fn set_frame(&mut self, img: GrayImage) {
        self.integral = IntegralImage::build(&img);
        self.half = img.half_resolution();
        self.img = img;
    }

    pub fn image(&self) -> &GrayImage {
        &self.img
    }
}

impl RawSource for ImageSource {
    fn detect(&mut self, roi: PixelRect, template_side: u32) -> Option<Detection> {
        let corner = harris_best(&self.img, roi, &self.harris).ok()??;
        let patch = self.img.patch_at(
            corner.pixel.x.round() as i32,
            corner.pixel.y.round() as i32,
            template_side,
        )?;
        Some(Detection {
            pixel: corner.pixel,
            response: corner.response,
            patch,
            tag: 0,
        })
    }

    fn search(&mut self, req: &SearchRequest<'_>) -> SearchOutcome {
        let app = predict_appearance(
            &req.descriptor.patch,
            &req.descriptor.ref_pose,
            req.descriptor.ref_pixel,
            &req.cam_pose,
            req.predicted_pixel,
            req.landmark_point,
            &self.intr,
        );
        let matched = search_match(
            &self.img,
            &self.integral,
            &self.half,
            &app.patch,
            req.region,
            self.match_threshold,
        );
        SearchOutcome {
            matched,
            appearance: Some(app),
        }
    }
}
