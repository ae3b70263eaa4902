//! Map hygiene: space granting, landmark quality policy and scheduling of
//! the 7-to-3 scalar reparametrization of converged anchored points.

use nalgebra::Vector3;

use crate::ekf_map::{BlockHandle, StochasticMap};
use crate::landmarks::{linearity_index, reparametrize, AhpLandmark, AHP_DIM};
use crate::observation::TrackedLandmark;

/// When a landmark is dropped and when a converged one becomes eligible for
/// conversion.
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkQualityPolicy {
    /// Matched-over-predicted ratio a landmark must sustain once out of the
    /// grace period.
    pub min_match_ratio: f64,
    /// Failure streak that gets a landmark removed.
    pub max_consecutive_failures: u32,
    /// Corrections required before a converged point may collapse to three
    /// scalars.
    pub min_corrections_to_convert: u32,
    /// Frames after birth during which the match ratio is not enforced.
    pub grace_frames: u64,
}

impl LandmarkQualityPolicy {
    /// Keep healthy landmarks indefinitely.
    pub fn slam() -> Self {
        Self {
            min_match_ratio: 0.3,
            max_consecutive_failures: 5,
            min_corrections_to_convert: 10,
            grace_frames: 10,
        }
    }

    /// Drop a landmark as soon as it goes unobserved for one frame.
    pub fn visual_odometry() -> Self {
        Self {
            min_match_ratio: 0.0,
            max_consecutive_failures: 1,
            min_corrections_to_convert: 10,
            grace_frames: 0,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct MaintainReport {
    pub removed: Vec<BlockHandle>,
    /// `(old anchored handle, new Euclidean handle)` pairs.
    pub converted: Vec<(BlockHandle, BlockHandle)>,
}

#[derive(Debug, Clone)]
pub struct MapManager {
    pub policy: LandmarkQualityPolicy,
    /// Conversion happens below this linearity index.
    pub linearity_threshold: f64,
    pub max_landmarks: usize,
}

impl MapManager {
    pub fn new(policy: LandmarkQualityPolicy) -> Self {
        Self {
            policy,
            linearity_threshold: 0.1,
            max_landmarks: 40,
        }
    }

    /// Whether a new block of `len` scalars may be initialized right now.
    pub fn grant_slot(&self, map: &StochasticMap, tracked_count: usize, len: usize) -> bool {
        map.free_capacity() >= len
            && map.largest_free_block() >= len
            && tracked_count < self.max_landmarks
    }

    /// End-of-frame cleanup: removes landmarks violating the quality policy
    /// and reparametrizes converged anchored points. Entries in `tracked`
    /// are updated or dropped to match.
    pub fn maintain(
        &self,
        map: &mut StochasticMap,
        tracked: &mut Vec<TrackedLandmark>,
        cam_position: Vector3<f64>,
        frame: u64,
    ) -> MaintainReport {
        let mut report = MaintainReport::default();

        tracked.retain(|t| {
            let c = &t.obs.counters;
            let streak_dead = c.consecutive_failures >= self.policy.max_consecutive_failures;
            let out_of_grace = frame.saturating_sub(t.birth_frame) >= self.policy.grace_frames;
            let ratio = c.matched as f64 / c.predicted.max(1) as f64;
            let ratio_dead = out_of_grace && ratio < self.policy.min_match_ratio;
            if streak_dead || ratio_dead {
                map.remove(t.handle).expect("tracked handle is live");
                report.removed.push(t.handle);
                false
            } else {
                true
            }
        });

        for t in tracked.iter_mut() {
            if t.obs.counters.corrected < self.policy.min_corrections_to_convert {
                continue;
            }
            let block = map.block(t.handle).expect("tracked handle is live");
            if block.mean.len() != AHP_DIM {
                continue;
            }
            let l = AhpLandmark::from_vector(nalgebra::SVector::from_iterator(
                block.mean.iter().copied(),
            ));
            let sigma_rho = block.cov[(6, 6)].max(0.0).sqrt();
            if linearity_index(&l, sigma_rho, cam_position) >= self.linearity_threshold {
                continue;
            }
            let new = reparametrize(map, t.handle).expect("conversion of a live anchored block");
            report.converted.push((t.handle, new));
            t.handle = new;
            t.obs.landmark = new;
        }
        report
    }

    /// Registry and gauge health: every tracked handle resolves to a
    /// landmark block, anchored directions keep norm in [0.5, 2], and the
    /// map itself passes its covariance audit.
    pub fn audit(&self, map: &StochasticMap, tracked: &[TrackedLandmark]) -> bool {
        if map.audit().is_err() {
            return false;
        }
        tracked.iter().all(|t| match map.block_mean(t.handle) {
            Ok(mean) if mean.len() == AHP_DIM => {
                let n = Vector3::new(mean[3], mean[4], mean[5]).norm();
                (0.5..=2.0).contains(&n)
            }
            Ok(mean) => mean.len() == 3,
            Err(_) => false,
        })
    }
}
