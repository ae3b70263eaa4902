//! Label-driven measurement source: serves detections and template searches
//! straight from dataset association labels. Every measurement for a given
//! (frame, point) pair is drawn from its own seeded stream, so results do
//! not depend on how many times or in what order the tracker asks.

use std::collections::HashMap;

use nalgebra::Vector2;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data_manager::{Detection, RawSource, SearchOutcome, SearchRequest};
use crate::ekf_map::BlockHandle;
use crate::sim::render::PointLabel;
use crate::vision::{Match, Patch, PixelRect};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticNoise {
    /// Per-axis pixel noise std on every served measurement.
    pub pixel_std: f64,
    /// Probability that a point's measurement for a frame is replaced by a
    /// wrong-association pixel.
    pub outlier_fraction: f64,
    /// Outlier offset magnitude band (px). The lower end sits inside a
    /// typical acceptance gate, the upper end well outside.
    pub outlier_min_px: f64,
    pub outlier_max_px: f64,
    /// Correlation score reported with served matches.
    pub match_score: f64,
}

impl Default for SyntheticNoise {
    fn default() -> Self {
        Self {
            pixel_std: 1.0,
            outlier_fraction: 0.0,
            outlier_min_px: 4.0,
            outlier_max_px: 25.0,
            match_score: 0.92,
        }
    }
}

/// One measurement the source actually handed out.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Served {
    pub pixel: Vector2<f64>,
    pub outlier: bool,
}

#[derive(Debug, Clone, Copy)]
struct Planned {
    pixel: Vector2<f64>,
    outlier: bool,
}

#[derive(Debug, Clone)]
pub struct SyntheticSource {
    labels: Vec<Vec<PointLabel>>,
    cfg: SyntheticNoise,
    seed: u64,
    frame: u64,
    current: HashMap<u64, PointLabel>,
    plans: HashMap<u64, Planned>,
    bound: HashMap<BlockHandle, u64>,
    served: HashMap<(u64, u64), Served>,
    outliers_served: usize,
}

/// splitmix64-style finalizer over the (seed, frame, tag) triple.
pub(crate) fn mix(seed: u64, frame: u64, tag: u64) -> u64 {
    let mut z = seed
        ^ frame.wrapping_mul(0x9e37_79b9_7f4a_7c15)
        ^ tag.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl SyntheticSource {
    pub fn new(labels: Vec<Vec<PointLabel>>, cfg: SyntheticNoise, seed: u64) -> Self {
        Self {
            labels,
            cfg,
            seed,
            frame: 0,
            current: HashMap::new(),
            plans: HashMap::new(),
            bound: HashMap::new(),
            served: HashMap::new(),
            outliers_served: 0,
        }
    }

    /// The measurement this point produces in the current frame. Depends
    /// only on (seed, frame, tag), never on query order.
    fn plan(&mut self, tag: u64) -> Planned {
        if let Some(p) = self.plans.get(&tag) {
            return *p;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(mix(self.seed, self.frame, tag));
        let outlier =
            self.cfg.outlier_fraction > 0.0 && rng.random::<f64>() < self.cfg.outlier_fraction;
        let mut pixel = self.current[&tag].pixel;
        if outlier {
            let angle = rng.random_range(0.0..std::f64::consts::TAU);
            let mag = rng.random_range(self.cfg.outlier_min_px..=self.cfg.outlier_max_px);
            pixel += Vector2::new(angle.cos(), angle.sin()) * mag;
        }
        let n1: f64 = StandardNormal.sample(&mut rng);
        let n2: f64 = StandardNormal.sample(&mut rng);
        pixel += Vector2::new(n1, n2) * self.cfg.pixel_std;
        let planned = Planned { pixel, outlier };
        self.plans.insert(tag, planned);
        planned
    }

    fn record_served(&mut self, tag: u64, planned: Planned) {
        let key = (self.frame, tag);
        if !self.served.contains_key(&key) {
            if planned.outlier {
                self.outliers_served += 1;
            }
            self.served.insert(
                key,
                Served {
                    pixel: planned.pixel,
                    outlier: planned.outlier,
                },
            );
        }
    }

    pub fn tag_of(&self, handle: BlockHandle) -> Option<u64> {
        self.bound.get(&handle).copied()
    }

    /// What was handed out for this (frame, point), if anything.
    pub fn served(&self, frame: u64, tag: u64) -> Option<Served> {
        self.served.get(&(frame, tag)).copied()
    }

    /// Total wrong-association measurements actually handed out so far.
    pub fn outliers_served(&self) -> usize {
        self.outliers_served
    }
}

impl RawSource for SyntheticSource {
    fn begin_frame(&mut self, frame: u64) {
        self.frame = frame;
        self.plans.clear();
        self.current.clear();
        if let Some(labels) = self.labels.get(frame as usize) {
            for l in labels {
                self.current.insert(l.id, l.clone());
            }
        }
    }

    fn detect(&mut self, roi: PixelRect, template_side: u32) -> Option<Detection> {
        // labels are stored in point-id order, so the scan is deterministic
        let frame_labels = self.labels.get(self.frame as usize)?;
        let tag = frame_labels
            .iter()
            .filter(|l| !self.bound.values().any(|t| *t == l.id))
            .find(|l| roi.contains(l.pixel))?
            .id;
        let planned = self.plan(tag);
        if !roi.contains(planned.pixel) {
            return None;
        }
        self.record_served(tag, planned);
        Some(Detection {
            pixel: planned.pixel,
            response: 1e6,
            patch: Patch::new(template_side),
            tag,
        })
    }

    fn search(&mut self, req: &SearchRequest<'_>) -> SearchOutcome {
        let Some(&tag) = self.bound.get(&req.landmark) else {
            return SearchOutcome::default();
        };
        if !self.current.contains_key(&tag) {
            return SearchOutcome::default();
        }
        let planned = self.plan(tag);
        if !req.region.contains(planned.pixel) {
            return SearchOutcome::default();
        }
        self.record_served(tag, planned);
        SearchOutcome {
            matched: Some(Match {
                pixel: planned.pixel,
                score: self.cfg.match_score,
            }),
            appearance: None,
        }
    }

    fn bind(&mut self, handle: BlockHandle, tag: u64) {
        self.bound.insert(handle, tag);
    }

    fn rebind(&mut self, old: BlockHandle, new: BlockHandle) {
        if let Some(tag) = self.bound.remove(&old) {
            self.bound.insert(new, tag);
        }
    }

    fn unbind(&mut self, handle: BlockHandle) {
        self.bound.remove(&handle);
    }
}
