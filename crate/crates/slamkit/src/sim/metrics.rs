//! Run scoring: filter-vs-truth pose errors in a chi-square framework,
//! divergence episodes, and similarity alignment of the reconstructed map.

use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector, Matrix3, Vector3, SVD};
use serde::{Deserialize, Serialize};

use crate::geometry::Frame;
use crate::stats::averaged_chi_square_bound;

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsConfig {
    /// Stated truth precision (position m, per-axis attitude rad) added to
    /// the error covariance, acknowledging that the reference itself is
    /// only known this well. `None` scores against the raw covariance.
    pub truth_precision: Option<(f64, f64)>,
    /// A normalized error this large, sustained over the window, flags the
    /// run as diverged.
    pub divergence_nees: f64,
    pub divergence_window_s: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            truth_precision: None,
            divergence_nees: 500.0,
            divergence_window_s: 0.5,
        }
    }
}

/// Error scores of one camera-rate step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetric {
    pub frame: u64,
    pub t: f64,
    /// Squared error normalized by the filter covariance, 6 dof.
    pub nees: f64,
    /// Signed errors: position (m), then attitude axes (rad).
    pub err: [f64; 6],
    /// Marginal stds of the same six axes.
    pub sigma: [f64; 6],
    pub frame_ms: f64,
}

impl StepMetric {
    pub fn pos_err(&self) -> f64 {
        (self.err[0].powi(2) + self.err[1].powi(2) + self.err[2].powi(2)).sqrt()
    }

    pub fn att_err(&self) -> f64 {
        (self.err[3].powi(2) + self.err[4].powi(2) + self.err[5].powi(2)).sqrt()
    }

    /// Every axis within `n` marginal stds.
    pub fn within_sigmas(&self, n: f64) -> bool {
        self.err
            .iter()
            .zip(&self.sigma)
            .all(|(e, s)| e.abs() <= n * s)
    }
}

/// Six-dimensional pose error of `est` against `truth` and its covariance
/// induced from the 7x7 coordinate covariance (position + quaternion).
/// The attitude error is the doubled imaginary part of truth^-1 ⊗ est,
/// which is linear in the estimated coordinates, so the covariance mapping
/// involves no linearization of the estimate itself.
pub fn pose_error(
    truth: &Frame,
    est: &Frame,
    p77: &DMatrix<f64>,
) -> (DVector<f64>, DMatrix<f64>) {
    assert_eq!((p77.nrows(), p77.ncols()), (7, 7));
    let l = truth.q.conjugate().left_matrix();
    let a = 2.0 * l.fixed_view::<3, 4>(1, 0).into_owned();

    let e_pos = est.t - truth.t;
    let e_att = a * est.q.coords();
    let mut e = DVector::zeros(6);
    e.fixed_rows_mut::<3>(0).copy_from(&e_pos);
    e.fixed_rows_mut::<3>(3).copy_from(&e_att);

    let mut j = DMatrix::zeros(6, 7);
    j.fixed_view_mut::<3, 3>(0, 0)
        .copy_from(&Matrix3::identity());
    j.fixed_view_mut::<3, 4>(3, 3).copy_from(&a);
    let sigma = &j * p77 * j.transpose();
    (e, sigma)
}

/// Scores one step; `None` when the induced covariance is not positive
/// definite, which callers count as a skipped step.
pub fn score_step(
    frame: u64,
    t: f64,
    truth: &Frame,
    est: &Frame,
    p77: &DMatrix<f64>,
    cfg: &MetricsConfig,
    frame_ms: f64,
) -> Option<StepMetric> {
    let (e, mut sigma) = pose_error(truth, est, p77);
    if let Some((pos, att)) = cfg.truth_precision {
        for i in 0..3 {
            sigma[(i, i)] += pos * pos;
            sigma[(i + 3, i + 3)] += att * att;
        }
    }
    let chol = Cholesky::new(sigma.clone())?;
    let nees = e.dot(&chol.solve(&e));
    let mut err = [0.0; 6];
    let mut sig = [0.0; 6];
    for i in 0..6 {
        err[i] = e[i];
        sig[i] = sigma[(i, i)].sqrt();
    }
    Some(StepMetric {
        frame,
        t,
        nees,
        err,
        sigma: sig,
        frame_ms,
    })
}

/// Least-squares similarity (scale, rotation, translation) taking `est`
/// onto `truth`, with the residual after alignment. `None` for degenerate
/// clouds (fewer than three points or no spread).
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityAlignment {
    pub scale: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub rmse: f64,
    /// Residual relative to the truth cloud's rms spread: shape agreement
    /// independent of the global similarity.
    pub rel_shape_err: f64,
}

pub fn similarity_align(
    est: &[Vector3<f64>],
    truth: &[Vector3<f64>],
) -> Option<SimilarityAlignment> {
    let n = est.len();
    if n < 3 || n != truth.len() {
        return None;
    }
    let nf = n as f64;
    let mu_e: Vector3<f64> = est.iter().sum::<Vector3<f64>>() / nf;
    let mu_t: Vector3<f64> = truth.iter().sum::<Vector3<f64>>() / nf;

    let mut var_e = 0.0;
    let mut var_t = 0.0;
    let mut c = Matrix3::zeros();
    for (e, t) in est.iter().zip(truth) {
        let de = e - mu_e;
        let dt = t - mu_t;
        var_e += de.norm_squared() / nf;
        var_t += dt.norm_squared() / nf;
        c += dt * de.transpose() / nf;
    }
    if var_e < 1e-12 || var_t < 1e-12 {
        return None;
    }

    let svd = SVD::new(c, true, true);
    let u = svd.u?;
    let v_t = svd.v_t?;
    let d = if u.determinant() * v_t.determinant() < 0.0 {
        -1.0
    } else {
        1.0
    };
    let mut s_diag = Vector3::new(1.0, 1.0, d);
    let rotation = u * Matrix3::from_diagonal(&s_diag) * v_t;
    s_diag.component_mul_assign(&svd.singular_values);
    let scale = s_diag.sum() / var_e;
    let translation = mu_t - rotation * mu_e * scale;

    let mut sq = 0.0;
    for (e, t) in est.iter().zip(truth) {
        sq += (t - (rotation * e * scale + translation)).norm_squared();
    }
    let rmse = (sq / nf).sqrt();
    Some(SimilarityAlignment {
        scale,
        rotation,
        translation,
        rmse,
        rel_shape_err: rmse / var_t.sqrt(),
    })
}

/// Everything scored over one run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunMetrics {
    pub steps: Vec<StepMetric>,
    /// Steps dropped because the covariance was not positive definite.
    pub skipped: usize,
    /// Start time of the first sustained divergence episode.
    pub diverged_at: Option<f64>,
    pub rmse_pos: f64,
    pub rmse_att: f64,
    pub final_pos_err: f64,
    pub map_alignment: Option<SimilarityAlignment>,
    pub outliers_served: usize,
    pub outliers_corrected: usize,
}

impl RunMetrics {
    pub fn from_steps(steps: Vec<StepMetric>, skipped: usize, cfg: &MetricsConfig) -> Self {
        let n = steps.len().max(1) as f64;
        let rmse_pos = (steps.iter().map(|s| s.pos_err().powi(2)).sum::<f64>() / n).sqrt();
        let rmse_att = (steps.iter().map(|s| s.att_err().powi(2)).sum::<f64>() / n).sqrt();
        let final_pos_err = steps.last().map_or(0.0, StepMetric::pos_err);
        let diverged_at = detect_divergence(&steps, cfg);
        Self {
            steps,
            skipped,
            diverged_at,
            rmse_pos,
            rmse_att,
            final_pos_err,
            map_alignment: None,
            outliers_served: 0,
            outliers_corrected: 0,
        }
    }

    /// Fraction of steps with normalized error below `bound`.
    pub fn nees_fraction_below(&self, bound: f64) -> f64 {
        if self.steps.is_empty() {
            return 0.0;
        }
        self.steps.iter().filter(|s| s.nees < bound).count() as f64 / self.steps.len() as f64
    }

    /// Fraction of steps with every error axis inside `n` marginal stds.
    pub fn fraction_within_sigmas(&self, n: f64) -> f64 {
        if self.steps.is_empty() {
            return 0.0;
        }
        self.steps.iter().filter(|s| s.within_sigmas(n)).count() as f64 / self.steps.len() as f64
    }
}

/// First time the normalized error stays above the threshold for a full
/// window.
fn detect_divergence(steps: &[StepMetric], cfg: &MetricsConfig) -> Option<f64> {
    let mut start: Option<f64> = None;
    for s in steps {
        if s.nees > cfg.divergence_nees {
            let t0 = *start.get_or_insert(s.t);
            if s.t - t0 >= cfg.divergence_window_s {
                return Some(t0);
            }
        } else {
            start = None;
        }
    }
    None
}

/// Cross-run mean of the normalized error per step, with the two-sided
/// acceptance band for the mean of `runs` chi-square variables.
#[derive(Debug, Clone, PartialEq)]
pub struct NeesAggregate {
    pub t: Vec<f64>,
    pub mean: Vec<f64>,
    pub runs: usize,
    pub lo: f64,
    pub hi: f64,
    pub fraction_within: f64,
}

pub fn aggregate_nees(runs: &[RunMetrics], dof: f64, confidence: f64) -> Option<NeesAggregate> {
    if runs.is_empty() {
        return None;
    }
    let len = runs.iter().map(|r| r.steps.len()).min()?;
    if len == 0 {
        return None;
    }
    let alpha = (1.0 - confidence) / 2.0;
    let lo = averaged_chi_square_bound(alpha, dof, runs.len());
    let hi = averaged_chi_square_bound(1.0 - alpha, dof, runs.len());

    let mut t = Vec::with_capacity(len);
    let mut mean = Vec::with_capacity(len);
    let mut inside = 0usize;
    for i in 0..len {
        let m = runs.iter().map(|r| r.steps[i].nees).sum::<f64>() / runs.len() as f64;
        if (lo..=hi).contains(&m) {
            inside += 1;
        }
        t.push(runs[0].steps[i].t);
        mean.push(m);
    }
    Some(NeesAggregate {
        t,
        mean,
        runs: runs.len(),
        lo,
        hi,
        fraction_within: inside as f64 / len as f64,
    })
}

pub fn write_steps_csv(path: &Path, metrics: &RunMetrics) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_path(path)?;
    for s in &metrics.steps {
        w.serialize(StepRow {
            frame: s.frame,
            t: s.t,
            nees: s.nees,
            e_px: s.err[0],
            e_py: s.err[1],
            e_pz: s.err[2],
            e_ax: s.err[3],
            e_ay: s.err[4],
            e_az: s.err[5],
            s_px: s.sigma[0],
            s_py: s.sigma[1],
            s_pz: s.sigma[2],
            s_ax: s.sigma[3],
            s_ay: s.sigma[4],
            s_az: s.sigma[5],
            frame_ms: s.frame_ms,
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_aggregate_csv(path: &Path, agg: &NeesAggregate) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_path(path)?;
    for i in 0..agg.t.len() {
        w.serialize(AggregateRow {
            step: i as u64,
            t: agg.t[i],
            mean_nees: agg.mean[i],
            lo: agg.lo,
            hi: agg.hi,
        })?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct StepRow {
    frame: u64,
    t: f64,
    nees: f64,
    e_px: f64,
    e_py: f64,
    e_pz: f64,
    e_ax: f64,
    e_ay: f64,
    e_az: f64,
    s_px: f64,
    s_py: f64,
    s_pz: f64,
    s_ax: f64,
    s_ay: f64,
    s_az: f64,
    frame_ms: f64,
}

#[derive(Serialize, Deserialize)]
struct AggregateRow {
    step: u64,
    t: f64,
    mean_nees: f64,
    lo: f64,
    hi: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Quaternion;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_quaternion(rng: &mut ChaCha8Rng) -> Quaternion {
        let v = Vector3::new(rng.random(), rng.random(), rng.random());
        Quaternion::exp(v * 2.0)
    }

    fn random_spd6(rng: &mut ChaCha8Rng, scale: f64) -> DMatrix<f64> {
        let a = DMatrix::from_fn(6, 6, |_, _| rng.sample::<f64, _>(StandardNormal));
        &a * a.transpose() * scale + DMatrix::identity(6, 6) * (scale * 0.1)
    }

    /// 7x6 map from a tangent perturbation to pose coordinates; inverse of
    /// the measurement-side reduction, so induced covariances round-trip.
    fn coords_jacobian(q: &Quaternion) -> DMatrix<f64> {
        let l = q.left_matrix();
        let mut b = DMatrix::zeros(7, 6);
        b.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&Matrix3::identity());
        for c in 0..3 {
            for r in 0..4 {
                b[(3 + r, 3 + c)] = 0.5 * l[(r, 1 + c)];
            }
        }
        b
    }

    #[test]
    fn attitude_error_matches_the_rotation_vector() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let q = random_quaternion(&mut rng);
            let delta = Vector3::new(rng.random(), rng.random(), rng.random()) * 1e-3;
            let truth = Frame::new(Vector3::zeros(), q);
            let est = Frame::new(Vector3::zeros(), q.compose(&Quaternion::exp(delta)));
            let (e, _) = pose_error(&truth, &est, &DMatrix::identity(7, 7));
            let e_att = Vector3::new(e[3], e[4], e[5]);
            assert!((e_att - delta).norm() < 1e-9, "{:?} vs {:?}", e_att, delta);
        }
    }

    #[test]
    fn nees_of_consistent_samples_averages_the_dof() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let q = random_quaternion(&mut rng);
        let truth = Frame::new(Vector3::new(0.3, -0.2, 1.0), q);
        let sigma6 = random_spd6(&mut rng, 1e-4);
        let b = coords_jacobian(&q);
        let p77 = &b * &sigma6 * b.transpose();
        let chol = Cholesky::new(sigma6.clone()).unwrap();
        let cfg = MetricsConfig::default();

        let n = 4000;
        let mut sum = 0.0;
        for _ in 0..n {
            let z = DVector::from_fn(6, |_, _| rng.sample::<f64, _>(StandardNormal));
            let d = chol.l() * z;
            let est = Frame::new(
                truth.t + Vector3::new(d[0], d[1], d[2]),
                q.compose(&Quaternion::exp(Vector3::new(d[3], d[4], d[5]))),
            );
            let m = score_step(0, 0.0, &truth, &est, &p77, &cfg, 0.0).unwrap();
            sum += m.nees;
        }
        let mean = sum / n as f64;
        assert!((mean - 6.0).abs() < 0.25, "mean normalized error {mean}");
    }

    #[test]
    fn scaling_the_covariance_scales_the_score_inversely() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let q = random_quaternion(&mut rng);
        let truth = Frame::new(Vector3::zeros(), q);
        let est = Frame::new(
            Vector3::new(2e-3, -1e-3, 5e-4),
            q.compose(&Quaternion::exp(Vector3::new(1e-3, -2e-3, 4e-4))),
        );
        let b = coords_jacobian(&q);
        let p77 = &b * random_spd6(&mut rng, 1e-4) * b.transpose();
        let cfg = MetricsConfig::default();
        let base = score_step(0, 0.0, &truth, &est, &p77, &cfg, 0.0).unwrap();
        let scaled = score_step(0, 0.0, &truth, &est, &(&p77 * 4.0), &cfg, 0.0).unwrap();
        assert_relative_eq!(scaled.nees, base.nees / 4.0, epsilon = 1e-10);
        for i in 0..6 {
            assert_relative_eq!(scaled.sigma[i], base.sigma[i] * 2.0, epsilon = 1e-12);
        }

        let inflated = MetricsConfig {
            truth_precision: Some((1e-3, 1e-3)),
            ..cfg
        };
        let soft = score_step(0, 0.0, &truth, &est, &p77, &inflated, 0.0).unwrap();
        assert!(soft.nees < base.nees);
    }

    #[test]
    fn alignment_recovers_a_planted_similarity() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let est: Vec<Vector3<f64>> = (0..60)
            .map(|_| Vector3::new(rng.random(), rng.random(), rng.random()) * 4.0)
            .collect();
        let rot = random_quaternion(&mut rng).rotation_matrix();
        let scale = 1.37;
        let trans = Vector3::new(0.4, -2.0, 0.9);
        let truth: Vec<Vector3<f64>> = est.iter().map(|p| rot * p * scale + trans).collect();

        let a = similarity_align(&est, &truth).unwrap();
        assert_relative_eq!(a.scale, scale, epsilon = 1e-12);
        assert!((a.rotation - rot).norm() < 1e-12);
        assert!((a.translation - trans).norm() < 1e-12);
        assert!(a.rmse < 1e-12);
        assert!(a.rel_shape_err < 1e-12);

        // a uniformly shrunken estimate aligns with the inverse scale and
        // no shape residual
        let shrunk: Vec<Vector3<f64>> = truth.iter().map(|p| p * 0.7).collect();
        let b = similarity_align(&shrunk, &truth).unwrap();
        assert_relative_eq!(b.scale, 1.0 / 0.7, epsilon = 1e-12);
        assert!(b.rel_shape_err < 1e-12);

        assert!(similarity_align(&est[..2], &truth[..2]).is_none());
    }

    fn flat_steps(pattern: &[(f64, f64)], dt: f64) -> Vec<StepMetric> {
        let mut steps = Vec::new();
        let mut frame = 0u64;
        for &(nees, dur) in pattern {
            let n = (dur / dt).round() as usize;
            for _ in 0..n {
                steps.push(StepMetric {
                    frame,
                    t: frame as f64 * dt,
                    nees,
                    err: [0.0; 6],
                    sigma: [1.0; 6],
                    frame_ms: 0.0,
                });
                frame += 1;
            }
        }
        steps
    }

    #[test]
    fn divergence_requires_a_sustained_excursion() {
        let cfg = MetricsConfig::default();
        let short = flat_steps(&[(5.0, 2.0), (900.0, 0.3), (5.0, 2.0)], 0.02);
        assert_eq!(RunMetrics::from_steps(short, 0, &cfg).diverged_at, None);

        let long = flat_steps(&[(5.0, 2.0), (900.0, 0.8), (5.0, 1.0)], 0.02);
        let m = RunMetrics::from_steps(long, 0, &cfg);
        assert_relative_eq!(m.diverged_at.unwrap(), 2.0, epsilon = 1e-9);
    }

    #[test]
    fn aggregate_band_contains_the_expected_mean() {
        let cfg = MetricsConfig::default();
        let runs: Vec<RunMetrics> = (0..20)
            .map(|_| RunMetrics::from_steps(flat_steps(&[(6.0, 1.0)], 0.02), 0, &cfg))
            .collect();
        let agg = aggregate_nees(&runs, 6.0, 0.99).unwrap();
        assert!(agg.lo < 6.0 && 6.0 < agg.hi);
        assert_relative_eq!(agg.fraction_within, 1.0);
        assert!(agg.hi < crate::stats::chi_square_quantile(0.995, 6.0));
    }
}
