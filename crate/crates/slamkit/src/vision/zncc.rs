//! Zero-mean normalized cross correlation and template search.
//!
//! `search_match` runs the two-level scheme: a half-resolution scan finds a
//! promising peak whose full-resolution score becomes the pruning floor,
//! then the full-resolution pass covers the whole region with candidate
//! scores abandoned early once a Cauchy-Schwarz bound on the remaining
//! rows shows they cannot reach the floor. Pruning only ever discards
//! candidates that are provably below the running maximum, so the result
//! (pixel and score) is identical to the exhaustive scan whenever the true
//! maximum clears the acceptance threshold. Candidate means and variances
//! come from the frame's integral image.

use nalgebra::Vector2;

use super::image::{GrayImage, Patch, PixelRect};
use super::integral::IntegralImage;

/// Central energy below which a patch counts as textureless; its ZNCC
/// score is defined as 0.
const VAR_FLOOR: f64 = 1e-9;

/// Slack added to the partial-correlation bound, on the score scale, so
/// floating-point rounding can never prune the true maximum.
const BOUND_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Match {
    pub pixel: Vector2<f64>,
    pub score: f64,
}

/// Plain patch-against-patch ZNCC in [-1, 1]. Zero-variance input scores 0.
pub fn zncc(a: &Patch, b: &Patch) -> f64 {
    assert_eq!(a.side, b.side, "patch sides differ");
    let n = (a.side * a.side) as f64;
    let (av, bv) = (a.values(), b.values());
    let ma = av.iter().sum::<f64>() / n;
    let mb = bv.iter().sum::<f64>() / n;
    let mut cc = 0.0;
    let mut ea = 0.0;
    let mut eb = 0.0;
    for (&x, &y) in av.iter().zip(bv) {
        cc += (x - ma) * (y - mb);
        ea += (x - ma) * (x - ma);
        eb += (y - mb) * (y - mb);
    }
    if ea <= VAR_FLOOR || eb <= VAR_FLOOR {
        return 0.0;
    }
    (cc / (ea.sqrt() * eb.sqrt())).clamp(-1.0, 1.0)
}

/// Template statistics shared by every candidate evaluation.
struct TemplatePrep {
    side: u32,
    values: Vec<f64>,
    mean: f64,
    /// Central energy sum((b - mean)^2) over the whole template.
    energy: f64,
    /// Per-row raw sums.
    row_sums: Vec<f64>,
    /// suffix_energy[r] = central energy over rows r.., length side + 1.
    suffix_energy: Vec<f64>,
}

impl TemplatePrep {
    fn new(t: &Patch) -> Self {
        let side = t.side as usize;
        let n = (side * side) as f64;
        let values: Vec<f64> = t.values().to_vec();
        let mean = values.iter().sum::<f64>() / n;
        let mut row_sums = vec![0.0; side];
        let mut row_energy = vec![0.0; side];
        for r in 0..side {
            for i in 0..side {
                let v = values[r * side + i];
                row_sums[r] += v;
                row_energy[r] += (v - mean) * (v - mean);
            }
        }
        let mut suffix_energy = vec![0.0; side + 1];
        for r in (0..side).rev() {
            suffix_energy[r] = suffix_energy[r + 1] + row_energy[r];
        }
        Self {
            side: t.side,
            values,
            mean,
            energy: suffix_energy[0],
            row_sums,
            suffix_energy,
        }
    }
}

/// ZNCC of the template against the window centered at (cx, cy). With a
/// floor given, the row loop aborts (returning None) as soon as the
/// remaining-rows bound proves the score cannot reach it. A completed
/// evaluation is arithmetic-identical regardless of the floor.
fn evaluate(
    img: &GrayImage,
    integral: &IntegralImage,
    prep: &TemplatePrep,
    cx: i32,
    cy: i32,
    abort_below: Option<f64>,
) -> Option<f64> {
    let side = prep.side;
    let half = side as i32 / 2;
    let x0 = (cx - half) as u32;
    let y0 = (cy - half) as u32;
    let n = (side * side) as f64;

    let sa = integral.sum_rect(x0, y0, x0 + side, y0 + side) as f64;
    let saa = integral.sumsq_rect(x0, y0, x0 + side, y0 + side) as f64;
    let mean_a = sa / n;
    let energy_a = saa - sa * sa / n;
    if energy_a <= VAR_FLOOR {
        return Some(0.0);
    }
    let norm = (energy_a * prep.energy).sqrt();

    let s = side as usize;
    let mut cc = 0.0;
    for r in 0..s {
        let mut row_ab = 0.0;
        let mut row_a = 0.0;
        let y = y0 + r as u32;
        for i in 0..s {
            let av = img.get(x0 + i as u32, y) as f64;
            row_ab += av * prep.values[r * s + i];
            row_a += av;
        }
        cc += row_ab - mean_a * prep.row_sums[r] - prep.mean * row_a
            + side as f64 * mean_a * prep.mean;

        if let Some(floor) = abort_below {
            if r + 1 < s {
                let ys = y0 + r as u32 + 1;
                let sa_s = integral.sum_rect(x0, ys, x0 + side, y0 + side) as f64;
                let saa_s = integral.sumsq_rect(x0, ys, x0 + side, y0 + side) as f64;
                let rows_left = (side as usize - r - 1) as f64;
                let ea_s = (saa_s - 2.0 * mean_a * sa_s + side as f64 * rows_left * mean_a * mean_a)
                    .max(0.0);
                let bound = (cc + (ea_s * prep.suffix_energy[r + 1]).sqrt()) / norm + BOUND_SLACK;
                if bound < floor {
                    return None;
                }
            }
        }
    }
    Some((cc / norm).clamp(-1.0, 1.0))
}

/// Centers whose template window lies fully inside the image.
fn clip_to_valid_centers(region: PixelRect, img: &GrayImage, side: u32) -> PixelRect {
    let half = side as i32 / 2;
    region.intersect(&PixelRect::new(
        half,
        half,
        img.width as i32 - (side as i32 - half),
        img.height as i32 - (side as i32 - half),
    ))
}

fn scan(
    img: &GrayImage,
    integral: &IntegralImage,
    prep: &TemplatePrep,
    candidates: PixelRect,
    threshold: f64,
    prune_floor: Option<f64>,
) -> Option<Match> {
    if prep.energy <= VAR_FLOOR {
        // textureless template: every candidate scores 0 by definition
        return if 0.0 >= threshold {
            Some(Match {
                pixel: Vector2::new(candidates.x0 as f64, candidates.y0 as f64),
                score: 0.0,
            })
        } else {
            None
        };
    }
    let mut best: Option<Match> = None;
    for cy in candidates.y0..=candidates.y1 {
        for cx in candidates.x0..=candidates.x1 {
            let floor = prune_floor.map(|f| best.map_or(f, |b| f.max(b.score)));
            if let Some(score) = evaluate(img, integral, prep, cx, cy, floor) {
                if best.map_or(true, |b| score > b.score) {
                    best = Some(Match {
                        pixel: Vector2::new(cx as f64, cy as f64),
                        score,
                    });
                }
            }
        }
    }
    best.filter(|b| b.score >= threshold)
}

/// Hierarchical bounded search. Returns the exhaustive full-resolution
/// ZNCC argmax over `region` (template centers), or None when no
/// candidate reaches `threshold`.
pub fn search_match(
    img: &GrayImage,
    integral: &IntegralImage,
    half_img: &GrayImage,
    template: &Patch,
    region: PixelRect,
    threshold: f64,
) -> Option<Match> {
    let candidates = clip_to_valid_centers(region, img, template.side);
    if candidates.is_empty() {
        return None;
    }
    let prep = TemplatePrep::new(template);

    // coarse level: best half-resolution position seeds the pruning floor
    let mut floor = threshold;
    if template.side >= 6 {
        let half_t = template.half_resolution();
        let hcand = clip_to_valid_centers(
            PixelRect::new(
                candidates.x0 / 2,
                candidates.y0 / 2,
                (candidates.x1 + 1) / 2,
                (candidates.y1 + 1) / 2,
            ),
            half_img,
            half_t.side,
        );
        let mut seed: Option<(i32, i32, f64)> = None;
        for cy in hcand.y0..=hcand.y1 {
            for cx in hcand.x0..=hcand.x1 {
                if let Some(p) = half_img.patch_at(cx, cy, half_t.side) {
                    let s = zncc(&half_t, &p);
                    if seed.map_or(true, |(_, _, bs)| s > bs) {
                        seed = Some((cx, cy, s));
                    }
                }
            }
        }
        if let Some((hx, hy, _)) = seed {
            let fx = (2 * hx).clamp(candidates.x0, candidates.x1);
            let fy = (2 * hy).clamp(candidates.y0, candidates.y1);
            if let Some(s0) = evaluate(img, integral, &prep, fx, fy, None) {
                floor = floor.max(s0);
            }
        }
    }

    scan(img, integral, &prep, candidates, threshold, Some(floor))
}

/// Exhaustive full-resolution reference scan, same arithmetic as
/// `search_match` without pruning. Kept public as the equivalence oracle.
pub fn exhaustive_match(
    img: &GrayImage,
    integral: &IntegralImage,
    template: &Patch,
    region: PixelRect,
    threshold: f64,
) -> Option<Match> {
    let candidates = clip_to_valid_centers(region, img, template.side);
    if candidates.is_empty() {
        return None;
    }
    let prep = TemplatePrep::new(template);
    scan(img, integral, &prep, candidates, threshold, None)
}
