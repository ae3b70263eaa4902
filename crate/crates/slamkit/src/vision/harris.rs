//! Harris corner detection restricted to a region of interest.
//!
//! The detector is built for single-feature extraction in small regions:
//! derivatives use the minimal [-1, 0, 1] mask, the structure tensor is
//! smoothed by a constant square window evaluated through integral planes
//! local to the ROI, and only the single response maximum is returned, so
//! there is no thresholding or non-maximum suppression pass.

use nalgebra::Vector2;
use thiserror::Error;

use super::image::{GrayImage, PixelRect};
use super::integral::LocalIntegral;

#[derive(Debug, Error, PartialEq)]
pub enum RoiError {
    #[error("ROI {0:?} degenerate: smaller than the smoothing window")]
    TooSmall(PixelRect),
    #[error("ROI {0:?} violates the image margin of {1} px")]
    OutsideMargin(PixelRect, i32),
}

#[derive(Debug, Clone, PartialEq)]
pub struct HarrisParams {
    /// Side of the constant smoothing window, odd.
    pub window: u32,
    /// Classic response weight: det - k * trace^2.
    pub k: f64,
    /// Minimal eligible response; the ROI maximum is dropped below this.
    pub min_response: f64,
}

impl Default for HarrisParams {
    fn default() -> Self {
        Self {
            window: 5,
            k: 0.04,
            min_response: 1e4,
        }
    }
}

impl HarrisParams {
    /// Pixels needed beyond the ROI: window radius plus one for the
    /// derivative mask.
    pub fn margin(&self) -> i32 {
        self.window as i32 / 2 + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Corner {
    pub pixel: Vector2<f64>,
    pub response: f64,
}

/// Single strongest Harris response inside `roi`, or None when the whole
/// ROI is below the eligibility floor. Ties go to the first pixel in
/// row-major order.
pub fn harris_best(
    img: &GrayImage,
    roi: PixelRect,
    params: &HarrisParams,
) -> Result<Option<Corner>, RoiError> {
    let window = params.window as i32;
    let wr = window / 2;
    let margin = params.margin();
    if roi.width() < window || roi.height() < window {
        return Err(RoiError::TooSmall(roi));
    }
    if roi.x0 < margin
        || roi.y0 < margin
        || roi.x1 + margin >= img.width as i32
        || roi.y1 + margin >= img.height as i32
    {
        return Err(RoiError::OutsideMargin(roi, margin));
    }

    // derivative grids over the ROI dilated by the window radius
    let ex0 = roi.x0 - wr;
    let ey0 = roi.y0 - wr;
    let ew = (roi.width() + 2 * wr) as usize;
    let eh = (roi.height() + 2 * wr) as usize;
    let mut ixx = vec![0i64; ew * eh];
    let mut iyy = vec![0i64; ew * eh];
    let mut ixy = vec![0i64; ew * eh];
    for gy in 0..eh {
        let y = (ey0 + gy as i32) as u32;
        for gx in 0..ew {
            let x = (ex0 + gx as i32) as u32;
            let dx = img.get(x + 1, y) as i64 - img.get(x - 1, y) as i64;
            let dy = img.get(x, y + 1) as i64 - img.get(x, y - 1) as i64;
            ixx[gy * ew + gx] = dx * dx;
            iyy[gy * ew + gx] = dy * dy;
            ixy[gy * ew + gx] = dx * dy;
        }
    }
    let sxx = LocalIntegral::build(&ixx, ew, eh);
    let syy = LocalIntegral::build(&iyy, ew, eh);
    let sxy = LocalIntegral::build(&ixy, ew, eh);

    let mut best: Option<Corner> = None;
    for y in roi.y0..=roi.y1 {
        let ly = (y - roi.y0) as usize;
        for x in roi.x0..=roi.x1 {
            let lx = (x - roi.x0) as usize;
            let (x1, y1) = (lx + window as usize, ly + window as usize);
            let a = sxx.sum_rect(lx, ly, x1, y1);
            let b = syy.sum_rect(lx, ly, x1, y1);
            let c = sxy.sum_rect(lx, ly, x1, y1);
            let det = a * b - c * c;
            let tr = a + b;
            let response = det as f64 - params.k * (tr * tr) as f64;
            if best.map_or(true, |cur| response > cur.response) {
                best = Some(Corner {
                    pixel: Vector2::new(x as f64, y as f64),
                    response,
                });
            }
        }
    }
    Ok(best.filter(|c| c.response >= params.min_response))
}
