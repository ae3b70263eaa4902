//! Predicted appearance: warps a landmark's stored template into the
//! current view through the homography induced by a fronto-parallel plane
//! at the landmark estimate.

use nalgebra::{Matrix3, Vector2, Vector3};

use crate::geometry::{Frame, PinholeIntrinsics};

use super::image::Patch;

#[derive(Debug, Clone)]
pub struct AppearancePrediction {
    pub patch: Patch,
    /// False when the induced homography was degenerate and the stored
    /// patch was returned unwarped.
    pub warped: bool,
}

fn intrinsic_matrix(k: &PinholeIntrinsics) -> Matrix3<f64> {
    Matrix3::new(k.fu, 0.0, k.u0, 0.0, k.fv, k.v0, 0.0, 0.0, 1.0)
}

fn bilinear(p: &Patch, x: f64, y: f64) -> f64 {
    let max = (p.side - 1) as f64;
    let x = x.clamp(0.0, max);
    let y = y.clamp(0.0, max);
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let xi = x0 as u32;
    let yi = y0 as u32;
    let x1 = (xi + 1).min(p.side - 1);
    let y1 = (yi + 1).min(p.side - 1);
    let v00 = p.get(xi, yi);
    let v10 = p.get(x1, yi);
    let v01 = p.get(xi, y1);
    let v11 = p.get(x1, y1);
    v00 * (1.0 - fx) * (1.0 - fy) + v10 * fx * (1.0 - fy) + v01 * (1.0 - fx) * fy + v11 * fx * fy
}

/// Warps `stored` (captured at `ref_pose` around `ref_pixel`) into the
/// current view, producing the matching template centered on `cur_pixel`.
/// The supporting plane passes through the landmark estimate and faces the
/// reference camera along its optical axis.
pub fn predict_appearance(
    stored: &Patch,
    ref_pose: &Frame,
    ref_pixel: Vector2<f64>,
    cur_pose: &Frame,
    cur_pixel: Vector2<f64>,
    landmark: Vector3<f64>,
    k: &PinholeIntrinsics,
) -> AppearancePrediction {
    let fallback = || AppearancePrediction {
        patch: stored.clone(),
        warped: false,
    };

    let depth_ref = ref_pose.to_local(landmark).z;
    if depth_ref <= 1e-6 {
        return fallback();
    }

    // camera-to-camera transform: x_cur = r * x_ref + t
    let r_ref = ref_pose.q.rotation_matrix();
    let r_cur = cur_pose.q.rotation_matrix();
    let r = r_cur.transpose() * r_ref;
    let t = r_cur.transpose() * (ref_pose.t - cur_pose.t);

    let n = Vector3::new(0.0, 0.0, 1.0);
    let km = intrinsic_matrix(k);
    let k_inv = Matrix3::new(
        1.0 / k.fu,
        0.0,
        -k.u0 / k.fu,
        0.0,
        1.0 / k.fv,
        -k.v0 / k.fv,
        0.0,
        0.0,
        1.0,
    );
    // ray through a ref pixel meets the plane n'x = depth_ref at
    // x = d * inv(K) u / (n' inv(K) u); pushing it through (r, t) gives the
    // plus-sign form of the induced homography
    let h = km * (r + t * n.transpose() / depth_ref) * k_inv;
    let h_inv = match h.try_inverse() {
        Some(inv) if h.determinant().abs() > 1e-9 => inv,
        _ => return fallback(),
    };

    let side = stored.side;
    let half = (side / 2) as f64;
    let mut out = Patch::new(side);
    for j in 0..side {
        for i in 0..side {
            let dst = Vector3::new(
                cur_pixel.x + i as f64 - half,
                cur_pixel.y + j as f64 - half,
                1.0,
            );
            let src = h_inv * dst;
            if src.z.abs() < 1e-9 {
                return fallback();
            }
            let sx = src.x / src.z - ref_pixel.x + half;
            let sy = src.y / src.z - ref_pixel.y + half;
            out.set(i, j, bilinear(stored, sx, sy));
        }
    }
    AppearancePrediction { patch: out, warped: true }
}
