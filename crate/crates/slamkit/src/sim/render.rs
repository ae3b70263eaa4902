//! Frame rendering: each visible world point paints a small textured disc
//! lying in its wall plane, sampled per pixel by ray-plane intersection, so
//! appearance changes with viewpoint exactly like a real planar patch.

use nalgebra::{Vector2, Vector3};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::geometry::{Frame, PinholeIntrinsics};
use crate::sim::world::World;
use crate::vision::GrayImage;

#[derive(Debug, Clone, PartialEq)]
pub struct RenderParams {
    /// Physical disc radius on the wall (m).
    pub blob_radius_m: f64,
    pub background: u8,
    /// Std of the sub-pixel jitter applied to each blob center (px);
    /// the emitted label tracks the jittered center.
    pub pixel_noise: f64,
    /// Points closer than the margin to the image border are not drawn.
    pub margin: f64,
}

impl Default for RenderParams {
    fn default() -> Self {
        Self {
            blob_radius_m: 0.07,
            background: 128,
            pixel_noise: 0.0,
            margin: 2.0,
        }
    }
}

/// Blob-to-world association truth for one rendered frame.
#[derive(Debug, Clone, PartialEq)]
pub struct PointLabel {
    pub id: u64,
    /// Exact projection of the (jittered) blob center.
    pub pixel: Vector2<f64>,
    pub depth: f64,
}

/// Deterministic in-plane texture: a compact bright or dark spot over a
/// faint seed-keyed ripple. The spot concentrates the gradient energy at
/// the center so the detector peak coincides with the projected point;
/// the ripple keeps patches from different points distinguishable.
/// `u`, `v` in units of the radius.
fn texture(seed: u64, u: f64, v: f64) -> u8 {
    let angle = (seed % 4096) as f64 / 4096.0 * std::f64::consts::TAU;
    let (s, c) = angle.sin_cos();
    let ru = c * u - s * v;
    let rv = s * u + c * v;
    let sign = if seed & 4096 == 0 { 1.0 } else { -1.0 };
    let r2 = u * u + v * v;
    let spot = (-r2 / (2.0 * 0.13 * 0.13)).exp();
    let phase = (seed >> 13 & 0xff) as f64 * 0.245;
    let ripple = ((3.1 * ru + 5.0 * rv) + phase).sin()
        + 0.6 * ((7.3 * rv - 2.2 * ru) - 1.7 * phase).cos();
    let fade = ((1.0 - r2.sqrt()) / 0.25).clamp(0.0, 1.0);
    let val = 128.0 + 15.0 * ripple * fade * (1.0 - spot) + 112.0 * sign * spot;
    val.clamp(0.0, 255.0) as u8
}

/// Orthonormal in-plane basis for a wall normal, deterministic.
fn plane_basis(normal: Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let helper = if normal.x.abs() < 0.9 {
        Vector3::x()
    } else {
        Vector3::y()
    };
    let e1 = normal.cross(&helper).normalize();
    let e2 = normal.cross(&e1);
    (e1, e2)
}

/// Renders the world from a camera pose. Returns the image and the labels
/// of every drawn blob, in world-point id order.
pub fn render_frame(
    world: &World,
    cam: &Frame,
    intr: &PinholeIntrinsics,
    params: &RenderParams,
    rng: &mut ChaCha8Rng,
) -> (GrayImage, Vec<PointLabel>) {
    let mut img = GrayImage::new(intr.width, intr.height);
    for y in 0..intr.height {
        for x in 0..intr.width {
            img.set(x, y, params.background);
        }
    }

    let mut labels = Vec::new();
    for wp in &world.points {
        let (e1, e2) = plane_basis(wp.normal);
        let mut center = wp.position;
        if params.pixel_noise > 0.0 {
            // jitter in the wall plane, scaled to pixels at this depth
            let depth0 = cam.to_local(wp.position).z;
            if depth0 <= 0.0 {
                continue;
            }
            let scale = params.pixel_noise * depth0 / intr.fu;
            let n1: f64 = StandardNormal.sample(rng);
            let n2: f64 = StandardNormal.sample(rng);
            center += e1 * (n1 * scale) + e2 * (n2 * scale);
        }

        let local = cam.to_local(center);
        let Ok(proj) = intr.project(local) else {
            continue;
        };
        if !intr.contains(proj.pixel, params.margin) {
            continue;
        }

        // conservative pixel radius for the bounding box
        let r_px = (intr.fu.max(intr.fv) * params.blob_radius_m / proj.depth).ceil() as i32 + 2;
        let cx = proj.pixel.x.round() as i32;
        let cy = proj.pixel.y.round() as i32;
        let r2 = params.blob_radius_m * params.blob_radius_m;

        let denom_floor = 1e-9;
        for py in (cy - r_px).max(0)..=(cy + r_px).min(intr.height as i32 - 1) {
            for px in (cx - r_px).max(0)..=(cx + r_px).min(intr.width as i32 - 1) {
                // camera ray through the pixel center, intersected with
                // the wall plane
                let ray_cam = Vector3::new(
                    (px as f64 - intr.u0) / intr.fu,
                    (py as f64 - intr.v0) / intr.fv,
                    1.0,
                );
                let ray = cam.q.rotate(ray_cam);
                let denom = wp.normal.dot(&ray);
                if denom.abs() < denom_floor {
                    continue;
                }
                let s = wp.normal.dot(&(center - cam.t)) / denom;
                if s <= 0.0 {
                    continue;
                }
                let hit = cam.t + ray * s;
                let d = hit - center;
                if d.norm_squared() > r2 {
                    continue;
                }
                let u = e1.dot(&d) / params.blob_radius_m;
                let v = e2.dot(&d) / params.blob_radius_m;
                img.set(px as u32, py as u32, texture(wp.texture_seed, u, v));
            }
        }

        labels.push(PointLabel {
            id: wp.id,
            pixel: proj.pixel,
            depth: proj.depth,
        });
    }
    (img, labels)
}

/// Association truth without rendering: exact projections of every point
/// visible with `margin` pixels to spare.
pub fn project_labels(
    world: &World,
    cam: &Frame,
    intr: &PinholeIntrinsics,
    margin: f64,
) -> Vec<PointLabel> {
    world
        .visible_from(cam, intr, margin)
        .into_iter()
        .map(|(id, pixel, depth)| PointLabel { id, pixel, depth })
        .collect()
}
