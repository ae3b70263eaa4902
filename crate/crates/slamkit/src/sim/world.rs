//! Synthetic indoor scene: feature points pinned to the inner faces of a
//! rectangular room, each carrying a plane normal and a texture seed.

use nalgebra::{Vector2, Vector3};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::geometry::{Frame, PinholeIntrinsics};

#[derive(Debug, Clone, PartialEq)]
pub struct WorldPoint {
    pub id: u64,
    pub position: Vector3<f64>,
    /// Inward-facing normal of the wall the point sits on.
    pub normal: Vector3<f64>,
    pub texture_seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub points: Vec<WorldPoint>,
    /// Room half extents; walls at ±x, ±y, ±z.
    pub half_extent: Vector3<f64>,
}

impl World {
    /// Samples `n` points over the six faces, area-weighted, with a small
    /// inward offset so blobs never clip through walls.
    pub fn generate(n: usize, half_extent: Vector3<f64>, seed: u64) -> World {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = half_extent;
        // (axis, sign) faces with their areas
        let faces = [
            (0usize, 1.0f64),
            (0, -1.0),
            (1, 1.0),
            (1, -1.0),
            (2, 1.0),
            (2, -1.0),
        ];
        let areas: Vec<f64> = faces
            .iter()
            .map(|&(a, _)| {
                let (u, v) = other_axes(a);
                4.0 * h[u] * h[v]
            })
            .collect();
        let total: f64 = areas.iter().sum();

        let mut points = Vec::with_capacity(n);
        for id in 0..n as u64 {
            let mut pick = rng.random_range(0.0..total);
            let mut face = 0;
            for (i, a) in areas.iter().enumerate() {
                if pick < *a {
                    face = i;
                    break;
                }
                pick -= a;
            }
            let (axis, sign) = faces[face];
            let (u, v) = other_axes(axis);
            let mut p = Vector3::zeros();
            p[axis] = sign * h[axis];
            p[u] = rng.random_range(-0.9 * h[u]..0.9 * h[u]);
            p[v] = rng.random_range(-0.9 * h[v]..0.9 * h[v]);
            let mut normal = Vector3::zeros();
            normal[axis] = -sign;
            points.push(WorldPoint {
                id,
                position: p,
                normal,
                texture_seed: rng.random(),
            });
        }
        World {
            points,
            half_extent,
        }
    }

    /// Points in front of the camera that project inside the image with
    /// `margin` pixels to spare, as (id, pixel, depth).
    pub fn visible_from(
        &self,
        cam: &Frame,
        intr: &PinholeIntrinsics,
        margin: f64,
    ) -> Vec<(u64, Vector2<f64>, f64)> {
        let mut out = Vec::new();
        for wp in &self.points {
            let local = cam.to_local(wp.position);
            let Ok(proj) = intr.project(local) else {
                continue;
            };
            let px = proj.pixel;
            if px.x >= margin
                && px.y >= margin
                && px.x <= intr.width as f64 - 1.0 - margin
                && px.y <= intr.height as f64 - 1.0 - margin
            {
                out.push((wp.id, px, proj.depth));
            }
        }
        out
    }

    /// Smallest visible-point count over a set of poses; the scene audit.
    pub fn min_visible(&self, poses: &[Frame], intr: &PinholeIntrinsics, margin: f64) -> usize {
        poses
            .iter()
            .map(|p| self.visible_from(p, intr, margin).len())
            .min()
            .unwrap_or(0)
    }
}

fn other_axes(axis: usize) -> (usize, usize) {
    match axis {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    }
}
