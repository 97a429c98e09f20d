//! Depth-buffered triangle rasterizer with perspective-correct attributes.

use super::geom::{dot, sub, V3};

/// Pinhole camera looking at the origin.
#[derive(Clone, Copy, Debug)]
pub struct Camera {
    pub eye: V3,
    pub right: V3,
    pub up: V3,
    pub forward: V3,
    pub focal_px: f64,
    pub width: usize,
    pub height: usize,
}

impl Camera {
    /// Camera-frame coordinates `(x right, y up, depth)`.
    fn to_view(&self, p: V3) -> V3 {
        let d = sub(p, self.eye);
        [dot(d, self.right), dot(d, self.up), dot(d, self.forward)]
    }
}

/// A fragment that won the depth test: the model-space surface point and
/// the triangle that produced it.
#[derive(Clone, Copy, Debug)]
pub struct Fragment {
    pub point: V3,
    pub tri: usize,
}

pub struct FrameBuffer {
    /// 1/depth of the nearest fragment, 0 where empty.
    pub inv_depth: Vec<f64>,
    pub frags: Vec<Option<Fragment>>,
}

impl FrameBuffer {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            inv_depth: vec![0.0; width * height],
            frags: vec![None; width * height],
        }
    }
}

/// Rasterizes triangle `id` with vertices in model space. Pixel centres are
/// sampled at `(x + 0.5, y + 0.5)`; an edge is inclusive when it is a top or
/// left edge, so abutting triangles never share a pixel.
pub fn draw(fb: &mut FrameBuffer, cam: &Camera, v: &[V3; 3], id: usize) {
    let view = v.map(|p| cam.to_view(p));
    // the target never straddles the camera plane; skip anything behind it
    if view.iter().any(|p| p[2] <= 1e-6) {
        return;
    }
    let cx = cam.width as f64 / 2.0;
    let cy = cam.height as f64 / 2.0;
    let s: [[f64; 2]; 3] = view.map(|p| [cx + cam.focal_px * p[0] / p[2], cy - cam.focal_px * p[1] / p[2]]);
    let area = edge(s[0], s[1], s[2]);
    if area.abs() < 1e-12 {
        return;
    }
    // orient counter-clockwise in screen space (y down) so the weights are positive
    let (order, area) = if area > 0.0 { ([0, 1, 2], area) } else { ([0, 2, 1], -area) };
    let p = order.map(|i| s[i]);
    let inv_z = order.map(|i| 1.0 / view[i][2]);
    let model = order.map(|i| v[i]);

    let min_x = p.iter().map(|q| q[0]).fold(f64::INFINITY, f64::min).floor().max(0.0) as usize;
    let max_x = p.iter().map(|q| q[0]).fold(f64::NEG_INFINITY, f64::max).ceil().min(cam.width as f64) as usize;
    let min_y = p.iter().map(|q| q[1]).fold(f64::INFINITY, f64::min).floor().max(0.0) as usize;
    let max_y = p.iter().map(|q| q[1]).fold(f64::NEG_INFINITY, f64::max).ceil().min(cam.height as f64) as usize;

    let bias = [
        top_left(p[1], p[2]),
        top_left(p[2], p[0]),
        top_left(p[0], p[1]),
    ];
    for y in min_y..max_y {
        for x in min_x..max_x {
            let q = [x as f64 + 0.5, y as f64 + 0.5];
            let w = [edge(p[1], p[2], q), edge(p[2], p[0], q), edge(p[0], p[1], q)];
            if (0..3).any(|i| w[i] < 0.0 || (w[i] == 0.0 && !bias[i])) {
                continue;
            }
            let b = w.map(|wi| wi / area);
            let iz = b[0] * inv_z[0] + b[1] * inv_z[1] + b[2] * inv_z[2];
            let idx = y * cam.width + x;
            if iz <= fb.inv_depth[idx] {
                continue;
            }
            fb.inv_depth[idx] = iz;
            let pc = [b[0] * inv_z[0] / iz, b[1] * inv_z[1] / iz, b[2] * inv_z[2] / iz];
            let point = [0, 1, 2].map(|k| pc[0] * model[0][k] + pc[1] * model[1][k] + pc[2] * model[2][k]);
            fb.frags[idx] = Some(Fragment { point, tri: id });
        }
    }
}

/// Twice the signed area of (a, b, c); positive when c lies to the right of
/// a→b on a y-down screen, i.e. counter-clockwise winding as displayed.
fn edge(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

fn top_left(a: [f64; 2], b: [f64; 2]) -> bool {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    (dy == 0.0 && dx > 0.0) || dy < 0.0
}
