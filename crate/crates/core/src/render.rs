//! Software z-buffer rasterizer producing depth, color and instance-label
//! views of a [`SceneModel`].
//!
//! Triangles are double-sided and clipped against the near plane before
//! projection. A pixel is covered when its center lies inside the projected
//! triangle, with the top-left rule deciding centers that fall exactly on an
//! edge. Depth is camera-space z obtained by perspective-correct
//! interpolation; color is the perspective-correct barycentric blend of the
//! vertex colors; the label is taken from the vertex with the largest
//! barycentric weight. Overlapping fragments within [`DEPTH_TIE_EPS`] keep
//! the lower triangle index.

use nalgebra::{Vector2, Vector3};
use rayon::prelude::*;

use crate::geometry::{Intrinsics, Pose};
use crate::image::{ColorImage, DepthMap, LabelImage};
use crate::mesh::SceneModel;

/// Near clipping plane, meters in front of the camera.
pub const NEAR_PLANE: f64 = 0.05;
/// Depth differences below this are treated as ties.
pub const DEPTH_TIE_EPS: f64 = 1e-9;

const ROWS_PER_BAND: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedViews {
    pub depth: DepthMap,
    pub color: ColorImage,
    pub labels: LabelImage,
    pub pose: Pose,
    pub intrinsics: Intrinsics,
}

/// A clipped, projected triangle ready for scan conversion.
#[derive(Debug, Clone)]
struct ScreenTriangle {
    screen: [Vector2<f64>; 3],
    inv_z: [f64; 3],
    /// Barycentric coordinates of each corner w.r.t. the unclipped triangle.
    bary: [[f64; 3]; 3],
    colors: [[f64; 3]; 3],
    labels: [u16; 3],
    min_y: i64,
    max_y: i64,
    min_x: i64,
    max_x: i64,
}

#[derive(Debug, Clone, Copy)]
struct ClipVertex {
    p: Vector3<f64>,
    bary: [f64; 3],
}

#[derive(Debug, Clone, Copy)]
struct Fragment {
    depth: f64,
    color: [u8; 3],
    label: u16,
}

/// Renders depth, color and labels of `model` seen from `pose`
/// (camera-to-model) through intrinsics `k`.
pub fn render(model: &SceneModel, pose: &Pose, k: &Intrinsics) -> RenderedViews {
    render_with_threads(model, pose, k, true)
}

/// Same as [`render`]; `parallel = false` forces a single-threaded scan.
/// Both paths produce bit-identical output.
pub fn render_with_threads(model: &SceneModel, pose: &Pose, k: &Intrinsics, parallel: bool) -> RenderedViews {
    let triangles = setup_triangles(model, pose, k);
    let (w, h) = (k.width as usize, k.height as usize);
    let mut frags: Vec<Option<Fragment>> = vec![None; w * h];

    let band_len = ROWS_PER_BAND * w;
    let raster_band = |(band, chunk): (usize, &mut [Option<Fragment>])| {
        let y0 = (band * ROWS_PER_BAND) as i64;
        let y1 = y0 + (chunk.len() / w) as i64 - 1;
        for tri in &triangles {
            if tri.max_y < y0 || tri.min_y > y1 {
                continue;
            }
            rasterize(tri, chunk, w, y0, y1);
        }
    };
    if parallel {
        frags.par_chunks_mut(band_len.max(1)).enumerate().for_each(raster_band);
    } else {
        frags.chunks_mut(band_len.max(1)).enumerate().for_each(raster_band);
    }

    let mut depth = DepthMap::filled(k.width, k.height, 0.0);
    let mut color = ColorImage::filled(k.width, k.height, [0, 0, 0]);
    let mut labels = LabelImage::filled(k.width, k.height, 0);
    for (i, f) in frags.iter().enumerate() {
        if let Some(f) = f {
            depth.as_mut_slice()[i] = f.depth;
            color.as_mut_slice()[i] = f.color;
            labels.as_mut_slice()[i] = f.label;
        }
    }
    RenderedViews {
        depth,
        color,
        labels,
        pose: *pose,
        intrinsics: *k,
    }
}

/// Depth only; cheaper entry point used by the metrics.
pub fn render_depth(model: &SceneModel, pose: &Pose, k: &Intrinsics) -> DepthMap {
    render(model, pose, k).depth
}

fn setup_triangles(model: &SceneModel, pose: &Pose, k: &Intrinsics) -> Vec<ScreenTriangle> {
    let world_to_cam = pose.inverse();
    let cam: Vec<Vector3<f64>> = model
        .vertices()
        .iter()
        .map(|v| world_to_cam.transform_point(v))
        .collect();
    let (w, h) = (k.width as i64, k.height as i64);
    let mut out = Vec::new();
    for tri in model.triangles() {
        let idx = tri.map(|i| i as usize);
        let corners = idx.map(|i| cam[i]);
        // Skip degenerate triangles in 3D.
        if (corners[1] - corners[0])
            .cross(&(corners[2] - corners[0]))
            .norm_squared()
            <= 0.0
        {
            continue;
        }
        let colors = idx.map(|i| model.colors()[i].map(|c| c as f64));
        let labels = idx.map(|i| model.labels()[i]);
        let poly = clip_near([
            ClipVertex {
                p: corners[0],
                bary: [1.0, 0.0, 0.0],
            },
            ClipVertex {
                p: corners[1],
                bary: [0.0, 1.0, 0.0],
            },
            ClipVertex {
                p: corners[2],
                bary: [0.0, 0.0, 1.0],
            },
        ]);
        for j in 1..poly.len().saturating_sub(1) {
            let fan = [poly[0], poly[j], poly[j + 1]];
            let screen = fan.map(|v| Vector2::new(k.fx * v.p.x / v.p.z + k.cx, k.fy * v.p.y / v.p.z + k.cy));
            let area = edge(&screen[0], &screen[1], &screen[2]);
            if area == 0.0 || !area.is_finite() {
                continue;
            }
            let min_x = screen.iter().map(|s| s.x).fold(f64::INFINITY, f64::min).ceil() as i64;
            let max_x = screen.iter().map(|s| s.x).fold(f64::NEG_INFINITY, f64::max).floor() as i64;
            let min_y = screen.iter().map(|s| s.y).fold(f64::INFINITY, f64::min).ceil() as i64;
            let max_y = screen.iter().map(|s| s.y).fold(f64::NEG_INFINITY, f64::max).floor() as i64;
            let (min_x, max_x) = (min_x.max(0), max_x.min(w - 1));
            let (min_y, max_y) = (min_y.max(0), max_y.min(h - 1));
            if min_x > max_x || min_y > max_y {
                continue;
            }
            out.push(ScreenTriangle {
                screen,
                inv_z: fan.map(|v| 1.0 / v.p.z),
                bary: fan.map(|v| v.bary),
                colors,
                labels,
                min_x,
                max_x,
                min_y,
                max_y,
            });
        }
    }
    out
}

/// Sutherland–Hodgman clip of a triangle against `z >= NEAR_PLANE`.
fn clip_near(tri: [ClipVertex; 3]) -> Vec<ClipVertex> {
    let mut out = Vec::with_capacity(4);
    for i in 0..3 {
        let a = tri[i];
        let b = tri[(i + 1) % 3];
        let a_in = a.p.z >= NEAR_PLANE;
        let b_in = b.p.z >= NEAR_PLANE;
        if a_in {
            out.push(a);
        }
        if a_in != b_in {
            // Interpolate from the inside endpoint so that an edge shared
            // with a neighbour is cut at a bit-identical point.
            let (inner, outer) = if a_in { (a, b) } else { (b, a) };
            let t = (NEAR_PLANE - inner.p.z) / (outer.p.z - inner.p.z);
            let mut bary = [0.0; 3];
            for (j, slot) in bary.iter_mut().enumerate() {
                *slot = inner.bary[j] + t * (outer.bary[j] - inner.bary[j]);
            }
            let mut p = inner.p + (outer.p - inner.p) * t;
            p.z = NEAR_PLANE;
            out.push(ClipVertex { p, bary });
        }
    }
    out
}

/// Edge function of `p` against the directed edge `a → b`, evaluated with
/// the endpoints in a canonical order so that an edge shared by two
/// triangles yields exactly opposite values.
#[inline]
fn edge(a: &Vector2<f64>, b: &Vector2<f64>, p: &Vector2<f64>) -> f64 {
    if (a.x, a.y) <= (b.x, b.y) {
        (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x)
    } else {
        -((a.x - b.x) * (p.y - b.y) - (a.y - b.y) * (p.x - b.x))
    }
}

/// Top-left rule for a triangle oriented with positive [`edge`] area
/// (clockwise on screen with y pointing down).
#[inline]
fn is_top_left(a: &Vector2<f64>, b: &Vector2<f64>) -> bool {
    let dy = b.y - a.y;
    let dx = b.x - a.x;
    (dy == 0.0 && dx > 0.0) || dy < 0.0
}

fn rasterize(tri: &ScreenTriangle, band: &mut [Option<Fragment>], w: usize, y0: i64, y1: i64) {
    let mut v = tri.screen;
    let mut inv_z = tri.inv_z;
    let mut bary = tri.bary;
    let mut area = edge(&v[0], &v[1], &v[2]);
    if area < 0.0 {
        v.swap(1, 2);
        inv_z.swap(1, 2);
        bary.swap(1, 2);
        area = -area;
    }
    let top_left = [
        is_top_left(&v[1], &v[2]),
        is_top_left(&v[2], &v[0]),
        is_top_left(&v[0], &v[1]),
    ];
    let inv_area = 1.0 / area;
    for y in tri.min_y.max(y0)..=tri.max_y.min(y1) {
        let row = (y - y0) as usize * w;
        for x in tri.min_x..=tri.max_x {
            let p = Vector2::new(x as f64, y as f64);
            let e = [edge(&v[1], &v[2], &p), edge(&v[2], &v[0], &p), edge(&v[0], &v[1], &p)];
            let inside = e.iter().zip(top_left).all(|(ei, tl)| *ei > 0.0 || (*ei == 0.0 && tl));
            if !inside {
                continue;
            }
            let l = e.map(|ei| ei * inv_area);
            let iz = l[0] * inv_z[0] + l[1] * inv_z[1] + l[2] * inv_z[2];
            if !(iz > 0.0) {
                continue;
            }
            let depth = 1.0 / iz;
            let slot = &mut band[row + x as usize];
            if let Some(prev) = slot {
                if !(depth < prev.depth - DEPTH_TIE_EPS) {
                    continue;
                }
            }
            // Perspective-correct barycentrics w.r.t. the unclipped triangle.
            let mut b = [0.0; 3];
            for (corner, lc) in l.iter().enumerate() {
                let wgt = lc * inv_z[corner] * depth;
                for (j, bj) in b.iter_mut().enumerate() {
                    *bj += wgt * bary[corner][j];
                }
            }
            let mut rgb = [0u8; 3];
            for (ch, out) in rgb.iter_mut().enumerate() {
                let c = b[0] * tri.colors[0][ch] + b[1] * tri.colors[1][ch] + b[2] * tri.colors[2][ch];
                *out = c.round().clamp(0.0, 255.0) as u8;
            }
            let mut best = 0;
            for j in 1..3 {
                if b[j] > b[best] {
                    best = j;
                }
            }
            *slot = Some(Fragment {
                depth,
                color: rgb,
                label: tri.labels[best],
            });
        }
    }
}
