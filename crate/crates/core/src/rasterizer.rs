//! Software z-buffer rendering of mesh depth, and the visibility gate.
//!
//! Triangles are transformed to camera space, clipped against a near plane at
//! [`NEAR_CLIP`] metres, projected, and scan-converted with edge functions.
//! A pixel is covered when its centre lies strictly inside a triangle or on a
//! top or left edge. Depth is interpolated perspective-correctly: `1/depth` is
//! affine in screen space, so it is interpolated barycentrically and inverted
//! per pixel. There is no backface culling.

use std::io::{self, Write};

use nalgebra::Point3;
use thiserror::Error;

use crate::geometry::{CameraFrame, Projection, SemanticMesh};
use crate::pgm;

/// Depth of the near clipping plane, metres.
pub const NEAR_CLIP: f64 = 0.05;

/// Default visibility tolerance between a vertex depth and the rendered depth.
pub const DEFAULT_VISIBILITY_TOLERANCE: f64 = 0.01;

/// Triangle-id buffer value for pixels no triangle covers.
pub const NO_TRIANGLE: u32 = u32::MAX;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RasterError {
    #[error("depth map is {map_width}x{map_height} but the frame is {frame_width}x{frame_height}")]
    DimensionMismatch {
        map_width: u32,
        map_height: u32,
        frame_width: u32,
        frame_height: u32,
    },
}

/// Per-pixel viewing-axis depth. Uncovered pixels hold `f64::INFINITY`.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: u32,
    height: u32,
    depth: Vec<f64>,
}

impl DepthMap {
    pub fn empty(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            depth: vec![f64::INFINITY; width as usize * height as usize],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    /// Depth at pixel `(x, y)`, or `None` when no surface covers it.
    pub fn get(&self, x: u32, y: u32) -> Option<f64> {
        if x >= self.width || y >= self.height {
            return None;
        }
        let d = self.depth[y as usize * self.width as usize + x as usize];
        d.is_finite().then_some(d)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.depth
    }

    pub fn covered_pixels(&self) -> usize {
        self.depth.iter().filter(|d| d.is_finite()).count()
    }

    /// 16-bit binary PGM, millimetres, clamped to `[0, 65535]`; uncovered
    /// pixels are written as 0.
    pub fn write_pgm<W: Write>(&self, out: W) -> io::Result<()> {
        let mm: Vec<u16> = self
            .depth
            .iter()
            .map(|&d| {
                if d.is_finite() {
                    (d * 1000.0).round().clamp(0.0, 65535.0) as u16
                } else {
                    0
                }
            })
            .collect();
        pgm::write_u16(out, self.width, self.height, &mm)
    }
}

/// Depth map plus the index of the triangle that won each pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub depth: DepthMap,
    pub triangle: Vec<u32>,
}

impl Raster {
    pub fn triangle_at(&self, x: u32, y: u32) -> Option<u32> {
        let id = self.triangle[y as usize * self.depth.width as usize + x as usize];
        (id != NO_TRIANGLE).then_some(id)
    }
}

/// A vertex that passed the visibility gate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VisibleVertex {
    pub vertex: u32,
    /// Continuous pixel coordinates of the projected vertex.
    pub x: f64,
    pub y: f64,
    pub depth: f64,
}

impl VisibleVertex {
    /// Integer pixel the vertex falls in.
    pub fn pixel(&self) -> (u32, u32) {
        (self.x.floor() as u32, self.y.floor() as u32)
    }
}

pub fn render_depth(mesh: &SemanticMesh, frame: &CameraFrame) -> DepthMap {
    rasterize(mesh.vertices(), mesh.triangles(), frame).depth
}

pub fn render(mesh: &SemanticMesh, frame: &CameraFrame) -> Raster {
    rasterize(mesh.vertices(), mesh.triangles(), frame)
}

#[derive(Debug, Clone, Copy)]
struct ScreenVertex {
    x: f64,
    y: f64,
    inv_depth: f64,
}

/// Renders depth and triangle ids for an arbitrary vertex/triangle soup.
pub fn rasterize(vertices: &[Point3<f64>], triangles: &[[u32; 3]], frame: &CameraFrame) -> Raster {
    let (width, height) = (frame.width(), frame.height());
    let mut depth = DepthMap::empty(width, height);
    let mut ids = vec![NO_TRIANGLE; depth.depth.len()];
    let camera: Vec<Point3<f64>> = vertices.iter().map(|v| frame.world_to_camera(v).position).collect();

    let mut polygon = Vec::with_capacity(4);
    let mut screen = Vec::with_capacity(4);
    for (id, tri) in triangles.iter().enumerate() {
        let corners = tri.map(|i| camera[i as usize]);
        if corners.iter().all(|p| -p.z < NEAR_CLIP) {
            continue;
        }
        clip_near(&corners, &mut polygon);
        if polygon.len() < 3 {
            continue;
        }
        screen.clear();
        for p in &polygon {
            match frame.project_camera_point(p) {
                Projection::Pixel { x, y, depth } => screen.push(ScreenVertex {
                    x,
                    y,
                    inv_depth: 1.0 / depth,
                }),
                Projection::BehindCamera => break,
            }
        }
        if screen.len() != polygon.len() {
            continue;
        }
        for k in 1..screen.len() - 1 {
            fill_triangle(
                [screen[0], screen[k], screen[k + 1]],
                id as u32,
                width,
                height,
                &mut depth.depth,
                &mut ids,
            );
        }
    }
    Raster { depth, triangle: ids }
}

/// Sutherland–Hodgman clip of a triangle against `depth >= NEAR_CLIP`.
fn clip_near(tri: &[Point3<f64>; 3], out: &mut Vec<Point3<f64>>) {
    out.clear();
    for i in 0..3 {
        let a = tri[i];
        let b = tri[(i + 1) % 3];
        let da = -a.z - NEAR_CLIP;
        let db = -b.z - NEAR_CLIP;
        if da >= 0.0 {
            out.push(a);
        }
        if (da >= 0.0) != (db >= 0.0) {
            let t = da / (da - db);
            let mut p = a + (b - a) * t;
            p.z = -NEAR_CLIP;
            out.push(p);
        }
    }
}

/// Edge function, evaluated with the endpoints in a fixed order so that
/// `edge(a, b) == -edge(b, a)` holds exactly. Without that, rounding can
/// leave a pixel on a shared edge outside both neighbours.
#[inline]
fn edge(a: &ScreenVertex, b: &ScreenVertex, px: f64, py: f64) -> f64 {
    let raw = |a: &ScreenVertex, b: &ScreenVertex| (b.x - a.x) * (py - a.y) - (b.y - a.y) * (px - a.x);
    if (a.x, a.y) <= (b.x, b.y) {
        raw(a, b)
    } else {
        -raw(b, a)
    }
}

/// Top-left rule for the y-down, positive-area orientation used below.
#[inline]
fn is_top_left(a: &ScreenVertex, b: &ScreenVertex) -> bool {
    let dx = b.x - a.x;
    let dy = b.y - a.y;
    (dy == 0.0 && dx > 0.0) || dy < 0.0
}

fn fill_triangle(mut v: [ScreenVertex; 3], id: u32, width: u32, height: u32, depth: &mut [f64], ids: &mut [u32]) {
    let mut area = edge(&v[0], &v[1], v[2].x, v[2].y);
    if area == 0.0 || !area.is_finite() {
        return;
    }
    if area < 0.0 {
        v.swap(1, 2);
        area = -area;
    }
    let min_x = v.iter().map(|p| p.x).fold(f64::INFINITY, f64::min);
    let max_x = v.iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max);
    let min_y = v.iter().map(|p| p.y).fold(f64::INFINITY, f64::min);
    let max_y = v.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max);
    // Pixel i has its centre at i + 0.5.
    let x0 = (min_x - 0.5).ceil().max(0.0);
    let x1 = (max_x - 0.5).floor().min(f64::from(width) - 1.0);
    let y0 = (min_y - 0.5).ceil().max(0.0);
    let y1 = (max_y - 0.5).floor().min(f64::from(height) - 1.0);
    if x0 > x1 || y0 > y1 {
        return;
    }
    let (x0, x1, y0, y1) = (x0 as u32, x1 as u32, y0 as u32, y1 as u32);

    let top_left = [
        is_top_left(&v[1], &v[2]),
        is_top_left(&v[2], &v[0]),
        is_top_left(&v[0], &v[1]),
    ];
    let inside = |w: f64, tl: bool| w > 0.0 || (w == 0.0 && tl);
    let inv_area = 1.0 / area;
    let stride = width as usize;

    for py in y0..=y1 {
        let cy = f64::from(py) + 0.5;
        let row = py as usize * stride;
        for px in x0..=x1 {
            let cx = f64::from(px) + 0.5;
            let w0 = edge(&v[1], &v[2], cx, cy);
            let w1 = edge(&v[2], &v[0], cx, cy);
            let w2 = edge(&v[0], &v[1], cx, cy);
            if !(inside(w0, top_left[0]) && inside(w1, top_left[1]) && inside(w2, top_left[2])) {
                continue;
            }
            let inv_depth = (w0 * v[0].inv_depth + w1 * v[1].inv_depth + w2 * v[2].inv_depth) * inv_area;
            if inv_depth <= 0.0 {
                continue;
            }
            let d = 1.0 / inv_depth;
            let idx = row + px as usize;
            if d < depth[idx] {
                depth[idx] = d;
                ids[idx] = id;
            }
        }
    }
}

/// Vertices that project inside the image, in front of the camera, onto a
/// covered pixel whose rendered depth is within `tolerance` of the vertex's
/// own viewing-axis depth.
pub fn visible_vertices(
    mesh: &SemanticMesh,
    frame: &CameraFrame,
    depth_map: &DepthMap,
    tolerance: f64,
) -> Result<Vec<VisibleVertex>, RasterError> {
    visible_points(mesh.vertices(), frame, depth_map, tolerance)
}

pub fn visible_points(
    vertices: &[Point3<f64>],
    frame: &CameraFrame,
    depth_map: &DepthMap,
    tolerance: f64,
) -> Result<Vec<VisibleVertex>, RasterError> {
    if depth_map.width != frame.width() || depth_map.height != frame.height() {
        return Err(RasterError::DimensionMismatch {
            map_width: depth_map.width,
            map_height: depth_map.height,
            frame_width: frame.width(),
            frame_height: frame.height(),
        });
    }
    let mut out = Vec::new();
    for (i, v) in vertices.iter().enumerate() {
        let Some((x, y, depth)) = frame.project_to_pixel(v).pixel() else {
            continue;
        };
        let Some((px, py)) = frame.pixel_index(x, y) else {
            continue;
        };
        let Some(surface) = depth_map.get(px, py) else {
            continue;
        };
        if (depth - surface).abs() <= tolerance {
            out.push(VisibleVertex {
                vertex: i as u32,
                x,
                y,
                depth,
            });
        }
    }
    Ok(out)
}
