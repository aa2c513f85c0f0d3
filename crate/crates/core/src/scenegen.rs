//! Synthetic rooms with chairs and lamps, their ground-truth labels, and
//! camera trajectories through them.
//!
//! Coordinates: the floor is `y = 0`, the room spans `x, z ∈ [−w/2, w/2]`
//! and `y ∈ [0, h]`.

use std::collections::HashMap;
use std::f64::consts::TAU;
use std::fmt::Write as _;
use std::io::{self, BufRead, Write};
use std::path::Path;

use nalgebra::{Matrix4, Point3, Rotation3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::geometry::{self, CameraFrame, ClassSet, GeometryError, SemanticMesh};
use crate::rasterizer;
use crate::seed::substream;
use crate::segmentation::{triangle_majority, BgraImage};

pub const DEFAULT_DENSITY: f64 = 800.0;
pub const DEFAULT_MIN_RANGE: f64 = 0.85;
pub const DEFAULT_WIDTH: u32 = 896;
pub const DEFAULT_HEIGHT: u32 = 504;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("object {index} ({class}) extends outside the room")]
    ObjectOutsideRoom { index: usize, class: String },
    #[error("class `{0}` is not in the class set")]
    UnknownClass(String),
    #[error("invalid scene spec: {0}")]
    InvalidSpec(String),
    #[error("could not place {0} objects without overlap")]
    Placement(usize),
    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),
    #[error("trajectory line {line}: {message}")]
    TrajectoryFormat { line: usize, message: String },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Primitive {
    /// Seat, back and four legs.
    Chair,
    /// Cylindrical stem under a flared shade.
    Lamp,
}

impl Primitive {
    pub fn class_name(self) -> &'static str {
        match self {
            Primitive::Chair => "Chair",
            Primitive::Lamp => "Lamp",
        }
    }

    /// Horizontal radius of the unscaled primitive around its origin.
    fn footprint(self) -> f64 {
        match self {
            Primitive::Chair => 0.225 * std::f64::consts::SQRT_2,
            Primitive::Lamp => 0.11,
        }
    }

    fn height(self) -> f64 {
        match self {
            Primitive::Chair => 0.90,
            Primitive::Lamp => 0.52,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectSpec {
    pub primitive: Primitive,
    /// Floor position of the object origin (`y` is ignored; objects stand
    /// on the floor).
    pub position: Point3<f64>,
    /// Rotation about +Y in radians.
    pub yaw: f64,
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    /// Width (x), height (y), depth (z) in meters.
    pub room: Vector3<f64>,
    pub objects: Vec<ObjectSpec>,
    /// Target triangle count per square meter of flat surface.
    pub density: f64,
    /// Clearance between object bottoms and the floor.
    pub floor_gap: f64,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self::random(2, 1, 0).expect("default placement fits")
    }
}

impl SceneSpec {
    pub fn empty(seed: u64) -> Self {
        Self {
            room: Vector3::new(4.0, 4.0, 4.0),
            objects: Vec::new(),
            density: DEFAULT_DENSITY,
            floor_gap: 0.02,
            seed,
        }
    }

    /// `chairs` chairs and `lamps` lamps at seeded, non-overlapping positions
    /// near the room center.
    pub fn random(chairs: usize, lamps: usize, seed: u64) -> Result<Self, SceneError> {
        let mut rng = ChaCha8Rng::seed_from_u64(substream(seed, "scene"));
        let mut spec = Self::empty(seed);
        let kinds = std::iter::repeat_n(Primitive::Chair, chairs).chain(std::iter::repeat_n(Primitive::Lamp, lamps));
        // The placement disc grows slowly with the object count.
        let disc = 0.6 + 0.1 * (chairs + lamps).saturating_sub(3) as f64;
        for primitive in kinds {
            let mut placed = false;
            for _ in 0..1000 {
                let r = disc * rng.random::<f64>().sqrt();
                let a = rng.random_range(0.0..TAU);
                let position = Point3::new(r * a.cos(), 0.0, r * a.sin());
                let clear = spec.objects.iter().all(|o| {
                    let d = (o.position - position).xz().norm();
                    d > o.primitive.footprint() + primitive.footprint() + 0.05
                });
                if clear {
                    spec.objects.push(ObjectSpec {
                        primitive,
                        position,
                        yaw: rng.random_range(0.0..TAU),
                        scale: 1.0,
                    });
                    placed = true;
                    break;
                }
            }
            if !placed {
                return Err(SceneError::Placement(chairs + lamps));
            }
        }
        Ok(spec)
    }

    /// Edge length of the grid cells that meets the density target.
    pub fn cell_size(&self) -> f64 {
        (2.0 / self.density).sqrt()
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        if !(self.density > 0.0 && self.density.is_finite()) {
            return Err(SceneError::InvalidSpec(format!("density {}", self.density)));
        }
        if !self.room.iter().all(|d| *d > 0.0 && d.is_finite()) {
            return Err(SceneError::InvalidSpec(format!("room {:?}", self.room)));
        }
        if !(0.0..0.5).contains(&self.floor_gap) {
            return Err(SceneError::InvalidSpec(format!("floor gap {}", self.floor_gap)));
        }
        for (index, o) in self.objects.iter().enumerate() {
            let reach = o.primitive.footprint() * o.scale;
            let inside = o.scale > 0.0
                && o.position.x.abs() + reach <= self.room.x / 2.0
                && o.position.z.abs() + reach <= self.room.z / 2.0
                && self.floor_gap + o.primitive.height() * o.scale <= self.room.y;
            if !inside {
                return Err(SceneError::ObjectOutsideRoom {
                    index,
                    class: o.primitive.class_name().into(),
                });
            }
        }
        Ok(())
    }
}

/// Accumulates welded vertices and triangles for one part of the scene.
struct PartBuilder {
    vertices: Vec<Point3<f64>>,
    triangles: Vec<[u32; 3]>,
    index: HashMap<[i64; 3], u32>,
}

impl PartBuilder {
    fn new() -> Self {
        Self {
            vertices: Vec::new(),
            triangles: Vec::new(),
            index: HashMap::new(),
        }
    }

    fn vertex(&mut self, p: Point3<f64>) -> u32 {
        let key = [p.x, p.y, p.z].map(|c| (c * 1e5).round() as i64);
        *self.index.entry(key).or_insert_with(|| {
            self.vertices.push(p);
            (self.vertices.len() - 1) as u32
        })
    }

    fn triangle(&mut self, a: u32, b: u32, c: u32) {
        if a != b && b != c && a != c {
            self.triangles.push([a, b, c]);
        }
    }

    fn quad(&mut self, a: u32, b: u32, c: u32, d: u32) {
        self.triangle(a, b, c);
        self.triangle(a, c, d);
    }

    /// Planar grid over the parallelogram `origin + s·u + t·v`, `s, t ∈ [0, 1]`.
    fn grid(&mut self, origin: Point3<f64>, u: Vector3<f64>, v: Vector3<f64>, cell: f64) {
        let nu = cells(u.norm(), cell);
        let nv = cells(v.norm(), cell);
        let ids: Vec<Vec<u32>> = (0..=nv)
            .map(|j| {
                (0..=nu)
                    .map(|i| self.vertex(origin + u * (i as f64 / nu as f64) + v * (j as f64 / nv as f64)))
                    .collect()
            })
            .collect();
        for j in 0..nv {
            for i in 0..nu {
                self.quad(ids[j][i], ids[j][i + 1], ids[j + 1][i + 1], ids[j + 1][i]);
            }
        }
    }

    /// Axis-aligned box; `faces` selects −x, +x, −y, +y, −z, +z.
    fn boxed(&mut self, lo: Point3<f64>, hi: Point3<f64>, faces: [bool; 6], cell: f64) {
        let d = hi - lo;
        let (ex, ey, ez) = (Vector3::x() * d.x, Vector3::y() * d.y, Vector3::z() * d.z);
        let sides = [
            (lo, ey, ez),
            (lo + ex, ey, ez),
            (lo, ex, ez),
            (lo + ey, ex, ez),
            (lo, ex, ey),
            (lo + ez, ex, ey),
        ];
        for ((origin, u, v), on) in sides.into_iter().zip(faces) {
            if on {
                self.grid(origin, u, v, cell);
            }
        }
    }

    /// Surface of revolution about +Y through `profile` points `(radius, y)`.
    fn lathe(&mut self, profile: &[(f64, f64)], segments: usize) {
        let rings: Vec<Vec<u32>> = profile
            .iter()
            .map(|&(r, y)| {
                if r == 0.0 {
                    vec![self.vertex(Point3::new(0.0, y, 0.0)); segments]
                } else {
                    (0..segments)
                        .map(|s| {
                            let a = TAU * s as f64 / segments as f64;
                            self.vertex(Point3::new(r * a.cos(), y, r * a.sin()))
                        })
                        .collect()
                }
            })
            .collect();
        for w in rings.windows(2) {
            for s in 0..segments {
                let t = (s + 1) % segments;
                self.quad(w[0][s], w[0][t], w[1][t], w[1][s]);
            }
        }
    }
}

fn cells(length: f64, cell: f64) -> usize {
    ((length / cell).round() as usize).max(1)
}

/// Profile points from `a` to `b` spaced about `cell` apart, both ends included.
fn segment_profile(a: (f64, f64), b: (f64, f64), cell: f64) -> Vec<(f64, f64)> {
    let n = cells(((b.0 - a.0).powi(2) + (b.1 - a.1).powi(2)).sqrt(), cell);
    (0..=n)
        .map(|i| {
            let t = i as f64 / n as f64;
            (a.0 + (b.0 - a.0) * t, a.1 + (b.1 - a.1) * t)
        })
        .collect()
}

fn chair(cell: f64, gap: f64) -> PartBuilder {
    let mut b = PartBuilder::new();
    let half = 0.225;
    let n = cells(2.0 * half, cell);
    let step = 2.0 * half / n as f64;
    let (seat_lo, seat_hi) = (0.41, 0.45);
    b.boxed(
        Point3::new(-half, seat_lo, -half),
        Point3::new(half, seat_hi, half),
        [true; 6],
        cell,
    );
    // Legs are two cells wide, flush with the seat sides, so their top
    // edges have vertices in the middle of visible faces.
    let leg = 2.0 * step;
    for (x, z) in [
        (-half, -half),
        (half - leg, -half),
        (-half, half - leg),
        (half - leg, half - leg),
    ] {
        b.boxed(
            Point3::new(x, gap, z),
            Point3::new(x + leg, seat_lo, z + leg),
            [true, true, true, false, true, true],
            cell,
        );
    }
    // The back rises from the rear row of seat-top cells.
    b.boxed(
        Point3::new(-half, seat_hi, -half),
        Point3::new(half, 0.90, -half + step),
        [true, true, false, true, true, true],
        cell,
    );
    b
}

fn lamp(cell: f64, gap: f64) -> PartBuilder {
    let mut b = PartBuilder::new();
    let (stem, shade, neck, top) = (0.03, 0.11, 0.30, 0.52);
    let segments = ((TAU * shade / cell).round() as usize).clamp(12, 48);
    let mut profile = vec![(0.0, gap)];
    profile.extend(segment_profile((stem, gap), (stem, neck), cell));
    profile.extend(segment_profile((stem, neck), (shade, top), cell).into_iter().skip(1));
    profile.extend(segment_profile((shade, top), (0.0, top), cell).into_iter().skip(1));
    b.lathe(&profile, segments);
    b
}

fn room(spec: &SceneSpec, cell: f64) -> PartBuilder {
    let mut b = PartBuilder::new();
    let (w, h, d) = (spec.room.x, spec.room.y, spec.room.z);
    b.boxed(
        Point3::new(-w / 2.0, 0.0, -d / 2.0),
        Point3::new(w / 2.0, h, d / 2.0),
        [true; 6],
        cell,
    );
    b
}

/// Triangulated room and objects with per-vertex ground-truth labels.
///
/// The room shell is labeled `Unknown`; each object is one connected,
/// single-class part.
pub fn generate_scene(spec: &SceneSpec, classes: &ClassSet) -> Result<SemanticMesh, SceneError> {
    spec.validate()?;
    let cell = spec.cell_size();
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    let mut labels = Vec::new();
    let mut append = |part: PartBuilder, label: u8, transform: &dyn Fn(Point3<f64>) -> Point3<f64>| {
        let base = vertices.len() as u32;
        vertices.extend(part.vertices.into_iter().map(transform));
        labels.resize(vertices.len(), label);
        triangles.extend(part.triangles.into_iter().map(|t| t.map(|i| i + base)));
    };
    append(room(spec, cell), classes.unknown_index() as u8, &|p| p);
    for o in &spec.objects {
        let name = o.primitive.class_name();
        let label = classes
            .index_of(name)
            .ok_or_else(|| SceneError::UnknownClass(name.into()))? as u8;
        // Build at unit scale with a scaled cell so density stays on target.
        let part = match o.primitive {
            Primitive::Chair => chair(cell / o.scale, spec.floor_gap / o.scale),
            Primitive::Lamp => lamp(cell / o.scale, spec.floor_gap / o.scale),
        };
        let rot = Rotation3::from_axis_angle(&Vector3::y_axis(), o.yaw);
        let offset = Vector3::new(o.position.x, 0.0, o.position.z);
        append(part, label, &|p| rot * Point3::from(p.coords * o.scale) + offset);
    }
    let mesh = SemanticMesh::new(vertices, triangles, classes.len())?;
    Ok(mesh.with_labels(labels, classes)?)
}

/// Image size and lens shared by every pose of a trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub width: u32,
    pub height: u32,
    /// Vertical field of view in radians.
    pub fov_y: f64,
    pub near: f64,
    pub far: f64,
}

impl Default for Intrinsics {
    fn default() -> Self {
        Self {
            width: DEFAULT_WIDTH,
            height: DEFAULT_HEIGHT,
            fov_y: 40f64.to_radians(),
            near: 0.1,
            far: 20.0,
        }
    }
}

impl Intrinsics {
    pub fn with_size(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            ..Self::default()
        }
    }

    pub fn projection(&self) -> Result<Matrix4<f64>, GeometryError> {
        geometry::make_perspective(
            self.fov_y,
            f64::from(self.width) / f64::from(self.height),
            self.near,
            self.far,
        )
    }

    pub fn frame(&self, camera_to_world: Matrix4<f64>, index: u64) -> Result<CameraFrame, GeometryError> {
        CameraFrame::new(self.width, self.height, camera_to_world, self.projection()?, index)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrajectoryStyle {
    /// Circle around the centroid of the labeled objects, looking at it.
    Orbit { radius: f64, height: f64 },
    /// Piecewise-linear path through camera-to-world poses.
    Waypoints(Vec<Matrix4<f64>>),
}

impl TrajectoryStyle {
    pub fn default_orbit() -> Self {
        TrajectoryStyle::Orbit {
            radius: 1.1,
            height: 1.6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// Camera-to-world matrices in capture order.
    pub poses: Vec<Matrix4<f64>>,
    pub min_range: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    /// Frames numbered from 0.
    pub fn frames(&self, intrinsics: &Intrinsics) -> Result<Vec<CameraFrame>, GeometryError> {
        self.poses
            .iter()
            .enumerate()
            .map(|(i, pose)| intrinsics.frame(*pose, i as u64))
            .collect()
    }
}

fn objects_centroid(scene: &SemanticMesh, classes: &ClassSet) -> Point3<f64> {
    let unknown = classes.unknown_index() as u8;
    let pts: Vec<&Point3<f64>> = match scene.labels() {
        Some(labels) => scene
            .vertices()
            .iter()
            .zip(labels)
            .filter(|(_, &l)| l != unknown)
            .map(|(v, _)| v)
            .collect(),
        None => Vec::new(),
    };
    let pts = if pts.is_empty() {
        scene.vertices().iter().collect()
    } else {
        pts
    };
    let sum = pts.iter().fold(Vector3::zeros(), |acc, p| acc + p.coords);
    Point3::from(sum / pts.len().max(1) as f64)
}

/// Closest point on triangle `abc` to `p`.
pub fn closest_point_on_triangle(p: &Point3<f64>, a: &Point3<f64>, b: &Point3<f64>, c: &Point3<f64>) -> Point3<f64> {
    let (ab, ac, ap) = (b - a, c - a, p - a);
    let (d1, d2) = (ab.dot(&ap), ac.dot(&ap));
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = p - b;
    let (d3, d4) = (ab.dot(&bp), ac.dot(&bp));
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        return a + ab * (d1 / (d1 - d3));
    }
    let cp = p - c;
    let (d5, d6) = (ab.dot(&cp), ac.dot(&cp));
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        return a + ac * (d2 / (d2 - d6));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
    }
    let denom = 1.0 / (va + vb + vc);
    a + ab * (vb * denom) + ac * (vc * denom)
}

/// Nearest surface point of `mesh` to `p`, with its distance.
pub fn nearest_surface(mesh: &SemanticMesh, p: &Point3<f64>) -> Option<(Point3<f64>, f64)> {
    (0..mesh.triangles().len())
        .map(|t| {
            let [a, b, c] = mesh.triangle_points(t);
            let q = closest_point_on_triangle(p, &a, &b, &c);
            (q, (p - q).norm())
        })
        .min_by(|x, y| x.1.total_cmp(&y.1))
}

/// Moves `eye` away from surfaces closer than `min_range`; returns the
/// adjusted eye and whether it moved.
fn push_out(mesh: &SemanticMesh, mut eye: Point3<f64>, min_range: f64) -> (Point3<f64>, bool) {
    let mut moved = false;
    for _ in 0..16 {
        match nearest_surface(mesh, &eye) {
            Some((q, d)) if d < min_range - 1e-9 => {
                let away = eye - q;
                let dir = if away.norm() > 1e-12 {
                    away / away.norm()
                } else {
                    Vector3::y()
                };
                eye += dir * (min_range - d);
                moved = true;
            }
            _ => break,
        }
    }
    (eye, moved)
}

fn interpolate_pose(a: &Matrix4<f64>, b: &Matrix4<f64>, t: f64) -> Matrix4<f64> {
    let rot = |m: &Matrix4<f64>| {
        UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(
            m.fixed_view::<3, 3>(0, 0).into_owned(),
        ))
    };
    let q = rot(a).slerp(&rot(b), t);
    let pa = a.fixed_view::<3, 1>(0, 3).into_owned();
    let pb = b.fixed_view::<3, 1>(0, 3).into_owned();
    let mut m = q.to_homogeneous();
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(&(pa + (pb - pa) * t));
    m
}

/// Camera path through `scene`.
///
/// Orbit poses start at a seeded phase and are evenly spaced. Poses closer
/// than [`DEFAULT_MIN_RANGE`] to any surface are pushed away with a warning.
pub fn generate_trajectory(
    scene: &SemanticMesh,
    classes: &ClassSet,
    style: &TrajectoryStyle,
    n_frames: usize,
    seed: u64,
) -> Result<Trajectory, SceneError> {
    if n_frames == 0 {
        return Err(SceneError::InvalidTrajectory("n_frames must be at least 1".into()));
    }
    let min_range = DEFAULT_MIN_RANGE;
    let poses = match style {
        TrajectoryStyle::Orbit { radius, height } => {
            if !(*radius > 0.0 && radius.is_finite() && height.is_finite()) {
                return Err(SceneError::InvalidTrajectory(format!(
                    "orbit radius {radius}, height {height}"
                )));
            }
            let target = objects_centroid(scene, classes);
            let mut rng = ChaCha8Rng::seed_from_u64(substream(seed, "trajectory"));
            let phase = rng.random_range(0.0..TAU);
            let mut poses = Vec::with_capacity(n_frames);
            for i in 0..n_frames {
                let a = phase + TAU * i as f64 / n_frames as f64;
                let eye = Point3::new(target.x + radius * a.cos(), *height, target.z + radius * a.sin());
                let (eye, moved) = push_out(scene, eye, min_range);
                if moved {
                    log::warn!("orbit pose {i} was within {min_range} m of the scene; pushed to {eye}");
                }
                poses.push(geometry::look_at(eye, target, Vector3::y())?);
            }
            poses
        }
        TrajectoryStyle::Waypoints(points) => {
            if points.is_empty() {
                return Err(SceneError::InvalidTrajectory("no waypoints".into()));
            }
            for p in points {
                geometry::rigid_inverse(p)?;
            }
            let segments = points.len() - 1;
            let mut poses = Vec::with_capacity(n_frames);
            for i in 0..n_frames {
                let u = if n_frames == 1 {
                    0.0
                } else {
                    segments as f64 * i as f64 / (n_frames - 1) as f64
                };
                let k = (u.floor() as usize).min(segments.saturating_sub(1));
                let pose = if segments == 0 {
                    points[0]
                } else {
                    interpolate_pose(&points[k], &points[k + 1], u - k as f64)
                };
                let eye = Point3::new(pose[(0, 3)], pose[(1, 3)], pose[(2, 3)]);
                if let Some((_, d)) = nearest_surface(scene, &eye) {
                    if d < min_range {
                        log::warn!("waypoint pose {i} is {d:.3} m from the scene (minimum {min_range} m)");
                    }
                }
                poses.push(pose);
            }
            poses
        }
    };
    Ok(Trajectory { poses, min_range })
}

/// One pose per line: 16 row-major decimals separated by spaces.
pub fn write_trajectory<W: Write>(mut out: W, trajectory: &Trajectory) -> io::Result<()> {
    for pose in &trajectory.poses {
        let mut line = String::new();
        for (i, v) in geometry::matrix_to_row_major(pose).iter().enumerate() {
            if i > 0 {
                line.push(' ');
            }
            let _ = write!(line, "{v:?}");
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

pub fn write_trajectory_path(path: impl AsRef<Path>, trajectory: &Trajectory) -> io::Result<()> {
    let mut out = io::BufWriter::new(std::fs::File::create(path)?);
    write_trajectory(&mut out, trajectory)?;
    out.flush()
}

/// Reads the format of [`write_trajectory`]; blank lines and `#` comments
/// are skipped.
pub fn read_trajectory<R: BufRead>(input: R) -> Result<Trajectory, SceneError> {
    let mut poses = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let values: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<Result<_, _>>()
            .map_err(|e| SceneError::TrajectoryFormat {
                line: i + 1,
                message: format!("{e}"),
            })?;
        let values: [f64; 16] = values.try_into().map_err(|v: Vec<f64>| SceneError::TrajectoryFormat {
            line: i + 1,
            message: format!("{} values, expected 16", v.len()),
        })?;
        let pose = geometry::matrix_from_row_major(&values);
        geometry::rigid_inverse(&pose).map_err(|e| SceneError::TrajectoryFormat {
            line: i + 1,
            message: e.to_string(),
        })?;
        poses.push(pose);
    }
    Ok(Trajectory {
        poses,
        min_range: DEFAULT_MIN_RANGE,
    })
}

pub fn read_trajectory_path(path: impl AsRef<Path>) -> Result<Trajectory, SceneError> {
    read_trajectory(io::BufReader::new(std::fs::File::open(path)?))
}

/// Flat-shaded BGRA picture of the scene: class colors dimmed with depth,
/// black where nothing is hit.
pub fn render_bgra(scene: &SemanticMesh, frame: &CameraFrame, classes: &ClassSet) -> BgraImage {
    let raster = rasterizer::render(scene, frame);
    let unknown = classes.unknown_index() as u8;
    let labels = scene.labels();
    let mut data = Vec::with_capacity(raster.triangle.len() * 4);
    for (&t, &depth) in raster.triangle.iter().zip(raster.depth.as_slice()) {
        if t == rasterizer::NO_TRIANGLE {
            data.extend_from_slice(&[0, 0, 0, 255]);
            continue;
        }
        let label = labels
            .map(|l| triangle_majority(scene.triangles()[t as usize].map(|v| l[v as usize]), unknown))
            .unwrap_or(unknown);
        let [r, g, b] = class_color(label, unknown);
        let shade = (1.0 / (1.0 + 0.25 * depth)).clamp(0.2, 1.0);
        let s = |c: u8| (f64::from(c) * shade).round() as u8;
        data.extend_from_slice(&[s(b), s(g), s(r), 255]);
    }
    BgraImage::new(frame.width(), frame.height(), data).expect("one pixel per raster cell")
}

fn class_color(label: u8, unknown: u8) -> [u8; 3] {
    if label == unknown {
        return [180, 180, 180];
    }
    // Golden-angle hues keep neighbouring class indices apart.
    let h = (f64::from(label) * 137.5).rem_euclid(360.0) / 60.0;
    let x = (1.0 - (h % 2.0 - 1.0).abs()) * 255.0;
    let x = x.round() as u8;
    match h as u32 {
        0 => [255, x, 0],
        1 => [x, 255, 0],
        2 => [0, 255, x],
        3 => [0, x, 255],
        4 => [x, 0, 255],
        _ => [255, 0, x],
    }
}
