//! Mesh, class and camera types, and the world → pixel projection chain.
//!
//! Conventions used everywhere in this crate:
//!
//! * World and camera frames are right-handed, metres, +Y up.
//! * The camera looks down its local −Z axis, so viewing-axis depth is `−z_cam`.
//! * Matrices are applied to column vectors. On the wire and on disk they are
//!   written row-major (16 numbers, row after row).
//! * Pixel origin is the top-left image corner, +y points down, and pixel
//!   `(i, j)` covers the continuous square `[i, i+1) × [j, j+1)`.

use std::collections::HashSet;
use std::fmt;

use nalgebra::{Matrix3, Matrix4, Point3, Vector3, Vector4};
use thiserror::Error;

/// Name of the class every class set must contain exactly once.
pub const UNKNOWN_CLASS: &str = "Unknown";

/// Tolerance on `RᵀR = I` when validating camera-to-world rotations.
const ORTHONORMAL_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("class set must not be empty")]
    EmptyClassSet,
    #[error("class set has duplicate class name `{0}`")]
    DuplicateClass(String),
    #[error("class set must contain `{UNKNOWN_CLASS}` exactly once")]
    MissingUnknown,
    #[error("class set supports at most 255 classes, got {0}")]
    TooManyClasses(usize),
    #[error("triangle {triangle} references vertex {index} but the mesh has {vertex_count} vertices")]
    IndexOutOfRange {
        triangle: usize,
        index: u32,
        vertex_count: usize,
    },
    #[error("expected {expected} per-vertex entries, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("ground-truth label {label} at vertex {vertex} is not a valid class index")]
    InvalidLabel { vertex: usize, label: u8 },
    #[error("vertex {0} has a non-finite position")]
    NonFiniteVertex(usize),
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("invalid projection parameters: {0}")]
    InvalidProjection(String),
}

/// Ordered set of semantic class names with a designated `Unknown` class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassSet {
    names: Vec<String>,
    unknown: usize,
}

impl ClassSet {
    pub fn new<I, S>(names: I) -> Result<Self, GeometryError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.is_empty() {
            return Err(GeometryError::EmptyClassSet);
        }
        if names.len() > 255 {
            return Err(GeometryError::TooManyClasses(names.len()));
        }
        let mut seen = HashSet::new();
        for name in &names {
            if !seen.insert(name.as_str()) {
                return Err(GeometryError::DuplicateClass(name.clone()));
            }
        }
        let unknown = names
            .iter()
            .position(|n| n == UNKNOWN_CLASS)
            .ok_or(GeometryError::MissingUnknown)?;
        Ok(Self { names, unknown })
    }

    /// `Lamp`, `Chair`, `Unknown`, in that order.
    pub fn lamp_chair_unknown() -> Self {
        Self::new(["Lamp", "Chair", UNKNOWN_CLASS]).expect("static class set is valid")
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn unknown_index(&self) -> usize {
        self.unknown
    }

    pub fn name(&self, index: usize) -> Option<&str> {
        self.names.get(index).map(String::as_str)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Case-insensitive lookup, so `chair` and `Chair` both resolve.
    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .or_else(|| self.names.iter().position(|n| n.eq_ignore_ascii_case(name)))
    }
}

impl Default for ClassSet {
    fn default() -> Self {
        Self::lamp_chair_unknown()
    }
}

/// Discrete probability distribution over the classes of a [`ClassSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct ClassDistribution(Vec<f64>);

impl ClassDistribution {
    pub fn uniform(classes: usize) -> Self {
        assert!(classes > 0, "distribution needs at least one class");
        Self(vec![1.0 / classes as f64; classes])
    }

    /// Wraps `probs`, rejecting negative or non-finite entries and sums that
    /// are off from 1 by more than `1e-6`. The result is renormalized exactly.
    pub fn new(probs: Vec<f64>) -> Result<Self, GeometryError> {
        Self::with_tolerance(probs, 1e-6)
    }

    pub fn with_tolerance(mut probs: Vec<f64>, tolerance: f64) -> Result<Self, GeometryError> {
        if probs.is_empty() {
            return Err(GeometryError::InvalidDistribution("no entries".into()));
        }
        if let Some(p) = probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
            return Err(GeometryError::InvalidDistribution(format!("entry {p}")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > tolerance {
            return Err(GeometryError::InvalidDistribution(format!("entries sum to {sum}")));
        }
        // Leave rounding-level sums alone so that reloading is lossless.
        if (sum - 1.0).abs() > 1e-12 {
            probs.iter_mut().for_each(|p| *p /= sum);
        }
        Ok(Self(probs))
    }

    /// Builds a distribution from raw values without any checks.
    ///
    /// Used for distributions that are normalized by construction.
    pub(crate) fn from_raw(probs: Vec<f64>) -> Self {
        Self(probs)
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// Most likely class. Ties go to `unknown`, then to the lowest index.
    pub fn argmax(&self, unknown: usize) -> usize {
        argmax_prefer(&self.0, unknown)
    }
}

impl AsRef<[f64]> for ClassDistribution {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Index of the largest entry; exact ties resolve to `preferred` when it is
/// among the maxima, otherwise to the lowest tied index.
pub fn argmax_prefer(values: &[f64], preferred: usize) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    if preferred < values.len() && values[preferred] == values[best] {
        preferred
    } else {
        best
    }
}

/// Triangle mesh whose vertices carry class distributions and, optionally,
/// ground-truth class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticMesh {
    vertices: Vec<Point3<f64>>,
    triangles: Vec<[u32; 3]>,
    distributions: Vec<ClassDistribution>,
    labels: Option<Vec<u8>>,
}

impl SemanticMesh {
    /// Validates the geometry and attaches uniform distributions over
    /// `classes` classes. Triangles whose three indices are identical are
    /// dropped.
    pub fn new(vertices: Vec<Point3<f64>>, triangles: Vec<[u32; 3]>, classes: usize) -> Result<Self, GeometryError> {
        if classes == 0 {
            return Err(GeometryError::EmptyClassSet);
        }
        let distributions = vec![ClassDistribution::uniform(classes); vertices.len()];
        Self::from_parts(vertices, triangles, distributions, None)
    }

    pub fn from_parts(
        vertices: Vec<Point3<f64>>,
        triangles: Vec<[u32; 3]>,
        distributions: Vec<ClassDistribution>,
        labels: Option<Vec<u8>>,
    ) -> Result<Self, GeometryError> {
        let n = vertices.len();
        if let Some(i) = vertices.iter().position(|v| !v.coords.iter().all(|c| c.is_finite())) {
            return Err(GeometryError::NonFiniteVertex(i));
        }
        for (t, tri) in triangles.iter().enumerate() {
            if let Some(&index) = tri.iter().find(|&&i| i as usize >= n) {
                return Err(GeometryError::IndexOutOfRange {
                    triangle: t,
                    index,
                    vertex_count: n,
                });
            }
        }
        if distributions.len() != n {
            return Err(GeometryError::LengthMismatch {
                expected: n,
                actual: distributions.len(),
            });
        }
        if let Some(labels) = &labels {
            if labels.len() != n {
                return Err(GeometryError::LengthMismatch {
                    expected: n,
                    actual: labels.len(),
                });
            }
        }
        let triangles = triangles
            .into_iter()
            .filter(|t| !(t[0] == t[1] && t[1] == t[2]))
            .collect();
        Ok(Self {
            vertices,
            triangles,
            distributions,
            labels,
        })
    }

    /// Attaches per-vertex ground-truth labels (class indices).
    pub fn with_labels(mut self, labels: Vec<u8>, classes: &ClassSet) -> Result<Self, GeometryError> {
        if labels.len() != self.vertices.len() {
            return Err(GeometryError::LengthMismatch {
                expected: self.vertices.len(),
                actual: labels.len(),
            });
        }
        if let Some(v) = labels.iter().position(|&l| l as usize >= classes.len()) {
            return Err(GeometryError::InvalidLabel {
                vertex: v,
                label: labels[v],
            });
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn vertices(&self) -> &[Point3<f64>] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[u32; 3]] {
        &self.triangles
    }

    pub fn distributions(&self) -> &[ClassDistribution] {
        &self.distributions
    }

    pub(crate) fn distributions_mut(&mut self) -> &mut [ClassDistribution] {
        &mut self.distributions
    }

    /// Replaces every distribution. Lengths must match the vertex count.
    pub fn set_distributions(&mut self, distributions: Vec<ClassDistribution>) -> Result<(), GeometryError> {
        if distributions.len() != self.vertices.len() {
            return Err(GeometryError::LengthMismatch {
                expected: self.vertices.len(),
                actual: distributions.len(),
            });
        }
        self.distributions = distributions;
        Ok(())
    }

    pub fn labels(&self) -> Option<&[u8]> {
        self.labels.as_deref()
    }

    pub fn class_count(&self) -> usize {
        self.distributions.first().map_or(0, ClassDistribution::len)
    }

    pub fn triangle_points(&self, t: usize) -> [Point3<f64>; 3] {
        let [a, b, c] = self.triangles[t];
        [
            self.vertices[a as usize],
            self.vertices[b as usize],
            self.vertices[c as usize],
        ]
    }

    /// Geometry-only copy: same vertices and triangles, fresh uniform
    /// distributions, no labels.
    pub fn geometry_only(&self, classes: usize) -> Self {
        Self {
            vertices: self.vertices.clone(),
            triangles: self.triangles.clone(),
            distributions: vec![ClassDistribution::uniform(classes); self.vertices.len()],
            labels: None,
        }
    }
}

/// One camera capture: image size, pose, intrinsics and frame index.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraFrame {
    width: u32,
    height: u32,
    camera_to_world: Matrix4<f64>,
    world_to_camera: Matrix4<f64>,
    projection: Matrix4<f64>,
    index: u64,
}

/// A point expressed in the camera frame, with its viewing-axis depth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPoint {
    pub position: Point3<f64>,
    pub depth: f64,
}

/// Result of projecting a world point into an image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Projection {
    /// Continuous pixel coordinates (may lie outside the image) and depth.
    Pixel {
        x: f64,
        y: f64,
        depth: f64,
    },
    BehindCamera,
}

impl Projection {
    pub fn pixel(self) -> Option<(f64, f64, f64)> {
        match self {
            Projection::Pixel { x, y, depth } => Some((x, y, depth)),
            Projection::BehindCamera => None,
        }
    }
}

impl CameraFrame {
    pub fn new(
        width: u32,
        height: u32,
        camera_to_world: Matrix4<f64>,
        projection: Matrix4<f64>,
        index: u64,
    ) -> Result<Self, GeometryError> {
        if width == 0 || height == 0 {
            return Err(GeometryError::InvalidCamera(format!("image size {width}x{height}")));
        }
        if !camera_to_world.iter().chain(projection.iter()).all(|v| v.is_finite()) {
            return Err(GeometryError::InvalidCamera("non-finite matrix entry".into()));
        }
        let world_to_camera = rigid_inverse(&camera_to_world)?;
        Ok(Self {
            width,
            height,
            camera_to_world,
            world_to_camera,
            projection,
            index,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn index(&self) -> u64 {
        self.index
    }

    pub fn camera_to_world(&self) -> &Matrix4<f64> {
        &self.camera_to_world
    }

    pub fn world_to_camera_matrix(&self) -> &Matrix4<f64> {
        &self.world_to_camera
    }

    pub fn projection(&self) -> &Matrix4<f64> {
        &self.projection
    }

    pub fn position(&self) -> Point3<f64> {
        Point3::new(
            self.camera_to_world[(0, 3)],
            self.camera_to_world[(1, 3)],
            self.camera_to_world[(2, 3)],
        )
    }

    /// Unit viewing direction (camera −Z) in world coordinates.
    pub fn forward(&self) -> Vector3<f64> {
        -Vector3::new(
            self.camera_to_world[(0, 2)],
            self.camera_to_world[(1, 2)],
            self.camera_to_world[(2, 2)],
        )
    }

    pub fn with_index(mut self, index: u64) -> Self {
        self.index = index;
        self
    }

    pub fn world_to_camera(&self, point: &Point3<f64>) -> CameraPoint {
        let position = self.world_to_camera.transform_point(point);
        CameraPoint {
            position,
            depth: -position.z,
        }
    }

    /// Projects a camera-space point. Points with depth ≤ 0 are behind the
    /// camera and never produce a pixel.
    pub fn project_camera_point(&self, point: &Point3<f64>) -> Projection {
        let depth = -point.z;
        if depth <= 0.0 {
            return Projection::BehindCamera;
        }
        let clip = self.projection * Vector4::new(point.x, point.y, point.z, 1.0);
        if clip.w <= 0.0 {
            return Projection::BehindCamera;
        }
        let ndc_x = clip.x / clip.w;
        let ndc_y = clip.y / clip.w;
        Projection::Pixel {
            x: (ndc_x + 1.0) * 0.5 * f64::from(self.width),
            y: (1.0 - ndc_y) * 0.5 * f64::from(self.height),
            depth,
        }
    }

    pub fn project_to_pixel(&self, point: &Point3<f64>) -> Projection {
        self.project_camera_point(&self.world_to_camera(point).position)
    }

    /// Integer pixel containing a continuous coordinate, if inside the image.
    pub fn pixel_index(&self, x: f64, y: f64) -> Option<(u32, u32)> {
        let (fx, fy) = (x.floor(), y.floor());
        if fx < 0.0 || fy < 0.0 || fx >= f64::from(self.width) || fy >= f64::from(self.height) {
            return None;
        }
        Some((fx as u32, fy as u32))
    }
}

impl fmt::Display for CameraFrame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let p = self.position();
        write!(
            f,
            "frame {} ({}x{}) at ({:.3}, {:.3}, {:.3})",
            self.index, self.width, self.height, p.x, p.y, p.z
        )
    }
}

/// Inverts a rotation+translation matrix as `[Rᵀ | −Rᵀt]`.
pub fn rigid_inverse(m: &Matrix4<f64>) -> Result<Matrix4<f64>, GeometryError> {
    let bottom = m.fixed_view::<1, 4>(3, 0);
    if bottom[0] != 0.0 || bottom[1] != 0.0 || bottom[2] != 0.0 || bottom[3] != 1.0 {
        return Err(GeometryError::InvalidCamera(
            "bottom row of camera_to_world must be [0 0 0 1]".into(),
        ));
    }
    let rotation: Matrix3<f64> = m.fixed_view::<3, 3>(0, 0).into_owned();
    let deviation = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
    if deviation > ORTHONORMAL_TOLERANCE {
        return Err(GeometryError::InvalidCamera(format!(
            "rotation block is not orthonormal (|RᵀR − I| = {deviation:e})"
        )));
    }
    if rotation.determinant() < 0.0 {
        return Err(GeometryError::InvalidCamera("rotation block is a reflection".into()));
    }
    let translation = m.fixed_view::<3, 1>(0, 3).into_owned();
    let rt = rotation.transpose();
    let mut inv = Matrix4::identity();
    inv.fixed_view_mut::<3, 3>(0, 0).copy_from(&rt);
    inv.fixed_view_mut::<3, 1>(0, 3).copy_from(&(-rt * translation));
    Ok(inv)
}

/// OpenGL-style perspective projection: camera looks down −Z, NDC depth is
/// −1 at `near` and +1 at `far`.
pub fn make_perspective(fov_y: f64, aspect: f64, near: f64, far: f64) -> Result<Matrix4<f64>, GeometryError> {
    if !(fov_y > 0.0 && fov_y < std::f64::consts::PI) {
        return Err(GeometryError::InvalidProjection(format!("fov_y {fov_y} rad")));
    }
    if !(aspect > 0.0 && aspect.is_finite()) {
        return Err(GeometryError::InvalidProjection(format!("aspect {aspect}")));
    }
    if !(near > 0.0 && far > near && far.is_finite()) {
        return Err(GeometryError::InvalidProjection(format!("near {near}, far {far}")));
    }
    let f = 1.0 / (fov_y / 2.0).tan();
    #[rustfmt::skip]
    let m = Matrix4::new(
        f / aspect, 0.0, 0.0,                          0.0,
        0.0,        f,   0.0,                          0.0,
        0.0,        0.0, (far + near) / (near - far),  2.0 * far * near / (near - far),
        0.0,        0.0, -1.0,                         0.0,
    );
    Ok(m)
}

/// Camera-to-world matrix for a camera at `eye` looking at `target`.
///
/// `up` only has to be non-parallel to the viewing direction.
pub fn look_at(eye: Point3<f64>, target: Point3<f64>, up: Vector3<f64>) -> Result<Matrix4<f64>, GeometryError> {
    let forward = target - eye;
    if forward.norm() < 1e-12 {
        return Err(GeometryError::InvalidCamera("eye and target coincide".into()));
    }
    let back = -forward.normalize();
    let right = up.cross(&back);
    if right.norm() < 1e-9 {
        return Err(GeometryError::InvalidCamera(
            "up is parallel to the view direction".into(),
        ));
    }
    let right = right.normalize();
    let true_up = back.cross(&right);
    let mut m = Matrix4::identity();
    m.fixed_view_mut::<3, 1>(0, 0).copy_from(&right);
    m.fixed_view_mut::<3, 1>(0, 1).copy_from(&true_up);
    m.fixed_view_mut::<3, 1>(0, 2).copy_from(&back);
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(&eye.coords);
    Ok(m)
}

/// Matrix entries in row-major order.
pub fn matrix_to_row_major(m: &Matrix4<f64>) -> [f64; 16] {
    let mut out = [0.0; 16];
    for r in 0..4 {
        for c in 0..4 {
            out[r * 4 + c] = m[(r, c)];
        }
    }
    out
}

pub fn matrix_from_row_major(values: &[f64; 16]) -> Matrix4<f64> {
    Matrix4::from_row_slice(values)
}
