//! Gaze-ray selection over extracted components and the lamp actuator.

use std::fmt;
use std::process::Command;

use nalgebra::{Point3, Vector3};
use thiserror::Error;

use crate::components::LabeledComponent;

/// Determinant threshold below which a ray counts as parallel to a triangle.
pub const DETERMINANT_EPSILON: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum InteractionError {
    #[error("gaze direction must be finite and non-zero")]
    DegenerateDirection,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GazeRay {
    origin: Point3<f64>,
    direction: Vector3<f64>,
}

impl GazeRay {
    /// Normalizes `direction`.
    pub fn new(origin: Point3<f64>, direction: Vector3<f64>) -> Result<Self, InteractionError> {
        let norm = direction.norm();
        if !norm.is_finite() || norm == 0.0 || !origin.coords.iter().all(|c| c.is_finite()) {
            return Err(InteractionError::DegenerateDirection);
        }
        Ok(Self {
            origin,
            direction: direction / norm,
        })
    }

    pub fn towards(origin: Point3<f64>, target: Point3<f64>) -> Result<Self, InteractionError> {
        Self::new(origin, target - origin)
    }

    pub fn origin(&self) -> Point3<f64> {
        self.origin
    }

    pub fn direction(&self) -> Vector3<f64> {
        self.direction
    }

    pub fn at(&self, t: f64) -> Point3<f64> {
        self.origin + self.direction * t
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RayHit {
    pub component_id: u32,
    pub class_name: String,
    pub point: Point3<f64>,
    pub distance: f64,
    pub triangle: usize,
}

/// Möller–Trumbore, two-sided. Returns the ray parameter of a hit in front
/// of the origin.
pub fn intersect_triangle(ray: &GazeRay, a: &Point3<f64>, b: &Point3<f64>, c: &Point3<f64>) -> Option<f64> {
    let e1 = b - a;
    let e2 = c - a;
    let p = ray.direction.cross(&e2);
    let det = e1.dot(&p);
    if det.abs() < DETERMINANT_EPSILON {
        return None;
    }
    let inv = 1.0 / det;
    let s = ray.origin - a;
    let u = s.dot(&p) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let q = s.cross(&e1);
    let v = ray.direction.dot(&q) * inv;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let t = e2.dot(&q) * inv;
    (t > 0.0).then_some(t)
}

/// Slab test; true when the ray can reach the box in front of its origin.
fn hits_box(ray: &GazeRay, lo: &Point3<f64>, hi: &Point3<f64>) -> bool {
    let mut t_min = 0.0_f64;
    let mut t_max = f64::INFINITY;
    for k in 0..3 {
        let o = ray.origin[k];
        let d = ray.direction[k];
        if d.abs() < f64::MIN_POSITIVE {
            if o < lo[k] || o > hi[k] {
                return false;
            }
            continue;
        }
        let (mut t0, mut t1) = ((lo[k] - o) / d, (hi[k] - o) / d);
        if t0 > t1 {
            std::mem::swap(&mut t0, &mut t1);
        }
        t_min = t_min.max(t0);
        t_max = t_max.min(t1);
        if t_min > t_max {
            return false;
        }
    }
    true
}

fn bounds(points: &[Point3<f64>]) -> (Point3<f64>, Point3<f64>) {
    let mut lo = Point3::from(Vector3::repeat(f64::INFINITY));
    let mut hi = Point3::from(Vector3::repeat(f64::NEG_INFINITY));
    for p in points {
        for k in 0..3 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    // Pad so that flat components still pass the slab test robustly.
    let pad = Vector3::repeat(1e-9);
    (lo - pad, hi + pad)
}

/// Nearest hit over all component triangles, or `None`.
///
/// Ties in distance keep the earlier component and triangle.
pub fn raycast(ray: &GazeRay, components: &[LabeledComponent]) -> Option<RayHit> {
    let mut best: Option<RayHit> = None;
    for comp in components {
        let (lo, hi) = bounds(&comp.vertices);
        if !hits_box(ray, &lo, &hi) {
            continue;
        }
        for (ti, t) in comp.triangles.iter().enumerate() {
            let [a, b, c] = t.map(|i| comp.vertices[i as usize]);
            if let Some(d) = intersect_triangle(ray, &a, &b, &c) {
                if best.as_ref().is_none_or(|h| d < h.distance) {
                    best = Some(RayHit {
                        component_id: comp.id,
                        class_name: comp.class_name.clone(),
                        point: ray.at(d),
                        distance: d,
                        triangle: ti,
                    });
                }
            }
        }
    }
    best
}

/// What the client reports after an air tap: where the ray ended and the
/// class of the hit hologram.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub point: Point3<f64>,
    pub class_name: String,
}

impl From<&RayHit> for Selection {
    fn from(hit: &RayHit) -> Self {
        Self {
            point: hit.point,
            class_name: hit.class_name.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ActuatorState {
    pub lamp_on: bool,
    pub toggle_count: u64,
    pub last_selection: Option<Selection>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActionReport {
    /// Logical time: number of frames fused when the selection arrived.
    pub timestamp: u64,
    pub class_name: String,
    pub point: Point3<f64>,
    pub lamp_on: bool,
    pub toggled: bool,
    /// Whether the selected hologram should be drawn as selected.
    pub selected: bool,
}

impl fmt::Display for ActionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "t={} class={} point=({:.4},{:.4},{:.4}) lamp_on={} toggled={} selected={}",
            self.timestamp,
            self.class_name,
            self.point.x,
            self.point.y,
            self.point.z,
            self.lamp_on,
            self.toggled,
            self.selected
        )
    }
}

/// Applies a selection: `Lamp` toggles the lamp, anything else is only
/// recorded.
pub fn handle_selection(selection: &Selection, state: &ActuatorState, timestamp: u64) -> (ActuatorState, ActionReport) {
    let toggled = selection.class_name.eq_ignore_ascii_case("lamp");
    let mut next = state.clone();
    if toggled {
        next.lamp_on = !next.lamp_on;
        next.toggle_count += 1;
    }
    next.last_selection = Some(selection.clone());
    let report = ActionReport {
        timestamp,
        class_name: selection.class_name.clone(),
        point: selection.point,
        lamp_on: next.lamp_on,
        toggled,
        selected: true,
    };
    (next, report)
}

/// Optional shell command run on every lamp toggle, with `SEMFUSE_LAMP_ON`
/// set to `1` or `0`.
#[derive(Debug, Clone, Default)]
pub struct ActuationHook {
    command: Option<String>,
}

impl ActuationHook {
    pub fn disabled() -> Self {
        Self::default()
    }

    pub fn shell(command: impl Into<String>) -> Self {
        Self {
            command: Some(command.into()),
        }
    }

    pub fn is_enabled(&self) -> bool {
        self.command.is_some()
    }

    /// Runs the hook for a toggle report; failures are logged, not raised.
    pub fn fire(&self, report: &ActionReport) {
        let Some(cmd) = &self.command else { return };
        if !report.toggled {
            return;
        }
        let status = Command::new("sh")
            .arg("-c")
            .arg(cmd)
            .env("SEMFUSE_LAMP_ON", if report.lamp_on { "1" } else { "0" })
            .status();
        match status {
            Ok(s) if s.success() => log::debug!("actuation hook ran: {cmd}"),
            Ok(s) => log::warn!("actuation hook `{cmd}` exited with {s}"),
            Err(e) => log::warn!("actuation hook `{cmd}` failed to start: {e}"),
        }
    }
}
