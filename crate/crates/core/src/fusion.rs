//! Recursive Bayesian fusion of per-pixel class scores onto mesh vertices.
//!
//! Every vertex keeps a distribution `P(l | I_0..I_k)` over the class set. For
//! each new frame `I_k`, every vertex that passes the visibility gate reads
//! the score-map pixel it projects to and is updated as
//!
//! ```text
//! P(l | I_0..I_k) = η · P(O_u = l | I_k) · P(l | I_0..I_{k-1})
//! ```
//!
//! with `η` the normalizer. After normalization every entry is held at or
//! above a small probability floor so that a single confident miss can never
//! zero a class out permanently.
//!
//! A vertex closer than [`FusionConfig::near_skip_distance`] is not updated
//! from a pixel whose most likely class is `Unknown`; partial close-up views
//! of objects are often segmented as background.

use thiserror::Error;

use crate::geometry::{argmax_prefer, CameraFrame, ClassDistribution, ClassSet, SemanticMesh};
use crate::rasterizer::{self, RasterError, DEFAULT_VISIBILITY_TOLERANCE};

pub const DEFAULT_NEAR_SKIP_DISTANCE: f64 = 2.0;
pub const DEFAULT_EPSILON_FLOOR: f64 = 1e-6;

/// Per-pixel sums must be within this of 1.
pub const SCORE_SUM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FusionError {
    #[error("class set is empty")]
    EmptyClassSet,
    #[error("expected {expected} classes, got {actual}")]
    ClassCountMismatch { expected: usize, actual: usize },
    #[error("score map is {map_width}x{map_height} but the frame is {frame_width}x{frame_height}")]
    DimensionMismatch {
        map_width: u32,
        map_height: u32,
        frame_width: u32,
        frame_height: u32,
    },
    #[error("non-finite or negative probability {0}")]
    InvalidProbability(f64),
    #[error("pixel ({x}, {y}) sums to {sum}")]
    NotNormalized { x: u32, y: u32, sum: f64 },
    #[error("prior and likelihood have disjoint support")]
    DisjointSupport,
    #[error("invalid fusion parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Raster(#[from] RasterError),
}

/// Per-pixel class distributions for one image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMap {
    width: u32,
    height: u32,
    classes: usize,
    data: Vec<f64>,
}

impl ScoreMap {
    /// Wraps row-major per-pixel distributions, checking that each pixel is a
    /// valid distribution within [`SCORE_SUM_TOLERANCE`].
    pub fn new(width: u32, height: u32, classes: usize, data: Vec<f64>) -> Result<Self, FusionError> {
        if classes == 0 {
            return Err(FusionError::EmptyClassSet);
        }
        let expected = width as usize * height as usize * classes;
        if data.len() != expected {
            return Err(FusionError::ClassCountMismatch {
                expected,
                actual: data.len(),
            });
        }
        for (i, px) in data.chunks_exact(classes).enumerate() {
            if let Some(&p) = px.iter().find(|p| !p.is_finite() || **p < 0.0) {
                return Err(FusionError::InvalidProbability(p));
            }
            let sum: f64 = px.iter().sum();
            if (sum - 1.0).abs() > SCORE_SUM_TOLERANCE {
                return Err(FusionError::NotNormalized {
                    x: (i % width as usize) as u32,
                    y: (i / width as usize) as u32,
                    sum,
                });
            }
        }
        Ok(Self {
            width,
            height,
            classes,
            data,
        })
    }

    pub fn uniform(width: u32, height: u32, classes: usize) -> Self {
        Self {
            width,
            height,
            classes,
            data: vec![1.0 / classes as f64; width as usize * height as usize * classes],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn pixel(&self, x: u32, y: u32) -> &[f64] {
        let start = (y as usize * self.width as usize + x as usize) * self.classes;
        &self.data[start..start + self.classes]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Most likely class per pixel, ties resolved towards `unknown`.
    pub fn argmax(&self, unknown: usize) -> Vec<u8> {
        self.data
            .chunks_exact(self.classes)
            .map(|px| argmax_prefer(px, unknown) as u8)
            .collect()
    }
}

/// One recursive Bayes step: element-wise product, normalization, then the
/// probability floor.
pub fn bayes_update(prior: &[f64], likelihood: &[f64], epsilon_floor: f64) -> Result<ClassDistribution, FusionError> {
    if prior.len() != likelihood.len() {
        return Err(FusionError::ClassCountMismatch {
            expected: prior.len(),
            actual: likelihood.len(),
        });
    }
    if prior.is_empty() {
        return Err(FusionError::EmptyClassSet);
    }
    if let Some(&p) = prior.iter().chain(likelihood).find(|p| !p.is_finite() || **p < 0.0) {
        return Err(FusionError::InvalidProbability(p));
    }
    let mut posterior: Vec<f64> = prior.iter().zip(likelihood).map(|(p, l)| p * l).collect();
    let sum: f64 = posterior.iter().sum();
    if sum <= 0.0 {
        return Err(FusionError::DisjointSupport);
    }
    posterior.iter_mut().for_each(|p| *p /= sum);
    apply_floor(&mut posterior, epsilon_floor);
    Ok(ClassDistribution::from_raw(posterior))
}

/// Raises entries below `floor` to exactly `floor` and rescales the rest so
/// the total stays 1.
fn apply_floor(probs: &mut [f64], floor: f64) {
    if floor <= 0.0 {
        return;
    }
    let n = probs.len();
    if floor * n as f64 >= 1.0 {
        probs.iter_mut().for_each(|p| *p = 1.0 / n as f64);
        return;
    }
    let mut pinned = vec![false; n];
    loop {
        let mut changed = false;
        for (p, pin) in probs.iter_mut().zip(pinned.iter_mut()) {
            if !*pin && *p < floor {
                *p = floor;
                *pin = true;
                changed = true;
            }
        }
        if !changed {
            return;
        }
        let pinned_mass = floor * pinned.iter().filter(|&&p| p).count() as f64;
        let free: f64 = probs.iter().zip(&pinned).filter(|(_, &pin)| !pin).map(|(p, _)| p).sum();
        let scale = (1.0 - pinned_mass) / free;
        for (p, _) in probs.iter_mut().zip(&pinned).filter(|(_, &pin)| !pin) {
            *p *= scale;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionConfig {
    /// Maximum |vertex depth − rendered depth| for a vertex to count as seen.
    pub visibility_tolerance: f64,
    /// Vertices closer than this are not updated from `Unknown`-argmax
    /// pixels. Zero disables the rule.
    pub near_skip_distance: f64,
    pub epsilon_floor: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            visibility_tolerance: DEFAULT_VISIBILITY_TOLERANCE,
            near_skip_distance: DEFAULT_NEAR_SKIP_DISTANCE,
            epsilon_floor: DEFAULT_EPSILON_FLOOR,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<(), FusionError> {
        if !(self.visibility_tolerance >= 0.0 && self.visibility_tolerance.is_finite()) {
            return Err(FusionError::InvalidParameter(format!(
                "visibility tolerance {}",
                self.visibility_tolerance
            )));
        }
        if !(self.near_skip_distance >= 0.0 && self.near_skip_distance.is_finite()) {
            return Err(FusionError::InvalidParameter(format!(
                "near-skip distance {}",
                self.near_skip_distance
            )));
        }
        if !(0.0..1.0).contains(&self.epsilon_floor) {
            return Err(FusionError::InvalidParameter(format!(
                "epsilon floor {}",
                self.epsilon_floor
            )));
        }
        Ok(())
    }
}

/// What a single [`FusionState::fuse_frame`] call did.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct UpdateReport {
    pub frame_index: u64,
    /// Vertices whose distribution was updated, ascending.
    pub updated: Vec<u32>,
    /// Visible vertices left alone by the near-field `Unknown` rule.
    pub skipped_near: Vec<u32>,
    /// Vertices that failed the visibility gate.
    pub invisible: usize,
}

/// The fused semantic map: mesh, per-vertex distributions and frame count.
#[derive(Debug, Clone)]
pub struct FusionState {
    mesh: SemanticMesh,
    class_set: ClassSet,
    config: FusionConfig,
    frames_fused: u64,
}

impl FusionState {
    /// Starts from a uniform distribution at every vertex.
    pub fn new(mesh: &SemanticMesh, class_set: ClassSet, config: FusionConfig) -> Result<Self, FusionError> {
        if class_set.is_empty() {
            return Err(FusionError::EmptyClassSet);
        }
        config.validate()?;
        Ok(Self {
            mesh: mesh.geometry_only(class_set.len()),
            class_set,
            config,
            frames_fused: 0,
        })
    }

    /// Continues from a mesh that already carries fused distributions.
    pub fn resume(
        mesh: SemanticMesh,
        class_set: ClassSet,
        config: FusionConfig,
        frames_fused: u64,
    ) -> Result<Self, FusionError> {
        config.validate()?;
        if mesh.class_count() != class_set.len() && !mesh.vertices().is_empty() {
            return Err(FusionError::ClassCountMismatch {
                expected: class_set.len(),
                actual: mesh.class_count(),
            });
        }
        Ok(Self {
            mesh,
            class_set,
            config,
            frames_fused,
        })
    }

    pub fn mesh(&self) -> &SemanticMesh {
        &self.mesh
    }

    pub fn class_set(&self) -> &ClassSet {
        &self.class_set
    }

    pub fn config(&self) -> &FusionConfig {
        &self.config
    }

    pub fn frames_fused(&self) -> u64 {
        self.frames_fused
    }

    pub fn distribution(&self, vertex: usize) -> &ClassDistribution {
        &self.mesh.distributions()[vertex]
    }

    /// Fuses one segmented frame. Either every update is applied or, on
    /// error, none is.
    pub fn fuse_frame(&mut self, frame: &CameraFrame, scores: &ScoreMap) -> Result<UpdateReport, FusionError> {
        if scores.width() != frame.width() || scores.height() != frame.height() {
            return Err(FusionError::DimensionMismatch {
                map_width: scores.width(),
                map_height: scores.height(),
                frame_width: frame.width(),
                frame_height: frame.height(),
            });
        }
        if scores.classes() != self.class_set.len() {
            return Err(FusionError::ClassCountMismatch {
                expected: self.class_set.len(),
                actual: scores.classes(),
            });
        }
        let depth = rasterizer::render_depth(&self.mesh, frame);
        let visible = rasterizer::visible_vertices(&self.mesh, frame, &depth, self.config.visibility_tolerance)?;
        let unknown = self.class_set.unknown_index();

        let mut report = UpdateReport {
            frame_index: frame.index(),
            invisible: self.mesh.vertices().len() - visible.len(),
            ..UpdateReport::default()
        };
        let mut pending = Vec::with_capacity(visible.len());
        for v in &visible {
            let (px, py) = v.pixel();
            let likelihood = scores.pixel(px, py);
            if v.depth < self.config.near_skip_distance && argmax_prefer(likelihood, unknown) == unknown {
                report.skipped_near.push(v.vertex);
                continue;
            }
            let prior = self.mesh.distributions()[v.vertex as usize].probabilities();
            pending.push((v.vertex, bayes_update(prior, likelihood, self.config.epsilon_floor)?));
        }

        let distributions = self.mesh.distributions_mut();
        for (vertex, posterior) in pending {
            distributions[vertex as usize] = posterior;
            report.updated.push(vertex);
        }
        self.frames_fused += 1;
        Ok(report)
    }

    /// Most likely class per vertex; ties go to `Unknown`, then the lowest
    /// class index.
    pub fn argmax_labels(&self) -> Vec<u8> {
        let unknown = self.class_set.unknown_index();
        self.mesh
            .distributions()
            .iter()
            .map(|d| d.argmax(unknown) as u8)
            .collect()
    }
}
