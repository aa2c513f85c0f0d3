//! Sources of per-frame score maps.
//!
//! The fusion pipeline only needs "a dense per-pixel class distribution for
//! this frame". [`SegmentationSource`] captures that contract. Two sources
//! are provided: [`OracleSegmenter`] renders ground-truth labels from a
//! labeled scene and corrupts them through a [`NoiseModel`], and
//! [`FileSegmenter`] replays score maps recorded to disk in the SMAP format.
//!
//! # SMAP format
//!
//! Little-endian throughout:
//!
//! ```text
//! "SMAP"            4 bytes magic
//! width             u32
//! height            u32
//! class count       u32
//! probabilities     f32 × width × height × class count, row-major pixels,
//!                   classes contiguous per pixel
//! ```

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::fusion::ScoreMap;
use crate::geometry::{CameraFrame, ClassSet, SemanticMesh};
use crate::rasterizer;

pub const SMAP_MAGIC: &[u8; 4] = b"SMAP";

/// Pixels whose stored probabilities sum within this of 1 are renormalized
/// on load; anything further off is rejected.
pub const SMAP_RENORMALIZE_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum SegmentationError {
    #[error("scene has no ground-truth labels")]
    MissingLabels,
    #[error("score map file {0} not found")]
    MissingFile(PathBuf),
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
    #[error("malformed score map: {0}")]
    BadFormat(String),
    #[error("score map is {actual_width}x{actual_height}x{actual_classes}, expected {width}x{height}x{classes}")]
    DimensionMismatch {
        width: u32,
        height: u32,
        classes: usize,
        actual_width: u32,
        actual_height: u32,
        actual_classes: usize,
    },
    #[error("pixel ({x}, {y}) has invalid probabilities (sum {sum})")]
    InvalidProbabilities { x: u32, y: u32, sum: f64 },
    #[error("invalid noise model: {0}")]
    InvalidNoise(String),
}

/// A frame's BGRA8 pixels, row-major, 4 bytes per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BgraImage {
    pub width: u32,
    pub height: u32,
    pub data: Vec<u8>,
}

impl BgraImage {
    pub fn new(width: u32, height: u32, data: Vec<u8>) -> Option<Self> {
        (data.len() == width as usize * height as usize * 4).then_some(Self { width, height, data })
    }

    pub fn blank(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![0; width as usize * height as usize * 4],
        }
    }
}

/// Produces a score map over a fixed class set for a captured frame.
pub trait SegmentationSource: Send {
    fn class_set(&self) -> &ClassSet;

    /// `image` is the captured picture when one is available; sources that
    /// derive scores elsewhere may ignore it.
    fn segment(&self, frame: &CameraFrame, image: Option<&BgraImage>) -> Result<ScoreMap, SegmentationError>;
}

/// Label corruption applied by [`OracleSegmenter`].
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    /// Row = true class, column = emitted class; rows sum to 1.
    confusion: Vec<Vec<f64>>,
    /// Larger values give more peaked emitted distributions; `INFINITY`
    /// emits one-hot vectors.
    concentration: f64,
    seed: u64,
}

impl NoiseModel {
    pub fn new(confusion: Vec<Vec<f64>>, concentration: f64, seed: u64) -> Result<Self, SegmentationError> {
        let k = confusion.len();
        if k == 0 {
            return Err(SegmentationError::InvalidNoise("empty confusion matrix".into()));
        }
        for (i, row) in confusion.iter().enumerate() {
            if row.len() != k {
                return Err(SegmentationError::InvalidNoise(format!(
                    "row {i} has {} entries, expected {k}",
                    row.len()
                )));
            }
            if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(SegmentationError::InvalidNoise(format!("row {i} has a bad entry")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(SegmentationError::InvalidNoise(format!("row {i} sums to {sum}")));
            }
        }
        if concentration.is_nan() || concentration <= 0.0 {
            return Err(SegmentationError::InvalidNoise(format!(
                "concentration {concentration}"
            )));
        }
        Ok(Self {
            confusion,
            concentration,
            seed,
        })
    }

    /// Noiseless: identity confusion, one-hot output.
    pub fn exact(classes: usize, seed: u64) -> Self {
        Self::symmetric(classes, 0.0, f64::INFINITY, seed).expect("identity is valid")
    }

    /// Keeps the true class with probability `1 − flip` and spreads `flip`
    /// evenly over the other classes.
    pub fn symmetric(classes: usize, flip: f64, concentration: f64, seed: u64) -> Result<Self, SegmentationError> {
        if !(0.0..=1.0).contains(&flip) {
            return Err(SegmentationError::InvalidNoise(format!("flip rate {flip}")));
        }
        let off = if classes > 1 { flip / (classes - 1) as f64 } else { 0.0 };
        let confusion = (0..classes)
            .map(|i| {
                (0..classes)
                    .map(|j| {
                        if i == j {
                            if classes > 1 {
                                1.0 - flip
                            } else {
                                1.0
                            }
                        } else {
                            off
                        }
                    })
                    .collect()
            })
            .collect();
        Self::new(confusion, concentration, seed)
    }

    pub fn classes(&self) -> usize {
        self.confusion.len()
    }

    pub fn confusion(&self) -> &[Vec<f64>] {
        &self.confusion
    }

    pub fn concentration(&self) -> f64 {
        self.concentration
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Replaces one confusion row, e.g. to send `Chair` to `Unknown`.
    pub fn with_row(mut self, class: usize, row: Vec<f64>) -> Result<Self, SegmentationError> {
        let mut confusion = std::mem::take(&mut self.confusion);
        if class >= confusion.len() {
            return Err(SegmentationError::InvalidNoise(format!("class {class}")));
        }
        confusion[class] = row;
        Self::new(confusion, self.concentration, self.seed)
    }

    /// Mass placed on the emitted class.
    pub fn peak(&self) -> f64 {
        let k = self.classes() as f64;
        if self.concentration.is_infinite() || k == 1.0 {
            1.0
        } else {
            self.concentration / (self.concentration + k - 1.0)
        }
    }

    fn rng_for(&self, frame_index: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(crate::seed::mix(self.seed, frame_index))
    }

    fn sample(&self, rng: &mut ChaCha8Rng, truth: usize) -> usize {
        let row = &self.confusion[truth];
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (j, &p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                return j;
            }
        }
        // Rounding left u above the running sum; take the last non-zero entry.
        row.iter().rposition(|&p| p > 0.0).unwrap_or(truth)
    }
}

/// Class of a pixel covered by a triangle: the label at least two of its
/// vertices share, or `unknown` when all three differ.
pub fn triangle_majority(labels: [u8; 3], unknown: u8) -> u8 {
    if labels[0] == labels[1] || labels[0] == labels[2] {
        labels[0]
    } else if labels[1] == labels[2] {
        labels[1]
    } else {
        unknown
    }
}

/// Per-pixel class image of `labels` seen from `frame`; uncovered pixels get
/// `unknown`.
pub fn render_label_image(mesh: &SemanticMesh, labels: &[u8], frame: &CameraFrame, unknown: u8) -> Vec<u8> {
    let raster = rasterizer::render(mesh, frame);
    raster
        .triangle
        .iter()
        .map(|&t| {
            if t == rasterizer::NO_TRIANGLE {
                unknown
            } else {
                let tri = mesh.triangles()[t as usize];
                triangle_majority(tri.map(|v| labels[v as usize]), unknown)
            }
        })
        .collect()
}

/// Renders ground truth and corrupts it through `noise`. Deterministic in
/// `(scene, frame, noise)`.
pub fn oracle_segment(
    scene: &SemanticMesh,
    frame: &CameraFrame,
    noise: &NoiseModel,
    classes: &ClassSet,
) -> Result<ScoreMap, SegmentationError> {
    let labels = scene.labels().ok_or(SegmentationError::MissingLabels)?;
    let k = classes.len();
    if noise.classes() != k {
        return Err(SegmentationError::InvalidNoise(format!(
            "noise model has {} classes, class set has {k}",
            noise.classes()
        )));
    }
    let unknown = classes.unknown_index();
    let raster = rasterizer::render(scene, frame);
    let peak = noise.peak();
    let rest = if k > 1 { (1.0 - peak) / (k - 1) as f64 } else { 0.0 };
    let mut rng = noise.rng_for(frame.index());
    let mut data = Vec::with_capacity(raster.triangle.len() * k);
    for &t in &raster.triangle {
        let emitted = if t == rasterizer::NO_TRIANGLE {
            unknown
        } else {
            let tri = scene.triangles()[t as usize];
            let truth = triangle_majority(tri.map(|v| labels[v as usize]), unknown as u8);
            noise.sample(&mut rng, truth as usize)
        };
        data.extend((0..k).map(|j| if j == emitted { peak } else { rest }));
    }
    Ok(ScoreMap::new(frame.width(), frame.height(), k, data).expect("constructed distributions are valid"))
}

/// [`oracle_segment`] bound to a scene and noise model.
#[derive(Debug, Clone)]
pub struct OracleSegmenter {
    scene: SemanticMesh,
    classes: ClassSet,
    noise: NoiseModel,
}

impl OracleSegmenter {
    pub fn new(scene: SemanticMesh, classes: ClassSet, noise: NoiseModel) -> Result<Self, SegmentationError> {
        if scene.labels().is_none() {
            return Err(SegmentationError::MissingLabels);
        }
        if noise.classes() != classes.len() {
            return Err(SegmentationError::InvalidNoise(format!(
                "noise model has {} classes, class set has {}",
                noise.classes(),
                classes.len()
            )));
        }
        Ok(Self { scene, classes, noise })
    }
}

impl SegmentationSource for OracleSegmenter {
    fn class_set(&self) -> &ClassSet {
        &self.classes
    }

    fn segment(&self, frame: &CameraFrame, _image: Option<&BgraImage>) -> Result<ScoreMap, SegmentationError> {
        oracle_segment(&self.scene, frame, &self.noise, &self.classes)
    }
}

pub fn write_smap<W: Write>(mut out: W, map: &ScoreMap) -> io::Result<()> {
    let mut buf = Vec::with_capacity(16 + map.as_slice().len() * 4);
    buf.extend_from_slice(SMAP_MAGIC);
    buf.extend_from_slice(&map.width().to_le_bytes());
    buf.extend_from_slice(&map.height().to_le_bytes());
    buf.extend_from_slice(&(map.classes() as u32).to_le_bytes());
    for &p in map.as_slice() {
        buf.extend_from_slice(&(p as f32).to_le_bytes());
    }
    out.write_all(&buf)
}

pub fn write_smap_path(path: impl AsRef<Path>, map: &ScoreMap) -> io::Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write_smap(&mut out, map)?;
    out.flush()
}

/// Parses an SMAP stream, renormalizing pixels within
/// [`SMAP_RENORMALIZE_TOLERANCE`] of 1.
pub fn read_smap<R: Read>(mut input: R) -> Result<ScoreMap, SegmentationError> {
    let mut header = [0u8; 16];
    input
        .read_exact(&mut header)
        .map_err(|_| SegmentationError::BadFormat("truncated header".into()))?;
    if &header[..4] != SMAP_MAGIC {
        return Err(SegmentationError::BadFormat("bad magic".into()));
    }
    let word = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().expect("4 bytes"));
    let (width, height, classes) = (word(4), word(8), word(12) as usize);
    if classes == 0 {
        return Err(SegmentationError::BadFormat("zero classes".into()));
    }
    let count = width as usize * height as usize * classes;
    let mut raw = Vec::new();
    input.read_to_end(&mut raw)?;
    if raw.len() != count * 4 {
        return Err(SegmentationError::BadFormat(format!(
            "expected {} payload bytes, found {}",
            count * 4,
            raw.len()
        )));
    }
    let mut data: Vec<f64> = raw
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
        .collect();
    for (i, px) in data.chunks_exact_mut(classes).enumerate() {
        let sum: f64 = px.iter().sum();
        let valid = px.iter().all(|p| p.is_finite() && *p >= 0.0);
        if !valid || (sum - 1.0).abs() > SMAP_RENORMALIZE_TOLERANCE {
            return Err(SegmentationError::InvalidProbabilities {
                x: (i % width as usize) as u32,
                y: (i / width as usize) as u32,
                sum,
            });
        }
        px.iter_mut().for_each(|p| *p /= sum);
    }
    Ok(ScoreMap::new(width, height, classes, data).expect("renormalized above"))
}

pub fn read_smap_path(path: impl AsRef<Path>) -> Result<ScoreMap, SegmentationError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| match e.kind() {
        io::ErrorKind::NotFound => SegmentationError::MissingFile(path.to_path_buf()),
        _ => SegmentationError::Io(e),
    })?;
    read_smap(BufReader::new(file))
}

/// Replays recorded score maps named `frame_<index, 6 digits>.smap`.
#[derive(Debug, Clone)]
pub struct FileSegmenter {
    dir: PathBuf,
    classes: ClassSet,
}

impl FileSegmenter {
    pub fn new(dir: impl Into<PathBuf>, classes: ClassSet) -> Self {
        Self {
            dir: dir.into(),
            classes,
        }
    }

    pub fn path_for(&self, frame_index: u64) -> PathBuf {
        self.dir.join(smap_file_name(frame_index))
    }

    pub fn file_segment(&self, frame_index: u64) -> Result<ScoreMap, SegmentationError> {
        read_smap_path(self.path_for(frame_index))
    }
}

pub fn smap_file_name(frame_index: u64) -> String {
    format!("frame_{frame_index:06}.smap")
}

impl SegmentationSource for FileSegmenter {
    fn class_set(&self) -> &ClassSet {
        &self.classes
    }

    fn segment(&self, frame: &CameraFrame, _image: Option<&BgraImage>) -> Result<ScoreMap, SegmentationError> {
        let map = self.file_segment(frame.index())?;
        if map.width() != frame.width() || map.height() != frame.height() || map.classes() != self.classes.len() {
            return Err(SegmentationError::DimensionMismatch {
                width: frame.width(),
                height: frame.height(),
                classes: self.classes.len(),
                actual_width: map.width(),
                actual_height: map.height(),
                actual_classes: map.classes(),
            });
        }
        Ok(map)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::make_perspective;
    use nalgebra::{Matrix4, Point3};

    fn frame(w: u32, h: u32, index: u64) -> CameraFrame {
        let p = make_perspective(1.0, f64::from(w) / f64::from(h), 0.1, 50.0).unwrap();
        CameraFrame::new(w, h, Matrix4::identity(), p, index).unwrap()
    }

    /// Camera-filling wall labeled `label`, plus a small off-axis patch.
    fn wall(label: u8) -> SemanticMesh {
        let classes = ClassSet::default();
        SemanticMesh::new(
            vec![
                Point3::new(-50.0, -50.0, -3.0),
                Point3::new(50.0, -50.0, -3.0),
                Point3::new(50.0, 50.0, -3.0),
                Point3::new(-50.0, 50.0, -3.0),
            ],
            vec![[0, 1, 2], [0, 2, 3]],
            3,
        )
        .unwrap()
        .with_labels(vec![label; 4], &classes)
        .unwrap()
    }

    #[test]
    fn noiseless_oracle_is_one_hot_truth() {
        let classes = ClassSet::default();
        let map = oracle_segment(&wall(1), &frame(16, 12, 0), &NoiseModel::exact(3, 1), &classes).unwrap();
        for y in 0..12 {
            for x in 0..16 {
                assert_eq!(map.pixel(x, y), &[0.0, 1.0, 0.0]);
            }
        }
    }

    #[test]
    fn uncovered_pixels_are_unknown() {
        let classes = ClassSet::default();
        let empty = SemanticMesh::new(vec![], vec![], 3)
            .unwrap()
            .with_labels(vec![], &classes)
            .unwrap();
        let noise = NoiseModel::symmetric(3, 0.5, 4.0, 3).unwrap();
        let map = oracle_segment(&empty, &frame(8, 8, 0), &noise, &classes).unwrap();
        assert!(map.argmax(2).iter().all(|&c| c == 2));
    }

    #[test]
    fn missing_labels_rejected() {
        let mesh = SemanticMesh::new(vec![], vec![], 3).unwrap();
        assert!(matches!(
            oracle_segment(&mesh, &frame(4, 4, 0), &NoiseModel::exact(3, 0), &ClassSet::default()),
            Err(SegmentationError::MissingLabels)
        ));
    }

    #[test]
    fn flip_rate_matches_confusion() {
        // 400 x 250 = 10^5 pixels.
        let classes = ClassSet::default();
        let noise = NoiseModel::symmetric(3, 0.1, 8.0, 42).unwrap();
        let map = oracle_segment(&wall(1), &frame(400, 250, 7), &noise, &classes).unwrap();
        let flips = map.argmax(2).iter().filter(|&&c| c != 1).count();
        let rate = flips as f64 / 1e5;
        assert!((rate - 0.10).abs() <= 0.01, "flip rate {rate}");
    }

    #[test]
    fn uniform_confusion_ignores_truth() {
        let classes = ClassSet::default();
        let rows = vec![vec![1.0 / 3.0; 3]; 3];
        let noise = NoiseModel::new(rows, 8.0, 5).unwrap();
        let map = oracle_segment(&wall(0), &frame(300, 200, 0), &noise, &classes).unwrap();
        let labels = map.argmax(2);
        for c in 0..3u8 {
            let share = labels.iter().filter(|&&l| l == c).count() as f64 / labels.len() as f64;
            assert!((share - 1.0 / 3.0).abs() < 0.01, "class {c}: {share}");
        }
    }

    #[test]
    fn deterministic_per_seed_and_frame() {
        let classes = ClassSet::default();
        let noise = NoiseModel::symmetric(3, 0.3, 4.0, 9).unwrap();
        let a = oracle_segment(&wall(1), &frame(64, 48, 3), &noise, &classes).unwrap();
        let b = oracle_segment(&wall(1), &frame(64, 48, 3), &noise, &classes).unwrap();
        assert_eq!(a, b);
        let c = oracle_segment(&wall(1), &frame(64, 48, 4), &noise, &classes).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn majority_rule() {
        assert_eq!(triangle_majority([1, 1, 0], 2), 1);
        assert_eq!(triangle_majority([0, 1, 1], 2), 1);
        assert_eq!(triangle_majority([0, 1, 2], 2), 2);
        assert_eq!(triangle_majority([0, 0, 0], 2), 0);
    }

    #[test]
    fn smap_round_trip_and_tolerance() {
        let map = ScoreMap::new(2, 1, 3, vec![0.2, 0.3, 0.5, 0.9, 0.05, 0.05]).unwrap();
        let mut buf = Vec::new();
        write_smap(&mut buf, &map).unwrap();
        assert_eq!(buf.len(), 16 + 6 * 4);
        let back = read_smap(&buf[..]).unwrap();
        for (a, b) in back.as_slice().iter().zip(map.as_slice()) {
            assert!((a - b).abs() < 1e-7);
        }

        let encode = |px: [f32; 3]| {
            let mut b = Vec::from(&SMAP_MAGIC[..]);
            for w in [1u32, 1, 3] {
                b.extend_from_slice(&w.to_le_bytes());
            }
            for p in px {
                b.extend_from_slice(&p.to_le_bytes());
            }
            b
        };
        let slightly_off = read_smap(&encode([0.4995, 0.3, 0.2])[..]).unwrap();
        assert!((slightly_off.pixel(0, 0).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(matches!(
            read_smap(&encode([0.25, 0.15, 0.1])[..]),
            Err(SegmentationError::InvalidProbabilities { .. })
        ));
        assert!(matches!(read_smap(&b"SMAX"[..]), Err(SegmentationError::BadFormat(_))));
    }

    #[test]
    fn file_segmenter_errors_are_distinct() {
        let dir = tempfile::tempdir().unwrap();
        let seg = FileSegmenter::new(dir.path(), ClassSet::default());
        assert!(matches!(
            seg.segment(&frame(4, 4, 0), None),
            Err(SegmentationError::MissingFile(_))
        ));
        write_smap_path(seg.path_for(1), &ScoreMap::uniform(2, 2, 3)).unwrap();
        assert!(matches!(
            seg.segment(&frame(4, 4, 1), None),
            Err(SegmentationError::DimensionMismatch { .. })
        ));
        let ok = seg.segment(&frame(2, 2, 1), None).unwrap();
        assert_eq!(ok.width(), 2);
    }
}
