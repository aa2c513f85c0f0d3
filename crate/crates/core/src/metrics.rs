//! Confusion matrices and the four segmentation scores: pixel accuracy,
//! mean accuracy, mean IU and frequency-weighted IU.
//!
//! ```
//! use semfuse::metrics::ConfusionMatrix;
//!
//! let cm = ConfusionMatrix::from_counts(vec![vec![50, 50], vec![0, 100]]).unwrap();
//! assert_eq!(cm.pixel_accuracy().unwrap(), 0.75);
//! assert!((cm.mean_iu().unwrap() - 0.58333).abs() < 1e-4);
//! ```

use std::fmt::Write as _;

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("prediction has {predicted} elements, ground truth {truth}")]
    ShapeMismatch { predicted: usize, truth: usize },
    #[error("label {label} outside {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("confusion matrices over {0} and {1} classes")]
    ClassCountMismatch(usize, usize),
    #[error("confusion matrix must be square and non-empty")]
    NotSquare,
    #[error("metrics undefined for an empty confusion matrix")]
    Empty,
}

/// Row = ground truth, column = prediction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scores {
    pub pixel_accuracy: f64,
    pub mean_accuracy: f64,
    pub mean_iu: f64,
    pub frequency_weighted_iu: f64,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn from_counts(rows: Vec<Vec<u64>>) -> Result<Self, MetricsError> {
        let k = rows.len();
        if k == 0 || rows.iter().any(|r| r.len() != k) {
            return Err(MetricsError::NotSquare);
        }
        Ok(Self {
            classes: k,
            counts: rows.into_iter().flatten().collect(),
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.classes + predicted]
    }

    pub fn add(&mut self, truth: usize, predicted: usize, n: u64) {
        self.counts[truth * self.classes + predicted] += n;
    }

    /// Number of elements with ground truth `class` (t_i).
    pub fn support(&self, class: usize) -> u64 {
        self.counts[class * self.classes..(class + 1) * self.classes]
            .iter()
            .sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    fn predicted_total(&self, class: usize) -> u64 {
        (0..self.classes).map(|i| self.get(i, class)).sum()
    }

    /// Adds one count per element pair. Works for label images and
    /// per-vertex labels alike.
    pub fn accumulate(&mut self, predicted: &[u8], truth: &[u8]) -> Result<(), MetricsError> {
        if predicted.len() != truth.len() {
            return Err(MetricsError::ShapeMismatch {
                predicted: predicted.len(),
                truth: truth.len(),
            });
        }
        if let Some(&l) = predicted.iter().chain(truth).find(|&&l| usize::from(l) >= self.classes) {
            return Err(MetricsError::LabelOutOfRange {
                label: l.into(),
                classes: self.classes,
            });
        }
        for (&p, &t) in predicted.iter().zip(truth) {
            self.add(t.into(), p.into(), 1);
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<(), MetricsError> {
        if other.classes != self.classes {
            return Err(MetricsError::ClassCountMismatch(self.classes, other.classes));
        }
        self.counts.iter_mut().zip(&other.counts).for_each(|(a, b)| *a += b);
        Ok(())
    }

    fn require_nonempty(&self) -> Result<f64, MetricsError> {
        match self.total() {
            0 => Err(MetricsError::Empty),
            n => Ok(n as f64),
        }
    }

    fn supported(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.classes).filter(|&i| self.support(i) > 0)
    }

    fn iu(&self, i: usize) -> f64 {
        let nii = self.get(i, i) as f64;
        nii / (self.support(i) + self.predicted_total(i) - self.get(i, i)) as f64
    }

    /// Σ n_ii / Σ t_i
    pub fn pixel_accuracy(&self) -> Result<f64, MetricsError> {
        let total = self.require_nonempty()?;
        let diag: u64 = (0..self.classes).map(|i| self.get(i, i)).sum();
        Ok(diag as f64 / total)
    }

    /// Mean of n_ii / t_i over classes with t_i > 0.
    pub fn mean_accuracy(&self) -> Result<f64, MetricsError> {
        self.require_nonempty()?;
        let acc: Vec<f64> = self
            .supported()
            .map(|i| self.get(i, i) as f64 / self.support(i) as f64)
            .collect();
        Ok(acc.iter().sum::<f64>() / acc.len() as f64)
    }

    /// Mean of n_ii / (t_i + Σ_j n_ji − n_ii) over classes with t_i > 0.
    pub fn mean_iu(&self) -> Result<f64, MetricsError> {
        self.require_nonempty()?;
        let ius: Vec<f64> = self.supported().map(|i| self.iu(i)).collect();
        Ok(ius.iter().sum::<f64>() / ius.len() as f64)
    }

    /// (Σ t_k)⁻¹ Σ t_i · IU_i
    pub fn frequency_weighted_iu(&self) -> Result<f64, MetricsError> {
        let total = self.require_nonempty()?;
        let weighted: f64 = self.supported().map(|i| self.support(i) as f64 * self.iu(i)).sum();
        Ok(weighted / total)
    }

    pub fn scores(&self) -> Result<Scores, MetricsError> {
        Ok(Scores {
            pixel_accuracy: self.pixel_accuracy()?,
            mean_accuracy: self.mean_accuracy()?,
            mean_iu: self.mean_iu()?,
            frequency_weighted_iu: self.frequency_weighted_iu()?,
        })
    }
}

impl Scores {
    pub const CSV_HEADER: &'static str = "pixel_accuracy,mean_accuracy,mean_iu,frequency_weighted_iu";

    /// Percentages with two decimals.
    pub fn csv_row(&self) -> String {
        format!(
            "{:.2},{:.2},{:.2},{:.2}",
            100.0 * self.pixel_accuracy,
            100.0 * self.mean_accuracy,
            100.0 * self.mean_iu,
            100.0 * self.frequency_weighted_iu
        )
    }

    pub fn table(&self) -> String {
        let mut s = String::new();
        for (name, v) in [
            ("pixel accuracy", self.pixel_accuracy),
            ("mean accuracy", self.mean_accuracy),
            ("mean IU", self.mean_iu),
            ("f.w. IU", self.frequency_weighted_iu),
        ] {
            let _ = writeln!(s, "{name:<16}{:>7.2}", 100.0 * v);
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Direct transcription of the formulas over a dense matrix.
    fn naive(n: &[Vec<u64>]) -> [f64; 4] {
        let k = n.len();
        let t: Vec<f64> = (0..k).map(|i| n[i].iter().sum::<u64>() as f64).collect();
        let total: f64 = t.iter().sum();
        let col = |i: usize| (0..k).map(|j| n[j][i] as f64).sum::<f64>();
        let present: Vec<usize> = (0..k).filter(|&i| t[i] > 0.0).collect();
        let ncl = present.len() as f64;
        let iu = |i: usize| n[i][i] as f64 / (t[i] + col(i) - n[i][i] as f64);
        [
            (0..k).map(|i| n[i][i] as f64).sum::<f64>() / total,
            present.iter().map(|&i| n[i][i] as f64 / t[i]).sum::<f64>() / ncl,
            present.iter().map(|&i| iu(i)).sum::<f64>() / ncl,
            present.iter().map(|&i| t[i] * iu(i)).sum::<f64>() / total,
        ]
    }

    fn values(cm: &ConfusionMatrix) -> [f64; 4] {
        let s = cm.scores().unwrap();
        [s.pixel_accuracy, s.mean_accuracy, s.mean_iu, s.frequency_weighted_iu]
    }

    #[test]
    fn worked_two_class_example() {
        let cm = ConfusionMatrix::from_counts(vec![vec![50, 50], vec![0, 100]]).unwrap();
        let [pa, ma, miu, fw] = values(&cm);
        assert!((pa - 0.75).abs() < 1e-12);
        assert!((ma - 0.75).abs() < 1e-12);
        assert!((miu - (0.5 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
        assert!((fw - (0.5 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn perfect_prediction_is_one() {
        let mut cm = ConfusionMatrix::new(3);
        cm.accumulate(&[0, 1, 2, 2, 0], &[0, 1, 2, 2, 0]).unwrap();
        assert_eq!(values(&cm), [1.0; 4]);
    }

    #[test]
    fn accumulate_and_errors() {
        let mut cm = ConfusionMatrix::new(2);
        cm.accumulate(&[0; 100], &[0; 100]).unwrap();
        assert_eq!(cm.get(0, 0), 100);
        let before = cm.clone();
        cm.accumulate(&[], &[]).unwrap();
        assert_eq!(cm, before);
        assert!(matches!(
            cm.accumulate(&[0], &[]),
            Err(MetricsError::ShapeMismatch { .. })
        ));
        assert!(matches!(
            cm.accumulate(&[2], &[0]),
            Err(MetricsError::LabelOutOfRange { .. })
        ));
        assert_eq!(ConfusionMatrix::new(2).pixel_accuracy(), Err(MetricsError::Empty));
        assert!(cm.merge(&ConfusionMatrix::new(3)).is_err());
    }

    #[test]
    fn zero_support_class_excluded() {
        // Class 2 never occurs in the ground truth but is predicted once.
        let cm = ConfusionMatrix::from_counts(vec![vec![9, 0, 1], vec![0, 10, 0], vec![0, 0, 0]]).unwrap();
        assert!((cm.mean_accuracy().unwrap() - 0.95).abs() < 1e-12);
    }

    #[test]
    fn formatting() {
        let cm = ConfusionMatrix::from_counts(vec![vec![50, 50], vec![0, 100]]).unwrap();
        let s = cm.scores().unwrap();
        assert_eq!(s.csv_row(), "75.00,75.00,58.33,58.33");
        assert!(s.table().contains("mean IU           58.33"));
    }

    fn matrix() -> impl Strategy<Value = Vec<Vec<u64>>> {
        (1usize..6)
            .prop_flat_map(|k| prop::collection::vec(prop::collection::vec(0u64..1000, k), k))
            .prop_filter("non-empty", |m| m.iter().flatten().any(|&c| c > 0))
    }

    proptest! {
        #[test]
        fn matches_naive_formulas(m in matrix()) {
            let cm = ConfusionMatrix::from_counts(m.clone()).unwrap();
            let got = values(&cm);
            for (g, w) in got.iter().zip(naive(&m)) {
                prop_assert!((g - w).abs() < 1e-12);
                prop_assert!((0.0..=1.0).contains(g));
            }
        }

        #[test]
        fn accumulate_matches_counting(pairs in prop::collection::vec((0u8..4, 0u8..4), 0..300)) {
            let (p, t): (Vec<u8>, Vec<u8>) = pairs.iter().copied().unzip();
            let mut cm = ConfusionMatrix::new(4);
            cm.accumulate(&p, &t).unwrap();
            for i in 0..4 {
                for j in 0..4 {
                    let n = pairs.iter().filter(|&&(pp, tt)| tt as usize == i && pp as usize == j).count();
                    prop_assert_eq!(cm.get(i, j), n as u64);
                }
            }
        }

        #[test]
        fn permutation_and_scaling_invariant(m in matrix(), scale in 1u64..7, rot in 0usize..5) {
            let k = m.len();
            let base = values(&ConfusionMatrix::from_counts(m.clone()).unwrap());
            let perm: Vec<usize> = (0..k).map(|i| (i + rot) % k).collect();
            let permuted: Vec<Vec<u64>> = (0..k).map(|i| (0..k).map(|j| m[perm[i]][perm[j]]).collect()).collect();
            let scaled: Vec<Vec<u64>> = m.iter().map(|r| r.iter().map(|c| c * scale).collect()).collect();
            for other in [permuted, scaled] {
                let v = values(&ConfusionMatrix::from_counts(other).unwrap());
                for (a, b) in base.iter().zip(v) {
                    prop_assert!((a - b).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn merge_equals_joint_accumulation(a in prop::collection::vec((0u8..3, 0u8..3), 0..100), b in prop::collection::vec((0u8..3, 0u8..3), 0..100)) {
            let cm_of = |pairs: &[(u8, u8)]| {
                let (p, t): (Vec<u8>, Vec<u8>) = pairs.iter().copied().unzip();
                let mut cm = ConfusionMatrix::new(3);
                cm.accumulate(&p, &t).unwrap();
                cm
            };
            let mut merged = cm_of(&a);
            merged.merge(&cm_of(&b)).unwrap();
            let joint: Vec<_> = a.iter().chain(&b).copied().collect();
            prop_assert_eq!(merged, cm_of(&joint));
        }
    }
}
