//! Confusion matrices and the F1 family.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Square matrix of counts; rows are true classes, columns predictions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    n: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(n: usize) -> Self {
        Self { n, counts: vec![0; n * n] }
    }

    /// Validating constructor: rows must form a square matrix of non-negative counts.
    pub fn from_rows(rows: &[Vec<i64>]) -> Result<Self> {
        let n = rows.len();
        let mut m = Self::new(n);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(invalid(format!("confusion matrix is not square: row {i} has {} entries, expected {n}", row.len())));
            }
            for (j, &v) in row.iter().enumerate() {
                if v < 0 {
                    return Err(invalid(format!("confusion matrix entry ({i}, {j}) is negative: {v}")));
                }
                m.counts[i * n + j] = v as u64;
            }
        }
        Ok(m)
    }

    pub fn from_predictions(n: usize, truth: &[usize], pred: &[usize]) -> Result<Self> {
        if truth.len() != pred.len() {
            return Err(invalid(format!("{} labels but {} predictions", truth.len(), pred.len())));
        }
        let mut m = Self::new(n);
        for (&t, &p) in truth.iter().zip(pred) {
            if t >= n || p >= n {
                return Err(invalid(format!("label pair ({t}, {p}) out of range for {n} classes")));
            }
            m.counts[t * n + p] += 1;
        }
        Ok(m)
    }

    pub fn classes(&self) -> usize {
        self.n
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.n + pred]
    }

    pub fn add(&mut self, truth: usize, pred: usize) {
        self.counts[truth * self.n + pred] += 1;
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        assert_eq!(self.n, other.n, "merging confusion matrices of different sizes");
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts.chunks(self.n.max(1)).map(|r| r.to_vec()).collect()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn support(&self, class: usize) -> u64 {
        (0..self.n).map(|j| self.get(class, j)).sum()
    }

    pub fn predicted(&self, class: usize) -> u64 {
        (0..self.n).map(|i| self.get(i, class)).sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 { 0.0 } else { num / den }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
    pub predicted: u64,
}

impl ClassScores {
    /// Absent from both truth and predictions; left out of the macro average.
    pub fn is_vacant(&self) -> bool {
        self.support == 0 && self.predicted == 0
    }
}

pub fn class_scores(m: &ConfusionMatrix) -> Vec<ClassScores> {
    (0..m.classes())
        .map(|c| {
            let tp = m.get(c, c) as f64;
            let support = m.support(c);
            let predicted = m.predicted(c);
            let precision = ratio(tp, predicted as f64);
            let recall = ratio(tp, support as f64);
            let f1 = ratio(2.0 * precision * recall, precision + recall);
            ClassScores { precision, recall, f1, support, predicted }
        })
        .collect()
}

/// Unweighted mean F1 over classes that occur in truth or predictions.
pub fn macro_f1(m: &ConfusionMatrix) -> f64 {
    let scores: Vec<ClassScores> = class_scores(m).into_iter().filter(|s| !s.is_vacant()).collect();
    ratio(scores.iter().map(|s| s.f1).sum(), scores.len() as f64)
}

pub fn weighted_f1(m: &ConfusionMatrix) -> f64 {
    let scores = class_scores(m);
    let total: u64 = scores.iter().map(|s| s.support).sum();
    ratio(scores.iter().map(|s| s.f1 * s.support as f64).sum(), total as f64)
}

pub fn accuracy(m: &ConfusionMatrix) -> f64 {
    ratio(m.trace() as f64, m.total() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub weighted_f1: f64,
}

impl Metrics {
    pub fn of(m: &ConfusionMatrix) -> Self {
        Self { accuracy: accuracy(m), macro_f1: macro_f1(m), weighted_f1: weighted_f1(m) }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions() {
        let m = ConfusionMatrix::from_rows(&[vec![3, 0, 0], vec![0, 5, 0], vec![0, 0, 1]]).unwrap();
        assert_eq!(macro_f1(&m), 1.0);
        assert_eq!(accuracy(&m), 1.0);
        assert_eq!(weighted_f1(&m), 1.0);
    }

    #[test]
    fn hand_computed_two_class_case() {
        let m = ConfusionMatrix::from_predictions(2, &[0, 0, 1, 1], &[0, 1, 1, 1]).unwrap();
        let s = class_scores(&m);
        assert!((s[0].f1 - 2.0 / 3.0).abs() < 1e-15);
        assert!((s[1].f1 - 0.8).abs() < 1e-15);
        assert!((macro_f1(&m) - 11.0 / 15.0).abs() < 1e-15);
        assert_eq!(accuracy(&m), 0.75);
    }

    #[test]
    fn vacant_class_is_excluded() {
        let m = ConfusionMatrix::from_predictions(3, &[0, 0, 1, 1], &[0, 1, 1, 1]).unwrap();
        assert!((macro_f1(&m) - 11.0 / 15.0).abs() < 1e-15);
        // Present but never predicted: counts as F1 0.
        let m = ConfusionMatrix::from_predictions(3, &[0, 2], &[0, 0]).unwrap();
        assert!((macro_f1(&m) - (2.0 / 3.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_matrices() {
        assert!(ConfusionMatrix::from_rows(&[vec![1, 2], vec![3]]).is_err());
        assert!(ConfusionMatrix::from_rows(&[vec![1, -2], vec![3, 4]]).is_err());
    }

    #[test]
    fn empty_matrix_scores_zero() {
        let m = ConfusionMatrix::new(4);
        assert_eq!((macro_f1(&m), weighted_f1(&m), accuracy(&m)), (0.0, 0.0, 0.0));
    }
}
