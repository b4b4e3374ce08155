//! Shared helpers for the integration tests.
#![allow(dead_code)]

use gazegest_core::eval::{Dataset, EvalConfig, TrainConfig};
use gazegest_core::synthgen::{synthesize_session, SessionPlan, StyleRanges};

/// Per-class counts straight from the cells, F1 as 2TP/(2TP+FP+FN).
pub struct OracleScores {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub weighted_f1: f64,
}

pub fn oracle_metrics(m: &[Vec<u64>]) -> OracleScores {
    let n = m.len();
    let mut f1s = Vec::new();
    let mut weighted = 0.0;
    let mut total = 0u64;
    let mut correct = 0u64;
    for c in 0..n {
        let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
        for i in 0..n {
            for j in 0..n {
                let v = m[i][j];
                if c == 0 {
                    total += v;
                    if i == j {
                        correct += v;
                    }
                }
                if i == c && j == c {
                    tp += v;
                } else if j == c {
                    fp += v;
                } else if i == c {
                    fn_ += v;
                }
            }
        }
        let support = tp + fn_;
        let predicted = tp + fp;
        let f1 = if tp == 0 { 0.0 } else { (2 * tp) as f64 / (2 * tp + fp + fn_) as f64 };
        if support > 0 || predicted > 0 {
            f1s.push(f1);
        }
        weighted += f1 * support as f64;
    }
    let div = |a: f64, b: f64| if b == 0.0 { 0.0 } else { a / b };
    OracleScores {
        accuracy: div(correct as f64, total as f64),
        macro_f1: div(f1s.iter().sum(), f1s.len() as f64),
        weighted_f1: div(weighted, total as f64),
    }
}

pub fn synthetic_dataset(subjects: usize, reps: u32, seed: u64, ranges: &StyleRanges) -> Dataset {
    let plan = SessionPlan::synthetic(subjects, reps, seed, ranges).unwrap();
    Dataset::new(synthesize_session(&plan, seed).unwrap().trials, 64).unwrap()
}

/// A short training schedule for tests that only need a working model.
pub fn quick_config(epochs: usize) -> EvalConfig {
    EvalConfig { train: TrainConfig { max_epochs: epochs, patience: 3, ..TrainConfig::default() }, ..EvalConfig::default() }
}
