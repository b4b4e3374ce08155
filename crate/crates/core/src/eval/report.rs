//! Text tables and CSV renderings of evaluation results. None of these
//! include wall-clock timings except `timings_csv`.

use std::fmt::Write;

use super::harness::{AblationTable, CrossStageReport, EvalReport, SubsetRow};
use super::metrics::ConfusionMatrix;

/// Left-aligned first column, right-aligned rest, padded to the widest cell.
pub fn aligned_table(header: &[String], rows: &[Vec<String>]) -> String {
    let cols = header.len();
    let mut width = vec![0; cols];
    for r in std::iter::once(header).chain(rows.iter().map(Vec::as_slice)) {
        for (w, cell) in width.iter_mut().zip(r) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |r: &[String]| {
        let cells: Vec<String> = r
            .iter()
            .enumerate()
            .map(|(i, c)| if i == 0 { format!("{c:<w$}", w = width[i]) } else { format!("{c:>w$}", w = width[i]) })
            .collect();
        cells.join("  ").trim_end().to_string()
    };
    let mut out = line(header);
    out.push('\n');
    out.push_str(&"-".repeat(width.iter().sum::<usize>() + 2 * cols.saturating_sub(1)));
    out.push('\n');
    for r in rows {
        out.push_str(&line(r));
        out.push('\n');
    }
    out
}

fn f4(v: f64) -> String {
    format!("{v:.4}")
}

fn strings(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

impl EvalReport {
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{} | task {} | protocol {} | modality {} | params {}\n",
            self.model,
            self.task.name(),
            self.protocol.name(),
            self.config.modality,
            self.params
        );
        let header = strings(&["fold", "windows", "trials", "accuracy", "macro_f1", "weighted_f1", "trial_macro_f1"]);
        let mut rows: Vec<Vec<String>> = self
            .folds
            .iter()
            .map(|f| {
                vec![
                    f.label.clone(),
                    f.test_windows.to_string(),
                    f.test_trials.to_string(),
                    f4(f.metrics.accuracy),
                    f4(f.metrics.macro_f1),
                    f4(f.metrics.weighted_f1),
                    f4(f.trial_metrics.macro_f1),
                ]
            })
            .collect();
        rows.push(vec![
            "mean".into(),
            String::new(),
            String::new(),
            f4(self.aggregate.accuracy),
            f4(self.aggregate.macro_f1),
            f4(self.aggregate.weighted_f1),
            f4(self.aggregate_trial.macro_f1),
        ]);
        out.push_str(&aligned_table(&header, &rows));
        if !self.audit.is_clean() {
            let _ = writeln!(
                out,
                "LEAKAGE: {} overlapping trial(s), {} split trial(s)",
                self.audit.overlapping.len(),
                self.audit.split_trials.len()
            );
        }
        out
    }

    /// One row per fold plus a final `mean` row.
    pub fn folds_csv(&self) -> String {
        let mut out = String::from(
            "fold,label,test_windows,test_trials,accuracy,macro_f1,weighted_f1,trial_accuracy,trial_macro_f1,epochs,best_epoch\n",
        );
        for f in &self.folds {
            let _ = writeln!(
                out,
                "{},{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{},{}",
                f.index,
                f.label,
                f.test_windows,
                f.test_trials,
                f.metrics.accuracy,
                f.metrics.macro_f1,
                f.metrics.weighted_f1,
                f.trial_metrics.accuracy,
                f.trial_metrics.macro_f1,
                f.train.epochs_run,
                f.train.best_epoch
            );
        }
        let _ = writeln!(
            out,
            "mean,mean,,,{:.6},{:.6},{:.6},{:.6},{:.6},,",
            self.aggregate.accuracy,
            self.aggregate.macro_f1,
            self.aggregate.weighted_f1,
            self.aggregate_trial.accuracy,
            self.aggregate_trial.macro_f1
        );
        out
    }

    /// Window-level confusion counts pooled over folds.
    pub fn pooled_confusion(&self) -> ConfusionMatrix {
        let mut pooled = ConfusionMatrix::new(self.class_names.len());
        for f in &self.folds {
            pooled.merge(&f.confusion);
        }
        pooled
    }

    /// Long format: `fold,true,pred,count`, per fold then pooled as `all`.
    pub fn confusion_csv(&self) -> String {
        let mut out = String::from("fold,true,pred,count\n");
        let mut emit = |label: &str, m: &ConfusionMatrix| {
            for (i, row) in m.rows().iter().enumerate() {
                for (j, n) in row.iter().enumerate() {
                    let _ = writeln!(out, "{label},{},{},{n}", self.class_names[i], self.class_names[j]);
                }
            }
        };
        for f in &self.folds {
            emit(&f.label, &f.confusion);
        }
        emit("all", &self.pooled_confusion());
        out
    }

    /// Full report as pretty JSON. Timings are not part of it, so equal
    /// runs give equal bytes.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report fields are plain data")
    }

    pub fn timings_csv(&self) -> String {
        let mut out = String::from("fold,label,train_seconds,infer_seconds,test_windows\n");
        for f in &self.folds {
            let _ = writeln!(
                out,
                "{},{},{:.3},{:.3},{}",
                f.index, f.label, f.timing.train_seconds, f.timing.infer_seconds, f.test_windows
            );
        }
        out
    }
}

impl AblationTable {
    /// Modalities down, subjects across, with a trailing average column and
    /// an average row.
    pub fn to_text(&self) -> String {
        let mut header = vec!["modality".to_string(), "D".to_string()];
        header.extend(self.subjects.iter().cloned());
        header.push("average".into());
        let mut rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                let mut row = vec![r.modality.table_label().to_string(), r.dims.to_string()];
                row.extend(r.per_subject.iter().map(|v| f4(*v)));
                row.push(f4(r.average));
                row
            })
            .collect();
        let mut avg = vec!["average".to_string(), String::new()];
        avg.extend(self.average_row.iter().map(|v| f4(*v)));
        rows.push(avg);
        format!("{} macro F1 by modality (LOSO)\n{}", self.model, aligned_table(&header, &rows))
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("modality,dims,{},average\n", self.subjects.join(","));
        for r in &self.rows {
            let cells: Vec<String> = r.per_subject.iter().map(|v| format!("{v:.6}")).collect();
            let _ = writeln!(out, "{},{},{},{:.6}", r.modality.name(), r.dims, cells.join(","), r.average);
        }
        let cells: Vec<String> = self.average_row.iter().map(|v| format!("{v:.6}")).collect();
        let _ = writeln!(out, "average,,{}", cells.join(","));
        out
    }
}

impl CrossStageReport {
    pub fn to_text(&self) -> String {
        let header = strings(&["test set", "windows", "accuracy", "macro_f1", "trial_macro_f1"]);
        let row = |name: &str, r: &EvalReport| {
            let f = &r.folds[0];
            vec![
                name.to_string(),
                f.test_windows.to_string(),
                f4(f.metrics.accuracy),
                f4(f.metrics.macro_f1),
                f4(f.trial_metrics.macro_f1),
            ]
        };
        format!(
            "{} cross-stage ({})\n{}",
            self.recall.model,
            self.recall.config.modality,
            aligned_table(&header, &[row("same-stage", &self.same_stage), row("recall", &self.recall)])
        )
    }
}

/// One row per subset: accuracy, weighted and macro F1.
pub fn subsets_text(rows: &[SubsetRow]) -> String {
    let header = strings(&["subset", "trials", "accuracy", "weighted_f1", "macro_f1"]);
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let trials: usize = r.report.folds.iter().map(|f| f.test_trials).sum();
            vec![
                r.gesture.map_or("all".to_string(), |g| g.label().to_string()),
                trials.to_string(),
                f4(r.report.aggregate.accuracy),
                f4(r.report.aggregate.weighted_f1),
                f4(r.report.aggregate.macro_f1),
            ]
        })
        .collect();
    let model = rows.first().map_or("", |r| r.report.model.as_str());
    format!("{model} user identification by gesture subset\n{}", aligned_table(&header, &body))
}
