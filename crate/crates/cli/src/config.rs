//! Run configuration: defaults, then an optional JSON file, then flags.

use std::path::{Path, PathBuf};

use anyhow::Context;
use gazegest_core::bench::{LatencyConfig, MIN_ITERATIONS};
use gazegest_core::domain::Modality;
use gazegest_core::eval::{EvalConfig, Task, TrainConfig, WindowConfig};
use gazegest_core::models::ModelKind;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::UsageError;

pub const OUT_ENV: &str = "GAZEGEST_OUT";
const DEFAULT_OUT: &str = "gazegest-out";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanConfig {
    pub subjects: usize,
    pub reps: u32,
    /// Draw every subject from the head-dominant style range.
    pub head_dominant: bool,
}

impl Default for PlanConfig {
    fn default() -> Self {
        Self { subjects: 8, reps: 3, head_dominant: false }
    }
}

/// Everything a command needs, in one serializable value. Artifacts embed it
/// (minus the output directory, so reruns elsewhere still match).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: String,
    /// Log file to ingest; `None` synthesizes a session from `plan`.
    pub data: Option<PathBuf>,
    pub seed: u64,
    pub plan: PlanConfig,
    pub task: String,
    pub model: String,
    pub modality: String,
    /// Folds for the stratified user-ID protocol.
    pub folds: usize,
    pub jobs: usize,
    pub window: WindowConfig,
    pub train: TrainConfig,
    pub bench: LatencyConfig,
    #[serde(default, skip_serializing)]
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            command: String::new(),
            data: None,
            seed: 7,
            plan: PlanConfig::default(),
            task: "gesture".into(),
            model: "tinyhar".into(),
            modality: "eye_head".into(),
            folds: 4,
            jobs: 1,
            window: WindowConfig::default(),
            train: TrainConfig::default(),
            bench: LatencyConfig::default(),
            out: None,
        }
    }
}

/// Overlay `file` onto `base`, refusing keys the base does not have.
fn merge(base: &mut Value, file: Value, path: &str) -> Result<(), UsageError> {
    match (base, file) {
        (Value::Object(b), Value::Object(f)) => {
            for (k, v) in f {
                let here = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                let slot = b.get_mut(&k).ok_or_else(|| UsageError(format!("unknown config key `{here}`")))?;
                if slot.is_object() && v.is_object() {
                    merge(slot, v, &here)?;
                } else {
                    *slot = v;
                }
            }
            Ok(())
        }
        (_, _) => Err(UsageError("config file must be a JSON object".into())),
    }
}

pub fn load(command: &str, file: Option<&Path>) -> anyhow::Result<RunConfig> {
    let defaults = RunConfig { command: command.into(), ..RunConfig::default() };
    let mut base = serde_json::to_value(&defaults)?;
    base["out"] = Value::Null;
    if let Some(path) = file {
        let text = std::fs::read_to_string(path)
            .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
        let parsed: Value = serde_json::from_str(&text)
            .map_err(|e| UsageError(format!("config {} is not valid JSON: {e}", path.display())))?;
        merge(&mut base, parsed, "")?;
    }
    base["command"] = Value::String(command.into());
    let cfg: RunConfig = serde_json::from_value(base).map_err(|e| UsageError(format!("bad config value: {e}")))?;
    Ok(cfg)
}

/// Output directory: flag or config file, then `$GAZEGEST_OUT`, then a fixed default.
pub fn out_dir(cfg: &RunConfig) -> PathBuf {
    cfg.out
        .clone()
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

/// Parsed and range-checked view of the string-typed fields.
pub struct Resolved {
    pub task: Task,
    pub model: ModelKind,
    pub modality: Modality,
}

impl RunConfig {
    pub fn resolve(&self) -> Result<Resolved, UsageError> {
        let task: Task = self.task.parse().map_err(UsageError)?;
        let model: ModelKind = self.model.parse().map_err(UsageError)?;
        let modality: Modality = self.modality.parse().map_err(UsageError)?;
        let check = |ok: bool, msg: &str| if ok { Ok(()) } else { Err(UsageError(msg.to_string())) };
        check(self.plan.subjects >= 1, "--subjects must be at least 1")?;
        check(self.plan.reps >= 1, "--reps must be at least 1")?;
        check(self.folds >= 2, "--folds must be at least 2")?;
        check(self.jobs >= 1, "--jobs must be at least 1")?;
        check(self.window.w >= 2 && self.window.w <= self.window.t, "window length must be in [2, T]")?;
        for ov in [self.window.train_overlap, self.window.test_overlap] {
            check((0.0..1.0).contains(&ov), "window overlap must be in [0, 1)")?;
        }
        check(self.train.max_epochs >= 1, "--epochs must be at least 1")?;
        check(self.train.batch >= 1, "--batch-size must be at least 1")?;
        check(self.train.lr > 0.0 && self.train.lr.is_finite(), "--lr must be positive")?;
        check((0.0..1.0).contains(&self.train.val_fraction), "validation fraction must be in [0, 1)")?;
        check(self.bench.iterations >= MIN_ITERATIONS, "--iterations must be at least 10")?;
        check(self.bench.batch >= 1, "--batch must be at least 1")?;
        Ok(Resolved { task, model, modality })
    }

    pub fn eval_config(&self, r: &Resolved) -> EvalConfig {
        EvalConfig { modality: r.modality, window: self.window.clone(), train: self.train.clone(), jobs: self.jobs }
    }
}

pub fn read_data(path: &Path) -> anyhow::Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading log {}", path.display()))
}
