//! Validation protocols, metrics and the experiment drivers.

pub mod harness;
pub mod metrics;
pub mod report;
pub mod splits;

pub use harness::{
    evaluation_active, run_cross_stage, EvaluationGuard, run_modality_ablation, run_task, run_userid_subsets, AblationTable, CrossStageReport, Dataset,
    EvalConfig, EvalReport, FoldReport, SubsetRow, TrainConfig, WindowConfig, WindowDomain,
};
pub use metrics::{accuracy, macro_f1, weighted_f1, ConfusionMatrix, Metrics};
pub use splits::{loso_splits, stratified_kfold_by_trial, LeakageAudit, Protocol, SplitPlan, Task, TrialInfo};
