//! Fold execution: window assembly, normalization, training with early
//! stopping, and window/trial-level scoring.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;

use gazegest_tensornet::{softmax_cross_entropy, Adam, ModelGraph, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{ConfusionMatrix, Metrics};
use super::splits::{audit_plan, sorted_subjects, LeakageAudit, Protocol, SplitPlan, Task, TrialInfo};
use crate::domain::{GestureClass, GestureTrial, Modality};
use crate::error::{Error, Result};
use crate::models::{argmax, vote, ModelSpec, WindowPrediction};
use crate::preprocess::{make_raw_windows, make_windows, resample, select_modality, NormStats, RawSequence, SequenceLabels};
use crate::synthgen::derive_seed;

static ACTIVE_EVALS: AtomicUsize = AtomicUsize::new(0);

/// True while any evaluation is running in this process.
pub fn evaluation_active() -> bool {
    ACTIVE_EVALS.load(Ordering::SeqCst) > 0
}

/// Marks an evaluation as running until dropped.
pub struct EvaluationGuard;

impl EvaluationGuard {
    pub fn enter() -> Self {
        ACTIVE_EVALS.fetch_add(1, Ordering::SeqCst);
        EvaluationGuard
    }
}

impl Drop for EvaluationGuard {
    fn drop(&mut self) {
        ACTIVE_EVALS.fetch_sub(1, Ordering::SeqCst);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum WindowDomain {
    /// Windows over the fixed-length resampled sequence.
    Resampled,
    /// Fixed-duration windows over raw frames, each resampled to `w`.
    Raw,
}

impl std::str::FromStr for WindowDomain {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "resampled" => Ok(WindowDomain::Resampled),
            "raw" => Ok(WindowDomain::Raw),
            other => Err(format!("unknown window domain `{other}` (valid: raw, resampled)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowConfig {
    /// Resampled sequence length.
    pub t: usize,
    pub w: usize,
    pub train_overlap: f64,
    pub test_overlap: f64,
    pub domain: WindowDomain,
    /// Window duration for the raw domain.
    pub raw_seconds: f64,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self { t: 64, w: 32, train_overlap: 0.5, test_overlap: 0.9, domain: WindowDomain::Resampled, raw_seconds: 1.5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub patience: usize,
    /// Share of training trials held out for early stopping.
    pub val_fraction: f64,
    /// Stop as soon as the validation loss reaches this value.
    pub target_val_loss: Option<f64>,
    pub normalize: bool,
    pub seed: u64,
    /// Shuffle the label column across trials (chance-level sanity runs).
    pub permute_labels: Option<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 150,
            batch: 32,
            lr: 1e-3,
            patience: 15,
            val_fraction: 0.1,
            target_val_loss: None,
            normalize: true,
            seed: 7,
            permute_labels: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub modality: Modality,
    pub window: WindowConfig,
    pub train: TrainConfig,
    /// Folds run concurrently; each fold trains single-threaded.
    pub jobs: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { modality: Modality::EyeHead, window: WindowConfig::default(), train: TrainConfig::default(), jobs: 1 }
    }
}

/// Trials plus their resampled sequences, ready for windowing.
pub struct Dataset {
    pub trials: Vec<GestureTrial>,
    pub info: Vec<TrialInfo>,
    resampled: Vec<RawSequence>,
    t: usize,
}

impl Dataset {
    /// Trial ids are positions in `trials`.
    pub fn new(trials: Vec<GestureTrial>, t: usize) -> Result<Self> {
        if trials.is_empty() {
            return Err(Error::Eval("dataset has no trials".into()));
        }
        let resampled = trials
            .iter()
            .enumerate()
            .map(|(i, tr)| {
                resample(tr, t).map_err(|e| {
                    Error::Eval(format!(
                        "trial {i} ({} {} {} rep {}): {e}",
                        tr.participant_id,
                        tr.gesture.token(),
                        tr.stage.token(),
                        tr.repetition
                    ))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let info = trials
            .iter()
            .enumerate()
            .map(|(i, tr)| TrialInfo {
                trial_id: i,
                subject: tr.participant_id.clone(),
                gesture: tr.gesture,
                stage: tr.stage,
                repetition: tr.repetition,
            })
            .collect();
        Ok(Self { trials, info, resampled, t })
    }

    pub fn len(&self) -> usize {
        self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }

    pub fn subjects(&self) -> Vec<String> {
        sorted_subjects(&self.info)
    }

    pub fn subset(&self, keep: impl Fn(&TrialInfo) -> bool) -> Result<Dataset> {
        let trials: Vec<GestureTrial> =
            self.info.iter().zip(&self.trials).filter(|(i, _)| keep(i)).map(|(_, t)| t.clone()).collect();
        Dataset::new(trials, self.t)
    }

    pub fn class_names(&self, task: Task) -> Vec<String> {
        match task {
            Task::GestureRecognition => GestureClass::ALL.iter().map(|g| g.label().to_string()).collect(),
            Task::UserIdentification => self.subjects(),
        }
    }

    /// Per-trial class index for the task.
    pub fn labels(&self, task: Task, permute: Option<u64>) -> Vec<usize> {
        let subjects = self.subjects();
        let mut labels: Vec<usize> = self
            .info
            .iter()
            .map(|i| match task {
                Task::GestureRecognition => i.gesture.code(),
                Task::UserIdentification => subjects.binary_search(&i.subject).expect("subject listed"),
            })
            .collect();
        if let Some(seed) = permute {
            labels.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        }
        labels
    }

    fn windows_of(&self, id: usize, m: Modality, overlap: f64, wc: &WindowConfig) -> Result<Vec<Vec<f64>>> {
        let info = &self.info[id];
        let labels = SequenceLabels {
            gesture: info.gesture,
            subject: info.subject.clone(),
            stage: info.stage,
            trial_id: id,
        };
        let windows = match wc.domain {
            WindowDomain::Resampled => make_windows(&select_modality(&self.resampled[id], m, labels), wc.w, overlap)?,
            WindowDomain::Raw => make_raw_windows(&self.trials[id], m, &labels, wc.raw_seconds, overlap, wc.w)?,
        };
        Ok(windows.into_iter().map(|w| w.values).collect())
    }
}

/// Flat window batch with per-window labels and source trials.
struct WindowSet {
    data: Vec<f64>,
    labels: Vec<usize>,
    trials: Vec<usize>,
    per: usize,
}

impl WindowSet {
    fn build(ds: &Dataset, ids: &[usize], labels: &[usize], m: Modality, overlap: f64, wc: &WindowConfig) -> Result<Self> {
        let per = wc.w * m.dims();
        let mut set = WindowSet { data: Vec::new(), labels: Vec::new(), trials: Vec::new(), per };
        for &id in ids {
            for w in ds.windows_of(id, m, overlap, wc)? {
                set.data.extend_from_slice(&w);
                set.labels.push(labels[id]);
                set.trials.push(id);
            }
        }
        Ok(set)
    }

    fn len(&self) -> usize {
        self.labels.len()
    }

    fn normalize(&mut self, stats: &NormStats, d: usize) -> Result<()> {
        stats.apply_in_place(&mut self.data, d)
    }

    fn batch(&self, idx: &[usize], w: usize, d: usize) -> Result<(Tensor, Vec<usize>)> {
        let mut data = Vec::with_capacity(idx.len() * self.per);
        for &i in idx {
            data.extend_from_slice(&self.data[i * self.per..(i + 1) * self.per]);
        }
        Ok((Tensor::new(vec![idx.len(), w, d], data)?, idx.iter().map(|&i| self.labels[i]).collect()))
    }
}

const EVAL_BATCH: usize = 128;

fn mean_loss(graph: &mut ModelGraph, set: &WindowSet) -> Result<f64> {
    let (w, d) = (graph.window(), graph.dims());
    let mut total = 0.0;
    let idx: Vec<usize> = (0..set.len()).collect();
    for chunk in idx.chunks(EVAL_BATCH) {
        let (x, y) = set.batch(chunk, w, d)?;
        let logits = graph.forward(&x)?;
        total += softmax_cross_entropy(&logits, &y)?.0 * chunk.len() as f64;
    }
    Ok(total / set.len() as f64)
}

fn predict_set(graph: &mut ModelGraph, set: &WindowSet) -> Result<Vec<WindowPrediction>> {
    let (w, d) = (graph.window(), graph.dims());
    let mut out = Vec::with_capacity(set.len());
    let idx: Vec<usize> = (0..set.len()).collect();
    for chunk in idx.chunks(EVAL_BATCH) {
        let (x, _) = set.batch(chunk, w, d)?;
        let probs = gazegest_tensornet::softmax(&graph.forward(&x)?);
        for p in probs.data().chunks_exact(graph.classes()) {
            out.push(WindowPrediction { class: argmax(p), probs: p.to_vec() });
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_loss: Option<f64>,
    pub final_train_loss: f64,
    pub train_windows: usize,
    pub val_windows: usize,
}

/// Adam with shuffled mini-batches; early stopping on validation loss with
/// the best parameters restored at the end.
fn train(graph: &mut ModelGraph, train: &WindowSet, val: Option<&WindowSet>, cfg: &TrainConfig, seed: u64) -> Result<TrainSummary> {
    let (w, d) = (graph.window(), graph.dims());
    let adam = Adam::new(cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best: Option<(f64, usize, Vec<Tensor>)> = None;
    let mut since_best = 0;
    let mut epochs_run = 0;
    let mut final_train_loss = f64::NAN;
    for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch.max(1)) {
            let (x, y) = train.batch(chunk, w, d)?;
            let logits = graph.forward(&x)?;
            let (loss, dlogits) = softmax_cross_entropy(&logits, &y)?;
            graph.backward(&dlogits)?;
            adam.step(graph);
            total += loss * chunk.len() as f64;
        }
        final_train_loss = total / train.len() as f64;
        epochs_run = epoch + 1;
        let Some(val) = val else { continue };
        let vl = mean_loss(graph, val)?;
        if !vl.is_finite() {
            return Err(Error::Eval(format!("validation loss diverged at epoch {epochs_run}")));
        }
        if best.as_ref().is_none_or(|b| vl < b.0) {
            best = Some((vl, epochs_run, graph.snapshot()));
            since_best = 0;
        } else {
            since_best += 1;
        }
        if since_best >= cfg.patience || cfg.target_val_loss.is_some_and(|t| vl <= t) {
            break;
        }
    }
    let (best_val_loss, best_epoch) = match best {
        Some((loss, epoch, snapshot)) => {
            graph.restore(&snapshot)?;
            (Some(loss), epoch)
        }
        None => (None, epochs_run),
    };
    Ok(TrainSummary {
        epochs_run,
        best_epoch,
        best_val_loss,
        final_train_loss,
        train_windows: train.len(),
        val_windows: val.map_or(0, WindowSet::len),
    })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub train_seconds: f64,
    pub infer_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub index: usize,
    pub label: String,
    pub metrics: Metrics,
    pub confusion: ConfusionMatrix,
    pub trial_metrics: Metrics,
    pub trial_confusion: ConfusionMatrix,
    pub test_windows: usize,
    pub test_trials: usize,
    pub train: TrainSummary,
    /// Trials behind the training windows (including validation).
    pub train_window_trials: Vec<usize>,
    pub test_window_trials: Vec<usize>,
    /// Wall-clock numbers. Not serialized, so report JSON is reproducible;
    /// see `EvalReport::timings_csv`.
    #[serde(skip, default)]
    pub timing: Timing,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: Task,
    pub protocol: Protocol,
    pub model: String,
    pub params: usize,
    pub class_names: Vec<String>,
    pub config: EvalConfig,
    pub folds: Vec<FoldReport>,
    /// Mean over folds (window level).
    pub aggregate: Metrics,
    /// Mean over folds of majority-vote trial-level metrics.
    pub aggregate_trial: Metrics,
    pub audit: LeakageAudit,
}

/// Mean that does not depend on the order of its inputs: values are summed
/// in sorted order.
pub fn order_free_mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn mean_metrics(ms: &[Metrics]) -> Metrics {
    let pick = |f: fn(&Metrics) -> f64| order_free_mean(&ms.iter().map(f).collect::<Vec<_>>());
    Metrics { accuracy: pick(|m| m.accuracy), macro_f1: pick(|m| m.macro_f1), weighted_f1: pick(|m| m.weighted_f1) }
}

/// A model trained on one fold's training trials.
struct TrainedFold {
    graph: ModelGraph,
    stats: Option<NormStats>,
    summary: TrainSummary,
    train_window_trials: Vec<usize>,
    train_seconds: f64,
}

fn split_validation(ids: &[usize], fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let n_val = ((ids.len() as f64) * fraction).round() as usize;
    if n_val == 0 || n_val >= ids.len() {
        return (ids.to_vec(), Vec::new());
    }
    let mut shuffled = ids.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let val: BTreeSet<usize> = shuffled[..n_val].iter().copied().collect();
    let fit = ids.iter().copied().filter(|i| !val.contains(i)).collect();
    (fit, val.into_iter().collect())
}

struct FoldContext<'a> {
    ds: &'a Dataset,
    spec: &'a ModelSpec,
    cfg: &'a EvalConfig,
    labels: &'a [usize],
}

fn train_fold(ctx: &FoldContext, train_ids: &[usize], fold_seed: u64) -> Result<TrainedFold> {
    let (m, wc, tc) = (ctx.cfg.modality, &ctx.cfg.window, &ctx.cfg.train);
    let d = m.dims();
    let (fit_ids, val_ids) = split_validation(train_ids, tc.val_fraction, derive_seed(fold_seed, 1));
    let mut train_set = WindowSet::build(ctx.ds, &fit_ids, ctx.labels, m, wc.train_overlap, wc)?;
    if train_set.len() == 0 {
        return Err(Error::Eval("fold has no training windows".into()));
    }
    let mut val_set = if val_ids.is_empty() {
        None
    } else {
        Some(WindowSet::build(ctx.ds, &val_ids, ctx.labels, m, wc.train_overlap, wc)?)
    };
    let stats = if tc.normalize {
        let s = NormStats::fit_rows([train_set.data.as_slice()], d)?;
        train_set.normalize(&s, d)?;
        if let Some(v) = val_set.as_mut() {
            v.normalize(&s, d)?;
        }
        Some(s)
    } else {
        None
    };
    let mut graph = ctx.spec.build(derive_seed(fold_seed, 2))?;
    let start = Instant::now();
    let summary = train(&mut graph, &train_set, val_set.as_ref(), tc, derive_seed(fold_seed, 3))?;
    let mut train_window_trials: Vec<usize> = train_set.trials.clone();
    if let Some(v) = &val_set {
        train_window_trials.extend(&v.trials);
    }
    train_window_trials.sort_unstable();
    train_window_trials.dedup();
    Ok(TrainedFold { graph, stats, summary, train_window_trials, train_seconds: start.elapsed().as_secs_f64() })
}

fn evaluate_fold(ctx: &FoldContext, trained: &mut TrainedFold, index: usize, label: &str, test_ids: &[usize]) -> Result<FoldReport> {
    let (m, wc) = (ctx.cfg.modality, &ctx.cfg.window);
    let mut test_set = WindowSet::build(ctx.ds, test_ids, ctx.labels, m, wc.test_overlap, wc)?;
    if test_set.len() == 0 {
        return Err(Error::Eval(format!("fold {label} has no test windows")));
    }
    if let Some(s) = &trained.stats {
        test_set.normalize(s, m.dims())?;
    }
    let start = Instant::now();
    let preds = predict_set(&mut trained.graph, &test_set)?;
    let infer_seconds = start.elapsed().as_secs_f64();
    let c = ctx.spec.classes;
    let pred_classes: Vec<usize> = preds.iter().map(|p| p.class).collect();
    let confusion = ConfusionMatrix::from_predictions(c, &test_set.labels, &pred_classes)?;

    let mut by_trial: BTreeMap<usize, Vec<WindowPrediction>> = BTreeMap::new();
    for (p, &t) in preds.into_iter().zip(&test_set.trials) {
        by_trial.entry(t).or_default().push(p);
    }
    let mut trial_confusion = ConfusionMatrix::new(c);
    for (t, ps) in &by_trial {
        trial_confusion.add(ctx.labels[*t], vote(ps)?);
    }
    let mut test_window_trials = test_set.trials.clone();
    test_window_trials.dedup();
    Ok(FoldReport {
        index,
        label: label.to_string(),
        metrics: Metrics::of(&confusion),
        confusion,
        trial_metrics: Metrics::of(&trial_confusion),
        trial_confusion,
        test_windows: test_set.len(),
        test_trials: by_trial.len(),
        train: trained.summary.clone(),
        train_window_trials: trained.train_window_trials.clone(),
        test_window_trials,
        timing: Timing { train_seconds: trained.train_seconds, infer_seconds },
    })
}

fn fold_pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Eval(format!("thread pool: {e}")))
}

fn check_plan(plan: &SplitPlan, labels: &[usize], classes: usize, class_names: &[String]) -> Result<()> {
    let mut seen = vec![false; classes];
    for f in &plan.folds {
        if f.train.is_empty() || f.test.is_empty() {
            return Err(Error::Eval(format!("fold {} has an empty train or test set", f.label)));
        }
        let mut in_train = vec![false; classes];
        for &t in &f.train {
            in_train[labels[t]] = true;
        }
        if f.test.iter().all(|&t| !in_train[labels[t]]) {
            return Err(Error::Eval(format!(
                "fold {}: none of its test classes occur in its training set (user identification needs the \
                 test subjects in training; use stratified k-fold, not LOSO)",
                f.label
            )));
        }
        seen.iter_mut().zip(&in_train).for_each(|(s, t)| *s |= t);
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(Error::Eval(format!(
            "class `{}` never appears in any training fold",
            class_names[missing]
        )));
    }
    Ok(())
}

/// Train and evaluate one model per fold. `spec` supplies the architecture
/// and hyperparameters; its input shape and class count are set here.
pub fn run_task(ds: &Dataset, spec: &ModelSpec, plan: &SplitPlan, cfg: &EvalConfig) -> Result<EvalReport> {
    let _guard = EvaluationGuard::enter();
    let class_names = ds.class_names(plan.task);
    let labels = ds.labels(plan.task, cfg.train.permute_labels);
    let spec = spec.with_shape(cfg.window.w, cfg.modality.dims(), class_names.len());
    check_plan(plan, &labels, class_names.len(), &class_names)?;
    let params = spec.build(0)?.count_params();
    let ctx = FoldContext { ds, spec: &spec, cfg, labels: &labels };
    let run = |fold: &super::splits::Fold| -> Result<FoldReport> {
        let seed = derive_seed(cfg.train.seed, fold.index as u64);
        let mut trained = train_fold(&ctx, &fold.train, seed)?;
        evaluate_fold(&ctx, &mut trained, fold.index, &fold.label, &fold.test)
    };
    let folds: Vec<FoldReport> = if cfg.jobs > 1 {
        fold_pool(cfg.jobs)?.install(|| plan.folds.par_iter().map(run).collect::<Result<Vec<_>>>())?
    } else {
        plan.folds.iter().map(run).collect::<Result<Vec<_>>>()?
    };
    Ok(assemble(plan.task, plan.protocol, plan, &spec, params, class_names, cfg, folds))
}

#[allow(clippy::too_many_arguments)]
fn assemble(
    task: Task,
    protocol: Protocol,
    plan: &SplitPlan,
    spec: &ModelSpec,
    params: usize,
    class_names: Vec<String>,
    cfg: &EvalConfig,
    folds: Vec<FoldReport>,
) -> EvalReport {
    let window_trials: Vec<(Vec<usize>, Vec<usize>)> =
        folds.iter().map(|f| (f.train_window_trials.clone(), f.test_window_trials.clone())).collect();
    let audit = audit_plan(plan, Some(&window_trials));
    EvalReport {
        task,
        protocol,
        model: spec.kind.display_name().to_string(),
        params,
        class_names,
        config: cfg.clone(),
        aggregate: mean_metrics(&folds.iter().map(|f| f.metrics).collect::<Vec<_>>()),
        aggregate_trial: mean_metrics(&folds.iter().map(|f| f.trial_metrics).collect::<Vec<_>>()),
        folds,
        audit,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub modality: Modality,
    pub dims: usize,
    /// Macro F1 per LOSO fold, in subject order.
    pub per_subject: Vec<f64>,
    pub average: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub model: String,
    pub subjects: Vec<String>,
    pub rows: Vec<AblationRow>,
    /// Column means over modalities, per subject, then overall.
    pub average_row: Vec<f64>,
    pub reports: Vec<EvalReport>,
}

impl AblationTable {
    pub fn row(&self, m: Modality) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.modality == m)
    }
}

/// LOSO gesture recognition once per modality.
pub fn run_modality_ablation(ds: &Dataset, spec: &ModelSpec, cfg: &EvalConfig, modalities: &[Modality]) -> Result<AblationTable> {
    let plan = super::splits::loso_splits(&ds.info, Task::GestureRecognition)?;
    let subjects = ds.subjects();
    let mut rows = Vec::new();
    let mut reports = Vec::new();
    for &m in modalities {
        let cfg_m = EvalConfig { modality: m, ..cfg.clone() };
        let report = run_task(ds, spec, &plan, &cfg_m)?;
        let per_subject: Vec<f64> = report.folds.iter().map(|f| f.metrics.macro_f1).collect();
        rows.push(AblationRow { modality: m, dims: m.dims(), average: report.aggregate.macro_f1, per_subject });
        reports.push(report);
    }
    let mut average_row: Vec<f64> = (0..subjects.len())
        .map(|j| order_free_mean(&rows.iter().map(|r| r.per_subject[j]).collect::<Vec<_>>()))
        .collect();
    average_row.push(order_free_mean(&rows.iter().map(|r| r.average).collect::<Vec<_>>()));
    Ok(AblationTable { model: spec.kind.display_name().to_string(), subjects, rows, average_row, reports })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubsetRow {
    /// `None` for the full gesture set.
    pub gesture: Option<GestureClass>,
    pub report: EvalReport,
}

/// User identification with stratified k-fold, first on all trials and then
/// on each single-gesture subset.
pub fn run_userid_subsets(ds: &Dataset, spec: &ModelSpec, cfg: &EvalConfig, k: usize, seed: u64) -> Result<Vec<SubsetRow>> {
    let mut rows = Vec::new();
    let full = super::splits::stratified_kfold_by_trial(&ds.info, k, seed, Task::UserIdentification)?;
    rows.push(SubsetRow { gesture: None, report: run_task(ds, spec, &full, cfg)? });
    for &g in GestureClass::ALL {
        let sub = ds.subset(|i| i.gesture == g)?;
        let plan = super::splits::stratified_kfold_by_trial(&sub.info, k, seed, Task::UserIdentification)?;
        rows.push(SubsetRow { gesture: Some(g), report: run_task(&sub, spec, &plan, cfg)? });
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossStageReport {
    /// Trained on guided stages, tested on Recall.
    pub recall: EvalReport,
    /// Same model tested on held-out repetitions of the guided stages.
    pub same_stage: EvalReport,
}

/// Gesture recognition trained on Follow, Fixed and IRecall minus their last
/// repetition. Tested on every Recall trial and, for comparison, on the
/// held-out guided repetition. Subjects appear on both sides.
pub fn run_cross_stage(ds: &Dataset, spec: &ModelSpec, cfg: &EvalConfig) -> Result<CrossStageReport> {
    use crate::domain::Stage;
    let _guard = EvaluationGuard::enter();
    for stage in Stage::ALL {
        if !ds.info.iter().any(|i| i.stage == *stage) {
            return Err(Error::Eval(format!("cross-stage evaluation needs {} trials", stage.label())));
        }
    }
    let last_rep = ds.info.iter().map(|i| i.repetition).max().unwrap_or(0);
    let guided = |i: &TrialInfo| i.stage != Stage::Recall;
    let train_ids: Vec<usize> = ds.info.iter().filter(|i| guided(i) && i.repetition < last_rep).map(|i| i.trial_id).collect();
    let same_ids: Vec<usize> = ds.info.iter().filter(|i| guided(i) && i.repetition == last_rep).map(|i| i.trial_id).collect();
    let recall_ids: Vec<usize> = ds.info.iter().filter(|i| i.stage == Stage::Recall).map(|i| i.trial_id).collect();
    if train_ids.is_empty() || same_ids.is_empty() {
        return Err(Error::Eval("cross-stage evaluation needs at least 2 repetitions per guided stage".into()));
    }
    let task = Task::GestureRecognition;
    let class_names = ds.class_names(task);
    let labels = ds.labels(task, cfg.train.permute_labels);
    let spec = spec.with_shape(cfg.window.w, cfg.modality.dims(), class_names.len());
    let params = spec.build(0)?.count_params();
    let fold = |label: &str, test: &[usize]| super::splits::Fold {
        index: 0,
        label: label.to_string(),
        train: train_ids.clone(),
        test: test.to_vec(),
    };
    let recall_plan = SplitPlan { task, protocol: Protocol::CrossStage, folds: vec![fold("recall", &recall_ids)] };
    let same_plan = SplitPlan { task, protocol: Protocol::CrossStage, folds: vec![fold("same-stage", &same_ids)] };
    check_plan(&recall_plan, &labels, class_names.len(), &class_names)?;
    let ctx = FoldContext { ds, spec: &spec, cfg, labels: &labels };
    let mut trained = train_fold(&ctx, &train_ids, derive_seed(cfg.train.seed, 0))?;
    let recall_fold = evaluate_fold(&ctx, &mut trained, 0, "recall", &recall_ids)?;
    let same_fold = evaluate_fold(&ctx, &mut trained, 0, "same-stage", &same_ids)?;
    Ok(CrossStageReport {
        recall: assemble(task, Protocol::CrossStage, &recall_plan, &spec, params, class_names.clone(), cfg, vec![recall_fold]),
        same_stage: assemble(task, Protocol::CrossStage, &same_plan, &spec, params, class_names, cfg, vec![same_fold]),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_free_mean_ignores_order() {
        let a = [0.1, 0.7, 0.30000000000000004, 1e-17, 0.9];
        let mut b = a;
        b.reverse();
        assert_eq!(order_free_mean(&a).to_bits(), order_free_mean(&b).to_bits());
        assert_eq!(order_free_mean(&[]), 0.0);
    }

    #[test]
    fn validation_split_is_by_trial_and_deterministic() {
        let ids: Vec<usize> = (0..40).collect();
        let (fit, val) = split_validation(&ids, 0.1, 3);
        assert_eq!(val.len(), 4);
        assert_eq!(fit.len(), 36);
        assert!(val.iter().all(|v| !fit.contains(v)));
        assert_eq!(split_validation(&ids, 0.1, 3), (fit, val));
        assert_eq!(split_validation(&ids[..3], 0.1, 3).1.len(), 0);
    }
}
