//! Trial-level split plans and the leakage audit.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{GestureClass, Stage};
use crate::error::{Error, Result};
use crate::synthgen::derive_seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Task {
    GestureRecognition,
    UserIdentification,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::GestureRecognition => "gesture",
            Task::UserIdentification => "userid",
        }
    }
}

impl std::str::FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "gesture" => Ok(Task::GestureRecognition),
            "userid" => Ok(Task::UserIdentification),
            other => Err(format!("unknown task `{other}` (valid: gesture, userid)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Protocol {
    Loso,
    StratifiedKFoldByTrial { k: usize, seed: u64 },
    /// Train on the guided stages, test on recall (see `run_cross_stage`).
    CrossStage,
}

impl Protocol {
    pub fn name(&self) -> String {
        match self {
            Protocol::Loso => "loso".into(),
            Protocol::StratifiedKFoldByTrial { k, .. } => format!("stratified-{k}fold"),
            Protocol::CrossStage => "cross-stage".into(),
        }
    }
}

/// What the splitters need to know about a trial.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialInfo {
    pub trial_id: usize,
    pub subject: String,
    pub gesture: GestureClass,
    pub stage: Stage,
    pub repetition: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub index: usize,
    /// Held-out subject for LOSO folds.
    pub label: String,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub task: Task,
    pub protocol: Protocol,
    pub folds: Vec<Fold>,
}

pub fn sorted_subjects(trials: &[TrialInfo]) -> Vec<String> {
    trials.iter().map(|t| t.subject.clone()).collect::<BTreeSet<_>>().into_iter().collect()
}

/// One fold per subject, subjects in sorted order.
pub fn loso_splits(trials: &[TrialInfo], task: Task) -> Result<SplitPlan> {
    let subjects = sorted_subjects(trials);
    if subjects.len() < 2 {
        return Err(Error::Eval(format!("LOSO needs at least 2 subjects, found {}", subjects.len())));
    }
    let folds = subjects
        .iter()
        .enumerate()
        .map(|(index, s)| {
            let (test, train): (Vec<&TrialInfo>, Vec<&TrialInfo>) = trials.iter().partition(|t| &t.subject == s);
            Fold {
                index,
                label: s.clone(),
                train: train.iter().map(|t| t.trial_id).collect(),
                test: test.iter().map(|t| t.trial_id).collect(),
            }
        })
        .collect();
    Ok(SplitPlan { task, protocol: Protocol::Loso, folds })
}

/// k folds stratified by subject. Within a subject, trials are grouped by
/// gesture, shuffled inside each group and dealt round-robin, so each fold
/// gets within one trial of `n/k` per subject and gestures spread evenly.
pub fn stratified_kfold_by_trial(trials: &[TrialInfo], k: usize, seed: u64, task: Task) -> Result<SplitPlan> {
    if k < 2 {
        return Err(Error::Eval(format!("k-fold needs k >= 2, got {k}")));
    }
    let mut by_subject: BTreeMap<&str, Vec<&TrialInfo>> = BTreeMap::new();
    for t in trials {
        by_subject.entry(&t.subject).or_default().push(t);
    }
    let mut test: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (si, (subject, mut group)) in by_subject.into_iter().enumerate() {
        if group.len() < k {
            return Err(Error::Eval(format!(
                "subject {subject} has {} trials, fewer than k={k}",
                group.len()
            )));
        }
        group.sort_by_key(|t| (t.gesture, t.stage, t.repetition, t.trial_id));
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, si as u64));
        let mut ordered = Vec::with_capacity(group.len());
        for g in GestureClass::ALL {
            let mut chunk: Vec<usize> = group.iter().filter(|t| t.gesture == *g).map(|t| t.trial_id).collect();
            chunk.shuffle(&mut rng);
            ordered.extend(chunk);
        }
        for (pos, id) in ordered.into_iter().enumerate() {
            test[(pos + si) % k].push(id);
        }
    }
    let all: Vec<usize> = trials.iter().map(|t| t.trial_id).collect();
    let folds = test
        .into_iter()
        .enumerate()
        .map(|(index, mut test)| {
            test.sort_unstable();
            let held: BTreeSet<usize> = test.iter().copied().collect();
            Fold {
                index,
                label: format!("fold{index}"),
                train: all.iter().copied().filter(|id| !held.contains(id)).collect(),
                test,
            }
        })
        .collect();
    Ok(SplitPlan { task, protocol: Protocol::StratifiedKFoldByTrial { k, seed }, folds })
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeakageAudit {
    pub folds_checked: usize,
    /// (fold, trial) pairs whose trial is on both sides of a fold.
    pub overlapping: Vec<(usize, usize)>,
    /// Trials whose windows were assigned to more than one side of a fold.
    pub split_trials: Vec<(usize, usize)>,
}

impl LeakageAudit {
    pub fn is_clean(&self) -> bool {
        self.overlapping.is_empty() && self.split_trials.is_empty()
    }
}

/// Checks the plan itself, and, given the trial id behind every train and
/// test window per fold, that windows followed their trials.
pub fn audit_plan(plan: &SplitPlan, window_trials: Option<&[(Vec<usize>, Vec<usize>)]>) -> LeakageAudit {
    let mut audit = LeakageAudit { folds_checked: plan.folds.len(), ..Default::default() };
    for (fi, fold) in plan.folds.iter().enumerate() {
        let train: BTreeSet<usize> = fold.train.iter().copied().collect();
        for &t in &fold.test {
            if train.contains(&t) {
                audit.overlapping.push((fold.index, t));
            }
        }
        if let Some(per_fold) = window_trials.and_then(|w| w.get(fi)) {
            let (train_w, test_w) = per_fold;
            let tr: BTreeSet<usize> = train_w.iter().copied().collect();
            let te: BTreeSet<usize> = test_w.iter().copied().collect();
            for t in tr.intersection(&te) {
                audit.split_trials.push((fold.index, *t));
            }
            let test_ids: BTreeSet<usize> = fold.test.iter().copied().collect();
            for t in tr.intersection(&test_ids) {
                audit.overlapping.push((fold.index, *t));
            }
        }
    }
    audit.overlapping.sort_unstable();
    audit.overlapping.dedup();
    audit
}

/// Trials per subject in each fold's test set.
pub fn test_counts_by_subject(plan: &SplitPlan, trials: &[TrialInfo]) -> Vec<BTreeMap<String, usize>> {
    let subject: HashMap<usize, &str> = trials.iter().map(|t| (t.trial_id, t.subject.as_str())).collect();
    plan.folds
        .iter()
        .map(|f| {
            let mut m = BTreeMap::new();
            for id in &f.test {
                *m.entry(subject[id].to_string()).or_insert(0) += 1;
            }
            m
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(subjects: usize, reps: u32) -> Vec<TrialInfo> {
        let mut out = Vec::new();
        for s in 0..subjects {
            for stage in Stage::ALL {
                for g in GestureClass::ALL {
                    for r in 1..=reps {
                        out.push(TrialInfo {
                            trial_id: out.len(),
                            subject: format!("P{s}"),
                            gesture: *g,
                            stage: *stage,
                            repetition: r,
                        });
                    }
                }
            }
        }
        out
    }

    #[test]
    fn loso_partitions_by_subject() {
        let trials = grid(4, 3);
        let plan = loso_splits(&trials, Task::GestureRecognition).unwrap();
        assert_eq!(plan.folds.len(), 4);
        let mut seen = BTreeSet::new();
        for f in &plan.folds {
            let test_subjects: BTreeSet<&str> = f.test.iter().map(|&i| trials[i].subject.as_str()).collect();
            assert_eq!(test_subjects.len(), 1);
            assert!(f.train.iter().all(|&i| trials[i].subject != f.label));
            assert_eq!(f.train.len() + f.test.len(), trials.len());
            for &t in &f.test {
                assert!(seen.insert(t));
            }
        }
        assert_eq!(seen.len(), trials.len());
        assert!(audit_plan(&plan, None).is_clean());
    }

    #[test]
    fn loso_needs_two_subjects() {
        assert!(loso_splits(&grid(1, 3), Task::GestureRecognition).is_err());
    }

    #[test]
    fn stratified_balances_subjects() {
        let trials = grid(4, 3);
        let plan = stratified_kfold_by_trial(&trials, 4, 7, Task::UserIdentification).unwrap();
        for counts in test_counts_by_subject(&plan, &trials) {
            assert_eq!(counts.len(), 4);
            assert!(counts.values().all(|&c| c == 15), "{counts:?}");
        }
        let mut all: Vec<usize> = plan.folds.iter().flat_map(|f| f.test.clone()).collect();
        all.sort_unstable();
        assert_eq!(all, (0..240).collect::<Vec<_>>());
        assert_eq!(plan, stratified_kfold_by_trial(&trials, 4, 7, Task::UserIdentification).unwrap());
        assert_ne!(plan, stratified_kfold_by_trial(&trials, 4, 8, Task::UserIdentification).unwrap());
        assert!(audit_plan(&plan, None).is_clean());
    }

    #[test]
    fn stratified_rejects_small_strata() {
        let mut trials = grid(2, 1);
        trials.retain(|t| t.subject == "P0" || t.trial_id % 20 < 3);
        assert!(stratified_kfold_by_trial(&trials, 4, 1, Task::UserIdentification).is_err());
    }

    #[test]
    fn audit_flags_overlap() {
        let plan = SplitPlan {
            task: Task::GestureRecognition,
            protocol: Protocol::Loso,
            folds: vec![Fold { index: 0, label: "x".into(), train: vec![1, 2], test: vec![2, 3] }],
        };
        let audit = audit_plan(&plan, Some(&[(vec![1, 1, 3], vec![3, 3])]));
        assert_eq!(audit.overlapping, vec![(0, 2), (0, 3)]);
        assert_eq!(audit.split_trials, vec![(0, 3)]);
    }
}
