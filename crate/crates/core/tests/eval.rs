mod support;

use gazegest_core::domain::{GestureClass, Modality, Stage};
use gazegest_core::eval::harness::mean_metrics;
use gazegest_core::eval::splits::test_counts_by_subject;
use gazegest_core::eval::*;
use gazegest_core::models::{ModelKind, ModelSpec};
use gazegest_core::synthgen::StyleRanges;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::{oracle_metrics, quick_config, synthetic_dataset};

fn tinyhar() -> ModelSpec {
    ModelSpec::new(ModelKind::TinyHar, 32, 48, 5)
}

#[test]
fn metrics_match_brute_force_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..1000 {
        let n = rng.random_range(1..=7);
        let sparsity = rng.random_range(0.0..0.8);
        let rows: Vec<Vec<i64>> = (0..n)
            .map(|_| (0..n).map(|_| if rng.random_bool(sparsity) { 0 } else { rng.random_range(0..25) }).collect())
            .collect();
        let cm = ConfusionMatrix::from_rows(&rows).unwrap();
        let want = oracle_metrics(&cm.rows());
        let got = Metrics::of(&cm);
        assert!((got.accuracy - want.accuracy).abs() <= 1e-12);
        assert!((got.macro_f1 - want.macro_f1).abs() <= 1e-12, "{rows:?}");
        assert!((got.weighted_f1 - want.weighted_f1).abs() <= 1e-12);
        let row_sums: Vec<u64> = cm.rows().iter().map(|r| r.iter().sum()).collect();
        assert_eq!(row_sums, (0..n).map(|c| cm.support(c)).collect::<Vec<_>>());
    }
}

#[test]
fn two_class_hand_example() {
    let cm = ConfusionMatrix::from_predictions(2, &[0, 0, 1, 1], &[0, 1, 1, 1]).unwrap();
    assert!((macro_f1(&cm) - (2.0 / 3.0 + 0.8) / 2.0).abs() < 1e-15);
    assert_eq!(accuracy(&cm), 0.75);
    assert!(ConfusionMatrix::from_rows(&[vec![1, 2]]).is_err());
    assert!(ConfusionMatrix::from_rows(&[vec![1, -2], vec![0, 1]]).is_err());
}

proptest! {
    #[test]
    fn aggregate_ignores_fold_order(values in proptest::collection::vec((0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0), 1..12), seed in any::<u64>()) {
        let ms: Vec<Metrics> = values.iter().map(|&(a, m, w)| Metrics { accuracy: a, macro_f1: m, weighted_f1: w }).collect();
        let mut shuffled = ms.clone();
        rand::seq::SliceRandom::shuffle(shuffled.as_mut_slice(), &mut ChaCha8Rng::seed_from_u64(seed));
        let (a, b) = (mean_metrics(&ms), mean_metrics(&shuffled));
        prop_assert_eq!(a.macro_f1.to_bits(), b.macro_f1.to_bits());
        prop_assert_eq!(a.accuracy.to_bits(), b.accuracy.to_bits());
        prop_assert_eq!(a.weighted_f1.to_bits(), b.weighted_f1.to_bits());
    }
}

#[test]
fn stratified_folds_hold_fifteen_trials_per_subject() {
    let ds = synthetic_dataset(4, 3, 7, &StyleRanges::default());
    let plan = stratified_kfold_by_trial(&ds.info, 4, 11, Task::UserIdentification).unwrap();
    for counts in test_counts_by_subject(&plan, &ds.info) {
        assert_eq!(counts.len(), 4);
        assert!(counts.values().all(|&n| n == 15), "{counts:?}");
    }
    let mut seen: Vec<usize> = plan.folds.iter().flat_map(|f| f.test.clone()).collect();
    seen.sort_unstable();
    assert_eq!(seen, (0..ds.len()).collect::<Vec<_>>());
    assert_eq!(plan, stratified_kfold_by_trial(&ds.info, 4, 11, Task::UserIdentification).unwrap());
}

#[test]
fn split_preconditions() {
    let ds = synthetic_dataset(1, 1, 7, &StyleRanges::default());
    assert!(loso_splits(&ds.info, Task::GestureRecognition).is_err());
    assert!(stratified_kfold_by_trial(&ds.info, 40, 1, Task::UserIdentification).is_err());
}

#[test]
fn run_task_rejects_unlearnable_plans() {
    let ds = synthetic_dataset(3, 1, 7, &StyleRanges::default());
    let cfg = quick_config(1);

    let loso_uid = loso_splits(&ds.info, Task::UserIdentification).unwrap();
    let err = run_task(&ds, &tinyhar(), &loso_uid, &cfg).unwrap_err().to_string();
    assert!(err.contains("stratified"), "{err}");

    let mut empty = loso_splits(&ds.info, Task::GestureRecognition).unwrap();
    empty.folds[1].test.clear();
    assert!(run_task(&ds, &tinyhar(), &empty, &cfg).unwrap_err().to_string().contains("empty"));

    let no_z = ds.subset(|t| t.gesture != GestureClass::Z0).unwrap();
    let plan = loso_splits(&no_z.info, Task::GestureRecognition).unwrap();
    let err = run_task(&no_z, &tinyhar(), &plan, &cfg).unwrap_err().to_string();
    assert!(err.contains("never appears"), "{err}");
}

#[test]
fn reports_are_deterministic_and_leak_free() {
    let ds = synthetic_dataset(3, 1, 21, &StyleRanges::default());
    let plan = stratified_kfold_by_trial(&ds.info, 2, 3, Task::UserIdentification).unwrap();
    let cfg = quick_config(2);
    let a = run_task(&ds, &tinyhar(), &plan, &cfg).unwrap();
    let b = run_task(&ds, &tinyhar(), &plan, &EvalConfig { jobs: 2, ..cfg.clone() }).unwrap();
    assert_eq!(a.folds_csv(), b.folds_csv());
    assert_eq!(a.confusion_csv(), b.confusion_csv());
    assert_eq!(a.aggregate.macro_f1.to_bits(), b.aggregate.macro_f1.to_bits());
    assert!(a.audit.is_clean());
    assert_eq!(a.audit.folds_checked, 2);
    for f in &a.folds {
        let counts: Vec<u64> = (0..f.confusion.classes()).map(|c| f.confusion.support(c)).collect();
        assert_eq!(counts.iter().sum::<u64>() as usize, f.test_windows);
        assert!(f.train_window_trials.iter().all(|t| !f.test_window_trials.contains(t)));
    }
    assert_eq!(a.folds_csv().lines().count(), 1 + 2 + 1);
    assert_eq!(a.params, 38_181 - (5 - 3) * 33);
}

#[test]
fn permuted_labels_score_near_chance() {
    let ds = synthetic_dataset(4, 2, 13, &StyleRanges::default());
    let plan = loso_splits(&ds.info, Task::GestureRecognition).unwrap();
    // No validation holdout: with random labels the lowest validation loss
    // belongs to a near-constant predictor, which scores below chance.
    let mut cfg = quick_config(8);
    cfg.train.val_fraction = 0.0;
    cfg.train.permute_labels = Some(99);
    let r = run_task(&ds, &tinyhar(), &plan, &cfg).unwrap();
    let chance = 1.0 / 5.0;
    println!("permuted-label macro F1 {:.4}", r.aggregate.macro_f1);
    assert!((r.aggregate.macro_f1 - chance).abs() <= 0.1, "macro F1 {}", r.aggregate.macro_f1);
}

#[test]
fn cross_stage_recall_is_no_easier_than_same_stage() {
    let ds = synthetic_dataset(4, 3, 17, &StyleRanges::default());
    let r = run_cross_stage(&ds, &tinyhar(), &quick_config(6)).unwrap();
    let recall = r.recall.aggregate.macro_f1;
    let same = r.same_stage.aggregate.macro_f1;
    assert!(recall <= same, "recall {recall} > same-stage {same}");
    assert!(r.recall.audit.is_clean() && r.same_stage.audit.is_clean());
    assert!(r.to_text().contains("recall"));

    let no_recall = ds.subset(|t| t.stage != Stage::Recall).unwrap();
    assert!(run_cross_stage(&no_recall, &tinyhar(), &quick_config(1)).is_err());
}

#[test]
fn userid_subsets_cover_every_gesture() {
    let ds = synthetic_dataset(3, 1, 23, &StyleRanges::default());
    let rows = run_userid_subsets(&ds, &tinyhar(), &quick_config(1), 4, 5).unwrap();
    assert_eq!(rows.len(), 6);
    assert_eq!(rows[0].gesture, None);
    let gestures: Vec<GestureClass> = rows[1..].iter().map(|r| r.gesture.unwrap()).collect();
    assert_eq!(gestures, GestureClass::ALL.to_vec());
    let text = gazegest_core::eval::report::subsets_text(&rows);
    assert_eq!(text.lines().count(), 3 + 6);
}

#[test]
fn ablation_table_layout() {
    let ds = synthetic_dataset(2, 1, 29, &StyleRanges::default());
    let t = run_modality_ablation(&ds, &tinyhar(), &quick_config(1), &Modality::ALL).unwrap();
    assert_eq!(t.rows.len(), 5);
    assert_eq!(t.subjects, vec!["P0", "P1"]);
    assert!(t.rows.iter().all(|r| r.per_subject.len() == 2));
    assert_eq!(t.average_row.len(), 3);
    assert_eq!(t.row(Modality::EyeHead).unwrap().dims, 48);
    let text = t.to_text();
    let labels: Vec<&str> = text.lines().skip(3).map(|l| l.split_whitespace().next().unwrap()).collect();
    assert_eq!(labels, ["Eye_Head", "Eyes", "Left_Eye", "Right_Eye", "Head", "average"]);
    assert_eq!(t.to_csv().lines().count(), 1 + 5 + 1);
}
