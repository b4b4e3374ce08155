//! End-to-end acceptance checks. Each test prints one `criterion N: PASS|FAIL`
//! line to stderr (bypassing the test harness capture) before asserting.
//!
//! Tests share one lock: the latency criterion must not time anything while
//! a training run is going, and on a single core the runs are faster one at
//! a time anyway.

mod support;

use std::collections::BTreeSet;
use std::io::Write;
use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::Instant;

use gazegest_core::bench::{measure_latency, LatencyConfig};
use gazegest_core::domain::Modality;
use gazegest_core::eval::*;
use gazegest_core::ingest::{parse_log, segment_trials, synchronize, DEFAULT_MAX_GAP};
use gazegest_core::models::{ModelKind, ModelSpec};
use gazegest_core::preprocess::window_starts;
use gazegest_core::synthgen::{generate_session, parse_manifest, ManifestEntry, SessionPlan, StyleRanges};
use gazegest_tensornet::{gradient_check, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::{oracle_metrics, synthetic_dataset};

const GESTURE_F1_MIN: f64 = 0.90;
const USERID_F1_MIN: f64 = 0.95;
const TINYHAR_PARAMS: std::ops::RangeInclusive<usize> = 30_000..=60_000;
const DEEPCONVLSTM_RATIO_MIN: f64 = 15.0;
const SAHAR_RATIO_MIN: f64 = 6.0;
const GRADCHECK_H: f64 = 1e-5;
const GRADCHECK_SCALARS: usize = 200;
const GRADCHECK_MAX_REL: f64 = 1e-4;
const METRICS_TOL: f64 = 1e-12;
const METRICS_CASES: usize = 1000;
const COVERAGE_CASES: usize = 1000;
const SESSION_SEED: u64 = 7;

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn report(n: u32, pass: bool, detail: impl AsRef<str>) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "criterion {n}: {verdict} - {}", detail.as_ref());
}

fn tinyhar(c: usize) -> ModelSpec {
    ModelSpec::new(ModelKind::TinyHar, 32, 48, c)
}

/// Training schedule for the end-to-end runs: short enough that the eight
/// LOSO folds plus four user-ID folds finish in minutes on one core.
fn e2e_config() -> EvalConfig {
    EvalConfig {
        train: TrainConfig { max_epochs: 12, patience: 4, ..TrainConfig::default() },
        ..EvalConfig::default()
    }
}

struct EndToEnd {
    gesture: EvalReport,
    userid: EvalReport,
    plans: Vec<SplitPlan>,
    seconds: f64,
}

fn run_end_to_end() -> EndToEnd {
    let t0 = Instant::now();
    let ds = synthetic_dataset(8, 3, SESSION_SEED, &StyleRanges::default());
    assert_eq!(ds.len(), 480);
    let cfg = e2e_config();
    let loso = loso_splits(&ds.info, Task::GestureRecognition).unwrap();
    let kfold = stratified_kfold_by_trial(&ds.info, 4, SESSION_SEED, Task::UserIdentification).unwrap();
    let gesture = run_task(&ds, &tinyhar(5), &loso, &cfg).unwrap();
    let userid = run_task(&ds, &tinyhar(8), &kfold, &cfg).unwrap();
    EndToEnd { gesture, userid, plans: vec![loso, kfold], seconds: t0.elapsed().as_secs_f64() }
}

fn end_to_end() -> &'static EndToEnd {
    static RUN: OnceLock<EndToEnd> = OnceLock::new();
    RUN.get_or_init(run_end_to_end)
}

#[test]
fn criterion_01_end_to_end_macro_f1() {
    let _s = serial();
    let run = end_to_end();
    let (g, u) = (run.gesture.aggregate.macro_f1, run.userid.aggregate.macro_f1);
    let pass = g >= GESTURE_F1_MIN && u >= USERID_F1_MIN;
    report(
        1,
        pass,
        format!(
            "LOSO gesture macro F1 {g:.4} (>= {GESTURE_F1_MIN}), 4-fold user-ID macro F1 {u:.4} (>= {USERID_F1_MIN}), {:.0} s",
            run.seconds
        ),
    );
    assert!(pass, "gesture {g}, user-ID {u}");
}

#[test]
fn criterion_02_parameter_relationships() {
    let _s = serial();
    let t0 = Instant::now();
    let count = |k| ModelSpec::new(k, 32, 48, 5).build(0).unwrap().count_params();
    let tiny = count(ModelKind::TinyHar);
    let dcl = count(ModelKind::DeepConvLstm);
    let sahar = count(ModelKind::SaHar);
    let (r_dcl, r_sahar) = (dcl as f64 / tiny as f64, sahar as f64 / tiny as f64);
    let secs = t0.elapsed().as_secs_f64();
    let pass = TINYHAR_PARAMS.contains(&tiny) && r_dcl >= DEEPCONVLSTM_RATIO_MIN && r_sahar >= SAHAR_RATIO_MIN && secs < 1.0;
    report(
        2,
        pass,
        format!("TinyHAR {tiny}, DeepConvLSTM {dcl} ({r_dcl:.1}x), SA-HAR {sahar} ({r_sahar:.1}x), {secs:.3} s"),
    );
    assert!(pass);
}

#[test]
fn criterion_03_latency_direction() {
    let _s = serial();
    let t0 = Instant::now();
    let cfg = LatencyConfig::default();
    let mut lines = Vec::new();
    let mut pass = true;
    for c in [5, 4] {
        let p50 = |k| {
            let mut g = ModelSpec::new(k, 32, 48, c).build(1).unwrap();
            measure_latency(&mut g, &cfg).unwrap().p50_us
        };
        let (tiny, sahar) = (p50(ModelKind::TinyHar), p50(ModelKind::SaHar));
        pass &= tiny < sahar;
        lines.push(format!("C={c}: TinyHAR {tiny:.0} us < SA-HAR {sahar:.0} us"));
    }
    let secs = t0.elapsed().as_secs_f64();
    pass &= secs < 120.0;
    report(3, pass, format!("{}, {secs:.1} s", lines.join("; ")));
    assert!(pass);
}

#[test]
fn criterion_04_gradient_check() {
    let _s = serial();
    let t0 = Instant::now();
    let mut worst = Vec::new();
    let mut pass = true;
    for kind in ModelKind::ALL {
        let mut g = ModelSpec::new(kind, 32, 48, 5).build(11).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(111);
        let x = Tensor::from_fn(&[2, 32, 48], |_| rng.random_range(-1.0..1.0));
        let r = gradient_check(&mut g, &x, &[1, 3], GRADCHECK_H, GRADCHECK_SCALARS, 11).unwrap();
        pass &= r.checked <= GRADCHECK_SCALARS && r.checked > 0 && r.max_rel_error < GRADCHECK_MAX_REL;
        worst.push(format!("{} {:.2e} over {}", kind.display_name(), r.max_rel_error, r.checked));
    }
    let secs = t0.elapsed().as_secs_f64();
    pass &= secs < 300.0;
    report(4, pass, format!("max rel. error {}, {secs:.1} s", worst.join(", ")));
    assert!(pass);
}

#[test]
fn criterion_05_metrics_oracle() {
    let _s = serial();
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let mut worst = 0.0f64;
    for _ in 0..METRICS_CASES {
        let n = rng.random_range(1..=8);
        let zero_rate = rng.random_range(0.0..0.7);
        let rows: Vec<Vec<i64>> = (0..n)
            .map(|_| (0..n).map(|_| if rng.random_bool(zero_rate) { 0 } else { rng.random_range(0..40) }).collect())
            .collect();
        let cm = ConfusionMatrix::from_rows(&rows).unwrap();
        let want = oracle_metrics(&cm.rows());
        let got = Metrics::of(&cm);
        worst = worst
            .max((got.accuracy - want.accuracy).abs())
            .max((got.macro_f1 - want.macro_f1).abs())
            .max((got.weighted_f1 - want.weighted_f1).abs());
    }
    let secs = t0.elapsed().as_secs_f64();
    let pass = worst <= METRICS_TOL && secs < 10.0;
    report(5, pass, format!("{METRICS_CASES} matrices, worst deviation {worst:.1e}, {secs:.2} s"));
    assert!(pass);
}

#[test]
fn criterion_06_windowing() {
    let _s = serial();
    let t0 = Instant::now();
    let half = window_starts(64, 32, 0.5).unwrap();
    let dense = window_starts(64, 32, 0.9).unwrap();
    let mut pass = half.len() == 3 && dense.len() == 12 && dense.last() == Some(&32);
    let mut rng = ChaCha8Rng::seed_from_u64(66);
    let mut uncovered = 0;
    for _ in 0..COVERAGE_CASES {
        let t = rng.random_range(2..=400);
        let w = rng.random_range(2..=t);
        let overlap = rng.random_range(0.0..0.99);
        let starts = window_starts(t, w, overlap).unwrap();
        let mut seen = vec![false; t];
        for &s in &starts {
            assert!(s + w <= t);
            seen[s..s + w].iter_mut().for_each(|v| *v = true);
        }
        uncovered += seen.iter().filter(|v| !**v).count();
    }
    let secs = t0.elapsed().as_secs_f64();
    pass &= uncovered == 0 && secs < 5.0;
    report(
        6,
        pass,
        format!("50%: {} windows, 90%: {} windows, {uncovered} uncovered frames over {COVERAGE_CASES} triples, {secs:.2} s", half.len(), dense.len()),
    );
    assert!(pass);
}

#[test]
fn criterion_07_leakage_audit() {
    let _s = serial();
    let run = end_to_end();
    let mut pass = true;
    let mut folds = 0;
    for (plan, r) in run.plans.iter().zip([&run.gesture, &run.userid]) {
        pass &= r.audit.is_clean() && r.audit.folds_checked == plan.folds.len();
        pass &= audit_plan_is_clean(plan);
        for (fold, fr) in plan.folds.iter().zip(&r.folds) {
            folds += 1;
            // Independent of the library audit: plan sides and window sides.
            let train: BTreeSet<usize> = fold.train.iter().copied().collect();
            pass &= fold.test.iter().all(|t| !train.contains(t));
            let train_w: BTreeSet<usize> = fr.train_window_trials.iter().copied().collect();
            let test_w: BTreeSet<usize> = fr.test_window_trials.iter().copied().collect();
            pass &= train_w.is_disjoint(&test_w);
            pass &= test_w.iter().all(|t| fold.test.contains(t));
            pass &= train_w.iter().all(|t| train.contains(t));
        }
    }
    report(7, pass, format!("{folds} folds across {} plans, no shared or split trials", run.plans.len()));
    assert!(pass);
}

fn audit_plan_is_clean(plan: &SplitPlan) -> bool {
    gazegest_core::eval::splits::audit_plan(plan, None).is_clean()
}

#[test]
fn criterion_08_log_round_trip() {
    let _s = serial();
    let plan = SessionPlan::synthetic(4, 3, SESSION_SEED, &StyleRanges::default()).unwrap();
    let (log, manifest) = generate_session(&plan, SESSION_SEED).unwrap();
    let want = parse_manifest(&manifest).unwrap();
    let parsed = parse_log(&log).unwrap();
    let sync = synchronize(&parsed.stream, DEFAULT_MAX_GAP).unwrap();
    let seg = segment_trials(&sync.frames, &parsed.stream.events);
    let got: Vec<ManifestEntry> = seg.trials.iter().map(ManifestEntry::of).collect();
    let pass = want.len() == 240 && got == want && seg.errors.is_empty() && seg.rejected.is_empty();
    report(8, pass, format!("{} trials segmented, {} in manifest, field-for-field equal: {}", got.len(), want.len(), got == want));
    assert!(pass);
}

#[test]
fn criterion_09_head_beats_eyes_when_head_dominant() {
    let _s = serial();
    let t0 = Instant::now();
    let ds = synthetic_dataset(4, 3, SESSION_SEED, &StyleRanges::head_dominant());
    let table = run_modality_ablation(&ds, &tinyhar(5), &e2e_config(), &[Modality::Head, Modality::Eyes]).unwrap();
    let head = table.row(Modality::Head).unwrap().average;
    let eyes = table.row(Modality::Eyes).unwrap().average;
    let pass = head > eyes;
    report(9, pass, format!("LOSO macro F1 Head {head:.4} vs Eyes {eyes:.4}, {:.0} s", t0.elapsed().as_secs_f64()));
    assert!(pass);
}

#[test]
fn criterion_10_determinism() {
    let _s = serial();
    let first = end_to_end();
    let second = run_end_to_end();
    let mut pass = true;
    let mut artifacts = 0;
    for (a, b) in [(&first.gesture, &second.gesture), (&first.userid, &second.userid)] {
        pass &= a.aggregate.macro_f1.to_bits() == b.aggregate.macro_f1.to_bits();
        for (x, y) in [(a.folds_csv(), b.folds_csv()), (a.confusion_csv(), b.confusion_csv()), (a.to_json(), b.to_json())] {
            artifacts += 1;
            pass &= x.as_bytes() == y.as_bytes();
        }
    }
    report(
        10,
        pass,
        format!(
            "rerun macro F1 {:.6}/{:.6}, {artifacts} artifacts byte-identical: {pass}, {:.0} s",
            second.gesture.aggregate.macro_f1, second.userid.aggregate.macro_f1, second.seconds
        ),
    );
    assert!(pass);
}
