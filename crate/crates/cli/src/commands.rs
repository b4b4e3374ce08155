use std::fmt::Write as _;

use anyhow::{bail, Context};
use gazegest_core::bench::{bench_suite, BenchEntry};
use gazegest_core::domain::Modality;
use gazegest_core::eval::report::subsets_text;
use gazegest_core::eval::*;
use gazegest_core::ingest::{ingest_log, DEFAULT_MAX_GAP};
use gazegest_core::models::{ModelKind, ModelSpec};
use gazegest_core::synthgen::{synthesize_session, SessionPlan, StyleRanges};
use gazegest_tensornet::{gradient_check, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::artifact::{sha256_hex, Writer};
use crate::config::{out_dir, read_data, Resolved, RunConfig};

pub const GRADCHECK_H: f64 = 1e-5;
pub const GRADCHECK_SCALARS: usize = 200;
pub const GRADCHECK_TOL: f64 = 1e-4;

/// A check ran to completion and failed (exit code 1, no usage problem).
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct CheckFailed(pub String);

fn plan_of(cfg: &RunConfig) -> anyhow::Result<SessionPlan> {
    let ranges = if cfg.plan.head_dominant { StyleRanges::head_dominant() } else { StyleRanges::default() };
    Ok(SessionPlan::synthetic(cfg.plan.subjects, cfg.plan.reps, cfg.seed, &ranges)?)
}

/// The log named by `--data`, strictly: any malformed line or broken trial
/// bracket stops the run. Without `--data`, a synthetic session.
fn load_dataset(cfg: &RunConfig) -> anyhow::Result<Dataset> {
    let trials = match &cfg.data {
        Some(path) => {
            let text = read_data(path)?;
            let out = ingest_log(&text, DEFAULT_MAX_GAP).with_context(|| format!("ingesting {}", path.display()))?;
            if let Some(m) = out.malformed.first() {
                bail!("{}: line {}: {} ({} malformed lines)", path.display(), m.line, m.reason, out.malformed.len());
            }
            if let Some(e) = out.segmentation.errors.first() {
                bail!("{}: {e}", path.display());
            }
            for r in &out.segmentation.rejected {
                eprintln!("warning: {}: skipped {r}", path.display());
            }
            out.segmentation.trials
        }
        None => synthesize_session(&plan_of(cfg)?, cfg.seed)?.trials,
    };
    Dataset::new(trials, cfg.window.t).context("preparing trials")
}

fn classes_for(cfg: &RunConfig, task: Task) -> usize {
    match task {
        Task::GestureRecognition => 5,
        Task::UserIdentification => cfg.plan.subjects,
    }
}

fn models_for(all: bool, r: &Resolved) -> Vec<ModelKind> {
    if all {
        ModelKind::ALL.to_vec()
    } else {
        vec![r.model]
    }
}

fn finish(w: &Writer) {
    for p in &w.written {
        eprintln!("wrote {}", p.display());
    }
}

pub fn simulate(cfg: &RunConfig, json_out: bool) -> anyhow::Result<()> {
    cfg.resolve()?;
    let session = synthesize_session(&plan_of(cfg)?, cfg.seed)?;
    let mut w = Writer::new(out_dir(cfg), cfg)?;
    let log = session.log_text();
    let manifest = session.manifest_text();
    w.text("session.log", &log)?;
    w.text("manifest.txt", &manifest)?;
    let summary = json!({
        "trials": session.trials.len(),
        "subjects": cfg.plan.subjects,
        "log_sha256": sha256_hex(log.as_bytes()),
        "manifest_sha256": sha256_hex(manifest.as_bytes()),
    });
    w.json("simulate.json", &summary)?;
    if json_out {
        println!("{}", serde_json::to_string_pretty(&summary)?);
    } else {
        println!("{} trials, {} subjects, seed {}", session.trials.len(), cfg.plan.subjects, cfg.seed);
    }
    finish(&w);
    Ok(())
}

pub struct EvalExtras {
    pub per_gesture: bool,
    pub cross_stage: bool,
}

pub fn eval(cfg: &RunConfig, extras: &EvalExtras, json_out: bool) -> anyhow::Result<()> {
    let r = cfg.resolve()?;
    let ds = load_dataset(cfg)?;
    let ecfg = cfg.eval_config(&r);
    let spec = ModelSpec::new(r.model, cfg.window.w, r.modality.dims(), ds.class_names(r.task).len());
    let mut w = Writer::new(out_dir(cfg), cfg)?;
    let prefix = format!("eval_{}_{}", r.task.name(), r.model.name());

    if extras.cross_stage {
        let report = run_cross_stage(&ds, &spec, &ecfg)?;
        w.text(&format!("{prefix}_cross_stage.txt"), &report.to_text())?;
        w.json(&format!("{prefix}_cross_stage.json"), &report)?;
        if json_out {
            println!("{}", serde_json::to_string_pretty(&report)?);
        } else {
            print!("{}", report.to_text());
        }
        finish(&w);
        return Ok(());
    }
    if extras.per_gesture {
        if r.task != Task::UserIdentification {
            return Err(crate::UsageError("--per-gesture applies to --task userid".into()).into());
        }
        let rows = run_userid_subsets(&ds, &spec, &ecfg, cfg.folds, cfg.seed)?;
        let text = subsets_text(&rows);
        w.text(&format!("{prefix}_per_gesture.txt"), &text)?;
        w.json(&format!("{prefix}_per_gesture.json"), &rows)?;
        if json_out {
            println!("{}", serde_json::to_string_pretty(&rows)?);
        } else {
            print!("{text}");
        }
        finish(&w);
        return Ok(());
    }

    let plan = match r.task {
        Task::GestureRecognition => loso_splits(&ds.info, r.task)?,
        Task::UserIdentification => stratified_kfold_by_trial(&ds.info, cfg.folds, cfg.seed, r.task)?,
    };
    let report = run_task(&ds, &spec, &plan, &ecfg)?;
    w.text(&format!("{prefix}.txt"), &report.to_text())?;
    w.text(&format!("{prefix}_folds.csv"), &report.folds_csv())?;
    w.text(&format!("{prefix}_confusion.csv"), &report.confusion_csv())?;
    w.text(&format!("{prefix}_timings.csv"), &report.timings_csv())?;
    w.json(&format!("{prefix}.json"), &report)?;
    if json_out {
        println!("{}", report.to_json());
    } else {
        print!("{}", report.to_text());
        println!("macro F1 {:.4}", report.aggregate.macro_f1);
    }
    finish(&w);
    Ok(())
}

pub fn ablate(cfg: &RunConfig, json_out: bool) -> anyhow::Result<()> {
    let r = cfg.resolve()?;
    let ds = load_dataset(cfg)?;
    let ecfg = cfg.eval_config(&r);
    let spec = ModelSpec::new(r.model, cfg.window.w, r.modality.dims(), ds.class_names(r.task).len());
    let table = run_modality_ablation(&ds, &spec, &ecfg, &Modality::ALL)?;
    let mut w = Writer::new(out_dir(cfg), cfg)?;
    let prefix = format!("ablate_{}", r.model.name());
    w.text(&format!("{prefix}.txt"), &table.to_text())?;
    w.text(&format!("{prefix}.csv"), &table.to_csv())?;
    w.json(&format!("{prefix}.json"), &table)?;
    if json_out {
        println!("{}", serde_json::to_string_pretty(&table)?);
    } else {
        print!("{}", table.to_text());
    }
    finish(&w);
    Ok(())
}

pub fn bench(cfg: &RunConfig, all: bool, json_out: bool) -> anyhow::Result<()> {
    let r = cfg.resolve()?;
    let entries: Vec<BenchEntry> = models_for(all, &r)
        .into_iter()
        .map(|k| BenchEntry {
            spec: ModelSpec::new(k, cfg.window.w, r.modality.dims(), classes_for(cfg, r.task)),
            macro_f1: None,
        })
        .collect();
    let table = bench_suite(&entries, &cfg.bench)?;
    let mut w = Writer::new(out_dir(cfg), cfg)?;
    let prefix = format!("bench_{}", r.task.name());
    w.text(&format!("{prefix}.txt"), &table.to_text())?;
    w.text(&format!("{prefix}.csv"), &table.to_csv())?;
    w.json(&format!("{prefix}.json"), &table)?;
    if json_out {
        println!("{}", serde_json::to_string_pretty(&table)?);
    } else {
        print!("{}", table.to_text());
    }
    finish(&w);
    Ok(())
}

pub fn gradcheck(cfg: &RunConfig, all: bool, json_out: bool) -> anyhow::Result<()> {
    let r = cfg.resolve()?;
    let c = classes_for(cfg, r.task);
    let d = r.modality.dims();
    let mut text = String::new();
    let mut rows = Vec::new();
    let mut failed = Vec::new();
    for kind in models_for(all, &r) {
        let mut g = ModelSpec::new(kind, cfg.window.w, d, c).build(cfg.seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let x = Tensor::from_fn(&[2, cfg.window.w, d], |_| rng.random_range(-1.0..1.0));
        let rep = gradient_check(&mut g, &x, &[1 % c, 3 % c], GRADCHECK_H, GRADCHECK_SCALARS, cfg.seed)?;
        let pass = rep.max_rel_error < GRADCHECK_TOL;
        if !pass {
            failed.push(kind.name());
        }
        let _ = writeln!(
            text,
            "{:<13} {}  max rel. error {:.3e} over {} of {} parameters (worst: {})",
            kind.display_name(),
            if pass { "PASS" } else { "FAIL" },
            rep.max_rel_error,
            rep.checked,
            rep.total_params,
            rep.worst.as_deref().unwrap_or("-")
        );
        rows.push(json!({
            "model": kind.name(),
            "pass": pass,
            "max_rel_error": rep.max_rel_error,
            "checked": rep.checked,
            "total_params": rep.total_params,
            "worst": rep.worst,
        }));
    }
    let mut w = Writer::new(out_dir(cfg), cfg)?;
    w.text("gradcheck.txt", &text)?;
    w.json("gradcheck.json", &rows)?;
    if json_out {
        println!("{}", serde_json::to_string_pretty(&rows)?);
    } else {
        print!("{text}");
    }
    finish(&w);
    if !failed.is_empty() {
        return Err(CheckFailed(format!("gradient check above {GRADCHECK_TOL:e} for {}", failed.join(", "))).into());
    }
    Ok(())
}
