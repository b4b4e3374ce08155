//! Forward-pass latency measurement.

use std::fmt::Write;
use std::time::Instant;

use gazegest_tensornet::{ModelGraph, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::evaluation_active;
use crate::eval::report::aligned_table;
use crate::models::ModelSpec;

pub const MIN_ITERATIONS: usize = 10;
/// Distinct pre-generated inputs cycled through the timed loop.
const INPUT_POOL: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyConfig {
    pub iterations: usize,
    pub warmup: usize,
    pub batch: usize,
    pub seed: u64,
}

impl Default for LatencyConfig {
    fn default() -> Self {
        Self { iterations: 200, warmup: 20, batch: 1, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub model: String,
    pub w: usize,
    pub d: usize,
    pub c: usize,
    pub batch: usize,
    pub warmup: usize,
    /// Wall time of each timed forward call, microseconds per batch.
    pub samples_us: Vec<f64>,
    /// Per-window percentiles: batch time divided by batch size.
    pub p50_us: f64,
    pub p90_us: f64,
    pub p99_us: f64,
    pub params: usize,
}

/// Nearest-rank percentile of sorted data.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Times `iterations` forward passes after `warmup` untimed ones. Inputs are
/// seeded and generated before timing starts.
pub fn measure_latency(graph: &mut ModelGraph, cfg: &LatencyConfig) -> Result<LatencyReport> {
    if cfg.iterations < MIN_ITERATIONS {
        return Err(Error::Bench(format!(
            "need at least {MIN_ITERATIONS} iterations, got {}",
            cfg.iterations
        )));
    }
    if cfg.batch == 0 {
        return Err(Error::Bench("batch size must be at least 1".into()));
    }
    if evaluation_active() {
        return Err(Error::Bench("refusing to time while an evaluation is running".into()));
    }
    let (w, d) = (graph.window(), graph.dims());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let inputs = (0..INPUT_POOL)
        .map(|_| {
            let data = (0..cfg.batch * w * d).map(|_| rng.random_range(-1.0..1.0)).collect();
            Tensor::new(vec![cfg.batch, w, d], data)
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    for i in 0..cfg.warmup {
        graph.forward(&inputs[i % INPUT_POOL])?;
    }
    let mut samples_us = Vec::with_capacity(cfg.iterations);
    for i in 0..cfg.iterations {
        let x = &inputs[i % INPUT_POOL];
        let start = Instant::now();
        let out = graph.forward(x)?;
        samples_us.push(start.elapsed().as_secs_f64() * 1e6);
        std::hint::black_box(out);
    }
    let mut per_window: Vec<f64> = samples_us.iter().map(|s| s / cfg.batch as f64).collect();
    per_window.sort_by(f64::total_cmp);
    Ok(LatencyReport {
        model: graph.name().to_string(),
        w,
        d,
        c: graph.classes(),
        batch: cfg.batch,
        warmup: cfg.warmup,
        p50_us: percentile(&per_window, 50.0),
        p90_us: percentile(&per_window, 90.0),
        p99_us: percentile(&per_window, 99.0),
        samples_us,
        params: graph.count_params(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchEntry {
    pub spec: ModelSpec,
    /// Macro F1 from an earlier evaluation, when one is available.
    pub macro_f1: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub model: String,
    pub macro_f1: Option<f64>,
    pub params: usize,
    pub p50_ms: f64,
    pub latency: LatencyReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchTable {
    pub config: LatencyConfig,
    pub rows: Vec<BenchRow>,
}

const CAVEAT: &str = "latency: wall time per window (batch time / batch size), single thread, no CPU pinning";

impl BenchTable {
    pub fn row(&self, model: &str) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.model == model)
    }

    pub fn to_text(&self) -> String {
        let header: Vec<String> =
            ["model", "macro_f1", "params", "p50_ms/window", "p90_ms/window", "p99_ms/window"].map(String::from).to_vec();
        let rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                vec![
                    r.model.clone(),
                    r.macro_f1.map_or("-".into(), |f| format!("{f:.4}")),
                    r.params.to_string(),
                    format!("{:.3}", r.latency.p50_us / 1e3),
                    format!("{:.3}", r.latency.p90_us / 1e3),
                    format!("{:.3}", r.latency.p99_us / 1e3),
                ]
            })
            .collect();
        let shape = self.rows.first().map_or(String::new(), |r| format!(" W={} D={} C={}", r.latency.w, r.latency.d, r.latency.c));
        format!(
            "batch={} iterations={} warmup={}{shape}\n{}{CAVEAT}\n",
            self.config.batch,
            self.config.iterations,
            self.config.warmup,
            aligned_table(&header, &rows)
        )
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("model,macro_f1,params,w,d,c,batch,p50_us,p90_us,p99_us\n");
        for r in &self.rows {
            let l = &r.latency;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{:.3},{:.3},{:.3}",
                r.model,
                r.macro_f1.map_or(String::new(), |f| format!("{f:.6}")),
                r.params,
                l.w,
                l.d,
                l.c,
                l.batch,
                l.p50_us,
                l.p90_us,
                l.p99_us
            );
        }
        out
    }
}

/// Builds and times each model in turn.
pub fn bench_suite(entries: &[BenchEntry], cfg: &LatencyConfig) -> Result<BenchTable> {
    let mut rows = Vec::with_capacity(entries.len());
    for e in entries {
        let mut graph = e.spec.build(cfg.seed)?;
        let latency = measure_latency(&mut graph, cfg)?;
        rows.push(BenchRow {
            model: e.spec.kind.display_name().to_string(),
            macro_f1: e.macro_f1,
            params: latency.params,
            p50_ms: latency.p50_us / 1e3,
            latency,
        });
    }
    Ok(BenchTable { config: cfg.clone(), rows })
}
