//! The three classifiers, built on the tensornet layer set.
//!
//! All convolutions use "same" zero padding (`K / 2` on each side). With
//! valid padding the TinyHAR stack (kernel 5, strides 2,2,1,1) collapses
//! below one step for W=32, so same padding is what makes every model build
//! for any window of at least [`MIN_WINDOW`] frames.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use gazegest_tensornet::layers::{
    AttentionPool, ChannelMerge, ChannelSplit, Conv1d, Gelu, LastStep, Linear, Lstm, MergeLastTwo,
    PositionalEncoding, SelfAttention, TransformerBlock,
};
use gazegest_tensornet::{conv_output_len, softmax, Checkpoint, ModelGraph, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub const MIN_WINDOW: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    TinyHar,
    DeepConvLstm,
    SaHar,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [
        ModelKind::TinyHar,
        ModelKind::DeepConvLstm,
        ModelKind::SaHar,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::TinyHar => "tinyhar",
            ModelKind::DeepConvLstm => "deepconvlstm",
            ModelKind::SaHar => "sahar",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            ModelKind::TinyHar => "TinyHAR",
            ModelKind::DeepConvLstm => "DeepConvLSTM",
            ModelKind::SaHar => "SA-HAR",
        }
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        // Display names are accepted too: "SA-HAR" folds to "sahar".
        let key: String = s.chars().filter(|c| *c != '-').collect::<String>().to_ascii_lowercase();
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == key)
            .ok_or_else(|| format!("unknown model `{s}` (valid: tinyhar, deepconvlstm, sahar)"))
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TinyHarConfig {
    pub filters: usize,
    pub kernel: usize,
}

impl Default for TinyHarConfig {
    fn default() -> Self {
        Self {
            filters: 16,
            kernel: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeepConvLstmConfig {
    pub filters: usize,
    pub kernel: usize,
    pub conv_layers: usize,
    pub lstm_hidden: usize,
    pub lstm_layers: usize,
}

impl Default for DeepConvLstmConfig {
    fn default() -> Self {
        Self {
            filters: 64,
            kernel: 5,
            conv_layers: 4,
            lstm_hidden: 256,
            lstm_layers: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaHarConfig {
    pub embed: usize,
    pub kernel: usize,
    pub heads: usize,
    pub ff_width: usize,
    pub blocks: usize,
}

impl Default for SaHarConfig {
    fn default() -> Self {
        Self {
            embed: 128,
            kernel: 5,
            heads: 4,
            ff_width: 256,
            blocks: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Hyperparameters {
    TinyHar(TinyHarConfig),
    DeepConvLstm(DeepConvLstmConfig),
    SaHar(SaHarConfig),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub window: usize,
    pub dims: usize,
    pub classes: usize,
    pub hyper: Hyperparameters,
}

impl ModelSpec {
    pub fn new(kind: ModelKind, window: usize, dims: usize, classes: usize) -> Self {
        let hyper = match kind {
            ModelKind::TinyHar => Hyperparameters::TinyHar(TinyHarConfig::default()),
            ModelKind::DeepConvLstm => Hyperparameters::DeepConvLstm(DeepConvLstmConfig::default()),
            ModelKind::SaHar => Hyperparameters::SaHar(SaHarConfig::default()),
        };
        Self {
            kind,
            window,
            dims,
            classes,
            hyper,
        }
    }

    pub fn with_shape(&self, window: usize, dims: usize, classes: usize) -> Self {
        Self {
            window,
            dims,
            classes,
            ..self.clone()
        }
    }

    pub fn build(&self, seed: u64) -> Result<ModelGraph> {
        if self.dims == 0 || self.classes < 2 {
            return Err(invalid(format!(
                "{}: need D >= 1 and C >= 2, got D={} C={}",
                self.kind.display_name(),
                self.dims,
                self.classes
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match &self.hyper {
            Hyperparameters::TinyHar(c) => tinyhar(self, c, &mut rng),
            Hyperparameters::DeepConvLstm(c) => deepconvlstm(self, c, &mut rng),
            Hyperparameters::SaHar(c) => sahar(self, c, &mut rng),
        }
    }
}

/// Output length after a stack of same-padded convolutions, or an error
/// spelling out the arithmetic.
fn conv_stack_len(model: &str, w: usize, kernel: usize, strides: &[usize]) -> Result<usize> {
    if w < MIN_WINDOW {
        return Err(invalid(format!(
            "{model}: window W={w} is below the minimum of {MIN_WINDOW} frames"
        )));
    }
    if kernel == 0 || kernel % 2 == 0 {
        return Err(invalid(format!(
            "{model}: kernel length must be odd, got {kernel}"
        )));
    }
    let mut t = w;
    let mut trace = vec![t.to_string()];
    for &s in strides {
        t = conv_output_len(t, kernel, s, kernel / 2).ok_or_else(|| {
            invalid(format!(
                "{model}: conv stack (kernel {kernel}, strides {strides:?}) does not fit W={w}: {}",
                trace.join(" -> ")
            ))
        })?;
        trace.push(t.to_string());
    }
    Ok(t)
}

fn tinyhar(spec: &ModelSpec, c: &TinyHarConfig, rng: &mut ChaCha8Rng) -> Result<ModelGraph> {
    let (d, f, k) = (spec.dims, c.filters, c.kernel);
    let strides = [2, 2, 1, 1];
    conv_stack_len("TinyHAR", spec.window, k, &strides)?;
    let mut g = ModelGraph::new("TinyHAR", spec.window, d, spec.classes);
    g.push(ChannelSplit::new());
    for (i, &s) in strides.iter().enumerate() {
        let c_in = if i == 0 { 1 } else { f };
        g.push(Conv1d::new(&format!("conv{i}"), k, c_in, f, s, k / 2, rng));
        g.push(Gelu::new());
    }
    g.push(ChannelMerge::new(d));
    g.push(SelfAttention::new("channel_attn", f, 1, true, rng)?);
    g.push(MergeLastTwo::new());
    g.push(Linear::new("fusion", d * f, 2 * f, rng));
    g.push(Gelu::new());
    g.push(Lstm::new("lstm", 2 * f, 2 * f, rng));
    g.push(AttentionPool::new("temporal_pool", 2 * f, rng));
    g.push(Linear::new("classifier", 2 * f, spec.classes, rng));
    Ok(g)
}

fn deepconvlstm(
    spec: &ModelSpec,
    c: &DeepConvLstmConfig,
    rng: &mut ChaCha8Rng,
) -> Result<ModelGraph> {
    conv_stack_len(
        "DeepConvLSTM",
        spec.window,
        c.kernel,
        &vec![1; c.conv_layers],
    )?;
    if c.lstm_layers == 0 {
        return Err(invalid("DeepConvLSTM: need at least one LSTM layer"));
    }
    let mut g = ModelGraph::new("DeepConvLSTM", spec.window, spec.dims, spec.classes);
    let mut width = spec.dims;
    for i in 0..c.conv_layers {
        g.push(Conv1d::new(
            &format!("conv{i}"),
            c.kernel,
            width,
            c.filters,
            1,
            c.kernel / 2,
            rng,
        ));
        g.push(Gelu::new());
        width = c.filters;
    }
    for i in 0..c.lstm_layers {
        g.push(Lstm::new(&format!("lstm{i}"), width, c.lstm_hidden, rng));
        width = c.lstm_hidden;
    }
    g.push(LastStep::new());
    g.push(Linear::new("classifier", width, spec.classes, rng));
    Ok(g)
}

fn sahar(spec: &ModelSpec, c: &SaHarConfig, rng: &mut ChaCha8Rng) -> Result<ModelGraph> {
    conv_stack_len("SA-HAR", spec.window, c.kernel, &[1])?;
    let mut g = ModelGraph::new("SA-HAR", spec.window, spec.dims, spec.classes);
    g.push(Conv1d::new(
        "embed",
        c.kernel,
        spec.dims,
        c.embed,
        1,
        c.kernel / 2,
        rng,
    ));
    g.push(PositionalEncoding::new());
    for i in 0..c.blocks {
        g.push(TransformerBlock::new(
            &format!("block{i}"),
            c.embed,
            c.heads,
            c.ff_width,
            rng,
        )?);
    }
    g.push(AttentionPool::new("temporal_pool", c.embed, rng));
    g.push(Linear::new("classifier", c.embed, spec.classes, rng));
    Ok(g)
}

pub fn build_tinyhar(w: usize, d: usize, c: usize, seed: u64) -> Result<ModelGraph> {
    ModelSpec::new(ModelKind::TinyHar, w, d, c).build(seed)
}

pub fn build_deepconvlstm(w: usize, d: usize, c: usize, seed: u64) -> Result<ModelGraph> {
    ModelSpec::new(ModelKind::DeepConvLstm, w, d, c).build(seed)
}

pub fn build_sahar(w: usize, d: usize, c: usize, seed: u64) -> Result<ModelGraph> {
    ModelSpec::new(ModelKind::SaHar, w, d, c).build(seed)
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq)]
pub struct WindowPrediction {
    pub class: usize,
    pub probs: Vec<f64>,
}

/// Classify a batch of row-major `W x D` windows with one forward pass.
pub fn predict_batch(graph: &mut ModelGraph, windows: &[&[f64]]) -> Result<Vec<WindowPrediction>> {
    if windows.is_empty() {
        return Ok(Vec::new());
    }
    let per = graph.window() * graph.dims();
    let mut data = Vec::with_capacity(per * windows.len());
    for w in windows {
        if w.len() != per {
            return Err(Error::DimensionMismatch(format!(
                "window has {} values, model expects {}x{} = {per}",
                w.len(),
                graph.window(),
                graph.dims()
            )));
        }
        data.extend_from_slice(w);
    }
    let x = Tensor::new(vec![windows.len(), graph.window(), graph.dims()], data)?;
    let probs = softmax(&graph.forward(&x)?);
    let c = graph.classes();
    Ok(probs
        .data()
        .chunks_exact(c)
        .map(|p| WindowPrediction {
            class: argmax(p),
            probs: p.to_vec(),
        })
        .collect())
}

pub fn predict_window(graph: &mut ModelGraph, window: &[f64]) -> Result<WindowPrediction> {
    Ok(predict_batch(graph, &[window])?.remove(0))
}

/// Majority vote; ties go to the larger summed probability, then the lowest index.
pub fn vote(predictions: &[WindowPrediction]) -> Result<usize> {
    let first = predictions
        .first()
        .ok_or_else(|| invalid("cannot vote over zero windows"))?;
    let c = first.probs.len();
    let mut votes = vec![0usize; c];
    let mut mass = vec![0.0; c];
    for p in predictions {
        if p.probs.len() != c || p.class >= c {
            return Err(Error::DimensionMismatch(
                "window predictions disagree on class count".into(),
            ));
        }
        votes[p.class] += 1;
        for (m, q) in mass.iter_mut().zip(&p.probs) {
            *m += q;
        }
    }
    let mut best = 0;
    for i in 1..c {
        if votes[i] > votes[best] || (votes[i] == votes[best] && mass[i] > mass[best]) {
            best = i;
        }
    }
    Ok(best)
}

pub fn predict_trial(graph: &mut ModelGraph, windows: &[&[f64]]) -> Result<usize> {
    if windows.is_empty() {
        return Err(invalid("predict_trial needs at least one window"));
    }
    vote(&predict_batch(graph, windows)?)
}

pub fn checkpoint(graph: &ModelGraph, spec: &ModelSpec, seed: u64) -> Result<Checkpoint> {
    let spec_json = serde_json::to_string(spec).map_err(|e| invalid(e.to_string()))?;
    Ok(Checkpoint::from_graph(
        graph,
        &[("seed", seed.to_string()), ("spec", spec_json)],
    ))
}

pub fn save_model(
    graph: &ModelGraph,
    spec: &ModelSpec,
    seed: u64,
    manifest: &Path,
    blob: &Path,
) -> Result<()> {
    checkpoint(graph, spec, seed)?.write(manifest, blob)?;
    Ok(())
}

pub fn load_model(manifest: &Path, blob: &Path) -> Result<(ModelSpec, ModelGraph)> {
    let ck = Checkpoint::read(manifest, blob)?;
    let spec: ModelSpec = ck
        .meta("spec")
        .ok_or_else(|| invalid("checkpoint has no model spec"))
        .and_then(|s| {
            serde_json::from_str(s).map_err(|e| invalid(format!("checkpoint spec: {e}")))
        })?;
    let seed: u64 = ck.meta("seed").and_then(|s| s.parse().ok()).unwrap_or(0);
    let mut graph = spec.build(seed)?;
    ck.load_into(&mut graph)?;
    Ok((spec, graph))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pred(class: usize, probs: &[f64]) -> WindowPrediction {
        WindowPrediction {
            class,
            probs: probs.to_vec(),
        }
    }

    /// Parameter counts from layer shapes, independent of the builders.
    fn analytic_tinyhar(d: usize, c: usize) -> usize {
        let f = 16;
        let conv = (5 + 1) * f + 3 * (5 * f * f + f);
        let attn = 4 * f * f + 3 * f;
        let fusion = d * f * 2 * f + 2 * f;
        let h = 2 * f;
        let lstm = 4 * h * (h + h + 1);
        conv + attn + fusion + lstm + h + h * c + c
    }

    #[test]
    fn counts_match_layer_arithmetic() {
        for (d, c) in [(48, 5), (16, 4), (32, 5)] {
            assert_eq!(
                build_tinyhar(32, d, c, 0).unwrap().count_params(),
                analytic_tinyhar(d, c)
            );
        }
        let dcl = 5 * 48 * 64
            + 64
            + 3 * (5 * 64 * 64 + 64)
            + 4 * 256 * (64 + 256 + 1)
            + 4 * 256 * (512 + 1)
            + 256 * 5
            + 5;
        assert_eq!(
            build_deepconvlstm(32, 48, 5, 0).unwrap().count_params(),
            dcl
        );
        let block = 4 * 128 * 128 + 3 * 128 + 4 * 128 + 128 * 256 + 256 + 256 * 128 + 128;
        let sa = 5 * 48 * 128 + 128 + 2 * block + 128 + 128 * 5 + 5;
        assert_eq!(build_sahar(32, 48, 5, 0).unwrap().count_params(), sa);
    }

    #[test]
    fn default_counts_land_in_bands() {
        let tiny = build_tinyhar(32, 48, 5, 0).unwrap().count_params();
        let dcl = build_deepconvlstm(32, 48, 5, 0).unwrap().count_params();
        let sa = build_sahar(32, 48, 5, 0).unwrap().count_params();
        assert!((30_000..=60_000).contains(&tiny), "{tiny}");
        assert!((700_000..=1_400_000).contains(&dcl), "{dcl}");
        assert!((250_000..=600_000).contains(&sa), "{sa}");
        assert!(dcl as f64 / tiny as f64 >= 15.0);
        assert!(sa as f64 / tiny as f64 >= 6.0);
    }

    #[test]
    fn ordering_holds_across_configs() {
        for w in [32, 64] {
            for d in [16, 32, 48] {
                for c in [4, 5] {
                    let t = build_tinyhar(w, d, c, 0).unwrap().count_params();
                    let s = build_sahar(w, d, c, 0).unwrap().count_params();
                    let l = build_deepconvlstm(w, d, c, 0).unwrap().count_params();
                    assert!(t < s && s < l, "W={w} D={d} C={c}: {t} {s} {l}");
                }
            }
        }
    }

    #[test]
    fn builds_at_minimum_window_and_rejects_smaller() {
        for kind in ModelKind::ALL {
            let mut g = ModelSpec::new(kind, 8, 6, 3).build(1).unwrap();
            let y = g.forward(&Tensor::zeros(&[2, 8, 6])).unwrap();
            assert_eq!(y.shape(), &[2, 3]);
            let err = ModelSpec::new(kind, 7, 6, 3)
                .build(1)
                .unwrap_err()
                .to_string();
            assert!(err.contains("W=7"), "{err}");
        }
    }

    #[test]
    fn zeros_forward_is_finite() {
        for kind in ModelKind::ALL {
            let mut g = ModelSpec::new(kind, 32, 48, 5).build(3).unwrap();
            let y = g.forward(&Tensor::zeros(&[2, 32, 48])).unwrap();
            assert_eq!(y.shape(), &[2, 5]);
            assert!(y.all_finite());
        }
    }

    #[test]
    fn argmax_tie_breaks_low() {
        assert_eq!(argmax(&[0.2; 5]), 0);
        assert_eq!(argmax(&[0.0, 1.0, 3.0, 9.0, 3.0]), 3);
    }

    #[test]
    fn equal_logits_predict_class_zero() {
        // A zero classifier makes all logits equal.
        let mut g = build_tinyhar(8, 2, 4, 0).unwrap();
        for p in g.parameters_mut() {
            if p.name.starts_with("classifier") {
                p.value.fill(0.0);
            }
        }
        let p = predict_window(&mut g, &[0.5; 16]).unwrap();
        assert_eq!(p.class, 0);
        assert!(p.probs.iter().all(|&q| (q - 0.25).abs() < 1e-15));
        assert!((p.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(predict_window(&mut g, &[0.5; 15]).is_err());
    }

    #[test]
    fn voting_rules() {
        let a = pred(2, &[0.1, 0.1, 0.8]);
        let b = pred(0, &[0.8, 0.1, 0.1]);
        assert_eq!(vote(&[a.clone(), a.clone(), b.clone()]).unwrap(), 2);
        assert_eq!(vote(&[b.clone()]).unwrap(), 0);
        let lo = pred(0, &[0.45, 0.55, 0.0]);
        let hi = pred(1, &[0.45, 0.55, 0.0]);
        // class 0 mass 0.9, class 1 mass 1.1
        assert_eq!(vote(&[lo, hi]).unwrap(), 1);
        assert!(vote(&[]).is_err());
    }

    #[test]
    fn names_parse() {
        assert_eq!("SAHAR".parse::<ModelKind>().unwrap(), ModelKind::SaHar);
        let err = "resnet".parse::<ModelKind>().unwrap_err();
        assert!(err.contains("tinyhar") && err.contains("deepconvlstm"));
    }
}
