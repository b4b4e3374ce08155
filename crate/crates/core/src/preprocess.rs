//! Resampling, modality selection, z-scoring, sliding windows and the
//! on-disk window cache.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::domain::{frame_vector, FrameSample, GestureClass, GestureTrial, Modality, Stage};
use crate::error::{invalid, Error, Result};

pub const RAW_CHANNELS: usize = 48;
const SNAP: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SequenceLabels {
    pub gesture: GestureClass,
    pub subject: String,
    pub stage: Stage,
    pub trial_id: usize,
}

/// Row-major `t x 48` matrix of flattened transforms.
#[derive(Clone, Debug, PartialEq)]
pub struct RawSequence {
    pub values: Vec<f64>,
    pub t: usize,
}

impl RawSequence {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * RAW_CHANNELS..(i + 1) * RAW_CHANNELS]
    }

    pub fn channel(&self, c: usize) -> Vec<f64> {
        (0..self.t)
            .map(|i| self.values[i * RAW_CHANNELS + c])
            .collect()
    }

    pub fn from_frames(frames: &[FrameSample]) -> Self {
        let mut values = Vec::with_capacity(frames.len() * RAW_CHANNELS);
        for f in frames {
            values.extend_from_slice(&frame_vector(f));
        }
        Self {
            values,
            t: frames.len(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence {
    /// Row-major `t x d`.
    pub values: Vec<f64>,
    pub t: usize,
    pub d: usize,
    pub labels: SequenceLabels,
}

/// Linear interpolation of rows sampled at `times` onto `t_out` points
/// uniformly spaced over `[times[0], times[last]]`. Weights within 1e-9 of
/// an endpoint snap to it, so already-uniform input is reproduced exactly.
pub fn resample_rows(times: &[f64], rows: &[f64], width: usize, t_out: usize) -> Result<Vec<f64>> {
    let n = times.len();
    if n < 2 {
        return Err(invalid(format!(
            "resampling needs at least 2 frames, got {n}"
        )));
    }
    if t_out < 2 {
        return Err(invalid(format!(
            "resample length must be at least 2, got {t_out}"
        )));
    }
    if rows.len() != n * width {
        return Err(Error::DimensionMismatch(format!(
            "{} values for {n} rows of width {width}",
            rows.len()
        )));
    }
    let t0 = times[0];
    let span = times[n - 1] - t0;
    let mut out = Vec::with_capacity(t_out * width);
    let mut i = 0;
    for j in 0..t_out {
        let src = if j == 0 {
            Some(0)
        } else if j == t_out - 1 {
            Some(n - 1)
        } else {
            None
        };
        if let Some(s) = src {
            out.extend_from_slice(&rows[s * width..(s + 1) * width]);
            continue;
        }
        let u = t0 + span * j as f64 / (t_out - 1) as f64;
        while i + 2 < n && times[i + 1] <= u {
            i += 1;
        }
        let (ta, tb) = (times[i], times[i + 1]);
        let w = if tb > ta {
            ((u - ta) / (tb - ta)).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let a = &rows[i * width..(i + 1) * width];
        let b = &rows[(i + 1) * width..(i + 2) * width];
        if w <= SNAP {
            out.extend_from_slice(a);
        } else if w >= 1.0 - SNAP {
            out.extend_from_slice(b);
        } else {
            out.extend(a.iter().zip(b).map(|(x, y)| x + w * (y - x)));
        }
    }
    Ok(out)
}

/// Resample all 48 flattened channels of a trial onto `t_out` uniform points.
pub fn resample(trial: &GestureTrial, t_out: usize) -> Result<RawSequence> {
    let raw = RawSequence::from_frames(&trial.frames);
    let times: Vec<f64> = trial.frames.iter().map(|f| f.t).collect();
    let values = resample_rows(&times, &raw.values, RAW_CHANNELS, t_out)?;
    Ok(RawSequence { values, t: t_out })
}

/// Keep the modality's columns of every row.
pub fn select_modality(raw: &RawSequence, m: Modality, labels: SequenceLabels) -> FeatureSequence {
    let cols = m.columns();
    let d = cols.len();
    let mut values = Vec::with_capacity(raw.t * d);
    for i in 0..raw.t {
        values.extend_from_slice(&raw.row(i)[cols.clone()]);
    }
    FeatureSequence {
        values,
        t: raw.t,
        d,
        labels,
    }
}

pub fn select_modality_frames(
    frames: &[FrameSample],
    m: Modality,
    labels: SequenceLabels,
) -> FeatureSequence {
    select_modality(&RawSequence::from_frames(frames), m, labels)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub count: usize,
}

impl NormStats {
    pub fn dims(&self) -> usize {
        self.mean.len()
    }

    /// Fit on row-major rows of width `d`.
    pub fn fit_rows<'a>(chunks: impl IntoIterator<Item = &'a [f64]>, d: usize) -> Result<Self> {
        if d == 0 {
            return Err(invalid("cannot fit normalization on zero-width rows"));
        }
        let mut sum = vec![0.0; d];
        let mut count = 0usize;
        let chunks: Vec<&[f64]> = chunks.into_iter().collect();
        for c in &chunks {
            if c.len() % d != 0 {
                return Err(Error::DimensionMismatch(format!(
                    "chunk of {} values is not a multiple of {d}",
                    c.len()
                )));
            }
            for row in c.chunks_exact(d) {
                for (s, v) in sum.iter_mut().zip(row) {
                    *s += v;
                }
                count += 1;
            }
        }
        if count == 0 {
            return Err(invalid("cannot fit normalization on an empty population"));
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
        let mut sq = vec![0.0; d];
        for c in &chunks {
            for row in c.chunks_exact(d) {
                for ((s, v), m) in sq.iter_mut().zip(row).zip(&mean) {
                    *s += (v - m) * (v - m);
                }
            }
        }
        let std = sq
            .iter()
            .map(|s| {
                let v = (s / count as f64).sqrt();
                if v < 1e-12 {
                    1.0
                } else {
                    v
                }
            })
            .collect();
        Ok(Self { mean, std, count })
    }

    pub fn apply_in_place(&self, values: &mut [f64], d: usize) -> Result<()> {
        if d != self.dims() || values.len() % d != 0 {
            return Err(Error::DimensionMismatch(format!(
                "normalization fitted on D={} applied to D={d}",
                self.dims()
            )));
        }
        for row in values.chunks_exact_mut(d) {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
        Ok(())
    }
}

pub fn zscore_fit(windows: &[LabeledWindow]) -> Result<NormStats> {
    let d = windows
        .first()
        .map(|w| w.d)
        .ok_or_else(|| invalid("cannot fit normalization on zero windows"))?;
    if let Some(w) = windows.iter().find(|w| w.d != d) {
        return Err(Error::DimensionMismatch(format!(
            "mixed window widths {d} and {}",
            w.d
        )));
    }
    NormStats::fit_rows(windows.iter().map(|w| w.values.as_slice()), d)
}

pub fn zscore_apply(seq: &FeatureSequence, stats: &NormStats) -> Result<FeatureSequence> {
    let mut out = seq.clone();
    stats.apply_in_place(&mut out.values, seq.d)?;
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledWindow {
    /// Row-major `w x d`.
    pub values: Vec<f64>,
    pub w: usize,
    pub d: usize,
    pub gesture: GestureClass,
    pub subject: String,
    pub trial_id: usize,
    pub stage: Stage,
    pub window_index: usize,
}

/// round-half-away-from-zero of `w * (1 - overlap)`, at least 1.
pub fn window_stride(w: usize, overlap: f64) -> usize {
    ((w as f64 * (1.0 - overlap)).round() as usize).max(1)
}

/// Window start indices, including a tail window ending at `t` if the regular
/// stride does not land there.
pub fn window_starts(t: usize, w: usize, overlap: f64) -> Result<Vec<usize>> {
    if w < 2 {
        return Err(invalid(format!(
            "window length must be at least 2, got {w}"
        )));
    }
    if w > t {
        return Err(invalid(format!(
            "window length {w} exceeds sequence length {t}"
        )));
    }
    if !(0.0..1.0).contains(&overlap) {
        return Err(invalid(format!(
            "overlap must lie in [0, 1), got {overlap}"
        )));
    }
    let s = window_stride(w, overlap);
    let mut starts: Vec<usize> = (0..).map(|k| k * s).take_while(|&st| st + w <= t).collect();
    if *starts.last().expect("w <= t gives a first window") != t - w {
        starts.push(t - w);
    }
    Ok(starts)
}

pub fn make_windows(seq: &FeatureSequence, w: usize, overlap: f64) -> Result<Vec<LabeledWindow>> {
    let starts = window_starts(seq.t, w, overlap)?;
    Ok(starts
        .into_iter()
        .enumerate()
        .map(|(k, st)| LabeledWindow {
            values: seq.values[st * seq.d..(st + w) * seq.d].to_vec(),
            w,
            d: seq.d,
            gesture: seq.labels.gesture,
            subject: seq.labels.subject.clone(),
            trial_id: seq.labels.trial_id,
            stage: seq.labels.stage,
            window_index: k,
        })
        .collect())
}

/// Windows of `seconds` taken over the raw frames, each resampled to `w`
/// points. A trial shorter than one window yields a single whole-trial window.
pub fn make_raw_windows(
    trial: &GestureTrial,
    m: Modality,
    labels: &SequenceLabels,
    seconds: f64,
    overlap: f64,
    w: usize,
) -> Result<Vec<LabeledWindow>> {
    let n = trial.frames.len();
    if n < 2 {
        return Err(invalid(format!(
            "trial {} has fewer than 2 frames",
            labels.trial_id
        )));
    }
    let mut gaps: Vec<f64> = trial.frames.windows(2).map(|p| p[1].t - p[0].t).collect();
    gaps.sort_by(f64::total_cmp);
    let dt = gaps[gaps.len() / 2];
    let len = ((seconds / dt).round() as usize).clamp(2, n);
    let starts = window_starts(n, len, overlap)?;
    let seq = select_modality_frames(&trial.frames, m, labels.clone());
    let times: Vec<f64> = trial.frames.iter().map(|f| f.t).collect();
    starts
        .into_iter()
        .enumerate()
        .map(|(k, st)| {
            let rows = &seq.values[st * seq.d..(st + len) * seq.d];
            let values = resample_rows(&times[st..st + len], rows, seq.d, w)?;
            Ok(LabeledWindow {
                values,
                w,
                d: seq.d,
                gesture: labels.gesture,
                subject: labels.subject.clone(),
                trial_id: labels.trial_id,
                stage: labels.stage,
                window_index: k,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct CacheMeta {
    pub modality: Modality,
    pub w: usize,
    pub overlap: f64,
}

fn tensor_bytes(windows: &[LabeledWindow]) -> Vec<u8> {
    let mut bytes = Vec::with_capacity(windows.iter().map(|w| w.values.len() * 8).sum());
    for w in windows {
        for v in &w.values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    bytes
}

/// Manifest text and tensor bytes for a window set. Both are pure functions
/// of the windows, so identical inputs give byte-identical files.
pub fn encode_cache(windows: &[LabeledWindow], meta: &CacheMeta) -> Result<(String, Vec<u8>)> {
    if let Some(bad) = windows
        .iter()
        .find(|w| w.w != meta.w || w.d != meta.modality.dims())
    {
        return Err(Error::DimensionMismatch(format!(
            "window {}x{} does not match cache spec {}x{}",
            bad.w,
            bad.d,
            meta.w,
            meta.modality.dims()
        )));
    }
    let bytes = tensor_bytes(windows);
    let hash = hex::encode(Sha256::digest(&bytes));
    let mut m = String::from("# gazegest window cache v1\n");
    let _ = writeln!(
        m,
        "shape {} {} {}",
        windows.len(),
        meta.w,
        meta.modality.dims()
    );
    let _ = writeln!(m, "modality {}", meta.modality.name());
    let _ = writeln!(m, "window {}", meta.w);
    let _ = writeln!(m, "overlap {}", meta.overlap);
    let _ = writeln!(m, "sha256 {hash}");
    for (i, w) in windows.iter().enumerate() {
        let _ = writeln!(
            m,
            "w {i} {} {} {} {} {}",
            w.trial_id,
            w.subject,
            w.gesture.token(),
            w.stage.token(),
            w.window_index
        );
    }
    Ok((m, bytes))
}

pub fn write_cache(
    windows: &[LabeledWindow],
    meta: &CacheMeta,
    manifest: &Path,
    tensor: &Path,
) -> Result<()> {
    let (m, bytes) = encode_cache(windows, meta)?;
    std::fs::write(manifest, m)?;
    std::fs::write(tensor, bytes)?;
    Ok(())
}

pub fn read_cache(manifest: &Path, tensor: &Path) -> Result<(CacheMeta, Vec<LabeledWindow>)> {
    let text = std::fs::read_to_string(manifest)?;
    let bytes = std::fs::read(tensor)?;
    decode_cache(&text, &bytes)
}

pub fn decode_cache(text: &str, bytes: &[u8]) -> Result<(CacheMeta, Vec<LabeledWindow>)> {
    let bad = |msg: &str| invalid(format!("window cache: {msg}"));
    let mut shape = None;
    let mut modality = None;
    let mut overlap = None;
    let mut hash = None;
    let mut entries = Vec::new();
    for line in text.lines().filter(|l| !l.starts_with('#')) {
        let f: Vec<&str> = line.split(' ').collect();
        match f[0] {
            "shape" if f.len() == 4 => {
                let p = |s: &str| s.parse::<usize>().map_err(|_| bad("bad shape"));
                shape = Some((p(f[1])?, p(f[2])?, p(f[3])?));
            }
            "modality" if f.len() == 2 => {
                modality = Some(f[1].parse::<Modality>().map_err(|e| bad(&e))?)
            }
            "overlap" if f.len() == 2 => {
                overlap = Some(f[1].parse::<f64>().map_err(|_| bad("bad overlap"))?)
            }
            "sha256" if f.len() == 2 => hash = Some(f[1].to_string()),
            "window" => {}
            "w" if f.len() == 7 => entries.push(f),
            _ => return Err(bad(&format!("unexpected line `{line}`"))),
        }
    }
    let (n, w, d) = shape.ok_or_else(|| bad("missing shape"))?;
    let modality = modality.ok_or_else(|| bad("missing modality"))?;
    if modality.dims() != d {
        return Err(bad("modality does not match shape"));
    }
    if hash.as_deref() != Some(hex::encode(Sha256::digest(bytes)).as_str()) {
        return Err(bad("tensor content hash mismatch"));
    }
    if bytes.len() != n * w * d * 8 || entries.len() != n {
        return Err(bad("tensor size does not match shape"));
    }
    let floats: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let windows = entries
        .into_iter()
        .enumerate()
        .map(|(i, f)| {
            Ok(LabeledWindow {
                values: floats[i * w * d..(i + 1) * w * d].to_vec(),
                w,
                d,
                trial_id: f[2].parse().map_err(|_| bad("bad trial id"))?,
                subject: f[3].to_string(),
                gesture: f[4].parse().map_err(|e: String| bad(&e))?,
                stage: f[5].parse().map_err(|e: String| bad(&e))?,
                window_index: f[6].parse().map_err(|_| bad("bad window index"))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((
        CacheMeta {
            modality,
            w,
            overlap: overlap.ok_or_else(|| bad("missing overlap"))?,
        },
        windows,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Transform4;

    fn labels() -> SequenceLabels {
        SequenceLabels {
            gesture: GestureClass::L0,
            subject: "P1".into(),
            stage: Stage::Fixed,
            trial_id: 9,
        }
    }

    #[test]
    fn linear_ramp_resamples_in_closed_form() {
        let times: Vec<f64> = (0..128).map(|i| i as f64 / 60.0).collect();
        let rows: Vec<f64> = (0..128).map(|i| i as f64).collect();
        let out = resample_rows(&times, &rows, 1, 64).unwrap();
        assert_eq!(out[0], 0.0);
        assert_eq!(out[63], 127.0);
        for (j, v) in out.iter().enumerate() {
            assert!((v - 127.0 * j as f64 / 63.0).abs() < 1e-9, "j={j}: {v}");
        }
    }

    #[test]
    fn uniform_input_of_target_length_is_identity() {
        let times: Vec<f64> = (0..64).map(|i| 12.3 + i as f64 / 60.0).collect();
        let rows: Vec<f64> = (0..64 * 3)
            .map(|i| ((i * 7919) % 101) as f64 * 0.37 - 5.0)
            .collect();
        let out = resample_rows(&times, &rows, 3, 64).unwrap();
        assert_eq!(out, rows);
    }

    #[test]
    fn constant_channel_stays_constant() {
        let times: Vec<f64> = (0..50)
            .map(|i| i as f64 * 0.017 + (i % 3) as f64 * 1e-3)
            .collect();
        let rows = vec![4.25; 50];
        assert!(resample_rows(&times, &rows, 1, 64)
            .unwrap()
            .iter()
            .all(|&v| v == 4.25));
    }

    #[test]
    fn resample_needs_two_frames() {
        assert!(resample_rows(&[0.0], &[1.0], 1, 64).is_err());
    }

    #[test]
    fn modality_widths_and_order() {
        let frame = FrameSample {
            t: 0.0,
            head: Transform4::translation([1.0, 2.0, 3.0]),
            left_eye: Transform4::IDENTITY,
            right_eye: Transform4::IDENTITY,
        };
        let seq = select_modality_frames(&[frame], Modality::Eyes, labels());
        assert_eq!(seq.d, 32);
        let id = Transform4::IDENTITY.flatten();
        assert_eq!(&seq.values[..16], &id);
        assert_eq!(&seq.values[16..], &id);
        assert_eq!(
            select_modality_frames(&[frame], Modality::Head, labels()).d,
            16
        );
        let all = select_modality_frames(&[frame], Modality::EyeHead, labels());
        assert_eq!(all.d, 48);
        assert_eq!(&all.values[32..], &frame.head.flatten());
    }

    #[test]
    fn zscore_basics() {
        let seq = FeatureSequence {
            values: (0..40)
                .map(|i| if i % 2 == 0 { 7.0 } else { i as f64 * 1.5 })
                .collect(),
            t: 20,
            d: 2,
            labels: labels(),
        };
        let windows = make_windows(&seq, 20, 0.0).unwrap();
        let stats = zscore_fit(&windows).unwrap();
        assert_eq!(stats.std[0], 1.0);
        let out = zscore_apply(&seq, &stats).unwrap();
        let col = |c: usize| {
            out.values
                .iter()
                .skip(c)
                .step_by(2)
                .copied()
                .collect::<Vec<_>>()
        };
        assert!(col(0).iter().all(|&v| v == 0.0));
        let c1 = col(1);
        let mean = c1.iter().sum::<f64>() / 20.0;
        let var = c1.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 20.0;
        assert!(mean.abs() < 1e-9 && (var.sqrt() - 1.0).abs() < 1e-9);

        let wide = FeatureSequence {
            values: vec![0.0; 48],
            t: 1,
            d: 48,
            labels: labels(),
        };
        let narrow = NormStats {
            mean: vec![0.0; 16],
            std: vec![1.0; 16],
            count: 1,
        };
        assert!(zscore_apply(&wide, &narrow).is_err());
    }

    #[test]
    fn window_counts() {
        assert_eq!(window_starts(64, 32, 0.5).unwrap(), vec![0, 16, 32]);
        let s = window_starts(64, 32, 0.9).unwrap();
        assert_eq!(s, vec![0, 3, 6, 9, 12, 15, 18, 21, 24, 27, 30, 32]);
        assert_eq!(window_starts(64, 64, 0.75).unwrap(), vec![0]);
        assert!(window_starts(10, 11, 0.5).is_err());
    }

    #[test]
    fn windows_inherit_labels() {
        let seq = FeatureSequence {
            values: (0..64 * 2).map(f64::from).collect(),
            t: 64,
            d: 2,
            labels: labels(),
        };
        let ws = make_windows(&seq, 32, 0.5).unwrap();
        assert_eq!(ws.len(), 3);
        assert!(ws
            .iter()
            .all(|w| w.trial_id == 9 && w.subject == "P1" && w.gesture == GestureClass::L0));
        assert_eq!(ws[1].values[0], 32.0);
    }

    #[test]
    fn cache_round_trip_and_tamper() {
        let seq = FeatureSequence {
            values: (0..64 * 16).map(|i| i as f64 * 0.1).collect(),
            t: 64,
            d: 16,
            labels: labels(),
        };
        let ws = make_windows(&seq, 32, 0.9).unwrap();
        let meta = CacheMeta {
            modality: Modality::Head,
            w: 32,
            overlap: 0.9,
        };
        let (text, mut bytes) = encode_cache(&ws, &meta).unwrap();
        let (meta2, back) = decode_cache(&text, &bytes).unwrap();
        assert_eq!(meta2, meta);
        assert_eq!(back, ws);
        bytes[5] ^= 1;
        assert!(decode_cache(&text, &bytes).is_err());
    }
}
