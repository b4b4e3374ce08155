//! Synthetic sessions: dot-following gestures performed by parameterized
//! subjects whose gaze is split between head rotation and eye rotation.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::domain::{FrameSample, GestureClass, GestureTrial, Stage, Transform4};
use crate::error::{invalid, Result};
use crate::ingest::{Channel, EventKind, EventRecord, RawStream, SampleRecord};

/// Metres per logical screen point (163 points per inch).
pub const METERS_PER_POINT: f64 = 0.1558e-3;
pub const INTEROCULAR_HALF: f64 = 0.031;
/// Duration of each half of the slow-down/speed-up around a corner.
pub const CORNER_RAMP_S: f64 = 0.12;
const INTER_TRIAL_GAP_S: f64 = 1.0;

#[derive(Clone, Debug, PartialEq)]
pub struct GestureTemplate {
    pub gesture: GestureClass,
    pub polyline: Vec<[f64; 2]>,
    pub path_length: f64,
}

fn polyline_length(points: &[[f64; 2]]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]))
        .sum()
}

/// Templates live in a 300x300 point box centred on the origin, screen y down.
pub fn gesture_template(g: GestureClass) -> GestureTemplate {
    let polyline: Vec<[f64; 2]> = match g {
        GestureClass::Vertical => vec![[0.0, -150.0], [0.0, 150.0]],
        GestureClass::Horizontal => vec![[-150.0, 0.0], [150.0, 0.0]],
        GestureClass::L0 => vec![[-150.0, 150.0], [-150.0, -150.0], [150.0, -150.0]],
        // L0 rotated by 270 degrees: (x, y) -> (y, -x).
        GestureClass::L270 => vec![[150.0, 150.0], [-150.0, 150.0], [-150.0, -150.0]],
        GestureClass::Z0 => vec![
            [-150.0, 150.0],
            [150.0, 150.0],
            [-150.0, -150.0],
            [150.0, -150.0],
        ],
    };
    GestureTemplate {
        gesture: g,
        path_length: polyline_length(&polyline),
        polyline,
    }
}

pub fn nominal_duration(template: &GestureTemplate, dot_speed: f64) -> Result<f64> {
    if !(dot_speed > 0.0) {
        return Err(invalid(format!(
            "dot_speed must be positive, got {dot_speed}"
        )));
    }
    Ok(template.path_length / dot_speed)
}

/// Position along a polyline driven at constant speed with cosine speed ramps
/// of [`CORNER_RAMP_S`] on each side of every interior corner. Each ramp costs
/// half its duration, so every corner adds one ramp length to the total time.
#[derive(Clone, Debug)]
pub struct DotPath {
    points: Vec<[f64; 2]>,
    speed: f64,
    // Per segment: (length, ramp_in, ramp_out, duration, start time).
    segments: Vec<(f64, f64, f64, f64, f64)>,
    duration: f64,
}

impl DotPath {
    pub fn new(points: &[[f64; 2]], speed: f64, ramp: f64) -> Self {
        let n = points.len() - 1;
        let mut segments = Vec::with_capacity(n);
        let mut t = 0.0;
        for i in 0..n {
            let len = (points[i + 1][0] - points[i][0]).hypot(points[i + 1][1] - points[i][1]);
            let r_in = if i > 0 { ramp } else { 0.0 };
            let r_out = if i + 1 < n { ramp } else { 0.0 };
            let dur = len / speed + 0.5 * (r_in + r_out);
            segments.push((len, r_in, r_out, dur, t));
            t += dur;
        }
        Self {
            points: points.to_vec(),
            speed,
            segments,
            duration: t,
        }
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    pub fn position(&self, t: f64) -> [f64; 2] {
        let t = t.clamp(0.0, self.duration);
        let idx = self.segments.iter().rposition(|s| s.4 <= t).unwrap_or(0);
        let (len, r_in, r_out, dur, start) = self.segments[idx];
        let tau = (t - start).min(dur);
        let v = self.speed;
        let s = if tau < r_in {
            0.5 * v * (tau - r_in / PI * (PI * tau / r_in).sin())
        } else if tau > dur - r_out {
            let rem = dur - tau;
            len - 0.5 * v * (rem - r_out / PI * (PI * rem / r_out).sin())
        } else {
            0.5 * v * r_in + v * (tau - r_in)
        };
        let frac = if len > 0.0 {
            (s / len).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let a = self.points[idx];
        let b = self.points[idx + 1];
        [a[0] + frac * (b[0] - a[0]), a[1] + frac * (b[1] - a[1])]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tremor {
    pub frequency_hz: f64,
    pub amplitude_deg: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectStyle {
    pub subject_id: String,
    /// Share of the gaze angle carried by head rotation.
    pub head_share: f64,
    pub speed_gain: f64,
    pub amplitude_gain: f64,
    pub head_distance: f64,
    pub head_offset: [f64; 3],
    pub tremor: Tremor,
    pub noise_sigma_deg: f64,
}

impl SubjectStyle {
    /// A noise-free, centred subject; handy for tests.
    pub fn neutral(subject_id: &str, head_share: f64) -> Self {
        Self {
            subject_id: subject_id.to_string(),
            head_share,
            speed_gain: 1.0,
            amplitude_gain: 1.0,
            head_distance: 0.40,
            head_offset: [0.0; 3],
            tremor: Tremor {
                frequency_hz: 5.0,
                amplitude_deg: 0.0,
            },
            noise_sigma_deg: 0.0,
        }
    }
}

/// Sampling ranges for subject styles. All ranges are inclusive uniform.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StyleRanges {
    pub head_share: (f64, f64),
    pub speed_gain: (f64, f64),
    pub amplitude_gain: (f64, f64),
    pub head_distance: (f64, f64),
    pub head_offset: f64,
    pub tremor_frequency: (f64, f64),
    pub tremor_amplitude_deg: (f64, f64),
    pub noise_sigma_deg: (f64, f64),
}

impl Default for StyleRanges {
    fn default() -> Self {
        Self {
            head_share: (0.3, 0.95),
            speed_gain: (0.8, 1.25),
            amplitude_gain: (0.85, 1.15),
            head_distance: (0.35, 0.45),
            head_offset: 0.03,
            tremor_frequency: (3.0, 8.0),
            tremor_amplitude_deg: (0.02, 0.1),
            noise_sigma_deg: (0.05, 0.15),
        }
    }
}

impl StyleRanges {
    /// Every subject head-dominant.
    pub fn head_dominant() -> Self {
        Self {
            head_share: (0.9, 0.95),
            ..Self::default()
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, subject_id: &str, rng: &mut R) -> SubjectStyle {
        let mut u = |r: (f64, f64)| {
            if r.1 > r.0 {
                rng.random_range(r.0..=r.1)
            } else {
                r.0
            }
        };
        let head_share = u(self.head_share);
        let speed_gain = u(self.speed_gain);
        let amplitude_gain = u(self.amplitude_gain);
        let head_distance = u(self.head_distance);
        let o = self.head_offset;
        let head_offset = [u((-o, o)), u((-o, o)), u((-o, o))];
        let tremor = Tremor {
            frequency_hz: u(self.tremor_frequency),
            amplitude_deg: u(self.tremor_amplitude_deg),
        };
        let noise_sigma_deg = u(self.noise_sigma_deg);
        SubjectStyle {
            subject_id: subject_id.to_string(),
            head_share,
            speed_gain,
            amplitude_gain,
            head_distance,
            head_offset,
            tremor,
            noise_sigma_deg,
        }
    }
}

/// How much each stage perturbs a performance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageEffects {
    pub irecall_amplitude: f64,
    pub recall_amplitude: f64,
    pub recall_rotation_deg: f64,
    /// Per-trial jitter of head position, metres (standard deviation).
    pub head_position_jitter: f64,
}

impl Default for StageEffects {
    fn default() -> Self {
        Self {
            irecall_amplitude: 0.10,
            recall_amplitude: 0.15,
            recall_rotation_deg: 5.0,
            head_position_jitter: 0.002,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionPlan {
    pub subjects: Vec<SubjectStyle>,
    pub gestures: Vec<GestureClass>,
    pub stages: Vec<Stage>,
    pub repetitions: u32,
    pub sample_rate: f64,
    pub dot_speed: f64,
    pub stage_effects: StageEffects,
}

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Independent seed for item `index` of a stream rooted at `seed`.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03))
}

const STYLE_STREAM: u64 = 0x5354_594C_45;

impl SessionPlan {
    /// `n_subjects` subjects "P0".."P{n-1}" with styles drawn from `ranges`.
    pub fn synthetic(
        n_subjects: usize,
        repetitions: u32,
        seed: u64,
        ranges: &StyleRanges,
    ) -> Result<Self> {
        if n_subjects == 0 {
            return Err(invalid("a session needs at least one subject"));
        }
        if repetitions == 0 {
            return Err(invalid("repetitions must be at least 1"));
        }
        let subjects = (0..n_subjects)
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed ^ STYLE_STREAM, i as u64));
                ranges.sample(&format!("P{i}"), &mut rng)
            })
            .collect();
        Ok(Self {
            subjects,
            gestures: GestureClass::ALL.to_vec(),
            stages: Stage::ALL.to_vec(),
            repetitions,
            sample_rate: 60.0,
            dot_speed: 100.0,
            stage_effects: StageEffects::default(),
        })
    }

    pub fn trial_count(&self) -> usize {
        self.subjects.len() * self.gestures.len() * self.stages.len() * self.repetitions as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.subjects.is_empty()
            || self.gestures.is_empty()
            || self.stages.is_empty()
            || self.repetitions == 0
        {
            return Err(invalid(
                "session plan needs subjects, gestures, stages and repetitions",
            ));
        }
        if !(self.sample_rate > 0.0) || !(self.dot_speed > 0.0) {
            return Err(invalid("sample_rate and dot_speed must be positive"));
        }
        for s in &self.subjects {
            if s.subject_id.is_empty() || s.subject_id.contains(char::is_whitespace) {
                return Err(invalid(format!(
                    "subject id `{}` must be non-empty without whitespace",
                    s.subject_id
                )));
            }
            if !(s.speed_gain > 0.0)
                || !(s.head_distance > 0.0)
                || !(0.0..=1.0).contains(&s.head_share)
            {
                return Err(invalid(format!(
                    "subject {} has an out-of-range style",
                    s.subject_id
                )));
            }
        }
        Ok(())
    }

    /// Trial order: subject, stage, gesture, repetition.
    pub fn trial_specs(&self) -> Vec<TrialSpec> {
        let mut out = Vec::with_capacity(self.trial_count());
        for (si, _) in self.subjects.iter().enumerate() {
            for &stage in &self.stages {
                for &gesture in &self.gestures {
                    for rep in 1..=self.repetitions {
                        out.push(TrialSpec {
                            index: out.len(),
                            subject: si,
                            gesture,
                            stage,
                            repetition: rep,
                        });
                    }
                }
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TrialSpec {
    pub index: usize,
    pub subject: usize,
    pub gesture: GestureClass,
    pub stage: Stage,
    pub repetition: u32,
}

/// R_y(yaw) * R_x(pitch).
pub fn gaze_rotation(yaw: f64, pitch: f64) -> [[f64; 3]; 3] {
    let (sy, cy) = yaw.sin_cos();
    let (sp, cp) = pitch.sin_cos();
    [
        [cy, sy * sp, sy * cp],
        [0.0, cp, -sp],
        [-sy, cy * sp, cy * cp],
    ]
}

/// Inverse of [`gaze_rotation`] for |pitch|, |yaw| < 90 degrees.
pub fn yaw_pitch(r: &[[f64; 3]; 3]) -> (f64, f64) {
    let pitch = (-r[1][2]).atan2(r[1][1]);
    let yaw = (-r[2][0]).atan2(r[0][0]);
    (yaw, pitch)
}

/// Per-trial variation applied on top of the subject's style.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrialVariation {
    pub amplitude: f64,
    pub rotation_rad: f64,
    pub head_jitter: [f64; 3],
    pub tremor_phase: [f64; 2],
}

impl TrialVariation {
    pub const NONE: Self = Self {
        amplitude: 1.0,
        rotation_rad: 0.0,
        head_jitter: [0.0; 3],
        tremor_phase: [0.0; 2],
    };

    pub fn draw<R: Rng + ?Sized>(stage: Stage, effects: &StageEffects, rng: &mut R) -> Self {
        let (amp, rot) = match stage {
            Stage::Follow | Stage::Fixed => (0.0, 0.0),
            Stage::IRecall => (effects.irecall_amplitude, 0.0),
            Stage::Recall => (effects.recall_amplitude, effects.recall_rotation_deg),
        };
        let amplitude = if amp > 0.0 {
            rng.random_range(1.0 - amp..=1.0 + amp)
        } else {
            1.0
        };
        let rotation_rad = if rot > 0.0 {
            rng.random_range(-rot..=rot).to_radians()
        } else {
            0.0
        };
        let jitter = Normal::new(0.0, effects.head_position_jitter.max(0.0)).expect("finite sigma");
        let head_jitter = [jitter.sample(rng), jitter.sample(rng), jitter.sample(rng)];
        let tremor_phase = [
            rng.random_range(0.0..2.0 * PI),
            rng.random_range(0.0..2.0 * PI),
        ];
        Self {
            amplitude,
            rotation_rad,
            head_jitter,
            tremor_phase,
        }
    }
}

/// Nominal gaze angles (yaw, pitch) in radians for a screen point.
pub fn gaze_angles(p: [f64; 2], distance: f64) -> (f64, f64) {
    let x = p[0] * METERS_PER_POINT;
    let y = p[1] * METERS_PER_POINT;
    (x.atan2(distance), (-y).atan2(distance))
}

/// Dot trajectory for one trial, after style and stage variation.
pub fn trial_path(
    template: &GestureTemplate,
    style: &SubjectStyle,
    var: &TrialVariation,
    dot_speed: f64,
) -> DotPath {
    let (s, c) = var.rotation_rad.sin_cos();
    let gain = style.amplitude_gain * var.amplitude;
    let pts: Vec<[f64; 2]> = template
        .polyline
        .iter()
        .map(|p| [gain * (c * p[0] - s * p[1]), gain * (s * p[0] + c * p[1])])
        .collect();
    // Speed scales with the gain so amplitude changes shape, not tempo.
    DotPath::new(&pts, dot_speed * style.speed_gain * gain, CORNER_RAMP_S)
}

/// Render frames for a trial starting at `t_start`.
pub fn render_trial(
    template: &GestureTemplate,
    style: &SubjectStyle,
    var: &TrialVariation,
    sample_rate: f64,
    dot_speed: f64,
    t_start: f64,
    rng: &mut impl Rng,
) -> Vec<FrameSample> {
    let path = trial_path(template, style, var, dot_speed);
    let n = ((path.duration() * sample_rate).round() as usize).max(2);
    let alpha = style.head_share;
    let noise =
        Normal::new(0.0, style.noise_sigma_deg.to_radians().max(0.0)).expect("finite sigma");
    let tremor_amp = style.tremor.amplitude_deg.to_radians();
    let omega = 2.0 * PI * style.tremor.frequency_hz;
    let head_pos = [
        style.head_offset[0] + var.head_jitter[0],
        style.head_offset[1] + var.head_jitter[1],
        style.head_distance + style.head_offset[2] + var.head_jitter[2],
    ];
    (0..n)
        .map(|k| {
            let tk = k as f64 / sample_rate;
            let (yaw, pitch) = gaze_angles(path.position(tk), style.head_distance);
            let yaw = yaw + tremor_amp * (omega * tk + var.tremor_phase[0]).sin();
            let pitch = pitch + tremor_amp * (omega * tk + var.tremor_phase[1]).sin();
            let head_yaw = alpha * yaw + noise.sample(rng);
            let head_pitch = alpha * pitch + noise.sample(rng);
            let eye_yaw = (1.0 - alpha) * yaw + noise.sample(rng);
            let eye_pitch = (1.0 - alpha) * pitch + noise.sample(rng);
            let head = Transform4::from_rotation_translation(
                gaze_rotation(head_yaw, head_pitch),
                head_pos,
            );
            let eye_r = gaze_rotation(eye_yaw, eye_pitch);
            FrameSample {
                t: t_start + tk,
                head,
                left_eye: Transform4::from_rotation_translation(
                    eye_r,
                    [INTEROCULAR_HALF, 0.0, 0.0],
                ),
                right_eye: Transform4::from_rotation_translation(
                    eye_r,
                    [-INTEROCULAR_HALF, 0.0, 0.0],
                ),
            }
        })
        .collect()
}

/// One trial with its stage variation drawn from `rng`. Timestamps start at 0.
pub fn synthesize_trial(
    template: &GestureTemplate,
    style: &SubjectStyle,
    stage: Stage,
    repetition: u32,
    plan: &SessionPlan,
    rng: &mut impl Rng,
) -> GestureTrial {
    let var = TrialVariation::draw(stage, &plan.stage_effects, rng);
    let frames = render_trial(
        template,
        style,
        &var,
        plan.sample_rate,
        plan.dot_speed,
        0.0,
        rng,
    );
    GestureTrial {
        participant_id: style.subject_id.clone(),
        gesture: template.gesture,
        stage,
        repetition,
        frames,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub participant_id: String,
    pub gesture: GestureClass,
    pub stage: Stage,
    pub repetition: u32,
    pub frames: usize,
}

impl ManifestEntry {
    pub fn of(trial: &GestureTrial) -> Self {
        Self {
            participant_id: trial.participant_id.clone(),
            gesture: trial.gesture,
            stage: trial.stage,
            repetition: trial.repetition,
            frames: trial.frames.len(),
        }
    }
}

/// A generated session: the trials in memory plus their ground truth.
#[derive(Clone, Debug)]
pub struct Session {
    pub seed: u64,
    pub trials: Vec<GestureTrial>,
}

impl Session {
    pub fn manifest(&self) -> Vec<ManifestEntry> {
        self.trials.iter().map(ManifestEntry::of).collect()
    }

    pub fn manifest_text(&self) -> String {
        let mut out = format!(
            "# gazegest session manifest v1\nseed {}\ntrials {}\n",
            self.seed,
            self.trials.len()
        );
        for e in self.manifest() {
            let _ = writeln!(
                out,
                "trial {} {} {} {} {}",
                e.participant_id,
                e.gesture.token(),
                e.stage.token(),
                e.repetition,
                e.frames
            );
        }
        out
    }

    pub fn raw_stream(&self) -> RawStream {
        let mut stream = RawStream::default();
        for trial in &self.trials {
            let event = |t: f64, kind| EventRecord {
                t,
                kind,
                participant_id: trial.participant_id.clone(),
                gesture: trial.gesture,
                stage: trial.stage,
                repetition: trial.repetition,
            };
            stream
                .events
                .push(event(trial.frames[0].t, EventKind::TrialStart));
            for f in &trial.frames {
                for (channel, transform) in [
                    (Channel::Head, f.head),
                    (Channel::LeftEye, f.left_eye),
                    (Channel::RightEye, f.right_eye),
                ] {
                    stream.samples.push(SampleRecord {
                        t: f.t,
                        channel,
                        transform,
                    });
                }
            }
            stream.events.push(event(
                trial.frames.last().expect("non-empty trial").t,
                EventKind::TrialEnd,
            ));
        }
        stream
    }

    pub fn log_text(&self) -> String {
        let mut out = format!("# gazegest synthetic session seed {}\n", self.seed);
        out.push_str(&crate::ingest::write_log(&self.raw_stream()));
        out
    }
}

pub fn parse_manifest(text: &str) -> Result<Vec<ManifestEntry>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let f: Vec<&str> = line.split(' ').collect();
        if f[0] != "trial" {
            continue;
        }
        let bad = || invalid(format!("manifest line {}: malformed trial entry", i + 1));
        if f.len() != 6 {
            return Err(bad());
        }
        out.push(ManifestEntry {
            participant_id: f[1].to_string(),
            gesture: f[2].parse().map_err(|_| bad())?,
            stage: f[3].parse().map_err(|_| bad())?,
            repetition: f[4].parse().map_err(|_| bad())?,
            frames: f[5].parse().map_err(|_| bad())?,
        });
    }
    Ok(out)
}

/// Synthesize every trial of the plan. Trials are laid out back to back with
/// a one second gap; each trial draws from its own derived seed, so the
/// result does not depend on evaluation order.
pub fn synthesize_session(plan: &SessionPlan, seed: u64) -> Result<Session> {
    plan.validate()?;
    let mut t = 0.0;
    let mut trials = Vec::with_capacity(plan.trial_count());
    for spec in plan.trial_specs() {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, spec.index as u64));
        let template = gesture_template(spec.gesture);
        let style = &plan.subjects[spec.subject];
        let var = TrialVariation::draw(spec.stage, &plan.stage_effects, &mut rng);
        let frames = render_trial(
            &template,
            style,
            &var,
            plan.sample_rate,
            plan.dot_speed,
            t,
            &mut rng,
        );
        t = frames.last().expect("at least two frames").t + INTER_TRIAL_GAP_S;
        trials.push(GestureTrial {
            participant_id: style.subject_id.clone(),
            gesture: spec.gesture,
            stage: spec.stage,
            repetition: spec.repetition,
            frames,
        });
    }
    Ok(Session { seed, trials })
}

/// Log text in the ingest format plus the ground-truth manifest text.
pub fn generate_session(plan: &SessionPlan, seed: u64) -> Result<(String, String)> {
    let session = synthesize_session(plan, seed)?;
    Ok((session.log_text(), session.manifest_text()))
}
