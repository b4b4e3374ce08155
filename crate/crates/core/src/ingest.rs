//! Log parsing, head/eye stream synchronization and trial segmentation.
//!
//! Log grammar, one record per line:
//!
//! ```text
//! S <t> <HEAD|LEYE|REYE> <16 floats, row-major>
//! E <t> <TRIAL_START|TRIAL_END> <participant> <V|H|L0|L270|Z0> <FOLLOW|FIXED|IRECALL|RECALL> <rep>
//! ```
//!
//! Blank lines and lines starting with `#` are ignored and not counted as
//! malformed.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::domain::{
    unflatten_transform, FrameSample, GestureClass, GestureTrial, Stage, Transform4,
};
use crate::error::{Error, Result};

/// Two nominal 60 Hz frame periods.
pub const DEFAULT_MAX_GAP: f64 = 1.0 / 30.0;
pub const MIN_TRIAL_FRAMES: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Channel {
    Head,
    LeftEye,
    RightEye,
}

impl Channel {
    pub fn token(self) -> &'static str {
        match self {
            Channel::Head => "HEAD",
            Channel::LeftEye => "LEYE",
            Channel::RightEye => "REYE",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "HEAD" => Some(Channel::Head),
            "LEYE" => Some(Channel::LeftEye),
            "REYE" => Some(Channel::RightEye),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleRecord {
    pub t: f64,
    pub channel: Channel,
    pub transform: Transform4,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EventKind {
    TrialStart,
    TrialEnd,
}

impl EventKind {
    pub fn token(self) -> &'static str {
        match self {
            EventKind::TrialStart => "TRIAL_START",
            EventKind::TrialEnd => "TRIAL_END",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EventRecord {
    pub t: f64,
    pub kind: EventKind,
    pub participant_id: String,
    pub gesture: GestureClass,
    pub stage: Stage,
    pub repetition: u32,
}

impl EventRecord {
    fn key(&self) -> TrialKey {
        (
            self.participant_id.clone(),
            self.gesture,
            self.stage,
            self.repetition,
        )
    }
}

type TrialKey = (String, GestureClass, Stage, u32);

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RawStream {
    pub samples: Vec<SampleRecord>,
    pub events: Vec<EventRecord>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MalformedLine {
    /// 1-based line number.
    pub line: usize,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParsedLog {
    pub stream: RawStream,
    pub skipped: usize,
    pub malformed: Vec<MalformedLine>,
}

fn parse_time(tok: &str) -> std::result::Result<f64, String> {
    let t: f64 = tok.parse().map_err(|_| format!("bad timestamp `{tok}`"))?;
    if t.is_finite() {
        Ok(t)
    } else {
        Err(format!("non-finite timestamp `{tok}`"))
    }
}

fn parse_sample(fields: &[&str]) -> std::result::Result<SampleRecord, String> {
    if fields.len() != 19 {
        return Err(format!(
            "sample record needs 19 fields, found {}",
            fields.len()
        ));
    }
    let t = parse_time(fields[1])?;
    let channel =
        Channel::parse(fields[2]).ok_or_else(|| format!("unknown channel `{}`", fields[2]))?;
    let mut values = [0.0; 16];
    for (slot, tok) in values.iter_mut().zip(&fields[3..]) {
        let v: f64 = tok
            .parse()
            .map_err(|_| format!("bad matrix entry `{tok}`"))?;
        if !v.is_finite() {
            return Err(format!("non-finite matrix entry `{tok}`"));
        }
        *slot = v;
    }
    Ok(SampleRecord {
        t,
        channel,
        transform: unflatten_transform(&values),
    })
}

fn parse_event(fields: &[&str]) -> std::result::Result<EventRecord, String> {
    if fields.len() != 7 {
        return Err(format!(
            "event record needs 7 fields, found {}",
            fields.len()
        ));
    }
    let t = parse_time(fields[1])?;
    let kind = match fields[2] {
        "TRIAL_START" => EventKind::TrialStart,
        "TRIAL_END" => EventKind::TrialEnd,
        other => return Err(format!("unknown event kind `{other}`")),
    };
    let gesture = fields[4].parse::<GestureClass>()?;
    let stage = fields[5].parse::<Stage>()?;
    let repetition: u32 = fields[6]
        .parse()
        .map_err(|_| format!("bad repetition `{}`", fields[6]))?;
    Ok(EventRecord {
        t,
        kind,
        participant_id: fields[3].to_string(),
        gesture,
        stage,
        repetition,
    })
}

/// Parse a log. Malformed lines are skipped and counted; only a log with no
/// valid record at all is an error.
pub fn parse_log(text: &str) -> Result<ParsedLog> {
    let mut stream = RawStream::default();
    let mut malformed = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let trimmed = line.trim_end_matches('\r');
        if trimmed.trim().is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(' ').collect();
        let parsed = match fields[0] {
            "S" => parse_sample(&fields).map(|s| stream.samples.push(s)),
            "E" => parse_event(&fields).map(|e| stream.events.push(e)),
            other => Err(format!("unknown record type `{other}`")),
        };
        if let Err(reason) = parsed {
            malformed.push(MalformedLine {
                line: i + 1,
                reason,
            });
        }
    }
    if stream.samples.is_empty() && stream.events.is_empty() {
        return Err(Error::NoValidRecords {
            skipped: malformed.len(),
        });
    }
    Ok(ParsedLog {
        stream,
        skipped: malformed.len(),
        malformed,
    })
}

/// Floats are written with the shortest representation that parses back to
/// the identical bit pattern.
pub fn format_sample(out: &mut String, s: &SampleRecord) {
    let _ = write!(out, "S {} {}", s.t, s.channel.token());
    for v in s.transform.flatten() {
        let _ = write!(out, " {v}");
    }
    out.push('\n');
}

pub fn format_event(out: &mut String, e: &EventRecord) {
    let _ = writeln!(
        out,
        "E {} {} {} {} {} {}",
        e.t,
        e.kind.token(),
        e.participant_id,
        e.gesture.token(),
        e.stage.token(),
        e.repetition
    );
}

/// Serialize a stream: all events and samples merged by time, events first on
/// equal timestamps for starts and last for ends so trial brackets enclose
/// their samples.
pub fn write_log(stream: &RawStream) -> String {
    let mut out = String::new();
    let mut si = 0;
    let mut ei = 0;
    let samples = &stream.samples;
    let events = &stream.events;
    while si < samples.len() || ei < events.len() {
        let take_event = match (samples.get(si), events.get(ei)) {
            (None, Some(_)) => true,
            (Some(_), None) => false,
            (Some(s), Some(e)) => match e.kind {
                EventKind::TrialStart => e.t <= s.t,
                EventKind::TrialEnd => e.t < s.t,
            },
            (None, None) => unreachable!(),
        };
        if take_event {
            format_event(&mut out, &events[ei]);
            ei += 1;
        } else {
            format_sample(&mut out, &samples[si]);
            si += 1;
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyncResult {
    pub frames: Vec<FrameSample>,
    /// Head samples discarded because an eye partner was missing or too far.
    pub dropped_frames: usize,
    /// Eye samples never used in an emitted frame.
    pub unused_eye_samples: usize,
}

fn sorted_channel(samples: &[SampleRecord], ch: Channel) -> Vec<(f64, Transform4)> {
    let mut v: Vec<(f64, Transform4)> = samples
        .iter()
        .filter(|s| s.channel == ch)
        .map(|s| (s.t, s.transform))
        .collect();
    v.sort_by(|a, b| a.0.total_cmp(&b.0));
    v
}

fn nearest_index(sorted_t: &[f64], t: f64) -> Option<usize> {
    if sorted_t.is_empty() {
        return None;
    }
    let pos = sorted_t.partition_point(|&x| x < t);
    if pos == 0 {
        return Some(0);
    }
    if pos == sorted_t.len() {
        return Some(pos - 1);
    }
    // Ties go to the earlier sample.
    if t - sorted_t[pos - 1] <= sorted_t[pos] - t {
        Some(pos - 1)
    } else {
        Some(pos)
    }
}

/// For one eye stream, returns per head sample the index of its partner eye
/// sample, if any. Each eye sample is first assigned to its nearest head
/// sample; each head then keeps the nearest of its assigned eyes. This keeps
/// the join one-to-one, so a missing eye sample cannot be papered over by a
/// neighbouring frame's sample.
fn match_eye(head_t: &[f64], eye: &[(f64, Transform4)], max_gap: f64) -> Vec<Option<usize>> {
    let mut best: Vec<Option<(usize, f64)>> = vec![None; head_t.len()];
    for (ei, &(t, _)) in eye.iter().enumerate() {
        let Some(hi) = nearest_index(head_t, t) else {
            break;
        };
        let gap = (t - head_t[hi]).abs();
        if gap > max_gap {
            continue;
        }
        match best[hi] {
            Some((_, g)) if g <= gap => {}
            _ => best[hi] = Some((ei, gap)),
        }
    }
    best.into_iter().map(|b| b.map(|(i, _)| i)).collect()
}

/// Nearest-timestamp join keyed on the head stream.
pub fn synchronize(raw: &RawStream, max_gap: f64) -> Result<SyncResult> {
    if !(max_gap > 0.0) {
        return Err(Error::InvalidInput(format!(
            "max_gap must be positive, got {max_gap}"
        )));
    }
    let head = sorted_channel(&raw.samples, Channel::Head);
    let left = sorted_channel(&raw.samples, Channel::LeftEye);
    let right = sorted_channel(&raw.samples, Channel::RightEye);
    let head_t: Vec<f64> = head.iter().map(|h| h.0).collect();
    let lm = match_eye(&head_t, &left, max_gap);
    let rm = match_eye(&head_t, &right, max_gap);
    let mut frames = Vec::with_capacity(head.len());
    let mut dropped = 0;
    for (i, &(t, h)) in head.iter().enumerate() {
        match (lm[i], rm[i]) {
            (Some(l), Some(r)) => frames.push(FrameSample {
                t,
                head: h,
                left_eye: left[l].1,
                right_eye: right[r].1,
            }),
            _ => dropped += 1,
        }
    }
    let unused = left.len() + right.len() - 2 * frames.len();
    Ok(SyncResult {
        frames,
        dropped_frames: dropped,
        unused_eye_samples: unused,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SegmentError {
    pub participant_id: String,
    pub gesture: GestureClass,
    pub stage: Stage,
    pub repetition: u32,
    pub t: f64,
    pub reason: String,
}

impl std::fmt::Display for SegmentError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "trial {} {} {} rep {} at t={}: {}",
            self.participant_id,
            self.gesture.token(),
            self.stage.token(),
            self.repetition,
            self.t,
            self.reason
        )
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Segmentation {
    /// Ordered by start time.
    pub trials: Vec<GestureTrial>,
    pub errors: Vec<SegmentError>,
    /// Paired trials with fewer than [`MIN_TRIAL_FRAMES`] frames.
    pub rejected: Vec<SegmentError>,
}

fn seg_error(e: &EventRecord, reason: impl Into<String>) -> SegmentError {
    SegmentError {
        participant_id: e.participant_id.clone(),
        gesture: e.gesture,
        stage: e.stage,
        repetition: e.repetition,
        t: e.t,
        reason: reason.into(),
    }
}

/// Cut frames into trials using start/end event pairs, inclusive on both ends.
pub fn segment_trials(frames: &[FrameSample], events: &[EventRecord]) -> Segmentation {
    let mut sorted_frames = frames.to_vec();
    sorted_frames.sort_by(|a, b| a.t.total_cmp(&b.t));
    let times: Vec<f64> = sorted_frames.iter().map(|f| f.t).collect();

    let mut ordered: Vec<&EventRecord> = events.iter().collect();
    ordered.sort_by(|a, b| a.t.total_cmp(&b.t));

    let mut open: BTreeMap<TrialKey, &EventRecord> = BTreeMap::new();
    let mut pairs: Vec<(&EventRecord, &EventRecord)> = Vec::new();
    let mut out = Segmentation::default();
    for e in ordered {
        match e.kind {
            EventKind::TrialStart => {
                if let Some(prev) = open.insert(e.key(), e) {
                    out.errors
                        .push(seg_error(prev, "TRIAL_START without matching TRIAL_END"));
                }
            }
            EventKind::TrialEnd => match open.remove(&e.key()) {
                Some(start) if start.t < e.t => pairs.push((start, e)),
                Some(start) => out.errors.push(seg_error(
                    start,
                    "TRIAL_END does not follow TRIAL_START in time",
                )),
                None => out
                    .errors
                    .push(seg_error(e, "TRIAL_END without matching TRIAL_START")),
            },
        }
    }
    for start in open.into_values() {
        out.errors
            .push(seg_error(start, "TRIAL_START without matching TRIAL_END"));
    }
    out.errors.sort_by(|a, b| a.t.total_cmp(&b.t));

    for (start, end) in pairs {
        let lo = times.partition_point(|&t| t < start.t);
        let hi = times.partition_point(|&t| t <= end.t);
        let n = hi.saturating_sub(lo);
        if n < MIN_TRIAL_FRAMES {
            out.rejected.push(seg_error(
                start,
                format!("only {n} frames (minimum {MIN_TRIAL_FRAMES})"),
            ));
            continue;
        }
        out.trials.push(GestureTrial {
            participant_id: start.participant_id.clone(),
            gesture: start.gesture,
            stage: start.stage,
            repetition: start.repetition,
            frames: sorted_frames[lo..hi].to_vec(),
        });
    }
    out
}

/// Parse, synchronize and segment in one go.
#[derive(Clone, Debug)]
pub struct IngestOutcome {
    pub segmentation: Segmentation,
    pub skipped_lines: usize,
    pub malformed: Vec<MalformedLine>,
    pub dropped_frames: usize,
}

pub fn ingest_log(text: &str, max_gap: f64) -> Result<IngestOutcome> {
    let parsed = parse_log(text)?;
    let sync = synchronize(&parsed.stream, max_gap)?;
    let segmentation = segment_trials(&sync.frames, &parsed.stream.events);
    Ok(IngestOutcome {
        segmentation,
        skipped_lines: parsed.skipped,
        malformed: parsed.malformed,
        dropped_frames: sync.dropped_frames,
    })
}
