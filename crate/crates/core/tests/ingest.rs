use gazegest_core::domain::{FrameSample, GestureClass, Stage, Transform4};
use gazegest_core::ingest::*;
use gazegest_core::synthgen::{generate_session, parse_manifest, synthesize_session, ManifestEntry, SessionPlan, StyleRanges};

const DT: f64 = 1.0 / 60.0;

/// Transform whose x translation tags the sample it came from.
fn tagged(tag: f64) -> Transform4 {
    Transform4::from_rotation_translation([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]], [tag, 0.0, 0.0])
}

fn sample(t: f64, channel: Channel, tag: f64) -> SampleRecord {
    SampleRecord { t, channel, transform: tagged(tag) }
}

fn triplets(n: usize, eye_offset: f64) -> Vec<SampleRecord> {
    let mut v = Vec::new();
    for k in 0..n {
        let t = k as f64 * DT;
        v.push(sample(t, Channel::Head, k as f64));
        v.push(sample(t + eye_offset, Channel::LeftEye, 100.0 + k as f64));
        v.push(sample(t + eye_offset, Channel::RightEye, 200.0 + k as f64));
    }
    v
}

fn stream(samples: Vec<SampleRecord>) -> RawStream {
    RawStream { samples, events: Vec::new() }
}

#[test]
fn aligned_triplets_give_one_frame_each() {
    let r = synchronize(&stream(triplets(30, 0.0)), DEFAULT_MAX_GAP).unwrap();
    assert_eq!(r.frames.len(), 30);
    assert_eq!(r.dropped_frames, 0);
    assert_eq!(r.unused_eye_samples, 0);
}

/// Brute-force nearest eye sample per head sample, then kept only when the
/// pairing is mutual-nearest from the eye's side and within the gap.
fn oracle_pairs(head: &[(f64, f64)], eye: &[(f64, f64)], max_gap: f64) -> Vec<Option<f64>> {
    head.iter()
        .enumerate()
        .map(|(hi, &(th, _))| {
            let mut best: Option<(f64, f64)> = None;
            for &(te, tag) in eye {
                let mut nearest_head = 0;
                for (k, &(t2, _)) in head.iter().enumerate() {
                    if (te - t2).abs() < (te - head[nearest_head].0).abs() {
                        nearest_head = k;
                    }
                }
                let gap = (te - th).abs();
                if nearest_head == hi && gap <= max_gap && best.is_none_or(|b| gap < b.0) {
                    best = Some((gap, tag));
                }
            }
            best.map(|b| b.1)
        })
        .collect()
}

#[test]
fn five_ms_eye_offset_matches_nearest_head() {
    let samples = triplets(10, 0.005);
    let head: Vec<(f64, f64)> =
        samples.iter().filter(|s| s.channel == Channel::Head).map(|s| (s.t, s.transform.m[0][3])).collect();
    let left: Vec<(f64, f64)> =
        samples.iter().filter(|s| s.channel == Channel::LeftEye).map(|s| (s.t, s.transform.m[0][3])).collect();
    let right: Vec<(f64, f64)> =
        samples.iter().filter(|s| s.channel == Channel::RightEye).map(|s| (s.t, s.transform.m[0][3])).collect();
    let want_l = oracle_pairs(&head, &left, 0.033);
    let want_r = oracle_pairs(&head, &right, 0.033);

    let r = synchronize(&stream(samples), 0.033).unwrap();
    assert_eq!(r.frames.len(), 10);
    assert_eq!(r.dropped_frames, 0);
    for (k, f) in r.frames.iter().enumerate() {
        assert_eq!(f.t, head[k].0, "frame time is the head timestamp");
        assert_eq!(Some(f.left_eye.m[0][3]), want_l[k]);
        assert_eq!(Some(f.right_eye.m[0][3]), want_r[k]);
        assert_eq!(f.left_eye.m[0][3], 100.0 + k as f64);
    }
}

#[test]
fn missing_eye_sample_drops_exactly_one_frame() {
    let mut samples = triplets(10, 0.0);
    let gone = samples.iter().position(|s| s.channel == Channel::LeftEye && s.transform.m[0][3] == 104.0).unwrap();
    samples.remove(gone);
    let r = synchronize(&stream(samples), DEFAULT_MAX_GAP).unwrap();
    assert_eq!(r.frames.len(), 9);
    assert_eq!(r.dropped_frames, 1);
    assert!(r.frames.iter().all(|f| f.head.m[0][3] != 4.0));
}

#[test]
fn eye_beyond_max_gap_is_not_joined() {
    let r = synchronize(&stream(triplets(5, 0.008)), 0.005).unwrap();
    assert_eq!(r.frames.len(), 0);
    assert_eq!(r.dropped_frames, 5);
    assert!(synchronize(&stream(triplets(5, 0.0)), 0.0).is_err());
}

fn frames(n: usize, t0: f64) -> Vec<FrameSample> {
    (0..n)
        .map(|k| FrameSample {
            t: t0 + k as f64 * DT,
            head: Transform4::IDENTITY,
            left_eye: Transform4::IDENTITY,
            right_eye: Transform4::IDENTITY,
        })
        .collect()
}

fn event(t: f64, kind: EventKind, rep: u32) -> EventRecord {
    EventRecord { t, kind, participant_id: "P0".into(), gesture: GestureClass::Vertical, stage: Stage::Follow, repetition: rep }
}

#[test]
fn bracketing_pair_yields_one_trial() {
    let fs = frames(180, 1.0);
    let events = [event(1.0, EventKind::TrialStart, 1), event(fs[179].t, EventKind::TrialEnd, 1)];
    let seg = segment_trials(&fs, &events);
    assert_eq!(seg.trials.len(), 1);
    assert_eq!(seg.trials[0].frames.len(), 180);
    assert!(seg.errors.is_empty());
}

#[test]
fn unpaired_start_is_reported_and_skipped() {
    let fs = frames(60, 0.0);
    let seg = segment_trials(&fs, &[event(0.0, EventKind::TrialStart, 1)]);
    assert_eq!(seg.trials.len(), 0);
    assert_eq!(seg.errors.len(), 1);
}

#[test]
fn short_trials_are_rejected() {
    let fs = frames(60, 0.0);
    let events = [event(0.0, EventKind::TrialStart, 1), event(fs[6].t, EventKind::TrialEnd, 1)];
    let seg = segment_trials(&fs, &events);
    assert!(seg.trials.is_empty());
    assert_eq!(seg.rejected.len(), 1);
}

fn four_subject_plan() -> SessionPlan {
    SessionPlan::synthetic(4, 3, 7, &StyleRanges::default()).unwrap()
}

#[test]
fn synthetic_session_round_trips_through_the_log() {
    let plan = four_subject_plan();
    let (log, manifest) = generate_session(&plan, 7).unwrap();
    let want = parse_manifest(&manifest).unwrap();
    assert_eq!(want.len(), 240);

    let out = ingest_log(&log, DEFAULT_MAX_GAP).unwrap();
    assert_eq!(out.skipped_lines, 0);
    assert_eq!(out.dropped_frames, 0);
    let seg = &out.segmentation;
    assert!(seg.errors.is_empty() && seg.rejected.is_empty());
    let got: Vec<ManifestEntry> = seg.trials.iter().map(ManifestEntry::of).collect();
    assert_eq!(got, want);

    // Field for field, including every transform bit.
    let session = synthesize_session(&plan, 7).unwrap();
    assert_eq!(seg.trials, session.trials);
}

#[test]
fn segmentation_never_shares_frames() {
    let (log, _) = generate_session(&four_subject_plan(), 3).unwrap();
    let out = ingest_log(&log, DEFAULT_MAX_GAP).unwrap();
    let mut times: Vec<f64> = out.segmentation.trials.iter().flat_map(|t| t.frames.iter().map(|f| f.t)).collect();
    let n = times.len();
    times.sort_by(f64::total_cmp);
    times.dedup();
    assert_eq!(times.len(), n);
}

#[test]
fn write_then_parse_is_identity() {
    let session = synthesize_session(&SessionPlan::synthetic(1, 1, 5, &StyleRanges::default()).unwrap(), 5).unwrap();
    let raw = session.raw_stream();
    let parsed = parse_log(&write_log(&raw)).unwrap();
    assert_eq!(parsed.skipped, 0);
    assert_eq!(parsed.stream, raw);
}
