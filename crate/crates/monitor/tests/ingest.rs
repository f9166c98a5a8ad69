mod common;

use std::collections::HashSet;
use std::fs;

use common::*;
use wban_core::dsp::EegBand;
use wban_core::wire::frame_len;
use wban_monitor::config::SignalKind;
use wban_monitor::hub::PushMessage;
use wban_monitor::recording::{read_log, LogRecord, Recording, EVENT_LOG, HEADER_LEN};
use wban_monitor::rules::{AlertEvent, Comparator, Metric, MetricValue, Threshold};
use wban_monitor::service::{replay, Ingestor};
use wban_monitor::sms::{MockTransport, SmsStatus};
use wban_monitor::ServiceState;

fn feed(state: &std::sync::Arc<ServiceState>, bytes: &[u8], chunk: usize) {
    let mut ing = Ingestor::new(state.clone());
    for c in bytes.chunks(chunk) {
        ing.push(c);
    }
    ing.finish();
}

/// 60 s whose rate steps 80 -> 130 -> 80 BPM, joined into one stream.
fn stepped_ecg() -> Vec<u8> {
    let mut frames = Vec::new();
    let mut seq = 0u32;
    for (hr, secs) in [(80.0, 20.0), (130.0, 20.0), (80.0, 20.0)] {
        for mut f in ecg(1, hr, secs, 0.03, seq as u64 + 1).frames() {
            f.seq = seq;
            seq += 1;
            frames.push(wban_core::wire::encode_frame(&f).unwrap());
        }
    }
    frames.concat()
}

#[test]
fn live_and_replay_metrics_and_events_match() {
    let dir = tempfile::tempdir().unwrap();
    let rules = vec![
        tachy(1),
        rule(
            "brady",
            1,
            Metric::HeartRate,
            Comparator::Lt,
            Threshold::Number(100.0),
            5.0,
        ),
        rule(
            "rs",
            1,
            Metric::RsExcursion,
            Comparator::Gt,
            Threshold::Number(0.5),
            0.0,
        ),
    ];
    let state = ServiceState::new(config(Some(dir.path()), rules.clone())).unwrap();
    feed(&state, &stepped_ecg(), 777);

    let live = state.history(1).unwrap();
    assert_eq!(
        live.len(),
        52,
        "one snapshot per hop once the window is full"
    );
    let recs = state.recordings();
    assert_eq!(recs.len(), 1);
    let out = state.replay_recording(&recs[0].id).unwrap().unwrap();
    assert_eq!(out.metrics, live);
    assert_eq!(out.discarded_bytes, 0);
    let live_events: Vec<_> = state
        .events()
        .into_iter()
        .map(|e| (e.rule_id, e.time, e.value))
        .collect();
    let replay_events: Vec<_> = out
        .events
        .into_iter()
        .map(|t| (t.rule_id, t.time, t.value))
        .collect();
    assert_eq!(live_events, replay_events);
    let fired: HashSet<_> = live_events.iter().map(|e| e.0.as_str()).collect();
    assert_eq!(fired, HashSet::from(["tachy", "brady", "rs"]));
}

#[test]
fn steady_heart_rate_is_reported() {
    let state = ServiceState::new(config(None, vec![])).unwrap();
    feed(&state, &wire_bytes(&ecg(1, 60.0, 20.0, 0.05, 3)), 4096);
    let hist = state.history(1).unwrap();
    assert!(!hist.is_empty());
    for m in &hist {
        assert!((m.heart_rate.unwrap() - 60.0).abs() <= 1.0, "{m:?}");
        assert!((m.rs_excursion.unwrap() - 1.4).abs() < 0.1, "{m:?}");
    }
}

#[test]
fn sustained_tachycardia_fires_once() {
    let state = ServiceState::new(config(None, vec![tachy(1)])).unwrap();
    feed(&state, &wire_bytes(&ecg(1, 130.0, 70.0, 0.02, 5)), 1000);
    let events = state.events();
    assert_eq!(events.len(), 1, "{events:?}");
    match events[0].value {
        MetricValue::Number(v) => assert!((v - 130.0).abs() <= 1.0),
        MetricValue::Band(_) => panic!("numeric metric expected"),
    }
}

#[test]
fn alpha_rule_fires_once_on_ten_hertz_eeg() {
    let alpha = rule(
        "alpha",
        2,
        Metric::EegBand,
        Comparator::Eq,
        Threshold::Band(EegBand::Alpha),
        30.0,
    );
    let cfg = with_channel(config(None, vec![alpha]), 2, SignalKind::Eeg);
    let state = ServiceState::new(cfg).unwrap();
    feed(&state, &wire_bytes(&eeg(2, 10.0, 30.0)), 512);
    let events = state.events();
    assert_eq!(events.len(), 1);
    assert_eq!(events[0].value, MetricValue::Band(EegBand::Alpha));
    assert!(state
        .history(2)
        .unwrap()
        .iter()
        .all(|m| m.eeg_band == Some(EegBand::Alpha)));
}

#[test]
fn channels_on_one_connection_are_independent() {
    let cfg = with_channel(config(None, vec![]), 2, SignalKind::Eeg);
    let state = ServiceState::new(cfg).unwrap();
    let a = wire_frames(&ecg(1, 72.0, 15.0, 0.02, 1));
    let b = wire_frames(&eeg(2, 20.0, 15.0));
    let mixed: Vec<u8> = a
        .iter()
        .zip(&b)
        .flat_map(|(x, y)| x.iter().chain(y))
        .copied()
        .collect();
    feed(&state, &mixed, 300);
    let ecg_m = state.latest(1).unwrap();
    let eeg_m = state.latest(2).unwrap();
    assert!((ecg_m.heart_rate.unwrap() - 72.0).abs() <= 1.0);
    assert_eq!(ecg_m.eeg_band, None);
    assert_eq!(eeg_m.eeg_band, Some(EegBand::Beta));
    assert_eq!(eeg_m.heart_rate, None);
    assert_eq!(state.channels().len(), 2);
}

#[test]
fn corrupted_bytes_are_counted_not_fatal() {
    let state = ServiceState::new(config(None, vec![])).unwrap();
    let mut bytes = wire_bytes(&ecg(1, 60.0, 20.0, 0.02, 8));
    let mut rng = 0x1234_5678u64;
    let n = bytes.len() / 100;
    for _ in 0..n {
        rng = rng
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        let i = (rng >> 33) as usize % bytes.len();
        bytes[i] ^= 1 << ((rng >> 20) % 8);
    }
    feed(&state, &bytes, 999);
    let st = state.status();
    assert!(st.protocol_errors > 0);
    assert!(st.frames > 0 && st.frames < 5000 / 50);
    assert!(st.discontinuities > 0);
    feed(&state, &wire_bytes(&ecg(1, 60.0, 10.0, 0.02, 9)), 999);
    assert!(state.latest(1).is_some(), "service keeps analysing");
}

#[test]
fn truncated_recording_keeps_complete_frames() {
    let dir = tempfile::tempdir().unwrap();
    let state = ServiceState::new(config(Some(dir.path()), vec![])).unwrap();
    feed(&state, &wire_bytes(&ecg(1, 60.0, 10.0, 0.0, 0)), 4096);
    let path = dir
        .path()
        .join(format!("{}.banrec", state.recordings()[0].id));
    let full = fs::read(&path).unwrap();
    let per = frame_len(50);
    assert_eq!(full.len(), HEADER_LEN + 50 * per);
    let cut = HEADER_LEN + 37 * per + per / 2;
    fs::write(&path, &full[..cut]).unwrap();
    let rec = Recording::open(&path).unwrap();
    assert_eq!(rec.frames.len(), 37);
    assert_eq!(rec.discarded_bytes, per / 2);
    assert_eq!(
        Recording::parse(&full).unwrap().frames[..37],
        rec.frames[..]
    );
}

#[test]
fn event_log_lines_are_json_with_known_references() {
    let dir = tempfile::tempdir().unwrap();
    let rules = vec![
        tachy(1),
        rule(
            "fast",
            1,
            Metric::HeartRate,
            Comparator::Gt,
            Threshold::Number(90.0),
            10.0,
        ),
    ];
    let state = ServiceState::with_transport(
        config(Some(dir.path()), rules.clone()),
        Some(Box::new(MockTransport::happy())),
    )
    .unwrap();
    feed(&state, &stepped_ecg(), 2048);
    let first = state.events()[0].id;
    state.acknowledge(first).unwrap();
    let deadline = std::time::Instant::now() + std::time::Duration::from_secs(5);
    while (state.status().sms.sent as usize) < state.events().len()
        && std::time::Instant::now() < deadline
    {
        std::thread::sleep(std::time::Duration::from_millis(10));
    }
    drop(state);

    let text = fs::read_to_string(dir.path().join(EVENT_LOG)).unwrap();
    let rule_ids: HashSet<_> = rules.iter().map(|r| r.id.clone()).collect();
    let mut event_ids = HashSet::new();
    for line in text.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v["type"].is_string());
    }
    let log = read_log(&dir.path().join(EVENT_LOG));
    assert_eq!(log.len(), text.lines().count());
    for rec in &log {
        match rec {
            LogRecord::Event(e) => {
                assert!(rule_ids.contains(&e.rule_id));
                assert!(event_ids.insert(e.id), "ids are unique");
            }
            LogRecord::Ack { event_id } => assert!(event_ids.contains(event_id)),
            LogRecord::Sms(s) => assert!(event_ids.contains(&s.event_id)),
        }
    }
    assert!(event_ids.len() >= 2);
    let sent = log
        .iter()
        .filter(|r| matches!(r, LogRecord::Sms(s) if s.status == SmsStatus::Sent))
        .count();
    assert_eq!(sent, event_ids.len());
}

#[test]
fn restart_restores_events_and_continues_ids() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(Some(dir.path()), vec![tachy(1)]);
    let state = ServiceState::new(cfg.clone()).unwrap();
    feed(&state, &wire_bytes(&ecg(1, 130.0, 15.0, 0.02, 1)), 4096);
    let before = state.events();
    assert_eq!(before.len(), 1);
    state.acknowledge(before[0].id).unwrap();
    drop(state);

    let state = ServiceState::new(cfg).unwrap();
    let restored = state.events();
    assert_eq!(
        restored,
        vec![AlertEvent {
            acknowledged: true,
            ..before[0].clone()
        }]
    );
    feed(&state, &wire_bytes(&ecg(1, 130.0, 15.0, 0.02, 2)), 4096);
    let ids: Vec<_> = state.events().iter().map(|e| e.id).collect();
    assert_eq!(ids, vec![before[0].id, before[0].id + 1]);
    assert_eq!(state.recordings().len(), 2);
}

#[test]
fn lost_storage_stops_recording_but_not_analysis() {
    let dir = tempfile::tempdir().unwrap();
    let rec_dir = dir.path().join("rec");
    let state = ServiceState::new(config(Some(&rec_dir), vec![])).unwrap();
    fs::remove_dir_all(&rec_dir).unwrap();
    fs::write(&rec_dir, b"not a directory").unwrap();
    feed(&state, &wire_bytes(&ecg(1, 60.0, 12.0, 0.02, 4)), 4096);
    assert!(state.status().persistence_errors >= 1);
    assert!(state.latest(1).is_some());
}

#[test]
fn slow_subscriber_memory_is_bounded() {
    let state = ServiceState::new(config(None, vec![tachy(1)])).unwrap();
    let sub = state.hub().subscribe();
    let mut ing = Ingestor::new(state.clone());
    let mut got_metrics = 0;
    let mut waveforms = 0;
    let mut max_queued = 0;
    for (i, frame) in wire_frames(&ecg(1, 130.0, 120.0, 0.02, 6))
        .iter()
        .enumerate()
    {
        ing.push(frame);
        max_queued = max_queued.max(sub.waveform_queued());
        // the consumer takes one message per ten frames produced
        if i % 10 == 0 {
            match sub.try_next() {
                Some(PushMessage::Metric(_)) => got_metrics += 1,
                Some(PushMessage::Waveform { .. }) => waveforms += 1,
                _ => {}
            }
        }
    }
    ing.finish();
    while let Some(m) = sub.try_next() {
        if let PushMessage::Metric(_) = m {
            got_metrics += 1;
        }
    }
    assert!(sub.dropped() > 0);
    assert_eq!(max_queued, wban_monitor::hub::DEFAULT_WAVEFORM_CAPACITY);
    assert_eq!(got_metrics, state.history(1).unwrap().len());
    assert!(waveforms > 0);
}

#[test]
fn replay_ignores_rules_for_other_channels() {
    let dir = tempfile::tempdir().unwrap();
    let state = ServiceState::new(config(Some(dir.path()), vec![])).unwrap();
    feed(&state, &wire_bytes(&ecg(1, 130.0, 12.0, 0.0, 0)), 4096);
    let rec = Recording::open(
        &dir.path()
            .join(format!("{}.banrec", state.recordings()[0].id)),
    )
    .unwrap();
    let out = replay(&rec, &Default::default(), Default::default(), &[tachy(2)]).unwrap();
    assert!(out.events.is_empty());
    assert_eq!(out.metrics.len(), 4);
}
