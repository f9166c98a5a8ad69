#![allow(dead_code)]

use std::path::Path;
use std::time::{Duration, Instant};

use wban_core::signal::{synth_ecg, synth_eeg, EcgMorphology, Lead, LeadConfig, NoiseSpec, Synth};
use wban_core::wire::encode_frame;
use wban_monitor::config::{ChannelConfig, ServiceConfig, SignalKind};
use wban_monitor::rules::{AlertRule, Comparator, Metric, Threshold};

pub const FS: f64 = 250.0;

pub fn ecg(channel: u8, hr: f64, seconds: f64, noise: f64, seed: u64) -> Synth {
    let lead = LeadConfig::new(Lead::Lead2);
    let morph = EcgMorphology::for_lead(&lead, hr).unwrap();
    synth_ecg(morph, lead, FS, seconds)
        .unwrap()
        .with_noise(NoiseSpec::broadband(noise, seed))
        .unwrap()
        .with_channel(channel)
}

pub fn eeg(channel: u8, freq: f64, seconds: f64) -> Synth {
    synth_eeg(freq, 0.05, 256.0, seconds)
        .unwrap()
        .with_noise(NoiseSpec::broadband(0.01, 9))
        .unwrap()
        .with_channel(channel)
}

/// Encoded frames, one buffer per frame.
pub fn wire_frames(s: &Synth) -> Vec<Vec<u8>> {
    s.frames().map(|f| encode_frame(&f).unwrap()).collect()
}

pub fn wire_bytes(s: &Synth) -> Vec<u8> {
    wire_frames(s).concat()
}

pub fn rule(
    id: &str,
    channel_id: u8,
    metric: Metric,
    comparator: Comparator,
    threshold: Threshold,
    debounce: f64,
) -> AlertRule {
    AlertRule {
        id: id.into(),
        channel_id,
        metric,
        comparator,
        threshold,
        debounce,
        message_template: "ALERT ch{channel} {metric} {value} t={time}".into(),
        recipient: Some("+60123456789".into()),
    }
}

pub fn tachy(channel_id: u8) -> AlertRule {
    AlertRule {
        message_template: "HR ALERT ch{channel} {value}BPM".into(),
        ..rule(
            "tachy",
            channel_id,
            Metric::HeartRate,
            Comparator::Gt,
            Threshold::Number(120.0),
            60.0,
        )
    }
}

/// Config with ephemeral ports.
pub fn config(dir: Option<&Path>, rules: Vec<AlertRule>) -> ServiceConfig {
    let mut cfg = ServiceConfig::default();
    cfg.service.telemetry_addr = "127.0.0.1:0".into();
    cfg.service.api_addr = "127.0.0.1:0".into();
    cfg.service.recordings_dir = dir.map(Path::to_path_buf);
    cfg.rules = rules;
    cfg
}

pub fn with_channel(mut cfg: ServiceConfig, id: u8, kind: SignalKind) -> ServiceConfig {
    cfg.channels.insert(
        id,
        ChannelConfig {
            kind,
            filters: Vec::new(),
        },
    );
    cfg
}

/// Polls `f` every 50 ms until it yields a value or `limit` passes.
pub async fn poll<T, F, Fut>(limit: Duration, mut f: F) -> Option<T>
where
    F: FnMut() -> Fut,
    Fut: std::future::Future<Output = Option<T>>,
{
    let start = Instant::now();
    while start.elapsed() < limit {
        if let Some(v) = f().await {
            return Some(v);
        }
        tokio::time::sleep(Duration::from_millis(50)).await;
    }
    None
}
