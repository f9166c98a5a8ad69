//! The running service: shared state, telemetry ingest and lifecycle.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use tokio::io::{AsyncRead, AsyncReadExt};
use tokio::net::TcpListener;
use tokio::sync::watch;
use tokio::task::JoinHandle;

use wban_core::wire::{FrameSplitter, SplitEvent, WireFrame};

use crate::config::{ChannelConfig, ServiceConfig, SignalKind, SmsTransportConfig};
use crate::error::{MonitorError, Result};
use crate::hub::{Decimator, Hub, PushMessage};
use crate::pipeline::{ChannelPipeline, MetricSnapshot, WindowConfig};
use crate::recording::{
    list_recordings, read_log, recording_path, EventLog, LogRecord, Recording, RecordingHeader,
    RecordingInfo, RecordingWriter, EVENT_LOG,
};
use crate::rules::{validate_rules, AlertEvent, AlertRule, RuleEngine, Trigger};
use crate::sms::{
    format_message, DeviceTransport, MockTransport, ModemTransport, SendOptions, SmsDispatcher,
    SmsRecord, SmsStatus,
};

/// Metric snapshots kept per channel.
pub const HISTORY_LIMIT: usize = 3600;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelInfo {
    pub channel_id: u8,
    pub kind: SignalKind,
    pub sample_rate: Option<f64>,
    pub frames: u64,
    /// Seconds of signal received.
    pub stream_time: f64,
    /// Recording currently being written.
    pub recording: Option<String>,
    pub connected: bool,
}

struct ChannelEntry {
    info: ChannelInfo,
    sessions: u32,
    latest: Option<MetricSnapshot>,
    history: VecDeque<MetricSnapshot>,
}

#[derive(Debug, Default)]
struct Counters {
    frames: AtomicU64,
    bytes: AtomicU64,
    protocol_errors: AtomicU64,
    corrupt_bytes: AtomicU64,
    discontinuities: AtomicU64,
    connections: AtomicU64,
    connections_total: AtomicU64,
    persistence_errors: AtomicU64,
    pipeline_errors: AtomicU64,
}

fn bump(c: &AtomicU64) {
    c.fetch_add(1, Ordering::Relaxed);
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmsStatusReport {
    pub enabled: bool,
    pub sent: u64,
    pub failed: u64,
    pub duplicates: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatusReport {
    pub frames: u64,
    pub bytes: u64,
    /// Corrupted stretches of the telemetry stream.
    pub protocol_errors: u64,
    pub corrupt_bytes: u64,
    pub discontinuities: u64,
    pub connections: u64,
    pub connections_total: u64,
    pub persistence_errors: u64,
    pub pipeline_errors: u64,
    pub subscribers: usize,
    pub events: usize,
    pub sms: SmsStatusReport,
}

/// Result of re-running analytics over a recording.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayOutput {
    pub metrics: Vec<MetricSnapshot>,
    pub events: Vec<Trigger>,
    pub discarded_bytes: usize,
}

/// Runs a fresh pipeline and rule engine over `recording`.
pub fn replay(
    recording: &Recording,
    channel: &ChannelConfig,
    window: WindowConfig,
    rules: &[AlertRule],
) -> Result<ReplayOutput> {
    let h = recording.header;
    let filters = if channel.kind == h.kind {
        channel.filters.clone()
    } else {
        Vec::new()
    };
    let mut pipeline = ChannelPipeline::new(h.channel_id, h.kind, filters, window);
    let mut engine = RuleEngine::new();
    let mut out = ReplayOutput {
        metrics: Vec::new(),
        events: Vec::new(),
        discarded_bytes: recording.discarded_bytes,
    };
    for frame in recording.sample_frames() {
        for m in pipeline.process(&frame)?.metrics {
            out.events.extend(engine.evaluate(&m, rules));
            out.metrics.push(m);
        }
    }
    Ok(out)
}

struct EventStore {
    events: Vec<AlertEvent>,
    next_id: u64,
}

type SharedLog = Arc<Mutex<Option<EventLog>>>;

/// State shared by telemetry connections and API handlers.
pub struct ServiceState {
    config: ServiceConfig,
    window: WindowConfig,
    rules: RwLock<Arc<Vec<AlertRule>>>,
    channels: Mutex<BTreeMap<u8, ChannelEntry>>,
    store: Mutex<EventStore>,
    log: SharedLog,
    hub: Hub,
    sms: Option<SmsDispatcher>,
    counters: Arc<Counters>,
}

fn now_unix() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

fn write_log(log: &SharedLog, counters: &Counters, record: &LogRecord) {
    if let Some(l) = log.lock().expect("log lock").as_mut() {
        if let Err(e) = l.append(record) {
            bump(&counters.persistence_errors);
            log::error!("event log write failed: {e}");
        }
    }
}

impl ServiceState {
    /// Builds the state, taking the SMS transport from the config.
    pub fn new(config: ServiceConfig) -> Result<Arc<Self>> {
        let transport: Option<Box<dyn ModemTransport>> = match &config.sms.transport {
            SmsTransportConfig::None => None,
            SmsTransportConfig::Mock => Some(Box::new(MockTransport::happy())),
            SmsTransportConfig::Device(p) => {
                Some(Box::new(DeviceTransport::open(p).map_err(|e| {
                    MonitorError::Config(format!("modem {}: {e}", p.display()))
                })?))
            }
        };
        Self::with_transport(config, transport)
    }

    /// Builds the state with an explicit SMS transport (`None` disables SMS).
    pub fn with_transport(
        config: ServiceConfig,
        transport: Option<Box<dyn ModemTransport>>,
    ) -> Result<Arc<Self>> {
        config.validate()?;
        let counters = Arc::new(Counters::default());
        let mut events: Vec<AlertEvent> = Vec::new();
        let mut claimed = HashSet::new();
        let mut log = None;
        if let Some(dir) = &config.service.recordings_dir {
            let path = dir.join(EVENT_LOG);
            for rec in read_log(&path) {
                match rec {
                    LogRecord::Event(e) => events.push(e),
                    LogRecord::Ack { event_id } => events
                        .iter_mut()
                        .filter(|e| e.id == event_id)
                        .for_each(|e| e.acknowledged = true),
                    LogRecord::Sms(s) => {
                        claimed.insert(s.event_id);
                    }
                }
            }
            log = Some(EventLog::open(&path)?);
        }
        let next_id = events.iter().map(|e| e.id).max().map_or(1, |m| m + 1);
        let log: SharedLog = Arc::new(Mutex::new(log));
        let sms = transport.map(|t| {
            let opts = SendOptions {
                timeout: Duration::from_millis(config.sms.timeout_ms),
                retries: config.sms.retries,
            };
            let (sink_log, sink_counters) = (log.clone(), counters.clone());
            SmsDispatcher::spawn(
                t,
                opts,
                claimed,
                Box::new(move |r: &SmsRecord| {
                    write_log(&sink_log, &sink_counters, &LogRecord::Sms(r.clone()))
                }),
            )
        });
        let window = WindowConfig {
            window_seconds: config.service.window_seconds,
            hop_seconds: config.service.hop_seconds,
        };
        Ok(Arc::new(ServiceState {
            rules: RwLock::new(Arc::new(config.rules.clone())),
            config,
            window,
            channels: Mutex::default(),
            store: Mutex::new(EventStore { events, next_id }),
            log,
            hub: Hub::default(),
            sms,
            counters,
        }))
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    pub fn hub(&self) -> &Hub {
        &self.hub
    }

    pub fn recordings_dir(&self) -> Option<&PathBuf> {
        self.config.service.recordings_dir.as_ref()
    }

    pub fn rules(&self) -> Arc<Vec<AlertRule>> {
        self.rules.read().expect("rules lock").clone()
    }

    pub fn rule(&self, id: &str) -> Option<AlertRule> {
        self.rules().iter().find(|r| r.id == id).cloned()
    }

    /// Replaces the whole rule set after validating it.
    pub fn set_rules(&self, rules: Vec<AlertRule>) -> Result<()> {
        validate_rules(&rules)?;
        *self.rules.write().expect("rules lock") = Arc::new(rules);
        Ok(())
    }

    /// Inserts or replaces one rule. Returns true if it was new.
    pub fn upsert_rule(&self, rule: AlertRule) -> Result<bool> {
        rule.validate()?;
        let mut guard = self.rules.write().expect("rules lock");
        let mut rules = (**guard).clone();
        let created = match rules.iter_mut().find(|r| r.id == rule.id) {
            Some(r) => {
                *r = rule;
                false
            }
            None => {
                rules.push(rule);
                true
            }
        };
        *guard = Arc::new(rules);
        Ok(created)
    }

    pub fn delete_rule(&self, id: &str) -> bool {
        let mut guard = self.rules.write().expect("rules lock");
        let mut rules = (**guard).clone();
        let before = rules.len();
        rules.retain(|r| r.id != id);
        let removed = rules.len() != before;
        *guard = Arc::new(rules);
        removed
    }

    pub fn channels(&self) -> Vec<ChannelInfo> {
        self.channels
            .lock()
            .expect("channel lock")
            .values()
            .map(|c| c.info.clone())
            .collect()
    }

    pub fn latest(&self, channel_id: u8) -> Option<MetricSnapshot> {
        self.channels
            .lock()
            .expect("channel lock")
            .get(&channel_id)
            .and_then(|c| c.latest.clone())
    }

    pub fn history(&self, channel_id: u8) -> Option<Vec<MetricSnapshot>> {
        self.channels
            .lock()
            .expect("channel lock")
            .get(&channel_id)
            .map(|c| c.history.iter().cloned().collect())
    }

    pub fn events(&self) -> Vec<AlertEvent> {
        self.store.lock().expect("event lock").events.clone()
    }

    /// Marks an event acknowledged; `None` if the id is unknown.
    pub fn acknowledge(&self, id: u64) -> Option<AlertEvent> {
        let mut store = self.store.lock().expect("event lock");
        let ev = store.events.iter_mut().find(|e| e.id == id)?;
        if !ev.acknowledged {
            ev.acknowledged = true;
            write_log(&self.log, &self.counters, &LogRecord::Ack { event_id: id });
        }
        Some(ev.clone())
    }

    pub fn recordings(&self) -> Vec<RecordingInfo> {
        self.recordings_dir()
            .map(|d| list_recordings(d))
            .unwrap_or_default()
    }

    /// Replays a stored recording with the current rules; `Ok(None)` if
    /// there is no such recording.
    pub fn replay_recording(&self, id: &str) -> Result<Option<ReplayOutput>> {
        let Some(path) = self.recordings_dir().and_then(|d| recording_path(d, id)) else {
            return Ok(None);
        };
        let rec = Recording::open(&path)?;
        let channel = self.config.channel(rec.header.channel_id);
        replay(&rec, &channel, self.window, &self.rules()).map(Some)
    }

    pub fn status(&self) -> StatusReport {
        let c = &self.counters;
        let get = |a: &AtomicU64| a.load(Ordering::Relaxed);
        let sms = match &self.sms {
            Some(d) => {
                let s = d.stats();
                SmsStatusReport {
                    enabled: true,
                    sent: get(&s.sent),
                    failed: get(&s.failed),
                    duplicates: get(&s.duplicates),
                }
            }
            None => SmsStatusReport {
                enabled: false,
                sent: 0,
                failed: 0,
                duplicates: 0,
            },
        };
        StatusReport {
            frames: get(&c.frames),
            bytes: get(&c.bytes),
            protocol_errors: get(&c.protocol_errors),
            corrupt_bytes: get(&c.corrupt_bytes),
            discontinuities: get(&c.discontinuities),
            connections: get(&c.connections),
            connections_total: get(&c.connections_total),
            persistence_errors: get(&c.persistence_errors),
            pipeline_errors: get(&c.pipeline_errors),
            subscribers: self.hub.subscriber_count(),
            events: self.store.lock().expect("event lock").events.len(),
            sms,
        }
    }

    fn record_metric(&self, m: &MetricSnapshot) {
        let mut chans = self.channels.lock().expect("channel lock");
        if let Some(c) = chans.get_mut(&m.channel_id) {
            if c.history.len() == HISTORY_LIMIT {
                c.history.pop_front();
            }
            c.history.push_back(m.clone());
            c.latest = Some(m.clone());
        }
        drop(chans);
        self.hub.publish(PushMessage::Metric(m.clone()));
    }

    fn emit(&self, trigger: Trigger, rules: &[AlertRule]) {
        let event = {
            let mut store = self.store.lock().expect("event lock");
            let id = store.next_id;
            store.next_id += 1;
            let event = trigger.into_event(id);
            // logged under the lock so the log keeps id order
            write_log(&self.log, &self.counters, &LogRecord::Event(event.clone()));
            store.events.push(event.clone());
            event
        };
        log::info!(
            "alert {} from rule '{}' on channel {}: {}",
            event.id,
            event.rule_id,
            event.channel_id,
            event.value
        );
        self.hub.publish(PushMessage::Event(event.clone()));
        let (Some(sms), Some(rule)) = (&self.sms, rules.iter().find(|r| r.id == event.rule_id))
        else {
            return;
        };
        match format_message(&event, rule, self.config.sms.recipient.as_deref()) {
            Ok(msg) => {
                sms.enqueue(event.id, msg);
            }
            Err(e) => {
                log::error!("SMS for event {} not sent: {e}", event.id);
                sms.stats().failed.fetch_add(1, Ordering::Relaxed);
                let rec = SmsRecord {
                    event_id: event.id,
                    status: SmsStatus::Failed,
                    attempts: Some(0),
                    error: Some(e.to_string()),
                };
                write_log(&self.log, &self.counters, &LogRecord::Sms(rec));
            }
        }
    }

    /// Reads telemetry from `reader` until EOF.
    pub async fn ingest<R: AsyncRead + Unpin>(
        self: &Arc<Self>,
        mut reader: R,
    ) -> std::io::Result<()> {
        let mut ingestor = Ingestor::new(self.clone());
        let mut buf = vec![0u8; 16 * 1024];
        loop {
            let n = reader.read(&mut buf).await?;
            if n == 0 {
                break;
            }
            ingestor.push(&buf[..n]);
        }
        ingestor.finish();
        Ok(())
    }
}

struct Session {
    pipeline: ChannelPipeline,
    engine: RuleEngine,
    recorder: Option<RecordingWriter>,
    recording_failed: bool,
    decimator: Option<Decimator>,
    samples: u64,
    reported_error: bool,
}

/// One telemetry connection: a byte-stream splitter plus per-channel
/// analytics, rule state and recorders.
pub struct Ingestor {
    state: Arc<ServiceState>,
    splitter: FrameSplitter,
    sessions: HashMap<u8, Session>,
}

impl Ingestor {
    pub fn new(state: Arc<ServiceState>) -> Self {
        bump(&state.counters.connections);
        bump(&state.counters.connections_total);
        Ingestor {
            state,
            splitter: FrameSplitter::new(),
            sessions: HashMap::new(),
        }
    }

    pub fn push(&mut self, bytes: &[u8]) {
        self.state
            .counters
            .bytes
            .fetch_add(bytes.len() as u64, Ordering::Relaxed);
        for ev in self.splitter.push(bytes) {
            self.handle(ev);
        }
    }

    /// Flushes whatever the splitter still holds.
    pub fn finish(mut self) {
        let splitter = std::mem::take(&mut self.splitter);
        for ev in splitter.finish() {
            self.handle(ev);
        }
    }

    fn handle(&mut self, ev: SplitEvent) {
        match ev {
            SplitEvent::Frame(f) => self.frame(f),
            SplitEvent::Corrupt(c) => {
                let counters = &self.state.counters;
                bump(&counters.protocol_errors);
                counters
                    .corrupt_bytes
                    .fetch_add(c.skipped as u64, Ordering::Relaxed);
                log::warn!(
                    "telemetry: skipped {} corrupt bytes ({:?})",
                    c.skipped,
                    c.kind
                );
            }
        }
    }

    fn session(&mut self, channel_id: u8) -> &mut Session {
        let state = &self.state;
        self.sessions.entry(channel_id).or_insert_with(|| {
            let cfg = state.config.channel(channel_id);
            let mut chans = state.channels.lock().expect("channel lock");
            let entry = chans.entry(channel_id).or_insert_with(|| ChannelEntry {
                info: ChannelInfo {
                    channel_id,
                    kind: cfg.kind,
                    sample_rate: None,
                    frames: 0,
                    stream_time: 0.0,
                    recording: None,
                    connected: false,
                },
                sessions: 0,
                latest: None,
                history: VecDeque::new(),
            });
            entry.sessions += 1;
            entry.info.connected = true;
            Session {
                pipeline: ChannelPipeline::new(channel_id, cfg.kind, cfg.filters, state.window),
                engine: RuleEngine::new(),
                recorder: None,
                recording_failed: false,
                decimator: None,
                samples: 0,
                reported_error: false,
            }
        })
    }

    fn frame(&mut self, wf: WireFrame) {
        let state = self.state.clone();
        bump(&state.counters.frames);
        let fs = wf.sample_rate as f64;
        let sess = self.session(wf.channel_id);

        if let Some(dir) = state.recordings_dir() {
            let stale = sess
                .recorder
                .as_ref()
                .is_none_or(|r| r.header().sample_rate != wf.sample_rate);
            if stale && !sess.recording_failed {
                let header = RecordingHeader {
                    channel_id: wf.channel_id,
                    kind: sess.pipeline.kind(),
                    sample_rate: wf.sample_rate,
                    start_time: now_unix(),
                };
                match RecordingWriter::create(dir, header) {
                    Ok(w) => sess.recorder = Some(w),
                    Err(e) => {
                        sess.recording_failed = true;
                        bump(&state.counters.persistence_errors);
                        log::error!("channel {}: cannot create recording: {e}", wf.channel_id);
                    }
                }
            }
            if let Some(w) = sess.recorder.as_mut().filter(|w| w.is_active()) {
                if let Err(e) = w.append(&wf) {
                    bump(&state.counters.persistence_errors);
                    log::error!("recording {} stopped: {e}", w.id());
                }
            }
        }

        let t0 = sess.samples as f64 / fs;
        sess.samples += wf.samples.len() as u64;
        let frame = wf.to_sample_frame(t0);
        {
            let mut chans = state.channels.lock().expect("channel lock");
            if let Some(c) = chans.get_mut(&wf.channel_id) {
                c.info.frames += 1;
                c.info.sample_rate = Some(fs);
                c.info.stream_time = sess.samples as f64 / fs;
                c.info.recording = sess
                    .recorder
                    .as_ref()
                    .filter(|w| w.is_active())
                    .map(|w| w.id().to_string());
            }
        }

        let out = match sess.pipeline.process(&frame) {
            Ok(o) => o,
            Err(e) => {
                bump(&state.counters.pipeline_errors);
                if !sess.reported_error {
                    sess.reported_error = true;
                    log::error!("channel {}: {e}", wf.channel_id);
                }
                return;
            }
        };
        if out.discontinuity {
            bump(&state.counters.discontinuities);
            sess.decimator = None;
        }
        if let Some(filtered) = &out.filtered {
            let dec = sess.decimator.get_or_insert_with(|| Decimator::new(fs));
            let points = dec.push(filtered);
            if !points.is_empty() {
                state.hub.publish(PushMessage::Waveform {
                    channel_id: wf.channel_id,
                    points,
                });
            }
        }
        if out.metrics.is_empty() {
            return;
        }
        let rules = state.rules();
        for m in &out.metrics {
            state.record_metric(m);
            for t in sess.engine.evaluate(m, &rules) {
                state.emit(t, &rules);
            }
        }
    }
}

impl Drop for Ingestor {
    fn drop(&mut self) {
        self.state
            .counters
            .connections
            .fetch_sub(1, Ordering::Relaxed);
        let mut chans = self.state.channels.lock().expect("channel lock");
        for id in self.sessions.keys() {
            if let Some(c) = chans.get_mut(id) {
                c.sessions = c.sessions.saturating_sub(1);
                c.info.connected = c.sessions > 0;
                if !c.info.connected {
                    c.info.recording = None;
                }
            }
        }
    }
}

/// A started service.
pub struct ServiceHandle {
    pub telemetry_addr: SocketAddr,
    pub api_addr: SocketAddr,
    pub state: Arc<ServiceState>,
    shutdown: watch::Sender<bool>,
    tasks: Vec<JoinHandle<()>>,
}

impl ServiceHandle {
    /// Stops accepting, closes push streams and waits for the servers.
    pub async fn shutdown(self) {
        let _ = self.shutdown.send(true);
        self.state.hub.close();
        for t in self.tasks {
            let _ = tokio::time::timeout(Duration::from_secs(5), t).await;
        }
    }
}

/// Starts a service from a config.
pub async fn start(config: ServiceConfig) -> Result<ServiceHandle> {
    start_with_state(ServiceState::new(config)?).await
}

/// Binds both listeners and serves `state`.
pub async fn start_with_state(state: Arc<ServiceState>) -> Result<ServiceHandle> {
    let tele = TcpListener::bind(&state.config.service.telemetry_addr).await?;
    let api = TcpListener::bind(&state.config.service.api_addr).await?;
    let telemetry_addr = tele.local_addr()?;
    let api_addr = api.local_addr()?;
    let (shutdown, rx) = watch::channel(false);

    let st = state.clone();
    let conn_stop = rx.clone();
    let mut stop = rx.clone();
    let accept = tokio::spawn(async move {
        loop {
            tokio::select! {
                r = tele.accept() => match r {
                    Ok((sock, peer)) => {
                        log::info!("telemetry connection from {peer}");
                        let st = st.clone();
                        let mut stop = conn_stop.clone();
                        tokio::spawn(async move {
                            tokio::select! {
                                r = st.ingest(sock) => if let Err(e) = r { log::warn!("telemetry {peer}: {e}") },
                                _ = stop.wait_for(|s| *s) => {}
                            }
                        });
                    }
                    Err(e) => log::warn!("accept failed: {e}"),
                },
                _ = stop.wait_for(|s| *s) => break,
            }
        }
    });

    let router = crate::api::router(state.clone());
    let mut stop = rx;
    let server = tokio::spawn(async move {
        let graceful = async move {
            let _ = stop.wait_for(|s| *s).await;
        };
        if let Err(e) = axum::serve(api, router)
            .with_graceful_shutdown(graceful)
            .await
        {
            log::error!("API server: {e}");
        }
    });

    Ok(ServiceHandle {
        telemetry_addr,
        api_addr,
        state,
        shutdown,
        tasks: vec![accept, server],
    })
}
