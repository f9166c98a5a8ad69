//! SMS alerts through an AT-command modem in text mode.

use serde::{Deserialize, Serialize};
use std::collections::{HashSet, VecDeque};
use std::io::{Read, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{mpsc, Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use crate::rules::{AlertEvent, AlertRule, Metric, MetricValue};

pub const MAX_BODY: usize = 160;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(5);
pub const DEFAULT_RETRIES: u32 = 2;
const CTRL_Z: u8 = 0x1A;
const PLACEHOLDERS: [&str; 4] = ["channel", "metric", "value", "time"];

/// `^\+?[0-9]{6,15}$`
pub fn valid_recipient(s: &str) -> bool {
    let digits = s.strip_prefix('+').unwrap_or(s);
    (6..=15).contains(&digits.len()) && digits.bytes().all(|b| b.is_ascii_digit())
}

fn allowed(c: char) -> bool {
    c.is_ascii_alphanumeric() || " .,:;()/+-=<>%#!?@".contains(c)
}

/// Replaces characters outside the permitted alphabet with `?`.
pub fn sanitize(body: &str) -> String {
    body.chars()
        .map(|c| if allowed(c) { c } else { '?' })
        .collect()
}

/// Cuts to 160 characters, the last one replaced by `.`.
pub fn truncate(body: &str) -> String {
    if body.chars().count() <= MAX_BODY {
        return body.to_string();
    }
    let mut out: String = body.chars().take(MAX_BODY - 1).collect();
    out.push('.');
    out
}

fn placeholders(template: &str) -> Result<Vec<(usize, usize, &str)>, String> {
    let mut out = Vec::new();
    let mut rest = 0;
    while let Some(open) = template[rest..].find('{').map(|i| i + rest) {
        let close = template[open..]
            .find('}')
            .map(|i| i + open)
            .ok_or("unclosed '{' in template")?;
        let name = &template[open + 1..close];
        if !PLACEHOLDERS.contains(&name) {
            return Err(format!("unknown placeholder '{{{name}}}'"));
        }
        out.push((open, close + 1, name));
        rest = close + 1;
    }
    Ok(out)
}

/// Accepts templates whose placeholders are all known.
pub fn check_template(template: &str) -> Result<(), String> {
    placeholders(template).map(|_| ())
}

fn format_value(metric: Metric, value: MetricValue) -> String {
    match (metric, value) {
        (Metric::HeartRate, MetricValue::Number(v)) => format!("{}", v.round()),
        (_, MetricValue::Number(v)) => format!("{v:.2}"),
        (_, MetricValue::Band(b)) => b.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SmsMessage {
    pub recipient: String,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FormatError {
    #[error("recipient is empty")]
    EmptyRecipient,
    #[error("invalid recipient '{0}'")]
    Recipient(String),
    #[error("template: {0}")]
    Template(String),
}

/// Expands the rule's template for `event`. The recipient comes from the
/// rule, falling back to `default_recipient`.
pub fn format_message(
    event: &AlertEvent,
    rule: &AlertRule,
    default_recipient: Option<&str>,
) -> Result<SmsMessage, FormatError> {
    let recipient = rule
        .recipient
        .as_deref()
        .or(default_recipient)
        .unwrap_or("");
    if recipient.is_empty() {
        return Err(FormatError::EmptyRecipient);
    }
    if !valid_recipient(recipient) {
        return Err(FormatError::Recipient(recipient.into()));
    }
    let t = &rule.message_template;
    let mut body = String::new();
    let mut last = 0;
    for (start, end, name) in placeholders(t).map_err(FormatError::Template)? {
        body.push_str(&t[last..start]);
        match name {
            "channel" => body.push_str(&event.channel_id.to_string()),
            "metric" => body.push_str(rule.metric.display_name()),
            "value" => body.push_str(&format_value(rule.metric, event.value)),
            _ => body.push_str(&format!("{:.1}", event.time)),
        }
        last = end;
    }
    body.push_str(&t[last..]);
    Ok(SmsMessage {
        recipient: recipient.into(),
        body: truncate(&sanitize(&body)),
    })
}

/// A duplex byte link to a modem.
pub trait ModemTransport: Send {
    fn write(&mut self, bytes: &[u8]) -> std::io::Result<()>;
    /// Next chunk of input, or `None` if nothing arrives within `timeout`.
    fn read(&mut self, timeout: Duration) -> std::io::Result<Option<Vec<u8>>>;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TranscriptEntry {
    Sent(Vec<u8>),
    Received(Vec<u8>),
}

/// Shared view of a mock transport's traffic.
#[derive(Debug, Clone, Default)]
pub struct Transcript(Arc<Mutex<Vec<TranscriptEntry>>>);

impl Transcript {
    pub fn entries(&self) -> Vec<TranscriptEntry> {
        self.0.lock().expect("transcript lock").clone()
    }

    /// Everything written to the modem, in order.
    pub fn writes(&self) -> Vec<Vec<u8>> {
        self.entries()
            .into_iter()
            .filter_map(|e| match e {
                TranscriptEntry::Sent(b) => Some(b),
                TranscriptEntry::Received(_) => None,
            })
            .collect()
    }

    /// One line per exchange, `>>` for writes and `<<` for replies, with
    /// control bytes escaped.
    pub fn render(&self) -> String {
        let esc = |b: &[u8]| {
            b.iter()
                .map(|&c| match c {
                    b'\r' => "\\r".to_string(),
                    b'\n' => "\\n".to_string(),
                    0x1A => "<SUB>".to_string(),
                    c if c.is_ascii_graphic() || c == b' ' => (c as char).to_string(),
                    c => format!("\\x{c:02x}"),
                })
                .collect::<String>()
        };
        self.entries()
            .iter()
            .map(|e| match e {
                TranscriptEntry::Sent(b) => format!(">> {}\n", esc(b)),
                TranscriptEntry::Received(b) => format!("<< {}\n", esc(b)),
            })
            .collect()
    }

    fn push(&self, e: TranscriptEntry) {
        self.0.lock().expect("transcript lock").push(e);
    }
}

/// How the mock answers one write.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MockReply {
    Bytes(Vec<u8>),
    /// Nothing; the pending expect times out at once.
    Silence,
}

type Responder = Box<dyn FnMut(&[u8]) -> MockReply + Send>;

/// Scripted modem for tests and dry runs. Timeouts are immediate.
pub struct MockTransport {
    responder: Responder,
    pending: VecDeque<Vec<u8>>,
    transcript: Transcript,
}

impl MockTransport {
    pub fn new(responder: impl FnMut(&[u8]) -> MockReply + Send + 'static) -> Self {
        MockTransport {
            responder: Box::new(responder),
            pending: VecDeque::new(),
            transcript: Transcript::default(),
        }
    }

    /// A modem that accepts everything.
    pub fn happy() -> Self {
        Self::new(standard_reply)
    }

    pub fn transcript(&self) -> Transcript {
        self.transcript.clone()
    }
}

/// Replies of a well-behaved modem with echo off.
pub fn standard_reply(written: &[u8]) -> MockReply {
    if written == b"AT\r" || written == b"AT+CMGF=1\r" {
        MockReply::Bytes(b"\r\nOK\r\n".to_vec())
    } else if written.starts_with(b"AT+CMGS=") {
        MockReply::Bytes(b"\r\n> ".to_vec())
    } else if written == [CTRL_Z] {
        MockReply::Bytes(b"\r\n+CMGS: 17\r\n\r\nOK\r\n".to_vec())
    } else {
        MockReply::Silence
    }
}

impl ModemTransport for MockTransport {
    fn write(&mut self, bytes: &[u8]) -> std::io::Result<()> {
        self.transcript.push(TranscriptEntry::Sent(bytes.to_vec()));
        if let MockReply::Bytes(b) = (self.responder)(bytes) {
            self.pending.push_back(b);
        }
        Ok(())
    }

    fn read(&mut self, _timeout: Duration) -> std::io::Result<Option<Vec<u8>>> {
        let chunk = self.pending.pop_front();
        if let Some(b) = &chunk {
            self.transcript.push(TranscriptEntry::Received(b.clone()));
        }
        Ok(chunk)
    }
}

/// A serial device opened as a file. Line settings (baud rate etc.) must
/// already be configured on the device.
pub struct DeviceTransport {
    writer: std::fs::File,
    rx: mpsc::Receiver<Vec<u8>>,
}

impl DeviceTransport {
    pub fn open(path: &Path) -> std::io::Result<Self> {
        let writer = std::fs::OpenOptions::new()
            .read(true)
            .write(true)
            .open(path)?;
        let mut reader = writer.try_clone()?;
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            let mut buf = [0u8; 256];
            loop {
                match reader.read(&mut buf) {
                    Ok(0) | Err(_) => break,
                    Ok(n) => {
                        if tx.send(buf[..n].to_vec()).is_err() {
                            break;
                        }
                    }
                }
            }
        });
        Ok(DeviceTransport { writer, rx })
    }
}

impl ModemTransport for DeviceTransport {
    fn write(&mut self, bytes: &[u8]) -> std::io::Result<()> {
        self.writer.write_all(bytes)?;
        self.writer.flush()
    }

    fn read(&mut self, timeout: Duration) -> std::io::Result<Option<Vec<u8>>> {
        match self.rx.recv_timeout(timeout) {
            Ok(b) => Ok(Some(b)),
            Err(mpsc::RecvTimeoutError::Timeout) => Ok(None),
            Err(mpsc::RecvTimeoutError::Disconnected) => Err(std::io::Error::new(
                std::io::ErrorKind::BrokenPipe,
                "modem closed",
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SendOptions {
    pub timeout: Duration,
    /// Extra attempts of the whole sequence after the first.
    pub retries: u32,
}

impl Default for SendOptions {
    fn default() -> Self {
        SendOptions {
            timeout: DEFAULT_TIMEOUT,
            retries: DEFAULT_RETRIES,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Delivery {
    pub attempts: u32,
    /// Message reference from `+CMGS:`.
    pub reference: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error, Serialize, Deserialize)]
pub enum SendError {
    #[error("modem did not answer '{expected}' in time after {attempts} attempts")]
    Timeout { attempts: u32, expected: String },
    #[error("modem answered ERROR to '{stage}' after {attempts} attempts")]
    Rejected { attempts: u32, stage: String },
    #[error("modem i/o: {0}")]
    Io(String),
}

impl SendError {
    /// Timeouts may succeed later; an ERROR reply will not.
    pub fn is_retriable(&self) -> bool {
        matches!(self, SendError::Timeout { .. })
    }
}

enum Step {
    Timeout(String),
    Error(String),
    Io(String),
}

struct Session<'a, T: ?Sized> {
    transport: &'a mut T,
    buf: Vec<u8>,
    timeout: Duration,
}

fn find(hay: &[u8], needle: &[u8]) -> Option<usize> {
    hay.windows(needle.len()).position(|w| w == needle)
}

impl<T: ModemTransport + ?Sized> Session<'_, T> {
    fn write(&mut self, bytes: &[u8]) -> Result<(), Step> {
        self.transport
            .write(bytes)
            .map_err(|e| Step::Io(e.to_string()))
    }

    /// Reads until `token` arrives; consumes input through it and returns
    /// what follows on the same line.
    fn expect(&mut self, token: &str, stage: &str) -> Result<String, Step> {
        let deadline = Instant::now() + self.timeout;
        loop {
            let hit = find(&self.buf, token.as_bytes());
            let err = find(&self.buf, b"ERROR");
            match (hit, err) {
                (Some(h), e) if e.is_none_or(|e| h < e) => {
                    let after = &self.buf[h + token.len()..];
                    let line_end = after
                        .iter()
                        .position(|&b| b == b'\r' || b == b'\n')
                        .unwrap_or(after.len());
                    let rest = String::from_utf8_lossy(&after[..line_end]).into_owned();
                    self.buf.drain(..h + token.len());
                    return Ok(rest);
                }
                (_, Some(_)) => return Err(Step::Error(stage.into())),
                _ => {}
            }
            let left = deadline.saturating_duration_since(Instant::now());
            match self.transport.read(left) {
                Ok(Some(chunk)) => self.buf.extend_from_slice(&chunk),
                Ok(None) => return Err(Step::Timeout(token.trim().into())),
                Err(e) => return Err(Step::Io(e.to_string())),
            }
            if Instant::now() >= deadline && find(&self.buf, token.as_bytes()).is_none() {
                return Err(Step::Timeout(token.trim().into()));
            }
        }
    }

    fn run(&mut self, msg: &SmsMessage) -> Result<Option<u32>, Step> {
        self.write(b"AT\r")?;
        self.expect("OK", "AT")?;
        self.write(b"AT+CMGF=1\r")?;
        self.expect("OK", "AT+CMGF=1")?;
        self.write(format!("AT+CMGS=\"{}\"\r", msg.recipient).as_bytes())?;
        self.expect("> ", "AT+CMGS")?;
        self.write(msg.body.as_bytes())?;
        self.write(&[CTRL_Z])?;
        let reference = self.expect("+CMGS:", "message body")?.trim().parse().ok();
        self.expect("OK", "message body")?;
        Ok(reference)
    }
}

/// Runs the text-mode send sequence, repeating it on timeout or ERROR.
pub fn send<T: ModemTransport + ?Sized>(
    transport: &mut T,
    msg: &SmsMessage,
    opts: SendOptions,
) -> Result<Delivery, SendError> {
    let mut last = None;
    for attempt in 1..=opts.retries + 1 {
        let mut session = Session {
            transport: &mut *transport,
            buf: Vec::new(),
            timeout: opts.timeout,
        };
        // drop anything left over from an earlier attempt
        while let Ok(Some(_)) = session.transport.read(Duration::ZERO) {}
        match session.run(msg) {
            Ok(reference) => {
                return Ok(Delivery {
                    attempts: attempt,
                    reference,
                })
            }
            Err(Step::Io(e)) => return Err(SendError::Io(e)),
            Err(Step::Timeout(expected)) => {
                last = Some(SendError::Timeout {
                    attempts: attempt,
                    expected,
                })
            }
            Err(Step::Error(stage)) => {
                last = Some(SendError::Rejected {
                    attempts: attempt,
                    stage,
                })
            }
        }
    }
    Err(last.expect("at least one attempt"))
}

/// Ledger entry written around each send.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmsRecord {
    pub event_id: u64,
    pub status: SmsStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attempts: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SmsStatus {
    /// Written before the first attempt; an id with any record is never sent again.
    Sending,
    Sent,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DispatchOutcome {
    Sent(Delivery),
    Failed(SendError),
    /// The event already has a ledger entry.
    Duplicate,
}

#[derive(Debug, Default)]
pub struct SmsStats {
    pub sent: AtomicU64,
    pub failed: AtomicU64,
    pub duplicates: AtomicU64,
}

struct Job {
    event_id: u64,
    msg: SmsMessage,
    done: mpsc::Sender<DispatchOutcome>,
}

pub type RecordSink = Box<dyn FnMut(&SmsRecord) + Send>;

/// Serialised send queue over one modem with an at-most-once ledger keyed
/// by event id.
pub struct SmsDispatcher {
    tx: Mutex<mpsc::Sender<Job>>,
    stats: Arc<SmsStats>,
}

impl SmsDispatcher {
    /// `claimed` holds event ids already present in the ledger; `sink`
    /// persists new ledger records.
    pub fn spawn(
        mut transport: Box<dyn ModemTransport>,
        opts: SendOptions,
        claimed: HashSet<u64>,
        mut sink: RecordSink,
    ) -> Self {
        let (tx, rx) = mpsc::channel::<Job>();
        let stats = Arc::new(SmsStats::default());
        let st = stats.clone();
        thread::spawn(move || {
            let mut claimed = claimed;
            for job in rx {
                let outcome = if !claimed.insert(job.event_id) {
                    st.duplicates.fetch_add(1, Ordering::Relaxed);
                    DispatchOutcome::Duplicate
                } else {
                    sink(&SmsRecord {
                        event_id: job.event_id,
                        status: SmsStatus::Sending,
                        attempts: None,
                        error: None,
                    });
                    match send(transport.as_mut(), &job.msg, opts) {
                        Ok(d) => {
                            st.sent.fetch_add(1, Ordering::Relaxed);
                            sink(&SmsRecord {
                                event_id: job.event_id,
                                status: SmsStatus::Sent,
                                attempts: Some(d.attempts),
                                error: None,
                            });
                            DispatchOutcome::Sent(d)
                        }
                        Err(e) => {
                            st.failed.fetch_add(1, Ordering::Relaxed);
                            log::error!("SMS for event {} failed: {e}", job.event_id);
                            let attempts = match &e {
                                SendError::Timeout { attempts, .. }
                                | SendError::Rejected { attempts, .. } => Some(*attempts),
                                SendError::Io(_) => None,
                            };
                            sink(&SmsRecord {
                                event_id: job.event_id,
                                status: SmsStatus::Failed,
                                attempts,
                                error: Some(e.to_string()),
                            });
                            DispatchOutcome::Failed(e)
                        }
                    }
                };
                let _ = job.done.send(outcome);
            }
        });
        SmsDispatcher {
            tx: Mutex::new(tx),
            stats,
        }
    }

    /// Queues a message; the receiver yields the outcome once processed.
    pub fn enqueue(&self, event_id: u64, msg: SmsMessage) -> mpsc::Receiver<DispatchOutcome> {
        let (done, rx) = mpsc::channel();
        let job = Job {
            event_id,
            msg,
            done,
        };
        if let Err(mpsc::SendError(job)) = self.tx.lock().expect("sms queue lock").send(job) {
            let _ = job.done.send(DispatchOutcome::Failed(SendError::Io(
                "dispatcher stopped".into(),
            )));
        }
        rx
    }

    pub fn stats(&self) -> &SmsStats {
        &self.stats
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rules::{Comparator, Threshold};

    fn rule(template: &str) -> AlertRule {
        AlertRule {
            id: "r".into(),
            channel_id: 1,
            metric: Metric::HeartRate,
            comparator: Comparator::Gt,
            threshold: Threshold::Number(120.0),
            debounce: 0.0,
            message_template: template.into(),
            recipient: Some("+60123456789".into()),
        }
    }

    fn event(value: f64) -> AlertEvent {
        AlertEvent {
            id: 1,
            rule_id: "r".into(),
            channel_id: 1,
            time: 12.25,
            value: MetricValue::Number(value),
            acknowledged: false,
        }
    }

    #[test]
    fn recipients() {
        assert!(valid_recipient("+60123456789"));
        assert!(valid_recipient("123456"));
        assert!(!valid_recipient("12345"));
        assert!(!valid_recipient("+1234567890123456"));
        assert!(!valid_recipient("+60-123"));
        assert!(!valid_recipient(""));
    }

    #[test]
    fn substitution() {
        let m = format_message(
            &event(130.0),
            &rule("HR ALERT ch{channel} {value}BPM"),
            None,
        )
        .unwrap();
        assert_eq!(m.body, "HR ALERT ch1 130BPM");
        let m = format_message(&event(129.6), &rule("{metric} {value} at {time}s"), None).unwrap();
        assert_eq!(m.body, "heart rate 130 at 12.2s");
    }

    #[test]
    fn truncation_and_alphabet() {
        let long = "x".repeat(200);
        let m = format_message(&event(1.0), &rule(&long), None).unwrap();
        assert_eq!(m.body.chars().count(), 160);
        assert!(m.body.ends_with("x."));
        let m = format_message(&event(1.0), &rule("cost 5€ [now]"), None).unwrap();
        assert_eq!(m.body, "cost 5? ?now?");
    }

    #[test]
    fn recipient_required() {
        let mut r = rule("x");
        r.recipient = None;
        assert_eq!(
            format_message(&event(1.0), &r, None),
            Err(FormatError::EmptyRecipient)
        );
        assert!(format_message(&event(1.0), &r, Some("+60123456789")).is_ok());
        r.recipient = Some("abc".into());
        assert!(matches!(
            format_message(&event(1.0), &r, None),
            Err(FormatError::Recipient(_))
        ));
    }

    #[test]
    fn templates() {
        assert!(check_template("a {channel} {metric} {value} {time}").is_ok());
        assert!(check_template("{oops}").is_err());
        assert!(check_template("{value").is_err());
    }

    #[test]
    fn reference_parsed() {
        let mut t = MockTransport::happy();
        let msg = SmsMessage {
            recipient: "+60123456789".into(),
            body: "hi".into(),
        };
        let d = send(&mut t, &msg, SendOptions::default()).unwrap();
        assert_eq!(
            d,
            Delivery {
                attempts: 1,
                reference: Some(17)
            }
        );
    }
}
