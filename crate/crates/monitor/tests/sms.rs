mod common;

use std::collections::HashSet;
use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::Arc;
use std::time::Duration;

use common::*;
use wban_monitor::recording::{read_log, LogRecord, EVENT_LOG};
use wban_monitor::service::Ingestor;
use wban_monitor::sms::{
    send, standard_reply, DispatchOutcome, MockReply, MockTransport, SendError, SendOptions,
    SmsDispatcher, SmsMessage, SmsRecord, SmsStatus,
};
use wban_monitor::ServiceState;

const CTRL_Z: u8 = 0x1A;

fn msg() -> SmsMessage {
    SmsMessage {
        recipient: "+60123456789".into(),
        body: "HR ALERT ch1 130BPM".into(),
    }
}

fn fast() -> SendOptions {
    SendOptions {
        timeout: Duration::from_millis(50),
        retries: 2,
    }
}

fn five_writes(m: &SmsMessage) -> Vec<Vec<u8>> {
    vec![
        b"AT\r".to_vec(),
        b"AT+CMGF=1\r".to_vec(),
        format!("AT+CMGS=\"{}\"\r", m.recipient).into_bytes(),
        m.body.clone().into_bytes(),
        vec![CTRL_Z],
    ]
}

#[test]
fn happy_path_transcript_is_exact() {
    let mut modem = MockTransport::happy();
    let t = modem.transcript();
    let d = send(&mut modem, &msg(), SendOptions::default()).unwrap();
    assert_eq!(d.attempts, 1);
    assert_eq!(d.reference, Some(17));
    assert_eq!(t.writes(), five_writes(&msg()));
    assert_eq!(
        t.render(),
        concat!(
            ">> AT\\r\n",
            "<< \\r\\nOK\\r\\n\n",
            ">> AT+CMGF=1\\r\n",
            "<< \\r\\nOK\\r\\n\n",
            ">> AT+CMGS=\"+60123456789\"\\r\n",
            "<< \\r\\n> \n",
            ">> HR ALERT ch1 130BPM\n",
            ">> <SUB>\n",
            "<< \\r\\n+CMGS: 17\\r\\n\\r\\nOK\\r\\n\n",
        )
    );
}

#[test]
fn error_on_cmgs_fails_after_three_attempts() {
    let mut modem = MockTransport::new(|w: &[u8]| {
        if w.starts_with(b"AT+CMGS=") {
            MockReply::Bytes(b"\r\nERROR\r\n".to_vec())
        } else {
            standard_reply(w)
        }
    });
    let t = modem.transcript();
    let err = send(&mut modem, &msg(), fast()).unwrap_err();
    assert!(
        matches!(err, SendError::Rejected { attempts: 3, .. }),
        "{err:?}"
    );
    assert!(!err.is_retriable());
    let cmgs = t
        .writes()
        .iter()
        .filter(|w| w.starts_with(b"AT+CMGS="))
        .count();
    assert_eq!(cmgs, 3);
    assert!(!t.writes().contains(&vec![CTRL_Z]));
}

#[test]
fn one_timeout_then_success_takes_two_attempts() {
    let silenced = Arc::new(AtomicU32::new(0));
    let s = silenced.clone();
    let mut modem = MockTransport::new(move |w: &[u8]| {
        if w == [CTRL_Z] && s.fetch_add(1, Ordering::SeqCst) == 0 {
            MockReply::Silence
        } else {
            standard_reply(w)
        }
    });
    let t = modem.transcript();
    let d = send(&mut modem, &msg(), fast()).unwrap();
    assert_eq!(d.attempts, 2);
    let mut expected = five_writes(&msg());
    expected.extend(five_writes(&msg()));
    assert_eq!(t.writes(), expected);
}

#[test]
fn persistent_timeout_is_retriable() {
    let mut modem = MockTransport::new(|_: &[u8]| MockReply::Silence);
    let err = send(&mut modem, &msg(), fast()).unwrap_err();
    assert!(matches!(err, SendError::Timeout { attempts: 3, .. }));
    assert!(err.is_retriable());
    assert_eq!(modem.transcript().writes(), vec![b"AT\r".to_vec(); 3]);
}

#[test]
fn dispatcher_sends_each_event_at_most_once() {
    let modem = MockTransport::happy();
    let t = modem.transcript();
    let records = Arc::new(std::sync::Mutex::new(Vec::<SmsRecord>::new()));
    let r = records.clone();
    let claimed = HashSet::from([7u64]);
    let d = SmsDispatcher::spawn(
        Box::new(modem),
        fast(),
        claimed,
        Box::new(move |rec| r.lock().unwrap().push(rec.clone())),
    );
    let wait = |rx: std::sync::mpsc::Receiver<DispatchOutcome>| {
        rx.recv_timeout(Duration::from_secs(5)).unwrap()
    };
    assert!(matches!(
        wait(d.enqueue(1, msg())),
        DispatchOutcome::Sent(_)
    ));
    assert_eq!(wait(d.enqueue(1, msg())), DispatchOutcome::Duplicate);
    assert_eq!(wait(d.enqueue(7, msg())), DispatchOutcome::Duplicate);
    assert!(matches!(
        wait(d.enqueue(2, msg())),
        DispatchOutcome::Sent(_)
    ));
    let ctrl_z = t.writes().iter().filter(|w| **w == [CTRL_Z]).count();
    assert_eq!(ctrl_z, 2);
    let statuses: Vec<_> = records
        .lock()
        .unwrap()
        .iter()
        .map(|r| (r.event_id, r.status))
        .collect();
    assert_eq!(
        statuses,
        vec![
            (1, SmsStatus::Sending),
            (1, SmsStatus::Sent),
            (2, SmsStatus::Sending),
            (2, SmsStatus::Sent)
        ]
    );
    assert_eq!(d.stats().duplicates.load(Ordering::Relaxed), 2);
}

fn wait_sms(state: &ServiceState, sent: u64) {
    for _ in 0..500 {
        if state.status().sms.sent + state.status().sms.failed >= sent {
            return;
        }
        std::thread::sleep(Duration::from_millis(10));
    }
    panic!("SMS not dispatched: {:?}", state.status().sms);
}

#[test]
fn alert_reaches_modem_with_rendered_template() {
    let modem = MockTransport::happy();
    let t = modem.transcript();
    let state =
        ServiceState::with_transport(config(None, vec![tachy(1)]), Some(Box::new(modem))).unwrap();
    let mut ing = Ingestor::new(state.clone());
    ing.push(&wire_bytes(&ecg(1, 130.0, 12.0, 0.0, 0)));
    ing.finish();
    wait_sms(&state, 1);
    let m = SmsMessage {
        recipient: "+60123456789".into(),
        body: "HR ALERT ch1 130BPM".into(),
    };
    assert_eq!(t.writes(), five_writes(&m));
}

#[test]
fn interrupted_send_is_not_repeated_after_restart() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(Some(dir.path()), vec![tachy(1)]);
    let state =
        ServiceState::with_transport(cfg.clone(), Some(Box::new(MockTransport::happy()))).unwrap();
    let mut ing = Ingestor::new(state.clone());
    ing.push(&wire_bytes(&ecg(1, 130.0, 12.0, 0.0, 0)));
    ing.finish();
    wait_sms(&state, 1);
    drop(state);

    // keep only the pre-send record, as if the process died mid-send
    let path = dir.path().join(EVENT_LOG);
    let kept: Vec<String> = std::fs::read_to_string(&path)
        .unwrap()
        .lines()
        .filter(|l| !l.contains("\"sent\""))
        .map(String::from)
        .collect();
    std::fs::write(&path, kept.join("\n") + "\n").unwrap();
    assert!(read_log(&path)
        .iter()
        .any(|r| matches!(r, LogRecord::Sms(s) if s.status == SmsStatus::Sending)));

    let modem = MockTransport::happy();
    let t = modem.transcript();
    let state = ServiceState::with_transport(cfg, Some(Box::new(modem))).unwrap();
    let old = state.events()[0].id;
    // a fresh event on restart is sent; the interrupted one is never retried
    let mut ing = Ingestor::new(state.clone());
    ing.push(&wire_bytes(&ecg(1, 130.0, 12.0, 0.0, 0)));
    ing.finish();
    wait_sms(&state, 1);
    assert_eq!(t.writes().iter().filter(|w| **w == [CTRL_Z]).count(), 1);
    let sent: Vec<u64> = read_log(&path)
        .into_iter()
        .filter_map(|r| match r {
            LogRecord::Sms(s) if s.status == SmsStatus::Sent => Some(s.event_id),
            _ => None,
        })
        .collect();
    assert_eq!(sent, vec![old + 1]);
}

#[test]
fn unsendable_template_is_logged_as_failure() {
    let dir = tempfile::tempdir().unwrap();
    let mut r = tachy(1);
    r.recipient = None;
    let state = ServiceState::with_transport(
        config(Some(dir.path()), vec![r]),
        Some(Box::new(MockTransport::happy())),
    )
    .unwrap();
    let mut ing = Ingestor::new(state.clone());
    ing.push(&wire_bytes(&ecg(1, 130.0, 12.0, 0.0, 0)));
    ing.finish();
    assert_eq!(state.status().sms.failed, 1);
    let failed = read_log(&dir.path().join(EVENT_LOG)).into_iter().any(
        |r| matches!(r, LogRecord::Sms(s) if s.status == SmsStatus::Failed && s.error.is_some()),
    );
    assert!(failed);
}
