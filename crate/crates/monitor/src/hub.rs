//! Server-push fan-out.
//!
//! Every subscriber has two queues: a bounded one for waveform points,
//! which sheds its oldest entries when full, and an unbounded one for
//! metrics and events, which are low-rate and never dropped.

use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, Weak};
use tokio::sync::Notify;

use wban_core::SampleFrame;

use crate::pipeline::MetricSnapshot;
use crate::rules::AlertEvent;

/// Upper bound on waveform points per second per channel.
pub const MAX_POINTS_PER_SECOND: f64 = 50.0;
pub const DEFAULT_WAVEFORM_CAPACITY: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum PushMessage {
    /// `points` are `[t_seconds, mV]` pairs.
    Waveform {
        channel_id: u8,
        points: Vec<[f64; 2]>,
    },
    Metric(MetricSnapshot),
    Event(AlertEvent),
}

impl PushMessage {
    pub fn kind(&self) -> &'static str {
        match self {
            PushMessage::Waveform { .. } => "waveform",
            PushMessage::Metric(_) => "metric",
            PushMessage::Event(_) => "event",
        }
    }
}

/// Keeps the largest-magnitude sample of each bucket so QRS peaks survive.
#[derive(Debug, Clone)]
pub struct Decimator {
    bucket: usize,
    filled: usize,
    best: Option<[f64; 2]>,
}

impl Decimator {
    pub fn new(sample_rate: f64) -> Self {
        Decimator {
            bucket: (sample_rate / MAX_POINTS_PER_SECOND).ceil().max(1.0) as usize,
            filled: 0,
            best: None,
        }
    }

    pub fn bucket(&self) -> usize {
        self.bucket
    }

    pub fn push(&mut self, frame: &SampleFrame) -> Vec<[f64; 2]> {
        let mut out = Vec::with_capacity(frame.samples.len() / self.bucket + 1);
        for (i, &v) in frame.samples.iter().enumerate() {
            let p = [frame.time_of(i), v];
            if self.best.is_none_or(|b| v.abs() > b[1].abs()) {
                self.best = Some(p);
            }
            self.filled += 1;
            if self.filled == self.bucket {
                out.extend(self.best.take());
                self.filled = 0;
            }
        }
        out
    }
}

#[derive(Debug, Default)]
struct Queues {
    waveform: VecDeque<PushMessage>,
    control: VecDeque<PushMessage>,
    dropped: u64,
}

#[derive(Debug)]
struct Shared {
    queues: Mutex<Queues>,
    notify: Notify,
    capacity: usize,
    closed: AtomicBool,
}

/// Receiving end held by one client.
#[derive(Debug)]
pub struct Subscription {
    shared: Arc<Shared>,
}

impl Subscription {
    /// Next message, metrics and events first.
    pub fn try_next(&self) -> Option<PushMessage> {
        let mut q = self.shared.queues.lock().expect("hub lock");
        q.control.pop_front().or_else(|| q.waveform.pop_front())
    }

    /// Waits for the next message; `None` once the hub is closed.
    pub async fn next(&self) -> Option<PushMessage> {
        loop {
            if self.shared.closed.load(Ordering::Acquire) {
                return None;
            }
            if let Some(m) = self.try_next() {
                return Some(m);
            }
            self.shared.notify.notified().await;
        }
    }

    /// Waveform messages shed so far.
    pub fn dropped(&self) -> u64 {
        self.shared.queues.lock().expect("hub lock").dropped
    }

    /// Waveform messages currently queued.
    pub fn waveform_queued(&self) -> usize {
        self.shared.queues.lock().expect("hub lock").waveform.len()
    }

    /// Messages currently queued.
    pub fn queued(&self) -> usize {
        let q = self.shared.queues.lock().expect("hub lock");
        q.control.len() + q.waveform.len()
    }
}

#[derive(Debug)]
pub struct Hub {
    subscribers: Mutex<Vec<Weak<Shared>>>,
    capacity: usize,
}

impl Default for Hub {
    fn default() -> Self {
        Hub::new(DEFAULT_WAVEFORM_CAPACITY)
    }
}

impl Hub {
    /// `capacity` bounds each subscriber's waveform queue.
    pub fn new(capacity: usize) -> Self {
        Hub {
            subscribers: Mutex::new(Vec::new()),
            capacity: capacity.max(1),
        }
    }

    pub fn subscribe(&self) -> Subscription {
        let shared = Arc::new(Shared {
            queues: Mutex::default(),
            notify: Notify::new(),
            capacity: self.capacity,
            closed: AtomicBool::new(false),
        });
        self.subscribers
            .lock()
            .expect("hub lock")
            .push(Arc::downgrade(&shared));
        Subscription { shared }
    }

    pub fn subscriber_count(&self) -> usize {
        let mut subs = self.subscribers.lock().expect("hub lock");
        subs.retain(|w| w.strong_count() > 0);
        subs.len()
    }

    /// Ends every current subscription.
    pub fn close(&self) {
        let subs = std::mem::take(&mut *self.subscribers.lock().expect("hub lock"));
        for sub in subs.iter().filter_map(Weak::upgrade) {
            sub.closed.store(true, Ordering::Release);
            sub.notify.notify_one();
        }
    }

    pub fn publish(&self, msg: PushMessage) {
        let mut subs = self.subscribers.lock().expect("hub lock");
        subs.retain(|w| w.strong_count() > 0);
        for sub in subs.iter().filter_map(Weak::upgrade) {
            {
                let mut q = sub.queues.lock().expect("hub lock");
                match msg {
                    PushMessage::Waveform { .. } => {
                        if q.waveform.len() >= sub.capacity {
                            q.waveform.pop_front();
                            q.dropped += 1;
                        }
                        q.waveform.push_back(msg.clone());
                    }
                    _ => q.control.push_back(msg.clone()),
                }
            }
            sub.notify.notify_one();
        }
    }
}
