//! Minimal topic bus: newline-delimited JSON over TCP.
//!
//! A message is one flat JSON object, `{"topic": .., "t": .., <fields>}`, with
//! numeric fields in SI units. Clients subscribe with a `SUB <pattern>` line;
//! any JSON line they send is published. The wire contract is described in
//! `docs/bus.md`.

pub mod client;
pub mod server;

pub use client::BusClient;
pub use server::BusServer;

use crossbeam::channel::{self, Receiver, RecvTimeoutError, Sender, TrySendError};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;
use thiserror::Error;

pub mod topics {
    pub const JOYSTICK_STATE: &str = "joystick/state";
    pub const ROBOT_REF: &str = "robot/ref";
    pub const ROBOT_STATE: &str = "robot/state";
    pub const BRIDGE_DIAG: &str = "bridge/diag";
    pub const OPERATOR_TORQUE: &str = "operator/torque";
    pub const OPERATOR_PARAMS: &str = "operator/params";

    /// Numeric fields each known topic must carry. Other topics are free-form.
    pub(super) fn required_numbers(topic: &str) -> &'static [&'static str] {
        match topic {
            JOYSTICK_STATE => &["theta", "omega", "tau_operator"],
            ROBOT_REF => &["v_ref", "p_ref", "v_max"],
            ROBOT_STATE => &["f_contact"],
            OPERATOR_TORQUE => &["tau"],
            _ => &[],
        }
    }
}

/// Queue depth after which a subscriber is considered stalled and dropped.
pub const SUBSCRIBER_QUEUE: usize = 1024;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BusError {
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("bad topic pattern {pattern:?}: {reason}")]
    Pattern { pattern: String, reason: &'static str },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BusMessage {
    pub topic: String,
    #[serde(default)]
    pub t: f64,
    #[serde(flatten)]
    pub body: Map<String, Value>,
}

impl BusMessage {
    pub fn new(topic: &str, t: f64) -> Self {
        Self {
            topic: topic.to_owned(),
            t,
            body: Map::new(),
        }
    }

    /// Adds a numeric field. Non-finite numbers are stored as `null` and make
    /// the message fail validation.
    pub fn num(mut self, key: &str, v: f64) -> Self {
        let value = serde_json::Number::from_f64(v).map_or(Value::Null, Value::Number);
        self.body.insert(key.to_owned(), value);
        self
    }

    pub fn field(mut self, key: &str, v: impl Into<Value>) -> Self {
        self.body.insert(key.to_owned(), v.into());
        self
    }

    pub fn get_f64(&self, key: &str) -> Option<f64> {
        self.body.get(key).and_then(Value::as_f64)
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.body.get(key).and_then(Value::as_str)
    }

    pub fn validate(&self) -> Result<(), BusError> {
        if self.topic.is_empty() || self.topic.contains(char::is_whitespace) {
            return Err(BusError::Malformed(format!("bad topic {:?}", self.topic)));
        }
        if !self.t.is_finite() {
            return Err(BusError::Malformed("non-finite t".into()));
        }
        for (k, v) in &self.body {
            if k == "topic" || k == "t" {
                return Err(BusError::Malformed(format!("reserved key {k}")));
            }
            check_value(k, v)?;
        }
        for key in topics::required_numbers(&self.topic) {
            if !self.body.get(*key).is_some_and(Value::is_number) {
                return Err(BusError::Malformed(format!("{} needs a numeric {key}", self.topic)));
            }
        }
        if self.topic == topics::OPERATOR_PARAMS && !self.body.values().all(Value::is_number) {
            return Err(BusError::Malformed("operator/params values must be numbers".into()));
        }
        Ok(())
    }

    /// Serialized form without the trailing newline.
    pub fn to_json(&self) -> Result<String, BusError> {
        self.validate()?;
        serde_json::to_string(self).map_err(|e| BusError::Malformed(e.to_string()))
    }

    pub fn from_json(line: &str) -> Result<Self, BusError> {
        let msg: BusMessage =
            serde_json::from_str(line.trim()).map_err(|e| BusError::Malformed(e.to_string()))?;
        msg.validate()?;
        Ok(msg)
    }
}

fn check_value(key: &str, v: &Value) -> Result<(), BusError> {
    match v {
        Value::Null => Err(BusError::Malformed(format!("{key} is null or non-finite"))),
        Value::Number(n) if !n.as_f64().is_some_and(f64::is_finite) => {
            Err(BusError::Malformed(format!("{key} is not finite")))
        }
        Value::Array(items) => items.iter().try_for_each(|i| check_value(key, i)),
        Value::Object(map) => map.iter().try_for_each(|(k, i)| check_value(k, i)),
        _ => Ok(()),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Literal(String),
    /// `*`: exactly one segment
    One,
    /// trailing `**`: any remainder, including nothing
    Rest,
}

/// Slash-separated topic pattern. `*` matches one segment, a trailing `**`
/// matches everything below.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopicPattern {
    raw: String,
    segments: Vec<Segment>,
}

impl FromStr for TopicPattern {
    type Err = BusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = |reason| BusError::Pattern {
            pattern: s.to_owned(),
            reason,
        };
        if s.is_empty() {
            return Err(err("empty pattern"));
        }
        if s.contains(char::is_whitespace) {
            return Err(err("whitespace in pattern"));
        }
        let parts: Vec<&str> = s.split('/').collect();
        let mut segments = Vec::with_capacity(parts.len());
        for (i, part) in parts.iter().enumerate() {
            let seg = match *part {
                "" => return Err(err("empty segment")),
                "*" => Segment::One,
                "**" if i + 1 == parts.len() => Segment::Rest,
                "**" => return Err(err("** must be the last segment")),
                p if p.contains('*') => return Err(err("wildcards must be whole segments")),
                p => Segment::Literal(p.to_owned()),
            };
            segments.push(seg);
        }
        Ok(Self {
            raw: s.to_owned(),
            segments,
        })
    }
}

impl fmt::Display for TopicPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.raw)
    }
}

impl TopicPattern {
    pub fn matches(&self, topic: &str) -> bool {
        let mut parts = topic.split('/');
        for seg in &self.segments {
            match seg {
                Segment::Rest => return true,
                Segment::One => {
                    if parts.next().is_none() {
                        return false;
                    }
                }
                Segment::Literal(lit) => {
                    if parts.next() != Some(lit.as_str()) {
                        return false;
                    }
                }
            }
        }
        parts.next().is_none()
    }
}

#[derive(Debug, Default)]
pub struct BusCounters {
    pub published: AtomicU64,
    pub delivered: AtomicU64,
    pub malformed: AtomicU64,
    pub slow_disconnects: AtomicU64,
}

/// Receiving end of a subscriber queue. One sink may carry several patterns
/// (one TCP connection with several `SUB` lines) and receives each message
/// at most once.
#[derive(Debug)]
pub struct Sink {
    id: u64,
    tx: Sender<Arc<str>>,
    overflowed: AtomicBool,
}

impl Sink {
    pub fn overflowed(&self) -> bool {
        self.overflowed.load(Ordering::Relaxed)
    }

    /// Queues a raw line (control replies share the subscriber queue).
    pub fn send_line(&self, line: &str) -> bool {
        self.tx.try_send(Arc::from(line)).is_ok()
    }
}

#[derive(Debug)]
struct Route {
    pattern: TopicPattern,
    sink: Arc<Sink>,
}

#[derive(Debug, Default)]
struct Inner {
    routes: Mutex<Vec<Route>>,
    next_id: AtomicU64,
    counters: BusCounters,
}

/// In-process hub. Cheap to clone.
#[derive(Debug, Clone, Default)]
pub struct Bus {
    inner: Arc<Inner>,
}

impl Bus {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn counters(&self) -> &BusCounters {
        &self.inner.counters
    }

    pub fn open_sink(&self, capacity: usize) -> (Arc<Sink>, Receiver<Arc<str>>) {
        let (tx, rx) = channel::bounded(capacity);
        let sink = Arc::new(Sink {
            id: self.inner.next_id.fetch_add(1, Ordering::Relaxed),
            tx,
            overflowed: AtomicBool::new(false),
        });
        (sink, rx)
    }

    pub fn add_route(&self, sink: &Arc<Sink>, pattern: TopicPattern) {
        self.inner.routes.lock().unwrap().push(Route {
            pattern,
            sink: sink.clone(),
        });
    }

    pub fn remove_sink(&self, sink: &Sink) {
        self.inner.routes.lock().unwrap().retain(|r| r.sink.id != sink.id);
    }

    pub fn subscribe(&self, pattern: &str) -> Result<Subscription, BusError> {
        let pattern: TopicPattern = pattern.parse()?;
        let (sink, rx) = self.open_sink(SUBSCRIBER_QUEUE);
        self.add_route(&sink, pattern);
        Ok(Subscription {
            bus: self.clone(),
            sink,
            rx,
        })
    }

    pub fn subscriber_count(&self) -> usize {
        let routes = self.inner.routes.lock().unwrap();
        let mut ids: Vec<u64> = routes.iter().map(|r| r.sink.id).collect();
        ids.dedup();
        ids.len()
    }

    /// Delivers `msg` to every matching subscriber and returns how many got
    /// it. A subscriber whose queue is full is dropped from the bus.
    pub fn publish(&self, msg: &BusMessage) -> Result<usize, BusError> {
        let line: Arc<str> = match msg.to_json() {
            Ok(l) => Arc::from(l),
            Err(e) => {
                self.inner.counters.malformed.fetch_add(1, Ordering::Relaxed);
                return Err(e);
            }
        };
        self.inner.counters.published.fetch_add(1, Ordering::Relaxed);
        let mut routes = self.inner.routes.lock().unwrap();
        let mut served: Vec<u64> = Vec::new();
        let mut stalled: Vec<u64> = Vec::new();
        for route in routes.iter() {
            let id = route.sink.id;
            if served.contains(&id) || stalled.contains(&id) || !route.pattern.matches(&msg.topic) {
                continue;
            }
            match route.sink.tx.try_send(line.clone()) {
                Ok(()) => served.push(id),
                Err(TrySendError::Full(_)) => {
                    route.sink.overflowed.store(true, Ordering::Relaxed);
                    stalled.push(id);
                }
                Err(TrySendError::Disconnected(_)) => stalled.push(id),
            }
        }
        if !stalled.is_empty() {
            routes.retain(|r| !stalled.contains(&r.sink.id));
            self.inner
                .counters
                .slow_disconnects
                .fetch_add(stalled.len() as u64, Ordering::Relaxed);
        }
        self.inner
            .counters
            .delivered
            .fetch_add(served.len() as u64, Ordering::Relaxed);
        Ok(served.len())
    }
}

/// In-process subscriber. Unsubscribes on drop.
#[derive(Debug)]
pub struct Subscription {
    bus: Bus,
    sink: Arc<Sink>,
    rx: Receiver<Arc<str>>,
}

impl Subscription {
    pub fn overflowed(&self) -> bool {
        self.sink.overflowed()
    }

    pub fn receiver(&self) -> &Receiver<Arc<str>> {
        &self.rx
    }

    pub fn try_recv(&self) -> Option<BusMessage> {
        self.rx.try_recv().ok().and_then(|l| BusMessage::from_json(&l).ok())
    }

    pub fn recv_timeout(&self, timeout: Duration) -> Result<BusMessage, RecvTimeoutError> {
        loop {
            let line = self.rx.recv_timeout(timeout)?;
            if let Ok(msg) = BusMessage::from_json(&line) {
                return Ok(msg);
            }
        }
    }

    pub fn drain(&self) -> Vec<BusMessage> {
        std::iter::from_fn(|| self.rx.try_recv().ok())
            .filter_map(|l| BusMessage::from_json(&l).ok())
            .collect()
    }
}

impl Drop for Subscription {
    fn drop(&mut self) {
        self.bus.remove_sink(&self.sink);
    }
}
