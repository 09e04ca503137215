//! Threads around [`BridgeCore`] for the live stack.
//!
//! - link thread: (re)connects the device transport with backoff and forwards
//!   received bytes
//! - core thread: owns the [`BridgeCore`], the device writer and the diag timer
//! - bus, WebSocket and console servers, each with their own threads
//!
//! Console input arrives on the bus like everything else: the core
//! subscribes to `robot/state` and `operator/*`.

use super::console::ConsoleServer;
use super::ws::WsServer;
use super::{BridgeConfig, BridgeCore, BridgeError, BridgeOutput};
use crate::bus::{topics, Bus, BusMessage, BusServer, Subscription};
use crate::clock::Clock;
use crate::firmware::LoopIo;
use crate::protocol::DeviceConfig;
use crate::transport::{BoxWrite, Connector};
use crossbeam::channel::{self, Receiver, Sender};
use log::{debug, info, warn};
use std::io::{self, ErrorKind, Read, Write};
use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;
use thiserror::Error;

/// Telemetry silence after which the link counts as lost, s.
pub const LINK_TIMEOUT: f64 = 0.5;
pub const DIAG_PERIOD: f64 = 1.0;
const BACKOFF_MIN: Duration = Duration::from_millis(50);
const BACKOFF_MAX: Duration = Duration::from_secs(1);
const EVENT_QUEUE: usize = 4096;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] BridgeError),
    #[error("cannot bind {what} on {addr}: {source}")]
    Bind {
        what: &'static str,
        addr: String,
        source: io::Error,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// How the bridge reaches the device.
pub struct BridgeLinks {
    pub connector: Box<dyn Connector>,
    /// Mailboxes of an in-process device: operator torque from the console
    /// is posted here and loop counters are reported in `bridge/diag`.
    pub device_io: Option<Arc<LoopIo>>,
}

pub struct BridgeHandle {
    stop: Arc<AtomicBool>,
    threads: Vec<JoinHandle<()>>,
    bus_server: Option<BusServer>,
    ws_server: Option<WsServer>,
    console: Option<ConsoleServer>,
    pub bus_addr: SocketAddr,
    pub ws_addr: SocketAddr,
    pub http_addr: Option<SocketAddr>,
}

impl BridgeHandle {
    pub fn shutdown(mut self) {
        self.stop_all();
    }

    fn stop_all(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
        if let Some(ws) = self.ws_server.take() {
            ws.shutdown();
        }
        if let Some(c) = self.console.take() {
            c.shutdown();
        }
        if let Some(b) = self.bus_server.take() {
            b.shutdown();
        }
    }
}

impl Drop for BridgeHandle {
    fn drop(&mut self) {
        self.stop_all();
    }
}

enum LinkEvent {
    Up(BoxWrite),
    Bytes(Vec<u8>),
    Down(String),
}

/// Binds the servers and starts the bridge. Bind failures are returned
/// before any thread is left running.
pub fn run_bridge(
    cfg: BridgeConfig,
    device: DeviceConfig,
    links: BridgeLinks,
    bus: Bus,
    clock: Arc<dyn Clock>,
) -> Result<BridgeHandle, RunError> {
    let core = BridgeCore::new(cfg.clone(), device)?;
    let bind_err = |what, addr: &str| {
        let addr = addr.to_owned();
        move |source| RunError::Bind { what, addr, source }
    };
    let bus_server = BusServer::bind(cfg.bus_listen.as_str(), bus.clone())
        .map_err(bind_err("bus", &cfg.bus_listen))?;
    let ws_server =
        WsServer::bind(cfg.ws_listen.as_str(), bus.clone()).map_err(bind_err("websocket", &cfg.ws_listen))?;
    let console = match &cfg.http_listen {
        Some(addr) => Some(
            ConsoleServer::bind(addr, cfg.console_dir.clone(), ws_server.local_addr())
                .map_err(bind_err("console", addr))?,
        ),
        None => None,
    };

    let stop = Arc::new(AtomicBool::new(false));
    let (ev_tx, ev_rx) = channel::bounded(EVENT_QUEUE);
    let inbound = bus.subscribe(topics::ROBOT_STATE).expect("valid pattern");
    let operator = bus.subscribe("operator/*").expect("valid pattern");

    let link = {
        let stop = stop.clone();
        let connector = links.connector;
        thread::Builder::new()
            .name("bridge-link".into())
            .spawn(move || link_loop(connector, ev_tx, &stop))?
    };
    let core_thread = {
        let stop = stop.clone();
        let device_io = links.device_io;
        thread::Builder::new().name("bridge-core".into()).spawn(move || {
            let mut w = CoreWorker {
                core,
                bus,
                clock,
                device_io,
                writer: None,
                last_telemetry: None,
            };
            w.run(ev_rx, inbound, operator, &stop)
        })?
    };
    info!(
        "bridge up: bus {}, websocket {}",
        bus_server.local_addr(),
        ws_server.local_addr()
    );
    Ok(BridgeHandle {
        stop,
        threads: vec![link, core_thread],
        bus_addr: bus_server.local_addr(),
        ws_addr: ws_server.local_addr(),
        http_addr: console.as_ref().map(|c| c.local_addr()),
        bus_server: Some(bus_server),
        ws_server: Some(ws_server),
        console,
    })
}

fn sleep_unless_stopped(d: Duration, stop: &AtomicBool) {
    let step = Duration::from_millis(10);
    let mut left = d;
    while !left.is_zero() && !stop.load(Ordering::Relaxed) {
        let s = left.min(step);
        thread::sleep(s);
        left -= s;
    }
}

fn link_loop(mut connector: Box<dyn Connector>, tx: Sender<LinkEvent>, stop: &AtomicBool) {
    let mut backoff = BACKOFF_MIN;
    let mut buf = vec![0u8; 4096];
    while !stop.load(Ordering::Relaxed) {
        let (mut reader, writer) = match connector.connect() {
            Ok(pair) => pair,
            Err(e) => {
                debug!("device connect failed: {e}; retrying in {backoff:?}");
                sleep_unless_stopped(backoff, stop);
                backoff = (backoff * 2).min(BACKOFF_MAX);
                continue;
            }
        };
        backoff = BACKOFF_MIN;
        if tx.send(LinkEvent::Up(writer)).is_err() {
            return;
        }
        let reason = loop {
            if stop.load(Ordering::Relaxed) {
                return;
            }
            match reader.read(&mut buf) {
                Ok(0) => break "device closed the link".to_owned(),
                Ok(n) => {
                    if tx.send(LinkEvent::Bytes(buf[..n].to_vec())).is_err() {
                        return;
                    }
                }
                Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut | ErrorKind::Interrupted) => {}
                Err(e) => break e.to_string(),
            }
        };
        warn!("device link lost: {reason}");
        if tx.send(LinkEvent::Down(reason)).is_err() {
            return;
        }
    }
}

struct CoreWorker {
    core: BridgeCore,
    bus: Bus,
    clock: Arc<dyn Clock>,
    device_io: Option<Arc<LoopIo>>,
    writer: Option<BoxWrite>,
    last_telemetry: Option<f64>,
}

impl CoreWorker {
    fn run(
        &mut self,
        events: Receiver<LinkEvent>,
        inbound: Subscription,
        operator: Subscription,
        stop: &AtomicBool,
    ) {
        let mut next_diag = self.clock.now_secs() + DIAG_PERIOD;
        while !stop.load(Ordering::Relaxed) {
            channel::select! {
                recv(events) -> ev => match ev {
                    Ok(ev) => self.on_link_event(ev),
                    Err(_) => return,
                },
                recv(inbound.receiver()) -> line => {
                    if let Ok(line) = line {
                        self.on_bus_line(&line);
                    }
                },
                recv(operator.receiver()) -> line => {
                    if let Ok(line) = line {
                        self.on_bus_line(&line);
                    }
                },
                default(Duration::from_millis(20)) => {},
            }
            let now = self.clock.now_secs();
            if let Some(last) = self.last_telemetry {
                if now - last > LINK_TIMEOUT && self.core.link_up() {
                    let out = self.core.on_link_lost("telemetry timeout");
                    self.emit(out);
                }
            }
            if now >= next_diag {
                next_diag += DIAG_PERIOD;
                let msg = self.diag(now);
                let _ = self.bus.publish(&msg);
            }
        }
    }

    fn on_link_event(&mut self, ev: LinkEvent) {
        let now = self.clock.now_secs();
        match ev {
            LinkEvent::Up(w) => {
                info!("device link up");
                self.writer = Some(w);
            }
            LinkEvent::Bytes(bytes) => {
                let before = self.core.counters().telemetry_frames;
                let out = self.core.on_device_bytes(&bytes, now);
                if self.core.counters().telemetry_frames > before {
                    self.last_telemetry = Some(now);
                }
                self.emit(out);
            }
            LinkEvent::Down(reason) => {
                self.writer = None;
                let out = self.core.on_link_lost(&reason);
                self.emit(out);
            }
        }
    }

    fn on_bus_line(&mut self, line: &str) {
        let Ok(msg) = BusMessage::from_json(line) else {
            return;
        };
        if msg.topic == topics::OPERATOR_TORQUE {
            match (msg.get_f64("tau"), &self.device_io) {
                (Some(tau), Some(io)) if tau.is_finite() => io.operator.post(tau),
                (Some(_), _) => {}
                (None, _) => debug!("operator/torque without tau dropped"),
            }
            return;
        }
        match self.core.on_bus_message(&msg, self.clock.now_secs()) {
            Ok(out) => self.emit(out),
            Err(e) => debug!("dropped bus message: {e}"),
        }
    }

    fn emit(&mut self, out: BridgeOutput) {
        for msg in &out.publish {
            let _ = self.bus.publish(msg);
        }
        if out.to_device.is_empty() {
            return;
        }
        if let Some(w) = &mut self.writer {
            if let Err(e) = w.write_all(&out.to_device).and_then(|_| w.flush()) {
                warn!("device write failed: {e}");
                self.writer = None;
            }
        }
    }

    fn diag(&mut self, now: f64) -> BusMessage {
        let mut msg = self.core.diag_message(now);
        let bc = self.bus.counters();
        msg = msg
            .field("bus_malformed", bc.malformed.load(Ordering::Relaxed))
            .field("bus_slow_disconnects", bc.slow_disconnects.load(Ordering::Relaxed));
        if let Some(io) = &self.device_io {
            let c = &io.counters;
            msg = msg
                .field("loop_ticks", c.ticks.load(Ordering::Relaxed))
                .field("loop_overruns", c.overruns.load(Ordering::Relaxed))
                .field("telemetry_dropped", c.telemetry_dropped.load(Ordering::Relaxed));
        }
        msg
    }
}
