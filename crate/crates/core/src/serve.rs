//! The live stack on the real-time clock: firmware threads, device link,
//! bridge with its bus/WebSocket/console servers, the robot, and an optional
//! trace recorder.

use crate::bridge::runtime::RunError;
use crate::bridge::{run_bridge, BridgeHandle, BridgeLinks};
use crate::bus::{topics, Bus, BusMessage};
use crate::clock::{Clock, RealClock};
use crate::firmware::{
    run_control_loop, run_telemetry_sender, ControlLoop, FirmwareError, LoopIo, StopAt, TickReport,
};
use crate::robot::{step_robot, RobotState};
use crate::scenario::Scenario;
use crate::trace::{now_unix, TraceRow, TraceWriter};
use crate::transport::open_device_link;
use crossbeam::channel::{self, Receiver, TrySendError};
use log::{info, warn};
use std::fs::File;
use std::io::{self, BufWriter};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};
use thiserror::Error;

const TRACE_QUEUE: usize = 1 << 16;

#[derive(Debug, Error)]
pub enum ServeError {
    #[error(transparent)]
    Firmware(#[from] FirmwareError),
    #[error(transparent)]
    Bridge(#[from] RunError),
    #[error("device link: {0}")]
    Link(io::Error),
    #[error("cannot create trace {path}: {source}")]
    Trace { path: String, source: io::Error },
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl ServeError {
    /// Failures to claim a port or device link, as opposed to bad input.
    pub fn is_bind_failure(&self) -> bool {
        matches!(self, ServeError::Bridge(RunError::Bind { .. }) | ServeError::Link(_))
    }
}

#[derive(Debug, Clone, Default)]
pub struct ServeOptions {
    pub record: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ServeSummary {
    pub ticks: u64,
    pub overruns: u64,
    pub telemetry_frames: u64,
    pub trace_rows: u64,
    pub trace_dropped: u64,
}

pub struct ServeHandle {
    stop: Arc<AtomicBool>,
    workers: Vec<JoinHandle<()>>,
    loop_thread: Option<JoinHandle<u64>>,
    telemetry_thread: Option<JoinHandle<u64>>,
    trace_thread: Option<JoinHandle<io::Result<u64>>>,
    bridge: Option<BridgeHandle>,
    io: Arc<LoopIo>,
    trace_dropped: Arc<AtomicU64>,
    pub bus: Bus,
    pub bus_addr: SocketAddr,
    pub ws_addr: SocketAddr,
    pub http_addr: Option<SocketAddr>,
    pub device_endpoint: String,
}

/// Starts everything. Ports are bound before any loop starts, so a busy
/// port fails fast with [`ServeError::is_bind_failure`].
pub fn start(scenario: &Scenario, opts: ServeOptions) -> Result<ServeHandle, ServeError> {
    let stop = Arc::new(AtomicBool::new(false));
    let clock: Arc<dyn Clock> = Arc::new(RealClock::new());
    let io = Arc::new(LoopIo::with_telemetry_every(64, scenario.telemetry_decimation()));
    let mut ctl = ControlLoop::new(scenario.loop_config())?;
    let bus = Bus::new();

    let link = open_device_link(&scenario.transport(), io.clone(), stop.clone()).map_err(ServeError::Link)?;
    let device_endpoint = link.endpoint.clone();
    let bridge = match run_bridge(
        scenario.bridge.clone(),
        scenario.device_config(),
        BridgeLinks {
            connector: link.connector,
            device_io: Some(io.clone()),
        },
        bus.clone(),
        clock.clone(),
    ) {
        Ok(b) => b,
        Err(e) => {
            stop.store(true, Ordering::Relaxed);
            for t in link.threads {
                let _ = t.join();
            }
            return Err(e.into());
        }
    };

    let trace_file = match &opts.record {
        Some(path) => Some(File::create(path).map_err(|source| ServeError::Trace {
            path: path.display().to_string(),
            source,
        })?),
        None => None,
    };

    let (trace_tx, trace_rx) = channel::bounded::<TickReport>(TRACE_QUEUE);
    let trace_dropped = Arc::new(AtomicU64::new(0));
    let recording = trace_file.is_some();

    let loop_thread = {
        let (io, clock, stop, dropped) = (io.clone(), clock.clone(), stop.clone(), trace_dropped.clone());
        thread::Builder::new().name("control-loop".into()).spawn(move || {
            if let Err(e) = raise_priority() {
                info!("control loop keeps normal scheduling: {e}");
            }
            let summary = run_control_loop(&mut ctl, &io, &*clock, StopAt::Flag(&stop), |r| {
                if recording {
                    if let Err(TrySendError::Full(_)) = trace_tx.try_send(*r) {
                        dropped.fetch_add(1, Ordering::Relaxed);
                    }
                }
            });
            summary.ticks
        })?
    };
    let telemetry_thread = {
        let (io, clock, stop, sink) = (io.clone(), clock.clone(), stop.clone(), link.sink.clone());
        let rate = scenario.firmware.telemetry_rate;
        thread::Builder::new().name("telemetry".into()).spawn(move || {
            run_telemetry_sender(&io, &sink, rate, &*clock, &stop).frames
        })?
    };
    let robot_thread = {
        let (bus, clock, stop) = (bus.clone(), clock.clone(), stop.clone());
        let world = scenario.world;
        thread::Builder::new()
            .name("robot".into())
            .spawn(move || robot_loop(&bus, world, &*clock, &stop))?
    };
    let trace_thread = match trace_file {
        Some(file) => {
            let (bus, scenario) = (bus.clone(), scenario.clone());
            Some(thread::Builder::new().name("trace".into()).spawn(move || {
                write_trace(file, &scenario, &bus, trace_rx)
            })?)
        }
        None => None,
    };

    let mut workers = link.threads;
    workers.push(robot_thread);
    info!(
        "serving: device {device_endpoint}, bus {}, websocket {}",
        bridge.bus_addr, bridge.ws_addr
    );
    Ok(ServeHandle {
        stop,
        workers,
        loop_thread: Some(loop_thread),
        telemetry_thread: Some(telemetry_thread),
        trace_thread,
        bus_addr: bridge.bus_addr,
        ws_addr: bridge.ws_addr,
        http_addr: bridge.http_addr,
        bridge: Some(bridge),
        io,
        trace_dropped,
        bus,
        device_endpoint,
    })
}

impl ServeHandle {
    pub fn stop_flag(&self) -> Arc<AtomicBool> {
        self.stop.clone()
    }

    pub fn io(&self) -> &LoopIo {
        &self.io
    }

    /// Blocks until the stop flag is raised or `duration` has passed.
    pub fn wait(&self, duration: Option<Duration>) {
        let start = Instant::now();
        while !self.stop.load(Ordering::Relaxed) {
            if duration.is_some_and(|d| start.elapsed() >= d) {
                break;
            }
            thread::sleep(Duration::from_millis(10));
        }
    }

    /// Stops all threads, flushes the trace and reports.
    pub fn shutdown(mut self) -> io::Result<ServeSummary> {
        self.stop.store(true, Ordering::Relaxed);
        let ticks = self.loop_thread.take().map_or(0, |t| t.join().unwrap_or(0));
        let telemetry_frames = self.telemetry_thread.take().map_or(0, |t| t.join().unwrap_or(0));
        let trace_rows = match self.trace_thread.take() {
            Some(t) => t.join().unwrap_or_else(|_| Err(io::Error::other("trace thread panicked")))?,
            None => 0,
        };
        // bridge first, so it does not report the device side closing as a lost link
        if let Some(b) = self.bridge.take() {
            b.shutdown();
        }
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
        Ok(ServeSummary {
            ticks,
            overruns: self.io.counters.overruns.load(Ordering::Relaxed),
            telemetry_frames,
            trace_rows,
            trace_dropped: self.trace_dropped.load(Ordering::Relaxed),
        })
    }
}

impl Drop for ServeHandle {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
    }
}

/// Best effort: puts the calling thread in the real-time FIFO class so the
/// control loop preempts the network threads. Needs CAP_SYS_NICE or an
/// rtprio limit.
fn raise_priority() -> io::Result<()> {
    let param = libc::sched_param { sched_priority: 10 };
    // SAFETY: plain syscall wrapper on the current thread with a valid param.
    let rc = unsafe { libc::pthread_setschedparam(libc::pthread_self(), libc::SCHED_FIFO, &param) };
    if rc == 0 {
        Ok(())
    } else {
        Err(io::Error::from_raw_os_error(rc))
    }
}

/// The robot as a bus participant: follows `robot/ref`, publishes
/// `robot/state` at its own rate.
fn robot_loop(bus: &Bus, world: crate::robot::WorldConfig, clock: &dyn Clock, stop: &AtomicBool) {
    let refs = bus.subscribe(topics::ROBOT_REF).expect("valid pattern");
    let dt = 1.0 / world.rate;
    let period = Duration::from_secs_f64(dt);
    let mut state = RobotState::default();
    let mut p_ref = 0.0;
    let mut deadline = clock.now();
    while !stop.load(Ordering::Relaxed) {
        deadline += period;
        clock.sleep_until(deadline);
        for msg in refs.drain() {
            if let Some(p) = msg.get_f64("p_ref") {
                p_ref = p;
            }
        }
        state = step_robot(state, p_ref, &world, dt);
        let msg = BusMessage::new(topics::ROBOT_STATE, clock.now_secs())
            .num("p", state.p)
            .num("v", state.v)
            .num("f_contact", state.f_contact);
        if let Err(e) = bus.publish(&msg) {
            warn!("robot state not published: {e}");
        }
    }
}

fn write_trace(file: File, scenario: &Scenario, bus: &Bus, rx: Receiver<TickReport>) -> io::Result<u64> {
    let refs = bus.subscribe(topics::ROBOT_REF).expect("valid pattern");
    let robot = bus.subscribe(topics::ROBOT_STATE).expect("valid pattern");
    let mut w = TraceWriter::new(BufWriter::new(file), scenario, Some(now_unix()))?;
    let (mut v_ref, mut p_ref, mut p, mut f) = (0.0, 0.0, 0.0, 0.0);
    let mut rows = 0;
    // ends when the control loop drops its sender
    for r in rx.iter() {
        for m in refs.drain() {
            v_ref = m.get_f64("v_ref").unwrap_or(v_ref);
            p_ref = m.get_f64("p_ref").unwrap_or(p_ref);
        }
        for m in robot.drain() {
            p = m.get_f64("p").unwrap_or(p);
            f = m.get_f64("f_contact").unwrap_or(f);
        }
        let row = TraceRow {
            t: r.state.t,
            theta: r.state.theta,
            omega: r.state.omega,
            tau_operator: r.state.tau_operator,
            tau_fb_rec: r.tau_fb_rec,
            tau_fb_ext: r.tau_fb_ext,
            tau_fb_total: r.tau_fb_total,
            v_ref,
            p_ref,
            p,
            f_contact: f,
        };
        w.write_row(&row).map_err(|e| io::Error::other(e.to_string()))?;
        rows += 1;
    }
    w.flush()?;
    Ok(rows)
}
