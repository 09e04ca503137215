//! Deterministic single-threaded runs of a [`Scenario`].
//!
//! Every control tick, in order:
//! 1. host→device bytes queued on the previous tick reach the device
//! 2. the control loop ticks against its mailboxes
//! 3. on telemetry ticks the sample is framed, crosses the link and is
//!    handled by the bridge
//! 4. on robot ticks the robot steps towards the latest `p_ref` and its
//!    state goes to the bridge, which answers with feedback
//! 5. one trace row is emitted
//!
//! Time is the tick count times `dt`, so a run is a pure function of the
//! scenario. With `realtime` the same schedule is paced against the wall
//! clock.

use crate::bridge::{BridgeCore, BridgeOutput};
use crate::bus::{topics, BusMessage};
use crate::clock::{Clock, RealClock};
use crate::firmware::{ControlLoop, DeviceLink, FirmwareError, LoopIo, TelemetrySender};
use crate::protocol::Diagnostics;
use crate::robot::{step_robot, RobotState};
use crate::scenario::Scenario;
use crate::trace::TraceRow;
use crate::transport::{SimLink, TransportSpec};
use std::fmt;
use std::io;
use std::time::Duration;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Firmware(#[from] FirmwareError),
    #[error(transparent)]
    Bridge(#[from] crate::bridge::BridgeError),
    #[error("transport: {0}")]
    Transport(#[from] io::Error),
}

#[derive(Debug, Clone, Default)]
pub struct SimOptions {
    /// Overrides the scenario's transport.
    pub transport: Option<TransportSpec>,
    pub realtime: bool,
    /// Keep the raw device→host byte stream.
    pub capture: bool,
    /// Keep every bus message published during the run.
    pub keep_bus: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SimSummary {
    pub ticks: u64,
    pub duration: f64,
    pub final_theta: f64,
    /// Mean θ over the last tenth of the run, rad.
    pub steady_theta: f64,
    pub max_abs_tau_fb_total: f64,
    pub max_abs_tau_fb_ext: f64,
    /// Ticks whose summed feedback hit the ceiling.
    pub saturated_ticks: u64,
    pub final_p: f64,
    pub final_f_contact: f64,
    pub overruns: u64,
    pub telemetry_frames: u64,
    pub feedback_frames: u64,
    pub device_diag: Diagnostics,
    pub host_diag: Diagnostics,
}

impl SimSummary {
    pub fn resyncs(&self) -> u64 {
        self.device_diag.resyncs + self.host_diag.resyncs
    }
}

impl fmt::Display for SimSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "ticks               {}", self.ticks)?;
        writeln!(f, "duration            {} s", self.duration)?;
        writeln!(f, "steady-state theta  {:.6} rad", self.steady_theta)?;
        writeln!(f, "final theta         {:.6} rad", self.final_theta)?;
        writeln!(f, "max |tau_fb_total|  {} N·m", self.max_abs_tau_fb_total)?;
        writeln!(f, "max |tau_fb_ext|    {} N·m", self.max_abs_tau_fb_ext)?;
        writeln!(f, "saturated ticks     {}", self.saturated_ticks)?;
        writeln!(f, "robot p / f         {:.6} m / {:.4} N", self.final_p, self.final_f_contact)?;
        writeln!(f, "overruns            {}", self.overruns)?;
        writeln!(
            f,
            "frames              {} telemetry, {} feedback",
            self.telemetry_frames, self.feedback_frames
        )?;
        write!(
            f,
            "resyncs             {} (crc failures {})",
            self.resyncs(),
            self.device_diag.crc_failures + self.host_diag.crc_failures
        )
    }
}

#[derive(Debug, Clone, Default)]
pub struct SimOutput {
    pub summary: SimSummary,
    pub capture: Vec<u8>,
    pub bus: Vec<BusMessage>,
}

pub struct Simulation {
    scenario: Scenario,
    opts: SimOptions,
    ctl: ControlLoop,
    io: LoopIo,
    device: DeviceLink,
    sender: TelemetrySender,
    bridge: BridgeCore,
    link: SimLink,
    robot: RobotState,
    p_ref: f64,
    to_device: Vec<u8>,
    out: SimOutput,
}

impl Simulation {
    /// `scenario` must already be validated.
    pub fn new(scenario: &Scenario, opts: SimOptions) -> Result<Self, SimError> {
        let transport = opts.transport.clone().unwrap_or_else(|| scenario.transport());
        let link = SimLink::open(&transport)?;
        Ok(Self {
            ctl: ControlLoop::new(scenario.loop_config())?,
            io: LoopIo::with_telemetry_every(4, scenario.telemetry_decimation()),
            device: DeviceLink::new(),
            sender: TelemetrySender::new(),
            bridge: BridgeCore::new(scenario.bridge.clone(), scenario.device_config())?,
            link,
            robot: RobotState::default(),
            p_ref: 0.0,
            to_device: Vec::new(),
            out: SimOutput::default(),
            scenario: scenario.clone(),
            opts,
        })
    }

    /// Runs the whole scenario, handing each trace row to `on_row`.
    pub fn run(mut self, mut on_row: impl FnMut(&TraceRow)) -> Result<SimOutput, SimError> {
        let ticks = self.scenario.ticks();
        let dt = self.scenario.admittance.dt;
        let tel_every = self.scenario.telemetry_decimation();
        let robot_every = self.scenario.robot_decimation();
        let robot_dt = robot_every as f64 * dt;
        let tau_max = self.scenario.admittance.tau_max;
        let clock = self.opts.realtime.then(RealClock::new);
        let steady_from = ticks - ticks / 10;
        let mut theta_sum = 0.0;
        let mut diag_next = 1.0;
        let summary = &mut self.out.summary;

        for k in 0..ticks {
            if let Some(c) = &clock {
                c.wait_until(Duration::from_secs_f64(k as f64 * dt));
            }
            if !self.to_device.is_empty() {
                let bytes = self.link.host_to_device(&std::mem::take(&mut self.to_device))?;
                self.device.on_bytes(&bytes, &self.io);
            }

            let report = self.ctl.service(&self.io);
            let now = report.state.t;

            if (k + 1) % tel_every == 0 {
                let bytes = self.sender.poll(&self.io);
                if !bytes.is_empty() {
                    if self.opts.capture {
                        self.out.capture.extend_from_slice(&bytes);
                    }
                    let received = self.link.device_to_host(&bytes)?;
                    let out = self.bridge.on_device_bytes(&received, now);
                    Self::route(out, &mut self.p_ref, &mut self.to_device, &mut self.out.bus, self.opts.keep_bus);
                }
            }
            if (k + 1) % robot_every == 0 {
                self.robot = step_robot(self.robot, self.p_ref, &self.scenario.world, robot_dt);
                let msg = BusMessage::new(topics::ROBOT_STATE, now)
                    .num("p", self.robot.p)
                    .num("v", self.robot.v)
                    .num("f_contact", self.robot.f_contact);
                let out = self.bridge.on_bus_message(&msg, now)?;
                if self.opts.keep_bus {
                    self.out.bus.push(msg);
                }
                Self::route(out, &mut self.p_ref, &mut self.to_device, &mut self.out.bus, self.opts.keep_bus);
            }
            if now >= diag_next {
                diag_next += 1.0;
                let diag = self.bridge.diag_message(now);
                if self.opts.keep_bus {
                    self.out.bus.push(diag);
                }
            }

            let reference = self.bridge.reference();
            let row = TraceRow {
                t: report.state.t,
                theta: report.state.theta,
                omega: report.state.omega,
                tau_operator: report.state.tau_operator,
                tau_fb_rec: report.tau_fb_rec,
                tau_fb_ext: report.tau_fb_ext,
                tau_fb_total: report.tau_fb_total,
                v_ref: reference.v_ref,
                p_ref: reference.p_ref,
                p: self.robot.p,
                f_contact: self.robot.f_contact,
            };
            on_row(&row);

            summary.max_abs_tau_fb_total = summary.max_abs_tau_fb_total.max(row.tau_fb_total.abs());
            summary.max_abs_tau_fb_ext = summary.max_abs_tau_fb_ext.max(row.tau_fb_ext.abs());
            if row.tau_fb_total.abs() >= tau_max {
                summary.saturated_ticks += 1;
            }
            if k >= steady_from {
                theta_sum += row.theta;
            }
            summary.final_theta = row.theta;
            if let Some(c) = &clock {
                if c.now() > Duration::from_secs_f64((k + 1) as f64 * dt) {
                    summary.overruns += 1;
                }
            }
        }

        summary.ticks = ticks;
        summary.duration = ticks as f64 * dt;
        summary.steady_theta = theta_sum / (ticks - steady_from).max(1) as f64;
        summary.final_p = self.robot.p;
        summary.final_f_contact = self.robot.f_contact;
        summary.telemetry_frames = self.sender.frames();
        summary.feedback_frames = self.bridge.counters().feedback_frames;
        summary.device_diag = self.device.diagnostics();
        summary.host_diag = self.bridge.parser_diagnostics();
        Ok(self.out)
    }

    fn route(
        out: BridgeOutput,
        p_ref: &mut f64,
        to_device: &mut Vec<u8>,
        bus: &mut Vec<BusMessage>,
        keep: bool,
    ) {
        for msg in out.publish {
            if msg.topic == topics::ROBOT_REF {
                if let Some(p) = msg.get_f64("p_ref") {
                    *p_ref = p;
                }
            }
            if keep {
                bus.push(msg);
            }
        }
        to_device.extend(out.to_device);
    }
}

/// Runs `scenario` to completion, collecting the trace in memory.
pub fn run_scenario(scenario: &Scenario, opts: SimOptions) -> Result<(Vec<TraceRow>, SimOutput), SimError> {
    let mut rows = Vec::with_capacity(scenario.ticks() as usize);
    let out = Simulation::new(scenario, opts)?.run(|r| rows.push(*r))?;
    Ok((rows, out))
}

/// Feeds a captured device→host stream through a fresh bridge, as if it
/// arrived in one piece, and returns what the bridge published.
pub fn replay_capture(scenario: &Scenario, capture: &[u8]) -> Result<(Vec<BusMessage>, Diagnostics), SimError> {
    let mut bridge = BridgeCore::new(scenario.bridge.clone(), scenario.device_config())?;
    let mut published = Vec::new();
    for chunk in capture.chunks(256) {
        published.extend(bridge.on_device_bytes(chunk, 0.0).publish);
    }
    Ok((published, bridge.parser_diagnostics()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::firmware::OperatorInput;

    fn scenario(push: f64, duration: f64) -> Scenario {
        Scenario {
            duration,
            operator: OperatorInput::step(push, 0.0),
            ..Default::default()
        }
    }

    #[test]
    fn rows_per_tick_and_time_increases() {
        let s = scenario(0.1, 0.5);
        let (rows, out) = run_scenario(&s, SimOptions::default()).unwrap();
        assert_eq!(rows.len(), 500);
        assert!(rows.windows(2).all(|w| w[1].t > w[0].t));
        assert_eq!(out.summary.telemetry_frames, 250);
        assert!(out.summary.device_diag.is_clean() && out.summary.host_diag.is_clean());
    }

    #[test]
    fn references_follow_deflection() {
        let s = scenario(0.2, 2.0);
        let (rows, _) = run_scenario(&s, SimOptions::default()).unwrap();
        let last = rows.last().unwrap();
        assert!(last.theta > 0.15);
        assert!(last.v_ref > 0.0 && last.p_ref > 0.0);
        assert!(last.p > 0.0 && last.p < last.p_ref);
    }

    #[test]
    fn feedback_frames_reach_the_device() {
        let mut s = scenario(0.3, 3.0);
        s.world.wall_position = 0.05;
        let (rows, out) = run_scenario(&s, SimOptions::default()).unwrap();
        assert!(out.summary.feedback_frames > 0);
        assert!(rows.iter().any(|r| r.tau_fb_ext < 0.0));
    }

    #[test]
    fn capture_and_bus_log() {
        let s = scenario(0.2, 0.2);
        let opts = SimOptions {
            capture: true,
            keep_bus: true,
            ..Default::default()
        };
        let (_, out) = run_scenario(&s, opts).unwrap();
        let (replayed, diag) = replay_capture(&s, &out.capture).unwrap();
        assert!(diag.is_clean());
        let live_refs: Vec<_> = out.bus.iter().filter(|m| m.topic == topics::ROBOT_REF).collect();
        let replay_refs: Vec<_> = replayed.iter().filter(|m| m.topic == topics::ROBOT_REF).collect();
        assert_eq!(live_refs, replay_refs);
    }
}
