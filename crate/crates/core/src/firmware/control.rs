//! The feedback thread: one admittance step per clock tick.

use super::hold::StalenessHold;
use super::operator::OperatorInput;
use super::servo::ServoModel;
use super::{FirmwareError, LoopCounters, LoopIo};
use crate::clock::Clock;
use crate::haptics::{
    recentering_torque, step_dynamics, total_feedback, AdmittanceParams, JoystickState,
    StiffnessProfile,
};
use crate::protocol::{AckStatus, DeviceConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::Duration;

/// Default control-loop rate, Hz.
pub const DEFAULT_LOOP_RATE_HZ: f64 = 1000.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoopConfig {
    pub params: AdmittanceParams,
    pub profile: StiffnessProfile,
    pub servo: ServoModel,
    pub operator: OperatorInput,
    pub initial: JoystickState,
    pub seed: u64,
}

impl LoopConfig {
    pub fn validate(&self) -> Result<(), FirmwareError> {
        self.params.validate()?;
        self.profile.validate()?;
        self.servo.validate(&self.profile)?;
        self.operator.validate()?;
        if !(self.initial.theta.is_finite() && self.initial.omega.is_finite()) {
            return Err(FirmwareError::Invalid {
                name: "initial",
                reason: "initial state must be finite".into(),
            });
        }
        Ok(())
    }

    pub fn device_config(&self) -> DeviceConfig {
        DeviceConfig {
            profile: self.profile,
            d_adm: self.params.d_adm,
            m_adm: self.params.m_adm,
            tau_max: self.params.tau_max,
            theta_max: self.servo.theta_max,
            k_stop: self.servo.k_stop,
        }
    }
}

/// Everything computed during one tick. `state` is the sample the device
/// reports: the post-step state with the encoder-quantized angle.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TickReport {
    pub state: JoystickState,
    /// Hand torque applied during the tick, N·m.
    pub push: f64,
    pub tau_fb_rec: f64,
    pub tau_fb_ext: f64,
    pub tau_fb_total: f64,
    pub tau_stop: f64,
}

#[derive(Debug, Clone)]
pub struct ControlLoop {
    cfg: LoopConfig,
    state: JoystickState,
    ticks: u64,
    hold: StalenessHold,
    rng: ChaCha8Rng,
    tremor: Option<Normal<f64>>,
    discarded_feedback: u64,
    rejected_configs: u64,
}

impl ControlLoop {
    pub fn new(cfg: LoopConfig) -> Result<Self, FirmwareError> {
        cfg.validate()?;
        let tremor = (cfg.operator.noise > 0.0)
            .then(|| Normal::new(0.0, cfg.operator.noise).expect("validated noise"));
        Ok(Self {
            state: JoystickState {
                t: 0.0,
                ..cfg.initial
            },
            ticks: 0,
            hold: StalenessHold::default(),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            tremor,
            discarded_feedback: 0,
            rejected_configs: 0,
            cfg,
        })
    }

    pub fn config(&self) -> &LoopConfig {
        &self.cfg
    }

    /// Integrator state (unquantized).
    pub fn state(&self) -> JoystickState {
        self.state
    }

    pub fn ticks(&self) -> u64 {
        self.ticks
    }

    /// Simulated time at the start of the next tick, s.
    pub fn time(&self) -> f64 {
        self.ticks as f64 * self.cfg.params.dt
    }

    pub fn discarded_feedback(&self) -> u64 {
        self.discarded_feedback
    }

    pub fn rejected_configs(&self) -> u64 {
        self.rejected_configs
    }

    /// Latches a new external feedback torque. Non-finite values are dropped.
    pub fn feedback(&mut self, tau_ext: f64) -> bool {
        if tau_ext.is_finite() {
            self.hold.update(tau_ext, self.time());
            true
        } else {
            self.discarded_feedback += 1;
            false
        }
    }

    pub fn apply_config(&mut self, dc: &DeviceConfig) -> AckStatus {
        let candidate = LoopConfig {
            params: dc.admittance(self.cfg.params.dt),
            profile: dc.profile,
            servo: ServoModel {
                theta_max: dc.theta_max,
                k_stop: dc.k_stop,
                ..self.cfg.servo
            },
            ..self.cfg
        };
        match candidate.validate() {
            Ok(()) => {
                self.cfg = candidate;
                AckStatus::Applied
            }
            Err(e) => {
                log::warn!("rejected device config: {e}");
                self.rejected_configs += 1;
                AckStatus::Rejected
            }
        }
    }

    /// Runs one control period. `external` is the console's hand torque, used
    /// when the operator profile is [`super::OperatorKind::External`].
    pub fn tick(&mut self, external: f64) -> TickReport {
        let LoopConfig {
            params,
            profile,
            servo,
            operator,
            ..
        } = self.cfg;
        let t = self.time();
        let mut push = operator.torque_at(t, if external.is_finite() { external } else { 0.0 });
        if let Some(tremor) = &self.tremor {
            push += tremor.sample(&mut self.rng);
        }

        let theta_meas = servo.measure(self.state.theta);
        let tau_fb_rec = recentering_torque(theta_meas, &profile).unwrap_or(0.0);
        let tau_fb_ext = self.hold.output(t);
        let tau_fb_total = total_feedback(tau_fb_rec, tau_fb_ext, params.tau_max);
        let tau_stop = servo.hard_stop_torque(self.state.theta);

        let current = JoystickState {
            tau_operator: -push,
            ..self.state
        };
        match step_dynamics(current, servo.command(tau_fb_total) + tau_stop, &params) {
            Ok(next) => self.state = next,
            Err(e) => {
                // keep the last good state rather than storing a non-finite one
                log::error!("dynamics step failed at t={t}: {e}");
                self.state = current;
            }
        }
        self.ticks += 1;
        self.state.t = self.time();

        TickReport {
            state: JoystickState {
                theta: servo.measure(self.state.theta),
                ..self.state
            },
            push,
            tau_fb_rec,
            tau_fb_ext,
            tau_fb_total,
            tau_stop,
        }
    }
}

impl ControlLoop {
    /// One tick wired to the mailboxes: applies a pending config (queueing
    /// its ack), latches new feedback, steps, and on telemetry ticks queues
    /// the sample, dropping the oldest if the sender is behind.
    pub fn service(&mut self, io: &LoopIo) -> TickReport {
        let counters: &LoopCounters = &io.counters;
        if let Some((seq, dc)) = io.config.take() {
            let status = self.apply_config(&dc);
            io.acks.force_push((seq, status));
        }
        if let Some(tau_ext) = io.feedback.take() {
            if !self.feedback(tau_ext) {
                counters.discarded_feedback.fetch_add(1, Ordering::Relaxed);
            }
        }
        let external = io.operator.peek().unwrap_or(0.0);
        let report = self.tick(external);
        if self.ticks.is_multiple_of(io.telemetry_every) && io.telemetry.force_push(report.state).is_some() {
            counters.telemetry_dropped.fetch_add(1, Ordering::Relaxed);
        }
        report
    }
}

/// When [`run_control_loop`] returns.
#[derive(Debug, Clone, Copy)]
pub enum StopAt<'a> {
    Ticks(u64),
    Flag(&'a AtomicBool),
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RunSummary {
    pub ticks: u64,
    pub overruns: u64,
    pub discarded_feedback: u64,
    pub telemetry_dropped: u64,
    pub max_abs_tau_fb_total: f64,
    pub final_state: JoystickState,
}

/// Runs the loop at `params.dt` against `clock` until `stop`.
///
/// Each tick reads the latest feedback and operator values from their
/// mailboxes, applies any pending device config, steps the dynamics and
/// pushes the sample onto the telemetry queue (dropping the oldest sample if
/// the sender is behind). A tick that finishes after the next tick's deadline
/// is counted as an overrun; the loop keeps going.
pub fn run_control_loop(
    ctl: &mut ControlLoop,
    io: &LoopIo,
    clock: &dyn Clock,
    stop: StopAt<'_>,
    mut on_tick: impl FnMut(&TickReport),
) -> RunSummary {
    let start = clock.now();
    let counters: &LoopCounters = &io.counters;
    let mut summary = RunSummary::default();
    let mut k: u64 = 0;
    loop {
        match stop {
            StopAt::Ticks(n) if k >= n => break,
            StopAt::Flag(f) if f.load(Ordering::Relaxed) => break,
            _ => {}
        }
        let dt = ctl.config().params.dt;
        clock.wait_until(start + Duration::from_secs_f64(k as f64 * dt));

        let report = ctl.service(io);
        on_tick(&report);

        summary.max_abs_tau_fb_total = summary.max_abs_tau_fb_total.max(report.tau_fb_total.abs());
        summary.final_state = report.state;
        k += 1;
        counters.ticks.fetch_add(1, Ordering::Relaxed);
        let next_deadline = start + Duration::from_secs_f64(k as f64 * dt);
        let finished = clock.now();
        if finished > next_deadline {
            log::trace!("tick {k} overran by {:?}", finished - next_deadline);
            counters.overruns.fetch_add(1, Ordering::Relaxed);
            summary.overruns += 1;
        }
    }
    summary.ticks = k;
    summary.discarded_feedback = ctl.discarded_feedback();
    summary.telemetry_dropped = counters.telemetry_dropped.load(Ordering::Relaxed);
    summary
}
