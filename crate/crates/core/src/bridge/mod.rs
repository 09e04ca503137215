//! Host-side driver: device frames in, robot references out, robot contact
//! force back to the device as feedback torque.
//!
//! [`BridgeCore`] is the whole protocol logic as a synchronous state machine
//! fed with bytes, bus messages and timestamps. [`runtime`] wraps it in
//! threads for the live stack; the simulator drives it directly.

pub mod console;
pub mod runtime;
pub mod ws;

pub use runtime::{run_bridge, BridgeHandle, BridgeLinks};

use crate::bus::{topics, BusMessage};
use crate::firmware::StalenessHold;
use crate::haptics::{
    integrate_reference, velocity_reference, AdmittanceParams, JoystickState, ReferenceState,
    FINGER_FORCE_CEILING,
};
use crate::protocol::{
    dequantize_payload, encode_message, AckStatus, DeviceConfig, Diagnostics, FeedbackPayload,
    Message, Parser, SeqCounter, TelemetryPayload,
};
use crate::transport::TransportSpec;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;
use thiserror::Error;

/// Robot contact force to device torque, N·m per N: 20 N maps to 0.44 N·m.
pub const DEFAULT_FEEDBACK_GAIN: f64 = 0.022;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BridgeError {
    #[error("invalid bridge config {name}: {reason}")]
    Config { name: &'static str, reason: String },
    #[error("unexpected topic {0}")]
    UnexpectedTopic(String),
    #[error("bad {topic} message: {reason}")]
    BadMessage { topic: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BridgeConfig {
    /// `inproc`, `tcp[:host:port]` or `pty`.
    pub transport: String,
    pub bus_listen: String,
    pub ws_listen: String,
    /// Static file server for the operator console; off when unset.
    pub http_listen: Option<String>,
    pub console_dir: Option<PathBuf>,
    /// m/s
    pub v_max: f64,
    /// joystick/state and robot/ref publish rate, Hz.
    pub publish_rate: f64,
    /// N·m per N
    pub feedback_gain: f64,
    /// Contact force above which feedback stops growing, N.
    pub f_max: f64,
    /// Angle band around zero that produces no velocity, rad. Defaults to the
    /// device's deadzone `q_dz`; 0 disables it.
    pub input_deadzone: Option<f64>,
}

impl Default for BridgeConfig {
    fn default() -> Self {
        Self {
            transport: "inproc".into(),
            bus_listen: "127.0.0.1:7400".into(),
            ws_listen: "127.0.0.1:7401".into(),
            http_listen: None,
            console_dir: None,
            v_max: 0.5,
            publish_rate: 500.0,
            feedback_gain: DEFAULT_FEEDBACK_GAIN,
            f_max: FINGER_FORCE_CEILING,
            input_deadzone: None,
        }
    }
}

impl BridgeConfig {
    pub fn validate(&self) -> Result<(), BridgeError> {
        let bad = |name, reason: String| Err(BridgeError::Config { name, reason });
        if let Err(e) = self.transport() {
            return bad("transport", e);
        }
        for (name, v) in [("v_max", self.v_max), ("publish_rate", self.publish_rate)] {
            if !(v.is_finite() && v > 0.0) {
                return bad(name, format!("must be finite and > 0, got {v}"));
            }
        }
        if !self.feedback_gain.is_finite() {
            return bad("feedback_gain", "must be finite".into());
        }
        if !(self.f_max.is_finite() && self.f_max >= 0.0) {
            return bad("f_max", format!("must be finite and >= 0, got {}", self.f_max));
        }
        if let Some(dz) = self.input_deadzone {
            if !(dz.is_finite() && dz >= 0.0) {
                return bad("input_deadzone", format!("must be finite and >= 0, got {dz}"));
            }
        }
        Ok(())
    }

    pub fn transport(&self) -> Result<TransportSpec, String> {
        self.transport.parse()
    }

    /// Largest feedback torque magnitude the bridge can emit, N·m.
    pub fn feedback_bound(&self) -> f64 {
        self.feedback_gain.abs() * self.f_max
    }
}

/// Monotonic counters reported in `bridge/diag`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct BridgeCounters {
    pub telemetry_frames: u64,
    pub feedback_frames: u64,
    pub config_frames: u64,
    pub config_acks: u64,
    pub ignored_frames: u64,
    /// Telemetry whose timestamp did not advance.
    pub stale_telemetry: u64,
    pub malformed_bus: u64,
    pub link_losses: u64,
    pub published: u64,
}

/// What one input produced: bus messages to publish and bytes for the device.
#[derive(Debug, Default, Clone, PartialEq)]
pub struct BridgeOutput {
    pub publish: Vec<BusMessage>,
    pub to_device: Vec<u8>,
}

impl BridgeOutput {
    pub fn is_empty(&self) -> bool {
        self.publish.is_empty() && self.to_device.is_empty()
    }

    fn merge(&mut self, other: BridgeOutput) {
        self.publish.extend(other.publish);
        self.to_device.extend(other.to_device);
    }
}

#[derive(Debug, Clone)]
pub struct BridgeCore {
    cfg: BridgeConfig,
    device: DeviceConfig,
    pending_config: Option<(u8, DeviceConfig)>,
    parser: Parser,
    reference: ReferenceState,
    /// Last telemetry timestamp on the wire, µs (wraps).
    last_t_us: Option<u32>,
    /// Device time unwrapped from the telemetry timestamps, s.
    device_time: f64,
    device_us: u64,
    last_publish_us: Option<u64>,
    force: StalenessHold,
    seq: SeqCounter,
    link_up: bool,
    last_joystick: Option<JoystickState>,
    counters: BridgeCounters,
    latencies: Vec<f64>,
}

impl BridgeCore {
    /// `device` is the configuration the device boots with; parameter edits
    /// start from it.
    pub fn new(cfg: BridgeConfig, device: DeviceConfig) -> Result<Self, BridgeError> {
        cfg.validate()?;
        Ok(Self {
            reference: ReferenceState::new(cfg.v_max),
            cfg,
            device,
            pending_config: None,
            parser: Parser::new(),
            last_t_us: None,
            device_time: 0.0,
            device_us: 0,
            last_publish_us: None,
            force: StalenessHold::default(),
            seq: SeqCounter::default(),
            link_up: true,
            last_joystick: None,
            counters: BridgeCounters::default(),
            latencies: Vec::new(),
        })
    }

    pub fn config(&self) -> &BridgeConfig {
        &self.cfg
    }

    pub fn device_config(&self) -> &DeviceConfig {
        &self.device
    }

    pub fn reference(&self) -> ReferenceState {
        self.reference
    }

    pub fn last_joystick(&self) -> Option<JoystickState> {
        self.last_joystick
    }

    pub fn counters(&self) -> BridgeCounters {
        self.counters
    }

    pub fn parser_diagnostics(&self) -> Diagnostics {
        self.parser.diagnostics()
    }

    pub fn link_up(&self) -> bool {
        self.link_up
    }

    pub fn input_deadzone(&self) -> f64 {
        self.cfg.input_deadzone.unwrap_or(self.device.profile.q_dz)
    }

    /// Latest contact force after the staleness policy, N.
    pub fn held_force(&self, now: f64) -> f64 {
        self.force.output(now)
    }

    /// Feeds raw bytes from the device link.
    pub fn on_device_bytes(&mut self, bytes: &[u8], now: f64) -> BridgeOutput {
        let mut out = BridgeOutput::default();
        for frame in self.parser.feed(bytes) {
            match Message::from_frame(&frame) {
                Ok(Message::Telemetry(p)) => self.on_telemetry(&p, now, &mut out),
                Ok(Message::ConfigAck(status)) => {
                    out.publish.push(self.on_ack(frame.seq, status));
                }
                _ => self.counters.ignored_frames += 1,
            }
        }
        self.counters.published += out.publish.len() as u64;
        out
    }

    fn on_telemetry(&mut self, p: &TelemetryPayload, now: f64, out: &mut BridgeOutput) {
        self.counters.telemetry_frames += 1;
        let js = dequantize_payload(p);
        let v_new = velocity_reference(js.theta, self.reference.v_max, self.input_deadzone());
        match self.last_t_us {
            None => {
                if !self.link_up {
                    self.link_up = true;
                    out.publish.push(
                        BusMessage::new(topics::BRIDGE_DIAG, js.t).field("event", "link_restored"),
                    );
                }
                self.device_time = js.t;
                self.device_us = p.t_us as u64;
                self.reference.v_ref = v_new;
            }
            Some(prev) => {
                let step_us = p.t_us.wrapping_sub(prev);
                if step_us == 0 || step_us > u32::MAX / 2 {
                    self.counters.stale_telemetry += 1;
                    return;
                }
                let t = self.device_time + step_us as f64 * 1e-6;
                // the step is taken from the published times so that a bus
                // observer can recompute p_ref exactly
                let dt = t - self.device_time;
                self.reference = integrate_reference(self.reference, v_new, dt);
                self.device_time = t;
                self.device_us += step_us as u64;
            }
        }
        self.last_t_us = Some(p.t_us);
        let js = JoystickState {
            t: self.device_time,
            ..js
        };
        self.last_joystick = Some(js);
        self.latencies.push(now - js.t);

        let period_us = 1e6 / self.cfg.publish_rate;
        let due = self
            .last_publish_us
            .is_none_or(|last| (self.device_us - last) as f64 >= 0.9 * period_us);
        if due {
            self.last_publish_us = Some(self.device_us);
            out.publish.push(joystick_message(&js));
            out.publish.push(self.reference_message());
        }
        if self.force.is_stale(now) {
            // keep the device informed while robot state is missing, so it
            // sees the decay to zero
            out.to_device.extend(self.feedback_frame(now));
        }
    }

    fn on_ack(&mut self, seq: u8, status: AckStatus) -> BusMessage {
        self.counters.config_acks += 1;
        if let Some((pending_seq, cfg)) = self.pending_config {
            if pending_seq == seq {
                self.pending_config = None;
                if status == AckStatus::Applied {
                    self.device = cfg;
                }
            }
        }
        ack_message(self.device_time, seq as i64, status == AckStatus::Applied, None)
    }

    fn reference_message(&self) -> BusMessage {
        BusMessage::new(topics::ROBOT_REF, self.device_time)
            .num("v_ref", self.reference.v_ref)
            .num("p_ref", self.reference.p_ref)
            .num("v_max", self.reference.v_max)
    }

    fn feedback_frame(&mut self, now: f64) -> Vec<u8> {
        let f = self.force.output(now).clamp(0.0, self.cfg.f_max);
        let tau = -self.cfg.feedback_gain * f;
        let q = FeedbackPayload::from_torque(tau);
        self.counters.feedback_frames += 1;
        encode_message(&Message::Feedback(q.value), &mut self.seq)
    }

    /// Handles an inbound bus or console message.
    pub fn on_bus_message(&mut self, msg: &BusMessage, now: f64) -> Result<BridgeOutput, BridgeError> {
        let mut out = BridgeOutput::default();
        match msg.topic.as_str() {
            topics::ROBOT_STATE => {
                let f = msg
                    .get_f64("f_contact")
                    .filter(|f| f.is_finite() && *f >= 0.0)
                    .ok_or_else(|| self.malformed(msg, "f_contact must be a finite number >= 0"))?;
                self.force.update(f, now);
                out.to_device = self.feedback_frame(now);
            }
            topics::OPERATOR_PARAMS => out.merge(self.on_params(msg)),
            other => return Err(BridgeError::UnexpectedTopic(other.to_owned())),
        }
        self.counters.published += out.publish.len() as u64;
        Ok(out)
    }

    fn malformed(&mut self, msg: &BusMessage, reason: &str) -> BridgeError {
        self.counters.malformed_bus += 1;
        BridgeError::BadMessage {
            topic: msg.topic.clone(),
            reason: reason.to_owned(),
        }
    }

    /// Applies a parameter edit. Host-side values take effect at once;
    /// device-side values go out as a config-set frame and are committed when
    /// the device acknowledges them.
    fn on_params(&mut self, msg: &BusMessage) -> BridgeOutput {
        let mut out = BridgeOutput::default();
        let mut dev = self.pending_config.map_or(self.device, |(_, c)| c);
        let mut v_max = self.reference.v_max;
        let mut deadzone = self.cfg.input_deadzone;
        let mut device_changed = false;
        for (key, value) in &msg.body {
            let Some(v) = value.as_f64().filter(|v| v.is_finite()) else {
                self.counters.malformed_bus += 1;
                out.publish
                    .push(ack_message(self.device_time, -1, false, Some(format!("{key} is not a number"))));
                return out;
            };
            let slot = match key.as_str() {
                "v_max" => {
                    v_max = v;
                    continue;
                }
                "input_deadzone" => {
                    deadzone = Some(v);
                    continue;
                }
                "theta0" => &mut dev.profile.theta0,
                "q_dz" => &mut dev.profile.q_dz,
                "n" => &mut dev.profile.n,
                "k_min" => &mut dev.profile.k_min,
                "k_max" => &mut dev.profile.k_max,
                "d_adm" => &mut dev.d_adm,
                "m_adm" => &mut dev.m_adm,
                "tau_max" => &mut dev.tau_max,
                "theta_max" => &mut dev.theta_max,
                "k_stop" => &mut dev.k_stop,
                _ => {
                    self.counters.malformed_bus += 1;
                    out.publish.push(ack_message(
                        self.device_time,
                        -1,
                        false,
                        Some(format!("unknown parameter {key}")),
                    ));
                    return out;
                }
            };
            device_changed |= *slot != v;
            *slot = v;
        }
        let host = BridgeConfig {
            v_max,
            input_deadzone: deadzone,
            ..self.cfg.clone()
        };
        let check = host
            .validate()
            .map_err(|e| e.to_string())
            .and(dev.profile.validate().map_err(|e| e.to_string()))
            .and(dev.admittance(AdmittanceParams::default().dt).validate().map_err(|e| e.to_string()));
        if let Err(reason) = check {
            out.publish.push(ack_message(self.device_time, -1, false, Some(reason)));
            return out;
        }
        self.cfg = host;
        self.reference.v_max = v_max;
        if device_changed {
            let seq = self.seq.next();
            out.to_device = Message::ConfigSet(dev)
                .to_frame(seq)
                .encode()
                .expect("config payload matches schema");
            self.pending_config = Some((seq, dev));
            self.counters.config_frames += 1;
        } else {
            out.publish.push(ack_message(self.device_time, -1, true, None));
        }
        out
    }

    /// The device link dropped: hold the position reference and stop
    /// commanding motion until telemetry resumes.
    pub fn on_link_lost(&mut self, reason: &str) -> BridgeOutput {
        let mut out = BridgeOutput::default();
        if !self.link_up {
            return out;
        }
        self.link_up = false;
        self.counters.link_losses += 1;
        self.last_t_us = None;
        self.reference.v_ref = 0.0;
        self.pending_config = None;
        out.publish.push(
            BusMessage::new(topics::BRIDGE_DIAG, self.device_time)
                .field("event", "link_lost")
                .field("reason", reason),
        );
        out.publish.push(self.reference_message());
        self.counters.published += out.publish.len() as u64;
        out
    }

    /// Periodic `bridge/diag` summary. Resets the latency window.
    pub fn diag_message(&mut self, now: f64) -> BusMessage {
        let d = self.parser.diagnostics();
        let c = self.counters;
        self.latencies.sort_by(f64::total_cmp);
        let pct = |q: f64| -> f64 {
            if self.latencies.is_empty() {
                return 0.0;
            }
            let i = ((self.latencies.len() - 1) as f64 * q).round() as usize;
            self.latencies[i]
        };
        let msg = BusMessage::new(topics::BRIDGE_DIAG, now)
            .field("link_up", self.link_up)
            .field("telemetry_frames", c.telemetry_frames)
            .field("feedback_frames", c.feedback_frames)
            .field("config_frames", c.config_frames)
            .field("config_acks", c.config_acks)
            .field("ignored_frames", c.ignored_frames)
            .field("stale_telemetry", c.stale_telemetry)
            .field("malformed_bus", c.malformed_bus)
            .field("link_losses", c.link_losses)
            .field("resyncs", d.resyncs)
            .field("crc_failures", d.crc_failures)
            .field("unknown_type", d.unknown_type)
            .field("bad_length", d.bad_length)
            .num("latency_p50", pct(0.5))
            .num("latency_p99", pct(0.99))
            .field("latency_samples", self.latencies.len() as u64);
        self.latencies.clear();
        msg
    }
}

pub fn joystick_message(js: &JoystickState) -> BusMessage {
    BusMessage::new(topics::JOYSTICK_STATE, js.t)
        .num("theta", js.theta)
        .num("omega", js.omega)
        .num("tau_operator", js.tau_operator)
}

/// `seq` is the config-set frame's seq, or -1 for edits that never reached
/// the device.
fn ack_message(t: f64, seq: i64, applied: bool, reason: Option<String>) -> BusMessage {
    let msg = BusMessage::new(topics::BRIDGE_DIAG, t)
        .field("event", "config_ack")
        .field("seq", seq)
        .field("status", if applied { "applied" } else { "rejected" });
    match reason {
        Some(r) => msg.field("reason", r),
        None => msg,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::haptics::StiffnessProfile;
    use crate::protocol::{quantize_state, Frame, FrameType};

    fn device() -> DeviceConfig {
        DeviceConfig {
            profile: StiffnessProfile::default(),
            d_adm: 0.01,
            m_adm: 0.15,
            tau_max: 0.44,
            theta_max: 1.0,
            k_stop: 500.0,
        }
    }

    fn telemetry(theta: f64, t: f64, seq: u8) -> Vec<u8> {
        let js = JoystickState {
            theta,
            omega: 0.0,
            tau_operator: 0.0,
            t,
        };
        Message::Telemetry(quantize_state(&js).value)
            .to_frame(seq)
            .encode()
            .unwrap()
    }

    fn feedback_values(bytes: &[u8]) -> Vec<i32> {
        Parser::new()
            .feed(bytes)
            .iter()
            .filter(|f| f.ftype == FrameType::Feedback)
            .map(|f| i32::from_le_bytes(f.payload[..4].try_into().unwrap()))
            .collect()
    }

    #[test]
    fn velocity_reference_passthrough() {
        let cfg = BridgeConfig {
            v_max: 2.0,
            ..Default::default()
        };
        let mut b = BridgeCore::new(cfg, device()).unwrap();
        let out = b.on_device_bytes(&telemetry(0.5, 0.0, 0), 0.0);
        let r = out.publish.iter().find(|m| m.topic == topics::ROBOT_REF).unwrap();
        assert_eq!(r.get_f64("v_ref"), Some(0.5));
        assert_eq!(r.get_f64("p_ref"), Some(0.0));
        let out = b.on_device_bytes(&telemetry(0.5, 0.002, 1), 0.002);
        let r = out.publish.iter().find(|m| m.topic == topics::ROBOT_REF).unwrap();
        assert!((r.get_f64("p_ref").unwrap() - 0.001).abs() < 1e-15);
    }

    #[test]
    fn contact_force_becomes_feedback() {
        let mut b = BridgeCore::new(BridgeConfig::default(), device()).unwrap();
        let msg = BusMessage::new(topics::ROBOT_STATE, 0.0).num("f_contact", 10.0);
        let out = b.on_bus_message(&msg, 0.0).unwrap();
        assert_eq!(feedback_values(&out.to_device), vec![-220_000]);
        // saturates at gain·f_max
        let msg = BusMessage::new(topics::ROBOT_STATE, 0.0).num("f_contact", 1e6);
        let out = b.on_bus_message(&msg, 0.0).unwrap();
        assert_eq!(feedback_values(&out.to_device), vec![-440_000]);
    }

    #[test]
    fn stale_force_decays_to_zero() {
        let mut b = BridgeCore::new(BridgeConfig::default(), device()).unwrap();
        let msg = BusMessage::new(topics::ROBOT_STATE, 0.0).num("f_contact", 10.0);
        b.on_bus_message(&msg, 0.0).unwrap();
        let fresh = b.on_device_bytes(&telemetry(0.0, 0.05, 0), 0.05);
        assert!(fresh.to_device.is_empty());
        let decaying = b.on_device_bytes(&telemetry(0.0, 0.2, 1), 0.2);
        assert_eq!(feedback_values(&decaying.to_device), vec![-110_000]);
        let gone = b.on_device_bytes(&telemetry(0.0, 0.4, 2), 0.4);
        assert_eq!(feedback_values(&gone.to_device), vec![0]);
    }

    #[test]
    fn malformed_robot_state_counted() {
        let mut b = BridgeCore::new(BridgeConfig::default(), device()).unwrap();
        let msg = BusMessage::new(topics::ROBOT_STATE, 0.0).num("f_contact", -1.0);
        assert!(b.on_bus_message(&msg, 0.0).is_err());
        assert!(b.on_bus_message(&BusMessage::new("x/y", 0.0), 0.0).is_err());
        assert_eq!(b.counters().malformed_bus, 1);
    }

    #[test]
    fn params_edit_round_trip() {
        let mut b = BridgeCore::new(BridgeConfig::default(), device()).unwrap();
        let edit = BusMessage::new(topics::OPERATOR_PARAMS, 0.0)
            .num("k_max", 1.5)
            .num("v_max", 1.0);
        let out = b.on_bus_message(&edit, 0.0).unwrap();
        assert_eq!(b.reference().v_max, 1.0);
        let frames = Parser::new().feed(&out.to_device);
        assert_eq!(frames.len(), 1);
        let Message::ConfigSet(sent) = Message::from_frame(&frames[0]).unwrap() else {
            panic!("expected config-set");
        };
        assert_eq!(sent.profile.k_max, 1.5);
        assert_eq!(b.device_config().profile.k_max, 1.0);

        let ack = Frame::new(FrameType::ConfigAck, frames[0].seq, vec![0]).encode().unwrap();
        let out = b.on_device_bytes(&ack, 0.0);
        assert_eq!(out.publish[0].get_str("event"), Some("config_ack"));
        assert_eq!(out.publish[0].get_str("status"), Some("applied"));
        assert_eq!(out.publish[0].get_f64("seq"), Some(frames[0].seq as f64));
        assert_eq!(b.device_config().profile.k_max, 1.5);
    }

    #[test]
    fn invalid_params_rejected_locally() {
        let mut b = BridgeCore::new(BridgeConfig::default(), device()).unwrap();
        for edit in [
            BusMessage::new(topics::OPERATOR_PARAMS, 0.0).num("k_max", 0.1),
            BusMessage::new(topics::OPERATOR_PARAMS, 0.0).num("v_max", -1.0),
            BusMessage::new(topics::OPERATOR_PARAMS, 0.0).num("colour", 1.0),
            BusMessage::new(topics::OPERATOR_PARAMS, 0.0).field("k_max", "high"),
        ] {
            let out = b.on_bus_message(&edit, 0.0).unwrap();
            assert!(out.to_device.is_empty());
            assert_eq!(out.publish[0].get_str("status"), Some("rejected"));
        }
        assert_eq!(b.reference().v_max, 0.5);
    }

    #[test]
    fn link_loss_holds_reference() {
        let mut b = BridgeCore::new(BridgeConfig::default(), device()).unwrap();
        b.on_device_bytes(&telemetry(0.5, 0.0, 0), 0.0);
        b.on_device_bytes(&telemetry(0.5, 0.1, 1), 0.1);
        let p_before = b.reference().p_ref;
        let out = b.on_link_lost("eof");
        assert_eq!(out.publish[0].get_str("event"), Some("link_lost"));
        assert_eq!(out.publish[1].get_f64("v_ref"), Some(0.0));
        assert_eq!(out.publish[1].get_f64("p_ref"), Some(p_before));
        assert!(b.on_link_lost("again").is_empty());
        let out = b.on_device_bytes(&telemetry(0.5, 5.0, 2), 5.0);
        assert_eq!(out.publish[0].get_str("event"), Some("link_restored"));
        assert_eq!(b.reference().p_ref, p_before);
        assert_eq!(b.counters().link_losses, 1);
    }

    #[test]
    fn publish_rate_throttles() {
        let cfg = BridgeConfig {
            publish_rate: 100.0,
            ..Default::default()
        };
        let mut b = BridgeCore::new(cfg, device()).unwrap();
        let mut refs = 0;
        for k in 0..500u32 {
            let t = k as f64 * 0.002;
            let out = b.on_device_bytes(&telemetry(0.2, t, k as u8), t);
            refs += out.publish.iter().filter(|m| m.topic == topics::ROBOT_REF).count();
        }
        assert_eq!(refs, 100);
    }

    #[test]
    fn timestamp_wrap_is_continuous() {
        let mut b = BridgeCore::new(BridgeConfig::default(), device()).unwrap();
        let near_wrap = (u32::MAX - 999) as f64 * 1e-6;
        b.on_device_bytes(&telemetry(0.0, near_wrap, 0), 0.0);
        // 2 ms later the wire timestamp has wrapped to 1000 µs
        b.on_device_bytes(&telemetry(0.0, 0.001, 1), 0.0);
        let js = b.last_joystick().unwrap();
        assert!((js.t - (near_wrap + 0.002)).abs() < 1e-9);
        assert_eq!(b.counters().stale_telemetry, 0);
    }
}
