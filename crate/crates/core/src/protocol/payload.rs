//! Typed payloads and the fixed-point micro-unit mapping used on the wire.

use super::frame::{Frame, FrameError, FrameType};
use crate::haptics::{AdmittanceParams, JoystickState, StiffnessProfile};
use thiserror::Error;

const MICRO: f64 = 1e6;

/// A quantized value plus whether it had to be saturated to fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Quantized<T> {
    pub value: T,
    pub saturated: bool,
}

/// SI value to signed micro-units, round half to even, saturating.
/// NaN maps to 0 and is reported as saturated.
pub fn to_micro(x: f64) -> Quantized<i32> {
    if x.is_nan() {
        return Quantized {
            value: 0,
            saturated: true,
        };
    }
    let scaled = (x * MICRO).round_ties_even();
    if scaled > i32::MAX as f64 {
        Quantized {
            value: i32::MAX,
            saturated: true,
        }
    } else if scaled < i32::MIN as f64 {
        Quantized {
            value: i32::MIN,
            saturated: true,
        }
    } else {
        Quantized {
            value: scaled as i32,
            saturated: false,
        }
    }
}

pub fn from_micro(v: i32) -> f64 {
    v as f64 / MICRO
}

/// Seconds to wrapping microseconds.
pub fn to_micros_wrapping(t: f64) -> u32 {
    if !t.is_finite() || t <= 0.0 {
        return 0;
    }
    ((t * MICRO).round_ties_even() as u64) as u32
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PayloadError {
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error("expected a {expected:?} frame, got {got:?}")]
    WrongType { expected: FrameType, got: FrameType },
    #[error("unknown config-ack status {0}")]
    AckStatus(u8),
}

fn expect(frame: &Frame, ftype: FrameType) -> Result<(), PayloadError> {
    frame.validate()?;
    if frame.ftype != ftype {
        return Err(PayloadError::WrongType {
            expected: ftype,
            got: frame.ftype,
        });
    }
    Ok(())
}

fn read_i32(b: &[u8], at: usize) -> i32 {
    i32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TelemetryPayload {
    pub theta_urad: i32,
    pub omega_urad_s: i32,
    pub tau_unm: i32,
    pub t_us: u32,
}

impl TelemetryPayload {
    pub fn to_bytes(&self) -> [u8; 16] {
        let mut b = [0u8; 16];
        b[0..4].copy_from_slice(&self.theta_urad.to_le_bytes());
        b[4..8].copy_from_slice(&self.omega_urad_s.to_le_bytes());
        b[8..12].copy_from_slice(&self.tau_unm.to_le_bytes());
        b[12..16].copy_from_slice(&self.t_us.to_le_bytes());
        b
    }

    pub fn from_bytes(b: &[u8; 16]) -> Self {
        Self {
            theta_urad: read_i32(b, 0),
            omega_urad_s: read_i32(b, 4),
            tau_unm: read_i32(b, 8),
            t_us: u32::from_le_bytes([b[12], b[13], b[14], b[15]]),
        }
    }
}

/// Quantizes a state sample for the wire.
pub fn quantize_state(state: &JoystickState) -> Quantized<TelemetryPayload> {
    let theta = to_micro(state.theta);
    let omega = to_micro(state.omega);
    let tau = to_micro(state.tau_operator);
    Quantized {
        value: TelemetryPayload {
            theta_urad: theta.value,
            omega_urad_s: omega.value,
            tau_unm: tau.value,
            t_us: to_micros_wrapping(state.t),
        },
        saturated: theta.saturated || omega.saturated || tau.saturated,
    }
}

/// Inverse of [`quantize_state`]; time is recovered modulo the u32 wrap.
pub fn dequantize_payload(p: &TelemetryPayload) -> JoystickState {
    JoystickState {
        theta: from_micro(p.theta_urad),
        omega: from_micro(p.omega_urad_s),
        tau_operator: from_micro(p.tau_unm),
        t: p.t_us as f64 / MICRO,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FeedbackPayload {
    pub tau_ext_unm: i32,
}

impl FeedbackPayload {
    pub fn from_torque(tau_ext: f64) -> Quantized<Self> {
        let q = to_micro(tau_ext);
        Quantized {
            value: Self {
                tau_ext_unm: q.value,
            },
            saturated: q.saturated,
        }
    }

    pub fn torque(&self) -> f64 {
        from_micro(self.tau_ext_unm)
    }
}

/// Live-tunable device parameters. Every field is a little-endian i32 in
/// micro-units of its SI unit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeviceConfig {
    pub profile: StiffnessProfile,
    pub d_adm: f64,
    pub m_adm: f64,
    pub tau_max: f64,
    pub theta_max: f64,
    pub k_stop: f64,
}

impl DeviceConfig {
    pub const FIELDS: usize = 10;

    fn values(&self) -> [f64; Self::FIELDS] {
        let p = &self.profile;
        [
            p.theta0,
            p.q_dz,
            p.n,
            p.k_min,
            p.k_max,
            self.d_adm,
            self.m_adm,
            self.tau_max,
            self.theta_max,
            self.k_stop,
        ]
    }

    pub fn to_bytes(&self) -> Quantized<[u8; 40]> {
        let mut b = [0u8; 40];
        let mut saturated = false;
        for (i, v) in self.values().into_iter().enumerate() {
            let q = to_micro(v);
            saturated |= q.saturated;
            b[4 * i..4 * i + 4].copy_from_slice(&q.value.to_le_bytes());
        }
        Quantized { value: b, saturated }
    }

    pub fn from_bytes(b: &[u8; 40]) -> Self {
        let v: Vec<f64> = (0..Self::FIELDS).map(|i| from_micro(read_i32(b, 4 * i))).collect();
        Self {
            profile: StiffnessProfile {
                theta0: v[0],
                q_dz: v[1],
                n: v[2],
                k_min: v[3],
                k_max: v[4],
            },
            d_adm: v[5],
            m_adm: v[6],
            tau_max: v[7],
            theta_max: v[8],
            k_stop: v[9],
        }
    }

    /// Admittance parameters with the given loop step.
    pub fn admittance(&self, dt: f64) -> AdmittanceParams {
        AdmittanceParams {
            d_adm: self.d_adm,
            m_adm: self.m_adm,
            tau_max: self.tau_max,
            dt,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum AckStatus {
    Applied = 0,
    Rejected = 1,
}

/// A frame with its payload decoded.
#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Telemetry(TelemetryPayload),
    Feedback(FeedbackPayload),
    ConfigSet(DeviceConfig),
    /// Carries the seq of the config-set frame it answers in the frame header.
    ConfigAck(AckStatus),
}

impl Message {
    pub fn ftype(&self) -> FrameType {
        match self {
            Message::Telemetry(_) => FrameType::Telemetry,
            Message::Feedback(_) => FrameType::Feedback,
            Message::ConfigSet(_) => FrameType::ConfigSet,
            Message::ConfigAck(_) => FrameType::ConfigAck,
        }
    }

    pub fn to_frame(&self, seq: u8) -> Frame {
        let payload = match self {
            Message::Telemetry(p) => p.to_bytes().to_vec(),
            Message::Feedback(p) => p.tau_ext_unm.to_le_bytes().to_vec(),
            Message::ConfigSet(c) => c.to_bytes().value.to_vec(),
            Message::ConfigAck(s) => vec![*s as u8],
        };
        Frame::new(self.ftype(), seq, payload)
    }

    pub fn from_frame(frame: &Frame) -> Result<Message, PayloadError> {
        frame.validate()?;
        let p = &frame.payload;
        Ok(match frame.ftype {
            FrameType::Telemetry => {
                Message::Telemetry(TelemetryPayload::from_bytes(p[..16].try_into().unwrap()))
            }
            FrameType::Feedback => Message::Feedback(FeedbackPayload {
                tau_ext_unm: read_i32(p, 0),
            }),
            FrameType::ConfigSet => {
                Message::ConfigSet(DeviceConfig::from_bytes(p[..40].try_into().unwrap()))
            }
            FrameType::ConfigAck => Message::ConfigAck(match p[0] {
                0 => AckStatus::Applied,
                1 => AckStatus::Rejected,
                s => return Err(PayloadError::AckStatus(s)),
            }),
        })
    }
}

pub fn telemetry_from_frame(frame: &Frame) -> Result<TelemetryPayload, PayloadError> {
    expect(frame, FrameType::Telemetry)?;
    Ok(TelemetryPayload::from_bytes(frame.payload[..16].try_into().unwrap()))
}
