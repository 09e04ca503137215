//! Experiment description loaded from TOML. See `docs/scenario.md`.

use crate::bridge::{BridgeConfig, BridgeError};
use crate::firmware::telemetry::DEFAULT_TELEMETRY_RATE_HZ;
use crate::firmware::{FirmwareError, LoopConfig, OperatorInput, ServoModel};
use crate::haptics::{AdmittanceParams, HapticsError, JoystickState, StiffnessProfile};
use crate::protocol::DeviceConfig;
use crate::robot::WorldConfig;
use crate::transport::TransportSpec;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("cannot parse scenario: {0}")]
    Parse(String),
    #[error("invalid scenario field {field}: {reason}")]
    Invalid { field: String, reason: String },
}

fn invalid(field: impl Into<String>, reason: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid {
        field: field.into(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialState {
    /// rad
    pub theta: f64,
    /// rad/s
    pub omega: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FirmwareSettings {
    /// Hz; rounded so the control loop emits a sample every whole tick count.
    pub telemetry_rate: f64,
}

impl Default for FirmwareSettings {
    fn default() -> Self {
        Self {
            telemetry_rate: DEFAULT_TELEMETRY_RATE_HZ,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema: u32,
    #[serde(default)]
    pub name: String,
    /// s
    pub duration: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub initial: InitialState,
    #[serde(default)]
    pub admittance: AdmittanceParams,
    #[serde(default)]
    pub stiffness: StiffnessProfile,
    #[serde(default)]
    pub servo: ServoModel,
    #[serde(default)]
    pub operator: OperatorInput,
    #[serde(default)]
    pub firmware: FirmwareSettings,
    #[serde(default)]
    pub world: WorldConfig,
    #[serde(default)]
    pub bridge: BridgeConfig,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            schema: SCHEMA_VERSION,
            name: String::new(),
            duration: 1.0,
            seed: 0,
            initial: InitialState::default(),
            admittance: AdmittanceParams::default(),
            stiffness: StiffnessProfile::default(),
            servo: ServoModel::default(),
            operator: OperatorInput::default(),
            firmware: FirmwareSettings::default(),
            world: WorldConfig::default(),
            bridge: BridgeConfig::default(),
        }
    }
}

fn section_error(section: &str, e: impl Into<SectionError>) -> ScenarioError {
    let SectionError { name, reason } = e.into();
    invalid(format!("{section}.{name}"), reason)
}

struct SectionError {
    name: &'static str,
    reason: String,
}

impl From<HapticsError> for SectionError {
    fn from(e: HapticsError) -> Self {
        match e {
            HapticsError::InvalidParam { name, reason } => Self { name, reason },
            HapticsError::NonFinite(name) => Self {
                name,
                reason: "must be finite".into(),
            },
        }
    }
}

impl From<FirmwareError> for SectionError {
    fn from(e: FirmwareError) -> Self {
        match e {
            FirmwareError::Haptics(h) => h.into(),
            FirmwareError::Invalid { name, reason } => Self { name, reason },
        }
    }
}

impl From<BridgeError> for SectionError {
    fn from(e: BridgeError) -> Self {
        match e {
            BridgeError::Config { name, reason } => Self { name, reason },
            other => Self {
                name: "?",
                reason: other.to_string(),
            },
        }
    }
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    /// Parses and validates.
    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        let s: Scenario = toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario fields are all representable in TOML")
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.schema != SCHEMA_VERSION {
            return Err(invalid(
                "schema",
                format!("unsupported version {}, expected {SCHEMA_VERSION}", self.schema),
            ));
        }
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return Err(invalid("duration", format!("must be finite and > 0, got {}", self.duration)));
        }
        for (name, v) in [("theta", self.initial.theta), ("omega", self.initial.omega)] {
            if !v.is_finite() {
                return Err(invalid(format!("initial.{name}"), "must be finite"));
            }
        }
        self.admittance.validate().map_err(|e| section_error("admittance", e))?;
        self.stiffness.validate().map_err(|e| section_error("stiffness", e))?;
        self.servo
            .validate(&self.stiffness)
            .map_err(|e| section_error("servo", e))?;
        self.operator.validate().map_err(|e| section_error("operator", e))?;
        let rate = self.firmware.telemetry_rate;
        if !(rate.is_finite() && rate > 0.0 && rate <= self.admittance.rate_hz()) {
            return Err(invalid(
                "firmware.telemetry_rate",
                format!("must be in (0, {}] Hz, got {rate}", self.admittance.rate_hz()),
            ));
        }
        self.world.validate().map_err(|e| invalid(format!("world.{}", e.name), e.reason))?;
        if self.world.rate > self.admittance.rate_hz() {
            return Err(invalid(
                "world.rate",
                format!("must not exceed the control rate {} Hz", self.admittance.rate_hz()),
            ));
        }
        self.bridge.validate().map_err(|e| section_error("bridge", e))?;
        Ok(())
    }

    pub fn loop_config(&self) -> LoopConfig {
        LoopConfig {
            params: self.admittance,
            profile: self.stiffness,
            servo: self.servo,
            operator: self.operator,
            initial: JoystickState {
                theta: self.initial.theta,
                omega: self.initial.omega,
                ..JoystickState::default()
            },
            seed: self.seed,
        }
    }

    pub fn device_config(&self) -> DeviceConfig {
        self.loop_config().device_config()
    }

    pub fn transport(&self) -> TransportSpec {
        self.bridge.transport().expect("validated transport")
    }

    /// Control ticks in the run.
    pub fn ticks(&self) -> u64 {
        (self.duration / self.admittance.dt).round() as u64
    }

    /// Control ticks between telemetry samples.
    pub fn telemetry_decimation(&self) -> u64 {
        decimation(self.admittance.rate_hz(), self.firmware.telemetry_rate)
    }

    /// Control ticks between robot steps.
    pub fn robot_decimation(&self) -> u64 {
        decimation(self.admittance.rate_hz(), self.world.rate)
    }
}

fn decimation(base: f64, rate: f64) -> u64 {
    ((base / rate).round() as u64).max(1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_scenario_uses_defaults() {
        let s = Scenario::from_toml("schema = 1\nduration = 2.0\n").unwrap();
        assert_eq!(s.admittance, AdmittanceParams::default());
        assert_eq!(s.ticks(), 2000);
        assert_eq!(s.telemetry_decimation(), 2);
        assert_eq!(s.robot_decimation(), 2);
    }

    #[test]
    fn toml_round_trip() {
        let mut s = Scenario::default();
        s.name = "wall".into();
        s.world.wall_position = 0.2;
        s.world.max_speed = 0.3;
        let text = s.to_toml();
        assert_eq!(Scenario::from_toml(&text).unwrap(), s);
        // infinite defaults survive
        assert_eq!(Scenario::from_toml(&Scenario::default().to_toml()).unwrap(), Scenario::default());
    }

    #[test]
    fn field_level_errors() {
        let cases = [
            ("schema = 1\nduration = 0\n", "duration"),
            ("schema = 2\nduration = 1\n", "schema"),
            ("schema = 1\nduration = 1\n[admittance]\nd_adm = -1\n", "admittance.d_adm"),
            ("schema = 1\nduration = 1\n[admittance]\ndt = 0.01\n", "admittance.dt"),
            ("schema = 1\nduration = 1\n[stiffness]\nn = 0.01\n", "stiffness.n"),
            ("schema = 1\nduration = 1\n[servo]\nk_stop = 1\n", "servo.k_stop"),
            ("schema = 1\nduration = 1\n[world]\nbandwidth = 0\n", "world.bandwidth"),
            ("schema = 1\nduration = 1\n[bridge]\ntransport = \"usb\"\n", "bridge.transport"),
            ("schema = 1\nduration = 1\n[firmware]\ntelemetry_rate = 5000\n", "firmware.telemetry_rate"),
        ];
        for (text, field) in cases {
            match Scenario::from_toml(text) {
                Err(ScenarioError::Invalid { field: f, .. }) => assert_eq!(f, field, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = Scenario::from_toml("schema = 1\nduration = 1\n[admittance]\nmass = 1\n").unwrap_err();
        assert!(matches!(err, ScenarioError::Parse(ref m) if m.contains("mass")), "{err}");
    }
}
