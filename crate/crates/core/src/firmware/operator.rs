//! Scripted operator hand for headless runs.
//!
//! Amplitudes are the torque the hand applies to the knob, positive towards
//! +θ. The servo senses the reaction, so the loop feeds `-push` into the
//! admittance dynamics.

use super::FirmwareError;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OperatorKind {
    /// `amplitude` between `start` and `stop`.
    Step,
    /// `amplitude·sin(2πf(t - start))` between `start` and `stop`.
    Sine,
    /// Linear sweep from 0 Hz at `start` to `frequency` at `stop`.
    Chirp,
    /// `amplitude` for the whole run.
    Hold,
    /// Live input from the operator console.
    External,
}

fn default_stop() -> f64 {
    f64::INFINITY
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorInput {
    pub kind: OperatorKind,
    /// N·m
    #[serde(default)]
    pub amplitude: f64,
    /// Hz
    #[serde(default)]
    pub frequency: f64,
    #[serde(default)]
    pub start: f64,
    #[serde(default = "default_stop")]
    pub stop: f64,
    /// Standard deviation of additive hand tremor, N·m.
    #[serde(default)]
    pub noise: f64,
}

impl Default for OperatorInput {
    fn default() -> Self {
        Self::hold(0.0)
    }
}

impl OperatorInput {
    pub fn hold(amplitude: f64) -> Self {
        Self {
            kind: OperatorKind::Hold,
            amplitude,
            frequency: 0.0,
            start: 0.0,
            stop: f64::INFINITY,
            noise: 0.0,
        }
    }

    pub fn step(amplitude: f64, start: f64) -> Self {
        Self {
            kind: OperatorKind::Step,
            start,
            ..Self::hold(amplitude)
        }
    }

    pub fn external() -> Self {
        Self {
            kind: OperatorKind::External,
            ..Self::hold(0.0)
        }
    }

    pub fn validate(&self) -> Result<(), FirmwareError> {
        let bad = |name: &'static str, reason: &str| {
            Err(FirmwareError::Invalid {
                name,
                reason: reason.to_owned(),
            })
        };
        if !self.amplitude.is_finite() {
            return bad("amplitude", "must be finite");
        }
        if !(self.frequency.is_finite() && self.frequency >= 0.0) {
            return bad("frequency", "must be finite and >= 0");
        }
        if !self.start.is_finite() || self.stop.is_nan() || self.stop < self.start {
            return bad("stop", "window must satisfy start <= stop");
        }
        if self.kind == OperatorKind::Chirp && !self.stop.is_finite() {
            return bad("stop", "a chirp needs a finite stop time");
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return bad("noise", "must be finite and >= 0");
        }
        Ok(())
    }

    /// Applied hand torque at time `t`; `external` is the latest console value.
    pub fn torque_at(&self, t: f64, external: f64) -> f64 {
        let in_window = t >= self.start && t < self.stop;
        let tau = t - self.start;
        match self.kind {
            OperatorKind::Hold => self.amplitude,
            OperatorKind::External => external,
            _ if !in_window => 0.0,
            OperatorKind::Step => self.amplitude,
            OperatorKind::Sine => self.amplitude * (2.0 * PI * self.frequency * tau).sin(),
            OperatorKind::Chirp => {
                let span = self.stop - self.start;
                let phase = PI * self.frequency / span * tau * tau;
                self.amplitude * phase.sin()
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profiles() {
        let step = OperatorInput::step(0.2, 1.0);
        assert_eq!(step.torque_at(0.5, 9.0), 0.0);
        assert_eq!(step.torque_at(1.0, 9.0), 0.2);
        assert_eq!(OperatorInput::hold(0.3).torque_at(100.0, 0.0), 0.3);
        assert_eq!(OperatorInput::external().torque_at(0.0, -0.6), -0.6);
        let sine = OperatorInput {
            kind: OperatorKind::Sine,
            amplitude: 0.1,
            frequency: 1.0,
            ..OperatorInput::hold(0.0)
        };
        assert!((sine.torque_at(0.25, 0.0) - 0.1).abs() < 1e-12);
        let chirp = OperatorInput {
            kind: OperatorKind::Chirp,
            amplitude: 0.1,
            frequency: 10.0,
            start: 0.0,
            stop: 2.0,
            noise: 0.0,
        };
        assert_eq!(chirp.torque_at(0.0, 0.0), 0.0);
        assert_eq!(chirp.torque_at(2.5, 0.0), 0.0);
        assert!(chirp.validate().is_ok());
    }

    #[test]
    fn validation() {
        let mut op = OperatorInput::hold(f64::NAN);
        assert!(op.validate().is_err());
        op.amplitude = 0.1;
        op.frequency = -1.0;
        assert!(op.validate().is_err());
        let open_chirp = OperatorInput {
            kind: OperatorKind::Chirp,
            ..OperatorInput::hold(0.1)
        };
        assert!(open_chirp.validate().is_err());
    }
}
