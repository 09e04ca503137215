//! Smart-servo stand-in: encoder and torque resolution plus virtual hard stops.

use super::FirmwareError;
use crate::haptics::StiffnessProfile;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServoModel {
    /// Hard-stop position, rad.
    pub theta_max: f64,
    /// Hard-stop spring, N·m/rad.
    pub k_stop: f64,
    /// Encoder resolution, rad. Zero disables quantization.
    #[serde(default)]
    pub position_quantum: f64,
    /// Torque command resolution, N·m. Zero disables quantization.
    #[serde(default)]
    pub torque_quantum: f64,
}

impl Default for ServoModel {
    fn default() -> Self {
        Self {
            theta_max: 1.0,
            k_stop: 500.0,
            position_quantum: 0.0,
            torque_quantum: 0.0,
        }
    }
}

fn quantize(x: f64, quantum: f64) -> f64 {
    if quantum > 0.0 {
        (x / quantum).round() * quantum
    } else {
        x
    }
}

impl ServoModel {
    pub fn validate(&self, profile: &StiffnessProfile) -> Result<(), FirmwareError> {
        let bad = |name: &'static str, reason: String| Err(FirmwareError::Invalid { name, reason });
        if !(self.theta_max.is_finite() && self.theta_max > 0.0) {
            return bad("theta_max", format!("must be finite and > 0, got {}", self.theta_max));
        }
        if !(self.k_stop.is_finite() && self.k_stop >= 100.0 * profile.k_max) {
            return bad(
                "k_stop",
                format!("must be >= 100 * k_max = {}, got {}", 100.0 * profile.k_max, self.k_stop),
            );
        }
        for (name, q) in [
            ("position_quantum", self.position_quantum),
            ("torque_quantum", self.torque_quantum),
        ] {
            if !(q.is_finite() && q >= 0.0) {
                return bad(name, format!("must be finite and >= 0, got {q}"));
            }
        }
        Ok(())
    }

    /// Spring torque of the end stops, zero inside `±theta_max`.
    pub fn hard_stop_torque(&self, theta: f64) -> f64 {
        let overshoot = theta.abs() - self.theta_max;
        if overshoot > 0.0 {
            -self.k_stop * overshoot * theta.signum()
        } else {
            0.0
        }
    }

    pub fn measure(&self, theta: f64) -> f64 {
        quantize(theta, self.position_quantum)
    }

    pub fn command(&self, tau: f64) -> f64 {
        quantize(tau, self.torque_quantum)
    }
}
