//! One-DoF robot along the world x axis, tracking the joystick's position
//! reference, with a one-sided spring-damper wall as its environment.
//!
//! The robot is kinematic with a tracking bandwidth:
//!
//! ```text
//! v_cmd = clamp(bandwidth·(p_ref − p), ±max_speed)
//! v     = v_cmd − f_contact / yield_damping
//! p⁺    = p + dt·v
//! f_contact = k_wall·(p − wall) + b_wall·max(v, 0)   if p > wall, else 0
//! ```
//!
//! `yield_damping` is how compliant the robot's own position controller is:
//! pressing into the wall at a saturated command settles where
//! `f_contact = yield_damping · max_speed`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("invalid world config {name}: {reason}")]
pub struct WorldError {
    pub name: &'static str,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RobotState {
    /// m
    pub p: f64,
    /// m/s
    pub v: f64,
    /// N, never negative
    pub f_contact: f64,
}

fn inf() -> f64 {
    f64::INFINITY
}
fn default_yield() -> f64 {
    100.0
}
fn default_rate() -> f64 {
    500.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    /// Tracking bandwidth, 1/s.
    pub bandwidth: f64,
    /// m; `inf` means no wall.
    #[serde(default = "inf")]
    pub wall_position: f64,
    /// N/m
    #[serde(default)]
    pub wall_stiffness: f64,
    /// N·s/m
    #[serde(default)]
    pub wall_damping: f64,
    /// Tracking velocity limit, m/s.
    #[serde(default = "inf")]
    pub max_speed: f64,
    /// N·s/m
    #[serde(default = "default_yield")]
    pub yield_damping: f64,
    /// Step rate when the robot runs its own loop, Hz.
    #[serde(default = "default_rate")]
    pub rate: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            bandwidth: 5.0,
            wall_position: f64::INFINITY,
            wall_stiffness: 500.0,
            wall_damping: 10.0,
            max_speed: f64::INFINITY,
            yield_damping: default_yield(),
            rate: default_rate(),
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<(), WorldError> {
        let bad = |name, reason: &str| {
            Err(WorldError {
                name,
                reason: reason.to_owned(),
            })
        };
        if !(self.bandwidth.is_finite() && self.bandwidth > 0.0) {
            return bad("bandwidth", "must be finite and > 0");
        }
        if self.wall_position.is_nan() {
            return bad("wall_position", "must not be NaN");
        }
        for (name, v) in [
            ("wall_stiffness", self.wall_stiffness),
            ("wall_damping", self.wall_damping),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(name, "must be finite and >= 0");
            }
        }
        if !(self.max_speed > 0.0) {
            return bad("max_speed", "must be > 0");
        }
        if !(self.yield_damping > 0.0) {
            return bad("yield_damping", "must be > 0");
        }
        if !(self.rate.is_finite() && self.rate > 0.0) {
            return bad("rate", "must be finite and > 0");
        }
        Ok(())
    }

    pub fn contact_force(&self, p: f64, v: f64) -> f64 {
        if p > self.wall_position {
            self.wall_stiffness * (p - self.wall_position) + self.wall_damping * v.max(0.0)
        } else {
            0.0
        }
    }
}

/// Advances the robot by `dt` towards `p_ref`.
pub fn step_robot(state: RobotState, p_ref: f64, world: &WorldConfig, dt: f64) -> RobotState {
    debug_assert!(dt > 0.0);
    let v_cmd = (world.bandwidth * (p_ref - state.p)).clamp(-world.max_speed, world.max_speed);
    let v = v_cmd - world.contact_force(state.p, state.v) / world.yield_damping;
    let p = state.p + dt * v;
    RobotState {
        p,
        v,
        f_contact: world.contact_force(p, v),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(world: &WorldConfig, p_ref: f64, seconds: f64) -> Vec<RobotState> {
        let dt = 1.0 / world.rate;
        let mut s = RobotState::default();
        (0..(seconds * world.rate) as usize)
            .map(|_| {
                s = step_robot(s, p_ref, world, dt);
                s
            })
            .collect()
    }

    #[test]
    fn free_tracking_converges() {
        let w = WorldConfig::default();
        let traj = run(&w, 0.3, 5.0 / w.bandwidth);
        let last = traj.last().unwrap();
        assert!((last.p - 0.3).abs() < 0.01 * 0.3, "{}", last.p);
        assert!(traj.iter().all(|s| s.f_contact == 0.0));
    }

    #[test]
    fn wall_at_infinity_is_free_space() {
        let free = WorldConfig {
            wall_stiffness: 0.0,
            wall_damping: 0.0,
            ..Default::default()
        };
        let far = WorldConfig::default();
        assert_eq!(run(&free, 0.4, 2.0), run(&far, 0.4, 2.0));
    }

    #[test]
    fn speed_limit() {
        let w = WorldConfig {
            max_speed: 0.1,
            ..Default::default()
        };
        let traj = run(&w, 10.0, 1.0);
        assert!(traj.iter().all(|s| s.v <= 0.1 + 1e-15));
    }

    #[test]
    fn wall_pushes_never_pulls() {
        let w = WorldConfig {
            wall_position: 0.1,
            ..Default::default()
        };
        let mut s = RobotState::default();
        for k in 0..3000 {
            // reference oscillates in and out of the wall
            let p_ref = 0.1 + 0.2 * ((k as f64) * 0.01).sin();
            s = step_robot(s, p_ref, &w, 0.002);
            assert!(s.f_contact >= 0.0);
            if s.p <= 0.1 {
                assert_eq!(s.f_contact, 0.0);
            }
        }
    }

    #[test]
    fn validation() {
        assert!(WorldConfig::default().validate().is_ok());
        let w = WorldConfig {
            bandwidth: 0.0,
            ..Default::default()
        };
        assert!(w.validate().is_err());
        let w = WorldConfig {
            wall_stiffness: -1.0,
            ..Default::default()
        };
        assert!(w.validate().is_err());
    }
}
