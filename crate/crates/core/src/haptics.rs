//! Admittance dynamics, re-centering stiffness and reference generation for a
//! single-axis force-feedback joystick.
//!
//! Frames: the case frame is inertial, with the knob at rest when its axis is
//! colinear with the case axis. `theta` is the knob orientation relative to the
//! case frame and `omega` its rate, both about the single actuated axis.
//!
//! The closed-loop admittance dynamics are
//!
//! ```text
//! d_adm * dω/dt + m_adm * ω = -τ + τ_fb,total
//! τ_fb,total = τ_fb,rec + τ_fb,ext
//! τ_fb,rec   = -K_rec(θ) * θ
//! ```
//!
//! where `d_adm` is the inertia coefficient and `m_adm` the damping coefficient
//! (the names follow the convention used throughout the haptics literature this
//! device comes from, even though the letters suggest the opposite). The robot
//! reference is a velocity command proportional to the knob angle and its
//! running integral.
//!
//! Everything in this module is a pure function of its arguments. Values are
//! `Copy` and can be freely shared between threads.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Peak torque the actuator can render, N·m.
pub const TORQUE_CEILING: f64 = 0.44;

/// Peak force at the finger position corresponding to [`TORQUE_CEILING`], N.
pub const FINGER_FORCE_CEILING: f64 = 20.0;

/// Lowest acceptable control-loop rate, Hz (tactile bandwidth).
pub const MIN_LOOP_RATE_HZ: f64 = 400.0;

/// Largest admissible integration step, s.
pub const MAX_DT: f64 = 1.0 / MIN_LOOP_RATE_HZ;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HapticsError {
    #[error("non-finite value for {0}")]
    NonFinite(&'static str),
    #[error("invalid {name}: {reason}")]
    InvalidParam { name: &'static str, reason: String },
}

pub type Result<T> = std::result::Result<T, HapticsError>;

fn finite(name: &'static str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(HapticsError::NonFinite(name))
    }
}

fn invalid(name: &'static str, reason: impl Into<String>) -> HapticsError {
    HapticsError::InvalidParam {
        name,
        reason: reason.into(),
    }
}

/// One sample of the device state.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct JoystickState {
    /// Knob angle, rad.
    pub theta: f64,
    /// Knob rate, rad/s.
    pub omega: f64,
    /// Interaction torque τ as sensed by the servo, N·m. This is the load the
    /// hand puts on the actuator, so a push in the +θ direction reads negative.
    pub tau_operator: f64,
    /// Time, s.
    pub t: f64,
}

impl JoystickState {
    pub fn at_rest(theta: f64) -> Self {
        Self {
            theta,
            ..Self::default()
        }
    }

    pub fn is_finite(&self) -> bool {
        self.theta.is_finite()
            && self.omega.is_finite()
            && self.tau_operator.is_finite()
            && self.t.is_finite()
    }
}

/// Parameters of the admittance filter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdmittanceParams {
    /// Inertia coefficient, N·m·s²/rad.
    pub d_adm: f64,
    /// Damping coefficient, N·m·s/rad.
    pub m_adm: f64,
    /// Torque ceiling applied to the summed feedback, N·m.
    pub tau_max: f64,
    /// Integration step, s.
    pub dt: f64,
}

impl Default for AdmittanceParams {
    fn default() -> Self {
        Self {
            d_adm: 0.01,
            m_adm: 0.15,
            tau_max: TORQUE_CEILING,
            dt: 0.001,
        }
    }
}

impl AdmittanceParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("d_adm", self.d_adm),
            ("m_adm", self.m_adm),
            ("tau_max", self.tau_max),
            ("dt", self.dt),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(name, format!("must be finite and > 0, got {v}")));
            }
        }
        if self.dt > MAX_DT {
            return Err(invalid(
                "dt",
                format!("{} s is slower than the {MIN_LOOP_RATE_HZ} Hz minimum loop rate", self.dt),
            ));
        }
        Ok(())
    }

    pub fn rate_hz(&self) -> f64 {
        1.0 / self.dt
    }

    /// Time constant of the free ω-dynamics, s.
    pub fn time_constant(&self) -> f64 {
        self.d_adm / self.m_adm
    }
}

/// Shape of the re-centering stiffness: a deadzone around the center, a stiff
/// notch band, then a stiffness that ramps down towards `k_min`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StiffnessProfile {
    /// Center position, rad.
    pub theta0: f64,
    /// Deadzone half-width, rad.
    pub q_dz: f64,
    /// Notch range, rad.
    pub n: f64,
    /// N·m/rad.
    pub k_min: f64,
    /// N·m/rad.
    pub k_max: f64,
}

impl Default for StiffnessProfile {
    fn default() -> Self {
        Self {
            theta0: 0.0,
            q_dz: 0.05,
            n: 0.3,
            k_min: 0.2,
            k_max: 1.0,
        }
    }
}

impl StiffnessProfile {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("theta0", self.theta0),
            ("q_dz", self.q_dz),
            ("n", self.n),
            ("k_min", self.k_min),
            ("k_max", self.k_max),
        ] {
            finite(name, v)?;
        }
        if self.q_dz < 0.0 {
            return Err(invalid("q_dz", "must be >= 0"));
        }
        if self.n <= self.q_dz {
            return Err(invalid("n", format!("must exceed q_dz ({})", self.q_dz)));
        }
        if self.k_min < 0.0 {
            return Err(invalid("k_min", "must be >= 0"));
        }
        if self.k_max < self.k_min {
            return Err(invalid("k_max", format!("must be >= k_min ({})", self.k_min)));
        }
        Ok(())
    }

    /// Stiffness drop across the outer ramp, `k_max - k_min`.
    pub fn delta_k(&self) -> f64 {
        self.k_max - self.k_min
    }
}

/// Robot reference produced from the knob angle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceState {
    /// Commanded velocity, m/s.
    pub v_ref: f64,
    /// Commanded position, m.
    pub p_ref: f64,
    /// Operator-set maximum velocity, m/s.
    pub v_max: f64,
}

impl ReferenceState {
    pub fn new(v_max: f64) -> Self {
        Self {
            v_ref: 0.0,
            p_ref: 0.0,
            v_max,
        }
    }
}

/// Re-centering gain `K_rec(θ)`.
///
/// With `d = |θ - θ0|`:
/// * `d < q_dz`: 0 (deadzone)
/// * `q_dz <= d <= n`: `k_max` (notch)
/// * otherwise `k_min + ΔK·(1 - (d - n)/n)`, floored at `k_min`
///
/// The result lies in `[0, k_max]`. It jumps from 0 to `k_max` at the deadzone
/// edge and is continuous at the notch edge.
pub fn recentering_stiffness(theta: f64, profile: &StiffnessProfile) -> Result<f64> {
    let theta = finite("theta", theta)?;
    let d = (theta - profile.theta0).abs();
    let k = if d < profile.q_dz {
        0.0
    } else if d <= profile.n {
        profile.k_max
    } else {
        let ramp = profile.k_min + profile.delta_k() * (1.0 - (d - profile.n) / profile.n);
        // the raw ramp goes negative past d = 2n
        ramp.max(profile.k_min)
    };
    Ok(k)
}

/// Re-centering torque `-K_rec(θ)·θ`, N·m.
pub fn recentering_torque(theta: f64, profile: &StiffnessProfile) -> Result<f64> {
    let k = recentering_stiffness(theta, profile)?;
    Ok(-k * theta)
}

/// Sum of re-centering and external feedback, saturated at `±tau_max`.
///
/// This is the single place the actuator limit is enforced. A NaN sum renders
/// as zero torque.
pub fn total_feedback(tau_rec: f64, tau_ext: f64, tau_max: f64) -> f64 {
    let sum = tau_rec + tau_ext;
    if sum.is_nan() {
        return 0.0;
    }
    sum.clamp(-tau_max, tau_max)
}

/// Advances the admittance dynamics by one step of `params.dt`.
///
/// Semi-implicit Euler: the damping term is taken at the new rate, then the
/// angle is advanced with the new rate.
///
/// ```text
/// ω⁺ = (D·ω + dt·(−τ + τ_fb)) / (D + dt·M)
/// θ⁺ = θ + dt·ω⁺
/// ```
pub fn step_dynamics(
    state: JoystickState,
    tau_fb_total: f64,
    params: &AdmittanceParams,
) -> Result<JoystickState> {
    if !state.is_finite() {
        return Err(HapticsError::NonFinite("state"));
    }
    let tau_fb_total = finite("tau_fb_total", tau_fb_total)?;
    let AdmittanceParams { d_adm, m_adm, dt, .. } = *params;
    let drive = -state.tau_operator + tau_fb_total;
    let omega = (d_adm * state.omega + dt * drive) / (d_adm + dt * m_adm);
    let next = JoystickState {
        theta: state.theta + dt * omega,
        omega,
        tau_operator: state.tau_operator,
        t: state.t + dt,
    };
    if next.is_finite() {
        Ok(next)
    } else {
        Err(HapticsError::NonFinite("integrated state"))
    }
}

/// Velocity reference `(v_max/2)·θ`, with `θ` zeroed inside `input_deadzone`.
///
/// Pass `input_deadzone = 0` for the bare proportional law.
pub fn velocity_reference(theta: f64, v_max: f64, input_deadzone: f64) -> f64 {
    let theta = if theta.abs() < input_deadzone { 0.0 } else { theta };
    0.5 * v_max * theta
}

/// Trapezoidal update of the position reference with a new velocity sample.
pub fn integrate_reference(reference: ReferenceState, v_new: f64, dt: f64) -> ReferenceState {
    debug_assert!(dt > 0.0, "integration step must be positive");
    ReferenceState {
        v_ref: v_new,
        p_ref: reference.p_ref + dt * (reference.v_ref + v_new) / 2.0,
        v_max: reference.v_max,
    }
}
