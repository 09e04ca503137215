//! Software twin of a one-axis haptic joystick teleoperating a robot.
//!
//! - [`haptics`]: stiffness profile, admittance dynamics, velocity reference
//! - [`protocol`]: framed serial protocol between device and host
//! - [`firmware`]: emulated device control loop and telemetry sender
//! - [`bridge`]: host driver turning telemetry into robot references
//! - [`robot`]: kinematic robot with a contact wall
//! - [`bus`]: newline-delimited JSON topic bus
//! - [`sim`]: deterministic single-process runs of a [`scenario`]
//! - [`serve`]: live multi-threaded stack for the operator console

pub mod bridge;
pub mod bus;
pub mod clock;
pub mod firmware;
pub mod haptics;
pub mod protocol;
pub mod robot;
pub mod scenario;
pub mod serve;
pub mod sim;
pub mod trace;
pub mod transport;
