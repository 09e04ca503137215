//! Device microcontroller emulation.
//!
//! Two logical tasks, as on the real firmware: the control loop
//! ([`control::run_control_loop`]) and the telemetry sender
//! ([`telemetry::run_telemetry_sender`]). They share only the queues and
//! latest-value mailboxes in [`LoopIo`].

pub mod control;
pub mod device;
pub mod hold;
pub mod operator;
pub mod servo;
pub mod telemetry;

pub use control::{run_control_loop, ControlLoop, LoopConfig, RunSummary, StopAt, TickReport};
pub use device::{run_device_reader, DeviceLink};
pub use hold::StalenessHold;
pub use operator::{OperatorInput, OperatorKind};
pub use servo::ServoModel;
pub use telemetry::{run_telemetry_sender, FrameSink, TelemetrySender};

use crate::haptics::{HapticsError, JoystickState};
use crate::protocol::{AckStatus, DeviceConfig};
use crossbeam::queue::ArrayQueue;
use std::sync::atomic::AtomicU64;
use std::sync::Mutex;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FirmwareError {
    #[error(transparent)]
    Haptics(#[from] HapticsError),
    #[error("invalid {name}: {reason}")]
    Invalid { name: &'static str, reason: String },
}

/// Holds only the most recent value posted.
#[derive(Debug, Default)]
pub struct Mailbox<T>(Mutex<Option<T>>);

impl<T: Clone> Mailbox<T> {
    pub fn new() -> Self {
        Self(Mutex::new(None))
    }

    pub fn post(&self, value: T) {
        *self.0.lock().unwrap() = Some(value);
    }

    pub fn take(&self) -> Option<T> {
        self.0.lock().unwrap().take()
    }

    pub fn peek(&self) -> Option<T> {
        self.0.lock().unwrap().clone()
    }
}

#[derive(Debug, Default)]
pub struct LoopCounters {
    pub ticks: AtomicU64,
    pub overruns: AtomicU64,
    pub discarded_feedback: AtomicU64,
    pub telemetry_dropped: AtomicU64,
}

/// Channels between the control loop, the telemetry sender and the device
/// link reader.
#[derive(Debug)]
pub struct LoopIo {
    /// Latest external feedback torque, N·m.
    pub feedback: Mailbox<f64>,
    /// Latest live operator torque, N·m.
    pub operator: Mailbox<f64>,
    /// Pending config-set with the seq it arrived under.
    pub config: Mailbox<(u8, DeviceConfig)>,
    /// Samples on the telemetry grid, oldest first.
    pub telemetry: ArrayQueue<JoystickState>,
    /// Control ticks per telemetry sample.
    pub telemetry_every: u64,
    pub acks: ArrayQueue<(u8, AckStatus)>,
    pub counters: LoopCounters,
}

impl LoopIo {
    /// Queues every tick's sample.
    pub fn new(telemetry_capacity: usize) -> Self {
        Self::with_telemetry_every(telemetry_capacity, 1)
    }

    /// Queues the sample of every `every`-th tick.
    pub fn with_telemetry_every(telemetry_capacity: usize, every: u64) -> Self {
        Self {
            feedback: Mailbox::new(),
            operator: Mailbox::new(),
            config: Mailbox::new(),
            telemetry: ArrayQueue::new(telemetry_capacity.max(1)),
            telemetry_every: every.max(1),
            acks: ArrayQueue::new(16),
            counters: LoopCounters::default(),
        }
    }
}
