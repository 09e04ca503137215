//! Injectable time source for the control loop and its peers.
//!
//! [`SimClock`] only moves when someone waits on it, which makes whole-stack
//! runs deterministic and as fast as the CPU allows. [`RealClock`] paces
//! against the monotonic wall clock.

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant};

pub trait Clock: Send + Sync {
    /// Time since the clock's epoch.
    fn now(&self) -> Duration;

    /// Block until `deadline` with OS-sleep granularity. Used by tasks that
    /// must yield the CPU while idle.
    fn sleep_until(&self, deadline: Duration);

    /// Block until `deadline` as precisely as the platform allows.
    fn wait_until(&self, deadline: Duration) {
        self.sleep_until(deadline)
    }

    fn now_secs(&self) -> f64 {
        self.now().as_secs_f64()
    }
}

/// Tick-on-demand clock. Waiting on a deadline jumps straight to it.
#[derive(Debug, Default)]
pub struct SimClock {
    now_ns: AtomicU64,
}

impl SimClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn advance(&self, by: Duration) {
        self.now_ns
            .fetch_add(by.as_nanos() as u64, Ordering::SeqCst);
    }

    pub fn set(&self, to: Duration) {
        self.now_ns.fetch_max(to.as_nanos() as u64, Ordering::SeqCst);
    }
}

impl Clock for SimClock {
    fn now(&self) -> Duration {
        Duration::from_nanos(self.now_ns.load(Ordering::SeqCst))
    }

    fn sleep_until(&self, deadline: Duration) {
        self.set(deadline);
    }
}

/// Monotonic wall clock. `wait_until` sleeps to within `spin_margin` of the
/// deadline and spins the remainder. On a single core spinning only delays
/// the threads the loop is waiting on, so the margin defaults to zero there.
#[derive(Debug, Clone)]
pub struct RealClock {
    epoch: Instant,
    spin_margin: Duration,
}

impl RealClock {
    pub fn new() -> Self {
        Self {
            epoch: Instant::now(),
            spin_margin: default_spin_margin(),
        }
    }

    pub fn with_spin_margin(mut self, margin: Duration) -> Self {
        self.spin_margin = margin;
        self
    }
}

fn default_spin_margin() -> Duration {
    match std::thread::available_parallelism() {
        Ok(n) if n.get() > 1 => Duration::from_micros(250),
        _ => Duration::ZERO,
    }
}

impl Default for RealClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for RealClock {
    fn now(&self) -> Duration {
        self.epoch.elapsed()
    }

    fn sleep_until(&self, deadline: Duration) {
        let now = self.now();
        if deadline > now {
            std::thread::sleep(deadline - now);
        }
    }

    fn wait_until(&self, deadline: Duration) {
        let now = self.now();
        if deadline > now + self.spin_margin {
            std::thread::sleep(deadline - now - self.spin_margin);
        }
        while self.now() < deadline {
            std::hint::spin_loop();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sim_clock_jumps_to_deadline() {
        let c = SimClock::new();
        assert_eq!(c.now(), Duration::ZERO);
        c.wait_until(Duration::from_millis(5));
        assert_eq!(c.now(), Duration::from_millis(5));
        // never moves backwards
        c.sleep_until(Duration::from_millis(1));
        assert_eq!(c.now(), Duration::from_millis(5));
        c.advance(Duration::from_micros(500));
        assert_eq!(c.now(), Duration::from_micros(5500));
    }

    #[test]
    fn real_clock_waits() {
        let c = RealClock::new();
        let target = c.now() + Duration::from_millis(3);
        c.wait_until(target);
        assert!(c.now() >= target);
    }
}
