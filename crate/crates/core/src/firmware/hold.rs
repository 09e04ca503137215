/// Zero-order hold with a staleness timeout, after which the held value ramps
/// linearly to zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StalenessHold {
    value: f64,
    updated_at: Option<f64>,
    timeout: f64,
    decay: f64,
}

impl StalenessHold {
    pub const DEFAULT_TIMEOUT: f64 = 0.1;
    pub const DEFAULT_DECAY: f64 = 0.2;

    pub fn new(timeout: f64, decay: f64) -> Self {
        Self {
            value: 0.0,
            updated_at: None,
            timeout,
            decay,
        }
    }

    pub fn update(&mut self, value: f64, now: f64) {
        self.value = value;
        self.updated_at = Some(now);
    }

    pub fn age(&self, now: f64) -> Option<f64> {
        self.updated_at.map(|at| now - at)
    }

    pub fn is_stale(&self, now: f64) -> bool {
        self.age(now).is_none_or(|a| a > self.timeout)
    }

    pub fn output(&self, now: f64) -> f64 {
        let Some(age) = self.age(now) else {
            return 0.0;
        };
        if age <= self.timeout {
            self.value
        } else if self.decay > 0.0 && age < self.timeout + self.decay {
            self.value * (1.0 - (age - self.timeout) / self.decay)
        } else {
            0.0
        }
    }
}

impl Default for StalenessHold {
    fn default() -> Self {
        Self::new(Self::DEFAULT_TIMEOUT, Self::DEFAULT_DECAY)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn holds_then_decays() {
        let mut h = StalenessHold::default();
        assert_eq!(h.output(0.0), 0.0);
        h.update(0.4, 0.0);
        assert_eq!(h.output(0.05), 0.4);
        assert_eq!(h.output(0.1), 0.4);
        assert!((h.output(0.2) - 0.2).abs() < 1e-12);
        assert!(h.output(0.3).abs() < 1e-12);
        assert_eq!(h.output(0.31), 0.0);
        assert_eq!(h.output(5.0), 0.0);
        assert!(h.is_stale(0.2));
        assert!(!h.is_stale(0.09));
    }
}
