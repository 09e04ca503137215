//! Reference models written independently of the library, used as oracles.
#![allow(dead_code)]

use std::path::PathBuf;

pub fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name)
}

pub const BUNDLED: [&str; 5] = ["freespace.toml", "wall.toml", "wall_soft.toml", "hardstop.toml", "chirp.toml"];

/// Piecewise recentering gain, written out from the profile definition.
pub fn stiffness(theta: f64, theta0: f64, q_dz: f64, n: f64, k_min: f64, k_max: f64) -> f64 {
    let d = (theta - theta0).abs();
    if d < q_dz {
        return 0.0;
    }
    if d <= n {
        return k_max;
    }
    // linear ramp from k_max at d = n down to k_min - (k_max - k_min) at 2n
    let slope = (k_max - k_min) / n;
    f64::max(k_max - slope * (d - n), k_min)
}

/// Classic RK4 on `D ω̇ + M ω = u(θ)`, state (θ, ω), fixed tiny step.
pub fn rk4_trajectory(
    d: f64,
    m: f64,
    u: impl Fn(f64) -> f64,
    theta0: f64,
    omega0: f64,
    h: f64,
    steps: usize,
    record_every: usize,
) -> Vec<(f64, f64)> {
    let f = |th: f64, om: f64| (om, (u(th) - m * om) / d);
    let (mut th, mut om) = (theta0, omega0);
    let mut out = vec![(th, om)];
    for k in 1..=steps {
        let (a1, b1) = f(th, om);
        let (a2, b2) = f(th + 0.5 * h * a1, om + 0.5 * h * b1);
        let (a3, b3) = f(th + 0.5 * h * a2, om + 0.5 * h * b2);
        let (a4, b4) = f(th + h * a3, om + h * b3);
        th += h / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4);
        om += h / 6.0 * (b1 + 2.0 * b2 + 2.0 * b3 + b4);
        if k % record_every == 0 {
            out.push((th, om));
        }
    }
    out
}

/// Static equilibrium of the stick pressed into a wall by a velocity-mode robot.
#[derive(Debug, Clone, Copy)]
pub struct WallBalance {
    pub theta: f64,
    pub f_contact: f64,
    pub tau_ext: f64,
    pub tau_rec: f64,
    pub tau_total: f64,
}

pub struct WallProblem {
    /// hand torque, positive towards +θ
    pub push: f64,
    pub profile: (f64, f64, f64, f64, f64),
    pub tau_max: f64,
    pub theta_max: f64,
    pub k_stop: f64,
    pub gain: f64,
    pub f_max: f64,
    pub yield_damping: f64,
    pub max_speed: f64,
}

impl WallProblem {
    /// The robot is held at its speed limit against the wall, so its
    /// position loop pushes with `yield_damping·max_speed`.
    pub fn solve(&self) -> WallBalance {
        let f = self.yield_damping * self.max_speed;
        let tau_ext = -self.gain * f.min(self.f_max);
        let (t0, q, n, kmin, kmax) = self.profile;
        let parts = |th: f64| {
            let rec = -stiffness(th, t0, q, n, kmin, kmax) * th;
            let total = (rec + tau_ext).max(-self.tau_max).min(self.tau_max);
            let stop = if th > self.theta_max { -self.k_stop * (th - self.theta_max) } else { 0.0 };
            (rec, total, self.push + total + stop)
        };
        // first sign change going outward from the center, then bisection
        let h = 1e-4;
        let mut lo = 0.0;
        while parts(lo + h).2 > 0.0 {
            lo += h;
            assert!(lo < 10.0, "no equilibrium");
        }
        let mut hi = lo + h;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if parts(mid).2 > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let theta = 0.5 * (lo + hi);
        let (tau_rec, tau_total, _) = parts(theta);
        WallBalance {
            theta,
            f_contact: f,
            tau_ext,
            tau_rec,
            tau_total,
        }
    }
}

pub fn rel_err(got: f64, want: f64) -> f64 {
    (got - want).abs() / want.abs()
}

pub fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}
