mod common;

use common::{mean, rel_err, WallProblem};
use hatpic_core::clock::RealClock;
use hatpic_core::firmware::{
    run_control_loop, run_telemetry_sender, ControlLoop, FrameSink, LoopIo, OperatorInput, StopAt,
};
use hatpic_core::haptics::{integrate_reference, ReferenceState};
use hatpic_core::protocol::{FrameType, Parser};
use hatpic_core::robot::{step_robot, RobotState, WorldConfig};
use hatpic_core::scenario::Scenario;
use hatpic_core::sim::{run_scenario, SimOptions};
use hatpic_core::trace::{check_rows, TraceRow};
use std::io;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

fn load(name: &str) -> Scenario {
    Scenario::load(&common::scenario_path(name)).unwrap()
}

fn problem(s: &Scenario) -> WallProblem {
    let p = s.stiffness;
    WallProblem {
        push: s.operator.amplitude,
        profile: (p.theta0, p.q_dz, p.n, p.k_min, p.k_max),
        tau_max: s.admittance.tau_max,
        theta_max: s.servo.theta_max,
        k_stop: s.servo.k_stop,
        gain: s.bridge.feedback_gain,
        f_max: s.bridge.f_max,
        yield_damping: s.world.yield_damping,
        max_speed: s.world.max_speed,
    }
}

fn tail(rows: &[TraceRow]) -> &[TraceRow] {
    &rows[rows.len() * 9 / 10..]
}

#[test]
fn resting_stick_stays_put() {
    let s = Scenario {
        duration: 2.0,
        ..Default::default()
    };
    let (rows, _) = run_scenario(&s, SimOptions::default()).unwrap();
    assert!(rows.iter().all(|r| r.theta == 0.0 && r.tau_fb_total == 0.0));
}

#[test]
fn free_space_push_settles_on_torque_balance() {
    let s = load("freespace.toml");
    // no contact: same balance as a wall problem with zero reflected force
    let oracle = WallProblem {
        gain: 0.0,
        ..problem(&s)
    }
    .solve();
    assert!((oracle.theta - 0.2).abs() < 1e-9);
    let (rows, out) = run_scenario(&s, SimOptions::default()).unwrap();
    assert!(rel_err(out.summary.steady_theta, oracle.theta) < 0.01);
    assert!(rows.iter().all(|r| r.f_contact == 0.0));
}

#[test]
fn overpowering_push_ends_on_the_hard_stop() {
    let s = load("hardstop.toml");
    let oracle = WallProblem {
        gain: 0.0,
        ..problem(&s)
    }
    .solve();
    assert!(oracle.theta > s.servo.theta_max);
    let (rows, out) = run_scenario(&s, SimOptions::default()).unwrap();
    assert!(rel_err(out.summary.steady_theta, oracle.theta) < 1e-3);
    assert!(rows.iter().all(|r| r.tau_fb_total.abs() <= 0.44));
}

#[test]
fn soft_contact_reflects_gain_times_force() {
    let s = load("wall_soft.toml");
    let oracle = problem(&s).solve();
    let (rows, out) = run_scenario(&s, SimOptions::default()).unwrap();
    let t = tail(&rows);
    let f = mean(t.iter().map(|r| r.f_contact));
    let ext = mean(t.iter().map(|r| r.tau_fb_ext));
    assert!(rel_err(f, oracle.f_contact) < 0.02, "{f}");
    assert!(rel_err(ext, oracle.tau_ext) < 0.02, "{ext}");
    assert!(rel_err(out.summary.steady_theta, oracle.theta) < 0.02);
    // unsaturated: the hand feels exactly the reflected force on top of recentering
    assert!(t.iter().all(|r| r.tau_fb_total.abs() < 0.44));
    for r in t {
        assert!((r.tau_fb_ext + 0.022 * r.f_contact).abs() < 0.022 * 0.1 + 1e-6, "{r:?}");
    }
}

#[test]
fn robot_presses_wall_to_force_balance() {
    let world = WorldConfig {
        wall_position: 0.2,
        ..Default::default()
    };
    let p_ref = world.wall_position + 0.1;
    let mut st = RobotState::default();
    for _ in 0..20_000 {
        st = step_robot(st, p_ref, &world, 0.002);
    }
    // at rest: bandwidth·(p_ref − p) = k·(p − wall)/yield, solved by bisection
    let g = |p: f64| world.bandwidth * (p_ref - p) - world.wall_stiffness * (p - world.wall_position) / world.yield_damping;
    let (mut lo, mut hi) = (world.wall_position, p_ref);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if g(mid) > 0.0 {
            lo = mid
        } else {
            hi = mid
        }
    }
    let p_ss = 0.5 * (lo + hi);
    assert!(rel_err(st.p, p_ss) < 1e-6, "{} {p_ss}", st.p);
    assert!(rel_err(st.f_contact, 500.0 * (p_ss - 0.2)) < 1e-4);
    assert!(st.p > world.wall_position && st.p < p_ref);
}

#[test]
fn reference_integration_examples() {
    // constant integrand: the reference is already moving at 1 m/s
    let mut r = ReferenceState {
        v_ref: 1.0,
        ..ReferenceState::new(1.0)
    };
    for _ in 0..100 {
        r = integrate_reference(r, 1.0, 0.01);
    }
    assert!((r.p_ref - 1.0).abs() < 1e-12);

    let mut r = ReferenceState::new(1.0);
    let mut by_hand = 0.0;
    let mut prev = 0.0;
    for k in 1..=1000 {
        let v = k as f64 * 0.001;
        r = integrate_reference(r, v, 0.001);
        by_hand += 0.001 * (prev + v) / 2.0;
        prev = v;
    }
    assert_eq!(r.p_ref.to_bits(), by_hand.to_bits());
    assert!((r.p_ref - 0.5).abs() < 1e-12);

    let r0 = ReferenceState::new(1.0);
    assert_eq!(integrate_reference(r0, 0.0, 0.1), r0);
}

#[test]
fn bundled_scenarios_pass_the_trace_checker() {
    for name in common::BUNDLED {
        let s = load(name);
        let (rows, out) = run_scenario(&s, SimOptions::default()).unwrap();
        let check = check_rows(&rows, s.admittance.tau_max);
        assert!(check.ok(), "{name}: {:?}", check.violations);
        assert!(out.summary.device_diag.is_clean() && out.summary.host_diag.is_clean(), "{name}");
    }
}

#[derive(Default)]
struct Collect(Mutex<Vec<u8>>);

impl FrameSink for Collect {
    fn send(&self, bytes: &[u8]) -> io::Result<()> {
        self.0.lock().unwrap().extend_from_slice(bytes);
        Ok(())
    }
}

#[test]
fn telemetry_paced_at_500_hz_in_real_time() {
    let s = Scenario {
        operator: OperatorInput::hold(0.1),
        ..Default::default()
    };
    let mut ctl = ControlLoop::new(s.loop_config()).unwrap();
    let io = Arc::new(LoopIo::with_telemetry_every(64, s.telemetry_decimation()));
    let sink = Arc::new(Collect::default());
    let (stop_loop, stop_sender) = (Arc::new(AtomicBool::new(false)), Arc::new(AtomicBool::new(false)));
    let clock = Arc::new(RealClock::new());
    let sender = {
        let (io, stop, clock, sink) = (io.clone(), stop_sender.clone(), clock.clone(), sink.clone());
        thread::spawn(move || run_telemetry_sender(&io, &*sink, 500.0, &*clock, &stop))
    };
    let looper = {
        let (io, stop, clock) = (io.clone(), stop_loop.clone(), clock.clone());
        thread::spawn(move || run_control_loop(&mut ctl, &io, &*clock, StopAt::Flag(&stop), |_| {}))
    };
    thread::sleep(Duration::from_secs(1));
    stop_loop.store(true, Ordering::Relaxed);
    let ran = looper.join().unwrap();
    // one more sender period to flush the last sample
    thread::sleep(Duration::from_millis(10));
    stop_sender.store(true, Ordering::Relaxed);
    let summary = sender.join().unwrap();
    assert_eq!(ran.telemetry_dropped, 0);

    let frames = Parser::new().feed(&sink.0.lock().unwrap());
    assert_eq!(frames.len() as u64, summary.frames);
    assert!(frames.iter().all(|f| f.ftype == FrameType::Telemetry));
    assert!((499..=502).contains(&frames.len()), "{}", frames.len());
    for w in frames.windows(2) {
        assert_eq!(w[1].seq, w[0].seq.wrapping_add(1));
    }
}
