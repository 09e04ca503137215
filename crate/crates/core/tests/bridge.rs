mod common;

use hatpic_core::bridge::{BridgeConfig, BridgeCore};
use hatpic_core::bus::{topics, BusMessage};
use hatpic_core::haptics::{integrate_reference, velocity_reference, ReferenceState};
use hatpic_core::protocol::{Message, Parser};
use hatpic_core::scenario::Scenario;
use hatpic_core::sim::{replay_capture, run_scenario, SimOptions};
use hatpic_core::transport::TransportSpec;
use proptest::prelude::*;

fn load(name: &str) -> Scenario {
    Scenario::load(&common::scenario_path(name)).unwrap()
}

fn on(topic: &'static str) -> impl Fn(&&BusMessage) -> bool {
    move |m| m.topic == topic
}

#[test]
fn p_ref_recomputed_from_published_joystick_states() {
    let mut s = load("chirp.toml");
    s.duration = 3.0;
    let opts = SimOptions {
        keep_bus: true,
        ..Default::default()
    };
    let (_, out) = run_scenario(&s, opts).unwrap();
    let states: Vec<&BusMessage> = out.bus.iter().filter(on(topics::JOYSTICK_STATE)).collect();
    let refs: Vec<&BusMessage> = out.bus.iter().filter(on(topics::ROBOT_REF)).collect();
    assert_eq!(states.len(), refs.len());
    assert!(states.len() > 1000);

    let v_max = s.bridge.v_max;
    let dz = s.stiffness.q_dz;
    let mut r = ReferenceState::new(v_max);
    let mut prev_t: Option<f64> = None;
    for (js, rf) in states.iter().zip(&refs) {
        // JSON round trip through text, as a remote subscriber would see it
        let js = BusMessage::from_json(&js.to_json().unwrap()).unwrap();
        let rf = BusMessage::from_json(&rf.to_json().unwrap()).unwrap();
        let theta = js.get_f64("theta").unwrap();
        let v = velocity_reference(theta, v_max, dz);
        r = match prev_t {
            None => ReferenceState { v_ref: v, ..r },
            Some(t0) => integrate_reference(r, v, js.t - t0),
        };
        prev_t = Some(js.t);
        assert_eq!(rf.t, js.t);
        assert_eq!(rf.get_f64("v_ref").unwrap().to_bits(), r.v_ref.to_bits());
        assert_eq!(rf.get_f64("p_ref").unwrap().to_bits(), r.p_ref.to_bits(), "t={}", js.t);
    }
}

#[test]
fn replaying_a_capture_is_referentially_transparent() {
    let s = load("wall.toml");
    let opts = SimOptions {
        capture: true,
        keep_bus: true,
        ..Default::default()
    };
    let (_, live) = run_scenario(&s, opts.clone()).unwrap();
    let (_, again) = run_scenario(&s, opts).unwrap();
    assert_eq!(live.capture, again.capture);

    let (a, da) = replay_capture(&s, &live.capture).unwrap();
    let (b, db) = replay_capture(&s, &live.capture).unwrap();
    assert_eq!(a, b);
    assert_eq!(da, db);
    let refs = |ms: &[BusMessage]| -> Vec<BusMessage> { ms.iter().filter(on(topics::ROBOT_REF)).cloned().collect() };
    // the offline bridge publishes exactly what the live one did
    assert_eq!(refs(&a), refs(&live.bus));
}

#[test]
fn transports_do_not_change_the_trace() {
    let mut s = load("wall_soft.toml");
    s.duration = 1.0;
    let (base, _) = run_scenario(&s, SimOptions::default()).unwrap();
    for t in ["tcp:127.0.0.1:0", "pty"] {
        let opts = SimOptions {
            transport: Some(t.parse::<TransportSpec>().unwrap()),
            ..Default::default()
        };
        let (rows, out) = run_scenario(&s, opts).unwrap();
        assert_eq!(rows, base, "{t}");
        assert_eq!(out.summary.resyncs(), 0);
    }
}

fn bridge() -> BridgeCore {
    BridgeCore::new(BridgeConfig::default(), Scenario::default().device_config()).unwrap()
}

proptest! {
    #[test]
    fn feedback_frames_stay_within_declared_bound(forces in proptest::collection::vec(0.0..1e4f64, 1..50)) {
        let mut b = bridge();
        let bound = b.config().feedback_gain * b.config().f_max;
        let mut parser = Parser::new();
        for (i, f) in forces.iter().enumerate() {
            let msg = BusMessage::new(topics::ROBOT_STATE, 0.0).num("f_contact", *f);
            let out = b.on_bus_message(&msg, i as f64 * 0.002).unwrap();
            let frames = parser.feed(&out.to_device);
            prop_assert_eq!(frames.len(), 1);
            let Message::Feedback(p) = Message::from_frame(&frames[0]).unwrap() else {
                panic!("not a feedback frame");
            };
            let tau = p.torque();
            prop_assert!(tau.abs() <= bound + 1e-6);
            let want = -0.022 * f.min(20.0);
            prop_assert!((tau - want).abs() <= 0.5e-6);
        }
        prop_assert!(parser.diagnostics().is_clean());
    }
}

#[test]
fn rejects_bad_forces() {
    let mut b = bridge();
    for f in [-1.0, f64::NAN] {
        let msg = BusMessage {
            topic: topics::ROBOT_STATE.into(),
            t: 0.0,
            body: [("f_contact".to_string(), serde_json::json!(f))].into_iter().collect(),
        };
        assert!(b.on_bus_message(&msg, 0.0).is_err(), "{f}");
    }
}
