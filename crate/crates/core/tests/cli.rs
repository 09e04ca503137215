mod common;

use std::process::{Command, Output};
use tempfile::TempDir;

fn hatpicctl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hatpicctl"))
        .args(args)
        .env("HATPIC_LOG", "error")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn scenario(name: &str) -> String {
    common::scenario_path(name).display().to_string()
}

fn path(dir: &TempDir, name: &str) -> String {
    dir.path().join(name).display().to_string()
}

fn record(dir: &TempDir, name: &str, csv: &str, extra: &[&str]) -> String {
    let out = path(dir, csv);
    let sc = scenario(name);
    let mut args = vec!["run", "--scenario", &sc, "--record", &out];
    args.extend_from_slice(extra);
    let o = hatpicctl(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    out
}

fn without_timestamp(p: &str) -> String {
    hatpic_core::trace::strip_timestamp(&std::fs::read_to_string(p).unwrap())
}

#[test]
fn run_prints_summary() {
    let o = hatpicctl(&["run", "--scenario", &scenario("freespace.toml")]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("scenario            freespace"), "{out}");
    assert!(out.contains("steady-state theta  0.200000 rad"), "{out}");
    assert!(out.contains("ticks               5000"));
}

#[test]
fn invalid_inputs_exit_2() {
    let o = hatpicctl(&["run", "--scenario", &scenario("freespace.toml"), "--duration", "0"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("duration"), "{}", stderr(&o));

    let o = hatpicctl(&["run", "--scenario", "/nonexistent/scenario.toml"]);
    assert_eq!(o.status.code(), Some(2));

    let dir = TempDir::new().unwrap();
    let bad = path(&dir, "bad.toml");
    std::fs::write(&bad, "schema = 1\nduration = 1.0\n[admittance]\nd_adm = -1.0\n").unwrap();
    let o = hatpicctl(&["run", "--scenario", &bad]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("d_adm"), "{}", stderr(&o));
}

#[test]
fn decode_lists_captured_frames() {
    let dir = TempDir::new().unwrap();
    let cap = path(&dir, "cap.bin");
    let o = hatpicctl(&["run", "--scenario", &scenario("freespace.toml"), "--duration", "0.1", "--capture", &cap]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = hatpicctl(&["decode", "--input", &cap]);
    assert!(o.status.success());
    let out = stdout(&o);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 51);
    assert!(lines[0].contains("telemetry") && lines[0].contains("seq=0"), "{}", lines[0]);
    assert!(lines[0].contains("t=0.002 s"), "{}", lines[0]);
    assert_eq!(lines[50], "frames=50 resyncs=0 crc_failures=0 unknown_type=0 bad_length=0 truncated=0");
}

#[test]
fn check_reports_ok_and_violations() {
    let dir = TempDir::new().unwrap();
    let good = record(&dir, "wall.toml", "wall.csv", &["--duration", "2"]);
    let o = hatpicctl(&["check", "--trace", &good]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).starts_with("ok   "), "{}", stdout(&o));

    // push one total past the ceiling
    let text = std::fs::read_to_string(&good).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let i = lines.iter().position(|l| l.starts_with("0.5,")).unwrap();
    let mut cols: Vec<&str> = lines[i].split(',').collect();
    cols[6] = "0.5";
    lines[i] = cols.join(",");
    let bad = path(&dir, "bad.csv");
    std::fs::write(&bad, lines.join("\n") + "\n").unwrap();
    let o = hatpicctl(&["check", "--trace", &good, &bad]);
    assert_eq!(o.status.code(), Some(1));
    let out = stdout(&o);
    assert!(out.contains("FAIL") && out.contains("tau_fb_total=0.5"), "{out}");

    let o = hatpicctl(&["check", "--trace", "/nonexistent.csv"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn replay_reproduces_a_recorded_trace() {
    let dir = TempDir::new().unwrap();
    let csv = record(&dir, "chirp.toml", "chirp.csv", &["--duration", "1"]);
    let o = hatpicctl(&["replay", "--trace", &csv]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("identical: 1000 rows"));

    let text = std::fs::read_to_string(&csv).unwrap();
    let edited = text.replacen("\n0.5,", "\n0.5000001,", 1);
    assert_ne!(edited, text);
    let changed = path(&dir, "changed.csv");
    std::fs::write(&changed, edited).unwrap();
    let o = hatpicctl(&["replay", "--trace", &changed]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("differs"), "{}", stderr(&o));
}

#[test]
fn replay_capture_publishes_references() {
    let dir = TempDir::new().unwrap();
    let cap = path(&dir, "cap.bin");
    let sc = scenario("wall.toml");
    let o = hatpicctl(&["run", "--scenario", &sc, "--duration", "0.2", "--capture", &cap]);
    assert!(o.status.success());
    let o = hatpicctl(&["replay", "--capture", &cap, "--scenario", &sc]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let last = out.lines().last().unwrap();
    assert!(last.starts_with(r#"{"topic":"replay/diag""#), "{last}");
    assert!(last.contains(r#""resyncs":0"#));
    assert!(out.lines().any(|l| l.starts_with(r#"{"topic":"robot/ref""#)));
}

#[test]
fn two_runs_give_identical_traces() {
    let dir = TempDir::new().unwrap();
    let a = record(&dir, "chirp.toml", "a.csv", &[]);
    let b = record(&dir, "chirp.toml", "b.csv", &[]);
    assert_eq!(without_timestamp(&a), without_timestamp(&b));
    // the seed is what makes them equal
    let c = record(&dir, "chirp.toml", "c.csv", &["--seed", "99"]);
    assert_ne!(without_timestamp(&a), without_timestamp(&c));
}

fn rows_only(p: &str) -> String {
    std::fs::read_to_string(p)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn transports_give_the_same_rows() {
    let dir = TempDir::new().unwrap();
    let base = record(&dir, "wall_soft.toml", "inproc.csv", &["--duration", "1"]);
    for (t, name) in [("tcp", "tcp.csv"), ("pty", "pty.csv")] {
        let other = record(&dir, "wall_soft.toml", name, &["--duration", "1", "--transport", t]);
        // the header records the transport; the rows must not notice it
        assert!(std::fs::read_to_string(&other).unwrap().contains(&format!("transport = \"{t}")));
        assert_eq!(rows_only(&base), rows_only(&other), "{t}");
    }
}
