//! Per-tick CSV traces.
//!
//! A trace starts with `#` comment lines: a format line, a wall-clock
//! timestamp line (`# generated_unix: ...`, the only line that differs
//! between identical runs), and the full scenario as `# scenario: ` lines.
//! Floats are written in shortest round-trip form, so a trace read back
//! reproduces the in-memory values exactly.

use crate::haptics::TORQUE_CEILING;
use crate::scenario::{Scenario, ScenarioError};
use serde::{Deserialize, Serialize};
use std::io::{self, BufRead, Read, Write};
use thiserror::Error;

pub const FORMAT_LINE: &str = "# hatpic trace v1";
pub const TIMESTAMP_PREFIX: &str = "# generated_unix: ";
pub const SCENARIO_PREFIX: &str = "# scenario: ";

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TraceRow {
    /// s
    pub t: f64,
    /// rad, as measured by the encoder
    pub theta: f64,
    /// rad/s
    pub omega: f64,
    /// N·m, torque the servo senses from the hand
    pub tau_operator: f64,
    pub tau_fb_rec: f64,
    pub tau_fb_ext: f64,
    pub tau_fb_total: f64,
    /// m/s
    pub v_ref: f64,
    /// m
    pub p_ref: f64,
    /// m
    pub p: f64,
    /// N
    pub f_contact: f64,
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("trace header: {0}")]
    Header(String),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
}

pub struct TraceWriter<W: Write> {
    csv: csv::Writer<W>,
}

impl<W: Write> TraceWriter<W> {
    /// Writes the comment header. `generated_unix` is omitted when `None`.
    pub fn new(mut out: W, scenario: &Scenario, generated_unix: Option<u64>) -> io::Result<Self> {
        writeln!(out, "{FORMAT_LINE}")?;
        if let Some(ts) = generated_unix {
            writeln!(out, "{TIMESTAMP_PREFIX}{ts}")?;
        }
        for line in scenario.to_toml().lines() {
            writeln!(out, "{SCENARIO_PREFIX}{line}")?;
        }
        Ok(Self {
            csv: csv::Writer::from_writer(out),
        })
    }

    pub fn write_row(&mut self, row: &TraceRow) -> Result<(), TraceError> {
        self.csv.serialize(row)?;
        Ok(())
    }

    pub fn flush(&mut self) -> io::Result<()> {
        self.csv.flush()
    }

    pub fn into_inner(self) -> io::Result<W> {
        self.csv.into_inner().map_err(|e| e.into_error())
    }
}

pub fn now_unix() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    /// Comment lines, without the leading `#`.
    pub comments: Vec<String>,
    pub rows: Vec<TraceRow>,
}

impl Trace {
    /// The scenario embedded in the header.
    pub fn scenario(&self) -> Result<Option<Scenario>, TraceError> {
        let prefix = &SCENARIO_PREFIX[1..];
        let lines: Vec<&str> = self
            .comments
            .iter()
            .filter_map(|c| c.strip_prefix(prefix))
            .collect();
        if lines.is_empty() {
            return Ok(None);
        }
        Ok(Some(Scenario::from_toml(&lines.join("\n"))?))
    }
}

pub fn read_trace(input: impl Read) -> Result<Trace, TraceError> {
    let mut reader = io::BufReader::new(input);
    let mut comments = Vec::new();
    let mut body = String::new();
    let mut line = String::new();
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            break;
        }
        if let Some(c) = line.strip_prefix('#') {
            comments.push(c.trim_end_matches(['\n', '\r']).to_owned());
        } else {
            body.push_str(&line);
            reader.read_to_string(&mut body)?;
            break;
        }
    }
    if comments.first().map(String::as_str) != Some(&FORMAT_LINE[1..]) {
        return Err(TraceError::Header(format!("missing {FORMAT_LINE:?} line")));
    }
    let mut csv = csv::Reader::from_reader(body.as_bytes());
    let rows = csv.deserialize().collect::<Result<Vec<TraceRow>, _>>()?;
    Ok(Trace { comments, rows })
}

/// Trace text with the timestamp line removed, for run-to-run comparison.
pub fn strip_timestamp(text: &str) -> String {
    text.lines()
        .filter(|l| !l.starts_with(TIMESTAMP_PREFIX))
        .flat_map(|l| [l, "\n"])
        .collect()
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TraceCheck {
    pub rows: usize,
    pub max_abs_tau_fb_total: f64,
    pub violations: Vec<String>,
}

impl TraceCheck {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Offline consistency check of a trace:
/// - every value finite
/// - `t` strictly increasing
/// - `tau_fb_total` equals `rec + ext` clamped to `±tau_max`, exactly
pub fn check_rows(rows: &[TraceRow], tau_max: f64) -> TraceCheck {
    const MAX_REPORTED: usize = 20;
    let mut check = TraceCheck {
        rows: rows.len(),
        ..Default::default()
    };
    let mut report = |msg: String| {
        if check.violations.len() < MAX_REPORTED {
            check.violations.push(msg);
        }
    };
    let mut prev_t = f64::NEG_INFINITY;
    let mut max_total: f64 = 0.0;
    for (i, r) in rows.iter().enumerate() {
        let values = [
            r.t, r.theta, r.omega, r.tau_operator, r.tau_fb_rec, r.tau_fb_ext, r.tau_fb_total,
            r.v_ref, r.p_ref, r.p, r.f_contact,
        ];
        if values.iter().any(|v| !v.is_finite()) {
            report(format!("row {i}: non-finite value"));
            continue;
        }
        if r.t <= prev_t {
            report(format!("row {i}: t={} does not increase past {prev_t}", r.t));
        }
        prev_t = r.t;
        let sum = r.tau_fb_rec + r.tau_fb_ext;
        let expected = sum.max(-tau_max).min(tau_max);
        if r.tau_fb_total != expected {
            report(format!(
                "row {i}: tau_fb_total={} but clamp({} + {}) = {expected}",
                r.tau_fb_total, r.tau_fb_rec, r.tau_fb_ext
            ));
        }
        max_total = max_total.max(r.tau_fb_total.abs());
    }
    check.max_abs_tau_fb_total = max_total;
    check
}

/// Checks a trace against the torque ceiling from its own header (or the
/// device ceiling when the header has no scenario).
pub fn check_trace(trace: &Trace) -> Result<TraceCheck, TraceError> {
    let tau_max = trace
        .scenario()?
        .map_or(TORQUE_CEILING, |s| s.admittance.tau_max);
    Ok(check_rows(&trace.rows, tau_max))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(t: f64, rec: f64, ext: f64) -> TraceRow {
        TraceRow {
            t,
            tau_fb_rec: rec,
            tau_fb_ext: ext,
            tau_fb_total: (rec + ext).clamp(-0.44, 0.44),
            theta: 0.1 + t / 3.0,
            ..Default::default()
        }
    }

    #[test]
    fn write_read_round_trip() {
        let s = Scenario::default();
        let rows = vec![row(0.001, -0.1, 0.0), row(0.002, -0.3, -0.3), row(0.003, 1.0 / 3.0, 0.0)];
        let mut w = TraceWriter::new(Vec::new(), &s, Some(12345)).unwrap();
        for r in &rows {
            w.write_row(r).unwrap();
        }
        let bytes = w.into_inner().unwrap();
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert!(text.starts_with("# hatpic trace v1\n# generated_unix: 12345\n# scenario: schema = 1\n"));
        assert!(text.contains("\nt,theta,omega,tau_operator,"));
        let back = read_trace(bytes.as_slice()).unwrap();
        assert_eq!(back.rows, rows);
        assert_eq!(back.scenario().unwrap(), Some(s));
        assert!(!strip_timestamp(&text).contains("generated_unix"));
        let check = check_trace(&back).unwrap();
        assert!(check.ok(), "{:?}", check.violations);
        assert_eq!(check.max_abs_tau_fb_total, 0.44);
    }

    #[test]
    fn checker_flags_violations() {
        let mut bad = vec![row(0.001, 0.1, 0.0), row(0.001, 0.1, 0.0), row(0.003, 0.3, 0.3)];
        bad[2].tau_fb_total = 0.6;
        let check = check_rows(&bad, 0.44);
        assert_eq!(check.violations.len(), 2, "{:?}", check.violations);
        let nan = vec![TraceRow {
            theta: f64::NAN,
            ..row(0.0, 0.0, 0.0)
        }];
        assert!(!check_rows(&nan, 0.44).ok());
    }

    #[test]
    fn header_required() {
        assert!(matches!(read_trace(&b"t,theta\n"[..]), Err(TraceError::Header(_))));
    }
}
