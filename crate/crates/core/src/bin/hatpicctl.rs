use clap::{Args, Parser, Subcommand};
use hatpic_core::bus::BusMessage;
use hatpic_core::protocol::{dequantize_payload, parse, Frame, Message, Parser as FrameParser};
use hatpic_core::scenario::{Scenario, ScenarioError, SCHEMA_VERSION};
use hatpic_core::serve::{self, ServeOptions};
use hatpic_core::sim::{replay_capture, SimError, SimOptions, Simulation};
use hatpic_core::trace::{check_trace, now_unix, read_trace, strip_timestamp, TraceWriter};
use hatpic_core::transport::TransportSpec;
use hatpic_core::{bridge::BridgeConfig, firmware::OperatorInput};
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::Ordering;
use std::time::Duration;

const EXIT_FAILED: u8 = 1;
const EXIT_INVALID: u8 = 2;
const EXIT_TRANSPORT: u8 = 3;

#[derive(Parser)]
#[command(name = "hatpicctl", version, about = "Haptic joystick twin: run, inspect and serve")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario headless and print a summary.
    Run(RunArgs),
    /// Pretty-print the frames in a captured device byte stream.
    Decode {
        #[arg(long)]
        input: PathBuf,
    },
    /// Start the live stack for the operator console.
    Serve(ServeArgs),
    /// Re-run a recorded trace and compare, or push a capture through the bridge.
    Replay(ReplayArgs),
    /// Check a trace's internal consistency.
    Check {
        #[arg(long, required = true, num_args = 1..)]
        trace: Vec<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    scenario: PathBuf,
    /// Write the per-tick CSV trace here.
    #[arg(long)]
    record: Option<PathBuf>,
    /// inproc, tcp[:host:port] or pty.
    #[arg(long)]
    transport: Option<TransportSpec>,
    /// Pace the run against the wall clock.
    #[arg(long, num_args = 0..=1, default_missing_value = "true", default_value = "false")]
    realtime: bool,
    /// Save the device→host byte stream.
    #[arg(long)]
    capture: Option<PathBuf>,
    /// Override the scenario duration, s.
    #[arg(long)]
    duration: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct ServeArgs {
    /// Scenario file, or a file holding only bridge keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    transport: Option<String>,
    #[arg(long = "bus-listen", alias = "bus_listen")]
    bus_listen: Option<String>,
    #[arg(long = "ws-listen", alias = "ws_listen")]
    ws_listen: Option<String>,
    #[arg(long = "http-listen", alias = "http_listen")]
    http_listen: Option<String>,
    #[arg(long = "console-dir", alias = "console_dir")]
    console_dir: Option<PathBuf>,
    #[arg(long = "v-max", alias = "v_max")]
    v_max: Option<f64>,
    #[arg(long = "publish-rate", alias = "publish_rate")]
    publish_rate: Option<f64>,
    #[arg(long = "feedback-gain", alias = "feedback_gain")]
    feedback_gain: Option<f64>,
    #[arg(long = "f-max", alias = "f_max")]
    f_max: Option<f64>,
    #[arg(long = "input-deadzone", alias = "input_deadzone")]
    input_deadzone: Option<f64>,
    /// Stop after this many seconds instead of waiting for Ctrl-C.
    #[arg(long)]
    duration: Option<f64>,
    #[arg(long)]
    record: Option<PathBuf>,
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct ReplaySource {
    /// Trace to reproduce from its embedded scenario.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Device capture to feed through the bridge.
    #[arg(long)]
    capture: Option<PathBuf>,
}

#[derive(Args)]
struct ReplayArgs {
    #[command(flatten)]
    source: ReplaySource,
    /// Bridge settings for --capture (defaults otherwise).
    #[arg(long)]
    scenario: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("HATPIC_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match cli.cmd {
        Command::Run(args) => cmd_run(args),
        Command::Decode { input } => cmd_decode(&input),
        Command::Serve(args) => cmd_serve(args),
        Command::Replay(args) => cmd_replay(args),
        Command::Check { trace } => cmd_check(&trace),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure(code, msg)) => {
            eprintln!("hatpicctl: {msg}");
            ExitCode::from(code)
        }
    }
}

struct Failure(u8, String);

fn fail<T>(code: u8, msg: impl std::fmt::Display) -> Result<T, Failure> {
    Err(Failure(code, msg.to_string()))
}

fn load_scenario(path: &Path) -> Result<Scenario, Failure> {
    Scenario::load(path).or_else(|e| fail(EXIT_INVALID, e))
}

fn validated(s: Scenario) -> Result<Scenario, Failure> {
    s.validate().or_else(|e| fail(EXIT_INVALID, e))?;
    Ok(s)
}

fn sim_failure(e: SimError) -> Failure {
    match e {
        SimError::Transport(e) => Failure(EXIT_TRANSPORT, format!("transport: {e}")),
        other => Failure(EXIT_INVALID, other.to_string()),
    }
}

/// Output cut short by a closed pipe (`| head`) is not an error.
fn printed(r: io::Result<()>) -> Result<(), Failure> {
    match r {
        Err(e) if e.kind() != io::ErrorKind::BrokenPipe => fail(EXIT_FAILED, e),
        _ => Ok(()),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path)
        .map(BufWriter::new)
        .or_else(|e| fail(EXIT_FAILED, format!("cannot create {}: {e}", path.display())))
}

fn cmd_run(args: RunArgs) -> Result<(), Failure> {
    let mut scenario = load_scenario(&args.scenario)?;
    if let Some(d) = args.duration {
        scenario.duration = d;
    }
    if let Some(seed) = args.seed {
        scenario.seed = seed;
    }
    if let Some(t) = &args.transport {
        scenario.bridge.transport = t.to_string();
    }
    let scenario = validated(scenario)?;
    let opts = SimOptions {
        transport: None,
        realtime: args.realtime,
        capture: args.capture.is_some(),
        keep_bus: false,
    };
    let sim = Simulation::new(&scenario, opts).map_err(sim_failure)?;
    let mut writer = match &args.record {
        Some(path) => Some(
            TraceWriter::new(create(path)?, &scenario, Some(now_unix()))
                .or_else(|e| fail(EXIT_FAILED, e))?,
        ),
        None => None,
    };
    let mut write_err = None;
    let out = sim
        .run(|row| {
            if let Some(w) = &mut writer {
                if let Err(e) = w.write_row(row) {
                    write_err.get_or_insert(e);
                }
            }
        })
        .map_err(sim_failure)?;
    if let Some(e) = write_err {
        return fail(EXIT_FAILED, format!("writing trace: {e}"));
    }
    if let Some(mut w) = writer {
        w.flush().or_else(|e| fail(EXIT_FAILED, e))?;
    }
    if let Some(path) = &args.capture {
        std::fs::write(path, &out.capture).or_else(|e| fail(EXIT_FAILED, e))?;
    }
    if !scenario.name.is_empty() {
        println!("scenario            {}", scenario.name);
    }
    println!("{}", out.summary);
    Ok(())
}

fn describe(frame: &Frame) -> String {
    match Message::from_frame(frame) {
        Ok(Message::Telemetry(p)) => {
            let s = dequantize_payload(&p);
            format!(
                "theta={} rad omega={} rad/s tau_operator={} N·m t={} s",
                s.theta, s.omega, s.tau_operator, s.t
            )
        }
        Ok(Message::Feedback(p)) => format!("tau_ext={} N·m", p.torque()),
        Ok(Message::ConfigSet(c)) => format!(
            "theta0={} q_dz={} n={} k_min={} k_max={} d_adm={} m_adm={} tau_max={} theta_max={} k_stop={}",
            c.profile.theta0,
            c.profile.q_dz,
            c.profile.n,
            c.profile.k_min,
            c.profile.k_max,
            c.d_adm,
            c.m_adm,
            c.tau_max,
            c.theta_max,
            c.k_stop
        ),
        Ok(Message::ConfigAck(s)) => format!("status={s:?}").to_lowercase(),
        Err(e) => format!("undecodable payload: {e}"),
    }
}

fn cmd_decode(input: &Path) -> Result<(), Failure> {
    let bytes = std::fs::read(input)
        .or_else(|e| fail(EXIT_INVALID, format!("cannot read {}: {e}", input.display())))?;
    let (frames, mut state, _) = parse(&bytes, FrameParser::new());
    let diag = state.finish();
    let stdout = io::stdout();
    let mut out = stdout.lock();
    let mut print = || -> io::Result<()> {
        for (i, f) in frames.iter().enumerate() {
            writeln!(out, "{i:>6} {:<10} seq={:<3} {}", f.ftype.name(), f.seq, describe(f))?;
        }
        writeln!(
            out,
            "frames={} resyncs={} crc_failures={} unknown_type={} bad_length={} truncated={}",
            frames.len(),
            diag.resyncs,
            diag.crc_failures,
            diag.unknown_type,
            diag.bad_length,
            diag.truncated
        )
    };
    printed(print())
}

fn serve_scenario(args: &ServeArgs) -> Result<Scenario, Failure> {
    let mut scenario = Scenario {
        name: "serve".into(),
        operator: OperatorInput::external(),
        ..Default::default()
    };
    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path)
            .or_else(|e| fail(EXIT_INVALID, format!("cannot read {}: {e}", path.display())))?;
        let table: toml::Table = text
            .parse()
            .or_else(|e| fail(EXIT_INVALID, ScenarioError::Parse(format!("{e}"))))?;
        if table.contains_key("schema") {
            scenario = Scenario::from_toml(&text).or_else(|e| fail(EXIT_INVALID, e))?;
        } else {
            scenario.bridge = toml::from_str::<BridgeConfig>(&text)
                .or_else(|e| fail(EXIT_INVALID, ScenarioError::Parse(format!("{e}"))))?;
        }
    }
    let b = &mut scenario.bridge;
    macro_rules! set {
        ($($field:ident),*) => {$(
            if let Some(v) = &args.$field {
                b.$field = v.clone();
            }
        )*};
    }
    set!(transport, bus_listen, ws_listen, v_max, publish_rate, feedback_gain, f_max);
    if args.http_listen.is_some() {
        b.http_listen = args.http_listen.clone();
    }
    if args.console_dir.is_some() {
        b.console_dir = args.console_dir.clone();
    }
    if args.input_deadzone.is_some() {
        b.input_deadzone = args.input_deadzone;
    }
    scenario.schema = SCHEMA_VERSION;
    validated(scenario)
}

fn cmd_serve(args: ServeArgs) -> Result<(), Failure> {
    let scenario = serve_scenario(&args)?;
    if let Some(d) = args.duration {
        if !(d.is_finite() && d > 0.0) {
            return fail(EXIT_INVALID, format!("--duration must be > 0, got {d}"));
        }
    }
    let handle = serve::start(&scenario, ServeOptions { record: args.record.clone() }).or_else(|e| {
        let code = if e.is_bind_failure() { EXIT_TRANSPORT } else { EXIT_INVALID };
        fail(code, e)
    })?;
    let stop = handle.stop_flag();
    if let Err(e) = ctrlc::set_handler(move || stop.store(true, Ordering::Relaxed)) {
        log::warn!("cannot install Ctrl-C handler: {e}");
    }
    println!("device   {}", handle.device_endpoint);
    println!("bus      {}", handle.bus_addr);
    println!("ws       ws://{}", handle.ws_addr);
    if let Some(http) = handle.http_addr {
        println!("console  http://{http}/");
    }
    let _ = io::stdout().flush();
    handle.wait(args.duration.map(Duration::from_secs_f64));
    let summary = handle.shutdown().or_else(|e| fail(EXIT_FAILED, format!("trace: {e}")))?;
    println!(
        "stopped: {} ticks, {} overruns, {} telemetry frames, {} trace rows",
        summary.ticks, summary.overruns, summary.telemetry_frames, summary.trace_rows
    );
    Ok(())
}

fn cmd_replay(args: ReplayArgs) -> Result<(), Failure> {
    if let Some(path) = &args.source.trace {
        return replay_trace(path);
    }
    let path = args.source.capture.as_ref().expect("clap enforces one source");
    let scenario = match &args.scenario {
        Some(p) => load_scenario(p)?,
        None => Scenario::default(),
    };
    let bytes = std::fs::read(path)
        .or_else(|e| fail(EXIT_INVALID, format!("cannot read {}: {e}", path.display())))?;
    let (published, diag) = replay_capture(&scenario, &bytes).map_err(sim_failure)?;
    let stdout = io::stdout();
    let mut out = stdout.lock();
    let mut print = || -> io::Result<()> {
        for msg in &published {
            writeln!(out, "{}", msg.to_json().unwrap_or_default())?;
        }
        let footer = BusMessage::new("replay/diag", 0.0)
            .field("messages", published.len() as u64)
            .field("resyncs", diag.resyncs)
            .field("crc_failures", diag.crc_failures);
        writeln!(out, "{}", footer.to_json().unwrap_or_default())
    };
    printed(print())
}

fn replay_trace(path: &Path) -> Result<(), Failure> {
    let original = std::fs::read_to_string(path)
        .or_else(|e| fail(EXIT_INVALID, format!("cannot read {}: {e}", path.display())))?;
    let trace = read_trace(original.as_bytes()).or_else(|e| fail(EXIT_INVALID, e))?;
    let Some(scenario) = trace.scenario().or_else(|e| fail(EXIT_INVALID, e))? else {
        return fail(EXIT_INVALID, "trace has no embedded scenario");
    };
    let mut w = TraceWriter::new(Vec::new(), &scenario, None).or_else(|e| fail(EXIT_FAILED, e))?;
    let mut write_err = None;
    Simulation::new(&scenario, SimOptions::default())
        .and_then(|sim| {
            sim.run(|row| {
                if let Err(e) = w.write_row(row) {
                    write_err.get_or_insert(e);
                }
            })
        })
        .map_err(sim_failure)?;
    if let Some(e) = write_err {
        return fail(EXIT_FAILED, e);
    }
    let rerun = String::from_utf8(w.into_inner().or_else(|e| fail(EXIT_FAILED, e))?).expect("utf-8 csv");
    let (a, b) = (strip_timestamp(&original), strip_timestamp(&rerun));
    if a == b {
        println!("identical: {} rows", trace.rows.len());
        return Ok(());
    }
    let line = a.lines().zip(b.lines()).position(|(x, y)| x != y).unwrap_or(a.lines().count().min(b.lines().count()));
    fail(EXIT_FAILED, format!("replay differs from {} at line {}", path.display(), line + 1))
}

fn cmd_check(paths: &[PathBuf]) -> Result<(), Failure> {
    let mut bad = 0;
    for path in paths {
        let file = File::open(path).or_else(|e| fail(EXIT_INVALID, format!("cannot read {}: {e}", path.display())))?;
        let trace = read_trace(file).or_else(|e| fail(EXIT_INVALID, format!("{}: {e}", path.display())))?;
        let check = check_trace(&trace).or_else(|e| fail(EXIT_INVALID, format!("{}: {e}", path.display())))?;
        if check.ok() {
            println!(
                "ok   {} ({} rows, max |tau_fb_total| = {})",
                path.display(),
                check.rows,
                check.max_abs_tau_fb_total
            );
        } else {
            bad += 1;
            println!("FAIL {}", path.display());
            for v in &check.violations {
                println!("     {v}");
            }
        }
    }
    if bad > 0 {
        return fail(EXIT_FAILED, format!("{bad} trace(s) failed the check"));
    }
    Ok(())
}
