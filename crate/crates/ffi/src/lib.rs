//! C ABI over the frame codec, the resynchronizing stream parser and the
//! device control loop.
//!
//! Every fallible call returns a [`HatpicStatus`]. On failure a message is
//! kept per thread and can be read with [`hatpic_last_error`]. Handles are
//! opaque; each `_new` must be paired with its `_free`.

use hatpic_core::firmware::{ControlLoop, OperatorInput, ServoModel};
use hatpic_core::haptics::{AdmittanceParams, JoystickState, StiffnessProfile};
use hatpic_core::protocol::{
    self, dequantize_payload, quantize_state, FeedbackPayload, Frame, FrameType, Message, Parser,
};
use hatpic_core::scenario::Scenario;
use std::cell::RefCell;
use std::collections::VecDeque;
use std::ffi::{c_char, CString};
use std::panic::{self, AssertUnwindSafe};
use std::ptr;

/// Largest payload of any frame type, bytes.
pub const HATPIC_MAX_PAYLOAD: usize = 40;
/// Largest encoded frame, bytes.
pub const HATPIC_MAX_FRAME: usize = 48;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HatpicStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    BufferTooSmall = 3,
    /// No decoded frame is waiting.
    Empty = 4,
    /// A Rust panic was caught at the boundary.
    Internal = 5,
}

/// One decoded frame. Only the first `payload_len` bytes of `payload` are set.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct HatpicFrame {
    pub frame_type: u8,
    pub seq: u8,
    pub payload_len: u8,
    pub payload: [u8; HATPIC_MAX_PAYLOAD],
}

/// Joystick state in SI units (rad, rad/s, N·m, s).
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct HatpicState {
    pub theta: f64,
    pub omega: f64,
    pub tau_operator: f64,
    pub t: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct HatpicDiagnostics {
    pub resyncs: u64,
    pub crc_failures: u64,
    pub unknown_type: u64,
    pub bad_length: u64,
    pub truncated: u64,
    pub frames: u64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct HatpicControllerConfig {
    /// Inertia coefficient, N·m·s²/rad.
    pub d_adm: f64,
    /// Damping coefficient, N·m·s/rad.
    pub m_adm: f64,
    /// Feedback torque ceiling, N·m.
    pub tau_max: f64,
    /// Control period, s.
    pub dt: f64,
    pub theta0: f64,
    pub q_dz: f64,
    pub n: f64,
    pub k_min: f64,
    pub k_max: f64,
    /// Mechanical travel limit, rad.
    pub theta_max: f64,
    /// Hard-stop stiffness, N·m/rad.
    pub k_stop: f64,
}

/// Result of one control period.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct HatpicTick {
    pub state: HatpicState,
    pub tau_fb_rec: f64,
    pub tau_fb_ext: f64,
    pub tau_fb_total: f64,
}

pub struct HatpicParser {
    parser: Parser,
    ready: VecDeque<Frame>,
}

pub struct HatpicController {
    inner: ControlLoop,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(HatpicStatus, String);

type Outcome = Result<(), Failure>;

fn fail(status: HatpicStatus, msg: impl Into<String>) -> Outcome {
    Err(Failure(status, msg.into()))
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

/// Runs `body`, recording any failure or panic for `hatpic_last_error`.
fn guard(body: impl FnOnce() -> Outcome) -> HatpicStatus {
    match panic::catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => HatpicStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal error (panic)".into());
            HatpicStatus::Internal
        }
    }
}

fn non_null<T>(p: *const T, name: &str) -> Outcome {
    if p.is_null() {
        fail(HatpicStatus::NullPointer, format!("{name} is NULL"))
    } else {
        Ok(())
    }
}

/// # Safety
/// `data` must point to `len` readable bytes, or be NULL with `len == 0`.
unsafe fn bytes<'a>(data: *const u8, len: usize) -> Result<&'a [u8], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    non_null(data, "data")?;
    Ok(std::slice::from_raw_parts(data, len))
}

/// # Safety
/// `buf` must point to `cap` writable bytes and `written` must be valid.
unsafe fn write_out(bytes: &[u8], buf: *mut u8, cap: usize, written: *mut usize) -> Outcome {
    non_null(written, "written")?;
    *written = bytes.len();
    if cap < bytes.len() {
        return fail(
            HatpicStatus::BufferTooSmall,
            format!("need {} bytes, buffer holds {cap}", bytes.len()),
        );
    }
    non_null(buf, "buf")?;
    ptr::copy_nonoverlapping(bytes.as_ptr(), buf, bytes.len());
    Ok(())
}

fn to_c(frame: &Frame) -> HatpicFrame {
    let mut out = HatpicFrame {
        frame_type: frame.ftype as u8,
        seq: frame.seq,
        payload_len: frame.payload.len() as u8,
        payload: [0; HATPIC_MAX_PAYLOAD],
    };
    out.payload[..frame.payload.len()].copy_from_slice(&frame.payload);
    out
}

fn from_c(frame: &HatpicFrame) -> Result<Frame, Failure> {
    let ftype = FrameType::from_u8(frame.frame_type).ok_or_else(|| {
        Failure(HatpicStatus::InvalidArgument, format!("unknown frame type {:#04x}", frame.frame_type))
    })?;
    let len = (frame.payload_len as usize).min(HATPIC_MAX_PAYLOAD);
    let f = Frame::new(ftype, frame.seq, frame.payload[..len].to_vec());
    f.validate().map_err(|e| Failure(HatpicStatus::InvalidArgument, e.to_string()))?;
    Ok(f)
}

/// Copies the calling thread's last error message into `buf` (NUL-terminated,
/// truncated to `cap`). Returns the full message length without the NUL, or 0
/// when there is none.
///
/// # Safety
/// `buf` must point to `cap` writable bytes, or be NULL with `cap == 0`.
#[no_mangle]
pub unsafe extern "C" fn hatpic_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let Some(msg) = e.as_ref() else { return 0 };
        let bytes = msg.as_bytes();
        if !buf.is_null() && cap > 0 {
            let n = bytes.len().min(cap - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// CRC-16/CCITT-FALSE of `len` bytes.
///
/// # Safety
/// `data` must point to `len` readable bytes; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn hatpic_crc16(data: *const u8, len: usize, out: *mut u16) -> HatpicStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = protocol::crc16(bytes(data, len)?);
        Ok(())
    })
}

/// Encodes a telemetry frame. `*written` receives the frame length, also when
/// the buffer is too small.
///
/// # Safety
/// `state` and `written` must be valid; `buf` must hold `cap` bytes.
#[no_mangle]
pub unsafe extern "C" fn hatpic_encode_telemetry(
    seq: u8,
    state: *const HatpicState,
    buf: *mut u8,
    cap: usize,
    written: *mut usize,
) -> HatpicStatus {
    guard(|| {
        non_null(state, "state")?;
        let s = &*state;
        let js = JoystickState {
            theta: s.theta,
            omega: s.omega,
            tau_operator: s.tau_operator,
            t: s.t,
        };
        if ![js.theta, js.omega, js.tau_operator, js.t].iter().all(|v| v.is_finite()) {
            return fail(HatpicStatus::InvalidArgument, "state must be finite");
        }
        let frame = Message::Telemetry(quantize_state(&js).value).to_frame(seq);
        write_out(&frame.encode().expect("typed payload"), buf, cap, written)
    })
}

/// Encodes a feedback frame carrying `tau_ext` N·m.
///
/// # Safety
/// `written` must be valid; `buf` must hold `cap` bytes.
#[no_mangle]
pub unsafe extern "C" fn hatpic_encode_feedback(
    seq: u8,
    tau_ext: f64,
    buf: *mut u8,
    cap: usize,
    written: *mut usize,
) -> HatpicStatus {
    guard(|| {
        if !tau_ext.is_finite() {
            return fail(HatpicStatus::InvalidArgument, "tau_ext must be finite");
        }
        let frame = Message::Feedback(FeedbackPayload::from_torque(tau_ext).value).to_frame(seq);
        write_out(&frame.encode().expect("typed payload"), buf, cap, written)
    })
}

/// Reads the state out of a telemetry frame.
///
/// # Safety
/// `frame` and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn hatpic_decode_telemetry(frame: *const HatpicFrame, out: *mut HatpicState) -> HatpicStatus {
    guard(|| {
        non_null(frame, "frame")?;
        non_null(out, "out")?;
        match Message::from_frame(&from_c(&*frame)?) {
            Ok(Message::Telemetry(p)) => {
                let s = dequantize_payload(&p);
                *out = HatpicState {
                    theta: s.theta,
                    omega: s.omega,
                    tau_operator: s.tau_operator,
                    t: s.t,
                };
                Ok(())
            }
            Ok(_) => fail(HatpicStatus::InvalidArgument, "not a telemetry frame"),
            Err(e) => fail(HatpicStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// Reads the torque out of a feedback frame.
///
/// # Safety
/// `frame` and `tau_ext` must be valid.
#[no_mangle]
pub unsafe extern "C" fn hatpic_decode_feedback(frame: *const HatpicFrame, tau_ext: *mut f64) -> HatpicStatus {
    guard(|| {
        non_null(frame, "frame")?;
        non_null(tau_ext, "tau_ext")?;
        match Message::from_frame(&from_c(&*frame)?) {
            Ok(Message::Feedback(p)) => {
                *tau_ext = p.torque();
                Ok(())
            }
            Ok(_) => fail(HatpicStatus::InvalidArgument, "not a feedback frame"),
            Err(e) => fail(HatpicStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// # Safety
/// `out` must be valid. The handle is released with [`hatpic_parser_free`].
#[no_mangle]
pub unsafe extern "C" fn hatpic_parser_new(out: *mut *mut HatpicParser) -> HatpicStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = Box::into_raw(Box::new(HatpicParser {
            parser: Parser::new(),
            ready: VecDeque::new(),
        }));
        Ok(())
    })
}

/// # Safety
/// `parser` must come from [`hatpic_parser_new`] and not be used afterwards.
/// NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn hatpic_parser_free(parser: *mut HatpicParser) {
    if !parser.is_null() {
        drop(Box::from_raw(parser));
    }
}

/// Pushes stream bytes in. Complete frames queue up for [`hatpic_parser_next`];
/// `*pending` (optional) receives how many are waiting.
///
/// # Safety
/// `parser` must be a live handle; `data` must hold `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn hatpic_parser_feed(
    parser: *mut HatpicParser,
    data: *const u8,
    len: usize,
    pending: *mut usize,
) -> HatpicStatus {
    guard(|| {
        non_null(parser, "parser")?;
        let p = &mut *parser;
        let input = bytes(data, len)?;
        p.ready.extend(p.parser.feed(input));
        if !pending.is_null() {
            *pending = p.ready.len();
        }
        Ok(())
    })
}

/// Pops the oldest decoded frame, or returns `HATPIC_STATUS_EMPTY`.
///
/// # Safety
/// `parser` must be a live handle and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn hatpic_parser_next(parser: *mut HatpicParser, out: *mut HatpicFrame) -> HatpicStatus {
    guard(|| {
        non_null(parser, "parser")?;
        non_null(out, "out")?;
        match (*parser).ready.pop_front() {
            Some(f) => {
                *out = to_c(&f);
                Ok(())
            }
            None => fail(HatpicStatus::Empty, "no frame pending"),
        }
    })
}

/// # Safety
/// `parser` must be a live handle and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn hatpic_parser_diagnostics(
    parser: *const HatpicParser,
    out: *mut HatpicDiagnostics,
) -> HatpicStatus {
    guard(|| {
        non_null(parser, "parser")?;
        non_null(out, "out")?;
        let p = &*parser;
        let d = p.parser.diagnostics();
        *out = HatpicDiagnostics {
            resyncs: d.resyncs,
            crc_failures: d.crc_failures,
            unknown_type: d.unknown_type,
            bad_length: d.bad_length,
            truncated: d.truncated,
            frames: p.parser.frames_parsed(),
        };
        Ok(())
    })
}

/// Fills `out` with the stock device settings.
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn hatpic_controller_default_config(out: *mut HatpicControllerConfig) -> HatpicStatus {
    guard(|| {
        non_null(out, "out")?;
        let (a, p, s) = (AdmittanceParams::default(), StiffnessProfile::default(), ServoModel::default());
        *out = HatpicControllerConfig {
            d_adm: a.d_adm,
            m_adm: a.m_adm,
            tau_max: a.tau_max,
            dt: a.dt,
            theta0: p.theta0,
            q_dz: p.q_dz,
            n: p.n,
            k_min: p.k_min,
            k_max: p.k_max,
            theta_max: s.theta_max,
            k_stop: s.k_stop,
        };
        Ok(())
    })
}

/// Creates a control loop driven by the caller: the hand torque is passed to
/// each [`hatpic_controller_tick`].
///
/// # Safety
/// `config` and `out` must be valid. Release with [`hatpic_controller_free`].
#[no_mangle]
pub unsafe extern "C" fn hatpic_controller_new(
    config: *const HatpicControllerConfig,
    out: *mut *mut HatpicController,
) -> HatpicStatus {
    guard(|| {
        non_null(config, "config")?;
        non_null(out, "out")?;
        let c = &*config;
        let mut s = Scenario {
            operator: OperatorInput::external(),
            ..Default::default()
        };
        s.admittance = AdmittanceParams {
            d_adm: c.d_adm,
            m_adm: c.m_adm,
            tau_max: c.tau_max,
            dt: c.dt,
        };
        s.stiffness = StiffnessProfile {
            theta0: c.theta0,
            q_dz: c.q_dz,
            n: c.n,
            k_min: c.k_min,
            k_max: c.k_max,
        };
        s.servo.theta_max = c.theta_max;
        s.servo.k_stop = c.k_stop;
        let inner = ControlLoop::new(s.loop_config())
            .map_err(|e| Failure(HatpicStatus::InvalidArgument, e.to_string()))?;
        *out = Box::into_raw(Box::new(HatpicController { inner }));
        Ok(())
    })
}

/// # Safety
/// `controller` must come from [`hatpic_controller_new`] and not be used
/// afterwards. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn hatpic_controller_free(controller: *mut HatpicController) {
    if !controller.is_null() {
        drop(Box::from_raw(controller));
    }
}

/// Latches the external feedback torque from the host, N·m.
///
/// # Safety
/// `controller` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn hatpic_controller_feedback(controller: *mut HatpicController, tau_ext: f64) -> HatpicStatus {
    guard(|| {
        non_null(controller, "controller")?;
        if !(*controller).inner.feedback(tau_ext) {
            return fail(HatpicStatus::InvalidArgument, "tau_ext must be finite");
        }
        Ok(())
    })
}

/// Runs one control period with the operator pushing `push` N·m.
///
/// # Safety
/// `controller` must be a live handle and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn hatpic_controller_tick(
    controller: *mut HatpicController,
    push: f64,
    out: *mut HatpicTick,
) -> HatpicStatus {
    guard(|| {
        non_null(controller, "controller")?;
        non_null(out, "out")?;
        if !push.is_finite() {
            return fail(HatpicStatus::InvalidArgument, "push must be finite");
        }
        let r = (*controller).inner.tick(push);
        *out = HatpicTick {
            state: HatpicState {
                theta: r.state.theta,
                omega: r.state.omega,
                tau_operator: r.state.tau_operator,
                t: r.state.t,
            },
            tau_fb_rec: r.tau_fb_rec,
            tau_fb_ext: r.tau_fb_ext,
            tau_fb_total: r.tau_fb_total,
        };
        Ok(())
    })
}
