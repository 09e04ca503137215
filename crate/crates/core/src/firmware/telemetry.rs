//! The telemetry thread: samples the newest state at a fixed rate and frames
//! it for the serial link.

use super::LoopIo;
use crate::clock::Clock;
use crate::haptics::JoystickState;
use crate::protocol::{encode_message, quantize_state, AckStatus, Message, SeqCounter};
use std::io;
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::Duration;

/// Default telemetry rate, Hz.
pub const DEFAULT_TELEMETRY_RATE_HZ: f64 = 500.0;

/// Where encoded frames go. Implementations must not block indefinitely.
pub trait FrameSink: Send + Sync {
    fn send(&self, bytes: &[u8]) -> io::Result<()>;
}

#[derive(Debug, Default)]
pub struct TelemetrySender {
    seq: SeqCounter,
    frames: u64,
    saturated: u64,
}

impl TelemetrySender {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn frames(&self) -> u64 {
        self.frames
    }

    /// Samples whose quantization saturated a field.
    pub fn saturated(&self) -> u64 {
        self.saturated
    }

    pub fn encode_state(&mut self, state: &JoystickState) -> Vec<u8> {
        let q = quantize_state(state);
        if q.saturated {
            self.saturated += 1;
        }
        self.frames += 1;
        encode_message(&Message::Telemetry(q.value), &mut self.seq)
    }

    /// Config acks echo the seq of the config-set they answer.
    pub fn encode_ack(seq: u8, status: AckStatus) -> Vec<u8> {
        Message::ConfigAck(status)
            .to_frame(seq)
            .encode()
            .expect("ack payload matches schema")
    }

    /// Drains pending acks and all queued samples into one byte chunk.
    pub fn poll(&mut self, io: &LoopIo) -> Vec<u8> {
        let mut out = Vec::new();
        while let Some((seq, status)) = io.acks.pop() {
            out.extend(Self::encode_ack(seq, status));
        }
        while let Some(s) = io.telemetry.pop() {
            out.extend(self.encode_state(&s));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SenderSummary {
    pub frames: u64,
    pub write_errors: u64,
}

/// Paces [`TelemetrySender::poll`] at `rate_hz` until `stop` is raised.
/// Sleeps between deadlines, so an idle queue costs no CPU.
pub fn run_telemetry_sender(
    io: &LoopIo,
    sink: &dyn FrameSink,
    rate_hz: f64,
    clock: &dyn Clock,
    stop: &AtomicBool,
) -> SenderSummary {
    let period = Duration::from_secs_f64(1.0 / rate_hz);
    let mut sender = TelemetrySender::new();
    let mut summary = SenderSummary::default();
    let mut deadline = clock.now();
    while !stop.load(Ordering::Relaxed) {
        clock.sleep_until(deadline);
        let bytes = sender.poll(io);
        if !bytes.is_empty() {
            if let Err(e) = sink.send(&bytes) {
                log::debug!("telemetry write failed: {e}");
                summary.write_errors += 1;
            }
        }
        deadline += period;
    }
    summary.frames = sender.frames();
    summary
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{Frame, FrameType, Parser};

    #[test]
    fn poll_drains_acks_then_samples_in_order() {
        let io = LoopIo::new(8);
        for k in 0..3 {
            io.telemetry.push(JoystickState::at_rest(k as f64 * 0.1)).unwrap();
        }
        io.acks.push((42, AckStatus::Applied)).unwrap();
        let mut s = TelemetrySender::new();
        let frames = Parser::new().feed(&s.poll(&io));
        assert_eq!(frames.len(), 4);
        assert_eq!(frames[0].ftype, FrameType::ConfigAck);
        assert_eq!(frames[0].seq, 42);
        for (k, f) in frames[1..].iter().enumerate() {
            let p = crate::protocol::payload::telemetry_from_frame(f).unwrap();
            assert_eq!(p.theta_urad, k as i32 * 100_000);
            assert_eq!(f.seq, k as u8);
        }
        assert!(s.poll(&io).is_empty());
    }

    #[test]
    fn theta_is_quantized_to_microradians() {
        let mut s = TelemetrySender::new();
        let bytes = s.encode_state(&JoystickState::at_rest(0.123456));
        let f = Frame::decode(&bytes).unwrap();
        assert_eq!(f.payload[..4], 123456i32.to_le_bytes());
    }

    #[test]
    fn seq_wraps() {
        let mut s = TelemetrySender::new();
        let seqs: Vec<u8> = (0..300)
            .map(|_| Frame::decode(&s.encode_state(&JoystickState::default())).unwrap().seq)
            .collect();
        assert_eq!(seqs[255], 255);
        assert_eq!(seqs[256], 0);
        assert!(seqs.windows(2).all(|w| w[1] == w[0].wrapping_add(1)));
    }
}
