//! Host→device side of the serial link on the firmware.

use super::LoopIo;
use crate::protocol::{Diagnostics, Message, Parser};
use std::io::{ErrorKind, Read};
use std::sync::atomic::{AtomicBool, Ordering};

#[derive(Debug, Default)]
pub struct DeviceLink {
    parser: Parser,
    ignored: u64,
}

impl DeviceLink {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn diagnostics(&self) -> Diagnostics {
        self.parser.diagnostics()
    }

    /// Frames the device does not consume (telemetry, acks).
    pub fn ignored(&self) -> u64 {
        self.ignored
    }

    /// Routes feedback frames to the feedback mailbox and config-set frames to
    /// the config mailbox.
    pub fn on_bytes(&mut self, bytes: &[u8], io: &LoopIo) {
        for frame in self.parser.feed(bytes) {
            match Message::from_frame(&frame) {
                Ok(Message::Feedback(fb)) => io.feedback.post(fb.torque()),
                Ok(Message::ConfigSet(cfg)) => io.config.post((frame.seq, cfg)),
                _ => self.ignored += 1,
            }
        }
    }
}

/// Reads the link until EOF or `stop`. The reader should have a read timeout
/// so `stop` is observed.
pub fn run_device_reader(mut reader: impl Read, io: &LoopIo, stop: &AtomicBool) -> DeviceLink {
    let mut link = DeviceLink::new();
    let mut buf = [0u8; 512];
    while !stop.load(Ordering::Relaxed) {
        match reader.read(&mut buf) {
            Ok(0) => break,
            Ok(n) => link.on_bytes(&buf[..n], io),
            Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut | ErrorKind::Interrupted) => {}
            Err(e) => {
                log::warn!("device link read failed: {e}");
                break;
            }
        }
    }
    link
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{encode_message, DeviceConfig, FeedbackPayload, SeqCounter};

    #[test]
    fn routes_feedback_and_config() {
        let io = LoopIo::new(4);
        let mut seq = SeqCounter::default();
        let mut bytes = encode_message(
            &Message::Feedback(FeedbackPayload { tau_ext_unm: -220_000 }),
            &mut seq,
        );
        let cfg = DeviceConfig {
            profile: Default::default(),
            d_adm: 0.02,
            m_adm: 0.2,
            tau_max: 0.44,
            theta_max: 1.0,
            k_stop: 500.0,
        };
        bytes.extend(encode_message(&Message::ConfigSet(cfg), &mut seq));
        let mut link = DeviceLink::new();
        link.on_bytes(&bytes, &io);
        assert_eq!(io.feedback.take(), Some(-0.22));
        assert_eq!(io.config.take(), Some((1, cfg)));
        assert_eq!(link.ignored(), 0);
    }
}
