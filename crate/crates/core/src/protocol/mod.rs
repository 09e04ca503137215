//! Device↔host serial dataframe: codec, payload schemas and a resynchronizing
//! stream parser. The byte layout is documented in `docs/protocol.md`.

pub mod crc;
pub mod frame;
pub mod parser;
pub mod payload;

pub use crc::crc16;
pub use frame::{Frame, FrameError, FrameType, MAX_FRAME, MAX_PAYLOAD, OVERHEAD, SYNC, VERSION};
pub use parser::{parse, Diagnostics, Parser};
pub use payload::{
    dequantize_payload, quantize_state, AckStatus, DeviceConfig, FeedbackPayload, Message,
    PayloadError, Quantized, TelemetryPayload,
};

/// Wrapping per-stream sequence counter.
#[derive(Debug, Clone, Copy, Default)]
pub struct SeqCounter(u8);

impl SeqCounter {
    pub fn next(&mut self) -> u8 {
        let s = self.0;
        self.0 = self.0.wrapping_add(1);
        s
    }
}

/// Encodes a message with the next sequence number.
pub fn encode_message(msg: &Message, seq: &mut SeqCounter) -> Vec<u8> {
    msg.to_frame(seq.next())
        .encode()
        .expect("typed payloads always match their schema")
}
