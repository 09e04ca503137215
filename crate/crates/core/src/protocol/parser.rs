//! Incremental, resynchronizing frame parser.
//!
//! Bytes are buffered until a complete candidate frame is available. Any
//! violation (bad sync, version, type, length or CRC) discards exactly one
//! byte and the hunt restarts from the next one, so overlapping sync patterns
//! are never skipped. Work per input byte is bounded by [`MAX_FRAME`].

use super::frame::{check_header, Frame, FrameError, HEADER_LEN, MAX_FRAME, OVERHEAD, SYNC};
use super::crc::Crc16;
use serde::Serialize;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Diagnostics {
    /// Bytes discarded while hunting for a frame.
    pub resyncs: u64,
    pub crc_failures: u64,
    pub unknown_type: u64,
    /// Header length field disagreed with the type's schema.
    pub bad_length: u64,
    /// Incomplete frames left over when the stream ended.
    pub truncated: u64,
}

impl Diagnostics {
    pub fn is_clean(&self) -> bool {
        *self == Self::default()
    }

    pub fn merge(&mut self, other: &Diagnostics) {
        self.resyncs += other.resyncs;
        self.crc_failures += other.crc_failures;
        self.unknown_type += other.unknown_type;
        self.bad_length += other.bad_length;
        self.truncated += other.truncated;
    }
}

#[derive(Debug, Clone, Default)]
pub struct Parser {
    buf: Vec<u8>,
    pos: usize,
    frames: u64,
    diag: Diagnostics,
}

impl Parser {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn diagnostics(&self) -> Diagnostics {
        self.diag
    }

    pub fn frames_parsed(&self) -> u64 {
        self.frames
    }

    /// Bytes held back waiting for the rest of a frame.
    pub fn pending(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn feed(&mut self, bytes: &[u8]) -> Vec<Frame> {
        let mut out = Vec::new();
        self.push(bytes, &mut out);
        out
    }

    /// Consumes `bytes`, appending every verified frame to `out`.
    pub fn push(&mut self, bytes: &[u8], out: &mut Vec<Frame>) {
        self.buf.extend_from_slice(bytes);
        while let Some(step) = self.step() {
            if let Some(frame) = step {
                self.frames += 1;
                out.push(frame);
            }
        }
        if self.pos > 0 {
            self.buf.drain(..self.pos);
            self.pos = 0;
        }
    }

    fn discard(&mut self) {
        self.pos += 1;
        self.diag.resyncs += 1;
    }

    /// `None` when more input is needed, `Some(None)` after a discard.
    fn step(&mut self) -> Option<Option<Frame>> {
        let avail = &self.buf[self.pos..];
        if avail.is_empty() {
            return None;
        }
        if avail[0] != SYNC[0] {
            self.discard();
            return Some(None);
        }
        if avail.len() < 2 {
            return None;
        }
        if avail[1] != SYNC[1] {
            self.discard();
            return Some(None);
        }
        if avail.len() < HEADER_LEN {
            return None;
        }
        let header = match check_header(&avail[2..HEADER_LEN]) {
            Ok(h) => h,
            Err(e) => {
                match e {
                    FrameError::UnknownType(_) => self.diag.unknown_type += 1,
                    FrameError::Length { .. } => self.diag.bad_length += 1,
                    _ => {}
                }
                self.discard();
                return Some(None);
            }
        };
        let total = OVERHEAD + header.len;
        debug_assert!(total <= MAX_FRAME);
        if avail.len() < total {
            return None;
        }
        let mut crc = Crc16::new();
        crc.update(&avail[2..HEADER_LEN + header.len]);
        let received = u16::from_le_bytes([avail[total - 2], avail[total - 1]]);
        if crc.finish() != received {
            self.diag.crc_failures += 1;
            self.discard();
            return Some(None);
        }
        let frame = Frame {
            version: avail[2],
            ftype: header.ftype,
            seq: header.seq,
            payload: avail[HEADER_LEN..HEADER_LEN + header.len].to_vec(),
        };
        self.pos += total;
        Some(Some(frame))
    }

    /// Ends the stream: leftover bytes are classified and dropped.
    pub fn finish(&mut self) -> Diagnostics {
        let rest = self.buf.split_off(self.pos);
        self.buf.clear();
        self.pos = 0;
        let mut i = 0;
        while i < rest.len() {
            let starts_frame =
                rest[i] == SYNC[0] && (i + 1 == rest.len() || rest[i + 1] == SYNC[1]);
            if starts_frame {
                self.diag.truncated += 1;
                break;
            }
            self.diag.resyncs += 1;
            i += 1;
        }
        self.diag
    }
}

/// Functional form of [`Parser::push`].
pub fn parse(stream: &[u8], mut state: Parser) -> (Vec<Frame>, Parser, Diagnostics) {
    let frames = state.feed(stream);
    let diag = state.diagnostics();
    (frames, state, diag)
}
