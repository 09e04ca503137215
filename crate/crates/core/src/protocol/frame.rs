//! Frame layout (v1):
//!
//! ```text
//! AA 55 | version | ftype | seq | len | payload[len] | crc16 (LE)
//! ```
//!
//! The CRC covers `version..payload`. Every frame type has a fixed payload
//! length; see `docs/protocol.md`.

use super::crc::Crc16;
use thiserror::Error;

pub const SYNC: [u8; 2] = [0xAA, 0x55];
pub const VERSION: u8 = 0x01;
/// Sync, version, type, seq, len.
pub const HEADER_LEN: usize = 6;
pub const CRC_LEN: usize = 2;
pub const OVERHEAD: usize = HEADER_LEN + CRC_LEN;
pub const MAX_PAYLOAD: usize = 64;
pub const MAX_FRAME: usize = OVERHEAD + MAX_PAYLOAD;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum FrameType {
    Telemetry = 0x01,
    Feedback = 0x02,
    ConfigSet = 0x03,
    ConfigAck = 0x04,
}

impl FrameType {
    pub const ALL: [FrameType; 4] = [
        FrameType::Telemetry,
        FrameType::Feedback,
        FrameType::ConfigSet,
        FrameType::ConfigAck,
    ];

    pub fn from_u8(b: u8) -> Option<Self> {
        match b {
            0x01 => Some(Self::Telemetry),
            0x02 => Some(Self::Feedback),
            0x03 => Some(Self::ConfigSet),
            0x04 => Some(Self::ConfigAck),
            _ => None,
        }
    }

    pub fn payload_len(self) -> usize {
        match self {
            Self::Telemetry => 16,
            Self::Feedback => 4,
            Self::ConfigSet => 40,
            Self::ConfigAck => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Telemetry => "telemetry",
            Self::Feedback => "feedback",
            Self::ConfigSet => "config-set",
            Self::ConfigAck => "config-ack",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FrameError {
    #[error("unsupported version 0x{0:02x}")]
    Version(u8),
    #[error("unknown frame type 0x{0:02x}")]
    UnknownType(u8),
    #[error("{ftype:?} payload must be {expected} bytes, got {got}")]
    Length {
        ftype: FrameType,
        expected: usize,
        got: usize,
    },
    #[error("bad sync bytes")]
    Sync,
    #[error("frame is {got} bytes, expected {expected}")]
    Truncated { expected: usize, got: usize },
    #[error("crc mismatch: computed 0x{computed:04x}, received 0x{received:04x}")]
    Crc { computed: u16, received: u16 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub version: u8,
    pub ftype: FrameType,
    pub seq: u8,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn new(ftype: FrameType, seq: u8, payload: Vec<u8>) -> Self {
        Self {
            version: VERSION,
            ftype,
            seq,
            payload,
        }
    }

    pub fn validate(&self) -> Result<(), FrameError> {
        if self.version != VERSION {
            return Err(FrameError::Version(self.version));
        }
        let expected = self.ftype.payload_len();
        if self.payload.len() != expected {
            return Err(FrameError::Length {
                ftype: self.ftype,
                expected,
                got: self.payload.len(),
            });
        }
        Ok(())
    }

    pub fn encoded_len(&self) -> usize {
        OVERHEAD + self.payload.len()
    }

    /// Appends the encoded frame to `out`. Nothing is written on error.
    pub fn encode_into(&self, out: &mut Vec<u8>) -> Result<(), FrameError> {
        self.validate()?;
        let start = out.len();
        out.extend_from_slice(&SYNC);
        out.extend_from_slice(&[self.version, self.ftype as u8, self.seq, self.payload.len() as u8]);
        out.extend_from_slice(&self.payload);
        let mut crc = Crc16::new();
        crc.update(&out[start + 2..]);
        out.extend_from_slice(&crc.finish().to_le_bytes());
        Ok(())
    }

    pub fn encode(&self) -> Result<Vec<u8>, FrameError> {
        let mut out = Vec::with_capacity(self.encoded_len());
        self.encode_into(&mut out)?;
        Ok(out)
    }

    /// Decodes exactly one complete frame.
    pub fn decode(bytes: &[u8]) -> Result<Frame, FrameError> {
        if bytes.len() < OVERHEAD {
            return Err(FrameError::Truncated {
                expected: OVERHEAD,
                got: bytes.len(),
            });
        }
        if bytes[..2] != SYNC {
            return Err(FrameError::Sync);
        }
        let header = check_header(&bytes[2..HEADER_LEN])?;
        let total = OVERHEAD + header.len;
        if bytes.len() != total {
            return Err(FrameError::Truncated {
                expected: total,
                got: bytes.len(),
            });
        }
        let mut crc = Crc16::new();
        crc.update(&bytes[2..HEADER_LEN + header.len]);
        let computed = crc.finish();
        let received = u16::from_le_bytes([bytes[total - 2], bytes[total - 1]]);
        if computed != received {
            return Err(FrameError::Crc { computed, received });
        }
        Ok(Frame {
            version: VERSION,
            ftype: header.ftype,
            seq: header.seq,
            payload: bytes[HEADER_LEN..HEADER_LEN + header.len].to_vec(),
        })
    }
}

pub(crate) struct Header {
    pub ftype: FrameType,
    pub seq: u8,
    pub len: usize,
}

/// Checks `version, ftype, seq, len` against the schema.
pub(crate) fn check_header(h: &[u8]) -> Result<Header, FrameError> {
    let (version, ftype, seq, len) = (h[0], h[1], h[2], h[3] as usize);
    if version != VERSION {
        return Err(FrameError::Version(version));
    }
    let ftype = FrameType::from_u8(ftype).ok_or(FrameError::UnknownType(ftype))?;
    let expected = ftype.payload_len();
    if len != expected {
        return Err(FrameError::Length {
            ftype,
            expected,
            got: len,
        });
    }
    Ok(Header { ftype, seq, len })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn feedback_zero_frame_bytes() {
        let f = Frame::new(FrameType::Feedback, 0, vec![0; 4]);
        assert_eq!(
            f.encode().unwrap(),
            [0xAA, 0x55, 0x01, 0x02, 0x00, 0x04, 0x00, 0x00, 0x00, 0x00, 0x08, 0x9F]
        );
    }

    #[test]
    fn telemetry_zero_frame_bytes() {
        let f = Frame::new(FrameType::Telemetry, 7, vec![0; 16]);
        let bytes = f.encode().unwrap();
        assert_eq!(bytes.len(), 24);
        assert_eq!(bytes[..6], [0xAA, 0x55, 0x01, 0x01, 0x07, 0x10]);
        assert!(bytes[6..22].iter().all(|&b| b == 0));
        assert_eq!(bytes[22..], [0xC0, 0xF3]);
    }

    #[test]
    fn encode_rejects_bad_frames_without_output() {
        let mut out = vec![1, 2, 3];
        let f = Frame::new(FrameType::Feedback, 0, vec![0; 5]);
        assert!(matches!(f.encode_into(&mut out), Err(FrameError::Length { .. })));
        let mut f = Frame::new(FrameType::ConfigAck, 0, vec![0]);
        f.version = 2;
        assert_eq!(f.encode_into(&mut out), Err(FrameError::Version(2)));
        assert_eq!(out, [1, 2, 3]);
    }

    #[test]
    fn decode_roundtrip_and_errors() {
        let f = Frame::new(FrameType::ConfigAck, 200, vec![1]);
        let mut bytes = f.encode().unwrap();
        assert_eq!(Frame::decode(&bytes).unwrap(), f);
        bytes[6] ^= 0x01;
        assert!(matches!(Frame::decode(&bytes), Err(FrameError::Crc { .. })));
        assert!(matches!(
            Frame::decode(&bytes[..5]),
            Err(FrameError::Truncated { .. })
        ));
        let mut unknown = bytes.clone();
        unknown[3] = 0x09;
        assert_eq!(Frame::decode(&unknown), Err(FrameError::UnknownType(9)));
    }
}
