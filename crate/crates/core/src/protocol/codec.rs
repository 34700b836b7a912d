//! Wire framing: `length u32 BE | type u8 | payload`, where the payload is
//! a sequence of `u32 LE`-length-prefixed fields. The length covers the
//! type byte and payload; frames are capped at 64 MiB.

use crate::error::{Error, Result};

pub const MAX_FRAME: usize = 64 * 1024 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum FrameType {
    /// Device deployment request `{I_i, N_d}`.
    Md1 = 0x01,
    /// Provider challenge `{C, R xor mask, hash(N_d || R)}`.
    Mp1 = 0x02,
    /// Device authentication reply `{hash(mask || R)}`.
    Md2 = 0x03,
    /// Encrypted model delivery `{container}`.
    Mp2 = 0x04,
    /// Registration-phase frames (subtype in field 0).
    Reg = 0x10,
    /// Error: fields `{code, message}`.
    Error = 0x7F,
}

impl FrameType {
    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            0x01 => Some(FrameType::Md1),
            0x02 => Some(FrameType::Mp1),
            0x03 => Some(FrameType::Md2),
            0x04 => Some(FrameType::Mp2),
            0x10 => Some(FrameType::Reg),
            0x7F => Some(FrameType::Error),
            _ => None,
        }
    }
}

/// Registration subtypes, carried as field 0 of a `Reg` frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum RegKind {
    Hello = 1,
    Challenges = 2,
    Responses = 3,
    Helpers = 4,
}

impl RegKind {
    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            1 => Some(RegKind::Hello),
            2 => Some(RegKind::Challenges),
            3 => Some(RegKind::Responses),
            4 => Some(RegKind::Helpers),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WireFrame {
    pub frame_type: FrameType,
    pub fields: Vec<Vec<u8>>,
}

impl WireFrame {
    pub fn new(frame_type: FrameType, fields: Vec<Vec<u8>>) -> Self {
        WireFrame { frame_type, fields }
    }

    pub fn error(code: &str, message: &str) -> Self {
        WireFrame::new(
            FrameType::Error,
            vec![code.as_bytes().to_vec(), message.as_bytes().to_vec()],
        )
    }

    /// Field accessor with a protocol error on missing index.
    pub fn field(&self, index: usize) -> Result<&[u8]> {
        self.fields
            .get(index)
            .map(|f| f.as_slice())
            .ok_or_else(|| Error::Protocol(format!("frame missing field {index}")))
    }

    pub fn error_code(&self) -> Option<String> {
        if self.frame_type == FrameType::Error {
            Some(String::from_utf8_lossy(self.fields.first()?).into_owned())
        } else {
            None
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let payload_len: usize = self.fields.iter().map(|f| 4 + f.len()).sum();
        let total = 1 + payload_len;
        let mut out = Vec::with_capacity(4 + total);
        out.extend_from_slice(&(total as u32).to_be_bytes());
        out.push(self.frame_type as u8);
        for field in &self.fields {
            out.extend_from_slice(&(field.len() as u32).to_le_bytes());
            out.extend_from_slice(field);
        }
        out
    }

    fn decode_body(body: &[u8]) -> Result<Self> {
        if body.is_empty() {
            return Err(Error::Protocol("empty frame body".into()));
        }
        let frame_type = FrameType::from_byte(body[0])
            .ok_or_else(|| Error::Protocol(format!("unknown frame type 0x{:02x}", body[0])))?;
        let mut fields = Vec::new();
        let mut pos = 1;
        while pos < body.len() {
            if pos + 4 > body.len() {
                return Err(Error::Protocol("truncated field length".into()));
            }
            let len = u32::from_le_bytes(body[pos..pos + 4].try_into().unwrap()) as usize;
            pos += 4;
            if pos + len > body.len() {
                return Err(Error::Protocol("field overruns frame".into()));
            }
            fields.push(body[pos..pos + len].to_vec());
            pos += len;
        }
        Ok(WireFrame { frame_type, fields })
    }
}

/// Incremental frame decoder: feed arbitrary byte chunks, pop complete
/// frames. Survives any fragmentation or reassembly of the stream.
#[derive(Debug, Default)]
pub struct FrameDecoder {
    buf: Vec<u8>,
}

impl FrameDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, bytes: &[u8]) -> Result<Vec<WireFrame>> {
        self.buf.extend_from_slice(bytes);
        let mut frames = Vec::new();
        loop {
            if self.buf.len() < 4 {
                break;
            }
            let total = u32::from_be_bytes(self.buf[..4].try_into().unwrap()) as usize;
            if total == 0 || total > MAX_FRAME {
                return Err(Error::Protocol(format!("frame length {total} out of range")));
            }
            if self.buf.len() < 4 + total {
                break;
            }
            let frame = WireFrame::decode_body(&self.buf[4..4 + total])?;
            self.buf.drain(..4 + total);
            frames.push(frame);
        }
        Ok(frames)
    }
}
