//! Frame layout: tag (u8), step (u64 LE), payload length (u32 LE), payload.

use std::io::{self, Read, Write};

use nalgebra::{DVector, Vector2, Vector4};
use thiserror::Error;

use crate::dynamics::RotorCommand;
use crate::perception::{Frame, MarkerObservation};
use crate::sensing::Measurement;

pub const HEADER_LEN: usize = 13;

/// Payloads above this are rejected before allocation.
pub const MAX_PAYLOAD: u32 = 64 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Tag {
    Measurement = 1,
    MarkerObservation = 2,
    Frame = 3,
    RotorCommand = 4,
    Heartbeat = 5,
}

impl TryFrom<u8> for Tag {
    type Error = WireError;

    fn try_from(v: u8) -> Result<Self, WireError> {
        Ok(match v {
            1 => Tag::Measurement,
            2 => Tag::MarkerObservation,
            3 => Tag::Frame,
            4 => Tag::RotorCommand,
            5 => Tag::Heartbeat,
            other => return Err(WireError::UnknownTag(other)),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WireError {
    #[error("truncated message: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },
    #[error("unknown message tag {0}")]
    UnknownTag(u8),
    #[error("{tag:?} payload of {actual} bytes, expected {expected}")]
    LengthMismatch {
        tag: Tag,
        expected: String,
        actual: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Measurement(Measurement),
    Observation {
        step: u64,
        observation: MarkerObservation,
    },
    Frame(Frame),
    Command {
        step: u64,
        command: RotorCommand,
    },
    Heartbeat {
        step: u64,
    },
}

impl Message {
    pub fn tag(&self) -> Tag {
        match self {
            Message::Measurement(_) => Tag::Measurement,
            Message::Observation { .. } => Tag::MarkerObservation,
            Message::Frame(_) => Tag::Frame,
            Message::Command { .. } => Tag::RotorCommand,
            Message::Heartbeat { .. } => Tag::Heartbeat,
        }
    }

    pub fn step(&self) -> u64 {
        match self {
            Message::Measurement(m) => m.step,
            Message::Frame(f) => f.step,
            Message::Observation { step, .. }
            | Message::Command { step, .. }
            | Message::Heartbeat { step } => *step,
        }
    }

    fn payload(&self) -> Vec<u8> {
        fn floats(v: impl IntoIterator<Item = f64>) -> Vec<u8> {
            v.into_iter().flat_map(f64::to_le_bytes).collect()
        }
        match self {
            Message::Measurement(m) => floats(m.values.iter().copied()),
            Message::Observation { observation: o, .. } => floats([
                o.center.x,
                o.center.y,
                o.side,
                if o.visible { 1.0 } else { 0.0 },
            ]),
            Message::Frame(f) => {
                let mut out = Vec::with_capacity(8 + f.pixels.len());
                out.extend_from_slice(&f.width.to_le_bytes());
                out.extend_from_slice(&f.height.to_le_bytes());
                out.extend_from_slice(&f.pixels);
                out
            }
            Message::Command { command, .. } => floats(command.0.iter().copied()),
            Message::Heartbeat { .. } => Vec::new(),
        }
    }
}

pub fn encode(msg: &Message) -> Vec<u8> {
    let payload = msg.payload();
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
    out.push(msg.tag() as u8);
    out.extend_from_slice(&msg.step().to_le_bytes());
    out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    out.extend_from_slice(&payload);
    out
}

struct Header {
    tag: Tag,
    step: u64,
    len: usize,
}

fn parse_header(buf: &[u8]) -> Result<Header, WireError> {
    if buf.len() < HEADER_LEN {
        return Err(WireError::Truncated {
            needed: HEADER_LEN,
            available: buf.len(),
        });
    }
    let tag = Tag::try_from(buf[0])?;
    let step = u64::from_le_bytes(buf[1..9].try_into().expect("8 bytes"));
    let len = u32::from_le_bytes(buf[9..13].try_into().expect("4 bytes"));
    if len > MAX_PAYLOAD {
        return Err(WireError::LengthMismatch {
            tag,
            expected: format!("at most {MAX_PAYLOAD}"),
            actual: len as usize,
        });
    }
    Ok(Header {
        tag,
        step,
        len: len as usize,
    })
}

fn decode_payload(h: &Header, payload: &[u8]) -> Result<Message, WireError> {
    let mismatch = |expected: String| WireError::LengthMismatch {
        tag: h.tag,
        expected,
        actual: payload.len(),
    };
    let floats = |p: &[u8]| -> Vec<f64> {
        p.chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect()
    };
    let step = h.step;
    match h.tag {
        Tag::Measurement => {
            if !payload.len().is_multiple_of(8) {
                return Err(mismatch("a multiple of 8".into()));
            }
            Ok(Message::Measurement(Measurement::new(
                step,
                DVector::from_vec(floats(payload)),
            )))
        }
        Tag::MarkerObservation => {
            if payload.len() != 32 {
                return Err(mismatch("32".into()));
            }
            let v = floats(payload);
            let observation = MarkerObservation {
                center: Vector2::new(v[0], v[1]),
                side: v[2],
                visible: v[3] != 0.0,
            };
            Ok(Message::Observation { step, observation })
        }
        Tag::Frame => {
            if payload.len() < 8 {
                return Err(mismatch("at least 8".into()));
            }
            let width = u32::from_le_bytes(payload[0..4].try_into().expect("4 bytes"));
            let height = u32::from_le_bytes(payload[4..8].try_into().expect("4 bytes"));
            let expected = 8 + width as usize * height as usize;
            if payload.len() != expected {
                return Err(mismatch(expected.to_string()));
            }
            Ok(Message::Frame(Frame {
                width,
                height,
                step,
                pixels: payload[8..].to_vec(),
            }))
        }
        Tag::RotorCommand => {
            if payload.len() != 32 {
                return Err(mismatch("32".into()));
            }
            let v = floats(payload);
            Ok(Message::Command {
                step,
                command: RotorCommand(Vector4::new(v[0], v[1], v[2], v[3])),
            })
        }
        Tag::Heartbeat => {
            if !payload.is_empty() {
                return Err(mismatch("0".into()));
            }
            Ok(Message::Heartbeat { step })
        }
    }
}

/// Decodes the first message in `buf`, returning it with the number of
/// bytes it occupied.
pub fn decode(buf: &[u8]) -> Result<(Message, usize), WireError> {
    let h = parse_header(buf)?;
    let total = HEADER_LEN + h.len;
    if buf.len() < total {
        return Err(WireError::Truncated {
            needed: total,
            available: buf.len(),
        });
    }
    Ok((decode_payload(&h, &buf[HEADER_LEN..total])?, total))
}

/// Incremental decoder over an arbitrarily chunked byte stream.
#[derive(Debug, Default)]
pub struct StreamDecoder {
    buf: Vec<u8>,
}

impl StreamDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    /// Next complete message, or `None` while only a partial one is buffered.
    pub fn next_message(&mut self) -> Result<Option<Message>, WireError> {
        match decode(&self.buf) {
            Ok((msg, used)) => {
                self.buf.drain(..used);
                Ok(Some(msg))
            }
            Err(WireError::Truncated { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    }

    /// Bytes not yet consumed.
    pub fn residue(&self) -> &[u8] {
        &self.buf
    }
}

#[derive(Debug, Error)]
pub enum ReadError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Wire(#[from] WireError),
}

fn read_full(r: &mut impl Read, buf: &mut [u8]) -> io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(filled)
}

/// Reads one message. `Ok(None)` on a clean end of stream; a stream that
/// ends inside a message is a truncation error.
pub fn read_message(r: &mut impl Read) -> Result<Option<Message>, ReadError> {
    let mut header = [0u8; HEADER_LEN];
    let got = read_full(r, &mut header)?;
    if got == 0 {
        return Ok(None);
    }
    let h = parse_header(&header[..got])?;
    let mut payload = vec![0u8; h.len];
    let got_payload = read_full(r, &mut payload)?;
    if got_payload < h.len {
        return Err(WireError::Truncated {
            needed: HEADER_LEN + h.len,
            available: HEADER_LEN + got_payload,
        }
        .into());
    }
    Ok(Some(decode_payload(&h, &payload)?))
}

pub fn write_message(w: &mut impl Write, msg: &Message) -> io::Result<()> {
    w.write_all(&encode(msg))
}
