//! Line-delimited JSON wire protocol: `{"type", "seq", "payload"}` per line.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use endonav::servo::{ModeKind, NavCommand, Status};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub const PROTOCOL_VERSION: u32 = 1;
/// Longest accepted client line, bytes.
pub const MAX_LINE: usize = 64 * 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    #[serde(rename = "type")]
    pub kind: String,
    pub seq: u64,
    #[serde(default)]
    pub payload: Value,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProtocolError {
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("unknown message type `{0}`")]
    UnknownType(String),
    #[error("invalid `{kind}` payload: {message}")]
    BadPayload { kind: String, message: String },
    #[error("seq {seq} does not follow {last}")]
    NonMonotoneSeq { seq: u64, last: u64 },
    #[error("line of {0} bytes exceeds the limit")]
    TooLong(usize),
}

impl ProtocolError {
    pub fn code(&self) -> &'static str {
        match self {
            ProtocolError::Malformed(_) => "malformed",
            ProtocolError::UnknownType(_) => "unknown_type",
            ProtocolError::BadPayload { .. } => "bad_payload",
            ProtocolError::NonMonotoneSeq { .. } => "non_monotone_seq",
            ProtocolError::TooLong(_) => "too_long",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Joystick {
    /// Image direction, x right and y down; normalized by the server.
    pub direction: [f64; 2],
    /// px/s.
    pub speed: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Advance {
    pub mm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Hello {
    #[serde(default)]
    pub client: Option<String>,
}

/// Messages a client may send.
#[derive(Debug, Clone, PartialEq)]
pub enum ClientMessage {
    Hello(Hello),
    Mode(NavCommand),
    Joystick(Joystick),
    TargetFrame(Point),
    TargetMosaic(Point),
    Advance(Advance),
    Halt,
}

impl ClientMessage {
    pub fn kind(&self) -> &'static str {
        match self {
            ClientMessage::Hello(_) => "hello",
            ClientMessage::Mode(_) => "mode",
            ClientMessage::Joystick(_) => "joystick",
            ClientMessage::TargetFrame(_) => "target_frame",
            ClientMessage::TargetMosaic(_) => "target_mosaic",
            ClientMessage::Advance(_) => "advance",
            ClientMessage::Halt => "halt",
        }
    }

    pub fn to_line(&self, seq: u64) -> String {
        let payload = match self {
            ClientMessage::Hello(h) => serde_json::to_value(h),
            ClientMessage::Mode(c) => serde_json::to_value(c),
            ClientMessage::Joystick(j) => serde_json::to_value(j),
            ClientMessage::TargetFrame(p) | ClientMessage::TargetMosaic(p) => serde_json::to_value(p),
            ClientMessage::Advance(a) => serde_json::to_value(a),
            ClientMessage::Halt => Ok(Value::Object(Default::default())),
        }
        .expect("client payloads serialize");
        envelope(self.kind(), seq, payload)
    }
}

fn payload<T: DeserializeOwned>(kind: &str, v: Value) -> Result<T, ProtocolError> {
    serde_json::from_value(v).map_err(|e| ProtocolError::BadPayload {
        kind: kind.into(),
        message: e.to_string(),
    })
}

/// Parses one client line into its sequence number and message.
pub fn parse_client_line(line: &str) -> Result<(u64, ClientMessage), ProtocolError> {
    if line.len() > MAX_LINE {
        return Err(ProtocolError::TooLong(line.len()));
    }
    let env: Envelope = serde_json::from_str(line).map_err(|e| ProtocolError::Malformed(e.to_string()))?;
    let k = env.kind.as_str();
    let p = env.payload;
    let msg = match k {
        "hello" => ClientMessage::Hello(if p.is_null() { Hello::default() } else { payload(k, p)? }),
        "mode" => ClientMessage::Mode(payload(k, p)?),
        "joystick" => ClientMessage::Joystick(payload(k, p)?),
        "target_frame" => ClientMessage::TargetFrame(payload(k, p)?),
        "target_mosaic" => ClientMessage::TargetMosaic(payload(k, p)?),
        "advance" => ClientMessage::Advance(payload(k, p)?),
        "halt" => ClientMessage::Halt,
        other => return Err(ProtocolError::UnknownType(other.chars().take(64).collect())),
    };
    Ok((env.seq, msg))
}

pub fn envelope(kind: &str, seq: u64, payload: impl Serialize) -> String {
    let payload = serde_json::to_value(payload).unwrap_or(Value::Null);
    serde_json::to_string(&Envelope {
        kind: kind.into(),
        seq,
        payload,
    })
    .expect("envelopes serialize")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerHello {
    pub protocol: u32,
    pub width: usize,
    pub height: usize,
    /// Tick period, seconds.
    pub dt: f64,
    pub frame_scale: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatusPayload {
    pub mode: ModeKind,
    pub status: Status,
    pub calibrated: bool,
    pub tick: u64,
    #[serde(default)]
    pub reason: Option<String>,
    /// Client seq this status answers, if any.
    #[serde(default)]
    pub reply_to: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorPayload {
    pub code: String,
    pub message: String,
    #[serde(default)]
    pub reply_to: Option<u64>,
}

/// Grayscale image: `data` is base64 of run-length pairs `(count, value)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImagePayload {
    pub width: usize,
    pub height: usize,
    /// Native pixels per transmitted pixel along each axis.
    pub scale: usize,
    pub encoding: String,
    pub data: String,
    #[serde(default)]
    pub frame_id: Option<u64>,
    /// Mosaic coordinates of the top-left transmitted pixel.
    #[serde(default)]
    pub origin: Option<[i64; 2]>,
}

pub const IMAGE_ENCODING: &str = "rle8+base64";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RleError {
    #[error("odd byte count {0}")]
    OddLength(usize),
    #[error("zero-length run at byte {0}")]
    ZeroRun(usize),
    #[error("decoded {got} pixels, expected {expected}")]
    LengthMismatch { got: usize, expected: usize },
    #[error("invalid base64: {0}")]
    Base64(String),
}

pub fn rle_encode(pixels: &[u8]) -> Vec<u8> {
    let mut out = Vec::new();
    let mut it = pixels.iter().copied().peekable();
    while let Some(v) = it.next() {
        let mut n = 1u8;
        while n < u8::MAX && it.peek() == Some(&v) {
            it.next();
            n += 1;
        }
        out.extend([n, v]);
    }
    out
}

/// Decodes `(count, value)` pairs into exactly `expected` pixels.
pub fn rle_decode(bytes: &[u8], expected: usize) -> Result<Vec<u8>, RleError> {
    if bytes.len() % 2 != 0 {
        return Err(RleError::OddLength(bytes.len()));
    }
    let mut out = Vec::with_capacity(expected.min(bytes.len() / 2 * u8::MAX as usize));
    for (i, pair) in bytes.chunks_exact(2).enumerate() {
        if pair[0] == 0 {
            return Err(RleError::ZeroRun(2 * i));
        }
        if out.len() + pair[0] as usize > expected {
            return Err(RleError::LengthMismatch {
                got: out.len() + pair[0] as usize,
                expected,
            });
        }
        out.extend(std::iter::repeat(pair[1]).take(pair[0] as usize));
    }
    if out.len() != expected {
        return Err(RleError::LengthMismatch { got: out.len(), expected });
    }
    Ok(out)
}

/// Box-filter downsampling by `factor`; partial edge blocks are dropped.
pub fn downsample(pixels: &[u8], width: usize, height: usize, factor: usize) -> (Vec<u8>, usize, usize) {
    let f = factor.max(1);
    let (w, h) = (width / f, height / f);
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let mut s = 0u32;
            for dy in 0..f {
                let row = (y * f + dy) * width + x * f;
                s += pixels[row..row + f].iter().map(|&v| v as u32).sum::<u32>();
            }
            out.push(((s + (f * f / 2) as u32) / (f * f) as u32) as u8);
        }
    }
    (out, w, h)
}

pub fn encode_image(pixels: &[u8], width: usize, height: usize, scale: usize) -> ImagePayload {
    let (small, w, h) = downsample(pixels, width, height, scale);
    ImagePayload {
        width: w,
        height: h,
        scale: scale.max(1),
        encoding: IMAGE_ENCODING.into(),
        data: STANDARD.encode(rle_encode(&small)),
        frame_id: None,
        origin: None,
    }
}

pub fn decode_image(img: &ImagePayload) -> Result<Vec<u8>, RleError> {
    let bytes = STANDARD.decode(&img.data).map_err(|e| RleError::Base64(e.to_string()))?;
    let expected = img.width.checked_mul(img.height).ok_or(RleError::LengthMismatch {
        got: 0,
        expected: usize::MAX,
    })?;
    rle_decode(&bytes, expected)
}
