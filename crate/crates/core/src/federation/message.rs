//! Message types and the length-prefixed JSON framing shared by every
//! transport.
//!
//! A frame is a 4-byte big-endian payload length followed by that many bytes
//! of UTF-8 JSON. The JSON object always carries `version` (the protocol
//! version) and `type` (the message discriminant); unknown discriminants and
//! version mismatches are rejected before any typed decoding happens, so a
//! peer speaking a future revision fails loudly instead of half-parsing.

use serde::{Deserialize, Serialize};
use std::io::{self, Read, Write};
use thiserror::Error;

use crate::domain::{BinnedRecord, Dataset};
use crate::federation::aggregate::GlobalModel;
use crate::learners::LocalModel;
use crate::metrics::ConfusionMatrix;

/// Version tag embedded in every frame.
pub const PROTOCOL_VERSION: u32 = 1;

/// Hard cap on a single frame's payload (64 MiB). Oversized frames fail at
/// encode time on the sender and before allocation on the receiver.
pub const MAX_FRAME_BYTES: usize = 64 * 1024 * 1024;

/// Everything that travels between a client and the coordinator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Message {
    /// First message on every connection; announces the client's identity.
    Register { client_id: u32 },
    /// A trained local model plus its reporting metadata.
    LocalModel { client_id: u32, model: LocalModel },
    /// A client's binned shard, uploaded only in paper13 mode.
    Shard {
        client_id: u32,
        dataset: Dataset<BinnedRecord>,
    },
    /// The coordinator's current global model, broadcast to every client.
    GlobalModel { round: usize, global: GlobalModel },
    /// Confusion of the most recently received global model on the
    /// client's own shard.
    EvalResult {
        client_id: u32,
        round: usize,
        confusion: ConfusionMatrix,
    },
    /// Orderly end of the session.
    Shutdown,
}

impl Message {
    /// Discriminant string as it appears on the wire.
    pub fn type_name(&self) -> &'static str {
        match self {
            Message::Register { .. } => "register",
            Message::LocalModel { .. } => "local_model",
            Message::Shard { .. } => "shard",
            Message::GlobalModel { .. } => "global_model",
            Message::EvalResult { .. } => "eval_result",
            Message::Shutdown => "shutdown",
        }
    }
}

const KNOWN_TYPES: [&str; 6] = [
    "register",
    "local_model",
    "shard",
    "global_model",
    "eval_result",
    "shutdown",
];

#[derive(Debug, Serialize, Deserialize)]
struct WireMessage {
    version: u32,
    #[serde(flatten)]
    message: Message,
}

/// Failure modes of framing, decoding, and transport policy.
#[derive(Debug, Error)]
pub enum WireError {
    #[error("frame of {len} bytes exceeds the {MAX_FRAME_BYTES}-byte limit")]
    FrameTooLarge { len: usize },
    #[error("malformed payload: {detail}")]
    MalformedPayload { detail: String },
    #[error("unknown message type {got:?}")]
    UnknownType { got: String },
    #[error("protocol version mismatch: peer sent {got}, expected {expected}")]
    VersionMismatch { got: u64, expected: u32 },
    #[error("peer closed the connection")]
    ConnectionClosed,
    #[error("transport policy forbids {message_type} messages in {mode} mode")]
    PolicyViolation {
        message_type: &'static str,
        mode: &'static str,
    },
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
}

/// Serialize a message into a complete frame (length prefix + JSON payload).
pub fn encode_frame(msg: &Message) -> Result<Vec<u8>, WireError> {
    let wire = WireMessage {
        version: PROTOCOL_VERSION,
        message: msg.clone(),
    };
    let payload = serde_json::to_vec(&wire).map_err(|e| WireError::MalformedPayload {
        detail: format!("serialize: {e}"),
    })?;
    if payload.len() > MAX_FRAME_BYTES {
        return Err(WireError::FrameTooLarge {
            len: payload.len(),
        });
    }
    let mut frame = Vec::with_capacity(4 + payload.len());
    frame.extend_from_slice(&(payload.len() as u32).to_be_bytes());
    frame.extend_from_slice(&payload);
    Ok(frame)
}

/// Decode a frame payload (the bytes after the length prefix) into a message.
///
/// Validation order: UTF-8/JSON shape, then protocol version, then message
/// type, then the full typed decode.
pub fn decode_frame(payload: &[u8]) -> Result<Message, WireError> {
    let value: serde_json::Value =
        serde_json::from_slice(payload).map_err(|e| WireError::MalformedPayload {
            detail: format!("json: {e}"),
        })?;
    let obj = value.as_object().ok_or_else(|| WireError::MalformedPayload {
        detail: "payload is not a json object".into(),
    })?;
    let version = obj
        .get("version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| WireError::MalformedPayload {
            detail: "missing or non-integer version field".into(),
        })?;
    if version != u64::from(PROTOCOL_VERSION) {
        return Err(WireError::VersionMismatch {
            got: version,
            expected: PROTOCOL_VERSION,
        });
    }
    let msg_type = obj
        .get("type")
        .and_then(|v| v.as_str())
        .ok_or_else(|| WireError::MalformedPayload {
            detail: "missing or non-string type field".into(),
        })?
        .to_string();
    if !KNOWN_TYPES.contains(&msg_type.as_str()) {
        return Err(WireError::UnknownType { got: msg_type });
    }
    let wire: WireMessage =
        serde_json::from_value(value).map_err(|e| WireError::MalformedPayload {
            detail: format!("{msg_type}: {e}"),
        })?;
    Ok(wire.message)
}

/// Split a complete frame (as carried by the in-process transport) into its
/// payload, applying the same length checks the socket path performs.
pub fn parse_frame_bytes(frame: &[u8]) -> Result<&[u8], WireError> {
    if frame.len() < 4 {
        return Err(WireError::MalformedPayload {
            detail: format!("frame of {} bytes is shorter than the length prefix", frame.len()),
        });
    }
    let len = u32::from_be_bytes([frame[0], frame[1], frame[2], frame[3]]) as usize;
    if len > MAX_FRAME_BYTES {
        return Err(WireError::FrameTooLarge { len });
    }
    let payload = &frame[4..];
    if payload.len() != len {
        return Err(WireError::MalformedPayload {
            detail: format!("length prefix says {len} bytes but frame carries {}", payload.len()),
        });
    }
    Ok(payload)
}

/// Read one frame's payload from a byte stream.
pub fn read_frame(reader: &mut impl Read) -> Result<Vec<u8>, WireError> {
    let mut prefix = [0u8; 4];
    let mut filled = 0;
    while filled < prefix.len() {
        match reader.read(&mut prefix[filled..]) {
            Ok(0) if filled == 0 => return Err(WireError::ConnectionClosed),
            Ok(0) => {
                return Err(WireError::MalformedPayload {
                    detail: "stream ended inside the length prefix".into(),
                })
            }
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
            Err(e) => return Err(WireError::Io(e)),
        }
    }
    let len = u32::from_be_bytes(prefix) as usize;
    if len > MAX_FRAME_BYTES {
        return Err(WireError::FrameTooLarge { len });
    }
    let mut payload = vec![0u8; len];
    reader.read_exact(&mut payload).map_err(|e| {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            WireError::MalformedPayload {
                detail: "stream ended inside the payload".into(),
            }
        } else {
            WireError::Io(e)
        }
    })?;
    Ok(payload)
}

/// Write a complete frame to a byte stream.
pub fn write_frame(writer: &mut impl Write, frame: &[u8]) -> Result<(), WireError> {
    writer.write_all(frame)?;
    writer.flush()?;
    Ok(())
}
