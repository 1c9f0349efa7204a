//! Framed connections over TCP sockets or in-process channels.
//!
//! Both transports move the *same* encoded frame bytes — the in-process path
//! sends complete frames (length prefix included) through an `mpsc` channel
//! and re-validates the prefix on receipt, so swapping transports changes
//! nothing about what is serialized or checked.

use std::io::BufReader;
use std::net::TcpStream;
use std::sync::mpsc::{channel, Receiver, Sender};
use std::time::Duration;

use crate::federation::aggregate::AggregationMode;
use crate::federation::message::{
    decode_frame, encode_frame, parse_frame_bytes, read_frame, write_frame, Message, WireError,
};

/// Read timeout applied to TCP sockets so a stalled peer fails the run
/// instead of hanging it.
const TCP_READ_TIMEOUT: Duration = Duration::from_secs(60);

/// What a connection is allowed to carry. Raw-data messages are only legal
/// in paper13 mode; fedavg exchanges parameters exclusively, and the
/// transport enforces that on both send and receive.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SendPolicy {
    pub allow_shards: bool,
}

impl SendPolicy {
    pub fn for_mode(mode: AggregationMode) -> SendPolicy {
        SendPolicy {
            allow_shards: matches!(mode, AggregationMode::Paper13),
        }
    }

    fn check(&self, msg: &Message) -> Result<(), WireError> {
        if matches!(msg, Message::Shard { .. }) && !self.allow_shards {
            return Err(WireError::PolicyViolation {
                message_type: "shard",
                mode: "fedavg",
            });
        }
        Ok(())
    }
}

enum Inner {
    Tcp {
        reader: BufReader<TcpStream>,
        writer: TcpStream,
    },
    InProc {
        tx: Sender<Vec<u8>>,
        rx: Receiver<Vec<u8>>,
    },
}

/// One end of a bidirectional, message-oriented connection.
pub struct FramedConn {
    inner: Inner,
    policy: SendPolicy,
}

impl FramedConn {
    /// Wrap an established TCP stream.
    pub fn tcp(stream: TcpStream, policy: SendPolicy) -> Result<FramedConn, WireError> {
        stream.set_read_timeout(Some(TCP_READ_TIMEOUT))?;
        stream.set_nodelay(true)?;
        let writer = stream.try_clone()?;
        Ok(FramedConn {
            inner: Inner::Tcp {
                reader: BufReader::new(stream),
                writer,
            },
            policy,
        })
    }

    /// Send one message, enforcing the transport policy.
    pub fn send(&mut self, msg: &Message) -> Result<(), WireError> {
        self.policy.check(msg)?;
        let frame = encode_frame(msg)?;
        match &mut self.inner {
            Inner::Tcp { writer, .. } => write_frame(writer, &frame),
            Inner::InProc { tx, .. } => {
                tx.send(frame).map_err(|_| WireError::ConnectionClosed)
            }
        }
    }

    /// Receive one message, blocking until a full frame arrives.
    pub fn recv(&mut self) -> Result<Message, WireError> {
        let msg = match &mut self.inner {
            Inner::Tcp { reader, .. } => {
                let payload = read_frame(reader)?;
                decode_frame(&payload)?
            }
            Inner::InProc { rx, .. } => {
                let frame = rx.recv().map_err(|_| WireError::ConnectionClosed)?;
                let payload = parse_frame_bytes(&frame)?;
                decode_frame(payload)?
            }
        };
        self.policy.check(&msg)?;
        Ok(msg)
    }
}

/// Build a connected in-process pair: messages sent on one end arrive at the
/// other. Both ends share the same policy.
pub fn inproc_pair(policy: SendPolicy) -> (FramedConn, FramedConn) {
    let (tx_a, rx_b) = channel();
    let (tx_b, rx_a) = channel();
    let a = FramedConn {
        inner: Inner::InProc { tx: tx_a, rx: rx_a },
        policy,
    };
    let b = FramedConn {
        inner: Inner::InProc { tx: tx_b, rx: rx_b },
        policy,
    };
    (a, b)
}
