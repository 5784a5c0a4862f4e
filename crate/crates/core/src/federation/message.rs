//! Wire envelope for the round protocol.
//!
//! A frame is a 4-byte big-endian unsigned length followed by the envelope:
//! one textual header line (`type round sender digest [val]`) terminated by
//! a newline, then the binary parameter payload. The header carries nothing
//! but those fields — no node counts, no sample counts, no data arrays —
//! which is the privacy boundary of the protocol.

use std::io::{Read, Write};

use super::FedError;

/// Cap on a single frame; a desk-scale parameter payload is kilobytes, so
/// anything near this is corruption.
const MAX_FRAME: u32 = 256 * 1024 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MessageKind {
    Hello,
    GlobalParams,
    LocalParams,
    RoundDone,
    Shutdown,
}

impl MessageKind {
    pub fn name(self) -> &'static str {
        match self {
            MessageKind::Hello => "HELLO",
            MessageKind::GlobalParams => "GLOBAL_PARAMS",
            MessageKind::LocalParams => "LOCAL_PARAMS",
            MessageKind::RoundDone => "ROUND_DONE",
            MessageKind::Shutdown => "SHUTDOWN",
        }
    }

    fn from_name(name: &str) -> Option<MessageKind> {
        Some(match name {
            "HELLO" => MessageKind::Hello,
            "GLOBAL_PARAMS" => MessageKind::GlobalParams,
            "LOCAL_PARAMS" => MessageKind::LocalParams,
            "ROUND_DONE" => MessageKind::RoundDone,
            "SHUTDOWN" => MessageKind::Shutdown,
            _ => return None,
        })
    }
}

/// Envelope for one protocol message.
///
/// `payload` is a serialized parameter bundle on HELLO (the manifest-bearing
/// registration), GLOBAL_PARAMS and LOCAL_PARAMS, and empty otherwise.
/// `val_loss` is the one scalar of round metadata a client reports (its best
/// validation loss so far, driving server-side early stopping).
#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub kind: MessageKind,
    pub round: usize,
    pub sender: String,
    pub digest: u64,
    pub val_loss: Option<f64>,
    pub payload: Vec<u8>,
}

impl Message {
    pub fn control(kind: MessageKind, round: usize, sender: &str) -> Message {
        Message {
            kind,
            round,
            sender: sender.to_string(),
            digest: 0,
            val_loss: None,
            payload: Vec::new(),
        }
    }

    /// Envelope bytes (header line + payload), without the frame length.
    pub fn encode(&self) -> Vec<u8> {
        let mut header = format!(
            "type={} round={} sender={} digest={:016x}",
            self.kind.name(),
            self.round,
            self.sender,
            self.digest
        );
        if let Some(v) = self.val_loss {
            // shortest round-trip float formatting keeps frames reproducible
            header.push_str(&format!(" val={v}"));
        }
        header.push('\n');
        let mut out = Vec::with_capacity(header.len() + self.payload.len());
        out.extend_from_slice(header.as_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Message, FedError> {
        let newline = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| FedError::Codec("message header has no terminator".into()))?;
        let header = std::str::from_utf8(&bytes[..newline])
            .map_err(|_| FedError::Codec("message header is not UTF-8".into()))?;
        let mut kind = None;
        let mut round = None;
        let mut sender = None;
        let mut digest = None;
        let mut val_loss = None;
        for field in header.split(' ') {
            let (key, value) = field
                .split_once('=')
                .ok_or_else(|| FedError::Codec(format!("malformed header field {field:?}")))?;
            match key {
                "type" => kind = MessageKind::from_name(value),
                "round" => round = value.parse::<usize>().ok(),
                "sender" => sender = Some(value.to_string()),
                "digest" => digest = u64::from_str_radix(value, 16).ok(),
                "val" => {
                    val_loss = Some(
                        value
                            .parse::<f64>()
                            .map_err(|_| FedError::Codec(format!("bad val field {value:?}")))?,
                    )
                }
                other => {
                    return Err(FedError::Codec(format!("unknown header key {other:?}")));
                }
            }
        }
        Ok(Message {
            kind: kind.ok_or_else(|| FedError::Codec("missing message type".into()))?,
            round: round.ok_or_else(|| FedError::Codec("missing round".into()))?,
            sender: sender.ok_or_else(|| FedError::Codec("missing sender".into()))?,
            digest: digest.ok_or_else(|| FedError::Codec("missing digest".into()))?,
            val_loss,
            payload: bytes[newline + 1..].to_vec(),
        })
    }
}

/// Write one length-prefixed frame.
pub fn write_frame(writer: &mut impl Write, message: &Message) -> std::io::Result<()> {
    let body = message.encode();
    writer.write_all(&(body.len() as u32).to_be_bytes())?;
    writer.write_all(&body)?;
    writer.flush()
}

/// Read one length-prefixed frame.
pub fn read_frame(reader: &mut impl Read) -> Result<Message, FedError> {
    let mut len_bytes = [0u8; 4];
    reader.read_exact(&mut len_bytes)?;
    let len = u32::from_be_bytes(len_bytes);
    if len > MAX_FRAME {
        return Err(FedError::Codec(format!("frame of {len} bytes exceeds cap")));
    }
    let mut body = vec![0u8; len as usize];
    reader.read_exact(&mut body)?;
    Message::decode(&body)
}
