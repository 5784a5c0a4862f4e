//! Duplex message transports.
//!
//! Both transports move the exact same encoded envelopes: the in-process
//! one over channels, the socket one over TCP with length-prefixed frames.
//! Runs over either must produce bit-identical results.

use std::io::{BufReader, BufWriter};
use std::net::TcpStream;
use std::sync::mpsc::{channel, Receiver, Sender};
use std::time::Duration;

use super::message::{read_frame, write_frame, Message};
use super::FedError;

pub trait Connection: Send {
    fn send(&mut self, message: &Message) -> Result<(), FedError>;
    fn recv(&mut self) -> Result<Message, FedError>;
}

/// Channel-backed endpoint; envelopes are still encoded and decoded so the
/// code path matches the socket transport byte for byte.
pub struct InProcConnection {
    tx: Sender<Vec<u8>>,
    rx: Receiver<Vec<u8>>,
    timeout: Duration,
}

/// Crossed pair of in-process endpoints.
pub fn inproc_pair() -> (InProcConnection, InProcConnection) {
    let (a_tx, b_rx) = channel();
    let (b_tx, a_rx) = channel();
    let timeout = Duration::from_secs(600);
    (
        InProcConnection {
            tx: a_tx,
            rx: a_rx,
            timeout,
        },
        InProcConnection {
            tx: b_tx,
            rx: b_rx,
            timeout,
        },
    )
}

impl Connection for InProcConnection {
    fn send(&mut self, message: &Message) -> Result<(), FedError> {
        self.tx
            .send(message.encode())
            .map_err(|_| FedError::Transport("peer disconnected".into()))
    }

    fn recv(&mut self) -> Result<Message, FedError> {
        let bytes = self
            .rx
            .recv_timeout(self.timeout)
            .map_err(|e| FedError::Transport(format!("recv failed: {e}")))?;
        Message::decode(&bytes)
    }
}

/// TCP endpoint speaking length-prefixed frames.
pub struct SocketConnection {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
}

impl SocketConnection {
    pub fn new(stream: TcpStream) -> Result<SocketConnection, FedError> {
        stream
            .set_read_timeout(Some(Duration::from_secs(600)))
            .map_err(|e| FedError::Transport(e.to_string()))?;
        stream.set_nodelay(true).ok();
        let reader = BufReader::new(
            stream
                .try_clone()
                .map_err(|e| FedError::Transport(e.to_string()))?,
        );
        Ok(SocketConnection {
            reader,
            writer: BufWriter::new(stream),
        })
    }
}

impl Connection for SocketConnection {
    fn send(&mut self, message: &Message) -> Result<(), FedError> {
        write_frame(&mut self.writer, message).map_err(|e| FedError::Transport(e.to_string()))
    }

    fn recv(&mut self) -> Result<Message, FedError> {
        read_frame(&mut self.reader)
    }
}
