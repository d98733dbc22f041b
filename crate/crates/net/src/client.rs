//! Blocking probe client for dataset generation.

use std::io::{self, Write};
use std::net::{SocketAddr, TcpStream, ToSocketAddrs};
use std::time::Duration;

use plcmimic_core::config::Protocol;
use plcmimic_core::dataset::{Transport, TransportError};
use plcmimic_core::s7::{JobParam, S7Body, S7Frame, SetupComm};

use crate::framing::read_frame_blocking;

/// COTP connection request, TSAP 0x0100 -> 0x0102 (rack 0, slot 2), TPDU size 1024.
pub const COTP_CR: [u8; 22] = [
    0x03, 0x00, 0x00, 0x16, 0x11, 0xe0, 0x00, 0x00, 0x00, 0x01, 0x00, 0xc0, 0x01, 0x0a, 0xc1, 0x02, 0x01, 0x00, 0xc2,
    0x02, 0x01, 0x02,
];

pub fn setup_request(pdu_length: u16) -> Vec<u8> {
    S7Frame {
        pdu_ref: 0,
        body: S7Body::Job(JobParam::Setup(SetupComm { max_amq_calling: 1, max_amq_called: 1, pdu_length })),
    }
    .to_bytes()
    .expect("setup frame encodes")
}

pub struct TcpTransport {
    addr: SocketAddr,
    protocol: Protocol,
    timeout: Duration,
    stream: Option<TcpStream>,
    buf: Vec<u8>,
}

impl TcpTransport {
    /// Connects and, for S7, performs the COTP and setup handshake.
    pub fn connect(addr: impl ToSocketAddrs, protocol: Protocol, timeout: Duration) -> io::Result<Self> {
        let addr = addr
            .to_socket_addrs()?
            .next()
            .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "no address"))?;
        let mut t = TcpTransport { addr, protocol, timeout, stream: None, buf: Vec::new() };
        t.reconnect()?;
        Ok(t)
    }

    fn reconnect(&mut self) -> io::Result<()> {
        self.stream = None;
        self.buf.clear();
        let stream = TcpStream::connect_timeout(&self.addr, self.timeout)?;
        stream.set_read_timeout(Some(self.timeout))?;
        stream.set_nodelay(true)?;
        self.stream = Some(stream);
        if self.protocol == Protocol::S7comm {
            self.round_trip(&COTP_CR)?;
            self.round_trip(&setup_request(480))?;
        }
        Ok(())
    }

    fn round_trip(&mut self, request: &[u8]) -> io::Result<Vec<u8>> {
        let stream = self.stream.as_mut().ok_or_else(|| io::Error::from(io::ErrorKind::NotConnected))?;
        stream.write_all(request)?;
        read_frame_blocking(stream, self.protocol, &mut self.buf)
    }
}

fn is_timeout(e: &io::Error) -> bool {
    matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut)
}

impl Transport for TcpTransport {
    /// A timeout reconnects (a late reply would desynchronise the stream) and
    /// reports `Timeout`; other failures get one reconnect-and-resend.
    fn exchange(&mut self, request: &[u8]) -> Result<Vec<u8>, TransportError> {
        let lost = |e: io::Error| TransportError::ConnectionLost(e.to_string());
        match self.round_trip(request) {
            Ok(r) => Ok(r),
            Err(e) if is_timeout(&e) => {
                self.reconnect().map_err(lost)?;
                Err(TransportError::Timeout)
            }
            Err(_) => {
                self.reconnect().map_err(lost)?;
                self.round_trip(request).map_err(|e| if is_timeout(&e) { TransportError::Timeout } else { lost(e) })
            }
        }
    }
}
