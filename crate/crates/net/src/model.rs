//! Inference wire protocol: each request and each response is one line
//! `"<decimal length> <payload>\n"`, the payload being ASCII hex (a request may
//! carry a context-framed source text). An empty response payload means the
//! model produced nothing usable.

use std::io::{self, BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpStream, ToSocketAddrs};
use std::sync::Arc;
use std::time::Duration;

use plcmimic_core::metrics::{Responder, ResponderError};
use thiserror::Error;
use tokio::io::{AsyncBufReadExt, AsyncWriteExt, BufReader as AsyncBufReader};
use tokio::net::{TcpListener, TcpStream as AsyncTcpStream};
use tokio::sync::watch;

/// Upper bound on a line, to keep a broken peer from exhausting memory.
pub const MAX_LINE: usize = 1 << 20;

#[derive(Debug, Error)]
pub enum WireError {
    #[error("malformed wire line: {0}")]
    Malformed(String),
    #[error("length prefix {declared} does not match payload length {actual}")]
    LengthMismatch { declared: usize, actual: usize },
    #[error("connection closed")]
    Closed,
    #[error("timed out")]
    Timeout,
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub fn encode_line(payload: &str) -> String {
    format!("{} {}\n", payload.len(), payload)
}

pub fn parse_line(line: &str) -> Result<String, WireError> {
    let line = line.strip_suffix('\n').unwrap_or(line);
    let line = line.strip_suffix('\r').unwrap_or(line);
    let (len, payload) = line
        .split_once(' ')
        .ok_or_else(|| WireError::Malformed(format!("no length prefix in {:?}", truncate(line))))?;
    let declared: usize = len.parse().map_err(|_| WireError::Malformed(format!("bad length {len:?}")))?;
    if declared != payload.len() {
        return Err(WireError::LengthMismatch { declared, actual: payload.len() });
    }
    Ok(payload.to_string())
}

fn truncate(s: &str) -> &str {
    &s[..s.len().min(64)]
}

/// Parses `model:host:port` into the service address.
pub fn parse_model_spec(spec: &str) -> Option<&str> {
    spec.strip_prefix("model:").filter(|a| !a.is_empty())
}

/// Blocking client used by the evaluator. Reconnects after any failure so a
/// late reply can never be read as the answer to the next request.
pub struct ModelClient {
    addr: SocketAddr,
    timeout: Duration,
    conn: Option<(BufReader<TcpStream>, TcpStream)>,
}

impl ModelClient {
    pub fn new(addr: impl ToSocketAddrs, timeout: Duration) -> io::Result<Self> {
        let addr = addr
            .to_socket_addrs()?
            .next()
            .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "no address"))?;
        Ok(ModelClient { addr, timeout, conn: None })
    }

    pub fn query(&mut self, payload: &str) -> Result<String, WireError> {
        let result = self.try_query(payload);
        if result.is_err() {
            self.conn = None;
        }
        result
    }

    fn try_query(&mut self, payload: &str) -> Result<String, WireError> {
        if self.conn.is_none() {
            let stream = TcpStream::connect_timeout(&self.addr, self.timeout)?;
            stream.set_read_timeout(Some(self.timeout))?;
            stream.set_nodelay(true)?;
            self.conn = Some((BufReader::new(stream.try_clone()?), stream));
        }
        let (reader, writer) = self.conn.as_mut().expect("connected above");
        writer.write_all(encode_line(payload).as_bytes())?;
        let mut line = String::new();
        match Read::by_ref(reader).take(MAX_LINE as u64).read_line(&mut line) {
            Ok(0) => Err(WireError::Closed),
            Ok(_) => parse_line(&line),
            Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => Err(WireError::Timeout),
            Err(e) => Err(e.into()),
        }
    }
}

impl Responder for ModelClient {
    fn respond(&mut self, source_text: &str) -> Result<String, ResponderError> {
        match self.query(source_text) {
            Ok(reply) => Ok(reply),
            Err(WireError::Timeout) => Err(ResponderError::Timeout),
            Err(e) => Err(ResponderError::Failed(e.to_string())),
        }
    }
}

/// Async connection held by one honeypot session. Not cancellation safe: drop
/// it after a timeout.
pub struct ModelConn {
    reader: AsyncBufReader<tokio::net::tcp::OwnedReadHalf>,
    writer: tokio::net::tcp::OwnedWriteHalf,
}

impl ModelConn {
    pub async fn connect(addr: &str) -> io::Result<Self> {
        let stream = AsyncTcpStream::connect(addr).await?;
        stream.set_nodelay(true)?;
        let (r, w) = stream.into_split();
        Ok(ModelConn { reader: AsyncBufReader::new(r), writer: w })
    }

    pub async fn query(&mut self, payload: &str) -> Result<String, WireError> {
        self.writer.write_all(encode_line(payload).as_bytes()).await?;
        let line = read_line_async(&mut self.reader).await?.ok_or(WireError::Closed)?;
        parse_line(&line)
    }
}

async fn read_line_async<R: tokio::io::AsyncBufRead + Unpin>(reader: &mut R) -> Result<Option<String>, WireError> {
    let mut buf = Vec::new();
    loop {
        let available = reader.fill_buf().await?;
        if available.is_empty() {
            return if buf.is_empty() { Ok(None) } else { Err(WireError::Closed) };
        }
        if let Some(pos) = available.iter().position(|b| *b == b'\n') {
            buf.extend_from_slice(&available[..=pos]);
            reader.consume(pos + 1);
            break;
        }
        let n = available.len();
        buf.extend_from_slice(available);
        reader.consume(n);
        if buf.len() > MAX_LINE {
            return Err(WireError::Malformed("line too long".into()));
        }
    }
    String::from_utf8(buf).map(Some).map_err(|_| WireError::Malformed("non-UTF-8 line".into()))
}

pub type ModelFn = Arc<dyn Fn(&str) -> String + Send + Sync>;

/// Stand-in inference service: answers each line with `handler(payload)`
/// after `delay`. Requests on one connection are answered in order.
pub async fn serve_model(
    listener: TcpListener,
    handler: ModelFn,
    delay: Duration,
    mut shutdown: watch::Receiver<bool>,
) -> io::Result<()> {
    loop {
        let (stream, _) = tokio::select! {
            accepted = listener.accept() => accepted?,
            _ = shutdown.changed() => return Ok(()),
        };
        let handler = handler.clone();
        let mut stop = shutdown.clone();
        tokio::spawn(async move {
            let (r, mut w) = stream.into_split();
            let mut reader = AsyncBufReader::new(r);
            loop {
                let line = tokio::select! {
                    line = read_line_async(&mut reader) => line,
                    _ = stop.changed() => return,
                };
                let reply = match line {
                    Ok(Some(line)) => match parse_line(&line) {
                        Ok(payload) => handler(&payload),
                        Err(_) => String::new(),
                    },
                    _ => return,
                };
                if !delay.is_zero() {
                    tokio::time::sleep(delay).await;
                }
                if w.write_all(encode_line(&reply).as_bytes()).await.is_err() {
                    return;
                }
            }
        });
    }
}

/// Mock handler that replies with a fixed frame.
pub fn echo_fixed(frame: &str) -> ModelFn {
    let frame = frame.to_string();
    Arc::new(move |_| frame.clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_round_trip() {
        let line = encode_line("00010000000601030000000a");
        assert_eq!(line, "24 00010000000601030000000a\n");
        assert_eq!(parse_line(&line).unwrap(), "00010000000601030000000a");
        assert_eq!(parse_line("0 \n").unwrap(), "");
    }

    #[test]
    fn rejects_bad_lines() {
        assert!(matches!(parse_line("3 abcd\n"), Err(WireError::LengthMismatch { declared: 3, actual: 4 })));
        assert!(matches!(parse_line("abcd\n"), Err(WireError::Malformed(_))));
        assert!(matches!(parse_line("x abcd\n"), Err(WireError::Malformed(_))));
    }

    #[test]
    fn model_spec() {
        assert_eq!(parse_model_spec("model:127.0.0.1:9000"), Some("127.0.0.1:9000"));
        assert_eq!(parse_model_spec("oracle"), None);
    }
}
