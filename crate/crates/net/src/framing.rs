//! Length-field framing over byte streams, async and blocking.

use std::io::{self, Read};

use plcmimic_core::config::Protocol;
use tokio::io::{AsyncRead, AsyncReadExt};

fn take_frame(protocol: Protocol, buf: &mut Vec<u8>) -> io::Result<Option<Vec<u8>>> {
    match protocol.frame_len(buf) {
        Some(len) if len < protocol.min_frame_len() => {
            Err(io::Error::new(io::ErrorKind::InvalidData, format!("frame length {len} too short")))
        }
        Some(len) if buf.len() >= len => Ok(Some(buf.drain(..len).collect())),
        _ => Ok(None),
    }
}

/// Next complete frame, `None` on a clean end of stream.
pub async fn read_frame<R: AsyncRead + Unpin>(
    reader: &mut R,
    protocol: Protocol,
    buf: &mut Vec<u8>,
) -> io::Result<Option<Vec<u8>>> {
    let mut chunk = [0u8; 4096];
    loop {
        if let Some(frame) = take_frame(protocol, buf)? {
            return Ok(Some(frame));
        }
        let n = reader.read(&mut chunk).await?;
        if n == 0 {
            return if buf.is_empty() {
                Ok(None)
            } else {
                Err(io::Error::new(io::ErrorKind::UnexpectedEof, "stream ended inside a frame"))
            };
        }
        buf.extend_from_slice(&chunk[..n]);
    }
}

pub fn read_frame_blocking<R: Read>(reader: &mut R, protocol: Protocol, buf: &mut Vec<u8>) -> io::Result<Vec<u8>> {
    let mut chunk = [0u8; 4096];
    loop {
        if let Some(frame) = take_frame(protocol, buf)? {
            return Ok(frame);
        }
        let n = reader.read(&mut chunk)?;
        if n == 0 {
            return Err(io::Error::new(io::ErrorKind::UnexpectedEof, "connection closed"));
        }
        buf.extend_from_slice(&chunk[..n]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[tokio::test]
    async fn splits_concatenated_frames() {
        let data = plcmimic_core::hexstr::decode("000100000006010300000001000200000006010300010001").unwrap();
        let mut reader = &data[..];
        let mut buf = vec![];
        let a = read_frame(&mut reader, Protocol::Modbus, &mut buf).await.unwrap().unwrap();
        let b = read_frame(&mut reader, Protocol::Modbus, &mut buf).await.unwrap().unwrap();
        assert_eq!((a[1], b[1]), (1, 2));
        assert!(read_frame(&mut reader, Protocol::Modbus, &mut buf).await.unwrap().is_none());
    }

    #[tokio::test]
    async fn rejects_short_length_field() {
        let data = [0u8, 1, 0, 0, 0, 0, 1, 3];
        let mut reader = &data[..];
        assert!(read_frame(&mut reader, Protocol::Modbus, &mut vec![]).await.is_err());
    }
}
