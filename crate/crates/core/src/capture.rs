//! Capture ingestion (PCAP and JSONL interaction logs), request/response
//! pairing, CSV corpora, context windows and dataset splits.

use std::collections::{HashMap, VecDeque};
use std::io::{Read, Write};
use std::net::{IpAddr, SocketAddr};
use std::time::Duration;

use etherparse::{NetSlice, PacketBuilder, SlicedPacket, TransportSlice};
use pcap_file::pcap::{PcapPacket, PcapReader, PcapWriter};
use pcap_file::DataLink;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::Protocol;
use crate::dataset::SamplePair;
use crate::hexstr;

#[derive(Debug, Error)]
pub enum CaptureError {
    #[error("bad pcap: {0}")]
    BadPcap(String),
    #[error("no traffic on port {0}")]
    NoMatchingTraffic(u16),
    #[error("log line {line}: {detail}")]
    BadLog { line: usize, detail: String },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("csv header must be `source_text,target_text`, found {0:?}")]
    BadHeader(Vec<String>),
    #[error("row {row}: {detail}")]
    BadRow { row: usize, detail: String },
    #[error("context length {needed} needs {} pairs, have {available}", needed + 1)]
    InsufficientHistory { needed: usize, available: usize },
    #[error("malformed context: {0}")]
    BadContext(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub const CSV_HEADER: [&str; 2] = ["source_text", "target_text"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dir {
    Request,
    Response,
}

/// One protocol frame extracted from a capture.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CaptureEntry {
    /// Connection label; all frames of one TCP connection share it.
    pub conn: String,
    pub dir: Dir,
    pub hex: String,
    pub ts_us: u64,
}

#[derive(Default)]
struct Stream {
    buf: Vec<u8>,
    next_seq: Option<u32>,
}

impl Stream {
    fn push(&mut self, seq: u32, payload: &[u8]) -> bool {
        let mut payload = payload;
        if let Some(next) = self.next_seq {
            let behind = next.wrapping_sub(seq) as i32;
            if behind > 0 {
                // retransmission, possibly partial
                if behind as usize >= payload.len() {
                    return false;
                }
                payload = &payload[behind as usize..];
            }
        }
        let start = self.next_seq.map_or(seq, |next| if (next.wrapping_sub(seq) as i32) > 0 { next } else { seq });
        self.next_seq = Some(start.wrapping_add(payload.len() as u32));
        self.buf.extend_from_slice(payload);
        true
    }

    fn frames(&mut self, protocol: Protocol) -> Vec<Vec<u8>> {
        let mut out = vec![];
        while let Some(len) = protocol.frame_len(&self.buf) {
            if len < protocol.min_frame_len() {
                self.buf.clear();
                break;
            }
            if self.buf.len() < len {
                break;
            }
            out.push(self.buf.drain(..len).collect());
        }
        out
    }
}

/// Extracts protocol frames for `port` from a classic PCAP, reassembling TCP
/// streams by the protocol's length field. Output keeps capture order.
pub fn parse_pcap(reader: impl Read, protocol: Protocol, port: u16) -> Result<Vec<CaptureEntry>, CaptureError> {
    let mut pcap = PcapReader::new(reader).map_err(|e| CaptureError::BadPcap(e.to_string()))?;
    let datalink = pcap.header().datalink;
    let mut streams: HashMap<(String, Dir), Stream> = HashMap::new();
    let mut out = vec![];
    while let Some(packet) = pcap.next_packet() {
        let packet = packet.map_err(|e| CaptureError::BadPcap(e.to_string()))?;
        let sliced = match datalink {
            DataLink::ETHERNET => SlicedPacket::from_ethernet(&packet.data),
            DataLink::RAW | DataLink::IPV4 | DataLink::IPV6 => SlicedPacket::from_ip(&packet.data),
            other => return Err(CaptureError::BadPcap(format!("unsupported link type {other:?}"))),
        };
        let Ok(sliced) = sliced else { continue };
        let (Some(net), Some(TransportSlice::Tcp(tcp))) = (&sliced.net, &sliced.transport) else {
            continue;
        };
        let (src, dst): (IpAddr, IpAddr) = match net {
            NetSlice::Ipv4(ip) => (ip.header().source_addr().into(), ip.header().destination_addr().into()),
            NetSlice::Ipv6(ip) => (ip.header().source_addr().into(), ip.header().destination_addr().into()),
        };
        let src = SocketAddr::new(src, tcp.source_port());
        let dst = SocketAddr::new(dst, tcp.destination_port());
        let (dir, client, server) = if dst.port() == port {
            (Dir::Request, src, dst)
        } else if src.port() == port {
            (Dir::Response, dst, src)
        } else {
            continue;
        };
        if tcp.payload().is_empty() {
            continue;
        }
        let conn = format!("{client}-{server}");
        let stream = streams.entry((conn.clone(), dir)).or_default();
        if !stream.push(tcp.sequence_number(), tcp.payload()) {
            continue;
        }
        let ts_us = packet.timestamp.as_micros() as u64;
        for frame in stream.frames(protocol) {
            out.push(CaptureEntry { conn: conn.clone(), dir, hex: hexstr::encode(&frame), ts_us });
        }
    }
    if out.is_empty() {
        return Err(CaptureError::NoMatchingTraffic(port));
    }
    Ok(out)
}

#[derive(Deserialize)]
struct LogLine {
    peer: String,
    dir: String,
    hex: String,
    #[serde(default)]
    conn: Option<u64>,
}

/// Reads JSONL interaction logs (`dir` of `in`/`out`; drops are skipped).
/// `ts_us` holds the line index, since logs are append-ordered.
pub fn parse_capture_log(text: &str) -> Result<Vec<CaptureEntry>, CaptureError> {
    let mut out = vec![];
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |detail: String| CaptureError::BadLog { line: i + 1, detail };
        let rec: LogLine = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
        let dir = match rec.dir.as_str() {
            "in" => Dir::Request,
            "out" => Dir::Response,
            "drop" => continue,
            other => return Err(bad(format!("unknown dir {other:?}"))),
        };
        let hex = hexstr::canonical(&rec.hex).map_err(|e| bad(e.to_string()))?;
        let conn = match rec.conn {
            Some(c) => format!("{}#{c}", rec.peer),
            None => rec.peer.clone(),
        };
        out.push(CaptureEntry { conn, dir, hex, ts_us: i as u64 });
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Pairing {
    pub pairs: Vec<SamplePair>,
    /// Requests without a response and responses without a request.
    pub orphans: Vec<CaptureEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum PairKey {
    Id(u32),
    /// Frames without a transaction id (COTP connection setup) pair in order.
    Untagged,
}

/// Pairs each response with the oldest outstanding request of the same
/// connection and transaction id; pairs come out in request order.
pub fn pair_transactions(protocol: Protocol, entries: &[CaptureEntry]) -> Pairing {
    let mut pending: HashMap<(&str, PairKey), VecDeque<usize>> = HashMap::new();
    let mut matched: Vec<Option<usize>> = vec![None; entries.len()];
    let mut orphans = vec![];
    for (i, entry) in entries.iter().enumerate() {
        let key = hexstr::decode(&entry.hex)
            .ok()
            .and_then(|b| protocol.transaction_key(&b))
            .map_or(PairKey::Untagged, PairKey::Id);
        let slot = (entry.conn.as_str(), key);
        match entry.dir {
            Dir::Request => pending.entry(slot).or_default().push_back(i),
            Dir::Response => match pending.get_mut(&slot).and_then(|q| q.pop_front()) {
                Some(req) => matched[req] = Some(i),
                None => orphans.push(i),
            },
        }
    }
    let mut pairs = vec![];
    for (i, entry) in entries.iter().enumerate() {
        if entry.dir != Dir::Request {
            continue;
        }
        match matched[i] {
            Some(r) => pairs.push(SamplePair { source_text: entry.hex.clone(), target_text: entries[r].hex.clone() }),
            None => orphans.push(i),
        }
    }
    orphans.sort_unstable();
    Pairing { pairs, orphans: orphans.into_iter().map(|i| entries[i].clone()).collect() }
}

pub fn write_csv(pairs: &[SamplePair], out: impl Write) -> Result<(), CaptureError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for p in pairs {
        w.write_record([canonical_text(&p.source_text), canonical_text(&p.target_text)])?;
    }
    w.flush()?;
    Ok(())
}

/// Lowercase hex without whitespace; context separators pass through.
fn canonical_text(text: &str) -> String {
    text.chars().filter(|c| !c.is_ascii_whitespace()).map(|c| c.to_ascii_lowercase()).collect()
}

pub fn to_csv(pairs: &[SamplePair]) -> String {
    let mut buf = vec![];
    write_csv(pairs, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("csv of hex is ascii")
}

pub fn read_csv(input: impl Read) -> Result<Vec<SamplePair>, CaptureError> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != CSV_HEADER {
        return Err(CaptureError::BadHeader(header));
    }
    let mut out = vec![];
    for (i, rec) in r.deserialize::<SamplePair>().enumerate() {
        let pair = rec?;
        if pair.source_text.is_empty() || pair.target_text.is_empty() {
            return Err(CaptureError::BadRow { row: i + 1, detail: "empty field".into() });
        }
        out.push(pair);
    }
    Ok(out)
}

/// `q1:r1|q2:r2|...|q:`
pub fn context_source<'a>(history: impl IntoIterator<Item = (&'a str, &'a str)>, query: &str) -> String {
    let mut s = String::new();
    for (q, r) in history {
        s.push_str(q);
        s.push(':');
        s.push_str(r);
        s.push('|');
    }
    s.push_str(query);
    s.push(':');
    s
}

/// Windows of `context_len` previous exchanges ahead of each query.
pub fn build_context(pairs: &[SamplePair], context_len: usize) -> Result<Vec<SamplePair>, CaptureError> {
    if pairs.len() < context_len + 1 {
        return Err(CaptureError::InsufficientHistory { needed: context_len, available: pairs.len() });
    }
    Ok((context_len..pairs.len())
        .map(|i| {
            let history = pairs[i - context_len..i].iter().map(|p| (p.source_text.as_str(), p.target_text.as_str()));
            SamplePair {
                source_text: context_source(history, &pairs[i].source_text),
                target_text: pairs[i].target_text.clone(),
            }
        })
        .collect())
}

/// Inverse of [`context_source`]: the history pairs and the trailing query.
pub fn parse_context(source: &str) -> Result<(Vec<(String, String)>, String), CaptureError> {
    let body = source
        .strip_suffix(':')
        .ok_or_else(|| CaptureError::BadContext("missing terminal colon".into()))?;
    let mut parts: Vec<&str> = body.split('|').collect();
    let query = parts.pop().expect("split yields at least one part");
    if query.contains(':') {
        return Err(CaptureError::BadContext("trailing query contains ':'".into()));
    }
    let history = parts
        .into_iter()
        .map(|s| match s.split_once(':') {
            Some((q, r)) if !r.contains(':') => Ok((q.to_string(), r.to_string())),
            _ => Err(CaptureError::BadContext(format!("session {s:?} is not query:response"))),
        })
        .collect::<Result<_, _>>()?;
    Ok((history, query.to_string()))
}

/// Recovers the original session from context windows built with length `context_len`.
pub fn unframe(windows: &[SamplePair]) -> Result<Vec<SamplePair>, CaptureError> {
    let mut out: Vec<SamplePair> = vec![];
    for (i, w) in windows.iter().enumerate() {
        let (history, query) = parse_context(&w.source_text)?;
        if i == 0 {
            out.extend(history.into_iter().map(|(q, r)| SamplePair { source_text: q, target_text: r }));
        }
        out.push(SamplePair { source_text: query, target_text: w.target_text.clone() });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Split<T> {
    pub train: Vec<T>,
    pub validation: Vec<T>,
    pub test: Vec<T>,
}

/// Seeded shuffle, then `floor(n * val)` validation and `floor(n * test)` test
/// records; the remainder trains.
pub fn split_dataset<T: Clone>(items: &[T], val_ratio: f64, test_ratio: f64, seed: u64) -> Split<T> {
    let mut shuffled = items.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = shuffled.len();
    let n_val = (n as f64 * val_ratio).floor() as usize;
    let n_test = ((n as f64 * test_ratio).floor() as usize).min(n - n_val);
    let test = shuffled.split_off(n - n_test);
    let validation = shuffled.split_off(n - n_test - n_val);
    Split { train: shuffled, validation, test }
}

/// Writes TCP exchanges as an Ethernet/IPv4 PCAP, each payload split into
/// segments of at most `mss` bytes.
pub struct PcapBuilder<W: Write> {
    writer: PcapWriter<W>,
    mss: usize,
    seqs: HashMap<(SocketAddr, SocketAddr), u32>,
    ts: Duration,
}

impl<W: Write> PcapBuilder<W> {
    pub fn new(out: W, mss: usize) -> Result<Self, CaptureError> {
        let writer = PcapWriter::new(out).map_err(|e| CaptureError::BadPcap(e.to_string()))?;
        Ok(PcapBuilder { writer, mss: mss.max(1), seqs: HashMap::new(), ts: Duration::from_secs(1_700_000_000) })
    }

    pub fn segment(&mut self, src: SocketAddr, dst: SocketAddr, payload: &[u8]) -> Result<(), CaptureError> {
        for chunk in payload.chunks(self.mss) {
            let seq = self.seqs.entry((src, dst)).or_insert(1000);
            let (IpAddr::V4(s), IpAddr::V4(d)) = (src.ip(), dst.ip()) else {
                return Err(CaptureError::BadPcap("only IPv4 fixtures are supported".into()));
            };
            let builder = PacketBuilder::ethernet2([2, 0, 0, 0, 0, 1], [2, 0, 0, 0, 0, 2])
                .ipv4(s.octets(), d.octets(), 64)
                .tcp(src.port(), dst.port(), *seq, 64240)
                .psh()
                .ack(1);
            let mut frame = Vec::with_capacity(builder.size(chunk.len()));
            builder.write(&mut frame, chunk).map_err(|e| CaptureError::BadPcap(e.to_string()))?;
            *seq = seq.wrapping_add(chunk.len() as u32);
            self.ts += Duration::from_micros(250);
            let packet = PcapPacket::new(self.ts, frame.len() as u32, &frame);
            self.writer.write_packet(&packet).map_err(|e| CaptureError::BadPcap(e.to_string()))?;
        }
        Ok(())
    }

    /// Request from `client` to `server` followed by the response.
    pub fn exchange(&mut self, client: SocketAddr, server: SocketAddr, request: &[u8], response: &[u8]) -> Result<(), CaptureError> {
        self.segment(client, server, request)?;
        self.segment(server, client, response)
    }

    pub fn finish(self) -> W {
        self.writer.into_writer()
    }
}
