//! Append-only JSONL interaction log written by a single writer thread.

use std::fs::{File, OpenOptions};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::thread::JoinHandle;

use chrono::{SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LogDir {
    In,
    Out,
    /// The request got no answer: connection reset, undecodable input, or a drop fallback.
    Drop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResponderTag {
    Oracle,
    Model,
    Fallback,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractionRecord {
    pub ts: String,
    pub peer: String,
    pub conn: u64,
    pub seq: u64,
    pub dir: LogDir,
    pub hex: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency_us: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub responder: Option<ResponderTag>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl InteractionRecord {
    pub fn new(peer: &str, conn: u64, seq: u64, dir: LogDir, hex: String) -> Self {
        InteractionRecord {
            ts: now(),
            peer: peer.to_string(),
            conn,
            seq,
            dir,
            hex,
            latency_us: None,
            responder: None,
            note: None,
        }
    }
}

/// UTC RFC 3339 timestamp with microseconds.
pub fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Micros, true)
}

/// Cloneable handle for submitting records; never blocks the caller.
#[derive(Clone)]
pub struct LogSender(Option<mpsc::Sender<InteractionRecord>>);

impl LogSender {
    /// A sender that discards everything.
    pub fn disabled() -> Self {
        LogSender(None)
    }

    pub fn send(&self, record: InteractionRecord) {
        if let Some(tx) = &self.0 {
            if let Err(e) = tx.send(record) {
                eprintln!("log sink closed, record lost: {:?}", e.0);
            }
        }
    }
}

pub struct LogSink {
    tx: Option<mpsc::Sender<InteractionRecord>>,
    writer: Option<JoinHandle<()>>,
    path: PathBuf,
}

impl LogSink {
    /// Opens `path` for appending, so restarts continue the same file.
    pub fn open(path: impl AsRef<Path>) -> io::Result<Self> {
        let path = path.as_ref().to_path_buf();
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        let (tx, rx) = mpsc::channel();
        let writer = std::thread::Builder::new().name("log-sink".into()).spawn(move || write_loop(file, rx))?;
        Ok(LogSink { tx: Some(tx), writer: Some(writer), path })
    }

    pub fn sender(&self) -> LogSender {
        LogSender(self.tx.clone())
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Waits until every sender is dropped and all records are flushed.
    pub fn close(mut self) {
        self.tx.take();
        if let Some(w) = self.writer.take() {
            let _ = w.join();
        }
    }
}

impl Drop for LogSink {
    fn drop(&mut self) {
        self.tx.take();
        if let Some(w) = self.writer.take() {
            let _ = w.join();
        }
    }
}

fn write_loop(file: File, rx: mpsc::Receiver<InteractionRecord>) {
    let mut out = BufWriter::new(file);
    let mut healthy = true;
    while let Ok(first) = rx.recv() {
        let mut batch = vec![first];
        batch.extend(rx.try_iter());
        for record in batch {
            let line = serde_json::to_string(&record).expect("records serialize");
            if healthy && writeln!(out, "{line}").is_err() {
                eprintln!("log sink write failed, falling back to stderr");
                healthy = false;
            }
            if !healthy {
                eprintln!("{line}");
            }
        }
        if healthy && out.flush().is_err() {
            eprintln!("log sink flush failed, falling back to stderr");
            healthy = false;
        }
    }
    let _ = out.flush();
}

pub fn read_records(text: &str) -> Result<Vec<InteractionRecord>, serde_json::Error> {
    text.lines().filter(|l| !l.trim().is_empty()).map(serde_json::from_str).collect()
}
