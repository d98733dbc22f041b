//! Aggregation over interaction logs.

use std::collections::{BTreeMap, BTreeSet};
use std::net::SocketAddr;

use serde::Serialize;

use crate::logsink::{InteractionRecord, LogDir};

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct PeerStats {
    pub connections: usize,
    pub requests: usize,
    pub responses: usize,
    pub drops: usize,
    pub first_seen: String,
    pub last_seen: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LatencyStats {
    pub count: usize,
    pub p50_us: f64,
    pub p90_us: f64,
    pub p99_us: f64,
    pub max_us: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct LogSummary {
    pub unique_peers: usize,
    /// Keyed by peer IP.
    pub peers: BTreeMap<String, PeerStats>,
    pub by_responder: BTreeMap<String, usize>,
    pub latency: Option<LatencyStats>,
}

fn peer_ip(peer: &str) -> String {
    match peer.parse::<SocketAddr>() {
        Ok(addr) => addr.ip().to_string(),
        Err(_) => peer.rsplit_once(':').map_or(peer, |(ip, _)| ip).to_string(),
    }
}

/// Percentile with linear interpolation between closest ranks.
pub fn percentile(sorted: &[u64], q: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0] as f64,
        n => {
            let pos = q.clamp(0.0, 1.0) * (n - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            sorted[lo] as f64 + (sorted[hi] as f64 - sorted[lo] as f64) * (pos - lo as f64)
        }
    }
}

pub fn summarize_logs(records: &[InteractionRecord]) -> LogSummary {
    let mut peers: BTreeMap<String, PeerStats> = BTreeMap::new();
    let mut conns: BTreeSet<(&str, u64)> = BTreeSet::new();
    let mut by_responder = BTreeMap::new();
    let mut latencies = vec![];
    for r in records {
        let stats = peers.entry(peer_ip(&r.peer)).or_default();
        if conns.insert((r.peer.as_str(), r.conn)) {
            stats.connections += 1;
        }
        // RFC 3339 UTC with fixed precision sorts lexicographically.
        if stats.first_seen.is_empty() || r.ts < stats.first_seen {
            stats.first_seen = r.ts.clone();
        }
        if r.ts > stats.last_seen {
            stats.last_seen = r.ts.clone();
        }
        match r.dir {
            LogDir::In => stats.requests += 1,
            LogDir::Out => stats.responses += 1,
            LogDir::Drop => stats.drops += 1,
        }
        if r.dir != LogDir::In {
            if let Some(tag) = r.responder {
                let key = serde_json::to_value(tag).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
                *by_responder.entry(key).or_insert(0) += 1;
            }
        }
        if r.dir == LogDir::Out {
            if let Some(l) = r.latency_us {
                latencies.push(l);
            }
        }
    }
    latencies.sort_unstable();
    let latency = (!latencies.is_empty()).then(|| LatencyStats {
        count: latencies.len(),
        p50_us: percentile(&latencies, 0.5),
        p90_us: percentile(&latencies, 0.9),
        p99_us: percentile(&latencies, 0.99),
        max_us: *latencies.last().expect("nonempty"),
    });
    LogSummary { unique_peers: peers.len(), peers, by_responder, latency }
}
