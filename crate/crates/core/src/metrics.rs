//! Response metrics: byte-exact accuracy (BCA), configuration-aware validity
//! (RVA) and validity with value tolerance (RVA-ε), plus dataset evaluation.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::capture::parse_context;
use crate::config::ProtocolConfig;
use crate::dataset::SamplePair;
use crate::hexstr;
use crate::plant::{expected_exception, Plant, PlantConfig, PlantError};
use crate::protocol::{Outcome, Request, Violation};

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("request does not decode under the configuration: {0}")]
    BadRequest(String),
}

#[derive(Debug, Error)]
pub enum ResponderError {
    #[error("responder timed out")]
    Timeout,
    #[error("responder failed: {0}")]
    Failed(String),
}

/// Turns a request (possibly context-framed) into response hex.
pub trait Responder {
    fn respond(&mut self, source_text: &str) -> Result<String, ResponderError>;
}

impl<R: Responder + ?Sized> Responder for &mut R {
    fn respond(&mut self, source_text: &str) -> Result<String, ResponderError> {
        (**self).respond(source_text)
    }
}

/// Answers from an embedded plant.
pub struct OracleResponder {
    plant: Plant,
}

impl OracleResponder {
    pub fn new(cfg: PlantConfig) -> Result<Self, PlantError> {
        Ok(OracleResponder { plant: Plant::new(cfg)? })
    }

    pub fn plant(&self) -> &Plant {
        &self.plant
    }
}

impl Responder for OracleResponder {
    fn respond(&mut self, source_text: &str) -> Result<String, ResponderError> {
        let query = trailing_query(source_text).map_err(|e| ResponderError::Failed(e.to_string()))?;
        let bytes = hexstr::decode(&query).map_err(|e| ResponderError::Failed(e.to_string()))?;
        let reply = self.plant.handle_frame(&bytes).map_err(|e| ResponderError::Failed(e.to_string()))?;
        Ok(hexstr::encode(&reply))
    }
}

/// The request hex of a plain or context-framed source text.
pub fn trailing_query(source_text: &str) -> Result<String, MetricError> {
    if source_text.contains(':') {
        parse_context(source_text)
            .map(|(_, q)| q)
            .map_err(|e| MetricError::BadRequest(e.to_string()))
    } else {
        Ok(source_text.to_string())
    }
}

/// True iff both hex strings denote the same bytes.
pub fn bca(pred: &str, reference: &str) -> bool {
    match (hexstr::canonical(pred), hexstr::canonical(reference)) {
        (Ok(p), Ok(r)) => p == r,
        _ => false,
    }
}

pub fn decode_request(cfg: &ProtocolConfig, request: &str) -> Result<Request, MetricError> {
    let bytes = hexstr::decode(request).map_err(|e| MetricError::BadRequest(e.to_string()))?;
    cfg.protocol.decode_request(&bytes).map_err(|e| MetricError::BadRequest(e.to_string()))
}

/// Validity of `pred` as the answer to `req` under `cfg`: well-formed, ids
/// echoed, shaped for the request, an exception exactly when (and of the kind)
/// the configuration mandates, and values within the configured range.
pub fn check_rva(cfg: &ProtocolConfig, req: &Request, pred: &str) -> Result<Outcome, Violation> {
    let bytes = hexstr::decode(pred).map_err(|_| Violation::Undecodable)?;
    let outcome = cfg.protocol.interpret_response(req, &bytes)?;
    match (&outcome, expected_exception(cfg, req)) {
        (Outcome::Exception(got), Some(want)) if *got != want => Err(Violation::WrongExceptionCode),
        (Outcome::Exception(_), None) => Err(Violation::UnexpectedException),
        (Outcome::Values(_) | Outcome::Written, Some(_)) => Err(Violation::MissingException),
        (Outcome::Values(values), None) => {
            let (low, high) = cfg.value_range(req.area());
            if values.iter().any(|v| *v < low || *v > high) {
                Err(Violation::ValueOutOfRange)
            } else {
                Ok(outcome)
            }
        }
        _ => Ok(outcome),
    }
}

pub fn rva(cfg: &ProtocolConfig, request: &str, pred: &str) -> Result<bool, MetricError> {
    let req = decode_request(cfg, request)?;
    Ok(check_rva(cfg, &req, pred).is_ok())
}

/// Whether two outcomes agree with values at most `eps` counts apart. Coil
/// states are compared the same way, so any `eps >= 1` accepts them.
pub fn within_eps(pred: &Outcome, reference: &Outcome, eps: u64) -> bool {
    match (pred, reference) {
        (Outcome::Values(p), Outcome::Values(r)) => {
            p.len() == r.len() && p.iter().zip(r).all(|(a, b)| (*a as i64 - *b as i64).unsigned_abs() <= eps)
        }
        (a, b) => a == b,
    }
}

pub fn rva_eps(cfg: &ProtocolConfig, request: &str, pred: &str, reference: &str, eps: u64) -> Result<bool, MetricError> {
    let req = decode_request(cfg, request)?;
    let Ok(p) = check_rva(cfg, &req, pred) else { return Ok(false) };
    let Ok(r) = hexstr::decode(reference).map(|b| cfg.protocol.interpret_response(&req, &b)) else {
        return Ok(false);
    };
    Ok(r.is_ok_and(|r| within_eps(&p, &r, eps)))
}

/// Scores for one record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RecordScore {
    pub bca: bool,
    pub rva: Result<(), Violation>,
    pub rva_eps: Vec<bool>,
}

/// All three metrics for one prediction, with RVA-ε for every ε in `eps`.
pub fn score_record(cfg: &ProtocolConfig, req: &Request, pred: &str, reference: &str, eps: &[u64]) -> RecordScore {
    let validity = check_rva(cfg, req, pred);
    let ref_outcome = hexstr::decode(reference).ok().and_then(|b| cfg.protocol.interpret_response(req, &b).ok());
    let rva_eps = eps
        .iter()
        .map(|e| match (&validity, &ref_outcome) {
            (Ok(p), Some(r)) => within_eps(p, r, *e),
            _ => false,
        })
        .collect();
    RecordScore { bca: bca(pred, reference), rva: validity.map(|_| ()), rva_eps }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    /// Records scored.
    pub n: usize,
    /// Records whose request does not decode under the configuration.
    pub skipped: usize,
    pub bca: f64,
    pub rva: f64,
    /// `(ε, fraction)` sorted by ε.
    pub rva_eps: Vec<(u64, f64)>,
    /// Failed records by validator rule.
    pub failures: BTreeMap<String, usize>,
}

impl MetricReport {
    pub fn eps_curve_csv(&self) -> String {
        let mut s = String::from("epsilon,rva_eps\n");
        for (e, v) in &self.rva_eps {
            s.push_str(&format!("{e},{v}\n"));
        }
        s
    }

    pub fn rva_at(&self, eps: u64) -> Option<f64> {
        self.rva_eps.iter().find(|(e, _)| *e == eps).map(|(_, v)| *v)
    }
}

fn label(v: &Violation) -> String {
    match serde_json::to_value(v) {
        Ok(serde_json::Value::String(s)) => s,
        _ => format!("{v:?}"),
    }
}

/// Queries `responder` once per record, in order, and aggregates the metrics.
pub fn evaluate(
    responder: &mut impl Responder,
    dataset: &[SamplePair],
    cfg: &ProtocolConfig,
    eps: &[u64],
) -> MetricReport {
    let mut eps: Vec<u64> = eps.to_vec();
    eps.sort_unstable();
    eps.dedup();
    let mut failures = BTreeMap::new();
    let (mut n, mut skipped, mut bca_hits, mut rva_hits) = (0usize, 0usize, 0usize, 0usize);
    let mut eps_hits = vec![0usize; eps.len()];
    for record in dataset {
        let req = match trailing_query(&record.source_text).and_then(|q| decode_request(cfg, &q)) {
            Ok(req) => req,
            Err(_) => {
                skipped += 1;
                *failures.entry("bad_request".to_string()).or_insert(0) += 1;
                continue;
            }
        };
        n += 1;
        let pred = match responder.respond(&record.source_text) {
            Ok(p) => p,
            Err(e) => {
                let key = match e {
                    ResponderError::Timeout => "responder_timeout",
                    ResponderError::Failed(_) => "responder_error",
                };
                *failures.entry(key.to_string()).or_insert(0) += 1;
                continue;
            }
        };
        let s = score_record(cfg, &req, &pred, &record.target_text, &eps);
        bca_hits += s.bca as usize;
        match &s.rva {
            Ok(()) => rva_hits += 1,
            Err(v) => *failures.entry(label(v)).or_insert(0) += 1,
        }
        for (hit, ok) in eps_hits.iter_mut().zip(&s.rva_eps) {
            *hit += *ok as usize;
        }
    }
    let frac = |k: usize| if n == 0 { 0.0 } else { k as f64 / n as f64 };
    MetricReport {
        n,
        skipped,
        bca: frac(bca_hits),
        rva: frac(rva_hits),
        rva_eps: eps.iter().zip(&eps_hits).map(|(e, h)| (*e, frac(*h))).collect(),
        failures,
    }
}
