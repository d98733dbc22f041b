//! Corpus generation: boundary probing for protocol emulation, derivative-weighted
//! x sampling and probes for math functions and processes, and dataset sizing.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{Area, CombWidth, Protocol, ProtocolConfig};
use crate::hexstr;
use crate::plant::{MathBlock, Plant};
use crate::protocol::{ProtocolError, Request, RequestId};

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("request timed out")]
    Timeout,
    #[error("connection lost: {0}")]
    ConnectionLost(String),
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("empty range: low {low}, high {high}, elem {elem}")]
    EmptyRange { low: u32, high: u32, elem: u32 },
    #[error("tuple width must be at least 1")]
    ZeroWidth,
    #[error("density integrates to zero")]
    DegenerateDensity,
    #[error("invalid sampler configuration: {0}")]
    InvalidSampler(String),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("trainer unavailable: {0}")]
    TrainerUnavailable(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SamplePair {
    pub source_text: String,
    pub target_text: String,
}

impl SamplePair {
    pub fn new(request: &[u8], response: &[u8]) -> Self {
        SamplePair { source_text: hexstr::encode(request), target_text: hexstr::encode(response) }
    }
}

/// One request frame in, one response frame out.
pub trait Transport {
    fn exchange(&mut self, request: &[u8]) -> Result<Vec<u8>, TransportError>;
}

impl Transport for Plant {
    fn exchange(&mut self, request: &[u8]) -> Result<Vec<u8>, TransportError> {
        self.handle_frame(request).map_err(|e| TransportError::ConnectionLost(e.to_string()))
    }
}

impl<T: Transport + ?Sized> Transport for &mut T {
    fn exchange(&mut self, request: &[u8]) -> Result<Vec<u8>, TransportError> {
        (**self).exchange(request)
    }
}

pub const DEFAULT_RETRIES: u32 = 3;

/// Issues read/write requests with fresh transaction ids and records every
/// exchange as a pair in session order.
pub struct Prober<T> {
    transport: T,
    protocol: Protocol,
    unit_id: u8,
    next_id: u16,
    retries: u32,
    pairs: Vec<SamplePair>,
    skipped: usize,
}

impl<T: Transport> Prober<T> {
    pub fn new(transport: T, cfg: &ProtocolConfig) -> Self {
        Prober {
            transport,
            protocol: cfg.protocol,
            unit_id: cfg.unit_id,
            next_id: 1,
            retries: DEFAULT_RETRIES,
            pairs: Vec::new(),
            skipped: 0,
        }
    }

    pub fn with_retries(mut self, retries: u32) -> Self {
        self.retries = retries;
        self
    }

    fn fresh_id(&mut self) -> RequestId {
        let id = self.next_id;
        self.next_id = self.next_id.wrapping_add(1).max(1);
        match self.protocol {
            Protocol::Modbus => RequestId::Modbus { transaction_id: id, unit_id: self.unit_id },
            Protocol::S7comm => RequestId::S7 { pdu_ref: id },
        }
    }

    /// Sends `req`, retrying timeouts; a request that exhausts its retries is skipped.
    pub fn send(&mut self, req: &Request) -> Result<Option<Vec<u8>>, DatasetError> {
        let bytes = self.protocol.encode_request(req)?;
        for _ in 0..=self.retries {
            match self.transport.exchange(&bytes) {
                Ok(response) => {
                    self.pairs.push(SamplePair::new(&bytes, &response));
                    return Ok(Some(response));
                }
                Err(TransportError::Timeout) => continue,
                Err(e) => return Err(e.into()),
            }
        }
        self.skipped += 1;
        Ok(None)
    }

    pub fn read(&mut self, area: Area, address: u16, quantity: u16) -> Result<Option<Vec<u8>>, DatasetError> {
        let req = Request::read(self.fresh_id(), area, address, quantity);
        self.send(&req)
    }

    pub fn write(&mut self, area: Area, address: u16, values: Vec<u16>) -> Result<Option<Vec<u8>>, DatasetError> {
        let req = Request::write(self.fresh_id(), area, address, values);
        self.send(&req)
    }

    pub fn protocol(&self) -> Protocol {
        self.protocol
    }

    pub fn pairs(&self) -> &[SamplePair] {
        &self.pairs
    }

    pub fn take_pairs(&mut self) -> Vec<SamplePair> {
        std::mem::take(&mut self.pairs)
    }

    /// Requests dropped after exhausting their retries.
    pub fn skipped(&self) -> usize {
        self.skipped
    }

    pub fn into_transport(self) -> T {
        self.transport
    }
}

/// `[low, r, high - elem]` with `r` uniform in `low + 1 ..= high - elem - 1`.
pub fn triplet(rng: &mut impl Rng, low: u32, high: u32, elem: u32) -> Result<[u32; 3], DatasetError> {
    let top = high as i64 - elem as i64;
    if top <= low as i64 + 1 {
        return Err(DatasetError::EmptyRange { low, high, elem });
    }
    let top = top as u32;
    Ok([low, rng.gen_range(low + 1..=top - 1), top])
}

/// All `width`-tuples over the three boundary values, in lexicographic index order.
pub fn cartesian(values: &[u16; 3], width: usize) -> Result<Vec<Vec<u16>>, DatasetError> {
    if width == 0 {
        return Err(DatasetError::ZeroWidth);
    }
    let mut out = vec![vec![]];
    for _ in 0..width {
        out = out
            .into_iter()
            .flat_map(|prefix: Vec<u16>| {
                values.iter().map(move |v| {
                    let mut next = prefix.clone();
                    next.push(*v);
                    next
                })
            })
            .collect();
    }
    Ok(out)
}

/// Boundary value tuples of width `elem` drawn from `triplet(low, high, 0)`.
pub fn combs(rng: &mut impl Rng, low: u16, high: u16, elem: usize) -> Result<Vec<Vec<u16>>, DatasetError> {
    if elem == 0 {
        return Err(DatasetError::ZeroWidth);
    }
    let [a, b, c] = triplet(rng, low as u32, high as u32, 0)?;
    cartesian(&[a as u16, b as u16, c as u16], elem)
}

/// Boundary values for `area`. Coils only hold 0 and 1, so the digital
/// "triplet" is `[0, coin flip, 1]`.
fn value_triplet(rng: &mut impl Rng, cfg: &ProtocolConfig, area: Area) -> Result<[u16; 3], DatasetError> {
    match area {
        Area::Digital => Ok([0, rng.gen_range(0..=1), 1]),
        Area::Analog => {
            let [a, b, c] = triplet(rng, cfg.val_low as u32, cfg.val_high as u32, 0)?;
            Ok([a as u16, b as u16, c as u16])
        }
    }
}

/// Pairs one boundary pass produces for the given widths: 6 addresses, 3^w
/// tuples per width, a write and a read each.
pub fn pairs_per_pass(widths: impl IntoIterator<Item = u32>) -> usize {
    widths.into_iter().map(|w| 6 * 3usize.pow(w) * 2).sum()
}

/// Areas a boundary pass can target: both bounds and exception bounds must be non-empty.
pub fn boundary_areas(cfg: &ProtocolConfig) -> Vec<Area> {
    let m = cfg.m_elem as u32;
    [Area::Analog, Area::Digital]
        .into_iter()
        .filter(|area| {
            cfg.addr_high(*area).is_some_and(|high| {
                (high as i64 - m as i64) > cfg.addr_low as i64 + 1
                    && (cfg.max_addr as i64 - m as i64) > high as i64 + 2
            })
        })
        .collect()
}

/// One pass of boundary probing over `area`.
pub fn boundary_pass<T: Transport>(
    prober: &mut Prober<T>,
    cfg: &ProtocolConfig,
    area: Area,
    rng: &mut impl Rng,
) -> Result<(), DatasetError> {
    let m = cfg.m_elem as u32;
    let high = cfg.addr_high(area).ok_or(DatasetError::EmptyRange {
        low: cfg.addr_low as u32,
        high: cfg.addr_low as u32,
        elem: m,
    })? as u32;
    for elem in 1..=m {
        let bounds = triplet(rng, cfg.addr_low as u32, high, m)?;
        let e_bounds = triplet(rng, high + 1, cfg.max_addr as u32, m)?;
        for addr in bounds.into_iter().chain(e_bounds) {
            let width = match cfg.comb_width {
                CombWidth::Elem => elem,
                CombWidth::ElemPlusOne => elem + 1,
            } as usize;
            let values = value_triplet(rng, cfg, area)?;
            for data in cartesian(&values, width)? {
                let n = data.len() as u16;
                prober.write(area, addr as u16, data)?;
                prober.read(area, addr as u16, n)?;
            }
        }
    }
    Ok(())
}

/// Repeats boundary passes, alternating areas, until `cfg.dataset_size`
/// pairs exist; the last pass is truncated.
pub fn execute_boundaries<T: Transport>(
    prober: &mut Prober<T>,
    cfg: &ProtocolConfig,
    rng: &mut impl Rng,
) -> Result<Vec<SamplePair>, DatasetError> {
    let areas = boundary_areas(cfg);
    if areas.is_empty() {
        return Err(DatasetError::EmptyRange {
            low: cfg.addr_low as u32,
            high: cfg.max_addr as u32,
            elem: cfg.m_elem as u32,
        });
    }
    let start = prober.pairs().len();
    let mut pass = 0;
    while prober.pairs().len() - start < cfg.dataset_size {
        let before = prober.pairs().len();
        boundary_pass(prober, cfg, areas[pass % areas.len()], rng)?;
        if prober.pairs().len() == before {
            break;
        }
        pass += 1;
    }
    let mut pairs = prober.pairs()[start..].to_vec();
    pairs.truncate(cfg.dataset_size);
    Ok(pairs)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub n_samples: usize,
    pub x_low: f64,
    pub x_high: f64,
    pub mix_ratio: f64,
    pub power: f64,
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<(), DatasetError> {
        let bad = |m: &str| Err(DatasetError::InvalidSampler(m.to_string()));
        if self.n_samples < 2 {
            return bad("n_samples must be at least 2");
        }
        if !(self.x_low < self.x_high) {
            return bad("x_low must be below x_high");
        }
        if !(0.0..=1.0).contains(&self.mix_ratio) {
            return bad("mix_ratio must lie in [0, 1]");
        }
        if !(self.power > 0.0 && self.power <= 1.0) {
            return bad("power must lie in (0, 1]");
        }
        Ok(())
    }

    pub fn grid(&self) -> Vec<f64> {
        let n = self.n_samples;
        let step = (self.x_high - self.x_low) / (n - 1) as f64;
        (0..n).map(|i| if i == n - 1 { self.x_high } else { self.x_low + i as f64 * step }).collect()
    }
}

/// Central differences inside the grid, one-sided at the ends.
pub fn numeric_derivative(xs: &[f64], ys: &[f64]) -> Vec<f64> {
    let n = xs.len();
    (0..n)
        .map(|i| {
            let (a, b) = match i {
                0 => (0, 1),
                i if i == n - 1 => (n - 2, n - 1),
                i => (i - 1, i + 1),
            };
            (ys[b] - ys[a]) / (xs[b] - xs[a])
        })
        .collect()
}

/// Mixed density on the grid and its normalized cumulative trapezoid integral.
pub fn adjusted_cdf(cfg: &SamplerConfig, xs: &[f64], derivative: &[f64]) -> Result<(Vec<f64>, Vec<f64>), DatasetError> {
    let n = xs.len();
    let uni = 1.0 / n as f64;
    let dx = xs[1] - xs[0];
    let dv: Vec<f64> = derivative.iter().map(|d| d.abs().powf(cfg.power)).collect();
    let mut pdf: Vec<f64> = dv.iter().map(|d| (1.0 - cfg.mix_ratio) * d + cfg.mix_ratio * uni).collect();
    let mass: f64 = pdf.iter().map(|p| p * dx).sum();
    if !(mass > 0.0) || !mass.is_finite() {
        return Err(DatasetError::DegenerateDensity);
    }
    pdf.iter_mut().for_each(|p| *p /= mass);
    let mut cdf = Vec::with_capacity(n);
    cdf.push(0.0);
    for i in 1..n {
        cdf.push(cdf[i - 1] + 0.5 * (pdf[i - 1] + pdf[i]) * (xs[i] - xs[i - 1]));
    }
    let total = cdf[n - 1];
    if !(total > 0.0) {
        return Err(DatasetError::DegenerateDensity);
    }
    cdf.iter_mut().for_each(|c| *c /= total);
    Ok((pdf, cdf))
}

/// Linear interpolation of `xs` against the nondecreasing `cdf` at `u`.
pub fn inverse_cdf(cdf: &[f64], xs: &[f64], u: f64) -> f64 {
    let i = cdf.partition_point(|c| *c < u);
    if i == 0 {
        return xs[0];
    }
    if i >= cdf.len() {
        return xs[xs.len() - 1];
    }
    let (c0, c1) = (cdf[i - 1], cdf[i]);
    if c1 <= c0 {
        return xs[i];
    }
    xs[i - 1] + (u - c0) / (c1 - c0) * (xs[i] - xs[i - 1])
}

fn draw(cfg: &SamplerConfig, xs: &[f64], derivative: &[f64], rng: &mut impl Rng) -> Result<Vec<f64>, DatasetError> {
    let (_, cdf) = adjusted_cdf(cfg, xs, derivative)?;
    let mut out: Vec<f64> = (0..cfg.n_samples).map(|_| inverse_cdf(&cdf, xs, rng.gen::<f64>())).collect();
    out.sort_by(f64::total_cmp);
    Ok(out)
}

/// Sorted x samples whose density follows the probe's softened |derivative|,
/// mixed with a uniform density; the derivative is estimated from probe values.
pub fn weighted_x_samples(
    cfg: &SamplerConfig,
    probe: impl Fn(f64) -> f64,
    rng: &mut impl Rng,
) -> Result<Vec<f64>, DatasetError> {
    cfg.validate()?;
    let xs = cfg.grid();
    let ys: Vec<f64> = xs.iter().map(|x| probe(*x)).collect();
    draw(cfg, &xs, &numeric_derivative(&xs, &ys), rng)
}

/// As [`weighted_x_samples`] with a known derivative. A derivative that is
/// zero everywhere (sgn away from the jump) leaves only the uniform part.
pub fn weighted_x_samples_analytic(
    cfg: &SamplerConfig,
    derivative: impl Fn(f64) -> f64,
    rng: &mut impl Rng,
) -> Result<Vec<f64>, DatasetError> {
    cfg.validate()?;
    let xs = cfg.grid();
    let dv: Vec<f64> = xs.iter().map(|x| derivative(*x)).collect();
    draw(cfg, &xs, &dv, rng)
}

/// Evenly spaced x values, the uniform baseline.
pub fn uniform_x_samples(cfg: &SamplerConfig) -> Vec<f64> {
    cfg.grid()
}

/// Writes each x to the block input and reads the block output.
pub fn probe_math<T: Transport>(
    prober: &mut Prober<T>,
    block: &MathBlock,
    xs: &[f64],
) -> Result<Vec<SamplePair>, DatasetError> {
    let start = prober.pairs().len();
    for x in xs {
        let counts = block.input.encode(*x, 0, u16::MAX);
        prober.write(Area::Analog, block.in_addr, vec![counts])?;
        prober.read(Area::Analog, block.out_addr, 1)?;
    }
    Ok(prober.pairs()[start..].to_vec())
}

/// Process probing plan: evenly spaced values over `interval`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessProbe {
    pub interval: (u16, u16),
    pub points: usize,
    #[serde(default)]
    pub digital_targets: Vec<u16>,
    #[serde(default)]
    pub analog_targets: Vec<u16>,
    /// Analog addresses read after every write, e.g. loop outputs.
    #[serde(default)]
    pub readback: Vec<u16>,
}

pub fn even_spaced(low: u16, high: u16, points: usize) -> Vec<u16> {
    match points {
        0 => vec![],
        1 => vec![low],
        n => (0..n)
            .map(|i| {
                let span = (high as f64 - low as f64) * i as f64 / (n - 1) as f64;
                (low as f64 + span).round() as u16
            })
            .collect(),
    }
}

/// Valid sweep: digital targets on/off, then analog targets over the interval
/// for each element width, reading back after each write.
pub fn valid_function<T: Transport>(
    prober: &mut Prober<T>,
    cfg: &ProtocolConfig,
    plan: &ProcessProbe,
) -> Result<(), DatasetError> {
    let readback = |prober: &mut Prober<T>| -> Result<(), DatasetError> {
        for addr in &plan.readback {
            prober.read(Area::Analog, *addr, 1)?;
        }
        Ok(())
    };
    for addr in &plan.digital_targets {
        for v in [1, 0] {
            prober.write(Area::Digital, *addr, vec![v])?;
            prober.read(Area::Digital, *addr, 1)?;
            readback(prober)?;
        }
    }
    let values = even_spaced(plan.interval.0, plan.interval.1, plan.points);
    for elem in 1..=cfg.m_elem {
        for addr in &plan.analog_targets {
            for v in &values {
                prober.write(Area::Analog, *addr, vec![*v; elem as usize])?;
                prober.read(Area::Analog, *addr, elem)?;
                readback(prober)?;
            }
        }
    }
    Ok(())
}

/// Requests against the exception bounds beyond each area's valid scope.
pub fn exception_function<T: Transport>(
    prober: &mut Prober<T>,
    cfg: &ProtocolConfig,
    plan: &ProcessProbe,
    rng: &mut impl Rng,
) -> Result<(), DatasetError> {
    for area in [Area::Digital, Area::Analog] {
        let Some(high) = cfg.addr_high(area) else { continue };
        let e_bounds = triplet(rng, high as u32 + 1, cfg.max_addr as u32, cfg.m_elem as u32)?;
        let value = match area {
            Area::Digital => 1,
            Area::Analog => plan.interval.0,
        };
        for addr in e_bounds {
            prober.write(area, addr as u16, vec![value])?;
            prober.read(area, addr as u16, 1)?;
        }
    }
    Ok(())
}

pub fn probe_process<T: Transport>(
    prober: &mut Prober<T>,
    cfg: &ProtocolConfig,
    plan: &ProcessProbe,
    rng: &mut impl Rng,
) -> Result<Vec<SamplePair>, DatasetError> {
    let start = prober.pairs().len();
    valid_function(prober, cfg, plan)?;
    exception_function(prober, cfg, plan, rng)?;
    Ok(prober.pairs()[start..].to_vec())
}

pub trait Trainer {
    type Model;
    fn train(&mut self, dataset_size: usize) -> Result<Self::Model, DatasetError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SizingConfig {
    pub start: usize,
    pub cap: usize,
    /// Consecutive non-improving evaluations that end the search.
    pub patience: usize,
}

impl Default for SizingConfig {
    fn default() -> Self {
        SizingConfig { start: 200, cap: 12_800, patience: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SizingReport {
    pub best_size: usize,
    pub best_score: f64,
    pub history: Vec<(usize, f64)>,
}

/// Doubles the dataset size from `cfg.start` until `cfg.patience` consecutive
/// sizes fail to beat the best score (ties do not count) or the cap is passed.
pub fn iterative_sizing<T: Trainer>(
    trainer: &mut T,
    mut evaluate: impl FnMut(&T::Model) -> Result<f64, DatasetError>,
    cfg: &SizingConfig,
) -> Result<SizingReport, DatasetError> {
    if cfg.start == 0 || cfg.patience == 0 {
        return Err(DatasetError::TrainerUnavailable("start and patience must be positive".into()));
    }
    let mut report = SizingReport { best_size: 0, best_score: f64::NEG_INFINITY, history: vec![] };
    let mut stale = 0;
    let mut size = cfg.start;
    while size <= cfg.cap {
        let model = trainer.train(size)?;
        let score = evaluate(&model)?;
        report.history.push((size, score));
        if score > report.best_score {
            report.best_score = score;
            report.best_size = size;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
        size *= 2;
    }
    if report.history.is_empty() {
        return Err(DatasetError::TrainerUnavailable("cap is below the start size".into()));
    }
    Ok(report)
}
