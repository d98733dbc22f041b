//! Simulated PLC: a memory map with configured valid ranges, math-function
//! blocks and discrete-time linear control loops.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{Area, ConfigError, Protocol, ProtocolConfig};
use crate::modbus::ModbusError;
use crate::protocol::{ExceptionCode, Outcome, ProtocolError, Request, RequestBody};
use crate::s7::{self, AckParam, DataItem, JobParam, S7Body, S7Frame, SetupComm};

#[derive(Debug, Error)]
pub enum PlantError {
    #[error("undecodable request: {0}")]
    Undecodable(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MathKind {
    Sgn,
    Expo10,
    Cosh,
    Sigmoid,
    Cauchy,
}

impl MathKind {
    pub const ALL: [MathKind; 5] =
        [MathKind::Sgn, MathKind::Expo10, MathKind::Cosh, MathKind::Sigmoid, MathKind::Cauchy];

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            MathKind::Sgn => 0.0,
            MathKind::Expo10 => std::f64::consts::LN_10 * 10f64.powf(x),
            MathKind::Cosh => x.sinh(),
            MathKind::Sigmoid => {
                let s = eval_block(MathKind::Sigmoid, x);
                s * (1.0 - s)
            }
            MathKind::Cauchy => {
                let d = 1.0 + x * x;
                -2.0 * x / (std::f64::consts::PI * d * d)
            }
        }
    }
}

pub fn eval_block(kind: MathKind, x: f64) -> f64 {
    match kind {
        MathKind::Sgn => {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        }
        MathKind::Expo10 => 10f64.powf(x),
        MathKind::Cosh => x.cosh(),
        MathKind::Sigmoid => 1.0 / (1.0 + (-x).exp()),
        MathKind::Cauchy => 1.0 / (std::f64::consts::PI * (1.0 + x * x)),
    }
}

fn default_scale() -> f64 {
    1e-3
}

/// Register encoding of a real value: `value = offset + counts * scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedPoint {
    #[serde(default = "default_scale")]
    pub scale: f64,
    #[serde(default)]
    pub offset: f64,
}

impl Default for FixedPoint {
    fn default() -> Self {
        FixedPoint { scale: default_scale(), offset: 0.0 }
    }
}

impl FixedPoint {
    pub fn decode(&self, counts: u16) -> f64 {
        self.offset + counts as f64 * self.scale
    }

    /// Nearest register count, saturated to `[low, high]`; NaN maps to `low`.
    pub fn encode(&self, value: f64, low: u16, high: u16) -> u16 {
        let counts = ((value - self.offset) / self.scale).round();
        if counts.is_nan() {
            return low;
        }
        counts.clamp(low as f64, high as f64) as u16
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MathBlock {
    pub kind: MathKind,
    pub in_addr: u16,
    pub out_addr: u16,
    #[serde(default)]
    pub input: FixedPoint,
    #[serde(default)]
    pub output: FixedPoint,
    /// Output saturation bounds in counts; defaults to the configured value range.
    #[serde(default)]
    pub clamp: Option<(u16, u16)>,
}

impl MathBlock {
    pub fn compute(&self, in_counts: u16, val_low: u16, val_high: u16) -> u16 {
        let (low, high) = self.clamp.unwrap_or((val_low, val_high));
        let y = eval_block(self.kind, self.input.decode(in_counts));
        self.output.encode(y, low, high)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trigger {
    #[default]
    OnWrite,
    Tick,
}

/// Discrete-time linear loop `x <- A x + B u`, `y = C x`, reading `u` from
/// analog input registers and writing `y` to analog output registers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlLoop {
    #[serde(default)]
    pub name: String,
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
    pub x0: Vec<f64>,
    pub inputs: Vec<u16>,
    pub outputs: Vec<u16>,
    #[serde(default)]
    pub input_scale: FixedPoint,
    #[serde(default)]
    pub output_scale: FixedPoint,
    #[serde(default)]
    pub trigger: Trigger,
    /// Coil that must be on for the loop to step.
    #[serde(default)]
    pub enable_coil: Option<u16>,
}

impl ControlLoop {
    fn validate(&self) -> Result<(), String> {
        let n = self.x0.len();
        let rect = |m: &[Vec<f64>], rows: usize, cols: usize| {
            m.len() == rows && m.iter().all(|r| r.len() == cols)
        };
        if n == 0 {
            return Err(format!("loop {:?}: empty state", self.name));
        }
        if !rect(&self.a, n, n) || !rect(&self.b, n, self.inputs.len()) || !rect(&self.c, self.outputs.len(), n) {
            return Err(format!("loop {:?}: inconsistent matrix dimensions", self.name));
        }
        Ok(())
    }
}

fn mat_vec(m: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    m.iter().map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum()).collect()
}

fn default_tick_ms() -> u64 {
    100
}

/// Protocol configuration plus the plant's blocks and loops.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantConfig {
    #[serde(flatten)]
    pub protocol: ProtocolConfig,
    #[serde(default)]
    pub blocks: Vec<MathBlock>,
    #[serde(default)]
    pub loops: Vec<ControlLoop>,
    /// Period of `Trigger::Tick` loops when served over the network.
    #[serde(default = "default_tick_ms")]
    pub tick_ms: u64,
}

impl From<ProtocolConfig> for PlantConfig {
    fn from(protocol: ProtocolConfig) -> Self {
        PlantConfig { protocol, blocks: vec![], loops: vec![], tick_ms: default_tick_ms() }
    }
}

impl PlantConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: PlantConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.protocol.validate()?;
        let analog = |addr: u16, what: &str| {
            if self.protocol.contains(Area::Analog, addr) {
                Ok(())
            } else {
                Err(ConfigError::Invalid(format!("{what} address {addr} outside the analog range")))
            }
        };
        for block in &self.blocks {
            analog(block.in_addr, "block input")?;
            analog(block.out_addr, "block output")?;
            if block.input.scale == 0.0 || block.output.scale == 0.0 {
                return Err(ConfigError::Invalid("zero fixed-point scale".into()));
            }
        }
        for lp in &self.loops {
            lp.validate().map_err(ConfigError::Invalid)?;
            for a in &lp.inputs {
                analog(*a, "loop input")?;
            }
            for a in &lp.outputs {
                analog(*a, "loop output")?;
            }
            if let Some(c) = lp.enable_coil {
                if !self.protocol.contains(Area::Digital, c) {
                    return Err(ConfigError::Invalid(format!("enable coil {c} outside the digital range")));
                }
            }
        }
        Ok(())
    }
}

/// Exception the configuration mandates for `req`, if any: unsupported
/// function first, then addresses, then values.
pub fn expected_exception(cfg: &ProtocolConfig, req: &Request) -> Option<ExceptionCode> {
    if !cfg.supports(req.function) {
        return Some(ExceptionCode::ILLEGAL_FUNCTION);
    }
    let area = req.area();
    let qty = req.quantity() as u32;
    let last = req.address as u32 + qty.max(1) - 1;
    let in_range = cfg.addr_high(area).is_some_and(|high| req.address >= cfg.addr_low && last <= high as u32);
    if !in_range {
        return Some(ExceptionCode::ILLEGAL_ADDRESS);
    }
    if let RequestBody::Write { values } = &req.body {
        let (low, high) = cfg.value_range(area);
        if values.iter().any(|v| *v < low || *v > high) {
            return Some(ExceptionCode::ILLEGAL_VALUE);
        }
    }
    None
}

const S7_MAX_PDU: u16 = 480;

#[derive(Debug, Clone)]
pub struct Plant {
    cfg: PlantConfig,
    coils: Vec<bool>,
    registers: Vec<u16>,
    states: Vec<Vec<f64>>,
}

impl Plant {
    pub fn new(cfg: PlantConfig) -> Result<Self, PlantError> {
        cfg.validate()?;
        let p = &cfg.protocol;
        let states = cfg.loops.iter().map(|l| l.x0.clone()).collect();
        let mut plant = Plant {
            coils: vec![false; p.digital_count as usize],
            registers: vec![p.val_low; p.analog_count as usize],
            states,
            cfg,
        };
        for i in 0..plant.cfg.blocks.len() {
            plant.recompute_block(i);
        }
        for i in 0..plant.cfg.loops.len() {
            plant.write_outputs(i);
        }
        Ok(plant)
    }

    pub fn config(&self) -> &PlantConfig {
        &self.cfg
    }

    pub fn protocol_config(&self) -> &ProtocolConfig {
        &self.cfg.protocol
    }

    pub fn coils(&self) -> &[bool] {
        &self.coils
    }

    pub fn registers(&self) -> &[u16] {
        &self.registers
    }

    pub fn register(&self, addr: u16) -> Option<u16> {
        let idx = (addr as usize).checked_sub(self.cfg.protocol.addr_low as usize)?;
        self.registers.get(idx).copied()
    }

    fn index(&self, addr: u16) -> usize {
        (addr - self.cfg.protocol.addr_low) as usize
    }

    /// Applies a decoded request to the memory map.
    pub fn apply(&mut self, req: &Request) -> Outcome {
        if let Some(code) = expected_exception(&self.cfg.protocol, req) {
            return Outcome::Exception(code);
        }
        let start = self.index(req.address);
        match (&req.body, req.area()) {
            (RequestBody::Read { quantity }, Area::Digital) => Outcome::Values(
                self.coils[start..start + *quantity as usize].iter().map(|c| *c as u16).collect(),
            ),
            (RequestBody::Read { quantity }, Area::Analog) => {
                Outcome::Values(self.registers[start..start + *quantity as usize].to_vec())
            }
            (RequestBody::Write { values }, Area::Digital) => {
                for (i, v) in values.iter().enumerate() {
                    self.coils[start + i] = *v == 1;
                }
                Outcome::Written
            }
            (RequestBody::Write { values }, Area::Analog) => {
                self.registers[start..start + values.len()].copy_from_slice(values);
                let written = req.address..=req.address + (values.len() as u16 - 1);
                self.after_write(|a| written.contains(&a));
                Outcome::Written
            }
        }
    }

    fn after_write(&mut self, written: impl Fn(u16) -> bool) {
        for i in 0..self.cfg.blocks.len() {
            if written(self.cfg.blocks[i].in_addr) {
                self.recompute_block(i);
            }
        }
        for i in 0..self.cfg.loops.len() {
            let lp = &self.cfg.loops[i];
            if lp.trigger == Trigger::OnWrite && lp.inputs.iter().any(|a| written(*a)) {
                self.step_loop(i);
            }
        }
    }

    fn recompute_block(&mut self, i: usize) {
        let block = &self.cfg.blocks[i];
        let (low, high) = (self.cfg.protocol.val_low, self.cfg.protocol.val_high);
        let out = block.compute(self.registers[self.index(block.in_addr)], low, high);
        let idx = self.index(block.out_addr);
        self.registers[idx] = out;
    }

    fn step_loop(&mut self, i: usize) {
        let lp = &self.cfg.loops[i];
        if let Some(c) = lp.enable_coil {
            if !self.coils[self.index(c)] {
                return;
            }
        }
        let u: Vec<f64> =
            lp.inputs.iter().map(|a| lp.input_scale.decode(self.registers[self.index(*a)])).collect();
        let ax = mat_vec(&lp.a, &self.states[i]);
        let bu = mat_vec(&lp.b, &u);
        self.states[i] = ax.iter().zip(&bu).map(|(a, b)| a + b).collect();
        self.write_outputs(i);
    }

    fn write_outputs(&mut self, i: usize) {
        let lp = &self.cfg.loops[i];
        let (low, high) = (self.cfg.protocol.val_low, self.cfg.protocol.val_high);
        let y = mat_vec(&lp.c, &self.states[i]);
        let updates: Vec<(usize, u16)> = lp
            .outputs
            .iter()
            .zip(&y)
            .map(|(a, v)| (self.index(*a), lp.output_scale.encode(*v, low, high)))
            .collect();
        for (idx, v) in updates {
            self.registers[idx] = v;
        }
    }

    /// Advances every tick-triggered loop by one step.
    pub fn tick(&mut self) {
        for i in 0..self.cfg.loops.len() {
            if self.cfg.loops[i].trigger == Trigger::Tick {
                self.step_loop(i);
            }
        }
    }

    pub fn has_tick_loops(&self) -> bool {
        self.cfg.loops.iter().any(|l| l.trigger == Trigger::Tick)
    }

    /// Answers one wire frame. Errors mean the connection should be dropped.
    pub fn handle_frame(&mut self, bytes: &[u8]) -> Result<Vec<u8>, PlantError> {
        match self.cfg.protocol.protocol {
            Protocol::Modbus => self.handle_modbus(bytes),
            Protocol::S7comm => self.handle_s7(bytes),
        }
    }

    fn handle_modbus(&mut self, bytes: &[u8]) -> Result<Vec<u8>, PlantError> {
        match Protocol::Modbus.decode_request(bytes) {
            Ok(req) => {
                let outcome = self.apply(&req);
                Protocol::Modbus.encode_response(&req, &outcome).map_err(undecodable)
            }
            // Well-framed requests the codec rejects still get a protocol answer.
            Err(ProtocolError::Modbus(ModbusError::UnknownFunction(_))) => {
                raw_exception(bytes, ExceptionCode::ILLEGAL_FUNCTION)
            }
            Err(ProtocolError::Modbus(ModbusError::InvalidPdu(_))) => raw_exception(bytes, ExceptionCode::ILLEGAL_VALUE),
            Err(e) => Err(undecodable(e)),
        }
    }

    fn handle_s7(&mut self, bytes: &[u8]) -> Result<Vec<u8>, PlantError> {
        match s7::classify(bytes) {
            Some(s7::Tpdu::ConnectRequest) => {
                return s7::connect_confirm(bytes)
                    .ok_or_else(|| PlantError::Undecodable("malformed COTP connection request".into()));
            }
            Some(s7::Tpdu::Data) => {}
            _ => return Err(PlantError::Undecodable("unexpected COTP TPDU".into())),
        }
        let frame = S7Frame::from_bytes(bytes).map_err(undecodable)?;
        let reply = |param| S7Frame {
            pdu_ref: frame.pdu_ref,
            body: S7Body::AckData { error_class: 0, error_code: 0, param },
        };
        match &frame.body {
            S7Body::Job(JobParam::Setup(setup)) => {
                let ack = SetupComm { pdu_length: setup.pdu_length.min(S7_MAX_PDU), ..*setup };
                return reply(AckParam::Setup(ack)).to_bytes().map_err(undecodable);
            }
            S7Body::AckData { .. } => return Err(PlantError::Undecodable("ack_data sent to the plant".into())),
            S7Body::Job(_) => {}
        }
        match Protocol::S7comm.decode_request(bytes) {
            Ok(req) => {
                let outcome = self.apply(&req);
                Protocol::S7comm.encode_response(&req, &outcome).map_err(undecodable)
            }
            // Items outside the mapped data blocks: answer "object does not exist" per item.
            Err(ProtocolError::Unsupported(_)) => {
                let missing = s7::RC_OBJECT_MISSING;
                let param = match &frame.body {
                    S7Body::Job(JobParam::ReadVar { items }) => AckParam::ReadVar {
                        data: items
                            .iter()
                            .map(|_| DataItem { return_code: missing, transport_size: s7::TS_NULL, data: vec![] })
                            .collect(),
                    },
                    S7Body::Job(JobParam::WriteVar { items, .. }) => {
                        AckParam::WriteVar { return_codes: vec![missing; items.len()] }
                    }
                    _ => unreachable!("setup and ack handled above"),
                };
                reply(param).to_bytes().map_err(undecodable)
            }
            Err(e) => Err(undecodable(e)),
        }
    }
}

fn undecodable(e: impl std::fmt::Display) -> PlantError {
    PlantError::Undecodable(e.to_string())
}

fn raw_exception(request: &[u8], code: ExceptionCode) -> Result<Vec<u8>, PlantError> {
    Protocol::Modbus
        .raw_exception(request, code)
        .ok_or_else(|| PlantError::Undecodable("unusable MBAP header".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Function;
    use crate::hexstr;
    use crate::protocol::RequestId;

    fn plant(points: u32) -> Plant {
        Plant::new(ProtocolConfig::with_points(Protocol::Modbus, points).into()).unwrap()
    }

    fn id() -> RequestId {
        RequestId::Modbus { transaction_id: 1, unit_id: 1 }
    }

    #[test]
    fn eval_block_examples() {
        assert_eq!(eval_block(MathKind::Sgn, 0.0), 0.0);
        assert_eq!(eval_block(MathKind::Sgn, -3.2), -1.0);
        assert_eq!(eval_block(MathKind::Sigmoid, 0.0), 0.5);
        assert!((eval_block(MathKind::Expo10, 2.0) - 100.0).abs() < 1e-12);
        assert!((eval_block(MathKind::Cauchy, 0.0) - 1.0 / std::f64::consts::PI).abs() < 1e-15);
    }

    #[test]
    fn analytic_derivatives_match_central_differences() {
        for kind in MathKind::ALL.into_iter().filter(|k| *k != MathKind::Sgn) {
            for x in [-1.5, -0.3, 0.7, 1.9] {
                let h = 1e-6;
                let num = (eval_block(kind, x + h) - eval_block(kind, x - h)) / (2.0 * h);
                assert!((num - kind.derivative(x)).abs() < 1e-5 * num.abs().max(1.0), "{kind:?} at {x}");
            }
        }
    }

    #[test]
    fn table_four_reads() {
        let mut d1 = plant(40);
        let mut d2 = plant(10000);
        let read = |a| Request::read(id(), Area::Analog, a, 1);
        assert_eq!(d1.apply(&read(41)), Outcome::Exception(ExceptionCode::ILLEGAL_ADDRESS));
        assert!(matches!(d2.apply(&read(41)), Outcome::Values(_)));
        assert!(matches!(d1.apply(&read(35)), Outcome::Values(_)));
        assert!(matches!(d2.apply(&read(35)), Outcome::Values(_)));
    }

    #[test]
    fn unsupported_and_out_of_range_values() {
        let mut cfg = ProtocolConfig::with_points(Protocol::Modbus, 10);
        cfg.functions = vec![Function::ReadAnalog, Function::WriteAnalog];
        cfg.val_high = 100;
        let mut p = Plant::new(cfg.into()).unwrap();
        let coil = Request::read(id(), Area::Digital, 0, 1);
        assert_eq!(p.apply(&coil), Outcome::Exception(ExceptionCode::ILLEGAL_FUNCTION));
        let big = Request::write(id(), Area::Analog, 0, vec![101]);
        assert_eq!(p.apply(&big), Outcome::Exception(ExceptionCode::ILLEGAL_VALUE));
        assert_eq!(p.register(0), Some(0));
    }

    #[test]
    fn unknown_function_gets_illegal_function() {
        let mut p = plant(4);
        let reply = p.handle_frame(&hexstr::decode("000900000006010400000001").unwrap()).unwrap();
        assert_eq!(hexstr::encode(&reply), "000900000003018401");
        let zero_qty = p.handle_frame(&hexstr::decode("000900000006010300000000").unwrap()).unwrap();
        assert_eq!(hexstr::encode(&zero_qty), "000900000003018303");
        assert!(p.handle_frame(&[0, 1, 0]).is_err());
    }

    #[test]
    fn block_recomputes_on_write() {
        let mut cfg: PlantConfig = ProtocolConfig::with_points(Protocol::Modbus, 4).into();
        cfg.blocks.push(MathBlock {
            kind: MathKind::Expo10,
            in_addr: 0,
            out_addr: 1,
            input: FixedPoint::default(),
            output: FixedPoint { scale: 1.0, offset: 0.0 },
            clamp: None,
        });
        let mut p = Plant::new(cfg).unwrap();
        assert_eq!(p.register(1), Some(1));
        p.apply(&Request::write(id(), Area::Analog, 0, vec![2000]));
        assert_eq!(p.register(1), Some(100));
        p.apply(&Request::write(id(), Area::Analog, 0, vec![60000]));
        assert_eq!(p.register(1), Some(u16::MAX));
    }

    #[test]
    fn loop_steps_on_write_when_enabled() {
        let mut cfg: PlantConfig = ProtocolConfig::with_points(Protocol::Modbus, 4).into();
        cfg.loops.push(ControlLoop {
            name: "integrator".into(),
            a: vec![vec![1.0]],
            b: vec![vec![1.0]],
            c: vec![vec![1.0]],
            x0: vec![0.0],
            inputs: vec![0],
            outputs: vec![2],
            input_scale: FixedPoint { scale: 1.0, offset: 0.0 },
            output_scale: FixedPoint { scale: 1.0, offset: 0.0 },
            trigger: Trigger::OnWrite,
            enable_coil: Some(0),
        });
        let mut p = Plant::new(cfg).unwrap();
        p.apply(&Request::write(id(), Area::Analog, 0, vec![5]));
        assert_eq!(p.register(2), Some(0));
        p.apply(&Request::write(id(), Area::Digital, 0, vec![1]));
        p.apply(&Request::write(id(), Area::Analog, 0, vec![5]));
        p.apply(&Request::write(id(), Area::Analog, 0, vec![7]));
        assert_eq!(p.register(2), Some(12));
    }

    #[test]
    fn s7_handshake_and_unmapped_items() {
        let mut p = Plant::new(ProtocolConfig::with_points(Protocol::S7comm, 40).into()).unwrap();
        let cr = hexstr::decode("0300001611e00000000100c0010ac1020100c2020102").unwrap();
        let cc = p.handle_frame(&cr).unwrap();
        assert_eq!(s7::classify(&cc), Some(s7::Tpdu::ConnectConfirm));
        let setup = hexstr::decode("0300001902f08032010000040000080000f0000001000101e0").unwrap();
        let ack = S7Frame::from_bytes(&p.handle_frame(&setup).unwrap()).unwrap();
        assert!(matches!(
            ack.body,
            S7Body::AckData { param: AckParam::Setup(SetupComm { pdu_length: 480, .. }), .. }
        ));
        // DB9 is not mapped
        let read = hexstr::decode("0300001f02f080320100000500000e00000401120a10020002000984000000").unwrap();
        let reply = p.handle_frame(&read).unwrap();
        assert_eq!(&reply[reply.len() - 4..], &[s7::RC_OBJECT_MISSING, 0, 0, 0]);
    }
}
