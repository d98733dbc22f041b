//! Maps the protocol-independent read/write surface onto Modbus/TCP and S7Comm frames.
//!
//! S7 conventions: digital points live in DB2, one byte per point holding 0 or 1;
//! analog points live in DB1 as big-endian 16-bit words. Items use byte word
//! length, so a point's byte offset is `point * width`. Item return code 0x05
//! stands for an illegal address and 0x07 for an illegal value; an illegal
//! function and a server failure are reported in the ack header error fields.

use serde::Serialize;
use thiserror::Error;

use crate::config::{Area, Function, Protocol};
use crate::modbus::{self, FunctionCode, ModbusError, ModbusPdu};
use crate::s7::{self, AckParam, DataItem, JobParam, S7Body, S7Error, S7Frame, VarItem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct ExceptionCode(pub u8);

impl ExceptionCode {
    pub const ILLEGAL_FUNCTION: ExceptionCode = ExceptionCode(0x01);
    pub const ILLEGAL_ADDRESS: ExceptionCode = ExceptionCode(0x02);
    pub const ILLEGAL_VALUE: ExceptionCode = ExceptionCode(0x03);
    pub const SERVER_FAILURE: ExceptionCode = ExceptionCode(0x04);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(tag = "protocol", rename_all = "lowercase")]
pub enum RequestId {
    Modbus { transaction_id: u16, unit_id: u8 },
    S7 { pdu_ref: u16 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestBody {
    Read { quantity: u16 },
    /// Digital values are 0 or 1; any other value marks an illegal coil state.
    Write { values: Vec<u16> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Request {
    pub id: RequestId,
    pub function: Function,
    pub address: u16,
    pub body: RequestBody,
}

impl Request {
    pub fn read(id: RequestId, area: Area, address: u16, quantity: u16) -> Self {
        Request { id, function: Function::read(area), address, body: RequestBody::Read { quantity } }
    }

    /// A single write for one value, a multiple write otherwise.
    pub fn write(id: RequestId, area: Area, address: u16, values: Vec<u16>) -> Self {
        Request {
            id,
            function: Function::write(area, values.len() > 1),
            address,
            body: RequestBody::Write { values },
        }
    }

    pub fn area(&self) -> Area {
        self.function.area()
    }

    /// Number of points addressed by the request.
    pub fn quantity(&self) -> u16 {
        match &self.body {
            RequestBody::Read { quantity } => *quantity,
            RequestBody::Write { values } => values.len() as u16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Values(Vec<u16>),
    Written,
    Exception(ExceptionCode),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProtocolError {
    #[error(transparent)]
    Modbus(#[from] ModbusError),
    #[error(transparent)]
    S7(#[from] S7Error),
    #[error("unsupported request: {0}")]
    Unsupported(String),
    #[error("frame is not a read/write operation")]
    NotAnOperation,
}

/// Why a candidate response is not the packet the request calls for.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Error)]
#[serde(rename_all = "snake_case")]
pub enum Violation {
    #[error("response does not decode")]
    Undecodable,
    #[error("transaction/reference id not echoed")]
    IdMismatch,
    #[error("function code does not match the request")]
    FunctionMismatch,
    #[error("payload shape does not match the request")]
    Shape,
    #[error("echoed address/quantity/value differs from the request")]
    EchoMismatch,
    #[error("non-canonical encoding")]
    NonCanonical,
    #[error("exception where a normal response is expected")]
    UnexpectedException,
    #[error("normal response where an exception is expected")]
    MissingException,
    #[error("wrong exception code")]
    WrongExceptionCode,
    #[error("value outside the configured range")]
    ValueOutOfRange,
}

const DIGITAL_DB: u16 = 2;
const ANALOG_DB: u16 = 1;

fn s7_width(area: Area) -> u16 {
    match area {
        Area::Digital => 1,
        Area::Analog => 2,
    }
}

fn s7_db(area: Area) -> u16 {
    match area {
        Area::Digital => DIGITAL_DB,
        Area::Analog => ANALOG_DB,
    }
}

fn s7_header_error(code: ExceptionCode) -> Option<(u8, u8)> {
    match code {
        ExceptionCode::ILLEGAL_FUNCTION => Some((0x81, 0x04)),
        ExceptionCode::SERVER_FAILURE => Some((0x85, 0x00)),
        _ => None,
    }
}

fn s7_item_code(code: ExceptionCode) -> Option<u8> {
    match code {
        ExceptionCode::ILLEGAL_ADDRESS => Some(s7::RC_ADDRESS_OUT_OF_RANGE),
        ExceptionCode::ILLEGAL_VALUE => Some(s7::RC_DATA_TYPE_INCONSISTENT),
        _ => None,
    }
}

fn modbus_function(f: Function) -> FunctionCode {
    match f {
        Function::ReadDigital => FunctionCode::ReadCoils,
        Function::ReadAnalog => FunctionCode::ReadHoldingRegisters,
        Function::WriteDigital => FunctionCode::WriteSingleCoil,
        Function::WriteAnalog => FunctionCode::WriteSingleRegister,
        Function::WriteDigitals => FunctionCode::WriteMultipleCoils,
        Function::WriteAnalogs => FunctionCode::WriteMultipleRegisters,
    }
}

fn from_modbus_function(f: FunctionCode) -> Function {
    match f {
        FunctionCode::ReadCoils => Function::ReadDigital,
        FunctionCode::ReadHoldingRegisters => Function::ReadAnalog,
        FunctionCode::WriteSingleCoil => Function::WriteDigital,
        FunctionCode::WriteSingleRegister => Function::WriteAnalog,
        FunctionCode::WriteMultipleCoils => Function::WriteDigitals,
        FunctionCode::WriteMultipleRegisters => Function::WriteAnalogs,
    }
}

fn coil_wire(value: u16) -> u16 {
    match value {
        0 => modbus::COIL_OFF,
        1 => modbus::COIL_ON,
        other => other,
    }
}

fn values_to_bytes(area: Area, values: &[u16], modbus: bool) -> Result<Vec<u8>, ProtocolError> {
    match area {
        Area::Analog => Ok(modbus::pack_words(values)),
        Area::Digital => {
            if values.iter().any(|v| *v > 1) {
                return Err(ProtocolError::Unsupported("digital values must be 0 or 1".into()));
            }
            if modbus {
                Ok(modbus::pack_bits(&values.iter().map(|v| *v == 1).collect::<Vec<_>>()))
            } else {
                Ok(values.iter().map(|v| *v as u8).collect())
            }
        }
    }
}

impl Protocol {
    pub fn encode_request(self, req: &Request) -> Result<Vec<u8>, ProtocolError> {
        match (&req.body, req.function.is_read()) {
            (RequestBody::Read { quantity }, true) if *quantity > 0 => {}
            (RequestBody::Write { values }, false) if !values.is_empty() => {
                let single = matches!(req.function, Function::WriteDigital | Function::WriteAnalog);
                if single && values.len() != 1 {
                    return Err(ProtocolError::Unsupported("single write with several values".into()));
                }
            }
            _ => return Err(ProtocolError::Unsupported(format!("malformed {:?} request", req.function))),
        }
        match self {
            Protocol::Modbus => encode_modbus_request(req),
            Protocol::S7comm => encode_s7_request(req),
        }
    }

    pub fn decode_request(self, bytes: &[u8]) -> Result<Request, ProtocolError> {
        match self {
            Protocol::Modbus => decode_modbus_request(bytes),
            Protocol::S7comm => decode_s7_request(bytes),
        }
    }

    pub fn encode_response(self, req: &Request, outcome: &Outcome) -> Result<Vec<u8>, ProtocolError> {
        match self {
            Protocol::Modbus => encode_modbus_response(req, outcome),
            Protocol::S7comm => encode_s7_response(req, outcome),
        }
    }

    /// Strictly interprets `bytes` as the answer to `req`: ids echoed, function
    /// matching, payload sized for the request, and byte-canonical.
    pub fn interpret_response(self, req: &Request, bytes: &[u8]) -> Result<Outcome, Violation> {
        let outcome = match self {
            Protocol::Modbus => interpret_modbus(req, bytes)?,
            Protocol::S7comm => interpret_s7(req, bytes)?,
        };
        match self.encode_response(req, &outcome) {
            Ok(canonical) if canonical == bytes => Ok(outcome),
            _ => Err(Violation::NonCanonical),
        }
    }

    /// Total frame length once enough of the stream prefix is buffered.
    pub fn frame_len(self, prefix: &[u8]) -> Option<usize> {
        match self {
            Protocol::Modbus => modbus::frame_len(prefix),
            Protocol::S7comm => s7::frame_len(prefix),
        }
    }

    /// Shortest well-formed frame; shorter length fields mean a desynchronised stream.
    pub fn min_frame_len(self) -> usize {
        match self {
            Protocol::Modbus => modbus::MBAP_LEN + 1,
            Protocol::S7comm => s7::TPKT_LEN + 3,
        }
    }

    /// Exception reply built from the raw request bytes, for requests the codec
    /// cannot map (unknown functions, bad quantities). `None` when even the
    /// header is unusable.
    pub fn raw_exception(self, request: &[u8], code: ExceptionCode) -> Option<Vec<u8>> {
        if let Ok(req) = self.decode_request(request) {
            return self.encode_response(&req, &Outcome::Exception(code)).ok();
        }
        match self {
            Protocol::Modbus if request.len() > modbus::MBAP_LEN && request[2..4] == [0, 0] => {
                let mut out = request[..4].to_vec();
                out.extend_from_slice(&3u16.to_be_bytes());
                out.push(request[6]);
                out.push(request[modbus::MBAP_LEN] | modbus::EXCEPTION_FLAG);
                out.push(code.0);
                Some(out)
            }
            _ => None,
        }
    }

    /// Id that a response shares with its request: transaction + unit id for
    /// Modbus, PDU reference for S7 data TPDUs.
    pub fn transaction_key(self, bytes: &[u8]) -> Option<u32> {
        match self {
            Protocol::Modbus => {
                (bytes.len() >= modbus::MBAP_LEN).then(|| {
                    (u16::from_be_bytes([bytes[0], bytes[1]]) as u32) << 8 | bytes[6] as u32
                })
            }
            Protocol::S7comm => {
                if s7::classify(bytes)? != s7::Tpdu::Data || bytes.len() < 13 {
                    return None;
                }
                Some(u16::from_be_bytes([bytes[11], bytes[12]]) as u32)
            }
        }
    }
}

fn encode_modbus_request(req: &Request) -> Result<Vec<u8>, ProtocolError> {
    let RequestId::Modbus { transaction_id, unit_id } = req.id else {
        return Err(ProtocolError::Unsupported("S7 id on a Modbus request".into()));
    };
    let function = modbus_function(req.function);
    let pdu = match (&req.body, req.function) {
        (RequestBody::Read { quantity }, _) => {
            ModbusPdu::ReadRequest { function, address: req.address, quantity: *quantity }
        }
        (RequestBody::Write { values }, Function::WriteDigital) => {
            ModbusPdu::WriteSingle { function, address: req.address, value: coil_wire(values[0]) }
        }
        (RequestBody::Write { values }, Function::WriteAnalog) => {
            ModbusPdu::WriteSingle { function, address: req.address, value: values[0] }
        }
        (RequestBody::Write { values }, _) => ModbusPdu::WriteMultiple {
            function,
            address: req.address,
            quantity: values.len() as u16,
            values: values_to_bytes(req.area(), values, true)?,
        },
    };
    Ok(modbus::Frame::new(transaction_id, unit_id, pdu).to_bytes()?)
}

fn decode_modbus_request(bytes: &[u8]) -> Result<Request, ProtocolError> {
    let frame = modbus::Frame::decode_request(bytes)?;
    let id = RequestId::Modbus {
        transaction_id: frame.header.transaction_id,
        unit_id: frame.header.unit_id,
    };
    let (function, address, body) = match frame.pdu {
        ModbusPdu::ReadRequest { function, address, quantity } => {
            (function, address, RequestBody::Read { quantity })
        }
        ModbusPdu::WriteSingle { function: FunctionCode::WriteSingleCoil, address, value } => {
            let state = match value {
                modbus::COIL_ON => 1,
                modbus::COIL_OFF => 0,
                _ => 2,
            };
            (FunctionCode::WriteSingleCoil, address, RequestBody::Write { values: vec![state] })
        }
        ModbusPdu::WriteSingle { function, address, value } => {
            (function, address, RequestBody::Write { values: vec![value] })
        }
        ModbusPdu::WriteMultiple { function, address, quantity, values } => {
            let decoded = if function.is_digital() {
                modbus::unpack_bits(&values, quantity as usize).into_iter().map(u16::from).collect()
            } else {
                modbus::unpack_words(&values)
            };
            (function, address, RequestBody::Write { values: decoded })
        }
        other => {
            return Err(ProtocolError::Unsupported(format!("{other:?} is not a request")));
        }
    };
    Ok(Request { id, function: from_modbus_function(function), address, body })
}

fn encode_modbus_response(req: &Request, outcome: &Outcome) -> Result<Vec<u8>, ProtocolError> {
    let RequestId::Modbus { transaction_id, unit_id } = req.id else {
        return Err(ProtocolError::Unsupported("S7 id on a Modbus request".into()));
    };
    let function = modbus_function(req.function);
    let pdu = match outcome {
        Outcome::Exception(code) => ModbusPdu::Exception { function, code: code.0 },
        Outcome::Values(values) => {
            ModbusPdu::ReadResponse { function, values: values_to_bytes(req.area(), values, true)? }
        }
        Outcome::Written => match &req.body {
            RequestBody::Write { values } if matches!(req.function, Function::WriteDigital) => {
                ModbusPdu::WriteSingle { function, address: req.address, value: coil_wire(values[0]) }
            }
            RequestBody::Write { values } if matches!(req.function, Function::WriteAnalog) => {
                ModbusPdu::WriteSingle { function, address: req.address, value: values[0] }
            }
            RequestBody::Write { values } => {
                ModbusPdu::WriteAck { function, address: req.address, quantity: values.len() as u16 }
            }
            RequestBody::Read { .. } => {
                return Err(ProtocolError::Unsupported("write ack for a read".into()));
            }
        },
    };
    Ok(modbus::Frame::new(transaction_id, unit_id, pdu).to_bytes()?)
}

fn interpret_modbus(req: &Request, bytes: &[u8]) -> Result<Outcome, Violation> {
    let frame = modbus::Frame::decode_response(bytes).map_err(|_| Violation::Undecodable)?;
    let RequestId::Modbus { transaction_id, unit_id } = req.id else {
        return Err(Violation::IdMismatch);
    };
    if frame.header.transaction_id != transaction_id || frame.header.unit_id != unit_id {
        return Err(Violation::IdMismatch);
    }
    let function = modbus_function(req.function);
    if frame.pdu.function() != function {
        return Err(Violation::FunctionMismatch);
    }
    match (frame.pdu, &req.body) {
        (ModbusPdu::Exception { code, .. }, _) => Ok(Outcome::Exception(ExceptionCode(code))),
        (ModbusPdu::ReadResponse { values, .. }, RequestBody::Read { quantity }) => {
            if values.len() != function.byte_count(*quantity) {
                return Err(Violation::Shape);
            }
            if function.is_digital() {
                let used = *quantity as usize % 8;
                if used != 0 && values[values.len() - 1] >> used != 0 {
                    return Err(Violation::Shape);
                }
                let bits = modbus::unpack_bits(&values, *quantity as usize);
                Ok(Outcome::Values(bits.into_iter().map(u16::from).collect()))
            } else {
                Ok(Outcome::Values(modbus::unpack_words(&values)))
            }
        }
        (ModbusPdu::WriteSingle { address, value, .. }, RequestBody::Write { values }) => {
            let expected =
                if function.is_digital() { coil_wire(values[0]) } else { values[0] };
            if address != req.address || value != expected {
                return Err(Violation::EchoMismatch);
            }
            Ok(Outcome::Written)
        }
        (ModbusPdu::WriteAck { address, quantity, .. }, RequestBody::Write { values }) => {
            if address != req.address || quantity as usize != values.len() {
                return Err(Violation::EchoMismatch);
            }
            Ok(Outcome::Written)
        }
        _ => Err(Violation::Shape),
    }
}

fn s7_item(area: Area, address: u16, quantity: u16) -> Result<VarItem, ProtocolError> {
    let width = s7_width(area);
    let count = quantity
        .checked_mul(width)
        .ok_or_else(|| ProtocolError::Unsupported(format!("quantity {quantity} too large")))?;
    Ok(VarItem {
        word_len: s7::WL_BYTE,
        count,
        db_number: s7_db(area),
        area: s7::AREA_DB,
        address: address as u32 * width as u32 * 8,
    })
}

fn encode_s7_request(req: &Request) -> Result<Vec<u8>, ProtocolError> {
    let RequestId::S7 { pdu_ref } = req.id else {
        return Err(ProtocolError::Unsupported("Modbus id on an S7 request".into()));
    };
    let item = s7_item(req.area(), req.address, req.quantity())?;
    let job = match &req.body {
        RequestBody::Read { .. } => JobParam::ReadVar { items: vec![item] },
        RequestBody::Write { values } => JobParam::WriteVar {
            items: vec![item],
            data: vec![DataItem {
                return_code: 0,
                transport_size: s7::TS_BYTE,
                data: values_to_bytes(req.area(), values, false)?,
            }],
        },
    };
    Ok(S7Frame { pdu_ref, body: S7Body::Job(job) }.to_bytes()?)
}

fn decode_s7_request(bytes: &[u8]) -> Result<Request, ProtocolError> {
    let frame = S7Frame::from_bytes(bytes)?;
    let unsupported = |m: &str| Err(ProtocolError::Unsupported(m.to_string()));
    let S7Body::Job(job) = frame.body else {
        return unsupported("ack_data is not a request");
    };
    let (items, data) = match job {
        JobParam::ReadVar { items } => (items, None),
        JobParam::WriteVar { items, data } => (items, Some(data)),
        JobParam::Setup(_) => return Err(ProtocolError::NotAnOperation),
    };
    if items.len() != 1 {
        return unsupported("only single-item requests are supported");
    }
    let item = items[0];
    let area = match (item.area, item.db_number) {
        (s7::AREA_DB, DIGITAL_DB) => Area::Digital,
        (s7::AREA_DB, ANALOG_DB) => Area::Analog,
        _ => return unsupported("item outside the mapped data blocks"),
    };
    let width = s7_width(area) as u32;
    if item.word_len != s7::WL_BYTE
        || item.address % 8 != 0
        || (item.address / 8) % width != 0
        || item.count as u32 % width != 0
    {
        return unsupported("misaligned item");
    }
    let point = item.address / 8 / width;
    let Ok(address) = u16::try_from(point) else {
        return unsupported("item address beyond the point space");
    };
    let quantity = (item.count as u32 / width) as u16;
    let id = RequestId::S7 { pdu_ref: frame.pdu_ref };
    match data {
        None => Ok(Request::read(id, area, address, quantity)),
        Some(data) => {
            let entry = &data[0];
            if entry.transport_size != s7::TS_BYTE || entry.data.len() != item.count as usize {
                return unsupported("write data does not match the item");
            }
            let values: Vec<u16> = match area {
                Area::Digital => entry.data.iter().map(|b| if *b > 1 { 2 } else { *b as u16 }).collect(),
                Area::Analog => modbus::unpack_words(&entry.data),
            };
            Ok(Request::write(id, area, address, values))
        }
    }
}

fn encode_s7_response(req: &Request, outcome: &Outcome) -> Result<Vec<u8>, ProtocolError> {
    let RequestId::S7 { pdu_ref } = req.id else {
        return Err(ProtocolError::Unsupported("Modbus id on an S7 request".into()));
    };
    let is_read = req.function.is_read();
    let (error_class, error_code, param) = match outcome {
        Outcome::Exception(code) => {
            if let Some((class, err)) = s7_header_error(*code) {
                (class, err, AckParam::None)
            } else if let Some(rc) = s7_item_code(*code) {
                let param = if is_read {
                    AckParam::ReadVar {
                        data: vec![DataItem { return_code: rc, transport_size: s7::TS_NULL, data: vec![] }],
                    }
                } else {
                    AckParam::WriteVar { return_codes: vec![rc] }
                };
                (0, 0, param)
            } else {
                return Err(ProtocolError::Unsupported(format!("no S7 mapping for exception {}", code.0)));
            }
        }
        Outcome::Values(values) => (
            0,
            0,
            AckParam::ReadVar {
                data: vec![DataItem {
                    return_code: s7::RC_SUCCESS,
                    transport_size: s7::TS_BYTE,
                    data: values_to_bytes(req.area(), values, false)?,
                }],
            },
        ),
        Outcome::Written => (0, 0, AckParam::WriteVar { return_codes: vec![s7::RC_SUCCESS] }),
    };
    Ok(S7Frame { pdu_ref, body: S7Body::AckData { error_class, error_code, param } }.to_bytes()?)
}

fn interpret_s7(req: &Request, bytes: &[u8]) -> Result<Outcome, Violation> {
    let frame = S7Frame::from_bytes(bytes).map_err(|_| Violation::Undecodable)?;
    let RequestId::S7 { pdu_ref } = req.id else {
        return Err(Violation::IdMismatch);
    };
    if frame.pdu_ref != pdu_ref {
        return Err(Violation::IdMismatch);
    }
    let S7Body::AckData { error_class, error_code, param } = frame.body else {
        return Err(Violation::FunctionMismatch);
    };
    if error_class != 0 || error_code != 0 {
        if param != AckParam::None {
            return Err(Violation::Shape);
        }
        return [ExceptionCode::ILLEGAL_FUNCTION, ExceptionCode::SERVER_FAILURE]
            .into_iter()
            .find(|c| s7_header_error(*c) == Some((error_class, error_code)))
            .map(Outcome::Exception)
            .ok_or(Violation::Shape);
    }
    let item_exception = |rc: u8| {
        [ExceptionCode::ILLEGAL_ADDRESS, ExceptionCode::ILLEGAL_VALUE]
            .into_iter()
            .find(|c| s7_item_code(*c) == Some(rc))
            .map(Outcome::Exception)
            .ok_or(Violation::Shape)
    };
    match (param, &req.body) {
        (AckParam::ReadVar { data }, RequestBody::Read { quantity }) => {
            let [item] = data.as_slice() else {
                return Err(Violation::Shape);
            };
            if item.return_code != s7::RC_SUCCESS {
                return item_exception(item.return_code);
            }
            let area = req.area();
            if item.data.len() != (*quantity as usize) * s7_width(area) as usize {
                return Err(Violation::Shape);
            }
            match area {
                Area::Digital => {
                    if item.data.iter().any(|b| *b > 1) {
                        return Err(Violation::Shape);
                    }
                    Ok(Outcome::Values(item.data.iter().map(|b| *b as u16).collect()))
                }
                Area::Analog => Ok(Outcome::Values(modbus::unpack_words(&item.data))),
            }
        }
        (AckParam::WriteVar { return_codes }, RequestBody::Write { .. }) => match return_codes.as_slice() {
            [s7::RC_SUCCESS] => Ok(Outcome::Written),
            [rc] => item_exception(*rc),
            _ => Err(Violation::Shape),
        },
        _ => Err(Violation::FunctionMismatch),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hexstr;

    fn mb(tid: u16) -> RequestId {
        RequestId::Modbus { transaction_id: tid, unit_id: 1 }
    }

    #[test]
    fn modbus_request_round_trip() {
        let req = Request::write(mb(9), Area::Digital, 3, vec![1, 0, 1]);
        let bytes = Protocol::Modbus.encode_request(&req).unwrap();
        assert_eq!(Protocol::Modbus.decode_request(&bytes).unwrap(), req);
        let coil = Request::write(mb(1), Area::Digital, 0, vec![1]);
        let bytes = Protocol::Modbus.encode_request(&coil).unwrap();
        assert_eq!(hexstr::encode(&bytes), "00010000000601050000ff00");
    }

    #[test]
    fn illegal_coil_value_decodes_as_marker() {
        let bytes = hexstr::decode("000100000006010500001234").unwrap();
        let req = Protocol::Modbus.decode_request(&bytes).unwrap();
        assert_eq!(req.body, RequestBody::Write { values: vec![2] });
    }

    #[test]
    fn modbus_response_interpretation() {
        let req = Request::read(mb(5), Area::Analog, 35, 2);
        let ok = Protocol::Modbus.encode_response(&req, &Outcome::Values(vec![7, 8])).unwrap();
        assert_eq!(Protocol::Modbus.interpret_response(&req, &ok), Ok(Outcome::Values(vec![7, 8])));

        let other = Request::read(mb(6), Area::Analog, 35, 2);
        assert_eq!(Protocol::Modbus.interpret_response(&other, &ok), Err(Violation::IdMismatch));

        let short = Request::read(mb(5), Area::Analog, 35, 3);
        assert_eq!(Protocol::Modbus.interpret_response(&short, &ok), Err(Violation::Shape));

        let exc = Protocol::Modbus
            .encode_response(&req, &Outcome::Exception(ExceptionCode::ILLEGAL_ADDRESS))
            .unwrap();
        assert_eq!(hexstr::encode(&exc), "000500000003018302");
    }

    #[test]
    fn coil_padding_bits_must_be_zero() {
        let req = Request::read(mb(1), Area::Digital, 0, 3);
        let mut bytes = Protocol::Modbus.encode_response(&req, &Outcome::Values(vec![1, 0, 1])).unwrap();
        assert_eq!(Protocol::Modbus.interpret_response(&req, &bytes), Ok(Outcome::Values(vec![1, 0, 1])));
        *bytes.last_mut().unwrap() |= 0x80;
        assert_eq!(Protocol::Modbus.interpret_response(&req, &bytes), Err(Violation::Shape));
    }

    #[test]
    fn s7_request_round_trip_and_layout() {
        let req = Request::read(RequestId::S7 { pdu_ref: 0x0500 }, Area::Analog, 0, 1);
        let bytes = Protocol::S7comm.encode_request(&req).unwrap();
        assert_eq!(hexstr::encode(&bytes), "0300001f02f080320100000500000e00000401120a10020002000184000000");
        assert_eq!(Protocol::S7comm.decode_request(&bytes).unwrap(), req);

        let write = Request::write(RequestId::S7 { pdu_ref: 2 }, Area::Digital, 17, vec![1, 0]);
        let bytes = Protocol::S7comm.encode_request(&write).unwrap();
        assert_eq!(Protocol::S7comm.decode_request(&bytes).unwrap(), write);
    }

    #[test]
    fn s7_exceptions_map_to_item_codes_and_header_errors() {
        let id = RequestId::S7 { pdu_ref: 4 };
        let read = Request::read(id, Area::Analog, 41, 1);
        for code in [
            ExceptionCode::ILLEGAL_FUNCTION,
            ExceptionCode::ILLEGAL_ADDRESS,
            ExceptionCode::ILLEGAL_VALUE,
            ExceptionCode::SERVER_FAILURE,
        ] {
            let bytes = Protocol::S7comm.encode_response(&read, &Outcome::Exception(code)).unwrap();
            assert_eq!(Protocol::S7comm.interpret_response(&read, &bytes), Ok(Outcome::Exception(code)));
        }
        let write = Request::write(id, Area::Analog, 41, vec![3]);
        let bytes = Protocol::S7comm
            .encode_response(&write, &Outcome::Exception(ExceptionCode::ILLEGAL_ADDRESS))
            .unwrap();
        assert_eq!(*bytes.last().unwrap(), s7::RC_ADDRESS_OUT_OF_RANGE);
    }

    #[test]
    fn transaction_keys_match_between_directions() {
        let req = Request::read(mb(0x1234), Area::Analog, 0, 1);
        let q = Protocol::Modbus.encode_request(&req).unwrap();
        let r = Protocol::Modbus.encode_response(&req, &Outcome::Values(vec![1])).unwrap();
        assert_eq!(Protocol::Modbus.transaction_key(&q), Protocol::Modbus.transaction_key(&r));

        let req = Request::read(RequestId::S7 { pdu_ref: 77 }, Area::Analog, 0, 1);
        let q = Protocol::S7comm.encode_request(&req).unwrap();
        let r = Protocol::S7comm.encode_response(&req, &Outcome::Values(vec![1])).unwrap();
        assert_eq!(Protocol::S7comm.transaction_key(&q), Some(77));
        assert_eq!(Protocol::S7comm.transaction_key(&r), Some(77));
    }
}
