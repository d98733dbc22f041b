//! Modbus/TCP framing for the read/write function set 1, 3, 5, 6, 15 and 16.
//!
//! A frame is the 7-byte MBAP header followed by the PDU. Requests and
//! responses of the same function code share a code point, so decoding needs
//! to know which direction the bytes travelled; [`decode`] guesses from the
//! shape when the caller does not know.

use serde::Serialize;
use thiserror::Error;

use crate::hexstr::{self, HexError};

pub const MBAP_LEN: usize = 7;
pub const EXCEPTION_FLAG: u8 = 0x80;

pub const MAX_READ_COILS: u16 = 2000;
pub const MAX_READ_REGISTERS: u16 = 125;
pub const MAX_WRITE_COILS: u16 = 1968;
pub const MAX_WRITE_REGISTERS: u16 = 123;

pub const COIL_ON: u16 = 0xff00;
pub const COIL_OFF: u16 = 0x0000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModbusError {
    #[error(transparent)]
    Hex(#[from] HexError),
    #[error("frame truncated in {field}")]
    Truncated { field: &'static str },
    #[error("protocol id must be 0, found {0}")]
    BadProtocolId(u16),
    #[error("unsupported function code 0x{0:02x}")]
    UnknownFunction(u8),
    #[error("length field declares {declared} bytes but {actual} follow it")]
    LengthMismatch { declared: usize, actual: usize },
    #[error("invalid pdu: {0}")]
    InvalidPdu(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[repr(u8)]
pub enum FunctionCode {
    ReadCoils = 0x01,
    ReadHoldingRegisters = 0x03,
    WriteSingleCoil = 0x05,
    WriteSingleRegister = 0x06,
    WriteMultipleCoils = 0x0f,
    WriteMultipleRegisters = 0x10,
}

impl FunctionCode {
    pub const ALL: [FunctionCode; 6] = [
        FunctionCode::ReadCoils,
        FunctionCode::WriteSingleCoil,
        FunctionCode::WriteMultipleCoils,
        FunctionCode::ReadHoldingRegisters,
        FunctionCode::WriteSingleRegister,
        FunctionCode::WriteMultipleRegisters,
    ];

    pub fn from_u8(code: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|f| *f as u8 == code)
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    /// Coil functions pack eight points per byte; register functions use 16-bit words.
    pub fn is_digital(self) -> bool {
        matches!(
            self,
            FunctionCode::ReadCoils | FunctionCode::WriteSingleCoil | FunctionCode::WriteMultipleCoils
        )
    }

    fn is_read(self) -> bool {
        matches!(self, FunctionCode::ReadCoils | FunctionCode::ReadHoldingRegisters)
    }

    fn is_single_write(self) -> bool {
        matches!(self, FunctionCode::WriteSingleCoil | FunctionCode::WriteSingleRegister)
    }

    /// Bytes needed to carry `quantity` points of this function's data type.
    pub fn byte_count(self, quantity: u16) -> usize {
        if self.is_digital() {
            (quantity as usize).div_ceil(8)
        } else {
            quantity as usize * 2
        }
    }

    fn max_quantity(self) -> u16 {
        match self {
            FunctionCode::ReadCoils => MAX_READ_COILS,
            FunctionCode::ReadHoldingRegisters => MAX_READ_REGISTERS,
            FunctionCode::WriteMultipleCoils => MAX_WRITE_COILS,
            FunctionCode::WriteMultipleRegisters => MAX_WRITE_REGISTERS,
            FunctionCode::WriteSingleCoil | FunctionCode::WriteSingleRegister => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct MbapHeader {
    pub transaction_id: u16,
    pub protocol_id: u16,
    /// Bytes following the length field: unit id plus the PDU.
    pub length: u16,
    pub unit_id: u8,
}

impl MbapHeader {
    /// Header with `length` left at zero; [`Frame::to_bytes`] fills it in.
    pub fn new(transaction_id: u16, unit_id: u8) -> Self {
        MbapHeader { transaction_id, protocol_id: 0, length: 0, unit_id }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModbusPdu {
    ReadRequest { function: FunctionCode, address: u16, quantity: u16 },
    /// `values` is the raw data field; its length is the byte count.
    ReadResponse { function: FunctionCode, values: Vec<u8> },
    /// Request and its echo response have the same layout.
    WriteSingle { function: FunctionCode, address: u16, value: u16 },
    WriteMultiple { function: FunctionCode, address: u16, quantity: u16, values: Vec<u8> },
    WriteAck { function: FunctionCode, address: u16, quantity: u16 },
    Exception { function: FunctionCode, code: u8 },
}

impl ModbusPdu {
    pub fn function(&self) -> FunctionCode {
        match self {
            ModbusPdu::ReadRequest { function, .. }
            | ModbusPdu::ReadResponse { function, .. }
            | ModbusPdu::WriteSingle { function, .. }
            | ModbusPdu::WriteMultiple { function, .. }
            | ModbusPdu::WriteAck { function, .. }
            | ModbusPdu::Exception { function, .. } => *function,
        }
    }

    /// The function code byte as it appears on the wire.
    pub fn wire_code(&self) -> u8 {
        match self {
            ModbusPdu::Exception { function, .. } => function.code() | EXCEPTION_FLAG,
            other => other.function().code(),
        }
    }

    fn validate(&self) -> Result<(), ModbusError> {
        let invalid = |msg: String| Err(ModbusError::InvalidPdu(msg));
        match self {
            ModbusPdu::ReadRequest { function, quantity, .. } => {
                if !function.is_read() {
                    return invalid(format!("{function:?} is not a read function"));
                }
                check_quantity(*function, *quantity)
            }
            ModbusPdu::ReadResponse { function, values } => {
                if !function.is_read() {
                    return invalid(format!("{function:?} is not a read function"));
                }
                if values.is_empty() || values.len() > 250 {
                    return invalid(format!("byte count {} out of range", values.len()));
                }
                if !function.is_digital() && values.len() % 2 != 0 {
                    return invalid(format!("odd register byte count {}", values.len()));
                }
                Ok(())
            }
            ModbusPdu::WriteSingle { function, .. } => {
                if !function.is_single_write() {
                    return invalid(format!("{function:?} is not a single write"));
                }
                Ok(())
            }
            ModbusPdu::WriteMultiple { function, quantity, values, .. } => {
                if !matches!(
                    function,
                    FunctionCode::WriteMultipleCoils | FunctionCode::WriteMultipleRegisters
                ) {
                    return invalid(format!("{function:?} is not a multiple write"));
                }
                check_quantity(*function, *quantity)?;
                let expected = function.byte_count(*quantity);
                if values.len() != expected {
                    return invalid(format!(
                        "byte count {} inconsistent with quantity {quantity} (expected {expected})",
                        values.len()
                    ));
                }
                Ok(())
            }
            ModbusPdu::WriteAck { function, quantity, .. } => {
                if !matches!(
                    function,
                    FunctionCode::WriteMultipleCoils | FunctionCode::WriteMultipleRegisters
                ) {
                    return invalid(format!("{function:?} is not a multiple write"));
                }
                check_quantity(*function, *quantity)
            }
            ModbusPdu::Exception { code, .. } => {
                if *code == 0 {
                    return invalid("exception code 0".into());
                }
                Ok(())
            }
        }
    }

    fn write_to(&self, out: &mut Vec<u8>) {
        out.push(self.wire_code());
        match self {
            ModbusPdu::ReadRequest { address, quantity, .. }
            | ModbusPdu::WriteAck { address, quantity, .. } => {
                out.extend_from_slice(&address.to_be_bytes());
                out.extend_from_slice(&quantity.to_be_bytes());
            }
            ModbusPdu::ReadResponse { values, .. } => {
                out.push(values.len() as u8);
                out.extend_from_slice(values);
            }
            ModbusPdu::WriteSingle { address, value, .. } => {
                out.extend_from_slice(&address.to_be_bytes());
                out.extend_from_slice(&value.to_be_bytes());
            }
            ModbusPdu::WriteMultiple { address, quantity, values, .. } => {
                out.extend_from_slice(&address.to_be_bytes());
                out.extend_from_slice(&quantity.to_be_bytes());
                out.push(values.len() as u8);
                out.extend_from_slice(values);
            }
            ModbusPdu::Exception { code, .. } => out.push(*code),
        }
    }
}

fn check_quantity(function: FunctionCode, quantity: u16) -> Result<(), ModbusError> {
    if quantity == 0 || quantity > function.max_quantity() {
        return Err(ModbusError::InvalidPdu(format!(
            "quantity {quantity} outside 1..={} for {function:?}",
            function.max_quantity()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Request,
    Response,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Frame {
    pub header: MbapHeader,
    pub pdu: ModbusPdu,
}

impl Frame {
    pub fn new(transaction_id: u16, unit_id: u8, pdu: ModbusPdu) -> Self {
        Frame { header: MbapHeader::new(transaction_id, unit_id), pdu }
    }

    /// Serializes the frame, recomputing the MBAP length field.
    pub fn to_bytes(&self) -> Result<Vec<u8>, ModbusError> {
        self.pdu.validate()?;
        let mut pdu = Vec::with_capacity(8);
        self.pdu.write_to(&mut pdu);
        let mut out = Vec::with_capacity(MBAP_LEN + pdu.len());
        out.extend_from_slice(&self.header.transaction_id.to_be_bytes());
        out.extend_from_slice(&0u16.to_be_bytes());
        out.extend_from_slice(&((pdu.len() + 1) as u16).to_be_bytes());
        out.push(self.header.unit_id);
        out.extend_from_slice(&pdu);
        Ok(out)
    }

    pub fn to_hex(&self) -> Result<String, ModbusError> {
        self.to_bytes().map(|b| hexstr::encode(&b))
    }

    pub fn decode_request(bytes: &[u8]) -> Result<Frame, ModbusError> {
        decode_bytes(bytes, Some(Direction::Request))
    }

    pub fn decode_response(bytes: &[u8]) -> Result<Frame, ModbusError> {
        decode_bytes(bytes, Some(Direction::Response))
    }

    pub fn is_exception(&self) -> bool {
        matches!(self.pdu, ModbusPdu::Exception { .. })
    }
}

/// Encodes a header/PDU pair to canonical hex. The header's length field is ignored.
pub fn encode(header: MbapHeader, pdu: ModbusPdu) -> Result<String, ModbusError> {
    Frame { header, pdu }.to_hex()
}

/// Decodes hex of unknown direction. Read responses are preferred only when the
/// byte-count field matches the remaining length exactly.
pub fn decode(text: &str) -> Result<Frame, ModbusError> {
    decode_bytes(&hexstr::decode(text)?, None)
}

/// Splits `bytes` into header and PDU, checking the MBAP invariants.
fn split_mbap(bytes: &[u8]) -> Result<(MbapHeader, &[u8]), ModbusError> {
    if bytes.len() < MBAP_LEN {
        return Err(ModbusError::Truncated { field: "mbap header" });
    }
    let transaction_id = u16::from_be_bytes([bytes[0], bytes[1]]);
    let protocol_id = u16::from_be_bytes([bytes[2], bytes[3]]);
    let length = u16::from_be_bytes([bytes[4], bytes[5]]);
    let unit_id = bytes[6];
    if protocol_id != 0 {
        return Err(ModbusError::BadProtocolId(protocol_id));
    }
    let following = bytes.len() - 6;
    if (length as usize) > following {
        return Err(ModbusError::Truncated { field: "pdu" });
    }
    if (length as usize) < following {
        return Err(ModbusError::LengthMismatch { declared: length as usize, actual: following });
    }
    if length < 2 {
        return Err(ModbusError::Truncated { field: "function code" });
    }
    let header = MbapHeader { transaction_id, protocol_id, length, unit_id };
    Ok((header, &bytes[MBAP_LEN..]))
}

fn word(pdu: &[u8], at: usize) -> u16 {
    u16::from_be_bytes([pdu[at], pdu[at + 1]])
}

fn expect_len(pdu: &[u8], len: usize, field: &'static str) -> Result<(), ModbusError> {
    if pdu.len() < len {
        Err(ModbusError::Truncated { field })
    } else if pdu.len() > len {
        Err(ModbusError::InvalidPdu(format!("{} trailing bytes after {field}", pdu.len() - len)))
    } else {
        Ok(())
    }
}

fn decode_bytes(bytes: &[u8], direction: Option<Direction>) -> Result<Frame, ModbusError> {
    let (header, pdu) = split_mbap(bytes)?;
    let raw = pdu[0];
    let function =
        FunctionCode::from_u8(raw & !EXCEPTION_FLAG).ok_or(ModbusError::UnknownFunction(raw))?;

    let body = if raw & EXCEPTION_FLAG != 0 {
        if direction == Some(Direction::Request) {
            return Err(ModbusError::InvalidPdu("exception code in a request".into()));
        }
        expect_len(pdu, 2, "exception code")?;
        ModbusPdu::Exception { function, code: pdu[1] }
    } else if function.is_single_write() {
        expect_len(pdu, 5, "write single")?;
        ModbusPdu::WriteSingle { function, address: word(pdu, 1), value: word(pdu, 3) }
    } else if function.is_read() {
        let looks_like_response = pdu.len() >= 2 && pdu[1] as usize == pdu.len() - 2;
        let as_response = match direction {
            Some(Direction::Response) => true,
            Some(Direction::Request) => false,
            None => looks_like_response && (function.is_digital() || pdu[1] % 2 == 0),
        };
        if as_response {
            if pdu.len() < 2 {
                return Err(ModbusError::Truncated { field: "byte count" });
            }
            expect_len(pdu, 2 + pdu[1] as usize, "read values")?;
            ModbusPdu::ReadResponse { function, values: pdu[2..].to_vec() }
        } else {
            expect_len(pdu, 5, "read request")?;
            ModbusPdu::ReadRequest { function, address: word(pdu, 1), quantity: word(pdu, 3) }
        }
    } else {
        let as_request = match direction {
            Some(d) => d == Direction::Request,
            None => pdu.len() != 5,
        };
        if as_request {
            if pdu.len() < 6 {
                return Err(ModbusError::Truncated { field: "write multiple header" });
            }
            expect_len(pdu, 6 + pdu[5] as usize, "write values")?;
            ModbusPdu::WriteMultiple {
                function,
                address: word(pdu, 1),
                quantity: word(pdu, 3),
                values: pdu[6..].to_vec(),
            }
        } else {
            expect_len(pdu, 5, "write ack")?;
            ModbusPdu::WriteAck { function, address: word(pdu, 1), quantity: word(pdu, 3) }
        }
    };
    body.validate()?;
    Ok(Frame { header, pdu: body })
}

/// Builds the exception response for `request`, echoing its transaction and unit ids.
pub fn make_exception(request: &str, exception_code: u8) -> Result<String, ModbusError> {
    let bytes = hexstr::decode(request).map_err(|e| ModbusError::InvalidRequest(e.to_string()))?;
    let frame =
        Frame::decode_request(&bytes).map_err(|e| ModbusError::InvalidRequest(e.to_string()))?;
    if exception_code == 0 {
        return Err(ModbusError::InvalidRequest("exception codes start at 1".into()));
    }
    exception_for(&frame, exception_code).to_hex()
}

pub fn exception_for(request: &Frame, code: u8) -> Frame {
    Frame::new(
        request.header.transaction_id,
        request.header.unit_id,
        ModbusPdu::Exception { function: request.pdu.function(), code },
    )
}

/// Packs coil states eight per byte, first coil in the least significant bit.
/// Unused high bits of the last byte stay zero.
pub fn pack_bits(bits: &[bool]) -> Vec<u8> {
    let mut out = vec![0u8; bits.len().div_ceil(8)];
    for (i, _) in bits.iter().enumerate().filter(|(_, b)| **b) {
        out[i / 8] |= 1 << (i % 8);
    }
    out
}

pub fn unpack_bits(bytes: &[u8], count: usize) -> Vec<bool> {
    (0..count).map(|i| bytes.get(i / 8).is_some_and(|b| b & (1 << (i % 8)) != 0)).collect()
}

pub fn pack_words(words: &[u16]) -> Vec<u8> {
    words.iter().flat_map(|w| w.to_be_bytes()).collect()
}

pub fn unpack_words(bytes: &[u8]) -> Vec<u16> {
    bytes.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect()
}

/// Stateless function that only inspects the length prefix of a byte stream.
/// Returns the total frame length once the MBAP header is available.
pub fn frame_len(prefix: &[u8]) -> Option<usize> {
    if prefix.len() < 6 {
        return None;
    }
    Some(6 + u16::from_be_bytes([prefix[4], prefix[5]]) as usize)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn read_req(tid: u16, uid: u8, function: FunctionCode, address: u16, quantity: u16) -> Frame {
        Frame::new(tid, uid, ModbusPdu::ReadRequest { function, address, quantity })
    }

    #[test]
    fn encodes_read_holding_request() {
        let f = read_req(1, 1, FunctionCode::ReadHoldingRegisters, 0, 1);
        assert_eq!(f.to_hex().unwrap(), "000100000006010300000001");
    }

    #[test]
    fn encodes_exception() {
        let f = Frame::new(
            0,
            0,
            ModbusPdu::Exception { function: FunctionCode::ReadHoldingRegisters, code: 2 },
        );
        let hex = f.to_hex().unwrap();
        assert_eq!(hex, "000000000003008302");
        assert_eq!(hex.len() / 2, 9);
    }

    #[test]
    fn decodes_read_request() {
        let f = decode("000100000006010300000001").unwrap();
        assert_eq!(f.header.transaction_id, 1);
        assert_eq!(f.header.length, 6);
        assert_eq!(
            f.pdu,
            ModbusPdu::ReadRequest {
                function: FunctionCode::ReadHoldingRegisters,
                address: 0,
                quantity: 1
            }
        );
    }

    #[test]
    fn decode_errors_name_the_field() {
        assert_eq!(decode(""), Err(ModbusError::Truncated { field: "mbap header" }));
        assert_eq!(decode("000100050006010300000001"), Err(ModbusError::BadProtocolId(5)));
        assert_eq!(decode("000100000006010400000001"), Err(ModbusError::UnknownFunction(4)));
        assert_eq!(decode("000100000006012b00000001"), Err(ModbusError::UnknownFunction(0x2b)));
        assert_eq!(decode("0001000000060103000000"), Err(ModbusError::Truncated { field: "pdu" }));
        assert_eq!(
            decode("00010000000601030000000100"),
            Err(ModbusError::LengthMismatch { declared: 6, actual: 7 })
        );
    }

    #[test]
    fn encode_rejects_inconsistent_byte_count() {
        let f = Frame::new(
            1,
            1,
            ModbusPdu::WriteMultiple {
                function: FunctionCode::WriteMultipleRegisters,
                address: 0,
                quantity: 2,
                values: vec![0, 1],
            },
        );
        assert!(matches!(f.to_bytes(), Err(ModbusError::InvalidPdu(_))));
        let zero = read_req(1, 1, FunctionCode::ReadCoils, 0, 0);
        assert!(matches!(zero.to_bytes(), Err(ModbusError::InvalidPdu(_))));
    }

    #[test]
    fn exception_for_out_of_range_read() {
        let req = read_req(7, 1, FunctionCode::ReadHoldingRegisters, 10001, 1).to_hex().unwrap();
        let exc = make_exception(&req, 2).unwrap();
        let f = Frame::decode_response(&hexstr::decode(&exc).unwrap()).unwrap();
        assert_eq!(f.pdu.wire_code(), 0x83);
        assert_eq!(f.header.transaction_id, 7);
        assert_eq!(exc, "000700000003018302");
    }

    #[test]
    fn exception_code_zero_rejected() {
        let req = read_req(1, 1, FunctionCode::ReadHoldingRegisters, 0, 1).to_hex().unwrap();
        assert!(matches!(make_exception(&req, 0), Err(ModbusError::InvalidRequest(_))));
        assert!(matches!(make_exception("zz", 2), Err(ModbusError::InvalidRequest(_))));
    }

    #[test]
    fn exception_for_write_multiple() {
        let req = Frame::new(
            3,
            1,
            ModbusPdu::WriteMultiple {
                function: FunctionCode::WriteMultipleRegisters,
                address: 4,
                quantity: 1,
                values: vec![0x12, 0x34],
            },
        )
        .to_hex()
        .unwrap();
        assert_eq!(req, "000300000009011000040001021234");
        let exc = make_exception(&req, 3).unwrap();
        assert_eq!(exc, "000300000003019003");
    }

    #[test]
    fn bit_packing_is_lsb_first_with_zero_padding() {
        let bits = [true, false, true, true, false, false, false, false, true, true];
        assert_eq!(pack_bits(&bits), vec![0b0000_1101, 0b0000_0011]);
        assert_eq!(unpack_bits(&pack_bits(&bits), bits.len()), bits);
    }

    #[test]
    fn direction_disambiguates_coil_read() {
        // fc1 with address 0x0300 looks like a 3-byte read response.
        let bytes = hexstr::decode("000100000006010103000002").unwrap();
        let req = Frame::decode_request(&bytes).unwrap();
        assert!(matches!(req.pdu, ModbusPdu::ReadRequest { address: 0x0300, .. }));
        let resp = Frame::decode_response(&bytes).unwrap();
        assert!(matches!(resp.pdu, ModbusPdu::ReadResponse { .. }));
    }
}
