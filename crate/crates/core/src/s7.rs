//! Reduced S7Comm codec: TPKT (RFC 1006) + COTP data TPDU + S7 header,
//! parameter and data sections for read-var, write-var and setup-communication.
//!
//! Frames start at the TPKT version byte, i.e. the whole ISO-on-TCP payload.

use serde::Serialize;
use thiserror::Error;

use crate::hexstr::{self, HexError};

pub const TPKT_VERSION: u8 = 0x03;
pub const TPKT_LEN: usize = 4;
pub const COTP_DATA: [u8; 3] = [0x02, 0xf0, 0x80];
pub const PROTOCOL_ID: u8 = 0x32;

pub const PDU_JOB: u8 = 0x01;
pub const PDU_ACK_DATA: u8 = 0x03;

pub const FN_READ_VAR: u8 = 0x04;
pub const FN_WRITE_VAR: u8 = 0x05;
pub const FN_SETUP: u8 = 0xf0;

pub const AREA_DB: u8 = 0x84;

pub const WL_BIT: u8 = 0x01;
pub const WL_BYTE: u8 = 0x02;
pub const WL_WORD: u8 = 0x04;

/// Data-section transport sizes.
pub const TS_NULL: u8 = 0x00;
pub const TS_BIT: u8 = 0x03;
pub const TS_BYTE: u8 = 0x04;
pub const TS_INT: u8 = 0x05;
pub const TS_OCTET: u8 = 0x09;

pub const RC_SUCCESS: u8 = 0xff;
pub const RC_ADDRESS_OUT_OF_RANGE: u8 = 0x05;
pub const RC_DATA_TYPE_INCONSISTENT: u8 = 0x07;
pub const RC_OBJECT_MISSING: u8 = 0x0a;

const JOB_HEADER_LEN: usize = 10;
const ACK_HEADER_LEN: usize = 12;
const ITEM_LEN: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Layer {
    Tpkt,
    Cotp,
    S7,
}

impl std::fmt::Display for Layer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Layer::Tpkt => "TPKT",
            Layer::Cotp => "COTP",
            Layer::S7 => "S7",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum S7Error {
    #[error(transparent)]
    Hex(#[from] HexError),
    #[error("truncated {0} layer")]
    Truncated(Layer),
    #[error("{layer} length declares {declared} bytes, {actual} present")]
    LengthMismatch { layer: Layer, declared: usize, actual: usize },
    #[error("malformed {layer} field: {detail}")]
    Malformed { layer: Layer, detail: String },
    #[error("unsupported S7 pdu type 0x{0:02x}")]
    UnknownPduType(u8),
    #[error("unsupported S7 function 0x{0:02x}")]
    UnknownFunction(u8),
    #[error("invalid item: {0}")]
    InvalidItem(String),
}

fn malformed(layer: Layer, detail: impl Into<String>) -> S7Error {
    S7Error::Malformed { layer, detail: detail.into() }
}

/// Address of a variable: area, data block, element size and count, and a bit address.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct VarItem {
    pub word_len: u8,
    pub count: u16,
    pub db_number: u16,
    pub area: u8,
    /// Bit address (byte offset * 8 + bit), 24 bits on the wire.
    pub address: u32,
}

/// One entry of the data section. Write jobs carry a return code of 0.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DataItem {
    pub return_code: u8,
    pub transport_size: u8,
    pub data: Vec<u8>,
}

impl DataItem {
    fn length_field(&self) -> Result<u16, S7Error> {
        let bytes = self.data.len();
        let len = match self.transport_size {
            TS_BYTE | TS_INT => bytes * 8,
            TS_NULL | TS_BIT | TS_OCTET => bytes,
            other => return Err(S7Error::InvalidItem(format!("transport size 0x{other:02x}"))),
        };
        u16::try_from(len).map_err(|_| S7Error::InvalidItem(format!("{bytes} data bytes")))
    }

    fn byte_len(transport_size: u8, length: u16) -> Result<usize, S7Error> {
        match transport_size {
            TS_BYTE | TS_INT => {
                if length % 8 != 0 {
                    return Err(malformed(Layer::S7, format!("bit length {length} not whole bytes")));
                }
                Ok(length as usize / 8)
            }
            TS_NULL | TS_BIT | TS_OCTET => Ok(length as usize),
            other => Err(malformed(Layer::S7, format!("transport size 0x{other:02x}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SetupComm {
    pub max_amq_calling: u16,
    pub max_amq_called: u16,
    pub pdu_length: u16,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "function", rename_all = "snake_case")]
pub enum JobParam {
    ReadVar { items: Vec<VarItem> },
    WriteVar { items: Vec<VarItem>, data: Vec<DataItem> },
    Setup(SetupComm),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "function", rename_all = "snake_case")]
pub enum AckParam {
    /// Header-level error replies carry no parameter section.
    None,
    ReadVar { data: Vec<DataItem> },
    WriteVar { return_codes: Vec<u8> },
    Setup(SetupComm),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "pdu_type", rename_all = "snake_case")]
pub enum S7Body {
    Job(JobParam),
    AckData { error_class: u8, error_code: u8, param: AckParam },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct S7Frame {
    pub pdu_ref: u16,
    pub body: S7Body,
}

impl S7Frame {
    pub fn is_error(&self) -> bool {
        matches!(self.body, S7Body::AckData { error_class, .. } if error_class != 0)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, S7Error> {
        let (pdu_type, params, data) = match &self.body {
            S7Body::Job(job) => {
                let (p, d) = encode_job(job)?;
                (PDU_JOB, p, d)
            }
            S7Body::AckData { param, .. } => {
                let (p, d) = encode_ack(param)?;
                (PDU_ACK_DATA, p, d)
            }
        };
        let header_len = if pdu_type == PDU_JOB { JOB_HEADER_LEN } else { ACK_HEADER_LEN };
        let total = TPKT_LEN + COTP_DATA.len() + header_len + params.len() + data.len();
        let total = u16::try_from(total).map_err(|_| S7Error::InvalidItem("frame too long".into()))?;

        let mut out = Vec::with_capacity(total as usize);
        out.extend_from_slice(&[TPKT_VERSION, 0x00]);
        out.extend_from_slice(&total.to_be_bytes());
        out.extend_from_slice(&COTP_DATA);
        out.extend_from_slice(&[PROTOCOL_ID, pdu_type, 0x00, 0x00]);
        out.extend_from_slice(&self.pdu_ref.to_be_bytes());
        out.extend_from_slice(&(params.len() as u16).to_be_bytes());
        out.extend_from_slice(&(data.len() as u16).to_be_bytes());
        if let S7Body::AckData { error_class, error_code, .. } = &self.body {
            out.extend_from_slice(&[*error_class, *error_code]);
        }
        out.extend_from_slice(&params);
        out.extend_from_slice(&data);
        Ok(out)
    }

    pub fn to_hex(&self) -> Result<String, S7Error> {
        self.to_bytes().map(|b| hexstr::encode(&b))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<S7Frame, S7Error> {
        let payload = strip_tpkt(bytes)?;
        if payload.len() < COTP_DATA.len() {
            return Err(S7Error::Truncated(Layer::Cotp));
        }
        if payload[..3] != COTP_DATA {
            return Err(malformed(Layer::Cotp, format!("expected data TPDU, found {:02x?}", &payload[..3])));
        }
        decode_pdu(&payload[3..])
    }
}

pub fn encode_s7(frame: &S7Frame) -> Result<String, S7Error> {
    frame.to_hex()
}

fn decode_pdu(s7: &[u8]) -> Result<S7Frame, S7Error> {
    if s7.len() < JOB_HEADER_LEN {
        return Err(S7Error::Truncated(Layer::S7));
    }
    if s7[0] != PROTOCOL_ID {
        return Err(malformed(Layer::S7, format!("protocol id 0x{:02x}", s7[0])));
    }
    let pdu_type = s7[1];
    if s7[2] != 0 || s7[3] != 0 {
        return Err(malformed(Layer::S7, "reserved bytes not zero"));
    }
    let pdu_ref = u16::from_be_bytes([s7[4], s7[5]]);
    let param_len = u16::from_be_bytes([s7[6], s7[7]]) as usize;
    let data_len = u16::from_be_bytes([s7[8], s7[9]]) as usize;
    let header_len = match pdu_type {
        PDU_JOB => JOB_HEADER_LEN,
        PDU_ACK_DATA => ACK_HEADER_LEN,
        other => return Err(S7Error::UnknownPduType(other)),
    };
    if s7.len() < header_len {
        return Err(S7Error::Truncated(Layer::S7));
    }
    let declared = header_len + param_len + data_len;
    if declared != s7.len() {
        return Err(S7Error::LengthMismatch { layer: Layer::S7, declared, actual: s7.len() });
    }
    let params = &s7[header_len..header_len + param_len];
    let data = &s7[header_len + param_len..];

    let body = if pdu_type == PDU_JOB {
        S7Body::Job(decode_job(params, data)?)
    } else {
        S7Body::AckData { error_class: s7[10], error_code: s7[11], param: decode_ack(params, data)? }
    };
    Ok(S7Frame { pdu_ref, body })
}

/// Decodes a full hex frame starting at the TPKT header.
pub fn decode_s7(text: &str) -> Result<S7Frame, S7Error> {
    S7Frame::from_bytes(&hexstr::decode(text)?)
}

fn strip_tpkt(bytes: &[u8]) -> Result<&[u8], S7Error> {
    if bytes.len() < TPKT_LEN {
        return Err(S7Error::Truncated(Layer::Tpkt));
    }
    if bytes[0] != TPKT_VERSION || bytes[1] != 0 {
        return Err(malformed(Layer::Tpkt, format!("version {:02x} reserved {:02x}", bytes[0], bytes[1])));
    }
    let declared = u16::from_be_bytes([bytes[2], bytes[3]]) as usize;
    if declared > bytes.len() {
        return Err(S7Error::Truncated(Layer::Tpkt));
    }
    if declared != bytes.len() {
        return Err(S7Error::LengthMismatch { layer: Layer::Tpkt, declared, actual: bytes.len() });
    }
    Ok(&bytes[TPKT_LEN..])
}

/// Total frame length announced by a TPKT header, once four bytes are available.
pub fn frame_len(prefix: &[u8]) -> Option<usize> {
    if prefix.len() < TPKT_LEN {
        return None;
    }
    Some(u16::from_be_bytes([prefix[2], prefix[3]]) as usize)
}

fn check_items(items: &[VarItem]) -> Result<(), S7Error> {
    if items.is_empty() {
        return Err(S7Error::InvalidItem("item list is empty".into()));
    }
    if items.len() > u8::MAX as usize {
        return Err(S7Error::InvalidItem(format!("{} items", items.len())));
    }
    for item in items {
        if item.address >= 1 << 24 {
            return Err(S7Error::InvalidItem(format!("address {} exceeds 24 bits", item.address)));
        }
        if item.count == 0 {
            return Err(S7Error::InvalidItem("zero element count".into()));
        }
    }
    Ok(())
}

fn push_item(out: &mut Vec<u8>, item: &VarItem) {
    out.extend_from_slice(&[0x12, 0x0a, 0x10, item.word_len]);
    out.extend_from_slice(&item.count.to_be_bytes());
    out.extend_from_slice(&item.db_number.to_be_bytes());
    out.push(item.area);
    out.extend_from_slice(&item.address.to_be_bytes()[1..]);
}

fn push_data_items(out: &mut Vec<u8>, items: &[DataItem]) -> Result<(), S7Error> {
    for (i, item) in items.iter().enumerate() {
        out.push(item.return_code);
        out.push(item.transport_size);
        out.extend_from_slice(&item.length_field()?.to_be_bytes());
        out.extend_from_slice(&item.data);
        if item.data.len() % 2 == 1 && i + 1 < items.len() {
            out.push(0);
        }
    }
    Ok(())
}

fn push_setup(out: &mut Vec<u8>, setup: &SetupComm) {
    out.extend_from_slice(&[FN_SETUP, 0x00]);
    out.extend_from_slice(&setup.max_amq_calling.to_be_bytes());
    out.extend_from_slice(&setup.max_amq_called.to_be_bytes());
    out.extend_from_slice(&setup.pdu_length.to_be_bytes());
}

fn encode_job(job: &JobParam) -> Result<(Vec<u8>, Vec<u8>), S7Error> {
    let mut params = Vec::new();
    let mut data = Vec::new();
    match job {
        JobParam::ReadVar { items } => {
            check_items(items)?;
            params.extend_from_slice(&[FN_READ_VAR, items.len() as u8]);
            items.iter().for_each(|i| push_item(&mut params, i));
        }
        JobParam::WriteVar { items, data: values } => {
            check_items(items)?;
            if values.len() != items.len() {
                return Err(S7Error::InvalidItem(format!(
                    "{} items but {} data entries",
                    items.len(),
                    values.len()
                )));
            }
            params.extend_from_slice(&[FN_WRITE_VAR, items.len() as u8]);
            items.iter().for_each(|i| push_item(&mut params, i));
            push_data_items(&mut data, values)?;
        }
        JobParam::Setup(setup) => push_setup(&mut params, setup),
    }
    Ok((params, data))
}

fn encode_ack(param: &AckParam) -> Result<(Vec<u8>, Vec<u8>), S7Error> {
    let mut params = Vec::new();
    let mut data = Vec::new();
    match param {
        AckParam::None => {}
        AckParam::ReadVar { data: items } => {
            if items.is_empty() || items.len() > u8::MAX as usize {
                return Err(S7Error::InvalidItem(format!("{} read results", items.len())));
            }
            params.extend_from_slice(&[FN_READ_VAR, items.len() as u8]);
            push_data_items(&mut data, items)?;
        }
        AckParam::WriteVar { return_codes } => {
            if return_codes.is_empty() || return_codes.len() > u8::MAX as usize {
                return Err(S7Error::InvalidItem(format!("{} write results", return_codes.len())));
            }
            params.extend_from_slice(&[FN_WRITE_VAR, return_codes.len() as u8]);
            data.extend_from_slice(return_codes);
        }
        AckParam::Setup(setup) => push_setup(&mut params, setup),
    }
    Ok((params, data))
}

fn decode_items(params: &[u8]) -> Result<Vec<VarItem>, S7Error> {
    if params.len() < 2 {
        return Err(S7Error::Truncated(Layer::S7));
    }
    let count = params[1] as usize;
    let body = &params[2..];
    if body.len() != count * ITEM_LEN {
        return Err(S7Error::LengthMismatch { layer: Layer::S7, declared: count * ITEM_LEN, actual: body.len() });
    }
    let items: Vec<VarItem> = body
        .chunks_exact(ITEM_LEN)
        .map(|c| {
            if c[0] != 0x12 || c[1] != 0x0a || c[2] != 0x10 {
                return Err(S7Error::InvalidItem(format!("variable spec {:02x?}", &c[..3])));
            }
            Ok(VarItem {
                word_len: c[3],
                count: u16::from_be_bytes([c[4], c[5]]),
                db_number: u16::from_be_bytes([c[6], c[7]]),
                area: c[8],
                address: u32::from_be_bytes([0, c[9], c[10], c[11]]),
            })
        })
        .collect::<Result<_, _>>()?;
    check_items(&items)?;
    Ok(items)
}

fn decode_data_items(data: &[u8], count: usize) -> Result<Vec<DataItem>, S7Error> {
    let mut items = Vec::with_capacity(count);
    let mut at = 0;
    for i in 0..count {
        if data.len() < at + 4 {
            return Err(S7Error::Truncated(Layer::S7));
        }
        let return_code = data[at];
        let transport_size = data[at + 1];
        let length = u16::from_be_bytes([data[at + 2], data[at + 3]]);
        let n = DataItem::byte_len(transport_size, length)?;
        at += 4;
        if data.len() < at + n {
            return Err(S7Error::Truncated(Layer::S7));
        }
        items.push(DataItem { return_code, transport_size, data: data[at..at + n].to_vec() });
        at += n;
        if n % 2 == 1 && i + 1 < count {
            if data.get(at) != Some(&0) {
                return Err(malformed(Layer::S7, "missing fill byte"));
            }
            at += 1;
        }
    }
    if at != data.len() {
        return Err(S7Error::LengthMismatch { layer: Layer::S7, declared: at, actual: data.len() });
    }
    Ok(items)
}

fn decode_setup(params: &[u8]) -> Result<SetupComm, S7Error> {
    if params.len() != 8 || params[1] != 0 {
        return Err(malformed(Layer::S7, "setup communication parameter"));
    }
    Ok(SetupComm {
        max_amq_calling: u16::from_be_bytes([params[2], params[3]]),
        max_amq_called: u16::from_be_bytes([params[4], params[5]]),
        pdu_length: u16::from_be_bytes([params[6], params[7]]),
    })
}

fn decode_job(params: &[u8], data: &[u8]) -> Result<JobParam, S7Error> {
    let function = *params.first().ok_or(S7Error::Truncated(Layer::S7))?;
    match function {
        FN_READ_VAR => {
            let items = decode_items(params)?;
            if !data.is_empty() {
                return Err(malformed(Layer::S7, "read job with data section"));
            }
            Ok(JobParam::ReadVar { items })
        }
        FN_WRITE_VAR => {
            let items = decode_items(params)?;
            let values = decode_data_items(data, items.len())?;
            if values.iter().any(|v| v.return_code != 0) {
                return Err(malformed(Layer::S7, "write data reserved byte not zero"));
            }
            Ok(JobParam::WriteVar { items, data: values })
        }
        FN_SETUP => {
            if !data.is_empty() {
                return Err(malformed(Layer::S7, "setup job with data section"));
            }
            Ok(JobParam::Setup(decode_setup(params)?))
        }
        other => Err(S7Error::UnknownFunction(other)),
    }
}

fn decode_ack(params: &[u8], data: &[u8]) -> Result<AckParam, S7Error> {
    let Some(&function) = params.first() else {
        if !data.is_empty() {
            return Err(malformed(Layer::S7, "data section without parameters"));
        }
        return Ok(AckParam::None);
    };
    match function {
        FN_READ_VAR | FN_WRITE_VAR => {
            if params.len() != 2 {
                return Err(S7Error::LengthMismatch { layer: Layer::S7, declared: 2, actual: params.len() });
            }
            let count = params[1] as usize;
            if count == 0 {
                return Err(S7Error::InvalidItem("zero result items".into()));
            }
            if function == FN_READ_VAR {
                Ok(AckParam::ReadVar { data: decode_data_items(data, count)? })
            } else {
                if data.len() != count {
                    return Err(S7Error::LengthMismatch { layer: Layer::S7, declared: count, actual: data.len() });
                }
                Ok(AckParam::WriteVar { return_codes: data.to_vec() })
            }
        }
        FN_SETUP => {
            if !data.is_empty() {
                return Err(malformed(Layer::S7, "setup ack with data section"));
            }
            Ok(AckParam::Setup(decode_setup(params)?))
        }
        other => Err(S7Error::UnknownFunction(other)),
    }
}

/// COTP TPDU kinds seen on an ISO-on-TCP connection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tpdu {
    Data,
    ConnectRequest,
    ConnectConfirm,
    Other(u8),
}

pub fn classify(bytes: &[u8]) -> Option<Tpdu> {
    let code = *bytes.get(5)?;
    Some(match code & 0xf0 {
        0xf0 => Tpdu::Data,
        0xe0 => Tpdu::ConnectRequest,
        0xd0 => Tpdu::ConnectConfirm,
        _ => Tpdu::Other(code),
    })
}

/// Scripted connection confirm for a COTP connection request: same
/// variable part, references swapped, class 0.
pub fn connect_confirm(request: &[u8]) -> Option<Vec<u8>> {
    if classify(request)? != Tpdu::ConnectRequest || request.len() < 11 {
        return None;
    }
    let li = request[4] as usize;
    if request.len() != TPKT_LEN + 1 + li {
        return None;
    }
    let mut out = request.to_vec();
    out[5] = 0xd0;
    // dst ref <- caller's src ref, src ref <- ours
    out[6] = request[8];
    out[7] = request[9];
    out[8] = 0x00;
    out[9] = 0x01;
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn db_read(pdu_ref: u16) -> S7Frame {
        S7Frame {
            pdu_ref,
            body: S7Body::Job(JobParam::ReadVar {
                items: vec![VarItem { word_len: WL_BYTE, count: 2, db_number: 1, area: AREA_DB, address: 0 }],
            }),
        }
    }

    #[test]
    fn read_job_matches_reference_client_template() {
        // Byte layout used by a reference S7 client for a 2-byte DB1 read at offset 0
        // with PDU reference 0x0500.
        let expected = "0300001f02f080320100000500000e00000401120a10020002000184000000";
        assert_eq!(db_read(0x0500).to_hex().unwrap(), expected);
        assert_eq!(decode_s7(expected).unwrap(), db_read(0x0500));
    }

    #[test]
    fn read_ack_layout() {
        let ack = S7Frame {
            pdu_ref: 0x0500,
            body: S7Body::AckData {
                error_class: 0,
                error_code: 0,
                param: AckParam::ReadVar {
                    data: vec![DataItem { return_code: RC_SUCCESS, transport_size: TS_BYTE, data: vec![0x12, 0x34] }],
                },
            },
        };
        let bytes = ack.to_bytes().unwrap();
        // Item return code sits 14 bytes into the S7 part, payload at 18.
        assert_eq!(bytes[7 + 14], RC_SUCCESS);
        assert_eq!(&bytes[7 + 18..], &[0x12, 0x34]);
        assert_eq!(S7Frame::from_bytes(&bytes).unwrap(), ack);
    }

    #[test]
    fn setup_ack_is_27_bytes() {
        let ack = S7Frame {
            pdu_ref: 0x0400,
            body: S7Body::AckData {
                error_class: 0,
                error_code: 0,
                param: AckParam::Setup(SetupComm { max_amq_calling: 1, max_amq_called: 1, pdu_length: 480 }),
            },
        };
        assert_eq!(ack.to_bytes().unwrap().len(), 27);
    }

    #[test]
    fn write_with_zero_items_is_invalid() {
        let frame = S7Frame { pdu_ref: 1, body: S7Body::Job(JobParam::WriteVar { items: vec![], data: vec![] }) };
        assert!(matches!(frame.to_bytes(), Err(S7Error::InvalidItem(_))));
    }

    #[test]
    fn truncated_tpkt() {
        assert_eq!(S7Frame::from_bytes(&[0x03, 0x00]), Err(S7Error::Truncated(Layer::Tpkt)));
        let mut bytes = db_read(1).to_bytes().unwrap();
        bytes.pop();
        assert_eq!(S7Frame::from_bytes(&bytes), Err(S7Error::Truncated(Layer::Tpkt)));
    }

    #[test]
    fn bad_cotp_names_layer() {
        let mut bytes = db_read(1).to_bytes().unwrap();
        bytes[5] = 0xe0;
        assert!(matches!(S7Frame::from_bytes(&bytes), Err(S7Error::Malformed { layer: Layer::Cotp, .. })));
    }

    #[test]
    fn error_ack_is_a_frame_not_a_codec_failure() {
        // ack_data, error class 0x85, no parameters
        let bytes = hexstr::decode("0300001302f080320300000007000000008500").unwrap();
        let frame = S7Frame::from_bytes(&bytes).unwrap();
        assert!(frame.is_error());
        assert_eq!(frame.body, S7Body::AckData { error_class: 0x85, error_code: 0, param: AckParam::None });
        assert_eq!(frame.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn multi_item_write_pads_odd_data() {
        let item = VarItem { word_len: WL_BYTE, count: 1, db_number: 2, area: AREA_DB, address: 8 };
        let frame = S7Frame {
            pdu_ref: 9,
            body: S7Body::Job(JobParam::WriteVar {
                items: vec![item, item],
                data: vec![
                    DataItem { return_code: 0, transport_size: TS_BYTE, data: vec![1] },
                    DataItem { return_code: 0, transport_size: TS_BYTE, data: vec![0] },
                ],
            }),
        };
        let bytes = frame.to_bytes().unwrap();
        // 4 + 1 data + 1 fill, then 4 + 1 data
        assert_eq!(u16::from_be_bytes([bytes[15], bytes[16]]), 11);
        assert_eq!(S7Frame::from_bytes(&bytes).unwrap(), frame);
    }

    #[test]
    fn connect_confirm_swaps_references() {
        let cr = hexstr::decode("0300001611e00000000100c0010ac1020100c2020102").unwrap();
        let cc = connect_confirm(&cr).unwrap();
        assert_eq!(classify(&cc), Some(Tpdu::ConnectConfirm));
        assert_eq!(&cc[6..10], &[0x00, 0x01, 0x00, 0x01]);
        assert_eq!(cc.len(), cr.len());
    }
}
