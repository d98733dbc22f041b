//! Protocol configuration shared by the plant, the probing client, and the validator.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("cannot parse configuration: {0}")]
    Parse(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Modbus,
    S7comm,
}

impl Protocol {
    pub fn default_port(self) -> u16 {
        match self {
            Protocol::Modbus => 502,
            Protocol::S7comm => 102,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Area {
    Digital,
    Analog,
}

/// Protocol-independent operation, numbered after the Modbus function codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Function {
    ReadDigital = 1,
    ReadAnalog = 3,
    WriteDigital = 5,
    WriteAnalog = 6,
    WriteDigitals = 15,
    WriteAnalogs = 16,
}

impl Function {
    pub const ALL: [Function; 6] = [
        Function::ReadDigital,
        Function::WriteDigital,
        Function::WriteDigitals,
        Function::ReadAnalog,
        Function::WriteAnalog,
        Function::WriteAnalogs,
    ];

    pub fn area(self) -> Area {
        match self {
            Function::ReadDigital | Function::WriteDigital | Function::WriteDigitals => Area::Digital,
            _ => Area::Analog,
        }
    }

    pub fn is_read(self) -> bool {
        matches!(self, Function::ReadDigital | Function::ReadAnalog)
    }

    pub fn read(area: Area) -> Function {
        match area {
            Area::Digital => Function::ReadDigital,
            Area::Analog => Function::ReadAnalog,
        }
    }

    pub fn write(area: Area, multiple: bool) -> Function {
        match (area, multiple) {
            (Area::Digital, false) => Function::WriteDigital,
            (Area::Digital, true) => Function::WriteDigitals,
            (Area::Analog, false) => Function::WriteAnalog,
            (Area::Analog, true) => Function::WriteAnalogs,
        }
    }
}

impl TryFrom<u8> for Function {
    type Error = String;

    fn try_from(code: u8) -> Result<Self, Self::Error> {
        Function::ALL
            .into_iter()
            .find(|f| *f as u8 == code)
            .ok_or_else(|| format!("unsupported function {code}"))
    }
}

impl From<Function> for u8 {
    fn from(f: Function) -> u8 {
        f as u8
    }
}

/// Width of the value tuples written per boundary probe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CombWidth {
    /// One value per addressed element; one pass over widths 1 and 2 yields 144 samples.
    #[default]
    Elem,
    /// Cartesian power `elem + 1`.
    ElemPlusOne,
}

fn default_functions() -> Vec<Function> {
    Function::ALL.to_vec()
}
fn default_max_addr() -> u16 {
    u16::MAX
}
fn default_val_high() -> u16 {
    u16::MAX
}
fn default_m_elem() -> u16 {
    2
}
fn default_dataset_size() -> usize {
    1600
}
fn default_unit_id() -> u8 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub protocol: Protocol,
    #[serde(default = "default_functions")]
    pub functions: Vec<Function>,
    /// Number of active digital points, starting at `addr_low`.
    pub digital_count: u32,
    /// Number of active analog points, starting at `addr_low`.
    pub analog_count: u32,
    #[serde(default)]
    pub addr_low: u16,
    #[serde(default = "default_max_addr")]
    pub max_addr: u16,
    #[serde(default)]
    pub val_low: u16,
    #[serde(default = "default_val_high")]
    pub val_high: u16,
    #[serde(default = "default_m_elem")]
    pub m_elem: u16,
    #[serde(default = "default_dataset_size")]
    pub dataset_size: usize,
    #[serde(default)]
    pub context_len: usize,
    #[serde(default = "default_unit_id")]
    pub unit_id: u8,
    #[serde(default)]
    pub comb_width: CombWidth,
}

impl ProtocolConfig {
    /// Configuration with `points` active digital and analog points and defaults elsewhere.
    pub fn with_points(protocol: Protocol, points: u32) -> Self {
        ProtocolConfig {
            protocol,
            functions: default_functions(),
            digital_count: points,
            analog_count: points,
            addr_low: 0,
            max_addr: default_max_addr(),
            val_low: 0,
            val_high: default_val_high(),
            m_elem: default_m_elem(),
            dataset_size: default_dataset_size(),
            context_len: 0,
            unit_id: default_unit_id(),
            comb_width: CombWidth::Elem,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: ProtocolConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn count(&self, area: Area) -> u32 {
        match area {
            Area::Digital => self.digital_count,
            Area::Analog => self.analog_count,
        }
    }

    /// Highest valid address of `area`, or `None` when the area has no points.
    pub fn addr_high(&self, area: Area) -> Option<u16> {
        let count = self.count(area);
        if count == 0 {
            return None;
        }
        let high = self.addr_low as u32 + count - 1;
        Some(high.min(self.max_addr as u32) as u16)
    }

    pub fn contains(&self, area: Area, address: u16) -> bool {
        self.addr_high(area).is_some_and(|high| address >= self.addr_low && address <= high)
    }

    /// Permitted write values for `area`. Digital points accept only 0 and 1.
    pub fn value_range(&self, area: Area) -> (u16, u16) {
        match area {
            Area::Digital => (0, 1),
            Area::Analog => (self.val_low, self.val_high),
        }
    }

    pub fn supports(&self, function: Function) -> bool {
        self.functions.contains(&function)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.val_low > self.val_high {
            return bad(format!("val_low {} > val_high {}", self.val_low, self.val_high));
        }
        if self.m_elem == 0 {
            return bad("m_elem must be at least 1".into());
        }
        if self.functions.is_empty() {
            return bad("functions list is empty".into());
        }
        if self.addr_low > self.max_addr {
            return bad(format!("addr_low {} > max_addr {}", self.addr_low, self.max_addr));
        }
        for area in [Area::Digital, Area::Analog] {
            let count = self.count(area) as u64;
            if self.addr_low as u64 + count > self.max_addr as u64 + 1 {
                return bad(format!("{area:?} count {count} exceeds the address space"));
            }
        }
        Ok(())
    }
}
