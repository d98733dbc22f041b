//! PLC cloning toolkit: protocol codecs, a simulated plant, dataset generation,
//! capture parsing and response-validity metrics.

pub mod capture;
pub mod config;
pub mod dataset;
pub mod hexstr;
pub mod metrics;
pub mod modbus;
pub mod plant;
pub mod protocol;
pub mod s7;
