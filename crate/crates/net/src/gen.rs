//! Dataset generation driver and its output files.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::net::SocketAddr;
use std::path::Path;

use plcmimic_core::capture::{build_context, write_csv, CaptureError, PcapBuilder, Split, split_dataset};
use plcmimic_core::config::ConfigError;
use plcmimic_core::dataset::{
    execute_boundaries, probe_math, probe_process, uniform_x_samples, weighted_x_samples,
    weighted_x_samples_analytic, DatasetError, ProcessProbe, Prober, SamplePair, SamplerConfig, Transport,
};
use plcmimic_core::hexstr;
use plcmimic_core::plant::{eval_block, PlantConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::logsink::{now, InteractionRecord, LogDir, ResponderTag};

#[derive(Debug, Error)]
pub enum GenError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("generation section: {0}")]
    Plan(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Capture(#[from] CaptureError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Generation {
    /// Boundary probing of the protocol surface.
    #[default]
    Boundaries,
    /// Sampled writes and reads against one math block of the plant.
    Math {
        block: usize,
        sampler: SamplerConfig,
        #[serde(default = "yes")]
        weighted: bool,
        /// Use the block's closed-form derivative instead of finite differences.
        #[serde(default)]
        analytic: bool,
    },
    Process { plan: ProcessProbe },
}

fn yes() -> bool {
    true
}

/// Plant configuration plus an optional `generation` section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    #[serde(flatten)]
    pub plant: PlantConfig,
    #[serde(default)]
    pub generation: Generation,
    #[serde(default = "default_ratio")]
    pub val_ratio: f64,
    #[serde(default = "default_ratio")]
    pub test_ratio: f64,
}

fn default_ratio() -> f64 {
    0.1
}

impl GenConfig {
    pub fn from_json(text: &str) -> Result<Self, GenError> {
        let cfg: GenConfig = serde_json::from_str(text).map_err(ConfigError::from)?;
        cfg.plant.validate()?;
        if let Generation::Math { block, .. } = cfg.generation {
            if block >= cfg.plant.blocks.len() {
                return Err(GenError::Plan(format!("block index {block} out of range")));
            }
        }
        Ok(cfg)
    }
}

pub struct Generated {
    /// Every exchange in session order.
    pub pairs: Vec<SamplePair>,
    pub skipped: usize,
}

/// Runs the configured generation against `transport`; `seed` fixes every
/// random choice.
pub fn generate<T: Transport>(transport: T, cfg: &GenConfig, seed: u64) -> Result<Generated, GenError> {
    let protocol = &cfg.plant.protocol;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut prober = Prober::new(transport, protocol);
    let pairs = match &cfg.generation {
        Generation::Boundaries => execute_boundaries(&mut prober, protocol, &mut rng)?,
        Generation::Math { block, sampler, weighted, analytic } => {
            let block = &cfg.plant.blocks[*block];
            let kind = block.kind;
            let xs = match (weighted, analytic) {
                (false, _) => uniform_x_samples(sampler),
                (true, false) => weighted_x_samples(sampler, |x| eval_block(kind, x), &mut rng)?,
                (true, true) => weighted_x_samples_analytic(sampler, |x| kind.derivative(x), &mut rng)?,
            };
            probe_math(&mut prober, block, &xs)?
        }
        Generation::Process { plan } => probe_process(&mut prober, protocol, plan, &mut rng)?,
    };
    Ok(Generated { pairs, skipped: prober.skipped() })
}

/// Writes `pairs.csv` (session order), `dataset.csv` (context windows when
/// `context_len > 0`), the `train/val/test.csv` split, and the exchanges as
/// `capture.jsonl` and `capture.pcap`.
pub fn write_outputs(dir: &Path, cfg: &GenConfig, pairs: &[SamplePair], seed: u64, target: SocketAddr) -> Result<Split<SamplePair>, GenError> {
    fs::create_dir_all(dir)?;
    write_csv(pairs, BufWriter::new(File::create(dir.join("pairs.csv"))?))?;
    let context_len = cfg.plant.protocol.context_len;
    let dataset = if context_len > 0 { build_context(pairs, context_len)? } else { pairs.to_vec() };
    write_csv(&dataset, BufWriter::new(File::create(dir.join("dataset.csv"))?))?;
    let split = split_dataset(&dataset, cfg.val_ratio, cfg.test_ratio, seed);
    for (name, part) in [("train.csv", &split.train), ("val.csv", &split.validation), ("test.csv", &split.test)] {
        write_csv(part, BufWriter::new(File::create(dir.join(name))?))?;
    }

    let client: SocketAddr = ([10, 0, 0, 2], 49152).into();
    let server = match target {
        SocketAddr::V4(_) => target,
        SocketAddr::V6(v6) => ([10, 0, 0, 1], v6.port()).into(),
    };
    let mut pcap = PcapBuilder::new(BufWriter::new(File::create(dir.join("capture.pcap"))?), 1460)?;
    let mut log = BufWriter::new(File::create(dir.join("capture.jsonl"))?);
    for (i, p) in pairs.iter().enumerate() {
        let req = hexstr::decode(&p.source_text).map_err(|e| GenError::Plan(e.to_string()))?;
        let resp = hexstr::decode(&p.target_text).map_err(|e| GenError::Plan(e.to_string()))?;
        pcap.exchange(client, server, &req, &resp)?;
        let seq = i as u64 + 1;
        let ts = now();
        for (dir, hex) in [(LogDir::In, &p.source_text), (LogDir::Out, &p.target_text)] {
            let mut r = InteractionRecord::new(&server.to_string(), 1, seq, dir, hex.clone());
            r.ts = ts.clone();
            if dir == LogDir::Out {
                r.responder = Some(ResponderTag::Oracle);
            }
            writeln!(log, "{}", serde_json::to_string(&r).expect("records serialize"))?;
        }
    }
    pcap.finish().flush()?;
    log.flush()?;
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;
    use plcmimic_core::plant::Plant;

    #[test]
    fn generation_section_defaults_to_boundaries() {
        let cfg = GenConfig::from_json(r#"{"protocol":"modbus","digital_count":40,"analog_count":40}"#).unwrap();
        assert_eq!(cfg.generation, Generation::Boundaries);
        let plant = Plant::new(cfg.plant.clone()).unwrap();
        let out = generate(plant, &cfg, 7).unwrap();
        assert_eq!(out.pairs.len(), 1600);
        assert_eq!(out.skipped, 0);
    }

    #[test]
    fn math_block_index_is_checked() {
        let text = r#"{"protocol":"modbus","digital_count":4,"analog_count":4,
            "generation":{"mode":"math","block":0,"sampler":{"n_samples":10,"x_low":-5,"x_high":5,"mix_ratio":0.2,"power":0.5}}}"#;
        assert!(matches!(GenConfig::from_json(text), Err(GenError::Plan(_))));
    }
}
