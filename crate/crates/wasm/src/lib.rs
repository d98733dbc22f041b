//! wasm-bindgen exports for the static demo page in `www/`.
//! Every export takes and returns JSON strings; errors surface as JS exceptions.

use plcmimic_core::config::{Protocol, ProtocolConfig};
use plcmimic_core::dataset::{uniform_x_samples, weighted_x_samples, weighted_x_samples_analytic, SamplerConfig};
use plcmimic_core::hexstr;
use plcmimic_core::metrics::{check_rva, score_record};
use plcmimic_core::plant::{eval_block, MathKind, Plant};
use plcmimic_core::s7;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

fn parse_kind(kind: &str) -> Result<MathKind, String> {
    serde_json::from_value(Value::String(kind.to_string())).map_err(|_| format!("unknown block {kind:?}"))
}

fn parse_protocol(name: &str) -> Result<Protocol, String> {
    serde_json::from_value(Value::String(name.to_string())).map_err(|_| format!("unknown protocol {name:?}"))
}

fn counts(xs: &[f64], low: f64, high: f64, bins: usize) -> Vec<u32> {
    let mut h = vec![0u32; bins];
    for x in xs {
        let i = ((x - low) / (high - low) * bins as f64) as usize;
        h[i.min(bins - 1)] += 1;
    }
    h
}

/// Weighted and uniform histograms for one math block. sgn takes the
/// analytic derivative (zero everywhere), the rest a numeric one.
pub fn sampler_histogram_json(kind: &str, sampler: &str, bins: usize, seed: u64) -> Result<String, String> {
    let kind = parse_kind(kind)?;
    let cfg: SamplerConfig = serde_json::from_str(sampler).map_err(|e| e.to_string())?;
    cfg.validate().map_err(|e| e.to_string())?;
    if bins == 0 {
        return Err("bins must be positive".into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weighted = match kind {
        MathKind::Sgn => weighted_x_samples_analytic(&cfg, |x| kind.derivative(x), &mut rng),
        _ => weighted_x_samples(&cfg, |x| eval_block(kind, x), &mut rng),
    }
    .map_err(|e| e.to_string())?;
    let uniform = uniform_x_samples(&cfg);
    let curve: Vec<[f64; 2]> = (0..=200)
        .map(|i| {
            let x = cfg.x_low + (cfg.x_high - cfg.x_low) * i as f64 / 200.0;
            [x, eval_block(kind, x)]
        })
        .collect();
    Ok(json!({
        "x_low": cfg.x_low,
        "x_high": cfg.x_high,
        "weighted": counts(&weighted, cfg.x_low, cfg.x_high, bins),
        "uniform": counts(&uniform, cfg.x_low, cfg.x_high, bins),
        "curve": curve,
    })
    .to_string())
}

/// Decoded view of a request and, optionally, its response.
pub fn inspect_json(protocol: &str, request: &str, response: &str) -> Result<String, String> {
    let protocol = parse_protocol(protocol)?;
    let bytes = hexstr::decode(request).map_err(|e| e.to_string())?;
    let mut out = json!({ "bytes": bytes.len() });
    if protocol == Protocol::S7comm {
        out["tpdu"] = json!(format!("{:?}", s7::classify(&bytes)));
    }
    match protocol.decode_request(&bytes) {
        Ok(req) => {
            out["request"] = json!(req);
            if !response.trim().is_empty() {
                let resp = hexstr::decode(response).map_err(|e| e.to_string())?;
                out["response"] = match protocol.interpret_response(&req, &resp) {
                    Ok(o) => json!(o),
                    Err(v) => json!({ "violation": v, "reason": v.to_string() }),
                };
            }
        }
        Err(e) => out["error"] = json!(e.to_string()),
    }
    Ok(out.to_string())
}

/// BCA, RVA and RVA-eps of `pred` for `request` under `config`. Without a
/// reference one is computed from a fresh plant built from the config.
pub fn validate_json(config: &str, request: &str, pred: &str, reference: &str, eps: &str) -> Result<String, String> {
    let cfg = ProtocolConfig::from_json(config).map_err(|e| e.to_string())?;
    let eps: Vec<u64> = serde_json::from_str(eps).map_err(|e| e.to_string())?;
    let q = hexstr::decode(request).map_err(|e| e.to_string())?;
    let req = cfg.protocol.decode_request(&q).map_err(|e| e.to_string())?;
    let reference = if reference.trim().is_empty() {
        let mut plant = Plant::new(cfg.clone().into()).map_err(|e| e.to_string())?;
        hexstr::encode(&plant.handle_frame(&q).map_err(|e| e.to_string())?)
    } else {
        reference.to_string()
    };
    let score = score_record(&cfg, &req, pred, &reference, &eps);
    let rva = check_rva(&cfg, &req, pred);
    Ok(json!({
        "reference": reference,
        "bca": score.bca,
        "rva": rva.is_ok(),
        "violation": rva.as_ref().err().map(|v| v.to_string()),
        "rva_eps": eps.iter().zip(&score.rva_eps).map(|(e, ok)| json!([e, ok])).collect::<Vec<_>>(),
    })
    .to_string())
}

#[wasm_bindgen]
pub fn sampler_histogram(kind: &str, sampler: &str, bins: usize, seed: u32) -> Result<String, JsValue> {
    sampler_histogram_json(kind, sampler, bins, seed as u64).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn inspect(protocol: &str, request: &str, response: &str) -> Result<String, JsValue> {
    inspect_json(protocol, request, response).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn validate(config: &str, request: &str, pred: &str, reference: &str, eps: &str) -> Result<String, JsValue> {
    validate_json(config, request, pred, reference, eps).map_err(|e| JsValue::from_str(&e))
}

#[cfg(test)]
mod tests {
    use super::*;

    const SIGMOID: &str = r#"{"n_samples":2000,"x_low":-10,"x_high":10,"mix_ratio":0.2,"power":0.5}"#;

    #[test]
    fn histograms_hold_every_sample() {
        let v: Value = serde_json::from_str(&sampler_histogram_json("sigmoid", SIGMOID, 20, 1).unwrap()).unwrap();
        let total = |k: &str| v[k].as_array().unwrap().iter().map(|c| c.as_u64().unwrap()).sum::<u64>();
        assert_eq!(total("weighted"), 2000);
        assert_eq!(total("uniform"), 2000);
        // the middle bins carry more weighted than uniform mass
        assert!(v["weighted"][10].as_u64() > v["uniform"][10].as_u64());
        assert!(sampler_histogram_json("tanh", SIGMOID, 20, 1).is_err());
    }

    #[test]
    fn inspector_flags_wrong_exception_shape() {
        let v: Value = serde_json::from_str(&inspect_json("modbus", "000100000006010300280001", "000100000003018302").unwrap()).unwrap();
        assert_eq!(v["request"]["address"], 40);
        assert_eq!(v["response"]["exception"], 2);
        let v: Value = serde_json::from_str(&inspect_json("modbus", "00010000000601030028", "").unwrap()).unwrap();
        assert!(v["error"].is_string());
    }

    #[test]
    fn validator_computes_its_own_reference() {
        let cfg = r#"{"protocol":"modbus","digital_count":40,"analog_count":40}"#;
        let v: Value =
            serde_json::from_str(&validate_json(cfg, "000100000006010300280001", "000100000003018302", "", "[0,5]").unwrap()).unwrap();
        assert_eq!(v["reference"], "000100000003018302");
        assert_eq!(v["bca"], true);
        assert_eq!(v["rva"], true);
        let v: Value =
            serde_json::from_str(&validate_json(cfg, "000100000006010300280001", "00010000000501030200ff", "", "[0]").unwrap()).unwrap();
        assert_eq!(v["rva"], false);
        assert_eq!(v["violation"], "normal response where an exception is expected");
    }
}
