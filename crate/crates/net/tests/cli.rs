use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use plcmimic_core::capture::read_csv;
use plcmimic_core::metrics::{OracleResponder, Responder};
use plcmimic_core::plant::PlantConfig;
use plcmimic_net::gen::GenConfig;
use plcmimic_net::logsink::LogSender;
use plcmimic_net::model::{serve_model, ModelFn};
use plcmimic_net::server::{self, ServeConfig};
use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_plcmimic"))
}

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn ok(out: Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn rt() -> tokio::runtime::Runtime {
    tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build().unwrap()
}

fn gen_against_plant(rt: &tokio::runtime::Runtime, cfg_name: &str, dir: &Path) -> PlantConfig {
    let cfg = GenConfig::from_json(&std::fs::read_to_string(config(cfg_name)).unwrap()).unwrap();
    let handle = rt
        .block_on(server::start(ServeConfig::oracle(cfg.plant.clone()), "127.0.0.1:0", LogSender::disabled()))
        .unwrap();
    let target = handle.local_addr().to_string();
    ok(bin()
        .args(["gen-dataset", "--seed", "5", "--target", &target, "--config"])
        .arg(config(cfg_name))
        .arg("--out")
        .arg(dir)
        .output()
        .unwrap());
    rt.block_on(handle.shutdown()).unwrap();
    cfg.plant
}

fn eval(dataset: &Path, cfg_name: &str, responder: &str) -> Value {
    let out = bin()
        .args(["eval", "--eps", "0,1,10", "--responder", responder, "--dataset"])
        .arg(dataset)
        .arg("--config")
        .arg(config(cfg_name))
        .output()
        .unwrap();
    serde_json::from_str(&ok(out)).unwrap()
}

#[test]
fn shipped_configs_generate_and_close_under_the_oracle() {
    let rt = rt();
    for name in ["modbus-40.json", "s7-40.json", "modbus-context.json", "math-sigmoid.json", "control-loop.json"] {
        let dir = tempfile::tempdir().unwrap();
        gen_against_plant(&rt, name, dir.path());
        for file in ["pairs.csv", "dataset.csv", "train.csv", "val.csv", "test.csv", "capture.pcap", "capture.jsonl"] {
            assert!(dir.path().join(file).exists(), "{name}: {file} missing");
        }
        let header = std::fs::read_to_string(dir.path().join("pairs.csv")).unwrap();
        assert!(header.starts_with("source_text,target_text\n"), "{name}");
        let report = eval(&dir.path().join("pairs.csv"), name, "oracle");
        assert!(report["n"].as_u64().unwrap() > 0, "{name}");
        assert_eq!(report["bca"], 1.0, "{name}: {report}");
        assert_eq!(report["rva"], 1.0, "{name}: {report}");
    }
}

#[test]
fn eval_through_a_mock_model_matches_oracle_eval() {
    let rt = rt();
    let dir = tempfile::tempdir().unwrap();
    let plant = gen_against_plant(&rt, "modbus-context.json", dir.path());
    let oracle = Mutex::new(OracleResponder::new(plant).unwrap());
    let handler: ModelFn = Arc::new(move |source: &str| oracle.lock().unwrap().respond(source).unwrap_or_default());
    let listener = rt.block_on(tokio::net::TcpListener::bind("127.0.0.1:0")).unwrap();
    let addr = listener.local_addr().unwrap();
    let (stop, rx) = tokio::sync::watch::channel(false);
    let task = rt.spawn(serve_model(listener, handler, Duration::ZERO, rx));

    let pairs = dir.path().join("pairs.csv");
    let report = eval(&pairs, "modbus-context.json", &format!("model:{addr}"));
    let n = read_csv(std::fs::File::open(&pairs).unwrap()).unwrap().len();
    assert_eq!(report["n"].as_u64().unwrap() as usize, n);
    assert_eq!(report["bca"], 1.0, "{report}");

    // context rows: the trailing query is what gets validated
    let report = eval(&dir.path().join("dataset.csv"), "modbus-context.json", &format!("model:{addr}"));
    assert_eq!(report["rva"], 1.0, "{report}");
    stop.send(true).unwrap();
    rt.block_on(task).unwrap().unwrap();
}

#[test]
fn eval_rejects_unknown_responders() {
    let out = bin()
        .args(["eval", "--responder", "psychic", "--dataset", "/nonexistent.csv", "--config"])
        .arg(config("modbus-40.json"))
        .output()
        .unwrap();
    assert!(!out.status.success());
}

fn record(peer: &str, conn: u64, dir: &str, latency_us: Option<u64>) -> String {
    let mut v = serde_json::json!({
        "ts": "2026-01-01T00:00:00.000000Z", "peer": peer, "conn": conn, "seq": 0,
        "dir": dir, "hex": "00", "responder": "oracle"
    });
    if let Some(l) = latency_us {
        v["latency_us"] = l.into();
    }
    v.to_string()
}

#[test]
fn summarize_counts_peers_by_address() {
    let dir = tempfile::tempdir().unwrap();
    let mut lines = vec![];
    for (i, ip) in ["10.0.0.1", "10.0.0.2", "10.0.0.3"].iter().enumerate() {
        for conn in 0..2u64 {
            let peer = format!("{ip}:{}", 40000 + conn);
            lines.push(record(&peer, i as u64 * 2 + conn, "in", None));
            lines.push(record(&peer, i as u64 * 2 + conn, "out", Some(100 * (i as u64 * 2 + conn + 1))));
        }
    }
    let log = dir.path().join("a.jsonl");
    std::fs::write(&log, lines.join("\n") + "\n").unwrap();
    let empty = dir.path().join("empty.jsonl");
    std::fs::write(&empty, "").unwrap();

    let s: Value = serde_json::from_str(&ok(bin().arg("summarize").arg(&log).arg(&empty).output().unwrap())).unwrap();
    assert_eq!(s["unique_peers"], 3);
    // latencies 100..600: median of six by interpolation
    assert_eq!(s["latency"]["count"], 6);
    assert_eq!(s["latency"]["p50_us"], 350.0);
    assert_eq!(s["latency"]["max_us"], 600);

    let s: Value = serde_json::from_str(&ok(bin().arg("summarize").arg(&empty).output().unwrap())).unwrap();
    assert_eq!(s["unique_peers"], 0);
}
