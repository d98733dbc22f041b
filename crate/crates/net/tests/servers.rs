use std::sync::{Arc, Mutex};
use std::time::Duration;

use plcmimic_core::capture::{build_context, context_source};
use plcmimic_core::config::{Area, Protocol, ProtocolConfig};
use plcmimic_core::dataset::{Prober, SamplePair, Transport};
use plcmimic_core::hexstr;
use plcmimic_core::plant::{Plant, PlantConfig};
use plcmimic_core::protocol::{Request, RequestId};
use plcmimic_net::client::TcpTransport;
use plcmimic_net::logsink::{read_records, InteractionRecord, LogDir, LogSender, LogSink, ResponderTag};
use plcmimic_net::model::{echo_fixed, serve_model, ModelFn};
use plcmimic_net::server::{self, Fallback, ResponderSpec, ServeConfig, ServerHandle};
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::watch;

fn plant_cfg(protocol: Protocol) -> PlantConfig {
    ProtocolConfig::with_points(protocol, 40).into()
}

fn read_req(tid: u16, addr: u16) -> Vec<u8> {
    let id = RequestId::Modbus { transaction_id: tid, unit_id: 1 };
    Protocol::Modbus.encode_request(&Request::read(id, Area::Analog, addr, 1)).unwrap()
}

async fn exchange(stream: &mut TcpStream, frame: &[u8]) -> Vec<u8> {
    stream.write_all(frame).await.unwrap();
    let mut buf = vec![];
    plcmimic_net::framing::read_frame(stream, Protocol::Modbus, &mut buf).await.unwrap().unwrap()
}

async fn mock_model(handler: ModelFn, delay: Duration) -> (String, watch::Sender<bool>) {
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    let (tx, rx) = watch::channel(false);
    tokio::spawn(serve_model(listener, handler, delay, rx));
    (addr, tx)
}

fn model_cfg(addr: &str, deadline_ms: u64, context_len: usize) -> ServeConfig {
    ServeConfig {
        plant: plant_cfg(Protocol::Modbus),
        responder: ResponderSpec::Model(addr.to_string()),
        deadline: Some(Duration::from_millis(deadline_ms)),
        fallback: Fallback::Exception,
        context_len,
    }
}

async fn start(cfg: ServeConfig, log: LogSender) -> ServerHandle {
    server::start(cfg, "127.0.0.1:0", log).await.unwrap()
}

fn load(sink: LogSink) -> Vec<InteractionRecord> {
    let path = sink.path().to_path_buf();
    sink.close();
    read_records(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn fifty_clients_hundred_requests_each() {
    let dir = tempfile::tempdir().unwrap();
    let sink = LogSink::open(dir.path().join("hp.jsonl")).unwrap();
    let handle = start(ServeConfig::oracle(plant_cfg(Protocol::Modbus)), sink.sender()).await;
    let addr = handle.local_addr();
    let mut clients = vec![];
    for c in 0..50u16 {
        clients.push(tokio::spawn(async move {
            let mut s = TcpStream::connect(addr).await.unwrap();
            for i in 0..100u16 {
                let resp = exchange(&mut s, &read_req(c * 100 + i, i % 40)).await;
                assert_eq!(&resp[..2], &(c * 100 + i).to_be_bytes());
            }
        }));
    }
    for c in clients {
        c.await.unwrap();
    }
    handle.shutdown().await.unwrap();
    let records = load(sink);
    let ins = records.iter().filter(|r| r.dir == LogDir::In).count();
    let outs: Vec<_> = records.iter().filter(|r| r.dir == LogDir::Out).collect();
    assert_eq!((ins, outs.len()), (5000, 5000));
    assert!(outs.iter().all(|r| r.latency_us.is_some() && r.responder == Some(ResponderTag::Oracle)));
    // every in record has exactly one out record with the same (conn, seq)
    let mut keys: Vec<_> = outs.iter().map(|r| (r.conn, r.seq)).collect();
    keys.sort_unstable();
    keys.dedup();
    assert_eq!(keys.len(), 5000);
}

#[tokio::test]
async fn restart_appends_to_the_same_log() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("hp.jsonl");
    for round in 0..2u16 {
        let sink = LogSink::open(&path).unwrap();
        let handle = start(ServeConfig::oracle(plant_cfg(Protocol::Modbus)), sink.sender()).await;
        let mut s = TcpStream::connect(handle.local_addr()).await.unwrap();
        exchange(&mut s, &read_req(round, 0)).await;
        drop(s);
        handle.shutdown().await.unwrap();
        sink.close();
    }
    let records = read_records(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(records.len(), 4);
    assert_eq!(records[0].hex, hexstr::encode(&read_req(0, 0)));
    assert_eq!(records[2].hex, hexstr::encode(&read_req(1, 0)));
}

#[tokio::test]
async fn stalled_model_gets_server_failure_fallback() {
    let (addr, _stop) = mock_model(echo_fixed("00"), Duration::from_millis(500)).await;
    let dir = tempfile::tempdir().unwrap();
    let sink = LogSink::open(dir.path().join("hp.jsonl")).unwrap();
    let handle = start(model_cfg(&addr, 50, 0), sink.sender()).await;
    let mut s = TcpStream::connect(handle.local_addr()).await.unwrap();
    let resp = exchange(&mut s, &read_req(9, 3)).await;
    assert_eq!(hexstr::encode(&resp), "000900000003018304");
    drop(s);
    handle.shutdown().await.unwrap();
    let records = load(sink);
    let out = records.iter().find(|r| r.dir == LogDir::Out).unwrap();
    assert_eq!(out.responder, Some(ResponderTag::Fallback));
}

#[tokio::test]
async fn drop_fallback_logs_without_answering() {
    let (addr, _stop) = mock_model(echo_fixed(""), Duration::ZERO).await;
    let dir = tempfile::tempdir().unwrap();
    let sink = LogSink::open(dir.path().join("hp.jsonl")).unwrap();
    let mut cfg = model_cfg(&addr, 200, 0);
    cfg.fallback = Fallback::Drop;
    let handle = start(cfg, sink.sender()).await;
    let mut s = TcpStream::connect(handle.local_addr()).await.unwrap();
    s.write_all(&read_req(1, 0)).await.unwrap();
    let mut byte = [0u8; 1];
    let got = tokio::time::timeout(Duration::from_millis(300), s.read(&mut byte)).await;
    assert!(got.is_err(), "no bytes expected");
    drop(s);
    handle.shutdown().await.unwrap();
    let records = load(sink);
    let dirs: Vec<_> = records.iter().map(|r| r.dir).collect();
    assert_eq!(dirs, vec![LogDir::In, LogDir::Drop]);
    assert_eq!(records[1].responder, Some(ResponderTag::Fallback));
}

#[tokio::test]
async fn model_reply_is_forwarded_with_context() {
    let seen = Arc::new(Mutex::new(Vec::<String>::new()));
    let fixed = "000100000005010302002a";
    let log = seen.clone();
    let handler: ModelFn = Arc::new(move |p: &str| {
        log.lock().unwrap().push(p.to_string());
        fixed.to_string()
    });
    let (addr, _stop) = mock_model(handler, Duration::ZERO).await;
    let handle = start(model_cfg(&addr, 500, 1), LogSender::disabled()).await;
    let mut s = TcpStream::connect(handle.local_addr()).await.unwrap();
    let queries: Vec<Vec<u8>> = (1..=3).map(|i| read_req(i, i)).collect();
    for q in &queries {
        assert_eq!(hexstr::encode(&exchange(&mut s, q).await), fixed);
    }
    drop(s);
    handle.shutdown().await.unwrap();
    // the payloads must equal the offline context windows of the same session
    let session: Vec<SamplePair> = queries.iter().map(|q| SamplePair::new(q, &hexstr::decode(fixed).unwrap())).collect();
    let mut expected = vec![context_source([], &session[0].source_text)];
    expected.extend(build_context(&session, 1).unwrap().into_iter().map(|p| p.source_text));
    assert_eq!(*seen.lock().unwrap(), expected);
}

#[tokio::test]
async fn contexts_are_per_connection() {
    let seen = Arc::new(Mutex::new(Vec::<String>::new()));
    let log = seen.clone();
    let handler: ModelFn = Arc::new(move |p: &str| {
        log.lock().unwrap().push(p.to_string());
        "000100000005010302002a".to_string()
    });
    let (addr, _stop) = mock_model(handler, Duration::ZERO).await;
    let handle = start(model_cfg(&addr, 500, 2), LogSender::disabled()).await;
    let mut a = TcpStream::connect(handle.local_addr()).await.unwrap();
    exchange(&mut a, &read_req(1, 1)).await;
    let mut b = TcpStream::connect(handle.local_addr()).await.unwrap();
    exchange(&mut b, &read_req(2, 2)).await;
    handle.shutdown().await.unwrap();
    let seen = seen.lock().unwrap();
    assert!(!seen[1].contains('|'), "second connection starts with an empty context: {}", seen[1]);
}

#[tokio::test]
async fn reset_mid_request_logs_a_drop() {
    let (addr, _stop) = mock_model(echo_fixed("000100000005010302002a"), Duration::from_millis(200)).await;
    let dir = tempfile::tempdir().unwrap();
    let sink = LogSink::open(dir.path().join("hp.jsonl")).unwrap();
    let handle = start(model_cfg(&addr, 1000, 0), sink.sender()).await;
    let mut s = TcpStream::connect(handle.local_addr()).await.unwrap();
    s.write_all(&read_req(1, 0)).await.unwrap();
    // zero linger never blocks; it turns the close into a reset
    #[allow(deprecated)]
    s.set_linger(Some(Duration::ZERO)).unwrap();
    drop(s);
    tokio::time::sleep(Duration::from_millis(400)).await;
    handle.shutdown().await.unwrap();
    let records = load(sink);
    let dirs: Vec<_> = records.iter().map(|r| r.dir).collect();
    assert_eq!(dirs, vec![LogDir::In, LogDir::Drop]);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn s7_probe_client_against_served_plant() {
    let cfg = plant_cfg(Protocol::S7comm);
    let handle = start(ServeConfig::oracle(cfg.clone()), LogSender::disabled()).await;
    let addr = handle.local_addr();
    let pcfg = cfg.protocol.clone();
    let over_tcp = tokio::task::spawn_blocking(move || {
        let t = TcpTransport::connect(addr, Protocol::S7comm, Duration::from_secs(2)).unwrap();
        let mut p = Prober::new(t, &pcfg);
        p.write(Area::Analog, 3, vec![77]).unwrap();
        p.read(Area::Analog, 3, 1).unwrap();
        p.read(Area::Analog, 400, 1).unwrap();
        p.take_pairs()
    })
    .await
    .unwrap();
    handle.shutdown().await.unwrap();
    // same script against an in-process plant
    let mut plant = Plant::new(cfg.clone()).unwrap();
    for pair in &over_tcp {
        let reply = plant.exchange(&hexstr::decode(&pair.source_text).unwrap()).unwrap();
        assert_eq!(hexstr::encode(&reply), pair.target_text);
    }
    assert_eq!(over_tcp.len(), 3);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn s7_model_mode_handles_session_setup_locally() {
    let seen = Arc::new(Mutex::new(0usize));
    let count = seen.clone();
    let handler: ModelFn = Arc::new(move |_: &str| {
        *count.lock().unwrap() += 1;
        String::new()
    });
    let (maddr, _stop) = mock_model(handler, Duration::ZERO).await;
    let mut cfg = model_cfg(&maddr, 500, 0);
    cfg.plant = plant_cfg(Protocol::S7comm);
    let handle = start(cfg, LogSender::disabled()).await;
    let addr = handle.local_addr();
    let reply = tokio::task::spawn_blocking(move || {
        let mut t = TcpTransport::connect(addr, Protocol::S7comm, Duration::from_secs(2)).unwrap();
        let req = Request::read(RequestId::S7 { pdu_ref: 5 }, Area::Analog, 0, 1);
        t.exchange(&Protocol::S7comm.encode_request(&req).unwrap()).unwrap()
    })
    .await
    .unwrap();
    handle.shutdown().await.unwrap();
    // the model returned nothing, so the data request got the fallback header error
    let frame = plcmimic_core::s7::S7Frame::from_bytes(&reply).unwrap();
    assert!(frame.is_error());
    assert_eq!(*seen.lock().unwrap(), 1);
}
