//! TCP front-end shared by the plant simulator and the honeypot. The plant
//! lives in one actor task; connections submit frames over a channel and
//! receive replies in request order.

use std::collections::VecDeque;
use std::io;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use plcmimic_core::capture::context_source;
use plcmimic_core::config::Protocol;
use plcmimic_core::hexstr;
use plcmimic_core::plant::{Plant, PlantConfig, PlantError};
use plcmimic_core::protocol::ExceptionCode;
use plcmimic_core::s7::{self, JobParam, S7Body, S7Frame};
use serde::{Deserialize, Serialize};
use tokio::io::AsyncWriteExt;
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::{mpsc, oneshot, watch};
use tokio::task::JoinSet;

use crate::framing::read_frame;
use crate::logsink::{InteractionRecord, LogDir, LogSender, ResponderTag};
use crate::model::ModelConn;

type Reply = Result<Vec<u8>, PlantError>;

/// Handle to the plant actor.
#[derive(Clone)]
pub struct PlantHandle {
    tx: mpsc::Sender<(Vec<u8>, oneshot::Sender<Reply>)>,
}

impl PlantHandle {
    /// Moves `plant` into its own task. Tick loops advance every `tick_ms`.
    pub fn spawn(plant: Plant) -> Self {
        let (tx, mut rx) = mpsc::channel::<(Vec<u8>, oneshot::Sender<Reply>)>(1024);
        tokio::spawn(async move {
            let mut plant = plant;
            let ticking = plant.has_tick_loops();
            let period = Duration::from_millis(plant.config().tick_ms.max(1));
            let mut ticker = tokio::time::interval(period);
            ticker.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
            loop {
                tokio::select! {
                    job = rx.recv() => match job {
                        Some((frame, reply)) => {
                            let _ = reply.send(plant.handle_frame(&frame));
                        }
                        None => break,
                    },
                    _ = ticker.tick(), if ticking => plant.tick(),
                }
            }
        });
        PlantHandle { tx }
    }

    pub async fn call(&self, frame: Vec<u8>) -> Reply {
        let (reply_tx, reply_rx) = oneshot::channel();
        let gone = || PlantError::Undecodable("plant task stopped".into());
        self.tx.send((frame, reply_tx)).await.map_err(|_| gone())?;
        reply_rx.await.map_err(|_| gone())?
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ResponderSpec {
    Oracle,
    /// Inference service address, `host:port`.
    Model(String),
}

impl ResponderSpec {
    /// `oracle` or `model:host:port`.
    pub fn parse(s: &str) -> Option<Self> {
        if s == "oracle" {
            return Some(ResponderSpec::Oracle);
        }
        crate::model::parse_model_spec(s).map(|a| ResponderSpec::Model(a.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fallback {
    Drop,
    /// Server-failure exception (code 0x04).
    #[default]
    Exception,
}

#[derive(Debug, Clone)]
pub struct ServeConfig {
    pub plant: PlantConfig,
    pub responder: ResponderSpec,
    /// Response budget; `None` waits indefinitely.
    pub deadline: Option<Duration>,
    pub fallback: Fallback,
    /// Previous exchanges prepended to model queries.
    pub context_len: usize,
}

impl ServeConfig {
    pub fn oracle(plant: PlantConfig) -> Self {
        let context_len = plant.protocol.context_len;
        ServeConfig { plant, responder: ResponderSpec::Oracle, deadline: None, fallback: Fallback::Exception, context_len }
    }
}

pub struct ServerHandle {
    addr: SocketAddr,
    shutdown: watch::Sender<bool>,
    task: tokio::task::JoinHandle<io::Result<()>>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Stops accepting, closes every connection and waits for the handlers.
    pub async fn shutdown(self) -> io::Result<()> {
        let _ = self.shutdown.send(true);
        self.task.await.map_err(io::Error::other)?
    }

    /// Runs until the server fails.
    pub async fn wait(self) -> io::Result<()> {
        let ServerHandle { task, shutdown: _keep, .. } = self;
        task.await.map_err(io::Error::other)?
    }
}

struct Shared {
    cfg: ServeConfig,
    protocol: Protocol,
    plant: PlantHandle,
    log: LogSender,
}

pub async fn start(cfg: ServeConfig, bind: &str, log: LogSender) -> io::Result<ServerHandle> {
    if cfg.deadline.is_some_and(|d| d.is_zero()) {
        return Err(io::Error::new(io::ErrorKind::InvalidInput, "deadline must be positive"));
    }
    let plant = Plant::new(cfg.plant.clone()).map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e.to_string()))?;
    let listener = TcpListener::bind(bind).await?;
    let addr = listener.local_addr()?;
    let (shutdown, rx) = watch::channel(false);
    let shared = Arc::new(Shared { protocol: cfg.plant.protocol.protocol, plant: PlantHandle::spawn(plant), cfg, log });
    let task = tokio::spawn(accept_loop(listener, shared, rx));
    Ok(ServerHandle { addr, shutdown, task })
}

async fn accept_loop(listener: TcpListener, shared: Arc<Shared>, mut shutdown: watch::Receiver<bool>) -> io::Result<()> {
    let next_conn = AtomicU64::new(1);
    let mut conns = JoinSet::new();
    loop {
        let accepted = tokio::select! {
            a = listener.accept() => a,
            _ = shutdown.changed() => break,
        };
        match accepted {
            Ok((stream, peer)) => {
                let conn = next_conn.fetch_add(1, Ordering::Relaxed);
                conns.spawn(handle_conn(stream, peer, conn, shared.clone(), shutdown.clone()));
            }
            // Per-connection accept failures (e.g. fd exhaustion) must not stop the server.
            Err(e) => {
                eprintln!("accept failed: {e}");
                tokio::time::sleep(Duration::from_millis(10)).await;
            }
        }
        while conns.try_join_next().is_some() {}
    }
    while conns.join_next().await.is_some() {}
    Ok(())
}

struct Answer {
    bytes: Option<Vec<u8>>,
    tag: ResponderTag,
    note: Option<String>,
    /// Close the connection after this answer.
    close: bool,
    /// Handled locally as session setup; kept out of the model context.
    control: bool,
}

struct Session {
    history: VecDeque<(String, String)>,
    model: Option<ModelConn>,
}

async fn handle_conn(
    stream: TcpStream,
    peer: SocketAddr,
    conn: u64,
    shared: Arc<Shared>,
    mut shutdown: watch::Receiver<bool>,
) {
    let _ = stream.set_nodelay(true);
    let peer = peer.to_string();
    let (mut rd, mut wr) = stream.into_split();
    let protocol = shared.protocol;
    let mut buf = Vec::new();
    let mut seq = 0u64;
    let mut session = Session { history: VecDeque::new(), model: None };
    let record = |seq, dir, hex: String| InteractionRecord::new(&peer, conn, seq, dir, hex);
    loop {
        let frame = tokio::select! {
            f = read_frame(&mut rd, protocol, &mut buf) => f,
            _ = shutdown.changed() => break,
        };
        let frame = match frame {
            Ok(Some(f)) => f,
            Ok(None) => break,
            Err(e) => {
                if !buf.is_empty() {
                    let mut r = record(seq + 1, LogDir::Drop, hexstr::encode(&buf));
                    r.note = Some(e.to_string());
                    shared.log.send(r);
                }
                break;
            }
        };
        seq += 1;
        shared.log.send(record(seq, LogDir::In, hexstr::encode(&frame)));
        let started = Instant::now();
        let answer = respond(&shared, &mut session, &frame).await;
        let latency_us = started.elapsed().as_micros() as u64;
        match answer.bytes {
            Some(bytes) => {
                if let Err(e) = wr.write_all(&bytes).await {
                    let mut r = record(seq, LogDir::Drop, hexstr::encode(&bytes));
                    r.responder = Some(answer.tag);
                    r.note = Some(format!("write failed: {e}"));
                    shared.log.send(r);
                    break;
                }
                let mut r = record(seq, LogDir::Out, hexstr::encode(&bytes));
                r.latency_us = Some(latency_us);
                r.responder = Some(answer.tag);
                r.note = answer.note;
                shared.log.send(r);
                if !answer.control && shared.cfg.context_len > 0 {
                    session.history.push_back((hexstr::encode(&frame), hexstr::encode(&bytes)));
                    while session.history.len() > shared.cfg.context_len {
                        session.history.pop_front();
                    }
                }
            }
            None => {
                let mut r = record(seq, LogDir::Drop, String::new());
                r.latency_us = Some(latency_us);
                r.responder = Some(answer.tag);
                r.note = answer.note;
                shared.log.send(r);
            }
        }
        if answer.close {
            break;
        }
    }
    let _ = wr.shutdown().await;
}

/// COTP connection requests and S7 setup jobs are answered by the scripted
/// plant path for every responder; models are trained on data exchanges only.
fn is_session_control(protocol: Protocol, frame: &[u8]) -> bool {
    match protocol {
        Protocol::Modbus => false,
        Protocol::S7comm => match s7::classify(frame) {
            Some(s7::Tpdu::ConnectRequest) => true,
            Some(s7::Tpdu::Data) => {
                matches!(S7Frame::from_bytes(frame), Ok(S7Frame { body: S7Body::Job(JobParam::Setup(_)), .. }))
            }
            _ => false,
        },
    }
}

async fn respond(shared: &Shared, session: &mut Session, frame: &[u8]) -> Answer {
    let control = is_session_control(shared.protocol, frame);
    let addr = match &shared.cfg.responder {
        ResponderSpec::Model(addr) if !control => addr.clone(),
        _ => {
            let call = shared.plant.call(frame.to_vec());
            let reply = match shared.cfg.deadline {
                Some(d) => match tokio::time::timeout(d, call).await {
                    Ok(r) => r,
                    Err(_) => return fallback(shared, frame, "oracle deadline exceeded"),
                },
                None => call.await,
            };
            return match reply {
                Ok(bytes) => Answer { bytes: Some(bytes), tag: ResponderTag::Oracle, note: None, close: false, control },
                Err(e) => Answer {
                    bytes: None,
                    tag: ResponderTag::Oracle,
                    note: Some(e.to_string()),
                    close: true,
                    control,
                },
            };
        }
    };
    // Without a context window the model was trained on bare request hex.
    let source = match shared.cfg.context_len {
        0 => hexstr::encode(frame),
        _ => context_source(session.history.iter().map(|(q, r)| (q.as_str(), r.as_str())), &hexstr::encode(frame)),
    };
    let mut model = session.model.take();
    let query = async {
        if model.is_none() {
            model = Some(ModelConn::connect(&addr).await.map_err(|e| format!("model connect failed: {e}"))?);
        }
        let conn = model.as_mut().expect("connected above");
        conn.query(&source).await.map_err(|e| format!("model query failed: {e}"))
    };
    let result = match shared.cfg.deadline {
        Some(d) => tokio::time::timeout(d, query).await.unwrap_or_else(|_| Err("model deadline exceeded".into())),
        None => query.await,
    };
    match result {
        Ok(reply) => {
            session.model = model;
            match hexstr::decode(&reply) {
                Ok(bytes) if !bytes.is_empty() => {
                    Answer { bytes: Some(bytes), tag: ResponderTag::Model, note: None, close: false, control: false }
                }
                _ => fallback(shared, frame, "unusable model output"),
            }
        }
        // A timed-out connection may still deliver the stale reply; discard it.
        Err(e) => fallback(shared, frame, &e),
    }
}

fn fallback(shared: &Shared, frame: &[u8], why: &str) -> Answer {
    let bytes = match shared.cfg.fallback {
        Fallback::Exception => shared.protocol.raw_exception(frame, ExceptionCode::SERVER_FAILURE),
        Fallback::Drop => None,
    };
    Answer { bytes, tag: ResponderTag::Fallback, note: Some(why.to_string()), close: false, control: false }
}
