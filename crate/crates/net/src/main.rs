use std::error::Error;
use std::fs::{self, File};
use std::io::BufReader;
use std::net::ToSocketAddrs;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};
use plcmimic_core::capture::{build_context, parse_capture_log, parse_pcap, pair_transactions, read_csv, split_dataset, write_csv};
use plcmimic_core::metrics::{evaluate, OracleResponder, Responder};
use plcmimic_core::plant::PlantConfig;
use plcmimic_net::client::TcpTransport;
use plcmimic_net::gen::{generate, write_outputs, GenConfig};
use plcmimic_net::logsink::{read_records, LogSender, LogSink};
use plcmimic_net::model::{echo_fixed, serve_model, ModelClient, ModelFn};
use plcmimic_net::server::{self, Fallback, ResponderSpec, ServeConfig};
use plcmimic_net::summary::summarize_logs;

type Result<T> = std::result::Result<T, Box<dyn Error + Send + Sync>>;

#[derive(Parser)]
#[command(name = "plcmimic", about = "PLC cloning toolkit: plant simulator, dataset generation, evaluation, honeypot")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum FallbackArg {
    Exception,
    Drop,
}

#[derive(Subcommand)]
enum Command {
    /// Probe a plant or PLC and write CSV corpora plus the raw capture.
    GenDataset {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        target: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2000)]
        timeout_ms: u64,
    },
    /// Score a responder on a CSV dataset.
    Eval {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// `oracle` or `model:host:port`.
        #[arg(long, default_value = "oracle")]
        responder: String,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2,5,10")]
        eps: Vec<u64>,
        #[arg(long, default_value_t = 5000)]
        timeout_ms: u64,
        /// Also write the (epsilon, rva_eps) curve here.
        #[arg(long)]
        curve: Option<PathBuf>,
    },
    /// Serve the decoy.
    Honeypot {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "oracle")]
        responder: String,
        #[arg(long, default_value_t = 500)]
        deadline_ms: u64,
        #[arg(long)]
        log: PathBuf,
        /// Defaults to the protocol's standard port on all interfaces.
        #[arg(long)]
        bind: Option<String>,
        #[arg(long, value_enum, default_value = "exception")]
        fallback: FallbackArg,
        /// Overrides the config's context_len.
        #[arg(long)]
        context_len: Option<usize>,
    },
    /// Serve the plant simulator itself.
    ServePlant {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        bind: Option<String>,
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Turn a PCAP or JSONL capture into CSV corpora.
    ParseCapture {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Server port for PCAP input; defaults to the protocol's port.
        #[arg(long)]
        port: Option<u16>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Aggregate interaction logs.
    Summarize {
        #[arg(required = true)]
        logs: Vec<PathBuf>,
    },
    /// Stand-in inference service for testing the model path.
    MockModel {
        #[arg(long, default_value = "127.0.0.1:9000")]
        bind: String,
        /// Reply with this fixed hex frame.
        #[arg(long, conflicts_with = "oracle")]
        reply: Option<String>,
        /// Reply from an embedded plant built from this config.
        #[arg(long)]
        oracle: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        delay_ms: u64,
    },
}

fn read_plant_config(path: &PathBuf) -> Result<PlantConfig> {
    Ok(PlantConfig::from_json(&fs::read_to_string(path)?)?)
}

fn runtime() -> Result<tokio::runtime::Runtime> {
    Ok(tokio::runtime::Builder::new_multi_thread().enable_all().build()?)
}

async fn ctrl_c() {
    if tokio::signal::ctrl_c().await.is_err() {
        std::future::pending::<()>().await;
    }
}

fn serve(cfg: ServeConfig, bind: String, log: Option<PathBuf>) -> Result<()> {
    let sink = log.map(LogSink::open).transpose()?;
    let sender = sink.as_ref().map_or_else(LogSender::disabled, LogSink::sender);
    runtime()?.block_on(async {
        let handle = server::start(cfg, &bind, sender).await?;
        eprintln!("listening on {}", handle.local_addr());
        ctrl_c().await;
        eprintln!("shutting down");
        handle.shutdown().await
    })?;
    if let Some(sink) = sink {
        sink.close();
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenDataset { config, target, seed, out, timeout_ms } => {
            let cfg = GenConfig::from_json(&fs::read_to_string(&config)?)?;
            let addr = target.to_socket_addrs()?.next().ok_or("target does not resolve")?;
            let transport = TcpTransport::connect(addr, cfg.plant.protocol.protocol, Duration::from_millis(timeout_ms))?;
            let generated = generate(transport, &cfg, seed)?;
            let split = write_outputs(&out, &cfg, &generated.pairs, seed, addr)?;
            eprintln!(
                "{} pairs ({} skipped): train {}, val {}, test {} -> {}",
                generated.pairs.len(),
                generated.skipped,
                split.train.len(),
                split.validation.len(),
                split.test.len(),
                out.display()
            );
        }
        Command::Eval { dataset, config, responder, eps, timeout_ms, curve } => {
            let cfg = read_plant_config(&config)?;
            let records = read_csv(BufReader::new(File::open(&dataset)?))?;
            let mut responder: Box<dyn Responder> = match ResponderSpec::parse(&responder) {
                Some(ResponderSpec::Oracle) => Box::new(OracleResponder::new(cfg.clone())?),
                Some(ResponderSpec::Model(addr)) => Box::new(ModelClient::new(addr, Duration::from_millis(timeout_ms))?),
                None => return Err(format!("unknown responder {responder:?}").into()),
            };
            let report = evaluate(&mut responder.as_mut(), &records, &cfg.protocol, &eps);
            println!("{}", serde_json::to_string_pretty(&report)?);
            if let Some(path) = curve {
                fs::write(path, report.eps_curve_csv())?;
            }
        }
        Command::Honeypot { config, responder, deadline_ms, log, bind, fallback, context_len } => {
            let plant = read_plant_config(&config)?;
            let responder = ResponderSpec::parse(&responder).ok_or("responder must be oracle or model:host:port")?;
            if deadline_ms == 0 {
                return Err("deadline must be positive".into());
            }
            let bind = bind.unwrap_or_else(|| format!("0.0.0.0:{}", plant.protocol.protocol.default_port()));
            let cfg = ServeConfig {
                context_len: context_len.unwrap_or(plant.protocol.context_len),
                plant,
                responder,
                deadline: Some(Duration::from_millis(deadline_ms)),
                fallback: match fallback {
                    FallbackArg::Exception => Fallback::Exception,
                    FallbackArg::Drop => Fallback::Drop,
                },
            };
            serve(cfg, bind, Some(log.join("honeypot.jsonl")))?;
        }
        Command::ServePlant { config, bind, log } => {
            let plant = read_plant_config(&config)?;
            let bind = bind.unwrap_or_else(|| format!("0.0.0.0:{}", plant.protocol.protocol.default_port()));
            serve(ServeConfig::oracle(plant), bind, log.map(|d| d.join("plant.jsonl")))?;
        }
        Command::ParseCapture { input, config, port, seed, out } => {
            let cfg = read_plant_config(&config)?;
            let protocol = cfg.protocol.protocol;
            let entries = match input.extension().and_then(|e| e.to_str()) {
                Some("jsonl") | Some("json") => parse_capture_log(&fs::read_to_string(&input)?)?,
                _ => parse_pcap(BufReader::new(File::open(&input)?), protocol, port.unwrap_or(protocol.default_port()))?,
            };
            let pairing = pair_transactions(protocol, &entries);
            let dataset = match cfg.protocol.context_len {
                0 => pairing.pairs.clone(),
                l => build_context(&pairing.pairs, l)?,
            };
            fs::create_dir_all(&out)?;
            write_csv(&pairing.pairs, File::create(out.join("pairs.csv"))?)?;
            write_csv(&dataset, File::create(out.join("dataset.csv"))?)?;
            let split = split_dataset(&dataset, 0.1, 0.1, seed);
            write_csv(&split.train, File::create(out.join("train.csv"))?)?;
            write_csv(&split.validation, File::create(out.join("val.csv"))?)?;
            write_csv(&split.test, File::create(out.join("test.csv"))?)?;
            eprintln!("{} pairs, {} orphan frames -> {}", pairing.pairs.len(), pairing.orphans.len(), out.display());
        }
        Command::Summarize { logs } => {
            let mut records = vec![];
            for path in logs {
                records.extend(read_records(&fs::read_to_string(&path)?)?);
            }
            println!("{}", serde_json::to_string_pretty(&summarize_logs(&records))?);
        }
        Command::MockModel { bind, reply, oracle, delay_ms } => {
            let handler: ModelFn = match (reply, oracle) {
                (Some(frame), _) => echo_fixed(&frame),
                (None, Some(path)) => {
                    let plant = Mutex::new(OracleResponder::new(read_plant_config(&path)?)?);
                    Arc::new(move |source: &str| plant.lock().expect("plant lock").respond(source).unwrap_or_default())
                }
                (None, None) => return Err("give --reply or --oracle".into()),
            };
            runtime()?.block_on(async {
                let listener = tokio::net::TcpListener::bind(&bind).await?;
                eprintln!("mock model on {}", listener.local_addr()?);
                let (tx, rx) = tokio::sync::watch::channel(false);
                let task = tokio::spawn(serve_model(listener, handler, Duration::from_millis(delay_ms), rx));
                ctrl_c().await;
                let _ = tx.send(true);
                task.await.map_err(std::io::Error::other)?
            })?;
        }
    }
    Ok(())
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
