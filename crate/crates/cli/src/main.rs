//! `mdml`: run the service, administer topics and experiments, tail streams and
//! reproduce the throughput and steering studies.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use mdml_core::agent::{Agent, AgentConfig, SubscribeOptions};
use mdml_core::broker::StartPosition;
use mdml_core::connectors::ConnectorConfig;
use mdml_core::harness::{self, checks, Check, PreviewFormat};
use mdml_core::service::protocol::ListKind;
use mdml_core::service::{Server, ServiceConfig};
use mdml_core::wire::DataMessage;
use mdml_core::Error;
use serde_json::{json, Value};

const EXIT_FAILURE: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_UNREACHABLE: u8 = 3;
const EXIT_ASSERT: u8 = 4;

#[derive(Parser)]
#[command(name = "mdml", version, about = "Streaming fabric for scientific experiments")]
struct Cli {
    /// Service address.
    #[arg(long, global = true, env = "MDML_ADDR", default_value = "127.0.0.1:7470")]
    addr: String,
    /// Shared secret, when the service requires one.
    #[arg(long, global = true, env = "MDML_TOKEN", hide_env_values = true)]
    token: Option<String>,
    /// Print machine-readable JSON instead of text.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the service in the foreground.
    Serve(ServeArgs),
    #[command(subcommand)]
    /// Create and list topics.
    Topic(TopicCmd),
    /// Publish one message from a file, an argument or stdin.
    Publish(PublishArgs),
    /// Print one line per message on a topic.
    Tail(TailArgs),
    #[command(subcommand)]
    /// Capture and replay experiments.
    Experiment(ExperimentCmd),
    #[command(subcommand)]
    /// Manage hosted sink and source connectors.
    Connector(ConnectorCmd),
    #[command(subcommand)]
    /// Throughput benchmarks.
    Bench(BenchCmd),
    #[command(subcommand)]
    /// Demonstrations built on the agent toolkit.
    Demo(DemoCmd),
}

#[derive(Args)]
struct ServeArgs {
    /// JSON service configuration; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    listen: Option<String>,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    partitions: Option<u32>,
    #[arg(long)]
    max_payload: Option<usize>,
}

#[derive(Subcommand)]
enum TopicCmd {
    /// Create a topic.
    Create {
        name: String,
        #[arg(long)]
        partitions: Option<u32>,
    },
    /// List topics.
    List,
}

#[derive(Args)]
struct PublishArgs {
    topic: String,
    /// Payload text; stdin is read when neither this nor --file is given.
    #[arg(long, conflicts_with = "file")]
    data: Option<String>,
    #[arg(long)]
    file: Option<PathBuf>,
    #[arg(long)]
    key: Option<String>,
    /// Extra header as key=value; repeatable.
    #[arg(long = "header", value_parser = parse_pair)]
    headers: Vec<(String, String)>,
}

#[derive(Args)]
struct TailArgs {
    topics: Vec<String>,
    /// Start from the oldest retained message instead of new ones.
    #[arg(long)]
    earliest: bool,
    #[arg(long, default_value = "utf8")]
    format: PreviewFormat,
    /// Show chunk parts and claim tickets as they travel.
    #[arg(long)]
    raw: bool,
    /// Stop after this many messages.
    #[arg(long)]
    count: Option<u64>,
    /// Stop after this many seconds without traffic.
    #[arg(long)]
    idle_secs: Option<f64>,
    /// Join this consumer group and commit after printing.
    #[arg(long)]
    group: Option<String>,
}

#[derive(Subcommand)]
enum ExperimentCmd {
    /// Start capturing the given topics.
    Start { topics: Vec<String> },
    /// Stop a capture and write its archive.
    Stop { id: String },
    /// Re-publish an archive with its original timing.
    Replay {
        /// Experiment id or archive path.
        id: String,
        /// Time scale; 2 plays twice as fast, 0 as fast as possible.
        #[arg(long, default_value_t = 1.0)]
        speed: f64,
        /// Send a captured topic elsewhere, as from=to; repeatable.
        #[arg(long = "target", value_parser = parse_pair)]
        targets: Vec<(String, String)>,
    },
    /// List experiments.
    List,
}

#[derive(Subcommand)]
enum ConnectorCmd {
    /// Create a connector from a JSON config given inline or as @file.
    Create { config: String },
    /// Stop and remove a connector.
    Delete { name: String },
    /// List connectors.
    List,
}

#[derive(Subcommand)]
enum BenchCmd {
    /// Throughput against chunk size.
    Chunks(ChunkBenchArgs),
    /// Consumer-group throughput against worker count.
    Scale(ScaleBenchArgs),
    /// Sustained producer-to-consumer rate.
    Stream(StreamBenchArgs),
}

#[derive(Args)]
struct ChunkBenchArgs {
    #[arg(long, default_value_t = 10_000_000)]
    payload: usize,
    #[arg(long, value_delimiter = ',', default_values_t = [65_536, 262_144, 1_048_576])]
    chunk_sizes: Vec<usize>,
    #[arg(long, default_value_t = 20)]
    repetitions: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Exit with status 4 unless the throughput shape holds.
    #[arg(long)]
    assert: bool,
}

#[derive(Args)]
struct ScaleBenchArgs {
    #[arg(long, value_delimiter = ',', default_values_t = [1, 2, 4])]
    workers: Vec<usize>,
    #[arg(long, default_value_t = 1_000_000)]
    payload: usize,
    /// Emulated handler cost in ms per MB.
    #[arg(long, default_value_t = 80.0)]
    work_factor: f64,
    #[arg(long, default_value_t = 10.0)]
    duration_secs: f64,
    #[arg(long, default_value_t = 4)]
    partitions: u32,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Exit with status 4 unless speedups and exactly-once hold.
    #[arg(long)]
    assert: bool,
}

#[derive(Args)]
struct StreamBenchArgs {
    #[arg(long, default_value_t = 10_000_000)]
    payload: usize,
    #[arg(long, default_value_t = 30.0)]
    duration_secs: f64,
    /// Floor in MB/s checked by --assert.
    #[arg(long, default_value_t = 100.0)]
    min_mb_s: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    assert: bool,
}

#[derive(Subcommand)]
enum DemoCmd {
    /// Closed-loop steering of a drifting sensor.
    Steering {
        #[arg(long, default_value_t = 10.0)]
        duration_secs: f64,
        #[arg(long, default_value_t = 2021)]
        seed: u64,
        /// Run without the step disturbance.
        #[arg(long)]
        quiet: bool,
        #[arg(long)]
        assert: bool,
    },
}

fn parse_pair(s: &str) -> Result<(String, String), String> {
    s.split_once('=')
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .ok_or_else(|| format!("expected key=value, got {s:?}"))
}

fn secs(v: f64) -> Result<Duration, Error> {
    Duration::try_from_secs_f64(v).map_err(|_| Error::InvalidArgument(format!("{v} is not a usable number of seconds")))
}

enum Failure {
    Error(Error),
    Assertion,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Error(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Error(e.into())
    }
}

type Outcome = Result<(), Failure>;

struct Ctx {
    addr: String,
    token: Option<String>,
    json: bool,
}

impl Ctx {
    fn agent_config(&self) -> Result<AgentConfig, Error> {
        let mut cfg = AgentConfig::from_env()?;
        cfg.addr = self.addr.clone();
        cfg.auth_token = self.token.clone().or(cfg.auth_token);
        Ok(cfg)
    }

    fn agent(&self) -> Result<Agent, Error> {
        Agent::connect(self.agent_config()?)
    }

    fn emit(&self, value: &Value, text: impl FnOnce() -> String) {
        if self.json {
            println!("{value}");
        } else {
            println!("{}", text());
        }
    }

    fn verdict(&self, checks: &[Check]) -> Outcome {
        if !self.json {
            for c in checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
        }
        if checks::all_passed(checks) {
            Ok(())
        } else {
            Err(Failure::Assertion)
        }
    }
}

fn serve(args: ServeArgs) -> Outcome {
    let mut cfg = match &args.config {
        Some(p) => ServiceConfig::load(p)?,
        None => ServiceConfig::default(),
    };
    if let Some(v) = args.listen {
        cfg.listen_addr = v;
    }
    if let Some(v) = args.data_dir {
        cfg.data_dir = v;
    }
    if let Some(v) = args.partitions {
        cfg.default_partitions = v;
    }
    if let Some(v) = args.max_payload {
        cfg.max_frame_payload = v;
    }
    let server = Server::start(cfg)?;
    println!("listening on {}", server.addr());
    std::io::stdout().flush()?;
    server.wait();
    Ok(())
}

fn topic(ctx: &Ctx, cmd: TopicCmd) -> Outcome {
    let agent = ctx.agent()?;
    match cmd {
        TopicCmd::Create { name, partitions } => {
            let info = agent.create_topic(&name, partitions)?;
            ctx.emit(&serde_json::to_value(&info).map_err(Error::from)?, || format!("created {} ({} partitions)", info.name, info.partition_count));
        }
        TopicCmd::List => {
            let topics = agent.topics()?;
            ctx.emit(&serde_json::to_value(&topics).map_err(Error::from)?, || {
                topics.iter().map(|t| format!("{}\t{}", t.name, t.partition_count)).collect::<Vec<_>>().join("\n")
            });
        }
    }
    Ok(())
}

fn publish(ctx: &Ctx, args: PublishArgs) -> Outcome {
    let payload = match (args.data, args.file) {
        (Some(d), _) => d.into_bytes(),
        (None, Some(f)) => std::fs::read(f)?,
        (None, None) => {
            let mut buf = Vec::new();
            std::io::stdin().read_to_end(&mut buf)?;
            buf
        }
    };
    let mut msg = DataMessage::new(args.topic, payload);
    if let Some(k) = args.key {
        msg = msg.with_key(k.into_bytes());
    }
    for (k, v) in args.headers {
        msg = msg.with_header(k, v);
    }
    let r = ctx.agent()?.produce(msg)?;
    ctx.emit(&serde_json::to_value(&r).map_err(Error::from)?, || {
        format!("{} partition {} offset {} ({} bytes, {} parts)", r.topic, r.partition, r.offset, r.bytes, r.parts)
    });
    Ok(())
}

fn tail(ctx: &Ctx, args: TailArgs) -> Outcome {
    if args.topics.is_empty() {
        return Err(Error::InvalidArgument("name at least one topic".into()).into());
    }
    let agent = ctx.agent()?;
    let opts = SubscribeOptions {
        group: args.group,
        start: if args.earliest { StartPosition::Earliest } else { StartPosition::Latest },
        max_count: args.count,
        idle_timeout: args.idle_secs.map(secs).transpose()?,
        raw: args.raw,
        ..Default::default()
    };
    let topics: Vec<&str> = args.topics.iter().map(String::as_str).collect();
    let grouped = opts.group.is_some();
    let mut consumer = agent.subscribe(&topics, opts)?;
    let mut out = std::io::stdout().lock();
    loop {
        match consumer.recv(None) {
            Ok(None) if consumer.ended().is_some() => break,
            Ok(None) => {}
            Ok(Some(d)) => {
                if ctx.json {
                    let line = json!({
                        "topic": d.message.topic, "partition": d.partition, "offset": d.offset,
                        "ts": d.message.ts_pub, "size": d.message.payload.len(),
                        "preview": harness::tail::preview(&d.message.payload, args.format),
                    });
                    writeln!(out, "{line}")?;
                } else {
                    writeln!(out, "{}", harness::format_line(&d, args.format))?;
                }
                out.flush()?;
                if grouped {
                    consumer.commit(&d)?;
                }
            }
            Err(e @ Error::NotConnected(_)) => return Err(e.into()),
            Err(e) => eprintln!("mdml: {e}"),
        }
    }
    Ok(())
}

fn experiment(ctx: &Ctx, cmd: ExperimentCmd) -> Outcome {
    let agent = ctx.agent()?;
    match cmd {
        ExperimentCmd::Start { topics } => {
            let topics: Vec<&str> = topics.iter().map(String::as_str).collect();
            let def = agent.experiment_start(&topics)?;
            ctx.emit(&serde_json::to_value(&def).map_err(Error::from)?, || def.experiment_id.clone());
        }
        ExperimentCmd::Stop { id } => {
            let (path, manifest) = agent.experiment_stop(&id)?;
            let v = json!({"archive": path, "manifest": manifest});
            ctx.emit(&v, || format!("{} {:?}", path.display(), manifest.counts()));
        }
        ExperimentCmd::Replay { id, speed, targets } => {
            let target: BTreeMap<String, String> = targets.into_iter().collect();
            let r = agent.replay(&id, speed, target)?;
            let v = json!({
                "experiment_id": r.experiment_id, "speed": r.speed, "records": r.records,
                "scheduled_span_ns": r.scheduled_span_ns, "actual_span_ns": r.actual_span_ns,
                "max_abs_error_ns": r.max_abs_error_ns,
            });
            ctx.emit(&v, || {
                format!(
                    "replayed {} records of {} at speed {} (max timing error {:.2} ms)",
                    r.records,
                    r.experiment_id,
                    r.speed,
                    r.max_abs_error_ns as f64 / 1e6
                )
            });
        }
        ExperimentCmd::List => {
            let v = agent.list(ListKind::Experiments)?;
            ctx.emit(&v, || serde_json::to_string_pretty(&v).unwrap_or_default());
        }
    }
    Ok(())
}

fn connector(ctx: &Ctx, cmd: ConnectorCmd) -> Outcome {
    let agent = ctx.agent()?;
    match cmd {
        ConnectorCmd::Create { config } => {
            let raw = match config.strip_prefix('@') {
                Some(path) => std::fs::read_to_string(path)?,
                None => config,
            };
            let cfg: ConnectorConfig = serde_json::from_str(&raw).map_err(|e| Error::InvalidArgument(format!("connector config: {e}")))?;
            let v = agent.connector_create(cfg)?;
            ctx.emit(&v, || format!("created {}", v["name"].as_str().unwrap_or_default()));
        }
        ConnectorCmd::Delete { name } => {
            agent.connector_delete(&name)?;
            ctx.emit(&json!({"deleted": name}), || format!("deleted {name}"));
        }
        ConnectorCmd::List => {
            let v = agent.list(ListKind::Connectors)?;
            ctx.emit(&v, || serde_json::to_string_pretty(&v).unwrap_or_default());
        }
    }
    Ok(())
}

fn print_reports(ctx: &Ctx, reports: &[harness::BenchReport], checks: &[Check]) {
    if ctx.json {
        println!("{}", json!({"units": harness::bench::UNITS, "reports": reports, "checks": checks}));
    } else {
        println!("# {}", harness::bench::UNITS);
        for r in reports {
            println!("{}", r.row());
            for n in &r.notes {
                println!("    {n}");
            }
        }
    }
}

fn bench(ctx: &Ctx, cmd: BenchCmd) -> Outcome {
    let cfg = ctx.agent_config()?;
    let (reports, checks, assert) = match cmd {
        BenchCmd::Chunks(a) => {
            let reports = harness::bench_chunks(&cfg, a.payload, &a.chunk_sizes, a.repetitions, a.seed)?;
            let checks = checks::chunk_shape(&reports);
            (reports, checks, a.assert)
        }
        BenchCmd::Scale(a) => {
            let mut reports = Vec::new();
            for &workers in &a.workers {
                let opts = harness::ScaleOptions {
                    workers,
                    payload_size: a.payload,
                    work_factor_ms_per_mb: a.work_factor,
                    duration: secs(a.duration_secs)?,
                    partitions: a.partitions,
                    seed: a.seed,
                };
                reports.push(harness::bench_scale(&cfg, &opts)?);
            }
            let checks = checks::scaling(&reports);
            (reports, checks, a.assert)
        }
        BenchCmd::Stream(a) => {
            let report = harness::bench_stream(&cfg, a.payload, secs(a.duration_secs)?, a.seed)?;
            let checks = vec![checks::rate_floor(&report, a.min_mb_s)];
            (vec![report], checks, a.assert)
        }
    };
    print_reports(ctx, &reports, &checks);
    if assert {
        ctx.verdict(&checks)
    } else {
        Ok(())
    }
}

fn demo(ctx: &Ctx, cmd: DemoCmd) -> Outcome {
    let DemoCmd::Steering { duration_secs, seed, quiet, assert } = cmd;
    let defaults = harness::SteeringOptions::default();
    let opts = harness::SteeringOptions {
        duration: secs(duration_secs)?,
        seed,
        disturbance: if quiet { None } else { defaults.disturbance },
    };
    let transcript = harness::steering_demo(&ctx.agent_config()?, &opts)?;
    let checks = if quiet { vec![checks::steering_quiet(&transcript)] } else { checks::steering_disturbed(&transcript) };
    if ctx.json {
        println!("{}", json!({"transcript": transcript, "excursions": transcript.excursions(), "checks": checks}));
    } else {
        for line in transcript.lines() {
            println!("{line}");
        }
    }
    if assert {
        ctx.verdict(&checks)
    } else {
        Ok(())
    }
}

fn run(cli: Cli) -> Outcome {
    let ctx = Ctx { addr: cli.addr, token: cli.token, json: cli.json };
    match cli.command {
        Command::Serve(a) => serve(a),
        Command::Topic(c) => topic(&ctx, c),
        Command::Publish(a) => publish(&ctx, a),
        Command::Tail(a) => tail(&ctx, a),
        Command::Experiment(c) => experiment(&ctx, c),
        Command::Connector(c) => connector(&ctx, c),
        Command::Bench(c) => bench(&ctx, c),
        Command::Demo(c) => demo(&ctx, c),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    // Clap exits with status 2 on usage errors.
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Assertion) => ExitCode::from(EXIT_ASSERT),
        Err(Failure::Error(e)) => {
            eprintln!("mdml: {e}");
            ExitCode::from(match e {
                Error::BrokerUnreachable(_) => EXIT_UNREACHABLE,
                Error::InvalidArgument(_) => EXIT_USAGE,
                _ => EXIT_FAILURE,
            })
        }
    }
}
