//! The `ara` command line.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::PathBuf;

use anyhow::{bail, Context};
use ara_core::inventory::{NodeId, NodeRole};
use ara_core::lab::{LaunchSpec, LeaseSpec};
use ara_core::lease::{Interval, Lease, LeaseId, LeaseState, SpectrumBlock};
use ara_core::metrics::Layer;
use ara_core::ric::{RegistryFile, XAppConfig};
use ara_core::telemetry::TelemetryKind;
use clap::{Args, Parser, Subcommand};
use futures::StreamExt;
use serde::Serialize;

use crate::client::{ApiClient, ClientError};
use crate::config::{Accounts, Deployment, ServerConfig};
use crate::demo::{run_demo, DemoOptions};

#[derive(Debug, Parser)]
#[command(name = "ara", version, about = "Desk-scale O-RAN living lab")]
pub struct Cli {
    /// Base URL of the lab service.
    #[arg(long, global = true, env = "ARA_API", default_value = "http://127.0.0.1:8080")]
    pub api: String,
    #[arg(long, global = true, env = "ARA_TOKEN", default_value = "demo-token", hide_env_values = true)]
    pub token: String,
    #[arg(long, global = true, env = "ARA_SEED", default_value_t = 42)]
    pub seed: u64,
    /// `phase1`, `sandbox`, or a path to an inventory file.
    #[arg(long, global = true, env = "ARA_DEPLOYMENT", default_value = "phase1")]
    pub deployment: Deployment,
    /// Print raw JSON instead of tables.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub cmd: Cmd,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Run the lab service.
    Serve(ServeArgs),
    #[command(subcommand)]
    Nodes(NodesCmd),
    /// Per-base-station coverage report.
    Coverage,
    #[command(subcommand)]
    Lease(LeaseCmd),
    #[command(subcommand)]
    Image(ImageCmd),
    #[command(subcommand)]
    Session(SessionCmd),
    #[command(subcommand)]
    Xapp(XappCmd),
    #[command(subcommand)]
    Metrics(MetricsCmd),
    #[command(subcommand)]
    Chart(ChartCmd),
    #[command(subcommand)]
    Telemetry(TelemetryCmd),
    #[command(subcommand)]
    Clock(ClockCmd),
    #[command(subcommand)]
    Demo(DemoCmd),
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, env = "ARA_LISTEN", default_value = "127.0.0.1:8080")]
    pub listen: SocketAddr,
    /// Accept external E2-lite agents on this address.
    #[arg(long, env = "ARA_E2_LISTEN")]
    pub e2_listen: Option<SocketAddr>,
    /// Accounts TOML; defaults to the bundled demo accounts.
    #[arg(long, env = "ARA_ACCOUNTS")]
    pub accounts: Option<PathBuf>,
    /// xApp registry TOML; defaults to the bundled registry.
    #[arg(long, env = "ARA_XAPPS")]
    pub xapps: Option<PathBuf>,
    /// Advance virtual time with wall time at this period; 0 keeps a manual clock.
    #[arg(long, env = "ARA_TICK_MS", default_value_t = 100)]
    pub tick_ms: u64,
    #[arg(long, default_value_t = 1024)]
    pub stream_buffer: usize,
}

#[derive(Debug, Subcommand)]
pub enum NodesCmd {
    List {
        /// base-station, fixed-ue, mobile-ue or sandbox-host
        #[arg(long)]
        role: Option<String>,
        #[arg(long)]
        site: Option<String>,
    },
}

#[derive(Debug, Subcommand)]
pub enum LeaseCmd {
    Request {
        /// Node ids, comma separated or repeated.
        #[arg(long = "nodes", alias = "node", required = true, value_delimiter = ',')]
        nodes: Vec<String>,
        /// Center frequency, MHz.
        #[arg(long)]
        center: f64,
        /// Bandwidth, MHz.
        #[arg(long)]
        bandwidth: f64,
        /// Start, virtual ms; defaults to now.
        #[arg(long)]
        start: Option<u64>,
        /// End, virtual ms.
        #[arg(long, conflicts_with = "duration")]
        end: Option<u64>,
        /// Length, ms.
        #[arg(long, default_value_t = 3_600_000)]
        duration: u64,
        #[arg(long = "image", value_delimiter = ',')]
        images: Vec<String>,
    },
    List,
    Show { id: u64 },
    Terminate { id: u64 },
}

#[derive(Debug, Subcommand)]
pub enum ImageCmd {
    List,
}

#[derive(Debug, Subcommand)]
pub enum SessionCmd {
    Launch {
        #[arg(long)]
        lease: u64,
        /// `node=image`; nodes left out get gnb-ric or nrue by role.
        #[arg(long = "image", value_delimiter = ',')]
        images: Vec<String>,
        /// Run base stations as separate CU and DU agents.
        #[arg(long)]
        split: bool,
        /// `LAYER=ms` median override, e.g. MAC=12.
        #[arg(long = "median", value_delimiter = ',')]
        medians: Vec<String>,
    },
    List,
    Status { id: u64 },
    Stop { id: u64 },
}

#[derive(Debug, Subcommand)]
pub enum XappCmd {
    List,
    /// Register every xApp in a registry TOML file.
    Register { file: PathBuf },
    /// State of the RIC that serves external agents.
    Byod,
}

#[derive(Debug, Subcommand)]
pub enum MetricsCmd {
    Tail {
        #[arg(long)]
        session: u64,
        /// Only indications with a larger event id.
        #[arg(long, default_value_t = 0)]
        after: u64,
        /// Keep streaming live indications.
        #[arg(long, short)]
        follow: bool,
        /// Stop after this many indications.
        #[arg(long)]
        limit: Option<usize>,
    },
}

#[derive(Debug, Subcommand)]
pub enum ChartCmd {
    Export {
        #[arg(long)]
        session: u64,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum TelemetryCmd {
    /// Ingest a CSV file.
    Ingest {
        #[arg(long)]
        kind: TelemetryKind,
        file: PathBuf,
    },
    Query {
        #[arg(long)]
        kind: TelemetryKind,
        #[arg(long)]
        source: Option<String>,
        #[arg(long, default_value_t = 0)]
        start: u64,
        #[arg(long)]
        end: Option<u64>,
        #[arg(long)]
        csv: bool,
    },
    Watermarks,
}

#[derive(Debug, Subcommand)]
pub enum ClockCmd {
    Show,
    Advance {
        #[arg(long, required_unless_present = "to")]
        ms: Option<u64>,
        #[arg(long)]
        to: Option<u64>,
    },
}

#[derive(Debug, Subcommand)]
pub enum DemoCmd {
    /// Run the workflow against an in-process lab.
    Run {
        /// Virtual ms to run after launch.
        #[arg(long, default_value_t = 5_000)]
        run_ms: u64,
        /// Write the chart CSV here.
        #[arg(long)]
        chart: Option<PathBuf>,
        /// Use the service at --api instead of an in-process lab.
        #[arg(long)]
        remote: bool,
    },
}

fn kind_name(k: TelemetryKind) -> &'static str {
    match k {
        TelemetryKind::Weather => "weather",
        TelemetryKind::Spectrum => "spectrum",
    }
}

fn print_json<T: Serialize>(v: &T) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn parse_pairs(items: &[String]) -> anyhow::Result<Vec<(String, String)>> {
    items
        .iter()
        .map(|s| match s.split_once('=') {
            Some((k, v)) if !k.is_empty() && !v.is_empty() => Ok((k.trim().to_string(), v.trim().to_string())),
            _ => bail!("expected KEY=VALUE, got {s:?}"),
        })
        .collect()
}

fn parse_layer(s: &str) -> anyhow::Result<Layer> {
    serde_json::from_value(serde_json::Value::String(s.to_ascii_uppercase())).with_context(|| format!("unknown layer {s:?}"))
}

fn lease_row(l: &Lease) -> String {
    let nodes: Vec<_> = l.request.node_ids.iter().map(|n| n.0.as_str()).collect();
    format!(
        "{:<5} {:<10} {:<8} {:>7.1}/{:<5.1} [{}, {})  {}",
        l.lease_id.0,
        format!("{:?}", l.state),
        l.request.requester,
        l.request.spectrum.center,
        l.request.spectrum.bandwidth,
        l.request.interval.start,
        l.request.interval.end,
        nodes.join(",")
    )
}

fn explain_rejection(l: &Lease) -> String {
    let mut out = format!("lease {} rejected", l.lease_id);
    for c in &l.conflicts {
        out.push_str(&format!("\n  conflict: {c}"));
    }
    out
}

pub async fn run(cli: Cli) -> anyhow::Result<()> {
    let api = ApiClient::new(&cli.api, &cli.token);
    let json = cli.json;
    match cli.cmd {
        Cmd::Serve(args) => serve(args, cli.seed, cli.deployment).await,
        Cmd::Nodes(NodesCmd::List { role, site }) => {
            let nodes = api.nodes(role.as_deref(), site.as_deref()).await?;
            if json {
                return print_json(&nodes);
            }
            for n in nodes {
                let radios: Vec<_> = n.radios.iter().map(|r| format!("{:?}", r.model_class)).collect();
                println!("{:<16} {:<14} {:<13} {}", n.node_id.0, n.site_id.0, serde_json::to_value(n.role)?.as_str().unwrap_or(""), radios.join(","));
            }
            Ok(())
        }
        Cmd::Coverage => print_json(&api.coverage().await?),
        Cmd::Image(ImageCmd::List) => {
            let images = api.images().await?;
            if json {
                return print_json(&images);
            }
            for i in images {
                println!("{:<12} {:<14} {}", i.name, serde_json::to_value(i.role_tag)?.as_str().unwrap_or(""), i.digest);
            }
            Ok(())
        }
        Cmd::Lease(cmd) => lease(&api, cmd, json).await,
        Cmd::Session(cmd) => session(&api, cmd, json).await,
        Cmd::Xapp(XappCmd::List) => print_json(&api.xapps().await?),
        Cmd::Xapp(XappCmd::Register { file }) => {
            let text = std::fs::read_to_string(&file).with_context(|| format!("reading {}", file.display()))?;
            let reg = RegistryFile::load(&text)?;
            for x in &reg.xapps {
                let cfg: XAppConfig = api.register_xapp(x).await?;
                println!("registered {}", cfg.id());
            }
            Ok(())
        }
        Cmd::Xapp(XappCmd::Byod) => print_json(&api.byod().await?),
        Cmd::Metrics(MetricsCmd::Tail { session, after, follow, limit }) => tail(&api, session, after, follow, limit).await,
        Cmd::Chart(ChartCmd::Export { session, out }) => {
            let csv = api.chart(session).await?;
            match out {
                Some(p) => {
                    std::fs::write(&p, &csv).with_context(|| format!("writing {}", p.display()))?;
                    let rows = csv.iter().filter(|&&b| b == b'\n').count().saturating_sub(1);
                    println!("wrote {rows} rows to {}", p.display());
                }
                None => print!("{}", String::from_utf8_lossy(&csv)),
            }
            Ok(())
        }
        Cmd::Telemetry(TelemetryCmd::Ingest { kind, file }) => {
            let body = std::fs::read(&file).with_context(|| format!("reading {}", file.display()))?;
            let rep = api.ingest_csv(kind_name(kind), body).await?;
            println!("ingested {} records", rep.ids.len());
            Ok(())
        }
        Cmd::Telemetry(TelemetryCmd::Query { kind, source, start, end, csv }) => {
            if csv {
                let body = api.telemetry_csv(kind_name(kind), source.as_deref(), start, end).await?;
                print!("{}", String::from_utf8_lossy(&body));
                Ok(())
            } else {
                print_json(&api.telemetry(kind_name(kind), source.as_deref(), start, end).await?)
            }
        }
        Cmd::Telemetry(TelemetryCmd::Watermarks) => print_json(&api.watermarks().await?),
        Cmd::Clock(ClockCmd::Show) => print_json(&api.clock().await?),
        Cmd::Clock(ClockCmd::Advance { ms, to }) => {
            let rep = match (ms, to) {
                (Some(dt), None) => api.advance(dt).await?,
                (None, Some(t)) => api.advance_to(t).await?,
                _ => bail!("give exactly one of --ms or --to"),
            };
            print_json(&rep)
        }
        Cmd::Demo(DemoCmd::Run { run_ms, chart, remote }) => {
            let opts = DemoOptions { run_ms, ..DemoOptions::default() };
            let report = if remote {
                run_demo(&api, &opts).await?
            } else {
                let mut cfg = ServerConfig::new(cli.deployment, cli.seed);
                cfg.listen = ([127, 0, 0, 1], 0).into();
                let server = crate::server::start(&cfg).await?;
                let local = ApiClient::new(server.url(), &cli.token);
                let out = run_demo(&local, &opts).await;
                server.shutdown().await?;
                out?
            };
            println!("{}", report.summary());
            if let Some(p) = chart {
                std::fs::write(&p, &report.chart).with_context(|| format!("writing {}", p.display()))?;
                println!("chart written to {}", p.display());
            }
            println!("done in {:.2}s", report.wall.as_secs_f64());
            Ok(())
        }
    }
}

async fn serve(args: ServeArgs, seed: u64, deployment: Deployment) -> anyhow::Result<()> {
    let mut cfg = ServerConfig::new(deployment, seed);
    cfg.listen = args.listen;
    cfg.e2_listen = args.e2_listen;
    cfg.tick_ms = (args.tick_ms > 0).then_some(args.tick_ms);
    cfg.stream_buffer = args.stream_buffer.max(1);
    if let Some(p) = args.accounts {
        let text = std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
        cfg.accounts = Accounts::parse(&text)?;
    }
    if let Some(p) = args.xapps {
        let text = std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
        cfg.registry = RegistryFile::load(&text)?;
    }
    crate::server::run_until(&cfg, async {
        let _ = tokio::signal::ctrl_c().await;
    })
    .await
}

async fn lease(api: &ApiClient, cmd: LeaseCmd, json: bool) -> anyhow::Result<()> {
    match cmd {
        LeaseCmd::Request { nodes, center, bandwidth, start, end, duration, images } => {
            let start = match start {
                Some(s) => s,
                None => api.clock().await?.now,
            };
            let spec = LeaseSpec {
                node_ids: nodes.into_iter().map(NodeId).collect(),
                spectrum: SpectrumBlock::new(center, bandwidth),
                interval: Interval::new(start, end.unwrap_or(start.saturating_add(duration))),
                images,
            };
            match api.request_lease(&spec).await {
                Ok(l) => {
                    if json {
                        return print_json(&l);
                    }
                    println!("lease {} {:?}", l.lease_id, l.state);
                    println!("{}", lease_row(&l));
                    Ok(())
                }
                Err(ClientError::Api { envelope, .. }) if envelope.code == "lease_conflict" => {
                    match serde_json::from_value::<Lease>(envelope.detail.clone()) {
                        Ok(l) if l.state == LeaseState::Rejected => bail!("{}", explain_rejection(&l)),
                        _ => bail!("{}: {}", envelope.code, envelope.message),
                    }
                }
                Err(e) => Err(e.into()),
            }
        }
        LeaseCmd::List => {
            let leases = api.leases().await?;
            if json {
                return print_json(&leases);
            }
            for l in &leases {
                println!("{}", lease_row(l));
            }
            Ok(())
        }
        LeaseCmd::Show { id } => print_json(&api.lease(id).await?),
        LeaseCmd::Terminate { id } => {
            let l = api.terminate_lease(id).await?;
            println!("lease {} {:?}", l.lease_id, l.state);
            Ok(())
        }
    }
}

async fn session(api: &ApiClient, cmd: SessionCmd, json: bool) -> anyhow::Result<()> {
    match cmd {
        SessionCmd::Launch { lease, images, split, medians } => {
            let l = api.lease(lease).await?;
            let mut map = crate::api::parse_image_map(images.iter().map(String::as_str)).map_err(anyhow::Error::msg)?;
            let missing: Vec<_> = l.request.node_ids.iter().filter(|n| !map.contains_key(*n)).cloned().collect();
            if !missing.is_empty() {
                let nodes = api.nodes(None, None).await?;
                for id in missing {
                    let role = nodes.iter().find(|n| n.node_id == id).map(|n| n.role);
                    let img = match role {
                        Some(NodeRole::BaseStation) => "gnb-ric",
                        Some(r) if r.is_ue() => "nrue",
                        _ => bail!("no image given for {id} and none can be inferred"),
                    };
                    map.insert(id, img.to_string());
                }
            }
            let mut layer_medians = BTreeMap::new();
            for (k, v) in parse_pairs(&medians)? {
                layer_medians.insert(parse_layer(&k)?, v.parse::<f64>().with_context(|| format!("bad median {v:?}"))?);
            }
            let view = api.launch(&LaunchSpec { lease_id: LeaseId(lease), images: map, split, layer_medians }).await?;
            if json {
                return print_json(&view);
            }
            println!("session {} {:?}", view.status.session_id, view.status.state);
            for c in &view.status.containers {
                println!("  {:<20} {:<14} {:<10} {:?}", c.container_id, c.node_id.0, c.image, c.state);
            }
            for a in &view.attachments {
                println!("  ue {} -> {}", a.ue.0, a.agent_id.as_deref().or(a.error.as_deref()).unwrap_or("-"));
            }
            Ok(())
        }
        SessionCmd::List => {
            let views = api.sessions().await?;
            if json {
                return print_json(&views);
            }
            for v in views {
                println!(
                    "{:<5} lease {:<5} {:<9} {} indications, {} actions",
                    v.status.session_id,
                    v.status.lease_id,
                    format!("{:?}", v.status.state),
                    v.indications_routed,
                    v.control_actions.len()
                );
            }
            Ok(())
        }
        SessionCmd::Status { id } => print_json(&api.session(id).await?),
        SessionCmd::Stop { id } => {
            let v = api.stop_session(id).await?;
            println!("session {} {:?}", v.status.session_id, v.status.state);
            Ok(())
        }
    }
}

async fn tail(api: &ApiClient, session: u64, after: u64, follow: bool, limit: Option<usize>) -> anyhow::Result<()> {
    let limit = limit.unwrap_or(usize::MAX);
    let mut shown = 0;
    if !follow {
        for r in api.metrics(session, after).await?.into_iter().take(limit) {
            println!("{}", serde_json::to_string(&r)?);
        }
        return Ok(());
    }
    let stream = api.live(session, after).await?;
    futures::pin_mut!(stream);
    while shown < limit {
        match stream.next().await {
            Some(ev) => {
                println!("{}", serde_json::to_string(&ev?)?);
                shown += 1;
            }
            None => break,
        }
    }
    Ok(())
}
