use std::net::SocketAddr;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use tokio::net::TcpListener;
use zoomseg_api::{Bbox2DPrompt, PointPrompt, PromptSetJson};
use zoomseg_client::Client;
use zoomseg_core::eval::{
    run_benchmark, write_phantom_dataset, BenchmarkConfig, Dataset, PromptMode,
};
use zoomseg_core::nifti::{decode_volume, write_mask};
use zoomseg_core::phantom::{large_object, small_object, two_component};
use zoomseg_core::volume::LabelVolume;
use zoomseg_service::{serve, spawn_local, BackendKind, ServiceConfig, BIND_ENV, DEFAULT_PORT};

#[derive(Parser)]
#[command(name = "zoomseg", version, about = "Promptable 3D CT segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP service.
    Serve(ServeArgs),
    /// Segment one volume through the service and write the mask.
    Segment(SegmentArgs),
    /// Evaluate a dataset with simulated prompts and edits.
    Eval(EvalArgs),
    /// Write a synthetic phantom dataset with a manifest.
    Phantoms(PhantomArgs),
}

#[derive(Args, Clone)]
struct EngineArgs {
    /// Service configuration JSON (engine, backend, store sizes).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the backend named in the config.
    #[arg(long)]
    backend: Option<BackendKind>,
}

impl EngineArgs {
    fn load(&self) -> Result<ServiceConfig> {
        let mut cfg = match &self.config {
            Some(p) => {
                ServiceConfig::load(p).with_context(|| format!("reading {}", p.display()))?
            }
            None => ServiceConfig::default(),
        };
        if let Some(b) = self.backend {
            cfg.backend.kind = b;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value_t = DEFAULT_PORT)]
    port: u16,
    /// Host address to bind.
    #[arg(long, env = BIND_ENV, default_value = "127.0.0.1")]
    bind: String,
    #[arg(long)]
    max_volumes: Option<usize>,
    #[arg(long)]
    max_sessions: Option<usize>,
    #[command(flatten)]
    engine: EngineArgs,
}

#[derive(Args)]
struct SegmentArgs {
    #[arg(long)]
    volume: PathBuf,
    /// Positive point `x,y,z`; repeatable.
    #[arg(long, value_parser = parse_point, required_unless_present = "bbox")]
    point: Vec<[usize; 3]>,
    /// Axial box `z,x0,y0,x1,y1`.
    #[arg(long, value_parser = parse_bbox)]
    bbox: Option<Bbox2DPrompt>,
    /// Output mask (`.nii` or `.nii.gz`).
    #[arg(long)]
    out: PathBuf,
    /// Service URL; an embedded server is started when absent.
    #[arg(long)]
    server: Option<String>,
    #[command(flatten)]
    engine: EngineArgs,
}

#[derive(Args)]
struct EvalArgs {
    /// Manifest JSON, or a directory holding `manifest.json`.
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value_t = 3)]
    edits: usize,
    /// JSON report destination.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_values = ["point", "bbox2d"])]
    modes: Vec<ModeArg>,
    #[arg(long, default_value_t = 1000)]
    resamples: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    min_edit_depth: Option<u32>,
    #[command(flatten)]
    engine: EngineArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Point,
    Bbox2d,
}

impl From<ModeArg> for PromptMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Point => PromptMode::Point,
            ModeArg::Bbox2d => PromptMode::Bbox2d,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PhantomKind {
    Small,
    Large,
    TwoComponent,
}

#[derive(Args)]
struct PhantomArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = PhantomKind::Small)]
    kind: PhantomKind,
    #[arg(long, default_value_t = 10)]
    count: u64,
    /// Volume shape `x,y,z`.
    #[arg(long, value_parser = parse_point, default_value = "128,128,64")]
    shape: [usize; 3],
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn parse_csv<const N: usize>(s: &str) -> Result<[usize; N], String> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    parts
        .try_into()
        .map_err(|v: Vec<usize>| format!("expected {N} comma-separated integers, got {}", v.len()))
}

fn parse_point(s: &str) -> Result<[usize; 3], String> {
    parse_csv::<3>(s)
}

fn parse_bbox(s: &str) -> Result<Bbox2DPrompt, String> {
    let [z, x0, y0, x1, y1] = parse_csv::<5>(s)?;
    Ok(Bbox2DPrompt::new(z, [x0, y0, x1, y1]))
}

#[tokio::main]
async fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    match Cli::parse().command {
        Command::Serve(a) => run_serve(a).await,
        Command::Segment(a) => run_segment(a).await,
        Command::Eval(a) => tokio::task::spawn_blocking(move || run_eval(a)).await?,
        Command::Phantoms(a) => run_phantoms(a),
    }
}

async fn run_serve(a: ServeArgs) -> Result<()> {
    let mut cfg = a.engine.load()?;
    if let Some(k) = a.max_volumes {
        cfg.max_volumes = k;
    }
    if let Some(k) = a.max_sessions {
        cfg.max_sessions = k;
    }
    cfg.validate()?;
    let addr: SocketAddr = format!("{}:{}", a.bind, a.port)
        .parse()
        .with_context(|| format!("invalid bind address {}:{}", a.bind, a.port))?;
    let listener = TcpListener::bind(addr)
        .await
        .with_context(|| format!("binding {addr}"))?;
    tracing::info!(%addr, backend = ?cfg.backend.kind, "listening");
    tokio::select! {
        r = serve(&cfg, listener) => r?,
        _ = tokio::signal::ctrl_c() => tracing::info!("shutting down"),
    }
    Ok(())
}

async fn run_segment(a: SegmentArgs) -> Result<()> {
    let bytes =
        std::fs::read(&a.volume).with_context(|| format!("reading {}", a.volume.display()))?;
    let (client, _server) = match &a.server {
        Some(url) => (Client::new(url.clone()), None),
        None => {
            let (addr, handle) = spawn_local(a.engine.load()?).await?;
            (Client::new(format!("http://{addr}")), Some(handle))
        }
    };
    let vol = client.upload_volume(bytes).await?;
    let prompts = PromptSetJson {
        points: a.point.iter().map(|&p| PointPrompt::positive(p)).collect(),
        bbox: a.bbox,
    };
    let s = client.create_session(vol.volume_id, prompts).await?;
    let nifti = client.mask_nifti(s.session_id).await?;
    let mask = decode_volume(&nifti)?;
    let mask = LabelVolume::new(
        *mask.meta(),
        mask.data().iter().map(|&v| (v != 0.0) as u8).collect(),
    )?;
    write_mask(&mask, &a.out)?;
    println!("{}", serde_json::to_string_pretty(&s)?);
    Ok(())
}

fn run_eval(a: EvalArgs) -> Result<()> {
    let cfg = a.engine.load()?;
    let backend = cfg.build_backend()?;
    let mut bench = BenchmarkConfig {
        engine: cfg.engine.clone(),
        edit_rounds: a.edits,
        modes: a.modes.iter().map(|&m| m.into()).collect(),
        bootstrap_resamples: a.resamples,
        ..BenchmarkConfig::default()
    };
    if let Some(s) = a.seed {
        bench.seed = s;
    }
    if let Some(d) = a.min_edit_depth {
        bench.min_edit_depth = d;
    }
    let ds = Dataset::open(&a.manifest)?;
    let report = run_benchmark(&ds, backend.as_ref(), &bench)?;
    if let Some(path) = &a.report {
        std::fs::write(path, serde_json::to_vec_pretty(&report)?)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    print!("{}", report.table());
    Ok(())
}

fn run_phantoms(a: PhantomArgs) -> Result<()> {
    if a.count == 0 {
        bail!("--count must be positive");
    }
    let cases: Vec<_> = (0..a.count)
        .map(|i| {
            let seed = a.seed + i;
            let (label, ph) = match a.kind {
                PhantomKind::Small => ("small", small_object(a.shape, seed)),
                PhantomKind::Large => ("large", large_object(a.shape, seed)),
                PhantomKind::TwoComponent => ("target", two_component(a.shape, seed).0),
            };
            (format!("{label}{i:03}"), label.to_string(), ph)
        })
        .collect();
    let path = write_phantom_dataset(&a.out, &cases)?;
    println!("{}", path.display());
    Ok(())
}
