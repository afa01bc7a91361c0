use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use tracing_subscriber::EnvFilter;

use eoq_core::eoq::QueueDirection;
use eoq_core::frame_io::Fps;
use eoq_core::geoloc::Projection;
use eoq_core::pipeline::{run, PipelineConfig, SharedState, Sinks, SourceMode, Sources};
use eoq_core::synth::{queue_scene, single_vehicle_scene, SceneRenderer, SceneSpec};

/// End-of-Queue detection for aerial traffic video.
#[derive(Debug, Parser)]
#[command(name = "eoq", version, args_conflicts_with_subcommands = true, subcommand_negates_reqs = true)]
struct Cli {
    #[command(subcommand)]
    command: Option<Command>,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the pipeline (the default when no subcommand is given).
    Run(RunArgs),
    /// Render a synthetic scene with telemetry and ground truth.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Frame stream, or `-` for a live feed on stdin.
    #[arg(long, required = true)]
    input: Option<PathBuf>,
    /// Telemetry lines, or `-` for stdin.
    #[arg(long)]
    telemetry: Option<PathBuf>,
    /// Frame rate overriding the stream header, `N` or `N/D`.
    #[arg(long, value_parser = parse_fps)]
    fps_override: Option<Fps>,
    #[arg(long)]
    blur: Option<u32>,
    #[arg(long)]
    dilate: Option<u32>,
    #[arg(long)]
    min_blob_area: Option<u64>,
    #[arg(long)]
    max_blob_area: Option<u64>,
    #[arg(long, conflicts_with = "posted_limit_mph")]
    speed_threshold_mph: Option<f64>,
    /// Queue threshold becomes a third of this limit.
    #[arg(long)]
    posted_limit_mph: Option<f64>,
    /// `ltr` or `rtl`.
    #[arg(long)]
    direction: Option<QueueDirection>,
    /// `pinhole` or `paper`.
    #[arg(long, value_parser = parse_projection)]
    projection: Option<Projection>,
    #[arg(long)]
    speed_cal: Option<f64>,
    #[arg(long)]
    warmup: Option<u64>,
    /// Oldest usable telemetry value, in seconds.
    #[arg(long)]
    max_staleness: Option<f64>,
    /// Horizontal field of view in degrees.
    #[arg(long)]
    fov_h: Option<f64>,
    /// Frames spanned by each speed estimate.
    #[arg(long)]
    speed_window: Option<u64>,
    /// Frames a new End-of-Queue must persist before it is published.
    #[arg(long)]
    hysteresis: Option<u32>,
    /// Serve the control endpoint on this port (0 picks one).
    #[arg(long)]
    serve: Option<u16>,
    /// Keep serving this many seconds after the input ends.
    #[arg(long, default_value_t = 0.0, requires = "serve")]
    linger: f64,
    /// End-of-Queue records as JSON lines; `-` for stdout.
    #[arg(long)]
    out_eoq: Option<PathBuf>,
    /// Per-frame reports as JSON lines.
    #[arg(long)]
    out_report: Option<PathBuf>,
    /// Foreground masks as a frame stream.
    #[arg(long)]
    dump_masks: Option<PathBuf>,
    /// Retired tracks as JSON lines.
    #[arg(long)]
    dump_tracks: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("scene").required(true).args(["spec", "queue", "single_mph"])))]
struct SynthArgs {
    /// Scene description as JSON.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Random queue scene with this many vehicles (3 to 8).
    #[arg(long)]
    queue: Option<usize>,
    /// One vehicle crossing at this speed.
    #[arg(long)]
    single_mph: Option<f64>,
    #[arg(long, default_value_t = 10.0)]
    duration: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_video: PathBuf,
    #[arg(long)]
    out_telemetry: PathBuf,
    #[arg(long)]
    out_truth: Option<PathBuf>,
    /// Write the resolved scene description.
    #[arg(long)]
    out_spec: Option<PathBuf>,
}

fn parse_fps(s: &str) -> Result<Fps, String> {
    let (num, den) = s.split_once('/').unwrap_or((s, "1"));
    let num = num.trim().parse().map_err(|_| format!("bad numerator in {s:?}"))?;
    let den = den.trim().parse().map_err(|_| format!("bad denominator in {s:?}"))?;
    Fps::new(num, den).map_err(|e| e.to_string())
}

fn parse_projection(s: &str) -> Result<Projection, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|_| format!("unknown projection {s:?}, expected pinhole or paper"))
}

fn is_stdio(p: &Path) -> bool {
    p.as_os_str() == "-"
}

fn create(p: &Path) -> Result<Box<dyn Write + Send>> {
    if is_stdio(p) {
        return Ok(Box::new(io::stdout()));
    }
    let f = File::create(p).with_context(|| format!("creating {}", p.display()))?;
    Ok(Box::new(BufWriter::new(f)))
}

impl RunArgs {
    fn config(&self) -> PipelineConfig {
        let mut c = PipelineConfig::default();
        macro_rules! set {
            ($($arg:ident => $field:ident),* $(,)?) => {
                $(if let Some(v) = self.$arg { c.$field = v; })*
            };
        }
        set!(
            blur => blur,
            dilate => dilation,
            min_blob_area => min_blob_area,
            max_blob_area => max_blob_area,
            speed_threshold_mph => speed_threshold_mph,
            direction => direction,
            projection => projection,
            speed_cal => speed_cal,
            warmup => warmup,
            max_staleness => max_staleness_s,
            fov_h => fov_h_deg,
            speed_window => speed_window,
            hysteresis => hysteresis,
        );
        c.posted_limit_mph = self.posted_limit_mph;
        c.serve_port = self.serve;
        c
    }
}

fn run_pipeline(args: RunArgs) -> Result<()> {
    let input = args.input.clone().context("--input is required")?;
    let live = is_stdio(&input);
    if live && args.telemetry.as_deref().is_some_and(is_stdio) {
        bail!("video and telemetry cannot both come from stdin");
    }
    let config = args.config();
    let shared = SharedState::new(config)?;

    let video: Box<dyn Read + Send> = if live {
        Box::new(io::stdin())
    } else {
        Box::new(BufReader::new(File::open(&input).with_context(|| format!("opening {}", input.display()))?))
    };
    let telemetry: Option<Box<dyn io::BufRead + Send>> = match &args.telemetry {
        None => {
            tracing::warn!("no telemetry source, no End-of-Queue can be located");
            None
        }
        Some(p) if is_stdio(p) => Some(Box::new(BufReader::new(io::stdin()))),
        Some(p) => Some(Box::new(BufReader::new(File::open(p).with_context(|| format!("opening {}", p.display()))?))),
    };
    let eoq_to_stdout = args.out_eoq.as_deref().is_some_and(is_stdio);
    let sinks = Sinks {
        eoq: args.out_eoq.as_deref().map(create).transpose()?,
        report: args.out_report.as_deref().map(create).transpose()?,
        masks: args.dump_masks.as_deref().map(create).transpose()?,
        tracks: args.dump_tracks.as_deref().map(create).transpose()?,
    };

    let server = match args.serve {
        Some(port) => Some(eoq_serve::serve(shared.clone(), port)?),
        None => None,
    };
    if let Some(s) = &server {
        eprintln!("control endpoint on http://{}", s.addr());
    }

    let sources = Sources {
        video,
        telemetry,
        mode: if live { SourceMode::Live } else { SourceMode::Replay },
        fps_override: args.fps_override,
    };
    let summary = run(sources, shared, sinks)?;
    let text = serde_json::to_string(&summary)?;
    if eoq_to_stdout {
        eprintln!("{text}");
    } else {
        println!("{text}");
    }
    if let Some(s) = server {
        std::thread::sleep(Duration::from_secs_f64(args.linger.max(0.0)));
        s.shutdown();
    }
    Ok(())
}

fn synth(args: SynthArgs) -> Result<()> {
    let spec = match (&args.spec, args.queue, args.single_mph) {
        (Some(p), _, _) => SceneSpec::from_json(&std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)?,
        (_, Some(n), _) => {
            if !(3..=8).contains(&n) {
                bail!("--queue takes 3 to 8 vehicles, got {n}");
            }
            let q = queue_scene(args.seed, n, args.duration);
            tracing::info!(eoq_vehicle = q.eoq_vehicle, "queue scene");
            q.spec
        }
        (_, _, Some(mph)) => single_vehicle_scene(mph, args.duration),
        _ => unreachable!("clap requires one scene source"),
    };
    let renderer = SceneRenderer::new(&spec, args.seed)?;
    renderer.write_video(BufWriter::new(File::create(&args.out_video)?))?.flush()?;
    std::fs::write(&args.out_telemetry, renderer.telemetry_text())?;
    if let Some(p) = &args.out_truth {
        renderer.write_truth(BufWriter::new(File::create(p)?))?.flush()?;
    }
    if let Some(p) = &args.out_spec {
        std::fs::write(p, serde_json::to_string_pretty(&spec)?)?;
    }
    eprintln!("{} frames of {}x{}", renderer.frame_count(), spec.width, spec.height);
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_env("EOQ_LOG_LEVEL").unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(io::stderr)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Some(Command::Synth(a)) => synth(a),
        Some(Command::Run(a)) => run_pipeline(a),
        None => run_pipeline(cli.run),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
