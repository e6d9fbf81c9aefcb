use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use evflow::denoise::{classified_csv, classify, DenoiseConfig};
use evflow::distance::PerturbationSpec;
use evflow::imu::ImuSeries;
use evflow::metrics::{report_csv, report_text};
use evflow::pipeline::{run_eval, run_flow, GroundTruth, PipelineConfig};
use evflow::render::{render_dense, render_sparse};
use evflow::sim::{simulate, PatternKind, ScenePattern, SimConfig};
use evflow::solver::{EventFlow, FlowField};
use evflow::{flo, Error, EventStream, Result, SensorGeometry};

#[derive(Parser)]
#[command(name = "evflow", version, about = "Per-event optical flow for DVS event streams")]
struct Cli {
    /// Log progress (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate flow for every window of an event file.
    Flow(FlowArgs),
    /// Generate a synthetic event sequence with ground truth.
    Simulate(SimulateArgs),
    /// Score estimated flow against sparse or IMU ground truth.
    Eval(EvalArgs),
    /// Draw flow artifacts as PPM images.
    Render(RenderArgs),
}

macro_rules! overrides {
    ($($field:ident),* $(,)?) => {
        /// Pipeline settings. Flags take precedence over `--config`.
        #[derive(Args, Default)]
        struct Overrides {
            /// Flat `key = value` config file.
            #[arg(long)]
            config: Option<PathBuf>,
            $(
                #[arg(long, value_name = "VALUE")]
                $field: Option<String>,
            )*
        }

        impl Overrides {
            fn pairs(&self) -> Vec<(&'static str, Option<&String>)> {
                vec![$((stringify!($field), self.$field.as_ref())),*]
            }
        }
    };
}

overrides!(
    delta_t_us,
    tau_us,
    denoise,
    stride_us,
    t_start_us,
    boundary_margin_px,
    kernel,
    lambda,
    sigma,
    outer_iters,
    inner_iters,
    gnc_stages,
    convergence_tol,
    sor_omega,
    warm_start,
    threads,
    write_dense,
    magnitude_floor,
    angle,
    raee,
    calib_window_us,
    time_offset_us,
    imu_axes,
);

impl Overrides {
    fn resolve(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(path) => PipelineConfig::read(path)?,
            None => PipelineConfig::default(),
        };
        for (key, value) in self.pairs() {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct FlowArgs {
    /// Event CSV (`t_us,x,y,p`).
    events: PathBuf,
    /// Geometry sidecar; defaults to `geometry.txt` beside the events.
    #[arg(long)]
    geometry: Option<PathBuf>,
    /// Output directory.
    #[arg(short, long, default_value = "flow_out")]
    out: PathBuf,
    /// Also write `events_classified.csv` with a noise class per event.
    #[arg(long)]
    dump_classified: bool,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, default_value = "translating_square")]
    pattern: String,
    #[arg(long, default_value_t = 128)]
    width: u32,
    #[arg(long, default_value_t = 96)]
    height: u32,
    #[arg(long, default_value_t = 100_000)]
    duration_us: i64,
    /// Log-intensity threshold.
    #[arg(long, default_value_t = 0.2)]
    ell: f64,
    #[arg(long, default_value_t = 100)]
    sample_dt_us: i64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Fraction of true events dropped.
    #[arg(long, default_value_t = 0.0)]
    holes: f64,
    /// False events per pixel per second.
    #[arg(long, default_value_t = 0.0)]
    false_rate: f64,
    /// Velocity in px/s.
    #[arg(long, default_value_t = 200.0, allow_hyphen_values = true)]
    vx: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    vy: f64,
    /// Rotation rate in rad/s.
    #[arg(long, default_value_t = 2.0, allow_hyphen_values = true)]
    omega: f64,
    /// Square side, bar length or checker cell in pixels.
    #[arg(long, default_value_t = 24.0)]
    size: f64,
    /// Object to background intensity ratio.
    #[arg(long, default_value_t = std::f64::consts::E)]
    contrast: f64,
    #[arg(short, long, default_value = "sim_out")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportFormat {
    Text,
    Csv,
}

#[derive(Args)]
struct EvalArgs {
    /// Estimated flow CSV (`t_us,x,y,u_pps,v_pps`).
    estimate: PathBuf,
    /// Sparse ground-truth CSV in the same format.
    #[arg(long, conflicts_with = "imu", required_unless_present = "imu")]
    gt: Option<PathBuf>,
    /// Gyroscope CSV (`t_us,wx,wy,wz`); needs `--geometry`.
    #[arg(long, requires = "geometry")]
    imu: Option<PathBuf>,
    #[arg(long)]
    geometry: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "text")]
    format: ReportFormat,
    /// Row label in the report.
    #[arg(long, default_value = "evflow")]
    label: String,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct RenderArgs {
    /// Directory written by `flow`.
    flow_dir: PathBuf,
    /// Geometry sidecar, needed for per-event images.
    #[arg(long)]
    geometry: Option<PathBuf>,
    /// Arrow spacing in pixels.
    #[arg(long, default_value_t = 8)]
    spacing: usize,
    #[arg(short, long, default_value = "render_out")]
    out: PathBuf,
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn sidecar_for(events: &Path) -> PathBuf {
    events.with_file_name("geometry.txt")
}

fn cmd_flow(args: &FlowArgs) -> Result<()> {
    let cfg = args.overrides.resolve()?;
    let geometry_path = args.geometry.clone().unwrap_or_else(|| sidecar_for(&args.events));
    let geometry = SensorGeometry::read(&geometry_path)?;
    let stream = EventStream::read_csv(&args.events, geometry)?;
    log::info!("read {} events from {}", stream.len(), args.events.display());
    let summary = run_flow(&stream, &cfg, &args.out)?;
    if args.dump_classified {
        let labelled = classify(&stream, &DenoiseConfig::new(cfg.tau_us)?);
        write(&args.out.join("events_classified.csv"), classified_csv(&labelled))?;
    }
    eprint!("{}", summary.timing_report());
    Ok(())
}

fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let kind = PatternKind::parse(&args.pattern).ok_or_else(|| {
        let names: Vec<&str> = PatternKind::ALL.iter().map(|k| k.name()).collect();
        Error::InvalidConfig(format!("unknown pattern '{}', expected one of {}", args.pattern, names.join(", ")))
    })?;
    let pattern = ScenePattern::new(kind)
        .with_size(args.size)
        .with_contrast(args.contrast)
        .with_velocity(args.vx, args.vy)
        .with_angular_rate(args.omega);
    let geometry = SensorGeometry::new(args.width, args.height);
    geometry.validate()?;
    let cfg = SimConfig {
        ell: args.ell,
        sample_dt: args.sample_dt_us,
        duration: args.duration_us,
        seed: args.seed,
        noise: PerturbationSpec::new(args.holes, args.false_rate)?,
    };
    let (stream, truth) = simulate(&pattern, &geometry, &cfg)?;
    create_dir(&args.out)?;
    stream.write_csv(&args.out.join("events.csv"))?;
    geometry.write(&args.out.join("geometry.txt"))?;
    truth.write_csv(&args.out.join("gt.csv"))?;
    eprintln!(
        "{} events ({} with ground truth) written to {}",
        stream.len(),
        truth.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let cfg = args.overrides.resolve()?;
    let est = EventFlow::read_csv(&args.estimate)?;
    let stats = match (&args.gt, &args.imu, &args.geometry) {
        (Some(gt), _, _) => run_eval(&est, GroundTruth::Sparse(&EventFlow::read_csv(gt)?), &cfg)?,
        (None, Some(imu), Some(geometry)) => {
            let series = ImuSeries::read_csv(imu)?;
            let geometry = SensorGeometry::read(geometry)?;
            run_eval(&est, GroundTruth::Imu { series: &series, geometry: &geometry }, &cfg)?
        }
        _ => return Err(Error::InvalidConfig("eval needs --gt or --imu with --geometry".into())),
    };
    let rows = [(args.label.clone(), stats)];
    match args.format {
        ReportFormat::Text => print!("{}", report_text(&rows)),
        ReportFormat::Csv => print!("{}", report_csv(&rows)),
    }
    Ok(())
}

fn cmd_render(args: &RenderArgs) -> Result<()> {
    create_dir(&args.out)?;
    let mut written = 0;
    let dense_dir = args.flow_dir.join("dense");
    if dense_dir.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(&dense_dir)
            .map_err(|e| Error::io(&dense_dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "flo"))
            .collect();
        files.sort();
        for path in files {
            let (u, v) = flo::read(&path)?;
            let field = FlowField { u, v, energy_trace: Vec::new(), t_eval: 0 };
            let name = path.with_extension("ppm");
            render_dense(&field).write_ppm(&args.out.join(name.file_name().unwrap()))?;
            written += 1;
        }
    }
    if let Some(geometry) = &args.geometry {
        let geometry = SensorGeometry::read(geometry)?;
        let flow = EventFlow::read_csv(&args.flow_dir.join("flow.csv"))?;
        let dt = PipelineConfig::read(&args.flow_dir.join("config.txt"))
            .unwrap_or_default()
            .delta_t_us;
        let mut windows: BTreeMap<i64, EventFlow> = BTreeMap::new();
        for e in flow.entries {
            let t_eval = (e.t.div_euclid(dt) + 1) * dt;
            windows.entry(t_eval).or_default().entries.push(e);
        }
        for (t, window) in &windows {
            let img = render_sparse(window, geometry.width as usize, geometry.height as usize, args.spacing);
            img.write_ppm(&args.out.join(format!("events_{t:012}.ppm")))?;
            written += 1;
        }
    }
    eprintln!("{written} images written to {}", args.out.display());
    Ok(())
}

/// 3 for numerical failures, 2 for every other error.
fn exit_code(e: &Error) -> u8 {
    if e.is_numerical() {
        3
    } else {
        2
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match &cli.command {
        Command::Flow(a) => cmd_flow(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Render(a) => cmd_render(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
