//! End-to-end processing: configuration, per-window flow, evaluation.
//!
//! Windows are independent and run on a rayon pool; results are handed to
//! the caller in evaluation-time order, so output does not depend on the
//! number of threads.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::denoise::{denoised_window, DenoiseConfig, DEFAULT_TAU_US};
use crate::derivatives::{boundary_mask, field_from_surfaces, DerivativeKernel};
use crate::distance::transform;
use crate::error::{Error, Result};
use crate::event::{EventStream, Micros, SensorGeometry, DEFAULT_DELTA_T_US};
use crate::flo;
use crate::imu::{calibrate, ground_truth_for_events, AxisMap, ImuSeries, DEFAULT_CALIB_WINDOW_US};
use crate::metrics::{evaluate, AngleMode, EvalConfig, FlowErrorStats, RaeeMode, DEFAULT_MAGNITUDE_FLOOR};
use crate::solver::{sample_at_events, solve_from, EventFlow, FlowField, SolverConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KernelChoice {
    FivePoint,
    ThreePoint,
}

impl KernelChoice {
    pub fn kernel(self) -> DerivativeKernel {
        match self {
            KernelChoice::FivePoint => DerivativeKernel::central_five_point(),
            KernelChoice::ThreePoint => DerivativeKernel::central_three_point(),
        }
    }
}

/// Every setting of a run. Serialises to flat `key = value` lines.
#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub delta_t_us: Micros,
    pub tau_us: Micros,
    pub denoise: bool,
    /// `None` means one window length.
    pub stride_us: Option<Micros>,
    /// `None` means the first event time rounded up to a window multiple.
    pub t_start_us: Option<Micros>,
    pub boundary_margin_px: usize,
    pub kernel: KernelChoice,
    pub solver: SolverConfig,
    pub warm_start: bool,
    /// 0 uses all cores.
    pub threads: usize,
    pub write_dense: bool,
    pub magnitude_floor: f64,
    pub angle: AngleMode,
    pub raee: RaeeMode,
    pub calib_window_us: Micros,
    pub time_offset_us: Micros,
    pub imu_axes: AxisMap,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            delta_t_us: DEFAULT_DELTA_T_US,
            tau_us: DEFAULT_TAU_US,
            denoise: true,
            stride_us: None,
            t_start_us: None,
            boundary_margin_px: 2,
            kernel: KernelChoice::FivePoint,
            solver: SolverConfig::default(),
            warm_start: false,
            threads: 0,
            write_dense: false,
            magnitude_floor: DEFAULT_MAGNITUDE_FLOOR,
            angle: AngleMode::Planar,
            raee: RaeeMode::MeanOfRatios,
            calib_window_us: DEFAULT_CALIB_WINDOW_US,
            time_offset_us: 0,
            imu_axes: AxisMap::default(),
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("invalid value '{value}' for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::InvalidConfig(format!("invalid value '{value}' for {key}"))),
    }
}

fn parse_auto(key: &str, value: &str) -> Result<Option<Micros>> {
    if value == "auto" {
        Ok(None)
    } else {
        parse_value(key, value).map(Some)
    }
}

fn auto_string(v: Option<Micros>) -> String {
    v.map_or_else(|| "auto".to_string(), |v| v.to_string())
}

impl PipelineConfig {
    pub const KEYS: &'static [&'static str] = &[
        "delta_t_us",
        "tau_us",
        "denoise",
        "stride_us",
        "t_start_us",
        "boundary_margin_px",
        "kernel",
        "lambda",
        "sigma",
        "outer_iters",
        "inner_iters",
        "gnc_stages",
        "convergence_tol",
        "sor_omega",
        "warm_start",
        "threads",
        "write_dense",
        "magnitude_floor",
        "angle",
        "raee",
        "calib_window_us",
        "time_offset_us",
        "imu_axes",
    ];

    pub fn get(&self, key: &str) -> Option<String> {
        let s = &self.solver;
        Some(match key {
            "delta_t_us" => self.delta_t_us.to_string(),
            "tau_us" => self.tau_us.to_string(),
            "denoise" => self.denoise.to_string(),
            "stride_us" => auto_string(self.stride_us),
            "t_start_us" => auto_string(self.t_start_us),
            "boundary_margin_px" => self.boundary_margin_px.to_string(),
            "kernel" => match self.kernel {
                KernelChoice::FivePoint => "five_point".into(),
                KernelChoice::ThreePoint => "three_point".into(),
            },
            "lambda" => s.lambda.to_string(),
            "sigma" => s.sigma.to_string(),
            "outer_iters" => s.outer_iters.to_string(),
            "inner_iters" => s.inner_iters.to_string(),
            "gnc_stages" => s.gnc_stages.to_string(),
            "convergence_tol" => s.convergence_tol.to_string(),
            "sor_omega" => s.sor_omega.to_string(),
            "warm_start" => self.warm_start.to_string(),
            "threads" => self.threads.to_string(),
            "write_dense" => self.write_dense.to_string(),
            "magnitude_floor" => self.magnitude_floor.to_string(),
            "angle" => match self.angle {
                AngleMode::Planar => "planar".into(),
                AngleMode::SpaceTime(_) => "space_time".into(),
            },
            "raee" => match self.raee {
                RaeeMode::MeanOfRatios => "mean".into(),
                RaeeMode::RatioOfSums => "ratio_of_sums".into(),
            },
            "calib_window_us" => self.calib_window_us.to_string(),
            "time_offset_us" => self.time_offset_us.to_string(),
            "imu_axes" => self.imu_axes.to_spec(),
            _ => return None,
        })
    }

    /// Sets one key. Values are checked by [`PipelineConfig::validate`].
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let s = &mut self.solver;
        match key {
            "delta_t_us" => self.delta_t_us = parse_value(key, value)?,
            "tau_us" => self.tau_us = parse_value(key, value)?,
            "denoise" => self.denoise = parse_bool(key, value)?,
            "stride_us" => self.stride_us = parse_auto(key, value)?,
            "t_start_us" => self.t_start_us = parse_auto(key, value)?,
            "boundary_margin_px" => self.boundary_margin_px = parse_value(key, value)?,
            "kernel" => {
                self.kernel = match value {
                    "five_point" => KernelChoice::FivePoint,
                    "three_point" => KernelChoice::ThreePoint,
                    _ => return Err(Error::InvalidConfig(format!("unknown kernel '{value}'"))),
                }
            }
            "lambda" => s.lambda = parse_value(key, value)?,
            "sigma" => s.sigma = parse_value(key, value)?,
            "outer_iters" => s.outer_iters = parse_value(key, value)?,
            "inner_iters" => s.inner_iters = parse_value(key, value)?,
            "gnc_stages" => s.gnc_stages = parse_value(key, value)?,
            "convergence_tol" => s.convergence_tol = parse_value(key, value)?,
            "sor_omega" => s.sor_omega = parse_value(key, value)?,
            "warm_start" => self.warm_start = parse_bool(key, value)?,
            "threads" => self.threads = parse_value(key, value)?,
            "write_dense" => self.write_dense = parse_bool(key, value)?,
            "magnitude_floor" => self.magnitude_floor = parse_value(key, value)?,
            "angle" => {
                self.angle = match value {
                    "planar" => AngleMode::Planar,
                    "space_time" => AngleMode::SpaceTime(0.0),
                    _ => return Err(Error::InvalidConfig(format!("unknown angle mode '{value}'"))),
                }
            }
            "raee" => {
                self.raee = match value {
                    "mean" => RaeeMode::MeanOfRatios,
                    "ratio_of_sums" => RaeeMode::RatioOfSums,
                    _ => return Err(Error::InvalidConfig(format!("unknown RAEE mode '{value}'"))),
                }
            }
            "calib_window_us" => self.calib_window_us = parse_value(key, value)?,
            "time_offset_us" => self.time_offset_us = parse_value(key, value)?,
            "imu_axes" => self.imu_axes = AxisMap::parse(value)?,
            _ => return Err(Error::InvalidConfig(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }

    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        for key in Self::KEYS {
            let _ = writeln!(out, "{key} = {}", self.get(key).expect("listed key"));
        }
        out
    }

    /// Parses `key = value` lines over the defaults. `#` starts a comment.
    pub fn from_kv(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("line {}: expected key = value", i + 1)))?;
            cfg.set(k.trim(), v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_kv(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: Micros, name: &str| {
            if v > 0 {
                Ok(())
            } else {
                Err(Error::InvalidConfig(format!("{name} must be positive")))
            }
        };
        positive(self.delta_t_us, "delta_t_us")?;
        positive(self.tau_us, "tau_us")?;
        positive(self.stride(), "stride_us")?;
        positive(self.calib_window_us, "calib_window_us")?;
        if !(self.magnitude_floor >= 0.0) {
            return Err(Error::InvalidConfig("magnitude_floor must be non-negative".into()));
        }
        self.solver.validate()
    }

    pub fn stride(&self) -> Micros {
        self.stride_us.unwrap_or(self.delta_t_us)
    }

    pub fn denoise_config(&self) -> Option<DenoiseConfig> {
        self.denoise.then_some(DenoiseConfig { tau: self.tau_us })
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            magnitude_floor: self.magnitude_floor,
            angle: match self.angle {
                AngleMode::Planar => AngleMode::Planar,
                AngleMode::SpaceTime(_) => AngleMode::SpaceTime(self.delta_t_us as f64 * 1e-6),
            },
            raee: self.raee,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WindowOutput {
    pub t_eval: Micros,
    pub dense: FlowField,
    pub events: EventFlow,
    /// Denoising, windowing, distance transforms and derivatives.
    pub surface_time: Duration,
    /// Solve and event sampling.
    pub solver_time: Duration,
}

/// Flow for the window pair around `t_eval`. `None` when either window has
/// no (denoised) events.
pub fn process_window(
    stream: &EventStream,
    t_eval: Micros,
    cfg: &PipelineConfig,
    init: Option<&FlowField>,
) -> Result<Option<WindowOutput>> {
    let dt = cfg.delta_t_us;
    let start = Instant::now();
    let (before, after) = match cfg.denoise_config() {
        Some(dn) => (
            denoised_window(stream, t_eval, dt, &dn),
            denoised_window(stream, t_eval + dt, dt, &dn),
        ),
        None => stream.window_pair(t_eval, dt),
    };
    if before.is_empty() || after.is_empty() {
        return Ok(None);
    }
    let geometry = stream.geometry();
    let d_before = transform(&before, geometry)?;
    let d_after = transform(&after, geometry)?;
    let field = field_from_surfaces(&d_before, &d_after, &cfg.kernel.kernel());
    let mask = boundary_mask(field.width(), field.height(), cfg.boundary_margin_px);
    let surface_time = start.elapsed();

    let start = Instant::now();
    let dense = solve_from(&field, &cfg.solver, &mask, init)?;
    if !dense.u.iter().chain(dense.v.iter()).all(|v| v.is_finite()) {
        return Err(Error::Numerical("non-finite flow".into()));
    }
    let events = sample_at_events(&dense, &before);
    Ok(Some(WindowOutput {
        t_eval,
        dense,
        events,
        surface_time,
        solver_time: start.elapsed(),
    }))
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunSummary {
    pub windows: usize,
    pub skipped: Vec<Micros>,
    pub surface_time: Duration,
    pub solver_time: Duration,
}

impl RunSummary {
    pub fn timing_report(&self) -> String {
        let n = self.windows.max(1) as f64;
        let ms = |d: Duration| d.as_secs_f64() * 1e3;
        format!(
            "windows: {} processed, {} skipped\nsurface stages: {:.3} ms total, {:.3} ms/window\nsolver: {:.3} ms total, {:.3} ms/window\n",
            self.windows,
            self.skipped.len(),
            ms(self.surface_time),
            ms(self.surface_time) / n,
            ms(self.solver_time),
            ms(self.solver_time) / n,
        )
    }
}

/// Runs every evaluation time, passing results to `sink` in time order.
pub fn process_stream(
    stream: &EventStream,
    cfg: &PipelineConfig,
    mut sink: impl FnMut(WindowOutput) -> Result<()>,
) -> Result<RunSummary> {
    cfg.validate()?;
    let times = stream.evaluation_times(cfg.delta_t_us, cfg.stride(), cfg.t_start_us);
    let mut summary = RunSummary::default();
    let mut accept = |t: Micros, out: Option<WindowOutput>, summary: &mut RunSummary| -> Result<()> {
        match out {
            Some(w) => {
                summary.windows += 1;
                summary.surface_time += w.surface_time;
                summary.solver_time += w.solver_time;
                sink(w)
            }
            None => {
                log::info!("skipping window at t={t}us: no events");
                summary.skipped.push(t);
                Ok(())
            }
        }
    };

    if cfg.warm_start {
        let mut prev: Option<FlowField> = None;
        for &t in &times {
            let out = process_window(stream, t, cfg, prev.as_ref()).map_err(|e| e.in_window(t))?;
            if let Some(w) = &out {
                prev = Some(w.dense.clone());
            }
            accept(t, out, &mut summary)?;
        }
        return Ok(summary);
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    let chunk = pool.current_num_threads().max(1) * 4;
    for batch in times.chunks(chunk) {
        let results: Vec<Result<Option<WindowOutput>>> = pool.install(|| {
            batch
                .par_iter()
                .map(|&t| process_window(stream, t, cfg, None).map_err(|e| e.in_window(t)))
                .collect()
        });
        for (&t, r) in batch.iter().zip(results) {
            accept(t, r?, &mut summary)?;
        }
    }
    Ok(summary)
}

pub const FLOW_CSV_HEADER: &str = "t_us,x,y,u_pps,v_pps\n";

/// Writes `flow.csv` (all windows), the effective `config.txt` and, if
/// enabled, one `dense/flow_<t_eval>.flo` per window into `out_dir`.
pub fn run_flow(stream: &EventStream, cfg: &PipelineConfig, out_dir: &Path) -> Result<RunSummary> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let dense_dir = out_dir.join("dense");
    if cfg.write_dense {
        fs::create_dir_all(&dense_dir).map_err(|e| Error::io(&dense_dir, e))?;
    }
    let csv_path = out_dir.join("flow.csv");
    let file = fs::File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
    let mut csv = std::io::BufWriter::new(file);
    csv.write_all(FLOW_CSV_HEADER.as_bytes())
        .map_err(|e| Error::io(&csv_path, e))?;

    let summary = process_stream(stream, cfg, |w| {
        csv.write_all(w.events.to_csv().as_bytes())
            .map_err(|e| Error::io(&csv_path, e))?;
        if cfg.write_dense {
            flo::write(&dense_dir.join(format!("flow_{:012}.flo", w.t_eval)), &w.dense.u, &w.dense.v)?;
        }
        Ok(())
    })?;
    csv.flush().map_err(|e| Error::io(&csv_path, e))?;
    let cfg_path = out_dir.join("config.txt");
    fs::write(&cfg_path, cfg.to_kv()).map_err(|e| Error::io(&cfg_path, e))?;
    Ok(summary)
}

/// Reference flow to score against.
pub enum GroundTruth<'a> {
    Sparse(&'a EventFlow),
    Imu {
        series: &'a ImuSeries,
        geometry: &'a SensorGeometry,
    },
}

/// Scores estimates. IMU truth is bias-calibrated over the first
/// `calib_window_us` of samples and read at each event timestamp.
pub fn run_eval(est: &EventFlow, truth: GroundTruth<'_>, cfg: &PipelineConfig) -> Result<FlowErrorStats> {
    let eval = cfg.eval_config();
    match truth {
        GroundTruth::Sparse(gt) => evaluate(est, gt, &eval),
        GroundTruth::Imu { series, geometry } => {
            let series = series.clone().with_axes(&cfg.imu_axes);
            let calib = calibrate(series.samples(), cfg.calib_window_us)?;
            let gt = ground_truth_for_events(&series, &calib, geometry, est, cfg.time_offset_us);
            evaluate(est, &gt, &eval)
        }
    }
}
