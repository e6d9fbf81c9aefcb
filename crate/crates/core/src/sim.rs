//! Synthetic event camera over moving piecewise-constant intensity layers.
//!
//! Every pixel measures the log of its mean intensity over the pixel area
//! each `sample_dt`. When the change since the pixel's reference exceeds `ell`,
//! the pixel emits `floor(|change| / ell)` events of the change's sign,
//! spaced at most 10 µs apart and ending at the sample time, and the
//! reference is reset to the current value.
//!
//! Ground truth for an event is the analytic velocity of the top-most layer
//! touching the pixel either before or after the step, evaluated at the
//! pixel centre.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::distance::PerturbationSpec;
use crate::error::{Error, Result};
use crate::event::{Event, EventStream, Micros, Polarity, SensorGeometry};
use crate::solver::{EventFlow, FlowEntry};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PatternKind {
    TranslatingBar,
    TranslatingSquare,
    Checkerboard,
    RotatingSquare,
    TwoObjectsCrossing,
}

impl PatternKind {
    pub const ALL: [PatternKind; 5] = [
        PatternKind::TranslatingBar,
        PatternKind::TranslatingSquare,
        PatternKind::Checkerboard,
        PatternKind::RotatingSquare,
        PatternKind::TwoObjectsCrossing,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PatternKind::TranslatingBar => "translating_bar",
            PatternKind::TranslatingSquare => "translating_square",
            PatternKind::Checkerboard => "checkerboard",
            PatternKind::RotatingSquare => "rotating_square",
            PatternKind::TwoObjectsCrossing => "two_objects_crossing",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }
}

/// A moving scene. Objects have intensity `background * contrast`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenePattern {
    pub kind: PatternKind,
    pub contrast: f64,
    pub background: f64,
    /// Translation velocity in px/s.
    pub velocity: (f64, f64),
    /// Rotation rate in rad/s, positive from +x towards +y.
    pub angular_rate: f64,
    /// Square side, bar length or checker cell, in pixels.
    pub size: f64,
    /// Bar thickness in pixels.
    pub bar_width: f64,
}

impl ScenePattern {
    pub fn new(kind: PatternKind) -> Self {
        Self {
            kind,
            contrast: std::f64::consts::E,
            background: 1.0,
            velocity: (200.0, 0.0),
            angular_rate: 2.0,
            size: 24.0,
            bar_width: 4.0,
        }
    }

    pub fn with_velocity(mut self, vx: f64, vy: f64) -> Self {
        self.velocity = (vx, vy);
        self
    }

    pub fn with_contrast(mut self, contrast: f64) -> Self {
        self.contrast = contrast;
        self
    }

    pub fn with_angular_rate(mut self, omega: f64) -> Self {
        self.angular_rate = omega;
        self
    }

    pub fn with_size(mut self, size: f64) -> Self {
        self.size = size;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.contrast) || !positive(self.background) {
            return Err(Error::InvalidConfig("intensities must be positive".into()));
        }
        if !positive(self.size) || !positive(self.bar_width) {
            return Err(Error::InvalidConfig("pattern sizes must be positive".into()));
        }
        if !(self.velocity.0.is_finite() && self.velocity.1.is_finite() && self.angular_rate.is_finite()) {
            return Err(Error::InvalidConfig("motion parameters must be finite".into()));
        }
        Ok(())
    }

    /// Layers from top to bottom. Translating objects pass the sensor centre
    /// halfway through `duration`.
    pub fn layers(&self, geometry: &SensorGeometry, duration: Micros) -> Vec<Layer> {
        let centre = (
            (geometry.width as f64 - 1.0) / 2.0,
            (geometry.height as f64 - 1.0) / 2.0,
        );
        let half_time = duration as f64 * 0.5e-6;
        let (vx, vy) = self.velocity;
        let start = |vx: f64, vy: f64| (centre.0 - vx * half_time, centre.1 - vy * half_time);
        let bright = self.background * self.contrast;
        let half = self.size / 2.0;
        match self.kind {
            PatternKind::TranslatingBar => vec![Layer {
                shape: Shape::Rect {
                    half_w: self.bar_width / 2.0,
                    half_h: half,
                },
                origin: start(vx, vy),
                motion: Motion::Translate { vx, vy },
                intensity: bright,
            }],
            PatternKind::TranslatingSquare => vec![Layer {
                shape: Shape::Rect { half_w: half, half_h: half },
                origin: start(vx, vy),
                motion: Motion::Translate { vx, vy },
                intensity: bright,
            }],
            PatternKind::Checkerboard => vec![Layer {
                shape: Shape::Checker {
                    cell: self.size,
                    other: self.background,
                },
                origin: (0.0, 0.0),
                motion: Motion::Translate { vx, vy },
                intensity: bright,
            }],
            PatternKind::RotatingSquare => vec![Layer {
                shape: Shape::Rect { half_w: half, half_h: half },
                origin: centre,
                motion: Motion::Rotate {
                    omega: self.angular_rate,
                },
                intensity: bright,
            }],
            PatternKind::TwoObjectsCrossing => vec![
                Layer {
                    shape: Shape::Rect { half_w: half, half_h: half },
                    origin: start(vx, vy),
                    motion: Motion::Translate { vx, vy },
                    intensity: bright,
                },
                Layer {
                    shape: Shape::Rect { half_w: half, half_h: half },
                    origin: start(-vx, vy),
                    motion: Motion::Translate { vx: -vx, vy },
                    intensity: self.background / self.contrast,
                },
            ],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Shape {
    /// Axis-aligned rectangle in the layer frame, centred on the origin.
    Rect { half_w: f64, half_h: f64 },
    /// Infinite checkerboard; cells with even parity take the layer
    /// intensity, the others `other`.
    Checker { cell: f64, other: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Motion {
    Translate { vx: f64, vy: f64 },
    /// Rotation about the layer origin.
    Rotate { omega: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Layer {
    pub shape: Shape,
    /// Layer origin at `t = 0`, in pixel coordinates.
    pub origin: (f64, f64),
    pub motion: Motion,
    pub intensity: f64,
}

impl Layer {
    fn local(&self, x: f64, y: f64, t: Micros) -> (f64, f64) {
        let s = t as f64 * 1e-6;
        match self.motion {
            Motion::Translate { vx, vy } => (x - self.origin.0 - vx * s, y - self.origin.1 - vy * s),
            Motion::Rotate { omega } => {
                let (dx, dy) = (x - self.origin.0, y - self.origin.1);
                let (sin, cos) = (-omega * s).sin_cos();
                (cos * dx - sin * dy, sin * dx + cos * dy)
            }
        }
    }

    /// Intensity at `(x, y)` if the layer covers that point.
    pub fn intensity_at(&self, x: f64, y: f64, t: Micros) -> Option<f64> {
        let (lx, ly) = self.local(x, y, t);
        match self.shape {
            Shape::Rect { half_w, half_h } => {
                (lx.abs() < half_w && ly.abs() < half_h).then_some(self.intensity)
            }
            Shape::Checker { cell, other } => {
                let parity = ((lx / cell).floor() as i64 + (ly / cell).floor() as i64).rem_euclid(2);
                Some(if parity == 0 { self.intensity } else { other })
            }
        }
    }

    /// Image velocity of the layer point at `(x, y)`, in px/s.
    pub fn velocity_at(&self, x: f64, y: f64) -> (f64, f64) {
        match self.motion {
            Motion::Translate { vx, vy } => (vx, vy),
            Motion::Rotate { omega } => (-omega * (y - self.origin.1), omega * (x - self.origin.0)),
        }
    }

    /// Distance from `(x, y)` to the nearest intensity edge of the layer.
    pub fn edge_distance(&self, x: f64, y: f64, t: Micros) -> f64 {
        let (lx, ly) = self.local(x, y, t);
        match self.shape {
            Shape::Rect { half_w, half_h } => {
                let (ex, ey) = (lx.abs() - half_w, ly.abs() - half_h);
                if ex <= 0.0 && ey <= 0.0 {
                    (-ex).min(-ey)
                } else {
                    ex.max(0.0).hypot(ey.max(0.0))
                }
            }
            Shape::Checker { cell, .. } => {
                let line = |v: f64| {
                    let r = v.rem_euclid(cell);
                    r.min(cell - r)
                };
                line(lx).min(line(ly))
            }
        }
    }
}

/// Distance from `(x, y)` to the nearest edge of any layer.
pub fn edge_distance(layers: &[Layer], x: f64, y: f64, t: Micros) -> f64 {
    layers
        .iter()
        .map(|l| l.edge_distance(x, y, t))
        .fold(f64::INFINITY, f64::min)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    /// Log-intensity threshold.
    pub ell: f64,
    pub sample_dt: Micros,
    pub duration: Micros,
    pub seed: u64,
    /// Holes drop true events; false events are drawn uniformly in space
    /// and time at `false_event_rate` events per pixel per second.
    pub noise: PerturbationSpec,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            ell: 0.2,
            sample_dt: 100,
            duration: 100_000,
            seed: 0,
            noise: PerturbationSpec::NONE,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.ell > 0.0 && self.ell.is_finite()) {
            return Err(Error::InvalidConfig("ell must be positive".into()));
        }
        if self.sample_dt <= 0 || self.duration <= 0 {
            return Err(Error::InvalidConfig("sample step and duration must be positive".into()));
        }
        PerturbationSpec::new(self.noise.hole_fraction, self.noise.false_event_rate)?;
        Ok(())
    }
}

/// Subsamples per axis for pixels that an edge may cross.
const SUPERSAMPLE: usize = 8;

/// Top-most covering layer and the intensity it shows.
fn sample_point(layers: &[Layer], background: f64, x: f64, y: f64, t: Micros) -> (Option<usize>, f64) {
    for (i, l) in layers.iter().enumerate() {
        if let Some(v) = l.intensity_at(x, y, t) {
            return (Some(i), v);
        }
    }
    (None, background)
}

/// Mean intensity over the unit pixel square centred on `(x, y)`, and the
/// top-most layer touching it. Pixels away from every edge are uniform and
/// need a single sample.
fn sample_pixel(layers: &[Layer], background: f64, x: f64, y: f64, t: Micros) -> (Option<usize>, f64) {
    if edge_distance(layers, x, y, t) > 0.75 {
        return sample_point(layers, background, x, y, t);
    }
    let n = SUPERSAMPLE;
    let mut top: Option<usize> = None;
    let mut sum = 0.0;
    for j in 0..n {
        for i in 0..n {
            let sx = x - 0.5 + (i as f64 + 0.5) / n as f64;
            let sy = y - 0.5 + (j as f64 + 0.5) / n as f64;
            let (layer, v) = sample_point(layers, background, sx, sy, t);
            sum += v;
            top = match (top, layer) {
                (Some(a), Some(b)) => Some(a.min(b)),
                (a, b) => a.or(b),
            };
        }
    }
    (top, sum / (n * n) as f64)
}

fn simulate_pixel(
    layers: &[Layer],
    background: f64,
    px: u32,
    py: u32,
    cfg: &SimConfig,
    out: &mut Vec<(Event, (f64, f64))>,
) {
    let (x, y) = (px as f64, py as f64);
    let (mut prev_layer, v0) = sample_pixel(layers, background, x, y, 0);
    let mut reference = v0.ln();
    let steps = cfg.duration / cfg.sample_dt;
    for k in 1..=steps {
        let t = k * cfg.sample_dt;
        let (layer, value) = sample_pixel(layers, background, x, y, t);
        let log_i = value.ln();
        let delta = log_i - reference;
        if delta.abs() > cfg.ell {
            let n = (delta.abs() / cfg.ell).floor() as i64;
            let p = if delta > 0.0 { Polarity::Positive } else { Polarity::Negative };
            let spacing = (cfg.sample_dt / n).clamp(1, 10);
            let owner = match (prev_layer, layer) {
                (Some(a), Some(b)) => Some(a.min(b)),
                (a, b) => a.or(b),
            };
            let vel = owner.map_or((0.0, 0.0), |i| layers[i].velocity_at(x, y));
            for j in 0..n {
                let te = (t - (n - 1 - j) * spacing).max(t - cfg.sample_dt + 1);
                out.push((Event::new(te, px, py, p), vel));
            }
            reference = log_i;
        }
        prev_layer = layer;
    }
}

/// Events and per-event ground-truth flow for a pattern.
///
/// Ground truth covers the true events that survive hole removal; injected
/// false events have no ground truth.
pub fn simulate(
    pattern: &ScenePattern,
    geometry: &SensorGeometry,
    cfg: &SimConfig,
) -> Result<(EventStream, EventFlow)> {
    pattern.validate()?;
    cfg.validate()?;
    geometry.validate()?;
    let layers = pattern.layers(geometry, cfg.duration);

    let rows: Vec<Vec<(Event, (f64, f64))>> = (0..geometry.height)
        .into_par_iter()
        .map(|y| {
            let mut out = Vec::new();
            for x in 0..geometry.width {
                simulate_pixel(&layers, pattern.background, x, y, cfg, &mut out);
            }
            out
        })
        .collect();
    let mut true_events: Vec<(Event, (f64, f64))> = rows.into_iter().flatten().collect();
    true_events.sort_by_key(|(e, _)| (e.t, e.y, e.x));

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    if cfg.noise.hole_fraction > 0.0 {
        true_events.retain(|_| rng.random::<f64>() >= cfg.noise.hole_fraction);
    }

    let truth = EventFlow {
        entries: true_events
            .iter()
            .map(|(e, (u, v))| FlowEntry {
                t: e.t,
                x: e.x,
                y: e.y,
                u: *u,
                v: *v,
            })
            .collect(),
    };

    let mut events: Vec<Event> = true_events.into_iter().map(|(e, _)| e).collect();
    let seconds = cfg.duration as f64 * 1e-6;
    let n_false = (cfg.noise.false_event_rate * geometry.pixel_count() as f64 * seconds).round() as usize;
    for _ in 0..n_false {
        let p = if rng.random::<bool>() { Polarity::Positive } else { Polarity::Negative };
        events.push(Event::new(
            rng.random_range(0..cfg.duration),
            rng.random_range(0..geometry.width),
            rng.random_range(0..geometry.height),
            p,
        ));
    }
    Ok((EventStream::new(events, *geometry)?, truth))
}

/// Ground-truth entries of events in `[t_eval - delta_t, t_eval)`.
pub fn ground_truth_at(truth: &EventFlow, t_eval: Micros, delta_t: Micros) -> EventFlow {
    truth.window(t_eval, delta_t)
}
