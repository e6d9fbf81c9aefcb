//! Ground-truth flow from gyroscope readings under pure camera rotation.
//!
//! Camera frame: x right, y down, z forward. A static point `P` seen by a
//! camera rotating at `omega` moves as `dP/dt = -omega x P`; projecting
//! through the pinhole model gives, with `xb = x - cx` and `yb = y - cy`,
//!
//! ```text
//! u = (xb*yb/fy) wx - (fx + xb^2/fx) wy + (fx/fy) yb wz
//! v = (fy + yb^2/fy) wx - (xb*yb/fx) wy - (fy/fx) xb wz
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::event::{Micros, SensorGeometry};
use crate::grid::Grid;
use crate::solver::{EventFlow, FlowEntry, FlowField};

pub const DEFAULT_CALIB_WINDOW_US: Micros = 3_000_000;
pub const MIN_CALIB_SAMPLES: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImuSample {
    pub t: Micros,
    /// rad/s in the camera frame.
    pub omega: [f64; 3],
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImuCalibration {
    pub bias: [f64; 3],
    pub calib_window: Micros,
}

impl ImuCalibration {
    pub fn none() -> Self {
        Self {
            bias: [0.0; 3],
            calib_window: DEFAULT_CALIB_WINDOW_US,
        }
    }

    pub fn correct(&self, omega: [f64; 3]) -> [f64; 3] {
        [omega[0] - self.bias[0], omega[1] - self.bias[1], omega[2] - self.bias[2]]
    }
}

/// Mean angular velocity over `[t0, t0 + window]`, where `t0` is the first
/// sample time.
pub fn calibrate(samples: &[ImuSample], window: Micros) -> Result<ImuCalibration> {
    if window <= 0 {
        return Err(Error::InvalidConfig("calibration window must be positive".into()));
    }
    let Some(first) = samples.first() else {
        return Err(Error::InsufficientSamples {
            found: 0,
            required: MIN_CALIB_SAMPLES,
        });
    };
    let end = first.t + window;
    let mut sum = [0.0; 3];
    let mut n = 0usize;
    for s in samples.iter().take_while(|s| s.t <= end) {
        for k in 0..3 {
            sum[k] += s.omega[k];
        }
        n += 1;
    }
    if n < MIN_CALIB_SAMPLES {
        return Err(Error::InsufficientSamples {
            found: n,
            required: MIN_CALIB_SAMPLES,
        });
    }
    Ok(ImuCalibration {
        bias: sum.map(|v| v / n as f64),
        calib_window: window,
    })
}

/// Image velocity (px/s) at pixel `(x, y)` for camera angular velocity `omega`.
pub fn rotational_flow(omega: [f64; 3], geometry: &SensorGeometry, x: f64, y: f64) -> (f64, f64) {
    let [wx, wy, wz] = omega;
    let (fx, fy) = (geometry.fx, geometry.fy);
    let xb = x - geometry.cx;
    let yb = y - geometry.cy;
    let u = xb * yb / fy * wx - (fx + xb * xb / fx) * wy + fx / fy * yb * wz;
    let v = (fy + yb * yb / fy) * wx - xb * yb / fx * wy - fy / fx * xb * wz;
    (u, v)
}

/// Signed permutation from IMU axes to camera axes, written like `x,y,z` or
/// `-y,x,z`: entry `k` names the IMU axis that becomes camera axis `k`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AxisMap {
    source: [usize; 3],
    sign: [f64; 3],
}

impl Default for AxisMap {
    fn default() -> Self {
        Self {
            source: [0, 1, 2],
            sign: [1.0; 3],
        }
    }
}

impl AxisMap {
    pub fn parse(spec: &str) -> Result<Self> {
        let bad = || Error::InvalidConfig(format!("invalid axis map '{spec}', expected e.g. x,y,z or -y,x,z"));
        let parts: Vec<&str> = spec.split(',').map(str::trim).collect();
        if parts.len() != 3 {
            return Err(bad());
        }
        let mut source = [0; 3];
        let mut sign = [1.0; 3];
        for (k, p) in parts.iter().enumerate() {
            let (s, axis) = match p.strip_prefix('-') {
                Some(rest) => (-1.0, rest),
                None => (1.0, p.strip_prefix('+').unwrap_or(p)),
            };
            source[k] = match axis {
                "x" => 0,
                "y" => 1,
                "z" => 2,
                _ => return Err(bad()),
            };
            sign[k] = s;
        }
        let mut seen = source;
        seen.sort_unstable();
        if seen != [0, 1, 2] {
            return Err(bad());
        }
        Ok(Self { source, sign })
    }

    pub fn apply(&self, omega: [f64; 3]) -> [f64; 3] {
        [0, 1, 2].map(|k| self.sign[k] * omega[self.source[k]])
    }

    pub fn to_spec(&self) -> String {
        let names = ["x", "y", "z"];
        (0..3)
            .map(|k| format!("{}{}", if self.sign[k] < 0.0 { "-" } else { "" }, names[self.source[k]]))
            .collect::<Vec<_>>()
            .join(",")
    }
}

/// Time-ordered gyroscope samples.
#[derive(Clone, Debug, PartialEq)]
pub struct ImuSeries {
    samples: Vec<ImuSample>,
}

impl ImuSeries {
    pub fn new(samples: Vec<ImuSample>) -> Result<Self> {
        if samples.windows(2).any(|w| w[1].t < w[0].t) {
            return Err(Error::InvalidConfig("IMU timestamps must be nondecreasing".into()));
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[ImuSample] {
        &self.samples
    }

    pub fn with_axes(mut self, axes: &AxisMap) -> Self {
        for s in &mut self.samples {
            s.omega = axes.apply(s.omega);
        }
        self
    }

    pub fn span(&self) -> Option<(Micros, Micros)> {
        Some((self.samples.first()?.t, self.samples.last()?.t))
    }

    /// Angular velocity at `t`, linear between bracketing samples.
    pub fn interpolate(&self, t: Micros) -> Result<[f64; 3]> {
        let (start, end) = self.span().ok_or(Error::OutOfRange { t, start: 0, end: 0 })?;
        if t < start || t > end {
            return Err(Error::OutOfRange { t, start, end });
        }
        let i = self.samples.partition_point(|s| s.t <= t);
        let a = &self.samples[i - 1];
        if a.t == t || i == self.samples.len() {
            return Ok(a.omega);
        }
        let b = &self.samples[i];
        let f = (t - a.t) as f64 / (b.t - a.t) as f64;
        Ok([0, 1, 2].map(|k| a.omega[k] + f * (b.omega[k] - a.omega[k])))
    }

    /// Parses `t_us,wx,wy,wz` lines; a header and `#` comments are skipped.
    pub fn parse_csv(text: &str, path: &Path) -> Result<Self> {
        let mut samples = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(|c: char| c.is_ascii_alphabetic()) {
                continue;
            }
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != 4 {
                return Err(Error::parse(path, i + 1, "expected 4 fields t_us,wx,wy,wz"));
            }
            let t = f[0]
                .parse()
                .map_err(|_| Error::parse(path, i + 1, format!("invalid timestamp '{}'", f[0])))?;
            let mut omega = [0.0; 3];
            for k in 0..3 {
                omega[k] = f[k + 1]
                    .parse()
                    .map_err(|_| Error::parse(path, i + 1, format!("invalid rate '{}'", f[k + 1])))?;
            }
            samples.push(ImuSample { t, omega });
        }
        if samples.is_empty() {
            return Err(Error::EmptyFile(path.to_path_buf()));
        }
        Self::new(samples).map_err(|e| Error::parse(path, 0, e.to_string()))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_csv(&text, path)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("t_us,wx,wy,wz\n");
        for s in &self.samples {
            out.push_str(&format!("{},{},{},{}\n", s.t, s.omega[0], s.omega[1], s.omega[2]));
        }
        out
    }
}

/// Dense rotational flow at `t_eval`.
pub fn ground_truth_flow(
    series: &ImuSeries,
    calib: &ImuCalibration,
    geometry: &SensorGeometry,
    t_eval: Micros,
) -> Result<FlowField> {
    let omega = calib.correct(series.interpolate(t_eval)?);
    let (w, h) = (geometry.width as usize, geometry.height as usize);
    let mut u = Grid::new(w, h, 0.0);
    let mut v = Grid::new(w, h, 0.0);
    for y in 0..h {
        for x in 0..w {
            let (a, b) = rotational_flow(omega, geometry, x as f64, y as f64);
            u[(x, y)] = a;
            v[(x, y)] = b;
        }
    }
    Ok(FlowField {
        u,
        v,
        energy_trace: Vec::new(),
        t_eval,
    })
}

/// Ground truth at each estimated event, using the angular velocity at the
/// event's own timestamp shifted by `time_offset` into the IMU clock.
/// Events outside the IMU span are skipped.
pub fn ground_truth_for_events(
    series: &ImuSeries,
    calib: &ImuCalibration,
    geometry: &SensorGeometry,
    events: &EventFlow,
    time_offset: Micros,
) -> EventFlow {
    let entries = events
        .entries
        .iter()
        .filter_map(|e| {
            let omega = calib.correct(series.interpolate(e.t + time_offset).ok()?);
            let (u, v) = rotational_flow(omega, geometry, e.x as f64, e.y as f64);
            Some(FlowEntry { u, v, ..*e })
        })
        .collect();
    EventFlow { entries }
}
