//! Event data model, CSV ingestion and temporal windowing.
//!
//! Timestamps are integer microseconds everywhere upstream of the solver.
//! Windows are half-open: `[t_eval - delta_t, t_eval)`.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Microseconds.
pub type Micros = i64;

/// Default window length (5 ms).
pub const DEFAULT_DELTA_T_US: Micros = 5_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Polarity {
    Negative,
    Positive,
}

impl Polarity {
    pub fn sign(self) -> i8 {
        match self {
            Polarity::Negative => -1,
            Polarity::Positive => 1,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Polarity::Negative => Polarity::Positive,
            Polarity::Positive => Polarity::Negative,
        }
    }
}

/// Pixel coordinate. Ordering is row-major: by `y`, then by `x`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Pixel {
    pub x: u32,
    pub y: u32,
}

impl Pixel {
    pub const fn new(x: u32, y: u32) -> Self {
        Self { x, y }
    }

    #[inline]
    pub fn index(self, width: usize) -> usize {
        self.y as usize * width + self.x as usize
    }

    #[inline]
    pub fn squared_distance(self, other: Pixel) -> i64 {
        let dx = self.x as i64 - other.x as i64;
        let dy = self.y as i64 - other.y as i64;
        dx * dx + dy * dy
    }
}

impl Ord for Pixel {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.y, self.x).cmp(&(other.y, other.x))
    }
}

impl PartialOrd for Pixel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Event {
    pub t: Micros,
    pub x: u32,
    pub y: u32,
    pub p: Polarity,
}

impl Event {
    pub fn new(t: Micros, x: u32, y: u32, p: Polarity) -> Self {
        Self { t, x, y, p }
    }

    #[inline]
    pub fn pixel(&self) -> Pixel {
        Pixel::new(self.x, self.y)
    }
}

/// Sensor size plus pinhole intrinsics (pixels).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SensorGeometry {
    pub width: u32,
    pub height: u32,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl SensorGeometry {
    /// Geometry with a nominal pinhole model: focal length equal to the
    /// width and principal point at the image centre.
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            fx: width as f64,
            fy: width as f64,
            cx: (width as f64 - 1.0) / 2.0,
            cy: (height as f64 - 1.0) / 2.0,
        }
    }

    pub fn with_intrinsics(mut self, fx: f64, fy: f64, cx: f64, cy: f64) -> Self {
        self.fx = fx;
        self.fy = fy;
        self.cx = cx;
        self.cy = cy;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidConfig("sensor width and height must be positive".into()));
        }
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::InvalidConfig("focal lengths must be positive".into()));
        }
        if !(self.cx.is_finite() && self.cy.is_finite()) {
            return Err(Error::InvalidConfig("principal point must be finite".into()));
        }
        Ok(())
    }

    #[inline]
    pub fn contains(&self, x: i64, y: i64) -> bool {
        x >= 0 && y >= 0 && x < self.width as i64 && y < self.height as i64
    }

    #[inline]
    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    /// Parses the `key=value` sidecar. `width` and `height` are required;
    /// missing intrinsics fall back to [`SensorGeometry::new`].
    pub fn parse_sidecar(text: &str, path: &Path) -> Result<Self> {
        let mut width = None;
        let mut height = None;
        let (mut fx, mut fy, mut cx, mut cy) = (None, None, None, None);
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(path, i + 1, "expected key=value"))?;
            let value = value.trim();
            let bad = || Error::parse(path, i + 1, format!("invalid value for {}", key.trim()));
            match key.trim() {
                "width" => width = Some(value.parse::<u32>().map_err(|_| bad())?),
                "height" => height = Some(value.parse::<u32>().map_err(|_| bad())?),
                "fx" => fx = Some(value.parse::<f64>().map_err(|_| bad())?),
                "fy" => fy = Some(value.parse::<f64>().map_err(|_| bad())?),
                "cx" => cx = Some(value.parse::<f64>().map_err(|_| bad())?),
                "cy" => cy = Some(value.parse::<f64>().map_err(|_| bad())?),
                other => return Err(Error::parse(path, i + 1, format!("unknown key {other:?}"))),
            }
        }
        let width = width.ok_or_else(|| Error::parse(path, 0, "missing width"))?;
        let height = height.ok_or_else(|| Error::parse(path, 0, "missing height"))?;
        let base = SensorGeometry::new(width, height);
        let geometry = base.with_intrinsics(
            fx.unwrap_or(base.fx),
            fy.unwrap_or(base.fy),
            cx.unwrap_or(base.cx),
            cy.unwrap_or(base.cy),
        );
        geometry.validate()?;
        Ok(geometry)
    }

    pub fn to_sidecar(&self) -> String {
        format!(
            "width={}\nheight={}\nfx={}\nfy={}\ncx={}\ncy={}\n",
            self.width, self.height, self.fx, self.fy, self.cx, self.cy
        )
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_sidecar(&text, path)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_sidecar()).map_err(|e| Error::io(path, e))
    }
}

/// Time-ordered events from one sensor.
#[derive(Clone, Debug, PartialEq)]
pub struct EventStream {
    events: Vec<Event>,
    geometry: SensorGeometry,
}

impl EventStream {
    /// Builds a stream, stably sorting by timestamp. Fails if an event lies
    /// outside the sensor or has a negative timestamp.
    pub fn new(mut events: Vec<Event>, geometry: SensorGeometry) -> Result<Self> {
        geometry.validate()?;
        for e in &events {
            if !geometry.contains(e.x as i64, e.y as i64) {
                return Err(Error::InvalidConfig(format!(
                    "event at ({}, {}) outside {}x{} sensor",
                    e.x, e.y, geometry.width, geometry.height
                )));
            }
            if e.t < 0 {
                return Err(Error::InvalidConfig(format!("negative timestamp {}", e.t)));
            }
        }
        if !events.windows(2).all(|w| w[0].t <= w[1].t) {
            events.sort_by_key(|e| e.t);
        }
        Ok(Self { events, geometry })
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn geometry(&self) -> &SensorGeometry {
        &self.geometry
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn first_time(&self) -> Option<Micros> {
        self.events.first().map(|e| e.t)
    }

    pub fn last_time(&self) -> Option<Micros> {
        self.events.last().map(|e| e.t)
    }

    /// Events with `start <= t < end`.
    pub fn slice(&self, start: Micros, end: Micros) -> &[Event] {
        let lo = self.events.partition_point(|e| e.t < start);
        let hi = self.events.partition_point(|e| e.t < end);
        &self.events[lo..hi.max(lo)]
    }

    /// Pixels that fired in `[t_eval - delta_t, t_eval)`.
    pub fn window_at(&self, t_eval: Micros, delta_t: Micros) -> EventWindow {
        assert!(delta_t > 0, "window length must be positive");
        EventWindow::from_events(self.slice(t_eval - delta_t, t_eval), t_eval, delta_t)
    }

    /// The windows immediately before and after `t_eval`:
    /// `[t_eval - delta_t, t_eval)` and `[t_eval, t_eval + delta_t)`.
    pub fn window_pair(&self, t_eval: Micros, delta_t: Micros) -> (EventWindow, EventWindow) {
        (
            self.window_at(t_eval, delta_t),
            self.window_at(t_eval + delta_t, delta_t),
        )
    }

    /// Parses a header-less `t_us,x,y,p` CSV.
    pub fn parse_csv(text: &str, geometry: SensorGeometry, path: &Path) -> Result<Self> {
        geometry.validate()?;
        let mut events = Vec::new();
        for (i, raw) in text.split('\n').enumerate() {
            let line_no = i + 1;
            let line = raw.strip_suffix('\r').unwrap_or(raw);
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split(',');
            let mut next = |name: &str| -> Result<i64> {
                let f = fields
                    .next()
                    .ok_or_else(|| Error::parse(path, line_no, format!("missing field {name}")))?;
                f.trim()
                    .parse::<i64>()
                    .map_err(|_| Error::parse(path, line_no, format!("invalid {name}: {f:?}")))
            };
            let t = next("t_us")?;
            let x = next("x")?;
            let y = next("y")?;
            let p = next("p")?;
            if fields.next().is_some() {
                return Err(Error::parse(path, line_no, "expected 4 fields"));
            }
            if t < 0 {
                return Err(Error::parse(path, line_no, "negative timestamp"));
            }
            if !geometry.contains(x, y) {
                return Err(Error::OutOfBounds {
                    path: path.to_path_buf(),
                    line: line_no,
                    x,
                    y,
                    width: geometry.width,
                    height: geometry.height,
                });
            }
            let p = match p {
                1 => Polarity::Positive,
                -1 | 0 => Polarity::Negative,
                other => {
                    return Err(Error::parse(path, line_no, format!("invalid polarity {other}")))
                }
            };
            events.push(Event::new(t, x as u32, y as u32, p));
        }
        if events.is_empty() {
            return Err(Error::EmptyFile(path.to_path_buf()));
        }
        Self::new(events, geometry)
    }

    pub fn read_csv(path: &Path, geometry: SensorGeometry) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_csv(&text, geometry, path)
    }

    /// Canonical CSV: one `t,x,y,p` line per event, `p` in {-1, 1}, LF endings.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.events.len() * 20);
        for e in &self.events {
            let _ = writeln!(out, "{},{},{},{}", e.t, e.x, e.y, e.p.sign());
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    /// Evaluation times `t_k = t_start + k * stride` up to the last event.
    ///
    /// `t_start` defaults to the first timestamp rounded up to a multiple
    /// of `delta_t`.
    pub fn evaluation_times(
        &self,
        delta_t: Micros,
        stride: Micros,
        t_start: Option<Micros>,
    ) -> Vec<Micros> {
        assert!(delta_t > 0 && stride > 0);
        let (Some(first), Some(last)) = (self.first_time(), self.last_time()) else {
            return Vec::new();
        };
        let start = t_start.unwrap_or_else(|| -(-first).div_euclid(delta_t) * delta_t);
        (0..)
            .map(|k| start + k * stride)
            .take_while(|&t| t <= last)
            .collect()
    }
}

/// The set of pixels with at least one event in a half-open window,
/// together with their in-window timestamps.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EventWindow {
    pub t_eval: Micros,
    pub delta_t: Micros,
    pixels: BTreeMap<Pixel, Vec<Micros>>,
}

impl EventWindow {
    pub fn empty(t_eval: Micros, delta_t: Micros) -> Self {
        Self {
            t_eval,
            delta_t,
            pixels: BTreeMap::new(),
        }
    }

    /// Collects the given events. Callers are responsible for passing only
    /// events inside the window.
    pub fn from_events<'a>(
        events: impl IntoIterator<Item = &'a Event>,
        t_eval: Micros,
        delta_t: Micros,
    ) -> Self {
        let mut w = Self::empty(t_eval, delta_t);
        for e in events {
            w.insert(e.pixel(), e.t);
        }
        w
    }

    pub fn insert(&mut self, pixel: Pixel, t: Micros) {
        self.pixels.entry(pixel).or_default().push(t);
    }

    pub fn remove(&mut self, pixel: &Pixel) -> Option<Vec<Micros>> {
        self.pixels.remove(pixel)
    }

    pub fn start(&self) -> Micros {
        self.t_eval - self.delta_t
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn contains(&self, pixel: &Pixel) -> bool {
        self.pixels.contains_key(pixel)
    }

    /// Pixels in row-major order.
    pub fn pixels(&self) -> impl ExactSizeIterator<Item = Pixel> + '_ {
        self.pixels.keys().copied()
    }

    pub fn timestamps(&self, pixel: &Pixel) -> Option<&[Micros]> {
        self.pixels.get(pixel).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (Pixel, &[Micros])> {
        self.pixels.iter().map(|(p, ts)| (*p, ts.as_slice()))
    }

    pub fn event_count(&self) -> usize {
        self.pixels.values().map(Vec::len).sum()
    }

    pub fn is_subset_of(&self, other: &EventWindow) -> bool {
        self.pixels.keys().all(|p| other.contains(p))
    }
}
