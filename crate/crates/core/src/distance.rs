//! Exact Euclidean distance transform of an event window.
//!
//! The transform is separable. A column pass finds, for every pixel, the
//! closest event row within its own column. A row pass then takes the lower
//! envelope of the parabolas `(x - x')^2 + g(x')` over the columns `x'`
//! (Felzenszwalb–Huttenlocher), giving the exact squared distance in time
//! linear in the grid size.
//!
//! All arithmetic is on integers. To make the nearest-event map
//! deterministic, each parabola carries the composite key
//! `M^2 * dist^2 + M * y' + x'` with `M = max(width, height)`. Keys of
//! distinct events never tie, and the smallest key is the closest event
//! with the smallest row-major index, so the envelope directly yields the
//! tie-broken minimiser.

use std::cmp::Ordering;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::event::{EventWindow, Micros, Pixel, SensorGeometry};
use crate::grid::Grid;

/// Euclidean distance between two pixels.
pub fn distance(a: Pixel, b: Pixel) -> f64 {
    (a.squared_distance(b) as f64).sqrt()
}

/// Distance to the nearest event pixel of a window, plus which pixel that is.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceSurface {
    pub t_eval: Micros,
    pub delta_t: Micros,
    squared: Grid<i64>,
    d: Grid<f64>,
    nearest: Grid<Pixel>,
}

impl DistanceSurface {
    pub fn width(&self) -> usize {
        self.d.width()
    }

    pub fn height(&self) -> usize {
        self.d.height()
    }

    /// Distances in pixels.
    pub fn d(&self) -> &Grid<f64> {
        &self.d
    }

    /// Exact squared distances.
    pub fn squared(&self) -> &Grid<i64> {
        &self.squared
    }

    pub fn nearest(&self) -> &Grid<Pixel> {
        &self.nearest
    }

    pub fn max_distance(&self) -> f64 {
        self.d.iter().copied().fold(0.0, f64::max)
    }

    /// 16-bit binary PGM of the distances scaled to the full range.
    pub fn to_pgm(&self) -> Vec<u8> {
        let max = self.max_distance();
        let scale = if max > 0.0 { 65535.0 / max } else { 0.0 };
        let mut out = format!("P5\n{} {}\n65535\n", self.width(), self.height()).into_bytes();
        out.reserve(self.d.len() * 2);
        for &v in self.d.iter() {
            let q = (v * scale).round().clamp(0.0, 65535.0) as u16;
            out.extend_from_slice(&q.to_be_bytes());
        }
        out
    }

    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_pgm()).map_err(|e| Error::io(path, e))
    }
}

/// Distance transform of a window over the sensor grid.
pub fn transform(window: &EventWindow, geometry: &SensorGeometry) -> Result<DistanceSurface> {
    if window.is_empty() {
        return Err(Error::EmptyWindow {
            t_eval: window.t_eval,
        });
    }
    let (squared, nearest) =
        transform_pixels(window.pixels(), geometry.width as usize, geometry.height as usize);
    let d = squared.map(|&s| (s as f64).sqrt());
    Ok(DistanceSurface {
        t_eval: window.t_eval,
        delta_t: window.delta_t,
        squared,
        d,
        nearest,
    })
}

const UNSET: i64 = i64::MAX;

/// Squared distance and nearest source for every pixel of a `width x height`
/// grid. At least one source pixel must be given; all must be in bounds.
pub fn transform_pixels(
    sources: impl IntoIterator<Item = Pixel>,
    width: usize,
    height: usize,
) -> (Grid<i64>, Grid<Pixel>) {
    let mut is_source = Grid::new(width, height, false);
    let mut any = false;
    for p in sources {
        is_source[(p.x as usize, p.y as usize)] = true;
        any = true;
    }
    assert!(any, "distance transform needs at least one source pixel");

    // Column pass: nearest source row within the same column, ties to the
    // smaller row.
    let mut col_sq = Grid::new(width, height, UNSET);
    let mut col_row = Grid::new(width, height, 0u32);
    let mut above = vec![None; height];
    for x in 0..width {
        let mut last = None;
        for (y, slot) in above.iter_mut().enumerate() {
            if is_source[(x, y)] {
                last = Some(y);
            }
            *slot = last;
        }
        let mut below: Option<usize> = None;
        for y in (0..height).rev() {
            if is_source[(x, y)] {
                below = Some(y);
            }
            let best = match (above[y], below) {
                (Some(a), Some(b)) => {
                    if y - a <= b - y {
                        Some(a)
                    } else {
                        Some(b)
                    }
                }
                (a, b) => a.or(b),
            };
            if let Some(r) = best {
                let dy = y as i64 - r as i64;
                col_sq[(x, y)] = dy * dy;
                col_row[(x, y)] = r as u32;
            }
        }
    }

    // Row pass: lower envelope of keyed parabolas.
    let m = width.max(height) as i128;
    let m2 = m * m;
    let mut squared = Grid::new(width, height, 0i64);
    let mut nearest = Grid::new(width, height, Pixel::new(0, 0));
    let mut env = Envelope::new(m2, width);
    for y in 0..height {
        env.clear();
        for x in 0..width {
            let g = col_sq[(x, y)];
            if g == UNSET {
                continue;
            }
            let offset = m2 * g as i128 + m * col_row[(x, y)] as i128 + x as i128;
            env.push(x as i128, offset);
        }
        let mut k = 0;
        for x in 0..width {
            let xi = x as i128;
            while k + 1 < env.len() && env.boundary_below(k + 1, xi) {
                k += 1;
            }
            let src = env.columns[k] as usize;
            let dx = x as i64 - src as i64;
            squared[(x, y)] = dx * dx + col_sq[(src, y)];
            nearest[(x, y)] = Pixel::new(src as u32, col_row[(src, y)]);
        }
    }
    (squared, nearest)
}

/// Lower envelope of parabolas `m2 * (x - c)^2 + offset`, all with the same
/// curvature. Boundaries are kept as exact fractions `num / den`, `den > 0`.
struct Envelope {
    columns: Vec<i128>,
    offsets: Vec<i128>,
    bounds: Vec<(i128, i128)>,
    m2: i128,
}

impl Envelope {
    fn new(m2: i128, capacity: usize) -> Self {
        Self {
            columns: Vec::with_capacity(capacity),
            offsets: Vec::with_capacity(capacity),
            bounds: Vec::with_capacity(capacity),
            m2,
        }
    }

    fn clear(&mut self) {
        self.columns.clear();
        self.offsets.clear();
        self.bounds.clear();
    }

    fn len(&self) -> usize {
        self.columns.len()
    }

    fn intersection(&self, p: usize, q_col: i128, q_off: i128) -> (i128, i128) {
        let p_col = self.columns[p];
        let num = (q_off + self.m2 * q_col * q_col) - (self.offsets[p] + self.m2 * p_col * p_col);
        let den = 2 * self.m2 * (q_col - p_col);
        (num, den)
    }

    fn push(&mut self, col: i128, offset: i128) {
        while let Some(top) = self.len().checked_sub(1) {
            let s = self.intersection(top, col, offset);
            // the bottom parabola extends to -inf and is never popped
            if top > 0 && cmp_frac(s, self.bounds[top]) != Ordering::Greater {
                self.columns.pop();
                self.offsets.pop();
                self.bounds.pop();
                continue;
            }
            self.columns.push(col);
            self.offsets.push(offset);
            self.bounds.push(s);
            return;
        }
        self.columns.push(col);
        self.offsets.push(offset);
        self.bounds.push((0, 1));
    }

    /// Whether the left boundary of parabola `k` lies strictly below `x`.
    fn boundary_below(&self, k: usize, x: i128) -> bool {
        let (num, den) = self.bounds[k];
        num < x * den
    }
}

fn cmp_frac(a: (i128, i128), b: (i128, i128)) -> Ordering {
    (a.0 * b.1).cmp(&(b.0 * a.1))
}

/// Perturbation of an ideal window: holes (dropped pixels) and false events.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PerturbationSpec {
    /// Probability that each ideal event (or pixel) is dropped.
    pub hole_fraction: f64,
    /// Density of injected random events. For [`perturb`] this is the
    /// expected count per pixel per window; the simulator reads it as
    /// events per pixel per second.
    pub false_event_rate: f64,
}

impl PerturbationSpec {
    pub const NONE: PerturbationSpec = PerturbationSpec {
        hole_fraction: 0.0,
        false_event_rate: 0.0,
    };

    pub fn new(hole_fraction: f64, false_event_rate: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&hole_fraction) {
            return Err(Error::InvalidConfig(format!(
                "hole fraction must be in [0, 1), got {hole_fraction}"
            )));
        }
        if !(false_event_rate >= 0.0 && false_event_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "false event rate must be non-negative, got {false_event_rate}"
            )));
        }
        Ok(Self {
            hole_fraction,
            false_event_rate,
        })
    }
}

/// Drops each window pixel with probability `hole_fraction`, then adds
/// `round(false_event_rate * width * height)` uniformly random pixels.
pub fn perturb(
    window: &EventWindow,
    geometry: &SensorGeometry,
    spec: &PerturbationSpec,
    seed: u64,
) -> EventWindow {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = EventWindow::empty(window.t_eval, window.delta_t);
    for (p, ts) in window.iter() {
        if spec.hole_fraction > 0.0 && rng.random::<f64>() < spec.hole_fraction {
            continue;
        }
        for &t in ts {
            out.insert(p, t);
        }
    }
    let n_false = (spec.false_event_rate * geometry.pixel_count() as f64).round() as usize;
    for _ in 0..n_false {
        let p = Pixel::new(
            rng.random_range(0..geometry.width),
            rng.random_range(0..geometry.height),
        );
        let t = rng.random_range(window.start()..window.t_eval);
        out.insert(p, t);
    }
    out
}
