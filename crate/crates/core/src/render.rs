//! PPM visualisations: colour-wheel dense flow and arrow glyphs at events.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::solver::{EventFlow, FlowField};

pub type Rgb = [u8; 3];

#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub pixels: Grid<Rgb>,
}

impl Image {
    pub fn new(width: usize, height: usize, fill: Rgb) -> Self {
        Self {
            pixels: Grid::new(width, height, fill),
        }
    }

    pub fn width(&self) -> usize {
        self.pixels.width()
    }

    pub fn height(&self) -> usize {
        self.pixels.height()
    }

    pub fn put(&mut self, x: i64, y: i64, c: Rgb) {
        if x >= 0 && y >= 0 && (x as usize) < self.width() && (y as usize) < self.height() {
            self.pixels[(x as usize, y as usize)] = c;
        }
    }

    /// Binary `P6` encoding.
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width(), self.height()).into_bytes();
        for p in self.pixels.iter() {
            out.extend_from_slice(p);
        }
        out
    }

    pub fn write_ppm(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_ppm()).map_err(|e| Error::io(path, e))
    }

    pub fn line(&mut self, from: (f64, f64), to: (f64, f64), c: Rgb) {
        let steps = (to.0 - from.0).abs().max((to.1 - from.1).abs()).ceil().max(1.0) as usize;
        for i in 0..=steps {
            let f = i as f64 / steps as f64;
            let x = from.0 + f * (to.0 - from.0);
            let y = from.1 + f * (to.1 - from.1);
            self.put(x.round() as i64, y.round() as i64, c);
        }
    }

    pub fn arrow(&mut self, from: (f64, f64), to: (f64, f64), c: Rgb) {
        self.line(from, to, c);
        let (dx, dy) = (to.0 - from.0, to.1 - from.1);
        let len = dx.hypot(dy);
        if len < 2.0 {
            return;
        }
        let head = (len * 0.3).min(4.0);
        let (ux, uy) = (dx / len, dy / len);
        for side in [-1.0, 1.0] {
            let (sx, sy) = (-uy * side, ux * side);
            let tip = (to.0 - head * (ux - 0.5 * sx), to.1 - head * (uy - 0.5 * sy));
            self.line(to, tip, c);
        }
    }
}

/// HSV to 8-bit RGB; `h` in degrees, `s` and `v` in `[0, 1]`.
pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> Rgb {
    let h = h.rem_euclid(360.0) / 60.0;
    let c = v * s;
    let x = c * (1.0 - (h % 2.0 - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r, g, b].map(|k| ((k + m) * 255.0).round().clamp(0.0, 255.0) as u8)
}

/// Colour for a velocity given the image's largest speed: hue encodes
/// direction, saturation and brightness grow with speed from mid-grey.
pub fn flow_color(u: f64, v: f64, max_speed: f64) -> Rgb {
    let m = if max_speed > 0.0 {
        (u.hypot(v) / max_speed).min(1.0)
    } else {
        0.0
    };
    hsv_to_rgb(v.atan2(u).to_degrees(), m, 0.5 + 0.5 * m)
}

pub fn render_dense(flow: &FlowField) -> Image {
    let max = flow
        .u
        .iter()
        .zip(flow.v.iter())
        .map(|(u, v)| u.hypot(*v))
        .fold(0.0, f64::max);
    Image {
        pixels: Grid::from_fn(flow.width(), flow.height(), |x, y| {
            let (u, v) = flow.at(x, y);
            flow_color(u, v, max)
        }),
    }
}

/// Event pixels coloured by their flow, with an arrow for one event in
/// every `spacing` x `spacing` cell. The longest arrow is `spacing` pixels.
pub fn render_sparse(flow: &EventFlow, width: usize, height: usize, spacing: usize) -> Image {
    let spacing = spacing.max(1);
    let mut img = Image::new(width, height, [0, 0, 0]);
    let max = flow.entries.iter().map(|e| e.u.hypot(e.v)).fold(0.0, f64::max);
    for e in &flow.entries {
        img.put(e.x as i64, e.y as i64, flow_color(e.u, e.v, max));
    }
    if max > 0.0 {
        let cols = width.div_ceil(spacing);
        let mut taken = vec![false; cols * height.div_ceil(spacing)];
        let scale = spacing as f64 / max;
        for e in &flow.entries {
            let cell = (e.y as usize / spacing) * cols + e.x as usize / spacing;
            if cell >= taken.len() || taken[cell] {
                continue;
            }
            taken[cell] = true;
            let from = (e.x as f64, e.y as f64);
            img.arrow(from, (from.0 + e.u * scale, from.1 + e.v * scale), [255, 255, 255]);
        }
    }
    img
}
