//! Spatial and temporal derivatives of distance surfaces.
//!
//! The spatial gradient is taken from the surface of the window before
//! `t_eval`; the temporal derivative is the difference between the surfaces
//! after and before `t_eval`, divided by the window length.

use std::fs;
use std::path::Path;

use crate::denoise::{denoised_window, DenoiseConfig};
use crate::distance::{transform, DistanceSurface};
use crate::error::{Error, Result};
use crate::event::{EventStream, Micros};
use crate::grid::Grid;

/// Odd 1-D derivative stencil, applied as a convolution.
///
/// Coefficients are listed from offset `-r` to `+r`; the output at `x` is
/// `sum_k c[k] * f(x - (k - r)) / normalization`.
#[derive(Clone, Debug, PartialEq)]
pub struct DerivativeKernel {
    coefficients: Vec<f64>,
    normalization: f64,
}

impl DerivativeKernel {
    pub fn new(coefficients: Vec<f64>, normalization: f64) -> Result<Self> {
        let n = coefficients.len();
        if n % 2 == 0 {
            return Err(Error::InvalidConfig("stencil length must be odd".into()));
        }
        if !(normalization.is_finite() && normalization != 0.0) {
            return Err(Error::InvalidConfig("stencil normalization must be non-zero".into()));
        }
        for i in 0..n {
            if coefficients[i] != -coefficients[n - 1 - i] {
                return Err(Error::InvalidConfig("stencil must be antisymmetric".into()));
            }
        }
        Ok(Self {
            coefficients,
            normalization,
        })
    }

    /// Fourth-order central difference `(1/12) * (-1, 8, 0, -8, 1)`.
    pub fn central_five_point() -> Self {
        Self::new(vec![-1.0, 8.0, 0.0, -8.0, 1.0], 12.0).expect("valid stencil")
    }

    /// Second-order central difference `(1/2) * (1, 0, -1)`.
    pub fn central_three_point() -> Self {
        Self::new(vec![1.0, 0.0, -1.0], 2.0).expect("valid stencil")
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn normalization(&self) -> f64 {
        self.normalization
    }

    pub fn radius(&self) -> usize {
        self.coefficients.len() / 2
    }

    pub fn negated(&self) -> Self {
        Self {
            coefficients: self.coefficients.iter().map(|c| -c).collect(),
            normalization: self.normalization,
        }
    }
}

impl Default for DerivativeKernel {
    fn default() -> Self {
        Self::central_five_point()
    }
}

/// Per-pixel derivatives of the distance surface at one evaluation time.
#[derive(Clone, Debug, PartialEq)]
pub struct DerivativeField {
    pub dx: Grid<f64>,
    pub dy: Grid<f64>,
    /// Distance units per second.
    pub dt: Grid<f64>,
    pub t_eval: Micros,
    pub delta_t: Micros,
}

impl DerivativeField {
    pub fn width(&self) -> usize {
        self.dx.width()
    }

    pub fn height(&self) -> usize {
        self.dx.height()
    }

    pub fn is_finite(&self) -> bool {
        self.dx.iter().chain(self.dy.iter()).chain(self.dt.iter()).all(|v| v.is_finite())
    }
}

fn convolve_rows(src: &Grid<f64>, kernel: &DerivativeKernel) -> Grid<f64> {
    let r = kernel.radius() as isize;
    let c = kernel.coefficients();
    let norm = kernel.normalization();
    Grid::from_fn(src.width(), src.height(), |x, y| {
        let mut acc = 0.0;
        for (k, &ck) in c.iter().enumerate() {
            if ck != 0.0 {
                acc += ck * src.clamped(x as isize - (k as isize - r), y as isize);
            }
        }
        acc / norm
    })
}

fn convolve_cols(src: &Grid<f64>, kernel: &DerivativeKernel) -> Grid<f64> {
    let r = kernel.radius() as isize;
    let c = kernel.coefficients();
    let norm = kernel.normalization();
    Grid::from_fn(src.width(), src.height(), |x, y| {
        let mut acc = 0.0;
        for (k, &ck) in c.iter().enumerate() {
            if ck != 0.0 {
                acc += ck * src.clamped(x as isize, y as isize - (k as isize - r));
            }
        }
        acc / norm
    })
}

/// `(d/dx, d/dy)` of a scalar grid with replicate padding at the borders.
pub fn gradient(values: &Grid<f64>, kernel: &DerivativeKernel) -> (Grid<f64>, Grid<f64>) {
    (convolve_rows(values, kernel), convolve_cols(values, kernel))
}

/// Spatial gradient of a distance surface.
pub fn spatial_gradient(surface: &DistanceSurface, kernel: &DerivativeKernel) -> (Grid<f64>, Grid<f64>) {
    gradient(surface.d(), kernel)
}

/// `(d_after - d_before) / delta_t`, in distance units per second.
pub fn temporal_derivative(
    before: &DistanceSurface,
    after: &DistanceSurface,
    delta_t: Micros,
) -> Grid<f64> {
    assert!(before.d().same_shape(after.d()), "surfaces must share geometry");
    assert!(delta_t > 0, "window length must be positive");
    let seconds = delta_t as f64 * 1e-6;
    let (b, a) = (before.d().as_slice(), after.d().as_slice());
    Grid::from_vec(
        before.width(),
        before.height(),
        a.iter().zip(b).map(|(a, b)| (a - b) / seconds).collect(),
    )
}

/// Pixels within `margin` of the sensor border. `true` marks a pixel whose
/// data term should be ignored.
pub fn boundary_mask(width: usize, height: usize, margin: usize) -> Grid<bool> {
    Grid::from_fn(width, height, |x, y| {
        x < margin || y < margin || x + margin >= width || y + margin >= height
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct AssembleConfig {
    /// `None` disables background-activity removal.
    pub denoise: Option<DenoiseConfig>,
    pub kernel: DerivativeKernel,
}

impl Default for AssembleConfig {
    fn default() -> Self {
        Self {
            denoise: Some(DenoiseConfig::default()),
            kernel: DerivativeKernel::default(),
        }
    }
}

/// Builds the derivative field combining both surfaces.
pub fn field_from_surfaces(
    before: &DistanceSurface,
    after: &DistanceSurface,
    kernel: &DerivativeKernel,
) -> DerivativeField {
    let (dx, dy) = spatial_gradient(before, kernel);
    let dt = temporal_derivative(before, after, before.delta_t);
    DerivativeField {
        dx,
        dy,
        dt,
        t_eval: before.t_eval,
        delta_t: before.delta_t,
    }
}

/// Windows, surfaces and derivatives for one evaluation time.
pub fn assemble(
    stream: &EventStream,
    t_eval: Micros,
    delta_t: Micros,
    cfg: &AssembleConfig,
) -> Result<DerivativeField> {
    let (before, after) = match &cfg.denoise {
        Some(dn) => (
            denoised_window(stream, t_eval, delta_t, dn),
            denoised_window(stream, t_eval + delta_t, delta_t, dn),
        ),
        None => stream.window_pair(t_eval, delta_t),
    };
    let geometry = stream.geometry();
    let before = transform(&before, geometry)?;
    let after = transform(&after, geometry)?;
    Ok(field_from_surfaces(&before, &after, &cfg.kernel))
}

const GRID_MAGIC: &[u8; 4] = b"DGRD";

/// Raw dump: magic `DGRD`, `u32` width and height, then `f64` values, all
/// little-endian, row-major.
pub fn encode_grid(grid: &Grid<f64>) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + grid.len() * 8);
    out.extend_from_slice(GRID_MAGIC);
    out.extend_from_slice(&(grid.width() as u32).to_le_bytes());
    out.extend_from_slice(&(grid.height() as u32).to_le_bytes());
    for v in grid.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_grid(bytes: &[u8]) -> Option<Grid<f64>> {
    if bytes.len() < 12 || &bytes[..4] != GRID_MAGIC {
        return None;
    }
    let w = u32::from_le_bytes(bytes[4..8].try_into().ok()?) as usize;
    let h = u32::from_le_bytes(bytes[8..12].try_into().ok()?) as usize;
    let body = &bytes[12..];
    if body.len() != w * h * 8 {
        return None;
    }
    let data = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Some(Grid::from_vec(w, h, data))
}

pub fn write_grid(grid: &Grid<f64>, path: &Path) -> Result<()> {
    fs::write(path, encode_grid(grid)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event::{EventWindow, Pixel, SensorGeometry};

    fn surface(pixels: &[(u32, u32)], w: u32, h: u32, t_eval: Micros) -> DistanceSurface {
        let mut win = EventWindow::empty(t_eval, 5000);
        for &(x, y) in pixels {
            win.insert(Pixel::new(x, y), t_eval - 1);
        }
        transform(&win, &SensorGeometry::new(w, h)).unwrap()
    }

    #[test]
    fn default_kernel_coefficients() {
        let k = DerivativeKernel::default();
        let scaled: Vec<f64> = k.coefficients().iter().map(|c| c / k.normalization()).collect();
        assert_eq!(scaled, vec![-1.0 / 12.0, 8.0 / 12.0, 0.0, -8.0 / 12.0, 1.0 / 12.0]);
        assert_eq!(k.coefficients().iter().sum::<f64>(), 0.0);
    }

    #[test]
    fn kernel_validation() {
        assert!(DerivativeKernel::new(vec![1.0, -1.0], 1.0).is_err());
        assert!(DerivativeKernel::new(vec![1.0, 0.0, 1.0], 1.0).is_err());
        assert!(DerivativeKernel::new(vec![1.0, 0.0, -1.0], 0.0).is_err());
    }

    #[test]
    fn ramp_has_unit_x_derivative() {
        let ramp = Grid::from_fn(12, 9, |x, _| x as f64);
        for k in [DerivativeKernel::central_five_point(), DerivativeKernel::central_three_point()] {
            let (dx, dy) = gradient(&ramp, &k);
            for y in 0..9 {
                for x in 2..10 {
                    assert!((dx[(x, y)] - 1.0).abs() < 1e-12);
                    assert_eq!(dy[(x, y)], 0.0);
                }
            }
        }
    }

    #[test]
    fn single_event_gradient_points_away() {
        let s = surface(&[(5, 5)], 11, 11, 5000);
        let (dx, dy) = spatial_gradient(&s, &DerivativeKernel::default());
        let mut checked = 0;
        for y in 2..9usize {
            for x in 2..9usize {
                let (rx, ry) = (x as f64 - 5.0, y as f64 - 5.0);
                let r = (rx * rx + ry * ry).sqrt();
                if r <= 2.0 {
                    continue;
                }
                assert!((dx[(x, y)] - rx / r).abs() < 0.05, "dx at ({x},{y})");
                assert!((dy[(x, y)] - ry / r).abs() < 0.05, "dy at ({x},{y})");
                checked += 1;
            }
        }
        assert!(checked > 20);
    }

    #[test]
    fn static_scene_has_zero_dt() {
        let a = surface(&[(3, 3), (9, 1)], 16, 12, 5000);
        let dt = temporal_derivative(&a, &a.clone(), 5000);
        assert!(dt.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shifted_line_dt() {
        let before: Vec<_> = (0..20).map(|y| (10, y)).collect();
        let after: Vec<_> = (0..20).map(|y| (12, y)).collect();
        let b = surface(&before, 30, 20, 5000);
        let a = surface(&after, 30, 20, 10_000);
        let dt = temporal_derivative(&b, &a, 5000);
        for y in 0..20 {
            for x in 13..30 {
                assert!((dt[(x, y)] + 400.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn negated_stencil_negates_gradient() {
        let s = surface(&[(2, 7), (13, 4), (8, 8)], 17, 13, 5000);
        let k = DerivativeKernel::default();
        let (dx, dy) = spatial_gradient(&s, &k);
        let (ndx, ndy) = spatial_gradient(&s, &k.negated());
        for i in 0..dx.len() {
            assert_eq!(ndx.as_slice()[i], -dx.as_slice()[i]);
            assert_eq!(ndy.as_slice()[i], -dy.as_slice()[i]);
        }
    }

    #[test]
    fn mask_covers_margin() {
        let m = boundary_mask(6, 5, 2);
        let interior: Vec<_> = m.indexed_iter().filter(|(_, _, &v)| !v).map(|(x, y, _)| (x, y)).collect();
        assert_eq!(interior, vec![(2, 2), (3, 2)]);
    }

    #[test]
    fn grid_dump_round_trip() {
        let g = Grid::from_fn(3, 2, |x, y| x as f64 - 0.5 * y as f64);
        let bytes = encode_grid(&g);
        assert_eq!(&bytes[..4], b"DGRD");
        assert_eq!(decode_grid(&bytes), Some(g));
        assert_eq!(decode_grid(&bytes[..20]), None);
    }
}
