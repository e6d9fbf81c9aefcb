//! Robust Horn–Schunck solver on distance-surface derivatives.
//!
//! The energy over the velocity field `(u, v)` is
//!
//! ```text
//! E = sum_X  m(X) * rho(dx*u + dy*v + dt)  +  lambda * (rho(|grad u|) + rho(|grad v|))
//! ```
//!
//! with the Lorentzian `rho(r) = log(1 + r^2 / (2 sigma^2))`, forward
//! differences for `grad`, and `m(X) = 0` on masked border pixels.
//!
//! Minimisation uses graduated non-convexity: stage `s` of `n` replaces
//! `rho` by `(1 - a) * r^2 / (2 sigma^2) + a * rho(r)` with `a = s / (n - 1)`,
//! starting from the convex quadratic. Within a stage, iteratively
//! reweighted least squares majorises the penalty by a weighted quadratic
//! and reduces it with red-black block SOR sweeps, so the stage energy never increases.
//!
//! Internally the problem is solved with velocities in pixels per window and
//! `dt` scaled to pixels per window, so `sigma` is in distance-surface
//! pixels. Results are returned in pixels per second.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::derivatives::DerivativeField;
use crate::error::{Error, Result};
use crate::event::{EventWindow, Micros, Pixel};
use crate::grid::Grid;

/// `log(1 + r^2 / (2 sigma^2))`.
#[inline]
pub fn lorentzian(r: f64, sigma: f64) -> f64 {
    (r * r / (2.0 * sigma * sigma)).ln_1p()
}

/// `d rho / d r = 2 r / (2 sigma^2 + r^2)`.
#[inline]
pub fn lorentzian_derivative(r: f64, sigma: f64) -> f64 {
    2.0 * r / (2.0 * sigma * sigma + r * r)
}

/// IRLS weight `rho'(r) / r = 2 / (2 sigma^2 + r^2)`.
#[inline]
pub fn lorentzian_weight(r: f64, sigma: f64) -> f64 {
    2.0 / (2.0 * sigma * sigma + r * r)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverConfig {
    pub lambda: f64,
    /// Lorentzian scale in distance-surface pixels.
    pub sigma: f64,
    pub outer_iters: usize,
    pub inner_iters: usize,
    pub gnc_stages: usize,
    /// Relative change of `(u, v)` between outer iterations that ends a stage.
    pub convergence_tol: f64,
    /// Over-relaxation factor of the inner sweeps, in `(0, 2)`.
    pub sor_omega: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            lambda: 0.1,
            sigma: 1.0,
            outer_iters: 10,
            inner_iters: 50,
            gnc_stages: 3,
            convergence_tol: 1e-4,
            sor_omega: 1.9,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be positive");
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return bad("sigma must be positive");
        }
        if self.outer_iters == 0 || self.inner_iters == 0 || self.gnc_stages == 0 {
            return bad("iteration counts must be at least 1");
        }
        if !(self.convergence_tol >= 0.0) {
            return bad("convergence tolerance must be non-negative");
        }
        if !(self.sor_omega > 0.0 && self.sor_omega < 2.0) {
            return bad("SOR factor must lie in (0, 2)");
        }
        Ok(())
    }

    /// Blend factor of each GNC stage, from quadratic (0) to Lorentzian (1).
    pub fn blend_schedule(&self) -> Vec<f64> {
        if self.gnc_stages == 1 {
            return vec![1.0];
        }
        let n = (self.gnc_stages - 1) as f64;
        (0..self.gnc_stages).map(|s| s as f64 / n).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnergySample {
    pub stage: usize,
    pub blend: f64,
    pub energy: f64,
}

/// Dense velocity estimate in pixels per second.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    pub u: Grid<f64>,
    pub v: Grid<f64>,
    /// Stage energy at the start of each stage and after every outer iteration.
    pub energy_trace: Vec<EnergySample>,
    pub t_eval: Micros,
}

impl FlowField {
    pub fn zeros(width: usize, height: usize, t_eval: Micros) -> Self {
        Self {
            u: Grid::new(width, height, 0.0),
            v: Grid::new(width, height, 0.0),
            energy_trace: Vec::new(),
            t_eval,
        }
    }

    pub fn uniform(width: usize, height: usize, u: f64, v: f64, t_eval: Micros) -> Self {
        Self {
            u: Grid::new(width, height, u),
            v: Grid::new(width, height, v),
            energy_trace: Vec::new(),
            t_eval,
        }
    }

    pub fn width(&self) -> usize {
        self.u.width()
    }

    pub fn height(&self) -> usize {
        self.u.height()
    }

    pub fn at(&self, x: usize, y: usize) -> (f64, f64) {
        (self.u[(x, y)], self.v[(x, y)])
    }

    /// Total variation `sum |forward differences|` over both components.
    pub fn total_variation(&self) -> f64 {
        let (w, h) = (self.width(), self.height());
        let mut tv = 0.0;
        for g in [&self.u, &self.v] {
            for y in 0..h {
                for x in 0..w {
                    let gx = if x + 1 < w { g[(x + 1, y)] - g[(x, y)] } else { 0.0 };
                    let gy = if y + 1 < h { g[(x, y + 1)] - g[(x, y)] } else { 0.0 };
                    tv += (gx * gx + gy * gy).sqrt();
                }
            }
        }
        tv
    }
}

/// The discrete objective of one GNC stage, in solver units.
#[derive(Clone, Debug)]
pub struct Objective {
    width: usize,
    height: usize,
    a: Vec<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
    data_weight: Vec<f64>,
    lambda: f64,
    sigma: f64,
    blend: f64,
}

impl Objective {
    /// Objective from a derivative field; `dt` is rescaled to pixels per
    /// window, and masked pixels get zero data weight.
    pub fn from_field(field: &DerivativeField, mask: &Grid<bool>, lambda: f64, sigma: f64, blend: f64) -> Self {
        let scale = field.delta_t as f64 * 1e-6;
        Self::new(
            field.width(),
            field.height(),
            field.dx.as_slice().to_vec(),
            field.dy.as_slice().to_vec(),
            field.dt.iter().map(|v| v * scale).collect(),
            mask.iter().map(|&m| if m { 0.0 } else { 1.0 }).collect(),
            lambda,
            sigma,
            blend,
        )
    }

    #[allow(clippy::too_many_arguments)]
    pub fn new(
        width: usize,
        height: usize,
        a: Vec<f64>,
        b: Vec<f64>,
        c: Vec<f64>,
        data_weight: Vec<f64>,
        lambda: f64,
        sigma: f64,
        blend: f64,
    ) -> Self {
        let n = width * height;
        assert!(a.len() == n && b.len() == n && c.len() == n && data_weight.len() == n);
        Self {
            width,
            height,
            a,
            b,
            c,
            data_weight,
            lambda,
            sigma,
            blend,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn with_blend(mut self, blend: f64) -> Self {
        self.blend = blend;
        self
    }

    /// Blended penalty of a squared argument.
    #[inline]
    fn penalty_sq(&self, z: f64) -> f64 {
        let s2 = 2.0 * self.sigma * self.sigma;
        (1.0 - self.blend) * z / s2 + self.blend * (z / s2).ln_1p()
    }

    /// Derivative of the blended penalty with respect to its squared argument.
    #[inline]
    fn penalty_slope(&self, z: f64) -> f64 {
        let s2 = 2.0 * self.sigma * self.sigma;
        (1.0 - self.blend) / s2 + self.blend / (s2 + z)
    }

    #[inline]
    fn forward_diff(&self, f: &[f64], i: usize) -> (f64, f64) {
        let x = i % self.width;
        let gx = if x + 1 < self.width { f[i + 1] - f[i] } else { 0.0 };
        let gy = if i + self.width < f.len() { f[i + self.width] - f[i] } else { 0.0 };
        (gx, gy)
    }

    #[inline]
    fn residual(&self, u: &[f64], v: &[f64], i: usize) -> f64 {
        self.a[i] * u[i] + self.b[i] * v[i] + self.c[i]
    }

    pub fn energy(&self, u: &[f64], v: &[f64]) -> f64 {
        let mut data = 0.0;
        let mut smooth = 0.0;
        for i in 0..u.len() {
            if self.data_weight[i] != 0.0 {
                let r = self.residual(u, v, i);
                data += self.data_weight[i] * self.penalty_sq(r * r);
            }
            let (ux, uy) = self.forward_diff(u, i);
            let (vx, vy) = self.forward_diff(v, i);
            smooth += self.penalty_sq(ux * ux + uy * uy) + self.penalty_sq(vx * vx + vy * vy);
        }
        data + self.lambda * smooth
    }

    /// Analytic gradient `(dE/du, dE/dv)`.
    pub fn gradient(&self, u: &[f64], v: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = u.len();
        let w = self.width;
        let mut gu = vec![0.0; n];
        let mut gv = vec![0.0; n];
        for i in 0..n {
            if self.data_weight[i] != 0.0 {
                let r = self.residual(u, v, i);
                let k = self.data_weight[i] * 2.0 * self.penalty_slope(r * r) * r;
                gu[i] += k * self.a[i];
                gv[i] += k * self.b[i];
            }
            let x = i % w;
            for (f, g) in [(u, &mut gu), (v, &mut gv)] {
                let (fx, fy) = self.forward_diff(f, i);
                let k = self.lambda * 2.0 * self.penalty_slope(fx * fx + fy * fy);
                if x + 1 < w {
                    g[i + 1] += k * fx;
                    g[i] -= k * fx;
                }
                if i + w < n {
                    g[i + w] += k * fy;
                    g[i] -= k * fy;
                }
            }
        }
        (gu, gv)
    }
}

/// Minimises the robust energy starting from zero flow.
pub fn solve(field: &DerivativeField, cfg: &SolverConfig, boundary_mask: &Grid<bool>) -> Result<FlowField> {
    solve_from(field, cfg, boundary_mask, None)
}

/// As [`solve`], optionally warm-started from a previous estimate.
pub fn solve_from(
    field: &DerivativeField,
    cfg: &SolverConfig,
    boundary_mask: &Grid<bool>,
    init: Option<&FlowField>,
) -> Result<FlowField> {
    cfg.validate()?;
    if !field.is_finite() {
        return Err(Error::NonFiniteInput);
    }
    let (w, h) = (field.width(), field.height());
    assert!(boundary_mask.width() == w && boundary_mask.height() == h, "mask shape mismatch");
    let seconds = field.delta_t as f64 * 1e-6;
    let n = w * h;

    let (mut u, mut v) = match init {
        Some(f) => (
            f.u.iter().map(|x| x * seconds).collect::<Vec<_>>(),
            f.v.iter().map(|x| x * seconds).collect::<Vec<_>>(),
        ),
        None => (vec![0.0; n], vec![0.0; n]),
    };

    let mut objective = Objective::from_field(field, boundary_mask, cfg.lambda, cfg.sigma, 0.0);
    let mut trace = Vec::new();
    let mut system = Reweighted::new(w, h);

    for (stage, blend) in cfg.blend_schedule().into_iter().enumerate() {
        objective = objective.with_blend(blend);
        trace.push(EnergySample {
            stage,
            blend,
            energy: objective.energy(&u, &v),
        });
        for _ in 0..cfg.outer_iters {
            let prev_u = u.clone();
            let prev_v = v.clone();
            system.reweight(&objective, &u, &v);
            system.load(&u, &v);
            for _ in 0..cfg.inner_iters {
                let (step, norm) = system.sweep(cfg.sor_omega);
                if step.sqrt() <= 0.1 * cfg.convergence_tol * norm.sqrt().max(1e-12) {
                    break;
                }
            }
            system.store(&mut u, &mut v);
            let energy = objective.energy(&u, &v);
            if !energy.is_finite() {
                return Err(Error::Numerical("energy became non-finite".into()));
            }
            trace.push(EnergySample { stage, blend, energy });
            let mut diff = 0.0;
            let mut norm = 0.0;
            for i in 0..n {
                diff += (u[i] - prev_u[i]).powi(2) + (v[i] - prev_v[i]).powi(2);
                norm += u[i] * u[i] + v[i] * v[i];
            }
            if diff.sqrt() <= cfg.convergence_tol * norm.sqrt().max(1e-12) {
                break;
            }
        }
    }

    let inv = 1.0 / seconds;
    Ok(FlowField {
        u: Grid::from_vec(w, h, u.into_iter().map(|x| x * inv).collect()),
        v: Grid::from_vec(w, h, v.into_iter().map(|x| x * inv).collect()),
        energy_trace: trace,
        t_eval: field.t_eval,
    })
}

/// The weighted quadratic `sum wd*r^2 + sum wu*|grad u|^2 + sum wv*|grad v|^2`
/// that majorises the stage energy at the current iterate, stored on a grid
/// padded by one pixel so that border pixels need no special cases.
struct Reweighted {
    width: usize,
    height: usize,
    u: Vec<f64>,
    v: Vec<f64>,
    /// Weights of the edge to the east and to the south neighbour.
    east_u: Vec<f64>,
    south_u: Vec<f64>,
    east_v: Vec<f64>,
    south_v: Vec<f64>,
    /// Inverse of the per-pixel 2x2 block, or zeros when singular.
    i11: Vec<f64>,
    i12: Vec<f64>,
    i22: Vec<f64>,
    /// Data parts of the right-hand side.
    bu: Vec<f64>,
    bv: Vec<f64>,
    active: Vec<bool>,
}

impl Reweighted {
    fn new(width: usize, height: usize) -> Self {
        let n = (width + 2) * (height + 2);
        let z = || vec![0.0; n];
        Self {
            width,
            height,
            u: z(),
            v: z(),
            east_u: z(),
            south_u: z(),
            east_v: z(),
            south_v: z(),
            i11: z(),
            i12: z(),
            i22: z(),
            bu: z(),
            bv: z(),
            active: vec![false; n],
        }
    }

    #[inline]
    fn padded(&self, x: usize, y: usize) -> usize {
        (y + 1) * (self.width + 2) + x + 1
    }

    fn reweight(&mut self, obj: &Objective, u: &[f64], v: &[f64]) {
        let (w, h) = (self.width, self.height);
        let pw = w + 2;
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let p = self.padded(x, y);
                let r = obj.residual(u, v, i);
                let k = obj.data_weight[i] * obj.penalty_slope(r * r);
                let (ux, uy) = obj.forward_diff(u, i);
                let (vx, vy) = obj.forward_diff(v, i);
                let su = obj.lambda * obj.penalty_slope(ux * ux + uy * uy);
                let sv = obj.lambda * obj.penalty_slope(vx * vx + vy * vy);
                self.east_u[p] = if x + 1 < w { su } else { 0.0 };
                self.south_u[p] = if y + 1 < h { su } else { 0.0 };
                self.east_v[p] = if x + 1 < w { sv } else { 0.0 };
                self.south_v[p] = if y + 1 < h { sv } else { 0.0 };
                let (a, b, c) = (obj.a[i], obj.b[i], obj.c[i]);
                self.bu[p] = -k * a * c;
                self.bv[p] = -k * b * c;
                self.i12[p] = k * a * b;
                self.i11[p] = k * a * a;
                self.i22[p] = k * b * b;
            }
        }
        for y in 0..h {
            for x in 0..w {
                let p = self.padded(x, y);
                let su = self.east_u[p] + self.east_u[p - 1] + self.south_u[p] + self.south_u[p - pw];
                let sv = self.east_v[p] + self.east_v[p - 1] + self.south_v[p] + self.south_v[p - pw];
                let a11 = self.i11[p] + su;
                let a22 = self.i22[p] + sv;
                let a12 = self.i12[p];
                let det = a11 * a22 - a12 * a12;
                self.active[p] = det > 1e-300;
                if self.active[p] {
                    self.i11[p] = a22 / det;
                    self.i22[p] = a11 / det;
                    self.i12[p] = -a12 / det;
                } else {
                    self.i11[p] = 0.0;
                    self.i22[p] = 0.0;
                    self.i12[p] = 0.0;
                }
            }
        }
    }

    fn load(&mut self, u: &[f64], v: &[f64]) {
        for y in 0..self.height {
            for x in 0..self.width {
                let p = self.padded(x, y);
                self.u[p] = u[y * self.width + x];
                self.v[p] = v[y * self.width + x];
            }
        }
    }

    fn store(&self, u: &mut [f64], v: &mut [f64]) {
        for y in 0..self.height {
            for x in 0..self.width {
                let p = self.padded(x, y);
                u[y * self.width + x] = self.u[p];
                v[y * self.width + x] = self.v[p];
            }
        }
    }

    /// One red-black block-SOR sweep. Returns the squared norms of the
    /// update and of the new field.
    fn sweep(&mut self, omega: f64) -> (f64, f64) {
        let pw = self.width + 2;
        let (mut step, mut norm) = (0.0, 0.0);
        for colour in 0..2 {
            for y in 0..self.height {
                let row = (y + 1) * pw + 1;
                for p in (row + (y + colour) % 2..row + self.width).step_by(2) {
                    if !self.active[p] {
                        continue;
                    }
                    let nu = self.east_u[p] * self.u[p + 1]
                        + self.east_u[p - 1] * self.u[p - 1]
                        + self.south_u[p] * self.u[p + pw]
                        + self.south_u[p - pw] * self.u[p - pw]
                        + self.bu[p];
                    let nv = self.east_v[p] * self.v[p + 1]
                        + self.east_v[p - 1] * self.v[p - 1]
                        + self.south_v[p] * self.v[p + pw]
                        + self.south_v[p - pw] * self.v[p - pw]
                        + self.bv[p];
                    let du = omega * (self.i11[p] * nu + self.i12[p] * nv - self.u[p]);
                    let dv = omega * (self.i12[p] * nu + self.i22[p] * nv - self.v[p]);
                    self.u[p] += du;
                    self.v[p] += dv;
                    step += du * du + dv * dv;
                }
            }
        }
        for y in 0..self.height {
            let row = (y + 1) * pw + 1;
            for p in row..row + self.width {
                norm += self.u[p] * self.u[p] + self.v[p] * self.v[p];
            }
        }
        (step, norm)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FlowEntry {
    pub t: Micros,
    pub x: u32,
    pub y: u32,
    /// Pixels per second.
    pub u: f64,
    pub v: f64,
}

/// Velocities at individual events.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EventFlow {
    pub entries: Vec<FlowEntry>,
}

impl EventFlow {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn extend(&mut self, other: EventFlow) {
        self.entries.extend(other.entries);
    }

    /// Entries with `t_eval - delta_t <= t < t_eval`.
    pub fn window(&self, t_eval: Micros, delta_t: Micros) -> EventFlow {
        EventFlow {
            entries: self
                .entries
                .iter()
                .filter(|e| e.t >= t_eval - delta_t && e.t < t_eval)
                .copied()
                .collect(),
        }
    }

    /// `t_us,x,y,u_pps,v_pps` lines.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.entries.len() * 40);
        for e in &self.entries {
            let _ = writeln!(out, "{},{},{},{:.6},{:.6}", e.t, e.x, e.y, e.u, e.v);
        }
        out
    }

    pub fn parse_csv(text: &str, path: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with("t_us") {
                continue;
            }
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != 5 {
                return Err(Error::parse(path, i + 1, "expected 5 fields t_us,x,y,u_pps,v_pps"));
            }
            let bad = |what: &str| Error::parse(path, i + 1, format!("invalid {what}"));
            entries.push(FlowEntry {
                t: f[0].parse().map_err(|_| bad("t_us"))?,
                x: f[1].parse().map_err(|_| bad("x"))?,
                y: f[2].parse().map_err(|_| bad("y"))?,
                u: f[3].parse().map_err(|_| bad("u_pps"))?,
                v: f[4].parse().map_err(|_| bad("v_pps"))?,
            });
        }
        Ok(Self { entries })
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_csv(&text, path)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Reads the dense flow at every event of the window: an event pixel is its
/// own nearest event, so its velocity is the flow at that pixel.
pub fn sample_at_events(flow: &FlowField, window: &EventWindow) -> EventFlow {
    let mut entries = Vec::with_capacity(window.event_count());
    for (Pixel { x, y }, times) in window.iter() {
        let (u, v) = flow.at(x as usize, y as usize);
        for &t in times {
            entries.push(FlowEntry { t, x, y, u, v });
        }
    }
    entries.sort_by_key(|e| (e.t, e.y, e.x));
    EventFlow { entries }
}
