//! Angular and relative endpoint errors of per-event flow.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::event::Micros;
use crate::solver::{EventFlow, FlowField};

/// Ground-truth speed (px/s) at or below which an event is excluded.
pub const DEFAULT_MAGNITUDE_FLOOR: f64 = 5.0;

/// Planar angle between two velocities in degrees. A zero-length estimate
/// scores 90.
pub fn angular_error(est: (f64, f64), gt: (f64, f64)) -> f64 {
    let ne = est.0.hypot(est.1);
    let ng = gt.0.hypot(gt.1);
    if ne == 0.0 || ng == 0.0 {
        return 90.0;
    }
    let c = (est.0 * gt.0 + est.1 * gt.1) / (ne * ng);
    c.clamp(-1.0, 1.0).acos().to_degrees()
}

/// Angle between the space-time vectors `(u*s, v*s, 1)`, in degrees.
pub fn angular_error_space_time(est: (f64, f64), gt: (f64, f64), s: f64) -> f64 {
    let a = [est.0 * s, est.1 * s, 1.0];
    let b = [gt.0 * s, gt.1 * s, 1.0];
    let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    (dot / (na * nb)).clamp(-1.0, 1.0).acos().to_degrees()
}

/// `100 * |est - gt| / |gt|`.
pub fn relative_endpoint_error(est: (f64, f64), gt: (f64, f64)) -> f64 {
    100.0 * (est.0 - gt.0).hypot(est.1 - gt.1) / gt.0.hypot(gt.1)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AngleMode {
    Planar,
    /// Space-time angle with velocities scaled by this many seconds.
    SpaceTime(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RaeeMode {
    MeanOfRatios,
    RatioOfSums,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalConfig {
    pub magnitude_floor: f64,
    pub angle: AngleMode,
    pub raee: RaeeMode,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            magnitude_floor: DEFAULT_MAGNITUDE_FLOOR,
            angle: AngleMode::Planar,
            raee: RaeeMode::MeanOfRatios,
        }
    }
}

/// Means and population standard deviations over evaluated events.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FlowErrorStats {
    pub aae_deg: f64,
    pub aae_std: f64,
    pub raee_pct: f64,
    pub raee_std: f64,
    pub n_events: usize,
    /// Matched events whose ground-truth speed is at or below the floor.
    pub n_excluded: usize,
    /// Estimates without a ground-truth entry.
    pub n_unmatched: usize,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Scores `(estimate, truth)` pairs.
pub fn evaluate_pairs(
    pairs: impl IntoIterator<Item = ((f64, f64), (f64, f64))>,
    cfg: &EvalConfig,
) -> Result<FlowErrorStats> {
    let mut aae = Vec::new();
    let mut raee = Vec::new();
    let mut excluded = 0;
    let (mut err_sum, mut gt_sum) = (0.0, 0.0);
    for (est, gt) in pairs {
        let speed = gt.0.hypot(gt.1);
        if speed <= cfg.magnitude_floor {
            excluded += 1;
            continue;
        }
        aae.push(match cfg.angle {
            AngleMode::Planar => angular_error(est, gt),
            AngleMode::SpaceTime(s) => angular_error_space_time(est, gt, s),
        });
        raee.push(relative_endpoint_error(est, gt));
        err_sum += (est.0 - gt.0).hypot(est.1 - gt.1);
        gt_sum += speed;
    }
    if aae.is_empty() {
        return Err(Error::NoOverlap);
    }
    let (aae_deg, aae_std) = mean_std(&aae);
    let (mut raee_pct, raee_std) = mean_std(&raee);
    if cfg.raee == RaeeMode::RatioOfSums {
        raee_pct = 100.0 * err_sum / gt_sum;
    }
    Ok(FlowErrorStats {
        aae_deg,
        aae_std,
        raee_pct,
        raee_std,
        n_events: aae.len(),
        n_excluded: excluded,
        n_unmatched: 0,
    })
}

/// Joins estimates to truth on `(t, x, y)` and scores the matches.
pub fn evaluate(est: &EventFlow, gt: &EventFlow, cfg: &EvalConfig) -> Result<FlowErrorStats> {
    let mut truth: HashMap<(Micros, u32, u32), (f64, f64)> = HashMap::with_capacity(gt.len());
    for e in &gt.entries {
        truth.entry((e.t, e.x, e.y)).or_insert((e.u, e.v));
    }
    let mut unmatched = 0;
    let pairs: Vec<_> = est
        .entries
        .iter()
        .filter_map(|e| {
            let g = truth.get(&(e.t, e.x, e.y));
            if g.is_none() {
                unmatched += 1;
            }
            g.map(|&g| ((e.u, e.v), g))
        })
        .collect();
    let mut stats = evaluate_pairs(pairs, cfg)?;
    stats.n_unmatched = unmatched;
    Ok(stats)
}

/// Scores estimates against a dense truth field sampled at each event pixel.
pub fn evaluate_dense(est: &EventFlow, gt: &FlowField, cfg: &EvalConfig) -> Result<FlowErrorStats> {
    let mut unmatched = 0;
    let pairs: Vec<_> = est
        .entries
        .iter()
        .filter_map(|e| {
            let (x, y) = (e.x as usize, e.y as usize);
            if x >= gt.width() || y >= gt.height() {
                unmatched += 1;
                return None;
            }
            Some(((e.u, e.v), gt.at(x, y)))
        })
        .collect();
    let mut stats = evaluate_pairs(pairs, cfg)?;
    stats.n_unmatched = unmatched;
    Ok(stats)
}

/// One line per sequence, aligned.
pub fn report_text(rows: &[(String, FlowErrorStats)]) -> String {
    let width = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(8);
    let mut out = format!(
        "{:<width$}  {:>8}  {:>8}  {:>8}  {:>8}  {:>8}  {:>10}\n",
        "sequence", "RAEE%", "RAEE_std", "AAE_deg", "AAE_std", "n", "n_excluded"
    );
    for (name, s) in rows {
        let _ = writeln!(
            out,
            "{:<width$}  {:>8.2}  {:>8.2}  {:>8.2}  {:>8.2}  {:>8}  {:>10}",
            name, s.raee_pct, s.raee_std, s.aae_deg, s.aae_std, s.n_events, s.n_excluded
        );
    }
    out
}

pub fn report_csv(rows: &[(String, FlowErrorStats)]) -> String {
    let mut out = String::from("sequence,raee_pct,raee_std,aae_deg,aae_std,n,n_excluded\n");
    for (name, s) in rows {
        let _ = writeln!(
            out,
            "{},{:.6},{:.6},{:.6},{:.6},{},{}",
            name, s.raee_pct, s.raee_std, s.aae_deg, s.aae_std, s.n_events, s.n_excluded
        );
    }
    out
}
