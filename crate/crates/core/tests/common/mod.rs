//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use evflow::distance::DistanceSurface;
use evflow::event::Micros;
use evflow::{EventWindow, Grid, Pixel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Exhaustive scan: squared distance to the closest source and, among
/// equally close sources, the one with the smallest row-major index.
pub fn brute_transform(sources: &[Pixel], width: usize, height: usize) -> (Grid<i64>, Grid<Pixel>) {
    assert!(!sources.is_empty());
    let mut sq = Grid::new(width, height, 0i64);
    let mut nn = Grid::new(width, height, Pixel::new(0, 0));
    for y in 0..height {
        for x in 0..width {
            let here = Pixel::new(x as u32, y as u32);
            let mut best: Option<(i64, usize, Pixel)> = None;
            for &s in sources {
                let key = (here.squared_distance(s), s.index(width), s);
                if best.is_none_or(|b| (key.0, key.1) < (b.0, b.1)) {
                    best = Some(key);
                }
            }
            let (d2, _, p) = best.unwrap();
            sq[(x, y)] = d2;
            nn[(x, y)] = p;
        }
    }
    (sq, nn)
}

pub fn brute_distances(sources: &[Pixel], width: usize, height: usize) -> Grid<f64> {
    brute_transform(sources, width, height).0.map(|&v| (v as f64).sqrt())
}

pub fn window_of(pixels: &[Pixel], t_eval: Micros, delta_t: Micros) -> EventWindow {
    let mut w = EventWindow::empty(t_eval, delta_t);
    for &p in pixels {
        w.insert(p, t_eval - 1);
    }
    w
}

/// `n` uniformly random pixels (duplicates allowed).
pub fn random_pixels(rng: &mut impl Rng, width: u32, height: u32, n: usize) -> Vec<Pixel> {
    (0..n)
        .map(|_| Pixel::new(rng.random_range(0..width), rng.random_range(0..height)))
        .collect()
}

/// Exact test of `sqrt(a) <= sqrt(b) + sqrt(c)` for non-negative integers.
pub fn sqrt_le_sum(a: i64, b: i64, c: i64) -> bool {
    let (a, b, c) = (a as i128, b as i128, c as i128);
    let lhs = a - b - c;
    lhs <= 0 || lhs * lhs <= 4 * b * c
}

/// Window pixels of a surface: where the distance is zero.
pub fn zero_set(s: &DistanceSurface) -> Vec<Pixel> {
    s.d().indexed_iter()
        .filter(|(_, _, &d)| d == 0.0)
        .map(|(x, y, _)| Pixel::new(x as u32, y as u32))
        .collect()
}

/// Planar angle in degrees, zero-length estimates scoring 90.
pub fn naive_angle(est: (f64, f64), gt: (f64, f64)) -> f64 {
    let ne = (est.0 * est.0 + est.1 * est.1).sqrt();
    let ng = (gt.0 * gt.0 + gt.1 * gt.1).sqrt();
    if ne == 0.0 {
        return 90.0;
    }
    let mut c = (est.0 * gt.0 + est.1 * gt.1) / (ne * ng);
    if c > 1.0 {
        c = 1.0;
    }
    if c < -1.0 {
        c = -1.0;
    }
    c.acos() * 180.0 / std::f64::consts::PI
}

pub fn naive_endpoint(est: (f64, f64), gt: (f64, f64)) -> f64 {
    let dx = est.0 - gt.0;
    let dy = est.1 - gt.1;
    100.0 * (dx * dx + dy * dy).sqrt() / (gt.0 * gt.0 + gt.1 * gt.1).sqrt()
}

/// Mean and population standard deviation.
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    let mut sum = 0.0;
    for x in v {
        sum += x;
    }
    let mean = sum / v.len() as f64;
    let mut var = 0.0;
    for x in v {
        var += (x - mean) * (x - mean);
    }
    (mean, (var / v.len() as f64).sqrt())
}

pub fn median(mut v: Vec<f64>) -> f64 {
    assert!(!v.is_empty());
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
