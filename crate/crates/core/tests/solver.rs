mod common;

use common::*;
use evflow::derivatives::{boundary_mask, field_from_surfaces, DerivativeField, DerivativeKernel};
use evflow::distance::transform;
use evflow::solver::{lorentzian, lorentzian_derivative, solve, Objective, SolverConfig};
use evflow::{Grid, Pixel, SensorGeometry};
use proptest::prelude::*;
use rand::Rng;

fn random_objective(seed: u64, w: usize, h: usize, blend: f64) -> (Objective, Vec<f64>, Vec<f64>) {
    let mut r = rng(seed);
    let n = w * h;
    let mut draw = |lo: f64, hi: f64| (0..n).map(|_| r.random_range(lo..hi)).collect::<Vec<f64>>();
    let a = draw(-1.0, 1.0);
    let b = draw(-1.0, 1.0);
    let c = draw(-3.0, 3.0);
    let weight = draw(0.0, 1.0).into_iter().map(|v| if v < 0.1 { 0.0 } else { 1.0 }).collect();
    let u = draw(-2.0, 2.0);
    let v = draw(-2.0, 2.0);
    (Objective::new(w, h, a, b, c, weight, 0.1, 0.7, blend), u, v)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn lorentzian_slope_matches_finite_differences(r in -50.0f64..50.0, sigma in 0.05f64..5.0) {
        let h = 1e-5 * (1.0 + r.abs());
        let fd = (lorentzian(r + h, sigma) - lorentzian(r - h, sigma)) / (2.0 * h);
        let an = lorentzian_derivative(r, sigma);
        prop_assert!((fd - an).abs() <= 1e-6 * an.abs().max(1e-3), "{} vs {}", fd, an);
    }
}

#[test]
fn objective_gradient_matches_central_differences() {
    for (seed, blend) in [(1u64, 0.0), (2, 0.5), (3, 1.0)] {
        let (obj, u, v) = random_objective(seed, 16, 16, blend);
        let (gu, gv) = obj.gradient(&u, &v);
        let mut r = rng(seed + 100);
        for _ in 0..10 {
            let i = r.random_range(0..256);
            for comp in 0..2 {
                let h = 1e-6;
                let (mut up, mut vp) = (u.clone(), v.clone());
                let (mut um, mut vm) = (u.clone(), v.clone());
                if comp == 0 {
                    up[i] += h;
                    um[i] -= h;
                } else {
                    vp[i] += h;
                    vm[i] -= h;
                }
                let fd = (obj.energy(&up, &vp) - obj.energy(&um, &vm)) / (2.0 * h);
                let an = if comp == 0 { gu[i] } else { gv[i] };
                assert!(
                    (fd - an).abs() <= 1e-5 * an.abs().max(1.0),
                    "blend {blend} pixel {i}: {fd} vs {an}"
                );
            }
        }
    }
}

/// A derivative field from a window of random events moved by a fixed
/// shift, with some of the events replaced to add noise.
fn noisy_field(seed: u64, w: u32, h: u32) -> DerivativeField {
    let g = SensorGeometry::new(w, h);
    let mut r = rng(seed);
    let base = random_pixels(&mut r, w - 8, h - 8, 25);
    let before: Vec<Pixel> = base.iter().map(|p| Pixel::new(p.x + 2, p.y + 3)).collect();
    let mut after: Vec<Pixel> = base.iter().map(|p| Pixel::new(p.x + 4, p.y + 4)).collect();
    for p in after.iter_mut().take(6) {
        *p = Pixel::new(r.random_range(0..w), r.random_range(0..h));
    }
    let db = transform(&window_of(&before, 5000, 5000), &g).unwrap();
    let da = transform(&window_of(&after, 10_000, 5000), &g).unwrap();
    field_from_surfaces(&db, &da, &DerivativeKernel::default())
}

#[test]
fn energy_never_increases_within_a_stage() {
    for seed in 0..4 {
        let f = noisy_field(seed, 40, 32);
        let out = solve(&f, &SolverConfig::default(), &boundary_mask(40, 32, 2)).unwrap();
        let trace = &out.energy_trace;
        assert!(trace.len() > 3);
        for pair in trace.windows(2) {
            if pair[0].stage == pair[1].stage {
                let slack = 1e-9 * pair[0].energy.abs().max(1.0);
                assert!(pair[1].energy <= pair[0].energy + slack, "seed {seed}: {pair:?}");
            }
        }
        let stages: Vec<usize> = trace.iter().map(|s| s.stage).collect();
        assert!(stages.windows(2).all(|s| s[0] <= s[1]));
        assert_eq!(*stages.last().unwrap(), 2);
    }
}

#[test]
fn stronger_smoothing_lowers_total_variation() {
    let f = noisy_field(7, 40, 32);
    let mask = boundary_mask(40, 32, 2);
    let weak = solve(&f, &SolverConfig::default(), &mask).unwrap();
    let strong = solve(&f, &SolverConfig { lambda: 1.0, ..SolverConfig::default() }, &mask).unwrap();
    assert!(strong.total_variation() < weak.total_variation());
}

#[test]
fn shifting_the_input_shifts_the_flow() {
    // Crops of one large field at two offsets. The influence of the crop
    // border decays geometrically, about 100x every 4 px on this data.
    let (big_w, big_h) = (80usize, 72usize);
    let mut r = rng(21);
    let angle: Vec<f64> = (0..big_w * big_h).map(|_| r.random_range(0.0..std::f64::consts::TAU)).collect();
    let dt: Vec<f64> = (0..big_w * big_h).map(|_| r.random_range(-400.0..400.0)).collect();
    let crop = |ox: usize, oy: usize, w: usize, h: usize| DerivativeField {
        dx: Grid::from_fn(w, h, |x, y| angle[(y + oy) * big_w + x + ox].cos()),
        dy: Grid::from_fn(w, h, |x, y| angle[(y + oy) * big_w + x + ox].sin()),
        dt: Grid::from_fn(w, h, |x, y| dt[(y + oy) * big_w + x + ox]),
        t_eval: 5000,
        delta_t: 5000,
    };
    let cfg = SolverConfig {
        convergence_tol: 1e-12,
        outer_iters: 60,
        inner_iters: 200,
        ..SolverConfig::default()
    };
    let (w, h) = (64usize, 56usize);
    let m = 22;
    let mask = Grid::new(w, h, false);
    let base = solve(&crop(0, 0, w, h), &cfg, &mask).unwrap();
    for (sx, sy) in [(2usize, 0usize), (1, 3), (5, 4)] {
        let moved = solve(&crop(sx, sy, w, h), &cfg, &mask).unwrap();
        let scale = base.u.iter().chain(base.v.iter()).fold(0.0f64, |m, v| m.max(v.abs()));
        for y in m..h - m {
            for x in m..w - m {
                let (a, b) = base.at(x + sx, y + sy);
                let (c, d) = moved.at(x, y);
                assert!((a - c).abs() <= 1e-6 * scale && (b - d).abs() <= 1e-6 * scale,
                    "shift ({sx}, {sy}) at ({x}, {y}): ({a}, {b}) vs ({c}, {d})");
            }
        }
    }
}

#[test]
fn vertical_line_pair_moves_right() {
    let g = SensorGeometry::new(64, 48);
    let line = |x: u32| (0..48).map(|y| Pixel::new(x, y)).collect::<Vec<_>>();
    let before = transform(&window_of(&line(30), 5000, 5000), &g).unwrap();
    let after = transform(&window_of(&line(32), 10_000, 5000), &g).unwrap();
    let f = field_from_surfaces(&before, &after, &DerivativeKernel::default());
    let out = solve(&f, &SolverConfig::default(), &boundary_mask(64, 48, 2)).unwrap();
    let mut us = Vec::new();
    let mut vs = Vec::new();
    for y in 2..46usize {
        for x in 20..=40usize {
            us.push(out.u[(x, y)]);
            vs.push(out.v[(x, y)].abs());
        }
    }
    let (mu, mv) = (median(us), median(vs));
    assert!((320.0..=480.0).contains(&mu), "median u {mu}");
    assert!(mv < 80.0, "median |v| {mv}");
}
