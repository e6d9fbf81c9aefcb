mod common;

use common::*;
use evflow::denoise::{denoised_window, DenoiseConfig};
use evflow::derivatives::{
    assemble, field_from_surfaces, spatial_gradient, temporal_derivative, AssembleConfig, DerivativeKernel,
};
use evflow::distance::transform;
use evflow::{Event, EventStream, Pixel, Polarity, SensorGeometry};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn dt_is_difference_of_brute_force_surfaces(seed in any::<u64>(), n in 1usize..60, m in 1usize..60) {
        let g = SensorGeometry::new(30, 22);
        let mut r = rng(seed);
        let a = random_pixels(&mut r, 30, 22, n);
        let b = random_pixels(&mut r, 30, 22, m);
        let before = transform(&window_of(&a, 5000, 5000), &g).unwrap();
        let after = transform(&window_of(&b, 10_000, 5000), &g).unwrap();
        let dt = temporal_derivative(&before, &after, 5000);
        let da = brute_distances(&a, 30, 22);
        let db = brute_distances(&b, 30, 22);
        for (x, y, &v) in dt.indexed_iter() {
            prop_assert_eq!(v, (db[(x, y)] - da[(x, y)]) / 0.005);
        }
    }

    #[test]
    fn gradient_has_unit_norm_inside_voronoi_cells(seed in any::<u64>(), n in 1usize..8) {
        let g = SensorGeometry::new(40, 40);
        let pixels = random_pixels(&mut rng(seed), 40, 40, n);
        let s = transform(&window_of(&pixels, 5000, 5000), &g).unwrap();
        let (dx, dy) = spatial_gradient(&s, &DerivativeKernel::default());
        for y in 2..38usize {
            for x in 2..38usize {
                let n0 = s.nearest()[(x, y)];
                let shared = (y - 2..=y + 2).all(|yy| (x - 2..=x + 2).all(|xx| s.nearest()[(xx, yy)] == n0));
                if !shared || s.d()[(x, y)] < 3.0 {
                    continue;
                }
                let norm = dx[(x, y)].hypot(dy[(x, y)]);
                prop_assert!((0.9..=1.1).contains(&norm), "norm {} at ({}, {})", norm, x, y);
            }
        }
    }
}

fn stream(seed: u64) -> EventStream {
    let g = SensorGeometry::new(32, 24);
    let mut r = rng(seed);
    let mut events = Vec::new();
    // a vertical edge drifting right with a burst per pixel, plus strays
    for step in 0..30i64 {
        let x = 4 + (step / 3) as u32;
        for y in 2..22u32 {
            for k in 0..3 {
                events.push(Event::new(step * 1000 + k * 200, x, y, Polarity::Positive));
            }
        }
    }
    for p in random_pixels(&mut r, 32, 24, 20) {
        events.push(Event::new(rand::Rng::random_range(&mut r, 0..30_000), p.x, p.y, Polarity::Negative));
    }
    EventStream::new(events, g).unwrap()
}

#[test]
fn assemble_is_the_manual_composition() {
    let k = DerivativeKernel::default();
    for (seed, t, denoise) in [(1u64, 10_000i64, true), (2, 15_000, false), (3, 20_000, true)] {
        let s = stream(seed);
        let cfg = AssembleConfig {
            denoise: denoise.then(DenoiseConfig::default),
            kernel: k.clone(),
        };
        let field = assemble(&s, t, 5000, &cfg).unwrap();
        let (b, a) = if denoise {
            (
                denoised_window(&s, t, 5000, &DenoiseConfig::default()),
                denoised_window(&s, t + 5000, 5000, &DenoiseConfig::default()),
            )
        } else {
            s.window_pair(t, 5000)
        };
        let db = transform(&b, s.geometry()).unwrap();
        let da = transform(&a, s.geometry()).unwrap();
        let (dx, dy) = spatial_gradient(&db, &k);
        assert_eq!(field.dx, dx);
        assert_eq!(field.dy, dy);
        assert_eq!(field.dt, temporal_derivative(&db, &da, 5000));
        assert_eq!(field, field_from_surfaces(&db, &da, &k));
    }
}

#[test]
fn assemble_reports_empty_windows() {
    let s = stream(4);
    assert!(assemble(&s, 200_000, 5000, &AssembleConfig::default()).is_err());
}

#[test]
fn integer_translation_residual_is_small() {
    let g = SensorGeometry::new(64, 64);
    let k = DerivativeKernel::default();
    let mut r = rng(11);
    for shift in [(1i64, 0i64), (0, 2), (2, 1)] {
        let base = random_pixels(&mut r, 44, 44, 6)
            .into_iter()
            .map(|p| Pixel::new(p.x + 10, p.y + 10))
            .collect::<Vec<_>>();
        let moved: Vec<Pixel> = base
            .iter()
            .map(|p| Pixel::new((p.x as i64 + shift.0) as u32, (p.y as i64 + shift.1) as u32))
            .collect();
        let before = transform(&window_of(&base, 5000, 5000), &g).unwrap();
        let after = transform(&window_of(&moved, 10_000, 5000), &g).unwrap();
        let f = field_from_surfaces(&before, &after, &k);
        let (vx, vy) = (shift.0 as f64 / 0.005, shift.1 as f64 / 0.005);
        let speed = vx.hypot(vy);
        let (mut good, mut total) = (0, 0);
        for y in 2..62usize {
            for x in 2..62usize {
                let n0 = before.nearest()[(x, y)];
                let single = (y - 2..=y + 2).all(|yy| {
                    (x - 2..=x + 2).all(|xx| {
                        let a = after.nearest()[(xx, yy)];
                        before.nearest()[(xx, yy)] == n0
                            && a.x as i64 == n0.x as i64 + shift.0
                            && a.y as i64 == n0.y as i64 + shift.1
                    })
                });
                if !single || before.d()[(x, y)] < 3.0 {
                    continue;
                }
                total += 1;
                if (f.dx[(x, y)] * vx + f.dy[(x, y)] * vy + f.dt[(x, y)]).abs() <= 0.15 * speed {
                    good += 1;
                }
            }
        }
        assert!(total > 100);
        assert!(good as f64 >= 0.9 * total as f64, "shift {shift:?}: {good}/{total}");
    }
}
