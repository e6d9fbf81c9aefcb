mod common;

use common::rng;
use evflow::imu::{calibrate, ground_truth_for_events, rotational_flow, ImuCalibration, ImuSample, ImuSeries};
use evflow::solver::{EventFlow, FlowEntry};
use evflow::SensorGeometry;
use nalgebra::{Rotation3, Vector3};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Back-projects a pixel, rotates the static ray as seen by the rotating
/// camera over `[-dt/2, dt/2]` and differences the reprojections.
fn projected_flow(omega: [f64; 3], g: &SensorGeometry, x: f64, y: f64) -> (f64, f64) {
    let dt = 10e-6;
    let ray = Vector3::new((x - g.cx) / g.fx, (y - g.cy) / g.fy, 1.0);
    let w = Vector3::new(omega[0], omega[1], omega[2]);
    let project = |p: Vector3<f64>| (g.fx * p.x / p.z + g.cx, g.fy * p.y / p.z + g.cy);
    let ahead = project(Rotation3::from_scaled_axis(-w * (dt / 2.0)) * ray);
    let behind = project(Rotation3::from_scaled_axis(w * (dt / 2.0)) * ray);
    ((ahead.0 - behind.0) / dt, (ahead.1 - behind.1) / dt)
}

fn random_geometry(r: &mut impl Rng) -> SensorGeometry {
    SensorGeometry::new(346, 260).with_intrinsics(
        r.random_range(150.0..450.0),
        r.random_range(150.0..450.0),
        r.random_range(150.0..200.0),
        r.random_range(110.0..150.0),
    )
}

#[test]
fn formula_matches_projection_oracle() {
    let mut r = rng(2024);
    for _ in 0..100 {
        let g = random_geometry(&mut r);
        let omega = [0; 3].map(|_| r.random_range(-3.0..3.0));
        let (x, y) = (r.random_range(0.0..346.0), r.random_range(0.0..260.0));
        let (u, v) = rotational_flow(omega, &g, x, y);
        let (ou, ov) = projected_flow(omega, &g, x, y);
        let err = (u - ou).hypot(v - ov);
        assert!(err <= 0.005 * ou.hypot(ov), "omega {omega:?} at ({x}, {y}): ({u}, {v}) vs ({ou}, {ov})");
    }
}

proptest! {
    #[test]
    fn flow_is_linear_in_omega(
        a in prop::array::uniform3(-5.0f64..5.0),
        b in prop::array::uniform3(-5.0f64..5.0),
        k in -4.0f64..4.0,
        x in 0.0f64..346.0,
        y in 0.0f64..260.0,
    ) {
        let g = SensorGeometry::new(346, 260);
        let sum = [a[0] + b[0], a[1] + b[1], a[2] + b[2]];
        let fa = rotational_flow(a, &g, x, y);
        let fb = rotational_flow(b, &g, x, y);
        let fs = rotational_flow(sum, &g, x, y);
        let scale = 1e-12 * (1.0 + fa.0.abs() + fa.1.abs() + fb.0.abs() + fb.1.abs());
        prop_assert!((fs.0 - fa.0 - fb.0).abs() <= scale && (fs.1 - fa.1 - fb.1).abs() <= scale);
        let fk = rotational_flow(a.map(|c| k * c), &g, x, y);
        prop_assert!((fk.0 - k * fa.0).abs() <= 4.0 * scale && (fk.1 - k * fa.1).abs() <= 4.0 * scale);
    }
}

#[test]
fn zero_mean_noise_gives_a_small_bias() {
    let sigma = 0.02;
    let noise = Normal::new(0.0, sigma).unwrap();
    let mut r = rng(77);
    let samples: Vec<ImuSample> = (0..1000)
        .map(|i| ImuSample {
            t: i * 1000,
            omega: [0; 3].map(|_| noise.sample(&mut r)),
        })
        .collect();
    let c = calibrate(&samples, 1_000_000).unwrap();
    for b in c.bias {
        assert!(b.abs() < 3.0 * sigma / 1000f64.sqrt(), "bias {b}");
    }
}

#[test]
fn injected_bias_is_removed() {
    let bias = [0.013, -0.008, 0.021];
    let noise = Normal::new(0.0, 0.002).unwrap();
    let mut r = rng(5);
    let mut samples: Vec<ImuSample> = (0..3000)
        .map(|i| ImuSample {
            t: i * 1000,
            omega: bias.map(|b| b + noise.sample(&mut r)),
        })
        .collect();
    // motion after the still period must not leak into the estimate
    samples.extend((3001..4000).map(|i| ImuSample { t: i * 1000, omega: [1.0, -2.0, 0.5] }));
    let c = calibrate(&samples, 3_000_000).unwrap();
    let resid = (0..3).map(|k| (c.bias[k] - bias[k]).powi(2)).sum::<f64>().sqrt();
    let norm = bias.iter().map(|b| b * b).sum::<f64>().sqrt();
    assert!(resid < 0.01 * norm, "residual {resid}");
}

#[test]
fn corrected_truth_subtracts_bias() {
    let g = SensorGeometry::new(64, 48);
    let series = ImuSeries::new(
        (0..20)
            .map(|i| ImuSample { t: i * 1000, omega: [0.1, 0.2, 0.3] })
            .collect(),
    )
    .unwrap();
    let calib = ImuCalibration { bias: [0.1, 0.2, 0.3], calib_window: 10_000 };
    let est = EventFlow {
        entries: vec![FlowEntry { t: 5000, x: 10, y: 10, u: 0.0, v: 0.0 }],
    };
    let gt = ground_truth_for_events(&series, &calib, &g, &est, 0);
    assert_eq!((gt.entries[0].u, gt.entries[0].v), (0.0, 0.0));
}
