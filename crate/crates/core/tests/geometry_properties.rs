use std::f64::consts::PI;

use multipass_core::geometry::*;
use proptest::prelude::*;

fn cell(d: f64, theta_x: f64, x0: f64, x0_slope: f64, y0_slope: f64) -> RecirculatingCellConfig {
    RecirculatingCellConfig {
        f2_mm: 1000.0,
        d_mm: d,
        theta_x,
        theta_x_prime: -theta_x,
        x0_mm: x0,
        y0_mm: 0.0,
        x0_slope,
        y0_slope,
        beam: BeamSpec::new(780e-6, 1.0),
        tilt_sequence: None,
    }
}

proptest! {
    #[test]
    fn untilted_spots_lie_on_an_ellipse(d in 5.0f64..1900.0, x0 in 1.0f64..15.0, xs in -0.05f64..0.05, ys in -0.05f64..0.05) {
        let cfg = cell(d, 0.0, x0, xs, ys);
        let c = cfg.theta().unwrap().cos();
        let pts: Vec<(f64, f64)> = (0..60).map(|n| (spot_x(n, &cfg).unwrap(), spot_y(n, &cfg).unwrap())).collect();
        // both coordinates are sinusoids of the same frequency, so the pattern is an ellipse
        for w in pts.windows(3) {
            let scale = 1.0 + w[1].0.abs() + w[1].1.abs();
            prop_assert!((w[0].0 + w[2].0 - 2.0 * c * w[1].0).abs() < 1e-9 * scale);
            prop_assert!((w[0].1 + w[2].1 - 2.0 * c * w[1].1).abs() < 1e-9 * scale);
        }
    }

    #[test]
    fn rational_angle_closes(q in 3usize..40, p_frac in 0.0f64..1.0) {
        // θ = 2πp/q with p coprime to q and p/q < 1/2 (stable range of the half-symmetric cell)
        let p = 1 + ((q / 2).saturating_sub(1) as f64 * p_frac) as usize;
        prop_assume!(2 * p < q && gcd(p, q) == 1);
        let theta = 2.0 * PI * p as f64 / q as f64;
        let d = 1000.0 * (1.0 - theta.cos());
        let cfg = cell(d, 0.0, 7.0, 0.001, 0.02);
        for n in 0..q {
            let (a, b) = (spot_x(n, &cfg).unwrap(), spot_x(n + q, &cfg).unwrap());
            prop_assert!((a - b).abs() < 1e-8, "x({n}) = {a}, x({}) = {b}", n + q);
            let (a, b) = (spot_y(n, &cfg).unwrap(), spot_y(n + q, &cfg).unwrap());
            prop_assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn tilt_response_is_linear(d in 20.0f64..400.0, tilt in 1e-5f64..1e-3, n in 0usize..300) {
        let base = spot_x(n, &cell(d, 0.0, 8.0, -0.004, 0.03)).unwrap();
        let one = spot_x(n, &cell(d, tilt, 8.0, -0.004, 0.03)).unwrap() - base;
        let two = spot_x(n, &cell(d, 2.0 * tilt, 8.0, -0.004, 0.03)).unwrap() - base;
        prop_assert!((two - 2.0 * one).abs() <= 1e-10 * two.abs().max(1e-3));
    }

    #[test]
    fn closed_form_count_monotonicity(d in 20.0f64..400.0, tilt in 1e-4f64..1e-3, x0 in 2.0f64..15.0, k in 1.0f64..3.0) {
        let n = |t: f64, x: f64| total_reflections_exact(&cell(d, t, x, 0.0, 0.02)).unwrap();
        // larger tilt means larger Δ and fewer reflections; larger x0 means more
        prop_assert!(n(k * tilt, x0) <= n(tilt, x0));
        prop_assert!(n(tilt, k * x0) >= n(tilt, x0));
    }

    #[test]
    fn cylindrical_blocks_are_unimodular(twist_deg in 5.0f64..89.9, f in 40.0f64..200.0) {
        let cfg = CylindricalCellConfig {
            f_mm: f,
            twist: twist_deg.to_radians(),
            d_mm: 30.0,
            round_trips: 5,
            w_xi0_mm: 1.0,
            w_eta0_mm: 1.0,
            x0_mm: 5.0,
            y0_mm: 0.0,
            x0_slope: 0.0,
            y0_slope: 0.01,
            beam: BeamSpec::new(780e-6, 1.0),
        };
        let Ok(rt) = cylindrical_round_trip(&cfg) else { return Ok(()) };
        prop_assert!((rt.m_xi.det() - 1.0).abs() < 1e-10);
        prop_assert!((rt.m_eta.det() - 1.0).abs() < 1e-10);
        let back = rt.reconstruct().unwrap();
        prop_assert!((back - rt.matrix).abs().max() < 1e-10);
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 { a } else { gcd(b, a % b) }
}
