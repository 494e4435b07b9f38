use multipass_core::geometry::*;
use multipass_core::noise::*;
use multipass_core::quad::Tolerance;
use multipass_core::Exec;
use proptest::prelude::*;

const LAMBDA: f64 = 780e-6;

fn d_rb() -> f64 {
    diffusion_constant(&GasSpec::rb_n2(393.15, 70.0)).unwrap()
}

fn recirc(f2: f64, d: f64, w0: f64) -> RecirculatingCellConfig {
    RecirculatingCellConfig {
        f2_mm: f2,
        d_mm: d,
        theta_x: 0.0,
        theta_x_prime: 0.0,
        x0_mm: 5.0,
        y0_mm: 0.0,
        x0_slope: 0.0,
        y0_slope: 0.02,
        beam: BeamSpec::new(LAMBDA, w0),
        tilt_sequence: None,
    }
}

fn stig(mode: BeamMode) -> SegmentOptions {
    SegmentOptions::new(mode, Evolution::Piecewise)
}

fn default_grid() -> Vec<f64> {
    log_grid(1e-6, 0.02, 200).unwrap()
}

fn cylindrical(w0: f64, trips: usize) -> CylindricalCellConfig {
    CylindricalCellConfig {
        f_mm: 50.0,
        twist: 50f64.to_radians(),
        d_mm: 30.0,
        round_trips: trips,
        w_xi0_mm: w0,
        w_eta0_mm: w0,
        x0_mm: 8.0,
        y0_mm: 0.0,
        x0_slope: 0.0,
        y0_slope: 0.01,
        beam: BeamSpec::new(LAMBDA, w0),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn astigmatic_path_reduces_to_stigmatic(
        f2 in 500.0f64..20000.0,
        w0 in 0.3f64..2.0,
        trips in 1usize..8,
        lit in any::<bool>(),
    ) {
        let evolution = if lit { Evolution::PaperLiteral } else { Evolution::Piecewise };
        let segs = recirculating_segments(&recirc(f2, 30.0, w0), trips, &SegmentOptions::new(BeamMode::Stigmatic, evolution)).unwrap();
        for tau in [0.0, 1e-6, 1e-4, 3e-3, 0.02] {
            let a = cd_stigmatic(&segs, d_rb(), tau).unwrap();
            let b = cd_astigmatic(&segs, d_rb(), tau).unwrap();
            prop_assert!((a - b).abs() <= 1e-6 * a, "τ = {tau}: {a} vs {b}");
        }
    }

    #[test]
    fn barrier_over_focus_raises_cd(width in 0.2f64..8.0, frac in 0.05f64..0.95, w0 in 0.5f64..1.5) {
        let spots = spot_table_len(&recirc(1300.0, 45.0, w0), 6).unwrap();
        let optics = SegmentOptics::spherical(45.0, 1300.0, LAMBDA);
        let seg = build_pass_segments(&spots[5..6], &optics, &stig(BeamMode::Stigmatic)).unwrap();
        let focus = seg[0].focus_z().unwrap();
        // any slab containing the focus
        let lo = (focus - frac * width).max(-45.0);
        let hi = (lo + width).min(45.0);
        let blocked = apply_barrier(&seg, &[(lo, hi)]).unwrap();
        for tau in [1e-5, 1e-4, 1e-3, 1e-2] {
            let a = cd_stigmatic(&seg, d_rb(), tau).unwrap();
            let b = cd_stigmatic(&blocked, d_rb(), tau).unwrap();
            prop_assert!(b >= a, "τ = {tau}: blocked {b} < open {a}");
        }
    }

    #[test]
    fn psd_ignores_amplitude(m in -20i32..20, k in 0.01f64..100.0) {
        let taus: Vec<f64> = (0..2000).map(|i| i as f64 * 1e-5).collect();
        let cd: Vec<f64> = taus.iter().map(|t| 1.0 / (1.0 + t / 2e-3)).collect();
        let dynamics = SpinDynamics { larmor_hz: 1000.0, t2_s: 5e-3 };
        let c = full_correlation(&taus, &cd, &dynamics).unwrap();
        let freqs: Vec<f64> = (0..200).map(|i| i as f64 * 10.0).collect();
        let base = psd(&taus, &c, &freqs).unwrap().psd;
        let pow2 = 2f64.powi(m);
        let scaled: Vec<f64> = c.iter().map(|v| v * pow2).collect();
        prop_assert_eq!(&psd(&taus, &scaled, &freqs).unwrap().psd, &base);
        let scaled: Vec<f64> = c.iter().map(|v| v * k).collect();
        for (a, b) in psd(&taus, &scaled, &freqs).unwrap().psd.iter().zip(&base) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
        // stretching time by 2^m compresses the spectrum by the same factor
        let stretched: Vec<f64> = taus.iter().map(|t| t * pow2).collect();
        let squeezed: Vec<f64> = freqs.iter().map(|f| f / pow2).collect();
        prop_assert_eq!(&psd(&stretched, &c, &squeezed).unwrap().psd, &base);
    }
}

#[test]
fn shipped_style_configs_are_bounded_and_monotone() {
    let d = d_rb();
    let grid = default_grid();
    let opts = CdOptions::default();
    let mut cases: Vec<(String, Vec<PassSegment>, BeamMode)> = Vec::new();
    for (f2, w0) in [(1000.0, 1.0), (10000.0, 1.0), (1000.0, 5.0), (10000.0, 5.0)] {
        let s = recirculating_segments(&recirc(f2, 30.0, w0), 50, &stig(BeamMode::Stigmatic)).unwrap();
        cases.push((format!("recirc f {f2} w0 {w0}"), s, BeamMode::Stigmatic));
    }
    for w0 in [1.0, 2.0, 5.0] {
        let s = cylindrical_segments(&cylindrical(w0, 21), &stig(BeamMode::Astigmatic)).unwrap();
        cases.push((format!("cyl w0 {w0}"), s, BeamMode::Astigmatic));
    }
    for (name, segs, mode) in cases {
        let cd = cd_grid(&segs, d, &grid, mode, &opts).unwrap();
        assert!((cd_astigmatic(&segs, d, 1e-12).unwrap() - 1.0).abs() < 1e-3, "{name}");
        for (i, v) in cd.iter().enumerate() {
            assert!(*v > 0.0 && *v <= 1.0 + 1e-12, "{name}: C_d[{i}] = {v}");
        }
        for w in cd.windows(2) {
            assert!(w[1] <= w[0], "{name}: C_d rises {} -> {}", w[0], w[1]);
        }
    }
}

#[test]
fn tighter_quadrature_changes_little() {
    let d = d_rb();
    let cases = [
        (recirculating_segments(&recirc(1000.0, 30.0, 1.0), 50, &stig(BeamMode::Stigmatic)).unwrap(), Longitudinal::Local, 1e-9, 40),
        (recirculating_segments(&recirc(1000.0, 30.0, 5.0), 50, &stig(BeamMode::Stigmatic)).unwrap(), Longitudinal::Local, 1e-9, 40),
        (cylindrical_segments(&cylindrical(1.0, 21), &stig(BeamMode::Astigmatic)).unwrap(), Longitudinal::Local, 1e-9, 40),
        (cylindrical_segments(&cylindrical(2.0, 2), &stig(BeamMode::Astigmatic)).unwrap(), Longitudinal::FullKernel, 1e-8, 6),
    ];
    for (segs, longitudinal, rel, points) in cases {
        let grid = log_grid(1e-6, 0.02, points).unwrap();
        let coarse = CdOptions { longitudinal, ..Default::default() };
        let fine = CdOptions { longitudinal, tol: Tolerance::default().with_rel(rel).with_abs(1e-15), ..Default::default() };
        let a = cd_grid(&segs, d, &grid, BeamMode::Astigmatic, &coarse).unwrap();
        let b = cd_grid(&segs, d, &grid, BeamMode::Astigmatic, &fine).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-4, "{x} vs {y}");
        }
    }
}

#[test]
fn full_kernel_tracks_local_model() {
    // end losses over a long round trip are small, so both longitudinal models agree closely
    let segs = cylindrical_segments(&cylindrical(2.0, 5), &stig(BeamMode::Astigmatic)).unwrap();
    let full = CdOptions { longitudinal: Longitudinal::FullKernel, ..Default::default() };
    for tau in [1e-5, 1e-4, 1e-3] {
        let a = cd_astigmatic(&segs, d_rb(), tau).unwrap();
        let b = cd_astigmatic_with(&segs, d_rb(), tau, &full).unwrap();
        assert!(b <= a + 1e-6 && (a - b).abs() < 0.01, "τ = {tau}: local {a}, full {b}");
    }
}

#[test]
fn monte_carlo_is_seeded_and_thread_independent() {
    let segs = recirculating_segments(&recirc(1000.0, 30.0, 1.0), 5, &stig(BeamMode::Stigmatic)).unwrap();
    let run = |seed, exec| cd_monte_carlo(&segs, d_rb(), 1e-3, 40_000, seed, Longitudinal::Local, exec).unwrap();
    let a = run(3, Exec::Sequential);
    assert_eq!(a, run(3, Exec::Parallel));
    assert_ne!(a.value, run(4, Exec::Sequential).value);
    assert!(cd_monte_carlo(&segs, d_rb(), 1e-3, 100, 3, Longitudinal::Local, Exec::Sequential).is_err());
}

#[test]
fn monte_carlo_agrees_with_quadrature() {
    let d = d_rb();
    let segs = recirculating_segments(&recirc(1000.0, 30.0, 1.0), 5, &stig(BeamMode::Stigmatic)).unwrap();
    let taus = [1e-9, 1e-5, 1e-4, 1e-3, 1e-2];
    let mc = cd_monte_carlo_grid(&segs, d, &taus, 50_000, 9, Longitudinal::Local, Exec::Parallel).unwrap();
    for (t, m) in taus.iter().zip(&mc) {
        let q = cd_stigmatic(&segs, d, *t).unwrap();
        assert!((m.value - q).abs() <= (3.0 * m.std_error).max(0.02), "τ = {t}: MC {} ± {}, quad {q}", m.value, m.std_error);
    }
}

#[test]
fn full_correlation_contract() {
    let taus = log_grid(1e-6, 0.02, 100).unwrap();
    let cd: Vec<f64> = taus.iter().map(|t| (-t / 3e-3).exp()).collect();
    let flat = SpinDynamics { larmor_hz: 0.0, t2_s: 1e300 };
    assert_eq!(full_correlation(&taus, &cd, &flat).unwrap(), cd);
    let dynamics = SpinDynamics { larmor_hz: 2000.0, t2_s: 0.01 };
    let c = full_correlation(&taus, &cd, &dynamics).unwrap();
    for (x, y) in c.iter().zip(&cd) {
        assert!(x.abs() <= *y);
    }
    let half_period = 1.0 / (2.0 * dynamics.larmor_hz);
    let at = full_correlation(&[0.0, half_period], &[1.0, 0.8], &dynamics).unwrap();
    assert_eq!(at[0], 1.0);
    assert!(at[1] < 0.0);
    assert!(full_correlation(&taus, &cd[1..], &dynamics).is_err());
}

#[test]
fn slower_decay_gives_narrower_line() {
    let dynamics = SpinDynamics { larmor_hz: 1000.0, t2_s: 0.01 };
    let taus: Vec<f64> = (0..=40_000).map(|i| i as f64 * 5e-6).collect();
    let freqs: Vec<f64> = (0..=2000).map(|i| i as f64 * 1.0).collect();
    let width = |scale: f64| {
        let cd: Vec<f64> = taus.iter().map(|t| 1.0 / (1.0 + t / scale).sqrt()).collect();
        let c = full_correlation(&taus, &cd, &dynamics).unwrap();
        half_width(&freqs, &psd(&taus, &c, &freqs).unwrap().psd).unwrap()
    };
    assert!(width(1e-2) < width(1e-3));
}
