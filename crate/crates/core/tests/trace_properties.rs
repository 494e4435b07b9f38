use multipass_core::geometry::*;
use multipass_core::optics::{propagate_q, ComplexBeamParam, TransferMatrix2};
use multipass_core::raytrace::*;
use multipass_core::Exec;
use nalgebra::Vector3;
use proptest::prelude::*;

fn fig2d() -> RecirculatingCellConfig {
    RecirculatingCellConfig {
        f2_mm: 1000.0,
        d_mm: 86.46,
        theta_x: 0.02f64.to_radians(),
        theta_x_prime: -0.02f64.to_radians(),
        x0_mm: 11.0,
        y0_mm: 0.0,
        x0_slope: 0.0,
        y0_slope: 1.2f64.to_radians(),
        beam: BeamSpec::new(780e-6, 1.0),
        tilt_sequence: None,
    }
}

fn sphere(f: f64, d: f64) -> Surface3 {
    Surface3 {
        name: "M2".into(),
        shape: Shape::Sphere { center: Vector3::new(0.0, 0.0, d - 2.0 * f), radius: 2.0 * f },
        group: 1,
        selector: Selector::Always,
        aperture_radius: None,
    }
}

fn flat(tilt: f64) -> Surface3 {
    Surface3 {
        name: "M1".into(),
        shape: Shape::Plane { point: Vector3::zeros(), normal: Vector3::new(tilt.sin(), 0.0, tilt.cos()) },
        group: 0,
        selector: Selector::Always,
        aperture_radius: None,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn reflections_are_specular(x in -10.0f64..10.0, y in -10.0f64..10.0, sx in -0.05f64..0.05, sy in -0.05f64..0.05) {
        let surfaces = vec![flat(3e-4), sphere(1000.0, 86.0)];
        let ray = Ray3::new(Vector3::new(x, y, 1.0), Vector3::new(sx, sy, -1.0));
        let opts = TraceOptions { max_hits: 40, exec: Exec::Sequential, ..Default::default() };
        let r = trace_cell(&surfaces, &[ray], &opts).unwrap();
        let hits = &r.paths[0].hits;
        prop_assert!(hits.len() >= 3);
        let mut dir = ray.dir.normalize();
        for w in hits.windows(2) {
            let out = (w[1].point - w[0].point).normalize();
            let n = surfaces[w[0].surface].shape.normal_at(&w[0].point);
            prop_assert!((dir.dot(&n) + out.dot(&n)).abs() < 1e-12);
            // incident, normal and reflected rays are coplanar
            prop_assert!(dir.cross(&out).dot(&n).abs() < 1e-12);
            dir = out;
        }
    }

    #[test]
    fn paraxial_sphere_matches_abcd(x0 in -1.0f64..1.0, s0 in -1e-3f64..1e-3) {
        // flat M1, spherical M2: track the x ray through ten round trips
        let (f, d) = (1000.0, 86.46);
        let surfaces = vec![flat(0.0), sphere(f, d)];
        let start = Vector3::new(x0 - s0 * LAUNCH_DISTANCE, 0.0, LAUNCH_DISTANCE);
        let ray = Ray3::new(start, Vector3::new(s0, 0.0, -1.0));
        let opts = TraceOptions { max_hits: 21, exec: Exec::Sequential, ..Default::default() };
        let r = trace_cell(&surfaces, &[ray], &opts).unwrap();
        let m = TransferMatrix2::propagation(d) * TransferMatrix2::lens(f) * TransferMatrix2::propagation(d);
        let mut v = [x0, s0];
        for (n, h) in r.paths[0].counted(0).enumerate() {
            // aberration error accumulates at most 1e-6 mm per bounce
            prop_assert!((h.point.x - v[0]).abs() < 1e-6 * (n + 1) as f64, "bounce {n}: {} vs {}", h.point.x, v[0]);
            v = m.apply(v);
        }
    }
}

#[test]
fn order_and_threads_do_not_change_results() {
    let cfg = fig2d();
    let surfaces = recirculating_surfaces(&cfg, MirrorAssignment::ByReflectionIndex, None).unwrap();
    let rays = sample_beam_rays(&cfg.beam, &EntryState::of(&cfg), 64, 11).unwrap();
    let opts = |exec| TraceOptions { max_hits: 20_000, counted_group: 0, exit_below_x: Some(-cfg.x0_mm), exec };
    let seq = trace_cell(&surfaces, &rays, &opts(Exec::Sequential)).unwrap();
    let par = trace_cell(&surfaces, &rays, &opts(Exec::Parallel)).unwrap();
    assert_eq!(seq, par);
    // reversing all rays but the chief keeps every per-ray path
    let mut shuffled = rays.clone();
    shuffled[1..].reverse();
    let rev = trace_cell(&surfaces, &shuffled, &opts(Exec::Parallel)).unwrap();
    for (i, p) in rev.paths.iter().enumerate().skip(1) {
        assert_eq!(p, &seq.paths[rays.len() - i]);
    }
    assert_eq!(rev.n_reflections, seq.n_reflections);
    for (a, b) in rev.spots.iter().zip(&seq.spots) {
        assert!((a.x_mm - b.x_mm).abs() < 1e-12 && (a.y_mm - b.y_mm).abs() < 1e-12);
        assert_eq!(a.rays, b.rays);
    }
}

#[test]
fn chief_ray_tracks_analytic_spots() {
    let cfg = fig2d();
    let trace = trace_recirculating(&cfg, 1, 0, MirrorAssignment::ByReflectionIndex, Exec::Sequential).unwrap();
    let spots = spot_table(&cfg).unwrap();
    let cmp = compare_to_analytic(&trace, &spots);
    assert!(cmp.count_match, "{} vs {}", cmp.n_reflections_trace, cmp.n_reflections_analytic);
    // the spherical cap adds aberrations of order x³/f² per bounce
    assert!(cmp.mean_error_mm < 0.05, "mean error {}", cmp.mean_error_mm);
}

#[test]
fn scalar_beam_on_traced_spots() {
    // the q stored on each analytic spot follows the round trip matrix
    let cfg = fig2d();
    let spots = spot_table_len(&cfg, 5).unwrap();
    let m = cfg.round_trip().unwrap();
    for w in spots.windows(2) {
        let (BeamState::Stigmatic(a), BeamState::Stigmatic(b)) = (w[0].beam, w[1].beam) else { panic!() };
        let next: ComplexBeamParam = propagate_q(a, &m).unwrap();
        assert!((next.q() - b.q()).norm() < 1e-9);
    }
}
