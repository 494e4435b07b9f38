use std::path::{Path, PathBuf};
use std::process::Command;

use multipass_cli::config::RunConfig;
use proptest::prelude::*;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_multipass"))
}

fn recipe(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../recipes").join(format!("{name}.toml"))
}

fn run_ok(args: &[&str]) -> std::process::Output {
    let out = bin().args(args).output().unwrap();
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn exit_code(config_text: &str, command: &str) -> (i32, String) {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.toml");
    std::fs::write(&path, config_text).unwrap();
    let out = bin()
        .args([command, "--config", path.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()])
        .output()
        .unwrap();
    (out.status.code().unwrap(), String::from_utf8_lossy(&out.stderr).into_owned())
}

const FIG1: &str = r#"
[cell]
kind = "recirculating"
f2_mm = 1000
d_mm = 29.8
theta_x_deg = 0.04
x0_mm = 8.11
x0_slope_deg = -0.26
y0_slope_deg = 2.21
[beam]
w0_mm = 1
"#;

#[test]
fn exit_codes() {
    assert_eq!(exit_code(FIG1, "nrefl").0, 0);
    let (code, err) = exit_code(&FIG1.replace("d_mm", "d"), "nrefl");
    assert_eq!(code, 2);
    assert!(err.contains("cell.d") && err.contains("d_mm"), "{err}");
    assert_eq!(exit_code(&FIG1.replace("x0_mm", "x0_inch"), "nrefl").0, 2);
    // untilted mirrors: the beam never leaves
    assert_eq!(exit_code(&FIG1.replace("theta_x_deg = 0.04", "theta_x_deg = 0"), "nrefl").0, 2);
    // unstable separation
    assert_eq!(exit_code(&FIG1.replace("d_mm = 29.8", "d_mm = 2500"), "spots").0, 2);
    let inverted = format!(
        "{FIG1}[sweep]\nd_min_mm = 50\nd_max_mm = 20\nd_points = 3\ny0_slope_min_deg = 1\ny0_slope_max_deg = 2\ny0_slope_points = 3\n"
    );
    let (code, err) = exit_code(&inverted, "sweep");
    assert_eq!(code, 2);
    assert!(err.contains("sweep.d_min_mm"), "{err}");
    // a 10 mm waist does not fit a 30 mm cell
    let wide = FIG1.replace("w0_mm = 1", "w0_mm = 10").replace("d_mm = 29.8", "d_mm = 30");
    assert_eq!(exit_code(&wide, "noise").0, 2);
    assert_eq!(bin().arg("nrefl").output().unwrap().status.code(), Some(2));
}

#[test]
fn manifest_reproduces_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let fig2d = recipe("fig2d");
    run_ok(&["trace", "--config", fig2d.to_str().unwrap(), "--out", a.to_str().unwrap(), "--rays", "40", "--seed", "5"]);
    let manifest = a.join("manifest.json");
    run_ok(&["trace", "--config", manifest.to_str().unwrap(), "--out", b.to_str().unwrap()]);
    for f in ["trace.csv", "trace_spots.csv", "comparison.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f} differs");
    }
    let m: serde_json::Value = serde_json::from_slice(&std::fs::read(&manifest).unwrap()).unwrap();
    assert_eq!(m["seed"], 5);
    assert_eq!(m["config"]["trace"]["rays"], 40);
    assert_eq!(m["command"], "trace");
}

#[test]
fn noise_outputs_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = format!("{FIG1}[noise]\ntau_points = 12\nf_points = 101\nmc_samples = 20000\n").replace("d_mm = 29.8", "d_mm = 30");
    let path = dir.path().join("n.toml");
    std::fs::write(&path, cfg).unwrap();
    let outs: Vec<PathBuf> = (0..2).map(|i| dir.path().join(format!("o{i}"))).collect();
    for o in &outs {
        run_ok(&["noise", "--config", path.to_str().unwrap(), "--out", o.to_str().unwrap(), "--oracle"]);
    }
    for f in ["correlation.csv", "psd.csv"] {
        assert_eq!(std::fs::read(outs[0].join(f)).unwrap(), std::fs::read(outs[1].join(f)).unwrap(), "{f} differs");
    }
    let text = std::fs::read_to_string(outs[0].join("correlation.csv")).unwrap();
    assert!(text.starts_with("tau_s,Cd,C,Cd_mc,Cd_mc_se"));
    assert_eq!(text.lines().count(), 13);
}

#[test]
fn single_point_sweep_matches_nrefl() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = format!(
        "{FIG1}[sweep]\nd_min_mm = 29.8\nd_max_mm = 29.8\nd_points = 1\ny0_slope_min_deg = 2.21\ny0_slope_max_deg = 2.21\ny0_slope_points = 1\n"
    );
    let path = dir.path().join("s.toml");
    std::fs::write(&path, cfg).unwrap();
    let o = dir.path().join("o");
    run_ok(&["sweep", "--config", path.to_str().unwrap(), "--out", o.to_str().unwrap(), "--deg"]);
    let text = std::fs::read_to_string(o.join("sweep.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("d_mm,y0_slope_deg,n_refl,error"));
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row[2], "78");
    let out = run_ok(&["nrefl", "--config", path.to_str().unwrap(), "--out", o.to_str().unwrap()]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("n_reflections = 78"));
}

#[test]
fn angle_echo_flags() {
    let dir = tempfile::tempdir().unwrap();
    let fig1 = recipe("fig1");
    let o = dir.path().join("o");
    run_ok(&["spots", "--config", fig1.to_str().unwrap(), "--out", o.to_str().unwrap(), "--rad"]);
    let s: serde_json::Value = serde_json::from_slice(&std::fs::read(o.join("spots_summary.json")).unwrap()).unwrap();
    assert!(s.get("theta_rad").is_some() && s.get("theta_deg").is_none());
    run_ok(&["spots", "--config", fig1.to_str().unwrap(), "--out", o.to_str().unwrap(), "--deg"]);
    let s: serde_json::Value = serde_json::from_slice(&std::fs::read(o.join("spots_summary.json")).unwrap()).unwrap();
    let deg = s["theta_deg"].as_f64().unwrap();
    assert!((deg.to_radians() - 0.2447).abs() < 1e-3, "{deg}");
}

#[test]
fn every_recipe_loads_and_round_trips() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../recipes");
    let mut n = 0;
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        let cfg = RunConfig::load(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        assert_eq!(RunConfig::from_toml_str(&cfg.to_toml_string()).unwrap(), cfg, "{}", p.display());
        n += 1;
    }
    assert!(n >= 20);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn config_round_trip(
        f2 in 100.0f64..20_000.0,
        d in 5.0f64..100.0,
        tilt in -0.2f64..0.2,
        x0 in 0.5f64..20.0,
        slope in -3.0f64..3.0,
        in_deg in any::<bool>(),
        celsius in any::<bool>(),
        temp in 20.0f64..200.0,
        w0 in 0.1f64..3.0,
        trips in proptest::option::of(1usize..100),
        barrier in proptest::option::of((-10.0f64..0.0, 0.1f64..10.0)),
    ) {
        let (unit, t, s) = if in_deg { ("deg", tilt, slope) } else { ("rad", tilt.to_radians(), slope.to_radians()) };
        let (tkey, tval) = if celsius { ("temperature_C", temp) } else { ("temperature_K", temp + 273.15) };
        let mut text = format!(
            "seed = 9\n[cell]\nkind = \"recirculating\"\nf2_mm = {f2}\nd_mm = {d}\ntheta_x_{unit} = {t}\nx0_mm = {x0}\ny0_slope_{unit} = {s}\n"
        );
        if let Some(n) = trips {
            text += &format!("round_trips = {n}\n");
        }
        text += &format!("[beam]\nw0_mm = {w0}\n[gas]\n{tkey} = {tval}\n");
        if let Some((a, b)) = barrier {
            text += &format!("[noise]\nbarriers_mm = [[{a}, {b}]]\n");
        }
        let cfg = RunConfig::from_toml_str(&text).unwrap();
        let canonical = cfg.to_toml_string();
        prop_assert!(!canonical.contains("_deg") && !canonical.contains("temperature_C"));
        let back = RunConfig::from_toml_str(&canonical).unwrap();
        prop_assert_eq!(&back, &cfg);
        prop_assert!((cfg.cell.theta_x_rad.unwrap() - tilt.to_radians()).abs() <= 1e-15);
        prop_assert!((cfg.gas.temperature_k - (temp + 273.15)).abs() <= 1e-9);
    }
}
