//! The five subcommands. Each writes its files into the output directory and
//! returns a JSON summary that also goes into the run manifest.

use std::f64::consts::PI;
use std::path::Path;

use anyhow::{Context, Result};
use multipass_core::geometry::{
    count_reflections, cylindrical_round_trip, cylindrical_spot_table, optical_center_offset, reflection_sweep,
    spot_table, spot_table_len, total_reflections, total_reflections_exact, SpotRecord, MAX_REFLECTIONS,
};
use multipass_core::noise::{
    self, apply_barrier, block_focus, cd_grid, cd_monte_carlo_grid, cylindrical_segments, full_correlation,
    half_width, log_grid, psd, recirculating_segments, resample_uniform, CdOptions, PassSegment, SegmentOptions,
};
use multipass_core::quad::Tolerance;
use multipass_core::raytrace::{
    compare_to_analytic, recirculating_surfaces, sample_beam_rays, trace_cell, EntryState, RayStatus, TraceOptions,
};
use multipass_core::Exec;
use serde_json::{json, Value};

use crate::config::{CellKind, ConfigError, PassIndex, RunConfig};

pub struct Outcome {
    pub summary: Value,
    pub warnings: Vec<String>,
}

fn num(v: f64) -> String {
    format!("{v}")
}

fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("cannot create {}", path.display()))?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn write_json(path: &Path, value: &Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("cannot write {}", path.display()))
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n).map(|i| if i + 1 == n { hi } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 }).collect()
}

fn segment_options(cfg: &RunConfig) -> SegmentOptions {
    let mut opts = SegmentOptions::new(cfg.beam_mode(), cfg.noise.evolution);
    if let Some(p) = cfg.noise.power_normalized {
        opts.power_normalized = p;
    }
    let frac = cfg.noise.max_radius_fraction;
    opts.max_radius_fraction = (frac > 0.0).then_some(frac);
    opts
}

fn focus_radius(seg: &PassSegment) -> Result<(f64, f64)> {
    let z = seg.focus_z()?;
    Ok((z, seg.beam_at(z)?.principal_radii(seg.wavelength_mm)?.w_xi))
}

/// The selected pass of a single-pass cell. `"tightest"` searches the first half
/// period of the radius oscillation, `⌈π/θ⌉` passes.
fn single_pass(cfg: &RunConfig, opts: &SegmentOptions) -> Result<PassSegment> {
    let rc = cfg.recirculating()?;
    match cfg.cell.pass_index.clone().unwrap_or(PassIndex::Index(0)) {
        PassIndex::Index(i) => Ok(recirculating_segments(&rc, i + 1, opts)?.pop().expect("at least one pass")),
        PassIndex::Named(_) => {
            let n = ((PI / rc.theta()?).ceil() as usize).max(1);
            let mut best: Option<(f64, PassSegment)> = None;
            for seg in recirculating_segments(&rc, n, opts)? {
                let (_, w) = focus_radius(&seg)?;
                if best.as_ref().is_none_or(|(bw, _)| w < *bw) {
                    best = Some((w, seg));
                }
            }
            Ok(best.expect("at least one pass").1)
        }
    }
}

/// Pass segments for the noise model, with barriers applied.
pub fn noise_segments(cfg: &RunConfig) -> Result<Vec<PassSegment>> {
    let opts = segment_options(cfg);
    let mut segs = match cfg.cell.kind {
        CellKind::Recirculating => {
            let rc = cfg.recirculating()?;
            let trips = match cfg.cell.round_trips {
                Some(n) => n,
                None => count_reflections(&rc, MAX_REFLECTIONS)?,
            };
            recirculating_segments(&rc, trips, &opts)?
        }
        CellKind::Cylindrical => cylindrical_segments(&cfg.cylindrical()?, &opts)?,
        CellKind::SinglePass => vec![single_pass(cfg, &opts)?],
    };
    let barriers: Vec<(f64, f64)> = cfg.noise.barriers_mm.iter().map(|b| (b[0], b[1])).collect();
    if !barriers.is_empty() {
        segs = apply_barrier(&segs, &barriers)?;
    }
    if let Some(w) = cfg.noise.block_focus_mm {
        segs = block_focus(&segs, w)?;
    }
    Ok(segs)
}

pub fn diffusion(cfg: &RunConfig) -> Result<f64> {
    match cfg.gas.diffusion_cm2_s {
        Some(d) if d > 0.0 => Ok(d),
        Some(d) => Err(ConfigError(format!("`gas.diffusion_cm2_s` must be positive, got {d}")).into()),
        None => Ok(noise::diffusion_constant(&cfg.gas_spec())?),
    }
}

pub fn cd_options(cfg: &RunConfig, exec: Exec) -> CdOptions {
    CdOptions {
        longitudinal: cfg.noise.longitudinal,
        tol: Tolerance { rel: cfg.noise.rel_tol, abs: cfg.noise.abs_tol, ..Tolerance::default() },
        tau_norm_s: cfg.noise.tau_norm_s,
        exec,
    }
}

/// Values derived from the config for the manifest; entries that do not apply are omitted.
pub fn derived(cfg: &RunConfig) -> Value {
    let mut out = serde_json::Map::new();
    if let Ok(d) = diffusion(cfg) {
        out.insert("diffusion_cm2_s".into(), json!(d));
    }
    let echo = cfg.output.angles;
    match cfg.cell.kind {
        CellKind::Cylindrical => {
            if let Ok((a, b)) = cfg.cylindrical().map_err(anyhow::Error::from).and_then(|c| {
                let rt = cylindrical_round_trip(&c)?;
                Ok(rt.eigen_angles()?)
            }) {
                out.insert(format!("theta_xi_{}", echo.suffix()), json!(echo.value(a)));
                out.insert(format!("theta_eta_{}", echo.suffix()), json!(echo.value(b)));
            }
        }
        _ => {
            if let Ok(rc) = cfg.recirculating() {
                if let Ok(theta) = rc.theta() {
                    out.insert(format!("theta_{}", echo.suffix()), json!(echo.value(theta)));
                }
                if cfg.cell.kind == CellKind::Recirculating {
                    if let Ok(delta) = optical_center_offset(&rc) {
                        out.insert("delta_mm".into(), json!(delta));
                    }
                    if let Ok(n) = count_reflections(&rc, MAX_REFLECTIONS) {
                        out.insert("n_reflections".into(), json!(n));
                    }
                    if let Ok(n) = total_reflections(&rc) {
                        out.insert("n_reflections_closed_form".into(), json!(n));
                    }
                }
            }
        }
    }
    Value::Object(out)
}

fn spots_rows(spots: &[SpotRecord]) -> impl Iterator<Item = Vec<String>> + '_ {
    spots.iter().map(|s| {
        vec![
            s.index.to_string(),
            s.mirror.label().to_string(),
            num(s.x_mm),
            num(s.y_mm),
            num(s.w_xi_mm),
            num(s.w_eta_mm),
        ]
    })
}

const SPOT_HEADER: &[&str] = &["index", "mirror", "x_mm", "y_mm", "w_xi_mm", "w_eta_mm"];

fn write_profile(path: &Path, segs: &[PassSegment], points: usize) -> Result<()> {
    let mut rows = Vec::with_capacity(segs.len() * points);
    for seg in segs {
        let d = seg.half_length_mm;
        for k in 0..points {
            let z = if points == 1 { 0.0 } else { -d + 2.0 * d * k as f64 / (points - 1) as f64 };
            let r = seg.beam_at(z)?.principal_radii(seg.wavelength_mm)?;
            let path_mm = 2.0 * d * seg.index as f64 + z + d;
            rows.push(vec![seg.index.to_string(), num(z), num(path_mm), num(r.w_xi), num(r.w_eta)]);
        }
    }
    write_csv(path, &["pass", "z_mm", "path_mm", "w_xi_mm", "w_eta_mm"], rows)
}

fn profile_options(cfg: &RunConfig) -> SegmentOptions {
    let mut opts = segment_options(cfg);
    opts.max_radius_fraction = None;
    opts
}

pub fn spots(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let echo = cfg.output.angles;
    let points = cfg.output.profile_points;
    let summary = match cfg.cell.kind {
        CellKind::Recirculating => {
            let rc = cfg.recirculating()?;
            let spots = spot_table(&rc)?;
            let theta = rc.theta()?;
            if cfg.output.csv() {
                write_csv(&out.join("spots.csv"), SPOT_HEADER, spots_rows(&spots))?;
            }
            if points > 0 {
                let trips = cfg.cell.round_trips.unwrap_or(spots.len());
                let segs = recirculating_segments(&rc, trips, &profile_options(cfg))?;
                write_profile(&out.join("profile.csv"), &segs, points)?;
            }
            json!({
                "kind": "recirculating",
                format!("theta_{}", echo.suffix()): echo.value(theta),
                "reflections_per_circulation": (2.0 * PI / theta).floor() as usize,
                "reflections_per_half_circulation": (PI / theta).floor() as usize,
                "delta_mm": optical_center_offset(&rc)?,
                "lever_mm": rc.lever(),
                "n_reflections": spots.len(),
                "n_reflections_closed_form": total_reflections(&rc)?,
                "n_reflections_closed_form_exact": total_reflections_exact(&rc)?,
            })
        }
        CellKind::Cylindrical => {
            let cc = cfg.cylindrical()?;
            let spots = cylindrical_spot_table(&cc)?;
            let (a, b) = cylindrical_round_trip(&cc)?.eigen_angles()?;
            if cfg.output.csv() {
                write_csv(&out.join("spots.csv"), SPOT_HEADER, spots_rows(&spots))?;
            }
            if points > 0 {
                let segs = cylindrical_segments(&cc, &profile_options(cfg))?;
                write_profile(&out.join("profile.csv"), &segs, points)?;
            }
            json!({
                "kind": "cylindrical",
                format!("theta_xi_{}", echo.suffix()): echo.value(a),
                format!("theta_eta_{}", echo.suffix()): echo.value(b),
                "round_trips": cc.round_trips,
                "spots": spots.len(),
            })
        }
        CellKind::SinglePass => {
            let seg = single_pass(cfg, &profile_options(cfg))?;
            let rc = cfg.recirculating()?;
            let spots = spot_table_len(&rc, seg.index + 1)?;
            let (z, w) = focus_radius(&seg)?;
            if cfg.output.csv() {
                write_csv(&out.join("spots.csv"), SPOT_HEADER, spots_rows(&spots))?;
            }
            if points > 0 {
                write_profile(&out.join("profile.csv"), std::slice::from_ref(&seg), points)?;
            }
            json!({
                "kind": "single-pass",
                "pass_index": seg.index,
                "focus_z_mm": z,
                "focus_radius_mm": w,
                "entry_radius_mm": spots[seg.index].w_xi_mm,
            })
        }
    };
    if cfg.output.json() {
        write_json(&out.join("spots_summary.json"), &summary)?;
    }
    Ok(Outcome { summary, warnings: Vec::new() })
}

pub fn nrefl(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    if cfg.cell.kind != CellKind::Recirculating {
        return Err(ConfigError("nrefl needs `cell.kind = \"recirculating\"`".into()).into());
    }
    let rc = cfg.recirculating()?;
    let n = count_reflections(&rc, MAX_REFLECTIONS)?;
    let closed = total_reflections(&rc)?;
    let exact = total_reflections_exact(&rc)?;
    println!("n_reflections = {n}");
    println!("closed_form = {closed} (unrounded {exact:.4})");
    let summary = json!({
        "n_reflections": n,
        "n_reflections_closed_form": closed,
        "n_reflections_closed_form_exact": exact,
        "delta_mm": optical_center_offset(&rc)?,
    });
    if cfg.output.json() {
        write_json(&out.join("nrefl.json"), &summary)?;
    }
    Ok(Outcome { summary, warnings: Vec::new() })
}

pub fn trace(cfg: &RunConfig, out: &Path, exec: Exec) -> Result<Outcome> {
    if cfg.cell.kind != CellKind::Recirculating {
        return Err(ConfigError("trace needs `cell.kind = \"recirculating\"`".into()).into());
    }
    let rc = cfg.recirculating()?;
    let surfaces = recirculating_surfaces(&rc, cfg.trace.assignment, cfg.trace.aperture_mm)?;
    let rays = sample_beam_rays(&rc.beam, &EntryState::of(&rc), cfg.trace.rays, cfg.seed)?;
    let opts = TraceOptions { max_hits: cfg.trace.max_hits, counted_group: 0, exit_below_x: Some(-rc.x0_mm), exec };
    let tr = trace_cell(&surfaces, &rays, &opts)?;
    let spots = spot_table(&rc)?;
    let cmp = compare_to_analytic(&tr, &spots);
    let mut warnings = Vec::new();
    if !cmp.count_match {
        warnings.push(format!(
            "traced chief ray made {} reflections, the spot model {}",
            cmp.n_reflections_trace, cmp.n_reflections_analytic
        ));
    }
    if cfg.output.csv() {
        let mut rows = Vec::new();
        for (r, path) in tr.paths.iter().enumerate() {
            for (k, h) in path.counted(0).enumerate() {
                rows.push(vec![
                    r.to_string(),
                    k.to_string(),
                    surfaces[h.surface].name.clone(),
                    num(h.point.x),
                    num(h.point.y),
                    num(h.point.z),
                ]);
            }
        }
        write_csv(&out.join("trace.csv"), &["ray", "reflection", "mirror", "x_mm", "y_mm", "z_mm"], rows)?;
        let rows = tr.spots.iter().enumerate().map(|(i, t)| {
            let a = spots.get(i);
            let opt = |v: Option<f64>| v.map(num).unwrap_or_default();
            vec![
                t.index.to_string(),
                num(t.x_mm),
                num(t.y_mm),
                num(t.spread_mm),
                t.rays.to_string(),
                opt(a.map(|s| s.x_mm)),
                opt(a.map(|s| s.y_mm)),
                opt(a.map(|s| s.w_xi_mm)),
                opt(cmp.spot_errors_mm.get(i).copied()),
                opt(cmp.spot_containment.get(i).copied()),
            ]
        });
        write_csv(
            &out.join("trace_spots.csv"),
            &[
                "index",
                "x_mm",
                "y_mm",
                "spread_mm",
                "rays",
                "analytic_x_mm",
                "analytic_y_mm",
                "analytic_w_mm",
                "error_mm",
                "containment",
            ],
            rows,
        )?;
    }
    let count = |s: RayStatus| tr.paths.iter().filter(|p| p.status == s).count();
    let (lo, hi) = tr.reflection_range();
    let summary = json!({
        "rays": cfg.trace.rays,
        "n_reflections_trace": cmp.n_reflections_trace,
        "n_reflections_analytic": cmp.n_reflections_analytic,
        "n_reflections_closed_form": total_reflections(&rc)?,
        "count_match": cmp.count_match,
        "compared_spots": cmp.compared_spots,
        "mean_error_mm": cmp.mean_error_mm,
        "max_error_mm": cmp.max_error_mm,
        "containment_fraction": cmp.containment_fraction,
        "reflections_min": lo,
        "reflections_max": hi,
        "status": {
            "exited": count(RayStatus::Exited),
            "missed": count(RayStatus::Missed),
            "escaped": count(RayStatus::Escaped),
            "max_hits": count(RayStatus::MaxHits),
        },
    });
    if cfg.output.json() {
        write_json(&out.join("comparison.json"), &summary)?;
    }
    Ok(Outcome { summary, warnings })
}

/// Quadrature acceptance band against the Monte Carlo oracle.
pub fn oracle_band(std_error: f64) -> f64 {
    (3.0 * std_error).max(0.02)
}

pub fn noise(cfg: &RunConfig, out: &Path, exec: Exec) -> Result<Outcome> {
    let n = &cfg.noise;
    let segs = noise_segments(cfg)?;
    let d = diffusion(cfg)?;
    let dynamics = cfg.dynamics();
    let mode = cfg.beam_mode();
    let opts = cd_options(cfg, exec);
    let taus = log_grid(n.tau_min_s, n.tau_max_s, n.tau_points)?;
    let cd = cd_grid(&segs, d, &taus, mode, &opts)?;
    let c = full_correlation(&taus, &cd, &dynamics)?;
    let mut warnings = Vec::new();

    // spectrum from a longer τ grid resampled uniformly
    let (long_taus, long_cd) = if n.psd_tau_max_s <= n.tau_max_s {
        (taus.clone(), cd.clone())
    } else {
        let t = log_grid(n.tau_min_s, n.psd_tau_max_s, n.tau_points)?;
        let v = cd_grid(&segs, d, &t, mode, &opts)?;
        (t, v)
    };
    let dt = 1.0 / (20.0 * n.f_max_hz.max(dynamics.larmor_hz));
    let (grid, cd_u) = resample_uniform(&long_taus, &long_cd, dt, n.psd_tau_max_s)?;
    let c_u = full_correlation(&grid, &cd_u, &dynamics)?;
    let freqs = linspace(n.f_min_hz, n.f_max_hz, n.f_points);
    let spectrum = psd(&grid, &c_u, &freqs)?;
    warnings.extend(spectrum.truncation_warning());
    let hwhm = half_width(&spectrum.freqs_hz, &spectrum.psd);

    let mc = if n.oracle { Some(cd_monte_carlo_grid(&segs, d, &taus, n.mc_samples, cfg.seed, n.longitudinal, exec)?) } else { None };
    let verdict = mc.as_ref().map(|mc| {
        let mut worst_excess = f64::NEG_INFINITY;
        let mut max_abs = 0.0f64;
        let mut failures = 0usize;
        for (q, m) in cd.iter().zip(mc) {
            let diff = (q - m.value).abs();
            max_abs = max_abs.max(diff);
            worst_excess = worst_excess.max(diff - oracle_band(m.std_error));
            if diff > oracle_band(m.std_error) {
                failures += 1;
            }
        }
        json!({
            "pass": failures == 0,
            "failures": failures,
            "max_abs_diff": max_abs,
            "worst_margin": -worst_excess,
            "samples": n.mc_samples,
            "band": "max(0.02, 3 sigma)",
        })
    });
    if let Some(v) = &verdict {
        if v["pass"] == json!(false) {
            warnings.push(format!("Monte Carlo oracle disagrees at {} τ points", v["failures"]));
        }
    }

    if cfg.output.csv() {
        let mut header = vec!["tau_s", "Cd", "C"];
        if mc.is_some() {
            header.extend(["Cd_mc", "Cd_mc_se"]);
        }
        let rows = taus.iter().enumerate().map(|(i, t)| {
            let mut row = vec![num(*t), num(cd[i]), num(c[i])];
            if let Some(mc) = &mc {
                row.push(num(mc[i].value));
                row.push(num(mc[i].std_error));
            }
            row
        });
        write_csv(&out.join("correlation.csv"), &header, rows)?;
        let rows = spectrum.freqs_hz.iter().zip(&spectrum.psd).map(|(f, p)| vec![num(*f), num(*p)]);
        write_csv(&out.join("psd.csv"), &["freq_hz", "psd_norm"], rows)?;
    }
    let max_radius = segs.iter().map(|s| s.max_radius()).collect::<Result<Vec<_>, _>>()?.into_iter().fold(0.0, f64::max);
    let summary = json!({
        "passes": segs.len(),
        "mode": mode,
        "evolution": n.evolution,
        "power_normalized": segs.first().map(|s| s.power_normalized),
        "longitudinal": n.longitudinal,
        "diffusion_cm2_s": d,
        "max_beam_radius_mm": max_radius,
        "cd_first": cd.first(),
        "cd_last": cd.last(),
        "psd_half_width_hz": hwhm,
        "psd_tail": spectrum.tail,
        "oracle": verdict,
    });
    Ok(Outcome { summary, warnings })
}

pub fn sweep(cfg: &RunConfig, out: &Path, exec: Exec) -> Result<Outcome> {
    let Some(s) = &cfg.sweep else {
        return Err(ConfigError("sweep needs a [sweep] section".into()).into());
    };
    if cfg.cell.kind != CellKind::Recirculating {
        return Err(ConfigError("sweep needs `cell.kind = \"recirculating\"`".into()).into());
    }
    let rc = cfg.recirculating()?;
    rc.validate()?;
    let ds = linspace(s.d_min_mm, s.d_max_mm, s.d_points);
    let slopes = linspace(s.y0_slope_min_rad, s.y0_slope_max_rad, s.y0_slope_points);
    let grid = reflection_sweep(&rc, &ds, &slopes, exec);
    let echo = cfg.output.angles;
    let slope_col = format!("y0_slope_{}", echo.suffix());
    if cfg.output.csv() {
        let rows = grid.cells.iter().map(|c| {
            let (n, e) = match &c.n_refl {
                Ok(n) => (n.to_string(), String::new()),
                Err(e) => (String::new(), e.clone()),
            };
            vec![num(c.d_mm), num(echo.value(c.y0_slope)), n, e]
        });
        write_csv(&out.join("sweep.csv"), &["d_mm", &slope_col, "n_refl", "error"], rows)?;
    }
    let plateaus: Vec<Value> = grid
        .plateaus
        .iter()
        .map(|p| {
            json!({
                "d_mm": p.d_mm,
                "n_refl": p.n_refl,
                format!("{slope_col}_lo"): echo.value(p.y0_slope_lo),
                format!("{slope_col}_hi"): echo.value(p.y0_slope_hi),
                format!("width_{}", echo.suffix()): echo.value(p.width),
                "points": p.points,
            })
        })
        .collect();
    let failed = grid.cells.iter().filter(|c| c.n_refl.is_err()).count();
    let summary = json!({ "cells": grid.cells.len(), "failed_cells": failed, "plateaus": plateaus });
    if cfg.output.json() {
        write_json(&out.join("plateaus.json"), &json!(plateaus))?;
    }
    let warnings = if failed > 0 { vec![format!("{failed} sweep cells have no reflection count")] } else { Vec::new() };
    Ok(Outcome { summary, warnings })
}
