//! Spin-noise diffusion correlations along a multipass beam path.
//!
//! Each round trip is a [`PassSegment`] on the axial coordinate `z ∈ [−d, d]`,
//! with the far mirror at `z = 0`. The diffusion correlation is
//!
//! ```text
//! C_d(τ) = Σ_n ∫∫ I_n(r1) I_n(r2) G(r1 − r2, τ) / Σ_n ∫ I_n(r)²
//! ```
//!
//! with the normalized Gaussian diffusion kernel `G`, and is rescaled so that
//! `C_d(τ_norm) = 1`. The default `τ_norm = 0` is the exact short-time limit.

mod montecarlo;
mod spectrum;

pub use montecarlo::{cd_monte_carlo, cd_monte_carlo_grid, McEstimate, MIN_SAMPLES};
pub use spectrum::{
    full_correlation, half_width, log_grid, psd, resample_uniform, CorrelationResult, PsdResult, SpinDynamics,
    TRUNCATION_LEVEL,
};

use std::f64::consts::PI;

use nalgebra::{Matrix2, Vector3};
use serde::{Deserialize, Serialize};

use crate::geometry::{
    cylindrical_spot_table, spot_table_len, CylindricalCellConfig, Mirror, RecirculatingCellConfig, SpotRecord,
};
use crate::optics::AstigmaticBeam;
use crate::quad::{self, Tolerance};
use crate::{Error, Exec, Result};

/// Default normalization point for `C_d`. A small positive value such as 1e-9 s
/// biases tightly focused beams upward by about `4 D τ_norm / w_min²`.
pub const TAU_NORM_S: f64 = 0.0;

/// Beam radius limit as a fraction of the mirror separation.
pub const MAX_RADIUS_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GasSpec {
    pub temperature_k: f64,
    pub pressure_torr: f64,
    pub d0_cm2_s: f64,
    pub t0_k: f64,
    pub p0_torr: f64,
}

impl GasSpec {
    /// Rb in N2 reference point: 0.159 cm²/s at 60 °C and 760 Torr.
    pub fn rb_n2(temperature_k: f64, pressure_torr: f64) -> Self {
        GasSpec { temperature_k, pressure_torr, d0_cm2_s: 0.159, t0_k: 333.15, p0_torr: 760.0 }
    }
}

/// `D = D0 (p0/p) (T/T0)^{3/2}` in cm²/s.
pub fn diffusion_constant(gas: &GasSpec) -> Result<f64> {
    let vals = [gas.temperature_k, gas.pressure_torr, gas.d0_cm2_s, gas.t0_k, gas.p0_torr];
    if vals.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(Error::Domain(format!("gas parameters must be positive: {gas:?}")));
    }
    Ok(gas.d0_cm2_s * (gas.p0_torr / gas.pressure_torr) * (gas.temperature_k / gas.t0_k).powf(1.5))
}

/// cm²/s to mm²/s.
pub fn cm2_to_mm2(d_cm2_s: f64) -> f64 {
    d_cm2_s * 100.0
}

/// Atomic parameters entering the spin-noise response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomSpec {
    pub nuclear_spin: f64,
    pub hyperfine_f: Vec<f64>,
    pub density_cm3: f64,
    pub resonance_hz: Vec<f64>,
    pub linewidth_hz: f64,
    pub probe_hz: f64,
}

fn is_half_integer(x: f64) -> bool {
    (2.0 * x).fract() == 0.0 && x >= 0.0
}

/// Thermal variance of `s_z` within hyperfine level `F`.
pub fn sz2_variance(nuclear_spin: f64, f: f64) -> Result<f64> {
    let i = nuclear_spin;
    if !(is_half_integer(i) && is_half_integer(f)) {
        return Err(Error::Domain(format!("spins must be non-negative half-integers, got I = {i}, F = {f}")));
    }
    if (f - (i - 0.5)).abs() > 1e-12 && (f - (i + 0.5)).abs() > 1e-12 {
        return Err(Error::Domain(format!("F = {f} is not I ± 1/2 for I = {i}")));
    }
    let n = 2.0 * i + 1.0;
    Ok((2.0 * f + 1.0) / (2.0 * n) / (n * n) * f * (f + 1.0) / 3.0)
}

/// Dispersive part of the Lorentzian line, `(ν − ν_F)/((ν − ν_F)² + Γ²)`.
pub fn lorentzian_im(nu: f64, nu_f: f64, gamma: f64) -> f64 {
    let x = nu - nu_f;
    x / (x * x + gamma * gamma)
}

/// Relative spin-projection and photon-shot noise limits, both 1 at unit inputs.
pub fn sensitivity_scaling(n_v: f64, volume: f64, t2: f64, gamma_pr: f64, od0: f64, gyro: f64) -> Result<(f64, f64)> {
    if [n_v, volume, t2, gamma_pr, od0, gyro].iter().any(|v| !(*v > 0.0)) {
        return Err(Error::Domain("sensitivity inputs must be positive".into()));
    }
    let spn = (1.0 / (n_v * volume * t2)).sqrt() / gyro;
    let psn = 1.0 / (gyro * t2) / (n_v * volume * gamma_pr * od0).sqrt();
    Ok((spn, psn))
}

/// Normalized 3D diffusion kernel in 1/cm³ for a displacement in mm.
pub fn green(dr_mm: &Vector3<f64>, tau_s: f64, d_cm2_s: f64) -> Result<f64> {
    if !(tau_s > 0.0 && d_cm2_s > 0.0) {
        return Err(Error::Domain("diffusion kernel needs τ > 0 and D > 0".into()));
    }
    let dt = cm2_to_mm2(d_cm2_s) * tau_s;
    let g_mm3 = (4.0 * PI * dt).powf(-1.5) * (-dr_mm.norm_squared() / (4.0 * dt)).exp();
    Ok(g_mm3 * 1000.0)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Evolution {
    /// Free flight to the far mirror, its lens, free flight back.
    #[default]
    Piecewise,
    /// Free flight over the whole round trip, far mirror ignored.
    PaperLiteral,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BeamMode {
    #[default]
    Stigmatic,
    Astigmatic,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Longitudinal {
    /// Kernel integrated out along z (pairs at equal z, no end losses).
    #[default]
    Local,
    /// Full Gaussian kernel in z; atoms leaving the allowed domain are lost.
    FullKernel,
}

/// Optics shared by every round trip of a cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentOptics {
    pub d_mm: f64,
    /// Power matrix of the far mirror.
    pub mid_power: Matrix2<f64>,
    pub wavelength_mm: f64,
}

impl SegmentOptics {
    pub fn spherical(d_mm: f64, f_mm: f64, wavelength_mm: f64) -> Self {
        let p = if f_mm.is_infinite() { 0.0 } else { 1.0 / f_mm };
        SegmentOptics { d_mm, mid_power: Matrix2::identity() * p, wavelength_mm }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentOptions {
    pub mode: BeamMode,
    pub evolution: Evolution,
    /// Rescale each pass to unit transverse power. Defaults on for piecewise evolution.
    pub power_normalized: bool,
    pub exclusions: Vec<(f64, f64)>,
    /// Fail when a pass gets wider than this fraction of `d`; `None` disables the check.
    pub max_radius_fraction: Option<f64>,
}

impl SegmentOptions {
    pub fn new(mode: BeamMode, evolution: Evolution) -> Self {
        SegmentOptions {
            mode,
            evolution,
            power_normalized: evolution == Evolution::Piecewise,
            exclusions: Vec::new(),
            max_radius_fraction: Some(MAX_RADIUS_FRACTION),
        }
    }
}

/// One round trip of the beam.
#[derive(Debug, Clone, PartialEq)]
pub struct PassSegment {
    pub index: usize,
    pub half_length_mm: f64,
    /// Beam at `z = −d`, leaving the near mirror.
    pub start: AstigmaticBeam,
    /// Beam just after the far mirror (equal to the free-flight value in literal mode).
    pub after_mid: AstigmaticBeam,
    pub mid_power: Matrix2<f64>,
    pub evolution: Evolution,
    pub stigmatic: bool,
    pub wavelength_mm: f64,
    pub power_normalized: bool,
    /// Common amplitude scale for literal intensities, shared by all segments of a run.
    pub amplitude_scale: f64,
    /// Transverse power of the unnormalized field at the segment start.
    pub literal_power: f64,
    pub exclusions: Vec<(f64, f64)>,
}

/// Intensity `A exp(−rᵀ β r)` at one axial position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SliceIntensity {
    pub amplitude: f64,
    pub beta: Matrix2<f64>,
}

impl SliceIntensity {
    pub fn power(&self) -> f64 {
        self.amplitude * PI / self.beta.determinant().sqrt()
    }

    pub fn at(&self, x: f64, y: f64) -> f64 {
        let b = &self.beta;
        self.amplitude * (-(b[(0, 0)] * x * x + (b[(0, 1)] + b[(1, 0)]) * x * y + b[(1, 1)] * y * y)).exp()
    }
}

impl PassSegment {
    pub fn wavenumber(&self) -> f64 {
        2.0 * PI / self.wavelength_mm
    }

    pub fn beam_at(&self, z: f64) -> Result<AstigmaticBeam> {
        let d = self.half_length_mm;
        let s = z + d;
        if self.evolution == Evolution::PaperLiteral || s <= d {
            self.start.propagate(s)
        } else {
            self.after_mid.propagate(s - d)
        }
    }

    pub fn slice(&self, z: f64) -> Result<SliceIntensity> {
        let beam = self.beam_at(z)?;
        let beta = beam.beta(self.wavenumber());
        let amplitude = if self.power_normalized {
            beta.determinant().sqrt() / PI
        } else {
            beam.p.determinant().norm() / self.amplitude_scale
        };
        Ok(SliceIntensity { amplitude, beta })
    }

    /// Stigmatic parts `1/q(z) = a − i b`.
    pub fn inv_q_at(&self, z: f64) -> Result<(f64, f64)> {
        let p = self.beam_at(z)?.p[(0, 0)];
        Ok((p.re, -p.im))
    }

    /// Complement of the exclusions in `[−d, d]`.
    pub fn allowed(&self) -> Vec<(f64, f64)> {
        let d = self.half_length_mm;
        let mut out = Vec::new();
        let mut lo = -d;
        for &(a, b) in &self.exclusions {
            if a > lo {
                out.push((lo, a));
            }
            lo = lo.max(b);
        }
        if lo < d {
            out.push((lo, d));
        }
        out
    }

    pub fn allowed_length(&self) -> f64 {
        self.allowed().iter().map(|(a, b)| b - a).sum()
    }

    pub fn contains(&self, z: f64) -> bool {
        self.allowed().iter().any(|&(a, b)| z >= a && z <= b)
    }

    /// Quadrature breakpoints per allowed interval, split at the far mirror.
    pub fn pieces(&self) -> Vec<Vec<f64>> {
        self.allowed()
            .into_iter()
            .map(|(a, b)| {
                if self.evolution == Evolution::Piecewise && a < 0.0 && b > 0.0 {
                    vec![a, 0.0, b]
                } else {
                    vec![a, b]
                }
            })
            .collect()
    }

    /// Widest principal radius over the segment; free-flight radii peak at piece ends.
    pub fn max_radius(&self) -> Result<f64> {
        let d = self.half_length_mm;
        let mut zs = vec![-d, d];
        if self.evolution == Evolution::Piecewise {
            zs.push(0.0);
        }
        let mut w = 0.0f64;
        for z in zs {
            w = w.max(self.beam_at(z)?.principal_radii(self.wavelength_mm)?.w_xi);
        }
        if self.evolution == Evolution::Piecewise {
            w = w.max(self.after_mid.principal_radii(self.wavelength_mm)?.w_xi);
        }
        Ok(w)
    }

    /// Position of the smallest beam cross-section, `argmax det β(z)`.
    pub fn focus_z(&self) -> Result<f64> {
        let d = self.half_length_mm;
        let area = |z: f64| -> f64 {
            self.beam_at(z).map(|b| b.beta(self.wavenumber()).determinant()).unwrap_or(f64::NEG_INFINITY)
        };
        let n = 400;
        let mut best = (-d, area(-d));
        for i in 1..=n {
            let z = -d + 2.0 * d * i as f64 / n as f64;
            let a = area(z);
            if a > best.1 {
                best = (z, a);
            }
        }
        let step = 2.0 * d / n as f64;
        let (mut lo, mut hi) = ((best.0 - step).max(-d), (best.0 + step).min(d));
        let g = 0.5 * (5f64.sqrt() - 1.0);
        for _ in 0..80 {
            let m1 = hi - g * (hi - lo);
            let m2 = lo + g * (hi - lo);
            if area(m1) > area(m2) {
                hi = m2;
            } else {
                lo = m1;
            }
        }
        Ok(0.5 * (lo + hi))
    }
}

fn merge_intervals(mut iv: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    iv.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out: Vec<(f64, f64)> = Vec::with_capacity(iv.len());
    for (a, b) in iv {
        match out.last_mut() {
            Some(last) if a <= last.1 => last.1 = last.1.max(b),
            _ => out.push((a, b)),
        }
    }
    out
}

fn check_intervals(intervals: &[(f64, f64)], d: f64) -> Result<()> {
    for &(a, b) in intervals {
        if !(a.is_finite() && b.is_finite() && a < b) {
            return Err(Error::Domain(format!("exclusion ({a}, {b}) mm is empty or not finite")));
        }
        if a < -d || b > d {
            return Err(Error::Domain(format!("exclusion ({a}, {b}) mm lies outside [-{d}, {d}] mm")));
        }
    }
    Ok(())
}

/// Removes the given z intervals from every segment.
pub fn apply_barrier(segments: &[PassSegment], intervals: &[(f64, f64)]) -> Result<Vec<PassSegment>> {
    segments
        .iter()
        .map(|s| {
            check_intervals(intervals, s.half_length_mm)?;
            let mut seg = s.clone();
            let mut all = seg.exclusions.clone();
            all.extend_from_slice(intervals);
            seg.exclusions = merge_intervals(all);
            Ok(seg)
        })
        .collect()
}

/// Excludes a slab of `width` mm centred on each segment's tightest focus, clipped to the segment.
pub fn block_focus(segments: &[PassSegment], width_mm: f64) -> Result<Vec<PassSegment>> {
    if !(width_mm >= 0.0) {
        return Err(Error::Domain(format!("block width must be non-negative, got {width_mm}")));
    }
    segments
        .iter()
        .map(|s| {
            if width_mm == 0.0 {
                return Ok(s.clone());
            }
            let d = s.half_length_mm;
            let z = s.focus_z()?;
            let iv = ((z - 0.5 * width_mm).max(-d), (z + 0.5 * width_mm).min(d));
            Ok(apply_barrier(std::slice::from_ref(s), &[iv])?.remove(0))
        })
        .collect()
}

/// One segment per spot record, each starting from the beam stored on that spot.
pub fn build_pass_segments(spots: &[SpotRecord], cell: &SegmentOptics, opts: &SegmentOptions) -> Result<Vec<PassSegment>> {
    let d = cell.d_mm;
    if !(d > 0.0) {
        return Err(Error::InvalidGeometry(format!("segment half length must be positive, got {d} mm")));
    }
    check_intervals(&opts.exclusions, d)?;
    let exclusions = merge_intervals(opts.exclusions.clone());
    let mid_is_stigmatic = (cell.mid_power[(0, 0)] - cell.mid_power[(1, 1)]).abs() <= 1e-15 * cell.mid_power.norm()
        && cell.mid_power[(0, 1)].abs() <= 1e-15 * cell.mid_power.norm();
    let mut scale = None;
    let mut out = Vec::with_capacity(spots.len());
    for (n, spot) in spots.iter().enumerate() {
        let start = spot.beam.general();
        start.check().map_err(|e| Error::NonphysicalBeam(format!("pass {n}: {e}")))?;
        let stigmatic = start.is_stigmatic(1e-12) && mid_is_stigmatic;
        if opts.mode == BeamMode::Stigmatic && !stigmatic {
            return Err(Error::Domain(format!("pass {n} is astigmatic; use the astigmatic mode")));
        }
        let after_mid = match opts.evolution {
            Evolution::Piecewise => start.propagate(d)?.lens(&cell.mid_power),
            Evolution::PaperLiteral => start.propagate(d)?,
        };
        after_mid.check().map_err(|e| Error::NonphysicalBeam(format!("pass {n}: {e}")))?;
        let det_p = start.p.determinant().norm();
        let amplitude_scale = *scale.get_or_insert(det_p);
        let k = 2.0 * PI / cell.wavelength_mm;
        let literal_power = det_p * PI / start.beta(k).determinant().sqrt();
        let seg = PassSegment {
            index: n,
            half_length_mm: d,
            start,
            after_mid,
            mid_power: cell.mid_power,
            evolution: opts.evolution,
            stigmatic,
            wavelength_mm: cell.wavelength_mm,
            power_normalized: opts.power_normalized,
            amplitude_scale,
            literal_power,
            exclusions: exclusions.clone(),
        };
        if let Some(frac) = opts.max_radius_fraction {
            let w = seg.max_radius().map_err(|e| Error::NonphysicalBeam(format!("pass {n}: {e}")))?;
            if w > frac * d {
                return Err(Error::BeamTooWide { pass: n, radius_mm: w, limit_mm: frac * d });
            }
        }
        out.push(seg);
    }
    Ok(out)
}

/// Segments for the first `round_trips` passes of a recirculating cell.
pub fn recirculating_segments(cfg: &RecirculatingCellConfig, round_trips: usize, opts: &SegmentOptions) -> Result<Vec<PassSegment>> {
    let spots = spot_table_len(cfg, round_trips)?;
    let optics = SegmentOptics::spherical(cfg.d_mm, cfg.f2_mm, cfg.beam.wavelength_mm);
    build_pass_segments(&spots, &optics, opts)
}

/// Segments for every round trip of a cylindrical cell.
pub fn cylindrical_segments(cfg: &CylindricalCellConfig, opts: &SegmentOptions) -> Result<Vec<PassSegment>> {
    let spots = cylindrical_spot_table(cfg)?;
    let starts: Vec<SpotRecord> =
        spots.into_iter().filter(|s| s.mirror == Mirror::M1).take(cfg.round_trips).collect();
    let optics = SegmentOptics { d_mm: cfg.d_mm, mid_power: cfg.m2_power(), wavelength_mm: cfg.beam.wavelength_mm };
    build_pass_segments(&starts, &optics, opts)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CdOptions {
    pub longitudinal: Longitudinal,
    pub tol: Tolerance,
    pub tau_norm_s: f64,
    pub exec: Exec,
}

impl Default for CdOptions {
    fn default() -> Self {
        CdOptions { longitudinal: Longitudinal::Local, tol: Tolerance::default(), tau_norm_s: TAU_NORM_S, exec: Exec::default() }
    }
}

fn integrate_segment<F: Fn(f64) -> f64>(seg: &PassSegment, tau: f64, tol: Tolerance, f: F) -> Result<f64> {
    let mut total = 0.0;
    for pts in seg.pieces() {
        let est = quad::integrate_pieces(&f, &pts, tol)
            .map_err(|e| Error::Quadrature { pass: seg.index, tau_s: tau, error: e.0.error })?;
        total += est.value;
    }
    Ok(total)
}

fn finite_or<T>(v: Result<T>, fallback: T) -> T {
    v.unwrap_or(fallback)
}

/// Transverse overlap `∫∫ exp(−r1β1r1 − r2β2r2) G⊥ dr1 dr2` with `G⊥` the 2D kernel of variance `2Dτ`.
fn overlap(b1: &Matrix2<f64>, b2: &Matrix2<f64>, dtau: f64) -> f64 {
    PI / (b1 + b2 + (b2 * b1) * (4.0 * dtau)).determinant().sqrt()
}

fn stigmatic_ratio(segments: &[PassSegment], d_mm2: f64, tau: f64, tol: Tolerance) -> Result<(f64, f64)> {
    let mut num = 0.0;
    let mut den = 0.0;
    for seg in segments {
        if !seg.stigmatic {
            return Err(Error::Domain(format!("pass {} is astigmatic", seg.index)));
        }
        let k = seg.wavenumber();
        let amp = |a: f64, b: f64| {
            if seg.power_normalized {
                k * b / PI
            } else {
                (a * a + b * b) / seg.amplitude_scale
            }
        };
        let n = integrate_segment(seg, tau, tol, |z| {
            let (a, b) = finite_or(seg.inv_q_at(z), (0.0, f64::NAN));
            let amp = amp(a, b);
            amp * amp * PI / (2.0 * k * b * (1.0 + 2.0 * d_mm2 * k * tau * b))
        })?;
        let dn = integrate_segment(seg, tau, tol, |z| {
            let (a, b) = finite_or(seg.inv_q_at(z), (0.0, f64::NAN));
            let amp = amp(a, b);
            amp * amp * PI / (2.0 * k * b)
        })?;
        num += n;
        den += dn;
    }
    Ok((num, den))
}

fn local_numerator(seg: &PassSegment, d_mm2: f64, tau: f64, tol: Tolerance) -> Result<f64> {
    integrate_segment(seg, tau, tol, |z| match seg.slice(z) {
        Ok(s) => s.amplitude * s.amplitude * overlap(&s.beta, &s.beta, d_mm2 * tau),
        Err(_) => f64::NAN,
    })
}

fn denominator(seg: &PassSegment, tol: Tolerance) -> Result<f64> {
    integrate_segment(seg, 0.0, tol, |z| match seg.slice(z) {
        Ok(s) => s.amplitude * s.amplitude * overlap(&s.beta, &s.beta, 0.0),
        Err(_) => f64::NAN,
    })
}

fn full_numerator(seg: &PassSegment, d_mm2: f64, tau: f64, tol: Tolerance) -> Result<f64> {
    let dt = d_mm2 * tau;
    let sigma = (2.0 * dt).sqrt();
    let allowed = seg.allowed();
    let inner_tol = tol.with_rel(tol.rel * 0.1);
    let outer = |z1: f64| -> f64 {
        let Ok(s1) = seg.slice(z1) else { return f64::NAN };
        let (lo, hi) = (z1 - 8.0 * sigma, z1 + 8.0 * sigma);
        let mut acc = 0.0;
        for &(a, b) in &allowed {
            let (a, b) = (a.max(lo), b.min(hi));
            if a >= b {
                continue;
            }
            let mut pts = vec![a];
            if seg.evolution == Evolution::Piecewise && a < 0.0 && b > 0.0 {
                pts.push(0.0);
            }
            if z1 > a && z1 < b {
                pts.push(z1);
                pts.sort_by(f64::total_cmp);
            }
            pts.push(b);
            let inner = |z2: f64| -> f64 {
                let Ok(s2) = seg.slice(z2) else { return f64::NAN };
                let u = z1 - z2;
                let g = (-u * u / (4.0 * dt)).exp() / (4.0 * PI * dt).sqrt();
                s2.amplitude * overlap(&s1.beta, &s2.beta, dt) * g
            };
            match quad::integrate_pieces(inner, &pts, inner_tol) {
                Ok(e) => acc += e.value,
                Err(_) => return f64::NAN,
            }
        }
        s1.amplitude * acc
    };
    integrate_segment(seg, tau, tol, outer)
}

fn general_ratio(segments: &[PassSegment], d_mm2: f64, tau: f64, opts: &CdOptions) -> Result<(f64, f64)> {
    let mut num = 0.0;
    let mut den = 0.0;
    for seg in segments {
        let d = denominator(seg, opts.tol)?;
        let n = if tau == 0.0 {
            d
        } else {
            match opts.longitudinal {
                Longitudinal::Local => local_numerator(seg, d_mm2, tau, opts.tol)?,
                Longitudinal::FullKernel => full_numerator(seg, d_mm2, tau, opts.tol)?,
            }
        };
        num += n;
        den += d;
    }
    Ok((num, den))
}

fn check_inputs(segments: &[PassSegment], d_cm2_s: f64, tau: f64) -> Result<()> {
    if segments.is_empty() {
        return Err(Error::Domain("no pass segments".into()));
    }
    if !(d_cm2_s > 0.0) {
        return Err(Error::Domain(format!("diffusion constant must be positive, got {d_cm2_s}")));
    }
    if !(tau >= 0.0 && tau.is_finite()) {
        return Err(Error::Domain(format!("τ must be non-negative, got {tau}")));
    }
    Ok(())
}

fn normalized<F>(tau: f64, tau_norm: f64, ratio: F) -> Result<f64>
where
    F: Fn(f64) -> Result<(f64, f64)>,
{
    let (n, d) = ratio(tau)?;
    let (n0, d0) = ratio(tau_norm)?;
    Ok((n / d) / (n0 / d0))
}

/// Diffusion correlation for stigmatic segments from the scalar beam parameters `1/q = a − ib`.
pub fn cd_stigmatic(segments: &[PassSegment], d_cm2_s: f64, tau: f64) -> Result<f64> {
    check_inputs(segments, d_cm2_s, tau)?;
    let d_mm2 = cm2_to_mm2(d_cm2_s);
    let tol = Tolerance::default();
    normalized(tau, TAU_NORM_S, |t| stigmatic_ratio(segments, d_mm2, t, tol))
}

/// Diffusion correlation for general astigmatic segments with the default options.
pub fn cd_astigmatic(segments: &[PassSegment], d_cm2_s: f64, tau: f64) -> Result<f64> {
    cd_astigmatic_with(segments, d_cm2_s, tau, &CdOptions::default())
}

pub fn cd_astigmatic_with(segments: &[PassSegment], d_cm2_s: f64, tau: f64, opts: &CdOptions) -> Result<f64> {
    check_inputs(segments, d_cm2_s, tau)?;
    let d_mm2 = cm2_to_mm2(d_cm2_s);
    normalized(tau, opts.tau_norm_s, |t| general_ratio(segments, d_mm2, t, opts))
}

/// `C_d` on a τ grid, evaluated in parallel over τ.
pub fn cd_grid(segments: &[PassSegment], d_cm2_s: f64, taus: &[f64], mode: BeamMode, opts: &CdOptions) -> Result<Vec<f64>> {
    for &t in taus {
        check_inputs(segments, d_cm2_s, t)?;
    }
    let d_mm2 = cm2_to_mm2(d_cm2_s);
    let ratio = |t: f64| -> Result<f64> {
        let (n, d) = match mode {
            BeamMode::Stigmatic if opts.longitudinal == Longitudinal::Local => stigmatic_ratio(segments, d_mm2, t, opts.tol)?,
            _ => general_ratio(segments, d_mm2, t, opts)?,
        };
        Ok(n / d)
    };
    let r0 = ratio(opts.tau_norm_s)?;
    let vals = opts.exec.try_map_range(taus.len(), |i| ratio(taus[i]))?;
    Ok(vals.into_iter().map(|r| r / r0).collect())
}
