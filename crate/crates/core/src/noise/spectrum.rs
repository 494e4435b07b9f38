//! Full spin correlation and its power spectrum.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpinDynamics {
    pub larmor_hz: f64,
    pub t2_s: f64,
}

impl SpinDynamics {
    pub fn validate(&self) -> Result<()> {
        if !(self.larmor_hz >= 0.0 && self.larmor_hz.is_finite() && self.t2_s > 0.0 && self.t2_s.is_finite()) {
            return Err(Error::Domain(format!("need Larmor frequency ≥ 0 and T2 > 0, got {self:?}")));
        }
        Ok(())
    }

    pub fn envelope(&self, tau: f64) -> f64 {
        (-tau / self.t2_s).exp()
    }
}

/// `C(τ) = C_d(τ) e^{−τ/T2} cos(ω_L τ)`.
pub fn full_correlation(taus: &[f64], cd: &[f64], dynamics: &SpinDynamics) -> Result<Vec<f64>> {
    dynamics.validate()?;
    if taus.len() != cd.len() {
        return Err(Error::Domain(format!("τ grid has {} points but C_d has {}", taus.len(), cd.len())));
    }
    let w = 2.0 * PI * dynamics.larmor_hz;
    Ok(taus.iter().zip(cd).map(|(&t, &c)| c * dynamics.envelope(t) * (w * t).cos()).collect())
}

/// `n` log-spaced points from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi > lo && n >= 2) {
        return Err(Error::Domain(format!("bad log grid ({lo}, {hi}, {n})")));
    }
    let (a, b) = (lo.ln(), hi.ln());
    Ok((0..n)
        .map(|i| if i + 1 == n { hi } else { (a + (b - a) * i as f64 / (n - 1) as f64).exp() })
        .collect())
}

/// Resamples `C_d` from a log grid onto `0, dt, 2dt, …, t_max`, interpolating linearly
/// in `ln τ` and between `C_d(0) = 1` and the first sample.
pub fn resample_uniform(taus: &[f64], cd: &[f64], dt: f64, t_max: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if taus.len() != cd.len() || taus.is_empty() {
        return Err(Error::Domain("τ grid and C_d must be non-empty and equal in length".into()));
    }
    if !taus.windows(2).all(|w| w[1] > w[0]) || taus[0] <= 0.0 {
        return Err(Error::Domain("τ grid must be positive and strictly increasing".into()));
    }
    let last = *taus.last().unwrap();
    if !(dt > 0.0 && t_max > 0.0 && t_max <= last * (1.0 + 1e-12)) {
        return Err(Error::Domain(format!("uniform grid (dt {dt}, t_max {t_max}) must lie inside (0, {last}]")));
    }
    let n = (t_max / dt).round() as usize;
    let mut grid = Vec::with_capacity(n + 1);
    let mut vals = Vec::with_capacity(n + 1);
    let mut k = 0;
    for i in 0..=n {
        let t = (i as f64 * dt).min(last);
        let v = if t <= taus[0] {
            1.0 + (cd[0] - 1.0) * t / taus[0]
        } else {
            while k + 2 < taus.len() && taus[k + 1] < t {
                k += 1;
            }
            let (t0, t1) = (taus[k], taus[k + 1]);
            let s = (t.ln() - t0.ln()) / (t1.ln() - t0.ln());
            cd[k] + (cd[k + 1] - cd[k]) * s
        };
        grid.push(t);
        vals.push(v);
    }
    Ok((grid, vals))
}

/// Threshold on the correlation tail above which the transform is flagged as truncated.
pub const TRUNCATION_LEVEL: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsdResult {
    pub freqs_hz: Vec<f64>,
    /// Cosine transform before normalization.
    pub raw: Vec<f64>,
    /// `raw` divided by its maximum over the frequency grid.
    pub psd: Vec<f64>,
    /// Largest `|C|` over the last percent of the τ grid.
    pub tail: f64,
}

impl PsdResult {
    pub fn truncation_warning(&self) -> Option<String> {
        (self.tail > TRUNCATION_LEVEL).then(|| {
            format!("correlation tail {:.3e} exceeds {TRUNCATION_LEVEL:.0e}; the τ grid is too short", self.tail)
        })
    }
}

/// Correlation functions on a τ grid together with their normalized spectrum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationResult {
    pub taus_s: Vec<f64>,
    pub cd: Vec<f64>,
    pub c: Vec<f64>,
    pub freqs_hz: Vec<f64>,
    pub psd: Vec<f64>,
    pub warnings: Vec<String>,
}

/// `sin(x)/x`.
fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        1.0 - x * x / 6.0
    } else {
        x.sin() / x
    }
}

/// `(sin x − x cos x)/x³`.
fn sinc1(x: f64) -> f64 {
    if x.abs() < 1e-2 {
        let x2 = x * x;
        1.0 / 3.0 - x2 / 30.0 + x2 * x2 / 840.0
    } else {
        (x.sin() - x * x.cos()) / (x * x * x)
    }
}

/// `S(f) = 2 ∫₀^{τmax} C(τ) cos(2π f τ) dτ` with `C` piecewise linear between samples,
/// integrated exactly per interval, then normalized to its peak. A grid starting above zero holds `C` at its first value down to zero.
pub fn psd(taus: &[f64], c: &[f64], freqs_hz: &[f64]) -> Result<PsdResult> {
    if taus.len() != c.len() || taus.len() < 2 {
        return Err(Error::Domain("PSD needs at least two matching τ and C samples".into()));
    }
    if taus[0] < 0.0 || !taus.windows(2).all(|w| w[1] > w[0]) {
        return Err(Error::Domain("τ grid must be non-negative and strictly increasing".into()));
    }
    let tail_from = taus.len() - (taus.len() / 100).max(1);
    let tail = c[tail_from..].iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let raw: Vec<f64> = freqs_hz
        .iter()
        .map(|&f| {
            let w = 2.0 * PI * f;
            let mut acc = if taus[0] > 0.0 { c[0] * taus[0] * sinc(w * taus[0]) } else { 0.0 };
            for i in 0..taus.len() - 1 {
                let h = 0.5 * (taus[i + 1] - taus[i]);
                let tm = 0.5 * (taus[i + 1] + taus[i]);
                let cm = 0.5 * (c[i + 1] + c[i]);
                let slope = (c[i + 1] - c[i]) / (2.0 * h);
                let x = w * h;
                let (s, co) = (w * tm).sin_cos();
                acc += 2.0 * h * cm * co * sinc(x) - slope * s * 2.0 * h * h * h * w * sinc1(x);
            }
            2.0 * acc
        })
        .collect();
    let peak = raw.iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v));
    if !(peak > 0.0) {
        return Err(Error::Domain("spectrum has no positive peak on the frequency grid".into()));
    }
    let psd = raw.iter().map(|v| v / peak).collect();
    Ok(PsdResult { freqs_hz: freqs_hz.to_vec(), raw, psd, tail })
}

/// Half width at half maximum of the highest peak, from linear interpolation of the half-level crossings.
pub fn half_width(freqs_hz: &[f64], psd: &[f64]) -> Option<f64> {
    if freqs_hz.len() != psd.len() || psd.is_empty() {
        return None;
    }
    let (ip, &peak) = psd.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1))?;
    let half = 0.5 * peak;
    let cross = |i: usize, j: usize| freqs_hz[i] + (half - psd[i]) * (freqs_hz[j] - freqs_hz[i]) / (psd[j] - psd[i]);
    let right = (ip..psd.len() - 1).find(|&i| psd[i + 1] < half).map(|i| cross(i, i + 1));
    let left = (1..=ip).rev().find(|&i| psd[i - 1] < half).map(|i| cross(i, i - 1));
    match (left, right) {
        (Some(l), Some(r)) => Some(0.5 * (r - l)),
        // a peak at the lower edge of a one-sided grid
        (None, Some(r)) if ip == 0 => Some(r - freqs_hz[0]),
        _ => None,
    }
}
