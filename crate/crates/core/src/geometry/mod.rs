//! Spot patterns of the recirculating three-mirror cell and the twisted cylindrical cell.
//!
//! The recirculating cell has two flat mirrors M1 and M1′ side by side, tilted in
//! opposite senses about the y axis, facing a concave mirror M2 a distance `d` away.
//! Spots are counted on the M1 plane; reflection `n` lands on M1 when
//! `⌊nθ/π⌋` is even and on M1′ otherwise.

mod cylindrical;

pub use cylindrical::{cylindrical_round_trip, cylindrical_spot_table, CylindricalCellConfig, CylindricalRoundTrip};

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::optics::{self, AstigmaticBeam, ComplexBeamParam, TransferMatrix2};
use crate::{Error, Exec, Result};

/// Default cap on reflections when searching for the exit spot.
pub const MAX_REFLECTIONS: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeamSpec {
    pub wavelength_mm: f64,
    pub w0_mm: f64,
    /// Position of the first reflection measured from the waist.
    pub z_from_waist_mm: f64,
}

impl BeamSpec {
    pub fn new(wavelength_mm: f64, w0_mm: f64) -> Self {
        BeamSpec { wavelength_mm, w0_mm, z_from_waist_mm: 0.0 }
    }

    pub fn q0(&self) -> Result<ComplexBeamParam> {
        ComplexBeamParam::from_waist(self.w0_mm, self.wavelength_mm, self.z_from_waist_mm)
    }

    pub fn wavenumber(&self) -> f64 {
        2.0 * PI / self.wavelength_mm
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.wavelength_mm > 0.0 && self.wavelength_mm.is_finite()) {
            return Err(Error::InvalidGeometry(format!("wavelength must be positive, got {} mm", self.wavelength_mm)));
        }
        if !(self.w0_mm > 0.0 && self.w0_mm.is_finite()) {
            return Err(Error::InvalidGeometry(format!("beam waist must be positive, got {} mm", self.w0_mm)));
        }
        if !self.z_from_waist_mm.is_finite() {
            return Err(Error::InvalidGeometry("waist offset must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecirculatingCellConfig {
    pub f2_mm: f64,
    pub d_mm: f64,
    /// Tilt of M1 about the y axis.
    pub theta_x: f64,
    /// Tilt of M1′; `-theta_x` in the usual counter-rotated setup.
    pub theta_x_prime: f64,
    pub x0_mm: f64,
    pub y0_mm: f64,
    pub x0_slope: f64,
    pub y0_slope: f64,
    pub beam: BeamSpec,
    /// Overrides the slope-change sequence `θ_j` applied at each change of circulation.
    #[serde(default)]
    pub tilt_sequence: Option<Vec<f64>>,
}

impl RecirculatingCellConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.f2_mm > 0.0 && self.f2_mm.is_finite()) {
            return Err(Error::InvalidGeometry(format!("f2 must be positive, got {} mm", self.f2_mm)));
        }
        if !(self.d_mm > 0.0 && self.d_mm < 2.0 * self.f2_mm) {
            return Err(Error::InvalidGeometry(format!(
                "separation d = {} mm outside the stable range (0, {}) mm",
                self.d_mm,
                2.0 * self.f2_mm
            )));
        }
        let finite = [self.theta_x, self.theta_x_prime, self.x0_mm, self.y0_mm, self.x0_slope, self.y0_slope];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidGeometry("tilts and entry coordinates must be finite".into()));
        }
        self.beam.validate()
    }

    pub fn round_trip(&self) -> Result<TransferMatrix2> {
        optics::compose_round_trip(f64::INFINITY, self.f2_mm, self.d_mm)
    }

    pub fn theta(&self) -> Result<f64> {
        self.validate()?;
        optics::stability_angle(&self.round_trip()?)
    }

    /// `sqrt(2 d f2 − d²)`, the slope-to-position lever of the spot ellipse.
    pub fn lever(&self) -> f64 {
        (2.0 * self.d_mm * self.f2_mm - self.d_mm * self.d_mm).sqrt()
    }

    fn tilt_of(&self, mirror: Mirror) -> f64 {
        match mirror {
            Mirror::M1Prime => self.theta_x_prime,
            _ => self.theta_x,
        }
    }

    /// Slope change `θ_j` introduced at the j-th change of circulation.
    pub fn tilt_step(&self, j: usize) -> Result<f64> {
        if let Some(seq) = &self.tilt_sequence {
            return seq.get(j).copied().ok_or_else(|| {
                Error::Domain(format!("tilt sequence has {} entries but entry {j} is needed", seq.len()))
            });
        }
        let mirror = |k: usize| if k % 2 == 0 { Mirror::M1 } else { Mirror::M1Prime };
        Ok(if j == 0 { self.tilt_of(Mirror::M1) } else { self.tilt_of(mirror(j)) - self.tilt_of(mirror(j - 1)) })
    }

    pub fn is_untilted(&self) -> bool {
        match &self.tilt_sequence {
            Some(seq) => seq.iter().all(|t| *t == 0.0),
            None => self.theta_x == 0.0 && self.theta_x_prime == 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mirror {
    M1,
    M1Prime,
    M2,
}

impl Mirror {
    pub fn label(self) -> &'static str {
        match self {
            Mirror::M1 => "M1",
            Mirror::M1Prime => "M1p",
            Mirror::M2 => "M2",
        }
    }
}

/// Number of completed half turns `k = ⌊nθ/π⌋` of the spot pattern.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CirculationIndex {
    pub k: i64,
}

impl CirculationIndex {
    pub fn mirror(self) -> Mirror {
        if self.k.rem_euclid(2) == 0 {
            Mirror::M1
        } else {
            Mirror::M1Prime
        }
    }
}

pub fn circulation_index(n: usize, theta: f64) -> CirculationIndex {
    CirculationIndex { k: (n as f64 * theta / PI).floor() as i64 }
}

/// Spots per half turn, `⌊π/θ⌋`.
pub fn half_circulation(theta: f64) -> usize {
    (PI / theta).floor() as usize
}

/// Sum of `sin(iθ)` for `i = 1..=m`.
pub fn sine_sum(m: usize, theta: f64) -> f64 {
    if m == 0 {
        return 0.0;
    }
    let half = 0.5 * theta;
    if half.sin().abs() < 1e-300 {
        return 0.0;
    }
    (m as f64 * half).sin() * ((m as f64 + 1.0) * half).sin() / half.sin()
}

pub fn spot_y(n: usize, cfg: &RecirculatingCellConfig) -> Result<f64> {
    let theta = cfg.theta()?;
    let nt = n as f64 * theta;
    Ok(cfg.y0_mm * nt.cos() + cfg.lever() * cfg.y0_slope * nt.sin())
}

/// Closed-form x position of spot `n` including the tilt perturbations.
pub fn spot_x(n: usize, cfg: &RecirculatingCellConfig) -> Result<f64> {
    let theta = cfg.theta()?;
    let lever = cfg.lever();
    let nt = n as f64 * theta;
    let mut x = cfg.x0_mm * nt.cos() + lever * cfg.x0_slope * nt.sin();
    let mut j = 0;
    let mut start = 0usize;
    while start < n {
        x += 2.0 * lever * cfg.tilt_step(j)? * sine_sum(n - start, theta);
        j += 1;
        start = first_spot_of_circulation(j, theta, start);
    }
    Ok(x)
}

/// Smallest `n ≥ from` whose circulation index is at least `j`.
fn first_spot_of_circulation(j: usize, theta: f64, from: usize) -> usize {
    let mut n = from;
    while circulation_index(n, theta).k < j as i64 {
        n += 1;
    }
    n
}

/// Per-spot offset `Δ_n = 2 θ_x sqrt(2df − d²) Σ_{i=1..n} sin iθ` from the tilt after `n` reflections.
pub fn tilt_offset_delta_n(n: usize, theta_x: f64, d: f64, f2: f64) -> Result<f64> {
    let theta = optics::stability_angle(&optics::compose_round_trip(f64::INFINITY, f2, d)?)?;
    Ok(2.0 * theta_x * (2.0 * d * f2 - d * d).sqrt() * sine_sum(n, theta))
}

/// Shift of the optical centre, `θ_x sqrt(2df − d²) Σ_{i=1..n} sin iθ`.
pub fn center_offset(theta_x: f64, d: f64, f2: f64, n: usize) -> Result<f64> {
    Ok(0.5 * tilt_offset_delta_n(n, theta_x, d, f2)?)
}

/// Centre shift accumulated over one half turn (`n = ⌊π/θ⌋`).
pub fn optical_center_offset(cfg: &RecirculatingCellConfig) -> Result<f64> {
    let theta = cfg.theta()?;
    center_offset(cfg.theta_x, cfg.d_mm, cfg.f2_mm, half_circulation(theta))
}

/// Unrounded closed-form reflection count `(2π/θ)·⌈x0 / 2Δ⌉`.
pub fn total_reflections_exact(cfg: &RecirculatingCellConfig) -> Result<f64> {
    let theta = cfg.theta()?;
    if cfg.x0_mm <= 0.0 {
        return Err(Error::InvalidGeometry(format!("entry offset x0 must be positive, got {} mm", cfg.x0_mm)));
    }
    let delta = optical_center_offset(cfg)?.abs();
    if cfg.is_untilted() || delta == 0.0 {
        return Err(Error::NoExit("mirrors are untilted so the optical centre never moves".into()));
    }
    let circulations = (cfg.x0_mm / (2.0 * delta)).ceil();
    Ok(2.0 * PI / theta * circulations)
}

/// Closed-form reflection count, rounded up to whole reflections.
pub fn total_reflections(cfg: &RecirculatingCellConfig) -> Result<usize> {
    Ok((total_reflections_exact(cfg)? - 1e-9).ceil() as usize)
}

/// Reflection count on the M1 plane from the spot sequence: spots are counted up to and
/// including the first one with `x_n < −x0`.
pub fn count_reflections(cfg: &RecirculatingCellConfig, max_reflections: usize) -> Result<usize> {
    if cfg.x0_mm <= 0.0 {
        return Err(Error::InvalidGeometry(format!("entry offset x0 must be positive, got {} mm", cfg.x0_mm)));
    }
    if cfg.is_untilted() {
        return Err(Error::NoExit("mirrors are untilted so the optical centre never moves".into()));
    }
    let walker = SpotWalker::new(cfg)?;
    for (n, (x, _)) in walker.take(max_reflections).enumerate() {
        if x < -cfg.x0_mm {
            return Ok(n + 1);
        }
    }
    Err(Error::NoExit(format!("no spot below x = -{} mm within {max_reflections} reflections", cfg.x0_mm)))
}

/// Iterates `(x_n, y_n)` with the round-trip matrix and the tilt kicks, spot by spot.
#[derive(Debug, Clone)]
pub struct SpotWalker {
    m: TransferMatrix2,
    theta: f64,
    tilts: [f64; 2],
    x: [f64; 2],
    y: [f64; 2],
    n: usize,
}

impl SpotWalker {
    pub fn new(cfg: &RecirculatingCellConfig) -> Result<Self> {
        if cfg.tilt_sequence.is_some() {
            return Err(Error::Domain("the spot walker only supports the two-mirror tilt model".into()));
        }
        Ok(SpotWalker {
            m: cfg.round_trip()?,
            theta: cfg.theta()?,
            tilts: [cfg.theta_x, cfg.theta_x_prime],
            x: [cfg.x0_mm, cfg.x0_slope],
            y: [cfg.y0_mm, cfg.y0_slope],
            n: 0,
        })
    }
}

impl Iterator for SpotWalker {
    type Item = (f64, f64);
    fn next(&mut self) -> Option<(f64, f64)> {
        let out = (self.x[0], self.y[0]);
        let tilt = match circulation_index(self.n, self.theta).mirror() {
            Mirror::M1Prime => self.tilts[1],
            _ => self.tilts[0],
        };
        self.x = self.m.apply([self.x[0], self.x[1] + 2.0 * tilt]);
        self.y = self.m.apply(self.y);
        self.n += 1;
        Some(out)
    }
}

/// Beam state stored per spot, just after the reflection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BeamState {
    Stigmatic(ComplexBeamParam),
    Astigmatic(AstigmaticBeam),
}

impl BeamState {
    pub fn general(&self) -> AstigmaticBeam {
        match self {
            BeamState::Stigmatic(q) => AstigmaticBeam::stigmatic(*q),
            BeamState::Astigmatic(b) => *b,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpotRecord {
    pub index: usize,
    pub mirror: Mirror,
    pub x_mm: f64,
    pub y_mm: f64,
    pub w_xi_mm: f64,
    pub w_eta_mm: f64,
    pub beam: BeamState,
}

/// Spots on the M1 plane up to and including the exit spot.
pub fn spot_table(cfg: &RecirculatingCellConfig) -> Result<Vec<SpotRecord>> {
    let n_refl = count_reflections(cfg, MAX_REFLECTIONS)?;
    spot_table_len(cfg, n_refl)
}

/// First `count` spots, regardless of the exit condition.
pub fn spot_table_len(cfg: &RecirculatingCellConfig, count: usize) -> Result<Vec<SpotRecord>> {
    cfg.validate()?;
    let theta = cfg.theta()?;
    let m = cfg.round_trip()?;
    let mut q = cfg.beam.q0()?;
    let positions: Vec<(f64, f64)> = if cfg.tilt_sequence.is_some() {
        (0..count).map(|n| Ok((spot_x(n, cfg)?, spot_y(n, cfg)?))).collect::<Result<_>>()?
    } else {
        SpotWalker::new(cfg)?.take(count).collect()
    };
    let mut out = Vec::with_capacity(count);
    for (n, (x, y)) in positions.into_iter().enumerate() {
        let w = optics::beam_radius(q, cfg.beam.wavelength_mm)?;
        out.push(SpotRecord {
            index: n,
            mirror: circulation_index(n, theta).mirror(),
            x_mm: x,
            y_mm: y,
            w_xi_mm: w,
            w_eta_mm: w,
            beam: BeamState::Stigmatic(q),
        });
        q = optics::propagate_q(q, &m)?;
    }
    Ok(out)
}

/// One cell of a reflection-count sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub d_mm: f64,
    pub y0_slope: f64,
    pub n_refl: std::result::Result<usize, String>,
}

/// Widest run of constant reflection count at one separation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Plateau {
    pub d_mm: f64,
    pub n_refl: Option<usize>,
    pub y0_slope_lo: f64,
    pub y0_slope_hi: f64,
    pub width: f64,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SweepGrid {
    pub cells: Vec<SweepCell>,
    pub plateaus: Vec<Plateau>,
}

/// Reflection counts over a `d × y0′` grid. Failing cells are recorded, not fatal.
pub fn reflection_sweep(template: &RecirculatingCellConfig, d_values: &[f64], y0_slopes: &[f64], exec: Exec) -> SweepGrid {
    if d_values.is_empty() || y0_slopes.is_empty() {
        return SweepGrid::default();
    }
    let indices: Vec<(usize, usize)> =
        (0..d_values.len()).flat_map(|i| (0..y0_slopes.len()).map(move |j| (i, j))).collect();
    let cells = exec.map(&indices, |&(i, j)| {
        let mut cfg = template.clone();
        cfg.d_mm = d_values[i];
        cfg.y0_slope = y0_slopes[j];
        SweepCell {
            d_mm: d_values[i],
            y0_slope: y0_slopes[j],
            n_refl: count_reflections(&cfg, MAX_REFLECTIONS).map_err(|e| e.to_string()),
        }
    });
    let plateaus = cells.chunks(y0_slopes.len()).map(widest_plateau).collect();
    SweepGrid { cells, plateaus }
}

fn widest_plateau(row: &[SweepCell]) -> Plateau {
    let mut runs: Vec<(usize, usize)> = Vec::new();
    let mut start = 0;
    for i in 1..=row.len() {
        if i == row.len() || row[i].n_refl != row[start].n_refl {
            runs.push((start, i - 1));
            start = i;
        }
    }
    let span = |&(a, b): &(usize, usize)| (row[b].y0_slope - row[a].y0_slope).abs();
    let best = runs
        .iter()
        .filter(|r| row[r.0].n_refl.is_ok())
        .max_by(|p, q| span(p).total_cmp(&span(q)).then((p.1 - p.0).cmp(&(q.1 - q.0))).then(q.0.cmp(&p.0)))
        .copied();
    match best {
        Some((a, b)) => Plateau {
            d_mm: row[0].d_mm,
            n_refl: row[a].n_refl.as_ref().ok().copied(),
            y0_slope_lo: row[a].y0_slope.min(row[b].y0_slope),
            y0_slope_hi: row[a].y0_slope.max(row[b].y0_slope),
            width: span(&(a, b)),
            points: b - a + 1,
        },
        None => Plateau {
            d_mm: row[0].d_mm,
            n_refl: None,
            y0_slope_lo: row[0].y0_slope,
            y0_slope_hi: row[0].y0_slope,
            width: 0.0,
            points: 0,
        },
    }
}

#[cfg(test)]
pub(crate) mod tests_support {
    use super::*;

    pub(crate) fn fig1() -> RecirculatingCellConfig {
        RecirculatingCellConfig {
            f2_mm: 1000.0,
            d_mm: 29.8,
            theta_x: deg(0.04),
            theta_x_prime: -deg(0.04),
            x0_mm: 8.11,
            y0_mm: 0.0,
            x0_slope: deg(-0.26),
            y0_slope: deg(2.21),
            beam: BeamSpec::new(780e-6, 1.0),
            tilt_sequence: None,
        }
    }

    pub(crate) fn fig2d() -> RecirculatingCellConfig {
        RecirculatingCellConfig {
            f2_mm: 1000.0,
            d_mm: 86.46,
            theta_x: deg(0.02),
            theta_x_prime: -deg(0.02),
            x0_mm: 11.0,
            y0_mm: 0.0,
            x0_slope: 0.0,
            y0_slope: deg(1.2),
            beam: BeamSpec::new(780e-6, 1.0),
            tilt_sequence: None,
        }
    }

    fn deg(x: f64) -> f64 {
        x.to_radians()
    }
}
