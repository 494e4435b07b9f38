//! Two-mirror cell built from cylindrical mirrors whose curved axes are twisted by `θ_t`.

use std::f64::consts::FRAC_PI_2;

use nalgebra::{Matrix2, Matrix4, Vector4};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{BeamState, BeamSpec, Mirror, SpotRecord};
use crate::optics::{self, AstigmaticBeam, ComplexBeamParam, TransferMatrix2};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CylindricalCellConfig {
    pub f_mm: f64,
    /// Angle between the curved axes of the two mirrors.
    pub twist: f64,
    pub d_mm: f64,
    pub round_trips: usize,
    pub w_xi0_mm: f64,
    pub w_eta0_mm: f64,
    pub x0_mm: f64,
    pub y0_mm: f64,
    pub x0_slope: f64,
    pub y0_slope: f64,
    pub beam: BeamSpec,
}

impl CylindricalCellConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.twist > 0.0 && self.twist <= FRAC_PI_2) {
            return Err(Error::InvalidGeometry(format!("twist angle {} rad must lie in (0, π/2]", self.twist)));
        }
        if !(self.d_mm > 0.0 && self.d_mm.is_finite()) {
            return Err(Error::InvalidGeometry(format!("separation must be positive, got {} mm", self.d_mm)));
        }
        if !(self.f_mm.is_finite() && self.f_mm != 0.0) {
            return Err(Error::InvalidGeometry(format!("focal length must be finite and nonzero, got {} mm", self.f_mm)));
        }
        if !(self.w_xi0_mm > 0.0 && self.w_eta0_mm > 0.0) {
            return Err(Error::InvalidGeometry("initial beam widths must be positive".into()));
        }
        self.beam.validate()
    }

    pub fn m1_power(&self) -> Matrix2<f64> {
        optics::cylindrical_power(self.f_mm, 0.0)
    }

    pub fn m2_power(&self) -> Matrix2<f64> {
        optics::cylindrical_power(self.f_mm, self.twist)
    }

    /// Round trip on `(x, y, x', y')` from the M1 plane: out to M2, back, then the M1 reflection.
    pub fn round_trip_matrix(&self) -> Matrix4<f64> {
        let p = optics::free_space4(self.d_mm);
        optics::lens4(&self.m1_power()) * p * optics::lens4(&self.m2_power()) * p
    }

    pub fn initial_beam(&self) -> Result<AstigmaticBeam> {
        let z = self.beam.z_from_waist_mm;
        let lambda = self.beam.wavelength_mm;
        let q_xi = ComplexBeamParam::from_waist(self.w_xi0_mm, lambda, z)?;
        let q_eta = ComplexBeamParam::from_waist(self.w_eta0_mm, lambda, z)?;
        Ok(AstigmaticBeam::from_principal(q_xi, q_eta, 0.0))
    }
}

/// Decoupled form of the 4×4 round trip: `R = T · (m_xi ⊕ m_eta) · T⁻¹`.
#[derive(Debug, Clone, PartialEq)]
pub struct CylindricalRoundTrip {
    pub matrix: Matrix4<f64>,
    pub m_xi: TransferMatrix2,
    pub m_eta: TransferMatrix2,
    /// Azimuth of the ξ mode's position direction.
    pub azimuth: f64,
    /// Symplectic basis with columns `(e_ξ, e_η, f_ξ, f_η)`.
    pub basis: Matrix4<f64>,
}

impl CylindricalRoundTrip {
    pub fn eigen_angles(&self) -> Result<(f64, f64)> {
        Ok((optics::stability_angle(&self.m_xi)?, optics::stability_angle(&self.m_eta)?))
    }

    /// Rebuilds the full round trip from the blocks.
    pub fn reconstruct(&self) -> Option<Matrix4<f64>> {
        let n = block_sum(&self.m_xi, &self.m_eta);
        Some(self.basis * n * self.basis.try_inverse()?)
    }
}

fn block_sum(a: &TransferMatrix2, b: &TransferMatrix2) -> Matrix4<f64> {
    let mut n = Matrix4::zeros();
    n[(0, 0)] = a.a;
    n[(0, 2)] = a.b;
    n[(2, 0)] = a.c;
    n[(2, 2)] = a.d;
    n[(1, 1)] = b.a;
    n[(1, 3)] = b.b;
    n[(3, 1)] = b.c;
    n[(3, 3)] = b.d;
    n
}

/// Solutions `μ = λ + 1/λ` of the reciprocal characteristic polynomial of a 4×4 symplectic matrix.
fn half_traces(r: &Matrix4<f64>) -> ((f64, f64), (f64, f64)) {
    let a = r.trace();
    let b = 0.5 * (a * a - (r * r).trace());
    let disc = a * a - 4.0 * (b - 2.0);
    if disc >= 0.0 {
        let s = disc.sqrt();
        ((0.5 * (a + s), 0.0), (0.5 * (a - s), 0.0))
    } else {
        let s = (-disc).sqrt();
        ((0.5 * a, 0.5 * s), (0.5 * a, -0.5 * s))
    }
}

pub fn cylindrical_round_trip(cfg: &CylindricalCellConfig) -> Result<CylindricalRoundTrip> {
    cfg.validate()?;
    let r = cfg.round_trip_matrix();
    let (mu1, mu2) = half_traces(&r);
    let eigenvalues = vec![mu1, mu2];
    if mu1.1 != 0.0 {
        return Err(Error::NotDecouplable { eigenvalues });
    }
    for mu in [mu1.0, mu2.0] {
        if !(mu.abs() < 2.0) {
            return Err(Error::Unstable { half_trace: 0.5 * mu.abs() });
        }
    }

    // crossed axes commute: the mirror axes are already the principal axes
    if (cfg.twist - FRAC_PI_2).abs() < 1e-12 {
        let p = TransferMatrix2::propagation(cfg.d_mm);
        let curved = TransferMatrix2::lens(cfg.f_mm);
        return Ok(CylindricalRoundTrip {
            matrix: r,
            m_xi: curved * p * p,
            m_eta: p * curved * p,
            azimuth: 0.0,
            basis: Matrix4::identity(),
        });
    }
    if (mu1.0 - mu2.0).abs() < 1e-9 {
        return Err(Error::NotDecouplable { eigenvalues });
    }

    let omega = optics::symplectic_form();
    let rc = r.map(|v| Complex64::new(v, 0.0));
    let mut cols: Vec<(Vector4<f64>, Vector4<f64>)> = Vec::with_capacity(2);
    for mu in [mu1.0, mu2.0] {
        let half = 0.5 * mu;
        let lambda = Complex64::new(half, (1.0 - half * half).sqrt());
        let shifted = rc - Matrix4::<Complex64>::identity() * lambda;
        let svd = shifted.svd(false, true);
        let v_t = svd.v_t.ok_or_else(|| Error::NotDecouplable { eigenvalues: eigenvalues.clone() })?;
        let (imin, _) = svd
            .singular_values
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .ok_or_else(|| Error::NotDecouplable { eigenvalues: eigenvalues.clone() })?;
        let mut v: Vector4<Complex64> = v_t.row(imin).adjoint();
        // rotate the phase so the real part carries as much position as possible
        let ptp = v[0] * v[0] + v[1] * v[1];
        let phase = Complex64::from_polar(1.0, -0.5 * ptp.arg());
        v *= phase;
        let e = v.map(|c| c.re);
        let mut f = v.map(|c| c.im);
        let mut s = (e.transpose() * omega * f)[(0, 0)];
        if s < 0.0 {
            f = -f;
            s = -s;
        }
        if s < 1e-14 {
            return Err(Error::NotDecouplable { eigenvalues });
        }
        let norm = s.sqrt();
        let (e, f) = (e / norm, f / norm);
        let alpha = 1.0 / (e[0] * e[0] + e[1] * e[1]).sqrt();
        cols.push((e * alpha, f / alpha));
    }
    let mut basis = Matrix4::zeros();
    basis.set_column(0, &cols[0].0);
    basis.set_column(1, &cols[1].0);
    basis.set_column(2, &cols[0].1);
    basis.set_column(3, &cols[1].1);
    let inv = basis.try_inverse().ok_or_else(|| Error::NotDecouplable { eigenvalues: eigenvalues.clone() })?;
    let n = inv * r * basis;
    let m_xi = TransferMatrix2::new(n[(0, 0)], n[(0, 2)], n[(2, 0)], n[(2, 2)]);
    let m_eta = TransferMatrix2::new(n[(1, 1)], n[(1, 3)], n[(3, 1)], n[(3, 3)]);
    let coupling = (n - block_sum(&m_xi, &m_eta)).norm();
    if coupling > 1e-9 * n.norm() {
        return Err(Error::NotDecouplable { eigenvalues });
    }
    let azimuth = cols[0].0[1].atan2(cols[0].0[0]);
    Ok(CylindricalRoundTrip { matrix: r, m_xi, m_eta, azimuth, basis })
}

/// Chief-ray spots and beam radii: the entry spot on M1, then alternating M2 and M1
/// reflections for the configured number of round trips.
pub fn cylindrical_spot_table(cfg: &CylindricalCellConfig) -> Result<Vec<SpotRecord>> {
    cfg.validate()?;
    let lambda = cfg.beam.wavelength_mm;
    let p = optics::free_space4(cfg.d_mm);
    let l1 = optics::lens4(&cfg.m1_power());
    let l2 = optics::lens4(&cfg.m2_power());
    let mut ray = Vector4::new(cfg.x0_mm, cfg.y0_mm, cfg.x0_slope, cfg.y0_slope);
    let mut beam = cfg.initial_beam()?;
    let mut out = Vec::with_capacity(2 * cfg.round_trips + 1);
    let record = |index: usize, mirror: Mirror, ray: &Vector4<f64>, beam: &AstigmaticBeam| -> Result<SpotRecord> {
        let radii = beam.principal_radii(lambda)?;
        Ok(SpotRecord {
            index,
            mirror,
            x_mm: ray[0],
            y_mm: ray[1],
            w_xi_mm: radii.w_xi,
            w_eta_mm: radii.w_eta,
            beam: BeamState::Astigmatic(*beam),
        })
    };
    out.push(record(0, Mirror::M1, &ray, &beam)?);
    for trip in 0..cfg.round_trips {
        ray = l2 * p * ray;
        beam = beam.propagate(cfg.d_mm)?.lens(&cfg.m2_power());
        beam.check()?;
        out.push(record(2 * trip + 1, Mirror::M2, &ray, &beam)?);
        ray = l1 * p * ray;
        beam = beam.propagate(cfg.d_mm)?.lens(&cfg.m1_power());
        beam.check()?;
        out.push(record(2 * trip + 2, Mirror::M1, &ray, &beam)?);
    }
    Ok(out)
}
