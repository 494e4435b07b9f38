//! Paraxial ray-transfer matrices and Gaussian beam parameters.

use std::ops::Mul;

use nalgebra::{Matrix2, Matrix4, Vector2};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Real 2×2 ray-transfer matrix acting on `(position, slope)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransferMatrix2 {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl TransferMatrix2 {
    pub const IDENTITY: TransferMatrix2 = TransferMatrix2 { a: 1.0, b: 0.0, c: 0.0, d: 1.0 };

    pub fn new(a: f64, b: f64, c: f64, d: f64) -> Self {
        TransferMatrix2 { a, b, c, d }
    }

    /// Free propagation over `length` mm.
    pub fn propagation(length: f64) -> Self {
        TransferMatrix2::new(1.0, length, 0.0, 1.0)
    }

    /// Thin lens or mirror of focal length `f` mm. An infinite focal length is a flat mirror.
    pub fn lens(f: f64) -> Self {
        if f.is_infinite() {
            Self::IDENTITY
        } else {
            TransferMatrix2::new(1.0, 0.0, -1.0 / f, 1.0)
        }
    }

    pub fn det(&self) -> f64 {
        self.a * self.d - self.b * self.c
    }

    pub fn trace(&self) -> f64 {
        self.a + self.d
    }

    pub fn apply(&self, ray: [f64; 2]) -> [f64; 2] {
        [self.a * ray[0] + self.b * ray[1], self.c * ray[0] + self.d * ray[1]]
    }

    pub fn pow(&self, n: u32) -> Self {
        let mut out = Self::IDENTITY;
        let mut base = *self;
        let mut e = n;
        while e > 0 {
            if e & 1 == 1 {
                out = out * base;
            }
            base = base * base;
            e >>= 1;
        }
        out
    }

    pub fn to_matrix(&self) -> Matrix2<f64> {
        Matrix2::new(self.a, self.b, self.c, self.d)
    }

    pub fn from_matrix(m: &Matrix2<f64>) -> Self {
        TransferMatrix2::new(m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)])
    }
}

impl Mul for TransferMatrix2 {
    type Output = TransferMatrix2;
    fn mul(self, r: TransferMatrix2) -> TransferMatrix2 {
        TransferMatrix2 {
            a: self.a * r.a + self.b * r.c,
            b: self.a * r.b + self.b * r.d,
            c: self.c * r.a + self.d * r.c,
            d: self.c * r.b + self.d * r.d,
        }
    }
}

/// Round trip `lens(f1) · prop(d) · lens(f2) · prop(d)` starting just after the first mirror.
pub fn compose_round_trip(f1: f64, f2: f64, d: f64) -> Result<TransferMatrix2> {
    if !(d.is_finite() && d > 0.0) {
        return Err(Error::InvalidGeometry(format!("mirror separation must be positive, got {d} mm")));
    }
    for (name, f) in [("f1", f1), ("f2", f2)] {
        if f.is_nan() || f == 0.0 {
            return Err(Error::InvalidGeometry(format!("focal length {name} must be nonzero, got {f}")));
        }
    }
    let p = TransferMatrix2::propagation(d);
    Ok(TransferMatrix2::lens(f1) * p * TransferMatrix2::lens(f2) * p)
}

/// Angle between consecutive spots, `arccos((A + D) / 2)` in `(0, π)`.
pub fn stability_angle(m: &TransferMatrix2) -> Result<f64> {
    let half = 0.5 * m.trace();
    if !(half.abs() < 1.0) {
        return Err(Error::Unstable { half_trace: half.abs() });
    }
    Ok(half.acos())
}

/// Complex beam parameter `q = z + i z_R` in mm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComplexBeamParam {
    pub re: f64,
    pub im: f64,
}

/// `1/q = a − i b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InvQParts {
    pub a: f64,
    pub b: f64,
}

impl ComplexBeamParam {
    pub fn new(q: Complex64) -> Result<Self> {
        if !(q.re.is_finite() && q.im.is_finite()) {
            return Err(Error::NonphysicalBeam(format!("non-finite q = {q}")));
        }
        if q.im <= 0.0 {
            return Err(Error::NonphysicalBeam(format!("Im(q) = {} must be positive", q.im)));
        }
        Ok(ComplexBeamParam { re: q.re, im: q.im })
    }

    /// Beam a distance `z` mm past a waist of radius `w0` mm.
    pub fn from_waist(w0: f64, wavelength: f64, z: f64) -> Result<Self> {
        if !(w0 > 0.0 && wavelength > 0.0) {
            return Err(Error::NonphysicalBeam(format!("waist {w0} mm and wavelength {wavelength} mm must be positive")));
        }
        Self::new(Complex64::new(z, std::f64::consts::PI * w0 * w0 / wavelength))
    }

    pub fn q(&self) -> Complex64 {
        Complex64::new(self.re, self.im)
    }

    pub fn inv(&self) -> Complex64 {
        1.0 / self.q()
    }

    /// Distance past the waist (negative before it).
    pub fn waist_offset(&self) -> f64 {
        self.re
    }

    pub fn rayleigh_range(&self) -> f64 {
        self.im
    }
}

pub fn inv_q_parts(q: Complex64) -> Result<InvQParts> {
    if q == Complex64::new(0.0, 0.0) {
        return Err(Error::Singular);
    }
    let inv = 1.0 / q;
    Ok(InvQParts { a: inv.re, b: -inv.im })
}

pub fn propagate_q(q: ComplexBeamParam, m: &TransferMatrix2) -> Result<ComplexBeamParam> {
    let num = m.a * q.q() + m.b;
    let den = m.c * q.q() + m.d;
    if den.norm() == 0.0 {
        return Err(Error::Singular);
    }
    ComplexBeamParam::new(num / den)
}

pub fn beam_radius(q: ComplexBeamParam, wavelength: f64) -> Result<f64> {
    let inv_im = q.inv().im;
    if !(inv_im < 0.0) {
        return Err(Error::NonphysicalBeam(format!("Im(1/q) = {inv_im} must be negative")));
    }
    Ok((-wavelength / (std::f64::consts::PI * inv_im)).sqrt())
}

pub fn propagate_dual_q(
    q_xi: ComplexBeamParam,
    q_eta: ComplexBeamParam,
    m_xi: &TransferMatrix2,
    m_eta: &TransferMatrix2,
) -> Result<(ComplexBeamParam, ComplexBeamParam)> {
    Ok((propagate_q(q_xi, m_xi)?, propagate_q(q_eta, m_eta)?))
}

/// Tangential and sagittal focal lengths of a spherical mirror hit at incidence angle `phi`.
pub fn mirror_astigmatic_focals(f: f64, phi: f64) -> Result<(f64, f64)> {
    if !(phi.abs() < std::f64::consts::FRAC_PI_2) {
        return Err(Error::Domain(format!("incidence angle {phi} rad must satisfy |φ| < π/2")));
    }
    let c = phi.cos();
    Ok((f * c, f / c))
}

/// Thin cylindrical lens with its curved axis at azimuth `alpha`: `F = (1/f) u uᵀ`.
pub fn cylindrical_power(f: f64, alpha: f64) -> Matrix2<f64> {
    let u = Vector2::new(alpha.cos(), alpha.sin());
    (u * u.transpose()) / f
}

/// 4×4 ray matrix on `(x, y, x', y')` from 2×2 blocks.
pub fn ray_matrix4(a: &Matrix2<f64>, b: &Matrix2<f64>, c: &Matrix2<f64>, d: &Matrix2<f64>) -> Matrix4<f64> {
    let mut m = Matrix4::zeros();
    m.fixed_view_mut::<2, 2>(0, 0).copy_from(a);
    m.fixed_view_mut::<2, 2>(0, 2).copy_from(b);
    m.fixed_view_mut::<2, 2>(2, 0).copy_from(c);
    m.fixed_view_mut::<2, 2>(2, 2).copy_from(d);
    m
}

pub fn free_space4(length: f64) -> Matrix4<f64> {
    let i = Matrix2::identity();
    ray_matrix4(&i, &(i * length), &Matrix2::zeros(), &i)
}

pub fn lens4(power: &Matrix2<f64>) -> Matrix4<f64> {
    let i = Matrix2::identity();
    ray_matrix4(&i, &Matrix2::zeros(), &(-power), &i)
}

/// Symplectic form `[[0, I], [−I, 0]]` on `(x, y, x', y')`.
pub fn symplectic_form() -> Matrix4<f64> {
    let i = Matrix2::identity();
    ray_matrix4(&Matrix2::zeros(), &i, &(-i), &Matrix2::zeros())
}

/// General astigmatic Gaussian beam described by the complex symmetric
/// curvature matrix `P = Q⁻¹`; the field is `exp(−i k rᵀ P r / 2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AstigmaticBeam {
    pub p: Matrix2<Complex64>,
}

/// Principal beam radii (mm) and the azimuth (rad) of the first axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrincipalRadii {
    pub w_xi: f64,
    pub w_eta: f64,
    pub azimuth: f64,
}

impl AstigmaticBeam {
    pub fn stigmatic(q: ComplexBeamParam) -> Self {
        let inv = q.inv();
        let z = Complex64::new(0.0, 0.0);
        AstigmaticBeam { p: Matrix2::new(inv, z, z, inv) }
    }

    /// Simple astigmatic beam with principal axes at `azimuth`.
    pub fn from_principal(q_xi: ComplexBeamParam, q_eta: ComplexBeamParam, azimuth: f64) -> Self {
        let (s, c) = azimuth.sin_cos();
        let r = Matrix2::new(c, -s, s, c).map(|v| Complex64::new(v, 0.0));
        let z = Complex64::new(0.0, 0.0);
        let d = Matrix2::new(q_xi.inv(), z, z, q_eta.inv());
        AstigmaticBeam { p: r * d * r.transpose() }
    }

    /// Applies `P → (C + D P)(A + B P)⁻¹` for the 4×4 ray matrix `m`.
    pub fn transform(&self, m: &Matrix4<f64>) -> Result<Self> {
        let c = |r0: usize, c0: usize| -> Matrix2<Complex64> {
            m.fixed_view::<2, 2>(r0, c0).into_owned().map(|v| Complex64::new(v, 0.0))
        };
        let num = c(2, 0) + c(2, 2) * self.p;
        let den = c(0, 0) + c(0, 2) * self.p;
        let inv = den.try_inverse().ok_or(Error::Singular)?;
        let p = num * inv;
        // enforce symmetry lost to rounding
        let off = (p[(0, 1)] + p[(1, 0)]) * 0.5;
        let out = AstigmaticBeam { p: Matrix2::new(p[(0, 0)], off, off, p[(1, 1)]) };
        out.check()?;
        Ok(out)
    }

    /// Free propagation `P → P (I + s P)⁻¹`.
    pub fn propagate(&self, s: f64) -> Result<Self> {
        let i = Matrix2::<Complex64>::identity();
        let den = i + self.p * Complex64::new(s, 0.0);
        let inv = den.try_inverse().ok_or(Error::Singular)?;
        let p = self.p * inv;
        let off = (p[(0, 1)] + p[(1, 0)]) * 0.5;
        Ok(AstigmaticBeam { p: Matrix2::new(p[(0, 0)], off, off, p[(1, 1)]) })
    }

    /// Thin lens of power matrix `F`: `P → P − F`.
    pub fn lens(&self, power: &Matrix2<f64>) -> Self {
        AstigmaticBeam { p: self.p - power.map(|v| Complex64::new(v, 0.0)) }
    }

    /// Intensity exponent `β` with `|u|² ∝ exp(−rᵀ β r)`.
    pub fn beta(&self, k: f64) -> Matrix2<f64> {
        self.p.map(|v| -k * v.im)
    }

    pub fn check(&self) -> Result<()> {
        let im = self.p.map(|v| -v.im);
        let det = im[(0, 0)] * im[(1, 1)] - im[(0, 1)] * im[(1, 0)];
        if !(im[(0, 0)] > 0.0 && det > 0.0) || !self.p.iter().all(|v| v.re.is_finite() && v.im.is_finite()) {
            return Err(Error::NonphysicalBeam("imaginary part of the curvature matrix is not negative definite".into()));
        }
        Ok(())
    }

    pub fn is_stigmatic(&self, rel: f64) -> bool {
        let scale = self.p[(0, 0)].norm().max(self.p[(1, 1)].norm());
        (self.p[(0, 0)] - self.p[(1, 1)]).norm() <= rel * scale && self.p[(0, 1)].norm() <= rel * scale
    }

    pub fn principal_radii(&self, wavelength: f64) -> Result<PrincipalRadii> {
        self.check()?;
        let k = 2.0 * std::f64::consts::PI / wavelength;
        let beta = self.beta(k);
        let (l1, l2, azimuth) = sym_eigen2(&beta);
        Ok(PrincipalRadii { w_xi: (2.0 / l1).sqrt(), w_eta: (2.0 / l2).sqrt(), azimuth })
    }
}

/// Eigenvalues of a real symmetric 2×2 matrix, smaller first, and the azimuth of the first eigenvector.
pub fn sym_eigen2(m: &Matrix2<f64>) -> (f64, f64, f64) {
    let (a, b, d) = (m[(0, 0)], 0.5 * (m[(0, 1)] + m[(1, 0)]), m[(1, 1)]);
    let mean = 0.5 * (a + d);
    let r = (0.25 * (a - d) * (a - d) + b * b).sqrt();
    // the smaller eigenvalue belongs to the wider axis
    let az = 0.5 * (2.0 * b).atan2(a - d) + std::f64::consts::FRAC_PI_2;
    let az = wrap_half_turn(az);
    (mean - r, mean + r, az)
}

fn wrap_half_turn(a: f64) -> f64 {
    let pi = std::f64::consts::PI;
    let mut x = a % pi;
    if x <= -pi / 2.0 {
        x += pi;
    }
    if x > pi / 2.0 {
        x -= pi;
    }
    x
}
