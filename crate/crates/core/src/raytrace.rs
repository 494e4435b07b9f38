//! Exact 3D ray tracing through mirror cells.
//!
//! Surfaces are grouped; each visit to a group reflects off exactly one of its
//! surfaces, chosen by the surface selector. M1 and M1′ share a group.

use std::f64::consts::PI;

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::geometry::{circulation_index, BeamSpec, RecirculatingCellConfig, SpotRecord};
use crate::{Error, Exec, Result};

/// Smallest accepted path length to the next surface.
pub const PATH_EPS: f64 = 1e-9;

/// Distance in front of M1 at which sampled rays start.
pub const LAUNCH_DISTANCE: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray3 {
    pub origin: Vector3<f64>,
    pub dir: Vector3<f64>,
}

impl Ray3 {
    pub fn new(origin: Vector3<f64>, dir: Vector3<f64>) -> Self {
        Ray3 { origin, dir: dir.normalize() }
    }

    pub fn at(&self, t: f64) -> Vector3<f64> {
        self.origin + self.dir * t
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shape {
    Plane { point: Vector3<f64>, normal: Vector3<f64> },
    Sphere { center: Vector3<f64>, radius: f64 },
    Cylinder { point: Vector3<f64>, axis: Vector3<f64>, radius: f64 },
}

impl Shape {
    /// Nearest intersection with path length above [`PATH_EPS`].
    pub fn intersect(&self, ray: &Ray3) -> Option<f64> {
        match *self {
            Shape::Plane { point, normal } => {
                let den = ray.dir.dot(&normal);
                if den == 0.0 {
                    return None;
                }
                let t = (point - ray.origin).dot(&normal) / den;
                (t > PATH_EPS).then_some(t)
            }
            Shape::Sphere { center, radius } => {
                let oc = ray.origin - center;
                nearest_root(1.0, ray.dir.dot(&oc), oc.norm_squared() - radius * radius)
            }
            Shape::Cylinder { point, axis, radius } => {
                let oc = ray.origin - point;
                let d_perp = ray.dir - axis * ray.dir.dot(&axis);
                let o_perp = oc - axis * oc.dot(&axis);
                nearest_root(d_perp.norm_squared(), d_perp.dot(&o_perp), o_perp.norm_squared() - radius * radius)
            }
        }
    }

    pub fn normal_at(&self, p: &Vector3<f64>) -> Vector3<f64> {
        match *self {
            Shape::Plane { normal, .. } => normal.normalize(),
            Shape::Sphere { center, .. } => (p - center).normalize(),
            Shape::Cylinder { point, axis, .. } => {
                let v = p - point;
                (v - axis * v.dot(&axis)).normalize()
            }
        }
    }

    /// Signed distance of `p` from the surface.
    pub fn residual(&self, p: &Vector3<f64>) -> f64 {
        match *self {
            Shape::Plane { point, normal } => (p - point).dot(&normal.normalize()),
            Shape::Sphere { center, radius } => (p - center).norm() - radius,
            Shape::Cylinder { point, axis, radius } => {
                let v = p - point;
                (v - axis * v.dot(&axis)).norm() - radius
            }
        }
    }
}

/// Smallest root above [`PATH_EPS`] of `a t² + 2 b t + c`.
fn nearest_root(a: f64, b: f64, c: f64) -> Option<f64> {
    if a == 0.0 {
        return None;
    }
    let disc = b * b - a * c;
    if disc < 0.0 {
        return None;
    }
    let q = -(b + b.signum() * disc.sqrt());
    let (t1, t2) = if q == 0.0 { (0.0, 0.0) } else { (q / a, c / q) };
    let (lo, hi) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
    if lo > PATH_EPS {
        Some(lo)
    } else if hi > PATH_EPS {
        Some(hi)
    } else {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Selector {
    Always,
    /// Active where `normal · p ≥ offset` at the hit point.
    HalfSpace { normal: Vector3<f64>, offset: f64 },
    /// Active on group visits `n` whose circulation index `⌊nθ/π⌋` has the given parity.
    Circulation { theta: f64, parity: i64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Surface3 {
    pub name: String,
    pub shape: Shape,
    pub group: usize,
    pub selector: Selector,
    /// Hits further than this from the z axis escape the cell.
    pub aperture_radius: Option<f64>,
}

/// How M1/M1′ is chosen for each reflection on the M1 plane.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MirrorAssignment {
    /// Whole bundle follows the circulation parity of the reflection index.
    #[default]
    ByReflectionIndex,
    /// Each ray picks the mirror from the sign of y at its hit point.
    ByHitHalfPlane,
}

pub fn recirculating_surfaces(
    cfg: &RecirculatingCellConfig,
    assignment: MirrorAssignment,
    aperture_radius: Option<f64>,
) -> Result<Vec<Surface3>> {
    let theta = cfg.theta()?;
    let plane = |tilt: f64| Shape::Plane { point: Vector3::zeros(), normal: Vector3::new(tilt.sin(), 0.0, tilt.cos()) };
    let (sel1, sel2) = match assignment {
        MirrorAssignment::ByReflectionIndex => {
            (Selector::Circulation { theta, parity: 0 }, Selector::Circulation { theta, parity: 1 })
        }
        MirrorAssignment::ByHitHalfPlane => (
            Selector::HalfSpace { normal: Vector3::y(), offset: 0.0 },
            Selector::HalfSpace { normal: -Vector3::y(), offset: 0.0 },
        ),
    };
    let radius = 2.0 * cfg.f2_mm;
    Ok(vec![
        Surface3 { name: "M1".into(), shape: plane(cfg.theta_x), group: 0, selector: sel1, aperture_radius },
        Surface3 { name: "M1p".into(), shape: plane(cfg.theta_x_prime), group: 0, selector: sel2, aperture_radius },
        Surface3 {
            name: "M2".into(),
            shape: Shape::Sphere { center: Vector3::new(0.0, 0.0, cfg.d_mm - radius), radius },
            group: 1,
            selector: Selector::Always,
            aperture_radius,
        },
    ])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntryState {
    pub x_mm: f64,
    pub y_mm: f64,
    pub x_slope: f64,
    pub y_slope: f64,
}

impl EntryState {
    pub fn of(cfg: &RecirculatingCellConfig) -> Self {
        EntryState { x_mm: cfg.x0_mm, y_mm: cfg.y0_mm, x_slope: cfg.x0_slope, y_slope: cfg.y0_slope }
    }
}

/// Rays aimed at the first reflection on the `z = 0` plane, starting [`LAUNCH_DISTANCE`] in front of it.
///
/// Ray 0 is the chief ray. The others sample a Gaussian beam at its waist
/// (position σ = w0/2, slope σ = λ/(2π w0) per axis) propagated to the mirror.
/// Each ray draws from its own ChaCha stream, so the set is independent of thread count.
pub fn sample_beam_rays(beam: &BeamSpec, entry: &EntryState, n_rays: usize, seed: u64) -> Result<Vec<Ray3>> {
    beam.validate()?;
    if n_rays == 0 {
        return Err(Error::Domain("at least one ray is required".into()));
    }
    let sigma_x = 0.5 * beam.w0_mm;
    let sigma_s = beam.wavelength_mm / (2.0 * PI * beam.w0_mm);
    let z = beam.z_from_waist_mm;
    Ok((0..n_rays)
        .map(|i| {
            let (dx, dy, sx, sy) = if i == 0 {
                (0.0, 0.0, 0.0, 0.0)
            } else {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(i as u64);
                let mut g = || -> f64 { StandardNormal.sample(&mut rng) };
                let (px, py, ax, ay) = (g() * sigma_x, g() * sigma_x, g() * sigma_s, g() * sigma_s);
                (px + z * ax, py + z * ay, ax, ay)
            };
            let target = Vector3::new(entry.x_mm + dx, entry.y_mm + dy, 0.0);
            let dir = Vector3::new(entry.x_slope + sx, entry.y_slope + sy, -1.0);
            Ray3::new(target - dir * LAUNCH_DISTANCE, dir)
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceOptions {
    pub max_hits: usize,
    /// Group whose hits count as reflections.
    pub counted_group: usize,
    /// A counted hit with `x` below this ends the ray (the hit itself counts).
    pub exit_below_x: Option<f64>,
    pub exec: Exec,
}

impl Default for TraceOptions {
    fn default() -> Self {
        TraceOptions { max_hits: 10_000, counted_group: 0, exit_below_x: None, exec: Exec::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub surface: usize,
    pub group: usize,
    pub point: Vector3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RayStatus {
    Exited,
    Missed,
    Escaped,
    MaxHits,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RayPath {
    pub hits: Vec<Hit>,
    pub status: RayStatus,
}

impl RayPath {
    pub fn counted<'a>(&'a self, group: usize) -> impl Iterator<Item = &'a Hit> + 'a {
        self.hits.iter().filter(move |h| h.group == group)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TracedSpot {
    pub index: usize,
    pub x_mm: f64,
    pub y_mm: f64,
    /// RMS distance of the contributing rays from the centroid.
    pub spread_mm: f64,
    pub rays: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceResult {
    pub paths: Vec<RayPath>,
    pub counted_group: usize,
    pub spots: Vec<TracedSpot>,
    /// Reflections counted for the chief ray.
    pub n_reflections: usize,
    /// Index of the counted reflection at which the chief ray left, if it did.
    pub exit_reflection: Option<usize>,
}

impl TraceResult {
    fn from_paths(paths: Vec<RayPath>, counted_group: usize) -> Self {
        let mut sums: Vec<(f64, f64, usize)> = Vec::new();
        for path in &paths {
            for (r, h) in path.counted(counted_group).enumerate() {
                if sums.len() <= r {
                    sums.push((0.0, 0.0, 0));
                }
                sums[r].0 += h.point.x;
                sums[r].1 += h.point.y;
                sums[r].2 += 1;
            }
        }
        let mut spread = vec![0.0; sums.len()];
        for path in &paths {
            for (r, h) in path.counted(counted_group).enumerate() {
                let (sx, sy, n) = sums[r];
                let (cx, cy) = (sx / n as f64, sy / n as f64);
                spread[r] += (h.point.x - cx).powi(2) + (h.point.y - cy).powi(2);
            }
        }
        let spots = sums
            .iter()
            .zip(spread)
            .enumerate()
            .map(|(index, (&(sx, sy, n), s2))| TracedSpot {
                index,
                x_mm: sx / n as f64,
                y_mm: sy / n as f64,
                spread_mm: (s2 / n as f64).sqrt(),
                rays: n,
            })
            .collect();
        let chief = paths.first();
        let n_reflections = chief.map_or(0, |p| p.counted(counted_group).count());
        let exit_reflection = chief.filter(|p| p.status == RayStatus::Exited).map(|_| n_reflections.saturating_sub(1));
        TraceResult { paths, counted_group, spots, n_reflections, exit_reflection }
    }

    /// Synthetic single-ray trace whose counted hits sit exactly on the given spots.
    pub fn from_spots(spots: &[SpotRecord]) -> Self {
        let hits = spots
            .iter()
            .map(|s| Hit { surface: 0, group: 0, point: Vector3::new(s.x_mm, s.y_mm, 0.0) })
            .collect();
        TraceResult::from_paths(vec![RayPath { hits, status: RayStatus::Exited }], 0)
    }

    /// Range of counted reflections over all rays.
    pub fn reflection_range(&self) -> (usize, usize) {
        let counts = self.paths.iter().map(|p| p.counted(self.counted_group).count());
        counts.fold((usize::MAX, 0), |(lo, hi), c| (lo.min(c), hi.max(c)))
    }
}

fn selector_accepts(sel: &Selector, visits: usize, p: &Vector3<f64>) -> bool {
    match *sel {
        Selector::Always => true,
        Selector::HalfSpace { normal, offset } => normal.dot(p) >= offset,
        Selector::Circulation { theta, parity } => circulation_index(visits, theta).k.rem_euclid(2) == parity,
    }
}

fn trace_one(surfaces: &[Surface3], ray: &Ray3, opts: &TraceOptions, n_groups: usize) -> RayPath {
    let mut ray = *ray;
    let mut visits = vec![0usize; n_groups];
    let mut hits: Vec<Hit> = Vec::new();
    for _ in 0..opts.max_hits {
        let mut best: Option<(usize, f64, Vector3<f64>)> = None;
        let last_group = hits.last().map(|h| h.group);
        for (i, s) in surfaces.iter().enumerate() {
            // a group is one physical mirror plane: leaving it, the ray must reach another group first
            if last_group == Some(s.group) {
                continue;
            }
            if let Selector::Circulation { .. } = s.selector {
                if !selector_accepts(&s.selector, visits[s.group], &Vector3::zeros()) {
                    continue;
                }
            }
            let Some(t) = s.shape.intersect(&ray) else { continue };
            let p = ray.at(t);
            if !selector_accepts(&s.selector, visits[s.group], &p) {
                continue;
            }
            if best.is_none_or(|(_, bt, _)| t < bt) {
                best = Some((i, t, p));
            }
        }
        let Some((i, _, p)) = best else {
            return RayPath { hits, status: RayStatus::Missed };
        };
        let s = &surfaces[i];
        if s.aperture_radius.is_some_and(|r| p.x.hypot(p.y) > r) {
            return RayPath { hits, status: RayStatus::Escaped };
        }
        hits.push(Hit { surface: i, group: s.group, point: p });
        visits[s.group] += 1;
        let n = s.shape.normal_at(&p);
        let dir = (ray.dir - n * (2.0 * ray.dir.dot(&n))).normalize();
        ray = Ray3 { origin: p, dir };
        if s.group == opts.counted_group && opts.exit_below_x.is_some_and(|lim| p.x < lim) {
            return RayPath { hits, status: RayStatus::Exited };
        }
    }
    RayPath { hits, status: RayStatus::MaxHits }
}

pub fn trace_cell(surfaces: &[Surface3], rays: &[Ray3], opts: &TraceOptions) -> Result<TraceResult> {
    if surfaces.is_empty() {
        return Err(Error::Domain("no surfaces to trace".into()));
    }
    let n_groups = surfaces.iter().map(|s| s.group).max().unwrap_or(0) + 1;
    let paths = opts.exec.map(rays, |r| trace_one(surfaces, r, opts, n_groups));
    Ok(TraceResult::from_paths(paths, opts.counted_group))
}

/// Traces a recirculating cell until each ray passes below `x = −x0` on the M1 plane.
pub fn trace_recirculating(
    cfg: &RecirculatingCellConfig,
    n_rays: usize,
    seed: u64,
    assignment: MirrorAssignment,
    exec: Exec,
) -> Result<TraceResult> {
    let surfaces = recirculating_surfaces(cfg, assignment, None)?;
    let rays = sample_beam_rays(&cfg.beam, &EntryState::of(cfg), n_rays, seed)?;
    let opts = TraceOptions { max_hits: 20_000, counted_group: 0, exit_below_x: Some(-cfg.x0_mm), exec };
    trace_cell(&surfaces, &rays, &opts)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub n_reflections_trace: usize,
    pub n_reflections_analytic: usize,
    pub count_match: bool,
    pub compared_spots: usize,
    pub mean_error_mm: f64,
    pub max_error_mm: f64,
    /// Fraction of all (ray, spot) hits inside the analytic 1/e² radius.
    pub containment_fraction: f64,
    pub spot_errors_mm: Vec<f64>,
    pub spot_containment: Vec<f64>,
}

/// Centroid error and beam containment of a trace against analytic spots.
///
/// A reflection-count mismatch is reported in the result; the first
/// `min(n_trace, n_analytic)` spots are still compared.
pub fn compare_to_analytic(trace: &TraceResult, spots: &[SpotRecord]) -> Comparison {
    let n = trace.spots.len().min(spots.len());
    let mut spot_errors = Vec::with_capacity(n);
    for (t, s) in trace.spots.iter().zip(spots).take(n) {
        spot_errors.push((t.x_mm - s.x_mm).hypot(t.y_mm - s.y_mm));
    }
    let mut inside = vec![0usize; n];
    let mut total = vec![0usize; n];
    for path in &trace.paths {
        for (r, h) in path.counted(trace.counted_group).enumerate().take(n) {
            let s = &spots[r];
            total[r] += 1;
            if (h.point.x - s.x_mm).hypot(h.point.y - s.y_mm) <= s.w_xi_mm {
                inside[r] += 1;
            }
        }
    }
    let all_total: usize = total.iter().sum();
    let all_inside: usize = inside.iter().sum();
    let mean = if n == 0 { 0.0 } else { spot_errors.iter().sum::<f64>() / n as f64 };
    let max = spot_errors.iter().copied().fold(0.0, f64::max);
    Comparison {
        n_reflections_trace: trace.n_reflections,
        n_reflections_analytic: spots.len(),
        count_match: trace.n_reflections == spots.len(),
        compared_spots: n,
        mean_error_mm: mean,
        max_error_mm: max,
        containment_fraction: if all_total == 0 { 0.0 } else { all_inside as f64 / all_total as f64 },
        spot_errors_mm: spot_errors,
        spot_containment: inside.iter().zip(&total).map(|(&i, &t)| if t == 0 { 0.0 } else { i as f64 / t as f64 }).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn flat(z: f64, normal: Vector3<f64>, group: usize) -> Surface3 {
        Surface3 {
            name: format!("flat{z}"),
            shape: Shape::Plane { point: Vector3::new(0.0, 0.0, z), normal },
            group,
            selector: Selector::Always,
            aperture_radius: None,
        }
    }

    #[test]
    fn normal_incidence_reverses() {
        let s = [flat(0.0, Vector3::z(), 0)];
        let ray = Ray3::new(Vector3::new(0.0, 0.0, 5.0), -Vector3::z());
        let opts = TraceOptions { max_hits: 1, exec: Exec::Sequential, ..Default::default() };
        let out = trace_one(&s, &ray, &opts, 1);
        assert_eq!(out.hits.len(), 1);
        assert_eq!(out.status, RayStatus::MaxHits);
        // a second bounce finds nothing in front
        let opts = TraceOptions { max_hits: 2, ..opts };
        assert_eq!(trace_one(&s, &ray, &opts, 1).status, RayStatus::Missed);
    }

    #[test]
    fn parallel_mirrors_advance_linearly() {
        let s = [flat(0.0, Vector3::z(), 0), flat(10.0, -Vector3::z(), 1)];
        let ray = Ray3::new(Vector3::new(0.0, 0.0, 5.0), Vector3::new(0.01, 0.0, 1.0));
        let opts = TraceOptions { max_hits: 8, exec: Exec::Sequential, ..Default::default() };
        let out = trace_one(&s, &ray, &opts, 2);
        let xs: Vec<f64> = out.hits.iter().map(|h| h.point.x).collect();
        for w in xs.windows(2) {
            assert_relative_eq!(w[1] - w[0], 0.1, epsilon = 1e-12);
        }
    }

    #[test]
    fn tilted_plane_adds_twice_the_tilt() {
        let tilt = 0.02f64.to_radians();
        let s = [flat(0.0, Vector3::new(tilt.sin(), 0.0, tilt.cos()), 0)];
        let slope = 0.003;
        let ray = Ray3::new(Vector3::new(-slope, 0.0, 1.0), Vector3::new(slope, 0.0, -1.0));
        let opts = TraceOptions { max_hits: 1, exec: Exec::Sequential, ..Default::default() };
        let out = trace_one(&s, &ray, &opts, 1);
        let p = out.hits[0].point;
        let n = s[0].shape.normal_at(&p);
        let r = (ray.dir - n * (2.0 * ray.dir.dot(&n))).normalize();
        assert!((r.x / r.z - (slope + 2.0 * tilt)).abs() < 1e-8);
        // angle of incidence equals angle of reflection
        assert!((ray.dir.dot(&n) + r.dot(&n)).abs() < 1e-12);
    }

    #[test]
    fn sphere_root_selection() {
        let sphere = Shape::Sphere { center: Vector3::new(0.0, 0.0, -1900.0), radius: 2000.0 };
        let ray = Ray3::new(Vector3::zeros(), Vector3::z());
        let t = sphere.intersect(&ray).unwrap();
        assert_relative_eq!(t, 100.0, epsilon = 1e-9);
        assert!(sphere.residual(&ray.at(t)).abs() < 1e-9);
        let away = Ray3::new(Vector3::new(0.0, 0.0, 200.0), Vector3::z());
        assert!(sphere.intersect(&away).is_none());
    }

    #[test]
    fn cylinder_intersection() {
        let cyl = Shape::Cylinder { point: Vector3::new(0.0, 0.0, -90.0), axis: Vector3::y(), radius: 100.0 };
        let ray = Ray3::new(Vector3::new(0.0, 3.0, 0.0), Vector3::z());
        let t = cyl.intersect(&ray).unwrap();
        assert_relative_eq!(t, 10.0, epsilon = 1e-12);
        let n = cyl.normal_at(&ray.at(t));
        assert_relative_eq!(n, Vector3::z(), epsilon = 1e-12);
    }

    #[test]
    fn chief_ray_is_unjittered_and_seeded() {
        let beam = BeamSpec::new(780e-6, 1.0);
        let entry = EntryState { x_mm: 3.0, y_mm: 0.0, x_slope: 0.001, y_slope: 0.0 };
        let one = sample_beam_rays(&beam, &entry, 1, 9).unwrap();
        let r = one[0];
        assert!((r.origin.z - LAUNCH_DISTANCE).abs() < 1e-15);
        let target = r.at(LAUNCH_DISTANCE / r.dir.z.abs());
        assert!((target - Vector3::new(3.0, 0.0, 0.0)).norm() < 1e-12);
        let a = sample_beam_rays(&beam, &entry, 50, 9).unwrap();
        let b = sample_beam_rays(&beam, &entry, 50, 9).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, sample_beam_rays(&beam, &entry, 50, 10).unwrap());
        assert!(sample_beam_rays(&beam, &entry, 0, 1).is_err());
    }

    #[test]
    fn synthetic_trace_has_zero_error() {
        let cfg = crate::geometry::tests_support::fig2d();
        let spots = crate::geometry::spot_table(&cfg).unwrap();
        let cmp = compare_to_analytic(&TraceResult::from_spots(&spots), &spots);
        assert!(cmp.count_match);
        assert_eq!(cmp.mean_error_mm, 0.0);
        assert_eq!(cmp.max_error_mm, 0.0);
        assert_eq!(cmp.containment_fraction, 1.0);
    }

    #[test]
    fn mismatch_is_reported_not_fatal() {
        let cfg = crate::geometry::tests_support::fig2d();
        let spots = crate::geometry::spot_table(&cfg).unwrap();
        let trace = TraceResult::from_spots(&spots[..10]);
        let cmp = compare_to_analytic(&trace, &spots);
        assert!(!cmp.count_match);
        assert_eq!(cmp.compared_spots, 10);
    }
}
