//! Monte Carlo oracle for the diffusion correlation.
//!
//! Atoms start at a point drawn from the beam intensity, diffuse for τ, and are
//! scored by the intensity at the end point. The ratio of the mean end-point
//! intensity to the mean start-point intensity estimates `C_d(τ)` without any
//! closed-form Gaussian overlap.



use nalgebra::Matrix2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{cm2_to_mm2, Longitudinal, PassSegment};
use crate::{Error, Exec, Result};

const CHUNK: usize = 8192;

pub const MIN_SAMPLES: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub value: f64,
    pub std_error: f64,
    pub samples: usize,
}

#[derive(Default, Clone, Copy)]
struct Sums {
    n: f64,
    x: f64,
    y: f64,
    xx: f64,
    yy: f64,
    xy: f64,
}

impl Sums {
    fn push(&mut self, x: f64, y: f64) {
        self.n += 1.0;
        self.x += x;
        self.y += y;
        self.xx += x * x;
        self.yy += y * y;
        self.xy += x * y;
    }

    fn merge(mut self, o: Sums) -> Sums {
        self.n += o.n;
        self.x += o.x;
        self.y += o.y;
        self.xx += o.xx;
        self.yy += o.yy;
        self.xy += o.xy;
        self
    }

    /// Ratio of means with its delta-method standard error.
    fn ratio(&self) -> (f64, f64) {
        let n = self.n;
        let (mx, my) = (self.x / n, self.y / n);
        let r = mx / my;
        let vxx = self.xx / n - mx * mx;
        let vyy = self.yy / n - my * my;
        let vxy = self.xy / n - mx * my;
        let var = (vxx - 2.0 * r * vxy + r * r * vyy) / (my * my) / (n - 1.0).max(1.0);
        (r, var.max(0.0).sqrt())
    }
}

/// Lower Cholesky factor of `(2β)⁻¹`.
fn start_factor(beta: &Matrix2<f64>) -> Option<(f64, f64, f64)> {
    let cov = (beta * 2.0).try_inverse()?;
    let l11 = cov[(0, 0)].sqrt();
    let l21 = cov[(1, 0)] / l11;
    let l22 = (cov[(1, 1)] - l21 * l21).sqrt();
    (l11.is_finite() && l22.is_finite()).then_some((l11, l21, l22))
}

struct Domain {
    /// (segment, lo, hi, cumulative length at hi)
    pieces: Vec<(usize, f64, f64, f64)>,
    total: f64,
}

impl Domain {
    fn new(segments: &[PassSegment]) -> Self {
        let mut pieces = Vec::new();
        let mut cum = 0.0;
        for (i, s) in segments.iter().enumerate() {
            for (a, b) in s.allowed() {
                cum += b - a;
                pieces.push((i, a, b, cum));
            }
        }
        Domain { pieces, total: cum }
    }

    fn locate(&self, u: f64) -> (usize, f64) {
        let t = u * self.total;
        let k = self.pieces.partition_point(|p| p.3 <= t).min(self.pieces.len() - 1);
        let (seg, a, b, cum) = self.pieces[k];
        (seg, (b - (cum - t)).clamp(a, b))
    }
}

/// Monte Carlo estimate of `C_d(τ)`; `stream` separates the random streams of different τ.
#[allow(clippy::too_many_arguments)]
fn estimate(
    segments: &[PassSegment],
    d_mm2: f64,
    tau: f64,
    samples: usize,
    seed: u64,
    stream: u64,
    longitudinal: Longitudinal,
    exec: Exec,
) -> Result<McEstimate> {
    let domain = Domain::new(segments);
    if domain.total <= 0.0 {
        return Err(Error::Domain("no allowed path length".into()));
    }
    let sigma = (2.0 * d_mm2 * tau).sqrt();
    let chunks = samples.div_ceil(CHUNK);
    let run = |c: usize| -> Result<Sums> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream.wrapping_mul(1 << 32).wrapping_add(c as u64));
        let n = CHUNK.min(samples - c * CHUNK);
        let mut sums = Sums::default();
        for _ in 0..n {
            let (si, z1) = domain.locate(rng.random::<f64>());
            let seg = &segments[si];
            let s1 = seg.slice(z1)?;
            let (l11, l21, l22) = start_factor(&s1.beta).ok_or(Error::Singular)?;
            let (g1, g2): (f64, f64) = (rng.sample(StandardNormal), rng.sample(StandardNormal));
            let (x1, y1) = (l11 * g1, l21 * g1 + l22 * g2);
            let (d1, d2, d3): (f64, f64, f64) =
                (rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal));
            let (x2, y2) = (x1 + sigma * d1, y1 + sigma * d2);
            // weight by the slice power, since z is drawn uniformly
            let w = s1.power();
            let y = w * s1.at(x1, y1);
            let x = match longitudinal {
                Longitudinal::Local => w * s1.at(x2, y2),
                Longitudinal::FullKernel => {
                    let z2 = z1 + sigma * d3;
                    if seg.contains(z2) {
                        w * seg.slice(z2)?.at(x2, y2)
                    } else {
                        0.0
                    }
                }
            };
            sums.push(x, y);
        }
        Ok(sums)
    };
    let parts = exec.try_map_range(chunks, run)?;
    let sums = parts.into_iter().fold(Sums::default(), Sums::merge);
    let (value, std_error) = sums.ratio();
    Ok(McEstimate { value, std_error, samples })
}

/// Monte Carlo `C_d(τ)` with a ChaCha stream per chunk, so results do not depend on thread count.
pub fn cd_monte_carlo(
    segments: &[PassSegment],
    d_cm2_s: f64,
    tau: f64,
    samples: usize,
    seed: u64,
    longitudinal: Longitudinal,
    exec: Exec,
) -> Result<McEstimate> {
    check(segments, d_cm2_s, tau, samples)?;
    estimate(segments, cm2_to_mm2(d_cm2_s), tau, samples, seed, 0, longitudinal, exec)
}

/// Monte Carlo `C_d` on a τ grid; point `i` uses its own family of streams.
pub fn cd_monte_carlo_grid(
    segments: &[PassSegment],
    d_cm2_s: f64,
    taus: &[f64],
    samples: usize,
    seed: u64,
    longitudinal: Longitudinal,
    exec: Exec,
) -> Result<Vec<McEstimate>> {
    for &t in taus {
        check(segments, d_cm2_s, t, samples)?;
    }
    taus.iter()
        .enumerate()
        .map(|(i, &t)| estimate(segments, cm2_to_mm2(d_cm2_s), t, samples, seed, i as u64, longitudinal, exec))
        .collect()
}

fn check(segments: &[PassSegment], d_cm2_s: f64, tau: f64, samples: usize) -> Result<()> {
    if segments.is_empty() {
        return Err(Error::Domain("no pass segments".into()));
    }
    if samples < MIN_SAMPLES {
        return Err(Error::Domain(format!("Monte Carlo needs at least {MIN_SAMPLES} samples, got {samples}")));
    }
    if !(d_cm2_s > 0.0 && tau >= 0.0 && tau.is_finite()) {
        return Err(Error::Domain(format!("bad diffusion inputs D = {d_cm2_s}, τ = {tau}")));
    }
    Ok(())
}

