//! Closed-form diffusion kernels and Poisson counting statistics.
//!
//! The Green's function of free 3D diffusion is used with `4·D·t` in the
//! exponent. Observation probabilities come in two flavours: the uniform
//! concentration approximation (center value times volume) used by the
//! analytics for distinct nodes, and the exact Gaussian mass inside a ball,
//! which the particle engine needs and which reduces to the self-observation
//! kernel when the emitter sits at the observer center.

use std::f64::consts::{FRAC_2_SQRT_PI, PI, SQRT_2};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use statrs::function::erf::{erf, erfc};
use statrs::function::gamma::{gamma_ur, ln_gamma};

use crate::error::{Error, Result};

/// Molecules per cubic meter.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct Concentration(f64);

impl Concentration {
    pub fn value(self) -> f64 {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct ObservationProbability(f64);

impl ObservationProbability {
    /// Clamps into `[0, 1]`.
    pub fn new(p: f64) -> Self {
        Self(p.clamp(0.0, 1.0))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

fn check_time(t: f64) -> Result<()> {
    if t.is_finite() && t > 0.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("time must be > 0, got {t}")))
    }
}

fn check_diffusion(d: f64) -> Result<()> {
    if d.is_finite() && d > 0.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("diffusion coefficient must be > 0, got {d}")))
    }
}

fn check_length(name: &str, x: f64) -> Result<()> {
    if x.is_finite() && x >= 0.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("{name} must be finite and >= 0, got {x}")))
    }
}

fn gaussian_kernel(d: f64, dist: f64, t: f64) -> f64 {
    let four_dt = 4.0 * d * t;
    (PI * four_dt).powf(-1.5) * (-dist * dist / four_dt).exp()
}

/// Concentration at distance `dist` and time `t` after an impulsive release
/// of `n` molecules from a point in unbounded space.
pub fn point_source_concentration(n: u64, d: f64, dist: f64, t: f64) -> Result<Concentration> {
    check_time(t)?;
    check_diffusion(d)?;
    check_length("distance", dist)?;
    Ok(Concentration(n as f64 * gaussian_kernel(d, dist, t)))
}

/// Probability that a single molecule is inside an observer of volume
/// `volume` whose center is `dist` away, under the uniform concentration
/// approximation. Only meaningful when `dist` is several observer radii.
pub fn observation_probability(volume: f64, d: f64, dist: f64, t: f64) -> Result<ObservationProbability> {
    check_time(t)?;
    check_diffusion(d)?;
    check_length("distance", dist)?;
    check_length("volume", volume)?;
    Ok(ObservationProbability::new(volume * gaussian_kernel(d, dist, t)))
}

/// Probability that a molecule released at the center of a sphere of radius
/// `radius` is inside that sphere at time `t`.
pub fn self_observation_probability(radius: f64, d: f64, t: f64) -> Result<ObservationProbability> {
    check_time(t)?;
    check_diffusion(d)?;
    if !(radius.is_finite() && radius > 0.0) {
        return Err(Error::Domain(format!("radius must be > 0, got {radius}")));
    }
    Ok(ObservationProbability::new(centered_ball_mass(radius / (2.0 * (d * t).sqrt()))))
}

/// `erf(x) - 2x·exp(-x²)/√π`, the Gaussian mass of a centered ball in units
/// where `x = r/(2√(Dt))`.
fn centered_ball_mass(x: f64) -> f64 {
    if x >= 0.2 {
        erf(x) - FRAC_2_SQRT_PI * x * (-x * x).exp()
    } else {
        // (4/√π)·Σ (-1)^n x^(2n+3) / (n!(2n+3))
        let x2 = x * x;
        let mut term = x2 * x;
        let mut sum = 0.0;
        for n in 0..30 {
            let contrib = term / (2 * n + 3) as f64;
            sum += contrib;
            if contrib.abs() < 1e-18 * sum.abs() {
                break;
            }
            term *= -x2 / (n + 1) as f64;
        }
        2.0 * FRAC_2_SQRT_PI * sum
    }
}

/// Exact probability that a molecule released at distance `dist` from the
/// center of a sphere of radius `radius` is inside the sphere at time `t`.
///
/// Equals [`self_observation_probability`] at `dist = 0` and tends to
/// [`observation_probability`] when `radius` is small compared to both
/// `dist` and the diffusion length.
pub fn ball_observation_probability(radius: f64, d: f64, dist: f64, t: f64) -> Result<ObservationProbability> {
    check_time(t)?;
    check_diffusion(d)?;
    check_length("distance", dist)?;
    check_length("radius", radius)?;
    if radius == 0.0 {
        return Ok(ObservationProbability::new(0.0));
    }
    let sigma = (2.0 * d * t).sqrt();
    Ok(ObservationProbability::new(ball_mass(radius, dist, sigma)))
}

/// Mass of an isotropic Gaussian (per-axis std `sigma`) inside a ball of
/// radius `a` whose center is `dist` from the Gaussian mean.
pub(crate) fn ball_mass(a: f64, dist: f64, sigma: f64) -> f64 {
    if dist == 0.0 {
        return centered_ball_mass(a / (SQRT_2 * sigma));
    }
    if a < 2.0 * sigma {
        return radial_quadrature(a, dist, sigma);
    }
    let s = SQRT_2 * sigma;
    let erf_part = if dist > a {
        0.5 * (erfc((dist - a) / s) - erfc((dist + a) / s))
    } else {
        0.5 * (erf((a - dist) / s) + erf((a + dist) / s))
    };
    let g = |u: f64| (-u * u / (2.0 * sigma * sigma)).exp();
    let exp_part = sigma / (dist * (2.0 * PI).sqrt()) * (g(dist - a) - g(dist + a));
    (erf_part - exp_part).max(0.0)
}

/// ∫₀ᵃ r/(d·σ√(2π)) · [exp(-(r-d)²/2σ²) - exp(-(r+d)²/2σ²)] dr, evaluated
/// with Gauss-Legendre. Avoids the cancellation of the closed form when the
/// ball is small against the spread.
fn radial_quadrature(a: f64, dist: f64, sigma: f64) -> f64 {
    let (nodes, weights) = gauss_legendre_32();
    let s2 = 2.0 * sigma * sigma;
    let norm = 1.0 / (dist * sigma * (2.0 * PI).sqrt());
    let half = 0.5 * a;
    let mut sum = 0.0;
    for (x, w) in nodes.iter().zip(weights) {
        let r = half * (x + 1.0);
        let near = (-(r - dist) * (r - dist) / s2).exp();
        let f = r * near * -(-2.0 * r * dist / (sigma * sigma)).exp_m1();
        sum += w * f;
    }
    sum * half * norm
}

fn gauss_legendre_32() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(32))
}

fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..(n + 1) / 2 {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// `Pr(X < xi)` for `X ~ Poisson(mean)`; counts are integers so the sum runs
/// to `ceil(xi) - 1`.
pub fn poisson_cdf_below(mean: f64, xi: f64) -> Result<f64> {
    if !(mean >= 0.0) || mean.is_infinite() {
        return Err(Error::Domain(format!("Poisson mean must be finite and >= 0, got {mean}")));
    }
    if xi.is_nan() {
        return Err(Error::Domain("threshold is NaN".into()));
    }
    if xi <= 0.0 {
        return Ok(0.0);
    }
    if mean == 0.0 {
        return Ok(1.0);
    }
    let upper = xi.ceil();
    if upper > 1e4 {
        return Ok(gamma_ur(upper, mean).clamp(0.0, 1.0));
    }
    let last = upper as u64 - 1;
    Ok(poisson_cdf_upto(mean, last))
}

/// `Pr(X <= last)`, summed outward from the largest term in log space.
fn poisson_cdf_upto(mean: f64, last: u64) -> f64 {
    let peak = (mean.floor() as u64).min(last);
    let ln_mean = mean.ln();
    let log_peak = -mean + peak as f64 * ln_mean - ln_gamma(peak as f64 + 1.0);
    if log_peak < -745.0 - 40.0 {
        return if peak == last && (last as f64) < mean { 0.0 } else { 1.0 };
    }
    let mut sum = 1.0;
    let mut term = 1.0;
    for w in (0..peak).rev() {
        term *= (w + 1) as f64 / mean;
        sum += term;
        if term < 1e-17 * sum {
            break;
        }
    }
    term = 1.0;
    for w in peak + 1..=last {
        term *= mean / w as f64;
        sum += term;
        if term < 1e-17 * sum {
            break;
        }
    }
    (log_peak.exp() * sum).clamp(0.0, 1.0)
}
