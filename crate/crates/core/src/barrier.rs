//! Barrier profile `f`, the barrier `φ(t,x) = a(t)^p f(x/a(t))`, the rescaled
//! velocity `U`, the ratio `R = U f'/(-p f + z f')` and its infimum, and the
//! supersolution inequality.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::biot_savart::{self, KernelKind};
use crate::model::TailLaw;
use crate::quadrature::{self, QuadratureError, QuadratureSpec, SingularEnd};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BarrierError {
    #[error("invalid barrier: {0}")]
    Invalid(String),
    #[error("t = {t} lies beyond the singular time {t_singular}")]
    BeyondSingularTime { t: f64, t_singular: f64 },
    #[error("ratio denominator -p f + z f' = {value} is not positive at z = {z}")]
    NonPositiveDenominator { z: f64, value: f64 },
    #[error("the ratio limits are finite only for p = γ/2 (got γ = {gamma}, p = {p})")]
    NotCriticalExponent { gamma: f64, p: f64 },
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
    #[error(transparent)]
    Velocity(#[from] biot_savart::BiotSavartError),
}

pub type Result<T> = std::result::Result<T, BarrierError>;

/// `f(z) = (z+1)^p - 1`.
#[inline]
pub fn f_profile(z: f64, p: f64) -> f64 {
    (p * z.ln_1p()).exp_m1()
}

/// `f'(z) = p (z+1)^{p-1}`.
#[inline]
pub fn f_prime(z: f64, p: f64) -> f64 {
    p * ((p - 1.0) * z.ln_1p()).exp()
}

/// `φ = a^p f(x/a) = (x+a)^p - a^p`.
#[inline]
pub fn phi_value(a: f64, p: f64, x: f64) -> f64 {
    a.powf(p) * f_profile(x / a, p)
}

/// `φ_x = p (x+a)^{p-1}`.
#[inline]
pub fn phi_x(a: f64, p: f64, x: f64) -> f64 {
    p * (x + a).powf(p - 1.0)
}

/// `f` as a closed-form law on the whole half-line.
fn f_law(p: f64) -> TailLaw {
    TailLaw {
        coefficient: 1.0,
        exponent: p,
        shift: 1.0,
        offset: -1.0,
    }
}

/// `U(z) = ∫₀^∞ K(z,y) f(y) dy`, with `U(0) = 0`.
#[allow(non_snake_case)]
pub fn U_value(z: f64, gamma: f64, p: f64, spec: &QuadratureSpec) -> Result<f64> {
    if !(z >= 0.0) {
        return Err(BarrierError::Invalid(format!("U needs z ≥ 0, got {z}")));
    }
    if z == 0.0 {
        return Ok(0.0);
    }
    Ok(biot_savart::law_transform(&f_law(p), 0.0, z, gamma, KernelKind::Odd, spec)?)
}

/// `U'(0) = 2 ∫₀^∞ y^{-γ} f'(y) dy` by quadrature.
pub fn u_prime_zero(gamma: f64, p: f64, spec: &QuadratureSpec) -> Result<f64> {
    let g = |y: f64| f_prime(y, p);
    let head = quadrature::integrate_endpoint_singular(g, 0.0, 1.0, SingularEnd::Left, gamma, spec)?;
    let tail = quadrature::integrate_tail(|y| y.powf(-gamma) * f_prime(y, p), 1.0, 1.0 + gamma - p, spec)?;
    Ok(2.0 * (head + tail))
}

/// `C = ∫₀^∞ (|z-1|^{-γ} - (z+1)^{-γ}) z^p dz`, the growth constant of `U`.
#[allow(non_snake_case)]
pub fn U_asymptotic_coefficient(gamma: f64, p: f64, spec: &QuadratureSpec) -> Result<f64> {
    if !(p > 0.0 && p < gamma) {
        return Err(BarrierError::Invalid(format!("need 0 < p < γ, got p = {p}, γ = {gamma}")));
    }
    Ok(biot_savart::law_transform(&TailLaw::power(1.0, p), 0.0, 1.0, gamma, KernelKind::Odd, spec)?)
}

/// `-p f(z) + z f'(z) = p (1 - (1+z)^{p-1})`.
#[inline]
pub fn ratio_denominator(z: f64, p: f64) -> f64 {
    -p * ((p - 1.0) * z.ln_1p()).exp_m1()
}

/// `R(z) = U(z) f'(z) / (-p f(z) + z f'(z))`.
pub fn ratio(z: f64, gamma: f64, p: f64, spec: &QuadratureSpec) -> Result<f64> {
    let den = ratio_denominator(z, p);
    if !(den > 0.0) {
        return Err(BarrierError::NonPositiveDenominator { z, value: den });
    }
    Ok(U_value(z, gamma, p, spec)? * f_prime(z, p) / den)
}

/// Log-spaced scan range for [`compute_c`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanSpec {
    pub z_min: f64,
    pub z_max: f64,
    pub count: usize,
}

impl Default for ScanSpec {
    fn default() -> Self {
        Self {
            z_min: 1e-3,
            z_max: 1e3,
            count: 200,
        }
    }
}

impl ScanSpec {
    pub fn grid(&self) -> Vec<f64> {
        let (l0, l1) = (self.z_min.ln(), self.z_max.ln());
        let m = (self.count.max(2) - 1) as f64;
        (0..self.count.max(2))
            .map(|i| (l0 + (l1 - l0) * i as f64 / m).exp())
            .collect()
    }

    pub fn refined(&self, factor: usize) -> Self {
        Self {
            count: (self.count - 1) * factor + 1,
            ..*self
        }
    }
}

/// Result of scanning `R` on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioScan {
    pub gamma: f64,
    pub p: f64,
    pub z_grid: Vec<f64>,
    pub ratio_values: Vec<f64>,
    pub c_estimate: f64,
    pub limit_zero: f64,
    pub limit_infinity: f64,
}

/// Minimum of `R` over a log-spaced grid together with its limits at `0⁺`
/// and `∞`.
pub fn compute_c(gamma: f64, p: f64, scan: &ScanSpec, spec: &QuadratureSpec) -> Result<RatioScan> {
    if (p - 0.5 * gamma).abs() > 1e-12 {
        return Err(BarrierError::NotCriticalExponent { gamma, p });
    }
    if !(scan.z_min > 0.0 && scan.z_max > scan.z_min && scan.count >= 2) {
        return Err(BarrierError::Invalid(format!("bad scan range {scan:?}")));
    }
    let z_grid = scan.grid();
    let ratio_values = z_grid
        .par_iter()
        .map(|&z| ratio(z, gamma, p, spec))
        .collect::<Result<Vec<_>>>()?;
    let limit_zero = u_prime_zero(gamma, p, spec)? / (1.0 - p);
    let limit_infinity = U_asymptotic_coefficient(gamma, p, spec)?;
    let c_estimate = ratio_values
        .iter()
        .copied()
        .chain([limit_zero, limit_infinity])
        .fold(f64::INFINITY, f64::min);
    Ok(RatioScan {
        gamma,
        p,
        z_grid,
        ratio_values,
        c_estimate,
        limit_zero,
        limit_infinity,
    })
}

/// `T(a0) = a0^p / (p c0)`.
pub fn t_singular(a0: f64, c0: f64, p: f64) -> f64 {
    a0.powf(p) / (p * c0)
}

/// `(1 - a0^p)^{-1} - 1`.
pub fn margin_epsilon_min(a0: f64, p: f64) -> Result<f64> {
    if !(a0 > 0.0 && a0 < 1.0) {
        return Err(BarrierError::Invalid(format!("a0 = {a0} must lie in (0, 1)")));
    }
    let ap = a0.powf(p);
    Ok(ap / (1.0 - ap))
}

/// Scale law `ȧ = -c0 a^{1-p}`, `a(0) = a0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Barrier {
    pub a0: f64,
    pub c0: f64,
    pub p: f64,
    pub t_singular: f64,
}

impl Barrier {
    pub fn new(a0: f64, c0: f64, p: f64) -> Result<Self> {
        if !(a0 > 0.0 && a0 < 1.0) {
            return Err(BarrierError::Invalid(format!("a0 = {a0} must lie in (0, 1)")));
        }
        if !(c0 > 0.0 && c0.is_finite()) {
            return Err(BarrierError::Invalid(format!("c0 = {c0} must be positive")));
        }
        if !(p > 0.0 && p < 1.0) {
            return Err(BarrierError::Invalid(format!("p = {p} must lie in (0, 1)")));
        }
        Ok(Self {
            a0,
            c0,
            p,
            t_singular: t_singular(a0, c0, p),
        })
    }

    /// `a(t) = (a0^p - p c0 t)^{1/p}`.
    pub fn solve_a(&self, t: f64) -> Result<f64> {
        if !(t >= 0.0) || t > self.t_singular {
            return Err(BarrierError::BeyondSingularTime {
                t,
                t_singular: self.t_singular,
            });
        }
        if t == 0.0 {
            return Ok(self.a0);
        }
        let base = (self.a0.powf(self.p) - self.p * self.c0 * t).max(0.0);
        Ok(base.powf(1.0 / self.p))
    }

    /// `ȧ(t)`.
    pub fn a_dot(&self, t: f64) -> Result<f64> {
        Ok(-self.c0 * self.solve_a(t)?.powf(1.0 - self.p))
    }

    /// `φ(t, x)`; zero once `a` has reached zero is replaced by `x^p`.
    pub fn phi(&self, t: f64, x: f64) -> Result<f64> {
        let a = self.solve_a(t)?;
        if a == 0.0 {
            return Ok(x.powf(self.p));
        }
        Ok(phi_value(a, self.p, x))
    }
}

/// One failed sample of the supersolution inequality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupersolutionViolation {
    pub t: f64,
    pub z: f64,
    pub slack: f64,
}

/// Outcome of [`check_supersolution`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupersolutionReport {
    pub gamma: f64,
    pub p: f64,
    pub c0: f64,
    pub min_slack: f64,
    /// Largest spread over `t` of the slack at a fixed `z`.
    pub slack_t_spread: f64,
    /// Largest value of `φ_t + u[φ]φ_x` over the samples (negative on success).
    pub max_pde_residual: f64,
    pub violations: Vec<SupersolutionViolation>,
    pub passed: bool,
}

/// `t` samples used by default: 16 points on `[0, 0.99 T]`.
pub fn default_t_samples(barrier: &Barrier) -> Vec<f64> {
    (0..16).map(|i| 0.99 * barrier.t_singular * i as f64 / 15.0).collect()
}

/// Checks `c0 a^{1-p} < a^{1-γ+p} R(z)` at every `(t, z)` sample.
///
/// The slack is reported as `a^{(1-γ+p)-(1-p)} R(z) - c0`, which does not
/// depend on `t` when `p = γ/2`.
pub fn check_supersolution(
    barrier: &Barrier,
    gamma: f64,
    p: f64,
    t_samples: &[f64],
    z_samples: &[f64],
    spec: &QuadratureSpec,
) -> Result<SupersolutionReport> {
    let rz: Vec<(f64, f64)> = z_samples
        .par_iter()
        .map(|&z| Ok((U_value(z, gamma, p, spec)?, ratio(z, gamma, p, spec)?)))
        .collect::<Result<Vec<_>>>()?;
    let scale_expo = (1.0 - gamma + p) - (1.0 - p);
    let mut min_slack = f64::INFINITY;
    let mut max_pde_residual = f64::NEG_INFINITY;
    let mut violations = Vec::new();
    let mut per_z_min = vec![f64::INFINITY; z_samples.len()];
    let mut per_z_max = vec![f64::NEG_INFINITY; z_samples.len()];
    for &t in t_samples {
        let a = barrier.solve_a(t)?;
        let a_dot = barrier.a_dot(t)?;
        for (j, (&z, &(u, r))) in z_samples.iter().zip(&rz).enumerate() {
            let slack = a.powf(scale_expo) * r - barrier.c0;
            per_z_min[j] = per_z_min[j].min(slack);
            per_z_max[j] = per_z_max[j].max(slack);
            min_slack = min_slack.min(slack);
            let residual = a_dot * a.powf(p - 1.0) * (p * f_profile(z, p) - z * f_prime(z, p))
                - a.powf(2.0 * p - gamma) * u * f_prime(z, p);
            max_pde_residual = max_pde_residual.max(residual);
            if !(slack > 0.0) {
                violations.push(SupersolutionViolation { t, z, slack });
            }
        }
    }
    let slack_t_spread = per_z_min
        .iter()
        .zip(&per_z_max)
        .map(|(lo, hi)| hi - lo)
        .fold(0.0, f64::max);
    Ok(SupersolutionReport {
        gamma,
        p,
        c0: barrier.c0,
        min_slack,
        slack_t_spread,
        max_pde_residual,
        passed: violations.is_empty(),
        violations,
    })
}
