//! Velocity `u[ω](x) = -∫₀^∞ K(x,y) ω(y) dy`, its derivative, and the
//! regularized velocity `v_ε[ω]`.
//!
//! Profiles are piecewise Hermite cubics, so on pieces close to the singular
//! point the kernel is integrated against the cubic in closed form (power
//! moments). Distant pieces use Gauss-Legendre rules whose order follows the
//! distance to the nearest singularity. The algebraic tail is handled by the
//! adaptive routines of [`crate::quadrature`].

use rayon::prelude::*;
use thiserror::Error;

use crate::model::{EvenProfile, OddProfile, SampledProfile, TailLaw};
use crate::quadrature::{
    self, gauss_legendre, geometric_breaks, order_for_distance, QuadratureError, QuadratureSpec, SingularEnd,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BiotSavartError {
    #[error("negative argument {0}")]
    NegativeArgument(f64),
    #[error("kernel exponent γ = {0} outside (0, 1)")]
    InvalidGamma(f64),
    #[error("tail grows like y^{growth}, velocity integral needs growth < γ = {gamma}")]
    DivergentTail { growth: f64, gamma: f64 },
    #[error("invalid regularized kernel: {0}")]
    InvalidKernel(String),
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
}

pub type Result<T> = std::result::Result<T, BiotSavartError>;

/// Which combination of `|x-y|^{-γ}` and `(x+y)^{-γ}` is integrated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelKind {
    /// `|x-y|^{-γ} - (x+y)^{-γ}`, for odd data.
    Odd,
    /// `|x-y|^{-γ} + (x+y)^{-γ}`, for even data.
    Even,
}

impl KernelKind {
    #[inline]
    fn image_sign(self) -> f64 {
        match self {
            KernelKind::Odd => -1.0,
            KernelKind::Even => 1.0,
        }
    }
}

/// `K(x,y) = |y-x|^{-γ} - (x+y)^{-γ}` for `x, y ≥ 0`.
///
/// Far from the diagonal it is evaluated as
/// `(x+y)^{-γ} expm1(2γ atanh(min/max))`, free of cancellation.
#[inline]
pub fn kernel(x: f64, y: f64, gamma: f64) -> f64 {
    let (lo, hi) = if x < y { (x, y) } else { (y, x) };
    if lo == 0.0 {
        return 0.0;
    }
    if lo == hi {
        return f64::INFINITY;
    }
    let r = lo / hi;
    if r < 0.5 {
        (x + y).powf(-gamma) * (2.0 * gamma * r.atanh()).exp_m1()
    } else {
        (hi - lo).powf(-gamma) - (x + y).powf(-gamma)
    }
}

/// `|y-x|^{-γ} + (x+y)^{-γ}`.
#[inline]
pub fn kernel_sum(x: f64, y: f64, gamma: f64) -> f64 {
    (y - x).abs().powf(-gamma) + (x + y).powf(-gamma)
}

#[inline]
fn kernel_of(kind: KernelKind, x: f64, y: f64, gamma: f64) -> f64 {
    match kind {
        KernelKind::Odd => kernel(x, y, gamma),
        KernelKind::Even => kernel_sum(x, y, gamma),
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(BiotSavartError::InvalidGamma(gamma));
    }
    Ok(())
}

/// Smoothing profile: `3/4` on `[0, 3/4]`, `z` on `[1, ∞)`, and the quintic
/// `3/4 + P(s)/4`, `P(s) = 6s³ - 8s⁴ + 3s⁵`, `s = 4z - 3`, in between.
pub fn eta(z: f64) -> Result<f64> {
    if !(z >= 0.0) {
        return Err(BiotSavartError::NegativeArgument(z));
    }
    Ok(eta_unchecked(z))
}

#[inline]
fn eta_unchecked(z: f64) -> f64 {
    if z <= 0.75 {
        0.75
    } else if z >= 1.0 {
        z
    } else {
        let s = 4.0 * z - 3.0;
        0.75 + 0.25 * s * s * s * (6.0 + s * (-8.0 + 3.0 * s))
    }
}

/// `k_ε(z) = (ε η(|z|/ε))^{-γ}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegKernel {
    pub reg_epsilon: f64,
    pub gamma: f64,
}

impl RegKernel {
    pub fn new(reg_epsilon: f64, gamma: f64) -> Result<Self> {
        if !(reg_epsilon > 0.0 && reg_epsilon.is_finite()) {
            return Err(BiotSavartError::InvalidKernel(format!(
                "reg_epsilon = {reg_epsilon} must be positive"
            )));
        }
        check_gamma(gamma)?;
        Ok(Self { reg_epsilon, gamma })
    }

    #[inline]
    pub fn eval(&self, z: f64) -> f64 {
        let a = z.abs();
        if a >= self.reg_epsilon {
            return a.powf(-self.gamma);
        }
        (self.reg_epsilon * eta_unchecked(a / self.reg_epsilon)).powf(-self.gamma)
    }

    /// Value on the plateau `|z| ≤ 3ε/4`.
    pub fn plateau(&self) -> f64 {
        (0.75 * self.reg_epsilon).powf(-self.gamma)
    }
}

// Pieces at normalized distance below this use closed-form moments.
const NEAR: f64 = 1.5;
// Gauss order on the bounded, regularized segments.
const REG_ORDER: usize = 16;

#[inline]
fn horner(c: &[f64; 4], t: f64) -> f64 {
    c[0] + t * (c[1] + t * (c[2] + t * c[3]))
}

// Coefficients about `s` of the cubic `Σ c_k (y - y0)^k`.
#[inline]
fn shift_coefficients(c: &[f64; 4], y0: f64, s: f64) -> [f64; 4] {
    let d = s - y0;
    [
        horner(c, d),
        c[1] + d * (2.0 * c[2] + 3.0 * c[3] * d),
        c[2] + 3.0 * c[3] * d,
        c[3],
    ]
}

// ∫_0^t τ^k |τ|^{-γ} dτ
#[inline]
fn signed_moment(k: usize, t: f64, gamma: f64) -> f64 {
    if t == 0.0 {
        return 0.0;
    }
    let a = t.abs();
    let e = (k + 1) as f64 - gamma;
    let v = a.powf(1.0 - gamma) * a.powi(k as i32) / e;
    if t < 0.0 && k.is_multiple_of(2) {
        -v
    } else {
        v
    }
}

// ∫_{t0}^{t1} Σ c_k τ^k |τ|^{-γ} dτ
#[inline]
fn power_moments(c: &[f64; 4], t0: f64, t1: f64, gamma: f64) -> f64 {
    (0..4)
        .map(|k| c[k] * (signed_moment(k, t1, gamma) - signed_moment(k, t0, gamma)))
        .sum()
}

/// Piecewise-cubic data prepared for repeated kernel integrals.
#[derive(Debug, Clone)]
struct Pieces {
    y0: Vec<f64>,
    y1: Vec<f64>,
    coef: Vec<[f64; 4]>,
    tail: TailLaw,
    x_last: f64,
}

impl Pieces {
    fn new(profile: &SampledProfile) -> Self {
        let n = profile.len() - 1;
        let mut y0 = Vec::with_capacity(n);
        let mut y1 = Vec::with_capacity(n);
        let mut coef = Vec::with_capacity(n);
        for piece in profile.pieces() {
            y0.push(piece.y0);
            y1.push(piece.y1);
            coef.push(piece.local_coefficients());
        }
        Self {
            y0,
            y1,
            coef,
            tail: *profile.tail(),
            x_last: profile.x_last(),
        }
    }

    // ∫_lo^hi P_i(y) K(x,y) dy for [lo, hi] inside piece i.
    fn segment(&self, i: usize, lo: f64, hi: f64, x: f64, gamma: f64, kind: KernelKind) -> f64 {
        let c = &self.coef[i];
        let y0 = self.y0[i];
        let half = 0.5 * (hi - lo);
        let mid = lo + half;
        let d_dir = (mid - x).abs() / half;
        if d_dir >= NEAR {
            let rule = gauss_legendre(order_for_distance(d_dir));
            return rule.integrate(|y| horner(c, y - y0) * kernel_of(kind, x, y, gamma), lo, hi);
        }
        let direct = power_moments(&shift_coefficients(c, y0, x), lo - x, hi - x, gamma);
        let d_img = (mid + x) / half;
        let image = if d_img >= NEAR {
            let rule = gauss_legendre(order_for_distance(d_img));
            rule.integrate(|y| horner(c, y - y0) * (x + y).powf(-gamma), lo, hi)
        } else {
            power_moments(&shift_coefficients(c, y0, -x), lo + x, hi + x, gamma)
        };
        direct + kind.image_sign() * image
    }

    fn transform(&self, x: f64, gamma: f64, kind: KernelKind, spec: &QuadratureSpec) -> Result<f64> {
        let mut sum = 0.0;
        for i in 0..self.coef.len() {
            sum += self.segment(i, self.y0[i], self.y1[i], x, gamma, kind);
        }
        let tail_spec = tail_spec(spec, x, kind);
        Ok(sum + law_transform(&self.tail, self.x_last, x, gamma, kind, &tail_spec)?)
    }

    fn regularized_segment(&self, i: usize, lo: f64, hi: f64, x: f64, k: &RegKernel) -> f64 {
        let mid = 0.5 * (lo + hi);
        let eps = k.reg_epsilon;
        if (mid - x).abs() >= eps && mid + x >= eps {
            return self.segment(i, lo, hi, x, k.gamma, KernelKind::Odd);
        }
        let c = &self.coef[i];
        let y0 = self.y0[i];
        gauss_legendre(REG_ORDER).integrate(|y| horner(c, y - y0) * (k.eval(x - y) - k.eval(x + y)), lo, hi)
    }

    fn regularized(&self, x: f64, k: &RegKernel, spec: &QuadratureSpec) -> Result<f64> {
        let eps = k.reg_epsilon;
        let breaks = regularization_breaks(x, eps);
        let mut sum = 0.0;
        for i in 0..self.coef.len() {
            let (lo, hi) = (self.y0[i], self.y1[i]);
            if lo >= x + eps || (hi <= x - eps && lo + x >= eps) {
                sum += self.segment(i, lo, hi, x, k.gamma, KernelKind::Odd);
                continue;
            }
            let mut a = lo;
            for &b in breaks.iter().filter(|&&b| b > lo && b < hi) {
                sum += self.regularized_segment(i, a, b, x, k);
                a = b;
            }
            sum += self.regularized_segment(i, a, hi, x, k);
        }
        let spec = tail_spec(spec, x, KernelKind::Odd);
        let tail = &self.tail;
        if x + eps <= self.x_last {
            return Ok(sum + law_transform(tail, self.x_last, x, k.gamma, KernelKind::Odd, &spec)?);
        }
        let mut a = self.x_last;
        let end = x + eps;
        let g = |y: f64| tail.eval(y) * (k.eval(x - y) - k.eval(x + y));
        for &b in breaks.iter().filter(|&&b| b > self.x_last && b < end) {
            sum += quadrature::integrate_smooth(g, a, b, &spec)?;
            a = b;
        }
        sum += quadrature::integrate_smooth(g, a, end, &spec)?;
        Ok(sum + law_transform(tail, end, x, k.gamma, KernelKind::Odd, &spec)?)
    }
}

// Points where either k_ε(x-y) or k_ε(x+y) changes formula, sorted.
fn regularization_breaks(x: f64, eps: f64) -> Vec<f64> {
    let mut b: Vec<f64> = [
        x - eps,
        x - 0.75 * eps,
        x + 0.75 * eps,
        x + eps,
        eps - x,
        0.75 * eps - x,
    ]
    .into_iter()
    .filter(|&b| b > 0.0)
    .collect();
    b.sort_by(f64::total_cmp);
    b.dedup();
    b
}

// The tail integrals of odd data scale like x near the origin.
fn tail_spec(spec: &QuadratureSpec, x: f64, kind: KernelKind) -> QuadratureSpec {
    match kind {
        KernelKind::Odd => spec.with_abs_tol(spec.abs_tol * x.clamp(1e-12, 1.0)),
        KernelKind::Even => *spec,
    }
}

/// `∫_{r0}^∞ K(x,y) T(y) dy` for a closed-form law `T`, with `K` the odd or
/// even kernel.
pub fn law_transform(law: &TailLaw, r0: f64, x: f64, gamma: f64, kind: KernelKind, spec: &QuadratureSpec) -> Result<f64> {
    check_gamma(gamma)?;
    if !(r0 >= 0.0) {
        return Err(BiotSavartError::NegativeArgument(r0));
    }
    if !(x >= 0.0) {
        return Err(BiotSavartError::NegativeArgument(x));
    }
    check_law_decay(law, gamma, kind)?;
    if law.is_zero() || (kind == KernelKind::Odd && x == 0.0) {
        return Ok(0.0);
    }
    if r0 > 0.0 && x <= 0.5 * r0 {
        return far_law(law, r0, x, gamma, kind, spec);
    }
    let g = |y: f64| law.eval(y);
    if x == 0.0 {
        // Even kernel at the origin: 2 y^{-γ}.
        let head = quadrature::integrate_endpoint_singular(g, 0.0, 1.0, SingularEnd::Left, gamma, spec)?;
        return Ok(2.0 * head + far_law(law, 1.0, 0.0, gamma, kind, spec)?);
    }
    let r1 = 2.0 * x.max(r0);
    let direct = if x <= r0 {
        quadrature::integrate_endpoint_singular(g, x, r1, SingularEnd::Left, gamma, spec)?
            - quadrature::integrate_endpoint_singular(g, x, r0, SingularEnd::Left, gamma, spec)?
    } else {
        quadrature::integrate_endpoint_singular(g, r0, x, SingularEnd::Right, gamma, spec)?
            + quadrature::integrate_endpoint_singular(g, x, r1, SingularEnd::Left, gamma, spec)?
    };
    let image = quadrature::integrate_smooth(|y| g(y) * (x + y).powf(-gamma), r0, r1, spec)?;
    Ok(direct + kind.image_sign() * image + far_law(law, r1, x, gamma, kind, spec)?)
}

fn kernel_decay(gamma: f64, kind: KernelKind) -> f64 {
    match kind {
        KernelKind::Odd => 1.0 + gamma,
        KernelKind::Even => gamma,
    }
}

fn check_law_decay(law: &TailLaw, gamma: f64, kind: KernelKind) -> Result<()> {
    let growth = law.growth();
    if growth.is_finite() && !(kernel_decay(gamma, kind) - growth > 1.0) {
        return Err(BiotSavartError::DivergentTail { growth, gamma });
    }
    Ok(())
}

// Kernel integral over [r, ∞) with x ≤ r/2, where the kernel is smooth.
fn far_law(law: &TailLaw, r: f64, x: f64, gamma: f64, kind: KernelKind, spec: &QuadratureSpec) -> Result<f64> {
    weighted_law_tail(
        law,
        r,
        x + law.shift.abs(),
        |y| kernel_of(kind, x, y, gamma),
        kernel_decay(gamma, kind),
        spec,
    )
}

/// `∫_r^∞ w(y) T(y) dy` with `w(y) ~ y^{-decay}`; `scale` marks where the
/// integrand stops varying on its own scale.
fn weighted_law_tail<W: Fn(f64) -> f64>(
    law: &TailLaw,
    r: f64,
    scale: f64,
    w: W,
    decay: f64,
    spec: &QuadratureSpec,
) -> Result<f64> {
    let l = r.max(16.0 * scale);
    let mut total = 0.0;
    if l > r {
        for seg in geometric_breaks(r, l, 4.0).windows(2) {
            total += quadrature::integrate_smooth(|y| w(y) * law.eval(y), seg[0], seg[1], spec)?;
        }
    }
    if law.coefficient != 0.0 {
        let (a, q, b) = (law.coefficient, law.exponent, law.shift);
        total += quadrature::integrate_tail(|y| w(y) * a * (y + b).powf(q), l, decay - q, spec)?;
    }
    if law.offset != 0.0 {
        let c = law.offset;
        total += quadrature::integrate_tail(|y| w(y) * c, l, decay, spec)?;
    }
    Ok(total)
}

/// Repeated velocity evaluations against one profile.
#[derive(Debug, Clone)]
pub struct VelocityOperator {
    pieces: Pieces,
    gamma: f64,
    spec: QuadratureSpec,
}

impl VelocityOperator {
    pub fn new(omega: &OddProfile, gamma: f64, spec: &QuadratureSpec) -> Result<Self> {
        check_gamma(gamma)?;
        check_law_decay(omega.tail(), gamma, KernelKind::Odd)?;
        Ok(Self {
            pieces: Pieces::new(omega),
            gamma,
            spec: *spec,
        })
    }

    /// `u[ω](x)`.
    pub fn velocity(&self, x: f64) -> Result<f64> {
        if !(x >= 0.0) {
            return Err(BiotSavartError::NegativeArgument(x));
        }
        if x == 0.0 {
            return Ok(0.0);
        }
        Ok(-self.pieces.transform(x, self.gamma, KernelKind::Odd, &self.spec)?)
    }

    /// `v_ε[ω](x)`.
    pub fn regularized_velocity(&self, x: f64, kernel: &RegKernel) -> Result<f64> {
        if !(x >= 0.0) {
            return Err(BiotSavartError::NegativeArgument(x));
        }
        if x == 0.0 {
            return Ok(0.0);
        }
        Ok(-self.pieces.regularized(x, kernel, &self.spec)?)
    }
}

/// `u[ω](x) = -∫₀^∞ K(x,y) ω(y) dy`.
pub fn velocity(omega: &OddProfile, x: f64, gamma: f64, spec: &QuadratureSpec) -> Result<f64> {
    VelocityOperator::new(omega, gamma, spec)?.velocity(x)
}

/// Velocity at every target, evaluated in parallel and returned in order.
pub fn velocity_field(omega: &OddProfile, xs: &[f64], gamma: f64, spec: &QuadratureSpec) -> Result<Vec<f64>> {
    let op = VelocityOperator::new(omega, gamma, spec)?;
    xs.par_iter().map(|&x| op.velocity(x)).collect()
}

/// `v_ε[ω](x) = -∫₀^∞ (k_ε(x-y) - k_ε(x+y)) ω(y) dy`.
pub fn regularized_velocity(omega: &OddProfile, x: f64, kernel: &RegKernel, spec: &QuadratureSpec) -> Result<f64> {
    VelocityOperator::new(omega, kernel.gamma, spec)?.regularized_velocity(x, kernel)
}

/// Regularized velocity at every target, in order.
pub fn regularized_velocity_field(
    omega: &OddProfile,
    xs: &[f64],
    kernel: &RegKernel,
    spec: &QuadratureSpec,
) -> Result<Vec<f64>> {
    let op = VelocityOperator::new(omega, kernel.gamma, spec)?;
    xs.par_iter().map(|&x| op.regularized_velocity(x, kernel)).collect()
}

/// `u_x(x) = -∫₀^∞ ω_x(y) (|x-y|^{-γ} + (x+y)^{-γ}) dy` from an even
/// derivative profile.
pub fn velocity_x(omega_x: &EvenProfile, x: f64, gamma: f64, spec: &QuadratureSpec) -> Result<f64> {
    check_gamma(gamma)?;
    if !(x >= 0.0) {
        return Err(BiotSavartError::NegativeArgument(x));
    }
    check_law_decay(omega_x.tail(), gamma, KernelKind::Even)?;
    Ok(-Pieces::new(omega_x).transform(x, gamma, KernelKind::Even, spec)?)
}

/// `u_x(0) = -2γ ∫₀^∞ y^{-1-γ} ω(y) dy`, from the odd profile itself.
pub fn velocity_x_origin(omega: &OddProfile, gamma: f64, spec: &QuadratureSpec) -> Result<f64> {
    check_gamma(gamma)?;
    let law = omega.tail();
    check_law_decay(law, gamma, KernelKind::Odd)?;
    let pieces = Pieces::new(omega);
    let mut sum = 0.0;
    for i in 0..pieces.coef.len() {
        let (lo, hi, c) = (pieces.y0[i], pieces.y1[i], &pieces.coef[i]);
        if lo == 0.0 {
            // c[0] = 0 for odd data.
            sum += (1..4)
                .map(|k| c[k] * hi.powf(k as f64 - gamma) / (k as f64 - gamma))
                .sum::<f64>();
        } else {
            let d = (lo + hi) / (hi - lo);
            let rule = gauss_legendre(order_for_distance(d));
            sum += rule.integrate(|y| horner(c, y - lo) * y.powf(-1.0 - gamma), lo, hi);
        }
    }
    if !law.is_zero() {
        sum += weighted_law_tail(
            law,
            pieces.x_last,
            law.shift.abs(),
            |y| y.powf(-1.0 - gamma),
            1.0 + gamma,
            spec,
        )?;
    }
    Ok(-2.0 * gamma * sum)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::barrier;
    use crate::model::graded_nodes;
    use proptest::prelude::*;

    fn tight() -> QuadratureSpec {
        QuadratureSpec::default()
            .with_rel_tol(1e-12)
            .with_abs_tol(1e-15)
            .with_max_subdivisions(400)
    }

    fn phi_profile(a: f64, p: f64, nodes: Vec<f64>) -> OddProfile {
        let tail = TailLaw {
            coefficient: 1.0,
            exponent: p,
            shift: a,
            offset: -a.powf(p),
        };
        OddProfile::sample(
            nodes,
            |x| barrier::phi_value(a, p, x),
            |x| barrier::phi_x(a, p, x),
            tail,
        )
        .unwrap()
    }

    // Brute force: midpoint sums on a graded grid around the singularity.
    fn brute_kernel_integral<F: Fn(f64) -> f64>(g: F, x: f64, gamma: f64, upper: f64) -> f64 {
        // y = x ± s², splitting the singular point; then integrate s by
        // composite Gauss on many panels.
        let rule = gauss_legendre(20);
        let mut total = 0.0;
        let panels = 4000;
        let left = x.sqrt();
        for k in 0..panels {
            let (a, b) = (left * k as f64 / panels as f64, left * (k + 1) as f64 / panels as f64);
            total += rule.integrate(|s| 2.0 * s * g(x - s * s) * kernel(x, x - s * s, gamma), a, b);
        }
        let right = (upper - x).sqrt();
        for k in 0..panels {
            let (a, b) = (right * k as f64 / panels as f64, right * (k + 1) as f64 / panels as f64);
            total += rule.integrate(|s| 2.0 * s * g(x + s * s) * kernel(x, x + s * s, gamma), a, b);
        }
        total
    }

    #[test]
    fn kernel_forms_agree() {
        let g = 0.5;
        for (x, y) in [(1.0f64, 0.3f64), (1.0, 3.0), (0.01, 7.0), (2.0, 1.5)] {
            let direct = (y - x).abs().powf(-g) - (x + y).powf(-g);
            assert!((kernel(x, y, g) - direct).abs() < 1e-13 * direct.abs().max(1e-3));
        }
        // Far-field asymptotics K ≈ 2γ x y^{-1-γ}.
        let k = kernel(1e-6, 1.0, 0.5);
        assert!((k - 1e-6).abs() < 1e-17);
        assert_eq!(kernel(0.0, 2.0, 0.5), 0.0);
    }

    #[test]
    fn eta_values() {
        assert_eq!(eta(0.5).unwrap(), 0.75);
        assert_eq!(eta(2.0).unwrap(), 2.0);
        let v = eta(0.9).unwrap();
        assert!(v > 0.75 && v < 1.0);
        assert!(eta(-0.1).is_err());
        assert_eq!(eta(0.75).unwrap(), 0.75);
        assert_eq!(eta(1.0).unwrap(), 1.0);
    }

    #[test]
    fn eta_junction_derivatives() {
        let h = 1e-5;
        let d1 = |z: f64| (eta_unchecked(z + h) - eta_unchecked(z - h)) / (2.0 * h);
        let d2 = |z: f64| (eta_unchecked(z + h) - 2.0 * eta_unchecked(z) + eta_unchecked(z - h)) / (h * h);
        assert!(d1(0.75).abs() < 1e-8);
        assert!((d1(1.0) - 1.0).abs() < 1e-8);
        assert!(d2(0.75).abs() < 1e-3);
        assert!(d2(1.0).abs() < 1e-3);
    }

    #[test]
    fn plateau_value() {
        let k = RegKernel::new(0.1, 0.5).unwrap();
        assert!((k.eval(0.05) - 3.651_483_716_701_107).abs() < 1e-12);
        assert_eq!(k.eval(0.05), k.plateau());
        assert_eq!(k.eval(0.3), 0.3f64.powf(-0.5));
        assert_eq!(k.eval(-0.3), k.eval(0.3));
    }

    proptest! {
        #[test]
        fn eta_nondecreasing_and_bounded_below(z in 0.0f64..2.0, dz in 0.0f64..0.5) {
            prop_assert!(eta_unchecked(z + dz) >= eta_unchecked(z));
            prop_assert!(eta_unchecked(z) >= 0.75);
        }

        #[test]
        fn reg_kernel_exact_outside_window(z in 0.1f64..10.0, gamma in 0.05f64..0.95) {
            let k = RegKernel::new(0.1, gamma).unwrap();
            prop_assert_eq!(k.eval(z), z.powf(-gamma));
        }

        // η(z) < z on (3/4, 1), so k_ε exceeds |z|^{-γ} there; the excess is
        // bounded by (sup z/η)^γ.
        #[test]
        fn reg_kernel_bounded_by_scaled_kernel(z in 1e-6f64..1.0, gamma in 0.05f64..0.95) {
            let eps = 1.0;
            let k = RegKernel::new(eps, gamma).unwrap();
            let sup_ratio: f64 = (0..=1000)
                .map(|i| 0.75 + 0.25 * i as f64 / 1000.0)
                .map(|z| z / eta_unchecked(z))
                .fold(1.0, f64::max);
            prop_assert!(k.eval(z) <= sup_ratio.powf(gamma) * z.powf(-gamma) * (1.0 + 1e-12));
            prop_assert!(k.eval(z) <= k.plateau());
            if z <= 0.75 {
                prop_assert!(k.eval(z) <= z.powf(-gamma));
            }
        }

        #[test]
        fn kernel_nonnegative(x in 0.0f64..100.0, y in 0.0f64..100.0, gamma in 0.05f64..0.95) {
            prop_assume!(x != y);
            prop_assert!(kernel(x, y, gamma) >= 0.0);
        }
    }

    #[test]
    fn velocity_zero_at_origin_and_for_zero_data() {
        let nodes = graded_nodes(32, 10.0, 2.0);
        let zero = OddProfile::zero(nodes.clone()).unwrap();
        let spec = QuadratureSpec::default();
        for x in [0.0, 0.3, 5.0, 12.0] {
            assert_eq!(velocity(&zero, x, 0.5, &spec).unwrap(), 0.0);
        }
        let phi = phi_profile(1.0, 0.25, nodes);
        assert_eq!(velocity(&phi, 0.0, 0.5, &spec).unwrap(), 0.0);
        assert!(velocity(&phi, -1.0, 0.5, &spec).is_err());
    }

    #[test]
    fn divergent_tail_rejected() {
        let nodes = graded_nodes(16, 10.0, 1.0);
        let tail = TailLaw::power(1.0, 0.6);
        let vals = nodes.iter().map(|&x| x.powf(0.6)).collect();
        let prof = OddProfile::new(nodes, vals, tail).unwrap();
        assert!(matches!(
            velocity(&prof, 1.0, 0.5, &QuadratureSpec::default()),
            Err(BiotSavartError::DivergentTail { .. })
        ));
    }

    #[test]
    fn velocity_matches_scaled_u_profile() {
        let (g, p) = (0.5, 0.25);
        let nodes = graded_nodes(800, 40.0, 3.0);
        let prof = phi_profile(1.0, p, nodes);
        let u = velocity(&prof, 1.0, g, &tight()).unwrap();
        let want = -barrier::U_value(1.0, g, p, &tight()).unwrap();
        assert!((u - want).abs() < 1e-6 * want.abs(), "{u} vs {want}");
    }

    #[test]
    fn velocity_matches_brute_force_on_smooth_data() {
        // ω = x e^{-x²} truncated far out with a zero tail.
        let g = 0.4;
        let nodes = graded_nodes(600, 12.0, 2.0);
        let w = |x: f64| x * (-x * x).exp();
        let dw = |x: f64| (1.0 - 2.0 * x * x) * (-x * x).exp();
        let prof = OddProfile::sample(nodes, w, dw, TailLaw::ZERO).unwrap();
        for x in [0.2, 1.0, 3.0] {
            let u = velocity(&prof, x, g, &tight()).unwrap();
            let brute = -brute_kernel_integral(w, x, g, 12.0);
            assert!((u - brute).abs() < 1e-7 * brute.abs(), "x={x}: {u} vs {brute}");
        }
    }

    #[test]
    fn velocity_at_and_beyond_last_node() {
        let (g, p) = (0.5, 0.25);
        let nodes = graded_nodes(400, 20.0, 2.0);
        let prof = phi_profile(1.0, p, nodes);
        for x in [15.0, 20.0, 30.0] {
            let u = velocity(&prof, x, g, &tight()).unwrap();
            let want = -barrier::U_value(x, g, p, &tight()).unwrap();
            assert!((u - want).abs() < 1e-6 * want.abs(), "x={x}: {u} vs {want}");
        }
    }

    #[test]
    fn velocity_x_at_origin_of_barrier_profile() {
        let (g, p) = (0.5, 0.25);
        let nodes = graded_nodes(600, 40.0, 3.0);
        let phi = phi_profile(1.0, p, nodes.clone());
        let dphi = EvenProfile::sample(
            nodes,
            |x| barrier::phi_x(1.0, p, x),
            |x| p * (p - 1.0) * (x + 1.0).powf(p - 2.0),
            phi.tail().differentiate(),
        )
        .unwrap();
        let exact = -2.0 * p * statrs::function::beta::beta(1.0 - g, g - p);
        let ux = velocity_x(&dphi, 0.0, g, &tight()).unwrap();
        assert!((ux - exact).abs() < 1e-7 * exact.abs(), "{ux} vs {exact}");
        let ux0 = velocity_x_origin(&phi, g, &tight()).unwrap();
        assert!((ux0 - exact).abs() < 1e-7 * exact.abs(), "{ux0} vs {exact}");
    }

    #[test]
    fn velocity_x_scales_with_barrier_width() {
        let (g, p) = (0.5, 0.25);
        let at = |a: f64| {
            let nodes: Vec<f64> = graded_nodes(600, 40.0, 3.0).iter().map(|x| x * a).collect();
            velocity_x_origin(&phi_profile(a, p, nodes), g, &tight()).unwrap()
        };
        let base = at(1.0);
        for a in [0.25f64, 4.0] {
            let want = a.powf(p - g) * base;
            assert!((at(a) - want).abs() < 1e-7 * want.abs());
        }
    }

    #[test]
    fn velocity_x_matches_finite_difference_of_velocity() {
        let (g, p) = (0.5, 0.25);
        let nodes = graded_nodes(800, 40.0, 3.0);
        let phi = phi_profile(1.0, p, nodes);
        let dphi = phi.derivative().unwrap();
        let x = 2.0;
        let h = 1e-3;
        let fd = (velocity(&phi, x + h, g, &tight()).unwrap() - velocity(&phi, x - h, g, &tight()).unwrap()) / (2.0 * h);
        let ux = velocity_x(&dphi, x, g, &tight()).unwrap();
        assert!((fd - ux).abs() < 1e-4 * ux.abs(), "{fd} vs {ux}");
    }

    #[test]
    fn regularized_matches_exact_away_from_support() {
        // Data vanishing (to rounding) within ε of x.
        let g = 0.5;
        let nodes = graded_nodes(400, 20.0, 1.0);
        let w = |x: f64| x * (-4.0 * x * x).exp();
        let dw = |x: f64| (1.0 - 8.0 * x * x) * (-4.0 * x * x).exp();
        let prof = OddProfile::sample(nodes, w, dw, TailLaw::ZERO).unwrap();
        let k = RegKernel::new(0.1, g).unwrap();
        let spec = tight();
        let x = 15.0;
        let v = regularized_velocity(&prof, x, &k, &spec).unwrap();
        let u = velocity(&prof, x, g, &spec).unwrap();
        assert!((v - u).abs() < 1e-10, "{v} vs {u}");
    }

    #[test]
    fn regularized_error_shrinks_with_epsilon() {
        let (g, p) = (0.5, 0.25);
        let nodes = graded_nodes(600, 40.0, 3.0);
        let prof = phi_profile(1.0, p, nodes);
        let spec = tight();
        let u = velocity(&prof, 1.0, g, &spec).unwrap();
        let mut prev = f64::INFINITY;
        for eps in [0.2, 0.1, 0.05, 0.025] {
            let k = RegKernel::new(eps, g).unwrap();
            let err = (regularized_velocity(&prof, 1.0, &k, &spec).unwrap() - u).abs();
            assert!(err < prev);
            prev = err;
        }
        let k = RegKernel::new(0.05, g).unwrap();
        assert_eq!(regularized_velocity(&prof, 0.0, &k, &spec).unwrap(), 0.0);
    }

    #[test]
    fn regularized_tail_region_matches_brute_force() {
        // Target within ε of the last node so part of the tail is smoothed.
        let (g, p) = (0.5, 0.25);
        let nodes = graded_nodes(200, 10.0, 2.0);
        let prof = phi_profile(1.0, p, nodes);
        let k = RegKernel::new(0.2, g).unwrap();
        let spec = tight();
        let x = 9.9;
        let v = regularized_velocity(&prof, x, &k, &spec).unwrap();
        let rule = gauss_legendre(20);
        let f = |y: f64| prof.eval(y) * (k.eval(x - y) - k.eval(x + y));
        let mut brute = 0.0;
        let m = 20000;
        let top = 60.0;
        for i in 0..m {
            let (a, b) = (top * i as f64 / m as f64, top * (i + 1) as f64 / m as f64);
            brute += rule.integrate(f, a, b);
        }
        // remainder beyond `top` from the exact kernel
        brute += law_transform(prof.tail(), top, x, g, KernelKind::Odd, &spec).unwrap();
        assert!((v + brute).abs() < 1e-7 * brute.abs(), "{v} vs {}", -brute);
    }

    #[test]
    fn velocity_field_is_ordered_and_nonpositive() {
        let nodes = graded_nodes(64, 20.0, 3.0);
        let prof = phi_profile(0.5, 0.25, nodes.clone());
        let spec = QuadratureSpec::default();
        let field = velocity_field(&prof, &nodes, 0.5, &spec).unwrap();
        for (x, u) in nodes.iter().zip(&field) {
            assert_eq!(*u, velocity(&prof, *x, 0.5, &spec).unwrap());
            assert!(*u <= 0.0);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn velocity_monotone_in_data(scale in 1.0f64..3.0, x in 0.01f64..15.0) {
            let nodes = graded_nodes(48, 10.0, 2.0);
            let base = phi_profile(0.5, 0.25, nodes.clone());
            let bump = |y: f64| y * (-(y - 2.0) * (y - 2.0)).exp();
            let dbump = |y: f64| (1.0 - 2.0 * y * (y - 2.0)) * (-(y - 2.0) * (y - 2.0)).exp();
            let bigger = OddProfile::sample(
                nodes,
                |y| barrier::phi_value(0.5, 0.25, y) + scale * bump(y),
                |y| barrier::phi_x(0.5, 0.25, y) + scale * dbump(y),
                *base.tail(),
            ).unwrap();
            prop_assume!(bigger.values().iter().zip(base.values()).all(|(a, b)| a >= b));
            let spec = QuadratureSpec::default();
            let u1 = velocity(&bigger, x, 0.5, &spec).unwrap();
            let u2 = velocity(&base, x, 0.5, &spec).unwrap();
            prop_assert!(u1 <= u2 + 1e-12);
        }

        #[test]
        fn nonnegative_data_gives_nonpositive_velocity(a in 0.1f64..3.0, x in 0.0f64..30.0) {
            let nodes = graded_nodes(40, 10.0, 3.0);
            let prof = phi_profile(a, 0.25, nodes);
            prop_assert!(velocity(&prof, x, 0.5, &QuadratureSpec::default()).unwrap() <= 0.0);
        }
    }
}
