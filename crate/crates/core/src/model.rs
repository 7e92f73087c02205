//! Model parameters, sampled field representations and weighted norms.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::barrier::{self, Barrier};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("invalid profile: {0}")]
    InvalidProfile(String),
    #[error("weighted norm with s = {s} diverges: tail grows like y^{growth}")]
    DivergentNorm { s: f64, growth: f64 },
    #[error("initial data fails to dominate (1+ε)φ(0,·) at x = {x} (ω₀ = {omega}, bound = {bound})")]
    DominanceViolated { x: f64, omega: f64, bound: f64 },
    #[error("unknown initial data kind `{0}`")]
    UnknownInitialData(String),
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// Exponents of the model.
///
/// `gamma = 1 - alpha` is the strength of the singular kernel, `p` the cusp
/// exponent of the barrier and `q` the growth class of the data at infinity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ModelParams {
    pub alpha: f64,
    pub gamma: f64,
    pub p: f64,
    pub q: f64,
    pub margin_epsilon: f64,
}

impl ModelParams {
    pub fn new(alpha: f64, p: f64, q: f64, margin_epsilon: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(ModelError::InvalidParams(format!("alpha = {alpha} must lie in (0, 1)")));
        }
        let gamma = 1.0 - alpha;
        if !(p > 0.0 && p < gamma) {
            return Err(ModelError::InvalidParams(format!("p = {p} must lie in (0, γ = {gamma})")));
        }
        if !(q > 0.0 && q < gamma) {
            return Err(ModelError::InvalidParams(format!("q = {q} must lie in (0, γ = {gamma})")));
        }
        if !(margin_epsilon > 0.0) {
            return Err(ModelError::InvalidParams(format!(
                "margin_epsilon = {margin_epsilon} must be positive"
            )));
        }
        Ok(Self {
            alpha,
            gamma,
            p,
            q,
            margin_epsilon,
        })
    }

    /// Parameters of the blowup scenario: `p = q = γ/2` and ε at 1.05 times its
    /// lower bound for the given `a0`.
    pub fn barrier_mode(alpha: f64, a0: f64) -> Result<Self> {
        let gamma = 1.0 - alpha;
        let p = 0.5 * gamma;
        let eps = barrier::margin_epsilon_min(a0, p)
            .map_err(|e| ModelError::InvalidParams(e.to_string()))?
            * 1.05;
        Self::new(alpha, p, p, eps)
    }

    pub fn is_barrier_mode(&self) -> bool {
        self.p == 0.5 * self.gamma
    }

    /// Checks the margin condition `ε > (1 - a0^p)^{-1} - 1` against a barrier.
    pub fn check_margin(&self, barrier: &Barrier) -> Result<()> {
        let min = barrier::margin_epsilon_min(barrier.a0, self.p)
            .map_err(|e| ModelError::InvalidParams(e.to_string()))?;
        if self.margin_epsilon <= min {
            return Err(ModelError::InvalidParams(format!(
                "margin_epsilon = {} must exceed (1 - a0^p)^-1 - 1 = {min}",
                self.margin_epsilon
            )));
        }
        Ok(())
    }
}

/// Closed-form continuation of a profile beyond its last node:
/// `A·(y + b)^q + B`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailLaw {
    pub coefficient: f64,
    pub exponent: f64,
    pub shift: f64,
    pub offset: f64,
}

impl TailLaw {
    pub const ZERO: TailLaw = TailLaw {
        coefficient: 0.0,
        exponent: 0.0,
        shift: 0.0,
        offset: 0.0,
    };

    pub fn power(coefficient: f64, exponent: f64) -> Self {
        Self {
            coefficient,
            exponent,
            shift: 0.0,
            offset: 0.0,
        }
    }

    #[inline]
    pub fn eval(&self, y: f64) -> f64 {
        if self.coefficient == 0.0 {
            return self.offset;
        }
        self.coefficient * (y + self.shift).powf(self.exponent) + self.offset
    }

    #[inline]
    pub fn derivative(&self, y: f64) -> f64 {
        if self.coefficient == 0.0 || self.exponent == 0.0 {
            return 0.0;
        }
        self.coefficient * self.exponent * (y + self.shift).powf(self.exponent - 1.0)
    }

    /// Tail law of the derivative.
    pub fn differentiate(&self) -> TailLaw {
        if self.coefficient == 0.0 || self.exponent == 0.0 {
            return TailLaw::ZERO;
        }
        TailLaw {
            coefficient: self.coefficient * self.exponent,
            exponent: self.exponent - 1.0,
            shift: self.shift,
            offset: 0.0,
        }
    }

    /// Growth exponent at infinity (`-∞` for the zero law).
    pub fn growth(&self) -> f64 {
        let a = if self.coefficient != 0.0 { self.exponent } else { f64::NEG_INFINITY };
        let b = if self.offset != 0.0 { 0.0 } else { f64::NEG_INFINITY };
        a.max(b)
    }

    /// `lim |tail(y)|·y^{-s}` for `s` equal to the growth exponent.
    fn leading_magnitude(&self, s: f64) -> f64 {
        let mut lead = 0.0;
        if self.coefficient != 0.0 && self.exponent == s {
            lead += self.coefficient;
        }
        if self.offset != 0.0 && s == 0.0 {
            lead += self.offset;
        }
        lead.abs()
    }

    pub fn is_zero(&self) -> bool {
        self.coefficient == 0.0 && self.offset == 0.0
    }
}

/// Parity of the implied extension to `x < 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Parity {
    Odd,
    Even,
}

/// One Hermite cubic between consecutive nodes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CubicPiece {
    pub y0: f64,
    pub y1: f64,
    pub v0: f64,
    pub v1: f64,
    pub d0: f64,
    pub d1: f64,
}

impl CubicPiece {
    #[inline]
    pub fn width(&self) -> f64 {
        self.y1 - self.y0
    }

    /// Coefficients of `Σ c_k τ^k` with `τ = y - y0`.
    #[inline]
    pub fn local_coefficients(&self) -> [f64; 4] {
        let h = self.y1 - self.y0;
        let slope = (self.v1 - self.v0) / h;
        let c2 = (3.0 * slope - 2.0 * self.d0 - self.d1) / h;
        let c3 = (self.d0 + self.d1 - 2.0 * slope) / (h * h);
        [self.v0, self.d0, c2, c3]
    }

    /// Coefficients of `Σ c_k (y - s)^k`.
    #[inline]
    pub fn coefficients_about(&self, s: f64) -> [f64; 4] {
        let [a0, a1, a2, a3] = self.local_coefficients();
        // Taylor shift from y0 to s: evaluate the polynomial and derivatives at δ.
        let d = s - self.y0;
        [
            a0 + d * (a1 + d * (a2 + d * a3)),
            a1 + d * (2.0 * a2 + 3.0 * a3 * d),
            a2 + 3.0 * a3 * d,
            a3,
        ]
    }

    #[inline]
    pub fn eval(&self, y: f64) -> f64 {
        let [c0, c1, c2, c3] = self.local_coefficients();
        let t = y - self.y0;
        c0 + t * (c1 + t * (c2 + t * c3))
    }

    #[inline]
    pub fn eval_derivative(&self, y: f64) -> f64 {
        let [_, c1, c2, c3] = self.local_coefficients();
        let t = y - self.y0;
        c1 + t * (2.0 * c2 + 3.0 * c3 * t)
    }

    /// `∫_{y0}^{y1} ω`.
    pub fn integral(&self) -> f64 {
        let h = self.width();
        0.5 * h * (self.v0 + self.v1) + h * h * (self.d0 - self.d1) / 12.0
    }
}

/// Samples on `x ≥ 0` joined by monotonicity-preserving Hermite cubics and
/// continued by a [`TailLaw`] beyond the last node.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledProfile {
    parity: Parity,
    nodes: Vec<f64>,
    values: Vec<f64>,
    slopes: Vec<f64>,
    tail: TailLaw,
}

const MIN_NODES: usize = 9;
const TAIL_CONTINUITY_TOL: f64 = 1e-6;

impl SampledProfile {
    fn build(parity: Parity, nodes: Vec<f64>, values: Vec<f64>, slopes: Option<Vec<f64>>, tail: TailLaw) -> Result<Self> {
        if nodes.len() < MIN_NODES {
            return Err(ModelError::InvalidProfile(format!(
                "need at least {MIN_NODES} nodes, got {}",
                nodes.len()
            )));
        }
        if values.len() != nodes.len() {
            return Err(ModelError::InvalidProfile(format!(
                "{} values for {} nodes",
                values.len(),
                nodes.len()
            )));
        }
        if nodes[0] != 0.0 {
            return Err(ModelError::InvalidProfile(format!("first node must be 0, got {}", nodes[0])));
        }
        if let Some(i) = nodes.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(ModelError::InvalidProfile(format!(
                "nodes not strictly increasing at index {} ({} -> {})",
                i + 1,
                nodes[i],
                nodes[i + 1]
            )));
        }
        if values.iter().any(|v| !v.is_finite()) || nodes.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::InvalidProfile("non-finite sample".into()));
        }
        if parity == Parity::Odd && values[0] != 0.0 {
            return Err(ModelError::InvalidProfile(format!(
                "odd profile must vanish at the origin, got {}",
                values[0]
            )));
        }
        let last = *nodes.last().unwrap();
        if tail.coefficient != 0.0 && !(last + tail.shift > 0.0 && 0.5 * last + tail.shift > 0.0) {
            return Err(ModelError::InvalidProfile(format!(
                "tail shift {} leaves the tail undefined near x_N = {last}",
                tail.shift
            )));
        }
        let v_last = *values.last().unwrap();
        let gap = (tail.eval(last) - v_last).abs();
        if gap > TAIL_CONTINUITY_TOL * (1.0 + v_last.abs()) {
            return Err(ModelError::InvalidProfile(format!(
                "tail law {} at x_N = {last} does not match last value {v_last}",
                tail.eval(last)
            )));
        }
        let slopes = match slopes {
            Some(s) => {
                if s.len() != nodes.len() {
                    return Err(ModelError::InvalidProfile("slope count mismatch".into()));
                }
                // The last slope always follows the tail so the derivative
                // profile stays continuous across x_N.
                let mut s = s;
                *s.last_mut().unwrap() = tail.derivative(last);
                limit_slopes(&nodes, &values, &mut s);
                s
            }
            None => {
                let mut s = estimate_slopes(&nodes, &values);
                *s.last_mut().unwrap() = tail.derivative(last);
                limit_slopes(&nodes, &values, &mut s);
                s
            }
        };
        Ok(Self {
            parity,
            nodes,
            values,
            slopes,
            tail,
        })
    }

    pub fn parity(&self) -> Parity {
        self.parity
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn slopes(&self) -> &[f64] {
        &self.slopes
    }

    pub fn tail(&self) -> &TailLaw {
        &self.tail
    }

    pub fn x_last(&self) -> f64 {
        *self.nodes.last().unwrap()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn piece(&self, i: usize) -> CubicPiece {
        CubicPiece {
            y0: self.nodes[i],
            y1: self.nodes[i + 1],
            v0: self.values[i],
            v1: self.values[i + 1],
            d0: self.slopes[i],
            d1: self.slopes[i + 1],
        }
    }

    pub fn pieces(&self) -> impl Iterator<Item = CubicPiece> + '_ {
        (0..self.nodes.len() - 1).map(move |i| self.piece(i))
    }

    fn locate(&self, x: f64) -> usize {
        match self.nodes.binary_search_by(|n| n.total_cmp(&x)) {
            Ok(i) => i.min(self.nodes.len() - 2),
            Err(i) => i.saturating_sub(1).min(self.nodes.len() - 2),
        }
    }

    /// Value at `x ≥ 0`.
    pub fn eval(&self, x: f64) -> f64 {
        if x >= self.x_last() {
            if x == self.x_last() {
                return *self.values.last().unwrap();
            }
            return self.tail.eval(x);
        }
        self.piece(self.locate(x)).eval(x)
    }

    pub fn eval_derivative(&self, x: f64) -> f64 {
        if x > self.x_last() {
            return self.tail.derivative(x);
        }
        self.piece(self.locate(x)).eval_derivative(x)
    }

    /// Nodes and interpolated slopes as an even-parity derivative profile.
    pub fn derivative_samples(&self) -> (Vec<f64>, Vec<f64>, TailLaw) {
        (self.nodes.clone(), self.slopes.clone(), self.tail.differentiate())
    }

    /// `sup_{x ≥ 0} |ω(x)| (1+x)^{-s}` over nodes, tail samples and the tail
    /// limit.
    pub fn weighted_norm(&self, s: f64) -> Result<f64> {
        let growth = self.tail.growth();
        if s < growth {
            return Err(ModelError::DivergentNorm { s, growth });
        }
        let mut sup = self
            .nodes
            .iter()
            .zip(&self.values)
            .map(|(x, v)| v.abs() * (1.0 + x).powf(-s))
            .fold(0.0, f64::max);
        if !self.tail.is_zero() {
            let x_n = self.x_last();
            let log_start = (1.0 + x_n).ln();
            for k in 1..=400 {
                let y = (log_start + k as f64 * 0.05).exp() - 1.0;
                sup = sup.max(self.tail.eval(y).abs() * (1.0 + y).powf(-s));
            }
            if s == growth {
                sup = sup.max(self.tail.leading_magnitude(s));
            }
        }
        Ok(sup)
    }
}

// Second-order three-point derivative estimates on a nonuniform grid.
fn estimate_slopes(x: &[f64], v: &[f64]) -> Vec<f64> {
    let n = x.len();
    let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
    let del: Vec<f64> = (0..n - 1).map(|i| (v[i + 1] - v[i]) / h[i]).collect();
    let mut d = vec![0.0; n];
    d[0] = ((2.0 * h[0] + h[1]) * del[0] - h[0] * del[1]) / (h[0] + h[1]);
    for i in 1..n - 1 {
        d[i] = (h[i] * del[i - 1] + h[i - 1] * del[i]) / (h[i - 1] + h[i]);
    }
    let m = n - 1;
    d[m] = ((2.0 * h[m - 1] + h[m - 2]) * del[m - 1] - h[m - 1] * del[m - 2]) / (h[m - 1] + h[m - 2]);
    d
}

// Hyman-type filter: slopes keep the sign of the neighbouring secants and
// stay within three times the smaller one, which keeps every cubic monotone
// on monotone data.
fn limit_slopes(x: &[f64], v: &[f64], d: &mut [f64]) {
    let n = x.len();
    let del: Vec<f64> = (0..n - 1).map(|i| (v[i + 1] - v[i]) / (x[i + 1] - x[i])).collect();
    for i in 0..n {
        let (lo, hi) = match i {
            0 => (del[0], del[0]),
            _ if i == n - 1 => (del[n - 2], del[n - 2]),
            _ => (del[i - 1], del[i]),
        };
        if lo * hi < 0.0 {
            d[i] = 0.0;
            continue;
        }
        let sign = if lo + hi >= 0.0 { 1.0 } else { -1.0 };
        if lo == 0.0 && hi == 0.0 {
            d[i] = 0.0;
            continue;
        }
        if d[i] * sign < 0.0 {
            d[i] = 0.0;
        }
        let cap = 3.0 * lo.abs().min(hi.abs());
        if lo == 0.0 || hi == 0.0 {
            // Flat on one side: only the interior slopes are constrained.
            if i != 0 && i != n - 1 {
                d[i] = 0.0;
            }
            continue;
        }
        if d[i].abs() > cap {
            d[i] = sign * cap;
        }
    }
}

/// Odd function on the line, stored on `x ≥ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct OddProfile(SampledProfile);

impl OddProfile {
    /// Slopes estimated from the samples.
    pub fn new(nodes: Vec<f64>, values: Vec<f64>, tail: TailLaw) -> Result<Self> {
        SampledProfile::build(Parity::Odd, nodes, values, None, tail).map(Self)
    }

    /// Caller-supplied nodal derivatives.
    pub fn with_slopes(nodes: Vec<f64>, values: Vec<f64>, slopes: Vec<f64>, tail: TailLaw) -> Result<Self> {
        SampledProfile::build(Parity::Odd, nodes, values, Some(slopes), tail).map(Self)
    }

    /// Samples an analytic function together with its derivative.
    pub fn sample<F, D>(nodes: Vec<f64>, f: F, df: D, tail: TailLaw) -> Result<Self>
    where
        F: Fn(f64) -> f64,
        D: Fn(f64) -> f64,
    {
        let values: Vec<f64> = nodes.iter().map(|&x| if x == 0.0 { 0.0 } else { f(x) }).collect();
        let slopes = nodes.iter().map(|&x| df(x)).collect();
        Self::with_slopes(nodes, values, slopes, tail)
    }

    pub fn zero(nodes: Vec<f64>) -> Result<Self> {
        let n = nodes.len();
        Self::new(nodes, vec![0.0; n], TailLaw::ZERO)
    }

    /// Even derivative profile built from the interpolant's nodal slopes.
    pub fn derivative(&self) -> Result<EvenProfile> {
        let (x, d, tail) = self.0.derivative_samples();
        EvenProfile::new(x, d, tail)
    }

    pub fn inner(&self) -> &SampledProfile {
        &self.0
    }
}

impl std::ops::Deref for OddProfile {
    type Target = SampledProfile;
    fn deref(&self) -> &SampledProfile {
        &self.0
    }
}

/// Even function on the line (e.g. the derivative of an odd profile).
#[derive(Debug, Clone, PartialEq)]
pub struct EvenProfile(SampledProfile);

impl EvenProfile {
    pub fn new(nodes: Vec<f64>, values: Vec<f64>, tail: TailLaw) -> Result<Self> {
        SampledProfile::build(Parity::Even, nodes, values, None, tail).map(Self)
    }

    pub fn sample<F, D>(nodes: Vec<f64>, f: F, df: D, tail: TailLaw) -> Result<Self>
    where
        F: Fn(f64) -> f64,
        D: Fn(f64) -> f64,
    {
        let values = nodes.iter().map(|&x| f(x)).collect();
        let slopes = nodes.iter().map(|&x| df(x)).collect();
        SampledProfile::build(Parity::Even, nodes, values, Some(slopes), tail).map(Self)
    }
}

impl std::ops::Deref for EvenProfile {
    type Target = SampledProfile;
    fn deref(&self) -> &SampledProfile {
        &self.0
    }
}

/// `sup |ω(x)| (1+x)^{-s}`; fails with [`ModelError::DivergentNorm`] when the
/// tail outgrows the weight.
pub fn weighted_norm(profile: &SampledProfile, s: f64) -> Result<f64> {
    profile.weighted_norm(s)
}

/// Nodes `x_i = x_max (i/n)^m`, `i = 0..=n`.
pub fn graded_nodes(n: usize, x_max: f64, grading_power: f64) -> Vec<f64> {
    (0..=n)
        .map(|i| {
            if i == n {
                x_max
            } else {
                x_max * (i as f64 / n as f64).powf(grading_power)
            }
        })
        .collect()
}

/// Named initial-data generators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialDataKind {
    /// `(1+2ε)((x+a0)^p - a0^p)`
    BarrierMultiple,
    /// `A x (1+x²)^{(p-1)/2}`, `A` scaled for dominance.
    SmoothRational,
    /// Identically zero; a stationary solution.
    Zero,
}

impl std::str::FromStr for InitialDataKind {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "barrier_multiple" => Ok(Self::BarrierMultiple),
            "smooth_rational" => Ok(Self::SmoothRational),
            "zero" => Ok(Self::Zero),
            other => Err(ModelError::UnknownInitialData(other.to_string())),
        }
    }
}

/// Extra safety factor applied to the smooth-rational amplitude.
const SMOOTH_RATIONAL_HEADROOM: f64 = 1.02;

/// Builds initial data that strictly dominates `(1+ε)φ(0,·)` on every node.
/// `Zero` is exempt from the dominance check.
pub fn build_initial_data(kind: InitialDataKind, params: &ModelParams, barrier: &Barrier, nodes: Vec<f64>) -> Result<OddProfile> {
    let p = params.p;
    let a0 = barrier.a0;
    let eps = params.margin_epsilon;
    let profile = match kind {
        InitialDataKind::Zero => return OddProfile::zero(nodes),
        InitialDataKind::BarrierMultiple => {
            let k = 1.0 + 2.0 * eps;
            let tail = TailLaw {
                coefficient: k,
                exponent: p,
                shift: a0,
                offset: -k * a0.powf(p),
            };
            OddProfile::sample(
                nodes,
                |x| k * barrier::phi_value(a0, p, x),
                |x| k * barrier::phi_x(a0, p, x),
                tail,
            )?
        }
        InitialDataKind::SmoothRational => {
            let shape = |x: f64| x * (1.0 + x * x).powf(0.5 * (p - 1.0));
            let dshape = |x: f64| {
                let s = 1.0 + x * x;
                s.powf(0.5 * (p - 1.0)) * (1.0 + (p - 1.0) * x * x / s)
            };
            // A must beat (1+ε)φ(0,x)/shape(x) everywhere: at the origin the
            // ratio tends to (1+ε)p a0^{p-1}, at infinity to 1+ε.
            let x_n = *nodes.last().unwrap();
            let mut need = (1.0 + eps) * p * a0.powf(p - 1.0);
            need = need.max(1.0 + eps);
            let probe = nodes
                .iter()
                .copied()
                .filter(|&x| x > 0.0)
                .chain((1..=200).map(|k| x_n * (1.0 + 0.05 * k as f64).powi(4)));
            for x in probe {
                need = need.max((1.0 + eps) * barrier::phi_value(a0, p, x) / shape(x));
            }
            let amp = SMOOTH_RATIONAL_HEADROOM * need;
            let v_n = amp * shape(x_n);
            let tail = TailLaw {
                coefficient: amp,
                exponent: p,
                shift: 0.0,
                offset: v_n - amp * x_n.powf(p),
            };
            OddProfile::sample(nodes, |x| amp * shape(x), |x| amp * dshape(x), tail)?
        }
    };
    check_dominance(&profile, params, barrier)?;
    Ok(profile)
}

/// Strict dominance `ω₀(x) > (1+ε)φ(0,x)` on every positive node.
pub fn check_dominance(profile: &OddProfile, params: &ModelParams, barrier: &Barrier) -> Result<()> {
    for (&x, &w) in profile.nodes().iter().zip(profile.values()).skip(1) {
        let bound = (1.0 + params.margin_epsilon) * barrier::phi_value(barrier.a0, params.p, x);
        if !(w > bound) {
            return Err(ModelError::DominanceViolated { x, omega: w, bound });
        }
    }
    Ok(())
}
