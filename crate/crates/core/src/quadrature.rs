//! Adaptive quadrature for power-law endpoint singularities and algebraic tails
//! on the half-line.
//!
//! Everything is built on a globally adaptive 10/21-point Gauss-Kronrod rule.
//! Endpoint singularities `|y - s|^{-γ}` are absorbed exactly by the change of
//! variables `u = |y - s|^{1-γ}`, and half-line tails are compactified with
//! `y = R / t`, after which the remaining `t^{β-2}` factor is again an endpoint
//! singularity.

use std::collections::BinaryHeap;
use std::sync::OnceLock;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuadratureError {
    #[error("no convergence after {subdivisions} subdivisions: value {value:e}, error estimate {error:e}")]
    NoConvergence {
        subdivisions: usize,
        value: f64,
        error: f64,
    },
    #[error("tail integral diverges: decay exponent {beta} must exceed 1")]
    DivergentTail { beta: f64 },
    #[error("invalid interval [{a}, {b}]")]
    InvalidInterval { a: f64, b: f64 },
    #[error("singular exponent {gamma} outside (0, 1)")]
    InvalidExponent { gamma: f64 },
    #[error("invalid quadrature spec: {0}")]
    InvalidSpec(String),
}

pub type Result<T> = std::result::Result<T, QuadratureError>;

/// Tolerances and limits for the adaptive rules.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureSpec {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_subdivisions: usize,
    /// Multiplies the local node spacing to get the radius of the singular
    /// window around an interior singularity.
    pub singular_split_radius_factor: f64,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self {
            rel_tol: 1e-8,
            abs_tol: 1e-12,
            max_subdivisions: 50,
            singular_split_radius_factor: 1.0,
        }
    }
}

impl QuadratureSpec {
    pub fn with_rel_tol(mut self, rel_tol: f64) -> Self {
        self.rel_tol = rel_tol;
        self
    }

    pub fn with_abs_tol(mut self, abs_tol: f64) -> Self {
        self.abs_tol = abs_tol;
        self
    }

    pub fn with_max_subdivisions(mut self, n: usize) -> Self {
        self.max_subdivisions = n;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0) || !(self.abs_tol > 0.0) {
            return Err(QuadratureError::InvalidSpec(format!(
                "tolerances must be positive (rel {}, abs {})",
                self.rel_tol, self.abs_tol
            )));
        }
        if self.max_subdivisions < 10 {
            return Err(QuadratureError::InvalidSpec(format!(
                "max_subdivisions {} < 10",
                self.max_subdivisions
            )));
        }
        if !(self.singular_split_radius_factor > 0.0) {
            return Err(QuadratureError::InvalidSpec(
                "singular_split_radius_factor must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Which endpoint of `[a, b]` carries the `|y - s|^{-γ}` singularity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SingularEnd {
    Left,
    Right,
}

// Kronrod abscissae on [0, 1] (symmetric), odd indices are the Gauss points.
#[allow(clippy::excessive_precision)]
const XGK: [f64; 11] = [
    0.995_657_163_025_808_080_735_527_280_689_003,
    0.973_906_528_517_171_720_077_964_012_084_452,
    0.930_157_491_355_708_226_001_207_180_059_508,
    0.865_063_366_688_984_510_732_096_688_423_493,
    0.780_817_726_586_416_897_063_717_578_345_042,
    0.679_409_568_299_024_406_234_327_365_114_874,
    0.562_757_134_668_604_683_339_000_099_272_694,
    0.433_395_394_129_247_190_799_265_943_165_784,
    0.294_392_862_701_460_198_131_126_603_103_866,
    0.148_874_338_981_631_210_884_826_001_129_720,
    0.0,
];

#[allow(clippy::excessive_precision)]
const WGK: [f64; 11] = [
    0.011_694_638_867_371_874_278_064_396_062_192,
    0.032_558_162_307_964_727_478_818_972_459_390,
    0.054_755_896_574_351_996_031_381_300_244_580,
    0.075_039_674_810_919_952_767_043_140_916_190,
    0.093_125_454_583_697_605_535_065_465_083_366,
    0.109_387_158_802_297_641_899_210_590_325_805,
    0.123_491_976_262_065_851_077_208_931_904_778,
    0.134_709_217_311_473_325_928_054_001_771_707,
    0.142_775_938_577_060_080_797_094_273_138_717,
    0.147_739_104_901_338_491_374_841_515_972_068,
    0.149_445_554_002_916_905_664_936_468_389_821,
];

#[allow(clippy::excessive_precision)]
const WG: [f64; 5] = [
    0.066_671_344_308_688_137_593_568_809_893_332,
    0.149_451_349_150_580_593_145_776_339_657_697,
    0.219_086_362_515_982_043_995_534_934_228_163,
    0.269_266_719_309_996_355_091_226_921_569_469,
    0.295_524_224_714_752_870_173_892_994_651_338,
];

#[derive(Debug, Clone, Copy)]
struct Panel {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Panel {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn gk21<F: Fn(f64) -> f64>(g: &F, a: f64, b: f64) -> Panel {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = g(center);
    let mut resk = fc * WGK[10];
    let mut resg = 0.0;
    let mut resabs = resk.abs();
    let mut fv1 = [0.0; 10];
    let mut fv2 = [0.0; 10];
    for j in 0..10 {
        let dx = half * XGK[j];
        let f1 = g(center - dx);
        let f2 = g(center + dx);
        fv1[j] = f1;
        fv2[j] = f2;
        resk += WGK[j] * (f1 + f2);
        resabs += WGK[j] * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            resg += WG[j / 2] * (f1 + f2);
        }
    }
    let reskh = 0.5 * resk;
    let mut resasc = WGK[10] * (fc - reskh).abs();
    for j in 0..10 {
        resasc += WGK[j] * ((fv1[j] - reskh).abs() + (fv2[j] - reskh).abs());
    }
    let value = resk * half;
    resabs *= half.abs();
    resasc *= half.abs();
    let mut error = ((resk - resg) * half).abs();
    if resasc != 0.0 && error != 0.0 {
        error = resasc * (200.0 * error / resasc).powf(1.5).min(1.0);
    }
    let roundoff = 50.0 * f64::EPSILON * resabs;
    if resabs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        error = error.max(roundoff);
    }
    Panel { a, b, value, error }
}

/// Globally adaptive Gauss-Kronrod integration of a smooth integrand.
pub fn integrate_smooth<F: Fn(f64) -> f64>(g: F, a: f64, b: f64, spec: &QuadratureSpec) -> Result<f64> {
    if !(a.is_finite() && b.is_finite()) || a > b {
        return Err(QuadratureError::InvalidInterval { a, b });
    }
    if a == b {
        return Ok(0.0);
    }
    let first = gk21(&g, a, b);
    let mut total = first.value;
    let mut total_err = first.error;
    let mut heap = BinaryHeap::new();
    heap.push(first);
    let mut subdivisions = 1;
    loop {
        let tol = spec.abs_tol.max(spec.rel_tol * total.abs());
        if total_err <= tol {
            return Ok(total);
        }
        if !total.is_finite() {
            return Err(QuadratureError::NoConvergence {
                subdivisions,
                value: total,
                error: total_err,
            });
        }
        if subdivisions >= spec.max_subdivisions {
            return Err(QuadratureError::NoConvergence {
                subdivisions,
                value: total,
                error: total_err,
            });
        }
        let worst = heap.pop().expect("heap holds every panel");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            // Panel cannot be split any further in floating point.
            return Err(QuadratureError::NoConvergence {
                subdivisions,
                value: total,
                error: total_err,
            });
        }
        let left = gk21(&g, worst.a, mid);
        let right = gk21(&g, mid, worst.b);
        total += left.value + right.value - worst.value;
        total_err += left.error + right.error - worst.error;
        heap.push(left);
        heap.push(right);
        subdivisions += 1;
        if subdivisions % 16 == 0 {
            // Re-sum to keep the running totals free of drift.
            total = heap.iter().map(|p| p.value).sum();
            total_err = heap.iter().map(|p| p.error).sum();
        }
    }
}

/// `∫_a^b g(y) |y - s|^{-γ} dy` with `s` the chosen endpoint.
///
/// Uses `u = |y - s|^{1-γ}`, under which the weight becomes the constant
/// `1/(1-γ)`.
pub fn integrate_endpoint_singular<F: Fn(f64) -> f64>(
    g: F,
    a: f64,
    b: f64,
    end: SingularEnd,
    gamma: f64,
    spec: &QuadratureSpec,
) -> Result<f64> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(QuadratureError::InvalidExponent { gamma });
    }
    if !(a.is_finite() && b.is_finite()) || a > b {
        return Err(QuadratureError::InvalidInterval { a, b });
    }
    if a == b {
        return Ok(0.0);
    }
    let expo = 1.0 / (1.0 - gamma);
    let u_max = (b - a).powf(1.0 - gamma);
    let scale = 1.0 / (1.0 - gamma);
    let value = match end {
        SingularEnd::Left => integrate_smooth(|u| g(a + u.powf(expo)), 0.0, u_max, spec)?,
        SingularEnd::Right => integrate_smooth(|u| g(b - u.powf(expo)), 0.0, u_max, spec)?,
    };
    Ok(scale * value)
}

/// `∫_R^∞ g(y) dy` for integrands with `g(y)·y^β` bounded, `β > 1`.
pub fn integrate_tail<F: Fn(f64) -> f64>(g: F, r: f64, beta: f64, spec: &QuadratureSpec) -> Result<f64> {
    if !(beta > 1.0) {
        return Err(QuadratureError::DivergentTail { beta });
    }
    if !(r > 0.0 && r.is_finite()) {
        return Err(QuadratureError::InvalidInterval { a: r, b: f64::INFINITY });
    }
    if beta < 2.0 {
        // ∫_0^1 g(R/t) R t^{-2} dt = ∫_0^1 [g(R/t) R t^{-β}] t^{β-2} dt
        let h = |t: f64| {
            let y = r / t;
            g(y) * r * t.powf(-beta)
        };
        integrate_endpoint_singular(h, 0.0, 1.0, SingularEnd::Left, 2.0 - beta, spec)
    } else {
        let h = |t: f64| {
            let y = r / t;
            g(y) * r / (t * t)
        };
        integrate_smooth(h, 0.0, 1.0, spec)
    }
}

/// Gauss-Legendre rule on `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "Gauss-Legendre rule needs at least one node");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        for i in 0..m {
            let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let mut p0 = 1.0;
                let mut p1 = 0.0;
                for k in 0..n {
                    let p2 = p1;
                    p1 = p0;
                    p0 = ((2 * k + 1) as f64 * z * p1 - k as f64 * p2) / (k + 1) as f64;
                }
                dp = n as f64 * (z * p0 - p1) / (z * z - 1.0);
                let dz = p0 / dp;
                z -= dz;
                if dz.abs() < 1e-16 {
                    break;
                }
            }
            let w = 2.0 / ((1.0 - z * z) * dp * dp);
            nodes[i] = -z;
            nodes[n - 1 - i] = z;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        Self { nodes, weights }
    }

    /// Apply the rule to `[a, b]`.
    #[inline]
    pub fn integrate<F: FnMut(f64) -> f64>(&self, mut g: F, a: f64, b: f64) -> f64 {
        let c = 0.5 * (a + b);
        let h = 0.5 * (b - a);
        let mut sum = 0.0;
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            sum += w * g(c + h * x);
        }
        sum * h
    }
}

/// Largest cached Gauss-Legendre order.
pub const MAX_CACHED_ORDER: usize = 32;

/// Shared Gauss-Legendre rules of order `1..=MAX_CACHED_ORDER`.
pub fn gauss_legendre(n: usize) -> &'static GaussLegendre {
    static RULES: OnceLock<Vec<GaussLegendre>> = OnceLock::new();
    let rules = RULES.get_or_init(|| (1..=MAX_CACHED_ORDER).map(GaussLegendre::new).collect());
    &rules[n.clamp(1, MAX_CACHED_ORDER) - 1]
}

/// Gauss-Legendre order needed for an integrand analytic except at a point at
/// normalized distance `d > 1` (in half-widths) from the interval center,
/// targeting roughly `1e-13` relative accuracy.
pub fn order_for_distance(d: f64) -> usize {
    if d <= 1.0 {
        return MAX_CACHED_ORDER;
    }
    let rho = d + (d * d - 1.0).sqrt();
    let n = (13.0 * std::f64::consts::LN_10 / (2.0 * rho.ln())).ceil() as usize;
    n.clamp(2, MAX_CACHED_ORDER)
}

/// Points `a = p_0 < p_1 < ... = b` with ratio at most `ratio` between
/// neighbours, for integrands varying on every scale of a wide interval.
pub fn geometric_breaks(a: f64, b: f64, ratio: f64) -> Vec<f64> {
    debug_assert!(a > 0.0 && b > a && ratio > 1.0);
    let mut out = vec![a];
    let mut p = a;
    while p * ratio < b {
        p *= ratio;
        out.push(p);
    }
    out.push(b);
    out
}
