//! Post-hoc checks on solver output and standalone operators.
//!
//! Every check is a pure function of its inputs and returns a
//! [`VerificationReport`]; failing a check is a report outcome, not an error.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::barrier::{self, Barrier, BarrierError};
use crate::biot_savart::{self, BiotSavartError, KernelKind, RegKernel};
use crate::model::{ModelError, ModelParams, OddProfile, TailLaw};
use crate::quadrature::QuadratureSpec;
use crate::transport::{DiagnosticsRecord, Snapshot};

#[derive(Debug, Error)]
pub enum VerificationError {
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("nonpositive origin slope {value} in diagnostics record {index}")]
    NonPositiveSlope { index: usize, value: f64 },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Velocity(#[from] BiotSavartError),
    #[error(transparent)]
    Barrier(#[from] BarrierError),
}

pub type Result<T> = std::result::Result<T, VerificationError>;

/// Where a check first failed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViolationLocus {
    pub t: Option<f64>,
    pub x: Option<f64>,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub check: String,
    pub status: Status,
    pub measured: BTreeMap<String, f64>,
    /// Per-sample series where a scalar summary is not enough.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub series: BTreeMap<String, Vec<f64>>,
    pub violation: Option<ViolationLocus>,
}

impl VerificationReport {
    fn new(check: &str) -> Self {
        Self {
            check: check.to_string(),
            status: Status::Pass,
            measured: BTreeMap::new(),
            series: BTreeMap::new(),
            violation: None,
        }
    }

    pub fn passed(&self) -> bool {
        self.status == Status::Pass
    }

    fn set(&mut self, key: &str, value: f64) {
        self.measured.insert(key.to_string(), value);
    }

    fn fail(&mut self) {
        self.status = Status::Fail;
    }
}

/// Piecewise-cubic interpolant through logged particle values. The tail is
/// held constant; only interior pieces are sampled from it.
fn snapshot_interpolant(s: &Snapshot) -> Result<OddProfile> {
    let last = *s.values.last().unwrap();
    let tail = TailLaw {
        coefficient: 0.0,
        exponent: 0.0,
        shift: 0.0,
        offset: last,
    };
    Ok(OddProfile::new(s.positions.clone(), s.values.clone(), tail)?)
}

/// Minimum of `ω - φ` over nodes and interior midpoints of one snapshot.
fn snapshot_margin(s: &Snapshot, barrier: &Barrier) -> Result<(f64, f64)> {
    let t = s.time.min(barrier.t_singular);
    let mut worst = (f64::INFINITY, f64::NAN);
    for (&x, &w) in s.positions.iter().zip(&s.values).skip(1) {
        let m = w - barrier.phi(t, x)?;
        if m < worst.0 {
            worst = (m, x);
        }
    }
    if s.positions.len() > 2 {
        let interp = snapshot_interpolant(s)?;
        let n = s.positions.len();
        for w in s.positions[..n - 1].windows(2) {
            let x = 0.5 * (w[0] + w[1]);
            let m = interp.eval(x) - barrier.phi(t, x)?;
            if m < worst.0 {
                worst = (m, x);
            }
        }
    }
    Ok(worst)
}

/// Checks `ω(t,x) > φ(t,x)` for `x > 0` on every snapshot, at nodes and
/// interior midpoints. On failure `T*` is the first crossing time.
///
/// Also reports the margin at the outermost particle against the lower
/// bound `(1+ε)φ(0,X₀) - (X₀+a₀)^p` it must respect.
pub fn verify_barrier_dominance(snapshots: &[Snapshot], barrier: &Barrier, params: &ModelParams) -> Result<VerificationReport> {
    if snapshots.len() < 2 {
        return Err(VerificationError::InsufficientData(format!(
            "dominance needs at least 2 snapshots, got {}",
            snapshots.len()
        )));
    }
    let margins: Vec<(f64, f64)> = snapshots
        .par_iter()
        .map(|s| snapshot_margin(s, barrier))
        .collect::<Result<_>>()?;
    let mut report = VerificationReport::new("verify_barrier_dominance");
    let min = margins.iter().map(|m| m.0).fold(f64::INFINITY, f64::min);
    report.set("min_margin", min);
    report.set("snapshots", snapshots.len() as f64);
    if let Some((k, m)) = margins.iter().enumerate().find(|(_, m)| !(m.0 > 0.0)) {
        report.fail();
        report.set("t_star", snapshots[k].time);
        report.violation = Some(ViolationLocus {
            t: Some(snapshots[k].time),
            x: Some(m.1),
            value: m.0,
        });
    }

    let first = &snapshots[0];
    let x0 = *first.positions.last().unwrap();
    let p = params.p;
    let bound = (1.0 + params.margin_epsilon) * barrier::phi_value(barrier.a0, p, x0) - (x0 + barrier.a0).powf(p);
    let mut tail_min = f64::INFINITY;
    for s in snapshots {
        let t = s.time.min(barrier.t_singular);
        let x = *s.positions.last().unwrap();
        tail_min = tail_min.min(s.values.last().unwrap() - barrier.phi(t, x)?);
    }
    report.set("tail_gap_bound", bound);
    report.set("tail_margin_min", tail_min);
    report.series.insert("min_margin_per_snapshot".into(), margins.iter().map(|m| m.0).collect());
    Ok(report)
}

/// Analytic test profiles for [`verify_velocity_bounds`], all of growth `q`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum TestFunction {
    /// `x (1+x)^{q-1}`
    ShiftedPower,
    /// `(x+a)^q - a^q`
    Barrier { a: f64 },
    /// `x (1+x²)^{(q-1)/2}`
    SmoothRational,
    /// `0`
    Zero,
}

impl TestFunction {
    pub fn name(&self) -> String {
        match self {
            Self::ShiftedPower => "shifted_power".into(),
            Self::Barrier { a } => format!("barrier_a{a}"),
            Self::SmoothRational => "smooth_rational".into(),
            Self::Zero => "zero".into(),
        }
    }

    pub fn profile(&self, q: f64, nodes: Vec<f64>) -> Result<OddProfile> {
        let x_n = *nodes.last().unwrap();
        let prof = match *self {
            Self::ShiftedPower => {
                let f = move |x: f64| x * (1.0 + x).powf(q - 1.0);
                let tail = TailLaw {
                    coefficient: 1.0,
                    exponent: q,
                    shift: 1.0,
                    offset: f(x_n) - (1.0 + x_n).powf(q),
                };
                OddProfile::sample(nodes, f, |x| (1.0 + x).powf(q - 2.0) * (1.0 + q * x), tail)?
            }
            Self::Barrier { a } => {
                if !(a > 0.0) {
                    return Err(VerificationError::InvalidInput(format!("barrier scale a = {a} must be positive")));
                }
                let tail = TailLaw {
                    coefficient: 1.0,
                    exponent: q,
                    shift: a,
                    offset: -a.powf(q),
                };
                OddProfile::sample(nodes, |x| barrier::phi_value(a, q, x), |x| barrier::phi_x(a, q, x), tail)?
            }
            Self::SmoothRational => {
                let m = 0.5 * (q - 1.0);
                let f = move |x: f64| x * (1.0 + x * x).powf(m);
                let df = move |x: f64| {
                    let s = 1.0 + x * x;
                    s.powf(m) + 2.0 * m * x * x * s.powf(m - 1.0)
                };
                let tail = TailLaw {
                    coefficient: 1.0,
                    exponent: q,
                    shift: 0.0,
                    offset: f(x_n) - x_n.powf(q),
                };
                OddProfile::sample(nodes, f, df, tail)?
            }
            Self::Zero => OddProfile::zero(nodes)?,
        };
        Ok(prof)
    }

    /// `ω_xx` as an odd profile, for members whose second derivative
    /// vanishes at the origin.
    pub fn second_derivative(&self, q: f64, nodes: Vec<f64>) -> Result<Option<OddProfile>> {
        match *self {
            Self::SmoothRational => {
                let m = 0.5 * (q - 1.0);
                let f2 = move |x: f64| {
                    let s = 1.0 + x * x;
                    6.0 * m * x * s.powf(m - 1.0) + 4.0 * m * (m - 1.0) * x.powi(3) * s.powf(m - 2.0)
                };
                let x_n = *nodes.last().unwrap();
                let values: Vec<f64> = nodes.iter().map(|&x| f2(x)).collect();
                let tail = TailLaw {
                    coefficient: f2(x_n) / x_n.powf(q - 2.0),
                    exponent: q - 2.0,
                    shift: 0.0,
                    offset: 0.0,
                };
                Ok(Some(OddProfile::new(nodes, values, tail)?))
            }
            Self::Zero => Ok(Some(OddProfile::zero(nodes)?)),
            _ => Ok(None),
        }
    }
}

/// The default three-member family.
pub fn default_test_family() -> Vec<TestFunction> {
    vec![TestFunction::ShiftedPower, TestFunction::Barrier { a: 1.0 }, TestFunction::SmoothRational]
}

/// Node layout for the velocity-bound measurements.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormGrid {
    pub n: usize,
    pub x_max: f64,
    pub grading_power: f64,
}

impl Default for NormGrid {
    fn default() -> Self {
        Self {
            n: 256,
            x_max: 50.0,
            grading_power: 3.0,
        }
    }
}

/// Points where velocity norms are sampled: positive nodes plus a geometric
/// run out to `100 x_N`.
fn norm_points(nodes: &[f64]) -> Vec<f64> {
    let x_n = *nodes.last().unwrap();
    let mut pts: Vec<f64> = nodes[1..].to_vec();
    pts.extend((1..=24).map(|k| x_n * 100f64.powf(k as f64 / 24.0)));
    pts
}

fn weighted_sup(xs: &[f64], vals: &[f64], s: f64) -> f64 {
    xs.iter().zip(vals).map(|(&x, v)| v.abs() * (1.0 + x).powf(-s)).fold(0.0, f64::max)
}

/// `[line1, line2, line3]` ratios for one profile; `None` entries are
/// skipped (0/0 or unavailable).
fn bound_ratios(f: TestFunction, q: f64, gamma: f64, grid: NormGrid, spec: &QuadratureSpec) -> Result<[Option<f64>; 3]> {
    let nodes = crate::model::graded_nodes(grid.n, grid.x_max, grid.grading_power);
    let omega = f.profile(q, nodes.clone())?;
    let pts = norm_points(&nodes);
    let ratio = |num: f64, den: f64| if den > 0.0 { Some(num / den) } else { None };

    let u = biot_savart::velocity_field(&omega, &pts, gamma, spec)?;
    let r1 = ratio(weighted_sup(&pts, &u, 1.0 - gamma + q), omega.weighted_norm(q)?);

    let d = omega.derivative()?;
    let ux: Vec<f64> = pts
        .par_iter()
        .map(|&x| biot_savart::velocity_x(&d, x, gamma, spec))
        .collect::<std::result::Result<_, _>>()?;
    let ux0 = biot_savart::velocity_x_origin(&omega, gamma, spec)?;
    let mut pts_x = vec![0.0];
    pts_x.extend_from_slice(&pts);
    let mut ux_all = vec![ux0];
    ux_all.extend(ux);
    let r2 = ratio(weighted_sup(&pts_x, &ux_all, q - gamma), d.weighted_norm(q - 1.0)?);

    let r3 = match f.second_derivative(q, nodes)? {
        None => None,
        Some(w2) => {
            let uxx = biot_savart::velocity_field(&w2, &pts, gamma, spec)?;
            ratio(weighted_sup(&pts, &uxx, q - gamma - 1.0), w2.weighted_norm(q - 2.0)?)
        }
    };
    Ok([r1, r2, r3])
}

/// Measures `‖u‖_{1-γ+q}/‖ω‖_q`, `‖u_x‖_{q-γ}/‖ω_x‖_{q-1}` and, for
/// members with an odd second derivative, `‖u_xx‖_{q-γ-1}/‖ω_xx‖_{q-2}`,
/// at `grid.n` and `2 grid.n` nodes. Passes when every line is finite and
/// its maximum moves by at most 5% under refinement.
///
/// For the barrier member with `a = 1` the first line is compared with
/// `∫₀^∞ K(1,z)(1+z)^q dz`.
pub fn verify_velocity_bounds(
    family: &[TestFunction],
    q: f64,
    gamma: f64,
    grid: NormGrid,
    spec: &QuadratureSpec,
) -> Result<VerificationReport> {
    if !(q < gamma) {
        return Err(VerificationError::InvalidInput(format!("tail exponent q = {q} must be below gamma = {gamma}")));
    }
    let fine = NormGrid { n: 2 * grid.n, ..grid };
    let mut report = VerificationReport::new("verify_velocity_bounds");
    let mut max_coarse = [None::<f64>; 3];
    let mut max_fine = [None::<f64>; 3];
    let upd = |m: &mut Option<f64>, v: Option<f64>| {
        if let Some(v) = v {
            *m = Some(m.map_or(v, |c: f64| c.max(v)));
        }
    };
    for &f in family {
        let rc = bound_ratios(f, q, gamma, grid, spec)?;
        let rf = bound_ratios(f, q, gamma, fine, spec)?;
        for line in 0..3 {
            upd(&mut max_coarse[line], rc[line]);
            upd(&mut max_fine[line], rf[line]);
            if let Some(v) = rf[line] {
                report.set(&format!("{}_line{}", f.name(), line + 1), v);
            }
        }
        if f == (TestFunction::Barrier { a: 1.0 }) {
            let c = first_line_constant(q, gamma, spec)?;
            report.set("first_line_constant", c);
            if let Some(r) = rf[0] {
                if !(r <= c) {
                    report.fail();
                    report.violation.get_or_insert(ViolationLocus {
                        t: None,
                        x: None,
                        value: r - c,
                    });
                }
            }
        }
    }
    for line in 0..3 {
        let key = format!("line{}", line + 1);
        match (max_coarse[line], max_fine[line]) {
            (Some(c), Some(f)) => {
                let change = (f - c).abs() / f.abs().max(f64::MIN_POSITIVE);
                report.set(&format!("{key}_max_ratio"), f);
                report.set(&format!("{key}_refinement_change"), change);
                if !(f.is_finite() && change <= 0.05) {
                    report.fail();
                    report.violation.get_or_insert(ViolationLocus {
                        t: None,
                        x: None,
                        value: change,
                    });
                }
            }
            _ => {
                report.set(&format!("{key}_skipped"), 1.0);
            }
        }
    }
    Ok(report)
}

/// `∫₀^∞ K(1,z)(1+z)^q dz`.
pub fn first_line_constant(q: f64, gamma: f64, spec: &QuadratureSpec) -> Result<f64> {
    let law = TailLaw {
        coefficient: 1.0,
        exponent: q,
        shift: 1.0,
        offset: 0.0,
    };
    Ok(biot_savart::law_transform(&law, 0.0, 1.0, gamma, KernelKind::Odd, spec)?)
}

/// Compares `Δ ln ω_x(0)` with the trapezoidal integral of the logged
/// `-u_x(0)`; passes when the relative deviation is at most `threshold`.
///
/// With a barrier, also checks `-u_x[ω](0) ≥ -u_x[φ](0) = a^{p-γ} U'(0)`
/// along the run.
pub fn verify_origin_slope_ode(
    records: &[DiagnosticsRecord],
    threshold: f64,
    comparison: Option<(&Barrier, f64, &QuadratureSpec)>,
) -> Result<VerificationReport> {
    if records.len() < 10 {
        return Err(VerificationError::InsufficientData(format!(
            "slope check needs at least 10 diagnostics records, got {}",
            records.len()
        )));
    }
    let mut report = VerificationReport::new("verify_origin_slope_ode");
    let all_zero = records.iter().all(|r| r.slope_origin == 0.0 && r.neg_ux_origin == 0.0);
    if all_zero {
        report.set("delta_log_slope", 0.0);
        report.set("integral_neg_ux", 0.0);
        report.set("relative_deviation", 0.0);
        return Ok(report);
    }
    if let Some((index, r)) = records.iter().enumerate().find(|(_, r)| !(r.slope_origin > 0.0)) {
        return Err(VerificationError::NonPositiveSlope {
            index,
            value: r.slope_origin,
        });
    }
    let first = records.first().unwrap();
    let last = records.last().unwrap();
    let lhs = (last.slope_origin / first.slope_origin).ln();
    let rhs: f64 = records
        .windows(2)
        .map(|w| 0.5 * (w[1].time - w[0].time) * (w[0].neg_ux_origin + w[1].neg_ux_origin))
        .sum();
    let dev = (lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(f64::MIN_POSITIVE);
    report.set("delta_log_slope", lhs);
    report.set("integral_neg_ux", rhs);
    report.set("relative_deviation", dev);
    report.set("threshold", threshold);
    if !(dev <= threshold) {
        report.fail();
        report.violation = Some(ViolationLocus {
            t: Some(last.time),
            x: Some(0.0),
            value: dev,
        });
    }
    if let Some((b, gamma, spec)) = comparison {
        let up0 = barrier::u_prime_zero(gamma, b.p, spec)?;
        let mut gap_min = f64::INFINITY;
        let mut at = None;
        for r in records {
            if r.time >= b.t_singular {
                break;
            }
            let a = b.solve_a(r.time)?;
            let gap = r.neg_ux_origin - a.powf(b.p - gamma) * up0;
            if gap < gap_min {
                gap_min = gap;
                at = Some(r.time);
            }
        }
        report.set("min_comparison_gap", gap_min);
        if !(gap_min >= 0.0) {
            report.fail();
            report.violation.get_or_insert(ViolationLocus {
                t: at,
                x: Some(0.0),
                value: gap_min,
            });
        }
    }
    Ok(report)
}

/// Finite-difference `∂_x v_ε` at `x` (one-sided through oddness at 0).
fn regularized_slope(op: &biot_savart::VelocityOperator, x: f64, k: &RegKernel) -> Result<f64> {
    let h = 1e-3 * k.reg_epsilon;
    if x == 0.0 {
        Ok(op.regularized_velocity(h, k)? / h)
    } else {
        let h = h.min(0.5 * x);
        Ok((op.regularized_velocity(x + h, k)? - op.regularized_velocity(x - h, k)?) / (2.0 * h))
    }
}

/// Reports `|v_ε - u|` per `(x, ε)`, the least-squares order of the error in
/// `ε` at each `x`, and the ratio `‖∂_x v_ε‖_{p-γ}/‖ω‖_p` sampled at the
/// origin and the given points.
///
/// Passes when every fitted order lies within `1-γ ± 0.2`, the error
/// decreases strictly with `ε` and the ratio increases as `ε` decreases.
pub fn verify_regularization_convergence(
    omega: &OddProfile,
    xs: &[f64],
    eps: &[f64],
    gamma: f64,
    p: f64,
    spec: &QuadratureSpec,
) -> Result<VerificationReport> {
    if eps.len() < 4 || eps.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(VerificationError::InvalidInput("eps sequence must be strictly decreasing with at least 4 values".into()));
    }
    if xs.is_empty() || xs.iter().any(|&x| !(x > 0.0)) {
        return Err(VerificationError::InvalidInput("x samples must be positive".into()));
    }
    let op = biot_savart::VelocityOperator::new(omega, gamma, spec)?;
    let kernels: Vec<RegKernel> = eps.iter().map(|&e| RegKernel::new(e, gamma)).collect::<std::result::Result<_, _>>()?;
    let mut report = VerificationReport::new("verify_regularization_convergence");
    let target = 1.0 - gamma;
    report.set("expected_order", target);

    for &x in xs {
        let u = op.velocity(x)?;
        let errs: Vec<f64> = kernels
            .par_iter()
            .map(|k| Ok((op.regularized_velocity(x, k)? - u).abs()))
            .collect::<Result<_>>()?;
        let order = fitted_order(eps, &errs);
        report.set(&format!("order_x{x}"), order);
        report.series.insert(format!("error_x{x}"), errs.clone());
        if !((order - target).abs() <= 0.2) {
            report.fail();
            report.violation.get_or_insert(ViolationLocus {
                t: None,
                x: Some(x),
                value: order,
            });
        }
        if let Some(k) = errs.windows(2).position(|w| !(w[1] < w[0])) {
            report.fail();
            report.violation.get_or_insert(ViolationLocus {
                t: None,
                x: Some(x),
                value: eps[k + 1],
            });
        }
    }

    let norm = omega.weighted_norm(p)?;
    let mut pts = vec![0.0];
    pts.extend_from_slice(xs);
    let lips: Vec<f64> = kernels
        .par_iter()
        .map(|k| {
            let mut sup: f64 = 0.0;
            for &x in &pts {
                sup = sup.max(regularized_slope(&op, x, k)?.abs() * (1.0 + x).powf(gamma - p));
            }
            Ok(if norm > 0.0 { sup / norm } else { 0.0 })
        })
        .collect::<Result<_>>()?;
    if norm > 0.0 {
        if let Some(k) = lips.windows(2).position(|w| !(w[1] > w[0])) {
            report.fail();
            report.violation.get_or_insert(ViolationLocus {
                t: None,
                x: None,
                value: eps[k + 1],
            });
        }
    }
    report.series.insert("lipschitz_ratio".into(), lips);
    report.series.insert("eps".into(), eps.to_vec());
    Ok(report)
}

/// Least-squares slope of `ln err` against `ln ε`.
pub fn fitted_order(eps: &[f64], errs: &[f64]) -> f64 {
    let n = eps.len() as f64;
    let lx: Vec<f64> = eps.iter().map(|e| e.ln()).collect();
    let ly: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Empirical constant `K̂ = max_i rate_i / ‖ω‖_p²` for the interval between
/// two snapshots, with `rate_i` the finite-difference rate of
/// `(1+X_i)^{-p} ω_i`. Also returns the smallest signed rate.
fn interval_constant(a: &Snapshot, b: &Snapshot, p: f64) -> (f64, f64) {
    let dt = b.time - a.time;
    let w = |x: f64, v: f64| (1.0 + x).powf(-p) * v;
    let mut max_rate: f64 = 0.0;
    let mut min_signed = f64::INFINITY;
    let mut norm: f64 = 0.0;
    for i in 0..a.positions.len() {
        let r = (w(b.positions[i], b.values[i]) - w(a.positions[i], a.values[i])) / dt;
        max_rate = max_rate.max(r.abs());
        min_signed = min_signed.min(r);
        norm = norm.max(w(a.positions[i], a.values[i]).abs()).max(w(b.positions[i], b.values[i]).abs());
    }
    let k = if max_rate == 0.0 { 0.0 } else { max_rate / (norm * norm) };
    (k, min_signed)
}

/// Finite-difference rates of `(1+X_i)^{-p}ω_i` along logged trajectories
/// and the empirical constant `K̂`; passes when the maxima of `K̂` over the
/// first and second halves of the run agree within 10%.
pub fn apriori_monitor(snapshots: &[Snapshot], params: &ModelParams) -> Result<VerificationReport> {
    if snapshots.len() < 3 {
        return Err(VerificationError::InsufficientData(format!(
            "trajectory monitor needs at least 3 snapshots, got {}",
            snapshots.len()
        )));
    }
    let mut report = VerificationReport::new("apriori_monitor");
    let per: Vec<(f64, f64)> = snapshots
        .par_windows(2)
        .filter(|w| w[1].time > w[0].time)
        .map(|w| interval_constant(&w[0], &w[1], params.p))
        .collect();
    if per.len() < 2 {
        return Err(VerificationError::InsufficientData("fewer than 2 distinct snapshot intervals".into()));
    }
    let half = per.len() / 2;
    let k1 = per[..half].iter().map(|v| v.0).fold(0.0, f64::max);
    let k2 = per[half..].iter().map(|v| v.0).fold(0.0, f64::max);
    let min_signed = per.iter().map(|v| v.1).fold(f64::INFINITY, f64::min);
    report.set("k_first_half", k1);
    report.set("k_second_half", k2);
    report.set("k_hat", k1.max(k2));
    report.set("min_signed_rate", min_signed);
    let change = if k1 == 0.0 && k2 == 0.0 { 0.0 } else { (k2 - k1).abs() / k1.max(k2) };
    report.set("relative_change", change);
    if !(change <= 0.1) {
        report.fail();
        report.violation = Some(ViolationLocus {
            t: Some(snapshots[snapshots.len() / 2].time),
            x: None,
            value: change,
        });
    }
    report.series.insert("k_per_interval".into(), per.iter().map(|v| v.0).collect());
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::graded_nodes;

    fn default_barrier() -> (ModelParams, Barrier) {
        let params = ModelParams::barrier_mode(0.5, 0.5).unwrap();
        (params, Barrier::new(0.5, 1.748, 0.25).unwrap())
    }

    fn record(time: f64, slope: f64, neg_ux: f64) -> DiagnosticsRecord {
        DiagnosticsRecord {
            time,
            slope_origin: slope,
            norm_p: 1.0,
            norm_x_pm1: 1.0,
            barrier_margin: 1.0,
            dt: 0.01,
            velocity_min: 0.0,
            neg_ux_origin: neg_ux,
        }
    }

    #[test]
    fn data_below_barrier_fails_at_start() {
        let (params, b) = default_barrier();
        let xs: Vec<f64> = (0..=100).map(|i| 0.05 * i as f64).collect();
        let snaps: Vec<Snapshot> = [0.0, 0.01]
            .iter()
            .map(|&t| Snapshot {
                time: t,
                positions: xs.clone(),
                values: xs.iter().map(|&x| 0.5 * barrier::phi_value(0.5, 0.25, x)).collect(),
                phi: vec![f64::NAN; xs.len()],
            })
            .collect();
        let r = verify_barrier_dominance(&snaps, &b, &params).unwrap();
        assert!(!r.passed());
        assert_eq!(r.measured["t_star"], 0.0);
        assert_eq!(r.violation.unwrap().t, Some(0.0));
    }

    #[test]
    fn synthetic_crossing_is_located() {
        let (params, b) = default_barrier();
        let (t_star, x_star) = (0.035, 1.0);
        let xs: Vec<f64> = (0..=100).map(|i| 0.05 * i as f64).collect();
        let snaps: Vec<Snapshot> = (0..8)
            .map(|k| {
                let t = 0.01 * k as f64;
                let values = xs
                    .iter()
                    .map(|&x| {
                        if x == 0.0 {
                            0.0
                        } else {
                            b.phi(t, x).unwrap() + (x - x_star).powi(2) + (t_star - t)
                        }
                    })
                    .collect();
                Snapshot {
                    time: t,
                    positions: xs.clone(),
                    values,
                    phi: vec![0.0; xs.len()],
                }
            })
            .collect();
        let r = verify_barrier_dominance(&snaps, &b, &params).unwrap();
        assert!(!r.passed());
        let t_found = r.measured["t_star"];
        assert!(t_found >= t_star && t_found - t_star <= 0.01, "{t_found}");
        let v = r.violation.unwrap();
        assert!((v.x.unwrap() - x_star).abs() <= 0.05);
    }

    #[test]
    fn dominance_needs_two_snapshots() {
        let (params, b) = default_barrier();
        let s = Snapshot {
            time: 0.0,
            positions: vec![0.0, 1.0],
            values: vec![0.0, 5.0],
            phi: vec![0.0, 0.0],
        };
        assert!(matches!(
            verify_barrier_dominance(&[s], &b, &params),
            Err(VerificationError::InsufficientData(_))
        ));
    }

    #[test]
    fn zero_family_is_vacuous() {
        let spec = QuadratureSpec::default();
        let grid = NormGrid {
            n: 64,
            ..NormGrid::default()
        };
        let r = verify_velocity_bounds(&[TestFunction::Zero], 0.25, 0.5, grid, &spec).unwrap();
        assert!(r.passed());
        for line in 1..=3 {
            assert_eq!(r.measured[&format!("line{line}_skipped")], 1.0);
        }
    }

    #[test]
    fn divergent_norm_inputs_rejected() {
        let spec = QuadratureSpec::default();
        assert!(verify_velocity_bounds(&default_test_family(), 0.5, 0.5, NormGrid::default(), &spec).is_err());
    }

    #[test]
    fn second_derivative_matches_finite_differences() {
        let q = 0.25;
        let nodes = graded_nodes(64, 50.0, 2.0);
        let f = TestFunction::SmoothRational.profile(q, nodes.clone()).unwrap();
        let f2 = TestFunction::SmoothRational.second_derivative(q, nodes).unwrap().unwrap();
        let m = 0.5 * (q - 1.0);
        let w = |x: f64| x * (1.0 + x * x).powf(m);
        for x in [0.3, 1.0, 4.0] {
            let h = 1e-4;
            let fd = (w(x + h) - 2.0 * w(x) + w(x - h)) / (h * h);
            assert!((f2.eval(x) - fd).abs() < 1e-3 * (1.0 + fd.abs()), "x = {x}");
        }
        assert!(f.eval(1.0) > 0.0);
        assert!(TestFunction::Barrier { a: 1.0 }.second_derivative(q, vec![0.0, 1.0]).unwrap().is_none());
    }

    #[test]
    fn slope_ode_zero_solution_passes() {
        let recs: Vec<_> = (0..12).map(|k| record(0.1 * k as f64, 0.0, 0.0)).collect();
        let r = verify_origin_slope_ode(&recs, 0.02, None).unwrap();
        assert!(r.passed());
        assert_eq!(r.measured["relative_deviation"], 0.0);
    }

    #[test]
    fn slope_ode_exact_exponential() {
        // S = exp(t²), -u_x(0) = 2t
        let recs: Vec<_> = (0..=40)
            .map(|k| {
                let t = 0.025 * k as f64;
                record(t, (t * t).exp(), 2.0 * t)
            })
            .collect();
        let r = verify_origin_slope_ode(&recs, 0.02, None).unwrap();
        assert!(r.passed());
        assert!(r.measured["relative_deviation"] < 1e-3);
        let bad: Vec<_> = recs.iter().map(|r| DiagnosticsRecord { neg_ux_origin: 1.1 * r.neg_ux_origin, ..*r }).collect();
        assert!(!verify_origin_slope_ode(&bad, 0.02, None).unwrap().passed());
    }

    #[test]
    fn slope_ode_preconditions() {
        let few: Vec<_> = (0..5).map(|k| record(0.1 * k as f64, 1.0, 0.0)).collect();
        assert!(matches!(verify_origin_slope_ode(&few, 0.02, None), Err(VerificationError::InsufficientData(_))));
        let mut recs: Vec<_> = (0..12).map(|k| record(0.1 * k as f64, 1.0, 0.0)).collect();
        recs[4].slope_origin = -1.0;
        assert!(matches!(
            verify_origin_slope_ode(&recs, 0.02, None),
            Err(VerificationError::NonPositiveSlope { index: 4, .. })
        ));
    }

    #[test]
    fn regularization_exact_away_from_support() {
        let spec = QuadratureSpec::default();
        // Odd bump supported in [3, 4].
        let nodes: Vec<f64> = (0..=400).map(|i| 0.0125 * i as f64).collect();
        let bump = |x: f64| if x > 3.0 && x < 4.0 { ((x - 3.0) * (4.0 - x)).powi(4) } else { 0.0 };
        let dbump = |x: f64| {
            if x > 3.0 && x < 4.0 {
                4.0 * ((x - 3.0) * (4.0 - x)).powi(3) * (7.0 - 2.0 * x)
            } else {
                0.0
            }
        };
        let omega = OddProfile::sample(nodes, bump, dbump, TailLaw::ZERO).unwrap();
        let r = verify_regularization_convergence(&omega, &[1.0, 2.5], &[0.4, 0.2, 0.1, 0.05], 0.5, 0.25, &spec).unwrap();
        for key in ["error_x1", "error_x2.5"] {
            for e in &r.series[key] {
                assert!(*e < 1e-10, "{key}: {e}");
            }
        }
    }

    #[test]
    fn regularization_order_on_barrier_profile() {
        let spec = QuadratureSpec::default();
        let (a, p) = (0.5, 0.25);
        let tail = TailLaw {
            coefficient: 1.0,
            exponent: p,
            shift: a,
            offset: -a.powf(p),
        };
        let omega = OddProfile::sample(
            graded_nodes(256, 50.0, 3.0),
            |x| barrier::phi_value(a, p, x),
            |x| barrier::phi_x(a, p, x),
            tail,
        )
        .unwrap();
        let r = verify_regularization_convergence(&omega, &[1.0], &[0.2, 0.1, 0.05, 0.025], 0.5, p, &spec).unwrap();
        assert!(r.passed(), "{r:?}");
        let order = r.measured["order_x1"];
        assert!((0.3..=0.7).contains(&order));
        assert!(verify_regularization_convergence(&omega, &[1.0], &[0.2, 0.1, 0.05], 0.5, p, &spec).is_err());
        assert!(verify_regularization_convergence(&omega, &[1.0], &[0.2, 0.1, 0.1, 0.05], 0.5, p, &spec).is_err());
    }

    #[test]
    fn fitted_order_of_power_law() {
        let eps = [0.2, 0.1, 0.05, 0.025];
        let errs: Vec<f64> = eps.iter().map(|e: &f64| 3.0 * e.powf(0.37)).collect();
        assert!((fitted_order(&eps, &errs) - 0.37).abs() < 1e-12);
    }

    #[test]
    fn apriori_zero_solution_passes() {
        let (params, _) = default_barrier();
        let xs: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let snaps: Vec<Snapshot> = (0..5)
            .map(|k| Snapshot {
                time: 0.1 * k as f64,
                positions: xs.clone(),
                values: vec![0.0; xs.len()],
                phi: vec![0.0; xs.len()],
            })
            .collect();
        let r = apriori_monitor(&snaps, &params).unwrap();
        assert!(r.passed());
        assert_eq!(r.measured["k_hat"], 0.0);
    }

    #[test]
    fn reports_serialize() {
        let mut r = VerificationReport::new("x");
        r.set("a", 1.5);
        r.fail();
        let s = serde_json::to_string(&r).unwrap();
        assert!(s.contains("\"status\":\"fail\""));
        let back: VerificationReport = serde_json::from_str(&s).unwrap();
        assert_eq!(back, r);
    }
}
