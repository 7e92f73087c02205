//! Lagrangian particle solver and Picard iteration on the regularized flow
//! map.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::barrier::{Barrier, BarrierError};
use crate::biot_savart::{self, BiotSavartError, RegKernel};
use crate::model::{ModelError, OddProfile, TailLaw};
use crate::quadrature::QuadratureSpec;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransportError {
    #[error("particles {index} and {} crossed at t = {time}", index + 1)]
    Ordering { time: f64, index: usize },
    #[error("invalid run settings: {0}")]
    InvalidSettings(String),
    #[error("fewer than three particles in [0, {limit}] for the origin slope")]
    InsufficientResolution { limit: f64 },
    #[error("Picard iteration did not converge in {iterations} iterations (last residual {last:e})")]
    NoConvergence { iterations: usize, last: f64, residuals: Vec<f64> },
    #[error(transparent)]
    Profile(#[from] ModelError),
    #[error(transparent)]
    Velocity(#[from] BiotSavartError),
    #[error(transparent)]
    Barrier(#[from] BarrierError),
}

pub type Result<T> = std::result::Result<T, TransportError>;

/// Velocity used to move particles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum VelocityLaw {
    Exact,
    Regularized(RegKernel),
}

/// Particles carrying conserved values of `ω`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleState {
    pub time: f64,
    pub positions: Vec<f64>,
    pub carried_values: Vec<f64>,
    /// Tail law of the initial data beyond the initial last particle.
    pub tail: TailLaw,
    /// Initial position of the last particle.
    pub x_last0: f64,
}

impl ParticleState {
    pub fn from_profile(profile: &OddProfile) -> Self {
        Self {
            time: 0.0,
            positions: profile.nodes().to_vec(),
            carried_values: profile.values().to_vec(),
            tail: *profile.tail(),
            x_last0: profile.x_last(),
        }
    }

    /// Profile induced by the particles at the given positions; the tail is
    /// translated with the last particle so that it stays attached to it.
    pub fn profile_at(&self, positions: &[f64]) -> Result<OddProfile> {
        let mut tail = self.tail;
        if !tail.is_zero() {
            tail.shift += self.x_last0 - positions[positions.len() - 1];
        }
        Ok(OddProfile::new(positions.to_vec(), self.carried_values.clone(), tail)?)
    }

    pub fn profile(&self) -> Result<OddProfile> {
        self.profile_at(&self.positions)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// Velocity at every particle of the profile induced by `positions`.
pub fn particle_velocities(
    state: &ParticleState,
    positions: &[f64],
    gamma: f64,
    law: &VelocityLaw,
    spec: &QuadratureSpec,
) -> Result<Vec<f64>> {
    check_order(positions, state.time)?;
    let profile = state.profile_at(positions)?;
    Ok(match law {
        VelocityLaw::Exact => biot_savart::velocity_field(&profile, positions, gamma, spec)?,
        VelocityLaw::Regularized(k) => biot_savart::regularized_velocity_field(&profile, positions, k, spec)?,
    })
}

fn check_order(positions: &[f64], time: f64) -> Result<()> {
    if let Some(index) = positions.windows(2).position(|w| !(w[1] > w[0])) {
        return Err(TransportError::Ordering { time, index });
    }
    Ok(())
}

/// One classical RK4 step of `Ẋ = u(X)`. `k1` may carry the velocity at the
/// current positions when already known.
pub fn advect_step_with(
    state: &ParticleState,
    dt: f64,
    gamma: f64,
    law: &VelocityLaw,
    spec: &QuadratureSpec,
    k1: Option<&[f64]>,
) -> Result<ParticleState> {
    if !(dt > 0.0) {
        return Err(TransportError::InvalidSettings(format!("dt = {dt} must be positive")));
    }
    let x = &state.positions;
    let k1 = match k1 {
        Some(k) => k.to_vec(),
        None => particle_velocities(state, x, gamma, law, spec)?,
    };
    let stage = |k: &[f64], h: f64| -> Vec<f64> { x.iter().zip(k).map(|(x, k)| x + h * k).collect() };
    let k2 = particle_velocities(state, &stage(&k1, 0.5 * dt), gamma, law, spec)?;
    let k3 = particle_velocities(state, &stage(&k2, 0.5 * dt), gamma, law, spec)?;
    let k4 = particle_velocities(state, &stage(&k3, dt), gamma, law, spec)?;
    let positions: Vec<f64> = (0..x.len())
        .map(|i| x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect();
    let time = state.time + dt;
    check_order(&positions, time)?;
    Ok(ParticleState {
        time,
        positions,
        ..state.clone()
    })
}

pub fn advect_step(
    state: &ParticleState,
    dt: f64,
    gamma: f64,
    law: &VelocityLaw,
    spec: &QuadratureSpec,
) -> Result<ParticleState> {
    advect_step_with(state, dt, gamma, law, spec, None)
}

/// Largest relative compression rate `|u_{i+1} - u_i| / (X_{i+1} - X_i)`.
pub fn compression_rate(positions: &[f64], velocities: &[f64]) -> f64 {
    positions
        .windows(2)
        .zip(velocities.windows(2))
        .map(|(x, u)| (u[1] - u[0]).abs() / (x[1] - x[0]))
        .fold(0.0, f64::max)
}

/// `dt = min(dt_max, cfl / max_i |Δu_i / ΔX_i|)`.
pub fn adaptive_dt(positions: &[f64], velocities: &[f64], cfl: f64, dt_max: f64) -> f64 {
    let rate = compression_rate(positions, velocities);
    if rate == 0.0 {
        dt_max
    } else {
        dt_max.min(cfl / rate)
    }
}

/// Quadratic fit through the origin and the first two particles, evaluated
/// for its slope at 0.
pub fn slope_at_origin(state: &ParticleState, x_max: f64) -> Result<f64> {
    let x = &state.positions;
    let w = &state.carried_values;
    if x.len() < 3 || !(x[2] < 0.1 * x_max) {
        return Err(TransportError::InsufficientResolution { limit: 0.1 * x_max });
    }
    let (x1, x2, w1, w2) = (x[1], x[2], w[1], w[2]);
    Ok((w1 * x2 * x2 - w2 * x1 * x1) / (x1 * x2 * (x2 - x1)))
}

/// Why a run ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    TimeEnd,
    SlopeBlowup,
    ResolutionExhausted,
    BarrierViolation,
    OrderingViolation,
}

impl std::fmt::Display for StopReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            StopReason::TimeEnd => "time_end",
            StopReason::SlopeBlowup => "slope_blowup",
            StopReason::ResolutionExhausted => "resolution_exhausted",
            StopReason::BarrierViolation => "barrier_violation",
            StopReason::OrderingViolation => "ordering_violation",
        };
        f.write_str(s)
    }
}

/// Per-step monitors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRecord {
    pub time: f64,
    pub slope_origin: f64,
    pub norm_p: f64,
    pub norm_x_pm1: f64,
    pub barrier_margin: f64,
    pub dt: f64,
    pub velocity_min: f64,
    /// `-u_x(t, 0)`.
    pub neg_ux_origin: f64,
}

/// Particle positions and values at one instant, with the barrier at the
/// same positions.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub time: f64,
    pub positions: Vec<f64>,
    pub values: Vec<f64>,
    pub phi: Vec<f64>,
}

/// Solver controls.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSettings {
    pub gamma: f64,
    /// Exponent of the monitored norms `‖ω‖_p`, `‖ω_x‖_{p-1}`.
    pub p: f64,
    pub cfl: f64,
    pub dt_max: f64,
    pub dt_min: f64,
    pub t_end: f64,
    pub stop_slope: f64,
    /// Runs stop once `X_{i+1} - X_i < min_relative_spacing · X_{i+1}`.
    pub min_relative_spacing: f64,
    pub snapshot_every: usize,
    pub x_max: f64,
    pub law: VelocityLaw,
    pub spec: QuadratureSpec,
    /// Barrier to monitor; `None` disables the barrier stop.
    pub barrier: Option<Barrier>,
    /// Stop when the monitored barrier is crossed. Off means the margin
    /// is only logged.
    pub stop_on_barrier: bool,
}

impl RunSettings {
    pub fn new(gamma: f64, p: f64, x_max: f64, t_end: f64) -> Self {
        Self {
            gamma,
            p,
            cfl: 0.4,
            dt_max: 1e-2,
            dt_min: 1e-10,
            t_end,
            stop_slope: 1e4,
            min_relative_spacing: 1e-8,
            snapshot_every: 10,
            x_max,
            law: VelocityLaw::Exact,
            spec: QuadratureSpec::default(),
            barrier: None,
            stop_on_barrier: true,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.cfl > 0.0 && self.cfl < 1.0) {
            return Err(TransportError::InvalidSettings(format!("cfl = {} outside (0, 1)", self.cfl)));
        }
        if !(self.dt_max > 0.0 && self.dt_min > 0.0 && self.dt_min <= self.dt_max) {
            return Err(TransportError::InvalidSettings("need 0 < dt_min ≤ dt_max".into()));
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return Err(TransportError::InvalidSettings(format!("t_end = {}", self.t_end)));
        }
        if self.snapshot_every == 0 {
            return Err(TransportError::InvalidSettings("snapshot_every must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// Output of [`run`].
#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub snapshots: Vec<Snapshot>,
    pub diagnostics: Vec<DiagnosticsRecord>,
    pub stop_reason: StopReason,
    pub final_state: ParticleState,
    pub steps: usize,
    /// Time of the last valid state.
    pub stop_time: f64,
}

fn barrier_values(barrier: Option<&Barrier>, t: f64, positions: &[f64]) -> Result<Vec<f64>> {
    match barrier {
        None => Ok(vec![f64::NAN; positions.len()]),
        Some(b) => {
            let t = t.min(b.t_singular);
            positions.iter().map(|&x| Ok(b.phi(t, x)?)).collect()
        }
    }
}

fn snapshot(state: &ParticleState, barrier: Option<&Barrier>) -> Result<Snapshot> {
    Ok(Snapshot {
        time: state.time,
        positions: state.positions.clone(),
        values: state.carried_values.clone(),
        phi: barrier_values(barrier, state.time, &state.positions)?,
    })
}

fn diagnostics(
    state: &ParticleState,
    velocities: &[f64],
    dt: f64,
    settings: &RunSettings,
) -> Result<DiagnosticsRecord> {
    let profile = state.profile()?;
    let derivative = profile.derivative()?;
    let barrier_margin = match settings.barrier.as_ref() {
        None => f64::NAN,
        Some(b) => {
            let phi = barrier_values(Some(b), state.time, &state.positions)?;
            state
                .carried_values
                .iter()
                .zip(&phi)
                .skip(1)
                .map(|(w, f)| w - f)
                .fold(f64::INFINITY, f64::min)
        }
    };
    Ok(DiagnosticsRecord {
        time: state.time,
        slope_origin: slope_at_origin(state, settings.x_max)?,
        norm_p: profile.weighted_norm(settings.p)?,
        norm_x_pm1: derivative.weighted_norm(settings.p - 1.0)?,
        barrier_margin,
        dt,
        velocity_min: velocities.iter().copied().fold(0.0, f64::min),
        neg_ux_origin: -biot_savart::velocity_x_origin(&profile, settings.gamma, &settings.spec)?,
    })
}

/// Integrates until `t_end`, slope blowup, resolution loss, barrier crossing
/// or particle crossing.
pub fn run(initial: &OddProfile, settings: &RunSettings) -> Result<RunResult> {
    settings.validate()?;
    let barrier = settings.barrier.as_ref();
    let mut state = ParticleState::from_profile(initial);
    let mut u = particle_velocities(&state, &state.positions, settings.gamma, &settings.law, &settings.spec)?;
    let mut snapshots = vec![snapshot(&state, barrier)?];
    let mut records = Vec::new();
    let mut steps = 0;
    let stop_reason = loop {
        let dt = adaptive_dt(&state.positions, &u, settings.cfl, settings.dt_max);
        let rec = diagnostics(&state, &u, dt, settings)?;
        records.push(rec);
        let crowded = state
            .positions
            .windows(2)
            .skip(1)
            .any(|w| w[1] - w[0] < settings.min_relative_spacing * w[1]);
        let stop = if barrier.is_some() && settings.stop_on_barrier && !(rec.barrier_margin > 0.0) {
            Some(StopReason::BarrierViolation)
        } else if rec.slope_origin > settings.stop_slope {
            Some(StopReason::SlopeBlowup)
        } else if state.time >= settings.t_end {
            Some(StopReason::TimeEnd)
        } else if dt < settings.dt_min || crowded {
            Some(StopReason::ResolutionExhausted)
        } else {
            None
        };
        if let Some(reason) = stop {
            break reason;
        }
        let remaining = settings.t_end - state.time;
        let (h, last) = if dt >= remaining { (remaining, true) } else { (dt, false) };
        match advect_step_with(&state, h, settings.gamma, &settings.law, &settings.spec, Some(&u)) {
            Ok(next) => state = next,
            Err(TransportError::Ordering { .. }) => break StopReason::OrderingViolation,
            Err(e) => return Err(e),
        }
        if last {
            state.time = settings.t_end;
        }
        steps += 1;
        u = particle_velocities(&state, &state.positions, settings.gamma, &settings.law, &settings.spec)?;
        if steps % settings.snapshot_every == 0 {
            snapshots.push(snapshot(&state, barrier)?);
        }
    };
    if snapshots.last().map(|s| s.time) != Some(state.time) {
        snapshots.push(snapshot(&state, barrier)?);
    }
    Ok(RunResult {
        snapshots,
        diagnostics: records,
        stop_reason,
        stop_time: state.time,
        final_state: state,
        steps,
    })
}

/// Flow map samples from [`picard_flow_map`].
#[derive(Debug, Clone, PartialEq)]
pub struct PicardResult {
    pub times: Vec<f64>,
    pub labels: Vec<f64>,
    /// `flow[k][i] = Φ(times[k], labels[i])`.
    pub flow: Vec<Vec<f64>>,
    /// `ω(T, ·)` induced by `Φ(T, ·)`.
    pub profile: OddProfile,
    pub residuals: Vec<f64>,
}

/// Iterates `Φ ← z + ∫₀^t v_ε[ω_Φ(s)](Φ(s, z)) ds` from `Φ = Id`, with the
/// time integral by the composite trapezoidal rule on `n_time_nodes` nodes.
pub fn picard_flow_map(
    omega0: &OddProfile,
    kernel: &RegKernel,
    t_final: f64,
    n_time_nodes: usize,
    max_iter: usize,
    tol: f64,
    spec: &QuadratureSpec,
) -> Result<PicardResult> {
    if n_time_nodes < 2 || !(t_final > 0.0) || max_iter == 0 {
        return Err(TransportError::InvalidSettings(format!(
            "Picard needs T > 0, ≥ 2 time nodes and ≥ 1 iteration (T = {t_final}, nodes = {n_time_nodes})"
        )));
    }
    let base = ParticleState::from_profile(omega0);
    let labels = base.positions.clone();
    let times: Vec<f64> = (0..n_time_nodes)
        .map(|k| t_final * k as f64 / (n_time_nodes - 1) as f64)
        .collect();
    let law = VelocityLaw::Regularized(*kernel);
    let mut flow = vec![labels.clone(); n_time_nodes];
    let mut residuals = Vec::new();
    for _ in 0..max_iter {
        let velocities = flow
            .iter()
            .zip(&times)
            .map(|(pos, &t)| {
                let state = ParticleState { time: t, ..base.clone() };
                particle_velocities(&state, pos, kernel.gamma, &law, spec)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut next = vec![labels.clone(); n_time_nodes];
        let mut acc = vec![0.0; labels.len()];
        for k in 1..n_time_nodes {
            let h = times[k] - times[k - 1];
            for i in 0..labels.len() {
                acc[i] += 0.5 * h * (velocities[k - 1][i] + velocities[k][i]);
                next[k][i] = labels[i] + acc[i];
            }
        }
        let residual = next
            .iter()
            .zip(&flow)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max);
        flow = next;
        residuals.push(residual);
        if residual < tol {
            let profile = base.profile_at(flow.last().unwrap())?;
            return Ok(PicardResult {
                times,
                labels,
                flow,
                profile,
                residuals,
            });
        }
    }
    Err(TransportError::NoConvergence {
        iterations: max_iter,
        last: *residuals.last().unwrap(),
        residuals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::barrier::{self, phi_value};
    use crate::model::{build_initial_data, graded_nodes, InitialDataKind, ModelParams};

    fn barrier_setup(n: usize) -> (ModelParams, Barrier, OddProfile) {
        let params = ModelParams::barrier_mode(0.5, 0.5).unwrap();
        let b = Barrier::new(0.5, 1.748, 0.25).unwrap();
        let nodes = graded_nodes(n, 50.0, 3.0);
        let prof = build_initial_data(InitialDataKind::BarrierMultiple, &params, &b, nodes).unwrap();
        (params, b, prof)
    }

    #[test]
    fn slope_of_linear_data_is_exact() {
        let nodes = graded_nodes(32, 10.0, 3.0);
        let prof = OddProfile::sample(nodes, |x| x, |_| 1.0, TailLaw::power(1.0, 1.0)).unwrap();
        let s = ParticleState::from_profile(&prof);
        assert!((slope_at_origin(&s, 10.0).unwrap() - 1.0).abs() < 1e-8);
        let zero = ParticleState::from_profile(&OddProfile::zero(graded_nodes(32, 10.0, 3.0)).unwrap());
        assert_eq!(slope_at_origin(&zero, 10.0).unwrap(), 0.0);
        let coarse = ParticleState::from_profile(&OddProfile::zero(graded_nodes(8, 10.0, 1.0)).unwrap());
        assert!(slope_at_origin(&coarse, 10.0).is_err());
    }

    #[test]
    fn slope_of_barrier_approaches_phi_x_at_origin() {
        let (a, p) = (0.5, 0.25);
        let nodes = graded_nodes(256, 50.0, 3.0);
        let prof = OddProfile::sample(
            nodes,
            |x| phi_value(a, p, x),
            |x| barrier::phi_x(a, p, x),
            TailLaw {
                coefficient: 1.0,
                exponent: p,
                shift: a,
                offset: -a.powf(p),
            },
        )
        .unwrap();
        let s = slope_at_origin(&ParticleState::from_profile(&prof), 50.0).unwrap();
        let exact = p * a.powf(p - 1.0);
        assert!((s - exact).abs() < 1e-6 * exact);
    }

    #[test]
    fn zero_data_is_stationary() {
        let prof = OddProfile::zero(graded_nodes(64, 10.0, 3.0)).unwrap();
        let s0 = ParticleState::from_profile(&prof);
        let s1 = advect_step(&s0, 0.3, 0.5, &VelocityLaw::Exact, &QuadratureSpec::default()).unwrap();
        assert_eq!(s1.positions, s0.positions);
        let mut settings = RunSettings::new(0.5, 0.25, 10.0, 1.0);
        settings.dt_max = 0.25;
        let res = run(&prof, &settings).unwrap();
        assert_eq!(res.stop_reason, StopReason::TimeEnd);
        assert_eq!(res.stop_time, 1.0);
        assert!(res.final_state.carried_values.iter().all(|&v| v == 0.0));
        assert_eq!(res.final_state.positions, prof.nodes());
        assert!(res.diagnostics.iter().all(|d| d.dt == 0.25));
    }

    #[test]
    fn cfl_scaling() {
        let x = [0.0, 1.0, 2.0];
        let u = [0.0, -1.0, -1.5];
        assert_eq!(adaptive_dt(&x, &[0.0; 3], 0.4, 0.1), 0.1);
        let a = adaptive_dt(&x, &u, 0.2, 10.0);
        let b = adaptive_dt(&x, &u, 0.4, 10.0);
        assert!((b - 2.0 * a).abs() < 1e-15);
    }

    #[test]
    fn positions_drift_toward_origin() {
        let (_, _, prof) = barrier_setup(64);
        let s0 = ParticleState::from_profile(&prof);
        let s1 = advect_step(&s0, 1e-3, 0.5, &VelocityLaw::Exact, &QuadratureSpec::default()).unwrap();
        assert_eq!(s1.positions[0], 0.0);
        assert!(s1.positions.iter().zip(&s0.positions).all(|(a, b)| a <= b));
        assert_eq!(s1.carried_values, s0.carried_values);
    }

    #[test]
    fn rk4_step_is_fourth_order() {
        // Compare one step of size h against two steps of h/2.
        let (_, _, prof) = barrier_setup(64);
        let spec = QuadratureSpec::default().with_rel_tol(1e-12).with_abs_tol(1e-15);
        let s0 = ParticleState::from_profile(&prof);
        let law = VelocityLaw::Exact;
        let err = |h: f64| {
            let one = advect_step(&s0, h, 0.5, &law, &spec).unwrap();
            let half = advect_step(&s0, 0.5 * h, 0.5, &law, &spec).unwrap();
            let two = advect_step(&half, 0.5 * h, 0.5, &law, &spec).unwrap();
            one.positions
                .iter()
                .zip(&two.positions)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
        };
        let order = (err(4e-3) / err(2e-3)).log2();
        assert!(order > 3.5, "observed order {order}");
    }

    #[test]
    fn tail_stays_attached_to_last_particle() {
        let (_, _, prof) = barrier_setup(64);
        let mut s = ParticleState::from_profile(&prof);
        for x in s.positions.iter_mut().skip(1) {
            *x *= 0.9;
        }
        let p = s.profile().unwrap();
        let last = *s.carried_values.last().unwrap();
        assert!((p.tail().eval(p.x_last()) - last).abs() < 1e-12 * last);
    }

    #[test]
    fn picard_zero_data_fixed_point() {
        let prof = OddProfile::zero(graded_nodes(32, 10.0, 3.0)).unwrap();
        let k = RegKernel::new(0.05, 0.5).unwrap();
        let res = picard_flow_map(&prof, &k, 0.05, 8, 10, 1e-8, &QuadratureSpec::default()).unwrap();
        assert_eq!(res.residuals, vec![0.0]);
        assert!(res.flow.iter().all(|f| f == &res.labels));
    }

    #[test]
    fn picard_first_iterate_is_frozen_velocity() {
        let (_, _, prof) = barrier_setup(48);
        let k = RegKernel::new(0.05, 0.5).unwrap();
        let spec = QuadratureSpec::default();
        let res = picard_flow_map(&prof, &k, 0.01, 5, 1, f64::INFINITY, &spec).unwrap();
        let state = ParticleState::from_profile(&prof);
        let v = particle_velocities(&state, &state.positions, 0.5, &VelocityLaw::Regularized(k), &spec).unwrap();
        for (k_t, &t) in res.times.iter().enumerate() {
            for i in 0..res.labels.len() {
                let want = res.labels[i] + t * v[i];
                assert!((res.flow[k_t][i] - want).abs() <= 1e-13 * (1.0 + want.abs()));
            }
        }
    }
}
