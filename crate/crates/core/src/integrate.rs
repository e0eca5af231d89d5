//! The discrete-gradient metriplectic integrator
//!
//! ```text
//! (x' - x) / h = Pi(z) g(x, x') + K_d(z) grad S(z),   z = (x + x') / 2
//! ```
//!
//! where `g` is a discrete gradient of `H` and `K_d` is the metric-based PSD
//! matrix whose kernel contains `g`. The energy `H` is conserved up to the
//! solver tolerance; for quadratic `S` the entropy increment equals
//! `h grad S(z)^T K_d(z) grad S(z) >= 0`.
//!
//! Also provides a classical RK4 baseline and an empirical order study.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error as ThisError;

use crate::brackets::{degenerate_projection, MetriplecticSystem};
use crate::dgrad::DiscreteGradientScheme;
use crate::error::{ensure_dim, Error, Result};
use crate::fields::{check_state, MetricField, StateVector};

pub const DEFAULT_SOLVER_TOL: f64 = 1e-13;
pub const DEFAULT_MAX_ITERS: usize = 200;

/// Consecutive non-contracting fixed-point iterations before switching to Newton.
pub const FIXED_POINT_PATIENCE: usize = 5;

/// Errors below this make an order estimate meaningless.
pub const CONVERGENCE_ERROR_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum SolverKind {
    FixedPoint,
    NewtonFd,
}

impl FromStr for SolverKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "fixed-point" => Ok(SolverKind::FixedPoint),
            "newton" | "newton-fd" => Ok(SolverKind::NewtonFd),
            other => Err(Error::config(format!("unknown solver '{other}'"))),
        }
    }
}

impl fmt::Display for SolverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SolverKind::FixedPoint => "fixed-point",
            SolverKind::NewtonFd => "newton-fd",
        })
    }
}

/// Normalization of the discrete PSD product.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum KdVariant {
    /// `K_d = C G - (G g)(G g)^T`, `C = g^T G g`.
    Unscaled,
    /// The unscaled matrix multiplied once more by `C`.
    Scaled,
}

impl FromStr for KdVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "unscaled" => Ok(KdVariant::Unscaled),
            "scaled" => Ok(KdVariant::Scaled),
            other => Err(Error::config(format!("unknown kd variant '{other}'"))),
        }
    }
}

impl fmt::Display for KdVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            KdVariant::Unscaled => "unscaled",
            KdVariant::Scaled => "scaled",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IntegratorConfig {
    pub step_h: f64,
    pub solver: SolverKind,
    /// Tolerance on the max-norm step residual, relative to `1 + |x|_inf`.
    pub solver_tol: f64,
    pub max_iters: usize,
    pub kd_variant: KdVariant,
    pub scheme: DiscreteGradientScheme,
}

impl IntegratorConfig {
    /// Gonzalez gradient, unscaled `K_d`, fixed-point solver.
    pub fn new(step_h: f64) -> Result<Self> {
        let cfg = IntegratorConfig {
            step_h,
            solver: SolverKind::FixedPoint,
            solver_tol: DEFAULT_SOLVER_TOL,
            max_iters: DEFAULT_MAX_ITERS,
            kd_variant: KdVariant::Unscaled,
            scheme: DiscreteGradientScheme::midpoint(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_step(&self, step_h: f64) -> Result<Self> {
        let cfg = IntegratorConfig { step_h, ..self.clone() };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.step_h.is_finite() || self.step_h <= 0.0 {
            return Err(Error::config(format!("step size must be positive, got {}", self.step_h)));
        }
        if self.solver_tol.is_nan() || self.solver_tol <= 0.0 {
            return Err(Error::config("solver tolerance must be positive"));
        }
        if self.max_iters == 0 {
            return Err(Error::config("max_iters must be at least 1"));
        }
        Ok(())
    }
}

/// Discrete PSD matrix at `z` whose kernel contains the discrete gradient `dg`.
pub fn build_kd(metric: &MetricField, dg: &DVector<f64>, z: &StateVector, variant: KdVariant) -> Result<DMatrix<f64>> {
    ensure_dim(metric.dim(), dg.len())?;
    ensure_dim(metric.dim(), z.len())?;
    let g_inv = metric.g_inv(z);
    let k = degenerate_projection(&g_inv, dg);
    Ok(match variant {
        KdVariant::Unscaled => k,
        KdVariant::Scaled => {
            let c = dg.dot(&(&g_inv * dg));
            k * c
        }
    })
}

/// Right-hand side of the step equation for a candidate `x_new`.
fn step_rhs(
    system: &MetriplecticSystem,
    metric: &MetricField,
    config: &IntegratorConfig,
    x: &StateVector,
    x_new: &StateVector,
) -> DVector<f64> {
    let z = (x + x_new) * 0.5;
    let dg = config.scheme.eval(&system.hamiltonian, x, x_new);
    let g_inv = metric.g_inv(&z);
    let mut kd = degenerate_projection(&g_inv, &dg);
    if config.kd_variant == KdVariant::Scaled {
        kd *= dg.dot(&(&g_inv * &dg));
    }
    system.pi.eval(&z) * dg + kd * system.entropy.gradient(&z)
}

/// Solution of one implicit step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub state: StateVector,
    pub iterations: usize,
    /// Final step residual relative to `1 + |x|_inf`.
    pub residual: f64,
}

fn require_metric(system: &MetriplecticSystem) -> Result<&MetricField> {
    system
        .metric
        .as_ref()
        .ok_or_else(|| Error::config("the metriplectic integrator needs a system built from a metric"))
}

/// One step of the metriplectic integrator from `x`.
pub fn metriplectic_step(system: &MetriplecticSystem, config: &IntegratorConfig, x: &StateVector) -> Result<StepOutcome> {
    let metric = require_metric(system)?;
    ensure_dim(system.dim(), x.len())?;
    let h = config.step_h;
    let scale = 1.0 + x.amax();
    let residual_of = |y: &StateVector| -> DVector<f64> { y - x - step_rhs(system, metric, config, x, y) * h };

    let mut y = x + system.vector_field(x) * h;
    let mut iterations = 0;

    if config.solver == SolverKind::FixedPoint {
        let mut prev = f64::INFINITY;
        let mut stalled = 0;
        let mut best = (f64::INFINITY, y.clone());
        while iterations < config.max_iters {
            iterations += 1;
            let y_next = x + step_rhs(system, metric, config, x, &y) * h;
            let r = (&y_next - &y).amax() / scale;
            if !r.is_finite() {
                break;
            }
            if r < best.0 {
                best = (r, y.clone());
            }
            y = y_next;
            if r <= config.solver_tol {
                return Ok(StepOutcome {
                    state: y,
                    iterations,
                    residual: r,
                });
            }
            stalled = if r >= prev { stalled + 1 } else { 0 };
            prev = r;
            if stalled >= FIXED_POINT_PATIENCE {
                break;
            }
        }
        y = best.1;
    }

    // finite-difference Newton on R(y) = y - x - h F(x, y)
    let n = x.len();
    let mut r = residual_of(&y);
    let mut rnorm = r.amax() / scale;
    while iterations < config.max_iters {
        if rnorm <= config.solver_tol {
            return Ok(StepOutcome {
                state: y,
                iterations,
                residual: rnorm,
            });
        }
        iterations += 1;
        let mut jac = DMatrix::zeros(n, n);
        let mut probe = y.clone();
        for j in 0..n {
            let yj = probe[j];
            let delta = f64::EPSILON.cbrt() * (1.0 + yj.abs());
            probe[j] = yj + delta;
            let up = residual_of(&probe);
            probe[j] = yj - delta;
            let down = residual_of(&probe);
            probe[j] = yj;
            jac.set_column(j, &((up - down) / (2.0 * delta)));
        }
        let step = jac.lu().solve(&(-&r)).ok_or(Error::SolverFailure {
            iterations,
            residual: rnorm,
        })?;
        y += step;
        r = residual_of(&y);
        rnorm = r.amax() / scale;
        if !rnorm.is_finite() {
            return Err(Error::SolverFailure { iterations, residual: rnorm });
        }
    }
    if rnorm <= config.solver_tol {
        return Ok(StepOutcome {
            state: y,
            iterations,
            residual: rnorm,
        });
    }
    Err(Error::SolverFailure {
        iterations,
        residual: rnorm,
    })
}

/// Classical fourth-order Runge-Kutta step.
pub fn rk4_step<F>(rhs: F, h: f64, x: &StateVector) -> StateVector
where
    F: Fn(&StateVector) -> StateVector,
{
    let k1 = rhs(x);
    let k2 = rhs(&(x + &k1 * (0.5 * h)));
    let k3 = rhs(&(x + &k2 * (0.5 * h)));
    let k4 = rhs(&(x + &k3 * h));
    x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Method {
    Metriplectic,
    Rk4,
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "metriplectic" => Ok(Method::Metriplectic),
            "rk4" => Ok(Method::Rk4),
            other => Err(Error::config(format!("unknown integrator '{other}'"))),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Metriplectic => "metriplectic",
            Method::Rk4 => "rk4",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepRecord {
    pub t: f64,
    pub state: Vec<f64>,
    pub energy: f64,
    pub entropy: f64,
    pub delta_entropy: f64,
    pub solver_iters: usize,
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub records: Vec<StepRecord>,
    pub config: IntegratorConfig,
    pub method: Method,
    pub scenario_id: String,
    /// Set when integration stopped early on a solver failure.
    pub truncated: bool,
}

impl Trajectory {
    pub fn new(config: IntegratorConfig, method: Method) -> Self {
        Trajectory {
            records: Vec::new(),
            config,
            method,
            scenario_id: String::new(),
            truncated: false,
        }
    }

    pub fn dim(&self) -> usize {
        self.records.first().map_or(0, |r| r.state.len())
    }

    pub fn states(&self) -> impl Iterator<Item = StateVector> + '_ {
        self.records.iter().map(|r| DVector::from_column_slice(&r.state))
    }

    pub fn last_state(&self) -> Option<StateVector> {
        self.records.last().map(|r| DVector::from_column_slice(&r.state))
    }

    fn push(&mut self, system: &MetriplecticSystem, x: &StateVector, iters: usize, residual: f64) {
        let step = self.records.len();
        let entropy = system.entropy.value(x);
        let delta_entropy = self.records.last().map_or(0.0, |r| entropy - r.entropy);
        self.records.push(StepRecord {
            t: step as f64 * self.config.step_h,
            state: x.iter().copied().collect(),
            energy: system.hamiltonian.value(x),
            entropy,
            delta_entropy,
            solver_iters: iters,
            residual,
        });
    }
}

/// Integration stopped at a failed step; `partial` holds every accepted step.
#[derive(ThisError)]
#[error("integration stopped after {} records: {source}", partial.records.len())]
pub struct IntegrationFailure {
    pub partial: Box<Trajectory>,
    #[source]
    pub source: Error,
}

impl fmt::Debug for IntegrationFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("IntegrationFailure")
            .field("records", &self.partial.records.len())
            .field("source", &self.source)
            .finish()
    }
}

fn validate_start(system: &MetriplecticSystem, config: &IntegratorConfig, x0: &StateVector) -> Result<()> {
    config.validate()?;
    check_state(x0)?;
    ensure_dim(system.dim(), x0.len())
}

/// Applies [`metriplectic_step`] `n_steps` times from `x0`.
pub fn integrate(
    system: &MetriplecticSystem,
    config: &IntegratorConfig,
    x0: &StateVector,
    n_steps: usize,
) -> std::result::Result<Trajectory, IntegrationFailure> {
    let mut traj = Trajectory::new(config.clone(), Method::Metriplectic);
    let fail = |mut traj: Trajectory, source: Error| {
        traj.truncated = true;
        IntegrationFailure {
            partial: Box::new(traj),
            source,
        }
    };
    if let Err(e) = validate_start(system, config, x0).and_then(|_| require_metric(system).map(|_| ())) {
        return Err(fail(traj, e));
    }
    traj.records.reserve(n_steps + 1);
    traj.push(system, x0, 0, 0.0);
    let mut x = x0.clone();
    for _ in 0..n_steps {
        match metriplectic_step(system, config, &x) {
            Ok(out) => {
                traj.push(system, &out.state, out.iterations, out.residual);
                x = out.state;
            }
            Err(e) => return Err(fail(traj, e)),
        }
    }
    Ok(traj)
}

/// RK4 applied to the continuous field `Pi grad H + K grad S`.
pub fn integrate_rk4(
    system: &MetriplecticSystem,
    config: &IntegratorConfig,
    x0: &StateVector,
    n_steps: usize,
) -> Result<Trajectory> {
    validate_start(system, config, x0)?;
    let mut traj = Trajectory::new(config.clone(), Method::Rk4);
    traj.records.reserve(n_steps + 1);
    traj.push(system, x0, 0, 0.0);
    let mut x = x0.clone();
    for _ in 0..n_steps {
        x = rk4_step(|y| system.vector_field(y), config.step_h, &x);
        traj.push(system, &x, 0, 0.0);
    }
    Ok(traj)
}

fn final_state(
    system: &MetriplecticSystem,
    config: &IntegratorConfig,
    x0: &StateVector,
    n_steps: usize,
    method: Method,
) -> Result<StateVector> {
    match method {
        Method::Metriplectic => {
            let mut x = x0.clone();
            for _ in 0..n_steps {
                x = metriplectic_step(system, config, &x)?.state;
            }
            Ok(x)
        }
        Method::Rk4 => {
            let mut x = x0.clone();
            for _ in 0..n_steps {
                x = rk4_step(|y| system.vector_field(y), config.step_h, &x);
            }
            Ok(x)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub method: Method,
    pub t_final: f64,
    pub h_ref: f64,
    pub h_list: Vec<f64>,
    pub errors: Vec<f64>,
    /// Least-squares slope of `ln error` against `ln h`.
    pub slope: f64,
    /// Some error fell below [`CONVERGENCE_ERROR_FLOOR`].
    pub inconclusive: bool,
}

fn steps_for(t_final: f64, h: f64) -> Result<usize> {
    let n = (t_final / h).round();
    if n < 1.0 || ((n * h - t_final).abs() > 1e-9 * t_final.abs().max(1.0)) {
        return Err(Error::config(format!("step {h} does not divide t_final = {t_final}")));
    }
    Ok(n as usize)
}

/// Global error at `t_final` against a run of the same method at `min(h) / 20`.
pub fn convergence_study(
    system: &MetriplecticSystem,
    config: &IntegratorConfig,
    x0: &StateVector,
    t_final: f64,
    h_list: &[f64],
    method: Method,
) -> Result<ConvergenceReport> {
    if h_list.len() < 3 {
        return Err(Error::config("convergence study needs at least 3 step sizes"));
    }
    if h_list.windows(2).any(|w| w[1].is_nan() || w[1] >= w[0]) {
        return Err(Error::config("step sizes must be strictly decreasing"));
    }
    if t_final.is_nan() || t_final <= 0.0 {
        return Err(Error::config("t_final must be positive"));
    }
    validate_start(system, config, x0)?;
    let h_ref = h_list[h_list.len() - 1] / 20.0;
    let mut jobs: Vec<(f64, usize)> = h_list
        .iter()
        .map(|&h| Ok((h, steps_for(t_final, h)?)))
        .collect::<Result<_>>()?;
    jobs.push((h_ref, steps_for(t_final, h_ref)?));

    let finals: Vec<StateVector> = jobs
        .par_iter()
        .map(|&(h, n)| final_state(system, &config.with_step(h)?, x0, n, method))
        .collect::<Result<_>>()?;
    let (reference, coarse) = finals.split_last().expect("reference run present");
    let errors: Vec<f64> = coarse.iter().map(|x| (x - reference).norm()).collect();
    let inconclusive = errors.iter().any(|&e| e < CONVERGENCE_ERROR_FLOOR);
    let slope = if inconclusive {
        f64::NAN
    } else {
        least_squares_slope(
            &h_list.iter().map(|h| h.ln()).collect::<Vec<_>>(),
            &errors.iter().map(|e| e.ln()).collect::<Vec<_>>(),
        )
    };
    Ok(ConvergenceReport {
        method,
        t_final,
        h_ref,
        h_list: h_list.to_vec(),
        errors,
        slope,
        inconclusive,
    })
}

pub fn least_squares_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{ScalarField, TensorField};
    use crate::liealg::so3_preset;
    use crate::sampling::sample_states;
    use nalgebra::{dmatrix, dvector};

    const INERTIA: [f64; 3] = [10.0, 5.0, 1.0];

    fn x0() -> StateVector {
        dvector![0.001, -1.0, 0.001]
    }

    #[test]
    fn kd_matches_rigid_body_matrix_at_midpoint() {
        let preset = so3_preset(INERTIA).unwrap();
        let [i1, i2, i3] = INERTIA;
        let metric = MetricField::euclidean(3);
        for z in sample_states(3, 20, 14) {
            let dg = preset.hamiltonian.gradient(&z);
            let kd = build_kd(&metric, &dg, &z, KdVariant::Unscaled).unwrap();
            assert!((kd[(0, 0)] - (z[1] * z[1] / (i2 * i2) + z[2] * z[2] / (i3 * i3))).abs() < 1e-14);
            assert!((kd[(0, 1)] + z[0] * z[1] / (i1 * i2)).abs() < 1e-14);
            let scaled = build_kd(&metric, &dg, &z, KdVariant::Scaled).unwrap();
            assert!((scaled - &kd * dg.norm_squared()).amax() < 1e-14);
        }
        let zero = build_kd(&metric, &DVector::zeros(3), &x0(), KdVariant::Unscaled).unwrap();
        assert_eq!(zero, DMatrix::zeros(3, 3));
    }

    #[test]
    fn single_step_conserves_energy_and_produces_entropy() {
        let preset = so3_preset(INERTIA).unwrap();
        let sys = preset.metriplectic_system();
        let cfg = IntegratorConfig::new(0.1).unwrap();
        let out = metriplectic_step(&sys, &cfg, &x0()).unwrap();
        let dh = sys.hamiltonian.value(&out.state) - sys.hamiltonian.value(&x0());
        let ds = sys.entropy.value(&out.state) - sys.entropy.value(&x0());
        assert!(dh.abs() <= 1e-12);
        assert!(ds >= 0.0);
        assert!(out.residual <= cfg.solver_tol);
    }

    #[test]
    fn quadratic_entropy_increment_is_exact_production() {
        let preset = so3_preset(INERTIA).unwrap();
        let sys = preset.metriplectic_system();
        let cfg = IntegratorConfig::new(0.1).unwrap();
        let metric = MetricField::euclidean(3);
        for x in sample_states(3, 20, 15) {
            let out = metriplectic_step(&sys, &cfg, &x).unwrap();
            let z = (&x + &out.state) * 0.5;
            let dg = cfg.scheme.discrete_gradient(&sys.hamiltonian, &x, &out.state).unwrap();
            let kd = build_kd(&metric, &dg, &z, KdVariant::Unscaled).unwrap();
            let ds_grad = sys.entropy.gradient(&z);
            let production = cfg.step_h * ds_grad.dot(&(kd * &ds_grad));
            let ds = sys.entropy.value(&out.state) - sys.entropy.value(&x);
            assert!(production >= 0.0);
            assert!((ds - production).abs() <= 1e-12 * (1.0 + sys.entropy.value(&x)), "{ds} vs {production}");
        }
    }

    #[test]
    fn equilibrium_is_a_fixed_point() {
        let preset = so3_preset(INERTIA).unwrap();
        let sys = preset.metriplectic_system();
        let cfg = IntegratorConfig::new(0.1).unwrap();
        let zero = DVector::zeros(3);
        let out = metriplectic_step(&sys, &cfg, &zero).unwrap();
        assert_eq!(out.state, zero);
    }

    #[test]
    fn newton_solver_agrees_with_fixed_point() {
        let preset = so3_preset(INERTIA).unwrap();
        let sys = preset.metriplectic_system();
        let fp = IntegratorConfig::new(0.1).unwrap();
        let newton = IntegratorConfig { solver: SolverKind::NewtonFd, ..fp.clone() };
        for x in sample_states(3, 10, 16) {
            let a = metriplectic_step(&sys, &fp, &x).unwrap();
            let b = metriplectic_step(&sys, &newton, &x).unwrap();
            assert!((a.state - b.state).amax() < 1e-12);
        }
    }

    #[test]
    fn large_step_falls_back_to_newton() {
        // h large enough that the fixed-point map is not a contraction
        let preset = so3_preset(INERTIA).unwrap();
        let sys = preset.metriplectic_system();
        let cfg = IntegratorConfig::new(3.0).unwrap();
        let x = dvector![1.5, -1.8, 1.2];
        let out = metriplectic_step(&sys, &cfg, &x).unwrap();
        let dh = sys.hamiltonian.value(&out.state) - sys.hamiltonian.value(&x);
        assert!(dh.abs() < 1e-11, "{dh}");
    }

    #[test]
    fn solver_failure_is_reported() {
        let preset = so3_preset(INERTIA).unwrap();
        let sys = preset.metriplectic_system();
        let cfg = IntegratorConfig { max_iters: 1, ..IntegratorConfig::new(0.1).unwrap() };
        let err = metriplectic_step(&sys, &cfg, &dvector![1.0, -1.0, 0.5]).unwrap_err();
        assert!(matches!(err, Error::SolverFailure { .. }));

        let failed = integrate(&sys, &cfg, &dvector![1.0, -1.0, 0.5], 5).unwrap_err();
        assert!(failed.partial.truncated);
        assert_eq!(failed.partial.records.len(), 1);
    }

    #[test]
    fn integrate_zero_steps_records_initial_state() {
        let preset = so3_preset(INERTIA).unwrap();
        let sys = preset.metriplectic_system();
        let cfg = IntegratorConfig::new(0.1).unwrap();
        let traj = integrate(&sys, &cfg, &x0(), 0).unwrap();
        assert_eq!(traj.records.len(), 1);
        assert_eq!(traj.records[0].t, 0.0);
        assert_eq!(traj.records[0].delta_entropy, 0.0);
    }

    #[test]
    fn integrator_requires_metric() {
        let preset = so3_preset(INERTIA).unwrap();
        let sys = MetriplecticSystem::new(
            crate::liealg::lie_poisson_tensor(&preset.structure),
            TensorField::zero(3, crate::fields::SymmetryClass::SymmetricPsd),
            preset.hamiltonian.clone(),
            preset.entropy.clone(),
        )
        .unwrap();
        let cfg = IntegratorConfig::new(0.1).unwrap();
        assert!(metriplectic_step(&sys, &cfg, &x0()).is_err());
    }

    #[test]
    fn conservative_part_is_reversible() {
        // constant entropy switches off the dissipative term, leaving the implicit midpoint rule
        let a = dmatrix![2.0, 0.3, 0.0; 0.3, 1.0, 0.2; 0.0, 0.2, 0.5];
        let h = ScalarField::quadratic(a).unwrap();
        let s = ScalarField::constant(3, 0.0);
        let pi = crate::liealg::lie_poisson_tensor(&crate::liealg::StructureConstants::so3());
        let fwd = MetriplecticSystem::from_metric(pi.clone(), MetricField::euclidean(3), h.clone(), s.clone()).unwrap();
        let rev_pi = TensorField::skew(3, move |x| -pi.eval(x));
        let bwd = MetriplecticSystem::from_metric(rev_pi, MetricField::euclidean(3), h, s).unwrap();
        let cfg = IntegratorConfig::new(0.05).unwrap();
        for x in sample_states(3, 10, 17) {
            let x1 = metriplectic_step(&fwd, &cfg, &x).unwrap().state;
            let back = metriplectic_step(&bwd, &cfg, &x1).unwrap().state;
            assert!((back - &x).amax() < 1e-11);
        }
    }

    #[test]
    fn rk4_on_linear_system_matches_taylor_polynomial() {
        let a = dmatrix![0.0, 1.0; -2.0, -0.3];
        let x = dvector![0.7, -0.4];
        let h = 0.1;
        let out = rk4_step(|y| &a * y, h, &x);
        let ha = &a * h;
        let mut term = x.clone();
        let mut taylor = x.clone();
        for k in 1..=4 {
            term = &ha * term / k as f64;
            taylor += &term;
        }
        assert!((out - taylor).amax() < 1e-14);
        let still = rk4_step(|y| DVector::zeros(y.len()), 0.3, &x);
        assert_eq!(still, x);
    }

    #[test]
    fn convergence_study_rejects_bad_step_lists() {
        let sys = so3_preset(INERTIA).unwrap().metriplectic_system();
        let cfg = IntegratorConfig::new(0.1).unwrap();
        let bad = [vec![0.1, 0.1, 0.05], vec![0.1, 0.05], vec![0.05, 0.1, 0.2], vec![0.3, 0.2, 0.1]];
        for hs in bad {
            assert!(convergence_study(&sys, &cfg, &x0(), 1.0, &hs, Method::Metriplectic).is_err(), "{hs:?}");
        }
    }

    #[test]
    fn stepping_is_deterministic() {
        let sys = so3_preset(INERTIA).unwrap().metriplectic_system();
        let cfg = IntegratorConfig::new(0.1).unwrap();
        let a = integrate(&sys, &cfg, &x0(), 50).unwrap();
        let b = integrate(&sys, &cfg, &x0(), 50).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn slope_of_exact_power_law() {
        let xs: Vec<f64> = [0.2f64, 0.1, 0.05].iter().map(|h| h.ln()).collect();
        let ys: Vec<f64> = [0.2f64, 0.1, 0.05].iter().map(|h| (3.0 * h * h).ln()).collect();
        assert!((least_squares_slope(&xs, &ys) - 2.0).abs() < 1e-12);
    }
}
