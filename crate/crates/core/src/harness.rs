//! Invariant audits over trajectories and cross-checks between formulations.

use nalgebra::DVector;
use serde::Serialize;

use crate::brackets::{psd_from_metric, MetriplecticSystem};
use crate::error::{ensure_dim, Result};
use crate::fields::{MetricField, ScalarField, StateVector};
use crate::integrate::Trajectory;
use crate::liealg::{
    force_from_casimir, forced_lie_poisson_rhs, induced_symmetric_tensor, lie_poisson_tensor, AlgebraInnerProduct,
    QuadraticLagrangian, StructureConstants,
};
use crate::sampling::sample_states;

/// Outcome of a single named check.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub max_residual: f64,
    pub threshold: f64,
    pub passed: bool,
    pub worst_state: Option<Vec<f64>>,
}

impl CheckResult {
    pub fn new(name: impl Into<String>, max_residual: f64, threshold: f64, worst_state: Option<&StateVector>) -> Self {
        CheckResult {
            name: name.into(),
            max_residual,
            threshold,
            // NaN residuals fail
            passed: max_residual <= threshold,
            worst_state: worst_state.map(|x| x.iter().copied().collect()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AuditReport {
    pub passed: bool,
    pub seed: Option<u64>,
    pub checks: Vec<CheckResult>,
}

impl AuditReport {
    pub fn new(seed: Option<u64>) -> Self {
        AuditReport {
            passed: true,
            seed,
            checks: Vec::new(),
        }
    }

    pub fn push(&mut self, check: CheckResult) {
        self.passed &= check.passed;
        self.checks.push(check);
    }

    pub fn merge(&mut self, other: AuditReport) {
        if self.seed.is_none() {
            self.seed = other.seed;
        }
        for c in other.checks {
            self.push(c);
        }
    }

    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn failed(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("audit report serializes")
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AuditThresholds {
    /// Max `|H_k - H_0| / (1 + |H_0|)`.
    pub energy_drift: f64,
    /// Max `max(0, -dS_k) / (1 + |S_0|)`.
    pub entropy_deficit: f64,
    /// Max `|J_k - J_0| / (1 + |J_0|)` for user-supplied invariants.
    pub invariant_drift: f64,
}

impl Default for AuditThresholds {
    fn default() -> Self {
        AuditThresholds {
            energy_drift: 1e-10,
            entropy_deficit: 1e-13,
            invariant_drift: 1e-10,
        }
    }
}

/// A conserved quantity tracked alongside energy, e.g. a momentum map component.
#[derive(Clone)]
pub struct NamedInvariant {
    pub name: String,
    pub field: ScalarField,
}

impl NamedInvariant {
    pub fn new(name: impl Into<String>, field: ScalarField) -> Self {
        NamedInvariant { name: name.into(), field }
    }
}

fn check_traj_dim(traj: &Trajectory, system: &MetriplecticSystem) -> Result<()> {
    match traj.records.first() {
        Some(r) => ensure_dim(system.dim(), r.state.len()),
        None => Ok(()),
    }
}

fn drift_check(name: &str, traj: &Trajectory, f: &ScalarField, threshold: f64) -> CheckResult {
    let mut states = traj.states();
    let Some(x0) = states.next() else {
        return CheckResult::new(name, 0.0, threshold, None);
    };
    let f0 = f.value(&x0);
    let mut worst = (0.0, None);
    for x in states {
        let d = (f.value(&x) - f0).abs() / (1.0 + f0.abs());
        if d > worst.0 || d.is_nan() {
            worst = (d, Some(x));
        }
    }
    CheckResult::new(name, worst.0, threshold, worst.1.as_ref())
}

/// Energy drift, entropy monotonicity and drift of each extra invariant.
///
/// Values are recomputed from the recorded states, so a trajectory read back
/// from disk audits the same as the one in memory.
pub fn audit_trajectory_with(
    traj: &Trajectory,
    system: &MetriplecticSystem,
    extra_invariants: &[NamedInvariant],
    thresholds: &AuditThresholds,
) -> Result<AuditReport> {
    check_traj_dim(traj, system)?;
    let mut report = AuditReport::new(None);
    report.push(drift_check("energy-drift", traj, &system.hamiltonian, thresholds.energy_drift));

    let entropies: Vec<f64> = traj.states().map(|x| system.entropy.value(&x)).collect();
    let scale = 1.0 + entropies.first().map_or(0.0, |s| s.abs());
    let mut worst = (0.0, None);
    for (k, w) in entropies.windows(2).enumerate() {
        let deficit = (w[0] - w[1]).max(0.0) / scale;
        if deficit > worst.0 || deficit.is_nan() {
            worst = (deficit, Some(k + 1));
        }
    }
    let worst_state = worst.1.map(|k| DVector::from_column_slice(&traj.records[k].state));
    report.push(CheckResult::new(
        "entropy-monotonicity",
        worst.0,
        thresholds.entropy_deficit,
        worst_state.as_ref(),
    ));

    for inv in extra_invariants {
        ensure_dim(system.dim(), inv.field.dim())?;
        report.push(drift_check(&inv.name, traj, &inv.field, thresholds.invariant_drift));
    }
    Ok(report)
}

pub fn audit_trajectory(
    traj: &Trajectory,
    system: &MetriplecticSystem,
    extra_invariants: &[NamedInvariant],
) -> Result<AuditReport> {
    audit_trajectory_with(traj, system, extra_invariants, &AuditThresholds::default())
}

/// Relative tolerance of the per-step entropy rate against `(S, S)(z)`.
pub const ENTROPY_RATE_REL_TOL: f64 = 0.05;
/// Absolute slack added to the rate tolerance.
pub const ENTROPY_RATE_ABS_TOL: f64 = 1e-12;

/// Compares `dS_k / h` with `grad S^T K grad S` at each step midpoint.
///
/// The `entropy-rate` residual is `max_k |dS_k/h - r_k| / (|r_k| + abs/rel)`,
/// so it stays below the relative tolerance exactly when every step satisfies
/// `|dS_k/h - r_k| <= rel |r_k| + abs`.
pub fn entropy_rate_check(traj: &Trajectory, system: &MetriplecticSystem) -> Result<AuditReport> {
    check_traj_dim(traj, system)?;
    let h = traj.config.step_h;
    let floor = ENTROPY_RATE_ABS_TOL / ENTROPY_RATE_REL_TOL;
    let states: Vec<StateVector> = traj.states().collect();
    let mut worst_dev = (0.0, None);
    let mut worst_sign = (0.0, None);
    let scale = 1.0 + states.first().map_or(0.0, |x| system.entropy.value(x).abs());
    for w in states.windows(2) {
        let z = (&w[0] + &w[1]) * 0.5;
        let ds = system.entropy.value(&w[1]) - system.entropy.value(&w[0]);
        let rate = system.entropy_production(&z);
        let dev = (ds / h - rate).abs() / (rate.abs() + floor);
        if dev > worst_dev.0 || dev.is_nan() {
            worst_dev = (dev, Some(z.clone()));
        }
        let deficit = (-ds).max(0.0) / scale;
        if deficit > worst_sign.0 {
            worst_sign = (deficit, Some(w[1].clone()));
        }
    }
    let mut report = AuditReport::new(None);
    report.push(CheckResult::new(
        "entropy-rate",
        worst_dev.0,
        ENTROPY_RATE_REL_TOL,
        worst_dev.1.as_ref(),
    ));
    report.push(CheckResult::new(
        "entropy-sign",
        worst_sign.0,
        AuditThresholds::default().entropy_deficit,
        worst_sign.1.as_ref(),
    ));
    Ok(report)
}

/// Tolerance for agreement between the two formulations.
pub const CROSS_VALIDATION_TOL: f64 = 1e-12;

/// Discrepancy between `a` and `b` relative to the size of the terms that built them.
///
/// The scale includes `term_scale` so that two right-hand sides which both
/// cancel to round-off are compared against the magnitude of the cancelling
/// terms rather than against each other.
pub fn scaled_discrepancy(a: &DVector<f64>, b: &DVector<f64>, term_scale: f64) -> f64 {
    let diff = (a - b).amax();
    if diff == 0.0 {
        return 0.0;
    }
    diff / a.amax().max(b.amax()).max(term_scale)
}

/// Compares the forced Lie-Poisson field with the Casimir force against the
/// metriplectic field built from a metric.
///
/// The metric side uses `kg` as the inverse metric, so for the rigid body the
/// two forms coincide when `kg` is a multiple of the identity. The check
/// `induced-tensor` compares against `K~ grad S`, which agrees for any `kg`.
pub fn cross_validate_formulations(
    sc: &StructureConstants,
    lagrangian: &QuadraticLagrangian,
    kg: &AlgebraInnerProduct,
    n_samples: usize,
    seed: u64,
) -> Result<AuditReport> {
    let n = sc.dim();
    ensure_dim(n, lagrangian.dim())?;
    ensure_dim(n, kg.dim())?;
    let h = lagrangian.hamiltonian();
    let c = ScalarField::diagonal_quadratic(vec![1.0; n]);
    let force = force_from_casimir(sc, kg, &c)?;
    let pi = lie_poisson_tensor(sc);
    let kg_m = kg.matrix().clone();
    let metric = MetricField::new(n, move |_| kg_m.clone());
    let kappa = psd_from_metric(&metric, &h)?;
    let induced = induced_symmetric_tensor(sc, kg, &h)?;

    let mut worst_metric = (0.0, None);
    let mut worst_induced = (0.0, None);
    for mu in sample_states(n, n_samples, seed) {
        let forced = forced_lie_poisson_rhs(sc, &h, &force, &mu)?;
        let dh = h.gradient(&mu);
        let ds = c.gradient(&mu);
        let p = pi.eval(&mu);
        let k = kappa.eval(&mu);
        let k_ind = induced.eval(&mu);
        let cons = &p * &dh;

        let term = p.amax() * dh.amax() + k.amax() * ds.amax();
        let d = scaled_discrepancy(&forced, &(&cons + &k * &ds), term);
        if d > worst_metric.0 || d.is_nan() {
            worst_metric = (d, Some(mu.clone()));
        }
        let term = p.amax() * dh.amax() + k_ind.amax() * ds.amax();
        let d = scaled_discrepancy(&forced, &(&cons + &k_ind * &ds), term);
        if d > worst_induced.0 || d.is_nan() {
            worst_induced = (d, Some(mu.clone()));
        }
    }
    let mut report = AuditReport::new(Some(seed));
    report.push(CheckResult::new(
        "metric-formulation",
        worst_metric.0,
        CROSS_VALIDATION_TOL,
        worst_metric.1.as_ref(),
    ));
    report.push(CheckResult::new(
        "induced-tensor",
        worst_induced.0,
        CROSS_VALIDATION_TOL,
        worst_induced.1.as_ref(),
    ));
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrate::{integrate, integrate_rk4, IntegratorConfig, Method};
    use crate::liealg::{quartic_casimir, so3_preset};
    use nalgebra::{dmatrix, dvector};

    const INERTIA: [f64; 3] = [10.0, 5.0, 1.0];

    fn x0() -> StateVector {
        dvector![0.001, -1.0, 0.001]
    }

    #[test]
    fn overall_pass_requires_every_check() {
        let mut r = AuditReport::new(Some(3));
        r.push(CheckResult::new("a", 0.5, 1.0, None));
        assert!(r.passed);
        r.push(CheckResult::new("b", 2.0, 1.0, None));
        assert!(!r.passed);
        r.push(CheckResult::new("c", f64::NAN, 1.0, None));
        assert_eq!(r.failed().count(), 2);
        let json = r.to_json();
        let keys: Vec<usize> = ["\"passed\"", "\"seed\"", "\"checks\""].iter().map(|k| json.find(k).unwrap()).collect();
        assert!(keys.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn single_record_trajectory_passes_vacuously() {
        let sys = so3_preset(INERTIA).unwrap().metriplectic_system();
        let cfg = IntegratorConfig::new(0.1).unwrap();
        let traj = integrate(&sys, &cfg, &x0(), 0).unwrap();
        let report = audit_trajectory(&traj, &sys, &[]).unwrap();
        assert!(report.passed);
        assert!(report.checks.iter().all(|c| c.max_residual == 0.0));
    }

    #[test]
    fn short_run_passes_and_rk4_fails_energy() {
        let sys = so3_preset(INERTIA).unwrap().metriplectic_system();
        let cfg = IntegratorConfig::new(0.1).unwrap();
        let traj = integrate(&sys, &cfg, &x0(), 300).unwrap();
        let casimir_free = NamedInvariant::new("energy-copy", sys.hamiltonian.clone());
        let report = audit_trajectory(&traj, &sys, &[casimir_free]).unwrap();
        assert!(report.passed, "{}", report.to_json());
        assert_eq!(report.checks.len(), 3);

        let rk = integrate_rk4(&sys, &cfg, &x0(), 300).unwrap();
        assert_eq!(rk.method, Method::Rk4);
        let report = audit_trajectory(&rk, &sys, &[]).unwrap();
        assert!(!report.check("energy-drift").unwrap().passed);
    }

    #[test]
    fn audit_is_repeatable() {
        let sys = so3_preset(INERTIA).unwrap().metriplectic_system();
        let cfg = IntegratorConfig::new(0.1).unwrap();
        let traj = integrate(&sys, &cfg, &x0(), 50).unwrap();
        let before = traj.clone();
        let a = audit_trajectory(&traj, &sys, &[]).unwrap();
        let b = audit_trajectory(&traj, &sys, &[]).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        assert_eq!(traj, before);
    }

    #[test]
    fn entropy_rate_matches_on_the_reference_run() {
        let sys = so3_preset(INERTIA).unwrap().metriplectic_system();
        let cfg = IntegratorConfig::new(0.1).unwrap();
        let traj = integrate(&sys, &cfg, &x0(), 400).unwrap();
        let report = entropy_rate_check(&traj, &sys).unwrap();
        assert!(report.passed, "{}", report.to_json());
    }

    #[test]
    fn entropy_rate_at_equilibrium_is_zero() {
        let sys = so3_preset(INERTIA).unwrap().metriplectic_system();
        let cfg = IntegratorConfig::new(0.1).unwrap();
        let traj = integrate(&sys, &cfg, &DVector::zeros(3), 5).unwrap();
        let report = entropy_rate_check(&traj, &sys).unwrap();
        assert!(report.checks.iter().all(|c| c.max_residual == 0.0));
    }

    #[test]
    fn entropy_rate_deviation_is_second_order() {
        let preset = so3_preset(INERTIA).unwrap();
        let sys = preset.system_with_entropy(quartic_casimir(3));
        let x = dvector![0.3, -1.0, 0.4];
        let dev = |h: f64, n: usize| {
            let cfg = IntegratorConfig::new(h).unwrap();
            let traj = integrate(&sys, &cfg, &x, n).unwrap();
            entropy_rate_check(&traj, &sys).unwrap().checks[0].max_residual
        };
        let ratio = dev(0.1, 50) / dev(0.05, 100);
        assert!((2.5..=6.0).contains(&ratio), "{ratio}");
    }

    #[test]
    fn formulations_agree_for_the_rigid_body() {
        let preset = so3_preset(INERTIA).unwrap();
        let sc = &preset.structure;
        let report =
            cross_validate_formulations(sc, &preset.lagrangian, &AlgebraInnerProduct::identity(3), 100, 42).unwrap();
        assert!(report.passed, "{}", report.to_json());
        assert_eq!(report.seed, Some(42));

        let zero = cross_validate_formulations(sc, &preset.lagrangian, &AlgebraInnerProduct::zero(3), 100, 42).unwrap();
        assert!(zero.checks.iter().all(|c| c.max_residual <= 1e-13));

        let sphere = so3_preset([1.0, 1.0, 1.0]).unwrap();
        let flat = cross_validate_formulations(sc, &sphere.lagrangian, &AlgebraInnerProduct::identity(3), 100, 42).unwrap();
        assert!(flat.passed);
    }

    #[test]
    fn induced_tensor_agrees_for_general_inner_product() {
        let preset = so3_preset(INERTIA).unwrap();
        let kg = AlgebraInnerProduct::new(dmatrix![2.0, 0.3, 0.0; 0.3, 1.0, 0.1; 0.0, 0.1, 0.5]).unwrap();
        let report = cross_validate_formulations(&preset.structure, &preset.lagrangian, &kg, 50, 1).unwrap();
        assert!(report.check("induced-tensor").unwrap().passed);
    }

    #[test]
    fn scaled_discrepancy_of_identical_vectors_is_zero() {
        let a = dvector![1.0, -2.0];
        assert_eq!(scaled_discrepancy(&a, &a, 0.0), 0.0);
        assert!((scaled_discrepancy(&a, &dvector![1.0, -2.5], 0.0) - 0.2).abs() < 1e-15);
    }
}
