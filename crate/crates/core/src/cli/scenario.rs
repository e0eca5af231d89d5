//! Scenario files: a TOML document describing one system, initial state and
//! integrator configuration.
//!
//! ```toml
//! id = "relaxing-rigid-body"
//! initial_state = [0.001, -1.0, 0.001]
//! step_h = 0.1
//! n_steps = 2000
//! scheme = "midpoint"
//! kd_variant = "unscaled"
//! seed = 7
//!
//! [system]
//! kind = "rigid-body"
//! inertia = [10.0, 5.0, 1.0]
//!
//! [solver]
//! kind = "fixed-point"
//! tol = 1e-13
//! max_iters = 200
//! ```

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::brackets::{check_casimir, check_kernel, MetriplecticSystem};
use crate::dgrad::{DiscreteGradientKind, DiscreteGradientScheme, DEFAULT_DEGENERACY_EPS};
use crate::error::{Error, Result};
use crate::fields::{check_state, MetricField, Monomial, Polynomial, ScalarField, StateVector, SymmetryClass, TensorField};
use crate::integrate::{IntegratorConfig, KdVariant, SolverKind, DEFAULT_MAX_ITERS, DEFAULT_SOLVER_TOL};
use crate::liealg::{lie_poisson_tensor, quartic_casimir, so3_preset, StructureConstants};
use crate::sampling::sample_states;

/// Largest admissible Casimir and kernel residual at load time.
pub const LOAD_RESIDUAL_TOL: f64 = 1e-10;
const LOAD_SAMPLES: usize = 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub id: String,
    pub initial_state: Vec<f64>,
    pub step_h: f64,
    pub n_steps: usize,
    #[serde(default = "default_scheme")]
    pub scheme: String,
    #[serde(default = "default_kd_variant")]
    pub kd_variant: String,
    #[serde(default)]
    pub seed: u64,
    pub system: SystemSpec,
    #[serde(default)]
    pub solver: SolverOptions,
}

fn default_scheme() -> String {
    DiscreteGradientKind::Midpoint.to_string()
}

fn default_kd_variant() -> String {
    KdVariant::Unscaled.to_string()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SystemSpec {
    /// so(3)* with `H = 1/2 sum p_i^2 / I_i`, Euclidean metric, `S = 1/2 |p|^2` unless overridden.
    RigidBody {
        inertia: [f64; 3],
        #[serde(default)]
        entropy: Option<FieldSpec>,
    },
    /// Lie-Poisson tensor from structure constants `[a, b, d, C^d_ab]`, indices from 1.
    CustomLiePoisson {
        dim: usize,
        structure: Vec<(usize, usize, usize, f64)>,
        hamiltonian: FieldSpec,
        entropy: FieldSpec,
        /// Constant inverse metric; identity when absent.
        #[serde(default)]
        metric: Option<Vec<Vec<f64>>>,
    },
    /// Constant skew Poisson matrix.
    ExplicitMatrices {
        pi: Vec<Vec<f64>>,
        hamiltonian: FieldSpec,
        entropy: FieldSpec,
        #[serde(default)]
        metric: Option<Vec<Vec<f64>>>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FieldPreset {
    /// `1/2 |x|^2`
    HalfNormSquared,
    /// `1/4 |x|^4`
    QuarticCasimir,
    Zero,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FieldSpec {
    Preset(FieldPreset),
    /// `1/2 x^T A x`
    Quadratic(Vec<Vec<f64>>),
    Polynomial(Vec<Monomial>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverOptions {
    #[serde(default = "default_solver")]
    pub kind: String,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
}

fn default_solver() -> String {
    SolverKind::FixedPoint.to_string()
}

fn default_tol() -> f64 {
    DEFAULT_SOLVER_TOL
}

fn default_max_iters() -> usize {
    DEFAULT_MAX_ITERS
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            kind: default_solver(),
            tol: default_tol(),
            max_iters: default_max_iters(),
        }
    }
}

fn matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(Error::config(format!("{what} must be a nonempty square matrix")));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

impl FieldSpec {
    pub fn build(&self, dim: usize, what: &str) -> Result<ScalarField> {
        let field = match self {
            FieldSpec::Preset(FieldPreset::HalfNormSquared) => ScalarField::diagonal_quadratic(vec![1.0; dim]),
            FieldSpec::Preset(FieldPreset::QuarticCasimir) => quartic_casimir(dim),
            FieldSpec::Preset(FieldPreset::Zero) => ScalarField::constant(dim, 0.0),
            FieldSpec::Quadratic(rows) => ScalarField::quadratic(matrix(rows, what)?)?,
            FieldSpec::Polynomial(terms) => Polynomial::new(dim, terms.clone())?.into(),
        };
        if field.dim() != dim {
            return Err(Error::config(format!(
                "{what} has dimension {}, system has dimension {dim}",
                field.dim()
            )));
        }
        Ok(field)
    }
}

fn metric(spec: &Option<Vec<Vec<f64>>>, dim: usize) -> Result<MetricField> {
    match spec {
        None => Ok(MetricField::euclidean(dim)),
        Some(rows) => {
            let m = MetricField::constant(matrix(rows, "metric")?)?;
            if m.dim() != dim {
                return Err(Error::config(format!("metric has dimension {}, system has dimension {dim}", m.dim())));
            }
            Ok(m)
        }
    }
}

impl SystemSpec {
    pub fn build(&self) -> Result<MetriplecticSystem> {
        match self {
            SystemSpec::RigidBody { inertia, entropy } => {
                let preset = so3_preset(*inertia)?;
                Ok(match entropy {
                    Some(spec) => preset.system_with_entropy(spec.build(3, "entropy")?),
                    None => preset.metriplectic_system(),
                })
            }
            SystemSpec::CustomLiePoisson {
                dim,
                structure,
                hamiltonian,
                entropy,
                metric: g,
            } => {
                let entries = structure
                    .iter()
                    .map(|&(a, b, d, v)| {
                        if a == 0 || b == 0 || d == 0 || a > *dim || b > *dim || d > *dim {
                            Err(Error::config(format!(
                                "structure constant index out of range 1..={dim}: [{a}, {b}, {d}]"
                            )))
                        } else {
                            Ok((a - 1, b - 1, d - 1, v))
                        }
                    })
                    .collect::<Result<Vec<_>>>()?;
                let sc = StructureConstants::from_entries(*dim, &entries)?;
                MetriplecticSystem::from_metric(
                    lie_poisson_tensor(&sc),
                    metric(g, *dim)?,
                    hamiltonian.build(*dim, "hamiltonian")?,
                    entropy.build(*dim, "entropy")?,
                )
            }
            SystemSpec::ExplicitMatrices {
                pi,
                hamiltonian,
                entropy,
                metric: g,
            } => {
                let pi = TensorField::constant(matrix(pi, "pi")?, SymmetryClass::Skew)?;
                let dim = pi.dim();
                MetriplecticSystem::from_metric(
                    pi,
                    metric(g, dim)?,
                    hamiltonian.build(dim, "hamiltonian")?,
                    entropy.build(dim, "entropy")?,
                )
            }
        }
    }
}

impl Scenario {
    /// The relaxing rigid body with `I = (10, 5, 1)`, `h = 0.1` and
    /// `p(0) = (0.001, -1, 0.001)`.
    pub fn relaxing_rigid_body() -> Self {
        Scenario {
            id: "relaxing-rigid-body".into(),
            initial_state: vec![0.001, -1.0, 0.001],
            step_h: 0.1,
            n_steps: 2000,
            scheme: default_scheme(),
            kd_variant: default_kd_variant(),
            seed: 7,
            system: SystemSpec::RigidBody {
                inertia: [10.0, 5.0, 1.0],
                entropy: None,
            },
            solver: SolverOptions::default(),
        }
    }

    /// Parses and validates a scenario document.
    pub fn parse(text: &str) -> Result<Self> {
        let scenario: Scenario = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn system(&self) -> Result<MetriplecticSystem> {
        self.system.build()
    }

    pub fn initial_state(&self) -> StateVector {
        DVector::from_column_slice(&self.initial_state)
    }

    pub fn scheme(&self) -> Result<DiscreteGradientScheme> {
        DiscreteGradientScheme::new(self.scheme.parse()?, DEFAULT_DEGENERACY_EPS)
    }

    pub fn config(&self) -> Result<IntegratorConfig> {
        let cfg = IntegratorConfig {
            step_h: self.step_h,
            solver: self.solver.kind.parse()?,
            solver_tol: self.solver.tol,
            max_iters: self.solver.max_iters,
            kd_variant: self.kd_variant.parse()?,
            scheme: self.scheme()?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn rigid_body_inertia(&self) -> Option<[f64; 3]> {
        match self.system {
            SystemSpec::RigidBody { inertia, .. } => Some(inertia),
            _ => None,
        }
    }

    /// Builds the system and rejects it unless `S` is a Casimir and `K grad H = 0`
    /// to [`LOAD_RESIDUAL_TOL`] at seeded sample states.
    pub fn validate(&self) -> Result<()> {
        if self.id.trim().is_empty() {
            return Err(Error::config("scenario id must not be empty"));
        }
        self.config()?;
        let system = self.system()?;
        let x0 = self.initial_state();
        check_state(&x0)?;
        if x0.len() != system.dim() {
            return Err(Error::config(format!(
                "initial_state has {} entries, system has dimension {}",
                x0.len(),
                system.dim()
            )));
        }
        let samples = sample_states(system.dim(), LOAD_SAMPLES, self.seed);
        let casimir = check_casimir(&system.pi, &system.entropy, &samples)?;
        if casimir.max_residual > LOAD_RESIDUAL_TOL {
            return Err(Error::config(format!(
                "entropy is not a Casimir of the Poisson tensor: residual {:.3e} exceeds {LOAD_RESIDUAL_TOL:e}",
                casimir.max_residual
            )));
        }
        let kernel = check_kernel(&system.kappa, &system.hamiltonian, &samples)?;
        if kernel.max_residual > LOAD_RESIDUAL_TOL {
            return Err(Error::config(format!(
                "dissipative tensor does not annihilate grad H: residual {:.3e} exceeds {LOAD_RESIDUAL_TOL:e}",
                kernel.max_residual
            )));
        }
        Ok(())
    }
}

/// Reads, parses and validates a scenario file.
pub fn load_scenario(path: &Path) -> Result<Scenario> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read scenario {}: {e}", path.display())))?;
    Scenario::parse(&text).map_err(|e| match e {
        Error::Parse(msg) => Error::Parse(format!("{}: {msg}", path.display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_round_trips_through_toml() {
        let s = Scenario::relaxing_rigid_body();
        let back = Scenario::parse(&s.to_toml()).unwrap();
        assert_eq!(back, s);
        let cfg = back.config().unwrap();
        assert_eq!(cfg.step_h, 0.1);
        assert_eq!(back.rigid_body_inertia(), Some([10.0, 5.0, 1.0]));
    }

    #[test]
    fn empty_document_is_a_parse_error() {
        assert!(matches!(Scenario::parse(""), Err(Error::Parse(_))));
    }

    #[test]
    fn parse_error_reports_location() {
        let err = Scenario::parse("id = \"x\"\nstep_h = oops\n").unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Parse(_)));
        assert!(msg.contains("line 2"), "{msg}");
    }

    #[test]
    fn non_casimir_entropy_is_rejected() {
        let text = r#"
            id = "bad"
            initial_state = [0.1, 0.2, 0.3]
            step_h = 0.1
            n_steps = 10
            [system]
            kind = "rigid-body"
            inertia = [10.0, 5.0, 1.0]
            entropy = { polynomial = [{ coef = 1.0, powers = [1, 0, 0] }] }
        "#;
        let err = Scenario::parse(text).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(err.to_string().contains("Casimir"), "{err}");
    }

    #[test]
    fn custom_lie_poisson_matches_rigid_body_preset() {
        let text = r#"
            id = "so3"
            initial_state = [0.001, -1.0, 0.001]
            step_h = 0.1
            n_steps = 10
            [system]
            kind = "custom-lie-poisson"
            dim = 3
            structure = [[1, 2, 3, 1.0], [2, 3, 1, 1.0], [3, 1, 2, 1.0]]
            hamiltonian = { quadratic = [[0.1, 0.0, 0.0], [0.0, 0.2, 0.0], [0.0, 0.0, 1.0]] }
            entropy = { preset = "half-norm-squared" }
        "#;
        let custom = Scenario::parse(text).unwrap().system().unwrap();
        let preset = Scenario::relaxing_rigid_body().system().unwrap();
        for x in sample_states(3, 10, 3) {
            assert!((custom.vector_field(&x) - preset.vector_field(&x)).amax() < 1e-15);
        }
    }

    #[test]
    fn explicit_matrices_scenario_loads() {
        let text = r#"
            id = "canonical"
            initial_state = [1.0, 0.0, 0.5, 0.5]
            step_h = 0.05
            n_steps = 10
            [system]
            kind = "explicit-matrices"
            pi = [[0.0, 1.0, 0.0, 0.0], [-1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 0.0, 0.0], [0.0, 0.0, 0.0, 0.0]]
            hamiltonian = { polynomial = [{ coef = 0.5, powers = [2, 0, 0, 0] }, { coef = 0.5, powers = [0, 2, 0, 0] }, { coef = 1.0, powers = [0, 0, 1, 0] }] }
            entropy = { polynomial = [{ coef = 1.0, powers = [0, 0, 0, 1] }] }
        "#;
        let s = Scenario::parse(text).unwrap();
        assert_eq!(s.system().unwrap().dim(), 4);
    }

    #[test]
    fn invalid_settings_are_rejected() {
        let base = Scenario::relaxing_rigid_body();
        let mut bad = base.clone();
        bad.step_h = 0.0;
        assert!(bad.validate().is_err());
        let mut bad = base.clone();
        bad.initial_state = vec![1.0, 2.0];
        assert!(bad.validate().is_err());
        let mut bad = base.clone();
        bad.scheme = "euler".into();
        assert!(bad.validate().is_err());
        let mut bad = base.clone();
        bad.system = SystemSpec::RigidBody {
            inertia: [1.0, -1.0, 1.0],
            entropy: None,
        };
        assert!(bad.validate().is_err());
        let mut bad = base;
        bad.system = SystemSpec::CustomLiePoisson {
            dim: 3,
            structure: vec![(1, 2, 4, 1.0)],
            hamiltonian: FieldSpec::Preset(FieldPreset::HalfNormSquared),
            entropy: FieldSpec::Preset(FieldPreset::Zero),
            metric: None,
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut text = Scenario::relaxing_rigid_body().to_toml();
        text = format!("colour = \"red\"\n{text}");
        assert!(matches!(Scenario::parse(&text), Err(Error::Parse(_))));
    }
}
