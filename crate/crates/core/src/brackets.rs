//! Poisson and symmetric brackets as matrix fields, the metric-based
//! construction of degenerate PSD brackets, and the metriplectic system bundle.

use nalgebra::{DMatrix, DVector};

use crate::error::{ensure_dim, Error, Result};
use crate::fields::{MetricField, ScalarField, StateVector, SymmetryClass, TensorField};
use crate::linalg;

/// Relative singular-value cutoff for the Gram pseudo-inverse.
pub const GRAM_PINV_CUTOFF: f64 = 1e-12;

/// Relative singular-value cutoff when counting the rank of a skew matrix.
pub const RANK_CUTOFF: f64 = 1e-10;

/// Maximum residual over a sample set, with the index of the worst sample.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualReport {
    pub max_residual: f64,
    pub worst_index: Option<usize>,
}

impl ResidualReport {
    fn from_residuals(residuals: impl Iterator<Item = f64>) -> Self {
        let mut report = ResidualReport {
            max_residual: 0.0,
            worst_index: None,
        };
        for (i, r) in residuals.enumerate() {
            if report.worst_index.is_none() || r > report.max_residual {
                report.max_residual = r;
                report.worst_index = Some(i);
            }
        }
        report
    }
}

fn require_class(t: &TensorField, class: SymmetryClass) -> Result<()> {
    if t.class() == class {
        Ok(())
    } else {
        Err(Error::config(format!(
            "expected a {class:?} tensor field, got {:?}",
            t.class()
        )))
    }
}

fn contract(t: &TensorField, f: &ScalarField, g: &ScalarField, x: &StateVector) -> Result<f64> {
    t.check_dim(x)?;
    f.check_dim(x)?;
    g.check_dim(x)?;
    let df = f.gradient(x);
    let dg = g.gradient(x);
    Ok(df.dot(&(t.eval(x) * dg)))
}

/// `{f, g}(x) = grad f^T Pi(x) grad g`.
pub fn poisson_bracket(pi: &TensorField, f: &ScalarField, g: &ScalarField, x: &StateVector) -> Result<f64> {
    require_class(pi, SymmetryClass::Skew)?;
    contract(pi, f, g, x)
}

/// `(f, g)(x) = grad f^T K(x) grad g`.
pub fn symmetric_bracket(
    kappa: &TensorField,
    f: &ScalarField,
    g: &ScalarField,
    x: &StateVector,
) -> Result<f64> {
    require_class(kappa, SymmetryClass::SymmetricPsd)?;
    contract(kappa, f, g, x)
}

/// `X_H(x) = Pi(x) grad H(x)`.
pub fn hamiltonian_vector_field(pi: &TensorField, h: &ScalarField, x: &StateVector) -> Result<DVector<f64>> {
    require_class(pi, SymmetryClass::Skew)?;
    pi.check_dim(x)?;
    h.check_dim(x)?;
    Ok(pi.eval(x) * h.gradient(x))
}

/// `C G - (G w)(G w)^T` with `C = w^T G w`: the PSD matrix built from the
/// cometric `G` whose kernel contains the covector `w`.
pub fn degenerate_projection(g_inv: &DMatrix<f64>, w: &DVector<f64>) -> DMatrix<f64> {
    let gw = g_inv * w;
    let c = w.dot(&gw);
    g_inv * c - &gw * gw.transpose()
}

/// PSD field `K = C_H G^{-1} - (G^{-1} grad H)(G^{-1} grad H)^T` with `K grad H = 0`.
///
/// Vanishes where `grad H = 0`.
pub fn psd_from_metric(metric: &MetricField, h: &ScalarField) -> Result<TensorField> {
    ensure_dim(metric.dim(), h.dim())?;
    let metric = metric.clone();
    let h = h.clone();
    Ok(TensorField::symmetric_psd(metric.dim(), move |x| {
        degenerate_projection(&metric.g_inv(x), &h.gradient(x))
    }))
}

/// PSD field whose kernel contains every `dL_a`.
///
/// `K = P^T G P` with `P = I - L C^+ L^T G`, where the columns of `L` are the
/// constraint differentials and `C^+` is the pseudo-inverse of the Gram
/// matrix `L^T G L`. With the single constraint `H` this equals
/// [`psd_from_metric`] divided by `C_H = grad H^T G grad H`.
pub fn psd_multi_constraint(metric: &MetricField, constraints: &[ScalarField]) -> Result<TensorField> {
    if constraints.is_empty() {
        return Err(Error::config("at least one constraint function is required"));
    }
    for c in constraints {
        ensure_dim(metric.dim(), c.dim())?;
    }
    let metric = metric.clone();
    let constraints = constraints.to_vec();
    let n = metric.dim();
    Ok(TensorField::symmetric_psd(n, move |x| {
        let g = metric.g_inv(x);
        let l = DMatrix::from_columns(&constraints.iter().map(|c| c.gradient(x)).collect::<Vec<_>>());
        let gram = l.transpose() * &g * &l;
        let gram_pinv = linalg::pseudo_inverse(&gram, GRAM_PINV_CUTOFF);
        let p = DMatrix::identity(n, n) - &l * gram_pinv * l.transpose() * &g;
        p.transpose() * g * p
    }))
}

/// Central-difference derivatives `d Pi / d x_l` for every `l`.
fn tensor_derivatives(pi: &TensorField, x: &StateVector, h_fd: f64) -> Vec<DMatrix<f64>> {
    let mut probe = x.clone();
    (0..x.len())
        .map(|l| {
            let xl = probe[l];
            probe[l] = xl + h_fd;
            let up = pi.eval(&probe);
            probe[l] = xl - h_fd;
            let down = pi.eval(&probe);
            probe[l] = xl;
            (up - down) / (2.0 * h_fd)
        })
        .collect()
}

/// Jacobi identity residual of a skew field, using central differences with step `h_fd`.
///
/// Returns `max |sum_l Pi^il d_l Pi^jk + Pi^kl d_l Pi^ij + Pi^jl d_l Pi^ki|`
/// over all index triples and samples.
pub fn check_jacobi(pi: &TensorField, samples: &[StateVector], h_fd: f64) -> Result<ResidualReport> {
    require_class(pi, SymmetryClass::Skew)?;
    if h_fd.is_nan() || h_fd <= 0.0 {
        return Err(Error::config("finite-difference step must be positive"));
    }
    for x in samples {
        pi.check_dim(x)?;
    }
    let n = pi.dim();
    Ok(ResidualReport::from_residuals(samples.iter().map(|x| {
        let p = pi.eval(x);
        let dp = tensor_derivatives(pi, x, h_fd);
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let s: f64 = (0..n)
                        .map(|l| {
                            p[(i, l)] * dp[l][(j, k)] + p[(k, l)] * dp[l][(i, j)] + p[(j, l)] * dp[l][(k, i)]
                        })
                        .sum();
                    worst = worst.max(s.abs());
                }
            }
        }
        worst
    })))
}

/// Casimir residual `max |Pi grad C| / (1 + |Pi| |grad C|)`.
pub fn check_casimir(pi: &TensorField, c: &ScalarField, samples: &[StateVector]) -> Result<ResidualReport> {
    require_class(pi, SymmetryClass::Skew)?;
    for x in samples {
        pi.check_dim(x)?;
        c.check_dim(x)?;
    }
    Ok(ResidualReport::from_residuals(samples.iter().map(|x| {
        let p = pi.eval(x);
        let dc = c.gradient(x);
        (&p * &dc).norm() / (1.0 + p.norm() * dc.norm())
    })))
}

/// Kernel residual `max |K grad f| / (|K| |grad f|)`, zero where either factor vanishes.
pub fn check_kernel(kappa: &TensorField, f: &ScalarField, samples: &[StateVector]) -> Result<ResidualReport> {
    for x in samples {
        kappa.check_dim(x)?;
        f.check_dim(x)?;
    }
    Ok(ResidualReport::from_residuals(samples.iter().map(|x| {
        let k = kappa.eval(x);
        let df = f.gradient(x);
        let scale = k.norm() * df.norm();
        if scale == 0.0 {
            0.0
        } else {
            (&k * &df).norm() / scale
        }
    })))
}

/// Numerical rank of a skew matrix (always even for a genuine skew matrix).
pub fn skew_rank(m: &DMatrix<f64>) -> usize {
    linalg::numerical_rank(m, RANK_CUTOFF)
}

/// A metriplectic system: Poisson field, PSD field, energy and entropy.
///
/// Systems built with [`MetriplecticSystem::from_metric`] also carry the
/// cometric, which the discrete integrator needs to assemble its PSD product.
#[derive(Clone, Debug)]
pub struct MetriplecticSystem {
    pub pi: TensorField,
    pub kappa: TensorField,
    pub hamiltonian: ScalarField,
    pub entropy: ScalarField,
    pub metric: Option<MetricField>,
}

/// Kernel and Casimir residuals of a system over a sample set.
#[derive(Clone, Debug, PartialEq)]
pub struct SystemCheck {
    pub kernel: ResidualReport,
    pub casimir: ResidualReport,
}

impl MetriplecticSystem {
    pub fn new(pi: TensorField, kappa: TensorField, hamiltonian: ScalarField, entropy: ScalarField) -> Result<Self> {
        require_class(&pi, SymmetryClass::Skew)?;
        require_class(&kappa, SymmetryClass::SymmetricPsd)?;
        let n = pi.dim();
        if n == 0 {
            return Err(Error::config("phase space dimension must be at least 1"));
        }
        ensure_dim(n, kappa.dim())?;
        ensure_dim(n, hamiltonian.dim())?;
        ensure_dim(n, entropy.dim())?;
        Ok(MetriplecticSystem {
            pi,
            kappa,
            hamiltonian,
            entropy,
            metric: None,
        })
    }

    /// Builds `K` from the cometric with [`psd_from_metric`] and keeps the metric.
    pub fn from_metric(pi: TensorField, metric: MetricField, hamiltonian: ScalarField, entropy: ScalarField) -> Result<Self> {
        let kappa = psd_from_metric(&metric, &hamiltonian)?;
        let mut sys = Self::new(pi, kappa, hamiltonian, entropy)?;
        sys.metric = Some(metric);
        Ok(sys)
    }

    pub fn dim(&self) -> usize {
        self.pi.dim()
    }

    /// `Pi grad H + K grad S`.
    pub fn vector_field(&self, x: &StateVector) -> DVector<f64> {
        self.pi.eval(x) * self.hamiltonian.gradient(x) + self.kappa.eval(x) * self.entropy.gradient(x)
    }

    /// Entropy production rate `(S, S)(x)`.
    pub fn entropy_production(&self, x: &StateVector) -> f64 {
        let ds = self.entropy.gradient(x);
        ds.dot(&(self.kappa.eval(x) * &ds))
    }

    pub fn check(&self, samples: &[StateVector]) -> Result<SystemCheck> {
        Ok(SystemCheck {
            kernel: check_kernel(&self.kappa, &self.hamiltonian, samples)?,
            casimir: check_casimir(&self.pi, &self.entropy, samples)?,
        })
    }
}
