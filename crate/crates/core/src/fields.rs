//! State-dependent scalar, tensor and metric fields on a coordinate phase space.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, Error, Result};
use crate::linalg;

/// A point of the phase space in coordinates.
pub type StateVector = DVector<f64>;

type ValueFn = dyn Fn(&StateVector) -> f64 + Send + Sync;
type GradientFn = dyn Fn(&StateVector) -> DVector<f64> + Send + Sync;
type MatrixFn = dyn Fn(&StateVector) -> DMatrix<f64> + Send + Sync;

/// Returns an error unless every coordinate is finite.
pub fn check_state(x: &StateVector) -> Result<()> {
    if x.is_empty() {
        return Err(Error::config("state vector must have at least one coordinate"));
    }
    match x.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::config(format!("state coordinate {} is not finite", i + 1))),
        None => Ok(()),
    }
}

/// Step used by the central-difference fallback, `cbrt(eps) * (1 + |x|)`.
pub fn fd_step(x: &StateVector) -> f64 {
    f64::EPSILON.cbrt() * (1.0 + x.norm())
}

/// Differentiable real function of the state.
///
/// Holds an optional analytic gradient; without one, [`ScalarField::gradient`]
/// falls back to central finite differences.
#[derive(Clone)]
pub struct ScalarField {
    dim: usize,
    value: Arc<ValueFn>,
    gradient: Option<Arc<GradientFn>>,
}

impl fmt::Debug for ScalarField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScalarField")
            .field("dim", &self.dim)
            .field("analytic_gradient", &self.gradient.is_some())
            .finish()
    }
}

impl ScalarField {
    pub fn new<F>(dim: usize, value: F) -> Self
    where
        F: Fn(&StateVector) -> f64 + Send + Sync + 'static,
    {
        ScalarField {
            dim,
            value: Arc::new(value),
            gradient: None,
        }
    }

    pub fn with_gradient<F, G>(dim: usize, value: F, gradient: G) -> Self
    where
        F: Fn(&StateVector) -> f64 + Send + Sync + 'static,
        G: Fn(&StateVector) -> DVector<f64> + Send + Sync + 'static,
    {
        ScalarField {
            dim,
            value: Arc::new(value),
            gradient: Some(Arc::new(gradient)),
        }
    }

    pub fn constant(dim: usize, c: f64) -> Self {
        Self::with_gradient(dim, move |_| c, move |_| DVector::zeros(dim))
    }

    /// The coordinate function `x -> x[index]`.
    pub fn coordinate(dim: usize, index: usize) -> Self {
        Self::with_gradient(
            dim,
            move |x| x[index],
            move |_| {
                let mut g = DVector::zeros(dim);
                g[index] = 1.0;
                g
            },
        )
    }

    /// `x -> 1/2 x^T A x` for a symmetric matrix `A`.
    pub fn quadratic(a: DMatrix<f64>) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::config("quadratic form matrix must be square"));
        }
        if linalg::symmetry_defect(&a) > 1e-14 * a.amax().max(1.0) {
            return Err(Error::config("quadratic form matrix must be symmetric"));
        }
        let dim = a.nrows();
        let a_grad = a.clone();
        Ok(Self::with_gradient(
            dim,
            move |x| 0.5 * x.dot(&(&a * x)),
            move |x| &a_grad * x,
        ))
    }

    /// `x -> 1/2 sum_i x_i^2 / d_i`.
    pub fn diagonal_quadratic(weights: Vec<f64>) -> Self {
        let dim = weights.len();
        let w2 = weights.clone();
        Self::with_gradient(
            dim,
            move |x| 0.5 * x.iter().zip(&weights).map(|(v, d)| v * v / d).sum::<f64>(),
            move |x| DVector::from_iterator(dim, x.iter().zip(&w2).map(|(v, d)| v / d)),
        )
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn has_analytic_gradient(&self) -> bool {
        self.gradient.is_some()
    }

    pub fn value(&self, x: &StateVector) -> f64 {
        (self.value)(x)
    }

    pub fn gradient(&self, x: &StateVector) -> DVector<f64> {
        match &self.gradient {
            Some(g) => g(x),
            None => self.fd_gradient(x),
        }
    }

    /// Central finite-difference gradient with step [`fd_step`].
    pub fn fd_gradient(&self, x: &StateVector) -> DVector<f64> {
        let h = fd_step(x);
        let mut probe = x.clone();
        DVector::from_iterator(
            x.len(),
            (0..x.len()).map(|i| {
                let xi = probe[i];
                probe[i] = xi + h;
                let up = self.value(&probe);
                probe[i] = xi - h;
                let down = self.value(&probe);
                probe[i] = xi;
                (up - down) / (2.0 * h)
            }),
        )
    }

    /// Largest `|g_analytic - g_fd| / (1 + |g_analytic|)` over the samples.
    ///
    /// Zero when the field has no analytic gradient.
    pub fn gradient_mismatch(&self, samples: &[StateVector]) -> f64 {
        let Some(g) = &self.gradient else {
            return 0.0;
        };
        samples
            .iter()
            .map(|x| {
                let ga = g(x);
                (&ga - self.fd_gradient(x)).norm() / (1.0 + ga.norm())
            })
            .fold(0.0, f64::max)
    }

    pub(crate) fn check_dim(&self, x: &StateVector) -> Result<()> {
        ensure_dim(self.dim, x.len())
    }
}

/// One term `coef * prod_i x_i^powers[i]` of a [`Polynomial`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Monomial {
    pub coef: f64,
    pub powers: Vec<u32>,
}

/// Multivariate polynomial given by a coefficient table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Polynomial {
    pub dim: usize,
    pub terms: Vec<Monomial>,
}

impl Polynomial {
    pub fn new(dim: usize, terms: Vec<Monomial>) -> Result<Self> {
        for t in &terms {
            if t.powers.len() != dim {
                return Err(Error::config(format!(
                    "monomial has {} exponents, polynomial dimension is {dim}",
                    t.powers.len()
                )));
            }
            if !t.coef.is_finite() {
                return Err(Error::config("monomial coefficient is not finite"));
            }
        }
        Ok(Polynomial { dim, terms })
    }

    pub fn degree(&self) -> u32 {
        self.terms
            .iter()
            .map(|t| t.powers.iter().sum())
            .max()
            .unwrap_or(0)
    }

    pub fn value(&self, x: &StateVector) -> f64 {
        self.terms
            .iter()
            .map(|t| {
                t.coef
                    * t.powers
                        .iter()
                        .zip(x.iter())
                        .map(|(&p, &v)| v.powi(p as i32))
                        .product::<f64>()
            })
            .sum()
    }

    pub fn gradient(&self, x: &StateVector) -> DVector<f64> {
        let mut g = DVector::zeros(self.dim);
        for t in &self.terms {
            for i in 0..self.dim {
                if t.powers[i] == 0 {
                    continue;
                }
                let mut prod = t.coef * f64::from(t.powers[i]);
                for (j, (&p, &v)) in t.powers.iter().zip(x.iter()).enumerate() {
                    let e = if j == i { p - 1 } else { p };
                    prod *= v.powi(e as i32);
                }
                g[i] += prod;
            }
        }
        g
    }
}

impl From<Polynomial> for ScalarField {
    fn from(p: Polynomial) -> Self {
        let dim = p.dim;
        let pg = p.clone();
        ScalarField::with_gradient(dim, move |x| p.value(x), move |x| pg.gradient(x))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SymmetryClass {
    Skew,
    SymmetricPsd,
}

/// State-dependent `n x n` matrix with a declared symmetry class.
///
/// Evaluation projects onto the declared class (`(M - M^T)/2` or
/// `(M + M^T)/2`). The projection is exact on inputs that already conform,
/// so stored skew fields satisfy `M^T = -M` bit for bit.
#[derive(Clone)]
pub struct TensorField {
    dim: usize,
    class: SymmetryClass,
    eval: Arc<MatrixFn>,
}

impl fmt::Debug for TensorField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TensorField")
            .field("dim", &self.dim)
            .field("class", &self.class)
            .finish()
    }
}

impl TensorField {
    pub fn new<F>(dim: usize, class: SymmetryClass, eval: F) -> Self
    where
        F: Fn(&StateVector) -> DMatrix<f64> + Send + Sync + 'static,
    {
        TensorField {
            dim,
            class,
            eval: Arc::new(eval),
        }
    }

    pub fn skew<F>(dim: usize, eval: F) -> Self
    where
        F: Fn(&StateVector) -> DMatrix<f64> + Send + Sync + 'static,
    {
        Self::new(dim, SymmetryClass::Skew, eval)
    }

    pub fn symmetric_psd<F>(dim: usize, eval: F) -> Self
    where
        F: Fn(&StateVector) -> DMatrix<f64> + Send + Sync + 'static,
    {
        Self::new(dim, SymmetryClass::SymmetricPsd, eval)
    }

    /// A state-independent field; the matrix must already belong to `class`.
    pub fn constant(m: DMatrix<f64>, class: SymmetryClass) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::config("tensor matrix must be square"));
        }
        let scale = m.norm();
        match class {
            SymmetryClass::Skew => {
                if linalg::skew_defect(&m) > 1e-14 * scale {
                    return Err(Error::config("matrix is not skew-symmetric"));
                }
            }
            SymmetryClass::SymmetricPsd => {
                if linalg::symmetry_defect(&m) > 1e-14 * scale {
                    return Err(Error::config("matrix is not symmetric"));
                }
                if linalg::min_eigenvalue(&m) < -1e-12 * scale {
                    return Err(Error::config("matrix is not positive semidefinite"));
                }
            }
        }
        Ok(Self::new(m.nrows(), class, move |_| m.clone()))
    }

    pub fn zero(dim: usize, class: SymmetryClass) -> Self {
        Self::new(dim, class, move |_| DMatrix::zeros(dim, dim))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn class(&self) -> SymmetryClass {
        self.class
    }

    pub fn eval(&self, x: &StateVector) -> DMatrix<f64> {
        let m = (self.eval)(x);
        let mt = m.transpose();
        match self.class {
            SymmetryClass::Skew => (m - mt) * 0.5,
            SymmetryClass::SymmetricPsd => (m + mt) * 0.5,
        }
    }

    /// Largest violation of the declared class over the samples.
    ///
    /// For skew fields this is `max |M + M^T| / |M|`; for PSD fields it is
    /// `max(0, -lambda_min) / |M|`.
    pub fn class_violation(&self, samples: &[StateVector]) -> f64 {
        samples
            .iter()
            .map(|x| {
                let m = self.eval(x);
                let scale = m.norm();
                if scale == 0.0 {
                    return 0.0;
                }
                match self.class {
                    SymmetryClass::Skew => linalg::skew_defect(&m) / scale,
                    SymmetryClass::SymmetricPsd => (-linalg::min_eigenvalue(&m)).max(0.0) / scale,
                }
            })
            .fold(0.0, f64::max)
    }

    pub(crate) fn check_dim(&self, x: &StateVector) -> Result<()> {
        ensure_dim(self.dim, x.len())
    }
}

/// Cometric field `G^{-1}(x)`: the inverse metric acting on covectors.
#[derive(Clone)]
pub struct MetricField {
    dim: usize,
    g_inv: Arc<MatrixFn>,
}

impl fmt::Debug for MetricField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MetricField").field("dim", &self.dim).finish()
    }
}

impl MetricField {
    pub fn new<F>(dim: usize, g_inv: F) -> Self
    where
        F: Fn(&StateVector) -> DMatrix<f64> + Send + Sync + 'static,
    {
        MetricField {
            dim,
            g_inv: Arc::new(g_inv),
        }
    }

    pub fn euclidean(dim: usize) -> Self {
        Self::new(dim, move |_| DMatrix::identity(dim, dim))
    }

    /// Constant cometric; rejected unless symmetric positive definite.
    pub fn constant(g_inv: DMatrix<f64>) -> Result<Self> {
        if g_inv.nrows() != g_inv.ncols() {
            return Err(Error::config("metric matrix must be square"));
        }
        if linalg::symmetry_defect(&g_inv) > 1e-14 * g_inv.norm() {
            return Err(Error::config("metric matrix must be symmetric"));
        }
        if g_inv.clone().cholesky().is_none() {
            return Err(Error::config("metric matrix must be positive definite"));
        }
        Ok(Self::new(g_inv.nrows(), move |_| g_inv.clone()))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn g_inv(&self, x: &StateVector) -> DMatrix<f64> {
        (self.g_inv)(x)
    }

    /// Smallest eigenvalue of the cometric over the samples.
    pub fn min_eigenvalue(&self, samples: &[StateVector]) -> f64 {
        samples
            .iter()
            .map(|x| linalg::min_eigenvalue(&self.g_inv(x)))
            .fold(f64::INFINITY, f64::min)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    #[test]
    fn polynomial_gradient_matches_finite_differences() {
        let p = Polynomial::new(
            3,
            vec![
                Monomial { coef: 1.5, powers: vec![2, 1, 0] },
                Monomial { coef: -0.25, powers: vec![0, 0, 4] },
                Monomial { coef: 2.0, powers: vec![1, 1, 1] },
            ],
        )
        .unwrap();
        assert_eq!(p.degree(), 4);
        let f: ScalarField = p.into();
        let samples = vec![dvector![0.3, -1.2, 0.7], dvector![1.9, 0.1, -1.4]];
        assert!(f.gradient_mismatch(&samples) < 1e-6);
    }

    #[test]
    fn polynomial_rejects_wrong_arity() {
        let err = Polynomial::new(2, vec![Monomial { coef: 1.0, powers: vec![1] }]);
        assert!(err.is_err());
    }

    #[test]
    fn fd_fallback_is_used_without_analytic_gradient() {
        let f = ScalarField::new(2, |x| x[0].sin() * x[1]);
        let x = dvector![0.4, 2.0];
        let g = f.gradient(&x);
        assert!((g[0] - 0.4f64.cos() * 2.0).abs() < 1e-9);
        assert!((g[1] - 0.4f64.sin()).abs() < 1e-9);
    }

    #[test]
    fn skew_projection_is_exact_on_skew_input() {
        let t = TensorField::skew(2, |x| nalgebra::dmatrix![0.0, x[0].powi(2); -x[0].powi(2), 0.0]);
        let m = t.eval(&dvector![0.37, 1.0]);
        assert_eq!(m[(0, 1)], 0.37f64.powi(2));
        assert_eq!(&m + m.transpose(), DMatrix::zeros(2, 2));
    }

    #[test]
    fn constant_tensor_validates_class() {
        let not_skew = nalgebra::dmatrix![0.0, 1.0; 1.0, 0.0];
        assert!(TensorField::constant(not_skew.clone(), SymmetryClass::Skew).is_err());
        let indefinite = nalgebra::dmatrix![1.0, 0.0; 0.0, -1.0];
        assert!(TensorField::constant(indefinite, SymmetryClass::SymmetricPsd).is_err());
    }

    #[test]
    fn metric_must_be_positive_definite() {
        assert!(MetricField::constant(nalgebra::dmatrix![1.0, 0.0; 0.0, 0.0]).is_err());
        assert!(MetricField::constant(nalgebra::dmatrix![2.0, 0.5; 0.5, 1.0]).is_ok());
    }

    #[test]
    fn state_check_rejects_non_finite() {
        assert!(check_state(&dvector![1.0, f64::NAN]).is_err());
        assert!(check_state(&DVector::zeros(0)).is_err());
        assert!(check_state(&dvector![1.0]).is_ok());
    }
}
