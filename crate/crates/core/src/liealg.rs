//! Finite-dimensional Lie algebras given by structure constants, Lie-Poisson
//! tensors on the dual, and the forced Euler-Poincare / Lie-Poisson vector
//! fields with entropy-producing forces.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::brackets::MetriplecticSystem;
use crate::error::{ensure_dim, Error, Result};
use crate::fields::{MetricField, ScalarField, StateVector, SymmetryClass, TensorField};
use crate::linalg;

/// Tolerance for the Jacobi identity of structure constants.
pub const STRUCTURE_JACOBI_TOL: f64 = 1e-12;

/// Structure constants `C^d_{ab}` with `[e_a, e_b] = C^d_{ab} e_d`.
#[derive(Clone, Debug, PartialEq)]
pub struct StructureConstants {
    dim: usize,
    c: Vec<f64>,
}

impl StructureConstants {
    /// Dense constructor; `c[(a * n + b) * n + d] = C^d_{ab}`.
    pub fn new(dim: usize, c: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::config("Lie algebra dimension must be at least 1"));
        }
        if c.len() != dim * dim * dim {
            return Err(Error::config(format!(
                "expected {} structure constants, got {}",
                dim * dim * dim,
                c.len()
            )));
        }
        if c.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("structure constants must be finite"));
        }
        let sc = StructureConstants { dim, c };
        let scale = sc.c.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
        for a in 0..dim {
            for b in 0..dim {
                for d in 0..dim {
                    if (sc.get(a, b, d) + sc.get(b, a, d)).abs() > STRUCTURE_JACOBI_TOL * scale {
                        return Err(Error::config(format!(
                            "structure constants are not antisymmetric at (a={a}, b={b}, d={d})"
                        )));
                    }
                }
            }
        }
        let residual = sc.jacobi_residual();
        if residual > STRUCTURE_JACOBI_TOL * scale * scale {
            return Err(Error::config(format!(
                "structure constants violate the Jacobi identity (residual {residual:e})"
            )));
        }
        Ok(sc)
    }

    /// Builds from entries `(a, b, d, C^d_{ab})`; the `(b, a, d)` partner is filled in
    /// with the opposite sign.
    pub fn from_entries(dim: usize, entries: &[(usize, usize, usize, f64)]) -> Result<Self> {
        let mut c = vec![0.0; dim * dim * dim];
        let mut set = vec![false; dim * dim * dim];
        for &(a, b, d, v) in entries {
            if a >= dim || b >= dim || d >= dim {
                return Err(Error::config(format!(
                    "structure constant index ({a}, {b}, {d}) out of range for dimension {dim}"
                )));
            }
            for (idx, val) in [((a * dim + b) * dim + d, v), ((b * dim + a) * dim + d, -v)] {
                if set[idx] && c[idx] != val {
                    return Err(Error::config(format!(
                        "conflicting structure constant entries at ({a}, {b}, {d})"
                    )));
                }
                c[idx] = val;
                set[idx] = true;
            }
        }
        Self::new(dim, c)
    }

    /// so(3) identified with R^3 and the cross product: `C^d_{ab} = eps_{abd}`.
    pub fn so3() -> Self {
        Self::from_entries(3, &[(0, 1, 2, 1.0), (1, 2, 0, 1.0), (2, 0, 1, 1.0)])
            .expect("so(3) structure constants are valid")
    }

    pub fn abelian(dim: usize) -> Self {
        StructureConstants {
            dim,
            c: vec![0.0; dim * dim * dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, a: usize, b: usize, d: usize) -> f64 {
        self.c[(a * self.dim + b) * self.dim + d]
    }

    /// `max |sum_e C^e_ab C^f_ec + C^e_bc C^f_ea + C^e_ca C^f_eb|`.
    pub fn jacobi_residual(&self) -> f64 {
        let n = self.dim;
        let mut worst = 0.0f64;
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    for f in 0..n {
                        let s: f64 = (0..n)
                            .map(|e| {
                                self.get(a, b, e) * self.get(e, c, f)
                                    + self.get(b, c, e) * self.get(e, a, f)
                                    + self.get(c, a, e) * self.get(e, b, f)
                            })
                            .sum();
                        worst = worst.max(s.abs());
                    }
                }
            }
        }
        worst
    }
}

/// `[xi, eta]^d = C^d_{ab} xi^a eta^b`.
pub fn bracket(sc: &StructureConstants, xi: &DVector<f64>, eta: &DVector<f64>) -> Result<DVector<f64>> {
    ensure_dim(sc.dim, xi.len())?;
    ensure_dim(sc.dim, eta.len())?;
    Ok(bracket_unchecked(sc, xi, eta))
}

fn bracket_unchecked(sc: &StructureConstants, xi: &DVector<f64>, eta: &DVector<f64>) -> DVector<f64> {
    let n = sc.dim;
    let mut out = DVector::zeros(n);
    for a in 0..n {
        if xi[a] == 0.0 {
            continue;
        }
        for b in 0..n {
            let w = xi[a] * eta[b];
            if w == 0.0 {
                continue;
            }
            for d in 0..n {
                out[d] += sc.get(a, b, d) * w;
            }
        }
    }
    out
}

/// `(ad*_xi alpha)_b = C^d_{ab} xi^a alpha_d`, so that `<ad*_xi alpha, eta> = <alpha, [xi, eta]>`.
pub fn coadjoint(sc: &StructureConstants, xi: &DVector<f64>, alpha: &DVector<f64>) -> Result<DVector<f64>> {
    ensure_dim(sc.dim, xi.len())?;
    ensure_dim(sc.dim, alpha.len())?;
    Ok(coadjoint_unchecked(sc, xi, alpha))
}

fn coadjoint_unchecked(sc: &StructureConstants, xi: &DVector<f64>, alpha: &DVector<f64>) -> DVector<f64> {
    let n = sc.dim;
    DVector::from_iterator(
        n,
        (0..n).map(|b| {
            let mut s = 0.0;
            for a in 0..n {
                for d in 0..n {
                    s += sc.get(a, b, d) * xi[a] * alpha[d];
                }
            }
            s
        }),
    )
}

/// Lie-Poisson tensor `Pi_ij(mu) = -C^d_{ij} mu_d`.
///
/// With this sign `Pi(mu) grad H = ad*_{grad H} mu`; for so(3) and the rigid
/// body energy it reproduces Euler's equations.
pub fn lie_poisson_tensor(sc: &StructureConstants) -> TensorField {
    let sc = sc.clone();
    let n = sc.dim;
    TensorField::skew(n, move |mu| {
        DMatrix::from_fn(n, n, |i, j| -(0..n).map(|d| sc.get(i, j, d) * mu[d]).sum::<f64>())
    })
}

/// Constant positive semidefinite inner product on the algebra.
#[derive(Clone, Debug, PartialEq)]
pub struct AlgebraInnerProduct {
    kg: DMatrix<f64>,
}

impl AlgebraInnerProduct {
    pub fn new(kg: DMatrix<f64>) -> Result<Self> {
        if kg.nrows() != kg.ncols() {
            return Err(Error::config("inner product matrix must be square"));
        }
        let scale = kg.norm();
        if linalg::symmetry_defect(&kg) > 1e-14 * scale {
            return Err(Error::config("inner product matrix must be symmetric"));
        }
        if linalg::min_eigenvalue(&kg) < -1e-12 * scale {
            return Err(Error::config("inner product matrix must be positive semidefinite"));
        }
        Ok(AlgebraInnerProduct { kg })
    }

    pub fn identity(dim: usize) -> Self {
        AlgebraInnerProduct {
            kg: DMatrix::identity(dim, dim),
        }
    }

    pub fn zero(dim: usize) -> Self {
        AlgebraInnerProduct {
            kg: DMatrix::zeros(dim, dim),
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.kg
    }

    pub fn dim(&self) -> usize {
        self.kg.nrows()
    }
}

/// `l(xi) = 1/2 xi^T M xi` with `M` symmetric positive definite.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticLagrangian {
    m: DMatrix<f64>,
    m_inv: DMatrix<f64>,
}

impl QuadraticLagrangian {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::config("inertia operator must be square"));
        }
        if linalg::symmetry_defect(&m) > 1e-14 * m.norm() {
            return Err(Error::config("inertia operator must be symmetric"));
        }
        let chol = m
            .clone()
            .cholesky()
            .ok_or_else(|| Error::config("inertia operator must be positive definite"))?;
        let m_inv = chol.inverse();
        Ok(QuadraticLagrangian { m, m_inv })
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn inertia(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn value(&self, xi: &DVector<f64>) -> f64 {
        0.5 * xi.dot(&(&self.m * xi))
    }

    /// Legendre transform `mu = M xi`.
    pub fn momentum(&self, xi: &DVector<f64>) -> DVector<f64> {
        &self.m * xi
    }

    /// Inverse Legendre transform `xi = M^{-1} mu`.
    pub fn velocity(&self, mu: &DVector<f64>) -> DVector<f64> {
        &self.m_inv * mu
    }

    /// Energy `E_l = <M xi, xi> - l(xi)`.
    pub fn energy(&self, xi: &DVector<f64>) -> f64 {
        self.momentum(xi).dot(xi) - self.value(xi)
    }

    /// Reduced Hamiltonian `H(mu) = 1/2 mu^T M^{-1} mu`.
    pub fn hamiltonian(&self) -> ScalarField {
        let a = self.m_inv.clone();
        let b = self.m_inv.clone();
        ScalarField::with_gradient(self.dim(), move |mu| 0.5 * mu.dot(&(&a * mu)), move |mu| &b * mu)
    }
}

type ForceFn = dyn Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync;

#[derive(Clone, Debug)]
pub enum ForceProvenance {
    UserSupplied,
    FromCasimir {
        inner_product: AlgebraInnerProduct,
        casimir: ScalarField,
    },
}

/// Force `F(xi, mu)` from the algebra to its dual.
///
/// User-supplied forces ignore `mu`; forces derived from a Casimir read
/// `dC/dmu` at `mu`.
#[derive(Clone)]
pub struct ForceMap {
    dim: usize,
    provenance: ForceProvenance,
    eval: Arc<ForceFn>,
}

impl fmt::Debug for ForceMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ForceMap")
            .field("dim", &self.dim)
            .field("provenance", &self.provenance)
            .finish()
    }
}

impl ForceMap {
    pub fn user<F>(dim: usize, force: F) -> Self
    where
        F: Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    {
        ForceMap {
            dim,
            provenance: ForceProvenance::UserSupplied,
            eval: Arc::new(move |xi, _mu| force(xi)),
        }
    }

    pub fn zero(dim: usize) -> Self {
        Self::user(dim, move |_| DVector::zeros(dim))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn provenance(&self) -> &ForceProvenance {
        &self.provenance
    }

    pub fn eval(&self, xi: &DVector<f64>, mu: &DVector<f64>) -> DVector<f64> {
        (self.eval)(xi, mu)
    }
}

/// Right-hand side of the forced Euler-Poincare equations,
/// `d/dt (M xi) = ad*_xi (M xi + F(xi))`.
pub fn forced_ep_rhs(
    lag: &QuadraticLagrangian,
    sc: &StructureConstants,
    force: &ForceMap,
    xi: &DVector<f64>,
) -> Result<DVector<f64>> {
    ensure_dim(sc.dim, lag.dim())?;
    ensure_dim(sc.dim, force.dim)?;
    ensure_dim(sc.dim, xi.len())?;
    let mu = lag.momentum(xi);
    let total = &mu + force.eval(xi, &mu);
    Ok(coadjoint_unchecked(sc, xi, &total))
}

/// Forced Lie-Poisson vector field `mu' = ad*_{dH/dmu} (mu + F(dH/dmu))`.
pub fn forced_lie_poisson_rhs(
    sc: &StructureConstants,
    h: &ScalarField,
    force: &ForceMap,
    mu: &DVector<f64>,
) -> Result<DVector<f64>> {
    ensure_dim(sc.dim, h.dim())?;
    ensure_dim(sc.dim, force.dim)?;
    ensure_dim(sc.dim, mu.len())?;
    let xi = h.gradient(mu);
    let total = mu + force.eval(&xi, mu);
    Ok(coadjoint_unchecked(sc, &xi, &total))
}

/// Entropy-producing force `F(xi, mu) = K [xi, dC/dmu]`, defined by
/// `<F(xi), eta> = K(eta, [xi, dC/dmu])`.
pub fn force_from_casimir(
    sc: &StructureConstants,
    inner_product: &AlgebraInnerProduct,
    casimir: &ScalarField,
) -> Result<ForceMap> {
    ensure_dim(sc.dim, inner_product.dim())?;
    ensure_dim(sc.dim, casimir.dim())?;
    let sc_f = sc.clone();
    let kg = inner_product.kg.clone();
    let c = casimir.clone();
    Ok(ForceMap {
        dim: sc.dim,
        provenance: ForceProvenance::FromCasimir {
            inner_product: inner_product.clone(),
            casimir: casimir.clone(),
        },
        eval: Arc::new(move |xi, mu| &kg * bracket_unchecked(&sc_f, xi, &c.gradient(mu))),
    })
}

/// Casimir production rate `dC/dt = <F(dH/dmu), [dH/dmu, dC/dmu]>` along the
/// forced Lie-Poisson flow.
pub fn casimir_rate(
    sc: &StructureConstants,
    h: &ScalarField,
    force: &ForceMap,
    c: &ScalarField,
    mu: &DVector<f64>,
) -> Result<f64> {
    ensure_dim(sc.dim, h.dim())?;
    ensure_dim(sc.dim, c.dim())?;
    ensure_dim(sc.dim, force.dim)?;
    ensure_dim(sc.dim, mu.len())?;
    let xi = h.gradient(mu);
    let f = force.eval(&xi, mu);
    Ok(f.dot(&bracket_unchecked(sc, &xi, &c.gradient(mu))))
}

/// Symmetric tensor `K~(mu) = B^T K B` with columns `B_a = [dH/dmu, e_a]`.
///
/// The dissipative part of the forced Lie-Poisson field with the force of
/// [`force_from_casimir`] equals `K~(mu) grad C(mu)`, and `K~ grad H = 0`.
pub fn induced_symmetric_tensor(
    sc: &StructureConstants,
    inner_product: &AlgebraInnerProduct,
    h: &ScalarField,
) -> Result<TensorField> {
    ensure_dim(sc.dim, inner_product.dim())?;
    ensure_dim(sc.dim, h.dim())?;
    let sc = sc.clone();
    let kg = inner_product.kg.clone();
    let h = h.clone();
    let n = sc.dim;
    Ok(TensorField::new(n, SymmetryClass::SymmetricPsd, move |mu| {
        let xi = h.gradient(mu);
        let b = DMatrix::from_fn(n, n, |d, a| (0..n).map(|c| sc.get(c, a, d) * xi[c]).sum::<f64>());
        b.transpose() * &kg * b
    }))
}

/// Rigid body on so(3)*: structure constants, inertia Lagrangian, energy and
/// the quadratic Casimir used as entropy.
#[derive(Clone, Debug)]
pub struct So3Preset {
    pub inertia: [f64; 3],
    pub structure: StructureConstants,
    pub lagrangian: QuadraticLagrangian,
    /// `H(p) = 1/2 sum p_i^2 / I_i`
    pub hamiltonian: ScalarField,
    /// `S(p) = 1/2 |p|^2`
    pub entropy: ScalarField,
}

pub fn so3_preset(inertia: [f64; 3]) -> Result<So3Preset> {
    if inertia.iter().any(|&i| !i.is_finite() || i <= 0.0) {
        return Err(Error::config(format!(
            "moments of inertia must be positive and finite, got {inertia:?}"
        )));
    }
    let m = DMatrix::from_diagonal(&DVector::from_row_slice(&inertia));
    Ok(So3Preset {
        inertia,
        structure: StructureConstants::so3(),
        lagrangian: QuadraticLagrangian::new(m)?,
        hamiltonian: ScalarField::diagonal_quadratic(inertia.to_vec()),
        entropy: ScalarField::diagonal_quadratic(vec![1.0; 3]),
    })
}

impl So3Preset {
    /// Relaxed rigid body: Lie-Poisson tensor, Euclidean metric, `H`, `S`.
    pub fn metriplectic_system(&self) -> MetriplecticSystem {
        self.system_with_entropy(self.entropy.clone())
    }

    /// Same Poisson and metric data with a different entropy function.
    pub fn system_with_entropy(&self, entropy: ScalarField) -> MetriplecticSystem {
        MetriplecticSystem::from_metric(
            lie_poisson_tensor(&self.structure),
            MetricField::euclidean(3),
            self.hamiltonian.clone(),
            entropy,
        )
        .expect("so(3) rigid body data are dimensionally consistent")
    }
}

/// `C(p) = 1/4 |p|^4`, a non-quadratic Casimir of so(3)*.
pub fn quartic_casimir(dim: usize) -> ScalarField {
    ScalarField::with_gradient(
        dim,
        |p: &StateVector| 0.25 * p.norm_squared().powi(2),
        |p: &StateVector| p * p.norm_squared(),
    )
}
