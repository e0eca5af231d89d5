//! Discrete gradients: two-point approximations `g(x, x')` of `grad H` with
//! `g(x, x')^T (x' - x) = H(x') - H(x)` and `g(x, x) = grad H(x)`.

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, Error, Result};
use crate::fields::{ScalarField, StateVector};

/// Default relative threshold below which `x'` is treated as equal to `x`.
pub const DEFAULT_DEGENERACY_EPS: f64 = 1e-14;

/// Default number of Gauss-Legendre nodes for the mean-value gradient.
pub const DEFAULT_QUADRATURE_POINTS: usize = 10;

/// Multiple of machine epsilon below which an energy difference is treated as noise.
const ROUNDOFF_FACTOR: f64 = 16.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DiscreteGradientKind {
    /// Average of `grad H` along the segment, by Gauss-Legendre quadrature.
    MeanValue { quadrature_points: usize },
    /// Gonzalez midpoint gradient.
    Midpoint,
    /// Itoh-Abe coordinate increment gradient (depends on coordinate order).
    CoordinateIncrement,
}

impl fmt::Display for DiscreteGradientKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DiscreteGradientKind::MeanValue { quadrature_points } if *quadrature_points == DEFAULT_QUADRATURE_POINTS => {
                write!(f, "mean-value")
            }
            DiscreteGradientKind::MeanValue { quadrature_points } => write!(f, "mean-value-{quadrature_points}"),
            DiscreteGradientKind::Midpoint => write!(f, "midpoint"),
            DiscreteGradientKind::CoordinateIncrement => write!(f, "coordinate-increment"),
        }
    }
}

impl FromStr for DiscreteGradientKind {
    type Err = Error;

    /// Accepts `midpoint`/`gonzalez`, `coordinate-increment`/`itoh-abe`,
    /// `mean-value`/`avf` and `mean-value-<points>`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        match s.as_str() {
            "midpoint" | "gonzalez" => Ok(DiscreteGradientKind::Midpoint),
            "coordinate-increment" | "itoh-abe" => Ok(DiscreteGradientKind::CoordinateIncrement),
            "mean-value" | "avf" => Ok(DiscreteGradientKind::MeanValue {
                quadrature_points: DEFAULT_QUADRATURE_POINTS,
            }),
            other => {
                if let Some(points) = other.strip_prefix("mean-value-").or_else(|| other.strip_prefix("avf-")) {
                    let quadrature_points = points
                        .parse()
                        .map_err(|_| Error::config(format!("invalid quadrature point count in '{other}'")))?;
                    Ok(DiscreteGradientKind::MeanValue { quadrature_points })
                } else {
                    Err(Error::config(format!("unknown discrete gradient scheme '{other}'")))
                }
            }
        }
    }
}

/// A discrete gradient rule plus its near-coincidence threshold.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteGradientScheme {
    kind: DiscreteGradientKind,
    degeneracy_eps: f64,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl DiscreteGradientScheme {
    pub fn new(kind: DiscreteGradientKind, degeneracy_eps: f64) -> Result<Self> {
        if degeneracy_eps.is_nan() || degeneracy_eps <= 0.0 {
            return Err(Error::config("degeneracy threshold must be positive"));
        }
        let (nodes, weights) = match kind {
            DiscreteGradientKind::MeanValue { quadrature_points } => {
                if quadrature_points < 2 {
                    return Err(Error::config("mean-value gradient needs at least 2 quadrature points"));
                }
                gauss_legendre_unit(quadrature_points)
            }
            _ => (Vec::new(), Vec::new()),
        };
        Ok(DiscreteGradientScheme {
            kind,
            degeneracy_eps,
            nodes,
            weights,
        })
    }

    pub fn midpoint() -> Self {
        Self::new(DiscreteGradientKind::Midpoint, DEFAULT_DEGENERACY_EPS).expect("valid defaults")
    }

    pub fn coordinate_increment() -> Self {
        Self::new(DiscreteGradientKind::CoordinateIncrement, DEFAULT_DEGENERACY_EPS).expect("valid defaults")
    }

    pub fn mean_value(quadrature_points: usize) -> Result<Self> {
        Self::new(DiscreteGradientKind::MeanValue { quadrature_points }, DEFAULT_DEGENERACY_EPS)
    }

    pub fn kind(&self) -> DiscreteGradientKind {
        self.kind
    }

    pub fn degeneracy_eps(&self) -> f64 {
        self.degeneracy_eps
    }

    /// Highest polynomial degree of `H` for which the directional identity is exact.
    pub fn exactness_degree(&self) -> Option<usize> {
        match self.kind {
            // an m-point rule integrates degree 2m - 1, and grad H loses one degree
            DiscreteGradientKind::MeanValue { quadrature_points } => Some(2 * quadrature_points),
            _ => None,
        }
    }

    fn threshold(&self, x: &StateVector, x_new: &StateVector) -> f64 {
        self.degeneracy_eps * (1.0 + x.norm() + x_new.norm())
    }

    /// `g(x, x')` for `H`.
    pub fn discrete_gradient(&self, h: &ScalarField, x: &StateVector, x_new: &StateVector) -> Result<DVector<f64>> {
        ensure_dim(x.len(), x_new.len())?;
        h.check_dim(x)?;
        Ok(self.eval(h, x, x_new))
    }

    pub(crate) fn eval(&self, h: &ScalarField, x: &StateVector, x_new: &StateVector) -> DVector<f64> {
        let eps = self.threshold(x, x_new);
        match self.kind {
            DiscreteGradientKind::Midpoint => {
                let d = x_new - x;
                let z = (x + x_new) * 0.5;
                let gz = h.gradient(&z);
                let d2 = d.norm_squared();
                if d2.sqrt() < eps {
                    return gz;
                }
                let (hx, hy, lin) = (h.value(x), h.value(x_new), gz.dot(&d));
                let defect = hy - hx - lin;
                // a defect at round-off level carries no information; dividing it by |d|^2 only amplifies noise
                if defect.abs() <= roundoff_bound(hx, hy, lin) {
                    return gz;
                }
                gz + d * (defect / d2)
            }
            DiscreteGradientKind::MeanValue { .. } => {
                let d = x_new - x;
                if d.norm() < eps {
                    return h.gradient(&((x + x_new) * 0.5));
                }
                let mut acc = DVector::zeros(x.len());
                for (&s, &w) in self.nodes.iter().zip(&self.weights) {
                    acc += h.gradient(&(x + &d * s)) * w;
                }
                acc
            }
            DiscreteGradientKind::CoordinateIncrement => {
                let n = x.len();
                let mut g = DVector::zeros(n);
                // probe runs through (x'_1, ..., x'_{i-1}, x_i, ..., x_n)
                let mut probe = x.clone();
                let mut h_prev = h.value(&probe);
                for i in 0..n {
                    let di = x_new[i] - x[i];
                    if di.abs() < eps {
                        g[i] = h.gradient(&probe)[i];
                        probe[i] = x_new[i];
                        h_prev = h.value(&probe);
                    } else {
                        let start = probe[i];
                        probe[i] = x_new[i];
                        let h_next = h.value(&probe);
                        let dh = h_next - h_prev;
                        g[i] = if dh.abs() <= roundoff_bound(h_prev, h_next, 0.0) {
                            probe[i] = 0.5 * (start + x_new[i]);
                            let partial = h.gradient(&probe)[i];
                            probe[i] = x_new[i];
                            partial
                        } else {
                            dh / di
                        };
                        h_prev = h_next;
                    }
                }
                g
            }
        }
    }

    /// Maximum directional and consistency residuals over the sample pairs.
    pub fn verify_axioms(&self, h: &ScalarField, pairs: &[(StateVector, StateVector)]) -> Result<AxiomReport> {
        let mut report = AxiomReport::default();
        for (x, x_new) in pairs {
            let g = self.discrete_gradient(h, x, x_new)?;
            let hx = h.value(x);
            let hy = h.value(x_new);
            let directional = (g.dot(&(x_new - x)) - (hy - hx)).abs() / (1.0 + hx.abs() + hy.abs());
            report.max_directional = report.max_directional.max(directional);

            let gx = h.gradient(x);
            let consistency = (self.eval(h, x, x) - &gx).norm() / (1.0 + gx.norm());
            report.max_consistency = report.max_consistency.max(consistency);
        }
        Ok(report)
    }
}

/// Size of the rounding error in `b - a - c` for values of these magnitudes.
fn roundoff_bound(a: f64, b: f64, c: f64) -> f64 {
    ROUNDOFF_FACTOR * f64::EPSILON * (a.abs() + b.abs() + c.abs())
}

/// Residuals of the two discrete-gradient axioms.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct AxiomReport {
    /// `max |g^T (x' - x) - (H(x') - H(x))| / (1 + |H(x')| + |H(x)|)`
    pub max_directional: f64,
    /// `max |g(x, x) - grad H(x)| / (1 + |grad H(x)|)`
    pub max_consistency: f64,
}

/// Gauss-Legendre nodes and weights mapped to `[0, 1]`.
pub fn gauss_legendre_unit(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for i in 0..n {
        // Newton iteration on P_n from the Tricomi initial guess
        let mut t = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, t);
            dp = d;
            let step = p / d;
            t -= step;
            if step.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, t);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - t * t) * dp * dp);
        nodes.push(0.5 * (1.0 - t));
        weights.push(0.5 * w);
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, t: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = t;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * t * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (t * p1 - p0) / (t * t - 1.0);
    (p1, d)
}
