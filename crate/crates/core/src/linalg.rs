//! Small dense linear-algebra helpers shared by the bracket builders and audits.

use nalgebra::{DMatrix, DVector};

/// Smallest eigenvalue of the symmetric part of `m`.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Moore-Penrose pseudo-inverse with singular values below `rel_cutoff * sigma_max` dropped.
pub fn pseudo_inverse(m: &DMatrix<f64>, rel_cutoff: f64) -> DMatrix<f64> {
    let svd = m.clone().svd(true, true);
    let sigma_max = svd.singular_values.max();
    if sigma_max == 0.0 {
        return DMatrix::zeros(m.ncols(), m.nrows());
    }
    let cutoff = rel_cutoff * sigma_max;
    let u = svd.u.as_ref().expect("svd computed with u");
    let v_t = svd.v_t.as_ref().expect("svd computed with v_t");
    let mut out = DMatrix::zeros(m.ncols(), m.nrows());
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > cutoff {
            let vk = v_t.row(k).transpose();
            let uk = u.column(k);
            out += (vk * uk.transpose()) / s;
        }
    }
    out
}

/// Number of singular values above `rel_cutoff * sigma_max`.
pub fn numerical_rank(m: &DMatrix<f64>, rel_cutoff: f64) -> usize {
    let sv = m.clone().singular_values();
    let sigma_max = sv.max();
    if sigma_max == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_cutoff * sigma_max).count()
}

/// Largest absolute entry of `m + m^T`.
pub fn skew_defect(m: &DMatrix<f64>) -> f64 {
    (m + m.transpose()).amax()
}

/// Largest absolute entry of `m - m^T`.
pub fn symmetry_defect(m: &DMatrix<f64>) -> f64 {
    (m - m.transpose()).amax()
}

pub fn max_norm(v: &DVector<f64>) -> f64 {
    v.amax()
}

/// `|a - b|_inf / max(|a|_inf, |b|_inf)`, zero when both vanish.
pub fn relative_discrepancy(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let scale = a.amax().max(b.amax());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).amax() / scale
    }
}
