use nalgebra::{DMatrix, DVector};

use super::CouplingSpace;
use crate::error::{Error, Result};
use crate::linalg;

/// Output of the Sinkhorn-Knopp projection `P(M) = D₁ M D₂`.
#[derive(Debug, Clone)]
pub struct SinkhornProjection {
    /// `diag(row_scaling) · M · diag(col_scaling)`.
    pub plan: DMatrix<f64>,
    /// Diagonal of `D₁` (length n).
    pub row_scaling: DVector<f64>,
    /// Diagonal of `D₂` (length m).
    pub col_scaling: DVector<f64>,
    pub iterations: usize,
    /// Largest Euclidean marginal residual of `plan`.
    pub residual: f64,
    pub converged: bool,
}

fn all_finite_positive(v: &DVector<f64>) -> bool {
    v.iter().all(|x| *x > 0.0 && x.is_finite())
}

pub(super) fn project(space: &CouplingSpace, m: &DMatrix<f64>, eps: f64, max_iter: usize) -> Result<SinkhornProjection> {
    linalg::check_shape("Sinkhorn input", m, space.shape())?;
    if !(eps > 0.0) {
        return Err(Error::param("eps", "must be positive"));
    }
    if max_iter == 0 {
        return Err(Error::param("max_iter", "must be at least 1"));
    }
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            let v = m[(i, j)];
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::NonPositiveEntry { row: i, col: j, value: v, floor: 0.0 });
            }
        }
    }
    let (p, q) = (space.p(), space.q());

    // d₂ = q ⊘ Mᵀ1, d₁ = p ⊘ M d₂
    let mut col = q.component_div(&linalg::col_sums(m));
    let col_init0 = col[0];
    let mut row = p.component_div(&(m * &col));
    if !all_finite_positive(&col) || !all_finite_positive(&row) {
        return Err(Error::SinkhornUnderflow { iteration: 0 });
    }

    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        // rows are exact after the last update; the column residual is the only live one
        let mt_row = m.tr_mul(&row);
        let col_res = (mt_row.component_mul(&col) - q).norm();
        if col_res < eps {
            converged = true;
            break;
        }
        col = q.component_div(&mt_row);
        let m_col = m * &col;
        row = p.component_div(&m_col);
        if !all_finite_positive(&col) || !all_finite_positive(&row) {
            return Err(Error::SinkhornUnderflow { iteration: iterations });
        }
    }

    // fix the one-parameter freedom D₁ → c D₁, D₂ → D₂ / c
    let c = col[0] / col_init0;
    col /= c;
    row *= c;

    let plan = linalg::scale_rows_cols(m, &row, &col);
    let residual = (linalg::row_sums(&plan) - p)
        .norm()
        .max((linalg::col_sums(&plan) - q).norm());
    Ok(SinkhornProjection {
        plan,
        row_scaling: row,
        col_scaling: col,
        iterations,
        residual,
        converged,
    })
}
