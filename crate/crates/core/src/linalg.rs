//! Small dense helpers shared by the geometry kernel and the solvers.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// `X 1_m`.
pub fn row_sums(x: &DMatrix<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(x.nrows());
    for col in x.column_iter() {
        out += col;
    }
    out
}

/// `Xᵀ 1_n`.
pub fn col_sums(x: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(x.ncols(), x.column_iter().map(|c| c.sum()))
}

/// `diag(r) M diag(c)`.
pub fn scale_rows_cols(m: &DMatrix<f64>, r: &DVector<f64>, c: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| r[i] * m[(i, j)] * c[j])
}

/// `(a 1_mᵀ + 1_n bᵀ) ⊙ X`.
pub fn normal_component(a: &DVector<f64>, b: &DVector<f64>, x: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| (a[i] + b[j]) * x[(i, j)])
}

pub fn max_abs(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

/// Frobenius inner product.
pub fn frob(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

pub fn check_shape(
    context: &'static str,
    m: &DMatrix<f64>,
    expected: (usize, usize),
) -> Result<()> {
    if m.shape() != expected {
        return Err(Error::Shape {
            context,
            expected,
            found: m.shape(),
        });
    }
    Ok(())
}

/// Truncated spectral pseudo-inverse of a symmetric matrix.
///
/// Eigenvalues with magnitude below `rcond * max|λ|` are treated as zero.
#[derive(Debug, Clone)]
pub struct SymmetricPinv {
    vectors: DMatrix<f64>,
    inv_values: DVector<f64>,
    pub rank: usize,
    /// Ratio of the largest to the smallest retained eigenvalue magnitude.
    pub condition: f64,
    pub smallest_retained: f64,
}

impl SymmetricPinv {
    pub fn new(a: &DMatrix<f64>, rcond: f64) -> Self {
        let sym = (a + a.transpose()) * 0.5;
        let eig = sym.symmetric_eigen();
        let max = max_abs(eig.eigenvalues.iter().copied());
        let cutoff = rcond * max;
        let mut rank = 0;
        let mut smallest = f64::INFINITY;
        let inv_values = eig.eigenvalues.map(|l| {
            if l.abs() > cutoff && l.abs() > 0.0 {
                rank += 1;
                smallest = smallest.min(l.abs());
                1.0 / l
            } else {
                0.0
            }
        });
        let condition = if rank == 0 { f64::INFINITY } else { max / smallest };
        SymmetricPinv {
            vectors: eig.eigenvectors,
            inv_values,
            rank,
            condition,
            smallest_retained: if rank == 0 { 0.0 } else { smallest },
        }
    }

    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut coeffs = self.vectors.tr_mul(v);
        coeffs.component_mul_assign(&self.inv_values);
        &self.vectors * coeffs
    }

    /// Dense pseudo-inverse matrix.
    pub fn matrix(&self) -> DMatrix<f64> {
        let scaled = DMatrix::from_fn(self.vectors.nrows(), self.vectors.ncols(), |i, j| {
            self.vectors[(i, j)] * self.inv_values[j]
        });
        scaled * self.vectors.transpose()
    }
}

/// Solver for `A x = b` where `A` is symmetric positive semidefinite with
/// null space spanned by `1`, returning the minimum-norm solution `A⁺ b`.
///
/// Factorizes `A + (τ/n) 1 1ᵀ` with `τ = tr(A)/n` by Cholesky, which is
/// positive definite and agrees with `A` on the complement of `1`. Falls
/// back to [`SymmetricPinv`] when the factorization fails or its pivots
/// span more than `1/rcond`.
#[derive(Debug, Clone)]
pub enum NullOneSolver {
    Cholesky { factor: Cholesky<f64, Dyn>, shift: f64 },
    Spectral(SymmetricPinv),
}

impl NullOneSolver {
    pub fn new(a: &DMatrix<f64>, rcond: f64) -> Self {
        let n = a.nrows();
        let shift = a.trace() / n as f64;
        if shift > 0.0 && shift.is_finite() {
            let mut shifted = (a + a.transpose()) * 0.5;
            shifted.add_scalar_mut(shift / n as f64);
            if let Some(factor) = Cholesky::new(shifted) {
                let pivots = factor.l_dirty().diagonal().map(|d| d * d);
                if pivots.min() > rcond * pivots.max() {
                    return NullOneSolver::Cholesky { factor, shift };
                }
            }
        }
        NullOneSolver::Spectral(SymmetricPinv::new(a, rcond))
    }

    /// Numerical rank; `n − 1` on the Cholesky path.
    pub fn rank(&self) -> usize {
        match self {
            NullOneSolver::Cholesky { factor, .. } => factor.l_dirty().nrows() - 1,
            NullOneSolver::Spectral(p) => p.rank,
        }
    }

    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        match self {
            NullOneSolver::Cholesky { factor, .. } => {
                let mut x = factor.solve(&v.add_scalar(-v.mean()));
                x.add_scalar_mut(-x.mean());
                x
            }
            NullOneSolver::Spectral(p) => p.apply(v),
        }
    }

    /// Dense `A⁺`.
    pub fn matrix(&self) -> DMatrix<f64> {
        match self {
            NullOneSolver::Cholesky { factor, shift } => {
                let n = factor.l_dirty().nrows();
                let mut inv = factor.inverse();
                inv.add_scalar_mut(-1.0 / (shift * n as f64));
                inv
            }
            NullOneSolver::Spectral(p) => p.matrix(),
        }
    }
}
