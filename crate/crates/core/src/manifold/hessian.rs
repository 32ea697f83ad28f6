//! Riemannian Hessian on the coupling manifold.
//!
//! The Hessian is `Π_X(γ̇ − ½ (γ ⊙ ξ) ⊘ X)`, where `γ = Π_X(Grad f ⊙ X)` is the
//! Riemannian gradient written as an ambient field and `γ̇` its directional
//! derivative along `ξ`. The derivative is propagated through every
//! intermediate of the projection:
//!
//! ```text
//! μ = (P − X Q⁻¹ Xᵀ)⁺            μ̇ = μ (X Q⁻¹ ξᵀ + ξ Q⁻¹ Xᵀ) μ
//! η = Grad f ⊙ X                  η̇ = Hess f[ξ] ⊙ X + Grad f ⊙ ξ
//! α = μ (η 1 − X Q⁻¹ ηᵀ 1)         α̇ = μ̇ (η 1 − X Q⁻¹ ηᵀ 1) + μ (η̇ 1 − ξ Q⁻¹ ηᵀ 1 − X Q⁻¹ η̇ᵀ 1)
//! β = Q⁻¹ (ηᵀ 1 − Xᵀ α)            β̇ = Q⁻¹ (η̇ᵀ 1 − ξᵀ α − Xᵀ α̇)
//! γ = η − (α 1ᵀ + 1 βᵀ) ⊙ X        γ̇ = η̇ − (α̇ 1ᵀ + 1 β̇ᵀ) ⊙ X − (α 1ᵀ + 1 βᵀ) ⊙ ξ
//! ```
//!
//! The null space of `P − X Q⁻¹ Xᵀ` is spanned by `1_n` at every point and
//! `ξ` keeps it fixed, so differentiating the pseudo-inverse like an inverse
//! is exact.

use nalgebra::{DMatrix, DVector};

use super::{CouplingPoint, NormalSystem, TangentVector};
use crate::error::{Error, Result};
use crate::linalg::{self, normal_component};

/// Gradient-side intermediates at a fixed point, reusable across directions.
#[derive(Debug, Clone)]
pub struct HessianWorkspace {
    point: CouplingPoint,
    system: NormalSystem,
    egrad: DMatrix<f64>,
    pub eta: DMatrix<f64>,
    /// `η 1 − X Q⁻¹ ηᵀ 1`, the right-hand side behind α.
    rhs: DVector<f64>,
    pub alpha: DVector<f64>,
    pub beta: DVector<f64>,
    /// Riemannian gradient before division by the metric scale.
    pub gamma: DMatrix<f64>,
}

/// Directional derivatives along one `ξ` and the resulting Hessian vector.
#[derive(Debug, Clone)]
pub struct HessianDirection {
    pub eta_dot: DMatrix<f64>,
    pub alpha_dot: DVector<f64>,
    pub beta_dot: DVector<f64>,
    pub gamma_dot: DMatrix<f64>,
    pub hess: TangentVector,
}

impl HessianWorkspace {
    pub fn new(x: &CouplingPoint, egrad: &DMatrix<f64>) -> Result<Self> {
        linalg::check_shape("Euclidean gradient", egrad, x.shape())?;
        let plan = x.matrix();
        let system = NormalSystem::new(x)?;
        let eta = egrad.component_mul(plan);
        let cols = linalg::col_sums(&eta);
        let rhs = linalg::row_sums(&eta) - system.xq(plan, &cols);
        let alpha = system.solver.apply(&rhs);
        let beta = (cols - plan.tr_mul(&alpha)).component_mul(&system.q_inv);
        let gamma = &eta - normal_component(&alpha, &beta, plan);
        Ok(HessianWorkspace {
            point: x.clone(),
            system,
            egrad: egrad.clone(),
            eta,
            rhs,
            alpha,
            beta,
            gamma,
        })
    }

    pub fn point(&self) -> &CouplingPoint {
        &self.point
    }

    /// The Riemannian gradient `γ / metric_scale`.
    pub fn gradient(&self) -> TangentVector {
        let s = self.point.space().tolerances().metric_scale;
        self.point.attach(&self.gamma / s)
    }

    /// Dense `μ = (P − X Q⁻¹ Xᵀ)⁺`.
    pub fn mu(&self) -> DMatrix<f64> {
        self.system.solver.matrix()
    }

    /// `(X Q⁻¹ ξᵀ + ξ Q⁻¹ Xᵀ) v`.
    fn mixed(&self, xi: &DMatrix<f64>, v: &DVector<f64>) -> DVector<f64> {
        let plan = self.point.matrix();
        self.system.xq(plan, &xi.tr_mul(v)) + self.system.xq(xi, &plan.tr_mul(v))
    }

    /// Dense `μ̇ = μ (X Q⁻¹ ξᵀ + ξ Q⁻¹ Xᵀ) μ`.
    pub fn mu_dot(&self, xi: &TangentVector) -> Result<DMatrix<f64>> {
        if !xi.is_based_at(&self.point) {
            return Err(Error::BaseMismatch);
        }
        let plan = self.point.matrix();
        let xq = DMatrix::from_fn(plan.nrows(), plan.ncols(), |i, j| plan[(i, j)] * self.system.q_inv[j]);
        let inner = &xq * xi.matrix().transpose();
        let sym = &inner + inner.transpose();
        let mu = self.mu();
        Ok(&mu * sym * &mu)
    }

    pub fn apply(&self, ehess_xi: &DMatrix<f64>, xi: &TangentVector) -> Result<HessianDirection> {
        if !xi.is_based_at(&self.point) {
            return Err(Error::BaseMismatch);
        }
        linalg::check_shape("Euclidean Hessian", ehess_xi, self.point.shape())?;
        let plan = self.point.matrix();
        let xi_m = xi.matrix();
        let q_inv = &self.system.q_inv;

        // μ̇ (η1 − XQ⁻¹ηᵀ1) = μ B μ rhs = μ B α
        let mu_dot_rhs = self.system.solver.apply(&self.mixed(xi_m, &self.alpha));
        let eta_dot = ehess_xi.component_mul(plan) + self.egrad.component_mul(xi_m);
        let eta_cols = linalg::col_sums(&self.eta);
        let eta_dot_cols = linalg::col_sums(&eta_dot);
        let inner = linalg::row_sums(&eta_dot)
            - self.system.xq(xi_m, &eta_cols)
            - self.system.xq(plan, &eta_dot_cols);
        let alpha_dot = mu_dot_rhs + self.system.solver.apply(&inner);
        let beta_dot = (eta_dot_cols - xi_m.tr_mul(&self.alpha) - plan.tr_mul(&alpha_dot)).component_mul(q_inv);
        let gamma_dot = &eta_dot
            - normal_component(&alpha_dot, &beta_dot, plan)
            - normal_component(&self.alpha, &self.beta, xi_m);

        let connection = DMatrix::from_fn(plan.nrows(), plan.ncols(), |i, j| {
            gamma_dot[(i, j)] - 0.5 * self.gamma[(i, j)] * xi_m[(i, j)] / plan[(i, j)]
        });
        let coeffs = self.system.coefficients(plan, &connection);
        let mut hess = connection - normal_component(&coeffs.alpha, &coeffs.beta, plan);
        let s = self.point.space().tolerances().metric_scale;
        if s != 1.0 {
            hess /= s;
        }
        Ok(HessianDirection {
            eta_dot,
            alpha_dot,
            beta_dot,
            gamma_dot,
            hess: self.point.attach(hess),
        })
    }

    /// Right-hand side of the α system, `η 1 − X Q⁻¹ ηᵀ 1`.
    pub fn alpha_rhs(&self) -> &DVector<f64> {
        &self.rhs
    }
}
