//! Geometry of the coupling matrix manifold.
//!
//! The manifold is the set of strictly positive `n × m` matrices whose row
//! sums equal `p` and column sums equal `q`. It is an open subset of an affine
//! subspace, so tangent vectors are the matrices with zero row and column
//! sums. The Riemannian metric is the Fisher information metric
//! `g(ξ, η) = Σ ξ_ij η_ij / X_ij`.

mod hessian;
mod sinkhorn;

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Axis, Error, Result};
use crate::linalg::{self, NullOneSolver};

pub use hessian::{HessianDirection, HessianWorkspace};
pub use sinkhorn::SinkhornProjection;

/// Numerical knobs of the geometry kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Tolerances {
    /// Relative slack allowed between `sum(p)` and `sum(q)`.
    pub coupling_tol: f64,
    /// Marginal residual allowed for a point, relative to `max(1, max marginal)`.
    pub feasibility_tol: f64,
    /// Smallest admissible plan entry.
    pub positivity_floor: f64,
    /// Row/column-sum slack for tangent vectors, relative to `max(1, max |Y|)`.
    pub tangent_tol: f64,
    pub sinkhorn_eps: f64,
    pub sinkhorn_max_iter: usize,
    /// Relative eigenvalue cutoff of the pseudo-inverse.
    pub pinv_rcond: f64,
    /// Bound on `|ξ_ij / X_ij|` inside the retraction's exponential.
    pub exp_clamp: f64,
    /// Constant multiplying the Fisher metric (1 = unnormalized).
    pub metric_scale: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            coupling_tol: 1e-10,
            feasibility_tol: 1e-8,
            positivity_floor: f64::MIN_POSITIVE.sqrt(),
            tangent_tol: 1e-8,
            sinkhorn_eps: 1e-10,
            sinkhorn_max_iter: 100_000,
            pinv_rcond: 1e-12,
            exp_clamp: 50.0,
            metric_scale: 1.0,
        }
    }
}

/// A pair of coupled marginals `(p, q)` defining the manifold.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingSpace {
    p: DVector<f64>,
    q: DVector<f64>,
    tol: Tolerances,
}

impl CouplingSpace {
    pub fn new(p: DVector<f64>, q: DVector<f64>) -> Result<Arc<Self>> {
        Self::with_tolerances(p, q, Tolerances::default())
    }

    pub fn with_tolerances(p: DVector<f64>, q: DVector<f64>, tol: Tolerances) -> Result<Arc<Self>> {
        if p.is_empty() || q.is_empty() {
            return Err(Error::InvalidMarginals("marginals must be nonempty".into()));
        }
        for (name, v) in [("p", &p), ("q", &q)] {
            if let Some((i, x)) = v.iter().enumerate().find(|(_, x)| !(**x > 0.0 && x.is_finite())) {
                return Err(Error::InvalidMarginals(format!("{name}[{i}] = {x} is not positive")));
            }
        }
        let (sp, sq) = (p.sum(), q.sum());
        if (sp - sq).abs() > tol.coupling_tol * sp.max(1.0) {
            return Err(Error::InvalidMarginals(format!(
                "marginals are not coupled: sum(p) = {sp}, sum(q) = {sq}"
            )));
        }
        Ok(Arc::new(CouplingSpace { p, q, tol }))
    }

    /// Uniform marginals `(1/n) 1_n`, `(1/m) 1_m`.
    pub fn uniform(n: usize, m: usize) -> Result<Arc<Self>> {
        if n == 0 || m == 0 {
            return Err(Error::InvalidMarginals("marginals must be nonempty".into()));
        }
        Self::new(
            DVector::from_element(n, 1.0 / n as f64),
            DVector::from_element(m, 1.0 / m as f64),
        )
    }

    pub fn p(&self) -> &DVector<f64> {
        &self.p
    }

    pub fn q(&self) -> &DVector<f64> {
        &self.q
    }

    pub fn tolerances(&self) -> &Tolerances {
        &self.tol
    }

    pub fn n(&self) -> usize {
        self.p.len()
    }

    pub fn m(&self) -> usize {
        self.q.len()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n(), self.m())
    }

    pub fn mass(&self) -> f64 {
        self.p.sum()
    }

    /// `(n − 1)(m − 1)`.
    pub fn dimension(&self) -> usize {
        (self.n() - 1) * (self.m() - 1)
    }

    /// The rank-one coupling `p qᵀ / sum(p)`.
    pub fn independence_point(self: &Arc<Self>) -> CouplingPoint {
        let mass = self.mass();
        let x = DMatrix::from_fn(self.n(), self.m(), |i, j| self.p[i] * self.q[j] / mass);
        CouplingPoint {
            plan: Arc::new(x),
            space: Arc::clone(self),
        }
    }

    /// Row/column marginal residuals `(‖X1 − p‖_∞, ‖Xᵀ1 − q‖_∞)`.
    pub fn marginal_residuals(&self, x: &DMatrix<f64>) -> (f64, f64) {
        let rows = linalg::row_sums(x) - &self.p;
        let cols = linalg::col_sums(x) - &self.q;
        (rows.amax(), cols.amax())
    }

    fn feasibility_bound(&self, axis: Axis) -> f64 {
        let scale = match axis {
            Axis::Row => self.p.max(),
            Axis::Column => self.q.max(),
        };
        self.tol.feasibility_tol * scale.max(1.0)
    }

    /// Validates `x` as a point of this manifold.
    pub fn validate_point(self: &Arc<Self>, x: DMatrix<f64>) -> Result<CouplingPoint> {
        linalg::check_shape("coupling point", &x, self.shape())?;
        let floor = self.tol.positivity_floor;
        for i in 0..x.nrows() {
            for j in 0..x.ncols() {
                let v = x[(i, j)];
                if !(v >= floor) || !v.is_finite() {
                    return Err(Error::NonPositiveEntry { row: i, col: j, value: v, floor });
                }
            }
        }
        let (r, c) = self.marginal_residuals(&x);
        for (axis, residual) in [(Axis::Row, r), (Axis::Column, c)] {
            let tol = self.feasibility_bound(axis);
            if residual > tol {
                return Err(Error::MarginalResidual { axis, residual, tol });
            }
        }
        Ok(CouplingPoint {
            plan: Arc::new(x),
            space: Arc::clone(self),
        })
    }

    /// Sinkhorn-Knopp projection `D₁ M D₂` of a positive matrix onto the manifold.
    pub fn sinkhorn_project(&self, m: &DMatrix<f64>, eps: f64, max_iter: usize) -> Result<SinkhornProjection> {
        sinkhorn::project(self, m, eps, max_iter)
    }
}

/// A strictly positive coupling matrix satisfying both marginals.
#[derive(Debug, Clone)]
pub struct CouplingPoint {
    plan: Arc<DMatrix<f64>>,
    space: Arc<CouplingSpace>,
}

/// An `n × m` matrix with zero row and column sums, attached to a base point.
#[derive(Debug, Clone)]
pub struct TangentVector {
    dir: DMatrix<f64>,
    base: Arc<DMatrix<f64>>,
}

/// Multipliers of the normal component `(α 1ᵀ + 1 βᵀ) ⊙ X`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionCoefficients {
    pub alpha: DVector<f64>,
    pub beta: DVector<f64>,
}

impl TangentVector {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.dir
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.dir
    }

    pub fn is_based_at(&self, x: &CouplingPoint) -> bool {
        Arc::ptr_eq(&self.base, &x.plan) || *self.base == *x.plan
    }

    pub fn scale(&self, s: f64) -> TangentVector {
        TangentVector {
            dir: &self.dir * s,
            base: Arc::clone(&self.base),
        }
    }

    /// `self + s · other`.
    pub fn axpy(&self, s: f64, other: &TangentVector) -> Result<TangentVector> {
        if !(Arc::ptr_eq(&self.base, &other.base) || self.base == other.base) {
            return Err(Error::BaseMismatch);
        }
        Ok(TangentVector {
            dir: &self.dir + &other.dir * s,
            base: Arc::clone(&self.base),
        })
    }
}

impl CouplingPoint {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.plan
    }

    pub fn space(&self) -> &Arc<CouplingSpace> {
        &self.space
    }

    pub fn shape(&self) -> (usize, usize) {
        self.plan.shape()
    }

    pub fn zero_tangent(&self) -> TangentVector {
        let (n, m) = self.shape();
        TangentVector {
            dir: DMatrix::zeros(n, m),
            base: Arc::clone(&self.plan),
        }
    }

    /// Wraps `y` as a tangent vector at this point after checking its row and column sums.
    pub fn tangent(&self, y: DMatrix<f64>) -> Result<TangentVector> {
        linalg::check_shape("tangent vector", &y, self.shape())?;
        let tol = self.space.tol.tangent_tol * linalg::max_abs(y.iter().copied()).max(1.0);
        let r = linalg::row_sums(&y).amax();
        if r > tol {
            return Err(Error::NotTangent { axis: Axis::Row, residual: r, tol });
        }
        let c = linalg::col_sums(&y).amax();
        if c > tol {
            return Err(Error::NotTangent { axis: Axis::Column, residual: c, tol });
        }
        Ok(self.attach(y))
    }

    pub(crate) fn attach(&self, y: DMatrix<f64>) -> TangentVector {
        TangentVector {
            dir: y,
            base: Arc::clone(&self.plan),
        }
    }

    fn check_base(&self, v: &TangentVector) -> Result<()> {
        if v.is_based_at(self) {
            Ok(())
        } else {
            Err(Error::BaseMismatch)
        }
    }

    /// Fisher metric `Σ ξ_ij η_ij / X_ij`, times the configured metric scale.
    pub fn metric(&self, xi: &TangentVector, eta: &TangentVector) -> Result<f64> {
        self.check_base(xi)?;
        self.check_base(eta)?;
        Ok(self.fisher(&xi.dir, &eta.dir))
    }

    pub(crate) fn fisher(&self, a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        let s: f64 = a
            .iter()
            .zip(b.iter())
            .zip(self.plan.iter())
            .map(|((x, y), w)| x * y / w)
            .sum();
        s * self.space.tol.metric_scale
    }

    pub fn norm(&self, xi: &TangentVector) -> Result<f64> {
        Ok(self.metric(xi, xi)?.max(0.0).sqrt())
    }

    /// Orthogonal projection of an arbitrary `n × m` matrix onto the tangent space.
    pub fn project(&self, y: &DMatrix<f64>) -> Result<(TangentVector, ProjectionCoefficients)> {
        linalg::check_shape("projection input", y, self.shape())?;
        let system = NormalSystem::new(self)?;
        let coeffs = system.coefficients(&self.plan, y);
        let dir = y - linalg::normal_component(&coeffs.alpha, &coeffs.beta, &self.plan);
        Ok((self.attach(dir), coeffs))
    }

    /// `Π_X(egrad ⊙ X)`, divided by the metric scale.
    pub fn riemannian_gradient(&self, egrad: &DMatrix<f64>) -> Result<TangentVector> {
        linalg::check_shape("Euclidean gradient", egrad, self.shape())?;
        let (mut g, _) = self.project(&egrad.component_mul(&self.plan))?;
        let s = self.space.tol.metric_scale;
        if s != 1.0 {
            g.dir /= s;
        }
        Ok(g)
    }

    /// Retraction `P(X ⊙ exp(ξ ⊘ X))`, with the exponent clamped to `±exp_clamp`.
    pub fn retract(&self, xi: &TangentVector) -> Result<CouplingPoint> {
        self.check_base(xi)?;
        let tol = &self.space.tol;
        let clamp = tol.exp_clamp;
        let m = self.plan.zip_map(&xi.dir, |x, v| x * (v / x).clamp(-clamp, clamp).exp());
        let proj = self.space.sinkhorn_project(&m, tol.sinkhorn_eps, tol.sinkhorn_max_iter)?;
        if !proj.converged {
            return Err(Error::SinkhornNotConverged {
                iterations: proj.iterations,
                residual: proj.residual,
            });
        }
        self.space.validate_point(proj.plan)
    }

    /// Riemannian Hessian `hess f(X)[ξ]` from the Euclidean gradient and the
    /// Euclidean Hessian applied to `ξ`.
    pub fn riemannian_hessian(
        &self,
        egrad: &DMatrix<f64>,
        ehess_xi: &DMatrix<f64>,
        xi: &TangentVector,
    ) -> Result<TangentVector> {
        let ws = HessianWorkspace::new(self, egrad)?;
        Ok(ws.apply(ehess_xi, xi)?.hess)
    }
}

/// The linear system behind the projection's multipliers at a fixed point.
///
/// Uses the point's own marginals, which coincide with `(p, q)` on the
/// manifold and make `1_n` an exact null vector of `P − X Q⁻¹ Xᵀ`.
#[derive(Debug, Clone)]
pub(crate) struct NormalSystem {
    pub solver: NullOneSolver,
    pub q_inv: DVector<f64>,
}

impl NormalSystem {
    pub fn new(x: &CouplingPoint) -> Result<Self> {
        let plan = x.matrix();
        let (n, _) = plan.shape();
        let p = linalg::row_sums(plan);
        let q_inv = linalg::col_sums(plan).map(|v| 1.0 / v);
        // X Q⁻¹ Xᵀ
        let xq = DMatrix::from_fn(plan.nrows(), plan.ncols(), |i, j| plan[(i, j)] * q_inv[j]);
        let mut a = -(xq * plan.transpose());
        for i in 0..n {
            a[(i, i)] += p[i];
        }
        let solver = NullOneSolver::new(&a, x.space.tol.pinv_rcond);
        let expected = n - 1;
        if let NullOneSolver::Spectral(pinv) = &solver {
            if pinv.rank < expected {
                return Err(Error::PseudoInverse {
                    rank: pinv.rank,
                    expected,
                    condition: pinv.condition,
                    smallest: pinv.smallest_retained,
                });
            }
        }
        Ok(NormalSystem { solver, q_inv })
    }

    /// `X Q⁻¹ v` for `v` of length `m`.
    pub fn xq(&self, x: &DMatrix<f64>, v: &DVector<f64>) -> DVector<f64> {
        x * v.component_mul(&self.q_inv)
    }

    /// α, β for a given right-hand side pair `(Y1, Yᵀ1)`.
    pub fn solve(&self, x: &DMatrix<f64>, rows: &DVector<f64>, cols: &DVector<f64>) -> ProjectionCoefficients {
        let rhs = rows - self.xq(x, cols);
        let alpha = self.solver.apply(&rhs);
        let beta = (cols - x.tr_mul(&alpha)).component_mul(&self.q_inv);
        ProjectionCoefficients { alpha, beta }
    }

    pub fn coefficients(&self, x: &DMatrix<f64>, y: &DMatrix<f64>) -> ProjectionCoefficients {
        self.solve(x, &linalg::row_sums(y), &linalg::col_sums(y))
    }
}
