//! Transport objectives with Euclidean gradients and Hessian-vector products.
//!
//! Every objective is defined on positive `n × m` plans. The Riemannian
//! quantities are derived from these by the [`crate::manifold`] kernel.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::manifold::CouplingSpace;

/// A smooth function on the coupling manifold.
pub trait Objective: Send + Sync {
    fn space(&self) -> &Arc<CouplingSpace>;

    /// `f(X)`. `x` must be entrywise positive.
    fn value(&self, x: &DMatrix<f64>) -> f64;

    /// `Grad f(X)`.
    fn egrad(&self, x: &DMatrix<f64>) -> DMatrix<f64>;

    /// `Hess f(X)[ξ]`.
    fn ehess(&self, x: &DMatrix<f64>, xi: &DMatrix<f64>) -> DMatrix<f64>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntropicParams {
    pub lambda: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SquaredParams {
    pub lambda: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TsallisParams {
    pub lambda: f64,
    /// Tsallis exponent, positive and different from 1.
    pub qexp: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrderPreservingParams {
    pub lambda1: f64,
    pub lambda2: f64,
    pub sigma: f64,
    /// Prior favouring matches between similar relative positions.
    pub order_prior: DMatrix<f64>,
    /// Gaussian similarity of relative positions.
    pub similarity: DMatrix<f64>,
    log_similarity: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LaplacianDaParams {
    /// Entropy weight.
    pub lambda: f64,
    /// Weight of the Laplacian regularizer.
    pub laplacian_weight: f64,
    /// Mix between the source (0) and target (1) Laplacian terms.
    pub laplacian_mix: f64,
    pub source_laplacian: DMatrix<f64>,
    pub target_laplacian: DMatrix<f64>,
    /// Source features, one point per row (n × d).
    pub source: DMatrix<f64>,
    /// Target features, one point per row (m × d).
    pub target: DMatrix<f64>,
    source_gram: DMatrix<f64>,
    target_gram: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProblemKind {
    Classic,
    Entropic(EntropicParams),
    Squared(SquaredParams),
    Tsallis(TsallisParams),
    OrderPreserving(OrderPreservingParams),
    LaplacianDa(Box<LaplacianDaParams>),
}

impl ProblemKind {
    pub fn name(&self) -> &'static str {
        match self {
            ProblemKind::Classic => "classic",
            ProblemKind::Entropic(_) => "entropic",
            ProblemKind::Squared(_) => "squared",
            ProblemKind::Tsallis(_) => "tsallis",
            ProblemKind::OrderPreserving(_) => "order_preserving",
            ProblemKind::LaplacianDa(_) => "laplacian_da",
        }
    }
}

/// A transport problem: marginals, cost and regularizer.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemInstance {
    space: Arc<CouplingSpace>,
    cost: DMatrix<f64>,
    kind: ProblemKind,
}

fn positive(name: &'static str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::param(name, format!("must be positive, got {v}")))
    }
}

fn xlogx_sum(x: &DMatrix<f64>) -> f64 {
    x.iter().map(|v| v * v.ln()).sum()
}

/// Squared Euclidean distances between the rows of `a` and `b`.
pub fn squared_distances(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if a.ncols() != b.ncols() {
        return Err(Error::Shape {
            context: "feature dimension",
            expected: (b.nrows(), a.ncols()),
            found: b.shape(),
        });
    }
    Ok(DMatrix::from_fn(a.nrows(), b.nrows(), |i, j| {
        a.row(i).iter().zip(b.row(j).iter()).map(|(x, y)| (x - y) * (x - y)).sum()
    }))
}

impl ProblemInstance {
    fn with_cost(space: Arc<CouplingSpace>, cost: DMatrix<f64>, kind: ProblemKind) -> Result<Self> {
        linalg::check_shape("cost matrix", &cost, space.shape())?;
        if cost.iter().any(|c| !c.is_finite()) {
            return Err(Error::param("cost", "entries must be finite"));
        }
        Ok(ProblemInstance { space, cost, kind })
    }

    /// `f(X) = Tr(Xᵀ C)`.
    pub fn classic(space: Arc<CouplingSpace>, cost: DMatrix<f64>) -> Result<Self> {
        Self::with_cost(space, cost, ProblemKind::Classic)
    }

    /// `f(X) = Tr(Xᵀ C) − λ H(X)` with `H(X) = −Σ X log X`.
    pub fn entropic(space: Arc<CouplingSpace>, cost: DMatrix<f64>, lambda: f64) -> Result<Self> {
        positive("lambda", lambda)?;
        Self::with_cost(space, cost, ProblemKind::Entropic(EntropicParams { lambda }))
    }

    /// `f(X) = Tr(Xᵀ C) + λ Σ X²`.
    pub fn squared(space: Arc<CouplingSpace>, cost: DMatrix<f64>, lambda: f64) -> Result<Self> {
        positive("lambda", lambda)?;
        Self::with_cost(space, cost, ProblemKind::Squared(SquaredParams { lambda }))
    }

    /// `f(X) = Tr(Xᵀ C) − λ/(1 − q) Σ (X^q − X)`.
    pub fn tsallis(space: Arc<CouplingSpace>, cost: DMatrix<f64>, lambda: f64, qexp: f64) -> Result<Self> {
        positive("lambda", lambda)?;
        positive("qexp", qexp)?;
        if qexp == 1.0 {
            return Err(Error::param("qexp", "q = 1 is the entropic limit; use the entropic problem"));
        }
        Self::with_cost(space, cost, ProblemKind::Tsallis(TsallisParams { lambda, qexp }))
    }

    /// Order-preserving problem between two sequences given as `n × d` and `m × d`
    /// matrices (one time step per row), with uniform marginals.
    pub fn order_preserving(
        u: &DMatrix<f64>,
        v: &DMatrix<f64>,
        sigma: f64,
        lambda1: f64,
        lambda2: f64,
    ) -> Result<Self> {
        if u.nrows() == 0 || v.nrows() == 0 {
            return Err(Error::param("sequence", "sequences must be nonempty"));
        }
        positive("sigma", sigma)?;
        positive("lambda1", lambda1)?;
        positive("lambda2", lambda2)?;
        let (n, m) = (u.nrows(), v.nrows());
        let cost = squared_distances(u, v)?;
        let (order_prior, similarity) = order_matrices(n, m, sigma);
        let log_similarity = similarity.map(f64::ln);
        let space = CouplingSpace::uniform(n, m)?;
        Self::with_cost(
            space,
            cost,
            ProblemKind::OrderPreserving(OrderPreservingParams {
                lambda1,
                lambda2,
                sigma,
                order_prior,
                similarity,
                log_similarity,
            }),
        )
    }

    /// Laplacian-regularized entropic problem between source and target
    /// features (one point per row). `marginals` defaults to uniform.
    #[allow(clippy::too_many_arguments)]
    pub fn laplacian_da(
        source: &DMatrix<f64>,
        target: &DMatrix<f64>,
        lambda: f64,
        laplacian_weight: f64,
        laplacian_mix: f64,
        source_laplacian: DMatrix<f64>,
        target_laplacian: DMatrix<f64>,
        marginals: Option<(DVector<f64>, DVector<f64>)>,
    ) -> Result<Self> {
        positive("lambda", lambda)?;
        if !(laplacian_weight >= 0.0 && laplacian_weight.is_finite()) {
            return Err(Error::param("laplacian_weight", "must be nonnegative"));
        }
        if !(0.0..=1.0).contains(&laplacian_mix) {
            return Err(Error::param("laplacian_mix", format!("{laplacian_mix} outside [0, 1]")));
        }
        let (n, m) = (source.nrows(), target.nrows());
        linalg::check_shape("source Laplacian", &source_laplacian, (n, n))?;
        linalg::check_shape("target Laplacian", &target_laplacian, (m, m))?;
        check_laplacian("source_laplacian", &source_laplacian)?;
        check_laplacian("target_laplacian", &target_laplacian)?;
        let cost = squared_distances(source, target)?;
        let space = match marginals {
            Some((p, q)) => CouplingSpace::new(p, q)?,
            None => CouplingSpace::uniform(n, m)?,
        };
        let params = LaplacianDaParams {
            lambda,
            laplacian_weight,
            laplacian_mix,
            source_gram: source * source.transpose(),
            target_gram: target * target.transpose(),
            source_laplacian,
            target_laplacian,
            source: source.clone(),
            target: target.clone(),
        };
        Self::with_cost(space, cost, ProblemKind::LaplacianDa(Box::new(params)))
    }

    /// Multiplies the cost matrix by `factor`, leaving the regularizer untouched.
    pub fn scale_cost(mut self, factor: f64) -> Result<Self> {
        positive("factor", factor)?;
        self.cost *= factor;
        Ok(self)
    }

    pub fn cost(&self) -> &DMatrix<f64> {
        &self.cost
    }

    pub fn kind(&self) -> &ProblemKind {
        &self.kind
    }

    /// `Tr(Xᵀ C)`, the transport cost part of the objective.
    pub fn transport_cost(&self, x: &DMatrix<f64>) -> f64 {
        linalg::frob(x, &self.cost)
    }

    /// Value with the positivity precondition checked.
    pub fn checked_value(&self, x: &DMatrix<f64>) -> Result<f64> {
        linalg::check_shape("plan", x, self.space.shape())?;
        if !matches!(self.kind, ProblemKind::Classic) {
            for i in 0..x.nrows() {
                for j in 0..x.ncols() {
                    if !(x[(i, j)] > 0.0) {
                        return Err(Error::NonPositiveEntry { row: i, col: j, value: x[(i, j)], floor: 0.0 });
                    }
                }
            }
        }
        Ok(self.value(x))
    }

    /// `Ω_c(X)`, the symmetric Laplacian regularizer (zero for other variants).
    pub fn laplacian_term(&self, x: &DMatrix<f64>) -> f64 {
        let ProblemKind::LaplacianDa(lp) = &self.kind else {
            return 0.0;
        };
        let xt = x * &lp.target;
        let src = linalg::frob(&xt, &(&lp.source_laplacian * &xt));
        let xs = x.tr_mul(&lp.source);
        let tgt = linalg::frob(&xs, &(&lp.target_laplacian * &xs));
        (1.0 - lp.laplacian_mix) * src + lp.laplacian_mix * tgt
    }
}

/// Squared regularizer's truncation to nonnegative entries. Plans on the
/// manifold are strictly positive, so this only checks the invariant.
fn zero_truncation(x: &DMatrix<f64>) {
    debug_assert!(x.iter().all(|v| *v > 0.0), "plan left the positive orthant");
}

impl Objective for ProblemInstance {
    fn space(&self) -> &Arc<CouplingSpace> {
        &self.space
    }

    fn value(&self, x: &DMatrix<f64>) -> f64 {
        let base = self.transport_cost(x);
        match &self.kind {
            ProblemKind::Classic => base,
            ProblemKind::Entropic(e) => base + e.lambda * xlogx_sum(x),
            ProblemKind::Squared(s) => {
                zero_truncation(x);
                base + s.lambda * x.norm_squared()
            }
            ProblemKind::Tsallis(t) => {
                let reg: f64 = x.iter().map(|v| v.powf(t.qexp) - v).sum();
                base - t.lambda / (1.0 - t.qexp) * reg
            }
            ProblemKind::OrderPreserving(o) => {
                let kl: f64 = x
                    .iter()
                    .zip(o.log_similarity.iter())
                    .map(|(v, lp)| v * (v.ln() - lp))
                    .sum();
                base - o.lambda1 * linalg::frob(x, &o.order_prior) + o.lambda2 * kl
            }
            ProblemKind::LaplacianDa(l) => {
                base + l.lambda * xlogx_sum(x) + 0.5 * l.laplacian_weight * self.laplacian_term(x)
            }
        }
    }

    fn egrad(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let c = &self.cost;
        match &self.kind {
            ProblemKind::Classic => c.clone(),
            ProblemKind::Entropic(e) => c + x.map(|v| e.lambda * (1.0 + v.ln())),
            ProblemKind::Squared(s) => {
                zero_truncation(x);
                c + x * (2.0 * s.lambda)
            }
            ProblemKind::Tsallis(t) => {
                let k = t.lambda / (1.0 - t.qexp);
                c - x.map(|v| k * (t.qexp * v.powf(t.qexp - 1.0) - 1.0))
            }
            ProblemKind::OrderPreserving(o) => DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| {
                c[(i, j)] - o.lambda1 * o.order_prior[(i, j)]
                    + o.lambda2 * (1.0 + x[(i, j)].ln() - o.log_similarity[(i, j)])
            }),
            ProblemKind::LaplacianDa(l) => {
                let mut g = c + x.map(|v| l.lambda * (1.0 + v.ln()));
                g += laplacian_grad(l, x) * l.laplacian_weight;
                g
            }
        }
    }

    fn ehess(&self, x: &DMatrix<f64>, xi: &DMatrix<f64>) -> DMatrix<f64> {
        match &self.kind {
            ProblemKind::Classic => DMatrix::zeros(x.nrows(), x.ncols()),
            ProblemKind::Entropic(e) => xi.component_div(x) * e.lambda,
            ProblemKind::Squared(s) => xi * (2.0 * s.lambda),
            ProblemKind::Tsallis(t) => {
                DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| {
                    t.qexp * t.lambda * x[(i, j)].powf(t.qexp - 2.0) * xi[(i, j)]
                })
            }
            ProblemKind::OrderPreserving(o) => xi.component_div(x) * o.lambda2,
            ProblemKind::LaplacianDa(l) => {
                xi.component_div(x) * l.lambda + laplacian_grad(l, xi) * l.laplacian_weight
            }
        }
    }
}

/// `(1 − a) L_s Z P_t P_tᵀ + a P_s P_sᵀ Z L_t`, linear in `Z`.
fn laplacian_grad(l: &LaplacianDaParams, z: &DMatrix<f64>) -> DMatrix<f64> {
    let a = l.laplacian_mix;
    let mut out = DMatrix::zeros(z.nrows(), z.ncols());
    if a < 1.0 {
        out += &l.source_laplacian * z * &l.target_gram * (1.0 - a);
    }
    if a > 0.0 {
        out += &l.source_gram * z * &l.target_laplacian * a;
    }
    out
}

fn check_laplacian(name: &'static str, l: &DMatrix<f64>) -> Result<()> {
    let scale = l.amax().max(1.0);
    let asym = (l - l.transpose()).amax();
    if asym > 1e-10 * scale {
        return Err(Error::param(name, format!("not symmetric (max asymmetry {asym:e})")));
    }
    let rows = linalg::row_sums(l).amax();
    if rows > 1e-10 * scale {
        return Err(Error::param(name, format!("row sums reach {rows:e}")));
    }
    Ok(())
}

/// Order prior `D_ij = 1 / ((i/n − j/m)² + 1)` and Gaussian similarity
/// `P_ij = exp(−l²/(2σ²)) / (σ√(2π))`, `l = |i/n − j/m| / √(1/n² + 1/m²)`,
/// with 1-based positions.
pub fn order_matrices(n: usize, m: usize, sigma: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let (nf, mf) = (n as f64, m as f64);
    let norm = (1.0 / (nf * nf) + 1.0 / (mf * mf)).sqrt();
    let peak = 1.0 / (sigma * (2.0 * PI).sqrt());
    let offset = |i: usize, j: usize| (i + 1) as f64 / nf - (j + 1) as f64 / mf;
    let d = DMatrix::from_fn(n, m, |i, j| 1.0 / (offset(i, j).powi(2) + 1.0));
    let p = DMatrix::from_fn(n, m, |i, j| {
        let l = offset(i, j).abs() / norm;
        peak * (-l * l / (2.0 * sigma * sigma)).exp()
    });
    (d, p)
}
