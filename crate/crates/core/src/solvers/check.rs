use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::Result;
use crate::manifold::{CouplingPoint, HessianWorkspace};
use crate::problems::Objective;

/// Finite-difference diagnostics of the Riemannian gradient and Hessian.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DerivativeCheck {
    /// Largest `|φ'(0) − g(grad, ξ)| / max(|g(grad, ξ)|, ‖grad‖‖ξ‖)` over directions.
    pub gradient_max_rel_error: f64,
    /// Largest `‖H_fd ξ − Hess ξ‖ / max(‖Hess ξ‖, ‖H_fd ξ‖)` over directions.
    pub hessian_max_rel_error: f64,
    pub directions_checked: usize,
    pub zero_directions_skipped: usize,
    /// Errors raised while evaluating a direction, as text.
    pub failures: Vec<String>,
}

const GRAD_STEP: f64 = 1e-4;
const HESS_STEP: f64 = 1e-5;

/// Runs [`check_derivatives_along`] on `trials` random tangent directions.
pub fn check_derivatives<O: Objective + ?Sized>(problem: &O, x: &CouplingPoint, trials: usize, seed: u64) -> DerivativeCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, m) = x.shape();
    let dirs: Vec<DMatrix<f64>> = (0..trials)
        .map(|_| DMatrix::from_fn(n, m, |_, _| StandardNormal.sample(&mut rng)))
        .collect();
    check_derivatives_along(problem, x, &dirs)
}

/// Projects each direction onto the tangent space, skips zero ones, and
/// compares the analytic derivatives against central differences.
///
/// The gradient is checked along the retraction curve `R_X(hξ)`. The
/// Hessian is checked by differencing the ambient gradient field
/// `γ = Π(Grad f ⊙ X)` along the straight line `X ± hξ`, which stays on
/// the manifold, and applying the connection correction to the result.
pub fn check_derivatives_along<O: Objective + ?Sized>(problem: &O, x: &CouplingPoint, dirs: &[DMatrix<f64>]) -> DerivativeCheck {
    let mut out = DerivativeCheck {
        gradient_max_rel_error: 0.0,
        hessian_max_rel_error: 0.0,
        directions_checked: 0,
        zero_directions_skipped: 0,
        failures: Vec::new(),
    };
    for d in dirs {
        match check_one(problem, x, d) {
            Ok(Some((ge, he))) => {
                out.directions_checked += 1;
                out.gradient_max_rel_error = out.gradient_max_rel_error.max(ge);
                out.hessian_max_rel_error = out.hessian_max_rel_error.max(he);
            }
            Ok(None) => out.zero_directions_skipped += 1,
            Err(e) => out.failures.push(e.to_string()),
        }
    }
    out
}

fn rel(err: f64, scale: f64) -> f64 {
    if scale > 0.0 {
        err / scale
    } else {
        err
    }
}

fn check_one<O: Objective + ?Sized>(problem: &O, x: &CouplingPoint, d: &DMatrix<f64>) -> Result<Option<(f64, f64)>> {
    let plan = x.matrix();
    let (xi, _) = x.project(d)?;
    let ratio = xi.matrix().zip_fold(plan, 0.0_f64, |acc, v, w| acc.max((v / w).abs()));
    if ratio == 0.0 || !ratio.is_finite() {
        return Ok(None);
    }
    let xi = xi.scale(1.0 / ratio);

    let egrad = problem.egrad(plan);
    let ws = HessianWorkspace::new(x, &egrad)?;
    let grad = ws.gradient();
    let analytic = x.metric(&grad, &xi)?;
    let f_plus = problem.value(x.retract(&xi.scale(GRAD_STEP))?.matrix());
    let f_minus = problem.value(x.retract(&xi.scale(-GRAD_STEP))?.matrix());
    let fd = (f_plus - f_minus) / (2.0 * GRAD_STEP);
    let grad_err = rel((fd - analytic).abs(), analytic.abs().max(x.norm(&grad)? * x.norm(&xi)?));

    let hess = ws.apply(&problem.ehess(plan, xi.matrix()), &xi)?.hess;
    let space = x.space();
    let gamma_at = |h: f64| -> Result<DMatrix<f64>> {
        let y = space.validate_point(plan + xi.matrix() * h)?;
        Ok(HessianWorkspace::new(&y, &problem.egrad(y.matrix()))?.gamma)
    };
    let d_gamma = (gamma_at(HESS_STEP)? - gamma_at(-HESS_STEP)?) / (2.0 * HESS_STEP);
    let corrected = DMatrix::from_fn(plan.nrows(), plan.ncols(), |i, j| {
        d_gamma[(i, j)] - 0.5 * ws.gamma[(i, j)] * xi.matrix()[(i, j)] / plan[(i, j)]
    });
    let (fd_hess, _) = x.project(&corrected)?;
    let fd_hess = fd_hess.scale(1.0 / space.tolerances().metric_scale);
    let diff = fd_hess.axpy(-1.0, &hess)?;
    let hess_err = rel(x.norm(&diff)?, x.norm(&hess)?.max(x.norm(&fd_hess)?));
    Ok(Some((grad_err, hess_err)))
}
