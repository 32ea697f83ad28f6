use std::time::Instant;

use nalgebra::DMatrix;

use super::rgd::{check_start, first_order, FirstOrder};
use super::{SolverConfig, SolverReport, SolverStatus, Trace};
use crate::error::Result;
use crate::manifold::{CouplingPoint, HessianWorkspace};
use crate::problems::Objective;

/// Output of the truncated conjugate-gradient model solve.
struct ModelStep {
    eta: DMatrix<f64>,
    /// Hessian applied to `eta`.
    h_eta: DMatrix<f64>,
    inner: usize,
    hit_boundary: bool,
}

/// Steihaug-Toint truncated CG on `min ⟨g, η⟩ + ½⟨η, Hη⟩` subject to `‖η‖ ≤ radius`.
fn truncated_cg<O: Objective + ?Sized>(
    problem: &O,
    x: &CouplingPoint,
    ws: &HessianWorkspace,
    grad: &DMatrix<f64>,
    radius: f64,
    cfg: &SolverConfig,
) -> Result<ModelStep> {
    let plan = x.matrix();
    let hess = |d: &DMatrix<f64>| -> Result<DMatrix<f64>> {
        let ehess = problem.ehess(plan, d);
        Ok(ws.apply(&ehess, &x.attach(d.clone()))?.hess.into_matrix())
    };
    let (n, m) = x.shape();
    let mut eta = DMatrix::zeros(n, m);
    let mut h_eta = DMatrix::zeros(n, m);
    let mut r = grad.clone();
    let mut r_r = x.fisher(&r, &r);
    let r0 = r_r.sqrt();
    let target = r0 * r0.min(cfg.inner_cg_tol);
    let mut delta = -&r;
    let (mut e_e, mut e_d, mut d_d) = (0.0, 0.0, r_r);
    let radius2 = radius * radius;

    for j in 0..cfg.inner_cg_max {
        let h_d = hess(&delta)?;
        let d_hd = x.fisher(&delta, &h_d);
        let alpha = r_r / d_hd;
        let e_e_next = e_e + 2.0 * alpha * e_d + alpha * alpha * d_d;
        if !(d_hd > 0.0) || e_e_next >= radius2 {
            let tau = (-e_d + (e_d * e_d + d_d * (radius2 - e_e)).max(0.0).sqrt()) / d_d;
            eta += &delta * tau;
            h_eta += &h_d * tau;
            return Ok(ModelStep { eta, h_eta, inner: j + 1, hit_boundary: true });
        }
        e_e = e_e_next;
        eta += &delta * alpha;
        h_eta += &h_d * alpha;
        r += &h_d * alpha;
        let r_r_next = x.fisher(&r, &r);
        if r_r_next.sqrt() <= target {
            return Ok(ModelStep { eta, h_eta, inner: j + 1, hit_boundary: false });
        }
        let beta = r_r_next / r_r;
        r_r = r_r_next;
        e_d = beta * (e_d + alpha * d_d);
        d_d = r_r + beta * beta * d_d;
        delta = &delta * beta - &r;
    }
    Ok(ModelStep { eta, h_eta, inner: cfg.inner_cg_max, hit_boundary: false })
}

/// Armijo gradient step used when the model step cannot be formed.
fn gradient_step<O: Objective + ?Sized>(
    problem: &O,
    x: &CouplingPoint,
    cur: &FirstOrder,
    radius: f64,
    cfg: &SolverConfig,
) -> Option<(CouplingPoint, FirstOrder)> {
    let mut t = radius / cur.gradnorm;
    let slope = cur.gradnorm * cur.gradnorm;
    for _ in 0..=cfg.max_backtracks {
        if let Ok(y) = x.retract(&cur.grad.scale(-t)) {
            if problem.value(y.matrix()) <= cur.value - cfg.armijo_c * t * slope {
                if let Ok(next) = first_order(problem, &y) {
                    return Some((y, next));
                }
            }
        }
        t *= cfg.backtrack_factor;
    }
    None
}

/// Riemannian trust-region method with a truncated-CG inner solver.
pub fn rtr<O: Objective + ?Sized>(problem: &O, x0: &CouplingPoint, cfg: &SolverConfig) -> Result<SolverReport> {
    check_start(problem, x0, cfg)?;
    let start = Instant::now();
    let max_radius = cfg.tr_max_radius.unwrap_or_else(|| x0.space().mass().sqrt());
    let mut radius = cfg.tr_initial_radius.unwrap_or(max_radius / 8.0);
    let mut x = x0.clone();
    let mut cur = first_order(problem, &x)?;
    let mut trace = Trace::new(&x, cur.value, cur.gradnorm);
    let mut status = SolverStatus::MaxIter;
    let mut message = None;
    let mut iterations = 0;
    let mut inner_total = 0;
    let mut fallbacks = 0;

    while iterations < cfg.max_iter {
        if cur.gradnorm <= cfg.stopping_threshold(cur.value) {
            status = SolverStatus::Converged;
            break;
        }
        iterations += 1;
        let egrad = problem.egrad(x.matrix());
        let model = HessianWorkspace::new(&x, &egrad)
            .and_then(|ws| truncated_cg(problem, &x, &ws, cur.grad.matrix(), radius, cfg));
        let model = match model {
            Ok(step) => {
                let decrease = -(x.fisher(cur.grad.matrix(), &step.eta) + 0.5 * x.fisher(&step.eta, &step.h_eta));
                if decrease > 0.0 && step.eta.iter().all(|v| v.is_finite()) {
                    Ok((step, decrease))
                } else {
                    Err(format!("model decrease {decrease:e} is not positive"))
                }
            }
            Err(e) => Err(e.to_string()),
        };

        let (step, decrease) = match model {
            Ok(v) => v,
            Err(reason) => {
                fallbacks += 1;
                match gradient_step(problem, &x, &cur, radius, cfg) {
                    Some((y, next)) => {
                        x = y;
                        cur = next;
                        trace.push(&x, cur.value, cur.gradnorm, radius);
                        continue;
                    }
                    None => {
                        status = SolverStatus::LineSearchFailed;
                        message = Some(format!("Hessian model unusable ({reason}) and gradient fallback failed"));
                        break;
                    }
                }
            }
        };
        inner_total += step.inner;

        let candidate = x
            .retract(&x.attach(step.eta))
            .ok()
            .and_then(|y| first_order(problem, &y).ok().map(|next| (y, next)));
        let rho = match &candidate {
            Some((_, next)) => {
                let reg = 1e3 * f64::EPSILON * cur.value.abs().max(1.0);
                (cur.value - next.value + reg) / (decrease + reg)
            }
            None => f64::NEG_INFINITY,
        };

        if rho < 0.25 {
            radius *= 0.25;
        } else if rho > 0.75 && step.hit_boundary {
            radius = (2.0 * radius).min(max_radius);
        }
        if rho > cfg.tr_accept_rho {
            let (y, next) = candidate.expect("finite rho implies a candidate");
            x = y;
            cur = next;
        }
        trace.push(&x, cur.value, cur.gradnorm, radius);
        if radius < 1e-14 * max_radius {
            status = SolverStatus::LineSearchFailed;
            message = Some("trust radius collapsed".into());
            break;
        }
    }
    if status == SolverStatus::MaxIter && cur.gradnorm <= cfg.stopping_threshold(cur.value) {
        status = SolverStatus::Converged;
    }

    Ok(SolverReport {
        final_point: x,
        objective_trace: trace.objective,
        gradnorm_trace: trace.gradnorm,
        step_trace: trace.step,
        feasibility_trace: trace.feasibility,
        iterations,
        status,
        wall_time: start.elapsed(),
        inner_iterations: inner_total,
        hessian_fallbacks: fallbacks,
        message,
    })
}
