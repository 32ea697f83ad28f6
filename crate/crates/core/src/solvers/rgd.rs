use std::time::Instant;

use super::{SolverConfig, SolverReport, SolverStatus, StepRule, Trace};
use crate::error::{Error, Result};
use crate::manifold::{CouplingPoint, TangentVector};
use crate::problems::Objective;

/// Objective value, Riemannian gradient and its norm at one point.
pub(super) struct FirstOrder {
    pub value: f64,
    pub grad: TangentVector,
    pub gradnorm: f64,
}

pub(super) fn first_order<O: Objective + ?Sized>(problem: &O, x: &CouplingPoint) -> Result<FirstOrder> {
    let value = problem.value(x.matrix());
    let grad = x.riemannian_gradient(&problem.egrad(x.matrix()))?;
    let gradnorm = x.norm(&grad)?;
    if !value.is_finite() || !gradnorm.is_finite() {
        return Err(Error::param("objective", "non-finite value or gradient"));
    }
    Ok(FirstOrder { value, grad, gradnorm })
}

pub(super) fn check_start<O: Objective + ?Sized>(problem: &O, x0: &CouplingPoint, cfg: &SolverConfig) -> Result<()> {
    cfg.validate()?;
    let (s, t) = (problem.space(), x0.space());
    if !(std::sync::Arc::ptr_eq(s, t) || (s.p() == t.p() && s.q() == t.q())) {
        return Err(Error::InvalidMarginals("starting point belongs to a different coupling space".into()));
    }
    Ok(())
}

/// Riemannian gradient descent `X ← R_X(−t grad f(X))`.
pub fn rgd<O: Objective + ?Sized>(problem: &O, x0: &CouplingPoint, cfg: &SolverConfig) -> Result<SolverReport> {
    check_start(problem, x0, cfg)?;
    let start = Instant::now();
    let mut x = x0.clone();
    let mut cur = first_order(problem, &x)?;
    let mut trace = Trace::new(&x, cur.value, cur.gradnorm);
    let mut status = SolverStatus::MaxIter;
    let mut message = None;
    let mut last_step = cfg.initial_step / 2.0;
    let mut iterations = 0;

    while iterations < cfg.max_iter {
        if cur.gradnorm <= cfg.stopping_threshold(cur.value) {
            status = SolverStatus::Converged;
            break;
        }
        let slope = cur.gradnorm * cur.gradnorm;
        let accepted = match cfg.step_rule {
            StepRule::Constant => {
                let t = cfg.initial_step;
                match x.retract(&cur.grad.scale(-t)).and_then(|y| Ok((first_order(problem, &y)?, y, t))) {
                    Ok(v) => Some(v),
                    Err(e) => {
                        status = SolverStatus::NumericalError;
                        message = Some(e.to_string());
                        break;
                    }
                }
            }
            StepRule::Armijo | StepRule::AdaptiveArmijo => {
                let mut t = if cfg.step_rule == StepRule::Armijo {
                    cfg.initial_step
                } else {
                    (2.0 * last_step).clamp(cfg.initial_step.min(cfg.max_step), cfg.max_step)
                };
                let mut found = None;
                for _ in 0..=cfg.max_backtracks {
                    if let Ok(y) = x.retract(&cur.grad.scale(-t)) {
                        let fy = problem.value(y.matrix());
                        if fy.is_finite() && fy <= cur.value - cfg.armijo_c * t * slope {
                            match first_order(problem, &y) {
                                Ok(next) => {
                                    found = Some((next, y, t));
                                    break;
                                }
                                Err(e) => message = Some(e.to_string()),
                            }
                        }
                    }
                    t *= cfg.backtrack_factor;
                }
                if found.is_none() {
                    status = SolverStatus::LineSearchFailed;
                    message.get_or_insert_with(|| format!("no sufficient decrease after {} backtracks", cfg.max_backtracks));
                    break;
                }
                found
            }
        };
        let (next, y, t) = accepted.expect("handled above");
        last_step = t;
        x = y;
        cur = next;
        iterations += 1;
        trace.push(&x, cur.value, cur.gradnorm, t);
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
        inner_iterations: 0,
        hessian_fallbacks: 0,
        message,
    })
}
