//! Riemannian solvers on the coupling manifold and a derivative checker.

mod check;
mod rgd;
mod rtr;

use std::fmt;
use std::io::Write;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifold::CouplingPoint;

pub use check::{check_derivatives, check_derivatives_along, DerivativeCheck};
pub use rgd::rgd;
pub use rtr::rtr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepRule {
    /// Armijo backtracking starting from `initial_step`.
    Armijo,
    /// Armijo backtracking starting from twice the last accepted step,
    /// at least `initial_step` and at most `max_step`.
    AdaptiveArmijo,
    /// Fixed step `initial_step`, no sufficient-decrease test.
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub max_iter: usize,
    pub grad_tol: f64,
    /// Stop at `‖grad‖ ≤ grad_tol · (1 + |f|)` instead of `‖grad‖ ≤ grad_tol`.
    pub relative_grad_tol: bool,
    pub step_rule: StepRule,
    pub initial_step: f64,
    /// Cap on the adaptive Armijo trial step.
    pub max_step: f64,
    pub armijo_c: f64,
    pub backtrack_factor: f64,
    pub max_backtracks: usize,
    /// Defaults to `√mass / 8` when absent.
    pub tr_initial_radius: Option<f64>,
    /// Defaults to `√mass` when absent.
    pub tr_max_radius: Option<f64>,
    pub tr_accept_rho: f64,
    /// Inner residual target `‖r‖ ≤ ‖r₀‖ · min(‖r₀‖, inner_cg_tol)`.
    pub inner_cg_tol: f64,
    pub inner_cg_max: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            max_iter: 5000,
            grad_tol: 1e-6,
            relative_grad_tol: true,
            step_rule: StepRule::Armijo,
            initial_step: 1.0,
            max_step: 1e8,
            armijo_c: 1e-4,
            backtrack_factor: 0.5,
            max_backtracks: 60,
            tr_initial_radius: None,
            tr_max_radius: None,
            tr_accept_rho: 0.1,
            inner_cg_tol: 0.1,
            inner_cg_max: 1000,
        }
    }
}

fn check_positive(name: &'static str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::param(name, format!("must be positive, got {v}")))
    }
}

impl SolverConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: SolverConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iter == 0 {
            return Err(Error::param("max_iter", "must be at least 1"));
        }
        check_positive("grad_tol", self.grad_tol)?;
        check_positive("initial_step", self.initial_step)?;
        check_positive("max_step", self.max_step)?;
        if !(self.armijo_c > 0.0 && self.armijo_c < 1.0) {
            return Err(Error::param("armijo_c", "must lie in (0, 1)"));
        }
        if !(self.backtrack_factor > 0.0 && self.backtrack_factor < 1.0) {
            return Err(Error::param("backtrack_factor", "must lie in (0, 1)"));
        }
        if let Some(r) = self.tr_initial_radius {
            check_positive("tr_initial_radius", r)?;
        }
        if let Some(r) = self.tr_max_radius {
            check_positive("tr_max_radius", r)?;
        }
        if let (Some(r0), Some(rmax)) = (self.tr_initial_radius, self.tr_max_radius) {
            if r0 > rmax {
                return Err(Error::param("tr_initial_radius", "exceeds tr_max_radius"));
            }
        }
        if !(self.tr_accept_rho >= 0.0 && self.tr_accept_rho < 0.25) {
            return Err(Error::param("tr_accept_rho", "must lie in [0, 0.25)"));
        }
        check_positive("inner_cg_tol", self.inner_cg_tol)?;
        if self.inner_cg_max == 0 {
            return Err(Error::param("inner_cg_max", "must be at least 1"));
        }
        Ok(())
    }

    fn stopping_threshold(&self, f: f64) -> f64 {
        if self.relative_grad_tol {
            self.grad_tol * (1.0 + f.abs())
        } else {
            self.grad_tol
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverStatus {
    Converged,
    MaxIter,
    LineSearchFailed,
    NumericalError,
}

impl fmt::Display for SolverStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SolverStatus::Converged => "converged",
            SolverStatus::MaxIter => "max_iter",
            SolverStatus::LineSearchFailed => "line_search_failed",
            SolverStatus::NumericalError => "numerical_error",
        })
    }
}

/// Outcome of a solver run. Traces have one entry per iterate, starting at `x0`.
#[derive(Debug, Clone)]
pub struct SolverReport {
    pub final_point: CouplingPoint,
    pub objective_trace: Vec<f64>,
    pub gradnorm_trace: Vec<f64>,
    /// Accepted step length (RGD) or trust radius after the update (RTR); 0 for `x0`.
    pub step_trace: Vec<f64>,
    /// Largest marginal residual of each iterate.
    pub feasibility_trace: Vec<f64>,
    pub iterations: usize,
    pub status: SolverStatus,
    pub wall_time: Duration,
    /// Total truncated-CG iterations (RTR only).
    pub inner_iterations: usize,
    /// Outer RTR iterations that fell back to a gradient step.
    pub hessian_fallbacks: usize,
    pub message: Option<String>,
}

#[derive(Serialize)]
struct ReportJson<'a> {
    status: SolverStatus,
    iterations: usize,
    wall_time_seconds: f64,
    final_objective: f64,
    final_gradnorm: f64,
    inner_iterations: usize,
    hessian_fallbacks: usize,
    message: &'a Option<String>,
    objective_trace: &'a [f64],
    gradnorm_trace: &'a [f64],
    step_trace: &'a [f64],
    feasibility_trace: &'a [f64],
    final_plan: Vec<Vec<f64>>,
}

impl SolverReport {
    pub fn final_objective(&self) -> f64 {
        *self.objective_trace.last().expect("trace holds x0")
    }

    pub fn final_gradnorm(&self) -> f64 {
        *self.gradnorm_trace.last().expect("trace holds x0")
    }

    pub fn to_json(&self) -> Result<String> {
        let plan = self.final_point.matrix();
        let doc = ReportJson {
            status: self.status,
            iterations: self.iterations,
            wall_time_seconds: self.wall_time.as_secs_f64(),
            final_objective: self.final_objective(),
            final_gradnorm: self.final_gradnorm(),
            inner_iterations: self.inner_iterations,
            hessian_fallbacks: self.hessian_fallbacks,
            message: &self.message,
            objective_trace: &self.objective_trace,
            gradnorm_trace: &self.gradnorm_trace,
            step_trace: &self.step_trace,
            feasibility_trace: &self.feasibility_trace,
            final_plan: plan.row_iter().map(|r| r.iter().copied().collect()).collect(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    /// Per-iteration rows `iteration,objective,gradnorm,step`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["iteration", "objective", "gradnorm", "step"])
            .map_err(csv_err)?;
        for (i, ((f, g), s)) in self
            .objective_trace
            .iter()
            .zip(&self.gradnorm_trace)
            .zip(&self.step_trace)
            .enumerate()
        {
            w.write_record([i.to_string(), format!("{f:e}"), format!("{g:e}"), format!("{s:e}")])
                .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Parse {
        source_name: "csv".into(),
        message: e.to_string(),
    }
}

/// Mutable trace state shared by both solvers.
struct Trace {
    objective: Vec<f64>,
    gradnorm: Vec<f64>,
    step: Vec<f64>,
    feasibility: Vec<f64>,
}

fn residual(x: &CouplingPoint) -> f64 {
    let (r, c) = x.space().marginal_residuals(x.matrix());
    r.max(c)
}

impl Trace {
    fn new(x: &CouplingPoint, f: f64, gn: f64) -> Self {
        Trace {
            objective: vec![f],
            gradnorm: vec![gn],
            step: vec![0.0],
            feasibility: vec![residual(x)],
        }
    }

    fn push(&mut self, x: &CouplingPoint, f: f64, gn: f64, step: f64) {
        self.objective.push(f);
        self.gradnorm.push(gn);
        self.step.push(step);
        self.feasibility.push(residual(x));
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    #[default]
    Rgd,
    Rtr,
}

impl fmt::Display for SolverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SolverKind::Rgd => "rgd",
            SolverKind::Rtr => "rtr",
        })
    }
}

impl std::str::FromStr for SolverKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rgd" => Ok(SolverKind::Rgd),
            "rtr" => Ok(SolverKind::Rtr),
            other => Err(Error::param("solver", format!("unknown solver `{other}` (expected rgd or rtr)"))),
        }
    }
}

/// Runs the chosen solver.
pub fn solve<O: crate::problems::Objective + ?Sized>(
    kind: SolverKind,
    problem: &O,
    x0: &CouplingPoint,
    cfg: &SolverConfig,
) -> Result<SolverReport> {
    match kind {
        SolverKind::Rgd => rgd(problem, x0, cfg),
        SolverKind::Rtr => rtr(problem, x0, cfg),
    }
}
