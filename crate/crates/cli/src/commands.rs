use std::io::Write;

use cmm::baselines::{lp_exact, sinkhorn_entropic, SinkhornOptions, SinkhornStatus};
use cmm::dataops::plan_mse;
use cmm::experiments::{domain_adapt, opw_distance, sweep_lambda, CmmStatus};
use cmm::io::ProblemDescriptor;
use cmm::manifold::CouplingPoint;
use cmm::problems::{Objective, ProblemInstance};
use cmm::solvers::{check_derivatives, solve, SolverReport, SolverStatus};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{CheckPoint, RunConfig};
use crate::error::CliError;
use crate::output::{num, opt_num, Artifacts};

fn descriptor(cfg: &RunConfig) -> &ProblemDescriptor {
    cfg.problem.as_ref().expect("validated at load")
}

fn build(cfg: &RunConfig) -> Result<ProblemInstance, CliError> {
    descriptor(cfg)
        .build(&cfg.problem_base)
        .map_err(|e| CliError::from_core("problem", e))
}

fn print_json<T: Serialize>(value: &T) {
    let text = serde_json::to_string_pretty(value).expect("summary serializes");
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

/// Error for statuses that mean the solver gave up on a valid problem.
fn check_status(report: &SolverReport) -> Result<(), CliError> {
    match report.status {
        SolverStatus::Converged | SolverStatus::MaxIter => Ok(()),
        s => Err(CliError::solver(format!(
            "solver stopped with status {s}{}",
            report.message.as_ref().map(|m| format!(": {m}")).unwrap_or_default()
        ))),
    }
}

fn write_trace(out: &Artifacts, report: &SolverReport) -> Result<(), CliError> {
    let rows: Vec<Vec<String>> = (0..report.objective_trace.len())
        .map(|i| {
            vec![
                i.to_string(),
                num(report.objective_trace[i]),
                num(report.gradnorm_trace[i]),
                num(report.step_trace[i]),
                num(report.feasibility_trace[i]),
            ]
        })
        .collect();
    out.csv("report.csv", &["iteration", "objective", "gradnorm", "step", "feasibility"], &rows)
}

#[derive(Serialize)]
struct SolveSummary<'a> {
    variant: &'a str,
    solver: String,
    status: SolverStatus,
    iterations: usize,
    final_objective: f64,
    final_gradnorm: f64,
    transport_cost: f64,
    max_feasibility: f64,
    inner_iterations: usize,
    hessian_fallbacks: usize,
    message: &'a Option<String>,
}

fn summarize<'a>(variant: &'a str, cfg: &RunConfig, pb: &ProblemInstance, report: &'a SolverReport) -> SolveSummary<'a> {
    SolveSummary {
        variant,
        solver: cfg.solver_kind.to_string(),
        status: report.status,
        iterations: report.iterations,
        final_objective: report.final_objective(),
        final_gradnorm: report.final_gradnorm(),
        transport_cost: pb.transport_cost(report.final_point.matrix()),
        max_feasibility: report.feasibility_trace.iter().copied().fold(0.0, f64::max),
        inner_iterations: report.inner_iterations,
        hessian_fallbacks: report.hessian_fallbacks,
        message: &report.message,
    }
}

#[derive(Serialize)]
struct LpComparison {
    lp_cost: f64,
    cmm_cost: f64,
    gap: f64,
    relative_gap: f64,
    lp_nonzeros: usize,
    cmm_min_entry: f64,
}

#[derive(Serialize)]
struct SinkhornComparison {
    lambda: f64,
    sinkhorn_status: SinkhornStatus,
    sinkhorn_iterations: usize,
    plan_mse: Option<f64>,
}

pub fn cmd_solve(cfg: &RunConfig) -> Result<(), CliError> {
    let desc = descriptor(cfg);
    let pb = build(cfg)?;
    let out = Artifacts::create(cfg)?;
    let x0 = pb.space().independence_point();
    let report = solve(cfg.solver_kind, &pb, &x0, &cfg.solver).map_err(|e| CliError::solver(e.to_string()))?;
    let x = report.final_point.matrix();
    write_trace(&out, &report)?;
    out.plan("plan", x)?;

    let (p, q) = (pb.space().p(), pb.space().q());
    match desc {
        ProblemDescriptor::Classic { .. } => {
            let lp = lp_exact(pb.cost(), p, q).map_err(|e| CliError::solver(format!("LP baseline: {e}")))?;
            out.plan("lp_plan", &lp.plan)?;
            let cmm_cost = pb.transport_cost(x);
            let gap = cmm_cost - lp.cost;
            out.json(
                "lp_comparison.json",
                &LpComparison {
                    lp_cost: lp.cost,
                    cmm_cost,
                    gap,
                    relative_gap: gap / lp.cost.abs().max(f64::MIN_POSITIVE),
                    lp_nonzeros: lp.plan.iter().filter(|&&v| v > 0.0).count(),
                    cmm_min_entry: x.min(),
                },
            )?;
        }
        ProblemDescriptor::Entropic { lambda, .. } => {
            let sk = sinkhorn_entropic(pb.cost(), p, q, *lambda, &SinkhornOptions::default())
                .map_err(|e| CliError::solver(format!("Sinkhorn baseline: {e}")))?;
            out.plan("sinkhorn_plan", &sk.plan)?;
            let plan_mse = (sk.status == SinkhornStatus::Ok)
                .then(|| plan_mse(x, &sk.plan).ok())
                .flatten();
            out.json(
                "sinkhorn_comparison.json",
                &SinkhornComparison {
                    lambda: *lambda,
                    sinkhorn_status: sk.status,
                    sinkhorn_iterations: sk.iterations,
                    plan_mse,
                },
            )?;
        }
        _ => {}
    }

    let summary = summarize(desc.variant(), cfg, &pb, &report);
    out.json("summary.json", &summary)?;
    print_json(&summary);
    check_status(&report)
}

pub fn cmd_sweep(cfg: &RunConfig) -> Result<(), CliError> {
    let sweep = cfg.sweep.as_ref().expect("validated at load");
    let (p, q, c) = descriptor(cfg)
        .transport_data(&cfg.problem_base)
        .map_err(|e| CliError::from_core("problem", e))?
        .expect("transport variant");
    let rows = sweep_lambda(&p, &q, &c, &sweep.lambdas, cfg.solver_kind, &cfg.solver, &sweep.sinkhorn, cfg.execution)
        .map_err(|e| CliError::from_core("problem", e))?;
    let out = Artifacts::create(cfg)?;
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                num(r.lambda),
                opt_num(r.mse),
                r.sinkhorn_status.to_string(),
                match r.cmm_status {
                    CmmStatus::Ok => "ok".into(),
                    CmmStatus::Failed => "failed".into(),
                },
                r.cmm_termination.map(|s| s.to_string()).unwrap_or_default(),
                r.cmm_iterations.to_string(),
                r.message.clone().unwrap_or_default(),
            ]
        })
        .collect();
    out.csv(
        "sweep.csv",
        &["lambda", "mse", "sinkhorn_status", "cmm_status", "cmm_termination", "cmm_iterations", "message"],
        &table,
    )?;
    let timings: Vec<Vec<String>> = rows
        .iter()
        .map(|r| vec![num(r.lambda), num(r.cmm_seconds), num(r.sinkhorn_seconds)])
        .collect();
    out.csv("timings.csv", &["lambda", "cmm_seconds", "sinkhorn_seconds"], &timings)?;

    #[derive(Serialize)]
    struct SweepSummary {
        points: usize,
        cmm_failed: usize,
        sinkhorn_unstable: usize,
        sinkhorn_not_converged: usize,
        max_mse: Option<f64>,
    }
    let count = |s: SinkhornStatus| rows.iter().filter(|r| r.sinkhorn_status == s).count();
    let summary = SweepSummary {
        points: rows.len(),
        cmm_failed: rows.iter().filter(|r| r.cmm_status == CmmStatus::Failed).count(),
        sinkhorn_unstable: count(SinkhornStatus::Unstable),
        sinkhorn_not_converged: count(SinkhornStatus::NotConverged),
        max_mse: rows.iter().filter_map(|r| r.mse).reduce(f64::max),
    };
    out.json("summary.json", &summary)?;
    print_json(&summary);
    if summary.cmm_failed > 0 {
        return Err(CliError::solver(format!("{} of {} sweep points failed", summary.cmm_failed, summary.points)));
    }
    Ok(())
}

pub fn cmd_opw(cfg: &RunConfig) -> Result<(), CliError> {
    let ProblemDescriptor::OrderPreserving { u, v, params } = descriptor(cfg) else {
        unreachable!("validated at load")
    };
    let u = u.load(&cfg.problem_base).map_err(|e| CliError::from_core("problem.u", e))?;
    let v = v.load(&cfg.problem_base).map_err(|e| CliError::from_core("problem.v", e))?;
    if u.ncols() != v.ncols() {
        return Err(CliError::config(
            "problem.v",
            format!("feature dimension {} differs from {} in `u`", v.ncols(), u.ncols()),
        ));
    }
    // Construction errors are configuration errors; only the solve itself is a solver failure.
    ProblemInstance::order_preserving(&u, &v, params.sigma, params.lambda1, params.lambda2)
        .map_err(|e| CliError::from_core("problem", e))?;
    let out = Artifacts::create(cfg)?;
    let result = opw_distance(&u, &v, params, cfg.solver_kind, &cfg.solver).map_err(|e| CliError::solver(e.to_string()))?;
    write_trace(&out, &result.report)?;
    out.plan("plan", result.report.final_point.matrix())?;

    #[derive(Serialize)]
    struct Distance<'a> {
        distance: f64,
        status: SolverStatus,
        iterations: usize,
        solver: String,
        message: &'a Option<String>,
    }
    let doc = Distance {
        distance: result.distance,
        status: result.report.status,
        iterations: result.report.iterations,
        solver: cfg.solver_kind.to_string(),
        message: &result.report.message,
    };
    out.json("distance.json", &doc)?;
    print_json(&doc);
    check_status(&result.report)
}

pub fn cmd_domain_adapt(cfg: &RunConfig) -> Result<(), CliError> {
    let da = cfg.domain_adapt.as_ref().expect("validated at load");
    let (summaries, trials) = domain_adapt(&da.config, cfg.solver_kind, &cfg.solver, &da.angles, cfg.seed, cfg.execution)
        .map_err(|e| CliError::from_core("domain_adapt", e))?;
    let out = Artifacts::create(cfg)?;
    let table: Vec<Vec<String>> = summaries
        .iter()
        .map(|s| {
            vec![
                num(s.angle),
                num(s.mean_error),
                num(s.var_error),
                num(s.baseline_mean),
                num(s.baseline_var),
                s.completed.to_string(),
                s.failed.to_string(),
            ]
        })
        .collect();
    out.csv(
        "table.csv",
        &["angle", "mean_error", "var_error", "baseline_mean", "baseline_var", "completed", "failed"],
        &table,
    )?;
    let rows: Vec<Vec<String>> = trials
        .iter()
        .map(|t| {
            vec![
                num(t.angle),
                t.trial.to_string(),
                t.seed.to_string(),
                opt_num(t.adapted_error),
                num(t.baseline_error),
                t.solver_status.map(|s| s.to_string()).unwrap_or_default(),
                t.iterations.to_string(),
                t.message.clone().unwrap_or_default(),
            ]
        })
        .collect();
    out.csv(
        "trials.csv",
        &["angle", "trial", "trial_seed", "adapted_error", "baseline_error", "solver_status", "iterations", "message"],
        &rows,
    )?;

    #[derive(Serialize)]
    struct Table<'a> {
        solver: String,
        angles: &'a [cmm::experiments::AngleSummary],
    }
    let doc = Table {
        solver: cfg.solver_kind.to_string(),
        angles: &summaries,
    };
    out.json("summary.json", &doc)?;
    print_json(&doc);
    let failed: usize = summaries.iter().map(|s| s.failed).sum();
    if failed > 0 {
        return Err(CliError::solver(format!("{failed} of {} trials failed", trials.len())));
    }
    Ok(())
}

fn random_point(pb: &ProblemInstance, seed: u64) -> Result<CouplingPoint, CliError> {
    let space = pb.space();
    let (n, m) = space.shape();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw = DMatrix::from_fn(n, m, |_, _| rng.random_range(0.2..2.0));
    let tol = space.tolerances();
    space
        .sinkhorn_project(&raw, tol.sinkhorn_eps, tol.sinkhorn_max_iter)
        .and_then(|s| space.validate_point(s.plan))
        .map_err(|e| CliError::solver(format!("random base point: {e}")))
}

pub fn cmd_check(cfg: &RunConfig) -> Result<(), CliError> {
    let check = cfg.check.as_ref().expect("validated at load");
    let pb = build(cfg)?;
    let out = Artifacts::create(cfg)?;
    let x = match check.point {
        CheckPoint::Independence => pb.space().independence_point(),
        CheckPoint::Random => random_point(&pb, cfg.seed)?,
    };
    let result = check_derivatives(&pb, &x, check.directions, cfg.seed.wrapping_add(1));
    let passed = result.failures.is_empty()
        && result.directions_checked > 0
        && result.gradient_max_rel_error <= check.gradient_tol
        && result.hessian_max_rel_error <= check.hessian_tol;

    #[derive(Serialize)]
    struct CheckDoc<'a> {
        variant: &'a str,
        point: CheckPoint,
        gradient_tol: f64,
        hessian_tol: f64,
        passed: bool,
        #[serde(flatten)]
        result: &'a cmm::solvers::DerivativeCheck,
    }
    let doc = CheckDoc {
        variant: descriptor(cfg).variant(),
        point: check.point,
        gradient_tol: check.gradient_tol,
        hessian_tol: check.hessian_tol,
        passed,
        result: &result,
    };
    out.json("check.json", &doc)?;
    print_json(&doc);
    if !passed {
        return Err(CliError::solver("derivative check exceeded its tolerances"));
    }
    Ok(())
}
