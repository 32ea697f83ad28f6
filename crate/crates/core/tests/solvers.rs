use cmm::baselines::{sinkhorn_entropic, SinkhornOptions};
use cmm::dataops::plan_mse;
use cmm::experiments::synthetic_instance;
use cmm::manifold::CouplingSpace;
use cmm::problems::{Objective, ProblemInstance};
use cmm::solvers::{check_derivatives, rgd, rtr, solve, SolverConfig, SolverKind, SolverStatus, StepRule};
use nalgebra::{DMatrix, DVector};

fn synthetic_entropic(lambda: f64) -> ProblemInstance {
    let (p, q, c) = synthetic_instance();
    let space = CouplingSpace::new(p, q).unwrap();
    ProblemInstance::entropic(space, c, lambda).unwrap()
}

fn assert_feasible_trace(pb: &ProblemInstance, report: &cmm::solvers::SolverReport) {
    let (r, c) = pb.space().marginal_residuals(report.final_point.matrix());
    assert!(r.max(c) < 1e-8, "residuals {r:e} {c:e}");
    assert!(report.final_point.matrix().min() > 0.0);
    assert_eq!(report.objective_trace.len(), report.iterations + 1);
    assert_eq!(report.gradnorm_trace.len(), report.iterations + 1);
    assert_eq!(report.step_trace.len(), report.iterations + 1);
    assert_eq!(report.feasibility_trace.len(), report.iterations + 1);
    assert!(report.feasibility_trace.iter().all(|&r| r < 1e-8));
}

#[test]
fn classic_two_by_two_approaches_matching() {
    let space = CouplingSpace::new(DVector::from_element(2, 1.0), DVector::from_element(2, 1.0)).unwrap();
    let c = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
    let pb = ProblemInstance::classic(space.clone(), c).unwrap();
    let cfg = SolverConfig { max_iter: 2000, ..Default::default() };
    let report = rgd(&pb, &space.independence_point(), &cfg).unwrap();
    assert!(report.final_objective() < 0.02, "{}", report.final_objective());
    for w in report.objective_trace.windows(2) {
        assert!(w[1] <= w[0]);
    }
    assert_feasible_trace(&pb, &report);
}

#[test]
fn entropic_rgd_matches_sinkhorn() {
    let pb = synthetic_entropic(1.0);
    let report = rgd(&pb, &pb.space().independence_point(), &SolverConfig::default()).unwrap();
    assert_eq!(report.status, SolverStatus::Converged);
    let (p, q, c) = synthetic_instance();
    let sk = sinkhorn_entropic(&c, &p, &q, 1.0, &SinkhornOptions::default()).unwrap();
    assert!(plan_mse(report.final_point.matrix(), &sk.plan).unwrap() < 1e-6);
    assert_feasible_trace(&pb, &report);
}

#[test]
fn constant_cost_starts_converged() {
    let space = CouplingSpace::uniform(4, 3).unwrap();
    let pb = ProblemInstance::classic(space.clone(), DMatrix::from_element(4, 3, 2.5)).unwrap();
    for kind in [SolverKind::Rgd, SolverKind::Rtr] {
        let report = solve(kind, &pb, &space.independence_point(), &SolverConfig::default()).unwrap();
        assert_eq!(report.status, SolverStatus::Converged);
        assert!(report.iterations <= 2, "{kind}: {}", report.iterations);
    }
}

#[test]
fn start_at_optimum_converges_immediately() {
    let pb = synthetic_entropic(1.0);
    let x0 = pb.space().independence_point();
    let first = rtr(&pb, &x0, &SolverConfig::default()).unwrap();
    for kind in [SolverKind::Rgd, SolverKind::Rtr] {
        let again = solve(kind, &pb, &first.final_point, &SolverConfig::default()).unwrap();
        assert_eq!(again.status, SolverStatus::Converged);
        assert!(again.iterations <= 1, "{kind}: {}", again.iterations);
    }
}

#[test]
fn rtr_and_rgd_agree_on_entropic() {
    for lambda in [0.3, 1.0, 5.0] {
        let pb = synthetic_entropic(lambda);
        let x0 = pb.space().independence_point();
        let a = rgd(&pb, &x0, &SolverConfig::default()).unwrap();
        let b = rtr(&pb, &x0, &SolverConfig::default()).unwrap();
        assert_eq!(a.status, SolverStatus::Converged);
        assert_eq!(b.status, SolverStatus::Converged);
        assert!((a.final_objective() - b.final_objective()).abs() < 1e-8, "lambda {lambda}");
        assert_feasible_trace(&pb, &b);
    }
}

#[test]
fn rtr_tail_is_superlinear_on_squared_problem() {
    let (p, q, c) = synthetic_instance();
    let space = CouplingSpace::new(p, q).unwrap();
    let pb = ProblemInstance::squared(space.clone(), c, 0.5).unwrap();
    let cfg = SolverConfig { grad_tol: 1e-9, ..Default::default() };
    let report = rtr(&pb, &space.independence_point(), &cfg).unwrap();
    assert_eq!(report.status, SolverStatus::Converged);
    let g = &report.gradnorm_trace;
    assert!(g.len() >= 4);
    let k = g.len();
    let r1 = g[k - 2] / g[k - 3];
    let r2 = g[k - 1] / g[k - 2];
    assert!(r2 < r1, "ratios {r1:e} {r2:e} trace {g:?}");
}

#[test]
fn accepted_steps_satisfy_armijo() {
    let pb = synthetic_entropic(0.3);
    let cfg = SolverConfig::default();
    let report = rgd(&pb, &pb.space().independence_point(), &cfg).unwrap();
    for i in 1..report.objective_trace.len() {
        let f0 = report.objective_trace[i - 1];
        let g0 = report.gradnorm_trace[i - 1];
        let a = report.step_trace[i];
        assert!(report.objective_trace[i] <= f0 - cfg.armijo_c * a * g0 * g0 + 1e-12 * f0.abs().max(1.0));
    }
}

#[test]
fn adaptive_step_rule_reaches_same_optimum() {
    let pb = synthetic_entropic(0.3);
    let x0 = pb.space().independence_point();
    let plain = rgd(&pb, &x0, &SolverConfig::default()).unwrap();
    let cfg = SolverConfig { step_rule: StepRule::AdaptiveArmijo, ..Default::default() };
    let adaptive = rgd(&pb, &x0, &cfg).unwrap();
    assert_eq!(adaptive.status, SolverStatus::Converged);
    assert!((plain.final_objective() - adaptive.final_objective()).abs() < 1e-8);
}

#[test]
fn solvers_are_deterministic() {
    let pb = synthetic_entropic(0.5);
    let x0 = pb.space().independence_point();
    for kind in [SolverKind::Rgd, SolverKind::Rtr] {
        let a = solve(kind, &pb, &x0, &SolverConfig::default()).unwrap();
        let b = solve(kind, &pb, &x0, &SolverConfig::default()).unwrap();
        assert_eq!(a.objective_trace, b.objective_trace);
        assert_eq!(a.gradnorm_trace, b.gradnorm_trace);
        assert_eq!(a.final_point.matrix(), b.final_point.matrix());
    }
}

#[test]
fn derivative_checks_on_synthetic_instance() {
    let (p, q, c) = synthetic_instance();
    let space = CouplingSpace::new(p, q).unwrap();
    let x0 = space.independence_point();
    let classic = ProblemInstance::classic(space.clone(), c.clone()).unwrap();
    let d = check_derivatives(&classic, &x0, 10, 3);
    assert!(d.failures.is_empty());
    assert_eq!(d.directions_checked, 10);
    assert!(d.gradient_max_rel_error < 1e-6, "{}", d.gradient_max_rel_error);

    let entropic = ProblemInstance::entropic(space, c, 1.0).unwrap();
    let d = check_derivatives(&entropic, &x0, 10, 4);
    assert!(d.failures.is_empty());
    assert!(d.hessian_max_rel_error < 1e-4, "{}", d.hessian_max_rel_error);
}

#[test]
fn derivative_check_skips_zero_directions() {
    let pb = synthetic_entropic(1.0);
    let x0 = pb.space().independence_point();
    let dirs = vec![DMatrix::zeros(8, 5), x0.matrix().clone()];
    let d = cmm::solvers::check_derivatives_along(&pb, &x0, &dirs);
    assert_eq!(d.zero_directions_skipped, 2);
    assert_eq!(d.directions_checked, 0);
}

#[test]
fn report_serializes() {
    let pb = synthetic_entropic(1.0);
    let report = rgd(&pb, &pb.space().independence_point(), &SolverConfig::default()).unwrap();
    let json: serde_json::Value = serde_json::from_str(&report.to_json().unwrap()).unwrap();
    assert_eq!(json["status"], "converged");
    let mut buf = Vec::new();
    report.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("iteration,objective,gradnorm,step"));
    assert_eq!(text.lines().count(), report.iterations + 2);
}

#[test]
fn config_rejects_bad_fields() {
    let err = SolverConfig::from_json(r#"{"armijo_c": 2.0}"#).unwrap_err();
    assert!(err.to_string().contains("armijo_c"));
    assert!(SolverConfig::from_json(r#"{"bogus": 1}"#).is_err());
    let cfg = SolverConfig::from_json(r#"{"max_iter": 10, "step_rule": "adaptive_armijo"}"#).unwrap();
    assert_eq!(cfg.max_iter, 10);
    assert_eq!(cfg.step_rule, StepRule::AdaptiveArmijo);
}
