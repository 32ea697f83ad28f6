use cmm::baselines::{SinkhornOptions, SinkhornStatus};
use cmm::experiments::{
    domain_adapt, opw_distance, sweep_lambda, synthetic_instance, write_sweep_csv, CmmStatus, DomainAdaptConfig,
    OpwParams,
};
use cmm::par::Execution;
use cmm::solvers::{SolverConfig, SolverKind, SolverStatus};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn sequence(rng: &mut ChaCha8Rng, steps: usize, dim: usize) -> DMatrix<f64> {
    let mut s = DMatrix::zeros(steps, dim);
    for t in 0..steps {
        for d in 0..dim {
            let prev = if t == 0 { 0.0 } else { s[(t - 1, d)] };
            s[(t, d)] = prev + rng.sample::<f64, _>(StandardNormal);
        }
    }
    s
}

#[test]
fn order_preserving_distance_is_symmetric_and_prefers_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let params = OpwParams::default();
    let cfg = SolverConfig::default();
    let u = sequence(&mut rng, 10, 3);
    let v = sequence(&mut rng, 10, 3);
    let uv = opw_distance(&u, &v, &params, SolverKind::Rtr, &cfg).unwrap();
    let vu = opw_distance(&v, &u, &params, SolverKind::Rtr, &cfg).unwrap();
    assert!((uv.distance - vu.distance).abs() < 1e-6, "{} {}", uv.distance, vu.distance);
    assert_eq!(uv.report.status, SolverStatus::Converged);
    assert!(uv.report.feasibility_trace.iter().all(|&r| r < 1e-8));

    let same = opw_distance(&u, &u, &params, SolverKind::Rtr, &cfg).unwrap();
    let order = [7, 2, 9, 0, 4, 1, 8, 3, 6, 5];
    let shuffled = DMatrix::from_fn(10, 3, |t, d| u[(order[t], d)]);
    let other = opw_distance(&u, &shuffled, &params, SolverKind::Rtr, &cfg).unwrap();
    assert!(same.distance < other.distance, "{} {}", same.distance, other.distance);
}

#[test]
fn order_preserving_rejects_dimension_mismatch() {
    let u = DMatrix::zeros(4, 2);
    let v = DMatrix::zeros(4, 3);
    assert!(opw_distance(&u, &v, &OpwParams::default(), SolverKind::Rgd, &SolverConfig::default()).is_err());
    let empty = DMatrix::zeros(0, 2);
    assert!(opw_distance(&u, &empty, &OpwParams::default(), SolverKind::Rgd, &SolverConfig::default()).is_err());
}

#[test]
fn sweep_rows_follow_grid_order() {
    let (p, q, c) = synthetic_instance();
    let grid = [1e-4, 0.5, 1.0, 100.0];
    let rows = sweep_lambda(&p, &q, &c, &grid, SolverKind::Rgd, &SolverConfig::default(), &SinkhornOptions::default(), Execution::Parallel).unwrap();
    assert_eq!(rows.len(), grid.len());
    for (row, lambda) in rows.iter().zip(grid) {
        assert_eq!(row.lambda, lambda);
        assert_eq!(row.cmm_status, CmmStatus::Ok);
    }
    assert_eq!(rows[0].sinkhorn_status, SinkhornStatus::Unstable);
    assert!(rows[0].mse.is_none());
    for row in &rows[1..] {
        assert!(row.mse.unwrap() < 1e-6);
    }
    let mut buf = Vec::new();
    write_sweep_csv(&rows, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().count(), grid.len() + 1);
}

#[test]
fn sweep_is_identical_across_execution_modes() {
    let (p, q, c) = synthetic_instance();
    let grid = [0.3, 2.0, 7.0];
    let run = |exec| {
        sweep_lambda(&p, &q, &c, &grid, SolverKind::Rtr, &SolverConfig::default(), &SinkhornOptions::default(), exec).unwrap()
    };
    let a = run(Execution::Parallel);
    let b = run(Execution::Sequential);
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.mse, y.mse);
        assert_eq!(x.cmm_iterations, y.cmm_iterations);
    }
}

fn small_adaptation() -> DomainAdaptConfig {
    DomainAdaptConfig {
        n_per_class: 20,
        n_test_per_class: 50,
        trials: 2,
        ..Default::default()
    }
}

#[test]
fn domain_adaptation_is_deterministic() {
    let cfg = small_adaptation();
    let run = |exec| domain_adapt(&cfg, SolverKind::Rtr, &SolverConfig::default(), &[30.0, 70.0], 5, exec).unwrap();
    let (sa, oa) = run(Execution::Parallel);
    let (sb, ob) = run(Execution::Sequential);
    assert_eq!(sa, sb);
    assert_eq!(oa, ob);
    assert_eq!(oa.len(), 4);
    assert!(sa.iter().all(|s| s.completed == 2 && s.failed == 0));
}

#[test]
fn domain_adaptation_helps_at_large_angles() {
    let cfg = small_adaptation();
    let (summary, _) = domain_adapt(&cfg, SolverKind::Rtr, &SolverConfig::default(), &[70.0], 1, Execution::Parallel).unwrap();
    assert!(summary[0].mean_error < summary[0].baseline_mean);
}

#[test]
fn domain_adaptation_config_validation() {
    let bad = DomainAdaptConfig { classifier_k: 0, ..Default::default() };
    assert!(bad.validate().is_err());
    let bad = DomainAdaptConfig { lambda: -1.0, ..Default::default() };
    assert!(bad.validate().is_err());
    assert!(serde_json::from_str::<DomainAdaptConfig>(r#"{"lamda": 1.0}"#).is_err());
}
