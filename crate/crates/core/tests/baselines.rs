use cmm::baselines::{lp_exact, north_west_corner, sinkhorn_entropic, LpStatus, SinkhornOptions, SinkhornStatus};
use cmm::experiments::{synthetic_instance, SYNTHETIC_LP_OPTIMUM};
use cmm::manifold::CouplingSpace;
use cmm::problems::ProblemInstance;
use cmm::solvers::{rgd, SolverConfig, SolverStatus};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cost_of(c: &DMatrix<f64>, x: &DMatrix<f64>) -> f64 {
    c.component_mul(x).sum()
}

fn random_instance(rng: &mut ChaCha8Rng, n: usize, m: usize) -> (DVector<f64>, DVector<f64>, DMatrix<f64>) {
    let p = DVector::from_fn(n, |_, _| rng.random_range(0.2..2.0));
    let raw = DVector::from_fn(m, |_, _| rng.random_range(0.2..2.0));
    let q = &raw * (p.sum() / raw.sum());
    let c = DMatrix::from_fn(n, m, |_, _| rng.random_range(0.0..5.0));
    (p, q, c)
}

/// Smallest cost over all basic feasible solutions, found by trying every
/// set of `n + m − 1` cells.
fn enumerate_vertices(c: &DMatrix<f64>, p: &DVector<f64>, q: &DVector<f64>) -> f64 {
    let (n, m) = c.shape();
    let k = n + m - 1;
    let cells: Vec<(usize, usize)> = (0..n).flat_map(|i| (0..m).map(move |j| (i, j))).collect();
    let mut best = f64::INFINITY;
    let total = cells.len();
    for mask in 0u32..(1 << total) {
        if mask.count_ones() as usize != k {
            continue;
        }
        let chosen: Vec<(usize, usize)> = (0..total).filter(|b| mask >> b & 1 == 1).map(|b| cells[b]).collect();
        // Rows 0..n and columns 0..m−1; the last column constraint is implied.
        let a = DMatrix::from_fn(k, k, |r, s| {
            let (i, j) = chosen[s];
            if r < n {
                f64::from(u8::from(i == r))
            } else {
                f64::from(u8::from(j == r - n))
            }
        });
        let rhs = DVector::from_fn(k, |r, _| if r < n { p[r] } else { q[r - n] });
        let Some(sol) = a.lu().solve(&rhs) else { continue };
        if sol.iter().any(|&v| v < -1e-12 || !v.is_finite()) {
            continue;
        }
        let value: f64 = chosen.iter().zip(sol.iter()).map(|(&(i, j), v)| c[(i, j)] * v).sum();
        best = best.min(value);
    }
    best
}

#[test]
fn synthetic_lp_optimum_is_certified() {
    let (p, q, c) = synthetic_instance();
    let lp = lp_exact(&c, &p, &q).unwrap();
    assert_eq!(lp.status, LpStatus::Optimal);
    assert!((lp.cost - SYNTHETIC_LP_OPTIMUM).abs() < 1e-12, "{}", lp.cost);
    assert!(lp.reduced_costs(&c).min() > -1e-12);
    let dual = lp.u.dot(&p) + lp.v.dot(&q);
    assert!((dual - lp.cost).abs() < 1e-12, "dual {dual} primal {}", lp.cost);
    let nonzeros = lp.plan.iter().filter(|&&v| v > 0.0).count();
    assert!(nonzeros <= 8 + 5 - 1);
    assert!((lp.plan.row_sum().transpose() - &q).amax() < 1e-12);
    assert!((lp.plan.column_sum() - &p).amax() < 1e-12);
}

#[test]
fn lp_matches_vertex_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..20 {
        let (p, q, c) = random_instance(&mut rng, 3, 3);
        let lp = lp_exact(&c, &p, &q).unwrap();
        let best = enumerate_vertices(&c, &p, &q);
        assert!((lp.cost - best).abs() < 1e-10, "lp {} enumeration {best}", lp.cost);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for _ in 0..5 {
        let (p, q, c) = random_instance(&mut rng, 3, 4);
        let lp = lp_exact(&c, &p, &q).unwrap();
        assert!((lp.cost - enumerate_vertices(&c, &p, &q)).abs() < 1e-10);
    }
}

#[test]
fn lp_cost_bounds_every_feasible_plan() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for t in 0..50 {
        let (n, m) = (rng.random_range(2..=8), rng.random_range(2..=8));
        let (p, q, c) = random_instance(&mut rng, n, m);
        let lp = lp_exact(&c, &p, &q).unwrap();
        assert_eq!(lp.status, LpStatus::Optimal);
        assert!(lp.reduced_costs(&c).min() > -1e-10, "instance {t}");
        let space = CouplingSpace::new(p.clone(), q.clone()).unwrap();
        let seed = DMatrix::from_fn(n, m, |_, _| rng.random_range(0.1..3.0));
        let random_plan = space.sinkhorn_project(&seed, 1e-12, 100_000).unwrap().plan;
        let point = space.validate_point(random_plan).unwrap();
        let slack = 1e-9 * lp.cost.abs().max(1.0);
        assert!(lp.cost <= cost_of(&c, point.matrix()) + slack);
        assert!(lp.cost <= cost_of(&c, space.independence_point().matrix()) + slack);
        assert!(lp.cost <= cost_of(&c, &north_west_corner(&p, &q).unwrap()) + slack);
    }
}

#[test]
fn north_west_corner_is_feasible_and_sparse() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..20 {
        let (p, q, _) = random_instance(&mut rng, 6, 4);
        let x = north_west_corner(&p, &q).unwrap();
        assert!(x.min() >= 0.0);
        assert!((x.row_sum().transpose() - &q).amax() < 1e-12);
        assert!((x.column_sum() - &p).amax() < 1e-12);
        assert!(x.iter().filter(|&&v| v > 0.0).count() <= 6 + 4 - 1);
    }
}

#[test]
fn sinkhorn_converged_scaling_is_a_fixed_point() {
    let (p, q, c) = synthetic_instance();
    let opts = SinkhornOptions::default();
    let r = sinkhorn_entropic(&c, &p, &q, 1.0, &opts).unwrap();
    assert_eq!(r.status, SinkhornStatus::Ok);
    assert!(r.residual < 1e-10);
    let k = c.map(|v| (-v).exp());
    let mu = p.component_div(&(&k * &r.nu));
    let nu = q.component_div(&(k.transpose() * &mu));
    assert!((&mu - &r.mu).amax() <= opts.tol * r.mu.amax().max(1.0));
    assert!((&nu - &r.nu).amax() <= opts.tol * r.nu.amax().max(1.0));
}

#[test]
fn sinkhorn_breaks_down_at_tiny_regularization() {
    let (p, q, c) = synthetic_instance();
    let r = sinkhorn_entropic(&c, &p, &q, 1e-4, &SinkhornOptions::default()).unwrap();
    assert_eq!(r.status, SinkhornStatus::Unstable);
}

#[test]
fn manifold_solver_agrees_with_sinkhorn() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for lambda in [0.2, 1.0, 5.0] {
        for _ in 0..3 {
            let (p, q, c) = random_instance(&mut rng, 5, 5);
            let space = CouplingSpace::new(p.clone(), q.clone()).unwrap();
            let pb = ProblemInstance::entropic(space.clone(), c.clone(), lambda).unwrap();
            let report = rgd(&pb, &space.independence_point(), &SolverConfig::default()).unwrap();
            assert_eq!(report.status, SolverStatus::Converged, "lambda {lambda}");
            let sk = sinkhorn_entropic(&c, &p, &q, lambda, &SinkhornOptions::default()).unwrap();
            let diff = (report.final_point.matrix() - &sk.plan).amax();
            assert!(diff < 1e-5, "lambda {lambda}: {diff:e}");
        }
    }
}
