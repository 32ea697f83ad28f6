//! Experiment harnesses: regularizer sweep against Sinkhorn, order-preserving
//! distance and two-moons domain adaptation.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{sinkhorn_entropic, SinkhornOptions, SinkhornStatus};
use crate::dataops::{self, LabeledPointSet};
use crate::error::{Error, Result};
use crate::manifold::{CouplingPoint, CouplingSpace};
use crate::par::{self, Execution};
use crate::problems::{Objective, ProblemInstance};
use crate::solvers::{solve, SolverConfig, SolverKind, SolverReport, SolverStatus};

/// The 8 × 5 synthetic transport instance: marginals and cost.
pub fn synthetic_instance() -> (DVector<f64>, DVector<f64>, DMatrix<f64>) {
    let p = DVector::from_column_slice(&[3., 3., 3., 4., 2., 2., 2., 1.]);
    let q = DVector::from_column_slice(&[4., 2., 6., 4., 4.]);
    #[rustfmt::skip]
    let c = DMatrix::from_row_slice(8, 5, &[
        0., 0., 1.2, 2., 2.,
        2., 4., 4., 4., 0.,
        1., 0., 0., 0., 3.,
        0., 1., 2., 1., 3.,
        1., 1., 0., 1., 2.,
        2., 1., 2., 0.8, 3.,
        4., 0., 0., 1., 1.,
        0., 1., 0., 1., 3.,
    ]);
    (p, q, c)
}

/// Optimal transport cost of [`synthetic_instance`].
pub const SYNTHETIC_LP_OPTIMUM: f64 = 3.6;

/// `count` points spaced evenly in log scale over `[lo, hi]`, ascending.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.log10(), hi.log10());
            (0..count)
                .map(|k| 10f64.powf(a + (b - a) * k as f64 / (count - 1) as f64))
                .collect()
        }
    }
}

/// Default regularizer grid: 100 log-spaced values in `[1e-3, 1e2]`.
pub fn default_lambda_grid() -> Vec<f64> {
    log_grid(1e-3, 1e2, 100)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CmmStatus {
    /// A feasible plan was returned.
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub lambda: f64,
    /// `plan_mse(CMM, Sinkhorn)`, present when both produced a plan.
    pub mse: Option<f64>,
    pub sinkhorn_status: SinkhornStatus,
    pub cmm_status: CmmStatus,
    pub cmm_termination: Option<SolverStatus>,
    pub cmm_iterations: usize,
    pub cmm_seconds: f64,
    pub sinkhorn_seconds: f64,
    pub message: Option<String>,
}

/// Solves the entropic problem on `(p, q, C)` for each `λ` with the manifold
/// solver and with Sinkhorn, in grid order.
#[allow(clippy::too_many_arguments)]
pub fn sweep_lambda(
    p: &DVector<f64>,
    q: &DVector<f64>,
    c: &DMatrix<f64>,
    lambdas: &[f64],
    kind: SolverKind,
    cfg: &SolverConfig,
    sinkhorn: &SinkhornOptions,
    exec: Execution,
) -> Result<Vec<SweepRow>> {
    let space = CouplingSpace::new(p.clone(), q.clone())?;
    let x0 = space.independence_point();
    Ok(par::map_indexed(lambdas, exec, |_, &lambda| {
        sweep_cell(&space, &x0, c, lambda, kind, cfg, sinkhorn)
    }))
}

fn sweep_cell(
    space: &std::sync::Arc<CouplingSpace>,
    x0: &CouplingPoint,
    c: &DMatrix<f64>,
    lambda: f64,
    kind: SolverKind,
    cfg: &SolverConfig,
    sinkhorn: &SinkhornOptions,
) -> SweepRow {
    let t = Instant::now();
    let report = ProblemInstance::entropic(space.clone(), c.clone(), lambda).and_then(|pb| solve(kind, &pb, x0, cfg));
    let cmm_seconds = t.elapsed().as_secs_f64();
    let t = Instant::now();
    let sk = sinkhorn_entropic(c, space.p(), space.q(), lambda, sinkhorn);
    let sinkhorn_seconds = t.elapsed().as_secs_f64();
    let mut message = None;
    let sinkhorn_status = match &sk {
        Ok(r) => r.status,
        Err(e) => {
            message = Some(e.to_string());
            SinkhornStatus::Unstable
        }
    };
    let (cmm_status, cmm_termination, cmm_iterations) = match &report {
        Ok(r) => (CmmStatus::Ok, Some(r.status), r.iterations),
        Err(e) => {
            message = Some(e.to_string());
            (CmmStatus::Failed, None, 0)
        }
    };
    let mse = match (&report, &sk) {
        (Ok(r), Ok(s)) if s.status == SinkhornStatus::Ok => dataops::plan_mse(r.final_point.matrix(), &s.plan).ok(),
        _ => None,
    };
    SweepRow {
        lambda,
        mse,
        sinkhorn_status,
        cmm_status,
        cmm_termination,
        cmm_iterations,
        cmm_seconds,
        sinkhorn_seconds,
        message,
    }
}

/// Writes sweep rows as CSV. Empty fields mark missing values.
pub fn write_sweep_csv<W: std::io::Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = crate::solvers::csv_err;
    w.write_record([
        "lambda",
        "mse",
        "sinkhorn_status",
        "cmm_status",
        "cmm_termination",
        "cmm_iterations",
        "cmm_seconds",
        "sinkhorn_seconds",
    ])
    .map_err(err)?;
    for r in rows {
        w.write_record([
            format!("{:e}", r.lambda),
            r.mse.map(|v| format!("{v:e}")).unwrap_or_default(),
            r.sinkhorn_status.to_string(),
            match r.cmm_status {
                CmmStatus::Ok => "ok".into(),
                CmmStatus::Failed => "failed".into(),
            },
            r.cmm_termination.map(|s| s.to_string()).unwrap_or_default(),
            r.cmm_iterations.to_string(),
            format!("{:e}", r.cmm_seconds),
            format!("{:e}", r.sinkhorn_seconds),
        ])
        .map_err(err)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OpwParams {
    pub sigma: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    /// Divide the cost by its largest entry before solving.
    pub normalize_cost: bool,
}

impl Default for OpwParams {
    fn default() -> Self {
        OpwParams {
            sigma: 1.0,
            lambda1: 50.0,
            lambda2: 0.1,
            normalize_cost: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OpwResult {
    /// `Tr(Cᵀ X*)` with the unnormalized cost.
    pub distance: f64,
    pub report: SolverReport,
}

/// Order-preserving distance between two sequences (one step per row).
pub fn opw_distance(
    u: &DMatrix<f64>,
    v: &DMatrix<f64>,
    params: &OpwParams,
    kind: SolverKind,
    cfg: &SolverConfig,
) -> Result<OpwResult> {
    let mut pb = ProblemInstance::order_preserving(u, v, params.sigma, params.lambda1, params.lambda2)?;
    let raw = pb.cost().clone();
    let cmax = raw.amax();
    if params.normalize_cost && cmax > 0.0 {
        pb = pb.scale_cost(1.0 / cmax)?;
    }
    let x0 = pb.space().independence_point();
    let report = solve(kind, &pb, &x0, cfg)?;
    let distance = raw.component_mul(report.final_point.matrix()).sum();
    Ok(OpwResult { distance, report })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DomainAdaptConfig {
    /// Source and target points per class.
    pub n_per_class: usize,
    /// Held-out target points per class.
    pub n_test_per_class: usize,
    pub noise_std: f64,
    pub lambda: f64,
    pub laplacian_weight: f64,
    pub laplacian_mix: f64,
    pub graph_neighbors: usize,
    /// Gaussian kernel width of the similarity graph; median distance when absent.
    pub kernel_width: Option<f64>,
    pub classifier_k: usize,
    /// Divide the cost by its largest entry.
    pub normalize_cost: bool,
    pub trials: usize,
}

impl Default for DomainAdaptConfig {
    fn default() -> Self {
        DomainAdaptConfig {
            n_per_class: 75,
            n_test_per_class: 500,
            noise_std: 0.1,
            lambda: 0.002,
            laplacian_weight: 30.0,
            laplacian_mix: 0.0,
            graph_neighbors: 5,
            kernel_width: None,
            classifier_k: 5,
            normalize_cost: true,
            trials: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialOutcome {
    pub angle: f64,
    pub trial: usize,
    pub seed: u64,
    /// Error of the classifier trained on transported source points.
    pub adapted_error: Option<f64>,
    /// Error of the classifier trained on the raw source points.
    pub baseline_error: f64,
    pub solver_status: Option<SolverStatus>,
    pub iterations: usize,
    pub message: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AngleSummary {
    pub angle: f64,
    pub mean_error: f64,
    pub var_error: f64,
    pub baseline_mean: f64,
    pub baseline_var: f64,
    pub completed: usize,
    pub failed: usize,
}

/// Mean and population variance; NaN for an empty slice.
fn mean_var(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    (mean, v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n)
}

impl DomainAdaptConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_per_class < 2 || self.n_test_per_class == 0 {
            return Err(Error::param("n_per_class", "need at least 2 training and 1 test point per class"));
        }
        if self.trials == 0 {
            return Err(Error::param("trials", "must be at least 1"));
        }
        if self.classifier_k == 0 {
            return Err(Error::param("classifier_k", "must be at least 1"));
        }
        if self.graph_neighbors == 0 {
            return Err(Error::param("graph_neighbors", "must be at least 1"));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::param("lambda", "must be positive"));
        }
        if !(self.laplacian_weight >= 0.0 && self.laplacian_weight.is_finite()) {
            return Err(Error::param("laplacian_weight", "must be nonnegative"));
        }
        if !(0.0..=1.0).contains(&self.laplacian_mix) {
            return Err(Error::param("laplacian_mix", "must lie in [0, 1]"));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::param("noise_std", "must be nonnegative"));
        }
        Ok(())
    }

    /// Builds the Laplacian-regularized problem between a labeled source and
    /// an unlabeled target.
    pub fn problem(&self, source: &LabeledPointSet, target: &DMatrix<f64>) -> Result<ProblemInstance> {
        let ls = dataops::class_laplacian(source, self.graph_neighbors, self.kernel_width)?;
        let lt = if self.laplacian_mix > 0.0 {
            let unlabeled = LabeledPointSet::new(target.clone(), vec![0; target.nrows()])?;
            dataops::class_laplacian(&unlabeled, self.graph_neighbors, self.kernel_width)?
        } else {
            DMatrix::zeros(target.nrows(), target.nrows())
        };
        let pb = ProblemInstance::laplacian_da(
            source.features(),
            target,
            self.lambda,
            self.laplacian_weight,
            self.laplacian_mix,
            ls,
            lt,
            None,
        )?;
        let cmax = pb.cost().amax();
        if self.normalize_cost && cmax > 0.0 {
            pb.scale_cost(1.0 / cmax)
        } else {
            Ok(pb)
        }
    }
}

/// One domain-adaptation trial at `angle` degrees.
pub fn domain_adapt_trial(
    cfg: &DomainAdaptConfig,
    kind: SolverKind,
    solver: &SolverConfig,
    angle: f64,
    trial: usize,
    seed: u64,
) -> Result<TrialOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let source = dataops::two_moons(cfg.n_per_class, 0.0, cfg.noise_std, rng.random())?;
    let target = dataops::two_moons(cfg.n_per_class, angle, cfg.noise_std, rng.random())?;
    let test = dataops::two_moons(cfg.n_test_per_class, angle, cfg.noise_std, rng.random())?;

    let baseline = dataops::knn_classify(&source, test.features(), cfg.classifier_k)?;
    let baseline_error = dataops::error_rate(&baseline, test.labels())?;

    let mut outcome = TrialOutcome {
        angle,
        trial,
        seed,
        adapted_error: None,
        baseline_error,
        solver_status: None,
        iterations: 0,
        message: None,
    };
    let pb = cfg.problem(&source, target.features())?;
    let x0 = pb.space().independence_point();
    match solve(kind, &pb, &x0, solver) {
        Ok(report) => {
            let moved = dataops::barycentric_map(&report.final_point, target.features())?;
            let adapted = LabeledPointSet::new(moved, source.labels().to_vec())?;
            let pred = dataops::knn_classify(&adapted, test.features(), cfg.classifier_k)?;
            outcome.adapted_error = Some(dataops::error_rate(&pred, test.labels())?);
            outcome.solver_status = Some(report.status);
            outcome.iterations = report.iterations;
            outcome.message = report.message;
        }
        Err(e) => outcome.message = Some(e.to_string()),
    }
    Ok(outcome)
}

/// Per-cell seed: the `cell`-th output of a generator seeded with `seed`.
pub fn cell_seed(seed: u64, cell: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(cell as u64);
    rng.random()
}

/// Runs `cfg.trials` trials per angle and summarizes them in angle order.
pub fn domain_adapt(
    cfg: &DomainAdaptConfig,
    kind: SolverKind,
    solver: &SolverConfig,
    angles: &[f64],
    seed: u64,
    exec: Execution,
) -> Result<(Vec<AngleSummary>, Vec<TrialOutcome>)> {
    cfg.validate()?;
    let cells: Vec<(f64, usize)> = angles
        .iter()
        .flat_map(|&a| (0..cfg.trials).map(move |t| (a, t)))
        .collect();
    let outcomes = par::map_indexed(&cells, exec, |idx, &(angle, trial)| {
        let s = cell_seed(seed, idx);
        domain_adapt_trial(cfg, kind, solver, angle, trial, s)
    });
    let outcomes: Vec<TrialOutcome> = outcomes.into_iter().collect::<Result<_>>()?;
    let summaries = angles
        .iter()
        .map(|&angle| {
            let cell: Vec<&TrialOutcome> = outcomes.iter().filter(|o| o.angle == angle).collect();
            let adapted: Vec<f64> = cell.iter().filter_map(|o| o.adapted_error).collect();
            let base: Vec<f64> = cell.iter().map(|o| o.baseline_error).collect();
            let (mean_error, var_error) = mean_var(&adapted);
            let (baseline_mean, baseline_var) = mean_var(&base);
            AngleSummary {
                angle,
                mean_error,
                var_error,
                baseline_mean,
                baseline_var,
                completed: adapted.len(),
                failed: cell.len() - adapted.len(),
            }
        })
        .collect();
    Ok((summaries, outcomes))
}
