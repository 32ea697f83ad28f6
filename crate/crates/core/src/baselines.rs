//! Reference solvers: entropic Sinkhorn, the exact transportation simplex and
//! the north-west corner rule.

use std::collections::VecDeque;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

fn check_marginals(p: &DVector<f64>, q: &DVector<f64>) -> Result<()> {
    if p.is_empty() || q.is_empty() {
        return Err(Error::InvalidMarginals("marginals must be nonempty".into()));
    }
    if p.iter().chain(q.iter()).any(|v| !(*v >= 0.0 && v.is_finite())) {
        return Err(Error::InvalidMarginals("entries must be finite and nonnegative".into()));
    }
    Ok(())
}

fn coupled(p: &DVector<f64>, q: &DVector<f64>) -> bool {
    let (sp, sq) = (p.sum(), q.sum());
    (sp - sq).abs() <= 1e-9 * sp.max(sq).max(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SinkhornDomain {
    /// Multiplicative scalings of `K = exp(−C/λ)`.
    Scaling,
    /// Log-sum-exp updates of the dual potentials. Diagnostic only.
    Log,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SinkhornStatus {
    Ok,
    /// `K` underflowed to exact zeros or a scaling left the positive reals.
    Unstable,
    NotConverged,
}

impl fmt::Display for SinkhornStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SinkhornStatus::Ok => "ok",
            SinkhornStatus::Unstable => "unstable",
            SinkhornStatus::NotConverged => "not_converged",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SinkhornOptions {
    /// Bound on the largest absolute marginal residual.
    pub tol: f64,
    pub max_iter: usize,
    pub domain: SinkhornDomain,
}

impl Default for SinkhornOptions {
    fn default() -> Self {
        SinkhornOptions {
            tol: 1e-12,
            max_iter: 100_000,
            domain: SinkhornDomain::Scaling,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SinkhornResult {
    /// `diag(μ) K diag(ν)`; the last finite iterate when unstable.
    pub plan: DMatrix<f64>,
    pub mu: DVector<f64>,
    pub nu: DVector<f64>,
    pub iterations: usize,
    pub residual: f64,
    pub status: SinkhornStatus,
}

/// Entropic OT plan `diag(μ) exp(−C/λ) diag(ν)` by Sinkhorn-Knopp iterations.
pub fn sinkhorn_entropic(
    c: &DMatrix<f64>,
    p: &DVector<f64>,
    q: &DVector<f64>,
    lambda: f64,
    opts: &SinkhornOptions,
) -> Result<SinkhornResult> {
    check_marginals(p, q)?;
    linalg::check_shape("cost matrix", c, (p.len(), q.len()))?;
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::param("lambda", format!("must be positive, got {lambda}")));
    }
    if !coupled(p, q) {
        return Err(Error::InvalidMarginals(format!("sum(p) = {} but sum(q) = {}", p.sum(), q.sum())));
    }
    match opts.domain {
        SinkhornDomain::Scaling => sinkhorn_scaling(c, p, q, lambda, opts),
        SinkhornDomain::Log => sinkhorn_log(c, p, q, lambda, opts),
    }
}

fn residual(plan: &DMatrix<f64>, p: &DVector<f64>, q: &DVector<f64>) -> f64 {
    (linalg::row_sums(plan) - p).amax().max((linalg::col_sums(plan) - q).amax())
}

fn sinkhorn_scaling(
    c: &DMatrix<f64>,
    p: &DVector<f64>,
    q: &DVector<f64>,
    lambda: f64,
    opts: &SinkhornOptions,
) -> Result<SinkhornResult> {
    let k = c.map(|v| (-v / lambda).exp());
    let mut mu = DVector::from_element(p.len(), 1.0);
    let mut nu = DVector::from_element(q.len(), 1.0);
    let healthy = |v: &DVector<f64>| v.iter().all(|x| *x > 0.0 && x.is_finite());
    let finish = |mu: DVector<f64>, nu: DVector<f64>, iterations: usize, status: SinkhornStatus| {
        let plan = linalg::scale_rows_cols(&k, &mu, &nu);
        let residual = residual(&plan, p, q);
        SinkhornResult { plan, mu, nu, iterations, residual, status }
    };
    if k.iter().any(|v| *v == 0.0) {
        return Ok(finish(mu, nu, 0, SinkhornStatus::Unstable));
    }
    for it in 1..=opts.max_iter {
        let nu_next = q.component_div(&k.tr_mul(&mu));
        let mu_next = p.component_div(&(&k * &nu_next));
        if !healthy(&nu_next) || !healthy(&mu_next) {
            return Ok(finish(mu, nu, it, SinkhornStatus::Unstable));
        }
        mu = mu_next;
        nu = nu_next;
        // rows are exact after the μ update
        let col_res = (k.tr_mul(&mu).component_mul(&nu) - q).amax();
        if col_res <= opts.tol {
            return Ok(finish(mu, nu, it, SinkhornStatus::Ok));
        }
    }
    Ok(finish(mu, nu, opts.max_iter, SinkhornStatus::NotConverged))
}

fn logsumexp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn sinkhorn_log(
    c: &DMatrix<f64>,
    p: &DVector<f64>,
    q: &DVector<f64>,
    lambda: f64,
    opts: &SinkhornOptions,
) -> Result<SinkhornResult> {
    let (n, m) = c.shape();
    let (log_p, log_q) = (p.map(f64::ln), q.map(f64::ln));
    let mut f = DVector::zeros(n);
    let mut g = DVector::zeros(m);
    let plan_of = |f: &DVector<f64>, g: &DVector<f64>| {
        DMatrix::from_fn(n, m, |i, j| ((f[i] + g[j] - c[(i, j)]) / lambda).exp())
    };
    let mut status = SinkhornStatus::NotConverged;
    let mut iterations = opts.max_iter;
    for it in 1..=opts.max_iter {
        for j in 0..m {
            g[j] = lambda * (log_q[j] - logsumexp((0..n).map(|i| (f[i] - c[(i, j)]) / lambda)));
        }
        for i in 0..n {
            f[i] = lambda * (log_p[i] - logsumexp((0..m).map(|j| (g[j] - c[(i, j)]) / lambda)));
        }
        if (linalg::col_sums(&plan_of(&f, &g)) - q).amax() <= opts.tol {
            status = SinkhornStatus::Ok;
            iterations = it;
            break;
        }
    }
    let plan = plan_of(&f, &g);
    let residual = residual(&plan, p, q);
    Ok(SinkhornResult {
        plan,
        mu: f.map(|v| (v / lambda).exp()),
        nu: g.map(|v| (v / lambda).exp()),
        iterations,
        residual,
        status,
    })
}

/// Greedy feasible plan filled from the top-left corner, with the basic
/// cells it visits (exactly `n + m − 1`, possibly carrying zero mass).
fn north_west_corner_basis(p: &DVector<f64>, q: &DVector<f64>) -> (DMatrix<f64>, Vec<(usize, usize)>) {
    let (n, m) = (p.len(), q.len());
    let mut plan = DMatrix::zeros(n, m);
    let mut basis = Vec::with_capacity(n + m - 1);
    let (mut supply, mut demand) = (p.clone(), q.clone());
    let (mut i, mut j) = (0, 0);
    loop {
        let x = supply[i].min(demand[j]);
        plan[(i, j)] = x;
        basis.push((i, j));
        supply[i] -= x;
        demand[j] -= x;
        if i == n - 1 && j == m - 1 {
            break;
        }
        if j == m - 1 || (i < n - 1 && supply[i] == 0.0) {
            i += 1;
        } else {
            j += 1;
        }
    }
    // absorb floating slack into the last cell so the marginals match
    plan[(n - 1, m - 1)] += supply[n - 1].max(0.0);
    (plan, basis)
}

/// Feasible plan from the north-west corner rule.
pub fn north_west_corner(p: &DVector<f64>, q: &DVector<f64>) -> Result<DMatrix<f64>> {
    check_marginals(p, q)?;
    if !coupled(p, q) {
        return Err(Error::InvalidMarginals(format!("sum(p) = {} but sum(q) = {}", p.sum(), q.sum())));
    }
    Ok(north_west_corner_basis(p, q).0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LpStatus {
    Optimal,
    Infeasible,
}

impl fmt::Display for LpStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LpStatus::Optimal => "optimal",
            LpStatus::Infeasible => "infeasible",
        })
    }
}

#[derive(Debug, Clone)]
pub struct LpResult {
    pub plan: DMatrix<f64>,
    pub cost: f64,
    pub status: LpStatus,
    /// Dual potentials with `u_i + v_j = C_ij` on basic cells.
    pub u: DVector<f64>,
    pub v: DVector<f64>,
    pub basis: Vec<(usize, usize)>,
    pub pivots: usize,
}

impl LpResult {
    /// `C_ij − u_i − v_j`; nonnegative everywhere at an optimal basis.
    pub fn reduced_costs(&self, c: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(c.nrows(), c.ncols(), |i, j| c[(i, j)] - self.u[i] - self.v[j])
    }
}

/// Potentials from the spanning-tree basis, anchored at `u_0 = 0`.
fn potentials(c: &DMatrix<f64>, adj: &[Vec<usize>], n: usize) -> (DVector<f64>, DVector<f64>) {
    let m = c.ncols();
    let mut val = vec![f64::NAN; n + m];
    val[0] = 0.0;
    let mut queue = VecDeque::from([0]);
    while let Some(a) = queue.pop_front() {
        for &b in &adj[a] {
            if val[b].is_nan() {
                let (i, j) = if a < n { (a, b - n) } else { (b, a - n) };
                val[b] = c[(i, j)] - val[a];
                queue.push_back(b);
            }
        }
    }
    (DVector::from_column_slice(&val[..n]), DVector::from_column_slice(&val[n..]))
}

/// Tree path from node `from` to node `to` as a node list.
fn tree_path(adj: &[Vec<usize>], from: usize, to: usize) -> Vec<usize> {
    let mut parent = vec![usize::MAX; adj.len()];
    parent[from] = from;
    let mut queue = VecDeque::from([from]);
    while let Some(a) = queue.pop_front() {
        if a == to {
            break;
        }
        for &b in &adj[a] {
            if parent[b] == usize::MAX {
                parent[b] = a;
                queue.push_back(b);
            }
        }
    }
    let mut path = vec![to];
    let mut cur = to;
    while cur != from {
        cur = parent[cur];
        path.push(cur);
    }
    path.reverse();
    path
}

/// Exact transportation LP `min Tr(Xᵀ C)` over `X ≥ 0, X1 = p, Xᵀ1 = q`,
/// by the transportation simplex seeded with the north-west corner rule.
pub fn lp_exact(c: &DMatrix<f64>, p: &DVector<f64>, q: &DVector<f64>) -> Result<LpResult> {
    check_marginals(p, q)?;
    let (n, m) = (p.len(), q.len());
    linalg::check_shape("cost matrix", c, (n, m))?;
    if c.iter().any(|v| !v.is_finite()) {
        return Err(Error::param("cost", "entries must be finite"));
    }
    if !coupled(p, q) {
        return Ok(LpResult {
            plan: DMatrix::zeros(n, m),
            cost: f64::INFINITY,
            status: LpStatus::Infeasible,
            u: DVector::zeros(n),
            v: DVector::zeros(m),
            basis: Vec::new(),
            pivots: 0,
        });
    }

    let (mut plan, mut basis) = north_west_corner_basis(p, q);
    let eps = 1e-12 * (1.0 + c.amax());
    let max_pivots = 50 * (n + m) * n.max(m) + 1000;
    let mut degenerate_run = 0;
    let mut pivots = 0;

    loop {
        let mut adj = vec![Vec::new(); n + m];
        for &(i, j) in &basis {
            adj[i].push(n + j);
            adj[n + j].push(i);
        }
        let (u, v) = potentials(c, &adj, n);
        // Dantzig's rule, switching to Bland's after a run of degenerate pivots
        let bland = degenerate_run > n + m;
        let mut entering = None;
        let mut best = -eps;
        'scan: for i in 0..n {
            for j in 0..m {
                let d = c[(i, j)] - u[i] - v[j];
                if d < best {
                    entering = Some((i, j));
                    if bland {
                        break 'scan;
                    }
                    best = d;
                }
            }
        }
        let Some((ei, ej)) = entering else {
            let cost = linalg::frob(&plan, c);
            return Ok(LpResult { plan, cost, status: LpStatus::Optimal, u, v, basis, pivots });
        };
        if pivots >= max_pivots {
            return Err(Error::param("lp_exact", format!("no optimal basis after {pivots} pivots")));
        }

        // cycle: entering cell, then the tree path from column ej back to row ei
        let path = tree_path(&adj, n + ej, ei);
        let cells: Vec<(usize, usize)> = path
            .windows(2)
            .map(|w| if w[0] < n { (w[0], w[1] - n) } else { (w[1], w[0] - n) })
            .collect();
        let mut leave_idx = None;
        let mut theta = f64::INFINITY;
        for (k, &(i, j)) in cells.iter().enumerate().step_by(2) {
            let x = plan[(i, j)];
            let better = match leave_idx {
                None => true,
                Some(l) => x < theta || (x == theta && cells[k] < cells[l]),
            };
            if better {
                theta = x;
                leave_idx = Some(k);
            }
        }
        let leave = cells[leave_idx.expect("cycle has a minus cell")];
        plan[(ei, ej)] += theta;
        for (k, &(i, j)) in cells.iter().enumerate() {
            if k % 2 == 0 {
                plan[(i, j)] -= theta;
            } else {
                plan[(i, j)] += theta;
            }
        }
        plan[leave] = 0.0;
        let slot = basis.iter().position(|&b| b == leave).expect("leaving cell is basic");
        basis[slot] = (ei, ej);
        degenerate_run = if theta == 0.0 { degenerate_run + 1 } else { 0 };
        pivots += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    #[test]
    fn nwc_examples() {
        assert_eq!(north_west_corner(&dv(&[1., 1.]), &dv(&[1., 1.])).unwrap(), DMatrix::identity(2, 2));
        let x = north_west_corner(&dv(&[3., 1.]), &dv(&[2., 2.])).unwrap();
        assert_eq!(x, DMatrix::from_row_slice(2, 2, &[2., 1., 0., 1.]));
        assert!(north_west_corner(&dv(&[1., 1.]), &dv(&[1., 2.])).is_err());
    }

    #[test]
    fn nwc_basis_size() {
        let (plan, basis) = north_west_corner_basis(&dv(&[3., 3., 3., 4., 2., 2., 2., 1.]), &dv(&[4., 2., 6., 4., 4.]));
        assert_eq!(basis.len(), 12);
        assert_eq!(linalg::row_sums(&plan), dv(&[3., 3., 3., 4., 2., 2., 2., 1.]));
        assert_eq!(linalg::col_sums(&plan), dv(&[4., 2., 6., 4., 4.]));
    }

    #[test]
    fn lp_zero_cost_matching() {
        let c = DMatrix::from_row_slice(2, 2, &[0., 1., 1., 0.]);
        let r = lp_exact(&c, &dv(&[1., 1.]), &dv(&[1., 1.])).unwrap();
        assert_eq!(r.status, LpStatus::Optimal);
        assert_eq!(r.cost, 0.0);
        assert_eq!(r.plan, DMatrix::identity(2, 2));
    }

    #[test]
    fn lp_anti_diagonal_preferred() {
        let c = DMatrix::from_row_slice(2, 2, &[1., 0., 0., 1.]);
        let r = lp_exact(&c, &dv(&[1., 1.]), &dv(&[1., 1.])).unwrap();
        assert_eq!(r.plan, DMatrix::from_row_slice(2, 2, &[0., 1., 1., 0.]));
        assert!(r.reduced_costs(&c).iter().all(|d| *d >= -1e-12));
    }

    #[test]
    fn lp_uncoupled_is_infeasible() {
        let r = lp_exact(&DMatrix::zeros(2, 2), &dv(&[1., 1.]), &dv(&[1., 2.])).unwrap();
        assert_eq!(r.status, LpStatus::Infeasible);
    }

    #[test]
    fn sinkhorn_zero_cost_is_independence() {
        let (p, q) = (dv(&[1., 2., 3.]), dv(&[4., 2.]));
        for lambda in [0.01, 1.0, 50.0] {
            let r = sinkhorn_entropic(&DMatrix::zeros(3, 2), &p, &q, lambda, &SinkhornOptions::default()).unwrap();
            assert_eq!(r.status, SinkhornStatus::Ok);
            assert!((r.plan - &p * q.transpose() / 6.0).amax() < 1e-14);
        }
    }

    #[test]
    fn sinkhorn_underflow_flagged() {
        let c = DMatrix::from_row_slice(2, 2, &[0., 10., 10., 0.]);
        let r = sinkhorn_entropic(&c, &dv(&[1., 1.]), &dv(&[1., 1.]), 1e-3, &SinkhornOptions::default()).unwrap();
        assert_eq!(r.status, SinkhornStatus::Unstable);
        let log = SinkhornOptions { domain: SinkhornDomain::Log, ..Default::default() };
        let r = sinkhorn_entropic(&c, &dv(&[1., 1.]), &dv(&[1., 1.]), 1e-3, &log).unwrap();
        assert_eq!(r.status, SinkhornStatus::Ok);
        assert!((r.plan - DMatrix::identity(2, 2)).amax() < 1e-12);
    }

    #[test]
    fn log_domain_matches_scaling_domain() {
        let c = DMatrix::from_fn(4, 3, |i, j| ((i * 3 + j) % 5) as f64 * 0.4);
        let (p, q) = (dv(&[0.1, 0.2, 0.3, 0.4]), dv(&[0.5, 0.25, 0.25]));
        let a = sinkhorn_entropic(&c, &p, &q, 0.3, &SinkhornOptions::default()).unwrap();
        let log = SinkhornOptions { domain: SinkhornDomain::Log, ..Default::default() };
        let b = sinkhorn_entropic(&c, &p, &q, 0.3, &log).unwrap();
        assert!((a.plan - b.plan).amax() < 1e-10);
    }
}
