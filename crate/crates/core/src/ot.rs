//! Assignment and transport solvers: Hungarian, Sinkhorn, the squared-loss
//! Gromov-Wasserstein term, and fused GW via Frank-Wolfe.
//!
//! All arithmetic is `f64`. Nothing here draws random numbers.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{dot, normalized};

/// Cross-set and intra-set cosine distances.
#[derive(Debug, Clone, PartialEq)]
pub struct CostBundle {
    pub d: DMatrix<f64>,
    pub dq: DMatrix<f64>,
    pub dc: DMatrix<f64>,
}

impl CostBundle {
    pub fn m(&self) -> usize {
        self.d.nrows()
    }

    pub fn n(&self) -> usize {
        self.d.ncols()
    }
}

fn unit_rows(set: &[Vec<f64>], what: &str) -> Result<Vec<Vec<f64>>> {
    if set.is_empty() {
        return Err(Error::Validation(format!("{what} set is empty")));
    }
    set.iter()
        .enumerate()
        .map(|(i, v)| {
            normalized(v).map_err(|_| Error::Degenerate(format!("{what} vector {i} is zero")))
        })
        .collect()
}

fn cos_dist(a: &[f64], b: &[f64]) -> f64 {
    (1.0 - dot(a, b)).clamp(0.0, 2.0)
}

fn pairwise(set: &[Vec<f64>]) -> DMatrix<f64> {
    let n = set.len();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let d = cos_dist(&set[i], &set[j]);
            m[(i, j)] = d;
            m[(j, i)] = d;
        }
    }
    m
}

pub fn cost_bundle(q: &[Vec<f64>], c: &[Vec<f64>]) -> Result<CostBundle> {
    let q = unit_rows(q, "query")?;
    let c = unit_rows(c, "candidate")?;
    if q[0].len() != c[0].len() {
        return Err(Error::DimensionMismatch {
            expected: q[0].len(),
            got: c[0].len(),
        });
    }
    let d = DMatrix::from_fn(q.len(), c.len(), |j, l| cos_dist(&q[j], &c[l]));
    Ok(CostBundle {
        d,
        dq: pairwise(&q),
        dc: pairwise(&c),
    })
}

/// Minimum-cost one-to-one assignment of `min(M, N)` pairs.
///
/// Returns the pairs sorted by row and the sum of their costs.
pub fn hungarian(cost: &DMatrix<f64>) -> Result<(Vec<(usize, usize)>, f64)> {
    if cost.iter().any(|x| !x.is_finite()) {
        return Err(Error::Validation("assignment costs must be finite".into()));
    }
    if cost.nrows() == 0 || cost.ncols() == 0 {
        return Ok((Vec::new(), 0.0));
    }
    let transposed = cost.nrows() > cost.ncols();
    let a = if transposed {
        cost.transpose()
    } else {
        cost.clone()
    };
    let cols = assign_rows(&a);
    let mut pairs: Vec<(usize, usize)> = cols
        .iter()
        .enumerate()
        .map(|(r, &c)| if transposed { (c, r) } else { (r, c) })
        .collect();
    pairs.sort_unstable();
    let total = pairs.iter().map(|&(r, c)| cost[(r, c)]).sum();
    Ok((pairs, total))
}

/// Shortest augmenting paths with potentials; requires rows <= cols.
/// Returns the column assigned to each row.
fn assign_rows(a: &DMatrix<f64>) -> Vec<usize> {
    let (n, m) = (a.nrows(), a.ncols());
    // 1-based arrays with a virtual column 0
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = a[(i0 - 1, j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![0usize; n];
    for j in 1..=m {
        if p[j] != 0 {
            out[p[j] - 1] = j - 1;
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SinkhornConfig {
    pub epsilon: f64,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        SinkhornConfig {
            epsilon: 0.05,
            max_iters: 1000,
            tol: 1e-6,
        }
    }
}

/// Below this epsilon the solver works with log-potentials from the start.
pub const LOG_DOMAIN_EPSILON: f64 = 1e-2;

impl SinkhornConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!(
                "sinkhorn epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("sinkhorn max_iters must be positive".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Config("sinkhorn tol must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FwConfig {
    pub beta: f64,
    pub sinkhorn: SinkhornConfig,
    pub max_iters: usize,
    pub rel_tol: f64,
}

pub const DEFAULT_BETA: f64 = 0.5;

impl Default for FwConfig {
    fn default() -> Self {
        FwConfig {
            beta: DEFAULT_BETA,
            sinkhorn: SinkhornConfig::default(),
            max_iters: 50,
            rel_tol: 1e-6,
        }
    }
}

impl FwConfig {
    pub fn with_beta(beta: f64) -> Self {
        FwConfig {
            beta,
            ..FwConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::Config(format!(
                "beta must lie in [0, 1], got {}",
                self.beta
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("frank-wolfe max_iters must be positive".into()));
        }
        if !(self.rel_tol > 0.0) {
            return Err(Error::Config("frank-wolfe rel_tol must be positive".into()));
        }
        self.sinkhorn.validate()
    }
}

/// Sinkhorn stopped at `max_iters` with marginal violation above `tol`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceWarning {
    pub violation: f64,
    pub iterations: usize,
}

impl std::fmt::Display for ConvergenceWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "sinkhorn did not converge: marginal violation {:.3e} after {} iterations",
            self.violation, self.iterations
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    pub t: DMatrix<f64>,
    pub mu: Vec<f64>,
    pub nu: Vec<f64>,
}

impl TransportPlan {
    pub fn product(mu: &[f64], nu: &[f64]) -> Self {
        TransportPlan {
            t: DMatrix::from_fn(mu.len(), nu.len(), |i, j| mu[i] * nu[j]),
            mu: mu.to_vec(),
            nu: nu.to_vec(),
        }
    }

    /// Largest absolute row or column marginal error.
    pub fn marginal_violation(&self) -> f64 {
        marginal_violation(&self.t, &self.mu, &self.nu)
    }

    /// Space-separated rows, one per line, in `{:e}` notation.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for i in 0..self.t.nrows() {
            let row: Vec<String> = (0..self.t.ncols())
                .map(|j| format!("{:e}", self.t[(i, j)]))
                .collect();
            writeln!(out, "{}", row.join(" ")).unwrap();
        }
        out
    }
}

fn marginal_violation(t: &DMatrix<f64>, mu: &[f64], nu: &[f64]) -> f64 {
    let mut worst = 0.0f64;
    for (i, m) in mu.iter().enumerate() {
        worst = worst.max((t.row(i).sum() - m).abs());
    }
    for (j, n) in nu.iter().enumerate() {
        worst = worst.max((t.column(j).sum() - n).abs());
    }
    worst
}

pub fn uniform(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

fn check_marginal(m: &[f64], len: usize, what: &str) -> Result<()> {
    if m.len() != len {
        return Err(Error::DimensionMismatch {
            expected: len,
            got: m.len(),
        });
    }
    if m.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
        return Err(Error::Validation(format!(
            "{what} marginal must be strictly positive"
        )));
    }
    let s: f64 = m.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(Error::Validation(format!(
            "{what} marginal sums to {s}, expected 1"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SinkhornResult {
    pub plan: TransportPlan,
    pub iterations: usize,
    pub warning: Option<ConvergenceWarning>,
}

/// Entropic OT. Uses scaling updates, switching to log-potentials for small
/// epsilon or when the scaling vectors leave the finite range.
pub fn sinkhorn(
    cost: &DMatrix<f64>,
    mu: &[f64],
    nu: &[f64],
    config: &SinkhornConfig,
) -> Result<SinkhornResult> {
    config.validate()?;
    check_marginal(mu, cost.nrows(), "row")?;
    check_marginal(nu, cost.ncols(), "column")?;
    if cost.iter().any(|x| !x.is_finite()) {
        return Err(Error::Validation("transport costs must be finite".into()));
    }
    let attempt = if config.epsilon > LOG_DOMAIN_EPSILON {
        sinkhorn_scaling(cost, mu, nu, config)
    } else {
        None
    };
    let (t, iterations) = match attempt {
        Some(r) => r,
        None => sinkhorn_log(cost, mu, nu, config),
    };
    let violation = marginal_violation(&t, mu, nu);
    let warning = (violation > config.tol).then_some(ConvergenceWarning {
        violation,
        iterations,
    });
    Ok(SinkhornResult {
        plan: TransportPlan {
            t,
            mu: mu.to_vec(),
            nu: nu.to_vec(),
        },
        iterations,
        warning,
    })
}

/// Returns `None` if any scaling factor stops being finite and positive.
fn sinkhorn_scaling(
    cost: &DMatrix<f64>,
    mu: &[f64],
    nu: &[f64],
    config: &SinkhornConfig,
) -> Option<(DMatrix<f64>, usize)> {
    let (m, n) = cost.shape();
    // shifting the cost by a constant leaves the plan unchanged
    let lo = cost.min();
    let k = cost.map(|c| (-(c - lo) / config.epsilon).exp());
    let mut u = DVector::from_element(m, 1.0);
    let mut v = DVector::from_element(n, 1.0);
    let mut iters = 0;
    while iters < config.max_iters {
        iters += 1;
        let kv = &k * &v;
        for i in 0..m {
            u[i] = mu[i] / kv[i];
        }
        let ktu = k.tr_mul(&u);
        for j in 0..n {
            v[j] = nu[j] / ktu[j];
        }
        if u.iter().chain(v.iter()).any(|x| !(x.is_finite() && *x > 0.0)) {
            return None;
        }
        // columns are exact after the v update; check rows
        let kv = &k * &v;
        let worst = (0..m)
            .map(|i| (u[i] * kv[i] - mu[i]).abs())
            .fold(0.0f64, f64::max);
        if worst <= config.tol {
            break;
        }
    }
    let t = DMatrix::from_fn(m, n, |i, j| u[i] * k[(i, j)] * v[j]);
    if t.iter().any(|x| !x.is_finite()) {
        return None;
    }
    Some((t, iters))
}

fn logsumexp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let hi = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if hi == f64::NEG_INFINITY {
        return hi;
    }
    hi + xs.map(|x| (x - hi).exp()).sum::<f64>().ln()
}

fn sinkhorn_log(
    cost: &DMatrix<f64>,
    mu: &[f64],
    nu: &[f64],
    config: &SinkhornConfig,
) -> (DMatrix<f64>, usize) {
    let (m, n) = cost.shape();
    let eps = config.epsilon;
    let log_mu: Vec<f64> = mu.iter().map(|x| x.ln()).collect();
    let log_nu: Vec<f64> = nu.iter().map(|x| x.ln()).collect();
    let mut f = vec![0.0f64; m];
    let mut g = vec![0.0f64; n];
    let plan = |f: &[f64], g: &[f64]| {
        DMatrix::from_fn(m, n, |i, j| ((f[i] + g[j] - cost[(i, j)]) / eps).exp())
    };
    let mut iters = 0;
    while iters < config.max_iters {
        iters += 1;
        for i in 0..m {
            let lse = logsumexp((0..n).map(|j| (g[j] - cost[(i, j)]) / eps));
            f[i] = eps * (log_mu[i] - lse);
        }
        for j in 0..n {
            let lse = logsumexp((0..m).map(|i| (f[i] - cost[(i, j)]) / eps));
            g[j] = eps * (log_nu[j] - lse);
        }
        let worst = (0..m)
            .map(|i| {
                let s: f64 = (0..n)
                    .map(|j| ((f[i] + g[j] - cost[(i, j)]) / eps).exp())
                    .sum();
                (s - mu[i]).abs()
            })
            .fold(0.0f64, f64::max);
        if worst <= config.tol {
            break;
        }
    }
    (plan(&f, &g), iters)
}

/// `B(X, Y) = sum (DQ_jj' - DC_ll')^2 X_jl Y_j'l'`, via the squared-loss
/// decomposition. Uses the actual marginals of `X` and `Y`.
fn gw_bilinear(dq2: &DMatrix<f64>, dc2: &DMatrix<f64>, dq: &DMatrix<f64>, dc: &DMatrix<f64>, x: &DMatrix<f64>, y: &DMatrix<f64>) -> f64 {
    let rx = x.column_sum();
    let cx = x.row_sum().transpose();
    let ry = y.column_sum();
    let cy = y.row_sum().transpose();
    let a = rx.dot(&(dq2 * &ry));
    let b = cx.dot(&(dc2 * &cy));
    let cross = x.dot(&(dq * y * dc));
    a + b - 2.0 * cross
}

/// Squared-loss Gromov-Wasserstein objective of plan `t`.
pub fn gw_term(dq: &DMatrix<f64>, dc: &DMatrix<f64>, t: &DMatrix<f64>) -> Result<f64> {
    if dq.nrows() != t.nrows() || dq.ncols() != t.nrows() {
        return Err(Error::DimensionMismatch {
            expected: t.nrows(),
            got: dq.nrows(),
        });
    }
    if dc.nrows() != t.ncols() || dc.ncols() != t.ncols() {
        return Err(Error::DimensionMismatch {
            expected: t.ncols(),
            got: dc.nrows(),
        });
    }
    let dq2 = dq.component_mul(dq);
    let dc2 = dc.component_mul(dc);
    Ok(gw_bilinear(&dq2, &dc2, dq, dc, t, t).max(0.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FgwSolution {
    pub plan: TransportPlan,
    pub cost: f64,
    /// Objective after each accepted iterate, starting with the initial plan.
    pub history: Vec<f64>,
    pub iterations: usize,
    pub warnings: Vec<ConvergenceWarning>,
}

struct FgwProblem<'a> {
    bundle: &'a CostBundle,
    dq2: DMatrix<f64>,
    dc2: DMatrix<f64>,
    beta: f64,
}

impl FgwProblem<'_> {
    fn bilinear(&self, x: &DMatrix<f64>, y: &DMatrix<f64>) -> f64 {
        gw_bilinear(&self.dq2, &self.dc2, &self.bundle.dq, &self.bundle.dc, x, y)
    }

    fn objective(&self, t: &DMatrix<f64>) -> f64 {
        let feat = (1.0 - self.beta) * self.bundle.d.dot(t);
        let gw = self.beta * self.bilinear(t, t);
        feat + gw
    }

    fn linearized_cost(&self, t: &DMatrix<f64>) -> DMatrix<f64> {
        let r = t.column_sum();
        let c = t.row_sum().transpose();
        let qr = &self.dq2 * r;
        let cc = &self.dc2 * c;
        let cross = &self.bundle.dq * t * &self.bundle.dc;
        let (m, n) = t.shape();
        DMatrix::from_fn(m, n, |j, l| {
            let grad = 2.0 * (qr[j] + cc[l] - 2.0 * cross[(j, l)]);
            (1.0 - self.beta) * self.bundle.d[(j, l)] + self.beta * grad
        })
    }
}

/// Fused Gromov-Wasserstein by conditional gradient with exact line search.
///
/// Minimizes `(1 - beta) <D, T> + beta GW(T)` starting from `mu nu^T`.
/// Each step is accepted only if it does not increase the objective, so
/// `history` is nonincreasing.
pub fn fgw_solve(
    bundle: &CostBundle,
    mu: &[f64],
    nu: &[f64],
    config: &FwConfig,
) -> Result<FgwSolution> {
    config.validate()?;
    check_marginal(mu, bundle.m(), "row")?;
    check_marginal(nu, bundle.n(), "column")?;
    let problem = FgwProblem {
        bundle,
        dq2: bundle.dq.component_mul(&bundle.dq),
        dc2: bundle.dc.component_mul(&bundle.dc),
        beta: config.beta,
    };

    let mut t = TransportPlan::product(mu, nu).t;
    let mut f = problem.objective(&t);
    let mut history = vec![f];
    let mut warnings = Vec::new();
    let mut iterations = 0;

    while iterations < config.max_iters {
        iterations += 1;
        let lin = problem.linearized_cost(&t);
        let sub = sinkhorn(&lin, mu, nu, &config.sinkhorn)?;
        if let Some(w) = sub.warning {
            warnings.push(w);
        }
        let s = sub.plan.t;
        let delta = &s - &t;

        let a = config.beta * problem.bilinear(&delta, &delta);
        let b = (1.0 - config.beta) * bundle.d.dot(&delta)
            + 2.0 * config.beta * problem.bilinear(&t, &delta);
        let step = if a > 0.0 {
            (-b / (2.0 * a)).clamp(0.0, 1.0)
        } else if a + b <= 0.0 {
            1.0
        } else {
            0.0
        };
        if step == 0.0 {
            break;
        }
        let next = if step == 1.0 { s } else { &t + delta * step };
        let f_next = problem.objective(&next);
        if !(f_next <= f) {
            break;
        }
        let change = (f - f_next).abs() / f.abs().max(f64::MIN_POSITIVE);
        t = next;
        f = f_next;
        history.push(f);
        if change <= config.rel_tol {
            break;
        }
    }

    Ok(FgwSolution {
        plan: TransportPlan {
            t,
            mu: mu.to_vec(),
            nu: nu.to_vec(),
        },
        cost: f,
        history,
        iterations,
        warnings,
    })
}

/// GW objective between two point clouds under cosine distance, with
/// uniform marginals and the feature term switched off.
pub fn gw_distance(a: &[Vec<f64>], b: &[Vec<f64>], config: &FwConfig) -> Result<f64> {
    let qa = unit_rows(a, "first cloud")?;
    let qb = unit_rows(b, "second cloud")?;
    // the feature term is multiplied by zero, so cross-dimension clouds are fine
    let bundle = CostBundle {
        d: DMatrix::zeros(qa.len(), qb.len()),
        dq: pairwise(&qa),
        dc: pairwise(&qb),
    };
    let cfg = FwConfig {
        beta: 1.0,
        ..*config
    };
    let sol = fgw_solve(&bundle, &uniform(qa.len()), &uniform(qb.len()), &cfg)?;
    Ok(sol.cost)
}
