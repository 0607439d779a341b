//! Penalized (weighted) logistic and least-squares regressions with
//! data-driven penalty loadings.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::{CovariateKind, Dataset};
use crate::error::{LeeError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BasisDegree {
    #[default]
    Linear,
    Quadratic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Term {
    Intercept,
    Linear(usize),
    Square(usize),
}

/// Basis expansion `b(x)` evaluated on every row of a dataset. Column 0 is
/// always the intercept.
#[derive(Debug, Clone)]
pub struct Basis {
    terms: Vec<Term>,
    names: Vec<String>,
    rows: Vec<f64>,
    n: usize,
}

impl Basis {
    pub fn p(&self) -> usize {
        self.terms.len()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        let p = self.p();
        &self.rows[i * p..(i + 1) * p]
    }

    /// Row-major copy of the given rows.
    pub fn gather(&self, idx: &[usize]) -> Vec<f64> {
        let mut out = Vec::with_capacity(idx.len() * self.p());
        for &i in idx {
            out.extend_from_slice(self.row(i));
        }
        out
    }

    pub fn expand(&self, x: &[f64]) -> Vec<f64> {
        self.terms
            .iter()
            .map(|t| match *t {
                Term::Intercept => 1.0,
                Term::Linear(k) => x[k],
                Term::Square(k) => x[k] * x[k],
            })
            .collect()
    }
}

/// Intercept plus covariates, plus squares of continuous and categorical
/// covariates in quadratic mode. Columns without variation in `data` are
/// left out since they duplicate the intercept.
pub fn build_basis(data: &Dataset, degree: BasisDegree) -> Basis {
    let cols = data.covariates();
    let mut candidates = Vec::new();
    for (k, c) in cols.iter().enumerate() {
        candidates.push((Term::Linear(k), c.name.clone()));
        if degree == BasisDegree::Quadratic && c.kind != CovariateKind::Binary {
            candidates.push((Term::Square(k), format!("{}^2", c.name)));
        }
    }
    let mut terms = vec![Term::Intercept];
    let mut names = vec!["(intercept)".to_string()];
    for (t, name) in candidates {
        let value = |i: usize| match t {
            Term::Linear(k) => data.x_row(i)[k],
            Term::Square(k) => data.x_row(i)[k].powi(2),
            Term::Intercept => 1.0,
        };
        let first = value(0);
        if (1..data.n()).any(|i| value(i) != first) {
            terms.push(t);
            names.push(name);
        }
    }
    let mut basis = Basis {
        terms,
        names,
        rows: Vec::new(),
        n: data.n(),
    };
    let mut rows = Vec::with_capacity(data.n() * basis.p());
    for i in 0..data.n() {
        rows.extend(basis.expand(data.x_row(i)));
    }
    basis.rows = rows;
    basis
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyKind {
    /// Unweighted distribution regression of the treatment.
    DistributionalD,
    /// Kernel-weighted regressions.
    KernelWeighted,
}

pub fn penalty_lambda(kind: PenaltyKind, n: usize, p: usize, h1: f64, r: f64) -> Result<f64> {
    if n == 0 || p == 0 || !(h1 > 0.0) {
        return Err(LeeError::Argument("penalty needs n, p >= 1 and h1 > 0".into()));
    }
    let nh = n as f64 * h1;
    let big = (p as f64).max(nh);
    match kind {
        PenaltyKind::DistributionalD => {
            if !(r > 0.0 && r < big) {
                return Err(LeeError::Argument(format!("penalty level r = {r} out of range")));
            }
            let z = Normal::standard().inverse_cdf(1.0 - r / big);
            Ok(1.1 * z * (n as f64).sqrt())
        }
        PenaltyKind::KernelWeighted => {
            if nh <= std::f64::consts::E {
                return Err(LeeError::Argument(format!(
                    "n h1 = {nh} must exceed e for the penalty to be defined"
                )));
            }
            let ell = nh.ln().ln().sqrt();
            Ok(ell * (big.ln() * nh).sqrt())
        }
    }
}

/// Default probability level `1 / log n`.
pub fn default_penalty_r(n: usize) -> f64 {
    1.0 / (n as f64).ln()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LassoFit {
    pub coef: Vec<f64>,
    pub objective: f64,
    pub active: Vec<usize>,
    pub converged: bool,
    pub iterations: usize,
    /// Objective after each outer iteration.
    pub trace: Vec<f64>,
}

impl LassoFit {
    #[inline]
    pub fn linear(&self, b: &[f64]) -> f64 {
        b.iter().zip(&self.coef).map(|(x, c)| x * c).sum()
    }

    #[inline]
    pub fn probability(&self, b: &[f64]) -> f64 {
        logistic(self.linear(b))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Column 0 is an intercept (all ones).
    pub intercept: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-8,
            max_iter: 200,
            intercept: true,
        }
    }
}

/// Largest magnitude for a linear index, keeping probabilities inside (0, 1).
const ETA_CAP: f64 = 30.0;

#[inline]
pub fn logistic(eta: f64) -> f64 {
    let e = eta.clamp(-ETA_CAP, ETA_CAP);
    1.0 / (1.0 + (-e).exp())
}

#[inline]
fn log1pexp(eta: f64) -> f64 {
    if eta > 0.0 {
        eta + (-eta).exp().ln_1p()
    } else {
        eta.exp().ln_1p()
    }
}

fn check_inputs(x: &[f64], p: usize, y: &[f64], w: &[f64], lambda: f64, loadings: &[f64]) -> Result<usize> {
    let m = y.len();
    if p == 0 || x.len() != m * p || w.len() != m || loadings.len() != p {
        return Err(LeeError::Argument("lasso inputs have inconsistent dimensions".into()));
    }
    if !(lambda >= 0.0) || loadings.iter().any(|l| !(*l >= 0.0)) {
        return Err(LeeError::Argument("penalty level and loadings must be non-negative".into()));
    }
    if w.iter().any(|v| !(*v >= 0.0)) || !w.iter().any(|v| *v > 0.0) {
        return Err(LeeError::Argument("weights must be non-negative and not all zero".into()));
    }
    Ok(m)
}

fn penalty(lambda: f64, loadings: &[f64], beta: &[f64]) -> f64 {
    lambda * loadings.iter().zip(beta).map(|(l, b)| l * b.abs()).sum::<f64>()
}

#[inline]
fn soft(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

/// Coordinate descent for `1/2 sum v (z - x b)^2 + sum pen_j |b_j|`,
/// warm-started at `beta`. With an intercept the other columns are centered
/// by their weighted means, which leaves the intercept in closed form.
#[allow(clippy::too_many_arguments)]
fn cd_least_squares(
    x: &[f64],
    p: usize,
    z: &[f64],
    v: &[f64],
    pen: &[f64],
    beta: &mut [f64],
    intercept: bool,
    tol: f64,
    max_sweeps: usize,
) -> bool {
    let m = z.len();
    let vsum: f64 = v.iter().sum();
    let start = if intercept { 1 } else { 0 };
    let mut means = vec![0.0; p];
    let mut zbar = 0.0;
    if intercept {
        for i in 0..m {
            let row = &x[i * p..(i + 1) * p];
            for j in 1..p {
                means[j] += v[i] * row[j];
            }
            zbar += v[i] * z[i];
        }
        for mj in means.iter_mut() {
            *mj /= vsum;
        }
        zbar /= vsum;
    }
    let xc: Vec<f64> = (0..m * p).map(|k| x[k] - means[k % p]).collect();
    let mut curv = vec![0.0; p];
    for i in 0..m {
        for j in start..p {
            curv[j] += v[i] * xc[i * p + j].powi(2);
        }
    }
    // Residual of the centered problem.
    let mut r: Vec<f64> = (0..m)
        .map(|i| {
            let fit: f64 = (start..p).map(|j| xc[i * p + j] * beta[j]).sum();
            z[i] - zbar - fit
        })
        .collect();
    let scale = (0..m).map(|i| v[i] * (z[i] - zbar).powi(2)).sum::<f64>().sqrt().max(1e-300);
    let mut converged = false;
    for _ in 0..max_sweeps {
        let mut max_step: f64 = 0.0;
        for j in start..p {
            if curv[j] <= 1e-300 {
                continue;
            }
            let mut grad = 0.0;
            for i in 0..m {
                grad += v[i] * xc[i * p + j] * r[i];
            }
            let old = beta[j];
            let new = soft(grad + curv[j] * old, pen[j]) / curv[j];
            let delta = new - old;
            if delta != 0.0 {
                for i in 0..m {
                    r[i] -= delta * xc[i * p + j];
                }
                beta[j] = new;
                max_step = max_step.max(delta.abs() * curv[j].sqrt());
            }
        }
        if max_step <= tol * scale {
            converged = true;
            break;
        }
    }
    if intercept {
        beta[0] = zbar - (1..p).map(|j| means[j] * beta[j]).sum::<f64>();
    }
    converged
}

fn active_set(coef: &[f64], intercept: bool) -> Vec<usize> {
    coef.iter()
        .enumerate()
        .filter(|&(j, c)| *c != 0.0 && !(intercept && j == 0))
        .map(|(j, _)| j)
        .collect()
}

/// `argmin sum w (y - x b)^2 / 2 + lambda sum l_j |b_j|`.
pub fn weighted_ls_lasso(
    x: &[f64],
    p: usize,
    y: &[f64],
    w: &[f64],
    lambda: f64,
    loadings: &[f64],
    opts: &SolverOptions,
) -> Result<LassoFit> {
    check_inputs(x, p, y, w, lambda, loadings)?;
    let pen: Vec<f64> = loadings.iter().map(|l| lambda * l).collect();
    let mut beta = vec![0.0; p];
    let converged = cd_least_squares(x, p, y, w, &pen, &mut beta, opts.intercept, opts.tol * 1e-2, 100_000);
    let m = y.len();
    let loss: f64 = (0..m)
        .map(|i| {
            let fit: f64 = x[i * p..(i + 1) * p].iter().zip(&beta).map(|(a, b)| a * b).sum();
            0.5 * w[i] * (y[i] - fit).powi(2)
        })
        .sum();
    let objective = loss + penalty(lambda, loadings, &beta);
    if !converged {
        return Err(LeeError::Convergence {
            iterations: 100_000,
            gap: f64::NAN,
        });
    }
    Ok(LassoFit {
        active: active_set(&beta, opts.intercept),
        coef: beta,
        objective,
        converged,
        iterations: 1,
        trace: vec![objective],
    })
}

fn logistic_objective(x: &[f64], p: usize, y: &[f64], w: &[f64], beta: &[f64], pen: f64) -> f64 {
    let mut loss = 0.0;
    for i in 0..y.len() {
        if w[i] == 0.0 {
            continue;
        }
        let eta: f64 = x[i * p..(i + 1) * p].iter().zip(beta).map(|(a, b)| a * b).sum();
        loss += w[i] * (log1pexp(eta) - y[i] * eta);
    }
    loss + pen
}

/// `argmin sum w M(y, x b) + lambda sum l_j |b_j|` with logistic loss `M`,
/// solved by proximal Newton steps with backtracking.
pub fn weighted_logistic_lasso(
    x: &[f64],
    p: usize,
    y01: &[f64],
    w: &[f64],
    lambda: f64,
    loadings: &[f64],
    opts: &SolverOptions,
) -> Result<LassoFit> {
    let m = check_inputs(x, p, y01, w, lambda, loadings)?;
    let wsum: f64 = w.iter().sum();
    let ybar = (0..m).map(|i| w[i] * y01[i]).sum::<f64>() / wsum;
    let mut beta = vec![0.0; p];
    if opts.intercept && (ybar <= 0.0 || ybar >= 1.0) {
        // Constant response: the unpenalized intercept runs off to infinity.
        beta[0] = if ybar <= 0.0 { -ETA_CAP } else { ETA_CAP };
        let objective = logistic_objective(x, p, y01, w, &beta, 0.0);
        return Ok(LassoFit {
            coef: beta,
            objective,
            active: Vec::new(),
            converged: true,
            iterations: 0,
            trace: vec![objective],
        });
    }
    if opts.intercept {
        beta[0] = (ybar / (1.0 - ybar)).ln();
    }
    let pen: Vec<f64> = loadings.iter().map(|l| lambda * l).collect();
    let pen_of = |b: &[f64]| penalty(lambda, loadings, b);
    let mut f = logistic_objective(x, p, y01, w, &beta, pen_of(&beta));
    let mut trace = vec![f];
    let mut eta = vec![0.0; m];
    let mut z = vec![0.0; m];
    let mut v = vec![0.0; m];
    for iter in 1..=opts.max_iter {
        let mut grad = vec![0.0; p];
        for i in 0..m {
            let row = &x[i * p..(i + 1) * p];
            eta[i] = row.iter().zip(&beta).map(|(a, b)| a * b).sum();
            let mu = logistic(eta[i]);
            let var = (mu * (1.0 - mu)).max(1e-10);
            v[i] = w[i] * var;
            z[i] = eta[i] + (y01[i] - mu) / var;
            for j in 0..p {
                grad[j] += w[i] * (mu - y01[i]) * row[j];
            }
        }
        let mut target = beta.clone();
        cd_least_squares(x, p, &z, &v, &pen, &mut target, opts.intercept, 1e-12, 10_000);
        let dir: Vec<f64> = target.iter().zip(&beta).map(|(t, b)| t - b).collect();
        let pen_now = pen_of(&beta);
        let model_decrease = grad.iter().zip(&dir).map(|(g, d)| g * d).sum::<f64>() + pen_of(&target) - pen_now;
        let mut t = 1.0;
        let mut accepted = None;
        while t > 1e-12 {
            let cand: Vec<f64> = beta.iter().zip(&dir).map(|(b, d)| b + t * d).collect();
            let fc = logistic_objective(x, p, y01, w, &cand, pen_of(&cand));
            if fc <= f + 1e-4 * t * model_decrease.min(0.0) {
                accepted = Some((cand, fc));
                break;
            }
            t *= 0.5;
        }
        let step = dir.iter().map(|d| (t * d).abs()).fold(0.0, f64::max);
        match accepted {
            Some((cand, fc)) => {
                beta = cand;
                f = fc;
                trace.push(f);
            }
            None => {
                // No descent left at machine precision.
                return Ok(finish_logistic(beta, f, trace, iter, opts));
            }
        }
        if step <= opts.tol {
            return Ok(finish_logistic(beta, f, trace, iter, opts));
        }
    }
    Err(LeeError::Convergence {
        iterations: opts.max_iter,
        gap: trace.windows(2).last().map_or(f64::NAN, |w| w[0] - w[1]),
    })
}

fn finish_logistic(beta: Vec<f64>, f: f64, trace: Vec<f64>, iterations: usize, opts: &SolverOptions) -> LassoFit {
    LassoFit {
        active: active_set(&beta, opts.intercept),
        coef: beta,
        objective: f,
        converged: true,
        iterations,
        trace,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    Logistic,
    Squared,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltyLoadings {
    pub values: Vec<f64>,
    pub iterations: usize,
}

/// Relative floor applied to penalty loadings.
pub const LOADING_FLOOR: f64 = 1e-6;

/// Empirical `L2` norms `sqrt(N^-1 sum (r_i a_i b_ij)^2)` per column, with the
/// intercept left unpenalized and tiny loadings floored.
fn loadings_from(x: &[f64], p: usize, resid: &[f64], scale: &[f64], n_norm: f64, intercept: bool) -> Vec<f64> {
    let mut l = vec![0.0; p];
    for i in 0..resid.len() {
        let ri = resid[i] * scale[i];
        if ri == 0.0 {
            continue;
        }
        for j in 0..p {
            l[j] += (ri * x[i * p + j]).powi(2);
        }
    }
    for v in l.iter_mut() {
        *v = (*v / n_norm).sqrt();
    }
    let start = if intercept { 1 } else { 0 };
    let max = l[start..].iter().copied().fold(0.0, f64::max);
    for v in l[start..].iter_mut() {
        *v = v.max(LOADING_FLOOR * max);
    }
    if intercept {
        l[0] = 0.0;
    }
    l
}

/// Regression problem for [`iterate_loadings`].
#[derive(Debug, Clone, Copy)]
pub struct LassoTask<'a> {
    pub loss: Loss,
    /// Row-major `m x p` design.
    pub x: &'a [f64],
    pub p: usize,
    pub y: &'a [f64],
    /// Loss weights.
    pub w: &'a [f64],
    /// Per-row multiplier inside the loading norms.
    pub loading_scale: &'a [f64],
    /// Sample size used in the loading norms.
    pub n_norm: f64,
    pub lambda: f64,
}

/// Fit with initial response-based loadings, then refit `m_iter` times with
/// loadings from the previous residuals.
pub fn iterate_loadings(task: &LassoTask<'_>, m_iter: usize, opts: &SolverOptions) -> Result<(PenaltyLoadings, LassoFit)> {
    let solve = |l: &[f64]| match task.loss {
        Loss::Logistic => weighted_logistic_lasso(task.x, task.p, task.y, task.w, task.lambda, l, opts),
        Loss::Squared => weighted_ls_lasso(task.x, task.p, task.y, task.w, task.lambda, l, opts),
    };
    let mut loadings = loadings_from(task.x, task.p, task.y, task.loading_scale, task.n_norm, opts.intercept);
    let mut fit = solve(&loadings)?;
    for _ in 0..m_iter {
        let resid: Vec<f64> = (0..task.y.len())
            .map(|i| {
                let b = &task.x[i * task.p..(i + 1) * task.p];
                let fitted = match task.loss {
                    Loss::Logistic => fit.probability(b),
                    Loss::Squared => fit.linear(b),
                };
                task.y[i] - fitted
            })
            .collect();
        loadings = loadings_from(task.x, task.p, &resid, task.loading_scale, task.n_norm, opts.intercept);
        fit = solve(&loadings)?;
    }
    Ok((
        PenaltyLoadings {
            values: loadings,
            iterations: m_iter,
        },
        fit,
    ))
}

/// Unpenalized refit on the intercept and the active set of `fit`; the
/// penalized fit is returned when the refit fails.
pub fn post_lasso_refit(task: &LassoTask<'_>, fit: LassoFit, opts: &SolverOptions) -> LassoFit {
    let mut loadings = vec![1e12; task.p];
    if opts.intercept {
        loadings[0] = 0.0;
    }
    for &j in &fit.active {
        loadings[j] = 0.0;
    }
    let refit = match task.loss {
        Loss::Logistic => weighted_logistic_lasso(task.x, task.p, task.y, task.w, 1.0, &loadings, opts),
        Loss::Squared => weighted_ls_lasso(task.x, task.p, task.y, task.w, 1.0, &loadings, opts),
    };
    match refit {
        Ok(mut r) if r.coef.iter().all(|c| c.is_finite()) => {
            r.active = fit.active;
            r
        }
        _ => fit,
    }
}

/// Conditional density by symmetric differencing of a conditional CDF.
pub fn cond_density(f_plus: f64, f_minus: f64, h1: f64) -> f64 {
    (f_plus - f_minus) / (2.0 * h1)
}

/// Monotone rearrangement of values on an increasing grid.
pub fn rearrange(values: &mut [f64]) {
    values.sort_by(|a, b| a.total_cmp(b));
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn penalty_arithmetic() {
        let n = 10_000;
        let r = default_penalty_r(n);
        let got = penalty_lambda(PenaltyKind::DistributionalD, n, 50, 0.3, r).unwrap();
        let want = 1.1 * Normal::standard().inverse_cdf(1.0 - r / 3000.0) * 100.0;
        assert!((got - want).abs() < 1e-9);
        let smaller = penalty_lambda(PenaltyKind::DistributionalD, n, 50, 0.3, 0.5).unwrap();
        assert!(smaller < got);

        let nh: f64 = 10_000.0 * 0.3;
        let lam = penalty_lambda(PenaltyKind::KernelWeighted, n, 50, 0.3, r).unwrap();
        assert!((lam - (nh.ln().ln()).sqrt() * (nh.ln() * nh).sqrt()).abs() < 1e-9);
        assert!(penalty_lambda(PenaltyKind::KernelWeighted, 10, 5, 0.2, r).is_err());
    }

    #[test]
    fn huge_penalty_gives_base_rate() {
        let x: Vec<f64> = (0..40).flat_map(|i| [1.0, (i as f64 / 7.0).sin()]).collect();
        let y: Vec<f64> = (0..40).map(|i| (i % 3 == 0) as u8 as f64).collect();
        let w = vec![1.0; 40];
        let fit = weighted_logistic_lasso(&x, 2, &y, &w, 1e6, &[0.0, 1.0], &SolverOptions::default()).unwrap();
        assert_eq!(fit.coef[1], 0.0);
        let rate = y.iter().sum::<f64>() / 40.0;
        assert!((fit.probability(&[1.0, 0.3]) - rate).abs() < 1e-9);
    }

    #[test]
    fn separable_data_stays_finite() {
        let x: Vec<f64> = (0..20).flat_map(|i| [1.0, i as f64 - 9.5]).collect();
        let y: Vec<f64> = (0..20).map(|i| (i >= 10) as u8 as f64).collect();
        let w = vec![1.0; 20];
        let fit = weighted_logistic_lasso(&x, 2, &y, &w, 1.0, &[0.0, 1.0], &SolverOptions::default()).unwrap();
        assert!(fit.coef.iter().all(|c| c.is_finite()));
        assert!(fit.trace.windows(2).all(|t| t[1] <= t[0] + 1e-12));
    }

    #[test]
    fn single_point_weight() {
        let x: Vec<f64> = (0..5).flat_map(|i| [1.0, i as f64]).collect();
        let y = [3.0, -1.0, 2.0, 7.0, 0.5];
        let w = [0.0, 0.0, 0.0, 1.0, 0.0];
        let fit = weighted_ls_lasso(&x, 2, &y, &w, 0.0, &[0.0, 1.0], &SolverOptions::default()).unwrap();
        assert!((fit.linear(&[1.0, 3.0]) - 7.0).abs() < 1e-9);
    }

    #[test]
    fn density_by_difference() {
        let c = 0.8;
        let f = |d: f64| 0.1 + c * d;
        assert!((cond_density(f(0.5 + 0.1), f(0.5 - 0.1), 0.1) - c).abs() < 1e-12);
        assert!(cond_density(0.2, 0.3, 0.1) < 0.0);
    }
}
