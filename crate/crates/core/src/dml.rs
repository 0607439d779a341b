//! Bounds with covariates: overlap trimming, per-covariate sufficient values,
//! orthogonal moments and cross-fitted estimation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{BandwidthReport, BoundsCurve, BoundsPoint, Side};
use crate::config::{DmlConfig, EstimatorConfig};
use crate::data::{assign_folds, Dataset, FoldAssignment, Grid};
use crate::error::{LeeError, Result};
use crate::inference::{self, ate_bounds, centered_variance, AteBounds, BoundInfluence};
use crate::kernel::{amse_bandwidth, bias_estimate, undersmooth, BandwidthRule, KernelFamily};
use crate::lasso::{
    build_basis, default_penalty_r, iterate_loadings, penalty_lambda, post_lasso_refit, rearrange, Basis,
    LassoFit, LassoTask, Loss, PenaltyKind, SolverOptions,
};

/// Conditional nuisance functions evaluated at grid points and at the
/// covariates of observation `i` of the estimation sample.
pub trait ConditionalNuisance: Sync {
    /// `s(d_j, X_i)`.
    fn selection(&self, j: usize, i: usize) -> f64;
    /// `mu_{d_j}(X_i)`, the treatment density given covariates.
    fn gps(&self, j: usize, i: usize) -> f64;
    /// `Q^{d_j}(u, X_i)` for selected outcomes.
    fn quantile(&self, j: usize, u: f64, i: usize) -> f64;
    /// `E[Y | Y >= Q(1 - p)]` (upper) or `E[Y | Y <= Q(p)]` (lower) given
    /// `D = d_j, S = 1, X = X_i`.
    fn tail_mean(&self, j: usize, side: Side, p: f64, i: usize) -> f64;
    /// `E[Y | D = d_j, S = 1, X = X_i]`.
    fn cond_mean(&self, j: usize, i: usize) -> f64;
}

/// Nuisance values for one observation in the moment functions at `d`
/// with sufficient value `d_j`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalNuisance {
    pub s_j: f64,
    pub s_d: f64,
    pub mu_j: f64,
    pub mu_d: f64,
    /// Cut: `Q(1 - p)` (upper) or `Q(p)` (lower).
    pub q: f64,
    /// Tail mean for the side, or the conditional mean when `d = d_j`.
    pub rho: f64,
}

/// `K_h(D - d) / mu_d * S * Y * 1{tail}`; without trimming the indicator is 1.
pub fn moment_m(s: u8, y: f64, k_d: f64, mu_d: f64, q: f64, side: Side, trimmed: bool) -> f64 {
    if s == 0 {
        return 0.0;
    }
    let keep = !trimmed
        || match side {
            Side::Upper => y >= q,
            Side::Lower => y <= q,
        };
    if keep {
        k_d / mu_d * y
    } else {
        0.0
    }
}

/// Correction term making the moment insensitive to first-order nuisance
/// errors. `p` is the trimming probability; `trimmed = false` is the case
/// `d = d_j`.
#[allow(clippy::too_many_arguments)]
pub fn correction(s: u8, y: f64, k_d: f64, k_j: f64, nu: &LocalNuisance, p: f64, side: Side, trimmed: bool) -> f64 {
    let sf = s as f64;
    if !trimmed {
        return (nu.mu_d - k_d) * nu.rho * nu.s_d / nu.mu_d;
    }
    let tail_term = match side {
        Side::Upper => p - if s == 1 && y >= nu.q { 1.0 } else { 0.0 },
        Side::Lower => (if s == 1 && y > nu.q { 1.0 } else { 0.0 }) - 1.0 + p,
    };
    nu.q * (k_j / nu.mu_j * (sf - nu.s_j) - k_d / nu.mu_d * p * (sf - nu.s_d) + k_d * sf / nu.mu_d * tail_term)
        + (nu.mu_d - k_d) * nu.rho * nu.s_j / nu.mu_d
}

/// `K_h(D - d_j)(S - s(d_j, X)) / mu_{d_j}(X) + s(d_j, X)`.
pub fn psi_pi(s: u8, k_j: f64, mu_j: f64, s_j: f64) -> f64 {
    k_j * (s as f64 - s_j) / mu_j + s_j
}

/// Grid indices attaining `min_j s(d_j, X_i)` within `tol`.
pub fn classify_sufficient(s_values: &[f64], tol: f64) -> Vec<usize> {
    let min = s_values.iter().copied().fold(f64::INFINITY, f64::min);
    s_values
        .iter()
        .enumerate()
        .filter(|(_, &s)| s - min <= tol)
        .map(|(j, _)| j)
        .collect()
}

/// Per-observation moments at one grid point.
#[derive(Debug, Clone, Default)]
pub struct MomentValues {
    pub m_u: Vec<f64>,
    pub cor_u: Vec<f64>,
    pub g_u: Vec<f64>,
    pub m_l: Vec<f64>,
    pub cor_l: Vec<f64>,
    pub g_l: Vec<f64>,
    pub psi: Vec<f64>,
}

/// Settings of the moment evaluation.
#[derive(Debug, Clone, Copy)]
pub struct MomentSettings {
    pub kernel: KernelFamily,
    pub nu: f64,
    pub tie_tolerance: f64,
}

/// Evaluate `m`, `cor`, `g = m + cor` and `psi` for every observation at
/// grid index `jd` with bandwidth `h`, averaging over tied sufficient values.
pub fn moment_values(
    data: &Dataset,
    nuis: &dyn ConditionalNuisance,
    grid: &Grid,
    jd: usize,
    h: f64,
    set: &MomentSettings,
) -> MomentValues {
    let n = data.n();
    let pts = grid.points();
    let d = pts[jd];
    let mut out = MomentValues {
        m_u: vec![0.0; n],
        cor_u: vec![0.0; n],
        g_u: vec![0.0; n],
        m_l: vec![0.0; n],
        cor_l: vec![0.0; n],
        g_l: vec![0.0; n],
        psi: vec![0.0; n],
    };
    let mut s_row = vec![0.0; pts.len()];
    for i in 0..n {
        for (j, s) in s_row.iter_mut().enumerate() {
            *s = nuis.selection(j, i);
        }
        let ties = classify_sufficient(&s_row, set.tie_tolerance);
        let (di, si, yi) = (data.d(i), data.s(i), data.y(i));
        let k_d = set.kernel.scaled(di - d, h);
        let mu_d = nuis.gps(jd, i);
        let s_d = s_row[jd];
        let mut acc = [0.0; 7];
        for &j in &ties {
            let k_j = set.kernel.scaled(di - pts[j], h);
            let mu_j = nuis.gps(j, i);
            let s_j = s_row[j];
            acc[6] += psi_pi(si, k_j, mu_j, s_j);
            if j == jd {
                let nu = LocalNuisance { s_j, s_d, mu_j, mu_d, q: 0.0, rho: nuis.cond_mean(jd, i) };
                let m = moment_m(si, yi, k_d, mu_d, 0.0, Side::Upper, false);
                let c = correction(si, yi, k_d, k_j, &nu, 1.0, Side::Upper, false);
                acc[0] += m;
                acc[1] += c;
                acc[3] += m;
                acc[4] += c;
                continue;
            }
            let p = (s_j / s_d).min(1.0) - set.nu;
            for (side, off) in [(Side::Upper, 0), (Side::Lower, 3)] {
                let u = match side {
                    Side::Upper => 1.0 - p,
                    Side::Lower => p,
                };
                let q = nuis.quantile(jd, u, i);
                let rho = nuis.tail_mean(jd, side, p, i);
                let nu = LocalNuisance { s_j, s_d, mu_j, mu_d, q, rho };
                acc[off] += moment_m(si, yi, k_d, mu_d, q, side, true);
                acc[off + 1] += correction(si, yi, k_d, k_j, &nu, p, side, true);
            }
        }
        let t = ties.len() as f64;
        out.m_u[i] = acc[0] / t;
        out.cor_u[i] = acc[1] / t;
        out.g_u[i] = out.m_u[i] + out.cor_u[i];
        out.m_l[i] = acc[3] / t;
        out.cor_l[i] = acc[4] / t;
        out.g_l[i] = out.m_l[i] + out.cor_l[i];
        out.psi[i] = acc[6] / t;
    }
    out
}

/// Point estimates and influence values at one grid point.
#[derive(Debug, Clone)]
pub struct DmlPoint {
    pub rho_u: f64,
    pub rho_l: f64,
    pub pi_hat: f64,
    pub phi_u: Vec<f64>,
    pub phi_l: Vec<f64>,
}

impl DmlPoint {
    pub fn se_upper(&self) -> f64 {
        (centered_variance(&self.phi_u) / self.phi_u.len() as f64).sqrt()
    }

    pub fn se_lower(&self) -> f64 {
        (centered_variance(&self.phi_l) / self.phi_l.len() as f64).sqrt()
    }
}

pub fn dml_point(
    data: &Dataset,
    nuis: &dyn ConditionalNuisance,
    grid: &Grid,
    jd: usize,
    h: f64,
    set: &MomentSettings,
) -> Result<DmlPoint> {
    let mv = moment_values(data, nuis, grid, jd, h, set);
    let n = data.n() as f64;
    let pi = mv.psi.iter().sum::<f64>() / n;
    if !(pi > 0.0) {
        return Err(LeeError::Overlap(format!("estimated always-taker share {pi} is not positive")));
    }
    let rho_u = mv.g_u.iter().sum::<f64>() / n / pi;
    let rho_l = mv.g_l.iter().sum::<f64>() / n / pi;
    let phi = |g: &[f64], beta: f64| -> Vec<f64> {
        g.iter().zip(&mv.psi).map(|(g, psi)| (g - psi * beta) / pi).collect()
    };
    Ok(DmlPoint {
        rho_u,
        rho_l,
        pi_hat: pi,
        phi_u: phi(&mv.g_u, rho_u),
        phi_l: phi(&mv.g_l, rho_l),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NuisanceComponent {
    /// `s(d_j, .)` at every grid point other than the target.
    SelectionAtSufficient,
    /// `s(d, .)` at the target grid point.
    SelectionAtTarget,
    /// `mu_d(.)` at the target grid point.
    Gps,
    /// `Q^d(u, .)` at the target grid point.
    Quantile,
    /// Tail means at the target grid point.
    TailMean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// `xi + r * delta`.
    Additive(f64),
    /// `xi * (1 + r * delta)`.
    Relative(f64),
}

/// Nuisance shifted along one direction: `xi_r`.
pub struct Perturbed<'a> {
    pub base: &'a dyn ConditionalNuisance,
    pub component: NuisanceComponent,
    pub target: usize,
    pub direction: Direction,
    pub r: f64,
}

impl Perturbed<'_> {
    fn apply(&self, v: f64) -> f64 {
        match self.direction {
            Direction::Additive(delta) => v + self.r * delta,
            Direction::Relative(delta) => v * (1.0 + self.r * delta),
        }
    }
}

impl ConditionalNuisance for Perturbed<'_> {
    fn selection(&self, j: usize, i: usize) -> f64 {
        let v = self.base.selection(j, i);
        match self.component {
            NuisanceComponent::SelectionAtSufficient if j != self.target => self.apply(v),
            NuisanceComponent::SelectionAtTarget if j == self.target => self.apply(v),
            _ => v,
        }
    }

    fn gps(&self, j: usize, i: usize) -> f64 {
        let v = self.base.gps(j, i);
        if self.component == NuisanceComponent::Gps && j == self.target {
            self.apply(v)
        } else {
            v
        }
    }

    fn quantile(&self, j: usize, u: f64, i: usize) -> f64 {
        let v = self.base.quantile(j, u, i);
        if self.component == NuisanceComponent::Quantile && j == self.target {
            self.apply(v)
        } else {
            v
        }
    }

    fn tail_mean(&self, j: usize, side: Side, p: f64, i: usize) -> f64 {
        let v = self.base.tail_mean(j, side, p, i);
        if self.component == NuisanceComponent::TailMean && j == self.target {
            self.apply(v)
        } else {
            v
        }
    }

    fn cond_mean(&self, j: usize, i: usize) -> f64 {
        self.base.cond_mean(j, i)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrthogonalitySlopes {
    pub slope_m: f64,
    pub slope_g: f64,
    /// `|slope_g| / |slope_m|`.
    pub ratio: f64,
}

/// Central-difference derivatives in `r` at 0 of the sample means of the raw
/// moment `m` and the orthogonal moment `g`, averaged over `steps`.
#[allow(clippy::too_many_arguments)]
pub fn orthogonality_check(
    data: &Dataset,
    base: &dyn ConditionalNuisance,
    grid: &Grid,
    jd: usize,
    h: f64,
    set: &MomentSettings,
    component: NuisanceComponent,
    direction: Direction,
    side: Side,
    steps: &[f64],
) -> OrthogonalitySlopes {
    let means = |r: f64| {
        let pert = Perturbed { base, component, target: jd, direction, r };
        let mv = moment_values(data, &pert, grid, jd, h, set);
        let n = data.n() as f64;
        let (m, g) = match side {
            Side::Upper => (&mv.m_u, &mv.g_u),
            Side::Lower => (&mv.m_l, &mv.g_l),
        };
        (m.iter().sum::<f64>() / n, g.iter().sum::<f64>() / n)
    };
    let (mut sm, mut sg) = (0.0, 0.0);
    for &r in steps {
        let (mp, gp) = means(r);
        let (mm, gm) = means(-r);
        sm += (mp - mm) / (2.0 * r);
        sg += (gp - gm) / (2.0 * r);
    }
    let k = steps.len().max(1) as f64;
    let (slope_m, slope_g) = (sm / k, sg / k);
    OrthogonalitySlopes {
        slope_m,
        slope_g,
        ratio: if slope_m == 0.0 { 0.0 } else { slope_g.abs() / slope_m.abs() },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapReport {
    pub trim_gps: f64,
    pub dropped_gps: usize,
    pub dropped_selection: usize,
    pub kept: Vec<usize>,
    pub n: usize,
}

/// Keep observations whose pilot propensity is at least
/// `k_bar / (share n_l h1)` and whose pilot selection probability is at
/// least the floor at every grid point.
///
/// `mu_tilde[j][i]` and `s_tilde[j][i]` index grid point `j`, observation `i`.
pub fn overlap_trim(
    mu_tilde: &[Vec<f64>],
    s_tilde: &[Vec<f64>],
    h1: f64,
    n_fold: usize,
    cfg: &DmlConfig,
) -> Result<OverlapReport> {
    let n = mu_tilde.first().map_or(0, |v| v.len());
    let trim_gps = cfg.trim_kbar / (cfg.trim_share * n_fold as f64 * h1);
    let mut dropped_gps = 0;
    let mut dropped_selection = 0;
    let mut kept = Vec::with_capacity(n);
    for i in 0..n {
        let low_gps = mu_tilde.iter().any(|m| m[i] < trim_gps);
        let low_sel = s_tilde.iter().any(|s| s[i] < cfg.selection_floor);
        dropped_gps += low_gps as usize;
        dropped_selection += low_sel as usize;
        if !low_gps && !low_sel {
            kept.push(i);
        }
    }
    if kept.is_empty() {
        return Err(LeeError::Overlap("every observation fails the overlap conditions".into()));
    }
    Ok(OverlapReport {
        trim_gps,
        dropped_gps,
        dropped_selection,
        kept,
        n,
    })
}

/// Penalty levels and solver settings shared by the nuisance fits.
#[derive(Debug, Clone, Copy)]
pub struct PenaltySettings {
    pub lambda_kernel: f64,
    pub lambda_treatment: f64,
    pub iterations: usize,
    pub post_lasso: bool,
    pub solver: SolverOptions,
}

impl PenaltySettings {
    pub fn new(n: usize, p: usize, h1: f64, cfg: &DmlConfig) -> Result<Self> {
        let r = cfg.penalty_r.unwrap_or_else(|| default_penalty_r(n));
        Ok(PenaltySettings {
            lambda_kernel: cfg.penalty_scale * penalty_lambda(PenaltyKind::KernelWeighted, n, p, h1, r)?,
            lambda_treatment: cfg.penalty_scale * penalty_lambda(PenaltyKind::DistributionalD, n, p, h1, r)?,
            iterations: cfg.loading_iterations,
            post_lasso: cfg.post_lasso,
            solver: SolverOptions::default(),
        })
    }

    pub fn solve(&self, task: &LassoTask<'_>) -> Result<LassoFit> {
        let fit = iterate_loadings(task, self.iterations, &self.solver)?.1;
        Ok(if self.post_lasso { post_lasso_refit(task, fit, &self.solver) } else { fit })
    }
}

/// Nuisance functions fitted on one training sample.
#[derive(Debug, Clone)]
pub struct NuisanceFit {
    pub h1: f64,
    pub selection: Vec<LassoFit>,
    /// Sorted thresholds `d_j -/+ h1` for the treatment distribution.
    pub thresholds: Vec<f64>,
    pub treatment_cdf: Vec<LassoFit>,
    /// Per grid point: threshold indices of `d_j - h1` and `d_j + h1`.
    pub gps_index: Vec<(usize, usize)>,
    pub y_grid: Vec<Vec<f64>>,
    pub outcome_cdf: Vec<Vec<LassoFit>>,
    pub tail_upper: Vec<LassoFit>,
    pub tail_lower: Vec<LassoFit>,
    pub cond_mean: Vec<LassoFit>,
}

impl NuisanceFit {
    pub fn selection_at(&self, j: usize, b: &[f64]) -> f64 {
        self.selection[j].probability(b)
    }

    /// Rearranged treatment CDF at every threshold.
    pub fn treatment_cdf_at(&self, b: &[f64]) -> Vec<f64> {
        let mut v: Vec<f64> = self.treatment_cdf.iter().map(|f| f.probability(b)).collect();
        rearrange(&mut v);
        v
    }

    pub fn gps_from_cdf(&self, j: usize, cdf: &[f64]) -> f64 {
        let (lo, hi) = self.gps_index[j];
        crate::lasso::cond_density(cdf[hi], cdf[lo], self.h1)
    }

    pub fn outcome_cdf_at(&self, j: usize, b: &[f64]) -> Vec<f64> {
        let mut v: Vec<f64> = self.outcome_cdf[j].iter().map(|f| f.probability(b)).collect();
        rearrange(&mut v);
        v
    }

    /// Smallest threshold whose rearranged CDF reaches `u`, else the largest.
    pub fn quantile_at(&self, j: usize, u: f64, b: &[f64]) -> f64 {
        let cdf = self.outcome_cdf_at(j, b);
        let grid = &self.y_grid[j];
        let k = cdf.partition_point(|&f| f < u);
        grid[k.min(grid.len() - 1)]
    }
}

fn kernel_rows(data: &Dataset, train: &[bool], d: f64, h1: f64, kernel: KernelFamily, selected_only: bool) -> Vec<(usize, f64)> {
    data.window(d, h1 * kernel.radius())
        .iter()
        .filter(|&&i| train[i] && (!selected_only || data.selected(i)))
        .map(|&i| (i, kernel.weight((data.d(i) - d) / h1)))
        .filter(|&(_, w)| w > 0.0)
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn fit_selection(
    data: &Dataset,
    basis: &Basis,
    train: &[bool],
    n_train: usize,
    grid: &Grid,
    h1: f64,
    kernel: KernelFamily,
    pen: &PenaltySettings,
) -> Result<Vec<LassoFit>> {
    let scale = h1.powf(-0.5);
    grid.points()
        .par_iter()
        .map(|&d| {
            let rows = kernel_rows(data, train, d, h1, kernel, false);
            if rows.is_empty() {
                return Err(LeeError::EmptyWindow { d, h: h1, what: "no training observations" });
            }
            let idx: Vec<usize> = rows.iter().map(|r| r.0).collect();
            let x = basis.gather(&idx);
            let y: Vec<f64> = idx.iter().map(|&i| data.s(i) as f64).collect();
            let w: Vec<f64> = rows.iter().map(|r| r.1).collect();
            let ls: Vec<f64> = w.iter().map(|k| k * scale).collect();
            let task = LassoTask { loss: Loss::Logistic, x: &x, p: basis.p(), y: &y, w: &w, loading_scale: &ls, n_norm: n_train as f64, lambda: pen.lambda_kernel };
            pen.solve(&task)
        })
        .collect()
}

type TreatmentModels = (Vec<f64>, Vec<LassoFit>, Vec<(usize, usize)>);

fn fit_treatment(
    data: &Dataset,
    basis: &Basis,
    train_idx: &[usize],
    grid: &Grid,
    h1: f64,
    pen: &PenaltySettings,
) -> Result<TreatmentModels> {
    let mut thresholds: Vec<f64> = grid.points().iter().flat_map(|&d| [d - h1, d + h1]).collect();
    thresholds.sort_by(|a, b| a.total_cmp(b));
    thresholds.dedup();
    let gps_index = grid
        .points()
        .iter()
        .map(|&d| {
            let find = |t: f64| thresholds.iter().position(|&v| v == t).unwrap();
            (find(d - h1), find(d + h1))
        })
        .collect();
    let x = basis.gather(train_idx);
    let w = vec![1.0; train_idx.len()];
    let fits = thresholds
        .par_iter()
        .map(|&t| {
            let y: Vec<f64> = train_idx.iter().map(|&i| (data.d(i) <= t) as u8 as f64).collect();
            let task = LassoTask { loss: Loss::Logistic, x: &x, p: basis.p(), y: &y, w: &w, loading_scale: &w, n_norm: train_idx.len() as f64, lambda: pen.lambda_treatment };
            pen.solve(&task)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((thresholds, fits, gps_index))
}

/// Equally spaced empirical quantiles of the weighted selected outcomes.
fn outcome_thresholds(ys: &mut [f64], size: usize) -> Vec<f64> {
    ys.sort_by(|a, b| a.total_cmp(b));
    let m = ys.len();
    let mut out: Vec<f64> = (0..size)
        .map(|k| {
            let u = (k as f64 + 0.5) / size as f64;
            ys[((u * m as f64).floor() as usize).min(m - 1)]
        })
        .collect();
    out.dedup();
    out
}

/// Fit every nuisance function on the observations flagged in `train`.
#[allow(clippy::too_many_arguments)]
pub fn fit_nuisances(
    data: &Dataset,
    basis: &Basis,
    train: &[bool],
    grid: &Grid,
    h1: f64,
    kernel: KernelFamily,
    nu: f64,
    cfg: &DmlConfig,
    pen: &PenaltySettings,
) -> Result<NuisanceFit> {
    let train_idx: Vec<usize> = (0..data.n()).filter(|&i| train[i]).collect();
    let n_train = train_idx.len();
    let n_selected = train_idx.iter().filter(|&&i| data.selected(i)).count();
    if n_selected == 0 {
        return Err(LeeError::Validation("training sample has no selected observations".into()));
    }
    let selection = fit_selection(data, basis, train, n_train, grid, h1, kernel, pen)?;
    let (thresholds, treatment_cdf, gps_index) = fit_treatment(data, basis, &train_idx, grid, h1, pen)?;
    let scale = h1.powf(-0.5);
    let p = basis.p();

    let outcome: Vec<(Vec<f64>, Vec<LassoFit>)> = grid
        .points()
        .par_iter()
        .map(|&d| {
            let rows = kernel_rows(data, train, d, h1, kernel, true);
            if rows.is_empty() {
                return Err(LeeError::EmptyWindow { d, h: h1, what: "no selected training observations" });
            }
            let idx: Vec<usize> = rows.iter().map(|r| r.0).collect();
            let mut ys: Vec<f64> = idx.iter().map(|&i| data.y(i)).collect();
            let y_grid = outcome_thresholds(&mut ys, cfg.y_grid_size);
            let x = basis.gather(&idx);
            let w: Vec<f64> = rows.iter().map(|r| r.1).collect();
            let ls: Vec<f64> = w.iter().map(|k| k * scale).collect();
            let fits = y_grid
                .iter()
                .map(|&t| {
                    let y: Vec<f64> = idx.iter().map(|&i| (data.y(i) <= t) as u8 as f64).collect();
                    let task = LassoTask { loss: Loss::Logistic, x: &x, p, y: &y, w: &w, loading_scale: &ls, n_norm: n_selected as f64, lambda: pen.lambda_kernel };
                    pen.solve(&task)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((y_grid, fits))
        })
        .collect::<Result<_>>()?;
    let (y_grid, outcome_cdf): (Vec<_>, Vec<_>) = outcome.into_iter().unzip();

    let mut fit = NuisanceFit {
        h1,
        selection,
        thresholds,
        treatment_cdf,
        gps_index,
        y_grid,
        outcome_cdf,
        tail_upper: Vec::new(),
        tail_lower: Vec::new(),
        cond_mean: Vec::new(),
    };

    // Sufficient value of every training observation under this fit.
    let jn = grid.len();
    let class: Vec<usize> = (0..data.n())
        .into_par_iter()
        .map(|i| {
            if !train[i] {
                return 0;
            }
            let b = basis.row(i);
            let s: Vec<f64> = (0..jn).map(|j| fit.selection_at(j, b)).collect();
            classify_sufficient(&s, 0.0)[0]
        })
        .collect();

    let tails: Vec<[LassoFit; 3]> = (0..jn)
        .into_par_iter()
        .map(|jd| {
            let d = grid.points()[jd];
            let rows = kernel_rows(data, train, d, h1, kernel, true);
            let idx: Vec<usize> = rows.iter().map(|r| r.0).collect();
            let x = basis.gather(&idx);
            let y: Vec<f64> = idx.iter().map(|&i| data.y(i)).collect();
            let mut upper = vec![0.0; idx.len()];
            let mut lower = vec![0.0; idx.len()];
            for (r, &i) in idx.iter().enumerate() {
                let j = class[i];
                if j == jd {
                    upper[r] = 1.0;
                    lower[r] = 1.0;
                    continue;
                }
                let b = basis.row(i);
                let pr = (fit.selection_at(j, b) / fit.selection_at(jd, b)).min(1.0) - nu;
                upper[r] = (data.y(i) >= fit.quantile_at(jd, 1.0 - pr, b)) as u8 as f64;
                lower[r] = (data.y(i) <= fit.quantile_at(jd, pr, b)) as u8 as f64;
            }
            let ones = vec![1.0; idx.len()];
            let solve = |ind: &[f64]| -> Result<LassoFit> {
                let w: Vec<f64> = rows.iter().zip(ind).map(|(r, t)| r.1 * t).collect();
                if !w.iter().any(|&v| v > 0.0) {
                    return Err(LeeError::EmptyWindow { d, h: h1, what: "empty outcome tail" });
                }
                let share = ind.iter().sum::<f64>() / ind.len() as f64;
                let ls: Vec<f64> = w.iter().map(|v| v * scale).collect();
                let task = LassoTask { loss: Loss::Squared, x: &x, p, y: &y, w: &w, loading_scale: &ls, n_norm: n_selected as f64 * share, lambda: pen.lambda_kernel };
                pen.solve(&task)
            };
            Ok([solve(&upper)?, solve(&lower)?, solve(&ones)?])
        })
        .collect::<Result<_>>()?;
    for [u, l, m] in tails {
        fit.tail_upper.push(u);
        fit.tail_lower.push(l);
        fit.cond_mean.push(m);
    }
    Ok(fit)
}

/// Cross-fitted nuisances: observation `i` is evaluated with the fit that
/// excluded its fold.
pub struct CrossFitNuisance<'a> {
    basis: &'a Basis,
    folds: &'a FoldAssignment,
    fits: Vec<NuisanceFit>,
    /// `s[j][i]`.
    s: Vec<Vec<f64>>,
    /// `mu[j][i]`, floored at the trimming threshold.
    mu: Vec<Vec<f64>>,
    y_min: f64,
    y_max: f64,
}

impl<'a> CrossFitNuisance<'a> {
    pub fn new(basis: &'a Basis, folds: &'a FoldAssignment, fits: Vec<NuisanceFit>, trim_gps: f64, y_range: (f64, f64)) -> Self {
        let n = basis.n();
        let jn = fits[0].selection.len();
        let rows: Vec<(Vec<f64>, Vec<f64>)> = (0..n)
            .into_par_iter()
            .map(|i| {
                let fit = &fits[folds.fold_of(i)];
                let b = basis.row(i);
                let s: Vec<f64> = (0..jn).map(|j| fit.selection_at(j, b)).collect();
                let cdf = fit.treatment_cdf_at(b);
                let mu: Vec<f64> = (0..jn).map(|j| fit.gps_from_cdf(j, &cdf).max(trim_gps)).collect();
                (s, mu)
            })
            .collect();
        let mut s = vec![vec![0.0; n]; jn];
        let mut mu = vec![vec![0.0; n]; jn];
        for (i, (si, mi)) in rows.into_iter().enumerate() {
            for j in 0..jn {
                s[j][i] = si[j];
                mu[j][i] = mi[j];
            }
        }
        CrossFitNuisance {
            basis,
            folds,
            fits,
            s,
            mu,
            y_min: y_range.0,
            y_max: y_range.1,
        }
    }

    fn fit(&self, i: usize) -> &NuisanceFit {
        &self.fits[self.folds.fold_of(i)]
    }
}

impl ConditionalNuisance for CrossFitNuisance<'_> {
    fn selection(&self, j: usize, i: usize) -> f64 {
        self.s[j][i]
    }

    fn gps(&self, j: usize, i: usize) -> f64 {
        self.mu[j][i]
    }

    fn quantile(&self, j: usize, u: f64, i: usize) -> f64 {
        self.fit(i).quantile_at(j, u, self.basis.row(i))
    }

    fn tail_mean(&self, j: usize, side: Side, _p: f64, i: usize) -> f64 {
        let fit = self.fit(i);
        let model = match side {
            Side::Upper => &fit.tail_upper[j],
            Side::Lower => &fit.tail_lower[j],
        };
        model.linear(self.basis.row(i)).clamp(self.y_min, self.y_max)
    }

    fn cond_mean(&self, j: usize, i: usize) -> f64 {
        self.fit(i).cond_mean[j].linear(self.basis.row(i)).clamp(self.y_min, self.y_max)
    }
}

/// Covariate fit with per-point influence values.
#[derive(Debug, Clone)]
pub struct DmlFit {
    pub curve: BoundsCurve,
    pub overlap: OverlapReport,
    pub bandwidth: BandwidthReport,
    /// Sufficient treatment value of every kept observation (first tie).
    pub sufficient_values: Vec<f64>,
    pub phi_u: Vec<Vec<f64>>,
    pub phi_l: Vec<Vec<f64>>,
}

impl DmlFit {
    pub fn ate(&self, j1: usize, j2: usize, alpha: f64) -> AteBounds {
        let (p1, p2) = (&self.curve.points[j1], &self.curve.points[j2]);
        dml_ate(
            BoundInfluence { d: p1.d, rho_l: p1.rho_l, rho_u: p1.rho_u, lower: &self.phi_l[j1], upper: &self.phi_u[j1] },
            BoundInfluence { d: p2.d, rho_l: p2.rho_l, rho_u: p2.rho_u, lower: &self.phi_l[j2], upper: &self.phi_u[j2] },
            alpha,
        )
    }
}

/// Switching bounds from cross-fitted influence values.
pub fn dml_ate(at1: BoundInfluence<'_>, at2: BoundInfluence<'_>, alpha: f64) -> AteBounds {
    ate_bounds(at1, at2, alpha)
}

/// Pilot selection and propensity estimates on the full sample, `[j][i]`.
fn pilot_nuisances(
    data: &Dataset,
    basis: &Basis,
    grid: &Grid,
    h1: f64,
    kernel: KernelFamily,
    pen: &PenaltySettings,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let n = data.n();
    let train = vec![true; n];
    let all: Vec<usize> = (0..n).collect();
    let sel = fit_selection(data, basis, &train, n, grid, h1, kernel, pen)?;
    let (_, tcdf, gidx) = fit_treatment(data, basis, &all, grid, h1, pen)?;
    let jn = grid.len();
    let mut s = vec![vec![0.0; n]; jn];
    let mut mu = vec![vec![0.0; n]; jn];
    for i in 0..n {
        let b = basis.row(i);
        let mut cdf: Vec<f64> = tcdf.iter().map(|f| f.probability(b)).collect();
        rearrange(&mut cdf);
        for j in 0..jn {
            s[j][i] = sel[j].probability(b);
            let (lo, hi) = gidx[j];
            mu[j][i] = (cdf[hi] - cdf[lo]) / (2.0 * h1);
        }
    }
    Ok((s, mu))
}

/// Cross-fitted bounds with covariates.
pub fn dml_bounds(data: &Dataset, grid: &Grid, config: &EstimatorConfig) -> Result<DmlFit> {
    config.validate()?;
    let cfg = &config.dml;
    let kernel = config.kernel;
    let plan = &config.bandwidth;
    let h1 = match plan.rule {
        BandwidthRule::Fixed(h) => h,
        _ => plan.pilot(data, config.folds)?,
    };
    let n_fold = (data.n() / config.folds).max(1);

    let full_basis = build_basis(data, cfg.basis_degree);
    let pen0 = PenaltySettings::new(data.n(), full_basis.p(), h1, cfg)?;
    let (s_tilde, mu_tilde) = pilot_nuisances(data, &full_basis, grid, h1, kernel, &pen0)?;
    let overlap = overlap_trim(&mu_tilde, &s_tilde, h1, n_fold, cfg)?;

    let kept = data.subset(&overlap.kept);
    let basis = build_basis(&kept, cfg.basis_degree);
    let n = kept.n();
    let pen = PenaltySettings::new(n, basis.p(), h1, cfg)?;
    let folds = assign_folds(n, config.folds, config.seed)?;
    let fits = (0..folds.folds())
        .map(|f| {
            let train: Vec<bool> = (0..n).map(|i| folds.folds() == 1 || folds.fold_of(i) != f).collect();
            fit_nuisances(&kept, &basis, &train, grid, h1, kernel, config.nu, cfg, &pen)
        })
        .collect::<Result<Vec<_>>>()?;
    let y_range = kept
        .selected_outcome_range()
        .ok_or_else(|| LeeError::Validation("no selected observations after trimming".into()))?;
    let nuis = CrossFitNuisance::new(&basis, &folds, fits, overlap.trim_gps, y_range);
    let set = MomentSettings { kernel, nu: config.nu, tie_tolerance: cfg.tie_tolerance };

    let jn = grid.len();
    let mut report = BandwidthReport { h1, fallback: vec![false; jn], ..Default::default() };
    match plan.rule {
        BandwidthRule::Fixed(h) => report.h = vec![h; jn],
        BandwidthRule::RuleOfThumb => report.h = vec![undersmooth(h1, h1, plan.undersmooth_factor); jn],
        BandwidthRule::Amse => {
            let b = h1 / plan.a;
            for jd in 0..jn {
                let pb = dml_point(&kept, &nuis, grid, jd, b, &set).map_err(LeeError::at_grid(jd))?;
                let p1 = dml_point(&kept, &nuis, grid, jd, h1, &set).map_err(LeeError::at_grid(jd))?;
                let bu = bias_estimate(pb.rho_u, p1.rho_u, b, plan.a)?;
                let bl = bias_estimate(pb.rho_l, p1.rho_l, b, plan.a)?;
                let vu = h1 * centered_variance(&p1.phi_u);
                let vl = h1 * centered_variance(&p1.phi_l);
                let hu = amse_bandwidth(vu, bu, n);
                let hl = amse_bandwidth(vl, bl, n);
                report.fallback[jd] = hu.is_none() || hl.is_none();
                let mut h = undersmooth(hl.unwrap_or(h1), hu.unwrap_or(h1), plan.undersmooth_factor);
                if let Some(r) = plan.max_ratio {
                    h = h.min(r * h1);
                }
                report.h.push(h);
                report.bias_u.push(bu);
                report.bias_l.push(bl);
                report.var_u.push(vu);
                report.var_l.push(vl);
            }
        }
    }

    let z = config.z();
    let results: Vec<DmlPoint> = (0..jn)
        .map(|jd| dml_point(&kept, &nuis, grid, jd, report.h[jd], &set).map_err(LeeError::at_grid(jd)))
        .collect::<Result<_>>()?;

    let first_ties: Vec<usize> = (0..n)
        .map(|i| {
            let s: Vec<f64> = (0..jn).map(|j| nuis.selection(j, i)).collect();
            classify_sufficient(&s, cfg.tie_tolerance)[0]
        })
        .collect();
    let mut counts = vec![0usize; jn];
    for &j in &first_ties {
        counts[j] += 1;
    }
    let d_at_index = counts.iter().enumerate().max_by_key(|(_, c)| **c).map_or(0, |(j, _)| j);

    let mut points = Vec::with_capacity(jn);
    for (jd, r) in results.iter().enumerate() {
        let d = grid.points()[jd];
        let (se_l, se_u) = (r.se_lower(), r.se_upper());
        let (ci_low, ci_high) = inference::bounds_ci_se(r.rho_l, r.rho_u, se_l, se_u, z);
        let s_mean = (0..n).map(|i| nuis.selection(jd, i)).sum::<f64>() / n as f64;
        points.push(BoundsPoint {
            d,
            rho_l: r.rho_l,
            rho_u: r.rho_u,
            beta_point: f64::NAN,
            p_trim: r.pi_hat / s_mean,
            se_l,
            se_u,
            ci_low,
            ci_high,
            h: report.h[jd],
            s_hat: s_mean,
            f_hat: f64::NAN,
            q_l: f64::NAN,
            q_u: f64::NAN,
            collapsed: false,
        });
    }
    let pi_hat = results.first().map_or(f64::NAN, |r| r.pi_hat);
    let curve = BoundsCurve {
        points,
        d_at: grid.points()[d_at_index],
        d_at_index,
        pi_hat,
        alpha: config.alpha,
        n,
        sufficient_set: None,
        sharp: true,
    };
    Ok(DmlFit {
        curve,
        overlap,
        bandwidth: report,
        sufficient_values: first_ties.iter().map(|&j| grid.points()[j]).collect(),
        phi_u: results.iter().map(|r| r.phi_u.clone()).collect(),
        phi_l: results.into_iter().map(|r| r.phi_l).collect(),
    })
}

/// Non-sharp aggregate bounds for a conditional sufficient set `D_M`: the
/// always-taker share at `x` is bracketed by the Frechet interval of
/// `{s(d_m, x)}` and the raw moments are reweighted accordingly.
pub fn dml_set_bounds(
    data: &Dataset,
    nuis: &dyn ConditionalNuisance,
    grid: &Grid,
    members: &[usize],
    h: &[f64],
    set: &MomentSettings,
) -> Result<Vec<(f64, f64)>> {
    let n = data.n();
    let pts = grid.points();
    let m = members.len() as f64;
    let mut out = Vec::with_capacity(grid.len());
    let pi_x: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let vals: Vec<f64> = members.iter().map(|&j| nuis.selection(j, i)).collect();
            let lo = (vals.iter().sum::<f64>() - m + 1.0).max(0.0);
            let hi = vals.iter().copied().fold(f64::INFINITY, f64::min);
            (lo, hi)
        })
        .collect();
    let pi_l = pi_x.iter().map(|v| v.0).sum::<f64>() / n as f64;
    let pi_u = pi_x.iter().map(|v| v.1).sum::<f64>() / n as f64;
    if !(pi_l > 0.0) {
        return Err(LeeError::Overlap("Frechet lower bound on the always-taker share is zero".into()));
    }
    for (jd, &d) in pts.iter().enumerate() {
        let (mut up, mut lo) = (0.0, 0.0);
        for (i, &(pl, pu)) in pi_x.iter().enumerate() {
            if pl <= 0.0 || !data.selected(i) {
                continue;
            }
            let s_d = nuis.selection(jd, i);
            let p = (pl / s_d).min(1.0) - set.nu;
            let k = set.kernel.scaled(data.d(i) - d, h[jd]);
            if k == 0.0 || p <= 0.0 {
                continue;
            }
            let mu = nuis.gps(jd, i);
            let y = data.y(i);
            let qu = nuis.quantile(jd, 1.0 - p, i);
            let ql = nuis.quantile(jd, p, i);
            up += moment_m(1, y, k, mu, qu, Side::Upper, true) * pu / pl;
            lo += moment_m(1, y, k, mu, ql, Side::Lower, true);
        }
        out.push((lo / n as f64 / pi_u, up / n as f64 / pi_l));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_moments() {
        assert_eq!(moment_m(0, 5.0, 0.5, 1.0, 0.0, Side::Upper, true), 0.0);
        assert_eq!(moment_m(1, 2.0, 0.5, 1.0, 1.0, Side::Upper, true), 1.0);
        assert_eq!(moment_m(1, 2.0, 0.5, 1.0, 3.0, Side::Upper, true), 0.0);
        assert!((psi_pi(1, 0.5, 1.0, 0.7) - 0.85).abs() < 1e-15);
        assert_eq!(psi_pi(1, 0.3, 0.9, 1.0), 1.0);

        let nu = LocalNuisance { s_j: 0.6, s_d: 0.8, mu_j: 1.0, mu_d: 1.3, q: 0.0, rho: 2.0 };
        assert_eq!(correction(1, 3.0, 1.3, 0.2, &nu, 1.0, Side::Upper, false), 0.0);
    }

    #[test]
    fn correction_vanishes_at_zero_residuals() {
        // S equals both selection probabilities, the tail indicator equals p
        // (via a fractional-free construction p = 1) and K = mu.
        let nu = LocalNuisance { s_j: 1.0, s_d: 1.0, mu_j: 0.7, mu_d: 0.7, q: 0.4, rho: 1.5 };
        let c = correction(1, 0.9, 0.7, 0.7, &nu, 1.0, Side::Upper, true);
        assert!(c.abs() < 1e-15);
    }

    #[test]
    fn classification_ties() {
        assert_eq!(classify_sufficient(&[0.5, 0.6, 0.7], 1e-6), vec![0]);
        assert_eq!(classify_sufficient(&[0.5; 3], 1e-6), vec![0, 1, 2]);
        assert_eq!(classify_sufficient(&[0.9, 0.4, 0.4 + 1e-9], 1e-6), vec![1, 2]);
    }

    #[test]
    fn trim_full_overlap_keeps_everything() {
        let mu = vec![vec![1.0; 5]; 3];
        let s = vec![vec![0.5; 5]; 3];
        let r = overlap_trim(&mu, &s, 1.0, 50, &DmlConfig::default()).unwrap();
        assert_eq!(r.kept.len(), 5);
        assert_eq!((r.dropped_gps, r.dropped_selection), (0, 0));

        let s0 = vec![vec![0.01; 5]; 3];
        assert!(overlap_trim(&mu, &s0, 1.0, 50, &DmlConfig::default()).is_err());
    }

    #[test]
    fn trim_threshold_formula() {
        let cfg = DmlConfig::default();
        let mu = vec![vec![1.0; 2]];
        let r = overlap_trim(&mu, &mu, 306.0, 402, &cfg).unwrap();
        assert!((r.trim_gps - 0.75 / 5f64.sqrt() / (0.05 * 402.0 * 306.0)).abs() < 1e-15);
        assert!((r.trim_gps - 0.000055).abs() < 1e-6);
    }
}
