//! Bounds without covariates: selection curve, sufficient treatment value,
//! Frechet-Hoeffding interval for sufficient sets, trimming and the
//! cross-fitted trimmed-mean bounds over a grid.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::EstimatorConfig;
use crate::data::{assign_folds, Dataset, FoldAssignment, Grid};
use crate::error::{LeeError, Result};
use crate::inference;
use crate::kernel::{
    amse_bandwidth, bias_estimate, undersmooth, BandwidthRule, KernelFamily, WeightedSample,
};

/// Absolute tolerance for declaring two selection estimates tied.
pub const DEGENERATE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Upper,
    Lower,
}

/// Selection probabilities on the grid, full-sample and per-fold leave-out.
#[derive(Debug, Clone, Serialize)]
pub struct SelectionCurve {
    pub grid: Grid,
    pub h: Vec<f64>,
    pub s_hat: Vec<f64>,
    /// `s_fold[l][j]`: estimate at `d_j` from observations outside fold `l`.
    pub s_fold: Vec<Vec<f64>>,
    pub f_hat: Vec<f64>,
}

pub fn selection_curve(
    data: &Dataset,
    grid: &Grid,
    bandwidths: &[f64],
    kernel: KernelFamily,
    folds: &FoldAssignment,
) -> Result<SelectionCurve> {
    let l = folds.folds();
    let n = data.n() as f64;
    let per_point: Vec<(f64, Vec<f64>, f64)> = grid
        .points()
        .par_iter()
        .zip(bandwidths.par_iter())
        .enumerate()
        .map(|(j, (&d, &h))| {
            let mut a = vec![0.0; l];
            let mut b = vec![0.0; l];
            for &i in data.window(d, h * kernel.radius()) {
                let w = kernel.scaled(data.d(i) - d, h);
                let f = folds.fold_of(i);
                a[f] += w;
                b[f] += w * data.s(i) as f64;
            }
            let (at, bt): (f64, f64) = (a.iter().sum(), b.iter().sum());
            if at <= 0.0 {
                return Err(LeeError::EmptyWindow { d, h, what: "no treatment mass" })
                    .map_err(LeeError::at_grid(j));
            }
            let s = bt / at;
            let leave_out = (0..l)
                .map(|f| {
                    if l == 1 {
                        return Ok(s);
                    }
                    let den = at - a[f];
                    if den <= 0.0 {
                        return Err(LeeError::EmptyWindow {
                            d,
                            h,
                            what: "no treatment mass outside the fold",
                        })
                        .map_err(LeeError::at_grid(j));
                    }
                    Ok((bt - b[f]) / den)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((s, leave_out, at / n))
        })
        .collect::<Result<_>>()?;

    let mut s_hat = Vec::with_capacity(grid.len());
    let mut f_hat = Vec::with_capacity(grid.len());
    let mut s_fold = vec![Vec::with_capacity(grid.len()); l];
    for (s, leave_out, f) in per_point {
        s_hat.push(s);
        f_hat.push(f);
        for (fold, v) in leave_out.into_iter().enumerate() {
            s_fold[fold].push(v);
        }
    }
    Ok(SelectionCurve {
        grid: grid.clone(),
        h: bandwidths.to_vec(),
        s_hat,
        s_fold,
        f_hat,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SufficientValue {
    pub index: usize,
    pub pi_hat: f64,
    /// All indices within [`DEGENERATE_TOL`] of the minimum.
    pub degenerate_set: Vec<usize>,
}

/// Grid argmin of the selection curve; ties go to the smallest index.
pub fn sufficient_value(s_hat: &[f64]) -> SufficientValue {
    let mut index = 0;
    for (j, &s) in s_hat.iter().enumerate() {
        if s < s_hat[index] {
            index = j;
        }
    }
    let pi_hat = s_hat[index];
    let degenerate_set = s_hat
        .iter()
        .enumerate()
        .filter(|(_, &s)| s - pi_hat <= DEGENERATE_TOL)
        .map(|(j, _)| j)
        .collect();
    SufficientValue {
        index,
        pi_hat,
        degenerate_set,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrechetInterval {
    pub pi_l: f64,
    pub pi_u: f64,
    pub m: usize,
    /// Grid indices of the sufficient set, when built from a grid.
    pub members: Vec<usize>,
}

pub fn frechet_interval(s_values: &[f64]) -> Result<FrechetInterval> {
    if s_values.is_empty() {
        return Err(LeeError::Argument("sufficient set must not be empty".into()));
    }
    if let Some(s) = s_values.iter().find(|s| !(0.0..=1.0).contains(*s)) {
        return Err(LeeError::Argument(format!("selection probability {s} outside [0, 1]")));
    }
    let m = s_values.len();
    let sum: f64 = s_values.iter().sum();
    let pi_u = s_values.iter().copied().fold(f64::INFINITY, f64::min);
    let pi_l = if m == 1 { pi_u } else { (sum - m as f64 + 1.0).max(0.0) };
    Ok(FrechetInterval {
        pi_l,
        pi_u,
        m,
        members: Vec::new(),
    })
}

/// `min(pi / s_d, 1) - nu`.
pub fn trimming_probability(pi: f64, s_d: f64, nu: f64) -> Result<f64> {
    if !(s_d > 0.0) {
        return Err(LeeError::Overlap(format!(
            "selection probability {s_d} is not positive"
        )));
    }
    Ok((pi / s_d).min(1.0) - nu)
}

/// Cut point and boundary-atom share for one leave-out sample.
#[derive(Debug, Clone, Copy)]
struct Cut {
    q: f64,
    theta: f64,
}

impl Cut {
    #[inline]
    fn upper(&self, y: f64) -> f64 {
        if y > self.q {
            1.0
        } else if y == self.q {
            self.theta
        } else {
            0.0
        }
    }

    #[inline]
    fn lower(&self, y: f64) -> f64 {
        if y < self.q {
            1.0
        } else if y == self.q {
            self.theta
        } else {
            0.0
        }
    }
}

/// Both trimmed bounds at `d`. Observations in fold `l` are trimmed at the
/// quantile of the sample outside `l`, computed with that fold's trimming
/// probability `fold_p[l]`; the result is normalized by the full-sample `p`.
///
/// Outcomes tied with a cut enter with the fractional weight that makes the
/// leave-out tail mass exactly `fold_p[l]`.
fn step3(
    data: &Dataset,
    d: f64,
    h: f64,
    kernel: KernelFamily,
    p: f64,
    fold_p: &[f64],
    folds: &FoldAssignment,
) -> Result<(f64, f64)> {
    let l = folds.folds();
    let window: Vec<(usize, f64, f64)> = data
        .window(d, h * kernel.radius())
        .iter()
        .filter(|&&i| data.selected(i))
        .map(|&i| (folds.fold_of(i), data.y(i), kernel.scaled(data.d(i) - d, h)))
        .filter(|&(_, _, w)| w > 0.0)
        .collect();
    if window.is_empty() {
        return Err(LeeError::EmptyWindow {
            d,
            h,
            what: "no selected observations",
        });
    }
    let mut upper_cuts = Vec::with_capacity(l);
    let mut lower_cuts = Vec::with_capacity(l);
    for (f, &pf) in fold_p.iter().enumerate() {
        let sample = WeightedSample::new(
            window
                .iter()
                .filter(|&&(fi, _, _)| l == 1 || fi != f)
                .map(|&(_, y, w)| (y, w))
                .collect(),
        );
        if sample.is_empty() {
            return Err(LeeError::EmptyWindow {
                d,
                h,
                what: "no selected observations outside the fold",
            });
        }
        let (_, q, theta) = sample.upper_trimmed(pf);
        upper_cuts.push(Cut { q, theta });
        let (_, q, theta) = sample.lower_trimmed(pf);
        lower_cuts.push(Cut { q, theta });
    }
    let (mut den, mut num_u, mut num_l) = (0.0, 0.0, 0.0);
    for &(f, y, w) in &window {
        let f = if l == 1 { 0 } else { f };
        den += w;
        num_u += w * y * upper_cuts[f].upper(y);
        num_l += w * y * lower_cuts[f].lower(y);
    }
    Ok((num_u / den / p, num_l / den / p))
}

/// Cross-fitted trimmed-mean bound at `d` for one side.
///
/// `p` is the full-sample trimming probability and `fold_p[l]` the one
/// estimated without fold `l`. With `p = 1` and no fold trimming this is the
/// local mean of selected outcomes.
#[allow(clippy::too_many_arguments)]
pub fn trimmed_bound(
    data: &Dataset,
    d: f64,
    h: f64,
    kernel: KernelFamily,
    side: Side,
    p: f64,
    fold_p: &[f64],
    folds: &FoldAssignment,
) -> Result<f64> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(LeeError::Argument(format!("trimming probability must lie in (0, 1], got {p}")));
    }
    if fold_p.len() != folds.folds() {
        return Err(LeeError::Argument("one trimming probability per fold required".into()));
    }
    let (u, lo) = step3(data, d, h, kernel, p, fold_p, folds)?;
    Ok(match side {
        Side::Upper => u,
        Side::Lower => lo,
    })
}

/// `(max(0, 1 - (1 - p_y1) / p_d), min(1, p_y1 / p_d))` for a binary outcome.
pub fn binary_outcome_bounds(p_y1: f64, p_d: f64) -> Result<(f64, f64)> {
    if !(p_d > 0.0 && p_d <= 1.0) {
        return Err(LeeError::Argument(format!("p_d must lie in (0, 1], got {p_d}")));
    }
    if !(0.0..=1.0).contains(&p_y1) {
        return Err(LeeError::Argument(format!("p_y1 must lie in [0, 1], got {p_y1}")));
    }
    Ok((
        (1.0 - (1.0 - p_y1) / p_d).max(0.0),
        (p_y1 / p_d).min(1.0),
    ))
}

/// One row of a bounds curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsPoint {
    pub d: f64,
    pub rho_l: f64,
    pub rho_u: f64,
    /// Untrimmed local mean of selected outcomes.
    pub beta_point: f64,
    pub p_trim: f64,
    pub se_l: f64,
    pub se_u: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub h: f64,
    pub s_hat: f64,
    pub f_hat: f64,
    pub q_l: f64,
    pub q_u: f64,
    /// Bounds collapsed to the point estimate (sufficient value).
    pub collapsed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsCurve {
    pub points: Vec<BoundsPoint>,
    pub d_at: f64,
    pub d_at_index: usize,
    pub pi_hat: f64,
    pub alpha: f64,
    pub n: usize,
    /// Set when the bounds use a Frechet lower bound on the always-taker share.
    pub sufficient_set: Option<Vec<f64>>,
    /// False for the aggregate conditional sufficient-set bounds.
    pub sharp: bool,
}

impl BoundsCurve {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn grid(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.d).collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BandwidthReport {
    pub h1: f64,
    pub h: Vec<f64>,
    /// Grid points where the AMSE rule fell back to `h1`.
    pub fallback: Vec<bool>,
    pub bias_u: Vec<f64>,
    pub bias_l: Vec<f64>,
    pub var_u: Vec<f64>,
    pub var_l: Vec<f64>,
}

/// No-covariate fit with everything needed for inference.
#[derive(Debug, Clone)]
pub struct NocovFit {
    pub curve: BoundsCurve,
    pub selection: SelectionCurve,
    pub sufficient: SufficientValue,
    pub set: Option<FrechetInterval>,
    pub kernel: KernelFamily,
    pub nu: f64,
    pub bandwidth: BandwidthReport,
}

impl NocovFit {
    pub fn pi_members(&self) -> Vec<usize> {
        match &self.set {
            Some(f) => f.members.clone(),
            None => vec![self.sufficient.index],
        }
    }
}

fn sufficient_members(grid: &Grid, values: &[f64], d_at: usize) -> Vec<usize> {
    let mut members: Vec<usize> = values.iter().map(|&v| grid.nearest_index(v)).collect();
    members.push(d_at);
    members.sort_unstable();
    members.dedup();
    members
}

/// Full pipeline: bandwidth choice, folds, estimates and standard errors.
pub fn bounds_curve_nocov(
    data: &Dataset,
    grid: &Grid,
    config: &EstimatorConfig,
) -> Result<NocovFit> {
    config.validate()?;
    let folds = assign_folds(data.n(), config.folds, config.seed)?;
    let report = select_bandwidths_nocov(data, grid, &folds, config)?;
    let mut fit = fit_nocov(data, grid, &report.h, &folds, config)?;
    fit.bandwidth = report;
    Ok(fit)
}

/// Per-grid-point bandwidths for the no-covariate estimator.
pub fn select_bandwidths_nocov(
    data: &Dataset,
    grid: &Grid,
    folds: &FoldAssignment,
    config: &EstimatorConfig,
) -> Result<BandwidthReport> {
    let plan = &config.bandwidth;
    let j = grid.len();
    let h1 = match plan.rule {
        BandwidthRule::Fixed(h) => h,
        _ => plan.pilot(data, folds.folds())?,
    };
    let mut report = BandwidthReport {
        h1,
        fallback: vec![false; j],
        ..Default::default()
    };
    match plan.rule {
        BandwidthRule::Fixed(h) => report.h = vec![h; j],
        BandwidthRule::RuleOfThumb => report.h = vec![undersmooth(h1, h1, plan.undersmooth_factor); j],
        BandwidthRule::Amse => {
            let b = h1 / plan.a;
            let at_b = fit_nocov(data, grid, &vec![b; j], folds, config)?;
            let at_h1 = fit_nocov(data, grid, &vec![h1; j], folds, config)?;
            let n = data.n();
            for (pb, p1) in at_b.curve.points.iter().zip(&at_h1.curve.points) {
                let bu = bias_estimate(pb.rho_u, p1.rho_u, b, plan.a)?;
                let bl = bias_estimate(pb.rho_l, p1.rho_l, b, plan.a)?;
                let vu = h1 * n as f64 * p1.se_u * p1.se_u;
                let vl = h1 * n as f64 * p1.se_l * p1.se_l;
                let hu = amse_bandwidth(vu, bu, n);
                let hl = amse_bandwidth(vl, bl, n);
                let fell_back = hu.is_none() || hl.is_none();
                let mut h = undersmooth(hl.unwrap_or(h1), hu.unwrap_or(h1), plan.undersmooth_factor);
                if let Some(r) = plan.max_ratio {
                    h = h.min(r * h1);
                }
                report.h.push(h);
                report.fallback[report.h.len() - 1] = fell_back;
                report.bias_u.push(bu);
                report.bias_l.push(bl);
                report.var_u.push(vu);
                report.var_l.push(vl);
            }
        }
    }
    Ok(report)
}

/// Estimates and standard errors at the given per-point bandwidths.
pub fn fit_nocov(
    data: &Dataset,
    grid: &Grid,
    bandwidths: &[f64],
    folds: &FoldAssignment,
    config: &EstimatorConfig,
) -> Result<NocovFit> {
    if bandwidths.len() != grid.len() {
        return Err(LeeError::Argument("one bandwidth per grid point required".into()));
    }
    if let Some((j, h)) = bandwidths.iter().enumerate().find(|(_, h)| !(**h > 0.0)) {
        return Err(LeeError::Argument(format!("bandwidth at grid index {j} is {h}")));
    }
    let kernel = config.kernel;
    let nu = config.nu;
    let selection = selection_curve(data, grid, bandwidths, kernel, folds)?;
    let sufficient = sufficient_value(&selection.s_hat);
    let j_at = sufficient.index;

    let set = match &config.sufficient_set {
        Some(values) => {
            let members = sufficient_members(grid, values, j_at);
            let vals: Vec<f64> = members.iter().map(|&m| selection.s_hat[m]).collect();
            let mut f = frechet_interval(&vals)?;
            f.members = members;
            if !(f.pi_l > 0.0) {
                return Err(LeeError::Overlap(
                    "Frechet lower bound on the always-taker share is zero".into(),
                ));
            }
            Some(f)
        }
        None => None,
    };
    let pi_full = set.as_ref().map_or(sufficient.pi_hat, |f| f.pi_l);
    let pi_fold: Vec<f64> = selection
        .s_fold
        .iter()
        .map(|sf| match &set {
            Some(f) => {
                let vals: Vec<f64> = f.members.iter().map(|&m| sf[m]).collect();
                frechet_interval(&vals).map(|fi| fi.pi_l)
            }
            None => Ok(sf[j_at]),
        })
        .collect::<Result<_>>()?;

    let points: Vec<BoundsPoint> = (0..grid.len())
        .into_par_iter()
        .map(|j| {
            let d = grid.points()[j];
            let h = bandwidths[j];
            let full = WeightedSample::local(data, d, h, kernel, None);
            if full.is_empty() {
                return Err(LeeError::EmptyWindow {
                    d,
                    h,
                    what: "no selected observations",
                });
            }
            let beta = full.mean();
            let mut pt = BoundsPoint {
                d,
                rho_l: beta,
                rho_u: beta,
                beta_point: beta,
                p_trim: 1.0,
                se_l: f64::NAN,
                se_u: f64::NAN,
                ci_low: f64::NAN,
                ci_high: f64::NAN,
                h,
                s_hat: selection.s_hat[j],
                f_hat: selection.f_hat[j],
                q_l: beta,
                q_u: beta,
                collapsed: set.is_none() && j == j_at,
            };
            if pt.collapsed {
                return Ok(pt);
            }
            let p = trimming_probability(pi_full, selection.s_hat[j], nu)?;
            let fold_p = selection
                .s_fold
                .iter()
                .zip(&pi_fold)
                .map(|(sf, &pi)| trimming_probability(pi, sf[j], nu))
                .collect::<Result<Vec<_>>>()?;
            if let Some(bad) = std::iter::once(&p).chain(&fold_p).find(|&&v| !(v > 0.0)) {
                return Err(LeeError::Overlap(format!(
                    "trimming probability {bad} is not positive; increase the always-taker share or lower nu"
                )));
            }
            let (rho_u, rho_l) = step3(data, d, h, kernel, p, &fold_p, folds)?;
            pt.rho_u = rho_u;
            pt.rho_l = rho_l;
            pt.p_trim = p;
            pt.q_u = full.quantile(1.0 - p);
            pt.q_l = full.quantile(p);
            Ok(pt)
        })
        .enumerate()
        .map(|(j, r)| r.map_err(LeeError::at_grid(j)))
        .collect::<Result<_>>()?;

    let curve = BoundsCurve {
        d_at: grid.points()[j_at],
        d_at_index: j_at,
        pi_hat: pi_full,
        alpha: config.alpha,
        n: data.n(),
        sufficient_set: set
            .as_ref()
            .map(|f| f.members.iter().map(|&m| grid.points()[m]).collect()),
        sharp: true,
        points,
    };
    let mut fit = NocovFit {
        curve,
        selection,
        sufficient,
        set,
        kernel,
        nu,
        bandwidth: BandwidthReport {
            h: bandwidths.to_vec(),
            fallback: vec![false; grid.len()],
            ..Default::default()
        },
    };
    let z = config.z();
    let ses: Vec<(f64, f64)> = (0..grid.len())
        .into_par_iter()
        .map(|j| {
            let inf = inference::influence_values(data, &fit, j);
            (inf.se_lower(), inf.se_upper())
        })
        .collect();
    for (pt, (se_l, se_u)) in fit.curve.points.iter_mut().zip(ses) {
        pt.se_l = se_l;
        pt.se_u = se_u;
        let (lo, hi) = inference::bounds_ci_se(pt.rho_l, pt.rho_u, se_l, se_u, z);
        pt.ci_low = lo;
        pt.ci_high = hi;
    }
    Ok(fit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_grid, Observation};
    use crate::kernel::BandwidthPlan;

    #[test]
    fn argmin_and_ties() {
        let sv = sufficient_value(&[0.9, 0.81, 0.85]);
        assert_eq!((sv.index, sv.pi_hat), (1, 0.81));
        assert_eq!(sv.degenerate_set, vec![1]);
        let sv = sufficient_value(&[0.7; 4]);
        assert_eq!(sv.index, 0);
        assert_eq!(sv.degenerate_set, vec![0, 1, 2, 3]);
    }

    #[test]
    fn frechet_examples() {
        let f = frechet_interval(&[0.8082, 0.8498]).unwrap();
        assert!((f.pi_l - 0.658).abs() < 1e-3);
        assert_eq!(f.pi_u, 0.8082);
        assert_eq!(frechet_interval(&[0.5, 0.5, 0.5]).unwrap().pi_l, 0.0);
        let f = frechet_interval(&[0.7]).unwrap();
        assert_eq!((f.pi_l, f.pi_u), (0.7, 0.7));
        assert!(frechet_interval(&[1.2]).is_err());
    }

    #[test]
    fn trimming_examples() {
        assert!((trimming_probability(0.8, 0.9, 0.01).unwrap() - (0.8 / 0.9 - 0.01)).abs() < 1e-15);
        assert!((trimming_probability(0.6, 0.6, 0.01).unwrap() - 0.99).abs() < 1e-15);
        assert!((trimming_probability(0.85, 0.8, 0.01).unwrap() - 0.99).abs() < 1e-15);
        assert!(matches!(trimming_probability(0.5, 0.0, 0.01), Err(LeeError::Overlap(_))));
    }

    #[test]
    fn binary_examples() {
        let (l, u) = binary_outcome_bounds(0.6, 0.8).unwrap();
        assert!((l - 0.5).abs() < 1e-12 && (u - 0.75).abs() < 1e-12);
        let (l, u) = binary_outcome_bounds(0.3, 1.0).unwrap();
        assert!((l - 0.3).abs() < 1e-15 && u == 0.3);
        let (l, u) = binary_outcome_bounds(0.1, 0.5).unwrap();
        assert_eq!(l, 0.0);
        assert!((u - 0.2).abs() < 1e-12);
        assert!(binary_outcome_bounds(0.1, 0.0).is_err());
    }

    fn five_point() -> Dataset {
        let obs = (1..=5)
            .map(|y| Observation { d: 0.0, s: 1, y: y as f64, x: vec![] })
            .collect();
        Dataset::from_observations(obs, vec![]).unwrap()
    }

    #[test]
    fn trimmed_bound_five_points() {
        let data = five_point();
        let folds = FoldAssignment::whole(5);
        let k = KernelFamily::EpanechnikovUnit;
        let u = trimmed_bound(&data, 0.0, 1.0, k, Side::Upper, 0.4, &[0.4], &folds).unwrap();
        assert!((u - 4.5).abs() < 1e-12);
        let l = trimmed_bound(&data, 0.0, 1.0, k, Side::Lower, 0.4, &[0.4], &folds).unwrap();
        assert!((l - 1.5).abs() < 1e-12);
        let m = trimmed_bound(&data, 0.0, 1.0, k, Side::Upper, 1.0, &[1.0], &folds).unwrap();
        assert!((m - 3.0).abs() < 1e-12);
    }

    #[test]
    fn constant_selection_gives_point_bounds() {
        let mut obs = Vec::new();
        for i in 0..2000 {
            let d = (i % 100) as f64 / 99.0;
            obs.push(Observation { d, s: 1, y: ((i * 7919) % 113) as f64 / 113.0, x: vec![] });
        }
        let data = Dataset::from_observations(obs, vec![]).unwrap();
        let grid = build_grid(0.2, 0.8, 5).unwrap();
        let config = EstimatorConfig {
            bandwidth: BandwidthPlan { rule: BandwidthRule::Fixed(0.1), ..Default::default() },
            nu: 0.0,
            folds: 1,
            ..Default::default()
        };
        let fit = bounds_curve_nocov(&data, &grid, &config).unwrap();
        for p in &fit.curve.points {
            assert!((p.rho_u - p.beta_point).abs() < 1e-12);
            assert!((p.rho_l - p.beta_point).abs() < 1e-12);
        }
    }
}
