//! Kernels, Nadaraya-Watson local estimators and bandwidth rules.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, FoldAssignment};
use crate::error::{LeeError, Result};

const SQRT5: f64 = 2.236_067_977_499_79;

/// Epanechnikov kernel on `[-1, 1]` or its variance-one rescaling on
/// `[-sqrt 5, sqrt 5]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    #[default]
    EpanechnikovUnit,
    EpanechnikovSqrt5,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelConstants {
    /// Second moment, `int u^2 k(u) du`.
    pub kappa: f64,
    /// Roughness, `int k(u)^2 du`.
    pub roughness: f64,
    /// Peak value `max k`.
    pub k_bar: f64,
}

impl KernelFamily {
    /// Half-width of the support.
    #[inline]
    pub fn radius(self) -> f64 {
        match self {
            KernelFamily::EpanechnikovUnit => 1.0,
            KernelFamily::EpanechnikovSqrt5 => SQRT5,
        }
    }

    #[inline]
    pub fn weight(self, u: f64) -> f64 {
        match self {
            KernelFamily::EpanechnikovUnit => {
                if u.abs() <= 1.0 {
                    0.75 * (1.0 - u * u)
                } else {
                    0.0
                }
            }
            KernelFamily::EpanechnikovSqrt5 => {
                if u.abs() <= SQRT5 {
                    0.75 / SQRT5 * (1.0 - u * u / 5.0)
                } else {
                    0.0
                }
            }
        }
    }

    /// `K_h(v) = k(v / h) / h`.
    #[inline]
    pub fn scaled(self, v: f64, h: f64) -> f64 {
        self.weight(v / h) / h
    }

    pub fn constants(self) -> KernelConstants {
        match self {
            KernelFamily::EpanechnikovUnit => KernelConstants {
                kappa: 0.2,
                roughness: 0.6,
                k_bar: 0.75,
            },
            KernelFamily::EpanechnikovSqrt5 => KernelConstants {
                kappa: 1.0,
                roughness: 3.0 / (5.0 * SQRT5),
                k_bar: 0.75 / SQRT5,
            },
        }
    }
}

pub fn kernel_weight(u: f64, family: KernelFamily) -> f64 {
    family.weight(u)
}

pub fn kernel_constants(family: KernelFamily) -> KernelConstants {
    family.constants()
}

/// Quantity averaged by [`local_mean`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LocalTarget {
    /// `E[S | D = d]`.
    Selection,
    /// `E[Y | D = d, S = 1]`.
    OutcomeGivenSelected,
    /// `P(Y <= y | D = d, S = 1)`.
    Indicator(f64),
}

/// Observations excluded from a local estimate: every member of `fold`.
#[derive(Debug, Clone, Copy)]
pub struct Exclude<'a> {
    pub folds: &'a FoldAssignment,
    pub fold: usize,
}

#[inline]
fn kept(exclude: Option<Exclude<'_>>, i: usize) -> bool {
    match exclude {
        Some(e) => e.folds.folds() == 1 || e.folds.fold_of(i) != e.fold,
        None => true,
    }
}

/// Nadaraya-Watson estimate at `d`.
///
/// When `exclude` names a fold the estimate uses the complement of that fold;
/// a single-fold assignment excludes nothing.
pub fn local_mean(
    data: &Dataset,
    target: LocalTarget,
    d: f64,
    h: f64,
    kernel: KernelFamily,
    exclude: Option<Exclude<'_>>,
) -> Result<f64> {
    let mut num = 0.0;
    let mut den = 0.0;
    for &i in data.window(d, h * kernel.radius()) {
        if !kept(exclude, i) {
            continue;
        }
        let w = kernel.scaled(data.d(i) - d, h);
        match target {
            LocalTarget::Selection => {
                den += w;
                num += w * data.s(i) as f64;
            }
            LocalTarget::OutcomeGivenSelected => {
                if data.selected(i) {
                    den += w;
                    num += w * data.y(i);
                }
            }
            LocalTarget::Indicator(y) => {
                if data.selected(i) {
                    den += w;
                    if data.y(i) <= y {
                        num += w;
                    }
                }
            }
        }
    }
    if den <= 0.0 {
        let what = match target {
            LocalTarget::Selection => "no treatment mass",
            _ => "no selected observations",
        };
        return Err(LeeError::EmptyWindow { d, h, what });
    }
    Ok(num / den)
}

/// Kernel density of the treatment at `d`, `n^-1 sum K_h(D_i - d)`.
pub fn local_density(data: &Dataset, d: f64, h: f64, kernel: KernelFamily) -> f64 {
    let sum: f64 = data
        .window(d, h * kernel.radius())
        .iter()
        .map(|&i| kernel.scaled(data.d(i) - d, h))
        .sum();
    sum / data.n() as f64
}

/// Kernel-weighted sample of selected outcomes, sorted by outcome.
#[derive(Debug, Clone, Default)]
pub struct WeightedSample {
    ys: Vec<f64>,
    ws: Vec<f64>,
    total: f64,
}

/// Relative slack used when comparing cumulative weights to a probability.
const CUM_TOL: f64 = 1e-12;

impl WeightedSample {
    /// Build from `(y, weight)` pairs; zero weights are dropped and equal
    /// outcomes merged into one atom.
    pub fn new(mut pairs: Vec<(f64, f64)>) -> Self {
        pairs.retain(|&(_, w)| w > 0.0);
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut ys: Vec<f64> = Vec::with_capacity(pairs.len());
        let mut ws: Vec<f64> = Vec::with_capacity(pairs.len());
        for (y, w) in pairs {
            match ys.last() {
                Some(&last) if last == y => *ws.last_mut().unwrap() += w,
                _ => {
                    ys.push(y);
                    ws.push(w);
                }
            }
        }
        let total = ws.iter().sum();
        WeightedSample { ys, ws, total }
    }

    /// Selected observations around `d`, optionally leaving out one fold.
    pub fn local(
        data: &Dataset,
        d: f64,
        h: f64,
        kernel: KernelFamily,
        exclude: Option<Exclude<'_>>,
    ) -> Self {
        let pairs = data
            .window(d, h * kernel.radius())
            .iter()
            .filter(|&&i| data.selected(i) && kept(exclude, i))
            .map(|&i| (data.y(i), kernel.scaled(data.d(i) - d, h)))
            .collect();
        Self::new(pairs)
    }

    pub fn is_empty(&self) -> bool {
        self.ys.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    pub fn values(&self) -> &[f64] {
        &self.ys
    }

    pub fn weights(&self) -> &[f64] {
        &self.ws
    }

    pub fn mean(&self) -> f64 {
        self.ys.iter().zip(&self.ws).map(|(y, w)| y * w).sum::<f64>() / self.total
    }

    /// Weighted ECDF `F(y) = P(Y <= y)`.
    pub fn cdf(&self, y: f64) -> f64 {
        let k = self.ys.partition_point(|&v| v <= y);
        self.ws[..k].iter().sum::<f64>() / self.total
    }

    /// Index of the smallest atom with `F >= u`.
    fn quantile_index(&self, u: f64) -> usize {
        let target = u * self.total * (1.0 - CUM_TOL);
        let mut cum = 0.0;
        for (k, w) in self.ws.iter().enumerate() {
            cum += w;
            if cum >= target {
                return k;
            }
        }
        self.ys.len() - 1
    }

    /// Left-continuous generalized inverse: smallest `y` with `F(y) >= u`.
    pub fn quantile(&self, u: f64) -> f64 {
        self.ys[self.quantile_index(u)]
    }

    /// `(1/p) int_{1-p}^1 Q(u) du`: mean of the top `p` share of the mass,
    /// splitting the boundary atom.
    pub fn upper_trimmed_mean(&self, p: f64) -> f64 {
        self.upper_trimmed(p).0
    }

    /// `(1/p) int_0^p Q(u) du`.
    pub fn lower_trimmed_mean(&self, p: f64) -> f64 {
        self.lower_trimmed(p).0
    }

    /// Returns the trimmed mean, the cut point `Q(1 - p)` and the fraction of
    /// the cut atom that belongs to the upper tail.
    pub fn upper_trimmed(&self, p: f64) -> (f64, f64, f64) {
        let k = self.quantile_index(1.0 - p);
        let q = self.ys[k];
        let above: f64 = self.ws[k + 1..].iter().sum();
        let above_sum: f64 = self.ys[k + 1..]
            .iter()
            .zip(&self.ws[k + 1..])
            .map(|(y, w)| y * w)
            .sum();
        let theta = ((p * self.total - above) / self.ws[k]).clamp(0.0, 1.0);
        let mass = above + theta * self.ws[k];
        ((above_sum + theta * self.ws[k] * q) / mass, q, theta)
    }

    /// Lower-tail analogue of [`Self::upper_trimmed`] with cut `Q(p)`.
    pub fn lower_trimmed(&self, p: f64) -> (f64, f64, f64) {
        let k = self.quantile_index(p);
        let q = self.ys[k];
        let below: f64 = self.ws[..k].iter().sum();
        let below_sum: f64 = self.ys[..k]
            .iter()
            .zip(&self.ws[..k])
            .map(|(y, w)| y * w)
            .sum();
        let theta = ((p * self.total - below) / self.ws[k]).clamp(0.0, 1.0);
        let mass = below + theta * self.ws[k];
        ((below_sum + theta * self.ws[k] * q) / mass, q, theta)
    }
}

/// Kernel-weighted conditional quantile of `Y` given `D = d, S = 1`.
pub fn local_quantile(
    data: &Dataset,
    d: f64,
    h: f64,
    u: f64,
    kernel: KernelFamily,
    exclude: Option<Exclude<'_>>,
) -> Result<f64> {
    if !(u > 0.0 && u <= 1.0) {
        return Err(LeeError::Argument(format!("quantile level must lie in (0, 1], got {u}")));
    }
    let sample = WeightedSample::local(data, d, h, kernel, exclude);
    if sample.is_empty() {
        return Err(LeeError::EmptyWindow {
            d,
            h,
            what: "no selected observations",
        });
    }
    Ok(sample.quantile(u))
}

/// Rule-of-thumb pilot bandwidth `1.05 sigma n^(-1/5) c1`.
pub fn rot_bandwidth(sigma_d: f64, n_fold: usize, c1: f64) -> f64 {
    1.05 * sigma_d * (n_fold as f64).powf(-0.2) * c1
}

/// Leading bias coefficient from estimates at bandwidths `b` and `a b`.
pub fn bias_estimate(est_b: f64, est_ab: f64, b: f64, a: f64) -> Result<f64> {
    if !(a > 0.0 && a < 1.0) {
        return Err(LeeError::Argument(format!("bias ratio a must lie in (0, 1), got {a}")));
    }
    if b <= 0.0 {
        return Err(LeeError::Argument(format!("bandwidth b must be positive, got {b}")));
    }
    Ok((est_b - est_ab) / (b * b * (1.0 - a * a)))
}

/// AMSE-optimal bandwidth `(V / (4 B^2))^(1/5) n^(-1/5)`; `None` when the
/// bias estimate vanishes or the variance is not positive.
pub fn amse_bandwidth(v: f64, b: f64, n: usize) -> Option<f64> {
    if b == 0.0 || !b.is_finite() || !(v > 0.0) || !v.is_finite() {
        return None;
    }
    Some((v / (4.0 * b * b)).powf(0.2) * (n as f64).powf(-0.2))
}

pub fn undersmooth(h_l: f64, h_u: f64, factor: f64) -> f64 {
    factor * h_l.min(h_u)
}

/// Default bias-estimation ratio `sqrt(1/5)`.
pub fn default_bias_ratio() -> f64 {
    0.2f64.sqrt()
}

/// How the per-grid-point bandwidth is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule", content = "value")]
pub enum BandwidthRule {
    /// Same bandwidth everywhere.
    Fixed(f64),
    /// `undersmooth_factor * h1`.
    RuleOfThumb,
    /// Undersmoothed AMSE-optimal bandwidth per grid point.
    Amse,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BandwidthPlan {
    pub rule: BandwidthRule,
    pub c1: f64,
    pub a: f64,
    pub undersmooth_factor: f64,
    /// Optional cap on the selected bandwidth as a multiple of `h1`.
    pub max_ratio: Option<f64>,
}

impl Default for BandwidthPlan {
    fn default() -> Self {
        BandwidthPlan {
            rule: BandwidthRule::Amse,
            c1: 1.0,
            a: default_bias_ratio(),
            undersmooth_factor: 0.8,
            max_ratio: None,
        }
    }
}

impl BandwidthPlan {
    pub fn validate(&self) -> Result<()> {
        if !(self.c1 > 0.0) {
            return Err(LeeError::Argument(format!("c1 must be positive, got {}", self.c1)));
        }
        if !(self.a > 0.0 && self.a < 1.0) {
            return Err(LeeError::Argument(format!("a must lie in (0, 1), got {}", self.a)));
        }
        if !(self.undersmooth_factor > 0.0 && self.undersmooth_factor <= 1.0) {
            return Err(LeeError::Argument(format!(
                "undersmooth factor must lie in (0, 1], got {}",
                self.undersmooth_factor
            )));
        }
        if let BandwidthRule::Fixed(h) = self.rule {
            if !(h > 0.0) {
                return Err(LeeError::Argument(format!("bandwidth must be positive, got {h}")));
            }
        }
        if let Some(r) = self.max_ratio {
            if !(r > 0.0) {
                return Err(LeeError::Argument(format!("max_ratio must be positive, got {r}")));
            }
        }
        Ok(())
    }

    /// Pilot bandwidth for a sample of size `n` split into `folds` folds.
    pub fn pilot(&self, data: &Dataset, folds: usize) -> Result<f64> {
        let sigma = data.treatment_sd();
        if !(sigma > 0.0) {
            return Err(LeeError::Validation("treatment has zero variance".into()));
        }
        let n_fold = (data.n() / folds.max(1)).max(1);
        Ok(rot_bandwidth(sigma, n_fold, self.c1))
    }
}
