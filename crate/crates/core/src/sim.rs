//! Data generating processes with known bounds, oracle truths and Monte Carlo
//! coverage studies.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::bounds::{bounds_curve_nocov, BoundsCurve, Side};
use crate::config::{EstimatorConfig, Mode};
use crate::data::{CovariateColumn, CovariateKind, Dataset, Grid, Observation};
use crate::dml::{dml_bounds, ConditionalNuisance};
use crate::error::{LeeError, Result};
use crate::inference::AteBounds;
use crate::kernel::WeightedSample;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NoiseLaw {
    #[default]
    Gaussian,
    /// Uniform with unit variance.
    Uniform,
    /// No noise: `Y = m(d, x)`.
    Degenerate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SelectionShape {
    /// `q = q0 + q_d d + q_x xbar`.
    #[default]
    Linear,
    /// `q = q0 + q_d |d - xbar| + q_x xbar`: the sufficient value varies with `x`.
    Valley,
}

/// `X ~ U(0,1)^k`, `D | X` with density `1 + tilt (2 xbar - 1)(2 d - 1)` on
/// `[0, 1]`, `S = 1{eta <= q(D, X)}` with `eta ~ U(0,1)` and
/// `Y = m(D, X) + sigma eps` independent of `eta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DgpSpec {
    pub covariates: usize,
    pub selection: SelectionShape,
    pub q0: f64,
    pub q_d: f64,
    pub q_x: f64,
    pub m0: f64,
    pub m_d: f64,
    pub m_x: f64,
    pub sigma: f64,
    pub noise: NoiseLaw,
    pub treatment_tilt: f64,
}

impl Default for DgpSpec {
    fn default() -> Self {
        DgpSpec {
            covariates: 0,
            selection: SelectionShape::Linear,
            q0: 0.55,
            q_d: 0.3,
            q_x: 0.1,
            m0: 1.0,
            m_d: 1.0,
            m_x: 1.0,
            sigma: 1.0,
            noise: NoiseLaw::Gaussian,
            treatment_tilt: 0.0,
        }
    }
}

impl DgpSpec {
    pub fn canonical(covariates: usize) -> Self {
        DgpSpec { covariates, ..Default::default() }
    }

    /// Selection probability one everywhere.
    pub fn full_selection(covariates: usize) -> Self {
        DgpSpec { covariates, q0: 1.0, q_d: 0.0, q_x: 0.0, ..Default::default() }
    }

    /// Sufficient value varying with the covariates.
    pub fn heterogeneous(covariates: usize) -> Self {
        DgpSpec {
            covariates: covariates.max(1),
            selection: SelectionShape::Valley,
            q0: 0.55,
            q_d: 0.3,
            q_x: 0.1,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0) {
            return Err(LeeError::Argument("sigma must be non-negative".into()));
        }
        if !(self.treatment_tilt.abs() <= 1.0) {
            return Err(LeeError::Argument("treatment_tilt must lie in [-1, 1]".into()));
        }
        for d in [0.0, 1.0] {
            for x in [0.0, 0.5, 1.0] {
                let q = self.q(d, x);
                if !(q > 0.0 && q <= 1.0) {
                    return Err(LeeError::Argument(format!("selection probability {q} at d={d}, xbar={x} outside (0, 1]")));
                }
            }
        }
        Ok(())
    }

    pub fn q(&self, d: f64, xbar: f64) -> f64 {
        match self.selection {
            SelectionShape::Linear => self.q0 + self.q_d * d + self.q_x * xbar,
            SelectionShape::Valley => self.q0 + self.q_d * (d - xbar).abs() + self.q_x * xbar,
        }
    }

    pub fn m(&self, d: f64, xbar: f64) -> f64 {
        self.m0 + self.m_d * d + self.m_x * xbar
    }

    /// Treatment density given the covariates.
    pub fn mu(&self, d: f64, xbar: f64) -> f64 {
        if !(0.0..=1.0).contains(&d) {
            return 0.0;
        }
        1.0 + self.treatment_tilt * (2.0 * xbar - 1.0) * (2.0 * d - 1.0)
    }

    fn draw_d(&self, xbar: f64, u: f64) -> f64 {
        let t = self.treatment_tilt * (2.0 * xbar - 1.0);
        if t.abs() < 1e-12 {
            return u;
        }
        let b = 1.0 - t;
        (-b + (b * b + 4.0 * t * u).sqrt()) / (2.0 * t)
    }

    fn draw_noise(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self.noise {
            NoiseLaw::Gaussian => rng.sample::<f64, _>(StandardNormal),
            NoiseLaw::Uniform => 3f64.sqrt() * (2.0 * rng.random::<f64>() - 1.0),
            NoiseLaw::Degenerate => 0.0,
        }
    }

    /// `Q(u)` of the outcome noise.
    pub fn noise_quantile(&self, u: f64) -> f64 {
        match self.noise {
            NoiseLaw::Gaussian => std_normal().inverse_cdf(u),
            NoiseLaw::Uniform => 3f64.sqrt() * (2.0 * u - 1.0),
            NoiseLaw::Degenerate => 0.0,
        }
    }

    /// Mean of the top (upper) or bottom (lower) share `p` of the noise.
    pub fn noise_tail_mean(&self, side: Side, p: f64) -> f64 {
        let sign = match side {
            Side::Upper => 1.0,
            Side::Lower => -1.0,
        };
        if p >= 1.0 {
            return 0.0;
        }
        match self.noise {
            NoiseLaw::Gaussian => sign * std_normal().pdf(std_normal().inverse_cdf(1.0 - p)) / p,
            NoiseLaw::Uniform => sign * 3f64.sqrt() * (1.0 - p),
            NoiseLaw::Degenerate => 0.0,
        }
    }
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal")
}

pub fn xbar(x: &[f64]) -> f64 {
    if x.is_empty() {
        0.0
    } else {
        x.iter().sum::<f64>() / x.len() as f64
    }
}

/// `n` draws from the process; the stream depends only on `seed`.
pub fn generate(spec: &DgpSpec, n: usize, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let obs = (0..n)
        .map(|_| {
            let x: Vec<f64> = (0..spec.covariates).map(|_| rng.random::<f64>()).collect();
            let xb = xbar(&x);
            let d = spec.draw_d(xb, rng.random::<f64>());
            let eta: f64 = rng.random();
            let s = (eta <= spec.q(d, xb)) as u8;
            let eps = spec.draw_noise(&mut rng);
            let y = if s == 1 { spec.m(d, xb) + spec.sigma * eps } else { 0.0 };
            Observation { d, s, y, x }
        })
        .collect();
    let names = (1..=spec.covariates)
        .map(|k| CovariateColumn { name: format!("x{k}"), kind: CovariateKind::Continuous })
        .collect();
    Dataset::from_observations(obs, names)
}

/// Density of `xbar` on `[0, 1]` as quadrature nodes and weights.
fn xbar_quadrature(k: usize) -> Result<Vec<(f64, f64)>> {
    if k == 0 {
        return Ok(vec![(0.0, 1.0)]);
    }
    let density: fn(f64) -> f64 = match k {
        1 => |_| 1.0,
        2 => |x| if x < 0.5 { 4.0 * x } else { 4.0 * (1.0 - x) },
        _ => {
            return Err(LeeError::Argument(
                "exact oracle supports at most 2 covariates; use the Monte Carlo oracle".into(),
            ))
        }
    };
    // Composite Simpson on each half so the kink at 0.5 is a node.
    let m = 400;
    let mut out = Vec::with_capacity(2 * m + 2);
    for (a, b) in [(0.0, 0.5), (0.5, 1.0)] {
        let step = (b - a) / m as f64;
        for i in 0..=m {
            let w = if i == 0 || i == m { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
            let x = a + i as f64 * step;
            out.push((x, w * step / 3.0 * density(x)));
        }
    }
    Ok(out)
}

/// True bounds on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleTruth {
    pub grid: Vec<f64>,
    pub s: Vec<f64>,
    pub pi: f64,
    pub d_at_index: usize,
    pub p: Vec<f64>,
    pub rho_l: Vec<f64>,
    pub rho_u: Vec<f64>,
    /// Trimming probabilities below 0.01, where tail means diverge.
    pub small_p: Vec<bool>,
    /// Monte Carlo standard errors `(lower, upper)`.
    pub mc_se: Option<Vec<(f64, f64)>>,
}

impl OracleTruth {
    /// True switching bounds `[rho_l(d2) - rho_u(d1), rho_u(d2) - rho_l(d1)]`.
    pub fn ate(&self, j1: usize, j2: usize) -> (f64, f64) {
        (self.rho_l[j2] - self.rho_u[j1], self.rho_u[j2] - self.rho_l[j1])
    }
}

/// Mixture of `N(m(d, x), sigma^2)` over `xbar` with weights `w(x)`.
struct Mixture {
    comps: Vec<(f64, f64)>,
    sigma: f64,
    total: f64,
}

impl Mixture {
    fn cdf(&self, c: f64) -> f64 {
        let nrm = std_normal();
        self.comps.iter().map(|&(m, w)| w * nrm.cdf((c - m) / self.sigma)).sum::<f64>() / self.total
    }

    fn quantile(&self, u: f64) -> f64 {
        let lo_m = self.comps.iter().map(|c| c.0).fold(f64::INFINITY, f64::min);
        let hi_m = self.comps.iter().map(|c| c.0).fold(f64::NEG_INFINITY, f64::max);
        let (mut lo, mut hi) = (lo_m - 12.0 * self.sigma, hi_m + 12.0 * self.sigma);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.cdf(mid) < u {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    fn mean(&self) -> f64 {
        self.comps.iter().map(|&(m, w)| w * m).sum::<f64>() / self.total
    }

    /// Mean of the top or bottom share `p`.
    fn tail_mean(&self, side: Side, p: f64) -> f64 {
        if p >= 1.0 {
            return self.mean();
        }
        let nrm = std_normal();
        let s = self.sigma;
        match side {
            Side::Upper => {
                let c = self.quantile(1.0 - p);
                let num: f64 = self
                    .comps
                    .iter()
                    .map(|&(m, w)| {
                        let z = (c - m) / s;
                        w * (m * (1.0 - nrm.cdf(z)) + s * nrm.pdf(z))
                    })
                    .sum();
                num / self.total / p
            }
            Side::Lower => {
                let c = self.quantile(p);
                let num: f64 = self
                    .comps
                    .iter()
                    .map(|&(m, w)| {
                        let z = (c - m) / s;
                        w * (m * nrm.cdf(z) - s * nrm.pdf(z))
                    })
                    .sum();
                num / self.total / p
            }
        }
    }
}

/// Bounds targeted by the no-covariate estimator:
/// `pi = min_grid s(d)`, `p(d) = pi / s(d) - nu`, collapsing at the argmin.
pub fn oracle_truth(spec: &DgpSpec, grid: &Grid, nu: f64) -> Result<OracleTruth> {
    spec.validate()?;
    let quad = xbar_quadrature(spec.covariates)?;
    let pts = grid.points();
    let s: Vec<f64> = pts
        .iter()
        .map(|&d| quad.iter().map(|&(x, w)| w * spec.q(d, x) * spec.mu(d, x)).sum())
        .collect();
    let (d_at_index, pi) = argmin(&s);
    let mut out = OracleTruth {
        grid: pts.to_vec(),
        s: s.clone(),
        pi,
        d_at_index,
        p: Vec::new(),
        rho_l: Vec::new(),
        rho_u: Vec::new(),
        small_p: Vec::new(),
        mc_se: None,
    };
    for (j, &d) in pts.iter().enumerate() {
        let comps: Vec<(f64, f64)> = quad.iter().map(|&(x, w)| (spec.m(d, x), w * spec.q(d, x) * spec.mu(d, x))).collect();
        let total = comps.iter().map(|c| c.1).sum::<f64>();
        let p = if j == d_at_index { 1.0 } else { (pi / s[j]).min(1.0) - nu };
        let (lo, hi) = if comps.len() == 1 || spec.noise != NoiseLaw::Gaussian {
            if comps.len() > 1 {
                return Err(LeeError::Argument("exact oracle with covariates requires Gaussian noise".into()));
            }
            let m = comps[0].0;
            (
                m + spec.sigma * spec.noise_tail_mean(Side::Lower, p),
                m + spec.sigma * spec.noise_tail_mean(Side::Upper, p),
            )
        } else {
            let mix = Mixture { comps, sigma: spec.sigma, total };
            (mix.tail_mean(Side::Lower, p), mix.tail_mean(Side::Upper, p))
        };
        out.small_p.push(p < 0.01);
        out.p.push(p);
        out.rho_l.push(lo);
        out.rho_u.push(hi);
    }
    Ok(out)
}

fn argmin(v: &[f64]) -> (usize, f64) {
    v.iter()
        .enumerate()
        .fold((0, f64::INFINITY), |(bj, bv), (j, &x)| if x < bv { (j, x) } else { (bj, bv) })
}

/// Monte Carlo version of [`oracle_truth`] with batch standard errors.
pub fn oracle_truth_mc(spec: &DgpSpec, grid: &Grid, nu: f64, draws: usize, seed: u64) -> Result<OracleTruth> {
    spec.validate()?;
    let pts = grid.points();
    let batches = 20;
    let per = (draws / batches).max(10);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Common draws of (x, eta, eps) across grid points.
    let sample: Vec<(f64, f64, f64)> = (0..per * batches)
        .map(|_| {
            let x: Vec<f64> = (0..spec.covariates).map(|_| rng.random::<f64>()).collect();
            (xbar(&x), rng.random::<f64>(), spec.draw_noise(&mut rng))
        })
        .collect();
    let s: Vec<f64> = pts
        .iter()
        .map(|&d| sample.iter().map(|&(x, _, _)| spec.q(d, x) * spec.mu(d, x)).sum::<f64>() / sample.len() as f64)
        .collect();
    let (d_at_index, pi) = argmin(&s);
    let mut out = OracleTruth {
        grid: pts.to_vec(),
        s: s.clone(),
        pi,
        d_at_index,
        p: Vec::new(),
        rho_l: Vec::new(),
        rho_u: Vec::new(),
        small_p: Vec::new(),
        mc_se: Some(Vec::new()),
    };
    for (j, &d) in pts.iter().enumerate() {
        let p = if j == d_at_index { 1.0 } else { (pi / s[j]).min(1.0) - nu };
        let bounds_of = |chunk: &[(f64, f64, f64)]| {
            let ws = WeightedSample::new(
                chunk
                    .iter()
                    .map(|&(x, _, e)| (spec.m(d, x) + spec.sigma * e, spec.q(d, x) * spec.mu(d, x)))
                    .collect(),
            );
            (ws.lower_trimmed_mean(p), ws.upper_trimmed_mean(p))
        };
        let (lo, hi) = bounds_of(&sample);
        let per_batch: Vec<(f64, f64)> = sample.chunks(per).map(bounds_of).collect();
        let sd = |f: fn(&(f64, f64)) -> f64| {
            let v: Vec<f64> = per_batch.iter().map(f).collect();
            let m = v.iter().sum::<f64>() / v.len() as f64;
            (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64 / v.len() as f64).sqrt()
        };
        out.small_p.push(p < 0.01);
        out.p.push(p);
        out.rho_l.push(lo);
        out.rho_u.push(hi);
        out.mc_se.as_mut().unwrap().push((sd(|b| b.0), sd(|b| b.1)));
    }
    Ok(out)
}

/// Aggregate bounds targeted by the covariate estimator: per-covariate
/// sufficient values and trimming, averaged over `X` and normalised by the
/// always-taker share.
pub fn oracle_conditional(spec: &DgpSpec, grid: &Grid, nu: f64) -> Result<OracleTruth> {
    spec.validate()?;
    let quad = xbar_quadrature(spec.covariates)?;
    let pts = grid.points();
    let per_x: Vec<(usize, f64)> = quad
        .iter()
        .map(|&(x, _)| argmin(&pts.iter().map(|&d| spec.q(d, x)).collect::<Vec<_>>()))
        .collect();
    let pi: f64 = quad.iter().zip(&per_x).map(|(&(_, w), &(_, pm))| w * pm).sum();
    let s: Vec<f64> = pts
        .iter()
        .map(|&d| quad.iter().map(|&(x, w)| w * spec.q(d, x)).sum())
        .collect();
    let mut out = OracleTruth {
        grid: pts.to_vec(),
        s,
        pi,
        d_at_index: argmin(&out_counts(&per_x, pts.len())).0,
        p: Vec::new(),
        rho_l: Vec::new(),
        rho_u: Vec::new(),
        small_p: Vec::new(),
        mc_se: None,
    };
    for (jd, &d) in pts.iter().enumerate() {
        let (mut lo, mut hi, mut pbar) = (0.0, 0.0, 0.0);
        for (&(x, w), &(jx, pm)) in quad.iter().zip(&per_x) {
            let qd = spec.q(d, x);
            let p = if jx == jd { 1.0 } else { (pm / qd).min(1.0) - nu };
            let m = spec.m(d, x);
            let mass = w * qd * p;
            lo += mass * (m + spec.sigma * spec.noise_tail_mean(Side::Lower, p));
            hi += mass * (m + spec.sigma * spec.noise_tail_mean(Side::Upper, p));
            pbar += w * p;
        }
        out.small_p.push(pbar < 0.01);
        out.p.push(pbar);
        out.rho_l.push(lo / pi);
        out.rho_u.push(hi / pi);
    }
    Ok(out)
}

/// Negated counts so the most frequent sufficient value is the argmin.
fn out_counts(per_x: &[(usize, f64)], j: usize) -> Vec<f64> {
    let mut c = vec![0.0; j];
    for &(jx, _) in per_x {
        c[jx] -= 1.0;
    }
    c
}

/// True nuisance functions of the process at the covariates of a dataset.
pub struct TrueNuisance<'a> {
    spec: &'a DgpSpec,
    grid: Vec<f64>,
    xbar: Vec<f64>,
}

impl<'a> TrueNuisance<'a> {
    pub fn new(spec: &'a DgpSpec, grid: &Grid, data: &Dataset) -> Self {
        TrueNuisance {
            spec,
            grid: grid.points().to_vec(),
            xbar: (0..data.n()).map(|i| xbar(data.x_row(i))).collect(),
        }
    }
}

impl ConditionalNuisance for TrueNuisance<'_> {
    fn selection(&self, j: usize, i: usize) -> f64 {
        self.spec.q(self.grid[j], self.xbar[i])
    }

    fn gps(&self, j: usize, i: usize) -> f64 {
        self.spec.mu(self.grid[j], self.xbar[i])
    }

    fn quantile(&self, j: usize, u: f64, i: usize) -> f64 {
        self.spec.m(self.grid[j], self.xbar[i]) + self.spec.sigma * self.spec.noise_quantile(u)
    }

    fn tail_mean(&self, j: usize, side: Side, p: f64, i: usize) -> f64 {
        self.spec.m(self.grid[j], self.xbar[i]) + self.spec.sigma * self.spec.noise_tail_mean(side, p)
    }

    fn cond_mean(&self, j: usize, i: usize) -> f64 {
        self.spec.m(self.grid[j], self.xbar[i])
    }
}

/// Settings of a coverage study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageConfig {
    pub reps: usize,
    pub n: usize,
    pub seed: u64,
    /// Grid indices `(j1, j2)` of a switching pair to evaluate.
    pub ate_pair: Option<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointCoverage {
    pub d: f64,
    pub true_l: f64,
    pub true_u: f64,
    pub bias_l: f64,
    pub bias_u: f64,
    pub rmse_l: f64,
    pub rmse_u: f64,
    pub coverage: f64,
    pub mean_width: f64,
    /// Whether `d` is the true sufficient value.
    pub at_sufficient: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AteCoverage {
    pub d1: f64,
    pub d2: f64,
    pub true_lower: f64,
    pub true_upper: f64,
    pub coverage: f64,
    pub mean_width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub reps: usize,
    pub n: usize,
    pub failures: usize,
    pub points: Vec<PointCoverage>,
    pub ate: Option<AteCoverage>,
    /// Share of replications whose estimated sufficient value is the true one.
    pub sufficient_hit_rate: f64,
}

/// Estimated curve and optional switching bounds of one replication.
pub type Replication = (BoundsCurve, Option<AteBounds>);

/// One replication at `seed`.
pub fn replicate(spec: &DgpSpec, grid: &Grid, n: usize, seed: u64, config: &EstimatorConfig, ate_pair: Option<(usize, usize)>) -> Result<Replication> {
    let data = generate(spec, n, seed)?;
    match config.mode {
        Mode::Nocov => {
            let fit = bounds_curve_nocov(&data, grid, config)?;
            let ate = ate_pair.map(|(a, b)| fit.ate(&data, a, b, config.alpha));
            Ok((fit.curve, ate))
        }
        Mode::Dml => {
            let fit = dml_bounds(&data, grid, config)?;
            let ate = ate_pair.map(|(a, b)| fit.ate(a, b, config.alpha));
            Ok((fit.curve, ate))
        }
    }
}

/// Repeated estimation on fresh samples with seeds `seed + r`; coverage is
/// the share of intervals containing the whole true identified set.
pub fn coverage_study(spec: &DgpSpec, grid: &Grid, truth: &OracleTruth, config: &EstimatorConfig, cov: &CoverageConfig) -> Result<CoverageReport> {
    if cov.reps == 0 {
        return Err(LeeError::Argument("at least one replication required".into()));
    }
    let runs: Vec<Option<Replication>> = (0..cov.reps)
        .into_par_iter()
        .map(|r| replicate(spec, grid, cov.n, cov.seed.wrapping_add(r as u64), config, cov.ate_pair).ok())
        .collect();
    let ok: Vec<&Replication> = runs.iter().flatten().collect();
    let failures = cov.reps - ok.len();
    if ok.is_empty() {
        return Err(LeeError::Inference("every replication failed".into()));
    }
    let k = ok.len() as f64;
    let points = (0..grid.len())
        .map(|j| {
            let (tl, tu) = (truth.rho_l[j], truth.rho_u[j]);
            let mut acc = [0.0; 7];
            for (curve, _) in &ok {
                let p = &curve.points[j];
                acc[0] += p.rho_l - tl;
                acc[1] += p.rho_u - tu;
                acc[2] += (p.rho_l - tl).powi(2);
                acc[3] += (p.rho_u - tu).powi(2);
                acc[4] += (p.ci_low <= tl && p.ci_high >= tu) as u8 as f64;
                acc[5] += p.ci_high - p.ci_low;
            }
            PointCoverage {
                d: grid.points()[j],
                true_l: tl,
                true_u: tu,
                bias_l: acc[0] / k,
                bias_u: acc[1] / k,
                rmse_l: (acc[2] / k).sqrt(),
                rmse_u: (acc[3] / k).sqrt(),
                coverage: acc[4] / k,
                mean_width: acc[5] / k,
                at_sufficient: j == truth.d_at_index,
            }
        })
        .collect();
    let ate = cov.ate_pair.map(|(j1, j2)| {
        let (tl, tu) = truth.ate(j1, j2);
        let mut hits = 0.0;
        let mut width = 0.0;
        for (_, a) in &ok {
            let a = a.as_ref().expect("pair requested");
            hits += (a.ci_low <= tl && a.ci_high >= tu) as u8 as f64;
            width += a.ci_high - a.ci_low;
        }
        AteCoverage {
            d1: grid.points()[j1],
            d2: grid.points()[j2],
            true_lower: tl,
            true_upper: tu,
            coverage: hits / k,
            mean_width: width / k,
        }
    });
    let hit = ok.iter().filter(|(c, _)| c.d_at_index == truth.d_at_index).count() as f64 / k;
    Ok(CoverageReport {
        reps: cov.reps,
        n: cov.n,
        failures,
        points,
        ate,
        sufficient_hit_rate: hit,
    })
}

/// Draws from the outcome distribution of selected units at `d`, for tests.
pub fn selected_outcomes(spec: &DgpSpec, d: f64, draws: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(draws);
    while out.len() < draws {
        let x: Vec<f64> = (0..spec.covariates).map(|_| rng.random::<f64>()).collect();
        let xb = xbar(&x);
        if rng.random::<f64>() <= spec.q(d, xb) * spec.mu(d, xb) / 2.0 {
            out.push(spec.m(d, xb) + spec.sigma * spec.draw_noise(&mut rng));
        }
    }
    out
}
