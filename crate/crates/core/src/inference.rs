//! Influence functions, plug-in variances, confidence intervals and bounds
//! on the effect of switching treatment values.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::bounds::{BoundsCurve, NocovFit, Side};
use crate::data::Dataset;
use crate::error::{LeeError, Result};
use crate::kernel::WeightedSample;

/// `Phi^-1(1 - alpha / 2)`.
pub fn critical_value(alpha: f64) -> f64 {
    Normal::standard().inverse_cdf(1.0 - alpha / 2.0)
}

/// Per-observation influence values at one grid point.
#[derive(Debug, Clone)]
pub struct InfluenceArrays {
    pub d: f64,
    pub h: f64,
    pub upper: Vec<f64>,
    pub lower: Vec<f64>,
    /// Trimming-probability channel.
    pub phi1: Vec<f64>,
    /// Quantile channel, upper and lower.
    pub phi2_u: Vec<f64>,
    pub phi2_l: Vec<f64>,
    /// Tail-mean channel, upper and lower.
    pub phi3_u: Vec<f64>,
    pub phi3_l: Vec<f64>,
    pub phi_s: Vec<f64>,
    pub phi_pi: Vec<f64>,
}

pub(crate) fn centered_variance(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n
}

pub(crate) fn second_moment(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64
}

impl InfluenceArrays {
    pub fn n(&self) -> usize {
        self.upper.len()
    }

    pub fn side(&self, side: Side) -> &[f64] {
        match side {
            Side::Upper => &self.upper,
            Side::Lower => &self.lower,
        }
    }

    /// `h` times the sample variance of the influence values.
    pub fn variance(&self, side: Side) -> f64 {
        self.h * centered_variance(self.side(side))
    }

    pub fn se_upper(&self) -> f64 {
        (centered_variance(&self.upper) / self.n() as f64).sqrt()
    }

    pub fn se_lower(&self) -> f64 {
        (centered_variance(&self.lower) / self.n() as f64).sqrt()
    }
}

/// Influence values of the no-covariate bounds at grid index `j`.
pub fn influence_values(data: &Dataset, fit: &NocovFit, j: usize) -> InfluenceArrays {
    let n = data.n();
    let kernel = fit.kernel;
    let pt = &fit.curve.points[j];
    let (d, h, s, f) = (pt.d, pt.h, pt.s_hat, pt.f_hat);
    let radius = kernel.radius();
    let mut out = InfluenceArrays {
        d,
        h,
        upper: vec![0.0; n],
        lower: vec![0.0; n],
        phi1: vec![0.0; n],
        phi2_u: vec![0.0; n],
        phi2_l: vec![0.0; n],
        phi3_u: vec![0.0; n],
        phi3_l: vec![0.0; n],
        phi_s: vec![0.0; n],
        phi_pi: vec![0.0; n],
    };
    let window = data.window(d, h * radius);

    if pt.collapsed {
        for &i in window {
            if data.selected(i) {
                let c = kernel.scaled(data.d(i) - d, h) / (s * f);
                let v = c * (data.y(i) - pt.beta_point);
                out.upper[i] = v;
                out.lower[i] = v;
                out.phi3_u[i] = v;
                out.phi3_l[i] = v;
            }
        }
        return out;
    }

    for &i in window {
        out.phi_s[i] = (data.s(i) as f64 - s) * kernel.scaled(data.d(i) - d, h) / f;
    }
    let sel = &fit.selection;
    for m in fit.pi_members() {
        let (dm, hm) = (sel.grid.points()[m], sel.h[m]);
        let (sm, fm) = (sel.s_hat[m], sel.f_hat[m]);
        for &i in data.window(dm, hm * radius) {
            out.phi_pi[i] += (data.s(i) as f64 - sm) * kernel.scaled(data.d(i) - dm, hm) / fm;
        }
    }

    let p = pt.p_trim;
    let sample = WeightedSample::local(data, d, h, kernel, None);
    let (_, q_u, theta_u) = sample.upper_trimmed(p);
    let (_, q_l, theta_l) = sample.lower_trimmed(p);
    let (rho_u, rho_l) = (pt.rho_u, pt.rho_l);

    let mut touched: Vec<usize> = window.to_vec();
    for m in fit.pi_members() {
        touched.extend_from_slice(data.window(sel.grid.points()[m], sel.h[m] * radius));
    }
    touched.sort_unstable();
    touched.dedup();

    for i in touched {
        let phi1 = (out.phi_pi[i] - p * out.phi_s[i]) / s;
        out.phi1[i] = phi1;
        let (mut phi2_u, mut phi2_l, mut phi3_u, mut phi3_l) = (0.0, 0.0, 0.0, 0.0);
        if data.selected(i) {
            let c = kernel.scaled(data.d(i) - d, h) / (s * f);
            if c > 0.0 {
                let y = data.y(i);
                let t_u = if y > q_u {
                    1.0
                } else if y == q_u {
                    theta_u
                } else {
                    0.0
                };
                let t_l = if y < q_l {
                    1.0
                } else if y == q_l {
                    theta_l
                } else {
                    0.0
                };
                phi2_u = -c * (t_u - p) * q_u;
                phi2_l = c * (p - t_l) * q_l;
                phi3_u = c * (y * t_u - p * rho_u);
                phi3_l = c * (y * t_l - p * rho_l);
            }
        }
        out.phi2_u[i] = phi2_u;
        out.phi2_l[i] = phi2_l;
        out.phi3_u[i] = phi3_u;
        out.phi3_l[i] = phi3_l;
        out.upper[i] = (phi1 * q_u + phi2_u + phi3_u - rho_u * phi1) / p;
        out.lower[i] = (phi1 * q_l + phi2_l + phi3_l - rho_l * phi1) / p;
    }
    out
}

/// Inputs to the closed-form asymptotic variance of one bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PluginInputs {
    pub p: f64,
    /// Cut point: `Q(1 - p)` for the upper bound, `Q(p)` for the lower.
    pub q: f64,
    pub rho: f64,
    pub s_d: f64,
    pub f_d: f64,
    /// Variance contribution of the always-taker share, already rescaled by
    /// the treatment densities.
    pub v_pi: f64,
    /// Variance of the retained tail term `Y 1{tail}` given `D = d, S = 1`.
    pub tail_var: f64,
    pub roughness: f64,
    /// `d` itself belongs to the sufficient set.
    pub in_set: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceReport {
    pub v1: f64,
    pub v2: f64,
    pub v3: f64,
    pub v23: f64,
    pub total: f64,
    /// `h` times the sample variance of the influence values, when available.
    pub sample: Option<f64>,
}

pub fn plugin_variance(x: &PluginInputs) -> Result<VarianceReport> {
    if !(x.s_d > 0.0 && x.s_d < 1.0) {
        return Err(LeeError::Overlap(format!(
            "selection probability {} outside (0, 1) makes s(1 - s) degenerate",
            x.s_d
        )));
    }
    if !(x.p > 0.0 && x.f_d > 0.0) {
        return Err(LeeError::Inference("trimming probability and density must be positive".into()));
    }
    let v_s = x.s_d * (1.0 - x.s_d);
    let coef = if x.in_set { x.p * x.p - 2.0 * x.p } else { x.p * x.p };
    let v1 = (x.v_pi + coef * v_s) / x.s_d * (x.q - x.rho).powi(2);
    let v2 = x.p * (1.0 - x.p) * x.q * x.q;
    let v3 = x.tail_var;
    let v23 = -2.0 * x.p * (1.0 - x.p) * x.rho * x.q;
    let total = (v1 + v2 + v3 + v23) * x.roughness / (x.p * x.p * x.s_d * x.f_d);
    Ok(VarianceReport {
        v1,
        v2,
        v3,
        v23,
        total,
        sample: None,
    })
}

/// Plug-in variance at grid index `j` using kernel estimates of every
/// ingredient, alongside the influence-function variance.
pub fn plugin_variance_at(data: &Dataset, fit: &NocovFit, j: usize, side: Side) -> Result<VarianceReport> {
    let pt = &fit.curve.points[j];
    let kernel = fit.kernel;
    let roughness = kernel.constants().roughness;
    let sample = WeightedSample::local(data, pt.d, pt.h, kernel, None);
    let sel = &fit.selection;
    let members = fit.pi_members();
    let v_pi: f64 = members
        .iter()
        .map(|&m| {
            let sm = sel.s_hat[m];
            sm * (1.0 - sm) * pt.f_hat / sel.f_hat[m] * pt.h / sel.h[m]
        })
        .sum();
    let inputs = if pt.collapsed {
        let mean = sample.mean();
        let var = sample
            .values()
            .iter()
            .zip(sample.weights())
            .map(|(y, w)| w * (y - mean).powi(2))
            .sum::<f64>()
            / sample.total();
        PluginInputs {
            p: 1.0,
            q: mean,
            rho: mean,
            s_d: pt.s_hat,
            f_d: pt.f_hat,
            v_pi: 0.0,
            tail_var: var,
            roughness,
            in_set: false,
        }
    } else {
        let p = pt.p_trim;
        let (q, theta, rho) = match side {
            Side::Upper => {
                let (_, q, t) = sample.upper_trimmed(p);
                (q, t, pt.rho_u)
            }
            Side::Lower => {
                let (_, q, t) = sample.lower_trimmed(p);
                (q, t, pt.rho_l)
            }
        };
        let (mut m1, mut m2) = (0.0, 0.0);
        for (&y, &w) in sample.values().iter().zip(sample.weights()) {
            let t = match side {
                Side::Upper if y > q => 1.0,
                Side::Lower if y < q => 1.0,
                _ if y == q => theta,
                _ => 0.0,
            };
            m1 += w * y * t;
            m2 += w * y * y * t;
        }
        m1 /= sample.total();
        m2 /= sample.total();
        PluginInputs {
            p,
            q,
            rho,
            s_d: pt.s_hat,
            f_d: pt.f_hat,
            v_pi,
            tail_var: m2 - m1 * m1,
            roughness,
            in_set: fit.set.is_some() && members.contains(&j),
        }
    };
    let mut report = plugin_variance(&inputs)?;
    report.sample = Some(influence_values(data, fit, j).variance(side));
    Ok(report)
}

/// `[rho_l - z sqrt(V_l / (n h)), rho_u + z sqrt(V_u / (n h))]`.
pub fn bounds_ci(rho_l: f64, rho_u: f64, v_l: f64, v_u: f64, n: usize, h: f64, alpha: f64) -> (f64, f64) {
    let nh = n as f64 * h;
    bounds_ci_se(rho_l, rho_u, (v_l / nh).sqrt(), (v_u / nh).sqrt(), critical_value(alpha))
}

pub fn bounds_ci_se(rho_l: f64, rho_u: f64, se_l: f64, se_u: f64, z: f64) -> (f64, f64) {
    (rho_l - z * se_l, rho_u + z * se_u)
}

/// Bounds on `beta(d2) - beta(d1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AteBounds {
    pub d1: f64,
    pub d2: f64,
    pub lower: f64,
    pub upper: f64,
    pub se_lower: f64,
    pub se_upper: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Influence values of both bounds at one treatment value.
#[derive(Debug, Clone, Copy)]
pub struct BoundInfluence<'a> {
    pub d: f64,
    pub rho_l: f64,
    pub rho_u: f64,
    pub lower: &'a [f64],
    pub upper: &'a [f64],
}

/// Bounds for switching from `d1` to `d2` with standard errors from the
/// second moments of the influence-value differences.
pub fn ate_bounds(at1: BoundInfluence<'_>, at2: BoundInfluence<'_>, alpha: f64) -> AteBounds {
    let n = at1.upper.len() as f64;
    let diff = |a: &[f64], b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| x - y).collect() };
    let v_u = second_moment(&diff(at2.upper, at1.lower));
    let v_l = second_moment(&diff(at2.lower, at1.upper));
    let lower = at2.rho_l - at1.rho_u;
    let upper = at2.rho_u - at1.rho_l;
    let (se_lower, se_upper) = ((v_l / n).sqrt(), (v_u / n).sqrt());
    let z = critical_value(alpha);
    AteBounds {
        d1: at1.d,
        d2: at2.d,
        lower,
        upper,
        se_lower,
        se_upper,
        ci_low: lower - z * se_lower,
        ci_high: upper + z * se_upper,
    }
}

/// Pair `(j1, j2)` whose switching bounds have the largest lower end.
pub fn best_ate_pair(curve: &BoundsCurve) -> Option<(usize, usize)> {
    let pts = &curve.points;
    let mut best: Option<(usize, usize, f64)> = None;
    for (j1, p1) in pts.iter().enumerate() {
        for (j2, p2) in pts.iter().enumerate() {
            if j1 == j2 {
                continue;
            }
            let lower = p2.rho_l - p1.rho_u;
            if best.is_none_or(|(_, _, b)| lower > b) {
                best = Some((j1, j2, lower));
            }
        }
    }
    best.map(|(a, b, _)| (a, b))
}

impl NocovFit {
    pub fn influence(&self, data: &Dataset, j: usize) -> InfluenceArrays {
        influence_values(data, self, j)
    }

    /// Switching bounds between grid indices `j1` and `j2`.
    pub fn ate(&self, data: &Dataset, j1: usize, j2: usize, alpha: f64) -> AteBounds {
        let i1 = self.influence(data, j1);
        let i2 = self.influence(data, j2);
        let (p1, p2) = (&self.curve.points[j1], &self.curve.points[j2]);
        ate_bounds(
            BoundInfluence { d: p1.d, rho_l: p1.rho_l, rho_u: p1.rho_u, lower: &i1.lower, upper: &i1.upper },
            BoundInfluence { d: p2.d, rho_l: p2.rho_l, rho_u: p2.rho_u, lower: &i2.lower, upper: &i2.upper },
            alpha,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn critical_values() {
        assert!((critical_value(0.05) - 1.959_963_984_540_054).abs() < 1e-9);
        assert!((critical_value(0.10) - 1.644_853_626_951_472).abs() < 1e-9);
    }

    #[test]
    fn ci_examples() {
        assert_eq!(bounds_ci(0.1, 0.3, 0.0, 0.0, 100, 0.5, 0.05), (0.1, 0.3));
        let (lo, hi) = bounds_ci(0.1, 0.3, 2.0, 2.0, 100, 0.5, 0.05);
        assert!(((lo + hi) / 2.0 - 0.2).abs() < 1e-12);
        let (lo90, hi90) = bounds_ci(0.1, 0.3, 2.0, 2.0, 100, 0.5, 0.10);
        assert!(lo <= lo90 && hi >= hi90);
    }

    #[test]
    fn plugin_degenerate_cases() {
        let base = PluginInputs {
            p: 1.0,
            q: 0.3,
            rho: 0.3,
            s_d: 0.6,
            f_d: 1.0,
            v_pi: 0.2,
            tail_var: 2.0,
            roughness: 0.6,
            in_set: false,
        };
        let r = plugin_variance(&base).unwrap();
        assert_eq!((r.v2, r.v23, r.v1), (0.0, 0.0, 0.0));
        assert!((r.total - 2.0 * 0.6 / 0.6).abs() < 1e-12);

        let sym = PluginInputs { p: 0.5, q: 0.0, rho: 0.8, ..base };
        let r = plugin_variance(&sym).unwrap();
        assert_eq!(r.v2, 0.0);
        assert!(plugin_variance(&PluginInputs { s_d: 1.0, ..base }).is_err());
    }

    #[test]
    fn ate_same_point() {
        let up = [0.5, -0.5, 0.2];
        let lo = [0.1, -0.3, 0.2];
        let at = BoundInfluence { d: 0.4, rho_l: 0.2, rho_u: 0.7, lower: &lo, upper: &up };
        let a = ate_bounds(at, at, 0.05);
        assert!(a.lower <= 0.0 && a.upper >= 0.0);
        assert!((a.upper - 0.5).abs() < 1e-12);

        let zero = [0.0; 3];
        let z = BoundInfluence { d: 0.4, rho_l: 0.2, rho_u: 0.7, lower: &zero, upper: &zero };
        let a = ate_bounds(z, z, 0.05);
        assert_eq!((a.ci_low, a.ci_high), (a.lower, a.upper));
    }
}
