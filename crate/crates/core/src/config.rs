//! Estimator configuration shared by the library and the CLI.

use serde::{Deserialize, Serialize};

use crate::data::{build_grid, Dataset, Grid, Schema};
use crate::error::{LeeError, Result};
use crate::kernel::{BandwidthPlan, KernelFamily};
use crate::lasso::BasisDegree;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Nocov,
    Dml,
}

/// `J` equally spaced points on `[min, max]`; missing endpoints default to
/// the observed treatment range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub points: usize,
    #[serde(default)]
    pub min: Option<f64>,
    #[serde(default)]
    pub max: Option<f64>,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            points: 100,
            min: None,
            max: None,
        }
    }
}

impl GridSpec {
    pub fn build(&self, data: &Dataset) -> Result<Grid> {
        let (lo, hi) = data.d_range();
        build_grid(self.min.unwrap_or(lo), self.max.unwrap_or(hi), self.points)
    }
}

/// Settings specific to the covariate (cross-fitted) estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DmlConfig {
    pub basis_degree: BasisDegree,
    /// Refits of the penalty loadings.
    pub loading_iterations: usize,
    /// Thresholds per grid point for the outcome distribution regression.
    pub y_grid_size: usize,
    /// Kernel peak used in the propensity trimming threshold.
    pub trim_kbar: f64,
    /// Share entering the trimming threshold `k_bar / (share n_l h1)`.
    pub trim_share: f64,
    /// Observations with `min_d s(d, x)` below this are dropped.
    pub selection_floor: f64,
    /// Relative tolerance for ties in the per-covariate argmin.
    pub tie_tolerance: f64,
    /// Probability level in the distribution-regression penalty; defaults to
    /// `1 / log n`.
    pub penalty_r: Option<f64>,
    /// Multiplier applied to both penalty levels.
    pub penalty_scale: f64,
    /// Refit each nuisance without penalty on its selected columns.
    pub post_lasso: bool,
}

impl Default for DmlConfig {
    fn default() -> Self {
        DmlConfig {
            basis_degree: BasisDegree::Linear,
            loading_iterations: 5,
            y_grid_size: 40,
            trim_kbar: 0.75 / 5f64.sqrt(),
            trim_share: 0.05,
            selection_floor: 0.05,
            tie_tolerance: 1e-6,
            penalty_r: None,
            penalty_scale: 1.0,
            post_lasso: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorConfig {
    pub mode: Mode,
    pub kernel: KernelFamily,
    pub bandwidth: BandwidthPlan,
    pub nu: f64,
    pub folds: usize,
    pub seed: u64,
    pub alpha: f64,
    pub grid: GridSpec,
    /// Treatment values whose joint selection implies selection everywhere.
    pub sufficient_set: Option<Vec<f64>>,
    pub dml: DmlConfig,
    pub schema: Option<Schema>,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            mode: Mode::Nocov,
            kernel: KernelFamily::EpanechnikovUnit,
            bandwidth: BandwidthPlan::default(),
            nu: 0.01,
            folds: 10,
            seed: 0,
            alpha: 0.05,
            grid: GridSpec::default(),
            sufficient_set: None,
            dml: DmlConfig::default(),
            schema: None,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        self.bandwidth.validate()?;
        if !(self.nu >= 0.0 && self.nu < 1.0) {
            return Err(LeeError::Argument(format!("nu must lie in [0, 1), got {}", self.nu)));
        }
        if self.folds == 0 {
            return Err(LeeError::Argument("fold count must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(LeeError::Argument(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if self.grid.points < 2 {
            return Err(LeeError::Argument("grid needs at least 2 points".into()));
        }
        if let Some(set) = &self.sufficient_set {
            if set.is_empty() {
                return Err(LeeError::Argument("sufficient set must not be empty".into()));
            }
        }
        let dml = &self.dml;
        if dml.y_grid_size < 2 {
            return Err(LeeError::Argument("y_grid_size must be at least 2".into()));
        }
        if !(dml.trim_kbar > 0.0 && dml.trim_share > 0.0) {
            return Err(LeeError::Argument("trimming constants must be positive".into()));
        }
        if !(0.0..1.0).contains(&dml.selection_floor) {
            return Err(LeeError::Argument("selection_floor must lie in [0, 1)".into()));
        }
        if let Some(r) = dml.penalty_r {
            if !(r > 0.0 && r < 1.0) {
                return Err(LeeError::Argument(format!("penalty_r must lie in (0, 1), got {r}")));
            }
        }
        Ok(())
    }

    /// Two-sided normal critical value for `alpha`.
    pub fn z(&self) -> f64 {
        crate::inference::critical_value(self.alpha)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_json() {
        let c = EstimatorConfig::default();
        let json = serde_json::to_string(&c).unwrap();
        let back: EstimatorConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(c, back);
        assert_eq!(c.folds, 10);
        assert_eq!(c.nu, 0.01);
        assert_eq!(c.bandwidth.undersmooth_factor, 0.8);
    }

    #[test]
    fn partial_json_uses_defaults() {
        let c: EstimatorConfig = serde_json::from_str(r#"{"folds": 5, "grid": {"points": 20}}"#).unwrap();
        assert_eq!(c.folds, 5);
        assert_eq!(c.grid.points, 20);
        assert_eq!(c.alpha, 0.05);
        c.validate().unwrap();
    }
}
