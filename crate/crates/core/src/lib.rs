//! Bounds on dose-response functions under sample selection with a
//! continuous treatment.
//!
//! Two estimators share one output type ([`BoundsCurve`]):
//! [`bounds_curve_nocov`] uses kernel-smoothed selection probabilities and
//! trimmed means without covariates, and [`dml_bounds`] uses cross-fitted
//! Lasso nuisances with orthogonal moments.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::type_complexity)]

pub mod bounds;
pub mod config;
pub mod data;
pub mod dml;
pub mod error;
pub mod inference;
pub mod kernel;
pub mod lasso;
pub mod output;
pub mod sim;

pub use bounds::{
    binary_outcome_bounds, bounds_curve_nocov, fit_nocov, frechet_interval, selection_curve,
    sufficient_value, trimmed_bound, trimming_probability, BandwidthReport, BoundsCurve,
    BoundsPoint, FrechetInterval, NocovFit, SelectionCurve, Side, SufficientValue,
};
pub use config::{DmlConfig, EstimatorConfig, GridSpec, Mode};
pub use data::{
    assign_folds, build_grid, load_dataset, read_dataset, write_dataset, CovariateColumn,
    CovariateKind, CovariateSpec, Dataset, FoldAssignment, Grid, Observation, Schema,
};
pub use dml::{dml_ate, dml_bounds, ConditionalNuisance, DmlFit, NuisanceFit, OverlapReport};
pub use error::{LeeError, Result};
pub use inference::{ate_bounds, bounds_ci, critical_value, plugin_variance, AteBounds, InfluenceArrays, VarianceReport};
pub use kernel::{BandwidthPlan, BandwidthRule, KernelFamily, WeightedSample};
pub use lasso::{build_basis, Basis, BasisDegree, LassoFit};
pub use sim::{coverage_study, generate, oracle_truth, CoverageConfig, CoverageReport, DgpSpec, OracleTruth};
