//! Observation and dataset types, CSV ingestion, treatment grids and
//! cross-fitting folds.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LeeError, Result};

/// One unit: treatment `d`, selection `s`, outcome `y` (0 when unselected)
/// and covariates `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub d: f64,
    pub s: u8,
    pub y: f64,
    pub x: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CovariateKind {
    #[default]
    Continuous,
    Binary,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateColumn {
    pub name: String,
    #[serde(default)]
    pub kind: CovariateKind,
}

/// A covariate entry in the schema: either a bare column name (continuous)
/// or a name with an explicit kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CovariateSpec {
    Name(String),
    Typed(CovariateColumn),
}

impl CovariateSpec {
    pub fn column(&self) -> CovariateColumn {
        match self {
            CovariateSpec::Name(name) => CovariateColumn {
                name: name.clone(),
                kind: CovariateKind::Continuous,
            },
            CovariateSpec::Typed(c) => c.clone(),
        }
    }
}

/// Column mapping for CSV ingestion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub treatment: String,
    pub selection: String,
    pub outcome: String,
    #[serde(default)]
    pub covariates: Vec<CovariateSpec>,
    #[serde(default = "default_missing_codes")]
    pub missing_codes: Vec<String>,
}

fn default_missing_codes() -> Vec<String> {
    vec!["".into(), "NA".into()]
}

impl Schema {
    pub fn new(treatment: &str, selection: &str, outcome: &str) -> Self {
        Schema {
            treatment: treatment.into(),
            selection: selection.into(),
            outcome: outcome.into(),
            covariates: Vec::new(),
            missing_codes: default_missing_codes(),
        }
    }

    pub fn with_covariates<I, S>(mut self, names: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.covariates = names
            .into_iter()
            .map(|n| CovariateSpec::Name(n.into()))
            .collect();
        self
    }
}

/// Immutable, column-oriented sample.
#[derive(Debug, Clone)]
pub struct Dataset {
    d: Vec<f64>,
    s: Vec<u8>,
    y: Vec<f64>,
    /// Row-major `n x k` covariate matrix.
    x: Vec<f64>,
    covariates: Vec<CovariateColumn>,
    /// Indices sorted by treatment value, for window lookups.
    order: Vec<usize>,
    sorted_d: Vec<f64>,
}

impl Dataset {
    pub fn from_observations(
        observations: Vec<Observation>,
        covariates: Vec<CovariateColumn>,
    ) -> Result<Self> {
        if observations.is_empty() {
            return Err(LeeError::Validation("dataset must contain at least one row".into()));
        }
        let k = covariates.len();
        let n = observations.len();
        let mut d = Vec::with_capacity(n);
        let mut s = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        let mut x = Vec::with_capacity(n * k);
        for (i, obs) in observations.into_iter().enumerate() {
            if obs.s > 1 {
                return Err(LeeError::Validation(format!(
                    "row {i}: selection must be 0 or 1, got {}",
                    obs.s
                )));
            }
            if !obs.d.is_finite() {
                return Err(LeeError::Validation(format!("row {i}: treatment is not finite")));
            }
            if obs.x.len() != k {
                return Err(LeeError::Validation(format!(
                    "row {i}: expected {k} covariates, got {}",
                    obs.x.len()
                )));
            }
            if obs.x.iter().any(|v| !v.is_finite()) {
                return Err(LeeError::Validation(format!("row {i}: covariate is not finite")));
            }
            if obs.s == 1 && !obs.y.is_finite() {
                return Err(LeeError::Validation(format!("row {i}: outcome is not finite")));
            }
            d.push(obs.d);
            s.push(obs.s);
            y.push(if obs.s == 1 { obs.y } else { 0.0 });
            x.extend_from_slice(&obs.x);
        }
        Ok(Self::from_columns(d, s, y, x, covariates))
    }

    fn from_columns(
        d: Vec<f64>,
        s: Vec<u8>,
        y: Vec<f64>,
        x: Vec<f64>,
        covariates: Vec<CovariateColumn>,
    ) -> Self {
        let mut order: Vec<usize> = (0..d.len()).collect();
        order.sort_by(|&a, &b| d[a].total_cmp(&d[b]));
        let sorted_d = order.iter().map(|&i| d[i]).collect();
        Dataset {
            d,
            s,
            y,
            x,
            covariates,
            order,
            sorted_d,
        }
    }

    pub fn n(&self) -> usize {
        self.d.len()
    }

    pub fn n_covariates(&self) -> usize {
        self.covariates.len()
    }

    pub fn covariates(&self) -> &[CovariateColumn] {
        &self.covariates
    }

    pub fn treatments(&self) -> &[f64] {
        &self.d
    }

    pub fn selections(&self) -> &[u8] {
        &self.s
    }

    pub fn outcomes(&self) -> &[f64] {
        &self.y
    }

    #[inline]
    pub fn d(&self, i: usize) -> f64 {
        self.d[i]
    }

    #[inline]
    pub fn s(&self, i: usize) -> u8 {
        self.s[i]
    }

    #[inline]
    pub fn selected(&self, i: usize) -> bool {
        self.s[i] == 1
    }

    #[inline]
    pub fn y(&self, i: usize) -> f64 {
        self.y[i]
    }

    #[inline]
    pub fn x_row(&self, i: usize) -> &[f64] {
        let k = self.covariates.len();
        &self.x[i * k..(i + 1) * k]
    }

    pub fn observation(&self, i: usize) -> Observation {
        Observation {
            d: self.d[i],
            s: self.s[i],
            y: self.y[i],
            x: self.x_row(i).to_vec(),
        }
    }

    pub fn d_range(&self) -> (f64, f64) {
        (self.sorted_d[0], self.sorted_d[self.sorted_d.len() - 1])
    }

    /// Sample standard deviation of the treatment (n - 1 denominator).
    pub fn treatment_sd(&self) -> f64 {
        let n = self.n() as f64;
        if self.n() < 2 {
            return 0.0;
        }
        let mean = self.d.iter().sum::<f64>() / n;
        let ss: f64 = self.d.iter().map(|v| (v - mean).powi(2)).sum();
        (ss / (n - 1.0)).sqrt()
    }

    /// Range of the selected outcomes, `None` when nothing is selected.
    pub fn selected_outcome_range(&self) -> Option<(f64, f64)> {
        let mut it = (0..self.n()).filter(|&i| self.selected(i)).map(|i| self.y[i]);
        let first = it.next()?;
        Some(it.fold((first, first), |(lo, hi), v| (lo.min(v), hi.max(v))))
    }

    /// Indices with `|D_i - d| <= radius`, in treatment order.
    pub fn window(&self, d: f64, radius: f64) -> &[usize] {
        let lo = self.sorted_d.partition_point(|&v| v < d - radius);
        let hi = self.sorted_d.partition_point(|&v| v <= d + radius);
        &self.order[lo..hi]
    }

    /// New dataset restricted to `indices` (in the given order).
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let k = self.covariates.len();
        let mut x = Vec::with_capacity(indices.len() * k);
        for &i in indices {
            x.extend_from_slice(self.x_row(i));
        }
        Self::from_columns(
            indices.iter().map(|&i| self.d[i]).collect(),
            indices.iter().map(|&i| self.s[i]).collect(),
            indices.iter().map(|&i| self.y[i]).collect(),
            x,
            self.covariates.clone(),
        )
    }
}

/// Read a CSV file according to `schema`.
///
/// Missing covariates (any of `schema.missing_codes`) are set to 0 and a
/// binary `<name>_missing` column is appended for every covariate that had
/// at least one missing entry.
pub fn load_dataset(path: impl AsRef<Path>, schema: &Schema) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| LeeError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_dataset(BufReader::new(file), schema)
}

pub fn read_dataset<R: std::io::Read>(reader: R, schema: &Schema) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let index: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h, i)).collect();
    let col = |name: &str| {
        index
            .get(name)
            .copied()
            .ok_or_else(|| LeeError::UnknownColumn(name.to_string()))
    };
    let d_col = col(&schema.treatment)?;
    let s_col = col(&schema.selection)?;
    let y_col = col(&schema.outcome)?;
    let cov_cols: Vec<CovariateColumn> = schema.covariates.iter().map(|c| c.column()).collect();
    let cov_idx = cov_cols
        .iter()
        .map(|c| col(&c.name))
        .collect::<Result<Vec<_>>>()?;
    let is_missing = |v: &str| schema.missing_codes.iter().any(|m| m == v);

    let k = cov_cols.len();
    let mut rows = Vec::new();
    let mut missing_rows: Vec<Vec<bool>> = Vec::new();
    let mut any_missing = vec![false; k];
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let field = |c: usize| record.get(c).unwrap_or("");
        let parse = |c: usize, what: &str| -> Result<f64> {
            let raw = field(c);
            raw.parse::<f64>().map_err(|_| LeeError::Parse {
                line,
                message: format!("cannot parse {what} value `{raw}`"),
            })
        };
        let d = parse(d_col, "treatment")?;
        let s_raw = parse(s_col, "selection")?;
        let s = if s_raw == 0.0 {
            0u8
        } else if s_raw == 1.0 {
            1u8
        } else {
            return Err(LeeError::Validation(format!(
                "line {line}: selection must be 0 or 1, got {s_raw}"
            )));
        };
        let y = if s == 1 { parse(y_col, "outcome")? } else { 0.0 };
        let mut x = Vec::with_capacity(k);
        let mut miss = Vec::with_capacity(k);
        for (j, &c) in cov_idx.iter().enumerate() {
            let raw = field(c);
            if is_missing(raw) {
                x.push(0.0);
                miss.push(true);
                any_missing[j] = true;
            } else {
                x.push(parse(c, &cov_cols[j].name)?);
                miss.push(false);
            }
        }
        rows.push(Observation { d, s, y, x });
        missing_rows.push(miss);
    }
    if rows.is_empty() {
        return Err(LeeError::Validation("no data rows".into()));
    }

    let mut columns = cov_cols.clone();
    for (j, c) in cov_cols.iter().enumerate() {
        if any_missing[j] {
            columns.push(CovariateColumn {
                name: format!("{}_missing", c.name),
                kind: CovariateKind::Binary,
            });
        }
    }
    for (obs, miss) in rows.iter_mut().zip(&missing_rows) {
        for j in 0..k {
            if any_missing[j] {
                obs.x.push(if miss[j] { 1.0 } else { 0.0 });
            }
        }
    }
    Dataset::from_observations(rows, columns)
}

/// Write a dataset as CSV with columns `d,s,y,<covariates>`.
///
/// Values use the shortest round-trip float formatting, so reading the file
/// back with [`Schema`] `d,s,y` reproduces every finite value exactly.
pub fn write_dataset(path: impl AsRef<Path>, data: &Dataset) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|source| LeeError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut w = BufWriter::new(file);
    write_dataset_to(&mut w, data).map_err(|source| LeeError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn write_dataset_to<W: Write>(w: &mut W, data: &Dataset) -> std::io::Result<()> {
    write!(w, "d,s,y")?;
    for c in &data.covariates {
        write!(w, ",{}", c.name)?;
    }
    writeln!(w)?;
    for i in 0..data.n() {
        write!(w, "{},{},{}", data.d[i], data.s[i], data.y[i])?;
        for v in data.x_row(i) {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    w.flush()
}

/// Schema matching the layout produced by [`write_dataset`].
pub fn emitted_schema(data: &Dataset) -> Schema {
    Schema {
        treatment: "d".into(),
        selection: "s".into(),
        outcome: "y".into(),
        covariates: data
            .covariates
            .iter()
            .cloned()
            .map(CovariateSpec::Typed)
            .collect(),
        missing_codes: default_missing_codes(),
    }
}

/// Equally spaced treatment grid `d_1 < ... < d_J`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    points: Vec<f64>,
}

impl Grid {
    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn min(&self) -> f64 {
        self.points[0]
    }

    pub fn max(&self) -> f64 {
        self.points[self.points.len() - 1]
    }

    /// Index of the grid point closest to `v`.
    pub fn nearest_index(&self, v: f64) -> usize {
        let mut best = 0;
        for (j, &p) in self.points.iter().enumerate() {
            if (p - v).abs() < (self.points[best] - v).abs() {
                best = j;
            }
        }
        best
    }
}

pub fn build_grid(d_min: f64, d_max: f64, j: usize) -> Result<Grid> {
    if j < 2 {
        return Err(LeeError::Argument(format!("grid needs at least 2 points, got {j}")));
    }
    if !(d_min.is_finite() && d_max.is_finite()) || d_min >= d_max {
        return Err(LeeError::Argument(format!(
            "grid range must satisfy d_min < d_max, got [{d_min}, {d_max}]"
        )));
    }
    let step = (d_max - d_min) / (j - 1) as f64;
    let mut points: Vec<f64> = (0..j).map(|k| d_min + k as f64 * step).collect();
    points[j - 1] = d_max;
    Ok(Grid { points })
}

/// Random partition of `0..n` into `L` folds whose sizes differ by at most 1.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldAssignment {
    fold_of: Vec<usize>,
    folds: usize,
}

impl FoldAssignment {
    /// Fold id (0-based) of observation `i`.
    #[inline]
    pub fn fold_of(&self, i: usize) -> usize {
        self.fold_of[i]
    }

    pub fn folds(&self) -> usize {
        self.folds
    }

    pub fn n(&self) -> usize {
        self.fold_of.len()
    }

    pub fn members(&self, fold: usize) -> Vec<usize> {
        (0..self.fold_of.len())
            .filter(|&i| self.fold_of[i] == fold)
            .collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.folds];
        for &f in &self.fold_of {
            sizes[f] += 1;
        }
        sizes
    }

    /// Single fold covering everything: no sample splitting.
    pub fn whole(n: usize) -> Self {
        FoldAssignment {
            fold_of: vec![0; n],
            folds: 1,
        }
    }
}

pub fn assign_folds(n: usize, folds: usize, seed: u64) -> Result<FoldAssignment> {
    if folds == 0 || folds > n {
        return Err(LeeError::Argument(format!(
            "fold count must satisfy 1 <= L <= n, got L = {folds}, n = {n}"
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    perm.shuffle(&mut rng);
    let mut fold_of = vec![0; n];
    for (pos, &i) in perm.iter().enumerate() {
        fold_of[i] = pos % folds;
    }
    Ok(FoldAssignment { fold_of, folds })
}
