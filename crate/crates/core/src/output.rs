//! CSV and JSON artifacts. Files are written to a temporary sibling and
//! renamed into place.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::bounds::{BoundsCurve, SelectionCurve};
use crate::error::{LeeError, Result};
use crate::sim::CoverageReport;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> LeeError + '_ {
    move |source| LeeError::Io { path: path.display().to_string(), source }
}

/// Write `bytes` to `path` via a temporary file in the same directory.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
        f.write_all(bytes).map_err(io_err(&tmp))?;
        f.sync_all().map_err(io_err(&tmp))?;
    }
    fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn write_json<T: Serialize + ?Sized>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

fn csv_bytes<F>(header: &[&str], rows: usize, mut row: F) -> Result<Vec<u8>>
where
    F: FnMut(usize) -> Vec<String>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for i in 0..rows {
        w.write_record(row(i))?;
    }
    w.into_inner().map_err(|e| LeeError::Io { path: "<buffer>".into(), source: e.into_error() })
}

pub const CURVE_COLUMNS: [&str; 9] = ["d", "rho_L", "rho_U", "se_L", "se_U", "ci_low", "ci_high", "p_trim", "h"];

pub fn curve_csv(curve: &BoundsCurve) -> Result<Vec<u8>> {
    csv_bytes(&CURVE_COLUMNS, curve.points.len(), |j| {
        let p = &curve.points[j];
        [p.d, p.rho_l, p.rho_u, p.se_l, p.se_u, p.ci_low, p.ci_high, p.p_trim, p.h]
            .iter()
            .map(|v| v.to_string())
            .collect()
    })
}

pub fn write_curve_csv(path: impl AsRef<Path>, curve: &BoundsCurve) -> Result<()> {
    write_atomic(path, &curve_csv(curve)?)
}

pub fn write_selection_csv(path: impl AsRef<Path>, sel: &SelectionCurve) -> Result<()> {
    let pts = sel.grid.points();
    let bytes = csv_bytes(&["d", "s_hat", "f_hat", "h"], pts.len(), |j| {
        vec![pts[j].to_string(), sel.s_hat[j].to_string(), sel.f_hat[j].to_string(), sel.h[j].to_string()]
    })?;
    write_atomic(path, &bytes)
}

/// Counts of per-observation sufficient values on the grid.
pub fn sufficient_histogram(grid: &[f64], values: &[f64]) -> Vec<(f64, usize)> {
    grid.iter()
        .map(|&d| (d, values.iter().filter(|&&v| v == d).count()))
        .collect()
}

pub fn write_histogram_csv(path: impl AsRef<Path>, hist: &[(f64, usize)]) -> Result<()> {
    let bytes = csv_bytes(&["d", "count"], hist.len(), |j| vec![hist[j].0.to_string(), hist[j].1.to_string()])?;
    write_atomic(path, &bytes)
}

pub fn write_coverage_csv(path: impl AsRef<Path>, report: &CoverageReport) -> Result<()> {
    let header = ["d", "true_L", "true_U", "bias_L", "bias_U", "rmse_L", "rmse_U", "coverage", "mean_width"];
    let bytes = csv_bytes(&header, report.points.len(), |j| {
        let p = &report.points[j];
        [p.d, p.true_l, p.true_u, p.bias_l, p.bias_u, p.rmse_l, p.rmse_u, p.coverage, p.mean_width]
            .iter()
            .map(|v| v.to_string())
            .collect()
    })?;
    write_atomic(path, &bytes)
}
