//! Two-block text files for external plotting: measured points, then
//! reference or bound-shape curves on the same `N` values.

use std::fmt::Write as _;
use std::path::Path;

use crate::output::{write_atomic, OutputError};
use crate::study::{CellResult, StudyResult};

#[derive(Debug, thiserror::Error)]
pub enum PlotError {
    #[error("metric `{metric}` is not in the result; available: {available}")]
    MissingMetric { metric: String, available: String },
    #[error("metric `{metric}` is ambiguous; candidates: {candidates}")]
    Ambiguous { metric: String, candidates: String },
    #[error(transparent)]
    Output(#[from] OutputError),
}

/// Resolve `metric` to a metric id present in `result`: an exact id, or a
/// metric kind with a single instance.
pub fn resolve_metric(result: &StudyResult, metric: &str) -> Result<String, PlotError> {
    let mut ids: Vec<&str> = Vec::new();
    for c in &result.cells {
        if !ids.contains(&c.metric.as_str()) {
            ids.push(&c.metric);
        }
    }
    if ids.contains(&metric) {
        return Ok(metric.to_string());
    }
    let prefix = format!("{metric}(");
    let matches: Vec<&str> = ids.iter().copied().filter(|id| id.starts_with(&prefix)).collect();
    match matches.as_slice() {
        [one] => Ok(one.to_string()),
        [] => Err(PlotError::MissingMetric {
            metric: metric.into(),
            available: ids.join(", "),
        }),
        many => Err(PlotError::Ambiguous {
            metric: metric.into(),
            candidates: many.join(", "),
        }),
    }
}

fn reference_columns(result: &StudyResult, id: &str, cells: &[&CellResult]) -> (Vec<&'static str>, Vec<Vec<f64>>) {
    let h = result.audit.rel_entropy.map(|e| e.value);
    let i = result.audit.rel_fisher.map(|e| e.value);
    let kind = id.split('(').next().unwrap_or(id);
    let rows = |f: &dyn Fn(&CellResult) -> Vec<f64>| cells.iter().map(|c| f(c)).collect::<Vec<_>>();
    match (kind, h, i) {
        ("entropy", Some(h), _) => (vec!["H(f|gamma)"], rows(&|_| vec![h])),
        ("conditioned_entropy", Some(h), _) => (vec!["H(f|gamma)"], rows(&|_| vec![h])),
        ("fisher", _, Some(i)) => (
            vec!["I(f|gamma)", "(1-1/N)I(f|gamma)"],
            rows(&|c| vec![i, (1.0 - 1.0 / c.n as f64) * i]),
        ),
        ("fisher_n2", _, Some(i)) => (vec!["I(f|gamma)/2", "I(f|gamma)"], rows(&|_| vec![0.5 * i, i])),
        _ => {
            let pred = result.predictions.iter().find(|p| p.metric == id);
            match (pred, cells.last()) {
                // The constant is unknown: scale the shape through the last point.
                (Some(p), Some(last)) => {
                    let scale = last.estimate.value / p.prediction.shape.eval(last.n as f64);
                    (
                        vec!["bound_shape"],
                        rows(&|c| vec![scale * p.prediction.shape.eval(c.n as f64)]),
                    )
                }
                _ => (vec!["bound"], rows(&|c| vec![c.bound.as_ref().map_or(f64::NAN, |b| b.value)])),
            }
        }
    }
}

/// The plot file contents for `metric`.
pub fn plot_data(result: &StudyResult, metric: &str) -> Result<String, PlotError> {
    let id = resolve_metric(result, metric)?;
    let cells: Vec<&CellResult> = result.cells_for(&id).collect();
    let mut out = String::new();
    let _ = writeln!(out, "# study {} metric {} base {}", result.study_id, id, result.audit.base);
    let _ = writeln!(out, "# N estimate stderr");
    for c in &cells {
        let _ = writeln!(out, "{} {:e} {:e}", c.n, c.estimate.value, c.estimate.total_error());
    }
    let (names, values) = reference_columns(result, &id, &cells);
    let _ = writeln!(out, "\n");
    let _ = writeln!(out, "# N {}", names.join(" "));
    for (c, row) in cells.iter().zip(values) {
        let cols: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
        let _ = writeln!(out, "{} {}", c.n, cols.join(" "));
    }
    Ok(out)
}

/// Write the plot file for `metric` to `path` atomically.
pub fn emit_plot_data(result: &StudyResult, metric: &str, path: &Path) -> Result<(), PlotError> {
    let text = plot_data(result, metric)?;
    write_atomic(path, text.as_bytes())?;
    Ok(())
}
