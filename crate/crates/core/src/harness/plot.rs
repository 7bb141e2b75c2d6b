//! Plot-ready two-column text.

use thiserror::Error;

use super::report::RunReport;

#[derive(Debug, Error, PartialEq)]
pub enum PlotError {
    #[error("report has no series `{name}`; available: {available}")]
    UnknownSeries { name: String, available: String },
}

/// Series `name` of `report` as `x y` lines under a `#` header.
pub fn emit_plot_data(report: &RunReport, name: &str) -> Result<String, PlotError> {
    let points = report.series.get(name).ok_or_else(|| PlotError::UnknownSeries {
        name: name.to_owned(),
        available: report.series.keys().cloned().collect::<Vec<_>>().join(", "),
    })?;
    let mut out = format!("# {} / {name}\n", report.config.name);
    for (x, y) in points {
        out.push_str(&format!("{x:e} {y:e}\n"));
    }
    Ok(out)
}
