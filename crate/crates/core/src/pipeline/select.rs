use super::{CellRecord, Metric, PipelineError, Result};

/// Best successful cell by `metric` on validation (or test when `use_test`).
/// Ties go to the smaller K, then the model listed first, then the earlier cell.
pub fn select_best(cells: &[CellRecord], metric: Metric, use_test: bool) -> Result<&CellRecord> {
    let mut best: Option<(&CellRecord, f64)> = None;
    for cell in cells.iter().filter(|c| c.succeeded()) {
        let report = if use_test { cell.test.as_ref() } else { cell.val.as_ref() };
        let Some(report) = report else {
            continue;
        };
        let score = metric.of(report);
        let better = match best {
            None => true,
            Some((b, s)) => score > s || (score == s && (cell.k, cell.model_index) < (b.k, b.model_index)),
        };
        if better {
            best = Some((cell, score));
        }
    }
    best.map(|(c, _)| c).ok_or(PipelineError::NoSuccessfulCell)
}
