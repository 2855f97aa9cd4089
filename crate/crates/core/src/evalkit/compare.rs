use serde::{Deserialize, Serialize};

use super::{EvalError, Result};

/// A data-efficient model measured against one trained on the full split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub dataset: String,
    pub model: String,
    pub f1_aug: f64,
    pub f1_full: f64,
    /// `f1_aug / f1_full` as a percentage.
    pub f1_pct: f64,
    /// Training records used (`K * |S|`) over the full training split, as a percentage.
    pub data_pct: f64,
    pub records: usize,
    pub train_size: usize,
}

impl ComparisonRow {
    pub fn f1_pct_display(&self) -> String {
        format!("{}%", round_half_up_pct(self.f1_pct))
    }

    pub fn data_pct_display(&self) -> String {
        format!("{}%", round_half_up_pct(self.data_pct))
    }
}

/// Integer percent, halves rounded up.
pub fn round_half_up_pct(pct: f64) -> i64 {
    (pct + 0.5 + 1e-9).floor() as i64
}

pub fn compare_to_full(
    dataset: &str,
    model: &str,
    f1_aug: f64,
    f1_full: f64,
    k: usize,
    n_labels: usize,
    train_size: usize,
) -> Result<ComparisonRow> {
    if !(f1_full.is_finite() && f1_full > 0.0) || train_size == 0 {
        return Err(EvalError::InvalidBaseline { f1_full, train_size });
    }
    let records = k * n_labels;
    Ok(ComparisonRow {
        dataset: dataset.to_string(),
        model: model.to_string(),
        f1_aug,
        f1_full,
        f1_pct: 100.0 * f1_aug / f1_full,
        data_pct: 100.0 * records as f64 / train_size as f64,
        records,
        train_size,
    })
}

/// Markdown table with integer percentages.
pub fn render_comparison_table(rows: &[ComparisonRow]) -> String {
    let mut out = String::from("| Dataset | Model | F1 (full) | F1 | F1% | Data% |\n|---|---|---|---|---|---|\n");
    for r in rows {
        out.push_str(&format!(
            "| {} | {} | {:.2} | {:.2} | {} | {} |\n",
            r.dataset,
            r.model,
            r.f1_full,
            r.f1_aug,
            r.f1_pct_display(),
            r.data_pct_display()
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn data_percentages() {
        let hx = compare_to_full("HateXplain", "Llama", 0.65, 0.72, 256, 3, 12_089).unwrap();
        assert_eq!(hx.records, 768);
        assert_eq!(hx.data_pct_display(), "6%");
        let lh = compare_to_full("Latent Hate", "Llama", 0.6, 0.7, 256, 3, 11_467).unwrap();
        assert_eq!(lh.data_pct_display(), "7%");
        let same = compare_to_full("x", "m", 0.5, 0.5, 1, 2, 10).unwrap();
        assert_eq!(same.f1_pct_display(), "100%");
    }

    #[test]
    fn rounding_is_half_up() {
        assert_eq!(round_half_up_pct(6.5), 7);
        assert_eq!(round_half_up_pct(6.49), 6);
        assert_eq!(round_half_up_pct(0.0), 0);
    }

    #[test]
    fn bad_baseline() {
        assert!(matches!(compare_to_full("x", "m", 0.5, 0.0, 1, 2, 10), Err(EvalError::InvalidBaseline { .. })));
        assert!(matches!(compare_to_full("x", "m", 0.5, 0.5, 1, 2, 0), Err(EvalError::InvalidBaseline { .. })));
    }

    #[test]
    fn table_renders_rows() {
        let row = compare_to_full("HateXplain", "T5", 0.6, 0.72, 256, 3, 12_089).unwrap();
        let t = render_comparison_table(&[row]);
        assert!(t.contains("| HateXplain | T5 | 0.72 | 0.60 | 83% | 6% |"));
    }
}
