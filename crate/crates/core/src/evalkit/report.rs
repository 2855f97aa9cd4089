use std::fs;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::{render_grouped_bar_chart, ComparisonRow, EvalReport, Result, StyleAttribution, VoteTally};

/// Everything a report file holds.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    pub reports: Vec<EvalReport>,
    #[serde(default)]
    pub comparisons: Vec<ComparisonRow>,
    #[serde(default)]
    pub tallies: Vec<VoteTally>,
    #[serde(default)]
    pub styles: Vec<StyleAttribution>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmittedFiles {
    pub json: PathBuf,
    pub charts: Vec<PathBuf>,
}

fn slug(s: &str) -> String {
    let mut out = String::new();
    for c in s.chars() {
        if c.is_ascii_alphanumeric() {
            out.push(c.to_ascii_lowercase());
        } else if !out.ends_with('_') {
            out.push('_');
        }
    }
    out.trim_matches('_').to_string()
}

/// Write `report.json` plus one macro-F1 bar chart per task into `out_dir`.
///
/// Charts cluster bars by variant and colour them by model, both in
/// first-seen order, so output is a pure function of the bundle.
pub fn emit_report(bundle: &ReportBundle, out_dir: impl AsRef<Path>) -> Result<EmittedFiles> {
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir)?;
    let json = out_dir.join("report.json");
    let mut text = serde_json::to_string_pretty(bundle)?;
    text.push('\n');
    fs::write(&json, text)?;

    let mut by_task: IndexMap<&str, Vec<&EvalReport>> = IndexMap::new();
    for r in &bundle.reports {
        by_task.entry(r.task.as_str()).or_default().push(r);
    }
    let mut charts = Vec::new();
    for (task, reports) in by_task {
        let mut groups: Vec<String> = Vec::new();
        let mut series: Vec<String> = Vec::new();
        for r in &reports {
            if !groups.contains(&r.variant) {
                groups.push(r.variant.clone());
            }
            if !series.contains(&r.model) {
                series.push(r.model.clone());
            }
        }
        let mut values = vec![vec![None; groups.len()]; series.len()];
        for r in &reports {
            let s = series.iter().position(|m| *m == r.model).expect("collected above");
            let g = groups.iter().position(|v| *v == r.variant).expect("collected above");
            values[s][g] = Some(r.macro_f1);
        }
        let svg = render_grouped_bar_chart(&format!("{task}: macro-F1"), &groups, &series, &values);
        let path = out_dir.join(format!("chart_{}.svg", slug(task)));
        fs::write(&path, svg)?;
        charts.push(path);
    }
    Ok(EmittedFiles { json, charts })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Task;
    use crate::evalkit::score;
    use crate::prompting::PredictedLabel;

    fn report(model: &str, variant: &str) -> EvalReport {
        let space = Task::HateXplain.label_space();
        let preds: Vec<_> = space.labels().iter().map(|l| (l.clone(), PredictedLabel::Label(l.clone()))).collect();
        score(&preds, &space).unwrap().labelled(model, variant, "d")
    }

    #[test]
    fn one_report_one_chart() {
        let dir = tempfile::tempdir().unwrap();
        let bundle = ReportBundle {
            reports: vec![report("T5", "K=16 DPO")],
            ..Default::default()
        };
        let files = emit_report(&bundle, dir.path()).unwrap();
        assert_eq!(files.charts.len(), 1);
        assert!(files.charts[0].ends_with("chart_hatexplain.svg"));
        let back: ReportBundle = serde_json::from_str(&fs::read_to_string(&files.json).unwrap()).unwrap();
        assert_eq!(back, bundle);
        let again = tempfile::tempdir().unwrap();
        let files2 = emit_report(&bundle, again.path()).unwrap();
        assert_eq!(fs::read(&files.charts[0]).unwrap(), fs::read(&files2.charts[0]).unwrap());
    }
}
