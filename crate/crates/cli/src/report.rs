use std::collections::BTreeSet;
use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use indexmap::IndexMap;
use serde::Deserialize;

use modkit_core::evalkit::{aggregate_votes, compare_to_full, emit_report, render_comparison_table, ReportBundle, Vote};
use modkit_core::pipeline::{CellRecord, RunRecord, RunStage, Technique};

#[derive(Args)]
pub struct ReportArgs {
    /// Run manifest(s) from stage1, stage2 or eval --full.
    #[arg(long = "manifest", required = true)]
    manifests: Vec<PathBuf>,
    /// Use validation scores instead of test scores.
    #[arg(long)]
    use_val: bool,
    /// Vote export (CSV with sample_id, annotator_id, resolved_model).
    #[arg(long, requires = "gold")]
    votes: Option<PathBuf>,
    /// JSONL with sample_id and gold_label per annotated sample.
    #[arg(long)]
    gold: Option<PathBuf>,
    #[arg(long, default_value = "report")]
    out: PathBuf,
}

#[derive(Deserialize)]
struct GoldLine {
    sample_id: String,
    gold_label: String,
}

fn variant(cell: &CellRecord) -> String {
    match cell.stage {
        RunStage::Stage1 => format!("K={} {}", cell.k, cell.technique),
        RunStage::Stage2 => format!("K={} cross from {}", cell.k, cell.counterpart.as_deref().unwrap_or("?")),
        RunStage::Full => "Full".to_string(),
    }
}

pub fn run(args: &ReportArgs) -> Result<()> {
    let mut records = vec![];
    for path in &args.manifests {
        records.push(RunRecord::load(path).with_context(|| format!("reading {}", path.display()))?);
    }
    let mut bundle = ReportBundle::default();
    for record in &records {
        for cell in record.cells.iter().filter(|c| c.succeeded()) {
            let report = if args.use_val { cell.val.as_ref() } else { cell.test.as_ref() };
            if let Some(r) = report {
                let digest = cell.final_model.as_ref().map(|m| m.digest()).unwrap_or_default();
                bundle.reports.push(r.clone().labelled(cell.model.clone(), variant(cell), digest));
            }
        }
    }

    // Full-data comparison: DPO at the largest K against the label-only model.
    let full_cells: Vec<&CellRecord> = records.iter().filter(|r| r.stage == RunStage::Full).flat_map(|r| r.cells.iter()).collect();
    let dpo_cells: Vec<&CellRecord> = records
        .iter()
        .filter(|r| r.stage == RunStage::Stage1)
        .flat_map(|r| r.cells.iter())
        .filter(|c| c.succeeded() && c.technique == Technique::Dpo)
        .collect();
    for full in full_cells.iter().filter(|c| c.succeeded()) {
        let Some(full_report) = full.test.as_ref() else { continue };
        let Some(k) = dpo_cells.iter().filter(|c| c.model == full.model).map(|c| c.k).max() else {
            continue;
        };
        let aug = dpo_cells.iter().find(|c| c.model == full.model && c.k == k).and_then(|c| c.test.as_ref());
        if let Some(aug) = aug {
            bundle.comparisons.push(compare_to_full(
                &full_report.task,
                &full.model,
                aug.macro_f1,
                full_report.macro_f1,
                k,
                full_report.per_class.len(),
                full.k,
            )?);
        }
    }

    if let (Some(votes_path), Some(gold_path)) = (&args.votes, &args.gold) {
        let mut samples = IndexMap::new();
        for (i, line) in fs::read_to_string(gold_path)?.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let g: GoldLine = serde_json::from_str(line).with_context(|| format!("{} line {}", gold_path.display(), i + 1))?;
            samples.insert(g.sample_id, g.gold_label);
        }
        let mut reader = csv::Reader::from_path(votes_path).with_context(|| format!("reading {}", votes_path.display()))?;
        let mut votes = vec![];
        for row in reader.records() {
            let row = row?;
            if row.len() < 3 {
                bail!("{}: expected sample_id, annotator_id, resolved_model", votes_path.display());
            }
            votes.push(Vote {
                sample_id: row[0].to_string(),
                annotator_id: row[1].to_string(),
                choice: row[2].to_string(),
            });
        }
        let sources: Vec<String> = votes.iter().map(|v| v.choice.clone()).collect::<BTreeSet<_>>().into_iter().collect();
        let tally = aggregate_votes(&samples, &sources, &votes)?;
        fs::create_dir_all(&args.out)?;
        fs::write(args.out.join("votes.csv"), tally.to_csv()?)?;
        print!("{}", tally.to_csv()?);
        bundle.tallies.push(tally);
    }

    let files = emit_report(&bundle, &args.out)?;
    if !bundle.comparisons.is_empty() {
        println!("{}", render_comparison_table(&bundle.comparisons));
    }
    println!("{} reports -> {}", bundle.reports.len(), files.json.display());
    for chart in &files.charts {
        println!("chart -> {}", chart.display());
    }
    Ok(())
}
