//! Byte-for-byte checks against frozen files in `tests/golden/`.
//! Run with `MODKIT_BLESS=1` to rewrite them after an intended change.

use std::path::PathBuf;

use modkit_core::backend::{BackendKind, ModelRef};
use modkit_core::corpus::{Post, Task};
use modkit_core::evalkit::{compare_to_full, score, ReportBundle};
use modkit_core::prefdata::{build_dpo_pairs, build_kto_records, dpo_file, kto_file, ConditionedCompletion, ConditionedExplanationSet, ConditionedPost};
use modkit_core::prompting::{format_completion, render_classification_prompt, render_conditional_prompt, PredictedLabel};

fn golden_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

fn check(name: &str, actual: &str) {
    let path = golden_path(name);
    if std::env::var_os("MODKIT_BLESS").is_some() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, actual).unwrap();
        return;
    }
    let expected = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert!(expected == actual, "{name} differs from golden file");
}

fn sample_post() -> Post {
    Post {
        id: "g1".into(),
        text: "<user> they keep saying those people ruin everything".into(),
        platform: None,
    }
}

#[test]
fn prompts_match_golden_files() {
    for task in Task::ALL {
        let space = task.label_space();
        check(&format!("{}.classification.txt", task.slug()), &render_classification_prompt(&sample_post(), &space).text);
        let label = space.labels().last().unwrap();
        check(
            &format!("{}.conditional.txt", task.slug()),
            &render_conditional_prompt(&sample_post(), label, &space).unwrap().text,
        );
    }
}

fn fixed_set() -> ConditionedExplanationSet {
    let labels = vec!["Normal".to_string(), "Offensive".to_string(), "Hate".to_string()];
    let posts = (0..2)
        .map(|i| {
            let gold = labels[i + 1].clone();
            let completions = labels
                .iter()
                .map(|l| {
                    let explanation = format!("Post {i} read as {l}.");
                    (
                        l.clone(),
                        ConditionedCompletion {
                            completion: format_completion(&explanation, l),
                            explanation,
                            parsed_label: PredictedLabel::Label(l.clone()),
                        },
                    )
                })
                .collect();
            ConditionedPost {
                post_id: format!("p{i}"),
                gold_label: gold,
                prompt: format!("classify post {i}"),
                completions,
            }
        })
        .collect();
    ConditionedExplanationSet { labels, posts }
}

#[test]
fn training_files_match_golden_files() {
    let cset = fixed_set();
    check("pairs.dpo.jsonl", &dpo_file(&build_dpo_pairs(&cset).unwrap()).content);
    check("records.kto.jsonl", &kto_file(&build_kto_records(&cset).unwrap()).content);
}

#[test]
fn report_json_matches_golden_file() {
    let space = Task::HateXplain.label_space();
    let l = |s: &str| PredictedLabel::Label(s.into());
    let preds = vec![
        ("Normal".to_string(), l("Normal")),
        ("Normal".to_string(), l("Hate")),
        ("Offensive".to_string(), l("Offensive")),
        ("Offensive".to_string(), PredictedLabel::Invalid),
        ("Hate".to_string(), l("Hate")),
    ];
    let model = ModelRef::base("llama", BackendKind::Mock);
    let report = score(&preds, &space).unwrap().labelled("llama", "K=16 DPO", model.digest());
    let bundle = ReportBundle {
        reports: vec![report],
        comparisons: vec![compare_to_full("HateXplain", "llama", 0.62, 0.72, 256, 3, 12_089).unwrap()],
        ..Default::default()
    };
    let dir = tempfile::tempdir().unwrap();
    let files = modkit_core::evalkit::emit_report(&bundle, dir.path()).unwrap();
    check("report.json", &std::fs::read_to_string(files.json).unwrap());
    check("chart_hatexplain.svg", &std::fs::read_to_string(&files.charts[0]).unwrap());
}
