use std::collections::HashSet;

use modkit_core::backend::{Backend, MockBackend, StageTag};
use modkit_core::corpus::{synthetic_examples, LabeledExample, Task};
use modkit_core::pipeline::{
    collect_label_consistent, select_best, CellStatus, Metric, ModelSpec, Pipeline, PipelineError, RunConfig, RunRecord, StepKind,
    SubsamplingConfig, Technique,
};
use modkit_core::prompting::render_conditional_prompt;

fn models() -> Vec<ModelSpec> {
    vec![
        ModelSpec {
            name: "t5".into(),
            family: "T5".into(),
        },
        ModelSpec {
            name: "llama".into(),
            family: "Llama".into(),
        },
    ]
}

fn config(k_schedule: Vec<usize>) -> RunConfig {
    let mut c = RunConfig::new(Task::HateXplain, models(), k_schedule);
    c.eval.k_val = Some(10);
    c.eval.k_test = Some(10);
    c
}

fn data(per_class: usize) -> Vec<LabeledExample> {
    synthetic_examples(&Task::HateXplain.label_space(), per_class, 11)
}

fn dataset_digests(r: &RunRecord) -> Vec<String> {
    r.cells
        .iter()
        .flat_map(|c| c.steps.iter().filter_map(|s| s.dataset.as_ref().map(|d| d.digest.clone())))
        .collect()
}

#[test]
fn stage1_two_models() {
    let backend = MockBackend::new();
    let examples = data(100);
    let p = Pipeline::new(config(vec![16]), &examples, &backend).unwrap();
    let r = p.run_stage1().unwrap();
    assert_eq!(r.cells.len(), 2);
    assert_eq!(r.failed_cells(), 0);
    for c in &r.cells {
        assert_eq!(c.final_model.as_ref().unwrap().stages(), vec![StageTag::Sft, StageTag::Dpo]);
        let sft = c.val_after(StageTag::Sft).unwrap();
        let dpo = c.val_after(StageTag::Dpo).unwrap();
        assert!(dpo.accuracy >= sft.accuracy);
        assert!(c.test.is_some());
        let dpo_step = c.steps.iter().find(|s| matches!(s.kind, StepKind::Train { stage: StageTag::Dpo, .. })).unwrap();
        assert_eq!(dpo_step.dataset.as_ref().unwrap().records, 16 * 3 * 2);
    }
    // Same seeds, fresh backend: identical data artifacts.
    let again = Pipeline::new(config(vec![16]), &examples, &MockBackend::new()).unwrap().run_stage1().unwrap();
    assert_eq!(dataset_digests(&r), dataset_digests(&again));
    assert_eq!(
        r.cells.iter().map(|c| c.final_model.clone()).collect::<Vec<_>>(),
        again.cells.iter().map(|c| c.final_model.clone()).collect::<Vec<_>>()
    );
}

#[test]
fn kto_alignment_lineage() {
    let backend = MockBackend::new();
    let mut c = config(vec![16]);
    c.alignment_method = modkit_core::backend::Method::Kto;
    let r = Pipeline::new(c, &data(100), &backend).unwrap().run_stage1().unwrap();
    for cell in &r.cells {
        assert_eq!(cell.technique, Technique::Kto);
        assert_eq!(cell.final_model.as_ref().unwrap().stages(), vec![StageTag::Sft, StageTag::Kto]);
    }
}

#[test]
fn subsampling_cells_at_pool_k() {
    let backend = MockBackend::new();
    let mut c = config(vec![16, 256]);
    c.subsampling = Some(SubsamplingConfig::default());
    c.max_parallel_cells = 2;
    let r = Pipeline::new(c, &data(440), &backend).unwrap().run_stage1().unwrap();
    assert_eq!(r.failed_cells(), 0);
    let at_256: Vec<String> = r.cells.iter().filter(|c| c.k == 256 && c.model == "t5").map(|c| c.technique.to_string()).collect();
    assert_eq!(at_256, ["DPO", "DPO-K128", "DPO-K192", "DPO-N128", "DPO-N192"]);
    assert_eq!(r.cells.iter().filter(|c| c.k == 16).count(), 2);
    for cell in r.cells.iter().filter(|c| c.k == 256) {
        let dpo = cell.steps.iter().rev().find_map(|s| s.dataset.as_ref()).unwrap();
        let expected = match cell.technique {
            Technique::DpoK(k) | Technique::DpoN(k) => k * 6,
            _ => 256 * 6,
        };
        assert_eq!(dpo.records, expected, "{}", cell.cell_id);
    }
    // Cells are listed in plan order regardless of which finished first.
    let ordinals: Vec<usize> = r.cells.iter().map(|c| c.ordinal).collect();
    assert_eq!(ordinals, (0..r.cells.len()).collect::<Vec<_>>());
}

#[test]
fn failing_cell_does_not_stop_the_sweep() {
    let backend = MockBackend::new();
    backend.fail_training_for("llama", StageTag::Dpo);
    let r = Pipeline::new(config(vec![16, 32]), &data(100), &backend).unwrap().run_stage1().unwrap();
    assert_eq!(r.cells.len(), 4);
    assert_eq!(r.failed_cells(), 2);
    for c in &r.cells {
        assert_eq!(c.status == CellStatus::Failed, c.model == "llama");
        if c.model == "llama" {
            assert!(c.error.as_deref().unwrap().contains("training failed"));
            // The SFT step before the failure is still on record.
            assert!(c.steps.iter().any(|s| s.model_out.is_some()));
        }
    }
    let best = select_best(&r.cells, Metric::MacroF1, false).unwrap();
    assert_eq!(best.model, "t5");
}

#[test]
fn stage2_cross_cells() {
    let backend = MockBackend::new();
    let mut c = config(vec![16]);
    c.k_check = 16;
    let p = Pipeline::new(c, &data(100), &backend).unwrap();
    let s1 = p.run_stage1().unwrap();
    let s2 = p.run_stage2(&s1).unwrap();
    assert_eq!(s2.failed_cells(), 0);
    let ids: Vec<&str> = s2.cells.iter().map(|c| c.cell_id.as_str()).collect();
    assert_eq!(ids, ["x/t5<-llama", "x/llama<-t5"]);
    for cell in &s2.cells {
        assert_eq!(
            cell.final_model.as_ref().unwrap().stages(),
            vec![StageTag::Sft, StageTag::Dpo, StageTag::CrossSft, StageTag::CrossDpo]
        );
        assert!(cell.test.is_some());
    }
    let pool: HashSet<String> = p.pool(16).unwrap().ids().map(String::from).collect();
    let comp = p.complementary(16).unwrap();
    assert_eq!(comp.len(), 48);
    assert!(comp.ids().all(|id| !pool.contains(id)));
}

#[test]
fn stage2_needs_checkpoints() {
    let backend = MockBackend::new();
    backend.fail_training_for("t5", StageTag::Sft);
    let mut c = config(vec![16]);
    c.k_check = 16;
    let p = Pipeline::new(c, &data(100), &backend).unwrap();
    let s1 = p.run_stage1().unwrap();
    match p.run_stage2(&s1) {
        Err(PipelineError::MissingCheckpoint { model, k }) => assert_eq!((model.as_str(), k), ("t5", 16)),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn manifests_on_disk() {
    let dir = tempfile::tempdir().unwrap();
    let backend = MockBackend::new();
    let p = Pipeline::new(config(vec![16]), &data(100), &backend).unwrap().with_runs_dir(dir.path()).with_run_id("demo");
    let r = p.run_stage1().unwrap();
    let run_dir = dir.path().join("demo-stage1");
    let on_disk = RunRecord::load(run_dir.join("manifest.json")).unwrap();
    assert_eq!(on_disk, r);
    let events = std::fs::read_to_string(run_dir.join("events.jsonl")).unwrap();
    assert_eq!(events.lines().count(), 2);
    let files: Vec<String> = std::fs::read_dir(run_dir.join("data")).unwrap().map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect();
    assert!(files.iter().any(|f| f.ends_with(".dpo.jsonl")));
    assert!(files.iter().any(|f| f.ends_with(".sft.manifest.json")));
}

#[test]
fn auxiliary_sft_comes_first() {
    let dir = tempfile::tempdir().unwrap();
    let aux = dir.path().join("aux.jsonl");
    std::fs::write(&aux, "{\"prompt\":\"p\",\"completion\":\"EXPLANATION: x\\nLABEL: Hate\"}\n").unwrap();
    let mut c = config(vec![16]);
    c.auxiliary_sft = Some(aux);
    let backend = MockBackend::new();
    let r = Pipeline::new(c, &data(100), &backend).unwrap().run_stage1().unwrap();
    assert_eq!(r.cells[0].final_model.as_ref().unwrap().stages(), vec![StageTag::Aux, StageTag::Sft, StageTag::Dpo]);
}

#[test]
fn full_baseline_rows() {
    let backend = MockBackend::new();
    let p = Pipeline::new(config(vec![16]), &data(100), &backend).unwrap();
    let r = p.run_full_baseline().unwrap();
    assert_eq!(r.cells.len(), 3);
    assert_eq!(r.failed_cells(), 0);
    let encoder = r.cell("full/encoder").unwrap().test.as_ref().unwrap();
    assert!(encoder.macro_f1 > 0.9, "encoder F1 {}", encoder.macro_f1);
    for c in &r.cells {
        assert_eq!(c.k, p.split().train.len());
    }
}

#[test]
fn label_consistency_extremes() {
    let backend = MockBackend::new();
    let space = Task::HateXplain.label_space();
    let p = Pipeline::new(config(vec![16]), &data(100), &backend).unwrap();
    let pool = p.pool(16).unwrap();
    let a = backend.model("a");
    let b = backend.model("b");
    let settings = Default::default();
    // Unbound conditional prompts fall back to the conditioned label.
    let all = collect_label_consistent(&backend, &a, &b, &pool, &space, &settings).unwrap();
    assert_eq!((all.retained(), all.total), (48, 48));
    backend.bind(
        &b,
        pool.examples.iter().map(|e| (render_conditional_prompt(&e.post, &e.gold_label, &space).unwrap().text, "no idea")),
    );
    let none = collect_label_consistent(&backend, &a, &b, &pool, &space, &settings).unwrap();
    assert_eq!(none.retained(), 0);
    assert_eq!(none.retention(), 0.0);
    assert_eq!(backend.kind(), modkit_core::backend::BackendKind::Mock);
}
