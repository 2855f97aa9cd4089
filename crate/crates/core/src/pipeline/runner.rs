use std::fs;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::record::now;
use super::{
    CellRecord, CellStatus, HyperparameterRegistry, PipelineError, Result, RunConfig, RunLog, RunRecord, RunStage, StepKind,
    StepRecord, Technique,
};
use crate::backend::{
    generate_all, train_text_classifier, Backend, ClassifierSpec, GenerationSettings, ModelRef, StageTag, TrainingSpec,
};
use crate::corpus::{
    complementary_pool, merge_explanations, load_dataset, sample_eval_subset, sample_k_shot, split_dataset, DatasetSplit,
    EvalSubset, LabelSpace, LabeledExample, ShotPool, SplitTag,
};
use crate::evalkit::{score, score_responses, EvalReport};
use crate::prefdata::{
    build_dpo_pairs, build_kto_records, distinct_posts, dpo_file, generate_conditioned_explanations, kto_file, serialize,
    subsample_dpo_k, subsample_dpo_n, ConditionedExplanationSet, DatasetManifest, SftLine, TrainingFile, TrainingRecord,
};
use crate::prompting::{
    build_sft_record, format_completion, format_label_only, parse_label_only, parse_response, render_classification_prompt,
    render_conditional_prompt, PredictedLabel,
};

/// How completions are read back during evaluation.
#[derive(Debug, Clone, Copy)]
enum Reader {
    Explained,
    LabelOnly,
}

/// Runs the stages of one [`RunConfig`] against one backend.
pub struct Pipeline<'a> {
    config: RunConfig,
    space: LabelSpace,
    split: DatasetSplit,
    val: EvalSubset,
    test: EvalSubset,
    backend: &'a dyn Backend,
    registry: HyperparameterRegistry,
    runs_dir: Option<PathBuf>,
    run_id: Option<String>,
}

/// Steps shared by every cell of one (model, K): SFT and explanation generation.
struct Prepared {
    pool: ShotPool,
    sft_model: ModelRef,
    cset: ConditionedExplanationSet,
}

impl<'a> Pipeline<'a> {
    pub fn new(config: RunConfig, examples: &[LabeledExample], backend: &'a dyn Backend) -> Result<Self> {
        config.validate()?;
        let space = config.task.label_space();
        let split = split_dataset(examples, config.ratios(), config.seeds.sampling)?;
        let val = sample_eval_subset(&split.val, SplitTag::Val, &space, config.k_val(), config.seeds.sampling, config.sample_mode)?;
        let test = sample_eval_subset(&split.test, SplitTag::Test, &space, config.k_test(), config.seeds.sampling, config.sample_mode)?;
        Ok(Self {
            config,
            space,
            split,
            val,
            test,
            backend,
            registry: HyperparameterRegistry::builtin(),
            runs_dir: None,
            run_id: None,
        })
    }

    /// Load `config.dataset` (and `config.explanations`) and build a pipeline.
    pub fn from_config_files(config: RunConfig, backend: &'a dyn Backend) -> Result<Self> {
        let path = config
            .dataset
            .clone()
            .ok_or_else(|| PipelineError::InvalidConfig("config has no dataset path".into()))?;
        let space = config.task.label_space();
        let mut examples = load_dataset(path, &space)?;
        if let Some(expl) = &config.explanations {
            merge_explanations(&mut examples, expl)?;
        }
        Self::new(config, &examples, backend)
    }

    /// Write manifests and datasets under `<dir>/<run id>/`.
    pub fn with_runs_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.runs_dir = Some(dir.into());
        self
    }

    pub fn with_run_id(mut self, id: impl Into<String>) -> Self {
        self.run_id = Some(id.into());
        self
    }

    pub fn with_registry(mut self, registry: HyperparameterRegistry) -> Self {
        self.registry = registry;
        self
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn space(&self) -> &LabelSpace {
        &self.space
    }

    pub fn split(&self) -> &DatasetSplit {
        &self.split
    }

    pub fn val_subset(&self) -> &EvalSubset {
        &self.val
    }

    pub fn test_subset(&self) -> &EvalSubset {
        &self.test
    }

    fn settings(&self) -> GenerationSettings {
        GenerationSettings {
            seed: self.config.seeds.generation,
            ..self.config.generation
        }
    }

    /// Run id used for `stage`: explicit, or derived from the config digest.
    pub fn run_id(&self, stage: RunStage) -> String {
        let tag = match stage {
            RunStage::Stage1 => "stage1",
            RunStage::Stage2 => "stage2",
            RunStage::Full => "full",
        };
        match &self.run_id {
            Some(id) => format!("{id}-{tag}"),
            None => format!("{tag}-{}", &self.config.digest()[..12]),
        }
    }

    fn open_log(&self, stage: RunStage) -> Result<RunLog> {
        let id = self.run_id(stage);
        let dir = self.runs_dir.as_ref().map(|d| d.join(&id));
        RunLog::new(&id, stage, &self.config.digest(), dir)
    }

    /// K-shot pool drawn from the training split with the run's sampling seed.
    pub fn pool(&self, k: usize) -> Result<ShotPool> {
        Ok(sample_k_shot(&self.split.train, SplitTag::Train, &self.space, k, self.config.seeds.sampling, self.config.sample_mode)?)
    }

    /// The `k` shots per class that follow the K-shot pool.
    pub fn complementary(&self, k: usize) -> Result<ShotPool> {
        Ok(complementary_pool(&self.split.train, SplitTag::Train, &self.space, k, self.config.seeds.sampling, self.config.sample_mode)?)
    }

    fn family(&self, model_index: usize) -> &str {
        &self.config.models[model_index].family
    }

    fn spec_for(&self, model_index: usize, k: usize, technique: Technique) -> TrainingSpec {
        let hp = self.registry.lookup(self.config.task, self.family(model_index), k, technique);
        TrainingSpec::for_method(technique.method(), hp.epochs, hp.learning_rate)
    }

    fn evaluate_with(&self, model: &ModelRef, subset: &EvalSubset, variant: &str, reader: Reader) -> Result<EvalReport> {
        let prompts = subset.examples.iter().map(|e| render_classification_prompt(&e.post, &self.space)).collect();
        let outputs = generate_all(self.backend, model, prompts, &self.settings())?;
        let report = match reader {
            Reader::Explained => {
                let pairs: Vec<_> = subset.examples.iter().map(|e| e.gold_label.clone()).zip(outputs).collect();
                score_responses(&pairs, &self.space)?
            }
            Reader::LabelOnly => {
                let preds: Vec<_> = subset
                    .examples
                    .iter()
                    .zip(&outputs)
                    .map(|(e, o)| (e.gold_label.clone(), parse_label_only(o, &self.space)))
                    .collect();
                score(&preds, &self.space)?
            }
        };
        Ok(report.labelled(model.name.clone(), variant, model.digest()))
    }

    /// Score `model` on an evaluation subset with the classification prompt.
    pub fn evaluate(&self, model: &ModelRef, subset: &EvalSubset, variant: &str) -> Result<EvalReport> {
        self.evaluate_with(model, subset, variant, Reader::Explained)
    }

    fn write_dataset(&self, log: &RunLog, cell_id: &str, file: &TrainingFile, manifest: &DatasetManifest) -> Result<()> {
        if let Some(dir) = log.dir() {
            let dir = dir.join("data");
            fs::create_dir_all(&dir)?;
            let stem = cell_id.replace(['/', '<', ' '], "_");
            file.write(dir.join(format!("{stem}.{}.jsonl", manifest.variant)))?;
            fs::write(dir.join(format!("{stem}.{}.manifest.json", manifest.variant)), serde_json::to_string_pretty(manifest)?)?;
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn train_step(
        &self,
        log: &RunLog,
        cell_id: &str,
        model: &ModelRef,
        file: &TrainingFile,
        manifest: DatasetManifest,
        spec: TrainingSpec,
        stage: StageTag,
        eval_variant: Option<&str>,
        steps: &mut Vec<StepRecord>,
    ) -> Result<ModelRef> {
        self.write_dataset(log, cell_id, file, &manifest)?;
        let mut step = StepRecord {
            kind: StepKind::Train { stage, spec: spec.clone() },
            model_in: model.clone(),
            model_out: None,
            dataset: Some(manifest),
            val: None,
            at: now(),
        };
        let trained = match self.backend.train(model, file, &spec, stage) {
            Ok(m) => m,
            Err(e) => {
                steps.push(step);
                return Err(e.into());
            }
        };
        step.model_out = Some(trained.clone());
        let val = eval_variant.map(|v| self.evaluate(&trained, &self.val, v)).transpose();
        match val {
            Ok(v) => {
                step.val = v;
                steps.push(step);
                Ok(trained)
            }
            Err(e) => {
                steps.push(step);
                Err(e)
            }
        }
    }

    fn auxiliary_base(&self, base: &ModelRef, model_index: usize, steps: &mut Vec<StepRecord>, log: &RunLog) -> Result<ModelRef> {
        let Some(path) = &self.config.auxiliary_sft else {
            return Ok(base.clone());
        };
        let file = TrainingFile::read(path, crate::backend::Method::Sft).map_err(PipelineError::from)?;
        let manifest = DatasetManifest {
            method: file.method,
            variant: "aux".into(),
            pool_seed: 0,
            k: 0,
            k_prime: None,
            subsample_seed: None,
            records: file.len(),
            distinct_posts: file.len(),
            digest: file.digest(),
        };
        let spec = self.spec_for(model_index, 0, Technique::Sft);
        self.train_step(log, &format!("aux/{}", base.name), base, &file, manifest, spec, StageTag::Aux, None, steps)
    }

    fn prepare(&self, log: &RunLog, model_index: usize, k: usize, steps: &mut Vec<StepRecord>) -> Result<Prepared> {
        let base = ModelRef::base(self.config.models[model_index].name.clone(), self.backend.kind());
        let base = self.auxiliary_base(&base, model_index, steps, log)?;
        let pool = self.pool(k)?;
        let records = pool
            .examples
            .iter()
            .map(|e| {
                build_sft_record(e, &self.space).map(|r| {
                    TrainingRecord::Sft(SftLine {
                        prompt: r.prompt,
                        completion: r.completion,
                    })
                })
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let file = serialize(&records, crate::backend::Method::Sft)?;
        let manifest = DatasetManifest::new(&file, "sft", &pool, pool.len());
        let cell_id = format!("k{k}/{}", base.name);
        let spec = self.spec_for(model_index, k, Technique::Sft);
        let sft_model = self.train_step(log, &cell_id, &base, &file, manifest, spec, StageTag::Sft, Some(&format!("K={k} SFT")), steps)?;
        steps.push(StepRecord {
            kind: StepKind::Generate {
                prompts: pool.len() * self.space.len(),
            },
            model_in: sft_model.clone(),
            model_out: None,
            dataset: None,
            val: None,
            at: now(),
        });
        let cset = generate_conditioned_explanations(self.backend, &sft_model, &pool, &self.space, &self.settings())?;
        Ok(Prepared { pool, sft_model, cset })
    }

    fn techniques_for(&self, k: usize) -> Vec<Technique> {
        let mut out = vec![Technique::for_method(self.config.alignment_method)];
        if let Some(sub) = &self.config.subsampling {
            if k == sub.pool_k {
                out.extend(sub.k_primes.iter().map(|kp| Technique::DpoK(*kp)));
                out.extend(sub.k_primes.iter().map(|kp| Technique::DpoN(*kp)));
            }
        }
        out
    }

    #[allow(clippy::too_many_arguments)]
    fn align(
        &self,
        log: &RunLog,
        cell_id: &str,
        model_index: usize,
        k: usize,
        technique: Technique,
        prepared: &Prepared,
        steps: &mut Vec<StepRecord>,
    ) -> Result<(ModelRef, Option<EvalReport>, Option<EvalReport>)> {
        let seed = self.config.seeds.sampling;
        let (file, manifest) = match technique {
            Technique::Kto => {
                let records = build_kto_records(&prepared.cset)?;
                let file = kto_file(&records);
                let m = DatasetManifest::new(&file, "kto", &prepared.pool, prepared.pool.len());
                (file, m)
            }
            Technique::Dpo => {
                let pairs = build_dpo_pairs(&prepared.cset)?;
                let file = dpo_file(&pairs);
                let m = DatasetManifest::new(&file, "dpo", &prepared.pool, distinct_posts(&pairs));
                (file, m)
            }
            Technique::DpoK(kp) | Technique::DpoN(kp) => {
                let (pairs, name) = if matches!(technique, Technique::DpoK(_)) {
                    (subsample_dpo_k(&prepared.pool, kp, seed, &prepared.cset)?, format!("dpo-k{kp}"))
                } else {
                    (subsample_dpo_n(&prepared.pool, kp, seed, &prepared.cset)?, format!("dpo-n{kp}"))
                };
                let file = dpo_file(&pairs);
                let m = DatasetManifest::new(&file, &name, &prepared.pool, distinct_posts(&pairs)).with_subsample(kp, seed);
                (file, m)
            }
            Technique::Sft => return Err(PipelineError::InvalidConfig("SFT is not an alignment technique".into())),
        };
        let stage = if technique == Technique::Kto { StageTag::Kto } else { StageTag::Dpo };
        let spec = self.spec_for(model_index, k, technique);
        let variant = format!("K={k} {technique}");
        let aligned = self.train_step(log, cell_id, &prepared.sft_model, &file, manifest, spec, stage, Some(&variant), steps)?;
        let val = steps.last().and_then(|s| s.val.clone());
        let test = if self.config.eval.test_in_stage1 {
            Some(self.evaluate(&aligned, &self.test, &variant)?)
        } else {
            None
        };
        Ok((aligned, val, test))
    }

    fn stage1_group(&self, log: &RunLog, model_index: usize, k: usize, first_ordinal: usize) -> Result<()> {
        let name = self.config.models[model_index].name.clone();
        let started = now();
        let mut shared = Vec::new();
        let prepared = self.prepare(log, model_index, k, &mut shared);
        for (i, technique) in self.techniques_for(k).into_iter().enumerate() {
            let cell_id = format!("k{k}/{name}/{technique}");
            let mut steps = shared.clone();
            let outcome = match &prepared {
                Ok(p) => self.align(log, &cell_id, model_index, k, technique, p, &mut steps).map_err(|e| e.to_string()),
                Err(e) => Err(e.to_string()),
            };
            let (status, error, final_model, val, test) = match outcome {
                Ok((m, v, t)) => (CellStatus::Succeeded, None, Some(m), v, t),
                Err(msg) => {
                    tracing::warn!(cell = %cell_id, error = %msg, "cell failed");
                    (CellStatus::Failed, Some(msg), None, None, None)
                }
            };
            log.append(CellRecord {
                cell_id,
                ordinal: first_ordinal + i,
                stage: RunStage::Stage1,
                model: name.clone(),
                model_index,
                counterpart: None,
                k,
                technique,
                status,
                error,
                steps,
                final_model,
                val,
                test,
                started_at: started.clone(),
                finished_at: now(),
            })?;
        }
        Ok(())
    }

    /// Sweep the K schedule for every model. A failing (model, K) marks its
    /// cells FAILED and the sweep continues.
    pub fn run_stage1(&self) -> Result<RunRecord> {
        let log = self.open_log(RunStage::Stage1)?;
        let n_models = self.config.models.len();
        let mut ordinal = 0;
        for &k in &self.config.k_schedule {
            let per_model = self.techniques_for(k).len();
            let jobs: Vec<(usize, usize)> = (0..n_models).map(|mi| (mi, ordinal + mi * per_model)).collect();
            ordinal += n_models * per_model;
            for chunk in jobs.chunks(self.config.max_parallel_cells.max(1)) {
                if chunk.len() == 1 {
                    self.stage1_group(&log, chunk[0].0, k, chunk[0].1)?;
                    continue;
                }
                std::thread::scope(|scope| -> Result<()> {
                    let handles: Vec<_> = chunk
                        .iter()
                        .map(|&(mi, ord)| {
                            let log = &log;
                            scope.spawn(move || self.stage1_group(log, mi, k, ord))
                        })
                        .collect();
                    for h in handles {
                        h.join().expect("cell worker panicked")?;
                    }
                    Ok(())
                })?;
            }
        }
        log.finish()
    }

    fn checkpoint(&self, stage1: &RunRecord, model_index: usize) -> Result<ModelRef> {
        let name = &self.config.models[model_index].name;
        let k = self.config.k_check;
        let technique = Technique::for_method(self.config.alignment_method);
        stage1
            .cells
            .iter()
            .find(|c| c.stage == RunStage::Stage1 && c.model == *name && c.k == k && c.technique == technique && c.succeeded())
            .and_then(|c| c.final_model.clone())
            .ok_or_else(|| PipelineError::MissingCheckpoint { model: name.clone(), k })
    }

    /// Gold-conditioned completions from `model` for every post in `pool`,
    /// as SFT records on the classification prompt.
    fn gold_conditioned_sft(&self, model: &ModelRef, pool: &ShotPool) -> Result<TrainingFile> {
        let prompts = pool
            .examples
            .iter()
            .map(|e| render_conditional_prompt(&e.post, &e.gold_label, &self.space))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let outputs = generate_all(self.backend, model, prompts, &self.settings())?;
        let records: Vec<TrainingRecord> = pool
            .examples
            .iter()
            .zip(outputs)
            .map(|(e, raw)| {
                let parsed = parse_response(&raw, &self.space);
                let completion = match parsed.label {
                    PredictedLabel::Label(l) if l == e.gold_label => raw,
                    _ if !parsed.explanation.is_empty() => format_completion(&parsed.explanation, &e.gold_label),
                    _ => format_completion(raw.trim(), &e.gold_label),
                };
                TrainingRecord::Sft(SftLine {
                    prompt: render_classification_prompt(&e.post, &self.space).text,
                    completion,
                })
            })
            .collect();
        Ok(serialize(&records, crate::backend::Method::Sft)?)
    }

    #[allow(clippy::too_many_arguments)]
    fn cross_cell(&self, log: &RunLog, a: usize, b: usize, ckpt_a: &ModelRef, ckpt_b: &ModelRef, pool: &ShotPool, steps: &mut Vec<StepRecord>) -> Result<(ModelRef, EvalReport, EvalReport)> {
        let k = self.config.k_check;
        let cell_id = format!("x/{}<-{}", self.config.models[a].name, self.config.models[b].name);
        steps.push(StepRecord {
            kind: StepKind::Generate { prompts: pool.len() },
            model_in: ckpt_b.clone(),
            model_out: None,
            dataset: None,
            val: None,
            at: now(),
        });
        let file = self.gold_conditioned_sft(ckpt_b, pool)?;
        let manifest = DatasetManifest::new(&file, "xsft", pool, pool.len());
        let spec = self.spec_for(a, k, Technique::Sft);
        let xsft = self.train_step(log, &cell_id, ckpt_a, &file, manifest, spec, StageTag::CrossSft, Some(&format!("K={k} XSFT")), steps)?;

        steps.push(StepRecord {
            kind: StepKind::Generate {
                prompts: pool.len() * self.space.len(),
            },
            model_in: xsft.clone(),
            model_out: None,
            dataset: None,
            val: None,
            at: now(),
        });
        let cset = generate_conditioned_explanations(self.backend, &xsft, pool, &self.space, &self.settings())?;
        let pairs = build_dpo_pairs(&cset)?;
        let file = dpo_file(&pairs);
        let manifest = DatasetManifest::new(&file, "xdpo", pool, distinct_posts(&pairs));
        let spec = self.spec_for(a, k, Technique::Dpo);
        let variant = format!("K={k} +X({})", self.config.models[b].name);
        let xdpo = self.train_step(log, &cell_id, &xsft, &file, manifest, spec, StageTag::CrossDpo, Some(&variant), steps)?;
        let val = steps.last().and_then(|s| s.val.clone()).expect("validation recorded for XDPO");
        let test = self.evaluate(&xdpo, &self.test, &variant)?;
        Ok((xdpo, val, test))
    }

    /// Cross-model refinement for every ordered pair of distinct models.
    pub fn run_stage2(&self, stage1: &RunRecord) -> Result<RunRecord> {
        let n = self.config.models.len();
        if n < 2 {
            return Err(PipelineError::InvalidConfig("cross-model refinement needs at least two models".into()));
        }
        let checkpoints = (0..n).map(|i| self.checkpoint(stage1, i)).collect::<Result<Vec<_>>>()?;
        let pool = self.complementary(self.config.k_check)?;
        let log = self.open_log(RunStage::Stage2)?;
        let mut ordinal = 0;
        for a in 0..n {
            for b in (0..n).filter(|b| *b != a) {
                let started = now();
                let mut steps = Vec::new();
                let outcome = self.cross_cell(&log, a, b, &checkpoints[a], &checkpoints[b], &pool, &mut steps);
                let (status, error, final_model, val, test) = match outcome {
                    Ok((m, v, t)) => (CellStatus::Succeeded, None, Some(m), Some(v), Some(t)),
                    Err(e) => (CellStatus::Failed, Some(e.to_string()), None, None, None),
                };
                log.append(CellRecord {
                    cell_id: format!("x/{}<-{}", self.config.models[a].name, self.config.models[b].name),
                    ordinal,
                    stage: RunStage::Stage2,
                    model: self.config.models[a].name.clone(),
                    model_index: a,
                    counterpart: Some(self.config.models[b].name.clone()),
                    k: self.config.k_check,
                    technique: Technique::Dpo,
                    status,
                    error,
                    steps,
                    final_model,
                    val,
                    test,
                    started_at: started,
                    finished_at: now(),
                })?;
                ordinal += 1;
            }
        }
        log.finish()
    }

    /// Reference models trained on the whole training split: each LLM on
    /// labels only, plus the hashed n-gram encoder classifier. Scored on the
    /// test subset.
    pub fn run_full_baseline(&self) -> Result<RunRecord> {
        let log = self.open_log(RunStage::Full)?;
        let train = &self.split.train;
        let records: Vec<TrainingRecord> = train
            .iter()
            .map(|e| {
                TrainingRecord::Sft(SftLine {
                    prompt: render_classification_prompt(&e.post, &self.space).text,
                    completion: format_label_only(&e.gold_label),
                })
            })
            .collect();
        let file = serialize(&records, crate::backend::Method::Sft)?;
        let full_pool = ShotPool {
            k: train.len(),
            examples: Vec::new(),
            source_split: SplitTag::Train,
            seed: self.config.seeds.sampling,
            deficient: Vec::new(),
        };
        for (mi, m) in self.config.models.iter().enumerate() {
            let started = now();
            let base = ModelRef::base(m.name.clone(), self.backend.kind());
            let mut steps = Vec::new();
            let cell_id = format!("full/{}", m.name);
            let manifest = DatasetManifest::new(&file, "full", &full_pool, train.len());
            let spec = self.spec_for(mi, train.len(), Technique::Sft);
            let outcome = self
                .train_step(&log, &cell_id, &base, &file, manifest, spec, StageTag::Sft, None, &mut steps)
                .and_then(|model| {
                    let test = self.evaluate_with(&model, &self.test, "Full", Reader::LabelOnly)?;
                    Ok((model, test))
                });
            let (status, error, final_model, test) = match outcome {
                Ok((model, test)) => (CellStatus::Succeeded, None, Some(model), Some(test)),
                Err(e) => (CellStatus::Failed, Some(e.to_string()), None, None),
            };
            log.append(CellRecord {
                cell_id,
                ordinal: mi,
                stage: RunStage::Full,
                model: m.name.clone(),
                model_index: mi,
                counterpart: None,
                k: train.len(),
                technique: Technique::Sft,
                status,
                error,
                steps,
                final_model,
                val: None,
                test,
                started_at: started,
                finished_at: now(),
            })?;
        }

        let started = now();
        let corpora: Vec<(String, Vec<String>)> = self
            .space
            .labels()
            .iter()
            .map(|l| (l.clone(), train.iter().filter(|e| e.gold_label == *l).map(|e| e.post.text.clone()).collect()))
            .collect();
        let spec = ClassifierSpec {
            seed: self.config.seeds.sampling,
            ..ClassifierSpec::default()
        };
        let outcome = train_text_classifier(&corpora, &spec).map_err(PipelineError::from).and_then(|clf| {
            let preds: Vec<_> = self
                .test
                .examples
                .iter()
                .map(|e| (e.gold_label.clone(), PredictedLabel::Label(clf.predict(&e.post.text))))
                .collect();
            Ok(score(&preds, &self.space)?.labelled("encoder", "Full", ""))
        });
        let n = self.config.models.len();
        let (status, error, test) = match outcome {
            Ok(r) => (CellStatus::Succeeded, None, Some(r)),
            Err(e) => (CellStatus::Failed, Some(e.to_string()), None),
        };
        log.append(CellRecord {
            cell_id: "full/encoder".into(),
            ordinal: n,
            stage: RunStage::Full,
            model: "encoder".into(),
            model_index: n,
            counterpart: None,
            k: train.len(),
            technique: Technique::Sft,
            status,
            error,
            steps: Vec::new(),
            final_model: None,
            val: None,
            test,
            started_at: started,
            finished_at: now(),
        })?;
        log.finish()
    }
}

/// A post both models justify with its gold label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsistentSample {
    pub post_id: String,
    pub text: String,
    pub gold_label: String,
    pub completion_a: String,
    pub completion_b: String,
    pub explanation_a: String,
    pub explanation_b: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelConsistentSet {
    pub total: usize,
    pub samples: Vec<ConsistentSample>,
}

impl LabelConsistentSet {
    pub fn retained(&self) -> usize {
        self.samples.len()
    }

    pub fn retention(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.retained() as f64 / self.total as f64
        }
    }
}

/// Ask both models for a gold-conditioned explanation of every pooled post
/// and keep the posts where both emitted the gold label.
pub fn collect_label_consistent(
    backend: &dyn Backend,
    model_a: &ModelRef,
    model_b: &ModelRef,
    pool: &ShotPool,
    space: &LabelSpace,
    settings: &GenerationSettings,
) -> Result<LabelConsistentSet> {
    let prompts = pool
        .examples
        .iter()
        .map(|e| render_conditional_prompt(&e.post, &e.gold_label, space))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let out_a = generate_all(backend, model_a, prompts.clone(), settings)?;
    let out_b = generate_all(backend, model_b, prompts, settings)?;
    let mut samples = Vec::new();
    for ((e, a), b) in pool.examples.iter().zip(out_a).zip(out_b) {
        let pa = parse_response(&a, space);
        let pb = parse_response(&b, space);
        let gold = PredictedLabel::Label(e.gold_label.clone());
        if pa.label == gold && pb.label == gold {
            samples.push(ConsistentSample {
                post_id: e.post.id.clone(),
                text: e.post.text.clone(),
                gold_label: e.gold_label.clone(),
                completion_a: a,
                completion_b: b,
                explanation_a: pa.explanation,
                explanation_b: pb.explanation,
            });
        }
    }
    Ok(LabelConsistentSet {
        total: pool.len(),
        samples,
    })
}
