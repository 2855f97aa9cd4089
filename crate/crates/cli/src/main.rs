use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use modkit_core::backend::{Backend, BackendKind, ExternalBackend, Method, MockBackend, ModelRef, StageTag, TrainingSpec};
use modkit_core::corpus::{
    complementary_pool, load_dataset, merge_explanations, read_examples, sample_k_shot, split_dataset, write_examples, SampleMode, ShotPool,
    SplitRatios, SplitTag, Task,
};
use modkit_core::evalkit::score_responses;
use modkit_core::pipeline::{HyperparameterRegistry, Pipeline, RunConfig, RunRecord, Technique};
use modkit_core::prefdata::{
    build_dpo_pairs, build_kto_records, distinct_posts, dpo_file, generate_conditioned_explanations, kto_file, serialize, subsample_dpo_k,
    subsample_dpo_n, DatasetManifest, SftLine, TrainingFile, TrainingRecord,
};
use modkit_core::prompting::build_sft_record;

mod report;

#[derive(Parser)]
#[command(name = "modkit", version, about = "Preference data forging, alignment runs and evaluation for content moderation models")]
struct Cli {
    #[command(flatten)]
    backend: BackendArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct BackendArgs {
    /// Generation and training provider.
    #[arg(long, value_enum, default_value_t = BackendChoice::Mock, global = true)]
    backend: BackendChoice,
    /// Mock bindings file, loaded before and saved after the command.
    #[arg(long, global = true)]
    mock_state: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendChoice {
    Mock,
    External,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Sft,
    Dpo,
    Kto,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Sft => Method::Sft,
            MethodArg::Dpo => Method::Dpo,
            MethodArg::Kto => Method::Kto,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum StageArg {
    Aux,
    Sft,
    Dpo,
    Kto,
    Xsft,
    Xdpo,
}

impl From<StageArg> for StageTag {
    fn from(s: StageArg) -> Self {
        match s {
            StageArg::Aux => StageTag::Aux,
            StageArg::Sft => StageTag::Sft,
            StageArg::Dpo => StageTag::Dpo,
            StageArg::Kto => StageTag::Kto,
            StageArg::Xsft => StageTag::CrossSft,
            StageArg::Xdpo => StageTag::CrossDpo,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SubsampleArg {
    /// Fixed number of posts per class, all pairs of each.
    K,
    /// Fixed number of (post, wrong label) pairs from the whole pool.
    N,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SplitArg {
    Val,
    Test,
}

#[derive(Subcommand)]
enum Command {
    /// Load a raw JSONL dataset, anonymize it and write normalized examples.
    Ingest {
        #[arg(long, value_parser = parse_task)]
        task: Task,
        #[arg(long)]
        input: PathBuf,
        /// JSONL of {id, explanation} seed explanations.
        #[arg(long)]
        explanations: Option<PathBuf>,
        #[arg(long)]
        output: PathBuf,
    },
    /// Split examples and draw a K-shot pool from the training part.
    Sample {
        #[arg(long, value_parser = parse_task)]
        task: Task,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        k: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// train,val,test fractions; the task preset by default.
        #[arg(long, value_parser = parse_ratios)]
        ratios: Option<SplitRatios>,
        /// Take what a short class has instead of failing.
        #[arg(long)]
        lenient: bool,
        /// Draw shots k..2k instead of the first k.
        #[arg(long)]
        complementary: bool,
        #[arg(long)]
        output: PathBuf,
    },
    /// Build an SFT, DPO or KTO training file from a pool.
    Augment {
        #[arg(long, value_parser = parse_task)]
        task: Task,
        #[arg(long)]
        pool: PathBuf,
        /// Base model name, or a model reference JSON written by `train`.
        #[arg(long)]
        model: Option<String>,
        #[arg(long, value_enum, default_value_t = MethodArg::Dpo)]
        method: MethodArg,
        #[arg(long, value_enum, requires = "k_prime")]
        subsample: Option<SubsampleArg>,
        #[arg(long)]
        k_prime: Option<usize>,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        output: PathBuf,
    },
    /// Train a model on a training file.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Base model name, or a model reference JSON written by `train`.
        #[arg(long)]
        model: String,
        /// Lineage tag; follows the file's method by default.
        #[arg(long, value_enum)]
        stage: Option<StageArg>,
        #[arg(long)]
        epochs: Option<u32>,
        #[arg(long)]
        lr: Option<f64>,
        /// Where to write the resulting model reference.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Run every (K, model, technique) cell of a run config.
    Stage1 {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Cross-model refinement from a finished first-stage manifest.
    Stage2 {
        #[arg(long)]
        config: PathBuf,
        /// manifest.json of the first stage.
        #[arg(long)]
        stage1: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Score a predictions file, evaluate one model, or run the full-data baselines.
    Eval {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Model reference JSON to evaluate on the config's split.
        #[arg(long, requires = "config")]
        model: Option<String>,
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
        /// Train and score label-only models on the whole training split.
        #[arg(long, requires = "config")]
        full: bool,
        /// JSONL of {gold_label, response} to score.
        #[arg(long, requires = "task")]
        predictions: Option<PathBuf>,
        #[arg(long, value_parser = parse_task)]
        task: Option<Task>,
        #[command(flatten)]
        run: RunArgs,
        /// Write the report JSON here instead of stdout.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Serve the annotation API. Flags override MODKIT_ANNOTATION_* variables.
    AnnotateServe {
        #[arg(long)]
        addr: Option<std::net::SocketAddr>,
        #[arg(long)]
        data_dir: Option<PathBuf>,
        #[arg(long)]
        seed: Option<String>,
        #[arg(long)]
        assignments: Option<usize>,
    },
    /// Collect run manifests, comparisons and votes into report.json and charts.
    Report(report::ReportArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, default_value = "runs")]
    runs_dir: PathBuf,
    #[arg(long)]
    run_id: Option<String>,
}

fn parse_task(s: &str) -> Result<Task, String> {
    s.parse::<Task>().map_err(|e| e.to_string())
}

fn parse_ratios(s: &str) -> Result<SplitRatios, String> {
    let parts: Vec<f64> = s.split(',').map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}"))).collect::<Result<_, _>>()?;
    let [train, val, test] = parts[..] else {
        return Err("expected three comma-separated fractions".into());
    };
    let r = SplitRatios { train, val, test };
    r.validate().map_err(|e| e.to_string())?;
    Ok(r)
}

enum LoadedBackend {
    Mock(MockBackend, Option<PathBuf>),
    External(ExternalBackend),
}

impl LoadedBackend {
    fn load(args: &BackendArgs) -> Result<Self> {
        Ok(match args.backend {
            BackendChoice::Mock => {
                let mock = match &args.mock_state {
                    Some(p) if p.exists() => MockBackend::load_state(p).with_context(|| format!("loading mock state {}", p.display()))?,
                    _ => MockBackend::new(),
                };
                LoadedBackend::Mock(mock, args.mock_state.clone())
            }
            BackendChoice::External => LoadedBackend::External(ExternalBackend::from_env()?),
        })
    }

    fn get(&self) -> &dyn Backend {
        match self {
            LoadedBackend::Mock(m, _) => m,
            LoadedBackend::External(e) => e,
        }
    }

    fn save(&self) -> Result<()> {
        if let LoadedBackend::Mock(m, Some(path)) = self {
            m.save_state(path).with_context(|| format!("saving mock state {}", path.display()))?;
        }
        Ok(())
    }
}

fn resolve_model(spec: &str, kind: BackendKind) -> Result<ModelRef> {
    let path = Path::new(spec);
    if path.extension().is_some_and(|e| e == "json") {
        let text = fs::read_to_string(path).with_context(|| format!("reading model reference {}", path.display()))?;
        return Ok(serde_json::from_str(&text)?);
    }
    Ok(ModelRef::base(spec, kind))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn read_pool(path: &Path) -> Result<ShotPool> {
    let text = fs::read_to_string(path).with_context(|| format!("reading pool {}", path.display()))?;
    Ok(serde_json::from_str(&text)?)
}

fn summarize(record: &RunRecord) -> ExitCode {
    for c in &record.cells {
        let f1 = |r: Option<&modkit_core::EvalReport>| r.map(|r| format!("{:.4}", r.macro_f1)).unwrap_or_else(|| "-".into());
        let status = if c.succeeded() { "ok" } else { "FAILED" };
        println!("{:<28} {:<7} val {:<7} test {:<7} {}", c.cell_id, status, f1(c.val.as_ref()), f1(c.test.as_ref()), c.error.as_deref().unwrap_or(""));
    }
    let failed = record.failed_cells();
    println!("{}: {} cells, {} failed", record.run_id, record.cells.len(), failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Ingest {
            task,
            input,
            explanations,
            output,
        } => {
            let space = task.label_space();
            let mut examples = load_dataset(&input, &space)?;
            if let Some(path) = explanations {
                let merged = merge_explanations(&mut examples, &path)?;
                println!("merged {merged} explanations");
            }
            write_examples(&output, &examples)?;
            for label in space.labels() {
                println!("{label}: {}", examples.iter().filter(|e| &e.gold_label == label).count());
            }
            println!("wrote {} examples to {}", examples.len(), output.display());
        }
        Command::Sample {
            task,
            input,
            k,
            seed,
            ratios,
            lenient,
            complementary,
            output,
        } => {
            let space = task.label_space();
            let examples = read_examples(&input, &space)?;
            let split = split_dataset(&examples, ratios.unwrap_or(task.preset().ratios), seed)?;
            let mode = if lenient { SampleMode::Lenient } else { SampleMode::Strict };
            let pool = if complementary {
                complementary_pool(&split.train, SplitTag::Train, &space, k, seed, mode)?
            } else {
                sample_k_shot(&split.train, SplitTag::Train, &space, k, seed, mode)?
            };
            if !pool.deficient.is_empty() {
                eprintln!("warning: short classes {:?}", pool.deficient);
            }
            write_json(&output, &pool)?;
            println!("wrote {} shots to {}", pool.len(), output.display());
        }
        Command::Augment {
            task,
            pool,
            model,
            method,
            subsample,
            k_prime,
            seed,
            output,
        } => {
            let space = task.label_space();
            let pool = read_pool(&pool)?;
            let loaded = LoadedBackend::load(&cli.backend)?;
            let method = Method::from(method);
            let (file, variant, distinct) = if method == Method::Sft {
                let records = pool
                    .examples
                    .iter()
                    .map(|e| build_sft_record(e, &space).map(|r| {
                            TrainingRecord::Sft(SftLine {
                                prompt: r.prompt,
                                completion: r.completion,
                            })
                        }))
                    .collect::<Result<Vec<_>, _>>()?;
                (serialize(&records, Method::Sft)?, "SFT".to_string(), pool.len())
            } else {
                let Some(model) = model else {
                    bail!("--model is required for {method} data");
                };
                let model = resolve_model(&model, loaded.get().kind())?;
                let cset = generate_conditioned_explanations(loaded.get(), &model, &pool, &space, &Default::default())?;
                loaded.save()?;
                match (method, subsample, k_prime) {
                    (Method::Kto, None, _) => (kto_file(&build_kto_records(&cset)?), "KTO".to_string(), pool.len()),
                    (Method::Kto, Some(_), _) => bail!("sub-sampling applies to DPO data only"),
                    (_, None, _) => {
                        let pairs = build_dpo_pairs(&cset)?;
                        (dpo_file(&pairs), "DPO".to_string(), distinct_posts(&pairs))
                    }
                    (_, Some(how), Some(kp)) => {
                        let (pairs, technique) = match how {
                            SubsampleArg::K => (subsample_dpo_k(&pool, kp, seed, &cset)?, Technique::DpoK(kp)),
                            SubsampleArg::N => (subsample_dpo_n(&pool, kp, seed, &cset)?, Technique::DpoN(kp)),
                        };
                        (dpo_file(&pairs), technique.to_string(), distinct_posts(&pairs))
                    }
                    (_, Some(_), None) => bail!("--subsample needs --k-prime"),
                }
            };
            file.write(&output).with_context(|| format!("writing {}", output.display()))?;
            let mut manifest = DatasetManifest::new(&file, &variant, &pool, distinct);
            if let (Some(_), Some(kp)) = (subsample, k_prime) {
                manifest = manifest.with_subsample(kp, seed);
            }
            write_json(&output.with_extension("manifest.json"), &manifest)?;
            println!("wrote {} {variant} records ({} posts) to {}", file.len(), distinct, output.display());
        }
        Command::Train {
            data,
            model,
            stage,
            epochs,
            lr,
            output,
        } => {
            let loaded = LoadedBackend::load(&cli.backend)?;
            let file = TrainingFile::read_detect(&data)?;
            let method = file.method;
            let stage = stage.map(StageTag::from).unwrap_or(match method {
                Method::Sft => StageTag::Sft,
                Method::Dpo => StageTag::Dpo,
                Method::Kto => StageTag::Kto,
            });
            if stage.method() != method {
                bail!("stage {stage} trains {} but {} holds {method} records", stage.method(), data.display());
            }
            let defaults = HyperparameterRegistry::builtin().default_for(Technique::for_method(method));
            let spec = TrainingSpec::for_method(method, epochs.unwrap_or(defaults.epochs), lr.unwrap_or(defaults.learning_rate));
            let base = resolve_model(&model, loaded.get().kind())?;
            let trained = loaded.get().train(&base, &file, &spec, stage)?;
            loaded.save()?;
            match output {
                Some(path) => {
                    write_json(&path, &trained)?;
                    println!("{} -> {}", trained.lineage_key(), path.display());
                }
                None => println!("{}", serde_json::to_string_pretty(&trained)?),
            }
        }
        Command::Stage1 { config, run } => {
            let loaded = LoadedBackend::load(&cli.backend)?;
            let config = RunConfig::from_file(&config)?;
            let mut pipeline = Pipeline::from_config_files(config, loaded.get())?.with_runs_dir(&run.runs_dir);
            if let Some(id) = run.run_id {
                pipeline = pipeline.with_run_id(id);
            }
            let record = pipeline.run_stage1()?;
            loaded.save()?;
            return Ok(summarize(&record));
        }
        Command::Stage2 { config, stage1, run } => {
            if matches!(cli.backend.backend, BackendChoice::Mock) && cli.backend.mock_state.is_none() {
                tracing::warn!("mock backend without --mock-state: stage1 models from another process are unknown");
            }
            let loaded = LoadedBackend::load(&cli.backend)?;
            let config = RunConfig::from_file(&config)?;
            let first = RunRecord::load(&stage1).with_context(|| format!("reading {}", stage1.display()))?;
            let mut pipeline = Pipeline::from_config_files(config, loaded.get())?.with_runs_dir(&run.runs_dir);
            if let Some(id) = run.run_id {
                pipeline = pipeline.with_run_id(id);
            }
            let record = pipeline.run_stage2(&first)?;
            loaded.save()?;
            return Ok(summarize(&record));
        }
        Command::Eval {
            config,
            model,
            split,
            full,
            predictions,
            task,
            run,
            output,
        } => {
            let report = if let Some(path) = predictions {
                let task = task.expect("clap enforces --task");
                #[derive(serde::Deserialize)]
                struct Line {
                    gold_label: String,
                    response: String,
                }
                let mut rows = vec![];
                for (i, line) in fs::read_to_string(&path)?.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
                    let l: Line = serde_json::from_str(line).with_context(|| format!("{} line {}", path.display(), i + 1))?;
                    rows.push((l.gold_label, l.response));
                }
                score_responses(&rows, &task.label_space())?
            } else {
                let Some(config) = config else {
                    bail!("give --predictions with --task, or --config with --model or --full");
                };
                let loaded = LoadedBackend::load(&cli.backend)?;
                let mut pipeline = Pipeline::from_config_files(RunConfig::from_file(&config)?, loaded.get())?.with_runs_dir(&run.runs_dir);
                if let Some(id) = run.run_id {
                    pipeline = pipeline.with_run_id(id);
                }
                if full {
                    let record = pipeline.run_full_baseline()?;
                    loaded.save()?;
                    return Ok(summarize(&record));
                }
                let Some(model) = model else {
                    bail!("--config needs --model or --full");
                };
                let model = resolve_model(&model, loaded.get().kind())?;
                let subset = if split == SplitArg::Val { pipeline.val_subset() } else { pipeline.test_subset() };
                let report = pipeline.evaluate(&model, subset, "eval")?;
                loaded.save()?;
                report
            };
            match output {
                Some(path) => write_json(&path, &report)?,
                None => println!("{}", serde_json::to_string_pretty(&report)?),
            }
            eprintln!("macro-F1 {:.4}, accuracy {:.4}, invalid {}/{}", report.macro_f1, report.accuracy, report.invalid_count, report.n);
        }
        Command::AnnotateServe {
            addr,
            data_dir,
            seed,
            assignments,
        } => {
            let mut config = modkit_annotation::ServiceConfig::from_env()?;
            if let Some(a) = addr {
                config.addr = a;
            }
            if let Some(d) = data_dir {
                config.data_dir = d;
            }
            if let Some(s) = seed {
                config.seed = s;
            }
            if let Some(n) = assignments {
                if n == 0 {
                    bail!("--assignments must be at least 1");
                }
                config.assignments_per_item = n;
            }
            let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
            rt.block_on(modkit_annotation::serve(config))?;
        }
        Command::Report(args) => report::run(&args)?,
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()))
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
