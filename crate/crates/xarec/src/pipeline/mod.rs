//! End-to-end orchestration behind the CLI subcommands: configuration,
//! stage wiring, artifact layout, and report rendering.

mod report;

pub use report::{render_benchmark_markdown, render_eval_markdown, write_benchmark_csv, write_svg_charts};

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::artifact::{self, RunManifest};
use crate::classifier::{
    evaluate, load_model, save_model, train, Classifier, EvalReport, LstmModel, TrainConfig, TrainLog,
};
use crate::eval::{
    classify_explanation, compute_eacc, content_distribution, select_all_accurate, AccuracyVerdict,
    BenchmarkReport, CredibilityRuleSet, MethodReport, TimingStats, BENCHMARK_SCHEMA,
};
use crate::explain::{
    anchors::{explain_anchors, AnchorsConfig},
    lime::{explain_lime, explain_lime_plus, PerturbationConfig},
    shap::{explain_shap, ShapConfig},
    AttributionSet, CellMarginals, ExplainError, MaskPolicy, Method, TOP_FEATURES,
};
use crate::ingest::{
    build_dataset, parse_event_log, stratified_folds, synth, ActivityWindow, IngestSummary, LabeledDataset,
    LabelMapping, SensorRegistry,
};
use crate::nlg::{render_attribution, render_baseline, Explanation, SensorLexicon};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("input file '{0}' is missing or unreadable: {1}")]
    Input(PathBuf, String),
    #[error("config file '{0}' is invalid: {1}")]
    Config(PathBuf, String),
    #[error(transparent)]
    Parse(#[from] crate::ingest::ParseError),
    #[error(transparent)]
    Dataset(#[from] crate::ingest::DatasetError),
    #[error(transparent)]
    Registry(#[from] crate::ingest::RegistryError),
    #[error(transparent)]
    Mapping(#[from] crate::ingest::MappingError),
    #[error(transparent)]
    Folds(#[from] crate::ingest::FoldError),
    #[error(transparent)]
    Train(#[from] crate::classifier::TrainError),
    #[error(transparent)]
    Store(#[from] crate::classifier::StoreError),
    #[error(transparent)]
    Metrics(#[from] crate::classifier::MetricsError),
    #[error(transparent)]
    Explain(#[from] ExplainError),
    #[error(transparent)]
    Eval(#[from] crate::eval::EvalError),
    #[error(transparent)]
    Nlg(#[from] crate::nlg::NlgError),
    #[error(transparent)]
    Lexicon(#[from] crate::nlg::LexiconError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Other(String),
}

/// Some work failed but the run carried on; callers exit with code 1.
#[derive(Debug, Default)]
pub struct PartialFailures {
    pub messages: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelinePaths {
    pub raw_log: PathBuf,
    pub dataset: PathBuf,
    pub model_dir: PathBuf,
    pub registry: PathBuf,
    pub labels: PathBuf,
    #[serde(default)]
    pub lexicon: Option<PathBuf>,
    pub credibility: PathBuf,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldConfig {
    pub k: usize,
    pub validation_fraction: f64,
}

impl Default for FoldConfig {
    fn default() -> Self {
        FoldConfig { k: 10, validation_fraction: 0.2 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExplainerConfigs {
    pub lime: PerturbationConfig,
    pub lime_plus: PerturbationConfig,
    pub anchors: AnchorsConfig,
    pub shap: ShapConfig,
    /// Training windows sampled as the SHAP background set.
    pub shap_background: usize,
}

impl Default for ExplainerConfigs {
    fn default() -> Self {
        ExplainerConfigs {
            lime: PerturbationConfig::default(),
            lime_plus: PerturbationConfig::default(),
            anchors: AnchorsConfig::default(),
            shap: ShapConfig::default(),
            shap_background: 25,
        }
    }
}

/// Environment variable overriding the configured output directory.
pub const OUT_DIR_ENV: &str = "XAREC_OUT";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub paths: PipelinePaths,
    #[serde(default)]
    pub folds: FoldConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub explainers: ExplainerConfigs,
    pub seed: u64,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Input(path.to_path_buf(), e.to_string()))?;
        let mut config: PipelineConfig =
            serde_json::from_str(&text).map_err(|e| PipelineError::Config(path.to_path_buf(), e.to_string()))?;
        if let Ok(out) = std::env::var(OUT_DIR_ENV) {
            config.paths.out_dir = PathBuf::from(out);
        }
        config
            .resolve_relative(path.parent().unwrap_or(Path::new(".")));
        Ok(config)
    }

    /// Paths in the config file are relative to the file itself.
    fn resolve_relative(&mut self, base: &Path) {
        for p in [
            &mut self.paths.raw_log,
            &mut self.paths.dataset,
            &mut self.paths.model_dir,
            &mut self.paths.registry,
            &mut self.paths.labels,
            &mut self.paths.credibility,
            &mut self.paths.out_dir,
        ] {
            if p.is_relative() {
                *p = base.join(&p);
            }
        }
        if let Some(lex) = &mut self.paths.lexicon {
            if lex.is_relative() {
                *lex = base.join(&lex);
            }
        }
    }

    pub fn hash(&self) -> String {
        artifact::sha256_canonical(self)
    }

    pub fn manifest(&self) -> RunManifest {
        RunManifest::new(self.hash(), self.seed)
    }

    fn require(&self, path: &Path) -> Result<(), PipelineError> {
        if !path.exists() {
            return Err(PipelineError::Input(path.to_path_buf(), "file not found".to_string()));
        }
        Ok(())
    }

    pub fn model_path(&self, fold: usize) -> PathBuf {
        self.paths.model_dir.join(format!("fold_{fold}.model.json"))
    }
}

/// Write a synthetic world plus a ready-to-run pipeline config into `dir`.
pub fn cmd_gen_synth(cfg: &synth::SynthConfig, dir: &Path) -> Result<PathBuf, PipelineError> {
    let world = synth::generate(cfg);
    world.write(dir)?;
    let config = PipelineConfig {
        paths: PipelinePaths {
            raw_log: dir.join("log.txt"),
            dataset: dir.join("dataset.json"),
            model_dir: dir.join("models"),
            registry: dir.join("registry.json"),
            labels: dir.join("labels.json"),
            lexicon: None,
            credibility: dir.join("credibility.json"),
            out_dir: dir.join("out"),
        },
        folds: FoldConfig::default(),
        train: TrainConfig { seed: cfg.seed, ..Default::default() },
        explainers: ExplainerConfigs::default(),
        seed: cfg.seed,
    };
    let path = dir.join("pipeline.json");
    std::fs::write(&path, serde_json::to_string_pretty(&config)?)?;
    Ok(path)
}

/// Parse the raw log and write the windowed dataset.
pub fn cmd_ingest(config: &PipelineConfig) -> Result<IngestSummary, PipelineError> {
    config.require(&config.paths.raw_log)?;
    config.require(&config.paths.registry)?;
    config.require(&config.paths.labels)?;
    let registry = SensorRegistry::load(&config.paths.registry)?;
    let mapping = LabelMapping::load(&config.paths.labels)?;
    let file = std::fs::File::open(&config.paths.raw_log)
        .map_err(|e| PipelineError::Input(config.paths.raw_log.clone(), e.to_string()))?;
    let parsed = parse_event_log(std::io::BufReader::new(file), &registry)?;
    let (dataset, summary) = build_dataset(&parsed, &registry, &mapping)?;
    if let Some(dir) = config.paths.dataset.parent() {
        std::fs::create_dir_all(dir)?;
    }
    dataset.save(&config.paths.dataset)?;
    Ok(summary)
}

#[derive(Debug, Serialize)]
pub struct FoldOutcome {
    pub fold: usize,
    pub model_path: PathBuf,
    pub report: Option<EvalReport>,
    pub error: Option<String>,
}

/// Train one model per fold (or a selected fold), evaluate each on its held
/// out fold, and write the aggregate report. Divergent folds are recorded
/// and skipped.
pub fn cmd_train_eval(
    config: &PipelineConfig,
    only_fold: Option<usize>,
) -> Result<(Vec<FoldOutcome>, Option<EvalReport>, PartialFailures), PipelineError> {
    config.require(&config.paths.dataset)?;
    let dataset = LabeledDataset::load(&config.paths.dataset)?;
    let plan = stratified_folds(&dataset, config.folds.k, config.folds.validation_fraction, config.seed)?;
    std::fs::create_dir_all(&config.paths.model_dir)?;

    let mut failures = PartialFailures::default();
    let mut outcomes = Vec::new();
    let folds: Vec<usize> = match only_fold {
        Some(f) if f < plan.k => vec![f],
        Some(f) => return Err(PipelineError::Other(format!("fold {f} out of range 0..{}", plan.k))),
        None => (0..plan.k).collect(),
    };
    let mut reports = Vec::new();
    for fold in folds {
        let split = plan.split(fold, &dataset);
        let train_cfg = TrainConfig { seed: config.train.seed.wrapping_add(fold as u64), ..config.train.clone() };
        match train(&dataset, &split.train, &split.validation, &train_cfg) {
            Ok((model, log)) => {
                let path = config.model_path(fold);
                save_model(&model, Some(&log), &path)?;
                let test: Vec<&ActivityWindow> = split.test.iter().map(|&i| &dataset.windows[i]).collect();
                let report = evaluate(&model, &test)?;
                write_json(&config.paths.out_dir.join(format!("eval_fold_{fold}.json")), &report)?;
                reports.push(report.clone());
                outcomes.push(FoldOutcome { fold, model_path: path, report: Some(report), error: None });
            }
            Err(e) => {
                failures.messages.push(format!("fold {fold}: {e}"));
                outcomes.push(FoldOutcome {
                    fold,
                    model_path: config.model_path(fold),
                    report: None,
                    error: Some(e.to_string()),
                });
            }
        }
    }
    let aggregate = if reports.is_empty() {
        None
    } else {
        let agg = EvalReport::merge(&reports);
        write_json(&config.paths.out_dir.join("eval_aggregate.json"), &agg)?;
        Some(agg)
    };
    Ok((outcomes, aggregate, failures))
}

/// Re-evaluate a saved model on its fold's held-out windows.
pub fn cmd_eval_model(config: &PipelineConfig, fold: usize) -> Result<EvalReport, PipelineError> {
    config.require(&config.paths.dataset)?;
    let dataset = LabeledDataset::load(&config.paths.dataset)?;
    let plan = stratified_folds(&dataset, config.folds.k, config.folds.validation_fraction, config.seed)?;
    let (model, _) = load_model(&config.model_path(fold))?;
    let split = plan.split(fold, &dataset);
    let test: Vec<&ActivityWindow> = split.test.iter().map(|&i| &dataset.windows[i]).collect();
    Ok(evaluate(&model, &test)?)
}

/// Everything an explainer invocation needs, wired once per run.
pub struct ExplainerSet<'a> {
    pub model: &'a LstmModel,
    pub registry: &'a SensorRegistry,
    pub marginals: CellMarginals,
    pub background: Vec<ActivityWindow>,
    pub configs: ExplainerConfigs,
}

impl<'a> ExplainerSet<'a> {
    /// Build the perturbation populations from the training split.
    pub fn new(
        model: &'a LstmModel,
        registry: &'a SensorRegistry,
        train_windows: &[&ActivityWindow],
        configs: &ExplainerConfigs,
        seed: u64,
    ) -> Self {
        let kinds: Vec<_> = registry.sensors.values().map(|s| s.kind).collect();
        let marginals = CellMarginals::from_windows(train_windows, &kinds);
        let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0x00c0_ffee);
        let mut pool: Vec<usize> = (0..train_windows.len()).collect();
        pool.shuffle(&mut rng);
        let background: Vec<ActivityWindow> =
            pool.into_iter().take(configs.shap_background.max(1)).map(|i| train_windows[i].clone()).collect();
        ExplainerSet { model, registry, marginals, background, configs: configs.clone() }
    }

    /// Run one method on one window with a per-instance seed.
    pub fn run(&self, method: Method, window: &ActivityWindow, seed: u64) -> Result<AttributionSet, ExplainError> {
        match method {
            Method::Lime => {
                let cfg = PerturbationConfig { seed, ..self.configs.lime.clone() };
                explain_lime(self.model, window, TOP_FEATURES, &cfg, self.registry)
            }
            Method::LimePlus => {
                let cfg = PerturbationConfig { seed, ..self.configs.lime_plus.clone() };
                explain_lime_plus(self.model, window, &cfg, self.registry)
            }
            Method::Anchors => {
                let cfg = AnchorsConfig { seed, ..self.configs.anchors.clone() };
                explain_anchors(self.model, window, &cfg, self.registry, &self.marginals).map(|(_, set)| set)
            }
            Method::Shap => {
                let cfg = ShapConfig { seed, ..self.configs.shap.clone() };
                explain_shap(self.model, window, &cfg, self.registry, &MaskPolicy::Background(&self.background))
            }
        }
    }
}

/// Stable per-instance seed: explanations do not depend on which other
/// instances run or in what order.
pub fn instance_seed(run_seed: u64, instance: usize, method: Method) -> u64 {
    let m = Method::ALL.iter().position(|x| *x == method).unwrap() as u64;
    run_seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add((instance as u64) << 3).wrapping_add(m)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ExplanationRecord {
    pub instance: usize,
    pub truth: Option<crate::ingest::ActivityLabel>,
    pub predicted: crate::ingest::ActivityLabel,
    pub method: Method,
    pub text: String,
    pub baseline_text: String,
    pub attribution_ref: String,
    pub accurate: Option<bool>,
}

/// Envelope tying every artifact back to its run.
#[derive(Debug, Serialize, Deserialize)]
pub struct Artifact<T> {
    pub toolkit_version: String,
    pub config_hash: String,
    pub seed: u64,
    pub payload: T,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

pub struct BenchmarkOptions {
    pub fold: usize,
    pub limit: Option<usize>,
    pub methods: Vec<Method>,
    pub workers: usize,
}

impl Default for BenchmarkOptions {
    fn default() -> Self {
        BenchmarkOptions { fold: 0, limit: None, methods: Method::ALL.to_vec(), workers: 1 }
    }
}

/// The explain/benchmark stage: attributions, rendered explanations, and
/// verdicts for held-out instances; aggregates into a [`BenchmarkReport`].
pub fn cmd_benchmark(
    config: &PipelineConfig,
    options: &BenchmarkOptions,
) -> Result<(BenchmarkReport, PartialFailures), PipelineError> {
    let started = Instant::now();
    config.require(&config.paths.dataset)?;
    config.require(&config.paths.credibility)?;
    let dataset = LabeledDataset::load(&config.paths.dataset)?;
    let registry = dataset.registry.clone();
    let (model, _) = load_model(&config.model_path(options.fold))?;
    let rules = CredibilityRuleSet::load(&config.paths.credibility)?;
    rules.validate(&registry)?;
    let lexicon = match &config.paths.lexicon {
        Some(p) => SensorLexicon::from_registry_with_overrides(&registry, p)?,
        None => SensorLexicon::from_registry(&registry),
    };
    lexicon.validate_total(&registry)?;

    let plan = stratified_folds(&dataset, config.folds.k, config.folds.validation_fraction, config.seed)?;
    let split = plan.split(options.fold, &dataset);
    let train_refs: Vec<&ActivityWindow> = split.train.iter().map(|&i| &dataset.windows[i]).collect();
    let explainers = ExplainerSet::new(&model, &registry, &train_refs, &config.explainers, config.seed);

    let mut instances: Vec<usize> = split.test.clone();
    if let Some(limit) = options.limit {
        instances.truncate(limit);
    }
    let mut failures = PartialFailures::default();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.workers.max(1))
        .build()
        .map_err(|e| PipelineError::Other(e.to_string()))?;
    type InstanceOutput = (usize, Vec<(Method, Result<AttributionSet, ExplainError>)>);
    let results: Vec<InstanceOutput> = pool.install(|| {
        use rayon::prelude::*;
        instances
            .par_iter()
            .map(|&i| {
                let window = &dataset.windows[i];
                let per_method: Vec<(Method, Result<AttributionSet, ExplainError>)> = options
                    .methods
                    .iter()
                    .map(|&m| (m, explainers.run(m, window, instance_seed(config.seed, i, m))))
                    .collect();
                (i, per_method)
            })
            .collect()
    });

    let config_hash = config.hash();
    let envelope = |payload: AttributionSet| Artifact {
        toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: config_hash.clone(),
        seed: config.seed,
        payload,
    };

    let mut per_method_sets: BTreeMap<Method, Vec<AttributionSet>> = BTreeMap::new();
    let mut verdicts_by_instance: BTreeMap<usize, BTreeMap<Method, AccuracyVerdict>> = BTreeMap::new();
    let mut records: Vec<ExplanationRecord> = Vec::new();
    let out = &config.paths.out_dir;
    std::fs::create_dir_all(out.join("attributions"))?;
    for (i, per_method) in results {
        let window = &dataset.windows[i];
        for (method, outcome) in per_method {
            let set = match outcome {
                Ok(s) => s,
                Err(e) => {
                    failures.messages.push(format!("instance {i} {method}: {e}"));
                    continue;
                }
            };
            let predicted = set.target_class;
            let verdict = classify_explanation(&set, predicted, &rules)?;
            let rel = format!("attributions/instance_{i}.{method}.json");
            write_json(&out.join(&rel), &envelope(set.clone()))?;
            let text = if set.features.is_empty() {
                failures.messages.push(format!("instance {i} {method}: empty attribution, baseline text used"));
                render_baseline(predicted, &lexicon)?.text
            } else {
                match render_attribution(&set, &lexicon) {
                    Ok(e) => e.text,
                    Err(e) => {
                        failures.messages.push(format!("instance {i} {method}: {e}"));
                        continue;
                    }
                }
            };
            records.push(ExplanationRecord {
                instance: i,
                truth: window.label,
                predicted,
                method,
                text,
                baseline_text: render_baseline(predicted, &lexicon)?.text,
                attribution_ref: rel,
                accurate: Some(verdict.accurate),
            });
            verdicts_by_instance.entry(i).or_default().insert(method, verdict);
            per_method_sets.entry(method).or_default().push(set);
        }
    }

    let mut jsonl = String::new();
    for r in &records {
        jsonl.push_str(&serde_json::to_string(r)?);
        jsonl.push('\n');
    }
    std::fs::write(out.join("explanations.jsonl"), jsonl)?;

    let mut manifest = config.manifest();
    manifest.record_input("dataset", dataset.registry_hash.clone());
    manifest.record_input("model", artifact::stable_hash_file(&config.model_path(options.fold))?);
    manifest.record_stage("benchmark", started.elapsed().as_secs_f64());

    let mut per_method: BTreeMap<Method, MethodReport> = BTreeMap::new();
    for (&method, sets) in &per_method_sets {
        let verdicts: Vec<AccuracyVerdict> = verdicts_by_instance
            .values()
            .filter_map(|per| per.get(&method).cloned())
            .collect();
        let eacc = compute_eacc(&verdicts)?;
        let refs: Vec<&AttributionSet> = sets.iter().collect();
        let timing =
            TimingStats::from_samples(&sets.iter().map(|s| s.diagnostics.elapsed_ms as f64 / 1000.0).collect::<Vec<_>>());
        per_method.insert(
            method,
            MethodReport {
                eacc_pct: eacc,
                classified: verdicts.len(),
                accurate: verdicts.iter().filter(|v| v.accurate).count(),
                timing,
                content: content_distribution(&refs, &registry),
            },
        );
    }
    let all_accurate = select_all_accurate(&verdicts_by_instance);
    let report = BenchmarkReport {
        schema: BENCHMARK_SCHEMA.to_string(),
        per_method,
        all_accurate_instances: all_accurate,
        instances: instances.len(),
        manifest,
    };
    write_json(&out.join("benchmark.json"), &report)?;
    write_json(&out.join("all_accurate.json"), &report.all_accurate_instances)?;
    Ok((report, failures))
}

/// Baseline and per-method explanation texts for one instance, the
/// user-facing `explain` subcommand output.
pub fn explanation_texts(
    set: &AttributionSet,
    lexicon: &SensorLexicon,
) -> Result<(Explanation, Explanation), PipelineError> {
    let baseline = render_baseline(set.target_class, lexicon)?;
    let rendered = render_attribution(set, lexicon)?;
    Ok((baseline, rendered))
}
