use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use xarec::classifier::load_model;
use xarec::explain::Method;
use xarec::ingest::{stratified_folds, synth, ActivityWindow, LabeledDataset};
use xarec::nlg::SensorLexicon;
use xarec::pipeline::{
    self, cmd_benchmark, cmd_eval_model, cmd_gen_synth, cmd_ingest, cmd_train_eval, BenchmarkOptions,
    ExplainerSet, PipelineConfig, PipelineError,
};

/// Explainable activity recognition for smart-home sensor logs:
/// ingest CASAS-style logs, train the LSTM classifier, explain predictions
/// with LIME, LIME+, Anchors, and SHAP, and benchmark explanation accuracy.
#[derive(Parser)]
#[command(name = "xarec", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArg {
    /// Pipeline config file (see docs/file-formats.md).
    #[arg(long)]
    config: PathBuf,
    /// Override the run seed from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output directory (also honoured via XAREC_OUT).
    #[arg(long)]
    out: Option<PathBuf>,
}

impl ConfigArg {
    fn load(&self) -> Result<PipelineConfig, PipelineError> {
        let mut config = PipelineConfig::load(&self.config)?;
        if let Some(seed) = self.seed {
            config.seed = seed;
            config.train.seed = seed;
        }
        if let Some(out) = &self.out {
            config.paths.out_dir = out.clone();
        }
        Ok(config)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic smart-home world (log + configs).
    GenSynth {
        /// Output directory for the world files.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        days: u32,
        #[arg(long, default_value_t = 8)]
        motion: usize,
        #[arg(long, default_value_t = 3)]
        doors: usize,
        #[arg(long, default_value_t = 2)]
        temps: usize,
    },
    /// Parse the raw log into the windowed dataset file.
    Ingest {
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Train per-fold models and evaluate each on its held-out fold.
    Train {
        #[command(flatten)]
        config: ConfigArg,
        /// Train a single fold instead of all of them.
        #[arg(long)]
        fold: Option<usize>,
    },
    /// Re-evaluate a saved model on its fold's test windows.
    EvalModel {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long, default_value_t = 0)]
        fold: usize,
    },
    /// Explain selected held-out instances and print the sentences.
    Explain {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long, default_value_t = 0)]
        fold: usize,
        /// Explain at most this many instances.
        #[arg(long)]
        limit: Option<usize>,
        /// Comma-separated subset of lime,lime_plus,anchors,shap.
        #[arg(long, value_delimiter = ',')]
        methods: Vec<String>,
    },
    /// Full benchmark: attributions, sentences, verdicts, aggregate report.
    Benchmark {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long, default_value_t = 0)]
        fold: usize,
        #[arg(long)]
        limit: Option<usize>,
        #[arg(long, value_delimiter = ',')]
        methods: Vec<String>,
        /// Instance-level parallelism; keep 1 for comparable timings.
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Render markdown/CSV tables (and optional SVG charts) from artifacts.
    Report {
        #[command(flatten)]
        config: ConfigArg,
        /// Also write bar charts under out/charts/.
        #[arg(long, default_value_t = false)]
        plots: bool,
    },
}

fn parse_methods(raw: &[String]) -> Result<Vec<Method>, PipelineError> {
    if raw.is_empty() {
        return Ok(Method::ALL.to_vec());
    }
    raw.iter()
        .map(|s| {
            Method::from_name(s.trim()).ok_or_else(|| {
                PipelineError::Other(format!("unknown method '{s}'; expected lime, lime_plus, anchors, or shap"))
            })
        })
        .collect()
}

fn class_distribution_lines(counts: &std::collections::BTreeMap<String, usize>) -> String {
    counts.iter().map(|(k, v)| format!("  {k}: {v}")).collect::<Vec<_>>().join("\n")
}

fn run() -> Result<ExitCode, PipelineError> {
    let cli = Cli::parse();
    match cli.command {
        Command::GenSynth { out, seed, days, motion, doors, temps } => {
            let cfg = synth::SynthConfig {
                seed,
                days,
                motion_sensors: motion,
                door_sensors: doors,
                temp_sensors: temps,
            };
            let path = cmd_gen_synth(&cfg, &out)?;
            println!("synthetic world written; pipeline config at {}", path.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Ingest { config } => {
            let config = config.load()?;
            let summary = cmd_ingest(&config)?;
            println!(
                "{} events, {} spans -> {} windows\nclass distribution:\n{}",
                summary.events,
                summary.spans,
                summary.windows,
                class_distribution_lines(&summary.class_counts)
            );
            println!("dataset written to {}", config.paths.dataset.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Train { config, fold } => {
            let config = config.load()?;
            let (outcomes, aggregate, failures) = cmd_train_eval(&config, fold)?;
            for o in &outcomes {
                match (&o.report, &o.error) {
                    (Some(r), _) => println!(
                        "fold {}: model {} | macro P {:.2} R {:.2} F1 {:.2}",
                        o.fold,
                        o.model_path.display(),
                        r.macro_precision,
                        r.macro_recall,
                        r.macro_f1
                    ),
                    (_, Some(e)) => println!("fold {}: FAILED ({e})", o.fold),
                    _ => {}
                }
            }
            if let Some(agg) = aggregate {
                println!("\naggregate over folds:\n{}", pipeline::render_eval_markdown(&agg));
            }
            if failures.messages.is_empty() {
                Ok(ExitCode::SUCCESS)
            } else {
                eprintln!("partial failures:\n{}", failures.messages.join("\n"));
                Ok(ExitCode::FAILURE)
            }
        }
        Command::EvalModel { config, fold } => {
            let config = config.load()?;
            let report = cmd_eval_model(&config, fold)?;
            println!("{}", pipeline::render_eval_markdown(&report));
            Ok(ExitCode::SUCCESS)
        }
        Command::Explain { config, fold, limit, methods } => {
            let config = config.load()?;
            let methods = parse_methods(&methods)?;
            let dataset = LabeledDataset::load(&config.paths.dataset)?;
            let (model, _) = load_model(&config.model_path(fold))?;
            let plan = stratified_folds(&dataset, config.folds.k, config.folds.validation_fraction, config.seed)?;
            let split = plan.split(fold, &dataset);
            let train_refs: Vec<&ActivityWindow> = split.train.iter().map(|&i| &dataset.windows[i]).collect();
            let explainers =
                ExplainerSet::new(&model, &dataset.registry, &train_refs, &config.explainers, config.seed);
            let lexicon = match &config.paths.lexicon {
                Some(p) => SensorLexicon::from_registry_with_overrides(&dataset.registry, p)?,
                None => SensorLexicon::from_registry(&dataset.registry),
            };
            let take = limit.unwrap_or(split.test.len());
            for &i in split.test.iter().take(take) {
                let window = &dataset.windows[i];
                println!("instance {i} (truth: {:?})", window.label.map(|l| l.name()));
                for &m in &methods {
                    let set = explainers.run(m, window, pipeline::instance_seed(config.seed, i, m))?;
                    if set.features.is_empty() {
                        println!("  {m}: (no local signal)");
                        continue;
                    }
                    let (_, rendered) = pipeline::explanation_texts(&set, &lexicon)?;
                    println!("  {m}: {}", rendered.text);
                }
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Benchmark { config, fold, limit, methods, workers } => {
            let config = config.load()?;
            let options = BenchmarkOptions { fold, limit, methods: parse_methods(&methods)?, workers };
            let (report, failures) = cmd_benchmark(&config, &options)?;
            println!("{}", pipeline::render_benchmark_markdown(&report));
            println!("artifacts in {}", config.paths.out_dir.display());
            if failures.messages.is_empty() {
                Ok(ExitCode::SUCCESS)
            } else {
                eprintln!("partial failures:\n{}", failures.messages.join("\n"));
                Ok(ExitCode::FAILURE)
            }
        }
        Command::Report { config, plots } => {
            let config = config.load()?;
            let out = &config.paths.out_dir;
            let mut printed = false;
            let agg_path = out.join("eval_aggregate.json");
            if agg_path.exists() {
                let report: xarec::classifier::EvalReport =
                    serde_json::from_str(&std::fs::read_to_string(&agg_path)?)?;
                let md = pipeline::render_eval_markdown(&report);
                std::fs::write(out.join("eval_report.md"), &md)?;
                println!("## Classifier\n\n{md}");
                printed = true;
            }
            let bench_path = out.join("benchmark.json");
            if bench_path.exists() {
                let report: xarec::eval::BenchmarkReport =
                    serde_json::from_str(&std::fs::read_to_string(&bench_path)?)?;
                let md = pipeline::render_benchmark_markdown(&report);
                std::fs::write(out.join("benchmark_report.md"), &md)?;
                pipeline::write_benchmark_csv(&report, &out.join("benchmark.csv"))?;
                if plots {
                    pipeline::write_svg_charts(&report, &out.join("charts"))?;
                }
                println!("{md}");
                printed = true;
            }
            if !printed {
                return Err(PipelineError::Input(
                    bench_path,
                    "no artifacts found; run `train` and `benchmark` first".to_string(),
                ));
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            // input/config problems exit 2; anything else is a runtime failure
            match e {
                PipelineError::Input(..)
                | PipelineError::Config(..)
                | PipelineError::Parse(_)
                | PipelineError::Registry(_)
                | PipelineError::Mapping(_)
                | PipelineError::Store(_)
                | PipelineError::Dataset(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
