//! Command-line entry points for the self-adaptation toolkit.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use tsas::backends::{HttpGenerator, SERVER_URL_ENV};
use tsas::config::AppConfig;
use tsas::dataset::{self, DatasetFile, DatasetFormat};
use tsas::pipeline::{self, RunOutcome, SweepValues};
use tsas::{checkpoint, synth};

use tsas_core::config::{RunConfig, Tau, TrainConfig};
use tsas_core::ensemble::GroupingMode;
use tsas_core::textnorm::evaluate_set;
use tsas_core::toymodel::{ToyModel, Vocab};
use tsas_core::types::{QaExample, RunReport, VariantTag};

#[derive(Parser)]
#[command(name = "tsas", version, about = "Test-time self-adaptation for extractive QA generators")]
struct Cli {
    /// TOML configuration file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed: sets both the sampling base seed and the training seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for sampling and evaluation.
    #[arg(long, global = true)]
    workers: Option<u32>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic shifted QA corpus (train.jsonl, test.jsonl).
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        num_train: u32,
        #[arg(long, default_value_t = 200)]
        num_test: u32,
        /// Draw train and test from the same template families and pools.
        #[arg(long)]
        no_shift: bool,
        #[arg(long, default_value_t = 3)]
        distractors: u32,
        #[arg(long, default_value_t = 16)]
        entity_pool: u32,
    },
    /// Validate a dataset file and normalize it to jsonl.
    Ingest {
        #[arg(long, value_enum)]
        format: DatasetFormat,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Run one adaptation variant and write a run directory.
    Adapt(AdaptArgs),
    /// Run one variant across a parameter sweep.
    Sweep {
        #[command(flatten)]
        adapt: AdaptArgs,
        #[arg(long, value_enum)]
        parameter: SweepParameter,
        /// Comma-separated values, e.g. `0,0.3,0.7,1.0` or `1,5,15`.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
    },
    /// Score a predictions file against a gold jsonl dataset.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gold: PathBuf,
    },
    /// Render a run directory's report as a table.
    Report {
        #[arg(long)]
        run: PathBuf,
    },
}

#[derive(Args)]
struct AdaptArgs {
    #[arg(long)]
    variant: VariantTag,
    /// Test split (jsonl normal form; run `ingest` first for SQuAD files).
    #[arg(long)]
    test: PathBuf,
    /// Labeled train split; required by finetune_supervised and
    /// --pretrain-epochs.
    #[arg(long)]
    train: Option<PathBuf>,
    /// Starting checkpoint for the toy backend; a fresh model is
    /// initialized when absent.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Run directory to create.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = BackendKind::Toy)]
    backend: BackendKind,
    /// Generation server base URL (or set TSAS_SERVER_URL).
    #[arg(long)]
    server: Option<String>,
    /// Fit a fresh/loaded toy model on the train split for this many epochs
    /// before the variant runs.
    #[arg(long, default_value_t = 0)]
    pretrain_epochs: u32,
    #[arg(long)]
    n: Option<u32>,
    #[arg(long)]
    tau: Option<Tau>,
    #[arg(long)]
    epochs: Option<u32>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<u32>,
    #[arg(long)]
    dropout_rate: Option<f64>,
    #[arg(long)]
    top_k: Option<u32>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    max_new_tokens: Option<u32>,
    /// Prompt template containing {context} and {question} exactly once.
    #[arg(long)]
    template: Option<String>,
    #[arg(long, value_parser = parse_grouping)]
    grouping: Option<GroupingMode>,
    /// Log-prob floor for the confidence filter; defaults to the per-run
    /// median.
    #[arg(long)]
    confidence_floor: Option<f64>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BackendKind {
    Toy,
    Http,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SweepParameter {
    Tau,
    NMasks,
}

fn parse_grouping(s: &str) -> Result<GroupingMode, String> {
    match s {
        "normalized" => Ok(GroupingMode::Normalized),
        "raw" => Ok(GroupingMode::Raw),
        other => Err(format!("unknown grouping `{other}` (use `normalized` or `raw`)")),
    }
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut app = match &cli.config {
        Some(path) => AppConfig::load(path)?,
        None => AppConfig::default(),
    };
    if let Some(seed) = cli.seed {
        app.run.sampling.base_seed = seed;
        app.run.train.seed = seed;
    }
    if let Some(workers) = cli.workers {
        app.run.workers = workers;
    }

    match cli.command {
        Command::Synth { out, num_train, num_test, no_shift, distractors, entity_pool } => {
            let seed = cli.seed.unwrap_or(0);
            let mut spec = if no_shift {
                synth::SynthSpec::unshifted(num_train, num_test, seed)
            } else {
                synth::SynthSpec::shifted(num_train, num_test, seed)
            };
            spec.distractors = distractors;
            spec.entity_pool = entity_pool;
            let corpus = synth::synthesize(&spec)?;
            std::fs::create_dir_all(&out)
                .with_context(|| format!("cannot create `{}`", out.display()))?;
            let train_path = out.join("train.jsonl");
            let test_path = out.join("test.jsonl");
            dataset::write_jsonl(&corpus.train, &train_path)?;
            dataset::write_jsonl(&corpus.test, &test_path)?;
            println!(
                "wrote {} train examples to {} and {} test examples to {}",
                corpus.train.len(),
                train_path.display(),
                corpus.test.len(),
                test_path.display()
            );
        }
        Command::Ingest { format, input, output } => {
            let outcome = dataset::ingest(&DatasetFile { format, path: input, split: None })?;
            dataset::write_jsonl(&outcome.examples, &output)?;
            println!(
                "ingested {} examples to {} ({} empty records skipped)",
                outcome.examples.len(),
                output.display(),
                outcome.rejected_empty
            );
        }
        Command::Adapt(args) => cmd_adapt(args, app)?,
        Command::Sweep { adapt, parameter, values } => cmd_sweep(adapt, parameter, values, app)?,
        Command::Evaluate { pred, gold } => {
            let golds = load_jsonl(&gold)?;
            let predictions = dataset::read_predictions(&pred)?;
            let (em, f1) = evaluate_set(&predictions, &golds)?;
            println!("EM\t{em:.2}");
            println!("F1\t{f1:.2}");
        }
        Command::Report { run } => {
            let path = run.join("report.json");
            let raw = std::fs::read_to_string(&path)
                .with_context(|| format!("cannot read `{}`", path.display()))?;
            let report: RunReport = serde_json::from_str(&raw)
                .with_context(|| format!("cannot parse `{}`", path.display()))?;
            print!("{}", pipeline::render_report(&report));
        }
    }
    Ok(())
}

fn load_jsonl(path: &Path) -> Result<Vec<QaExample>> {
    let outcome = dataset::ingest(&DatasetFile {
        format: DatasetFormat::Jsonl,
        path: path.to_path_buf(),
        split: None,
    })?;
    if outcome.rejected_empty > 0 {
        log::warn!("{}: skipped {} empty records", path.display(), outcome.rejected_empty);
    }
    Ok(outcome.examples)
}

fn apply_flag_overrides(run: &mut RunConfig, args: &AdaptArgs) {
    if let Some(n) = args.n {
        run.sampling.n = n;
    }
    if let Some(tau) = args.tau {
        run.filter.tau = tau;
    }
    if let Some(epochs) = args.epochs {
        run.train.epochs = epochs;
    }
    if let Some(lr) = args.lr {
        run.train.learning_rate = lr;
    }
    if let Some(batch_size) = args.batch_size {
        run.train.batch_size = batch_size;
    }
    if let Some(dropout_rate) = args.dropout_rate {
        run.sampling.dropout_rate = dropout_rate;
    }
    if let Some(top_k) = args.top_k {
        run.sampling.top_k = top_k;
    }
    if let Some(temperature) = args.temperature {
        run.sampling.temperature = temperature;
    }
    if let Some(max_new_tokens) = args.max_new_tokens {
        run.sampling.max_new_tokens = max_new_tokens;
    }
    if let Some(template) = &args.template {
        run.prompt_template = template.clone();
    }
    if let Some(grouping) = args.grouping {
        run.grouping = grouping;
    }
    if let Some(floor) = args.confidence_floor {
        run.filter.confidence_floor = Some(floor);
    }
}

/// Build or load the toy backend, pre-training it when asked.
fn toy_backend(
    args: &AdaptArgs,
    app: &AppConfig,
    test: &[QaExample],
    train: Option<&[QaExample]>,
) -> Result<ToyModel> {
    let mut model = match &args.checkpoint {
        Some(path) => checkpoint::load(path)?,
        None => {
            let mut corpus: Vec<QaExample> = Vec::new();
            if let Some(train) = train {
                corpus.extend_from_slice(train);
            }
            corpus.extend_from_slice(test);
            let vocab = Vocab::encode_corpus(&corpus);
            let mut cfg = app.model.clone();
            cfg.dropout_rate = app.run.sampling.dropout_rate;
            ToyModel::new(vocab, cfg, app.run.sampling.base_seed)?
        }
    };
    if args.pretrain_epochs > 0 {
        let train = train.ok_or_else(|| {
            anyhow::anyhow!("--pretrain-epochs requires --train with gold answers")
        })?;
        let cfg = TrainConfig { epochs: args.pretrain_epochs, ..app.run.train.clone() };
        let (trace, dropped) =
            pipeline::pretrain_supervised(&mut model, train, &app.run.prompt_template, &cfg)?;
        log::info!(
            "pretrained {} epochs; first/last epoch loss {:.4}/{:.4}; {} targets dropped",
            args.pretrain_epochs,
            trace.epoch_mean_loss.first().copied().unwrap_or(f64::NAN),
            trace.epoch_mean_loss.last().copied().unwrap_or(f64::NAN),
            dropped
        );
    }
    Ok(model)
}

fn http_backend(args: &AdaptArgs, app: &AppConfig) -> Result<HttpGenerator> {
    let mut opts = app.http.clone();
    if let Some(server) = &args.server {
        opts.base_url = server.clone();
    } else if opts.base_url.is_empty() {
        if let Ok(url) = std::env::var(SERVER_URL_ENV) {
            opts.base_url = url;
        }
    }
    Ok(HttpGenerator::connect(opts)?)
}

fn cmd_adapt(args: AdaptArgs, mut app: AppConfig) -> Result<()> {
    apply_flag_overrides(&mut app.run, &args);
    let test = load_jsonl(&args.test)?;
    let train = args.train.as_deref().map(load_jsonl).transpose()?;

    pipeline::prepare_run_dir(&args.out)?;
    pipeline::write_config_snapshot(&args.out, args.variant, &app.run)?;

    match args.backend {
        BackendKind::Toy => {
            let model = toy_backend(&args, &app, &test, train.as_deref())?;
            checkpoint::save(&model, &args.out.join("checkpoint_before.json"))?;
            let outcome =
                pipeline::run_variant(args.variant, &model, &test, train.as_deref(), &app.run)?;
            finish_run(&args.out, &outcome)?;
            if let Some(trained) = &outcome.trained {
                checkpoint::save(trained, &args.out.join("checkpoint_after.json"))?;
            }
        }
        BackendKind::Http => {
            let backend = http_backend(&args, &app)?;
            let outcome =
                pipeline::run_variant(args.variant, &backend, &test, train.as_deref(), &app.run)?;
            finish_run(&args.out, &outcome)?;
        }
    }
    Ok(())
}

fn finish_run<B>(out: &Path, outcome: &RunOutcome<B>) -> Result<()> {
    pipeline::write_outputs(out, outcome)?;
    print!("{}", pipeline::render_report(&outcome.report));
    if outcome.dropped_untrainable > 0 {
        println!("untrainable pseudo-labels dropped: {}", outcome.dropped_untrainable);
    }
    Ok(())
}

fn cmd_sweep(
    args: AdaptArgs,
    parameter: SweepParameter,
    values: Vec<String>,
    mut app: AppConfig,
) -> Result<()> {
    apply_flag_overrides(&mut app.run, &args);
    let test = load_jsonl(&args.test)?;
    let train = args.train.as_deref().map(load_jsonl).transpose()?;

    let sweep_values = match parameter {
        SweepParameter::Tau => SweepValues::Tau(
            values
                .iter()
                .map(|v| v.parse::<Tau>().map_err(anyhow::Error::from))
                .collect::<Result<_>>()?,
        ),
        SweepParameter::NMasks => SweepValues::NMasks(
            values
                .iter()
                .map(|v| v.parse::<u32>().map_err(anyhow::Error::from))
                .collect::<Result<_>>()?,
        ),
    };

    pipeline::prepare_run_dir(&args.out)?;
    pipeline::write_config_snapshot(&args.out, args.variant, &app.run)?;

    let points = match args.backend {
        BackendKind::Toy => {
            let model = toy_backend(&args, &app, &test, train.as_deref())?;
            pipeline::sweep(args.variant, &model, &test, train.as_deref(), &app.run, &sweep_values)?
        }
        BackendKind::Http => {
            let backend = http_backend(&args, &app)?;
            pipeline::sweep(args.variant, &backend, &test, train.as_deref(), &app.run, &sweep_values)?
        }
    };

    let parameter_name = match parameter {
        SweepParameter::Tau => "tau",
        SweepParameter::NMasks => "n_masks",
    };
    let csv = pipeline::render_sweep_csv(parameter_name, &points);
    std::fs::write(args.out.join("sweep.csv"), &csv)
        .with_context(|| format!("cannot write `{}`", args.out.join("sweep.csv").display()))?;
    for point in &points {
        let name = format!("report_{}_{}.json", parameter_name, point.value);
        let mut body = serde_json::to_string_pretty(&point.report)?;
        body.push('\n');
        std::fs::write(args.out.join(&name), body)?;
    }
    print!("{csv}");

    // sweep values should be distinct, or report files overwrite each other
    let distinct: BTreeSet<String> = points.iter().map(|p| p.value.to_string()).collect();
    if distinct.len() != points.len() {
        log::warn!("sweep contains repeated values; report files overlap");
    }
    Ok(())
}
