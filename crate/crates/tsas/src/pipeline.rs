//! Full adaptation runs: evaluate, sample, vote, filter, self-train,
//! re-evaluate, for the main method and every baseline/ablation variant.
//!
//! Determinism contract: given identical configs and seeds, a run produces
//! byte-identical pseudo-dataset files and reports regardless of worker
//! count. Work is ordered by example index and per-sample seeds, never by
//! completion time.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::Serialize;
use thiserror::Error;

use tsas_core::config::{ConfigError, FilterKind, RunConfig, Tau};
use tsas_core::ensemble::{build_pseudo_dataset, collect_samples, majority_vote, soft_vote_targets, VotedExample};
use tsas_core::textnorm::{evaluate_set, lexical_diversity, MetricsError};
use tsas_core::toymodel::{ToyModel, TrainItem, TrainTrace};
use tsas_core::types::{DecodeMode, PseudoLabeledExample, QaExample, RunReport, Seeds, VariantTag, VoteResult};
use tsas_core::{
    render_prompt, CollectError, DecodeSpec, FilterError, GenerateError, Generator, TemplateError,
    TrainConfig,
};

use crate::backends::{HttpGenerator, MockGenerator};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("variant `{0}` trains, but the backend is not trainable")]
    NotTrainable(VariantTag),
    #[error("backend does not expose a training hook")]
    BackendNotTrainable,
    #[error("variant `finetune_supervised` requires a labeled train set")]
    MissingTrainSet,
    #[error("example `{id}` in the supervised train set has no gold answers")]
    MissingGold { id: String },
    #[error("test set is empty")]
    EmptyTestSet,
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Collect(#[from] CollectError),
    #[error(transparent)]
    Generate(#[from] GenerateError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error("training failed: {0}")]
    Train(#[from] tsas_core::toymodel::ToyError),
    #[error("cannot write `{path}`: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("run directory `{0}` already holds a report; pick a fresh --out")]
    RunDirOccupied(String),
}

// ---------------------------------------------------------------------------
// Leakage guard
// ---------------------------------------------------------------------------

/// The only view of a test example the adaptation stages receive. Gold
/// answers are stripped at construction; the accessor below exists to make
/// the guarantee testable at runtime as well as by construction.
#[derive(Debug, Clone)]
pub struct Unlabeled {
    pub id: String,
    pub question: String,
    pub document: String,
}

impl Unlabeled {
    pub fn blind(example: &QaExample) -> Self {
        Unlabeled {
            id: example.id.clone(),
            question: example.question.clone(),
            document: example.document.clone(),
        }
    }

    /// Leakage guard: sampling and training code holds `Unlabeled` values,
    /// which carry no gold answers. Any attempt to read them faults.
    pub fn gold_answers(&self) -> &[String] {
        panic!(
            "leakage guard: example `{}` was blinded; gold answers are not visible to the adaptation stages",
            self.id
        );
    }
}

// ---------------------------------------------------------------------------
// Backend trait
// ---------------------------------------------------------------------------

/// A generation backend as the pipeline sees it: generator plus an optional
/// training hook. Training always runs on a clone, so the caller's backend
/// stays at the pre-adaptation checkpoint.
pub trait AdaptiveBackend: Generator + Clone {
    fn is_trainable(&self) -> bool {
        false
    }

    fn train_on(&mut self, _items: &[TrainItem], _cfg: &TrainConfig) -> Result<TrainTrace, PipelineError> {
        Err(PipelineError::BackendNotTrainable)
    }

    /// Whether training toward this target can work at all (the copy model
    /// rejects targets absent from the prompt). Callers drop and count
    /// failures.
    fn can_train_toward(&self, _prompt: &str, _target: &str) -> bool {
        true
    }
}

impl AdaptiveBackend for ToyModel {
    fn is_trainable(&self) -> bool {
        true
    }

    fn train_on(&mut self, items: &[TrainItem], cfg: &TrainConfig) -> Result<TrainTrace, PipelineError> {
        Ok(self.train(items, cfg)?)
    }

    fn can_train_toward(&self, prompt: &str, target: &str) -> bool {
        self.is_representable(prompt, target)
    }
}

impl AdaptiveBackend for MockGenerator {}

impl AdaptiveBackend for HttpGenerator {}

// ---------------------------------------------------------------------------
// Deterministic worker pool
// ---------------------------------------------------------------------------

/// Fan `f` out over `items` with a bounded worker pool; the result vector is
/// ordered by item index, so the outcome is invariant to scheduling.
pub(crate) fn parallel_map<T, R, F>(items: &[T], workers: u32, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync,
{
    let workers = (workers.max(1) as usize).min(items.len().max(1));
    if workers <= 1 {
        return items.iter().enumerate().map(|(i, item)| f(i, item)).collect();
    }
    let next = AtomicUsize::new(0);
    let mut slots: Vec<Option<R>> = (0..items.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|_| {
                scope.spawn(|| {
                    let mut produced = Vec::new();
                    loop {
                        let index = next.fetch_add(1, Ordering::Relaxed);
                        if index >= items.len() {
                            break;
                        }
                        produced.push((index, f(index, &items[index])));
                    }
                    produced
                })
            })
            .collect();
        for handle in handles {
            for (index, result) in handle.join().expect("pipeline worker panicked") {
                slots[index] = Some(result);
            }
        }
    });
    slots.into_iter().map(|slot| slot.expect("all indices produced")).collect()
}

/// Collapse per-item results into one result, reporting the error of the
/// smallest failing index so error selection is deterministic too.
fn first_error<R, E>(results: Vec<Result<R, E>>) -> Result<Vec<R>, E> {
    let mut out = Vec::with_capacity(results.len());
    for result in results {
        out.push(result?);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Run orchestration
// ---------------------------------------------------------------------------

/// Everything a finished run hands back to the caller.
#[derive(Debug, Clone)]
pub struct RunOutcome<B> {
    pub report: RunReport,
    pub pseudo: Vec<PseudoLabeledExample>,
    /// The adapted backend, when the variant trained one.
    pub trained: Option<B>,
    pub train_trace: Option<TrainTrace>,
    /// Pseudo-labels that survived filtering but were untrainable for the
    /// backend (e.g. not copyable); dropped and counted.
    pub dropped_untrainable: u32,
    pub predictions_before: BTreeMap<String, String>,
    pub predictions_after: BTreeMap<String, String>,
}

/// The per-variant recipe: decode mode, sample count, and filter overrides
/// applied to the base config.
fn effective_config(tag: VariantTag, base: &RunConfig) -> RunConfig {
    let mut cfg = base.clone();
    match tag {
        VariantTag::Naive | VariantTag::NaiveNoExt => {}
        VariantTag::GreedySelfAdapt => {
            cfg.sampling.decode_mode = DecodeMode::Greedy;
            cfg.sampling.n = 1;
            cfg.filter.kind = FilterKind::None;
        }
        VariantTag::SoftVote => {
            cfg.sampling.decode_mode = DecodeMode::TopK;
            cfg.filter.kind = FilterKind::None;
        }
        VariantTag::Lmsi => {
            cfg.sampling.decode_mode = DecodeMode::TopK;
            cfg.filter.kind = FilterKind::None;
        }
        VariantTag::Tsas => {
            cfg.sampling.decode_mode = DecodeMode::McDropout;
            cfg.filter.kind = FilterKind::AgreementThreshold;
        }
        VariantTag::TsasNoFilter => {
            cfg.sampling.decode_mode = DecodeMode::McDropout;
            cfg.filter.kind = FilterKind::None;
        }
        VariantTag::TsasNoStochastic => {
            cfg.sampling.decode_mode = DecodeMode::Greedy;
            cfg.sampling.n = 1;
            cfg.filter.kind = FilterKind::ConfidenceThreshold;
        }
        VariantTag::FinetuneSupervised => {
            // the indicator model trains one epoch on gold labels
            cfg.train.epochs = 1;
        }
    }
    cfg
}

fn eval_prompt(tag: VariantTag, template: &str, example: &QaExample) -> Result<String, TemplateError> {
    let document = match tag {
        VariantTag::NaiveNoExt => "",
        _ => example.document.as_str(),
    };
    render_prompt(template, document, &example.question)
}

fn predict_all<B: AdaptiveBackend>(
    backend: &B,
    prompts: &[(String, String)], // (id, prompt)
    cfg: &RunConfig,
) -> Result<BTreeMap<String, String>, PipelineError> {
    let spec = DecodeSpec::greedy(cfg.sampling.max_new_tokens);
    let results = parallel_map(prompts, cfg.workers, |_, (id, prompt)| {
        backend
            .generate(prompt, &spec)
            .map(|generation| (id.clone(), generation.text))
    });
    Ok(first_error(results)?.into_iter().collect())
}

fn median(mut values: Vec<f64>) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(|a, b| a.partial_cmp(b).expect("log-probs are finite"));
    let mid = values.len() / 2;
    Some(if values.len() % 2 == 1 {
        values[mid]
    } else {
        0.5 * (values[mid - 1] + values[mid])
    })
}

/// Gold-supervised training items from a labeled set; the first gold answer
/// is the target. Unrepresentable targets are dropped and counted.
fn supervised_items<B: AdaptiveBackend>(
    backend: &B,
    train_set: &[QaExample],
    template: &str,
) -> Result<(Vec<TrainItem>, u32), PipelineError> {
    let mut items = Vec::with_capacity(train_set.len());
    let mut dropped = 0;
    for example in train_set {
        let gold = example
            .gold_answers
            .first()
            .ok_or_else(|| PipelineError::MissingGold { id: example.id.clone() })?;
        let prompt = render_prompt(template, &example.document, &example.question)?;
        if backend.can_train_toward(&prompt, gold) {
            items.push(TrainItem::new(prompt, gold.clone(), 1.0));
        } else {
            dropped += 1;
        }
    }
    Ok((items, dropped))
}

/// Pre-train a backend on gold labels outside any variant recipe (the
/// acceptance path: fit the toy model to the train split before adapting).
pub fn pretrain_supervised<B: AdaptiveBackend>(
    backend: &mut B,
    train_set: &[QaExample],
    template: &str,
    cfg: &TrainConfig,
) -> Result<(TrainTrace, u32), PipelineError> {
    let (items, dropped) = supervised_items(backend, train_set, template)?;
    let trace = backend.train_on(&items, cfg)?;
    Ok((trace, dropped))
}

/// Run one variant end to end and assemble its report.
///
/// The backend is never mutated: training variants clone it, train the
/// clone, and return it in [`RunOutcome::trained`]. Gold answers of the
/// test set are read only by the evaluation steps; sampling and training
/// see [`Unlabeled`] views.
pub fn run_variant<B: AdaptiveBackend>(
    tag: VariantTag,
    backend: &B,
    test_set: &[QaExample],
    train_set: Option<&[QaExample]>,
    base_cfg: &RunConfig,
) -> Result<RunOutcome<B>, PipelineError> {
    let cfg = effective_config(tag, base_cfg);
    cfg.validate()?;
    if test_set.is_empty() {
        return Err(PipelineError::EmptyTestSet);
    }
    if tag.trains() && !backend.is_trainable() {
        return Err(PipelineError::NotTrainable(tag));
    }
    if tag == VariantTag::FinetuneSupervised && train_set.is_none() {
        return Err(PipelineError::MissingTrainSet);
    }

    // before: greedy predictions for every variant
    let eval_prompts: Vec<(String, String)> = test_set
        .iter()
        .map(|ex| Ok((ex.id.clone(), eval_prompt(tag, &cfg.prompt_template, ex)?)))
        .collect::<Result<_, TemplateError>>()?;
    let predictions_before = predict_all(backend, &eval_prompts, &cfg)?;
    let (em_before, f1_before) = evaluate_set(&predictions_before, test_set)?;

    let seeds = Seeds { sampling: cfg.sampling.base_seed, training: cfg.train.seed };
    let mut outcome = RunOutcome {
        report: RunReport {
            variant: tag,
            em_before,
            f1_before,
            em_after: em_before,
            f1_after: f1_before,
            retained: 0,
            total: test_set.len() as u32,
            mean_agreement: None,
            lexical_diversity: None,
            config: cfg.clone(),
            seeds,
        },
        pseudo: Vec::new(),
        trained: None,
        train_trace: None,
        dropped_untrainable: 0,
        predictions_after: predictions_before.clone(),
        predictions_before,
    };

    if !tag.trains() {
        return Ok(outcome);
    }

    // adaptation: the stages below only ever see blinded examples
    let mut items: Vec<TrainItem> = Vec::new();
    if tag == VariantTag::FinetuneSupervised {
        let train_set = train_set.expect("checked above");
        let (supervised, dropped) = supervised_items(backend, train_set, &cfg.prompt_template)?;
        outcome.report.total = train_set.len() as u32;
        outcome.report.retained = train_set.len() as u32;
        outcome.dropped_untrainable = dropped;
        outcome.pseudo = train_set
            .iter()
            .map(|ex| PseudoLabeledExample {
                example_id: ex.id.clone(),
                question: ex.question.clone(),
                document: ex.document.clone(),
                pseudo_label: ex.gold_answers.first().cloned().unwrap_or_default(),
                agreement: tsas_core::Ratio::new(1, 1),
                source_variant: tag,
            })
            .collect();
        items = supervised;
    } else {
        let blinded: Vec<Unlabeled> = test_set.iter().map(Unlabeled::blind).collect();
        let prompts: Vec<String> = blinded
            .iter()
            .map(|u| render_prompt(&cfg.prompt_template, &u.document, &u.question))
            .collect::<Result<_, TemplateError>>()?;

        let sample_inputs: Vec<(usize, &Unlabeled)> = blinded.iter().enumerate().collect();
        let sampled = parallel_map(&sample_inputs, cfg.workers, |_, (index, unlabeled)| {
            collect_samples(backend, &unlabeled.id, &prompts[*index], &cfg.sampling)
        });
        let sampled = first_error(sampled)?;

        let diversities: Vec<f64> = sampled
            .iter()
            .map(|samples| lexical_diversity(samples).expect("n >= 1 samples per example"))
            .collect();
        outcome.report.lexical_diversity =
            Some(diversities.iter().sum::<f64>() / diversities.len() as f64);

        let votes: Vec<VoteResult> =
            sampled.iter().map(|samples| majority_vote(samples, cfg.grouping)).collect();
        outcome.report.mean_agreement =
            Some(votes.iter().map(|v| v.agreement.as_f64()).sum::<f64>() / votes.len() as f64);

        if tag == VariantTag::SoftVote {
            // every distinct answer trains, weighted by its vote share
            for (index, samples) in sampled.iter().enumerate() {
                let unlabeled = &blinded[index];
                let targets = soft_vote_targets(samples);
                let mut contributed = false;
                for target in targets {
                    if target.text.is_empty() {
                        continue;
                    }
                    outcome.pseudo.push(PseudoLabeledExample {
                        example_id: unlabeled.id.clone(),
                        question: unlabeled.question.clone(),
                        document: unlabeled.document.clone(),
                        pseudo_label: target.text.clone(),
                        agreement: target.weight,
                        source_variant: tag,
                    });
                    if backend.can_train_toward(&prompts[index], &target.text) {
                        items.push(TrainItem::new(
                            prompts[index].clone(),
                            target.text,
                            target.weight.as_f64(),
                        ));
                        contributed = true;
                    } else {
                        outcome.dropped_untrainable += 1;
                    }
                }
                if contributed {
                    outcome.report.retained += 1;
                }
            }
        } else {
            let mut filter = cfg.filter.clone();
            if filter.kind == FilterKind::ConfidenceThreshold && filter.confidence_floor.is_none() {
                // declared default: the per-run median sequence log-prob
                let logprobs: Vec<f64> = votes
                    .iter()
                    .enumerate()
                    .map(|(index, vote)| {
                        vote.groups[0]
                            .members
                            .first()
                            .and_then(|m| m.seq_logprob)
                            .ok_or_else(|| FilterError::LogprobUnavailable {
                                context: format!("example `{}`", blinded[index].id),
                            })
                    })
                    .collect::<Result<_, _>>()?;
                filter.confidence_floor = median(logprobs);
            }

            let voted: Vec<VotedExample> = blinded
                .iter()
                .zip(&votes)
                .map(|(u, vote)| VotedExample {
                    id: &u.id,
                    question: &u.question,
                    document: &u.document,
                    vote,
                })
                .collect();
            outcome.pseudo = build_pseudo_dataset(&voted, &filter, tag)?;
            outcome.report.retained = outcome.pseudo.len() as u32;

            let prompt_of: BTreeMap<&str, &str> = blinded
                .iter()
                .zip(&prompts)
                .map(|(u, p)| (u.id.as_str(), p.as_str()))
                .collect();
            for pseudo in &outcome.pseudo {
                let prompt = prompt_of[pseudo.example_id.as_str()];
                if backend.can_train_toward(prompt, &pseudo.pseudo_label) {
                    items.push(TrainItem::new(prompt, pseudo.pseudo_label.clone(), 1.0));
                } else {
                    outcome.dropped_untrainable += 1;
                }
            }
        }
    }

    if outcome.dropped_untrainable > 0 {
        log::warn!(
            "{}: dropped {} pseudo-label(s) the backend cannot train toward",
            tag,
            outcome.dropped_untrainable
        );
    }

    // the pseudo-dataset is frozen here; training re-shuffles but never
    // re-labels
    if !items.is_empty() {
        let mut adapted = backend.clone();
        let trace = adapted.train_on(&items, &cfg.train)?;
        outcome.predictions_after = predict_all(&adapted, &eval_prompts, &cfg)?;
        let (em_after, f1_after) = evaluate_set(&outcome.predictions_after, test_set)?;
        outcome.report.em_after = em_after;
        outcome.report.f1_after = f1_after;
        outcome.trained = Some(adapted);
        outcome.train_trace = Some(trace);
    }

    Ok(outcome)
}

// ---------------------------------------------------------------------------
// Sweeps
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub enum SweepValues {
    Tau(Vec<Tau>),
    NMasks(Vec<u32>),
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepPoint {
    pub value: f64,
    pub em: f64,
    pub f1: f64,
    /// retained / total.
    pub retention: f64,
    #[serde(skip)]
    pub report: RunReport,
}

/// One run per value, same seeds otherwise.
pub fn sweep<B: AdaptiveBackend>(
    tag: VariantTag,
    backend: &B,
    test_set: &[QaExample],
    train_set: Option<&[QaExample]>,
    base_cfg: &RunConfig,
    values: &SweepValues,
) -> Result<Vec<SweepPoint>, PipelineError> {
    let mut points = Vec::new();
    let configs: Vec<(f64, RunConfig)> = match values {
        SweepValues::Tau(taus) => taus
            .iter()
            .map(|tau| {
                let mut cfg = base_cfg.clone();
                cfg.filter.tau = *tau;
                (tau.as_f64(), cfg)
            })
            .collect(),
        SweepValues::NMasks(ns) => ns
            .iter()
            .map(|n| {
                let mut cfg = base_cfg.clone();
                cfg.sampling.n = *n;
                (f64::from(*n), cfg)
            })
            .collect(),
    };
    for (value, cfg) in configs {
        let outcome = run_variant(tag, backend, test_set, train_set, &cfg)?;
        let report = outcome.report;
        points.push(SweepPoint {
            value,
            em: report.em_after,
            f1: report.f1_after,
            retention: f64::from(report.retained) / f64::from(report.total.max(1)),
            report,
        });
    }
    Ok(points)
}

// ---------------------------------------------------------------------------
// Run directory
// ---------------------------------------------------------------------------

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    let io = |source: std::io::Error| PipelineError::Io {
        path: path.display().to_string(),
        source,
    };
    let tmp = path.with_extension("tmp");
    let mut file = fs::File::create(&tmp).map_err(io)?;
    file.write_all(bytes).map_err(io)?;
    file.sync_all().map_err(io)?;
    fs::rename(&tmp, path).map_err(io)
}

/// Create the run directory, refusing to clobber a finished run.
pub fn prepare_run_dir(dir: &Path) -> Result<(), PipelineError> {
    if dir.join("report.json").exists() {
        return Err(PipelineError::RunDirOccupied(dir.display().to_string()));
    }
    fs::create_dir_all(dir).map_err(|source| PipelineError::Io {
        path: dir.display().to_string(),
        source,
    })
}

#[derive(Serialize)]
struct ConfigSnapshot<'a> {
    variant: VariantTag,
    config: &'a RunConfig,
}

/// Written before any work happens, so a crashed run still records what it
/// was asked to do.
pub fn write_config_snapshot(
    dir: &Path,
    tag: VariantTag,
    cfg: &RunConfig,
) -> Result<(), PipelineError> {
    let effective = effective_config(tag, cfg);
    let snapshot = ConfigSnapshot { variant: tag, config: &effective };
    let mut body = serde_json::to_string_pretty(&snapshot).expect("config serializes");
    body.push('\n');
    write_atomic(&dir.join("config.json"), body.as_bytes())
}

/// Pseudo-dataset lines, report.json, report.txt, and prediction files.
pub fn write_outputs<B>(dir: &Path, outcome: &RunOutcome<B>) -> Result<(), PipelineError> {
    let mut pseudo_lines = String::new();
    for record in &outcome.pseudo {
        pseudo_lines.push_str(&serde_json::to_string(record).expect("record serializes"));
        pseudo_lines.push('\n');
    }
    write_atomic(&dir.join("pseudo_dataset.jsonl"), pseudo_lines.as_bytes())?;

    let mut report_json =
        serde_json::to_string_pretty(&outcome.report).expect("report serializes");
    report_json.push('\n');
    write_atomic(&dir.join("report.json"), report_json.as_bytes())?;
    write_atomic(&dir.join("report.txt"), render_report(&outcome.report).as_bytes())?;

    for (name, predictions) in [
        ("predictions_before.jsonl", &outcome.predictions_before),
        ("predictions_after.jsonl", &outcome.predictions_after),
    ] {
        let mut lines = String::new();
        for (id, prediction) in predictions {
            let record = serde_json::json!({ "id": id, "prediction": prediction });
            lines.push_str(&record.to_string());
            lines.push('\n');
        }
        write_atomic(&dir.join(name), lines.as_bytes())?;
    }
    Ok(())
}

/// The human summary table mirroring the EM/F1 before/after columns.
pub fn render_report(report: &RunReport) -> String {
    let mut out = String::new();
    out.push_str(&format!("variant: {}\n", report.variant));
    out.push_str(&format!("{:<10} {:>8} {:>8}\n", "", "EM", "F1"));
    out.push_str(&format!(
        "{:<10} {:>8.2} {:>8.2}\n",
        "before", report.em_before, report.f1_before
    ));
    out.push_str(&format!(
        "{:<10} {:>8.2} {:>8.2}\n",
        "after", report.em_after, report.f1_after
    ));
    out.push_str(&format!(
        "retained: {}/{} ({:.1}%)\n",
        report.retained,
        report.total,
        100.0 * f64::from(report.retained) / f64::from(report.total.max(1))
    ));
    if let Some(mean_agreement) = report.mean_agreement {
        out.push_str(&format!("mean agreement: {mean_agreement:.4}\n"));
    }
    if let Some(diversity) = report.lexical_diversity {
        out.push_str(&format!("lexical diversity: {diversity:.4}\n"));
    }
    out.push_str(&format!(
        "seeds: sampling {}, training {}\n",
        report.seeds.sampling, report.seeds.training
    ));
    out
}

/// Plot-ready sweep table: value, EM, F1, retention.
pub fn render_sweep_csv(parameter: &str, points: &[SweepPoint]) -> String {
    let mut out = format!("{parameter},em,f1,retention\n");
    for point in points {
        out.push_str(&format!(
            "{},{:.4},{:.4},{:.6}\n",
            point.value, point.em, point.f1, point.retention
        ));
    }
    out
}
