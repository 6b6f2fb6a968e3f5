use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use cat2vec_core::corpus::{
    apply_tshot_constraint, build_vocabulary, load_corpus, merge_training_set, parse_corpus,
    partition_corpus, read_documents, read_labeled_corpus, tokenize_corpus, write_documents,
    write_labeled_corpus, write_raw_corpus,
};
use cat2vec_core::fewshot::{
    evaluate_episodic, evaluate_full, mean_std, partition_episodes, sample_support_query,
};
use cat2vec_core::synthgen::generate;
use cat2vec_core::trainer::{grad_check, load_checkpoint, random_instance, save_checkpoint};
use cat2vec_core::{
    ConstraintSpec, DocumentEncoder, EpisodeSpec, Error, EvalMode, EvalReport, LabeledCorpus, Metric,
    Objective, QueryCount, RawCorpus, SupportSet, SynthSpec, TrainConfig, TrainedModel, Vocabulary,
};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::CliError;

pub const MANIFEST: &str = "manifest.json";
pub const CATEGORY_ROW: &str = "__category__";

/// Written by `prepare`, read by `train` and `eval`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    /// Seed of the generated corpora, when they were generated.
    pub synth_seed: Option<u64>,
    pub constraint: ConstraintSpec,
    pub max_tokens: usize,
    pub vocab_size: usize,
    pub train: String,
    pub test: String,
    pub vocab: String,
    pub train_constrained: String,
    pub support_sets: Vec<SupportEntry>,
    pub train_documents: usize,
    pub train_constrained_documents: usize,
    pub test_documents: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SupportEntry {
    pub file: String,
    pub n_way: usize,
    pub k_shot: usize,
    pub seed: u64,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_owned(),
        source,
    }
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(io_err(path))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, contents).map_err(io_err(path))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    write_file(path, text)
}

fn load_corpora(config: &RunConfig) -> Result<(RawCorpus, RawCorpus), CliError> {
    let (train, test) = match (&config.synth, &config.train_corpus, &config.test_corpus) {
        (Some(spec), _, _) => {
            let c = generate(spec)?;
            (c.train, c.test)
        }
        (None, Some(train), Some(test)) => (load_corpus(train)?, load_corpus(test)?),
        _ => return Err(CliError::Usage("no corpora configured".into())),
    };
    match config.partition {
        Some(p) => Ok((
            partition_corpus(&train, p.chunk_size, p.max_chunks)?,
            partition_corpus(&test, p.chunk_size, p.max_chunks)?,
        )),
        None => Ok((train, test)),
    }
}

/// Tokenizes both corpora over a shared vocabulary, applies the per-class
/// cap to the training corpus and samples the support sets.
pub fn prepare(config: &RunConfig) -> Result<Manifest, CliError> {
    let (raw_train, raw_test) = load_corpora(config)?;
    let texts = raw_train
        .documents
        .iter()
        .chain(&raw_test.documents)
        .map(|d| d.text.as_str());
    let vocab = build_vocabulary(texts, config.vocab.min_count, config.vocab.max_size)?;
    let max_tokens = config.train.max_tokens;
    let train = tokenize_corpus(&raw_train, &vocab, max_tokens)?;
    let test = tokenize_corpus(&raw_test, &vocab, max_tokens)?;
    let constrained = apply_tshot_constraint(&train, &config.constraint)?;

    let n_way = config.episode.n_way.unwrap_or(test.class_index.len());
    let dir = &config.prepared_dir;
    create_dir(dir)?;
    let mut support_sets = Vec::with_capacity(config.support_sets);
    for i in 0..config.support_sets {
        let spec = EpisodeSpec {
            n_way,
            k_shot: config.episode.k_shot,
            queries_per_class: QueryCount::Fixed(0),
            seed: config.episode.seed.wrapping_add(i as u64),
        };
        let (support, _) = sample_support_query(&test, &spec)?;
        let file = format!("support_{i}.jsonl");
        write_documents(support.documents(), &test.class_index, dir.join(&file))?;
        support_sets.push(SupportEntry {
            file,
            n_way,
            k_shot: spec.k_shot,
            seed: spec.seed,
        });
    }

    let manifest = Manifest {
        version: crate::CONFIG_VERSION,
        synth_seed: config.synth.as_ref().map(|s| s.seed),
        constraint: config.constraint,
        max_tokens,
        vocab_size: vocab.len(),
        train: "train.jsonl".into(),
        test: "test.jsonl".into(),
        vocab: "vocab.tsv".into(),
        train_constrained: "train_constrained.jsonl".into(),
        support_sets,
        train_documents: train.len(),
        train_constrained_documents: constrained.len(),
        test_documents: test.len(),
    };
    write_labeled_corpus(&train, dir.join(&manifest.train))?;
    write_labeled_corpus(&test, dir.join(&manifest.test))?;
    write_labeled_corpus(&constrained, dir.join(&manifest.train_constrained))?;
    write_file(&dir.join(&manifest.vocab), vocab.to_tsv())?;
    write_json(&dir.join(MANIFEST), &manifest)?;
    log::info!(
        "prepared {} train ({} after cap), {} test documents, {} tokens in {}",
        train.len(),
        constrained.len(),
        test.len(),
        vocab.len(),
        dir.display()
    );
    Ok(manifest)
}

/// Everything `train` and `eval` read back from a prepared directory.
pub struct Prepared {
    pub manifest: Manifest,
    pub vocab: Vocabulary,
    pub train: LabeledCorpus,
    pub test: LabeledCorpus,
    pub support_sets: Vec<SupportSet>,
}

pub fn load_prepared(dir: &Path) -> Result<Prepared, CliError> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let vocab_path = dir.join(&manifest.vocab);
    let vocab = Vocabulary::from_tsv(&fs::read_to_string(&vocab_path).map_err(io_err(&vocab_path))?)?;
    let train = read_labeled_corpus(dir.join(&manifest.train_constrained))?;
    let test = read_labeled_corpus(dir.join(&manifest.test))?;
    let mut index = test.class_index.clone();
    let mut support_sets = Vec::with_capacity(manifest.support_sets.len());
    for entry in &manifest.support_sets {
        let docs = read_documents(dir.join(&entry.file), &mut index)?;
        support_sets.push(SupportSet::from_documents(docs, &index));
    }
    if index.len() != test.class_index.len() {
        return Err(Error::Coverage("support set labels missing from the test corpus".into()).into());
    }
    Ok(Prepared {
        manifest,
        vocab,
        train,
        test,
        support_sets,
    })
}

pub fn checkpoint_name(objective: Objective, set: usize) -> String {
    format!("{objective}_s{set}.ckpt")
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub objective: Objective,
    pub support_set: usize,
    pub checkpoint: PathBuf,
    pub final_loss: f64,
}

/// One model per configured objective and support set.
pub fn train(config: &RunConfig) -> Result<Vec<TrainOutcome>, CliError> {
    let prepared = load_prepared(&config.prepared_dir)?;
    if prepared.manifest.max_tokens != config.train.max_tokens {
        log::warn!(
            "documents were truncated to {} tokens at preparation; train.max_tokens = {} is ignored",
            prepared.manifest.max_tokens,
            config.train.max_tokens
        );
    }
    create_dir(&config.output_dir)?;
    let mut outcomes = Vec::new();
    for objective in config.objectives() {
        let train_config = TrainConfig {
            objective,
            max_tokens: prepared.manifest.max_tokens,
            ..config.train.clone()
        };
        for (i, support) in prepared.support_sets.iter().enumerate() {
            let data = merge_training_set(&prepared.train, support)?;
            log::info!(
                "training {objective} on support set {i}: {} documents",
                data.len()
            );
            let model = cat2vec_core::trainer::train(&train_config, &data, &prepared.vocab)?;
            let checkpoint = config.output_dir.join(checkpoint_name(objective, i));
            save_checkpoint(&model, &checkpoint)?;
            let csv = config.output_dir.join(format!("{objective}_s{i}_loss.csv"));
            write_file(&csv, model.loss_csv())?;
            outcomes.push(TrainOutcome {
                objective,
                support_set: i,
                checkpoint,
                final_loss: model.loss_history.last().copied().unwrap_or(f64::NAN),
            });
        }
    }
    Ok(outcomes)
}

fn default_mode(model: &TrainedModel) -> EvalMode {
    if model.config.objective.uses_categories() {
        EvalMode::CategoryTable
    } else {
        EvalMode::Prototypes
    }
}

/// Scores one model on one support set: accuracy over every remaining test
/// document of its classes (full), or pooled over episodes that partition
/// those documents (episodic).
fn evaluate_set(
    model: &TrainedModel,
    support: &SupportSet,
    test: &LabeledCorpus,
    metric: Metric,
    mode: EvalMode,
    queries_per_episode: usize,
) -> Result<EvalReport, CliError> {
    let report = match metric {
        Metric::Full => evaluate_full(model, std::slice::from_ref(support), test, mode)?,
        Metric::Episodic => {
            let episodes = partition_episodes(test, support, queries_per_episode)?;
            let mut r = evaluate_episodic(model, &episodes, mode)?;
            // Collapse the episodes into one row for this support set.
            let mut confusion = r.confusion[0].clone();
            for c in &r.confusion[1..] {
                for (row, other) in confusion.counts.iter_mut().zip(&c.counts) {
                    row.iter_mut().zip(other).for_each(|(a, b)| *a += b);
                }
            }
            r.accuracies = vec![r.accuracy];
            r.correct = vec![r.correct.iter().sum()];
            r.totals = vec![r.totals.iter().sum()];
            r.confusion = vec![confusion];
            r.std = 0.0;
            r
        }
    };
    Ok(report)
}

fn combine(metric: Metric, mode: EvalMode, parts: Vec<EvalReport>) -> EvalReport {
    let mut report = EvalReport {
        metric,
        mode,
        accuracy: 0.0,
        std: 0.0,
        accuracies: Vec::new(),
        correct: Vec::new(),
        totals: Vec::new(),
        confusion: Vec::new(),
    };
    for p in parts {
        report.accuracies.extend(p.accuracies);
        report.correct.extend(p.correct);
        report.totals.extend(p.totals);
        report.confusion.extend(p.confusion);
    }
    (report.accuracy, report.std) = mean_std(&report.accuracies);
    report
}

/// Evaluates each configured objective's checkpoints, or a single
/// checkpoint against every support set. Returns `(label, report)` pairs;
/// reports are written as `eval_{label}_{metric}.{json,csv}` plus a
/// confusion CSV.
pub fn eval(config: &RunConfig, checkpoint: Option<&Path>) -> Result<Vec<(String, EvalReport)>, CliError> {
    let prepared = load_prepared(&config.prepared_dir)?;
    let metric = config.eval.metric;
    let q = config.eval.queries_per_episode;
    let mut runs: Vec<(String, Vec<(TrainedModel, usize)>)> = Vec::new();
    match checkpoint {
        Some(path) => {
            let model = load_checkpoint(path)?;
            let label = path
                .file_stem()
                .map_or_else(|| "checkpoint".into(), |s| s.to_string_lossy().into_owned());
            runs.push((
                label,
                (0..prepared.support_sets.len())
                    .map(|i| (model.clone(), i))
                    .collect(),
            ));
        }
        None => {
            for objective in config.objectives() {
                let models = (0..prepared.support_sets.len())
                    .map(|i| {
                        Ok((
                            load_checkpoint(config.output_dir.join(checkpoint_name(objective, i)))?,
                            i,
                        ))
                    })
                    .collect::<Result<Vec<_>, CliError>>()?;
                runs.push((objective.to_string(), models));
            }
        }
    }

    create_dir(&config.output_dir)?;
    let mut reports = Vec::new();
    for (label, models) in runs {
        let mode = config.eval.mode.unwrap_or_else(|| default_mode(&models[0].0));
        let parts = models
            .iter()
            .map(|(model, i)| {
                evaluate_set(model, &prepared.support_sets[*i], &prepared.test, metric, mode, q)
            })
            .collect::<Result<Vec<_>, _>>()?;
        let report = combine(metric, mode, parts);
        let stem = config.output_dir.join(format!("eval_{label}_{metric}"));
        write_json(&stem.with_extension("json"), &report)?;
        write_file(&stem.with_extension("csv"), report.to_csv())?;
        let confusion = config
            .output_dir
            .join(format!("eval_{label}_{metric}_confusion.csv"));
        write_file(&confusion, report.confusion_csv())?;
        reports.push((label, report));
    }
    Ok(reports)
}

/// Writes `id<TAB>label<TAB>v_1..v_O` for every document of a raw corpus,
/// then one `__category__<TAB>class` row per category of the model. Returns
/// the number of rows written.
pub fn dump_embeddings(checkpoint: &Path, corpus: &Path, out: &mut dyn Write) -> Result<usize, CliError> {
    let model = load_checkpoint(checkpoint)?;
    let file = fs::File::open(corpus).map_err(io_err(corpus))?;
    let raw = match parse_corpus(std::io::BufReader::new(file)) {
        Ok(raw) => Some(raw),
        Err(Error::EmptyCorpus) => None,
        Err(e) => return Err(e.into()),
    };
    let mut rows = Vec::new();
    if let Some(raw) = raw {
        let docs = tokenize_corpus(&raw, &model.vocab, model.config.max_tokens)?;
        for doc in &docs.documents {
            rows.push((
                doc.id.clone(),
                docs.label_name(doc).to_owned(),
                model.encode(doc)?.into_vec(),
            ));
        }
    }
    for (id, name) in model.classes.iter() {
        rows.push((
            CATEGORY_ROW.into(),
            name.to_owned(),
            model.params.categories.rows.row(id.index()).to_vec(),
        ));
    }
    let mut text = String::new();
    for (id, label, v) in &rows {
        text.push_str(id);
        text.push('\t');
        text.push_str(label);
        for x in v {
            text.push('\t');
            text.push_str(&x.to_string());
        }
        text.push('\n');
    }
    out.write_all(text.as_bytes())
        .map_err(io_err(Path::new("<output>")))?;
    Ok(rows.len())
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckSummary {
    pub objective: Objective,
    pub instances: usize,
    pub max_error: f64,
    pub worst_seed: u64,
}

/// Central-difference check of each objective on `instances` random small
/// models, seeds `seed..seed + instances`. Fails when any error reaches
/// `tolerance`.
pub fn gradcheck(
    objectives: &[Objective],
    instances: usize,
    seed: u64,
    epsilon: f64,
    tolerance: f64,
) -> Result<Vec<GradCheckSummary>, CliError> {
    if instances == 0 || epsilon.is_nan() || epsilon <= 0.0 {
        return Err(CliError::Usage(
            "need at least one instance and a positive epsilon".into(),
        ));
    }
    let mut summaries = Vec::new();
    for &objective in objectives {
        let mut summary = GradCheckSummary {
            objective,
            instances,
            max_error: 0.0,
            worst_seed: seed,
        };
        for s in (0..instances as u64).map(|i| seed.wrapping_add(i)) {
            let (config, case) = random_instance(objective, s);
            let err = grad_check(&config, &case, epsilon)?;
            if err > summary.max_error {
                summary.max_error = err;
                summary.worst_seed = s;
            }
        }
        summaries.push(summary);
    }
    if let Some(bad) = summaries
        .iter()
        .find(|s| s.max_error.is_nan() || s.max_error >= tolerance)
    {
        for s in &summaries {
            log::error!(
                "{}: max relative error {:e} (seed {})",
                s.objective,
                s.max_error,
                s.worst_seed
            );
        }
        return Err(CliError::GradCheck {
            objective: bad.objective,
            error: bad.max_error,
            tolerance,
        });
    }
    Ok(summaries)
}

/// Writes `train.jsonl`, `test.jsonl` and the spec itself to `dir`.
pub fn synth(spec: &SynthSpec, dir: &Path) -> Result<(usize, usize), CliError> {
    let corpora = generate(spec)?;
    create_dir(dir)?;
    write_raw_corpus(&corpora.train, dir.join("train.jsonl"))?;
    write_raw_corpus(&corpora.test, dir.join("test.jsonl"))?;
    write_json(&dir.join("spec.json"), spec)?;
    Ok((corpora.train.len(), corpora.test.len()))
}
