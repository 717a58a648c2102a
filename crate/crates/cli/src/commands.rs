use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use cyclexplain::data::{
    generate_synthetic_dataset, load_manifest, samples_in, stratified_split, LabeledSample, Split,
};
use cyclexplain::evaluation::evaluate_transfer;
use cyclexplain::image::ImageTensor;
use cyclexplain::models::{Classifier, ExplainerBundle};
use cyclexplain::relevance::{explain, export_map, ProbabilityRecord};
use cyclexplain::training::{train_classifier, train_explainer};
use cyclexplain_stats::study::fixture::{synthetic_responses, StudyShape};
use cyclexplain_stats::study::{make_questionnaire_plan, study_report, ResponseTable};
use serde::Serialize;

use crate::config::{ConfigError, DataSource, RunConfig, Stream};

pub const CLASSIFIER_METRICS: &str = "classifier_metrics.json";
pub const TRAIN_LOG: &str = "train_log.jsonl";
pub const TRAIN_SUMMARY: &str = "train_summary.json";
pub const TRANSFER_REPORT: &str = "transfer_report.json";
pub const EXPLAIN_REPORT: &str = "explain_report.json";
pub const STUDY_REPORT: &str = "study_report.json";
pub const STUDY_SUMMARY: &str = "study_summary.txt";

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn persist(cfg: &RunConfig, dir: &Path, command: &str) -> Result<()> {
    cfg.persist(dir, command).with_context(|| format!("writing resolved configuration into {}", dir.display()))?;
    Ok(())
}

/// Samples of the configured dataset with a train/test split assigned.
pub fn load_dataset(cfg: &RunConfig) -> Result<Vec<LabeledSample>> {
    let d = &cfg.data;
    let mut samples = match d.source {
        DataSource::Synthetic => generate_synthetic_dataset(d.count, cfg.stream_seed(Stream::Data), d.image_size)?.samples,
        DataSource::Manifest => {
            let path = d.manifest.as_ref().expect("validated");
            load_manifest(path, Some(d.image_size))?.0
        }
    };
    if samples.is_empty() {
        bail!("dataset is empty");
    }
    if samples.iter().all(|s| s.split.is_none()) {
        stratified_split(&mut samples, d.train_fraction, cfg.stream_seed(Stream::Split))?;
    }
    Ok(samples)
}

fn split_images(samples: &[LabeledSample], split: Split) -> Vec<ImageTensor> {
    samples_in(samples, split).into_iter().map(|s| s.image.clone()).collect()
}

pub fn train_classifier_cmd(cfg: &RunConfig) -> Result<()> {
    let out = &cfg.output_dir;
    persist(cfg, out, "train-classifier")?;
    let samples = load_dataset(cfg)?;
    let classifier = Classifier::new(&cfg.classifier, cfg.data.image_size, cfg.stream_seed(Stream::ClassifierInit))?;
    log::info!("training classifier ({} parameters)", classifier.params().num_params());
    let result = train_classifier(&classifier, &samples, &cfg.classifier_training)?;
    log::info!("{} epochs, converged: {}", result.epoch_losses.len(), result.converged);
    classifier.save(&cfg.classifier_dir())?;
    write_json(&out.join(CLASSIFIER_METRICS), &result)?;
    Ok(())
}

#[derive(Serialize)]
struct TrainSummary {
    steps: usize,
    epochs: usize,
    converged: bool,
    epoch_losses: Vec<f64>,
}

pub fn train_explainer_cmd(cfg: &RunConfig) -> Result<()> {
    let out = &cfg.output_dir;
    let cdir = cfg.classifier_dir();
    if !cdir.is_dir() {
        bail!("classifier checkpoint {} does not exist; run train-classifier first", cdir.display());
    }
    let classifier = Classifier::load(&cdir).with_context(|| format!("loading classifier from {}", cdir.display()))?;
    if classifier.input_size() != cfg.data.image_size {
        return Err(ConfigError {
            path: "data.image_size".into(),
            message: format!("{} but the classifier expects {}", cfg.data.image_size, classifier.input_size()),
        }
        .into());
    }
    persist(cfg, out, "train-explainer")?;
    let samples = load_dataset(cfg)?;
    let train = split_images(&samples, Split::Train);
    let test = split_images(&samples, Split::Test);
    let probe = &test[..cfg.evaluation.probe_size.min(test.len())];
    let mut bundle =
        ExplainerBundle::new(classifier, &cfg.generator, &cfg.discriminator, cfg.stream_seed(Stream::BundleInit))?;
    log::info!("training explainer on {} images", train.len());

    let log_path = out.join(TRAIN_LOG);
    let mut log_file = BufWriter::new(File::create(&log_path).with_context(|| format!("creating {}", log_path.display()))?);
    let log = train_explainer(&mut bundle, &train, probe, &cfg.training, |r| {
        let line = serde_json::to_string(r)?;
        writeln!(log_file, "{line}").and_then(|_| log_file.flush()).map_err(|e| cyclexplain::CoreError::io(&log_path, e))?;
        if let Some(p) = &r.probe {
            log::info!(
                "step {} epoch {}: p(x) {:.3}, p(G+(x)) {:.3}, p(G-(x)) {:.3}",
                r.step,
                r.epoch,
                p.mean_prob_original,
                p.mean_prob_plus,
                p.mean_prob_minus
            );
        }
        Ok(())
    })?;
    drop(log_file);
    bundle.save(&cfg.bundle_dir())?;
    write_json(
        &out.join(TRAIN_SUMMARY),
        &TrainSummary {
            steps: log.records.len(),
            epochs: log.epoch_losses.len(),
            converged: log.converged,
            epoch_losses: log.epoch_losses.clone(),
        },
    )?;
    let report = evaluate_transfer(&bundle, &test, cfg.evaluation.n_boot, cfg.stream_seed(Stream::Evaluation))?;
    write_json(&out.join(TRANSFER_REPORT), &report)?;
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct ExplainEntry {
    pub input: PathBuf,
    pub id: String,
    pub error: Option<String>,
    pub overlay: Option<PathBuf>,
    pub relevance: Option<PathBuf>,
    pub probabilities: Option<ProbabilityRecord>,
}

fn image_id(path: &Path) -> Option<String> {
    let stem = path.file_stem()?.to_str()?;
    let id: String = stem
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect();
    (!id.is_empty()).then_some(id)
}

/// Explains every input independently; failures are recorded and the batch
/// continues. Returns an error after writing the report if any input failed.
pub fn explain_cmd(cfg: &RunConfig, inputs: &[PathBuf]) -> Result<()> {
    if inputs.is_empty() {
        return Err(ConfigError { path: String::new(), message: "no input images given".into() }.into());
    }
    let bdir = cfg.bundle_dir();
    if !bdir.is_dir() {
        bail!("explainer bundle {} does not exist; run train-explainer first", bdir.display());
    }
    let bundle = ExplainerBundle::load(&bdir).with_context(|| format!("loading bundle from {}", bdir.display()))?;
    bundle.require_trained()?;
    let out = cfg.explanations_dir();
    persist(cfg, &out, "explain")?;
    let mut seen: HashMap<String, PathBuf> = HashMap::new();
    let mut entries = Vec::new();
    for input in inputs {
        let id = image_id(input).unwrap_or_default();
        let mut entry = ExplainEntry {
            input: input.clone(),
            id: id.clone(),
            error: None,
            overlay: None,
            relevance: None,
            probabilities: None,
        };
        let outcome = (|| -> Result<()> {
            if id.is_empty() {
                bail!("cannot derive an id from the file name");
            }
            if let Some(prev) = seen.get(&id) {
                bail!("id {id:?} collides with {}", prev.display());
            }
            seen.insert(id.clone(), input.clone());
            let img = ImageTensor::read(input)?;
            if img.size() != bundle.spec.input_size {
                bail!("image is {0}x{0}, the bundle expects {1}x{1}", img.size(), bundle.spec.input_size);
            }
            let map = explain(&bundle, &id, &img)?;
            let files = export_map(&map, &out, cfg.explain.gain)?;
            entry.overlay = Some(files.overlay);
            entry.relevance = Some(files.relevance);
            entry.probabilities = Some(ProbabilityRecord {
                source_id: id.clone(),
                prob_before: map.prob_before,
                prob_plus: map.prob_plus,
                prob_minus: map.prob_minus,
            });
            Ok(())
        })();
        if let Err(e) = outcome {
            log::error!("{}: {e:#}", input.display());
            entry.error = Some(format!("{e:#}"));
        }
        entries.push(entry);
    }
    write_json(&out.join(EXPLAIN_REPORT), &entries)?;
    let failed = entries.iter().filter(|e| e.error.is_some()).count();
    if failed > 0 {
        return Err(anyhow!("{failed} of {} inputs failed", entries.len()));
    }
    Ok(())
}

#[derive(Serialize)]
struct StudyArgs<'a> {
    responses: &'a Path,
}

pub fn study_report_cmd(responses: &Path, out: &Path) -> Result<()> {
    let table = ResponseTable::from_csv_path(responses).with_context(|| format!("reading {}", responses.display()))?;
    let report = study_report(&table)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    fs::write(out.join("study-report.config.toml"), toml::to_string(&StudyArgs { responses })?)?;
    write_json(&out.join(STUDY_REPORT), &report)?;
    fs::write(out.join(STUDY_SUMMARY), report.summary())?;
    Ok(())
}

#[derive(Serialize)]
struct PlanArgs<'a> {
    items: &'a [String],
    methods: &'a [String],
    variants: usize,
    seed: u64,
}

pub fn make_plan_cmd(items: usize, methods: &[String], variants: usize, seed: u64, out: &Path) -> Result<()> {
    let width = items.to_string().len();
    let item_ids: Vec<String> = (1..=items).map(|i| format!("item{i:0width$}")).collect();
    let plan = make_questionnaire_plan(&item_ids, methods, variants, seed)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let args = PlanArgs { items: &item_ids, methods, variants, seed };
    fs::write(out.with_extension("config.toml"), toml::to_string(&args)?)?;
    write_json(out, &plan)
}

pub fn gen_synthetic_cmd(count: usize, size: usize, seed: u64, out: &Path) -> Result<()> {
    let ds = generate_synthetic_dataset(count, seed, size)?;
    for sub in ["images", "masks"] {
        fs::create_dir_all(out.join(sub))?;
    }
    let manifest = out.join("manifest.csv");
    let mut w = BufWriter::new(File::create(&manifest)?);
    writeln!(w, "id,path,label,median_rating,split")?;
    for (s, m) in ds.samples.iter().zip(&ds.masks) {
        let rel = format!("images/{}.png", s.id);
        s.image.write_png(&out.join(&rel))?;
        let mask = ImageTensor::new(m.size, m.inside.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect())?;
        mask.write_png(&out.join(format!("masks/{}.png", s.id)))?;
        writeln!(w, "{},{},{},,", s.id, rel, s.label)?;
    }
    w.flush()?;
    Ok(())
}

pub fn gen_responses_cmd(seed: u64, noise: Option<f64>, out: &Path) -> Result<()> {
    let mut shape = StudyShape::default();
    if let Some(n) = noise {
        if !(n >= 0.0 && n.is_finite()) {
            return Err(ConfigError { path: "noise".into(), message: format!("must be nonnegative, got {n}") }.into());
        }
        shape.noise = n;
    }
    let table = synthetic_responses(&shape, seed);
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    table.write_csv(File::create(out).with_context(|| format!("creating {}", out.display()))?)?;
    Ok(())
}
