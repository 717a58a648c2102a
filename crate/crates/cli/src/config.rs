//! Run configuration: a TOML file plus dotted `--set path=value` overrides.
//!
//! Precedence is flags over file over built-in defaults.

use std::path::{Path, PathBuf};

use cyclexplain::losses::SsimParams;
use cyclexplain::models::{ClassifierSpec, DiscriminatorSpec, EncoderSpec};
use cyclexplain::relevance::Gain;
use cyclexplain::training::{ClassifierTrainConfig, TrainConfig};
use cyclexplain_stats::describe::derive_seed;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

/// A configuration problem, reported with the offending field path.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

impl ConfigError {
    fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self { path: path.into(), message: message.into() }
    }
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.path.is_empty() {
            write!(f, "invalid configuration: {}", self.message)
        } else {
            write!(f, "invalid configuration at `{}`: {}", self.path, self.message)
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    #[default]
    Synthetic,
    Manifest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    /// Required for the manifest source.
    pub manifest: Option<PathBuf>,
    /// Number of synthetic images.
    pub count: usize,
    pub image_size: usize,
    /// Used only when the manifest carries no split column.
    pub train_fraction: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { source: DataSource::Synthetic, manifest: None, count: 400, image_size: 64, train_fraction: 0.7 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    pub n_boot: usize,
    /// Held-out images summarized in the training log.
    pub probe_size: usize,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self { n_boot: 10_000, probe_size: 32 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainConfig {
    pub gain: Gain,
    /// Defaults to `<output_dir>/explainer`.
    pub bundle: Option<PathBuf>,
    /// Defaults to `<output_dir>/explanations`.
    pub out_dir: Option<PathBuf>,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        Self { gain: Gain::Auto, bundle: None, out_dir: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Every random stream of a run derives from this value.
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Defaults to `<output_dir>/classifier`.
    pub classifier_checkpoint: Option<PathBuf>,
    pub data: DataConfig,
    pub classifier: ClassifierSpec,
    pub classifier_training: ClassifierTrainConfig,
    pub generator: EncoderSpec,
    pub discriminator: DiscriminatorSpec,
    pub training: TrainConfig,
    pub evaluation: EvaluationConfig,
    pub explain: ExplainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let mut c = Self {
            seed: 0,
            output_dir: PathBuf::from("run"),
            classifier_checkpoint: None,
            data: DataConfig::default(),
            classifier: ClassifierSpec::default(),
            classifier_training: ClassifierTrainConfig::default(),
            generator: EncoderSpec::default(),
            discriminator: DiscriminatorSpec::default(),
            training: TrainConfig::default(),
            evaluation: EvaluationConfig::default(),
            explain: ExplainConfig::default(),
        };
        c.derive_seeds();
        c
    }
}

/// Streams handed out by [`RunConfig::stream_seed`].
#[derive(Debug, Clone, Copy)]
pub enum Stream {
    Data = 0,
    Split = 1,
    ClassifierInit = 2,
    ClassifierTraining = 3,
    BundleInit = 4,
    ExplainerTraining = 5,
    Evaluation = 6,
}

const DERIVED_SEEDS: [&str; 2] = ["classifier_training.seed", "training.seed"];

impl RunConfig {
    pub fn stream_seed(&self, s: Stream) -> u64 {
        derive_seed(self.seed, s as u64)
    }

    fn derive_seeds(&mut self) {
        self.classifier_training.seed = self.stream_seed(Stream::ClassifierTraining);
        self.training.seed = self.stream_seed(Stream::ExplainerTraining);
    }

    /// Defaults, then `file`, then each `path=value` override in order.
    pub fn load(file: Option<&Path>, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut table = match file {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| ConfigError::new("", format!("cannot read {}: {e}", p.display())))?;
                text.parse::<Table>()
                    .map_err(|e| ConfigError::new("", format!("{}: {}", p.display(), e.message())))?
            }
            None => Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        Self::from_table(table)
    }

    pub fn from_table(table: Table) -> Result<Self, ConfigError> {
        for path in DERIVED_SEEDS {
            if lookup(&table, path).is_some() {
                return Err(ConfigError::new(path, "derived from the top-level `seed`; set that instead"));
            }
        }
        let mut cfg: RunConfig = serde_path_to_error::deserialize(Value::Table(table)).map_err(|e| {
            let path = e.path().to_string();
            ConfigError::new(if path == "." { String::new() } else { path }, e.into_inner().to_string())
        })?;
        cfg.derive_seeds();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let at = |path: &'static str| move |e: cyclexplain::CoreError| ConfigError::new(path, e.to_string());
        let d = &self.data;
        if d.source == DataSource::Manifest && d.manifest.is_none() {
            return Err(ConfigError::new("data.manifest", "required when data.source = \"manifest\""));
        }
        if d.source == DataSource::Synthetic && d.count < 4 {
            return Err(ConfigError::new("data.count", format!("need at least 4 synthetic images, got {}", d.count)));
        }
        if d.image_size < 16 {
            return Err(ConfigError::new("data.image_size", format!("must be at least 16, got {}", d.image_size)));
        }
        if !(d.train_fraction > 0.0 && d.train_fraction < 1.0) {
            return Err(ConfigError::new("data.train_fraction", format!("must lie in (0, 1), got {}", d.train_fraction)));
        }
        self.classifier.feature_size(d.image_size).map_err(at("classifier"))?;
        self.classifier_training.validate().map_err(at("classifier_training"))?;
        self.generator.validate(d.image_size).map_err(at("generator"))?;
        self.discriminator.validate(d.image_size).map_err(at("discriminator"))?;
        self.training.validate().map_err(at("training"))?;
        check_ssim(&self.training.ssim, d.image_size)?;
        if self.evaluation.n_boot == 0 {
            return Err(ConfigError::new("evaluation.n_boot", "must be positive"));
        }
        if let Gain::Fixed(g) = self.explain.gain {
            if !(g > 0.0 && g.is_finite()) {
                return Err(ConfigError::new("explain.gain", format!("fixed gain must be positive, got {g}")));
            }
        }
        Ok(())
    }

    /// TOML text that loads back to `self`; derived seeds are left out.
    pub fn to_toml(&self) -> String {
        let mut plain = self.clone();
        plain.classifier_training.seed = 0;
        plain.training.seed = 0;
        let mut t = Table::try_from(&plain).expect("run configuration serializes");
        for path in DERIVED_SEEDS {
            let (section, key) = path.split_once('.').unwrap();
            if let Some(Value::Table(s)) = t.get_mut(section) {
                s.remove(key);
            }
        }
        toml::to_string(&t).expect("run configuration serializes")
    }

    /// Writes the resolved configuration as `<dir>/<command>.config.toml`.
    pub fn persist(&self, dir: &Path, command: &str) -> std::io::Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(format!("{command}.config.toml"));
        std::fs::write(&path, self.to_toml())?;
        Ok(path)
    }

    pub fn classifier_dir(&self) -> PathBuf {
        self.classifier_checkpoint.clone().unwrap_or_else(|| self.output_dir.join("classifier"))
    }

    pub fn bundle_dir(&self) -> PathBuf {
        self.explain.bundle.clone().unwrap_or_else(|| self.output_dir.join("explainer"))
    }

    pub fn explanations_dir(&self) -> PathBuf {
        self.explain.out_dir.clone().unwrap_or_else(|| self.output_dir.join("explanations"))
    }
}

fn check_ssim(p: &SsimParams, size: usize) -> Result<(), ConfigError> {
    p.check_size(size).map_err(|e| ConfigError::new("training.ssim", e.to_string()))
}

fn lookup<'a>(table: &'a Table, path: &str) -> Option<&'a Value> {
    let mut parts = path.split('.');
    let mut cur = table.get(parts.next()?)?;
    for p in parts {
        cur = cur.as_table()?.get(p)?;
    }
    Some(cur)
}

/// Parses the right-hand side as a TOML value, falling back to a bare string.
fn parse_value(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

pub fn apply_override(table: &mut Table, spec: &str) -> Result<(), ConfigError> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| ConfigError::new("", format!("override {spec:?} is not of the form path=value")))?;
    let path = path.trim();
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(ConfigError::new(path, "empty segment in override path"));
    }
    let mut cur = table;
    for (i, k) in keys[..keys.len() - 1].iter().enumerate() {
        let entry = cur.entry(k.to_string()).or_insert_with(|| Value::Table(Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| ConfigError::new(keys[..=i].join("."), "is not a table"))?;
    }
    cur.insert(keys[keys.len() - 1].to_string(), parse_value(raw.trim()));
    Ok(())
}
