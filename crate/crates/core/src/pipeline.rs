//! Config-driven end-to-end run: load corpora, split, build the vocabulary,
//! initialise and fine-tune an encoder, evaluate, and write artifacts.

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{load_climatext, stratified_split, Corpus, CorpusError, SplitSpec};
use crate::encoder::{save_weights, ArchiveError, ModelConfig, ModelError, Parameters, Params, Pooling};
use crate::evalstat::{evaluate, majority_baseline, MetricKind, Metrics, StatError};
use crate::tokenizer::{build_vocab, NormalizationScheme, Tokenizer, TokenizerError, TokenizerSettings, Vocab};
use crate::trainer::{fine_tune_encoded, predict_labels, EncodedSet, EpochRecord, TrainConfig, TrainError};

pub const MODEL_FILE: &str = "model.bin";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const TOKENIZER_FILE: &str = "tokenizer.json";
pub const HISTORY_FILE: &str = "history.jsonl";
pub const METRICS_JSON: &str = "metrics.json";
pub const METRICS_MD: &str = "metrics.md";

/// Problems with the configuration itself. The CLI maps these to exit 2.
#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config key `{key}`: {message}")]
    Invalid { key: String, message: String },
}

impl ConfigError {
    fn invalid(key: &str, message: impl Into<String>) -> Self {
        ConfigError::Invalid {
            key: key.to_owned(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Stat(#[from] StatError),
    #[error(transparent)]
    Archive(#[from] ArchiveError),
    #[error("cannot write {path}: {source}")]
    Write {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusPaths {
    pub train: PathBuf,
    #[serde(default)]
    pub val: Option<PathBuf>,
    #[serde(default)]
    pub test: Option<PathBuf>,
    #[serde(default)]
    pub split: SplitFractions,
}

/// Partition proportions used when val and/or test files are not given.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub stratified: bool,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 0.8,
            val: 0.1,
            test: 0.1,
            stratified: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TokenizerConfig {
    pub scheme: NormalizationScheme,
    pub max_len: usize,
    /// Existing vocabulary file. When absent one is built from the training
    /// partition of each run.
    pub vocab: Option<PathBuf>,
    pub vocab_size: usize,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        let s = TokenizerSettings::default();
        Self {
            scheme: s.scheme,
            max_len: s.max_len,
            vocab: None,
            vocab_size: 8000,
        }
    }
}

impl TokenizerConfig {
    pub fn settings(&self) -> TokenizerSettings {
        TokenizerSettings {
            scheme: self.scheme,
            max_len: self.max_len,
        }
    }
}

/// Architecture minus the sizes that follow from the vocabulary and
/// sequence length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub num_heads: usize,
    pub ff_dim: usize,
    pub dropout_rate: f64,
    pub pooling: Pooling,
}

impl Default for ModelSpec {
    fn default() -> Self {
        let d = ModelConfig::desk(1, 1);
        Self {
            num_layers: d.num_layers,
            hidden_dim: d.hidden_dim,
            num_heads: d.num_heads,
            ff_dim: d.ff_dim,
            dropout_rate: d.dropout_rate,
            pooling: d.pooling,
        }
    }
}

impl ModelSpec {
    pub fn config(&self, vocab_size: usize, max_positions: usize) -> ModelConfig {
        ModelConfig {
            num_layers: self.num_layers,
            hidden_dim: self.hidden_dim,
            num_heads: self.num_heads,
            ff_dim: self.ff_dim,
            vocab_size,
            max_positions,
            dropout_rate: self.dropout_rate,
            pooling: self.pooling,
            num_classes: crate::encoder::NUM_CLASSES,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub n_runs: usize,
    /// Seed of a single pipeline run, and master seed of repeated runs.
    pub seed: u64,
    pub metric: MetricKind,
    pub alpha: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            n_runs: 25,
            seed: 0,
            metric: MetricKind::Accuracy,
            alpha: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub corpus: CorpusPaths,
    #[serde(default)]
    pub tokenizer: TokenizerConfig,
    #[serde(default)]
    pub model: ModelSpec,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_name() -> String {
    "model".to_owned()
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

impl PipelineConfig {
    /// Parses JSON. Errors name the offending key path, such as
    /// `corpus.train`.
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let key = e.path().to_string();
            let inner = e.into_inner().to_string();
            // serde reports a missing field against its parent
            let key = match missing_field(&inner) {
                Some(field) if key == "." => field.to_owned(),
                Some(field) => format!("{key}.{field}"),
                None => key,
            };
            ConfigError::Invalid { key, message: inner }
        })
    }

    /// Reads, parses and validates a config file. Relative paths inside it
    /// resolve against the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.corpus.train);
        self.corpus.val.as_mut().map(fix);
        self.corpus.test.as_mut().map(fix);
        self.tokenizer.vocab.as_mut().map(fix);
        fix(&mut self.output_dir);
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let must_exist = |key: &str, p: &Path| {
            if p.is_file() {
                Ok(())
            } else {
                Err(ConfigError::invalid(
                    key,
                    format!("file {} does not exist", p.display()),
                ))
            }
        };
        must_exist("corpus.train", &self.corpus.train)?;
        if let Some(p) = &self.corpus.val {
            must_exist("corpus.val", p)?;
        }
        if let Some(p) = &self.corpus.test {
            must_exist("corpus.test", p)?;
        }
        if let Some(p) = &self.tokenizer.vocab {
            must_exist("tokenizer.vocab", p)?;
        }
        if self.corpus.val.is_none() {
            let s = self.corpus.split;
            self.split_spec(0)
                .validate()
                .map_err(|e| ConfigError::invalid("corpus.split", e.to_string()))?;
            if s.val <= 0.0 {
                return Err(ConfigError::invalid(
                    "corpus.split.val",
                    "must be positive when no validation file is given",
                ));
            }
        }
        if self.tokenizer.max_len < 2 {
            return Err(ConfigError::invalid("tokenizer.max_len", "must be at least 2"));
        }
        if self.tokenizer.vocab.is_none() && self.tokenizer.vocab_size < 5 {
            return Err(ConfigError::invalid("tokenizer.vocab_size", "must be at least 5"));
        }
        self.model
            .config(5, self.tokenizer.max_len)
            .validate()
            .map_err(|e| ConfigError::invalid("model", e.to_string()))?;
        self.train
            .validate()
            .map_err(|e| ConfigError::invalid("train", e.to_string()))?;
        if self.eval.n_runs == 0 {
            return Err(ConfigError::invalid("eval.n_runs", "must be at least 1"));
        }
        if !(self.eval.alpha > 0.0 && self.eval.alpha < 1.0) {
            return Err(ConfigError::invalid("eval.alpha", "must lie in (0, 1)"));
        }
        Ok(())
    }

    /// Fractions for the seeded split. With an explicit test file only
    /// train and val are drawn, in the configured proportion.
    fn split_spec(&self, seed: u64) -> SplitSpec {
        let s = self.corpus.split;
        let mut spec = if self.corpus.test.is_some() {
            let tv = s.train + s.val;
            SplitSpec::new(1.0 - s.val / tv, s.val / tv, 0.0, seed)
        } else {
            SplitSpec::new(s.train, s.val, s.test, seed)
        };
        spec.stratified = s.stratified;
        spec
    }
}

fn missing_field(msg: &str) -> Option<&str> {
    let rest = msg.strip_prefix("missing field `")?;
    rest.split('`').next()
}

/// Corpora and vocabulary read once and shared across runs.
#[derive(Debug, Clone)]
pub struct LoadedData {
    pub train: Corpus,
    pub val: Option<Corpus>,
    pub test: Option<Corpus>,
    pub vocab: Option<Vocab>,
}

impl LoadedData {
    pub fn load(cfg: &PipelineConfig) -> Result<Self, PipelineError> {
        let opt = |p: &Option<PathBuf>| p.as_ref().map(load_climatext).transpose();
        Ok(Self {
            train: load_climatext(&cfg.corpus.train)?,
            val: opt(&cfg.corpus.val)?,
            test: opt(&cfg.corpus.test)?,
            vocab: cfg.tokenizer.vocab.as_ref().map(Vocab::load).transpose()?,
        })
    }
}

/// Train, validation and optional test partitions for one seed.
#[derive(Debug, Clone)]
pub struct Partitions {
    pub train: Corpus,
    pub val: Corpus,
    pub test: Option<Corpus>,
}

pub fn partition(cfg: &PipelineConfig, data: &LoadedData, seed: u64) -> Result<Partitions, PipelineError> {
    if let Some(val) = &data.val {
        return Ok(Partitions {
            train: data.train.clone(),
            val: val.clone(),
            test: data.test.clone(),
        });
    }
    let (train, val, test) = stratified_split(&data.train, &cfg.split_spec(seed))?;
    let test = match &data.test {
        Some(t) => Some(t.clone()),
        None if cfg.corpus.split.test > 0.0 => Some(test),
        None => None,
    };
    Ok(Partitions { train, val, test })
}

/// Everything one seeded run produces.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub seed: u64,
    pub model_config: ModelConfig,
    pub params: Parameters,
    pub tokenizer: Tokenizer,
    pub history: Vec<EpochRecord>,
    pub steps: usize,
    pub val: Evaluation,
    pub test: Option<Evaluation>,
}

impl RunOutcome {
    /// Held-out metrics used for run comparisons: test when present,
    /// otherwise validation.
    pub fn held_out(&self) -> &Evaluation {
        self.test.as_ref().unwrap_or(&self.val)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub corpus: String,
    pub size: usize,
    pub majority_baseline: f64,
    pub metrics: Metrics,
}

fn evaluate_on(
    params: &Parameters,
    config: &ModelConfig,
    tokenizer: &Tokenizer,
    corpus: &Corpus,
) -> Result<Evaluation, PipelineError> {
    let set = EncodedSet::from_corpus(corpus, tokenizer);
    let pred = predict_labels(params, config, &set.sequences)?;
    Ok(Evaluation {
        corpus: corpus.name().to_owned(),
        size: corpus.len(),
        majority_baseline: majority_baseline(corpus)?,
        metrics: evaluate(&pred, &set.labels)?,
    })
}

/// One seeded run. The seed drives the split, the initial weights, the
/// batch order and dropout.
pub fn run_once(cfg: &PipelineConfig, data: &LoadedData, seed: u64) -> Result<RunOutcome, PipelineError> {
    let parts = partition(cfg, data, seed)?;
    let settings = cfg.tokenizer.settings();
    let vocab = match &data.vocab {
        Some(v) => v.clone(),
        None => build_vocab(
            parts.train.iter().map(|r| r.text()),
            settings.scheme,
            cfg.tokenizer.vocab_size,
        ),
    };
    let tokenizer = Tokenizer::new(vocab, settings)?;
    let model_config = cfg.model.config(tokenizer.vocab().len(), settings.max_len);
    model_config.validate()?;

    let mut init_rng = ChaCha8Rng::seed_from_u64(seed);
    init_rng.set_stream(3);
    let init: Parameters = Params::init(&model_config, &mut init_rng);
    let tc = TrainConfig { seed, ..cfg.train };
    let train_set = EncodedSet::from_corpus(&parts.train, &tokenizer);
    let val_set = EncodedSet::from_corpus(&parts.val, &tokenizer);
    let result = fine_tune_encoded(init, &model_config, &train_set, &val_set, &tc, |_| {})?;

    let val = evaluate_on(&result.params, &model_config, &tokenizer, &parts.val)?;
    let test = parts
        .test
        .as_ref()
        .map(|t| evaluate_on(&result.params, &model_config, &tokenizer, t))
        .transpose()?;
    Ok(RunOutcome {
        seed,
        model_config,
        params: result.params,
        tokenizer,
        history: result.history,
        steps: result.steps,
        val,
        test,
    })
}

/// The `metrics.json` document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub name: String,
    pub seed: u64,
    pub steps: usize,
    pub history: Vec<EpochRecord>,
    pub validation: Evaluation,
    pub test: Option<Evaluation>,
}

impl MetricsReport {
    pub fn from_outcome(name: &str, o: &RunOutcome) -> Self {
        Self {
            name: name.to_owned(),
            seed: o.seed,
            steps: o.steps,
            history: o.history.clone(),
            validation: o.val.clone(),
            test: o.test.clone(),
        }
    }

    /// Accuracy next to the majority baseline, one line per evaluated
    /// partition, with a warning when the model does not beat it.
    pub fn summary_lines(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut line = |what: &str, e: &Evaluation| {
            out.push(format!(
                "{what} accuracy {:.4} (majority baseline {:.3})",
                e.metrics.accuracy, e.majority_baseline
            ));
            if e.metrics.accuracy <= e.majority_baseline {
                out.push(format!(
                    "warning: {what} accuracy does not exceed the majority baseline"
                ));
            }
        };
        line("validation", &self.validation);
        if let Some(t) = &self.test {
            line("test", t);
        }
        out
    }

    pub fn to_markdown(&self) -> String {
        let mut s = format!(
            "# {}\n\nseed {}, {} optimizer steps\n\n",
            self.name, self.seed, self.steps
        );
        s.push_str("| Split | Accuracy | Precision | F1 | Recall | Specificity | Majority baseline |\n");
        s.push_str("|---|---|---|---|---|---|---|\n");
        let mut row = |what: &str, e: &Evaluation| {
            let m = &e.metrics;
            s.push_str(&format!(
                "| {what} | {:.3} | {:.3} | {:.3} | {:.3} | {:.3} | {:.3} |\n",
                m.accuracy, m.precision, m.f1, m.recall, m.specificity, e.majority_baseline
            ));
        };
        row("validation", &self.validation);
        if let Some(t) = &self.test {
            row("test", t);
        }
        s.push('\n');
        for l in self.summary_lines() {
            s.push_str(&l);
            s.push('\n');
        }
        s
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    fs::write(path, bytes).map_err(|source| PipelineError::Write {
        path: path.display().to_string(),
        source,
    })
}

/// Writes model, vocabulary, tokenizer settings, history and metrics into
/// `dir`.
pub fn write_artifacts(dir: &Path, name: &str, o: &RunOutcome) -> Result<MetricsReport, PipelineError> {
    fs::create_dir_all(dir).map_err(|source| PipelineError::Write {
        path: dir.display().to_string(),
        source,
    })?;
    save_weights(&o.params, &o.model_config, dir.join(MODEL_FILE))?;
    o.tokenizer.vocab().save(dir.join(VOCAB_FILE))?;
    let settings = serde_json::to_string_pretty(&o.tokenizer.settings()).expect("settings serialize");
    write_file(&dir.join(TOKENIZER_FILE), settings.as_bytes())?;
    let mut history = Vec::new();
    for rec in &o.history {
        history.extend(serde_json::to_vec(rec).expect("history serializes"));
        history.push(b'\n');
    }
    write_file(&dir.join(HISTORY_FILE), &history)?;
    let report = MetricsReport::from_outcome(name, o);
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    write_file(&dir.join(METRICS_JSON), json.as_bytes())?;
    write_file(&dir.join(METRICS_MD), report.to_markdown().as_bytes())?;
    Ok(report)
}

/// Loads the data, performs one run with `cfg.eval.seed` and writes the
/// artifacts into `cfg.output_dir`.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<MetricsReport, PipelineError> {
    let data = LoadedData::load(cfg)?;
    let outcome = run_once(cfg, &data, cfg.eval.seed)?;
    write_artifacts(&cfg.output_dir, &cfg.name, &outcome)
}

/// Rebuilds the tokenizer saved next to a model archive.
pub fn load_tokenizer(dir: &Path) -> Result<Tokenizer, PipelineError> {
    let vocab = Vocab::load(dir.join(VOCAB_FILE))?;
    let path = dir.join(TOKENIZER_FILE);
    let settings = match fs::read_to_string(&path) {
        Ok(text) => serde_json::from_str(&text).map_err(|e| ConfigError::invalid(TOKENIZER_FILE, e.to_string()))?,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => TokenizerSettings::default(),
        Err(source) => {
            return Err(ConfigError::Io {
                path: path.display().to_string(),
                source,
            }
            .into())
        }
    };
    Ok(Tokenizer::new(vocab, settings)?)
}
