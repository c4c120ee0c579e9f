//! Layered run configuration.
//!
//! A TOML file supplies the base values; its tables are the key prefixes, so
//! `[training] epochs = 5` is the key `training.epochs`. The environment
//! overrides the file for the remote endpoint and timeout, and every key can
//! be overridden again by a `--section.key value` flag.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use relx::{MarkerStrategy, TrainingConfig};

use crate::error::CliError;

pub const ENV_ENDPOINT: &str = "RELX_ENDPOINT";
pub const ENV_TIMEOUT: &str = "RELX_TIMEOUT_SECS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Native,
    Remote,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

/// Every settable key. All fields are optional so the same struct serves as
/// file contents, environment layer and command-line layer.
#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    /// Seed for every random choice in the run
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
    /// Concurrent ablation cells
    #[arg(long, value_name = "N")]
    pub jobs: Option<usize>,
    #[command(flatten)]
    #[serde(default)]
    pub corpus: CorpusSection,
    #[command(flatten)]
    #[serde(default)]
    pub load: LoadSection,
    #[command(flatten)]
    #[serde(default)]
    pub preprocess: PreprocessSection,
    #[command(flatten)]
    #[serde(default)]
    pub backend: BackendSection,
    #[command(flatten)]
    #[serde(default)]
    pub training: TrainingSection,
    #[command(flatten)]
    #[serde(default)]
    pub output: OutputSection,
    #[command(flatten)]
    #[serde(default)]
    pub eval: EvalSection,
    #[command(flatten)]
    #[serde(default)]
    pub ablate: AblateSection,
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSection {
    #[arg(long = "corpus.train", id = "corpus.train", value_name = "FILE")]
    pub train: Option<PathBuf>,
    #[arg(long = "corpus.dev", id = "corpus.dev", value_name = "FILE")]
    pub dev: Option<PathBuf>,
    #[arg(long = "corpus.test", id = "corpus.test", value_name = "FILE")]
    pub test: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadSection {
    /// Warn about invalid corpus records instead of failing
    #[arg(long = "load.skip_invalid", id = "load.skip_invalid", value_name = "BOOL")]
    pub skip_invalid: Option<bool>,
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreprocessSection {
    #[arg(long = "preprocess.strategy", id = "preprocess.strategy", value_name = "STRATEGY")]
    pub strategy: Option<MarkerStrategy>,
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendSection {
    #[arg(long = "backend.kind", id = "backend.kind", value_name = "KIND")]
    pub kind: Option<BackendKind>,
    #[arg(long = "backend.endpoint", id = "backend.endpoint", value_name = "URL")]
    pub endpoint: Option<String>,
    #[arg(long = "backend.timeout_secs", id = "backend.timeout_secs", value_name = "SECS")]
    pub timeout_secs: Option<f64>,
    /// Texts per request to the remote server
    #[arg(long = "backend.batch_size", id = "backend.batch_size", value_name = "N")]
    pub batch_size: Option<usize>,
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    #[arg(long = "training.learning_rate", id = "training.learning_rate", value_name = "LR")]
    pub learning_rate: Option<f64>,
    #[arg(long = "training.epochs", id = "training.epochs", value_name = "N")]
    pub epochs: Option<usize>,
    #[arg(long = "training.batch_size", id = "training.batch_size", value_name = "N")]
    pub batch_size: Option<usize>,
    #[arg(long = "training.weight_decay", id = "training.weight_decay", value_name = "L2")]
    pub weight_decay: Option<f64>,
    #[arg(long = "training.optimizer", id = "training.optimizer", value_name = "NAME")]
    pub optimizer: Option<String>,
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[arg(long = "output.dir", id = "output.dir", value_name = "DIR")]
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    /// Split that predict, postprocess and eval work on
    #[arg(long = "eval.split", id = "eval.split", value_name = "SPLIT")]
    pub split: Option<Split>,
    #[arg(
        long = "eval.exclude_no_relation",
        id = "eval.exclude_no_relation",
        value_name = "BOOL"
    )]
    pub exclude_no_relation: Option<bool>,
    /// Also write line-delimited JSON reports
    #[arg(long = "eval.jsonl", id = "eval.jsonl", value_name = "BOOL")]
    pub jsonl: Option<bool>,
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblateSection {
    #[arg(
        long = "ablate.strategies",
        id = "ablate.strategies",
        value_name = "LIST",
        value_delimiter = ','
    )]
    pub strategies: Option<Vec<MarkerStrategy>>,
    /// Train share when no test corpus is configured
    #[arg(long = "ablate.train_fraction", id = "ablate.train_fraction", value_name = "F")]
    pub train_fraction: Option<f64>,
}

macro_rules! overlay {
    ($base:expr, $top:expr; $($field:ident).+) => {
        if $top.$($field).+.is_some() {
            $base.$($field).+ = $top.$($field).+;
        }
    };
}

impl Settings {
    /// Values from `top` replace those in `self`.
    pub fn overlay(mut self, top: Settings) -> Settings {
        overlay!(self, top; seed);
        overlay!(self, top; jobs);
        overlay!(self, top; corpus.train);
        overlay!(self, top; corpus.dev);
        overlay!(self, top; corpus.test);
        overlay!(self, top; load.skip_invalid);
        overlay!(self, top; preprocess.strategy);
        overlay!(self, top; backend.kind);
        overlay!(self, top; backend.endpoint);
        overlay!(self, top; backend.timeout_secs);
        overlay!(self, top; backend.batch_size);
        overlay!(self, top; training.learning_rate);
        overlay!(self, top; training.epochs);
        overlay!(self, top; training.batch_size);
        overlay!(self, top; training.weight_decay);
        overlay!(self, top; training.optimizer);
        overlay!(self, top; output.dir);
        overlay!(self, top; eval.split);
        overlay!(self, top; eval.exclude_no_relation);
        overlay!(self, top; eval.jsonl);
        overlay!(self, top; ablate.strategies);
        overlay!(self, top; ablate.train_fraction);
        self
    }

    /// Parse a config file. Relative corpus paths are taken relative to the
    /// file's directory.
    pub fn from_file(path: &Path) -> Result<Settings, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut settings: Settings = toml::from_str(&text)
            .map_err(|e| CliError::Validation(format!("{}: {}", path.display(), e.to_string().trim_end())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [
            &mut settings.corpus.train,
            &mut settings.corpus.dev,
            &mut settings.corpus.test,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(settings)
    }

    /// The environment layer, read through `var` so tests need not touch the
    /// process environment.
    pub fn from_env(var: impl Fn(&str) -> Option<String>) -> Result<Settings, CliError> {
        let mut s = Settings::default();
        s.backend.endpoint = var(ENV_ENDPOINT);
        if let Some(t) = var(ENV_TIMEOUT) {
            let secs = t
                .parse()
                .map_err(|_| CliError::Validation(format!("{ENV_TIMEOUT}: not a number: {t:?}")))?;
            s.backend.timeout_secs = Some(secs);
        }
        Ok(s)
    }
}

/// Fully resolved settings for one run. Serialized as TOML it is itself a
/// valid config file.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub seed: u64,
    pub jobs: usize,
    pub corpus: Corpora,
    pub load: LoadConfig,
    pub preprocess: PreprocessConfig,
    pub backend: BackendConfig,
    pub training: TrainingValues,
    pub output: OutputConfig,
    pub eval: EvalConfig,
    pub ablate: AblateConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Corpora {
    pub train: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub test: Option<PathBuf>,
}

impl Corpora {
    pub fn get(&self, split: Split) -> Option<&Path> {
        match split {
            Split::Train => self.train.as_deref(),
            Split::Dev => self.dev.as_deref(),
            Split::Test => self.test.as_deref(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LoadConfig {
    pub skip_invalid: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PreprocessConfig {
    pub strategy: MarkerStrategy,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub endpoint: Option<String>,
    pub timeout_secs: f64,
    pub batch_size: usize,
}

impl BackendConfig {
    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainingValues {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub optimizer: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalConfig {
    pub split: Split,
    pub exclude_no_relation: bool,
    pub jsonl: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblateConfig {
    pub strategies: Vec<MarkerStrategy>,
    pub train_fraction: f64,
}

impl RunConfig {
    /// Fill defaults and check values. Training defaults depend on the
    /// backend: the native baseline has its own, the remote server uses the
    /// fine-tuning values.
    pub fn resolve(s: Settings) -> Result<RunConfig, CliError> {
        let kind = s.backend.kind.unwrap_or(BackendKind::Native);
        let defaults = match kind {
            BackendKind::Native => TrainingConfig::baseline(),
            BackendKind::Remote => TrainingConfig::fine_tune(),
        };
        let seed = s.seed.unwrap_or(defaults.seed);
        let training = TrainingValues {
            learning_rate: s.training.learning_rate.unwrap_or(defaults.learning_rate),
            epochs: s.training.epochs.unwrap_or(defaults.epochs),
            batch_size: s.training.batch_size.unwrap_or(defaults.batch_size),
            weight_decay: s.training.weight_decay.unwrap_or(defaults.weight_decay),
            optimizer: s.training.optimizer.unwrap_or(defaults.optimizer),
        };
        let cfg = RunConfig {
            seed,
            jobs: s.jobs.unwrap_or(1),
            corpus: Corpora {
                train: s.corpus.train,
                dev: s.corpus.dev,
                test: s.corpus.test,
            },
            load: LoadConfig {
                skip_invalid: s.load.skip_invalid.unwrap_or(false),
            },
            preprocess: PreprocessConfig {
                strategy: s.preprocess.strategy.unwrap_or(MarkerStrategy::PreEntity),
            },
            backend: BackendConfig {
                kind,
                endpoint: s.backend.endpoint,
                timeout_secs: s.backend.timeout_secs.unwrap_or(60.0),
                batch_size: s.backend.batch_size.unwrap_or(64),
            },
            training,
            output: OutputConfig {
                dir: s.output.dir.unwrap_or_else(|| PathBuf::from("out")),
            },
            eval: EvalConfig {
                split: s.eval.split.unwrap_or(Split::Test),
                exclude_no_relation: s.eval.exclude_no_relation.unwrap_or(false),
                jsonl: s.eval.jsonl.unwrap_or(false),
            },
            ablate: AblateConfig {
                strategies: s.ablate.strategies.unwrap_or_else(|| MarkerStrategy::ALL.to_vec()),
                train_fraction: s.ablate.train_fraction.unwrap_or(0.8),
            },
        };

        fn bad<T>(msg: String) -> Result<T, CliError> {
            Err(CliError::Validation(msg))
        }
        if let Err(e) = cfg.training_config().validate() {
            return bad(format!("training: {e}"));
        }
        if kind == BackendKind::Native && cfg.training.optimizer != "sgd" {
            return bad(format!(
                "training.optimizer: the native backend only supports \"sgd\", not {:?}",
                cfg.training.optimizer
            ));
        }
        if kind == BackendKind::Remote && cfg.backend.endpoint.is_none() {
            return bad(format!(
                "backend.endpoint (or {ENV_ENDPOINT}) is required for the remote backend"
            ));
        }
        if !(cfg.backend.timeout_secs > 0.0 && cfg.backend.timeout_secs.is_finite()) {
            return bad("backend.timeout_secs must be positive".into());
        }
        if cfg.backend.batch_size == 0 {
            return bad("backend.batch_size must be at least 1".into());
        }
        if cfg.jobs == 0 {
            return bad("jobs must be at least 1".into());
        }
        if cfg.ablate.strategies.is_empty() {
            return bad("ablate.strategies is empty".into());
        }
        if !(cfg.ablate.train_fraction > 0.0 && cfg.ablate.train_fraction < 1.0) {
            return bad("ablate.train_fraction must lie strictly between 0 and 1".into());
        }
        Ok(cfg)
    }

    pub fn training_config(&self) -> TrainingConfig {
        TrainingConfig {
            learning_rate: self.training.learning_rate,
            epochs: self.training.epochs,
            batch_size: self.training.batch_size,
            weight_decay: self.training.weight_decay,
            optimizer: self.training.optimizer.clone(),
            seed: self.seed,
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config is representable in TOML")
    }
}
