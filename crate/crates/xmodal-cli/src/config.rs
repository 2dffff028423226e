//! Run configuration: the core training keys plus CLI-level sections for
//! corpus generation, evaluation, and analysis.
//!
//! One flat `key = value` file covers everything; section membership is
//! encoded in the key prefix (`corpus.`, `eval.`, `analyze.`). Unprefixed
//! keys belong to the training configuration. Unknown keys are errors, so
//! typos in `--set` fail fast instead of being ignored.

use std::fmt::Write as FmtWrite;
use std::path::Path;

use xmodal_core::analyzer::Granularity;
use xmodal_core::dataio::{ForgeryCategory, Split};
use xmodal_core::error::{Error, Result};
use xmodal_core::evaluator::ProtocolKind;
use xmodal_core::trainer::TrainConfig;

/// Synthetic-corpus settings used by `preprocess` (and by later stages to
/// re-materialize samples from the manifest).
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSettings {
    /// Real clips in the leave-one-out corpus.
    pub n_real: usize,
    /// Clips per fake category in the leave-one-out corpus.
    pub n_per_fake: usize,
    /// Video frames per sample.
    pub frames: usize,
    /// Corpus/teacher seed (independent of the model seed).
    pub seed: u64,
    /// Real clips in the cross-dataset test corpus.
    pub cross_n_real: usize,
    /// Clips per fake category in the cross-dataset test corpus.
    pub cross_n_per_fake: usize,
}

impl Default for CorpusSettings {
    fn default() -> Self {
        Self {
            n_real: 40,
            n_per_fake: 8,
            frames: 4,
            seed: 7,
            cross_n_real: 6,
            cross_n_per_fake: 2,
        }
    }
}

/// Which checkpoint a read-only stage loads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckpointChoice {
    Best,
    Last,
    /// `best.ckpt` when present, else `last.ckpt`.
    BestOrLast,
}

impl CheckpointChoice {
    pub fn as_str(&self) -> &'static str {
        match self {
            CheckpointChoice::Best => "best",
            CheckpointChoice::Last => "last",
            CheckpointChoice::BestOrLast => "best_or_last",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "best" => Some(CheckpointChoice::Best),
            "last" => Some(CheckpointChoice::Last),
            "best_or_last" => Some(CheckpointChoice::BestOrLast),
            _ => None,
        }
    }
}

/// `evaluate` settings.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSettings {
    pub protocol: ProtocolKind,
    /// Holdout category for the leave-one-out protocol, or `None` for all
    /// five tests.
    pub holdout: Option<ForgeryCategory>,
    pub checkpoint: CheckpointChoice,
    /// Second manifest for the cross-dataset protocol; empty means
    /// `<run-dir>/data/cross_manifest.tsv`.
    pub cross_manifest: String,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            protocol: ProtocolKind::LeaveOneOut,
            holdout: None,
            checkpoint: CheckpointChoice::BestOrLast,
            cross_manifest: String::new(),
        }
    }
}

/// `analyze` settings.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalyzeSettings {
    pub granularity: Granularity,
    pub bins: usize,
    /// Which manifest split to analyze; `None` means all samples.
    pub split: Option<Split>,
    pub checkpoint: CheckpointChoice,
}

impl Default for AnalyzeSettings {
    fn default() -> Self {
        Self {
            granularity: Granularity::PerVideoMean,
            bins: 50,
            split: Some(Split::Test),
            checkpoint: CheckpointChoice::BestOrLast,
        }
    }
}

/// Full resolved configuration for one CLI run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CliConfig {
    pub train: TrainConfig,
    pub corpus: CorpusSettings,
    pub eval: EvalSettings,
    pub analyze: AnalyzeSettings,
}

impl CliConfig {
    /// Apply one `key=value` override. Prefixed keys go to the CLI
    /// sections, everything else to the training config.
    pub fn apply_override(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |what: &str| Error::Config(format!("bad value {value:?} for `{key}`: {what}"));
        match key {
            "corpus.n_real" => {
                self.corpus.n_real = value.parse().map_err(|_| bad("expected integer"))?;
            }
            "corpus.n_per_fake" => {
                self.corpus.n_per_fake = value.parse().map_err(|_| bad("expected integer"))?;
            }
            "corpus.frames" => {
                self.corpus.frames = value.parse().map_err(|_| bad("expected integer"))?;
            }
            "corpus.seed" => {
                self.corpus.seed = value.parse().map_err(|_| bad("expected integer"))?;
            }
            "corpus.cross_n_real" => {
                self.corpus.cross_n_real = value.parse().map_err(|_| bad("expected integer"))?;
            }
            "corpus.cross_n_per_fake" => {
                self.corpus.cross_n_per_fake =
                    value.parse().map_err(|_| bad("expected integer"))?;
            }
            "eval.protocol" => {
                self.eval.protocol = ProtocolKind::parse(value)
                    .ok_or_else(|| bad("expected `leave_one_out` or `cross_dataset`"))?;
            }
            "eval.holdout" => {
                self.eval.holdout = if value == "all" {
                    None
                } else {
                    Some(
                        ForgeryCategory::parse(value)
                            .ok_or_else(|| bad("expected a forgery category or `all`"))?,
                    )
                };
            }
            "eval.checkpoint" => {
                self.eval.checkpoint = CheckpointChoice::parse(value)
                    .ok_or_else(|| bad("expected `best`, `last`, or `best_or_last`"))?;
            }
            "eval.cross_manifest" => self.eval.cross_manifest = value.to_string(),
            "analyze.granularity" => {
                self.analyze.granularity = Granularity::parse(value)
                    .ok_or_else(|| bad("expected `per_frame` or `per_video_mean`"))?;
            }
            "analyze.bins" => {
                self.analyze.bins = value.parse().map_err(|_| bad("expected integer"))?;
            }
            "analyze.split" => {
                self.analyze.split = if value == "all" {
                    None
                } else {
                    Some(Split::parse(value).ok_or_else(|| {
                        bad("expected `train`, `val`, `test`, or `all`")
                    })?)
                };
            }
            "analyze.checkpoint" => {
                self.analyze.checkpoint = CheckpointChoice::parse(value)
                    .ok_or_else(|| bad("expected `best`, `last`, or `best_or_last`"))?;
            }
            _ => self.train.apply_override(key, value)?,
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.corpus.frames < 2 {
            return Err(Error::Config("corpus.frames must be at least 2".into()));
        }
        if self.analyze.bins == 0 {
            return Err(Error::Config("analyze.bins must be at least 1".into()));
        }
        Ok(())
    }

    /// Serialize every key; the output parses back to an equal config.
    pub fn to_kv_string(&self) -> String {
        let mut out = self.train.to_kv_string();
        let _ = write!(
            out,
            "corpus.n_real = {}\n\
             corpus.n_per_fake = {}\n\
             corpus.frames = {}\n\
             corpus.seed = {}\n\
             corpus.cross_n_real = {}\n\
             corpus.cross_n_per_fake = {}\n\
             eval.protocol = {}\n\
             eval.holdout = {}\n\
             eval.checkpoint = {}\n\
             eval.cross_manifest = {}\n\
             analyze.granularity = {}\n\
             analyze.bins = {}\n\
             analyze.split = {}\n\
             analyze.checkpoint = {}\n",
            self.corpus.n_real,
            self.corpus.n_per_fake,
            self.corpus.frames,
            self.corpus.seed,
            self.corpus.cross_n_real,
            self.corpus.cross_n_per_fake,
            self.eval.protocol.as_str(),
            self.eval.holdout.map_or("all", |c| c.as_str()),
            self.eval.checkpoint.as_str(),
            self.eval.cross_manifest,
            self.analyze.granularity.as_str(),
            self.analyze.bins,
            self.analyze.split.map_or("all", |s| s.as_str()),
            self.analyze.checkpoint.as_str(),
        );
        out
    }

    pub fn parse_kv_str(text: &str, origin: &Path) -> Result<Self> {
        let mut cfg = CliConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::ConfigParse {
                path: origin.to_path_buf(),
                line: lineno + 1,
                msg: "expected `key = value`".into(),
            })?;
            cfg.apply_override(key.trim(), value.trim())
                .map_err(|e| Error::ConfigParse {
                    path: origin.to_path_buf(),
                    line: lineno + 1,
                    msg: e.to_string(),
                })?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse_kv_str(&text, path)
    }
}
