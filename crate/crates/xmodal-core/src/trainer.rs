//! Deterministic, resumable joint training of both branches.
//!
//! One optimizer step per batch: every sample's two-branch graph is built on
//! a shared tape, per-sample totals are averaged, and a single backward pass
//! feeds the adaptive-moment optimizer. Samples are processed individually
//! (no cross-sample padding), so every per-frame average runs over real
//! frames only regardless of sequence length.
//!
//! Determinism contract: batch order, initialization, and all randomness
//! derive from `(seed, epoch)` via counter-style reseeding — never from run
//! history — so an interrupted run resumed from its checkpoint replays the
//! remaining epochs exactly.

use std::collections::BTreeMap;
use std::io::Write as IoWrite;
use std::path::{Path, PathBuf};

use ndarray::{Array1, ArrayD, IxDyn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataio::{VideoSample, LABEL_FAKE};
use crate::encoders::Preset;
use crate::error::{Error, Result};
use crate::evaluator::auc;
use crate::losses::{ContraMode, LossWeights};
use crate::model::{CheckpointMeta, ModelConfig, TwoBranchModel};
use crate::nn::{Adam, Ctx};
use crate::teachers::{content_labels, Teacher};

/// Version of the run-config text format.
pub const CONFIG_FORMAT_VERSION: u32 = 1;

/// All training hyperparameters. `embed_dim = 0` means "preset default";
/// `hidden_dim = 0` means "same as embed_dim".
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub preset: Preset,
    pub embed_dim: usize,
    pub heads: usize,
    pub attn_layers_per_module: usize,
    pub hidden_dim: usize,
    pub lr0: f64,
    pub lr_decay_per_epoch: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub margin: f64,
    pub weights: LossWeights,
    pub contra_mode: ContraMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            preset: Preset::Tiny,
            embed_dim: 0,
            heads: 8,
            attn_layers_per_module: 1,
            hidden_dim: 0,
            lr0: 1e-4,
            lr_decay_per_epoch: 0.05,
            epochs: 10,
            batch_size: 8,
            seed: 42,
            margin: 1.0,
            weights: LossWeights::default(),
            contra_mode: ContraMode::PerFrame,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr0.is_finite() && self.lr0 > 0.0) {
            return Err(Error::Config(format!("lr0 must be positive, got {}", self.lr0)));
        }
        if !(0.0..1.0).contains(&self.lr_decay_per_epoch) {
            return Err(Error::Config(format!(
                "lr_decay_per_epoch must be in [0, 1), got {}",
                self.lr_decay_per_epoch
            )));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.margin.is_finite() && self.margin > 0.0) {
            return Err(Error::Config(format!(
                "margin must be positive, got {}",
                self.margin
            )));
        }
        self.weights
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        self.model_config()
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    /// Resolve the architecture this config describes.
    pub fn model_config(&self) -> ModelConfig {
        let mut mc = ModelConfig::for_preset(self.preset);
        if self.embed_dim != 0 {
            mc.encoder.embed_dim = self.embed_dim;
            mc.detector.embed_dim = self.embed_dim;
        }
        mc.detector.heads = self.heads;
        mc.detector.attn_layers_per_module = self.attn_layers_per_module;
        mc.detector.hidden_dim = if self.hidden_dim == 0 {
            mc.encoder.embed_dim
        } else {
            self.hidden_dim
        };
        mc
    }

    /// Apply one `key=value` override. Unknown keys are config errors.
    pub fn apply_override(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |what: &str| Error::Config(format!("bad value {value:?} for `{key}`: {what}"));
        match key {
            "format_version" => {
                let v: u32 = value.parse().map_err(|_| bad("expected integer"))?;
                if v != CONFIG_FORMAT_VERSION {
                    return Err(Error::Config(format!(
                        "unsupported config format_version {v} (expected {CONFIG_FORMAT_VERSION})"
                    )));
                }
            }
            "preset" => {
                self.preset =
                    Preset::parse(value).ok_or_else(|| bad("expected `tiny` or `paper`"))?;
            }
            "embed_dim" => self.embed_dim = value.parse().map_err(|_| bad("expected integer"))?,
            "heads" => self.heads = value.parse().map_err(|_| bad("expected integer"))?,
            "attn_layers_per_module" => {
                self.attn_layers_per_module = value.parse().map_err(|_| bad("expected integer"))?;
            }
            "hidden_dim" => self.hidden_dim = value.parse().map_err(|_| bad("expected integer"))?,
            "lr0" => self.lr0 = value.parse().map_err(|_| bad("expected number"))?,
            "lr_decay_per_epoch" => {
                self.lr_decay_per_epoch = value.parse().map_err(|_| bad("expected number"))?;
            }
            "epochs" => self.epochs = value.parse().map_err(|_| bad("expected integer"))?,
            "batch_size" => self.batch_size = value.parse().map_err(|_| bad("expected integer"))?,
            "seed" => self.seed = value.parse().map_err(|_| bad("expected integer"))?,
            "margin" => self.margin = value.parse().map_err(|_| bad("expected number"))?,
            "w_cls" => self.weights.w_cls = value.parse().map_err(|_| bad("expected number"))?,
            "w_dist" => self.weights.w_dist = value.parse().map_err(|_| bad("expected number"))?,
            "w_contra" => {
                self.weights.w_contra = value.parse().map_err(|_| bad("expected number"))?;
            }
            "contra_mode" => {
                self.contra_mode = ContraMode::parse(value)
                    .ok_or_else(|| bad("expected `per_frame` or `sequence_norm`"))?;
            }
            _ => return Err(Error::Config(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// Serialize as the versioned key-value text format.
    pub fn to_kv_string(&self) -> String {
        format!(
            "format_version = {}\n\
             preset = {}\n\
             embed_dim = {}\n\
             heads = {}\n\
             attn_layers_per_module = {}\n\
             hidden_dim = {}\n\
             lr0 = {}\n\
             lr_decay_per_epoch = {}\n\
             epochs = {}\n\
             batch_size = {}\n\
             seed = {}\n\
             margin = {}\n\
             w_cls = {}\n\
             w_dist = {}\n\
             w_contra = {}\n\
             contra_mode = {}\n",
            CONFIG_FORMAT_VERSION,
            self.preset.as_str(),
            self.embed_dim,
            self.heads,
            self.attn_layers_per_module,
            self.hidden_dim,
            self.lr0,
            self.lr_decay_per_epoch,
            self.epochs,
            self.batch_size,
            self.seed,
            self.margin,
            self.weights.w_cls,
            self.weights.w_dist,
            self.weights.w_contra,
            self.contra_mode.as_str(),
        )
    }

    /// Parse the key-value format, starting from defaults.
    pub fn parse_kv_str(text: &str, origin: &Path) -> Result<Self> {
        let mut cfg = TrainConfig::default();
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

/// Closed-form learning rate: `lr0 · (1 − decay)^epoch`, computed from the
/// epoch index so there is no accumulated float drift.
pub fn lr_schedule(epoch: usize, cfg: &TrainConfig) -> f64 {
    cfg.lr0 * (1.0 - cfg.lr_decay_per_epoch).powi(epoch as i32)
}

/// Training inputs: materialized samples in manifest order.
#[derive(Debug, Clone)]
pub struct TrainData {
    pub train: Vec<VideoSample>,
    pub val: Vec<VideoSample>,
}

/// One metrics-log record. Step records carry `val_auc = None`; each epoch
/// additionally emits a summary record with the epoch-mean losses and the
/// validation AUC.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub step: usize,
    pub lr: f64,
    pub cls: f64,
    pub dist: f64,
    pub contra: f64,
    pub total: f64,
    pub val_auc: Option<f64>,
}

impl MetricsRecord {
    /// Shortest-round-trip float formatting keeps same-seed logs
    /// bit-identical and parseable back to the exact values.
    pub fn to_line(&self) -> String {
        let va = match self.val_auc {
            Some(v) => v.to_string(),
            None => "na".to_string(),
        };
        format!(
            "epoch={} step={} lr={} cls={} dist={} contra={} total={} val_auc={}",
            self.epoch, self.step, self.lr, self.cls, self.dist, self.contra, self.total, va
        )
    }

    pub fn parse_line(line: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for field in line.split_whitespace() {
            let (k, v) = field
                .split_once('=')
                .ok_or_else(|| Error::contract(format!("bad metrics field {field:?}")))?;
            map.insert(k, v);
        }
        let get = |k: &str| -> Result<&str> {
            map.get(k)
                .copied()
                .ok_or_else(|| Error::contract(format!("metrics line missing `{k}`")))
        };
        let fnum = |k: &str| -> Result<f64> {
            get(k)?
                .parse()
                .map_err(|_| Error::contract(format!("bad number for `{k}`")))
        };
        let inum = |k: &str| -> Result<usize> {
            get(k)?
                .parse()
                .map_err(|_| Error::contract(format!("bad integer for `{k}`")))
        };
        let va = get("val_auc")?;
        Ok(Self {
            epoch: inum("epoch")?,
            step: inum("step")?,
            lr: fnum("lr")?,
            cls: fnum("cls")?,
            dist: fnum("dist")?,
            contra: fnum("contra")?,
            total: fnum("total")?,
            val_auc: if va == "na" {
                None
            } else {
                Some(
                    va.parse()
                        .map_err(|_| Error::contract("bad number for `val_auc`"))?,
                )
            },
        })
    }
}

/// Where a finished (or interrupted) run stands.
#[derive(Debug, Clone)]
pub struct RunState {
    /// Epochs fully completed.
    pub epoch: usize,
    /// Optimizer steps taken.
    pub step: usize,
    /// Opaque descriptor of the RNG scheme; all randomness is derived from
    /// it and the epoch index.
    pub rng_state: String,
    /// Latest checkpoint written.
    pub checkpoint: PathBuf,
    /// Best validation AUC so far (NaN if never computed).
    pub best_val_auc: f64,
}

/// Joint two-branch trainer; owns model and optimizer state.
pub struct Trainer {
    cfg: TrainConfig,
    model: TwoBranchModel,
    adam: Adam,
    epochs_done: usize,
    step: usize,
    best_val_auc: f64,
}

impl Trainer {
    /// Fresh run: parameters initialized from `cfg.seed`.
    pub fn new(cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let model = TwoBranchModel::new(&cfg.model_config(), cfg.seed)?;
        Ok(Self {
            cfg: cfg.clone(),
            model,
            adam: Adam::new(),
            epochs_done: 0,
            step: 0,
            best_val_auc: f64::NAN,
        })
    }

    /// Resume from a checkpoint written by [`Trainer::save_checkpoint`].
    pub fn from_checkpoint(cfg: &TrainConfig, path: &Path) -> Result<Self> {
        cfg.validate()?;
        let (model, meta, extra) = TwoBranchModel::load_checkpoint(path)?;
        if model.config().encoder.preset != cfg.preset {
            return Err(Error::PresetMismatch {
                found: model.config().encoder.preset.as_str().to_string(),
                expected: cfg.preset.as_str().to_string(),
            });
        }
        if *model.config() != cfg.model_config() {
            return Err(Error::Config(format!(
                "checkpoint architecture {:?} does not match configured {:?}",
                model.config(),
                cfg.model_config()
            )));
        }
        if meta.seed != cfg.seed {
            return Err(Error::Config(format!(
                "checkpoint was produced by seed {}, config asks for {}",
                meta.seed, cfg.seed
            )));
        }

        let mut t: u64 = 0;
        let mut moments: BTreeMap<String, (Option<ArrayD<f64>>, Option<ArrayD<f64>>)> =
            BTreeMap::new();
        for (name, value) in extra {
            if name == "opt.adam.t" {
                t = value
                    .iter()
                    .next()
                    .copied()
                    .filter(|v| v.is_finite() && *v >= 0.0)
                    .ok_or_else(|| Error::corrupt(path, "bad opt.adam.t"))?
                    as u64;
            } else if let Some(p) = name.strip_prefix("opt.adam.m.") {
                moments.entry(p.to_string()).or_default().0 = Some(value);
            } else if let Some(p) = name.strip_prefix("opt.adam.v.") {
                moments.entry(p.to_string()).or_default().1 = Some(value);
            } else {
                return Err(Error::corrupt(
                    path,
                    format!("unknown extra tensor `{name}` in checkpoint"),
                ));
            }
        }
        let mut restored = Vec::new();
        for (pname, (m, v)) in moments {
            let (m, v) = match (m, v) {
                (Some(m), Some(v)) => (m, v),
                _ => {
                    return Err(Error::corrupt(
                        path,
                        format!("optimizer moments for `{pname}` incomplete"),
                    ))
                }
            };
            if !model.store().contains(&pname) {
                return Err(Error::corrupt(
                    path,
                    format!("optimizer state for unknown parameter `{pname}`"),
                ));
            }
            restored.push((pname, m, v));
        }
        let mut adam = Adam::new();
        adam.restore(t, restored);

        Ok(Self {
            cfg: cfg.clone(),
            model,
            adam,
            epochs_done: meta.epoch as usize,
            step: meta.step as usize,
            best_val_auc: meta.best_val_auc,
        })
    }

    pub fn model(&self) -> &TwoBranchModel {
        &self.model
    }

    pub fn epochs_done(&self) -> usize {
        self.epochs_done
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn best_val_auc(&self) -> f64 {
        self.best_val_auc
    }

    fn rng_descriptor(&self) -> String {
        format!("chacha8(seed={}, keyed by epoch)", self.cfg.seed)
    }

    /// Epoch-keyed RNG: independent of how many epochs actually ran before.
    fn epoch_rng(&self, epoch: usize) -> ChaCha8Rng {
        let key = self
            .cfg
            .seed
            .wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(epoch as u64 + 1));
        ChaCha8Rng::seed_from_u64(key)
    }

    /// Write the full trainer state (model + optimizer + progress).
    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let meta = CheckpointMeta {
            epoch: self.epochs_done as u64,
            step: self.step as u64,
            seed: self.cfg.seed,
            best_val_auc: self.best_val_auc,
        };
        let mut extra = BTreeMap::new();
        extra.insert(
            "opt.adam.t".to_string(),
            ArrayD::from_elem(IxDyn(&[1]), self.adam.step_count() as f64),
        );
        for (name, m, v) in self.adam.state() {
            extra.insert(format!("opt.adam.m.{name}"), m.clone());
            extra.insert(format!("opt.adam.v.{name}"), v.clone());
        }
        self.model.save_checkpoint(path, &meta, &extra)
    }

    /// Run the remaining epochs. Artifacts land in `run_dir`: an append-only
    /// `metrics.log`, `checkpoints/last.ckpt` each epoch, and
    /// `checkpoints/best.ckpt` whenever validation AUC improves.
    pub fn train(
        &mut self,
        data: &TrainData,
        teacher: &dyn Teacher,
        run_dir: &Path,
    ) -> Result<(RunState, Vec<MetricsRecord>)> {
        if data.train.is_empty() {
            return Err(Error::validation("train split", "no samples"));
        }
        std::fs::create_dir_all(run_dir.join("checkpoints"))
            .map_err(|e| Error::io(run_dir, e))?;
        let metrics_path = run_dir.join("metrics.log");
        let mut metrics_file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&metrics_path)
            .map_err(|e| Error::io(&metrics_path, e))?;

        // Teacher targets once per sample; order matches data.train.
        let cont: Vec<Array1<f64>> = data
            .train
            .iter()
            .map(|s| Ok(content_labels(&teacher.distributions(s)?)?.cont))
            .collect::<Result<_>>()?;

        let mut records = Vec::new();
        let n = data.train.len();
        for epoch in self.epochs_done..self.cfg.epochs {
            let lr = lr_schedule(epoch, &self.cfg);
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut self.epoch_rng(epoch));

            let mut epoch_sums = [0.0f64; 4];
            let mut epoch_batches = 0usize;
            for batch in order.chunks(self.cfg.batch_size) {
                let (grads, means) = self.batch_pass(data, &cont, batch, epoch)?;
                self.adam.step(self.model.store_mut(), &grads, lr);
                self.step += 1;
                for (acc, m) in epoch_sums.iter_mut().zip(means) {
                    *acc += m;
                }
                epoch_batches += 1;
                let rec = MetricsRecord {
                    epoch,
                    step: self.step,
                    lr,
                    cls: means[0],
                    dist: means[1],
                    contra: means[2],
                    total: means[3],
                    val_auc: None,
                };
                writeln!(metrics_file, "{}", rec.to_line())
                    .map_err(|e| Error::io(&metrics_path, e))?;
                records.push(rec);
            }

            let val_auc = self.validation_auc(&data.val)?;
            let b = epoch_batches as f64;
            let rec = MetricsRecord {
                epoch,
                step: self.step,
                lr,
                cls: epoch_sums[0] / b,
                dist: epoch_sums[1] / b,
                contra: epoch_sums[2] / b,
                total: epoch_sums[3] / b,
                val_auc,
            };
            writeln!(metrics_file, "{}", rec.to_line())
                .map_err(|e| Error::io(&metrics_path, e))?;
            let epoch_total = rec.total;
            records.push(rec);

            self.epochs_done = epoch + 1;
            self.save_checkpoint(&run_dir.join("checkpoints/last.ckpt"))?;
            if let Some(v) = val_auc {
                if self.best_val_auc.is_nan() || v > self.best_val_auc {
                    self.best_val_auc = v;
                    self.save_checkpoint(&run_dir.join("checkpoints/best.ckpt"))?;
                }
            }
            log::info!(
                "epoch {epoch}: total {epoch_total:.4}, val_auc {}",
                val_auc.map_or("na".to_string(), |v| format!("{v:.4}"))
            );
        }

        Ok((
            RunState {
                epoch: self.epochs_done,
                step: self.step,
                rng_state: self.rng_descriptor(),
                checkpoint: run_dir.join("checkpoints/last.ckpt"),
                best_val_auc: self.best_val_auc,
            },
            records,
        ))
    }

    /// Forward + backward over one batch; returns parameter gradients and
    /// the batch-mean `[cls, dist, contra, total]`.
    fn batch_pass(
        &self,
        data: &TrainData,
        cont: &[Array1<f64>],
        batch: &[usize],
        epoch: usize,
    ) -> Result<(BTreeMap<String, ArrayD<f64>>, [f64; 4])> {
        let mut ctx = Ctx::new(self.model.store());
        let mut totals = Vec::with_capacity(batch.len());
        let mut sums = [0.0f64; 4];
        for &idx in batch {
            let g = self.model.forward_sample(
                &mut ctx,
                &data.train[idx],
                &cont[idx],
                &self.cfg.weights,
                self.cfg.margin,
                self.cfg.contra_mode,
            )?;
            sums[0] += ctx.tape.scalar(g.cls);
            sums[1] += ctx.tape.scalar(g.dist);
            sums[2] += ctx.tape.scalar(g.contra);
            sums[3] += ctx.tape.scalar(g.total);
            totals.push(g.total);
        }
        let bn = batch.len() as f64;
        let mut acc = totals[0];
        for &t in &totals[1..] {
            acc = ctx.tape.add(acc, t);
        }
        let batch_loss = ctx.tape.affine(acc, 1.0 / bn, 0.0);
        let loss_value = ctx.tape.scalar(batch_loss);
        if !loss_value.is_finite() {
            let batch_ids: Vec<String> = batch
                .iter()
                .map(|&i| data.train[i].entry.sample_id.clone())
                .collect();
            log::error!(
                "non-finite loss {loss_value} at epoch {epoch}, step {} — batch: {batch_ids:?}",
                self.step + 1
            );
            return Err(Error::NanAbort {
                epoch,
                step: self.step + 1,
                batch_ids,
            });
        }
        let grads = ctx.tape.backward(batch_loss);
        let means = [sums[0] / bn, sums[1] / bn, sums[2] / bn, sums[3] / bn];
        Ok((ctx.param_grads(&grads), means))
    }

    /// AUC over the validation pool (fake positive, score `1 − s`).
    /// `None` when validation is empty or single-class.
    fn validation_auc(&self, val: &[VideoSample]) -> Result<Option<f64>> {
        if val.is_empty() {
            return Ok(None);
        }
        let mut scores = Vec::with_capacity(val.len());
        let mut positive = Vec::with_capacity(val.len());
        for sample in val {
            let out = self.model.score(sample)?;
            scores.push(1.0 - out.s);
            positive.push(sample.entry.label == LABEL_FAKE);
        }
        match auc(&scores, &positive) {
            Ok(v) => Ok(Some(v)),
            Err(Error::UndefinedAuc { .. }) => {
                log::warn!("validation pool is single-class; skipping AUC");
                Ok(None)
            }
            Err(e) => Err(e),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::synthetic::{generate_corpus, materialize, CorpusSpec};
    use crate::dataio::Split;
    use crate::teachers::MockTeacher;

    fn tiny_cfg(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: 4,
            ..TrainConfig::default()
        }
    }

    fn tiny_data(n_real: usize, n_fake_per_cat: usize, frames: usize) -> TrainData {
        let entries = generate_corpus(&CorpusSpec::loo(n_real, n_fake_per_cat, frames, 7)).unwrap();
        let train: Vec<_> = entries
            .iter()
            .filter(|e| e.split == Split::Train)
            .cloned()
            .collect();
        let val: Vec<_> = entries
            .iter()
            .filter(|e| e.split == Split::Val)
            .cloned()
            .collect();
        TrainData {
            train: materialize(&train, frames).unwrap(),
            val: materialize(&val, frames).unwrap(),
        }
    }

    #[test]
    fn lr_schedule_hand_values() {
        let cfg = TrainConfig::default();
        assert_eq!(lr_schedule(0, &cfg), 1e-4);
        assert_eq!(lr_schedule(1, &cfg), 9.5e-5);
        assert_eq!(lr_schedule(2, &cfg), 9.025e-5);
    }

    #[test]
    fn config_kv_roundtrip_and_overrides() {
        let mut cfg = TrainConfig::default();
        cfg.apply_override("epochs", "3").unwrap();
        cfg.apply_override("w_contra", "0.5").unwrap();
        cfg.apply_override("contra_mode", "sequence_norm").unwrap();
        assert_eq!(cfg.epochs, 3);
        assert_eq!(cfg.weights.w_contra, 0.5);
        assert_eq!(cfg.contra_mode, ContraMode::SequenceNorm);

        let text = cfg.to_kv_string();
        let parsed = TrainConfig::parse_kv_str(&text, Path::new("mem")).unwrap();
        assert_eq!(cfg, parsed, "kv round-trip must be lossless");

        assert!(cfg.apply_override("no_such_key", "1").is_err());
        assert!(cfg.apply_override("epochs", "abc").is_err());
        assert!(TrainConfig::parse_kv_str("format_version = 9\n", Path::new("mem")).is_err());
    }

    #[test]
    fn config_validation_bounds() {
        let mut cfg = TrainConfig::default();
        cfg.lr0 = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = TrainConfig::default();
        cfg.lr_decay_per_epoch = 1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = TrainConfig::default();
        cfg.embed_dim = 10; // not divisible by 8 heads
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn empty_train_split_is_precondition_error() {
        let mut trainer = Trainer::new(&tiny_cfg(1)).unwrap();
        let data = TrainData {
            train: vec![],
            val: vec![],
        };
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            trainer.train(&data, &MockTeacher::new(1), dir.path()),
            Err(Error::Validation { .. })
        ));
    }

    #[test]
    fn two_runs_same_seed_identical_metrics() {
        let cfg = tiny_cfg(2);
        let data = tiny_data(8, 2, 2);
        let teacher = MockTeacher::new(5);
        let run = |dir: &Path| {
            let mut t = Trainer::new(&cfg).unwrap();
            t.train(&data, &teacher, dir).unwrap().1
        };
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let r1 = run(d1.path());
        let r2 = run(d2.path());
        assert_eq!(r1.len(), r2.len());
        for (a, b) in r1.iter().zip(r2.iter()) {
            assert_eq!(a.to_line(), b.to_line(), "metrics must be bit-identical");
        }
        // The on-disk logs agree too.
        let l1 = std::fs::read(d1.path().join("metrics.log")).unwrap();
        let l2 = std::fs::read(d2.path().join("metrics.log")).unwrap();
        assert_eq!(l1, l2);
    }

    #[test]
    fn loss_decreases_on_tiny_run() {
        let cfg = tiny_cfg(4);
        let data = tiny_data(8, 2, 2);
        let teacher = MockTeacher::new(5);
        let dir = tempfile::tempdir().unwrap();
        let mut t = Trainer::new(&cfg).unwrap();
        let (_, records) = t.train(&data, &teacher, dir.path()).unwrap();
        // The epoch summary is the last record emitted for each epoch.
        let epoch_mean = |e: usize| {
            records
                .iter()
                .filter(|r| r.epoch == e)
                .next_back()
                .map(|r| r.total)
                .unwrap()
        };
        assert!(
            epoch_mean(3) < epoch_mean(0),
            "epoch-mean total loss should drop: {} vs {}",
            epoch_mean(3),
            epoch_mean(0)
        );
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let cfg = tiny_cfg(4);
        let data = tiny_data(8, 2, 2);
        let teacher = MockTeacher::new(5);

        // Uninterrupted reference.
        let d_full = tempfile::tempdir().unwrap();
        let mut full = Trainer::new(&cfg).unwrap();
        let (_, rec_full) = full.train(&data, &teacher, d_full.path()).unwrap();

        // Interrupt after 2 epochs, then resume from the checkpoint.
        let d_a = tempfile::tempdir().unwrap();
        let cfg_half = TrainConfig {
            epochs: 2,
            ..cfg.clone()
        };
        let mut half = Trainer::new(&cfg_half).unwrap();
        let (state, mut rec_resumed) = half.train(&data, &teacher, d_a.path()).unwrap();
        assert_eq!(state.epoch, 2);

        let d_b = tempfile::tempdir().unwrap();
        let mut resumed = Trainer::from_checkpoint(&cfg, &state.checkpoint).unwrap();
        assert_eq!(resumed.epochs_done(), 2);
        let (_, rec_tail) = resumed.train(&data, &teacher, d_b.path()).unwrap();
        rec_resumed.extend(rec_tail);

        assert_eq!(rec_full.len(), rec_resumed.len());
        for (a, b) in rec_full.iter().zip(rec_resumed.iter()) {
            assert_eq!(a.epoch, b.epoch);
            assert_eq!(a.step, b.step);
            for (x, y, what) in [
                (a.lr, b.lr, "lr"),
                (a.cls, b.cls, "cls"),
                (a.dist, b.dist, "dist"),
                (a.contra, b.contra, "contra"),
                (a.total, b.total, "total"),
            ] {
                assert!(
                    (x - y).abs() <= 1e-6,
                    "{what} diverged at epoch {}: {x} vs {y}",
                    a.epoch
                );
            }
            match (a.val_auc, b.val_auc) {
                (None, None) => {}
                (Some(x), Some(y)) => assert!((x - y).abs() <= 1e-6),
                other => panic!("val_auc presence mismatch: {other:?}"),
            }
        }
    }

    #[test]
    fn resume_fresh_checkpoint_equals_cold_start() {
        let cfg = tiny_cfg(2);
        let data = tiny_data(6, 2, 2);
        let teacher = MockTeacher::new(5);

        let d_cold = tempfile::tempdir().unwrap();
        let mut cold = Trainer::new(&cfg).unwrap();
        let (_, rec_cold) = cold.train(&data, &teacher, d_cold.path()).unwrap();

        let d_ck = tempfile::tempdir().unwrap();
        let fresh = Trainer::new(&cfg).unwrap();
        let ckpt = d_ck.path().join("fresh.ckpt");
        fresh.save_checkpoint(&ckpt).unwrap();
        let d_res = tempfile::tempdir().unwrap();
        let mut res = Trainer::from_checkpoint(&cfg, &ckpt).unwrap();
        let (_, rec_res) = res.train(&data, &teacher, d_res.path()).unwrap();

        assert_eq!(rec_cold.len(), rec_res.len());
        for (a, b) in rec_cold.iter().zip(rec_res.iter()) {
            assert_eq!(a.to_line(), b.to_line(), "fresh-resume must equal cold start");
        }
    }

    #[test]
    fn resume_with_wrong_preset_or_seed_fails() {
        let cfg = tiny_cfg(1);
        let t = Trainer::new(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let ckpt = dir.path().join("x.ckpt");
        t.save_checkpoint(&ckpt).unwrap();

        let mut paper = cfg.clone();
        paper.preset = Preset::Paper;
        assert!(matches!(
            Trainer::from_checkpoint(&paper, &ckpt),
            Err(Error::PresetMismatch { .. })
        ));

        let mut other_seed = cfg.clone();
        other_seed.seed = 1234;
        assert!(matches!(
            Trainer::from_checkpoint(&other_seed, &ckpt),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn metrics_line_roundtrip() {
        let rec = MetricsRecord {
            epoch: 3,
            step: 17,
            lr: 8.573749999999999e-5,
            cls: 0.6931471805599453,
            dist: 0.1,
            contra: 0.0,
            total: 0.7931471805599453,
            val_auc: Some(0.875),
        };
        let line = rec.to_line();
        let parsed = MetricsRecord::parse_line(&line).unwrap();
        assert_eq!(rec, parsed);

        let rec_na = MetricsRecord {
            val_auc: None,
            ..rec
        };
        assert_eq!(
            MetricsRecord::parse_line(&rec_na.to_line()).unwrap(),
            rec_na
        );
    }

    #[test]
    fn variable_length_batches_match_isolated_losses() {
        // Mixing different T in one batch must not change per-sample values:
        // each sample's graph runs over its own frames only.
        let cfg = tiny_cfg(1);
        let trainer = Trainer::new(&cfg).unwrap();
        let teacher = MockTeacher::new(9);
        let e2 = generate_corpus(&CorpusSpec::loo(2, 1, 2, 11)).unwrap();
        let e4 = generate_corpus(&CorpusSpec::loo(2, 1, 4, 12)).unwrap();
        let mut samples = materialize(&e2[..2], 2).unwrap();
        samples.extend(materialize(&e4[..2], 4).unwrap());
        let cont: Vec<Array1<f64>> = samples
            .iter()
            .map(|s| {
                content_labels(&teacher.distributions(s).unwrap())
                    .unwrap()
                    .cont
            })
            .collect();
        let data = TrainData {
            train: samples.clone(),
            val: vec![],
        };

        // Batch of all four at once.
        let (_, _means) = trainer.batch_pass(&data, &cont, &[0, 1, 2, 3], 0).unwrap();

        // Isolated totals.
        for i in 0..4 {
            let mut ctx = Ctx::new(trainer.model().store());
            let g = trainer
                .model()
                .forward_sample(
                    &mut ctx,
                    &samples[i],
                    &cont[i],
                    &cfg.weights,
                    cfg.margin,
                    cfg.contra_mode,
                )
                .unwrap();
            let solo = ctx.tape.scalar(g.total);

            let mut ctx_b = Ctx::new(trainer.model().store());
            let mut batch_totals = Vec::new();
            for j in 0..4 {
                let gj = trainer
                    .model()
                    .forward_sample(
                        &mut ctx_b,
                        &samples[j],
                        &cont[j],
                        &cfg.weights,
                        cfg.margin,
                        cfg.contra_mode,
                    )
                    .unwrap();
                batch_totals.push(ctx_b.tape.scalar(gj.total));
            }
            assert!(
                (solo - batch_totals[i]).abs() < 1e-12,
                "sample {i}: batched {} vs isolated {solo}",
                batch_totals[i]
            );
        }
    }
}
