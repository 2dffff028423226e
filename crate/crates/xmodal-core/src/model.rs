//! The full two-branch model and its checkpoint format.
//!
//! `TwoBranchModel` owns the parameter store and wires encoders → detector
//! (detection branch) and encoders → sync signal → distillation/contrastive
//! losses (correlation branch) onto a single tape so one backward pass
//! yields every gradient.
//!
//! Checkpoints are a flat, name-sorted list of f64 tensors with a versioned
//! header recording the architecture; optimizer state rides along as extra
//! tensors. Writes are bitwise reproducible: save → load → save produces
//! identical bytes.

use std::collections::BTreeMap;
use std::io::{Read as IoRead, Write as IoWrite};
use std::path::Path;

use ndarray::{Array1, ArrayD, IxDyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataio::{VideoSample, LABEL_REAL};
use crate::detector::{DetectionOutput, Detector, DetectorConfig, DetectorForward};
use crate::encoders::{AudioEncoder, EmbeddingPair, EncoderConfig, Preset, VisualEncoder};
use crate::error::{Error, Result};
use crate::losses::{
    tape_loss_cls, tape_loss_contra, tape_loss_dist, tape_sync_signal, ContraMode, LossWeights,
};
use crate::nn::{Ctx, ParamStore, TensorId};

/// 8-byte magic + version prefix of checkpoint files.
pub const CHECKPOINT_MAGIC: &[u8; 8] = b"XMCKPT01";

/// Architecture of the full model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub detector: DetectorConfig,
}

impl ModelConfig {
    pub fn for_preset(preset: Preset) -> Self {
        let encoder = match preset {
            Preset::Tiny => EncoderConfig::tiny(),
            Preset::Paper => EncoderConfig::paper(),
        };
        Self {
            encoder,
            detector: DetectorConfig::new(encoder.embed_dim),
        }
    }

    pub fn tiny() -> Self {
        Self::for_preset(Preset::Tiny)
    }

    pub fn paper() -> Self {
        Self::for_preset(Preset::Paper)
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.detector.validate()?;
        if self.encoder.embed_dim != self.detector.embed_dim {
            return Err(Error::validation(
                "model",
                format!(
                    "encoder embed_dim {} != detector embed_dim {}",
                    self.encoder.embed_dim, self.detector.embed_dim
                ),
            ));
        }
        Ok(())
    }
}

/// Book-keeping stored in the checkpoint header alongside the tensors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckpointMeta {
    pub epoch: u64,
    pub step: u64,
    pub seed: u64,
    /// NaN when no validation AUC has been recorded yet.
    pub best_val_auc: f64,
}

impl Default for CheckpointMeta {
    fn default() -> Self {
        Self {
            epoch: 0,
            step: 0,
            seed: 0,
            best_val_auc: f64::NAN,
        }
    }
}

/// Tape handles for one sample's full two-branch graph.
pub struct SampleGraph {
    pub f_a: TensorId,
    pub f_v: TensorId,
    pub logit: TensorId,
    pub s: TensorId,
    pub sync: TensorId,
    pub cls: TensorId,
    pub dist: TensorId,
    pub contra: TensorId,
    /// Weighted sum of the three components.
    pub total: TensorId,
    pub attention: Vec<TensorId>,
}

/// Both branches over one shared parameter store.
#[derive(Debug, Clone)]
pub struct TwoBranchModel {
    cfg: ModelConfig,
    store: ParamStore,
    audio: AudioEncoder,
    visual: VisualEncoder,
    detector: Detector,
}

impl TwoBranchModel {
    /// Fresh model with seeded fan-in-scaled initialization.
    pub fn new(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let audio = AudioEncoder::new(&mut store, &mut rng, "audio_enc", &cfg.encoder);
        let visual = VisualEncoder::new(&mut store, &mut rng, "visual_enc", &cfg.encoder);
        let detector = Detector::new(&mut store, &mut rng, "detector", &cfg.detector);
        Ok(Self {
            cfg: *cfg,
            store,
            audio,
            visual,
            detector,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn detector(&self) -> &Detector {
        &self.detector
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.store.num_scalars()
    }

    /// Encode both streams of a sample on an existing tape.
    pub fn forward_embeddings(
        &self,
        ctx: &mut Ctx,
        sample: &VideoSample,
    ) -> Result<(TensorId, TensorId)> {
        sample.validate()?;
        let xa = ctx.tape.constant(sample.audio.mfcc.clone().into_dyn());
        let xv = ctx.tape.constant(sample.faces.frames.clone().into_dyn());
        let f_a = self.audio.forward(ctx, xa)?;
        let f_v = self.visual.forward(ctx, xv)?;
        Ok((f_a, f_v))
    }

    /// Build the complete two-branch training graph for one sample.
    ///
    /// `cont` is the per-frame content-correlation target (length `T`).
    pub fn forward_sample(
        &self,
        ctx: &mut Ctx,
        sample: &VideoSample,
        cont: &Array1<f64>,
        weights: &LossWeights,
        margin: f64,
        mode: ContraMode,
    ) -> Result<SampleGraph> {
        if cont.len() != sample.t {
            return Err(Error::contract(format!(
                "content labels have {} frames, sample {} has {}",
                cont.len(),
                sample.entry.sample_id,
                sample.t
            )));
        }
        let y = u8::from(sample.entry.label == LABEL_REAL);
        let (f_a, f_v) = self.forward_embeddings(ctx, sample)?;
        let det: DetectorForward = self.detector.forward(ctx, f_a, f_v)?;
        let sync = tape_sync_signal(&mut ctx.tape, f_a, f_v);
        let cls = tape_loss_cls(&mut ctx.tape, det.s, y);
        let dist = tape_loss_dist(&mut ctx.tape, sync, cont);
        let contra = tape_loss_contra(&mut ctx.tape, sync, cont, y, margin, mode);
        let wc = ctx.tape.affine(cls, weights.w_cls, 0.0);
        let wd = ctx.tape.affine(dist, weights.w_dist, 0.0);
        let wk = ctx.tape.affine(contra, weights.w_contra, 0.0);
        let cd = ctx.tape.add(wc, wd);
        let total = ctx.tape.add(cd, wk);
        Ok(SampleGraph {
            f_a,
            f_v,
            logit: det.logit,
            s: det.s,
            sync,
            cls,
            dist,
            contra,
            total,
            attention: det.attention,
        })
    }

    /// Inference: per-frame embeddings as host arrays.
    pub fn embed(&self, sample: &VideoSample) -> Result<EmbeddingPair> {
        let mut ctx = Ctx::new(&self.store);
        let (f_a, f_v) = self.forward_embeddings(&mut ctx, sample)?;
        let to2 = |id: TensorId, ctx: &Ctx| {
            ctx.tape
                .value(id)
                .clone()
                .into_dimensionality::<ndarray::Ix2>()
                .expect("embeddings are 2-D")
        };
        EmbeddingPair::new(to2(f_a, &ctx), to2(f_v, &ctx))
    }

    /// Inference: classifier verdict for one sample.
    pub fn score(&self, sample: &VideoSample) -> Result<DetectionOutput> {
        let pair = self.embed(sample)?;
        self.detector.classify(&self.store, &pair)
    }

    /// Inference: the correlation branch's per-frame sync signal.
    pub fn sync_profile(&self, sample: &VideoSample) -> Result<Array1<f64>> {
        let pair = self.embed(sample)?;
        crate::losses::sync_signal(&pair.f_a, &pair.f_v)
    }

    /// Write parameters (+ any extra tensors, e.g. optimizer state) to
    /// `path`. Tensor records are sorted by name for bitwise stability.
    pub fn save_checkpoint(
        &self,
        path: &Path,
        meta: &CheckpointMeta,
        extra: &BTreeMap<String, ArrayD<f64>>,
    ) -> Result<()> {
        let mut tensors: BTreeMap<&str, &ArrayD<f64>> = BTreeMap::new();
        for (name, value) in self.store.iter() {
            tensors.insert(name, value);
        }
        for (name, value) in extra {
            if tensors.insert(name, value).is_some() {
                return Err(Error::contract(format!(
                    "extra checkpoint tensor {name} collides with a model parameter"
                )));
            }
        }

        let mut buf: Vec<u8> = Vec::new();
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        let preset = self.cfg.encoder.preset.as_str().as_bytes();
        buf.extend_from_slice(&(preset.len() as u32).to_le_bytes());
        buf.extend_from_slice(preset);
        for dim in [
            self.cfg.encoder.embed_dim,
            self.cfg.detector.heads,
            self.cfg.detector.attn_layers_per_module,
            self.cfg.detector.hidden_dim,
        ] {
            buf.extend_from_slice(&(dim as u32).to_le_bytes());
        }
        buf.extend_from_slice(&meta.epoch.to_le_bytes());
        buf.extend_from_slice(&meta.step.to_le_bytes());
        buf.extend_from_slice(&meta.seed.to_le_bytes());
        buf.extend_from_slice(&meta.best_val_auc.to_le_bytes());
        buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        for (name, value) in &tensors {
            let nb = name.as_bytes();
            buf.extend_from_slice(&(nb.len() as u32).to_le_bytes());
            buf.extend_from_slice(nb);
            buf.extend_from_slice(&(value.ndim() as u32).to_le_bytes());
            for &d in value.shape() {
                buf.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &x in value.as_standard_layout().iter() {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&buf).map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    /// Load a checkpoint, reconstructing the model recorded in the header.
    /// Returns the model, its metadata, and any extra (non-parameter)
    /// tensors, keyed by name.
    pub fn load_checkpoint(
        path: &Path,
    ) -> Result<(Self, CheckpointMeta, BTreeMap<String, ArrayD<f64>>)> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        let mut off = 0usize;
        let take = |off: &mut usize, n: usize| -> Result<&[u8]> {
            if *off + n > bytes.len() {
                return Err(Error::corrupt(
                    path,
                    format!("checkpoint truncated at byte {} (wanted {n} more)", *off),
                ));
            }
            let s = &bytes[*off..*off + n];
            *off += n;
            Ok(s)
        };
        let magic = take(&mut off, 8)?;
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::format(
                path,
                format!("not a checkpoint file: bad magic {magic:?}"),
            ));
        }
        let u32_at = |off: &mut usize| -> Result<u32> {
            Ok(u32::from_le_bytes(take(off, 4)?.try_into().unwrap()))
        };
        let u64_at = |off: &mut usize| -> Result<u64> {
            Ok(u64::from_le_bytes(take(off, 8)?.try_into().unwrap()))
        };
        let preset_len = u32_at(&mut off)? as usize;
        let preset_str = std::str::from_utf8(take(&mut off, preset_len)?)
            .map_err(|_| Error::corrupt(path, "checkpoint preset name is not UTF-8"))?
            .to_string();
        let preset = Preset::parse(&preset_str).ok_or_else(|| {
            Error::format(path, format!("unknown checkpoint preset {preset_str:?}"))
        })?;
        let embed_dim = u32_at(&mut off)? as usize;
        let heads = u32_at(&mut off)? as usize;
        let layers = u32_at(&mut off)? as usize;
        let hidden = u32_at(&mut off)? as usize;
        let meta = CheckpointMeta {
            epoch: u64_at(&mut off)?,
            step: u64_at(&mut off)?,
            seed: u64_at(&mut off)?,
            best_val_auc: f64::from_le_bytes(take(&mut off, 8)?.try_into().unwrap()),
        };

        let cfg = ModelConfig {
            encoder: EncoderConfig { preset, embed_dim },
            detector: DetectorConfig {
                embed_dim,
                heads,
                attn_layers_per_module: layers,
                hidden_dim: hidden,
            },
        };
        // Init values are immediately overwritten; the seed is irrelevant.
        let mut model = Self::new(&cfg, 0)?;

        let n_tensors = u32_at(&mut off)? as usize;
        let mut extra = BTreeMap::new();
        let mut seen_params = 0usize;
        for _ in 0..n_tensors {
            let name_len = u32_at(&mut off)? as usize;
            let name = std::str::from_utf8(take(&mut off, name_len)?)
                .map_err(|_| Error::corrupt(path, "tensor name is not UTF-8"))?
                .to_string();
            let ndim = u32_at(&mut off)? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(u64_at(&mut off)? as usize);
            }
            let len: usize = shape.iter().product();
            let mut data = Vec::with_capacity(len);
            for _ in 0..len {
                data.push(f64::from_le_bytes(take(&mut off, 8)?.try_into().unwrap()));
            }
            let value = ArrayD::from_shape_vec(IxDyn(&shape), data)
                .map_err(|e| Error::corrupt(path, format!("tensor {name}: {e}")))?;
            if model.store.contains(&name) {
                if model.store.value(&name).shape() != value.shape() {
                    return Err(Error::corrupt(
                        path,
                        format!(
                            "tensor {name} has shape {:?}, model expects {:?}",
                            value.shape(),
                            model.store.value(&name).shape()
                        ),
                    ));
                }
                model.store.set(&name, value);
                seen_params += 1;
            } else {
                extra.insert(name, value);
            }
        }
        if off != bytes.len() {
            return Err(Error::corrupt(
                path,
                format!("{} trailing bytes after checkpoint payload", bytes.len() - off),
            ));
        }
        if seen_params != model.store.len() {
            return Err(Error::corrupt(
                path,
                format!(
                    "checkpoint provides {seen_params} of {} model parameters",
                    model.store.len()
                ),
            ));
        }
        Ok((model, meta, extra))
    }
}
