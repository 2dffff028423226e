//! Cross-modal fusion and classification.
//!
//! Two multi-head cross-attention modules run in parallel: module A queries
//! with the audio embedding `F_a` against the visual context `F_v`; module B
//! is symmetric. Their per-frame outputs are concatenated, mean-pooled over
//! time, and mapped by one affine layer to a single logit; `s = sigmoid(logit)`
//! is the predicted probability of *real* (`y = 1 ⇔ real`).
//!
//! Design choices (the cited attention internals are under-specified):
//! post-norm residual attention blocks, no positional encoding, mean pooling
//! over time. The last two make the logit invariant to frame permutation,
//! which is pinned by a test.

use ndarray::{Array2, ArrayD};
use rand_chacha::ChaCha8Rng;

use crate::encoders::EmbeddingPair;
use crate::error::{Error, Result};
use crate::nn::{Ctx, LayerNormSeq, Linear, ParamStore, TensorId};

/// Init gain for the classifier head; see `HEAD_GAIN` in `encoders`.
pub const CLASSIFIER_GAIN: f64 = 0.25;

/// Attention/fusion hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DetectorConfig {
    pub embed_dim: usize,
    pub heads: usize,
    pub attn_layers_per_module: usize,
    pub hidden_dim: usize,
}

impl DetectorConfig {
    pub fn new(embed_dim: usize) -> Self {
        Self {
            embed_dim,
            heads: 8,
            attn_layers_per_module: 1,
            hidden_dim: embed_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.heads == 0 || self.attn_layers_per_module == 0 {
            return Err(Error::validation(
                "detector",
                "embed_dim, heads, attn_layers_per_module must be positive",
            ));
        }
        if self.embed_dim % self.heads != 0 {
            return Err(Error::validation(
                "detector",
                format!(
                    "embed_dim {} not divisible by heads {}",
                    self.embed_dim, self.heads
                ),
            ));
        }
        if self.hidden_dim == 0 || self.hidden_dim % self.heads != 0 {
            return Err(Error::validation(
                "detector",
                format!(
                    "hidden_dim {} must be a positive multiple of heads {}",
                    self.hidden_dim, self.heads
                ),
            ));
        }
        Ok(())
    }
}

/// Classifier verdict for one sample.
#[derive(Debug, Clone)]
pub struct DetectionOutput {
    pub logit: f64,
    /// Predicted probability of real; `s = sigmoid(logit)`.
    pub s: f64,
    /// One `[T × T]` row-stochastic map per (module, layer, head), modules
    /// A (audio-query) first.
    pub attention: Vec<Array2<f64>>,
}

impl DetectionOutput {
    pub fn validate(&self) -> Result<()> {
        let expect = 1.0 / (1.0 + (-self.logit).exp());
        if (self.s - expect).abs() > 1e-12 {
            return Err(Error::contract(format!(
                "s = {} is not sigmoid(logit = {})",
                self.s, self.logit
            )));
        }
        Ok(())
    }
}

/// Tape-level handles from one detector forward pass.
pub struct DetectorForward {
    /// Shape `[1]`.
    pub logit: TensorId,
    /// Shape `[1]`, `sigmoid(logit)`.
    pub s: TensorId,
    /// `(T, 2·embed_dim)` fused per-frame features.
    pub fused: TensorId,
    /// `(T, T)` attention maps, modules A then B, layer-major then head.
    pub attention: Vec<TensorId>,
}

#[derive(Debug, Clone)]
struct AttnLayer {
    wq: Linear,
    wk: Linear,
    wv: Linear,
    wo: Linear,
    norm: LayerNormSeq,
}

impl AttnLayer {
    fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        prefix: &str,
        cfg: &DetectorConfig,
    ) -> Self {
        let e = cfg.embed_dim;
        let h = cfg.hidden_dim;
        Self {
            wq: Linear::new(store, rng, &format!("{prefix}.wq"), e, h),
            wk: Linear::new(store, rng, &format!("{prefix}.wk"), e, h),
            wv: Linear::new(store, rng, &format!("{prefix}.wv"), e, h),
            wo: Linear::new(store, rng, &format!("{prefix}.wo"), h, e),
            norm: LayerNormSeq::new(store, &format!("{prefix}.norm"), e),
        }
    }

    /// One residual cross-attention block; returns the output and the
    /// per-head attention maps.
    fn forward(
        &self,
        ctx: &mut Ctx,
        src: TensorId,
        context: TensorId,
        heads: usize,
    ) -> (TensorId, Vec<TensorId>) {
        let q = self.wq.forward(ctx, src);
        let k = self.wk.forward(ctx, context);
        let v = self.wv.forward(ctx, context);
        let hidden = ctx.tape.value(q).shape()[1];
        let dh = hidden / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(heads);
        let mut maps = Vec::with_capacity(heads);
        for h in 0..heads {
            let (lo, hi) = (h * dh, (h + 1) * dh);
            let qh = ctx.tape.slice_cols(q, lo, hi);
            let kh = ctx.tape.slice_cols(k, lo, hi);
            let vh = ctx.tape.slice_cols(v, lo, hi);
            let scores = ctx.tape.matmul_nt(qh, kh);
            let scores = ctx.tape.affine(scores, scale, 0.0);
            let attn = ctx.tape.softmax_rows(scores);
            maps.push(attn);
            outs.push(ctx.tape.matmul(attn, vh));
        }
        let concat = ctx.tape.concat_cols(&outs);
        let proj = self.wo.forward(ctx, concat);
        let res = ctx.tape.add(src, proj);
        (self.norm.forward(ctx, res), maps)
    }
}

/// A stack of cross-attention layers with a fixed context stream.
#[derive(Debug, Clone)]
pub struct CrossAttentionModule {
    layers: Vec<AttnLayer>,
    heads: usize,
}

impl CrossAttentionModule {
    fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        prefix: &str,
        cfg: &DetectorConfig,
    ) -> Self {
        let layers = (0..cfg.attn_layers_per_module)
            .map(|i| AttnLayer::new(store, rng, &format!("{prefix}.l{i}"), cfg))
            .collect();
        Self {
            layers,
            heads: cfg.heads,
        }
    }

    /// `source` queries `context`; both `(T, E)`. Returns the `(T, E)` output
    /// and all attention maps (layer-major, then head).
    pub fn forward(
        &self,
        ctx: &mut Ctx,
        source: TensorId,
        context: TensorId,
    ) -> (TensorId, Vec<TensorId>) {
        let mut src = source;
        let mut maps = Vec::new();
        for layer in &self.layers {
            let (out, m) = layer.forward(ctx, src, context, self.heads);
            src = out;
            maps.extend(m);
        }
        (src, maps)
    }
}

/// The full fusion + classification head.
#[derive(Debug, Clone)]
pub struct Detector {
    cfg: DetectorConfig,
    module_a: CrossAttentionModule,
    module_v: CrossAttentionModule,
    classifier: Linear,
    classifier_w: String,
    classifier_b: String,
}

impl Detector {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        prefix: &str,
        cfg: &DetectorConfig,
    ) -> Self {
        let module_a = CrossAttentionModule::new(store, rng, &format!("{prefix}.mod_a"), cfg);
        let module_v = CrossAttentionModule::new(store, rng, &format!("{prefix}.mod_v"), cfg);
        // Small classifier init: the decision direction should be set by
        // training, not by the random projection it starts from.
        let classifier = Linear::with_gain(
            store,
            rng,
            &format!("{prefix}.cls"),
            2 * cfg.embed_dim,
            1,
            CLASSIFIER_GAIN,
        );
        Self {
            cfg: *cfg,
            module_a,
            module_v,
            classifier,
            classifier_w: format!("{prefix}.cls.w"),
            classifier_b: format!("{prefix}.cls.b"),
        }
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.cfg
    }

    /// Parameter names of the final affine layer (used by tests to pin the
    /// zero-logit contract).
    pub fn classifier_param_names(&self) -> (&str, &str) {
        (&self.classifier_w, &self.classifier_b)
    }

    fn check_pair_shapes(&self, ta: &[usize], tv: &[usize]) -> Result<usize> {
        if ta.len() != 2 || tv.len() != 2 {
            return Err(Error::contract("detector inputs must be 2-D (T, E)"));
        }
        if ta[0] != tv[0] {
            return Err(Error::contract(format!(
                "frame count mismatch: F_a has T={}, F_v has T={}",
                ta[0], tv[0]
            )));
        }
        if ta[1] != self.cfg.embed_dim || tv[1] != self.cfg.embed_dim {
            return Err(Error::contract(format!(
                "embedding dim mismatch: got {} / {}, detector built for {}",
                ta[1], tv[1], self.cfg.embed_dim
            )));
        }
        if ta[0] == 0 {
            return Err(Error::contract("detector needs at least one frame"));
        }
        Ok(ta[0])
    }

    /// Full forward on an existing tape: fuse the two embedding nodes and
    /// produce the logit/probability nodes.
    pub fn forward(&self, ctx: &mut Ctx, f_a: TensorId, f_v: TensorId) -> Result<DetectorForward> {
        let ta = ctx.tape.value(f_a).shape().to_vec();
        let tv = ctx.tape.value(f_v).shape().to_vec();
        self.check_pair_shapes(&ta, &tv)?;

        let (out_a, maps_a) = self.module_a.forward(ctx, f_a, f_v);
        let (out_v, maps_v) = self.module_v.forward(ctx, f_v, f_a);
        let fused = ctx.tape.concat_cols(&[out_a, out_v]);
        let pooled = ctx.tape.mean_axis(fused, 0);
        let pooled_row = {
            let e2 = 2 * self.cfg.embed_dim;
            ctx.tape.reshape(pooled, &[1, e2])
        };
        let logit_mat = self.classifier.forward(ctx, pooled_row);
        let logit = ctx.tape.reshape(logit_mat, &[1]);
        let s = ctx.tape.sigmoid(logit);
        let mut attention = maps_a;
        attention.extend(maps_v);
        Ok(DetectorForward {
            logit,
            s,
            fused,
            attention,
        })
    }

    /// One cross-attention module on host arrays: `source` queries `context`.
    /// Returns the `[T × E]` output and the attention maps.
    pub fn cross_attend(
        &self,
        store: &ParamStore,
        source: &Array2<f64>,
        context: &Array2<f64>,
        module: StreamRole,
    ) -> Result<(Array2<f64>, Vec<Array2<f64>>)> {
        let mut ctx = Ctx::new(store);
        let s = ctx.tape.constant(source.clone().into_dyn());
        let c = ctx.tape.constant(context.clone().into_dyn());
        self.check_pair_shapes(source.shape(), context.shape())?;
        let m = match module {
            StreamRole::Audio => &self.module_a,
            StreamRole::Visual => &self.module_v,
        };
        let (out, maps) = m.forward(&mut ctx, s, c);
        let host = |id: TensorId, ctx: &Ctx| -> Array2<f64> {
            ctx.tape
                .value(id)
                .clone()
                .into_dimensionality::<ndarray::Ix2>()
                .expect("2-D attention output")
        };
        let out_host = host(out, &ctx);
        let map_host = maps.iter().map(|&m| host(m, &ctx)).collect();
        Ok((out_host, map_host))
    }

    /// Inference entry point on host arrays.
    pub fn classify(&self, store: &ParamStore, pair: &EmbeddingPair) -> Result<DetectionOutput> {
        pair.validate()?;
        let mut ctx = Ctx::new(store);
        let f_a = ctx.tape.constant(pair.f_a.clone().into_dyn());
        let f_v = ctx.tape.constant(pair.f_v.clone().into_dyn());
        let fwd = self.forward(&mut ctx, f_a, f_v)?;
        let attention = fwd
            .attention
            .iter()
            .map(|&id| {
                ctx.tape
                    .value(id)
                    .clone()
                    .into_dimensionality::<ndarray::Ix2>()
                    .expect("attention maps are 2-D")
            })
            .collect();
        let out = DetectionOutput {
            logit: ctx.tape.scalar(fwd.logit),
            s: ctx.tape.scalar(fwd.s),
            attention,
        };
        out.validate()?;
        Ok(out)
    }

    /// Zero the final affine layer (logit becomes exactly 0, `s = 0.5`).
    pub fn zero_classifier(&self, store: &mut ParamStore) {
        let wshape = store.value(&self.classifier_w).raw_dim();
        let bshape = store.value(&self.classifier_b).raw_dim();
        store.set(&self.classifier_w, ArrayD::zeros(wshape));
        store.set(&self.classifier_b, ArrayD::zeros(bshape));
    }
}

/// Which stream acts as the attention query.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamRole {
    Audio,
    Visual,
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{seq::SliceRandom, Rng, SeedableRng};

    fn setup(embed: usize, heads: usize, layers: usize) -> (ParamStore, Detector) {
        let mut cfg = DetectorConfig::new(embed);
        cfg.heads = heads;
        cfg.attn_layers_per_module = layers;
        cfg.validate().unwrap();
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let det = Detector::new(&mut store, &mut rng, "detector", &cfg);
        (store, det)
    }

    fn rand_pair(rng: &mut ChaCha8Rng, t: usize, e: usize) -> EmbeddingPair {
        EmbeddingPair::new(
            Array2::from_shape_fn((t, e), |_| rng.gen_range(-1.0..1.0)),
            Array2::from_shape_fn((t, e), |_| rng.gen_range(-1.0..1.0)),
        )
        .unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(DetectorConfig::new(16).validate().is_ok());
        assert!(DetectorConfig::new(10).validate().is_err(), "10 % 8 != 0");
        let mut c = DetectorConfig::new(16);
        c.hidden_dim = 12;
        assert!(c.validate().is_err(), "hidden 12 % 8 != 0");
        c.hidden_dim = 16;
        c.heads = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn attention_rows_are_probability_rows() {
        let (store, det) = setup(16, 8, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let pair = rand_pair(&mut rng, 6, 16);
        let out = det.classify(&store, &pair).unwrap();
        // 2 modules × 2 layers × 8 heads.
        assert_eq!(out.attention.len(), 32);
        for (i, map) in out.attention.iter().enumerate() {
            assert_eq!(map.dim(), (6, 6));
            for row in map.rows() {
                let sum: f64 = row.sum();
                assert!((sum - 1.0).abs() <= 1e-5, "map {i}: row sums to {sum}");
                assert!(row.iter().all(|&w| w >= 0.0), "map {i}: negative weight");
            }
        }
    }

    #[test]
    fn identical_streams_still_valid_rows() {
        let (store, det) = setup(16, 4, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let f = Array2::from_shape_fn((4, 16), |_| rng.gen_range(-1.0..1.0));
        let (out, maps) = det
            .cross_attend(&store, &f, &f, StreamRole::Audio)
            .unwrap();
        assert_eq!(out.dim(), (4, 16));
        assert!(out.iter().all(|v| v.is_finite()));
        for map in maps {
            for row in map.rows() {
                assert!((row.sum() - 1.0).abs() <= 1e-5);
            }
        }
    }

    #[test]
    fn t1_attention_weight_is_exactly_one() {
        let (store, det) = setup(16, 8, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let pair = rand_pair(&mut rng, 1, 16);
        let out = det.classify(&store, &pair).unwrap();
        for map in &out.attention {
            assert_eq!(map.dim(), (1, 1));
            assert_eq!(map[(0, 0)], 1.0, "single-key softmax must be exactly 1");
        }
    }

    #[test]
    fn cross_attend_shape_and_finite() {
        let (store, det) = setup(16, 8, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let pair = rand_pair(&mut rng, 5, 16);
        for role in [StreamRole::Audio, StreamRole::Visual] {
            let (src, ctx_m) = match role {
                StreamRole::Audio => (&pair.f_a, &pair.f_v),
                StreamRole::Visual => (&pair.f_v, &pair.f_a),
            };
            let (out, maps) = det.cross_attend(&store, src, ctx_m, role).unwrap();
            assert_eq!(out.dim(), (5, 16));
            assert!(out.iter().all(|v| v.is_finite()));
            assert_eq!(maps.len(), 8);
        }
    }

    #[test]
    fn t_mismatch_is_contract_error() {
        let (store, det) = setup(16, 8, 1);
        let a = Array2::zeros((4, 16));
        let v = Array2::zeros((5, 16));
        assert!(det
            .cross_attend(&store, &a, &v, StreamRole::Audio)
            .is_err());
    }

    #[test]
    fn zero_final_layer_gives_half() {
        let (mut store, det) = setup(16, 8, 1);
        det.zero_classifier(&mut store);
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let pair = rand_pair(&mut rng, 4, 16);
        let out = det.classify(&store, &pair).unwrap();
        assert_eq!(out.logit, 0.0);
        assert_eq!(out.s, 0.5);
    }

    #[test]
    fn s_is_sigmoid_of_logit_and_in_open_interval() {
        let (store, det) = setup(16, 8, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        for t in [1usize, 3, 7] {
            let pair = rand_pair(&mut rng, t, 16);
            let out = det.classify(&store, &pair).unwrap();
            assert!(out.s > 0.0 && out.s < 1.0);
            out.validate().unwrap();
        }
    }

    #[test]
    fn logit_invariant_under_frame_permutation() {
        let (store, det) = setup(16, 8, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let t = 7;
        let pair = rand_pair(&mut rng, t, 16);
        let base = det.classify(&store, &pair).unwrap();
        let mut order: Vec<usize> = (0..t).collect();
        for _ in 0..3 {
            order.shuffle(&mut rng);
            let permute = |m: &Array2<f64>| {
                let mut out = Array2::zeros(m.raw_dim());
                for (dst, &src) in order.iter().enumerate() {
                    out.row_mut(dst).assign(&m.row(src));
                }
                out
            };
            let p = EmbeddingPair::new(permute(&pair.f_a), permute(&pair.f_v)).unwrap();
            let got = det.classify(&store, &p).unwrap();
            assert!(
                (got.logit - base.logit).abs() <= 1e-5,
                "permuted logit {} vs base {}",
                got.logit,
                base.logit
            );
        }
    }

    /// Finite-difference probe through attention + classifier parameters.
    #[test]
    fn detector_gradients_match_finite_differences() {
        let (store, det) = setup(16, 4, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let pair = rand_pair(&mut rng, 3, 16);

        let loss_of = |store: &ParamStore| -> f64 {
            let mut ctx = Ctx::new(store);
            let a = ctx.tape.constant(pair.f_a.clone().into_dyn());
            let v = ctx.tape.constant(pair.f_v.clone().into_dyn());
            let fwd = det.forward(&mut ctx, a, v).unwrap();
            ctx.tape.scalar(fwd.s)
        };
        let grads = {
            let mut ctx = Ctx::new(&store);
            let a = ctx.tape.constant(pair.f_a.clone().into_dyn());
            let v = ctx.tape.constant(pair.f_v.clone().into_dyn());
            let fwd = det.forward(&mut ctx, a, v).unwrap();
            let g = ctx.tape.backward(fwd.s);
            ctx.param_grads(&g)
        };
        let names: Vec<String> = grads.keys().cloned().collect();
        let mut probe_rng = ChaCha8Rng::seed_from_u64(18);
        let h = 1e-6;
        for _ in 0..8 {
            let name = &names[probe_rng.gen_range(0..names.len())];
            let g = grads[name].as_standard_layout();
            let flat_idx = probe_rng.gen_range(0..g.len());
            let analytic = g.as_slice().unwrap()[flat_idx];
            let mut plus = store.clone();
            {
                let idx = plus.idx(name).unwrap();
                plus.value_mut_at(idx).as_slice_mut().unwrap()[flat_idx] += h;
            }
            let mut minus = store.clone();
            {
                let idx = minus.idx(name).unwrap();
                minus.value_mut_at(idx).as_slice_mut().unwrap()[flat_idx] -= h;
            }
            let fd = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
            let rel = (analytic - fd).abs() / (analytic.abs() + fd.abs()).max(1e-6);
            assert!(rel < 1e-3, "{name}[{flat_idx}]: {analytic} vs {fd}");
        }
    }

    #[test]
    fn wrong_embed_dim_rejected() {
        let (store, det) = setup(16, 8, 1);
        let pair = EmbeddingPair::new(Array2::zeros((3, 8)), Array2::zeros((3, 8))).unwrap();
        assert!(det.classify(&store, &pair).is_err());
    }
}
