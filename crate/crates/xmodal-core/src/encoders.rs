//! Audio and visual encoders producing per-frame embeddings `F_a`, `F_v`.
//!
//! Two presets share one interface: `tiny` (two residual stages, width 16)
//! keeps every test CPU-cheap; `paper` mirrors the full-scale topology
//! (ResNet-34-style audio stack, 3-D stem + residual frontend + temporal
//! conv network for video, 128-dim embeddings).
//!
//! The audio encoder downsamples time by 4 so one audio embedding lines up
//! with each video frame (`T_a = 4·T` in, `T` out). The visual temporal
//! network is sequence-length preserving.

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;

use crate::dataio::FACE_SIZE;
use crate::error::{Error, Result};
use crate::nn::{
    Conv2dLayer, Conv3dLayer, Ctx, LayerNormSeq, Linear, NormLayer, ParamStore, ResBlock2d,
    ResBlock3d, TemporalConv, TensorId,
};

/// Temporal downsampling factor of the audio encoder.
pub const AUDIO_DOWNSAMPLE: usize = 4;

/// Init gain for the final embedding heads. Deliberately small so that the
/// short, low-learning-rate training runs this crate targets can rotate the
/// audio/visual embedding spaces into alignment; see the trainer docs.
pub const HEAD_GAIN: f64 = 0.3;

/// Network size preset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Preset {
    /// Desk-scale: 2 residual stages, width 16.
    #[default]
    Tiny,
    /// Full-scale topology: ResNet-34 audio, deep 3-D visual frontend.
    Paper,
}

impl Preset {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "tiny" => Some(Preset::Tiny),
            "paper" => Some(Preset::Paper),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Preset::Tiny => "tiny",
            Preset::Paper => "paper",
        }
    }
}

/// Encoder hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderConfig {
    pub preset: Preset,
    pub embed_dim: usize,
}

impl EncoderConfig {
    pub fn tiny() -> Self {
        Self {
            preset: Preset::Tiny,
            embed_dim: 16,
        }
    }

    pub fn paper() -> Self {
        Self {
            preset: Preset::Paper,
            embed_dim: 128,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 {
            return Err(Error::validation("embed_dim", "must be positive"));
        }
        Ok(())
    }
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self::tiny()
    }
}

/// Per-frame embeddings of one sample: both `[T × embed_dim]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingPair {
    pub f_a: Array2<f64>,
    pub f_v: Array2<f64>,
}

impl EmbeddingPair {
    pub fn new(f_a: Array2<f64>, f_v: Array2<f64>) -> Result<Self> {
        let pair = Self { f_a, f_v };
        pair.validate()?;
        Ok(pair)
    }

    pub fn frames(&self) -> usize {
        self.f_a.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        if self.f_a.dim() != self.f_v.dim() {
            return Err(Error::contract(format!(
                "embedding shapes differ: {:?} vs {:?}",
                self.f_a.dim(),
                self.f_v.dim()
            )));
        }
        if self.f_a.nrows() == 0 {
            return Err(Error::contract("embedding pair with zero frames"));
        }
        for (name, m) in [("F_a", &self.f_a), ("F_v", &self.f_v)] {
            if m.iter().any(|x| !x.is_finite()) {
                return Err(Error::validation(name, "non-finite entries"));
            }
        }
        Ok(())
    }
}

/// Per-preset topology constants.
struct ArchPlan {
    stem_ch: usize,
    stage_widths: Vec<usize>,
    stage_blocks: Vec<usize>,
    /// Audio stage strides (time, freq), applied on the first block.
    audio_strides: Vec<(usize, usize)>,
    /// Visual spatial stride per stage, applied on the first block.
    visual_strides: Vec<(usize, usize)>,
    /// Non-overlapping average pooling before the visual stem (1 = none).
    visual_pre_pool: usize,
    visual_stem_k: (usize, usize, usize),
    visual_stem_stride: (usize, usize, usize),
    visual_stem_pad: (usize, usize, usize),
}

fn plan(preset: Preset) -> ArchPlan {
    match preset {
        Preset::Tiny => ArchPlan {
            stem_ch: 16,
            stage_widths: vec![16, 16],
            stage_blocks: vec![1, 1],
            audio_strides: vec![(2, 2), (2, 2)],
            visual_strides: vec![(2, 2), (2, 2)],
            visual_pre_pool: 8,
            visual_stem_k: (3, 3, 3),
            visual_stem_stride: (1, 1, 1),
            visual_stem_pad: (1, 1, 1),
        },
        Preset::Paper => ArchPlan {
            stem_ch: 64,
            stage_widths: vec![64, 128, 256, 512],
            stage_blocks: vec![3, 4, 6, 3],
            audio_strides: vec![(1, 1), (2, 2), (2, 2), (1, 1)],
            visual_strides: vec![(1, 1), (2, 2), (2, 2), (2, 2)],
            visual_pre_pool: 1,
            visual_stem_k: (5, 7, 7),
            visual_stem_stride: (1, 2, 2),
            visual_stem_pad: (2, 3, 3),
        },
    }
}

/// 2-D residual conv net over the MFCC "image" `(T_a, n_mfcc)`.
#[derive(Debug, Clone)]
pub struct AudioEncoder {
    stem: Conv2dLayer,
    stem_norm: NormLayer,
    blocks: Vec<ResBlock2d>,
    head_norm: LayerNormSeq,
    head: Linear,
}

impl AudioEncoder {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        prefix: &str,
        cfg: &EncoderConfig,
    ) -> Self {
        let p = plan(cfg.preset);
        let stem = Conv2dLayer::new(
            store,
            rng,
            &format!("{prefix}.stem"),
            1,
            p.stem_ch,
            (3, 3),
            (1, 1),
            (1, 1),
        );
        let stem_norm = NormLayer::new(store, &format!("{prefix}.stem_norm"), p.stem_ch);
        let mut blocks = Vec::new();
        let mut in_ch = p.stem_ch;
        for (si, (&width, &count)) in p.stage_widths.iter().zip(&p.stage_blocks).enumerate() {
            for bi in 0..count {
                let stride = if bi == 0 { p.audio_strides[si] } else { (1, 1) };
                blocks.push(ResBlock2d::new(
                    store,
                    rng,
                    &format!("{prefix}.s{si}b{bi}"),
                    in_ch,
                    width,
                    stride,
                ));
                in_ch = width;
            }
        }
        let head_norm = LayerNormSeq::new(store, &format!("{prefix}.head_norm"), in_ch);
        let head = Linear::with_gain(
            store,
            rng,
            &format!("{prefix}.head"),
            in_ch,
            cfg.embed_dim,
            HEAD_GAIN,
        );
        Self {
            stem,
            stem_norm,
            blocks,
            head_norm,
            head,
        }
    }

    /// `(T_a, n_mfcc)` node → `(T, embed_dim)` node with `T = T_a / 4`.
    pub fn forward(&self, ctx: &mut Ctx, x: TensorId) -> Result<TensorId> {
        let shape = ctx.tape.value(x).shape().to_vec();
        if shape.len() != 2 {
            return Err(Error::contract(format!(
                "audio encoder expects a 2-D input, got {shape:?}"
            )));
        }
        let (t_a, n_mfcc) = (shape[0], shape[1]);
        if t_a < AUDIO_DOWNSAMPLE || t_a % AUDIO_DOWNSAMPLE != 0 {
            return Err(Error::contract(format!(
                "audio frames T_a={t_a} must be a positive multiple of {AUDIO_DOWNSAMPLE}"
            )));
        }
        let mut h = ctx.tape.reshape(x, &[1, t_a, n_mfcc]);
        h = self.stem.forward(ctx, h);
        h = self.stem_norm.forward(ctx, h);
        h = ctx.tape.relu(h);
        for b in &self.blocks {
            h = b.forward(ctx, h);
        }
        // (C, T, F') → mean over the residual frequency axis → (C, T) → (T, C).
        h = ctx.tape.mean_axis(h, 2);
        h = ctx.tape.permute(h, &[1, 0]);
        h = self.head_norm.forward(ctx, h);
        Ok(self.head.forward(ctx, h))
    }
}

/// 3-D stem + per-frame residual frontend + temporal conv network.
#[derive(Debug, Clone)]
pub struct VisualEncoder {
    pre_pool: usize,
    stem: Conv3dLayer,
    stem_norm: NormLayer,
    blocks: Vec<ResBlock3d>,
    temporal: TemporalConv,
    head_norm: LayerNormSeq,
    head: Linear,
}

impl VisualEncoder {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        prefix: &str,
        cfg: &EncoderConfig,
    ) -> Self {
        let p = plan(cfg.preset);
        let stem = Conv3dLayer::new(
            store,
            rng,
            &format!("{prefix}.stem"),
            1,
            p.stem_ch,
            p.visual_stem_k,
            p.visual_stem_stride,
            p.visual_stem_pad,
        );
        let stem_norm = NormLayer::new(store, &format!("{prefix}.stem_norm"), p.stem_ch);
        let mut blocks = Vec::new();
        let mut in_ch = p.stem_ch;
        for (si, (&width, &count)) in p.stage_widths.iter().zip(&p.stage_blocks).enumerate() {
            for bi in 0..count {
                let stride = if bi == 0 { p.visual_strides[si] } else { (1, 1) };
                blocks.push(ResBlock3d::new(
                    store,
                    rng,
                    &format!("{prefix}.s{si}b{bi}"),
                    in_ch,
                    width,
                    stride,
                ));
                in_ch = width;
            }
        }
        let temporal = TemporalConv::new(store, rng, &format!("{prefix}.temporal"), &[in_ch, in_ch]);
        let head_norm = LayerNormSeq::new(store, &format!("{prefix}.head_norm"), in_ch);
        let head = Linear::with_gain(
            store,
            rng,
            &format!("{prefix}.head"),
            in_ch,
            cfg.embed_dim,
            HEAD_GAIN,
        );
        Self {
            pre_pool: p.visual_pre_pool,
            stem,
            stem_norm,
            blocks,
            temporal,
            head_norm,
            head,
        }
    }

    /// `(T, 112, 112)` node → `(T, embed_dim)` node.
    pub fn forward(&self, ctx: &mut Ctx, x: TensorId) -> Result<TensorId> {
        let shape = ctx.tape.value(x).shape().to_vec();
        if shape.len() != 3 {
            return Err(Error::contract(format!(
                "visual encoder expects a 3-D input, got {shape:?}"
            )));
        }
        let (t, height, width) = (shape[0], shape[1], shape[2]);
        if t == 0 {
            return Err(Error::contract("visual encoder needs at least one frame"));
        }
        if height != FACE_SIZE || width != FACE_SIZE {
            return Err(Error::contract(format!(
                "face frames must be {FACE_SIZE}×{FACE_SIZE}, got {height}×{width}"
            )));
        }
        let mut h = ctx.tape.reshape(x, &[1, t, height, width]);
        if self.pre_pool > 1 {
            h = ctx.tape.avg_pool_hw(h, self.pre_pool);
        }
        h = self.stem.forward(ctx, h);
        h = self.stem_norm.forward(ctx, h);
        h = ctx.tape.relu(h);
        for b in &self.blocks {
            h = b.forward(ctx, h);
        }
        // (C, T, h', w') → spatial mean → (C, T).
        h = ctx.tape.mean_axis(h, 3);
        h = ctx.tape.mean_axis(h, 2);
        h = self.temporal.forward(ctx, h);
        h = ctx.tape.permute(h, &[1, 0]);
        h = self.head_norm.forward(ctx, h);
        Ok(self.head.forward(ctx, h))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{ArrayD, IxDyn};
    use rand::{Rng, SeedableRng};

    fn tiny_setup() -> (ParamStore, AudioEncoder, VisualEncoder) {
        let cfg = EncoderConfig::tiny();
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let a = AudioEncoder::new(&mut store, &mut rng, "audio_enc", &cfg);
        let v = VisualEncoder::new(&mut store, &mut rng, "visual_enc", &cfg);
        (store, a, v)
    }

    fn rand_dyn(rng: &mut ChaCha8Rng, shape: &[usize]) -> ArrayD<f64> {
        ArrayD::from_shape_fn(IxDyn(shape), |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn audio_shapes_follow_contract() {
        let (store, enc, _) = tiny_setup();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for t_a in [4usize, 8, 96] {
            let mut ctx = Ctx::new(&store);
            let x = ctx.tape.constant(rand_dyn(&mut rng, &[t_a, 13]));
            let out = enc.forward(&mut ctx, x).unwrap();
            assert_eq!(
                ctx.tape.value(out).shape(),
                &[t_a / 4, 16],
                "T_a={t_a} should give T={}x16",
                t_a / 4
            );
            assert!(ctx.tape.value(out).iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn audio_rejects_bad_shapes() {
        let (store, enc, _) = tiny_setup();
        let mut ctx = Ctx::new(&store);
        let x = ctx.tape.constant(ArrayD::zeros(IxDyn(&[6, 13])));
        assert!(enc.forward(&mut ctx, x).is_err(), "T_a=6 not divisible by 4");
        let x3 = ctx.tape.constant(ArrayD::zeros(IxDyn(&[4, 13, 1])));
        assert!(enc.forward(&mut ctx, x3).is_err(), "rank-3 audio input");
    }

    #[test]
    fn visual_shapes_follow_contract() {
        let (store, _, enc) = tiny_setup();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for t in [1usize, 2, 5] {
            let mut ctx = Ctx::new(&store);
            let x = ctx.tape.constant(rand_dyn(&mut rng, &[t, 112, 112]));
            let out = enc.forward(&mut ctx, x).unwrap();
            assert_eq!(ctx.tape.value(out).shape(), &[t, 16]);
            assert!(ctx.tape.value(out).iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn visual_rejects_wrong_spatial_size() {
        let (store, _, enc) = tiny_setup();
        let mut ctx = Ctx::new(&store);
        let x = ctx.tape.constant(ArrayD::zeros(IxDyn(&[2, 56, 56])));
        assert!(enc.forward(&mut ctx, x).is_err());
    }

    #[test]
    fn zero_and_constant_inputs_stay_finite() {
        let (store, a, v) = tiny_setup();
        let mut ctx = Ctx::new(&store);
        let xa = ctx.tape.constant(ArrayD::zeros(IxDyn(&[8, 13])));
        let fa = a.forward(&mut ctx, xa).unwrap();
        assert!(ctx.tape.value(fa).iter().all(|x| x.is_finite()));

        let xv = ctx
            .tape
            .constant(ArrayD::from_elem(IxDyn(&[2, 112, 112]), 0.5));
        let fv = v.forward(&mut ctx, xv).unwrap();
        assert!(ctx.tape.value(fv).iter().all(|x| x.is_finite()));
    }

    #[test]
    fn forward_is_deterministic() {
        let (store, enc, _) = tiny_setup();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let input = rand_dyn(&mut rng, &[8, 13]);
        let run = |input: &ArrayD<f64>| {
            let mut ctx = Ctx::new(&store);
            let x = ctx.tape.constant(input.clone());
            let out = enc.forward(&mut ctx, x).unwrap();
            ctx.tape.value(out).clone()
        };
        assert_eq!(run(&input), run(&input), "bitwise identical reruns");
    }

    #[test]
    fn matching_t_across_streams() {
        let (store, a, v) = tiny_setup();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let t = 3;
        let mut ctx = Ctx::new(&store);
        let xa = ctx.tape.constant(rand_dyn(&mut rng, &[4 * t, 13]));
        let xv = ctx.tape.constant(rand_dyn(&mut rng, &[t, 112, 112]));
        let fa = a.forward(&mut ctx, xa).unwrap();
        let fv = v.forward(&mut ctx, xv).unwrap();
        let pair = EmbeddingPair::new(
            ctx.tape
                .value(fa)
                .clone()
                .into_dimensionality::<ndarray::Ix2>()
                .unwrap(),
            ctx.tape
                .value(fv)
                .clone()
                .into_dimensionality::<ndarray::Ix2>()
                .unwrap(),
        )
        .unwrap();
        assert_eq!(pair.frames(), t);
    }

    #[test]
    fn paper_preset_shapes() {
        let cfg = EncoderConfig::paper();
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = AudioEncoder::new(&mut store, &mut rng, "audio_enc", &cfg);
        let mut ctx = Ctx::new(&store);
        let xa = ctx.tape.constant(rand_dyn(&mut rng, &[8, 13]));
        let fa = a.forward(&mut ctx, xa).unwrap();
        assert_eq!(ctx.tape.value(fa).shape(), &[2, 128]);

        let v = VisualEncoder::new(&mut store, &mut rng, "visual_enc", &cfg);
        let mut ctx = Ctx::new(&store);
        let xv = ctx.tape.constant(rand_dyn(&mut rng, &[1, 112, 112]));
        let fv = v.forward(&mut ctx, xv).unwrap();
        assert_eq!(ctx.tape.value(fv).shape(), &[1, 128]);
    }

    /// Finite-difference probe of d(mean of weighted output)/d(param) for a
    /// few random parameter coordinates in each encoder.
    #[test]
    fn gradient_flow_matches_finite_differences() {
        let cfg = EncoderConfig::tiny();
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = AudioEncoder::new(&mut store, &mut rng, "audio_enc", &cfg);
        let v = VisualEncoder::new(&mut store, &mut rng, "visual_enc", &cfg);
        let xa_host = rand_dyn(&mut rng, &[8, 13]);
        let xv_host = rand_dyn(&mut rng, &[2, 112, 112]);
        let coeff_a = rand_dyn(&mut rng, &[2, 16]);
        let coeff_v = rand_dyn(&mut rng, &[2, 16]);

        let loss_of = |store: &ParamStore| -> f64 {
            let mut ctx = Ctx::new(store);
            let xa = ctx.tape.constant(xa_host.clone());
            let xv = ctx.tape.constant(xv_host.clone());
            let fa = a.forward(&mut ctx, xa).unwrap();
            let fv = v.forward(&mut ctx, xv).unwrap();
            let ca = ctx.tape.constant(coeff_a.clone());
            let cv = ctx.tape.constant(coeff_v.clone());
            let pa = ctx.tape.mul(fa, ca);
            let pv = ctx.tape.mul(fv, cv);
            let ma = ctx.tape.mean_all(pa);
            let mv = ctx.tape.mean_all(pv);
            let s = ctx.tape.add(ma, mv);
            ctx.tape.scalar(s)
        };

        // Analytic gradients once.
        let grads = {
            let mut ctx = Ctx::new(&store);
            let xa = ctx.tape.constant(xa_host.clone());
            let xv = ctx.tape.constant(xv_host.clone());
            let fa = a.forward(&mut ctx, xa).unwrap();
            let fv = v.forward(&mut ctx, xv).unwrap();
            let ca = ctx.tape.constant(coeff_a.clone());
            let cv = ctx.tape.constant(coeff_v.clone());
            let pa = ctx.tape.mul(fa, ca);
            let pv = ctx.tape.mul(fv, cv);
            let ma = ctx.tape.mean_all(pa);
            let mv = ctx.tape.mean_all(pv);
            let s = ctx.tape.add(ma, mv);
            let g = ctx.tape.backward(s);
            ctx.param_grads(&g)
        };

        // Sample a few coordinates from parameters across both encoders.
        let mut probe_rng = ChaCha8Rng::seed_from_u64(7);
        let names: Vec<String> = grads.keys().cloned().collect();
        let mut checked = 0usize;
        let h = 1e-5;
        for _ in 0..10 {
            let name = &names[probe_rng.gen_range(0..names.len())];
            let g = grads[name].as_standard_layout();
            let flat_idx = probe_rng.gen_range(0..g.len());
            let analytic = g.as_slice().expect("standard layout after conversion")[flat_idx];

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
            assert!(
                rel < 1e-3,
                "{name}[{flat_idx}]: analytic {analytic} vs fd {fd} (rel {rel})"
            );
            checked += 1;
        }
        assert!(checked >= 5, "too few probes landed");
    }
}
