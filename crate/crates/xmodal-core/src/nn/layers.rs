//! Layer building blocks: parameter binding context, linear/conv layers,
//! normalization, and residual blocks.
//!
//! Layers own only the *names* of their parameters; values live in a
//! [`ParamStore`]. A fresh [`Ctx`] wraps one [`Tape`] per forward pass and
//! binds each parameter to the tape at most once, so gradients accumulate
//! correctly when a parameter is used several times.

use std::collections::BTreeMap;

use ndarray::ArrayD;
use rand_chacha::ChaCha8Rng;

use super::params::{init, ParamStore};
use super::tape::{Gradients, Tape, TensorId};

/// Per-forward-pass context: a tape plus a bind-once parameter cache.
pub struct Ctx<'a> {
    pub tape: Tape,
    store: &'a ParamStore,
    bound: BTreeMap<usize, TensorId>,
}

impl<'a> Ctx<'a> {
    pub fn new(store: &'a ParamStore) -> Self {
        Self {
            tape: Tape::new(),
            store,
            bound: BTreeMap::new(),
        }
    }

    /// Bind a named parameter to the tape (cached per context).
    pub fn param(&mut self, name: &str) -> TensorId {
        let idx = self
            .store
            .idx(name)
            .unwrap_or_else(|| panic!("unknown parameter: {name}"));
        if let Some(&id) = self.bound.get(&idx) {
            return id;
        }
        let id = self.tape.leaf(self.store.value_at(idx).clone(), true);
        self.bound.insert(idx, id);
        id
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }

    /// Collect gradients for every bound parameter, keyed by parameter name.
    /// Parameters that did not receive a gradient are omitted.
    pub fn param_grads(&self, grads: &Gradients) -> BTreeMap<String, ArrayD<f64>> {
        let mut out = BTreeMap::new();
        for (&idx, &id) in &self.bound {
            if let Some(g) = grads.get(id) {
                out.insert(self.store.name(idx).to_string(), g.clone());
            }
        }
        out
    }
}

/// Fully connected layer mapping `(N, in_dim)` to `(N, out_dim)`.
#[derive(Debug, Clone)]
pub struct Linear {
    w: String,
    b: String,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        prefix: &str,
        in_dim: usize,
        out_dim: usize,
    ) -> Self {
        Self::with_gain(store, rng, prefix, in_dim, out_dim, 1.0)
    }

    /// Like [`Linear::new`] with the weight init scaled by `gain`. Small
    /// gains keep early optimizer steps dominant over the random init,
    /// which speeds up short low-learning-rate runs.
    pub fn with_gain(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        prefix: &str,
        in_dim: usize,
        out_dim: usize,
        gain: f64,
    ) -> Self {
        let w = format!("{prefix}.w");
        let b = format!("{prefix}.b");
        let mut init_w = init::kaiming_uniform(rng, &[out_dim, in_dim], in_dim);
        if gain != 1.0 {
            init_w.mapv_inplace(|v| v * gain);
        }
        store.register(&w, init_w);
        store.register(&b, init::zeros(&[out_dim]));
        Self { w, b }
    }

    pub fn forward(&self, ctx: &mut Ctx, x: TensorId) -> TensorId {
        let w = ctx.param(&self.w);
        let b = ctx.param(&self.b);
        let y = ctx.tape.matmul_nt(x, w);
        ctx.tape.add_bias_row(y, b)
    }
}

/// 2-D convolution layer over `(C, H, W)` feature maps.
#[derive(Debug, Clone)]
pub struct Conv2dLayer {
    w: String,
    b: String,
    stride: (usize, usize),
    pad: (usize, usize),
}

impl Conv2dLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        prefix: &str,
        in_ch: usize,
        out_ch: usize,
        k: (usize, usize),
        stride: (usize, usize),
        pad: (usize, usize),
    ) -> Self {
        let w = format!("{prefix}.w");
        let b = format!("{prefix}.b");
        let fan_in = in_ch * k.0 * k.1;
        store.register(
            &w,
            init::kaiming_uniform(rng, &[out_ch, in_ch, k.0, k.1], fan_in),
        );
        store.register(&b, init::zeros(&[out_ch]));
        Self { w, b, stride, pad }
    }

    pub fn forward(&self, ctx: &mut Ctx, x: TensorId) -> TensorId {
        let w = ctx.param(&self.w);
        let b = ctx.param(&self.b);
        ctx.tape.conv2d(x, w, b, self.stride, self.pad)
    }
}

/// 3-D convolution layer over `(C, D, H, W)` feature maps.
#[derive(Debug, Clone)]
pub struct Conv3dLayer {
    w: String,
    b: String,
    stride: (usize, usize, usize),
    pad: (usize, usize, usize),
}

impl Conv3dLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        prefix: &str,
        in_ch: usize,
        out_ch: usize,
        k: (usize, usize, usize),
        stride: (usize, usize, usize),
        pad: (usize, usize, usize),
    ) -> Self {
        let w = format!("{prefix}.w");
        let b = format!("{prefix}.b");
        let fan_in = in_ch * k.0 * k.1 * k.2;
        store.register(
            &w,
            init::kaiming_uniform(rng, &[out_ch, in_ch, k.0, k.1, k.2], fan_in),
        );
        store.register(&b, init::zeros(&[out_ch]));
        Self { w, b, stride, pad }
    }

    pub fn forward(&self, ctx: &mut Ctx, x: TensorId) -> TensorId {
        let w = ctx.param(&self.w);
        let b = ctx.param(&self.b);
        ctx.tape.conv3d(x, w, b, self.stride, self.pad)
    }
}

/// Feature-map normalization: standardizes over the whole map (all axes) and
/// applies a per-channel affine along axis 0. Statistics are per sample, so
/// inference is deterministic and batch-independent.
#[derive(Debug, Clone)]
pub struct NormLayer {
    gamma: String,
    beta: String,
    eps: f64,
}

impl NormLayer {
    pub fn new(store: &mut ParamStore, prefix: &str, channels: usize) -> Self {
        let gamma = format!("{prefix}.gamma");
        let beta = format!("{prefix}.beta");
        store.register(&gamma, init::ones(&[channels]));
        store.register(&beta, init::zeros(&[channels]));
        Self {
            gamma,
            beta,
            eps: 1e-5,
        }
    }

    pub fn forward(&self, ctx: &mut Ctx, x: TensorId) -> TensorId {
        let gamma = ctx.param(&self.gamma);
        let beta = ctx.param(&self.beta);
        let t = &mut ctx.tape;
        let m = t.mean_all(x);
        let xc = t.sub_bcast(x, m);
        let sq = t.mul(xc, xc);
        let var = t.mean_all(sq);
        let var_eps = t.affine(var, 1.0, self.eps);
        let std = t.sqrt(var_eps);
        let xn = t.div_bcast(xc, std);
        let scaled = t.mul_axis(xn, gamma, 0);
        t.add_axis(scaled, beta, 0)
    }
}

/// Layer normalization for `(T, E)` frame-embedding sequences, normalizing
/// each row over the embedding axis.
#[derive(Debug, Clone)]
pub struct LayerNormSeq {
    gamma: String,
    beta: String,
    eps: f64,
}

impl LayerNormSeq {
    pub fn new(store: &mut ParamStore, prefix: &str, dim: usize) -> Self {
        let gamma = format!("{prefix}.gamma");
        let beta = format!("{prefix}.beta");
        store.register(&gamma, init::ones(&[dim]));
        store.register(&beta, init::zeros(&[dim]));
        Self {
            gamma,
            beta,
            eps: 1e-5,
        }
    }

    pub fn forward(&self, ctx: &mut Ctx, x: TensorId) -> TensorId {
        let gamma = ctx.param(&self.gamma);
        let beta = ctx.param(&self.beta);
        ctx.tape.layer_norm(x, gamma, beta, 1, self.eps)
    }
}

/// Basic 2-D residual block (two 3x3 convs, projection shortcut when the
/// shape changes).
#[derive(Debug, Clone)]
pub struct ResBlock2d {
    conv1: Conv2dLayer,
    n1: NormLayer,
    conv2: Conv2dLayer,
    n2: NormLayer,
    proj: Option<(Conv2dLayer, NormLayer)>,
}

impl ResBlock2d {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        prefix: &str,
        in_ch: usize,
        out_ch: usize,
        stride: (usize, usize),
    ) -> Self {
        let conv1 = Conv2dLayer::new(
            store,
            rng,
            &format!("{prefix}.conv1"),
            in_ch,
            out_ch,
            (3, 3),
            stride,
            (1, 1),
        );
        let n1 = NormLayer::new(store, &format!("{prefix}.n1"), out_ch);
        let conv2 = Conv2dLayer::new(
            store,
            rng,
            &format!("{prefix}.conv2"),
            out_ch,
            out_ch,
            (3, 3),
            (1, 1),
            (1, 1),
        );
        let n2 = NormLayer::new(store, &format!("{prefix}.n2"), out_ch);
        let proj = if in_ch != out_ch || stride != (1, 1) {
            let c = Conv2dLayer::new(
                store,
                rng,
                &format!("{prefix}.proj"),
                in_ch,
                out_ch,
                (1, 1),
                stride,
                (0, 0),
            );
            let n = NormLayer::new(store, &format!("{prefix}.projn"), out_ch);
            Some((c, n))
        } else {
            None
        };
        Self {
            conv1,
            n1,
            conv2,
            n2,
            proj,
        }
    }

    pub fn forward(&self, ctx: &mut Ctx, x: TensorId) -> TensorId {
        let h = self.conv1.forward(ctx, x);
        let h = self.n1.forward(ctx, h);
        let h = ctx.tape.relu(h);
        let h = self.conv2.forward(ctx, h);
        let h = self.n2.forward(ctx, h);
        let sc = match &self.proj {
            Some((c, n)) => {
                let p = c.forward(ctx, x);
                n.forward(ctx, p)
            }
            None => x,
        };
        let sum = ctx.tape.add(h, sc);
        ctx.tape.relu(sum)
    }
}

/// Residual block over `(C, T, H, W)` maps applying 2-D convolutions to each
/// frame independently (kernel depth 1, no temporal stride).
#[derive(Debug, Clone)]
pub struct ResBlock3d {
    conv1: Conv3dLayer,
    n1: NormLayer,
    conv2: Conv3dLayer,
    n2: NormLayer,
    proj: Option<(Conv3dLayer, NormLayer)>,
}

impl ResBlock3d {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        prefix: &str,
        in_ch: usize,
        out_ch: usize,
        spatial_stride: (usize, usize),
    ) -> Self {
        let stride = (1, spatial_stride.0, spatial_stride.1);
        let conv1 = Conv3dLayer::new(
            store,
            rng,
            &format!("{prefix}.conv1"),
            in_ch,
            out_ch,
            (1, 3, 3),
            stride,
            (0, 1, 1),
        );
        let n1 = NormLayer::new(store, &format!("{prefix}.n1"), out_ch);
        let conv2 = Conv3dLayer::new(
            store,
            rng,
            &format!("{prefix}.conv2"),
            out_ch,
            out_ch,
            (1, 3, 3),
            (1, 1, 1),
            (0, 1, 1),
        );
        let n2 = NormLayer::new(store, &format!("{prefix}.n2"), out_ch);
        let proj = if in_ch != out_ch || spatial_stride != (1, 1) {
            let c = Conv3dLayer::new(
                store,
                rng,
                &format!("{prefix}.proj"),
                in_ch,
                out_ch,
                (1, 1, 1),
                stride,
                (0, 0, 0),
            );
            let n = NormLayer::new(store, &format!("{prefix}.projn"), out_ch);
            Some((c, n))
        } else {
            None
        };
        Self {
            conv1,
            n1,
            conv2,
            n2,
            proj,
        }
    }

    pub fn forward(&self, ctx: &mut Ctx, x: TensorId) -> TensorId {
        let h = self.conv1.forward(ctx, x);
        let h = self.n1.forward(ctx, h);
        let h = ctx.tape.relu(h);
        let h = self.conv2.forward(ctx, h);
        let h = self.n2.forward(ctx, h);
        let sc = match &self.proj {
            Some((c, n)) => {
                let p = c.forward(ctx, x);
                n.forward(ctx, p)
            }
            None => x,
        };
        let sum = ctx.tape.add(h, sc);
        ctx.tape.relu(sum)
    }
}

/// Stack of 1-D temporal convolutions over `(C, T)` features (kernel 3,
/// stride 1, same padding), each followed by normalization and ReLU.
#[derive(Debug, Clone)]
pub struct TemporalConv {
    blocks: Vec<(Conv2dLayer, NormLayer)>,
}

impl TemporalConv {
    /// `channels` lists the channel counts including the input, e.g.
    /// `[c_in, c_mid, c_out]` builds two conv layers.
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        prefix: &str,
        channels: &[usize],
    ) -> Self {
        assert!(channels.len() >= 2, "need at least one temporal conv layer");
        let mut blocks = Vec::new();
        for (i, pair) in channels.windows(2).enumerate() {
            let conv = Conv2dLayer::new(
                store,
                rng,
                &format!("{prefix}.conv{i}"),
                pair[0],
                pair[1],
                (3, 1),
                (1, 1),
                (1, 0),
            );
            let norm = NormLayer::new(store, &format!("{prefix}.n{i}"), pair[1]);
            blocks.push((conv, norm));
        }
        Self { blocks }
    }

    pub fn forward(&self, ctx: &mut Ctx, x: TensorId) -> TensorId {
        let shape = ctx.tape.value(x).shape().to_vec();
        assert_eq!(shape.len(), 2, "TemporalConv expects (C, T)");
        let t_len = shape[1];
        let mut h = ctx.tape.reshape(x, &[shape[0], t_len, 1]);
        for (conv, norm) in &self.blocks {
            h = conv.forward(ctx, h);
            h = norm.forward(ctx, h);
            h = ctx.tape.relu(h);
        }
        let out_ch = ctx.tape.value(h).shape()[0];
        ctx.tape.reshape(h, &[out_ch, t_len])
    }
}
