//! The three training losses, per-frame where the formulation demands it.
//!
//! Every loss exists twice: a pure scalar/vector function (easy to compare
//! against independent oracles) and a tape builder producing the same value
//! inside the autodiff graph. Unit tests pin hand-computed anchors and check
//! pure-vs-tape agreement; gradient checks live with the tape ops and the
//! acceptance suite.
//!
//! Conventions: `y = 1 ⇔ real`; natural logs in every BCE; probabilities
//! clamped to `[1e-7, 1 − 1e-7]` before logs; contrastive margin defaults
//! to 1.0.

use ndarray::{Array1, Array2, ArrayView1};

use crate::error::{Error, Result};
use crate::nn::{Tape, TensorId};

/// Probability clamp for BCE logs.
pub const BCE_EPS: f64 = 1e-7;
/// Default contrastive margin.
pub const DEFAULT_MARGIN: f64 = 1.0;

/// How the contrastive distance treats the time axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ContraMode {
    /// Per-frame scalar distance `d_t = |cont_t − sync_t|`, averaged over
    /// frames. This is the formulation used throughout.
    #[default]
    PerFrame,
    /// Ablation variant: one Euclidean norm over the whole sequence.
    SequenceNorm,
}

impl ContraMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "per_frame" => Some(ContraMode::PerFrame),
            "sequence_norm" => Some(ContraMode::SequenceNorm),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            ContraMode::PerFrame => "per_frame",
            ContraMode::SequenceNorm => "sequence_norm",
        }
    }
}

/// Per-frame correlation signals for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationSignals {
    /// `(cos_sim(F_a[t], F_v[t]) + 1) / 2 ∈ [0, 1]`.
    pub sync: Array1<f64>,
    /// `1 − JS(P_a[t], P_v[t]) ∈ [0, 1]`.
    pub cont: Array1<f64>,
}

impl CorrelationSignals {
    pub fn validate(&self) -> Result<()> {
        if self.sync.len() != self.cont.len() {
            return Err(Error::contract(format!(
                "sync has {} frames, cont has {}",
                self.sync.len(),
                self.cont.len()
            )));
        }
        for (name, v) in [("sync", &self.sync), ("cont", &self.cont)] {
            if v.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
                return Err(Error::validation(name, "entries must lie in [0,1]"));
            }
        }
        Ok(())
    }
}

/// Relative weights of the three loss terms in the total objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub w_cls: f64,
    pub w_dist: f64,
    pub w_contra: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            w_cls: 1.0,
            w_dist: 1.0,
            w_contra: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [
            ("w_cls", self.w_cls),
            ("w_dist", self.w_dist),
            ("w_contra", self.w_contra),
        ] {
            if !w.is_finite() || w < 0.0 {
                return Err(Error::validation(name, "must be finite and nonnegative"));
            }
        }
        Ok(())
    }

    pub fn combine(&self, cls: f64, dist: f64, contra: f64) -> f64 {
        self.w_cls * cls + self.w_dist * dist + self.w_contra * contra
    }
}

/// Per-sample loss components; `total = w_cls·cls + w_dist·dist + w_contra·contra`
/// (all weights 1 by default).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub cls: f64,
    pub dist: f64,
    pub contra: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(cls: f64, dist: f64, contra: f64) -> Self {
        Self {
            cls,
            dist,
            contra,
            total: cls + dist + contra,
        }
    }

    pub fn weighted(cls: f64, dist: f64, contra: f64, w: &LossWeights) -> Self {
        Self {
            cls,
            dist,
            contra,
            total: w.combine(cls, dist, contra),
        }
    }
}

fn clamp_prob(s: f64) -> f64 {
    s.clamp(BCE_EPS, 1.0 - BCE_EPS)
}

/// Binary cross-entropy of predicted probability-of-real `s` against the
/// ground-truth label.
pub fn loss_cls(s: f64, y: u8) -> f64 {
    let s = clamp_prob(s);
    let y = f64::from(y);
    -(y * s.ln() + (1.0 - y) * (1.0 - s).ln())
}

/// Per-frame synchronization signal from embedding rows: affinely mapped
/// cosine similarity. Zero-norm rows get cosine 0 (→ sync 0.5); logged once
/// per call.
pub fn sync_signal(f_a: &Array2<f64>, f_v: &Array2<f64>) -> Result<Array1<f64>> {
    if f_a.dim() != f_v.dim() {
        return Err(Error::contract(format!(
            "embedding shapes differ: {:?} vs {:?}",
            f_a.dim(),
            f_v.dim()
        )));
    }
    let t = f_a.nrows();
    let mut sync = Array1::zeros(t);
    let mut warned = false;
    for i in 0..t {
        let a = f_a.row(i);
        let v = f_v.row(i);
        let dot: f64 = a.iter().zip(v.iter()).map(|(x, y)| x * y).sum();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nv: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let cos = if na == 0.0 || nv == 0.0 {
            if !warned {
                log::warn!("zero-norm embedding row at frame {i}; cosine defined as 0");
                warned = true;
            }
            0.0
        } else {
            (dot / (na * nv)).clamp(-1.0, 1.0)
        };
        sync[i] = 0.5 * (cos + 1.0);
    }
    Ok(sync)
}

/// Distillation loss (Eq. 2): per-frame BCE of `sync` against the soft
/// content target, averaged over frames.
pub fn loss_dist(sync: ArrayView1<'_, f64>, cont: ArrayView1<'_, f64>) -> Result<f64> {
    if sync.len() != cont.len() {
        return Err(Error::contract(format!(
            "loss_dist length mismatch: {} vs {}",
            sync.len(),
            cont.len()
        )));
    }
    if sync.is_empty() {
        return Err(Error::contract("loss_dist on empty sequence"));
    }
    let t = sync.len() as f64;
    let mut acc = 0.0;
    for (&s, &c) in sync.iter().zip(cont.iter()) {
        let s = clamp_prob(s);
        acc += -(c * s.ln() + (1.0 - c) * (1.0 - s).ln());
    }
    Ok(acc / t)
}

/// Contrastive loss (Eq. 3–4) with `d_t = |cont_t − sync_t|`:
/// `(1/T)·Σ_t [ y·d_t² + (1−y)·max(margin − d_t, 0)² ]`.
pub fn loss_contra(
    sync: ArrayView1<'_, f64>,
    cont: ArrayView1<'_, f64>,
    y: u8,
    margin: f64,
) -> Result<f64> {
    loss_contra_mode(sync, cont, y, margin, ContraMode::PerFrame)
}

/// Contrastive loss with an explicit distance mode.
pub fn loss_contra_mode(
    sync: ArrayView1<'_, f64>,
    cont: ArrayView1<'_, f64>,
    y: u8,
    margin: f64,
    mode: ContraMode,
) -> Result<f64> {
    if sync.len() != cont.len() {
        return Err(Error::contract(format!(
            "loss_contra length mismatch: {} vs {}",
            sync.len(),
            cont.len()
        )));
    }
    if sync.is_empty() {
        return Err(Error::contract("loss_contra on empty sequence"));
    }
    let yf = f64::from(y);
    let term = |d: f64| yf * d * d + (1.0 - yf) * (margin - d).max(0.0).powi(2);
    match mode {
        ContraMode::PerFrame => {
            let t = sync.len() as f64;
            let acc: f64 = sync
                .iter()
                .zip(cont.iter())
                .map(|(&s, &c)| term((c - s).abs()))
                .sum();
            Ok(acc / t)
        }
        ContraMode::SequenceNorm => {
            let d = sync
                .iter()
                .zip(cont.iter())
                .map(|(&s, &c)| (c - s) * (c - s))
                .sum::<f64>()
                .sqrt();
            Ok(term(d))
        }
    }
}

/// Batch objective (Eq. 5): mean of per-sample totals.
pub fn total_loss(batch: &[LossBreakdown]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::contract("total_loss on empty batch"));
    }
    Ok(batch.iter().map(|b| b.total).sum::<f64>() / batch.len() as f64)
}

// ---------------------------------------------------------------------------
// Tape builders: identical math inside the autodiff graph.
// ---------------------------------------------------------------------------

/// Build the per-frame sync vector `[T]` from embedding nodes `[T × E]`.
pub fn tape_sync_signal(tape: &mut Tape, f_a: TensorId, f_v: TensorId) -> TensorId {
    let prod = tape.mul(f_a, f_v);
    let num = tape.sum_axis(prod, 1);
    let aa = tape.mul(f_a, f_a);
    let na2 = tape.sum_axis(aa, 1);
    let vv = tape.mul(f_v, f_v);
    let nv2 = tape.sum_axis(vv, 1);
    let denom2 = tape.mul(na2, nv2);
    // Floor keeps zero-norm rows finite (cos → 0) and kills their gradient.
    let denom2 = tape.clamp_min(denom2, 1e-24);
    let denom = tape.sqrt(denom2);
    let cos = tape.div(num, denom);
    let cos = tape.clamp(cos, -1.0, 1.0);
    tape.affine(cos, 0.5, 0.5)
}

/// Elementwise BCE of predictions `pred` against (constant) targets, then
/// mean: used by both the classification and distillation losses.
fn tape_bce_mean(tape: &mut Tape, pred: TensorId, target: TensorId) -> TensorId {
    let p = tape.clamp(pred, BCE_EPS, 1.0 - BCE_EPS);
    let ln_p = tape.ln(p);
    let one_minus_p = tape.affine(p, -1.0, 1.0);
    let ln_1mp = tape.ln(one_minus_p);
    let pos = tape.mul(target, ln_p);
    let one_minus_t = tape.affine(target, -1.0, 1.0);
    let negt = tape.mul(one_minus_t, ln_1mp);
    let sum = tape.add(pos, negt);
    let nll = tape.neg(sum);
    tape.mean_all(nll)
}

/// Classification loss node from a predicted-probability node (any shape,
/// typically a single element) and a constant label.
pub fn tape_loss_cls(tape: &mut Tape, s: TensorId, y: u8) -> TensorId {
    let shape = tape.value(s).raw_dim();
    let target = tape.constant(ndarray::ArrayD::from_elem(shape, f64::from(y)));
    tape_bce_mean(tape, s, target)
}

/// Distillation loss node from a sync node `[T]` and constant content labels.
pub fn tape_loss_dist(tape: &mut Tape, sync: TensorId, cont: &Array1<f64>) -> TensorId {
    assert_eq!(
        tape.value(sync).len(),
        cont.len(),
        "tape_loss_dist length mismatch"
    );
    let target = tape.constant(cont.clone().into_dyn());
    tape_bce_mean(tape, sync, target)
}

/// Contrastive loss node from a sync node `[T]` and constant content labels.
pub fn tape_loss_contra(
    tape: &mut Tape,
    sync: TensorId,
    cont: &Array1<f64>,
    y: u8,
    margin: f64,
    mode: ContraMode,
) -> TensorId {
    assert_eq!(
        tape.value(sync).len(),
        cont.len(),
        "tape_loss_contra length mismatch"
    );
    let cont_id = tape.constant(cont.clone().into_dyn());
    let diff = tape.sub(cont_id, sync);
    match mode {
        ContraMode::PerFrame => {
            let d = tape.abs(diff);
            if y == 1 {
                let d2 = tape.mul(d, d);
                tape.mean_all(d2)
            } else {
                let md = tape.affine(d, -1.0, margin);
                let md = tape.clamp_min(md, 0.0);
                let md2 = tape.mul(md, md);
                tape.mean_all(md2)
            }
        }
        ContraMode::SequenceNorm => {
            let sq = tape.mul(diff, diff);
            let ss = tape.sum_axis(sq, 0);
            let ss = tape.clamp_min(ss, 1e-24);
            let d = tape.sqrt(ss);
            if y == 1 {
                let d2 = tape.mul(d, d);
                tape.mean_all(d2)
            } else {
                let md = tape.affine(d, -1.0, margin);
                let md = tape.clamp_min(md, 0.0);
                let md2 = tape.mul(md, md);
                tape.mean_all(md2)
            }
        }
    }
}
