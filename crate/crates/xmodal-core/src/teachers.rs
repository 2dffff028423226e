//! Teacher distributions and content-correlation soft labels.
//!
//! ASR and VSR teachers emit per-frame probability distributions over a
//! character vocabulary (`P_a`, `P_v`). The content label for a frame is
//! `Cont = 1 − JS(P_a, P_v)` with base-2 JS divergence, so `Cont ∈ [0, 1]`
//! and can serve directly as a BCE target for the synchronization signal.

use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataio::synthetic::PROTO_GRID;
use crate::dataio::{VideoSample, AUDIO_FRAMES_PER_VIDEO_FRAME, MFCC_COEFFS};
use crate::error::{Error, Result};

/// Default character vocabulary: 26 letters, 10 digits, space, apostrophe,
/// blank, pad.
pub const DEFAULT_VOCAB: usize = 40;

/// Row-stochasticity tolerance for incoming distributions.
pub const ROW_SUM_TOL: f64 = 1e-6;

/// Per-frame teacher outputs for one clip.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherDistributions {
    /// ASR distributions `[T × V]` at the video frame rate.
    pub p_a: Array2<f64>,
    /// VSR distributions `[T × V]`.
    pub p_v: Array2<f64>,
}

impl TeacherDistributions {
    pub fn t(&self) -> usize {
        self.p_a.nrows()
    }

    pub fn vocab(&self) -> usize {
        self.p_a.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        if self.p_a.dim() != self.p_v.dim() {
            return Err(Error::validation(
                "p_v",
                format!("shape {:?} != P_a shape {:?}", self.p_v.dim(), self.p_a.dim()),
            ));
        }
        for (name, m) in [("p_a", &self.p_a), ("p_v", &self.p_v)] {
            for (i, row) in m.rows().into_iter().enumerate() {
                validate_row(row).map_err(|e| {
                    Error::validation(name, format!("row {i}: {e}"))
                })?;
            }
        }
        Ok(())
    }
}

/// Per-frame content-consistency soft labels, `cont[t] = 1 − JS(P_a[t], P_v[t])`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContentLabels {
    pub cont: Array1<f64>,
}

fn validate_row(row: ArrayView1<'_, f64>) -> Result<()> {
    let mut sum = 0.0;
    for &v in row.iter() {
        if !v.is_finite() || v < 0.0 {
            return Err(Error::validation(
                "distribution",
                format!("negative or non-finite entry {v}"),
            ));
        }
        sum += v;
    }
    if (sum - 1.0).abs() > ROW_SUM_TOL {
        return Err(Error::validation(
            "distribution",
            format!("row sums to {sum}, not 1 ± {ROW_SUM_TOL}"),
        ));
    }
    Ok(())
}

/// Jensen-Shannon divergence with base-2 logs: `½KL(p‖m) + ½KL(q‖m)` with
/// `m = (p+q)/2`. Zero-probability terms contribute zero (limit convention).
/// The result is clamped to `[0, 1]` to absorb floating-point overshoot.
pub fn js_divergence(p: ArrayView1<'_, f64>, q: ArrayView1<'_, f64>) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::validation(
            "distribution",
            format!("length mismatch: {} vs {}", p.len(), q.len()),
        ));
    }
    validate_row(p)?;
    validate_row(q)?;
    let mut js = 0.0;
    for (&pi, &qi) in p.iter().zip(q.iter()) {
        let mi = 0.5 * (pi + qi);
        if pi > 0.0 {
            js += 0.5 * pi * (pi / mi).log2();
        }
        if qi > 0.0 {
            js += 0.5 * qi * (qi / mi).log2();
        }
    }
    Ok(js.clamp(0.0, 1.0))
}

/// Per-frame content labels from teacher distributions.
pub fn content_labels(dists: &TeacherDistributions) -> Result<ContentLabels> {
    dists.validate()?;
    let t = dists.t();
    let mut cont = Array1::zeros(t);
    for i in 0..t {
        let js = js_divergence(dists.p_a.row(i), dists.p_v.row(i))
            .map_err(|e| Error::validation("teacher", format!("frame {i}: {e}")))?;
        cont[i] = 1.0 - js;
    }
    Ok(ContentLabels { cont })
}

/// Resample teacher output from the 100 Hz audio frame rate to the 25 Hz
/// video rate by averaging consecutive groups of four rows and renormalizing.
pub fn resample_to_video_rate(p: &Array2<f64>) -> Result<Array2<f64>> {
    let rows = p.nrows();
    if rows % AUDIO_FRAMES_PER_VIDEO_FRAME != 0 {
        return Err(Error::validation(
            "teacher",
            format!("row count {rows} is not a multiple of {AUDIO_FRAMES_PER_VIDEO_FRAME}"),
        ));
    }
    let t = rows / AUDIO_FRAMES_PER_VIDEO_FRAME;
    let mut out = Array2::zeros((t, p.ncols()));
    for i in 0..t {
        let mut acc = Array1::<f64>::zeros(p.ncols());
        for j in 0..AUDIO_FRAMES_PER_VIDEO_FRAME {
            acc += &p.row(i * AUDIO_FRAMES_PER_VIDEO_FRAME + j);
        }
        let sum = acc.sum();
        if sum <= 0.0 {
            return Err(Error::validation("teacher", format!("group {i} sums to {sum}")));
        }
        acc.mapv_inplace(|v| v / sum);
        out.row_mut(i).assign(&acc);
    }
    Ok(out)
}

/// Provider of per-frame teacher distributions.
pub trait Teacher {
    fn distributions(&self, sample: &VideoSample) -> Result<TeacherDistributions>;
}

/// Desk-scale stand-in for pretrained ASR/VSR models.
///
/// It recognizes the synthetic corpus's content classes by nearest-prototype
/// matching in each modality, converts class affinities to a distribution
/// over the character vocabulary (class `k` maps to token `k·V/K`), and adds
/// tiny seeded logit jitter so distributions are soft but deterministic.
#[derive(Debug, Clone)]
pub struct MockTeacher {
    pub vocab: usize,
    pub seed: u64,
    /// Softmax temperatures over squared prototype distances.
    pub tau_audio: f64,
    pub tau_visual: f64,
}

impl Default for MockTeacher {
    fn default() -> Self {
        Self {
            vocab: DEFAULT_VOCAB,
            seed: 0,
            tau_audio: 3.0,
            tau_visual: 3.0,
        }
    }
}

impl MockTeacher {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    fn class_to_token(&self, k: usize, num_classes: usize) -> usize {
        k * (self.vocab / num_classes)
    }

    fn softmax_over_classes(&self, d2: &[f64], tau: f64, jitter: &mut ChaCha8Rng) -> Vec<f64> {
        let logits: Vec<f64> = d2
            .iter()
            .map(|&d| -d / tau + jitter.gen_range(-0.1..0.1))
            .collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / sum).collect()
    }
}

impl Teacher for MockTeacher {
    fn distributions(&self, sample: &VideoSample) -> Result<TeacherDistributions> {
        use crate::dataio::synthetic::{
            audio_prototypes, downsample_frame, visual_prototypes, NUM_CONTENT_CLASSES,
        };
        sample.validate()?;
        if self.vocab < NUM_CONTENT_CLASSES {
            return Err(Error::validation("vocab", "vocab smaller than class count"));
        }
        let t = sample.t;
        let k = NUM_CONTENT_CLASSES;
        let mut p_a = Array2::zeros((t, self.vocab));
        let mut p_v = Array2::zeros((t, self.vocab));
        // One jitter stream per sample, seeded jointly by teacher seed and
        // sample identity, so output is a pure function of (sample, seed).
        let mut id_hash: u64 = 0xcbf2_9ce4_8422_2325;
        for b in sample.entry.sample_id.bytes() {
            id_hash = (id_hash ^ b as u64).wrapping_mul(0x100_0000_01b3);
        }
        let mut jitter = ChaCha8Rng::seed_from_u64(self.seed ^ id_hash);

        let aprotos = audio_prototypes();
        let vprotos = visual_prototypes();
        for i in 0..t {
            // Audio: average the 4 MFCC rows backing this video frame.
            let mut avg = [0.0f64; MFCC_COEFFS];
            for j in 0..AUDIO_FRAMES_PER_VIDEO_FRAME {
                let row = sample.audio.mfcc.row(i * AUDIO_FRAMES_PER_VIDEO_FRAME + j);
                for (c, slot) in avg.iter_mut().enumerate() {
                    *slot += row[c];
                }
            }
            for slot in avg.iter_mut() {
                *slot /= AUDIO_FRAMES_PER_VIDEO_FRAME as f64;
            }
            let d2a: Vec<f64> = (0..k)
                .map(|class| {
                    (0..MFCC_COEFFS)
                        .map(|c| (avg[c] - aprotos[[class, c]]).powi(2))
                        .sum()
                })
                .collect();
            let wa = self.softmax_over_classes(&d2a, self.tau_audio, &mut jitter);
            for (class, &w) in wa.iter().enumerate() {
                p_a[[i, self.class_to_token(class, k)]] += w;
            }

            // Visual: pool the frame back to the prototype grid.
            let small = downsample_frame(sample.faces.frames.index_axis(Axis(0), i));
            let d2v: Vec<f64> = (0..k)
                .map(|class| {
                    let mut acc = 0.0;
                    for y in 0..PROTO_GRID {
                        for x in 0..PROTO_GRID {
                            acc += (small[[y, x]] - vprotos[[class, y, x]]).powi(2);
                        }
                    }
                    acc
                })
                .collect();
            let wv = self.softmax_over_classes(&d2v, self.tau_visual, &mut jitter);
            for (class, &w) in wv.iter().enumerate() {
                p_v[[i, self.class_to_token(class, k)]] += w;
            }
        }
        let dists = TeacherDistributions { p_a, p_v };
        dists.validate()?;
        Ok(dists)
    }
}

// ---------------------------------------------------------------------------
// Cache file: magic `XMTL` + version byte `1`, then V and T as u32 LE, then
// P_a rows, then P_v rows as f32 LE.
// ---------------------------------------------------------------------------

/// 4-byte magic prefix of teacher label cache files.
pub const TEACHER_CACHE_MAGIC: &[u8; 4] = b"XMTL";
/// Current cache format version byte.
pub const TEACHER_CACHE_VERSION: u8 = b'1';

/// Quantize a row to `f32` while keeping the f64 sum of the stored values
/// within tolerance of 1. Correction is skipped when rounding alone stays
/// within half the tolerance, which keeps write→read→write bitwise stable.
fn quantize_row(row: ArrayView1<'_, f64>) -> Vec<f32> {
    let mut out: Vec<f32> = row.iter().map(|&v| v as f32).collect();
    let sum: f64 = out.iter().map(|&v| v as f64).sum();
    let err = 1.0 - sum;
    if err.abs() > ROW_SUM_TOL / 2.0 {
        if let Some((imax, _)) = out
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        {
            out[imax] = ((out[imax] as f64) + err) as f32;
        }
    }
    out
}

/// Write teacher distributions to a cache file.
pub fn cache_labels(path: &Path, dists: &TeacherDistributions) -> Result<()> {
    dists.validate()?;
    let (t, v) = dists.p_a.dim();
    let mut buf = Vec::with_capacity(5 + 8 + 8 * t * v);
    buf.extend_from_slice(TEACHER_CACHE_MAGIC);
    buf.push(TEACHER_CACHE_VERSION);
    buf.extend_from_slice(&(v as u32).to_le_bytes());
    buf.extend_from_slice(&(t as u32).to_le_bytes());
    for m in [&dists.p_a, &dists.p_v] {
        for row in m.rows() {
            for q in quantize_row(row) {
                buf.extend_from_slice(&q.to_le_bytes());
            }
        }
    }
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Read a teacher label cache file.
pub fn load_cached(path: &Path) -> Result<TeacherDistributions> {
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if buf.len() < 5 || &buf[..4] != TEACHER_CACHE_MAGIC {
        return Err(Error::Format {
            path: path.to_path_buf(),
            msg: "bad magic: not a teacher cache file".into(),
        });
    }
    if buf[4] != TEACHER_CACHE_VERSION {
        return Err(Error::VersionMismatch {
            found: u32::from(buf[4]),
            expected: u32::from(TEACHER_CACHE_VERSION),
        });
    }
    if buf.len() < 13 {
        return Err(Error::Corrupt {
            path: path.to_path_buf(),
            msg: "truncated header".into(),
        });
    }
    let v = u32::from_le_bytes(buf[5..9].try_into().unwrap()) as usize;
    let t = u32::from_le_bytes(buf[9..13].try_into().unwrap()) as usize;
    let need = 13 + 2 * 4 * t * v;
    if buf.len() != need {
        return Err(Error::Corrupt {
            path: path.to_path_buf(),
            msg: format!("expected {need} bytes for T={t}, V={v}; found {}", buf.len()),
        });
    }
    let read_matrix = |offset: usize| -> Array2<f64> {
        let mut m = Array2::zeros((t, v));
        for (i, slot) in m.iter_mut().enumerate() {
            let at = offset + 4 * i;
            *slot = f32::from_le_bytes(buf[at..at + 4].try_into().unwrap()) as f64;
        }
        m
    };
    let p_a = read_matrix(13);
    let p_v = read_matrix(13 + 4 * t * v);
    let dists = TeacherDistributions { p_a, p_v };
    dists.validate().map_err(|e| Error::Corrupt {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    Ok(dists)
}

/// Teacher that serves precomputed distributions from a cache directory,
/// keyed by sample id.
#[derive(Debug, Clone)]
pub struct CachedTeacher {
    dir: PathBuf,
}

impl CachedTeacher {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn path_for(&self, sample_id: &str) -> PathBuf {
        self.dir.join(format!("{sample_id}.xmtl"))
    }
}

impl Teacher for CachedTeacher {
    fn distributions(&self, sample: &VideoSample) -> Result<TeacherDistributions> {
        let dists = load_cached(&self.path_for(&sample.entry.sample_id))?;
        if dists.t() != sample.t {
            return Err(Error::validation(
                "teacher",
                format!(
                    "cached labels cover {} frames but sample {} has {}",
                    dists.t(),
                    sample.entry.sample_id,
                    sample.t
                ),
            ));
        }
        Ok(dists)
    }
}

static UNIFORM_WARNED: OnceLock<()> = OnceLock::new();

/// Uniform fallback distributions (used by selftest paths that need a
/// teacher-shaped object without corpus semantics). Logs once.
pub fn uniform_distributions(t: usize, vocab: usize) -> TeacherDistributions {
    if UNIFORM_WARNED.set(()).is_ok() {
        log::warn!("using uniform teacher distributions; content labels carry no signal");
    }
    let p = Array2::from_elem((t, vocab), 1.0 / vocab as f64);
    TeacherDistributions {
        p_a: p.clone(),
        p_v: p,
    }
}
