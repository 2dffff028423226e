//! Deterministic synthetic audio-visual corpus.
//!
//! Each sample narrates a "content" trajectory: a random walk over a small
//! set of content classes. Real samples render the *same* trajectory into
//! both modalities (audio MFCC rows from per-class audio prototypes, face
//! frames from per-class visual prototypes); fakes decorrelate the streams
//! and add small category-specific rendering artifacts. This gives training
//! a learnable cross-modal synchronization signal that generalizes across
//! forgery categories, mirroring the corpus the detection framework targets.
//!
//! Own-voice (`_S`) categories keep the trajectories correlated — the voice
//! is genuine and the visuals are synced to it — so only the artifact
//! channel marks them as fake. Correlation-based detection is expected to
//! struggle there, which is exactly the behavior the analyzer visualizes.

use std::sync::OnceLock;

use ndarray::{Array2, Array3, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::{
    AudioFeatures, FaceTrack, ForgeryCategory, ManifestEntry, Split, VideoSample, VoiceSource,
    AUDIO_FRAMES_PER_VIDEO_FRAME, FACE_SIZE, LABEL_FAKE, LABEL_REAL, MFCC_COEFFS, SAMPLE_RATE_HZ,
    VIDEO_FPS,
};

/// Number of distinct content classes in the synthetic language.
pub const NUM_CONTENT_CLASSES: usize = 8;
/// Visual prototypes are authored at this resolution and upsampled 8x.
pub(crate) const PROTO_GRID: usize = 14;
const UPSCALE: usize = FACE_SIZE / PROTO_GRID;

const AUDIO_NOISE: f64 = 0.15;
const VISUAL_NOISE: f64 = 0.03;
const AUDIO_ARTIFACT: f64 = 0.5;

const BANK_SEED_AUDIO: u64 = 0x5853_4141;
const BANK_SEED_VISUAL: u64 = 0x5853_5656;

/// Per-class audio prototypes `[K × 13]`; fixed for the lifetime of the
/// process and identical across processes.
pub(crate) fn audio_prototypes() -> &'static Array2<f64> {
    static BANK: OnceLock<Array2<f64>> = OnceLock::new();
    BANK.get_or_init(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(BANK_SEED_AUDIO);
        let mut bank = Array2::from_shape_fn((NUM_CONTENT_CLASSES, MFCC_COEFFS), |_| {
            rng.gen_range(-1.5..1.5)
        });
        // Content must not mimic the synthetic-speech signature: remove each
        // class's even/odd cepstral contrast so that channel carries only the
        // artifact (plus noise) and never correlates with content identity.
        for mut row in bank.outer_iter_mut() {
            let m = row.mean().unwrap();
            let (mut se, mut ne, mut so, mut no) = (0.0, 0usize, 0.0, 0usize);
            for (c, &v) in row.iter().enumerate() {
                if c % 2 == 0 {
                    se += v;
                    ne += 1;
                } else {
                    so += v;
                    no += 1;
                }
            }
            let (me, mo) = (se / ne as f64, so / no as f64);
            for (c, v) in row.iter_mut().enumerate() {
                *v -= if c % 2 == 0 { me - m } else { mo - m };
            }
        }
        bank
    })
}

/// Per-class visual prototypes `[K × 14 × 14]`, values in `[0.1, 0.9]`.
pub(crate) fn visual_prototypes() -> &'static Array3<f64> {
    static BANK: OnceLock<Array3<f64>> = OnceLock::new();
    BANK.get_or_init(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(BANK_SEED_VISUAL);
        Array3::from_shape_fn((NUM_CONTENT_CLASSES, PROTO_GRID, PROTO_GRID), |_| {
            rng.gen_range(0.1..0.9)
        })
    })
}

/// Mean-pool a `112×112` frame back to the `14×14` prototype grid.
pub(crate) fn downsample_frame(frame: ArrayView2<'_, f64>) -> Array2<f64> {
    let inv = 1.0 / (UPSCALE * UPSCALE) as f64;
    Array2::from_shape_fn((PROTO_GRID, PROTO_GRID), |(y, x)| {
        let mut acc = 0.0;
        for dy in 0..UPSCALE {
            for dx in 0..UPSCALE {
                acc += frame[[y * UPSCALE + dy, x * UPSCALE + dx]];
            }
        }
        acc * inv
    })
}

/// Content trajectory: stay with probability 3/4, otherwise jump uniformly.
fn content_walk(rng: &mut ChaCha8Rng, len: usize) -> Vec<usize> {
    let mut c = rng.gen_range(0..NUM_CONTENT_CLASSES);
    let mut out = Vec::with_capacity(len);
    out.push(c);
    for _ in 1..len {
        if rng.gen_bool(0.25) {
            c = rng.gen_range(0..NUM_CONTENT_CLASSES);
        }
        out.push(c);
    }
    out
}

/// Category-specific additive visual artifact, `[112 × 112]`, zero for REAL.
fn visual_artifact(cat: ForgeryCategory) -> Array2<f64> {
    use std::f64::consts::PI;
    let n = FACE_SIZE;
    match cat {
        ForgeryCategory::Real | ForgeryCategory::Rvfa => Array2::zeros((n, n)),
        // Lip-sync style artifacts: banding in the lower (mouth) third.
        ForgeryCategory::FvraW2l | ForgeryCategory::W2l | ForgeryCategory::W2lS => {
            Array2::from_shape_fn((n, n), |(y, _)| {
                if y > n / 2 {
                    0.55 + 0.08 * (2.0 * PI * y as f64 / 16.0).sin()
                } else {
                    0.0
                }
            })
        }
        // Face-swap style: coarse block offsets.
        ForgeryCategory::FvfaFs => Array2::from_shape_fn((n, n), |(y, x)| {
            if ((y / 16) + (x / 16)) % 2 == 0 {
                0.05
            } else {
                -0.05
            }
        }),
        // GAN style: fine checkerboard.
        ForgeryCategory::FvfaGan | ForgeryCategory::Vrt | ForgeryCategory::VrtS => {
            Array2::from_shape_fn((n, n), |(y, x)| {
                if ((y / 8) + (x / 8)) % 2 == 0 {
                    0.04
                } else {
                    -0.04
                }
            })
        }
        ForgeryCategory::FvfaW2l => Array2::from_shape_fn((n, n), |(y, x)| {
            if y > 2 * n / 3 {
                -0.05 + 0.06 * (2.0 * PI * x as f64 / 8.0).sin()
            } else {
                0.0
            }
        }),
        // Talking-head style: vertical banding over the lower half.
        ForgeryCategory::A2h | ForgeryCategory::A2hS => Array2::from_shape_fn((n, n), |(y, x)| {
            if y > n / 2 {
                0.06 * (2.0 * PI * x as f64 / 10.0).sin()
            } else {
                0.0
            }
        }),
        ForgeryCategory::Mit | ForgeryCategory::MitS => Array2::from_shape_fn((n, n), |(y, x)| {
            let dy = y as f64 - n as f64 / 2.0;
            let dx = x as f64 - n as f64 / 2.0;
            0.05 * (2.0 * PI * (dy * dy + dx * dx).sqrt() / 14.0).sin()
        }),
    }
}

/// True when the category's audio track carries synthesis artifacts.
fn audio_has_artifact(cat: ForgeryCategory) -> bool {
    cat.audio_is_fake()
        || matches!(
            cat,
            ForgeryCategory::A2h | ForgeryCategory::Vrt | ForgeryCategory::W2l | ForgeryCategory::Mit
        )
}

/// Per-category stream plan: which trajectory each modality renders.
fn stream_classes(
    cat: ForgeryCategory,
    rng: &mut ChaCha8Rng,
    t: usize,
) -> (Vec<usize>, Vec<usize>) {
    let content = content_walk(rng, t);
    let other = content_walk(rng, t);
    match cat {
        // Real: both modalities narrate the same trajectory.
        ForgeryCategory::Real => (content.clone(), content),
        // Real video, fake audio: audio decorrelated.
        ForgeryCategory::Rvfa => (other, content),
        // Fake video, real audio: visuals decorrelated.
        ForgeryCategory::FvraW2l => (content, other),
        // Both streams replaced.
        ForgeryCategory::FvfaFs | ForgeryCategory::FvfaGan | ForgeryCategory::FvfaW2l => {
            let third = content_walk(rng, t);
            (other, third)
        }
        // Cross-dataset methods driven by another person's voice.
        ForgeryCategory::A2h | ForgeryCategory::Vrt | ForgeryCategory::W2l | ForgeryCategory::Mit => {
            (other, content)
        }
        // Own-voice variants: audio is genuine and visuals are synced to it,
        // so the trajectories match; only artifacts give them away.
        ForgeryCategory::A2hS
        | ForgeryCategory::VrtS
        | ForgeryCategory::W2lS
        | ForgeryCategory::MitS => (content.clone(), content),
    }
}

fn default_voice_source(cat: ForgeryCategory) -> VoiceSource {
    if cat.uses_own_voice() {
        VoiceSource::Own
    } else if cat == ForgeryCategory::Real {
        VoiceSource::Na
    } else {
        VoiceSource::Other
    }
}

/// Render a sample for an explicit forgery category.
pub fn make_synthetic_sample_cat(
    seed: u64,
    cat: ForgeryCategory,
    t: usize,
    entry: ManifestEntry,
) -> VideoSample {
    assert!(t >= 2, "synthetic samples need T >= 2 (got {t})");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (audio_classes, visual_classes) = stream_classes(cat, &mut rng, t);

    let aprotos = audio_prototypes();
    let mut mfcc = Array2::zeros((AUDIO_FRAMES_PER_VIDEO_FRAME * t, MFCC_COEFFS));
    let art = audio_has_artifact(cat);
    for (vt, &class) in audio_classes.iter().enumerate() {
        for sub in 0..AUDIO_FRAMES_PER_VIDEO_FRAME {
            let row = vt * AUDIO_FRAMES_PER_VIDEO_FRAME + sub;
            for c in 0..MFCC_COEFFS {
                let mut v = aprotos[[class, c]] + rng.gen_range(-AUDIO_NOISE..AUDIO_NOISE);
                if art {
                    // Synthetic-speech signature: alternating cepstral offset.
                    v += if c % 2 == 0 { AUDIO_ARTIFACT } else { -AUDIO_ARTIFACT };
                }
                mfcc[[row, c]] = v;
            }
        }
    }

    let vprotos = visual_prototypes();
    let vart = visual_artifact(cat);
    let mut frames = Array3::zeros((t, FACE_SIZE, FACE_SIZE));
    for (vt, &class) in visual_classes.iter().enumerate() {
        for y in 0..FACE_SIZE {
            for x in 0..FACE_SIZE {
                let base = vprotos[[class, y / UPSCALE, x / UPSCALE]];
                let v = base + vart[[y, x]] + rng.gen_range(-VISUAL_NOISE..VISUAL_NOISE);
                frames[[vt, y, x]] = v.clamp(0.0, 1.0);
            }
        }
    }

    VideoSample {
        entry,
        audio: AudioFeatures {
            mfcc,
            sample_rate_hz: SAMPLE_RATE_HZ,
        },
        faces: FaceTrack {
            frames,
            fps: VIDEO_FPS,
        },
        t,
    }
}

/// Deterministic synthetic sample: label 1 renders correlated streams,
/// label 0 decorrelated (real-video/fake-audio flavor).
pub fn make_synthetic_sample(seed: u64, label: u8, t: usize) -> VideoSample {
    let cat = if label == LABEL_REAL {
        ForgeryCategory::Real
    } else {
        ForgeryCategory::Rvfa
    };
    let entry = ManifestEntry {
        sample_id: format!("synth_{seed}"),
        media_path: format!("synth://{seed}"),
        label: if label == LABEL_REAL { LABEL_REAL } else { LABEL_FAKE },
        forgery_category: cat,
        voice_source: default_voice_source(cat),
        split: Split::Train,
    };
    make_synthetic_sample_cat(seed, cat, t, entry)
}

/// Parse a `synth://<seed>` media path.
pub fn parse_synth_path(path: &str) -> Option<u64> {
    path.strip_prefix("synth://")?.parse().ok()
}

/// Materialize the sample a manifest entry refers to. The media path must use
/// the `synth://` scheme; real decoders plug in upstream of the media cache.
pub fn make_synthetic_sample_for_entry(entry: &ManifestEntry, t: usize) -> Result<VideoSample> {
    let seed = parse_synth_path(&entry.media_path).ok_or_else(|| {
        Error::validation(
            "media_path",
            format!(
                "{:?} is not a synth:// path; decode real media into the cache instead",
                entry.media_path
            ),
        )
    })?;
    Ok(make_synthetic_sample_cat(
        seed,
        entry.forgery_category,
        t,
        entry.clone(),
    ))
}

/// Corpus layout: how many samples of each category to create and how to
/// split them.
#[derive(Debug, Clone)]
pub struct CorpusSpec {
    /// Corpus namespace prefixed to every sample id, so manifests from
    /// different corpora (e.g. the cross-dataset pair) never collide.
    pub tag: String,
    pub categories: Vec<(ForgeryCategory, usize)>,
    /// Video frames per sample.
    pub frames: usize,
    pub seed: u64,
    pub val_frac: f64,
    pub test_frac: f64,
}

impl CorpusSpec {
    /// Leave-one-out corpus: real clips plus the five manipulation
    /// categories.
    pub fn loo(n_real: usize, n_per_fake: usize, frames: usize, seed: u64) -> Self {
        CorpusSpec {
            tag: "fav".to_string(),
            categories: vec![
                (ForgeryCategory::Real, n_real),
                (ForgeryCategory::Rvfa, n_per_fake),
                (ForgeryCategory::FvraW2l, n_per_fake),
                (ForgeryCategory::FvfaFs, n_per_fake),
                (ForgeryCategory::FvfaGan, n_per_fake),
                (ForgeryCategory::FvfaW2l, n_per_fake),
            ],
            frames,
            seed,
            val_frac: 0.15,
            test_frac: 0.25,
        }
    }

    /// Cross-dataset corpus: four generation methods, each with an own-voice
    /// and an other-voice variant, plus real clips. Test-only by default.
    pub fn cross_dataset(n_real: usize, n_per_fake: usize, frames: usize, seed: u64) -> Self {
        CorpusSpec {
            tag: "cmdfd".to_string(),
            categories: vec![
                (ForgeryCategory::Real, n_real),
                (ForgeryCategory::A2h, n_per_fake),
                (ForgeryCategory::A2hS, n_per_fake),
                (ForgeryCategory::Vrt, n_per_fake),
                (ForgeryCategory::VrtS, n_per_fake),
                (ForgeryCategory::W2l, n_per_fake),
                (ForgeryCategory::W2lS, n_per_fake),
                (ForgeryCategory::Mit, n_per_fake),
                (ForgeryCategory::MitS, n_per_fake),
            ],
            frames,
            seed,
            val_frac: 0.0,
            test_frac: 1.0,
        }
    }
}

/// Generate manifest entries for a corpus. Samples themselves are
/// materialized lazily via [`make_synthetic_sample_for_entry`].
pub fn generate_corpus(spec: &CorpusSpec) -> Result<Vec<ManifestEntry>> {
    if spec.frames < 2 {
        return Err(Error::validation("frames", "need at least 2 frames"));
    }
    if !(0.0..=1.0).contains(&spec.val_frac)
        || !(0.0..=1.0).contains(&spec.test_frac)
        || spec.val_frac + spec.test_frac > 1.0
    {
        return Err(Error::validation(
            "val_frac/test_frac",
            "fractions must be in [0,1] and sum to at most 1",
        ));
    }
    let mut entries = Vec::new();
    for (ci, &(cat, n)) in spec.categories.iter().enumerate() {
        let n_test = (n as f64 * spec.test_frac).round() as usize;
        let n_val = (n as f64 * spec.val_frac).round() as usize;
        let (n_test, n_val) = if n_test + n_val > n {
            (n_test.min(n), n.saturating_sub(n_test))
        } else {
            (n_test, n_val)
        };
        for i in 0..n {
            let split = if i < n - n_test - n_val {
                Split::Train
            } else if i < n - n_test {
                Split::Val
            } else {
                Split::Test
            };
            let mut tag_hash: u64 = 0xcbf2_9ce4_8422_2325;
            for b in spec.tag.bytes() {
                tag_hash = (tag_hash ^ u64::from(b)).wrapping_mul(0x100_0000_01b3);
            }
            let sample_seed = spec
                .seed
                .wrapping_mul(0x9E37_79B9_7F4A_7C15)
                .wrapping_add(tag_hash)
                .wrapping_add(((ci as u64) << 32) | i as u64);
            let label = if cat == ForgeryCategory::Real {
                LABEL_REAL
            } else {
                LABEL_FAKE
            };
            let entry = ManifestEntry {
                sample_id: format!("{}_{}_{i:04}", spec.tag, cat.as_str().to_lowercase()),
                media_path: format!("synth://{sample_seed}"),
                label,
                forgery_category: cat,
                voice_source: default_voice_source(cat),
                split,
            };
            entry.validate()?;
            entries.push(entry);
        }
    }
    Ok(entries)
}

/// Materialize every entry of a synthetic manifest at `frames` video frames
/// per sample, preserving manifest order.
pub fn materialize(entries: &[ManifestEntry], frames: usize) -> Result<Vec<VideoSample>> {
    entries
        .iter()
        .map(|e| make_synthetic_sample_for_entry(e, frames))
        .collect()
}
