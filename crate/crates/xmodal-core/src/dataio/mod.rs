//! Manifests, MFCC extraction, stream alignment, media cache, and the
//! synthetic corpus used for desk-scale training runs.

mod align;
mod cache;
mod manifest;
mod mfcc;
pub mod synthetic;

pub use align::align;
pub use cache::{read_media_cache, write_media_cache, MEDIA_CACHE_MAGIC};
pub use manifest::{load_manifest, manifest_to_string, parse_manifest_str, write_manifest};
pub use mfcc::{extract_mfcc, MFCC_COEFFS, MFCC_HOP, MFCC_WINDOW, SAMPLE_RATE_HZ};
pub use synthetic::{
    generate_corpus, make_synthetic_sample, make_synthetic_sample_cat,
    make_synthetic_sample_for_entry, parse_synth_path, CorpusSpec, NUM_CONTENT_CLASSES,
};

use ndarray::{Array2, Array3};

use crate::error::{Error, Result};

/// Ground-truth label. The paper's convention: real = 1, fake = 0.
pub const LABEL_REAL: u8 = 1;
/// Ground-truth label for fakes.
pub const LABEL_FAKE: u8 = 0;

/// Forgery category. The first six cover the leave-one-out corpus
/// (real plus audio/visual manipulation combinations); the remainder cover
/// the cross-dataset corpus, where `_S` variants keep the subject's own voice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ForgeryCategory {
    Real,
    Rvfa,
    FvraW2l,
    FvfaFs,
    FvfaGan,
    FvfaW2l,
    A2h,
    A2hS,
    Vrt,
    VrtS,
    W2l,
    W2lS,
    Mit,
    MitS,
}

impl ForgeryCategory {
    pub const ALL: [ForgeryCategory; 14] = [
        ForgeryCategory::Real,
        ForgeryCategory::Rvfa,
        ForgeryCategory::FvraW2l,
        ForgeryCategory::FvfaFs,
        ForgeryCategory::FvfaGan,
        ForgeryCategory::FvfaW2l,
        ForgeryCategory::A2h,
        ForgeryCategory::A2hS,
        ForgeryCategory::Vrt,
        ForgeryCategory::VrtS,
        ForgeryCategory::W2l,
        ForgeryCategory::W2lS,
        ForgeryCategory::Mit,
        ForgeryCategory::MitS,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ForgeryCategory::Real => "REAL",
            ForgeryCategory::Rvfa => "RVFA",
            ForgeryCategory::FvraW2l => "FVRA_W2L",
            ForgeryCategory::FvfaFs => "FVFA_FS",
            ForgeryCategory::FvfaGan => "FVFA_GAN",
            ForgeryCategory::FvfaW2l => "FVFA_W2L",
            ForgeryCategory::A2h => "A2H",
            ForgeryCategory::A2hS => "A2H_S",
            ForgeryCategory::Vrt => "VRT",
            ForgeryCategory::VrtS => "VRT_S",
            ForgeryCategory::W2l => "W2L",
            ForgeryCategory::W2lS => "W2L_S",
            ForgeryCategory::Mit => "MIT",
            ForgeryCategory::MitS => "MIT_S",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.iter().find(|c| c.as_str() == s).copied()
    }

    /// `_S` categories: fakes generated with the subject's own voice.
    pub fn uses_own_voice(&self) -> bool {
        matches!(
            self,
            ForgeryCategory::A2hS
                | ForgeryCategory::VrtS
                | ForgeryCategory::W2lS
                | ForgeryCategory::MitS
        )
    }

    /// True when the audio stream is manipulated (synthetic corpus semantics).
    pub fn audio_is_fake(&self) -> bool {
        matches!(
            self,
            ForgeryCategory::Rvfa
                | ForgeryCategory::FvfaFs
                | ForgeryCategory::FvfaGan
                | ForgeryCategory::FvfaW2l
        )
    }
}

/// Where a fake's voice came from; `NA` for real clips and corpora that do
/// not record it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VoiceSource {
    Own,
    Other,
    Na,
}

impl VoiceSource {
    pub fn as_str(&self) -> &'static str {
        match self {
            VoiceSource::Own => "own",
            VoiceSource::Other => "other",
            VoiceSource::Na => "n/a",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "own" => Some(VoiceSource::Own),
            "other" => Some(VoiceSource::Other),
            "n/a" => Some(VoiceSource::Na),
            _ => None,
        }
    }
}

/// Dataset split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

/// One manifest record describing a media clip.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub sample_id: String,
    pub media_path: String,
    pub label: u8,
    pub forgery_category: ForgeryCategory,
    pub voice_source: VoiceSource,
    pub split: Split,
}

impl ManifestEntry {
    pub fn is_real(&self) -> bool {
        self.label == LABEL_REAL
    }

    /// Check the cross-field invariants.
    pub fn validate(&self) -> Result<()> {
        if self.label > 1 {
            return Err(Error::validation("label", "must be 0 or 1"));
        }
        let is_real_cat = self.forgery_category == ForgeryCategory::Real;
        if (self.label == LABEL_REAL) != is_real_cat {
            return Err(Error::validation(
                "forgery_category",
                format!(
                    "label={} inconsistent with category {} (label=1 ⇔ REAL)",
                    self.label,
                    self.forgery_category.as_str()
                ),
            ));
        }
        let own = self.voice_source == VoiceSource::Own;
        if self.forgery_category.uses_own_voice() != own {
            return Err(Error::validation(
                "voice_source",
                format!(
                    "category {} requires voice_source {}",
                    self.forgery_category.as_str(),
                    if self.forgery_category.uses_own_voice() {
                        "own"
                    } else {
                        "other or n/a"
                    }
                ),
            ));
        }
        if self.sample_id.is_empty() {
            return Err(Error::validation("sample_id", "must be nonempty"));
        }
        if self.sample_id.contains(['\t', '\n']) {
            return Err(Error::validation("sample_id", "must not contain tabs/newlines"));
        }
        if self.media_path.contains(['\t', '\n']) {
            return Err(Error::validation("media_path", "must not contain tabs/newlines"));
        }
        Ok(())
    }
}

/// MFCC feature matrix for one clip: `[T_a × 13]` at 100 Hz.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioFeatures {
    pub mfcc: Array2<f64>,
    pub sample_rate_hz: u32,
}

impl AudioFeatures {
    pub fn t_a(&self) -> usize {
        self.mfcc.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        if self.mfcc.ncols() != MFCC_COEFFS {
            return Err(Error::validation(
                "mfcc",
                format!("expected {} coefficients, got {}", MFCC_COEFFS, self.mfcc.ncols()),
            ));
        }
        if self.mfcc.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("mfcc", "contains NaN/Inf"));
        }
        Ok(())
    }
}

/// Grayscale face crops for one clip: `[T_v × 112 × 112]`, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceTrack {
    pub frames: Array3<f64>,
    pub fps: u32,
}

/// Spatial size of face crops.
pub const FACE_SIZE: usize = 112;
/// Video frame rate; with 100 Hz audio frames this fixes the 4:1 ratio.
pub const VIDEO_FPS: u32 = 25;
/// Audio feature frames per video frame.
pub const AUDIO_FRAMES_PER_VIDEO_FRAME: usize = 4;

impl FaceTrack {
    pub fn t_v(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.frames.shape();
        if s[1] != FACE_SIZE || s[2] != FACE_SIZE {
            return Err(Error::validation(
                "frames",
                format!("expected {FACE_SIZE}x{FACE_SIZE} crops, got {}x{}", s[1], s[2]),
            ));
        }
        if s[0] == 0 {
            return Err(Error::validation("frames", "need at least one frame"));
        }
        if self.frames.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("frames", "contains NaN/Inf"));
        }
        Ok(())
    }
}

/// A fully aligned, model-ready sample.
#[derive(Debug, Clone)]
pub struct VideoSample {
    pub entry: ManifestEntry,
    pub audio: AudioFeatures,
    pub faces: FaceTrack,
    /// Common frame count: `T = T_v` and `T_a = 4·T` after alignment.
    pub t: usize,
}

impl VideoSample {
    pub fn validate(&self) -> Result<()> {
        self.entry.validate()?;
        self.audio.validate()?;
        self.faces.validate()?;
        if self.faces.t_v() != self.t {
            return Err(Error::validation(
                "t",
                format!("T={} but face track has {} frames", self.t, self.faces.t_v()),
            ));
        }
        if self.audio.t_a() != AUDIO_FRAMES_PER_VIDEO_FRAME * self.t {
            return Err(Error::validation(
                "t",
                format!(
                    "T={} requires {} audio frames, got {}",
                    self.t,
                    AUDIO_FRAMES_PER_VIDEO_FRAME * self.t,
                    self.audio.t_a()
                ),
            ));
        }
        Ok(())
    }
}
