//! Audio/visual stream alignment at the fixed 4:1 frame ratio.

use ndarray::s;

use crate::error::{Error, Result};

use super::{
    AudioFeatures, FaceTrack, ManifestEntry, VideoSample, AUDIO_FRAMES_PER_VIDEO_FRAME,
};

/// Trim both streams from the tail so that `T = min(T_v, floor(T_a/4))` video
/// frames remain, backed by exactly `4T` audio frames. Never pads: padding
/// would fabricate correlation at sequence ends.
pub fn align(entry: ManifestEntry, audio: AudioFeatures, faces: FaceTrack) -> Result<VideoSample> {
    audio.validate()?;
    faces.validate()?;
    let t = faces
        .t_v()
        .min(audio.t_a() / AUDIO_FRAMES_PER_VIDEO_FRAME);
    if t == 0 {
        return Err(Error::Alignment(format!(
            "no overlapping frames: T_a={} (need ≥{}), T_v={}",
            audio.t_a(),
            AUDIO_FRAMES_PER_VIDEO_FRAME,
            faces.t_v()
        )));
    }
    let t_a = AUDIO_FRAMES_PER_VIDEO_FRAME * t;
    let audio = AudioFeatures {
        mfcc: audio.mfcc.slice(s![..t_a, ..]).to_owned(),
        sample_rate_hz: audio.sample_rate_hz,
    };
    let faces = FaceTrack {
        frames: faces.frames.slice(s![..t, .., ..]).to_owned(),
        fps: faces.fps,
    };
    let sample = VideoSample {
        entry,
        audio,
        faces,
        t,
    };
    sample.validate()?;
    Ok(sample)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{Array2, Array3};

    fn entry() -> ManifestEntry {
        ManifestEntry {
            sample_id: "s".into(),
            media_path: "p".into(),
            label: 1,
            forgery_category: crate::dataio::ForgeryCategory::Real,
            voice_source: crate::dataio::VoiceSource::Na,
            split: crate::dataio::Split::Train,
        }
    }

    fn audio(t_a: usize) -> AudioFeatures {
        AudioFeatures {
            mfcc: Array2::from_shape_fn((t_a, 13), |(i, j)| (i * 13 + j) as f64),
            sample_rate_hz: 16000,
        }
    }

    fn faces(t_v: usize) -> FaceTrack {
        FaceTrack {
            frames: Array3::zeros((t_v, 112, 112)),
            fps: 25,
        }
    }

    #[test]
    fn trims_audio_to_four_t() {
        let s = align(entry(), audio(98), faces(25)).unwrap();
        assert_eq!(s.t, 24);
        assert_eq!(s.audio.t_a(), 96);
        assert_eq!(s.faces.t_v(), 24);
        // Head is kept: first row unchanged.
        assert_eq!(s.audio.mfcc[[0, 0]], 0.0);
        assert_eq!(s.audio.mfcc[[95, 12]], (95 * 13 + 12) as f64);
    }

    #[test]
    fn exact_ratio_needs_no_video_trim() {
        let s = align(entry(), audio(100), faces(25)).unwrap();
        assert_eq!(s.t, 25);
        assert_eq!(s.audio.t_a(), 100);
    }

    #[test]
    fn idempotent() {
        let once = align(entry(), audio(98), faces(25)).unwrap();
        let twice = align(once.entry.clone(), once.audio.clone(), once.faces.clone()).unwrap();
        assert_eq!(once.t, twice.t);
        assert_eq!(once.audio.mfcc, twice.audio.mfcc);
        assert_eq!(once.faces.frames, twice.faces.frames);
    }

    #[test]
    fn too_little_audio_is_an_error() {
        let err = align(entry(), audio(3), faces(25)).unwrap_err();
        assert!(matches!(err, Error::Alignment(_)));
    }
}
