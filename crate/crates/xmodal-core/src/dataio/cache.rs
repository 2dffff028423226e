//! Decoded-media cache: one binary file per sample holding the MFCC matrix
//! and the face-crop tensor.
//!
//! Layout (all integers little-endian `u32`, floats little-endian `f32`):
//!
//! ```text
//! magic            16 bytes  "XMODMEDIACACHE1\0"
//! sample_rate_hz   u32
//! fps              u32
//! t_a, c_mfcc      u32, u32
//! t_v, h, w        u32, u32, u32
//! mfcc             t_a*c_mfcc f32, row-major
//! frames           t_v*h*w    f32, row-major
//! ```

use std::path::Path;

use ndarray::{Array2, Array3};

use crate::error::{Error, Result};

use super::{AudioFeatures, FaceTrack};

/// 16-byte magic prefix of media cache files.
pub const MEDIA_CACHE_MAGIC: &[u8; 16] = b"XMODMEDIACACHE1\0";

fn push_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn read_u32(buf: &[u8], at: &mut usize, path: &Path) -> Result<u32> {
    let end = *at + 4;
    if end > buf.len() {
        return Err(Error::Corrupt {
            path: path.to_path_buf(),
            msg: "truncated header".into(),
        });
    }
    let v = u32::from_le_bytes(buf[*at..end].try_into().unwrap());
    *at = end;
    Ok(v)
}

fn read_f32s(buf: &[u8], at: &mut usize, n: usize, path: &Path) -> Result<Vec<f64>> {
    let end = *at + 4 * n;
    if end > buf.len() {
        return Err(Error::Corrupt {
            path: path.to_path_buf(),
            msg: format!("truncated payload: need {n} floats"),
        });
    }
    let mut out = Vec::with_capacity(n);
    for chunk in buf[*at..end].chunks_exact(4) {
        out.push(f32::from_le_bytes(chunk.try_into().unwrap()) as f64);
    }
    *at = end;
    Ok(out)
}

/// Write a media cache file; values are stored as `f32`.
pub fn write_media_cache(path: &Path, audio: &AudioFeatures, faces: &FaceTrack) -> Result<()> {
    audio.validate()?;
    faces.validate()?;
    let (t_a, c) = audio.mfcc.dim();
    let (t_v, h, w) = faces.frames.dim();
    let mut buf = Vec::with_capacity(16 + 7 * 4 + 4 * (t_a * c + t_v * h * w));
    buf.extend_from_slice(MEDIA_CACHE_MAGIC);
    push_u32(&mut buf, audio.sample_rate_hz);
    push_u32(&mut buf, faces.fps);
    push_u32(&mut buf, t_a as u32);
    push_u32(&mut buf, c as u32);
    push_u32(&mut buf, t_v as u32);
    push_u32(&mut buf, h as u32);
    push_u32(&mut buf, w as u32);
    for &v in audio.mfcc.iter() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    for &v in faces.frames.iter() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Read a media cache file written by [`write_media_cache`].
pub fn read_media_cache(path: &Path) -> Result<(AudioFeatures, FaceTrack)> {
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if buf.len() < 16 || &buf[..16] != MEDIA_CACHE_MAGIC {
        return Err(Error::Format {
            path: path.to_path_buf(),
            msg: "bad magic: not a media cache file".into(),
        });
    }
    let mut at = 16;
    let sample_rate_hz = read_u32(&buf, &mut at, path)?;
    let fps = read_u32(&buf, &mut at, path)?;
    let t_a = read_u32(&buf, &mut at, path)? as usize;
    let c = read_u32(&buf, &mut at, path)? as usize;
    let t_v = read_u32(&buf, &mut at, path)? as usize;
    let h = read_u32(&buf, &mut at, path)? as usize;
    let w = read_u32(&buf, &mut at, path)? as usize;
    let mfcc = read_f32s(&buf, &mut at, t_a * c, path)?;
    let frames = read_f32s(&buf, &mut at, t_v * h * w, path)?;
    if at != buf.len() {
        return Err(Error::Corrupt {
            path: path.to_path_buf(),
            msg: format!("{} trailing bytes", buf.len() - at),
        });
    }
    let audio = AudioFeatures {
        mfcc: Array2::from_shape_vec((t_a, c), mfcc).unwrap(),
        sample_rate_hz,
    };
    let faces = FaceTrack {
        frames: Array3::from_shape_vec((t_v, h, w), frames).unwrap(),
        fps,
    };
    audio.validate().map_err(|e| Error::Corrupt {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    faces.validate().map_err(|e| Error::Corrupt {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    Ok((audio, faces))
}
