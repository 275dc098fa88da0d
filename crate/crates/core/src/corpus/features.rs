//! Per-utterance feature files: two little-endian `u32` (frames `T`, dim
//! `D`) followed by `T·D` little-endian `f32` values, row-major.

use std::fs;
use std::path::Path;

use super::CorpusError;
use crate::nn::params::Mat;

pub fn encode_features(m: &Mat) -> Vec<u8> {
    let (t, d) = m.dim();
    let mut out = Vec::with_capacity(8 + 4 * t * d);
    out.extend_from_slice(&(t as u32).to_le_bytes());
    out.extend_from_slice(&(d as u32).to_le_bytes());
    for &x in m.iter() {
        out.extend_from_slice(&(x as f32).to_le_bytes());
    }
    out
}

pub fn decode_features(bytes: &[u8]) -> Result<Mat, CorpusError> {
    if bytes.len() < 8 {
        return Err(CorpusError::Features("missing header".into()));
    }
    let t = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let body = &bytes[8..];
    if body.len() != 4 * t * d {
        return Err(CorpusError::Features(format!(
            "header says {t}x{d} but body has {} bytes",
            body.len()
        )));
    }
    let data: Vec<f64> = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    let m = Mat::from_shape_vec((t, d), data).map_err(|e| CorpusError::Features(e.to_string()))?;
    if m.iter().any(|v| !v.is_finite()) {
        return Err(CorpusError::Features("non-finite value".into()));
    }
    Ok(m)
}

pub fn write_features(path: impl AsRef<Path>, m: &Mat) -> Result<(), CorpusError> {
    if let Some(parent) = path.as_ref().parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, encode_features(m))?;
    Ok(())
}

pub fn read_features(path: impl AsRef<Path>) -> Result<Mat, CorpusError> {
    decode_features(&fs::read(path)?)
}
