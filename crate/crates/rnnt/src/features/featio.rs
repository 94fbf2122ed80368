//! Binary feature-matrix files.
//!
//! Layout (little-endian):
//!   magic   4 bytes  b"FEAT"
//!   version u32      1
//!   rows    u32
//!   cols    u32
//!   data    rows*cols f32, row-major

use std::fs;
use std::path::Path;

use super::FeatureMatrix;
use crate::error::{Error, Result};
use crate::tensor::Real;

pub const MAGIC: &[u8; 4] = b"FEAT";
pub const VERSION: u32 = 1;

pub fn write_features(path: &Path, feat: &FeatureMatrix) -> Result<()> {
    let mut out = Vec::with_capacity(16 + feat.data.len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(feat.rows as u32).to_le_bytes());
    out.extend_from_slice(&(feat.cols as u32).to_le_bytes());
    for &v in &feat.data {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_features(path: &Path) -> Result<FeatureMatrix> {
    let bytes = fs::read(path)?;
    if bytes.len() < 16 || &bytes[0..4] != MAGIC {
        return Err(Error::data(format!(
            "{}: not a feature file (bad magic)",
            path.display()
        )));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::data(format!(
            "{}: unsupported feature file version {version}",
            path.display()
        )));
    }
    let rows = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let expect = 16 + rows * cols * 4;
    if bytes.len() != expect {
        return Err(Error::data(format!(
            "{}: expected {expect} bytes for {rows}x{cols}, found {}",
            path.display(),
            bytes.len()
        )));
    }
    let data: Vec<Real> = bytes[16..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as Real)
        .collect();
    FeatureMatrix::new(rows, cols, data)
}
