//! CTXF feature files and their CTXE sibling.
//!
//! Layout (little-endian):
//!
//! | bytes | field |
//! |-------|-------|
//! | 4     | magic `CTXF` (`CTXE` for raw embeddings) |
//! | 4     | version, u32 = 1 |
//! | 4     | dim, u32 |
//! | 8     | count, u64 |
//! | 4     | num_categories, u32 |
//! | 4·count·dim | rows, f32, row-major |
//! | 4·count | labels, u32, `0xFFFFFFFF` = unlabeled |
//!
//! CTXF rows are unit features and are re-normalized on read when they
//! drift; CTXE rows (class-token embeddings) are returned untouched.

use std::path::Path;

use super::{magic_string, put_f32s, read_bytes, write_bytes, Reader};
use crate::embedding::{normalize, LabeledFeatureSet, UNLABELED};
use crate::error::{Error, Result};

pub const FEATURE_MAGIC: [u8; 4] = *b"CTXF";
pub const EMBEDDING_MAGIC: [u8; 4] = *b"CTXE";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_LEN: u64 = 24;

/// Rows whose norm is within this of 1 are kept bit-exact on read.
pub const RENORMALIZE_THRESHOLD: f64 = 1e-6;

/// Norm tolerance promised by feature exporters.
pub const EXPORT_NORM_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFile {
    pub set: LabeledFeatureSet,
    /// Largest `| ||row|| - 1 |` seen in the file before re-normalization.
    pub max_norm_deviation: f64,
    pub renormalized_rows: usize,
}

impl FeatureFile {
    pub fn within_export_tolerance(&self) -> bool {
        self.max_norm_deviation <= EXPORT_NORM_TOLERANCE
    }
}

pub fn encode_features(set: &LabeledFeatureSet, magic: [u8; 4]) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN as usize + set.data().len() * 4 + set.len() * 4);
    out.extend_from_slice(&magic);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(set.dim() as u32).to_le_bytes());
    out.extend_from_slice(&(set.len() as u64).to_le_bytes());
    out.extend_from_slice(&set.num_categories().to_le_bytes());
    put_f32s(&mut out, set.data());
    for l in set.labels() {
        out.extend_from_slice(&l.to_le_bytes());
    }
    out
}

pub fn decode_features(bytes: &[u8], magic: [u8; 4]) -> Result<FeatureFile> {
    let mut r = Reader::new(bytes);
    let found = r.magic()?;
    if found != magic {
        return Err(Error::BadMagic { expected: magic_string(&magic), found: magic_string(&found) });
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::VersionUnsupported(version));
    }
    let dim = r.u32()? as u64;
    let count = r.u64()?;
    let num_categories = r.u32()?;
    let expected = count
        .checked_mul(dim)
        .and_then(|v| v.checked_add(count))
        .and_then(|v| v.checked_mul(4))
        .and_then(|v| v.checked_add(HEADER_LEN))
        .ok_or_else(|| Error::ShapeMismatch(format!("count {count} x dim {dim} overflows")))?;
    let actual = bytes.len() as u64;
    if actual < expected {
        return Err(Error::TruncatedFile { expected, actual });
    }
    if actual > expected {
        return Err(Error::ShapeMismatch(format!("{} trailing bytes after {expected}-byte payload", actual - expected)));
    }
    if dim == 0 {
        return Err(Error::ShapeMismatch("dim must be positive".into()));
    }
    let (dim, count) = (dim as usize, count as usize);
    let mut data = r.f32s(count * dim)?;
    let mut labels = Vec::with_capacity(count);
    for _ in 0..count {
        let l = r.u32()?;
        if l != UNLABELED && l >= num_categories {
            return Err(Error::LabelOutOfRange { label: l, num_categories });
        }
        labels.push(l);
    }
    debug_assert_eq!(r.remaining(), 0);

    let mut max_dev = 0.0f64;
    let mut renormalized = 0;
    for row in data.chunks_exact_mut(dim) {
        let dev = (crate::embedding::norm(row) - 1.0).abs();
        max_dev = max_dev.max(dev);
        if magic == FEATURE_MAGIC && dev > RENORMALIZE_THRESHOLD {
            let unit = normalize(row)?;
            row.copy_from_slice(unit.as_slice());
            renormalized += 1;
        }
    }
    Ok(FeatureFile {
        set: LabeledFeatureSet::new(dim, num_categories, data, labels)?,
        max_norm_deviation: max_dev,
        renormalized_rows: renormalized,
    })
}

pub fn write_features(set: &LabeledFeatureSet, path: impl AsRef<Path>) -> Result<()> {
    write_bytes(path.as_ref(), &encode_features(set, FEATURE_MAGIC))
}

pub fn read_features(path: impl AsRef<Path>) -> Result<FeatureFile> {
    decode_features(&read_bytes(path.as_ref())?, FEATURE_MAGIC)
}

pub fn write_embeddings(set: &LabeledFeatureSet, path: impl AsRef<Path>) -> Result<()> {
    write_bytes(path.as_ref(), &encode_features(set, EMBEDDING_MAGIC))
}

pub fn read_embeddings(path: impl AsRef<Path>) -> Result<FeatureFile> {
    decode_features(&read_bytes(path.as_ref())?, EMBEDDING_MAGIC)
}
