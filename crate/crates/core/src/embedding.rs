//! Dense-vector primitives and labeled feature sets.
//!
//! Features are stored as `f32`; every reduction (norms, dot products) is
//! accumulated in `f64`.

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Label carried by samples that belong to no known category.
pub const UNLABELED: u32 = u32::MAX;

/// Norms below this are treated as zero vectors.
pub const NORM_FLOOR: f64 = 1e-12;

/// The single deterministic generator used throughout the crate
/// (ChaCha with 8 rounds, seeded from a `u64`).
pub type Rng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// One draw from N(0, 1).
pub fn standard_normal(rng: &mut Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// `ceil(fraction * n)`, treating products within rounding of an integer as
/// that integer, so that 0.95 * 20 is 19 and 0.07 * 100 is 7.
pub fn ceil_fraction(fraction: f64, n: usize) -> usize {
    let x = fraction * n as f64;
    let r = x.round();
    if (x - r).abs() <= 1e-9 * (n.max(1) as f64) { r as usize } else { x.ceil() as usize }
}

pub fn norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt()
}

pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

/// Dot product between a 64-bit vector and a stored 32-bit one.
pub fn dot_mixed(a: &[f64], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x * y as f64).sum()
}

/// An L2-normalized embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(Vec<f32>);

impl FeatureVector {
    /// Wraps values that are already unit-norm. Callers own that invariant.
    pub fn from_unit(values: Vec<f32>) -> Self {
        FeatureVector(values)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<f32> {
        self.0
    }
}

impl AsRef<[f32]> for FeatureVector {
    fn as_ref(&self) -> &[f32] {
        &self.0
    }
}

pub fn normalize(v: &[f32]) -> Result<FeatureVector> {
    let n = norm(v);
    if !(n >= NORM_FLOOR) {
        return Err(Error::ZeroVector { norm: n });
    }
    Ok(FeatureVector(v.iter().map(|&x| (x as f64 / n) as f32).collect()))
}

pub fn normalize_f64(v: &[f64]) -> Result<Vec<f64>> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(n >= NORM_FLOOR) {
        return Err(Error::ZeroVector { norm: n });
    }
    Ok(v.iter().map(|x| x / n).collect())
}

/// Cosine similarity of two unit vectors, clamped to [-1, 1].
pub fn cosine(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::dims(a.len(), b.len()));
    }
    Ok(dot(a, b).clamp(-1.0, 1.0))
}

/// An `n x dim` row-major matrix of unit features with one label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledFeatureSet {
    dim: usize,
    num_categories: u32,
    data: Vec<f32>,
    labels: Vec<u32>,
}

impl LabeledFeatureSet {
    /// Builds a set from raw rows, checking shape and labels. Rows are
    /// taken as given; use [`LabeledFeatureSet::from_raw_rows`] to normalize.
    pub fn new(dim: usize, num_categories: u32, data: Vec<f32>, labels: Vec<u32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::ShapeMismatch("feature dimension must be positive".into()));
        }
        if data.len() != dim * labels.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} values do not form {} rows of dimension {}",
                data.len(),
                labels.len(),
                dim
            )));
        }
        if let Some(&label) = labels.iter().find(|&&l| l != UNLABELED && l >= num_categories) {
            return Err(Error::LabelOutOfRange { label, num_categories });
        }
        Ok(LabeledFeatureSet { dim, num_categories, data, labels })
    }

    /// Normalizes every row, then builds the set.
    pub fn from_raw_rows(
        dim: usize,
        num_categories: u32,
        mut data: Vec<f32>,
        labels: Vec<u32>,
    ) -> Result<Self> {
        if dim > 0 {
            for row in data.chunks_exact_mut(dim) {
                let unit = normalize(row)?;
                row.copy_from_slice(unit.as_slice());
            }
        }
        Self::new(dim, num_categories, data, labels)
    }

    pub fn empty(dim: usize, num_categories: u32) -> Self {
        LabeledFeatureSet { dim, num_categories, data: Vec::new(), labels: Vec::new() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_categories(&self) -> u32 {
        self.num_categories
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn label(&self, i: usize) -> u32 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Row indices carrying `category`, in file order.
    pub fn indices_of(&self, category: u32) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.labels[i] == category).collect()
    }

    pub fn push(&mut self, row: &[f32], label: u32) -> Result<()> {
        if row.len() != self.dim {
            return Err(Error::dims(self.dim, row.len()));
        }
        if label != UNLABELED && label >= self.num_categories {
            return Err(Error::LabelOutOfRange { label, num_categories: self.num_categories });
        }
        self.data.extend_from_slice(row);
        self.labels.push(label);
        Ok(())
    }

    /// Largest `| ||row|| - 1 |` over all rows.
    pub fn max_norm_deviation(&self) -> f64 {
        self.rows().map(|r| (norm(r) - 1.0).abs()).fold(0.0, f64::max)
    }

    /// Concatenates sets, shifting each set's labels by the number of
    /// categories that precede it. Unlabeled rows stay unlabeled.
    pub fn concat_offset(sets: &[&LabeledFeatureSet]) -> Result<Self> {
        let first = sets.first().ok_or(Error::EmptySet("no feature sets to concatenate"))?;
        let dim = first.dim;
        let mut out = LabeledFeatureSet::empty(dim, sets.iter().map(|s| s.num_categories).sum());
        let mut offset = 0u32;
        for set in sets {
            if set.dim != dim {
                return Err(Error::dims(dim, set.dim));
            }
            out.data.extend_from_slice(&set.data);
            out.labels.extend(
                set.labels.iter().map(|&l| if l == UNLABELED { UNLABELED } else { l + offset }),
            );
            offset += set.num_categories;
        }
        Ok(out)
    }
}
