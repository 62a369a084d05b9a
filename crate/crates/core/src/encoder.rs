//! Frozen reference text encoder and context perturbations.
//!
//! The encoder maps a context (m learnable word embeddings plus one frozen
//! class embedding) to a unit feature: mean-pool the m + 1 embeddings,
//! apply a frozen linear map, L2-normalize. Gradients are derived by hand.

use std::str::FromStr;

use rand::Rng as _;

use crate::embedding::{normalize_f64, rng_from_seed, standard_normal, FeatureVector, Rng};
use crate::error::{Error, Result};

/// Seed of the shared frozen encoder returned by [`EncoderParams::reference`].
pub const REFERENCE_ENCODER_SEED: u64 = 0x0C11_9E2C_0DE5_EED5;

/// Standard deviation used for context, class and mask embeddings.
pub const EMBEDDING_INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncoderKind {
    MeanPoolLinear,
    Identity,
}

impl EncoderKind {
    pub fn tag(self) -> u8 {
        match self {
            EncoderKind::MeanPoolLinear => 0,
            EncoderKind::Identity => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(EncoderKind::MeanPoolLinear),
            1 => Ok(EncoderKind::Identity),
            other => Err(Error::UnknownEncoderKind(other)),
        }
    }
}

impl FromStr for EncoderKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "mean_pool_linear" => Ok(EncoderKind::MeanPoolLinear),
            "identity" => Ok(EncoderKind::Identity),
            other => Err(format!("unknown encoder kind `{other}`")),
        }
    }
}

/// Frozen encoder weights. `weights` is `word_dim x feat_dim`, row-major.
/// Identity encoders carry an explicit identity matrix so that both kinds
/// serialize the same way.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    kind: EncoderKind,
    word_dim: usize,
    feat_dim: usize,
    weights: Vec<f32>,
}

impl EncoderParams {
    /// Validates shape and, for linear encoders, full column rank.
    pub fn new(kind: EncoderKind, word_dim: usize, feat_dim: usize, weights: Vec<f32>) -> Result<Self> {
        if word_dim == 0 || feat_dim == 0 {
            return Err(Error::ShapeMismatch("encoder dimensions must be positive".into()));
        }
        if weights.len() != word_dim * feat_dim {
            return Err(Error::ShapeMismatch(format!(
                "encoder weights have {} entries, expected {}x{}",
                weights.len(),
                word_dim,
                feat_dim
            )));
        }
        match kind {
            EncoderKind::Identity if word_dim != feat_dim => {
                return Err(Error::ShapeMismatch(format!(
                    "identity encoder needs word_dim == feat_dim ({word_dim} != {feat_dim})"
                )));
            }
            EncoderKind::Identity => {}
            EncoderKind::MeanPoolLinear => {
                let rank = column_rank(&weights, word_dim, feat_dim);
                if rank < feat_dim {
                    return Err(Error::RankDeficient { rank, cols: feat_dim });
                }
            }
        }
        Ok(EncoderParams { kind, word_dim, feat_dim, weights })
    }

    pub fn identity(dim: usize) -> Result<Self> {
        let mut w = vec![0.0f32; dim * dim];
        for i in 0..dim {
            w[i * dim + i] = 1.0;
        }
        Self::new(EncoderKind::Identity, dim, dim, w)
    }

    /// Gaussian weights with variance `1 / word_dim`.
    pub fn random(word_dim: usize, feat_dim: usize, rng: &mut Rng) -> Result<Self> {
        let std = 1.0 / (word_dim.max(1) as f64).sqrt();
        let w = (0..word_dim * feat_dim).map(|_| (std * standard_normal(rng)) as f32).collect();
        Self::new(EncoderKind::MeanPoolLinear, word_dim, feat_dim, w)
    }

    /// The shared frozen encoder for a given shape. Every model built with
    /// the same kind and dimensions gets bit-identical weights.
    pub fn reference(kind: EncoderKind, word_dim: usize, feat_dim: usize) -> Result<Self> {
        match kind {
            EncoderKind::Identity => {
                if word_dim != feat_dim {
                    return Err(Error::ShapeMismatch(format!(
                        "identity encoder needs word_dim == feat_dim ({word_dim} != {feat_dim})"
                    )));
                }
                Self::identity(feat_dim)
            }
            EncoderKind::MeanPoolLinear => {
                Self::random(word_dim, feat_dim, &mut rng_from_seed(REFERENCE_ENCODER_SEED))
            }
        }
    }

    pub fn kind(&self) -> EncoderKind {
        self.kind
    }

    pub fn word_dim(&self) -> usize {
        self.word_dim
    }

    pub fn feat_dim(&self) -> usize {
        self.feat_dim
    }

    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    fn check(&self, words: &[f32], class_embedding: &[f32]) -> Result<usize> {
        if class_embedding.len() != self.word_dim {
            return Err(Error::dims(self.word_dim, class_embedding.len()));
        }
        if words.is_empty() || words.len() % self.word_dim != 0 {
            return Err(Error::ShapeMismatch(format!(
                "{} word values are not a positive multiple of word_dim {}",
                words.len(),
                self.word_dim
            )));
        }
        Ok(words.len() / self.word_dim)
    }

    fn pool(&self, words: &[f32], class_embedding: &[f32]) -> Vec<f64> {
        let count = (words.len() / self.word_dim + 1) as f64;
        let mut pooled: Vec<f64> = class_embedding.iter().map(|&x| x as f64).collect();
        for word in words.chunks_exact(self.word_dim) {
            for (p, &w) in pooled.iter_mut().zip(word) {
                *p += w as f64;
            }
        }
        pooled.iter_mut().for_each(|p| *p /= count);
        pooled
    }

    fn project(&self, pooled: &[f64]) -> Vec<f64> {
        match self.kind {
            EncoderKind::Identity => pooled.to_vec(),
            EncoderKind::MeanPoolLinear => {
                let mut y = vec![0.0f64; self.feat_dim];
                for (i, &p) in pooled.iter().enumerate() {
                    let row = &self.weights[i * self.feat_dim..(i + 1) * self.feat_dim];
                    for (yj, &w) in y.iter_mut().zip(row) {
                        *yj += p * w as f64;
                    }
                }
                y
            }
        }
    }

    /// Full-precision encoding. `words` holds `m` rows of `word_dim` values.
    pub fn encode_f64(&self, words: &[f32], class_embedding: &[f32]) -> Result<Vec<f64>> {
        self.check(words, class_embedding)?;
        let y = self.project(&self.pool(words, class_embedding));
        normalize_f64(&y)
    }

    pub fn encode(&self, words: &[f32], class_embedding: &[f32]) -> Result<FeatureVector> {
        let f = self.encode_f64(words, class_embedding)?;
        Ok(FeatureVector::from_unit(f.into_iter().map(|x| x as f32).collect()))
    }

    /// Gradient of `upstream . encode(words)` with respect to the pooled
    /// embedding. Every word receives this divided by `m + 1`.
    pub fn pooled_grad(&self, words: &[f32], class_embedding: &[f32], upstream: &[f64]) -> Result<Vec<f64>> {
        self.check(words, class_embedding)?;
        if upstream.len() != self.feat_dim {
            return Err(Error::dims(self.feat_dim, upstream.len()));
        }
        let y = self.project(&self.pool(words, class_embedding));
        let ny = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(ny >= crate::embedding::NORM_FLOOR) {
            return Err(Error::ZeroVector { norm: ny });
        }
        // d(y/|y|)/dy is the tangent-space projection scaled by 1/|y|.
        let radial: f64 = y.iter().zip(upstream).map(|(a, b)| a * b).sum::<f64>() / ny;
        let gy: Vec<f64> = y.iter().zip(upstream).map(|(&yi, &g)| (g - radial * yi / ny) / ny).collect();
        Ok(match self.kind {
            EncoderKind::Identity => gy,
            EncoderKind::MeanPoolLinear => self
                .weights
                .chunks_exact(self.feat_dim)
                .map(|row| row.iter().zip(&gy).map(|(&w, &g)| w as f64 * g).sum())
                .collect(),
        })
    }

    /// Gradient of `upstream . encode(words, class)` with respect to the
    /// words, `m x word_dim`. The class embedding is frozen and gets none.
    pub fn encode_grad(&self, words: &[f32], class_embedding: &[f32], upstream: &[f64]) -> Result<Vec<f64>> {
        let m = self.check(words, class_embedding)?;
        let g = self.pooled_grad(words, class_embedding, upstream)?;
        let scale = 1.0 / (m + 1) as f64;
        let per_word: Vec<f64> = g.iter().map(|v| v * scale).collect();
        Ok(per_word.iter().copied().cycle().take(m * self.word_dim).collect())
    }
}

/// Numerical column rank of a row-major `rows x cols` matrix via modified
/// Gram-Schmidt.
fn column_rank(w: &[f32], rows: usize, cols: usize) -> usize {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(cols);
    let max_norm = (0..cols)
        .map(|j| (0..rows).map(|i| (w[i * cols + j] as f64).powi(2)).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    let tol = max_norm * 1e-9;
    for j in 0..cols {
        let mut v: Vec<f64> = (0..rows).map(|i| w[i * cols + j] as f64).collect();
        for b in &basis {
            let p: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > tol && n > 0.0 {
            v.iter_mut().for_each(|x| *x /= n);
            basis.push(v);
        }
    }
    basis.len()
}

/// Learnable perceptual and spurious contexts for one category, plus its
/// frozen class embedding. Contexts are stored row-major, `m x word_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextPair {
    pub category_id: u32,
    pub context_len: usize,
    pub word_dim: usize,
    pub perceptual: Vec<f32>,
    pub spurious: Vec<Vec<f32>>,
    pub class_embedding: Vec<f32>,
}

impl ContextPair {
    /// Draws every learnable word from N(0, 0.02^2).
    pub fn init(
        category_id: u32,
        context_len: usize,
        word_dim: usize,
        num_spurious: usize,
        class_embedding: Vec<f32>,
        rng: &mut Rng,
    ) -> Result<Self> {
        if context_len == 0 || num_spurious == 0 {
            return Err(Error::ShapeMismatch("context_len and num_spurious must be at least 1".into()));
        }
        if class_embedding.len() != word_dim {
            return Err(Error::dims(word_dim, class_embedding.len()));
        }
        let n = context_len * word_dim;
        let perceptual = gaussian_vec(n, EMBEDDING_INIT_STD, rng);
        let spurious = (0..num_spurious).map(|_| gaussian_vec(n, EMBEDDING_INIT_STD, rng)).collect();
        Ok(ContextPair { category_id, context_len, word_dim, perceptual, spurious, class_embedding })
    }

    pub fn num_spurious(&self) -> usize {
        self.spurious.len()
    }

    pub fn perceptual_word(&self, position: usize) -> &[f32] {
        &self.perceptual[position * self.word_dim..(position + 1) * self.word_dim]
    }
}

pub(crate) fn gaussian_vec(n: usize, std: f64, rng: &mut Rng) -> Vec<f32> {
    (0..n).map(|_| (std * standard_normal(rng)) as f32).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PerturbationKind {
    Mask,
    Noise { sigma: f64 },
    Swap { donor_category: usize, donor_position: usize },
}

/// A single-word perturbation of a perceptual context.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Perturbation {
    pub kind: PerturbationKind,
    pub position: usize,
}

/// Which perturbation kinds training draws from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PerturbationPolicy {
    Mixed,
    Mask,
    Noise,
    Swap,
}

impl FromStr for PerturbationPolicy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "mixed" => Ok(PerturbationPolicy::Mixed),
            "mask" => Ok(PerturbationPolicy::Mask),
            "noise" => Ok(PerturbationPolicy::Noise),
            "swap" => Ok(PerturbationPolicy::Swap),
            other => Err(format!("unknown perturbation policy `{other}`")),
        }
    }
}

impl Perturbation {
    /// Uniform position; kind uniform over the policy's kinds; swap donors
    /// uniform over all categories and positions.
    pub fn sample(
        policy: PerturbationPolicy,
        noise_sigma: f64,
        context_len: usize,
        num_categories: usize,
        rng: &mut Rng,
    ) -> Self {
        let position = rng.random_range(0..context_len);
        let which = match policy {
            PerturbationPolicy::Mixed => rng.random_range(0..3u8),
            PerturbationPolicy::Mask => 0,
            PerturbationPolicy::Noise => 1,
            PerturbationPolicy::Swap => 2,
        };
        let kind = match which {
            0 => PerturbationKind::Mask,
            1 => PerturbationKind::Noise { sigma: noise_sigma },
            _ => PerturbationKind::Swap {
                donor_category: rng.random_range(0..num_categories),
                donor_position: rng.random_range(0..context_len),
            },
        };
        Perturbation { kind, position }
    }
}

/// Copy of `ctx.perceptual` with exactly the word at `p.position` replaced.
pub fn perturb_context(
    ctx: &ContextPair,
    p: &Perturbation,
    all_contexts: &[ContextPair],
    mask_embedding: &[f32],
    rng: &mut Rng,
) -> Result<Vec<f32>> {
    if p.position >= ctx.context_len {
        return Err(Error::InvalidPosition { position: p.position, len: ctx.context_len });
    }
    let dw = ctx.word_dim;
    let mut words = ctx.perceptual.clone();
    let slot = &mut words[p.position * dw..(p.position + 1) * dw];
    match p.kind {
        PerturbationKind::Mask => {
            if mask_embedding.len() != dw {
                return Err(Error::dims(dw, mask_embedding.len()));
            }
            slot.copy_from_slice(mask_embedding);
        }
        PerturbationKind::Noise { sigma } => {
            if !(sigma >= 0.0) {
                return Err(Error::InvalidSpec(format!("noise sigma must be >= 0, got {sigma}")));
            }
            for v in slot.iter_mut() {
                *v = (sigma * standard_normal(rng)) as f32;
            }
        }
        PerturbationKind::Swap { donor_category, donor_position } => {
            let donor = all_contexts.get(donor_category).ok_or(Error::UnknownDonor(donor_category))?;
            if donor_position >= donor.context_len {
                return Err(Error::InvalidPosition { position: donor_position, len: donor.context_len });
            }
            if donor.word_dim != dw {
                return Err(Error::dims(dw, donor.word_dim));
            }
            slot.copy_from_slice(donor.perceptual_word(donor_position));
        }
    }
    Ok(words)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{dot, normalize};

    fn ctx(m: usize, dw: usize, seed: u64) -> ContextPair {
        let mut rng = rng_from_seed(seed);
        let cls = gaussian_vec(dw, 0.02, &mut rng);
        ContextPair::init(0, m, dw, 1, cls, &mut rng).unwrap()
    }

    #[test]
    fn identity_single_word_zero_class() {
        let enc = EncoderParams::identity(3).unwrap();
        let out = enc.encode(&[1.0, 2.0, 2.0], &[0.0; 3]).unwrap();
        let expect = normalize(&[1.0, 2.0, 2.0]).unwrap();
        for (a, b) in out.as_slice().iter().zip(expect.as_slice()) {
            assert!((a - b).abs() < 1e-7);
        }
    }

    #[test]
    fn identity_all_equal_words() {
        let enc = EncoderParams::identity(2).unwrap();
        let u = [0.6f32, 0.8];
        let words = [u, u, u].concat();
        let out = enc.encode(&words, &u).unwrap();
        assert!((out.as_slice()[0] - 0.6).abs() < 1e-7 && (out.as_slice()[1] - 0.8).abs() < 1e-7);
    }

    #[test]
    fn mean_pool_linear_matches_straight_line() {
        let mut rng = rng_from_seed(9);
        let (m, dw, d) = (3, 6, 4);
        let enc = EncoderParams::random(dw, d, &mut rng).unwrap();
        let words = gaussian_vec(m * dw, 1.0, &mut rng);
        let cls = gaussian_vec(dw, 1.0, &mut rng);
        let got = enc.encode(&words, &cls).unwrap();

        let mut mean = vec![0.0f64; dw];
        for i in 0..dw {
            mean[i] = (words[i] as f64 + words[dw + i] as f64 + words[2 * dw + i] as f64 + cls[i] as f64) / 4.0;
        }
        let w = enc.weights();
        let y: Vec<f64> = (0..d).map(|j| (0..dw).map(|i| mean[i] * w[i * d + j] as f64).sum()).collect();
        let n = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        for j in 0..d {
            assert!((got.as_slice()[j] as f64 - y[j] / n).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_upstream_zero_grad() {
        let c = ctx(3, 5, 1);
        let enc = EncoderParams::random(5, 4, &mut rng_from_seed(2)).unwrap();
        let g = enc.encode_grad(&c.perceptual, &c.class_embedding, &[0.0; 4]).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_grad_is_tangent() {
        let enc = EncoderParams::identity(3).unwrap();
        let g = enc.encode_grad(&[1.0, 0.0, 0.0], &[0.0; 3], &[0.0, 1.0, 0.0]).unwrap();
        assert_eq!(g[0], 0.0);
        assert!(g[1] > 0.0);
    }

    #[test]
    fn rank_check() {
        // two identical columns
        let w = vec![1.0, 1.0, 2.0, 2.0, 3.0, 3.0];
        assert!(matches!(
            EncoderParams::new(EncoderKind::MeanPoolLinear, 3, 2, w),
            Err(Error::RankDeficient { rank: 1, cols: 2 })
        ));
        assert!(EncoderParams::random(3, 4, &mut rng_from_seed(0)).is_err());
    }

    #[test]
    fn reference_is_shared() {
        let a = EncoderParams::reference(EncoderKind::MeanPoolLinear, 16, 8).unwrap();
        let b = EncoderParams::reference(EncoderKind::MeanPoolLinear, 16, 8).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn self_swap_is_identity() {
        let c = ctx(4, 6, 3);
        let all = vec![c.clone()];
        let p = Perturbation { kind: PerturbationKind::Swap { donor_category: 0, donor_position: 2 }, position: 2 };
        let out = perturb_context(&c, &p, &all, &[0.0; 6], &mut rng_from_seed(0)).unwrap();
        assert_eq!(out, c.perceptual);
    }

    #[test]
    fn mask_replaces_one_row() {
        let c = ctx(4, 6, 4);
        let mask = [0.5f32; 6];
        let p = Perturbation { kind: PerturbationKind::Mask, position: 0 };
        let out = perturb_context(&c, &p, &[], &mask, &mut rng_from_seed(0)).unwrap();
        assert_eq!(&out[..6], &mask);
        assert_eq!(&out[6..], &c.perceptual[6..]);
    }

    #[test]
    fn zero_sigma_noise_zeroes_row() {
        let c = ctx(3, 4, 5);
        let p = Perturbation { kind: PerturbationKind::Noise { sigma: 0.0 }, position: 1 };
        let out = perturb_context(&c, &p, &[], &[0.0; 4], &mut rng_from_seed(0)).unwrap();
        assert!(out[4..8].iter().all(|&v| v == 0.0));
        assert_eq!(&out[..4], &c.perceptual[..4]);
        assert_eq!(&out[8..], &c.perceptual[8..]);
    }

    #[test]
    fn perturbation_errors() {
        let c = ctx(3, 4, 6);
        let mut rng = rng_from_seed(0);
        let bad = Perturbation { kind: PerturbationKind::Mask, position: 3 };
        assert!(matches!(perturb_context(&c, &bad, &[], &[0.0; 4], &mut rng), Err(Error::InvalidPosition { .. })));
        let swap = Perturbation { kind: PerturbationKind::Swap { donor_category: 1, donor_position: 0 }, position: 0 };
        assert!(matches!(
            perturb_context(&c, &swap, &[c.clone()], &[0.0; 4], &mut rng),
            Err(Error::UnknownDonor(1))
        ));
    }

    #[test]
    fn one_word_perturbations_stay_affine() {
        let (m, dw, d) = (16, 32, 16);
        let enc = EncoderParams::reference(EncoderKind::MeanPoolLinear, dw, d).unwrap();
        let mut rng = rng_from_seed(77);
        let contexts: Vec<ContextPair> = (0..4)
            .map(|k| {
                let cls = gaussian_vec(dw, 0.02, &mut rng);
                ContextPair::init(k, m, dw, 1, cls, &mut rng).unwrap()
            })
            .collect();
        let mask = gaussian_vec(dw, 0.02, &mut rng);
        let mut close = 0;
        for trial in 0..200 {
            let c = &contexts[trial % 4];
            let p = Perturbation::sample(PerturbationPolicy::Mixed, 0.02, m, 4, &mut rng);
            let words = perturb_context(c, &p, &contexts, &mask, &mut rng).unwrap();
            let a = enc.encode(&c.perceptual, &c.class_embedding).unwrap();
            let b = enc.encode(&words, &c.class_embedding).unwrap();
            if dot(a.as_slice(), b.as_slice()) > 0.5 {
                close += 1;
            }
        }
        assert!(close >= 190, "only {close}/200 perturbed features stayed close");
    }
}
