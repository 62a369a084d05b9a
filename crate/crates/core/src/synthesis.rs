//! Spurious-sample synthesis.
//!
//! Candidates are drawn around the ID points of a category that sit
//! farthest from their k-th nearest neighbor, then kept only if a
//! one-word perturbation of the category's perceptual context moves its
//! text feature toward them.

use crate::embedding::{dot, normalize, standard_normal, FeatureVector, LabeledFeatureSet, Rng};
use crate::encoder::{perturb_context, Perturbation, PerturbationPolicy};
use crate::error::{Error, Result};
use crate::training::state::ModelState;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisConfig {
    /// Neighbor rank used for boundary selection; clamped to `n - 1`.
    pub k: usize,
    pub boundary_fraction: f64,
    pub sample_sigma: f64,
    pub candidates_per_boundary: usize,
    pub max_accepted_per_category: usize,
    /// Sample-and-filter rounds per call.
    pub rounds: usize,
    pub perturbation: PerturbationPolicy,
    pub noise_sigma: f64,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        SynthesisConfig {
            k: 20,
            boundary_fraction: 0.05,
            sample_sigma: 0.1,
            candidates_per_boundary: 10,
            max_accepted_per_category: 64,
            rounds: 1,
            perturbation: PerturbationPolicy::Mixed,
            noise_sigma: 0.02,
        }
    }
}

impl SynthesisConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.k >= 1
            && self.boundary_fraction > 0.0
            && self.boundary_fraction <= 1.0
            && self.sample_sigma > 0.0
            && self.candidates_per_boundary >= 1
            && self.max_accepted_per_category >= 1
            && self.rounds >= 1
            && self.noise_sigma >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidSpec(format!("invalid synthesis config: {self:?}")))
        }
    }
}

fn euclidean(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum::<f64>().sqrt()
}

/// Distance from each point to its k-th nearest other point.
pub fn knn_distances(points: &[&[f32]], k: usize) -> Result<Vec<f64>> {
    let n = points.len();
    if n < 2 {
        return Err(Error::TooFewPoints(n));
    }
    let k = k.clamp(1, n - 1);
    let mut row = Vec::with_capacity(n - 1);
    Ok((0..n)
        .map(|i| {
            row.clear();
            row.extend((0..n).filter(|&j| j != i).map(|j| euclidean(points[i], points[j])));
            let (_, kth, _) = row.select_nth_unstable_by(k - 1, |a, b| a.total_cmp(b));
            *kth
        })
        .collect())
}

/// Indices of the `ceil(fraction * n)` points with the largest distances
/// (at least one). Ties go to the lower index.
pub fn boundary_indices(distances: &[f64], fraction: f64) -> Vec<usize> {
    let n = distances.len();
    let count = crate::embedding::ceil_fraction(fraction, n).clamp(1, n.max(1)).min(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| distances[b].total_cmp(&distances[a]));
    order.truncate(count);
    order
}

fn gaussian_around(point: &[f32], sigma: f64, rng: &mut Rng) -> Result<FeatureVector> {
    let mut draw = || -> Vec<f32> {
        point.iter().map(|&p| (p as f64 + sigma * standard_normal(rng)) as f32).collect()
    };
    normalize(&draw()).or_else(|_| normalize(&draw()))
}

/// Gaussian candidates around the boundary points, projected to the sphere.
pub fn sample_candidates(
    points: &[&[f32]],
    distances: &[f64],
    cfg: &SynthesisConfig,
    rng: &mut Rng,
) -> Result<Vec<FeatureVector>> {
    if points.len() != distances.len() {
        return Err(Error::LengthMismatch { left: points.len(), right: distances.len() });
    }
    let mut out = Vec::new();
    for i in boundary_indices(distances, cfg.boundary_fraction) {
        for _ in 0..cfg.candidates_per_boundary {
            out.push(gaussian_around(points[i], cfg.sample_sigma, rng)?);
        }
    }
    Ok(out)
}

/// Keeps the candidates strictly closer to the perturbed text feature than
/// to the original one, in input order.
pub fn guide_filter(
    candidates: &[FeatureVector],
    original_feature: &[f32],
    perturbed_feature: &[f32],
) -> Result<Vec<FeatureVector>> {
    if original_feature.len() != perturbed_feature.len() {
        return Err(Error::dims(original_feature.len(), perturbed_feature.len()));
    }
    let d = original_feature.len();
    let mut kept = Vec::new();
    for z in candidates {
        if z.dim() != d {
            return Err(Error::dims(d, z.dim()));
        }
        if dot(perturbed_feature, z.as_slice()) > dot(original_feature, z.as_slice()) {
            kept.push(z.clone());
        }
    }
    Ok(kept)
}

/// One category's ID points with their kNN distances, computed once.
#[derive(Debug, Clone)]
pub struct CategoryPool<'a> {
    pub category: usize,
    pub points: Vec<&'a [f32]>,
    pub distances: Vec<f64>,
}

impl<'a> CategoryPool<'a> {
    pub fn new(id_set: &'a LabeledFeatureSet, category: usize, k: usize) -> Result<Self> {
        let points: Vec<&[f32]> = id_set.indices_of(category as u32).into_iter().map(|i| id_set.row(i)).collect();
        let distances = knn_distances(&points, k)?;
        Ok(CategoryPool { category, points, distances })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceRound {
    pub perturbation: Perturbation,
    pub original_feature: Vec<f32>,
    pub perturbed_feature: Vec<f32>,
    pub candidates: usize,
    /// Samples from this round that made it into the output.
    pub accepted: usize,
}

#[derive(Debug, Clone)]
pub struct SpuriousSamples {
    /// Accepted syntheses, labeled with the generating category, in round order.
    pub samples: LabeledFeatureSet,
    pub rounds: Vec<GuidanceRound>,
}

/// Sample, perturb, filter; repeated `cfg.rounds` times and truncated to
/// `cfg.max_accepted_per_category`. Nothing here is differentiated.
pub fn synthesize_from_pool(
    state: &ModelState,
    pool: &CategoryPool,
    cfg: &SynthesisConfig,
    rng: &mut Rng,
) -> Result<SpuriousSamples> {
    let k = pool.category;
    let ctx = state
        .contexts()
        .get(k)
        .ok_or(Error::LabelOutOfRange { label: k as u32, num_categories: state.num_categories() as u32 })?;
    let enc = state.encoder();
    let original = enc.encode(&ctx.perceptual, &ctx.class_embedding)?;
    let mut samples = LabeledFeatureSet::empty(state.feat_dim(), state.num_categories() as u32);
    let mut rounds = Vec::with_capacity(cfg.rounds);
    for _ in 0..cfg.rounds {
        let candidates = sample_candidates(&pool.points, &pool.distances, cfg, rng)?;
        let perturbation =
            Perturbation::sample(cfg.perturbation, cfg.noise_sigma, ctx.context_len, state.num_categories(), rng);
        let words = perturb_context(ctx, &perturbation, state.contexts(), state.mask_embedding(), rng)?;
        let perturbed = enc.encode(&words, &ctx.class_embedding)?;
        let kept = guide_filter(&candidates, original.as_slice(), perturbed.as_slice())?;
        let room = cfg.max_accepted_per_category.saturating_sub(samples.len());
        let take = kept.len().min(room);
        for z in &kept[..take] {
            samples.push(z.as_slice(), k as u32)?;
        }
        rounds.push(GuidanceRound {
            perturbation,
            original_feature: original.as_slice().to_vec(),
            perturbed_feature: perturbed.into_inner(),
            candidates: candidates.len(),
            accepted: take,
        });
    }
    Ok(SpuriousSamples { samples, rounds })
}

/// Spurious syntheses for one category of `id_set`.
pub fn synthesize_spurious(
    state: &ModelState,
    category: usize,
    id_set: &LabeledFeatureSet,
    cfg: &SynthesisConfig,
    rng: &mut Rng,
) -> Result<SpuriousSamples> {
    cfg.validate()?;
    let pool = CategoryPool::new(id_set, category, cfg.k)?;
    synthesize_from_pool(state, &pool, cfg, rng)
}
