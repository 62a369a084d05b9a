//! Mixture-on-sphere benchmark generator.
//!
//! Each cluster is a normalized isotropic Gaussian around a unit mean
//! direction, an approximation of a von Mises-Fisher component whose
//! per-coordinate spread is `1 / sqrt(concentration)`. OOD cluster `j` is
//! paired with ID category `j % C` and its mean sits `spurious_offset`
//! radians away from the paired ID mean along a random tangent direction.

use crate::embedding::{dot, normalize, standard_normal, LabeledFeatureSet, Rng, UNLABELED};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub num_id_categories: usize,
    pub num_ood_clusters: usize,
    pub dim: usize,
    pub samples_per_cluster: usize,
    pub concentration: f64,
    /// Angle in radians between an OOD mean and its paired ID mean.
    pub spurious_offset: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            num_id_categories: 8,
            num_ood_clusters: 4,
            dim: 32,
            samples_per_cluster: 100,
            concentration: 100.0,
            spurious_offset: 0.6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticBenchmark {
    pub id_set: LabeledFeatureSet,
    pub ood_set: LabeledFeatureSet,
    pub id_means: Vec<Vec<f32>>,
    pub ood_means: Vec<Vec<f32>>,
    /// ID category each OOD cluster was placed next to.
    pub ood_pairing: Vec<usize>,
}

fn random_unit(dim: usize, rng: &mut Rng) -> Result<Vec<f32>> {
    let raw: Vec<f32> = (0..dim).map(|_| standard_normal(rng) as f32).collect();
    Ok(normalize(&raw)?.into_inner())
}

fn sample_around(mean: &[f32], spread: f64, rng: &mut Rng) -> Result<Vec<f32>> {
    let raw: Vec<f32> = mean
        .iter()
        .map(|&m| (m as f64 + spread * standard_normal(rng)) as f32)
        .collect();
    Ok(normalize(&raw)?.into_inner())
}

pub fn gen_synthetic(spec: &SyntheticSpec, rng: &mut Rng) -> Result<SyntheticBenchmark> {
    if spec.num_id_categories == 0 || spec.samples_per_cluster == 0 {
        return Err(Error::InvalidSpec("category and sample counts must be positive".into()));
    }
    if spec.dim < 2 {
        return Err(Error::InvalidSpec(format!("dim must be at least 2, got {}", spec.dim)));
    }
    if !(spec.concentration > 0.0) || !spec.spurious_offset.is_finite() {
        return Err(Error::InvalidSpec("concentration must be positive and offset finite".into()));
    }
    let c = spec.num_id_categories;
    let spread = 1.0 / spec.concentration.sqrt();

    let id_means = (0..c).map(|_| random_unit(spec.dim, rng)).collect::<Result<Vec<_>>>()?;

    let mut ood_means = Vec::with_capacity(spec.num_ood_clusters);
    let mut ood_pairing = Vec::with_capacity(spec.num_ood_clusters);
    for j in 0..spec.num_ood_clusters {
        let paired = j % c;
        let mu = &id_means[paired];
        // Gram-Schmidt a random direction into the tangent space at mu.
        let tangent = loop {
            let r = random_unit(spec.dim, rng)?;
            let proj = dot(&r, mu);
            let t: Vec<f32> = r.iter().zip(mu).map(|(&a, &b)| (a as f64 - proj * b as f64) as f32).collect();
            if let Ok(t) = normalize(&t) {
                break t.into_inner();
            }
        };
        let (s, co) = spec.spurious_offset.sin_cos();
        let raw: Vec<f32> =
            mu.iter().zip(&tangent).map(|(&m, &t)| (co * m as f64 + s * t as f64) as f32).collect();
        ood_means.push(normalize(&raw)?.into_inner());
        ood_pairing.push(paired);
    }

    let mut id_set = LabeledFeatureSet::empty(spec.dim, c as u32);
    for (k, mu) in id_means.iter().enumerate() {
        for _ in 0..spec.samples_per_cluster {
            id_set.push(&sample_around(mu, spread, rng)?, k as u32)?;
        }
    }
    let mut ood_set = LabeledFeatureSet::empty(spec.dim, c as u32);
    for mu in &ood_means {
        for _ in 0..spec.samples_per_cluster {
            ood_set.push(&sample_around(mu, spread, rng)?, UNLABELED)?;
        }
    }

    Ok(SyntheticBenchmark { id_set, ood_set, id_means, ood_means, ood_pairing })
}
