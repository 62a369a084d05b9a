//! Integrated scoring.
//!
//! For a sample x and category k: `s_k = <w^p_k, x>`, the regularizer
//! `gamma_k = sigmoid(a * (s_k - s^s_k))` where `s^s_k` is the largest
//! spurious similarity of k and `a` the gamma scale, and the integrated
//! score `r_k = s_k * gamma_k`. The prediction is `argmax r` and the OOD
//! score is the negated maximum softmax probability over `tau * r`.

use crate::embedding::dot_mixed;
use crate::error::{Error, Result};
use crate::training::loss::sigmoid;
use crate::training::state::ModelState;

pub const DEFAULT_LOGIT_SCALE: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoringConfig {
    /// Scale of the OOD softmax, and of the regularizer unless
    /// `gamma_scale` is set.
    pub logit_scale: f64,
    /// Scale inside the perceptual/spurious sigmoid. 1 gives the unscaled
    /// binary softmax over raw cosines.
    pub gamma_scale: Option<f64>,
    /// Baseline mode: gamma fixed at 1 so that r = s.
    pub perceptual_only: bool,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        ScoringConfig { logit_scale: DEFAULT_LOGIT_SCALE, gamma_scale: None, perceptual_only: false }
    }
}

impl ScoringConfig {
    pub fn gamma_scale(&self) -> f64 {
        self.gamma_scale.unwrap_or(self.logit_scale)
    }

    pub fn perceptual_only(self) -> Self {
        ScoringConfig { perceptual_only: true, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.logit_scale > 0.0 && self.logit_scale.is_finite()) || !(self.gamma_scale() > 0.0) {
            return Err(Error::InvalidSpec("logit and gamma scales must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreReport {
    pub similarities: Vec<f64>,
    pub gamma: Vec<f64>,
    pub integrated: Vec<f64>,
    pub predicted: usize,
    /// Negated maximum softmax probability, in (-1, -1/C].
    pub ood_score: f64,
    /// Log of the maximum softmax probability. Strictly increasing in
    /// `-ood_score` but does not saturate at 1 in floating point, so it is
    /// the score handed to the metrics.
    pub id_score: f64,
}

/// Index and value of the most similar spurious feature (first on ties).
pub fn max_spurious(features: &[Vec<f64>], x: &[f32]) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, w) in features.iter().enumerate() {
        let s = dot_mixed(w, x);
        if s > best.1 {
            best = (i, s);
        }
    }
    best
}

/// Lowest index among the maxima.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Maximum softmax probability of `scale * values`, as (negated MSP, log MSP).
/// Terms are summed in sorted order so the result does not depend on the
/// order of the categories.
pub fn softmax_confidence(values: &[f64], scale: f64) -> (f64, f64) {
    let top = argmax(values);
    let mut terms: Vec<f64> = values
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != top)
        .map(|(_, &v)| (scale * (v - values[top])).exp())
        .collect();
    terms.sort_by(f64::total_cmp);
    let rest: f64 = terms.iter().sum();
    (-1.0 / (1.0 + rest), -rest.ln_1p())
}

pub fn score(x: &[f32], state: &ModelState, cfg: &ScoringConfig) -> Result<ScoreReport> {
    if x.len() != state.feat_dim() {
        return Err(Error::dims(state.feat_dim(), x.len()));
    }
    let c = state.num_categories();
    if c == 0 {
        return Err(Error::EmptySet("model has no categories"));
    }
    let mut similarities = Vec::with_capacity(c);
    let mut gamma = Vec::with_capacity(c);
    for k in 0..c {
        let s = dot_mixed(state.perceptual_feature(k), x);
        let g = if cfg.perceptual_only {
            1.0
        } else {
            let (_, ss) = max_spurious(state.spurious_features(k), x);
            sigmoid(cfg.gamma_scale() * (s - ss))
        };
        similarities.push(s);
        gamma.push(g);
    }
    let integrated: Vec<f64> = similarities.iter().zip(&gamma).map(|(s, g)| s * g).collect();
    let predicted = argmax(&integrated);
    let (ood_score, id_score) = softmax_confidence(&integrated, cfg.logit_scale);
    Ok(ScoreReport { similarities, gamma, integrated, predicted, ood_score, id_score })
}

pub fn classify(x: &[f32], state: &ModelState, cfg: &ScoringConfig) -> Result<usize> {
    Ok(score(x, state, cfg)?.predicted)
}

pub fn ood_score(x: &[f32], state: &ModelState, cfg: &ScoringConfig) -> Result<f64> {
    Ok(score(x, state, cfg)?.ood_score)
}

/// Zero-shot variant: description features play the perceptual role and
/// each category's perturbed description features act as spurious ones.
/// Gamma is the mean of the per-perturbation sigmoids.
pub fn zero_shot_regularize(
    descriptions: &[Vec<f32>],
    perturbed: &[Vec<Vec<f32>>],
    x: &[f32],
    logit_scale: f64,
) -> Result<Vec<f64>> {
    if descriptions.len() != perturbed.len() {
        return Err(Error::LengthMismatch { left: descriptions.len(), right: perturbed.len() });
    }
    let d = x.len();
    descriptions
        .iter()
        .zip(perturbed)
        .map(|(desc, variants)| {
            if desc.len() != d {
                return Err(Error::dims(d, desc.len()));
            }
            if variants.is_empty() {
                return Err(Error::EmptySet("perturbed descriptions"));
            }
            let s = crate::embedding::dot(desc, x);
            let mut acc = 0.0;
            for v in variants {
                if v.len() != d {
                    return Err(Error::dims(d, v.len()));
                }
                acc += sigmoid(logit_scale * (s - crate::embedding::dot(v, x)));
            }
            Ok(s * acc / variants.len() as f64)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{normalize, rng_from_seed, standard_normal};
    use crate::encoder::{ContextPair, EncoderParams};

    fn state_from(perceptual: &[Vec<f32>], spurious: &[Vec<f32>]) -> ModelState {
        let d = perceptual[0].len();
        let contexts = perceptual
            .iter()
            .zip(spurious)
            .enumerate()
            .map(|(k, (p, s))| ContextPair {
                category_id: k as u32,
                context_len: 1,
                word_dim: d,
                perceptual: p.clone(),
                spurious: vec![s.clone()],
                class_embedding: vec![0.0; d],
            })
            .collect();
        ModelState::new(EncoderParams::identity(d).unwrap(), vec![0.0; d], contexts).unwrap()
    }

    fn unit(v: &[f32]) -> Vec<f32> {
        normalize(v).unwrap().into_inner()
    }

    #[test]
    fn balanced_regularizer_halves() {
        let p = vec![unit(&[1.0, 0.0, 0.0]), unit(&[0.0, 1.0, 0.0])];
        let x = unit(&[0.8, 0.5, 0.3]);
        let st = state_from(&p, &p);
        let r = score(&x, &st, &ScoringConfig::default()).unwrap();
        assert!(r.gamma.iter().all(|&g| g == 0.5));
        for (ri, si) in r.integrated.iter().zip(&r.similarities) {
            assert_eq!(*ri, si / 2.0);
        }
        assert_eq!(r.predicted, 0);
    }

    #[test]
    fn saturated_regularizer_is_transparent() {
        // s^p = 0.6, s^s = 0.4 for the only category
        let x = vec![1.0f32, 0.0];
        let st = state_from(&[vec![0.6, 0.8]], &[vec![0.4, (0.84f32).sqrt()]]);
        let r = score(&x, &st, &ScoringConfig::default()).unwrap();
        assert!(r.gamma[0] > 1.0 - 1e-8);
        assert!((r.integrated[0] - r.similarities[0]).abs() < 1e-6);
    }

    #[test]
    fn single_category_predicts_zero() {
        let st = state_from(&[unit(&[1.0, 1.0])], &[unit(&[1.0, -1.0])]);
        assert_eq!(classify(&unit(&[-1.0, 0.2]), &st, &ScoringConfig::default()).unwrap(), 0);
    }

    #[test]
    fn argmax_kept_under_shared_gamma() {
        let p = vec![unit(&[1.0, 0.0, 0.0]), unit(&[0.0, 1.0, 0.0]), unit(&[0.6, 0.6, 0.0])];
        // every spurious feature orthogonal to x = w^p_1
        let s = vec![unit(&[0.0, 0.0, 1.0]); 3];
        let st = state_from(&p, &s);
        assert_eq!(classify(&p[1], &st, &ScoringConfig::default()).unwrap(), 1);
    }

    #[test]
    fn ood_score_edges() {
        let (g, _) = softmax_confidence(&[0.3, 0.3], 100.0);
        assert_eq!(g, -0.5);
        let (g, l) = softmax_confidence(&[0.5, 0.3], 100.0);
        assert!(g < -1.0 + 1e-8 && g > -1.0);
        assert!(l < 0.0);
    }

    #[test]
    fn ood_score_matches_log_sum_exp() {
        let r = [0.2f64, -0.1, 0.35, 0.3];
        let tau = 20.0f64;
        let lse = r.iter().map(|v| (tau * v).exp()).sum::<f64>().ln();
        let expect = -(tau * 0.35 - lse).exp();
        let (g, l) = softmax_confidence(&r, tau);
        assert!((g - expect).abs() < 1e-12);
        assert!((l - (tau * 0.35 - lse)).abs() < 1e-12);
    }

    #[test]
    fn perceptual_only_is_raw_similarity() {
        let st = state_from(&[unit(&[1.0, 0.3]), unit(&[0.2, 1.0])], &[unit(&[1.0, 0.0]), unit(&[0.0, 1.0])]);
        let x = unit(&[0.7, 0.4]);
        let r = score(&x, &st, &ScoringConfig::default().perceptual_only()).unwrap();
        assert_eq!(r.integrated, r.similarities);
    }

    #[test]
    fn gamma_decreases_with_spurious_similarity() {
        let x = vec![1.0f32, 0.0, 0.0];
        let wp = unit(&[0.9, 0.4, 0.0]);
        let mut last = f64::INFINITY;
        for t in [0.0f32, 0.2, 0.4, 0.6, 0.8] {
            let ws = unit(&[t, 0.0, 1.0]);
            let st = state_from(&[wp.clone()], &[ws]);
            let r = score(&x, &st, &ScoringConfig { logit_scale: 5.0, ..Default::default() }).unwrap();
            assert!(r.integrated[0] < last);
            last = r.integrated[0];
        }
    }

    #[test]
    fn zero_shot_cases() {
        let mut rng = rng_from_seed(5);
        let mut rnd = |d: usize| unit(&(0..d).map(|_| standard_normal(&mut rng) as f32).collect::<Vec<_>>());
        let desc: Vec<Vec<f32>> = (0..3).map(|_| rnd(6)).collect();
        let x = rnd(6);
        let same: Vec<Vec<Vec<f32>>> = desc.iter().map(|d| vec![d.clone(), d.clone()]).collect();
        let r = zero_shot_regularize(&desc, &same, &x, 100.0).unwrap();
        for (ri, d) in r.iter().zip(&desc) {
            assert_eq!(*ri, crate::embedding::dot(d, &x) * 0.5);
        }
        // K = 1 agrees with score()
        let pert: Vec<Vec<Vec<f32>>> = (0..3).map(|_| vec![rnd(6)]).collect();
        let zs = zero_shot_regularize(&desc, &pert, &x, 30.0).unwrap();
        let st = state_from(&desc, &pert.iter().map(|v| v[0].clone()).collect::<Vec<_>>());
        let sr = score(&x, &st, &ScoringConfig { logit_scale: 30.0, ..Default::default() }).unwrap();
        for (a, b) in zs.iter().zip(&sr.integrated) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}
