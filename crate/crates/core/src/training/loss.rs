//! Training objectives and their analytic gradients.
//!
//! Every loss first produces gradients with respect to the cached text
//! features; [`backprop`] then pushes those through the frozen encoder to
//! the context words.

use crate::embedding::{dot_mixed, LabeledFeatureSet, UNLABELED};
use crate::error::{Error, Result};
use crate::inference::{classify, max_spurious, ScoringConfig};
use crate::training::state::ModelState;

/// Borrowed rows with their labels (true labels for ID samples, generating
/// categories for syntheses).
#[derive(Debug, Clone, Default)]
pub struct Batch<'a> {
    rows: Vec<&'a [f32]>,
    labels: Vec<u32>,
}

impl<'a> Batch<'a> {
    pub fn new(rows: Vec<&'a [f32]>, labels: Vec<u32>) -> Result<Self> {
        if rows.len() != labels.len() {
            return Err(Error::LengthMismatch { left: rows.len(), right: labels.len() });
        }
        Ok(Batch { rows, labels })
    }

    pub fn from_set(set: &'a LabeledFeatureSet) -> Self {
        Batch { rows: set.rows().collect(), labels: set.labels().to_vec() }
    }

    pub fn select(set: &'a LabeledFeatureSet, indices: &[usize]) -> Self {
        Batch {
            rows: indices.iter().map(|&i| set.row(i)).collect(),
            labels: indices.iter().map(|&i| set.label(i)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&'a [f32], u32)> + '_ {
        self.rows.iter().copied().zip(self.labels.iter().copied())
    }

    fn validate(&self, state: &ModelState) -> Result<()> {
        let c = state.num_categories() as u32;
        let d = state.feat_dim();
        for (row, label) in self.iter() {
            if row.len() != d {
                return Err(Error::dims(d, row.len()));
            }
            if label == UNLABELED || label >= c {
                return Err(Error::LabelOutOfRange { label, num_categories: c });
            }
        }
        Ok(())
    }
}

/// Gradients with respect to the cached text features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrads {
    pub perceptual: Vec<Vec<f64>>,
    pub spurious: Vec<Vec<Vec<f64>>>,
}

impl FeatureGrads {
    pub fn zeros(state: &ModelState) -> Self {
        let d = state.feat_dim();
        let c = state.num_categories();
        FeatureGrads {
            perceptual: vec![vec![0.0; d]; c],
            spurious: vec![vec![vec![0.0; d]; state.num_spurious()]; c],
        }
    }

    pub fn add_scaled(&mut self, other: &FeatureGrads, weight: f64) {
        for (a, b) in self.perceptual.iter_mut().zip(&other.perceptual) {
            axpy(a, weight, b);
        }
        for (sa, sb) in self.spurious.iter_mut().zip(&other.spurious) {
            for (a, b) in sa.iter_mut().zip(sb) {
                axpy(a, weight, b);
            }
        }
    }
}

/// Gradients with respect to every learnable context word, laid out like
/// the contexts themselves.
#[derive(Debug, Clone, PartialEq)]
pub struct WordGrads {
    pub perceptual: Vec<Vec<f64>>,
    pub spurious: Vec<Vec<Vec<f64>>>,
}

impl WordGrads {
    pub fn zeros(state: &ModelState) -> Self {
        let n = state.context_len() * state.word_dim();
        let c = state.num_categories();
        WordGrads { perceptual: vec![vec![0.0; n]; c], spurious: vec![vec![vec![0.0; n]; state.num_spurious()]; c] }
    }

    /// Category-major: perceptual words, then each spurious context.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (p, s) in self.perceptual.iter().zip(&self.spurious) {
            out.extend_from_slice(p);
            for v in s {
                out.extend_from_slice(v);
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub grads: WordGrads,
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

fn axpy_f32(y: &mut [f64], a: f64, x: &[f32]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi as f64;
    }
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// ln(1 + e^z) without overflow.
pub(crate) fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Pushes feature gradients through the encoder to the context words.
pub fn backprop(state: &ModelState, grads: &FeatureGrads) -> Result<WordGrads> {
    let enc = state.encoder();
    let m = state.context_len();
    let mut out = WordGrads::zeros(state);
    let through = |words: &[f32], cls: &[f32], g: &[f64], dst: &mut Vec<f64>| -> Result<()> {
        if g.iter().all(|&v| v == 0.0) {
            return Ok(());
        }
        let pooled = enc.pooled_grad(words, cls, g)?;
        let scale = 1.0 / (m + 1) as f64;
        for word in dst.chunks_exact_mut(pooled.len()) {
            for (w, p) in word.iter_mut().zip(&pooled) {
                *w = p * scale;
            }
        }
        Ok(())
    };
    for (k, ctx) in state.contexts().iter().enumerate() {
        through(&ctx.perceptual, &ctx.class_embedding, &grads.perceptual[k], &mut out.perceptual[k])?;
        for (i, words) in ctx.spurious.iter().enumerate() {
            through(words, &ctx.class_embedding, &grads.spurious[k][i], &mut out.spurious[k][i])?;
        }
    }
    Ok(out)
}

/// Inter-category ID loss: each sample's own perceptual logit against all
/// other categories' perceptual and spurious logits. The sample's own
/// spurious term is not in the denominator.
pub fn loss_id_features(batch: &Batch, state: &ModelState, logit_scale: f64) -> Result<(f64, FeatureGrads)> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    batch.validate(state)?;
    let c = state.num_categories();
    let ns = state.num_spurious();
    let inv_n = 1.0 / batch.len() as f64;
    let mut grads = FeatureGrads::zeros(state);
    let mut total = 0.0;
    let mut logits = Vec::with_capacity(c * (1 + ns));
    for (x, y) in batch.iter() {
        let y = y as usize;
        // logits[0] is the target; the rest follow category order.
        logits.clear();
        logits.push(logit_scale * dot_mixed(state.perceptual_feature(y), x));
        for k in (0..c).filter(|&k| k != y) {
            logits.push(logit_scale * dot_mixed(state.perceptual_feature(k), x));
            for w in state.spurious_features(k) {
                logits.push(logit_scale * dot_mixed(w, x));
            }
        }
        let lse = log_sum_exp(&logits);
        total += lse - logits[0];

        let mut idx = 0;
        let mut prob = || {
            let p = (logits[idx] - lse).exp();
            idx += 1;
            p
        };
        let p_y = prob();
        axpy_f32(&mut grads.perceptual[y], logit_scale * (p_y - 1.0) * inv_n, x);
        for k in (0..c).filter(|&k| k != y) {
            let p = prob();
            axpy_f32(&mut grads.perceptual[k], logit_scale * p * inv_n, x);
            for i in 0..ns {
                let p = prob();
                axpy_f32(&mut grads.spurious[k][i], logit_scale * p * inv_n, x);
            }
        }
    }
    Ok((total * inv_n, grads))
}

pub fn loss_id(batch: &Batch, state: &ModelState, logit_scale: f64) -> Result<LossValue> {
    let (value, fg) = loss_id_features(batch, state, logit_scale)?;
    Ok(LossValue { value, grads: backprop(state, &fg)? })
}

/// Binary perceptual-vs-spurious loss: ID samples should prefer their
/// perceptual feature, syntheses their generating category's spurious
/// feature. With several spurious contexts the most similar one is used.
/// Either batch may be empty and then contributes nothing.
pub fn loss_ood_features(
    id_batch: &Batch,
    spurious_batch: &Batch,
    state: &ModelState,
    logit_scale: f64,
) -> Result<(f64, FeatureGrads)> {
    id_batch.validate(state)?;
    spurious_batch.validate(state)?;
    let mut grads = FeatureGrads::zeros(state);
    let mut total = 0.0;
    // sign = +1: push perceptual above spurious; -1: the reverse.
    for (batch, sign) in [(id_batch, 1.0), (spurious_batch, -1.0)] {
        if batch.is_empty() {
            continue;
        }
        let inv_n = 1.0 / batch.len() as f64;
        let mut sum = 0.0;
        for (x, y) in batch.iter() {
            let y = y as usize;
            let sp = dot_mixed(state.perceptual_feature(y), x);
            let (i, ss) = max_spurious(state.spurious_features(y), x);
            let margin = sign * logit_scale * (sp - ss);
            sum += softplus(-margin);
            // d softplus(-u)/du = -sigmoid(-u)
            let coef = -sigmoid(-margin) * sign * logit_scale * inv_n;
            axpy_f32(&mut grads.perceptual[y], coef, x);
            axpy_f32(&mut grads.spurious[y][i], -coef, x);
        }
        total += sum * inv_n;
    }
    Ok((total, grads))
}

pub fn loss_ood(id_batch: &Batch, spurious_batch: &Batch, state: &ModelState, logit_scale: f64) -> Result<LossValue> {
    let (value, fg) = loss_ood_features(id_batch, spurious_batch, state, logit_scale)?;
    Ok(LossValue { value, grads: backprop(state, &fg)? })
}

/// Mean over categories of the summed squared cosine between every pair of
/// that category's spurious features. Zero when there is one spurious
/// context per category.
pub fn ortho_penalty_features(state: &ModelState) -> (f64, FeatureGrads) {
    let mut grads = FeatureGrads::zeros(state);
    let c = state.num_categories();
    if state.num_spurious() < 2 || c == 0 {
        return (0.0, grads);
    }
    let inv_c = 1.0 / c as f64;
    let mut total = 0.0;
    for k in 0..c {
        let feats = state.spurious_features(k);
        for i in 0..feats.len() {
            for j in i + 1..feats.len() {
                let d: f64 = feats[i].iter().zip(&feats[j]).map(|(a, b)| a * b).sum();
                total += d * d;
                axpy(&mut grads.spurious[k][i], 2.0 * d * inv_c, &feats[j]);
                axpy(&mut grads.spurious[k][j], 2.0 * d * inv_c, &feats[i]);
            }
        }
    }
    (total * inv_c, grads)
}

pub fn ortho_penalty(state: &ModelState) -> Result<LossValue> {
    let (value, fg) = ortho_penalty_features(state);
    Ok(LossValue { value, grads: backprop(state, &fg)? })
}

/// Weighted sum of the three training terms.
#[derive(Debug, Clone, PartialEq)]
pub struct Objective {
    pub loss_id: f64,
    pub loss_ood: f64,
    pub ortho: f64,
    pub total: f64,
    pub grads: WordGrads,
}

pub fn objective(
    id_batch: &Batch,
    spurious_batch: &Batch,
    state: &ModelState,
    logit_scale: f64,
    ood_loss_weight: f64,
    ortho_weight: f64,
) -> Result<Objective> {
    let (lid, mut fg) = loss_id_features(id_batch, state, logit_scale)?;
    let (lood, g_ood) = loss_ood_features(id_batch, spurious_batch, state, logit_scale)?;
    fg.add_scaled(&g_ood, ood_loss_weight);
    let mut ortho = 0.0;
    if ortho_weight != 0.0 {
        let (o, g_o) = ortho_penalty_features(state);
        fg.add_scaled(&g_o, ortho_weight);
        ortho = o;
    }
    Ok(Objective {
        loss_id: lid,
        loss_ood: lood,
        ortho,
        total: lid + ood_loss_weight * lood + ortho_weight * ortho,
        grads: backprop(state, &fg)?,
    })
}

/// Fraction of ID samples whose predicted category prefers its spurious
/// feature, plus the fraction of OOD samples whose predicted category
/// prefers its perceptual feature.
pub fn empirical_risk(
    id_set: &LabeledFeatureSet,
    ood_set: &LabeledFeatureSet,
    state: &ModelState,
    scoring: &ScoringConfig,
) -> Result<f64> {
    if id_set.is_empty() {
        return Err(Error::EmptySet("ID set"));
    }
    if ood_set.is_empty() {
        return Err(Error::EmptySet("OOD set"));
    }
    let misordered = |set: &LabeledFeatureSet, id: bool| -> Result<f64> {
        let mut count = 0usize;
        for x in set.rows() {
            let k = classify(x, state, scoring)?;
            let sp = dot_mixed(state.perceptual_feature(k), x);
            let (_, ss) = max_spurious(state.spurious_features(k), x);
            if (id && sp < ss) || (!id && sp > ss) {
                count += 1;
            }
        }
        Ok(count as f64 / set.len() as f64)
    };
    Ok(misordered(id_set, true)? + misordered(ood_set, false)?)
}
