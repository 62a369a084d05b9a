//! Category extension: models trained separately on disjoint label sets
//! are combined by concatenating their per-category contexts. No
//! parameter is shared across categories, so per-category similarities
//! and regularizers are unchanged by a merge.

use serde::Serialize;

use crate::embedding::LabeledFeatureSet;
use crate::error::{Error, Result};
use crate::metrics::{evaluate, EvalConfig};
use crate::training::state::ModelState;

fn same_encoder(a: &ModelState, b: &ModelState) -> bool {
    let (ea, eb) = (a.encoder(), b.encoder());
    ea.kind() == eb.kind()
        && ea.word_dim() == eb.word_dim()
        && ea.feat_dim() == eb.feat_dim()
        && ea.weights().iter().zip(eb.weights()).all(|(x, y)| x.to_bits() == y.to_bits())
}

/// Concatenates models in input order. Category `i` of model `j` becomes
/// global category `offset_j + i`. The first model's mask embedding is kept.
pub fn merge_models(models: &[&ModelState]) -> Result<ModelState> {
    let first = *models.first().ok_or(Error::EmptySet("models to merge"))?;
    for m in &models[1..] {
        if m.word_dim() != first.word_dim() || m.feat_dim() != first.feat_dim() {
            return Err(Error::ShapeMismatch(format!(
                "encoder shape {}x{} differs from {}x{}",
                m.word_dim(),
                m.feat_dim(),
                first.word_dim(),
                first.feat_dim()
            )));
        }
        if !same_encoder(first, m) {
            return Err(Error::EncoderMismatch);
        }
        let shape_ok = m.num_categories() == 0
            || first.num_categories() == 0
            || (m.context_len() == first.context_len() && m.num_spurious() == first.num_spurious());
        if !shape_ok {
            return Err(Error::ShapeMismatch("context length or spurious count differs between models".into()));
        }
    }
    let total: usize = models.iter().map(|m| m.num_categories()).sum();
    let mut contexts = Vec::with_capacity(total);
    let mut perceptual = Vec::with_capacity(total);
    let mut spurious = Vec::with_capacity(total);
    let mut velocity = Vec::with_capacity(total);
    for m in models {
        let (p, s) = m.cached_parts();
        for (k, ctx) in m.contexts().iter().enumerate() {
            let mut ctx = ctx.clone();
            ctx.category_id = contexts.len() as u32;
            contexts.push(ctx);
            perceptual.push(p[k].clone());
            spurious.push(s[k].clone());
            velocity.push(m.velocity()[k].clone());
        }
    }
    Ok(ModelState::from_cached_parts(
        first.encoder().clone(),
        first.mask_embedding().to_vec(),
        contexts,
        perceptual,
        spurious,
        velocity,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurvePoint {
    pub cumulative_categories: usize,
    pub accuracy: f64,
    pub fpr95: f64,
    pub auroc: f64,
}

/// For j = 1..=J: merge the first j models and evaluate on the union of the
/// first j ID sets (labels shifted per task) against the OOD sets.
pub fn incremental_eval(
    models: &[&ModelState],
    id_sets: &[&LabeledFeatureSet],
    ood_sets: &[(&str, &LabeledFeatureSet)],
    cfg: &EvalConfig,
) -> Result<Vec<CurvePoint>> {
    if models.len() != id_sets.len() {
        return Err(Error::LengthMismatch { left: models.len(), right: id_sets.len() });
    }
    for (m, s) in models.iter().zip(id_sets) {
        if m.num_categories() != s.num_categories() as usize {
            return Err(Error::ShapeMismatch(format!(
                "model has {} categories but its ID set declares {}",
                m.num_categories(),
                s.num_categories()
            )));
        }
    }
    (1..=models.len())
        .map(|j| {
            let merged = merge_models(&models[..j])?;
            let union = LabeledFeatureSet::concat_offset(&id_sets[..j])?;
            let report = evaluate(&merged, &union, ood_sets, cfg)?;
            Ok(CurvePoint {
                cumulative_categories: merged.num_categories(),
                accuracy: report.id_accuracy,
                fpr95: report.average.fpr_at_tpr,
                auroc: report.average.auroc,
            })
        })
        .collect()
}
