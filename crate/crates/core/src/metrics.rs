//! OOD detection and classification metrics.
//!
//! All detection metrics take ID-ness scores: higher means more likely to
//! be in-distribution.

use serde::{Deserialize, Serialize};

use crate::embedding::{LabeledFeatureSet, UNLABELED};
use crate::error::{Error, Result};
use crate::inference::{score, ScoreReport, ScoringConfig};
use crate::training::state::ModelState;

pub const DEFAULT_TPR: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FprAtTpr {
    pub fpr: f64,
    pub threshold: f64,
}

fn check_scores(scores: &[f64], what: &'static str) -> Result<()> {
    if scores.is_empty() {
        return Err(Error::EmptySet(what));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidSpec(format!("NaN in {what}")));
    }
    Ok(())
}

/// Number of ID scores that must lie at or above the threshold:
/// `ceil(tpr * n)`, with products within rounding of an integer taken as
/// that integer (0.95 * 20 is 19, not 20).
pub fn required_true_positives(tpr: f64, n: usize) -> usize {
    crate::embedding::ceil_fraction(tpr, n).clamp(1, n)
}

/// Threshold = the `ceil(tpr * n_id)`-th largest ID score; OOD scores at or
/// above it count as false positives.
pub fn fpr_at_tpr(id_scores: &[f64], ood_scores: &[f64], tpr: f64) -> Result<FprAtTpr> {
    check_scores(id_scores, "ID scores")?;
    check_scores(ood_scores, "OOD scores")?;
    if !(tpr > 0.0 && tpr <= 1.0) {
        return Err(Error::InvalidSpec(format!("tpr must be in (0, 1], got {tpr}")));
    }
    let mut sorted = id_scores.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let threshold = sorted[required_true_positives(tpr, sorted.len()) - 1];
    let fp = ood_scores.iter().filter(|&&o| o >= threshold).count();
    Ok(FprAtTpr { fpr: fp as f64 / ood_scores.len() as f64, threshold })
}

/// Probability that a random ID score beats a random OOD score, ties
/// counted as one half. Computed from a single sort; the pair count is
/// kept in integers so the result is one exact division.
pub fn auroc(id_scores: &[f64], ood_scores: &[f64]) -> Result<f64> {
    check_scores(id_scores, "ID scores")?;
    check_scores(ood_scores, "OOD scores")?;
    let mut all: Vec<(f64, bool)> = id_scores
        .iter()
        .map(|&s| (s, true))
        .chain(ood_scores.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));

    // twice the number of (id, ood) pairs with id > ood, plus ties once
    let mut doubled: u128 = 0;
    let mut ood_below: u128 = 0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        let (mut id_g, mut ood_g) = (0u128, 0u128);
        while j < all.len() && all[j].0 == all[i].0 {
            if all[j].1 {
                id_g += 1;
            } else {
                ood_g += 1;
            }
            j += 1;
        }
        doubled += id_g * (2 * ood_below + ood_g);
        ood_below += ood_g;
        i = j;
    }
    let pairs = id_scores.len() as f64 * ood_scores.len() as f64;
    Ok(doubled as f64 / 2.0 / pairs)
}

pub fn accuracy<T: PartialEq>(predictions: &[T], labels: &[T]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::LengthMismatch { left: predictions.len(), right: labels.len() });
    }
    if predictions.is_empty() {
        return Err(Error::EmptySet("predictions"));
    }
    let hits = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / predictions.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalConfig {
    pub scoring: ScoringConfig,
    pub tpr: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { scoring: ScoringConfig::default(), tpr: DEFAULT_TPR }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub name: String,
    pub fpr_at_tpr: f64,
    pub tpr_level: f64,
    pub threshold: f64,
    pub auroc: f64,
    pub accuracy: f64,
    pub n_id: usize,
    pub n_ood: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub id_accuracy: f64,
    pub ood: Vec<MetricsReport>,
    /// Unweighted mean over the OOD sets.
    pub average: MetricsReport,
}

/// Scores every row of `set`.
pub fn score_set(state: &ModelState, set: &LabeledFeatureSet, scoring: &ScoringConfig) -> Result<Vec<ScoreReport>> {
    if set.dim() != state.feat_dim() {
        return Err(Error::ShapeMismatch(format!(
            "features have dimension {}, model expects {}",
            set.dim(),
            state.feat_dim()
        )));
    }
    set.rows().map(|x| score(x, state, scoring)).collect()
}

/// ID accuracy over the labeled rows of `id_set` from precomputed reports.
pub fn id_accuracy(reports: &[ScoreReport], id_set: &LabeledFeatureSet) -> Result<f64> {
    let (pred, labels): (Vec<u32>, Vec<u32>) = reports
        .iter()
        .zip(id_set.labels())
        .filter(|(_, &l)| l != UNLABELED)
        .map(|(r, &l)| (r.predicted as u32, l))
        .unzip();
    if labels.is_empty() {
        return Err(Error::EmptySet("labeled ID rows"));
    }
    accuracy(&pred, &labels)
}

/// Metrics from ID-ness scores, one OOD set at a time.
pub fn metrics_from_scores(
    name: &str,
    id_scores: &[f64],
    ood_scores: &[f64],
    id_acc: f64,
    tpr: f64,
) -> Result<MetricsReport> {
    let f = fpr_at_tpr(id_scores, ood_scores, tpr)?;
    Ok(MetricsReport {
        name: name.to_string(),
        fpr_at_tpr: f.fpr,
        tpr_level: tpr,
        threshold: f.threshold,
        auroc: auroc(id_scores, ood_scores)?,
        accuracy: id_acc,
        n_id: id_scores.len(),
        n_ood: ood_scores.len(),
    })
}

pub fn average_report(reports: &[MetricsReport]) -> Result<MetricsReport> {
    let first = reports.first().ok_or(Error::EmptySet("OOD sets"))?;
    let n = reports.len() as f64;
    let mean = |f: fn(&MetricsReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    Ok(MetricsReport {
        name: "average".to_string(),
        fpr_at_tpr: mean(|r| r.fpr_at_tpr),
        tpr_level: first.tpr_level,
        threshold: mean(|r| r.threshold),
        auroc: mean(|r| r.auroc),
        accuracy: first.accuracy,
        n_id: first.n_id,
        n_ood: reports.iter().map(|r| r.n_ood).sum(),
    })
}

/// Scores the ID set and every named OOD set, then reports per-set metrics
/// and their unweighted average.
pub fn evaluate(
    state: &ModelState,
    id_set: &LabeledFeatureSet,
    ood_sets: &[(&str, &LabeledFeatureSet)],
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    if id_set.is_empty() {
        return Err(Error::EmptySet("ID set"));
    }
    cfg.scoring.validate()?;
    let id_reports = score_set(state, id_set, &cfg.scoring)?;
    let id_acc = id_accuracy(&id_reports, id_set)?;
    let id_scores: Vec<f64> = id_reports.iter().map(|r| r.id_score).collect();
    let mut ood = Vec::with_capacity(ood_sets.len());
    for (name, set) in ood_sets {
        if set.is_empty() {
            return Err(Error::EmptySet("OOD set"));
        }
        let scores: Vec<f64> = score_set(state, set, &cfg.scoring)?.iter().map(|r| r.id_score).collect();
        ood.push(metrics_from_scores(name, &id_scores, &scores, id_acc, cfg.tpr)?);
    }
    let average = average_report(&ood)?;
    Ok(EvalReport { id_accuracy: id_acc, ood, average })
}
