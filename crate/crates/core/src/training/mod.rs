//! Context optimization: losses, optimizer and the per-task loop.

pub mod loss;
pub mod optim;
pub mod state;

use rand::seq::SliceRandom;

use crate::embedding::{LabeledFeatureSet, Rng};
use crate::encoder::{EncoderKind, EncoderParams};
use crate::error::{Error, Result};
use crate::synthesis::{synthesize_from_pool, CategoryPool, SynthesisConfig};
use loss::{objective, Batch};
use optim::{cosine_lr, sgd_step};
use state::ModelState;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr0: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub logit_scale: f64,
    pub ood_loss_weight: f64,
    pub ortho_weight: f64,
    pub num_spurious: usize,
    pub context_len: usize,
    pub word_dim: usize,
    pub encoder: EncoderKind,
    pub synthesis: SynthesisConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            lr0: 0.002,
            momentum: 0.9,
            batch_size: 32,
            logit_scale: 100.0,
            ood_loss_weight: 1.0,
            ortho_weight: 0.0,
            num_spurious: 1,
            context_len: 16,
            word_dim: 512,
            encoder: EncoderKind::MeanPoolLinear,
            synthesis: SynthesisConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidSpec(msg.to_string()));
        if !(self.lr0 > 0.0) {
            return bad("lr0 must be positive");
        }
        if !(self.logit_scale > 0.0) {
            return bad("logit_scale must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must be in [0, 1)");
        }
        if self.batch_size == 0 || self.num_spurious == 0 || self.context_len == 0 || self.word_dim == 0 {
            return bad("batch_size, num_spurious, context_len and word_dim must be positive");
        }
        if self.ood_loss_weight < 0.0 || self.ortho_weight < 0.0 {
            return bad("loss weights must be non-negative");
        }
        self.synthesis.validate()
    }
}

/// Per-epoch means of the two loss terms and the last learning rate used.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss_id: f64,
    pub loss_ood: f64,
    pub lr: f64,
}

impl std::fmt::Display for EpochLog {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "epoch={} loss_id={:.6} loss_ood={:.6} lr={:.6e}", self.epoch, self.loss_id, self.loss_ood, self.lr)
    }
}

/// Fresh model for `num_categories` categories of `feat_dim`-dimensional
/// features, using the shared reference encoder.
pub fn initial_state(
    num_categories: usize,
    feat_dim: usize,
    config: &TrainConfig,
    class_embeddings: Option<Vec<Vec<f32>>>,
    rng: &mut Rng,
) -> Result<ModelState> {
    let encoder = EncoderParams::reference(config.encoder, config.word_dim, feat_dim)?;
    ModelState::initialize(encoder, num_categories, config.context_len, config.num_spurious, class_embeddings, rng)
}

/// Seed offset for the frozen projection applied to class embeddings whose
/// width differs from the word width.
const CLASS_PROJECTION_SALT: u64 = 0x636c_6173_735f_7072;

/// One class-token embedding per category from a CTXE set, rows labeled by
/// category. Rows of a different width are mapped through a fixed Gaussian
/// projection seeded from `seed`.
pub fn class_embeddings_from_set(set: &LabeledFeatureSet, word_dim: usize, seed: u64) -> Result<Vec<Vec<f32>>> {
    let c = set.num_categories() as usize;
    let mut out: Vec<Option<Vec<f32>>> = vec![None; c];
    for (row, &label) in set.rows().zip(set.labels()) {
        if label == crate::embedding::UNLABELED {
            return Err(Error::InvalidSpec("class embedding rows must be labeled".into()));
        }
        let slot = &mut out[label as usize];
        if slot.is_some() {
            return Err(Error::InvalidSpec(format!("duplicate class embedding for category {label}")));
        }
        *slot = Some(row.to_vec());
    }
    let rows: Vec<Vec<f32>> =
        out.into_iter().collect::<Option<_>>().ok_or(Error::EmptySet("class embedding for some category"))?;
    if set.dim() == word_dim {
        return Ok(rows);
    }
    let src = set.dim();
    let mut rng = crate::embedding::rng_from_seed(seed ^ CLASS_PROJECTION_SALT);
    let proj = crate::encoder::gaussian_vec(src * word_dim, 1.0 / (src as f64).sqrt(), &mut rng);
    Ok(rows
        .iter()
        .map(|e| {
            (0..word_dim)
                .map(|j| e.iter().enumerate().map(|(i, &v)| v as f64 * proj[i * word_dim + j] as f64).sum::<f64>() as f32)
                .collect()
        })
        .collect())
}

pub fn train_task(id_set: &LabeledFeatureSet, config: &TrainConfig, rng: &mut Rng) -> Result<ModelState> {
    train_task_with(id_set, config, None, rng, |_| {})
}

/// Full training run. Each iteration synthesizes spurious samples for every
/// category from the current contexts (treated as constants), then takes
/// one SGD step on the joint objective over a shuffled ID minibatch.
pub fn train_task_with(
    id_set: &LabeledFeatureSet,
    config: &TrainConfig,
    class_embeddings: Option<Vec<Vec<f32>>>,
    rng: &mut Rng,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<ModelState> {
    config.validate()?;
    if id_set.is_empty() {
        return Err(Error::EmptySet("ID training set"));
    }
    if id_set.labels().iter().any(|&l| l >= id_set.num_categories()) {
        return Err(Error::InvalidSpec("training features must all be labeled".into()));
    }
    let c = id_set.num_categories() as usize;
    let mut state = initial_state(c, id_set.dim(), config, class_embeddings, rng)?;
    if config.epochs == 0 {
        return Ok(state);
    }

    // ID features never change, so the kNN distances are computed once.
    let pools: Vec<Option<CategoryPool>> = (0..c)
        .map(|k| match CategoryPool::new(id_set, k, config.synthesis.k) {
            Ok(pool) => Ok(Some(pool)),
            Err(Error::TooFewPoints(_)) => Ok(None),
            Err(e) => Err(e),
        })
        .collect::<Result<_>>()?;

    let mut order: Vec<usize> = (0..id_set.len()).collect();
    let per_epoch = id_set.len().div_ceil(config.batch_size);
    let total_steps = per_epoch * config.epochs;
    let mut step = 0;
    for epoch in 0..config.epochs {
        order.shuffle(rng);
        let (mut sum_id, mut sum_ood, mut lr) = (0.0, 0.0, config.lr0);
        for chunk in order.chunks(config.batch_size) {
            let mut spurious = LabeledFeatureSet::empty(id_set.dim(), c as u32);
            for pool in pools.iter().flatten() {
                let synth = synthesize_from_pool(&state, pool, &config.synthesis, rng)?;
                for (row, &label) in synth.samples.rows().zip(synth.samples.labels()) {
                    spurious.push(row, label)?;
                }
            }
            let id_batch = Batch::select(id_set, chunk);
            let sp_batch = Batch::from_set(&spurious);
            let obj = objective(
                &id_batch,
                &sp_batch,
                &state,
                config.logit_scale,
                config.ood_loss_weight,
                config.ortho_weight,
            )?;
            lr = cosine_lr(step, total_steps, config.lr0);
            sgd_step(&mut state, &obj.grads, lr, config.momentum)?;
            sum_id += obj.loss_id;
            sum_ood += obj.loss_ood;
            step += 1;
        }
        on_epoch(&EpochLog {
            epoch: epoch + 1,
            loss_id: sum_id / per_epoch as f64,
            loss_ood: sum_ood / per_epoch as f64,
            lr,
        });
    }
    Ok(state)
}
