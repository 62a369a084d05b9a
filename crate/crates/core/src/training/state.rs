use crate::embedding::Rng;
use crate::encoder::{gaussian_vec, ContextPair, EncoderParams, EMBEDDING_INIT_STD};
use crate::error::{Error, Result};

/// Momentum buffers for one category's learnable words.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ContextVelocity {
    pub perceptual: Vec<f32>,
    pub spurious: Vec<Vec<f32>>,
}

impl ContextVelocity {
    fn zeros_like(ctx: &ContextPair) -> Self {
        ContextVelocity {
            perceptual: vec![0.0; ctx.perceptual.len()],
            spurious: ctx.spurious.iter().map(|s| vec![0.0; s.len()]).collect(),
        }
    }
}

/// Frozen encoder, per-category contexts, cached text features and
/// optimizer buffers.
///
/// Cached features are kept in `f64` so loss evaluation and finite
/// differences see the encoder output without an extra rounding step.
/// They are recomputed whenever a context changes.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    encoder: EncoderParams,
    mask_embedding: Vec<f32>,
    contexts: Vec<ContextPair>,
    perceptual_features: Vec<Vec<f64>>,
    spurious_features: Vec<Vec<Vec<f64>>>,
    velocity: Vec<ContextVelocity>,
}

impl ModelState {
    pub fn new(encoder: EncoderParams, mask_embedding: Vec<f32>, contexts: Vec<ContextPair>) -> Result<Self> {
        let dw = encoder.word_dim();
        if mask_embedding.len() != dw {
            return Err(Error::ShapeMismatch(format!(
                "mask embedding has {} values, word_dim is {dw}",
                mask_embedding.len()
            )));
        }
        if let Some(first) = contexts.first() {
            for ctx in &contexts {
                let shape_ok = ctx.word_dim == dw
                    && ctx.context_len == first.context_len
                    && ctx.context_len >= 1
                    && ctx.num_spurious() == first.num_spurious()
                    && ctx.num_spurious() >= 1
                    && ctx.perceptual.len() == ctx.context_len * dw
                    && ctx.spurious.iter().all(|s| s.len() == ctx.context_len * dw)
                    && ctx.class_embedding.len() == dw;
                if !shape_ok {
                    return Err(Error::ShapeMismatch(format!(
                        "context for category {} does not match the model shape",
                        ctx.category_id
                    )));
                }
            }
        }
        let mut state = ModelState {
            velocity: contexts.iter().map(ContextVelocity::zeros_like).collect(),
            perceptual_features: Vec::with_capacity(contexts.len()),
            spurious_features: Vec::with_capacity(contexts.len()),
            encoder,
            mask_embedding,
            contexts,
        };
        for k in 0..state.contexts.len() {
            let (p, s) = state.encode_category(k)?;
            state.perceptual_features.push(p);
            state.spurious_features.push(s);
        }
        Ok(state)
    }

    /// Fresh model: mask embedding, class embeddings (unless given) and
    /// all context words drawn from N(0, 0.02^2), in that order.
    pub fn initialize(
        encoder: EncoderParams,
        num_categories: usize,
        context_len: usize,
        num_spurious: usize,
        class_embeddings: Option<Vec<Vec<f32>>>,
        rng: &mut Rng,
    ) -> Result<Self> {
        let dw = encoder.word_dim();
        if let Some(cls) = &class_embeddings {
            if cls.len() != num_categories {
                return Err(Error::LengthMismatch { left: cls.len(), right: num_categories });
            }
        }
        let mask = gaussian_vec(dw, EMBEDDING_INIT_STD, rng);
        let mut given = class_embeddings.map(|v| v.into_iter());
        let mut contexts = Vec::with_capacity(num_categories);
        for k in 0..num_categories {
            let cls = match given.as_mut() {
                Some(it) => it.next().expect("length checked"),
                None => gaussian_vec(dw, EMBEDDING_INIT_STD, rng),
            };
            contexts.push(ContextPair::init(k as u32, context_len, dw, num_spurious, cls, rng)?);
        }
        Self::new(encoder, mask, contexts)
    }

    fn encode_category(&self, k: usize) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        let ctx = &self.contexts[k];
        let p = self.encoder.encode_f64(&ctx.perceptual, &ctx.class_embedding)?;
        let s = ctx
            .spurious
            .iter()
            .map(|words| self.encoder.encode_f64(words, &ctx.class_embedding))
            .collect::<Result<Vec<_>>>()?;
        Ok((p, s))
    }

    pub(crate) fn refresh(&mut self, k: usize) -> Result<()> {
        let (p, s) = self.encode_category(k)?;
        self.perceptual_features[k] = p;
        self.spurious_features[k] = s;
        Ok(())
    }

    /// Mutates one category's context and re-encodes it.
    pub fn update_context(&mut self, k: usize, f: impl FnOnce(&mut ContextPair)) -> Result<()> {
        f(&mut self.contexts[k]);
        self.refresh(k)
    }

    pub fn encoder(&self) -> &EncoderParams {
        &self.encoder
    }

    pub fn mask_embedding(&self) -> &[f32] {
        &self.mask_embedding
    }

    pub fn contexts(&self) -> &[ContextPair] {
        &self.contexts
    }

    pub fn velocity(&self) -> &[ContextVelocity] {
        &self.velocity
    }

    pub(crate) fn velocity_mut(&mut self) -> &mut [ContextVelocity] {
        &mut self.velocity
    }

    pub(crate) fn contexts_mut(&mut self) -> &mut [ContextPair] {
        &mut self.contexts
    }

    pub fn num_categories(&self) -> usize {
        self.contexts.len()
    }

    pub fn feat_dim(&self) -> usize {
        self.encoder.feat_dim()
    }

    pub fn word_dim(&self) -> usize {
        self.encoder.word_dim()
    }

    pub fn context_len(&self) -> usize {
        self.contexts.first().map_or(0, |c| c.context_len)
    }

    pub fn num_spurious(&self) -> usize {
        self.contexts.first().map_or(0, |c| c.num_spurious())
    }

    /// Cached perceptual text feature w^p_k.
    pub fn perceptual_feature(&self, k: usize) -> &[f64] {
        &self.perceptual_features[k]
    }

    /// Cached spurious text features w^s_{k,i}, one per spurious context.
    pub fn spurious_features(&self, k: usize) -> &[Vec<f64>] {
        &self.spurious_features[k]
    }

    /// True when every cached feature equals a fresh encoding bit-for-bit.
    pub fn caches_coherent(&self) -> bool {
        (0..self.contexts.len()).all(|k| match self.encode_category(k) {
            Ok((p, s)) => p == self.perceptual_features[k] && s == self.spurious_features[k],
            Err(_) => false,
        })
    }

    /// Builds a state from parts whose caches were already computed by
    /// the same encoder, skipping re-encoding.
    pub(crate) fn from_cached_parts(
        encoder: EncoderParams,
        mask_embedding: Vec<f32>,
        contexts: Vec<ContextPair>,
        perceptual_features: Vec<Vec<f64>>,
        spurious_features: Vec<Vec<Vec<f64>>>,
        velocity: Vec<ContextVelocity>,
    ) -> Self {
        ModelState { encoder, mask_embedding, contexts, perceptual_features, spurious_features, velocity }
    }

    pub(crate) fn cached_parts(&self) -> (&[Vec<f64>], &[Vec<Vec<f64>>]) {
        (&self.perceptual_features, &self.spurious_features)
    }
}
