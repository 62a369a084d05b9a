//! CCTX checkpoints.
//!
//! Layout (little-endian): magic `CCTX`; version u32 = 1; word_dim, feat_dim,
//! context_len, num_spurious, num_categories as u32; encoder kind u8;
//! word_dim x feat_dim f32 weights; word_dim f32 mask embedding; then per
//! category: class embedding, perceptual context, each spurious context
//! (all f32). Optimizer buffers and cached features are not stored.

use std::path::Path;

use super::{magic_string, put_f32s, read_bytes, write_bytes, Reader};
use crate::encoder::{ContextPair, EncoderKind, EncoderParams};
use crate::error::{Error, Result};
use crate::training::state::ModelState;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"CCTX";
pub const CHECKPOINT_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 5 * 4 + 1;

pub fn encode_checkpoint(state: &ModelState) -> Vec<u8> {
    let enc = state.encoder();
    let mut out = Vec::new();
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for v in [state.word_dim(), state.feat_dim(), state.context_len(), state.num_spurious(), state.num_categories()] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.push(enc.kind().tag());
    put_f32s(&mut out, enc.weights());
    put_f32s(&mut out, state.mask_embedding());
    for ctx in state.contexts() {
        put_f32s(&mut out, &ctx.class_embedding);
        put_f32s(&mut out, &ctx.perceptual);
        for s in &ctx.spurious {
            put_f32s(&mut out, s);
        }
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<ModelState> {
    let mut r = Reader::new(bytes);
    let found = r.magic()?;
    if found != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic { expected: magic_string(&CHECKPOINT_MAGIC), found: magic_string(&found) });
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::VersionUnsupported(version));
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::ShapeMismatch(format!("checkpoint header needs {HEADER_LEN} bytes, found {}", bytes.len())));
    }
    let word_dim = r.u32()? as usize;
    let feat_dim = r.u32()? as usize;
    let context_len = r.u32()? as usize;
    let num_spurious = r.u32()? as usize;
    let num_categories = r.u32()? as usize;
    let kind = EncoderKind::from_tag(r.u8()?)?;

    let per_category = (word_dim as u128) * (1 + context_len as u128 * (1 + num_spurious as u128));
    let expected = HEADER_LEN as u128
        + 4 * (word_dim as u128 * feat_dim as u128 + word_dim as u128 + num_categories as u128 * per_category);
    if expected != bytes.len() as u128 {
        return Err(Error::ShapeMismatch(format!(
            "checkpoint for d_w={word_dim} d={feat_dim} m={context_len} N_s={num_spurious} C={num_categories} \
             needs {expected} bytes, found {}",
            bytes.len()
        )));
    }
    if num_categories > 0 && (context_len == 0 || num_spurious == 0) {
        return Err(Error::ShapeMismatch("context_len and num_spurious must be positive".into()));
    }

    let encoder = EncoderParams::new(kind, word_dim, feat_dim, r.f32s(word_dim * feat_dim)?)?;
    let mask = r.f32s(word_dim)?;
    let mut contexts = Vec::with_capacity(num_categories);
    for k in 0..num_categories {
        let class_embedding = r.f32s(word_dim)?;
        let perceptual = r.f32s(context_len * word_dim)?;
        let spurious = (0..num_spurious).map(|_| r.f32s(context_len * word_dim)).collect::<Result<Vec<_>>>()?;
        contexts.push(ContextPair { category_id: k as u32, context_len, word_dim, perceptual, spurious, class_embedding });
    }
    ModelState::new(encoder, mask, contexts)
}

pub fn write_checkpoint(state: &ModelState, path: impl AsRef<Path>) -> Result<()> {
    write_bytes(path.as_ref(), &encode_checkpoint(state))
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<ModelState> {
    decode_checkpoint(&read_bytes(path.as_ref())?)
}
