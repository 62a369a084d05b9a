use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::training::loss::WordGrads;
use crate::training::state::ModelState;

/// Cosine-annealed learning rate: `lr0` at step 0, zero at `total`.
pub fn cosine_lr(step: usize, total: usize, lr0: f64) -> f64 {
    if total == 0 {
        return lr0;
    }
    let t = step.min(total) as f64 / total as f64;
    0.5 * lr0 * (1.0 + (PI * t).cos())
}

fn step_slice(words: &mut [f32], velocity: &mut [f32], grad: &[f64], lr: f64, momentum: f64) {
    for ((w, v), &g) in words.iter_mut().zip(velocity.iter_mut()).zip(grad) {
        let nv = momentum * *v as f64 + g;
        *v = nv as f32;
        *w = (*w as f64 - lr * nv) as f32;
    }
}

/// SGD with heavy-ball momentum: `v <- momentum * v + g; w <- w - lr * v`.
/// Cached text features are re-encoded for every category.
pub fn sgd_step(state: &mut ModelState, grads: &WordGrads, lr: f64, momentum: f64) -> Result<()> {
    let c = state.num_categories();
    let n = state.context_len() * state.word_dim();
    let ns = state.num_spurious();
    let shape_ok = grads.perceptual.len() == c
        && grads.spurious.len() == c
        && grads.perceptual.iter().all(|g| g.len() == n)
        && grads.spurious.iter().all(|s| s.len() == ns && s.iter().all(|g| g.len() == n));
    if !shape_ok {
        return Err(Error::ShapeMismatch("gradient shape does not match the learnable contexts".into()));
    }
    for k in 0..c {
        let mut velocity = std::mem::take(&mut state.velocity_mut()[k]);
        {
            let ctx = &mut state.contexts_mut()[k];
            step_slice(&mut ctx.perceptual, &mut velocity.perceptual, &grads.perceptual[k], lr, momentum);
            for i in 0..ns {
                step_slice(&mut ctx.spurious[i], &mut velocity.spurious[i], &grads.spurious[k][i], lr, momentum);
            }
        }
        state.velocity_mut()[k] = velocity;
        state.refresh(k)?;
    }
    Ok(())
}
