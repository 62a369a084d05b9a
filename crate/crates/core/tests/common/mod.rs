#![allow(dead_code)]

use catex::encoder::{ContextPair, EncoderParams};
use catex::embedding::standard_normal;
use catex::training::loss::{Batch, WordGrads};
use catex::{normalize, LabeledFeatureSet, ModelState, Rng};
use rand::Rng as _;

pub fn unit_vec(d: usize, rng: &mut Rng) -> Vec<f32> {
    loop {
        let raw: Vec<f32> = (0..d).map(|_| standard_normal(rng) as f32).collect();
        if let Ok(v) = normalize(&raw) {
            return v.into_inner();
        }
    }
}

pub fn normal_vec(n: usize, rng: &mut Rng) -> Vec<f32> {
    (0..n).map(|_| standard_normal(rng) as f32).collect()
}

/// Small random model with N(0,1) words and a random full-rank encoder.
pub fn random_state(c: usize, m: usize, dw: usize, d: usize, ns: usize, rng: &mut Rng) -> ModelState {
    let enc = EncoderParams::random(dw, d, rng).unwrap();
    let contexts = (0..c)
        .map(|k| ContextPair {
            category_id: k as u32,
            context_len: m,
            word_dim: dw,
            perceptual: normal_vec(m * dw, rng),
            spurious: (0..ns).map(|_| normal_vec(m * dw, rng)).collect(),
            class_embedding: normal_vec(dw, rng),
        })
        .collect();
    ModelState::new(enc, normal_vec(dw, rng), contexts).unwrap()
}

pub fn random_labeled(n: usize, d: usize, c: usize, rng: &mut Rng) -> LabeledFeatureSet {
    let mut set = LabeledFeatureSet::empty(d, c as u32);
    for _ in 0..n {
        let label = rng.random_range(0..c) as u32;
        set.push(&unit_vec(d, rng), label).unwrap();
    }
    set
}

pub const SMOOTH_MARGIN: f64 = 0.01;
pub const SMOOTH_CONDITIONING: f64 = 0.2;

pub struct Instance {
    pub state: ModelState,
    pub id_set: LabeledFeatureSet,
    pub spurious_set: LabeledFeatureSet,
    pub logit_scale: f64,
}

impl Instance {
    pub fn id_batch(&self) -> Batch<'_> {
        Batch::from_set(&self.id_set)
    }
    pub fn spurious_batch(&self) -> Batch<'_> {
        Batch::from_set(&self.spurious_set)
    }

    /// Smallest ratio, over every encoded context, of the projected pooled
    /// norm to the largest norm a unit word shift can produce. Normalization
    /// curvature grows as this ratio shrinks.
    pub fn conditioning(&self) -> f64 {
        let enc = self.state.encoder();
        let (dw, d) = (enc.word_dim(), enc.feat_dim());
        let gain = enc.weights().iter().map(|&w| (w as f64).powi(2)).sum::<f64>().sqrt();
        let scale = gain / (self.state.context_len() + 1) as f64;
        let mut worst = f64::INFINITY;
        for ctx in self.state.contexts() {
            for words in std::iter::once(&ctx.perceptual).chain(&ctx.spurious) {
                let mut pooled: Vec<f64> = ctx.class_embedding.iter().map(|&x| x as f64).collect();
                for w in words.chunks_exact(dw) {
                    pooled.iter_mut().zip(w).for_each(|(p, &x)| *p += x as f64);
                }
                let n = (0..d)
                    .map(|j| (0..dw).map(|i| pooled[i] * enc.weights()[i * d + j] as f64).sum::<f64>().powi(2))
                    .sum::<f64>()
                    .sqrt()
                    / (self.state.context_len() + 1) as f64;
                worst = worst.min(n / scale);
            }
        }
        worst
    }

    /// Smallest gap between the best and second-best spurious similarity
    /// over all samples and categories; the max-over-contexts score has a
    /// kink where this gap is zero.
    pub fn spurious_margin(&self) -> f64 {
        let mut margin = f64::INFINITY;
        for x in self.id_set.rows().chain(self.spurious_set.rows()) {
            for k in 0..self.state.num_categories() {
                let mut sims: Vec<f64> = self
                    .state
                    .spurious_features(k)
                    .iter()
                    .map(|f| f.iter().zip(x.iter()).map(|(&a, &b)| a * b as f64).sum())
                    .collect();
                sims.sort_by(|a, b| b.total_cmp(a));
                if sims.len() > 1 {
                    margin = margin.min(sims[0] - sims[1]);
                }
            }
        }
        margin
    }
}

/// C <= 5, m <= 4, d_w <= 16, N_s <= 3, logit scale in [1, 10].
pub fn random_instance(rng: &mut Rng) -> Instance {
    let c = rng.random_range(2..=5);
    let m = rng.random_range(1..=4);
    let dw = rng.random_range(2..=16);
    let d = rng.random_range(2..=dw);
    let ns = rng.random_range(1..=3);
    let state = random_state(c, m, dw, d, ns, rng);
    let id_set = random_labeled(rng.random_range(1..=6), d, c, rng);
    let spurious_set = random_labeled(rng.random_range(1..=6), d, c, rng);
    Instance { state, id_set, spurious_set, logit_scale: rng.random_range(1.0..10.0) }
}

/// Which context a word belongs to.
#[derive(Clone, Copy, Debug)]
pub enum Slot {
    Perceptual,
    Spurious(usize),
}

/// Central finite differences over every context word, laid out like
/// `WordGrads::flatten`. The step is applied in f32 storage, so the actual
/// step taken is measured and used as the denominator.
pub fn finite_difference(state: &ModelState, h: f64, loss: impl Fn(&ModelState) -> f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut probe = state.clone();
    for k in 0..state.num_categories() {
        let mut slots = vec![Slot::Perceptual];
        slots.extend((0..state.num_spurious()).map(Slot::Spurious));
        for slot in slots {
            let len = state.context_len() * state.word_dim();
            for idx in 0..len {
                let orig = word(state, k, slot, idx);
                let plus = (orig as f64 + h) as f32;
                let minus = (orig as f64 - h) as f32;
                set_word(&mut probe, k, slot, idx, plus);
                let lp = loss(&probe);
                set_word(&mut probe, k, slot, idx, minus);
                let lm = loss(&probe);
                set_word(&mut probe, k, slot, idx, orig);
                out.push((lp - lm) / (plus as f64 - minus as f64));
            }
        }
    }
    out
}

fn word(state: &ModelState, k: usize, slot: Slot, idx: usize) -> f32 {
    let ctx = &state.contexts()[k];
    match slot {
        Slot::Perceptual => ctx.perceptual[idx],
        Slot::Spurious(i) => ctx.spurious[i][idx],
    }
}

fn set_word(state: &mut ModelState, k: usize, slot: Slot, idx: usize, v: f32) {
    state
        .update_context(k, |ctx| match slot {
            Slot::Perceptual => ctx.perceptual[idx] = v,
            Slot::Spurious(i) => ctx.spurious[i][idx] = v,
        })
        .unwrap();
}

/// ||a - n|| / max(||a||, ||n||, 1e-8)
/// Norm-wise relative error. Gradients below 1e-6 in norm are compared
/// absolutely; a nearly saturated loss leaves only f64 roundoff in the
/// difference quotient there.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    floored_error(analytic, numeric, 1e-6)
}

/// Like `random_instance`, redrawn until a central difference with step
/// up to 1e-3 is itself accurate: every spurious max is separated by
/// `SMOOTH_MARGIN` and no encoded context is close to cancelling out.
pub fn smooth_instance(rng: &mut Rng) -> Instance {
    loop {
        let inst = random_instance(rng);
        if inst.spurious_margin() >= SMOOTH_MARGIN && inst.conditioning() >= SMOOTH_CONDITIONING {
            return inst;
        }
    }
}

/// Norm-wise error with an explicit floor on the reference magnitude.
pub fn floored_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    let diff = analytic.iter().zip(numeric).map(|(a, n)| (a - n) * (a - n)).sum::<f64>().sqrt();
    let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    diff / na.max(floor)
}

pub fn flat(g: &WordGrads) -> Vec<f64> {
    g.flatten()
}

/// Strictly increasing maps used for invariance checks on scores.
pub fn monotone_map(kind: usize, a: f64, b: f64) -> impl Fn(f64) -> f64 {
    move |x: f64| match kind % 4 {
        0 => a * x + b,
        1 => (x / 8.0).exp() * a,
        2 => x * x * x + a * x,
        _ => {
            // piecewise linear with a kink at b
            if x < b { a * x } else { a * b + (a + 1.0) * (x - b) }
        }
    }
}

/// Identity-encoder model with one-word contexts and zero class
/// embeddings, so each text feature is the normalized word itself.
pub fn fixed_state(perceptual: &[Vec<f32>], spurious: &[Vec<Vec<f32>>]) -> ModelState {
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
            spurious: s.clone(),
            class_embedding: vec![0.0; d],
        })
        .collect();
    ModelState::new(EncoderParams::identity(d).unwrap(), vec![0.0; d], contexts).unwrap()
}
