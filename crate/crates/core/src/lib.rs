//! Hierarchical perceptual/spurious context learning for OOD detection on
//! precomputed embeddings.
//!
//! Every ID category gets two learnable contexts run through a frozen text
//! encoder: a perceptual one that describes the category and a spurious one
//! that describes near-miss samples around it. Spurious training samples
//! are synthesized in feature space and filtered by perturbing the
//! perceptual context. At inference the spurious similarity damps the
//! perceptual one before classification and OOD scoring.

pub mod embedding;
pub mod encoder;
pub mod error;
pub mod extension;
pub mod inference;
pub mod io;
pub mod metrics;
pub mod synthesis;
pub mod synthetic;
pub mod training;

pub mod cli;

pub use embedding::{cosine, normalize, rng_from_seed, FeatureVector, LabeledFeatureSet, Rng, UNLABELED};
pub use encoder::{ContextPair, EncoderKind, EncoderParams, Perturbation, PerturbationKind};
pub use error::{Error, Result};
pub use inference::{classify, ood_score, score, ScoreReport, ScoringConfig};
pub use metrics::{auroc, evaluate, fpr_at_tpr, EvalReport, MetricsReport};
pub use synthesis::SynthesisConfig;
pub use training::state::ModelState;
pub use training::{train_task, TrainConfig};
