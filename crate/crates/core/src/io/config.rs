//! `key = value` training configuration files.
//!
//! Blank lines and `#` comments are ignored; unknown keys are an error;
//! every key is optional and falls back to [`TrainConfig::default`].
//!
//! | key | default |
//! |-----|---------|
//! | `epochs` | 50 |
//! | `lr0` | 0.002 |
//! | `momentum` | 0.9 |
//! | `batch_size` | 32 |
//! | `logit_scale` | 100 |
//! | `ood_loss_weight` | 1.0 |
//! | `ortho_weight` | 0 |
//! | `num_spurious` | 1 |
//! | `context_len` | 16 |
//! | `word_dim` | 512 |
//! | `encoder` | `mean_pool_linear` (or `identity`) |
//! | `synth.k` | 20 |
//! | `synth.boundary_fraction` | 0.05 |
//! | `synth.sigma` | 0.1 |
//! | `synth.candidates` | 10 |
//! | `synth.max_accepted` | 64 |
//! | `synth.rounds` | 1 |
//! | `synth.perturbation` | `mixed` (or `mask`, `noise`, `swap`) |
//! | `synth.noise_sigma` | 0.02 |
//! | `seed` | 0 |

use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::training::TrainConfig;

fn parse<T: FromStr>(line: usize, key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e: T::Err| Error::Config { line, msg: format!("bad value `{value}` for `{key}`: {e}") })
}

pub fn parse_config(text: &str) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::default();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| Error::Config { line, msg: format!("expected `key = value`, got `{content}`") })?;
        let (key, value) = (key.trim(), value.trim());
        match key {
            "epochs" => cfg.epochs = parse(line, key, value)?,
            "lr0" => cfg.lr0 = parse(line, key, value)?,
            "momentum" => cfg.momentum = parse(line, key, value)?,
            "batch_size" => cfg.batch_size = parse(line, key, value)?,
            "logit_scale" => cfg.logit_scale = parse(line, key, value)?,
            "ood_loss_weight" => cfg.ood_loss_weight = parse(line, key, value)?,
            "ortho_weight" => cfg.ortho_weight = parse(line, key, value)?,
            "num_spurious" => cfg.num_spurious = parse(line, key, value)?,
            "context_len" => cfg.context_len = parse(line, key, value)?,
            "word_dim" => cfg.word_dim = parse(line, key, value)?,
            "encoder" => cfg.encoder = parse(line, key, value)?,
            "synth.k" => cfg.synthesis.k = parse(line, key, value)?,
            "synth.boundary_fraction" => cfg.synthesis.boundary_fraction = parse(line, key, value)?,
            "synth.sigma" => cfg.synthesis.sample_sigma = parse(line, key, value)?,
            "synth.candidates" => cfg.synthesis.candidates_per_boundary = parse(line, key, value)?,
            "synth.max_accepted" => cfg.synthesis.max_accepted_per_category = parse(line, key, value)?,
            "synth.rounds" => cfg.synthesis.rounds = parse(line, key, value)?,
            "synth.perturbation" => cfg.synthesis.perturbation = parse(line, key, value)?,
            "synth.noise_sigma" => cfg.synthesis.noise_sigma = parse(line, key, value)?,
            "seed" => cfg.seed = parse(line, key, value)?,
            other => return Err(Error::Config { line, msg: format!("unknown key `{other}`") }),
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn read_config(path: impl AsRef<Path>) -> Result<TrainConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text)
}
