//! Command-line front end. `run` returns the process exit code: 0 on
//! success, 2 on usage errors, 1 on data errors.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::embedding::{rng_from_seed, LabeledFeatureSet, UNLABELED};
use crate::error::{Error, Result};
use crate::extension::{incremental_eval, merge_models};
use crate::inference::{argmax, zero_shot_regularize, ScoringConfig, DEFAULT_LOGIT_SCALE};
use crate::io::report::{curve_csv, write_report};
use crate::io::{read_checkpoint, read_config, read_embeddings, read_features, write_checkpoint, write_features};
use crate::metrics::{evaluate, EvalConfig, DEFAULT_TPR};
use crate::synthetic::{gen_synthetic, SyntheticSpec};
use crate::training::{class_embeddings_from_set, train_task_with, TrainConfig};

#[derive(Debug, Parser)]
#[command(name = "catex", version, about = "Perceptual/spurious context learning for OOD detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic ID/OOD benchmark on the unit sphere.
    GenSynthetic(GenArgs),
    /// Train contexts on an ID feature file.
    Train(TrainArgs),
    /// Score ID and OOD feature files with a trained model.
    Eval(EvalArgs),
    /// Concatenate models trained on disjoint category sets.
    Merge(MergeArgs),
    /// Accuracy/FPR95/AUROC as models are merged one at a time.
    Curve(CurveArgs),
    /// Zero-shot scoring with perturbed-description regularization.
    ZeroShot(ZeroShotArgs),
}

#[derive(Debug, Args)]
struct GenArgs {
    #[arg(long)]
    categories: usize,
    #[arg(long = "ood-clusters")]
    ood_clusters: usize,
    #[arg(long)]
    dim: usize,
    #[arg(long = "per-class")]
    per_class: usize,
    /// Angle in radians between each OOD cluster and its paired ID cluster.
    #[arg(long)]
    offset: f64,
    #[arg(long, default_value_t = 100.0)]
    concentration: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long = "out-id")]
    out_id: PathBuf,
    #[arg(long = "out-ood")]
    out_ood: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    log: Option<PathBuf>,
    /// CTXE file with one class-token embedding per category.
    #[arg(long = "class-emb")]
    class_emb: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    id: PathBuf,
    #[arg(long, value_delimiter = ',', required = true)]
    ood: Vec<PathBuf>,
    #[arg(long = "perceptual-only")]
    perceptual_only: bool,
    #[arg(long, default_value_t = DEFAULT_TPR)]
    tpr: f64,
    #[arg(long = "logit-scale", default_value_t = DEFAULT_LOGIT_SCALE)]
    logit_scale: f64,
    /// Scale inside the perceptual/spurious sigmoid; defaults to the logit scale.
    #[arg(long = "gamma-scale")]
    gamma_scale: Option<f64>,
    #[arg(long)]
    report: PathBuf,
}

#[derive(Debug, Args)]
struct MergeArgs {
    #[arg(long, value_delimiter = ',', required = true)]
    models: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct CurveArgs {
    #[arg(long, value_delimiter = ',', required = true)]
    models: Vec<PathBuf>,
    #[arg(long = "id-sets", value_delimiter = ',', required = true)]
    id_sets: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',', required = true)]
    ood: Vec<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_TPR)]
    tpr: f64,
    #[arg(long = "logit-scale", default_value_t = DEFAULT_LOGIT_SCALE)]
    logit_scale: f64,
    #[arg(long = "gamma-scale")]
    gamma_scale: Option<f64>,
    #[arg(long)]
    report: PathBuf,
}

#[derive(Debug, Args)]
struct ZeroShotArgs {
    /// CTXF with one description feature per category, labeled by category.
    #[arg(long)]
    descriptions: PathBuf,
    /// CTXF with K perturbed description features per category.
    #[arg(long)]
    perturbed: PathBuf,
    #[arg(long)]
    features: PathBuf,
    #[arg(long = "logit-scale", default_value_t = DEFAULT_LOGIT_SCALE)]
    logit_scale: f64,
    #[arg(long)]
    report: PathBuf,
}

pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let result = match cli.command {
        Command::GenSynthetic(a) => gen(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Merge(a) => merge(a),
        Command::Curve(a) => curve(a),
        Command::ZeroShot(a) => zero_shot(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn load_features(path: &Path) -> Result<LabeledFeatureSet> {
    let file = read_features(path)?;
    if !file.within_export_tolerance() {
        eprintln!(
            "warning: {}: row norms deviate from 1 by up to {:.3e}; rows were re-normalized",
            path.display(),
            file.max_norm_deviation
        );
    }
    Ok(file.set)
}

fn set_name(path: &Path) -> String {
    path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned())
}

fn gen(a: GenArgs) -> Result<()> {
    let spec = SyntheticSpec {
        num_id_categories: a.categories,
        num_ood_clusters: a.ood_clusters,
        dim: a.dim,
        samples_per_cluster: a.per_class,
        concentration: a.concentration,
        spurious_offset: a.offset,
    };
    let bench = gen_synthetic(&spec, &mut rng_from_seed(a.seed))?;
    write_features(&bench.id_set, &a.out_id)?;
    write_features(&bench.ood_set, &a.out_ood)
}

fn train(a: TrainArgs) -> Result<()> {
    let config = match &a.config {
        Some(p) => read_config(p)?,
        None => TrainConfig::default(),
    };
    let id_set = load_features(&a.features)?;
    let class_embeddings = match &a.class_emb {
        Some(p) => Some(class_embeddings_from_set(&read_embeddings(p)?.set, config.word_dim, config.seed)?),
        None => None,
    };
    let mut log_file = match &a.log {
        Some(p) => Some(std::fs::File::create(p).map_err(|e| Error::io(p, e))?),
        None => None,
    };
    let mut log_err = None;
    let mut rng = rng_from_seed(config.seed);
    let state = train_task_with(&id_set, &config, class_embeddings, &mut rng, |entry| {
        println!("{entry}");
        if let (Some(f), Some(p)) = (log_file.as_mut(), a.log.as_ref()) {
            if let Err(e) = writeln!(f, "{entry}") {
                log_err.get_or_insert(Error::io(p, e));
            }
        }
    })?;
    if let Some(e) = log_err {
        return Err(e);
    }
    write_checkpoint(&state, &a.out)
}

fn eval(a: EvalArgs) -> Result<()> {
    let state = read_checkpoint(&a.model)?;
    let id_set = load_features(&a.id)?;
    let ood: Vec<(String, LabeledFeatureSet)> =
        a.ood.iter().map(|p| Ok((set_name(p), load_features(p)?))).collect::<Result<_>>()?;
    let named: Vec<(&str, &LabeledFeatureSet)> = ood.iter().map(|(n, s)| (n.as_str(), s)).collect();
    let cfg = EvalConfig {
        scoring: ScoringConfig {
            logit_scale: a.logit_scale,
            gamma_scale: a.gamma_scale,
            perceptual_only: a.perceptual_only,
        },
        tpr: a.tpr,
    };
    let report = evaluate(&state, &id_set, &named, &cfg)?;
    write_report(&report, &a.report)
}

fn merge(a: MergeArgs) -> Result<()> {
    let models = a.models.iter().map(read_checkpoint).collect::<Result<Vec<_>>>()?;
    let refs: Vec<_> = models.iter().collect();
    write_checkpoint(&merge_models(&refs)?, &a.out)
}

fn curve(a: CurveArgs) -> Result<()> {
    let models = a.models.iter().map(read_checkpoint).collect::<Result<Vec<_>>>()?;
    let id_sets = a.id_sets.iter().map(|p| load_features(p)).collect::<Result<Vec<_>>>()?;
    let ood: Vec<(String, LabeledFeatureSet)> =
        a.ood.iter().map(|p| Ok((set_name(p), load_features(p)?))).collect::<Result<_>>()?;
    let named: Vec<(&str, &LabeledFeatureSet)> = ood.iter().map(|(n, s)| (n.as_str(), s)).collect();
    let cfg = EvalConfig {
        scoring: ScoringConfig { logit_scale: a.logit_scale, gamma_scale: a.gamma_scale, perceptual_only: false },
        tpr: a.tpr,
    };
    let points = incremental_eval(&models.iter().collect::<Vec<_>>(), &id_sets.iter().collect::<Vec<_>>(), &named, &cfg)?;
    crate::io::write_bytes(&a.report, curve_csv(&points).as_bytes())
}

/// Groups rows by label: one inner vector per category, in file order.
fn rows_by_category(set: &LabeledFeatureSet, what: &'static str) -> Result<Vec<Vec<Vec<f32>>>> {
    let mut grouped = vec![Vec::new(); set.num_categories() as usize];
    for (row, &label) in set.rows().zip(set.labels()) {
        if label == UNLABELED {
            return Err(Error::InvalidSpec(format!("{what} rows must be labeled with their category")));
        }
        grouped[label as usize].push(row.to_vec());
    }
    if grouped.iter().any(|g| g.is_empty()) {
        return Err(Error::EmptySet(what));
    }
    Ok(grouped)
}

fn zero_shot(a: ZeroShotArgs) -> Result<()> {
    let desc = rows_by_category(&load_features(&a.descriptions)?, "description rows")?;
    if desc.iter().any(|g| g.len() != 1) {
        return Err(Error::InvalidSpec("expected exactly one description per category".into()));
    }
    let desc: Vec<Vec<f32>> = desc.into_iter().map(|mut g| g.remove(0)).collect();
    let perturbed = rows_by_category(&load_features(&a.perturbed)?, "perturbed description rows")?;
    if perturbed.len() != desc.len() {
        return Err(Error::LengthMismatch { left: desc.len(), right: perturbed.len() });
    }
    let samples = load_features(&a.features)?;

    let mut csv = String::from("index,label,predicted,predicted_plain,score\n");
    let (mut hits, mut hits_plain, mut labeled) = (0usize, 0usize, 0usize);
    for (i, x) in samples.rows().enumerate() {
        let r = zero_shot_regularize(&desc, &perturbed, x, a.logit_scale)?;
        let plain: Vec<f64> = desc.iter().map(|d| crate::embedding::dot(d, x)).collect();
        let (pred, pred_plain) = (argmax(&r), argmax(&plain));
        let label = samples.label(i);
        let label_str = if label == UNLABELED { String::new() } else { label.to_string() };
        if label != UNLABELED {
            labeled += 1;
            hits += usize::from(pred as u32 == label);
            hits_plain += usize::from(pred_plain as u32 == label);
        }
        let _ = writeln!(csv, "{i},{label_str},{pred},{pred_plain},{}", r[pred]);
    }
    crate::io::write_bytes(&a.report, csv.as_bytes())?;
    if labeled > 0 {
        println!(
            "accuracy={} accuracy_plain={}",
            hits as f64 / labeled as f64,
            hits_plain as f64 / labeled as f64
        );
    }
    Ok(())
}
