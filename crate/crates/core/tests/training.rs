mod common;

use catex::embedding::rng_from_seed;
use catex::io::features::{decode_features, encode_features, FEATURE_MAGIC};
use catex::io::encode_checkpoint;
use catex::synthesis::synthesize_spurious;
use catex::training::loss::{loss_id, loss_ood, objective, Batch};
use catex::training::optim::sgd_step;
use catex::training::{initial_state, train_task_with};
use catex::{classify, train_task, LabeledFeatureSet, ScoringConfig, TrainConfig};

/// Homogeneous perceptron; `Some(w)` once every sample satisfies
/// `label_sign * <w, x> > 0`.
fn perceptron(set: &LabeledFeatureSet, max_epochs: usize) -> Option<Vec<f64>> {
    let mut w = vec![0.0f64; set.dim()];
    for _ in 0..max_epochs {
        let mut mistakes = 0;
        for (x, &l) in set.rows().zip(set.labels()) {
            let y = if l == 0 { 1.0 } else { -1.0 };
            let m: f64 = w.iter().zip(x).map(|(a, &b)| a * b as f64).sum();
            if y * m <= 0.0 {
                mistakes += 1;
                w.iter_mut().zip(x).for_each(|(a, &b)| *a += y * b as f64);
            }
        }
        if mistakes == 0 {
            return Some(w);
        }
    }
    None
}

fn two_clusters(seed: u64) -> LabeledFeatureSet {
    let mut rng = rng_from_seed(seed);
    let d = 8;
    let mut set = LabeledFeatureSet::empty(d, 2);
    for i in 0..60 {
        let label = (i % 2) as u32;
        let mut v = common::normal_vec(d, &mut rng).iter().map(|x| 0.15 * x).collect::<Vec<f32>>();
        v[0] += if label == 0 { 1.0 } else { -1.0 };
        set.push(&catex::normalize(&v).unwrap().into_inner(), label).unwrap();
    }
    set
}

fn small_config(seed: u64) -> TrainConfig {
    let mut cfg = TrainConfig { epochs: 50, word_dim: 16, context_len: 4, batch_size: 16, seed, ..Default::default() };
    cfg.synthesis.k = 5;
    cfg.synthesis.boundary_fraction = 0.1;
    cfg
}

#[test]
fn separable_set_is_fit_exactly() {
    let set = two_clusters(21);
    assert!(perceptron(&set, 1000).is_some(), "oracle: set must be linearly separable");
    let cfg = small_config(3);
    let state = train_task(&set, &cfg, &mut rng_from_seed(cfg.seed)).unwrap();
    let sc = ScoringConfig::default();
    for (x, &l) in set.rows().zip(set.labels()) {
        assert_eq!(classify(x, &state, &sc).unwrap() as u32, l);
        assert_eq!(classify(x, &state, &sc.perceptual_only()).unwrap() as u32, l);
    }
}

#[test]
fn encoder_and_class_embeddings_stay_frozen() {
    let set = two_clusters(5);
    let cfg = TrainConfig { epochs: 3, ..small_config(9) };
    let init = initial_state(2, set.dim(), &cfg, None, &mut rng_from_seed(cfg.seed)).unwrap();
    let trained = train_task(&set, &cfg, &mut rng_from_seed(cfg.seed)).unwrap();
    assert_eq!(init.encoder(), trained.encoder());
    assert_eq!(init.mask_embedding(), trained.mask_embedding());
    for (a, b) in init.contexts().iter().zip(trained.contexts()) {
        assert_eq!(a.class_embedding, b.class_embedding);
        assert_ne!(a.perceptual, b.perceptual);
    }
    assert!(trained.caches_coherent());
}

#[test]
fn progress_is_reported_once_per_epoch() {
    let set = two_clusters(6);
    let cfg = TrainConfig { epochs: 4, ..small_config(1) };
    let mut logs = Vec::new();
    train_task_with(&set, &cfg, None, &mut rng_from_seed(1), |e| logs.push(*e)).unwrap();
    assert_eq!(logs.iter().map(|e| e.epoch).collect::<Vec<_>>(), vec![1, 2, 3, 4]);
    assert!(logs.iter().all(|e| e.loss_id >= 0.0 && e.loss_ood >= 0.0));
    assert!(logs[3].lr < logs[0].lr);
}

#[test]
fn syntheses_enter_the_objective_as_constants() {
    let set = two_clusters(7);
    let mut cfg = small_config(2);
    cfg.synthesis.rounds = 8;
    let state = initial_state(2, set.dim(), &cfg, None, &mut rng_from_seed(2)).unwrap();
    let live = synthesize_spurious(&state, 0, &set, &cfg.synthesis, &mut rng_from_seed(11)).unwrap().samples;
    assert!(!live.is_empty());
    let frozen = decode_features(&encode_features(&live, FEATURE_MAGIC), FEATURE_MAGIC).unwrap().set;
    let id = Batch::from_set(&set);
    let a = objective(&id, &Batch::from_set(&live), &state, 100.0, 1.0, 0.1).unwrap();
    let b = objective(&id, &Batch::from_set(&frozen), &state, 100.0, 1.0, 0.1).unwrap();
    assert_eq!(a, b);
}

#[test]
fn caches_stay_coherent_through_steps() {
    let mut rng = rng_from_seed(17);
    let mut state = common::random_state(3, 2, 6, 4, 2, &mut rng);
    let id = common::random_labeled(10, 4, 3, &mut rng);
    let sp = common::random_labeled(10, 4, 3, &mut rng);
    for _ in 0..5 {
        let obj = objective(&Batch::from_set(&id), &Batch::from_set(&sp), &state, 20.0, 1.0, 0.5).unwrap();
        sgd_step(&mut state, &obj.grads, 0.01, 0.9).unwrap();
        assert!(state.caches_coherent());
    }
}

#[test]
fn losses_are_non_negative() {
    let mut rng = rng_from_seed(31);
    for _ in 0..50 {
        let inst = common::random_instance(&mut rng);
        assert!(loss_id(&inst.id_batch(), &inst.state, inst.logit_scale).unwrap().value >= 0.0);
        assert!(loss_ood(&inst.id_batch(), &inst.spurious_batch(), &inst.state, inst.logit_scale).unwrap().value >= 0.0);
    }
}

#[test]
fn same_seed_same_checkpoint() {
    let set = two_clusters(8);
    let cfg = TrainConfig { epochs: 5, ..small_config(4) };
    let a = train_task(&set, &cfg, &mut rng_from_seed(4)).unwrap();
    let b = train_task(&set, &cfg, &mut rng_from_seed(4)).unwrap();
    assert_eq!(encode_checkpoint(&a), encode_checkpoint(&b));
    let c = train_task(&set, &cfg, &mut rng_from_seed(5)).unwrap();
    assert_ne!(encode_checkpoint(&a), encode_checkpoint(&c));
}
