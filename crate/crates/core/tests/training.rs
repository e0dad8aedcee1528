use std::collections::BTreeSet;

use mgr_core::data::{generate_synthetic, BalancedSampler, Batch, SyntheticSpec};
use mgr_core::models::{MgrModel, SamplingStreams};
use mgr_core::training::{
    mgr_loss, param_groups, predictor_accuracy, skew_pretrain, train_loop, TrainConfig, TrainError,
};

fn spec(rho: f64, seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        rho,
        seed,
        train_size: 400,
        dev_size: 100,
        test_size: 100,
        ..SyntheticSpec::default()
    }
}

fn config(n: usize) -> TrainConfig {
    TrainConfig {
        n,
        eta: 5e-3,
        lambda1: 0.3,
        lambda2: 0.01,
        epochs: 2,
        embed_dim: 8,
        hidden_size: 8,
        early_stop_patience: 0,
        seed: 5,
        ..TrainConfig::default()
    }
}

fn fresh(corpus: &mgr_core::data::SyntheticCorpus, cfg: &TrainConfig) -> MgrModel {
    MgrModel::new(cfg.model_config(corpus.vocab.len(), 2), cfg.seed, None).unwrap()
}

fn same_values(a: &MgrModel, b: &MgrModel) -> bool {
    a.store.len() == b.store.len()
        && a.store
            .ids()
            .all(|id| a.store.value(id) == b.store.value(id))
}

#[test]
fn groups_partition_parameters_at_their_rates() {
    let corpus = generate_synthetic(&spec(0.5, 0)).unwrap();
    for share in [false, true] {
        let cfg = TrainConfig {
            share_encoder: share,
            ..config(3)
        };
        let m = fresh(&corpus, &cfg);
        let eta = cfg.eta;
        let groups = param_groups(&m, &cfg.schedule());
        let rates: Vec<f64> = groups.iter().map(|g| g.1).collect();
        let mut want = vec![eta, 2.0 * eta, 3.0 * eta];
        if share {
            want.push(eta);
        }
        want.push(eta / 3.0);
        assert_eq!(rates, want);
        let mut seen = BTreeSet::new();
        for (ids, _) in &groups {
            for id in ids {
                assert!(seen.insert(*id), "parameter in two groups");
            }
        }
        // Frozen embeddings are the only parameter left out.
        assert_eq!(seen.len(), m.store.len() - 1);
    }
}

#[test]
fn training_is_deterministic() {
    let corpus = generate_synthetic(&spec(0.8, 1)).unwrap();
    let cfg = config(2);
    let run = || {
        train_loop(
            fresh(&corpus, &cfg),
            &corpus.train.split,
            &corpus.dev.split,
            &cfg,
        )
        .unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.log, b.log);
    assert!(same_values(&a.model, &b.model));
    assert_eq!(a.epochs_run, 2);
}

#[test]
fn zero_epochs_returns_initial_model() {
    let corpus = generate_synthetic(&spec(0.8, 1)).unwrap();
    let cfg = TrainConfig {
        epochs: 0,
        ..config(2)
    };
    let init = fresh(&corpus, &cfg);
    let out = train_loop(init.clone(), &corpus.train.split, &corpus.dev.split, &cfg).unwrap();
    assert!(out.log.is_empty());
    assert_eq!(out.best_epoch, None);
    assert!(same_values(&out.model, &init));
}

#[test]
fn loss_is_sum_of_components() {
    let corpus = generate_synthetic(&spec(0.8, 2)).unwrap();
    let cfg = config(3);
    let m = fresh(&corpus, &cfg);
    let sampler = BalancedSampler::new(&corpus.train.split, 2, 32, 0).unwrap();
    let idx = sampler.epoch(0).remove(0);
    let batch = Batch::from_indices(&corpus.train.split, &idx).unwrap();
    let d = mgr_loss(&m, &batch, &cfg, &mut SamplingStreams::new(cfg.seed, 3)).unwrap();
    let parts: f64 = d.cross_entropy.iter().chain(&d.omega).sum();
    assert!((d.loss - parts).abs() < 1e-10);
    assert_eq!(d.cross_entropy.len(), 3);
}

#[test]
fn mismatched_generator_count_is_rejected() {
    let corpus = generate_synthetic(&spec(0.8, 1)).unwrap();
    let m = fresh(&corpus, &config(2));
    let err = train_loop(m, &corpus.train.split, &corpus.dev.split, &config(3)).unwrap_err();
    assert!(matches!(err, TrainError::Config { ref field, .. } if field == "n"));
}

#[test]
fn single_generator_learns_clean_task() {
    let corpus = generate_synthetic(&SyntheticSpec {
        rho: 0.0,
        seed: 3,
        ..SyntheticSpec::default()
    })
    .unwrap();
    let cfg = TrainConfig {
        epochs: 6,
        ..config(1)
    };
    let out = train_loop(
        fresh(&corpus, &cfg),
        &corpus.train.split,
        &corpus.dev.split,
        &cfg,
    )
    .unwrap();
    let best = out.log.iter().map(|r| r.dev_acc).fold(0.0, f64::max);
    assert!(best > 0.95, "dev accuracy {best}");
}

#[test]
fn skew_pretraining() {
    let corpus = generate_synthetic(&SyntheticSpec {
        spurious_first: true,
        ..spec(1.0, 4)
    })
    .unwrap();
    let cfg = config(3);
    let seg = corpus.spec.spurious_len;
    let train = &corpus.train.split;

    let mut m = fresh(&corpus, &cfg);
    let init = m.clone();
    skew_pretrain(&mut m, train, &cfg, 0, seg).unwrap();
    assert!(same_values(&m, &init));
    assert!(matches!(
        skew_pretrain(&mut m, train, &cfg, -1, seg),
        Err(TrainError::Config { ref field, .. }) if field == "skew_epochs"
    ));

    skew_pretrain(&mut m, train, &cfg, 5, seg).unwrap();
    // Only the predictor moved.
    for g in &m.generators {
        for id in g.encoder.param_ids().into_iter().chain(g.head_ids()) {
            assert_eq!(m.store.value(id), init.store.value(id));
        }
    }
    let dev = &corpus.dev.split;
    let first = predictor_accuracy(&m, dev, Some(seg)).unwrap();
    let causal = predictor_accuracy(&m, dev, None).unwrap();
    assert!(first > 0.95, "first-segment accuracy {first}");
    assert!(first > causal + 0.2, "first {first} vs causal {causal}");

    // Same seed, different n: identical predictor after skewing.
    let mut one = MgrModel::new(
        config(1).model_config(corpus.vocab.len(), 2),
        cfg.seed,
        None,
    )
    .unwrap();
    skew_pretrain(&mut one, train, &config(1), 5, seg).unwrap();
    for (a, b) in one
        .predictor
        .param_ids()
        .into_iter()
        .zip(m.predictor.param_ids())
    {
        assert_eq!(one.store.value(a), m.store.value(b));
    }
}
