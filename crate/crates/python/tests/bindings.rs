//! The binding layer called from Rust; no interpreter is needed because
//! none of these paths touch Python objects.

use mgr_py::*;

#[test]
fn analytic_functions() {
    assert!((p_spurious(3, 0.67).unwrap() - 0.254826).abs() < 1e-12);
    assert!(p_spurious(3, 1.5).is_err());
    assert_eq!(min_generators(0.2, 0.67, true).unwrap(), 7);
    let (mean, stderr) = monte_carlo_spurious(5, 0.67, 100_000, 3).unwrap();
    assert!((mean - 0.204963).abs() < 4.0 * stderr);
    assert!((estimate_pc(15395, 15169).unwrap() - 0.6650275245327357).abs() < 1e-12);
    let (_, grad) = predictor_payoff(3, 1, 1.0, 0.0, 0.67, 0.33, 0.5).unwrap();
    assert_eq!(grad, -1.0);
    assert_eq!(
        omega(vec![1.0, 0.0, 1.0, 0.0], 4, 1.0, 1.0, 0.5).unwrap(),
        3.0
    );
    assert_eq!(
        token_prf1(vec![vec![1, 1, 0, 0]], vec![Some(vec![0, 1, 1, 0])]).unwrap(),
        (0.5, 0.5, 0.5)
    );
    assert!(generator_overlap(vec![1], vec![1, 0]).is_err());
    let (marg, joint, lo, hi) = entropy_bounds(vec![2, 2], vec![0.5, 0.0, 0.0, 0.5]).unwrap();
    assert_eq!((marg, joint, lo, hi), (vec![1.0, 1.0], 1.0, true, true));
    assert!(grad_check(0).unwrap() < 1e-4);
}

#[test]
fn config_and_model_round_trip() {
    let corpus = PyCorpus::new(2, 0.0, false, 64, 16, 16).unwrap();
    let (ids, _, gold) = corpus.records("dev").unwrap().remove(0);
    assert_eq!(gold.unwrap().len(), ids.len());
    assert!(corpus.records("validation").is_err());

    let mut cfg =
        PyTrainConfig::new(Some("embed_dim = 4\nhidden_size = 4\neta = 0.005"), 3, 1).unwrap();
    assert!(cfg.set("eta", "-1").is_err());
    assert!(cfg.to_text().contains("eta = 0.005"));
    let (rates, pred) = cfg.schedule();
    assert_eq!(rates, vec![0.005, 0.01, 0.015]);
    assert_eq!(pred, 0.005 / 3.0);

    let model = init_model(&corpus, &cfg).unwrap();
    assert_eq!(model.generators(), 3);
    let (mask, probs) = model.infer(ids.clone()).unwrap();
    assert_eq!(mask.len(), ids.len());
    assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert!(model.selection_probs(3, ids.clone()).is_err());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    model.save(path.clone()).unwrap();
    let back = PyModel::load(path).unwrap();
    assert_eq!(back.infer(ids).unwrap(), (mask, probs));
}
