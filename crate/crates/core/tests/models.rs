use mgr_core::data::{DatasetSplit, Example};
use mgr_core::models::{predictor_forward, sample_mask, MgrModel, ModelConfig, SampleMode};
use mgr_core::training::predict_split;

fn model(generators: usize, seed: u64) -> MgrModel {
    let config = ModelConfig {
        vocab_size: 20,
        embed_dim: 5,
        hidden_size: 4,
        generators,
        ..ModelConfig::default()
    };
    MgrModel::new(config, seed, None).unwrap()
}

fn split() -> DatasetSplit {
    DatasetSplit::new(
        (0..6)
            .map(|i| Example::new((2..2 + 4 + i).map(|t| t % 20).collect(), i % 2, None).unwrap())
            .collect(),
    )
}

#[test]
fn large_head_bias_selects_everything() {
    let mut m = model(1, 0);
    let b = m.generators[0].head_b;
    m.store.value_mut(b).data_mut()[0] = 20.0;
    let preds = predict_split(&m, &split(), &[0]).unwrap();
    for mask in &preds.masks[0] {
        assert!(mask.iter().all(|&x| x == 1));
    }
    let ex = Example::new(vec![2, 3, 4, 5], 0, None).unwrap();
    let p = mgr_core::models::generator_forward(&m, 0, &ex).unwrap();
    assert!(p.iter().all(|&x| x > 0.99), "{p:?}");
}

#[test]
fn identical_generator_weights_give_identical_masks() {
    let mut m = model(2, 4);
    let (src, dst) = (m.generators[0].clone(), m.generators[1].clone());
    let pairs = src
        .encoder
        .param_ids()
        .into_iter()
        .zip(dst.encoder.param_ids())
        .chain(src.head_ids().into_iter().zip(dst.head_ids()));
    for (a, b) in pairs {
        let v = m.store.value(a).clone();
        *m.store.value_mut(b) = v;
    }
    let preds = predict_split(&m, &split(), &[0, 1]).unwrap();
    assert_eq!(preds.masks[0], preds.masks[1]);
    assert_eq!(preds.probs[0], preds.probs[1]);
}

#[test]
fn permuting_unselected_tokens_leaves_prediction_unchanged() {
    let m = model(1, 9);
    let tokens = vec![2, 3, 4, 5, 6, 7, 8];
    let mask = [0.0, 1.0, 0.0, 0.0, 1.0, 1.0, 0.0];
    let base =
        predictor_forward(&m, &Example::new(tokens.clone(), 0, None).unwrap(), &mask).unwrap();
    // Rotate the tokens at unselected positions 0, 2, 3, 6.
    let mut permuted = tokens.clone();
    let (a, b, c, d) = (tokens[0], tokens[2], tokens[3], tokens[6]);
    permuted[0] = d;
    permuted[2] = a;
    permuted[3] = b;
    permuted[6] = c;
    let moved = predictor_forward(&m, &Example::new(permuted, 0, None).unwrap(), &mask).unwrap();
    assert_eq!(base, moved);
}

#[test]
fn sampling_rejects_bad_temperature() {
    let mut rng = mgr_core::rng::stream(0, "t");
    assert!(sample_mask(&[0.5, 0.5], 0.0, SampleMode::Train, &mut rng).is_err());
}
