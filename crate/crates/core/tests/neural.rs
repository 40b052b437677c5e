use std::sync::Arc;

use ccs_core::dataset::*;
use ccs_core::nd::gradcheck::{central_difference, relative_error, STEP};
use ccs_core::nd::{ParamStore, Tape, Tensor};
use ccs_core::neural::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn schema(p_num: usize, cards: &[usize]) -> Arc<FeatureSchema> {
    Arc::new(FeatureSchema {
        numerical: (0..p_num)
            .map(|j| NumericalSpec {
                name: format!("x{j}"),
                unit: "u".into(),
                min: 0.0,
                max: 1.0,
            })
            .collect(),
        categorical: cards
            .iter()
            .enumerate()
            .map(|(j, &k)| CategoricalSpec {
                name: format!("c{j}"),
                vocab: (0..k).map(|v| format!("v{v}")).collect(),
            })
            .collect(),
        targets: TargetColumns {
            day7: "s7".into(),
            day28: "s28".into(),
        },
    })
}

/// Noiseless linear task: `y = 5000 + 800·x0 − 400·x1 + 300·c0`.
fn linear_task(n: usize, seed: u64) -> EncodedDataset {
    let s = schema(2, &[3]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut num = Vec::new();
    let mut cat = Vec::new();
    let mut y = Vec::new();
    for _ in 0..n {
        let (a, b): (f64, f64) = (rng.random(), rng.random());
        let c = rng.random_range(0..3u32);
        num.extend([a, b]);
        cat.push(c);
        y.push(5000.0 + 800.0 * a - 400.0 * b + 300.0 * c as f64);
    }
    EncodedDataset::new(FeatureRows::new(s, num, cat).unwrap(), y, Age::Day28).unwrap()
}

fn r2(actual: &[f64], pred: &[f64]) -> f64 {
    let m = actual.iter().sum::<f64>() / actual.len() as f64;
    let ss_res: f64 = actual.iter().zip(pred).map(|(a, p)| (a - p).powi(2)).sum();
    let ss_tot: f64 = actual.iter().map(|a| (a - m).powi(2)).sum();
    1.0 - ss_res / ss_tot
}

fn tiny_embed(epochs: usize) -> EmbedNetConfig {
    EmbedNetConfig {
        hidden: 8,
        blocks: 5,
        epochs,
        batch_size: 16,
        ..Default::default()
    }
}

fn tiny_transformer(epochs: usize) -> TabTransformerConfig {
    TabTransformerConfig {
        d_model: 8,
        heads: 2,
        layers: 1,
        ffn: Some(16),
        epochs,
        batch_size: 16,
        ..Default::default()
    }
}

fn random_batch(rng: &mut ChaCha8Rng, m: usize, p: usize, cards: &[usize]) -> Batch {
    Batch {
        m,
        numeric: Some(Tensor::new(vec![m, p], (0..m * p).map(|_| rng.random_range(-3.0..3.0)).collect()).unwrap()),
        categorical: cards
            .iter()
            .map(|&k| (0..m).map(|_| rng.random_range(0..k)).collect())
            .collect(),
    }
}

/// Compares tape gradients of an MSE loss against central differences on
/// `count` randomly chosen parameter entries.
fn gradient_check<F>(store: &mut ParamStore, forward: F, count: usize, seed: u64) -> f64
where
    F: Fn(&ParamStore, &mut Tape) -> ccs_core::nd::Var,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tape = Tape::new();
    let pred = forward(store, &mut tape);
    let m = tape.value(pred).len();
    let target: Vec<f64> = (0..m).map(|_| rng.random_range(4.0..7.0)).collect();
    let loss = tape.mse_loss(pred, &target).unwrap();
    let grads = tape.backward(loss).unwrap();
    let analytic: Vec<(ccs_core::nd::ParamId, Tensor)> =
        grads.params().map(|(id, g)| (id, g.clone())).collect();
    let ids: Vec<_> = store.iter().map(|p| p.id()).collect();
    let mut worst: f64 = 0.0;
    for _ in 0..count {
        let id = ids[rng.random_range(0..ids.len())];
        let len = store.get(id).value().len();
        let i = rng.random_range(0..len);
        let a: f64 = analytic
            .iter()
            .filter(|(pid, _)| *pid == id)
            .map(|(_, g)| g.data()[i])
            .sum();
        let mut values = store.get(id).value().data().to_vec();
        let numeric = central_difference(
            |x| {
                let mut s = store.clone();
                s.set_value(id, Tensor::new(s.get(id).value().shape().to_vec(), x.to_vec()).unwrap())
                    .unwrap();
                let mut t = Tape::new();
                let p = forward(&s, &mut t);
                let l = t.mse_loss(p, &target).unwrap();
                t.value(l).data()[0]
            },
            &mut values,
            i,
            STEP,
        );
        worst = worst.max(relative_error(a, numeric));
    }
    worst
}

#[test]
fn embednet_full_gradient_check() {
    let ds = linear_task(40, 1);
    let mut model = EmbedNetModel::fit(&ds, &tiny_embed(0), 3).unwrap();
    // keep the ReLU head in its linear region
    let head = model.parameters().iter().find(|p| p.name() == "head.bias").unwrap().id();
    model.parameters_mut().set_value(head, Tensor::full(&[1], 5.0).unwrap()).unwrap();
    let batch = random_batch(&mut ChaCha8Rng::seed_from_u64(9), 6, 2, &[3]);
    let mut store = model.parameters().clone();
    let err = gradient_check(
        &mut store,
        |s, tape| {
            let mut m = model.clone();
            *m.parameters_mut() = s.clone();
            m.forward(tape, &batch).unwrap()
        },
        50,
        17,
    );
    assert!(err < 1e-4, "max relative error {err}");
}

#[test]
fn transformer_full_gradient_check() {
    let ds = linear_task(40, 2);
    let model = TabTransformerModel::fit(&ds, &tiny_transformer(0), 4).unwrap();
    let batch = random_batch(&mut ChaCha8Rng::seed_from_u64(10), 4, 2, &[3]);
    let mut store = model.parameters().clone();
    let err = gradient_check(
        &mut store,
        |s, tape| {
            let mut m = model.clone();
            *m.parameters_mut() = s.clone();
            m.forward(tape, &batch).unwrap()
        },
        50,
        23,
    );
    assert!(err < 1e-4, "max relative error {err}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn embednet_predictions_never_negative(seed in any::<u64>(), bias in -20.0f64..5.0) {
        let ds = linear_task(30, 5);
        let mut model = EmbedNetModel::fit(&ds, &tiny_embed(0), seed).unwrap();
        let head = model.parameters().iter().find(|p| p.name() == "head.bias").unwrap().id();
        model.parameters_mut().set_value(head, Tensor::full(&[1], bias).unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let batch = random_batch(&mut rng, 20, 2, &[3]);
        let mut tape = Tape::new();
        let out = model.forward(&mut tape, &batch).unwrap();
        prop_assert!(tape.value(out).data().iter().all(|&v| v >= 0.0));
    }
}

#[test]
fn zero_head_predicts_zero() {
    let ds = linear_task(30, 6);
    let mut model = EmbedNetModel::fit(&ds, &tiny_embed(0), 1).unwrap();
    let store = model.parameters_mut();
    let ids: Vec<_> = store
        .iter()
        .filter(|p| p.name().starts_with("head."))
        .map(|p| (p.id(), p.value().shape().to_vec()))
        .collect();
    for (id, shape) in ids {
        store.set_value(id, Tensor::zeros(&shape).unwrap()).unwrap();
    }
    assert!(model.predict(ds.features()).unwrap().iter().all(|&v| v == 0.0));
}

#[test]
fn zero_epochs_returns_initial_model() {
    let ds = linear_task(30, 7);
    let model = EmbedNetModel::fit(&ds, &tiny_embed(0), 1).unwrap();
    assert!(model.history().train_loss.is_empty());
    assert_eq!(model.history().best_epoch, None);
    let t = TabTransformerModel::fit(&ds, &tiny_transformer(0), 1).unwrap();
    assert!(t.history().train_loss.is_empty());
}

fn values(store: &ParamStore) -> Vec<Vec<f64>> {
    store.iter().map(|p| p.value().data().to_vec()).collect()
}

#[test]
fn training_is_deterministic() {
    let ds = linear_task(60, 8);
    let a = EmbedNetModel::fit(&ds, &tiny_embed(5), 11).unwrap();
    let b = EmbedNetModel::fit(&ds, &tiny_embed(5), 11).unwrap();
    assert_eq!(values(a.parameters()), values(b.parameters()));
    let c = EmbedNetModel::fit(&ds, &tiny_embed(5), 12).unwrap();
    assert_ne!(values(a.parameters()), values(c.parameters()));
    let a = TabTransformerModel::fit(&ds, &tiny_transformer(5), 11).unwrap();
    let b = TabTransformerModel::fit(&ds, &tiny_transformer(5), 11).unwrap();
    assert_eq!(values(a.parameters()), values(b.parameters()));
}

#[test]
fn swapping_rows_swaps_predictions() {
    let ds = linear_task(30, 9);
    let e = EmbedNetModel::fit(&ds, &tiny_embed(2), 1).unwrap();
    let t = TabTransformerModel::fit(&ds, &tiny_transformer(2), 1).unwrap();
    let mut order: Vec<usize> = (0..30).collect();
    order.swap(3, 17);
    let swapped = ds.features().subset(&order);
    for (a, b) in [
        (e.predict(ds.features()).unwrap(), e.predict(&swapped).unwrap()),
        (t.predict(ds.features()).unwrap(), t.predict(&swapped).unwrap()),
    ] {
        assert_eq!(a[3], b[17]);
        assert_eq!(a[17], b[3]);
        assert_eq!(a[5], b[5]);
    }
}

#[test]
fn unused_category_rows_get_zero_gradient() {
    let ds = linear_task(30, 10);
    let model = EmbedNetModel::fit(&ds, &tiny_embed(0), 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut batch = random_batch(&mut rng, 8, 2, &[3]);
    batch.categorical[0] = vec![0, 2, 0, 2, 2, 0, 0, 2];
    let mut tape = Tape::new();
    let out = model.forward(&mut tape, &batch).unwrap();
    let loss = tape.mse_loss(out, &[5.0; 8]).unwrap();
    let grads = tape.backward(loss).unwrap();
    let table = model.parameters().iter().find(|p| p.name() == "embedding.0").unwrap().id();
    let g: Vec<f64> = grads
        .params()
        .filter(|(id, _)| *id == table)
        .flat_map(|(_, g)| g.data().to_vec())
        .collect();
    let d = g.len() / 3;
    assert!(g[d..2 * d].iter().all(|&v| v == 0.0));
    assert!(g[..d].iter().any(|&v| v != 0.0));
}

#[test]
fn attention_rows_are_stochastic() {
    let ds = linear_task(20, 11);
    let model = TabTransformerModel::fit(&ds, &tiny_transformer(3), 2).unwrap();
    let probs = model.attention(ds.features()).unwrap();
    assert_eq!(probs.len(), 1);
    let t = 3;
    assert_eq!(probs[0].shape(), &[20 * 2 * t, t]);
    for r in 0..probs[0].rows() {
        let s: f64 = probs[0].row(r).iter().sum();
        assert!((s - 1.0).abs() < 1e-6);
    }
}

#[test]
fn single_token_attention_is_identity() {
    let s = schema(1, &[]);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x: Vec<f64> = (0..30).map(|_| rng.random()).collect();
    let y: Vec<f64> = x.iter().map(|v| 5000.0 + 1000.0 * v).collect();
    let ds = EncodedDataset::new(FeatureRows::new(s, x, vec![]).unwrap(), y, Age::Day7).unwrap();
    let model = TabTransformerModel::fit(&ds, &tiny_transformer(2), 1).unwrap();
    let probs = model.attention(ds.features()).unwrap();
    assert!(probs[0].data().iter().all(|&p| p == 1.0));
    assert_eq!(model.predict(ds.features()).unwrap().len(), 30);
}

#[test]
fn predict_checks_schema() {
    let ds = linear_task(20, 12);
    let model = TabTransformerModel::fit(&ds, &tiny_transformer(0), 1).unwrap();
    let other = linear_task(5, 1).features().with_schema(schema(2, &[4])).unwrap();
    assert!(matches!(
        model.predict(&other),
        Err(NeuralError::IncompatibleSchema { .. })
    ));
}

#[test]
fn parameters_round_trip() {
    let ds = linear_task(40, 13);
    let model = EmbedNetModel::fit(&ds, &tiny_embed(2), 1).unwrap();
    let stored = model
        .parameters()
        .iter()
        .map(|p| (p.name().to_string(), p.value().clone()))
        .collect();
    let back = EmbedNetModel::from_parameters(
        model.schema_hash(),
        model.arch().clone(),
        model.stats().clone(),
        stored,
    )
    .unwrap();
    assert_eq!(back.predict(ds.features()).unwrap(), model.predict(ds.features()).unwrap());
}

#[test]
fn embednet_fits_linear_task() {
    let train = linear_task(200, 20);
    let test = linear_task(100, 21);
    let cfg = EmbedNetConfig {
        hidden: 32,
        epochs: 200,
        batch_size: 16,
        ..Default::default()
    };
    let model = EmbedNetModel::fit(&train, &cfg, 5).unwrap();
    let score = r2(test.targets(), &model.predict(test.features()).unwrap());
    assert!(score > 0.99, "R² {score}");
}

#[test]
fn transformer_fits_linear_task() {
    let train = linear_task(200, 22);
    let test = linear_task(100, 23);
    let cfg = TabTransformerConfig {
        d_model: 16,
        heads: 2,
        layers: 1,
        ffn: Some(32),
        epochs: 400,
        batch_size: 16,
        ..Default::default()
    };
    let model = TabTransformerModel::fit(&train, &cfg, 5).unwrap();
    let score = r2(test.targets(), &model.predict(test.features()).unwrap());
    assert!(score > 0.95, "R² {score}");
}

#[test]
fn parameter_count_matches_store() {
    let ds = linear_task(40, 3);
    let total = |s: &ParamStore| s.iter().map(|p| p.value().len()).sum::<usize>();
    for hidden in [4, 9] {
        let cfg = EmbedNetConfig { hidden, blocks: 3, epochs: 0, ..Default::default() };
        let m = EmbedNetModel::fit(&ds, &cfg, 1).unwrap();
        assert_eq!(m.arch().parameter_count(), total(m.parameters()));
    }
    for (d_model, layers, ffn) in [(8, 1, Some(5)), (12, 2, None)] {
        let cfg = TabTransformerConfig { d_model, heads: 2, layers, ffn, epochs: 0, ..Default::default() };
        let m = TabTransformerModel::fit(&ds, &cfg, 1).unwrap();
        assert_eq!(m.arch().parameter_count(), total(m.parameters()));
    }
}
