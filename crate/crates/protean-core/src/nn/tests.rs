use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};

use super::*;
use crate::prototype::PrototypeSet;
use crate::rng::StreamRng;
use crate::Error;

fn tiny_cnn() -> Architecture {
    Architecture::Cnn(CnnConfig {
        conv1_filters: 3,
        conv2_filters: 4,
        kernel: 3,
        hidden: 5,
        dropout: [0.2, 0.5],
    })
}

fn random_batch(rng: &mut StreamRng, rows: usize, width: usize, k: usize) -> (Vec<f64>, Vec<usize>) {
    let x = (0..rows * width).map(|_| rng.random_range(-1.0..1.0)).collect();
    let y = (0..rows).map(|i| if i < k { i } else { rng.random_range(0..k) }).collect();
    (x, y)
}

fn close(analytic: f64, numeric: f64) -> bool {
    let diff = (analytic - numeric).abs();
    diff <= 1e-8 || diff / analytic.abs().max(numeric.abs()) <= 1e-3
}

/// Central differences of the objective over every parameter, with the same
/// dropout masks for every evaluation.
fn check_gradient(model: &ModelParams, x: &[f64], y: &[usize], spec: &LossSpec<'_>, mask_seed: u64) {
    let value = |m: &ModelParams| {
        let mut rng = StreamRng::seed_from_u64(mask_seed);
        loss_value(m, x, y, spec, Mode::Train(&mut rng)).unwrap().total()
    };
    let mut rng = StreamRng::seed_from_u64(mask_seed);
    let (_, grad) = loss_and_gradient(model, x, y, spec, Mode::Train(&mut rng)).unwrap();
    let h = 1e-6;
    let mut probe = model.clone();
    for i in 0..model.len() {
        let w = model.weights[i];
        probe.weights[i] = w + h;
        let up = value(&probe);
        probe.weights[i] = w - h;
        let down = value(&probe);
        probe.weights[i] = w;
        let numeric = (up - down) / (2.0 * h);
        assert!(close(grad[i], numeric), "param {i}: analytic {} numeric {numeric}", grad[i]);
    }
}

#[test]
fn cross_entropy_gradient_matches_finite_differences() {
    for instance in 0..20u64 {
        let mut rng = StreamRng::seed_from_u64(instance);
        let model = build_model_with(tiny_cnn(), 6, 3, instance).unwrap();
        let (x, y) = random_batch(&mut rng, 4, 6, 3);
        check_gradient(&model, &x, &y, &LossSpec::cross_entropy(), 100 + instance);
    }
}

#[test]
fn alignment_gradient_matches_finite_differences() {
    for instance in 0..20u64 {
        let mut rng = StreamRng::seed_from_u64(instance);
        let model = build_model_with(tiny_cnn(), 6, 3, instance).unwrap();
        let (x, y) = random_batch(&mut rng, 5, 6, 3);
        let global_vectors: Vec<f64> = (0..15).map(|_| rng.random_range(0.0..1.0)).collect();
        let global = PrototypeSet::from_parts(5, global_vectors, vec![3, 0, 2]).unwrap();
        let spec = LossSpec {
            supervised: 0.0,
            alignment: Some(Alignment {
                weight: 0.7,
                global: &global,
            }),
            proximal: None,
        };
        check_gradient(&model, &x, &y, &spec, 200 + instance);
    }
}

#[test]
fn proximal_gradient_matches_finite_differences() {
    for instance in 0..20u64 {
        let mut rng = StreamRng::seed_from_u64(instance);
        let model = build_model_with(tiny_cnn(), 6, 3, instance).unwrap();
        let (x, y) = random_batch(&mut rng, 3, 6, 3);
        let reference: Vec<f64> = model.weights.iter().map(|w| w + rng.random_range(-0.5..0.5)).collect();
        let spec = LossSpec {
            supervised: 0.0,
            alignment: None,
            proximal: Some(Proximal {
                weight: 0.3,
                reference: &reference,
            }),
        };
        check_gradient(&model, &x, &y, &spec, 300 + instance);
    }
}

#[test]
fn combined_objective_gradient_on_the_default_network() {
    let mut rng = StreamRng::seed_from_u64(9);
    let model = build_model(8, 4, 9).unwrap();
    let (x, y) = random_batch(&mut rng, 6, 8, 4);
    let global = PrototypeSet::from_parts(128, (0..512).map(|_| rng.random_range(0.0..0.2)).collect(), vec![1, 1, 1, 1]).unwrap();
    let reference: Vec<f64> = model.weights.iter().map(|w| w * 0.9).collect();
    let spec = LossSpec {
        supervised: 1.0,
        alignment: Some(Alignment {
            weight: 1.0,
            global: &global,
        }),
        proximal: Some(Proximal {
            weight: 0.1,
            reference: &reference,
        }),
    };
    let mut r = StreamRng::seed_from_u64(5);
    let (_, grad) = loss_and_gradient(&model, &x, &y, &spec, Mode::Train(&mut r)).unwrap();
    let value = |m: &ModelParams| {
        let mut r = StreamRng::seed_from_u64(5);
        loss_value(m, &x, &y, &spec, Mode::Train(&mut r)).unwrap().total()
    };
    let mut probe = model.clone();
    for _ in 0..200 {
        let i = rng.random_range(0..model.len());
        let w = model.weights[i];
        probe.weights[i] = w + 1e-6;
        let up = value(&probe);
        probe.weights[i] = w - 1e-6;
        let down = value(&probe);
        probe.weights[i] = w;
        let numeric = (up - down) / 2e-6;
        assert!(close(grad[i], numeric), "param {i}: {} vs {numeric}", grad[i]);
    }
}

#[test]
fn input_gradient_matches_finite_differences() {
    let mut rng = StreamRng::seed_from_u64(4);
    let model = build_model_with(tiny_cnn(), 6, 3, 4).unwrap();
    for _ in 0..20 {
        let x: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let target: Vec<f64> = (0..5).map(|_| rng.random_range(0.0..1.0)).collect();
        let g = input_gradient(&model, &x, &target).unwrap();
        let f = |x: &[f64]| embedding_objective(&model, x, &target, 1.0).unwrap().0;
        for i in 0..6 {
            let mut up = x.clone();
            up[i] += 1e-6;
            let mut down = x.clone();
            down[i] -= 1e-6;
            let numeric = (f(&up) - f(&down)) / 2e-6;
            assert!(close(g[i], numeric), "feature {i}: {} vs {numeric}", g[i]);
        }
    }
}

#[test]
fn input_gradient_vanishes_at_target_and_scales_with_distance() {
    let model = build_model_with(tiny_cnn(), 6, 3, 1).unwrap();
    let x = [0.3, -0.2, 0.9, 0.1, 0.5, -0.7];
    let e = forward_embedding(&model, &x, Mode::Eval).unwrap().embeddings;
    assert!(input_gradient(&model, &x, &e).unwrap().iter().all(|g| *g == 0.0));
    let shifted: Vec<f64> = e.iter().map(|v| v - 1.0).collect();
    let doubled: Vec<f64> = e.iter().map(|v| v - 2.0).collect();
    let g1 = input_gradient(&model, &x, &shifted).unwrap();
    let g2 = input_gradient(&model, &x, &doubled).unwrap();
    for (a, b) in g1.iter().zip(&g2) {
        assert!((2.0 * a - b).abs() <= 1e-12 * b.abs().max(1.0));
    }
    assert!(input_gradient(&model, &x[..5], &e).is_err());
}

#[test]
fn log_probs_are_normalized_even_for_extreme_logits() {
    let mut model = build_model(16, 9, 7).unwrap();
    let x: Vec<f64> = (0..16).map(|i| i as f64 / 16.0).collect();
    let fwd = forward(&model, &x, Mode::Eval).unwrap();
    assert_eq!(fwd.embeddings.len(), 128);
    let total: f64 = fwd.log_probs.iter().map(|v| v.exp()).sum();
    assert!((total - 1.0).abs() < 1e-6);

    let head_start = model.embedding_len;
    let n = model.head_section().len();
    for (i, w) in model.weights[head_start..].iter_mut().enumerate() {
        *w = if i >= n - 9 { if i % 2 == 0 { 50.0 } else { -50.0 } } else { 0.0 };
    }
    let fwd = forward(&model, &x, Mode::Eval).unwrap();
    assert!(fwd.log_probs.iter().all(|v| v.is_finite()));
    let total: f64 = fwd.log_probs.iter().map(|v| v.exp()).sum();
    assert!((total - 1.0).abs() < 1e-6);

    let mut row = [1000.0, -1000.0, 0.0];
    log_softmax_in_place(&mut row);
    assert!(row[0].abs() < 1e-12 && row.iter().all(|v| v.is_finite()));
}

#[test]
fn eval_mode_is_deterministic() {
    let model = build_model(16, 9, 7).unwrap();
    let x: Vec<f64> = (0..48).map(|i| (i as f64 * 0.37).sin()).collect();
    let a = forward(&model, &x, Mode::Eval).unwrap();
    let b = forward(&model, &x, Mode::Eval).unwrap();
    assert_eq!(a.log_probs, b.log_probs);
    assert_eq!(a.dropout_masks().count(), 0);
}

#[test]
fn dropout_rates_match_configuration() {
    let model = build_model(16, 2, 3).unwrap();
    let x = vec![0.5; 16];
    let mut rng = StreamRng::seed_from_u64(11);
    let mut dropped = [0usize; 2];
    let mut total = [0usize; 2];
    for _ in 0..10_000 {
        let fwd = forward(&model, &x, Mode::Train(&mut rng)).unwrap();
        for (layer, mask) in fwd.dropout_masks().enumerate() {
            dropped[layer] += mask.iter().filter(|&&m| m == 0.0).count();
            total[layer] += mask.len();
        }
    }
    for (layer, rate) in [0.2, 0.5].into_iter().enumerate() {
        let observed = dropped[layer] as f64 / total[layer] as f64;
        assert!((observed - rate).abs() < 0.03, "layer {layer}: {observed}");
    }
}

#[test]
fn zero_weights_give_zero_gradient() {
    let model = build_model_with(tiny_cnn(), 6, 3, 2).unwrap();
    let mut rng = StreamRng::seed_from_u64(2);
    let (x, y) = random_batch(&mut rng, 4, 6, 3);
    let global = PrototypeSet::from_parts(5, vec![0.1; 15], vec![1; 3]).unwrap();
    let reference = vec![0.0; model.len()];
    let spec = LossSpec {
        supervised: 0.0,
        alignment: Some(Alignment {
            weight: 0.0,
            global: &global,
        }),
        proximal: Some(Proximal {
            weight: 0.0,
            reference: &reference,
        }),
    };
    let (loss, grad) = loss_and_gradient(&model, &x, &y, &spec, Mode::Eval).unwrap();
    assert_eq!(loss.total(), 0.0);
    assert!(grad.iter().all(|g| *g == 0.0));
}

#[test]
fn duplicating_the_batch_leaves_the_mean_loss_unchanged() {
    let model = build_model_with(tiny_cnn(), 6, 3, 5).unwrap();
    let mut rng = StreamRng::seed_from_u64(5);
    let (x, y) = random_batch(&mut rng, 4, 6, 3);
    let global = PrototypeSet::from_parts(5, vec![0.1; 15], vec![1; 3]).unwrap();
    let spec = LossSpec {
        supervised: 1.0,
        alignment: Some(Alignment {
            weight: 1.0,
            global: &global,
        }),
        proximal: None,
    };
    let (l1, g1) = loss_and_gradient(&model, &x, &y, &spec, Mode::Eval).unwrap();
    let x2 = [x.clone(), x].concat();
    let y2 = [y.clone(), y].concat();
    let (l2, g2) = loss_and_gradient(&model, &x2, &y2, &spec, Mode::Eval).unwrap();
    assert!((l1.total() - l2.total()).abs() < 1e-12);
    for (a, b) in g1.iter().zip(&g2) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn rejects_out_of_range_labels_and_bad_widths() {
    let model = build_model_with(tiny_cnn(), 6, 3, 5).unwrap();
    let x = vec![0.0; 12];
    let err = loss_and_gradient(&model, &x, &[0, 3], &LossSpec::cross_entropy(), Mode::Eval).unwrap_err();
    assert_eq!(err, Error::LabelOutOfRange { label: 3, num_classes: 3 });
    assert!(forward(&model, &x[..11], Mode::Eval).is_err());
}

#[test]
fn sgd_learns_a_separable_problem() {
    let mut rng = StreamRng::seed_from_u64(21);
    let n = 200;
    let mut x = Vec::with_capacity(n * 8);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % 2;
        let shift = if label == 0 { -1.0 } else { 1.0 };
        for _ in 0..8 {
            x.push(shift + rng.random_range(-0.5..0.5));
        }
        y.push(label);
    }
    let mut model = build_model(8, 2, 21).unwrap();
    let spec = LossSpec::cross_entropy();
    for step in 0..200 {
        let lo = (step * 20) % n;
        let (_, g) = loss_and_gradient(&model, &x[lo * 8..(lo + 20) * 8], &y[lo..lo + 20], &spec, Mode::Train(&mut rng)).unwrap();
        sgd_step_in_place(&mut model, &g, 0.05).unwrap();
    }
    let fwd = forward(&model, &x, Mode::Eval).unwrap();
    let correct = (0..n).filter(|&i| {
        let lp = fwd.log_prob_row(i);
        (lp[1] > lp[0]) == (y[i] == 1)
    });
    assert!(correct.count() as f64 / n as f64 >= 0.99);
}

#[test]
fn backward_without_head_rejects_logit_gradients() {
    let model = build_model_with(tiny_cnn(), 6, 3, 5).unwrap();
    let x = vec![0.1; 6];
    let fwd = forward_embedding(&model, &x, Mode::Eval).unwrap();
    assert!(backward(&model, &fwd, Some(&[0.0; 3]), None, None, false).is_err());
}
