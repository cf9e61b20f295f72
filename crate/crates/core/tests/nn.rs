mod common;

use common::{
    conv_grad_errors, gate_grad_errors, loss_grad_error, model_grad_errors, random_tensor,
    separable_grad_errors,
};
use spiral_agcnn::nn::{loss, train, AdamState, AgCnnModel, ModelConfig, Sample, TrainConfig};
use spiral_agcnn::tensors::{RealTensor, Rng};

fn assert_all(errors: &[(String, f64)], tol: f64) {
    for (name, e) in errors {
        assert!(*e < tol, "{name}: relative error {e:e}");
    }
}

#[test]
fn conv_gradients() {
    assert_all(&conv_grad_errors(1), 1e-5);
}

#[test]
fn separable_conv_gradients() {
    assert_all(&separable_grad_errors(2), 1e-5);
}

#[test]
fn attention_gate_gradients() {
    for filter in [1, 3, 5] {
        assert_all(&gate_grad_errors(filter, 10 + filter as u64), 1e-5);
    }
}

fn tiny(f1: usize, f2: usize) -> ModelConfig {
    ModelConfig {
        kernels: [3, 3, 3],
        channels: [6, 4],
        ..ModelConfig::agcnn(f1, f2)
    }
}

#[test]
fn residual_model_gradients() {
    let mut rng = Rng::new(3);
    for (f1, f2) in [(3, 3), (5, 1)] {
        let model = AgCnnModel::init(tiny(f1, f2), &mut rng).unwrap();
        let x = random_tensor(&[7, 8, 2], &mut rng);
        let r = random_tensor(&[7, 8, 2], &mut rng);
        assert_all(&model_grad_errors(&model, &x, &r, 1), 1e-5);
    }
    let cnn = AgCnnModel::init(
        ModelConfig {
            kernels: [3, 3, 3],
            channels: [6, 4],
            ..ModelConfig::cnn()
        },
        &mut rng,
    )
    .unwrap();
    let x = random_tensor(&[6, 6, 2], &mut rng);
    let r = random_tensor(&[6, 6, 2], &mut rng);
    assert_all(&model_grad_errors(&cnn, &x, &r, 1), 1e-5);
}

#[test]
fn full_size_model_gradients_sampled() {
    let mut rng = Rng::new(4);
    let model = AgCnnModel::init(ModelConfig::agcnn(3, 3), &mut rng).unwrap();
    let x = random_tensor(&[8, 8, 2], &mut rng);
    let r = random_tensor(&[8, 8, 2], &mut rng);
    assert_all(&model_grad_errors(&model, &x, &r, 97), 1e-5);
}

#[test]
fn loss_gradient_off_ties() {
    let e = loss_grad_error(5);
    assert!(e < 1e-4, "loss: relative error {e:e}");
}

#[test]
fn loss_matches_scalar_recomputation() {
    let mut rng = Rng::new(6);
    let (h, w, c) = (5, 4, 2);
    let p = random_tensor(&[h, w, c], &mut rng);
    let t = random_tensor(&[h, w, c], &mut rng);
    let at = |x: &RealTensor, i: usize, j: usize, k: usize| x.data()[(i * w + j) * c + k];
    let mut l1 = 0.0;
    let mut gdl = 0.0;
    let mut pairs = 0.0;
    for i in 0..h {
        for j in 0..w {
            for k in 0..c {
                l1 += (at(&p, i, j, k) - at(&t, i, j, k)).abs();
                if j + 1 < w {
                    let dp = (at(&p, i, j + 1, k) - at(&p, i, j, k)).abs();
                    let dt = (at(&t, i, j + 1, k) - at(&t, i, j, k)).abs();
                    gdl += (dt - dp).abs();
                    pairs += 1.0;
                }
                if i + 1 < h {
                    let dp = (at(&p, i + 1, j, k) - at(&p, i, j, k)).abs();
                    let dt = (at(&t, i + 1, j, k) - at(&t, i, j, k)).abs();
                    gdl += (dt - dp).abs();
                    pairs += 1.0;
                }
            }
        }
    }
    let v = loss(&p, &t).unwrap();
    assert!((v.l1 - l1 / (h * w * c) as f64).abs() < 1e-12);
    assert!((v.gdl - gdl / pairs).abs() < 1e-12);
    assert!((v.total - v.l1 - v.gdl).abs() < 1e-12);
}

#[test]
fn gate_maps_stay_in_unit_interval() {
    let mut rng = Rng::new(7);
    let model = AgCnnModel::init(ModelConfig::agcnn(5, 3), &mut rng).unwrap();
    for scale in [1e-3, 1.0, 1e3] {
        let mut x = random_tensor(&[12, 12, 2], &mut rng);
        x.scale(scale);
        let cache = model.forward_train(&x).unwrap();
        assert_eq!(cache.masks().len(), 2);
        for m in cache.masks() {
            assert!(m.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}

#[test]
fn adam_two_steps_by_hand() {
    let mut adam = AdamState::new(&[1], 0.1);
    let mut p = vec![1.0];
    adam.step(&mut [&mut p], &[vec![0.5]]);
    // m = 0.05, v = 2.5e-4; bias-corrected m̂ = 0.5, v̂ = 0.25.
    let p1 = 1.0 - 0.1 * 0.5 / (0.5 + 1e-8);
    assert!((p[0] - p1).abs() < 1e-15);
    adam.step(&mut [&mut p], &[vec![-1.0]]);
    let m2: f64 = 0.9 * 0.05 - 0.1;
    let v2: f64 = 0.999 * 2.5e-4 + 0.001;
    let mhat = m2 / (1.0 - 0.81);
    let vhat = v2 / (1.0 - 0.998001);
    let p2 = p1 - 0.1 * mhat / (vhat.sqrt() + 1e-8);
    assert!((p[0] - p2).abs() < 1e-14, "{} vs {p2}", p[0]);
}

fn sample(n: usize, seed: u64) -> Sample {
    let mut rng = Rng::new(seed);
    let input = random_tensor(&[n, n, 2], &mut rng);
    let mut target = input.clone();
    // A fixed local transform the network can represent.
    for (i, v) in target.data_mut().iter_mut().enumerate() {
        *v *= if i % 2 == 0 { 0.5 } else { -0.25 };
    }
    Sample { input, target }
}

#[test]
fn overfits_a_single_sample() {
    let data = vec![sample(8, 1)];
    let cfg = TrainConfig {
        epochs: 200,
        batch_size: 1,
        lr: 3e-3,
        seed: 0,
    };
    let (_, log) = train(&data, &[], tiny(3, 1), cfg, Rng::new(9)).unwrap();
    let first = log.epochs[0].train_loss;
    let best = log.epochs.iter().map(|e| e.val_loss).fold(f64::INFINITY, f64::min);
    assert!(best < 0.2 * first, "{first} -> {best}");
}

#[test]
fn training_is_deterministic_across_thread_counts() {
    let data: Vec<Sample> = (0..6).map(|s| sample(6, s)).collect();
    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 4,
        lr: 1e-3,
        seed: 0,
    };
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| train(&data, &data[..2], tiny(3, 3), cfg.clone(), Rng::new(5)).unwrap())
    };
    let (a, la) = run(1);
    let (b, lb) = run(3);
    assert_eq!(a, b);
    let losses = |l: &spiral_agcnn::nn::TrainLog| -> Vec<f64> {
        l.epochs.iter().map(|e| e.train_loss).collect()
    };
    assert_eq!(losses(&la), losses(&lb));
}
