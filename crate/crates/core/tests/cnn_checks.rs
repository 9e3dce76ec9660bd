//! Independent checks of the convolutional network: a naive convolution
//! oracle, finite-difference gradient validation, cap/truncation enforcement
//! under training, a smooth-regression fit, and the piecewise-affine probe.

use npmd_core::cnn::{
    architecture_from_budget, check_restriction, conv_forward, lipschitz_penalty, train_erm,
    CnnGradients, CnnModel, CnnSpec, ForwardTrace, RestrictedClassSpec, SizingConstants,
    TrainerConfig,
};
use npmd_core::manifold::circle_manifold;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Naive convolution written independently of the library version: build an
/// explicitly zero-extended copy of `z`, then evaluate the triple sum
/// `Y[k][j] = Σ_i Σ_l W[j][i][l] · Z[k+i][l]` with no slicing tricks.
fn conv_oracle(
    z: &[f64],
    rows: usize,
    c_in: usize,
    filter: &[f64],
    c_out: usize,
    filter_len: usize,
) -> Vec<f64> {
    let mut padded = vec![0.0; (rows + filter_len) * c_in];
    padded[..rows * c_in].copy_from_slice(z);
    let mut out = vec![0.0; rows * c_out];
    for k in 0..rows {
        for j in 0..c_out {
            let mut acc = 0.0;
            for i in 0..filter_len {
                for l in 0..c_in {
                    acc += filter[(j * filter_len + i) * c_in + l] * padded[(k + i) * c_in + l];
                }
            }
            out[k * c_out + j] = acc;
        }
    }
    out
}

#[test]
fn conv_matches_naive_oracle_on_random_shapes() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for case in 0..200 {
        let rows = rng.random_range(1..=12);
        let c_in = rng.random_range(1..=6);
        let c_out = rng.random_range(1..=6);
        let filter_len = rng.random_range(1..=rows.min(5));
        let z: Vec<f64> = (0..rows * c_in).map(|_| rng.random_range(-2.0..2.0)).collect();
        let filter: Vec<f64> =
            (0..c_out * filter_len * c_in).map(|_| rng.random_range(-2.0..2.0)).collect();
        let fast = conv_forward(&z, rows, c_in, &filter, c_out, filter_len);
        let slow = conv_oracle(&z, rows, c_in, &filter, c_out, filter_len);
        for (idx, (a, b)) in fast.iter().zip(&slow).enumerate() {
            assert!(
                (a - b).abs() <= 1e-12 * (1.0 + b.abs()),
                "case {case}: entry {idx} differs ({a} vs {b})"
            );
        }
    }
}

/// Flattened view of all parameters, used to perturb them one at a time.
fn flat_params(model: &CnnModel) -> Vec<f64> {
    let mut flat = Vec::new();
    for layer in &model.params.layers {
        flat.extend_from_slice(&layer.filter);
        flat.extend_from_slice(&layer.bias);
    }
    flat.extend_from_slice(&model.params.dense);
    flat.push(model.params.dense_bias);
    flat
}

fn set_flat_params(model: &mut CnnModel, flat: &[f64]) {
    let mut at = 0;
    for layer in &mut model.params.layers {
        let nf = layer.filter.len();
        layer.filter.copy_from_slice(&flat[at..at + nf]);
        at += nf;
        let nb = layer.bias.len();
        layer.bias.copy_from_slice(&flat[at..at + nb]);
        at += nb;
    }
    let nd = model.params.dense.len();
    model.params.dense.copy_from_slice(&flat[at..at + nd]);
    at += nd;
    model.params.dense_bias = flat[at];
}

fn flat_grads(grads: &CnnGradients) -> Vec<f64> {
    let mut flat = Vec::new();
    for layer in &grads.layers {
        flat.extend_from_slice(&layer.filter);
        flat.extend_from_slice(&layer.bias);
    }
    flat.extend_from_slice(&grads.dense);
    flat.push(grads.dense_bias);
    flat
}

#[test]
fn gradients_match_central_finite_differences() {
    let h = 1e-5;
    for seed in 0..5u64 {
        let spec = CnnSpec {
            blocks: 1,
            layers_per_block: 2,
            channels: 3,
            filter_len: 2,
            filter_cap: 1.0,
            output_cap: 100.0,
            input_dim: 5,
        };
        let mut model = CnnModel::new(spec, seed).unwrap();
        // Scale up the perturbation noise so activations are well away from
        // the ReLU kinks (FD through a kink is meaningless).
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        let x: Vec<f64> = (0..5).map(|_| rng.random_range(0.2..1.5)).collect();

        let mut grads = CnnGradients::zeros(&spec);
        let mut trace = ForwardTrace::default();
        model.forward_traced(&x, &mut trace).unwrap();
        model.backward_into(&trace, 1.0, &mut grads);
        let exact = flat_grads(&grads);

        let base = flat_params(&model);
        let mut worst = 0.0f64;
        for p in 0..base.len() {
            let mut plus = base.clone();
            plus[p] += h;
            set_flat_params(&mut model, &plus);
            let f_plus = model.forward(&x).unwrap();
            let mut minus = base.clone();
            minus[p] -= h;
            set_flat_params(&mut model, &minus);
            let f_minus = model.forward(&x).unwrap();
            let fd = (f_plus - f_minus) / (2.0 * h);
            let rel = (exact[p] - fd).abs() / (1.0 + exact[p].abs().max(fd.abs()));
            worst = worst.max(rel);
        }
        set_flat_params(&mut model, &base);
        assert!(worst < 1e-4, "seed {seed}: worst normalized gradient error {worst}");
    }
}

#[test]
fn truncation_zeroes_gradients_outside_the_active_band() {
    let spec = CnnSpec {
        blocks: 1,
        layers_per_block: 1,
        channels: 2,
        filter_len: 2,
        filter_cap: 1.0,
        output_cap: 100.0,
        input_dim: 4,
    };
    let mut model = CnnModel::new(spec, 7).unwrap();
    model.params.dense_bias = 10.0;
    model.clamp = Some(1.0);
    let x = [0.5, -0.3, 0.8, 0.1];
    let mut grads = CnnGradients::zeros(&spec);
    let y = model.backward_gradients(&x, 1.0, &mut grads).unwrap();
    assert_eq!(y, 1.0, "output should sit exactly at the truncation level");
    let total: f64 = flat_grads(&grads).iter().map(|g| g.abs()).sum();
    assert_eq!(total, 0.0, "saturated truncation must block every gradient");
}

#[test]
fn training_respects_caps_and_reports_best_checkpoint() {
    let spec = CnnSpec {
        blocks: 2,
        layers_per_block: 2,
        channels: 8,
        filter_len: 3,
        filter_cap: 1.0,
        output_cap: 50.0,
        input_dim: 8,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let n = 64;
    let xs: Vec<f64> = (0..n * 8).map(|_| rng.random_range(-1.0..1.0)).collect();
    let ys: Vec<f64> = xs.chunks_exact(8).map(|x| x[0] - 0.5 * x[3]).collect();
    let mut model = CnnModel::new(spec, 1).unwrap();
    let cfg = TrainerConfig { epochs: 10, batch_size: 16, learning_rate: 0.02, ..Default::default() };
    let report = train_erm(&mut model, &xs, &ys, None, &cfg).unwrap();

    assert!(model.max_filter_magnitude() <= spec.filter_cap);
    assert!(model.max_dense_magnitude() <= spec.output_cap);
    assert_eq!(report.epoch_losses.len(), 10);
    // The returned parameters realize the reported best loss.
    let mse: f64 = xs
        .chunks_exact(8)
        .zip(&ys)
        .map(|(x, &y)| {
            let e = model.forward(x).unwrap() - y;
            e * e
        })
        .sum::<f64>()
        / n as f64;
    assert!((mse - report.best_loss).abs() < 1e-12, "checkpoint loss {mse} vs {}", report.best_loss);
    let best = report.best_so_far();
    assert!(best.windows(2).all(|w| w[1] <= w[0]), "running best must be non-increasing");
}

#[test]
fn non_finite_targets_abort_training() {
    let spec = CnnSpec {
        blocks: 1,
        layers_per_block: 1,
        channels: 4,
        filter_len: 2,
        filter_cap: 1.0,
        output_cap: 10.0,
        input_dim: 4,
    };
    let mut model = CnnModel::new(spec, 0).unwrap();
    let xs = vec![0.1; 8 * 4];
    let mut ys = vec![0.0; 8];
    ys[3] = f64::NAN;
    let cfg = TrainerConfig { epochs: 2, ..Default::default() };
    let err = train_erm(&mut model, &xs, &ys, None, &cfg).unwrap_err();
    assert!(err.to_string().contains("non-finite"), "got: {err}");
}

#[test]
fn erm_fits_a_smooth_function_on_an_embedded_circle() {
    // Regression target sin(θ) on a circle net embedded in R^10; the trained
    // net must explain at least 95% of the target variance.
    let ambient = 10;
    let n = 96;
    let net = circle_manifold(n, ambient, 77, None).unwrap();
    let xs: Vec<f64> = (0..n).flat_map(|i| net.point(i).to_vec()).collect();
    let ys: Vec<f64> = (0..n)
        .map(|i| (2.0 * std::f64::consts::PI * i as f64 / n as f64).sin())
        .collect();
    let var = {
        let mean = ys.iter().sum::<f64>() / n as f64;
        ys.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>() / n as f64
    };

    let spec = CnnSpec {
        blocks: 2,
        layers_per_block: 2,
        channels: 8,
        filter_len: 3,
        filter_cap: 1.0,
        output_cap: 100.0,
        input_dim: ambient,
    };
    let mut model = CnnModel::new(spec, 3).unwrap();
    let cfg = TrainerConfig {
        epochs: 60,
        batch_size: 16,
        learning_rate: 0.03,
        momentum: 0.9,
        seed: 3,
        ..Default::default()
    };
    let report = train_erm(&mut model, &xs, &ys, None, &cfg).unwrap();
    assert!(
        report.best_loss < 0.05 * var,
        "fit too loose: MSE {} vs variance {var}",
        report.best_loss
    );
}

#[test]
fn restricted_training_keeps_outputs_inside_the_class() {
    let ambient = 8;
    let net = circle_manifold(48, ambient, 5, None).unwrap();
    let xs: Vec<f64> = (0..net.len()).flat_map(|i| net.point(i).to_vec()).collect();
    // Steep target: forces the raw net against the truncation level.
    let ys: Vec<f64> = (0..net.len())
        .map(|i| 3.0 * (2.0 * std::f64::consts::PI * i as f64 / 48.0).sin())
        .collect();
    let restriction = RestrictedClassSpec {
        sup_bound: 1.0,
        constant: 2.0,
        exponent: 1.0,
        proximity: 0.5,
        check_net: net,
    };
    let spec = CnnSpec {
        blocks: 1,
        layers_per_block: 2,
        channels: 8,
        filter_len: 3,
        filter_cap: 1.0,
        output_cap: 50.0,
        input_dim: ambient,
    };
    let mut model = CnnModel::new(spec, 2).unwrap();
    let cfg = TrainerConfig {
        epochs: 15,
        batch_size: 12,
        learning_rate: 0.02,
        lipschitz_weight: 0.1,
        lipschitz_pairs: 8,
        seed: 2,
        ..Default::default()
    };
    train_erm(&mut model, &xs, &ys, Some(&restriction), &cfg).unwrap();
    assert_eq!(model.clamp, Some(1.0), "training must install the truncation stage");
    let report = check_restriction(&model, &restriction).unwrap();
    assert!(report.sup_pass, "sup-norm {} exceeds the level", report.sup_norm);
    assert!(report.sup_norm <= 1.0, "truncation makes the sup bound exact");
    // The penalty is finite and consistent with the audit: if the estimate is
    // within the constant, the all-pairs penalty must vanish.
    let penalty = lipschitz_penalty(&model, &restriction).unwrap();
    if report.lipschitz_pass {
        assert_eq!(penalty, 0.0);
    }
    assert!(penalty.is_finite());
}

/// Throughput probe for budget planning; run explicitly with
/// `cargo test -p npmd-core --test cnn_checks -- --ignored --nocapture`.
#[test]
#[ignore]
fn bench_forward_backward_throughput() {
    let spec = architecture_from_budget(512, 32, 1, 1.0, &SizingConstants::default()).unwrap();
    println!(
        "spec: M={} L={} J={} I={} D={} ({} params)",
        spec.blocks,
        spec.layers_per_block,
        spec.channels,
        spec.filter_len,
        spec.input_dim,
        spec.n_parameters()
    );
    let model = CnnModel::new(spec, 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x: Vec<f64> = (0..32).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut trace = ForwardTrace::default();
    let mut grads = CnnGradients::zeros(&spec);

    let reps = 2000;
    let t0 = std::time::Instant::now();
    let mut sink = 0.0;
    for _ in 0..reps {
        model.forward_traced(&x, &mut trace).unwrap();
        sink += trace.output;
    }
    let fwd = t0.elapsed().as_secs_f64() / reps as f64;
    let t1 = std::time::Instant::now();
    for _ in 0..reps {
        model.forward_traced(&x, &mut trace).unwrap();
        model.backward_into(&trace, 1.0, &mut grads);
    }
    let fwd_bwd = t1.elapsed().as_secs_f64() / reps as f64;
    println!("forward: {:.1} µs  forward+backward: {:.1} µs  (sink {sink:.3})", fwd * 1e6, fwd_bwd * 1e6);
}

#[test]
fn equal_activation_patterns_imply_affine_segments() {
    let spec = architecture_from_budget(256, 12, 1, 1.0, &SizingConstants::default()).unwrap();
    let model = CnnModel::new(spec, 13).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut verified = 0;
    'outer: while verified < 5 {
        let x: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
        // A tiny perturbation usually stays in the same ReLU region; resample
        // whenever it does not.
        let x2: Vec<f64> = x.iter().map(|v| v + rng.random_range(-1e-4..1e-4)).collect();
        let p1 = model.activation_pattern(&x).unwrap();
        if model.activation_pattern(&x2).unwrap() != p1 {
            continue;
        }
        let f1 = model.forward(&x).unwrap();
        let f2 = model.forward(&x2).unwrap();
        for &t in &[0.25, 0.5, 0.75] {
            let mid: Vec<f64> =
                x.iter().zip(&x2).map(|(a, b)| (1.0 - t) * a + t * b).collect();
            if model.activation_pattern(&mid).unwrap() != p1 {
                continue 'outer;
            }
            let expected = (1.0 - t) * f1 + t * f2;
            let got = model.forward(&mid).unwrap();
            assert!(
                (got - expected).abs() <= 1e-9 * (1.0 + expected.abs()),
                "affine interpolation broke: {got} vs {expected}"
            );
        }
        verified += 1;
    }
}
