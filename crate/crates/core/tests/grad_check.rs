//! Central finite-difference verification of every kernel's VJP and of the
//! whole-model backward pass, in 64-bit.
#![allow(clippy::needless_range_loop, clippy::type_complexity)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use ddxnet_core::model::{DdxConfig, DilationMode, Head, Mode, Model};
use ddxnet_core::ops;
use ddxnet_core::tape::Tape;
use ddxnet_core::tensor::Tensor;

const H: f64 = 1e-5;
const PER_OP_TOL: f64 = 1e-5;
const WHOLE_MODEL_TOL: f64 = 1e-4;

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

fn rand_tensor(rng: &mut ChaCha20Rng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Random projection weights defining the scalar probe `sum(y . r)`.
fn projection(rng: &mut ChaCha20Rng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(0.5..1.5)).collect()).unwrap()
}

fn probe(y: &Tensor<f64>, r: &Tensor<f64>) -> f64 {
    y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

/// Checks analytic input gradients of `forward` against central differences
/// for every element of every input; returns the max relative error.
fn fd_check(
    inputs: &[Tensor<f64>],
    forward: &dyn Fn(&[Tensor<f64>]) -> Tensor<f64>,
    analytic: &dyn Fn(&[Tensor<f64>], &Tensor<f64>) -> Vec<Tensor<f64>>,
    rng: &mut ChaCha20Rng,
) -> f64 {
    let y0 = forward(inputs);
    let r = projection(rng, y0.shape());
    let grads = analytic(inputs, &r);
    assert_eq!(grads.len(), inputs.len());
    let mut worst = 0.0f64;
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (ti, grad) in grads.iter().enumerate() {
        assert_eq!(grad.shape(), inputs[ti].shape(), "gradient shape for input {ti}");
        for ei in 0..inputs[ti].numel() {
            let orig = work[ti].data()[ei];
            work[ti].data_mut()[ei] = orig + H;
            let up = probe(&forward(&work), &r);
            work[ti].data_mut()[ei] = orig - H;
            let down = probe(&forward(&work), &r);
            work[ti].data_mut()[ei] = orig;
            let numeric = (up - down) / (2.0 * H);
            worst = worst.max(rel_err(grad.data()[ei], numeric));
        }
    }
    worst
}

#[test]
fn conv1d_causal_gradients_match_finite_differences() {
    let shapes: [(usize, usize, usize, usize, usize, usize); 3] = [
        (2, 3, 11, 4, 3, 2),
        (1, 1, 8, 1, 1, 1),
        (3, 2, 16, 5, 2, 4),
    ];
    for seed in 0..5u64 {
        for &(n, cin, t, cout, k, d) in &shapes {
            let mut rng = ChaCha20Rng::seed_from_u64(seed * 100 + k as u64);
            let x = rand_tensor(&mut rng, &[n, cin, t]);
            let w = rand_tensor(&mut rng, &[cout, cin, k]);
            let b = rand_tensor(&mut rng, &[cout]);
            let worst = fd_check(
                &[x, w, b],
                &|ins| ops::conv1d_causal_forward(&ins[0], &ins[1], &ins[2], d).unwrap(),
                &|ins, r| {
                    let (gx, gw, gb) =
                        ops::conv1d_causal_vjp(&ins[0], &ins[1], &ins[2], d, r).unwrap();
                    vec![gx, gw, gb]
                },
                &mut rng,
            );
            assert!(worst < PER_OP_TOL, "conv seed {seed} shape {n}x{cin}x{t}: {worst:.3e}");
        }
    }
}

#[test]
fn batchnorm_train_gradients_match_finite_differences() {
    let shapes: [(usize, usize, usize); 3] = [(2, 3, 7), (4, 1, 5), (3, 2, 2)];
    for seed in 0..5u64 {
        for &(n, c, t) in &shapes {
            let mut rng = ChaCha20Rng::seed_from_u64(1000 + seed);
            let x = rand_tensor(&mut rng, &[n, c, t]);
            let gamma = rand_tensor(&mut rng, &[c]);
            let beta = rand_tensor(&mut rng, &[c]);
            let worst = fd_check(
                &[x, gamma, beta],
                &|ins| ops::batchnorm1d_train_forward(&ins[0], &ins[1], &ins[2]).unwrap().0,
                &|ins, r| {
                    let (_, stats) =
                        ops::batchnorm1d_train_forward(&ins[0], &ins[1], &ins[2]).unwrap();
                    let (gx, gg, gb) =
                        ops::batchnorm1d_train_vjp(&ins[0], &ins[1], &stats, r).unwrap();
                    vec![gx, gg, gb]
                },
                &mut rng,
            );
            assert!(worst < PER_OP_TOL, "bn-train seed {seed} shape {n}x{c}x{t}: {worst:.3e}");
        }
    }
}

#[test]
fn batchnorm_eval_gradients_match_finite_differences() {
    let shapes: [(usize, usize, usize); 3] = [(2, 3, 7), (1, 2, 9), (3, 1, 4)];
    for seed in 0..5u64 {
        for &(n, c, t) in &shapes {
            let mut rng = ChaCha20Rng::seed_from_u64(2000 + seed);
            let x = rand_tensor(&mut rng, &[n, c, t]);
            let gamma = rand_tensor(&mut rng, &[c]);
            let beta = rand_tensor(&mut rng, &[c]);
            let mean: Vec<f64> = (0..c).map(|_| rng.gen_range(-0.5..0.5)).collect();
            let var: Vec<f64> = (0..c).map(|_| rng.gen_range(0.2..2.0)).collect();
            let worst = fd_check(
                &[x, gamma, beta],
                &|ins| {
                    ops::batchnorm1d_eval_forward(&ins[0], &ins[1], &ins[2], &mean, &var).unwrap()
                },
                &|ins, r| {
                    let (gx, gg, gb) =
                        ops::batchnorm1d_eval_vjp(&ins[0], &ins[1], &mean, &var, r).unwrap();
                    vec![gx, gg, gb]
                },
                &mut rng,
            );
            assert!(worst < PER_OP_TOL, "bn-eval seed {seed} shape {n}x{c}x{t}: {worst:.3e}");
        }
    }
}

#[test]
fn relu_gradients_match_finite_differences() {
    let shapes: [&[usize]; 3] = [&[2, 3, 7], &[5, 4], &[9]];
    for seed in 0..5u64 {
        for shape in shapes {
            let mut rng = ChaCha20Rng::seed_from_u64(3000 + seed);
            let mut x = rand_tensor(&mut rng, shape);
            // Kink guard: keep inputs away from 0 by more than the step.
            for v in x.data_mut() {
                if v.abs() < 0.01 {
                    *v = 0.02_f64.copysign(if *v == 0.0 { 1.0 } else { *v });
                }
            }
            let worst = fd_check(
                &[x],
                &|ins| ops::relu_forward(&ins[0]),
                &|ins, r| vec![ops::relu_vjp(&ins[0], r).unwrap()],
                &mut rng,
            );
            assert!(worst < PER_OP_TOL, "relu seed {seed} shape {shape:?}: {worst:.3e}");
        }
    }
}

#[test]
fn concat_gradients_match_finite_differences() {
    let parts: [&[usize]; 3] = [&[2, 2, 5], &[2, 3, 5], &[2, 1, 5]];
    for seed in 0..5u64 {
        let mut rng = ChaCha20Rng::seed_from_u64(4000 + seed);
        let inputs: Vec<Tensor<f64>> = parts.iter().map(|s| rand_tensor(&mut rng, s)).collect();
        let worst = fd_check(
            &inputs,
            &|ins| {
                let refs: Vec<&Tensor<f64>> = ins.iter().collect();
                ops::concat_channels_forward(&refs).unwrap()
            },
            &|ins, r| {
                let splits: Vec<usize> = ins.iter().map(|t| t.shape()[1]).collect();
                ops::concat_channels_vjp(r, &splits).unwrap()
            },
            &mut rng,
        );
        assert!(worst < PER_OP_TOL, "concat seed {seed}: {worst:.3e}");
    }
}

#[test]
fn pooling_gradients_match_finite_differences() {
    let cases: [(usize, usize, usize, usize, usize); 3] =
        [(2, 3, 8, 2, 2), (1, 2, 9, 3, 1), (3, 1, 6, 2, 1)];
    for seed in 0..5u64 {
        for &(n, c, t, window, stride) in &cases {
            let mut rng = ChaCha20Rng::seed_from_u64(5000 + seed);
            let x = rand_tensor(&mut rng, &[n, c, t]);
            let worst = fd_check(
                &[x],
                &|ins| ops::avg_pool1d_forward(&ins[0], window, stride).unwrap(),
                &|_, r| vec![ops::avg_pool1d_vjp(r, t, window, stride).unwrap()],
                &mut rng,
            );
            assert!(worst < PER_OP_TOL, "avg_pool seed {seed} w{window}s{stride}: {worst:.3e}");

            let mut rng = ChaCha20Rng::seed_from_u64(5500 + seed);
            let x = rand_tensor(&mut rng, &[n, c, t]);
            let worst = fd_check(
                &[x],
                &|ins| ops::global_avg_pool_forward(&ins[0]).unwrap(),
                &|_, r| vec![ops::global_avg_pool_vjp(r, t).unwrap()],
                &mut rng,
            );
            assert!(worst < PER_OP_TOL, "global_pool seed {seed}: {worst:.3e}");
        }
    }
}

#[test]
fn linear_gradients_match_finite_differences() {
    let cases: [(usize, usize, usize); 3] = [(2, 3, 4), (1, 5, 2), (4, 1, 3)];
    for seed in 0..5u64 {
        for &(n, f, o) in &cases {
            let mut rng = ChaCha20Rng::seed_from_u64(6000 + seed);
            let x = rand_tensor(&mut rng, &[n, f]);
            let w = rand_tensor(&mut rng, &[o, f]);
            let b = rand_tensor(&mut rng, &[o]);
            let worst = fd_check(
                &[x, w, b],
                &|ins| ops::linear_forward(&ins[0], &ins[1], &ins[2]).unwrap(),
                &|ins, r| {
                    let (gx, gw, gb) = ops::linear_vjp(&ins[0], &ins[1], &ins[2], r).unwrap();
                    vec![gx, gw, gb]
                },
                &mut rng,
            );
            assert!(worst < PER_OP_TOL, "linear seed {seed} {n}x{f}->{o}: {worst:.3e}");
        }
    }
}

#[test]
fn loss_gradients_match_finite_differences() {
    let cases: [(usize, usize); 3] = [(3, 5), (1, 2), (4, 3)];
    for seed in 0..5u64 {
        for &(n, k) in &cases {
            let mut rng = ChaCha20Rng::seed_from_u64(7000 + seed);
            let logits = rand_tensor(&mut rng, &[n, k]);
            let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
            let weights: Vec<f64> = (0..k).map(|_| rng.gen_range(0.5..2.0)).collect();
            for cw in [None, Some(weights.as_slice())] {
                let (_, dlogits) = ops::softmax_cross_entropy(&logits, &labels, cw).unwrap();
                let mut worst = 0.0f64;
                let mut work = logits.clone();
                for ei in 0..logits.numel() {
                    let orig = work.data()[ei];
                    work.data_mut()[ei] = orig + H;
                    let (up, _) = ops::softmax_cross_entropy(&work, &labels, cw).unwrap();
                    work.data_mut()[ei] = orig - H;
                    let (down, _) = ops::softmax_cross_entropy(&work, &labels, cw).unwrap();
                    work.data_mut()[ei] = orig;
                    worst = worst.max(rel_err(dlogits.data()[ei], (up - down) / (2.0 * H)));
                }
                assert!(worst < PER_OP_TOL, "softmax_ce seed {seed} {n}x{k}: {worst:.3e}");
            }

            let logits = rand_tensor(&mut rng, &[n, k]);
            let targets = Tensor::from_vec(
                &[n, k],
                (0..n * k).map(|_| if rng.gen::<bool>() { 1.0 } else { 0.0 }).collect(),
            )
            .unwrap();
            let (_, dlogits) = ops::sigmoid_bce(&logits, &targets).unwrap();
            let mut worst = 0.0f64;
            let mut work = logits.clone();
            for ei in 0..logits.numel() {
                let orig = work.data()[ei];
                work.data_mut()[ei] = orig + H;
                let (up, _) = ops::sigmoid_bce(&work, &targets).unwrap();
                work.data_mut()[ei] = orig - H;
                let (down, _) = ops::sigmoid_bce(&work, &targets).unwrap();
                work.data_mut()[ei] = orig;
                worst = worst.max(rel_err(dlogits.data()[ei], (up - down) / (2.0 * H)));
            }
            assert!(worst < PER_OP_TOL, "sigmoid_bce seed {seed} {n}x{k}: {worst:.3e}");
        }
    }
}

/// The tiny full-model configuration used by the whole-model check.
fn tiny_config() -> DdxConfig {
    DdxConfig {
        in_channels: 2,
        num_classes: 3,
        head: Head::MultiClass,
        stages: 1,
        blocks_per_stage: 2,
        growth_rate: 4,
        kernel_size: 3,
        bottleneck_factor: 4,
        compression: 1.0,
        stem_channels: 6,
        stem_kernel: 3,
        dilation_mode: DilationMode::ExponentialPerStage,
    }
}

/// Whole-model gradient check through stem, blocks, normalization, pooling,
/// head, and softmax cross entropy, against central finite differences.
#[test]
fn whole_model_gradients_match_finite_differences() {
    let config = tiny_config();
    for seed in 0..5u64 {
        let mut model = Model::<f64>::build(&config, seed).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(9000 + seed);
        let x = rand_tensor(&mut rng, &[3, 2, 32]);
        let labels: Vec<usize> = (0..3).map(|_| rng.gen_range(0..3)).collect();

        let loss_of = |model: &mut Model<f64>| -> f64 {
            let mut tape = Tape::new();
            let logits = model.forward(&x, Mode::Train, &mut tape).unwrap();
            let loss = tape.softmax_cross_entropy(logits, &labels, None).unwrap();
            tape.value(loss).data()[0]
        };

        model.params_mut().zero_grads();
        let mut tape = Tape::new();
        let logits = model.forward(&x, Mode::Train, &mut tape).unwrap();
        let loss_node = tape.softmax_cross_entropy(logits, &labels, None).unwrap();
        tape.backward(loss_node, model.params_mut()).unwrap();
        let analytic: Vec<(String, Vec<f64>)> = model
            .params()
            .iter()
            .map(|p| (p.name.clone(), p.grad.data().to_vec()))
            .collect();

        let mut worst = 0.0f64;
        let mut kink_events = 0usize;
        let param_count = model.params().len();
        for pi in 0..param_count {
            for ei in 0..model.params().get(ddxnet_core::param::ParamId(pi)).value.numel() {
                let id = ddxnet_core::param::ParamId(pi);
                let orig = model.params().get(id).value.data()[ei];
                model.params_mut().get_mut(id).value.data_mut()[ei] = orig + H;
                let up = loss_of(&mut model);
                model.params_mut().get_mut(id).value.data_mut()[ei] = orig - H;
                let down = loss_of(&mut model);
                model.params_mut().get_mut(id).value.data_mut()[ei] = orig;
                let numeric = (up - down) / (2.0 * H);
                let err = rel_err(analytic[pi].1[ei], numeric);
                if err >= WHOLE_MODEL_TOL {
                    // A central difference whose step straddles a ReLU kink is
                    // not an estimate of the (sub)gradient. Such elements must
                    // show an inconsistent difference quotient across step
                    // sizes AND agree with the analytic value at the smaller
                    // step; anything else is a genuine mismatch.
                    let h2 = H / 16.0;
                    let id = ddxnet_core::param::ParamId(pi);
                    model.params_mut().get_mut(id).value.data_mut()[ei] = orig + h2;
                    let up2 = loss_of(&mut model);
                    model.params_mut().get_mut(id).value.data_mut()[ei] = orig - h2;
                    let down2 = loss_of(&mut model);
                    model.params_mut().get_mut(id).value.data_mut()[ei] = orig;
                    let numeric2 = (up2 - down2) / (2.0 * h2);
                    let is_kink = rel_err(numeric, numeric2) > 1e-3;
                    let fine_err = rel_err(analytic[pi].1[ei], numeric2);
                    assert!(
                        is_kink && fine_err < WHOLE_MODEL_TOL,
                        "seed {seed} param {} [{ei}]: analytic {} vs fd(h) {} / fd(h/16) {}",
                        analytic[pi].0,
                        analytic[pi].1[ei],
                        numeric,
                        numeric2
                    );
                    kink_events += 1;
                    continue;
                }
                worst = worst.max(err);
            }
        }
        assert!(worst < WHOLE_MODEL_TOL, "seed {seed}: worst {worst:.3e}");
        assert!(
            kink_events <= 4,
            "seed {seed}: {kink_events} kink crossings; expected a handful at most"
        );
    }
}
