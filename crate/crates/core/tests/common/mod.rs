//! Helpers shared by the integration suites.
#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha20Rng;

use ddxnet_core::model::{DdxConfig, DilationMode, Head, Model};
use ddxnet_core::tensor::Tensor;

/// A random small but varied architecture; may fail validation (callers skip).
pub fn rand_config(rng: &mut ChaCha20Rng) -> DdxConfig {
    let stages = rng.gen_range(1..=3);
    DdxConfig {
        in_channels: rng.gen_range(1..=2),
        num_classes: rng.gen_range(2..=4),
        head: Head::MultiClass,
        stages,
        blocks_per_stage: rng.gen_range(1..=3),
        growth_rate: rng.gen_range(2..=4),
        kernel_size: rng.gen_range(2..=4),
        bottleneck_factor: rng.gen_range(1..=2),
        compression: [0.5, 0.75, 1.0][rng.gen_range(0..3)],
        stem_channels: rng.gen_range(2..=6),
        stem_kernel: rng.gen_range(1..=5),
        dilation_mode: if rng.gen::<bool>() {
            DilationMode::ExponentialPerStage
        } else {
            DilationMode::Fixed(rng.gen_range(1..=3))
        },
    }
}

pub fn rand_input(rng: &mut ChaCha20Rng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Replaces weights with strictly positive values so every path is active and
/// monotone; with normalization bypassed (fresh build: gamma 1, beta 0,
/// running mean 0 / var 1) the dependency span becomes exactly observable.
pub fn positivize(model: &mut Model<f64>) {
    for p in model.params_mut().iter_mut() {
        if p.name.ends_with(".w") {
            for v in p.value.data_mut() {
                *v = v.abs() + 0.5;
            }
        }
    }
}

/// Measures the dependency span of the last final-feature position on the
/// input by perturbing one input position at a time (batched probes).
///
/// Dilated taps leave gaps inside the span, so the span is defined by the
/// earliest affecting position.
pub fn measured_span(model: &Model<f64>, t: usize) -> usize {
    let c_in = model.config().in_channels;
    let base_x = Tensor::<f64>::full(&[1, c_in, t], 1.0).unwrap();
    let base = model.eval_trace(&base_x).unwrap().final_features;
    let (_, c_f, t_f) = base.dims3().unwrap();
    let last: Vec<u64> = (0..c_f).map(|ci| base.at3(0, ci, t_f - 1).to_bits()).collect();

    let mut earliest_affecting = None;
    let mut last_affects = false;
    let chunk = 32usize;
    let mut t_probe = 0;
    while t_probe < t {
        let n = chunk.min(t - t_probe);
        let mut batch = Tensor::<f64>::full(&[n, c_in, t], 1.0).unwrap();
        for i in 0..n {
            batch.row3_mut(i, 0)[t_probe + i] += 1000.0;
        }
        let trace = model.eval_trace(&batch).unwrap().final_features;
        for i in 0..n {
            let affected = (0..c_f).any(|ci| trace.at3(i, ci, t_f - 1).to_bits() != last[ci]);
            if affected && earliest_affecting.is_none() {
                earliest_affecting = Some(t_probe + i);
            }
            if t_probe + i == t - 1 {
                last_affects = affected;
            }
        }
        t_probe += n;
    }
    assert!(last_affects, "the last input position must affect the last output");
    let first = earliest_affecting.expect("no input position affects the last output");
    t - first
}

/// Aligned probe length for a given receptive field and stage count.
pub fn probe_len(rf: usize, stages: usize) -> usize {
    let align = 1usize << (stages - 1);
    (rf + 5).div_ceil(align) * align
}
