//! Fixtures shared by the benchmarks in `benches/`.

use datobs_core::corpus::{generate_synthetic, Augment, Dataset};
use datobs_core::numerics::{Prng, Tensor};

/// Uniform `[-1, 1)` tensor.
pub fn random_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = Prng::new(seed);
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.range_f64(-1.0, 1.0) as f32).collect())
        .expect("length matches shape")
}

/// A batch of `n` synthetic samples with labels.
pub fn synthetic_batch(n: usize) -> (Tensor, Vec<usize>) {
    let d: Dataset = generate_synthetic(n.div_ceil(33).max(1), 0, Augment::NONE);
    let picked: Vec<_> = d.samples.iter().step_by((d.len() / n).max(1)).take(n).collect();
    let parts: Vec<&Tensor> = picked.iter().map(|s| &s.tensor).collect();
    let labels = picked.iter().map(|s| s.class_index).collect();
    (Tensor::stack(&parts).expect("equal shapes"), labels)
}
