//! Input builders for the kernel benchmarks.

use mscale::Tensor;
use rand::Rng;

/// Tensor of uniform values in [-1, 1).
pub fn random_tensor<R: Rng>(rng: &mut R, dims: &[usize]) -> Tensor {
    let len = dims.iter().product();
    Tensor::from_vec(dims, (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()).expect("length matches dims")
}
