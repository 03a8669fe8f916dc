//! Glorot/Xavier uniform initialization.

use rand::Rng;

use super::{Scalar, Tensor};

/// `(fan_in, fan_out)` for a weight shape.
///
/// Rank 2 `[D, K]` (dense and LSTM kernels) gives `(D, K)`. Rank 4
/// convolution kernels `[kh, kw, Cin, Cout]` give
/// `(kh*kw*Cin, kh*kw*Cout)`. Rank 1 uses its length for both.
pub fn fans(shape: &[usize]) -> (usize, usize) {
    match shape {
        [n] => (*n, *n),
        [d, k] => (*d, *k),
        [rest @ .., cin, cout] => {
            let field: usize = rest.iter().product();
            (field * cin, field * cout)
        }
        [] => (1, 1),
    }
}

pub fn xavier_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Uniform samples in `±sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_init<S: Scalar, R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Tensor<S> {
    let (fan_in, fan_out) = fans(shape);
    let bound = xavier_bound(fan_in, fan_out);
    let n = shape.iter().product();
    let data = (0..n).map(|_| S::lit(rng.random_range(-bound..=bound))).collect();
    Tensor::from_parts(shape.to_vec(), data)
}
