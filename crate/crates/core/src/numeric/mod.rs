//! Minimal dense tensor engine with reverse-mode differentiation.

mod adam;
pub mod io;
pub mod kernels;
mod params;
mod tape;
mod tensor;

pub use adam::Adam;
pub use params::{Bound, ParamStore};
pub use tape::{Gradients, Reduction, Tape, Var, LOG_FLOOR};
pub use tensor::Tensor;

pub(crate) use tensor::argmax;

use rand::Rng;

/// Kaiming-uniform initialisation: `U(-b, b)` with `b = sqrt(6 / fan_in)`.
pub fn kaiming_uniform(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor {
    let bound = (6.0 / fan_in as f64).sqrt() as f32;
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::new(shape, data).expect("shape matches data")
}
