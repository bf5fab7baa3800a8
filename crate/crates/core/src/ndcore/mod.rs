//! Dense numeric substrate: row-major matrices, a small multilayer perceptron
//! with hand-written reverse mode, and a finite-difference gradient checker.

mod gradcheck;
mod matrix;
mod mlp;

pub use gradcheck::{central_difference, grad_check};
pub use matrix::Matrix;
pub use mlp::{mlp_backward, mlp_forward, Activation, GradBundle, Layer, LayerGrad, MlpCache, MlpParams};
