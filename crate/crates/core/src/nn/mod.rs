//! Dense reverse-mode autodiff and the small layer set the models use.

mod batch;
pub mod checkpoint;
mod mlp;
mod optim;
mod tape;
mod tensor;

pub use batch::minibatches;
pub use mlp::{backward, forward, Activation, Forward, Mlp, MlpSpec, MlpVars};
pub use optim::{Optimizer, OptimizerKind, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use tape::{sigmoid, softmax_in_place, Gradients, Tape, Var};
pub use tensor::Tensor;
