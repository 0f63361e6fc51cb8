//! Dense linear algebra, reverse-mode differentiation and the adaptive-moment
//! optimizer that every model in the lab trains with.

mod adam;
pub mod checkpoint;
pub mod gradcheck;
mod mlp;
mod params;
mod tape;
mod tensor;

pub use adam::{AdamConfig, OptimizerState};
pub use mlp::{Activation, Init, Mlp, MlpSpec};
pub use params::{ParamId, ParamSet};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
