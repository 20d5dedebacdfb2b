//! Dense feed-forward networks with analytic backpropagation.
//!
//! Used both for base models and for the post-hoc uncertainty heads. Multi-head
//! outputs are a single final layer with one row per head value.

pub mod io;
pub mod mlp;
pub mod optim;
pub mod train;

pub use io::{load_weights, save_weights};
pub use mlp::{Activation, ForwardCache, Gradients, Layer, Mlp, MlpSpec, OutputActivation};
pub use optim::{OptimizerKind, OptimizerState};
pub use train::{fit, BatchGrad, TrainConfig};
