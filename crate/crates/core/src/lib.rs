//! Modified-backprop attribution rules for ReLU networks and the tools that
//! audit them: cosine-similarity convergence, parameter-randomisation and
//! random-logit sanity checks, and matrix-chain experiments.

pub mod attribution;
pub mod chainlab;
pub mod error;
pub mod io;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod rng;

pub use error::{Error, Result};
pub use model::{ActivationTrace, LayerKind, LayerSpec, Network, Padding, Preset};
pub use numerics::{Matrix, Tensor};
