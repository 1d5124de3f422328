//! Network description, forward pass, presets and bundle storage.

mod bundle;
mod conv;
mod forward;
mod layer;
mod network;
pub(crate) mod ops;
mod preset;

pub use bundle::{load_bundle, save_bundle, BUNDLE_VERSION};
pub use conv::conv_as_matrix;
pub use forward::{ActivationTrace, LayerActivation};
pub use layer::{LayerKind, LayerSpec, Padding};
pub use network::Network;
pub(crate) use network::{bias_key, weight_key};
pub use preset::Preset;
