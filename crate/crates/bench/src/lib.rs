//! Shared fixtures for the criterion benchmarks.

use relconv::metrics::synthetic_inputs;
use relconv::{Network, Preset, Tensor};

pub fn cifar() -> Network {
    Preset::Cifar10.build(1).expect("preset builds")
}

pub fn tiny_residual() -> Network {
    Preset::TinyResidual.build(1).expect("preset builds")
}

pub fn inputs(net: &Network, n: usize) -> Vec<Tensor> {
    synthetic_inputs(net.input_shape(), n, 11)
}
