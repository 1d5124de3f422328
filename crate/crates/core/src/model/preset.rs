use std::collections::BTreeMap;

use super::{LayerKind, LayerSpec, Network, Padding};
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::rng;

/// Reference architectures with He-normal weights and zero biases. Weights
/// are rounded to `f32` so bundles round-trip bit-exactly.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Preset {
    /// Four 3x3 convolutions (32, 64, 128, 128 channels) with 2x2 max
    /// pooling after the second and fourth, then dense 1024 and 10, on a
    /// `[3, 32, 32]` input.
    Cifar10,
    /// Dense layers with ReLU between them; `sizes` lists input, hidden and
    /// output widths.
    Mlp(Vec<usize>),
    /// Conv, one residual block, max pooling and global average pooling on a
    /// `[3, 8, 8]` input, 4 logits.
    TinyResidual,
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cifar10" => Ok(Preset::Cifar10),
            "tiny_residual" => Ok(Preset::TinyResidual),
            _ => {
                let sizes = s
                    .strip_prefix("mlp:")
                    .ok_or_else(|| Error::Config(format!("unknown preset `{s}`")))?;
                let sizes: Vec<usize> = sizes
                    .split(',')
                    .map(|v| v.trim().parse())
                    .collect::<Result<_, _>>()
                    .map_err(|_| Error::Config(format!("bad layer sizes in `{s}`")))?;
                if sizes.len() < 2 || sizes.contains(&0) {
                    return Err(Error::Config("an mlp needs at least two positive sizes".into()));
                }
                Ok(Preset::Mlp(sizes))
            }
        }
    }
}

fn conv(name: &str, cin: usize, cout: usize) -> LayerSpec {
    LayerSpec::new(
        name,
        LayerKind::Conv2d {
            in_channels: cin,
            out_channels: cout,
            kernel: [3, 3],
            stride: 1,
            padding: Padding::Same,
        },
    )
}

fn dense(name: &str, inputs: usize, outputs: usize) -> LayerSpec {
    LayerSpec::new(name, LayerKind::Dense { inputs, outputs })
}

fn relu(name: &str) -> LayerSpec {
    LayerSpec::new(name, LayerKind::Relu)
}

fn pool(name: &str) -> LayerSpec {
    LayerSpec::new(name, LayerKind::MaxPool2d { pool: [2, 2] })
}

fn he_init(layers: &[LayerSpec], seed: u64, params: &mut BTreeMap<String, Tensor>) {
    for l in layers {
        if let LayerKind::Residual { body } = &l.kind {
            he_init(body, seed, params);
        }
        let (Some(ws), Some(bs)) = (l.weight_shape(), l.bias_shape()) else { continue };
        let fan_in: usize = ws[1..].iter().product();
        let sd = (2.0 / fan_in as f64).sqrt();
        let key = super::network::weight_key(&l.name);
        let mut s = rng::stream(seed, &[rng::name_key("init"), rng::name_key(&key)]);
        let w = rng::normal_vec(&mut s, ws.iter().product())
            .into_iter()
            .map(|v| f64::from((sd * v) as f32))
            .collect();
        params.insert(key, Tensor::from_parts(ws, w));
        params.insert(super::network::bias_key(&l.name), Tensor::zeros(&bs));
    }
}

impl Preset {
    pub fn build(&self, seed: u64) -> Result<Network> {
        let (input, layers) = match self {
            Preset::Cifar10 => (
                vec![3, 32, 32],
                vec![
                    conv("conv1", 3, 32),
                    relu("relu1"),
                    conv("conv2", 32, 64),
                    relu("relu2"),
                    pool("pool2"),
                    conv("conv3", 64, 128),
                    relu("relu3"),
                    conv("conv4", 128, 128),
                    relu("relu4"),
                    pool("pool4"),
                    LayerSpec::new("flatten", LayerKind::Flatten),
                    dense("fc5", 128 * 8 * 8, 1024),
                    relu("relu5"),
                    dense("fc6", 1024, 10),
                ],
            ),
            Preset::Mlp(sizes) => {
                let mut layers = Vec::new();
                for i in 0..sizes.len() - 1 {
                    if i > 0 {
                        layers.push(relu(&format!("relu{i}")));
                    }
                    layers.push(dense(&format!("fc{}", i + 1), sizes[i], sizes[i + 1]));
                }
                (vec![sizes[0]], layers)
            }
            Preset::TinyResidual => (
                vec![3, 8, 8],
                vec![
                    conv("conv1", 3, 8),
                    relu("relu1"),
                    LayerSpec::new(
                        "res1",
                        LayerKind::Residual {
                            body: vec![conv("res1_conv_a", 8, 8), relu("res1_relu"), conv("res1_conv_b", 8, 8)],
                        },
                    ),
                    relu("relu2"),
                    pool("pool2"),
                    LayerSpec::new("gap", LayerKind::GlobalAvgPool),
                    dense("fc3", 8, 4),
                ],
            ),
        };
        let mut params = BTreeMap::new();
        he_init(&layers, seed, &mut params);
        Network::new(input, layers, params)?.with_input_box(Some([0.0, 1.0]))
    }
}
