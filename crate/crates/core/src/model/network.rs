use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::StandardNormal;

use super::conv::conv_as_matrix;
use super::ops::LinearOp;
use super::{LayerKind, LayerSpec};
use crate::error::{Error, Result};
use crate::numerics::{Matrix, Tensor};
use crate::rng;

/// A feed-forward ReLU network: layer descriptions, a named tensor store and
/// the expected input shape.
///
/// Batch normalisation is not a layer kind; imported models must fold it into
/// the preceding dense or convolutional layer before loading.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    input_shape: Vec<usize>,
    layers: Vec<LayerSpec>,
    params: BTreeMap<String, Tensor>,
    input_box: Option<[f64; 2]>,
}

pub(crate) fn weight_key(layer: &str) -> String {
    format!("{layer}.weight")
}

pub(crate) fn bias_key(layer: &str) -> String {
    format!("{layer}.bias")
}

/// Tensor-name suffixes that may accompany a layer's weight.
pub(crate) const PATTERN_SUFFIXES: [&str; 3] = ["pattern", "pattern_pos", "pattern_neg"];

fn visit<'a>(layers: &'a [LayerSpec], shape: &[usize], f: &mut dyn FnMut(&'a LayerSpec, &[usize])) -> Result<Vec<usize>> {
    let mut shape = shape.to_vec();
    for l in layers {
        f(l, &shape);
        if let LayerKind::Residual { body } = &l.kind {
            visit(body, &shape, f)?;
        }
        shape = l.output_shape(&shape)?;
    }
    Ok(shape)
}

impl Network {
    /// Builds and validates a network. Every dense/conv layer needs `.weight`
    /// and `.bias` tensors of the documented shapes; names must be unique.
    pub fn new(input_shape: Vec<usize>, layers: Vec<LayerSpec>, params: BTreeMap<String, Tensor>) -> Result<Self> {
        let net = Network {
            input_shape,
            layers,
            params,
            input_box: None,
        };
        net.validate()?;
        Ok(net)
    }

    fn validate(&self) -> Result<()> {
        if self.input_shape.is_empty() || self.input_shape.contains(&0) {
            return Err(Error::contract(format!("invalid input shape {:?}", self.input_shape)));
        }
        if self.layers.is_empty() {
            return Err(Error::contract("network has no layers"));
        }
        let mut names = std::collections::BTreeSet::new();
        let mut problem = None;
        visit(&self.layers, &self.input_shape, &mut |l, _| {
            if problem.is_some() {
                return;
            }
            if !names.insert(l.name.clone()) {
                problem = Some(Error::contract(format!("duplicate layer name `{}`", l.name)));
                return;
            }
            if let (Some(ws), Some(bs)) = (l.weight_shape(), l.bias_shape()) {
                for (key, shape) in [(weight_key(&l.name), ws.clone()), (bias_key(&l.name), bs)] {
                    match self.params.get(&key) {
                        None => {
                            problem = Some(Error::MissingTensor {
                                layer: l.name.clone(),
                                tensor: key,
                            })
                        }
                        Some(t) if t.shape() != shape.as_slice() => {
                            problem = Some(Error::ShapeMismatch {
                                layer: l.name.clone(),
                                expected: shape,
                                found: t.shape().to_vec(),
                            })
                        }
                        _ => {}
                    }
                }
                for suffix in PATTERN_SUFFIXES {
                    if let Some(t) = self.params.get(&format!("{}.{suffix}", l.name)) {
                        if t.shape() != ws.as_slice() {
                            problem = Some(Error::ShapeMismatch {
                                layer: l.name.clone(),
                                expected: ws.clone(),
                                found: t.shape().to_vec(),
                            });
                        }
                    }
                }
            }
        })?;
        if let Some(e) = problem {
            return Err(e);
        }
        if self.output_shape()?.len() != 1 {
            return Err(Error::contract("the last layer must produce a vector of logits"));
        }
        Ok(())
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn params(&self) -> &BTreeMap<String, Tensor> {
        &self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    /// Lower and upper bound of valid input values, if declared.
    pub fn input_box(&self) -> Option<[f64; 2]> {
        self.input_box
    }

    pub fn with_input_box(mut self, bounds: Option<[f64; 2]>) -> Result<Self> {
        if let Some([lo, hi]) = bounds {
            if !(lo < hi) {
                return Err(Error::contract(format!("input box [{lo}, {hi}] is empty")));
            }
        }
        self.input_box = bounds;
        Ok(self)
    }

    /// Inserts or replaces a tensor, revalidating the network.
    pub fn set_param(&mut self, name: impl Into<String>, t: Tensor) -> Result<()> {
        let name = name.into();
        let old = self.params.insert(name.clone(), t);
        if let Err(e) = self.validate() {
            match old {
                Some(o) => self.params.insert(name, o),
                None => self.params.remove(&name),
            };
            return Err(e);
        }
        Ok(())
    }

    pub fn output_shape(&self) -> Result<Vec<usize>> {
        visit(&self.layers, &self.input_shape, &mut |_, _| {})
    }

    pub fn num_logits(&self) -> usize {
        self.output_shape().map(|s| s[0]).unwrap_or(0)
    }

    /// Output shape of each top-level layer, in order.
    pub fn layer_shapes(&self) -> Vec<Vec<usize>> {
        let mut shape = self.input_shape.clone();
        self.layers
            .iter()
            .map(|l| {
                shape = l.output_shape(&shape).expect("validated network");
                shape.clone()
            })
            .collect()
    }

    /// Position of a top-level layer.
    pub fn layer_index(&self, name: &str) -> Result<usize> {
        self.layers
            .iter()
            .position(|l| l.name == name)
            .ok_or_else(|| Error::UnknownLayer(name.to_string()))
    }

    /// Every layer (nested ones included) with its input shape, in forward order.
    pub fn all_layers(&self) -> Vec<(&LayerSpec, Vec<usize>)> {
        let mut out = Vec::new();
        visit(&self.layers, &self.input_shape, &mut |l, s| out.push((l, s.to_vec()))).expect("validated network");
        out
    }

    /// Dense and convolutional layers in forward order.
    pub fn parameterized_layers(&self) -> Vec<&LayerSpec> {
        self.all_layers().into_iter().map(|(l, _)| l).filter(|l| l.has_params()).collect()
    }

    fn find(&self, name: &str) -> Result<(&LayerSpec, Vec<usize>)> {
        self.all_layers()
            .into_iter()
            .find(|(l, _)| l.name == name)
            .ok_or_else(|| Error::UnknownLayer(name.to_string()))
    }

    pub fn weight(&self, layer: &str) -> Result<&Tensor> {
        self.params.get(&weight_key(layer)).ok_or_else(|| Error::MissingTensor {
            layer: layer.to_string(),
            tensor: weight_key(layer),
        })
    }

    pub fn bias(&self, layer: &str) -> Result<&Tensor> {
        self.params.get(&bias_key(layer)).ok_or_else(|| Error::MissingTensor {
            layer: layer.to_string(),
            tensor: bias_key(layer),
        })
    }

    /// Linear map of a dense, conv or global-average layer at `input` shape.
    pub(crate) fn linear_op(&self, l: &LayerSpec, input: &[usize]) -> Option<LinearOp<'_>> {
        match l.kind {
            LayerKind::Dense { inputs, outputs } => Some(LinearOp::Dense {
                w: self.params[&weight_key(&l.name)].data(),
                rows: outputs,
                cols: inputs,
                bias: Some(self.params[&bias_key(&l.name)].data()),
            }),
            LayerKind::Conv2d { .. } => Some(LinearOp::Conv {
                w: self.params[&weight_key(&l.name)].data(),
                geom: l.conv_geometry(input).expect("validated network"),
                bias: Some(self.params[&bias_key(&l.name)].data()),
            }),
            LayerKind::GlobalAvgPool => Some(LinearOp::Gap {
                channels: input[0],
                area: input[1] * input[2],
            }),
            _ => None,
        }
    }

    /// Explicit matrix of a convolutional layer at its input shape in this
    /// network (bias excluded).
    pub fn conv_as_matrix(&self, layer: &str) -> Result<Matrix> {
        let (l, input) = self.find(layer)?;
        match l.kind {
            LayerKind::Conv2d { stride, padding, .. } => conv_as_matrix(self.weight(layer)?, stride, padding, &input),
            _ => Err(Error::contract(format!("layer `{layer}` is not a convolution"))),
        }
    }

    /// Cumulative top-down randomisation stages: the last parameterised layer,
    /// then the last two, and so on down to the first.
    pub fn cascading_schedule(&self) -> Vec<Vec<String>> {
        let names: Vec<String> = self.parameterized_layers().iter().rev().map(|l| l.name.clone()).collect();
        (1..=names.len()).map(|k| names[..k].to_vec()).collect()
    }

    /// Copy with the weights and biases of `layers` redrawn i.i.d. normal with
    /// each tensor's own standard deviation. Draws depend only on `seed` and
    /// the tensor name, so cumulative stages share their common layers.
    pub fn randomize_parameters(&self, layers: &[String], seed: u64) -> Result<Network> {
        let mut out = self.clone();
        for name in layers {
            let (l, _) = self.find(name)?;
            if !l.has_params() {
                return Err(Error::contract(format!("layer `{name}` has no parameters")));
            }
            for key in [weight_key(name), bias_key(name)] {
                let t = &self.params[&key];
                let n = t.len() as f64;
                let mean = t.sum() / n;
                let var = t.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                let sd = var.sqrt();
                let mut s = rng::stream(seed, &[rng::name_key("randomize"), rng::name_key(&key)]);
                let data = (0..t.len())
                    .map(|_| f64::from((sd * s.sample::<f64, _>(StandardNormal)) as f32))
                    .collect();
                out.params.insert(key, t.with_data(data));
            }
            // Fitted patterns describe the old weights.
            for suffix in PATTERN_SUFFIXES {
                out.params.remove(&format!("{name}.{suffix}"));
            }
        }
        Ok(out)
    }
}
