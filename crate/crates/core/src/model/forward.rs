use super::{LayerKind, LayerSpec, Network};
use crate::error::{Error, Result};
use crate::model::ops::Transform;
use crate::numerics::Tensor;

/// Everything a backward pass needs from a forward pass: the output of each
/// layer, max-pool winners and nested traces for residual bodies. The input of
/// layer `i` is the output of layer `i - 1` (or the network input), so a ReLU's
/// pre-activation is simply its input.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationTrace {
    pub input: Tensor,
    pub layers: Vec<LayerActivation>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerActivation {
    pub name: String,
    pub output: Tensor,
    /// For max pooling: flat input index of the winner of each output.
    pub argmax: Option<Vec<usize>>,
    /// For residual blocks: trace of the body, whose output is the branch
    /// added to the skip connection.
    pub body: Option<ActivationTrace>,
}

impl ActivationTrace {
    pub fn layer_input(&self, i: usize) -> &Tensor {
        if i == 0 {
            &self.input
        } else {
            &self.layers[i - 1].output
        }
    }

    pub fn output(&self) -> &Tensor {
        self.layers.last().map_or(&self.input, |l| &l.output)
    }

    pub fn get(&self, name: &str) -> Option<&LayerActivation> {
        self.layers.iter().find(|l| l.name == name)
    }

    /// Active units of the ReLU at position `i` (pre-activation > 0).
    pub fn relu_mask(&self, i: usize) -> Vec<bool> {
        self.layer_input(i).data().iter().map(|&v| v > 0.0).collect()
    }
}

pub(crate) fn max_pool(x: &Tensor, pool: [usize; 2]) -> (Tensor, Vec<usize>) {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (oh, ow) = (h / pool[0], w / pool[1]);
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut arg = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = usize::MAX;
                for dy in 0..pool[0] {
                    for dx in 0..pool[1] {
                        let idx = (ch * h + oy * pool[0] + dy) * w + ox * pool[1] + dx;
                        if best == usize::MAX || x.data()[idx] > x.data()[best] {
                            best = idx;
                        }
                    }
                }
                out.push(x.data()[best]);
                arg.push(best);
            }
        }
    }
    (Tensor::from_parts(vec![c, oh, ow], out), arg)
}

pub(crate) fn run_layers(net: &Network, layers: &[LayerSpec], x: Tensor) -> Result<ActivationTrace> {
    let mut trace = ActivationTrace {
        input: x,
        layers: Vec::with_capacity(layers.len()),
    };
    for l in layers {
        let input = trace.output();
        let shape = l.output_shape(input.shape())?;
        let mut argmax = None;
        let mut body = None;
        let output = match &l.kind {
            LayerKind::Dense { .. } | LayerKind::Conv2d { .. } | LayerKind::GlobalAvgPool => {
                let op = net.linear_op(l, input.shape()).expect("linear layer");
                let mut z = op.forward(Transform::Plain, input.data());
                for (v, b) in z.iter_mut().zip(op.bias_per_output()) {
                    *v += b;
                }
                Tensor::from_parts(shape, z)
            }
            LayerKind::Relu => input.map(|v| v.max(0.0)),
            LayerKind::MaxPool2d { pool } => {
                let (y, a) = max_pool(input, *pool);
                argmax = Some(a);
                y
            }
            LayerKind::Flatten => Tensor::from_parts(shape, input.data().to_vec()),
            LayerKind::Residual { body: spec } => {
                let inner = run_layers(net, spec, input.clone())?;
                let out = input.zip_map(inner.output(), |a, b| a + b)?;
                body = Some(inner);
                out
            }
        };
        if !output.all_finite() {
            return Err(Error::numerical(format!("forward pass at layer `{}`", l.name), f64::NAN));
        }
        trace.layers.push(LayerActivation {
            name: l.name.clone(),
            output,
            argmax,
            body,
        });
    }
    Ok(trace)
}

impl Network {
    /// Full forward pass with every intermediate activation recorded.
    pub fn forward(&self, x: &Tensor) -> Result<ActivationTrace> {
        if x.shape() != self.input_shape() {
            return Err(Error::ShapeMismatch {
                layer: "input".into(),
                expected: self.input_shape().to_vec(),
                found: x.shape().to_vec(),
            });
        }
        if !x.all_finite() {
            return Err(Error::contract("input contains non-finite values"));
        }
        run_layers(self, self.layers(), x.clone())
    }

    pub fn logits(&self, x: &Tensor) -> Result<Vec<f64>> {
        Ok(self.forward(x)?.output().data().to_vec())
    }
}
