use serde::{Deserialize, Serialize};

use super::conv::ConvGeometry;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    /// Output size ceil(in / stride); excess padding goes to the bottom/right.
    Same,
    Valid,
}

/// Structural description of one layer. Parameters live in the network's
/// tensor store under `<name>.weight` and `<name>.bias`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: LayerKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerKind {
    /// Weight `[outputs, inputs]`, bias `[outputs]`, 1-D input.
    Dense { inputs: usize, outputs: usize },
    /// Weight `[out_channels, in_channels, kh, kw]`, bias `[out_channels]`,
    /// input `[C, H, W]`.
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: [usize; 2],
        stride: usize,
        padding: Padding,
    },
    Relu,
    /// Non-overlapping max pooling (stride equals the window).
    MaxPool2d { pool: [usize; 2] },
    Flatten,
    GlobalAvgPool,
    /// Output is `input + body(input)`.
    Residual { body: Vec<LayerSpec> },
}

impl LayerSpec {
    pub fn new(name: impl Into<String>, kind: LayerKind) -> Self {
        LayerSpec {
            name: name.into(),
            kind,
        }
    }

    pub fn has_params(&self) -> bool {
        matches!(self.kind, LayerKind::Dense { .. } | LayerKind::Conv2d { .. })
    }

    pub fn weight_shape(&self) -> Option<Vec<usize>> {
        match self.kind {
            LayerKind::Dense { inputs, outputs } => Some(vec![outputs, inputs]),
            LayerKind::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => Some(vec![out_channels, in_channels, kernel[0], kernel[1]]),
            _ => None,
        }
    }

    pub fn bias_shape(&self) -> Option<Vec<usize>> {
        match self.kind {
            LayerKind::Dense { outputs, .. } => Some(vec![outputs]),
            LayerKind::Conv2d { out_channels, .. } => Some(vec![out_channels]),
            _ => None,
        }
    }

    pub(crate) fn conv_geometry(&self, input: &[usize]) -> Result<ConvGeometry> {
        match self.kind {
            LayerKind::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                if input.len() != 3 || input[0] != in_channels {
                    return Err(self.mismatch(vec![in_channels, 0, 0], input));
                }
                ConvGeometry::new([input[0], input[1], input[2]], out_channels, kernel, stride, padding)
                    .map_err(|e| Error::contract(format!("layer `{}`: {e}", self.name)))
            }
            _ => Err(Error::contract(format!("layer `{}` is not a convolution", self.name))),
        }
    }

    fn mismatch(&self, expected: Vec<usize>, found: &[usize]) -> Error {
        Error::ShapeMismatch {
            layer: self.name.clone(),
            expected,
            found: found.to_vec(),
        }
    }

    /// Output shape for the given input shape, or a shape error.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match &self.kind {
            LayerKind::Dense { inputs, outputs } => {
                if input != [*inputs] {
                    return Err(self.mismatch(vec![*inputs], input));
                }
                Ok(vec![*outputs])
            }
            LayerKind::Conv2d { .. } => {
                let g = self.conv_geometry(input)?;
                Ok(vec![g.out_c, g.out_h, g.out_w])
            }
            LayerKind::Relu => Ok(input.to_vec()),
            LayerKind::MaxPool2d { pool } => {
                if input.len() != 3 || input[1] < pool[0] || input[2] < pool[1] || pool.contains(&0) {
                    return Err(self.mismatch(vec![0, pool[0], pool[1]], input));
                }
                Ok(vec![input[0], input[1] / pool[0], input[2] / pool[1]])
            }
            LayerKind::Flatten => Ok(vec![input.iter().product()]),
            LayerKind::GlobalAvgPool => {
                if input.len() != 3 {
                    return Err(self.mismatch(vec![0, 0, 0], input));
                }
                Ok(vec![input[0]])
            }
            LayerKind::Residual { body } => {
                let mut shape = input.to_vec();
                for l in body {
                    shape = l.output_shape(&shape)?;
                }
                if shape != input {
                    return Err(self.mismatch(input.to_vec(), &shape));
                }
                Ok(shape)
            }
        }
    }
}
