//! Linear maps with element-wise weight transforms. Attribution rules are
//! written once against this interface and run on dense, convolutional and
//! average-pooling layers alike.

use super::conv::ConvGeometry;
use crate::numerics::dot;

/// Element-wise replacement of the weights before applying the map.
#[derive(Clone, Copy, Debug)]
pub(crate) enum Transform<'a> {
    Plain,
    Positive,
    Negative,
    Square,
    /// Use these weights instead (same layout as the layer's weight).
    Swap(&'a [f64]),
    /// Multiply the weights entry-wise by these.
    Hadamard(&'a [f64]),
}

impl Transform<'_> {
    fn materialise(&self, w: &[f64]) -> Vec<f64> {
        match *self {
            Transform::Plain => w.to_vec(),
            Transform::Positive => w.iter().map(|v| v.max(0.0)).collect(),
            Transform::Negative => w.iter().map(|v| v.min(0.0)).collect(),
            Transform::Square => w.iter().map(|v| v * v).collect(),
            Transform::Swap(a) => a.to_vec(),
            Transform::Hadamard(a) => w.iter().zip(a).map(|(x, y)| x * y).collect(),
        }
    }

    fn scalar(&self, w: f64) -> f64 {
        match *self {
            Transform::Plain | Transform::Swap(_) | Transform::Hadamard(_) => w,
            Transform::Positive => w.max(0.0),
            Transform::Negative => w.min(0.0),
            Transform::Square => w * w,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) enum LinearOp<'a> {
    Dense {
        w: &'a [f64],
        rows: usize,
        cols: usize,
        bias: Option<&'a [f64]>,
    },
    Conv {
        w: &'a [f64],
        geom: ConvGeometry,
        bias: Option<&'a [f64]>,
    },
    /// Channel-wise mean over `area` positions.
    Gap { channels: usize, area: usize },
}

fn dot_mapped(a: &[f64], b: &[f64], f: impl Fn(f64) -> f64) -> f64 {
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| f(*x) * y).sum();
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += f(x[l]) * y[l];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn axpy_mapped(alpha: f64, x: &[f64], y: &mut [f64], f: impl Fn(f64) -> f64) {
    if alpha == 0.0 {
        return;
    }
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * f(*xi);
    }
}

impl LinearOp<'_> {
    pub fn in_len(&self) -> usize {
        match self {
            LinearOp::Dense { cols, .. } => *cols,
            LinearOp::Conv { geom, .. } => geom.in_c * geom.in_h * geom.in_w,
            LinearOp::Gap { channels, area } => channels * area,
        }
    }

    pub fn out_len(&self) -> usize {
        match self {
            LinearOp::Dense { rows, .. } => *rows,
            LinearOp::Conv { geom, .. } => geom.out_c * geom.positions(),
            LinearOp::Gap { channels, .. } => *channels,
        }
    }

    /// Bias expanded to one value per output element (zero if absent).
    pub fn bias_per_output(&self) -> Vec<f64> {
        match self {
            LinearOp::Dense { bias: Some(b), .. } => b.to_vec(),
            LinearOp::Conv { bias: Some(b), geom, .. } => {
                b.iter().flat_map(|&v| std::iter::repeat_n(v, geom.positions())).collect()
            }
            _ => vec![0.0; self.out_len()],
        }
    }

    /// `T(W) x`, without bias.
    pub fn forward(&self, t: Transform, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.in_len());
        match *self {
            LinearOp::Dense { w, rows, cols, .. } => {
                let row = |i: usize| &w[i * cols..(i + 1) * cols];
                match t {
                    Transform::Plain => (0..rows).map(|i| dot(row(i), x)).collect(),
                    Transform::Positive => (0..rows).map(|i| dot_mapped(row(i), x, |v| v.max(0.0))).collect(),
                    Transform::Negative => (0..rows).map(|i| dot_mapped(row(i), x, |v| v.min(0.0))).collect(),
                    Transform::Square => (0..rows).map(|i| dot_mapped(row(i), x, |v| v * v)).collect(),
                    Transform::Swap(_) | Transform::Hadamard(_) => {
                        let m = t.materialise(w);
                        (0..rows).map(|i| dot(&m[i * cols..(i + 1) * cols], x)).collect()
                    }
                }
            }
            LinearOp::Conv { w, geom, .. } => match t {
                Transform::Plain => geom.forward(w, x),
                _ => geom.forward(&t.materialise(w), x),
            },
            LinearOp::Gap { channels, area } => {
                let k = t.scalar(1.0 / area as f64);
                (0..channels).map(|c| k * x[c * area..(c + 1) * area].iter().sum::<f64>()).collect()
            }
        }
    }

    /// `T(W)ᵀ y`.
    pub fn transpose(&self, t: Transform, y: &[f64]) -> Vec<f64> {
        debug_assert_eq!(y.len(), self.out_len());
        match *self {
            LinearOp::Dense { w, rows, cols, .. } => {
                let mut out = vec![0.0; cols];
                match t {
                    Transform::Plain => (0..rows).for_each(|i| axpy_mapped(y[i], &w[i * cols..(i + 1) * cols], &mut out, |v| v)),
                    Transform::Positive => (0..rows).for_each(|i| axpy_mapped(y[i], &w[i * cols..(i + 1) * cols], &mut out, |v| v.max(0.0))),
                    Transform::Negative => (0..rows).for_each(|i| axpy_mapped(y[i], &w[i * cols..(i + 1) * cols], &mut out, |v| v.min(0.0))),
                    Transform::Square => (0..rows).for_each(|i| axpy_mapped(y[i], &w[i * cols..(i + 1) * cols], &mut out, |v| v * v)),
                    Transform::Swap(_) | Transform::Hadamard(_) => {
                        let m = t.materialise(w);
                        (0..rows).for_each(|i| axpy_mapped(y[i], &m[i * cols..(i + 1) * cols], &mut out, |v| v));
                    }
                }
                out
            }
            LinearOp::Conv { w, geom, .. } => match t {
                Transform::Plain => geom.transpose(w, y),
                _ => geom.transpose(&t.materialise(w), y),
            },
            LinearOp::Gap { channels, area } => {
                let k = t.scalar(1.0 / area as f64);
                (0..channels * area).map(|i| k * y[i / area]).collect()
            }
        }
    }
}
