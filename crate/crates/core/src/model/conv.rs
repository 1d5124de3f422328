//! Convolution through im2col and GEMM, plus the explicit matrix form.

use super::Padding;
use crate::error::{Error, Result};
use crate::numerics::{gemm, gemm_tn, Matrix, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeometry {
    pub in_c: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_c: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad_top: usize,
    pub pad_left: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    pub fn new(input: [usize; 3], out_c: usize, kernel: [usize; 2], stride: usize, padding: Padding) -> Result<Self> {
        let [in_c, in_h, in_w] = input;
        let [kh, kw] = kernel;
        if stride == 0 || kh == 0 || kw == 0 || out_c == 0 {
            return Err(Error::contract("kernel, stride and channels must be positive"));
        }
        let (out_h, out_w, pad_top, pad_left) = match padding {
            Padding::Same => {
                let oh = in_h.div_ceil(stride);
                let ow = in_w.div_ceil(stride);
                let ph = ((oh - 1) * stride + kh).saturating_sub(in_h);
                let pw = ((ow - 1) * stride + kw).saturating_sub(in_w);
                (oh, ow, ph / 2, pw / 2)
            }
            Padding::Valid => {
                if in_h < kh || in_w < kw {
                    return Err(Error::contract(format!(
                        "{in_h}x{in_w} input is smaller than the {kh}x{kw} kernel"
                    )));
                }
                ((in_h - kh) / stride + 1, (in_w - kw) / stride + 1, 0, 0)
            }
        };
        Ok(ConvGeometry {
            in_c,
            in_h,
            in_w,
            out_c,
            kh,
            kw,
            stride,
            pad_top,
            pad_left,
            out_h,
            out_w,
        })
    }

    pub fn patch_len(&self) -> usize {
        self.in_c * self.kh * self.kw
    }

    pub fn positions(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Input coordinate hit by output row `o` and kernel row `k`, if inside.
    fn src(&self, o: usize, k: usize, pad: usize, limit: usize) -> Option<usize> {
        (o * self.stride + k).checked_sub(pad).filter(|&i| i < limit)
    }

    /// Patches as a `[patch_len, positions]` row-major buffer.
    pub fn im2col(&self, x: &[f64]) -> Vec<f64> {
        let p = self.positions();
        let mut cols = vec![0.0; self.patch_len() * p];
        for c in 0..self.in_c {
            let plane = &x[c * self.in_h * self.in_w..(c + 1) * self.in_h * self.in_w];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = ((c * self.kh + ky) * self.kw + kx) * p;
                    for oy in 0..self.out_h {
                        let Some(iy) = self.src(oy, ky, self.pad_top, self.in_h) else { continue };
                        for ox in 0..self.out_w {
                            if let Some(ix) = self.src(ox, kx, self.pad_left, self.in_w) {
                                cols[row + oy * self.out_w + ox] = plane[iy * self.in_w + ix];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    /// Adjoint of `im2col`: scatters patch values back onto the input grid.
    pub fn col2im(&self, cols: &[f64]) -> Vec<f64> {
        let p = self.positions();
        let mut x = vec![0.0; self.in_c * self.in_h * self.in_w];
        for c in 0..self.in_c {
            let plane = &mut x[c * self.in_h * self.in_w..(c + 1) * self.in_h * self.in_w];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = ((c * self.kh + ky) * self.kw + kx) * p;
                    for oy in 0..self.out_h {
                        let Some(iy) = self.src(oy, ky, self.pad_top, self.in_h) else { continue };
                        for ox in 0..self.out_w {
                            if let Some(ix) = self.src(ox, kx, self.pad_left, self.in_w) {
                                plane[iy * self.in_w + ix] += cols[row + oy * self.out_w + ox];
                            }
                        }
                    }
                }
            }
        }
        x
    }

    /// `W * x` without bias; `w` is `[out_c, patch_len]` row-major.
    pub fn forward(&self, w: &[f64], x: &[f64]) -> Vec<f64> {
        let cols = self.im2col(x);
        self.forward_cols(w, &cols)
    }

    pub fn forward_cols(&self, w: &[f64], cols: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.out_c * self.positions()];
        gemm(self.out_c, self.patch_len(), self.positions(), w, cols, &mut y, false);
        y
    }

    /// `Wᵀ * y`, the adjoint of `forward`.
    pub fn transpose(&self, w: &[f64], y: &[f64]) -> Vec<f64> {
        let mut cols = vec![0.0; self.patch_len() * self.positions()];
        gemm_tn(self.patch_len(), self.out_c, self.positions(), w, y, &mut cols, false);
        self.col2im(&cols)
    }

    pub fn as_matrix(&self, w: &[f64]) -> Matrix {
        let in_len = self.in_c * self.in_h * self.in_w;
        let mut m = Matrix::zeros(self.out_c * self.positions(), in_len);
        for o in 0..self.out_c {
            for c in 0..self.in_c {
                for ky in 0..self.kh {
                    for kx in 0..self.kw {
                        let wv = w[((o * self.in_c + c) * self.kh + ky) * self.kw + kx];
                        for oy in 0..self.out_h {
                            let Some(iy) = self.src(oy, ky, self.pad_top, self.in_h) else { continue };
                            for ox in 0..self.out_w {
                                if let Some(ix) = self.src(ox, kx, self.pad_left, self.in_w) {
                                    let r = (o * self.out_h + oy) * self.out_w + ox;
                                    let col = (c * self.in_h + iy) * self.in_w + ix;
                                    m.set(r, col, m.get(r, col) + wv);
                                }
                            }
                        }
                    }
                }
            }
        }
        m
    }
}

/// Dense matrix of a bias-free convolution acting on a channel-first input
/// flattened row-major. Multiplying it by the flattened input reproduces the
/// convolution's pre-bias output, also flattened channel-first.
pub fn conv_as_matrix(weight: &Tensor, stride: usize, padding: Padding, input_shape: &[usize]) -> Result<Matrix> {
    let s = weight.shape();
    if s.len() != 4 || input_shape.len() != 3 || input_shape[0] != s[1] {
        return Err(Error::contract(format!(
            "conv weight {s:?} does not fit input {input_shape:?}"
        )));
    }
    let g = ConvGeometry::new(
        [input_shape[0], input_shape[1], input_shape[2]],
        s[0],
        [s[2], s[3]],
        stride,
        padding,
    )?;
    Ok(g.as_matrix(weight.data()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_padding_sizes() {
        let g = ConvGeometry::new([1, 5, 5], 1, [3, 3], 2, Padding::Same).unwrap();
        assert_eq!((g.out_h, g.out_w, g.pad_top, g.pad_left), (3, 3, 1, 1));
        let g = ConvGeometry::new([1, 4, 4], 1, [2, 2], 1, Padding::Same).unwrap();
        assert_eq!((g.out_h, g.pad_top), (4, 0));
        assert!(ConvGeometry::new([1, 2, 2], 1, [3, 3], 1, Padding::Valid).is_err());
    }

    #[test]
    fn transpose_is_adjoint() {
        let g = ConvGeometry::new([2, 5, 4], 3, [3, 2], 2, Padding::Same).unwrap();
        let w: Vec<f64> = (0..3 * g.patch_len()).map(|i| (i as f64 * 0.37).sin()).collect();
        let x: Vec<f64> = (0..2 * 5 * 4).map(|i| (i as f64 * 0.11).cos()).collect();
        let y: Vec<f64> = (0..3 * g.positions()).map(|i| (i as f64 * 0.23).sin()).collect();
        let lhs: f64 = g.forward(&w, &x).iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = g.transpose(&w, &y).iter().zip(&x).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
