//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use relconv::model::Padding;
use relconv::{Matrix, Network, Tensor};

pub fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

pub fn random_matrix(r: &mut ChaCha20Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::new(rows, cols, (0..rows * cols).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
}

pub fn random_tensor(r: &mut ChaCha20Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| r.random_range(lo..hi)).collect()).unwrap()
}

pub fn naive_matmul(a: &Matrix, b: &Matrix) -> Matrix {
    Matrix::from_fn(a.rows(), b.cols(), |i, j| (0..a.cols()).map(|k| a.get(i, k) * b.get(k, j)).sum())
}

/// Two largest singular values from the eigenvalues of MᵀM.
pub fn eigen_top2(m: &Matrix) -> (f64, f64) {
    let a = DMatrix::from_row_slice(m.rows(), m.cols(), m.data());
    let g = a.transpose() * &a;
    let mut ev: Vec<f64> = SymmetricEigen::new(g).eigenvalues.iter().map(|v| v.max(0.0).sqrt()).collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    (ev[0], ev.get(1).copied().unwrap_or(0.0))
}

/// Direct sliding-window convolution of a `[C, H, W]` input, no bias.
pub fn naive_conv(w: &Tensor, x: &Tensor, stride: usize, padding: Padding) -> Tensor {
    let (co, ci, kh, kw) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
    let (h, wd) = (x.shape()[1], x.shape()[2]);
    let (oh, ow, pt, pl) = match padding {
        Padding::Valid => ((h - kh) / stride + 1, (wd - kw) / stride + 1, 0isize, 0isize),
        Padding::Same => {
            let (oh, ow) = (h.div_ceil(stride), wd.div_ceil(stride));
            let ph = ((oh - 1) * stride + kh).saturating_sub(h);
            let pw = ((ow - 1) * stride + kw).saturating_sub(wd);
            (oh, ow, (ph / 2) as isize, (pw / 2) as isize)
        }
    };
    let mut out = vec![0.0; co * oh * ow];
    for o in 0..co {
        for y in 0..oh {
            for xx in 0..ow {
                let mut acc = 0.0;
                for c in 0..ci {
                    for dy in 0..kh {
                        for dx in 0..kw {
                            let iy = (y * stride + dy) as isize - pt;
                            let ix = (xx * stride + dx) as isize - pl;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                continue;
                            }
                            acc += w.data()[((o * ci + c) * kh + dy) * kw + dx]
                                * x.data()[(c * h + iy as usize) * wd + ix as usize];
                        }
                    }
                }
                out[(o * oh + y) * ow + xx] = acc;
            }
        }
    }
    Tensor::new(vec![co, oh, ow], out).unwrap()
}

/// Central finite difference of logit `k` along the given input coordinates.
pub fn fd_gradient(net: &Network, x: &Tensor, k: usize, coords: &[usize], h: f64) -> Vec<f64> {
    coords
        .iter()
        .map(|&i| {
            let mut p = x.clone();
            p.data_mut()[i] += h;
            let mut m = x.clone();
            m.data_mut()[i] -= h;
            (net.logits(&p).unwrap()[k] - net.logits(&m).unwrap()[k]) / (2.0 * h)
        })
        .collect()
}

/// Per-coordinate relative error with a floor tied to the gradient scale.
pub fn fd_relative_errors(fd: &[f64], g: &[f64], g_scale: f64) -> Vec<f64> {
    fd.iter()
        .zip(g)
        .map(|(&a, &b)| (a - b).abs() / a.abs().max(b.abs()).max(1e-6 * g_scale))
        .collect()
}

/// max |a − b| / max |b|.
pub fn rel_dev(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

/// `n` samples with exactly zero mean and identity population covariance.
pub fn whitened(n: usize, d: usize, seed: u64) -> Vec<Tensor> {
    let mut g = rng(seed);
    let raw: Vec<Vec<f64>> = (0..n).map(|_| random_tensor(&mut g, &[d], -1.0, 1.0).into_data()).collect();
    let mean: Vec<f64> = (0..d).map(|j| raw.iter().map(|x| x[j]).sum::<f64>() / n as f64).collect();
    let centred: Vec<Vec<f64>> = raw.iter().map(|x| x.iter().zip(&mean).map(|(a, b)| a - b).collect()).collect();
    let cov = nalgebra::DMatrix::from_fn(d, d, |a, b| centred.iter().map(|x| x[a] * x[b]).sum::<f64>() / n as f64);
    let chol = cov.cholesky().unwrap();
    let l_inv = chol.l().try_inverse().unwrap();
    centred
        .iter()
        .map(|x| {
            let y = &l_inv * nalgebra::DVector::from_column_slice(x);
            Tensor::new(vec![d], y.as_slice().to_vec()).unwrap()
        })
        .collect()
}
