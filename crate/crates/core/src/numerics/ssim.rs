use super::Tensor;
use crate::error::{Error, Result};

const K1: f64 = 0.01;
const K2: f64 = 0.03;
const DYNAMIC_RANGE: f64 = 1.0;
const WINDOW: usize = 11;
const SIGMA: f64 = 1.5;

fn gaussian_window(side: usize) -> Vec<f64> {
    let c = (side as f64 - 1.0) / 2.0;
    let g: Vec<f64> = (0..side)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * SIGMA * SIGMA)).exp())
        .collect();
    let mut w: Vec<f64> = g.iter().flat_map(|a| g.iter().map(move |b| a * b)).collect();
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Mean structural similarity of two maps with values in [0, 1].
///
/// Gaussian window (sigma 1.5) evaluated at every fully contained position.
/// The window side is 11, or the largest odd size that fits a smaller map.
pub fn ssim(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.shape() != b.shape() || a.ndim() != 2 {
        return Err(Error::contract(format!(
            "ssim needs two equal 2-D maps, got {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (h, w) = (a.shape()[0], a.shape()[1]);
    let mut side = WINDOW.min(h).min(w);
    if side % 2 == 0 {
        side -= 1;
    }
    let win = gaussian_window(side);
    let c1 = (K1 * DYNAMIC_RANGE).powi(2);
    let c2 = (K2 * DYNAMIC_RANGE).powi(2);
    let (x, y) = (a.data(), b.data());
    let mut total = 0.0;
    let mut count = 0usize;
    for i in 0..=h - side {
        for j in 0..=w - side {
            let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for di in 0..side {
                for dj in 0..side {
                    let g = win[di * side + dj];
                    let p = (i + di) * w + j + dj;
                    let (u, v) = (x[p], y[p]);
                    mx += g * u;
                    my += g * v;
                    sxx += g * u * u;
                    syy += g * v * v;
                    sxy += g * u * v;
                }
            }
            let vx = sxx - mx * mx;
            let vy = syy - my * my;
            let cxy = sxy - mx * my;
            total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2))
                / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}
