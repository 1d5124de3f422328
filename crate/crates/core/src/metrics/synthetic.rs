use crate::numerics::Tensor;
use crate::rng::{self, name_key};
use rand::Rng;

/// Deterministic stand-in data. Images (`[C, H, W]`) are a few smooth
/// Gaussian blobs per channel plus mild noise, clipped to `[0, 1]`; any other
/// shape is uniform on `[0, 1]`. Sample `i` depends only on `(seed, i)`.
pub fn synthetic_inputs(shape: &[usize], n: usize, seed: u64) -> Vec<Tensor> {
    (0..n).map(|i| synthetic_input(shape, seed, i as u64)).collect()
}

pub fn synthetic_input(shape: &[usize], seed: u64, index: u64) -> Tensor {
    let mut s = rng::stream(seed, &[name_key("synthetic-input"), index]);
    let len: usize = shape.iter().product();
    let [c, h, w] = *shape else {
        return Tensor::new(shape.to_vec(), rng::uniform_vec(&mut s, len)).expect("positive shape");
    };
    let mut data = vec![0.0; len];
    for ch in 0..c {
        let plane = &mut data[ch * h * w..(ch + 1) * h * w];
        let base: f64 = s.random_range(0.1..0.4);
        plane.iter_mut().for_each(|v| *v = base);
        for _ in 0..3 {
            let cy = s.random_range(0.0..h as f64);
            let cx = s.random_range(0.0..w as f64);
            let sig = s.random_range(0.1..0.3) * h.max(w) as f64;
            let amp: f64 = s.random_range(-0.4..0.6);
            for y in 0..h {
                for x in 0..w {
                    let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                    plane[y * w + x] += amp * (-d2 / (2.0 * sig * sig)).exp();
                }
            }
        }
        for v in plane.iter_mut() {
            *v = (*v + 0.05 * (s.random::<f64>() - 0.5)).clamp(0.0, 1.0);
        }
    }
    Tensor::new(shape.to_vec(), data).expect("positive shape")
}
