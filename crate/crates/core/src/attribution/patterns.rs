//! Signal-direction patterns for PatternNet and PatternAttribution.

use crate::error::{Error, Result};
use crate::model::{bias_key, weight_key, ActivationTrace, LayerKind, LayerSpec, Network};
use crate::numerics::{gemm, gemm_nt, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PatternEstimator {
    /// `a = cov[h, y] / wᵀcov[h, y]` over all samples.
    Linear,
    /// Separate patterns for samples where the neuron is active (`a⁺`, the
    /// one used for propagation) and inactive (`a⁻`).
    TwoComponent,
}

/// Dense layers are accumulated in batches of this many samples.
const DENSE_BATCH: usize = 64;
/// A neuron is degenerate when its output variance is at most this fraction
/// of its mean square output.
const DEGENERATE_REL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct LayerPatterns {
    pub layer: String,
    /// Same shape as the layer weight.
    pub pattern: Tensor,
    pub pattern_pos: Option<Tensor>,
    pub pattern_neg: Option<Tensor>,
    /// Per output neuron: the primary pattern fell back to `w/‖w‖²`.
    pub degenerate: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PatternSet {
    pub estimator: PatternEstimator,
    pub layers: Vec<LayerPatterns>,
}

impl PatternSet {
    /// Copy of `net` with the patterns stored as `<layer>.pattern` (and the
    /// two components, when fitted).
    pub fn attach(&self, net: &Network) -> Result<Network> {
        let mut out = net.clone();
        for l in &self.layers {
            out.set_param(format!("{}.pattern", l.layer), l.pattern.clone())?;
            if let Some(p) = &l.pattern_pos {
                out.set_param(format!("{}.pattern_pos", l.layer), p.clone())?;
            }
            if let Some(n) = &l.pattern_neg {
                out.set_param(format!("{}.pattern_neg", l.layer), n.clone())?;
            }
        }
        Ok(out)
    }

    pub fn degenerate_count(&self) -> usize {
        self.layers.iter().map(|l| l.degenerate.iter().filter(|&&d| d).count()).sum()
    }

    pub fn get(&self, layer: &str) -> Option<&LayerPatterns> {
        self.layers.iter().find(|l| l.layer == layer)
    }
}

/// Running sums for one layer. Samples are columns of a `[d, cols]` block.
struct Acc {
    d: usize,
    n: usize,
    count: f64,
    s_h: Vec<f64>,
    s_y: Vec<f64>,
    s_yy: Vec<f64>,
    s_hy: Vec<f64>,
    pos: Option<PosAcc>,
    pending: Vec<Vec<f64>>,
}

/// Sums restricted, per neuron, to samples with positive pre-activation.
struct PosAcc {
    count: Vec<f64>,
    s_h: Vec<f64>,
    s_y: Vec<f64>,
    s_yy: Vec<f64>,
    s_hy: Vec<f64>,
}

impl Acc {
    fn new(d: usize, n: usize, two: bool) -> Self {
        Acc {
            d,
            n,
            count: 0.0,
            s_h: vec![0.0; d],
            s_y: vec![0.0; n],
            s_yy: vec![0.0; n],
            s_hy: vec![0.0; d * n],
            pos: two.then(|| PosAcc {
                count: vec![0.0; n],
                s_h: vec![0.0; d * n],
                s_y: vec![0.0; n],
                s_yy: vec![0.0; n],
                s_hy: vec![0.0; d * n],
            }),
            pending: Vec::new(),
        }
    }

    /// Adds a `[d, p]` block of samples.
    fn add_block(&mut self, w: &[f64], bias: &[f64], h: &[f64], p: usize) {
        let (d, n) = (self.d, self.n);
        let mut y = vec![0.0; n * p];
        gemm(n, d, p, w, h, &mut y, false);
        self.count += p as f64;
        for j in 0..d {
            self.s_h[j] += h[j * p..(j + 1) * p].iter().sum::<f64>();
        }
        for i in 0..n {
            let row = &y[i * p..(i + 1) * p];
            self.s_y[i] += row.iter().sum::<f64>();
            self.s_yy[i] += row.iter().map(|v| v * v).sum::<f64>();
        }
        gemm_nt(d, p, n, h, &y, &mut self.s_hy, true);
        if let Some(pa) = &mut self.pos {
            let mut mask = vec![0.0; n * p];
            let mut ym = vec![0.0; n * p];
            for i in 0..n {
                for s in 0..p {
                    let v = y[i * p + s];
                    if v + bias[i] > 0.0 {
                        mask[i * p + s] = 1.0;
                        ym[i * p + s] = v;
                        pa.count[i] += 1.0;
                        pa.s_y[i] += v;
                        pa.s_yy[i] += v * v;
                    }
                }
            }
            gemm_nt(d, p, n, h, &mask, &mut pa.s_h, true);
            gemm_nt(d, p, n, h, &ym, &mut pa.s_hy, true);
        }
    }

    fn flush(&mut self, w: &[f64], bias: &[f64]) {
        if self.pending.is_empty() {
            return;
        }
        let p = self.pending.len();
        let mut h = vec![0.0; self.d * p];
        for (s, col) in self.pending.iter().enumerate() {
            for j in 0..self.d {
                h[j * p + s] = col[j];
            }
        }
        self.pending.clear();
        self.add_block(w, bias, &h, p);
    }
}

/// Pattern of every neuron from first and second moments; `s_h` is either
/// shared (length d) or per neuron (`[d, n]`).
#[allow(clippy::too_many_arguments)]
fn solve(
    w: &[f64],
    d: usize,
    n: usize,
    count: &dyn Fn(usize) -> f64,
    s_h: &dyn Fn(usize, usize) -> f64,
    s_y: &[f64],
    s_yy: &[f64],
    s_hy: &[f64],
) -> (Vec<f64>, Vec<bool>) {
    let mut a = vec![0.0; n * d];
    let mut degenerate = vec![false; n];
    for i in 0..n {
        let wi = &w[i * d..(i + 1) * d];
        let c = count(i);
        let out = &mut a[i * d..(i + 1) * d];
        let mut ok = c >= 2.0;
        if ok {
            let ey = s_y[i] / c;
            for j in 0..d {
                out[j] = s_hy[j * n + i] / c - s_h(j, i) / c * ey;
            }
            let den: f64 = wi.iter().zip(out.iter()).map(|(w, v)| w * v).sum();
            ok = den.is_finite() && den > DEGENERATE_REL * (s_yy[i] / c) && den > 0.0;
            if ok {
                out.iter_mut().for_each(|v| *v /= den);
            }
        }
        if !ok {
            degenerate[i] = true;
            let nn: f64 = wi.iter().map(|v| v * v).sum();
            for j in 0..d {
                out[j] = if nn > 0.0 { wi[j] / nn } else { 0.0 };
            }
        }
    }
    (a, degenerate)
}

fn collect_inputs<'a>(specs: &[LayerSpec], acts: &'a ActivationTrace, out: &mut Vec<(&'a Tensor, usize)>, base: &mut usize) {
    for (i, spec) in specs.iter().enumerate() {
        if spec.has_params() {
            out.push((acts.layer_input(i), *base));
            *base += 1;
        }
        if let LayerKind::Residual { body } = &spec.kind {
            collect_inputs(body, acts.layers[i].body.as_ref().expect("residual trace"), out, base);
        }
    }
}

/// Fits patterns for every dense and convolutional layer from the layer
/// inputs that `data` produces. Convolutions treat every output position as
/// a sample.
pub fn fit_patterns(net: &Network, data: &[Tensor], estimator: PatternEstimator) -> Result<PatternSet> {
    if data.len() < 2 {
        return Err(Error::contract(format!("pattern fitting needs at least 2 inputs, got {}", data.len())));
    }
    let specs: Vec<(&LayerSpec, Vec<usize>)> = net.all_layers().into_iter().filter(|(l, _)| l.has_params()).collect();
    let two = estimator == PatternEstimator::TwoComponent;
    let mut accs: Vec<Acc> = specs
        .iter()
        .map(|(l, _)| {
            let shape = l.weight_shape().expect("parameterised layer");
            Acc::new(shape[1..].iter().product(), shape[0], two)
        })
        .collect();
    let weights: Vec<(&[f64], &[f64])> = specs
        .iter()
        .map(|(l, _)| (net.params()[&weight_key(&l.name)].data(), net.params()[&bias_key(&l.name)].data()))
        .collect();
    for x in data {
        let acts = net.forward(x)?;
        let mut inputs = Vec::with_capacity(specs.len());
        collect_inputs(net.layers(), &acts, &mut inputs, &mut 0);
        for (h, k) in inputs {
            let (l, in_shape) = &specs[k];
            let (w, b) = weights[k];
            let acc = &mut accs[k];
            match l.kind {
                LayerKind::Conv2d { .. } => {
                    let g = l.conv_geometry(in_shape)?;
                    let cols = g.im2col(h.data());
                    acc.add_block(w, b, &cols, g.positions());
                }
                _ => {
                    acc.pending.push(h.data().to_vec());
                    if acc.pending.len() == DENSE_BATCH {
                        acc.flush(w, b);
                    }
                }
            }
        }
    }
    let mut layers = Vec::with_capacity(specs.len());
    for (k, ((l, _), acc)) in specs.iter().zip(accs.iter_mut()).enumerate() {
        let (w, b) = weights[k];
        acc.flush(w, b);
        let shape = l.weight_shape().expect("parameterised layer");
        let (d, n) = (acc.d, acc.n);
        let total = acc.count;
        let (a, deg) = solve(w, d, n, &|_| total, &|j, _| acc.s_h[j], &acc.s_y, &acc.s_yy, &acc.s_hy);
        let lp = match &acc.pos {
            None => LayerPatterns {
                layer: l.name.clone(),
                pattern: Tensor::from_parts(shape, a),
                pattern_pos: None,
                pattern_neg: None,
                degenerate: deg,
            },
            Some(pa) => {
                let (ap, deg_p) = solve(w, d, n, &|i| pa.count[i], &|j, i| pa.s_h[j * n + i], &pa.s_y, &pa.s_yy, &pa.s_hy);
                let sub = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x - y).collect::<Vec<_>>();
                let neg_count: Vec<f64> = pa.count.iter().map(|c| total - c).collect();
                let (s_y, s_yy, s_hy) = (sub(&acc.s_y, &pa.s_y), sub(&acc.s_yy, &pa.s_yy), sub(&acc.s_hy, &pa.s_hy));
                let (an, _) = solve(
                    w,
                    d,
                    n,
                    &|i| neg_count[i],
                    &|j, i| acc.s_h[j] - pa.s_h[j * n + i],
                    &s_y,
                    &s_yy,
                    &s_hy,
                );
                LayerPatterns {
                    layer: l.name.clone(),
                    pattern: Tensor::from_parts(shape.clone(), ap.clone()),
                    pattern_pos: Some(Tensor::from_parts(shape.clone(), ap)),
                    pattern_neg: Some(Tensor::from_parts(shape, an)),
                    degenerate: deg_p,
                }
            }
        };
        layers.push(lp);
    }
    Ok(PatternSet { estimator, layers })
}

/// Fitted patterns already stored in `net`, as a set. Degenerate flags are
/// not stored with the model and come back all false.
pub fn patterns_of(net: &Network) -> Option<PatternSet> {
    let mut layers = Vec::new();
    let mut two = false;
    for l in net.parameterized_layers() {
        let get = |s: &str| net.param(&format!("{}.{s}", l.name)).cloned();
        let pattern = get("pattern")?;
        let (pattern_pos, pattern_neg) = (get("pattern_pos"), get("pattern_neg"));
        two |= pattern_pos.is_some();
        let rows = pattern.shape()[0];
        layers.push(LayerPatterns {
            layer: l.name.clone(),
            pattern,
            pattern_pos,
            pattern_neg,
            degenerate: vec![false; rows],
        });
    }
    Some(PatternSet {
        estimator: if two { PatternEstimator::TwoComponent } else { PatternEstimator::Linear },
        layers,
    })
}
