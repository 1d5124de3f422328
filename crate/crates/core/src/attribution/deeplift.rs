//! DeepLIFT with the rescale rule, tracking positive and negative parts of
//! every difference-from-reference separately.
//!
//! Multipliers flow backwards as pairs `(m⁺, m⁻)`; the relevance reported at a
//! boundary is the contribution `m⁺·Δ⁺ + m⁻·Δ⁻`, which sums to the change of
//! the explained output.

use super::engine::{LayerRelevance, RelevanceTrace};
use super::propagate::deeplift_linear_multipliers;
use super::rule::{Reference, RuleConfig, Target};
use crate::error::{Error, Result};
use crate::model::ops::Transform;
use crate::model::{ActivationTrace, LayerKind, LayerSpec, Network};
use crate::numerics::Tensor;

/// Differences below this are treated as zero when forming Δy/Δx.
const RATIO_EPS: f64 = 1e-7;

/// Builds the reference input for `x`.
pub fn deeplift_reference(x: &Tensor, reference: &Reference) -> Result<Tensor> {
    match reference {
        Reference::Zeros => Ok(Tensor::zeros(x.shape())),
        Reference::Blur { sigma } => blur(x, *sigma),
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as usize;
    let mut k: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let d = i as f64 - radius as f64;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

fn blur_line(src: &[f64], k: &[f64], out: &mut [f64], stride: usize, n: usize) {
    let radius = (k.len() / 2) as isize;
    for i in 0..n {
        let mut acc = 0.0;
        for (t, &kv) in k.iter().enumerate() {
            let j = (i as isize + t as isize - radius).clamp(0, n as isize - 1) as usize;
            acc += kv * src[j * stride];
        }
        out[i * stride] = acc;
    }
}

/// Separable Gaussian blur with replicated edges over the spatial axes
/// (the last two axes of a 3-D or 2-D tensor, the only axis of a 1-D one).
pub fn blur(x: &Tensor, sigma: f64) -> Result<Tensor> {
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(Error::Config(format!("blur sigma must be finite and non-negative, got {sigma}")));
    }
    if sigma < 1e-12 {
        return Ok(x.clone());
    }
    let k = gaussian_kernel(sigma);
    let (planes, h, w) = match *x.shape() {
        [n] => (1, 1, n),
        [h, w] => (1, h, w),
        [c, h, w] => (c, h, w),
        _ => return Err(Error::contract(format!("cannot blur a tensor of shape {:?}", x.shape()))),
    };
    let mut a = x.data().to_vec();
    let mut b = vec![0.0; a.len()];
    for p in 0..planes {
        let base = p * h * w;
        for r in 0..h {
            let o = base + r * w;
            blur_line(&a[o..o + w], &k, &mut b[o..o + w], 1, w);
        }
    }
    if h > 1 {
        for p in 0..planes {
            let base = p * h * w;
            for c in 0..w {
                let o = base + c;
                let end = base + h * w;
                blur_line(&b[o..end], &k, &mut a[o..end], w, h);
            }
        }
    } else {
        a = b;
    }
    Ok(x.with_data(a))
}

/// Positive and negative parts of the difference at one boundary.
#[derive(Clone, Debug)]
struct Parts {
    pos: Vec<f64>,
    neg: Vec<f64>,
}

impl Parts {
    fn atomic(x: &Tensor, x0: &Tensor) -> Self {
        let (pos, neg) = x.data().iter().zip(x0.data()).map(|(a, b)| a - b).map(|d| (d.max(0.0), d.min(0.0))).unzip();
        Parts { pos, neg }
    }
}

struct Block {
    input: Parts,
    outputs: Vec<Parts>,
    bodies: Vec<Option<Block>>,
}

fn decompose(net: &Network, specs: &[LayerSpec], acts: &ActivationTrace, refs: &ActivationTrace, input: Parts) -> Block {
    let mut outputs: Vec<Parts> = Vec::with_capacity(specs.len());
    let mut bodies = Vec::with_capacity(specs.len());
    for (i, spec) in specs.iter().enumerate() {
        let prev = if i == 0 { &input } else { &outputs[i - 1] };
        let (out, body) = match &spec.kind {
            LayerKind::Dense { .. } | LayerKind::Conv2d { .. } | LayerKind::GlobalAvgPool => {
                let op = net.linear_op(spec, acts.layer_input(i).shape()).expect("linear layer");
                let add = |a: Vec<f64>, b: Vec<f64>| a.iter().zip(&b).map(|(x, y)| x + y).collect::<Vec<_>>();
                let pos = add(op.forward(Transform::Positive, &prev.pos), op.forward(Transform::Negative, &prev.neg));
                let neg = add(op.forward(Transform::Positive, &prev.neg), op.forward(Transform::Negative, &prev.pos));
                (Parts { pos, neg }, None)
            }
            LayerKind::Flatten => (prev.clone(), None),
            LayerKind::Relu | LayerKind::MaxPool2d { .. } => (Parts::atomic(&acts.layers[i].output, &refs.layers[i].output), None),
            LayerKind::Residual { body } => {
                let (ba, br) = (acts.layers[i].body.as_ref().unwrap(), refs.layers[i].body.as_ref().unwrap());
                let inner = decompose(net, body, ba, br, prev.clone());
                let last = inner.outputs.last().unwrap();
                let pos = prev.pos.iter().zip(&last.pos).map(|(a, b)| a + b).collect();
                let neg = prev.neg.iter().zip(&last.neg).map(|(a, b)| a + b).collect();
                (Parts { pos, neg }, Some(inner))
            }
        };
        outputs.push(out);
        bodies.push(body);
    }
    Block { input, outputs, bodies }
}

pub(crate) struct State {
    reference: Tensor,
    refs: ActivationTrace,
    block: Block,
    ablation: bool,
}

type Pair = (Vec<f64>, Vec<f64>);

fn pick(dy: f64, mp: f64, mn: f64) -> f64 {
    if dy > 0.0 {
        mp
    } else if dy < 0.0 {
        mn
    } else {
        0.5 * (mp + mn)
    }
}

impl State {
    pub(crate) fn new(net: &Network, acts: &ActivationTrace, reference: &Reference, ablation: bool) -> Result<Self> {
        let x0 = deeplift_reference(&acts.input, reference)?;
        let refs = net.forward(&x0)?;
        let block = decompose(net, net.layers(), acts, &refs, Parts::atomic(&acts.input, &x0));
        Ok(State {
            reference: x0,
            refs,
            block,
            ablation,
        })
    }

    pub(crate) fn explain(
        &self,
        net: &Network,
        acts: &ActivationTrace,
        start: usize,
        r: &Tensor,
        rule: &RuleConfig,
        target: &Target,
    ) -> Result<RelevanceTrace> {
        let m = match target {
            Target::Logit(_) => (r.data().to_vec(), r.data().to_vec()),
            Target::Inject { .. } => (
                r.data().iter().map(|v| v.max(0.0)).collect(),
                r.data().iter().map(|v| v.min(0.0)).collect(),
            ),
        };
        let mut record = Vec::with_capacity(start + 1);
        let (mp, mn) = self.backward(net, net.layers(), acts, &self.refs, &self.block, start, m, Some(&mut record));
        let contrib = |parts: &Parts, mp: &[f64], mn: &[f64]| -> Pair {
            (
                mp.iter().zip(&parts.pos).map(|(m, d)| m * d).collect(),
                mn.iter().zip(&parts.neg).map(|(m, d)| m * d).collect(),
            )
        };
        let layers = record
            .into_iter()
            .rev()
            .enumerate()
            .map(|(i, (mp, mn))| {
                let shape = acts.layers[i].output.shape().to_vec();
                let (a, b) = contrib(&self.block.outputs[i], &mp, &mn);
                let sum = a.iter().zip(&b).map(|(x, y)| x + y).collect();
                LayerRelevance {
                    name: net.layers()[i].name.clone(),
                    relevance: Tensor::from_parts(shape.clone(), sum),
                    parts: Some((Tensor::from_parts(shape.clone(), a), Tensor::from_parts(shape, b))),
                }
            })
            .collect();
        let shape = acts.input.shape().to_vec();
        let (a, b) = contrib(&self.block.input, &mp, &mn);
        let input = Tensor::from_parts(shape.clone(), a.iter().zip(&b).map(|(x, y)| x + y).collect());
        if !input.all_finite() {
            return Err(Error::numerical("DeepLIFT produced non-finite relevance", f64::NAN));
        }
        Ok(RelevanceTrace {
            rule: rule.clone(),
            target: target.clone(),
            layers,
            input,
            input_parts: Some((Tensor::from_parts(shape.clone(), a), Tensor::from_parts(shape, b))),
            reference: Some(self.reference.clone()),
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn backward(
        &self,
        net: &Network,
        specs: &[LayerSpec],
        acts: &ActivationTrace,
        refs: &ActivationTrace,
        block: &Block,
        from: usize,
        mut m: Pair,
        mut record: Option<&mut Vec<Pair>>,
    ) -> Pair {
        for i in (0..=from).rev() {
            if let Some(rec) = record.as_deref_mut() {
                rec.push(m.clone());
            }
            let x = acts.layer_input(i);
            let x0 = refs.layer_input(i);
            let (y, y0) = (&acts.layers[i].output, &refs.layers[i].output);
            let spec = &specs[i];
            m = match &spec.kind {
                LayerKind::Dense { .. } | LayerKind::Conv2d { .. } | LayerKind::GlobalAvgPool => {
                    let op = net.linear_op(spec, x.shape()).expect("linear layer");
                    deeplift_linear_multipliers(&op, &m.0, &m.1, self.ablation)
                }
                LayerKind::Flatten => m,
                LayerKind::Relu => {
                    let n = x.len();
                    let (mut p, mut q) = (vec![0.0; n], vec![0.0; n]);
                    for j in 0..n {
                        let (z, dz) = (x.data()[j], x.data()[j] - x0.data()[j]);
                        let dy = y.data()[j] - y0.data()[j];
                        let ratio = if dz.abs() >= RATIO_EPS {
                            dy / dz
                        } else if z > 0.0 {
                            1.0
                        } else {
                            0.0
                        };
                        if self.ablation {
                            p[j] = if dy > 0.0 { ratio * m.0[j] } else { 0.0 };
                            q[j] = if dy < 0.0 { ratio * m.1[j] } else { 0.0 };
                        } else {
                            let v = ratio * pick(dy, m.0[j], m.1[j]);
                            p[j] = v;
                            q[j] = v;
                        }
                    }
                    (p, q)
                }
                LayerKind::MaxPool2d { .. } => {
                    let n = x.len();
                    let (mut p, mut q) = (vec![0.0; n], vec![0.0; n]);
                    let ref_arg = refs.layers[i].argmax.as_ref().expect("pool argmax");
                    for (o, &a) in acts.layers[i].argmax.as_ref().expect("pool argmax").iter().enumerate() {
                        let dy = y.data()[o] - y0.data()[o];
                        // Route through whichever of the two winners moved more, so
                        // the output difference is carried even when the input's
                        // winner barely changed.
                        let b = ref_arg[o];
                        let a = if (x.data()[b] - x0.data()[b]).abs() > (x.data()[a] - x0.data()[a]).abs() { b } else { a };
                        let dx = x.data()[a] - x0.data()[a];
                        let scale = if dx.abs() >= RATIO_EPS { dy / dx } else { 1.0 };
                        if self.ablation {
                            if dy > 0.0 {
                                p[a] += scale * m.0[o];
                            } else if dy < 0.0 {
                                q[a] += scale * m.1[o];
                            }
                        } else {
                            let v = scale * pick(dy, m.0[o], m.1[o]);
                            p[a] += v;
                            q[a] += v;
                        }
                    }
                    (p, q)
                }
                LayerKind::Residual { body } => {
                    let inner = block.bodies[i].as_ref().expect("residual parts");
                    let (ba, br) = (acts.layers[i].body.as_ref().unwrap(), refs.layers[i].body.as_ref().unwrap());
                    let (bp, bq) = self.backward(net, body, ba, br, inner, body.len() - 1, m.clone(), None);
                    (
                        m.0.iter().zip(&bp).map(|(a, b)| a + b).collect(),
                        m.1.iter().zip(&bq).map(|(a, b)| a + b).collect(),
                    )
                }
            };
        }
        m
    }
}
