use super::deeplift;
use super::propagate::{self as p, ReluVariant, Signs};
use super::rule::{DtdInput, RuleConfig, Target, DEFAULT_EPSILON};
use crate::error::{Error, Result};
use crate::model::ops::{LinearOp, Transform};
use crate::model::{ActivationTrace, LayerKind, LayerSpec, Network};
use crate::numerics::Tensor;

/// Relevance at the output of one top-level layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerRelevance {
    pub name: String,
    pub relevance: Tensor,
    /// DeepLIFT only: contributions of the positive and negative parts.
    pub parts: Option<(Tensor, Tensor)>,
}

/// Result of one backward pass, from the starting layer down to the input.
#[derive(Clone, Debug, PartialEq)]
pub struct RelevanceTrace {
    pub rule: RuleConfig,
    pub target: Target,
    /// Layers from the first one up to the starting layer, in forward order.
    pub layers: Vec<LayerRelevance>,
    pub input: Tensor,
    pub input_parts: Option<(Tensor, Tensor)>,
    /// DeepLIFT only: the reference input.
    pub reference: Option<Tensor>,
}

impl RelevanceTrace {
    /// Relevance at a named boundary; `"input"` is the network input.
    pub fn at(&self, name: &str) -> Option<&Tensor> {
        if name == "input" {
            return Some(&self.input);
        }
        self.layers.iter().find(|l| l.name == name).map(|l| &l.relevance)
    }

    /// Boundaries from the input upwards, with their names.
    pub fn boundaries(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        std::iter::once(("input", &self.input)).chain(self.layers.iter().map(|l| (l.name.as_str(), &l.relevance)))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum LinRule {
    Gradient,
    ZPlus,
    LrpZ(f64),
    AlphaBeta(f64, f64),
    WSquare,
    Bounded(f64, f64),
    Pattern(p::PatternMode),
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum ReluRule {
    Mask,
    Pass,
    Modified(ReluVariant),
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum SplitRule {
    Sum,
    ZPlus,
    LrpZ(f64),
    AlphaBeta(f64, f64),
}

enum Cache {
    None,
    Den(Vec<f64>),
    PosNeg(Vec<f64>, Option<Vec<f64>>),
}

enum Step {
    Linear { rule: LinRule, cache: Cache },
    Relu(ReluRule),
    Pool,
    Flatten,
    Residual { body: Vec<Step>, split: SplitRule },
}

/// Per-network facts that decide which rule a layer gets.
struct Roles {
    /// Top-level index of the layer that reads the raw input, if any.
    input_layer: Option<usize>,
    last: usize,
    input_box: Option<[f64; 2]>,
}

fn split_rule(rule: &RuleConfig) -> SplitRule {
    match rule {
        RuleConfig::ZPlus | RuleConfig::Dtd { .. } | RuleConfig::ContrastiveEbp => SplitRule::ZPlus,
        RuleConfig::LrpZ { epsilon } => SplitRule::LrpZ(*epsilon),
        RuleConfig::AlphaBeta { alpha, beta } | RuleConfig::LrpComposite { alpha, beta } => {
            SplitRule::AlphaBeta(*alpha, *beta)
        }
        RuleConfig::ContrastiveLrp(inner) => split_rule(inner),
        _ => SplitRule::Sum,
    }
}

fn relu_rule(rule: &RuleConfig) -> ReluRule {
    match rule {
        RuleConfig::Gradient | RuleConfig::GradTimesInput => ReluRule::Mask,
        RuleConfig::GuidedBackprop => ReluRule::Modified(ReluVariant::GuidedBackprop),
        RuleConfig::Deconvnet => ReluRule::Modified(ReluVariant::Deconvnet),
        RuleConfig::RectGrad { q } => ReluRule::Modified(ReluVariant::RectGrad { q: *q }),
        RuleConfig::ContrastiveLrp(inner) => relu_rule(inner),
        _ => ReluRule::Pass,
    }
}

fn lin_rule(rule: &RuleConfig, spec: &LayerSpec, top_index: Option<usize>, roles: &Roles) -> Result<LinRule> {
    let is_input = top_index.is_some() && top_index == roles.input_layer;
    let is_conv = matches!(spec.kind, LayerKind::Conv2d { .. });
    let is_gap = matches!(spec.kind, LayerKind::GlobalAvgPool);
    Ok(match rule {
        RuleConfig::Gradient
        | RuleConfig::GradTimesInput
        | RuleConfig::GuidedBackprop
        | RuleConfig::Deconvnet
        | RuleConfig::RectGrad { .. } => LinRule::Gradient,
        RuleConfig::ZPlus => LinRule::ZPlus,
        RuleConfig::LrpZ { epsilon } => LinRule::LrpZ(*epsilon),
        RuleConfig::AlphaBeta { alpha, beta } => LinRule::AlphaBeta(*alpha, *beta),
        RuleConfig::Dtd { input } if is_input => match input {
            DtdInput::ZPlus => LinRule::ZPlus,
            DtdInput::WSquare => LinRule::WSquare,
            DtdInput::Bounded(b) => {
                let [l, u] = b.or(roles.input_box).ok_or_else(|| {
                    Error::Config("bounded input rule needs bounds and the model declares no input box".into())
                })?;
                LinRule::Bounded(l, u)
            }
        },
        RuleConfig::Dtd { .. } => LinRule::ZPlus,
        RuleConfig::PatternNet if !is_gap => LinRule::Pattern(p::PatternMode::Net),
        RuleConfig::PatternAttribution if !is_gap => LinRule::Pattern(p::PatternMode::Attribution),
        RuleConfig::PatternNet | RuleConfig::PatternAttribution => LinRule::Gradient,
        RuleConfig::LrpComposite { alpha, beta } if is_conv => LinRule::AlphaBeta(*alpha, *beta),
        RuleConfig::LrpComposite { .. } => LinRule::LrpZ(DEFAULT_EPSILON),
        RuleConfig::ContrastiveLrp(inner) => return lin_rule(inner, spec, top_index, roles),
        // Z⁺ − N⁺ with N⁺ built on −W equals the (1, 1) alpha-beta step,
        // because [−w h]⁺ = −[w h]⁻ and likewise for the denominators.
        RuleConfig::ContrastiveEbp if top_index == Some(roles.last) => LinRule::AlphaBeta(1.0, 1.0),
        RuleConfig::ContrastiveEbp => LinRule::ZPlus,
        RuleConfig::DeepLift { .. } => unreachable!("DeepLIFT has its own backward pass"),
    })
}

fn build_plan(
    net: &Network,
    rule: &RuleConfig,
    specs: &[LayerSpec],
    acts: &ActivationTrace,
    roles: &Roles,
    top_level: bool,
) -> Result<Vec<Step>> {
    let mut plan = Vec::with_capacity(specs.len());
    for (i, spec) in specs.iter().enumerate() {
        let input = acts.layer_input(i);
        let step = match &spec.kind {
            LayerKind::Dense { .. } | LayerKind::Conv2d { .. } | LayerKind::GlobalAvgPool => {
                let lr = lin_rule(rule, spec, top_level.then_some(i), roles)?;
                if let LinRule::Pattern(_) = lr {
                    if net.param(&format!("{}.pattern", spec.name)).is_none() {
                        return Err(Error::Config(format!(
                            "rule {rule} needs fitted patterns, none found for layer `{}`",
                            spec.name
                        )));
                    }
                }
                let op = net.linear_op(spec, input.shape()).expect("linear layer");
                let bias = op.bias_per_output();
                let h = input.data();
                let cache = match lr {
                    LinRule::ZPlus => Cache::Den(p::zplus_den(&op, &Signs::of(h), &bias)),
                    LinRule::AlphaBeta(_, beta) => {
                        let s = Signs::of(h);
                        let neg = (beta != 0.0).then(|| p::zminus_den(&op, &s, &bias));
                        Cache::PosNeg(p::zplus_den(&op, &s, &bias), neg)
                    }
                    LinRule::LrpZ(eps) => Cache::Den(p::lrpz_den(acts.layers[i].output.data(), eps)),
                    LinRule::WSquare => Cache::Den(p::w2_den(&op)),
                    LinRule::Bounded(l, u) => Cache::Den(p::bounded_den(&op, h, l, u)?),
                    LinRule::Gradient | LinRule::Pattern(_) => Cache::None,
                };
                Step::Linear { rule: lr, cache }
            }
            LayerKind::Relu => Step::Relu(relu_rule(rule)),
            LayerKind::MaxPool2d { .. } => Step::Pool,
            LayerKind::Flatten => Step::Flatten,
            LayerKind::Residual { body } => Step::Residual {
                body: build_plan(net, rule, body, acts.layers[i].body.as_ref().expect("residual trace"), roles, false)?,
                split: split_rule(rule),
            },
        };
        plan.push(step);
    }
    Ok(plan)
}

/// Forward pass plus everything a rule can precompute from it, reusable for
/// any number of backward passes on the same input.
pub struct Explainer<'n> {
    net: &'n Network,
    rule: RuleConfig,
    acts: ActivationTrace,
    plan: Vec<Step>,
    deeplift: Option<deeplift::State>,
}

fn roles(net: &Network) -> Roles {
    let layers = net.layers();
    let input_layer = layers
        .iter()
        .position(|l| !matches!(l.kind, LayerKind::Flatten))
        .filter(|&i| layers[i].has_params());
    Roles {
        input_layer,
        last: layers.len() - 1,
        input_box: net.input_box(),
    }
}

impl<'n> Explainer<'n> {
    pub fn new(net: &'n Network, x: &Tensor, rule: &RuleConfig) -> Result<Self> {
        rule.validate()?;
        let acts = net.forward(x)?;
        let roles = roles(net);
        if *rule == RuleConfig::ContrastiveEbp && !matches!(net.layers()[roles.last].kind, LayerKind::Dense { .. }) {
            return Err(Error::Config("contrastive excitation backprop needs a dense logit layer".into()));
        }
        if rule.needs_patterns() {
            for l in net.parameterized_layers() {
                if net.param(&format!("{}.pattern", l.name)).is_none() {
                    return Err(Error::Config(format!(
                        "rule {rule} needs fitted patterns, none found for layer `{}`",
                        l.name
                    )));
                }
            }
        }
        let (plan, deeplift) = match rule {
            RuleConfig::DeepLift { reference, ablation } => {
                (Vec::new(), Some(deeplift::State::new(net, &acts, reference, *ablation)?))
            }
            RuleConfig::ContrastiveLrp(inner) if matches!(**inner, RuleConfig::DeepLift { .. }) => {
                let RuleConfig::DeepLift { reference, ablation } = &**inner else { unreachable!() };
                (Vec::new(), Some(deeplift::State::new(net, &acts, reference, *ablation)?))
            }
            _ => (build_plan(net, rule, net.layers(), &acts, &roles, true)?, None),
        };
        Ok(Explainer {
            net,
            rule: rule.clone(),
            acts,
            plan,
            deeplift,
        })
    }

    pub fn activations(&self) -> &ActivationTrace {
        &self.acts
    }

    pub fn logits(&self) -> &[f64] {
        self.acts.output().data()
    }

    pub fn rule(&self) -> &RuleConfig {
        &self.rule
    }

    /// The rule that actually drives the backward pass (the inner rule for
    /// the contrastive wrapper).
    fn base_rule(&self) -> &RuleConfig {
        match &self.rule {
            RuleConfig::ContrastiveLrp(inner) => inner,
            r => r,
        }
    }

    /// Starting layer index and relevance for a target.
    fn start(&self, target: &Target) -> Result<(usize, Tensor)> {
        let shapes = self.net.layer_shapes();
        match target {
            Target::Logit(k) => {
                let n = self.logits().len();
                if *k >= n {
                    return Err(Error::contract(format!("logit {k} out of range for {n} outputs")));
                }
                let scale = match self.base_rule() {
                    RuleConfig::Gradient
                    | RuleConfig::GradTimesInput
                    | RuleConfig::GuidedBackprop
                    | RuleConfig::Deconvnet
                    | RuleConfig::RectGrad { .. }
                    | RuleConfig::ContrastiveEbp
                    | RuleConfig::DeepLift { .. } => 1.0,
                    _ => self.logits()[*k],
                };
                let mut r = vec![0.0; n];
                r[*k] = scale;
                Ok((shapes.len() - 1, Tensor::from_parts(vec![n], r)))
            }
            Target::Inject { layer, vector } => {
                let i = self.net.layer_index(layer)?;
                let expected = &shapes[i];
                if vector.len() != expected.iter().product::<usize>() {
                    return Err(Error::ShapeMismatch {
                        layer: layer.clone(),
                        expected: expected.clone(),
                        found: vector.shape().to_vec(),
                    });
                }
                Ok((i, Tensor::from_parts(expected.clone(), vector.data().to_vec())))
            }
        }
    }

    /// One backward pass.
    pub fn explain(&self, target: &Target) -> Result<RelevanceTrace> {
        let (start, r) = self.start(target)?;
        if let Some(dl) = &self.deeplift {
            return dl.explain(self.net, &self.acts, start, &r, &self.rule, target);
        }
        let mut record = Vec::with_capacity(start + 1);
        let input = self.backward(self.net.layers(), &self.plan, &self.acts, start, r.into_data(), Some(&mut record))?;
        let mut layers: Vec<LayerRelevance> = record
            .into_iter()
            .rev()
            .zip(self.net.layers())
            .map(|(rel, spec)| LayerRelevance {
                name: spec.name.clone(),
                relevance: rel,
                parts: None,
            })
            .collect();
        let mut input = Tensor::from_parts(self.acts.input.shape().to_vec(), input);
        if self.base_rule() == &RuleConfig::GradTimesInput {
            input = input.zip_map(&self.acts.input, |g, h| g * h)?;
            for (i, l) in layers.iter_mut().enumerate() {
                l.relevance = l.relevance.zip_map(&self.acts.layers[i].output, |g, h| g * h)?;
            }
        }
        if !input.all_finite() {
            return Err(Error::numerical(format!("rule {} produced non-finite relevance", self.rule), f64::NAN));
        }
        Ok(RelevanceTrace {
            rule: self.rule.clone(),
            target: target.clone(),
            layers,
            input,
            input_parts: None,
            reference: None,
        })
    }

    /// Propagates `r` (relevance at the output of layer `from`) to the input
    /// of the block. `record` collects the relevance at each output boundary,
    /// top layer first.
    fn backward(
        &self,
        specs: &[LayerSpec],
        plan: &[Step],
        acts: &ActivationTrace,
        from: usize,
        mut r: Vec<f64>,
        mut record: Option<&mut Vec<Tensor>>,
    ) -> Result<Vec<f64>> {
        for i in (0..=from).rev() {
            let out_shape = acts.layers[i].output.shape();
            if let Some(rec) = record.as_deref_mut() {
                rec.push(Tensor::from_parts(out_shape.to_vec(), r.clone()));
            }
            let input = acts.layer_input(i);
            let spec = &specs[i];
            r = match &plan[i] {
                Step::Linear { rule, cache } => {
                    let op = self.net.linear_op(spec, input.shape()).expect("linear layer");
                    linear_back(self.net, spec, &op, *rule, cache, input.data(), &r)
                }
                Step::Relu(rr) => match rr {
                    ReluRule::Pass => r,
                    ReluRule::Mask => input.data().iter().zip(&r).map(|(&z, &v)| if z > 0.0 { v } else { 0.0 }).collect(),
                    ReluRule::Modified(variant) => {
                        let mask: Vec<bool> = input.data().iter().map(|&z| z > 0.0).collect();
                        p::propagate_relu_modified(&mask, &r, *variant)?
                    }
                },
                Step::Pool => {
                    let mut out = vec![0.0; input.len()];
                    for (o, &a) in acts.layers[i].argmax.as_ref().expect("pool argmax").iter().enumerate() {
                        out[a] += r[o];
                    }
                    out
                }
                Step::Flatten => r,
                Step::Residual { body, split } => {
                    let inner = acts.layers[i].body.as_ref().expect("residual trace");
                    let LayerKind::Residual { body: body_specs } = &spec.kind else { unreachable!() };
                    let (r_skip, r_body) = split_residual(*split, input.data(), inner.output().data(), &r);
                    let r_body_in = self.backward(body_specs, body, inner, body_specs.len() - 1, r_body, None)?;
                    r_skip.iter().zip(&r_body_in).map(|(a, b)| a + b).collect()
                }
            };
        }
        Ok(r)
    }
}

fn linear_back(net: &Network, spec: &LayerSpec, op: &LinearOp, rule: LinRule, cache: &Cache, h: &[f64], r: &[f64]) -> Vec<f64> {
    match (rule, cache) {
        (LinRule::Gradient, _) => op.transpose(Transform::Plain, r),
        (LinRule::ZPlus, Cache::Den(den)) => p::zplus_back(op, &Signs::of(h), den, r),
        (LinRule::AlphaBeta(a, b), Cache::PosNeg(pos, neg)) => {
            p::alpha_beta_back(op, &Signs::of(h), (pos, neg.as_deref()), r, a, b)
        }
        (LinRule::LrpZ(_), Cache::Den(den)) => p::lrpz_back(op, h, den, r),
        (LinRule::WSquare, Cache::Den(den)) => p::w2_back(op, den, r),
        (LinRule::Bounded(l, u), Cache::Den(den)) => p::bounded_back(op, h, l, u, den, r),
        (LinRule::Pattern(mode), _) => {
            let a = net.param(&format!("{}.pattern", spec.name)).expect("checked when planning");
            match mode {
                p::PatternMode::Net => op.transpose(Transform::Swap(a.data()), r),
                p::PatternMode::Attribution => op.transpose(Transform::Hadamard(a.data()), r),
            }
        }
        _ => unreachable!("plan and cache disagree"),
    }
}

/// Splits relevance at a residual sum `h + g` between the skip input `h` and
/// the body output `g`.
fn split_residual(rule: SplitRule, h: &[f64], g: &[f64], r: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = r.len();
    let (mut skip, mut body) = (vec![0.0; n], vec![0.0; n]);
    for j in 0..n {
        let (a, b) = match rule {
            SplitRule::Sum => (r[j], r[j]),
            SplitRule::ZPlus => {
                let (hp, gp) = (h[j].max(0.0), g[j].max(0.0));
                let den = hp + gp;
                if den == 0.0 {
                    (0.0, 0.0)
                } else {
                    (r[j] * hp / den, r[j] * gp / den)
                }
            }
            SplitRule::LrpZ(eps) => {
                let den = p::lrpz_den(&[h[j] + g[j]], eps)[0];
                if den == 0.0 {
                    (0.0, 0.0)
                } else {
                    (r[j] * h[j] / den, r[j] * g[j] / den)
                }
            }
            SplitRule::AlphaBeta(alpha, beta) => {
                let (hp, gp, hn, gn) = (h[j].max(0.0), g[j].max(0.0), h[j].min(0.0), g[j].min(0.0));
                let (pd, nd) = (hp + gp, hn + gn);
                let pos = |x: f64| if pd == 0.0 { 0.0 } else { alpha * r[j] * x / pd };
                let neg = |x: f64| if nd == 0.0 { 0.0 } else { beta * r[j] * x / nd };
                (pos(hp) - neg(hn), pos(gp) - neg(gn))
            }
        };
        skip[j] = a;
        body[j] = b;
    }
    (skip, body)
}

/// One backward pass: forward `x`, then propagate from `target` with `rule`.
pub fn attribute(net: &Network, x: &Tensor, rule: &RuleConfig, target: &Target) -> Result<RelevanceTrace> {
    Explainer::new(net, x, rule)?.explain(target)
}
