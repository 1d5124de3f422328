//! Per-pixel saliency maps and their display normalisation.

use super::engine::{Explainer, RelevanceTrace};
use super::rule::{RuleConfig, Target};
use crate::error::{Error, Result};
use crate::model::Network;
use crate::numerics::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Normalization {
    Raw,
    /// Divided by the maximum (non-negative maps) or the absolute maximum
    /// (signed maps).
    Display { scale: f64 },
    /// Affinely mapped from `[min, max]` onto `[0, 1]`.
    UnitInterval { min: f64, max: f64 },
}

/// A 2-D `[H, W]` map.
#[derive(Clone, Debug, PartialEq)]
pub struct SaliencyMap {
    pub map: Tensor,
    pub signed: bool,
    pub normalization: Normalization,
    /// The map is all zero (or constant, for unit-interval scaling) and
    /// could not be normalised.
    pub degenerate: bool,
}

impl SaliencyMap {
    pub fn height(&self) -> usize {
        self.map.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.map.shape()[1]
    }
}

fn effective(rule: &RuleConfig) -> &RuleConfig {
    match rule {
        RuleConfig::ContrastiveLrp(inner) => effective(inner),
        r => r,
    }
}

/// Collapses input relevance to `[H, W]`: absolute channel sum when `abs`,
/// signed channel sum otherwise. 1-D inputs become a single row.
pub fn aggregate_channels(relevance: &Tensor, abs: bool) -> Result<Tensor> {
    let f = |v: f64| if abs { v.abs() } else { v };
    match *relevance.shape() {
        [n] => Ok(Tensor::from_parts(vec![1, n], relevance.data().iter().map(|&v| f(v)).collect())),
        [h, w] => Ok(Tensor::from_parts(vec![h, w], relevance.data().iter().map(|&v| f(v)).collect())),
        [c, h, w] => {
            let mut out = vec![0.0; h * w];
            for ch in 0..c {
                for (o, &v) in out.iter_mut().zip(&relevance.data()[ch * h * w..(ch + 1) * h * w]) {
                    *o += f(v);
                }
            }
            Ok(Tensor::from_parts(vec![h, w], out))
        }
        _ => Err(Error::contract(format!("no saliency map for input shape {:?}", relevance.shape()))),
    }
}

/// Saliency of a trace's input relevance: gradient-family rules sum absolute
/// channel values, every other rule keeps the sign.
pub fn saliency(trace: &RelevanceTrace) -> Result<SaliencyMap> {
    let abs = effective(&trace.rule).is_gradient_family();
    Ok(SaliencyMap {
        map: aggregate_channels(&trace.input, abs)?,
        signed: !abs,
        normalization: Normalization::Raw,
        degenerate: false,
    })
}

/// Scales into `[0, 1]` (non-negative maps) or `[-1, 1]` (signed maps, by
/// the absolute maximum). An all-zero map is returned unchanged and flagged.
pub fn normalize_for_display(map: &SaliencyMap) -> SaliencyMap {
    let scale = if map.signed {
        map.map.max_abs()
    } else {
        map.map.data().iter().copied().fold(0.0, f64::max)
    };
    if scale == 0.0 {
        return SaliencyMap {
            degenerate: true,
            ..map.clone()
        };
    }
    SaliencyMap {
        map: map.map.map(|v| v / scale),
        signed: map.signed,
        normalization: Normalization::Display { scale },
        degenerate: false,
    }
}

/// Min-max scaling onto `[0, 1]`, the form compared by SSIM. A constant map
/// is flagged.
pub fn normalize_unit_interval(map: &SaliencyMap) -> SaliencyMap {
    let d = map.map.data();
    let min = d.iter().copied().fold(f64::INFINITY, f64::min);
    let max = d.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(max > min) {
        return SaliencyMap {
            degenerate: true,
            ..map.clone()
        };
    }
    SaliencyMap {
        map: map.map.map(|v| (v - min) / (max - min)),
        signed: false,
        normalization: Normalization::UnitInterval { min, max },
        degenerate: false,
    }
}

/// Saliency map for logit `k` under any rule. The contrastive wrapper runs
/// the inner rule twice, seeded with the logit vector masked to `k` and to
/// every other class, and keeps the positive part of the difference of the
/// sum-normalised maps.
pub fn explain(net: &Network, x: &Tensor, rule: &RuleConfig, k: usize) -> Result<SaliencyMap> {
    let ex = Explainer::new(net, x, rule)?;
    explain_with(&ex, net, k)
}

/// As [`explain`], reusing a prepared explainer.
pub fn explain_with(ex: &Explainer<'_>, net: &Network, k: usize) -> Result<SaliencyMap> {
    let RuleConfig::ContrastiveLrp(_) = ex.rule() else {
        return saliency(&ex.explain(&Target::Logit(k))?);
    };
    let y = ex.logits();
    if k >= y.len() {
        return Err(Error::contract(format!("logit {k} out of range for {} outputs", y.len())));
    }
    let last = net.layers().last().expect("non-empty network").name.clone();
    let inject = |keep: &dyn Fn(usize) -> bool| -> Result<SaliencyMap> {
        let v: Vec<f64> = y.iter().enumerate().map(|(i, &v)| if keep(i) { v } else { 0.0 }).collect();
        let trace = ex.explain(&Target::Inject {
            layer: last.clone(),
            vector: Tensor::from_parts(vec![v.len()], v),
        })?;
        saliency(&trace)
    };
    let on = inject(&|i| i == k)?;
    let off = inject(&|i| i != k)?;
    let (s_on, s_off) = (on.map.sum(), off.map.sum());
    if s_on == 0.0 || s_off == 0.0 {
        return Ok(SaliencyMap {
            map: Tensor::zeros(on.map.shape()),
            signed: false,
            normalization: Normalization::Raw,
            degenerate: true,
        });
    }
    Ok(SaliencyMap {
        map: on.map.zip_map(&off.map, |a, b| (a / s_on - b / s_off).max(0.0))?,
        signed: false,
        normalization: Normalization::Raw,
        degenerate: false,
    })
}

/// Saliency for the composite and contrastive rules; any other rule is
/// accepted too.
pub fn composite_and_contrastive(net: &Network, x: &Tensor, rule: &RuleConfig, k: usize) -> Result<SaliencyMap> {
    explain(net, x, rule, k)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn channel_aggregation() {
        let r = Tensor::new(vec![3, 1, 1], vec![1.0, -1.0, 0.0]).unwrap();
        assert_eq!(aggregate_channels(&r, true).unwrap().data(), &[2.0]);
        assert_eq!(aggregate_channels(&r, false).unwrap().data(), &[0.0]);
    }

    #[test]
    fn display_normalisation() {
        let m = SaliencyMap {
            map: Tensor::new(vec![1, 2], vec![-2.0, 1.0]).unwrap(),
            signed: true,
            normalization: Normalization::Raw,
            degenerate: false,
        };
        assert_eq!(normalize_for_display(&m).map.data(), &[-1.0, 0.5]);
        let z = SaliencyMap {
            map: Tensor::zeros(&[2, 2]),
            ..m
        };
        assert!(normalize_for_display(&z).degenerate);
    }
}
