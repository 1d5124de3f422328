use std::fmt;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Which input-layer rule deep Taylor decomposition uses. Hidden layers
/// always use z⁺.
#[derive(Clone, Debug, PartialEq)]
pub enum DtdInput {
    ZPlus,
    WSquare,
    /// Bounded inputs; `None` takes the box declared by the model.
    Bounded(Option<[f64; 2]>),
}

/// DeepLIFT reference input.
#[derive(Clone, Debug, PartialEq)]
pub enum Reference {
    Zeros,
    /// Gaussian blur of the input with this standard deviation in pixels.
    Blur { sigma: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub enum RuleConfig {
    Gradient,
    /// Gradient times the activation at every layer boundary.
    GradTimesInput,
    ZPlus,
    LrpZ { epsilon: f64 },
    /// Requires α − β = 1 and α ≥ 1.
    AlphaBeta { alpha: f64, beta: f64 },
    Dtd { input: DtdInput },
    PatternNet,
    PatternAttribution,
    /// Rescale rule at ReLUs. `ablation` decouples the positive and negative
    /// multiplier chains at linear layers.
    DeepLift { reference: Reference, ablation: bool },
    GuidedBackprop,
    Deconvnet,
    /// Keeps only entries above the q-th percentile at each ReLU.
    RectGrad { q: f64 },
    /// LRP-z on dense layers and LRP-αβ on convolutions.
    LrpComposite { alpha: f64, beta: f64 },
    /// Clipped difference of the sum-normalised maps for the explained logit
    /// and for all other logits, computed with the inner rule.
    ContrastiveLrp(Box<RuleConfig>),
    /// z⁺ everywhere except the logit layer, which uses `Z⁺ − N⁺` on the
    /// one-hot target.
    ContrastiveEbp,
}

pub const DEFAULT_EPSILON: f64 = 1e-9;
pub const DEFAULT_RECTGRAD_Q: f64 = 98.0;

pub(crate) fn check_alpha_beta(alpha: f64, beta: f64) -> Result<()> {
    if !(alpha.is_finite() && beta.is_finite()) || (alpha - beta - 1.0).abs() > 1e-12 || alpha < 1.0 {
        return Err(Error::Config(format!(
            "alpha-beta needs alpha - beta = 1 and alpha >= 1, got alpha={alpha}, beta={beta}"
        )));
    }
    Ok(())
}

impl RuleConfig {
    pub fn validate(&self) -> Result<()> {
        match self {
            RuleConfig::LrpZ { epsilon } if !(epsilon.is_finite() && *epsilon >= 0.0) => {
                Err(Error::Config(format!("epsilon must be finite and non-negative, got {epsilon}")))
            }
            RuleConfig::AlphaBeta { alpha, beta } | RuleConfig::LrpComposite { alpha, beta } => {
                check_alpha_beta(*alpha, *beta)
            }
            RuleConfig::RectGrad { q } if !(0.0..=100.0).contains(q) => {
                Err(Error::Config(format!("rectgrad percentile {q} outside [0, 100]")))
            }
            RuleConfig::DeepLift {
                reference: Reference::Blur { sigma },
                ..
            } if !(sigma.is_finite() && *sigma >= 0.0) => Err(Error::Config(format!("blur sigma {sigma} is invalid"))),
            RuleConfig::Dtd {
                input: DtdInput::Bounded(Some([lo, hi])),
            } if !(lo.is_finite() && hi.is_finite() && lo < hi) => {
                Err(Error::Config(format!("bounds [{lo}, {hi}] are empty")))
            }
            RuleConfig::ContrastiveLrp(inner) => match **inner {
                RuleConfig::ContrastiveLrp(_) | RuleConfig::ContrastiveEbp => {
                    Err(Error::Config("contrastive rules cannot be nested".into()))
                }
                _ => inner.validate(),
            },
            _ => Ok(()),
        }
    }

    /// Rules whose saliency is the per-pixel sum of absolute channel values.
    pub fn is_gradient_family(&self) -> bool {
        matches!(
            self,
            RuleConfig::Gradient | RuleConfig::GuidedBackprop | RuleConfig::Deconvnet | RuleConfig::RectGrad { .. }
        )
    }

    pub(crate) fn needs_patterns(&self) -> bool {
        match self {
            RuleConfig::PatternNet | RuleConfig::PatternAttribution => true,
            RuleConfig::ContrastiveLrp(inner) => inner.needs_patterns(),
            _ => false,
        }
    }
}

impl fmt::Display for RuleConfig {
    /// Canonical text form, the same grammar the command line accepts.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RuleConfig::Gradient => write!(f, "gradient"),
            RuleConfig::GradTimesInput => write!(f, "gradxinput"),
            RuleConfig::ZPlus => write!(f, "zplus"),
            RuleConfig::LrpZ { epsilon } => write!(f, "lrpz:{epsilon}"),
            RuleConfig::AlphaBeta { alpha, beta } => write!(f, "alphabeta:{alpha}:{beta}"),
            RuleConfig::Dtd { input } => match input {
                DtdInput::ZPlus => write!(f, "dtd"),
                DtdInput::WSquare => write!(f, "dtd:w2"),
                DtdInput::Bounded(None) => write!(f, "dtd:wB"),
                DtdInput::Bounded(Some([l, u])) => write!(f, "dtd:wB:{l}:{u}"),
            },
            RuleConfig::PatternNet => write!(f, "patternnet"),
            RuleConfig::PatternAttribution => write!(f, "patternattr"),
            RuleConfig::DeepLift { reference, ablation } => {
                match reference {
                    Reference::Zeros => write!(f, "deeplift:zeros")?,
                    Reference::Blur { sigma } => write!(f, "deeplift:blur:{sigma}")?,
                }
                if *ablation {
                    write!(f, ":ablation")?;
                }
                Ok(())
            }
            RuleConfig::GuidedBackprop => write!(f, "guidedbp"),
            RuleConfig::Deconvnet => write!(f, "deconv"),
            RuleConfig::RectGrad { q } => write!(f, "rectgrad:{q}"),
            RuleConfig::LrpComposite { alpha, beta } => write!(f, "lrpcmp:{alpha}:{beta}"),
            RuleConfig::ContrastiveLrp(inner) => write!(f, "contrastive:{inner}"),
            RuleConfig::ContrastiveEbp => write!(f, "cebp"),
        }
    }
}

/// Where the backward pass starts.
#[derive(Clone, Debug, PartialEq)]
pub enum Target {
    /// Explain logit `k` with the rule's own initialisation.
    Logit(usize),
    /// Start from `vector` placed at the output of top-level layer `layer`.
    Inject { layer: String, vector: Tensor },
}
