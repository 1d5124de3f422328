//! Relevance propagation: one backward pass per rule, with a full per-layer
//! trace and relevance injection at any top-level layer.

mod deeplift;
mod engine;
mod patterns;
mod propagate;
mod rule;
mod saliency;

pub use deeplift::{blur, deeplift_reference};
pub use engine::{attribute, Explainer, LayerRelevance, RelevanceTrace};
pub use patterns::{fit_patterns, patterns_of, LayerPatterns, PatternEstimator, PatternSet};
pub use propagate::{
    propagate_alpha_beta, propagate_deeplift_linear, propagate_dtd_input, propagate_lrp_z, propagate_pattern,
    propagate_relu_modified, propagate_zplus, DtdVariant, PatternMode, ReluVariant,
};
pub use rule::{DtdInput, Reference, RuleConfig, Target, DEFAULT_EPSILON, DEFAULT_RECTGRAD_Q};
pub use saliency::{
    aggregate_channels, composite_and_contrastive, explain, explain_with, normalize_for_display,
    normalize_unit_interval, saliency, Normalization, SaliencyMap,
};
