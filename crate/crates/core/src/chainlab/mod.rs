//! Matrix-chain experiments: simulated products, the widest-angle sequence,
//! the cases excluded from rank-1 convergence and singular-value
//! alignment between layers.

mod alignment;
mod simulate;
mod theory;

pub use alignment::{
    chain_matrices_forward, chain_matrices_from_network, interlayer_alignment, layer_matrix_1x1, pattern_ratio_report,
    PatternRatio,
};
pub use simulate::{simulate_chain, ChainFamily, ChainReport, ChainSpec, ChainStep, VGG_DIMS};
pub use theory::{sn_sequence, convergence_conditions, Diagnosis};
