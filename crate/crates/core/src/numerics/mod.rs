//! Tensors, small dense linear algebra and the similarity measures used by the
//! metrics.

mod linalg;
mod matrix;
mod ssim;
mod stats;
mod tensor;

pub use linalg::{
    cosine_similarity, dot, matmul, matvec, matvec_t, max_pairwise_column_cosine, norm,
    top2_singular_values,
};
pub(crate) use linalg::{gemm, gemm_nt, gemm_tn};
pub use matrix::Matrix;
pub use ssim::ssim;
pub(crate) use stats::{nearest_rank, sorted_median};
pub use stats::{mean, median, percentile};
pub use tensor::Tensor;
