//! Audit harnesses: cosine-similarity convergence, cascading randomisation,
//! the random-logit test and the rank-1 certificate.

mod csc;
mod rank1;
mod sanity;
mod synthetic;

pub use csc::{csc_run, csc_vector, location_cosines, CscLayer, CscPath, DEFAULT_VECTORS};
pub use rank1::{certify_rank1, rank1_certificate, Rank1Certificate};
pub use sanity::{
    flip_max_ssim, random_logit_batch, random_logit_csv, random_logit_run, random_other_logit, sanity_check_run,
    sanity_check_stages, RandomLogitResult, SanityReport, SanityStage,
};
pub use synthetic::{synthetic_input, synthetic_inputs};
