use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::numerics::cosine_similarity;
use crate::rng;

#[derive(Clone, Debug, PartialEq)]
pub struct Rank1Certificate {
    /// The probe vectors were linearly independent.
    pub independent: bool,
    /// Smallest pairwise |cos| among the propagated vectors.
    pub min_abs_cosine: f64,
    /// Independent probes that all map to one direction: the propagation
    /// matrix has rank one on their span.
    pub fires: bool,
}

/// Checks whether independent probes all come out parallel.
pub fn rank1_certificate(probes: &[Vec<f64>], outputs: &[Vec<f64>], tol: f64) -> Result<Rank1Certificate> {
    if probes.len() < 2 || probes.len() != outputs.len() {
        return Err(Error::contract("rank-1 certificate needs at least two probes, one output each"));
    }
    let dim = probes[0].len();
    let m = DMatrix::from_fn(dim, probes.len(), |i, j| probes[j][i]);
    let sv = m.singular_values();
    let independent = probes.len() <= dim && sv.min() > 1e-10 * sv.max();
    let mut min_abs = 1.0f64;
    for a in 0..outputs.len() {
        for b in a + 1..outputs.len() {
            min_abs = min_abs.min(cosine_similarity(&outputs[a], &outputs[b])?.abs());
        }
    }
    Ok(Rank1Certificate {
        independent,
        min_abs_cosine: min_abs,
        fires: independent && min_abs >= 1.0 - tol,
    })
}

/// Probes a linear map `f` with `n` standard-normal vectors of length `dim`.
pub fn certify_rank1(f: impl Fn(&[f64]) -> Result<Vec<f64>>, dim: usize, n: usize, seed: u64, tol: f64) -> Result<Rank1Certificate> {
    let probes: Vec<Vec<f64>> = (0..n)
        .map(|j| rng::normal_vec(&mut rng::stream(seed, &[rng::name_key("rank1"), j as u64]), dim))
        .collect();
    let outputs = probes.iter().map(|p| f(p)).collect::<Result<Vec<_>>>()?;
    rank1_certificate(&probes, &outputs, tol)
}
