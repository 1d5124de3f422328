use crate::error::{Error, Result};
use crate::numerics::{max_pairwise_column_cosine, Matrix};

use super::simulate::multiply;

/// Widest-angle cosine of the running product after each multiplication.
pub fn sn_sequence(matrices: &[Matrix]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(matrices.len());
    let mut m: Option<Matrix> = None;
    for (t, a) in matrices.iter().enumerate() {
        let mut next = match &m {
            None => a.clone(),
            Some(prev) => {
                if prev.cols() != a.rows() {
                    return Err(Error::contract(format!(
                        "matrix {} has {} rows, product has {} columns",
                        t + 1,
                        a.rows(),
                        prev.cols()
                    )));
                }
                multiply(prev, a)
            }
        };
        let n = next.frobenius_norm();
        if n > 0.0 {
            next.data_mut().iter_mut().for_each(|v| *v /= n);
        }
        let s = max_pairwise_column_cosine(&next).map_err(|e| match e {
            Error::UndefinedAngle(why) => Error::UndefinedAngle(format!("step {}: {why}", t + 1)),
            e => e,
        })?;
        out.push(s);
        m = Some(next);
    }
    Ok(out)
}

/// Which cases excluded from rank-1 convergence a non-negative matrix hits.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Diagnosis {
    pub zero_columns: Vec<usize>,
    /// Orthogonal pairs among the non-zero columns.
    pub orthogonal_pairs: Vec<(usize, usize)>,
}

impl Diagnosis {
    pub fn ok(&self) -> bool {
        self.zero_columns.is_empty() && self.orthogonal_pairs.is_empty()
    }
}

/// A column is zero when its norm is at most `tol`; two columns are
/// orthogonal when their cosine is at most `tol`.
pub fn convergence_conditions(m: &Matrix, tol: f64) -> Result<Diagnosis> {
    if let Some(v) = m.data().iter().find(|&&v| v < 0.0 || !v.is_finite()) {
        return Err(Error::contract(format!("matrix must be non-negative, found {v}")));
    }
    let cols: Vec<Vec<f64>> = (0..m.cols()).map(|j| m.column(j)).collect();
    let norms: Vec<f64> = cols.iter().map(|c| crate::numerics::norm(c)).collect();
    let mut d = Diagnosis::default();
    for j in 0..cols.len() {
        if norms[j] <= tol {
            d.zero_columns.push(j);
        }
    }
    for a in 0..cols.len() {
        for b in a + 1..cols.len() {
            if norms[a] <= tol || norms[b] <= tol {
                continue;
            }
            if crate::numerics::dot(&cols[a], &cols[b]) / (norms[a] * norms[b]) <= tol {
                d.orthogonal_pairs.push((a, b));
            }
        }
    }
    Ok(d)
}
