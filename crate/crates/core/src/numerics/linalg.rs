use super::Matrix;
use crate::error::{Error, Result};

/// `c = a * b` on raw row-major buffers (`a` is m x k, `b` is k x n).
/// With `accumulate` the product is added to `c` instead of replacing it.
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64], accumulate: bool) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the slices have exactly the lengths implied by the strides.
    unsafe {
        matrixmultiply::dgemm(
            m, k, n, 1.0,
            a.as_ptr(), k as isize, 1,
            b.as_ptr(), n as isize, 1,
            beta,
            c.as_mut_ptr(), n as isize, 1,
        );
    }
}

/// `c = aᵀ * b` where `a` is stored row-major as k x m.
pub(crate) fn gemm_tn(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64], accumulate: bool) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: as in `gemm`, with `a` addressed column-wise.
    unsafe {
        matrixmultiply::dgemm(
            m, k, n, 1.0,
            a.as_ptr(), 1, m as isize,
            b.as_ptr(), n as isize, 1,
            beta,
            c.as_mut_ptr(), n as isize, 1,
        );
    }
}

/// `c = a * bᵀ` where `b` is stored row-major as n x k.
pub(crate) fn gemm_nt(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64], accumulate: bool) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: as in `gemm`, with `b` addressed column-wise.
    unsafe {
        matrixmultiply::dgemm(
            m, k, n, 1.0,
            a.as_ptr(), k as isize, 1,
            b.as_ptr(), 1, k as isize,
            beta,
            c.as_mut_ptr(), n as isize, 1,
        );
    }
}

pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols() != b.rows() {
        return Err(Error::contract(format!(
            "matmul {}x{} by {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    let mut c = Matrix::zeros(a.rows(), b.cols());
    gemm(a.rows(), a.cols(), b.cols(), a.data(), b.data(), c.data_mut(), false);
    Ok(c)
}

pub fn matvec(a: &Matrix, x: &[f64]) -> Result<Vec<f64>> {
    if a.cols() != x.len() {
        return Err(Error::contract(format!(
            "matvec {}x{} by vector of length {}",
            a.rows(),
            a.cols(),
            x.len()
        )));
    }
    Ok((0..a.rows()).map(|i| dot(a.row(i), x)).collect())
}

/// `aᵀ y` without forming the transpose.
pub fn matvec_t(a: &Matrix, y: &[f64]) -> Result<Vec<f64>> {
    if a.rows() != y.len() {
        return Err(Error::contract(format!(
            "transposed matvec {}x{} by vector of length {}",
            a.rows(),
            a.cols(),
            y.len()
        )));
    }
    let mut out = vec![0.0; a.cols()];
    for (i, &yi) in y.iter().enumerate() {
        axpy(yi, a.row(i), &mut out);
    }
    Ok(out)
}

/// Dot product with four independent accumulators so the loop vectorises.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `y += alpha * x`.
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    if alpha == 0.0 {
        return;
    }
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine of the angle between `a` and `b`. Fails for zero vectors, where the
/// angle is undefined.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::contract(format!(
            "cosine of vectors with lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::UndefinedAngle("zero-norm vector".into()));
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Columns of `m`, each scaled to unit length. Zero columns come back as `None`.
pub(crate) fn unit_columns(m: &Matrix) -> Vec<Option<Vec<f64>>> {
    let t = m.transpose();
    (0..t.rows())
        .map(|j| {
            let c = t.row(j);
            let n = norm(c);
            (n > 0.0).then(|| c.iter().map(|v| v / n).collect())
        })
        .collect()
}

/// Smallest pairwise cosine between the columns of `m`, i.e. the cosine of
/// the widest angle. A single column gives 1.
pub fn max_pairwise_column_cosine(m: &Matrix) -> Result<f64> {
    let cols = unit_columns(m);
    if let Some(j) = cols.iter().position(Option::is_none) {
        return Err(Error::UndefinedAngle(format!("column {j} is zero")));
    }
    let cols: Vec<Vec<f64>> = cols.into_iter().flatten().collect();
    let mut lo = 1.0f64;
    for i in 0..cols.len() {
        for j in i + 1..cols.len() {
            lo = lo.min(dot(&cols[i], &cols[j]).clamp(-1.0, 1.0));
        }
    }
    Ok(lo)
}

const POWER_MAX_ITERS: usize = 10_000;
const POWER_TOL: f64 = 1e-12;

/// Deterministic start vector with no special alignment to coordinate axes.
fn start_vector(n: usize) -> Vec<f64> {
    let mut rng = crate::rng::stream(0x70_6f77_6572, &[n as u64]);
    let v = crate::rng::normal_vec(&mut rng, n);
    let s = norm(&v);
    v.into_iter().map(|x| x / s).collect()
}

/// Power iteration on `mᵀm`. Returns (σ², right singular vector).
fn dominant(m: &Matrix) -> Result<(f64, Vec<f64>)> {
    let mut v = start_vector(m.cols());
    let mut last = f64::NAN;
    for _ in 0..POWER_MAX_ITERS {
        let mv = matvec(m, &v)?;
        let mut w = matvec_t(m, &mv)?;
        let rayleigh = dot(&mv, &mv);
        let n = norm(&w);
        if !n.is_finite() {
            return Err(Error::numerical("power iteration", f64::INFINITY));
        }
        if n == 0.0 {
            return Ok((0.0, v));
        }
        w.iter_mut().for_each(|x| *x /= n);
        v = w;
        if (rayleigh - last).abs() <= POWER_TOL * rayleigh {
            return Ok((rayleigh, v));
        }
        last = rayleigh;
    }
    let mv = matvec(m, &v)?;
    let rayleigh = dot(&mv, &mv);
    Err(Error::numerical(
        "power iteration did not converge",
        ((rayleigh - last) / rayleigh).abs(),
    ))
}

/// The two largest singular values (σ1 >= σ2) by power iteration on mᵀm with
/// deflation of `m` itself, so a rank-one input yields σ2 at rounding level
/// rather than at the square root of it.
pub fn top2_singular_values(m: &Matrix) -> Result<(f64, f64)> {
    if !m.data().iter().all(|v| v.is_finite()) {
        return Err(Error::numerical("non-finite matrix entry", f64::NAN));
    }
    // Iterate on the smaller Gram side.
    let work = if m.rows() < m.cols() { m.transpose() } else { m.clone() };
    let (l1, v1) = dominant(&work)?;
    let s1 = l1.sqrt();
    if s1 == 0.0 || work.cols() == 1 {
        return Ok((s1, 0.0));
    }
    // m' = m - s1 u1 v1ᵀ with u1 = m v1 / s1, i.e. m' = m - (m v1) v1ᵀ.
    let mv1 = matvec(&work, &v1)?;
    let mut deflated = work.clone();
    for i in 0..deflated.rows() {
        let a = mv1[i];
        let row = &mut deflated.data_mut()[i * v1.len()..(i + 1) * v1.len()];
        axpy(-a, &v1, row);
    }
    if deflated.frobenius_norm() <= 1e-13 * s1 {
        return Ok((s1, 0.0));
    }
    let (l2, _) = dominant(&deflated)?;
    let s2 = l2.sqrt().min(s1);
    Ok((s1, s2))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_basics() {
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let c = cosine_similarity(&[1.0, 2.0], &[2.0, 4.0]).unwrap();
        assert!((c - 1.0).abs() < 1e-15);
        assert!(matches!(
            cosine_similarity(&[0.0, 0.0], &[1.0, 1.0]),
            Err(Error::UndefinedAngle(_))
        ));
    }

    #[test]
    fn widest_column_angle() {
        let m = Matrix::from_rows(&[vec![1.0, 1.0], vec![0.0, 1.0]]).unwrap();
        let s = max_pairwise_column_cosine(&m).unwrap();
        assert!((s - 1.0 / 2f64.sqrt()).abs() < 1e-15);
        let id = Matrix::identity(3);
        assert_eq!(max_pairwise_column_cosine(&id).unwrap(), 0.0);
        let z = Matrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap();
        assert!(max_pairwise_column_cosine(&z).is_err());
    }

    #[test]
    fn top2_diagonal_and_rank_one() {
        let d = Matrix::from_rows(&[vec![3.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]]).unwrap();
        let (s1, s2) = top2_singular_values(&d).unwrap();
        assert!((s1 - 3.0).abs() < 1e-9 && (s2 - 1.0).abs() < 1e-9);

        let r1 = Matrix::from_fn(5, 4, |i, j| (i as f64 + 1.0) * (j as f64 - 1.5));
        let (s1, s2) = top2_singular_values(&r1).unwrap();
        assert!(s1 > 0.0 && s2 <= 1e-10 * s1, "{s1} {s2}");
    }

    #[test]
    fn top2_rejects_non_finite() {
        let m = Matrix::from_rows(&[vec![1.0, f64::NAN]]).unwrap();
        assert!(top2_singular_values(&m).is_err());
    }

    #[test]
    fn gemm_variants_agree_with_naive() {
        let a = Matrix::from_fn(3, 4, |i, j| (i * 4 + j) as f64 * 0.5 - 2.0);
        let b = Matrix::from_fn(4, 2, |i, j| (i as f64 - j as f64) * 0.25);
        let c = matmul(&a, &b).unwrap();
        let mut tn = vec![0.0; 6];
        gemm_tn(3, 4, 2, a.transpose().data(), b.data(), &mut tn, false);
        let mut nt = vec![0.0; 6];
        gemm_nt(3, 4, 2, a.data(), b.transpose().data(), &mut nt, false);
        for i in 0..3 {
            for j in 0..2 {
                let naive: f64 = (0..4).map(|k| a.get(i, k) * b.get(k, j)).sum();
                assert!((c.get(i, j) - naive).abs() < 1e-12);
                assert!((tn[i * 2 + j] - naive).abs() < 1e-12);
                assert!((nt[i * 2 + j] - naive).abs() < 1e-12);
            }
        }
    }
}
