//! Single-layer relevance rules.
//!
//! The crate-internal functions work on any [`LinearOp`]; the public ones are
//! thin dense-matrix wrappers with the weight convention `W[out, in]`.
//! Biases act as a constant-one input: they enter denominators, and the
//! relevance they would receive is dropped. An output neuron with a zero
//! denominator passes on nothing.

use crate::error::{Error, Result};
use crate::model::ops::{LinearOp, Transform};
use crate::numerics::{percentile, Matrix};

/// Positive and negative parts of an activation vector.
pub(crate) struct Signs {
    pub pos: Vec<f64>,
    pub neg: Vec<f64>,
    pub any_neg: bool,
}

impl Signs {
    pub fn of(h: &[f64]) -> Self {
        Signs {
            pos: h.iter().map(|v| v.max(0.0)).collect(),
            neg: h.iter().map(|v| v.min(0.0)).collect(),
            any_neg: h.iter().any(|&v| v < 0.0),
        }
    }
}

fn add_into(a: &mut [f64], b: &[f64]) {
    a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
}

fn hadamard(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x * y).collect()
}

/// `r / den` with zero denominators mapped to zero.
pub(crate) fn safe_ratio(r: &[f64], den: &[f64]) -> Vec<f64> {
    r.iter().zip(den).map(|(&r, &d)| if d == 0.0 { 0.0 } else { r / d }).collect()
}

/// Σ_k [w_ik h_k]⁺ + [b_i]⁺.
pub(crate) fn zplus_den(op: &LinearOp, h: &Signs, bias: &[f64]) -> Vec<f64> {
    let mut den = op.forward(Transform::Positive, &h.pos);
    if h.any_neg {
        add_into(&mut den, &op.forward(Transform::Negative, &h.neg));
    }
    den.iter_mut().zip(bias).for_each(|(d, b)| *d += b.max(0.0));
    den
}

/// Σ_k [w_ik h_k]⁻ + [b_i]⁻ (non-positive).
pub(crate) fn zminus_den(op: &LinearOp, h: &Signs, bias: &[f64]) -> Vec<f64> {
    let mut den = op.forward(Transform::Negative, &h.pos);
    if h.any_neg {
        add_into(&mut den, &op.forward(Transform::Positive, &h.neg));
    }
    den.iter_mut().zip(bias).for_each(|(d, b)| *d += b.min(0.0));
    den
}

/// Relevance routed through the positive contributions `[w_ij h_j]⁺`.
pub(crate) fn zplus_back(op: &LinearOp, h: &Signs, den: &[f64], r: &[f64]) -> Vec<f64> {
    let s = safe_ratio(r, den);
    let mut out = hadamard(&h.pos, &op.transpose(Transform::Positive, &s));
    if h.any_neg {
        add_into(&mut out, &hadamard(&h.neg, &op.transpose(Transform::Negative, &s)));
    }
    out
}

/// Relevance routed through the negative contributions `[w_ij h_j]⁻`,
/// normalised by their own (negative) sums, so the weights are non-negative.
pub(crate) fn zminus_back(op: &LinearOp, h: &Signs, den: &[f64], r: &[f64]) -> Vec<f64> {
    let s = safe_ratio(r, den);
    let mut out = hadamard(&h.pos, &op.transpose(Transform::Negative, &s));
    if h.any_neg {
        add_into(&mut out, &hadamard(&h.neg, &op.transpose(Transform::Positive, &s)));
    }
    out
}

/// `α Z⁺ r − β Z⁻ r`. With β = 0 the negative part is never evaluated, so
/// (1, 0) reproduces the z⁺ rule bit for bit.
pub(crate) fn alpha_beta_back(
    op: &LinearOp,
    h: &Signs,
    dens: (&[f64], Option<&[f64]>),
    r: &[f64],
    alpha: f64,
    beta: f64,
) -> Vec<f64> {
    let mut out = zplus_back(op, h, dens.0, r);
    if alpha != 1.0 {
        out.iter_mut().for_each(|v| *v *= alpha);
    }
    if beta != 0.0 {
        let neg = zminus_back(op, h, dens.1.expect("negative denominators"), r);
        out.iter_mut().zip(neg).for_each(|(v, n)| *v -= beta * n);
    }
    out
}

/// `z + ε·sign(z)` for pre-activations `z` that already include the bias.
pub(crate) fn lrpz_den(z: &[f64], eps: f64) -> Vec<f64> {
    z.iter().map(|&v| if v > 0.0 { v + eps } else if v < 0.0 { v - eps } else { 0.0 }).collect()
}

pub(crate) fn lrpz_back(op: &LinearOp, h: &[f64], den: &[f64], r: &[f64]) -> Vec<f64> {
    hadamard(h, &op.transpose(Transform::Plain, &safe_ratio(r, den)))
}

pub(crate) fn w2_den(op: &LinearOp) -> Vec<f64> {
    op.forward(Transform::Square, &vec![1.0; op.in_len()])
}

pub(crate) fn w2_back(op: &LinearOp, den: &[f64], r: &[f64]) -> Vec<f64> {
    op.transpose(Transform::Square, &safe_ratio(r, den))
}

fn check_box(x: &[f64], lower: f64, upper: f64) -> Result<()> {
    if !(lower <= upper) {
        return Err(Error::contract(format!("bounds [{lower}, {upper}] are empty")));
    }
    let slack = 1e-12 * (1.0 + lower.abs().max(upper.abs()));
    if let Some(v) = x.iter().find(|&&v| v < lower - slack || v > upper + slack) {
        return Err(Error::contract(format!("input value {v} outside the box [{lower}, {upper}]")));
    }
    Ok(())
}

pub(crate) fn bounded_den(op: &LinearOp, x: &[f64], lower: f64, upper: f64) -> Result<Vec<f64>> {
    check_box(x, lower, upper)?;
    let ones = vec![1.0; op.in_len()];
    let wx = op.forward(Transform::Plain, x);
    let wp = op.forward(Transform::Positive, &ones);
    let wn = op.forward(Transform::Negative, &ones);
    Ok((0..wx.len()).map(|i| wx[i] - lower * wp[i] - upper * wn[i]).collect())
}

pub(crate) fn bounded_back(op: &LinearOp, x: &[f64], lower: f64, upper: f64, den: &[f64], r: &[f64]) -> Vec<f64> {
    let s = safe_ratio(r, den);
    let a = op.transpose(Transform::Plain, &s);
    let p = op.transpose(Transform::Positive, &s);
    let n = op.transpose(Transform::Negative, &s);
    (0..a.len()).map(|j| x[j] * a[j] - lower * p[j] - upper * n[j]).collect()
}

/// How a modified-gradient rule treats relevance arriving at a ReLU.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ReluVariant {
    GuidedBackprop,
    Deconvnet,
    RectGrad { q: f64 },
}

/// Backward step through a ReLU for the modified-gradient rules. `mask`
/// marks units whose pre-activation was positive.
pub fn propagate_relu_modified(mask: &[bool], r: &[f64], variant: ReluVariant) -> Result<Vec<f64>> {
    if mask.len() != r.len() {
        return Err(Error::contract("mask and relevance lengths differ"));
    }
    let masked = || mask.iter().zip(r).map(|(&m, &v)| if m { v } else { 0.0 });
    Ok(match variant {
        ReluVariant::GuidedBackprop => masked().map(|v| v.max(0.0)).collect(),
        ReluVariant::Deconvnet => r.iter().map(|v| v.max(0.0)).collect(),
        ReluVariant::RectGrad { q } => {
            let m: Vec<f64> = masked().collect();
            let tau = percentile(&m, q)?;
            m.into_iter().map(|v| if v > tau { v } else { 0.0 }).collect()
        }
    })
}

fn dense(w: &Matrix) -> LinearOp<'_> {
    LinearOp::Dense {
        w: w.data(),
        rows: w.rows(),
        cols: w.cols(),
        bias: None,
    }
}

fn check(w: &Matrix, h: Option<&[f64]>, r: &[f64]) -> Result<()> {
    if r.len() != w.rows() || h.is_some_and(|h| h.len() != w.cols()) {
        return Err(Error::contract(format!(
            "weights {}x{} do not match relevance of length {}",
            w.rows(),
            w.cols(),
            r.len()
        )));
    }
    Ok(())
}

/// z⁺ rule: `r_in,j = Σ_i r_i [w_ij h_j]⁺ / Σ_k [w_ik h_k]⁺`.
pub fn propagate_zplus(w: &Matrix, h: &[f64], r: &[f64]) -> Result<Vec<f64>> {
    check(w, Some(h), r)?;
    let op = dense(w);
    let s = Signs::of(h);
    let den = zplus_den(&op, &s, &vec![0.0; w.rows()]);
    Ok(zplus_back(&op, &s, &den, r))
}

/// LRP-z rule with a sign-matched stabiliser `eps` (0 gives the plain rule)
/// and an optional bias that joins the denominator.
pub fn propagate_lrp_z(w: &Matrix, bias: Option<&[f64]>, h: &[f64], r: &[f64], eps: f64) -> Result<Vec<f64>> {
    check(w, Some(h), r)?;
    let op = dense(w);
    let mut z = op.forward(Transform::Plain, h);
    if let Some(b) = bias {
        if b.len() != z.len() {
            return Err(Error::contract("bias length differs from output length"));
        }
        add_into(&mut z, b);
    }
    Ok(lrpz_back(&op, h, &lrpz_den(&z, eps), r))
}

/// LRP-αβ rule; requires α − β = 1 and α ≥ 1.
pub fn propagate_alpha_beta(w: &Matrix, h: &[f64], r: &[f64], alpha: f64, beta: f64) -> Result<Vec<f64>> {
    super::rule::check_alpha_beta(alpha, beta)?;
    check(w, Some(h), r)?;
    let op = dense(w);
    let s = Signs::of(h);
    let zero = vec![0.0; w.rows()];
    let pos = zplus_den(&op, &s, &zero);
    let neg = zminus_den(&op, &s, &zero);
    Ok(alpha_beta_back(&op, &s, (&pos, Some(&neg)), r, alpha, beta))
}

/// Input-layer rules of deep Taylor decomposition.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DtdVariant {
    /// `w²` rule, independent of the input.
    WSquare,
    /// Bounded-input rule for inputs in `[lower, upper]`.
    Bounded { lower: f64, upper: f64 },
}

pub fn propagate_dtd_input(w: &Matrix, x: &[f64], r: &[f64], variant: DtdVariant) -> Result<Vec<f64>> {
    check(w, Some(x), r)?;
    let op = dense(w);
    match variant {
        DtdVariant::WSquare => Ok(w2_back(&op, &w2_den(&op), r)),
        DtdVariant::Bounded { lower, upper } => {
            let den = bounded_den(&op, x, lower, upper)?;
            Ok(bounded_back(&op, x, lower, upper, &den, r))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PatternMode {
    /// `Aᵀ r`: signal reconstruction.
    Net,
    /// `(W ⊙ A)ᵀ r`.
    Attribution,
}

/// Pattern backward step. `a` is the pattern matrix, `w` the layer weights
/// (only read in attribution mode).
pub fn propagate_pattern(w: &Matrix, a: &Matrix, r: &[f64], mode: PatternMode) -> Result<Vec<f64>> {
    check(a, None, r)?;
    if w.rows() != a.rows() || w.cols() != a.cols() {
        return Err(Error::contract("pattern and weight shapes differ"));
    }
    let op = dense(w);
    Ok(match mode {
        PatternMode::Net => op.transpose(Transform::Swap(a.data()), r),
        PatternMode::Attribution => op.transpose(Transform::Hadamard(a.data()), r),
    })
}

/// One linear layer of the DeepLIFT multiplier recursion. `delta_in` gives
/// the sign of each input unit's difference from the reference; `m_pos` and
/// `m_neg` are the multipliers of the positive and negative parts of the
/// outputs. The full rule lets both parts feed both chains; the ablation
/// keeps `W⁺` on the positive chain and `W⁻` on the negative one.
pub fn propagate_deeplift_linear(
    w: &Matrix,
    delta_in: &[f64],
    m_pos: &[f64],
    m_neg: &[f64],
    ablation: bool,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check(w, Some(delta_in), m_pos)?;
    check(w, None, m_neg)?;
    let op = dense(w);
    let (p, n) = deeplift_linear_multipliers(&op, m_pos, m_neg, ablation);
    let mask = |v: Vec<f64>, keep: fn(f64) -> bool| -> Vec<f64> {
        v.into_iter().zip(delta_in).map(|(m, &d)| if keep(d) { m } else { 0.0 }).collect()
    };
    Ok((mask(p, |d| d > 0.0), mask(n, |d| d < 0.0)))
}

/// Unmasked multipliers of the input parts for one linear layer.
pub(crate) fn deeplift_linear_multipliers(op: &LinearOp, m_pos: &[f64], m_neg: &[f64], ablation: bool) -> (Vec<f64>, Vec<f64>) {
    if ablation {
        return (op.transpose(Transform::Positive, m_pos), op.transpose(Transform::Negative, m_neg));
    }
    if m_pos == m_neg {
        let a = op.transpose(Transform::Plain, m_pos);
        return (a.clone(), a);
    }
    let pp = op.transpose(Transform::Positive, m_pos);
    let nn = op.transpose(Transform::Negative, m_neg);
    let pn = op.transpose(Transform::Positive, m_neg);
    let np = op.transpose(Transform::Negative, m_pos);
    (
        pp.iter().zip(&nn).map(|(a, b)| a + b).collect(),
        pn.iter().zip(&np).map(|(a, b)| a + b).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn zplus_hand_example() {
        let r = propagate_zplus(&m(&[&[1.0, -1.0], &[2.0, 1.0]]), &[1.0, 1.0], &[3.0, 3.0]).unwrap();
        assert_eq!(r, vec![5.0, 1.0]);
        let z = propagate_zplus(&m(&[&[1.0, -1.0]]), &[1.0, 1.0], &[0.0]).unwrap();
        assert_eq!(z, vec![0.0, 0.0]);
    }

    #[test]
    fn lrp_z_hand_example() {
        let w = m(&[&[2.0, -1.0], &[4.0, 1.0]]);
        let r = propagate_lrp_z(&w, None, &[1.0, 1.0], &[1.0, 5.0], 0.0).unwrap();
        assert_eq!(r, vec![6.0, 0.0]);
        let d = m(&[&[3.0, 0.0], &[0.0, 0.5]]);
        assert_eq!(propagate_lrp_z(&d, None, &[2.0, 4.0], &[1.5, -2.0], 0.0).unwrap(), vec![1.5, -2.0]);
    }

    #[test]
    fn w2_hand_example_ignores_x() {
        let w = m(&[&[1.0, 2.0]]);
        let a = propagate_dtd_input(&w, &[0.3, 0.9], &[5.0], DtdVariant::WSquare).unwrap();
        let b = propagate_dtd_input(&w, &[-7.0, 2.0], &[5.0], DtdVariant::WSquare).unwrap();
        assert_eq!(a, vec![1.0, 4.0]);
        assert_eq!(a, b);
    }

    #[test]
    fn bounded_rule_degenerate_box_and_range_check() {
        let w = m(&[&[1.0, -2.0]]);
        let x = [0.5, 0.5];
        let r = propagate_dtd_input(&w, &x, &[1.0], DtdVariant::Bounded { lower: 0.5, upper: 0.5 }).unwrap();
        assert_eq!(r, vec![0.0, 0.0]);
        let bad = propagate_dtd_input(&w, &[2.0, 0.0], &[1.0], DtdVariant::Bounded { lower: 0.0, upper: 1.0 });
        assert!(matches!(bad, Err(Error::Contract(_))));
    }

    #[test]
    fn relu_variants() {
        let g = propagate_relu_modified(&[true, false], &[2.0, -3.0], ReluVariant::GuidedBackprop).unwrap();
        assert_eq!(g, vec![2.0, 0.0]);
        let d = propagate_relu_modified(&[false, false], &[-1.0, 4.0], ReluVariant::Deconvnet).unwrap();
        assert_eq!(d, vec![0.0, 4.0]);
        let q = propagate_relu_modified(&[true; 4], &[1.0, 2.0, 3.0, 4.0], ReluVariant::RectGrad { q: 50.0 }).unwrap();
        assert_eq!(q, vec![0.0, 0.0, 3.0, 4.0]);
    }

    #[test]
    fn deeplift_hand_example() {
        let w = m(&[&[1.0, -1.0]]);
        let (p, n) = propagate_deeplift_linear(&w, &[1.0, -1.0], &[1.0], &[0.0], false).unwrap();
        assert_eq!(p, vec![1.0, 0.0]);
        assert_eq!(n, vec![0.0, -1.0]);
        let (_, n) = propagate_deeplift_linear(&w, &[1.0, -1.0], &[1.0], &[0.0], true).unwrap();
        assert_eq!(n, vec![0.0, 0.0]);
    }
}
