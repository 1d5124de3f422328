use nalgebra::DMatrix;

use crate::attribution::PatternSet;
use crate::error::{Error, Result};
use crate::model::{LayerKind, Network};
use crate::numerics::Matrix;

use super::simulate::sigma_ratio;

fn to_na(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.data())
}

/// Thin SVD with singular values in descending order: (U, σ, Vᵀ).
fn svd_sorted(m: &Matrix) -> Result<(DMatrix<f64>, Vec<f64>, DMatrix<f64>)> {
    let svd = to_na(m).svd(true, true);
    let (u, vt) = (svd.u.expect("requested"), svd.v_t.expect("requested"));
    let s = svd.singular_values;
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    let u = DMatrix::from_fn(u.nrows(), order.len(), |i, j| u[(i, order[j])]);
    let vt = DMatrix::from_fn(order.len(), vt.ncols(), |i, j| vt[(order[i], j)]);
    if !s.iter().all(|v| v.is_finite()) {
        return Err(Error::numerical("singular value decomposition", f64::NAN));
    }
    // Values at rounding level are zero; their square roots would not be.
    let top = order.first().map_or(0.0, |&i| s[i]);
    let s = order.iter().map(|&i| if s[i] <= 1e-12 * top { 0.0 } else { s[i] }).collect();
    Ok((u, s, vt))
}

/// For consecutive layers `l, l+1` (weights in forward order, `[out, in]`),
/// σ1/σ2 of `T_l = √Σ_l V_lᵀ U_{l+1} √Σ_{l+1}`, where `U Σ Vᵀ` is the SVD of
/// the backward map `Wᵀ`. Infinite when σ2 vanishes.
pub fn interlayer_alignment(weights: &[Matrix]) -> Result<Vec<f64>> {
    let svds = weights
        .iter()
        .map(|w| svd_sorted(&w.transpose()))
        .collect::<Result<Vec<_>>>()?;
    let mut out = Vec::with_capacity(weights.len().saturating_sub(1));
    for l in 0..weights.len().saturating_sub(1) {
        let (_, s_l, vt_l) = &svds[l];
        let (u_n, s_n, _) = &svds[l + 1];
        if vt_l.ncols() != u_n.nrows() {
            return Err(Error::contract(format!(
                "layer {} outputs {} values, layer {} takes {}",
                l,
                vt_l.ncols(),
                l + 1,
                u_n.nrows()
            )));
        }
        let mut t = vt_l * u_n;
        for i in 0..t.nrows() {
            for j in 0..t.ncols() {
                t[(i, j)] *= s_l[i].sqrt() * s_n[j].sqrt();
            }
        }
        let t = Matrix::new(t.nrows(), t.ncols(), t.transpose().as_slice().to_vec())?;
        out.push(sigma_ratio(&t)?);
    }
    Ok(out)
}

/// `[out, in]` matrix of a dense layer, or the centre tap `[co, ci]` of a
/// convolution.
pub fn layer_matrix_1x1(net: &Network, layer: &str) -> Result<Matrix> {
    let w = net.weight(layer)?;
    let s = w.shape();
    match *s {
        [o, i] => Matrix::new(o, i, w.data().to_vec()),
        [co, ci, kh, kw] => Ok(Matrix::from_fn(co, ci, |a, b| w.data()[((a * ci + b) * kh + kh / 2) * kw + kw / 2])),
        _ => Err(Error::contract(format!("layer `{layer}` has weight shape {s:?}"))),
    }
}

/// One matrix per parameterised layer in forward order: dense weights as
/// they are, convolutions sliced to their centre tap. A dense layer that
/// reads a flattened `[C, H, W]` map is summed over positions to `[out, C]`
/// (its action on spatially constant inputs) so the chain stays composable.
pub fn chain_matrices_forward(net: &Network) -> Result<Vec<Matrix>> {
    let mut out: Vec<Matrix> = Vec::new();
    for (l, _) in net.all_layers() {
        if !l.has_params() {
            continue;
        }
        let mut m = layer_matrix_1x1(net, &l.name)?;
        if let (LayerKind::Dense { .. }, Some(prev)) = (&l.kind, out.last()) {
            let c = prev.rows();
            if m.cols() != c && m.cols() % c == 0 {
                let area = m.cols() / c;
                m = Matrix::from_fn(m.rows(), c, |o, ch| (0..area).map(|p| m.get(o, ch * area + p)).sum());
            }
        }
        out.push(m);
    }
    Ok(out)
}

/// The same matrices in backward order, ready for a `FromModel` chain: the
/// first has the logit layer's size.
pub fn chain_matrices_from_network(net: &Network) -> Result<Vec<Matrix>> {
    let mut m = chain_matrices_forward(net)?;
    m.reverse();
    Ok(m)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PatternRatio {
    pub layer: String,
    pub pattern: f64,
    pub weight: f64,
    pub product: f64,
    /// Rows left out because their pattern was degenerate.
    pub excluded_rows: Vec<usize>,
}

/// σ1/σ2 of A, W and W⊙A per layer, convolutions flattened to
/// `[co, ci·kh·kw]`.
pub fn pattern_ratio_report(net: &Network, patterns: &PatternSet) -> Result<Vec<PatternRatio>> {
    let mut out = Vec::new();
    for lp in &patterns.layers {
        let w = net.weight(&lp.layer)?;
        let rows = w.shape()[0];
        let cols = w.len() / rows;
        let keep: Vec<usize> = (0..rows).filter(|&i| !lp.degenerate.get(i).copied().unwrap_or(false)).collect();
        let excluded_rows: Vec<usize> = (0..rows).filter(|i| !keep.contains(i)).collect();
        let pick = |data: &[f64]| Matrix::from_fn(keep.len(), cols, |i, j| data[keep[i] * cols + j]);
        let (a, wm) = (pick(lp.pattern.data()), pick(w.data()));
        let prod = Matrix::from_fn(keep.len(), cols, |i, j| a.get(i, j) * wm.get(i, j));
        if keep.is_empty() {
            out.push(PatternRatio {
                layer: lp.layer.clone(),
                pattern: f64::NAN,
                weight: f64::NAN,
                product: f64::NAN,
                excluded_rows,
            });
            continue;
        }
        out.push(PatternRatio {
            layer: lp.layer.clone(),
            pattern: sigma_ratio(&a)?,
            weight: sigma_ratio(&wm)?,
            product: sigma_ratio(&prod)?,
            excluded_rows,
        });
    }
    Ok(out)
}
