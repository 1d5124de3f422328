use crate::error::{Error, Result};
use crate::numerics::{gemm, top2_singular_values, Matrix};
use crate::rng;

/// How each chain matrix is drawn. Random families start from i.i.d.
/// standard-normal entries.
#[derive(Clone, Debug, PartialEq)]
pub enum ChainFamily {
    Normal,
    /// Normal matrices, positive part of the running product after each step.
    ReluAfterProduct,
    NonnegativeClipped,
    PositiveAbs,
    /// `αW⁺ + βW⁻` with `W⁻ = min(W, 0)`.
    AlphaBeta { alpha: f64, beta: f64 },
    /// Given matrices, in chain order, with the positive part taken after
    /// each product.
    FromModel(Vec<Matrix>),
}

impl ChainFamily {
    pub fn name(&self) -> String {
        match self {
            ChainFamily::Normal => "normal".into(),
            ChainFamily::ReluAfterProduct => "relu_after_product".into(),
            ChainFamily::NonnegativeClipped => "nonnegative_clipped".into(),
            ChainFamily::PositiveAbs => "positive_abs".into(),
            ChainFamily::AlphaBeta { alpha, beta } => format!("alphabeta:{alpha}:{beta}"),
            ChainFamily::FromModel(_) => "from_model".into(),
        }
    }

    fn relu_after_product(&self) -> bool {
        matches!(self, ChainFamily::ReluAfterProduct | ChainFamily::FromModel(_))
    }
}

/// Layer sizes of a VGG-16-like network read from the logits backwards,
/// with 1×1 kernels.
pub const VGG_DIMS: [usize; 13] = [10, 512, 512, 512, 512, 512, 256, 256, 256, 128, 128, 64, 64];

#[derive(Clone, Debug, PartialEq)]
pub struct ChainSpec {
    pub family: ChainFamily,
    /// Matrix `t` (1-based) is `dims[t-1] × dims[t]`; the first matrix has
    /// the last layer's size.
    pub dims: Vec<usize>,
    pub seed: u64,
}

impl ChainSpec {
    pub fn square(family: ChainFamily, dim: usize, steps: usize, seed: u64) -> Self {
        ChainSpec {
            family,
            dims: vec![dim; steps + 1],
            seed,
        }
    }

    /// The VGG-like schedule with every size after the first divided by
    /// `divisor` (at least 2).
    pub fn vgg(family: ChainFamily, divisor: usize, seed: u64) -> Self {
        let d = divisor.max(1);
        let dims = VGG_DIMS
            .iter()
            .enumerate()
            .map(|(i, &v)| if i == 0 { v } else { (v / d).max(2) })
            .collect();
        ChainSpec { family, dims, seed }
    }

    /// Chain built from a network's matrices (see `chain_matrices_from_network`).
    pub fn from_matrices(matrices: Vec<Matrix>) -> Result<Self> {
        let first = matrices.first().ok_or_else(|| Error::contract("empty matrix chain"))?;
        let mut dims = vec![first.rows()];
        for m in &matrices {
            if m.rows() != *dims.last().unwrap() {
                return Err(Error::contract(format!(
                    "chain matrix of {}x{} does not follow one with {} columns",
                    m.rows(),
                    m.cols(),
                    dims.last().unwrap()
                )));
            }
            dims.push(m.cols());
        }
        Ok(ChainSpec {
            family: ChainFamily::FromModel(matrices),
            dims,
            seed: 0,
        })
    }

    pub fn steps(&self) -> usize {
        self.dims.len().saturating_sub(1)
    }

    /// The `t`-th matrix (1-based).
    pub fn matrix(&self, t: usize) -> Matrix {
        let (r, c) = (self.dims[t - 1], self.dims[t]);
        if let ChainFamily::FromModel(ms) = &self.family {
            return ms[t - 1].clone();
        }
        let raw = rng::normal_vec(&mut rng::stream(self.seed, &[rng::name_key("chain"), t as u64]), r * c);
        let data = match self.family {
            ChainFamily::Normal | ChainFamily::ReluAfterProduct => raw,
            ChainFamily::NonnegativeClipped => raw.into_iter().map(|v| v.max(0.0)).collect(),
            ChainFamily::PositiveAbs => raw.into_iter().map(f64::abs).collect(),
            ChainFamily::AlphaBeta { alpha, beta } => {
                raw.into_iter().map(|v| if v > 0.0 { alpha * v } else { beta * v }).collect()
            }
            ChainFamily::FromModel(_) => unreachable!(),
        };
        Matrix::new(r, c, data).expect("sizes match")
    }

    fn validate(&self) -> Result<()> {
        if self.steps() == 0 || self.dims.contains(&0) {
            return Err(Error::Config(format!("chain needs at least one step and positive sizes, got {:?}", self.dims)));
        }
        if let ChainFamily::AlphaBeta { alpha, beta } = self.family {
            if !(alpha.is_finite() && beta.is_finite()) {
                return Err(Error::Config("alpha and beta must be finite".into()));
            }
        }
        Ok(())
    }
}

/// Column statistics of the running product after one step.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainStep {
    pub step: usize,
    /// Smallest pairwise cosine between non-zero columns (the widest angle).
    pub s_min: Option<f64>,
    /// Median pairwise cosine between non-zero columns.
    pub s_median: Option<f64>,
    /// σ1/σ2 of the product; infinite when σ2 vanishes.
    pub sigma_ratio: f64,
    pub zero_columns: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChainReport {
    pub family: String,
    pub dims: Vec<usize>,
    pub seed: u64,
    /// The product is rescaled to unit Frobenius norm after every step,
    /// which leaves every statistic unchanged.
    pub renormalized: bool,
    pub steps: Vec<ChainStep>,
}

impl ChainReport {
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(|| "nan".to_string(), |v| v.to_string());
        let mut s = String::from("step,s_n_min,s_n_median,sigma_ratio\n");
        for st in &self.steps {
            s.push_str(&format!("{},{},{},{}\n", st.step, opt(st.s_min), opt(st.s_median), st.sigma_ratio));
        }
        s
    }
}

/// Pairwise cosines between the non-zero columns of `m`, plus the number of
/// zero columns.
pub(crate) fn column_cosines(m: &Matrix) -> (Vec<f64>, usize) {
    let (r, c) = (m.rows(), m.cols());
    let mut norms = vec![0.0; c];
    for i in 0..r {
        for (j, n) in norms.iter_mut().enumerate() {
            *n += m.get(i, j).powi(2);
        }
    }
    let keep: Vec<usize> = (0..c).filter(|&j| norms[j] > 0.0).collect();
    let k = keep.len();
    // Unit columns as rows of a k × r matrix, then their Gram matrix.
    let mut u = vec![0.0; k * r];
    for (a, &j) in keep.iter().enumerate() {
        let n = norms[j].sqrt();
        for i in 0..r {
            u[a * r + i] = m.get(i, j) / n;
        }
    }
    let mut g = vec![0.0; k * k];
    crate::numerics::gemm_nt(k, r, k, &u, &u, &mut g, false);
    let mut out = Vec::with_capacity(k * k.saturating_sub(1) / 2);
    for a in 0..k {
        for b in a + 1..k {
            out.push(g[a * k + b].clamp(-1.0, 1.0));
        }
    }
    (out, c - k)
}

pub(crate) fn sigma_ratio(m: &Matrix) -> Result<f64> {
    let (s1, s2) = top2_singular_values(m)?;
    Ok(if s2 <= 1e-12 * s1 { f64::INFINITY } else { s1 / s2 })
}

pub(crate) fn multiply(a: &Matrix, b: &Matrix) -> Matrix {
    let mut out = vec![0.0; a.rows() * b.cols()];
    gemm(a.rows(), a.cols(), b.cols(), a.data(), b.data(), &mut out, false);
    Matrix::new(a.rows(), b.cols(), out).expect("sizes match")
}

fn renormalize(m: &mut Matrix) {
    let n = m.frobenius_norm();
    if n > 0.0 {
        m.data_mut().iter_mut().for_each(|v| *v /= n);
    }
}

/// Builds the running product `M_t = M_{t-1} A_t` and records column
/// statistics after each step.
pub fn simulate_chain(spec: &ChainSpec) -> Result<ChainReport> {
    spec.validate()?;
    let relu = spec.family.relu_after_product();
    let mut m: Option<Matrix> = None;
    let mut steps = Vec::with_capacity(spec.steps());
    for t in 1..=spec.steps() {
        let a = spec.matrix(t);
        let mut next = match &m {
            None => a,
            Some(prev) => multiply(prev, &a),
        };
        if relu {
            next.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
        }
        renormalize(&mut next);
        let (mut cos, zero_columns) = column_cosines(&next);
        cos.sort_by(f64::total_cmp);
        let (s_min, s_median) = if cos.is_empty() {
            (None, None)
        } else {
            (Some(cos[0]), Some(crate::numerics::sorted_median(&cos)))
        };
        steps.push(ChainStep {
            step: t,
            s_min,
            s_median,
            sigma_ratio: sigma_ratio(&next)?,
            zero_columns,
        });
        m = Some(next);
    }
    Ok(ChainReport {
        family: spec.family.name(),
        dims: spec.dims.clone(),
        seed: spec.seed,
        renormalized: true,
        steps,
    })
}
