//! Cosine-similarity convergence: inject random relevance vectors at one
//! layer and measure how aligned their backpropagated images become.

use rayon::prelude::*;

use crate::attribution::{Explainer, RuleConfig, Target};
use crate::error::{Error, Result};
use crate::model::Network;
use crate::numerics::{nearest_rank, sorted_median, Tensor};
use crate::rng;

pub const DEFAULT_VECTORS: usize = 5;

/// Cosine statistics at one boundary. `cosines` holds one entry per
/// (input, vector pair, location) in that order; `None` marks a location
/// where either relevance vector was zero.
#[derive(Clone, Debug, PartialEq)]
pub struct CscLayer {
    pub layer: String,
    pub n_locations: usize,
    pub cosines: Vec<Option<f64>>,
    pub missing: usize,
    /// Median and 10th/90th percentiles of the absolute cosines. `None`
    /// when every entry is missing.
    pub median: Option<f64>,
    pub q10: Option<f64>,
    pub q90: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CscPath {
    pub rule: RuleConfig,
    pub inject_layer: String,
    pub n_vectors: usize,
    pub n_inputs: usize,
    pub seed: u64,
    /// From the injection layer down to `"input"`.
    pub layers: Vec<CscLayer>,
}

impl CscPath {
    pub fn layer(&self, name: &str) -> Option<&CscLayer> {
        self.layers.iter().find(|l| l.layer == name)
    }

    /// One line per layer.
    pub fn to_text(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(|| "nan".to_string(), |v| v.to_string());
        let mut s = String::new();
        for l in &self.layers {
            s.push_str(&format!(
                "rule={} layer={} n_locations={} missing={} median={} q10={} q90={}\n",
                self.rule,
                l.layer,
                l.n_locations,
                l.missing,
                opt(l.median),
                opt(l.q10),
                opt(l.q90)
            ));
        }
        s
    }
}

/// Cosine over channels at every spatial location of a `[C, H, W]` tensor,
/// or a single cosine for any other shape.
pub fn location_cosines(a: &Tensor, b: &Tensor) -> Vec<Option<f64>> {
    let cos = |it: &mut dyn Iterator<Item = (f64, f64)>| {
        let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
        for (x, y) in it {
            ab += x * y;
            aa += x * x;
            bb += y * y;
        }
        (aa > 0.0 && bb > 0.0).then(|| (ab / (aa.sqrt() * bb.sqrt())).clamp(-1.0, 1.0))
    };
    match *a.shape() {
        [c, h, w] => {
            let area = h * w;
            (0..area)
                .map(|p| cos(&mut (0..c).map(|ch| (a.data()[ch * area + p], b.data()[ch * area + p]))))
                .collect()
        }
        _ => vec![cos(&mut a.data().iter().copied().zip(b.data().iter().copied()))],
    }
}

/// Injected vector `j` for input `i`.
pub fn csc_vector(seed: u64, input: usize, vector: usize, len: usize) -> Vec<f64> {
    rng::normal_vec(&mut rng::stream(seed, &[rng::name_key("csc"), input as u64, vector as u64]), len)
}

fn stats(layer: String, n_locations: usize, cosines: Vec<Option<f64>>) -> CscLayer {
    let mut abs: Vec<f64> = cosines.iter().flatten().map(|c| c.abs()).collect();
    abs.sort_by(f64::total_cmp);
    let missing = cosines.len() - abs.len();
    let (median, q10, q90) = if abs.is_empty() {
        (None, None, None)
    } else {
        (Some(sorted_median(&abs)), Some(nearest_rank(&abs, 10.0)), Some(nearest_rank(&abs, 90.0)))
    };
    CscLayer {
        layer,
        n_locations,
        cosines,
        missing,
        median,
        q10,
        q90,
    }
}

/// Injects `n_vectors` standard-normal vectors per input at the output of
/// `inject_layer` and records, for every unordered pair, the per-location
/// cosine between their relevance at each lower boundary. Inputs and
/// vectors are processed in parallel; results do not depend on the
/// schedule.
pub fn csc_run(
    net: &Network,
    inputs: &[Tensor],
    rule: &RuleConfig,
    inject_layer: &str,
    n_vectors: usize,
    seed: u64,
) -> Result<CscPath> {
    if n_vectors < 2 {
        return Err(Error::contract(format!("CSC needs at least 2 vectors, got {n_vectors}")));
    }
    if inputs.is_empty() {
        return Err(Error::contract("CSC needs at least one input"));
    }
    let k = net.layer_index(inject_layer)?;
    let shape = net.layer_shapes()[k].clone();
    let len: usize = shape.iter().product();
    // Boundary names from the injection layer down to the input.
    let mut names: Vec<String> = net.layers()[..=k].iter().rev().map(|l| l.name.clone()).collect();
    names.push("input".into());

    let per_input: Vec<Vec<Vec<Option<f64>>>> = inputs
        .par_iter()
        .enumerate()
        .map(|(i, x)| -> Result<Vec<Vec<Option<f64>>>> {
            let ex = Explainer::new(net, x, rule)?;
            let traces = (0..n_vectors)
                .into_par_iter()
                .map(|j| {
                    let v = Tensor::new(shape.clone(), csc_vector(seed, i, j, len))?;
                    ex.explain(&Target::Inject {
                        layer: inject_layer.to_string(),
                        vector: v,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(names
                .iter()
                .map(|name| {
                    let mut out = Vec::new();
                    for a in 0..n_vectors {
                        for b in a + 1..n_vectors {
                            let (ra, rb) = (traces[a].at(name).unwrap(), traces[b].at(name).unwrap());
                            out.extend(location_cosines(ra, rb));
                        }
                    }
                    out
                })
                .collect())
        })
        .collect::<Result<_>>()?;

    let layers = names
        .iter()
        .enumerate()
        .map(|(li, name)| {
            let cos: Vec<Option<f64>> = per_input.iter().flat_map(|p| p[li].iter().copied()).collect();
            let locs = cos.len() / (inputs.len() * n_vectors * (n_vectors - 1) / 2);
            stats(name.clone(), locs, cos)
        })
        .collect();
    Ok(CscPath {
        rule: rule.clone(),
        inject_layer: inject_layer.to_string(),
        n_vectors,
        n_inputs: inputs.len(),
        seed,
        layers,
    })
}
