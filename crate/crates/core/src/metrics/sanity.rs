//! Cascading parameter randomisation and the random-logit test.

use rand::Rng;
use rayon::prelude::*;

use crate::attribution::{explain, normalize_unit_interval, RuleConfig, SaliencyMap};
use crate::error::{Error, Result};
use crate::model::Network;
use crate::numerics::{ssim, Tensor};
use crate::rng;

/// SSIM between two maps after min-max scaling, taking the better of the
/// second map and its inversion. Returns `None` when either map is
/// constant; otherwise `(ssim, inverted_won)`.
pub fn flip_max_ssim(a: &SaliencyMap, b: &SaliencyMap) -> Result<Option<(f64, bool)>> {
    let (na, nb) = (normalize_unit_interval(a), normalize_unit_interval(b));
    if na.degenerate || nb.degenerate {
        return Ok(None);
    }
    let direct = ssim(&na.map, &nb.map)?;
    let flipped = ssim(&na.map, &nb.map.map(|v| 1.0 - v))?;
    Ok(Some(if flipped > direct { (flipped, true) } else { (direct, false) }))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SanityStage {
    /// 0 is the unmodified network.
    pub stage: usize,
    pub layers: Vec<String>,
    /// `None` when a saliency map was degenerate.
    pub ssim: Option<f64>,
    pub sign_flipped: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SanityReport {
    pub rule: RuleConfig,
    pub seed: u64,
    pub target: usize,
    pub stages: Vec<SanityStage>,
}

impl SanityReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("stage,layer_set_size,ssim,sign_flipped\n");
        for st in &self.stages {
            let v = st.ssim.map_or_else(|| "nan".to_string(), |v| v.to_string());
            s.push_str(&format!("{},{},{},{}\n", st.stage, st.layers.len(), v, st.sign_flipped));
        }
        s
    }
}

fn argmax(v: &[f64]) -> usize {
    v.iter().enumerate().fold(0, |best, (i, &x)| if x > v[best] { i } else { best })
}

/// Runs every stage of the cascading schedule (or only the first
/// `max_stages`), explaining the original network's top logit each time.
pub fn sanity_check_stages(
    net: &Network,
    x: &Tensor,
    rule: &RuleConfig,
    seed: u64,
    max_stages: Option<usize>,
) -> Result<SanityReport> {
    let schedule = net.cascading_schedule();
    if schedule.is_empty() {
        return Err(Error::contract("sanity check needs a parameterised layer"));
    }
    let target = argmax(&net.logits(x)?);
    let original = explain(net, x, rule, target)?;
    let stage0 = match flip_max_ssim(&original, &original)? {
        Some(_) => SanityStage {
            stage: 0,
            layers: Vec::new(),
            ssim: Some(1.0),
            sign_flipped: false,
        },
        None => SanityStage {
            stage: 0,
            layers: Vec::new(),
            ssim: None,
            sign_flipped: false,
        },
    };
    let n = max_stages.map_or(schedule.len(), |m| m.min(schedule.len()));
    let rest = schedule[..n]
        .par_iter()
        .enumerate()
        .map(|(i, layers)| -> Result<SanityStage> {
            let randomized = net.randomize_parameters(layers, seed)?;
            let map = explain(&randomized, x, rule, target)?;
            let r = flip_max_ssim(&original, &map)?;
            Ok(SanityStage {
                stage: i + 1,
                layers: layers.clone(),
                ssim: r.map(|r| r.0),
                sign_flipped: r.is_some_and(|r| r.1),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut stages = vec![stage0];
    stages.extend(rest);
    Ok(SanityReport {
        rule: rule.clone(),
        seed,
        target,
        stages,
    })
}

pub fn sanity_check_run(net: &Network, x: &Tensor, rule: &RuleConfig, seed: u64) -> Result<SanityReport> {
    sanity_check_stages(net, x, rule, seed, None)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RandomLogitResult {
    pub true_k: usize,
    pub random_k: usize,
    pub ssim: Option<f64>,
    pub sign_flipped: bool,
}

/// Draws a logit other than `true_k` uniformly.
pub fn random_other_logit(n: usize, true_k: usize, seed: u64, key: u64) -> usize {
    let mut s = rng::stream(seed, &[rng::name_key("random-logit"), key]);
    let k = s.random_range(0..n - 1);
    if k >= true_k {
        k + 1
    } else {
        k
    }
}

/// SSIM between the saliency maps for `true_k` and for a random other
/// logit (flip-max, as in the sanity check).
pub fn random_logit_run(net: &Network, x: &Tensor, rule: &RuleConfig, true_k: usize, seed: u64) -> Result<RandomLogitResult> {
    random_logit_keyed(net, x, rule, true_k, seed, 0)
}

pub(crate) fn random_logit_keyed(
    net: &Network,
    x: &Tensor,
    rule: &RuleConfig,
    true_k: usize,
    seed: u64,
    key: u64,
) -> Result<RandomLogitResult> {
    let n = net.num_logits();
    if n < 2 {
        return Err(Error::contract("random-logit test needs at least two logits"));
    }
    if true_k >= n {
        return Err(Error::contract(format!("logit {true_k} out of range for {n} outputs")));
    }
    let random_k = random_other_logit(n, true_k, seed, key);
    let ex = crate::attribution::Explainer::new(net, x, rule)?;
    let a = crate::attribution::explain_with(&ex, net, true_k)?;
    let b = crate::attribution::explain_with(&ex, net, random_k)?;
    let r = flip_max_ssim(&a, &b)?;
    Ok(RandomLogitResult {
        true_k,
        random_k,
        ssim: r.map(|r| r.0),
        sign_flipped: r.is_some_and(|r| r.1),
    })
}

/// Random-logit test over a batch, using each input's top logit as the true
/// class. Sample `i` draws its random logit from key `i`.
pub fn random_logit_batch(net: &Network, inputs: &[Tensor], rule: &RuleConfig, seed: u64) -> Result<Vec<RandomLogitResult>> {
    inputs
        .par_iter()
        .enumerate()
        .map(|(i, x)| {
            let k = argmax(&net.logits(x)?);
            random_logit_keyed(net, x, rule, k, seed, i as u64)
        })
        .collect()
}

pub fn random_logit_csv(results: &[RandomLogitResult]) -> String {
    let mut s = String::from("sample,true_k,random_k,ssim,sign_flipped\n");
    for (i, r) in results.iter().enumerate() {
        let v = r.ssim.map_or_else(|| "nan".to_string(), |v| v.to_string());
        s.push_str(&format!("{i},{},{},{v},{}\n", r.true_k, r.random_k, r.sign_flipped));
    }
    s
}
