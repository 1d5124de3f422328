//! The rule grammar shared by every subcommand that takes `--rule`.

use std::fmt;

use relconv::attribution::{DtdInput, Reference, RuleConfig, DEFAULT_EPSILON, DEFAULT_RECTGRAD_Q};

pub const VALID_RULES: &str = "gradient, gradxinput, zplus, lrpz[:EPS], alphabeta:A:B, dtd[:w2|:wB[:L:U]], \
patternnet, patternattr, deeplift[:zeros|:blur:SIGMA][:ablation], guidedbp, deconv, rectgrad[:Q], \
lrpcmp:A:B, contrastive:<rule>, cebp";

/// A rule string that does not parse; `position` is the byte offset of the
/// offending token.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RuleParseError {
    pub position: usize,
    pub message: String,
}

impl fmt::Display for RuleParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid rule at position {}: {}", self.position, self.message)
    }
}

impl std::error::Error for RuleParseError {}

fn err(position: usize, message: impl Into<String>) -> RuleParseError {
    RuleParseError {
        position,
        message: message.into(),
    }
}

pub fn parse_rule(text: &str) -> Result<RuleConfig, RuleParseError> {
    parse_at(text, 0)
}

fn parse_at(text: &str, base: usize) -> Result<RuleConfig, RuleParseError> {
    let mut toks = Vec::new();
    let mut start = 0;
    for (i, c) in text.char_indices() {
        if c == ':' {
            toks.push((base + start, &text[start..i]));
            start = i + 1;
        }
    }
    toks.push((base + start, &text[start..]));
    let (p0, name) = toks[0];
    let args = &toks[1..];
    let end = base + text.len();

    let num = |i: usize| -> Result<f64, RuleParseError> {
        let &(p, t) = args.get(i).ok_or_else(|| err(end, "missing parameter"))?;
        t.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| err(p, format!("`{t}` is not a finite number")))
    };
    let arity = |max: usize| -> Result<(), RuleParseError> {
        match args.get(max) {
            Some(&(p, t)) => Err(err(p, format!("unexpected parameter `{t}` for `{name}`"))),
            None => Ok(()),
        }
    };
    let exactly = |n: usize| -> Result<(), RuleParseError> {
        if args.len() < n {
            return Err(err(end, format!("`{name}` needs {n} parameters")));
        }
        arity(n)
    };

    let rule = match name {
        "gradient" => arity(0).map(|_| RuleConfig::Gradient)?,
        "gradxinput" => arity(0).map(|_| RuleConfig::GradTimesInput)?,
        "zplus" => arity(0).map(|_| RuleConfig::ZPlus)?,
        "patternnet" => arity(0).map(|_| RuleConfig::PatternNet)?,
        "patternattr" => arity(0).map(|_| RuleConfig::PatternAttribution)?,
        "guidedbp" => arity(0).map(|_| RuleConfig::GuidedBackprop)?,
        "deconv" => arity(0).map(|_| RuleConfig::Deconvnet)?,
        "cebp" => arity(0).map(|_| RuleConfig::ContrastiveEbp)?,
        "lrpz" => {
            arity(1)?;
            let epsilon = if args.is_empty() { DEFAULT_EPSILON } else { num(0)? };
            RuleConfig::LrpZ { epsilon }
        }
        "rectgrad" => {
            arity(1)?;
            let q = if args.is_empty() { DEFAULT_RECTGRAD_Q } else { num(0)? };
            RuleConfig::RectGrad { q }
        }
        "alphabeta" | "lrpcmp" => {
            exactly(2)?;
            let (alpha, beta) = (num(0)?, num(1)?);
            if name == "alphabeta" {
                RuleConfig::AlphaBeta { alpha, beta }
            } else {
                RuleConfig::LrpComposite { alpha, beta }
            }
        }
        "dtd" => {
            let input = match args.first().map(|a| a.1) {
                None => DtdInput::ZPlus,
                Some("w2") => arity(1).map(|_| DtdInput::WSquare)?,
                Some("wB") if args.len() == 1 => DtdInput::Bounded(None),
                Some("wB") => {
                    exactly(3)?;
                    DtdInput::Bounded(Some([num(1)?, num(2)?]))
                }
                Some(t) => return Err(err(args[0].0, format!("unknown dtd input rule `{t}` (w2 or wB)"))),
            };
            RuleConfig::Dtd { input }
        }
        "deeplift" => {
            let mut i = 0;
            let mut reference = Reference::Zeros;
            match args.first().map(|a| a.1) {
                Some("zeros") => i = 1,
                Some("blur") => {
                    reference = Reference::Blur { sigma: num(1)? };
                    i = 2;
                }
                _ => {}
            }
            let ablation = args.get(i).is_some_and(|a| a.1 == "ablation");
            if ablation {
                i += 1;
            }
            if let Some(&(p, t)) = args.get(i) {
                return Err(err(p, format!("unexpected deeplift option `{t}`")));
            }
            RuleConfig::DeepLift { reference, ablation }
        }
        "contrastive" => {
            let &(p, _) = args.first().ok_or_else(|| err(end, "contrastive needs an inner rule"))?;
            let inner = parse_at(&text[p - base..], p)?;
            return wrap_validate(RuleConfig::ContrastiveLrp(Box::new(inner)), p);
        }
        "" => return Err(err(p0, format!("empty rule; valid rules: {VALID_RULES}"))),
        _ => return Err(err(p0, format!("unknown rule `{name}`; valid rules: {VALID_RULES}"))),
    };
    wrap_validate(rule, args.first().map_or(p0, |a| a.0))
}

fn wrap_validate(rule: RuleConfig, position: usize) -> Result<RuleConfig, RuleParseError> {
    rule.validate().map_err(|e| match e {
        relconv::Error::Config(m) => err(position, m),
        e => err(position, e.to_string()),
    })?;
    Ok(rule)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn positions_point_at_the_bad_token() {
        assert_eq!(parse_rule("alphabeta:2:x").unwrap_err().position, 12);
        assert_eq!(parse_rule("contrastive:lrpz:1:2").unwrap_err().position, 19);
        assert_eq!(parse_rule("zplus:3").unwrap_err().position, 6);
    }
}
