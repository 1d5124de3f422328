use proptest::prelude::*;
use relconv::attribution::{DtdInput, Reference, RuleConfig};
use relconv_cli::parse_rule;

#[test]
fn documented_examples() {
    assert_eq!(parse_rule("alphabeta:2:1").unwrap(), RuleConfig::AlphaBeta { alpha: 2.0, beta: 1.0 });
    assert_eq!(parse_rule("rectgrad").unwrap(), RuleConfig::RectGrad { q: 98.0 });
    assert_eq!(parse_rule("lrpz").unwrap(), RuleConfig::LrpZ { epsilon: 1e-9 });
    assert_eq!(parse_rule("dtd:wB").unwrap(), RuleConfig::Dtd { input: DtdInput::Bounded(None) });
    assert_eq!(
        parse_rule("deeplift:blur:1.5:ablation").unwrap(),
        RuleConfig::DeepLift {
            reference: Reference::Blur { sigma: 1.5 },
            ablation: true
        }
    );
    assert_eq!(
        parse_rule("contrastive:zplus").unwrap(),
        RuleConfig::ContrastiveLrp(Box::new(RuleConfig::ZPlus))
    );
}

#[test]
fn invalid_rules_report_a_position() {
    let e = parse_rule("alphabeta:2:2").unwrap_err();
    assert_eq!(e.position, 10);
    assert!(e.to_string().starts_with("invalid rule at position 10"));
    let e = parse_rule("bogus").unwrap_err();
    assert_eq!(e.position, 0);
    assert!(e.message.contains("zplus"), "{}", e.message);
    assert!(parse_rule("contrastive:contrastive:zplus").is_err());
    assert!(parse_rule("rectgrad:101").is_err());
    assert!(parse_rule("lrpz:-1").is_err());
    assert!(parse_rule("dtd:wB:1:0").is_err());
    assert!(parse_rule("").is_err());
}

fn base_rule() -> impl Strategy<Value = RuleConfig> {
    prop_oneof![
        Just(RuleConfig::Gradient),
        Just(RuleConfig::GradTimesInput),
        Just(RuleConfig::ZPlus),
        (0.0f64..1.0).prop_map(|epsilon| RuleConfig::LrpZ { epsilon }),
        (1.0f64..5.0).prop_map(|alpha| RuleConfig::AlphaBeta { alpha, beta: alpha - 1.0 }),
        Just(RuleConfig::Dtd { input: DtdInput::ZPlus }),
        Just(RuleConfig::Dtd { input: DtdInput::WSquare }),
        (-2.0f64..0.0, 0.5f64..2.0).prop_map(|(l, w)| RuleConfig::Dtd { input: DtdInput::Bounded(Some([l, l + w])) }),
        Just(RuleConfig::PatternNet),
        Just(RuleConfig::PatternAttribution),
        (prop::option::of(0.0f64..4.0), any::<bool>()).prop_map(|(s, ablation)| RuleConfig::DeepLift {
            reference: s.map_or(Reference::Zeros, |sigma| Reference::Blur { sigma }),
            ablation
        }),
        Just(RuleConfig::GuidedBackprop),
        Just(RuleConfig::Deconvnet),
        (0.0f64..100.0).prop_map(|q| RuleConfig::RectGrad { q }),
        (1.0f64..5.0).prop_map(|alpha| RuleConfig::LrpComposite { alpha, beta: alpha - 1.0 }),
        Just(RuleConfig::ContrastiveEbp),
    ]
}

fn any_rule() -> impl Strategy<Value = RuleConfig> {
    (base_rule(), any::<bool>()).prop_map(|(r, wrap)| {
        if wrap && !matches!(r, RuleConfig::ContrastiveEbp) {
            RuleConfig::ContrastiveLrp(Box::new(r))
        } else {
            r
        }
    })
}

proptest! {
    #[test]
    fn display_round_trips(rule in any_rule()) {
        // Rust prints the shortest string that parses back to the same f64.
        prop_assert_eq!(parse_rule(&rule.to_string()).unwrap(), rule);
    }

    #[test]
    fn arbitrary_text_never_panics(text in "[a-z0-9:.\\-]{0,24}") {
        if let Err(e) = parse_rule(&text) {
            prop_assert!(e.position <= text.len());
        }
    }
}
