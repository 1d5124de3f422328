use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use relconv::io::{decode_fgrid, decode_netpbm};

fn relconv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_relconv")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = relconv(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn mlp(dir: &Path) -> PathBuf {
    let m = dir.join("mlp");
    ok(&["model-preset", "mlp:12,16,16,5", "--seed", "4", "--out", p(&m)]);
    m
}

#[test]
fn preset_then_explain_writes_valid_map_and_render() {
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("cifar");
    ok(&["model-preset", "cifar10", "--seed", "1", "--out", p(&m)]);
    assert!(m.join("manifest.toml").exists());
    let (map, pgm) = (dir.path().join("z.fgrid"), dir.path().join("z.pgm"));
    ok(&[
        "explain", "--model", p(&m), "--rule", "zplus", "--synthetic", "1", "--seed", "2", "--out", p(&map),
        "--render", p(&pgm),
    ]);
    let t = decode_fgrid(&std::fs::read(&map).unwrap(), &map).unwrap();
    assert_eq!(t.shape(), &[32, 32]);
    assert!(t.data().iter().all(|v| v.is_finite()));
    let img = decode_netpbm(&std::fs::read(&pgm).unwrap(), &pgm).unwrap();
    assert_eq!(img.shape(), &[1, 32, 32]);
    let manifest: toml::Table = std::fs::read_to_string(dir.path().join("z.fgrid.run.toml")).unwrap().parse().unwrap();
    assert_eq!(manifest["command"].as_str(), Some("explain"));
    assert_eq!(manifest["seed"].as_integer(), Some(2));
    assert_eq!(manifest["rule"].as_str(), Some("zplus"));
    assert!(manifest["wall_time_seconds"].as_float().unwrap() >= 0.0);
    assert_eq!(manifest["outputs"].as_array().unwrap().len(), 2);
}

#[test]
fn csc_reports_are_byte_identical_across_runs_and_threads() {
    let dir = tempfile::tempdir().unwrap();
    let m = mlp(dir.path());
    let run = |name: &str, threads: &str| {
        let out = dir.path().join(name);
        ok(&[
            "--threads", threads, "csc", "--model", p(&m), "--rule", "zplus", "--vectors", "5", "--seed", "7",
            "--synthetic", "6", "--out", p(&out),
        ]);
        std::fs::read(out).unwrap()
    };
    let a = run("a.txt", "1");
    assert!(!a.is_empty());
    assert_eq!(a, run("b.txt", "1"));
    assert_eq!(a, run("c.txt", "4"));
}

#[test]
fn positive_chain_converges_by_step_seven() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("chain.csv");
    ok(&[
        "chain-simulate", "--family", "positive", "--dim", "128", "--steps", "16", "--seed", "3", "--out", p(&out),
    ]);
    let text = std::fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "s_n_median").unwrap();
    let row7: Vec<&str> = lines.find(|l| l.starts_with("7,")).unwrap().split(',').collect();
    let s: f64 = row7[col].parse().unwrap();
    assert!(s >= 1.0 - 1e-4, "step 7 median {s}");
}

#[test]
fn invalid_config_exits_2_and_leaves_outputs_alone() {
    let dir = tempfile::tempdir().unwrap();
    let m = mlp(dir.path());
    let out = dir.path().join("keep.fgrid");
    std::fs::write(&out, b"untouched").unwrap();
    let cases: Vec<Vec<&str>> = vec![
        vec!["explain", "--model", p(&m), "--rule", "alphabeta:2:2", "--synthetic", "1", "--seed", "1", "--out", p(&out)],
        vec!["explain", "--model", p(&m), "--rule", "zplus", "--synthetic", "1", "--out", p(&out)],
        vec!["explain", "--model", p(&m), "--rule", "zplus", "--synthetic", "1", "--seed", "1", "--logit", "9", "--out", p(&out)],
        vec!["csc", "--model", p(&m), "--rule", "zplus", "--synthetic", "2", "--seed", "1", "--inject", "nope", "--out", p(&out)],
        vec!["csc", "--model", p(&m), "--rule", "zplus", "--synthetic", "2", "--out", p(&out)],
        vec!["chain-simulate", "--family", "cubic", "--dim", "4", "--seed", "1", "--out", p(&out)],
        vec!["chain-simulate", "--family", "normal", "--dim", "4", "--out", p(&out)],
        vec!["bogus-subcommand"],
    ];
    for args in cases {
        let r = relconv(&args);
        assert_eq!(r.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&r.stderr));
        assert_eq!(std::fs::read(&out).unwrap(), b"untouched", "{args:?}");
    }
    assert!(!dir.path().join("keep.fgrid.run.toml").exists());
}

#[test]
fn file_problems_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o.fgrid");
    let r = relconv(&["explain", "--model", p(&dir.path().join("absent")), "--rule", "zplus", "--synthetic", "1", "--seed", "1", "--out", p(&out)]);
    assert_eq!(r.status.code(), Some(3));
    let m = mlp(dir.path());
    let bad = dir.path().join("bad.fgrid");
    std::fs::write(&bad, b"not an image").unwrap();
    let r = relconv(&["explain", "--model", p(&m), "--rule", "zplus", "--input", p(&bad), "--out", p(&out)]);
    assert_eq!(r.status.code(), Some(3));
    assert!(!out.exists());
}

#[test]
fn every_subcommand_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let m = mlp(dir.path());
    let pm = dir.path().join("patterns");
    let outs = |tag: &str, threads: &str| -> Vec<Vec<u8>> {
        let f = |n: &str| dir.path().join(format!("{tag}-{n}"));
        let t = ["--threads", threads];
        let run = |rest: &[&str]| ok(&[&t[..], rest].concat());
        run(&["sanity", "--model", p(&m), "--rule", "gradient", "--synthetic", "3", "--seed", "5", "--out", p(&f("s.csv"))]);
        run(&["random-logit", "--model", p(&m), "--rule", "zplus", "--synthetic", "3", "--seed", "5", "--out", p(&f("r.csv"))]);
        run(&["chain-simulate", "--family", "alphabeta:2:1", "--dim", "24", "--steps", "6", "--seed", "5", "--out", p(&f("c.csv"))]);
        run(&["explain", "--model", p(&m), "--rule", "deeplift:blur:1", "--synthetic", "1", "--seed", "5", "--out", p(&f("e.fgrid"))]);
        vec![f("s.csv"), f("r.csv"), f("c.csv"), f("e.fgrid")].into_iter().map(|p| std::fs::read(p).unwrap()).collect()
    };
    let a = outs("a", "1");
    assert_eq!(a, outs("b", "3"));
    assert_eq!(a, outs("c", "1"));

    ok(&["patterns-fit", "--model", p(&m), "--synthetic", "40", "--seed", "2", "--estimator", "two-component", "--out", p(&pm)]);
    let (al, pr) = (dir.path().join("align.csv"), dir.path().join("ratios.csv"));
    ok(&["chain-align", "--model", p(&pm), "--out", p(&al), "--pattern-ratios", p(&pr)]);
    assert_eq!(std::fs::read_to_string(&al).unwrap().lines().count(), 3);
    assert_eq!(std::fs::read_to_string(&pr).unwrap().lines().count(), 4);
    let pa = dir.path().join("pa.fgrid");
    ok(&["explain", "--model", p(&pm), "--rule", "patternattr", "--synthetic", "1", "--seed", "1", "--out", p(&pa)]);
    // Pattern rules need fitted patterns.
    let r = relconv(&["explain", "--model", p(&m), "--rule", "patternattr", "--synthetic", "1", "--seed", "1", "--out", p(&pa)]);
    assert_ne!(r.status.code(), Some(0));
}

#[test]
fn error_kinds_map_to_distinct_codes() {
    use relconv_cli::exit_code;
    let code = |e: relconv::Error| exit_code(&anyhow::Error::new(e));
    assert_eq!(code(relconv::Error::Config("x".into())), 2);
    assert_eq!(code(relconv::Error::UnknownLayer("x".into())), 2);
    assert_eq!(code(relconv::Error::MalformedManifest("x".into())), 3);
    assert_eq!(code(relconv::Error::UndefinedAngle("x".into())), 4);
    assert_eq!(code(relconv::Error::Numerical { what: "svd".into(), residual: 1.0 }), 4);
    assert_eq!(exit_code(&anyhow::Error::new(relconv::Error::Config("x".into())).context("outer")), 2);
    assert_eq!(exit_code(&anyhow::anyhow!("plain")), 2);
}
