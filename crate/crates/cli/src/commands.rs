use std::ffi::{OsStr, OsString};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use relconv::attribution::{
    attribute, explain, fit_patterns, normalize_for_display, patterns_of, PatternEstimator, RuleConfig, Target,
};
use relconv::chainlab::{
    chain_matrices_forward, chain_matrices_from_network, interlayer_alignment, pattern_ratio_report, simulate_chain,
    ChainFamily, ChainSpec,
};
use relconv::io::{encode_fgrid, encode_pgm, read_input, write_atomic};
use relconv::metrics::{csc_run, random_logit_batch, random_logit_csv, sanity_check_stages, synthetic_inputs};
use relconv::model::{load_bundle, save_bundle, Preset};
use relconv::{Network, Tensor};

use crate::rules::{parse_rule, RuleParseError};

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

#[derive(Parser, Debug)]
#[command(name = "relconv", version, about = "Attribution rules and convergence diagnostics for ReLU networks")]
struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a reference network with seeded random weights as a bundle.
    ModelPreset(PresetArgs),
    /// Saliency map for one input.
    Explain(ExplainArgs),
    /// Cosine-similarity convergence of injected relevance vectors.
    Csc(CscArgs),
    /// Cascading parameter-randomisation check.
    Sanity(SanityArgs),
    /// True-logit versus random-logit saliency similarity.
    RandomLogit(RandomLogitArgs),
    /// Simulate a matrix chain and report column statistics per step.
    ChainSimulate(ChainArgs),
    /// Singular-value alignment between consecutive layers of a model.
    ChainAlign(AlignArgs),
    /// Fit PatternNet/PatternAttribution patterns and store them in a bundle.
    PatternsFit(PatternsArgs),
}

#[derive(Args, Debug)]
struct PresetArgs {
    /// cifar10, tiny_residual or mlp:SIZES (comma separated)
    preset: String,
    #[arg(long)]
    seed: u64,
    /// Bundle directory to create.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct InputArgs {
    /// FGRID, PGM or PPM input; repeat for several.
    #[arg(long = "input")]
    inputs: Vec<PathBuf>,
    /// Use this many seeded synthetic inputs instead of files.
    #[arg(long)]
    synthetic: Option<usize>,
}

#[derive(Args, Debug)]
struct ExplainArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    rule: String,
    #[command(flatten)]
    input: InputArgs,
    /// Seed for a synthetic input.
    #[arg(long)]
    seed: Option<u64>,
    /// Logit to explain (default: the top one).
    #[arg(long)]
    logit: Option<usize>,
    /// Saliency map as FGRID.
    #[arg(long)]
    out: PathBuf,
    /// Display-normalised rendering as PGM.
    #[arg(long)]
    render: Option<PathBuf>,
    /// Raw input relevance as FGRID.
    #[arg(long)]
    relevance: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CscArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    rule: String,
    #[command(flatten)]
    input: InputArgs,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = relconv::metrics::DEFAULT_VECTORS)]
    vectors: usize,
    /// Top-level layer whose output receives the vectors (default: the last).
    #[arg(long)]
    inject: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SanityArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    rule: String,
    #[command(flatten)]
    input: InputArgs,
    #[arg(long)]
    seed: u64,
    /// Stop after this many randomisation stages.
    #[arg(long)]
    stages: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct RandomLogitArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    rule: String,
    #[command(flatten)]
    input: InputArgs,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ChainArgs {
    /// normal, relu, nonnegative, positive or alphabeta:A:B; ignored with --model.
    #[arg(long, default_value = "positive")]
    family: String,
    #[arg(long)]
    seed: Option<u64>,
    /// Square chain size.
    #[arg(long, conflicts_with_all = ["vgg", "model"])]
    dim: Option<usize>,
    /// Number of multiplications for a square chain.
    #[arg(long, default_value_t = 16)]
    steps: usize,
    /// VGG-like schedule with sizes divided by this factor.
    #[arg(long, conflicts_with = "model")]
    vgg: Option<usize>,
    /// Chain of a model's 1x1-sliced matrices, positive part after each product.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct AlignArgs {
    #[arg(long)]
    model: PathBuf,
    /// Per-pair σ1/σ2 table.
    #[arg(long)]
    out: PathBuf,
    /// σ1/σ2 of A, W and W⊙A per layer; needs fitted patterns.
    #[arg(long)]
    pattern_ratios: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Estimator {
    Linear,
    TwoComponent,
}

#[derive(Args, Debug)]
struct PatternsArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, value_enum, default_value_t = Estimator::Linear)]
    estimator: Estimator,
    #[command(flatten)]
    input: InputArgs,
    #[arg(long)]
    seed: Option<u64>,
    /// Bundle directory for the model with patterns attached.
    #[arg(long)]
    out: PathBuf,
}

/// Structured-text record written next to every primary output.
#[derive(Serialize)]
struct RunManifest {
    command: String,
    args: Vec<String>,
    seed: Option<u64>,
    rule: Option<String>,
    model: Option<String>,
    inputs: Vec<String>,
    outputs: Vec<String>,
    relconv_version: &'static str,
    threads: usize,
    wall_time_seconds: f64,
}

/// Maps a failure to the documented exit status: 2 configuration, 3 files,
/// 4 numerics.
pub fn exit_code(e: &anyhow::Error) -> i32 {
    if let Some(re) = e.downcast_ref::<relconv::Error>() {
        if re.is_io() {
            EXIT_IO
        } else if re.is_numerical() {
            EXIT_NUMERICAL
        } else {
            EXIT_CONFIG
        }
    } else if e.downcast_ref::<std::io::Error>().is_some() {
        EXIT_IO
    } else {
        EXIT_CONFIG
    }
}

/// The error and its causes, skipping causes already spelled out.
fn describe(e: &anyhow::Error) -> String {
    let mut text = String::new();
    for cause in e.chain() {
        let c = cause.to_string();
        if !text.contains(&c) {
            if !text.is_empty() {
                text.push_str(": ");
            }
            text.push_str(&c);
        }
    }
    text
}

pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be positive");
            return EXIT_CONFIG;
        }
        // Only fails if a pool already exists, as in repeated in-process runs.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let argv: Vec<String> = argv.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    match run(cli.command, argv) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            exit_code(&e)
        }
    }
}

struct Ctx {
    start: Instant,
    args: Vec<String>,
    command: &'static str,
}

impl Ctx {
    /// Writes every output atomically, then the run manifest beside the first.
    fn finish(&self, manifest: ManifestInfo, outputs: Vec<(PathBuf, Vec<u8>)>) -> Result<()> {
        for (i, (path, bytes)) in outputs.iter().enumerate() {
            if let Err(e) = write_atomic(path, bytes) {
                // Each write is atomic; undo the earlier ones so no partial set remains.
                for (done, _) in &outputs[..i] {
                    let _ = std::fs::remove_file(done);
                }
                return Err(e.into());
            }
        }
        let primary = outputs.first().map(|o| o.0.clone()).or(manifest.primary.clone()).expect("an output");
        self.write_manifest(&primary, manifest, outputs.iter().map(|o| o.0.clone()).collect())
    }

    fn write_manifest(&self, primary: &Path, info: ManifestInfo, mut outputs: Vec<PathBuf>) -> Result<()> {
        if let Some(p) = &info.primary {
            if !outputs.contains(p) {
                outputs.insert(0, p.clone());
            }
        }
        let show = |p: &PathBuf| p.display().to_string();
        let m = RunManifest {
            command: self.command.to_string(),
            args: self.args.clone(),
            seed: info.seed,
            rule: info.rule.map(|r| r.to_string()),
            model: info.model.as_ref().map(show),
            inputs: info.inputs,
            outputs: outputs.iter().map(show).collect(),
            relconv_version: env!("CARGO_PKG_VERSION"),
            threads: rayon::current_num_threads(),
            wall_time_seconds: self.start.elapsed().as_secs_f64(),
        };
        let text = toml::to_string(&m).context("serialising run manifest")?;
        write_atomic(&manifest_path(primary), text.as_bytes())?;
        Ok(())
    }
}

#[derive(Default)]
struct ManifestInfo {
    seed: Option<u64>,
    rule: Option<RuleConfig>,
    model: Option<PathBuf>,
    inputs: Vec<String>,
    /// Output written by other means (a bundle directory).
    primary: Option<PathBuf>,
}

fn manifest_path(primary: &Path) -> PathBuf {
    let mut s: OsString = primary.as_os_str().to_owned();
    s.push(OsStr::new(".run.toml"));
    PathBuf::from(s)
}

fn rule(text: &str) -> Result<RuleConfig> {
    parse_rule(text).map_err(|e: RuleParseError| anyhow::Error::new(e))
}

fn model(path: &Path) -> Result<Network> {
    Ok(load_bundle(path)?)
}

/// Loads file inputs or draws synthetic ones; returns them with labels for
/// the manifest.
fn inputs(args: &InputArgs, net: &Network, seed: Option<u64>) -> Result<(Vec<Tensor>, Vec<String>)> {
    match (args.inputs.is_empty(), args.synthetic) {
        (false, Some(_)) => bail!("give either --input or --synthetic, not both"),
        (true, None) => bail!("no inputs: give --input FILE or --synthetic N"),
        (true, Some(0)) => bail!("--synthetic needs at least one input"),
        (true, Some(n)) => {
            let seed = seed.context("--synthetic needs --seed")?;
            let xs = synthetic_inputs(net.input_shape(), n, seed);
            Ok((xs, vec![format!("synthetic:{n}:seed={seed}")]))
        }
        (false, None) => {
            let mut xs = Vec::new();
            for p in &args.inputs {
                let x = read_input(p)?;
                if x.shape() != net.input_shape() {
                    bail!("{} has shape {:?}, the model expects {:?}", p.display(), x.shape(), net.input_shape());
                }
                xs.push(x);
            }
            Ok((xs, args.inputs.iter().map(|p| p.display().to_string()).collect()))
        }
    }
}

fn top_logit(net: &Network, x: &Tensor) -> Result<usize> {
    let y = net.logits(x)?;
    Ok((0..y.len()).fold(0, |b, i| if y[i] > y[b] { i } else { b }))
}

fn family(text: &str) -> Result<ChainFamily> {
    let f = match text {
        "normal" => ChainFamily::Normal,
        "relu" | "relu_after_product" => ChainFamily::ReluAfterProduct,
        "nonnegative" | "nonnegative_clipped" => ChainFamily::NonnegativeClipped,
        "positive" | "positive_abs" => ChainFamily::PositiveAbs,
        _ => {
            let parts: Vec<&str> = text.split(':').collect();
            match parts[..] {
                ["alphabeta", a, b] => {
                    let num = |s: &str| s.parse::<f64>().ok().filter(|v| v.is_finite());
                    match (num(a), num(b)) {
                        (Some(alpha), Some(beta)) => ChainFamily::AlphaBeta { alpha, beta },
                        _ => bail!("bad alphabeta parameters in `{text}`"),
                    }
                }
                _ => bail!("unknown chain family `{text}`; valid: normal, relu, nonnegative, positive, alphabeta:A:B"),
            }
        }
    };
    Ok(f)
}

fn run(command: Command, args: Vec<String>) -> Result<()> {
    let name = match &command {
        Command::ModelPreset(_) => "model-preset",
        Command::Explain(_) => "explain",
        Command::Csc(_) => "csc",
        Command::Sanity(_) => "sanity",
        Command::RandomLogit(_) => "random-logit",
        Command::ChainSimulate(_) => "chain-simulate",
        Command::ChainAlign(_) => "chain-align",
        Command::PatternsFit(_) => "patterns-fit",
    };
    let ctx = Ctx {
        start: Instant::now(),
        args,
        command: name,
    };
    match command {
        Command::ModelPreset(a) => model_preset(&ctx, a),
        Command::Explain(a) => explain_cmd(&ctx, a),
        Command::Csc(a) => csc_cmd(&ctx, a),
        Command::Sanity(a) => sanity_cmd(&ctx, a),
        Command::RandomLogit(a) => random_logit_cmd(&ctx, a),
        Command::ChainSimulate(a) => chain_simulate(&ctx, a),
        Command::ChainAlign(a) => chain_align(&ctx, a),
        Command::PatternsFit(a) => patterns_fit(&ctx, a),
    }
}

fn model_preset(ctx: &Ctx, a: PresetArgs) -> Result<()> {
    let preset: Preset = a.preset.parse()?;
    let net = preset.build(a.seed)?;
    save_bundle(&net, &a.out)?;
    println!("{} parameters in {} layers -> {}", net.params().values().map(Tensor::len).sum::<usize>(), net.layers().len(), a.out.display());
    let info = ManifestInfo {
        seed: Some(a.seed),
        primary: Some(a.out.clone()),
        ..Default::default()
    };
    ctx.write_manifest(&a.out, info, Vec::new())
}

fn explain_cmd(ctx: &Ctx, a: ExplainArgs) -> Result<()> {
    let r = rule(&a.rule)?;
    if a.relevance.is_some() && matches!(r, RuleConfig::ContrastiveLrp(_)) {
        bail!("--relevance is not available for contrastive rules, which combine two backward passes");
    }
    let net = model(&a.model)?;
    let (xs, labels) = inputs(&a.input, &net, a.seed)?;
    if xs.len() != 1 {
        bail!("explain takes exactly one input, got {}", xs.len());
    }
    let x = &xs[0];
    let k = match a.logit {
        Some(k) if k >= net.num_logits() => bail!("logit {k} out of range for {} outputs", net.num_logits()),
        Some(k) => k,
        None => top_logit(&net, x)?,
    };
    let map = explain(&net, x, &r, k)?;
    let mut outputs = vec![(a.out.clone(), encode_fgrid(&map.map))];
    if let Some(p) = &a.render {
        let shown = normalize_for_display(&map);
        outputs.push((p.clone(), encode_pgm(&shown.map, shown.signed)?));
    }
    if let Some(p) = &a.relevance {
        let t = attribute(&net, x, &r, &Target::Logit(k))?;
        outputs.push((p.clone(), encode_fgrid(&t.input)));
    }
    println!("rule={r} logit={k} map={}x{}{}", map.height(), map.width(), if map.degenerate { " (degenerate)" } else { "" });
    let info = ManifestInfo {
        seed: a.seed,
        rule: Some(r),
        model: Some(a.model),
        inputs: labels,
        ..Default::default()
    };
    ctx.finish(info, outputs)
}

fn csc_cmd(ctx: &Ctx, a: CscArgs) -> Result<()> {
    let r = rule(&a.rule)?;
    if a.vectors < 2 {
        bail!("--vectors must be at least 2");
    }
    let net = model(&a.model)?;
    let inject = match a.inject {
        Some(l) => l,
        None => net.layers().last().expect("non-empty network").name.clone(),
    };
    net.layer_index(&inject)?;
    let (xs, labels) = inputs(&a.input, &net, Some(a.seed))?;
    let path = csc_run(&net, &xs, &r, &inject, a.vectors, a.seed)?;
    for l in &path.layers {
        println!("{:>12} median {}", l.layer, l.median.map_or("nan".into(), |m| format!("{m:.6}")));
    }
    let info = ManifestInfo {
        seed: Some(a.seed),
        rule: Some(r),
        model: Some(a.model),
        inputs: labels,
        ..Default::default()
    };
    ctx.finish(info, vec![(a.out, path.to_text().into_bytes())])
}

fn sanity_cmd(ctx: &Ctx, a: SanityArgs) -> Result<()> {
    let r = rule(&a.rule)?;
    let net = model(&a.model)?;
    let (xs, labels) = inputs(&a.input, &net, Some(a.seed))?;
    let mut csv = String::from("sample,stage,layer_set_size,ssim,sign_flipped\n");
    for (i, x) in xs.iter().enumerate() {
        let rep = sanity_check_stages(&net, x, &r, a.seed, a.stages)?;
        for line in rep.to_csv().lines().skip(1) {
            csv.push_str(&format!("{i},{line}\n"));
        }
    }
    println!("{} samples, rule={r}", xs.len());
    let info = ManifestInfo {
        seed: Some(a.seed),
        rule: Some(r),
        model: Some(a.model),
        inputs: labels,
        ..Default::default()
    };
    ctx.finish(info, vec![(a.out, csv.into_bytes())])
}

fn random_logit_cmd(ctx: &Ctx, a: RandomLogitArgs) -> Result<()> {
    let r = rule(&a.rule)?;
    let net = model(&a.model)?;
    let (xs, labels) = inputs(&a.input, &net, Some(a.seed))?;
    let res = random_logit_batch(&net, &xs, &r, a.seed)?;
    let valid: Vec<f64> = res.iter().filter_map(|r| r.ssim).collect();
    if !valid.is_empty() {
        println!("mean ssim {:.4} over {} samples", valid.iter().sum::<f64>() / valid.len() as f64, valid.len());
    }
    let info = ManifestInfo {
        seed: Some(a.seed),
        rule: Some(r),
        model: Some(a.model),
        inputs: labels,
        ..Default::default()
    };
    ctx.finish(info, vec![(a.out, random_logit_csv(&res).into_bytes())])
}

fn chain_simulate(ctx: &Ctx, a: ChainArgs) -> Result<()> {
    let spec = if let Some(m) = &a.model {
        ChainSpec::from_matrices(chain_matrices_from_network(&model(m)?)?)?
    } else {
        let f = family(&a.family)?;
        let seed = a.seed.context("chain-simulate needs --seed for random families")?;
        match (a.dim, a.vgg) {
            (Some(d), None) => ChainSpec::square(f, d, a.steps, seed),
            (None, Some(v)) => {
                if v == 0 {
                    bail!("--vgg divisor must be positive");
                }
                ChainSpec::vgg(f, v, seed)
            }
            _ => bail!("give --dim (with --steps), --vgg or --model"),
        }
    };
    let report = simulate_chain(&spec)?;
    if let Some(last) = report.steps.last() {
        println!(
            "{}: {} steps, final median cosine {}",
            report.family,
            report.steps.len(),
            last.s_median.map_or("nan".into(), |v| format!("{v:.12}"))
        );
    }
    let info = ManifestInfo {
        seed: a.seed,
        model: a.model,
        ..Default::default()
    };
    ctx.finish(info, vec![(a.out, report.to_csv().into_bytes())])
}

fn chain_align(ctx: &Ctx, a: AlignArgs) -> Result<()> {
    let net = model(&a.model)?;
    let names: Vec<String> = net.parameterized_layers().iter().map(|l| l.name.clone()).collect();
    let ratios = interlayer_alignment(&chain_matrices_forward(&net)?)?;
    let mut csv = String::from("layer_pair,ratio\n");
    for (i, r) in ratios.iter().enumerate() {
        csv.push_str(&format!("{}->{},{r}\n", names[i], names[i + 1]));
    }
    let mut outputs = vec![(a.out, csv.into_bytes())];
    if let Some(p) = a.pattern_ratios {
        let ps = patterns_of(&net).context("--pattern-ratios needs a model with fitted patterns (see patterns-fit)")?;
        let mut t = String::from("layer,pattern,weight,product,excluded_rows\n");
        for r in pattern_ratio_report(&net, &ps)? {
            t.push_str(&format!("{},{},{},{},{}\n", r.layer, r.pattern, r.weight, r.product, r.excluded_rows.len()));
        }
        outputs.push((p, t.into_bytes()));
    }
    let info = ManifestInfo {
        model: Some(a.model),
        ..Default::default()
    };
    ctx.finish(info, outputs)
}

fn patterns_fit(ctx: &Ctx, a: PatternsArgs) -> Result<()> {
    let net = model(&a.model)?;
    let (xs, labels) = inputs(&a.input, &net, a.seed)?;
    let est = match a.estimator {
        Estimator::Linear => PatternEstimator::Linear,
        Estimator::TwoComponent => PatternEstimator::TwoComponent,
    };
    let ps = fit_patterns(&net, &xs, est)?;
    let fitted = ps.attach(&net)?;
    save_bundle(&fitted, &a.out)?;
    println!("{} layers fitted on {} samples, {} degenerate neurons", ps.layers.len(), xs.len(), ps.degenerate_count());
    let info = ManifestInfo {
        seed: a.seed,
        model: Some(a.model),
        inputs: labels,
        primary: Some(a.out.clone()),
        ..Default::default()
    };
    ctx.write_manifest(&a.out, info, Vec::new())
}
