use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use serde_json::{json, Value};

use robustlab::config::{Config, ENV_CONFIG};
use robustlab::dataset::{build_dataset, load_sources, write_dataset};
use robustlab::eval::{report_csv, run_eval, score as score_run, write_report, BenchmarkManifest};
use robustlab::reward::{score_candidate_text, DEFAULT_EPSILON};
use robustlab::{
    apply_recipe, distortion_score, group_advantages, parse_chain, sample_recipe, DegMode,
    DegradationRecipe, DegradationSpec, DegradationType, RasterImage, ReasoningChain, RngState,
    SamplingConfig,
};

const EXIT_PARTIAL: u8 = 1;
const EXIT_INPUT: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "robustlab", version, about = "Degradation-aware reasoning toolkit")]
struct Cli {
    /// JSON config file.
    #[arg(long, global = true, env = ENV_CONFIG)]
    config: Option<PathBuf>,

    /// Seed for every random choice; overrides ROBUSTLAB_SEED and the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads; overrides ROBUSTLAB_WORKERS and the config.
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Degrade an image with a recipe, a single degradation, or a sampled recipe.
    Degrade(DegradeArgs),
    /// Score candidate chains against ground truth.
    Score(ScoreArgs),
    /// Group-relative advantages for reward groups.
    Advantage(AdvantageArgs),
    /// Build a training dataset from a source manifest.
    Build(BuildArgs),
    /// Run the anti-degradation evaluation over a benchmark manifest.
    Eval(EvalArgs),
    /// Parse a chain text file and print it as JSON.
    Parse(ParseArgs),
}

#[derive(Debug, Args)]
struct DegradeArgs {
    /// Input image (PNG or JPEG).
    #[arg(long, short)]
    input: PathBuf,
    /// Output PNG; the recipe is written next to it as `<stem>.recipe.json`.
    #[arg(long, short)]
    output: PathBuf,
    /// Recipe JSON file.
    #[arg(long, conflicts_with_all = ["kind", "sample"])]
    recipe: Option<PathBuf>,
    /// Single degradation type (canonical name).
    #[arg(long = "type", requires = "intensity", conflicts_with = "sample")]
    kind: Option<DegradationType>,
    /// Intensity in [0, 1] for --type.
    #[arg(long, requires = "kind")]
    intensity: Option<f64>,
    /// Sample a recipe with the configured sampling options.
    #[arg(long)]
    sample: bool,
    #[arg(long, requires = "sample")]
    min_count: Option<usize>,
    #[arg(long, requires = "sample")]
    max_count: Option<usize>,
}

#[derive(Debug, Args)]
struct ScoreArgs {
    /// JSONL of `{"candidate", "truth"}` pairs, or of candidates when --truths is given
    /// (each line a JSON string or `{"candidate": ...}`).
    input: PathBuf,
    /// JSONL of ground-truth chain records, line-aligned with the input.
    #[arg(long)]
    truths: Option<PathBuf>,
    #[arg(long, default_value = "literal")]
    mode: DegMode,
    /// Write reward JSONL here instead of stdout.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AdvantageArgs {
    /// JSON rewards: an array of numbers or an array of arrays. Inline, a file
    /// path, or `-` for stdin.
    rewards: String,
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    epsilon: f64,
}

#[derive(Debug, Args)]
struct BuildArgs {
    /// JSONL source manifest.
    manifest: PathBuf,
    /// Output directory.
    #[arg(long, short)]
    out: PathBuf,
    /// Number of records (sources are cycled); defaults to one per source.
    #[arg(long)]
    records: Option<usize>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// JSONL benchmark manifest.
    manifest: PathBuf,
    /// Output directory.
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ParseArgs {
    /// Chain text file, or `-` for stdin.
    file: PathBuf,
    /// Ignore text before the first and after the last segment.
    #[arg(long)]
    tolerant: bool,
}

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

fn input_error(message: impl ToString) -> Failure {
    Failure {
        code: EXIT_INPUT,
        message: message.to_string(),
    }
}

type CmdResult = Result<u8, Failure>;

fn resolve_config(cli: &Cli) -> Result<Config, Failure> {
    let mut config = match &cli.config {
        Some(path) => Config::load(path).map_err(input_error)?,
        None => Config::default(),
    };
    config
        .apply_env(|k| std::env::var(k).ok())
        .map_err(input_error)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(workers) = cli.workers {
        if workers == 0 {
            return Err(input_error("--workers must be at least 1"));
        }
        config.parallelism.workers = workers;
    }
    config.validate().map_err(input_error)?;
    Ok(config)
}

fn read_input(path: &Path) -> Result<String, Failure> {
    if path == Path::new("-") {
        let mut s = String::new();
        io::stdin().read_to_string(&mut s).map_err(input_error)?;
        return Ok(s);
    }
    fs::read_to_string(path).map_err(|e| input_error(format!("{}: {e}", path.display())))
}

fn print_json(value: &Value) {
    println!("{}", serde_json::to_string_pretty(value).expect("json"));
}

fn sidecar_path(output: &Path) -> PathBuf {
    let stem = output.file_stem().unwrap_or_default().to_string_lossy();
    output.with_file_name(format!("{stem}.recipe.json"))
}

fn cmd_degrade(args: &DegradeArgs, config: &Config) -> CmdResult {
    let source = RasterImage::load(&args.input).map_err(input_error)?;
    let recipe = if let Some(path) = &args.recipe {
        let text = read_input(path)?;
        DegradationRecipe::from_json(&text)
            .map_err(|e| input_error(format!("{}: {e}", path.display())))?
    } else if let (Some(kind), Some(intensity)) = (args.kind, args.intensity) {
        let spec = DegradationSpec::new(kind, intensity).map_err(input_error)?;
        DegradationRecipe::new(vec![spec], config.seed).map_err(input_error)?
    } else if args.sample {
        let mut sampling: SamplingConfig = config.degradation.clone();
        if let Some(n) = args.min_count {
            sampling.min_count = n;
        }
        if let Some(n) = args.max_count {
            sampling.max_count = n;
        }
        sample_recipe(&mut RngState::new(config.seed), &sampling).map_err(input_error)?
    } else {
        return Err(input_error("one of --recipe, --type/--intensity or --sample is required"));
    };
    let degraded = apply_recipe(&source, &recipe).map_err(input_error)?;
    let mse = distortion_score(&source, &degraded).map_err(input_error)?;
    let write_err = |e: io::Error| input_error(format!("{}: {e}", args.output.display()));
    degraded.save_png(&args.output).map_err(write_err)?;
    let sidecar = sidecar_path(&args.output);
    fs::write(&sidecar, recipe.to_json() + "\n").map_err(write_err)?;
    print_json(&json!({
        "output": args.output,
        "recipe": sidecar,
        "input_hash": source.content_hash(),
        "output_hash": degraded.content_hash(),
        "distortion_score": mse,
    }));
    Ok(0)
}

#[derive(Deserialize)]
#[serde(untagged)]
enum CandidateLine {
    Text(String),
    Object { candidate: String },
}

fn jsonl_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, l))
}

fn cmd_score(args: &ScoreArgs) -> CmdResult {
    let input = read_input(&args.input)?;
    let pairs: Vec<(usize, Result<(String, ReasoningChain), String>)> = match &args.truths {
        None => jsonl_lines(&input)
            .map(|(n, l)| {
                let pair = serde_json::from_str::<robustlab::reward::ScoringPair>(l)
                    .map(|p| (p.candidate, p.truth))
                    .map_err(|e| e.to_string());
                (n, pair)
            })
            .collect(),
        Some(truths_path) => {
            let truths = read_input(truths_path)?;
            let cands: Vec<_> = jsonl_lines(&input).collect();
            let truths: Vec<_> = jsonl_lines(&truths).collect();
            if cands.len() != truths.len() {
                return Err(input_error(format!(
                    "{} candidates but {} truths",
                    cands.len(),
                    truths.len()
                )));
            }
            cands
                .into_iter()
                .zip(truths)
                .map(|((n, c), (_, t))| {
                    let cand = serde_json::from_str::<CandidateLine>(c).map(|c| match c {
                        CandidateLine::Text(s) | CandidateLine::Object { candidate: s } => s,
                    });
                    let truth = serde_json::from_str::<ReasoningChain>(t);
                    let pair = match (cand, truth) {
                        (Ok(c), Ok(t)) => Ok((c, t)),
                        (Err(e), _) => Err(format!("candidate: {e}")),
                        (_, Err(e)) => Err(format!("truth: {e}")),
                    };
                    (n, pair)
                })
                .collect()
        }
    };
    if pairs.is_empty() {
        return Err(input_error("EmptyInput: no scoring lines"));
    }
    let mut out = String::new();
    let mut sums = [0.0f64; 3];
    let mut scored = 0usize;
    let mut errors = 0usize;
    for (n, pair) in pairs {
        let result = pair.and_then(|(cand, truth)| {
            score_candidate_text(&cand, &truth, args.mode).map_err(|e| e.to_string())
        });
        let line = match result {
            Ok(r) => {
                scored += 1;
                sums[0] += r.r_deg;
                sums[1] += r.r_len;
                sums[2] += r.total;
                json!({"r_deg": r.r_deg, "r_len": r.r_len, "total": r.total})
            }
            Err(e) => {
                errors += 1;
                json!({"line": n, "error": e})
            }
        };
        out.push_str(&line.to_string());
        out.push('\n');
    }
    let mean = |s: f64| (scored > 0).then(|| s / scored as f64);
    let summary = json!({
        "mode": args.mode,
        "scored": scored,
        "errors": errors,
        "mean_r_deg": mean(sums[0]),
        "mean_r_len": mean(sums[1]),
        "mean_total": mean(sums[2]),
    });
    match &args.output {
        Some(path) => {
            fs::write(path, out).map_err(|e| input_error(format!("{}: {e}", path.display())))?;
            print_json(&summary);
        }
        None => {
            print!("{out}");
            eprintln!("{summary}");
        }
    }
    Ok(if errors > 0 { EXIT_PARTIAL } else { 0 })
}

fn cmd_advantage(args: &AdvantageArgs) -> CmdResult {
    let text = if args.rewards.trim_start().starts_with('[') {
        args.rewards.clone()
    } else {
        read_input(Path::new(&args.rewards))?
    };
    let value: Value = serde_json::from_str(&text).map_err(|e| input_error(format!("rewards: {e}")))?;
    let as_group = |v: &Value| -> Result<Vec<f64>, Failure> {
        serde_json::from_value::<Vec<f64>>(v.clone())
            .map_err(|_| input_error("rewards must be an array of numbers or an array of arrays"))
    };
    let advantages = |rewards: &[f64]| {
        group_advantages(rewards, args.epsilon)
            .map(|g| g.advantages)
            .map_err(input_error)
    };
    let out = match &value {
        Value::Array(items) if items.iter().all(Value::is_array) && !items.is_empty() => {
            let groups = items
                .iter()
                .map(|g| advantages(&as_group(g)?))
                .collect::<Result<Vec<_>, _>>()?;
            json!(groups)
        }
        _ => json!(advantages(&as_group(&value)?)?),
    };
    println!("{out}");
    Ok(0)
}

fn cmd_build(args: &BuildArgs, config: &Config) -> CmdResult {
    let sources = load_sources(&args.manifest).map_err(input_error)?;
    let mut settings = config.build_settings();
    if let Some(n) = args.records {
        settings.options.records = Some(n);
    }
    let annotator = config.annotator().map_err(input_error)?;
    let outcome = build_dataset(&sources, annotator.as_ref(), &settings).map_err(input_error)?;
    write_dataset(&outcome, &args.out).map_err(input_error)?;
    let r = &outcome.report;
    print_json(&json!({
        "out": args.out,
        "requested": r.requested,
        "succeeded": r.succeeded,
        "train": r.train,
        "val": r.val,
        "failures": r.failures.len(),
    }));
    for f in &r.failures {
        eprintln!("record {}: {}", f.id, f.error);
    }
    Ok(if r.failures.is_empty() { 0 } else { EXIT_PARTIAL })
}

fn cmd_eval(args: &EvalArgs, config: &Config) -> CmdResult {
    let manifest = BenchmarkManifest::load(&args.manifest).map_err(input_error)?;
    let client = config.model_client().map_err(input_error)?;
    let run = run_eval(&manifest, client.as_ref(), &config.eval_settings()).map_err(input_error)?;
    let report = score_run(&run).map_err(input_error)?;
    write_report(&run, &report, &args.out).map_err(input_error)?;
    print!("{}", report_csv(&report));
    for f in &report.item_failures {
        eprintln!("item {}: {}", f.id, f.error);
    }
    let client_failures: usize = report.overall.iter().map(|c| c.client_failures).sum();
    let partial = !report.item_failures.is_empty() || client_failures > 0;
    Ok(if partial { EXIT_PARTIAL } else { 0 })
}

fn cmd_parse(args: &ParseArgs) -> CmdResult {
    let text = read_input(&args.file)?;
    let parsed = if args.tolerant {
        robustlab::chain::parse_chain_tolerant(&text)
    } else {
        parse_chain(&text)
    };
    let chain = parsed.map_err(input_error)?;
    print_json(&chain.to_json_value());
    Ok(0)
}

fn run(cli: &Cli) -> CmdResult {
    let config = resolve_config(cli)?;
    match &cli.command {
        Command::Degrade(a) => cmd_degrade(a, &config),
        Command::Score(a) => cmd_score(a),
        Command::Advantage(a) => cmd_advantage(a),
        Command::Build(a) => cmd_build(a, &config),
        Command::Eval(a) => cmd_eval(a, &config),
        Command::Parse(a) => cmd_parse(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            let _ = io::stdout().flush();
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
