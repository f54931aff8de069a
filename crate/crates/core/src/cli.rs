//! Command-line front end. Data goes to stdout (or `--output`), one-line
//! diagnostics to stderr.
//!
//! Exit codes: 0 success, 1 validation or usage error, 2 I/O error.

use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use crate::denseflow::{train_toy, RewardSpec, TrainConfig, TrainMode, TrainOutcome};
use crate::error::{Error, Result};
use crate::io::{load_manifest, write_heatmap_file};
use crate::metrics::{evaluate_dataset, MetricConfig, MetricReport};
use crate::parser::{parse_response, ParseMode};
use crate::rewards::{reward_report, RewardReport};
use crate::types::{EvaluationRecord, Heatmap, ScoreVector};
use crate::verifier::{aggregate, rank_candidates, SelectionPolicy};

/// Environment variable holding the worker thread count.
pub const THREADS_ENV: &str = "DENSEREWARD_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "densereward",
    version,
    about = "Rewards, evaluation metrics and dense GRPO objectives for image-quality feedback",
    after_help = "Environment:\n  DENSEREWARD_THREADS  worker threads for per-record work (default: all cores)\n\n\
                  Exit codes: 0 success, 1 validation or usage error, 2 I/O error"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Output format
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,

    /// Write data here instead of stdout
    #[arg(long, short, global = true)]
    output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Tsv,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Score predicted records against ground truth (grounding, score and heatmap rewards)
    Reward(RewardArgs),
    /// Score and heatmap metrics of a prediction manifest against a ground-truth manifest
    Metrics(MetricsArgs),
    /// Parse a tagged evaluator response into JSON
    Parse(ParseArgs),
    /// Train the toy flow policy with dense or image-level advantages
    GrpoDemo(DemoArgs),
    /// Pick the best of N candidates from their score vectors
    Select(SelectArgs),
}

#[derive(Debug, Args)]
struct PairArgs {
    /// Prediction manifest (JSON list of records)
    #[arg(long)]
    pred: PathBuf,
    /// Ground-truth manifest
    #[arg(long)]
    gt: PathBuf,
    /// Ground-truth heatmaps with total mass at or below this are blank
    #[arg(long, default_value_t = 0.0)]
    blank_threshold: f64,
}

#[derive(Debug, Args)]
struct RewardArgs {
    #[command(flatten)]
    pair: PairArgs,
}

#[derive(Debug, Args)]
struct MetricsArgs {
    #[command(flatten)]
    pair: PairArgs,
    /// Fixation pixels for NSS and AUC-Judd are those with ground truth above this
    #[arg(long, default_value_t = 0.0)]
    fixation_threshold: f64,
}

#[derive(Debug, Args)]
struct ParseArgs {
    /// Response text file; `-` reads stdin
    #[arg(default_value = "-")]
    input: PathBuf,
    /// Reject missing tags, missing lists and out-of-range scores instead of repairing them
    #[arg(long)]
    strict: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DemoMode {
    Dense,
    ImageOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DemoTarget {
    /// `--target-value` inside `--region`, 0 elsewhere
    Region,
    /// Constant `--target-value`, image reward only
    Mean,
}

#[derive(Debug, Args)]
struct DemoArgs {
    #[arg(long, default_value_t = 16)]
    height: usize,
    #[arg(long, default_value_t = 16)]
    width: usize,
    /// Denoising steps T
    #[arg(long, default_value_t = 2)]
    steps: usize,
    /// Group size G
    #[arg(long, default_value_t = 8)]
    group_size: usize,
    /// Training iterations K
    #[arg(long, default_value_t = 300)]
    iterations: usize,
    #[arg(long, default_value_t = 0.2)]
    epsilon: f64,
    /// Transition noise scale
    #[arg(long, default_value_t = 0.3)]
    sigma: f64,
    #[arg(long, default_value_t = 0.03)]
    learning_rate: f64,
    /// Weight of the KL penalty towards the initial policy
    #[arg(long, default_value_t = 0.0)]
    beta: f64,
    #[arg(long, default_value_t = crate::grpo::DEFAULT_SIGMA_FLOOR)]
    sigma_floor: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = DemoMode::Dense)]
    mode: DemoMode,
    #[arg(long, value_enum, default_value_t = DemoTarget::Region)]
    target: DemoTarget,
    #[arg(long, default_value_t = 1.0)]
    target_value: f64,
    /// Rewarded rectangle `row0,row1,col0,col1` (half-open); defaults to the middle third
    #[arg(long, value_parser = parse_region)]
    region: Option<[usize; 4]>,
    /// Trajectories drawn from the final policy to estimate region_mse
    #[arg(long, default_value_t = 64)]
    eval_samples: usize,
    /// Write one final x_0 sample, clamped to [0, 1], as an HMF heatmap
    #[arg(long)]
    dump_final: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SelectArgs {
    /// JSON array of score objects; `-` reads stdin
    #[arg(default_value = "-")]
    input: PathBuf,
    /// Weights for alignment, aesthetics, plausibility, overall
    #[arg(long, value_parser = parse_weights, default_value = "0.25,0.25,0.25,0.25")]
    weights: [f64; 4],
}

fn parse_list<const N: usize, T: std::str::FromStr>(s: &str) -> std::result::Result<[T; N], String> {
    let parts: Vec<T> = s
        .split(',')
        .map(|p| p.trim().parse::<T>().map_err(|_| format!("`{p}` is not a number")))
        .collect::<std::result::Result<_, _>>()?;
    parts
        .try_into()
        .map_err(|v: Vec<T>| format!("expected {N} comma-separated values, got {}", v.len()))
}

fn parse_weights(s: &str) -> std::result::Result<[f64; 4], String> {
    parse_list::<4, f64>(s)
}

fn parse_region(s: &str) -> std::result::Result<[usize; 4], String> {
    parse_list::<4, usize>(s)
}

fn read_input(path: &Path) -> Result<String> {
    let mut text = String::new();
    if path == Path::new("-") {
        std::io::stdin()
            .read_to_string(&mut text)
            .map_err(|e| Error::io("<stdin>", e))?;
    } else {
        text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    }
    Ok(text)
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Parse(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

/// Serializes a metric report. The TSV form has a score table and a heatmap
/// table separated by a blank line.
pub fn emit_report(report: &MetricReport, format: Format) -> Result<String> {
    if format == Format::Json {
        return to_json(report);
    }
    let mut out = String::from("dimension\tplcc\tsrcc\n");
    for (name, pair) in report.scores.dimensions() {
        let _ = writeln!(out, "{name}\t{}\t{}", opt(pair.plcc), opt(pair.srcc));
    }
    out.push_str("\nheatmap\tmse_all\tmse_gt0\tcc\tkld\tsim\tnss\tauc_judd\tn_gt0\tn_gt_pos\n");
    for (name, b) in [("artifact", &report.artifact), ("misalignment", &report.misalignment)] {
        let _ = writeln!(
            out,
            "{name}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            opt(b.mse_all),
            opt(b.mse_gt0),
            opt(b.cc),
            opt(b.kld),
            opt(b.sim),
            opt(b.nss),
            opt(b.auc_judd),
            b.n_gt0,
            b.n_gt_pos
        );
    }
    Ok(out)
}

fn emit_rewards(reports: &[RewardReport], format: Format) -> Result<String> {
    if format == Format::Json {
        return to_json(&reports);
    }
    let mut out = String::from(
        "id\tgrounding_artifact\tgrounding_misalignment\tgrounding\tscore_reward\theatmap_reward\ttotal\n",
    );
    for r in reports {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.id,
            r.grounding.artifact.combined,
            r.grounding.misalignment.combined,
            r.grounding.combined,
            r.score_reward,
            r.heatmap_reward,
            r.total
        );
    }
    Ok(out)
}

fn load_pair(args: &PairArgs) -> Result<(Vec<EvaluationRecord>, Vec<EvaluationRecord>)> {
    Ok((load_manifest(&args.pred)?, load_manifest(&args.gt)?))
}

fn run_reward(args: &RewardArgs, format: Format) -> Result<String> {
    let (preds, gts) = load_pair(&args.pair)?;
    if preds.len() != gts.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions for {} ground-truth records",
            preds.len(),
            gts.len()
        )));
    }
    let reports: Vec<RewardReport> = gts
        .par_iter()
        .map(|gt| {
            let pred = preds
                .iter()
                .find(|p| p.id == gt.id)
                .ok_or_else(|| Error::InvalidArgument(format!("no prediction for record `{}`", gt.id)))?;
            reward_report(pred, gt, args.pair.blank_threshold)
        })
        .collect::<Result<_>>()?;
    emit_rewards(&reports, format)
}

fn run_metrics(args: &MetricsArgs, format: Format) -> Result<String> {
    let (preds, gts) = load_pair(&args.pair)?;
    let cfg = MetricConfig {
        blank_threshold: args.pair.blank_threshold,
        fixation_threshold: args.fixation_threshold,
    };
    emit_report(&evaluate_dataset(&preds, &gts, &cfg)?, format)
}

fn run_parse(args: &ParseArgs, format: Format) -> Result<String> {
    if format != Format::Json {
        return Err(Error::InvalidArgument("parse only emits json".into()));
    }
    let mode = if args.strict { ParseMode::Strict } else { ParseMode::Lenient };
    to_json(&parse_response(&read_input(&args.input)?, mode)?)
}

#[derive(Serialize)]
struct DemoReport<'a> {
    mode: TrainMode,
    seed: u64,
    height: usize,
    width: usize,
    steps: usize,
    group_size: usize,
    iterations: usize,
    region_mse: f64,
    region_bias_mse: f64,
    curve: &'a [crate::denseflow::CurvePoint],
}

fn demo_config(args: &DemoArgs) -> Result<TrainConfig> {
    let (h, w) = (args.height, args.width);
    let reward = match args.target {
        DemoTarget::Mean => RewardSpec::mean_intensity(h, w, args.target_value)?,
        DemoTarget::Region => {
            let [r0, r1, c0, c1] = args.region.unwrap_or([h / 3, h - h / 3, w / 3, w - w / 3]);
            RewardSpec::region_target(h, w, r0..r1, c0..c1, args.target_value)?
        }
    };
    let mode = match args.mode {
        DemoMode::Dense => TrainMode::Dense,
        DemoMode::ImageOnly => TrainMode::ImageOnly,
    };
    let cfg = TrainConfig {
        steps: args.steps,
        group_size: args.group_size,
        iterations: args.iterations,
        learning_rate: args.learning_rate,
        epsilon: args.epsilon,
        sigma: args.sigma,
        beta: args.beta,
        sigma_floor: args.sigma_floor,
        seed: args.seed,
        mode,
        eval_samples: args.eval_samples,
        updates_per_group: 1,
        reward,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn emit_demo(cfg: &TrainConfig, out: &TrainOutcome, format: Format) -> Result<String> {
    if format == Format::Json {
        return to_json(&DemoReport {
            mode: out.mode,
            seed: out.seed,
            height: cfg.reward.height,
            width: cfg.reward.width,
            steps: cfg.steps,
            group_size: cfg.group_size,
            iterations: cfg.iterations,
            region_mse: out.region_mse,
            region_bias_mse: out.region_bias_mse,
            curve: &out.curve,
        });
    }
    let mut s = String::from("iteration\tmean_image_reward\tmean_pixel_reward\tmean_intensity\tregion_mse\n");
    for p in &out.curve {
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{}\t{}",
            p.iteration, p.mean_image_reward, p.mean_pixel_reward, p.mean_intensity, p.region_mse
        );
    }
    let _ = writeln!(s, "final\t\t\t\t{}", out.region_mse);
    Ok(s)
}

fn run_demo(args: &DemoArgs, format: Format) -> Result<String> {
    let cfg = demo_config(args)?;
    let out = train_toy(&cfg)?;
    if let Some(path) = &args.dump_final {
        let values = out.sample_final_state.iter().map(|&v| v.clamp(0.0, 1.0) as f32).collect();
        let map = Heatmap::new(cfg.reward.width, cfg.reward.height, values)?;
        write_heatmap_file(path, &map)?;
    }
    emit_demo(&cfg, &out, format)
}

#[derive(Serialize)]
struct SelectReport {
    best: usize,
    ranking: Vec<usize>,
    aggregates: Vec<f64>,
}

fn run_select(args: &SelectArgs, format: Format) -> Result<String> {
    let policy = SelectionPolicy::new(args.weights)?;
    let text = read_input(&args.input)?;
    let candidates: Vec<ScoreVector> = serde_json::from_str(&text).map_err(|e| Error::Parse(e.to_string()))?;
    let ranking = rank_candidates(&candidates, &policy)?;
    let aggregates: Vec<f64> = candidates.iter().map(|c| aggregate(c, &policy)).collect();
    if format == Format::Json {
        return to_json(&SelectReport {
            best: ranking[0],
            ranking,
            aggregates,
        });
    }
    let mut s = String::from("rank\tindex\taggregate\n");
    for (rank, &i) in ranking.iter().enumerate() {
        let _ = writeln!(s, "{rank}\t{i}\t{}", aggregates[i]);
    }
    Ok(s)
}

fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .trim()
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("{THREADS_ENV}={v:?} is not a thread count")))?;
        builder = builder.num_threads(n);
    }
    builder
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))
}

fn execute(cli: &Cli) -> Result<String> {
    let pool = thread_pool()?;
    pool.install(|| match &cli.command {
        Command::Reward(a) => run_reward(a, cli.format),
        Command::Metrics(a) => run_metrics(a, cli.format),
        Command::Parse(a) => run_parse(a, cli.format),
        Command::GrpoDemo(a) => run_demo(a, cli.format),
        Command::Select(a) => run_select(a, cli.format),
    })
}

fn exit_code(e: &Error) -> i32 {
    if e.is_io() {
        2
    } else {
        1
    }
}

/// Runs the command line `args` (program name first) and returns the exit code.
pub fn run<I, S>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(stdout, "{}", e.render());
                    0
                }
                _ => {
                    let msg = e.render().to_string();
                    let first = msg.lines().next().unwrap_or("invalid arguments");
                    let _ = writeln!(stderr, "{}", first.trim_start_matches("error: ").trim());
                    1
                }
            };
        }
    };
    let data = match execute(&cli) {
        Ok(data) => data,
        Err(e) => {
            let _ = writeln!(stderr, "error: {}", e.to_string().replace('\n', " "));
            return exit_code(&e);
        }
    };
    let written = match &cli.output {
        Some(path) => std::fs::write(path, &data).map_err(|e| Error::io(path, e)),
        None => stdout.write_all(data.as_bytes()).map_err(|e| Error::io("<stdout>", e)),
    };
    match written {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            2
        }
    }
}
