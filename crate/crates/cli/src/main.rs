use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use kernel_uq::experiments::{
    active_learning, ood_rank, sweep_summary, Acquisition, ActiveLearningConfig, PolynomialEnsemble, SyntheticTask,
};
use kernel_uq::io::parse_ensembles;
use kernel_uq::robustness::{distortion_experiment, growth_fit, synthetic_base_ensembles, GrowthClass};
use kernel_uq::scores::ScoreSpec;
use kernel_uq::{decompose, EstimatorKind, EvalPolicy, ScoreKind, SecondOrderEnsemble};
use serde::Serialize;
use serde_json::json;
use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "kernel-uq", version, about = "Kernel-score uncertainty decomposition for regression ensembles")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Decompose ensembles read from JSON into TU, EU and AU.
    Decompose(DecomposeArgs),
    /// MAPE of aleatoric uncertainty under synthetic member distortion.
    Robustness(RobustnessArgs),
    /// Entropy of N(0, s²) over a variance grid, with the fitted growth slope.
    Growth(GrowthArgs),
    /// Epistemic uncertainty inside and outside the training region.
    Ood(OodArgs),
    /// Active learning with Gaussian-kernel EU for several bandwidths.
    Sweep(SweepArgs),
    /// Active learning with one acquisition rule.
    Al(AlArgs),
}

#[derive(Args)]
struct Output {
    /// CSV destination; standard output if omitted.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct ManifestOutput {
    #[command(flatten)]
    out: Output,
    /// Run manifest destination; defaults to `<output>.manifest.json`, or
    /// standard error when writing CSV to standard output.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum EstimatorArg {
    Bma,
    Pairwise,
    Both,
}

#[derive(Args)]
struct DecomposeArgs {
    /// Ensemble JSON file, `-` for standard input.
    #[arg(long, short, default_value = "-")]
    input: String,
    /// Scores: log, se, crps, energy:<beta>, gauss:<gamma>, gauss:median, marginal:<inner>.
    #[arg(long, value_delimiter = ',', default_value = "crps", conflicts_with = "kernel")]
    score: Vec<String>,
    /// Kernel-score shorthand: se, energy:<beta>, gauss:<gamma>, gauss:median.
    #[arg(long, value_delimiter = ',')]
    kernel: Vec<String>,
    /// closed, mc:<n>:<seed> or quad:<tol>.
    #[arg(long, default_value = "closed")]
    policy: String,
    #[arg(long, value_enum, default_value = "both")]
    estimator: EstimatorArg,
    #[command(flatten)]
    out: Output,
}

#[derive(Args)]
struct RobustnessArgs {
    #[arg(long, value_delimiter = ',', default_value = "0,0.2,0.5,1.5,2.5,5.0")]
    deltas: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "gauss:median,log,crps,se")]
    scores: Vec<String>,
    #[arg(long, default_value_t = 100)]
    instances: usize,
    #[arg(long, default_value_t = 25)]
    members: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    out: Output,
}

#[derive(Args)]
struct GrowthArgs {
    #[arg(long, value_delimiter = ',', default_value = "se,crps,gauss:1,log")]
    scores: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "1e2,1e3,1e4,1e5,1e6")]
    grid: Vec<f64>,
    #[command(flatten)]
    out: Output,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum TaskArg {
    Default,
}

impl TaskArg {
    fn build(self, seed: u64) -> SyntheticTask {
        match self {
            Self::Default => SyntheticTask::default_task(seed),
        }
    }
}

#[derive(Args)]
struct OodArgs {
    #[arg(long, value_enum, default_value = "default")]
    task: TaskArg,
    #[arg(long, value_delimiter = ',', default_value = "se,crps,gauss:median,log")]
    scores: Vec<String>,
    #[arg(long, default_value = "pairwise")]
    estimator: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    out: ManifestOutput,
}

#[derive(Args, Serialize)]
struct LoopArgs {
    #[arg(long, default_value_t = 40)]
    rounds: usize,
    #[arg(long, default_value_t = 20)]
    batch: usize,
    #[arg(long, default_value_t = 1000)]
    pool: usize,
    #[arg(long, default_value_t = 20)]
    initial: usize,
    /// Number of seeds, run as 0, 1, ..., n − 1.
    #[arg(long, default_value_t = 3)]
    seeds: u64,
}

impl LoopArgs {
    fn config(&self) -> ActiveLearningConfig {
        ActiveLearningConfig {
            rounds: self.rounds,
            batch_size: self.batch,
            pool_size: self.pool,
            initial_size: self.initial,
            builder: PolynomialEnsemble::default(),
        }
    }

    fn seed_list(&self) -> Vec<u64> {
        (0..self.seeds).collect()
    }
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, value_enum, default_value = "default")]
    task: TaskArg,
    #[arg(long, value_delimiter = ',', default_value = "0.25,0.5,1,2")]
    gammas: Vec<f64>,
    #[command(flatten)]
    run: LoopArgs,
    #[command(flatten)]
    out: ManifestOutput,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum AcqArg {
    Eu,
    Random,
}

#[derive(Args)]
struct AlArgs {
    #[arg(long, value_enum, default_value = "default")]
    task: TaskArg,
    #[arg(long, value_enum, default_value = "eu")]
    acq: AcqArg,
    /// Score whose EU drives acquisition; `gauss:median` uses the training targets.
    #[arg(long, default_value = "gauss:median")]
    score: String,
    #[arg(long, default_value = "pairwise")]
    estimator: String,
    #[command(flatten)]
    run: LoopArgs,
    #[command(flatten)]
    out: ManifestOutput,
}

fn parse_specs(names: &[String]) -> Result<Vec<ScoreSpec>> {
    names.iter().map(|s| s.parse::<ScoreSpec>().with_context(|| format!("score `{s}`"))).collect()
}

fn kernel_spec(name: &str) -> Result<ScoreSpec> {
    let spec: ScoreSpec = name.parse().with_context(|| format!("kernel `{name}`"))?;
    match &spec {
        ScoreSpec::GaussianMedian
        | ScoreSpec::Fixed(ScoreKind::SquaredError | ScoreKind::Energy(_) | ScoreKind::GaussianKernel(_)) => Ok(spec),
        _ => bail!("`{name}` is not a kernel; use se, energy:<beta>, gauss:<gamma> or gauss:median"),
    }
}

fn write_csv<T: Serialize>(out: &Output, rows: &[T]) -> Result<()> {
    let sink: Box<dyn Write> = match &out.output {
        Some(p) => Box::new(fs::File::create(p).with_context(|| format!("creating {}", p.display()))?),
        None => Box::new(io::stdout().lock()),
    };
    let mut w = csv::Writer::from_writer(sink);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn write_manifest(
    out: &ManifestOutput,
    command: &str,
    settings: serde_json::Value,
    seeds: &[u64],
    results: serde_json::Value,
) -> Result<()> {
    let manifest = json!({
        "command": command,
        "library": "kernel-uq",
        "version": kernel_uq::VERSION,
        "settings": settings,
        "seeds": seeds,
        "results": results,
    });
    let text = serde_json::to_string_pretty(&manifest)? + "\n";
    let path = out.manifest.clone().or_else(|| {
        out.out.output.as_ref().map(|p| {
            let mut s = p.clone().into_os_string();
            s.push(".manifest.json");
            PathBuf::from(s)
        })
    });
    match path {
        Some(p) => fs::write(&p, text).with_context(|| format!("writing {}", p.display())),
        None => Ok(io::stderr().write_all(text.as_bytes())?),
    }
}

fn read_input(input: &str) -> Result<String> {
    if input == "-" {
        let mut s = String::new();
        io::stdin().read_to_string(&mut s)?;
        Ok(s)
    } else {
        fs::read_to_string(Path::new(input)).with_context(|| format!("reading {input}"))
    }
}

#[derive(Serialize)]
struct DecomposeRow<'a> {
    instance_id: &'a str,
    score: String,
    estimator: String,
    tu: f64,
    eu: f64,
    au: f64,
    delta: f64,
}

fn run_decompose(args: DecomposeArgs) -> Result<()> {
    let specs = if args.kernel.is_empty() {
        parse_specs(&args.score)?
    } else {
        args.kernel.iter().map(|k| kernel_spec(k)).collect::<Result<_>>()?
    };
    let policy: EvalPolicy = args.policy.parse()?;
    let instances = parse_ensembles(&read_input(&args.input)?)?;
    if instances.is_empty() {
        bail!("no ensembles in input");
    }
    let reference: Vec<Vec<f64>> = instances.iter().flat_map(|(_, q)| q.reference_points()).collect();
    let mut rows = Vec::new();
    for spec in &specs {
        let kind = spec.resolve(&reference)?;
        for (id, q) in &instances {
            let b = decompose(q, &kind, EstimatorKind::Bma, &policy)
                .with_context(|| format!("instance `{id}`, score {kind}"))?;
            let p = decompose(q, &kind, EstimatorKind::Pairwise, &policy)
                .with_context(|| format!("instance `{id}`, score {kind}"))?;
            let delta = p.eu - b.eu;
            let chosen = match args.estimator {
                EstimatorArg::Bma => vec![b],
                EstimatorArg::Pairwise => vec![p],
                EstimatorArg::Both => vec![b, p],
            };
            for d in chosen {
                rows.push(DecomposeRow {
                    instance_id: id,
                    score: kind.to_string(),
                    estimator: d.estimator.to_string(),
                    tu: d.tu,
                    eu: d.eu,
                    au: d.au,
                    delta,
                });
            }
        }
    }
    write_csv(&args.out, &rows)
}

fn run_robustness(args: RobustnessArgs) -> Result<()> {
    let base = synthetic_base_ensembles(args.instances, args.members, args.seed)?;
    let reference: Vec<Vec<f64>> = base.iter().flat_map(SecondOrderEnsemble::reference_points).collect();
    let kinds =
        parse_specs(&args.scores)?.iter().map(|s| s.resolve(&reference)).collect::<kernel_uq::Result<Vec<_>>>()?;
    #[derive(Serialize)]
    struct Row {
        score: String,
        delta: f64,
        mape: f64,
    }
    let rows: Vec<Row> = distortion_experiment(&base, &args.deltas, &kinds, args.seed)?
        .into_iter()
        .map(|r| Row { score: r.score.to_string(), delta: r.delta, mape: r.mape })
        .collect();
    write_csv(&args.out, &rows)
}

fn run_growth(args: GrowthArgs) -> Result<()> {
    #[derive(Serialize)]
    struct Row {
        score: String,
        sigma0sq: f64,
        entropy: f64,
        slope: f64,
    }
    let mut rows = Vec::new();
    for spec in parse_specs(&args.scores)? {
        let ScoreSpec::Fixed(kind) = spec else { bail!("growth needs scores with fixed parameters") };
        let fit = growth_fit(&kind, &args.grid)?;
        let slope = match fit.classification {
            GrowthClass::Linear | GrowthClass::Sqrt => fit.loglog_slope,
            GrowthClass::Log | GrowthClass::Bounded => fit.semilog_slope,
        };
        rows.extend(fit.entropies.iter().map(|&(s, h)| Row {
            score: kind.to_string(),
            sigma0sq: s,
            entropy: h,
            slope,
        }));
    }
    write_csv(&args.out, &rows)
}

fn run_ood(args: OodArgs) -> Result<()> {
    let specs = parse_specs(&args.scores)?;
    let estimator: EstimatorKind = args.estimator.parse()?;
    let task = args.task.build(args.seed);
    let report = ood_rank(&task, &PolynomialEnsemble::default(), &specs, estimator)?;
    #[derive(Serialize)]
    struct Row {
        x: f64,
        in_region: bool,
        score: String,
        eu: Option<f64>,
        flag: Option<String>,
    }
    let rows: Vec<Row> = report
        .rows
        .into_iter()
        .map(|r| Row { x: r.x, in_region: r.in_region, score: r.score.to_string(), eu: r.eu, flag: r.flag })
        .collect();
    write_csv(&args.out.out, &rows)?;
    write_manifest(
        &args.out,
        "ood",
        json!({"task": task, "scores": args.scores, "estimator": estimator.to_string(), "builder": PolynomialEnsemble::default()}),
        &[args.seed],
        json!({"summaries": report.summaries.iter().map(|s| json!({
            "score": s.score.to_string(),
            "mean_eu_in": s.mean_eu_in,
            "mean_eu_out": s.mean_eu_out,
            "auroc": s.auroc,
            "flagged": s.flagged,
        })).collect::<Vec<_>>()}),
    )
}

#[derive(Serialize)]
struct TraceRow {
    seed: u64,
    acquisition: String,
    round: usize,
    crps: f64,
}

fn trace_rows(
    seed: u64,
    label: String,
    run: &kernel_uq::experiments::AcquisitionRun,
) -> impl Iterator<Item = TraceRow> + '_ {
    std::iter::once(run.initial_crps)
        .chain(run.crps_trace.iter().copied())
        .enumerate()
        .map(move |(round, crps)| TraceRow { seed, acquisition: label.clone(), round, crps })
}

fn run_sweep(args: SweepArgs) -> Result<()> {
    let task = args.task.build(0);
    let seeds = args.run.seed_list();
    let (summary, runs) = sweep_summary(&task, &args.gammas, &args.run.config(), &seeds)?;
    let rows: Vec<TraceRow> = runs.iter().flat_map(|(s, _, r)| trace_rows(*s, r.acquisition.to_string(), r)).collect();
    write_csv(&args.out.out, &rows)?;
    write_manifest(
        &args.out,
        "sweep",
        json!({"task": task, "gammas": args.gammas, "loop": args.run}),
        &seeds,
        json!(summary),
    )
}

fn run_al(args: AlArgs) -> Result<()> {
    let task = args.task.build(0);
    let seeds = args.run.seed_list();
    let config = args.run.config();
    let mut rows = Vec::new();
    let mut finals = Vec::new();
    for &seed in &seeds {
        let acquisition = match args.acq {
            AcqArg::Random => Acquisition::Random,
            AcqArg::Eu => {
                let (_, ys) = task.with_seed(seed).training_data();
                let reference: Vec<Vec<f64>> = ys.iter().map(|y| vec![*y]).collect();
                Acquisition::Eu {
                    score: args.score.parse::<ScoreSpec>()?.resolve(&reference)?,
                    estimator: args.estimator.parse()?,
                }
            }
        };
        let run = active_learning(&task, &acquisition, &config, seed)?;
        finals.push(run.final_crps());
        rows.extend(trace_rows(seed, acquisition.to_string(), &run));
    }
    write_csv(&args.out.out, &rows)?;
    let mean = finals.iter().sum::<f64>() / finals.len().max(1) as f64;
    write_manifest(
        &args.out,
        "al",
        json!({"task": task, "acq": args.acq, "score": args.score, "estimator": args.estimator, "loop": args.run}),
        &seeds,
        json!({"final_crps": finals, "mean_final_crps": mean}),
    )
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Decompose(a) => run_decompose(a),
        Command::Robustness(a) => run_robustness(a),
        Command::Growth(a) => run_growth(a),
        Command::Ood(a) => run_ood(a),
        Command::Sweep(a) => run_sweep(a),
        Command::Al(a) => run_al(a),
    }
}
