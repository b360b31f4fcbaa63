use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};
use taskrank_core::certify::{certify_model, topk_sets, Scope};
use taskrank_core::refine::fit_joint;
use taskrank_core::split::subsample;
use taskrank_core::synth::simulate;
use taskrank_core::tangent::ContrastSpec;
use taskrank_core::ComparisonDataset;

use taskrank::config::{Experiment, RunConfig};
use taskrank::harness::{
    run_coverage_experiment, run_normality_experiment, run_sim_sweep, write_summary, CoverageConfig, NormalityConfig,
    SweepConfig,
};
use taskrank::ingest::{build_dataset, fit_ground_truth_btl, model_frequencies, parse_votes, DropCounts, VoteFormat};
use taskrank::io::{
    read_dataset, read_dataset_inferred, read_scores, write_dataset, write_json, write_scores, CertifyOutput,
    FitArtifact, InferReport, InferRow, SCHEMA_VERSION,
};
use taskrank::{Error, Method, Result};

/// Low-rank multi-task ranking with inference and top-K certification.
#[derive(Parser)]
#[command(name = "taskrank", version)]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = one per core).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a synthetic truth and a comparison sample.
    Simulate {
        /// Output directory for `comparisons.<ext>` and `truth.tsv`.
        #[arg(long)]
        out: PathBuf,
        /// Sample size; defaults to `synthetic.n`.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long, default_value_t = 0)]
        trial: u64,
        #[arg(long, default_value = "csv")]
        format: VoteFormat,
    },
    /// Turn a raw vote log into a comparison file.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        /// Input format; inferred from the extension when omitted.
        #[arg(long)]
        format: Option<VoteFormat>,
        /// Output comparison file.
        #[arg(long)]
        out: PathBuf,
        /// Keep this fraction of the surviving comparisons.
        #[arg(long)]
        subsample: Option<f64>,
        /// Write the per-task BTL fit on all surviving comparisons here.
        #[arg(long)]
        reference: Option<PathBuf>,
        /// Write a JSON summary of kept and dropped votes here.
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Fit a score matrix.
    Fit {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArgs,
        /// Fit artifact (JSON).
        #[arg(long)]
        out: PathBuf,
        /// Also write the scores as a TSV matrix.
        #[arg(long)]
        scores: Option<PathBuf>,
    },
    /// Estimate score gaps with confidence intervals.
    Infer {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArgs,
        /// Gap `task,model_a,model_b` (repeatable).
        #[arg(long = "contrast", required = true)]
        contrasts: Vec<String>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simultaneous rank bands and top-K decisions.
    Certify {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArgs,
        /// Model to certify (repeatable).
        #[arg(long = "target")]
        targets: Vec<String>,
        /// Restrict the family to one task; all tasks otherwise.
        #[arg(long)]
        task: Option<String>,
        #[arg(long)]
        k: Option<usize>,
        /// Inner and outer top-K sets for every task instead of single models.
        #[arg(long)]
        topk_sets: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a Monte Carlo experiment.
    Bench {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        experiment: Option<Experiment>,
        #[arg(long)]
        trials: Option<usize>,
    },
}

#[derive(Args)]
struct DataArgs {
    /// Comparison file (CSV or JSON lines).
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    format: Option<VoteFormat>,
    /// Score matrix whose task and model names define the index.
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long)]
    method: Option<Method>,
    #[arg(long)]
    rank: Option<usize>,
    /// Take method and estimator settings from a fit artifact.
    #[arg(long)]
    artifact: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("taskrank: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.set_seed(seed);
    }
    if let Some(threads) = cli.threads {
        config.threads = threads;
    }
    if config.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(config.threads)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    match cli.command {
        Command::Simulate { out, n, trial, format } => cmd_simulate(&config, &out, n, trial, format),
        Command::Ingest { input, format, out, subsample, reference, summary } => {
            cmd_ingest(&config, &input, format, &out, subsample, reference.as_deref(), summary.as_deref())
        }
        Command::Fit { data, model, out, scores } => cmd_fit(&mut config, &data, &model, &out, scores.as_deref()),
        Command::Infer { data, model, contrasts, alpha, out } => {
            cmd_infer(&mut config, &data, &model, &contrasts, alpha, out.as_deref())
        }
        Command::Certify { data, model, targets, task, k, topk_sets, out } => {
            cmd_certify(&mut config, &data, &model, &targets, task.as_deref(), k, topk_sets, out.as_deref())
        }
        Command::Bench { out, experiment, trials } => cmd_bench(&mut config, &out, experiment, trials),
    }
}

fn format_for(path: &Path, explicit: Option<VoteFormat>) -> Result<VoteFormat> {
    explicit
        .or_else(|| VoteFormat::from_path(path))
        .ok_or_else(|| Error::Config(format!("cannot tell the format of {}; pass --format", path.display())))
}

fn load_data(args: &DataArgs) -> Result<ComparisonDataset> {
    let format = format_for(&args.data, args.format)?;
    let data = match &args.truth {
        Some(truth) => read_dataset(&args.data, format, read_scores(truth)?.index().clone())?,
        None => read_dataset_inferred(&args.data, format)?,
    };
    info!("{} comparisons over {} tasks and {} models", data.len(), data.index().task_count(), data.index().model_count());
    Ok(data)
}

fn apply_model_args(config: &mut RunConfig, args: &ModelArgs) -> Result<()> {
    if let Some(path) = &args.artifact {
        let artifact = FitArtifact::load(path)?;
        config.method = artifact.method;
        if let Some(joint) = artifact.config {
            config.rank = joint.refine.rank;
            config.bound = joint.refine.bound;
            config.convex = joint.convex;
            config.refine = joint.refine;
            config.split_mode = joint.split_mode;
        }
    }
    if let Some(method) = args.method {
        config.method = method;
    }
    if let Some(rank) = args.rank {
        config.rank = rank;
    }
    config.validate()
}

fn emit<T: Serialize>(out: Option<&Path>, value: &T) -> Result<()> {
    match out {
        Some(path) => write_json(path, value),
        None => {
            let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Data(e.to_string()))?;
            text.push('\n');
            match std::io::stdout().lock().write_all(text.as_bytes()) {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Error::Data(format!("stdout: {e}"))),
                _ => Ok(()),
            }
        }
    }
}

fn cmd_simulate(config: &RunConfig, out: &Path, n: Option<usize>, trial: u64, format: VoteFormat) -> Result<()> {
    let mut synthetic = config.synthetic.clone();
    if let Some(n) = n {
        synthetic.n = n;
    }
    let (truth, data) = simulate(&synthetic, trial)?;
    let ext = match format {
        VoteFormat::Csv => "csv",
        VoteFormat::Jsonl => "jsonl",
    };
    write_dataset(&out.join(format!("comparisons.{ext}")), &data, format)?;
    write_scores(&out.join("truth.tsv"), &truth)
}

#[derive(Serialize)]
struct IngestSummary {
    schema_version: u32,
    votes_read: usize,
    rows_skipped: usize,
    dropped: DropCounts,
    comparisons: usize,
    tasks: Vec<String>,
    models: Vec<(String, usize)>,
}

fn cmd_ingest(
    config: &RunConfig,
    input: &Path,
    format: Option<VoteFormat>,
    out: &Path,
    fraction: Option<f64>,
    reference: Option<&Path>,
    summary: Option<&Path>,
) -> Result<()> {
    let in_format = format_for(input, format)?;
    let parsed = parse_votes(input, in_format)?;
    let built = build_dataset(&parsed.votes, &config.ingest)?;
    if let Some(path) = reference {
        write_scores(path, &fit_ground_truth_btl(&built.dataset)?)?;
    }
    let data = match fraction {
        Some(f) => subsample(&built.dataset, f, config.seed)?,
        None => built.dataset,
    };
    let out_format = VoteFormat::from_path(out).unwrap_or(VoteFormat::Csv);
    write_dataset(out, &data, out_format)?;
    if let Some(path) = summary {
        let kept: std::collections::BTreeSet<&str> =
            data.index().model_names().iter().map(String::as_str).collect();
        write_json(
            path,
            &IngestSummary {
                schema_version: SCHEMA_VERSION,
                votes_read: parsed.votes.len(),
                rows_skipped: parsed.skipped,
                dropped: built.dropped,
                comparisons: data.len(),
                tasks: data.index().task_names().to_vec(),
                models: model_frequencies(&parsed.votes).into_iter().filter(|(m, _)| kept.contains(m.as_str())).collect(),
            },
        )?;
    }
    Ok(())
}

fn cmd_fit(config: &mut RunConfig, data: &DataArgs, model: &ModelArgs, out: &Path, scores: Option<&Path>) -> Result<()> {
    apply_model_args(config, model)?;
    let data = load_data(data)?;
    let estimator = config.estimator();
    estimator.validate(&data)?;
    let artifact = match config.method {
        Method::Joint => {
            let joint = config.joint();
            FitArtifact::from_joint(&fit_joint(&data, &joint)?, &joint)
        }
        Method::PerTaskBtl => FitArtifact::from_scores(Method::PerTaskBtl, &estimator.fit(&data)?),
    };
    if let Some(path) = scores {
        write_scores(path, &artifact.scores()?)?;
    }
    write_json(out, &artifact)
}

fn lookup(kind: &str, name: &str, id: Option<usize>) -> Result<usize> {
    id.ok_or_else(|| Error::Data(format!("unknown {kind} {name:?}")))
}

fn cmd_infer(
    config: &mut RunConfig,
    data: &DataArgs,
    model: &ModelArgs,
    contrasts: &[String],
    alpha: Option<f64>,
    out: Option<&Path>,
) -> Result<()> {
    apply_model_args(config, model)?;
    let alpha = alpha.unwrap_or(config.bootstrap.alpha);
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config(format!("alpha {alpha} not in (0, 1)")));
    }
    let data = load_data(data)?;
    let idx = data.index().clone();
    let mut specs = Vec::new();
    let mut names = Vec::new();
    for text in contrasts {
        let parts: Vec<&str> = text.split(',').map(str::trim).collect();
        let [task, a, b] = parts[..] else {
            return Err(Error::Config(format!("contrast {text:?} must be task,model_a,model_b")));
        };
        let t = lookup("task", task, idx.task_id(task))?;
        let ma = lookup("model", a, idx.model_id(a))?;
        let mb = lookup("model", b, idx.model_id(b))?;
        if ma == mb {
            return Err(Error::Config(format!("contrast {text:?} compares a model with itself")));
        }
        specs.push(ContrastSpec::gap(t, ma, mb));
        names.push((task.to_string(), a.to_string(), b.to_string()));
    }
    let map = config.estimator().influence_map(&data)?;
    let z = standard_normal_quantile(1.0 - alpha / 2.0);
    let mut rows = Vec::new();
    for (spec, (task, a, b)) in specs.iter().zip(names) {
        let g = map.infer(spec)?;
        rows.push(InferRow {
            task,
            model_a: a,
            model_b: b,
            estimate: g.estimate,
            std_error: g.std_error,
            lower: g.estimate - z * g.std_error,
            upper: g.estimate + z * g.std_error,
        });
    }
    let cov = map.covariance(&specs)?;
    let covariance = cov.row_iter().map(|r| r.iter().copied().collect()).collect();
    emit(out, &InferReport { schema_version: SCHEMA_VERSION, method: config.method, n: data.len(), alpha, rows, covariance })
}

fn standard_normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

#[allow(clippy::too_many_arguments)]
fn cmd_certify(
    config: &mut RunConfig,
    data: &DataArgs,
    model: &ModelArgs,
    targets: &[String],
    task: Option<&str>,
    k: Option<usize>,
    sets: bool,
    out: Option<&Path>,
) -> Result<()> {
    apply_model_args(config, model)?;
    let k = k.unwrap_or(config.certify.k);
    if !sets && targets.is_empty() {
        return Err(Error::Config("pass --target MODEL or --topk-sets".into()));
    }
    let data = load_data(data)?;
    let idx = data.index().clone();
    let scope = match task {
        Some(name) => Scope::OneTask(lookup("task", name, idx.task_id(name))?),
        None => Scope::AllTasks,
    };
    let ids = targets.iter().map(|m| lookup("model", m, idx.model_id(m))).collect::<Result<Vec<_>>>()?;
    let map = config.estimator().influence_map(&data)?;
    let mut reports = Vec::new();
    for id in ids {
        reports.push(certify_model(map.as_ref(), scope, id, k, &config.bootstrap)?);
    }
    if sets {
        reports.push(topk_sets(map.as_ref(), k, &config.bootstrap)?);
    }
    emit(
        out,
        &CertifyOutput {
            schema_version: SCHEMA_VERSION,
            method: config.method,
            k,
            task_names: idx.task_names().to_vec(),
            model_names: idx.model_names().to_vec(),
            reports,
        },
    )
}

fn cmd_bench(config: &mut RunConfig, out: &Path, experiment: Option<Experiment>, trials: Option<usize>) -> Result<()> {
    if let Some(e) = experiment {
        config.bench.experiment = e;
    }
    if let Some(t) = trials {
        config.bench.trials = t;
    }
    config.validate()?;
    let bench = &config.bench;
    let estimator = config.estimator();
    match bench.experiment {
        Experiment::Sweep => {
            let result = run_sim_sweep(&SweepConfig {
                base: config.synthetic.clone(),
                n_values: bench.n_values.clone(),
                ks: bench.ks.clone(),
                trials: bench.trials,
                methods: bench.methods.clone(),
                estimator,
            })?;
            result.write_csv(&out.join("hamming.csv"))?;
            result.write_plot_data(&out.join("error_decay.csv"))?;
            write_summary(&out.join("summary.json"), "sweep", &result)
        }
        Experiment::Coverage => {
            let result = run_coverage_experiment(&CoverageConfig {
                base: config.synthetic.clone(),
                scopes: bench.scopes.clone(),
                k: bench.k,
                bootstrap: config.bootstrap,
                trials: bench.trials,
                methods: bench.methods.clone(),
                estimator,
            })?;
            write_summary(&out.join("summary.json"), "coverage", &result)
        }
        Experiment::Normality => {
            let result = run_normality_experiment(&NormalityConfig {
                base: config.synthetic.clone(),
                contrasts: bench.contrasts.iter().map(|&[t, a, b]| ContrastSpec::gap(t, a, b)).collect(),
                trials: bench.trials,
                alpha: config.bootstrap.alpha,
                estimator,
            })?;
            write_summary(&out.join("summary.json"), "normality", &result)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normal_quantiles() {
        assert!((standard_normal_quantile(0.975) - 1.959963984540054).abs() < 1e-9);
        assert!((standard_normal_quantile(0.5)).abs() < 1e-12);
        assert!((standard_normal_quantile(0.01) + 2.326347874040841).abs() < 1e-9);
    }
}
