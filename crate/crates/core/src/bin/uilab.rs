use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use uilab::dataset::{self, ImbalanceProfile, SyntheticConfig};
use uilab::metrics;
use uilab::plan::{self, ExperimentPlan};
use uilab::scenario::{self, GridSpec, Regime, RegimeKind};
use uilab::trainer::{self, Method, RunRecord, TrainConfig};

#[derive(Parser)]
#[command(
    name = "uilab",
    version,
    about = "Universal incremental learning streams and recalibrated linear-probe training"
)]
struct Cli {
    /// Seed for generation and training. For `plan run`, replaces the plan's seed list.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output path (file or directory, depending on the command).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    #[command(subcommand)]
    Scenario(ScenarioCmd),
    #[command(subcommand)]
    Data(DataCmd),
    /// Train on a data directory and write a run directory.
    Train(TrainArgs),
    /// Evaluate every checkpoint of a run and write the CSV reports.
    Eval {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Report directory (defaults to --out, then the run directory).
        #[arg(short = 'o')]
        report_dir: Option<PathBuf>,
    },
    #[command(subcommand)]
    Analyze(AnalyzeCmd),
    #[command(subcommand)]
    Plan(PlanCmd),
}

#[derive(Subcommand)]
enum ScenarioCmd {
    /// Generate a task stream and write it as a scenario file.
    Gen(ScenarioArgs),
}

#[derive(Args)]
struct ScenarioArgs {
    #[arg(long, default_value_t = 6)]
    classes: usize,
    #[arg(long, default_value_t = 4)]
    domains: usize,
    #[arg(long, default_value_t = 8)]
    tasks: usize,
    #[arg(long, default_value = "uil")]
    regime: RegimeKind,
    /// Classes per task (vil only).
    #[arg(long, default_value_t = 1)]
    vil_classes: usize,
    /// Minimum domains per task (uil only).
    #[arg(long)]
    min_domains: Option<usize>,
}

#[derive(Subcommand)]
enum DataCmd {
    /// Synthesize Gaussian features for every cell of a scenario.
    Synth(SynthArgs),
    /// Validate an embedding file against a scenario and store it as a data directory.
    Ingest {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
    },
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long, default_value_t = 16)]
    dim: usize,
    #[arg(long, default_value_t = 3.0)]
    separation: f64,
    #[arg(long, default_value_t = 1.5)]
    shift: f64,
    #[arg(long, default_value_t = 1.0)]
    noise: f64,
    #[arg(long, default_value = "constant(64)")]
    profile: ImbalanceProfile,
    #[arg(long, default_value_t = dataset::DEFAULT_HOLDOUT)]
    holdout: f64,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// baseline, mico, or ablation(mobj=..,dir=..,mag=..)
    #[arg(long, default_value = "mico")]
    method: Method,
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    #[arg(long, default_value_t = 64)]
    batch: usize,
    #[arg(long, default_value_t = 0.01)]
    gamma: f64,
    #[arg(long, default_value_t = 0.5)]
    rho: f64,
    #[arg(long, default_value_t = 0.0)]
    w_floor: f64,
}

#[derive(Subcommand)]
enum AnalyzeCmd {
    /// Prediction-entropy interval histogram of a checkpoint.
    Entropy {
        #[command(flatten)]
        target: AnalyzeTarget,
        #[arg(long, default_value_t = metrics::DEFAULT_INTERVALS)]
        intervals: usize,
    },
    /// Per-class mean gradient magnitude against final accuracy.
    Classes {
        #[command(flatten)]
        target: AnalyzeTarget,
    },
}

#[derive(Args)]
struct AnalyzeTarget {
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint to analyze; defaults to the last task.
    #[arg(long)]
    task: Option<usize>,
}

#[derive(Subcommand)]
enum PlanCmd {
    /// Run every (method, seed) cell of a plan file.
    Run {
        plan: PathBuf,
        /// Skip cells that already finished.
        #[arg(long)]
        resume: bool,
    },
}

/// Errors caused by bad input exit with 2, I/O failures with 1.
fn exit_code(err: &anyhow::Error) -> u8 {
    if err.chain().any(|c| c.is::<std::io::Error>()) {
        1
    } else {
        2
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn out_path(cli_out: &Option<PathBuf>, fallback: &str) -> PathBuf {
    cli_out.clone().unwrap_or_else(|| PathBuf::from(fallback))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn run(cli: Cli) -> Result<u8> {
    let seed = cli.seed.unwrap_or(0);
    let say = |msg: String| {
        if !cli.quiet {
            eprintln!("{msg}");
        }
    };
    match &cli.command {
        Command::Scenario(ScenarioCmd::Gen(a)) => {
            let regime = Regime {
                kind: a.regime,
                vil_classes_per_task: a.vil_classes,
                min_domains_per_task: a.min_domains,
            };
            let grid = GridSpec::new(a.classes, a.domains)?;
            let spec = scenario::generate_scenario(grid, regime, a.tasks, seed)?;
            let path = out_path(&cli.out, "scenario.uil");
            write(&path, scenario::serialize_scenario(&spec))?;
            say(format!("wrote {} ({} tasks)", path.display(), spec.num_tasks()));
        }
        Command::Data(DataCmd::Synth(a)) => {
            let spec = read_scenario(&a.scenario)?;
            let cfg = SyntheticConfig {
                feature_dim: a.dim,
                class_separation: a.separation,
                domain_shift: a.shift,
                noise_std: a.noise,
                profile: a.profile,
                holdout: a.holdout,
                seed,
            };
            let tasks = dataset::synthesize(&spec, &cfg)?;
            let dir = out_path(&cli.out, "data");
            dataset::save_data_dir(&dir, &spec, &tasks)?;
            let n: usize = tasks.iter().map(|t| t.train.len() + t.test.len()).sum();
            say(format!("wrote {} ({n} samples)", dir.display()));
        }
        Command::Data(DataCmd::Ingest { scenario, embeddings }) => {
            let spec = read_scenario(scenario)?;
            let tasks = dataset::ingest_embeddings(embeddings, &spec)?;
            if let Some(t) = tasks.iter().find(|t| t.train.is_empty() && t.test.is_empty()) {
                bail!("task {} received no samples", t.task_index);
            }
            let dir = out_path(&cli.out, "data");
            dataset::save_data_dir(&dir, &spec, &tasks)?;
            say(format!("wrote {}", dir.display()));
        }
        Command::Train(a) => {
            let (spec, tasks) = dataset::load_data_dir(&a.data)?;
            let mut cfg = TrainConfig {
                learning_rate: a.lr,
                epochs_per_task: a.epochs,
                batch_size: a.batch,
                seed,
                method: a.method,
                ..TrainConfig::default()
            };
            cfg.recal.gamma = a.gamma;
            cfg.recal.rho = a.rho;
            cfg.recal.w_floor = a.w_floor;
            let record = trainer::train_stream(&tasks, &cfg)?;
            let dir = out_path(&cli.out, "run");
            write(&dir.join(dataset::SCENARIO_FILE), scenario::serialize_scenario(&spec))?;
            let extra = vec![
                ("scenario".to_string(), dataset::SCENARIO_FILE.to_string()),
                ("data".to_string(), a.data.display().to_string()),
            ];
            record.save(&dir, &extra)?;
            say(format!("wrote {} (fingerprint {})", dir.display(), record.fingerprint));
        }
        Command::Eval { run, data, report_dir } => {
            let (record, _) = RunRecord::load(run)?;
            let (_, tasks) = dataset::load_data_dir(data)?;
            let dir = report_dir
                .clone()
                .or_else(|| cli.out.clone())
                .unwrap_or_else(|| run.clone());
            let f = plan::write_reports(&dir, &record, &tasks)?;
            say(format!(
                "avg_acc={} weighted_acc={} forgetting={}",
                f.avg_acc, f.weighted_acc, f.forgetting
            ));
        }
        Command::Analyze(cmd) => {
            let csv = match cmd {
                AnalyzeCmd::Entropy { target, intervals } => {
                    let (state, tasks) = load_target(target)?;
                    let test = tasks.iter().flat_map(|t| t.test.iter().cloned()).collect::<Vec<_>>();
                    let p = metrics::entropy_profile(&state, &test, *intervals)?;
                    p.to_csv()
                }
                AnalyzeCmd::Classes { target } => {
                    let (record, _) = RunRecord::load(&target.run)?;
                    let (state, tasks) = load_target(target)?;
                    let test = tasks.iter().flat_map(|t| t.test.iter().cloned()).collect::<Vec<_>>();
                    let acc = metrics::per_class_accuracy(&state, &test)?;
                    let mut hist = std::collections::BTreeMap::new();
                    for t in &tasks {
                        for (c, n) in dataset::class_histogram(t) {
                            *hist.entry(c).or_insert(0) += n;
                        }
                    }
                    let p = metrics::class_gradient_profile(&record.diagnostics, &acc, &hist);
                    p.to_csv()
                }
            };
            match &cli.out {
                Some(path) => write(path, csv)?,
                None => print!("{csv}"),
            }
        }
        Command::Plan(PlanCmd::Run { plan: path, resume }) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let mut p: ExperimentPlan = plan::parse_plan(&text)?;
            if let Some(s) = cli.seed {
                p.seeds = vec![s];
            }
            if let Some(o) = &cli.out {
                p.output_root = o.clone();
            }
            let outcome = plan::run_plan(&p, *resume)?;
            if !cli.quiet {
                print!("{}", outcome.summary_csv());
            }
            for f in &outcome.failures {
                eprintln!("cell {}/seed_{} failed: {}", f.method, f.seed, f.error);
            }
            if !outcome.is_complete() {
                return Ok(3);
            }
        }
    }
    Ok(0)
}

fn read_scenario(path: &Path) -> Result<scenario::ScenarioSpec> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    scenario::parse_scenario(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Loads the requested checkpoint and the tasks it has seen.
fn load_target(t: &AnalyzeTarget) -> Result<(uilab::ClassifierState, Vec<uilab::TaskDataset>)> {
    let (record, _) = RunRecord::load(&t.run)?;
    let (_, mut tasks) = dataset::load_data_dir(&t.data)?;
    let k = match t.task {
        Some(k) => k,
        None => record
            .checkpoints
            .len()
            .checked_sub(1)
            .ok_or_else(|| anyhow!("run has no checkpoints"))?,
    };
    let state = record.checkpoint(k)?.clone();
    tasks.truncate(k + 1);
    Ok((state, tasks))
}
