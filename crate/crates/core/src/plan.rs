//! Multi-seed experiment plans: the component ablation grid and the γ sweep.
//!
//! A plan file is a sequence of `[section]` headers followed by
//! `key = value` lines:
//!
//! ```text
//! [plan]
//! seeds = 0,1,2
//! output = runs/ablation
//! preset = ablation
//!
//! [scenario]
//! classes = 6
//! domains = 4
//! tasks = 8
//! regime = uil
//!
//! [data]
//! profile = geometric(64,0.5)
//!
//! [train]
//! lr = 0.1
//!
//! [method mico-strong]
//! method = mico
//! gamma = 0.1
//! ```
//!
//! Every `(method, seed)` cell generates its scenario, data and training
//! order from that seed, so cells are independent and run in parallel.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::dataset::{self, DatasetError, ImbalanceProfile, SyntheticConfig, TaskDataset};
use crate::metrics::{self, AccuracyMatrix, FinalMetrics, MetricsError};
use crate::scenario::{self, GridSpec, Regime, RegimeKind, ScenarioError};
use crate::textfmt::{self, LineError};
use crate::trainer::{self, Method, RunRecord, TrainConfig, TrainError};

pub const DONE_MARKER: &str = "DONE";
pub const REPORT_FILE: &str = "report.csv";
pub const ENTROPY_FILE: &str = "entropy_profile.csv";
pub const CLASS_PROFILE_FILE: &str = "class_profile.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const GAMMA_SWEEP: [f64; 4] = [1.0, 0.1, 0.01, 0.001];

#[derive(Debug, thiserror::Error)]
pub enum PlanError {
    #[error("plan {0}")]
    Parse(#[from] LineError),
    #[error("invalid plan: {0}")]
    Invalid(String),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PlanError + '_ {
    move |source| PlanError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioArgs {
    pub grid: GridSpec,
    pub regime: Regime,
    pub num_tasks: usize,
}

impl Default for ScenarioArgs {
    fn default() -> Self {
        Self {
            grid: GridSpec {
                num_classes: 6,
                num_domains: 4,
            },
            regime: Regime::uil(),
            num_tasks: 8,
        }
    }
}

impl ScenarioArgs {
    pub fn generate(&self, seed: u64) -> Result<scenario::ScenarioSpec, ScenarioError> {
        scenario::generate_scenario(self.grid, self.regime, self.num_tasks, seed)
    }

    pub fn set(&mut self, key: &str, value: &str, line: usize) -> Result<(), LineError> {
        match key {
            "classes" => self.grid.num_classes = textfmt::parse_num(value, key, line)?,
            "domains" => self.grid.num_domains = textfmt::parse_num(value, key, line)?,
            "tasks" => self.num_tasks = textfmt::parse_num(value, key, line)?,
            "regime" => {
                let kind: RegimeKind = value.parse().map_err(|e: String| LineError::new(line, e))?;
                self.regime.kind = kind;
            }
            "vil_classes" => self.regime.vil_classes_per_task = textfmt::parse_num(value, key, line)?,
            "min_domains" => self.regime.min_domains_per_task = Some(textfmt::parse_num(value, key, line)?),
            _ => return Err(LineError::new(line, format!("unknown scenario key `{key}`"))),
        }
        Ok(())
    }
}

pub fn set_data_key(cfg: &mut SyntheticConfig, key: &str, value: &str, line: usize) -> Result<(), LineError> {
    match key {
        "dim" => cfg.feature_dim = textfmt::parse_num(value, key, line)?,
        "separation" => cfg.class_separation = textfmt::parse_f64(value, key, line)?,
        "shift" => cfg.domain_shift = textfmt::parse_f64(value, key, line)?,
        "noise" => cfg.noise_std = textfmt::parse_f64(value, key, line)?,
        "holdout" => cfg.holdout = textfmt::parse_f64(value, key, line)?,
        "profile" => {
            cfg.profile = value
                .parse::<ImbalanceProfile>()
                .map_err(|e| LineError::new(line, e.to_string()))?
        }
        _ => return Err(LineError::new(line, format!("unknown data key `{key}`"))),
    }
    Ok(())
}

pub fn set_train_key(cfg: &mut TrainConfig, key: &str, value: &str, line: usize) -> Result<(), LineError> {
    match key {
        "lr" => cfg.learning_rate = textfmt::parse_f64(value, key, line)?,
        "epochs" => cfg.epochs_per_task = textfmt::parse_num(value, key, line)?,
        "batch" => cfg.batch_size = textfmt::parse_num(value, key, line)?,
        "gamma" => cfg.recal.gamma = textfmt::parse_f64(value, key, line)?,
        "rho" => cfg.recal.rho = textfmt::parse_f64(value, key, line)?,
        "w_floor" => cfg.recal.w_floor = textfmt::parse_f64(value, key, line)?,
        "method" => cfg.method = value.parse().map_err(|e: String| LineError::new(line, e))?,
        _ => return Err(LineError::new(line, format!("unknown train key `{key}`"))),
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodSpec {
    pub name: String,
    /// Seed is overwritten per cell.
    pub config: TrainConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentPlan {
    pub scenario: ScenarioArgs,
    /// Seed is overwritten per cell.
    pub data: SyntheticConfig,
    pub methods: Vec<MethodSpec>,
    pub seeds: Vec<u64>,
    pub output_root: PathBuf,
}

impl ExperimentPlan {
    /// The six ablation rows in order, all sharing `base`.
    pub fn ablation(
        scenario: ScenarioArgs,
        data: SyntheticConfig,
        base: &TrainConfig,
        seeds: Vec<u64>,
        output_root: PathBuf,
    ) -> Self {
        Self {
            scenario,
            data,
            methods: ablation_methods(base),
            seeds,
            output_root,
        }
    }

    /// Full method at each γ in [`GAMMA_SWEEP`].
    pub fn gamma_sweep(
        scenario: ScenarioArgs,
        data: SyntheticConfig,
        base: &TrainConfig,
        seeds: Vec<u64>,
        output_root: PathBuf,
    ) -> Self {
        Self {
            scenario,
            data,
            methods: gamma_methods(base),
            seeds,
            output_root,
        }
    }

    pub fn validate(&self) -> Result<(), PlanError> {
        if self.seeds.is_empty() {
            return Err(PlanError::Invalid("at least one seed is required".into()));
        }
        if self.methods.is_empty() {
            return Err(PlanError::Invalid("no methods".into()));
        }
        for (i, m) in self.methods.iter().enumerate() {
            if m.name.is_empty() || m.name.contains(['/', '\\', ',']) || m.name == "." || m.name == ".." {
                return Err(PlanError::Invalid(format!("bad method name `{}`", m.name)));
            }
            if self.methods[..i].iter().any(|o| o.name == m.name) {
                return Err(PlanError::Invalid(format!("duplicate method `{}`", m.name)));
            }
            m.config.validate()?;
        }
        self.data.validate()?;
        // checks the partition is feasible without touching the disk
        self.scenario.generate(self.seeds[0])?;
        Ok(())
    }

    pub fn cell_dir(&self, method: &str, seed: u64) -> PathBuf {
        self.output_root.join(method).join(format!("seed_{seed}"))
    }
}

fn ablation_methods(base: &TrainConfig) -> Vec<MethodSpec> {
    Method::ABLATION_GRID
        .iter()
        .map(|(name, m)| MethodSpec {
            name: name.to_string(),
            config: TrainConfig {
                method: *m,
                ..base.clone()
            },
        })
        .collect()
}

fn gamma_methods(base: &TrainConfig) -> Vec<MethodSpec> {
    GAMMA_SWEEP
        .iter()
        .map(|&g| {
            let mut config = TrainConfig {
                method: Method::Mico,
                ..base.clone()
            };
            config.recal.gamma = g;
            MethodSpec {
                name: format!("gamma-{g}"),
                config,
            }
        })
        .collect()
}

/// Parses a plan file. `[method NAME]` sections start from the `[train]`
/// settings seen so far and override them.
pub fn parse_plan(text: &str) -> Result<ExperimentPlan, PlanError> {
    enum Section {
        None,
        Plan,
        Scenario,
        Data,
        Train,
        Method(usize),
    }
    let mut scenario = ScenarioArgs::default();
    let mut data = SyntheticConfig::default();
    let mut train = TrainConfig::default();
    let mut methods: Vec<MethodSpec> = Vec::new();
    let mut seeds: Option<Vec<u64>> = None;
    let mut output: Option<PathBuf> = None;
    let mut preset: Option<String> = None;
    let mut section = Section::None;

    for (i, raw) in text.lines().enumerate() {
        let n = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(header) = line.strip_prefix('[') {
            let header = header
                .strip_suffix(']')
                .ok_or_else(|| LineError::new(n, "unterminated section header"))?
                .trim();
            section = match header {
                "plan" => Section::Plan,
                "scenario" => Section::Scenario,
                "data" => Section::Data,
                "train" => Section::Train,
                _ => {
                    let name = header
                        .strip_prefix("method")
                        .filter(|r| r.starts_with(char::is_whitespace))
                        .map(str::trim)
                        .ok_or_else(|| LineError::new(n, format!("unknown section `{header}`")))?;
                    methods.push(MethodSpec {
                        name: name.to_string(),
                        config: train.clone(),
                    });
                    Section::Method(methods.len() - 1)
                }
            };
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| LineError::new(n, format!("expected key = value, found `{line}`")))?;
        let (k, v) = (k.trim(), v.trim());
        match section {
            Section::None => return Err(LineError::new(n, "key outside any section").into()),
            Section::Plan => match k {
                "seeds" => {
                    let list = v
                        .split(',')
                        .map(|s| textfmt::parse_num(s.trim(), "seed", n))
                        .collect::<Result<Vec<u64>, _>>()?;
                    seeds = Some(list);
                }
                "output" => output = Some(PathBuf::from(v)),
                "preset" => match v {
                    "ablation" | "gamma_sweep" => preset = Some(v.to_string()),
                    _ => return Err(LineError::new(n, format!("unknown preset `{v}`")).into()),
                },
                _ => return Err(LineError::new(n, format!("unknown plan key `{k}`")).into()),
            },
            Section::Scenario => scenario.set(k, v, n)?,
            Section::Data => set_data_key(&mut data, k, v, n)?,
            Section::Train => set_train_key(&mut train, k, v, n)?,
            Section::Method(m) => set_train_key(&mut methods[m].config, k, v, n)?,
        }
    }

    let mut all = match preset.as_deref() {
        Some("ablation") => ablation_methods(&train),
        Some("gamma_sweep") => gamma_methods(&train),
        _ => Vec::new(),
    };
    all.extend(methods);
    if all.is_empty() {
        all.push(MethodSpec {
            name: train.method.to_string(),
            config: train,
        });
    }
    Ok(ExperimentPlan {
        scenario,
        data,
        methods: all,
        seeds: seeds.ok_or_else(|| LineError::new(0, "missing `seeds` in [plan]"))?,
        output_root: output.unwrap_or_else(|| PathBuf::from("plan_out")),
    })
}

/// Writes `report.csv`, `entropy_profile.csv` and `class_profile.csv` for a
/// finished run. The analyses use the final checkpoint on every task's test
/// split.
pub fn write_reports(dir: &Path, record: &RunRecord, tasks: &[TaskDataset]) -> Result<FinalMetrics, PlanError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let matrix = AccuracyMatrix::from_run(record, tasks)?;
    let p = dir.join(REPORT_FILE);
    fs::write(&p, metrics::report_csv(&matrix)?).map_err(io_err(&p))?;

    let last = record.checkpoint(record.checkpoints.len().saturating_sub(1))?;
    let seen = tasks.len().min(record.checkpoints.len());
    let test: Vec<_> = tasks[..seen].iter().flat_map(|t| t.test.iter().cloned()).collect();
    let profile = metrics::entropy_profile(last, &test, metrics::DEFAULT_INTERVALS)?;
    let p = dir.join(ENTROPY_FILE);
    fs::write(&p, profile.to_csv()).map_err(io_err(&p))?;

    let acc = metrics::per_class_accuracy(last, &test).map_err(TrainError::from)?;
    let mut hist = BTreeMap::new();
    for t in &tasks[..seen] {
        for (c, n) in dataset::class_histogram(t) {
            *hist.entry(c).or_insert(0) += n;
        }
    }
    let classes = metrics::class_gradient_profile(&record.diagnostics, &acc, &hist);
    let p = dir.join(CLASS_PROFILE_FILE);
    fs::write(&p, classes.to_csv()).map_err(io_err(&p))?;
    Ok(metrics::final_metrics(&matrix)?)
}

fn run_cell(plan: &ExperimentPlan, method: &MethodSpec, seed: u64, resume: bool) -> Result<FinalMetrics, PlanError> {
    let dir = plan.cell_dir(&method.name, seed);
    if resume && dir.join(DONE_MARKER).exists() {
        let p = dir.join(REPORT_FILE);
        let text = fs::read_to_string(&p).map_err(io_err(&p))?;
        return metrics::parse_report_final(&text)
            .ok_or_else(|| PlanError::Invalid(format!("unreadable {}", p.display())));
    }
    let spec = plan.scenario.generate(seed)?;
    let data_cfg = SyntheticConfig {
        seed,
        ..plan.data.clone()
    };
    let tasks = dataset::synthesize(&spec, &data_cfg)?;
    let cfg = TrainConfig {
        seed,
        ..method.config.clone()
    };
    let record = trainer::train_stream(&tasks, &cfg)?;

    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let p = dir.join(dataset::SCENARIO_FILE);
    fs::write(&p, spec.to_text()).map_err(io_err(&p))?;
    let extra = vec![
        ("scenario".to_string(), dataset::SCENARIO_FILE.to_string()),
        ("data".to_string(), "synthetic".to_string()),
        ("data_seed".to_string(), seed.to_string()),
        ("dim".to_string(), data_cfg.feature_dim.to_string()),
        ("separation".to_string(), data_cfg.class_separation.to_string()),
        ("shift".to_string(), data_cfg.domain_shift.to_string()),
        ("noise".to_string(), data_cfg.noise_std.to_string()),
        ("profile".to_string(), data_cfg.profile.to_string()),
        ("holdout".to_string(), data_cfg.holdout.to_string()),
    ];
    record.save(&dir, &extra)?;
    let out = write_reports(&dir, &record, &tasks)?;
    let p = dir.join(DONE_MARKER);
    fs::write(&p, "").map_err(io_err(&p))?;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single run.
    pub std: f64,
}

impl MeanStd {
    pub fn of(xs: &[f64]) -> Option<Self> {
        if xs.is_empty() {
            return None;
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let std = if xs.len() > 1 {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Some(Self { mean, std })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub method: String,
    /// Successful runs aggregated.
    pub runs: usize,
    pub failed: usize,
    pub avg_acc: Option<MeanStd>,
    pub weighted_acc: Option<MeanStd>,
    pub forgetting: Option<MeanStd>,
    pub per_seed: Vec<(u64, FinalMetrics)>,
}

#[derive(Debug, Clone)]
pub struct CellFailure {
    pub method: String,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone)]
pub struct PlanOutcome {
    pub rows: Vec<SummaryRow>,
    pub failures: Vec<CellFailure>,
}

impl PlanOutcome {
    pub fn is_complete(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn summary_csv(&self) -> String {
        let cell = |m: Option<MeanStd>| match m {
            Some(m) => format!("{},{}", m.mean, m.std),
            None => ",".to_string(),
        };
        let mut out = String::from(
            "method,runs,failed,avg_acc_mean,avg_acc_std,weighted_acc_mean,weighted_acc_std,forgetting_mean,forgetting_std\n",
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.method,
                r.runs,
                r.failed,
                cell(r.avg_acc),
                cell(r.weighted_acc),
                cell(r.forgetting)
            ));
        }
        out
    }
}

/// Runs every `(method, seed)` cell, in parallel, and writes
/// `summary.csv` under the output root. With `resume`, cells holding a
/// `DONE` marker are read back instead of retrained. Cell failures are
/// collected, not propagated.
pub fn run_plan(plan: &ExperimentPlan, resume: bool) -> Result<PlanOutcome, PlanError> {
    plan.validate()?;
    fs::create_dir_all(&plan.output_root).map_err(io_err(&plan.output_root))?;
    let cells: Vec<(usize, u64)> = (0..plan.methods.len())
        .flat_map(|m| plan.seeds.iter().map(move |&s| (m, s)))
        .collect();
    // a repeated seed maps to the same directory, so each distinct cell runs once
    let unique: Vec<(usize, u64)> = cells.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let done: BTreeMap<(usize, u64), Result<FinalMetrics, String>> = unique
        .par_iter()
        .map(|&(m, s)| {
            (
                (m, s),
                run_cell(plan, &plan.methods[m], s, resume).map_err(|e| e.to_string()),
            )
        })
        .collect::<Vec<_>>()
        .into_iter()
        .collect();
    let results = cells.iter().map(|c| done[c].clone());

    let mut rows: Vec<SummaryRow> = plan
        .methods
        .iter()
        .map(|m| SummaryRow {
            method: m.name.clone(),
            runs: 0,
            failed: 0,
            avg_acc: None,
            weighted_acc: None,
            forgetting: None,
            per_seed: Vec::new(),
        })
        .collect();
    let mut failures = Vec::new();
    for (&(m, seed), res) in cells.iter().zip(results) {
        match res {
            Ok(f) => rows[m].per_seed.push((seed, f)),
            Err(e) => {
                rows[m].failed += 1;
                failures.push(CellFailure {
                    method: plan.methods[m].name.clone(),
                    seed,
                    error: e,
                });
            }
        }
    }
    for r in &mut rows {
        r.runs = r.per_seed.len();
        let col = |f: fn(&FinalMetrics) -> f64| r.per_seed.iter().map(|(_, m)| f(m)).collect::<Vec<_>>();
        r.avg_acc = MeanStd::of(&col(|m| m.avg_acc));
        r.weighted_acc = MeanStd::of(&col(|m| m.weighted_acc));
        r.forgetting = MeanStd::of(&col(|m| m.forgetting));
    }
    let outcome = PlanOutcome { rows, failures };
    let p = plan.output_root.join(SUMMARY_FILE);
    fs::write(&p, outcome.summary_csv()).map_err(io_err(&p))?;
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = "
[plan]
seeds = 1, 2
output = somewhere

[scenario]
classes = 3
domains = 2
tasks = 3

[data]
dim = 4
profile = constant(10)

[train]
epochs = 2
batch = 8

[method base]
method = baseline

[method full]
method = mico
gamma = 0.1
";

    #[test]
    fn parses_sections() {
        let p = parse_plan(SMALL).unwrap();
        assert_eq!(p.seeds, vec![1, 2]);
        assert_eq!(p.output_root, PathBuf::from("somewhere"));
        assert_eq!(p.scenario.grid.num_classes, 3);
        assert_eq!(p.data.feature_dim, 4);
        assert_eq!(p.methods.len(), 2);
        assert_eq!(p.methods[0].config.method, Method::BaselineCe);
        assert_eq!(p.methods[0].config.epochs_per_task, 2);
        assert_eq!(p.methods[1].config.recal.gamma, 0.1);
        p.validate().unwrap();
    }

    #[test]
    fn presets_expand_in_order() {
        let p = parse_plan("[plan]\nseeds=0\npreset=ablation\n").unwrap();
        let names: Vec<_> = p.methods.iter().map(|m| m.name.as_str()).collect();
        assert_eq!(
            names,
            ["1-baseline", "2-mobj", "3-mag", "4-mobj-mag", "5-mobj-dir", "6-mico"]
        );
        let p = parse_plan("[plan]\nseeds=0\npreset=gamma_sweep\n").unwrap();
        let g: Vec<_> = p.methods.iter().map(|m| m.config.recal.gamma).collect();
        assert_eq!(g, GAMMA_SWEEP);
    }

    #[test]
    fn rejects_bad_plans() {
        for bad in [
            "seeds=1\n",
            "[plan]\nseeds=\n",
            "[plan]\nseeds=1\n[bogus]\n",
            "[plan]\nseeds=1\n[train]\nfoo=1\n",
            "[plan]\nseeds=1\n[train\n",
            "[scenario]\nclasses=2\n",
            "[plan]\nseeds=1\n[scenario]\nregime=xil\n",
        ] {
            assert!(parse_plan(bad).is_err(), "{bad:?}");
        }
        let mut p = parse_plan("[plan]\nseeds=1\n").unwrap();
        p.seeds.clear();
        assert!(p.validate().is_err());
        let mut p = parse_plan("[plan]\nseeds=1\n[method a]\n[method a]\n").unwrap();
        assert!(p.validate().is_err());
        p.methods.truncate(1);
        p.methods[0].config.recal.gamma = f64::NAN;
        assert!(p.validate().is_err());
    }

    #[test]
    fn mean_std() {
        assert_eq!(MeanStd::of(&[]), None);
        assert_eq!(MeanStd::of(&[0.5]), Some(MeanStd { mean: 0.5, std: 0.0 }));
        let m = MeanStd::of(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(m.mean, 2.0);
        assert_eq!(m.std, 1.0);
    }

    #[test]
    fn runs_and_resumes() {
        let tmp = tempfile::tempdir().unwrap();
        let mut p = parse_plan(SMALL).unwrap();
        p.seeds = vec![1, 2, 1];
        p.output_root = tmp.path().to_path_buf();
        let first = run_plan(&p, false).unwrap();
        assert!(first.is_complete());
        assert_eq!(first.rows.len(), 2);
        for r in &first.rows {
            assert_eq!(r.runs, 3);
            assert_eq!(r.per_seed[0].1, r.per_seed[2].1);
        }
        let summary = fs::read_to_string(tmp.path().join(SUMMARY_FILE)).unwrap();
        let cell = p.cell_dir("full", 2);
        for f in [
            DONE_MARKER,
            REPORT_FILE,
            ENTROPY_FILE,
            CLASS_PROFILE_FILE,
            "run.meta",
            "scenario.uil",
        ] {
            assert!(cell.join(f).exists(), "{f}");
        }
        let again = run_plan(&p, true).unwrap();
        assert_eq!(again.summary_csv(), first.summary_csv());
        assert_eq!(fs::read_to_string(tmp.path().join(SUMMARY_FILE)).unwrap(), summary);
    }
}
