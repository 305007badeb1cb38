//! Labeled frozen-feature samples routed to the tasks of a scenario.
//!
//! Samples come from one of two sources: [`synthesize`] draws
//! class/domain-conditional Gaussian clusters, and [`ingest_embeddings`]
//! reads precomputed embeddings in the text format
//!
//! ```text
//! # class_id domain_id split d v1 ... vd
//! 3 1 train 4 0.1 -0.5 2.0 1.25
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::scenario::{self, Cell, ScenarioError, ScenarioSpec};
use crate::textfmt::{self, LineError};

pub const EMBEDDINGS_FILE: &str = "embeddings.txt";
pub const SCENARIO_FILE: &str = "scenario.uil";
pub const DEFAULT_HOLDOUT: f64 = 0.2;

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("feature dimension {0} too small (need >= 2)")]
    DimensionTooSmall(usize),
    #[error("invalid synthetic config: {0}")]
    Config(String),
    #[error("imbalance profile assigns 0 samples to class {class_id} (rank {rank})")]
    Profile { class_id: usize, rank: usize },
    #[error("embedding format error at {0}")]
    Format(#[from] LineError),
    #[error("line {line}: cell {cell} is not part of the scenario grid")]
    UnknownCell { line: usize, cell: Cell },
    #[error("line {line}: feature dimension {found}, expected {expected}")]
    DimensionMismatch { line: usize, expected: usize, found: usize },
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl DatasetError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub features: Vec<f64>,
    pub class_id: usize,
    pub domain_id: usize,
    pub task_index: usize,
}

impl LabeledSample {
    pub fn cell(&self) -> Cell {
        Cell::new(self.class_id, self.domain_id)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TaskDataset {
    pub task_index: usize,
    pub train: Vec<LabeledSample>,
    pub test: Vec<LabeledSample>,
}

impl TaskDataset {
    pub fn new(task_index: usize) -> Self {
        Self {
            task_index,
            ..Default::default()
        }
    }

    /// Classes present in the training split, ascending.
    pub fn train_classes(&self) -> BTreeSet<usize> {
        self.train.iter().map(|s| s.class_id).collect()
    }

    pub fn dim(&self) -> Option<usize> {
        self.train.first().or(self.test.first()).map(|s| s.features.len())
    }
}

/// Per-cell sample counts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ImbalanceProfile {
    /// `n` samples in every cell.
    Constant(usize),
    /// Within a task, the class of rank `r` (by ascending class id) gets
    /// `round(base * ratio^r)` samples per cell.
    Geometric { base: usize, ratio: f64 },
}

impl ImbalanceProfile {
    pub fn count(&self, rank: usize) -> usize {
        match *self {
            ImbalanceProfile::Constant(n) => n,
            ImbalanceProfile::Geometric { base, ratio } => {
                let exp = i32::try_from(rank).unwrap_or(i32::MAX);
                (base as f64 * ratio.powi(exp)).round() as usize
            }
        }
    }
}

impl fmt::Display for ImbalanceProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ImbalanceProfile::Constant(n) => write!(f, "constant({n})"),
            ImbalanceProfile::Geometric { base, ratio } => write!(f, "geometric({base},{ratio})"),
        }
    }
}

impl FromStr for ImbalanceProfile {
    type Err = String;

    /// Accepts `constant(N)`, `geometric(BASE,RATIO)` and the keyed form
    /// `geometric(base=BASE,ratio=RATIO)`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let (name, args) = s
            .strip_suffix(')')
            .and_then(|s| s.split_once('('))
            .ok_or_else(|| format!("malformed profile `{s}`"))?;
        let args: Vec<&str> = args
            .split(',')
            .map(|a| a.trim())
            .map(|a| a.split_once('=').map_or(a, |(_, v)| v.trim()))
            .collect();
        match (name.trim(), args.as_slice()) {
            ("constant", [n]) => n
                .parse()
                .map(ImbalanceProfile::Constant)
                .map_err(|_| format!("invalid count `{n}`")),
            ("geometric", [b, r]) => {
                let base = b.parse().map_err(|_| format!("invalid base `{b}`"))?;
                let ratio: f64 = r.parse().map_err(|_| format!("invalid ratio `{r}`"))?;
                if !(ratio.is_finite() && ratio > 0.0) {
                    return Err(format!("ratio must be positive, got `{r}`"));
                }
                Ok(ImbalanceProfile::Geometric { base, ratio })
            }
            _ => Err(format!("unknown profile `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub feature_dim: usize,
    /// Radius of the sphere the class anchors are drawn from.
    pub class_separation: f64,
    /// Norm of every domain offset.
    pub domain_shift: f64,
    pub noise_std: f64,
    pub profile: ImbalanceProfile,
    /// Fraction of each cell held out for test (floor, minimum one sample).
    pub holdout: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            feature_dim: 16,
            class_separation: 3.0,
            domain_shift: 1.5,
            noise_std: 1.0,
            profile: ImbalanceProfile::Constant(64),
            holdout: DEFAULT_HOLDOUT,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.feature_dim < 2 {
            return Err(DatasetError::DimensionTooSmall(self.feature_dim));
        }
        for (name, v) in [
            ("class_separation", self.class_separation),
            ("domain_shift", self.domain_shift),
            ("noise_std", self.noise_std),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(DatasetError::Config(format!("{name} must be > 0, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&self.holdout) {
            return Err(DatasetError::Config(format!(
                "holdout must be in [0, 1), got {}",
                self.holdout
            )));
        }
        Ok(())
    }
}

/// Number of test samples held out of a cell with `n` samples.
pub fn test_count(n: usize, holdout: f64) -> usize {
    ((holdout * n as f64).floor() as usize).max(1).min(n)
}

fn random_on_sphere(rng: &mut ChaCha8Rng, dim: usize, radius: f64) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x * radius / norm).collect();
        }
    }
}

/// Draws Gaussian clusters for every cell of `spec`.
///
/// A cell `(c, m)` samples `anchor_c + offset_m + noise_std * N(0, I)`. The
/// first `test_count` samples of each cell form its test split.
pub fn synthesize(spec: &ScenarioSpec, cfg: &SyntheticConfig) -> Result<Vec<TaskDataset>, DatasetError> {
    cfg.validate()?;
    let grid = spec.grid();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let anchors: Vec<Vec<f64>> = (0..grid.num_classes)
        .map(|_| random_on_sphere(&mut rng, cfg.feature_dim, cfg.class_separation))
        .collect();
    let offsets: Vec<Vec<f64>> = (0..grid.num_domains)
        .map(|_| random_on_sphere(&mut rng, cfg.feature_dim, cfg.domain_shift))
        .collect();

    let mut out = Vec::with_capacity(spec.num_tasks());
    for (t, cells) in spec.tasks().iter().enumerate() {
        let ranks: BTreeMap<usize, usize> = spec
            .task_classes(t)
            .into_iter()
            .enumerate()
            .map(|(r, c)| (c, r))
            .collect();
        let mut ds = TaskDataset::new(t);
        for &cell in cells {
            let rank = ranks[&cell.class_id];
            let n = cfg.profile.count(rank);
            if n == 0 {
                return Err(DatasetError::Profile {
                    class_id: cell.class_id,
                    rank,
                });
            }
            let n_test = test_count(n, cfg.holdout);
            let center: Vec<f64> = anchors[cell.class_id]
                .iter()
                .zip(&offsets[cell.domain_id])
                .map(|(a, o)| a + o)
                .collect();
            for i in 0..n {
                let features = center
                    .iter()
                    .map(|&mu| mu + cfg.noise_std * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                let sample = LabeledSample {
                    features,
                    class_id: cell.class_id,
                    domain_id: cell.domain_id,
                    task_index: t,
                };
                if i < n_test {
                    ds.test.push(sample);
                } else {
                    ds.train.push(sample);
                }
            }
        }
        out.push(ds);
    }
    Ok(out)
}

/// Parses embedding rows and routes them to the owning task of `spec`.
/// Always returns one dataset per task, in task order.
pub fn parse_embeddings(text: &str, spec: &ScenarioSpec) -> Result<Vec<TaskDataset>, DatasetError> {
    let grid = spec.grid();
    let mut out: Vec<TaskDataset> = (0..spec.num_tasks()).map(TaskDataset::new).collect();
    let mut dim: Option<usize> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let row = raw.trim();
        if row.is_empty() || row.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = row.split_whitespace().collect();
        if fields.len() < 4 {
            return Err(LineError::new(line, format!("expected at least 4 fields, found {}", fields.len())).into());
        }
        let class_id: usize = textfmt::parse_num(fields[0], "class id", line)?;
        let domain_id: usize = textfmt::parse_num(fields[1], "domain id", line)?;
        let is_train = match fields[2] {
            "train" => true,
            "test" => false,
            other => return Err(LineError::new(line, format!("split must be train|test, found `{other}`")).into()),
        };
        let d: usize = textfmt::parse_num(fields[3], "dimension", line)?;
        if d == 0 {
            return Err(LineError::new(line, "dimension must be >= 1").into());
        }
        if fields.len() - 4 != d {
            return Err(LineError::new(
                line,
                format!("declared dimension {d} but found {} values", fields.len() - 4),
            )
            .into());
        }
        match dim {
            Some(expected) if expected != d => {
                return Err(DatasetError::DimensionMismatch {
                    line,
                    expected,
                    found: d,
                })
            }
            _ => dim = Some(d),
        }
        let features = fields[4..]
            .iter()
            .map(|v| textfmt::parse_f64(v, "feature value", line))
            .collect::<Result<Vec<_>, _>>()?;
        let cell = Cell::new(class_id, domain_id);
        if !grid.contains(cell) {
            return Err(DatasetError::UnknownCell { line, cell });
        }
        let t = spec.task_of(cell).ok_or(DatasetError::UnknownCell { line, cell })?;
        let sample = LabeledSample {
            features,
            class_id,
            domain_id,
            task_index: t,
        };
        if is_train {
            out[t].train.push(sample);
        } else {
            out[t].test.push(sample);
        }
    }
    Ok(out)
}

pub fn ingest_embeddings(path: &Path, spec: &ScenarioSpec) -> Result<Vec<TaskDataset>, DatasetError> {
    let text = fs::read_to_string(path).map_err(|e| DatasetError::io(path, e))?;
    parse_embeddings(&text, spec)
}

/// Writes datasets in the embedding format, task by task, train rows first.
/// Reading the output back with [`parse_embeddings`] reproduces the input
/// exactly.
pub fn write_embeddings(tasks: &[TaskDataset]) -> String {
    let mut out = String::from("# class_id domain_id split d v1 ... vd\n");
    for ds in tasks {
        for (split, samples) in [("train", &ds.train), ("test", &ds.test)] {
            for s in samples {
                out.push_str(&format!(
                    "{} {} {} {}",
                    s.class_id,
                    s.domain_id,
                    split,
                    s.features.len()
                ));
                for v in &s.features {
                    out.push_str(&format!(" {v:e}"));
                }
                out.push('\n');
            }
        }
    }
    out
}

/// Writes a self-contained data directory (scenario copy plus embeddings).
pub fn save_data_dir(dir: &Path, spec: &ScenarioSpec, tasks: &[TaskDataset]) -> Result<(), DatasetError> {
    fs::create_dir_all(dir).map_err(|e| DatasetError::io(dir, e))?;
    let sp = dir.join(SCENARIO_FILE);
    fs::write(&sp, scenario::serialize_scenario(spec)).map_err(|e| DatasetError::io(&sp, e))?;
    let ep = dir.join(EMBEDDINGS_FILE);
    fs::write(&ep, write_embeddings(tasks)).map_err(|e| DatasetError::io(&ep, e))?;
    Ok(())
}

/// Loads a data directory written by [`save_data_dir`].
pub fn load_data_dir(dir: &Path) -> Result<(ScenarioSpec, Vec<TaskDataset>), DatasetError> {
    let sp = dir.join(SCENARIO_FILE);
    let text = fs::read_to_string(&sp).map_err(|e| DatasetError::io(&sp, e))?;
    let spec = scenario::parse_scenario(&text)?;
    let tasks = ingest_embeddings(&dir.join(EMBEDDINGS_FILE), &spec)?;
    Ok((spec, tasks))
}

/// Exact per-class train-sample counts.
pub fn class_histogram(ds: &TaskDataset) -> BTreeMap<usize, usize> {
    let mut h = BTreeMap::new();
    for s in &ds.train {
        *h.entry(s.class_id).or_insert(0) += 1;
    }
    h
}
