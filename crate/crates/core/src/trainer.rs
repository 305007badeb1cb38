//! Incremental training over a task stream.
//!
//! For each task in order the head grows by the task's unseen classes, then
//! plain mini-batch SGD runs over that task's training split only, with the
//! per-class gradients passed through [`recalibrate`] before the update.
//! A checkpoint of the head is kept after every task.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::dataset::{LabeledSample, TaskDataset};
use crate::model::{self, ClassifierState, ModelError};
use crate::recalibration::{recalibrate, RecalConfig, RecalError};
use crate::textfmt::{self, LineError};

pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const DIAG_FILE: &str = "diag.csv";
pub const META_FILE: &str = "run.meta";
pub const DIAG_HEADER: &str = "step,class_id,gcs,mag_pre,mag_post,w,lambda_star";

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Recal(#[from] RecalError),
    #[error("invalid train config: {0}")]
    Config(String),
    #[error("no tasks to train on")]
    NoTasks,
    #[error("no checkpoint for task {requested}: {completed} tasks completed")]
    MissingCheckpoint { requested: usize, completed: usize },
    #[error("task {0} has no test samples")]
    EmptyTestSet(usize),
    #[error("parse error at {0}")]
    Parse(#[from] LineError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TrainError + '_ {
    move |source| TrainError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Which recalibration modules run. `Ablation` flags override the toggles
/// in [`TrainConfig::recal`]; `Mico` uses them as given.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    BaselineCe,
    Mico,
    Ablation { mobj: bool, dir: bool, mag: bool },
}

impl Method {
    /// The six rows of the component ablation, from plain cross-entropy to
    /// the full method.
    pub const ABLATION_GRID: [(&'static str, Method); 6] = [
        (
            "1-baseline",
            Method::Ablation {
                mobj: false,
                dir: false,
                mag: false,
            },
        ),
        (
            "2-mobj",
            Method::Ablation {
                mobj: true,
                dir: false,
                mag: false,
            },
        ),
        (
            "3-mag",
            Method::Ablation {
                mobj: false,
                dir: false,
                mag: true,
            },
        ),
        (
            "4-mobj-mag",
            Method::Ablation {
                mobj: true,
                dir: false,
                mag: true,
            },
        ),
        (
            "5-mobj-dir",
            Method::Ablation {
                mobj: true,
                dir: true,
                mag: false,
            },
        ),
        (
            "6-mico",
            Method::Ablation {
                mobj: true,
                dir: true,
                mag: true,
            },
        ),
    ];
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::BaselineCe => f.write_str("baseline"),
            Method::Mico => f.write_str("mico"),
            Method::Ablation { mobj, dir, mag } => {
                write!(f, "ablation(mobj={mobj},dir={dir},mag={mag})")
            }
        }
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "baseline" | "baseline_ce" => return Ok(Method::BaselineCe),
            "mico" => return Ok(Method::Mico),
            _ => {}
        }
        let inner = s
            .trim()
            .strip_prefix("ablation(")
            .and_then(|r| r.strip_suffix(')'))
            .ok_or_else(|| format!("unknown method `{s}`"))?;
        let (mut mobj, mut dir, mut mag) = (false, false, false);
        for part in inner.split(',').filter(|p| !p.trim().is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| format!("malformed ablation flag `{part}`"))?;
            let v: bool = v.trim().parse().map_err(|_| format!("invalid flag value `{v}`"))?;
            match k.trim() {
                "mobj" => mobj = v,
                "dir" => dir = v,
                "mag" => mag = v,
                other => return Err(format!("unknown ablation flag `{other}`")),
            }
        }
        Ok(Method::Ablation { mobj, dir, mag })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs_per_task: usize,
    pub batch_size: usize,
    pub recal: RecalConfig,
    pub seed: u64,
    pub method: Method,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            epochs_per_task: 20,
            batch_size: 64,
            recal: RecalConfig::default(),
            seed: 0,
            method: Method::Mico,
        }
    }
}

impl TrainConfig {
    /// Recalibration settings after applying the method's toggles.
    pub fn effective_recal(&self) -> RecalConfig {
        let mut r = self.recal;
        match self.method {
            Method::BaselineCe => {
                r.enable_multi_objective = false;
                r.enable_direction = false;
                r.enable_magnitude = false;
            }
            Method::Mico => {}
            Method::Ablation { mobj, dir, mag } => {
                r.enable_multi_objective = mobj;
                r.enable_direction = dir;
                r.enable_magnitude = mag;
            }
        }
        r
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(TrainError::Config(format!(
                "learning rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch size must be >= 1".into()));
        }
        let r = self.effective_recal();
        if r.enable_direction && !r.enable_multi_objective {
            return Err(TrainError::Config(
                "direction recalibration requires the multi-objective loss".into(),
            ));
        }
        r.validate()?;
        Ok(())
    }

    /// `key=value` lines echoing every setting.
    pub fn to_meta(&self) -> String {
        let r = self.effective_recal();
        format!(
            "method={}\nlr={}\nepochs={}\nbatch={}\nseed={}\ngamma={}\nrho={}\nw_floor={}\nmobj={}\ndir={}\nmag={}\n",
            self.method,
            self.learning_rate,
            self.epochs_per_task,
            self.batch_size,
            self.seed,
            self.recal.gamma,
            self.recal.rho,
            self.recal.w_floor,
            r.enable_multi_objective,
            r.enable_direction,
            r.enable_magnitude,
        )
    }
}

/// Per-step, per-class recalibration diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagRow {
    pub step: usize,
    pub class_id: usize,
    pub gcs: f64,
    pub mag_pre: f64,
    pub mag_post: f64,
    pub w: f64,
    pub lambda_star: Option<f64>,
}

impl DiagRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.step,
            self.class_id,
            self.gcs,
            self.mag_pre,
            self.mag_post,
            self.w,
            self.lambda_star.map(|l| l.to_string()).unwrap_or_default()
        )
    }
}

pub fn write_diag_csv(rows: &[DiagRow]) -> String {
    let mut out = String::with_capacity(rows.len() * 64);
    out.push_str(DIAG_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.to_csv());
        out.push('\n');
    }
    out
}

pub fn parse_diag_csv(text: &str) -> Result<Vec<DiagRow>, LineError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    match lines.next() {
        Some((_, h)) if h == DIAG_HEADER => {}
        _ => return Err(LineError::new(1, format!("expected header `{DIAG_HEADER}`"))),
    }
    let mut rows = Vec::new();
    for (ln, line) in lines.filter(|(_, l)| !l.is_empty()) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 7 {
            return Err(LineError::new(ln, format!("expected 7 fields, found {}", f.len())));
        }
        rows.push(DiagRow {
            step: textfmt::parse_num(f[0], "step", ln)?,
            class_id: textfmt::parse_num(f[1], "class id", ln)?,
            gcs: textfmt::parse_f64(f[2], "gcs", ln)?,
            mag_pre: textfmt::parse_f64(f[3], "mag_pre", ln)?,
            mag_post: textfmt::parse_f64(f[4], "mag_post", ln)?,
            w: textfmt::parse_f64(f[5], "w", ln)?,
            lambda_star: if f[6].is_empty() {
                None
            } else {
                Some(textfmt::parse_f64(f[6], "lambda_star", ln)?)
            },
        });
    }
    Ok(rows)
}

/// Read access to the task stream during training. The trainer only asks
/// for the training split of the task it is currently on.
pub trait TaskSource {
    fn num_tasks(&self) -> usize;
    fn feature_dim(&self) -> Option<usize>;
    fn train_samples(&self, task: usize) -> &[LabeledSample];
}

impl TaskSource for [TaskDataset] {
    fn num_tasks(&self) -> usize {
        self.len()
    }

    fn feature_dim(&self) -> Option<usize> {
        self.iter().find_map(TaskDataset::dim)
    }

    fn train_samples(&self, task: usize) -> &[LabeledSample] {
        &self[task].train
    }
}

impl TaskSource for Vec<TaskDataset> {
    fn num_tasks(&self) -> usize {
        self.as_slice().num_tasks()
    }

    fn feature_dim(&self) -> Option<usize> {
        self.as_slice().feature_dim()
    }

    fn train_samples(&self, task: usize) -> &[LabeledSample] {
        self.as_slice().train_samples(task)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    /// SHA-256 over the seed and every training sample visited.
    pub fingerprint: String,
    pub config: TrainConfig,
    /// Head after each completed task.
    pub checkpoints: Vec<ClassifierState>,
    pub diagnostics: Vec<DiagRow>,
    pub wall_clock: Vec<Duration>,
}

impl RunRecord {
    pub fn checkpoint(&self, task: usize) -> Result<&ClassifierState, TrainError> {
        self.checkpoints.get(task).ok_or(TrainError::MissingCheckpoint {
            requested: task,
            completed: self.checkpoints.len(),
        })
    }

    /// Equality ignoring wall-clock timings.
    pub fn same_outcome(&self, other: &RunRecord) -> bool {
        self.fingerprint == other.fingerprint
            && self.config == other.config
            && self.checkpoints == other.checkpoints
            && self.diagnostics == other.diagnostics
    }

    /// Writes `checkpoints/task_<t>.head`, `diag.csv` and `run.meta`.
    /// `extra_meta` lines are appended to the config echo.
    pub fn save(&self, dir: &Path, extra_meta: &[(String, String)]) -> Result<(), TrainError> {
        let ck = dir.join(CHECKPOINT_DIR);
        fs::create_dir_all(&ck).map_err(io_err(&ck))?;
        for (t, state) in self.checkpoints.iter().enumerate() {
            let p = ck.join(format!("task_{t}.head"));
            fs::write(&p, state.to_text()).map_err(io_err(&p))?;
        }
        let p = dir.join(DIAG_FILE);
        fs::write(&p, write_diag_csv(&self.diagnostics)).map_err(io_err(&p))?;
        let mut meta = format!(
            "fingerprint={}\ntasks={}\n{}",
            self.fingerprint,
            self.checkpoints.len(),
            self.config.to_meta()
        );
        for (k, v) in extra_meta {
            meta.push_str(&format!("{k}={v}\n"));
        }
        let p = dir.join(META_FILE);
        fs::write(&p, meta).map_err(io_err(&p))?;
        Ok(())
    }

    /// Reads a run directory written by [`RunRecord::save`]. Timings are not
    /// persisted and come back empty.
    pub fn load(dir: &Path) -> Result<(RunRecord, Vec<(String, String)>), TrainError> {
        let p = dir.join(META_FILE);
        let meta = parse_meta(&fs::read_to_string(&p).map_err(io_err(&p))?)?;
        let get = |k: &str| -> Result<&str, TrainError> {
            meta.iter()
                .find(|(key, _)| key == k)
                .map(|(_, v)| v.as_str())
                .ok_or_else(|| LineError::new(0, format!("run.meta missing `{k}`")).into())
        };
        let config = config_from_meta(&meta)?;
        let tasks: usize = textfmt::parse_num(get("tasks")?, "tasks", 0)?;
        let fingerprint = get("fingerprint")?.to_string();
        let mut checkpoints = Vec::new();
        for t in 0..tasks {
            let p = dir.join(CHECKPOINT_DIR).join(format!("task_{t}.head"));
            let text = fs::read_to_string(&p).map_err(io_err(&p))?;
            checkpoints.push(model::parse_checkpoint(&text)?);
        }
        let p = dir.join(DIAG_FILE);
        let diagnostics = parse_diag_csv(&fs::read_to_string(&p).map_err(io_err(&p))?)?;
        Ok((
            RunRecord {
                fingerprint,
                config,
                checkpoints,
                diagnostics,
                wall_clock: Vec::new(),
            },
            meta,
        ))
    }
}

/// Parses `key=value` lines; `#` comments and blank lines are skipped.
pub fn parse_meta(text: &str) -> Result<Vec<(String, String)>, LineError> {
    let mut out: Vec<(String, String)> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| LineError::new(i + 1, format!("expected key=value, found `{line}`")))?;
        let k = k.trim();
        if out.iter().any(|(key, _)| key == k) {
            return Err(LineError::new(i + 1, format!("duplicate key `{k}`")));
        }
        out.push((k.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Rebuilds the training config from `run.meta` entries.
pub fn config_from_meta(meta: &[(String, String)]) -> Result<TrainConfig, LineError> {
    let get = |k: &str| {
        meta.iter()
            .find(|(key, _)| key == k)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| LineError::new(0, format!("run.meta missing `{k}`")))
    };
    let method: Method = get("method")?.parse().map_err(|e: String| LineError::new(0, e))?;
    let flag = |k: &str| -> Result<bool, LineError> { textfmt::parse_num(get(k)?, k, 0) };
    Ok(TrainConfig {
        learning_rate: textfmt::parse_f64(get("lr")?, "lr", 0)?,
        epochs_per_task: textfmt::parse_num(get("epochs")?, "epochs", 0)?,
        batch_size: textfmt::parse_num(get("batch")?, "batch", 0)?,
        seed: textfmt::parse_num(get("seed")?, "seed", 0)?,
        method,
        recal: RecalConfig {
            gamma: textfmt::parse_f64(get("gamma")?, "gamma", 0)?,
            rho: textfmt::parse_f64(get("rho")?, "rho", 0)?,
            w_floor: textfmt::parse_f64(get("w_floor")?, "w_floor", 0)?,
            enable_multi_objective: flag("mobj")?,
            enable_direction: flag("dir")?,
            enable_magnitude: flag("mag")?,
        },
    })
}

/// Applies one recalibrated SGD step to `state` and returns the diagnostics.
pub fn sgd_step<S: std::borrow::Borrow<LabeledSample>>(
    state: &mut ClassifierState,
    batch: &[S],
    recal: &RecalConfig,
    learning_rate: f64,
    step: usize,
) -> Result<Vec<DiagRow>, TrainError> {
    let bundle = model::grads(state, batch)?;
    let out = recalibrate(&bundle, recal)?;
    let mut diags = Vec::with_capacity(out.classes.len());
    for (c, g) in &out.classes {
        let row = state.row_of(*c).expect("gradient rows come from the state");
        for (w, gi) in state.weight_row_mut(row).iter_mut().zip(&g.weight) {
            *w -= learning_rate * gi;
        }
        *state.bias_mut(row) -= learning_rate * g.bias;
        diags.push(DiagRow {
            step,
            class_id: *c,
            gcs: g.gcs.value,
            mag_pre: g.mag_pre,
            mag_post: g.mag_post,
            w: g.w,
            lambda_star: g.lambda_star,
        });
    }
    Ok(diags)
}

/// Trains on every task in order. Deterministic given `(tasks, cfg)`.
pub fn train_stream<S: TaskSource + ?Sized>(tasks: &S, cfg: &TrainConfig) -> Result<RunRecord, TrainError> {
    cfg.validate()?;
    if tasks.num_tasks() == 0 {
        return Err(TrainError::NoTasks);
    }
    let dim = tasks.feature_dim().ok_or(TrainError::NoTasks)?;
    let recal = cfg.effective_recal();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut hasher = Sha256::new();
    hasher.update(cfg.seed.to_le_bytes());

    let mut state = ClassifierState::new(dim);
    let mut checkpoints = Vec::with_capacity(tasks.num_tasks());
    let mut diagnostics = Vec::new();
    let mut wall_clock = Vec::with_capacity(tasks.num_tasks());
    let mut step = 0usize;

    for t in 0..tasks.num_tasks() {
        let started = Instant::now();
        let train = tasks.train_samples(t);
        hasher.update((t as u64).to_le_bytes());
        for s in train {
            if s.features.len() != dim {
                return Err(ModelError::DimensionMismatch {
                    expected: dim,
                    found: s.features.len(),
                }
                .into());
            }
            hasher.update((s.class_id as u64).to_le_bytes());
            hasher.update((s.domain_id as u64).to_le_bytes());
            for v in &s.features {
                hasher.update(v.to_le_bytes());
            }
        }

        let unseen: BTreeSet<usize> = train
            .iter()
            .map(|s| s.class_id)
            .filter(|c| state.row_of(*c).is_none())
            .collect();
        state.expand(&unseen)?;

        if !train.is_empty() {
            let mut order: Vec<&LabeledSample> = train.iter().collect();
            for _ in 0..cfg.epochs_per_task {
                order.shuffle(&mut rng);
                for batch in order.chunks(cfg.batch_size) {
                    diagnostics.extend(sgd_step(&mut state, batch, &recal, cfg.learning_rate, step)?);
                    step += 1;
                }
            }
        }
        checkpoints.push(state.clone());
        wall_clock.push(started.elapsed());
    }

    let fingerprint = hasher.finalize().iter().map(|b| format!("{b:02x}")).collect();
    Ok(RunRecord {
        fingerprint,
        config: cfg.clone(),
        checkpoints,
        diagnostics,
        wall_clock,
    })
}

/// Fraction of `samples` whose prediction matches the label.
pub fn accuracy(state: &ClassifierState, samples: &[LabeledSample]) -> Result<f64, ModelError> {
    let mut hits = 0usize;
    for s in samples {
        if state.predict(&s.features)? == s.class_id {
            hits += 1;
        }
    }
    Ok(hits as f64 / samples.len() as f64)
}

/// Test accuracy on tasks `0..=upto` with the checkpoint taken after task
/// `upto`.
pub fn evaluate_all(record: &RunRecord, tasks: &[TaskDataset], upto: usize) -> Result<Vec<f64>, TrainError> {
    let state = record.checkpoint(upto)?;
    if upto >= tasks.len() {
        return Err(TrainError::MissingCheckpoint {
            requested: upto,
            completed: tasks.len(),
        });
    }
    tasks[..=upto]
        .iter()
        .enumerate()
        .map(|(t, ds)| {
            if ds.test.is_empty() {
                Err(TrainError::EmptyTestSet(t))
            } else {
                Ok(accuracy(state, &ds.test)?)
            }
        })
        .collect()
}
