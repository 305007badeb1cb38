//! Task streams over a class × domain grid.
//!
//! A [`ScenarioSpec`] partitions every `(class, domain)` cell of a grid into
//! an ordered list of disjoint, non-empty tasks. Four regimes are supported:
//!
//! * `UIL`: both the number of classes and the number of domains per task are
//!   random. Cells are shuffled and cut into `T` consecutive runs whose
//!   lengths follow a uniformly drawn composition of the cell count.
//! * `VIL`: every task holds `K` classes from exactly one domain.
//! * `CIL`: contiguous class blocks spanning every domain.
//! * `DIL`: one domain per task, spanning every class.
//!
//! Scenarios serialize to a line-oriented text format:
//!
//! ```text
//! UILSCEN v1 classes=6 domains=4 tasks=12 regime=vil seed=7 vil_classes=2
//! task 0: (0,2) (3,2)
//! ...
//! ```

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::textfmt::{self, LineError};

/// Retry budget when the sampled UIL partition happens to be uniform in
/// task shape or violates `min_domains_per_task`.
const MAX_RESAMPLES: usize = 1000;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum ScenarioError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("infeasible partition: {0}")]
    InfeasiblePartition(String),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("scenario parse error at {0}")]
    Parse(#[from] LineError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GridSpec {
    pub num_classes: usize,
    pub num_domains: usize,
}

/// Largest accepted grid, in cells.
pub const MAX_CELLS: usize = 1 << 24;

impl GridSpec {
    pub fn new(num_classes: usize, num_domains: usize) -> Result<Self, ScenarioError> {
        let cells = num_classes.saturating_mul(num_domains);
        if num_classes == 0 || num_domains == 0 || cells > MAX_CELLS {
            return Err(ScenarioError::InvalidGrid(format!(
                "{num_classes} classes x {num_domains} domains (need 1..={MAX_CELLS} cells)"
            )));
        }
        Ok(Self {
            num_classes,
            num_domains,
        })
    }

    pub fn num_cells(&self) -> usize {
        self.num_classes.saturating_mul(self.num_domains)
    }

    pub fn contains(&self, cell: Cell) -> bool {
        cell.class_id < self.num_classes && cell.domain_id < self.num_domains
    }

    /// All cells in ascending `(class, domain)` order.
    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (0..self.num_classes).flat_map(move |c| (0..self.num_domains).map(move |d| Cell::new(c, d)))
    }
}

/// A `(class, domain)` pair. Orders by class first, then domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Cell {
    pub class_id: usize,
    pub domain_id: usize,
}

impl Cell {
    pub const fn new(class_id: usize, domain_id: usize) -> Self {
        Self { class_id, domain_id }
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.class_id, self.domain_id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RegimeKind {
    Uil,
    Vil,
    Cil,
    Dil,
}

impl RegimeKind {
    pub fn name(self) -> &'static str {
        match self {
            RegimeKind::Uil => "uil",
            RegimeKind::Vil => "vil",
            RegimeKind::Cil => "cil",
            RegimeKind::Dil => "dil",
        }
    }
}

impl FromStr for RegimeKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "uil" => Ok(RegimeKind::Uil),
            "vil" => Ok(RegimeKind::Vil),
            "cil" => Ok(RegimeKind::Cil),
            "dil" => Ok(RegimeKind::Dil),
            other => Err(format!("unknown regime `{other}`")),
        }
    }
}

impl fmt::Display for RegimeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Regime {
    pub kind: RegimeKind,
    /// Classes per task for VIL. Ignored by the other regimes.
    pub vil_classes_per_task: usize,
    /// UIL only: every task must span at least this many domains.
    pub min_domains_per_task: Option<usize>,
}

impl Regime {
    pub fn uil() -> Self {
        Self {
            kind: RegimeKind::Uil,
            vil_classes_per_task: 0,
            min_domains_per_task: None,
        }
    }

    pub fn vil(classes_per_task: usize) -> Self {
        Self {
            kind: RegimeKind::Vil,
            vil_classes_per_task: classes_per_task,
            min_domains_per_task: None,
        }
    }

    pub fn cil() -> Self {
        Self {
            kind: RegimeKind::Cil,
            ..Self::uil()
        }
    }

    pub fn dil() -> Self {
        Self {
            kind: RegimeKind::Dil,
            ..Self::uil()
        }
    }

    pub fn with_min_domains(mut self, d: usize) -> Self {
        self.min_domains_per_task = Some(d);
        self
    }
}

/// An ordered stream of disjoint tasks covering a grid.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ScenarioSpec {
    grid: GridSpec,
    regime: Regime,
    seed: u64,
    tasks: Vec<Vec<Cell>>,
}

impl ScenarioSpec {
    /// Builds a spec from explicit task cell lists, checking every invariant.
    /// Cells inside each task are sorted; task order is kept.
    pub fn from_tasks(
        grid: GridSpec,
        regime: Regime,
        seed: u64,
        mut tasks: Vec<Vec<Cell>>,
    ) -> Result<Self, ScenarioError> {
        GridSpec::new(grid.num_classes, grid.num_domains)?;
        for t in &mut tasks {
            t.sort_unstable();
        }
        let spec = Self {
            grid,
            regime,
            seed,
            tasks,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    pub fn regime(&self) -> Regime {
        self.regime
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn num_tasks(&self) -> usize {
        self.tasks.len()
    }

    pub fn tasks(&self) -> &[Vec<Cell>] {
        &self.tasks
    }

    pub fn task(&self, t: usize) -> &[Cell] {
        &self.tasks[t]
    }

    /// Index of the task owning `cell`, if any.
    pub fn task_of(&self, cell: Cell) -> Option<usize> {
        self.tasks.iter().position(|cells| cells.binary_search(&cell).is_ok())
    }

    /// Distinct classes of task `t`, ascending.
    pub fn task_classes(&self, t: usize) -> BTreeSet<usize> {
        self.tasks[t].iter().map(|c| c.class_id).collect()
    }

    /// Distinct domains of task `t`, ascending.
    pub fn task_domains(&self, t: usize) -> BTreeSet<usize> {
        self.tasks[t].iter().map(|c| c.domain_id).collect()
    }

    /// `(|C_t|, |M_t|)` for every task.
    pub fn task_shapes(&self) -> Vec<(usize, usize)> {
        (0..self.tasks.len())
            .map(|t| (self.task_classes(t).len(), self.task_domains(t).len()))
            .collect()
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let grid = self.grid;
        if self.tasks.is_empty() {
            return Err(ScenarioError::Invalid("no tasks".into()));
        }
        let mut seen = BTreeSet::new();
        for (t, cells) in self.tasks.iter().enumerate() {
            if cells.is_empty() {
                return Err(ScenarioError::Invalid(format!("empty task {t}")));
            }
            for &cell in cells {
                if !grid.contains(cell) {
                    return Err(ScenarioError::Invalid(format!(
                        "cell {cell} of task {t} outside the grid"
                    )));
                }
                if !seen.insert(cell) {
                    return Err(ScenarioError::Invalid(format!(
                        "cells not disjoint: {cell} appears twice"
                    )));
                }
            }
        }
        if seen.len() != grid.num_cells() {
            return Err(ScenarioError::Invalid(format!(
                "tasks cover {} of {} cells",
                seen.len(),
                grid.num_cells()
            )));
        }
        if self.regime.kind == RegimeKind::Vil {
            let k = self.regime.vil_classes_per_task;
            if k == 0 {
                return Err(ScenarioError::Invalid("vil_classes must be >= 1".into()));
            }
            let rem = match grid.num_classes % k {
                0 => k,
                r => r,
            };
            for t in 0..self.tasks.len() {
                let classes = self.task_classes(t).len();
                if self.task_domains(t).len() != 1 || (classes != k && classes != rem) {
                    return Err(ScenarioError::Invalid(format!(
                        "task {t} is not a single-domain block of {k} classes"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Text serialization; see the module docs for the format.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "UILSCEN v1 classes={} domains={} tasks={} regime={} seed={}",
            self.grid.num_classes,
            self.grid.num_domains,
            self.tasks.len(),
            self.regime.kind,
            self.seed
        );
        if self.regime.kind == RegimeKind::Vil {
            out.push_str(&format!(" vil_classes={}", self.regime.vil_classes_per_task));
        }
        if let Some(d) = self.regime.min_domains_per_task {
            out.push_str(&format!(" min_domains={d}"));
        }
        out.push('\n');
        for (t, cells) in self.tasks.iter().enumerate() {
            out.push_str(&format!("task {t}:"));
            for c in cells {
                out.push_str(&format!(" {c}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        parse_scenario(text)
    }
}

/// Serializes a scenario to its text form.
pub fn serialize_scenario(spec: &ScenarioSpec) -> Vec<u8> {
    spec.to_text().into_bytes()
}

/// Parses the text form. Syntax errors carry a 1-based line number;
/// structurally invalid scenarios yield [`ScenarioError::Invalid`].
pub fn parse_scenario(text: &str) -> Result<ScenarioSpec, ScenarioError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

    let (hline, header) = lines
        .next()
        .ok_or_else(|| LineError::new(1, "missing UILSCEN header"))?;
    let mut toks = header.split_whitespace();
    if toks.next() != Some("UILSCEN") || toks.next() != Some("v1") {
        return Err(LineError::new(hline, "expected `UILSCEN v1` header").into());
    }
    let kv = textfmt::key_values(toks, hline)?;
    for k in kv.keys() {
        if !matches!(
            *k,
            "classes" | "domains" | "tasks" | "regime" | "seed" | "vil_classes" | "min_domains"
        ) {
            return Err(LineError::new(hline, format!("unknown header key `{k}`")).into());
        }
    }
    let classes: usize = textfmt::parse_num(textfmt::required(&kv, "classes", hline)?, "classes", hline)?;
    let domains: usize = textfmt::parse_num(textfmt::required(&kv, "domains", hline)?, "domains", hline)?;
    let num_tasks: usize = textfmt::parse_num(textfmt::required(&kv, "tasks", hline)?, "tasks", hline)?;
    let kind: RegimeKind = textfmt::required(&kv, "regime", hline)?
        .parse()
        .map_err(|e: String| LineError::new(hline, e))?;
    let seed: u64 = textfmt::parse_num(textfmt::required(&kv, "seed", hline)?, "seed", hline)?;
    let vil_classes = match kv.get("vil_classes") {
        Some(v) => textfmt::parse_num(v, "vil_classes", hline)?,
        None if kind == RegimeKind::Vil => return Err(LineError::new(hline, "vil regime requires vil_classes").into()),
        None => 0,
    };
    let min_domains = kv
        .get("min_domains")
        .map(|v| textfmt::parse_num(v, "min_domains", hline))
        .transpose()?;
    let grid = GridSpec::new(classes, domains)?;

    let mut tasks: Vec<Vec<Cell>> = Vec::new();
    for (ln, line) in lines {
        let (head, body) = line
            .split_once(':')
            .ok_or_else(|| LineError::new(ln, "expected `task <t>: ...`"))?;
        let idx = head
            .strip_prefix("task")
            .map(str::trim)
            .ok_or_else(|| LineError::new(ln, "expected `task <t>: ...`"))?;
        let idx: usize = textfmt::parse_num(idx, "task index", ln)?;
        if idx != tasks.len() {
            return Err(LineError::new(ln, format!("expected task {}, found {idx}", tasks.len())).into());
        }
        let mut cells = Vec::new();
        for tok in body.split_whitespace() {
            cells.push(parse_cell(tok, ln)?);
        }
        if cells.windows(2).any(|w| w[0] >= w[1]) {
            return Err(LineError::new(ln, "cells must be strictly ascending by (class,domain)").into());
        }
        tasks.push(cells);
    }
    if tasks.len() != num_tasks {
        return Err(ScenarioError::Invalid(format!(
            "header declares {num_tasks} tasks, found {}",
            tasks.len()
        )));
    }
    let regime = Regime {
        kind,
        vil_classes_per_task: vil_classes,
        min_domains_per_task: min_domains,
    };
    ScenarioSpec::from_tasks(grid, regime, seed, tasks)
}

fn parse_cell(tok: &str, line: usize) -> Result<Cell, LineError> {
    let inner = tok
        .strip_prefix('(')
        .and_then(|s| s.strip_suffix(')'))
        .ok_or_else(|| LineError::new(line, format!("malformed cell `{tok}`")))?;
    let (c, d) = inner
        .split_once(',')
        .ok_or_else(|| LineError::new(line, format!("malformed cell `{tok}`")))?;
    Ok(Cell::new(
        textfmt::parse_num(c, "class id", line)?,
        textfmt::parse_num(d, "domain id", line)?,
    ))
}

/// True when every task spans exactly one domain and all tasks share the
/// same class count, i.e. the stream is a VIL stream. VIL-regime specs
/// (including a shorter remainder block) always qualify.
pub fn degenerate_to_vil(spec: &ScenarioSpec) -> bool {
    if spec.regime.kind == RegimeKind::Vil {
        return true;
    }
    let shapes = spec.task_shapes();
    shapes.iter().all(|&(_, m)| m == 1) && shapes.windows(2).all(|w| w[0].0 == w[1].0)
}

/// Generates a seeded task stream. Identical arguments give identical specs.
pub fn generate_scenario(
    grid: GridSpec,
    regime: Regime,
    num_tasks: usize,
    seed: u64,
) -> Result<ScenarioSpec, ScenarioError> {
    let grid = GridSpec::new(grid.num_classes, grid.num_domains)?;
    let cells = grid.num_cells();
    if num_tasks == 0 {
        return Err(ScenarioError::InfeasiblePartition("zero tasks".into()));
    }
    if num_tasks > cells {
        return Err(ScenarioError::InfeasiblePartition(format!(
            "{num_tasks} tasks exceed {cells} cells"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tasks = match regime.kind {
        RegimeKind::Uil => uil_tasks(grid, regime, num_tasks, &mut rng)?,
        RegimeKind::Vil => vil_tasks(grid, regime.vil_classes_per_task, num_tasks, &mut rng)?,
        RegimeKind::Cil => {
            if num_tasks > grid.num_classes {
                return Err(ScenarioError::InfeasiblePartition(format!(
                    "cil needs at most one task per class ({}), got {num_tasks}",
                    grid.num_classes
                )));
            }
            cil_tasks(grid, num_tasks)
        }
        RegimeKind::Dil => {
            if num_tasks != grid.num_domains {
                return Err(ScenarioError::InfeasiblePartition(format!(
                    "dil needs one task per domain ({}), got {num_tasks}",
                    grid.num_domains
                )));
            }
            (0..grid.num_domains)
                .map(|d| (0..grid.num_classes).map(|c| Cell::new(c, d)).collect())
                .collect()
        }
    };
    ScenarioSpec::from_tasks(grid, regime, seed, tasks)
}

fn uil_tasks(
    grid: GridSpec,
    regime: Regime,
    num_tasks: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vec<Cell>>, ScenarioError> {
    let n = grid.num_cells();
    if let Some(d) = regime.min_domains_per_task {
        if d > grid.num_domains || d * num_tasks > n {
            return Err(ScenarioError::InfeasiblePartition(format!(
                "cannot give {num_tasks} tasks at least {d} domains each"
            )));
        }
    }
    let all: Vec<Cell> = grid.cells().collect();
    let mut fallback = None;
    for _ in 0..MAX_RESAMPLES {
        let mut cells = all.clone();
        cells.shuffle(rng);
        // Random composition of n into num_tasks positive parts: choose
        // num_tasks - 1 distinct cut points in 1..n.
        let mut cuts: Vec<usize> = rand::seq::index::sample(rng, n - 1, num_tasks - 1)
            .into_iter()
            .map(|i| i + 1)
            .collect();
        cuts.sort_unstable();
        let mut tasks = Vec::with_capacity(num_tasks);
        let mut start = 0;
        for end in cuts.into_iter().chain(std::iter::once(n)) {
            tasks.push(cells[start..end].to_vec());
            start = end;
        }

        let domains_ok = regime.min_domains_per_task.is_none_or(|d| {
            tasks
                .iter()
                .all(|t| t.iter().map(|c| c.domain_id).collect::<BTreeSet<_>>().len() >= d)
        });
        if !domains_ok {
            continue;
        }
        let shape = |t: &Vec<Cell>| {
            (
                t.iter().map(|c| c.class_id).collect::<BTreeSet<_>>().len(),
                t.iter().map(|c| c.domain_id).collect::<BTreeSet<_>>().len(),
            )
        };
        let varied = num_tasks < 2 || tasks.windows(2).any(|w| shape(&w[0]) != shape(&w[1]));
        if varied {
            return Ok(tasks);
        }
        fallback.get_or_insert(tasks);
    }
    // Every draw was shape-uniform: the grid does not permit variation
    // (e.g. one cell per task).
    fallback.ok_or_else(|| {
        ScenarioError::InfeasiblePartition(format!(
            "no partition with >= {} domains per task found in {MAX_RESAMPLES} draws",
            regime.min_domains_per_task.unwrap_or(0)
        ))
    })
}

fn vil_tasks(
    grid: GridSpec,
    k: usize,
    num_tasks: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vec<Cell>>, ScenarioError> {
    if k == 0 || k > grid.num_classes {
        return Err(ScenarioError::InfeasiblePartition(format!(
            "vil needs 1 <= classes per task <= {}, got {k}",
            grid.num_classes
        )));
    }
    let per_domain = grid.num_classes.div_ceil(k);
    if num_tasks != per_domain * grid.num_domains {
        return Err(ScenarioError::InfeasiblePartition(format!(
            "vil with {k} classes per task over {}x{} needs {} tasks, got {num_tasks}",
            grid.num_classes,
            grid.num_domains,
            per_domain * grid.num_domains
        )));
    }
    let mut tasks = Vec::with_capacity(num_tasks);
    for d in 0..grid.num_domains {
        let mut classes: Vec<usize> = (0..grid.num_classes).collect();
        classes.shuffle(rng);
        for block in classes.chunks(k) {
            tasks.push(block.iter().map(|&c| Cell::new(c, d)).collect());
        }
    }
    tasks.shuffle(rng);
    Ok(tasks)
}

fn cil_tasks(grid: GridSpec, num_tasks: usize) -> Vec<Vec<Cell>> {
    let c = grid.num_classes;
    let base = c / num_tasks;
    let extra = c % num_tasks;
    let mut tasks = Vec::with_capacity(num_tasks);
    let mut start = 0;
    for t in 0..num_tasks {
        let len = base + usize::from(t < extra);
        tasks.push(
            (start..start + len)
                .flat_map(|cls| (0..grid.num_domains).map(move |d| Cell::new(cls, d)))
                .collect(),
        );
        start += len;
    }
    tasks
}
