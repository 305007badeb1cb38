//! Linear classifier head over frozen features.
//!
//! One weight row and bias per seen class; logits `W x + b`, softmax
//! probabilities, the cross-entropy and entropy-minimization losses and their
//! analytic per-row gradients. [`finite_difference`] provides an independent
//! numerical gradient used to check the analytic path.

use std::borrow::Borrow;
use std::collections::{BTreeMap, BTreeSet};

use crate::dataset::LabeledSample;
use crate::textfmt::{self, LineError};

/// Floor applied to probabilities inside `log` for the cross-entropy loss.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum ModelError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("classifier has no classes")]
    NoClasses,
    #[error("label {0} is not a seen class")]
    UnknownLabel(usize),
    #[error("empty batch")]
    EmptyBatch,
    #[error("class {0} already has a row")]
    DuplicateClass(usize),
    #[error("checkpoint parse error at {0}")]
    Parse(#[from] LineError),
}

/// Growing linear head. Rows are stored in the order classes were added.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierState {
    dim: usize,
    classes: Vec<usize>,
    weights: Vec<Vec<f64>>,
    biases: Vec<f64>,
}

impl ClassifierState {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            classes: Vec::new(),
            weights: Vec::new(),
            biases: Vec::new(),
        }
    }

    /// Builds a state from explicit rows, `(class_id, bias, weights)`.
    pub fn from_rows(dim: usize, rows: Vec<(usize, f64, Vec<f64>)>) -> Result<Self, ModelError> {
        let mut s = Self::new(dim);
        for (c, b, w) in rows {
            if s.row_of(c).is_some() {
                return Err(ModelError::DuplicateClass(c));
            }
            if w.len() != dim {
                return Err(ModelError::DimensionMismatch {
                    expected: dim,
                    found: w.len(),
                });
            }
            s.classes.push(c);
            s.weights.push(w);
            s.biases.push(b);
        }
        Ok(s)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Seen classes in row order.
    pub fn classes(&self) -> &[usize] {
        &self.classes
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn row_of(&self, class_id: usize) -> Option<usize> {
        self.classes.iter().position(|&c| c == class_id)
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[f64] {
        &self.biases
    }

    pub fn weight_row_mut(&mut self, row: usize) -> &mut [f64] {
        &mut self.weights[row]
    }

    pub fn bias_mut(&mut self, row: usize) -> &mut f64 {
        &mut self.biases[row]
    }

    fn check_input(&self, x: &[f64]) -> Result<(), ModelError> {
        if self.classes.is_empty() {
            return Err(ModelError::NoClasses);
        }
        if x.len() != self.dim {
            return Err(ModelError::DimensionMismatch {
                expected: self.dim,
                found: x.len(),
            });
        }
        Ok(())
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>, ModelError> {
        self.check_input(x)?;
        Ok(self
            .weights
            .iter()
            .zip(&self.biases)
            .map(|(w, b)| dot(w, x) + b)
            .collect())
    }

    /// Adds zero-initialized rows for `new_classes` in ascending order.
    pub fn expand(&mut self, new_classes: &BTreeSet<usize>) -> Result<(), ModelError> {
        if let Some(&dup) = new_classes.iter().find(|c| self.row_of(**c).is_some()) {
            return Err(ModelError::DuplicateClass(dup));
        }
        for &c in new_classes {
            self.classes.push(c);
            self.weights.push(vec![0.0; self.dim]);
            self.biases.push(0.0);
        }
        Ok(())
    }

    /// Predicted class: argmax of the logits, ties broken towards the lowest
    /// class id.
    pub fn predict(&self, x: &[f64]) -> Result<usize, ModelError> {
        let logits = self.logits(x)?;
        let mut best = (self.classes[0], logits[0]);
        for (&c, &z) in self.classes.iter().zip(&logits).skip(1) {
            if z > best.1 || (z == best.1 && c < best.0) {
                best = (c, z);
            }
        }
        Ok(best.0)
    }

    /// Checkpoint text: a `UILHEAD v1` header followed by one
    /// `class <id>: b v1 ... vd` line per row, 17 significant digits.
    pub fn to_text(&self) -> String {
        let ids: Vec<String> = self.classes.iter().map(usize::to_string).collect();
        let mut out = format!("UILHEAD v1 dim={} classes={}\n", self.dim, ids.join(","));
        for ((c, b), w) in self.classes.iter().zip(&self.biases).zip(&self.weights) {
            out.push_str(&format!("class {c}: {}", textfmt::fmt_f64(*b)));
            for v in w {
                out.push(' ');
                out.push_str(&textfmt::fmt_f64(*v));
            }
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, ModelError> {
        parse_checkpoint(text)
    }
}

pub fn parse_checkpoint(text: &str) -> Result<ClassifierState, ModelError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());
    let (hl, header) = lines
        .next()
        .ok_or_else(|| LineError::new(1, "missing UILHEAD header"))?;
    let mut toks = header.split_whitespace();
    if toks.next() != Some("UILHEAD") || toks.next() != Some("v1") {
        return Err(LineError::new(hl, "expected `UILHEAD v1` header").into());
    }
    let kv = textfmt::key_values(toks, hl)?;
    if let Some(k) = kv.keys().find(|k| !matches!(**k, "dim" | "classes")) {
        return Err(LineError::new(hl, format!("unknown header key `{k}`")).into());
    }
    let dim: usize = textfmt::parse_num(textfmt::required(&kv, "dim", hl)?, "dim", hl)?;
    let ids = textfmt::required(&kv, "classes", hl)?;
    let ids: Vec<usize> = if ids.is_empty() {
        Vec::new()
    } else {
        ids.split(',')
            .map(|s| textfmt::parse_num(s, "class id", hl))
            .collect::<Result<_, _>>()?
    };

    let mut rows = Vec::with_capacity(ids.len());
    for &expected in &ids {
        let (ln, line) = lines
            .next()
            .ok_or_else(|| LineError::new(hl, format!("missing row for class {expected}")))?;
        let (head, body) = line
            .split_once(':')
            .ok_or_else(|| LineError::new(ln, "expected `class <id>: ...`"))?;
        let id = head
            .strip_prefix("class")
            .map(str::trim)
            .ok_or_else(|| LineError::new(ln, "expected `class <id>: ...`"))?;
        let id: usize = textfmt::parse_num(id, "class id", ln)?;
        if id != expected {
            return Err(LineError::new(ln, format!("expected class {expected}, found {id}")).into());
        }
        let vals = body
            .split_whitespace()
            .map(|v| textfmt::parse_f64(v, "parameter", ln))
            .collect::<Result<Vec<_>, _>>()?;
        if vals.len().checked_sub(1) != Some(dim) {
            return Err(LineError::new(
                ln,
                format!("expected {dim} weights plus a bias, found {} values", vals.len()),
            )
            .into());
        }
        rows.push((id, vals[0], vals[1..].to_vec()));
    }
    if let Some((ln, _)) = lines.next() {
        return Err(LineError::new(ln, "trailing content after last class row").into());
    }
    ClassifierState::from_rows(dim, rows).map_err(|e| match e {
        ModelError::DuplicateClass(c) => LineError::new(hl, format!("duplicate class {c}")).into(),
        other => other,
    })
}

/// Logits and softmax probabilities over the seen classes, in row order.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionDistribution {
    pub classes: Vec<usize>,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

impl PredictionDistribution {
    /// Wraps an explicit probability vector (classes numbered `0..n`).
    pub fn from_probs(probs: Vec<f64>) -> Self {
        let logits = probs.iter().map(|p| p.max(PROB_FLOOR).ln()).collect();
        Self {
            classes: (0..probs.len()).collect(),
            logits,
            probs,
        }
    }

    pub fn prob_of(&self, class_id: usize) -> Option<f64> {
        self.classes.iter().position(|&c| c == class_id).map(|i| self.probs[i])
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Softmax with max subtraction.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn forward(state: &ClassifierState, x: &[f64]) -> Result<PredictionDistribution, ModelError> {
    let logits = state.logits(x)?;
    let probs = softmax(&logits);
    Ok(PredictionDistribution {
        classes: state.classes.clone(),
        logits,
        probs,
    })
}

fn raw_entropy(probs: &[f64]) -> f64 {
    -probs.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>()
}

/// Prediction distribution entropy `-Σ p log p` (with `0 log 0 = 0`),
/// clamped to its analytic range `[0, log C]`.
pub fn pde(p: &PredictionDistribution) -> f64 {
    entropy_of(&p.probs)
}

pub fn entropy_of(probs: &[f64]) -> f64 {
    let upper = (probs.len().max(1) as f64).ln();
    raw_entropy(probs).clamp(0.0, upper)
}

pub fn loss_ce(p: &PredictionDistribution, label: usize) -> Result<f64, ModelError> {
    let pl = p.prob_of(label).ok_or(ModelError::UnknownLabel(label))?;
    Ok(-pl.max(PROB_FLOOR).ln())
}

pub fn loss_em(p: &PredictionDistribution) -> f64 {
    pde(p)
}

/// Mean cross-entropy and mean entropy over a batch.
pub fn batch_losses<S: Borrow<LabeledSample>>(state: &ClassifierState, batch: &[S]) -> Result<(f64, f64), ModelError> {
    if batch.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    let (mut ce, mut em) = (0.0, 0.0);
    for s in batch.iter().map(Borrow::borrow) {
        let p = forward(state, &s.features)?;
        ce += loss_ce(&p, s.class_id)?;
        em += loss_em(&p);
    }
    let n = batch.len() as f64;
    Ok((ce / n, em / n))
}

/// Gradient of one loss with respect to one class row.
#[derive(Debug, Clone, PartialEq)]
pub struct RowGrad {
    pub weight: Vec<f64>,
    pub bias: f64,
}

impl RowGrad {
    pub fn zeros(dim: usize) -> Self {
        Self {
            weight: vec![0.0; dim],
            bias: 0.0,
        }
    }
}

/// Per-class gradients of the cross-entropy and entropy losses, kept apart.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    pub ce: BTreeMap<usize, RowGrad>,
    pub em: BTreeMap<usize, RowGrad>,
}

impl GradientBundle {
    pub fn classes(&self) -> impl Iterator<Item = usize> + '_ {
        self.ce.keys().copied()
    }
}

/// Analytic mean-over-batch gradients.
///
/// For row `c` and sample `(x, y)`: the cross-entropy part is
/// `(p_c - 1[c = y]) x`, the entropy part is `-p_c (log p_c + H) x`.
/// Bias parts drop the `x` factor. Samples are reduced in batch order.
pub fn grads<S: Borrow<LabeledSample>>(state: &ClassifierState, batch: &[S]) -> Result<GradientBundle, ModelError> {
    if batch.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    let k = state.num_classes();
    let d = state.dim;
    let mut ce = vec![RowGrad::zeros(d); k];
    let mut em = vec![RowGrad::zeros(d); k];
    for s in batch.iter().map(Borrow::borrow) {
        let logits = state.logits(&s.features)?;
        let label_row = state.row_of(s.class_id).ok_or(ModelError::UnknownLabel(s.class_id))?;
        let p = softmax(&logits);
        let h = raw_entropy(&p);
        for (r, &pc) in p.iter().enumerate() {
            let dce = pc - if r == label_row { 1.0 } else { 0.0 };
            let dem = if pc > 0.0 { -pc * (pc.ln() + h) } else { 0.0 };
            axpy(&mut ce[r].weight, dce, &s.features);
            ce[r].bias += dce;
            axpy(&mut em[r].weight, dem, &s.features);
            em[r].bias += dem;
        }
    }
    let inv = 1.0 / batch.len() as f64;
    let finish = |rows: Vec<RowGrad>| -> BTreeMap<usize, RowGrad> {
        state
            .classes
            .iter()
            .zip(rows)
            .map(|(&c, mut g)| {
                g.weight.iter_mut().for_each(|v| *v *= inv);
                g.bias *= inv;
                (c, g)
            })
            .collect()
    };
    Ok(GradientBundle {
        ce: finish(ce),
        em: finish(em),
    })
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Returns a copy of `state` with new zero rows for `new_classes`; existing
/// rows are untouched.
pub fn expand_head(state: &ClassifierState, new_classes: &BTreeSet<usize>) -> Result<ClassifierState, ModelError> {
    let mut next = state.clone();
    next.expand(new_classes)?;
    Ok(next)
}

/// Central finite differences of the mean batch losses.
pub mod finite_difference {
    use super::*;

    /// Numerical gradients of the mean cross-entropy and mean entropy with
    /// respect to every weight and bias, using step `h`.
    pub fn grads<S: Borrow<LabeledSample>>(
        state: &ClassifierState,
        batch: &[S],
        h: f64,
    ) -> Result<GradientBundle, ModelError> {
        batch_losses(state, batch)?;
        let mut ce = BTreeMap::new();
        let mut em = BTreeMap::new();
        let mut probe = state.clone();
        for (r, &c) in state.classes.iter().enumerate() {
            let mut gce = RowGrad::zeros(state.dim);
            let mut gem = RowGrad::zeros(state.dim);
            for j in 0..=state.dim {
                let orig = param(&probe, r, j);
                set_param(&mut probe, r, j, orig + h);
                let (cp, ep) = batch_losses(&probe, batch)?;
                set_param(&mut probe, r, j, orig - h);
                let (cm, emm) = batch_losses(&probe, batch)?;
                set_param(&mut probe, r, j, orig);
                let dce = (cp - cm) / (2.0 * h);
                let dem = (ep - emm) / (2.0 * h);
                if j == state.dim {
                    gce.bias = dce;
                    gem.bias = dem;
                } else {
                    gce.weight[j] = dce;
                    gem.weight[j] = dem;
                }
            }
            ce.insert(c, gce);
            em.insert(c, gem);
        }
        Ok(GradientBundle { ce, em })
    }

    fn param(s: &ClassifierState, row: usize, j: usize) -> f64 {
        if j == s.dim {
            s.biases[row]
        } else {
            s.weights[row][j]
        }
    }

    fn set_param(s: &mut ClassifierState, row: usize, j: usize, v: f64) {
        if j == s.dim {
            s.biases[row] = v;
        } else {
            s.weights[row][j] = v;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample(x: Vec<f64>, y: usize) -> LabeledSample {
        LabeledSample {
            features: x,
            class_id: y,
            domain_id: 0,
            task_index: 0,
        }
    }

    fn zero_state(dim: usize, classes: usize) -> ClassifierState {
        let mut s = ClassifierState::new(dim);
        s.expand(&(0..classes).collect()).unwrap();
        s
    }

    #[test]
    fn zero_weights_give_uniform() {
        let p = forward(&zero_state(2, 3), &[1.0, -2.0]).unwrap();
        for q in &p.probs {
            assert!((q - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_is_overflow_safe() {
        let p = softmax(&[1000.0, 0.0]);
        assert!((p[0] - 1.0).abs() < 1e-15 && p[1] >= 0.0 && p[1] < 1e-300);
        let s = zero_state(3, 1);
        assert_eq!(forward(&s, &[1.0, 2.0, 3.0]).unwrap().probs, vec![1.0]);
    }

    #[test]
    fn forward_errors() {
        assert_eq!(
            forward(&zero_state(2, 2), &[1.0]).unwrap_err(),
            ModelError::DimensionMismatch { expected: 2, found: 1 }
        );
        assert_eq!(
            forward(&ClassifierState::new(2), &[1.0, 0.0]).unwrap_err(),
            ModelError::NoClasses
        );
    }

    #[test]
    fn entropy_values() {
        let u4 = PredictionDistribution::from_probs(vec![0.25; 4]);
        assert!((pde(&u4) - 1.386294361119891).abs() < 1e-12);
        assert_eq!(pde(&PredictionDistribution::from_probs(vec![0.0, 1.0, 0.0])), 0.0);
        // 0.5 log 2 + 2 * 0.25 log 4 = 1.5 log 2
        let mixed = PredictionDistribution::from_probs(vec![0.5, 0.25, 0.25]);
        assert!((pde(&mixed) - 1.5 * 2f64.ln()).abs() < 1e-12);
        assert!((1.5 * 2f64.ln() - 1.039721).abs() < 1e-6);
        assert_eq!(loss_em(&mixed), pde(&mixed));
    }

    #[test]
    fn cross_entropy_values() {
        let one_hot = PredictionDistribution::from_probs(vec![0.0, 1.0]);
        assert_eq!(loss_ce(&one_hot, 1).unwrap(), 0.0);
        assert!((loss_ce(&one_hot, 0).unwrap() + PROB_FLOOR.ln()).abs() < 1e-12);
        let u4 = PredictionDistribution::from_probs(vec![0.25; 4]);
        assert!((loss_ce(&u4, 2).unwrap() - 4f64.ln()).abs() < 1e-12);
        assert_eq!(loss_ce(&u4, 7).unwrap_err(), ModelError::UnknownLabel(7));
    }

    #[test]
    fn grads_at_zero_state() {
        let s = zero_state(2, 2);
        let g = grads(&s, &[sample(vec![2.0, -1.0], 0)]).unwrap();
        assert_eq!(g.ce[&0].weight, vec![-1.0, 0.5]);
        assert_eq!(g.ce[&0].bias, -0.5);
        assert_eq!(g.ce[&1].weight, vec![1.0, -0.5]);
        for c in [0, 1] {
            assert!(g.em[&c].weight.iter().all(|v| v.abs() < 1e-12));
            assert!(g.em[&c].bias.abs() < 1e-12);
        }
    }

    #[test]
    fn saturated_prediction_has_vanishing_grads() {
        let s = ClassifierState::from_rows(1, vec![(0, 0.0, vec![60.0]), (1, 0.0, vec![-60.0])]).unwrap();
        let g = grads(&s, &[sample(vec![1.0], 0)]).unwrap();
        for part in [&g.ce, &g.em] {
            for row in part.values() {
                assert!(row.weight[0].abs() < 1e-40 && row.bias.abs() < 1e-40);
            }
        }
    }

    #[test]
    fn grads_errors() {
        let s = zero_state(2, 2);
        assert_eq!(grads::<LabeledSample>(&s, &[]).unwrap_err(), ModelError::EmptyBatch);
        assert_eq!(
            grads(&s, &[sample(vec![1.0, 1.0], 5)]).unwrap_err(),
            ModelError::UnknownLabel(5)
        );
    }

    #[test]
    fn expansion() {
        let s = expand_head(&ClassifierState::new(3), &BTreeSet::from([0, 1])).unwrap();
        assert_eq!(s.num_classes(), 2);
        let mut trained = s.clone();
        trained.weight_row_mut(0)[1] = 0.7;
        *trained.bias_mut(1) = -0.2;
        let grown = expand_head(&trained, &BTreeSet::from([2])).unwrap();
        assert_eq!(grown.weights()[..2], trained.weights()[..]);
        assert_eq!(grown.biases()[..2], trained.biases()[..]);
        assert_eq!(grown.weights()[2], vec![0.0; 3]);
        assert_eq!(
            expand_head(&grown, &BTreeSet::from([1, 9])).unwrap_err(),
            ModelError::DuplicateClass(1)
        );
    }

    #[test]
    fn predict_tie_breaks_low() {
        let s =
            ClassifierState::from_rows(1, vec![(5, 0.0, vec![0.0]), (2, 0.0, vec![0.0]), (9, 0.0, vec![0.0])]).unwrap();
        assert_eq!(s.predict(&[1.0]).unwrap(), 2);
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let s = ClassifierState::from_rows(
            2,
            vec![
                (3, 0.1, vec![1.0 / 3.0, -2.5e-17]),
                (0, -7.0, vec![f64::MAX, f64::MIN_POSITIVE]),
            ],
        )
        .unwrap();
        let text = s.to_text();
        assert!(text.starts_with("UILHEAD v1 dim=2 classes=3,0\nclass 3: 1.0000000000000001e-1"));
        assert_eq!(parse_checkpoint(&text).unwrap(), s);
        let empty = ClassifierState::new(4);
        assert_eq!(parse_checkpoint(&empty.to_text()).unwrap(), empty);
    }

    #[test]
    fn checkpoint_errors() {
        assert!(matches!(parse_checkpoint(""), Err(ModelError::Parse(_))));
        let bad = "UILHEAD v1 dim=1 classes=0,1\nclass 0: 0 1\nclass 2: 0 1\n";
        assert!(matches!(parse_checkpoint(bad), Err(ModelError::Parse(e)) if e.line == 3));
        let short = "UILHEAD v1 dim=2 classes=0\nclass 0: 0 1\n";
        assert!(matches!(parse_checkpoint(short), Err(ModelError::Parse(e)) if e.line == 2));
        let dup = "UILHEAD v1 dim=1 classes=0,0\nclass 0: 0 1\nclass 0: 0 1\n";
        assert!(matches!(parse_checkpoint(dup), Err(ModelError::Parse(_))));
    }

    proptest! {
        #[test]
        fn entropy_within_bounds(raw in prop::collection::vec(0.0f64..10.0, 1..12)) {
            let total: f64 = raw.iter().sum();
            prop_assume!(total > 1e-9);
            let p: Vec<f64> = raw.iter().map(|v| v / total).collect();
            let h = entropy_of(&p);
            prop_assert!(h >= 0.0 && h <= (p.len() as f64).ln());
        }

        #[test]
        fn softmax_shift_invariance(z in prop::collection::vec(-30.0f64..30.0, 1..8), shift in -100.0f64..100.0) {
            let a = softmax(&z);
            let b = softmax(&z.iter().map(|v| v + shift).collect::<Vec<_>>());
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-12);
            }
            prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn em_gradient_vanishes_at_uniform(x in prop::collection::vec(-5.0f64..5.0, 3), k in 1usize..6, y in 0usize..6) {
            let s = zero_state(3, k);
            let g = grads(&s, &[sample(x, y % k)]).unwrap();
            for row in g.em.values() {
                prop_assert!(row.weight.iter().all(|v| v.abs() <= 1e-12));
                prop_assert!(row.bias.abs() <= 1e-12);
            }
        }

        #[test]
        fn expansion_preserves_old_logits(
            w in prop::collection::vec(-3.0f64..3.0, 4),
            x in prop::collection::vec(-3.0f64..3.0, 2),
        ) {
            let s = ClassifierState::from_rows(2, vec![(0, w[0], vec![w[1], w[2]]), (1, w[3], vec![w[0], w[3]])]).unwrap();
            let grown = expand_head(&s, &BTreeSet::from([4, 7])).unwrap();
            let old = s.logits(&x).unwrap();
            let new = grown.logits(&x).unwrap();
            prop_assert_eq!(&new[..2], &old[..]);
        }
    }
}
