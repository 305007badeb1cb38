//! Per-class gradient recalibration for the two-objective loss
//! `L = L_ce + γ L_em`.
//!
//! For every class row the cross-entropy and entropy gradients arrive
//! separately. Two decoupled modules then act on them:
//!
//! * **direction**: the combined unit direction `û_ce + γ û_em` receives a
//!   conflict-averse offset `β ĝ_w` (with `β = ρ ‖û_ce + γ û_em‖`). The offset
//!   direction is the normalized convex combination of the two unit
//!   gradients found by the dual of the worst-case alignment problem
//!   `max_d min_i ⟨û_i, d⟩` over the ball `‖d − g‖ ≤ β`.
//! * **magnitude**: the norm of `g_ce + γ g_em` is rescaled by
//!   `w_c = 1 − (m_c − min m)/(max m − min m)`, so that rows with the largest
//!   gradients stop dominating the update.

use std::collections::BTreeMap;

use crate::model::{GradientBundle, RowGrad};

/// Golden-section stopping width on the `λ` interval.
const DUAL_TOL: f64 = 1e-12;
const NORM_EPS: f64 = 1e-300;
/// A gradient this many times smaller than its partner is rounding residue
/// (the entropy gradient of an exactly uniform prediction, for one) and is
/// treated as zero rather than normalized into a random direction.
const REL_ZERO: f64 = 1e-12;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum RecalError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("gradient bundle parts cover different classes")]
    MismatchedClasses,
    #[error("invalid recalibration config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecalConfig {
    /// Weight of the entropy objective.
    pub gamma: f64,
    /// Offset scale: `β = ρ ‖û_ce + γ û_em‖`.
    pub rho: f64,
    /// Lower clamp for the magnitude factors.
    pub w_floor: f64,
    pub enable_direction: bool,
    pub enable_magnitude: bool,
    /// When off the entropy objective is dropped (`γ` acts as 0).
    pub enable_multi_objective: bool,
}

impl Default for RecalConfig {
    fn default() -> Self {
        Self {
            gamma: 0.01,
            rho: 0.5,
            w_floor: 0.0,
            enable_direction: true,
            enable_magnitude: true,
            enable_multi_objective: true,
        }
    }
}

impl RecalConfig {
    /// Plain cross-entropy: every module off.
    pub fn baseline() -> Self {
        Self {
            enable_direction: false,
            enable_magnitude: false,
            enable_multi_objective: false,
            ..Self::default()
        }
    }

    pub fn effective_gamma(&self) -> f64 {
        if self.enable_multi_objective {
            self.gamma
        } else {
            0.0
        }
    }

    pub fn validate(&self) -> Result<(), RecalError> {
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(RecalError::Config(format!("gamma must be >= 0, got {}", self.gamma)));
        }
        if !(self.rho.is_finite() && self.rho >= 0.0) {
            return Err(RecalError::Config(format!("rho must be >= 0, got {}", self.rho)));
        }
        if !(0.0..=1.0).contains(&self.w_floor) {
            return Err(RecalError::Config(format!(
                "w_floor must be in [0, 1], got {}",
                self.w_floor
            )));
        }
        Ok(())
    }
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `v / ‖v‖`, or the zero vector when `v` is zero.
pub fn normalize(v: &[f64]) -> Vec<f64> {
    let n = norm(v);
    if n > NORM_EPS {
        v.iter().map(|x| x / n).collect()
    } else {
        vec![0.0; v.len()]
    }
}

/// Gradient cosine similarity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gcs {
    pub value: f64,
    /// One input was zero, or negligible next to the other; `value` is then 0.
    pub degenerate: bool,
}

impl Gcs {
    pub fn is_conflicting(&self) -> bool {
        self.value < 0.0
    }
}

pub fn gcs(u: &[f64], v: &[f64]) -> Gcs {
    let (nu, nv) = (norm(u), norm(v));
    if nu <= NORM_EPS || nv <= NORM_EPS || nu.min(nv) <= REL_ZERO * nu.max(nv) {
        return Gcs {
            value: 0.0,
            degenerate: true,
        };
    }
    let c = dot(u, v) / (nu * nv);
    Gcs {
        value: c.clamp(-1.0, 1.0),
        degenerate: false,
    }
}

/// `g_ce + γ g_em`.
pub fn combine(g_ce: &[f64], g_em: &[f64], gamma: f64) -> Result<Vec<f64>, RecalError> {
    if g_ce.len() != g_em.len() {
        return Err(RecalError::DimensionMismatch(g_ce.len(), g_em.len()));
    }
    Ok(g_ce.iter().zip(g_em).map(|(a, b)| a + gamma * b).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct DirectionResult {
    /// Unit vector, or zero when both inputs vanish.
    pub direction: Vec<f64>,
    /// Dual solution, when an offset was computed.
    pub lambda_star: Option<f64>,
    pub degenerate: bool,
}

fn lerp(u1: &[f64], u2: &[f64], lambda: f64) -> Vec<f64> {
    u1.iter()
        .zip(u2)
        .map(|(a, b)| lambda * a + (1.0 - lambda) * b)
        .collect()
}

/// Minimizes the dual `D(λ) = ⟨g_λ, g⟩ + β ‖g_λ‖` over `λ ∈ [0, 1]`,
/// `g_λ = λ u1 + (1 − λ) u2`. `D` is convex, so its derivative is
/// nondecreasing and bisection on the derivative's sign finds the
/// minimizer to machine precision.
pub fn dual_solve(u1: &[f64], u2: &[f64], g: &[f64], beta: f64) -> f64 {
    let diff: Vec<f64> = u1.iter().zip(u2).map(|(a, b)| a - b).collect();
    let lin = dot(&diff, g);
    let slope = |lambda: f64| {
        let gl = lerp(u1, u2, lambda);
        let n = norm(&gl);
        // at a zero of g_λ the norm term has subgradient 0
        if n > 1e-300 {
            lin + beta * dot(&gl, &diff) / n
        } else {
            lin
        }
    };
    if slope(0.0) >= 0.0 {
        return 0.0;
    }
    if slope(1.0) <= 0.0 {
        return 1.0;
    }
    let (mut a, mut b) = (0.0f64, 1.0f64);
    while b - a > DUAL_TOL {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        if slope(m) < 0.0 {
            a = m;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

/// Conflict-averse direction for one class row.
///
/// `g = û_ce + γ û_em`; with `β = ρ ‖g‖` the result is
/// `normalize(g + β ĝ_λ*)`. With `ρ = 0`, or when only one objective has a
/// nonzero gradient, it is `normalize(g)`.
pub fn direction_recalibrate(g_ce: &[f64], g_em: &[f64], cfg: &RecalConfig) -> Result<DirectionResult, RecalError> {
    let (n1, n2) = (norm(g_ce), norm(g_em));
    let keep = |v: &[f64], n: f64| {
        if n > REL_ZERO * n1.max(n2) {
            normalize(v)
        } else {
            vec![0.0; v.len()]
        }
    };
    let u1 = keep(g_ce, n1);
    let u2 = keep(g_em, n2);
    let g = combine(&u1, &u2, cfg.effective_gamma())?;
    let g_norm = norm(&g);
    if g_norm <= NORM_EPS {
        return Ok(DirectionResult {
            direction: vec![0.0; g.len()],
            lambda_star: None,
            degenerate: true,
        });
    }
    let beta = cfg.rho * g_norm;
    let both = norm(&u1) > 0.0 && norm(&u2) > 0.0;
    if beta <= 0.0 || !both {
        return Ok(DirectionResult {
            direction: normalize(&g),
            lambda_star: None,
            degenerate: false,
        });
    }
    let lambda = dual_solve(&u1, &u2, &g, beta);
    let gl = lerp(&u1, &u2, lambda);
    let gl_norm = norm(&gl);
    let d: Vec<f64> = if gl_norm > 1e-12 {
        g.iter().zip(&gl).map(|(a, b)| a + beta * b / gl_norm).collect()
    } else {
        g
    };
    Ok(DirectionResult {
        direction: normalize(&d),
        lambda_star: Some(lambda),
        degenerate: false,
    })
}

/// Min-max factors `w_c = 1 − (m_c − min)/(max − min)`, clamped to
/// `[w_floor, 1]`; all ones when every magnitude is equal.
pub fn magnitude_recalibrate(magnitudes: &BTreeMap<usize, f64>, cfg: &RecalConfig) -> BTreeMap<usize, f64> {
    let min = magnitudes.values().copied().fold(f64::INFINITY, f64::min);
    let max = magnitudes.values().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = max - min;
    magnitudes
        .iter()
        .map(|(&c, &m)| {
            let w = if span > 0.0 { 1.0 - (m - min) / span } else { 1.0 };
            (c, w.clamp(cfg.w_floor, 1.0))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassRecal {
    /// Final weight-row gradient.
    pub weight: Vec<f64>,
    pub bias: f64,
    pub gcs: Gcs,
    /// `‖g_ce + γ g_em‖`.
    pub mag_pre: f64,
    /// Norm of the final weight-row gradient.
    pub mag_post: f64,
    pub w: f64,
    pub lambda_star: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecalibratedGradient {
    pub classes: BTreeMap<usize, ClassRecal>,
}

/// Runs the enabled modules on every class row of `bundle`.
///
/// With direction and magnitude both off the result is exactly
/// `g_ce + γ g_em`. Bias gradients are combined with `γ` and scaled by `w_c`
/// but never direction-recalibrated.
pub fn recalibrate(bundle: &GradientBundle, cfg: &RecalConfig) -> Result<RecalibratedGradient, RecalError> {
    cfg.validate()?;
    if bundle.ce.len() != bundle.em.len() || bundle.ce.keys().ne(bundle.em.keys()) {
        return Err(RecalError::MismatchedClasses);
    }
    let gamma = cfg.effective_gamma();
    let mut combined: BTreeMap<usize, (Vec<f64>, f64)> = BTreeMap::new();
    for (&c, ce) in &bundle.ce {
        let em: &RowGrad = &bundle.em[&c];
        let g = combine(&ce.weight, &em.weight, gamma)?;
        combined.insert(c, (g, ce.bias + gamma * em.bias));
    }
    let magnitudes: BTreeMap<usize, f64> = combined.iter().map(|(&c, (g, _))| (c, norm(g))).collect();
    let factors = if cfg.enable_magnitude {
        magnitude_recalibrate(&magnitudes, cfg)
    } else {
        magnitudes.keys().map(|&c| (c, 1.0)).collect()
    };

    let mut classes = BTreeMap::new();
    for (c, (g, bias)) in combined {
        let ce = &bundle.ce[&c];
        let em = &bundle.em[&c];
        let w = factors[&c];
        let mag_pre = magnitudes[&c];
        let mut lambda_star = None;
        let weight = if cfg.enable_direction {
            let dir = direction_recalibrate(&ce.weight, &em.weight, cfg)?;
            lambda_star = dir.lambda_star;
            let target = if cfg.enable_magnitude { w * mag_pre } else { mag_pre };
            dir.direction.into_iter().map(|x| target * x).collect()
        } else if cfg.enable_magnitude {
            g.into_iter().map(|x| w * x).collect()
        } else {
            g
        };
        let bias = if cfg.enable_magnitude { w * bias } else { bias };
        classes.insert(
            c,
            ClassRecal {
                mag_post: norm(&weight),
                weight,
                bias,
                gcs: gcs(&ce.weight, &em.weight),
                mag_pre,
                w,
                lambda_star,
            },
        );
    }
    Ok(RecalibratedGradient { classes })
}
