//! Margin-space gradient-descent simulator.
//!
//! Treats (x1, x2) as free parameters and integrates plain gradient descent
//! under any loss in the zoo. This isolates the loss geometry itself: under
//! LPO the pair converges to the offset set {x1 − x2 = 1/(2β), x1 ≥ 0} and
//! parks there (sgn(0) = 0), while under DPO the gap grows without bound.
//! Sweeping r2 under LPO-ste reproduces the controllability picture: the
//! rejected margin descends faster, and the chosen margin rises slower, as
//! r2 increases.
//!
//! Everything here is deterministic: identical configs yield bit-identical
//! traces.

use alloc::vec::Vec;

use crate::losses::{self, LossKind, LossParams, MarginPair, SteWeighting};

/// Default slope dead-band used when classifying trends.
pub const DEFAULT_EPS_SLOPE: f64 = 1e-4;

/// Errors from simulation and classification.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("invalid sim config: {0}")]
    BadConfig(&'static str),
    /// The state left the finite range; reports the last valid step.
    #[error("divergence at step {step} (last finite state x1={x1}, x2={x2})")]
    Diverged { step: usize, x1: f64, x2: f64 },
    /// Trend classification needs at least 8 recorded points.
    #[error("insufficient data: {got} recorded points, need at least {need}")]
    InsufficientData { got: usize, need: usize },
    #[error(transparent)]
    Loss(#[from] losses::LossError),
}

/// Configuration for one gradient-descent run over margins.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SimConfig {
    pub loss: LossKind,
    pub params: LossParams,
    pub ste_weighting: SteWeighting,
    pub x1_init: f64,
    pub x2_init: f64,
    pub step_size: f64,
    pub steps: usize,
    pub record_every: usize,
}

impl Default for SimConfig {
    /// A run that is still in its transient at the final step, so trend
    /// slopes are measured on live motion: LPO from the origin, 100 steps
    /// of size 0.02.
    fn default() -> Self {
        Self {
            loss: LossKind::Lpo,
            params: LossParams::default(),
            ste_weighting: SteWeighting::default(),
            x1_init: 0.0,
            x2_init: 0.0,
            step_size: 0.02,
            steps: 100,
            record_every: 1,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        self.params.validate()?;
        if self.steps == 0 {
            return Err(SimError::BadConfig("steps must be >= 1"));
        }
        if self.step_size <= 0.0 || self.step_size.is_nan() {
            return Err(SimError::BadConfig("step_size must be > 0"));
        }
        if self.step_size > 1.0 {
            return Err(SimError::BadConfig("step_size must be <= 1.0"));
        }
        if self.record_every == 0 {
            return Err(SimError::BadConfig("record_every must be >= 1"));
        }
        if !self.x1_init.is_finite() || !self.x2_init.is_finite() {
            return Err(SimError::BadConfig("initial state must be finite"));
        }
        Ok(())
    }
}

/// One recorded state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TracePoint {
    pub step: usize,
    pub x1: f64,
    pub x2: f64,
    pub loss: f64,
}

/// A recorded trajectory with terminal slopes fitted by ordinary least
/// squares over the final quarter of recorded steps.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryTrace {
    pub points: Vec<TracePoint>,
    /// Per-step slope of x1 over the final quarter.
    pub slope_x1: f64,
    /// Per-step slope of x2 over the final quarter.
    pub slope_x2: f64,
}

impl TrajectoryTrace {
    /// Builds a trace from recorded points, fitting the terminal slopes.
    pub fn from_points(points: Vec<TracePoint>) -> Self {
        assert!(!points.is_empty(), "empty trace");
        let window = tail_window(&points);
        let slope_x1 = ols_slope(window.iter().map(|p| (p.step as f64, p.x1)));
        let slope_x2 = ols_slope(window.iter().map(|p| (p.step as f64, p.x2)));
        Self {
            points,
            slope_x1,
            slope_x2,
        }
    }

    /// Final recorded state.
    pub fn terminal(&self) -> &TracePoint {
        self.points.last().expect("trace has at least one point")
    }
}

/// Points in the final quarter of the recorded step range (at least two).
fn tail_window(points: &[TracePoint]) -> &[TracePoint] {
    let last = points.last().expect("empty trace").step;
    let first = points[0].step;
    let span = last - first;
    let cut = last - span / 4;
    let start = points
        .iter()
        .position(|p| p.step >= cut)
        .unwrap_or(points.len().saturating_sub(1));
    let start = start.min(points.len().saturating_sub(2));
    &points[start..]
}

/// Least-squares slope of y against t.
fn ols_slope(pairs: impl Iterator<Item = (f64, f64)> + Clone) -> f64 {
    let n = pairs.clone().count();
    if n < 2 {
        return 0.0;
    }
    let n_f = n as f64;
    let (mut st, mut sy) = (0.0, 0.0);
    for (t, y) in pairs.clone() {
        st += t;
        sy += y;
    }
    let (tbar, ybar) = (st / n_f, sy / n_f);
    let (mut num, mut den) = (0.0, 0.0);
    for (t, y) in pairs {
        num += (t - tbar) * (y - ybar);
        den += (t - tbar) * (t - tbar);
    }
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// The trend taxonomy over (slope_x1, slope_x2):
/// Case 1 — chosen rises, rejected falls; Case 2 — both fall;
/// Case 3 — both rise; Stationary — both inside the dead-band.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrendCase {
    Case1,
    Case2,
    Case3,
    Stationary,
}

impl core::fmt::Display for TrendCase {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(match self {
            TrendCase::Case1 => "case1",
            TrendCase::Case2 => "case2",
            TrendCase::Case3 => "case3",
            TrendCase::Stationary => "stationary",
        })
    }
}

/// Integrates xᵢ ← xᵢ − step_size · ∂L/∂xᵢ and records every
/// `record_every`-th step (the initial state and the final step are always
/// recorded).
pub fn simulate(cfg: &SimConfig) -> Result<TrajectoryTrace, SimError> {
    cfg.validate()?;
    let mut x1 = cfg.x1_init;
    let mut x2 = cfg.x2_init;
    let mut points = Vec::with_capacity(cfg.steps / cfg.record_every + 2);
    let eval = |x1: f64, x2: f64| {
        losses::loss_weighted(
            cfg.loss,
            MarginPair::new(x1, x2),
            &cfg.params,
            cfg.ste_weighting,
        )
    };

    let bd0 = eval(x1, x2);
    points.push(TracePoint {
        step: 0,
        x1,
        x2,
        loss: bd0.total,
    });

    for step in 1..=cfg.steps {
        let bd = eval(x1, x2);
        let next_x1 = x1 - cfg.step_size * bd.grad_x1;
        let next_x2 = x2 - cfg.step_size * bd.grad_x2;
        if !next_x1.is_finite() || !next_x2.is_finite() {
            return Err(SimError::Diverged { step, x1, x2 });
        }
        x1 = next_x1;
        x2 = next_x2;
        if step % cfg.record_every == 0 || step == cfg.steps {
            points.push(TracePoint {
                step,
                x1,
                x2,
                loss: eval(x1, x2).total,
            });
        }
    }

    Ok(TrajectoryTrace::from_points(points))
}

/// Classifies the terminal slopes of a trace into a [`TrendCase`].
///
/// Sign patterns outside the strict taxonomy are mapped to the nearest
/// case by slope signs, preferring earlier cases on ties.
pub fn classify_trend(trace: &TrajectoryTrace, eps_slope: f64) -> Result<TrendCase, SimError> {
    const MIN_POINTS: usize = 8;
    if trace.points.len() < MIN_POINTS {
        return Err(SimError::InsufficientData {
            got: trace.points.len(),
            need: MIN_POINTS,
        });
    }
    let s1 = trace.slope_x1;
    let s2 = trace.slope_x2;
    let flat1 = crate::math::abs(s1) <= eps_slope;
    let flat2 = crate::math::abs(s2) <= eps_slope;

    let case = if flat1 && flat2 {
        TrendCase::Stationary
    } else if s1 > eps_slope && s2 < -eps_slope {
        TrendCase::Case1
    } else if s1 < -eps_slope && s2 < -eps_slope {
        TrendCase::Case2
    } else if s1 > eps_slope && s2 > eps_slope {
        TrendCase::Case3
    } else if s2 < -eps_slope || s1 > eps_slope {
        // Exactly one live slope: a flat chosen with a falling rejected
        // (or a rising chosen with a flat rejected) is closest to Case 1.
        TrendCase::Case1
    } else if s1 < -eps_slope {
        TrendCase::Case2
    } else {
        TrendCase::Case3
    };
    Ok(case)
}

/// One sweep entry: the swept r2 value and its trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepEntry {
    pub r2: f64,
    pub trace: TrajectoryTrace,
}

/// Summary row matching the sweep CSV schema.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub r2: f64,
    pub terminal_x1: f64,
    pub terminal_x2: f64,
    pub slope_x1: f64,
    pub slope_x2: f64,
}

impl SweepEntry {
    pub fn row(&self) -> SweepRow {
        let t = self.trace.terminal();
        SweepRow {
            r2: self.r2,
            terminal_x1: t.x1,
            terminal_x2: t.x2,
            slope_x1: self.trace.slope_x1,
            slope_x2: self.trace.slope_x2,
        }
    }
}

/// Runs one simulation per r2 value, all other settings identical.
pub fn r2_sweep(base: &SimConfig, r2_values: &[f64]) -> Result<Vec<SweepEntry>, SimError> {
    if r2_values.is_empty() {
        return Err(SimError::BadConfig("r2 sweep needs at least one value"));
    }
    for (i, &r2) in r2_values.iter().enumerate() {
        if r2 <= 0.0 || !r2.is_finite() {
            return Err(SimError::BadConfig("r2 values must be positive"));
        }
        if r2_values[..i].contains(&r2) {
            return Err(SimError::BadConfig("r2 values must be distinct"));
        }
    }
    let mut entries = Vec::with_capacity(r2_values.len());
    for &r2 in r2_values {
        let cfg = SimConfig {
            params: base.params.with_r2(r2),
            ..base.clone()
        };
        entries.push(SweepEntry {
            r2,
            trace: simulate(&cfg)?,
        });
    }
    Ok(entries)
}
