//! Finite-difference gradient verification.
//!
//! [`finite_difference`] is the numeric oracle used throughout the crate:
//! central differences (f(x+h·eᵢ) − f(x−h·eᵢ)) / 2h per coordinate. The
//! harness in [`run_gradcheck`] samples margin points for a loss, skips any
//! point within [`KINK_EXCLUSION`] of a kink argument (central differences
//! are invalid across a non-differentiable point), and compares the
//! closed-form gradients against the oracle.
//!
//! For the straight-through loss the oracle differentiates the
//! frozen-split value function — the detached occurrences of x1 and x2 are
//! held at the base point — because that is the function whose true
//! derivative the straight-through gradients are.

use alloc::vec::Vec;

use crate::losses::{self, LossKind, LossParams, MarginPair, SteWeighting};
use crate::rng::{derive_seed, SplitMix64};

/// Relative error floor: rel_err = abs_err / max(|analytic|, |numeric|, floor).
pub const REL_ERR_FLOOR: f64 = 1e-12;

/// Points whose kink arguments are within this distance of a kink are
/// excluded from finite-difference checks.
pub const KINK_EXCLUSION: f64 = 1e-3;

/// Central-difference step for smooth losses.
pub const SMOOTH_FD_STEP: f64 = 1e-6;

/// Errors from the oracle or the harness configuration.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CheckError {
    /// The probed function returned a non-finite value.
    #[error("non-finite value {value} at coordinate {coordinate}")]
    NonFinite { coordinate: usize, value: f64 },
    /// Step size must be positive.
    #[error("finite-difference step must be positive, got {0}")]
    BadStep(f64),
    /// Invalid harness configuration.
    #[error("invalid gradcheck config: {0}")]
    BadConfig(&'static str),
}

/// One analytic-vs-numeric comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradReport {
    pub analytic: f64,
    pub numeric: f64,
    pub abs_err: f64,
    pub rel_err: f64,
}

impl GradReport {
    /// Compares an analytic derivative against a numeric estimate.
    pub fn new(analytic: f64, numeric: f64) -> Self {
        let abs_err = crate::math::abs(analytic - numeric);
        let scale = crate::math::abs(analytic)
            .max(crate::math::abs(numeric))
            .max(REL_ERR_FLOOR);
        Self {
            analytic,
            numeric,
            abs_err,
            rel_err: abs_err / scale,
        }
    }
}

/// Central-difference gradient estimate of f at `point`.
pub fn finite_difference<F>(f: F, point: &[f64], h: f64) -> Result<Vec<f64>, CheckError>
where
    F: Fn(&[f64]) -> f64,
{
    if h <= 0.0 || h.is_nan() {
        return Err(CheckError::BadStep(h));
    }
    let mut probe = point.to_vec();
    let mut grad = Vec::with_capacity(point.len());
    for i in 0..point.len() {
        probe[i] = point[i] + h;
        let plus = f(&probe);
        probe[i] = point[i] - h;
        let minus = f(&probe);
        probe[i] = point[i];
        if !plus.is_finite() || !minus.is_finite() {
            return Err(CheckError::NonFinite {
                coordinate: i,
                value: if plus.is_finite() { minus } else { plus },
            });
        }
        grad.push((plus - minus) / (2.0 * h));
    }
    Ok(grad)
}

/// Configuration for one gradcheck run.
#[derive(Debug, Clone)]
pub struct GradcheckConfig {
    pub loss: LossKind,
    pub params: LossParams,
    pub ste_weighting: SteWeighting,
    /// Number of off-kink points to check.
    pub points: usize,
    pub seed: u64,
    /// Maximum allowed rel_err.
    pub tolerance: f64,
    /// Central-difference step; `None` picks a per-point step (see
    /// [`fd_step`]).
    pub step: Option<f64>,
}

impl GradcheckConfig {
    pub fn new(
        loss: LossKind,
        params: LossParams,
        points: usize,
        seed: u64,
        tolerance: f64,
    ) -> Self {
        Self {
            loss,
            params,
            ste_weighting: SteWeighting::default(),
            points,
            seed,
            tolerance,
            step: None,
        }
    }
}

/// Result for one sampled point: reports for ∂/∂x1 and ∂/∂x2.
#[derive(Debug, Clone, Copy)]
pub struct PointReport {
    pub point: MarginPair,
    pub x1: GradReport,
    pub x2: GradReport,
    pub pass: bool,
}

/// Summary of a gradcheck run.
#[derive(Debug, Clone)]
pub struct GradcheckSummary {
    pub reports: Vec<PointReport>,
    /// Index of the worst-offending report, by rel_err.
    pub worst: Option<usize>,
    pub passed: bool,
}

impl GradcheckSummary {
    pub fn worst_report(&self) -> Option<&PointReport> {
        self.worst.map(|i| &self.reports[i])
    }
}

/// Samples off-kink margin points and verifies the closed-form gradients
/// of the configured loss against central differences.
pub fn run_gradcheck(cfg: &GradcheckConfig) -> Result<GradcheckSummary, CheckError> {
    if cfg.points == 0 {
        return Err(CheckError::BadConfig("points must be >= 1"));
    }
    if cfg.tolerance <= 0.0 || cfg.tolerance.is_nan() {
        return Err(CheckError::BadConfig("tolerance must be > 0"));
    }
    cfg.params
        .validate()
        .map_err(|_| CheckError::BadConfig("invalid loss params"))?;

    let mut rng = SplitMix64::new(derive_seed(cfg.seed, "gradcheck", 0));
    let mut reports: Vec<PointReport> = Vec::with_capacity(cfg.points);
    let mut worst: Option<usize> = None;
    let mut passed = true;

    for _ in 0..cfg.points {
        let m = sample_off_kink_point(cfg.loss, &cfg.params, &mut rng);
        let bd = losses::loss_weighted(cfg.loss, m, &cfg.params, cfg.ste_weighting);
        let h = cfg
            .step
            .unwrap_or_else(|| fd_step(cfg.loss, m, &cfg.params));
        let numeric = fd_margin_grads(cfg.loss, m, &cfg.params, cfg.ste_weighting, h)?;
        let rep = PointReport {
            point: m,
            x1: GradReport::new(bd.grad_x1, numeric[0]),
            x2: GradReport::new(bd.grad_x2, numeric[1]),
            pass: true,
        };
        let rep = PointReport {
            pass: rep.x1.rel_err <= cfg.tolerance && rep.x2.rel_err <= cfg.tolerance,
            ..rep
        };
        passed &= rep.pass;
        let rel = rep.x1.rel_err.max(rep.x2.rel_err);
        let is_worse = worst
            .map(|w| rel > reports[w].x1.rel_err.max(reports[w].x2.rel_err))
            .unwrap_or(true);
        if is_worse {
            worst = Some(reports.len());
        }
        reports.push(rep);
    }

    Ok(GradcheckSummary {
        reports,
        worst,
        passed,
    })
}

/// Uniform margin point in [−3, 3]², resampled until all kink arguments of
/// the loss are at least [`KINK_EXCLUSION`] away from zero.
pub fn sample_off_kink_point(
    loss: LossKind,
    params: &LossParams,
    rng: &mut SplitMix64,
) -> MarginPair {
    loop {
        let m = MarginPair {
            x1: rng.next_range(-3.0, 3.0),
            x2: rng.next_range(-3.0, 3.0),
        };
        if is_off_kink(loss, m, params, KINK_EXCLUSION) {
            return m;
        }
    }
}

/// True when every kink argument of the loss at this point has magnitude
/// greater than `margin`. DPO is smooth everywhere, so every point passes.
pub fn is_off_kink(loss: LossKind, m: MarginPair, params: &LossParams, margin: f64) -> bool {
    match loss {
        LossKind::Dpo => true,
        LossKind::Lpo | LossKind::LpoSte => {
            let d = m.x1 - m.x2 - params.offset();
            crate::math::abs(d) > margin && crate::math::abs(m.x1) > margin
        }
    }
}

/// Step used to probe a loss at a point.
///
/// DPO is smooth, so a small fixed step keeps the truncation error down.
/// The LPO family is piecewise linear: central differences are exact for
/// any step that stays inside the current linear region, and a larger step
/// dilutes floating-point cancellation, so we take a fixed fraction of the
/// distance to the nearest kink.
pub fn fd_step(loss: LossKind, m: MarginPair, params: &LossParams) -> f64 {
    match loss {
        LossKind::Dpo => SMOOTH_FD_STEP,
        LossKind::Lpo | LossKind::LpoSte => {
            let d = m.x1 - m.x2 - params.offset();
            let dist = crate::math::abs(d).min(crate::math::abs(m.x1));
            (0.45 * dist).clamp(SMOOTH_FD_STEP, 1.0)
        }
    }
}

/// Central differences of the loss in (x1, x2), with straight-through
/// losses probed through their frozen-split value function.
pub fn fd_margin_grads(
    loss: LossKind,
    m: MarginPair,
    params: &LossParams,
    weighting: SteWeighting,
    h: f64,
) -> Result<Vec<f64>, CheckError> {
    let p = *params;
    match loss {
        LossKind::Dpo => finite_difference(
            |v| losses::dpo_loss(MarginPair { x1: v[0], x2: v[1] }, &p).total,
            &[m.x1, m.x2],
            h,
        ),
        LossKind::Lpo => finite_difference(
            |v| losses::lpo_loss(MarginPair { x1: v[0], x2: v[1] }, &p).total,
            &[m.x1, m.x2],
            h,
        ),
        LossKind::LpoSte => finite_difference(
            |v| losses::lpo_ste_split_value(v[0], v[1], m.x1, m.x2, &p, weighting),
            &[m.x1, m.x2],
            h,
        ),
    }
}
