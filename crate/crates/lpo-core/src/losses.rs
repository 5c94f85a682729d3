//! The preference-loss family over margin pairs: DPO, LPO, and LPO-ste.
//!
//! All losses consume a [`MarginPair`] (x1, x2) of length-normalized
//! log-probability ratios and a [`LossParams`] bundle (β, λ, r1, r2):
//!
//! - **DPO**: −log σ(β·x1 − β·x2). Smooth, and its two gradients are exact
//!   negatives of each other, so the chosen and rejected updates are coupled.
//! - **LPO**: 2β·|x1 − x2 − 1/(2β)| + λ·max(0, −x1). The absolute-difference
//!   margin caps the gap at the offset 1/(2β); the hinge penalizes negative
//!   chosen log-ratios.
//! - **LPO-ste**: the straight-through split of LPO. Two copies of the
//!   margin term are built, one with x2 detached (the chosen path, weighted
//!   by r1) and one with x1 detached (the rejected path, weighted by r2),
//!   then combined as (2/(r1+r2))·(r1·L1 + r2·L2). Because the path weights
//!   appear both inside the per-path losses and in the combination, each
//!   path's gradient carries its coefficient squared; see [`SteWeighting`]
//!   for the single-application alternative.
//!
//! Every loss returns a [`LossBreakdown`] with closed-form gradients. The
//! same formulas can be built on an autodiff [`Tape`](crate::Tape) via the `*_graph`
//! constructors; the closed forms mirror the graph's operation order so the
//! two agree bit-for-bit, which the tests assert.
//!
//! Kinks follow the sgn(0) = 0 convention of [`crate::math::sgn`], and the
//! hinge indicator uses strict inequality: at x1 = 0 it contributes zero
//! gradient.

use crate::autodiff::Var;
use crate::math;

/// Errors from loss construction and evaluation.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LossError {
    #[error("invalid loss parameter: {0}")]
    BadParam(&'static str),
    /// Length-normalized margins need positive lengths.
    #[error("response length must be >= 1")]
    ZeroLength,
    /// Ratio-space gradients need strictly positive ratio variables.
    #[error("ratio variable must be positive, got {0}")]
    NonPositiveRatio(f64),
    /// The LPO gradient ratio is undefined at d = 0.
    #[error("gradient ratio undefined at the kink (x1 - x2 = 1/(2 beta))")]
    UndefinedRatio,
}

/// Hyperparameters shared by every loss in the family.
///
/// Invariants: β > 0, λ ≥ 0, r1 > 0, r2 > 0. DPO only reads β; LPO reads
/// β and λ; LPO-ste reads all four.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LossParams {
    /// Offset/temperature β.
    pub beta: f64,
    /// Weight λ of the positive-constraint hinge.
    pub lambda: f64,
    /// Chosen-path coefficient.
    pub r1: f64,
    /// Rejected-path coefficient, the rejection-suppression knob.
    pub r2: f64,
}

impl Default for LossParams {
    /// LPO training defaults: β = 0.2, λ = 10, r1 = r2 = 1.
    fn default() -> Self {
        Self {
            beta: 0.2,
            lambda: 10.0,
            r1: 1.0,
            r2: 1.0,
        }
    }
}

impl LossParams {
    /// Validated constructor.
    pub fn new(beta: f64, lambda: f64, r1: f64, r2: f64) -> Result<Self, LossError> {
        let p = Self {
            beta,
            lambda,
            r1,
            r2,
        };
        p.validate()?;
        Ok(p)
    }

    /// DPO baseline defaults: β = 0.1 and no hinge.
    pub fn dpo_baseline() -> Self {
        Self {
            beta: 0.1,
            lambda: 0.0,
            r1: 1.0,
            r2: 1.0,
        }
    }

    /// Checks the parameter invariants.
    pub fn validate(&self) -> Result<(), LossError> {
        if self.beta <= 0.0 || !self.beta.is_finite() {
            return Err(LossError::BadParam("beta must be > 0"));
        }
        if self.lambda < 0.0 || !self.lambda.is_finite() {
            return Err(LossError::BadParam("lambda must be >= 0"));
        }
        if self.r1 <= 0.0 || !self.r1.is_finite() {
            return Err(LossError::BadParam("r1 must be > 0"));
        }
        if self.r2 <= 0.0 || !self.r2.is_finite() {
            return Err(LossError::BadParam("r2 must be > 0"));
        }
        Ok(())
    }

    /// The margin target 1/(2β).
    pub fn offset(&self) -> f64 {
        1.0 / (2.0 * self.beta)
    }

    /// Copy with a different r2.
    pub fn with_r2(self, r2: f64) -> Self {
        Self { r2, ..self }
    }
}

/// The per-example margin pair: length-normalized log-ratios of the chosen
/// (x1) and rejected (x2) responses.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MarginPair {
    pub x1: f64,
    pub x2: f64,
}

impl MarginPair {
    pub fn new(x1: f64, x2: f64) -> Self {
        Self { x1, x2 }
    }
}

/// A loss evaluation: value decomposition plus closed-form gradients.
///
/// `total = margin_term + hinge_term` holds exactly for every loss kind.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub margin_term: f64,
    pub hinge_term: f64,
    pub grad_x1: f64,
    pub grad_x2: f64,
}

/// Which loss of the family to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum LossKind {
    Dpo,
    #[default]
    Lpo,
    LpoSte,
}

impl LossKind {
    pub fn name(&self) -> &'static str {
        match self {
            LossKind::Dpo => "dpo",
            LossKind::Lpo => "lpo",
            LossKind::LpoSte => "lpo_ste",
        }
    }

    /// Parses `dpo`, `lpo`, `lpo_ste` (or `lpo-ste`).
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "dpo" => Some(LossKind::Dpo),
            "lpo" => Some(LossKind::Lpo),
            "lpo_ste" | "lpo-ste" => Some(LossKind::LpoSte),
            _ => None,
        }
    }
}

impl core::fmt::Display for LossKind {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.name())
    }
}

/// How r1 and r2 enter the straight-through combination.
///
/// `Quadratic` applies them both inside the per-path losses and in the
/// outer combination (each path's gradient scales with its coefficient
/// squared); `Linear` applies them once, inside the per-path losses only.
/// `Quadratic` is the default.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum SteWeighting {
    #[default]
    Quadratic,
    Linear,
}

impl SteWeighting {
    pub fn name(&self) -> &'static str {
        match self {
            SteWeighting::Quadratic => "quadratic",
            SteWeighting::Linear => "linear",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "quadratic" => Some(SteWeighting::Quadratic),
            "linear" => Some(SteWeighting::Linear),
            _ => None,
        }
    }
}

/// Length-normalized margins from raw sequence log-probabilities:
/// x1 = (log πθ(y_w) − log π_ref(y_w)) / len_w and likewise for x2.
pub fn length_normalized_margins(
    policy_logp_w: f64,
    ref_logp_w: f64,
    len_w: usize,
    policy_logp_l: f64,
    ref_logp_l: f64,
    len_l: usize,
) -> Result<MarginPair, LossError> {
    if len_w == 0 || len_l == 0 {
        return Err(LossError::ZeroLength);
    }
    Ok(MarginPair {
        x1: (policy_logp_w - ref_logp_w) / len_w as f64,
        x2: (policy_logp_l - ref_logp_l) / len_l as f64,
    })
}

/// DPO: total = −log σ(β·x1 − β·x2).
///
/// grad_x1 = −β·σ(β·x2 − β·x1) and grad_x2 = −grad_x1; the loss depends on
/// the pair only through x1 − x2.
pub fn dpo_loss(m: MarginPair, p: &LossParams) -> LossBreakdown {
    let z = m.x1 * p.beta - m.x2 * p.beta;
    let total = -math::log_sigmoid(z);
    let s = math::sigmoid(-z);
    let grad_x1 = (-s) * p.beta;
    let grad_x2 = s * p.beta;
    LossBreakdown {
        total,
        margin_term: total,
        hinge_term: 0.0,
        grad_x1,
        grad_x2,
    }
}

/// DPO built on a tape; mirrors [`dpo_loss`] exactly.
pub fn dpo_loss_graph(x1: &Var, x2: &Var, p: &LossParams) -> Var {
    let z = &x1.mul_const(p.beta) - &x2.mul_const(p.beta);
    -&z.log_sigmoid()
}

/// DPO gradients in ratio space: L(u1, u2) = −log σ(β·ln u1 − β·ln u2)
/// for strictly positive ratio variables.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatioSpaceGrads {
    pub grad_u1: f64,
    pub grad_u2: f64,
    /// |grad_u1 / grad_u2|; identically u2/u1.
    pub ratio: f64,
}

/// Evaluates the ratio-space DPO gradients and their magnitude ratio.
///
/// The ratio |∂L/∂u1 / ∂L/∂u2| collapses to u2/u1 for every β: the larger
/// ratio variable always receives the smaller gradient, which is why plain
/// DPO ends up dominated by the rejected response late in training.
pub fn dpo_ratio_space_gradients(
    u1: f64,
    u2: f64,
    beta: f64,
) -> Result<RatioSpaceGrads, LossError> {
    if u1 <= 0.0 || !u1.is_finite() {
        return Err(LossError::NonPositiveRatio(u1));
    }
    if u2 <= 0.0 || !u2.is_finite() {
        return Err(LossError::NonPositiveRatio(u2));
    }
    if beta <= 0.0 || beta.is_nan() {
        return Err(LossError::BadParam("beta must be > 0"));
    }
    let z = math::ln(u1) * beta - math::ln(u2) * beta;
    let s = math::sigmoid(-z);
    let grad_u1 = ((-s) * beta) * (1.0 / u1);
    let grad_u2 = (s * beta) * (1.0 / u2);
    Ok(RatioSpaceGrads {
        grad_u1,
        grad_u2,
        ratio: math::abs(grad_u1 / grad_u2),
    })
}

/// LPO: total = 2β·|x1 − x2 − 1/(2β)| + λ·max(0, −x1).
///
/// grad_x1 = 2β·sgn(d) − λ·1\[x1 < 0\] and grad_x2 = −2β·sgn(d), with
/// d = x1 − x2 − 1/(2β). These are the derivatives of the loss itself
/// (central differences agree off the kinks); both vanish on the attractor
/// set {d = 0, x1 ≥ 0}.
pub fn lpo_loss(m: MarginPair, p: &LossParams) -> LossBreakdown {
    let d = m.x1 - m.x2 - p.offset();
    let coef = 2.0 * p.beta;
    let s = math::sgn(d);
    let ind = math::neg_indicator(m.x1);
    let margin_term = math::abs(d) * coef;
    let hinge_term = math::max0(-m.x1) * p.lambda;
    LossBreakdown {
        total: margin_term + hinge_term,
        margin_term,
        hinge_term,
        grad_x1: coef * s - p.lambda * ind,
        grad_x2: -(coef * s),
    }
}

/// LPO built on a tape; mirrors [`lpo_loss`] exactly.
pub fn lpo_loss_graph(x1: &Var, x2: &Var, p: &LossParams) -> Var {
    let d = (x1 - x2).sub_const(p.offset());
    let margin = d.abs().mul_const(2.0 * p.beta);
    let hinge = (-x1).max0().mul_const(p.lambda);
    &margin + &hinge
}

/// grad_x1 / grad_x2 of [`lpo_loss`]; constant within each
/// (sign d, sign x1) region.
///
/// Off the kink this is −1 whenever the hinge is inactive (x1 ≥ 0), and
/// −(2β·sgn(d) − λ)/(2β·sgn(d)) otherwise — the gradient balance is set
/// entirely by β and λ, never by how far the pair is from the offset.
pub fn lpo_gradient_ratio(m: MarginPair, p: &LossParams) -> Result<f64, LossError> {
    let bd = lpo_loss(m, p);
    if bd.grad_x2 == 0.0 {
        return Err(LossError::UndefinedRatio);
    }
    Ok(bd.grad_x1 / bd.grad_x2)
}

/// The two straight-through path losses of LPO-ste:
///
/// L1 = r1·2β·|x1 − detach(x2) − 1/(2β)| + λ·max(0, −x1)
/// L2 = r2·2β·|detach(x1) − x2 − 1/(2β)| + λ·max(0, −detach(x1))
///
/// L1 sees x2 only through its value; L2 sees x1 only through its value.
/// Combined by [`lpo_ste_loss_graph`].
pub fn lpo_ste_split_graph(x1: &Var, x2: &Var, p: &LossParams) -> (Var, Var) {
    let offset = p.offset();
    let coef = 2.0 * p.beta;

    let d1 = (x1 - &x2.detach()).sub_const(offset);
    let m1 = d1.abs().mul_const(p.r1 * coef);
    let h1 = (-x1).max0().mul_const(p.lambda);
    let l1 = &m1 + &h1;

    let x1_frozen = x1.detach();
    let d2 = (&x1_frozen - x2).sub_const(offset);
    let m2 = d2.abs().mul_const(p.r2 * coef);
    let h2 = (-&x1_frozen).max0().mul_const(p.lambda);
    let l2 = &m2 + &h2;

    (l1, l2)
}

/// LPO-ste built on a tape: (2/(r1+r2))·(r1·L1 + r2·L2) under `Quadratic`
/// weighting, (2/(r1+r2))·(L1 + L2) under `Linear`.
pub fn lpo_ste_loss_graph(x1: &Var, x2: &Var, p: &LossParams, weighting: SteWeighting) -> Var {
    let (l1, l2) = lpo_ste_split_graph(x1, x2, p);
    let norm = 2.0 / (p.r1 + p.r2);
    match weighting {
        SteWeighting::Quadratic => (&l1.mul_const(p.r1) + &l2.mul_const(p.r2)).mul_const(norm),
        SteWeighting::Linear => (&l1 + &l2).mul_const(norm),
    }
}

/// LPO-ste with the default quadratic weighting.
pub fn lpo_ste_loss(m: MarginPair, p: &LossParams) -> LossBreakdown {
    lpo_ste_loss_weighted(m, p, SteWeighting::Quadratic)
}

/// LPO-ste closed form; mirrors [`lpo_ste_loss_graph`] exactly.
///
/// Under quadratic weighting:
/// grad_x1 = (2/(r1+r2))·r1·(r1·2β·sgn(d) − λ·1\[x1<0\]) and
/// grad_x2 = −(2/(r1+r2))·r2²·2β·sgn(d).
/// The hinge copy inside L2 contributes to the value but never to any
/// gradient, because it reads x1 only through a detach.
pub fn lpo_ste_loss_weighted(
    m: MarginPair,
    p: &LossParams,
    weighting: SteWeighting,
) -> LossBreakdown {
    let d = m.x1 - m.x2 - p.offset();
    let coef = 2.0 * p.beta;
    let s = math::sgn(d);
    let ind = math::neg_indicator(m.x1);

    let a1 = p.r1 * coef;
    let a2 = p.r2 * coef;
    let m1 = math::abs(d) * a1;
    let m2 = math::abs(d) * a2;
    let h = math::max0(-m.x1) * p.lambda;

    let norm = 2.0 / (p.r1 + p.r2);
    let (w1, w2, margin_term, hinge_term) = match weighting {
        SteWeighting::Quadratic => (
            norm * p.r1,
            norm * p.r2,
            (m1 * p.r1 + m2 * p.r2) * norm,
            (h * p.r1 + h * p.r2) * norm,
        ),
        SteWeighting::Linear => (norm, norm, (m1 + m2) * norm, (h + h) * norm),
    };

    LossBreakdown {
        total: margin_term + hinge_term,
        margin_term,
        hinge_term,
        grad_x1: (w1 * a1) * s - (w1 * p.lambda) * ind,
        grad_x2: -((w2 * a2) * s),
    }
}

/// Value of LPO-ste with the detached occurrences held at a fixed base
/// point: L1 reads (x1, frozen_x2) and L2 reads (frozen_x1, x2).
///
/// This is the function whose true partial derivatives the straight-through
/// gradients are, so it is what a finite-difference oracle must probe.
pub fn lpo_ste_split_value(
    x1: f64,
    x2: f64,
    frozen_x1: f64,
    frozen_x2: f64,
    p: &LossParams,
    weighting: SteWeighting,
) -> f64 {
    let offset = p.offset();
    let coef = 2.0 * p.beta;
    let l1 = math::abs(x1 - frozen_x2 - offset) * (p.r1 * coef) + math::max0(-x1) * p.lambda;
    let l2 = math::abs(frozen_x1 - x2 - offset) * (p.r2 * coef) + math::max0(-frozen_x1) * p.lambda;
    let norm = 2.0 / (p.r1 + p.r2);
    match weighting {
        SteWeighting::Quadratic => (l1 * p.r1 + l2 * p.r2) * norm,
        SteWeighting::Linear => (l1 + l2) * norm,
    }
}

/// |grad_x2| of LPO-ste off the kink: (2/(r1+r2))·r2²·2β under quadratic
/// weighting. Strictly increasing in r2 for fixed r1, which is what makes
/// r2 a usable rejection-suppression dial.
pub fn grad_x2_magnitude(p: &LossParams, sign_d: f64) -> f64 {
    debug_assert!(sign_d == 1.0 || sign_d == -1.0, "sign_d must be +/-1");
    let norm = 2.0 / (p.r1 + p.r2);
    let a2 = p.r2 * (2.0 * p.beta);
    math::abs(-((norm * p.r2) * a2) * sign_d)
}

/// Evaluates the configured loss with default straight-through weighting.
pub fn loss(kind: LossKind, m: MarginPair, p: &LossParams) -> LossBreakdown {
    loss_weighted(kind, m, p, SteWeighting::Quadratic)
}

/// Evaluates the configured loss.
pub fn loss_weighted(
    kind: LossKind,
    m: MarginPair,
    p: &LossParams,
    weighting: SteWeighting,
) -> LossBreakdown {
    match kind {
        LossKind::Dpo => dpo_loss(m, p),
        LossKind::Lpo => lpo_loss(m, p),
        LossKind::LpoSte => lpo_ste_loss_weighted(m, p, weighting),
    }
}

/// Builds the configured loss on a tape.
pub fn loss_graph(
    kind: LossKind,
    x1: &Var,
    x2: &Var,
    p: &LossParams,
    weighting: SteWeighting,
) -> Var {
    match kind {
        LossKind::Dpo => dpo_loss_graph(x1, x2, p),
        LossKind::Lpo => lpo_loss_graph(x1, x2, p),
        LossKind::LpoSte => lpo_ste_loss_graph(x1, x2, p, weighting),
    }
}
