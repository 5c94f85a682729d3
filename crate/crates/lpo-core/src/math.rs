//! Scalar math helpers backed by [`libm`].
//!
//! Routing through `libm` keeps the crate `no_std`-compatible and makes
//! every transcendental bit-identical across platforms, which the
//! determinism contracts elsewhere in the crate rely on.

/// e^x.
#[inline]
pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

/// Natural logarithm. Callers are responsible for the domain check.
#[inline]
pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

/// ln(1 + x), accurate near zero.
#[inline]
pub fn ln_1p(x: f64) -> f64 {
    libm::log1p(x)
}

/// |x|.
#[inline]
pub fn abs(x: f64) -> f64 {
    libm::fabs(x)
}

/// Hyperbolic tangent.
#[inline]
pub fn tanh(x: f64) -> f64 {
    libm::tanh(x)
}

/// Logistic function σ(x) = 1 / (1 + e^−x), evaluated stably for large |x|.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + exp(-x))
    } else {
        let e = exp(x);
        e / (1.0 + e)
    }
}

/// log σ(x), evaluated stably as −ln(1 + e^−|x|) plus the linear part.
#[inline]
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -ln_1p(exp(-x))
    } else {
        x - ln_1p(exp(x))
    }
}

/// Sign function with the sgn(0) = 0 convention.
///
/// This is the subgradient choice used by every kinked loss in the crate:
/// |·| and max(0, ·) both report derivative 0 exactly at their kink.
#[inline]
pub fn sgn(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// max(0, x) with the kink value 0 at x = 0.
#[inline]
pub fn max0(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

/// Indicator 1\[x < 0\], the derivative of −max(0, −x) off the kink.
#[inline]
pub fn neg_indicator(x: f64) -> f64 {
    if x < 0.0 {
        1.0
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_midpoint_and_symmetry() {
        assert_eq!(sigmoid(0.0), 0.5);
        let x = 1.3;
        assert!((sigmoid(x) + sigmoid(-x) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn log_sigmoid_at_zero_is_minus_ln2() {
        assert!((log_sigmoid(0.0) + core::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn log_sigmoid_stable_in_tails() {
        assert!((log_sigmoid(50.0)).abs() < 1e-20);
        assert!((log_sigmoid(-50.0) + 50.0).abs() < 1e-15);
    }

    #[test]
    fn sgn_zero_convention() {
        assert_eq!(sgn(0.0), 0.0);
        assert_eq!(sgn(-0.0), 0.0);
        assert_eq!(sgn(3.5), 1.0);
        assert_eq!(sgn(-2.0), -1.0);
    }

    #[test]
    fn max0_kink() {
        assert_eq!(max0(0.0), 0.0);
        assert_eq!(max0(2.0), 2.0);
        assert_eq!(max0(-1.0), 0.0);
    }
}
