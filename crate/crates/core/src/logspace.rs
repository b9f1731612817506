//! Log-domain arithmetic helpers.

/// Sentinel for `log(0)`. Every helper here checks for it before subtracting.
pub const LOG_ZERO: f64 = f64::NEG_INFINITY;

/// `log(exp(a) + exp(b))`, saturating at [`LOG_ZERO`].
#[inline]
pub fn log_add(a: f64, b: f64) -> f64 {
    if a == LOG_ZERO {
        return b;
    }
    if b == LOG_ZERO {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// `log(Σ exp(x))` over a slice; [`LOG_ZERO`] for an empty or all-zero input.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(LOG_ZERO, f64::max);
    if max == LOG_ZERO {
        return LOG_ZERO;
    }
    max + xs.iter().map(|&x| (x - max).exp()).sum::<f64>().ln()
}
