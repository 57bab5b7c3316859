//! Tail probabilities and their normal equivalents.

/// Largest deviate reported; tails below `f64` resolution map here.
pub const Z_CAP: f64 = 40.0;

/// `z` such that a standard normal exceeds it with probability `p`.
pub fn upper_normal_deviate(p: f64) -> f64 {
    if p <= 0.0 {
        return Z_CAP;
    }
    if p >= 1.0 {
        return -Z_CAP;
    }
    (-normal_quantile(p)).clamp(-Z_CAP, Z_CAP)
}

/// Inverse standard normal CDF (Acklam's rational approximation, relative
/// error below 1.2e-9).
pub fn normal_quantile(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969683028665376e1,
        2.209460984245205e2,
        -2.759285104469687e2,
        1.38357751867269e2,
        -3.066479806614716e1,
        2.506628277459239,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e1,
        1.615858368580409e2,
        -1.556989798598866e2,
        6.680131188771972e1,
        -1.328068155288572e1,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-3,
        -3.223964580411365e-1,
        -2.400758277161838,
        -2.549732539343734,
        4.374664141464968,
        2.938163982698783,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-3,
        3.224671290700398e-1,
        2.445134137142996,
        3.754408661907416,
    ];
    const LOW: f64 = 0.02425;
    let tail = |q: f64| {
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    if p < LOW {
        tail(libm::sqrt(-2.0 * libm::log(p)))
    } else if p > 1.0 - LOW {
        -tail(libm::sqrt(-2.0 * libm::log1p(-p)))
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    }
}

fn ln_negbin_pmf(k: u64, r: f64, p: f64) -> f64 {
    let k = k as f64;
    libm::lgamma(k + r) - libm::lgamma(r) - libm::lgamma(k + 1.0) + r * libm::log(p) + k * libm::log1p(-p)
}

/// `P(X >= c)` for a negative binomial with `r > 0` successes and success
/// probability `p` in `(0, 1]`, i.e. mean `r (1 - p) / p`.
pub fn negbin_upper_tail(c: u64, r: f64, p: f64) -> f64 {
    if c == 0 {
        return 1.0;
    }
    if p >= 1.0 {
        return 0.0;
    }
    let mean = r * (1.0 - p) / p;
    if (c as f64) <= mean {
        let below: f64 = (0..c).map(|k| libm::exp(ln_negbin_pmf(k, r, p))).sum();
        return (1.0 - below).clamp(0.0, 1.0);
    }
    let mut sum = 0.0;
    let mut term = libm::exp(ln_negbin_pmf(c, r, p));
    let mut k = c;
    while term > 0.0 && term > sum * 1e-17 {
        sum += term;
        term *= (k as f64 + r) / (k as f64 + 1.0) * (1.0 - p);
        k += 1;
        if k - c > 1_000_000 {
            break;
        }
    }
    sum.min(1.0)
}

/// Normal-equivalent deviate of seeing `count` in a window of `exposure`
/// when the baseline saw `base_count` over `base_exposure`.
///
/// The rate carries a Jeffreys gamma posterior from the baseline, so the
/// window count is negative binomial with `r = base_count + 1/2` and
/// `p = base_exposure / (base_exposure + exposure)`.
pub fn predictive_deviate(count: u64, exposure: f64, base_count: u64, base_exposure: f64) -> f64 {
    if base_exposure <= 0.0 {
        return 0.0;
    }
    let r = base_count as f64 + 0.5;
    let p = base_exposure / (base_exposure + exposure.max(0.0));
    upper_normal_deviate(negbin_upper_tail(count, r, p))
}
