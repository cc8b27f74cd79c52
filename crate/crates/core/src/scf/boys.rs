//! Boys function `F_n(t) = int_0^1 u^{2n} exp(-t u^2) du`.

use std::f64::consts::PI;

use crate::error::{Error, Result};

const SERIES_CUTOFF: f64 = 1e-3;

/// `F_0(t)`, absolute accuracy better than 1e-12 for all `t >= 0`.
pub fn boys_f0(t: f64) -> Result<f64> {
    if t < 0.0 || t.is_nan() {
        return Err(Error::Domain(format!("Boys function argument {t} is negative")));
    }
    Ok(f0_unchecked(t))
}

fn f0_unchecked(t: f64) -> f64 {
    if t < SERIES_CUTOFF {
        // sum_k (-t)^k / (k! (2k+1))
        let mut term = 1.0;
        let mut sum = 1.0;
        for k in 1..8 {
            term *= -t / k as f64;
            sum += term / (2 * k + 1) as f64;
        }
        sum
    } else {
        let s = t.sqrt();
        0.5 * (PI / t).sqrt() * libm::erf(s)
    }
}

/// Fills `out[n] = F_n(t)` for `n = 0..out.len()`.
pub(crate) fn boys_array(t: f64, out: &mut [f64]) {
    let nmax = out.len() - 1;
    if t > 15.0 {
        // upward recursion is stable once 2t exceeds 2n+1
        let e = (-t).exp();
        out[0] = f0_unchecked(t);
        for n in 0..nmax {
            out[n + 1] = ((2 * n + 1) as f64 * out[n] - e) / (2.0 * t);
        }
    } else {
        let e = (-t).exp();
        let mut term = 1.0 / (2 * nmax + 1) as f64;
        let mut sum = term;
        let mut k = 1;
        while term > 1e-17 * sum {
            term *= 2.0 * t / (2 * nmax + 2 * k + 1) as f64;
            sum += term;
            k += 1;
        }
        out[nmax] = e * sum;
        for n in (0..nmax).rev() {
            out[n] = (2.0 * t * out[n + 1] + e) / (2 * n + 1) as f64;
        }
    }
}
