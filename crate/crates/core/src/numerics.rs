//! Scalar special functions and vector transforms in the log domain.
//!
//! All probability work in this crate is carried out on natural
//! logarithms; the helpers here are the only place where values are
//! exponentiated, and they always do so after subtracting the maximum.

use crate::error::{domain, Result};

/// `0.5 * ln(2π)`
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Below this argument both `log_gamma` and `digamma` shift upwards with the
/// recurrence before applying the asymptotic series.
const ASYMPTOTIC_CUTOFF: f64 = 15.0;

/// `B_{2k} / (2k (2k-1))` for k = 1..8, the Stirling series for ln Γ.
const STIRLING: [f64; 8] = [
    1.0 / 12.0,
    -1.0 / 360.0,
    1.0 / 1260.0,
    -1.0 / 1680.0,
    1.0 / 1188.0,
    -691.0 / 360_360.0,
    1.0 / 156.0,
    -3617.0 / 122_400.0,
];

/// `B_{2k} / (2k)` for k = 1..7, the asymptotic series for ψ.
const DIGAMMA_SERIES: [f64; 7] = [
    1.0 / 12.0,
    -1.0 / 120.0,
    1.0 / 252.0,
    -1.0 / 240.0,
    1.0 / 132.0,
    -691.0 / 32_760.0,
    1.0 / 12.0,
];

fn stirling_log_gamma(z: f64) -> f64 {
    let inv = 1.0 / z;
    let inv2 = inv * inv;
    // Horner in 1/z^2, then one extra factor of 1/z.
    let series = STIRLING.iter().rev().fold(0.0, |acc, &c| acc * inv2 + c) * inv;
    (z - 0.5) * z.ln() - z + HALF_LN_2PI + series
}

/// Natural logarithm of the Gamma function for positive real arguments.
///
/// Uses the Stirling series with eight Bernoulli terms for `z >= 15` and the
/// upward recurrence `Γ(z) = Γ(z + k) / (z (z+1) ... (z+k-1))` below it. The
/// truncation error of the series at `z = 15` is below `1e-19`, so the result
/// is limited only by double rounding.
pub fn log_gamma(z: f64) -> Result<f64> {
    if z <= 0.0 || !z.is_finite() {
        return domain(format!("log_gamma requires a finite z > 0, got {z}"));
    }
    if z == 1.0 || z == 2.0 {
        return Ok(0.0);
    }
    if z >= ASYMPTOTIC_CUTOFF {
        return Ok(stirling_log_gamma(z));
    }
    let mut shifted = z;
    let mut product = 1.0;
    while shifted < ASYMPTOTIC_CUTOFF {
        product *= shifted;
        shifted += 1.0;
    }
    Ok(stirling_log_gamma(shifted) - product.ln())
}

/// Digamma function ψ(z) = d/dz ln Γ(z) for positive real arguments.
pub fn digamma(z: f64) -> Result<f64> {
    if z <= 0.0 || !z.is_finite() {
        return domain(format!("digamma requires a finite z > 0, got {z}"));
    }
    let mut shifted = z;
    let mut correction = 0.0;
    while shifted < ASYMPTOTIC_CUTOFF {
        correction -= 1.0 / shifted;
        shifted += 1.0;
    }
    let inv2 = 1.0 / (shifted * shifted);
    let series = DIGAMMA_SERIES.iter().rev().fold(0.0, |acc, &c| acc * inv2 + c) * inv2;
    Ok(shifted.ln() - 0.5 / shifted - series + correction)
}

/// ln C(m, k) from three log-Gamma evaluations.
///
/// The two denominator terms are added before subtracting, so the result is
/// bit-for-bit symmetric in `k` and `m - k`.
pub fn log_binomial(m: u64, k: u64) -> Result<f64> {
    if k > m {
        return domain(format!("log_binomial requires k <= m, got m={m}, k={k}"));
    }
    let top = log_gamma(m as f64 + 1.0)?;
    let lower = log_gamma(k as f64 + 1.0)? + log_gamma((m - k) as f64 + 1.0)?;
    Ok(top - lower)
}

/// Table of ln(k!) for k = 0..=max, built from [`log_gamma`].
///
/// The chain sampler evaluates the same integer log-factorials millions of
/// times; a lookup is considerably cheaper than the series.
#[derive(Debug, Clone)]
pub struct LogFactorials {
    values: Vec<f64>,
}

impl LogFactorials {
    pub fn new(max: usize) -> Self {
        let values = (0..=max)
            .map(|k| log_gamma(k as f64 + 1.0).expect("k + 1 is positive"))
            .collect();
        Self { values }
    }

    /// ln(k!). Panics if `k` exceeds the table.
    #[inline]
    pub fn get(&self, k: usize) -> f64 {
        self.values[k]
    }

    pub fn max(&self) -> usize {
        self.values.len() - 1
    }
}

/// ln Σ exp(vᵢ), computed after subtracting the maximum.
///
/// The shifted exponentials are summed in ascending order, which makes the
/// result independent of the order of `v`. Entries equal to `-inf` contribute
/// nothing; if every entry is `-inf` the result is `-inf`.
pub fn log_sum_exp(v: &[f64]) -> Result<f64> {
    if v.is_empty() {
        return domain("log_sum_exp of an empty sequence");
    }
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Ok(f64::NEG_INFINITY);
    }
    if max.is_nan() || max == f64::INFINITY {
        return Ok(max);
    }
    let mut terms: Vec<f64> = v.iter().map(|&x| (x - max).exp()).collect();
    terms.sort_by(f64::total_cmp);
    Ok(max + terms.iter().sum::<f64>().ln())
}

/// Tempered softmax `exp(v_k / τ) / Σ_j exp(v_j / τ)`.
///
/// Entries equal to `-inf` receive probability exactly zero.
pub fn softmax_tempered(v: &[f64], tau: f64) -> Result<Vec<f64>> {
    if tau <= 0.0 || !tau.is_finite() {
        return domain(format!("softmax temperature must be finite and > 0, got {tau}"));
    }
    if v.is_empty() {
        return domain("softmax of an empty sequence");
    }
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return domain("softmax needs at least one finite entry");
    }
    let mut out: Vec<f64> = v.iter().map(|&x| ((x - max) / tau).exp()).collect();
    let total: f64 = out.iter().sum();
    for p in &mut out {
        *p /= total;
    }
    Ok(out)
}

/// Index of the largest entry; the first one wins ties. `None` when every
/// entry is `-inf` or NaN, or the slice is empty.
pub fn argmax(v: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &x) in v.iter().enumerate() {
        if x.is_nan() || x == f64::NEG_INFINITY {
            continue;
        }
        match best {
            Some((_, b)) if x <= b => {}
            _ => best = Some((i, x)),
        }
    }
    best.map(|(i, _)| i)
}
