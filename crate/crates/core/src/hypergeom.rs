//! Exact probability mass functions for the central and Fisher noncentral
//! hypergeometric distributions.
//!
//! Two joint PMFs are provided for multivariate urns:
//!
//! * the true joint noncentral PMF, normalized by brute-force enumeration of
//!   the support ([`fisher_multi_log_pmf`], [`JointPmf`]);
//! * the conditional-chain PMF realized by the samplers in
//!   [`crate::reparam`], which factorizes the draw into a sequence of
//!   two-class draws with the remaining classes merged
//!   ([`conditional_chain_log_pmf`]).
//!
//! The two agree exactly for uniform weights and for two-class urns.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::numerics::{log_binomial, log_sum_exp, LogFactorials};

/// Largest support that may be enumerated, measured as Π (mᵢ + 1).
pub const SUPPORT_GUARD: u128 = 10_000_000;

/// Parameters of a multivariate urn: class totals, number of draws and the
/// natural logarithm of each class importance weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UrnSpec {
    class_counts: Vec<usize>,
    draws: usize,
    log_weights: Vec<f64>,
}

impl UrnSpec {
    pub fn new(class_counts: Vec<usize>, draws: usize, log_weights: Vec<f64>) -> Result<Self> {
        if class_counts.len() < 2 {
            return domain(format!(
                "an urn needs at least two classes, got {}",
                class_counts.len()
            ));
        }
        if log_weights.len() != class_counts.len() {
            return domain(format!(
                "{} class counts but {} log weights",
                class_counts.len(),
                log_weights.len()
            ));
        }
        if let Some(i) = class_counts.iter().position(|&m| m == 0) {
            return domain(format!("class {} has no elements", i + 1));
        }
        if let Some(w) = log_weights.iter().find(|w| !w.is_finite()) {
            return domain(format!("log weights must be finite, got {w}"));
        }
        let total: usize = class_counts.iter().sum();
        if draws > total {
            return domain(format!("cannot draw {draws} from an urn of {total}"));
        }
        Ok(Self {
            class_counts,
            draws,
            log_weights,
        })
    }

    /// Builds an urn from linear-scale weights, which must all be positive.
    pub fn from_weights(class_counts: Vec<usize>, draws: usize, weights: &[f64]) -> Result<Self> {
        if let Some(w) = weights.iter().find(|&&w| w <= 0.0 || !w.is_finite()) {
            return domain(format!("class weights must be positive and finite, got {w}"));
        }
        Self::new(class_counts, draws, weights.iter().map(|w| w.ln()).collect())
    }

    pub fn class_counts(&self) -> &[usize] {
        &self.class_counts
    }

    pub fn draws(&self) -> usize {
        self.draws
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    pub fn num_classes(&self) -> usize {
        self.class_counts.len()
    }

    pub fn total(&self) -> usize {
        self.class_counts.iter().sum()
    }

    /// Same urn with different log weights.
    pub fn with_log_weights(&self, log_weights: Vec<f64>) -> Result<Self> {
        Self::new(self.class_counts.clone(), self.draws, log_weights)
    }

    /// Π (mᵢ + 1), the size of the box containing the support.
    pub fn support_box_size(&self) -> u128 {
        self.class_counts
            .iter()
            .fold(1u128, |acc, &m| acc.saturating_mul(m as u128 + 1))
    }

    fn check_enumerable(&self) -> Result<()> {
        let required = self.support_box_size();
        if required > SUPPORT_GUARD {
            return Err(Error::Capacity {
                what: "support enumeration",
                required,
                limit: SUPPORT_GUARD,
            });
        }
        Ok(())
    }
}

/// An outcome of the urn: the number of drawn elements per class.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DrawVector(Vec<usize>);

impl DrawVector {
    pub fn new(counts: Vec<usize>) -> Self {
        Self(counts)
    }

    pub fn counts(&self) -> &[usize] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<usize> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn total(&self) -> usize {
        self.0.iter().sum()
    }

    /// Whether the vector lies in the support of `urn`.
    pub fn is_in_support(&self, urn: &UrnSpec) -> bool {
        self.0.len() == urn.num_classes()
            && self.total() == urn.draws()
            && self.0.iter().zip(urn.class_counts()).all(|(x, m)| x <= m)
    }

    /// Fails with a domain error unless the vector is in the support of `urn`.
    pub fn validate(&self, urn: &UrnSpec) -> Result<()> {
        if self.0.len() != urn.num_classes() {
            return domain(format!(
                "draw has {} classes, urn has {}",
                self.0.len(),
                urn.num_classes()
            ));
        }
        if !self.is_in_support(urn) {
            return domain(format!("draw {:?} is outside the support", self.0));
        }
        Ok(())
    }
}

impl From<Vec<usize>> for DrawVector {
    fn from(v: Vec<usize>) -> Self {
        Self(v)
    }
}

/// Unnormalized class-conditional log-weights of a two-class draw, indexed by
/// the count taken from the left class.
///
/// Infeasible counts carry `-inf`. The log-normalizer and the cumulative
/// distribution are computed on first use and cached.
#[derive(Debug)]
pub struct LogPmfTable {
    logits: Vec<f64>,
    log_normalizer: OnceLock<f64>,
    cdf: OnceLock<Vec<f64>>,
}

impl Clone for LogPmfTable {
    fn clone(&self) -> Self {
        Self::from_logits(self.logits.clone())
    }
}

impl PartialEq for LogPmfTable {
    fn eq(&self, other: &Self) -> bool {
        self.logits == other.logits
    }
}

impl LogPmfTable {
    /// Wraps raw logits; `-inf` entries are treated as infeasible.
    pub fn from_logits(logits: Vec<f64>) -> Self {
        Self {
            logits,
            log_normalizer: OnceLock::new(),
            cdf: OnceLock::new(),
        }
    }

    /// A table with all mass on `index`, as used for the forced last class.
    pub fn degenerate(len: usize, index: usize) -> Self {
        let mut logits = vec![f64::NEG_INFINITY; len];
        logits[index] = 0.0;
        Self::from_logits(logits)
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn len(&self) -> usize {
        self.logits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logits.is_empty()
    }

    pub fn is_feasible(&self, k: usize) -> bool {
        self.logits.get(k).is_some_and(|x| x.is_finite())
    }

    pub fn feasible_mask(&self) -> Vec<bool> {
        self.logits.iter().map(|x| x.is_finite()).collect()
    }

    pub fn feasible_range(&self) -> Option<(usize, usize)> {
        let lo = self.logits.iter().position(|x| x.is_finite())?;
        let hi = self.logits.iter().rposition(|x| x.is_finite())?;
        Some((lo, hi))
    }

    pub fn log_normalizer(&self) -> f64 {
        *self
            .log_normalizer
            .get_or_init(|| log_sum_exp(&self.logits).unwrap_or(f64::NEG_INFINITY))
    }

    /// Normalized log-probability of count `k`; `-inf` outside the table.
    pub fn log_prob(&self, k: usize) -> f64 {
        match self.logits.get(k) {
            Some(&x) if x.is_finite() => x - self.log_normalizer(),
            _ => f64::NEG_INFINITY,
        }
    }

    pub fn probabilities(&self) -> Vec<f64> {
        let z = self.log_normalizer();
        self.logits.iter().map(|&x| (x - z).exp()).collect()
    }

    /// Cumulative probabilities; the last feasible entry is pinned to 1.
    pub fn cdf(&self) -> &[f64] {
        self.cdf.get_or_init(|| {
            let mut acc = 0.0;
            let mut out: Vec<f64> = self
                .probabilities()
                .into_iter()
                .map(|p| {
                    acc += p;
                    acc
                })
                .collect();
            if let Some((_, hi)) = self.feasible_range() {
                for v in &mut out[hi..] {
                    *v = 1.0;
                }
            }
            out
        })
    }

    /// Inverse-CDF lookup for `u` in [0, 1): the smallest feasible `k` whose
    /// cumulative probability exceeds `u`.
    pub fn quantile(&self, u: f64) -> usize {
        let cdf = self.cdf();
        let k = cdf.partition_point(|&c| c <= u).min(cdf.len() - 1);
        if self.is_feasible(k) {
            return k;
        }
        // Only reachable through rounding at a zero-probability boundary.
        let (lo, hi) = self.feasible_range().expect("table has a feasible entry");
        k.clamp(lo, hi)
    }
}

/// Parameters of one two-class draw: the left class against the merged rest.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoClassParams {
    pub left_count: usize,
    pub right_count: usize,
    pub left_log_weight: f64,
    pub right_log_weight: f64,
}

impl TwoClassParams {
    /// Whether drawing `k` from the left class leaves a feasible right draw.
    #[inline]
    pub fn is_feasible(&self, draws: usize, k: usize) -> bool {
        k <= self.left_count && k <= draws && draws - k <= self.right_count
    }
}

/// Fills `out` with the unnormalized conditional log-weights
/// `k·ln ω_L + (n−k)·ln ω_R + ψ(k)` with
/// `ψ(k) = −ln(k! (n−k)! (m_L−k)! (m_R−n+k)!)`.
pub(crate) fn fill_two_class_logits(
    params: &TwoClassParams,
    draws: usize,
    log_fact: &LogFactorials,
    out: &mut Vec<f64>,
) {
    out.clear();
    out.extend((0..=params.left_count).map(|k| {
        if !params.is_feasible(draws, k) {
            return f64::NEG_INFINITY;
        }
        let rest = draws - k;
        let psi = -(log_fact.get(k)
            + log_fact.get(rest)
            + (log_fact.get(params.left_count - k) + log_fact.get(params.right_count - rest)));
        k as f64 * params.left_log_weight + rest as f64 * params.right_log_weight + psi
    }));
}

/// Unnormalized log-weight table for drawing `draws` elements from a
/// two-class urn, indexed by the count taken from the left class.
pub fn fisher_uni_log_pmf_table(
    left_count: usize,
    right_count: usize,
    left_log_weight: f64,
    right_log_weight: f64,
    draws: usize,
) -> Result<LogPmfTable> {
    if draws > left_count + right_count {
        return domain(format!(
            "cannot draw {draws} from {left_count} + {right_count} elements"
        ));
    }
    if !left_log_weight.is_finite() || !right_log_weight.is_finite() {
        return domain("log weights must be finite");
    }
    let params = TwoClassParams {
        left_count,
        right_count,
        left_log_weight,
        right_log_weight,
    };
    let log_fact = LogFactorials::new(left_count.max(right_count).max(draws));
    let mut logits = Vec::with_capacity(left_count + 1);
    fill_two_class_logits(&params, draws, &log_fact, &mut logits);
    Ok(LogPmfTable::from_logits(logits))
}

/// ln of the central univariate hypergeometric PMF: `x` successes in `n`
/// draws from a population of `total` with `successes` marked elements.
/// Infeasible `x` yields `-inf`.
pub fn central_uni_log_pmf(total: usize, successes: usize, n: usize, x: usize) -> Result<f64> {
    if successes > total || n > total {
        return domain(format!(
            "need successes <= total and n <= total, got total={total}, successes={successes}, n={n}"
        ));
    }
    if x > successes || x > n || n - x > total - successes {
        return Ok(f64::NEG_INFINITY);
    }
    let (total, successes, n, x) = (total as u64, successes as u64, n as u64, x as u64);
    Ok(log_binomial(successes, x)? + log_binomial(total - successes, n - x)?
        - log_binomial(total, n)?)
}

/// ln of the central multivariate hypergeometric PMF
/// `Π C(mᵢ, xᵢ) / C(N, n)`, ignoring the urn's weights.
pub fn central_multi_log_pmf(urn: &UrnSpec, x: &DrawVector) -> Result<f64> {
    if x.len() != urn.num_classes() {
        return domain("draw and urn have different class counts");
    }
    if !x.is_in_support(urn) {
        return Ok(f64::NEG_INFINITY);
    }
    let mut acc = -log_binomial(urn.total() as u64, urn.draws() as u64)?;
    for (&xi, &mi) in x.counts().iter().zip(urn.class_counts()) {
        acc += log_binomial(mi as u64, xi as u64)?;
    }
    Ok(acc)
}

/// Every vector in the support of `urn`, in lexicographic order.
pub fn enumerate_support(urn: &UrnSpec) -> Result<Vec<DrawVector>> {
    urn.check_enumerable()?;
    let m = urn.class_counts();
    let c = m.len();
    // capacity[i] = Σ_{j >= i} m_j, used to prune prefixes that cannot be completed.
    let mut capacity = vec![0usize; c + 1];
    for i in (0..c).rev() {
        capacity[i] = capacity[i + 1] + m[i];
    }
    let mut out = Vec::new();
    let mut current = vec![0usize; c];
    extend_support(m, &capacity, 0, urn.draws(), &mut current, &mut out);
    Ok(out)
}

fn extend_support(
    m: &[usize],
    capacity: &[usize],
    i: usize,
    remaining: usize,
    current: &mut Vec<usize>,
    out: &mut Vec<DrawVector>,
) {
    if i == m.len() - 1 {
        if remaining <= m[i] {
            current[i] = remaining;
            out.push(DrawVector(current.clone()));
        }
        return;
    }
    let lo = remaining.saturating_sub(capacity[i + 1]);
    let hi = m[i].min(remaining);
    for k in lo..=hi {
        current[i] = k;
        extend_support(m, capacity, i + 1, remaining - k, current, out);
    }
}

/// Unnormalized joint log-weight `Σ xᵢ ln ωᵢ + ln C(mᵢ, xᵢ)`.
fn joint_unnormalized(urn: &UrnSpec, x: &DrawVector) -> Result<f64> {
    let mut acc = 0.0;
    for ((&xi, &mi), &lw) in x
        .counts()
        .iter()
        .zip(urn.class_counts())
        .zip(urn.log_weights())
    {
        acc += xi as f64 * lw + log_binomial(mi as u64, xi as u64)?;
    }
    Ok(acc)
}

/// The joint noncentral PMF of a small urn with its normalizer precomputed
/// from the full support.
#[derive(Debug, Clone)]
pub struct JointPmf {
    urn: UrnSpec,
    support: Vec<DrawVector>,
    log_normalizer: f64,
}

impl JointPmf {
    pub fn new(urn: &UrnSpec) -> Result<Self> {
        let support = enumerate_support(urn)?;
        let weights = support
            .iter()
            .map(|x| joint_unnormalized(urn, x))
            .collect::<Result<Vec<_>>>()?;
        let log_normalizer = log_sum_exp(&weights)?;
        Ok(Self {
            urn: urn.clone(),
            support,
            log_normalizer,
        })
    }

    pub fn support(&self) -> &[DrawVector] {
        &self.support
    }

    pub fn log_normalizer(&self) -> f64 {
        self.log_normalizer
    }

    pub fn log_pmf(&self, x: &DrawVector) -> Result<f64> {
        if x.len() != self.urn.num_classes() {
            return domain("draw and urn have different class counts");
        }
        if !x.is_in_support(&self.urn) {
            return Ok(f64::NEG_INFINITY);
        }
        Ok(joint_unnormalized(&self.urn, x)? - self.log_normalizer)
    }
}

/// Exact normalized ln p(x; ω) of the multivariate Fisher noncentral
/// hypergeometric distribution, normalized by enumerating the support.
pub fn fisher_multi_log_pmf(urn: &UrnSpec, x: &DrawVector) -> Result<f64> {
    JointPmf::new(urn)?.log_pmf(x)
}

/// Parameters of step `i` of the conditional chain: class `i` against the
/// merged classes `i+1..c`, whose weight is the count-weighted mean of theirs.
pub fn merged_params(urn: &UrnSpec, i: usize) -> Result<TwoClassParams> {
    let c = urn.num_classes();
    if i + 1 >= c {
        return domain(format!(
            "merge step {i} out of range for an urn of {c} classes"
        ));
    }
    let m = urn.class_counts();
    let lw = urn.log_weights();
    let right_count: usize = m[i + 1..].iter().sum();
    let right_log_weight = if i + 2 == c {
        lw[c - 1]
    } else {
        let terms: Vec<f64> = (i + 1..c).map(|j| lw[j] + (m[j] as f64).ln()).collect();
        log_sum_exp(&terms)? - (right_count as f64).ln()
    };
    Ok(TwoClassParams {
        left_count: m[i],
        right_count,
        left_log_weight: lw[i],
        right_log_weight,
    })
}

/// ln of the PMF realized by the conditional chain: the sum over classes of
/// the normalized two-class conditional log-probabilities.
pub fn conditional_chain_log_pmf(urn: &UrnSpec, x: &DrawVector) -> Result<f64> {
    ChainPmf::new(urn)?.log_pmf(x)
}

/// Conditional-chain PMF for repeated queries against one urn.
#[derive(Debug, Clone)]
pub struct ChainPmf {
    urn: UrnSpec,
    steps: Vec<TwoClassParams>,
    log_fact: LogFactorials,
}

impl ChainPmf {
    pub fn new(urn: &UrnSpec) -> Result<Self> {
        let steps = (0..urn.num_classes() - 1)
            .map(|i| merged_params(urn, i))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            urn: urn.clone(),
            steps,
            log_fact: LogFactorials::new(urn.total()),
        })
    }

    pub fn log_pmf(&self, x: &DrawVector) -> Result<f64> {
        if x.len() != self.urn.num_classes() {
            return domain("draw and urn have different class counts");
        }
        if !x.is_in_support(&self.urn) {
            return Ok(f64::NEG_INFINITY);
        }
        let mut remaining = self.urn.draws();
        let mut acc = 0.0;
        let mut logits = Vec::new();
        for (params, &xi) in self.steps.iter().zip(x.counts()) {
            fill_two_class_logits(params, remaining, &self.log_fact, &mut logits);
            let table = LogPmfTable::from_logits(std::mem::take(&mut logits));
            acc += table.log_prob(xi);
            remaining -= xi;
        }
        Ok(acc)
    }
}

/// Total-variation distance between the joint and the conditional-chain
/// PMFs over the full support.
pub fn chain_total_variation(urn: &UrnSpec) -> Result<f64> {
    let joint = JointPmf::new(urn)?;
    let chain = ChainPmf::new(urn)?;
    let mut tv = 0.0;
    for x in joint.support() {
        tv += (joint.log_pmf(x)?.exp() - chain.log_pmf(x)?.exp()).abs();
    }
    Ok(0.5 * tv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn urn(m: &[usize], n: usize, w: &[f64]) -> UrnSpec {
        UrnSpec::from_weights(m.to_vec(), n, w).unwrap()
    }

    fn brute_force_support(m: &[usize], n: usize) -> Vec<Vec<usize>> {
        // Odometer over the full box, filtered by the sum constraint.
        let mut out = Vec::new();
        let mut x = vec![0usize; m.len()];
        loop {
            if x.iter().sum::<usize>() == n {
                out.push(x.clone());
            }
            let mut i = m.len();
            loop {
                if i == 0 {
                    return out;
                }
                i -= 1;
                if x[i] < m[i] {
                    x[i] += 1;
                    break;
                }
                x[i] = 0;
            }
        }
    }

    #[test]
    fn urn_validation() {
        assert!(UrnSpec::new(vec![3], 1, vec![0.0]).is_err());
        assert!(UrnSpec::new(vec![3, 0], 1, vec![0.0, 0.0]).is_err());
        assert!(UrnSpec::new(vec![3, 2], 6, vec![0.0, 0.0]).is_err());
        assert!(UrnSpec::new(vec![3, 2], 5, vec![0.0, f64::INFINITY]).is_err());
        assert!(UrnSpec::new(vec![3, 2], 5, vec![0.0]).is_err());
        assert!(UrnSpec::from_weights(vec![3, 2], 1, &[1.0, 0.0]).is_err());
        assert!(UrnSpec::new(vec![3, 2], 5, vec![0.0, 1.0]).is_ok());
    }

    #[test]
    fn support_small_cases() {
        let s = enumerate_support(&urn(&[1, 1], 2, &[1.0, 1.0])).unwrap();
        assert_eq!(s, vec![DrawVector::new(vec![1, 1])]);
        let s = enumerate_support(&urn(&[1, 1], 1, &[1.0, 1.0])).unwrap();
        assert_eq!(s, vec![DrawVector::new(vec![0, 1]), DrawVector::new(vec![1, 0])]);
    }

    #[test]
    fn support_matches_brute_force_for_reference_urn() {
        let s = enumerate_support(&urn(&[3, 5, 4], 5, &[1.0, 1.0, 1.0])).unwrap();
        let brute = brute_force_support(&[3, 5, 4], 5);
        assert_eq!(brute.len(), 17);
        assert_eq!(s.into_iter().map(DrawVector::into_inner).collect::<Vec<_>>(), brute);
    }

    #[test]
    fn support_guard() {
        let big = urn(&[1000, 1000, 1000], 10, &[1.0, 1.0, 1.0]);
        assert!(matches!(enumerate_support(&big), Err(Error::Capacity { .. })));
        assert!(matches!(
            fisher_multi_log_pmf(&big, &DrawVector::new(vec![10, 0, 0])),
            Err(Error::Capacity { .. })
        ));
    }

    #[test]
    fn central_uni_values() {
        let v = central_uni_log_pmf(12, 5, 5, 2).unwrap();
        assert!((v - (350.0f64 / 792.0).ln()).abs() < 1e-12);
        assert!(central_uni_log_pmf(12, 5, 0, 0).unwrap().abs() < 1e-12);
        assert!(central_uni_log_pmf(12, 5, 12, 5).unwrap().abs() < 1e-12);
        assert_eq!(central_uni_log_pmf(12, 5, 5, 6).unwrap(), f64::NEG_INFINITY);
        assert_eq!(central_uni_log_pmf(12, 5, 12, 4).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn fisher_table_reference_values() {
        let t = fisher_uni_log_pmf_table(2, 2, 2f64.ln(), 0.0, 2).unwrap();
        let p = t.probabilities();
        for (got, want) in p.iter().zip([1.0 / 13.0, 8.0 / 13.0, 4.0 / 13.0]) {
            assert!((got - want).abs() < 1e-14);
        }
    }

    #[test]
    fn fisher_table_uniform_weights_is_central() {
        let t = fisher_uni_log_pmf_table(3, 9, 0.0, 0.0, 5).unwrap();
        for k in 0..=3 {
            let want = central_uni_log_pmf(12, 3, 5, k).unwrap();
            assert!((t.log_prob(k) - want).abs() < 1e-12, "k={k}");
        }
    }

    #[test]
    fn fisher_table_masks_and_errors() {
        // m_L=5, m_R=2, n=4: x_L must lie in 2..=4.
        let t = fisher_uni_log_pmf_table(5, 2, 0.3, -0.1, 4).unwrap();
        assert_eq!(t.len(), 6);
        assert_eq!(t.feasible_mask(), vec![false, false, true, true, true, false]);
        assert_eq!(t.log_prob(0), f64::NEG_INFINITY);
        assert!(fisher_uni_log_pmf_table(2, 2, 0.0, 0.0, 5).is_err());
    }

    #[test]
    fn table_quantile_respects_mask() {
        let t = fisher_uni_log_pmf_table(5, 2, 0.3, -0.1, 4).unwrap();
        assert_eq!(t.quantile(0.0), 2);
        assert_eq!(t.quantile(1.0 - 1e-17), 4);
        assert_eq!(*t.cdf().last().unwrap(), 1.0);
        let forced = LogPmfTable::degenerate(4, 2);
        assert_eq!(forced.quantile(0.999), 2);
        assert_eq!(forced.probabilities(), vec![0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn joint_pmf_reference_values() {
        let u = urn(&[1, 1], 2, &[3.0, 0.5]);
        assert!(fisher_multi_log_pmf(&u, &DrawVector::new(vec![1, 1])).unwrap().abs() < 1e-15);

        let u = urn(&[3, 5, 4], 5, &[1.0, 1.0, 1.0]);
        let v = fisher_multi_log_pmf(&u, &DrawVector::new(vec![1, 3, 1])).unwrap();
        assert!((v - (120.0f64 / 792.0).ln()).abs() < 1e-12);

        let u = urn(&[2, 2], 2, &[2.0, 1.0]);
        let v = fisher_multi_log_pmf(&u, &DrawVector::new(vec![1, 1])).unwrap();
        assert!((v - (8.0f64 / 13.0).ln()).abs() < 1e-12);

        let off = fisher_multi_log_pmf(&u, &DrawVector::new(vec![2, 2])).unwrap();
        assert_eq!(off, f64::NEG_INFINITY);
        assert!(fisher_multi_log_pmf(&u, &DrawVector::new(vec![1, 1, 0])).is_err());
    }

    #[test]
    fn chain_equals_joint_for_uniform_weights() {
        let u = urn(&[3, 5, 4], 5, &[1.0, 1.0, 1.0]);
        let joint = JointPmf::new(&u).unwrap();
        let chain = ChainPmf::new(&u).unwrap();
        assert_eq!(joint.support().len(), 17);
        for x in joint.support() {
            let a = joint.log_pmf(x).unwrap();
            let b = chain.log_pmf(x).unwrap();
            assert!((a - b).abs() <= 1e-12, "{x:?}: {a} vs {b}");
        }
    }

    #[test]
    fn chain_equals_joint_for_two_classes() {
        let u = urn(&[6, 4], 5, &[0.3, 2.7]);
        let joint = JointPmf::new(&u).unwrap();
        for x in joint.support() {
            let a = joint.log_pmf(x).unwrap();
            let b = conditional_chain_log_pmf(&u, x).unwrap();
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn chain_has_merge_bias_for_nonuniform_weights() {
        let u = urn(&[3, 5, 4], 5, &[1.0, 2.0, 4.0]);
        let tv = chain_total_variation(&u).unwrap();
        assert!(tv > 1e-4, "expected a visible merge bias, got {tv}");
        let uniform = urn(&[3, 5, 4], 5, &[1.0, 1.0, 1.0]);
        assert!(chain_total_variation(&uniform).unwrap() < 1e-12);
    }

    #[test]
    fn merge_reference_values() {
        let u = urn(&[3, 5, 4], 5, &[1.0, 2.0, 4.0]);
        let p = merged_params(&u, 0).unwrap();
        assert_eq!((p.left_count, p.right_count), (3, 9));
        assert!(p.left_log_weight.abs() < 1e-15);
        assert!((p.right_log_weight.exp() - 26.0 / 9.0).abs() < 1e-12);
        let last = merged_params(&u, 1).unwrap();
        assert_eq!((last.left_count, last.right_count), (5, 4));
        assert_eq!(last.right_log_weight, 4f64.ln());
        assert!(merged_params(&u, 2).is_err());

        let uniform = urn(&[3, 5, 4], 5, &[1.0, 1.0, 1.0]);
        for i in 0..2 {
            let p = merged_params(&uniform, i).unwrap();
            assert!(p.left_log_weight.abs() < 1e-15 && p.right_log_weight.abs() < 1e-15);
        }
    }

    fn small_urn() -> impl Strategy<Value = UrnSpec> {
        (2usize..=4)
            .prop_flat_map(|c| {
                (
                    prop::collection::vec(1usize..=8, c),
                    prop::collection::vec(0.2f64..5.0, c),
                    0.0f64..=1.0,
                )
            })
            .prop_map(|(m, w, frac)| {
                let n = (frac * m.iter().sum::<usize>() as f64).round() as usize;
                UrnSpec::from_weights(m, n, &w).unwrap()
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn both_pmfs_normalize(u in small_urn()) {
            let joint = JointPmf::new(&u).unwrap();
            let chain = ChainPmf::new(&u).unwrap();
            let sj: f64 = joint.support().iter().map(|x| joint.log_pmf(x).unwrap().exp()).sum();
            let sc: f64 = joint.support().iter().map(|x| chain.log_pmf(x).unwrap().exp()).sum();
            prop_assert!((sj - 1.0).abs() < 1e-10);
            prop_assert!((sc - 1.0).abs() < 1e-10);
        }

        #[test]
        fn uniform_joint_is_central(u in small_urn()) {
            let flat = u.with_log_weights(vec![0.0; u.num_classes()]).unwrap();
            let joint = JointPmf::new(&flat).unwrap();
            for x in joint.support() {
                let a = joint.log_pmf(x).unwrap().exp();
                let b = central_multi_log_pmf(&flat, x).unwrap().exp();
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }

        #[test]
        fn pmfs_scale_invariant(u in small_urn(), shift in -5.0f64..5.0) {
            let shifted = u.with_log_weights(u.log_weights().iter().map(|w| w + shift).collect()).unwrap();
            let (j0, j1) = (JointPmf::new(&u).unwrap(), JointPmf::new(&shifted).unwrap());
            let (c0, c1) = (ChainPmf::new(&u).unwrap(), ChainPmf::new(&shifted).unwrap());
            for x in j0.support() {
                prop_assert!((j0.log_pmf(x).unwrap().exp() - j1.log_pmf(x).unwrap().exp()).abs() <= 1e-12);
                prop_assert!((c0.log_pmf(x).unwrap().exp() - c1.log_pmf(x).unwrap().exp()).abs() <= 1e-12);
            }
        }

        #[test]
        fn table_mask_matches_support(ml in 1usize..30, mr in 1usize..30, frac in 0.0f64..=1.0,
                                      wl in -3.0f64..3.0, wr in -3.0f64..3.0) {
            let n = (frac * (ml + mr) as f64).round() as usize;
            let t = fisher_uni_log_pmf_table(ml, mr, wl, wr, n).unwrap();
            prop_assert_eq!(t.len(), ml + 1);
            for k in 0..=ml {
                let feasible = k <= ml.min(n) && n - k.min(n) <= mr && k <= n;
                prop_assert_eq!(t.is_feasible(k), feasible);
            }
            let p: f64 = t.probabilities().iter().sum();
            prop_assert!((p - 1.0).abs() < 1e-12);
        }

        #[test]
        fn table_shift_invariant(ml in 1usize..30, mr in 1usize..30, frac in 0.0f64..=1.0,
                                 wl in -3.0f64..3.0, wr in -3.0f64..3.0, shift in -10.0f64..10.0) {
            let n = (frac * (ml + mr) as f64).round() as usize;
            let a = fisher_uni_log_pmf_table(ml, mr, wl, wr, n).unwrap().probabilities();
            let b = fisher_uni_log_pmf_table(ml, mr, wl + shift, wr + shift, n).unwrap().probabilities();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }
    }
}
