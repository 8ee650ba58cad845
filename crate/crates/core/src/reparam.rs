//! Differentiable sampling from the multivariate Fisher noncentral
//! hypergeometric distribution.
//!
//! A draw is built class by class. At step `i` the urn is reduced to two
//! classes, class `i` against the merge of all later classes, and the count
//! for class `i` is chosen from the resulting univariate table of
//! unnormalized log-weights α. The differentiable path perturbs α with
//! Gumbel noise and relaxes the argmax with a tempered softmax; the hard
//! count (argmax) decrements the number of remaining draws, and the last
//! class takes whatever is left.
//!
//! Gradients are taken at fixed noise. The remaining-draw counter carries
//! the hard value forward but passes gradients back through the soft count
//! of the previous step, so later tables depend on earlier weights through
//! both the merged weight and the draw budget.

use std::collections::HashMap;
use std::sync::{Arc, OnceLock, RwLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::hypergeom::{
    fill_two_class_logits, merged_params, DrawVector, LogPmfTable, TwoClassParams, UrnSpec,
};
use crate::numerics::{argmax, digamma, log_sum_exp, LogFactorials};

/// Uniform variates are clamped to `(ε, 1 − ε)` before the double log.
pub const UNIFORM_CLAMP: f64 = 1e-12;

/// Random source used everywhere in the crate: ChaCha with 8 rounds.
///
/// The stream is a platform-independent function of `(seed, stream)`, so
/// independent streams for parallel work are derived from one root seed by
/// index.
pub type StreamRng = ChaCha8Rng;

pub fn stream_rng(seed: u64, stream: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// `len` independent standard Gumbel variates `−ln(−ln u)`.
pub fn sample_gumbel<R: Rng + ?Sized>(rng: &mut R, len: usize) -> Vec<f64> {
    (0..len).map(|_| gumbel(rng)).collect()
}

#[inline]
fn gumbel<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u: f64 = rng.random::<f64>().clamp(UNIFORM_CLAMP, 1.0 - UNIFORM_CLAMP);
    -(-u.ln()).ln()
}

/// Gumbel noise for one draw: a vector of length `mᵢ + 1` per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseBundle {
    per_class: Vec<Vec<f64>>,
}

impl NoiseBundle {
    pub fn sample<R: Rng + ?Sized>(urn: &UrnSpec, rng: &mut R) -> Self {
        Self {
            per_class: urn
                .class_counts()
                .iter()
                .map(|&m| sample_gumbel(rng, m + 1))
                .collect(),
        }
    }

    /// Wraps explicit noise vectors; each must have length `mᵢ + 1` and
    /// finite entries.
    pub fn from_vectors(urn: &UrnSpec, per_class: Vec<Vec<f64>>) -> Result<Self> {
        if per_class.len() != urn.num_classes() {
            return domain("noise bundle must have one vector per class");
        }
        for (i, (g, &m)) in per_class.iter().zip(urn.class_counts()).enumerate() {
            if g.len() != m + 1 {
                return domain(format!(
                    "noise for class {} has length {}, expected {}",
                    i + 1,
                    g.len(),
                    m + 1
                ));
            }
            if g.iter().any(|x| !x.is_finite()) {
                return domain("noise entries must be finite");
            }
        }
        Ok(Self { per_class })
    }

    pub fn class(&self, i: usize) -> &[f64] {
        &self.per_class[i]
    }

    pub fn per_class(&self) -> &[Vec<f64>] {
        &self.per_class
    }

    fn matches(&self, urn: &UrnSpec) -> bool {
        self.per_class.len() == urn.num_classes()
            && self
                .per_class
                .iter()
                .zip(urn.class_counts())
                .all(|(g, &m)| g.len() == m + 1)
    }
}

/// One differentiable pass through the chain.
#[derive(Debug, Clone, PartialEq)]
pub struct RelaxedDraw {
    pub hard_counts: DrawVector,
    pub soft_counts: Vec<f64>,
    pub soft_onehots: Vec<Vec<f64>>,
    /// Unnormalized class-conditional log-weights α per class.
    pub log_weight_tables: Vec<Vec<f64>>,
    /// α + g per class; `-inf` where α is masked.
    pub perturbed_logits: Vec<Vec<f64>>,
    pub noise: NoiseBundle,
}

/// `∂ soft_count_i / ∂ ln ω_j` at fixed noise, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftCountJacobian {
    classes: usize,
    entries: Vec<f64>,
}

impl SoftCountJacobian {
    fn zeros(classes: usize) -> Self {
        Self {
            classes,
            entries: vec![0.0; classes * classes],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.classes + j]
    }

    fn set(&mut self, i: usize, j: usize, v: f64) {
        self.entries[i * self.classes + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.classes..(i + 1) * self.classes]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.entries.chunks(self.classes)
    }

    pub fn max_abs(&self) -> f64 {
        self.entries.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// `Jᵀ v`: the gradient of `Σᵢ vᵢ · soft_countᵢ` with respect to ln ω.
    pub fn transpose_mul(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.classes];
        for (row, &vi) in self.rows().zip(v) {
            for (o, &r) in out.iter_mut().zip(row) {
                *o += vi * r;
            }
        }
        out
    }
}

/// Parameters of one merge step of the chain.
#[derive(Debug, Clone, PartialEq)]
pub struct MergedClasses {
    pub left_count: usize,
    pub right_count: usize,
    pub left_log_weight: f64,
    pub right_log_weight: f64,
}

/// Merge class `i` against classes `i+1..c` for a draw of `remaining_n`.
///
/// The right weight is the count-weighted mean of the merged weights,
/// computed in the log domain.
pub fn merge_classes(urn: &UrnSpec, i: usize, remaining_n: usize) -> Result<MergedClasses> {
    let p = merged_params(urn, i)?;
    if remaining_n > p.left_count + p.right_count {
        return domain(format!(
            "{remaining_n} remaining draws exceed the {} elements of classes {}..",
            p.left_count + p.right_count,
            i + 1
        ));
    }
    Ok(MergedClasses {
        left_count: p.left_count,
        right_count: p.right_count,
        left_log_weight: p.left_log_weight,
        right_log_weight: p.right_log_weight,
    })
}

/// Result of perturbing and relaxing one table.
#[derive(Debug, Clone, PartialEq)]
pub struct RelaxedSelection {
    pub perturbed: Vec<f64>,
    pub soft_onehot: Vec<f64>,
    pub hard_index: usize,
}

/// Gumbel-perturb the feasible entries of `table`, relax with a tempered
/// softmax and select the argmax.
pub fn relax_and_select(table: &LogPmfTable, noise: &[f64], tau: f64) -> Result<RelaxedSelection> {
    check_tau(tau)?;
    if noise.len() != table.len() {
        return domain(format!(
            "noise length {} does not match table length {}",
            noise.len(),
            table.len()
        ));
    }
    let mut perturbed = Vec::with_capacity(table.len());
    let mut soft = Vec::with_capacity(table.len());
    let hard_index = relax_into(table.logits(), noise, tau, &mut perturbed, &mut soft)
        .ok_or_else(|| crate::Error::Domain("table has no feasible entry".into()))?;
    Ok(RelaxedSelection {
        perturbed,
        soft_onehot: soft,
        hard_index,
    })
}

/// Shared kernel: fills `perturbed` and `soft` and returns the argmax.
fn relax_into(
    logits: &[f64],
    noise: &[f64],
    tau: f64,
    perturbed: &mut Vec<f64>,
    soft: &mut Vec<f64>,
) -> Option<usize> {
    perturbed.clear();
    perturbed.extend(logits.iter().zip(noise).map(|(&a, &g)| {
        if a.is_finite() {
            a + g
        } else {
            f64::NEG_INFINITY
        }
    }));
    let hard = argmax(perturbed)?;
    let top = perturbed[hard];
    soft.clear();
    soft.extend(perturbed.iter().map(|&r| ((r - top) / tau).exp()));
    let total: f64 = soft.iter().sum();
    for p in soft.iter_mut() {
        *p /= total;
    }
    Some(hard)
}

/// `Σ k pₖ`, accumulated as an offset from the hard index for precision.
fn soft_count(soft: &[f64], hard: usize) -> f64 {
    let offset: f64 = soft
        .iter()
        .enumerate()
        .map(|(k, &p)| (k as f64 - hard as f64) * p)
        .sum();
    hard as f64 + offset
}

fn check_tau(tau: f64) -> Result<()> {
    if tau <= 0.0 || !tau.is_finite() {
        return domain(format!("temperature must be finite and > 0, got {tau}"));
    }
    Ok(())
}

#[derive(Debug, Clone)]
struct ChainStep {
    params: TwoClassParams,
    /// ∂ ln ω_R / ∂ ln ω_j for every class j.
    right_weight_grad: Vec<f64>,
}

/// Sampler for one urn: the merge parameters of every step, a log-factorial
/// table and a lazily filled cache of conditional tables keyed by
/// `(step, remaining draws)`.
#[derive(Debug)]
pub struct ChainSampler {
    urn: UrnSpec,
    steps: Vec<ChainStep>,
    log_fact: LogFactorials,
    digamma_int: OnceLock<Vec<f64>>,
    tables: RwLock<HashMap<(usize, usize), Arc<LogPmfTable>>>,
}

impl Clone for ChainSampler {
    fn clone(&self) -> Self {
        Self {
            urn: self.urn.clone(),
            steps: self.steps.clone(),
            log_fact: self.log_fact.clone(),
            digamma_int: OnceLock::new(),
            tables: RwLock::new(HashMap::new()),
        }
    }
}

impl ChainSampler {
    pub fn new(urn: &UrnSpec) -> Result<Self> {
        let c = urn.num_classes();
        let m = urn.class_counts();
        let lw = urn.log_weights();
        let mut steps = Vec::with_capacity(c - 1);
        for i in 0..c - 1 {
            let params = merged_params(urn, i)?;
            let mut right_weight_grad = vec![0.0; c];
            let logits: Vec<f64> = (i + 1..c).map(|j| lw[j] + (m[j] as f64).ln()).collect();
            let z = log_sum_exp(&logits)?;
            for (j, l) in (i + 1..c).zip(&logits) {
                right_weight_grad[j] = (l - z).exp();
            }
            steps.push(ChainStep {
                params,
                right_weight_grad,
            });
        }
        Ok(Self {
            urn: urn.clone(),
            steps,
            log_fact: LogFactorials::new(urn.total()),
            digamma_int: OnceLock::new(),
            tables: RwLock::new(HashMap::new()),
        })
    }

    pub fn urn(&self) -> &UrnSpec {
        &self.urn
    }

    /// Parameters of merge step `i`.
    pub fn step_params(&self, i: usize) -> &TwoClassParams {
        &self.steps[i].params
    }

    /// Conditional table for step `i` with `remaining` draws left.
    pub fn table(&self, i: usize, remaining: usize) -> Arc<LogPmfTable> {
        if let Some(t) = self.tables.read().expect("table cache poisoned").get(&(i, remaining)) {
            return Arc::clone(t);
        }
        let mut logits = Vec::with_capacity(self.steps[i].params.left_count + 1);
        fill_two_class_logits(&self.steps[i].params, remaining, &self.log_fact, &mut logits);
        let table = Arc::new(LogPmfTable::from_logits(logits));
        let mut cache = self.tables.write().expect("table cache poisoned");
        Arc::clone(cache.entry((i, remaining)).or_insert(table))
    }

    /// ψ(j + 1) for j = 0..=N.
    fn digamma_table(&self) -> &[f64] {
        self.digamma_int.get_or_init(|| {
            (0..=self.urn.total())
                .map(|j| digamma(j as f64 + 1.0).expect("positive argument"))
                .collect()
        })
    }

    pub fn sample_noise<R: Rng + ?Sized>(&self, rng: &mut R) -> NoiseBundle {
        NoiseBundle::sample(&self.urn, rng)
    }

    fn check_noise(&self, noise: &NoiseBundle) -> Result<()> {
        if !noise.matches(&self.urn) {
            return domain("noise bundle shape does not match the urn");
        }
        Ok(())
    }

    /// One pass of the differentiable chain at temperature `tau`.
    pub fn sample_differentiable(&self, tau: f64, noise: &NoiseBundle) -> Result<RelaxedDraw> {
        check_tau(tau)?;
        self.check_noise(noise)?;
        let c = self.urn.num_classes();
        let mut remaining = self.urn.draws();
        let mut hard = Vec::with_capacity(c);
        let mut soft_counts = Vec::with_capacity(c);
        let mut soft_onehots = Vec::with_capacity(c);
        let mut tables = Vec::with_capacity(c);
        let mut perturbed_all = Vec::with_capacity(c);
        for i in 0..c - 1 {
            let table = self.table(i, remaining);
            let mut perturbed = Vec::new();
            let mut soft = Vec::new();
            let k = relax_into(table.logits(), noise.class(i), tau, &mut perturbed, &mut soft)
                .expect("conditional tables always have a feasible entry");
            soft_counts.push(soft_count(&soft, k));
            hard.push(k);
            soft_onehots.push(soft);
            perturbed_all.push(perturbed);
            tables.push(table.logits().to_vec());
            remaining -= k;
        }
        // The last class is forced to the remainder.
        let last_len = self.urn.class_counts()[c - 1] + 1;
        let forced = LogPmfTable::degenerate(last_len, remaining);
        let mut onehot = vec![0.0; last_len];
        onehot[remaining] = 1.0;
        perturbed_all.push(
            forced
                .logits()
                .iter()
                .zip(noise.class(c - 1))
                .map(|(&a, &g)| if a.is_finite() { a + g } else { f64::NEG_INFINITY })
                .collect(),
        );
        tables.push(forced.logits().to_vec());
        soft_onehots.push(onehot);
        soft_counts.push(remaining as f64);
        hard.push(remaining);
        Ok(RelaxedDraw {
            hard_counts: DrawVector::new(hard),
            soft_counts,
            soft_onehots,
            log_weight_tables: tables,
            perturbed_logits: perturbed_all,
            noise: noise.clone(),
        })
    }

    /// Hard counts only (the argmax path), without building soft vectors.
    pub fn hard_counts(&self, noise: &NoiseBundle) -> Result<DrawVector> {
        self.check_noise(noise)?;
        let c = self.urn.num_classes();
        let mut remaining = self.urn.draws();
        let mut out = Vec::with_capacity(c);
        for i in 0..c - 1 {
            let table = self.table(i, remaining);
            let k = table
                .logits()
                .iter()
                .zip(noise.class(i))
                .map(|(&a, &g)| if a.is_finite() { a + g } else { f64::NEG_INFINITY })
                .enumerate()
                .fold((usize::MAX, f64::NEG_INFINITY), |best, (k, r)| {
                    if r > best.1 {
                        (k, r)
                    } else {
                        best
                    }
                })
                .0;
            out.push(k);
            remaining -= k;
        }
        out.push(remaining);
        Ok(DrawVector::new(out))
    }

    pub fn sample_differentiable_rng<R: Rng + ?Sized>(&self, tau: f64, rng: &mut R) -> Result<RelaxedDraw> {
        let noise = self.sample_noise(rng);
        self.sample_differentiable(tau, &noise)
    }

    /// Exact chain sampling: inverse CDF on each normalized conditional table.
    pub fn sample_exact<R: Rng + ?Sized>(&self, rng: &mut R) -> DrawVector {
        let c = self.urn.num_classes();
        let mut remaining = self.urn.draws();
        let mut out = Vec::with_capacity(c);
        for i in 0..c - 1 {
            let u: f64 = rng.random();
            let k = self.table(i, remaining).quantile(u);
            out.push(k);
            remaining -= k;
        }
        out.push(remaining);
        DrawVector::new(out)
    }

    /// Forward pass and the Jacobian of the soft counts with respect to the
    /// log weights, both at fixed noise.
    pub fn sample_with_jacobian(
        &self,
        tau: f64,
        noise: &NoiseBundle,
    ) -> Result<(RelaxedDraw, SoftCountJacobian)> {
        let draw = self.sample_differentiable(tau, noise)?;
        let c = self.urn.num_classes();
        let psi = self.digamma_table();
        let mut jac = SoftCountJacobian::zeros(c);
        // Tangent of the remaining-draw budget with respect to each ln ω_j.
        let mut budget_tangent = vec![0.0; c];
        let mut remaining = self.urn.draws();
        let mut d_alpha = vec![0.0; c];
        for i in 0..c - 1 {
            let step = &self.steps[i];
            let params = &step.params;
            let soft = &draw.soft_onehots[i];
            let mean = draw.soft_counts[i];
            let mut grad = vec![0.0; c];
            let n = remaining;
            for (k, &p) in soft.iter().enumerate() {
                if p == 0.0 || !params.is_feasible(n, k) {
                    continue;
                }
                let rest = n - k;
                // ∂α_k/∂n: from (n−k)·ln ω_R and the two ψ terms that involve n.
                let d_budget = params.right_log_weight - psi[rest]
                    + psi[params.right_count - rest];
                for (j, d) in d_alpha.iter_mut().enumerate() {
                    *d = rest as f64 * step.right_weight_grad[j] + d_budget * budget_tangent[j];
                }
                d_alpha[i] += k as f64;
                let centered = p * (k as f64 - mean);
                for (g, d) in grad.iter_mut().zip(&d_alpha) {
                    *g += centered * d;
                }
            }
            for (j, g) in grad.iter().enumerate() {
                let v = g / tau;
                jac.set(i, j, v);
                budget_tangent[j] -= v;
            }
            remaining -= draw.hard_counts.counts()[i];
        }
        for (j, &t) in budget_tangent.iter().enumerate() {
            jac.set(c - 1, j, t);
        }
        Ok((draw, jac))
    }

    pub fn soft_count_jacobian(&self, tau: f64, noise: &NoiseBundle) -> Result<SoftCountJacobian> {
        Ok(self.sample_with_jacobian(tau, noise)?.1)
    }
}

/// One differentiable draw from `urn` with the given noise.
pub fn sample_differentiable(urn: &UrnSpec, tau: f64, noise: &NoiseBundle) -> Result<RelaxedDraw> {
    ChainSampler::new(urn)?.sample_differentiable(tau, noise)
}

/// One exact draw from the conditional chain of `urn`.
pub fn sample_exact<R: Rng + ?Sized>(urn: &UrnSpec, rng: &mut R) -> Result<DrawVector> {
    Ok(ChainSampler::new(urn)?.sample_exact(rng))
}

pub fn soft_count_jacobian(urn: &UrnSpec, tau: f64, noise: &NoiseBundle) -> Result<SoftCountJacobian> {
    ChainSampler::new(urn)?.soft_count_jacobian(tau, noise)
}
