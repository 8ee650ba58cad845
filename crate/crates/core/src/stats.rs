//! Two-sample Kolmogorov–Smirnov testing with Benjamini–Hochberg
//! correction, and sensitivity sweeps comparing the differentiable sampler
//! against the exact chain sampler.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::hypergeom::{DrawVector, UrnSpec};
use crate::reparam::{stream_rng, ChainSampler};

const SERIES_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    pub sample_sizes: (usize, usize),
}

/// Two-sided two-sample Kolmogorov–Smirnov test with the asymptotic
/// Kolmogorov p-value.
///
/// The statistic is evaluated at every pooled sample point after all tied
/// values have been absorbed, so it is well defined for integer data.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult> {
    if a.is_empty() || b.is_empty() {
        return domain("both samples must be non-empty");
    }
    if a.iter().chain(b).any(|x| x.is_nan()) {
        return domain("samples must not contain NaN");
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n1, n2) = (a.len(), b.len());
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < n1 && j < n2 {
        let t = a[i].min(b[j]);
        while i < n1 && a[i] <= t {
            i += 1;
        }
        while j < n2 && b[j] <= t {
            j += 1;
        }
        let gap = (i as f64 / n1 as f64 - j as f64 / n2 as f64).abs();
        d = d.max(gap);
    }
    let d = d.min(1.0);
    let en = ((n1 * n2) as f64 / (n1 + n2) as f64).sqrt();
    Ok(KsResult {
        statistic: d,
        p_value: kolmogorov_survival(d * en),
        sample_sizes: (n1, n2),
    })
}

/// Q(λ) = 2 Σ_{k≥1} (−1)^{k−1} exp(−2k²λ²), clamped to [0, 1].
///
/// For λ < 1 the alternating series converges slowly, so the equivalent
/// theta-function form of the CDF is summed instead.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.0 {
        let factor = (2.0 * std::f64::consts::PI).sqrt() / lambda;
        let scale = std::f64::consts::PI.powi(2) / (8.0 * lambda * lambda);
        let mut cdf = 0.0;
        for k in 1..=100 {
            let odd = (2 * k - 1) as f64;
            let term = (-odd * odd * scale).exp();
            cdf += term;
            if term < SERIES_TOLERANCE {
                break;
            }
        }
        return (1.0 - factor * cdf).clamp(0.0, 1.0);
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += sign * term;
        if term < SERIES_TOLERANCE {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Benjamini–Hochberg adjusted p-values, returned in input order.
pub fn benjamini_hochberg(p: &[f64]) -> Result<Vec<f64>> {
    if let Some(bad) = p.iter().find(|x| !(0.0..=1.0).contains(*x)) {
        return domain(format!("p-values must lie in [0, 1], got {bad}"));
    }
    let m = p.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p[a].total_cmp(&p[b]));
    let mut adjusted = vec![0.0; m];
    let mut running = 1.0f64;
    for (rank, &idx) in order.iter().enumerate().rev() {
        // The max guards against rounding below p when rank + 1 = m.
        let q = (p[idx] * m as f64 / (rank + 1) as f64).max(p[idx]);
        running = running.min(q).min(1.0);
        adjusted[idx] = running;
    }
    Ok(adjusted)
}

/// Which urn parameter a sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    /// Weight of one class (0-based index).
    Weight(usize),
    /// Number of draws.
    Draws,
    /// Element count of one class (0-based index).
    ClassCount(usize),
}

impl SweepParam {
    /// Parses `omega<k>`, `m<k>` (1-based class) or `n`.
    pub fn parse(s: &str) -> Result<Self> {
        let class = |rest: &str| -> Result<usize> {
            match rest.parse::<usize>() {
                Ok(k) if k >= 1 => Ok(k - 1),
                _ => Err(Error::Config(format!("bad class index in sweep parameter {s:?}"))),
            }
        };
        if s == "n" {
            Ok(Self::Draws)
        } else if let Some(rest) = s.strip_prefix("omega") {
            Ok(Self::Weight(class(rest)?))
        } else if let Some(rest) = s.strip_prefix('m') {
            Ok(Self::ClassCount(class(rest)?))
        } else {
            Err(Error::Config(format!(
                "unknown sweep parameter {s:?}; expected omega<k>, m<k> or n"
            )))
        }
    }

    pub fn label(&self) -> String {
        match self {
            Self::Weight(i) => format!("omega{}", i + 1),
            Self::Draws => "n".into(),
            Self::ClassCount(i) => format!("m{}", i + 1),
        }
    }
}

/// A one-parameter grid around a base urn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub class_counts: Vec<usize>,
    pub draws: usize,
    pub weights: Vec<f64>,
    pub param: SweepParam,
    pub values: Vec<f64>,
    pub samples: usize,
    pub tau: f64,
    pub seed: u64,
}

impl SweepConfig {
    /// The urn at one grid value.
    pub fn urn_at(&self, value: f64) -> Result<UrnSpec> {
        let mut m = self.class_counts.clone();
        let mut n = self.draws;
        let mut w = self.weights.clone();
        let as_count = |v: f64| -> Result<usize> {
            if v >= 0.0 && v.fract() == 0.0 && v.is_finite() {
                Ok(v as usize)
            } else {
                Err(Error::Config(format!("sweep value {v} is not a nonnegative integer")))
            }
        };
        let check_class = |i: usize| -> Result<()> {
            if i >= self.class_counts.len() {
                return Err(Error::Config(format!(
                    "sweep class {} out of range for {} classes",
                    i + 1,
                    self.class_counts.len()
                )));
            }
            Ok(())
        };
        match self.param {
            SweepParam::Weight(i) => {
                check_class(i)?;
                w[i] = value;
            }
            SweepParam::Draws => n = as_count(value)?,
            SweepParam::ClassCount(i) => {
                check_class(i)?;
                m[i] = as_count(value)?;
            }
        }
        UrnSpec::from_weights(m, n, &w).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::Config("sweep grid is empty".into()));
        }
        if self.samples == 0 {
            return Err(Error::Config("sweep needs at least one sample per arm".into()));
        }
        if self.tau <= 0.0 || !self.tau.is_finite() {
            return Err(Error::Config("temperature must be finite and > 0".into()));
        }
        for &v in &self.values {
            self.urn_at(v)?;
        }
        Ok(())
    }
}

/// One KS test of a class marginal at one grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KsRow {
    pub sweep_param: String,
    pub sweep_value: f64,
    /// 1-based class index.
    pub class: usize,
    pub statistic: f64,
    pub p_raw: f64,
    pub p_adjusted: f64,
    pub n_samples: usize,
    pub seed: u64,
}

/// Per-value frequencies of one class marginal under both samplers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramRow {
    pub sweep_value: f64,
    pub class: usize,
    pub count: usize,
    pub differentiable: usize,
    pub exact: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub rows: Vec<KsRow>,
    pub histograms: Vec<HistogramRow>,
}

impl SweepReport {
    /// Number of tests whose adjusted p-value exceeds `threshold`.
    pub fn passing(&self, threshold: f64) -> usize {
        self.rows.iter().filter(|r| r.p_adjusted > threshold).count()
    }
}

/// Hard counts of `count` differentiable draws; stream-seeded.
pub fn differentiable_hard_samples(
    sampler: &ChainSampler,
    tau: f64,
    count: usize,
    seed: u64,
    stream: u64,
) -> Result<Vec<DrawVector>> {
    let mut rng = stream_rng(seed, stream);
    (0..count)
        .map(|_| Ok(sampler.sample_differentiable_rng(tau, &mut rng)?.hard_counts))
        .collect()
}

pub fn exact_samples(sampler: &ChainSampler, count: usize, seed: u64, stream: u64) -> Vec<DrawVector> {
    let mut rng = stream_rng(seed, stream);
    (0..count).map(|_| sampler.sample_exact(&mut rng)).collect()
}

/// Column `class` of a set of draws as reals.
pub fn marginal(draws: &[DrawVector], class: usize) -> Vec<f64> {
    draws.iter().map(|d| d.counts()[class] as f64).collect()
}

/// KS test per class marginal followed by BH correction across the classes.
pub fn compare_marginals(a: &[DrawVector], b: &[DrawVector]) -> Result<Vec<(KsResult, f64)>> {
    let c = a.first().map(DrawVector::len).unwrap_or(0);
    let tests = (0..c)
        .map(|i| ks_two_sample(&marginal(a, i), &marginal(b, i)))
        .collect::<Result<Vec<_>>>()?;
    let raw: Vec<f64> = tests.iter().map(|t| t.p_value).collect();
    let adjusted = benjamini_hochberg(&raw)?;
    Ok(tests.into_iter().zip(adjusted).collect())
}

/// Runs the sweep. Grid point `g` draws the differentiable arm from stream
/// `2g` and the exact arm from stream `2g + 1`, so the result does not
/// depend on how grid points are scheduled across threads.
pub fn ks_sensitivity_sweep(cfg: &SweepConfig) -> Result<SweepReport> {
    cfg.validate()?;
    let label = cfg.param.label();
    let per_point = cfg
        .values
        .par_iter()
        .enumerate()
        .map(|(g, &value)| -> Result<SweepReport> {
            let urn = cfg.urn_at(value)?;
            let sampler = ChainSampler::new(&urn)?;
            let stream = 2 * g as u64;
            let diff = differentiable_hard_samples(&sampler, cfg.tau, cfg.samples, cfg.seed, stream)?;
            let exact = exact_samples(&sampler, cfg.samples, cfg.seed, stream + 1);
            let tests = compare_marginals(&diff, &exact)?;
            let rows = tests
                .iter()
                .enumerate()
                .map(|(i, (t, adj))| KsRow {
                    sweep_param: label.clone(),
                    sweep_value: value,
                    class: i + 1,
                    statistic: t.statistic,
                    p_raw: t.p_value,
                    p_adjusted: *adj,
                    n_samples: cfg.samples,
                    seed: cfg.seed,
                })
                .collect();
            let mut histograms = Vec::new();
            for i in 0..urn.num_classes() {
                let mut freq: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
                for d in &diff {
                    freq.entry(d.counts()[i]).or_default().0 += 1;
                }
                for d in &exact {
                    freq.entry(d.counts()[i]).or_default().1 += 1;
                }
                histograms.extend(freq.into_iter().map(|(count, (a, b))| HistogramRow {
                    sweep_value: value,
                    class: i + 1,
                    count,
                    differentiable: a,
                    exact: b,
                }));
            }
            Ok(SweepReport { rows, histograms })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut report = SweepReport::default();
    for part in per_point {
        report.rows.extend(part.rows);
        report.histograms.extend(part.histograms);
    }
    Ok(report)
}
