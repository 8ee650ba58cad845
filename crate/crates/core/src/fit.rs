//! Recovering unknown class weights from observed draws.
//!
//! The generative model is the differentiable chain sampler. Each training
//! step draws fresh Gumbel noise per datum, compares the relaxed soft counts
//! with the observed counts under a squared error, and moves the log
//! weights along the averaged reparameterized gradient.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::hypergeom::{DrawVector, UrnSpec};
use crate::reparam::{stream_rng, ChainSampler, NoiseBundle, RelaxedDraw, SoftCountJacobian};

// Stream indices below the fit seed.
const SHUFFLE_STREAM: u64 = 1;
const TRAIN_NOISE_STREAM: u64 = 2;
const VALIDATION_STREAM: u64 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub tau_init: f64,
    pub tau_final: f64,
    pub anneal_steps: usize,
    pub seed: u64,
    pub init_log_weights: Vec<f64>,
    /// Model draws per validation datum when scoring the hard-count loss.
    pub validation_draws: usize,
}

impl FitConfig {
    /// Defaults for a urn with `classes` classes, starting from ω = 1.
    pub fn with_defaults(classes: usize) -> Self {
        Self {
            learning_rate: DEFAULT_LEARNING_RATE,
            epochs: 10,
            batch_size: 32,
            tau_init: 1.0,
            tau_final: 1.0,
            anneal_steps: 250,
            seed: 0,
            init_log_weights: vec![0.0; classes],
            validation_draws: 10,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.learning_rate < 0.0 || !self.learning_rate.is_finite() {
            return Err(Error::Config("learning rate must be finite and >= 0".into()));
        }
        if self.validation_draws == 0 {
            return Err(Error::Config("validation_draws must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if self.tau_final <= 0.0 || !self.tau_init.is_finite() || self.tau_init < self.tau_final {
            return Err(Error::Config("temperatures need tau_init >= tau_final > 0".into()));
        }
        if self.anneal_steps == 0 {
            return Err(Error::Config("anneal_steps must be positive".into()));
        }
        if self.init_log_weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Config("initial log weights must be finite".into()));
        }
        Ok(())
    }
}

/// Default SGD step on the log weights. The loss is a sum of squared count
/// errors, so gradients on an urn with m = 200 per class and n = 180 are in
/// the hundreds; larger steps overshoot into a degenerate urn.
pub const DEFAULT_LEARNING_RATE: f64 = 5e-5;

/// Training and validation draws sharing one urn shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitData {
    pub class_counts: Vec<usize>,
    pub train: Vec<DrawVector>,
    pub validation: Vec<DrawVector>,
}

impl FitData {
    /// Checks that every draw shares one total `n` and respects the class
    /// counts; returns that `n`.
    pub fn draws(&self) -> Result<usize> {
        let first = self
            .train
            .first()
            .ok_or_else(|| Error::Domain("training set is empty".into()))?;
        let n = first.total();
        let probe = UrnSpec::new(
            self.class_counts.clone(),
            n,
            vec![0.0; self.class_counts.len()],
        )?;
        for d in self.train.iter().chain(&self.validation) {
            if !d.is_in_support(&probe) {
                return domain(format!(
                    "draw {:?} is inconsistent with m = {:?}, n = {n}",
                    d.counts(),
                    self.class_counts
                ));
            }
        }
        Ok(n)
    }

    /// Per-class mean counts of the training set.
    pub fn train_means(&self) -> Vec<f64> {
        mean_counts(&self.train)
    }
}

/// One row of the training trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub step: usize,
    pub epoch: usize,
    /// Mean soft-count loss of the step's minibatch; absent on the initial row.
    pub train_loss: Option<f64>,
    /// Mean hard-count validation loss; present on the initial row and on
    /// the last step of each epoch.
    pub val_loss: Option<f64>,
    pub tau: f64,
    pub log_weights: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitTrace {
    pub records: Vec<FitRecord>,
}

impl FitTrace {
    pub fn final_log_weights(&self) -> &[f64] {
        &self.records.last().expect("trace has an initial row").log_weights
    }

    pub fn final_val_loss(&self) -> Option<f64> {
        self.records.iter().rev().find_map(|r| r.val_loss)
    }

    pub fn val_losses(&self) -> Vec<f64> {
        self.records.iter().filter_map(|r| r.val_loss).collect()
    }
}

/// `Σᵢ (observedᵢ − soft_countᵢ)²`.
pub fn mse_loss(observed: &DrawVector, sampled: &RelaxedDraw) -> Result<f64> {
    squared_error(observed, &sampled.soft_counts)
}

fn squared_error(observed: &DrawVector, predicted: &[f64]) -> Result<f64> {
    if observed.len() != predicted.len() {
        return domain(format!(
            "observed has {} classes, sample has {}",
            observed.len(),
            predicted.len()
        ));
    }
    Ok(observed
        .counts()
        .iter()
        .zip(predicted)
        .map(|(&o, &s)| (o as f64 - s).powi(2))
        .sum())
}

/// Gradient of [`mse_loss`] with respect to the log weights, by the chain
/// rule through the soft-count Jacobian.
pub fn mse_loss_gradient(
    observed: &DrawVector,
    sampled: &RelaxedDraw,
    jacobian: &SoftCountJacobian,
) -> Result<Vec<f64>> {
    if observed.len() != sampled.soft_counts.len() || jacobian.num_classes() != observed.len() {
        return domain("observed, sample and Jacobian disagree on the number of classes");
    }
    let residual: Vec<f64> = observed
        .counts()
        .iter()
        .zip(&sampled.soft_counts)
        .map(|(&o, &s)| -2.0 * (o as f64 - s))
        .collect();
    Ok(jacobian.transpose_mul(&residual))
}

/// Exponentially annealed temperature, floored at `tau_final` once
/// `anneal_steps` have elapsed.
pub fn anneal_temperature(step: usize, cfg: &FitConfig) -> f64 {
    if step >= cfg.anneal_steps {
        return cfg.tau_final;
    }
    let rate = (cfg.tau_init.ln() - cfg.tau_final.ln()) / cfg.anneal_steps as f64;
    (cfg.tau_init * (-rate * step as f64).exp()).max(cfg.tau_final)
}

/// `count` independent exact draws from `urn`.
pub fn generate_dataset<R: Rng + ?Sized>(urn: &UrnSpec, count: usize, rng: &mut R) -> Result<Vec<DrawVector>> {
    let sampler = ChainSampler::new(urn)?;
    Ok((0..count).map(|_| sampler.sample_exact(rng)).collect())
}

pub fn mean_counts(draws: &[DrawVector]) -> Vec<f64> {
    let Some(first) = draws.first() else {
        return Vec::new();
    };
    let mut sums = vec![0.0; first.len()];
    for d in draws {
        for (s, &x) in sums.iter_mut().zip(d.counts()) {
            *s += x as f64;
        }
    }
    sums.iter().map(|s| s / draws.len() as f64).collect()
}

/// Mean hard-count squared error of `data` against fresh draws from the
/// model, averaged over `draws_per_datum` draws per datum.
pub fn hard_validation_loss<R: Rng + ?Sized>(
    sampler: &ChainSampler,
    data: &[DrawVector],
    draws_per_datum: usize,
    rng: &mut R,
) -> Result<f64> {
    if data.is_empty() || draws_per_datum == 0 {
        return domain("validation needs data and at least one draw per datum");
    }
    let mut total = 0.0;
    for observed in data {
        for _ in 0..draws_per_datum {
            let noise = sampler.sample_noise(rng);
            let hard = sampler.hard_counts(&noise)?;
            let predicted: Vec<f64> = hard.counts().iter().map(|&x| x as f64).collect();
            total += squared_error(observed, &predicted)?;
        }
    }
    Ok(total / (data.len() * draws_per_datum) as f64)
}

/// Per-class mean hard counts of `count` draws from `urn` via the
/// differentiable sampler's argmax path.
pub fn model_mean_counts(urn: &UrnSpec, count: usize, seed: u64, stream: u64) -> Result<Vec<f64>> {
    let sampler = ChainSampler::new(urn)?;
    let mut rng = stream_rng(seed, stream);
    let draws = (0..count)
        .map(|_| sampler.hard_counts(&sampler.sample_noise(&mut rng)))
        .collect::<Result<Vec<_>>>()?;
    Ok(mean_counts(&draws))
}

/// SGD on the log weights. The class counts and draw total are taken from
/// `data` and never change; only the log weights move.
pub fn fit_omega(data: &FitData, cfg: &FitConfig) -> Result<FitTrace> {
    cfg.validate()?;
    let n = data.draws()?;
    let c = data.class_counts.len();
    if cfg.init_log_weights.len() != c {
        return Err(Error::Config(format!(
            "{} initial log weights for {c} classes",
            cfg.init_log_weights.len()
        )));
    }
    let mut log_weights = cfg.init_log_weights.clone();
    let urn_at = |lw: &[f64]| UrnSpec::new(data.class_counts.clone(), n, lw.to_vec());

    let mut shuffle_rng = stream_rng(cfg.seed, SHUFFLE_STREAM);
    let mut noise_rng = stream_rng(cfg.seed, TRAIN_NOISE_STREAM);
    let mut val_rng = stream_rng(cfg.seed, VALIDATION_STREAM);

    let mut sampler = ChainSampler::new(&urn_at(&log_weights)?)?;
    let validate = |sampler: &ChainSampler, rng: &mut _| -> Result<Option<f64>> {
        if data.validation.is_empty() {
            Ok(None)
        } else {
            hard_validation_loss(sampler, &data.validation, cfg.validation_draws, rng).map(Some)
        }
    };

    let mut trace = FitTrace::default();
    trace.records.push(FitRecord {
        step: 0,
        epoch: 0,
        train_loss: None,
        val_loss: validate(&sampler, &mut val_rng)?,
        tau: anneal_temperature(0, cfg),
        log_weights: log_weights.clone(),
    });

    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut step = 0usize;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let batches: Vec<&[usize]> = order.chunks(cfg.batch_size).collect();
        let last = batches.len() - 1;
        for (b, batch) in batches.into_iter().enumerate() {
            let tau = anneal_temperature(step, cfg);
            // Noise is drawn sequentially so the parallel map below cannot
            // change the random stream.
            let noises: Vec<NoiseBundle> = batch.iter().map(|_| sampler.sample_noise(&mut noise_rng)).collect();
            let per_datum = batch
                .par_iter()
                .zip(noises.par_iter())
                .map(|(&idx, noise)| -> Result<(f64, Vec<f64>)> {
                    let (draw, jac) = sampler.sample_with_jacobian(tau, noise)?;
                    let observed = &data.train[idx];
                    Ok((mse_loss(observed, &draw)?, mse_loss_gradient(observed, &draw, &jac)?))
                })
                .collect::<Result<Vec<_>>>()?;
            let scale = 1.0 / per_datum.len() as f64;
            let mut loss = 0.0;
            let mut grad = vec![0.0; c];
            for (l, g) in &per_datum {
                loss += l * scale;
                for (acc, gi) in grad.iter_mut().zip(g) {
                    *acc += gi * scale;
                }
            }
            for (w, g) in log_weights.iter_mut().zip(&grad) {
                *w -= cfg.learning_rate * g;
            }
            if log_weights.iter().any(|w| !w.is_finite()) {
                return domain(format!("log weights diverged at step {}", step + 1));
            }
            step += 1;
            sampler = ChainSampler::new(&urn_at(&log_weights)?)?;
            let val_loss = if b == last { validate(&sampler, &mut val_rng)? } else { None };
            trace.records.push(FitRecord {
                step,
                epoch,
                train_loss: Some(loss),
                val_loss,
                tau,
                log_weights: log_weights.clone(),
            });
        }
    }
    Ok(trace)
}
