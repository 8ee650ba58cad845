//! Test-only oracles shared by the integration suites.
#![allow(dead_code)]

use diffhg::reparam::stream_rng;
use diffhg::{ChainSampler, NoiseBundle, RelaxedDraw, UrnSpec};
use rand::Rng;

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;
const PI2_OVER_6: f64 = 1.644_934_066_848_226_4;
const ZETA3: f64 = 1.202_056_903_159_594_3;

fn ln_factorial(k: usize) -> f64 {
    (2..=k).map(|j| (j as f64).ln()).sum()
}

/// `ln Γ(x + δ) − ln Γ(x)` for a positive integer `x` and small `δ`, by a
/// third-order Taylor expansion with polygamma values from harmonic sums.
fn log_gamma_shift(x: usize, delta: f64) -> f64 {
    if delta == 0.0 {
        return 0.0;
    }
    let (mut h1, mut h2, mut h3) = (0.0, 0.0, 0.0);
    for j in 1..x {
        let j = j as f64;
        h1 += 1.0 / j;
        h2 += 1.0 / (j * j);
        h3 += 1.0 / (j * j * j);
    }
    let psi0 = -EULER_GAMMA + h1;
    let psi1 = PI2_OVER_6 - h2;
    let psi2 = -2.0 * (ZETA3 - h3);
    delta * psi0 + delta * delta * psi1 / 2.0 + delta.powi(3) * psi2 / 6.0
}

fn lse(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// ln of the count-weighted mean weight of classes `from..`.
fn merged_log_weight(m: &[usize], lw: &[f64], from: usize) -> f64 {
    let total: usize = m[from..].iter().sum();
    let terms: Vec<f64> = (from..m.len()).map(|j| lw[j] + (m[j] as f64).ln()).collect();
    lse(&terms) - (total as f64).ln()
}

/// Soft-count offsets `s_i − x_i` of a surrogate forward pass at log weights
/// `lw`, holding the noise and the base pass's hard path fixed. The draw
/// budget is carried as a real number `n_i + δ_i` whose perturbation follows
/// the straight-through rule `δ_{i+1} = δ_i − (s_i − s_i^base)`.
pub struct Surrogate {
    m: Vec<usize>,
    lw0: Vec<f64>,
    tau: f64,
    hard: Vec<usize>,
    /// Per step: remaining draws, feasible k, shifted base logits `(α⁰+g)/τ − max`.
    steps: Vec<(usize, Vec<usize>, Vec<f64>)>,
    base_offsets: Vec<f64>,
}

impl Surrogate {
    pub fn new(urn: &UrnSpec, noise: &NoiseBundle, tau: f64, base: &RelaxedDraw) -> Self {
        let m = urn.class_counts().to_vec();
        let lw0 = urn.log_weights().to_vec();
        let c = m.len();
        let hard = base.hard_counts.counts().to_vec();
        let mut remaining = urn.draws();
        let mut steps = Vec::new();
        for i in 0..c - 1 {
            let m_l = m[i];
            let m_r: usize = m[i + 1..].iter().sum();
            let lw_r = merged_log_weight(&m, &lw0, i + 1);
            let n = remaining;
            let feasible: Vec<usize> = (0..=m_l.min(n)).filter(|&k| n - k <= m_r).collect();
            let z: Vec<f64> = feasible
                .iter()
                .map(|&k| {
                    let alpha = k as f64 * lw0[i] + (n - k) as f64 * lw_r
                        - (ln_factorial(k) + ln_factorial(n - k) + ln_factorial(m_l - k) + ln_factorial(m_r - (n - k)));
                    (alpha + noise.class(i)[k]) / tau
                })
                .collect();
            let zmax = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            steps.push((n, feasible, z.iter().map(|v| v - zmax).collect()));
            remaining -= hard[i];
        }
        let mut s = Self {
            m,
            lw0,
            tau,
            hard,
            steps,
            base_offsets: Vec::new(),
        };
        s.base_offsets = s.offsets_raw(&s.lw0.clone(), None);
        s
    }

    fn offsets_raw(&self, lw: &[f64], base: Option<&[f64]>) -> Vec<f64> {
        let c = self.m.len();
        let mut out = Vec::with_capacity(c);
        let mut delta = 0.0;
        for (i, (n, feasible, z0)) in self.steps.iter().enumerate() {
            let m_r: usize = self.m[i + 1..].iter().sum();
            let lw_r = merged_log_weight(&self.m, lw, i + 1);
            let lw_r0 = merged_log_weight(&self.m, &self.lw0, i + 1);
            let d_l = lw[i] - self.lw0[i];
            let d_r = lw_r - lw_r0;
            let u: Vec<f64> = feasible
                .iter()
                .zip(z0)
                .map(|(&k, &z)| {
                    let rest = (n - k) as f64;
                    let change = k as f64 * d_l + (rest + delta) * d_r + delta * lw_r0
                        - log_gamma_shift(n - k + 1, delta)
                        - log_gamma_shift(m_r - (n - k) + 1, -delta);
                    z + change / self.tau
                })
                .collect();
            let norm = lse(&u);
            let x = self.hard[i] as f64;
            let off: f64 = feasible
                .iter()
                .zip(&u)
                .map(|(&k, &v)| (k as f64 - x) * (v - norm).exp())
                .sum();
            out.push(off);
            if let Some(b) = base {
                delta -= off - b[i];
            }
        }
        out.push(delta);
        out
    }

    pub fn offsets(&self, lw: &[f64]) -> Vec<f64> {
        self.offsets_raw(lw, Some(&self.base_offsets))
    }

    pub fn hard(&self) -> &[usize] {
        &self.hard
    }
}

/// Central finite-difference Jacobian `J[i][j] = ∂ s_i / ∂ ln ω_j`.
pub fn fd_jacobian(urn: &UrnSpec, noise: &NoiseBundle, tau: f64, h: f64) -> Vec<Vec<f64>> {
    let base = ChainSampler::new(urn).unwrap().sample_differentiable(tau, noise).unwrap();
    let sur = Surrogate::new(urn, noise, tau, &base);
    let c = urn.num_classes();
    let lw0 = urn.log_weights().to_vec();
    let mut jac = vec![vec![0.0; c]; c];
    for j in 0..c {
        let mut plus = lw0.clone();
        let mut minus = lw0.clone();
        plus[j] += h;
        minus[j] -= h;
        let (a, b) = (sur.offsets(&plus), sur.offsets(&minus));
        for i in 0..c {
            jac[i][j] = (a[i] - b[i]) / (2.0 * h);
        }
    }
    jac
}

/// Finite-difference gradient of `Σ (observed − s)²` at fixed noise.
pub fn fd_loss_gradient(urn: &UrnSpec, noise: &NoiseBundle, tau: f64, observed: &[usize], h: f64) -> Vec<f64> {
    let base = ChainSampler::new(urn).unwrap().sample_differentiable(tau, noise).unwrap();
    let sur = Surrogate::new(urn, noise, tau, &base);
    let loss = |lw: &[f64]| -> f64 {
        sur.offsets(lw)
            .iter()
            .zip(sur.hard())
            .zip(observed)
            .map(|((off, &x), &o)| {
                // observed − (x + off), with the integer part taken first.
                let r = (o as f64 - x as f64) - off;
                r * r
            })
            .sum()
    };
    let lw0 = urn.log_weights().to_vec();
    (0..lw0.len())
        .map(|j| {
            let mut plus = lw0.clone();
            let mut minus = lw0.clone();
            plus[j] += h;
            minus[j] -= h;
            (loss(&plus) - loss(&minus)) / (2.0 * h)
        })
        .collect()
}

/// Random urn with `c` classes, sizes in `1..=max_m`, weights in `w_range`.
pub fn random_urn<R: Rng>(rng: &mut R, c: usize, max_m: usize, w_range: (f64, f64)) -> UrnSpec {
    let m: Vec<usize> = (0..c).map(|_| rng.random_range(1..=max_m)).collect();
    let total: usize = m.iter().sum();
    let n = rng.random_range(0..=total);
    let w: Vec<f64> = (0..c).map(|_| rng.random_range(w_range.0..=w_range.1)).collect();
    UrnSpec::from_weights(m, n, &w).unwrap()
}

pub fn rng(seed: u64) -> diffhg::reparam::StreamRng {
    stream_rng(seed, 9_999)
}
