//! One-dimensional hardmax attention and its extreme-value reference laws.
//!
//! Hardmax sends every token to the extreme token of matching sign, so the
//! empirical output mean depends on the sample only through
//! (I+, max, min). The sweep sampler exploits that: I+ is Binomial(n, 1/2)
//! and, given I+, the two extremes are inverse-CDF transforms of powers of
//! uniforms — an O(1) draw with exactly the same joint law as streaming n
//! Gaussians. The direct sampler is kept for cross-validation.

use crate::error::{Error, Result};
use crate::generate::TokenBatch;
use crate::rng::{self, tag};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Open01, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

/// One hardmax realization, decomposed as gamma_bar = v_n + u_n.
#[derive(Debug, Clone, Copy)]
pub struct HardmaxTrial {
    pub n: usize,
    /// Empirical mean of the hardmax outputs.
    pub gamma_bar: f64,
    /// (max + min) / 2 — the extreme-value midpoint term.
    pub v_n: f64,
    /// ((2 I+ - n) / 2n) (max - min) — the sign-imbalance term.
    pub u_n: f64,
    /// Number of nonnegative tokens.
    pub i_plus: usize,
}

/// Exact hardmax evaluation over a concrete 1-d token batch.
/// Zero counts as positive (a probability-zero tie under continuous laws;
/// the fixed convention keeps results deterministic).
pub fn hardmax_mean(tokens: &TokenBatch) -> Result<HardmaxTrial> {
    if tokens.dim() != 1 {
        return Err(Error::DimensionMismatch(
            "hardmax_mean requires one-dimensional tokens".into(),
        ));
    }
    let xs = tokens.as_flat();
    let n = xs.len();
    let mut max = f64::NEG_INFINITY;
    let mut min = f64::INFINITY;
    let mut i_plus = 0usize;
    for &x in xs {
        if x > max {
            max = x;
        }
        if x < min {
            min = x;
        }
        if x >= 0.0 {
            i_plus += 1;
        }
    }
    Ok(trial_from_extremes(n, i_plus, max, min))
}

fn trial_from_extremes(n: usize, i_plus: usize, max: f64, min: f64) -> HardmaxTrial {
    let nf = n as f64;
    let i_minus = n - i_plus;
    let gamma_bar = (i_plus as f64 * max + i_minus as f64 * min) / nf;
    let v_n = 0.5 * (max + min);
    let u_n = ((2.0 * i_plus as f64 - nf) / (2.0 * nf)) * (max - min);
    HardmaxTrial {
        n,
        gamma_bar,
        v_n,
        u_n,
        i_plus,
    }
}

/// How a sweep draws its trials.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TrialSampler {
    /// Stream n Gaussian draws and reduce. O(n) per trial.
    Direct,
    /// Sample (I+, max, min) from their exact joint law. O(1) per trial.
    #[default]
    OrderStatistic,
}

fn draw_trial_direct(sigma: f64, n: usize, rng: &mut ChaCha8Rng) -> HardmaxTrial {
    let mut max = f64::NEG_INFINITY;
    let mut min = f64::INFINITY;
    let mut i_plus = 0usize;
    for _ in 0..n {
        let z: f64 = rng.sample(StandardNormal);
        let x = sigma * z;
        if x > max {
            max = x;
        }
        if x < min {
            min = x;
        }
        if x >= 0.0 {
            i_plus += 1;
        }
    }
    trial_from_extremes(n, i_plus, max, min)
}

/// Max of k iid half-normals via the quantile transform: the maximum of k
/// uniforms is U^{1/k}, and the positive-half CDF is 2 Phi(x/sigma) - 1.
/// Computed through the complementary tail for precision at large k.
fn half_normal_max(sigma: f64, k: usize, rng: &mut ChaCha8Rng, normal: &Normal) -> f64 {
    let u: f64 = Open01.sample(rng);
    // tail = (1 - U^{1/k}) / 2, evaluated stably.
    let tail = -0.5 * (u.ln() / k as f64).exp_m1();
    let tail = tail.max(f64::MIN_POSITIVE);
    -sigma * normal.inverse_cdf(tail)
}

fn draw_trial_order_stat(
    sigma: f64,
    n: usize,
    rng: &mut ChaCha8Rng,
    normal: &Normal,
) -> HardmaxTrial {
    // I+ ~ Binomial(n, 1/2); resample the astronomically unlikely all-one-sign
    // draws so both extremes exist.
    let binom = rand_distr::Binomial::new(n as u64, 0.5).expect("valid binomial");
    let i_plus = loop {
        let k = binom.sample(rng);
        if k > 0 && k < n as u64 {
            break k as usize;
        }
    };
    let max = half_normal_max(sigma, i_plus, rng, normal);
    let min = -half_normal_max(sigma, n - i_plus, rng, normal);
    trial_from_extremes(n, i_plus, max, min)
}

/// Per-n Monte Carlo estimates from a hardmax sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HardmaxSweepRow {
    pub n: usize,
    /// Estimate of E|gamma_bar| and its standard error.
    pub mean_abs: f64,
    pub se_mean_abs: f64,
    /// Estimate of E[gamma_bar^2] and its standard error.
    pub second_moment: f64,
    pub se_second_moment: f64,
    /// mean_abs * 2 sqrt(2 ln n) / (sigma ln 4); converges to 1.
    pub ratio_mean: f64,
    /// second_moment * 24 ln n / (sigma^2 pi^2); converges to 1.
    pub ratio_second: f64,
}

/// Monte Carlo estimates of E|gamma_bar| and E[gamma_bar^2] over an n grid,
/// with the normalized ratios against the leading-order asymptotics.
pub fn hardmax_sweep(
    sigma: f64,
    n_grid: &[usize],
    replicates: usize,
    seed: u64,
    sampler: TrialSampler,
) -> Result<Vec<HardmaxSweepRow>> {
    if !(sigma > 0.0) {
        return Err(Error::invalid("hardmax_sweep: sigma must be positive"));
    }
    if replicates < 100 {
        return Err(Error::invalid(
            "hardmax_sweep: at least 100 replicates are required",
        ));
    }
    if n_grid.iter().any(|&n| n < 3) {
        return Err(Error::invalid("hardmax_sweep: every n must be at least 3"));
    }
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let mut rows = Vec::with_capacity(n_grid.len());
    for &n in n_grid {
        // Replicates are independent streams, aggregated in index order.
        let trials: Vec<(f64, f64)> = (0..replicates)
            .into_par_iter()
            .map(|rep| {
                let mut rng = rng::stream(seed, &[tag::HARDMAX, n as u64, rep as u64]);
                let t = match sampler {
                    TrialSampler::Direct => draw_trial_direct(sigma, n, &mut rng),
                    TrialSampler::OrderStatistic => {
                        draw_trial_order_stat(sigma, n, &mut rng, &normal)
                    }
                };
                (t.gamma_bar.abs(), t.gamma_bar * t.gamma_bar)
            })
            .collect();
        let r = replicates as f64;
        let mean_abs = trials.iter().map(|t| t.0).sum::<f64>() / r;
        let second = trials.iter().map(|t| t.1).sum::<f64>() / r;
        let var_abs = trials.iter().map(|t| (t.0 - mean_abs).powi(2)).sum::<f64>() / (r - 1.0);
        let var_sec = trials.iter().map(|t| (t.1 - second).powi(2)).sum::<f64>() / (r - 1.0);
        let ln_n = (n as f64).ln();
        rows.push(HardmaxSweepRow {
            n,
            mean_abs,
            se_mean_abs: (var_abs / r).sqrt(),
            second_moment: second,
            se_second_moment: (var_sec / r).sqrt(),
            ratio_mean: mean_abs * 2.0 * (2.0 * ln_n).sqrt() / (sigma * 4.0f64.ln()),
            ratio_second: second * 24.0 * ln_n / (sigma * sigma * std::f64::consts::PI.powi(2)),
        });
    }
    Ok(rows)
}

/// Empirical moments of |L| for L the difference of two independent centered
/// Gumbel variates (a centered logistic): returns (E|L| estimate, Var(L)
/// estimate). The references are ln 4 and pi^2 / 3.
pub fn logistic_reference(samples: usize, seed: u64) -> Result<(f64, f64)> {
    if samples < 10_000 {
        return Err(Error::invalid(
            "logistic_reference: at least 10^4 samples are required",
        ));
    }
    let mut rng = rng::stream(seed, &[tag::LOGISTIC]);
    let mut sum_abs = 0.0f64;
    let mut sum = 0.0f64;
    let mut sum_sq = 0.0f64;
    for _ in 0..samples {
        // Gumbel via inverse CDF on open-interval uniforms.
        let u1: f64 = Open01.sample(&mut rng);
        let u2: f64 = Open01.sample(&mut rng);
        let g1 = -(-u1.ln()).ln();
        let g2 = -(-u2.ln()).ln();
        let l = g1 - g2;
        sum_abs += l.abs();
        sum += l;
        sum_sq += l * l;
    }
    let nf = samples as f64;
    let mean = sum / nf;
    Ok((sum_abs / nf, sum_sq / nf - mean * mean))
}

/// Empirical check of the sign-imbalance term: E|U_n| against its bound
/// sigma sqrt(ln n / n), plus the vanishing-ratio diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UnVnReport {
    pub n: usize,
    pub bound: f64,
    pub mean_abs_u: f64,
    /// mean_abs_u / bound; must stay at or below 1 (10% slack in tests).
    pub bound_ratio: f64,
    pub second_moment_u: f64,
    /// E[U^2] * n / ln n, the O(ln n / n) rate in ratio form.
    pub second_moment_rate: f64,
    pub mean_abs_v: f64,
    /// E|U| / E|V|; vanishes as n grows.
    pub u_to_v_ratio: f64,
}

pub fn un_vn_bounds_check(
    sigma: f64,
    n: usize,
    replicates: usize,
    seed: u64,
) -> Result<UnVnReport> {
    if replicates < 1_000 {
        return Err(Error::invalid(
            "un_vn_bounds_check: at least 10^3 replicates are required",
        ));
    }
    if n < 3 {
        return Err(Error::invalid("un_vn_bounds_check: n must be at least 3"));
    }
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let trials: Vec<(f64, f64)> = (0..replicates)
        .into_par_iter()
        .map(|rep| {
            let mut rng = rng::stream(seed, &[tag::HARDMAX, n as u64, rep as u64]);
            let t = draw_trial_order_stat(sigma, n, &mut rng, &normal);
            (t.u_n, t.v_n)
        })
        .collect();
    let r = replicates as f64;
    let mean_abs_u = trials.iter().map(|t| t.0.abs()).sum::<f64>() / r;
    let second_u = trials.iter().map(|t| t.0 * t.0).sum::<f64>() / r;
    let mean_abs_v = trials.iter().map(|t| t.1.abs()).sum::<f64>() / r;
    let ln_n = (n as f64).ln();
    let bound = sigma * (ln_n / n as f64).sqrt();
    Ok(UnVnReport {
        n,
        bound,
        mean_abs_u,
        bound_ratio: mean_abs_u / bound,
        second_moment_u: second_u,
        second_moment_rate: second_u * n as f64 / ln_n,
        mean_abs_v,
        u_to_v_ratio: mean_abs_u / mean_abs_v,
    })
}
