//! Per-round coupling of a smooth draw with `k` i.i.d. base-measure draws.
//!
//! Candidates `Z_1..Z_k ~ mu` are drawn independently; candidate `j` is
//! accepted with probability `sigma * dp/dmu(Z_j)`. If any candidate is
//! accepted, `x` is a uniform choice among the accepted ones, otherwise `x` is
//! drawn from `p` directly. Then `x ~ p`, the candidates are i.i.d. `mu`, and
//! the fallback fires with probability exactly `(1 - sigma)^k`.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{check_sigma, BaseMeasure, Context};
use crate::rng::{derive_seed, rng_from_seed};
use crate::stats::{binomial_std, chi_square_gof};

const RATIO_TOLERANCE: f64 = 1e-9;
pub const MIN_TRIALS: usize = 1000;
const CHUNK: usize = 10_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingDraw {
    pub x: Context,
    pub candidates: Vec<Context>,
    /// Indices into `candidates`.
    pub accepted: Vec<usize>,
    pub hit: bool,
}

pub fn couple_round<R, D, M, P>(
    density_ratio: D,
    sigma: f64,
    k: usize,
    mut mu_sampler: M,
    mut fallback_p_sampler: P,
    rng: &mut R,
) -> Result<CouplingDraw>
where
    R: Rng + ?Sized,
    D: Fn(&Context) -> f64,
    M: FnMut(&mut R) -> Context,
    P: FnMut(&mut R) -> Context,
{
    check_sigma(sigma)?;
    let mut candidates = Vec::with_capacity(k);
    let mut accepted = Vec::new();
    for j in 0..k {
        let z = mu_sampler(rng);
        let ratio = density_ratio(&z);
        if ratio.is_nan() || ratio < 0.0 || ratio > 1.0 / sigma + RATIO_TOLERANCE {
            return Err(Error::SmoothnessViolated {
                ratio,
                bound: 1.0 / sigma,
            });
        }
        let pi = (sigma * ratio).min(1.0);
        if rng.random::<f64>() < pi {
            accepted.push(j);
        }
        candidates.push(z);
    }
    let (x, hit) = if accepted.is_empty() {
        (fallback_p_sampler(rng), false)
    } else {
        let j = accepted[rng.random_range(0..accepted.len())];
        (candidates[j], true)
    };
    Ok(CouplingDraw {
        x,
        candidates,
        accepted,
        hit,
    })
}

/// A coupling experiment on a finite ground set.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CouplingConfig {
    pub sigma: f64,
    pub k: usize,
    pub mu: Vec<f64>,
    pub p: Vec<f64>,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingReport {
    pub sigma: f64,
    pub k: usize,
    pub trials: usize,
    pub x_marginal_pvalue: f64,
    pub z_marginal_pvalue: f64,
    pub miss_rate: f64,
    /// `(1 - sigma)^k`, the exact per-round miss probability.
    pub bound: f64,
    /// `exp(-sigma k)`.
    pub exp_bound: f64,
    /// Binomial standard deviation of the miss rate at `bound`.
    pub miss_std: f64,
    pub max_density_ratio: f64,
}

impl CouplingReport {
    pub fn marginals_pass(&self, alpha: f64) -> bool {
        self.x_marginal_pvalue > alpha && self.z_marginal_pvalue > alpha
    }

    /// `miss_rate <= (1-sigma)^k + devs * std`.
    pub fn inclusion_holds(&self, devs: f64) -> bool {
        self.miss_rate <= self.bound + devs * self.miss_std
    }
}

/// Per-chunk `(x counts, candidate counts, misses)`.
type ChunkCounts = (Vec<u64>, Vec<u64>, u64);

pub fn validate_coupling(config: &CouplingConfig, trials: usize) -> Result<CouplingReport> {
    if trials < MIN_TRIALS {
        return Err(Error::InsufficientTrials {
            got: trials,
            min: MIN_TRIALS,
        });
    }
    check_sigma(config.sigma)?;
    let n = config.mu.len();
    if n == 0 || config.p.len() != n {
        return Err(Error::InvalidParameter(
            "mu and p must have equal, nonzero length".into(),
        ));
    }
    BaseMeasure::finite(config.mu.clone())?;
    BaseMeasure::finite(config.p.clone())?;
    let ratios: Vec<f64> = config
        .mu
        .iter()
        .zip(&config.p)
        .map(|(&m, &p)| {
            if m > 0.0 {
                p / m
            } else if p > 0.0 {
                f64::INFINITY
            } else {
                0.0
            }
        })
        .collect();
    let max_ratio = ratios.iter().cloned().fold(0.0, f64::max);
    if max_ratio > 1.0 / config.sigma + RATIO_TOLERANCE {
        return Err(Error::SmoothnessViolated {
            ratio: max_ratio,
            bound: 1.0 / config.sigma,
        });
    }
    let mu_index = WeightedIndex::new(&config.mu).expect("validated");
    let p_index = WeightedIndex::new(&config.p).expect("validated");

    let chunks = trials.div_ceil(CHUNK);
    let partials: Vec<Result<ChunkCounts>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = rng_from_seed(derive_seed(config.seed, &[c as u64]));
            let mut x_counts = vec![0u64; n];
            let mut z_counts = vec![0u64; n];
            let mut misses = 0u64;
            let this_chunk = CHUNK.min(trials - c * CHUNK);
            for _ in 0..this_chunk {
                let draw = couple_round(
                    |z: &Context| match z {
                        Context::Atom(a) => ratios[*a as usize],
                        _ => f64::INFINITY,
                    },
                    config.sigma,
                    config.k,
                    |r| Context::Atom(mu_index.sample(r) as u32),
                    |r| Context::Atom(p_index.sample(r) as u32),
                    &mut rng,
                )?;
                for z in &draw.candidates {
                    if let Context::Atom(a) = z {
                        z_counts[*a as usize] += 1;
                    }
                }
                if let Context::Atom(a) = draw.x {
                    x_counts[a as usize] += 1;
                }
                if !draw.hit {
                    misses += 1;
                }
            }
            Ok((x_counts, z_counts, misses))
        })
        .collect();

    let mut x_counts = vec![0u64; n];
    let mut z_counts = vec![0u64; n];
    let mut misses = 0u64;
    for part in partials {
        let (xc, zc, m) = part?;
        x_counts.iter_mut().zip(xc).for_each(|(a, b)| *a += b);
        z_counts.iter_mut().zip(zc).for_each(|(a, b)| *a += b);
        misses += m;
    }
    let bound = (1.0 - config.sigma).powi(config.k as i32);
    let z_marginal_pvalue = if config.k == 0 {
        1.0
    } else {
        chi_square_gof(&z_counts, &config.mu).1
    };
    Ok(CouplingReport {
        sigma: config.sigma,
        k: config.k,
        trials,
        x_marginal_pvalue: chi_square_gof(&x_counts, &config.p).1,
        z_marginal_pvalue,
        miss_rate: misses as f64 / trials as f64,
        bound,
        exp_bound: (-config.sigma * config.k as f64).exp(),
        miss_std: binomial_std(bound, trials),
        max_density_ratio: max_ratio,
    })
}
