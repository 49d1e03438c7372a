//! Smoothed contextual bandits via SquareCB.
//!
//! An online square-loss regressor over the product class `F : X x [K] -> [0, 1]`
//! predicts the loss of every action; actions are drawn by inverse gap
//! weighting and only the chosen action's loss is fed back. Contexts in `X`
//! are atoms `0..N` and the pair `(x, a)` is atom `x K + a` of the product
//! ground set.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::adversary::AdversaryState;
use crate::error::{Error, Result};
use crate::ftpl::FtplLearner;
use crate::model::{
    check_sigma, finalize_regret, Context, HypothesisClass, LossFunction, OutputKind, RegretTrace,
    RoundRecord,
};
use crate::oracle::Oracle;
use crate::relax::RelaxLearner;

/// Inverse gap weighting: `p(a) = 1 / (K + gamma (yhat(a) - yhat(a*)))` for
/// `a != a*`, and `a* = argmin yhat` (lowest index) gets the rest.
pub fn igw_distribution(predictions: &[f64], gamma: f64) -> Result<Vec<f64>> {
    let k = predictions.len();
    if k == 0 {
        return Err(Error::InvalidParameter("need at least one action".into()));
    }
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "gamma = {gamma} must be positive"
        )));
    }
    let best = crate::oracle::argmin_lowest(predictions);
    let mut p: Vec<f64> = predictions
        .iter()
        .map(|&y| 1.0 / (k as f64 + gamma * (y - predictions[best])))
        .collect();
    p[best] = 0.0;
    let rest: f64 = p.iter().sum();
    p[best] = 1.0 - rest;
    if p[best] < 0.0 {
        return Err(Error::Invariant(format!(
            "negative residual mass {}",
            p[best]
        )));
    }
    Ok(p)
}

/// Smoothness of `(x, a)` against `mu (x) Unif([K])` when `x` is
/// `sigma`-smooth: any action rule is `1/K`-smooth, so `sigma / K`.
pub fn compose_smoothness(sigma: f64, k: usize) -> Result<f64> {
    check_sigma(sigma)?;
    if k == 0 {
        return Err(Error::InvalidParameter("K must be >= 1".into()));
    }
    Ok(sigma / k as f64)
}

/// `mu (x) Unif([K])` on the product ground set.
pub fn product_measure(mu: &[f64], k: usize) -> Vec<f64> {
    mu.iter()
        .flat_map(|&m| std::iter::repeat_n(m / k as f64, k))
        .collect()
}

pub fn pair(x: usize, a: usize, k: usize) -> Context {
    Context::Atom((x * k + a) as u32)
}

/// Massart bound `sqrt(2 T ln |F|)` on the Rademacher complexity of a finite
/// class with values in `[-1, 1]`.
pub fn massart_proxy(horizon: usize, class_size: usize) -> f64 {
    (2.0 * horizon as f64 * (class_size.max(2) as f64).ln()).sqrt()
}

/// `gamma = 12 ln(T) sqrt(T sigma / (L R))`.
pub fn default_gamma(horizon: usize, sigma: f64, lipschitz: f64, r_hat: f64) -> f64 {
    let t = horizon as f64;
    12.0 * t.ln().max(1.0) * (t * sigma / (lipschitz * r_hat)).sqrt()
}

/// `(gamma/2) Reg_Sq + 4 gamma ln(2T) + 2KT/gamma + sqrt(2T ln(2T)) + 1`.
pub fn chain_bound(reg_sq: f64, gamma: f64, k: usize, horizon: usize) -> f64 {
    let t = horizon as f64;
    let log = (2.0 * t).ln();
    gamma / 2.0 * reg_sq
        + 4.0 * gamma * log
        + 2.0 * k as f64 * t / gamma
        + (2.0 * t * log).sqrt()
        + 1.0
}

/// Random product class with values in `{low, high}`.
pub fn random_product_class<R: Rng + ?Sized>(
    size: usize,
    contexts: usize,
    k: usize,
    low: f64,
    high: f64,
    rng: &mut R,
) -> Result<HypothesisClass> {
    let rows = (0..size)
        .map(|_| {
            (0..contexts * k)
                .map(|_| if rng.random_bool(0.5) { high } else { low })
                .collect()
        })
        .collect();
    HypothesisClass::table(rows, OutputKind::RealValued)
}

/// `pi_f(x) = argmin_a f(x, a)`, lowest index on ties.
pub fn policy(class: &HypothesisClass, h: usize, x: usize, k: usize) -> usize {
    let values: Vec<f64> = (0..k).map(|a| class.eval(h, &pair(x, a, k))).collect();
    crate::oracle::argmin_lowest(&values)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegressorKind {
    RelaxGeneral,
    FtplDual,
}

impl RegressorKind {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "relax-general" => Ok(Self::RelaxGeneral),
            "ftpl-dual" => Ok(Self::FtplDual),
            other => Err(Error::Config(format!(
                "unknown regressor '{other}' (valid: relax-general, ftpl-dual)"
            ))),
        }
    }
}

/// Online square-loss regressor over the product class.
#[derive(Clone, Debug)]
pub enum Regressor {
    Relax(RelaxLearner),
    Ftpl(FtplLearner),
}

impl Regressor {
    /// Predicted loss of every action at context `x`.
    fn predict<R: Rng + ?Sized>(
        &mut self,
        x: usize,
        k: usize,
        oracle: &mut Oracle,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        match self {
            Regressor::Relax(l) => (0..k)
                .map(|a| l.predict(pair(x, a, k), oracle, rng))
                .collect(),
            Regressor::Ftpl(l) => {
                let h = l.commit(oracle, rng)?;
                Ok((0..k)
                    .map(|a| oracle.class().eval(h, &pair(x, a, k)))
                    .collect())
            }
        }
    }

    fn observe(&mut self, ctx: Context, y: f64) {
        match self {
            Regressor::Relax(l) => l.observe(ctx, y),
            Regressor::Ftpl(l) => l.observe(ctx, y),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BanditRound {
    pub t: usize,
    pub context: usize,
    pub predictions: Vec<f64>,
    pub action: usize,
    pub observed_loss: f64,
    pub distribution: Vec<f64>,
    /// Loss the best policy's action would have incurred this round.
    pub comparator_loss: f64,
    pub oracle_calls_so_far: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BanditOutcome {
    pub rounds: Vec<BanditRound>,
    /// Bandit trace: context `x_t`, observed loss, prediction for `a_t`.
    pub cb_trace: RegretTrace,
    /// Square-loss trace of the regressor on product contexts.
    pub sq_trace: RegretTrace,
    pub reg_cb: f64,
    /// `sum_t sum_a p_t(a) (f*(x_t, a) - f*(x_t, pi(x_t)))`: the regret with
    /// loss noise integrated out.
    pub expected_reg_cb: f64,
    pub reg_sq: f64,
    pub gamma: f64,
    pub clamped_predictions: usize,
}

impl BanditOutcome {
    pub fn chain_bound(&self, k: usize) -> f64 {
        chain_bound(self.reg_sq, self.gamma, k, self.rounds.len())
    }
}

/// Runs SquareCB for `horizon` rounds. Losses of all actions are drawn as
/// independent `Bernoulli(f*(x, a))`, so `E[l_t(a) | x] = f*(x, a)`.
#[allow(clippy::too_many_arguments)]
pub fn run_square_cb<R: Rng + ?Sized>(
    adversary: &mut AdversaryState,
    regressor: &mut Regressor,
    oracle: &mut Oracle,
    f_star: usize,
    k: usize,
    gamma: f64,
    horizon: usize,
    rng: &mut R,
) -> Result<BanditOutcome> {
    let class = oracle.shared_class();
    if f_star >= class.len() {
        return Err(Error::InvalidParameter("f* outside the class".into()));
    }
    let sq_loss = LossFunction::unit_square();
    let mut rounds = Vec::with_capacity(horizon);
    let mut cb_trace = RegretTrace::new();
    let mut sq_trace = RegretTrace::new();
    let mut clamped = 0usize;
    let (mut learner_total, mut comparator_total) = (0.0, 0.0);
    let mut expected_reg_cb = 0.0;
    for t in 1..=horizon {
        let (ctx, _) = adversary.next_round(None, rng)?;
        let x = match ctx {
            Context::Atom(a) => a as usize,
            other => {
                return Err(Error::DomainMismatch(format!(
                    "bandit contexts must be atoms, got {other}"
                )))
            }
        };
        let raw = regressor.predict(x, k, oracle, rng)?;
        let predictions: Vec<f64> = raw
            .iter()
            .map(|&y| {
                if !(0.0..=1.0).contains(&y) {
                    clamped += 1;
                }
                y.clamp(0.0, 1.0)
            })
            .collect();
        let distribution = igw_distribution(&predictions, gamma)?;
        let action = WeightedIndex::new(&distribution)
            .map_err(|e| Error::Invariant(e.to_string()))?
            .sample(rng);
        let losses: Vec<f64> = (0..k)
            .map(|a| {
                if rng.random_bool(class.eval(f_star, &pair(x, a, k))) {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        let observed = losses[action];
        let best = policy(&class, f_star, x, k);
        let comparator = losses[best];
        let mean = |a: usize| class.eval(f_star, &pair(x, a, k));
        expected_reg_cb += (0..k)
            .map(|a| distribution[a] * (mean(a) - mean(best)))
            .sum::<f64>();
        learner_total += observed;
        comparator_total += comparator;
        let ctx_pair = pair(x, action, k);
        regressor.observe(ctx_pair, observed);
        let calls = oracle.call_count();
        cb_trace.push(RoundRecord {
            t,
            context: ctx,
            label: observed,
            prediction: predictions[action],
            hypothesis_index: None,
            instant_loss: observed,
            oracle_calls_so_far: calls,
        });
        sq_trace.push(RoundRecord {
            t,
            context: ctx_pair,
            label: observed,
            prediction: predictions[action],
            hypothesis_index: None,
            instant_loss: sq_loss.evaluate(predictions[action], observed),
            oracle_calls_so_far: calls,
        });
        rounds.push(BanditRound {
            t,
            context: x,
            predictions,
            action,
            observed_loss: observed,
            distribution,
            comparator_loss: comparator,
            oracle_calls_so_far: calls,
        });
    }
    if clamped > 0 {
        log::warn!("clamped {clamped} regressor predictions into [0, 1]");
    }
    let reg_cb = learner_total - comparator_total;
    cb_trace.cumulative_regret = Some(reg_cb);
    let (reg_sq, sq_trace) = if sq_trace.is_empty() {
        (0.0, sq_trace)
    } else {
        let tr = finalize_regret(sq_trace, &class, &sq_loss)?;
        (tr.cumulative_regret.unwrap_or(0.0), tr)
    };
    Ok(BanditOutcome {
        rounds,
        cb_trace,
        sq_trace,
        reg_cb,
        expected_reg_cb,
        reg_sq,
        gamma,
        clamped_predictions: clamped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adversary::{greedy_fill, LabelRule};
    use crate::ftpl::{schedule, FtplVariant};
    use crate::model::BaseMeasure;
    use crate::rng::rng_from_seed;
    use std::sync::Arc;

    #[test]
    fn igw_examples() {
        let p = igw_distribution(&[0.3, 0.3, 0.3], 5.0).unwrap();
        assert!(p.iter().all(|x| (x - 1.0 / 3.0).abs() < 1e-15));
        let p = igw_distribution(&[0.0, 1.0], 2.0).unwrap();
        assert_eq!(p, vec![0.75, 0.25]);
        let p = igw_distribution(&[0.5, 0.1, 0.9], 1e9).unwrap();
        assert!((p[1] - 1.0).abs() < 1e-6);
        assert!(igw_distribution(&[0.0, 1.0], 0.0).is_err());
    }

    #[test]
    fn compose_examples() {
        assert_eq!(compose_smoothness(1.0, 1).unwrap(), 1.0);
        assert_eq!(compose_smoothness(0.5, 4).unwrap(), 0.125);
        assert!(compose_smoothness(0.0, 2).is_err());
    }

    #[test]
    fn single_action_has_zero_regret() {
        let mut rng = rng_from_seed(4);
        let n = 5;
        let class = Arc::new(random_product_class(3, n, 1, 0.2, 0.8, &mut rng).unwrap());
        let mu = vec![1.0 / n as f64; n];
        let mut adv = AdversaryState::iid(
            mu.clone(),
            greedy_fill(&mu, 0.5),
            0.5,
            LabelRule::Rademacher,
            None,
        )
        .unwrap();
        let base = BaseMeasure::finite(product_measure(&mu, 1)).unwrap();
        let sched = schedule(50, 0.5, 2.0, 1.0, FtplVariant::Dual).unwrap();
        let mut reg = Regressor::Ftpl(FtplLearner::new(sched, base).unwrap());
        let mut oracle = Oracle::exact(class, LossFunction::unit_square());
        let out = run_square_cb(&mut adv, &mut reg, &mut oracle, 0, 1, 10.0, 50, &mut rng).unwrap();
        assert_eq!(out.reg_cb, 0.0);
        assert!(out.rounds.iter().all(|r| r.action == 0));
        assert_eq!(oracle.call_count(), 50);
    }
}
