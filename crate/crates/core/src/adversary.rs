//! Smooth data sources.
//!
//! Every adversary emits `(x_t, y_t)` pairs. The conditional law of `x_t` is
//! σ-smooth with respect to the certificate's base measure, i.e. its density
//! is at most `1/σ`; on finite ground sets this is checked exactly by
//! [`verify_smoothness`]. The hidden-µ threshold construction is the
//! exception: it is smooth only with respect to a measure the learner never
//! sees.

use std::sync::Arc;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    check_sigma, BaseMeasure, Context, HypothesisClass, OutputKind, SmoothnessCertificate,
};
use crate::rng::rng_from_seed;

const RATIO_TOLERANCE: f64 = 1e-9;

/// Denominator exponent of the dyadic coordinates used by the hidden-µ
/// construction.
const DYADIC_BITS: u32 = 52;
/// Rounds after which the dyadic step stops halving.
const DYADIC_MAX_ROUND: usize = 50;

/// How labels are produced from contexts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LabelRule {
    /// `y = f*(x)`, sign-flipped with probability `flip`.
    NoisyComparator { hypothesis: usize, flip: f64 },
    /// Independent uniform signs.
    Rademacher,
    /// `y_t = -sign(yhat_{t-1})`; a fair coin when no prediction is known.
    AdversarialFlip,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub context: Context,
    pub label: f64,
    pub prediction: Option<f64>,
}

#[derive(Clone, Debug)]
pub enum AdversaryKind {
    /// Fixed conditional law `p` over the ground set.
    Iid {
        p: Vec<f64>,
        sampler: WeightedIndex<f64>,
    },
    /// `p_t = (1 - σ) δ_target + σ µ`, projected onto the σ-smooth set.
    AdaptiveMixture,
    /// Binary-search threshold sequence with pre-drawn Rademacher labels.
    HiddenMuThreshold {
        numerators: Vec<u64>,
        labels: Vec<f64>,
    },
    /// Uniform draws on a shattering set of size `m`; `x*` is atom `star`.
    RademacherGap { shatter: Vec<usize>, star: usize },
}

impl AdversaryKind {
    pub fn name(&self) -> &'static str {
        match self {
            AdversaryKind::Iid { .. } => "iid",
            AdversaryKind::AdaptiveMixture => "adaptive_mixture",
            AdversaryKind::HiddenMuThreshold { .. } => "hidden_mu_threshold",
            AdversaryKind::RademacherGap { .. } => "rademacher_gap",
        }
    }
}

#[derive(Clone, Debug)]
pub struct AdversaryState {
    pub kind: AdversaryKind,
    pub certificate: SmoothnessCertificate,
    pub history: Vec<HistoryEntry>,
    label_rule: LabelRule,
    class: Option<Arc<HypothesisClass>>,
}

impl AdversaryState {
    /// I.i.d. draws from `p`. The smoothness of `p` against `mu` is a claim
    /// recorded in the certificate and checked by [`verify_smoothness`].
    pub fn iid(
        mu: Vec<f64>,
        p: Vec<f64>,
        sigma: f64,
        label_rule: LabelRule,
        class: Option<Arc<HypothesisClass>>,
    ) -> Result<Self> {
        let base = BaseMeasure::finite(mu)?;
        if p.len() != base.probs().map_or(0, <[f64]>::len) {
            return Err(Error::InvalidParameter(
                "p and mu must have the same support size".into(),
            ));
        }
        BaseMeasure::finite(p.clone())?;
        let sampler = WeightedIndex::new(&p).map_err(|e| Error::InvalidParameter(e.to_string()))?;
        Self::build(
            AdversaryKind::Iid { p, sampler },
            sigma,
            base,
            label_rule,
            class,
        )
    }

    pub fn adaptive_mixture(
        mu: Vec<f64>,
        sigma: f64,
        label_rule: LabelRule,
        class: Option<Arc<HypothesisClass>>,
    ) -> Result<Self> {
        let base = BaseMeasure::finite(mu)?;
        Self::build(
            AdversaryKind::AdaptiveMixture,
            sigma,
            base,
            label_rule,
            class,
        )
    }

    /// The hidden-µ threshold construction for `horizon` rounds.
    ///
    /// `x_1 = 0`, `x_2 = 1`, `y_1 = -1`, `y_2 = +1`, and for `t > 2`
    /// `x_t = x_{t-1} - y_{t-1} 2^{-(t-2)}` with Rademacher `y_t`. Coordinates
    /// are exact dyadic rationals; past round 50 the step stays at `2^-48`.
    /// The certificate's base measure is the uniform measure on `[0, 1]`, the
    /// natural public guess; the sequence is only `1/horizon`-smooth with
    /// respect to its own empirical measure.
    pub fn hidden_mu_threshold<R: Rng + ?Sized>(horizon: usize, rng: &mut R) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::InvalidParameter("horizon must be >= 1".into()));
        }
        let one = 1u64 << DYADIC_BITS;
        let mut numerators = Vec::with_capacity(horizon);
        let mut labels = Vec::with_capacity(horizon);
        for t in 1..=horizon {
            let (x, y) = match t {
                1 => (0u64, -1.0),
                2 => (one, 1.0),
                _ => {
                    let depth = (t - 2).min(DYADIC_MAX_ROUND - 2) as u32;
                    let step = 1u64 << (DYADIC_BITS - depth);
                    let prev = numerators[t - 2];
                    let x = if labels[t - 2] > 0.0 {
                        prev - step
                    } else {
                        prev + step
                    };
                    let y = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                    (x, y)
                }
            };
            numerators.push(x);
            labels.push(y);
        }
        let sigma = 1.0 / horizon as f64;
        Self::build(
            AdversaryKind::HiddenMuThreshold { numerators, labels },
            sigma,
            BaseMeasure::UniformInterval,
            LabelRule::Rademacher,
            None,
        )
    }

    fn build(
        kind: AdversaryKind,
        sigma: f64,
        base: BaseMeasure,
        label_rule: LabelRule,
        class: Option<Arc<HypothesisClass>>,
    ) -> Result<Self> {
        let certificate = SmoothnessCertificate::new(sigma, base)?;
        if let LabelRule::NoisyComparator { hypothesis, flip } = &label_rule {
            let class = class
                .as_ref()
                .ok_or_else(|| Error::InvalidParameter("noisy comparator needs a class".into()))?;
            if *hypothesis >= class.len() {
                return Err(Error::InvalidParameter(format!(
                    "comparator index {hypothesis} outside class of size {}",
                    class.len()
                )));
            }
            if !(0.0..=1.0).contains(flip) {
                return Err(Error::InvalidParameter(
                    "flip probability must lie in [0,1]".into(),
                ));
            }
        }
        Ok(Self {
            kind,
            certificate,
            history: Vec::new(),
            label_rule,
            class,
        })
    }

    pub fn sigma(&self) -> f64 {
        self.certificate.sigma
    }

    pub fn base_measure(&self) -> &BaseMeasure {
        &self.certificate.base
    }

    pub fn label_rule(&self) -> &LabelRule {
        &self.label_rule
    }

    pub fn round(&self) -> usize {
        self.history.len() + 1
    }

    /// Conditional law of the next context on a finite ground set.
    pub fn conditional_distribution(&self) -> Option<Vec<f64>> {
        let mu = self.certificate.base.probs()?;
        match &self.kind {
            AdversaryKind::Iid { p, .. } => Some(p.clone()),
            AdversaryKind::AdaptiveMixture => {
                let target = self.adaptive_target(mu.len());
                Some(project_smooth(mu, self.certificate.sigma, target))
            }
            AdversaryKind::RademacherGap { shatter, .. } => {
                let mut p = vec![0.0; mu.len()];
                for &a in shatter {
                    p[a] = 1.0 / shatter.len() as f64;
                }
                Some(p)
            }
            AdversaryKind::HiddenMuThreshold { .. } => None,
        }
    }

    /// The adaptive mixture aims at the previous context when the learner got
    /// it wrong, and at the far side of the ground set otherwise.
    fn adaptive_target(&self, n: usize) -> usize {
        match self.history.last() {
            None => 0,
            Some(last) => {
                let prev = match last.context {
                    Context::Atom(a) => a as usize,
                    _ => 0,
                };
                let erred = last.prediction.is_some_and(|p| p * last.label <= 0.0);
                if erred {
                    prev
                } else {
                    (prev + n / 2) % n
                }
            }
        }
    }

    /// Draws the next `(context, label)` pair. `last_prediction` is the
    /// learner's prediction on the previous round, if any.
    pub fn next_round<R: Rng + ?Sized>(
        &mut self,
        last_prediction: Option<f64>,
        rng: &mut R,
    ) -> Result<(Context, f64)> {
        if let Some(last) = self.history.last_mut() {
            if last_prediction.is_some() {
                last.prediction = last_prediction;
            }
        }
        let t = self.history.len();
        let context = match &self.kind {
            AdversaryKind::Iid { sampler, .. } => Context::Atom(sampler.sample(rng) as u32),
            AdversaryKind::HiddenMuThreshold { numerators, .. } => {
                let idx = t.min(numerators.len() - 1);
                Context::Coord(numerators[idx] as f64 / (1u64 << DYADIC_BITS) as f64)
            }
            AdversaryKind::RademacherGap { shatter, .. } => {
                Context::Atom(shatter[rng.random_range(0..shatter.len())] as u32)
            }
            AdversaryKind::AdaptiveMixture => {
                let p = self.conditional_distribution().expect("finite ground set");
                let idx = WeightedIndex::new(&p)
                    .expect("valid distribution")
                    .sample(rng);
                Context::Atom(idx as u32)
            }
        };
        let label = match &self.kind {
            AdversaryKind::HiddenMuThreshold { labels, .. } => labels[t.min(labels.len() - 1)],
            _ => self.draw_label(&context, rng)?,
        };
        self.history.push(HistoryEntry {
            context,
            label,
            prediction: None,
        });
        Ok((context, label))
    }

    fn draw_label<R: Rng + ?Sized>(&self, context: &Context, rng: &mut R) -> Result<f64> {
        let coin = |rng: &mut R| if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        Ok(match &self.label_rule {
            LabelRule::Rademacher => coin(rng),
            LabelRule::NoisyComparator { hypothesis, flip } => {
                let class = self.class.as_ref().expect("checked at construction");
                let y = class.evaluate(*hypothesis, context)?;
                if rng.random_bool(*flip) {
                    -y
                } else {
                    y
                }
            }
            LabelRule::AdversarialFlip => {
                match self.history.iter().rev().find_map(|h| h.prediction) {
                    Some(p) if p > 0.0 => -1.0,
                    Some(p) if p < 0.0 => 1.0,
                    _ => coin(rng),
                }
            }
        })
    }

    /// For the hidden-µ construction: a threshold consistent with every
    /// pre-drawn round, `min { x_t : y_t = +1 }`.
    pub fn realizing_threshold(&self) -> Option<f64> {
        match &self.kind {
            AdversaryKind::HiddenMuThreshold { numerators, labels } => {
                let scale = (1u64 << DYADIC_BITS) as f64;
                numerators
                    .iter()
                    .zip(labels)
                    .filter(|(_, y)| **y > 0.0)
                    .map(|(n, _)| *n as f64 / scale)
                    .min_by(|a, b| a.total_cmp(b))
            }
            _ => None,
        }
    }
}

/// Water-filling projection of `(1 - σ) δ_target + σ µ` onto distributions
/// with density at most `1/σ`: mass above the cap spills to atoms in order of
/// distance from `target` (ties to the lower index).
pub fn project_smooth(mu: &[f64], sigma: f64, target: usize) -> Vec<f64> {
    let n = mu.len();
    let mut q: Vec<f64> = mu.iter().map(|m| sigma * m).collect();
    q[target] += 1.0 - sigma;
    let mut excess = 0.0;
    for (qa, &m) in q.iter_mut().zip(mu) {
        let cap = m / sigma;
        if *qa > cap {
            excess += *qa - cap;
            *qa = cap;
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&a| (a.abs_diff(target), a));
    for a in order {
        if excess <= 0.0 {
            break;
        }
        let room = (mu[a] / sigma - q[a]).max(0.0);
        let add = room.min(excess);
        q[a] += add;
        excess -= add;
    }
    q
}

/// The most concentrated σ-smooth law in index order: fill each atom up to
/// `µ_a / σ` until the mass is exhausted. With `µ` uniform on `N` atoms and
/// `σN` an integer this is `(1/σ) µ` restricted to a set of µ-mass σ.
pub fn greedy_fill(mu: &[f64], sigma: f64) -> Vec<f64> {
    let mut remaining = 1.0f64;
    let mut p = vec![0.0; mu.len()];
    for (pa, &m) in p.iter_mut().zip(mu) {
        let take = (m / sigma).min(remaining);
        *pa = take;
        remaining -= take;
        if remaining <= 1e-15 {
            break;
        }
    }
    let total: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= total);
    p
}

/// `q ∝ weights · µ`, clipped at `µ / σ` with the clipped mass spread
/// proportionally over the unclipped atoms.
pub fn capped_tilt(mu: &[f64], sigma: f64, weights: &[f64]) -> Vec<f64> {
    let n = mu.len();
    let caps: Vec<f64> = mu.iter().map(|m| m / sigma).collect();
    let mut fixed = vec![false; n];
    let mut q = vec![0.0; n];
    loop {
        let fixed_mass: f64 = (0..n).filter(|&a| fixed[a]).map(|a| caps[a]).sum();
        let free_weight: f64 = (0..n)
            .filter(|&a| !fixed[a])
            .map(|a| weights[a] * mu[a])
            .sum();
        let scale = if free_weight > 0.0 {
            (1.0 - fixed_mass) / free_weight
        } else {
            0.0
        };
        let mut changed = false;
        for a in 0..n {
            if fixed[a] {
                q[a] = caps[a];
            } else {
                q[a] = weights[a] * mu[a] * scale;
                if q[a] > caps[a] {
                    fixed[a] = true;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    let total: f64 = q.iter().sum();
    q.iter_mut().for_each(|x| *x /= total);
    q
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessReport {
    pub max_density_ratio: f64,
    pub pass: bool,
}

/// Max of `p_t / µ` over the current round and `num_probes` simulated future
/// rounds (driven by alternating-sign predictions and a fixed seed).
pub fn verify_smoothness(state: &AdversaryState, num_probes: usize) -> Result<SmoothnessReport> {
    let mu = state.certificate.base.probs().ok_or_else(|| {
        Error::NotCheckableExactly(format!("{} has a continuous ground set", state.kind.name()))
    })?;
    if state.conditional_distribution().is_none() {
        return Err(Error::NotCheckableExactly(state.kind.name().into()));
    }
    let ratio_of = |p: &[f64]| {
        p.iter()
            .zip(mu)
            .map(|(&pa, &ma)| {
                if ma > 0.0 {
                    pa / ma
                } else if pa > 0.0 {
                    f64::INFINITY
                } else {
                    0.0
                }
            })
            .fold(0.0, f64::max)
    };
    let mut probe = state.clone();
    let mut rng = rng_from_seed(0x5300_7474);
    let mut max_ratio = 0.0f64;
    for i in 0..=num_probes {
        let p = probe.conditional_distribution().expect("finite");
        max_ratio = max_ratio.max(ratio_of(&p));
        if i < num_probes {
            let pred = if i % 2 == 0 { 1.0 } else { -1.0 };
            probe.next_round(Some(pred), &mut rng)?;
        }
    }
    Ok(SmoothnessReport {
        max_density_ratio: max_ratio,
        pass: max_ratio <= 1.0 / state.certificate.sigma + RATIO_TOLERANCE,
    })
}

/// Table class over `m + 1` atoms: all `2^m` sign patterns scaled by `scale`
/// on atoms `0..m`, and zero on atom `m` (the distinguished point).
pub fn rademacher_gap_class(m: usize, scale: f64) -> Result<HypothesisClass> {
    if m == 0 || m > 20 {
        return Err(Error::InvalidParameter(
            "shattering set size must be in 1..=20".into(),
        ));
    }
    if !(scale > 0.0 && scale <= 1.0) {
        return Err(Error::InvalidParameter("scale must lie in (0,1]".into()));
    }
    let rows = (0..1usize << m)
        .map(|pattern| {
            let mut row: Vec<f64> = (0..m)
                .map(|i| if pattern >> i & 1 == 1 { scale } else { -scale })
                .collect();
            row.push(0.0);
            row
        })
        .collect();
    HypothesisClass::table(rows, OutputKind::RealValued)
}

/// I.i.d. adversary uniform on `m` points that shatter `class` at `scale`
/// (witness 0), smooth with respect to `µ = (1 - σ) δ_{x*} + σ Unif(shatter)`
/// where `x*` is an atom on which every hypothesis is zero.
pub fn build_rademacher_gap_adversary(
    sigma: f64,
    m: usize,
    class: Arc<HypothesisClass>,
    scale: f64,
) -> Result<AdversaryState> {
    check_sigma(sigma)?;
    let n = class
        .ground_size()
        .ok_or_else(|| Error::InvalidParameter("class needs a finite ground set".into()))?;
    let star = class.constant_atom(0.0).ok_or_else(|| {
        Error::InvalidParameter("class has no point x* with f(x*) = 0 for all f".into())
    })?;
    let shatter: Vec<usize> = (0..n).filter(|&a| a != star).take(m).collect();
    if shatter.len() < m || !is_shattered(&class, &shatter, scale) {
        return Err(Error::InvalidParameter(format!(
            "class does not shatter {m} points at scale {scale}"
        )));
    }
    let mut mu = vec![0.0; n];
    mu[star] = 1.0 - sigma;
    for &a in &shatter {
        mu[a] += sigma / m as f64;
    }
    let base = BaseMeasure::finite(mu)?;
    AdversaryState::build(
        AdversaryKind::RademacherGap { shatter, star },
        sigma,
        base,
        LabelRule::Rademacher,
        Some(class),
    )
}

fn is_shattered(class: &HypothesisClass, points: &[usize], scale: f64) -> bool {
    let m = points.len();
    (0..1usize << m).all(|pattern| {
        (0..class.len()).any(|h| {
            points.iter().enumerate().all(|(i, &a)| {
                let eps = if pattern >> i & 1 == 1 { 1.0 } else { -1.0 };
                eps * class.eval(h, &Context::Atom(a as u32)) >= scale / 2.0 - 1e-12
            })
        })
    })
}
