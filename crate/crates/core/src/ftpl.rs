//! Proper follow-the-perturbed-leader with Gaussian-process perturbations.
//!
//! Every round draws fresh anchors `Z_i ~ mu` and coefficients
//! `gamma_i ~ N(0, 1)` and commits, before seeing `x_t`, to the hypothesis
//! returned by a single oracle call on the perturbed cumulative loss.

use std::collections::HashMap;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    check_sigma, multinomial, BaseMeasure, Context, HypothesisClass, LossFunction, OutputKind,
};
use crate::oracle::{ErmQuery, Oracle, WeightedExample};
use crate::relax::History;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// `(1/sqrt n) sum gamma_i f(Z_i)`.
    InvSqrtN,
    /// `sum gamma_j l(f(Z'_j), y'_j)`.
    None,
}

/// One term `coeff * f(context)`, or `coeff * l(f(context), label)` when a
/// label is attached.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationTerm {
    pub context: Context,
    pub label: Option<f64>,
    pub coeff: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianPerturbation {
    pub n: usize,
    pub normalization: Normalization,
    pub terms: Vec<PerturbationTerm>,
}

fn gaussian<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

impl GaussianPerturbation {
    pub fn sample_anchors<R: Rng + ?Sized>(
        base: &BaseMeasure,
        n: usize,
        rng: &mut R,
    ) -> Vec<Context> {
        (0..n).map(|_| base.sample(rng)).collect()
    }

    /// Anchors `(Z'_j, y'_j)` with `y'_j` uniform on the `epsilon` grid.
    pub fn sample_label_anchors<R: Rng + ?Sized>(
        base: &BaseMeasure,
        n: usize,
        epsilon: f64,
        rng: &mut R,
    ) -> Result<Vec<(Context, f64)>> {
        let grid = epsilon_grid(epsilon)?;
        Ok((0..n)
            .map(|_| (base.sample(rng), grid[rng.random_range(0..grid.len())]))
            .collect())
    }

    /// Fresh coefficients on fixed anchors.
    pub fn from_anchors<R: Rng + ?Sized>(
        anchors: &[Context],
        normalization: Normalization,
        rng: &mut R,
    ) -> Self {
        let terms = anchors
            .iter()
            .map(|&context| PerturbationTerm {
                context,
                label: None,
                coeff: gaussian(rng),
            })
            .collect();
        Self {
            n: anchors.len(),
            normalization,
            terms,
        }
    }

    pub fn from_label_anchors<R: Rng + ?Sized>(anchors: &[(Context, f64)], rng: &mut R) -> Self {
        let terms = anchors
            .iter()
            .map(|&(context, y)| PerturbationTerm {
                context,
                label: Some(y),
                coeff: gaussian(rng),
            })
            .collect();
        Self {
            n: anchors.len(),
            normalization: Normalization::None,
            terms,
        }
    }

    /// `omega_hat` with `n` anchors. On a finite ground set the anchors are
    /// summarized by occupation counts `c_a` and the summed coefficient on
    /// atom `a` is drawn as `N(0, c_a)`, which has the same law.
    pub fn sample_process<R: Rng + ?Sized>(base: &BaseMeasure, n: usize, rng: &mut R) -> Self {
        if !base.is_finite() {
            let anchors = Self::sample_anchors(base, n, rng);
            return Self::from_anchors(&anchors, Normalization::InvSqrtN, rng);
        }
        let terms = base
            .sample_counts(n as u64, rng)
            .expect("finite base measure")
            .into_iter()
            .map(|(context, c)| PerturbationTerm {
                context,
                label: None,
                coeff: (c as f64).sqrt() * gaussian(rng),
            })
            .collect();
        Self {
            n,
            normalization: Normalization::InvSqrtN,
            terms,
        }
    }

    /// `omega_hat'` with `n` labelled anchors, aggregated per
    /// `(atom, label)` cell on finite ground sets.
    pub fn sample_label_process<R: Rng + ?Sized>(
        base: &BaseMeasure,
        n: usize,
        epsilon: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if !base.is_finite() {
            let anchors = Self::sample_label_anchors(base, n, epsilon, rng)?;
            return Ok(Self::from_label_anchors(&anchors, rng));
        }
        let grid = epsilon_grid(epsilon)?;
        let uniform = vec![1.0 / grid.len() as f64; grid.len()];
        let mut terms = Vec::new();
        for (context, c) in base.sample_counts(n as u64, rng)? {
            for (&y, cy) in grid.iter().zip(multinomial(&uniform, c, rng)) {
                if cy > 0 {
                    terms.push(PerturbationTerm {
                        context,
                        label: Some(y),
                        coeff: (cy as f64).sqrt() * gaussian(rng),
                    });
                }
            }
        }
        Ok(Self {
            n,
            normalization: Normalization::None,
            terms,
        })
    }

    pub fn scale(&self) -> f64 {
        match self.normalization {
            Normalization::InvSqrtN if self.n > 0 => 1.0 / (self.n as f64).sqrt(),
            _ => 1.0,
        }
    }

    /// The process evaluated at hypothesis `h`.
    pub fn value(&self, class: &HypothesisClass, loss: &LossFunction, h: usize) -> f64 {
        self.scale()
            * self
                .terms
                .iter()
                .map(|t| {
                    let v = class.eval(h, &t.context);
                    t.coeff * t.label.map_or(v, |y| loss.evaluate(v, y))
                })
                .sum::<f64>()
    }

    /// Oracle rows realizing `multiplier * omega(f)`.
    pub fn rows(&self, multiplier: f64) -> impl Iterator<Item = WeightedExample> + '_ {
        let w = multiplier * self.scale();
        self.terms.iter().map(move |t| match t.label {
            None => WeightedExample::identity(t.context, w * t.coeff),
            Some(y) => WeightedExample::main(t.context, y, w * t.coeff),
        })
    }
}

/// `{ k eps : |k eps| <= 1 }`, plus both endpoints when `2 / eps` is an
/// integer.
pub fn epsilon_grid(epsilon: f64) -> Result<Vec<f64>> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "label grid step {epsilon} must be positive"
        )));
    }
    let kmax = (1.0 / epsilon + 1e-9).floor() as i64;
    let mut grid: Vec<f64> = (-kmax..=kmax)
        .map(|k| (k as f64 * epsilon).clamp(-1.0, 1.0))
        .collect();
    let ratio = 2.0 / epsilon;
    if (ratio - ratio.round()).abs() < 1e-9 {
        grid.push(-1.0);
        grid.push(1.0);
    }
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    Ok(grid)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FtplVariant {
    Classification,
    Dual,
    Single,
}

impl FtplVariant {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "classification" | "ftpl-cls" => Ok(Self::Classification),
            "dual" | "ftpl-dual" => Ok(Self::Dual),
            "single" | "ftpl-single" => Ok(Self::Single),
            other => Err(Error::InvalidParameter(format!(
                "unknown FTPL variant '{other}' (valid: classification, dual, single)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FtplSchedule {
    pub variant: FtplVariant,
    pub eta: f64,
    pub n: usize,
    pub m: usize,
    pub epsilon: Option<f64>,
    pub zeta: f64,
}

/// Ceiling that forgives floating-point noise just above an integer.
fn ceil_tolerant(x: f64) -> usize {
    (x - 1e-9 * x.abs().max(1.0)).ceil().max(1.0) as usize
}

/// Parameter schedule for `T` rounds against `sigma`-smooth data with an
/// `L`-Lipschitz loss. `d_or_p` is the scale exponent `p` of the dual
/// variant (`p >= 2` switches to `n = T`, `eps = (sigma T)^{-1/(p+1)}`,
/// `eta = T^{2/p}`); the other variants ignore it.
pub fn schedule(
    t: usize,
    sigma: f64,
    lipschitz: f64,
    d_or_p: f64,
    variant: FtplVariant,
) -> Result<FtplSchedule> {
    if t == 0 {
        return Err(Error::InvalidParameter("T must be >= 1".into()));
    }
    check_sigma(sigma)?;
    let tf = t as f64;
    let s = match variant {
        FtplVariant::Classification => {
            let eta = (tf * (tf * lipschitz / sigma).ln().max(0.0) / sigma).sqrt();
            let n = ceil_tolerant(tf / sigma.sqrt());
            FtplSchedule {
                variant,
                eta,
                n,
                m: n,
                epsilon: None,
                zeta: 0.0,
            }
        }
        FtplVariant::Dual if d_or_p >= 2.0 => {
            let eps = (sigma * tf).powf(-1.0 / (d_or_p + 1.0));
            FtplSchedule {
                variant,
                eta: tf.powf(2.0 / d_or_p),
                n: t,
                m: t,
                epsilon: Some(eps),
                zeta: 0.0,
            }
        }
        FtplVariant::Dual => {
            let n = ceil_tolerant((tf / sigma).sqrt());
            let eta = tf.powf(2.0 / 3.0) * sigma.powf(-1.0 / 3.0);
            FtplSchedule {
                variant,
                eta,
                n,
                m: n,
                epsilon: Some(tf.powf(-1.0 / 3.0)),
                zeta: 0.0,
            }
        }
        FtplVariant::Single => {
            let eta = tf.powf(5.0 / 12.0) * sigma.powf(-0.25);
            let n = ceil_tolerant(eta * eta);
            let eps = tf.powf(-0.75) * sigma.powf(-0.25);
            FtplSchedule {
                variant,
                eta,
                n,
                m: n,
                epsilon: Some(eps),
                zeta: 0.0,
            }
        }
    };
    Ok(s)
}

fn history_query(history: &History) -> ErmQuery {
    let mut q = ErmQuery::new();
    q.extend(history.rows().iter().copied());
    q
}

/// `argmin_f L_{t-1}(f) + eta omega_hat(f)`, one oracle call.
pub fn ftpl_select_classification(
    history: &History,
    pert: &GaussianPerturbation,
    eta: f64,
    oracle: &mut Oracle,
) -> Result<usize> {
    if oracle.class().kind() != OutputKind::Binary {
        return Err(Error::InvalidParameter(
            "classification variant needs a binary class".into(),
        ));
    }
    let mut q = history_query(history);
    q.extend(pert.rows(eta));
    Ok(oracle.query(&q)?.hypothesis_index)
}

/// `argmin_f L_{t-1}(f) + eta omega_hat_m(f) + omega_hat'_n(f)`, one oracle
/// call.
pub fn ftpl_select_dual(
    history: &History,
    pert_m: &GaussianPerturbation,
    pert_n: &GaussianPerturbation,
    eta: f64,
    oracle: &mut Oracle,
) -> Result<usize> {
    let mut q = history_query(history);
    q.extend(pert_m.rows(eta));
    q.extend(pert_n.rows(1.0));
    Ok(oracle.query(&q)?.hypothesis_index)
}

/// `argmin_f L_{t-1}(f) + (eta / sqrt n) omega_hat'_n(f)`, one oracle call.
pub fn ftpl_select_single(
    history: &History,
    pert: &GaussianPerturbation,
    eta_over_sqrt_n: f64,
    oracle: &mut Oracle,
) -> Result<usize> {
    let mut q = history_query(history);
    q.extend(pert.rows(eta_over_sqrt_n));
    Ok(oracle.query(&q)?.hypothesis_index)
}

/// Adds a point `x*` on which every hypothesis equals one and reweights the
/// base measure to `(1/3) mu + (2/3) delta_{x*}`.
pub fn norm_lower_bound(
    class: HypothesisClass,
    base: BaseMeasure,
) -> Result<(HypothesisClass, BaseMeasure)> {
    Ok((class.with_star(1.0), base.with_star(2.0 / 3.0)?))
}

/// A proper learner: `commit` picks `f_t` before the context is revealed.
#[derive(Clone, Debug)]
pub struct FtplLearner {
    pub schedule: FtplSchedule,
    pub base: BaseMeasure,
    pub history: History,
}

impl FtplLearner {
    pub fn new(schedule: FtplSchedule, base: BaseMeasure) -> Result<Self> {
        if !(schedule.eta >= 0.0 && schedule.eta.is_finite()) {
            return Err(Error::InvalidParameter(
                "eta must be finite and >= 0".into(),
            ));
        }
        if schedule.variant != FtplVariant::Classification && schedule.epsilon.is_none() {
            return Err(Error::InvalidParameter("label grid step required".into()));
        }
        Ok(Self {
            schedule,
            base,
            history: History::new(),
        })
    }

    pub fn commit<R: Rng + ?Sized>(&mut self, oracle: &mut Oracle, rng: &mut R) -> Result<usize> {
        let s = &self.schedule;
        match s.variant {
            FtplVariant::Classification => {
                let pert = GaussianPerturbation::sample_process(&self.base, s.n, rng);
                ftpl_select_classification(&self.history, &pert, s.eta, oracle)
            }
            FtplVariant::Dual => {
                let pert_m = GaussianPerturbation::sample_process(&self.base, s.m, rng);
                let eps = s.epsilon.expect("checked");
                let pert_n = GaussianPerturbation::sample_label_process(&self.base, s.n, eps, rng)?;
                ftpl_select_dual(&self.history, &pert_m, &pert_n, s.eta, oracle)
            }
            FtplVariant::Single => {
                let eps = s.epsilon.expect("checked");
                let pert = GaussianPerturbation::sample_label_process(&self.base, s.n, eps, rng)?;
                let scale = if s.n > 0 {
                    s.eta / (s.n as f64).sqrt()
                } else {
                    0.0
                };
                ftpl_select_single(&self.history, &pert, scale, oracle)
            }
        }
    }

    pub fn observe(&mut self, x: Context, y: f64) {
        self.history.push(x, y);
    }
}

/// Fraction of `draws` fresh perturbations under which consecutive commits
/// differ, for a fixed history. Used to study stability.
pub fn switch_rate<R: Rng + ?Sized>(
    learner: &FtplLearner,
    oracle: &mut Oracle,
    draws: usize,
    rng: &mut R,
) -> Result<f64> {
    let mut probe = learner.clone();
    let mut switches = 0usize;
    let mut prev = probe.commit(oracle, rng)?;
    for _ in 0..draws {
        let next = probe.commit(oracle, rng)?;
        if next != prev {
            switches += 1;
        }
        prev = next;
    }
    Ok(switches as f64 / draws.max(1) as f64)
}

/// Empirical selection frequencies over `draws` fresh perturbations.
pub fn selection_frequencies<R: Rng + ?Sized>(
    learner: &FtplLearner,
    oracle: &mut Oracle,
    draws: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let mut probe = learner.clone();
    let mut counts: HashMap<usize, usize> = HashMap::new();
    for _ in 0..draws {
        *counts.entry(probe.commit(oracle, rng)?).or_default() += 1;
    }
    let mut out = vec![0.0; oracle.class().len()];
    for (h, c) in counts {
        out[h] = c as f64 / draws as f64;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use std::sync::Arc;

    #[test]
    fn schedule_examples() {
        let s = schedule(1000, 0.1, 1.0, 1.0, FtplVariant::Classification).unwrap();
        assert!((s.eta - (1000.0 * 10000f64.ln() / 0.1).sqrt()).abs() < 1e-9);
        assert!((s.eta - 303.5).abs() < 0.05);
        assert_eq!(s.n, 3163);

        let s = schedule(1000, 0.1, 1.0, 1.0, FtplVariant::Dual).unwrap();
        assert!((s.eta - 215.44).abs() < 0.01);
        assert_eq!(s.n, 100);
        assert!((s.epsilon.unwrap() - 0.1).abs() < 1e-12);

        let s = schedule(4096, 1.0, 1.0, 1.0, FtplVariant::Single).unwrap();
        assert!((s.eta - 32.0).abs() < 1e-9);
        assert_eq!(s.n, 1024);
        assert!((s.epsilon.unwrap() - 2f64.powi(-9)).abs() < 1e-15);
        assert!((s.eta / (s.n as f64).sqrt() - 1.0).abs() < 1e-12);

        let s = schedule(1000, 0.1, 1.0, 3.0, FtplVariant::Dual).unwrap();
        assert_eq!(s.n, 1000);
        assert!((s.epsilon.unwrap() - 100f64.powf(-0.25)).abs() < 1e-12);
        assert!((s.eta - 1000f64.powf(2.0 / 3.0)).abs() < 1e-9);

        assert!(FtplVariant::parse("bogus").is_err());
        assert!(schedule(0, 0.5, 1.0, 1.0, FtplVariant::Dual).is_err());
    }

    #[test]
    fn epsilon_grids() {
        assert_eq!(epsilon_grid(2.0).unwrap(), vec![-1.0, 0.0, 1.0]);
        assert_eq!(epsilon_grid(0.5).unwrap(), vec![-1.0, -0.5, 0.0, 0.5, 1.0]);
        assert_eq!(epsilon_grid(0.3).unwrap().len(), 7);
        assert_eq!(epsilon_grid(2.0 / 3.0).unwrap().len(), 5);
        assert_eq!(epsilon_grid(2f64.powi(-9)).unwrap().len(), 1025);
        assert!(epsilon_grid(0.0).is_err());
    }

    #[test]
    fn zero_eta_is_follow_the_leader() {
        let class = Arc::new(HypothesisClass::threshold_grid(6).unwrap().on_atom_grid(10));
        let loss = LossFunction::linear();
        let base = BaseMeasure::uniform(10).unwrap();
        let mut rng = rng_from_seed(3);
        let mut history = History::new();
        for i in 0..15u32 {
            history.push(Context::Atom(i % 10), if i % 3 == 0 { -1.0 } else { 1.0 });
        }
        let ftl = crate::oracle::argmin_lowest(&history.losses(&class, &loss));
        let mut oracle = Oracle::exact(Arc::clone(&class), loss.clone());
        let p = GaussianPerturbation::sample_process(&base, 50, &mut rng);
        assert_eq!(
            ftpl_select_classification(&history, &p, 0.0, &mut oracle).unwrap(),
            ftl
        );
        let q = GaussianPerturbation::sample_label_process(&base, 0, 0.5, &mut rng).unwrap();
        assert_eq!(
            ftpl_select_dual(&history, &p, &q, 0.0, &mut oracle).unwrap(),
            ftl
        );
        let q = GaussianPerturbation::sample_label_process(&base, 50, 0.5, &mut rng).unwrap();
        assert_eq!(
            ftpl_select_single(&history, &q, 0.0, &mut oracle).unwrap(),
            ftl
        );
        assert_eq!(oracle.call_count(), 3);
    }

    #[test]
    fn symmetric_pair_is_selected_evenly() {
        let class = Arc::new(
            HypothesisClass::table(
                vec![vec![1.0, -1.0, 1.0], vec![-1.0, 1.0, -1.0]],
                OutputKind::Binary,
            )
            .unwrap(),
        );
        let base = BaseMeasure::uniform(3).unwrap();
        let schedule = FtplSchedule {
            variant: FtplVariant::Classification,
            eta: 5.0,
            n: 30,
            m: 30,
            epsilon: None,
            zeta: 0.0,
        };
        let learner = FtplLearner::new(schedule, base).unwrap();
        let mut oracle = Oracle::exact(class, LossFunction::linear());
        let mut rng = rng_from_seed(17);
        let draws = 10_000;
        let freq = selection_frequencies(&learner, &mut oracle, draws, &mut rng).unwrap();
        let sd = crate::stats::binomial_std(0.5, draws);
        assert!((freq[0] - 0.5).abs() <= 3.0 * sd, "{freq:?}");
    }

    #[test]
    fn single_hypothesis_is_always_chosen() {
        let class = Arc::new(
            HypothesisClass::table(vec![vec![0.2, -0.4]], OutputKind::RealValued).unwrap(),
        );
        let base = BaseMeasure::uniform(2).unwrap();
        let s = schedule(100, 0.5, 1.0, 1.0, FtplVariant::Dual).unwrap();
        let mut learner = FtplLearner::new(s, base).unwrap();
        let mut oracle = Oracle::exact(class, LossFunction::square());
        let mut rng = rng_from_seed(1);
        for _ in 0..10 {
            assert_eq!(learner.commit(&mut oracle, &mut rng).unwrap(), 0);
        }
    }

    #[test]
    fn classification_rejects_real_valued_classes() {
        let class =
            Arc::new(HypothesisClass::table(vec![vec![0.2]], OutputKind::RealValued).unwrap());
        let mut oracle = Oracle::exact(class, LossFunction::square());
        let p = GaussianPerturbation {
            n: 0,
            normalization: Normalization::InvSqrtN,
            terms: vec![],
        };
        assert!(ftpl_select_classification(&History::new(), &p, 1.0, &mut oracle).is_err());
    }

    #[test]
    fn star_wrapper() {
        let class = HypothesisClass::threshold_grid(4).unwrap().on_atom_grid(5);
        let (class, base) = norm_lower_bound(class, BaseMeasure::uniform(5).unwrap()).unwrap();
        for h in 0..class.len() {
            assert_eq!(class.evaluate(h, &Context::Star).unwrap(), 1.0);
        }
        let mut rng = rng_from_seed(5);
        let n = 30_000;
        let stars = (0..n)
            .filter(|_| base.sample(&mut rng) == Context::Star)
            .count();
        assert!((stars as f64 / n as f64 - 2.0 / 3.0).abs() < 0.02);
    }
}
