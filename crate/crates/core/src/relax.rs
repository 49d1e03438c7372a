//! Improper learner built from a random-playout relaxation.
//!
//! Each round draws `k` future contexts per remaining round from the base
//! measure together with Rademacher signs, and plays the minimax response
//!
//! `yhat = argmin_yhat sup_y { l(yhat, y) + sup_f [ 6L sum eps f(x_sj) - L_t(f) ] }`.
//!
//! The oracle minimizes, so playout rows carry weight `-6L eps` under the
//! identity loss and the oracle's objective is negated.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    binomial, check_sigma, BaseMeasure, Context, HypothesisClass, LossFunction, LossKind,
};
use crate::oracle::{ErmQuery, Oracle, WeightedExample};
use crate::stats;

/// Playout coefficient used for prediction.
pub const FAST_COEFF: f64 = 6.0;
/// Playout coefficient of the relaxation value itself.
pub const SLOW_COEFF: f64 = 2.0;

/// Explicit future points and signs, `(T - t) x k` of each.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlayoutDraw {
    pub future_points: Vec<Vec<Context>>,
    pub signs: Vec<Vec<i8>>,
}

impl PlayoutDraw {
    pub fn sample<R: Rng + ?Sized>(
        base: &BaseMeasure,
        rounds: usize,
        k: usize,
        rng: &mut R,
    ) -> Self {
        let mut future_points = Vec::with_capacity(rounds);
        let mut signs = Vec::with_capacity(rounds);
        for _ in 0..rounds {
            future_points.push((0..k).map(|_| base.sample(rng)).collect());
            signs.push(
                (0..k)
                    .map(|_| if rng.random_bool(0.5) { 1 } else { -1 })
                    .collect(),
            );
        }
        Self {
            future_points,
            signs,
        }
    }
}

/// Net Rademacher weight on each distinct playout context,
/// `sum_{(s, j) : x_sj = c} eps_sj`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Playout {
    pub sums: Vec<(Context, f64)>,
}

impl Playout {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn from_draw(draw: &PlayoutDraw) -> Self {
        let mut terms: Vec<(Context, f64)> = Vec::new();
        for (points, signs) in draw.future_points.iter().zip(&draw.signs) {
            terms.extend(points.iter().zip(signs).map(|(z, &e)| (*z, f64::from(e))));
        }
        terms.sort_by_key(|(z, _)| z.key());
        let mut sums: Vec<(Context, f64)> = Vec::with_capacity(terms.len());
        for (z, e) in terms {
            match sums.last_mut() {
                Some(last) if last.0.key() == z.key() => last.1 += e,
                _ => sums.push((z, e)),
            }
        }
        Self { sums }
    }

    /// Same law as [`Playout::from_draw`] of a fresh draw: occupation counts
    /// are multinomial and the sign sum over `c` points is `2 Bin(c, 1/2) - c`.
    pub fn sample_aggregated<R: Rng + ?Sized>(
        base: &BaseMeasure,
        rounds: usize,
        k: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let counts = base.sample_counts((rounds * k) as u64, rng)?;
        let sums = counts
            .into_iter()
            .map(|(c, n)| (c, 2.0 * binomial(n, 0.5, rng) as f64 - n as f64))
            .filter(|(_, s)| *s != 0.0)
            .collect();
        Ok(Self { sums })
    }

    /// Aggregated when the base measure is finite, explicit otherwise.
    pub fn sample<R: Rng + ?Sized>(
        base: &BaseMeasure,
        rounds: usize,
        k: usize,
        rng: &mut R,
    ) -> Self {
        if base.is_finite() {
            Self::sample_aggregated(base, rounds, k, rng).expect("finite base measure")
        } else {
            Self::from_draw(&PlayoutDraw::sample(base, rounds, k, rng))
        }
    }

    /// `sum eps f(x)` for hypothesis `h`.
    pub fn value(&self, class: &HypothesisClass, h: usize) -> f64 {
        self.sums.iter().map(|(c, s)| s * class.eval(h, c)).sum()
    }

    fn rows(&self, coeff: f64) -> impl Iterator<Item = WeightedExample> + '_ {
        self.sums
            .iter()
            .map(move |(c, s)| WeightedExample::identity(*c, -coeff * s))
    }
}

/// Merged `(x_s, y_s)` rows of weight one.
#[derive(Clone, Debug, Default)]
pub struct History {
    rows: Vec<WeightedExample>,
    index: HashMap<(u8, u64, u64), usize>,
    len: usize,
}

impl History {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, context: Context, label: f64) {
        let (tag, bits) = context.key();
        let key = (tag, bits, label.to_bits());
        match self.index.get(&key) {
            Some(&i) => self.rows[i].weight += 1.0,
            None => {
                self.index.insert(key, self.rows.len());
                self.rows.push(WeightedExample::main(context, label, 1.0));
            }
        }
        self.len += 1;
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn rows(&self) -> &[WeightedExample] {
        &self.rows
    }

    /// `L_t(f)` for every hypothesis of an enumerable class.
    pub fn losses(&self, class: &HypothesisClass, loss: &LossFunction) -> Vec<f64> {
        assert!(
            class.is_enumerable(),
            "per-hypothesis losses need an enumerable class"
        );
        (0..class.len())
            .map(|h| {
                self.rows
                    .iter()
                    .map(|r| r.weight * loss.evaluate(class.eval(h, &r.context), r.label))
                    .sum()
            })
            .collect()
    }
}

impl<'a> FromIterator<&'a (Context, f64)> for History {
    fn from_iter<I: IntoIterator<Item = &'a (Context, f64)>>(iter: I) -> Self {
        let mut h = History::new();
        for (c, y) in iter {
            h.push(*c, *y);
        }
        h
    }
}

#[derive(Clone, Debug)]
pub struct RelaxState {
    pub horizon: usize,
    pub sigma: f64,
    pub k: usize,
    pub lipschitz: f64,
    /// Grid scale of the general min-max.
    pub delta: f64,
    pub base: BaseMeasure,
    pub history: History,
}

/// `ceil((3 / sigma) ln T)`, at least one.
pub fn default_k(horizon: usize, sigma: f64) -> usize {
    (((3.0 / sigma) * (horizon as f64).ln()).ceil() as usize).max(1)
}

impl RelaxState {
    pub fn new(horizon: usize, sigma: f64, lipschitz: f64, base: BaseMeasure) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::InvalidParameter("horizon must be >= 1".into()));
        }
        check_sigma(sigma)?;
        if lipschitz.is_nan() || lipschitz <= 0.0 {
            return Err(Error::InvalidParameter(
                "Lipschitz constant must be positive".into(),
            ));
        }
        Ok(Self {
            horizon,
            sigma,
            k: default_k(horizon, sigma),
            lipschitz,
            delta: 1.0 / (lipschitz * (horizon as f64).sqrt()),
            base,
            history: History::new(),
        })
    }

    pub fn with_k(mut self, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidParameter("k must be >= 1".into()));
        }
        self.k = k;
        Ok(self)
    }

    pub fn with_delta(mut self, delta: f64) -> Result<Self> {
        if delta.is_nan() || delta <= 0.0 {
            return Err(Error::InvalidParameter(
                "grid scale must be positive".into(),
            ));
        }
        self.delta = delta;
        Ok(self)
    }

    /// Index of the round about to be played.
    pub fn round(&self) -> usize {
        self.history.len() + 1
    }

    /// Number of playout rounds for the current round, `T - t`.
    pub fn future_rounds(&self) -> usize {
        self.horizon.saturating_sub(self.round())
    }

    pub fn draw_playout<R: Rng + ?Sized>(&self, rng: &mut R) -> Playout {
        Playout::sample(&self.base, self.future_rounds(), self.k, rng)
    }

    pub fn observe(&mut self, context: Context, label: f64) {
        self.history.push(context, label);
    }

    /// Uniform grid on `[-1, 1]` with spacing at most `delta`, endpoints
    /// included.
    pub fn grid(&self) -> Vec<f64> {
        uniform_grid(self.delta)
    }

    /// Rows shared by every query of the round: history plus playout.
    fn base_query(&self, playout: &Playout, coeff: f64) -> ErmQuery {
        let mut q = ErmQuery::new();
        q.extend(self.history.rows().iter().copied());
        q.extend(playout.rows(coeff * self.lipschitz));
        q
    }

    /// `sup_f [ 6L sum eps f - L_{t-1}(f) - l(f(x), y) ]`, one oracle call.
    pub fn inner_sup(
        &self,
        playout: &Playout,
        x: Context,
        y: f64,
        oracle: &mut Oracle,
    ) -> Result<f64> {
        let mut q = self.base_query(playout, FAST_COEFF);
        inner_sup_with(&mut q, x, y, oracle)
    }

    fn inner_sups(
        &self,
        playout: &Playout,
        x: Context,
        labels: &[f64],
        oracle: &mut Oracle,
    ) -> Result<Vec<f64>> {
        let mut q = self.base_query(playout, FAST_COEFF);
        q.rows.sort_by_key(|r| r.context.key());
        labels
            .iter()
            .map(|&y| inner_sup_with(&mut q, x, y, oracle))
            .collect()
    }
}

fn inner_sup_with(base: &mut ErmQuery, x: Context, y: f64, oracle: &mut Oracle) -> Result<f64> {
    let at = base.rows.partition_point(|r| r.context.key() <= x.key());
    base.rows.insert(at, WeightedExample::main(x, y, 1.0));
    let result = oracle.query(base);
    base.rows.remove(at);
    Ok(-result?.objective_value)
}

impl RelaxState {}

pub fn uniform_grid(delta: f64) -> Vec<f64> {
    let intervals = ((2.0 / delta) - 1e-9).ceil().max(1.0) as usize;
    (0..=intervals)
        .map(|i| -1.0 + 2.0 * i as f64 / intervals as f64)
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearPrediction {
    pub prediction: f64,
    pub a_plus: f64,
    pub a_minus: f64,
}

/// Two-call closed form for the linear loss.
///
/// With `a_y = sup_f [ 6L sum eps f - L_{t-1}(f) - l(f(x_t), y) ]` the
/// objective is `max((1 - yhat)/2 + a_+, (1 + yhat)/2 + a_-)`, two lines of
/// slope `-1/2` and `+1/2` that cross at `yhat = a_+ - a_-`. Because
/// `|a_+ - a_-| <= 1` the crossing lies in `[-1, 1]`.
pub fn predict_linear(
    state: &RelaxState,
    playout: &Playout,
    x: Context,
    oracle: &mut Oracle,
) -> Result<LinearPrediction> {
    if oracle.loss().kind() != LossKind::Linear {
        return Err(Error::LinearLossRequired(oracle.loss().name().to_string()));
    }
    let a = state.inner_sups(playout, x, &[1.0, -1.0], oracle)?;
    let (a_plus, a_minus) = (a[0], a[1]);
    let gap = a_plus - a_minus;
    if gap.abs() > 1.0 + 1e-9 {
        return Err(Error::Invariant(format!(
            "|a+ - a-| = {} exceeds 1",
            gap.abs()
        )));
    }
    Ok(LinearPrediction {
        prediction: gap.clamp(-1.0, 1.0),
        a_plus,
        a_minus,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThreePoint {
    pub index: usize,
    pub evaluations: usize,
}

/// Minimizes a convex function over a sorted grid with at most
/// `3 ceil(log2 |S|) + 3` value-oracle calls. Returns the lowest-index
/// minimizer.
///
/// Each step evaluates the quartile points `z1 < z2 < z3` of the surviving
/// set and discards a half that convexity rules out; once three points or
/// fewer remain they are all evaluated. Values are cached, so no point is
/// evaluated twice.
pub fn three_point_min<F: FnMut(usize) -> f64>(grid: &[f64], mut values: F) -> Result<ThreePoint> {
    if grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let mut cache: HashMap<usize, f64> = HashMap::new();
    let mut eval = |i: usize, cache: &mut HashMap<usize, f64>| -> f64 {
        *cache.entry(i).or_insert_with(|| values(i))
    };
    let mut alive: Vec<usize> = (0..grid.len()).collect();
    while alive.len() > 3 {
        let m = alive.len();
        let q2 = m / 2;
        let q1 = (m - 2) / 4;
        let q3 = q1 + 1 + m / 2;
        let (z1, z2, z3) = (alive[q1], alive[q2], alive[q3]);
        let (f1, f2, f3) = (
            eval(z1, &mut cache),
            eval(z2, &mut cache),
            eval(z3, &mut cache),
        );
        alive = if f2 < f1 && f2 < f3 {
            alive[q1 + 1..q3].to_vec()
        } else if f1 < f2 || (f1 == f2 && f2 < f3) {
            alive[..q2].to_vec()
        } else if f3 < f2 {
            alive[q2 + 1..].to_vec()
        } else if f2 < f1 {
            // f2 == f3 < f1: the lowest minimizer lies in (z1, z2].
            alive[q1 + 1..q3].to_vec()
        } else {
            // f1 == f2 == f3.
            alive[..=q1].iter().chain(&alive[q3..]).copied().collect()
        };
    }
    let mut best = alive[0];
    let mut best_value = eval(best, &mut cache);
    for &i in &alive[1..] {
        let v = eval(i, &mut cache);
        if v < best_value {
            best = i;
            best_value = v;
        }
    }
    Ok(ThreePoint {
        index: best,
        evaluations: cache.len(),
    })
}

/// `3 ceil(log2 n) + 3`.
pub fn three_point_budget(n: usize) -> usize {
    let log = if n <= 1 {
        0
    } else {
        usize::BITS - (n - 1).leading_zeros()
    } as usize;
    3 * log + 3
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneralPrediction {
    pub prediction: f64,
    pub grid_index: usize,
    pub oracle_calls: u64,
    pub evaluations: usize,
}

/// Grid min-max for a general convex Lipschitz loss.
///
/// `yhat` and `y` both range over the grid `S`. The inner value
/// `A(y) = sup_f [ 6L sum eps f - L_{t-1}(f) - l(f(x_t), y) ]` does not
/// depend on `yhat`, so it is computed once per grid label (`|S|` oracle
/// calls) and shared by every evaluation of the outer objective
/// `g(yhat) = max_y l(yhat, y) + A(y)`, which is then minimized by
/// [`three_point_min`].
pub fn predict_general(
    state: &RelaxState,
    playout: &Playout,
    x: Context,
    oracle: &mut Oracle,
) -> Result<GeneralPrediction> {
    let grid = state.grid();
    let before = oracle.call_count();
    let inner = state.inner_sups(playout, x, &grid, oracle)?;
    let loss = oracle.loss().clone();
    let outer = |i: usize| {
        grid.iter()
            .zip(&inner)
            .map(|(&y, a)| loss.evaluate(grid[i], y) + a)
            .fold(f64::NEG_INFINITY, f64::max)
    };
    let found = three_point_min(&grid, outer)?;
    Ok(GeneralPrediction {
        prediction: grid[found.index],
        grid_index: found.index,
        oracle_calls: oracle.call_count() - before,
        evaluations: found.evaluations,
    })
}

/// Explicit per-round oracle-call cap for [`predict_general`]:
/// `|S| + 3 ceil(log2 |S|) |S|` with `|S| = ceil(2 L sqrt(T))`.
pub fn general_call_cap(lipschitz: f64, horizon: usize) -> u64 {
    let s = ((2.0 * lipschitz * (horizon as f64).sqrt()).ceil() as usize).max(2);
    let log = (three_point_budget(s) - 3) / 3;
    (s + 3 * log * s) as u64
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelaxationEstimate {
    pub mean: f64,
    pub std_error: f64,
}

/// Monte-Carlo value of the relaxation after `history`,
/// `E[ sup_f 2L sum_{s>t} sum_j eps_sj f(x_sj) - L_t(f) ] + (T - t)^3 e^{-sigma k}`.
pub fn estimate_relaxation<R: Rng + ?Sized>(
    state: &RelaxState,
    history: &History,
    num_playouts: usize,
    oracle: &mut Oracle,
    rng: &mut R,
) -> Result<RelaxationEstimate> {
    if num_playouts < 2 {
        return Err(Error::InvalidParameter("need at least two playouts".into()));
    }
    let t = history.len();
    let rounds = state.horizon.saturating_sub(t);
    let mut values = Vec::with_capacity(num_playouts);
    for _ in 0..num_playouts {
        let playout = Playout::sample(&state.base, rounds, state.k, rng);
        let mut q = ErmQuery::new();
        q.extend(history.rows().iter().copied());
        q.extend(playout.rows(SLOW_COEFF * state.lipschitz));
        values.push(-oracle.query(&q)?.objective_value);
    }
    let tail = (rounds as f64).powi(3) * (-state.sigma * state.k as f64).exp();
    Ok(RelaxationEstimate {
        mean: stats::mean(&values) + tail,
        std_error: stats::std_dev(&values) / (num_playouts as f64).sqrt(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RelaxVariant {
    Linear,
    General,
}

/// A relaxation learner drawing a fresh playout every round.
#[derive(Clone, Debug)]
pub struct RelaxLearner {
    pub state: RelaxState,
    pub variant: RelaxVariant,
}

impl RelaxLearner {
    pub fn new(state: RelaxState, variant: RelaxVariant) -> Self {
        Self { state, variant }
    }

    pub fn predict<R: Rng + ?Sized>(
        &mut self,
        x: Context,
        oracle: &mut Oracle,
        rng: &mut R,
    ) -> Result<f64> {
        let playout = self.state.draw_playout(rng);
        match self.variant {
            RelaxVariant::Linear => {
                Ok(predict_linear(&self.state, &playout, x, oracle)?.prediction)
            }
            RelaxVariant::General => {
                Ok(predict_general(&self.state, &playout, x, oracle)?.prediction)
            }
        }
    }

    pub fn observe(&mut self, x: Context, y: f64) {
        self.state.observe(x, y);
    }
}
