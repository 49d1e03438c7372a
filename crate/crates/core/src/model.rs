//! Domain types shared by every learner and adversary: contexts, finite
//! hypothesis classes, losses, base measures and regret traces.

use std::fmt;
use std::sync::Arc;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::Binomial;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point of the instance space.
///
/// `Atom` indexes a finite ground set, `Coord` is a coordinate in `[0, 1]`
/// for interval-domain classes, and `Star` is the distinguished extra point
/// added by [`HypothesisClass::with_star`] on which every hypothesis agrees.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Context {
    Atom(u32),
    Coord(f64),
    Star,
}

impl Context {
    pub fn coord(x: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&x) {
            Ok(Context::Coord(x))
        } else {
            Err(Error::InvalidParameter(format!(
                "coordinate {x} outside [0,1]"
            )))
        }
    }

    /// Total-order key used to merge rows that share a context.
    pub fn key(&self) -> (u8, u64) {
        match *self {
            Context::Atom(i) => (0, i as u64),
            Context::Coord(x) => (1, x.to_bits()),
            Context::Star => (2, 0),
        }
    }
}

impl fmt::Display for Context {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Context::Atom(i) => write!(f, "a{i}"),
            Context::Coord(x) => write!(f, "{x}"),
            Context::Star => write!(f, "*"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputKind {
    Binary,
    RealValued,
}

/// Finest resolution of [`HypothesisClass::dyadic_thresholds`]; keeps every
/// threshold exactly representable.
pub const MAX_DYADIC_BITS: u32 = 52;

#[derive(Clone, Debug)]
enum Repr {
    /// `values[h * atoms + a]`.
    Table { values: Vec<f64>, atoms: usize },
    /// Constant hypotheses, evaluable on any context.
    Constant { values: Vec<f64> },
    /// `x -> +1 if x >= theta else -1`. Atoms map to `(i + 0.5) / n` when a
    /// ground size is attached.
    Threshold {
        thetas: Vec<f64>,
        atoms: Option<usize>,
    },
    /// Every threshold `i / 2^bits`, `i = 0..=2^bits`, on coordinates.
    Dyadic { bits: u32 },
}

/// A finite, ordered family of functions into `[-1, 1]`.
///
/// Index order is the tie-break order: every argmin over the class returns the
/// lowest index among minimizers.
#[derive(Clone, Debug)]
pub struct HypothesisClass {
    kind: OutputKind,
    repr: Repr,
    star: Option<f64>,
}

impl HypothesisClass {
    /// Explicit table class; `rows[h][a]` is hypothesis `h` on atom `a`.
    pub fn table(rows: Vec<Vec<f64>>, kind: OutputKind) -> Result<Self> {
        let hyps = rows.len();
        if hyps == 0 {
            return Err(Error::InvalidParameter("class must be nonempty".into()));
        }
        let atoms = rows[0].len();
        if rows.iter().any(|r| r.len() != atoms) {
            return Err(Error::InvalidParameter("ragged hypothesis table".into()));
        }
        let values: Vec<f64> = rows.into_iter().flatten().collect();
        validate_values(&values, kind)?;
        Ok(Self {
            kind,
            repr: Repr::Table { values, atoms },
            star: None,
        })
    }

    pub fn constant(values: Vec<f64>, kind: OutputKind) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidParameter("class must be nonempty".into()));
        }
        validate_values(&values, kind)?;
        Ok(Self {
            kind,
            repr: Repr::Constant { values },
            star: None,
        })
    }

    /// `size` thresholds on the uniform grid `i / (size - 1)`.
    pub fn threshold_grid(size: usize) -> Result<Self> {
        let thetas = match size {
            0 => {
                return Err(Error::InvalidParameter(
                    "threshold grid size must be >= 1".into(),
                ))
            }
            1 => vec![0.5],
            _ => (0..size).map(|i| i as f64 / (size - 1) as f64).collect(),
        };
        Self::thresholds(thetas)
    }

    /// Thresholds at the given parameters (sorted and deduplicated).
    pub fn thresholds(mut thetas: Vec<f64>) -> Result<Self> {
        if thetas.is_empty() || thetas.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidParameter(
                "thresholds must be finite and nonempty".into(),
            ));
        }
        thetas.sort_by(|a, b| a.total_cmp(b));
        thetas.dedup();
        Ok(Self {
            kind: OutputKind::Binary,
            repr: Repr::Threshold {
                thetas,
                atoms: None,
            },
            star: None,
        })
    }

    /// All `2^bits + 1` thresholds `i / 2^bits` on `[0, 1]`. Too large to
    /// enumerate; ERM and comparator losses use an exact sweep over the sorted
    /// data instead.
    pub fn dyadic_thresholds(bits: u32) -> Result<Self> {
        if !(1..=MAX_DYADIC_BITS).contains(&bits) {
            return Err(Error::InvalidParameter(format!(
                "dyadic resolution must be 1..={MAX_DYADIC_BITS} bits"
            )));
        }
        Ok(Self {
            kind: OutputKind::Binary,
            repr: Repr::Dyadic { bits },
            star: None,
        })
    }

    /// Lets a threshold class evaluate atoms of an `n`-point ground set, atom
    /// `i` sitting at coordinate `(i + 0.5) / n`.
    pub fn on_atom_grid(mut self, n: usize) -> Self {
        if let Repr::Threshold { atoms, .. } = &mut self.repr {
            *atoms = Some(n);
        }
        self
    }

    /// Adds the distinguished point [`Context::Star`] on which every
    /// hypothesis takes `value`.
    pub fn with_star(mut self, value: f64) -> Self {
        self.star = Some(value);
        self
    }

    pub fn len(&self) -> usize {
        match &self.repr {
            Repr::Table { values, atoms } => values.len() / atoms.max(&1),
            Repr::Constant { values } => values.len(),
            Repr::Threshold { thetas, .. } => thetas.len(),
            Repr::Dyadic { bits } => (1usize << bits) + 1,
        }
    }

    /// Whether per-hypothesis vectors over the class are affordable.
    pub fn is_enumerable(&self) -> bool {
        !matches!(self.repr, Repr::Dyadic { .. })
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn kind(&self) -> OutputKind {
        self.kind
    }

    pub fn star_value(&self) -> Option<f64> {
        self.star
    }

    /// Size of the finite ground set this class is defined on, if any.
    pub fn ground_size(&self) -> Option<usize> {
        match &self.repr {
            Repr::Table { atoms, .. } => Some(*atoms),
            Repr::Threshold { atoms, .. } => *atoms,
            Repr::Constant { .. } | Repr::Dyadic { .. } => None,
        }
    }

    pub fn thetas(&self) -> Option<&[f64]> {
        match &self.repr {
            Repr::Threshold { thetas, .. } => Some(thetas),
            _ => None,
        }
    }

    pub fn check_context(&self, ctx: &Context) -> Result<()> {
        let ok = match (&self.repr, ctx) {
            (_, Context::Star) => self.star.is_some(),
            (Repr::Constant { .. }, _) => true,
            (Repr::Table { atoms, .. }, Context::Atom(i)) => (*i as usize) < *atoms,
            (Repr::Table { .. }, Context::Coord(_)) => false,
            (Repr::Threshold { atoms, .. }, Context::Atom(i)) => {
                atoms.is_some_and(|n| (*i as usize) < n)
            }
            (Repr::Threshold { .. } | Repr::Dyadic { .. }, Context::Coord(x)) => {
                (0.0..=1.0).contains(x)
            }
            (Repr::Dyadic { .. }, Context::Atom(_)) => false,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::DomainMismatch(format!(
                "context {ctx} not evaluable by class"
            )))
        }
    }

    pub fn evaluate(&self, h: usize, ctx: &Context) -> Result<f64> {
        if h >= self.len() {
            return Err(Error::InvalidParameter(format!(
                "hypothesis index {h} out of range"
            )));
        }
        self.check_context(ctx)?;
        Ok(self.eval(h, ctx))
    }

    /// Evaluation without domain checks; callers validate contexts first.
    #[inline]
    pub(crate) fn eval(&self, h: usize, ctx: &Context) -> f64 {
        if let Context::Star = ctx {
            return self.star.unwrap_or(0.0);
        }
        match &self.repr {
            Repr::Table { values, atoms } => match ctx {
                Context::Atom(i) => values[h * atoms + *i as usize],
                _ => unreachable!("checked context"),
            },
            Repr::Constant { values } => values[h],
            Repr::Threshold { thetas, atoms } => {
                let x = match ctx {
                    Context::Coord(x) => *x,
                    Context::Atom(i) => (*i as f64 + 0.5) / atoms.unwrap_or(1) as f64,
                    Context::Star => unreachable!(),
                };
                if x >= thetas[h] {
                    1.0
                } else {
                    -1.0
                }
            }
            Repr::Dyadic { bits } => match ctx {
                Context::Coord(x) if *x >= h as f64 / (1u64 << bits) as f64 => 1.0,
                _ => -1.0,
            },
        }
    }

    /// Exact minimization for the dyadic threshold class. Each term is
    /// `(context, value if f(x) = +1, value if f(x) = -1)`. Returns, for each
    /// maximal run of thresholds with a common objective, its lowest index
    /// and the objective, in index order. `None` for other classes.
    pub(crate) fn sweep_candidates(
        &self,
        terms: impl Iterator<Item = (Context, f64, f64)>,
    ) -> Option<Vec<(usize, f64)>> {
        let Repr::Dyadic { bits } = self.repr else {
            return None;
        };
        let scale = (1u64 << bits) as f64;
        let star = self.star.unwrap_or(0.0);
        let mut constant = 0.0;
        let mut points: Vec<(f64, f64, f64)> = Vec::new();
        for (ctx, plus, minus) in terms {
            match ctx {
                Context::Coord(x) => points.push((x, plus, minus)),
                Context::Star => constant += if star > 0.0 { plus } else { minus },
                Context::Atom(_) => unreachable!("checked context"),
            }
        }
        sort_unit_interval(&mut points);
        let mut merged: Vec<(f64, f64, f64)> = Vec::with_capacity(points.len());
        for p in points {
            match merged.last_mut() {
                Some(last) if last.0 == p.0 => {
                    last.1 += p.1;
                    last.2 += p.2;
                }
                _ => merged.push(p),
            }
        }
        let mut value = constant + merged.iter().map(|p| p.1).sum::<f64>();
        let mut out = vec![(0usize, value)];
        let last = 1u64 << bits;
        for (j, &(x, plus, minus)) in merged.iter().enumerate() {
            value += minus - plus;
            let i = (x * scale).floor() as u64 + 1;
            let fits = i <= last
                && merged
                    .get(j + 1)
                    .is_none_or(|next| i as f64 / scale <= next.0);
            if fits {
                out.push((i as usize, value));
            }
        }
        Some(out)
    }

    /// First atom on which every hypothesis evaluates to `value`.
    pub fn constant_atom(&self, value: f64) -> Option<usize> {
        let n = self.ground_size()?;
        (0..n).find(|&a| {
            let ctx = Context::Atom(a as u32);
            (0..self.len()).all(|h| (self.eval(h, &ctx) - value).abs() <= 1e-12)
        })
    }
}

/// Sorts points with first coordinate in `[0, 1]`: bucket by value, then
/// sort each bucket by bit pattern, which orders like the value there.
fn sort_unit_interval(points: &mut Vec<(f64, f64, f64)>) {
    let n = points.len();
    if points.is_sorted_by_key(|p| p.0.to_bits()) {
        return;
    }
    if n < 64 {
        points.sort_unstable_by_key(|p| p.0.to_bits());
        return;
    }
    let bucket = |x: f64| ((x * n as f64) as usize).min(n - 1);
    let mut starts = vec![0usize; n + 1];
    for p in points.iter() {
        starts[bucket(p.0) + 1] += 1;
    }
    for i in 0..n {
        starts[i + 1] += starts[i];
    }
    let mut next = starts.clone();
    let mut out = vec![(0.0, 0.0, 0.0); n];
    for &p in points.iter() {
        let b = bucket(p.0);
        out[next[b]] = p;
        next[b] += 1;
    }
    for w in starts.windows(2) {
        if w[1] - w[0] > 1 {
            out[w[0]..w[1]].sort_unstable_by_key(|p| p.0.to_bits());
        }
    }
    *points = out;
}

fn validate_values(values: &[f64], kind: OutputKind) -> Result<()> {
    for &v in values {
        let ok = match kind {
            OutputKind::Binary => v == 1.0 || v == -1.0,
            OutputKind::RealValued => v.is_finite() && (-1.0..=1.0).contains(&v),
        };
        if !ok {
            return Err(Error::InvalidParameter(format!(
                "hypothesis value {v} not allowed for {kind:?} class"
            )));
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// `|a - y| / 2`
    Absolute,
    /// `(1 - a y) / 2`
    Linear,
    /// `(a - y)^2 / 4`
    Square,
    /// `(a - y)^2`, the square loss for `[0, 1]`-valued regression.
    UnitSquare,
    Custom,
}

type CustomLoss = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// A convex, Lipschitz loss `l(prediction, label)`.
#[derive(Clone)]
pub struct LossFunction {
    kind: LossKind,
    lipschitz: f64,
    range: (f64, f64),
    custom: Option<(String, CustomLoss)>,
}

impl fmt::Debug for LossFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LossFunction")
            .field("kind", &self.kind)
            .field("lipschitz", &self.lipschitz)
            .finish()
    }
}

impl LossFunction {
    pub fn new(kind: LossKind) -> Result<Self> {
        let (lipschitz, range) = match kind {
            LossKind::Absolute => (0.5, (0.0, 1.0)),
            LossKind::Linear => (0.5, (0.0, 1.0)),
            LossKind::Square => (1.0, (0.0, 1.0)),
            // Lipschitz constant and range hold on [0,1] x [0,1].
            LossKind::UnitSquare => (2.0, (0.0, 1.0)),
            LossKind::Custom => {
                return Err(Error::InvalidParameter("use LossFunction::custom".into()))
            }
        };
        Ok(Self {
            kind,
            lipschitz,
            range,
            custom: None,
        })
    }

    pub fn absolute() -> Self {
        Self::new(LossKind::Absolute).expect("builtin")
    }

    pub fn linear() -> Self {
        Self::new(LossKind::Linear).expect("builtin")
    }

    pub fn square() -> Self {
        Self::new(LossKind::Square).expect("builtin")
    }

    pub fn unit_square() -> Self {
        Self::new(LossKind::UnitSquare).expect("builtin")
    }

    pub fn custom(
        name: impl Into<String>,
        lipschitz: f64,
        range: (f64, f64),
        f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        if !(lipschitz > 0.0 && lipschitz.is_finite()) {
            return Err(Error::InvalidParameter(
                "lipschitz constant must be positive".into(),
            ));
        }
        Ok(Self {
            kind: LossKind::Custom,
            lipschitz,
            range,
            custom: Some((name.into(), Arc::new(f))),
        })
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "absolute" => Ok(Self::absolute()),
            "linear" => Ok(Self::linear()),
            "square" => Ok(Self::square()),
            "unit_square" | "unit-square" => Ok(Self::unit_square()),
            other => Err(Error::Config(format!(
                "unknown loss '{other}'; valid: absolute, linear, square, unit_square"
            ))),
        }
    }

    pub fn kind(&self) -> LossKind {
        self.kind
    }

    pub fn name(&self) -> &str {
        match self.kind {
            LossKind::Absolute => "absolute",
            LossKind::Linear => "linear",
            LossKind::Square => "square",
            LossKind::UnitSquare => "unit_square",
            LossKind::Custom => self
                .custom
                .as_ref()
                .map(|(n, _)| n.as_str())
                .unwrap_or("custom"),
        }
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn range(&self) -> (f64, f64) {
        self.range
    }

    #[inline]
    pub fn evaluate(&self, prediction: f64, label: f64) -> f64 {
        match self.kind {
            LossKind::Absolute => (prediction - label).abs() / 2.0,
            LossKind::Linear => (1.0 - prediction * label) / 2.0,
            LossKind::Square => (prediction - label).powi(2) / 4.0,
            LossKind::UnitSquare => (prediction - label).powi(2),
            LossKind::Custom => (self.custom.as_ref().expect("custom loss").1)(prediction, label),
        }
    }
}

/// The base measure a smooth adversary is certified against; learners sample
/// from it.
#[derive(Clone, Debug)]
pub enum BaseMeasure {
    /// Probability vector over atoms `0..n`.
    Finite {
        probs: Vec<f64>,
        index: WeightedIndex<f64>,
    },
    /// Lebesgue measure on `[0, 1]`.
    UniformInterval,
    /// `(1 - star_mass) * inner + star_mass * delta_star`.
    WithStar {
        inner: Box<BaseMeasure>,
        star_mass: f64,
    },
}

impl BaseMeasure {
    pub fn finite(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() || probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::InvalidParameter(
                "probabilities must be finite and >= 0".into(),
            ));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter(format!(
                "probabilities sum to {total}, not 1"
            )));
        }
        let index = WeightedIndex::new(&probs)
            .map_err(|e| Error::InvalidParameter(format!("bad probability vector: {e}")))?;
        Ok(BaseMeasure::Finite { probs, index })
    }

    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter(
                "ground set must be nonempty".into(),
            ));
        }
        Self::finite(vec![1.0 / n as f64; n])
    }

    pub fn with_star(self, star_mass: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&star_mass) {
            return Err(Error::InvalidParameter(
                "star mass must lie in [0,1]".into(),
            ));
        }
        Ok(BaseMeasure::WithStar {
            inner: Box::new(self),
            star_mass,
        })
    }

    pub fn probs(&self) -> Option<&[f64]> {
        match self {
            BaseMeasure::Finite { probs, .. } => Some(probs),
            _ => None,
        }
    }

    pub fn is_finite(&self) -> bool {
        match self {
            BaseMeasure::Finite { .. } => true,
            BaseMeasure::UniformInterval => false,
            BaseMeasure::WithStar { inner, .. } => inner.is_finite(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Context {
        match self {
            BaseMeasure::Finite { index, .. } => Context::Atom(index.sample(rng) as u32),
            BaseMeasure::UniformInterval => Context::Coord(rng.random::<f64>()),
            BaseMeasure::WithStar { inner, star_mass } => {
                if rng.random::<f64>() < *star_mass {
                    Context::Star
                } else {
                    inner.sample(rng)
                }
            }
        }
    }

    /// Multinomial occupation counts of `n` i.i.d. draws, as
    /// `(context, count)` pairs with nonzero counts, in atom order (`Star`
    /// last). Only defined for finite measures.
    pub fn sample_counts<R: Rng + ?Sized>(
        &self,
        n: u64,
        rng: &mut R,
    ) -> Result<Vec<(Context, u64)>> {
        match self {
            BaseMeasure::Finite { probs, .. } => Ok(multinomial(probs, n, rng)
                .into_iter()
                .enumerate()
                .filter(|(_, c)| *c > 0)
                .map(|(a, c)| (Context::Atom(a as u32), c))
                .collect()),
            BaseMeasure::UniformInterval => Err(Error::NotCheckableExactly(
                "occupation counts need a finite base measure".into(),
            )),
            BaseMeasure::WithStar { inner, star_mass } => {
                let stars = binomial(n, *star_mass, rng);
                let mut out = inner.sample_counts(n - stars, rng)?;
                if stars > 0 {
                    out.push((Context::Star, stars));
                }
                Ok(out)
            }
        }
    }
}

pub(crate) fn binomial<R: Rng + ?Sized>(n: u64, p: f64, rng: &mut R) -> u64 {
    if n == 0 || p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return n;
    }
    Binomial::new(n, p).expect("valid binomial").sample(rng)
}

/// Multinomial draw by sequential conditional binomials.
pub(crate) fn multinomial<R: Rng + ?Sized>(probs: &[f64], n: u64, rng: &mut R) -> Vec<u64> {
    let mut counts = vec![0u64; probs.len()];
    let mut remaining = n;
    let mut mass_left = 1.0f64;
    for (i, &p) in probs.iter().enumerate() {
        if remaining == 0 {
            break;
        }
        if i + 1 == probs.len() {
            counts[i] = remaining;
            break;
        }
        let q = if mass_left > 0.0 {
            (p / mass_left).clamp(0.0, 1.0)
        } else {
            1.0
        };
        let c = binomial(remaining, q, rng);
        counts[i] = c;
        remaining -= c;
        mass_left -= p;
    }
    counts
}

/// `sigma` together with the base measure it refers to.
#[derive(Clone, Debug)]
pub struct SmoothnessCertificate {
    pub sigma: f64,
    pub base: BaseMeasure,
}

impl SmoothnessCertificate {
    pub fn new(sigma: f64, base: BaseMeasure) -> Result<Self> {
        check_sigma(sigma)?;
        Ok(Self { sigma, base })
    }
}

pub fn check_sigma(sigma: f64) -> Result<()> {
    if sigma > 0.0 && sigma <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "sigma = {sigma} outside (0, 1]"
        )))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub t: usize,
    pub context: Context,
    pub label: f64,
    pub prediction: f64,
    /// Hypothesis committed to by a proper learner.
    pub hypothesis_index: Option<usize>,
    pub instant_loss: f64,
    pub oracle_calls_so_far: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RegretTrace {
    pub rounds: Vec<RoundRecord>,
    pub cumulative_regret: Option<f64>,
}

impl RegretTrace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, record: RoundRecord) {
        self.cumulative_regret = None;
        self.rounds.push(record);
    }

    pub fn len(&self) -> usize {
        self.rounds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rounds.is_empty()
    }

    pub fn total_oracle_calls(&self) -> u64 {
        self.rounds.last().map_or(0, |r| r.oracle_calls_so_far)
    }

    pub fn learner_loss(&self) -> f64 {
        self.rounds.iter().map(|r| r.instant_loss).sum()
    }

    /// Checks counter monotonicity and that losses stay in `loss`'s range.
    pub fn check_invariants(&self, loss: &LossFunction) -> Result<()> {
        let (lo, hi) = loss.range();
        for pair in self.rounds.windows(2) {
            if pair[1].oracle_calls_so_far < pair[0].oracle_calls_so_far {
                return Err(Error::Invariant(format!(
                    "oracle call counter decreased at t = {}",
                    pair[1].t
                )));
            }
        }
        for r in &self.rounds {
            if !(r.instant_loss >= lo - 1e-12 && r.instant_loss <= hi + 1e-12) {
                return Err(Error::Invariant(format!(
                    "instant loss {} outside [{lo}, {hi}] at t = {}",
                    r.instant_loss, r.t
                )));
            }
            if !(-1.0..=1.0).contains(&r.prediction) {
                return Err(Error::Invariant(format!(
                    "prediction {} outside [-1, 1] at t = {}",
                    r.prediction, r.t
                )));
            }
        }
        Ok(())
    }
}

/// Cumulative loss of every hypothesis on the trace's `(context, label)`
/// pairs.
pub fn comparator_losses(
    trace: &RegretTrace,
    class: &HypothesisClass,
    loss: &LossFunction,
) -> Result<Vec<f64>> {
    if !class.is_enumerable() {
        return Err(Error::NotCheckableExactly(
            "class too large to list per-hypothesis losses".into(),
        ));
    }
    let mut totals = vec![0.0; class.len()];
    for r in &trace.rounds {
        class.check_context(&r.context)?;
        for (h, total) in totals.iter_mut().enumerate() {
            *total += loss.evaluate(class.eval(h, &r.context), r.label);
        }
    }
    Ok(totals)
}

/// Fills `cumulative_regret` with the learner's loss minus the best
/// hypothesis' loss, found by exhaustive scan.
pub fn finalize_regret(
    mut trace: RegretTrace,
    class: &HypothesisClass,
    loss: &LossFunction,
) -> Result<RegretTrace> {
    if trace.is_empty() {
        return Err(Error::EmptyTrace);
    }
    let best = best_comparator_loss(&trace.rounds, class, loss)?;
    trace.cumulative_regret = Some(trace.learner_loss() - best);
    Ok(trace)
}

/// `min_f sum_t l(f(x_t), y_t)` over the given rounds.
pub fn best_comparator_loss(
    rounds: &[RoundRecord],
    class: &HypothesisClass,
    loss: &LossFunction,
) -> Result<f64> {
    for r in rounds {
        class.check_context(&r.context)?;
    }
    let terms = rounds.iter().map(|r| {
        (
            r.context,
            loss.evaluate(1.0, r.label),
            loss.evaluate(-1.0, r.label),
        )
    });
    if let Some(cands) = class.sweep_candidates(terms) {
        return Ok(cands.into_iter().map(|c| c.1).fold(f64::INFINITY, f64::min));
    }
    let mut totals = vec![0.0; class.len()];
    for r in rounds {
        for (h, total) in totals.iter_mut().enumerate() {
            *total += loss.evaluate(class.eval(h, &r.context), r.label);
        }
    }
    Ok(totals.into_iter().fold(f64::INFINITY, f64::min))
}

/// Regret of every prefix of the trace, `[Reg_1, ..., Reg_T]`.
pub fn running_regret(
    trace: &RegretTrace,
    class: &HypothesisClass,
    loss: &LossFunction,
) -> Result<Vec<f64>> {
    if !class.is_enumerable() {
        let mut learner = 0.0;
        return trace
            .rounds
            .iter()
            .enumerate()
            .map(|(i, r)| {
                learner += r.instant_loss;
                Ok(learner - best_comparator_loss(&trace.rounds[..=i], class, loss)?)
            })
            .collect();
    }
    let mut totals = vec![0.0; class.len()];
    let mut learner = 0.0;
    let mut out = Vec::with_capacity(trace.len());
    for r in &trace.rounds {
        class.check_context(&r.context)?;
        learner += r.instant_loss;
        let mut best = f64::INFINITY;
        for (h, total) in totals.iter_mut().enumerate() {
            *total += loss.evaluate(class.eval(h, &r.context), r.label);
            best = best.min(*total);
        }
        out.push(learner - best);
    }
    Ok(out)
}
