//! Weighted ERM oracle.
//!
//! A query is a list of rows `(x_i, y_i, w_i, l_i)` where `l_i` is either the
//! problem loss or the identity loss `l(a, y) = a`. The oracle returns a
//! hypothesis whose weighted objective is within `zeta * sum |w_i|` of the
//! minimum over the class. Every completed query counts as one call.

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Context, HypothesisClass, LossFunction, OutputKind};
use crate::rng::ExperimentRng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossSelector {
    Main,
    Identity,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightedExample {
    pub context: Context,
    pub label: f64,
    pub weight: f64,
    pub selector: LossSelector,
}

impl WeightedExample {
    pub fn main(context: Context, label: f64, weight: f64) -> Self {
        Self {
            context,
            label,
            weight,
            selector: LossSelector::Main,
        }
    }

    pub fn identity(context: Context, weight: f64) -> Self {
        Self {
            context,
            label: 0.0,
            weight,
            selector: LossSelector::Identity,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ErmQuery {
    pub rows: Vec<WeightedExample>,
}

impl ErmQuery {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, row: WeightedExample) {
        self.rows.push(row);
    }

    pub fn extend(&mut self, rows: impl IntoIterator<Item = WeightedExample>) {
        self.rows.extend(rows);
    }

    pub fn total_weight(&self) -> f64 {
        self.rows.iter().map(|r| r.weight.abs()).sum()
    }

    /// Sums the weights of rows that share context, label and selector.
    ///
    /// The objective of every hypothesis is unchanged; `total_weight` can only
    /// shrink.
    pub fn merged(&self) -> ErmQuery {
        let mut acc: BTreeMap<(LossSelector, (u8, u64), u64), WeightedExample> = BTreeMap::new();
        for row in &self.rows {
            let label_bits = match row.selector {
                LossSelector::Main => row.label.to_bits(),
                LossSelector::Identity => 0,
            };
            acc.entry((row.selector, row.context.key(), label_bits))
                .and_modify(|r| r.weight += row.weight)
                .or_insert(*row);
        }
        ErmQuery {
            rows: acc.into_values().collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErmResult {
    pub hypothesis_index: usize,
    pub objective_value: f64,
    pub calls_consumed: u64,
}

/// How the approximation slack is scaled.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZetaScaling {
    /// `zeta * sum |w_i|`.
    #[default]
    TotalWeight,
    /// Plain additive `zeta`, without the total-weight multiplier.
    Unscaled,
}

impl ZetaScaling {
    pub fn slack(self, zeta: f64, query: &ErmQuery) -> f64 {
        match self {
            ZetaScaling::TotalWeight => zeta * query.total_weight(),
            ZetaScaling::Unscaled => zeta,
        }
    }
}

/// Weighted objective `sum_i w_i l_i(f(x_i), y_i)` of every hypothesis.
pub fn objectives(
    query: &ErmQuery,
    class: &HypothesisClass,
    loss: &LossFunction,
) -> Result<Vec<f64>> {
    for row in &query.rows {
        class.check_context(&row.context)?;
    }
    if !class.is_enumerable() {
        return Err(Error::NotCheckableExactly(
            "class too large to list per-hypothesis objectives".into(),
        ));
    }
    let mut out = vec![0.0; class.len()];
    if class.kind() == OutputKind::Binary {
        // Each row contributes one of two constants depending on f(x) = +-1.
        let coeffs: Vec<(f64, f64)> = query
            .rows
            .iter()
            .map(|r| match r.selector {
                LossSelector::Main => (
                    r.weight * loss.evaluate(1.0, r.label),
                    r.weight * loss.evaluate(-1.0, r.label),
                ),
                LossSelector::Identity => (r.weight, -r.weight),
            })
            .collect();
        for (h, obj) in out.iter_mut().enumerate() {
            *obj = query
                .rows
                .iter()
                .zip(&coeffs)
                .map(|(r, &(pos, neg))| {
                    if class.eval(h, &r.context) > 0.0 {
                        pos
                    } else {
                        neg
                    }
                })
                .sum();
        }
    } else {
        for (h, obj) in out.iter_mut().enumerate() {
            *obj = query
                .rows
                .iter()
                .map(|r| {
                    let v = class.eval(h, &r.context);
                    let l = match r.selector {
                        LossSelector::Main => loss.evaluate(v, r.label),
                        LossSelector::Identity => v,
                    };
                    r.weight * l
                })
                .sum();
        }
    }
    Ok(out)
}

/// `(hypothesis, objective)` pairs that contain the lowest-index minimizer
/// and every objective level of the class.
fn candidates(
    query: &ErmQuery,
    class: &HypothesisClass,
    loss: &LossFunction,
) -> Result<Vec<(usize, f64)>> {
    for row in &query.rows {
        class.check_context(&row.context)?;
    }
    let terms = query.rows.iter().map(|r| match r.selector {
        LossSelector::Main => (
            r.context,
            r.weight * loss.evaluate(1.0, r.label),
            r.weight * loss.evaluate(-1.0, r.label),
        ),
        LossSelector::Identity => (r.context, r.weight, -r.weight),
    });
    if let Some(c) = class.sweep_candidates(terms) {
        return Ok(c);
    }
    Ok(objectives(query, class, loss)?
        .into_iter()
        .enumerate()
        .collect())
}

/// Lowest index among minimizers.
pub fn argmin_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v < values[best] {
            best = i;
        }
    }
    best
}

/// Exact ERM by exhaustive scan.
pub fn erm_exact(
    query: &ErmQuery,
    class: &HypothesisClass,
    loss: &LossFunction,
) -> Result<ErmResult> {
    let cands = candidates(query, class, loss)?;
    let values: Vec<f64> = cands.iter().map(|c| c.1).collect();
    let (h, value) = cands[argmin_lowest(&values)];
    Ok(ErmResult {
        hypothesis_index: h,
        objective_value: value,
        calls_consumed: 1,
    })
}

/// A `zeta`-approximate ERM that exercises its slack: half of the time it
/// answers with a uniformly chosen *other* hypothesis that still meets the
/// approximation guarantee.
pub fn erm_approximate<R: Rng + ?Sized>(
    query: &ErmQuery,
    class: &HypothesisClass,
    loss: &LossFunction,
    zeta: f64,
    scaling: ZetaScaling,
    rng: &mut R,
) -> Result<ErmResult> {
    if !(zeta >= 0.0 && zeta.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "zeta = {zeta} must be >= 0"
        )));
    }
    let cands = candidates(query, class, loss)?;
    let values: Vec<f64> = cands.iter().map(|c| c.1).collect();
    let best = argmin_lowest(&values);
    let bound = values[best] + scaling.slack(zeta, query);
    let admissible: Vec<usize> = (0..values.len())
        .filter(|&i| i != best && values[i] <= bound)
        .collect();
    let slack = bound - values[best];
    let pick = if slack > 0.0 && !admissible.is_empty() && rng.random_bool(0.5) {
        admissible[rng.random_range(0..admissible.len())]
    } else {
        best
    };
    let (h, value) = cands[pick];
    Ok(ErmResult {
        hypothesis_index: h,
        objective_value: value,
        calls_consumed: 1,
    })
}

#[derive(Clone, Debug)]
pub enum OracleMode {
    Exact,
    Approximate {
        zeta: f64,
        scaling: ZetaScaling,
        rng: ExperimentRng,
    },
}

#[derive(Serialize)]
struct LogRecord<'a> {
    rows: &'a [WeightedExample],
    result_index: usize,
    objective: f64,
}

/// Stateful oracle handle bound to one class and loss, counting calls.
pub struct Oracle {
    class: Arc<HypothesisClass>,
    loss: LossFunction,
    mode: OracleMode,
    calls: u64,
    log: Option<Box<dyn Write + Send>>,
}

impl std::fmt::Debug for Oracle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Oracle")
            .field("hypotheses", &self.class.len())
            .field("loss", &self.loss)
            .field("mode", &self.mode)
            .field("calls", &self.calls)
            .finish()
    }
}

impl Oracle {
    pub fn exact(class: Arc<HypothesisClass>, loss: LossFunction) -> Self {
        Self {
            class,
            loss,
            mode: OracleMode::Exact,
            calls: 0,
            log: None,
        }
    }

    pub fn approximate(
        class: Arc<HypothesisClass>,
        loss: LossFunction,
        zeta: f64,
        scaling: ZetaScaling,
        rng: ExperimentRng,
    ) -> Result<Self> {
        if !(zeta >= 0.0 && zeta.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "zeta = {zeta} must be >= 0"
            )));
        }
        let mode = if zeta == 0.0 {
            OracleMode::Exact
        } else {
            OracleMode::Approximate { zeta, scaling, rng }
        };
        Ok(Self {
            class,
            loss,
            mode,
            calls: 0,
            log: None,
        })
    }

    /// Writes one JSON line per completed query.
    pub fn with_log(mut self, sink: Box<dyn Write + Send>) -> Self {
        self.log = Some(sink);
        self
    }

    pub fn class(&self) -> &HypothesisClass {
        &self.class
    }

    pub fn shared_class(&self) -> Arc<HypothesisClass> {
        Arc::clone(&self.class)
    }

    pub fn loss(&self) -> &LossFunction {
        &self.loss
    }

    pub fn call_count(&self) -> u64 {
        self.calls
    }

    pub fn query(&mut self, query: &ErmQuery) -> Result<ErmResult> {
        let result = match &mut self.mode {
            OracleMode::Exact => erm_exact(query, &self.class, &self.loss)?,
            OracleMode::Approximate { zeta, scaling, rng } => {
                erm_approximate(query, &self.class, &self.loss, *zeta, *scaling, rng)?
            }
        };
        self.calls += result.calls_consumed;
        if let Some(sink) = self.log.as_mut() {
            let line = serde_json::to_string(&LogRecord {
                rows: &query.rows,
                result_index: result.hypothesis_index,
                objective: result.objective_value,
            })?;
            writeln!(sink, "{line}")?;
        }
        Ok(result)
    }
}
