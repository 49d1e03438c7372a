//! Experiment runner: JSON configs in, CSV traces and JSON summaries out.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::adversary::{
    build_rademacher_gap_adversary, capped_tilt, greedy_fill, rademacher_gap_class, AdversaryState,
    LabelRule,
};
use crate::bandit::{
    default_gamma, massart_proxy, product_measure, random_product_class, run_square_cb,
    BanditOutcome, Regressor, RegressorKind,
};
use crate::error::{Error, Result};
use crate::ftpl::{norm_lower_bound, schedule, FtplLearner, FtplVariant};
use crate::model::{
    finalize_regret, running_regret, BaseMeasure, Context, HypothesisClass, LossFunction, LossKind,
    OutputKind, RegretTrace, RoundRecord,
};
use crate::oracle::{Oracle, ZetaScaling};
use crate::relax::{RelaxLearner, RelaxState, RelaxVariant};
use crate::rng::{SeedTree, Stream};
use crate::stats;

pub const LEARNERS: [&str; 5] = [
    "relax-linear",
    "relax-general",
    "ftpl-cls",
    "ftpl-dual",
    "ftpl-single",
];
pub const ADVERSARIES: [&str; 4] = [
    "iid",
    "adaptive_mixture",
    "hidden_mu_threshold",
    "rademacher_gap",
];

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnerSpec {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zeta: Option<f64>,
    /// Playout width of the relaxation learners.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    /// Scale exponent for the dual FTPL schedule.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    /// Adds the norm-lower-bound point to the class (FTPL only).
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub star: bool,
}

impl LearnerSpec {
    pub fn named(kind: &str) -> Self {
        Self {
            kind: kind.to_string(),
            ..Default::default()
        }
    }
}

/// Accepts either `"relax-linear"` or `{"kind": "relax-linear", ...}`.
#[derive(Deserialize)]
#[serde(untagged)]
enum LearnerRepr {
    Name(String),
    Full(LearnerSpec),
}

fn learner_spec<'de, D: serde::Deserializer<'de>>(
    d: D,
) -> std::result::Result<LearnerSpec, D::Error> {
    Ok(match LearnerRepr::deserialize(d)? {
        LearnerRepr::Name(kind) => LearnerSpec::named(&kind),
        LearnerRepr::Full(spec) => spec,
    })
}

fn default_ground_size() -> usize {
    100
}

fn default_p() -> String {
    "concentrated".into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdversarySpec {
    pub kind: String,
    #[serde(default = "default_ground_size")]
    pub ground_size: usize,
    /// Conditional law of the i.i.d. source: `mu`, `concentrated` or `tilted`.
    #[serde(default = "default_p")]
    pub p: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<LabelRule>,
    /// Shattering-set size and scale for `rademacher_gap`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClassSpec {
    Thresholds {
        #[serde(default = "default_threshold_size")]
        size: usize,
    },
    Table {
        rows: Vec<Vec<f64>>,
        #[serde(default)]
        binary: bool,
    },
    RademacherGap {
        m: usize,
        scale: f64,
    },
    /// Every threshold `i / 2^bits` on `[0, 1]`.
    DyadicThresholds {
        #[serde(default = "default_dyadic_bits")]
        bits: u32,
    },
}

fn default_dyadic_bits() -> u32 {
    crate::model::MAX_DYADIC_BITS
}

fn default_threshold_size() -> usize {
    64
}

impl Default for ClassSpec {
    fn default() -> Self {
        ClassSpec::Thresholds {
            size: default_threshold_size(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleSpec {
    #[serde(default)]
    pub zeta: f64,
    #[serde(default)]
    pub scaling: ZetaScaling,
    /// Directory for per-seed JSONL query logs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_dir: Option<PathBuf>,
}

fn default_loss() -> String {
    "linear".into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(deserialize_with = "learner_spec")]
    pub learner: LearnerSpec,
    pub adversary: AdversarySpec,
    #[serde(default)]
    pub class: ClassSpec,
    #[serde(default = "default_loss")]
    pub loss: String,
    #[serde(rename = "T")]
    pub horizon: usize,
    pub sigma: f64,
    pub seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoints: Option<Vec<usize>>,
    #[serde(default)]
    pub oracle: OracleSpec,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::Config("T must be >= 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must be nonempty".into()));
        }
        if !(self.sigma > 0.0 && self.sigma <= 1.0) {
            return Err(Error::Config(format!(
                "sigma = {} must lie in (0, 1]",
                self.sigma
            )));
        }
        if !LEARNERS.contains(&self.learner.kind.as_str()) {
            return Err(Error::Config(format!(
                "unknown learner '{}' (valid: {})",
                self.learner.kind,
                LEARNERS.join(", ")
            )));
        }
        if !ADVERSARIES.contains(&self.adversary.kind.as_str()) {
            return Err(Error::Config(format!(
                "unknown adversary '{}' (valid: {})",
                self.adversary.kind,
                ADVERSARIES.join(", ")
            )));
        }
        let loss = LossFunction::parse(&self.loss).map_err(|e| Error::Config(e.to_string()))?;
        if self.learner.kind == "relax-linear" && loss.kind() != LossKind::Linear {
            return Err(Error::Config(
                "relax-linear requires the linear loss".into(),
            ));
        }
        Ok(())
    }

    fn checkpoints(&self) -> Vec<usize> {
        let mut cps = self.checkpoints.clone().unwrap_or_else(|| {
            let t = self.horizon;
            vec![t.div_ceil(4), t.div_ceil(2), (3 * t).div_ceil(4), t]
        });
        cps.retain(|&c| c >= 1 && c <= self.horizon);
        cps.sort_unstable();
        cps.dedup();
        cps
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub t: usize,
    pub regret: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub final_regret: f64,
    pub checkpoints: Vec<Checkpoint>,
    pub total_oracle_calls: u64,
    pub learner_loss: f64,
    pub comparator_loss: f64,
    pub wall_time_secs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean_final_regret: f64,
    pub std_final_regret: f64,
    pub mean_oracle_calls: f64,
}

impl Aggregate {
    fn of(rows: &[SeedSummary]) -> Self {
        let finals: Vec<f64> = rows.iter().map(|r| r.final_regret).collect();
        let calls: Vec<f64> = rows.iter().map(|r| r.total_oracle_calls as f64).collect();
        Self {
            mean_final_regret: stats::mean(&finals),
            std_final_regret: stats::std_dev(&finals),
            mean_oracle_calls: stats::mean(&calls),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRecord {
    pub learner: String,
    pub adversary: String,
    #[serde(rename = "T")]
    pub horizon: usize,
    pub sigma: f64,
    pub per_seed: Vec<SeedSummary>,
    pub aggregate: Aggregate,
}

/// One finished trajectory.
#[derive(Clone, Debug)]
pub struct SeedRun {
    pub summary: SeedSummary,
    pub trace: RegretTrace,
    pub running_regret: Vec<f64>,
    pub class: Arc<HypothesisClass>,
}

enum Learner {
    Relax(RelaxLearner),
    Ftpl(FtplLearner),
}

fn build_class(spec: &ClassSpec, ground: usize) -> Result<HypothesisClass> {
    match spec {
        ClassSpec::Thresholds { size } => {
            Ok(HypothesisClass::threshold_grid(*size)?.on_atom_grid(ground))
        }
        ClassSpec::Table { rows, binary } => {
            let kind = if *binary {
                OutputKind::Binary
            } else {
                OutputKind::RealValued
            };
            HypothesisClass::table(rows.clone(), kind)
        }
        ClassSpec::RademacherGap { m, scale } => rademacher_gap_class(*m, *scale),
        ClassSpec::DyadicThresholds { .. } => Err(Error::Config(
            "dyadic_thresholds lives on [0, 1] and needs a coordinate adversary".into(),
        )),
    }
}

fn build_source(
    config: &ExperimentConfig,
    tree: &SeedTree,
) -> Result<(AdversaryState, HypothesisClass)> {
    let spec = &config.adversary;
    let sigma = config.sigma;
    match spec.kind.as_str() {
        "hidden_mu_threshold" => {
            let bits = match config.class {
                ClassSpec::DyadicThresholds { bits } => bits,
                _ => {
                    return Err(Error::Config(
                        "hidden_mu_threshold needs a dyadic_thresholds class".into(),
                    ))
                }
            };
            let mut setup = tree.stream(Stream::Setup);
            let adv = AdversaryState::hidden_mu_threshold(config.horizon, &mut setup)?;
            Ok((adv, HypothesisClass::dyadic_thresholds(bits)?))
        }
        "rademacher_gap" => {
            let (m, scale) = match config.class {
                ClassSpec::RademacherGap { m, scale } => (m, scale),
                _ => {
                    return Err(Error::Config(
                        "rademacher_gap needs a rademacher_gap class".into(),
                    ))
                }
            };
            let class = rademacher_gap_class(m, scale)?;
            let adv = build_rademacher_gap_adversary(
                sigma,
                spec.m.unwrap_or(m),
                Arc::new(class.clone()),
                spec.scale.unwrap_or(scale),
            )?;
            Ok((adv, class))
        }
        kind => {
            let probe = build_class(&config.class, spec.ground_size)?;
            let ground = probe.ground_size().unwrap_or(spec.ground_size);
            let class = build_class(&config.class, ground)?;
            let shared = Arc::new(class.clone());
            let label = spec.label.clone().unwrap_or(LabelRule::Rademacher);
            let mu = vec![1.0 / ground as f64; ground];
            let adv = if kind == "iid" {
                let p = match spec.p.as_str() {
                    "mu" => mu.clone(),
                    "concentrated" => greedy_fill(&mu, sigma),
                    "tilted" => {
                        let w: Vec<f64> = (0..ground).map(|i| (ground - i) as f64).collect();
                        capped_tilt(&mu, sigma, &w)
                    }
                    other => {
                        return Err(Error::Config(format!(
                            "unknown i.i.d. law '{other}' (valid: mu, concentrated, tilted)"
                        )))
                    }
                };
                AdversaryState::iid(mu, p, sigma, label, Some(shared))?
            } else {
                AdversaryState::adaptive_mixture(mu, sigma, label, Some(shared))?
            };
            Ok((adv, class))
        }
    }
}

fn build_learner(
    config: &ExperimentConfig,
    base: BaseMeasure,
    loss: &LossFunction,
) -> Result<Learner> {
    let spec = &config.learner;
    let t = config.horizon;
    let sigma = config.sigma;
    match spec.kind.as_str() {
        "relax-linear" | "relax-general" => {
            let mut state = RelaxState::new(t, sigma, loss.lipschitz(), base)?;
            if let Some(k) = spec.k {
                state = state.with_k(k)?;
            }
            let variant = if spec.kind == "relax-linear" {
                RelaxVariant::Linear
            } else {
                RelaxVariant::General
            };
            Ok(Learner::Relax(RelaxLearner::new(state, variant)))
        }
        kind => {
            let variant = FtplVariant::parse(kind)?;
            let mut s = schedule(t, sigma, loss.lipschitz(), spec.p.unwrap_or(1.0), variant)?;
            if let Some(eta) = spec.eta {
                s.eta = eta;
            }
            if let Some(n) = spec.n {
                s.n = n;
                if variant == FtplVariant::Single && spec.eta.is_none() {
                    s.eta = (n as f64).sqrt();
                }
            }
            if let Some(m) = spec.m {
                s.m = m;
            }
            if let Some(eps) = spec.epsilon {
                s.epsilon = Some(eps);
            }
            if let Some(zeta) = spec.zeta {
                s.zeta = zeta;
            }
            Ok(Learner::Ftpl(FtplLearner::new(s, base)?))
        }
    }
}

/// Runs one seed of `config` and returns the finalized trace.
pub fn run_seed(config: &ExperimentConfig, seed: u64) -> Result<SeedRun> {
    config.validate()?;
    let started = Instant::now();
    let tree = SeedTree::new(seed);
    let loss = LossFunction::parse(&config.loss)?;
    let (mut adversary, mut class) = build_source(config, &tree)?;
    let mut base = adversary.base_measure().clone();
    if config.learner.star && config.learner.kind.starts_with("ftpl") {
        (class, base) = norm_lower_bound(class, base)?;
    }
    let class = Arc::new(class);
    let mut learner = build_learner(config, base, &loss)?;
    let zeta = match &learner {
        Learner::Ftpl(l) if config.learner.zeta.is_some() => l.schedule.zeta,
        _ => config.oracle.zeta,
    };
    let mut oracle = Oracle::approximate(
        Arc::clone(&class),
        loss.clone(),
        zeta,
        config.oracle.scaling,
        tree.stream(Stream::Oracle),
    )?;
    if let Some(dir) = &config.oracle.log_dir {
        fs::create_dir_all(dir)?;
        let file = fs::File::create(dir.join(format!("oracle_seed{seed}.jsonl")))?;
        oracle = oracle.with_log(Box::new(std::io::BufWriter::new(file)));
    }
    let mut adv_rng = tree.stream(Stream::Adversary);
    let mut learn_rng = tree.stream(Stream::Learner);

    let mut trace = RegretTrace::new();
    let mut last_prediction = None;
    for t in 1..=config.horizon {
        let committed = match &mut learner {
            Learner::Ftpl(l) => Some(l.commit(&mut oracle, &mut learn_rng)?),
            Learner::Relax(_) => None,
        };
        let (x, y) = adversary.next_round(last_prediction, &mut adv_rng)?;
        let prediction = match (&mut learner, committed) {
            (Learner::Ftpl(_), Some(h)) => class.evaluate(h, &x)?,
            (Learner::Relax(l), _) => l.predict(x, &mut oracle, &mut learn_rng)?,
            _ => unreachable!(),
        };
        if !(-1.0..=1.0).contains(&prediction) {
            return Err(Error::Invariant(format!(
                "prediction {prediction} outside [-1, 1] at t = {t}"
            )));
        }
        match &mut learner {
            Learner::Ftpl(l) => l.observe(x, y),
            Learner::Relax(l) => l.observe(x, y),
        }
        trace.push(RoundRecord {
            t,
            context: x,
            label: y,
            prediction,
            hypothesis_index: committed,
            instant_loss: loss.evaluate(prediction, y),
            oracle_calls_so_far: oracle.call_count(),
        });
        last_prediction = Some(prediction);
    }
    trace.check_invariants(&loss)?;
    let trace = finalize_regret(trace, &class, &loss)?;
    let running = running_regret(&trace, &class, &loss)?;
    let final_regret = trace.cumulative_regret.expect("finalized");
    if (running[running.len() - 1] - final_regret).abs() > 1e-9 {
        return Err(Error::Invariant(
            "running regret disagrees with the finalized value".into(),
        ));
    }
    if trace.total_oracle_calls() != oracle.call_count() {
        return Err(Error::Invariant("oracle call accounting mismatch".into()));
    }
    let learner_loss = trace.learner_loss();
    let summary = SeedSummary {
        seed,
        final_regret,
        checkpoints: config
            .checkpoints()
            .into_iter()
            .map(|t| Checkpoint {
                t,
                regret: running[t - 1],
            })
            .collect(),
        total_oracle_calls: oracle.call_count(),
        learner_loss,
        comparator_loss: learner_loss - final_regret,
        wall_time_secs: started.elapsed().as_secs_f64(),
    };
    Ok(SeedRun {
        summary,
        trace,
        running_regret: running,
        class,
    })
}

/// CSV with columns `t,context,label,prediction,instant_loss,cumulative_regret,oracle_calls`.
pub fn trace_csv(trace: &RegretTrace, running: &[f64]) -> String {
    let mut out =
        String::from("t,context,label,prediction,instant_loss,cumulative_regret,oracle_calls\n");
    for (r, reg) in trace.rounds.iter().zip(running) {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.t, r.context, r.label, r.prediction, r.instant_loss, reg, r.oracle_calls_so_far
        );
    }
    out
}

fn trace_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("trace_seed{seed}.csv"))
}

/// Runs every seed (concurrently), writes `trace_seed<seed>.csv` files and
/// `summary.json` under `config.output` when set.
pub fn run_experiment(config: &ExperimentConfig) -> Result<SummaryRecord> {
    config.validate()?;
    let runs: Vec<SeedRun> = config
        .seeds
        .par_iter()
        .map(|&seed| run_seed(config, seed))
        .collect::<Result<_>>()?;
    let per_seed: Vec<SeedSummary> = runs.iter().map(|r| r.summary.clone()).collect();
    let summary = SummaryRecord {
        learner: config.learner.kind.clone(),
        adversary: config.adversary.kind.clone(),
        horizon: config.horizon,
        sigma: config.sigma,
        aggregate: Aggregate::of(&per_seed),
        per_seed,
    };
    if let Some(dir) = &config.output {
        fs::create_dir_all(dir)?;
        for run in &runs {
            fs::write(
                trace_path(dir, run.summary.seed),
                trace_csv(&run.trace, &run.running_regret),
            )?;
        }
        fs::write(
            dir.join("summary.json"),
            serde_json::to_string_pretty(&summary)?,
        )?;
    }
    Ok(summary)
}

fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw.trim()).unwrap_or_else(|_| Value::String(raw.trim().to_string()))
}

/// Replaces the value at a dotted path. When the target is an object and
/// the new value is not, the object's `kind` field is replaced instead.
pub fn set_param(template: &mut Value, param: &str, value: Value) -> Result<()> {
    let mut node = template;
    for part in param.split('.') {
        node = node
            .get_mut(part)
            .ok_or_else(|| Error::Config(format!("parameter '{param}' not in template")))?;
    }
    match node {
        Value::Object(map) if !value.is_object() => {
            if !map.contains_key("kind") {
                return Err(Error::Config(format!(
                    "parameter '{param}' is an object without a kind"
                )));
            }
            map.insert("kind".into(), value);
        }
        slot => *slot = value,
    }
    Ok(())
}

fn label_of(value: &Value) -> String {
    match value {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// One experiment per value of `param`. Each run writes to
/// `<output>/<param>=<value>/` and the sweep writes a long-format
/// `<output>/sweep.csv`.
pub fn sweep(template: &Value, param: &str, values: &[String]) -> Result<Vec<SummaryRecord>> {
    let base_output = template
        .get("output")
        .and_then(Value::as_str)
        .map(PathBuf::from);
    let mut summaries = Vec::with_capacity(values.len());
    let mut csv =
        String::from("param,value,learner,T,sigma,seed,final_regret,total_oracle_calls\n");
    for raw in values {
        let value = parse_value(raw);
        let label = label_of(&value);
        let mut doc = template.clone();
        set_param(&mut doc, param, value)?;
        if let (Some(dir), Some(obj)) = (&base_output, doc.as_object_mut()) {
            let sub = dir.join(format!("{param}={label}"));
            obj.insert(
                "output".into(),
                Value::String(sub.to_string_lossy().into_owned()),
            );
        }
        let config: ExperimentConfig =
            serde_json::from_value(doc).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        let summary = run_experiment(&config)?;
        for row in &summary.per_seed {
            let _ = writeln!(
                csv,
                "{param},{label},{},{},{},{},{},{}",
                summary.learner,
                summary.horizon,
                summary.sigma,
                row.seed,
                row.final_regret,
                row.total_oracle_calls
            );
        }
        summaries.push(summary);
    }
    if let Some(dir) = &base_output {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("sweep.csv"), csv)?;
    }
    Ok(summaries)
}

fn default_contexts() -> usize {
    10
}

fn default_class_size() -> usize {
    4
}

fn default_regressor() -> String {
    "relax-general".into()
}

fn default_low() -> f64 {
    0.2
}

fn default_high() -> f64 {
    0.8
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BanditConfig {
    #[serde(rename = "K")]
    pub actions: usize,
    pub sigma: f64,
    #[serde(rename = "T")]
    pub horizon: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default = "default_regressor")]
    pub regressor: String,
    pub seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    /// Size of the context ground set.
    #[serde(default = "default_contexts")]
    pub contexts: usize,
    #[serde(default = "default_class_size")]
    pub class_size: usize,
    /// Seed of the generated product class, shared by all run seeds.
    #[serde(default)]
    pub class_seed: u64,
    #[serde(default)]
    pub f_star: usize,
    /// Rademacher-complexity proxy for the default gamma.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_hat: Option<f64>,
    #[serde(default = "default_low")]
    pub low: f64,
    #[serde(default = "default_high")]
    pub high: f64,
}

impl BanditConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 || self.seeds.is_empty() || self.actions == 0 || self.contexts == 0 {
            return Err(Error::Config(
                "T, K, contexts and seeds must be nonempty".into(),
            ));
        }
        if !(self.sigma > 0.0 && self.sigma <= 1.0) {
            return Err(Error::Config(format!(
                "sigma = {} must lie in (0, 1]",
                self.sigma
            )));
        }
        if self.f_star >= self.class_size {
            return Err(Error::Config("f_star outside the class".into()));
        }
        if !(0.0..=1.0).contains(&self.low) || !(0.0..=1.0).contains(&self.high) {
            return Err(Error::Config("loss means must lie in [0, 1]".into()));
        }
        RegressorKind::parse(&self.regressor)?;
        Ok(())
    }

    pub fn class(&self) -> Result<HypothesisClass> {
        let mut rng = SeedTree::new(self.class_seed).stream(Stream::Setup);
        random_product_class(
            self.class_size,
            self.contexts,
            self.actions,
            self.low,
            self.high,
            &mut rng,
        )
    }

    pub fn gamma(&self) -> f64 {
        self.gamma.unwrap_or_else(|| {
            let r = self
                .r_hat
                .unwrap_or_else(|| massart_proxy(self.horizon, self.class_size));
            default_gamma(
                self.horizon,
                self.sigma,
                LossFunction::unit_square().lipschitz(),
                r,
            )
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BanditSeedSummary {
    pub seed: u64,
    pub reg_cb: f64,
    pub expected_reg_cb: f64,
    pub reg_sq: f64,
    pub gamma: f64,
    pub chain_bound: f64,
    pub chain_holds: bool,
    pub total_oracle_calls: u64,
    pub clamped_predictions: usize,
    pub wall_time_secs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BanditSummary {
    pub regressor: String,
    #[serde(rename = "K")]
    pub actions: usize,
    #[serde(rename = "T")]
    pub horizon: usize,
    pub sigma: f64,
    pub per_seed: Vec<BanditSeedSummary>,
    pub mean_reg_cb: f64,
    pub std_reg_cb: f64,
    pub chain_fraction: f64,
}

pub fn run_bandit_seed(
    config: &BanditConfig,
    seed: u64,
) -> Result<(BanditSeedSummary, BanditOutcome)> {
    config.validate()?;
    let started = Instant::now();
    let tree = SeedTree::new(seed);
    let k = config.actions;
    let class = Arc::new(config.class()?);
    let mu = vec![1.0 / config.contexts as f64; config.contexts];
    let p = greedy_fill(&mu, config.sigma);
    let mut adversary =
        AdversaryState::iid(mu.clone(), p, config.sigma, LabelRule::Rademacher, None)?;
    let joint_sigma = crate::bandit::compose_smoothness(config.sigma, k)?;
    let base = BaseMeasure::finite(product_measure(&mu, k))?;
    let loss = LossFunction::unit_square();
    let mut regressor = match RegressorKind::parse(&config.regressor)? {
        RegressorKind::RelaxGeneral => Regressor::Relax(RelaxLearner::new(
            RelaxState::new(config.horizon, joint_sigma, loss.lipschitz(), base)?,
            RelaxVariant::General,
        )),
        RegressorKind::FtplDual => {
            let s = schedule(
                config.horizon,
                joint_sigma,
                loss.lipschitz(),
                1.0,
                FtplVariant::Dual,
            )?;
            Regressor::Ftpl(FtplLearner::new(s, base)?)
        }
    };
    let mut oracle = Oracle::exact(Arc::clone(&class), loss);
    let mut rng = tree.stream(Stream::Bandit);
    let gamma = config.gamma();
    let outcome = run_square_cb(
        &mut adversary,
        &mut regressor,
        &mut oracle,
        config.f_star,
        k,
        gamma,
        config.horizon,
        &mut rng,
    )?;
    let bound = outcome.chain_bound(k);
    let summary = BanditSeedSummary {
        seed,
        reg_cb: outcome.reg_cb,
        expected_reg_cb: outcome.expected_reg_cb,
        reg_sq: outcome.reg_sq,
        gamma,
        chain_bound: bound,
        chain_holds: outcome.reg_cb <= bound,
        total_oracle_calls: oracle.call_count(),
        clamped_predictions: outcome.clamped_predictions,
        wall_time_secs: started.elapsed().as_secs_f64(),
    };
    Ok((summary, outcome))
}

/// CSV with columns
/// `t,context,action,observed_loss,prediction,action_prob,comparator_loss,oracle_calls`.
pub fn bandit_csv(outcome: &BanditOutcome) -> String {
    let mut out = String::from(
        "t,context,action,observed_loss,prediction,action_prob,comparator_loss,oracle_calls\n",
    );
    for r in &outcome.rounds {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.t,
            Context::Atom(r.context as u32),
            r.action,
            r.observed_loss,
            r.predictions[r.action],
            r.distribution[r.action],
            r.comparator_loss,
            r.oracle_calls_so_far
        );
    }
    out
}

pub fn run_bandit(config: &BanditConfig) -> Result<BanditSummary> {
    config.validate()?;
    let runs: Vec<(BanditSeedSummary, BanditOutcome)> = config
        .seeds
        .par_iter()
        .map(|&seed| run_bandit_seed(config, seed))
        .collect::<Result<_>>()?;
    let regs: Vec<f64> = runs.iter().map(|(s, _)| s.reg_cb).collect();
    let holds = runs.iter().filter(|(s, _)| s.chain_holds).count();
    let summary = BanditSummary {
        regressor: config.regressor.clone(),
        actions: config.actions,
        horizon: config.horizon,
        sigma: config.sigma,
        mean_reg_cb: stats::mean(&regs),
        std_reg_cb: stats::std_dev(&regs),
        chain_fraction: holds as f64 / runs.len() as f64,
        per_seed: runs.iter().map(|(s, _)| s.clone()).collect(),
    };
    if let Some(dir) = &config.output {
        fs::create_dir_all(dir)?;
        for (s, outcome) in &runs {
            fs::write(
                dir.join(format!("bandit_seed{}.csv", s.seed)),
                bandit_csv(outcome),
            )?;
        }
        fs::write(
            dir.join("summary.json"),
            serde_json::to_string_pretty(&summary)?,
        )?;
    }
    Ok(summary)
}

/// Process exit code for an error: 2 for configuration problems, 3 for
/// invariant violations, 1 otherwise.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_)
        | Error::Json(_)
        | Error::InvalidParameter(_)
        | Error::LinearLossRequired(_) => 2,
        Error::Invariant(_) => 3,
        _ => 1,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(learner: &str, t: usize, seeds: Vec<u64>) -> ExperimentConfig {
        ExperimentConfig::from_json(&format!(
            r#"{{"learner": "{learner}", "adversary": {{"kind": "iid", "ground_size": 20,
               "label": {{"kind": "noisy-comparator", "hypothesis": 3, "flip": 0.1}}}},
               "class": {{"kind": "thresholds", "size": 8}}, "T": {t}, "sigma": 0.5, "seeds": {seeds:?}}}"#
        ))
        .unwrap()
    }

    #[test]
    fn single_round_single_seed() {
        for learner in LEARNERS {
            let mut c = config(learner, 1, vec![7]);
            if learner == "relax-general" {
                c.loss = "absolute".into();
            }
            let run = run_seed(&c, 7).unwrap();
            assert_eq!(run.trace.len(), 1);
            assert_eq!(
                trace_csv(&run.trace, &run.running_regret).lines().count(),
                2
            );
        }
    }

    #[test]
    fn aggregate_is_the_mean_of_finals() {
        let c = config("ftpl-cls", 30, (0..10).collect());
        let s = run_experiment(&c).unwrap();
        let finals: Vec<f64> = s.per_seed.iter().map(|r| r.final_regret).collect();
        assert!((s.aggregate.mean_final_regret - finals.iter().sum::<f64>() / 10.0).abs() < 1e-9);
    }

    #[test]
    fn unknown_names_are_listed() {
        let err = ExperimentConfig::from_json(
            r#"{"learner": "bogus", "adversary": {"kind": "iid"}, "T": 5, "sigma": 0.5, "seeds": [1]}"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("relax-linear"));
        assert_eq!(exit_code(&err), 2);
        let err = ExperimentConfig::from_json(
            r#"{"learner": "ftpl-cls", "adversary": {"kind": "nope"}, "T": 5, "sigma": 0.5, "seeds": [1]}"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("adaptive_mixture"));
    }

    #[test]
    fn learner_object_form() {
        let c = ExperimentConfig::from_json(
            r#"{"learner": {"kind": "ftpl-dual", "eta": 3.0, "n": 5}, "adversary": {"kind": "adaptive_mixture", "ground_size": 10},
                "class": {"kind": "thresholds", "size": 4}, "T": 12, "sigma": 0.25, "seeds": [1], "loss": "absolute"}"#,
        )
        .unwrap();
        assert_eq!(c.learner.eta, Some(3.0));
        let run = run_seed(&c, 1).unwrap();
        assert_eq!(run.summary.total_oracle_calls, 12);
    }

    #[test]
    fn set_param_paths() {
        let mut v: Value = serde_json::json!({"T": 10, "learner": {"kind": "ftpl-cls"}, "adversary": {"kind": "iid"}});
        set_param(&mut v, "T", serde_json::json!(20)).unwrap();
        set_param(&mut v, "learner", serde_json::json!("relax-linear")).unwrap();
        set_param(
            &mut v,
            "adversary.kind",
            serde_json::json!("adaptive_mixture"),
        )
        .unwrap();
        assert_eq!(v["T"], 20);
        assert_eq!(v["learner"]["kind"], "relax-linear");
        assert!(set_param(&mut v, "nope", serde_json::json!(1)).is_err());
    }
}
