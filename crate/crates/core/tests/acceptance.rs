//! End-to-end acceptance checks. Each check prints one PASS/FAIL line; the
//! process exits nonzero if any check fails.
//!
//! Reference values are recomputed here from raw tables and hand-written
//! loss formulas rather than through the library's own evaluators.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::Rng;
use rayon::prelude::*;

use smoothol::adversary::greedy_fill;
use smoothol::coupling::{validate_coupling, CouplingConfig};
use smoothol::ftpl::{
    ftpl_select_classification, ftpl_select_dual, ftpl_select_single, GaussianPerturbation,
    Normalization,
};
use smoothol::harness::{self, BanditConfig, ExperimentConfig};
use smoothol::model::{
    comparator_losses, BaseMeasure, Context, HypothesisClass, LossFunction, LossKind, OutputKind,
};
use smoothol::oracle::{ErmQuery, LossSelector, Oracle, WeightedExample, ZetaScaling};
use smoothol::relax::{
    general_call_cap, predict_general, predict_linear, three_point_budget, three_point_min,
    History, RelaxState,
};
use smoothol::rng::{rng_from_seed, ExperimentRng};

struct Outcome {
    pass: bool,
    detail: String,
}

fn ok(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn loss_value(kind: LossKind, a: f64, y: f64) -> f64 {
    match kind {
        LossKind::Absolute => (a - y).abs() / 2.0,
        LossKind::Linear => (1.0 - a * y) / 2.0,
        LossKind::Square => (a - y) * (a - y) / 4.0,
        LossKind::UnitSquare => (a - y) * (a - y),
        _ => unreachable!("only built-in losses are exercised"),
    }
}

fn atom(c: &Context) -> usize {
    match c {
        Context::Atom(a) => *a as usize,
        other => panic!("expected an atom context, got {other}"),
    }
}

fn random_table(rng: &mut ExperimentRng, hyps: usize, atoms: usize, binary: bool) -> Vec<Vec<f64>> {
    (0..hyps)
        .map(|_| {
            (0..atoms)
                .map(|_| {
                    if binary {
                        if rng.random_bool(0.5) {
                            1.0
                        } else {
                            -1.0
                        }
                    } else {
                        rng.random_range(-1.0..=1.0)
                    }
                })
                .collect()
        })
        .collect()
}

fn random_label(rng: &mut ExperimentRng, binary: bool) -> f64 {
    if binary {
        if rng.random_bool(0.5) {
            1.0
        } else {
            -1.0
        }
    } else {
        rng.random_range(-1.0..=1.0)
    }
}

/// Objective of every table row for a query, summed row by row.
fn table_objectives(rows: &[Vec<f64>], kind: LossKind, query: &ErmQuery) -> Vec<f64> {
    rows.iter()
        .map(|h| {
            query
                .rows
                .iter()
                .map(|r| {
                    let v = h[atom(&r.context)];
                    r.weight
                        * match r.selector {
                            LossSelector::Main => loss_value(kind, v, r.label),
                            LossSelector::Identity => v,
                        }
                })
                .sum()
        })
        .collect()
}

fn min_of(xs: &[f64]) -> f64 {
    xs.iter().cloned().fold(f64::INFINITY, f64::min)
}

fn max_of(xs: &[f64]) -> f64 {
    xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
}

// 1
fn coupling_correctness() -> Outcome {
    let mu = vec![0.1; 10];
    let mut worst_p = 1.0f64;
    let mut failures = Vec::new();
    for &sigma in &[0.3, 0.5, 1.0] {
        for &k in &[1usize, 3, 10] {
            let p = greedy_fill(&mu, sigma);
            let cfg = CouplingConfig {
                sigma,
                k,
                mu: mu.clone(),
                p,
                seed: 1000 + k as u64,
            };
            let r = validate_coupling(&cfg, 100_000).expect("coupling run");
            worst_p = worst_p.min(r.x_marginal_pvalue).min(r.z_marginal_pvalue);
            if !(r.marginals_pass(0.01) && r.inclusion_holds(3.0)) {
                failures.push(format!(
                    "sigma={sigma} k={k}: px={:.3} pz={:.3} miss={:.5} bound={:.5}",
                    r.x_marginal_pvalue, r.z_marginal_pvalue, r.miss_rate, r.bound
                ));
            }
        }
    }
    ok(
        failures.is_empty(),
        format!(
            "9 settings, min p-value {worst_p:.3}{}",
            fmt_failures(&failures)
        ),
    )
}

// 2
fn coupling_tightness() -> Outcome {
    let mu = vec![0.1; 10];
    let mut failures = Vec::new();
    let mut closest = f64::INFINITY;
    for &sigma in &[0.3, 0.5, 1.0] {
        for &k in &[1usize, 3, 10] {
            let p = greedy_fill(&mu, sigma);
            let cfg = CouplingConfig {
                sigma,
                k,
                mu: mu.clone(),
                p,
                seed: 2000 + k as u64,
            };
            let r = validate_coupling(&cfg, 100_000).expect("coupling run");
            let expect = (1.0 - sigma).powi(k as i32);
            let std = (expect * (1.0 - expect) / 100_000.0).sqrt();
            if std > 0.0 {
                closest = closest.min((r.miss_rate - (expect - 3.0 * std)) / std);
            }
            if r.miss_rate < expect - 3.0 * std {
                failures.push(format!(
                    "sigma={sigma} k={k}: miss={:.5} < {:.5}",
                    r.miss_rate,
                    expect - 3.0 * std
                ));
            }
        }
    }
    ok(
        failures.is_empty(),
        format!("closest margin {closest:.2} std{}", fmt_failures(&failures)),
    )
}

// 3
fn erm_soundness() -> Outcome {
    let kinds = [
        LossKind::Absolute,
        LossKind::Linear,
        LossKind::Square,
        LossKind::UnitSquare,
    ];
    let zetas = [0.0, 0.0, 0.01, 0.1, 0.5];
    let failures: Vec<String> = (0..10_000u64)
        .into_par_iter()
        .filter_map(|i| {
            let mut rng = rng_from_seed(0xE77 ^ (i << 20));
            let hyps = rng.random_range(1..=256);
            let atoms = rng.random_range(1..=16);
            let binary = rng.random_bool(0.5);
            let rows = random_table(&mut rng, hyps, atoms, binary);
            let kind = kinds[rng.random_range(0..kinds.len())];
            let zeta = zetas[rng.random_range(0..zetas.len())];
            let mut query = ErmQuery::new();
            for _ in 0..rng.random_range(0..40) {
                let ctx = Context::Atom(rng.random_range(0..atoms) as u32);
                let w = rng.random_range(-2.0..2.0);
                query.push(if rng.random_bool(0.5) {
                    WeightedExample::main(ctx, random_label(&mut rng, binary), w)
                } else {
                    WeightedExample::identity(ctx, w)
                });
            }
            let class = HypothesisClass::table(
                rows.clone(),
                if binary {
                    OutputKind::Binary
                } else {
                    OutputKind::RealValued
                },
            )
            .unwrap();
            let loss = LossFunction::new(kind).unwrap();
            let mut oracle = Oracle::approximate(
                Arc::new(class),
                loss,
                zeta,
                ZetaScaling::TotalWeight,
                rng_from_seed(i),
            )
            .unwrap();
            let res = oracle.query(&query).unwrap();
            let objs = table_objectives(&rows, kind, &query);
            let abs_w: f64 = query.rows.iter().map(|r| r.weight.abs()).sum();
            let rounding = 1e-12 * (1.0 + abs_w);
            let bound = min_of(&objs) + zeta * abs_w + rounding;
            let reported = (res.objective_value - objs[res.hypothesis_index]).abs() <= rounding;
            let calls = oracle.call_count() == 1;
            (!(objs[res.hypothesis_index] <= bound && reported && calls)).then(|| {
                format!(
                    "query {i}: got {} bound {bound}",
                    objs[res.hypothesis_index]
                )
            })
        })
        .collect();
    ok(
        failures.is_empty(),
        format!("10000 queries{}", fmt_failures(&failures)),
    )
}

// 4
fn linear_relaxation() -> Outcome {
    let atoms = 20;
    let hyps = 16;
    let horizon = 200;
    let mut rng = rng_from_seed(404);
    let rows = random_table(&mut rng, hyps, atoms, true);
    let class = Arc::new(HypothesisClass::table(rows.clone(), OutputKind::Binary).unwrap());
    let mut oracle = Oracle::exact(Arc::clone(&class), LossFunction::linear());
    let mut state =
        RelaxState::new(horizon, 0.5, 0.5, BaseMeasure::uniform(atoms).unwrap()).unwrap();
    let lip = 0.5;
    let mut hist: Vec<(usize, f64)> = Vec::new();
    let mut worst_gap = 0.0f64;
    let mut worst_dev = 0.0f64;
    let mut bad_calls = 0;
    let steps = 2_000_000usize;
    for _ in 0..horizon {
        let playout = state.draw_playout(&mut rng);
        let x = rng.random_range(0..atoms);
        let before = oracle.call_count();
        let pred = predict_linear(&state, &playout, Context::Atom(x as u32), &mut oracle).unwrap();
        if oracle.call_count() - before != 2 {
            bad_calls += 1;
        }
        worst_gap = worst_gap.max((pred.a_plus - pred.a_minus).abs());
        let a = |y: f64| {
            rows.iter()
                .map(|h| {
                    let play: f64 = playout.sums.iter().map(|(c, s)| s * h[atom(c)]).sum();
                    let past: f64 = hist
                        .iter()
                        .map(|&(xs, ys)| loss_value(LossKind::Linear, h[xs], ys))
                        .sum();
                    6.0 * lip * play - past - loss_value(LossKind::Linear, h[x], y)
                })
                .fold(f64::NEG_INFINITY, f64::max)
        };
        let (ap, am) = (a(1.0), a(-1.0));
        let mut best = (f64::INFINITY, 0.0);
        for i in 0..=steps {
            let yh = -1.0 + 2.0 * i as f64 / steps as f64;
            let v = ((1.0 - yh) / 2.0 + ap).max((1.0 + yh) / 2.0 + am);
            if v < best.0 {
                best = (v, yh);
            }
        }
        worst_dev = worst_dev.max((best.1 - pred.prediction).abs());
        let y = random_label(&mut rng, true);
        state.observe(Context::Atom(x as u32), y);
        hist.push((x, y));
    }
    let pass = worst_gap <= 1.0 && worst_dev <= 1e-6 && bad_calls == 0;
    ok(pass, format!("max |a+ - a-| = {worst_gap:.4}, max deviation {worst_dev:.2e}, rounds with != 2 calls: {bad_calls}"))
}

// 5
fn three_point_search() -> Outcome {
    let mut rng = rng_from_seed(505);
    let mut failures = Vec::new();
    let mut max_ratio = 0.0f64;
    for trial in 0..1000 {
        let n: usize = if trial < 10 {
            4096
        } else {
            rng.random_range(1..=4096)
        };
        let mut slopes: Vec<i64> = (0..n.saturating_sub(1))
            .map(|_| rng.random_range(-50..=50))
            .collect();
        if rng.random_bool(0.3) {
            slopes.iter_mut().for_each(|s| *s = (*s / 20) * 20);
        }
        slopes.sort_unstable();
        let mut values = vec![rng.random_range(-1000..1000i64)];
        for s in &slopes {
            values.push(values.last().unwrap() + s);
        }
        let grid: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let min = *values.iter().min().unwrap();
        let lowest = values.iter().position(|&v| v == min).unwrap();
        let r = three_point_min(&grid, |i| values[i] as f64).unwrap();
        let budget = three_point_budget(n);
        max_ratio = max_ratio.max(r.evaluations as f64 / budget as f64);
        if r.index != lowest || r.evaluations > budget {
            failures.push(format!(
                "n={n}: index {} vs {lowest}, {} evals > {budget}",
                r.index, r.evaluations
            ));
        }
    }
    ok(
        failures.is_empty(),
        format!(
            "1000 functions, max evals/budget {max_ratio:.2}{}",
            fmt_failures(&failures)
        ),
    )
}

// 6
fn general_relaxation() -> Outcome {
    let atoms = 8;
    let horizon = 50;
    let mut rng = rng_from_seed(606);
    let rows = random_table(&mut rng, 5, atoms, false);
    let class = Arc::new(HypothesisClass::table(rows.clone(), OutputKind::RealValued).unwrap());
    let loss = LossFunction::square();
    let lip = loss.lipschitz();
    let mut oracle = Oracle::exact(Arc::clone(&class), loss);
    let mut state =
        RelaxState::new(horizon, 0.5, lip, BaseMeasure::uniform(atoms).unwrap()).unwrap();
    let delta = state.delta;
    let cap = general_call_cap(lip, horizon);
    let dense: Vec<f64> = (0..=2000).map(|i| -1.0 + i as f64 / 1000.0).collect();
    let mut hist: Vec<(usize, f64)> = Vec::new();
    let (mut worst_dev, mut worst_calls) = (0.0f64, 0u64);
    for _ in 0..horizon {
        let playout = state.draw_playout(&mut rng);
        let x = rng.random_range(0..atoms);
        let g = predict_general(&state, &playout, Context::Atom(x as u32), &mut oracle).unwrap();
        worst_calls = worst_calls.max(g.oracle_calls);
        let base: Vec<f64> = rows
            .iter()
            .map(|h| {
                let play: f64 = playout.sums.iter().map(|(c, s)| s * h[atom(c)]).sum();
                let past: f64 = hist
                    .iter()
                    .map(|&(xs, ys)| loss_value(LossKind::Square, h[xs], ys))
                    .sum();
                6.0 * lip * play - past
            })
            .collect();
        let a: Vec<f64> = dense
            .iter()
            .map(|&y| {
                rows.iter()
                    .zip(&base)
                    .map(|(h, b)| b - loss_value(LossKind::Square, h[x], y))
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect();
        let mut best = (f64::INFINITY, 0.0);
        for &yh in &dense {
            let v = dense
                .iter()
                .zip(&a)
                .map(|(&y, ay)| loss_value(LossKind::Square, yh, y) + ay)
                .fold(f64::NEG_INFINITY, f64::max);
            if v < best.0 {
                best = (v, yh);
            }
        }
        worst_dev = worst_dev.max((best.1 - g.prediction).abs());
        let y = rng.random_range(-1.0..=1.0);
        state.observe(Context::Atom(x as u32), y);
        hist.push((x, y));
    }
    let pass = worst_dev <= 2.0 * delta && worst_calls <= cap;
    ok(
        pass,
        format!(
        "max deviation {worst_dev:.4} (2 delta = {:.4}), max calls/round {worst_calls} (cap {cap})",
        2.0 * delta
    ),
    )
}

fn perturbation_objective(
    rows: &[Vec<f64>],
    kind: LossKind,
    hist: &[(usize, f64)],
    perts: &[(&GaussianPerturbation, f64)],
) -> Vec<f64> {
    rows.iter()
        .map(|h| {
            let past: f64 = hist.iter().map(|&(x, y)| loss_value(kind, h[x], y)).sum();
            let noise: f64 = perts
                .iter()
                .map(|(p, mult)| {
                    let scale = match p.normalization {
                        Normalization::InvSqrtN => 1.0 / (p.n as f64).sqrt(),
                        Normalization::None => 1.0,
                    };
                    mult * scale
                        * p.terms
                            .iter()
                            .map(|t| {
                                let v = h[atom(&t.context)];
                                t.coeff * t.label.map_or(v, |y| loss_value(kind, v, y))
                            })
                            .sum::<f64>()
                })
                .sum();
            past + noise
        })
        .collect()
}

// 7
fn ftpl_exactness() -> Outcome {
    let atoms = 10;
    let base = BaseMeasure::uniform(atoms).unwrap();
    let mut notes = Vec::new();
    let mut failures = Vec::new();
    for variant in ["classification", "dual", "single"] {
        let mut rng = rng_from_seed(707);
        let binary = variant == "classification";
        let rows = random_table(&mut rng, 12, atoms, binary);
        let kind = if binary {
            LossKind::Linear
        } else {
            LossKind::Absolute
        };
        let out_kind = if binary {
            OutputKind::Binary
        } else {
            OutputKind::RealValued
        };
        let class = Arc::new(HypothesisClass::table(rows.clone(), out_kind).unwrap());
        let mut oracle = Oracle::exact(Arc::clone(&class), LossFunction::new(kind).unwrap());
        let mut history = History::new();
        let mut hist = Vec::new();
        let (mut mismatches, mut bad_calls) = (0, 0);
        for _ in 0..1000 {
            let before = oracle.call_count();
            let (chosen, objs) = match variant {
                "classification" => {
                    let p = GaussianPerturbation::sample_process(&base, 40, &mut rng);
                    let h = ftpl_select_classification(&history, &p, 3.0, &mut oracle).unwrap();
                    (h, perturbation_objective(&rows, kind, &hist, &[(&p, 3.0)]))
                }
                "dual" => {
                    let pm = GaussianPerturbation::sample_process(&base, 30, &mut rng);
                    let pn = GaussianPerturbation::sample_label_process(&base, 30, 0.25, &mut rng)
                        .unwrap();
                    let h = ftpl_select_dual(&history, &pm, &pn, 4.0, &mut oracle).unwrap();
                    (
                        h,
                        perturbation_objective(&rows, kind, &hist, &[(&pm, 4.0), (&pn, 1.0)]),
                    )
                }
                _ => {
                    let p = GaussianPerturbation::sample_label_process(&base, 25, 0.2, &mut rng)
                        .unwrap();
                    let h = ftpl_select_single(&history, &p, 0.7, &mut oracle).unwrap();
                    (h, perturbation_objective(&rows, kind, &hist, &[(&p, 0.7)]))
                }
            };
            if oracle.call_count() - before != 1 {
                bad_calls += 1;
            }
            let min = min_of(&objs);
            let lowest = objs.iter().position(|&v| v == min).unwrap();
            let tie = (objs[chosen] - min).abs() <= 1e-9 * (1.0 + min.abs());
            if chosen != lowest && !tie {
                mismatches += 1;
            }
            let x = rng.random_range(0..atoms);
            let y = random_label(&mut rng, binary);
            history.push(Context::Atom(x as u32), y);
            hist.push((x, y));
        }
        notes.push(format!("{variant}: {mismatches} mismatches"));
        if mismatches > 0 || bad_calls > 0 {
            failures.push(format!(
                "{variant}: {mismatches} mismatches, {bad_calls} rounds with != 1 call"
            ));
        }
    }
    ok(
        failures.is_empty(),
        format!("{}{}", notes.join(", "), fmt_failures(&failures)),
    )
}

// 8
fn perturbation_covariance() -> Outcome {
    let atoms = 10;
    let hyps = 8;
    let n = 40;
    let draws = 10_000;
    let mut rng = rng_from_seed(808);
    let rows = random_table(&mut rng, hyps, atoms, false);
    let anchors =
        GaussianPerturbation::sample_anchors(&BaseMeasure::uniform(atoms).unwrap(), n, &mut rng);
    let mut samples = vec![vec![0.0; hyps]; draws];
    for s in samples.iter_mut() {
        let p = GaussianPerturbation::from_anchors(&anchors, Normalization::InvSqrtN, &mut rng);
        for (h, slot) in s.iter_mut().enumerate() {
            *slot = p
                .terms
                .iter()
                .map(|t| t.coeff * rows[h][atom(&t.context)])
                .sum::<f64>()
                / (n as f64).sqrt();
        }
    }
    let target = |f: usize, g: usize| {
        anchors
            .iter()
            .map(|c| rows[f][atom(c)] * rows[g][atom(c)])
            .sum::<f64>()
            / n as f64
    };
    let means: Vec<f64> = (0..hyps)
        .map(|h| samples.iter().map(|s| s[h]).sum::<f64>() / draws as f64)
        .collect();
    let mut worst = 0.0f64;
    for f in 0..hyps {
        for g in 0..hyps {
            let emp = samples
                .iter()
                .map(|s| (s[f] - means[f]) * (s[g] - means[g]))
                .sum::<f64>()
                / (draws - 1) as f64;
            let se = ((target(f, f) * target(g, g) + target(f, g).powi(2)) / draws as f64).sqrt();
            worst = worst.max((emp - target(f, g)).abs() / se);
        }
    }
    ok(
        worst <= 4.0,
        format!("64 entries, max deviation {worst:.2} std errors"),
    )
}

const THRESHOLDS_64: &str = r#"{"kind": "thresholds", "size": 64}"#;

fn experiment(
    learner: &str,
    adversary: &str,
    class: &str,
    loss: &str,
    horizon: usize,
    sigma: f64,
) -> ExperimentConfig {
    ExperimentConfig::from_json(&format!(
        r#"{{"learner": {learner}, "adversary": {adversary}, "class": {class},
            "loss": "{loss}", "T": {horizon}, "sigma": {sigma}, "seeds": [0]}}"#
    ))
    .unwrap()
}

// 9
fn regret_sublinearity() -> Outcome {
    let adversary = r#"{"kind": "iid", "ground_size": 100, "p": "tilted",
        "label": {"kind": "noisy-comparator", "hypothesis": 20, "flip": 0.1}}"#;
    let mut notes = Vec::new();
    let mut pass = true;
    for learner in ["relax-linear", "ftpl-cls"] {
        let quoted = format!("\"{learner}\"");
        let short = experiment(&quoted, adversary, THRESHOLDS_64, "linear", 200, 0.2);
        let long = experiment(&quoted, adversary, THRESHOLDS_64, "linear", 2000, 0.2);
        let rows: Vec<(f64, f64, f64)> = (0..10u64)
            .into_par_iter()
            .map(|seed| {
                let a = harness::run_seed(&short, seed).unwrap();
                let b = harness::run_seed(&long, seed).unwrap();
                let losses =
                    comparator_losses(&b.trace, &b.class, &LossFunction::linear()).unwrap();
                let gap = (max_of(&losses) - min_of(&losses)) / 2000.0;
                (a.summary.final_regret / 200.0, b.summary.final_regret, gap)
            })
            .collect();
        let decreasing = rows
            .iter()
            .filter(|(r200, r2000, _)| r2000 / 2000.0 < *r200)
            .count();
        let below = rows
            .iter()
            .filter(|(_, r2000, gap)| *r2000 < 0.5 * gap * 2000.0)
            .count();
        let mean_rate = rows.iter().map(|r| r.1 / 2000.0).sum::<f64>() / 10.0;
        let mean_gap = rows.iter().map(|r| r.2).sum::<f64>() / 10.0;
        pass &= decreasing >= 8 && below == 10;
        notes.push(format!(
            "{learner}: decreasing {decreasing}/10, below half-gap {below}/10, Reg/T at 2000 {mean_rate:.4}, gap {mean_gap:.3}"
        ));
    }
    ok(pass, notes.join("; "))
}

// 10
fn hidden_mu_hardness() -> Outcome {
    let horizon = 40;
    let sigma = 1.0 / horizon as f64;
    let adversary = r#"{"kind": "hidden_mu_threshold"}"#;
    let low = horizon as f64 / 2.0 - 3.0 * (horizon as f64).sqrt();
    let high = horizon as f64 / 2.0 + 3.0 * (horizon as f64).sqrt();
    let learners = [
        (r#""relax-linear""#, "linear"),
        (r#""relax-general""#, "absolute"),
        (r#""ftpl-cls""#, "linear"),
        (r#""ftpl-dual""#, "absolute"),
        (r#""ftpl-single""#, "absolute"),
    ];
    let mut notes = Vec::new();
    let mut pass = true;
    for (learner, loss) in learners {
        let cfg = experiment(
            learner,
            adversary,
            r#"{"kind": "dyadic_thresholds"}"#,
            loss,
            horizon,
            sigma,
        );
        let rows: Vec<(f64, f64)> = (0..200u64)
            .into_par_iter()
            .map(|seed| {
                let run = harness::run_seed(&cfg, seed).unwrap();
                (run.summary.learner_loss, run.summary.comparator_loss)
            })
            .collect();
        let inside = rows
            .iter()
            .filter(|(m, _)| (low..=high).contains(m))
            .count();
        let realizable = rows.iter().filter(|(_, c)| c.abs() < 1e-12).count();
        let mean = rows.iter().map(|r| r.0).sum::<f64>() / rows.len() as f64;
        pass &= inside == 200 && realizable == 200;
        notes.push(format!(
            "{}: mean mistakes {mean:.2}, in range {inside}/200, comparator 0 in {realizable}/200",
            cfg.learner.kind
        ));
    }
    ok(pass, notes.join("; "))
}

fn bandit_config(horizon: usize, seeds: &[u64], regressor: &str) -> BanditConfig {
    BanditConfig::from_json(&format!(
        r#"{{"K": 2, "sigma": 0.5, "T": {horizon}, "seeds": {seeds:?}, "class_size": 4, "class_seed": 11,
            "f_star": 0, "regressor": "{regressor}"}}"#
    ))
    .unwrap()
}

// 11
fn square_cb_chain() -> Outcome {
    let seeds: Vec<u64> = (0..20).collect();
    let mut pass = true;
    let mut details = Vec::new();
    for regressor in ["relax-general", "ftpl-dual"] {
        let long = harness::run_bandit(&bandit_config(2000, &seeds, regressor)).unwrap();
        let holds = long.per_seed.iter().filter(|s| s.chain_holds).count();
        let short = harness::run_bandit(&bandit_config(200, &seeds[..10], regressor)).unwrap();
        let decreasing = short
            .per_seed
            .iter()
            .zip(&long.per_seed)
            .filter(|(a, b)| b.expected_reg_cb / 2000.0 < a.expected_reg_cb / 200.0)
            .count();
        let slack = long
            .per_seed
            .iter()
            .map(|s| s.chain_bound - s.reg_cb)
            .fold(f64::INFINITY, f64::min);
        let mean = |runs: &[harness::BanditSeedSummary], t: f64| {
            runs.iter().map(|s| s.expected_reg_cb / t).sum::<f64>() / runs.len() as f64
        };
        pass &= holds * 100 >= 95 * seeds.len() && decreasing >= 8;
        details.push(format!(
            "{regressor}: chain holds {holds}/20 (min slack {slack:.1}), E[Reg_CB]/T decreasing {decreasing}/10 \
             (mean {:.4} -> {:.4})",
            mean(&short.per_seed, 200.0),
            mean(&long.per_seed[..10], 2000.0)
        ));
    }
    ok(pass, details.join("; "))
}

fn csv_files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect()
}

// 12
fn determinism() -> Outcome {
    let configs = [
        (r#""relax-linear""#, "linear"),
        (r#""relax-general""#, "absolute"),
        (r#""ftpl-cls""#, "linear"),
        (r#""ftpl-dual""#, "absolute"),
        (r#""ftpl-single""#, "absolute"),
    ];
    let adversary = r#"{"kind": "adaptive_mixture", "ground_size": 30,
        "label": {"kind": "noisy-comparator", "hypothesis": 5, "flip": 0.2}}"#;
    let mut compared = 0;
    let mut pass = true;
    for (learner, loss) in configs {
        let mut outputs = Vec::new();
        for _ in 0..2 {
            let dir = tempfile::tempdir().unwrap();
            let mut cfg = experiment(learner, adversary, THRESHOLDS_64, loss, 60, 0.3);
            cfg.seeds = vec![3, 17, 99];
            cfg.output = Some(dir.path().to_path_buf());
            harness::run_experiment(&cfg).unwrap();
            outputs.push(csv_files(dir.path()));
        }
        compared += outputs[0].len();
        pass &= outputs[0].len() == 3 && outputs[0] == outputs[1];
    }
    let mut outputs = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = bandit_config(150, &[4, 5], "relax-general");
        cfg.output = Some(dir.path().to_path_buf());
        harness::run_bandit(&cfg).unwrap();
        outputs.push(csv_files(dir.path()));
    }
    compared += outputs[0].len();
    pass &= outputs[0].len() == 2 && outputs[0] == outputs[1];
    ok(
        pass,
        format!("{compared} CSV files byte-identical across reruns"),
    )
}

fn fmt_failures(failures: &[String]) -> String {
    if failures.is_empty() {
        String::new()
    } else {
        format!(
            "; failures: {}",
            failures
                .iter()
                .take(5)
                .cloned()
                .collect::<Vec<_>>()
                .join(" | ")
        )
    }
}

type Check = (u32, &'static str, u64, fn() -> Outcome);

fn main() {
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let checks: [Check; 12] = [
        (1, "coupling correctness", 30, coupling_correctness),
        (2, "coupling tightness", 10, coupling_tightness),
        (3, "ERM oracle soundness", 20, erm_soundness),
        (4, "linear-loss relaxation", 60, linear_relaxation),
        (5, "three-point search", 10, three_point_search),
        (
            6,
            "general relaxation vs dense grid",
            120,
            general_relaxation,
        ),
        (7, "FTPL exactness", 30, ftpl_exactness),
        (8, "perturbation covariance", 20, perturbation_covariance),
        (9, "regret sublinearity", 600, regret_sublinearity),
        (10, "hidden-mu hardness", 60, hidden_mu_hardness),
        (11, "SquareCB chain", 600, square_cb_chain),
        (12, "determinism", 10, determinism),
    ];
    let mut failed = 0;
    for (id, name, limit, check) in checks {
        if !filter.is_empty()
            && !filter
                .iter()
                .any(|f| name.contains(f.as_str()) || *f == id.to_string())
        {
            continue;
        }
        let start = Instant::now();
        let outcome = check();
        let elapsed = start.elapsed();
        let in_time = elapsed <= Duration::from_secs(limit);
        let pass = outcome.pass && in_time;
        if !pass {
            failed += 1;
        }
        println!(
            "{} criterion {id:>2} {name}: {} [{:.1}s / {limit}s{}]",
            if pass { "PASS" } else { "FAIL" },
            outcome.detail,
            elapsed.as_secs_f64(),
            if in_time { "" } else { ", over time limit" }
        );
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
