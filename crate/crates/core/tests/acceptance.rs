//! Acceptance suite. Runs as a plain binary (no libtest harness) so that
//! every criterion prints exactly one PASS/FAIL line, in order, even when
//! earlier ones fail. Exits non-zero if any criterion fails.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use mtroute::backends::{RequestContext, SimulatedQe, SimulatedTranslator};
use mtroute::classifier::softmax;
use mtroute::harness::report::{self, AuditWriter};
use mtroute::harness::{confusion_matrix, Experiment, GridSpec};
use mtroute::simulation::{default_engines, generate_corpus, CorpusParams, SimulationParams};
use mtroute::{
    normalized_entropy, sample_engines, DefaultRouter, Features, Learner, Probabilities, Request,
    RerankPolicy, RouterConfig, SoftmaxModel,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// Pinned tolerances and sizes.
const A2_SEEDS: usize = 20;
const A2_N: usize = 3000;
const A2_ALPHA: f64 = 0.2;
const A2_COST_RATIO: f64 = 0.75;
const A3_QUALITY_GAP: f64 = 0.02;
const A4_SEEDS: usize = 10;
const A4_N: usize = 2000;
const A4_WINDOW: usize = 100;
const A4_WITHIN: usize = 500;
const A4_FINAL: usize = 1000;
const A4_FRACTION: f64 = 0.90;
const A5_ALPHAS: [f64; 4] = [0.0, 0.2, 0.5, 1.0];
const A5_SEEDS: usize = 10;
const A6_FD_REL: f64 = 1e-5;
const A6_ENTROPY_ABS: f64 = 1e-12;
const A6_MARGINAL_ABS: f64 = 0.01;
const A6_DRAWS: usize = 100_000;
const A6_FUZZ: usize = 10_000;
const A8_REPORT_MS: f64 = 10.0;
const A8_HARD_MS: f64 = 50.0;
const A9_STEPS: usize = 1000;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

/// Default simulator noise unless `qe_noise` overrides the estimator's.
fn simulation(n: usize, engines: usize, domains: usize, noise: f64, qe_noise: Option<f64>) -> SimulationParams {
    let defaults = SimulationParams::default();
    SimulationParams {
        corpus: CorpusParams {
            n_requests: n,
            n_engines: engines,
            n_domains: domains,
            feature_noise_sigma: noise,
            ..CorpusParams::default()
        },
        qe_noise_sigma: qe_noise.unwrap_or(defaults.qe_noise_sigma),
        ..defaults
    }
}

fn experiment(sp: &SimulationParams) -> Experiment {
    let requests = generate_corpus(&sp.corpus).unwrap();
    let world = sp.world(&requests).unwrap();
    Experiment {
        requests,
        engines: default_engines(sp.corpus.n_engines),
        translator: Arc::new(SimulatedTranslator::new(world.clone())),
        qe: Arc::new(SimulatedQe::new(world.clone())),
        oracle: world,
        router: RouterConfig::default(),
        parallel: true,
    }
}

/// A1: max_mts = K, alpha = 0 reproduces the full ensemble per request.
fn a1() -> Outcome {
    let started = Instant::now();
    let k = 4;
    let ex = experiment(&simulation(500, k, 4, 0.3, Some(0.0)));
    let baseline = ex.baseline_full_ensemble().unwrap();
    let ensemble: HashMap<String, usize> = baseline
        .iter()
        .map(|b| (b.request_id.clone(), b.ensemble_choice))
        .collect();
    let records = ex.run_once(k, 0.0, 7, &ensemble).unwrap();
    let by_id: HashMap<&str, &Request> = ex.requests.iter().map(|r| (r.id.as_str(), r)).collect();
    let mut mismatches = 0;
    for r in &records {
        let req = by_id[r.outcome.request_id.as_str()];
        let ctx = RequestContext {
            request_id: &req.id,
            source: &req.source,
            target_lang: "",
        };
        let reference = ex
            .translator
            .translate(&ex.engines[r.ensemble_choice], &ctx)
            .unwrap();
        if r.outcome.chosen_engine != r.ensemble_choice || r.outcome.translation != reference {
            mismatches += 1;
        }
    }
    let router: Vec<usize> = records.iter().map(|r| r.outcome.chosen_engine).collect();
    let reference: Vec<usize> = records.iter().map(|r| r.ensemble_choice).collect();
    let cm = confusion_matrix(&router, &reference, 100, k).unwrap();
    let identity = (0..k).all(|i| {
        (0..k).all(|j| cm.normalized[i][j] == if i == j && cm.supported[i] { 1.0 } else { 0.0 })
    });
    let secs = started.elapsed().as_secs_f64();
    outcome(
        mismatches == 0 && records.len() == 500 && identity && secs < 30.0,
        format!("{mismatches}/500 mismatches, confusion identity={identity}, {secs:.2}s (limit 30s)"),
    )
}

/// Runs the A2/A3 study once: every max_mts at alpha 0.2, 20 router seeds.
fn cost_quality_study() -> mtroute::harness::ExperimentReport {
    let ex = experiment(&simulation(A2_N, 6, 4, 0.3, None));
    let grid = GridSpec {
        max_mts: Vec::new(),
        alpha: vec![A2_ALPHA],
        repetitions: A2_SEEDS,
        base_seed: 2024,
        ..GridSpec::default()
    };
    ex.run_grid(&grid, |_, _| Ok(())).unwrap().0
}

fn a2(report: &mtroute::harness::ExperimentReport) -> Outcome {
    let costs: Vec<f64> = report.cells.iter().map(|c| c.cost.mean).collect();
    let increasing = costs.windows(2).all(|w| w[0] < w[1]);
    let full = report.full_ensemble.total_cost;
    let top = *costs.last().unwrap();
    let ratio = top / full;
    outcome(
        increasing && ratio <= A2_COST_RATIO,
        format!(
            "mean cost by max_mts {:?}; cost(K)/full = {ratio:.4} (limit {A2_COST_RATIO}), full = {full:.4}",
            costs.iter().map(|c| format!("{c:.4}")).collect::<Vec<_>>()
        ),
    )
}

fn a3(report: &mtroute::harness::ExperimentReport) -> Outcome {
    let n = A2_SEEDS as f64;
    let mut worst = f64::INFINITY;
    let mut ok = true;
    for w in report.cells.windows(2) {
        let se = (w[0].quality.std.powi(2) / n + w[1].quality.std.powi(2) / n).sqrt();
        let slack = w[1].quality.mean - w[0].quality.mean + se;
        worst = worst.min(slack);
        ok &= slack >= 0.0;
    }
    let qk = report.cells.last().unwrap().quality.mean;
    let full = report.full_ensemble.mean_quality;
    ok &= qk >= full - A3_QUALITY_GAP;
    outcome(
        ok,
        format!(
            "mean quality by max_mts {:?}; min(q[m+1]-q[m]+SE) = {worst:.5}; q(K) = {qk:.4} vs full {full:.4} (gap limit {A3_QUALITY_GAP})",
            report
                .cells
                .iter()
                .map(|c| format!("{:.4}", c.quality.mean))
                .collect::<Vec<_>>()
        ),
    )
}

/// A4: windowed weighted F1 against ensemble labels, averaged over seeds.
fn a4() -> Outcome {
    let ex = experiment(&simulation(A4_N, 6, 4, 0.05, None));
    let grid = GridSpec {
        max_mts: vec![RouterConfig::default().max_mts],
        alpha: vec![A2_ALPHA],
        repetitions: A4_SEEDS,
        base_seed: 44,
        window: A4_WINDOW,
        ..GridSpec::default()
    };
    let (report, _) = ex.run_grid(&grid, |_, _| Ok(())).unwrap();
    let series = &report.cells[0].convergence;
    let n = series.len();
    let final_value = series[n - A4_FINAL..].iter().sum::<f64>() / A4_FINAL as f64;
    let target = A4_FRACTION * final_value;
    // Only full windows count, so a lucky first few agreements cannot pass.
    let reached = (A4_WINDOW - 1..A4_WITHIN).find(|&i| series[i] >= target);
    outcome(
        reached.is_some(),
        format!(
            "final-{A4_FINAL} mean F1 = {final_value:.4}, target {target:.4}; first reached at request {} (limit {A4_WITHIN})",
            reached.map_or("never".to_string(), |i| (i + 1).to_string())
        ),
    )
}

/// A5: exploit fraction across alpha, same corpus and router seeds.
fn a5() -> (Outcome, Outcome) {
    let ex = experiment(&simulation(1000, 6, 4, 0.3, None));
    // The grid's per-cell seed derivation would give every alpha its own
    // seeds; a fixed seed set shared across alphas is used instead.
    let baseline = ex.baseline_full_ensemble().unwrap();
    let ensemble: HashMap<String, usize> = baseline
        .iter()
        .map(|b| (b.request_id.clone(), b.ensemble_choice))
        .collect();
    let fractions: Vec<f64> = A5_ALPHAS
        .iter()
        .map(|&a| {
            (0..A5_SEEDS as u64)
                .map(|s| {
                    let recs = ex.run_once(2, a, 500 + s, &ensemble).unwrap();
                    recs.iter().filter(|r| r.outcome.qe_calls == 0).count() as f64 / recs.len() as f64
                })
                .sum::<f64>()
                / A5_SEEDS as f64
        })
        .collect();
    let zero_at_zero = fractions[0] == 0.0;
    let non_increasing = fractions.windows(2).all(|w| w[1] <= w[0]);
    let non_decreasing = fractions.windows(2).all(|w| w[1] >= w[0]);
    let text = format!(
        "exploit fraction at alpha {A5_ALPHAS:?} = {:?}",
        fractions.iter().map(|f| format!("{f:.4}")).collect::<Vec<_>>()
    );
    (
        outcome(
            zero_at_zero && non_increasing,
            format!("{text}; zero at alpha=0: {zero_at_zero}; non-increasing: {non_increasing}"),
        ),
        outcome(
            zero_at_zero && non_decreasing,
            format!("{text}; non-decreasing: {non_decreasing}"),
        ),
    )
}

fn loss(model: &SoftmaxModel, x: &[f64], label: usize) -> f64 {
    // Independent of the model's own forward pass: log-sum-exp by hand.
    let dim = x.len();
    let logits: Vec<f64> = model
        .weights()
        .chunks(dim)
        .zip(model.bias())
        .map(|(row, b)| b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
        .collect();
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
    let l2 = model.l2();
    lse - logits[label] + 0.5 * l2 * model.weights().iter().map(|w| w * w).sum::<f64>()
}

fn a6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(66);
    let mut notes = Vec::new();

    // (a) analytic gradient vs central differences.
    let h = 1e-5;
    let mut worst_rel: f64 = 0.0;
    for _ in 0..100 {
        let k = rng.random_range(2..8);
        let dim = rng.random_range(1..12);
        let mut model = SoftmaxModel::new(k, dim, 0.1, rng.random_range(0.0..0.1));
        for w in model.weights_mut() {
            *w = rng.random_range(-2.0..2.0);
        }
        for b in model.bias_mut() {
            *b = rng.random_range(-1.0..1.0);
        }
        let x: Vec<f64> = (0..dim).map(|_| rng.random_range(-3.0..3.0)).collect();
        let label = rng.random_range(0..k);
        let g = model.gradient(&Features::new(x.clone()).unwrap(), label).unwrap();
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..k * dim {
            let orig = model.weights()[i];
            model.weights_mut()[i] = orig + h;
            let up = loss(&model, &x, label);
            model.weights_mut()[i] = orig - h;
            let down = loss(&model, &x, label);
            model.weights_mut()[i] = orig;
            let fd = (up - down) / (2.0 * h);
            num += (fd - g.weights[i]).powi(2);
            den += g.weights[i].powi(2);
        }
        for j in 0..k {
            let orig = model.bias()[j];
            model.bias_mut()[j] = orig + h;
            let up = loss(&model, &x, label);
            model.bias_mut()[j] = orig - h;
            let down = loss(&model, &x, label);
            model.bias_mut()[j] = orig;
            let fd = (up - down) / (2.0 * h);
            num += (fd - g.bias[j]).powi(2);
            den += g.bias[j].powi(2);
        }
        worst_rel = worst_rel.max(num.sqrt() / den.sqrt().max(1e-12));
    }
    let grad_ok = worst_rel < A6_FD_REL;
    notes.push(format!("(a) worst relative FD error {worst_rel:.2e}"));

    // (b) entropy boundary cases.
    let e_uniform = normalized_entropy(&Probabilities::uniform(7));
    let e_onehot = normalized_entropy(&Probabilities::new(vec![0.0, 1.0, 0.0]).unwrap());
    let e_half = normalized_entropy(&Probabilities::new(vec![0.5, 0.5, 0.0, 0.0]).unwrap());
    let ent_ok = (e_uniform - 1.0).abs() <= A6_ENTROPY_ABS
        && e_onehot.abs() <= A6_ENTROPY_ABS
        && (e_half - 0.5).abs() <= A6_ENTROPY_ABS;
    notes.push(format!("(b) uniform {e_uniform}, one-hot {e_onehot}, half {e_half}"));

    // (c) sampler first-element marginal.
    let mut worst_marginal: f64 = 0.0;
    for _ in 0..5 {
        let k = rng.random_range(3..7);
        let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
        let s: f64 = raw.iter().sum();
        let p = Probabilities::new(raw.iter().map(|v| v / s).collect()).unwrap();
        let mut counts = vec![0usize; k];
        for _ in 0..A6_DRAWS {
            counts[sample_engines(&p, 2, &mut rng).unwrap()[0]] += 1;
        }
        for (c, &pi) in counts.iter().zip(p.as_slice()) {
            worst_marginal = worst_marginal.max((*c as f64 / A6_DRAWS as f64 - pi).abs());
        }
    }
    let marg_ok = worst_marginal < A6_MARGINAL_ABS;
    notes.push(format!("(c) worst marginal deviation {worst_marginal:.4}"));

    // (d) simplex invariant under random models, including extreme logits.
    let mut simplex_failures = 0;
    for i in 0..A6_FUZZ {
        let k = rng.random_range(1..10);
        let dim = rng.random_range(1..10);
        let scale = [1.0, 50.0, 1e3][i % 3];
        let mut model = SoftmaxModel::new(k, dim, 0.1, 0.0);
        for w in model.weights_mut() {
            *w = rng.random_range(-scale..scale);
        }
        let x: Vec<f64> = (0..dim).map(|_| rng.random_range(-10.0..10.0)).collect();
        match model.predict_proba(&Features::new(x).unwrap()) {
            Ok(p) => {
                let s: f64 = p.as_slice().iter().sum();
                if (s - 1.0).abs() > 1e-9 || p.as_slice().iter().any(|v| !(0.0..=1.0).contains(v)) {
                    simplex_failures += 1;
                }
            }
            Err(_) => simplex_failures += 1,
        }
    }
    let softmax_ok = softmax(&[1000.0, -1000.0]) == vec![1.0, 0.0];
    notes.push(format!("(d) {simplex_failures}/{A6_FUZZ} simplex violations"));

    outcome(
        grad_ok && ent_ok && marg_ok && simplex_failures == 0 && softmax_ok,
        notes.join("; "),
    )
}

fn files_under(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.push((rel, fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

/// A7: two full grids (paper shape, 6 x 10, two repetitions) are
/// byte-identical, tables and audit trails alike.
fn a7() -> Outcome {
    let sp = simulation(300, 6, 4, 0.3, None);
    let grid = GridSpec {
        repetitions: 2,
        base_seed: 77,
        ..GridSpec::default()
    };
    let dirs: Vec<_> = (0..2).map(|_| tempfile::tempdir().unwrap()).collect();
    for d in &dirs {
        let ex = experiment(&sp);
        let audit = AuditWriter::create(d.path()).unwrap();
        audit.write_manifest(&grid, &ex.engines).unwrap();
        let (rep, base) = ex.run_grid(&grid, |k, r| audit.write_run(k, r)).unwrap();
        audit.write_baseline(&base).unwrap();
        report::write_report(d.path(), &rep).unwrap();
    }
    let a = files_under(dirs[0].path());
    let b = files_under(dirs[1].path());
    let runs = a.iter().filter(|(n, _)| n.contains("runs")).count();
    let identical = a == b;
    let recomputed = report::recompute(dirs[0].path()).unwrap();
    let tables_match = report::cells_csv(&recomputed).as_bytes()
        == a.iter().find(|(n, _)| n == "cells.csv").unwrap().1.as_slice();
    outcome(
        identical && runs == 120 && tables_match,
        format!(
            "{} files compared, {runs} run trails, identical={identical}, recomputed cells.csv identical={tables_match}",
            a.len()
        ),
    )
}

/// A8: decision time with a queue of one, backend time excluded.
fn a8() -> Outcome {
    let sp = simulation(2000, 6, 4, 0.3, None);
    let ex = experiment(&sp);
    let mut router = DefaultRouter::with_softmax(
        RouterConfig::default(),
        ex.engines.clone(),
        ex.translator.clone(),
        ex.qe.clone(),
        ex.feature_dim(),
    )
    .unwrap();
    let mut times = Vec::with_capacity(ex.requests.len());
    for r in ex.requests.iter().cloned() {
        router.push(r).unwrap();
        let backend_before = router.backend_time();
        let t = Instant::now();
        router.step().unwrap();
        let total = t.elapsed();
        let backend = router.backend_time() - backend_before;
        times.push(total.saturating_sub(backend));
    }
    times.sort();
    let median: Duration = times[times.len() / 2];
    let ms = median.as_secs_f64() * 1e3;
    outcome(
        ms < A8_HARD_MS,
        format!(
            "median decision time {ms:.4} ms over {} steps (target {A8_REPORT_MS} ms: {}; hard limit {A8_HARD_MS} ms)",
            times.len(),
            if ms < A8_REPORT_MS { "met" } else { "missed" }
        ),
    )
}

/// A9: under the full policy every pop is a brute-force entropy maximum.
fn a9() -> Outcome {
    let sp = simulation(A9_STEPS, 5, 3, 0.3, None);
    let ex = experiment(&sp);
    let config = RouterConfig {
        max_mts: 2,
        alpha: 0.4,
        rerank_policy: RerankPolicy::Full,
        learning_rate: 0.5,
        ..RouterConfig::default()
    };
    let mut router =
        DefaultRouter::with_softmax(config, ex.engines.clone(), ex.translator.clone(), ex.qe.clone(), ex.feature_dim())
            .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut pending = ex.requests.clone().into_iter();
    let mut steps = 0;
    let mut violations = 0;
    while steps < A9_STEPS {
        for _ in 0..rng.random_range(0..4) {
            if let Some(r) = pending.next() {
                router.push(r).unwrap();
            }
        }
        if router.queue().is_empty() {
            match pending.next() {
                Some(r) => router.push(r).unwrap(),
                None => break,
            }
        }
        let mut best: Option<(f64, u64, String)> = None;
        for e in router.queue().entries() {
            let h = normalized_entropy(&router.learner().predict_proba(&e.request.features).unwrap());
            let better = match &best {
                None => true,
                Some((bh, ba, _)) => h > *bh || (h == *bh && e.request.arrival_index < *ba),
            };
            if better {
                best = Some((h, e.request.arrival_index, e.request.id.clone()));
            }
        }
        let (h, _, id) = best.unwrap();
        let out = router.step().unwrap();
        if out.request_id != id || out.entropy_at_decision != h {
            violations += 1;
        }
        steps += 1;
    }
    outcome(
        violations == 0 && steps == A9_STEPS,
        format!("{violations} violations over {steps} steps"),
    )
}

fn main() {
    let mut results: Vec<(&str, Outcome)> = Vec::new();
    let mut record = |name: &'static str, o: Outcome| {
        println!("{name} {} {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((name, o));
    };
    record("A1", a1());
    let study = cost_quality_study();
    record("A2", a2(&study));
    record("A3", a3(&study));
    record("A4", a4());
    let (literal, reversed) = a5();
    record("A5", literal);
    println!(
        "   (A5 reversed-direction check, informational: {} {})",
        if reversed.pass { "PASS" } else { "FAIL" },
        reversed.detail
    );
    record("A6", a6());
    record("A7", a7());
    record("A8", a8());
    record("A9", a9());
    let failed: Vec<&str> = results.iter().filter(|(_, o)| !o.pass).map(|(n, _)| *n).collect();
    println!(
        "acceptance: {} passed, {} failed{}",
        results.len() - failed.len(),
        failed.len(),
        if failed.is_empty() {
            String::new()
        } else {
            format!(" ({})", failed.join(", "))
        }
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
