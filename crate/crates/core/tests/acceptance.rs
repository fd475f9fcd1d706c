//! Acceptance suite: one PASS/FAIL line per criterion, tolerances pinned.
//!
//! Run with `cargo test -p salsa-core --test acceptance`.

use std::alloc::{GlobalAlloc, Layout, System};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::{Duration, Instant};

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use salsa_core::acquisition::{estimate_acquisition_probability, normal_cdf, AcquisitionConfig, StrategyKind};
use salsa_core::driver::{Experiment, Method, RoundRecord, RunConfig, RunOptions, RunResult};
use salsa_core::oracle::{CountedObjective, ExternalScorer, Objective, ScoreLedger};
use salsa_core::space::{Candidate, ProductSpace};
use salsa_core::surrogate::{
    conjugate_posterior, mve_loss, GaussianPrediction, Head, Layout as ModelLayout, Network, TabularGaussian,
};
use salsa_core::Error;

struct PeakAlloc;

static CURRENT: AtomicUsize = AtomicUsize::new(0);
static PEAK: AtomicUsize = AtomicUsize::new(0);

unsafe impl GlobalAlloc for PeakAlloc {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        let p = unsafe { System.alloc(layout) };
        if !p.is_null() {
            let now = CURRENT.fetch_add(layout.size(), Ordering::Relaxed) + layout.size();
            PEAK.fetch_max(now, Ordering::Relaxed);
        }
        p
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        unsafe { System.dealloc(ptr, layout) };
        CURRENT.fetch_sub(layout.size(), Ordering::Relaxed);
    }

    unsafe fn realloc(&self, ptr: *mut u8, layout: Layout, new_size: usize) -> *mut u8 {
        let p = unsafe { System.realloc(ptr, layout, new_size) };
        if !p.is_null() {
            if new_size >= layout.size() {
                let now = CURRENT.fetch_add(new_size - layout.size(), Ordering::Relaxed) + new_size - layout.size();
                PEAK.fetch_max(now, Ordering::Relaxed);
            } else {
                CURRENT.fetch_sub(layout.size() - new_size, Ordering::Relaxed);
            }
        }
        p
    }
}

#[global_allocator]
static ALLOC: PeakAlloc = PeakAlloc;

fn reset_peak() -> usize {
    let now = CURRENT.load(Ordering::Relaxed);
    PEAK.store(now, Ordering::Relaxed);
    now
}

const SEEDS: u64 = 5;

// criterion 1
const MIN_SALSA_RECALL: f64 = 0.90;
const MAX_RANDOM_RECALL: f64 = 0.15;
const MAX_TRIAL_SECONDS: f64 = 120.0;
// criterion 2
const POOL_AL_SLACK: f64 = 0.05;
// criterion 4
const SCALING_SIZES: [usize; 3] = [1_000, 10_000, 100_000];
const MEMORY_BYTES_PER_ITEM: usize = 2 * 1024;
const MEMORY_CONSTANT: usize = 64 << 20;
// criterion 5
const MVE_TOL: f64 = 1e-6;
const GRADIENT_REL_TOL: f64 = 1e-4;
const POSTERIOR_TOL: f64 = 1e-12;
const FREQUENCY_TOL: f64 = 0.01;
const FREQUENCY_DRAWS: usize = 100_000;
// criterion 7
const LAYOUT_TOL: f64 = 0.05;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn benchmark(method: Method, seed: u64) -> RunConfig {
    let mut c = RunConfig {
        name: "benchmark".into(),
        method,
        seed,
        rounds: 10,
        batch_size: 100,
        ground_truth_k: 100,
        ..RunConfig::default()
    };
    c.space.sizes = vec![100, 100];
    c.output.save_models = false;
    c
}

struct Trial {
    result: RunResult,
    seconds: f64,
    calls: u64,
    repeats: u64,
}

fn trial(config: RunConfig) -> Trial {
    let exp = Experiment::prepare(config, None).expect("benchmark prepares");
    let counted = CountedObjective::new(exp.objective.as_ref());
    let t = Instant::now();
    let result = exp.run_with(&counted, RunOptions::default()).expect("benchmark runs");
    Trial {
        result,
        seconds: t.elapsed().as_secs_f64(),
        calls: counted.calls(),
        repeats: counted.repeats(),
    }
}

fn mean_recall(trials: &[Trial]) -> f64 {
    trials.iter().map(|t| t.result.summary.final_recall.expect("truth is known")).sum::<f64>() / trials.len() as f64
}

fn seeds(f: impl Fn(u64) -> RunConfig) -> Vec<Trial> {
    (0..SEEDS).map(|s| trial(f(s))).collect()
}

fn strip(records: &[RoundRecord]) -> Vec<String> {
    records
        .iter()
        .map(|r| serde_json::to_string(&r.without_timing()).expect("serialises"))
        .collect()
}

struct Shared {
    salsa: Vec<Trial>,
    random: Vec<Trial>,
    pool_al: Vec<Trial>,
    tabular: Vec<Trial>,
}

fn criterion_1(s: &Shared) -> Outcome {
    let salsa = mean_recall(&s.salsa);
    let random = mean_recall(&s.random);
    let slowest = s.salsa.iter().map(|t| t.seconds).fold(0.0, f64::max);
    outcome(
        salsa >= MIN_SALSA_RECALL && random <= MAX_RANDOM_RECALL && slowest < MAX_TRIAL_SECONDS,
        format!(
            "recall@100 on 100x100 additive, K=100 N=10, {SEEDS} seeds: salsa {salsa:.3} (>= {MIN_SALSA_RECALL}), \
             random {random:.3} (<= {MAX_RANDOM_RECALL}), slowest salsa trial {slowest:.1}s (< {MAX_TRIAL_SECONDS}s)"
        ),
    )
}

fn criterion_2(s: &Shared) -> Outcome {
    let salsa = mean_recall(&s.salsa);
    let pool = mean_recall(&s.pool_al);
    let tab = mean_recall(&s.tabular);
    outcome(
        pool >= salsa - POOL_AL_SLACK && tab <= salsa,
        format!(
            "baseline ordering: pool-al {pool:.3} (>= salsa {salsa:.3} - {POOL_AL_SLACK}), tabular-ts {tab:.3} (<= salsa)"
        ),
    )
}

fn criterion_3() -> Outcome {
    let bilinear = |strategy: StrategyKind| {
        move |seed| {
            let mut c = benchmark(Method::Salsa, seed);
            c.objective.kind = salsa_core::driver::ObjectiveKind::Bilinear;
            c.objective.interaction = 0.3;
            c.acquisition.strategy = strategy;
            c
        }
    };
    let ts = mean_recall(&seeds(bilinear(StrategyKind::Ts)));
    let mut others = Vec::new();
    for s in [StrategyKind::TsOneshot, StrategyKind::Ucb, StrategyKind::Ei, StrategyKind::Pi] {
        others.push((s, mean_recall(&seeds(bilinear(s)))));
    }
    let mut identical = true;
    for seed in 0..SEEDS {
        let greedy = trial(bilinear(StrategyKind::Greedy)(seed));
        let mut c = bilinear(StrategyKind::EpsGreedy)(seed);
        c.acquisition.epsilon = 0.0;
        let eps = trial(c);
        identical &= strip(&greedy.result.records) == strip(&eps.result.records);
    }
    let dominated = others.iter().all(|(_, r)| ts >= *r);
    let listed: Vec<String> = others.iter().map(|(s, r)| format!("{} {r:.3}", s.name())).collect();
    outcome(
        dominated && identical,
        format!(
            "bilinear (lambda=0.3) recall, {SEEDS} seeds: ts {ts:.3} >= [{}]; eps-greedy(eps=0) == greedy records: {identical}",
            listed.join(", ")
        ),
    )
}

fn top_mean(ledger: &ScoreLedger, k: usize) -> f64 {
    let mut scores: Vec<f64> = ledger.entries().iter().map(|e| e.score).collect();
    scores.sort_by(|a, b| b.total_cmp(a));
    scores.iter().take(k).sum::<f64>() / k.min(scores.len()) as f64
}

fn criterion_4() -> Outcome {
    let mut means = Vec::new();
    let mut memory_ok = true;
    let mut counter_ok = true;
    let mut notes = Vec::new();
    for &n in &SCALING_SIZES {
        let mut c = RunConfig {
            name: format!("scale-{n}"),
            rounds: 10,
            batch_size: 1000,
            ground_truth_k: 0,
            ..RunConfig::default()
        };
        c.space.sizes = vec![n, n];
        c.output.save_models = false;
        let base = reset_peak();
        let t = Instant::now();
        let exp = Experiment::prepare(c, None).expect("scaling space prepares");
        let result = exp.run(RunOptions::default()).expect("scaling run");
        let peak = PEAK.load(Ordering::Relaxed).saturating_sub(base);
        let sigma = exp.space.pool_total();
        let bound = MEMORY_BYTES_PER_ITEM * sigma + MEMORY_CONSTANT;
        memory_ok &= peak <= bound;
        counter_ok &= result.records[1..].iter().all(|r| r.forward_passes == sigma as u64);
        let m = top_mean(&result.ledger, 100);
        means.push(m);
        notes.push(format!(
            "{n}x{n}: top100 {m:.4}, peak {:.1} MiB (bound {:.1}), {:.0}s",
            peak as f64 / (1 << 20) as f64,
            bound as f64 / (1 << 20) as f64,
            t.elapsed().as_secs_f64()
        ));
    }
    let monotone = means.windows(2).all(|w| w[1] >= w[0]);
    outcome(
        monotone && memory_ok && counter_ok,
        format!(
            "scaling K=1000 N=10: {}; non-decreasing {monotone}; forward passes == sum of pools every round {counter_ok}",
            notes.join("; ")
        ),
    )
}

fn quadrature_argmax(preds: &[GaussianPrediction]) -> Vec<f64> {
    let lo = preds.iter().map(|p| p.mean - 12.0 * p.std).fold(f64::INFINITY, f64::min);
    let hi = preds.iter().map(|p| p.mean + 12.0 * p.std).fold(f64::NEG_INFINITY, f64::max);
    let n = 100_000;
    let h = (hi - lo) / n as f64;
    let density = |z: f64| (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
    (0..preds.len())
        .map(|i| {
            let f = |x: f64| {
                let mut v = density((x - preds[i].mean) / preds[i].std) / preds[i].std;
                for (j, p) in preds.iter().enumerate() {
                    if j != i {
                        v *= normal_cdf((x - p.mean) / p.std);
                    }
                }
                v
            };
            // Simpson's rule
            let mut s = f(lo) + f(hi);
            for k in 1..n {
                s += if k % 2 == 1 { 4.0 } else { 2.0 } * f(lo + k as f64 * h);
            }
            s * h / 3.0
        })
        .collect()
}

fn criterion_5() -> Outcome {
    let loss = mve_loss(1.5, GaussianPrediction { mean: 1.5, std: 1.0 }).expect("valid");
    let loss_ok = (loss - 0.918939).abs() <= MVE_TOL;

    let mut worst_grad: f64 = 0.0;
    let mut r = ChaCha8Rng::seed_from_u64(2024);
    for batch in 0..5 {
        let head = Head::Mve { variance_floor: 1e-6 };
        let mut net = Network::new(6, 16, 2, head, &mut r);
        let jittered: Vec<f64> = net.params().iter().map(|p| p + 0.1 * (r.random::<f64>() - 0.5)).collect();
        net.set_params(&jittered);
        let x = Array2::from_shape_fn((8 + batch, 6), |_| r.random::<f64>() * 2.0 - 1.0);
        let y = Array1::from_shape_fn(8 + batch, |_| r.random::<f64>() * 2.0 - 1.0);
        let (_, grads) = net.loss_and_gradient(x.view(), y.view(), head);
        let analytic: Vec<f64> = grads
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()).copied())
            .collect();
        let base = net.params();
        let h = 1e-5;
        for k in 0..base.len() {
            let mut p = base.clone();
            p[k] += h;
            net.set_params(&p);
            let up = net.loss_and_gradient(x.view(), y.view(), head).0;
            p[k] -= 2.0 * h;
            net.set_params(&p);
            let down = net.loss_and_gradient(x.view(), y.view(), head).0;
            let fd = (up - down) / (2.0 * h);
            let rel = (analytic[k] - fd).abs() / analytic[k].abs().max(fd.abs()).max(1e-6);
            worst_grad = worst_grad.max(rel);
        }
        net.set_params(&base);
    }

    let mut worst_post: f64 = 0.0;
    for case in 0..50 {
        let (pm, pv, ov) = (r.random::<f64>() - 0.5, 0.1 + r.random::<f64>(), 0.1 + r.random::<f64>());
        let ys: Vec<f64> = (0..1 + case % 7).map(|_| r.random::<f64>() * 4.0 - 2.0).collect();
        let mut model = TabularGaussian::new(&[1], pm, pv, ov).expect("valid prior");
        for &y in &ys {
            model.observe(0, 0, y);
        }
        let got = model.posterior(0, 0);
        // independent closed form: precision-weighted average
        let precision = 1.0 / pv + ys.len() as f64 / ov;
        let mean = (pm / pv + ys.iter().sum::<f64>() / ov) / precision;
        worst_post = worst_post.max((got.mean - mean).abs()).max((got.variance - 1.0 / precision).abs());
        let (cm, cv) = conjugate_posterior(pm, pv, ov, &ys);
        worst_post = worst_post.max((cm - mean).abs()).max((cv - 1.0 / precision).abs());
    }

    let pool = vec![
        GaussianPrediction { mean: 0.0, std: 1.0 },
        GaussianPrediction { mean: 0.4, std: 0.5 },
        GaussianPrediction { mean: -0.2, std: 1.5 },
    ];
    let freq = estimate_acquisition_probability(
        &AcquisitionConfig::new(StrategyKind::Ts),
        std::slice::from_ref(&pool),
        None,
        FREQUENCY_DRAWS,
        17,
    )
    .expect("estimates");
    let exact = quadrature_argmax(&pool);
    let worst_freq = freq[0].iter().zip(&exact).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);

    outcome(
        loss_ok && worst_grad < GRADIENT_REL_TOL && worst_post <= POSTERIOR_TOL && worst_freq <= FREQUENCY_TOL,
        format!(
            "numerics: mve loss {loss:.7} (|d| <= {MVE_TOL}); worst gradient rel err {worst_grad:.2e} (< {GRADIENT_REL_TOL}); \
             worst posterior err {worst_post:.1e} (<= {POSTERIOR_TOL}); worst ts frequency err {worst_freq:.4} \
             at {FREQUENCY_DRAWS} draws (<= {FREQUENCY_TOL})"
        ),
    )
}

fn external_round_trip() -> (bool, bool) {
    let space = ProductSpace::generate(&[100, 100], 4, 3).expect("space");
    let mut r = ChaCha8Rng::seed_from_u64(5);
    let mut seen = std::collections::HashSet::new();
    let mut batch = Vec::new();
    while batch.len() < 1000 {
        let c = Candidate::new(&[r.random_range(0..100), r.random_range(0..100)]);
        if seen.insert(c.clone()) {
            batch.push(c);
        }
    }
    // echoes the first vector-0 feature verbatim, reordered by value
    let echo = ExternalScorer::new(
        "awk -F'\\t' '{split($4, a, \",\"); print $1 \"\\t\" a[1]}' | sort -k2,2",
        Duration::from_secs(60),
    );
    let lossless = match echo.score_batch(&space, &batch) {
        Ok(scores) => scores
            .iter()
            .zip(&batch)
            .all(|(s, c)| *s == space.set(0).features(c.index(0))[0]),
        Err(_) => false,
    };
    let short = ExternalScorer::new("awk -F'\\t' '{print $1 \"\\t\" 1.0}' | sed '$d'", Duration::from_secs(60));
    let mismatch = matches!(short.score_batch(&space, &batch), Err(Error::ScorerCountMismatch { .. }));
    (lossless, mismatch)
}

fn criterion_6(s: &Shared) -> Outcome {
    let mut within_budget = true;
    let mut no_repeats = true;
    for (t, warmup) in s
        .salsa
        .iter()
        .chain(&s.random)
        .chain(&s.pool_al)
        .map(|t| (t, 0))
        .chain(s.tabular.iter().map(|t| (t, t.result.records[0].acquired.len() as u64)))
    {
        let budget = t.result.ledger.budget();
        within_budget &= t.calls <= budget + warmup && t.result.ledger.total_calls() <= budget;
        no_repeats &= t.repeats == 0;
    }
    let (lossless, mismatch) = external_round_trip();

    let mut replay = true;
    for method in [Method::Salsa, Method::TabularTs] {
        let exp = Experiment::prepare(benchmark(method, 1), None).expect("prepares");
        let full_dir = tempfile::tempdir().expect("tempdir");
        let part_dir = tempfile::tempdir().expect("tempdir");
        let full = exp
            .run(RunOptions { out_dir: Some(full_dir.path().into()), ..RunOptions::default() })
            .expect("full run");
        exp.run(RunOptions { out_dir: Some(part_dir.path().into()), stop_after: Some(4), ..RunOptions::default() })
            .expect("interrupted run");
        let resumed = exp
            .run(RunOptions { out_dir: Some(part_dir.path().into()), resume: true, ..RunOptions::default() })
            .expect("resumed run");
        replay &= strip(&full.records) == strip(&resumed.records);
    }
    outcome(
        within_budget && no_repeats && lossless && mismatch && replay,
        format!(
            "accounting over {} benchmark trials: calls <= NxK (+warm-up for tabular) {within_budget}, no rescoring {no_repeats}; \
             external 1000 reordered replies lossless {lossless}, count mismatch rejected {mismatch}; checkpoint replay bitwise {replay}",
            4 * SEEDS
        ),
    )
}

fn criterion_7(s: &Shared) -> Outcome {
    let per_vector = mean_recall(&s.salsa);
    let one = mean_recall(&seeds(|seed| {
        let mut c = benchmark(Method::Salsa, seed);
        c.surrogate.layout = ModelLayout::OneModel;
        c
    }));
    outcome(
        (per_vector - one).abs() <= LAYOUT_TOL,
        format!("layouts, {SEEDS} seeds: per-vector {per_vector:.3} vs one-model {one:.3} (|d| <= {LAYOUT_TOL})"),
    )
}

fn main() {
    let started = Instant::now();
    let shared = Shared {
        salsa: seeds(|s| benchmark(Method::Salsa, s)),
        random: seeds(|s| benchmark(Method::Random, s)),
        pool_al: seeds(|s| benchmark(Method::PoolAl, s)),
        tabular: seeds(|s| benchmark(Method::TabularTs, s)),
    };
    let criteria: Vec<(usize, Box<dyn Fn() -> Outcome + '_>)> = vec![
        (1, Box::new(|| criterion_1(&shared))),
        (2, Box::new(|| criterion_2(&shared))),
        (3, Box::new(criterion_3)),
        (4, Box::new(criterion_4)),
        (5, Box::new(criterion_5)),
        (6, Box::new(|| criterion_6(&shared))),
        (7, Box::new(|| criterion_7(&shared))),
    ];
    let mut failed = 0;
    for (id, check) in criteria {
        let o = check();
        if !o.pass {
            failed += 1;
        }
        println!("{} criterion {id}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    println!(
        "acceptance: {} passed, {failed} failed in {:.0}s",
        7 - failed,
        started.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
