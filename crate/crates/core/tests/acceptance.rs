// One test per acceptance criterion. Each prints a single PASS/FAIL line
// (straight to stdout, past the test harness capture) and then asserts.

use std::io::Write;
use std::time::{Duration, Instant};

use elf::baselines::{run_baseline, BaselineConfig, BaselineKind, LEARNING_RATE_GRID};
use elf::cli::{run_experiment, RunConfig};
use elf::controller::{self, apply_decrease_factor, should_trigger, ElfConfig, OptimizerState};
use elf::linesearch::{elf_line_search, LineSearchConfig};
use elf::log::Event;
use elf::poly::Polynomial;
use elf::problems::{
    empirical_loss, BatchId, BatchStream, DatasetConfig, DatasetKind, NoisyQuadraticEnsemble,
    QuadraticEnsembleConfig, Split, StochasticProblem, SyntheticClassification,
};
use elf::regression::{fit_polynomial, fold_bounds, fold_permutation, select_degree_and_fit, SampleSet};
use elf::seeds::{self, SeedStreams};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn report(id: u32, name: &str, ok: bool, detail: String, elapsed: Duration, limit: Duration) {
    let in_time = elapsed <= limit;
    let verdict = if ok && in_time { "PASS" } else { "FAIL" };
    let line = format!(
        "{verdict} [{id:>2}] {name}: {detail} ({:.2} s, limit {} s)\n",
        elapsed.as_secs_f64(),
        limit.as_secs()
    );
    std::io::stdout().lock().write_all(line.as_bytes()).unwrap();
    assert!(ok, "criterion {id} failed: {detail}");
    assert!(in_time, "criterion {id} over its time limit");
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

// Independent least squares: SVD of the scaled Vandermonde matrix.
fn svd_fit(degree: usize, xs: &[f64], ys: &[f64]) -> Vec<f64> {
    let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let (c, h) = (0.5 * (lo + hi), (0.5 * (hi - lo)).max(1e-300));
    let v = DMatrix::from_fn(xs.len(), degree + 1, |i, j| ((xs[i] - c) / h).powi(j as i32));
    let y = DVector::from_column_slice(ys);
    let z = v.svd(true, true).solve(&y, 1e-14).unwrap();
    // Expand sum z_j ((s - c) / h)^j into raw powers of s.
    let mut out = vec![0.0; degree + 1];
    let mut basis = vec![1.0];
    for zj in z.iter() {
        for (k, b) in basis.iter().enumerate() {
            out[k] += zj * b;
        }
        let mut next = vec![0.0; basis.len() + 1];
        for (k, b) in basis.iter().enumerate() {
            next[k + 1] += b / h;
            next[k] -= b * c / h;
        }
        basis = next;
    }
    out
}

fn eval(coeffs: &[f64], s: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, c| acc * s + c)
}

#[test]
fn criterion_01_exact_polynomial_fit() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst_fit, mut worst_orth) = (0.0f64, 0.0f64);
    for degree in 0..=8 {
        for _ in 0..20 {
            let truth: Vec<f64> = (0..=degree).map(|_| rng.random_range(-2.0..2.0)).collect();
            let base = rng.random_range(0.0..1.0);
            let span = rng.random_range(0.5..4.0);
            // Distinct positions: jittered points of a uniform grid.
            let xs: Vec<f64> = (0..=degree)
                .map(|i| base + span * (i as f64 + rng.random_range(0.1..0.9)) / (degree + 1) as f64)
                .collect();
            let ys: Vec<f64> = xs.iter().map(|&x| eval(&truth, x)).collect();
            let samples = SampleSet::new(xs.clone(), ys.clone()).unwrap();
            let p = fit_polynomial(degree, &samples).unwrap();
            for (&x, &y) in xs.iter().zip(&ys) {
                worst_fit = worst_fit.max(rel_err(p.evaluate(x), y));
            }

            // Overdetermined fit: residuals orthogonal to every basis column.
            let n = 3 * (degree + 1) + 5;
            let xs: Vec<f64> = (0..n).map(|_| base + span * rng.random::<f64>()).collect();
            let ys: Vec<f64> = xs.iter().map(|&x| eval(&truth, x) + rng.random_range(-0.1..0.1)).collect();
            let p = fit_polynomial(degree, &SampleSet::new(xs.clone(), ys.clone()).unwrap()).unwrap();
            let (c, h) = (base + 0.5 * span, 0.5 * span);
            let resid: Vec<f64> = xs.iter().zip(&ys).map(|(&x, &y)| y - p.evaluate(x)).collect();
            let ynorm = ys.iter().map(|y| y * y).sum::<f64>().sqrt();
            for j in 0..=degree {
                let col: Vec<f64> = xs.iter().map(|&x| ((x - c) / h).powi(j as i32)).collect();
                let cnorm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
                let dot: f64 = col.iter().zip(&resid).map(|(a, r)| a * r).sum();
                worst_orth = worst_orth.max(dot.abs() / (cnorm * ynorm));
            }
        }
    }
    let ok = worst_fit <= 1e-6 && worst_orth <= 1e-6;
    report(
        1,
        "polynomial fitting exactness",
        ok,
        format!("max interpolation rel err {worst_fit:.2e}, max residual/column cosine {worst_orth:.2e}"),
        start.elapsed(),
        Duration::from_secs(1),
    );
}

// The degree stop rule on explicit folds: CV error of every degree, then the
// first rise keeps the previous degree.
fn enumerate_stop_rule(xs: &[f64], ys: &[f64], order: &[usize], folds: usize, max_degree: usize) -> usize {
    let bounds = fold_bounds(order.len(), folds);
    let errors: Vec<f64> = (0..=max_degree)
        .map(|d| {
            bounds
                .iter()
                .map(|test| {
                    let train: Vec<usize> = order[..test.start].iter().chain(&order[test.end..]).copied().collect();
                    let tx: Vec<f64> = train.iter().map(|&i| xs[i]).collect();
                    let ty: Vec<f64> = train.iter().map(|&i| ys[i]).collect();
                    let c = svd_fit(d, &tx, &ty);
                    order[test.clone()].iter().map(|&i| (ys[i] - eval(&c, xs[i])).powi(2)).sum::<f64>()
                        / test.len() as f64
                })
                .sum::<f64>()
                / folds as f64
        })
        .collect();
    (1..=max_degree).find(|&d| errors[d] > errors[d - 1]).map_or(max_degree, |d| d - 1)
}

#[test]
fn criterion_02_degree_selection_fidelity() {
    let start = Instant::now();
    let (folds, max_degree) = (5, 10);
    let mut matches = 0;
    let mut cases = 0;
    for case in 0..200u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + case);
        let degree = 2 + (case % 4) as usize;
        let sigma = [0.01, 0.05, 0.1][(case / 4 % 3) as usize];
        let truth: Vec<f64> = (0..=degree).map(|_| rng.random_range(-1.0..1.0)).collect();
        let noise = Normal::new(0.0, sigma).unwrap();
        let xs: Vec<f64> = (0..100).map(|_| rng.random_range(0.0..2.0)).collect();
        let ys: Vec<f64> = xs.iter().map(|&x| eval(&truth, x) + noise.sample(&mut rng)).collect();

        let fold_seed = 77 + case;
        let report = select_degree_and_fit(
            &SampleSet::new(xs.clone(), ys.clone()).unwrap(),
            max_degree,
            folds,
            &mut ChaCha8Rng::seed_from_u64(fold_seed),
        )
        .unwrap();
        let order = fold_permutation(xs.len(), &mut ChaCha8Rng::seed_from_u64(fold_seed));
        let expected = enumerate_stop_rule(&xs, &ys, &order, folds, max_degree);
        cases += 1;
        if expected == report.chosen_degree {
            matches += 1;
        }
    }
    report(
        2,
        "degree selection fidelity",
        matches == cases,
        format!("{matches}/{cases} selections agree with the explicit enumeration"),
        start.elapsed(),
        Duration::from_secs(30),
    );
}

// Dense-grid minimizer of the mean loss over every training batch along a
// line, refined once around the coarse winner.
fn brute_force_line_minimum(problem: &NoisyQuadraticEnsemble, theta: &DVector<f64>, d: &DVector<f64>, hi: f64) -> f64 {
    let n = problem.batch_count(Split::Train);
    let profile = |s: f64| {
        let p = theta + d * s;
        (0..n).map(|i| problem.batch_loss(&p, BatchId::train(i))).sum::<f64>() / n as f64
    };
    let argmin = |lo: f64, hi: f64, points: usize| {
        (0..points)
            .map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64)
            .map(|s| (s, profile(s)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap()
            .0
    };
    let coarse = argmin(0.0, hi, 801);
    let cell = hi / 800.0;
    argmin((coarse - cell).max(0.0), coarse + cell, 801)
}

#[test]
fn criterion_03_line_search_accuracy() {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut details = Vec::new();
    for seed in 0..10u64 {
        let problem = NoisyQuadraticEnsemble::new(QuadraticEnsembleConfig {
            dim: 20,
            train_batches: 100,
            validation_batches: 100,
            seed,
            ..Default::default()
        });
        let streams = SeedStreams::new(seed);
        let theta = problem.initial_theta(&mut streams.rng(seeds::INIT));
        let g = problem.batch_gradient(&theta, BatchId::train(0));
        let d = -&g / g.norm();

        let mut batches = BatchStream::new(Split::Train, 100, streams.seed(seeds::TRAIN_BATCHES));
        let mut oracle = |s: f64| problem.batch_loss(&(&theta + &d * s), batches.next_batch());
        let result = elf_line_search(&mut oracle, &LineSearchConfig::default(), &mut streams.rng(seeds::LINE_SEARCH))
            .unwrap();
        let found = result.minimum_position.unwrap_or(f64::NAN);
        let reach = result.samples.positions().iter().cloned().fold(0.0, f64::max);
        let exact = brute_force_line_minimum(&problem, &theta, &d, 4.0 * reach.max(1.0));
        let err = (found - exact).abs() / exact.abs();
        worst = worst.max(if err.is_nan() { f64::INFINITY } else { err });
        details.push(format!("{err:.3}"));
    }
    report(
        3,
        "line-search oracle accuracy",
        worst <= 0.05,
        format!("worst relative error {worst:.4} over seeds 0-9 [{}]", details.join(" ")),
        start.elapsed(),
        Duration::from_secs(60),
    );
}

#[test]
fn criterion_04_noiseless_convergence() {
    let start = Instant::now();
    let problem = NoisyQuadraticEnsemble::new(QuadraticEnsembleConfig {
        dim: 20,
        train_batches: 1,
        validation_batches: 1,
        offset_noise: 0.0,
        constant_max: 0.0,
        seed: 3,
        ..Default::default()
    });
    let avg = problem.average_quadratic();
    let mut theta = problem.initial_theta(&mut SeedStreams::new(3).rng(seeds::INIT));
    let initial = avg.evaluate(&theta);
    let config = LineSearchConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(4);

    let mut first_error = f64::NAN;
    let mut searches = 0;
    let mut loss = initial;
    while searches < 50 && loss > 1e-6 * initial {
        let g = problem.batch_gradient(&theta, BatchId::train(0));
        let d = -&g / g.norm();
        let exact = avg.line_minimum(&theta, &d);
        let mut oracle = |s: f64| problem.batch_loss(&(&theta + &d * s), BatchId::train(0));
        let s = elf_line_search(&mut oracle, &config, &mut rng).unwrap().minimum_position.unwrap_or(0.0);
        if searches == 0 {
            first_error = (s - exact).abs();
        }
        theta.axpy(s, &d, 1.0);
        loss = avg.evaluate(&theta);
        searches += 1;
    }
    let ok = first_error <= 1e-3 && loss <= 1e-6 * initial;
    report(
        4,
        "noiseless convergence",
        ok,
        format!(
            "first search off by {first_error:.2e}; loss ratio {:.2e} after {searches} searches",
            loss / initial
        ),
        start.elapsed(),
        Duration::from_secs(10),
    );
}

#[test]
fn criterion_05_controller_trigger_fidelity() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut agree, mut fired) = (0, 0);
    for _ in 0..1000 {
        let window = rng.random_range(1..300usize);
        let t_last = rng.random_range(-1..5000i64);
        // Half the scenarios sit exactly on a window boundary.
        let t = if rng.random_bool(0.5) {
            t_last - 1 + (window as i64 + 1) * rng.random_range(1..4i64)
        } else {
            t_last + rng.random_range(0..3 * window as i64)
        };
        let factor = [0.0, 0.01, 0.1, 1.0][rng.random_range(0..4)];
        let last_mean = rng.random_range(0.1..5.0);
        let eps = rng.random_range(0.0..0.01);
        let losses: Vec<f64> = (0..rng.random_range(1..window + 1))
            .map(|_| last_mean + rng.random_range(-0.5..0.5))
            .collect();

        let mut state = OptimizerState::new(DVector::zeros(1));
        state.t = t;
        state.t_of_last_update = t_last;
        state.last_mean_loss = last_mean;
        state.expected_per_step_improvement = eps;
        state.losses = losses.clone();
        let (real, expected) = state.improvements();
        let got = should_trigger(t, t_last, window, real, expected, factor);

        let mean = losses.iter().sum::<f64>() / losses.len() as f64;
        let real_ref = last_mean - mean;
        let expected_ref = last_mean - eps * (t - t_last) as f64;
        let boundary = (t - t_last + 1) % (window as i64 + 1) == 0;
        let want = boundary && real_ref <= expected_ref * factor;
        fired += usize::from(want);
        agree += usize::from(got == want);
    }
    report(
        5,
        "controller trigger fidelity",
        agree == 1000,
        format!("{agree}/1000 scenarios agree ({fired} should fire)"),
        start.elapsed(),
        Duration::from_secs(5),
    );
}

#[test]
fn criterion_06_decrease_factor_geometry() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut worst_level, mut worst_closed) = (0.0f64, 0.0f64);
    let mut above_min = true;
    let mut monotone = true;
    for case in 0..200 {
        let m: f64 = rng.random_range(0.1..5.0);
        let a = rng.random_range(0.1..3.0);
        let c = rng.random_range(-1.0..1.0);
        let b: f64 = if case % 2 == 0 { 0.0 } else { rng.random_range(0.0..1.0) };
        // a (s - m)^2 + b (s - m)^4 + c, expanded.
        let fit = Polynomial::new(vec![
            c + a * m * m + b * m.powi(4),
            -2.0 * a * m - 4.0 * b * m.powi(3),
            a + 6.0 * b * m * m,
            -4.0 * b * m,
            b,
        ]);
        let bracket_end = 3.0 * m;

        let s = apply_decrease_factor(&fit, m, 0.2, bracket_end);
        let level = fit.evaluate(m) + 0.2 * (fit.evaluate(0.0) - fit.evaluate(m));
        worst_level = worst_level.max((fit.evaluate(s) - level).abs());
        above_min &= s > m;
        if b == 0.0 {
            worst_closed = worst_closed.max((s - m * (1.0 + 0.2f64.sqrt())).abs());
        }

        let mut prev = m;
        for delta in [0.0, 0.05, 0.1, 0.2, 0.3, 0.5, 0.7, 0.9] {
            let s = apply_decrease_factor(&fit, m, delta, bracket_end);
            monotone &= s >= prev;
            prev = s;
        }
    }
    let ok = worst_level <= 1e-8 && worst_closed <= 1e-8 && above_min && monotone;
    report(
        6,
        "decrease-factor geometry",
        ok,
        format!(
            "level error {worst_level:.2e}, closed-form error {worst_closed:.2e}, s_target > s_min: {above_min}, monotone: {monotone}"
        ),
        start.elapsed(),
        Duration::from_secs(1),
    );
}

#[test]
fn criterion_07_end_to_end_training() {
    let start = Instant::now();
    let problem = SyntheticClassification::logistic(DatasetConfig::default()).with_weight_decay(1e-3);
    let seed = 0;
    let elf_run = controller::run(&problem, &ElfConfig::default(), 20_000, seed).unwrap();
    let budget = elf_run.log.total_steps();
    let elf_loss = empirical_loss(&problem, &elf_run.state.theta);
    let elf_acc = problem.accuracy(&elf_run.state.theta, Split::Train).unwrap();

    let mut best_sgd = f64::INFINITY;
    let mut best_lr = f64::NAN;
    for lr in LEARNING_RATE_GRID {
        let config = BaselineConfig { learning_rate: lr, ..Default::default() };
        if let Ok(run) = run_baseline(&problem, BaselineKind::Sgd, &config, budget, seed) {
            let loss = empirical_loss(&problem, &run.theta);
            if loss < best_sgd {
                best_sgd = loss;
                best_lr = lr;
            }
        }
    }
    let ratio = elf_loss / best_sgd;
    let ok = elf_acc >= 0.99 && ratio <= 1.5;
    report(
        7,
        "end-to-end training",
        ok,
        format!(
            "ELF accuracy {elf_acc:.4}, loss {elf_loss:.5}; best SGD loss {best_sgd:.5} (lr {best_lr:e}) at {budget} batches; ratio {ratio:.2}"
        ),
        start.elapsed(),
        Duration::from_secs(300),
    );
}

fn central_difference<P: StochasticProblem + ?Sized>(p: &P, theta: &DVector<f64>, batch: BatchId) -> DVector<f64> {
    DVector::from_fn(theta.len(), |i, _| {
        let h = 1e-5 * theta[i].abs().max(1.0);
        let (mut up, mut down) = (theta.clone(), theta.clone());
        up[i] += h;
        down[i] -= h;
        (p.batch_loss(&up, batch) - p.batch_loss(&down, batch)) / (2.0 * h)
    })
}

#[test]
fn criterion_08_gradient_correctness() {
    let start = Instant::now();
    let small = DatasetConfig { train_samples: 256, validation_samples: 64, ..Default::default() };
    let problems: Vec<Box<dyn StochasticProblem>> = vec![
        Box::new(NoisyQuadraticEnsemble::new(QuadraticEnsembleConfig { train_batches: 20, ..Default::default() })),
        Box::new(SyntheticClassification::logistic(small.clone())),
        Box::new(SyntheticClassification::logistic(small.clone()).with_weight_decay(1e-3)),
        Box::new(SyntheticClassification::mlp(small.clone(), (16, 16))),
        Box::new(SyntheticClassification::mlp(
            DatasetConfig { kind: DatasetKind::XorBlobs, features: 2, ..small },
            (8, 8),
        )),
    ];
    let mut worst = 0.0f64;
    let mut worst_name = String::new();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for problem in &problems {
        for _ in 0..20 {
            let theta = problem.initial_theta(&mut rng) * rng.random_range(0.5..2.0);
            let split = if rng.random_bool(0.5) { Split::Train } else { Split::Validation };
            let batch = BatchId { split, index: rng.random_range(0..problem.batch_count(split)) };
            let g = problem.batch_gradient(&theta, batch);
            let fd = central_difference(problem.as_ref(), &theta, batch);
            let err = (&g - &fd).norm() / g.norm().max(fd.norm()).max(1e-8);
            if err > worst {
                worst = err;
                worst_name = problem.name().to_owned();
            }
        }
    }
    report(
        8,
        "gradient correctness",
        worst <= 1e-4,
        format!("worst relative error {worst:.2e} ({worst_name}) over {} problems x 20 probes", problems.len()),
        start.elapsed(),
        Duration::from_secs(10),
    );
}

#[test]
fn criterion_09_determinism() {
    let start = Instant::now();
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let mut identical = true;
    let mut compared = 0;
    for (problem, optimizer) in [("quadratic", "elf"), ("logistic", "elf"), ("mlp", "adam")] {
        let text = format!("problem = {problem}\noptimizer = {optimizer}\nsteps = 4000\nseed = 11\n");
        let mut outputs = Vec::new();
        for dir in &dirs {
            let mut config = RunConfig::from_text(&text).unwrap();
            config.out = dir.path().join(problem);
            config.dump_cross_section = true;
            run_experiment(&config).unwrap();
            let mut files: Vec<_> = std::fs::read_dir(&config.out)
                .unwrap()
                .map(|e| e.unwrap().path())
                .filter(|p| p.extension().is_some_and(|x| x == "csv"))
                .collect();
            files.sort();
            outputs.push(
                files
                    .iter()
                    .map(|p| (p.file_name().unwrap().to_owned(), std::fs::read(p).unwrap()))
                    .collect::<Vec<_>>(),
            );
        }
        compared += outputs[0].len();
        identical &= outputs[0] == outputs[1];
    }
    report(
        9,
        "determinism",
        identical && compared > 0,
        format!("{compared} CSV files byte-identical across two runs: {identical}"),
        start.elapsed(),
        Duration::from_secs(60),
    );
}

#[test]
fn criterion_10_budget_accounting() {
    let start = Instant::now();
    let mut failures = Vec::new();
    let mut runs = 0;
    let mut searches = 0;
    let quadratic = NoisyQuadraticEnsemble::new(QuadraticEnsembleConfig { train_batches: 50, ..Default::default() });
    let logistic = SyntheticClassification::logistic(DatasetConfig::default()).with_weight_decay(1e-3);
    let problems: [&dyn StochasticProblem; 2] = [&quadratic, &logistic];
    for problem in problems {
        for seed in 0..3 {
            for (steps, config) in [
                (3_000, ElfConfig::default()),
                (4_000, ElfConfig { window_size: 20, loss_improvement_factor: 1.0, ..Default::default() }),
            ] {
                let per_search = (config.line_search.rounds * config.line_search.samples_per_round + 1) as u64;
                let run = controller::run(problem, &config, steps, seed).unwrap();
                let log = &run.log;
                runs += 1;
                searches += run.searches.len();

                let grid = log.batches_for(Event::GridSearch);
                let ls = log.batches_for(Event::LineSearch);
                let sgd = log.batches_for(Event::Sgd);
                if grid + ls + sgd != log.total_steps() || sgd != run.sgd_steps || run.state.t as u64 != log.total_steps() {
                    failures.push(format!("{} seed {seed}: sum mismatch", problem.name()));
                }
                if ls != per_search * run.searches.len() as u64 {
                    failures.push(format!("{} seed {seed}: line-search loads", problem.name()));
                }
                let per_kind_ok = log.deltas().all(|(e, d)| match e {
                    Event::LineSearch => d == per_search,
                    Event::GridSearch => d == config.grid_search_probe_steps as u64,
                    Event::Sgd => d == 1,
                    _ => false,
                });
                if !per_kind_ok || run.searches.iter().any(|r| r.result.batches_consumed as u64 != per_search) {
                    failures.push(format!("{} seed {seed}: per-row loads", problem.name()));
                }
            }
        }
    }
    report(
        10,
        "budget accounting",
        failures.is_empty(),
        format!("{runs} runs, {searches} line searches; mismatches: {failures:?}"),
        start.elapsed(),
        Duration::from_secs(60),
    );
}
