//! Acceptance suite. Runs every criterion in sequence, prints one line per
//! criterion and exits non-zero if any fails.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use qrnet::datasets::{ExampleFunction, SplitSizes};
use qrnet::distributions::ErrorDistribution;
use qrnet::experiments::{run_complexity_bench, run_experiment1, run_experiment2, BenchSettings, ExperimentConfig};
use qrnet::linalg::Matrix;
use qrnet::losses::{self, QuantileGrid};
use qrnet::metrics;
use qrnet::models::{build_design_matrix, ModelFamily, ModelSpec, QuantileModel};
use qrnet::nn::{Activation, Architecture, InitScheme, Mlp};
use qrnet::rng::Rng;
use qrnet::sorting::{self, SortMode};
use qrnet::training::{fit, StopRule};

type Outcome = Result<String, String>;
/// Name, check and runtime budget in seconds.
type Criterion = (&'static str, fn() -> Outcome, Option<u64>);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn pinball(u: f64, tau: f64) -> f64 {
    if u >= 0.0 {
        tau * u
    } else {
        (tau - 1.0) * u
    }
}

fn composite_oracle(pred: &[f64], y: &[f64], taus: &[f64]) -> f64 {
    let t = taus.len();
    let mut total = 0.0;
    for (i, &target) in y.iter().enumerate() {
        for (k, &tau) in taus.iter().enumerate() {
            total += pinball(target - pred[i * t + k], tau);
        }
    }
    total / (y.len() * t) as f64
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`. The floor keeps an exactly flat point (a
/// pooled soft sort can cancel every pinball slope) from turning rounding
/// noise into a relative error of 1.
fn norm_relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(a).max(norm(b)).max(1e-10)
}

fn central_difference(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn dominance() -> Outcome {
    let grid = QuantileGrid::evenly_spaced(19).unwrap();
    let taus = grid.taus().to_vec();
    let mut rng = Rng::new(101);
    let (mut violations, mut not_strict, mut changed, mut mismatch) = (0, 0, 0, 0.0f64);
    for pair in 0..10_000 {
        let y = rng.uniform(-3.0, 3.0);
        let spread = rng.uniform(0.05, 4.0);
        let mut pred: Vec<f64> = (0..19).map(|_| y + spread * rng.standard_normal()).collect();
        if pair % 10 == 0 {
            pred.sort_by(f64::total_cmp);
        }
        let raw = Matrix::new(1, 19, pred.clone()).unwrap();
        let sorted = sorting::sort_rows_hard(&raw);
        let before = losses::composite_loss(&raw, &[y], &grid, None).unwrap();
        let after = losses::composite_loss(&sorted, &[y], &grid, None).unwrap();
        mismatch = mismatch
            .max((before - composite_oracle(raw.as_slice(), &[y], &taus)).abs())
            .max((after - composite_oracle(sorted.as_slice(), &[y], &taus)).abs());
        if after > before + 1e-12 {
            violations += 1;
        }
        if sorted != raw {
            changed += 1;
            if after >= before {
                not_strict += 1;
            }
        }
    }
    check(
        violations == 0 && not_strict == 0 && mismatch < 1e-12,
        format!("10000 pairs, {changed} reordered, {violations} violations, {not_strict} non-strict, oracle gap {mismatch:.1e}"),
    )
}

fn layer_gradients(rng: &mut Rng, activation: Activation, monotone: bool) -> f64 {
    let inputs = 1 + rng.below(3);
    let arch = Architecture {
        widths: vec![inputs, 2 + rng.below(4), 1 + rng.below(3), 1 + rng.below(4)],
        hidden_activation: activation,
        output_activation: Activation::Identity,
        monotone_inputs: monotone.then(|| (0..inputs).map(|i| i == 0).collect()),
    };
    let mut net: Mlp<f64> = Mlp::new(arch, rng, InitScheme::XavierUniform).unwrap();
    let params: Vec<f64> = net.flat_params().iter().map(|p| p + rng.uniform(-0.3, 0.3)).collect();
    net.set_flat_params(&params).unwrap();
    let outputs = net.output_width();
    let batch = 1 + rng.below(4);
    let x = Matrix::from_fn(batch, inputs, |_, _| rng.uniform(-1.5, 1.5));
    let weights = Matrix::from_fn(batch, outputs, |_, _| rng.standard_normal());
    net.forward(&x).unwrap();
    let (grads, _) = net.backward(&weights).unwrap();
    let mut probe = net.clone();
    let numeric = central_difference(&params, 1e-6, |p| {
        probe.set_flat_params(p).unwrap();
        let out = probe.infer(&x).unwrap();
        out.as_slice().iter().zip(weights.as_slice()).map(|(a, b)| a * b).sum()
    });
    norm_relative_error(&grads.flat(), &numeric)
}

fn model_gradients(rng: &mut Rng, family: ModelFamily, sort_mode: SortMode) -> f64 {
    let t = 2 + rng.below(6);
    let mut spec = ModelSpec::new(family, 2, vec![5, 4], QuantileGrid::evenly_spaced(t).unwrap());
    spec.sort_mode = sort_mode;
    spec.smoothing = Some(0.2);
    let mut model: QuantileModel<f64> = QuantileModel::new(spec, rng.next_u64()).unwrap();
    let n = 1 + rng.below(5);
    let x = Matrix::from_fn(n, 2, |_, _| rng.uniform(-2.0, 2.0));
    let y: Vec<f64> = (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect();
    let (bx, by) = if family == ModelFamily::Mcqrnn {
        let d = build_design_matrix(&x, &y, &model.spec().grid).unwrap();
        (d.sample_rows(), d.y_tilde)
    } else {
        (x, y)
    };
    let (_, grads) = model.loss_and_gradients(&bx, &by).unwrap();
    let params = model.network().flat_params();
    let mut probe = model.clone();
    let numeric = central_difference(&params, 1e-6, |p| {
        probe.network_mut().set_flat_params(p).unwrap();
        probe.batch_loss(&bx, &by).unwrap()
    });
    norm_relative_error(&grads.flat(), &numeric)
}

fn sort_gradients(rng: &mut Rng, mode: SortMode) -> f64 {
    let t = 2 + rng.below(15);
    let x: Vec<f64> = (0..t).map(|_| rng.uniform(-3.0, 3.0)).collect();
    let w: Vec<f64> = (0..t).map(|_| rng.standard_normal()).collect();
    let (_, tapes) = sorting::sort_rows(&Matrix::new(1, t, x.clone()).unwrap(), mode).unwrap();
    let analytic = sorting::sort_rows_backward(&Matrix::new(1, t, w.clone()).unwrap(), &tapes).unwrap();
    let numeric = central_difference(&x, 1e-7, |v| {
        let (s, _) = sorting::sort_rows(&Matrix::new(1, t, v.to_vec()).unwrap(), mode).unwrap();
        s.as_slice().iter().zip(&w).map(|(a, b)| a * b).sum()
    });
    norm_relative_error(analytic.as_slice(), &numeric)
}

fn smoothed_loss_gradients(rng: &mut Rng) -> f64 {
    let (n, t) = (1 + rng.below(6), 1 + rng.below(10));
    let grid = QuantileGrid::evenly_spaced(t).unwrap();
    let eps = rng.uniform(0.05, 0.5);
    let pred = Matrix::from_fn(n, t, |_, _| rng.uniform(-2.0, 2.0));
    let y: Vec<f64> = (0..n).map(|_| rng.uniform(-2.0, 2.0)).collect();
    let analytic = losses::composite_loss_grad(&pred, &y, &grid, Some(eps)).unwrap();
    let numeric = central_difference(pred.as_slice(), 1e-6, |v| {
        losses::composite_loss(&Matrix::new(n, t, v.to_vec()).unwrap(), &y, &grid, Some(eps)).unwrap()
    });
    norm_relative_error(analytic.as_slice(), &numeric)
}

fn gradients() -> Outcome {
    const CONFIGS: usize = 100;
    let mut rng = Rng::new(202);
    let mut suites: Vec<(String, f64)> = Vec::new();
    let mut record = |name: String, errors: Vec<f64>| suites.push((name, errors.into_iter().fold(0.0, f64::max)));
    for activation in Activation::all() {
        for monotone in [false, true] {
            let errors = (0..CONFIGS)
                .map(|_| layer_gradients(&mut rng, activation, monotone))
                .collect();
            record(format!("dense/{activation:?}/monotone={monotone}"), errors);
        }
    }
    let modes = [
        SortMode::Hard,
        SortMode::Soft { epsilon: 0.1 },
        SortMode::Soft { epsilon: 1.0 },
    ];
    for mode in modes {
        record(
            format!("sort/{mode:?}"),
            (0..CONFIGS).map(|_| sort_gradients(&mut rng, mode)).collect(),
        );
    }
    record(
        "loss/smoothed".into(),
        (0..CONFIGS).map(|_| smoothed_loss_gradients(&mut rng)).collect(),
    );
    for family in ModelFamily::ALL {
        let family_modes: &[SortMode] = if family == ModelFamily::Scqrnn {
            &modes
        } else {
            &modes[..1]
        };
        for &mode in family_modes {
            let errors = (0..CONFIGS).map(|_| model_gradients(&mut rng, family, mode)).collect();
            record(format!("model/{family}/{mode:?}"), errors);
        }
    }
    let (worst_name, worst) = suites.iter().max_by(|a, b| a.1.total_cmp(&b.1)).cloned().unwrap();
    check(
        worst < 1e-4,
        format!(
            "{} suites x {CONFIGS} configs, worst {worst_name} at {worst:.1e}",
            suites.len()
        ),
    )
}

fn no_crossing() -> Outcome {
    let grid = QuantileGrid::evenly_spaced(19).unwrap();
    let normal = ErrorDistribution::benchmark_set()[0];
    let data = ExampleFunction::Example1.generate::<f64>(600, normal, 303).unwrap();
    let splits = data.split(SplitSizes::thirds(), 303).unwrap();
    let mut fit_config = ExperimentConfig::experiment1().fit_config(303);
    fit_config.stop_rules = vec![StopRule::MaxEpochs { epochs: 50 }];
    let mut rng = Rng::new(304);
    let x = Matrix::from_fn(1000, 1, |_, _| rng.uniform(-10.0, 10.0));

    let crossings = |model: &QuantileModel<f64>, slack: f64| -> usize {
        let pred = model.predict(&x).unwrap();
        pred.row_iter()
            .filter(|row| row.windows(2).any(|p| p[1] < p[0] - slack))
            .count()
    };
    let mut lines = Vec::new();
    let mut total = 0;
    for family in [ModelFamily::Scqrnn, ModelFamily::CqrnnSe, ModelFamily::Mcqrnn] {
        let slack = if family == ModelFamily::Mcqrnn { 1e-9 } else { 0.0 };
        let trained_as = if family == ModelFamily::CqrnnSe {
            ModelFamily::Cqrnn
        } else {
            family
        };
        let spec = ModelSpec::new(trained_as, 1, vec![5, 5], grid.clone());
        let mut model = QuantileModel::new(spec, 305).unwrap();
        let at_init = crossings(&model.with_family(family).unwrap(), slack);
        let report = fit(&mut model, &splits.train, &splits.validation, &fit_config).unwrap();
        let trained = crossings(&model.with_family(family).unwrap(), slack);
        total += at_init + trained;
        lines.push(format!(
            "{family} {at_init}/{trained} after {} epochs",
            report.epochs_run
        ));
    }
    check(
        total == 0,
        format!("rows crossing at init/trained: {}", lines.join(", ")),
    )
}

fn convergence_race() -> Outcome {
    let out = run_experiment2(&ExperimentConfig::experiment2()).unwrap();
    let s = &out.summary;
    let median = |family: ModelFamily| s.families.iter().find(|f| f.family == family).and_then(|f| f.median);
    let (sc, cq) = (
        median(ModelFamily::Scqrnn).unwrap_or(f64::NAN),
        median(ModelFamily::Cqrnn).unwrap_or(f64::NAN),
    );
    let share = s.faster.first as f64 / s.runs as f64;
    check(
        s.runs == 100 && (30.0..=200.0).contains(&cq) && share >= 0.6 && sc < cq,
        format!(
            "{} runs on {}, threshold {}: scqrnn faster in {}, cqrnn in {}, ties {}; median epochs {sc} vs {cq}",
            s.runs, s.dataset, s.threshold, s.faster.first, s.faster.second, s.faster.ties
        ),
    )
}

fn complexity() -> Outcome {
    let config = ExperimentConfig {
        bench: BenchSettings {
            hidden_widths: vec![64],
            levels: vec![8, 64],
            depth: 2,
            ..BenchSettings::default()
        },
        ..ExperimentConfig::bench()
    };
    let report = run_complexity_bench(&config).unwrap();
    let (r8, r64) = (report.row(64, 8).unwrap().ratio, report.row(64, 64).unwrap().ratio);
    check(
        r64 >= 3.0 * r8,
        format!(
            "mcqrnn/scqrnn time ratio {r8:.2} at T=8, {r64:.2} at T=64 (x{:.2})",
            r64 / r8
        ),
    )
}

fn experiment1_ordering() -> Outcome {
    let config = ExperimentConfig {
        runs: 20,
        ..ExperimentConfig::experiment1()
    };
    let out = run_experiment1(&config).unwrap();
    let [normal, _, chi2] = ErrorDistribution::benchmark_set();
    let median_rmse = |family, example, dist: &ErrorDistribution| {
        out.cell(family, example, dist)
            .and_then(|c| c.rmse)
            .map_or(f64::NAN, |s| s.median)
    };
    let mut problems = Vec::new();
    let mut worst_gap: f64 = 0.0;
    for example in ExampleFunction::ALL {
        for family in [ModelFamily::Scqrnn, ModelFamily::Cqrnn] {
            let (n, c) = (
                median_rmse(family, example, &normal),
                median_rmse(family, example, &chi2),
            );
            if c.is_nan() || c <= n {
                problems.push(format!("{family}/{}: chi2 {c:.3} <= normal {n:.3}", example.label()));
            }
        }
        for dist in ErrorDistribution::benchmark_set() {
            let (cq, se) = (
                median_rmse(ModelFamily::Cqrnn, example, &dist),
                median_rmse(ModelFamily::CqrnnSe, example, &dist),
            );
            let gap = (cq - se).abs() / cq.min(se);
            worst_gap = worst_gap.max(gap);
            if gap.is_nan() || gap >= 0.05 {
                problems.push(format!(
                    "cqrnn vs cqrnnse on {}/{}: {:.1}%",
                    example.label(),
                    dist.label(),
                    100.0 * gap
                ));
            }
        }
    }
    let failures: usize = out.cells.iter().map(|c| c.failures).sum();
    check(
        problems.is_empty() && failures == 0,
        format!(
            "20 runs, {failures} failed fits, widest cqrnn/cqrnnse gap {:.2}%{}",
            100.0 * worst_gap,
            if problems.is_empty() {
                String::new()
            } else {
                format!("; {}", problems.join("; "))
            }
        ),
    )
}

fn metric_oracles() -> Outcome {
    let mut rng = Rng::new(707);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let (n, t) = (1 + rng.below(40), 1 + rng.below(20));
        let grid = QuantileGrid::evenly_spaced(t).unwrap();
        let taus = grid.taus().to_vec();
        // Rounded values so that ties between targets and predictions occur.
        let mut draw = || (rng.uniform(-2.0, 2.0) * 10.0).round() / 10.0;
        let pred_values: Vec<f64> = (0..n * t).map(|_| draw()).collect();
        let ideal_values: Vec<f64> = (0..n * t).map(|_| draw()).collect();
        let y: Vec<f64> = (0..n).map(|_| draw()).collect();
        let pred = Matrix::new(n, t, pred_values.clone()).unwrap();
        let ideal = Matrix::new(n, t, ideal_values.clone()).unwrap();

        let mut squares = 0.0;
        for i in 0..n {
            for k in 0..t {
                squares += (pred_values[i * t + k] - ideal_values[i * t + k]).powi(2);
            }
        }
        let rmse = (squares / (n * t) as f64).sqrt();
        let mut freq = vec![0.0; t];
        for (k, f) in freq.iter_mut().enumerate() {
            let covered = (0..n).filter(|&i| y[i] <= pred_values[i * t + k]).count();
            *f = covered as f64 / n as f64;
        }
        let reliability = freq.iter().zip(&taus).map(|(f, tau)| (f - tau).abs()).sum::<f64>() / t as f64;

        let lib_freq = metrics::observed_frequency(&pred, &y).unwrap();
        let gaps = [
            (metrics::rmse_vs_ideal(&pred, &ideal).unwrap() - rmse).abs(),
            lib_freq
                .iter()
                .zip(&freq)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max),
            (metrics::overall_reliability(&lib_freq, &grid).unwrap() - reliability).abs(),
            (losses::composite_loss(&pred, &y, &grid, None).unwrap() - composite_oracle(&pred_values, &y, &taus)).abs(),
        ];
        worst = gaps.iter().copied().fold(worst, f64::max);
    }
    check(worst <= 1e-12, format!("100 instances, largest deviation {worst:.1e}"))
}

/// Composite Simpson rule on 20000 panels.
fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    const PANELS: usize = 20_000;
    let h = (b - a) / PANELS as f64;
    let inner: f64 = (1..PANELS)
        .map(|i| if i % 2 == 1 { 4.0 } else { 2.0 } * f(a + i as f64 * h))
        .sum();
    (f(a) + inner + f(b)) * h / 3.0
}

fn quantile_functions() -> Outcome {
    let mut taus = vec![0.01];
    taus.extend((1..20).map(|k| k as f64 * 0.05));
    taus.push(0.99);
    let pi = std::f64::consts::PI;
    // t(3) density and χ²(3) after the substitution x = s².
    let t3 = |q: f64| 0.5 + q.signum() * integrate(&|x| 6.0 * 3f64.sqrt() / (pi * (3.0 + x * x).powi(2)), 0.0, q.abs());
    let chi3 = |q: f64| {
        integrate(
            &|s| 2.0 * s * s * (-s * s / 2.0).exp() / (2.0 * pi).sqrt(),
            0.0,
            q.sqrt(),
        )
    };
    let (mut round_trip, mut quadrature): (f64, f64) = (0.0, 0.0);
    for dist in ErrorDistribution::benchmark_set() {
        for &tau in &taus {
            let q = dist.quantile(tau).unwrap();
            round_trip = round_trip.max((dist.cdf(q) - tau).abs());
            let oracle = match dist {
                ErrorDistribution::StudentT { .. } => Some(t3(q)),
                ErrorDistribution::ChiSquared { .. } => Some(chi3(q)),
                ErrorDistribution::Normal { .. } => None,
            };
            if let Some(p) = oracle {
                quadrature = quadrature.max((p - tau).abs());
            }
        }
    }
    check(
        round_trip < 1e-8 && quadrature < 1e-6,
        format!(
            "{} levels x 3 distributions, round trip {round_trip:.1e}, quadrature {quadrature:.1e}",
            taus.len()
        ),
    )
}

fn run_cli(args: &[&str], cwd: &Path) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_qrnet"))
        .args(args)
        .current_dir(cwd)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(String::from_utf8_lossy(&out.stderr).into_owned())
    }
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let commands: [(&str, &[&str]); 2] = [
        ("exp1", &["--runs", "2", "--seed", "7"]),
        ("exp2", &["--runs", "5", "--seed", "3"]),
    ];
    let mut compared = 0;
    for (cmd, extra) in commands {
        for attempt in ["a", "b"] {
            let out = format!("{cmd}-{attempt}");
            let mut args = vec![cmd, "--out", out.as_str()];
            args.extend_from_slice(extra);
            run_cli(&args, dir.path())?;
        }
        for file in ["config.json", "runs.csv", "summary.json"] {
            let read = |attempt: &str| std::fs::read(dir.path().join(format!("{cmd}-{attempt}")).join(file));
            let (a, b) = (
                read("a").map_err(|e| e.to_string())?,
                read("b").map_err(|e| e.to_string())?,
            );
            if a != b {
                return Err(format!("{cmd}/{file} differs between invocations"));
            }
            compared += 1;
        }
    }
    Ok(format!("{compared} result files byte-identical across two invocations"))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("sorted-loss dominance", dominance, Some(5)),
        ("gradient correctness", gradients, Some(30)),
        ("no-crossing guarantee", no_crossing, None),
        ("convergence race", convergence_race, Some(15 * 60)),
        ("complexity scaling", complexity, Some(120)),
        ("experiment 1 ordering", experiment1_ordering, Some(20 * 60)),
        ("metric oracles", metric_oracles, Some(5)),
        ("quantile functions", quantile_functions, None),
        ("end-to-end determinism", determinism, None),
    ];
    let mut failed = 0;
    for (i, (name, run, budget)) in criteria.into_iter().enumerate() {
        let started = Instant::now();
        let outcome = run();
        let elapsed = started.elapsed();
        let over = budget.is_some_and(|s| elapsed > Duration::from_secs(s));
        let (passed, detail) = match outcome {
            Ok(d) if !over => (true, d),
            Ok(d) => (false, format!("{d}; over the {}s budget", budget.unwrap_or_default())),
            Err(d) => (false, d),
        };
        if !passed {
            failed += 1;
        }
        println!(
            "criterion {} {name}: {} ({detail}) in {:.1}s",
            i + 1,
            if passed { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64()
        );
    }
    println!("{} of 9 criteria passed", 9 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
