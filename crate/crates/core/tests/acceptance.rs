//! Acceptance criteria, one PASS/FAIL line each. Run with
//! `cargo test --release -p spca-core --test acceptance`.

mod common;

use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spca::bench::{rep_data, run_bench, write_report, BenchReport, ExperimentSpec, LambdaRule};
use spca::estimators::{ConvexSpca, FantopeL1, NonconvexSpca, Oracle, STATIONARITY_TOLERANCE};
use spca::fantope::{
    curvature_slack, fantope_linear_max, is_member, project_fantope, random_member,
};
use spca::penalty::{concave_part_derivative, concave_part_value, penalty_value, prox};
use spca::solver::{sampled_stationarity_gap, solve};
use spca::synthdata::sample_covariance;
use spca::{EstimatorRegistry, FantopeSpec, PenaltyConfig, PenaltyFamily, SolverConfig};

use common::{grid_prox, penalty_reference, project_bruteforce, random_symmetric, top_k_sum};

const REPS: usize = 20;
const RATE_REPS: usize = 50;
/// Fixed-lambda multiple of `default_lambda` for the rate check: the low end
/// of the default CV span.
const RATE_C: f64 = 0.1;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn mean_error(report: &BenchReport, name: &str) -> f64 {
    report
        .summary(name)
        .and_then(|s| s.summary)
        .map_or(f64::NAN, |s| s.frob_error.mean)
}

fn mean_tpr_fpr(report: &BenchReport, name: &str) -> (f64, f64) {
    report
        .summary(name)
        .and_then(|s| s.summary)
        .map_or((f64::NAN, f64::NAN), |s| (s.tpr.mean, s.fpr.mean))
}

fn all_succeeded(report: &BenchReport) -> bool {
    report.summaries.iter().all(|s| s.failures == 0)
}

fn criterion_1(r: &BenchReport) -> Outcome {
    let oracle = mean_error(r, Oracle::NAME);
    let convex = mean_error(r, ConvexSpca::NAME);
    let (ct, cf) = mean_tpr_fpr(r, ConvexSpca::NAME);
    let (nt, nf) = mean_tpr_fpr(r, NonconvexSpca::NAME);
    let (_, lf) = mean_tpr_fpr(r, FantopeL1::NAME);
    let checks = [
        (
            "oracle error in [0.015, 0.045]",
            (0.015..=0.045).contains(&oracle),
        ),
        ("|convex - oracle| <= 0.01", (convex - oracle).abs() <= 0.01),
        ("convex TPR = 1", ct == 1.0),
        ("convex FPR <= 0.005", cf <= 0.005),
        ("nonconvex TPR = 1", nt == 1.0),
        ("nonconvex FPR <= 0.005", nf <= 0.005),
        ("L1 FPR > convex FPR", lf > cf),
        ("no failed fits", all_succeeded(r)),
    ];
    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    outcome(
        failed.is_empty(),
        format!(
            "oracle {oracle:.4}, convex {convex:.4} (TPR {ct:.3}, FPR {cf:.4}), nonconvex TPR {nt:.3} FPR {nf:.4}, \
             L1 FPR {lf:.4}; failed: {failed:?}"
        ),
    )
}

fn criterion_2(r: &BenchReport) -> Outcome {
    let o = mean_error(r, Oracle::NAME);
    let c = mean_error(r, ConvexSpca::NAME);
    let n = mean_error(r, NonconvexSpca::NAME);
    let l = mean_error(r, FantopeL1::NAME);
    let checks = [
        ("oracle < convex", o < c),
        ("convex <= nonconvex", c <= n),
        ("nonconvex < L1", n < l),
        ("convex in [0.12, 0.30]", (0.12..=0.30).contains(&c)),
        ("L1 >= 1.25 convex", l >= 1.25 * c),
        ("no failed fits", all_succeeded(r)),
    ];
    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    outcome(
        failed.is_empty(),
        format!("oracle {o:.4}, convex {c:.4}, nonconvex {n:.4}, L1 {l:.4} (ratio {:.3}); failed: {failed:?}", l / c),
    )
}

fn criterion_3(r: &BenchReport) -> Outcome {
    let mut good = 0;
    let mut dists = Vec::new();
    for rep in &r.reps {
        let fit = |name: &str| {
            rep.fits
                .iter()
                .find(|f| f.estimator == name)
                .and_then(|f| f.result.as_ref())
        };
        let (Some(convex), Some(oracle)) = (fit(ConvexSpca::NAME), fit(Oracle::NAME)) else {
            continue;
        };
        let d = convex.pi_hat.sub(&oracle.pi_hat).frobenius_norm();
        dists.push(d);
        if d <= 5e-3 && convex.rank == 1 {
            good += 1;
        }
    }
    let max = dists.iter().copied().fold(0.0, f64::max);
    let mean = dists.iter().sum::<f64>() / dists.len().max(1) as f64;
    outcome(
        good >= 18,
        format!("{good}/{} runs with ||convex - oracle||_F <= 5e-3 and rank 1 (distance mean {mean:.2e}, max {max:.2e})", r.reps.len()),
    )
}

fn criterion_4(small: &BenchReport, large: &BenchReport) -> Outcome {
    let (e80, e320) = (
        mean_error(small, ConvexSpca::NAME),
        mean_error(large, ConvexSpca::NAME),
    );
    let ratio = e80 / e320;
    outcome(
        (1.6..=2.4).contains(&ratio) && all_succeeded(small) && all_succeeded(large),
        format!("convex error {e80:.4} at n=80, {e320:.4} at n=320, ratio {ratio:.3} (lambda = {RATE_C} default_lambda)"),
    )
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut worst, mut idem, mut expand) = (0.0f64, 0.0f64, f64::NEG_INFINITY);
    for _ in 0..200 {
        let p = rng.random_range(1..=5);
        let k = rng.random_range(1..=p.min(3));
        let spec = FantopeSpec::new(k, p).unwrap();
        let scale = rng.random_range(0.1..3.0);
        let a = random_symmetric(&mut rng, p, scale);
        let b = random_symmetric(&mut rng, p, 1.0);
        let pa = project_fantope(&a, &spec).unwrap();
        let pb = project_fantope(&b, &spec).unwrap();
        worst = worst.max((pa.as_matrix() - project_bruteforce(&a, k)).norm());
        idem = idem.max(
            project_fantope(&pa, &spec)
                .unwrap()
                .sub(&pa)
                .frobenius_norm(),
        );
        expand = expand.max(pa.sub(&pb).frobenius_norm() - a.sub(&b).frobenius_norm());
    }
    outcome(
        worst <= 1e-6 && idem <= 1e-9 && expand <= 1e-9,
        format!(
            "max brute-force deviation {worst:.2e}, idempotence {idem:.2e}, expansion {expand:.2e}"
        ),
    )
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst_sum = 0.0f64;
    for _ in 0..100 {
        let p = rng.random_range(2..=10);
        let k = rng.random_range(1..=p);
        let s = random_symmetric(&mut rng, p, 1.0);
        let (value, _) = fantope_linear_max(&s, &FantopeSpec::new(k, p).unwrap()).unwrap();
        worst_sum = worst_sum.max((value - top_k_sum(&s, k)).abs());
    }
    let (mut worst_proj, mut solved) = (0.0f64, 0);
    while solved < 20 {
        let p = rng.random_range(3..=12);
        let k = rng.random_range(1..p.min(4));
        let s = random_symmetric(&mut rng, p, 1.0);
        let eig = s.eigen();
        if eig.gap(k) <= 0.1 {
            continue;
        }
        let cfg = SolverConfig {
            max_iters: 20_000,
            ..SolverConfig::default().with_tau(0.0)
        };
        let sol = solve(
            &s,
            &FantopeSpec::new(k, p).unwrap(),
            &PenaltyConfig::l1(0.0),
            &cfg,
        )
        .unwrap();
        worst_proj = worst_proj.max(sol.estimate.sub(&eig.top_projector(k)).frobenius_norm());
        solved += 1;
    }
    outcome(
        worst_sum <= 1e-10 && worst_proj <= 1e-4,
        format!("max |linear_max - top-k sum| {worst_sum:.2e} on 100 matrices; max eigenprojector distance {worst_proj:.2e} on {solved} solves"),
    )
}

fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = f64::INFINITY;
    let mut pairs = 0;
    while pairs < 100 {
        let p = rng.random_range(2..=10);
        let k = rng.random_range(1..p);
        let sigma = random_symmetric(&mut rng, p, 1.0);
        if sigma.eigen().gap(k) <= 1e-3 {
            continue;
        }
        let x = random_member(&mut rng, &FantopeSpec::new(k, p).unwrap());
        worst = worst.min(curvature_slack(&sigma, &x, k));
        pairs += 1;
    }
    outcome(
        worst >= -1e-8,
        format!("min slack {worst:.3e} over {pairs} pairs"),
    )
}

fn regularity_violations(cfg: &PenaltyConfig) -> Vec<String> {
    let mut bad = Vec::new();
    let half = 10.0 * cfg.b * cfg.lambda;
    let grid: Vec<f64> = (0..10_000)
        .map(|i| -half + 2.0 * half * i as f64 / 9_999.0)
        .collect();
    let nu = cfg.nu();
    if cfg.family == PenaltyFamily::L1 && nu.is_finite() {
        bad.push("L1 nu finite".into());
    }
    for &t in &grid {
        let d = concave_part_derivative(cfg, t);
        let v = penalty_value(cfg, t);
        if (v - penalty_reference(cfg, t)).abs() > 1e-12 * (1.0 + v.abs())
            || (v - cfg.lambda * t.abs() - concave_part_value(cfg, t)).abs()
                > 1e-12 * (1.0 + v.abs())
        {
            bad.push(format!("value at {t}"));
        }
        if t.abs() >= nu && (cfg.lambda * t.signum() + d).abs() > 1e-12 {
            bad.push(format!("(a) at {t}"));
        }
        if d.abs() > cfg.lambda + 1e-12 {
            bad.push(format!("(d) at {t}"));
        }
    }
    for w in grid.windows(2) {
        let (d0, d1) = (
            concave_part_derivative(cfg, w[0]),
            concave_part_derivative(cfg, w[1]),
        );
        if d1 > d0 + 1e-12 || d1 - d0 < -cfg.zeta_minus() * (w[1] - w[0]) - 1e-12 {
            bad.push(format!("(b) at {}", w[0]));
        }
    }
    if concave_part_value(cfg, 0.0) != 0.0 || concave_part_derivative(cfg, 0.0) != 0.0 {
        bad.push("(c)".into());
    }
    bad
}

fn criterion_8() -> Outcome {
    let mut bad = Vec::new();
    for &lambda in &[0.1, 1.0, 2.5] {
        for &b in &[2.5, 3.0, 6.0] {
            bad.extend(regularity_violations(
                &PenaltyConfig::mcp(lambda, b).unwrap(),
            ));
            bad.extend(regularity_violations(
                &PenaltyConfig::scad(lambda, b).unwrap(),
            ));
        }
        bad.extend(regularity_violations(&PenaltyConfig::l1(lambda)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst = 0.0f64;
    for family in PenaltyFamily::ALL {
        for _ in 0..1000 {
            let lambda = rng.random_range(0.05..2.0);
            let cfg = match family {
                PenaltyFamily::Mcp => {
                    PenaltyConfig::mcp(lambda, rng.random_range(1.2..6.0)).unwrap()
                }
                PenaltyFamily::Scad => {
                    PenaltyConfig::scad(lambda, rng.random_range(2.2..6.0)).unwrap()
                }
                PenaltyFamily::L1 => PenaltyConfig::l1(lambda),
            };
            let rho = cfg.zeta_minus().max(0.05) * rng.random_range(1.05..10.0);
            let reach = 1.5 * cfg.b * cfg.lambda.max(1.0 / rho);
            let a = rng.random_range(-reach..reach);
            worst = worst.max((prox(&cfg, a, rho).unwrap() - grid_prox(&cfg, a, rho)).abs());
        }
    }
    if prox(&PenaltyConfig::mcp(1.0, 3.0).unwrap(), 1.0, 1.0 / 3.0).is_ok() {
        bad.push("prox accepted rho b <= 1".into());
    }
    bad.truncate(5);
    outcome(
        bad.is_empty() && worst <= 2e-5,
        format!("regularity violations {bad:?}; max prox deviation {worst:.2e} over 3000 draws"),
    )
}

/// Checks every converged ADMM fit in `report`.
fn feasibility_violations(
    report: &BenchReport,
    label: &str,
    rng: &mut ChaCha8Rng,
) -> (usize, Vec<String>) {
    let spec = &report.spec;
    let model = spec.model().unwrap();
    let fantope = FantopeSpec::new(spec.k, spec.p).unwrap();
    let (mut checked, mut bad) = (0, Vec::new());
    for rep in &report.reps {
        let sigma = sample_covariance(&rep_data(spec, &model, None, rep.rep).unwrap().x).unwrap();
        for fit in &rep.fits {
            let Some(res) = &fit.result else { continue };
            let (Some(diag), Some(feasible), Some(dual)) =
                (&res.diagnostics, &res.feasible, &res.dual)
            else {
                continue;
            };
            if !diag.converged() {
                continue;
            }
            checked += 1;
            let tag = format!("{label} rep {} {}", rep.rep, fit.estimator);
            if !is_member(feasible, &fantope, 1e-6) {
                bad.push(format!("{tag}: Pi outside the Fantope"));
            }
            if diag.primal_residual > diag.config.primal_tol.unwrap() {
                bad.push(format!(
                    "{tag}: primal residual {:.2e}",
                    diag.primal_residual
                ));
            }
            if fit.estimator == NonconvexSpca::NAME {
                let gap = sampled_stationarity_gap(feasible, &sigma, 0.0, dual, &fantope, 100, rng);
                if gap > STATIONARITY_TOLERANCE {
                    bad.push(format!("{tag}: VI slack {gap:.2e}"));
                }
            }
        }
    }
    (checked, bad)
}

fn criterion_9(reports: &[(&str, &BenchReport)]) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (mut checked, mut bad) = (0, Vec::new());
    let mut unconverged = 0;
    for (label, r) in reports {
        let (c, b) = feasibility_violations(r, label, &mut rng);
        checked += c;
        bad.extend(b);
        unconverged += r
            .reps
            .iter()
            .flat_map(|rep| &rep.fits)
            .filter(|f| f.result.as_ref().is_some_and(|res| !res.converged()))
            .count();
    }
    let n_bad = bad.len();
    bad.truncate(5);
    outcome(
        n_bad == 0 && checked > 0,
        format!("{checked} converged fits checked, {unconverged} unconverged skipped, {n_bad} violations {bad:?}"),
    )
}

fn criterion_10() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let mut spec = ExperimentSpec::synthetic_i(80, 4, 77);
    spec.cv.grid_points = 5;
    let registry = EstimatorRegistry::builtin();
    let mut diffs = Vec::new();
    let mut runs = Vec::new();
    for (i, threads) in [1, 4, 4].into_iter().enumerate() {
        let dir = tmp.path().join(format!("run{i}"));
        write_report(&run_bench(&spec, &registry, threads).unwrap(), &dir).unwrap();
        runs.push(dir);
    }
    let mut files = 0;
    for entry in std::fs::read_dir(&runs[0]).unwrap() {
        let name = entry.unwrap().file_name();
        files += 1;
        let first = std::fs::read(runs[0].join(&name)).unwrap();
        for other in &runs[1..] {
            if std::fs::read(other.join(&name)).unwrap() != first {
                diffs.push(name.to_string_lossy().into_owned());
            }
        }
    }
    outcome(
        diffs.is_empty() && files >= 4,
        format!("{files} report files compared across threads 1, 4, 4; differing: {diffs:?}"),
    )
}

fn bench(label: &str, spec: &ExperimentSpec) -> BenchReport {
    let start = Instant::now();
    let report = run_bench(spec, &EstimatorRegistry::builtin(), 0).unwrap();
    eprintln!("{label}: {:.0} s", start.elapsed().as_secs_f64());
    report
}

fn main() -> ExitCode {
    let mut results = vec![
        (5, criterion_5()),
        (6, criterion_6()),
        (7, criterion_7()),
        (8, criterion_8()),
        (10, criterion_10()),
    ];

    let d1 = bench("dataset I", &ExperimentSpec::synthetic_i(80, REPS, 0));
    let d2 = bench("dataset II", &ExperimentSpec::synthetic_ii(80, REPS, 0));
    let rate = |n| ExperimentSpec {
        estimators: vec![Oracle::NAME.into(), ConvexSpca::NAME.into()],
        lambda_rule: LambdaRule::Scaled { c: RATE_C },
        ..ExperimentSpec::synthetic_i(n, RATE_REPS, 1000)
    };
    let r80 = bench("rate n=80", &rate(80));
    let r320 = bench("rate n=320", &rate(320));

    results.push((1, criterion_1(&d1)));
    results.push((2, criterion_2(&d2)));
    results.push((3, criterion_3(&d1)));
    results.push((4, criterion_4(&r80, &r320)));
    results.push((
        9,
        criterion_9(&[
            ("I", &d1),
            ("II", &d2),
            ("rate80", &r80),
            ("rate320", &r320),
        ]),
    ));
    results.sort_by_key(|r| r.0);

    let mut all = true;
    for (n, o) in &results {
        all &= o.passed;
        println!(
            "criterion {n}: {}  {}",
            if o.passed { "PASS" } else { "FAIL" },
            o.detail
        );
    }
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
