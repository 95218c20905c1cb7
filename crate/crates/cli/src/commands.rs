use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use spca::bench::{render_table, run_bench, write_report, DatasetKind, ExperimentSpec};
use spca::estimators::{numerical_rank, support_of, ConvexSpca, DEFAULT_RANK_THRESHOLD};
use spca::evaluation::{frobenius_error, support_metrics, MetricsRecord};
use spca::io::{
    read_json, read_matrix_csv, read_symmetric_csv, write_cv_table_csv, write_json,
    write_matrix_csv, write_matrix_csv_with_header,
};
use spca::synthdata::{
    dataset1_model, dataset2_model, sample_covariance, sample_gaussian, substream, CovarianceModel,
    Stream,
};
use spca::tuning::{cv_select_lambda, holdout_select_lambda, CvOutcome, CvSpec};
use spca::{
    EstimateResult, EstimatorRegistry, FantopeSpec, FitProblem, PenaltyConfig, SolverConfig,
    SpcaError,
};

use crate::{BenchArgs, Cli, Command, DatasetArg, EvalArgs, FamilyArg, FitArgs, SynthArgs};

pub fn run(cli: &Cli) -> Result<()> {
    let file = match &cli.config {
        Some(path) => {
            read_json::<Value>(path).with_context(|| format!("reading {}", path.display()))?
        }
        None => Value::Object(Map::new()),
    };
    if !file.is_object() {
        return Err(SpcaError::InvalidConfig("--config must hold a JSON object".into()).into());
    }
    std::fs::create_dir_all(&cli.out).with_context(|| format!("creating {}", cli.out.display()))?;
    match &cli.command {
        Command::Synth(args) => synth(cli, args, file),
        Command::Fit(args) => fit(cli, args, file, false),
        Command::Tune(args) => fit(cli, args, file, true),
        Command::Bench(args) => bench(cli, args, file),
        Command::Eval(args) => eval(cli, args),
    }
}

/// Output JSON: the resolved configuration next to the command's results.
#[derive(Serialize)]
struct Output<'a, C: Serialize, T: Serialize> {
    config: &'a C,
    #[serde(flatten)]
    body: T,
}

/// Recursively overlays `top` onto `base`; `null` in `top` leaves `base` as is.
fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (key, v) in t.into_iter().filter(|(_, v)| !v.is_null()) {
                match b.get_mut(&key) {
                    Some(slot) => merge(slot, v),
                    None => {
                        let mut fresh = Value::Null;
                        merge(&mut fresh, v);
                        if !fresh.is_null() {
                            b.insert(key, fresh);
                        }
                    }
                }
            }
        }
        (_, Value::Null) => {}
        (b, Value::Object(t)) => {
            let mut obj = Value::Object(Map::new());
            merge(&mut obj, Value::Object(t));
            *b = obj;
        }
        (b, t) => *b = t,
    }
}

fn parse_config<T: DeserializeOwned>(v: Value) -> Result<T> {
    serde_json::from_value(v)
        .map_err(|e| SpcaError::InvalidConfig(format!("configuration: {e}")).into())
}

fn dataset_name(d: DatasetArg) -> &'static str {
    match d {
        DatasetArg::One => "dataset1",
        DatasetArg::Two => "dataset2",
    }
}

fn family_name(f: FamilyArg) -> &'static str {
    match f {
        FamilyArg::Mcp => "mcp",
        FamilyArg::Scad => "scad",
        FamilyArg::L1 => "l1",
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SynthConfig {
    dataset: DatasetKind,
    n: usize,
    p: usize,
    seed: u64,
    header: bool,
}

fn synth(cli: &Cli, args: &SynthArgs, file: Value) -> Result<()> {
    let mut v = json!({"dataset": "dataset1", "n": 80, "p": 128, "seed": 0, "header": false});
    merge(&mut v, file);
    merge(
        &mut v,
        json!({
            "dataset": args.dataset.map(dataset_name),
            "n": args.n,
            "p": args.p,
            "seed": cli.seed,
            "header": args.header.then_some(true),
        }),
    );
    let cfg: SynthConfig = parse_config(v)?;
    if cfg.n < 2 {
        return Err(SpcaError::InvalidConfig(format!("need n >= 2, got {}", cfg.n)).into());
    }
    let model = match cfg.dataset {
        DatasetKind::Dataset1 => dataset1_model(cfg.p)?,
        DatasetKind::Dataset2 => dataset2_model(cfg.p, cfg.seed)?,
        DatasetKind::Csv => {
            return Err(SpcaError::InvalidConfig("synth needs dataset 1 or 2".into()).into())
        }
    };
    let x = sample_gaussian(&model, cfg.n, &mut substream(cfg.seed, Stream::Train))?;
    let heldout = sample_gaussian(&model, cfg.n, &mut substream(cfg.seed, Stream::HeldOut))?;
    let header: Vec<String> = (0..cfg.p).map(|j| format!("x{j}")).collect();
    let header = cfg.header.then_some(header.as_slice());
    write_matrix_csv_with_header(&cli.out.join("data.csv"), &x, header)?;
    write_matrix_csv_with_header(&cli.out.join("heldout.csv"), &heldout, header)?;
    write_json(
        &cli.out.join("model.json"),
        &Output {
            config: &cfg,
            body: &model,
        },
    )?;
    println!(
        "wrote {}x{} data, held-out sample and model to {}",
        cfg.n,
        cfg.p,
        cli.out.display()
    );
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FitConfig {
    data: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    heldout: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    model: Option<PathBuf>,
    k: usize,
    estimator: String,
    penalty: PenaltyConfig,
    solver: SolverConfig,
    tune: bool,
    cv: CvSpec,
}

fn fit_config(cli: &Cli, args: &FitArgs, file: Value, tune: bool) -> Result<FitConfig> {
    let mut v = json!({
        "k": 1,
        "estimator": ConvexSpca::NAME,
        "penalty": {"family": "mcp", "b": 3.0},
        "solver": {},
        "tune": tune,
        "cv": {},
    });
    merge(&mut v, file);
    merge(
        &mut v,
        json!({
            "data": args.data,
            "heldout": args.heldout,
            "model": args.model,
            "k": args.k,
            "estimator": args.estimator,
            "tune": (tune || args.tune).then_some(true),
            "penalty": {"family": args.penalty.map(family_name), "b": args.b, "lambda": args.lambda},
            "solver": {"tau": args.tau, "rho": args.rho, "max_iters": args.max_iters},
            "cv": {"folds": args.folds, "grid_points": args.grid_points, "lambda_grid": args.grid, "seed": cli.seed},
        }),
    );
    if v.pointer("/data").is_none_or(Value::is_null) {
        return Err(SpcaError::InvalidConfig("no data file given (--data)".into()).into());
    }
    let tuning = v["tune"].as_bool().unwrap_or(false);
    if v.pointer("/penalty/lambda").is_none_or(Value::is_null) {
        if !tuning {
            return Err(SpcaError::InvalidConfig("give --lambda or --tune".into()).into());
        }
        v["penalty"]["lambda"] = json!(0.0);
    }
    if v.pointer("/solver/tau").is_none_or(Value::is_null) {
        // Convex fits default to the ridge weight 2/b; the other estimators ignore tau.
        let is_convex = v["estimator"]
            .as_str()
            .is_some_and(|e| e.eq_ignore_ascii_case(ConvexSpca::NAME));
        let b = v
            .pointer("/penalty/b")
            .and_then(Value::as_f64)
            .unwrap_or(3.0);
        v["solver"]["tau"] = json!(if is_convex { 2.0 / b } else { 0.0 });
    }
    parse_config(v)
}

#[derive(Serialize)]
struct CvReport<'a> {
    lambda_star: f64,
    mean_scores: &'a [(f64, f64)],
    #[serde(skip_serializing_if = "<[f64]>::is_empty")]
    excluded: &'a [f64],
    heldout: bool,
}

impl<'a> CvReport<'a> {
    fn of(out: &'a CvOutcome, heldout: bool) -> Self {
        CvReport {
            lambda_star: out.lambda_star,
            mean_scores: &out.mean_scores,
            excluded: &out.excluded,
            heldout,
        }
    }
}

#[derive(Serialize)]
struct FitOutput<'a> {
    result: &'a EstimateResult,
    #[serde(skip_serializing_if = "Option::is_none")]
    cv: Option<CvReport<'a>>,
}

fn thread_pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| SpcaError::InvalidConfig(format!("thread pool: {e}")).into())
}

fn fit(cli: &Cli, args: &FitArgs, file: Value, tune_only: bool) -> Result<()> {
    let mut cfg = fit_config(cli, args, file, tune_only)?;
    let x =
        read_matrix_csv(&cfg.data).with_context(|| format!("reading {}", cfg.data.display()))?;
    let p = x.ncols();
    let sigma_hat = sample_covariance(&x)?;
    let registry = EstimatorRegistry::builtin();
    let est = registry.create(&cfg.estimator)?;
    let support = match &cfg.model {
        Some(path) => {
            let model: CovarianceModel =
                read_json(path).with_context(|| format!("reading {}", path.display()))?;
            if model.p() != p {
                return Err(SpcaError::InvalidConfig(format!(
                    "model has p = {}, data has p = {p}",
                    model.p()
                ))
                .into());
            }
            Some(model.support)
        }
        None => None,
    };
    let mut problem = FitProblem {
        spec: FantopeSpec::new(cfg.k, p)?,
        penalty: cfg.penalty,
        solver: cfg.solver,
        support,
    };
    // Fail on bad settings before spending time on cross-validation.
    problem.solver.validate()?;
    if cfg.estimator.eq_ignore_ascii_case(ConvexSpca::NAME)
        && !(cfg.solver.tau > cfg.penalty.zeta_minus())
    {
        return Err(SpcaError::InvalidConfig(format!(
            "convex estimator needs tau > zeta_minus (tau = {}, zeta_minus = {})",
            cfg.solver.tau,
            cfg.penalty.zeta_minus()
        ))
        .into());
    }

    let cv = if cfg.tune {
        if !est.uses_lambda() {
            return Err(
                SpcaError::InvalidConfig(format!("{} has no lambda to tune", est.name())).into(),
            );
        }
        let heldout = match &cfg.heldout {
            Some(path) => {
                Some(read_matrix_csv(path).with_context(|| format!("reading {}", path.display()))?)
            }
            None => None,
        };
        let out = thread_pool(cli.threads)?.install(|| match &heldout {
            Some(h) => holdout_select_lambda(&x, h, est.as_ref(), &problem, &cfg.cv),
            None => cv_select_lambda(&x, est.as_ref(), &problem, &cfg.cv),
        })?;
        cfg.penalty = cfg.penalty.with_lambda(out.lambda_star)?;
        problem.penalty = cfg.penalty;
        write_cv_table_csv(&cli.out.join("cv_scores.csv"), &out.table)?;
        Some(out)
    } else {
        None
    };
    cfg.solver = cfg.solver.resolved(p);
    let cv_report = cv.as_ref().map(|o| CvReport::of(o, cfg.heldout.is_some()));

    if tune_only {
        let out = cv_report.expect("tuned");
        write_json(
            &cli.out.join("tune.json"),
            &Output {
                config: &cfg,
                body: &out,
            },
        )?;
        println!("lambda* = {}", out.lambda_star);
        return Ok(());
    }

    let result = est.fit(&sigma_hat, &problem)?;
    write_matrix_csv(&cli.out.join("pi_hat.csv"), result.pi_hat.as_matrix())?;
    write_json(
        &cli.out.join("estimate.json"),
        &Output {
            config: &cfg,
            body: FitOutput {
                result: &result,
                cv: cv_report,
            },
        },
    )?;
    let status = match &result.diagnostics {
        Some(d) if d.converged() => format!("converged in {} iterations", d.iterations),
        Some(d) => format!("not converged after {} iterations", d.iterations),
        None => "closed form".into(),
    };
    println!(
        "{}: lambda = {}, {status}, rank {}, support size {}",
        result.estimator,
        cfg.penalty.lambda,
        result.rank,
        result.support.len()
    );
    Ok(())
}

fn bench(cli: &Cli, args: &BenchArgs, file: Value) -> Result<()> {
    let dataset = match args.dataset {
        Some(d) => json!(dataset_name(d)),
        None => file.get("dataset").cloned().unwrap_or(json!("dataset1")),
    };
    let n = args
        .n
        .or_else(|| file.get("n").and_then(Value::as_u64).map(|n| n as usize))
        .unwrap_or(80);
    let base = if dataset == json!("dataset2") {
        ExperimentSpec::synthetic_ii(n, 20, 0)
    } else {
        ExperimentSpec::synthetic_i(n, 20, 0)
    };
    let mut v = serde_json::to_value(&base)?;
    merge(&mut v, file);
    let rule = match (args.lambda_scale, args.lambda) {
        (Some(c), _) => json!({"rule": "scaled", "c": c}),
        (None, Some(lambda)) => json!({"rule": "fixed", "lambda": lambda}),
        (None, None) => Value::Null,
    };
    merge(
        &mut v,
        json!({
            "dataset": dataset,
            "n": n,
            "reps": args.reps,
            "estimators": args.estimators,
            "base_seed": cli.seed,
            "lambda_rule": rule,
        }),
    );
    let spec: ExperimentSpec = parse_config(v)?;
    let report = run_bench(&spec, &EstimatorRegistry::builtin(), cli.threads)?;
    write_report(&report, &cli.out)?;
    print!("{}", render_table(&report));
    Ok(())
}

#[derive(Debug, Serialize)]
struct EvalConfig<'a> {
    estimate: &'a Path,
    model: &'a Path,
}

#[derive(Serialize)]
struct EvalOutput {
    metrics: MetricsRecord,
}

/// `(Pi_hat, support, rank)` from a `fit` JSON or a bare matrix CSV.
fn load_estimate(path: &Path) -> Result<(spca::SymmetricMatrix, Vec<usize>, usize)> {
    let is_json = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("json"));
    if !is_json {
        let m = read_symmetric_csv(path)?;
        let support = support_of(&m);
        let rank = numerical_rank(&m, DEFAULT_RANK_THRESHOLD);
        return Ok((m, support, rank));
    }
    let mut v: Value = read_json(path)?;
    let body = match v.get_mut("result") {
        Some(r) => r.take(),
        None => v,
    };
    let r: EstimateResult = serde_json::from_value(body)
        .map_err(|e| SpcaError::Parse(format!("{}: {e}", path.display())))?;
    Ok((r.pi_hat, r.support, r.rank))
}

fn eval(cli: &Cli, args: &EvalArgs) -> Result<()> {
    let model: CovarianceModel =
        read_json(&args.model).with_context(|| format!("reading {}", args.model.display()))?;
    let (pi_hat, support, rank) = load_estimate(&args.estimate)
        .with_context(|| format!("reading {}", args.estimate.display()))?;
    if pi_hat.dim() != model.p() {
        bail!(SpcaError::InvalidConfig(format!(
            "estimate is {0}x{0}, model has p = {1}",
            pi_hat.dim(),
            model.p()
        )));
    }
    let (tpr, fpr) = support_metrics(&support, &model.support, model.p());
    let metrics = MetricsRecord {
        seed: cli.seed.or(model.seed).unwrap_or(0),
        frob_error: frobenius_error(&pi_hat, &model.pi_star)?,
        tpr,
        fpr,
        rank,
    };
    let cfg = EvalConfig {
        estimate: &args.estimate,
        model: &args.model,
    };
    write_json(
        &cli.out.join("eval.json"),
        &Output {
            config: &cfg,
            body: EvalOutput { metrics },
        },
    )?;
    println!(
        "frob_error = {}, tpr = {}, fpr = {}, rank = {}",
        metrics.frob_error, metrics.tpr, metrics.fpr, metrics.rank
    );
    Ok(())
}
