use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use bpre_core::fixtures;
use bpre_core::simulate::SurvivalEstimate;
use bpre_core::spectral::{PERRON_MAX_ITER, PERRON_TOL, REGIME_TOL};
use bpre_core::*;
use serde::Serialize;
use serde_json::json;

use crate::model_file::{Calibration, ModelFile};
use crate::{Cli, Command, Estimator, McArgs, OracleMethod, RegimeArg, Target, VerifyArgs};

/// Runs one command; `Ok(false)` means a check ran and failed.
pub fn run(cli: Cli) -> Result<bool> {
    if let Some(w) = cli.workers {
        ensure!(w >= 1, "--workers must be at least 1");
        rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build_global()
            .context("cannot configure the worker pool")?;
    }
    let out = Output(cli.output.as_deref());
    match cli.command {
        Command::Validate { model, json } => validate(&model, json, out),
        Command::Classify { model } => {
            let m = load(&model, None)?;
            out.json(&classify(&m, REGIME_TOL)?)?;
            Ok(true)
        }
        Command::Kcurve {
            model,
            from,
            to,
            step,
        } => kcurve(&model, from, to, step, out),
        Command::Calibrate {
            model,
            target,
            margin,
            lambda,
            name,
        } => calibrate_cmd(&model, target, margin, lambda, name, out),
        Command::Oracle {
            model,
            n,
            method,
            cap,
        } => oracle(&model, n, method, cap, out),
        Command::Estimate {
            model,
            n,
            estimator,
            lambda,
            mc,
            cap,
        } => estimate(&model, n, estimator, lambda, mc, cap, out),
        Command::Walk {
            model,
            n,
            y,
            start,
            lambda,
            mc,
            rayleigh,
        } => walk(&model, n, y, start, lambda, mc, rayleigh, out),
        Command::Verify(args) => verify(args, out),
        Command::Fixtures { out: dir } => write_fixtures(&dir),
    }
}

struct Output<'a>(Option<&'a Path>);

impl Output<'_> {
    fn text(&self, s: &str) -> Result<()> {
        match self.0 {
            Some(p) => {
                std::fs::write(p, s).with_context(|| format!("cannot write {}", p.display()))
            }
            None => {
                print!("{s}");
                Ok(())
            }
        }
    }

    fn json<T: Serialize>(&self, v: &T) -> Result<()> {
        let mut s = serde_json::to_string_pretty(v)?;
        s.push('\n');
        self.text(&s)
    }

    fn csv(&self, header: &[&str], rows: Vec<Vec<String>>) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header)?;
        for r in rows {
            w.write_record(&r)?;
        }
        self.text(&String::from_utf8(w.into_inner()?)?)
    }
}

/// Logs the reproduction line: model hash, seed and the full argument list.
fn log_run(model: &EnvironmentModel, seed: Option<u64>) {
    let args: Vec<String> = std::env::args().collect();
    let seed = seed.map_or_else(|| "-".to_string(), |s| s.to_string());
    eprintln!(
        "bpre: model sha256={} seed={seed} args={}",
        model.fingerprint(),
        args.join(" ")
    );
}

/// Parses, validates and logs a model; non-primitive chains are rejected.
fn load(path: &Path, seed: Option<u64>) -> Result<EnvironmentModel> {
    let model = ModelFile::read(path)?.to_model()?;
    let report = validate_model(&model)?;
    if !report.passed() {
        bail!(
            "model {} fails validation (primitive: {}, moments: {}); run `bpre validate` for details",
            path.display(),
            report.primitive_ok,
            report.moments_ok
        );
    }
    log_run(&model, seed);
    Ok(model)
}

fn validate(path: &Path, json: bool, out: Output) -> Result<bool> {
    let model = ModelFile::read(path)?.to_model()?;
    let report = validate_model(&model)?;
    log_run(&model, None);
    if json {
        out.json(&report)?;
    } else {
        let yes_no = |b: bool| if b { "ok" } else { "FAILED" };
        let lat = &report.lattice;
        let text = format!(
            "states:      {}\nstochastic:  {}\nprimitive:   {}{}\nmoments:     {}\nlattice:     {} (span estimate {}, {} cycles examined; advisory)\n",
            model.dim(),
            yes_no(report.stochastic_ok),
            yes_no(report.primitive_ok),
            report
                .primitive_exponent
                .map_or(String::new(), |k| format!(" (k0 = {k})")),
            yes_no(report.moments_ok),
            if lat.is_suspect_lattice { "suspect" } else { "non-lattice" },
            lat.span_estimate,
            lat.cycles_examined
        );
        out.text(&text)?;
    }
    Ok(report.passed())
}

fn kcurve(path: &Path, from: f64, to: f64, step: f64, out: Output) -> Result<bool> {
    ensure!(
        from.is_finite() && to.is_finite() && to >= from,
        "need finite --from ≤ --to"
    );
    ensure!(step > 0.0 && step.is_finite(), "--step must be positive");
    let count = ((to - from) / step + 1e-9).floor() as usize;
    ensure!(
        count <= 100_000,
        "λ grid of {} points is too large",
        count + 1
    );
    let model = load(path, None)?;
    let grid: Vec<f64> = (0..=count).map(|i| from + i as f64 * step).collect();
    let rows = k_curve(&model, &grid)?
        .into_iter()
        .map(|p| {
            [p.lambda, p.k, p.log_k, p.kp, p.kpp, p.gap]
                .iter()
                .map(f64::to_string)
                .collect()
        })
        .collect();
    out.csv(&["lambda", "k", "log_k", "kp", "kpp", "gap"], rows)?;
    Ok(true)
}

fn calibration_target(
    target: Target,
    margin: Option<f64>,
    lambda: Option<f64>,
) -> Result<CalibrationTarget> {
    let unused = |flag: &str, v: Option<f64>| -> Result<()> {
        ensure!(v.is_none(), "{flag} does not apply to this target");
        Ok(())
    };
    Ok(match target {
        Target::Critical => {
            unused("--margin", margin)?;
            unused("--lambda", lambda)?;
            CalibrationTarget::Critical
        }
        Target::Intermediate => {
            unused("--margin", margin)?;
            unused("--lambda", lambda)?;
            CalibrationTarget::Intermediate
        }
        Target::Strong => {
            unused("--lambda", lambda)?;
            CalibrationTarget::Strong {
                margin: margin.context("--target strong needs --margin")?,
            }
        }
        Target::Weak => {
            unused("--margin", margin)?;
            CalibrationTarget::Weak {
                lambda: lambda.context("--target weak needs --lambda")?,
            }
        }
        Target::WeakMidpoint => {
            unused("--margin", margin)?;
            unused("--lambda", lambda)?;
            CalibrationTarget::WeakMidpoint
        }
    })
}

fn calibrate_cmd(
    path: &Path,
    target: Target,
    margin: Option<f64>,
    lambda: Option<f64>,
    name: Option<String>,
    out: Output,
) -> Result<bool> {
    let target = calibration_target(target, margin, lambda)?;
    let base = load(path, None)?;
    let (model, shift) = calibrate(&base, target)?;
    eprintln!("bpre: shift c = {shift}");
    let mut file = ModelFile::from_model(&model, name);
    file.calibration = Some(Calibration {
        base: base.fingerprint(),
        target,
        shift,
    });
    out.text(&file.to_json())?;
    Ok(true)
}

fn table_rows(n: usize, tables: &[&SurvivalTable]) -> Vec<Vec<String>> {
    let d = tables[0].dim();
    let mut rows = Vec::with_capacity(d * d);
    for i in 0..d {
        for j in 0..d {
            let mut r = vec![n.to_string(), i.to_string(), j.to_string()];
            r.extend(tables.iter().map(|t| t.get(i, j).to_string()));
            rows.push(r);
        }
    }
    rows
}

fn oracle(path: &Path, n: usize, method: OracleMethod, cap: usize, out: Output) -> Result<bool> {
    ensure!(cap >= 1, "--cap must be at least 1");
    let model = load(path, None)?;
    match method {
        OracleMethod::Enum => {
            let t = enumerate_survival(&model, n)?;
            out.csv(&["n", "i", "j", "value"], table_rows(n, &[&t]))?;
        }
        OracleMethod::Dp => {
            let (lo, hi) = dp_survival_bounds(&model, n, cap)?;
            out.csv(
                &["n", "i", "j", "lower", "upper"],
                table_rows(n, &[&lo, &hi]),
            )?;
        }
    }
    Ok(true)
}

fn estimate_table(
    model: &EnvironmentModel,
    n: usize,
    estimator: Estimator,
    lambda: Option<f64>,
    mc: McArgs,
    cap: u64,
) -> Result<SurvivalTable<SurvivalEstimate>> {
    let src = RandomSource::new(mc.seed);
    if estimator != Estimator::Tilted {
        ensure!(
            lambda.is_none(),
            "--lambda only applies to --estimator tilted"
        );
    }
    Ok(match estimator {
        Estimator::Env => estimate_qn_mc(model, n, mc.samples, src)?,
        Estimator::Tilted => {
            let l = lambda.context("--estimator tilted needs --lambda")?;
            ensure!(l.is_finite(), "--lambda must be finite");
            estimate_qn_tilted(model, l, n, mc.samples, src)?
        }
        Estimator::Dual => estimate_dual_table(model, n, mc.samples, src)?,
        Estimator::Population => estimate_population(model, n, mc.samples, src, cap)?,
    })
}

fn estimate(
    path: &Path,
    n: usize,
    estimator: Estimator,
    lambda: Option<f64>,
    mc: McArgs,
    cap: u64,
    out: Output,
) -> Result<bool> {
    ensure!(mc.samples >= 2, "--samples must be at least 2");
    let model = load(path, Some(mc.seed))?;
    let t = estimate_table(&model, n, estimator, lambda, mc, cap)?;
    let d = t.dim();
    let mut rows = Vec::with_capacity(d * d);
    for i in 0..d {
        for j in 0..d {
            let e = t.get(i, j);
            rows.push(vec![
                n.to_string(),
                i.to_string(),
                j.to_string(),
                e.estimator.label(),
                e.probability().to_string(),
                e.probability_stderr().to_string(),
                e.mean.to_string(),
                e.stderr.to_string(),
                e.log_scale.to_string(),
                e.n_samples.to_string(),
            ]);
        }
    }
    out.csv(
        &[
            "n",
            "i",
            "j",
            "estimator",
            "probability",
            "stderr",
            "scaled_mean",
            "scaled_stderr",
            "log_scale",
            "samples",
        ],
        rows,
    )?;
    Ok(true)
}

#[allow(clippy::too_many_arguments)]
fn walk(
    path: &Path,
    n: usize,
    y: f64,
    start: usize,
    lambda: f64,
    mc: McArgs,
    rayleigh: Option<usize>,
    out: Output,
) -> Result<bool> {
    ensure!(mc.samples >= 2, "--samples must be at least 2");
    ensure!(
        y.is_finite() && lambda.is_finite(),
        "--y and --lambda must be finite"
    );
    let model = load(path, Some(mc.seed))?;
    ensure!(start < model.dim(), "--start {start} is not a state index");
    let chain = tilted_chain(&model, lambda)?;
    let src = RandomSource::new(mc.seed);
    let stats = exit_statistics(&chain.kernel, model.rho(), start, y, n, mc.samples, src)?;
    let sigma2 = asymptotic_variance(&chain.kernel, &model.rho_vector())?;
    let ks = match rayleigh {
        Some(accept) => Some(rayleigh_ks(
            &chain.kernel,
            model.rho(),
            sigma2.sqrt(),
            start,
            y,
            n,
            accept,
            src,
        )?),
        None => None,
    };
    let root_n = (n as f64).sqrt();
    out.json(&json!({
        "lambda": lambda,
        "sigma2": sigma2,
        "exit": stats,
        "scaled_survival": {
            "value": root_n * stats.survival.mean,
            "stderr": root_n * stats.survival.stderr,
        },
        "rayleigh": ks,
    }))?;
    Ok(true)
}

struct VerifyPlan {
    regime: Regime,
    grid: Vec<usize>,
    samples: u64,
    threshold: f64,
    side: FactorizationSide,
}

fn doubling(from: usize, to: usize) -> Vec<usize> {
    std::iter::successors(Some(from), |&n| (n < to).then_some(2 * n)).collect()
}

fn default_plan(regime: RegimeArg) -> VerifyPlan {
    match regime {
        RegimeArg::Critical => VerifyPlan {
            regime: Regime::Critical,
            grid: doubling(64, 2048),
            samples: 200_000,
            threshold: 0.05,
            side: FactorizationSide::RowsAreNu,
        },
        RegimeArg::Strong => VerifyPlan {
            regime: Regime::StronglySubcritical,
            grid: doubling(16, 128),
            samples: 100_000,
            threshold: 0.05,
            side: FactorizationSide::ColumnsAreV1,
        },
        RegimeArg::Intermediate => VerifyPlan {
            regime: Regime::IntermediatelySubcritical,
            grid: doubling(64, 1024),
            samples: 200_000,
            threshold: 0.10,
            side: FactorizationSide::ColumnsAreV1,
        },
        RegimeArg::Weak => VerifyPlan {
            regime: Regime::WeaklySubcritical,
            grid: doubling(64, 1024),
            samples: 200_000,
            threshold: 0.10,
            side: FactorizationSide::FullMatrix,
        },
    }
}

fn verify(args: VerifyArgs, out: Output) -> Result<bool> {
    let mut plan = default_plan(args.regime);
    if let Some(g) = args.grid {
        plan.grid = g;
    }
    if let Some(s) = args.samples {
        plan.samples = s;
    }
    if let Some(t) = args.threshold {
        plan.threshold = t;
    }
    ensure!(plan.samples >= 2, "--samples must be at least 2");
    ensure!(plan.threshold > 0.0, "--threshold must be positive");
    ensure!(args.sigmas >= 0.0, "--sigmas must be non-negative");
    ensure!(
        args.window >= 2 && args.window <= plan.grid.len(),
        "--window must lie in 2..={}",
        plan.grid.len()
    );
    ensure!(
        plan.grid.len() >= 4,
        "the generation grid needs at least 4 points"
    );
    ensure!(
        plan.grid.windows(2).all(|w| w[0] < w[1]),
        "the generation grid must be strictly increasing"
    );

    let model = load(&args.model, Some(args.seed))?;
    let report = classify(&model, REGIME_TOL)?;
    if report.regime != plan.regime {
        bail!(
            "model is {}, not {}; calibrate it first",
            report.regime,
            plan.regime
        );
    }
    let src = RandomSource::new(args.seed);
    let lambda = report.rate_lambda();
    let tables = plan
        .grid
        .iter()
        .map(|&n| {
            if lambda == 0.0 {
                estimate_qn_mc(&model, n, plan.samples, src)
            } else {
                estimate_qn_tilted(&model, lambda, n, plan.samples, src)
            }
        })
        .collect::<bpre_core::Result<Vec<_>>>()?;
    let seq = scaled_sequence(&tables, &report)?;
    let drift = convergence_diagnostic(&seq, args.window, plan.threshold, args.sigmas);
    let reference = match plan.side {
        FactorizationSide::RowsAreNu => Some(stationary(model.transition())?),
        FactorizationSide::ColumnsAreV1 => {
            Some(perron(&transfer_matrix(&model, 1.0), PERRON_TOL, PERRON_MAX_ITER)?.v)
        }
        _ => None,
    };
    let fac = factorization_check(&seq.last_matrix(), plan.side, reference.as_ref())?;
    let pass = drift.converged && fac.residual <= plan.threshold;
    out.json(&json!({
        "regime": report,
        "estimator_lambda": lambda,
        "samples": plan.samples,
        "seed": args.seed,
        "grid": seq.grid,
        "sequence": seq,
        "converged": drift.converged,
        "drift": drift,
        "factorization": fac,
        "pass": pass,
    }))?;
    Ok(pass)
}

#[derive(Serialize)]
struct FixtureReport {
    name: String,
    fingerprint: String,
    shift: f64,
    regime: RegimeReport,
    validation: ValidationReport,
    k0: f64,
    nu0: Vec<f64>,
    k1: f64,
    v1: Vec<f64>,
    kcurve: Vec<KCurvePoint>,
}

fn write_fixtures(dir: &Path) -> Result<bool> {
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let base = fixtures::base_model()?;
    log_run(&base, None);
    std::fs::write(
        dir.join("base.json"),
        ModelFile::from_model(&base, Some("base".into())).to_json(),
    )?;
    for (tag, target) in fixtures::targets() {
        let name = format!("model_{tag}");
        let (model, shift) = calibrate(&base, target)?;
        let mut file = ModelFile::from_model(&model, Some(name.clone()));
        file.calibration = Some(Calibration {
            base: base.fingerprint(),
            target,
            shift,
        });
        std::fs::write(dir.join(format!("{name}.json")), file.to_json())?;
        let s0 = perron(&transfer_matrix(&model, 0.0), PERRON_TOL, PERRON_MAX_ITER)?;
        let s1 = perron(&transfer_matrix(&model, 1.0), PERRON_TOL, PERRON_MAX_ITER)?;
        let report = FixtureReport {
            name: name.clone(),
            fingerprint: model.fingerprint(),
            shift,
            regime: classify(&model, REGIME_TOL)?,
            validation: validate_model(&model)?,
            k0: s0.k,
            nu0: s0.nu.iter().copied().collect(),
            k1: s1.k,
            v1: s1.v.iter().copied().collect(),
            kcurve: k_curve(&model, &default_lambda_grid())?,
        };
        let mut text = serde_json::to_string_pretty(&report)?;
        text.push('\n');
        std::fs::write(dir.join(format!("{name}.report.json")), text)?;
    }
    eprintln!("bpre: fixtures written to {}", dir.display());
    Ok(true)
}
