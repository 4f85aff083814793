//! Acceptance suite: one `[PASS]`/`[FAIL]` line per criterion.
//!
//! Set `BPRE_ACCEPTANCE_ONLY=1,4,7` to run a subset while developing;
//! `cargo test` always runs everything.

use std::process::ExitCode;
use std::time::Instant;

use bpre_core::fixtures;
use bpre_core::spectral::{PERRON_MAX_ITER, PERRON_TOL, REGIME_TOL};
use bpre_core::*;
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

const SEED: u64 = 1;

type Table = SurvivalTable<SurvivalEstimate>;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

struct Fixtures {
    a: EnvironmentModel,
    b: EnvironmentModel,
    c: EnvironmentModel,
    d: EnvironmentModel,
}

impl Fixtures {
    fn all(&self) -> [(&'static str, &EnvironmentModel); 4] {
        [
            ("A", &self.a),
            ("B", &self.b),
            ("C", &self.c),
            ("D", &self.d),
        ]
    }
}

/// Seeded results kept for the reproducibility criterion.
#[derive(Default)]
struct Recorded {
    c7: Option<[Table; 3]>,
    c12: Option<(ExitStatistics, RayleighTest)>,
}

fn max_abs(xs: impl IntoIterator<Item = f64>) -> f64 {
    xs.into_iter().fold(0.0, f64::max)
}

fn log_k(model: &EnvironmentModel, lambda: f64) -> f64 {
    transfer_perron(model, lambda).k.ln()
}

fn transfer_perron(model: &EnvironmentModel, lambda: f64) -> SpectralDecomposition {
    perron(&transfer_matrix(model, lambda), PERRON_TOL, PERRON_MAX_ITER).expect("perron")
}

fn grid(from: usize, to: usize) -> Vec<usize> {
    std::iter::successors(Some(from), |&n| (n < to).then_some(2 * n)).collect()
}

fn c1_spectral_anchors(fx: &Fixtures) -> Outcome {
    let mut worst = (0.0_f64, 0.0_f64, 0.0_f64);
    for (_, m) in fx.all() {
        let sd = transfer_perron(m, 0.0);
        let pi = stationary(m.transition()).expect("stationary");
        worst.0 = worst.0.max((sd.k - 1.0).abs());
        worst.1 = worst.1.max(max_abs(sd.v.iter().map(|v| (v - 1.0).abs())));
        worst.2 = worst.2.max(max_abs(
            sd.nu.iter().zip(pi.iter()).map(|(a, b)| (a - b).abs()),
        ));
    }
    outcome(
        worst.0 <= 1e-12 && worst.1 <= 1e-10 && worst.2 <= 1e-10,
        format!(
            "max |k(0)-1| = {:.2e} (≤ 1e-12), max ‖v0-1‖∞ = {:.2e}, max ‖ν0-π‖∞ = {:.2e} (≤ 1e-10)",
            worst.0, worst.1, worst.2
        ),
    )
}

fn c2_k_prime(fx: &Fixtures) -> Outcome {
    let h = 1e-5;
    let mut worst = 0.0_f64;
    for (_, m) in fx.all() {
        for lambda in default_lambda_grid() {
            let kp = k_derivatives(m, lambda).expect("derivatives").d1;
            let fd = (log_k(m, lambda + h) - log_k(m, lambda - h)) / (2.0 * h);
            worst = worst.max((kp - fd).abs());
        }
    }
    outcome(
        worst <= 1e-6,
        format!("max |K' - central difference| = {worst:.2e} over 13 tilts × 4 fixtures (≤ 1e-6)"),
    )
}

fn c3_k_second(fx: &Fixtures) -> Outcome {
    let h = 1e-4;
    let (mut series_gap, mut fd_gap, mut min_kpp) = (0.0_f64, 0.0_f64, f64::INFINITY);
    for (_, m) in fx.all() {
        let rho = m.rho_vector();
        for lambda in default_lambda_grid() {
            let chain = tilted_chain(m, lambda).expect("tilted chain");
            let closed = asymptotic_variance(&chain.kernel, &rho).expect("closed form");
            let series = asymptotic_variance_series(&chain.kernel, &rho).expect("series");
            let fd =
                (log_k(m, lambda + h) - 2.0 * log_k(m, lambda) + log_k(m, lambda - h)) / (h * h);
            series_gap = series_gap.max((closed - series).abs());
            fd_gap = fd_gap.max((closed - fd).abs());
            min_kpp = min_kpp.min(closed);
        }
    }
    outcome(
        series_gap <= 1e-10 && fd_gap <= 1e-5 && min_kpp > 0.0,
        format!(
            "closed vs series {series_gap:.2e} (≤ 1e-10), vs second difference {fd_gap:.2e} (≤ 1e-5), min K'' = {min_kpp:.4}"
        ),
    )
}

fn c4_duality(fx: &Fixtures) -> Outcome {
    let model = &fx.a;
    let kernel = model.transition();
    let d = model.dim();
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(SEED);
    // bounded test functions cos(Σ_k c_k(x_k)) with random phases
    let phases: Vec<Vec<Vec<f64>>> = (0..5)
        .map(|_| {
            (0..5)
                .map(|_| {
                    (0..d)
                        .map(|_| rng.random_range(0.0..std::f64::consts::TAU))
                        .collect()
                })
                .collect()
        })
        .collect();
    let mut worst = 0.0_f64;
    let mut checks = 0;
    for n in 0..=5 {
        let q = |seq: &[usize]| {
            q_along_path(model, &EnvPath::new(model, 0, seq.to_vec()), 0.0)
                .expect("q along path")
                .direct
        };
        let (lhs, rhs) = duality_sides(kernel, n, q).expect("duality");
        worst = worst.max((&lhs - &rhs).abs().max());
        checks += 1;
        for c in &phases {
            let g = |seq: &[usize]| {
                seq.iter()
                    .enumerate()
                    .map(|(k, &x)| c[k][x])
                    .sum::<f64>()
                    .cos()
            };
            let (lhs, rhs) = duality_sides(kernel, n, g).expect("duality");
            worst = worst.max((&lhs - &rhs).abs().max());
            checks += 1;
        }
    }
    outcome(
        worst <= 1e-12,
        format!("max |lhs - rhs| = {worst:.2e} over {checks} (n, g) pairs, d = 3, n ≤ 5 (≤ 1e-12)"),
    )
}

fn c5_recursion(fx: &Fixtures) -> Outcome {
    // the fixtures are geometric; a Poisson variant exercises non-constant g
    let a = &fx.a;
    let poisson_laws = a
        .laws()
        .iter()
        .map(|l| OffspringLaw::poisson_truncated(l.mean(), 40).expect("poisson law"))
        .collect();
    let poisson = EnvironmentModel::new(a.states().to_vec(), a.transition().clone(), poisson_laws)
        .expect("poisson model");
    let mut models: Vec<&EnvironmentModel> = fx.all().iter().map(|(_, m)| *m).collect();
    models.push(&poisson);
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(SEED);
    let (mut worst, mut eta_ok, mut eta_max) = (0.0_f64, true, 0.0_f64);
    let paths = 10_000;
    for r in 0..paths {
        let m = models[r % models.len()];
        let start = rng.random_range(0..m.dim());
        let len = rng.random_range(1..=50);
        let path = sample_environment(m.transition(), m.rho(), start, len, &mut rng);
        let s = if r % 2 == 0 {
            0.0
        } else {
            rng.random_range(0.0..1.0)
        };
        match q_along_path(m, &path, s) {
            Ok(q) => {
                worst = worst.max((q.direct - q.recursive).abs() / q.direct);
                eta_ok &= q.max_eta >= 0.0 && q.max_eta <= m.eta_bound();
                eta_max = eta_max.max(q.max_eta / m.eta_bound());
            }
            Err(_) => eta_ok = false,
        }
    }
    outcome(
        worst <= 1e-10 && eta_ok,
        format!(
            "{paths} paths: max relative gap {worst:.2e} (≤ 1e-10), η within [0, bound]: {eta_ok} (max η/bound = {eta_max:.3})"
        ),
    )
}

/// Both oracles are exact up to rounding; containment allows this much
/// relative floating-point disagreement (far below the width tolerance).
const ROUNDING_SLACK: f64 = 1e-14;

fn c6_oracles(fx: &Fixtures) -> Outcome {
    let (mut inside, mut width, mut excess) = (true, 0.0_f64, 0.0_f64);
    for n in 0..=10 {
        let exact = enumerate_survival(&fx.b, n).expect("enumeration");
        let (lo, hi) = dp_survival_bounds(&fx.b, n, 200).expect("dp bounds");
        for i in 0..3 {
            for j in 0..3 {
                let (e, l, h) = (exact.get(i, j), lo.get(i, j), hi.get(i, j));
                excess = excess.max((l - e) / e).max((e - h) / e);
                inside &= l - ROUNDING_SLACK * e <= e && e <= h + ROUNDING_SLACK * e;
                width = width.max(h - l);
            }
        }
    }
    outcome(
        inside && width <= 1e-8,
        format!(
            "MODEL B, n ≤ 10, M = 200: enumeration inside all intervals: {inside} (max relative excess {:.1e}, rounding allowance 1e-14), max width {width:.2e} (≤ 1e-8)",
            excess.max(0.0)
        ),
    )
}

fn worst_z(est: &Table, exact: &SurvivalTable) -> f64 {
    let mut worst = 0.0_f64;
    for i in 0..est.dim() {
        for j in 0..est.dim() {
            let e = est.get(i, j);
            worst = worst.max((e.probability() - exact.get(i, j)).abs() / e.probability_stderr());
        }
    }
    worst
}

fn c7_estimators(fx: &Fixtures, rec: &mut Recorded) -> Outcome {
    let n_samples = 100_000;
    let src = RandomSource::new(SEED);
    let b = &fx.b;
    let exact = enumerate_survival(b, 10).expect("enumeration");
    let env = estimate_qn_mc(b, 10, n_samples, src).expect("env");
    let tilted = estimate_qn_tilted(b, 1.0, 10, n_samples, src).expect("tilted");
    let dual = estimate_dual_table(b, 10, n_samples, src).expect("dual");
    let z = [
        worst_z(&env, &exact),
        worst_z(&tilted, &exact),
        worst_z(&dual, &exact),
    ];
    let far = estimate_qn_tilted(b, 1.0, 60, n_samples, src).expect("tilted n=60");
    let rel = max_abs(far.values.iter().flatten().map(|e| e.relative_stderr()));
    let crude = estimate_population(b, 60, n_samples, src, simulate::DEFAULT_POPULATION_CAP)
        .expect("population");
    let crude_max = max_abs(crude.values.iter().flatten().map(|e| e.probability()));
    rec.c7 = Some([env, tilted, dual]);
    outcome(
        z.iter().all(|&z| z <= 3.0) && rel < 0.05 && crude_max == 0.0,
        format!(
            "MODEL B n = 10: max |z| env {:.2}, tilted {:.2}, dual {:.2} (≤ 3); n = 60: tilted rel. stderr {:.2}% (< 5%), population max {crude_max:e} (= 0)",
            z[0], z[1], z[2], 100.0 * rel
        ),
    )
}

fn scaled_check(seq: &ScaledSequence, threshold: f64) -> DriftReport {
    convergence_diagnostic(seq, 3, threshold, 3.0)
}

fn drift_text(d: &DriftReport) -> String {
    format!(
        "drift {:.2}%, beyond 3σ {:.2}% (≤ {:.0}%), max rel. stderr {:.2}%",
        100.0 * d.drift,
        100.0 * d.excess_drift,
        100.0 * d.threshold,
        100.0 * d.rel_stderr
    )
}

fn c8_critical(fx: &Fixtures) -> Outcome {
    let m = &fx.a;
    let report = classify(m, REGIME_TOL).expect("classify");
    let src = RandomSource::new(SEED);
    let tables: Vec<Table> = grid(64, 4096)
        .into_iter()
        .map(|n| estimate_qn_mc(m, n, 1_000_000, src).expect("env"))
        .collect();
    let seq = scaled_sequence(&tables, &report).expect("scaled");
    let drift = scaled_check(&seq, 0.05);
    let nu = stationary(m.transition()).expect("stationary");
    let fac = factorization_check(&seq.last_matrix(), FactorizationSide::RowsAreNu, Some(&nu))
        .expect("factorization");
    outcome(
        report.regime == Regime::Critical && drift.converged && fac.residual <= 0.05,
        format!(
            "MODEL A √n·P̂, n = 64..4096: {}; rows-are-ν residual {:.2}% (≤ 5%)",
            drift_text(&drift),
            100.0 * fac.residual
        ),
    )
}

fn c9_strong(fx: &Fixtures) -> Outcome {
    let m = &fx.b;
    let report = classify(m, REGIME_TOL).expect("classify");
    let src = RandomSource::new(SEED);
    let tables: Vec<Table> = grid(16, 128)
        .into_iter()
        .map(|n| estimate_qn_tilted(m, 1.0, n, 100_000, src).expect("tilted"))
        .collect();
    let seq = scaled_sequence(&tables, &report).expect("scaled");
    let drift = scaled_check(&seq, 0.05);
    let v1 = transfer_perron(m, 1.0).v;
    let fac = factorization_check(
        &seq.last_matrix(),
        FactorizationSide::ColumnsAreV1,
        Some(&v1),
    )
    .expect("factorization");
    outcome(
        report.regime == Regime::StronglySubcritical && drift.converged && fac.residual <= 0.05,
        format!(
            "MODEL B k(1)^-n·P̂, n = 16..128: {}; columns-are-v1 residual {:.2}% (≤ 5%)",
            drift_text(&drift),
            100.0 * fac.residual
        ),
    )
}

fn c10_intermediate(fx: &Fixtures) -> Outcome {
    let m = &fx.c;
    let report = classify(m, REGIME_TOL).expect("classify");
    let src = RandomSource::new(SEED);
    let tables: Vec<Table> = grid(64, 2048)
        .into_iter()
        .map(|n| estimate_qn_tilted(m, 1.0, n, 1_000_000, src).expect("tilted"))
        .collect();
    let seq = scaled_sequence(&tables, &report).expect("scaled");
    let drift = scaled_check(&seq, 0.10);
    outcome(
        report.regime == Regime::IntermediatelySubcritical && drift.converged,
        format!("MODEL C √n·k(1)^-n·P̂, n = 64..2048: {}", drift_text(&drift)),
    )
}

fn c11_weak(fx: &Fixtures) -> Outcome {
    let m = &fx.d;
    let report = classify(m, REGIME_TOL).expect("classify");
    let (Some(ls), Some(kp)) = (report.lambda_star, report.kp_star) else {
        return outcome(false, format!("MODEL D classified as {}", report.regime));
    };
    let src = RandomSource::new(SEED);
    let tables: Vec<Table> = grid(64, 2048)
        .into_iter()
        .map(|n| estimate_qn_tilted(m, ls, n, 1_000_000, src).expect("tilted"))
        .collect();
    let seq = scaled_sequence(&tables, &report).expect("scaled");
    let drift = scaled_check(&seq, 0.10);
    // negative control: tilt and rate both at λ* + 0.1
    let wrong = ls + 0.1;
    let control_tables: Vec<Table> = grid(64, 2048)
        .into_iter()
        .map(|n| estimate_qn_tilted(m, wrong, n, 100_000, src).expect("tilted"))
        .collect();
    let rate = RateSpec {
        log_k: log_k(m, wrong),
        power: 1.5,
    };
    let control_seq = scaled_sequence_with_rate(&control_tables, rate).expect("scaled");
    let control = scaled_check(&control_seq, 0.10);
    let control_fails = control.excess_drift > control.threshold;
    outcome(
        kp.abs() <= 1e-10 && drift.converged && control_fails,
        format!(
            "MODEL D λ* = {ls:.6}, |K'(λ*)| = {:.1e} (≤ 1e-10); n^1.5·k(λ*)^-n·P̂, n = 64..2048: {}; control at λ*+0.1: beyond-3σ drift {:.1}% (must exceed 10%)",
            kp.abs(),
            drift_text(&drift),
            100.0 * control.excess_drift
        ),
    )
}

fn c12_walk(fx: &Fixtures, rec: &mut Recorded) -> Outcome {
    let m = &fx.a;
    let (p, rho) = (m.transition(), m.rho());
    let src = RandomSource::new(SEED);
    let (y, start, n_samples) = (2.0, 0, 4_000_000);
    let short = exit_statistics(p, rho, start, y, 512, n_samples, src).expect("exit n=512");
    let long = exit_statistics(p, rho, start, y, 2048, n_samples, src).expect("exit n=2048");
    let scaled = |s: &ExitStatistics| {
        let r = (s.n as f64).sqrt();
        (r * s.survival.mean, r * s.survival.stderr)
    };
    let ((a0, s0), (a1, s1)) = (scaled(&short), scaled(&long));
    let gap = (a0 - a1).abs();
    let allowed = 0.03 * a1 + 3.0 * s0.hypot(s1);
    let sigma = asymptotic_variance(p, &m.rho_vector())
        .expect("variance")
        .sqrt();
    let ks = rayleigh_ks(p, rho, sigma, start, y, 500, 10_000, src).expect("rayleigh");
    let pass = gap <= allowed && ks.ks <= 0.05;
    let detail = format!(
        "MODEL A, y = 2: √n·P̂(τ>n) {a0:.4} (n = 512) vs {a1:.4} (n = 2048), gap {gap:.4} ≤ 3% + 3σ = {allowed:.4}; Rayleigh KS {:.4} (≤ 0.05, acceptance rate {:.3})",
        ks.ks, ks.acceptance_rate
    );
    rec.c12 = Some((long, ks));
    outcome(pass, detail)
}

fn c13_reproducible(fx: &Fixtures, rec: &Recorded) -> Outcome {
    let src = RandomSource::new(SEED);
    let b = &fx.b;
    let mut same = true;
    let mut checked = Vec::new();
    if let Some([env, tilted, dual]) = &rec.c7 {
        same &= *env == estimate_qn_mc(b, 10, 100_000, src).expect("env");
        same &= *tilted == estimate_qn_tilted(b, 1.0, 10, 100_000, src).expect("tilted");
        same &= *dual == estimate_dual_table(b, 10, 100_000, src).expect("dual");
        checked.push("C7 estimators");
    }
    if let Some((exit, ks)) = &rec.c12 {
        let (p, rho) = (fx.a.transition(), fx.a.rho());
        same &= *exit == exit_statistics(p, rho, 0, 2.0, 2048, 4_000_000, src).expect("exit");
        let sigma = asymptotic_variance(p, &fx.a.rho_vector())
            .expect("variance")
            .sqrt();
        same &= *ks == rayleigh_ks(p, rho, sigma, 0, 2.0, 500, 10_000, src).expect("rayleigh");
        checked.push("C12 exit and Rayleigh");
    }
    if checked.is_empty() {
        // standalone run: repeat a short seeded estimate
        let first = estimate_qn_tilted(b, 1.0, 20, 10_000, src).expect("tilted");
        same &= first == estimate_qn_tilted(b, 1.0, 20, 10_000, src).expect("tilted");
        checked.push("tilted n = 20");
    }
    outcome(
        same,
        format!(
            "bit-identical reruns with seed {SEED}: {} ({same})",
            checked.join(", ")
        ),
    )
}

fn main() -> ExitCode {
    let only: Option<Vec<usize>> = std::env::var("BPRE_ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let wanted = |c: usize| only.as_ref().map_or(true, |o| o.contains(&c));
    let fx = Fixtures {
        a: fixtures::model_a().expect("model A"),
        b: fixtures::model_b().expect("model B"),
        c: fixtures::model_c().expect("model C"),
        d: fixtures::model_d().expect("model D"),
    };
    let mut rec = Recorded::default();
    let names = [
        "spectral anchors",
        "K' identity",
        "K'' consistency",
        "duality",
        "survival recursion",
        "oracle cross-check",
        "estimators",
        "critical limit",
        "strongly subcritical limit",
        "intermediately subcritical limit",
        "weakly subcritical limit",
        "conditioned walk",
        "reproducibility",
    ];
    let mut failed = 0;
    let mut ran = 0;
    for (idx, name) in names.iter().enumerate() {
        let c = idx + 1;
        if !wanted(c) {
            continue;
        }
        let t = Instant::now();
        let out = match c {
            1 => c1_spectral_anchors(&fx),
            2 => c2_k_prime(&fx),
            3 => c3_k_second(&fx),
            4 => c4_duality(&fx),
            5 => c5_recursion(&fx),
            6 => c6_oracles(&fx),
            7 => c7_estimators(&fx, &mut rec),
            8 => c8_critical(&fx),
            9 => c9_strong(&fx),
            10 => c10_intermediate(&fx),
            11 => c11_weak(&fx),
            12 => c12_walk(&fx, &mut rec),
            _ => c13_reproducible(&fx, &rec),
        };
        ran += 1;
        if !out.pass {
            failed += 1;
        }
        println!(
            "[{}] C{c} {name}: {} ({:.1}s)",
            if out.pass { "PASS" } else { "FAIL" },
            out.detail,
            t.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {}/{ran} criteria passed", ran - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
