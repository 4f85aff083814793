//! End-to-end use of the public API on the bundled fixtures.

use bpre_core::spectral::REGIME_TOL;
use bpre_core::*;

#[test]
fn calibration_loop_closes() {
    let base = fixtures::base_model().unwrap();
    let (a, _) = calibrate(&base, CalibrationTarget::Critical).unwrap();
    let pi = stationary(a.transition()).unwrap();
    assert!(pi.dot(&a.rho_vector()).abs() <= 1e-10);
    assert_eq!(classify(&a, REGIME_TOL).unwrap().regime, Regime::Critical);
    let (w, _) = calibrate(&base, CalibrationTarget::Weak { lambda: 0.4 }).unwrap();
    let r = classify(&w, REGIME_TOL).unwrap();
    assert_eq!(r.regime, Regime::WeaklySubcritical);
    assert!((r.lambda_star.unwrap() - 0.4).abs() < 1e-9);
}

#[test]
fn estimates_do_not_depend_on_thread_count() {
    let b = fixtures::model_b().unwrap();
    let src = RandomSource::new(7);
    let run = || {
        (
            estimate_qn_tilted(&b, 1.0, 12, 20_000, src).unwrap(),
            estimate_dual_table(&b, 12, 20_000, src).unwrap(),
        )
    };
    let default = run();
    for threads in [1, 3] {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        assert_eq!(pool.install(run), default);
    }
}

#[test]
fn strong_limit_sequence_and_factorization() {
    let b = fixtures::model_b().unwrap();
    let report = classify(&b, REGIME_TOL).unwrap();
    let src = RandomSource::new(3);
    let tables: Vec<_> = [8, 16, 24, 32]
        .iter()
        .map(|&n| estimate_qn_tilted(&b, 1.0, n, 20_000, src).unwrap())
        .collect();
    let seq = scaled_sequence(&tables, &report).unwrap();
    assert_eq!(seq.grid, vec![8, 16, 24, 32]);
    let v1 = tilted_chain(&b, 1.0).unwrap().spectral.v;
    let fac = factorization_check(
        &seq.last_matrix(),
        FactorizationSide::ColumnsAreV1,
        Some(&v1),
    )
    .unwrap();
    assert!(fac.residual < 0.05, "{}", fac.residual);
}

#[test]
fn dual_and_forward_estimators_agree_at_small_n() {
    let d = fixtures::model_d().unwrap();
    let exact = enumerate_survival(&d, 6).unwrap();
    let src = RandomSource::new(11);
    let dual = estimate_dual_table(&d, 6, 50_000, src).unwrap();
    let env = estimate_qn_mc(&d, 6, 50_000, src).unwrap();
    for i in 0..3 {
        for j in 0..3 {
            for est in [dual.get(i, j), env.get(i, j)] {
                let z = (est.probability() - exact.get(i, j)) / est.probability_stderr();
                assert!(z.abs() < 4.0, "({i},{j}) z = {z}");
            }
        }
    }
}
