//! Rate scaling of survival estimates and diagnostics of the limit.
//!
//! Each regime has a rate `r_n = k^n n^{-p}`: critical `(1, 1/2)`,
//! strongly subcritical `(k(1), 0)`, intermediately subcritical
//! `(k(1), 1/2)`, weakly subcritical `(k(λ*), 3/2)`. The scaled values
//! `a_n(i,j) = P̂_i(Z_n > 0, X_n = j) / r_n` should settle to a positive
//! limit matrix whose shape depends on the regime.

use serde::{Deserialize, Serialize};

use crate::linalg::{Matrix, Vector};
use crate::pathfn::SurvivalTable;
use crate::simulate::SurvivalEstimate;
use crate::spectral::{Regime, RegimeReport};
use crate::{Error, Result};

const MIN_GRID: usize = 4;
/// Largest `|K'(λ*)|` accepted before scaling by `k(λ*)ⁿ`.
pub const WEAK_RATE_TOL: f64 = 1e-10;
const RANK1_ITERS: usize = 500;

/// `r_n = exp(n log_k) n^{-power}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateSpec {
    pub log_k: f64,
    pub power: f64,
}

impl RateSpec {
    pub fn for_report(report: &RegimeReport) -> Result<Self> {
        let power = match report.regime {
            Regime::Critical => 0.5,
            Regime::StronglySubcritical => 0.0,
            Regime::IntermediatelySubcritical => 0.5,
            Regime::WeaklySubcritical => 1.5,
            Regime::Supercritical => {
                return Err(Error::Config(
                    "no survival rate is defined for the supercritical regime".into(),
                ))
            }
        };
        Ok(Self {
            log_k: report.k_rate.ln(),
            power,
        })
    }

    pub fn log_rate(&self, n: usize) -> f64 {
        n as f64 * self.log_k - self.power * (n as f64).ln()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaledValue {
    pub value: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaledSequence {
    pub grid: Vec<usize>,
    /// `a[g][i][j]` at generation `grid[g]`.
    pub a: Vec<Vec<Vec<ScaledValue>>>,
    pub regime: Option<Regime>,
    pub rate: RateSpec,
}

impl ScaledSequence {
    pub fn dim(&self) -> usize {
        self.a.first().map_or(0, Vec::len)
    }

    /// Limit estimate: the values at the last grid point.
    pub fn last_matrix(&self) -> Matrix {
        let last = self.a.last().expect("non-empty grid");
        let d = last.len();
        Matrix::from_fn(d, d, |i, j| last[i][j].value)
    }
}

/// Scales estimates by the rate of `report`'s regime.
///
/// For the weakly subcritical regime the report's `|K'(λ*)|` must be at
/// most 1e-10.
pub fn scaled_sequence(
    estimates: &[SurvivalTable<SurvivalEstimate>],
    report: &RegimeReport,
) -> Result<ScaledSequence> {
    if report.regime == Regime::WeaklySubcritical {
        match report.kp_star {
            Some(kp) if kp.abs() <= WEAK_RATE_TOL => {}
            other => {
                return Err(Error::Config(format!(
                    "weak regime needs |K'(λ*)| ≤ {WEAK_RATE_TOL:e}, report has {other:?}"
                )))
            }
        }
    }
    let rate = RateSpec::for_report(report)?;
    let mut seq = scaled_sequence_with_rate(estimates, rate)?;
    seq.regime = Some(report.regime);
    Ok(seq)
}

/// Scales estimates by an explicit rate.
pub fn scaled_sequence_with_rate(
    estimates: &[SurvivalTable<SurvivalEstimate>],
    rate: RateSpec,
) -> Result<ScaledSequence> {
    if estimates.len() < MIN_GRID {
        return Err(Error::Config(format!(
            "a scaled sequence needs at least {MIN_GRID} grid points, got {}",
            estimates.len()
        )));
    }
    if estimates.windows(2).any(|w| w[1].n <= w[0].n) {
        return Err(Error::Config(
            "generation grid must be strictly increasing".into(),
        ));
    }
    let d = estimates[0].dim();
    if estimates.iter().any(|t| t.dim() != d) {
        return Err(Error::Config(
            "estimate tables have different dimensions".into(),
        ));
    }
    let a = estimates
        .iter()
        .map(|table| {
            let shift = -rate.log_rate(table.n);
            table
                .values
                .iter()
                .map(|row| {
                    row.iter()
                        .map(|e| {
                            let f = (e.log_scale + shift).exp();
                            ScaledValue {
                                value: e.mean * f,
                                stderr: e.stderr * f,
                            }
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    Ok(ScaledSequence {
        grid: estimates.iter().map(|t| t.n).collect(),
        a,
        regime: None,
        rate,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    /// `max |a_g - a_G| / (|a_G| + se_G)` over the window and all cells.
    pub drift: f64,
    /// Same, after discounting `sigmas` combined standard errors.
    pub excess_drift: f64,
    /// `max se_G / |a_G|` over cells.
    pub rel_stderr: f64,
    pub window: usize,
    pub threshold: f64,
    pub sigmas: f64,
    pub converged: bool,
}

/// Drift of the last `window` grid points against the final one.
///
/// `converged` requires `excess_drift ≤ threshold` and
/// `rel_stderr ≤ threshold`; with `sigmas = 0` the excess drift equals the
/// plain drift.
pub fn convergence_diagnostic(
    seq: &ScaledSequence,
    window: usize,
    threshold: f64,
    sigmas: f64,
) -> DriftReport {
    let g_count = seq.grid.len();
    let window = window.clamp(1, g_count);
    let last = &seq.a[g_count - 1];
    let d = last.len();
    let mut drift = 0.0_f64;
    let mut excess = 0.0_f64;
    let mut rel = 0.0_f64;
    for i in 0..d {
        for j in 0..d {
            let fin = last[i][j];
            let denom = fin.value.abs() + fin.stderr;
            rel = rel.max(fin.stderr / fin.value.abs());
            for g in g_count - window..g_count {
                let cur = seq.a[g][i][j];
                let diff = (cur.value - fin.value).abs();
                drift = drift.max(diff / denom);
                let noise = if g == g_count - 1 {
                    0.0
                } else {
                    sigmas * cur.stderr.hypot(fin.stderr)
                };
                excess = excess.max((diff - noise).max(0.0) / denom);
            }
        }
    }
    let rel = if rel.is_nan() { f64::INFINITY } else { rel };
    DriftReport {
        drift,
        excess_drift: excess,
        rel_stderr: rel,
        window,
        threshold,
        sigmas,
        converged: excess <= threshold && rel <= threshold,
    }
}

/// Prescribed shape of the limit matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FactorizationSide {
    /// `L(i,j) = u(i) ν(j)`.
    RowsAreNu,
    /// `L(i,j) = v_1(i) u(j)`.
    ColumnsAreV1,
    /// Best `a bᵀ`.
    FreeRank1,
    /// No structure imposed.
    FullMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Extracted {
    Vector(Vec<f64>),
    Pair { left: Vec<f64>, right: Vec<f64> },
    Matrix(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorizationVerdict {
    pub side: FactorizationSide,
    /// `‖L - L̂‖_F / ‖L‖_F` for the fitted form `L̂`.
    pub residual: f64,
    pub extracted_u: Extracted,
}

/// Fits the prescribed form to the limit grid `limit`.
///
/// `reference` is `ν` for [`FactorizationSide::RowsAreNu`] and `v_1` for
/// [`FactorizationSide::ColumnsAreV1`]; it is ignored otherwise.
pub fn factorization_check(
    limit: &Matrix,
    side: FactorizationSide,
    reference: Option<&Vector>,
) -> Result<FactorizationVerdict> {
    let (rows, cols) = limit.shape();
    if limit.iter().any(|x| !(*x > 0.0)) {
        return Err(Error::Domain(
            "limit grid must be entrywise positive".into(),
        ));
    }
    let norm = limit.norm();
    let need_ref = |len: usize| -> Result<&Vector> {
        let r =
            reference.ok_or_else(|| Error::Config(format!("{side:?} needs a reference vector")))?;
        if r.len() != len {
            return Err(Error::Dimension(format!(
                "reference of length {} for a grid side of {len}",
                r.len()
            )));
        }
        Ok(r)
    };
    let (fit, extracted) = match side {
        FactorizationSide::RowsAreNu => {
            let nu = need_ref(cols)?;
            let u: Vec<f64> = (0..rows)
                .map(|i| (0..cols).map(|j| limit[(i, j)] / nu[j]).sum::<f64>() / cols as f64)
                .collect();
            let fit = Matrix::from_fn(rows, cols, |i, j| u[i] * nu[j]);
            (fit, Extracted::Vector(u))
        }
        FactorizationSide::ColumnsAreV1 => {
            let v = need_ref(rows)?;
            let u: Vec<f64> = (0..cols)
                .map(|j| (0..rows).map(|i| limit[(i, j)] / v[i]).sum::<f64>() / rows as f64)
                .collect();
            let fit = Matrix::from_fn(rows, cols, |i, j| v[i] * u[j]);
            (fit, Extracted::Vector(u))
        }
        FactorizationSide::FreeRank1 => {
            let (a, b) = best_rank_one(limit);
            let fit = &a * b.transpose();
            (
                fit,
                Extracted::Pair {
                    left: a.iter().copied().collect(),
                    right: b.iter().copied().collect(),
                },
            )
        }
        FactorizationSide::FullMatrix => (
            limit.clone(),
            Extracted::Matrix(crate::linalg::matrix_to_rows(limit)),
        ),
    };
    Ok(FactorizationVerdict {
        side,
        residual: (limit - fit).norm() / norm,
        extracted_u: extracted,
    })
}

/// Alternating least-squares scaling `a ← L b / |b|²`, `b ← Lᵀ a / |a|²`.
fn best_rank_one(l: &Matrix) -> (Vector, Vector) {
    let mut b = Vector::from_fn(l.ncols(), |j, _| l.column(j).sum());
    let mut a = Vector::zeros(l.nrows());
    for _ in 0..RANK1_ITERS {
        a = l * &b / b.norm_squared();
        let nb = l.tr_mul(&a) / a.norm_squared();
        let change = (&nb - &b).norm() / nb.norm();
        b = nb;
        if change < 1e-15 {
            break;
        }
    }
    // balance the two factors
    let s = (b.norm() / a.norm()).sqrt();
    (a * s, b / s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pathfn::TableKind;
    use crate::simulate::EstimatorKind;

    fn report(regime: Regime, k_rate: f64) -> RegimeReport {
        RegimeReport {
            kp0: 0.0,
            kp1: 0.0,
            regime,
            lambda_star: (regime == Regime::WeaklySubcritical).then_some(0.5),
            kp_star: (regime == Regime::WeaklySubcritical).then_some(0.0),
            k_rate,
            sigma2: 1.0,
            tol: 1e-9,
        }
    }

    fn synthetic(
        grid: &[usize],
        value: impl Fn(usize) -> (f64, f64),
    ) -> Vec<SurvivalTable<SurvivalEstimate>> {
        grid.iter()
            .map(|&n| {
                let (mean, log_scale) = value(n);
                let e = SurvivalEstimate {
                    mean,
                    stderr: 1e-6 * mean,
                    n_samples: 1000,
                    estimator: EstimatorKind::EnvMarginal,
                    log_scale,
                };
                SurvivalTable {
                    n,
                    values: vec![vec![e; 2]; 2],
                    kind: TableKind::Mc,
                }
            })
            .collect()
    }

    const GRID: [usize; 7] = [64, 128, 256, 512, 1024, 2048, 4096];

    #[test]
    fn critical_inverse_sqrt_is_constant() {
        let est = synthetic(&GRID, |n| (0.7 / (n as f64).sqrt(), 0.0));
        let seq = scaled_sequence(&est, &report(Regime::Critical, 1.0)).unwrap();
        for g in &seq.a {
            assert!((g[1][0].value - 0.7).abs() < 1e-12);
        }
        let drift = convergence_diagnostic(&seq, 3, 0.05, 0.0);
        assert!(drift.drift < 1e-12);
        assert!(drift.converged);
    }

    #[test]
    fn strong_rate_uses_log_scale() {
        let k: f64 = 0.8;
        let est = synthetic(&GRID[..4], |n| (0.3 + 1.0 / n as f64, n as f64 * k.ln()));
        let seq = scaled_sequence(&est, &report(Regime::StronglySubcritical, k)).unwrap();
        for (g, &n) in seq.grid.iter().enumerate() {
            assert!((seq.a[g][0][0].value - (0.3 + 1.0 / n as f64)).abs() < 1e-12);
        }
        let d = convergence_diagnostic(&seq, 4, 0.05, 0.0);
        assert!(d.drift > 0.03);
    }

    #[test]
    fn drift_of_inverse_sqrt_correction() {
        let est = synthetic(&GRID, |n| {
            let c = 2.0 * (1.0 + 1.0 / (n as f64).sqrt());
            (c, 0.0)
        });
        let seq = scaled_sequence_with_rate(
            &est,
            RateSpec {
                log_k: 0.0,
                power: 0.0,
            },
        )
        .unwrap();
        let d = convergence_diagnostic(&seq, 3, 0.05, 0.0);
        let oracle = (1.0 / 32.0 - 1.0 / 64.0) / (1.0 + 1.0 / 64.0);
        assert!((d.drift - oracle).abs() < 1e-5, "{}", d.drift);
        assert!((d.drift - 0.016).abs() < 1e-3);
    }

    #[test]
    fn noisy_sequence_never_converges() {
        let mut est = synthetic(&GRID[..4], |_| (1.0, 0.0));
        for t in &mut est {
            for row in &mut t.values {
                for e in row {
                    e.stderr = 0.5;
                }
            }
        }
        let seq = scaled_sequence_with_rate(
            &est,
            RateSpec {
                log_k: 0.0,
                power: 0.0,
            },
        )
        .unwrap();
        let d = convergence_diagnostic(&seq, 3, 0.05, 3.0);
        assert_eq!(d.drift, 0.0);
        assert!(!d.converged);
    }

    #[test]
    fn wrong_tilt_is_caught() {
        // data follow k(λ*)ⁿ n^{-3/2}; rate uses a larger k
        let ks: f64 = 0.9;
        let est = synthetic(&GRID[..6], |n| {
            (1.0, n as f64 * ks.ln() - 1.5 * (n as f64).ln())
        });
        let good = scaled_sequence(&est, &report(Regime::WeaklySubcritical, ks)).unwrap();
        assert!(convergence_diagnostic(&good, 3, 0.1, 3.0).converged);
        let wrong = RateSpec {
            log_k: (ks * 1.01).ln(),
            power: 1.5,
        };
        let bad = scaled_sequence_with_rate(&est, wrong).unwrap();
        assert!(!convergence_diagnostic(&bad, 3, 0.1, 3.0).converged);
    }

    #[test]
    fn sequence_preconditions() {
        let est = synthetic(&GRID[..3], |_| (1.0, 0.0));
        assert!(matches!(
            scaled_sequence(&est, &report(Regime::Critical, 1.0)),
            Err(Error::Config(_))
        ));
        let mut est = synthetic(&GRID[..4], |_| (1.0, 0.0));
        est.swap(1, 2);
        assert!(scaled_sequence(&est, &report(Regime::Critical, 1.0)).is_err());
        let est = synthetic(&GRID[..4], |_| (1.0, 0.0));
        let mut r = report(Regime::WeaklySubcritical, 0.9);
        r.kp_star = Some(1e-6);
        assert!(matches!(scaled_sequence(&est, &r), Err(Error::Config(_))));
        assert!(scaled_sequence(&est, &report(Regime::Supercritical, 1.1)).is_err());
    }

    #[test]
    fn exact_factorizations() {
        let u = [0.3, 1.2, 0.7];
        let nu = Vector::from_vec(vec![0.2, 0.5, 0.3]);
        let l = Matrix::from_fn(3, 3, |i, j| u[i] * nu[j]);
        let v = factorization_check(&l, FactorizationSide::RowsAreNu, Some(&nu)).unwrap();
        assert!(v.residual < 1e-15);
        match v.extracted_u {
            Extracted::Vector(x) => {
                for (a, b) in x.iter().zip(u) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
            _ => unreachable!(),
        }
        let free = factorization_check(&l, FactorizationSide::FreeRank1, None).unwrap();
        assert!(free.residual < 1e-14);
        let full = factorization_check(&l, FactorizationSide::FullMatrix, None).unwrap();
        assert_eq!(full.residual, 0.0);
    }

    #[test]
    fn perturbed_factorization() {
        let v1 = Vector::from_vec(vec![0.8, 1.1, 1.3]);
        let u = [0.4, 0.9, 0.6];
        let pert = [[1.0, -1.0, 1.0], [-1.0, 1.0, -1.0], [1.0, 1.0, -1.0]];
        let l = Matrix::from_fn(3, 3, |i, j| v1[i] * u[j] * (1.0 + 0.01 * pert[i][j]));
        let verdict = factorization_check(&l, FactorizationSide::ColumnsAreV1, Some(&v1)).unwrap();
        assert!(
            verdict.residual > 0.003 && verdict.residual < 0.02,
            "{}",
            verdict.residual
        );
    }

    #[test]
    fn near_equal_singular_values_flagged() {
        let delta = 1e-3;
        let l = Matrix::from_row_slice(2, 2, &[1.0, delta, delta, 1.0]);
        let v = factorization_check(&l, FactorizationSide::FreeRank1, None).unwrap();
        // second singular value over the Frobenius norm
        let oracle = (1.0 - delta) / ((1.0 + delta).powi(2) + (1.0 - delta).powi(2)).sqrt();
        assert!((v.residual - oracle).abs() < 1e-9);
        assert!(v.residual > 0.7);
        let neg = Matrix::from_row_slice(2, 2, &[1.0, 0.0, 0.5, 1.0]);
        assert!(matches!(
            factorization_check(&neg, FactorizationSide::FreeRank1, None),
            Err(Error::Domain(_))
        ));
    }
}
