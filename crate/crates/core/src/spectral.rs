//! Transfer operator, Perron data, the tilted chain and regime classification.
//!
//! `P_λ(i,j) = P(i,j) e^{λρ(j)}` has a simple Perron root `k(λ)` with right
//! eigenvector `v_λ` and left eigenvector `ν_λ`, normalised by `Σν_λ = 1`
//! and `ν_λ·v_λ = 1`. `K = ln k` is strictly convex unless `ρ` is constant.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::envmodel::{dual_kernel, stationary, EnvironmentModel};
use crate::linalg::{self, Matrix, Vector};
use crate::{Error, Result};

/// Collatz–Wielandt spread at which power iteration stops.
pub const PERRON_TOL: f64 = 1e-13;
pub const PERRON_MAX_ITER: usize = 200_000;
/// Boundary tolerance for regime decisions.
pub const REGIME_TOL: f64 = 1e-9;
/// Stopping tolerance on `|K'(λ*)|`.
pub const CRITICAL_POINT_TOL: f64 = 1e-12;

const SERIES_TERM_TOL: f64 = 1e-14;
const SERIES_MAX_TERMS: usize = 1_000_000;
const VARIANCE_AGREEMENT: f64 = 1e-10;
// window of iterate differences used to read off the convergence factor
const GAP_WINDOW: (f64, f64) = (1e-13, 1e-2);

/// `P_λ(i,j) = P(i,j) e^{λρ(j)}`.
pub fn transfer_matrix(model: &EnvironmentModel, lambda: f64) -> Matrix {
    let p = model.transition();
    let w: Vec<f64> = model.rho().iter().map(|r| (lambda * r).exp()).collect();
    Matrix::from_fn(p.nrows(), p.ncols(), |i, j| p[(i, j)] * w[j])
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralDecomposition {
    /// Tilt parameter when the matrix came from [`transfer_matrix`].
    pub lambda: Option<f64>,
    pub k: f64,
    /// Right Perron vector, `ν·v = 1`.
    pub v: Vector,
    /// Left Perron vector, `Σν = 1`.
    pub nu: Vector,
    /// One minus the observed geometric convergence factor of the iteration.
    pub gap: f64,
    /// `‖A v - k v‖∞ / (k ‖v‖∞)`.
    pub residual: f64,
    pub iterations: usize,
}

/// Collatz–Wielandt bounds `(min, max)` of `(A x)_i / x_i`.
fn cw_bounds(ax: &Vector, x: &Vector) -> (f64, f64) {
    ax.iter()
        .zip(x.iter())
        .map(|(a, b)| a / b)
        .fold((f64::INFINITY, 0.0_f64), |(lo, hi), r| {
            (lo.min(r), hi.max(r))
        })
}

/// Perron root and vectors of a primitive nonnegative matrix by power
/// iteration on `A` (right) and `Aᵀ` (left).
pub fn perron(matrix: &Matrix, tol: f64, max_iter: usize) -> Result<SpectralDecomposition> {
    let d = matrix.nrows();
    if d == 0 || matrix.ncols() != d {
        return Err(Error::Dimension(
            "perron: matrix must be square and non-empty".into(),
        ));
    }
    if matrix.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
        return Err(Error::Domain(
            "perron: entries must be finite and nonnegative".into(),
        ));
    }
    if linalg::primitivity_exponent(matrix).is_none() {
        return Err(Error::NotPrimitive);
    }
    let at = matrix.transpose();
    let mut v = Vector::from_element(d, 1.0);
    let mut nu = Vector::from_element(d, 1.0 / d as f64);
    let mut prev_delta = f64::NAN;
    let mut factors: Vec<f64> = Vec::new();
    let mut spread = f64::INFINITY;
    for iter in 1..=max_iter {
        let av = matrix * &v;
        let an = &at * &nu;
        let (lo_r, hi_r) = cw_bounds(&av, &v);
        let (lo_l, hi_l) = cw_bounds(&an, &nu);
        spread = ((hi_r - lo_r) / hi_r).max((hi_l - lo_l) / hi_l);

        let v_next = &av / av.max();
        let nu_next = &an / an.sum();
        let delta = linalg::sup_norm(&(&v_next - &v)).max(linalg::sup_norm(&(&nu_next - &nu)));
        if delta > GAP_WINDOW.0 && delta <= GAP_WINDOW.1 && prev_delta > 0.0 {
            factors.push(delta / prev_delta);
        }
        prev_delta = delta;
        v = v_next;
        nu = nu_next;

        if spread <= tol {
            return Ok(finish(matrix, v, nu, &factors, iter));
        }
    }
    Err(Error::NoConvergence {
        iterations: max_iter,
        residual: spread,
    })
}

fn finish(
    matrix: &Matrix,
    v: Vector,
    nu: Vector,
    factors: &[f64],
    iterations: usize,
) -> SpectralDecomposition {
    let nu = &nu / nu.sum();
    let v = &v / nu.dot(&v);
    let av = matrix * &v;
    // Rayleigh quotient with both eigenvectors: error quadratic in the spread
    let k = nu.dot(&av) / nu.dot(&v);
    let residual = linalg::sup_norm(&(&av - &v * k)) / (k * linalg::sup_norm(&v));
    let gap = if factors.is_empty() {
        1.0
    } else {
        // geometric mean over the window, ignoring the transient first step
        let tail = if factors.len() > 2 {
            &factors[1..]
        } else {
            factors
        };
        let log_mean = tail.iter().map(|f| f.ln()).sum::<f64>() / tail.len() as f64;
        (1.0 - log_mean.exp()).clamp(f64::MIN_POSITIVE, 1.0)
    };
    SpectralDecomposition {
        lambda: None,
        k,
        v,
        nu,
        gap,
        residual,
        iterations,
    }
}

/// The normalised tilted chain at one `λ`.
#[derive(Debug, Clone, PartialEq)]
pub struct TiltedChain {
    pub lambda: f64,
    /// `P̃_λ(i,j) = P_λ(i,j) v_λ(j) / (k(λ) v_λ(i))`.
    pub kernel: Matrix,
    /// Invariant law of `kernel`, equal to `ν_λ ⊙ v_λ`.
    pub stat: Vector,
    /// Time reversal of `kernel` with respect to `stat`.
    pub dual: Matrix,
    pub rho: Vec<f64>,
    pub spectral: SpectralDecomposition,
}

impl TiltedChain {
    pub fn k(&self) -> f64 {
        self.spectral.k
    }

    pub fn v(&self) -> &Vector {
        &self.spectral.v
    }
}

pub fn spectral_decomposition(
    model: &EnvironmentModel,
    lambda: f64,
) -> Result<SpectralDecomposition> {
    let mut sd = perron(&transfer_matrix(model, lambda), PERRON_TOL, PERRON_MAX_ITER)?;
    sd.lambda = Some(lambda);
    Ok(sd)
}

pub fn tilted_chain(model: &EnvironmentModel, lambda: f64) -> Result<TiltedChain> {
    let a = transfer_matrix(model, lambda);
    let mut sd = perron(&a, PERRON_TOL, PERRON_MAX_ITER)?;
    sd.lambda = Some(lambda);
    let d = a.nrows();
    let mut kernel = Matrix::from_fn(d, d, |i, j| a[(i, j)] * sd.v[j] / (sd.k * sd.v[i]));
    for i in 0..d {
        let s: f64 = kernel.row(i).sum();
        for j in 0..d {
            kernel[(i, j)] /= s;
        }
    }
    let stat = stationary(&kernel)?;
    let product = sd.nu.component_mul(&sd.v);
    let mismatch = linalg::sup_norm(&(&product / product.sum() - &stat));
    if mismatch > 1e-10 {
        return Err(Error::Numerical(format!(
            "tilted stationary law deviates from ν⊙v by {mismatch:e}"
        )));
    }
    let dual = dual_kernel(&kernel, &stat)?;
    Ok(TiltedChain {
        lambda,
        kernel,
        stat,
        dual,
        rho: model.rho().to_vec(),
        spectral: sd,
    })
}

/// `K(λ) = ln k(λ)` with its first two derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KDerivatives {
    pub lambda: f64,
    pub k: f64,
    /// `K = ln k`.
    pub log_k: f64,
    /// `K' = Σ stat(i) ρ(i)`.
    pub d1: f64,
    /// `K''`, the asymptotic variance of `ρ` under the tilted chain.
    pub d2: f64,
    pub gap: f64,
}

pub fn k_derivatives(model: &EnvironmentModel, lambda: f64) -> Result<KDerivatives> {
    let chain = tilted_chain(model, lambda)?;
    let rho = model.rho_vector();
    Ok(KDerivatives {
        lambda,
        k: chain.spectral.k,
        log_k: chain.spectral.k.ln(),
        d1: chain.stat.dot(&rho),
        d2: asymptotic_variance(&chain.kernel, &rho)?,
        gap: chain.spectral.gap,
    })
}

fn centered(pi: &Vector, f: &Vector) -> Vector {
    let mean = pi.dot(f);
    f.map(|x| x - mean)
}

/// Asymptotic variance `lim Var(Σ_{k≤n} f(X_k)) / n` of an additive
/// functional, from the fundamental matrix `Z = (I - K + 1π)^{-1}`:
/// `π(f̄²) + 2 π(f̄ (Z - I) f̄)`.
///
/// The truncated series is evaluated alongside and must agree within 1e-10.
pub fn asymptotic_variance(kernel: &Matrix, f: &Vector) -> Result<f64> {
    let d = kernel.nrows();
    if f.len() != d {
        return Err(Error::Dimension(format!(
            "asymptotic_variance: function of length {} for {d} states",
            f.len()
        )));
    }
    let pi = stationary(kernel)?;
    let fbar = centered(&pi, f);
    let mut system = Matrix::identity(d, d) - kernel;
    for i in 0..d {
        for j in 0..d {
            system[(i, j)] += pi[j];
        }
    }
    let zf = system
        .lu()
        .solve(&fbar)
        .ok_or_else(|| Error::Numerical("singular fundamental system".into()))?;
    let sq: f64 = pi.iter().zip(fbar.iter()).map(|(p, x)| p * x * x).sum();
    let cross: f64 = (0..d).map(|i| pi[i] * fbar[i] * (zf[i] - fbar[i])).sum();
    let closed = sq + 2.0 * cross;
    let series = asymptotic_variance_series(kernel, f)?;
    let scale = closed.abs().max(1.0);
    if (closed - series).abs() > VARIANCE_AGREEMENT * scale {
        return Err(Error::Numerical(format!(
            "asymptotic variance routes disagree: closed form {closed}, series {series}"
        )));
    }
    Ok(closed)
}

/// `π(f̄²) + 2 Σ_{n≥1} π(f̄ Kⁿ f̄)`, summed until `‖Kⁿ f̄‖∞ < 1e-14`.
pub fn asymptotic_variance_series(kernel: &Matrix, f: &Vector) -> Result<f64> {
    let pi = stationary(kernel)?;
    let fbar = centered(&pi, f);
    let pf = pi.component_mul(&fbar);
    let mut total = pf.dot(&fbar);
    let mut term = fbar.clone();
    for _ in 0..SERIES_MAX_TERMS {
        term = kernel * &term;
        // keep Kⁿ f̄ centred against rounding drift
        let drift = pi.dot(&term);
        term.add_scalar_mut(-drift);
        if linalg::sup_norm(&term) < SERIES_TERM_TOL {
            return Ok(total);
        }
        total += 2.0 * pf.dot(&term);
    }
    Err(Error::NoConvergence {
        iterations: SERIES_MAX_TERMS,
        residual: linalg::sup_norm(&term),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    Critical,
    StronglySubcritical,
    IntermediatelySubcritical,
    WeaklySubcritical,
    Supercritical,
}

impl Regime {
    pub fn as_str(self) -> &'static str {
        match self {
            Regime::Critical => "critical",
            Regime::StronglySubcritical => "strongly-subcritical",
            Regime::IntermediatelySubcritical => "intermediately-subcritical",
            Regime::WeaklySubcritical => "weakly-subcritical",
            Regime::Supercritical => "supercritical",
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeReport {
    pub kp0: f64,
    pub kp1: f64,
    pub regime: Regime,
    pub lambda_star: Option<f64>,
    /// `K'(λ*)`, present with `lambda_star`.
    pub kp_star: Option<f64>,
    /// The `k(·)` value whose powers give the survival rate.
    pub k_rate: f64,
    /// `K''` at the tilt relevant to the regime.
    pub sigma2: f64,
    pub tol: f64,
}

impl RegimeReport {
    /// Tilt at which the regime's walk is centred or the rate is read.
    pub fn rate_lambda(&self) -> f64 {
        match self.regime {
            Regime::Critical | Regime::Supercritical => 0.0,
            Regime::StronglySubcritical | Regime::IntermediatelySubcritical => 1.0,
            Regime::WeaklySubcritical => self.lambda_star.unwrap_or(f64::NAN),
        }
    }
}

pub fn classify(model: &EnvironmentModel, tol: f64) -> Result<RegimeReport> {
    let d0 = k_derivatives(model, 0.0)?;
    let d1 = k_derivatives(model, 1.0)?;
    let (kp0, kp1) = (d0.d1, d1.d1);
    let regime = if kp0.abs() <= tol {
        Regime::Critical
    } else if kp0 > tol {
        Regime::Supercritical
    } else if kp1 < -tol {
        Regime::StronglySubcritical
    } else if kp1.abs() <= tol {
        Regime::IntermediatelySubcritical
    } else {
        Regime::WeaklySubcritical
    };
    let (lambda_star, kp_star, k_rate, sigma2) = match regime {
        Regime::Critical => (None, None, 1.0, d0.d2),
        Regime::Supercritical => (None, None, d0.k, d0.d2),
        Regime::StronglySubcritical | Regime::IntermediatelySubcritical => {
            (None, None, d1.k, d1.d2)
        }
        Regime::WeaklySubcritical => {
            let ls = critical_point(model, CRITICAL_POINT_TOL)?;
            let ds = k_derivatives(model, ls)?;
            (Some(ls), Some(ds.d1), ds.k, ds.d2)
        }
    };
    Ok(RegimeReport {
        kp0,
        kp1,
        regime,
        lambda_star,
        kp_star,
        k_rate,
        sigma2,
        tol,
    })
}

/// The unique `λ* ∈ (0, 1)` with `K'(λ*) = 0`, by bisection.
pub fn critical_point(model: &EnvironmentModel, tol: f64) -> Result<f64> {
    let kp = |l: f64| k_derivatives(model, l).map(|d| d.d1);
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    let (f_lo, f_hi) = (kp(lo)?, kp(hi)?);
    if !(f_lo < 0.0 && f_hi > 0.0) {
        return Err(Error::Regime(format!(
            "critical point needs K'(0) < 0 < K'(1), got K'(0) = {f_lo}, K'(1) = {f_hi}"
        )));
    }
    loop {
        let mid = 0.5 * (lo + hi);
        let f = kp(mid)?;
        if f.abs() <= tol || hi - lo <= f64::EPSILON {
            return Ok(mid);
        }
        if f < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KCurvePoint {
    pub lambda: f64,
    pub k: f64,
    pub log_k: f64,
    pub kp: f64,
    pub kpp: f64,
    pub gap: f64,
}

/// `(k, K, K', K'', gap)` on the given tilt grid.
pub fn k_curve(model: &EnvironmentModel, lambdas: &[f64]) -> Result<Vec<KCurvePoint>> {
    lambdas
        .iter()
        .map(|&lambda| {
            let d = k_derivatives(model, lambda)?;
            Ok(KCurvePoint {
                lambda,
                k: d.k,
                log_k: d.log_k,
                kp: d.d1,
                kpp: d.d2,
                gap: d.gap,
            })
        })
        .collect()
}

/// `{-1, -0.75, …, 2}`.
pub fn default_lambda_grid() -> Vec<f64> {
    (0..=12).map(|i| -1.0 + 0.25 * i as f64).collect()
}
