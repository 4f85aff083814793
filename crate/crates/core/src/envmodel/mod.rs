//! The environment chain and the offspring laws attached to its states.

mod lattice;
mod offspring;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use lattice::{lattice_diagnostic, LatticeDiagnostic};
pub use offspring::{LawKind, OffspringLaw};

use crate::linalg::{self, Matrix, Vector};
use crate::spectral;
use crate::{Error, Result};

const ROW_TOL: f64 = 1e-12;
const STATIONARY_TOL: f64 = 1e-12;
const DUAL_CONSISTENCY_TOL: f64 = 1e-10;
const CALIBRATION_TOL: f64 = 1e-10;

/// Default tolerance of the lattice diagnostic run by [`validate_model`].
pub const LATTICE_TOL: f64 = 1e-9;

/// A finite environment chain with one offspring law per state.
///
/// Construction only checks shapes; [`validate_model`] checks the
/// stochastic, moment and primitivity conditions.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvironmentModel {
    states: Vec<String>,
    transition: Matrix,
    laws: Vec<OffspringLaw>,
    rho: Vec<f64>,
}

impl EnvironmentModel {
    pub fn new(states: Vec<String>, transition: Matrix, laws: Vec<OffspringLaw>) -> Result<Self> {
        let d = states.len();
        if d == 0 {
            return Err(Error::Dimension("model has no states".into()));
        }
        if transition.nrows() != d || transition.ncols() != d {
            return Err(Error::Dimension(format!(
                "transition matrix is {}x{}, expected {d}x{d}",
                transition.nrows(),
                transition.ncols()
            )));
        }
        if laws.len() != d {
            return Err(Error::Dimension(format!(
                "{} offspring laws for {d} states",
                laws.len()
            )));
        }
        let rho = laws.iter().map(OffspringLaw::rho).collect();
        Ok(Self {
            states,
            transition,
            laws,
            rho,
        })
    }

    /// Model with states labelled `0, 1, …`.
    pub fn from_rows(rows: &[Vec<f64>], laws: Vec<OffspringLaw>) -> Result<Self> {
        let transition = linalg::matrix_from_rows(rows)?;
        let states = (0..rows.len()).map(|i| i.to_string()).collect();
        Self::new(states, transition, laws)
    }

    pub fn dim(&self) -> usize {
        self.states.len()
    }

    pub fn states(&self) -> &[String] {
        &self.states
    }

    pub fn transition(&self) -> &Matrix {
        &self.transition
    }

    pub fn laws(&self) -> &[OffspringLaw] {
        &self.laws
    }

    pub fn law(&self, state: usize) -> &OffspringLaw {
        &self.laws[state]
    }

    /// `ρ(i) = ln f_i'(1)`.
    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    pub fn rho_vector(&self) -> Vector {
        Vector::from_column_slice(&self.rho)
    }

    /// `max_i f_i''(1) / f_i'(1)²`, the upper bound of every `g_i`.
    pub fn eta_bound(&self) -> f64 {
        self.laws
            .iter()
            .map(|l| l.second_factorial_moment() / (l.mean() * l.mean()))
            .fold(0.0, f64::max)
    }

    pub fn all_linear_fractional(&self) -> bool {
        self.laws.iter().all(OffspringLaw::is_linear_fractional)
    }

    /// Stable content hash (SHA-256 over the bit patterns of all parameters).
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.dim() as u64).to_le_bytes());
        for s in &self.states {
            h.update((s.len() as u64).to_le_bytes());
            h.update(s.as_bytes());
        }
        for x in self.transition.transpose().iter() {
            h.update(x.to_bits().to_le_bytes());
        }
        for law in &self.laws {
            match law.kind() {
                LawKind::Geometric { r } => {
                    h.update([0u8]);
                    h.update(r.to_bits().to_le_bytes());
                }
                LawKind::PoissonTruncated { mean, cutoff } => {
                    h.update([1u8]);
                    h.update(mean.to_bits().to_le_bytes());
                    h.update((*cutoff as u64).to_le_bytes());
                }
                LawKind::FinitePmf { pmf } => {
                    h.update([2u8]);
                    h.update((pmf.len() as u64).to_le_bytes());
                    for p in pmf {
                        h.update(p.to_bits().to_le_bytes());
                    }
                }
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    fn with_laws(&self, laws: Vec<OffspringLaw>) -> Self {
        let rho = laws.iter().map(OffspringLaw::rho).collect();
        Self {
            states: self.states.clone(),
            transition: self.transition.clone(),
            laws,
            rho,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub stochastic_ok: bool,
    pub primitive_ok: bool,
    /// Witness `k0` with `P^{k0} > 0` entrywise.
    pub primitive_exponent: Option<usize>,
    pub moments_ok: bool,
    pub lattice: LatticeDiagnostic,
}

impl ValidationReport {
    /// Mandatory checks; the lattice diagnostic is advisory.
    pub fn passed(&self) -> bool {
        self.stochastic_ok && self.primitive_ok && self.moments_ok
    }
}

fn check_stochastic(p: &Matrix) -> Result<()> {
    for i in 0..p.nrows() {
        for j in 0..p.ncols() {
            let x = p[(i, j)];
            if !(x.is_finite() && x >= 0.0) {
                return Err(Error::BadEntry {
                    row: i,
                    col: j,
                    value: x,
                });
            }
        }
        let sum: f64 = p.row(i).iter().sum();
        if (sum - 1.0).abs() > ROW_TOL {
            return Err(Error::NotStochastic { row: i, sum });
        }
    }
    Ok(())
}

/// Checks the stochastic, moment and primitivity conditions and runs the
/// lattice diagnostic.
///
/// Non-stochastic rows and zero-mean laws are errors; a non-primitive
/// kernel is reported through `primitive_ok = false`.
pub fn validate_model(model: &EnvironmentModel) -> Result<ValidationReport> {
    check_stochastic(&model.transition)?;
    for (state, law) in model.states.iter().zip(&model.laws) {
        if !(law.mean() > 0.0) {
            return Err(Error::ZeroMean {
                state: state.clone(),
                mean: law.mean(),
            });
        }
        if !law.second_factorial_moment().is_finite() {
            return Err(Error::InvalidLaw(format!(
                "offspring law of state `{state}` has infinite variance"
            )));
        }
    }
    let k0 = linalg::primitivity_exponent(&model.transition);
    Ok(ValidationReport {
        stochastic_ok: true,
        primitive_ok: k0.is_some(),
        primitive_exponent: k0,
        moments_ok: true,
        lattice: lattice_diagnostic(model, LATTICE_TOL),
    })
}

/// Invariant probability `ν` of a primitive stochastic matrix.
pub fn stationary(p: &Matrix) -> Result<Vector> {
    let d = p.nrows();
    if p.ncols() != d {
        return Err(Error::Dimension("stationary: matrix is not square".into()));
    }
    if linalg::primitivity_exponent(p).is_none() {
        return Err(Error::NotPrimitive);
    }
    // (Pᵀ - I) ν = 0 with the last equation replaced by Σν = 1
    let mut a = p.transpose() - Matrix::identity(d, d);
    for j in 0..d {
        a[(d - 1, j)] = 1.0;
    }
    let mut b = Vector::zeros(d);
    b[d - 1] = 1.0;
    let mut nu = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::Numerical("singular stationary system".into()))?;
    // two polishing steps of the invariance map
    for _ in 0..2 {
        nu = linalg::left_mul(&nu, p);
        let s = nu.sum();
        nu /= s;
    }
    if nu.iter().any(|&x| !(x > 0.0)) {
        return Err(Error::Numerical(format!(
            "stationary vector is not positive: {:?}",
            nu.as_slice()
        )));
    }
    let residual = linalg::sup_norm(&(linalg::left_mul(&nu, p) - &nu));
    if residual > STATIONARY_TOL {
        return Err(Error::Numerical(format!(
            "stationary residual {residual:e} above {STATIONARY_TOL:e}"
        )));
    }
    Ok(nu)
}

/// Time reversal `P*(i,j) = ν(j) P(j,i) / ν(i)`.
pub fn dual_kernel(p: &Matrix, nu: &Vector) -> Result<Matrix> {
    let d = p.nrows();
    if nu.len() != d {
        return Err(Error::Dimension(format!(
            "dual_kernel: vector of length {} for a {d}-state kernel",
            nu.len()
        )));
    }
    if nu.iter().any(|&x| !(x > 0.0)) {
        return Err(Error::Domain("dual_kernel: ν must be positive".into()));
    }
    let residual = linalg::sup_norm(&(linalg::left_mul(nu, p) - nu));
    if residual > DUAL_CONSISTENCY_TOL {
        return Err(Error::NotStationary { residual });
    }
    Ok(Matrix::from_fn(d, d, |i, j| nu[j] * p[(j, i)] / nu[i]))
}

/// Rescales every offspring mean by `e^{-c}`, so that `ρ ↦ ρ - c`.
pub fn shift_means(model: &EnvironmentModel, c: f64) -> Result<EnvironmentModel> {
    if c == 0.0 {
        return Ok(model.clone());
    }
    let factor = (-c).exp();
    let laws = model
        .laws
        .iter()
        .zip(&model.states)
        .map(|(law, state)| {
            law.rescaled(factor)
                .map_err(|reason| Error::UnsupportedRescale {
                    state: state.clone(),
                    reason,
                })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(model.with_laws(laws))
}

/// Regime a model is calibrated to by [`calibrate`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CalibrationTarget {
    /// `K'(0) = 0`.
    Critical,
    /// `K'(1) = 0`.
    Intermediate,
    /// `K'(1) = -margin`.
    Strong { margin: f64 },
    /// `K'(λ_target) = 0` for `λ_target ∈ (0, 1)`.
    Weak { lambda: f64 },
    /// Shift by the midpoint of `K'(0)` and `K'(1)`.
    WeakMidpoint,
}

/// Shifts the model so that it lands in the requested regime; returns the
/// shifted model and the shift `c`.
pub fn calibrate(
    model: &EnvironmentModel,
    target: CalibrationTarget,
) -> Result<(EnvironmentModel, f64)> {
    let kp = |lambda: f64| spectral::k_derivatives(model, lambda).map(|d| d.d1);
    let (c, check_at, expect) = match target {
        CalibrationTarget::Critical => (kp(0.0)?, 0.0, 0.0),
        CalibrationTarget::Intermediate => (kp(1.0)?, 1.0, 0.0),
        CalibrationTarget::Strong { margin } => {
            if !(margin > 0.0) {
                return Err(Error::Infeasible(format!(
                    "strong margin must be positive, got {margin}"
                )));
            }
            (kp(1.0)? + margin, 1.0, -margin)
        }
        CalibrationTarget::Weak { lambda } => {
            if !(lambda > 0.0 && lambda < 1.0) {
                return Err(Error::Infeasible(format!(
                    "weak target λ = {lambda} must lie in (0, 1)"
                )));
            }
            let (k0, k1) = (kp(0.0)?, kp(1.0)?);
            if (k1 - k0).abs() <= CALIBRATION_TOL {
                return Err(Error::Infeasible(
                    "K'(0) = K'(1): constant ρ admits no weakly subcritical shift".into(),
                ));
            }
            (kp(lambda)?, lambda, 0.0)
        }
        CalibrationTarget::WeakMidpoint => {
            let (k0, k1) = (kp(0.0)?, kp(1.0)?);
            if (k1 - k0).abs() <= CALIBRATION_TOL {
                return Err(Error::Infeasible(
                    "K'(0) = K'(1): constant ρ admits no weakly subcritical shift".into(),
                ));
            }
            let c = 0.5 * (k0 + k1);
            let shifted = shift_means(model, c)?;
            let (n0, n1) = (
                spectral::k_derivatives(&shifted, 0.0)?.d1,
                spectral::k_derivatives(&shifted, 1.0)?.d1,
            );
            if !(n0 < 0.0 && n1 > 0.0) {
                return Err(Error::Numerical(format!(
                    "weak calibration produced K'(0) = {n0}, K'(1) = {n1}"
                )));
            }
            return Ok((shifted, c));
        }
    };
    let shifted = shift_means(model, c)?;
    let got = spectral::k_derivatives(&shifted, check_at)?.d1;
    if (got - expect).abs() > CALIBRATION_TOL {
        return Err(Error::Numerical(format!(
            "calibration missed its target: K'({check_at}) = {got}, wanted {expect}"
        )));
    }
    Ok((shifted, c))
}
