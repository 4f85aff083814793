//! Branching processes in a finite-state Markovian random environment.
//!
//! The crate is organised bottom-up:
//!
//! - [`envmodel`]: environment chain, offspring laws, validation, the dual
//!   kernel and regime calibration by uniform mean shifts.
//! - [`spectral`]: the transfer operator `P_λ(i,j) = P(i,j) e^{λρ(j)}`, its
//!   Perron data, the normalized tilted chain, `K = ln k` and its derivatives,
//!   regime classification and the critical tilt.
//! - [`pathfn`]: exact per-path functionals (conditional survival along an
//!   environment path, its dual form, exit times) and two exact survival
//!   oracles.
//! - [`simulate`]: seeded, chunk-parallel Monte Carlo estimators.
//! - [`asymptotics`]: scaled sequences, drift diagnostics and factorization
//!   checks of the limit matrix.
//! - [`fixtures`]: the four bundled calibrated models.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// matrix code indexes several arrays with the same loop variable
#![allow(clippy::needless_range_loop)]

pub mod asymptotics;
pub mod envmodel;
mod error;
pub mod fixtures;
pub mod linalg;
pub mod pathfn;
pub mod simulate;
pub mod spectral;

pub use error::{Error, Result};

pub use asymptotics::{
    convergence_diagnostic, factorization_check, scaled_sequence, scaled_sequence_with_rate,
    DriftReport, Extracted, FactorizationSide, FactorizationVerdict, RateSpec, ScaledSequence,
    ScaledValue,
};
pub use envmodel::{
    calibrate, dual_kernel, lattice_diagnostic, shift_means, stationary, validate_model,
    CalibrationTarget, EnvironmentModel, LatticeDiagnostic, LawKind, OffspringLaw,
    ValidationReport,
};
pub use linalg::{Matrix, Vector};
pub use pathfn::{
    dp_survival_bounds, duality_sides, enumerate_survival, exit_time, g_eval, q_along_path,
    q_dual_along_path, EnvPath, QDual, QPath, SurvivalTable, TableKind,
};
pub use simulate::{
    estimate_dual, estimate_dual_table, estimate_population, estimate_qn_mc, estimate_qn_tilted,
    exit_statistics, rayleigh_cdf, rayleigh_ks, sample_branching, sample_environment,
    BranchingOutcome, EstimatorKind, ExitStatistics, MeanEstimate, RandomSource, RayleighTest,
    SurvivalEstimate,
};
pub use spectral::{
    asymptotic_variance, asymptotic_variance_series, classify, critical_point, default_lambda_grid,
    k_curve, k_derivatives, perron, spectral_decomposition, tilted_chain, transfer_matrix,
    KCurvePoint, KDerivatives, Regime, RegimeReport, SpectralDecomposition, TiltedChain,
};
