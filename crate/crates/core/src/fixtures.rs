//! The four bundled calibrated models.
//!
//! All share the 3-state base chain below with geometric offspring of means
//! `(e, e^{-0.8}, 1.5)`; each fixture is that base shifted uniformly in
//! `ln m` until the named derivative condition holds.

use crate::envmodel::{calibrate, CalibrationTarget, EnvironmentModel, OffspringLaw};
use crate::Result;

pub const BASE_TRANSITION: [[f64; 3]; 3] = [[0.2, 0.5, 0.3], [0.4, 0.2, 0.4], [0.3, 0.3, 0.4]];
pub const BASE_LOG_MEANS: [f64; 3] = [1.0, -0.8, 0.405_465_108_108_164_4];
/// Margin `-K'(1)` of the strongly subcritical fixture.
pub const STRONG_MARGIN: f64 = 0.3;

pub fn base_model() -> Result<EnvironmentModel> {
    let laws = BASE_LOG_MEANS
        .iter()
        .map(|&r| OffspringLaw::geometric_with_mean(r.exp()))
        .collect::<Result<Vec<_>>>()?;
    let rows: Vec<Vec<f64>> = BASE_TRANSITION.iter().map(|r| r.to_vec()).collect();
    EnvironmentModel::from_rows(&rows, laws)
}

/// `(name, target)` for fixtures `a` to `d`.
pub fn targets() -> [(&'static str, CalibrationTarget); 4] {
    [
        ("a", CalibrationTarget::Critical),
        (
            "b",
            CalibrationTarget::Strong {
                margin: STRONG_MARGIN,
            },
        ),
        ("c", CalibrationTarget::Intermediate),
        ("d", CalibrationTarget::WeakMidpoint),
    ]
}

fn build(target: CalibrationTarget) -> Result<EnvironmentModel> {
    calibrate(&base_model()?, target).map(|(m, _)| m)
}

/// Critical: `K'(0) = 0`.
pub fn model_a() -> Result<EnvironmentModel> {
    build(CalibrationTarget::Critical)
}

/// Strongly subcritical: `K'(1) = -0.3`.
pub fn model_b() -> Result<EnvironmentModel> {
    build(CalibrationTarget::Strong {
        margin: STRONG_MARGIN,
    })
}

/// Intermediately subcritical: `K'(1) = 0`.
pub fn model_c() -> Result<EnvironmentModel> {
    build(CalibrationTarget::Intermediate)
}

/// Weakly subcritical: shift by the midpoint of `K'(0)` and `K'(1)`.
pub fn model_d() -> Result<EnvironmentModel> {
    build(CalibrationTarget::WeakMidpoint)
}

pub fn all() -> Result<Vec<(&'static str, EnvironmentModel)>> {
    targets()
        .into_iter()
        .map(|(name, t)| build(t).map(|m| (name, m)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{classify, Regime, REGIME_TOL};

    #[test]
    fn fixtures_land_in_their_regimes() {
        let expect = [
            Regime::Critical,
            Regime::StronglySubcritical,
            Regime::IntermediatelySubcritical,
            Regime::WeaklySubcritical,
        ];
        for ((name, m), r) in all().unwrap().into_iter().zip(expect) {
            let rep = classify(&m, REGIME_TOL).unwrap();
            assert_eq!(rep.regime, r, "model {name}");
        }
        let d = classify(&model_d().unwrap(), REGIME_TOL).unwrap();
        let ls = d.lambda_star.unwrap();
        assert!(ls > 0.0 && ls < 1.0);
    }
}
