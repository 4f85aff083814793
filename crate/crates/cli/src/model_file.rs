//! JSON model files.
//!
//! ```json
//! {
//!   "name": "example",
//!   "states": ["wet", "dry"],
//!   "transition": [[0.3, 0.7], [0.4, 0.6]],
//!   "offspring": {
//!     "wet": { "kind": "geometric", "r": 0.6 },
//!     "dry": { "kind": "poisson-truncated", "mean": 0.8, "cutoff": 30 }
//!   }
//! }
//! ```
//!
//! Unknown keys are rejected at every level. `states` defaults to
//! `"0", "1", …`.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context, Result};
use bpre_core::linalg::matrix_from_rows;
use bpre_core::{CalibrationTarget, EnvironmentModel, LawKind, OffspringLaw};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub states: Option<Vec<String>>,
    pub transition: Vec<Vec<f64>>,
    pub offspring: BTreeMap<String, Law>,
    /// Provenance of a calibrated model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration: Option<Calibration>,
}

/// Mirror of [`LawKind`] that rejects unknown keys.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Law {
    Geometric { r: f64 },
    PoissonTruncated { mean: f64, cutoff: usize },
    FinitePmf { pmf: Vec<f64> },
}

impl From<Law> for LawKind {
    fn from(l: Law) -> Self {
        match l {
            Law::Geometric { r } => LawKind::Geometric { r },
            Law::PoissonTruncated { mean, cutoff } => LawKind::PoissonTruncated { mean, cutoff },
            Law::FinitePmf { pmf } => LawKind::FinitePmf { pmf },
        }
    }
}

impl From<&LawKind> for Law {
    fn from(l: &LawKind) -> Self {
        match l.clone() {
            LawKind::Geometric { r } => Law::Geometric { r },
            LawKind::PoissonTruncated { mean, cutoff } => Law::PoissonTruncated { mean, cutoff },
            LawKind::FinitePmf { pmf } => Law::FinitePmf { pmf },
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Calibration {
    pub base: String,
    pub target: CalibrationTarget,
    /// Uniform shift `c` of `ln m`.
    pub shift: f64,
}

impl ModelFile {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read model file {}", path.display()))?;
        serde_json::from_str(&text)
            .with_context(|| format!("cannot parse model file {}", path.display()))
    }

    pub fn to_model(&self) -> Result<EnvironmentModel> {
        let d = self.transition.len();
        let states = match &self.states {
            Some(s) => s.clone(),
            None => (0..d).map(|i| i.to_string()).collect(),
        };
        if states.len() != d {
            bail!(
                "{} state labels for a {d}-row transition matrix",
                states.len()
            );
        }
        if let Some(extra) = self.offspring.keys().find(|k| !states.contains(k)) {
            bail!("offspring law given for unknown state \"{extra}\"");
        }
        let laws = states
            .iter()
            .map(|s| {
                let law = self
                    .offspring
                    .get(s)
                    .with_context(|| format!("missing offspring law for state \"{s}\""))?;
                OffspringLaw::from_kind(law.clone().into())
                    .with_context(|| format!("offspring law of state \"{s}\""))
            })
            .collect::<Result<Vec<_>>>()?;
        let transition = matrix_from_rows(&self.transition)?;
        Ok(EnvironmentModel::new(states, transition, laws)?)
    }

    pub fn from_model(model: &EnvironmentModel, name: Option<String>) -> Self {
        let transition = bpre_core::linalg::matrix_to_rows(model.transition());
        let offspring = model
            .states()
            .iter()
            .zip(model.laws())
            .map(|(s, l)| (s.clone(), Law::from(l.kind())))
            .collect();
        Self {
            name,
            states: Some(model.states().to_vec()),
            transition,
            offspring,
            calibration: None,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("model serializes");
        s.push('\n');
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_rejected() {
        let bad = r#"{"transition": [[1.0]], "offspring": {"0": {"kind": "geometric", "r": 0.5}}, "extra": 1}"#;
        assert!(serde_json::from_str::<ModelFile>(bad).is_err());
        let bad_law = r#"{"transition": [[1.0]], "offspring": {"0": {"kind": "geometric", "r": 0.5, "p": 1}}}"#;
        assert!(serde_json::from_str::<ModelFile>(bad_law).is_err());
    }

    #[test]
    fn missing_law_names_state() {
        let text = r#"{"states": ["wet", "dry"], "transition": [[0.5, 0.5], [0.5, 0.5]],
                       "offspring": {"wet": {"kind": "geometric", "r": 0.5}}}"#;
        let err = serde_json::from_str::<ModelFile>(text)
            .unwrap()
            .to_model()
            .unwrap_err();
        assert!(err.to_string().contains("\"dry\""), "{err}");
    }

    #[test]
    fn round_trip_preserves_fingerprint() {
        let model = bpre_core::fixtures::model_b().unwrap();
        let file = ModelFile::from_model(&model, Some("b".into()));
        let back: ModelFile = serde_json::from_str(&file.to_json()).unwrap();
        assert_eq!(back.to_model().unwrap().fingerprint(), model.fingerprint());
    }
}
