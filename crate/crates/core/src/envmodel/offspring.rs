//! Offspring laws and their generating functions.
//!
//! Every law works with the complement map `h(u) = 1 - f(1 - u)` in addition
//! to the pgf `f` itself. Conditional survival probabilities are compositions
//! of `h`, and evaluating them in complement form keeps full relative
//! precision when the survival probability is tiny.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

const PMF_TOL: f64 = 1e-12;

/// Parametrisation of an offspring law, as given by the user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LawKind {
    /// `P(ξ = k) = (1 - r) r^k`, `k ≥ 0`.
    Geometric { r: f64 },
    /// Poisson(`mean`) on `0..cutoff`, remaining tail mass folded into `cutoff`.
    PoissonTruncated { mean: f64, cutoff: usize },
    /// Explicit probabilities `p_0, …, p_K`.
    FinitePmf { pmf: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct OffspringLaw {
    kind: LawKind,
    /// Explicit pmf for finitely supported laws, empty for geometric.
    pmf: Vec<f64>,
    cdf: Vec<f64>,
    mean: f64,
    fact2: f64,
    fact3: f64,
}

impl OffspringLaw {
    pub fn geometric(r: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&r) {
            return Err(Error::InvalidLaw(format!(
                "geometric parameter r = {r} outside [0, 1)"
            )));
        }
        let q = 1.0 - r;
        let ratio = r / q;
        Ok(Self {
            kind: LawKind::Geometric { r },
            pmf: Vec::new(),
            cdf: Vec::new(),
            mean: ratio,
            fact2: 2.0 * ratio * ratio,
            fact3: 6.0 * ratio * ratio * ratio,
        })
    }

    /// Geometric law with the given mean `m = r / (1 - r)`.
    pub fn geometric_with_mean(mean: f64) -> Result<Self> {
        if !(mean.is_finite() && mean >= 0.0) {
            return Err(Error::InvalidLaw(format!(
                "geometric mean {mean} is invalid"
            )));
        }
        Self::geometric(mean / (1.0 + mean))
    }

    pub fn poisson_truncated(mean: f64, cutoff: usize) -> Result<Self> {
        if !(mean.is_finite() && mean >= 0.0) {
            return Err(Error::InvalidLaw(format!("poisson mean {mean} is invalid")));
        }
        if cutoff == 0 {
            return Err(Error::InvalidLaw(
                "poisson cutoff must be at least 1".into(),
            ));
        }
        let pmf = truncated_poisson_pmf(mean, cutoff);
        Self::from_pmf(LawKind::PoissonTruncated { mean, cutoff }, pmf)
    }

    pub fn finite(pmf: Vec<f64>) -> Result<Self> {
        Self::from_pmf(LawKind::FinitePmf { pmf: pmf.clone() }, pmf)
    }

    pub fn from_kind(kind: LawKind) -> Result<Self> {
        match kind {
            LawKind::Geometric { r } => Self::geometric(r),
            LawKind::PoissonTruncated { mean, cutoff } => Self::poisson_truncated(mean, cutoff),
            LawKind::FinitePmf { pmf } => Self::finite(pmf),
        }
    }

    fn from_pmf(kind: LawKind, pmf: Vec<f64>) -> Result<Self> {
        if pmf.is_empty() {
            return Err(Error::InvalidLaw("empty pmf".into()));
        }
        if let Some((k, p)) = pmf
            .iter()
            .enumerate()
            .find(|(_, p)| !(p.is_finite() && **p >= 0.0))
        {
            return Err(Error::InvalidLaw(format!("pmf entry {k} is {p}")));
        }
        let total: f64 = pmf.iter().sum();
        if (total - 1.0).abs() > PMF_TOL {
            return Err(Error::InvalidLaw(format!("pmf sums to {total}")));
        }
        let mut mean = 0.0;
        let mut fact2 = 0.0;
        let mut fact3 = 0.0;
        for (k, p) in pmf.iter().enumerate() {
            let k = k as f64;
            mean += k * p;
            fact2 += k * (k - 1.0) * p;
            fact3 += k * (k - 1.0) * (k - 2.0) * p;
        }
        let mut cdf = Vec::with_capacity(pmf.len());
        let mut acc = 0.0;
        for p in &pmf {
            acc += p;
            cdf.push(acc);
        }
        // the last atom with positive mass closes the cdf
        if let Some(last) = pmf.iter().rposition(|&p| p > 0.0) {
            for c in &mut cdf[last..] {
                *c = 1.0;
            }
        }
        Ok(Self {
            kind,
            pmf,
            cdf,
            mean,
            fact2,
            fact3,
        })
    }

    pub fn kind(&self) -> &LawKind {
        &self.kind
    }

    /// `f'(1)`.
    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// `f''(1) = E ξ(ξ-1)`.
    pub fn second_factorial_moment(&self) -> f64 {
        self.fact2
    }

    /// `f'''(1) = E ξ(ξ-1)(ξ-2)`.
    pub fn third_factorial_moment(&self) -> f64 {
        self.fact3
    }

    /// `ρ = ln f'(1)`; `-∞` for the zero law.
    pub fn rho(&self) -> f64 {
        self.mean.ln()
    }

    pub fn is_linear_fractional(&self) -> bool {
        matches!(self.kind, LawKind::Geometric { .. })
    }

    /// Largest atom for finitely supported laws.
    pub fn support_max(&self) -> Option<usize> {
        match self.kind {
            LawKind::Geometric { .. } => None,
            _ => Some(self.pmf.len() - 1),
        }
    }

    pub fn pmf(&self, k: usize) -> f64 {
        match self.kind {
            LawKind::Geometric { r } => (1.0 - r) * r.powi(k as i32),
            _ => self.pmf.get(k).copied().unwrap_or(0.0),
        }
    }

    /// Generating function `f(s) = E s^ξ` on `[0, 1]`.
    pub fn pgf(&self, s: f64) -> f64 {
        match self.kind {
            LawKind::Geometric { r } => (1.0 - r) / (1.0 - r * s),
            _ => self.pmf.iter().rev().fold(0.0, |acc, p| acc * s + p),
        }
    }

    /// Complement map `h(u) = 1 - f(1 - u)` for `u ∈ [0, 1]`.
    pub fn complement(&self, u: f64) -> f64 {
        match self.kind {
            LawKind::Geometric { r } => r * u / (1.0 - r + r * u),
            _ => {
                if u >= 1.0 {
                    return 1.0 - self.pmf[0];
                }
                // 1 - (1-u)^k = -expm1(k ln(1-u))
                let l = (-u).ln_1p();
                self.pmf
                    .iter()
                    .enumerate()
                    .skip(1)
                    .map(|(k, p)| p * -(k as f64 * l).exp_m1())
                    .sum()
            }
        }
    }

    /// Draws one offspring count.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        match self.kind {
            LawKind::Geometric { r } => {
                if r == 0.0 {
                    return 0;
                }
                let u: f64 = 1.0 - rng.random::<f64>();
                (u.ln() / r.ln()).floor() as u64
            }
            _ => {
                let u: f64 = rng.random();
                self.cdf.partition_point(|&c| c <= u) as u64
            }
        }
    }

    /// Same family with the mean multiplied by `factor > 0`.
    pub(crate) fn rescaled(&self, factor: f64) -> std::result::Result<Self, String> {
        if !(factor.is_finite() && factor > 0.0) {
            return Err(format!("scale factor {factor} is invalid"));
        }
        match self.kind {
            LawKind::Geometric { .. } => {
                Self::geometric_with_mean(self.mean * factor).map_err(|e| e.to_string())
            }
            LawKind::PoissonTruncated { mean, cutoff } => {
                let target = self.mean * factor;
                if target >= cutoff as f64 {
                    return Err(format!(
                        "target mean {target} is not reachable below the cutoff {cutoff}"
                    ));
                }
                let m = solve_truncated_poisson_mean(target, cutoff, mean);
                Self::poisson_truncated(m, cutoff).map_err(|e| e.to_string())
            }
            LawKind::FinitePmf { .. } => {
                Err("finite pmf laws have no canonical family for exact mean rescaling".to_string())
            }
        }
    }
}

fn truncated_poisson_pmf(mean: f64, cutoff: usize) -> Vec<f64> {
    let mut pmf = Vec::with_capacity(cutoff + 1);
    let mut p = (-mean).exp();
    let mut head = 0.0;
    for k in 0..cutoff {
        pmf.push(p);
        head += p;
        p *= mean / (k + 1) as f64;
    }
    pmf.push((1.0 - head).max(0.0));
    pmf
}

fn truncated_poisson_mean(mean: f64, cutoff: usize) -> f64 {
    truncated_poisson_pmf(mean, cutoff)
        .iter()
        .enumerate()
        .map(|(k, p)| k as f64 * p)
        .sum()
}

/// Inverts the (increasing) truncated mean by bisection.
fn solve_truncated_poisson_mean(target: f64, cutoff: usize, hint: f64) -> f64 {
    let mut lo = 0.0;
    let mut hi = hint.max(target).max(1.0);
    while truncated_poisson_mean(hi, cutoff) < target {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if truncated_poisson_mean(mid, cutoff) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}
