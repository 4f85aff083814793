//! Cycle-based lattice diagnostic for the increments `ρ`.
//!
//! Along a closed environment cycle `C` the walk gains `s_C = Σ_{x∈C} ρ(x)`.
//! The increments are lattice if some `(θ, a)` puts every `s_C - |C| θ` in
//! `aℤ`. Fixing a reference cycle `R` eliminates `θ`: the combinations
//! `w_C = |R| s_C - |C| s_R` must all lie in `aℤ`, and conversely a common
//! real divisor `b` of all `w_C` gives the lattice `(θ, a) = (s_R/|R|, b/|R|)`.
//! Commensurability is tested with continued-fraction convergents.

use serde::{Deserialize, Serialize};

use super::EnvironmentModel;

/// Cap on enumerated simple cycles; the diagnostic is advisory.
const MAX_CYCLES: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatticeDiagnostic {
    pub is_suspect_lattice: bool,
    /// Largest span `a` found; 0 when no lattice structure is detected.
    pub span_estimate: f64,
    /// Shift `θ` paired with `span_estimate`.
    pub theta: Option<f64>,
    pub cycles_examined: usize,
}

/// Enumerates simple cycles of the support graph (length ≤ d) and tests
/// whether their `ρ`-sums fit a common lattice at tolerance `tol`.
pub fn lattice_diagnostic(model: &EnvironmentModel, tol: f64) -> LatticeDiagnostic {
    let cycles = simple_cycles(model);
    let rho = model.rho();
    let summary: Vec<(f64, f64)> = cycles
        .iter()
        .map(|c| (c.len() as f64, c.iter().map(|&x| rho[x]).sum()))
        .collect();
    let examined = summary.len();
    let none = LatticeDiagnostic {
        is_suspect_lattice: false,
        span_estimate: 0.0,
        theta: None,
        cycles_examined: examined,
    };
    // cycles come out shortest first
    let Some(&(len_ref, s_ref)) = summary.first() else {
        return none;
    };
    let theta = s_ref / len_ref;
    let scale = summary.iter().map(|(_, s)| s.abs()).fold(1.0_f64, f64::max);
    let mut span: Option<f64> = None;
    for &(len, s) in &summary[1..] {
        let w = len_ref * s - len * s_ref;
        if w.abs() <= tol * scale {
            continue;
        }
        span = match span {
            None => Some(w.abs()),
            Some(g) => match real_gcd(g, w.abs(), tol) {
                Some(g) => Some(g),
                None => return none,
            },
        };
    }
    match span {
        Some(g) => LatticeDiagnostic {
            is_suspect_lattice: true,
            span_estimate: g / len_ref,
            theta: Some(theta),
            cycles_examined: examined,
        },
        // all cycles proportional: every residual vanishes at θ = s_R/|R|
        None => LatticeDiagnostic {
            is_suspect_lattice: true,
            span_estimate: theta.abs(),
            theta: Some(0.0),
            cycles_examined: examined,
        },
    }
}

/// Largest `g` with `a, b ∈ gℤ` at tolerance `tol`, via the best rational
/// approximation of `b / a` with denominator below `tol^{-1/3}`.
fn real_gcd(a: f64, b: f64, tol: f64) -> Option<f64> {
    let (_, q) = commensurable_ratio(b / a, tol)?;
    Some(a / q as f64)
}

/// `(p, q)` with `|x - p/q| ≤ tol·max(1, |x|)`, `q ≤ tol^{-1/3}`, from the
/// continued-fraction convergents of `x > 0`.
fn commensurable_ratio(x: f64, tol: f64) -> Option<(u64, u64)> {
    let q_max = tol.powf(-1.0 / 3.0).ceil() as u64;
    let bound = tol * x.abs().max(1.0);
    let (mut p0, mut q0, mut p1, mut q1) = (0u64, 1u64, 1u64, 0u64);
    let mut rest = x;
    for _ in 0..64 {
        let a = rest.floor();
        if a > 1e15 {
            break;
        }
        let a = a as u64;
        let (p2, q2) = (a * p1 + p0, a * q1 + q0);
        if q2 > q_max {
            break;
        }
        if (x - p2 as f64 / q2 as f64).abs() <= bound {
            return Some((p2, q2));
        }
        let frac = rest - rest.floor();
        if frac <= f64::EPSILON {
            break;
        }
        rest = 1.0 / frac;
        (p0, q0, p1, q1) = (p1, q1, p2, q2);
    }
    None
}

/// Simple cycles of the transition support, each listed once from its
/// smallest state, sorted by length.
fn simple_cycles(model: &EnvironmentModel) -> Vec<Vec<usize>> {
    let p = model.transition();
    let d = model.dim();
    let mut out = Vec::new();
    let mut path = Vec::with_capacity(d);
    let mut on_path = vec![false; d];
    for start in 0..d {
        path.clear();
        path.push(start);
        on_path[start] = true;
        extend(p, start, &mut path, &mut on_path, &mut out);
        on_path[start] = false;
        if out.len() >= MAX_CYCLES {
            break;
        }
    }
    out.sort_by_key(Vec::len);
    out
}

fn extend(
    p: &crate::Matrix,
    start: usize,
    path: &mut Vec<usize>,
    on_path: &mut [bool],
    out: &mut Vec<Vec<usize>>,
) {
    let last = *path.last().expect("path starts non-empty");
    for next in start..p.ncols() {
        if out.len() >= MAX_CYCLES || p[(last, next)] <= 0.0 {
            continue;
        }
        if next == start {
            out.push(path.clone());
        } else if !on_path[next] {
            on_path[next] = true;
            path.push(next);
            extend(p, start, path, on_path, out);
            path.pop();
            on_path[next] = false;
        }
    }
}
