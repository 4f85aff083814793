//! Exact functionals of a fixed environment path and two exact survival
//! oracles.
//!
//! Given the environment, the population survives `n` generations with
//! probability `q_n(0) = 1 - f_{X_1} ∘ ⋯ ∘ f_{X_n}(0)`. Compositions are
//! evaluated through the complement maps `h(u) = 1 - f(1 - u)`, innermost
//! law first.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::envmodel::{stationary, EnvironmentModel, OffspringLaw};
use crate::linalg::Matrix;
use crate::{Error, Result};

/// Largest number of environment paths [`enumerate_survival`] will visit.
pub const ENUMERATION_LIMIT: f64 = 1e7;

const G_SWITCH: f64 = 1e-6;
const G_LIMIT: f64 = 1e-9;
const ETA_SLACK: f64 = 1e-12;
const DP_MASS_TOL: f64 = 1e-12;

/// `g(s) = 1/(1 - f(s)) - 1/(f'(1)(1 - s))` on `[0, 1]`.
///
/// For `1 - s < 1e-6` a Taylor expansion replaces the defining formula,
/// and below `1e-9` the limit `f''(1) / (2 f'(1)²)` is returned.
pub fn g_eval(law: &OffspringLaw, s: f64) -> f64 {
    g_complement(law, 1.0 - s)
}

/// `g(1 - u)`, the form used along paths where `u` is known exactly.
pub(crate) fn g_complement(law: &OffspringLaw, u: f64) -> f64 {
    let m = law.mean();
    let f2 = law.second_factorial_moment();
    let bound = f2 / (m * m);
    if law.is_linear_fractional() {
        // 1/(1 - f) is affine in 1/(1 - s) with the same slope as the mean term
        return 0.5 * bound;
    }
    let g = if u >= G_SWITCH {
        1.0 / law.complement(u) - 1.0 / (m * u)
    } else if u >= G_LIMIT {
        let f3 = law.third_factorial_moment();
        0.5 * bound + u * (f2 * f2 / (4.0 * m * m) - f3 / (6.0 * m)) / m
    } else {
        0.5 * bound
    };
    g.clamp(0.0, bound)
}

/// An environment path `X_0 = start, X_1, …, X_n` with `S_k = Σ_{l≤k} ρ(X_l)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvPath {
    pub start: usize,
    pub steps: Vec<usize>,
    /// `S_0 = 0, S_1, …, S_n`.
    pub partial_sums: Vec<f64>,
}

impl EnvPath {
    pub fn new(model: &EnvironmentModel, start: usize, steps: Vec<usize>) -> Self {
        Self::from_rho(model.rho(), start, steps)
    }

    pub fn from_rho(rho: &[f64], start: usize, steps: Vec<usize>) -> Self {
        let mut partial_sums = Vec::with_capacity(steps.len() + 1);
        let mut s = 0.0;
        partial_sums.push(s);
        for &x in &steps {
            s += rho[x];
            partial_sums.push(s);
        }
        Self {
            start,
            steps,
            partial_sums,
        }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// `X_n`, or the start for an empty path.
    pub fn end(&self) -> usize {
        self.steps.last().copied().unwrap_or(self.start)
    }

    pub fn s_n(&self) -> f64 {
        *self.partial_sums.last().expect("S_0 is always present")
    }
}

/// `q_n(s)` along a path by both routes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QPath {
    /// Backward composition of the generating functions.
    pub direct: f64,
    /// Reciprocal of the Agresti sum.
    pub recursive: f64,
    /// Largest `g` term met in the sum.
    pub max_eta: f64,
}

/// `q_n(s) = 1 - f_{X_1} ∘ ⋯ ∘ f_{X_n}(s)`, directly and through
/// `q_n(s)^{-1} = e^{-S_n}/(1-s) + Σ_{k<n} e^{-S_k} g_{X_{k+1}}(f_{X_{k+2}} ∘ ⋯ ∘ f_{X_n}(s))`.
///
/// Every `g` term is checked against `max_i f_i''(1)/f_i'(1)²`.
pub fn q_along_path(model: &EnvironmentModel, path: &EnvPath, s: f64) -> Result<QPath> {
    if !(0.0..1.0).contains(&s) {
        return Err(Error::Domain(format!("q_n(s) needs s in [0, 1), got {s}")));
    }
    let laws = model.laws();
    let eta_bound = model.eta_bound();
    let n = path.len();
    let mut u = 1.0 - s;
    let mut sum = (-path.s_n()).exp() / u;
    let mut max_eta = 0.0_f64;
    // after processing X_{k+1}, u = 1 - f_{X_{k+1}} ∘ ⋯ ∘ f_{X_n}(s)
    for k in (0..n).rev() {
        let law = &laws[path.steps[k]];
        let eta = g_complement(law, u);
        if eta > eta_bound * (1.0 + ETA_SLACK) {
            return Err(Error::Numerical(format!(
                "g term {eta} exceeds its bound {eta_bound}"
            )));
        }
        max_eta = max_eta.max(eta);
        sum += (-path.partial_sums[k]).exp() * eta;
        u = law.complement(u);
    }
    Ok(QPath {
        direct: u,
        recursive: 1.0 / sum,
        max_eta,
    })
}

/// `q_n(0)` by backward composition.
pub(crate) fn q_direct(laws: &[OffspringLaw], steps: &[usize]) -> f64 {
    steps.iter().rev().fold(1.0, |u, &x| laws[x].complement(u))
}

/// Dual survival quantity along a dual path `X*_1, …, X*_m` from `j`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QDual {
    /// `[1/(1-f_j(0)) + Σ_{k≤m} e^{-S*_k} η*_k(j)]^{-1}`.
    pub recursive: f64,
    /// `e^{S*_m} (1 - f_{X*_m} ∘ ⋯ ∘ f_{X*_1} ∘ f_j(0))`.
    pub direct: f64,
}

/// `q*_m(j)` with `S*_k = -Σ_{l≤k} ρ(X*_l)` and
/// `η*_k(j) = g_{X*_k}(f_{X*_{k-1}} ∘ ⋯ ∘ f_{X*_1} ∘ f_j(0))`.
pub fn q_dual_along_path(model: &EnvironmentModel, j: usize, dual_steps: &[usize]) -> QDual {
    let laws = model.laws();
    let rho = model.rho();
    let mut w = laws[j].complement(1.0);
    let mut sum = 1.0 / w;
    let mut s_star = 0.0;
    for &x in dual_steps {
        s_star -= rho[x];
        sum += (-s_star).exp() * g_complement(&laws[x], w);
        w = laws[x].complement(w);
    }
    QDual {
        recursive: 1.0 / sum,
        direct: s_star.exp() * w,
    }
}

/// First `k ≥ 1` with `y + S_k ≤ 0`; `None` when the walk stays positive.
pub fn exit_time(path: &EnvPath, y: f64) -> Option<usize> {
    path.partial_sums
        .iter()
        .skip(1)
        .position(|s| y + s <= 0.0)
        .map(|k| k + 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TableKind {
    ExactEnum,
    DpLower,
    DpUpper,
    Mc,
}

impl TableKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TableKind::ExactEnum => "exact-enum",
            TableKind::DpLower => "dp-lower",
            TableKind::DpUpper => "dp-upper",
            TableKind::Mc => "mc",
        }
    }
}

/// `d × d` grid indexed by (start `i`, terminal state `j`) at generation `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalTable<T = f64> {
    pub n: usize,
    pub values: Vec<Vec<T>>,
    pub kind: TableKind,
}

impl<T: Copy> SurvivalTable<T> {
    pub fn get(&self, i: usize, j: usize) -> T {
        self.values[i][j]
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

impl SurvivalTable<f64> {
    pub fn to_matrix(&self) -> Matrix {
        let d = self.dim();
        Matrix::from_fn(d, d, |i, j| self.values[i][j])
    }
}

/// Exact `P_i(Z_n > 0, X_n = j)` summed over all `dⁿ` environment paths.
///
/// Paths are extended backwards from the terminal state so each node of the
/// suffix tree costs one complement evaluation.
pub fn enumerate_survival(model: &EnvironmentModel, n: usize) -> Result<SurvivalTable> {
    let d = model.dim();
    let paths = (d as f64).powi(n as i32);
    if paths > ENUMERATION_LIMIT {
        return Err(Error::TooLarge {
            paths,
            limit: ENUMERATION_LIMIT,
        });
    }
    if n == 0 {
        let values = (0..d)
            .map(|i| (0..d).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        return Ok(SurvivalTable {
            n,
            values,
            kind: TableKind::ExactEnum,
        });
    }
    let p = model.transition();
    let laws = model.laws();
    let columns: Vec<Vec<f64>> = (0..d)
        .into_par_iter()
        .map(|j| {
            // acc[x] = Σ over suffixes starting at X_1 = x of weight × q
            let mut acc = vec![0.0; d];
            suffix_walk(p, laws, j, n - 1, 1.0, laws[j].complement(1.0), &mut acc);
            (0..d)
                .map(|i| (0..d).map(|x| p[(i, x)] * acc[x]).sum())
                .collect()
        })
        .collect();
    let values = (0..d)
        .map(|i| (0..d).map(|j| columns[j][i]).collect())
        .collect();
    Ok(SurvivalTable {
        n,
        values,
        kind: TableKind::ExactEnum,
    })
}

fn suffix_walk(
    p: &Matrix,
    laws: &[OffspringLaw],
    head: usize,
    remaining: usize,
    weight: f64,
    u: f64,
    acc: &mut [f64],
) {
    if remaining == 0 {
        acc[head] += weight * u;
        return;
    }
    for x in 0..p.nrows() {
        let w = weight * p[(x, head)];
        if w > 0.0 {
            suffix_walk(p, laws, x, remaining - 1, w, laws[x].complement(u), acc);
        }
    }
}

/// Lower and upper bounds on `P_i(Z_n > 0, X_n = j)` from the exact joint
/// law of `(X_k, Z_k)` with populations above `cap` sent to an absorbing
/// overflow bucket. The upper table counts overflow as survival, the lower
/// table discards it.
pub fn dp_survival_bounds(
    model: &EnvironmentModel,
    n: usize,
    cap: usize,
) -> Result<(SurvivalTable, SurvivalTable)> {
    if cap == 0 {
        return Err(Error::Domain("dp_survival_bounds needs a cap M ≥ 1".into()));
    }
    let d = model.dim();
    let p = model.transition();
    let powers: Vec<Vec<Vec<f64>>> = model
        .laws()
        .par_iter()
        .map(|law| convolution_powers(law, cap))
        .collect();
    let rows: Vec<Result<(Vec<f64>, Vec<f64>)>> = (0..d)
        .into_par_iter()
        .map(|i| {
            let mut mass = vec![vec![0.0; cap + 1]; d];
            let mut overflow = vec![0.0; d];
            mass[i][1] = 1.0;
            for _ in 0..n {
                let mut next = vec![vec![0.0; cap + 1]; d];
                let mut next_over = vec![0.0; d];
                for x in 0..d {
                    for y in 0..d {
                        let pxy = p[(x, y)];
                        if pxy == 0.0 {
                            continue;
                        }
                        next_over[y] += pxy * overflow[x];
                        let target = &mut next[y];
                        for (z, &m) in mass[x].iter().enumerate() {
                            if m == 0.0 {
                                continue;
                            }
                            let row = &powers[y][z];
                            let w = pxy * m;
                            for (t, &c) in target.iter_mut().zip(row) {
                                *t += w * c;
                            }
                            // tail of the z-fold convolution beyond the cap
                            let kept: f64 = row.iter().sum();
                            next_over[y] += w * (1.0 - kept).max(0.0);
                        }
                    }
                }
                mass = next;
                overflow = next_over;
                let total: f64 = mass.iter().flatten().sum::<f64>() + overflow.iter().sum::<f64>();
                if (total - 1.0).abs() > DP_MASS_TOL {
                    return Err(Error::Numerical(format!(
                        "dp mass drifted to {total} from start state {i}"
                    )));
                }
            }
            let lower: Vec<f64> = mass.iter().map(|m| m[1..].iter().sum()).collect();
            let upper = lower.iter().zip(&overflow).map(|(l, o)| l + o).collect();
            Ok((lower, upper))
        })
        .collect();
    let mut lower = Vec::with_capacity(d);
    let mut upper = Vec::with_capacity(d);
    for r in rows {
        let (l, u) = r?;
        lower.push(l);
        upper.push(u);
    }
    Ok((
        SurvivalTable {
            n,
            values: lower,
            kind: TableKind::DpLower,
        },
        SurvivalTable {
            n,
            values: upper,
            kind: TableKind::DpUpper,
        },
    ))
}

/// `powers[z]` is the pmf of a sum of `z` offspring, restricted to `0..=cap`.
fn convolution_powers(law: &OffspringLaw, cap: usize) -> Vec<Vec<f64>> {
    let pmf: Vec<f64> = (0..=cap).map(|k| law.pmf(k)).collect();
    let mut powers = Vec::with_capacity(cap + 1);
    let mut current = vec![0.0; cap + 1];
    current[0] = 1.0;
    powers.push(current.clone());
    for _ in 1..=cap {
        let mut next = vec![0.0; cap + 1];
        for (a, &ca) in current.iter().enumerate() {
            if ca == 0.0 {
                continue;
            }
            for (b, &pb) in pmf[..=cap - a].iter().enumerate() {
                next[a + b] += ca * pb;
            }
        }
        powers.push(next.clone());
        current = next;
    }
    powers
}

/// Both sides of the duality identity
/// `E_i(g(X_1..X_n); X_{n+1} = j) = E*_j(g(X*_n..X*_1); X*_{n+1} = i) ν(j)/ν(i)`
/// by enumeration of all `dⁿ` intermediate sequences.
pub fn duality_sides<G>(kernel: &Matrix, n: usize, g: G) -> Result<(Matrix, Matrix)>
where
    G: Fn(&[usize]) -> f64,
{
    let d = kernel.nrows();
    let paths = (d as f64).powi(n as i32);
    if paths > ENUMERATION_LIMIT {
        return Err(Error::TooLarge {
            paths,
            limit: ENUMERATION_LIMIT,
        });
    }
    let nu = stationary(kernel)?;
    let dual = crate::envmodel::dual_kernel(kernel, &nu)?;
    let mut lhs = Matrix::zeros(d, d);
    let mut rhs = Matrix::zeros(d, d);
    let mut seq = vec![0usize; n];
    let mut rev = vec![0usize; n];
    loop {
        let gv = g(&seq);
        // forward chain i → seq[0] → … → seq[n-1] → j
        let inner: f64 = seq.windows(2).map(|w| kernel[(w[0], w[1])]).product();
        // dual chain j → seq[n-1] → … → seq[0] → i, evaluated on g(X*_n..X*_1) = g(seq)
        let inner_dual: f64 = seq.windows(2).map(|w| dual[(w[1], w[0])]).product();
        rev.copy_from_slice(&seq);
        rev.reverse();
        for i in 0..d {
            for j in 0..d {
                let (fwd, bwd) = if n == 0 {
                    (kernel[(i, j)], dual[(j, i)])
                } else {
                    (
                        kernel[(i, seq[0])] * inner * kernel[(seq[n - 1], j)],
                        dual[(j, seq[n - 1])] * inner_dual * dual[(seq[0], i)],
                    )
                };
                lhs[(i, j)] += fwd * gv;
                rhs[(i, j)] += bwd * gv * nu[j] / nu[i];
            }
        }
        // odometer over {0..d}^n
        let mut pos = 0;
        loop {
            if pos == n {
                return Ok((lhs, rhs));
            }
            seq[pos] += 1;
            if seq[pos] < d {
                break;
            }
            seq[pos] = 0;
            pos += 1;
        }
    }
}
