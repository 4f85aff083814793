//! Survival estimators for `P_i(Z_n > 0, X_n = j)`.

use rand::Rng;

use super::sampling::{branching_with, CumulativeKernel};
use super::{run_tasks, EstimatorKind, MeanEstimate, RandomSource, SurvivalEstimate, Task};
use crate::envmodel::EnvironmentModel;
use crate::linalg::Matrix;
use crate::pathfn::{q_direct, SurvivalTable, TableKind};
use crate::spectral::tilted_chain;
use crate::{Error, Result};

/// Populations above this size count as surviving.
pub const DEFAULT_POPULATION_CAP: u64 = 1_000_000;

const TAG_PATHS: u64 = 1;
const TAG_POPULATION: u64 = 2;
const TAG_DUAL: u64 = 3;

// rescaling step for running exponentials in the forward recursion
const RESCALE_AT: f64 = 1e250;
const RESCALE_BY: f64 = 1e-250;

fn check_samples(n_samples: u64) -> Result<()> {
    if n_samples < 2 {
        return Err(Error::Config(format!(
            "at least 2 samples are needed for a standard error, got {n_samples}"
        )));
    }
    Ok(())
}

/// Samples one environment path from `start` under `kernel` and returns
/// `(X_n, ln q_n(0), S_n)`.
///
/// With all laws geometric `g ≡ 1`, so `q_n(0)^{-1} = e^{-S_n} + Σ_{k<n} e^{-S_k}`
/// is accumulated forward without storing the path; otherwise the path is
/// buffered and composed backwards.
struct PathSampler<'a> {
    model: &'a EnvironmentModel,
    kernel: CumulativeKernel,
    exp_neg_rho: Vec<f64>,
    geometric: bool,
}

impl<'a> PathSampler<'a> {
    fn new(model: &'a EnvironmentModel, kernel: &Matrix) -> Self {
        Self {
            model,
            kernel: CumulativeKernel::new(kernel),
            exp_neg_rho: model.rho().iter().map(|r| (-r).exp()).collect(),
            geometric: model.all_linear_fractional(),
        }
    }

    #[inline]
    fn sample<R: Rng + ?Sized>(
        &self,
        start: usize,
        n: usize,
        rng: &mut R,
        buf: &mut Vec<usize>,
    ) -> (usize, f64, f64) {
        let rho = self.model.rho();
        let mut x = start;
        let mut s = 0.0;
        if self.geometric {
            let mut e = 1.0;
            let mut acc = 0.0;
            let mut log_off = 0.0;
            for _ in 0..n {
                acc += e;
                x = self.kernel.step(x, rng);
                s += rho[x];
                e *= self.exp_neg_rho[x];
                if e > RESCALE_AT {
                    e *= RESCALE_BY;
                    acc *= RESCALE_BY;
                    log_off -= RESCALE_BY.ln();
                }
            }
            (x, -(acc + e).ln() - log_off, s)
        } else {
            buf.clear();
            for _ in 0..n {
                x = self.kernel.step(x, rng);
                s += rho[x];
                buf.push(x);
            }
            (x, q_direct(self.model.laws(), buf).ln(), s)
        }
    }
}

fn into_table(
    n: usize,
    per_start: Vec<Vec<MeanEstimate>>,
    estimator: EstimatorKind,
    log_scale: f64,
    factor: impl Fn(usize, usize) -> f64,
) -> SurvivalTable<SurvivalEstimate> {
    let values = per_start
        .into_iter()
        .enumerate()
        .map(|(i, row)| {
            row.into_iter()
                .enumerate()
                .map(|(j, m)| SurvivalEstimate {
                    mean: m.mean * factor(i, j),
                    stderr: m.stderr * factor(i, j),
                    n_samples: m.n_samples,
                    estimator,
                    log_scale,
                })
                .collect()
        })
        .collect();
    SurvivalTable {
        n,
        values,
        kind: TableKind::Mc,
    }
}

fn path_tasks(
    source: RandomSource,
    tilt_tag: u64,
    n: usize,
    d: usize,
    n_samples: u64,
) -> Vec<Task> {
    let base = source
        .substream(TAG_PATHS)
        .substream(tilt_tag)
        .substream(n as u64);
    (0..d)
        .map(|i| Task {
            source: base.substream(i as u64),
            n_samples,
        })
        .collect()
}

/// Environment-marginal estimator: environment paths from `P`, each
/// contributing its exact conditional survival probability `q_n(0)`.
pub fn estimate_qn_mc(
    model: &EnvironmentModel,
    n: usize,
    n_samples: u64,
    source: RandomSource,
) -> Result<SurvivalTable<SurvivalEstimate>> {
    check_samples(n_samples)?;
    let per_start = untilted(model, n, n_samples, source);
    Ok(into_table(
        n,
        per_start,
        EstimatorKind::EnvMarginal,
        0.0,
        |_, _| 1.0,
    ))
}

fn untilted(
    model: &EnvironmentModel,
    n: usize,
    n_samples: u64,
    source: RandomSource,
) -> Vec<Vec<MeanEstimate>> {
    let d = model.dim();
    let sampler = PathSampler::new(model, model.transition());
    let tasks = path_tasks(source, 0, n, d, n_samples);
    run_tasks(&tasks, d, |i, rng, sums| {
        let mut buf = Vec::new();
        let (x, log_q, _) = sampler.sample(i, n, rng, &mut buf);
        sums.add(x, log_q.exp());
    })
}

/// Importance-sampling estimator under the tilted kernel `P̃_λ`:
/// `k(λ)ⁿ v_λ(i) Ẽ_i[q_n(0) e^{-λS_n} / v_λ(X_n); X_n = j]`.
///
/// At `λ = 0` it coincides bit for bit with [`estimate_qn_mc`].
pub fn estimate_qn_tilted(
    model: &EnvironmentModel,
    lambda: f64,
    n: usize,
    n_samples: u64,
    source: RandomSource,
) -> Result<SurvivalTable<SurvivalEstimate>> {
    check_samples(n_samples)?;
    let kind = EstimatorKind::Tilted { lambda };
    if lambda == 0.0 {
        let per_start = untilted(model, n, n_samples, source);
        return Ok(into_table(n, per_start, kind, 0.0, |_, _| 1.0));
    }
    let chain = tilted_chain(model, lambda)?;
    let d = model.dim();
    let ln_v: Vec<f64> = chain.v().iter().map(|v| v.ln()).collect();
    let sampler = PathSampler::new(model, &chain.kernel);
    let tasks = path_tasks(source, lambda.to_bits(), n, d, n_samples);
    let per_start = run_tasks(&tasks, d, |i, rng, sums| {
        let mut buf = Vec::new();
        let (x, log_q, s) = sampler.sample(i, n, rng, &mut buf);
        sums.add(x, (log_q - lambda * s - ln_v[x] + ln_v[i]).exp());
    });
    let log_scale = n as f64 * chain.k().ln();
    Ok(into_table(n, per_start, kind, log_scale, |_, _| 1.0))
}

/// Crude estimator simulating whole populations; runs that exceed `cap`
/// count as surviving.
pub fn estimate_population(
    model: &EnvironmentModel,
    n: usize,
    n_samples: u64,
    source: RandomSource,
    cap: u64,
) -> Result<SurvivalTable<SurvivalEstimate>> {
    check_samples(n_samples)?;
    let d = model.dim();
    let ck = CumulativeKernel::new(model.transition());
    let base = source.substream(TAG_POPULATION).substream(n as u64);
    let tasks: Vec<Task> = (0..d)
        .map(|i| Task {
            source: base.substream(i as u64),
            n_samples,
        })
        .collect();
    let per_start = run_tasks(&tasks, d, |i, rng, sums| {
        let out = branching_with(model, &ck, i, n, rng, cap);
        if out.survived() {
            sums.add(out.state, 1.0);
        }
    });
    Ok(into_table(
        n,
        per_start,
        EstimatorKind::Population,
        0.0,
        |_, _| 1.0,
    ))
}

/// Column `(P_i(Z_{n+1} > 0, X_{n+1} = j))_i` from dual tilted chains at
/// `λ = 1` started at `j`:
/// `k(1)^{n+1} ν̃(j) v(i) e^{-ρ(j)} / (ν̃(i) v(j)) · Ẽ*_j[q*_n(j); X*_{n+1} = i]`.
pub fn estimate_dual(
    model: &EnvironmentModel,
    j: usize,
    n: usize,
    n_samples: u64,
    source: RandomSource,
) -> Result<Vec<SurvivalEstimate>> {
    let table = dual_columns(model, &[j], n, n_samples, source)?;
    Ok(table.into_iter().next().expect("one column requested"))
}

/// Full table at generation `generations ≥ 1` from the dual estimator.
pub fn estimate_dual_table(
    model: &EnvironmentModel,
    generations: usize,
    n_samples: u64,
    source: RandomSource,
) -> Result<SurvivalTable<SurvivalEstimate>> {
    if generations == 0 {
        return Err(Error::Config(
            "the dual estimator needs at least one generation".into(),
        ));
    }
    let d = model.dim();
    let cols: Vec<usize> = (0..d).collect();
    let columns = dual_columns(model, &cols, generations - 1, n_samples, source)?;
    let values = (0..d)
        .map(|i| (0..d).map(|j| columns[j][i]).collect())
        .collect();
    Ok(SurvivalTable {
        n: generations,
        values,
        kind: TableKind::Mc,
    })
}

fn dual_columns(
    model: &EnvironmentModel,
    columns: &[usize],
    n: usize,
    n_samples: u64,
    source: RandomSource,
) -> Result<Vec<Vec<SurvivalEstimate>>> {
    check_samples(n_samples)?;
    let d = model.dim();
    if let Some(&bad) = columns.iter().find(|&&j| j >= d) {
        return Err(Error::Dimension(format!(
            "state {bad} out of range for {d} states"
        )));
    }
    let chain = tilted_chain(model, 1.0)?;
    let ck = CumulativeKernel::new(&chain.dual);
    let laws = model.laws();
    let rho = model.rho();
    let base = source.substream(TAG_DUAL).substream(n as u64);
    let tasks: Vec<Task> = columns
        .iter()
        .map(|&j| Task {
            source: base.substream(j as u64),
            n_samples,
        })
        .collect();
    let per_column = run_tasks(&tasks, d, |t, rng, sums| {
        let j = columns[t];
        // w_m = 1 - f_{X*_m} ∘ ⋯ ∘ f_{X*_1} ∘ f_j(0), S*_m = -Σ ρ(X*_l)
        let mut w = laws[j].complement(1.0);
        let mut s_star = 0.0;
        let mut x = j;
        for _ in 0..n {
            x = ck.step(x, rng);
            s_star -= rho[x];
            w = laws[x].complement(w);
        }
        let last = ck.step(x, rng);
        sums.add(last, (s_star + w.ln()).exp());
    });
    let stat = &chain.stat;
    let v = chain.v();
    let log_scale = (n + 1) as f64 * chain.k().ln();
    Ok(columns
        .iter()
        .zip(per_column)
        .map(|(&j, col)| {
            col.into_iter()
                .enumerate()
                .map(|(i, m)| {
                    let pre = stat[j] * v[i] * (-rho[j]).exp() / (stat[i] * v[j]);
                    SurvivalEstimate {
                        mean: m.mean * pre,
                        stderr: m.stderr * pre,
                        n_samples: m.n_samples,
                        estimator: EstimatorKind::Dual,
                        log_scale,
                    }
                })
                .collect()
        })
        .collect())
}
