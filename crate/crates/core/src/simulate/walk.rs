//! Exit times of the centred walk and its law conditioned to stay positive.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::sampling::CumulativeKernel;
use super::{run_tasks, MeanEstimate, RandomSource, Task, CHUNK_SIZE};
use crate::envmodel::stationary;
use crate::linalg::{Matrix, Vector};
use crate::{Error, Result};

const CENTERING_TOL: f64 = 1e-6;
const ROUND_CHUNKS: u64 = 16;
const MIN_RATE: f64 = 1e-4;
const MIN_ATTEMPTS: u64 = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExitStatistics {
    pub n: usize,
    pub y: f64,
    /// `P̂(τ_y > n)`.
    pub survival: MeanEstimate,
    /// `V̂ = Ê[(y + S_n); τ_y > n]`.
    pub harmonic: MeanEstimate,
}

fn check_centered(kernel: &Matrix, rho: &[f64]) -> Result<()> {
    if rho.len() != kernel.nrows() {
        return Err(Error::Dimension(format!(
            "{} increments for a {}-state kernel",
            rho.len(),
            kernel.nrows()
        )));
    }
    let pi = stationary(kernel)?;
    let mean = pi.dot(&Vector::from_column_slice(rho));
    if mean.abs() > CENTERING_TOL {
        return Err(Error::Precondition(format!(
            "walk is not centred: stationary mean of the increments is {mean:e}"
        )));
    }
    Ok(())
}

/// Walks one path; returns `y + S_n` if `y + S_k > 0` for all `k ≤ n`.
#[inline]
fn surviving_endpoint<R: rand::Rng + ?Sized>(
    ck: &CumulativeKernel,
    rho: &[f64],
    start: usize,
    y: f64,
    n: usize,
    rng: &mut R,
) -> Option<f64> {
    let mut x = start;
    let mut level = y;
    for _ in 0..n {
        x = ck.step(x, rng);
        level += rho[x];
        if level <= 0.0 {
            return None;
        }
    }
    Some(level)
}

/// Estimates `P_i(τ_y > n)` and `E_i[(y + S_n); τ_y > n]` for a centred
/// walk driven by `kernel`.
pub fn exit_statistics(
    kernel: &Matrix,
    rho: &[f64],
    start: usize,
    y: f64,
    n: usize,
    n_samples: u64,
    source: RandomSource,
) -> Result<ExitStatistics> {
    check_centered(kernel, rho)?;
    if n_samples < 2 {
        return Err(Error::Config("at least 2 samples are needed".into()));
    }
    let ck = CumulativeKernel::new(kernel);
    let tasks = [Task {
        source: source.substream(n as u64).substream(start as u64),
        n_samples,
    }];
    let out = run_tasks(&tasks, 2, |_, rng, sums| {
        if let Some(level) = surviving_endpoint(&ck, rho, start, y, n, rng) {
            sums.add(0, 1.0);
            sums.add(1, level);
        }
    });
    Ok(ExitStatistics {
        n,
        y,
        survival: out[0][0],
        harmonic: out[0][1],
    })
}

/// `Φ⁺(t) = 1 - e^{-t²/2}` for `t ≥ 0`.
pub fn rayleigh_cdf(t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else {
        -(-0.5 * t * t).exp_m1()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RayleighTest {
    /// Kolmogorov–Smirnov distance to `Φ⁺`.
    pub ks: f64,
    pub accepted: usize,
    pub attempts: u64,
    pub acceptance_rate: f64,
}

/// Rejection-samples walks with `τ_y > n` until `n_accept` are kept and
/// compares the law of `(y + S_n) / (σ √n)` with the Rayleigh law.
///
/// Attempts run in rounds of a fixed number of chunks and the first
/// `n_accept` acceptances in chunk order are used, so the result depends
/// only on the seed.
#[allow(clippy::too_many_arguments)]
pub fn rayleigh_ks(
    kernel: &Matrix,
    rho: &[f64],
    sigma: f64,
    start: usize,
    y: f64,
    n: usize,
    n_accept: usize,
    source: RandomSource,
) -> Result<RayleighTest> {
    check_centered(kernel, rho)?;
    if !(sigma > 0.0) || n == 0 || n_accept == 0 {
        return Err(Error::Config(format!(
            "rayleigh_ks needs σ > 0, n ≥ 1 and n_accept ≥ 1 (σ = {sigma}, n = {n}, n_accept = {n_accept})"
        )));
    }
    let ck = CumulativeKernel::new(kernel);
    let src = source.substream(n as u64).substream(start as u64);
    let scale = 1.0 / (sigma * (n as f64).sqrt());
    let mut kept: Vec<f64> = Vec::with_capacity(n_accept);
    let mut attempts = 0u64;
    let mut round = 0u64;
    while kept.len() < n_accept {
        let batches: Vec<Vec<f64>> = (round * ROUND_CHUNKS..(round + 1) * ROUND_CHUNKS)
            .into_par_iter()
            .map(|c| {
                let mut rng = src.chunk_rng(c);
                (0..CHUNK_SIZE)
                    .filter_map(|_| surviving_endpoint(&ck, rho, start, y, n, &mut rng))
                    .map(|level| level * scale)
                    .collect()
            })
            .collect();
        for b in batches {
            if kept.len() >= n_accept {
                // acceptances past the target are discarded with their attempts
                break;
            }
            attempts += CHUNK_SIZE;
            kept.extend(b);
        }
        round += 1;
        let rate = kept.len() as f64 / attempts as f64;
        if kept.len() < n_accept && attempts >= MIN_ATTEMPTS && rate < MIN_RATE {
            return Err(Error::Feasibility { rate, attempts });
        }
    }
    kept.truncate(n_accept);
    kept.sort_by(f64::total_cmp);
    let m = kept.len() as f64;
    let ks = kept
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let f = rayleigh_cdf(t);
            (((k + 1) as f64 / m) - f).max(f - k as f64 / m)
        })
        .fold(0.0, f64::max);
    Ok(RayleighTest {
        ks,
        accepted: kept.len(),
        attempts,
        acceptance_rate: kept.len() as f64 / attempts as f64,
    })
}
