//! Seeded Monte Carlo over environment paths and populations.
//!
//! Work is split into fixed-size chunks. Chunk `c` of stream `s` draws from
//! its own generator derived from `(master_seed, s, c)`, chunk results are
//! collected in chunk order and combined by a fixed pairwise tree, so every
//! estimate is bit-identical for a given seed whatever the thread count.

mod estimators;
mod sampling;
mod walk;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_xoshiro::Xoshiro256PlusPlus;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use estimators::{
    estimate_dual, estimate_dual_table, estimate_population, estimate_qn_mc, estimate_qn_tilted,
    DEFAULT_POPULATION_CAP,
};
pub use sampling::{sample_branching, sample_environment, BranchingOutcome};
pub use walk::{exit_statistics, rayleigh_cdf, rayleigh_ks, ExitStatistics, RayleighTest};

/// Samples per chunk.
pub const CHUNK_SIZE: u64 = 4096;

/// A reproducible family of random streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RandomSource {
    pub master_seed: u64,
    pub stream_id: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl RandomSource {
    pub fn new(master_seed: u64) -> Self {
        Self {
            master_seed,
            stream_id: 0,
        }
    }

    /// Child stream identified by `tag`; distinct tags give distinct streams.
    pub fn substream(&self, tag: u64) -> Self {
        Self {
            master_seed: self.master_seed,
            stream_id: splitmix64(self.stream_id ^ splitmix64(tag.wrapping_add(0x5bd1_e995))),
        }
    }

    /// Generator for chunk `chunk`: seeded from 32 disjoint bytes of the
    /// ChaCha20 keystream of `(master_seed, stream_id)`.
    pub fn chunk_rng(&self, chunk: u64) -> Xoshiro256PlusPlus {
        let mut cha = ChaCha20Rng::seed_from_u64(self.master_seed);
        cha.set_stream(self.stream_id);
        cha.set_word_pos(u128::from(chunk) * 8);
        let mut seed = [0u8; 32];
        cha.fill_bytes(&mut seed);
        Xoshiro256PlusPlus::from_seed(seed)
    }
}

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n_samples: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EstimatorKind {
    /// Full population simulation.
    Population,
    /// Environment sampled under `P`, survival integrated exactly per path.
    EnvMarginal,
    /// Environment sampled under the tilted kernel and reweighted.
    Tilted { lambda: f64 },
    /// Dual tilted chain at `λ = 1`, reversed in time.
    Dual,
}

impl EstimatorKind {
    pub fn label(&self) -> String {
        match self {
            EstimatorKind::Population => "pop".into(),
            EstimatorKind::EnvMarginal => "env".into(),
            EstimatorKind::Tilted { lambda } => format!("tilted({lambda})"),
            EstimatorKind::Dual => "dual".into(),
        }
    }
}

/// Estimate of `P_i(Z_n > 0, X_n = j)`, stored as `mean · e^{log_scale}`.
///
/// Tilted estimators carry `log_scale = n ln k(λ)` so that very small
/// probabilities stay representable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurvivalEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n_samples: u64,
    pub estimator: EstimatorKind,
    pub log_scale: f64,
}

impl SurvivalEstimate {
    pub fn probability(&self) -> f64 {
        self.mean * self.log_scale.exp()
    }

    pub fn probability_stderr(&self) -> f64 {
        self.stderr * self.log_scale.exp()
    }

    pub fn relative_stderr(&self) -> f64 {
        self.stderr / self.mean.abs()
    }

    /// Number of standard errors separating the estimate from `value`,
    /// with an extra independent standard error `other_stderr`.
    pub fn z_score(&self, value: f64, other_stderr: f64) -> f64 {
        let se = self.probability_stderr().hypot(other_stderr);
        (self.probability() - value).abs() / se
    }
}

/// Running sums for a fixed set of cells; cells not touched by a sample
/// implicitly received the value 0.
#[derive(Debug, Clone)]
pub(crate) struct CellSums {
    sum: Vec<f64>,
    sumsq: Vec<f64>,
}

impl CellSums {
    fn new(cells: usize) -> Self {
        Self {
            sum: vec![0.0; cells],
            sumsq: vec![0.0; cells],
        }
    }

    #[inline]
    pub(crate) fn add(&mut self, cell: usize, value: f64) {
        self.sum[cell] += value;
        self.sumsq[cell] += value * value;
    }

    fn merge(mut self, other: &Self) -> Self {
        for (a, b) in self.sum.iter_mut().zip(&other.sum) {
            *a += b;
        }
        for (a, b) in self.sumsq.iter_mut().zip(&other.sumsq) {
            *a += b;
        }
        self
    }

    fn estimate(&self, cell: usize, n: u64) -> MeanEstimate {
        let nf = n as f64;
        let mean = self.sum[cell] / nf;
        let var = if n > 1 {
            ((self.sumsq[cell] - nf * mean * mean) / (nf - 1.0)).max(0.0)
        } else {
            f64::NAN
        };
        MeanEstimate {
            mean,
            stderr: (var / nf).sqrt(),
            n_samples: n,
        }
    }
}

/// Combines chunk results by a balanced pairwise tree in chunk order.
fn tree_reduce(mut parts: Vec<CellSums>, cells: usize) -> CellSums {
    if parts.is_empty() {
        return CellSums::new(cells);
    }
    while parts.len() > 1 {
        let mut next = Vec::with_capacity(parts.len().div_ceil(2));
        let mut it = parts.into_iter();
        while let Some(a) = it.next() {
            next.push(match it.next() {
                Some(b) => a.merge(&b),
                None => a,
            });
        }
        parts = next;
    }
    parts.pop().expect("one part left")
}

/// One independent estimation task: `n_samples` draws from `source`.
pub(crate) struct Task {
    pub source: RandomSource,
    pub n_samples: u64,
}

/// Runs `sample` for every draw of every task, chunk-parallel, and returns
/// per-task per-cell estimates.
///
/// `sample(task_index, rng, sums)` records one draw into `sums`.
pub(crate) fn run_tasks<F>(tasks: &[Task], cells: usize, sample: F) -> Vec<Vec<MeanEstimate>>
where
    F: Fn(usize, &mut Xoshiro256PlusPlus, &mut CellSums) + Sync,
{
    let jobs: Vec<(usize, u64, u64)> = tasks
        .iter()
        .enumerate()
        .flat_map(|(t, task)| {
            let chunks = task.n_samples.div_ceil(CHUNK_SIZE);
            (0..chunks).map(move |c| {
                let len = CHUNK_SIZE.min(task.n_samples - c * CHUNK_SIZE);
                (t, c, len)
            })
        })
        .collect();
    let results: Vec<CellSums> = jobs
        .par_iter()
        .map(|&(t, c, len)| {
            let mut rng = tasks[t].source.chunk_rng(c);
            let mut sums = CellSums::new(cells);
            for _ in 0..len {
                sample(t, &mut rng, &mut sums);
            }
            sums
        })
        .collect();
    let mut per_task: Vec<Vec<CellSums>> = (0..tasks.len()).map(|_| Vec::new()).collect();
    for (&(t, _, _), r) in jobs.iter().zip(results) {
        per_task[t].push(r);
    }
    per_task
        .into_iter()
        .zip(tasks)
        .map(|(parts, task)| {
            let total = tree_reduce(parts, cells);
            (0..cells)
                .map(|c| total.estimate(c, task.n_samples))
                .collect()
        })
        .collect()
}
