use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::envmodel::EnvironmentModel;
use crate::linalg::Matrix;
use crate::pathfn::EnvPath;

/// Row-wise cumulative distribution of a stochastic matrix for inverse-CDF
/// sampling. The last atom of each row closes at exactly 1.
#[derive(Debug, Clone)]
pub(crate) struct CumulativeKernel {
    d: usize,
    cdf: Vec<f64>,
}

impl CumulativeKernel {
    pub(crate) fn new(kernel: &Matrix) -> Self {
        let d = kernel.nrows();
        let mut cdf = vec![0.0; d * d];
        for i in 0..d {
            let row = &mut cdf[i * d..(i + 1) * d];
            let mut acc = 0.0;
            for (j, c) in row.iter_mut().enumerate() {
                acc += kernel[(i, j)];
                *c = acc;
            }
            let last = (0..d)
                .rev()
                .find(|&j| kernel[(i, j)] > 0.0)
                .unwrap_or(d - 1);
            for c in &mut row[last..] {
                *c = 1.0;
            }
        }
        Self { d, cdf }
    }

    #[inline]
    pub(crate) fn step<R: Rng + ?Sized>(&self, from: usize, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let row = &self.cdf[from * self.d..(from + 1) * self.d - 1];
        // rows are non-decreasing and close at 1 > u: the index is the count
        // of atoms at or below u, computed without branches
        row.iter().map(|&c| usize::from(u >= c)).sum()
    }
}

/// Draws `X_1, …, X_n` from `kernel` started at `start`; partial sums use `rho`.
pub fn sample_environment<R: Rng + ?Sized>(
    kernel: &Matrix,
    rho: &[f64],
    start: usize,
    n: usize,
    rng: &mut R,
) -> EnvPath {
    let ck = CumulativeKernel::new(kernel);
    let mut steps = Vec::with_capacity(n);
    let mut x = start;
    for _ in 0..n {
        x = ck.step(x, rng);
        steps.push(x);
    }
    EnvPath::from_rho(rho, start, steps)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BranchingOutcome {
    /// `Z_n`, or `None` once the population exceeded the cap.
    pub population: Option<u64>,
    /// `X_n`.
    pub state: usize,
}

impl BranchingOutcome {
    /// Survival with capped runs counted as surviving.
    pub fn survived(&self) -> bool {
        self.population != Some(0)
    }
}

/// Simulates `(X_k, Z_k)` for `n` generations from `Z_0 = 1`, `X_0 = start`.
pub fn sample_branching<R: Rng + ?Sized>(
    model: &EnvironmentModel,
    start: usize,
    n: usize,
    rng: &mut R,
    cap: u64,
) -> BranchingOutcome {
    branching_with(
        model,
        &CumulativeKernel::new(model.transition()),
        start,
        n,
        rng,
        cap,
    )
}

pub(crate) fn branching_with<R: Rng + ?Sized>(
    model: &EnvironmentModel,
    ck: &CumulativeKernel,
    start: usize,
    n: usize,
    rng: &mut R,
    cap: u64,
) -> BranchingOutcome {
    let mut x = start;
    let mut z: Option<u64> = Some(1);
    for _ in 0..n {
        x = ck.step(x, rng);
        if let Some(parents) = z {
            if parents > 0 {
                let law = model.law(x);
                let mut children = 0u64;
                for _ in 0..parents {
                    children += law.sample(rng);
                    if children > cap {
                        break;
                    }
                }
                z = (children <= cap).then_some(children);
            }
        }
    }
    BranchingOutcome {
        population: z,
        state: x,
    }
}
