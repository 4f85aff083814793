//! Shared inputs for the benchmarks.

use bpre_core::{fixtures, EnvironmentModel};

/// The four bundled fixtures, in order A to D.
pub fn models() -> Vec<(&'static str, EnvironmentModel)> {
    fixtures::all().expect("fixtures calibrate")
}

/// A random-looking primitive `d`-state model with geometric offspring,
/// for scaling benchmarks.
pub fn dense_model(d: usize) -> EnvironmentModel {
    let rows: Vec<Vec<f64>> = (0..d)
        .map(|i| {
            let w: Vec<f64> = (0..d)
                .map(|j| 1.0 + ((i * 7 + j * 13) % 11) as f64)
                .collect();
            let s: f64 = w.iter().sum();
            w.into_iter().map(|x| x / s).collect()
        })
        .collect();
    let laws = (0..d)
        .map(|i| bpre_core::OffspringLaw::geometric_with_mean(0.5 + i as f64 / d as f64).unwrap())
        .collect();
    EnvironmentModel::from_rows(&rows, laws).expect("valid model")
}
