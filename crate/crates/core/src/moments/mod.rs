//! Exact moments of two-layer compositions and the Monte-Carlo machinery that
//! checks them against direct simulation of the un-marginalized process.

mod fourth;
mod gaussian;
mod report;
mod sampler;

pub use fourth::{
    fourth_moment_sc_pairing, fourth_moment_se_pairing, isserlis_fourth, p_pairing, q_pairing, sc_pair_product,
    sc_pairing_margin, se_pair_product, se_pairing_margin, PairStats, Quartet,
};
pub use gaussian::{gauss_linear_expectation, gauss_quadratic_expectation, sc_pair_expectation, MvnSpec};
pub use report::{
    analytic_fourth_moments, heavy_tail_report, second_moment_checks, HeavyTailOptions, HeavyTailReport, QuartetRow,
    SecondMomentCheck, SingleCrossForm,
};
pub use sampler::{sign_flip_symmetry_check, sign_flip_symmetry_check_with_mean, AncestralSampler};

use serde::{Deserialize, Serialize};

/// Number of batches used for batch-means standard errors.
pub const BATCHES: usize = 100;

/// Monte-Carlo estimate of an expectation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentEstimate {
    pub value: f64,
    pub std_error: f64,
    pub n_samples: u64,
    pub seed: u64,
}

impl MomentEstimate {
    /// Signed distance to `target` in standard errors.
    pub fn z_score(&self, target: f64) -> f64 {
        if self.std_error == 0.0 {
            if self.value == target {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            (self.value - target) / self.std_error
        }
    }

    pub fn agrees_with(&self, target: f64, n_se: f64) -> bool {
        self.z_score(target).abs() <= n_se
    }

    /// Combine per-batch sums into an estimate. `batch_counts[b]` replicates
    /// produced `batch_sums[b]`.
    pub(crate) fn from_batches(batch_sums: &[f64], batch_counts: &[u64], seed: u64) -> Self {
        let n: u64 = batch_counts.iter().sum();
        let value = batch_sums.iter().sum::<f64>() / n as f64;
        let means: Vec<f64> =
            batch_sums.iter().zip(batch_counts).filter(|(_, &c)| c > 0).map(|(s, &c)| s / c as f64).collect();
        let b = means.len() as f64;
        let std_error = if means.len() > 1 {
            let m = means.iter().sum::<f64>() / b;
            (means.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (b - 1.0) / b).sqrt()
        } else {
            0.0
        };
        MomentEstimate { value, std_error, n_samples: n, seed }
    }
}

/// Replicates assigned to batch `b` when `n` is split over [`BATCHES`].
pub(crate) fn batch_size(n: u64, b: usize) -> u64 {
    let base = n / BATCHES as u64;
    base + u64::from((b as u64) < n % BATCHES as u64)
}
