//! Exact Gaussian-process regression over any [`KernelSpec`].
//!
//! Observations carry independent Gaussian noise. Everything is O(N³) through a
//! dense Cholesky factor.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;

use crate::compose::KernelSpec;
use crate::data::Dataset;
use crate::error::{check_positive, Error, Result};
use crate::rng;

/// Diagonal jitter tried in turn, as multiples of the mean diagonal.
pub const JITTER_LADDER: [f64; 4] = [0.0, 1e-10, 1e-8, 1e-6];

const LN_2PI: f64 = 1.8378770664093453;

/// Covariance matrix with its Cholesky factor.
#[derive(Debug, Clone)]
pub struct GramResult {
    pub k: DMatrix<f64>,
    /// Observation noise variance added to the diagonal before factorizing.
    pub noise: f64,
    /// Extra jitter that was needed for the factorization to succeed.
    pub jitter_added: f64,
    /// Lower-triangular `L` with `L Lᵀ = K + (noise + jitter) I`.
    pub chol: DMatrix<f64>,
    factor: Cholesky<f64, Dyn>,
}

impl GramResult {
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.factor.solve(b)
    }

    pub fn log_determinant(&self) -> f64 {
        2.0 * self.chol.diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }
}

fn check_inputs(x: &[Vec<f64>]) -> Result<usize> {
    let dim = x.first().map(Vec::len).ok_or_else(|| Error::Dataset("no input points".into()))?;
    for p in x {
        if p.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, found: p.len() });
        }
        crate::kernel::check_point(p)?;
    }
    Ok(dim)
}

/// `K[i][j] = k(x_i, x_j)`, upper triangle computed and mirrored.
pub fn kernel_matrix(spec: &KernelSpec, x: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    spec.validate()?;
    check_inputs(x)?;
    let n = x.len();
    let chains: Vec<Vec<f64>> = x.iter().map(|p| spec.diag_chain(p)).collect();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (i..n)
                .map(|j| {
                    if i == j {
                        *chains[i].last().unwrap()
                    } else {
                        spec.eval_with_chains(&x[i], &x[j], &chains[i], &chains[j])
                    }
                })
                .collect()
        })
        .collect();
    let mut k = DMatrix::zeros(n, n);
    for (i, row) in rows.iter().enumerate() {
        for (off, &v) in row.iter().enumerate() {
            k[(i, i + off)] = v;
            k[(i + off, i)] = v;
        }
    }
    Ok(k)
}

/// `K*[i][j] = k(x_i, x*_j)`.
pub fn cross_matrix(spec: &KernelSpec, x: &[Vec<f64>], x_star: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    spec.validate()?;
    let d = check_inputs(x)?;
    let ds = check_inputs(x_star)?;
    if d != ds {
        return Err(Error::DimensionMismatch { expected: d, found: ds });
    }
    let cx: Vec<Vec<f64>> = x.iter().map(|p| spec.diag_chain(p)).collect();
    let cs: Vec<Vec<f64>> = x_star.iter().map(|p| spec.diag_chain(p)).collect();
    Ok(DMatrix::from_fn(x.len(), x_star.len(), |i, j| spec.eval_with_chains(&x[i], &x_star[j], &cx[i], &cs[j])))
}

/// Cholesky of `k + noise I`, climbing [`JITTER_LADDER`] until it succeeds.
pub fn factorize(k: DMatrix<f64>, noise: f64, context: &str) -> Result<GramResult> {
    let n = k.nrows();
    let mean_diag = (k.trace() / n as f64).abs().max(f64::MIN_POSITIVE);
    for rung in JITTER_LADDER {
        let jitter = rung * mean_diag;
        let mut a = k.clone();
        for i in 0..n {
            a[(i, i)] += noise + jitter;
        }
        if let Some(factor) = Cholesky::new(a) {
            let chol = factor.l();
            if chol.diagonal().iter().all(|d| *d > 0.0 && d.is_finite()) {
                return Ok(GramResult { k, noise, jitter_added: jitter, chol, factor });
            }
        }
    }
    Err(Error::NotPositiveDefinite { context: context.to_string() })
}

/// Gram matrix of `spec` on `x` with its (jittered) Cholesky factor.
pub fn gram(spec: &KernelSpec, x: &[Vec<f64>]) -> Result<GramResult> {
    gram_with_noise(spec, x, 0.0)
}

pub fn gram_with_noise(spec: &KernelSpec, x: &[Vec<f64>], noise: f64) -> Result<GramResult> {
    let k = kernel_matrix(spec, x)?;
    factorize(k, noise, &spec.to_json())
}

/// `n_functions × N` prior draws `L z`. The standard normals depend only on
/// `(seed, N, n_functions)`, so different specs sampled with the same seed
/// share their noise vectors.
pub fn sample_prior(spec: &KernelSpec, x: &[Vec<f64>], n_functions: usize, seed: u64) -> Result<DMatrix<f64>> {
    let g = gram(spec, x)?;
    let n = x.len();
    let mut stream = rng::stream(seed, 0);
    let mut z = DMatrix::zeros(n, n_functions);
    for r in 0..n_functions {
        for i in 0..n {
            z[(i, r)] = rng::standard_normal(&mut stream);
        }
    }
    Ok((&g.chol * z).transpose())
}

/// Kernel, noise level and training data.
#[derive(Debug, Clone)]
pub struct GpModel {
    pub spec: KernelSpec,
    pub noise_variance: f64,
    pub data: Dataset,
}

/// Posterior predictive summary.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

impl GpModel {
    pub fn new(spec: KernelSpec, noise_variance: f64, data: Dataset) -> Result<Self> {
        check_positive("noise_variance", noise_variance)?;
        spec.validate()?;
        Ok(GpModel { spec, noise_variance, data })
    }

    fn training_gram(&self) -> Result<GramResult> {
        gram_with_noise(&self.spec, &self.data.inputs, self.noise_variance)
    }

    /// `−½ yᵀ(K+σ²I)⁻¹y − ½ log|K+σ²I| − (N/2) log 2π`.
    pub fn log_marginal_likelihood(&self) -> Result<f64> {
        let g = self.training_gram()?;
        let y = DVector::from_column_slice(&self.data.targets);
        let alpha = g.solve(&y);
        let n = y.len() as f64;
        Ok(-0.5 * y.dot(&alpha) - 0.5 * g.log_determinant() - 0.5 * n * LN_2PI)
    }

    /// Predictive mean and variance at `x_star`. The variance is of the latent
    /// function unless `include_noise` is set.
    pub fn posterior_predict(&self, x_star: &[Vec<f64>], include_noise: bool) -> Result<Prediction> {
        let d = check_inputs(&self.data.inputs)?;
        let ds = check_inputs(x_star)?;
        if d != ds {
            return Err(Error::DimensionMismatch { expected: d, found: ds });
        }
        let g = self.training_gram()?;
        let y = DVector::from_column_slice(&self.data.targets);
        let alpha = g.solve(&y);
        let k_star = cross_matrix(&self.spec, &self.data.inputs, x_star)?;
        let mean = k_star.tr_mul(&alpha);
        let v = g.chol.solve_lower_triangular(&k_star).expect("Cholesky factor has a positive diagonal");
        let mut variance = Vec::with_capacity(x_star.len());
        for (j, p) in x_star.iter().enumerate() {
            let prior = *self.spec.diag_chain(p).last().unwrap();
            let mut var = prior - v.column(j).norm_squared();
            if var < 0.0 {
                if var < -1e-10 {
                    log::warn!("negative predictive variance {var:.3e} clamped to zero");
                }
                var = 0.0;
            }
            if include_noise {
                var += self.noise_variance;
            }
            variance.push(var);
        }
        Ok(Prediction { mean: mean.iter().copied().collect(), variance })
    }

    /// Mean log density of held-out targets under the noisy predictive.
    pub fn log_predictive_density(&self, test: &Dataset) -> Result<f64> {
        let pred = self.posterior_predict(&test.inputs, true)?;
        let total: f64 = pred
            .mean
            .iter()
            .zip(&pred.variance)
            .zip(&test.targets)
            .map(|((m, v), y)| -0.5 * (LN_2PI + v.ln() + (y - m) * (y - m) / v))
            .sum();
        Ok(total / test.len() as f64)
    }
}
