//! Layer-by-layer simulation of a stacked GP: draw the first layer on the
//! inputs, then each outer layer as a GP on the previous layer's values.

use nalgebra::DMatrix;
use rayon::prelude::*;

use super::{batch_size, MomentEstimate, BATCHES};
use crate::compose::{FirstLayer, KernelSpec};
use crate::error::{Error, Result};
use crate::gp::JITTER_LADDER;
use crate::kernel::BaseKernel;
use crate::rng::{self, Stream};

const LN_2PI: f64 = 1.8378770664093453;

/// Dense lower Cholesky of the row-major `n×n` matrix `a` into `l`.
fn cholesky(a: &[f64], n: usize, jitter: f64, l: &mut [f64]) -> bool {
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            if i == j {
                s += jitter;
            }
            for c in 0..j {
                s -= l[i * n + c] * l[j * n + c];
            }
            if i == j {
                if s.is_nan() || s <= 0.0 {
                    return false;
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
        for j in i + 1..n {
            l[i * n + j] = 0.0;
        }
    }
    true
}

fn factor_with_jitter(a: &[f64], n: usize, l: &mut [f64]) -> Result<()> {
    let mean_diag = ((0..n).map(|i| a[i * n + i]).sum::<f64>() / n as f64).abs().max(f64::MIN_POSITIVE);
    for rung in JITTER_LADDER {
        if cholesky(a, n, rung * mean_diag, l) {
            return Ok(());
        }
    }
    Err(Error::NotPositiveDefinite { context: "ancestral layer covariance".into() })
}

/// `log N(x | mean·1, L Lᵀ)`.
fn log_density(x: &[f64], mean: f64, l: &[f64], n: usize) -> f64 {
    let mut w = vec![0.0; n];
    for i in 0..n {
        let mut s = x[i] - mean;
        for c in 0..i {
            s -= l[i * n + c] * w[c];
        }
        w[i] = s / l[i * n + i];
    }
    let quad: f64 = w.iter().map(|v| v * v).sum();
    let logdet: f64 = (0..n).map(|i| l[i * n + i].ln()).sum();
    -0.5 * quad - logdet - 0.5 * n as f64 * LN_2PI
}

fn scalar_gram(kernel: &BaseKernel, h: &[f64], out: &mut [f64]) {
    let n = h.len();
    for i in 0..n {
        for j in 0..=i {
            let v = kernel.eval_unchecked(&[h[i]], &[h[j]]);
            out[i * n + j] = v;
            out[j * n + i] = v;
        }
    }
}

/// Ground-truth simulator of a stacked GP on a fixed point set.
#[derive(Debug, Clone)]
pub struct AncestralSampler {
    n: usize,
    first_chol: Vec<f64>,
    layers: Vec<BaseKernel>,
    latent_mean: f64,
}

struct Workspace {
    k: Vec<f64>,
    l: Vec<f64>,
    z: Vec<f64>,
    cur: Vec<f64>,
    next: Vec<f64>,
}

impl Workspace {
    fn new(n: usize) -> Self {
        Workspace { k: vec![0.0; n * n], l: vec![0.0; n * n], z: vec![0.0; n], cur: vec![0.0; n], next: vec![0.0; n] }
    }
}

fn lower_mul(l: &[f64], z: &[f64], shift: f64, out: &mut [f64]) {
    let n = z.len();
    for i in 0..n {
        out[i] = shift + (0..=i).map(|c| l[i * n + c] * z[c]).sum::<f64>();
    }
}

impl AncestralSampler {
    /// Sampler with zero prior mean in every layer.
    pub fn new(spec: &KernelSpec, points: &[Vec<f64>]) -> Result<Self> {
        Self::with_latent_mean(spec, points, 0.0)
    }

    /// Sampler whose hidden layers have constant prior mean `latent_mean`; the
    /// output layer stays zero-mean.
    pub fn with_latent_mean(spec: &KernelSpec, points: &[Vec<f64>], latent_mean: f64) -> Result<Self> {
        spec.validate()?;
        let (first, wraps) = spec.chain();
        if wraps.is_empty() {
            return Err(Error::InvalidSpec("ancestral sampling needs at least one wrap layer".into()));
        }
        let layers = wraps
            .iter()
            .map(|w| w.as_base().ok_or_else(|| Error::InvalidSpec(format!("{} has no ancestral form", w.kind_name()))))
            .collect::<Result<Vec<_>>>()?;
        let n = points.len();
        if n == 0 {
            return Err(Error::Dataset("no input points".into()));
        }
        let mut k1 = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let v = match first {
                    FirstLayer::Single(k) => k.eval(&points[i], &points[j])?,
                    FirstLayer::Sum(ks) => ks.iter().map(|k| k.eval(&points[i], &points[j])).sum::<Result<f64>>()?,
                };
                k1[i * n + j] = v;
                k1[j * n + i] = v;
            }
        }
        let mut first_chol = vec![0.0; n * n];
        factor_with_jitter(&k1, n, &mut first_chol)?;
        Ok(AncestralSampler { n, first_chol, layers, latent_mean })
    }

    pub fn n_points(&self) -> usize {
        self.n
    }

    /// One replicate; the output layer ends up in `ws.cur`.
    fn draw(&self, rng: &mut Stream, ws: &mut Workspace, mut record: Option<&mut Vec<Vec<f64>>>) -> Result<()> {
        let n = self.n;
        rng::fill_standard_normal(rng, &mut ws.z);
        lower_mul(&self.first_chol, &ws.z, self.latent_mean, &mut ws.cur);
        if let Some(r) = record.as_deref_mut() {
            r.push(ws.cur.clone());
        }
        let last = self.layers.len() - 1;
        for (idx, kernel) in self.layers.iter().enumerate() {
            scalar_gram(kernel, &ws.cur, &mut ws.k);
            factor_with_jitter(&ws.k, n, &mut ws.l)?;
            rng::fill_standard_normal(rng, &mut ws.z);
            let mean = if idx == last { 0.0 } else { self.latent_mean };
            lower_mul(&ws.l, &ws.z, mean, &mut ws.next);
            std::mem::swap(&mut ws.cur, &mut ws.next);
            if let Some(r) = record.as_deref_mut() {
                r.push(ws.cur.clone());
            }
        }
        Ok(())
    }

    /// `n × N` matrix of output-layer draws. Replicates are split over
    /// [`BATCHES`] streams `(seed, batch)`.
    pub fn sample(&self, n: u64, seed: u64) -> Result<DMatrix<f64>> {
        let mut rows = Vec::with_capacity(n as usize * self.n);
        let mut ws = Workspace::new(self.n);
        for b in 0..BATCHES {
            let mut rng = rng::stream(seed, b as u64);
            for _ in 0..batch_size(n, b) {
                self.draw(&mut rng, &mut ws, None)?;
                rows.extend_from_slice(&ws.cur);
            }
        }
        Ok(DMatrix::from_row_slice(n as usize, self.n, &rows))
    }

    /// Batch-means estimates of `E[stat(f)]` for `n_stats` statistics written
    /// by `stat` into its output slice. Batches run in parallel; the result
    /// does not depend on the number of threads.
    pub fn estimate<F>(&self, n: u64, seed: u64, n_stats: usize, stat: F) -> Result<Vec<MomentEstimate>>
    where
        F: Fn(&[f64], &mut [f64]) + Sync,
    {
        let per_batch: Vec<Vec<f64>> = (0..BATCHES)
            .into_par_iter()
            .map(|b| {
                let mut rng = rng::stream(seed, b as u64);
                let mut ws = Workspace::new(self.n);
                let mut sums = vec![0.0; n_stats];
                let mut tmp = vec![0.0; n_stats];
                for _ in 0..batch_size(n, b) {
                    self.draw(&mut rng, &mut ws, None)?;
                    stat(&ws.cur, &mut tmp);
                    for (s, t) in sums.iter_mut().zip(&tmp) {
                        *s += t;
                    }
                }
                Ok(sums)
            })
            .collect::<Result<_>>()?;
        let counts: Vec<u64> = (0..BATCHES).map(|b| batch_size(n, b)).collect();
        Ok((0..n_stats)
            .map(|s| {
                let sums: Vec<f64> = per_batch.iter().map(|v| v[s]).collect();
                MomentEstimate::from_batches(&sums, &counts, seed)
            })
            .collect())
    }

    /// `E[f_i f_j]` for each requested pair.
    pub fn pair_moments(&self, pairs: &[(usize, usize)], n: u64, seed: u64) -> Result<Vec<MomentEstimate>> {
        self.check_indices(pairs.iter().flat_map(|&(i, j)| [i, j]))?;
        self.estimate(n, seed, pairs.len(), |f, out| {
            for (o, &(i, j)) in out.iter_mut().zip(pairs) {
                *o = f[i] * f[j];
            }
        })
    }

    /// `E[f_i]` at every point.
    pub fn first_moments(&self, n: u64, seed: u64) -> Result<Vec<MomentEstimate>> {
        self.estimate(n, seed, self.n, |f, out| out.copy_from_slice(f))
    }

    fn check_indices<I: IntoIterator<Item = usize>>(&self, idx: I) -> Result<()> {
        match idx.into_iter().find(|&i| i >= self.n) {
            Some(i) => Err(Error::DimensionMismatch { expected: self.n, found: i + 1 }),
            None => Ok(()),
        }
    }

    /// Joint log-density of all layers, first hidden layer to output.
    fn joint_log_density(&self, layers: &[Vec<f64>]) -> Result<f64> {
        let n = self.n;
        let mut total = log_density(&layers[0], self.latent_mean, &self.first_chol, n);
        let mut k = vec![0.0; n * n];
        let mut l = vec![0.0; n * n];
        let last = self.layers.len() - 1;
        for (idx, kernel) in self.layers.iter().enumerate() {
            scalar_gram(kernel, &layers[idx], &mut k);
            factor_with_jitter(&k, n, &mut l)?;
            let mean = if idx == last { 0.0 } else { self.latent_mean };
            total += log_density(&layers[idx + 1], mean, &l, n);
        }
        Ok(total)
    }
}

/// Joint density invariance under `h → −h` of any hidden layer, over `trials`
/// seeded draws. Every hidden layer is flipped alone and all are flipped
/// together; agreement is to 1e−10 relative.
pub fn sign_flip_symmetry_check(spec: &KernelSpec, points: &[Vec<f64>], trials: usize, seed: u64) -> Result<bool> {
    sign_flip_symmetry_check_with_mean(spec, points, trials, seed, 0.0)
}

pub fn sign_flip_symmetry_check_with_mean(
    spec: &KernelSpec,
    points: &[Vec<f64>],
    trials: usize,
    seed: u64,
    latent_mean: f64,
) -> Result<bool> {
    let sampler = AncestralSampler::with_latent_mean(spec, points, latent_mean)?;
    let hidden = sampler.layers.len();
    let mut ws = Workspace::new(sampler.n);
    for t in 0..trials {
        let mut rng = rng::stream(seed, t as u64);
        let mut layers = Vec::with_capacity(hidden + 1);
        sampler.draw(&mut rng, &mut ws, Some(&mut layers))?;
        let base = sampler.joint_log_density(&layers)?;
        let mut flips: Vec<Vec<usize>> = (0..hidden).map(|h| vec![h]).collect();
        if hidden > 1 {
            flips.push((0..hidden).collect());
        }
        for flip in flips {
            let mut flipped = layers.clone();
            for &h in &flip {
                flipped[h].iter_mut().for_each(|v| *v = -*v);
            }
            let other = sampler.joint_log_density(&flipped)?;
            if (other - base).abs() > 1e-10 * base.abs().max(1.0) {
                return Ok(false);
            }
        }
    }
    Ok(true)
}
