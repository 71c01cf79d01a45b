//! Maximum-marginal-likelihood hyperparameter search.
//!
//! Every restart draws its starting point uniformly from `(−10, 10)` in log
//! space and runs a downhill simplex on the negative log marginal likelihood.

mod simplex;

pub use simplex::{minimize, SimplexOptions, SimplexResult};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::compose::{chi, KernelSpec};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::gp::GpModel;
use crate::rng;

pub const NOISE_PARAM: &str = "noise_variance";
pub const INIT_RANGE: (f64, f64) = (-10.0, 10.0);
/// Half-width of the uniform kick applied when a restart ends up where the
/// likelihood is undefined.
pub const PERTURBATION: f64 = 0.5;
pub const MIN_BUDGET: usize = 100;

/// Named hyperparameters in log space: kernel parameters followed by the
/// log noise variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperVector {
    pub names: Vec<String>,
    pub log_values: Vec<f64>,
}

impl HyperVector {
    pub fn from_model(model: &GpModel) -> Self {
        let mut names = model.spec.param_names();
        names.push(NOISE_PARAM.to_string());
        let mut log_values: Vec<f64> = model.spec.params().iter().map(|(_, v)| v.ln()).collect();
        log_values.push(model.noise_variance.ln());
        HyperVector { names, log_values }
    }

    pub fn len(&self) -> usize {
        self.log_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_values.is_empty()
    }

    pub fn values(&self) -> Vec<f64> {
        self.log_values.iter().map(|v| v.exp()).collect()
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.names.iter().position(|n| n == name).ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    /// Model with the structure and data of `template` and these values.
    pub fn apply(&self, template: &GpModel) -> Result<GpModel> {
        apply_log_values(template, &self.log_values)
    }
}

fn apply_log_values(template: &GpModel, log_values: &[f64]) -> Result<GpModel> {
    let expected = template.spec.params().len() + 1;
    if log_values.len() != expected {
        return Err(Error::DimensionMismatch { expected, found: log_values.len() });
    }
    let values: Vec<f64> = log_values.iter().map(|v| v.exp()).collect();
    let (kernel, noise) = values.split_at(values.len() - 1);
    let spec = template.spec.with_params(kernel)?;
    GpModel::new(spec, noise[0], template.data.clone())
}

fn log_likelihood_at(template: &GpModel, log_values: &[f64]) -> f64 {
    match apply_log_values(template, log_values).and_then(|m| m.log_marginal_likelihood()) {
        Ok(v) if v.is_finite() => v,
        _ => f64::NEG_INFINITY,
    }
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestartRecord {
    pub init: Vec<f64>,
    pub init_lml: Option<f64>,
    pub final_log_values: Vec<f64>,
    /// `None` when no finite likelihood was found.
    pub lml: Option<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub best: HyperVector,
    pub best_lml: f64,
    pub best_restart: usize,
    pub per_restart: Vec<RestartRecord>,
    /// Absent for kernels without a wrap layer.
    pub chi_at_best: Option<f64>,
    pub seed: u64,
    pub budget: usize,
    pub spec: KernelSpec,
    pub noise_variance: f64,
}

impl FitReport {
    /// The fitted model on `data`.
    pub fn model(&self, data: Dataset) -> Result<GpModel> {
        GpModel::new(self.spec.clone(), self.noise_variance, data)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("fit report serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::InvalidSpec(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizeOptions {
    pub restarts: usize,
    pub seed: u64,
    /// Objective evaluations per restart.
    pub budget: usize,
    pub tolerance: f64,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        OptimizeOptions { restarts: 20, seed: 0, budget: 2000, tolerance: 1e-6 }
    }
}

fn run_restart(template: &GpModel, opts: &OptimizeOptions, restart: usize) -> RestartRecord {
    let dim = template.spec.params().len() + 1;
    let mut stream = rng::stream(opts.seed, restart as u64);
    let init: Vec<f64> = (0..dim).map(|_| stream.random_range(INIT_RANGE.0..INIT_RANGE.1)).collect();
    let init_lml = finite(log_likelihood_at(template, &init));

    let mut start = init.clone();
    let (mut iterations, mut evaluations) = (0, 0);
    loop {
        let remaining = opts.budget - evaluations;
        let res = minimize(
            |x| -log_likelihood_at(template, x),
            &start,
            &SimplexOptions { step: 1.0, tolerance: opts.tolerance, max_evaluations: remaining },
        );
        iterations += res.iterations;
        evaluations += res.evaluations;
        if res.value.is_finite() || evaluations >= opts.budget {
            return RestartRecord {
                init,
                init_lml,
                lml: finite(-res.value),
                final_log_values: res.x,
                iterations,
                evaluations,
                converged: res.converged && res.value.is_finite(),
            };
        }
        log::debug!("restart {restart}: no finite likelihood, perturbing");
        start = res.x.iter().map(|v| v + stream.random_range(-PERTURBATION..PERTURBATION)).collect();
    }
}

/// Multi-restart search. Restarts run in parallel on independent random
/// streams, so the report depends only on `opts.seed`.
pub fn optimize(template: &GpModel, opts: &OptimizeOptions) -> Result<FitReport> {
    if opts.restarts == 0 {
        return Err(Error::Optimization("at least one restart is required".into()));
    }
    if opts.budget < MIN_BUDGET {
        return Err(Error::Optimization(format!("budget must be at least {MIN_BUDGET} evaluations")));
    }
    let per_restart: Vec<RestartRecord> =
        (0..opts.restarts).into_par_iter().map(|r| run_restart(template, opts, r)).collect();

    let (best_restart, best_lml) = per_restart
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.lml.map(|l| (i, l)))
        .fold(None, |acc: Option<(usize, f64)>, (i, l)| match acc {
            Some((_, b)) if b >= l => acc,
            _ => Some((i, l)),
        })
        .ok_or_else(|| Error::Optimization("no restart reached a finite log marginal likelihood".into()))?;

    let mut best = HyperVector::from_model(template);
    best.log_values = per_restart[best_restart].final_log_values.clone();
    let model = best.apply(template)?;
    let chi_at_best = if model.spec.depth() > 1 { chi(&model.spec).ok() } else { None };
    Ok(FitReport {
        best,
        best_lml,
        best_restart,
        per_restart,
        chi_at_best,
        seed: opts.seed,
        budget: opts.budget,
        spec: model.spec,
        noise_variance: model.noise_variance,
    })
}

/// Slice of the log marginal likelihood along one log-parameter.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LmlProfile {
    pub param: String,
    pub log_values: Vec<f64>,
    /// `−∞` where the likelihood is undefined.
    pub lml: Vec<f64>,
    /// Indices of local maxima, endpoints included.
    pub maxima: Vec<usize>,
}

impl LmlProfile {
    pub fn interior_maxima(&self) -> Vec<usize> {
        let last = self.lml.len().saturating_sub(1);
        self.maxima.iter().copied().filter(|&i| i != 0 && i != last).collect()
    }

    pub fn argmax(&self) -> Option<usize> {
        self.lml.iter().enumerate().filter(|(_, v)| v.is_finite()).max_by(|a, b| a.1.total_cmp(b.1)).map(|(i, _)| i)
    }
}

/// LML at each log value of `param` with every other hyperparameter held at
/// its value in `template`.
pub fn profile_lml(template: &GpModel, param: &str, grid: &[f64]) -> Result<LmlProfile> {
    if grid.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput);
    }
    let base = HyperVector::from_model(template);
    let idx = base.index_of(param)?;
    let lml: Vec<f64> = grid
        .par_iter()
        .map(|&g| {
            let mut v = base.log_values.clone();
            v[idx] = g;
            log_likelihood_at(template, &v)
        })
        .collect();
    let maxima = (0..lml.len())
        .filter(|&i| {
            lml[i].is_finite() && (i == 0 || lml[i] >= lml[i - 1]) && (i + 1 == lml.len() || lml[i] > lml[i + 1])
        })
        .collect();
    Ok(LmlProfile { param: param.to_string(), log_values: grid.to_vec(), lml, maxima })
}
