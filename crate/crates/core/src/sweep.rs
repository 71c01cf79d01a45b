//! Final log marginal likelihood against log χ: fit a three-layer SE stack to
//! data drawn from other compositions and record every restart.

use serde::Serialize;

use crate::compose::{chi, KernelSpec};
use crate::data::{self, HyperRanges};
use crate::error::Result;
use crate::gp::GpModel;
use crate::optimize::{optimize, HyperVector, OptimizeOptions};
use crate::rng;

pub const DEFAULT_GENERATORS: [&str; 6] = ["SE[SE]", "SC[SE]", "SE[Lin]", "SC[Lin]", "SE[Lin+SE]", "NuN[SE]"];
pub const FIT_LABEL: &str = "SE[SE[SE]]";

#[derive(Debug, Clone, PartialEq)]
pub struct ChiSweepConfig {
    pub generators: Vec<String>,
    pub draws_per_generator: usize,
    pub n_points: usize,
    pub x_range: (f64, f64),
    pub noise_std: f64,
    pub ranges: HyperRanges,
    pub restarts: usize,
    pub budget: usize,
    pub seed: u64,
}

impl Default for ChiSweepConfig {
    fn default() -> Self {
        ChiSweepConfig {
            generators: DEFAULT_GENERATORS.iter().map(|s| s.to_string()).collect(),
            draws_per_generator: 1,
            n_points: 150,
            x_range: (-5.0, 5.0),
            noise_std: 0.1,
            ranges: HyperRanges::default(),
            restarts: 20,
            budget: 2000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub generator: String,
    pub draw_seed: u64,
    pub restart: usize,
    /// `None` when the restart never reached a finite likelihood.
    pub final_lml: Option<f64>,
    pub log_chi: Option<f64>,
}

impl ChiSweepConfig {
    fn draw_seed(&self, generator: usize, draw: usize) -> u64 {
        self.seed.wrapping_add((draw * self.generators.len() + generator) as u64)
    }
}

pub fn chi_sweep(cfg: &ChiSweepConfig) -> Result<Vec<SweepRow>> {
    let template_spec = KernelSpec::from_label(FIT_LABEL)?;
    let x = data::grid_1d(cfg.n_points, cfg.x_range.0, cfg.x_range.1);
    let mut rows = Vec::new();
    for (gi, label) in cfg.generators.iter().enumerate() {
        let structure = KernelSpec::from_label(label)?;
        for d in 0..cfg.draws_per_generator {
            let draw_seed = cfg.draw_seed(gi, d);
            let truth = data::randomize_hyperparameters(&structure, &cfg.ranges, &mut rng::stream(draw_seed, 2))?;
            let dataset = data::from_kernel(&truth, x.clone(), cfg.noise_std, draw_seed)?;
            log::info!("chi sweep: {label} draw {d} ({})", truth.to_json());
            let template = GpModel::new(template_spec.clone(), 0.1, dataset)?;
            let report = optimize(
                &template,
                &OptimizeOptions { restarts: cfg.restarts, seed: draw_seed, budget: cfg.budget, ..Default::default() },
            )?;
            let names = HyperVector::from_model(&template).names;
            for (r, rec) in report.per_restart.iter().enumerate() {
                let hv = HyperVector { names: names.clone(), log_values: rec.final_log_values.clone() };
                let log_chi = hv.apply(&template).ok().and_then(|m| chi(&m.spec).ok()).map(f64::ln);
                rows.push(SweepRow {
                    generator: label.clone(),
                    draw_seed,
                    restart: r,
                    final_lml: rec.lml,
                    log_chi: log_chi.filter(|v| v.is_finite()),
                });
            }
        }
    }
    Ok(rows)
}

/// Mean final LML of rows whose log χ lies in `[lo, hi)`.
pub fn mean_lml_in(rows: &[SweepRow], lo: f64, hi: f64) -> Option<f64> {
    let vals: Vec<f64> = rows
        .iter()
        .filter_map(|r| match (r.final_lml, r.log_chi) {
            (Some(l), Some(c)) if c >= lo && c < hi => Some(l),
            _ => None,
        })
        .collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}
