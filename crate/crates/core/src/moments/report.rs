//! Fourth-moment comparison between the exact two-layer process and its
//! Gaussian approximation, cross-checked by ancestral simulation.

use nalgebra::DMatrix;
use serde::Serialize;

use super::fourth::{isserlis_fourth, p_pairing, q_pairing, split_two_layer, PairStats, Quartet};
use super::{AncestralSampler, MomentEstimate};
use crate::compose::{KernelSpec, OuterKernel};
use crate::error::Result;
use crate::gp;

/// Lowest margin accepted as nonnegative.
pub const MARGIN_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeavyTailOptions {
    pub n_samples: u64,
    pub seed: u64,
    /// Allowed distance between analytic and Monte-Carlo values, in standard errors.
    pub n_se: f64,
    /// Offset added to every analytic E_p; nonzero values exist to check that
    /// the harness notices a wrong formula.
    pub corrupt_analytic: f64,
}

impl Default for HeavyTailOptions {
    fn default() -> Self {
        HeavyTailOptions { n_samples: 1_000_000, seed: 0, n_se: 4.0, corrupt_analytic: 0.0 }
    }
}

/// Two-point fourth moment `E[f_a² f_b²]` written with a single cross pairing,
/// `σ⁴{1 + [1 + s/ℓ²]⁻¹}` under q and `σ⁴{1 + [1 + 2s/ℓ²]^{-1/2}}` under p.
/// Full pairing counts give `σ⁴{1 + 2[…]}` instead; both are reported.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SingleCrossForm {
    pub q: f64,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuartetRow {
    pub quartet: Quartet,
    pub analytic_p: f64,
    pub analytic_q: f64,
    pub mc: MomentEstimate,
    /// `analytic_p − analytic_q`.
    pub margin: f64,
    pub single_cross: Option<SingleCrossForm>,
}

impl QuartetRow {
    pub fn margin_ok(&self) -> bool {
        self.margin >= -MARGIN_TOLERANCE * self.analytic_q.abs().max(1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HeavyTailReport {
    pub spec: String,
    pub n_se: f64,
    pub rows: Vec<QuartetRow>,
}

impl HeavyTailReport {
    pub fn margins_ok(&self) -> bool {
        self.rows.iter().all(QuartetRow::margin_ok)
    }

    pub fn oracle_ok(&self) -> bool {
        self.rows.iter().all(|r| r.mc.agrees_with(r.analytic_p, self.n_se))
    }

    pub fn passed(&self) -> bool {
        self.margins_ok() && self.oracle_ok()
    }

    pub fn min_margin(&self) -> f64 {
        self.rows.iter().map(|r| r.margin).fold(f64::INFINITY, f64::min)
    }

    pub fn max_margin(&self) -> f64 {
        self.rows.iter().map(|r| r.margin).fold(f64::NEG_INFINITY, f64::max)
    }

    pub const CSV_HEADER: [&'static str; 9] =
        ["i", "j", "m", "l", "analytic_p", "analytic_q", "mc_value", "mc_stderr", "margin"];

    pub fn csv_rows(&self) -> Vec<Vec<f64>> {
        self.rows
            .iter()
            .map(|r| {
                let q = r.quartet;
                vec![
                    q.i as f64,
                    q.j as f64,
                    q.m as f64,
                    q.l as f64,
                    r.analytic_p,
                    r.analytic_q,
                    r.mc.value,
                    r.mc.std_error,
                    r.margin,
                ]
            })
            .collect()
    }
}

/// Analytic fourth moments under the exact process (p) and the Gaussian
/// approximation (q) for every index multiset of `points`.
pub fn analytic_fourth_moments(spec: &KernelSpec, points: &[Vec<f64>]) -> Result<Vec<(Quartet, f64, f64)>> {
    spec.validate()?;
    let (outer, inner) = split_two_layer(spec)?;
    let k_inner = gp::kernel_matrix(inner, points)?;
    let k_eff = gp::kernel_matrix(spec, points)?;
    let p_fn = p_pairing(outer, &k_inner)?;
    let q_fn = q_pairing(&k_eff);
    Quartet::all_sorted(points.len())
        .into_iter()
        .map(|q| {
            let p: f64 = q.pairings().into_iter().map(&p_fn).sum::<Result<f64>>()?;
            Ok((q, p, isserlis_fourth(&q_fn, q)))
        })
        .collect()
}

fn single_cross_form(outer: &OuterKernel, k_inner: &DMatrix<f64>, q: Quartet) -> Option<SingleCrossForm> {
    let (signal, length) = match *outer {
        OuterKernel::SquaredExp { signal, length } => (signal, length),
        _ => return None,
    };
    if !(q.i == q.j && q.m == q.l && q.i != q.m) {
        return None;
    }
    let s = PairStats::new(k_inner, Quartet::new(q.i, q.m, q.i, q.m)).ok()?.var1;
    let (s4, l2) = (signal.powi(4), length * length);
    Some(SingleCrossForm { q: s4 * (1.0 + 1.0 / (1.0 + s / l2)), p: s4 * (1.0 + (1.0 + 2.0 * s / l2).powf(-0.5)) })
}

/// Compare E_p and E_q on every quartet of `points` and check E_p against
/// `E[f_i f_j f_m f_l]` from the ancestral sampler.
pub fn heavy_tail_report(spec: &KernelSpec, points: &[Vec<f64>], opts: &HeavyTailOptions) -> Result<HeavyTailReport> {
    let analytic = analytic_fourth_moments(spec, points)?;
    let (outer, inner) = split_two_layer(spec)?;
    let k_inner = gp::kernel_matrix(inner, points)?;
    let sampler = AncestralSampler::new(spec, points)?;
    let quartets: Vec<Quartet> = analytic.iter().map(|a| a.0).collect();
    let mc = sampler.estimate(opts.n_samples, opts.seed, quartets.len(), |f, out| {
        for (o, q) in out.iter_mut().zip(&quartets) {
            *o = f[q.i] * f[q.j] * f[q.m] * f[q.l];
        }
    })?;
    let rows = analytic
        .into_iter()
        .zip(mc)
        .map(|((quartet, p, q), mc)| {
            let analytic_p = p + opts.corrupt_analytic;
            QuartetRow {
                quartet,
                analytic_p,
                analytic_q: q,
                mc,
                margin: analytic_p - q,
                single_cross: single_cross_form(outer, &k_inner, quartet),
            }
        })
        .collect();
    Ok(HeavyTailReport { spec: spec.label(), n_se: opts.n_se, rows })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SecondMomentCheck {
    pub i: usize,
    pub j: usize,
    pub analytic: f64,
    pub mc: MomentEstimate,
    pub passed: bool,
}

/// Effective kernel against ancestral `E[f_i f_j]` for every pair `i ≤ j`.
pub fn second_moment_checks(
    spec: &KernelSpec,
    points: &[Vec<f64>],
    n_samples: u64,
    seed: u64,
    n_se: f64,
) -> Result<Vec<SecondMomentCheck>> {
    let k_eff = gp::kernel_matrix(spec, points)?;
    let sampler = AncestralSampler::new(spec, points)?;
    let n = points.len();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i..n).map(move |j| (i, j))).collect();
    let mc = sampler.pair_moments(&pairs, n_samples, seed)?;
    Ok(pairs
        .into_iter()
        .zip(mc)
        .map(|((i, j), mc)| {
            let analytic = k_eff[(i, j)];
            SecondMomentCheck { i, j, analytic, mc, passed: mc.agrees_with(analytic, n_se) }
        })
        .collect())
}
