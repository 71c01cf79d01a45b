//! Joint expectations of two outer-kernel factors over a Gaussian inner layer,
//! and the three-way pairing sum of Gaussian fourth moments.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::compose::{KernelSpec, OuterKernel};
use crate::error::{check_positive, Error, Result};

/// Indices `(i, j, m, l)` into a point set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Quartet {
    pub i: usize,
    pub j: usize,
    pub m: usize,
    pub l: usize,
}

impl Quartet {
    pub fn new(i: usize, j: usize, m: usize, l: usize) -> Self {
        Quartet { i, j, m, l }
    }

    pub fn indices(&self) -> [usize; 4] {
        [self.i, self.j, self.m, self.l]
    }

    /// The three pair partitions `(ij)(ml)`, `(im)(jl)`, `(il)(jm)`.
    pub fn pairings(&self) -> [Quartet; 3] {
        let Quartet { i, j, m, l } = *self;
        [Quartet::new(i, j, m, l), Quartet::new(i, m, j, l), Quartet::new(i, l, j, m)]
    }

    /// All multisets of four indices below `n`, in lexicographic order.
    pub fn all_sorted(n: usize) -> Vec<Quartet> {
        let mut out = Vec::new();
        for i in 0..n {
            for j in i..n {
                for m in j..n {
                    for l in m..n {
                        out.push(Quartet::new(i, j, m, l));
                    }
                }
            }
        }
        out
    }

    fn check(&self, n: usize) -> Result<()> {
        match self.indices().into_iter().find(|&ix| ix >= n) {
            Some(ix) => Err(Error::DimensionMismatch { expected: n, found: ix + 1 }),
            None => Ok(()),
        }
    }
}

/// Covariance of the differences `d₁ = h_i − h_j`, `d₂ = h_m − h_l`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairStats {
    pub var1: f64,
    pub var2: f64,
    pub cov12: f64,
}

impl PairStats {
    pub fn new(k: &DMatrix<f64>, q: Quartet) -> Result<Self> {
        if k.nrows() != k.ncols() {
            return Err(Error::DimensionMismatch { expected: k.nrows(), found: k.ncols() });
        }
        q.check(k.nrows())?;
        let Quartet { i, j, m, l } = q;
        let var = |a: usize, b: usize| (k[(a, a)] + k[(b, b)] - 2.0 * k[(a, b)]).max(0.0);
        Ok(PairStats { var1: var(i, j), var2: var(m, l), cov12: k[(i, m)] + k[(j, l)] - k[(i, l)] - k[(j, m)] })
    }
}

/// `E[exp(−d₁²/2ℓ² − d₂²/2ℓ²)]`.
///
/// With the covariance rescaled to `K' = K/(2ℓ²)` this is the unit-exponent
/// form `[G_ij G_ml − V]^{−1/2}` where `G_ij = 1 + 2(k'_ii + k'_jj − 2k'_ij)`
/// is the inverse square of the pair second moment and
/// `V = 4(k'_im + k'_jl − k'_il − k'_jm)²`.
pub fn fourth_moment_se_pairing(k: &DMatrix<f64>, length: f64, q: Quartet) -> Result<f64> {
    check_positive("length", length)?;
    let s = PairStats::new(k, q)?;
    let scale = 1.0 / (2.0 * length * length);
    let g_ij = 1.0 + 2.0 * s.var1 * scale;
    let g_ml = 1.0 + 2.0 * s.var2 * scale;
    let c = s.cov12 * scale;
    let v = 4.0 * c * c;
    let det = g_ij * g_ml - v;
    if det.is_nan() || det <= 0.0 {
        return Err(Error::DivergentExpectation { determinant: det });
    }
    Ok(1.0 / det.sqrt())
}

/// `E[exp(−d₁²/2ℓ²)] E[exp(−d₂²/2ℓ²)]`.
pub fn se_pair_product(k: &DMatrix<f64>, length: f64, q: Quartet) -> Result<f64> {
    check_positive("length", length)?;
    let s = PairStats::new(k, q)?;
    let l2 = length * length;
    Ok(1.0 / ((1.0 + s.var1 / l2) * (1.0 + s.var2 / l2)).sqrt())
}

/// `E[cos(d₁/ℓ) cos(d₂/ℓ)]`, averaging the characteristic function over the
/// four sign combinations `e^{i(±d₁ ± d₂)/ℓ}`.
pub fn fourth_moment_sc_pairing(k: &DMatrix<f64>, length: f64, q: Quartet) -> Result<f64> {
    check_positive("length", length)?;
    let s = PairStats::new(k, q)?;
    let l2 = length * length;
    let mut total = 0.0;
    for a in [1.0, -1.0] {
        for b in [1.0, -1.0] {
            let var = a * a * s.var1 + b * b * s.var2 + 2.0 * a * b * s.cov12;
            total += (-var / (2.0 * l2)).exp();
        }
    }
    Ok(0.25 * total)
}

/// `E[cos(d₁/ℓ)] E[cos(d₂/ℓ)]`.
pub fn sc_pair_product(k: &DMatrix<f64>, length: f64, q: Quartet) -> Result<f64> {
    check_positive("length", length)?;
    let s = PairStats::new(k, q)?;
    Ok((-(s.var1 + s.var2) / (2.0 * length * length)).exp())
}

/// Joint SE expectation minus the product of pair expectations (never negative).
pub fn se_pairing_margin(k: &DMatrix<f64>, length: f64, q: Quartet) -> Result<f64> {
    Ok(fourth_moment_se_pairing(k, length, q)? - se_pair_product(k, length, q)?)
}

/// Joint cosine expectation minus the product of pair expectations (never negative).
pub fn sc_pairing_margin(k: &DMatrix<f64>, length: f64, q: Quartet) -> Result<f64> {
    Ok(fourth_moment_sc_pairing(k, length, q)? - sc_pair_product(k, length, q)?)
}

/// Sum of `pair_fn` over the three pair partitions of the quartet.
pub fn isserlis_fourth<F>(pair_fn: F, q: Quartet) -> f64
where
    F: Fn(Quartet) -> f64,
{
    q.pairings().into_iter().map(pair_fn).sum()
}

/// Pairing term of the Gaussian approximation: `k_ab · k_cd` from a Gram matrix.
pub fn q_pairing(k_eff: &DMatrix<f64>) -> impl Fn(Quartet) -> f64 + '_ {
    move |p| k_eff[(p.i, p.j)] * k_eff[(p.m, p.l)]
}

/// Pairing term of the exact two-layer process:
/// `E_h[k_out(h_a, h_b) k_out(h_c, h_d)]` over the inner Gram `k_inner`.
pub fn p_pairing<'a>(
    outer: &'a OuterKernel,
    k_inner: &'a DMatrix<f64>,
) -> Result<impl Fn(Quartet) -> Result<f64> + 'a> {
    match outer {
        OuterKernel::SquaredExp { .. } | OuterKernel::SquaredCosine { .. } => {}
        _ => return Err(Error::InvalidSpec(format!("no fourth-moment pairing for {} outer", outer.kind_name()))),
    }
    Ok(move |p: Quartet| match *outer {
        OuterKernel::SquaredExp { signal, length } => {
            Ok(signal.powi(4) * fourth_moment_se_pairing(k_inner, length, p)?)
        }
        OuterKernel::SquaredCosine { signal, length } => {
            // cos²(d/2ℓ) = (1 + cos(d/ℓ))/2
            let s = PairStats::new(k_inner, p)?;
            let l2 = length * length;
            let c1 = (-s.var1 / (2.0 * l2)).exp();
            let c2 = (-s.var2 / (2.0 * l2)).exp();
            let cc = fourth_moment_sc_pairing(k_inner, length, p)?;
            Ok(signal.powi(4) * 0.25 * (1.0 + c1 + c2 + cc))
        }
        _ => unreachable!(),
    })
}

/// Outer kernel and first-layer spec of a two-layer SE[·] or SC[·] composition.
pub(crate) fn split_two_layer(spec: &KernelSpec) -> Result<(&OuterKernel, &KernelSpec)> {
    match spec {
        KernelSpec::Wrap { outer, inner } if matches!(**inner, KernelSpec::Leaf(_) | KernelSpec::Sum(_)) => match outer
        {
            OuterKernel::SquaredExp { .. } | OuterKernel::SquaredCosine { .. } => Ok((outer, inner)),
            _ => Err(Error::InvalidSpec("fourth moments need an SE or SC outer layer".into())),
        },
        _ => Err(Error::InvalidSpec("fourth moments need a two-layer spec".into())),
    }
}
