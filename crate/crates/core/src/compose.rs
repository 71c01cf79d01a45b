//! Effective kernels of stacked Gaussian processes.
//!
//! A [`KernelSpec`] is a chain: a first-layer kernel (a [`BaseKernel`] or a sum
//! of them) wrapped by zero or more [`OuterKernel`]s. Each wrap replaces the
//! inner covariance by the exact second moment of the outer kernel under the
//! bivariate normal law of the inner layer, so evaluating a wrap only needs
//! the inner triple `(k_ii, k_jj, k_ij)`.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{check_positive, Error, Result};
use crate::kernel::{check_point, check_points, BaseKernel};

/// Relative slack allowed on `k_ij² ≤ k_ii k_jj` before an inner triple is rejected.
const PSD_SLACK: f64 = 1e-10;

/// Finite-difference step for χ, in units of the normalized inner kernel.
pub const CHI_STEP: f64 = 1e-6;

/// Outer layer of a composition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OuterKernel {
    SquaredExp {
        signal: f64,
        length: f64,
    },
    SquaredCosine {
        signal: f64,
        length: f64,
    },
    NuN {
        signal: f64,
        alpha: f64,
        beta: f64,
    },
    /// Two SE layers collapsed with the erf plateau approximation; only valid
    /// directly over a first-layer kernel.
    ErfSeSeSe {
        signal3: f64,
        length3: f64,
        signal2: f64,
        length2: f64,
    },
}

impl OuterKernel {
    pub fn squared_exp(signal: f64, length: f64) -> Self {
        OuterKernel::SquaredExp { signal, length }
    }

    pub fn squared_cosine(signal: f64, length: f64) -> Self {
        OuterKernel::SquaredCosine { signal, length }
    }

    pub fn nun(signal: f64, alpha: f64, beta: f64) -> Self {
        OuterKernel::NuN { signal, alpha, beta }
    }

    pub fn erf_three_layer(signal3: f64, length3: f64, signal2: f64, length2: f64) -> Self {
        OuterKernel::ErfSeSeSe { signal3, length3, signal2, length2 }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            OuterKernel::SquaredExp { .. } => "SE",
            OuterKernel::SquaredCosine { .. } => "SC",
            OuterKernel::NuN { .. } => "NuN",
            OuterKernel::ErfSeSeSe { .. } => "ErfSESESE",
        }
    }

    /// Output signal magnitude σ_out.
    pub fn signal(&self) -> f64 {
        match *self {
            OuterKernel::SquaredExp { signal, .. }
            | OuterKernel::SquaredCosine { signal, .. }
            | OuterKernel::NuN { signal, .. } => signal,
            OuterKernel::ErfSeSeSe { signal3, .. } => signal3,
        }
    }

    pub fn params(&self) -> Vec<(&'static str, f64)> {
        match *self {
            OuterKernel::SquaredExp { signal, length } | OuterKernel::SquaredCosine { signal, length } => {
                vec![("signal", signal), ("length", length)]
            }
            OuterKernel::NuN { signal, alpha, beta } => vec![("signal", signal), ("alpha", alpha), ("beta", beta)],
            OuterKernel::ErfSeSeSe { signal3, length3, signal2, length2 } => {
                vec![("signal3", signal3), ("length3", length3), ("signal2", signal2), ("length2", length2)]
            }
        }
    }

    pub fn with_params(&self, v: &[f64]) -> Result<Self> {
        let n = self.params().len();
        if v.len() != n {
            return Err(Error::DimensionMismatch { expected: n, found: v.len() });
        }
        Ok(match self {
            OuterKernel::SquaredExp { .. } => OuterKernel::squared_exp(v[0], v[1]),
            OuterKernel::SquaredCosine { .. } => OuterKernel::squared_cosine(v[0], v[1]),
            OuterKernel::NuN { .. } => OuterKernel::nun(v[0], v[1], v[2]),
            OuterKernel::ErfSeSeSe { .. } => OuterKernel::erf_three_layer(v[0], v[1], v[2], v[3]),
        })
    }

    /// The outer kernel as a kernel on the scalar hidden layer, if it has one.
    pub fn as_base(&self) -> Option<BaseKernel> {
        match *self {
            OuterKernel::SquaredExp { signal, length } => Some(BaseKernel::squared_exp(signal, length)),
            OuterKernel::SquaredCosine { signal, length } => Some(BaseKernel::squared_cosine(signal, length)),
            OuterKernel::NuN { signal, alpha, beta } => Some(BaseKernel::nun(signal, alpha, beta)),
            OuterKernel::ErfSeSeSe { .. } => None,
        }
    }

    /// Validation for a wrap evaluated on its own. NuN accepts `α = β`, where it
    /// coincides with SE of length `1/√α`.
    fn validate_wrap(&self) -> Result<()> {
        for (name, value) in self.params() {
            check_positive(name, value)?;
        }
        if let OuterKernel::NuN { alpha, beta, .. } = *self {
            if alpha < beta {
                return Err(Error::NunOrdering { alpha, beta });
            }
        }
        Ok(())
    }

    fn validate_in_spec(&self) -> Result<()> {
        self.validate_wrap()?;
        if let OuterKernel::NuN { alpha, beta, .. } = *self {
            if alpha <= beta {
                return Err(Error::NunOrdering { alpha, beta });
            }
        }
        Ok(())
    }

    /// Wrap transform with no validation. Also used off the PSD cone by the χ
    /// finite difference, where every formula continues analytically.
    pub(crate) fn wrap_unchecked(&self, k_ii: f64, k_jj: f64, k_ij: f64) -> f64 {
        match *self {
            OuterKernel::SquaredExp { signal, length } => {
                let s = k_ii + k_jj - 2.0 * k_ij;
                signal * signal / (1.0 + s / (length * length)).sqrt()
            }
            OuterKernel::SquaredCosine { signal, length } => {
                let s = k_ii + k_jj - 2.0 * k_ij;
                0.5 * signal * signal * (1.0 + (-s / (2.0 * length * length)).exp())
            }
            OuterKernel::NuN { signal, alpha, beta } => {
                let det = k_ii * k_jj - k_ij * k_ij;
                let b = 1.0 + alpha * (k_ii + k_jj) - 2.0 * beta * k_ij + (alpha * alpha - beta * beta) * det;
                signal * signal / b.sqrt()
            }
            OuterKernel::ErfSeSeSe { signal3, length3, signal2, length2 } => {
                erf_plateau(signal3, length3, signal2, length2, k_ii + k_jj - 2.0 * k_ij)
            }
        }
    }
}

fn erf_plateau(signal3: f64, length3: f64, signal2: f64, length2: f64, s: f64) -> f64 {
    let var = signal3 * signal3;
    // v → ∞ as the inner points coincide; erf(∞) = 1.
    if s <= 0.0 {
        return var;
    }
    let v = length2 / s.sqrt();
    let e = libm::erf(v);
    let far = var / (1.0 + 2.0 * signal2 * signal2 / (length3 * length3)).sqrt();
    far * (1.0 - e) + var * e
}

/// Inner covariance restricted to a pair of points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnerEval {
    pub k_ii: f64,
    pub k_jj: f64,
    pub k_ij: f64,
}

impl InnerEval {
    pub fn new(k_ii: f64, k_jj: f64, k_ij: f64) -> Result<Self> {
        let e = InnerEval { k_ii, k_jj, k_ij };
        e.validate()?;
        Ok(e)
    }

    pub fn determinant(&self) -> f64 {
        self.k_ii * self.k_jj - self.k_ij * self.k_ij
    }

    pub fn validate(&self) -> Result<()> {
        let InnerEval { k_ii, k_jj, k_ij } = *self;
        let finite = k_ii.is_finite() && k_jj.is_finite() && k_ij.is_finite();
        let psd = k_ii >= 0.0 && k_jj >= 0.0 && k_ij * k_ij <= k_ii * k_jj * (1.0 + PSD_SLACK) + f64::MIN_POSITIVE;
        if finite && psd {
            Ok(())
        } else {
            Err(Error::InnerNotPsd { k_ii, k_jj, k_ij })
        }
    }
}

/// Apply an outer kernel to an inner pair covariance.
pub fn wrap_outer(outer: &OuterKernel, inner: InnerEval) -> Result<f64> {
    outer.validate_wrap()?;
    inner.validate()?;
    Ok(outer.wrap_unchecked(inner.k_ii, inner.k_jj, inner.k_ij))
}

/// Three-layer SE stack with the plateau approximation over a first-layer pair.
pub fn eval_three_layer_erf(signal3: f64, length3: f64, signal2: f64, length2: f64, inner: InnerEval) -> Result<f64> {
    wrap_outer(&OuterKernel::erf_three_layer(signal3, length3, signal2, length2), inner)
}

/// Kernel tree. Always a chain: a first layer followed by wraps.
#[derive(Debug, Clone, PartialEq)]
pub enum KernelSpec {
    Leaf(BaseKernel),
    /// Sum of first-layer kernels (e.g. the `Lin+SE` inner of `SE[Lin+SE]`).
    Sum(Vec<BaseKernel>),
    Wrap {
        outer: OuterKernel,
        inner: Box<KernelSpec>,
    },
}

/// First layer of a chain.
#[derive(Debug, Clone, Copy)]
pub enum FirstLayer<'a> {
    Single(&'a BaseKernel),
    Sum(&'a [BaseKernel]),
}

impl FirstLayer<'_> {
    fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        match self {
            FirstLayer::Single(k) => k.eval_unchecked(x, y),
            FirstLayer::Sum(ks) => ks.iter().map(|k| k.eval_unchecked(x, y)).sum(),
        }
    }

    fn diag(&self, x: &[f64]) -> f64 {
        match self {
            FirstLayer::Single(k) => k.diag_unchecked(x),
            FirstLayer::Sum(ks) => ks.iter().map(|k| k.diag_unchecked(x)).sum(),
        }
    }

    /// σ_in² used to normalize the inner kernel in χ.
    fn signal_variance(&self) -> f64 {
        match self {
            FirstLayer::Single(k) => k.signal().powi(2),
            FirstLayer::Sum(ks) => ks.iter().map(|k| k.signal().powi(2)).sum(),
        }
    }
}

impl KernelSpec {
    pub fn leaf(kernel: BaseKernel) -> Self {
        KernelSpec::Leaf(kernel)
    }

    pub fn sum(terms: Vec<BaseKernel>) -> Self {
        KernelSpec::Sum(terms)
    }

    /// Wrap `self` with another layer.
    pub fn wrapped(self, outer: OuterKernel) -> Self {
        KernelSpec::Wrap { outer, inner: Box::new(self) }
    }

    /// First layer and wraps ordered from the input side outward.
    pub fn chain(&self) -> (FirstLayer<'_>, Vec<&OuterKernel>) {
        let mut wraps = Vec::new();
        let mut node = self;
        loop {
            match node {
                KernelSpec::Leaf(k) => {
                    wraps.reverse();
                    return (FirstLayer::Single(k), wraps);
                }
                KernelSpec::Sum(ks) => {
                    wraps.reverse();
                    return (FirstLayer::Sum(ks), wraps);
                }
                KernelSpec::Wrap { outer, inner } => {
                    wraps.push(outer);
                    node = inner;
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        1 + self.chain().1.len()
    }

    pub fn outermost(&self) -> Option<&OuterKernel> {
        match self {
            KernelSpec::Wrap { outer, .. } => Some(outer),
            _ => None,
        }
    }

    /// Signal variance of the output layer.
    pub fn output_variance(&self) -> f64 {
        match self {
            KernelSpec::Leaf(k) => k.signal().powi(2),
            KernelSpec::Sum(ks) => ks.iter().map(|k| k.signal().powi(2)).sum(),
            KernelSpec::Wrap { outer, .. } => outer.signal().powi(2),
        }
    }

    /// True when every point has the same prior variance.
    pub fn has_constant_diagonal(&self) -> bool {
        match self.chain().0 {
            FirstLayer::Single(k) => k.has_constant_diagonal(),
            FirstLayer::Sum(ks) => ks.iter().all(BaseKernel::has_constant_diagonal),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (first, wraps) = self.chain();
        match first {
            FirstLayer::Single(k) => k.validate()?,
            FirstLayer::Sum(ks) => {
                if ks.is_empty() {
                    return Err(Error::InvalidSpec("sum node has no terms".into()));
                }
                for k in ks {
                    k.validate()?;
                }
            }
        }
        for (idx, w) in wraps.iter().enumerate() {
            w.validate_in_spec()?;
            if matches!(w, OuterKernel::ErfSeSeSe { .. }) && idx != 0 {
                return Err(Error::InvalidSpec("ErfSESESE must wrap a first-layer kernel directly".into()));
            }
        }
        Ok(())
    }

    /// Diagonal `k(x, x)` at every level, first layer first.
    pub(crate) fn diag_chain(&self, x: &[f64]) -> Vec<f64> {
        let (first, wraps) = self.chain();
        let mut out = Vec::with_capacity(wraps.len() + 1);
        let mut d = first.diag(x);
        out.push(d);
        for w in wraps {
            d = w.wrap_unchecked(d, d, d);
            out.push(d);
        }
        out
    }

    /// Pair value given precomputed diagonal chains of both points.
    pub(crate) fn eval_with_chains(&self, x: &[f64], y: &[f64], dx: &[f64], dy: &[f64]) -> f64 {
        let (first, wraps) = self.chain();
        let mut k = first.eval(x, y);
        for (l, w) in wraps.iter().enumerate() {
            // Rounding can push k_ij a hair past √(k_ii k_jj); the wraps only see k_ii + k_jj − 2k_ij.
            k = w.wrap_unchecked(dx[l], dy[l], k);
        }
        k
    }

    pub(crate) fn eval_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        let dx = self.diag_chain(x);
        let dy = self.diag_chain(y);
        self.eval_with_chains(x, y, &dx, &dy)
    }

    /// Evaluate the effective kernel at a pair of inputs.
    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        self.validate()?;
        check_points(x, y)?;
        Ok(self.eval_unchecked(x, y))
    }

    pub fn diag_value(&self, x: &[f64]) -> Result<f64> {
        self.validate()?;
        check_point(x)?;
        Ok(*self.diag_chain(x).last().expect("chain is nonempty"))
    }

    /// Flattened hyperparameters, first layer first. Names are `layer{n}.{param}`
    /// with `n` counted from the input side; sum terms add `.term{t}`.
    pub fn params(&self) -> Vec<(String, f64)> {
        let (first, wraps) = self.chain();
        let mut out = Vec::new();
        match first {
            FirstLayer::Single(k) => {
                out.extend(k.params().into_iter().map(|(n, v)| (format!("layer1.{n}"), v)));
            }
            FirstLayer::Sum(ks) => {
                for (t, k) in ks.iter().enumerate() {
                    out.extend(k.params().into_iter().map(|(n, v)| (format!("layer1.term{t}.{n}"), v)));
                }
            }
        }
        for (l, w) in wraps.iter().enumerate() {
            out.extend(w.params().into_iter().map(|(n, v)| (format!("layer{}.{n}", l + 2), v)));
        }
        out
    }

    pub fn param_names(&self) -> Vec<String> {
        self.params().into_iter().map(|(n, _)| n).collect()
    }

    /// Same structure with new parameter values in [`KernelSpec::params`] order.
    pub fn with_params(&self, values: &[f64]) -> Result<Self> {
        let expected = self.params().len();
        if values.len() != expected {
            return Err(Error::DimensionMismatch { expected, found: values.len() });
        }
        let (first, wraps) = self.chain();
        let mut rest = values;
        let mut take = |n: usize| {
            let (head, tail) = rest.split_at(n);
            rest = tail;
            head
        };
        let mut spec = match first {
            FirstLayer::Single(k) => KernelSpec::Leaf(k.with_params(take(k.params().len()))?),
            FirstLayer::Sum(ks) => {
                KernelSpec::Sum(ks.iter().map(|k| k.with_params(take(k.params().len()))).collect::<Result<Vec<_>>>()?)
            }
        };
        for w in wraps {
            spec = spec.wrapped(w.with_params(take(w.params().len()))?);
        }
        Ok(spec)
    }

    /// Build a spec with default hyperparameters from a label such as
    /// `SE[SC[NuN]]` or `SE[Lin+SE]`. Defaults: every signal and length is 1,
    /// NuN uses α = 2, β = 1.
    pub fn from_label(label: &str) -> Result<Self> {
        let label = label.trim();
        let bad = || Error::InvalidSpec(format!("cannot parse kernel label `{label}`"));
        if let Some(open) = label.find('[') {
            if !label.ends_with(']') {
                return Err(bad());
            }
            let outer = match &label[..open] {
                "SE" => OuterKernel::squared_exp(1.0, 1.0),
                "SC" => OuterKernel::squared_cosine(1.0, 1.0),
                "NuN" => OuterKernel::nun(1.0, 2.0, 1.0),
                "ErfSESESE" => OuterKernel::erf_three_layer(1.0, 1.0, 1.0, 1.0),
                _ => return Err(bad()),
            };
            let inner = KernelSpec::from_label(&label[open + 1..label.len() - 1])?;
            Ok(inner.wrapped(outer))
        } else {
            let terms = label
                .split('+')
                .map(|t| match t.trim() {
                    "SE" => Ok(BaseKernel::squared_exp(1.0, 1.0)),
                    "SC" => Ok(BaseKernel::squared_cosine(1.0, 1.0)),
                    "Lin" => Ok(BaseKernel::linear(1.0)),
                    "NuN" => Ok(BaseKernel::nun(1.0, 2.0, 1.0)),
                    "Const" => Ok(BaseKernel::constant(1.0)),
                    _ => Err(bad()),
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(if terms.len() == 1 { KernelSpec::Leaf(terms[0]) } else { KernelSpec::Sum(terms) })
        }
    }

    pub fn label(&self) -> String {
        self.to_string()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("kernel spec serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::InvalidSpec(e.to_string()))
    }
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelSpec::Leaf(k) => f.write_str(k.kind_name()),
            KernelSpec::Sum(ks) => {
                let names: Vec<_> = ks.iter().map(BaseKernel::kind_name).collect();
                f.write_str(&names.join("+"))
            }
            KernelSpec::Wrap { outer, inner } => write!(f, "{}[{}]", outer.kind_name(), inner),
        }
    }
}

// ---------------------------------------------------------------------------
// Expressivity diagnostics

/// Wrap chain as a function of the normalized innermost kernel value `u = k/σ_in²`,
/// with the inner diagonal pinned at σ_in².
fn normalized_chain(wraps: &[&OuterKernel], sigma_in2: f64, u: f64) -> f64 {
    let (mut kd, mut kij) = (sigma_in2, u * sigma_in2);
    for w in wraps {
        kij = w.wrap_unchecked(kd, kd, kij);
        kd = w.wrap_unchecked(kd, kd, kd);
    }
    let sigma_out2 = wraps.last().expect("at least one wrap").signal().powi(2);
    kij / sigma_out2
}

fn chi_preconditions(spec: &KernelSpec) -> Result<(FirstLayer<'_>, Vec<&OuterKernel>)> {
    spec.validate()?;
    let (first, wraps) = spec.chain();
    if wraps.is_empty() {
        return Err(Error::InvalidSpec("chi needs at least one wrap layer".into()));
    }
    if wraps.iter().any(|w| matches!(w, OuterKernel::ErfSeSeSe { .. })) {
        return Err(Error::NotSmooth("the erf plateau kernel has no derivative at coincidence".into()));
    }
    Ok((first, wraps))
}

/// χ by central difference on the wrap chain, step [`CHI_STEP`]·σ_in².
pub fn chi_finite_difference(spec: &KernelSpec) -> Result<f64> {
    let (first, wraps) = chi_preconditions(spec)?;
    let s2 = first.signal_variance();
    let h = CHI_STEP;
    Ok((normalized_chain(&wraps, s2, 1.0 + h) - normalized_chain(&wraps, s2, 1.0 - h)) / (2.0 * h))
}

/// Closed-form χ for chains made only of SE layers: `∏ σ_l² / ℓ_{l+1}²`.
pub fn chi_analytic(spec: &KernelSpec) -> Option<f64> {
    let (first, wraps) = spec.chain();
    let mut signal = match first {
        FirstLayer::Single(BaseKernel::SquaredExp { signal, .. }) => *signal,
        _ => return None,
    };
    if wraps.is_empty() {
        return None;
    }
    let mut chi = 1.0;
    for w in wraps {
        match *w {
            OuterKernel::SquaredExp { signal: s, length } => {
                chi *= signal * signal / (length * length);
                signal = s;
            }
            _ => return None,
        }
    }
    Some(chi)
}

/// Expressivity parameter χ: derivative of the normalized effective kernel
/// with respect to the normalized innermost kernel at coincidence.
pub fn chi(spec: &KernelSpec) -> Result<f64> {
    chi_preconditions(spec)?;
    match chi_analytic(spec) {
        Some(c) => Ok(c),
        None => chi_finite_difference(spec),
    }
}

/// `E[f'(x)²]` of a 1-D effective kernel, from
/// `(k(x₁,x₁) + k(x₂,x₂) − 2k(x₁,x₂)) / (x₁−x₂)²` with Richardson extrapolation
/// over halving separations centred on `at`.
pub fn expected_sq_derivative(spec: &KernelSpec, at: &[f64]) -> Result<f64> {
    spec.validate()?;
    check_point(at)?;
    if at.len() != 1 {
        return Err(Error::DimensionMismatch { expected: 1, found: at.len() });
    }
    let x = at[0];
    let increment = |delta: f64| {
        let (a, b) = ([x - 0.5 * delta], [x + 0.5 * delta]);
        let kaa = spec.eval_unchecked(&a, &a);
        let kbb = spec.eval_unchecked(&b, &b);
        let kab = spec.eval_unchecked(&a, &b);
        (kaa + kbb - 2.0 * kab, kaa + kbb)
    };

    // Shrink until the pair is well inside the quadratic regime.
    let mut delta = 1.0;
    loop {
        let (inc, scale) = increment(delta);
        if inc <= 1e-2 * scale || delta < 1e-8 {
            break;
        }
        delta *= 0.5;
    }

    const LEVELS: usize = 4;
    let mut table = [[0.0f64; LEVELS]; LEVELS];
    for i in 0..LEVELS {
        let d = delta / f64::powi(2.0, i as i32);
        table[i][0] = increment(d).0 / (d * d);
        for j in 1..=i {
            let factor = f64::powi(4.0, j as i32);
            table[i][j] = table[i][j - 1] + (table[i][j - 1] - table[i - 1][j - 1]) / (factor - 1.0);
        }
    }
    let raw_first = table[0][0];
    let raw_last = table[LEVELS - 1][0];
    let best = table[LEVELS - 1][LEVELS - 1];
    let prev = table[LEVELS - 1][LEVELS - 2];
    let scale = raw_first.abs().max(raw_last.abs()).max(f64::MIN_POSITIVE);
    if !best.is_finite() || raw_last > 2.0 * raw_first + 1e-12 * scale || (best - prev).abs() > 1e-4 * scale {
        return Err(Error::NotSmooth(format!(
            "difference quotients do not settle (first {raw_first:.6e}, last {raw_last:.6e})"
        )));
    }
    Ok(best.max(0.0))
}

// ---------------------------------------------------------------------------
// JSON exchange format

#[derive(Serialize, Deserialize)]
struct RawSpec {
    kind: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    base: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    outer: Option<String>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty", default)]
    params: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    inner: Option<Box<RawSpec>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    terms: Option<Vec<RawSpec>>,
}

fn param(params: &BTreeMap<String, f64>, name: &str) -> Result<f64> {
    params.get(name).copied().ok_or_else(|| Error::InvalidSpec(format!("missing parameter `{name}`")))
}

fn check_param_names(params: &BTreeMap<String, f64>, allowed: &[(&str, f64)]) -> Result<()> {
    for key in params.keys() {
        if !allowed.iter().any(|(n, _)| n == key) {
            return Err(Error::InvalidSpec(format!("unexpected parameter `{key}`")));
        }
    }
    Ok(())
}

fn base_from_raw(raw: &RawSpec) -> Result<BaseKernel> {
    let p = &raw.params;
    let kind = raw.base.as_deref().ok_or_else(|| Error::InvalidSpec("leaf without `base`".into()))?;
    let k = match kind {
        "SE" => BaseKernel::squared_exp(param(p, "signal")?, param(p, "length")?),
        "SC" => BaseKernel::squared_cosine(param(p, "signal")?, param(p, "length")?),
        "Lin" => BaseKernel::linear(param(p, "signal")?),
        "NuN" => BaseKernel::nun(param(p, "signal")?, param(p, "alpha")?, param(p, "beta")?),
        "Const" => BaseKernel::constant(param(p, "signal")?),
        other => return Err(Error::InvalidSpec(format!("unknown base kernel `{other}`"))),
    };
    check_param_names(p, &k.params())?;
    Ok(k)
}

fn base_to_raw(k: &BaseKernel) -> RawSpec {
    RawSpec {
        kind: "leaf".into(),
        base: Some(k.kind_name().into()),
        outer: None,
        params: k.params().into_iter().map(|(n, v)| (n.to_string(), v)).collect(),
        inner: None,
        terms: None,
    }
}

impl TryFrom<RawSpec> for KernelSpec {
    type Error = Error;

    fn try_from(raw: RawSpec) -> Result<Self> {
        let spec = match raw.kind.as_str() {
            "leaf" => KernelSpec::Leaf(base_from_raw(&raw)?),
            "sum" => {
                let terms = raw.terms.as_ref().ok_or_else(|| Error::InvalidSpec("sum without `terms`".into()))?;
                KernelSpec::Sum(terms.iter().map(base_from_raw).collect::<Result<_>>()?)
            }
            "wrap" => {
                let p = &raw.params;
                let outer = match raw.outer.as_deref() {
                    Some("SE") => OuterKernel::squared_exp(param(p, "signal")?, param(p, "length")?),
                    Some("SC") => OuterKernel::squared_cosine(param(p, "signal")?, param(p, "length")?),
                    Some("NuN") => OuterKernel::nun(param(p, "signal")?, param(p, "alpha")?, param(p, "beta")?),
                    Some("ErfSESESE") => OuterKernel::erf_three_layer(
                        param(p, "signal3")?,
                        param(p, "length3")?,
                        param(p, "signal2")?,
                        param(p, "length2")?,
                    ),
                    Some(other) => return Err(Error::InvalidSpec(format!("unknown outer kernel `{other}`"))),
                    None => return Err(Error::InvalidSpec("wrap without `outer`".into())),
                };
                check_param_names(p, &outer.params())?;
                let inner = raw.inner.ok_or_else(|| Error::InvalidSpec("wrap without `inner`".into()))?;
                KernelSpec::try_from(*inner)?.wrapped(outer)
            }
            other => return Err(Error::InvalidSpec(format!("unknown node kind `{other}`"))),
        };
        Ok(spec)
    }
}

impl From<&KernelSpec> for RawSpec {
    fn from(spec: &KernelSpec) -> Self {
        match spec {
            KernelSpec::Leaf(k) => base_to_raw(k),
            KernelSpec::Sum(ks) => RawSpec {
                kind: "sum".into(),
                base: None,
                outer: None,
                params: BTreeMap::new(),
                inner: None,
                terms: Some(ks.iter().map(base_to_raw).collect()),
            },
            KernelSpec::Wrap { outer, inner } => RawSpec {
                kind: "wrap".into(),
                base: None,
                outer: Some(outer.kind_name().into()),
                params: outer.params().into_iter().map(|(n, v)| (n.to_string(), v)).collect(),
                inner: Some(Box::new(RawSpec::from(inner.as_ref()))),
                terms: None,
            },
        }
    }
}

impl Serialize for KernelSpec {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        RawSpec::from(self).serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for KernelSpec {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let raw = RawSpec::deserialize(deserializer)?;
        KernelSpec::try_from(raw).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn se_se(s1: f64, l1: f64, s2: f64, l2: f64) -> KernelSpec {
        KernelSpec::leaf(BaseKernel::squared_exp(s1, l1)).wrapped(OuterKernel::squared_exp(s2, l2))
    }

    #[test]
    fn wrap_examples() {
        let se = OuterKernel::squared_exp(1.0, 1.0);
        assert_eq!(wrap_outer(&se, InnerEval::new(1.0, 1.0, 1.0).unwrap()).unwrap(), 1.0);
        let rho = (-0.5f64).exp();
        // 1/√(1 + 2(1 − e^{−1/2}))
        assert_relative_eq!(
            wrap_outer(&se, InnerEval::new(1.0, 1.0, rho).unwrap()).unwrap(),
            0.7480750583095446,
            epsilon = 1e-12
        );
        let sc = OuterKernel::squared_cosine(1.0, 1.0);
        assert_eq!(wrap_outer(&sc, InnerEval::new(0.7, 0.7, 0.7).unwrap()).unwrap(), 1.0);
    }

    #[test]
    fn inner_must_be_psd() {
        assert!(InnerEval::new(1.0, 1.0, 1.5).is_err());
        assert!(InnerEval::new(-1.0, 1.0, 0.0).is_err());
        assert!(wrap_outer(&OuterKernel::squared_exp(0.0, 1.0), InnerEval::new(1.0, 1.0, 0.0).unwrap()).is_err());
    }

    #[test]
    fn three_layer_erf_examples() {
        let at = |kii, kij| eval_three_layer_erf(1.0, 1.0, 1.0, 1.0, InnerEval::new(kii, kii, kij).unwrap()).unwrap();
        assert_eq!(at(1.0, 1.0), 1.0);
        assert_eq!(
            eval_three_layer_erf(1.7, 1.0, 1.0, 1.0, InnerEval::new(2.0, 2.0, 2.0).unwrap()).unwrap(),
            1.7 * 1.7
        );
        // (1/√3)(1 − erf(1/√2)) + erf(1/√2); erf(1/√2) = 0.6826894921370859.
        let e = 0.6826894921370859;
        assert_relative_eq!(at(1.0, 0.0), (1.0 - e) / 3f64.sqrt() + e, epsilon = 1e-12);
        assert_relative_eq!(at(1.0, 0.0), 0.8658887992684362, epsilon = 1e-12);
        // σ2/ℓ3 → 0: both branches coincide.
        let v = eval_three_layer_erf(1.3, 1e8, 1.0, 1.0, InnerEval::new(1.0, 1.0, 0.2).unwrap()).unwrap();
        assert_relative_eq!(v, 1.69, epsilon = 1e-12);
        assert!(eval_three_layer_erf(1.0, 1.0, 1.0, 1.0, InnerEval { k_ii: 1.0, k_jj: 1.0, k_ij: 1.1 }).is_err());
    }

    #[test]
    fn erf_only_over_first_layer() {
        let bad = se_se(1.0, 1.0, 1.0, 1.0).wrapped(OuterKernel::erf_three_layer(1.0, 1.0, 1.0, 1.0));
        assert!(matches!(bad.validate(), Err(Error::InvalidSpec(_))));
        let ok = KernelSpec::leaf(BaseKernel::squared_exp(1.0, 1.0))
            .wrapped(OuterKernel::erf_three_layer(1.0, 1.0, 1.0, 1.0));
        assert!(ok.validate().is_ok());
    }

    #[test]
    fn se_se_examples() {
        let k = se_se(1.0, 1.0, 1.0, 1.0);
        assert_eq!(k.eval(&[0.4], &[0.4]).unwrap(), 1.0);
        assert_relative_eq!(k.eval(&[0.0], &[60.0]).unwrap(), 1.0 / 3f64.sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn se_over_linear_is_rational_quadratic_half() {
        let k = KernelSpec::leaf(BaseKernel::linear(1.0)).wrapped(OuterKernel::squared_exp(1.5, 0.7));
        for &(x, y) in &[(0.3, -1.2), (2.0, 2.5), (-3.0, 4.0)] {
            let r2: f64 = (x - y) * (x - y);
            let rq = 1.5f64.powi(2) / (1.0 + r2 / 0.49).sqrt();
            assert_relative_eq!(k.eval(&[x], &[y]).unwrap(), rq, epsilon = 1e-12);
        }
    }

    #[test]
    fn nun_over_se_matches_table_form() {
        // Constants of a[1 + f + b G(Δx², c/2) + d G(Δx², c)]^{-1/2} derived from the NuN wrap.
        let (s1, l1, s2, alpha, beta) = (0.8, 1.3, 1.1, 1.7, 0.6);
        let k = KernelSpec::leaf(BaseKernel::squared_exp(s1, l1)).wrapped(OuterKernel::nun(s2, alpha, beta));
        let (a, c) = (s2 * s2, 2.0 * l1 * l1);
        let f = 2.0 * (alpha - beta) * s1 * s1;
        let b = (alpha * alpha - beta * beta) * s1.powi(4);
        let d = 2.0 * beta * s1 * s1;
        let g = |r2: f64, c: f64| 1.0 - (-r2 / c).exp();
        for i in 0..50 {
            let dx = 0.1 * i as f64;
            let table = a / (1.0 + f + b * g(dx * dx, c / 2.0) + d * g(dx * dx, c)).sqrt();
            assert_relative_eq!(k.eval(&[0.0], &[dx]).unwrap(), table, epsilon = 1e-12);
        }
    }

    #[test]
    fn chi_examples() {
        assert_eq!(chi(&se_se(2.0, 0.3, 1.0, 1.0)).unwrap(), 4.0);
        let three = se_se(1.0, 0.5, 1.0, 1.0).wrapped(OuterKernel::squared_exp(2.0, 1.0));
        assert_eq!(chi(&three).unwrap(), 1.0);
        assert_relative_eq!(chi_finite_difference(&three).unwrap(), 1.0, max_relative = 1e-5);
        assert!(chi(&KernelSpec::leaf(BaseKernel::squared_exp(1.0, 1.0))).is_err());
    }

    #[test]
    fn sq_derivative_examples() {
        let leaf = KernelSpec::leaf(BaseKernel::squared_exp(1.0, 1.0));
        assert_relative_eq!(expected_sq_derivative(&leaf, &[0.2]).unwrap(), 1.0, max_relative = 1e-6);
        let k = se_se(1.0, 1.0, 1.0, 1.0);
        assert_relative_eq!(expected_sq_derivative(&k, &[0.0]).unwrap(), 1.0, max_relative = 1e-6);
        let wide = se_se(1.0, 2.0, 1.0, 1.0);
        assert_relative_eq!(expected_sq_derivative(&wide, &[0.0]).unwrap(), 0.25, max_relative = 1e-6);
        assert!(expected_sq_derivative(&k, &[0.0, 1.0]).is_err());
    }

    #[test]
    fn labels_and_params() {
        let spec = KernelSpec::from_label("SE[SC[NuN]]").unwrap();
        assert_eq!(spec.label(), "SE[SC[NuN]]");
        assert_eq!(spec.depth(), 3);
        assert_eq!(
            spec.param_names(),
            [
                "layer1.signal",
                "layer1.alpha",
                "layer1.beta",
                "layer2.signal",
                "layer2.length",
                "layer3.signal",
                "layer3.length"
            ]
        );
        let sum = KernelSpec::from_label("SE[Lin+SE]").unwrap();
        assert_eq!(sum.param_names()[0], "layer1.term0.signal");
        let values: Vec<f64> = (1..=7).map(|v| v as f64).collect();
        let moved = spec.with_params(&values).unwrap();
        assert_eq!(moved.params().iter().map(|p| p.1).collect::<Vec<_>>(), values);
        assert!(KernelSpec::from_label("SE[SE").is_err());
        assert!(KernelSpec::from_label("Matern").is_err());
    }

    #[test]
    fn json_format() {
        let spec = se_se(1.0, 2.0, 3.0, 4.0);
        let json = spec.to_json();
        assert_eq!(
            json,
            r#"{"kind":"wrap","outer":"SE","params":{"length":4.0,"signal":3.0},"inner":{"kind":"leaf","base":"SE","params":{"length":2.0,"signal":1.0}}}"#
        );
        assert_eq!(KernelSpec::from_json(&json).unwrap(), spec);
        assert!(KernelSpec::from_json(r#"{"kind":"leaf","base":"SE","params":{"signal":1}}"#).is_err());
        assert!(
            KernelSpec::from_json(r#"{"kind":"leaf","base":"SE","params":{"signal":1,"length":1,"bogus":2}}"#).is_err()
        );
    }

    fn any_spec() -> impl Strategy<Value = KernelSpec> {
        let pos = || 0.2f64..2.5;
        let first = prop_oneof![
            (pos(), pos()).prop_map(|(s, l)| BaseKernel::squared_exp(s, l)),
            (pos(), pos()).prop_map(|(s, l)| BaseKernel::squared_cosine(s, l)),
            pos().prop_map(BaseKernel::linear),
        ];
        let outer = prop_oneof![
            (pos(), pos()).prop_map(|(s, l)| OuterKernel::squared_exp(s, l)),
            (pos(), pos()).prop_map(|(s, l)| OuterKernel::squared_cosine(s, l)),
            (pos(), pos(), 0.1f64..0.9).prop_map(|(s, a, f)| OuterKernel::nun(s, a, a * f)),
        ];
        (first, prop::collection::vec(outer, 1..4))
            .prop_map(|(k, ws)| ws.into_iter().fold(KernelSpec::leaf(k), KernelSpec::wrapped))
    }

    proptest! {
        #[test]
        fn json_round_trip(spec in any_spec()) {
            prop_assert_eq!(KernelSpec::from_json(&spec.to_json()).unwrap(), spec);
        }

        #[test]
        fn wrap_monotone_in_kij(kii in 0.1f64..3.0, kjj in 0.1f64..3.0, a in -0.99f64..0.99, b in -0.99f64..0.99, s in 0.2f64..2.0, l in 0.2f64..2.0, cosine in any::<bool>()) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assume!(hi - lo > 1e-3);
            let bound = (kii * kjj).sqrt();
            let outer = if cosine { OuterKernel::squared_cosine(s, l) } else { OuterKernel::squared_exp(s, l) };
            let f_lo = wrap_outer(&outer, InnerEval::new(kii, kjj, lo * bound).unwrap()).unwrap();
            let f_hi = wrap_outer(&outer, InnerEval::new(kii, kjj, hi * bound).unwrap()).unwrap();
            prop_assert!(f_hi >= f_lo);
        }

        #[test]
        fn effective_values_in_range(spec in any_spec(), x in -3.0f64..3.0, y in -3.0f64..3.0) {
            let v = spec.eval(&[x], &[y]).unwrap();
            let s2 = spec.output_variance();
            prop_assert!(v > 0.0 && v <= s2 * (1.0 + 1e-12));
            let sym = spec.eval(&[y], &[x]).unwrap();
            prop_assert!((v - sym).abs() <= 1e-14 * s2);
        }

        #[test]
        fn nun_at_equal_rates_is_se(kii in 0.0f64..3.0, kjj in 0.0f64..3.0, r in -1.0f64..1.0, s in 0.2f64..2.0, l in 0.2f64..3.0) {
            let inner = InnerEval::new(kii, kjj, r * (kii * kjj).sqrt()).unwrap();
            let a = 1.0 / (l * l);
            let nun = wrap_outer(&OuterKernel::nun(s, a, a), inner).unwrap();
            let se = wrap_outer(&OuterKernel::squared_exp(s, l), inner).unwrap();
            prop_assert!((nun - se).abs() <= 1e-12 * s * s);
        }

        #[test]
        fn chi_difference_agrees_with_closed_form(s1 in 0.2f64..2.0, l1 in 0.2f64..2.0, s2 in 0.2f64..2.0, l2 in 0.2f64..2.0, l3 in 0.2f64..2.0) {
            let spec = se_se(s1, l1, s2, l2).wrapped(OuterKernel::squared_exp(1.0, l3));
            let a = chi_analytic(&spec).unwrap();
            let fd = chi_finite_difference(&spec).unwrap();
            prop_assert!((a - fd).abs() <= 1e-5 * a);
        }
    }
}
