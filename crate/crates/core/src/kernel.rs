//! Single-layer covariance functions.
//!
//! Every kernel carries a signal magnitude `signal` (σ) and evaluates to a
//! multiple of σ². `SquaredCosine` and `NuN` are scalar kernels; on
//! D-dimensional inputs they use `‖x − y‖` and `‖x‖², x·y, ‖y‖²` respectively,
//! which reduces to the scalar form at D = 1.

use crate::error::{check_positive, Error, Result};

/// A single-layer covariance function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BaseKernel {
    /// `σ² exp(−‖x−y‖² / 2ℓ²)`
    SquaredExp { signal: f64, length: f64 },
    /// `σ² cos²(‖x−y‖ / 2ℓ)`
    SquaredCosine { signal: f64, length: f64 },
    /// `σ² x·y`
    Linear { signal: f64 },
    /// `σ² exp[−(α‖x‖² − 2β x·y + α‖y‖²) / 2]`, requires α > β > 0.
    NuN { signal: f64, alpha: f64, beta: f64 },
    /// `σ²`
    Const { signal: f64 },
}

pub(crate) fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

pub(crate) fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

impl BaseKernel {
    pub fn squared_exp(signal: f64, length: f64) -> Self {
        BaseKernel::SquaredExp { signal, length }
    }

    pub fn squared_cosine(signal: f64, length: f64) -> Self {
        BaseKernel::SquaredCosine { signal, length }
    }

    pub fn linear(signal: f64) -> Self {
        BaseKernel::Linear { signal }
    }

    pub fn nun(signal: f64, alpha: f64, beta: f64) -> Self {
        BaseKernel::NuN { signal, alpha, beta }
    }

    pub fn constant(signal: f64) -> Self {
        BaseKernel::Const { signal }
    }

    /// Short name used in labels and the JSON exchange format.
    pub fn kind_name(&self) -> &'static str {
        match self {
            BaseKernel::SquaredExp { .. } => "SE",
            BaseKernel::SquaredCosine { .. } => "SC",
            BaseKernel::Linear { .. } => "Lin",
            BaseKernel::NuN { .. } => "NuN",
            BaseKernel::Const { .. } => "Const",
        }
    }

    pub fn signal(&self) -> f64 {
        match *self {
            BaseKernel::SquaredExp { signal, .. }
            | BaseKernel::SquaredCosine { signal, .. }
            | BaseKernel::Linear { signal }
            | BaseKernel::NuN { signal, .. }
            | BaseKernel::Const { signal } => signal,
        }
    }

    /// Hyperparameters in a fixed order, paired with their names.
    pub fn params(&self) -> Vec<(&'static str, f64)> {
        match *self {
            BaseKernel::SquaredExp { signal, length } | BaseKernel::SquaredCosine { signal, length } => {
                vec![("signal", signal), ("length", length)]
            }
            BaseKernel::Linear { signal } | BaseKernel::Const { signal } => vec![("signal", signal)],
            BaseKernel::NuN { signal, alpha, beta } => {
                vec![("signal", signal), ("alpha", alpha), ("beta", beta)]
            }
        }
    }

    /// Rebuild with new values in the order returned by [`BaseKernel::params`].
    pub fn with_params(&self, values: &[f64]) -> Result<Self> {
        let n = self.params().len();
        if values.len() != n {
            return Err(Error::DimensionMismatch { expected: n, found: values.len() });
        }
        Ok(match self {
            BaseKernel::SquaredExp { .. } => BaseKernel::squared_exp(values[0], values[1]),
            BaseKernel::SquaredCosine { .. } => BaseKernel::squared_cosine(values[0], values[1]),
            BaseKernel::Linear { .. } => BaseKernel::linear(values[0]),
            BaseKernel::NuN { .. } => BaseKernel::nun(values[0], values[1], values[2]),
            BaseKernel::Const { .. } => BaseKernel::constant(values[0]),
        })
    }

    pub fn validate(&self) -> Result<()> {
        for (name, value) in self.params() {
            check_positive(name, value)?;
        }
        if let BaseKernel::NuN { alpha, beta, .. } = *self {
            if alpha <= beta {
                return Err(Error::NunOrdering { alpha, beta });
            }
        }
        Ok(())
    }

    /// Kernel value with no validation; callers must have validated `self`.
    pub(crate) fn eval_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        match *self {
            BaseKernel::SquaredExp { signal, length } => {
                signal * signal * (-sq_dist(x, y) / (2.0 * length * length)).exp()
            }
            BaseKernel::SquaredCosine { signal, length } => {
                let c = (sq_dist(x, y).sqrt() / (2.0 * length)).cos();
                signal * signal * c * c
            }
            BaseKernel::Linear { signal } => signal * signal * dot(x, y),
            BaseKernel::NuN { signal, alpha, beta } => {
                let q = alpha * (dot(x, x) + dot(y, y)) - 2.0 * beta * dot(x, y);
                signal * signal * (-q / 2.0).exp()
            }
            BaseKernel::Const { signal } => signal * signal,
        }
    }

    pub(crate) fn diag_unchecked(&self, x: &[f64]) -> f64 {
        match *self {
            BaseKernel::SquaredExp { signal, .. }
            | BaseKernel::SquaredCosine { signal, .. }
            | BaseKernel::Const { signal } => signal * signal,
            BaseKernel::Linear { signal } => signal * signal * dot(x, x),
            BaseKernel::NuN { signal, alpha, beta } => signal * signal * (-(alpha - beta) * dot(x, x)).exp(),
        }
    }

    /// Evaluate `k(x, y)`.
    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        self.validate()?;
        check_points(x, y)?;
        Ok(self.eval_unchecked(x, y))
    }

    /// Evaluate `k(x, x)` without forming the pair.
    pub fn diag_value(&self, x: &[f64]) -> Result<f64> {
        self.validate()?;
        check_point(x)?;
        Ok(self.diag_unchecked(x))
    }

    /// True when `k(x, x)` does not depend on `x`.
    pub fn has_constant_diagonal(&self) -> bool {
        !matches!(self, BaseKernel::Linear { .. } | BaseKernel::NuN { .. })
    }
}

pub(crate) fn check_point(x: &[f64]) -> Result<()> {
    if x.is_empty() {
        return Err(Error::DimensionMismatch { expected: 1, found: 0 });
    }
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteInput)
    }
}

pub(crate) fn check_points(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch { expected: x.len(), found: y.len() });
    }
    check_point(x)?;
    check_point(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn se_values() {
        let k = BaseKernel::squared_exp(1.0, 1.0);
        assert_eq!(k.eval(&[0.3, -1.0], &[0.3, -1.0]).unwrap(), 1.0);
        assert_relative_eq!(k.eval(&[0.0], &[1.0]).unwrap(), 0.6065306597126334, epsilon = 1e-15);
        assert_eq!(BaseKernel::squared_exp(2.0, 0.1).diag_value(&[5.0]).unwrap(), 4.0);
    }

    #[test]
    fn linear_and_cosine() {
        assert_eq!(BaseKernel::linear(1.0).eval(&[1.0, 2.0], &[3.0, 4.0]).unwrap(), 11.0);
        assert_eq!(BaseKernel::linear(1.0).diag_value(&[3.0, 4.0]).unwrap(), 25.0);
        assert_eq!(BaseKernel::squared_cosine(1.0, 1.0).eval(&[2.0], &[2.0]).unwrap(), 1.0);
    }

    #[test]
    fn nun_diagonal() {
        let k = BaseKernel::nun(1.0, 2.0, 1.0);
        assert_relative_eq!(k.diag_value(&[1.0]).unwrap(), (-1f64).exp(), epsilon = 1e-15);
        assert_relative_eq!(k.diag_value(&[1.0]).unwrap(), k.eval(&[1.0], &[1.0]).unwrap(), epsilon = 1e-15);
    }

    #[test]
    fn errors() {
        let k = BaseKernel::squared_exp(1.0, 1.0);
        assert!(matches!(k.eval(&[0.0], &[0.0, 1.0]), Err(Error::DimensionMismatch { .. })));
        assert!(matches!(
            BaseKernel::squared_exp(0.0, 1.0).eval(&[0.0], &[0.0]),
            Err(Error::NonPositiveParameter { .. })
        ));
        assert!(matches!(BaseKernel::nun(1.0, 1.0, 1.0).eval(&[0.0], &[0.0]), Err(Error::NunOrdering { .. })));
        assert!(matches!(k.eval(&[f64::NAN], &[0.0]), Err(Error::NonFiniteInput)));
    }

    fn any_kernel() -> impl Strategy<Value = BaseKernel> {
        let pos = || 0.1f64..3.0;
        prop_oneof![
            (pos(), pos()).prop_map(|(s, l)| BaseKernel::squared_exp(s, l)),
            (pos(), pos()).prop_map(|(s, l)| BaseKernel::squared_cosine(s, l)),
            pos().prop_map(BaseKernel::linear),
            (pos(), pos(), 0.05f64..1.0).prop_map(|(s, b, f)| BaseKernel::nun(s, b, b * f)),
            pos().prop_map(BaseKernel::constant),
        ]
    }

    proptest! {
        #[test]
        fn symmetric(k in any_kernel(), x in prop::collection::vec(-3.0f64..3.0, 2), y in prop::collection::vec(-3.0f64..3.0, 2)) {
            prop_assert_eq!(k.eval(&x, &y).unwrap(), k.eval(&y, &x).unwrap());
        }

        #[test]
        fn diag_matches_eval(k in any_kernel(), x in prop::collection::vec(-3.0f64..3.0, 1..4)) {
            let d = k.diag_value(&x).unwrap();
            let e = k.eval(&x, &x).unwrap();
            prop_assert!((d - e).abs() <= 1e-12 * d.abs().max(1.0));
        }

        #[test]
        fn stationary_under_translation(s in 0.1f64..3.0, l in 0.1f64..3.0, x in -3.0f64..3.0, y in -3.0f64..3.0, t in -10.0f64..10.0, cosine in any::<bool>()) {
            let k = if cosine { BaseKernel::squared_cosine(s, l) } else { BaseKernel::squared_exp(s, l) };
            let a = k.eval(&[x], &[y]).unwrap();
            let b = k.eval(&[x + t], &[y + t]).unwrap();
            prop_assert!((a - b).abs() <= 1e-9 * s * s);
            prop_assert!(a >= 0.0 && a <= s * s);
        }

        #[test]
        fn nun_bounded(s in 0.1f64..3.0, a in 0.1f64..3.0, f in 0.05f64..0.99, x in -3.0f64..3.0, y in -3.0f64..3.0) {
            let v = BaseKernel::nun(s, a, a * f).eval(&[x], &[y]).unwrap();
            prop_assert!(v > 0.0 && v <= s * s * (1.0 + 1e-15));
        }
    }
}
