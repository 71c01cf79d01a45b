use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("parameter `{name}` must be strictly positive and finite, got {value}")]
    NonPositiveParameter { name: String, value: f64 },

    #[error("NuN kernel requires alpha > beta > 0 (alpha = {alpha}, beta = {beta})")]
    NunOrdering { alpha: f64, beta: f64 },

    #[error("non-finite input coordinate")]
    NonFiniteInput,

    #[error("inner covariance is not positive semidefinite: k_ii = {k_ii}, k_jj = {k_jj}, k_ij = {k_ij}")]
    InnerNotPsd { k_ii: f64, k_jj: f64, k_ij: f64 },

    #[error("invalid kernel spec: {0}")]
    InvalidSpec(String),

    #[error("Cholesky factorization failed at maximum jitter for {context}")]
    NotPositiveDefinite { context: String },

    #[error("divergent Gaussian expectation: |I + KJ| = {determinant}")]
    DivergentExpectation { determinant: f64 },

    #[error("kernel is not smooth at coincidence: {0}")]
    NotSmooth(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("optimization failed: {0}")]
    Optimization(String),

    #[error("unknown hyperparameter `{0}`")]
    UnknownParameter(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_positive(name: &str, value: f64) -> Result<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::NonPositiveParameter { name: name.to_string(), value })
    }
}
