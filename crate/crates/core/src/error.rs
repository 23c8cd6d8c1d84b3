use thiserror::Error;

use crate::asymptotics::AsyncGrowthReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("negative {rate} rate {value} at age {age}")]
    NegativeRate {
        rate: &'static str,
        age: f64,
        value: f64,
    },

    #[error("negative entry {value} at ({row}, {col})")]
    NegativeEntry { row: usize, col: usize, value: f64 },

    #[error("non-finite matrix exponential on age interval [{lo}, {hi}]")]
    NonFiniteExponential { lo: f64, hi: f64 },

    #[error("node indices out of order: i = {i} > j = {j}")]
    IndexOrder { i: usize, j: usize },

    #[error("node index {index} outside grid with {len} nodes")]
    IndexRange { index: usize, len: usize },

    #[error("time {t} is not a multiple of the age step {da}")]
    Misaligned { t: f64, da: f64 },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("singular implicit birth term at time step {step}")]
    SingularDiagonal { step: usize },

    #[error("λ = {lambda} lies outside the admissible interval (must exceed {bound})")]
    InadmissibleLambda { lambda: f64, bound: f64 },

    #[error("power iteration did not converge after {iterations} iterations (step change {step_change:.3e}, two-step change {two_step_change:.3e}{})",
        if *.oscillating { "; iterate oscillates, matrix looks periodic or reducible" } else { "" })]
    NotConverged {
        iterations: usize,
        step_change: f64,
        two_step_change: f64,
        oscillating: bool,
    },

    #[error("degenerate matrix: {0}")]
    Degenerate(String),

    #[error("no Malthusian parameter in admissible range: r(Q_λ) = {r_at_bound} at λ = {bound}")]
    NoMalthusianParameter { bound: f64, r_at_bound: f64 },

    #[error("λ = {lambda} is numerically an eigenvalue of the generator (condition estimate {condition:.3e})")]
    NearEigenvalue { lambda: f64, condition: f64 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error(
        "divergent Laplace integrand: trajectory grows at rate {growth_rate:.4} ≥ λ = {lambda}"
    )]
    DivergentIntegrand { lambda: f64, growth_rate: f64 },

    #[error("no decay of e^(-λ₀t)S(t)φ - Pφ detected (fitted rate {})",
        .0.fitted_rate.map(|g| format!("{g:.4e}")).unwrap_or_else(|| "n/a".into()))]
    NoDecay(Box<AsyncGrowthReport>),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Errors caused by bad input rather than by a numerical breakdown.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidModel(_)
                | Error::NegativeRate { .. }
                | Error::NegativeEntry { .. }
                | Error::IndexOrder { .. }
                | Error::IndexRange { .. }
                | Error::Misaligned { .. }
                | Error::GridMismatch(_)
                | Error::InadmissibleLambda { .. }
                | Error::Precondition(_)
                | Error::Config(_)
                | Error::Io(_)
        )
    }
}
