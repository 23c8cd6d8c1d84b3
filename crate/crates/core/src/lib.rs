//! Numerical toolkit for linear age-structured population models with
//! spatial diffusion, posed on finite-dimensional state spaces.
//!
//! The population density `u(t, a)` takes values in `R^n` (a discretized
//! spatial state) and evolves by
//!
//! ```text
//! ∂_t u + ∂_a u + A(a) u = 0,      u(t, 0) = ∫ b(a) u(t, a) da,      u(0, ·) = φ.
//! ```
//!
//! The crate is organized bottom-up:
//!
//! * [`model`] – age grids, generator families `A(a)`, birth kernels `b(a)`, presets.
//! * [`evolution`] – the evolution operator `Π(a, σ)` of `da/dφ = -A(a) φ`.
//! * [`semigroup`] – the renewal (Volterra) equation for births and the
//!   characteristics formula for `S(t)`.
//! * [`spectral`] – the renewal operator `Q_λ`, its Perron root and the
//!   Malthusian parameter `λ₀`.
//! * [`resolvent`] – closed-form resolvent of the generator and a Laplace
//!   transform cross-check.
//! * [`asymptotics`] – the rank-one spectral projection at `λ₀` and
//!   asynchronous exponential growth diagnostics.
//! * [`oracle`] – an independent method-of-lines discretization used for
//!   cross-validation.
//!
//! Data-parallel loops (age intervals, age nodes, λ sweeps, oracle blocks) run
//! on rayon when the default `parallel` feature is enabled and sequentially
//! otherwise. Results do not depend on the schedule.

pub mod asymptotics;
pub mod config;
pub mod error;
pub mod evolution;
pub mod export;
pub mod linalg;
pub mod model;
pub mod oracle;
pub mod par;
pub mod resolvent;
pub mod semigroup;
pub mod spectral;

pub use error::{Error, Result};
pub use linalg::{Mat, Vector};

pub use asymptotics::{
    async_growth_verify, h_lambda, projection_apply, projection_properties_check,
    residue_limit_check, AsyncGrowthReport, GrowthStatus, ProjectionReport, ResidueReport,
    SpectralProjection,
};
pub use config::ModelConfig;
pub use evolution::{build_propagator, DecayEstimate, Propagator};
pub use model::{
    build_diffusion_model, irreducibility_check, validate_model, AgeGrid, AgeGridSpec, BirthKernel,
    Boundary, GeneratorFamily, ModelSpec, PiecewiseLinear, SpatialSpec, ValidationReport,
};
pub use oracle::{assemble_oracle, oracle_evolve, OracleMatrix};
pub use resolvent::{domain_check, laplace_oracle, resolvent_apply, DomainResiduals, Resolvent};
pub use semigroup::{
    apply_semigroup, birth_consistency, growth_envelope_check, simulate, solve_birth,
    BirthTrajectory, GrowthEnvelope, PopulationDensity, SemigroupMarch,
};
pub use spectral::{
    classify_stability, find_lambda0, generator_eigenfunction, perron_root, renewal_operator,
    spectral_radius_curve, Eigenfunction, MalthusianResult, RenewalKernel, SpectralReport,
    Stability, StabilityVerdict,
};
