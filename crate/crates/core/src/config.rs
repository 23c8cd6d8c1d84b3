//! TOML model configuration.
//!
//! ```toml
//! [age]
//! a_max = 1.0          # truncation age
//! K = 200              # number of age intervals
//! infinite = false     # true: a_max is extended until e^{-margin·a_max} < tail_tol
//! decay_margin = 0.5   # required when infinite = true
//! tail_tol = 1e-10
//!
//! [space]
//! n = 1                # spatial points (1 with D = 0 is the scalar model)
//! L = 1.0
//! D = 0.0
//! boundary = "dirichlet"   # or "neumann"
//!
//! [rates]
//! mu = [[0.0, 0.0]]        # (age, value) breakpoints, linear in between
//! beta = [[0.0, 2.0]]
//!
//! [numerics]
//! substeps = 1
//! tol = 1e-12
//! eps_band = 1e-6
//!
//! [initial]                # optional, default φ ≡ 1
//! phi = [[0.0, 1.0]]       # age profile
//! spatial = "uniform"      # or "sine" (first Dirichlet mode)
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Vector;
use crate::model::{
    build_diffusion_model, AgeGridSpec, Boundary, ModelSpec, PiecewiseLinear, SpatialSpec,
    DEFAULT_TAIL_TOL,
};
use crate::semigroup::PopulationDensity;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgeSection {
    pub a_max: f64,
    #[serde(rename = "K", alias = "k")]
    pub k: usize,
    #[serde(default)]
    pub infinite: bool,
    #[serde(default)]
    pub decay_margin: Option<f64>,
    #[serde(default = "default_tail_tol")]
    pub tail_tol: f64,
}

fn default_tail_tol() -> f64 {
    DEFAULT_TAIL_TOL
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceSection {
    #[serde(default = "one")]
    pub n: usize,
    #[serde(rename = "L", alias = "length", default = "unit")]
    pub length: f64,
    #[serde(rename = "D", alias = "diffusivity", default)]
    pub diffusivity: f64,
    #[serde(default = "dirichlet")]
    pub boundary: Boundary,
}

impl Default for SpaceSection {
    fn default() -> Self {
        Self {
            n: 1,
            length: 1.0,
            diffusivity: 0.0,
            boundary: Boundary::Dirichlet,
        }
    }
}

fn one() -> usize {
    1
}

fn unit() -> f64 {
    1.0
}

fn dirichlet() -> Boundary {
    Boundary::Dirichlet
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RatesSection {
    pub mu: Vec<(f64, f64)>,
    pub beta: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NumericsSection {
    #[serde(default = "one")]
    pub substeps: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_band")]
    pub eps_band: f64,
}

fn default_tol() -> f64 {
    1e-12
}

fn default_band() -> f64 {
    crate::spectral::DEFAULT_EPS_BAND
}

impl Default for NumericsSection {
    fn default() -> Self {
        Self {
            substeps: 1,
            tol: default_tol(),
            eps_band: default_band(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpatialProfile {
    Uniform,
    Sine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    #[serde(default = "unit_profile")]
    pub phi: Vec<(f64, f64)>,
    #[serde(default = "uniform")]
    pub spatial: SpatialProfile,
}

fn unit_profile() -> Vec<(f64, f64)> {
    vec![(0.0, 1.0)]
}

fn uniform() -> SpatialProfile {
    SpatialProfile::Uniform
}

impl Default for InitialSection {
    fn default() -> Self {
        Self {
            phi: unit_profile(),
            spatial: SpatialProfile::Uniform,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub age: AgeSection,
    #[serde(default)]
    pub space: SpaceSection,
    pub rates: RatesSection,
    #[serde(default)]
    pub numerics: NumericsSection,
    #[serde(default)]
    pub initial: InitialSection,
}

impl ModelConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    fn check(&self) -> Result<()> {
        let bad = |field: &str, why: &str| Err(Error::Config(format!("{field}: {why}")));
        if !(self.age.a_max.is_finite() && self.age.a_max > 0.0) {
            return bad("age.a_max", "must be positive and finite");
        }
        if self.age.k == 0 {
            return bad("age.K", "must be at least 1");
        }
        if self.age.infinite && !self.age.decay_margin.is_some_and(|m| m > 0.0) {
            return bad(
                "age.decay_margin",
                "a positive margin is required when infinite = true",
            );
        }
        if !(self.age.tail_tol > 0.0 && self.age.tail_tol < 1.0) {
            return bad("age.tail_tol", "must lie in (0, 1)");
        }
        if self.space.n == 0 {
            return bad("space.n", "must be at least 1");
        }
        if !(self.space.length.is_finite() && self.space.length > 0.0) {
            return bad("space.L", "must be positive and finite");
        }
        if !(self.space.diffusivity.is_finite() && self.space.diffusivity >= 0.0) {
            return bad("space.D", "must be nonnegative");
        }
        if self.rates.mu.is_empty() {
            return bad("rates.mu", "needs at least one (age, value) pair");
        }
        if self.rates.beta.is_empty() {
            return bad("rates.beta", "needs at least one (age, value) pair");
        }
        if self.numerics.substeps == 0 {
            return bad("numerics.substeps", "must be at least 1");
        }
        if !(self.numerics.tol > 0.0 && self.numerics.tol < 1.0) {
            return bad("numerics.tol", "must lie in (0, 1)");
        }
        if !(self.numerics.eps_band >= 0.0 && self.numerics.eps_band < 1.0) {
            return bad("numerics.eps_band", "must lie in [0, 1)");
        }
        if self.initial.phi.is_empty() {
            return bad("initial.phi", "needs at least one (age, value) pair");
        }
        Ok(())
    }

    pub fn grid_spec(&self) -> AgeGridSpec {
        match (self.age.infinite, self.age.decay_margin) {
            (true, Some(margin)) => {
                AgeGridSpec::infinite(self.age.a_max, self.age.k, margin, self.age.tail_tol)
            }
            _ => AgeGridSpec::finite(self.age.a_max, self.age.k),
        }
    }

    pub fn spatial(&self) -> SpatialSpec {
        SpatialSpec {
            length: self.space.length,
            n: self.space.n,
            diffusivity: self.space.diffusivity,
            boundary: self.space.boundary,
        }
    }

    pub fn build(&self) -> Result<ModelSpec> {
        let field = |name: &'static str, e: Error| match e {
            Error::InvalidModel(msg) => Error::Config(format!("{name}: {msg}")),
            other => other,
        };
        let mu = PiecewiseLinear::new(self.rates.mu.clone()).map_err(|e| field("rates.mu", e))?;
        let beta =
            PiecewiseLinear::new(self.rates.beta.clone()).map_err(|e| field("rates.beta", e))?;
        build_diffusion_model(&self.spatial(), &mu, &beta, &self.grid_spec())
    }

    /// Initial density `φ(a, x) = f(a) g(x)` on the model grid.
    pub fn initial_density(&self, m: &ModelSpec) -> Result<PopulationDensity> {
        let f = PiecewiseLinear::new(self.initial.phi.clone()).map_err(|e| match e {
            Error::InvalidModel(msg) => Error::Config(format!("initial.phi: {msg}")),
            other => other,
        })?;
        let spatial = self.spatial();
        let g = match self.initial.spatial {
            SpatialProfile::Uniform => Vector::from_element(spatial.n, 1.0),
            SpatialProfile::Sine => Vector::from_iterator(
                spatial.n,
                spatial
                    .points()
                    .into_iter()
                    .map(|x| (std::f64::consts::PI * x / spatial.length).sin()),
            ),
        };
        PopulationDensity::from_fn(&m.grid, |a| &g * f.eval(a))
    }
}
