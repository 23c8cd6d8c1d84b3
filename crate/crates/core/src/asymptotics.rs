//! Rank-one spectral projection at the Malthusian parameter and asynchronous
//! exponential growth diagnostics.
//!
//! ```text
//! P φ = ⟨w*, H_{λ₀} φ⟩ / ⟨w*, ∫ a b(a) Π_{λ₀}(a, 0) da Φ₀⟩ · Π_{λ₀}(·, 0) Φ₀,
//! H_λ φ = ∫ b(s) ∫_0^s Π_λ(s, σ) φ(σ) dσ ds.
//! ```

use serde::Serialize;

use crate::error::{Error, Result};
use crate::evolution::Propagator;
use crate::linalg::{linear_fit, Vector};
use crate::model::ModelSpec;
use crate::par;
use crate::resolvent::{birth_quadrature, renewal_solver, twisted_profile, v_part};
use crate::semigroup::{time_index, PopulationDensity, SemigroupMarch};
use crate::spectral::{spectral_report, MalthusianResult, RenewalKernel, SpectralReport};

/// Largest `|r(Q_{λ₀}) − 1|` accepted by the projection.
pub const LAMBDA0_RESIDUAL_LIMIT: f64 = 1e-8;
/// Noise floor for the convergence-rate fit.
pub const NOISE_FLOOR: f64 = 1e-12;

/// `H_λ φ = Σ_k w_k b_k (v_λ φ)(a_k)`.
pub fn h_lambda(
    m: &ModelSpec,
    p: &Propagator,
    lambda: f64,
    phi: &PopulationDensity,
) -> Result<Vector> {
    m.check_lambda(lambda)?;
    Ok(birth_quadrature(m, &v_part(m, p, lambda, phi)))
}

/// The projection `P_{λ₀}` with its Perron data precomputed.
#[derive(Debug, Clone)]
pub struct SpectralProjection<'a> {
    model: &'a ModelSpec,
    prop: &'a Propagator,
    lambda0: f64,
    report: SpectralReport,
    wstar: Vector,
    /// `Π_{λ₀}(·, 0) Φ₀`.
    profile: PopulationDensity,
    denominator: f64,
}

impl<'a> SpectralProjection<'a> {
    pub fn new(m: &'a ModelSpec, p: &'a Propagator, mal: &MalthusianResult) -> Result<Self> {
        if !(mal.residual <= LAMBDA0_RESIDUAL_LIMIT) {
            return Err(Error::Precondition(format!(
                "Malthusian residual {:e} exceeds {LAMBDA0_RESIDUAL_LIMIT:e}",
                mal.residual
            )));
        }
        let kernel = RenewalKernel::new(m, p);
        let report = spectral_report(&kernel, mal.lambda0, 1e-15)?;
        if !report.simple || !(report.gap > 0.0) {
            return Err(Error::Precondition(format!(
                "Perron root at λ₀ is not simple (gap {:e})",
                report.gap
            )));
        }
        let phi0 = report.phi0_vec();
        let wstar = report.wstar_vec();
        let moment = kernel.first_moment(mal.lambda0)?;
        let denominator = wstar.dot(&(moment * &phi0));
        let scale = wstar.norm() * phi0.norm() * m.grid.a_max();
        if !(denominator > 1e-14 * scale) {
            return Err(Error::Degenerate(format!(
                "projection denominator {denominator:e} vanishes; Perron data inconsistent"
            )));
        }
        let profile = twisted_profile(m, p, mal.lambda0, &phi0);
        Ok(Self {
            model: m,
            prop: p,
            lambda0: mal.lambda0,
            report,
            wstar,
            profile,
            denominator,
        })
    }

    pub fn lambda0(&self) -> f64 {
        self.lambda0
    }

    pub fn report(&self) -> &SpectralReport {
        &self.report
    }

    /// The eigenfunction spanning the range.
    pub fn profile(&self) -> &PopulationDensity {
        &self.profile
    }

    /// `⟨w*, H_{λ₀} φ⟩`.
    pub fn numerator(&self, phi: &PopulationDensity) -> f64 {
        self.wstar.dot(&birth_quadrature(
            self.model,
            &v_part(self.model, self.prop, self.lambda0, phi),
        ))
    }

    pub fn denominator(&self) -> f64 {
        self.denominator
    }

    /// `Pφ = coefficient(φ) · profile`.
    pub fn coefficient(&self, phi: &PopulationDensity) -> f64 {
        self.numerator(phi) / self.denominator
    }

    pub fn apply(&self, phi: &PopulationDensity) -> Result<PopulationDensity> {
        if !phi.grid().compatible(&self.model.grid) || phi.dim() != self.model.dim() {
            return Err(Error::GridMismatch("density does not match model".into()));
        }
        Ok(self.profile.scale(self.coefficient(phi)))
    }
}

pub fn projection_apply(
    m: &ModelSpec,
    p: &Propagator,
    mal: &MalthusianResult,
    phi: &PopulationDensity,
) -> Result<PopulationDensity> {
    SpectralProjection::new(m, p, mal)?.apply(phi)
}

/// Per-sample projection diagnostics, all relative to `‖φ‖`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProjectionSample {
    /// `‖P(Pφ) − Pφ‖ / ‖φ‖`.
    pub idempotency: f64,
    /// Distance of `Pφ` from the span of the eigenfunction, relative to `‖Pφ‖`.
    pub collinearity: f64,
    /// `max_t ‖P(S(t)φ) − e^{λ₀t} Pφ‖ / (e^{λ₀t} ‖φ‖)` over grid `t <= t_max`.
    pub commutation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProjectionReport {
    pub samples: Vec<ProjectionSample>,
    pub max_idempotency: f64,
    pub max_collinearity: f64,
    pub max_commutation: f64,
}

pub fn projection_properties_check(
    m: &ModelSpec,
    p: &Propagator,
    mal: &MalthusianResult,
    samples: &[PopulationDensity],
    t_max: f64,
) -> Result<ProjectionReport> {
    let proj = SpectralProjection::new(m, p, mal)?;
    let steps = time_index(t_max, m.grid.da())?;
    let profile_norm_sq = proj.profile.dot(&proj.profile);
    let results = par::map_slice(samples, |phi| -> Result<ProjectionSample> {
        let norm = phi.norm();
        let scale = if norm > 0.0 { norm } else { 1.0 };
        let p_phi = proj.apply(phi)?;
        let pp_phi = proj.apply(&p_phi)?;
        let idempotency = pp_phi.sub(&p_phi).norm() / scale;
        let p_norm = p_phi.norm();
        let collinearity = if p_norm > 0.0 {
            let c = p_phi.dot(&proj.profile) / profile_norm_sq;
            p_phi.sub(&proj.profile.scale(c)).norm() / p_norm
        } else {
            0.0
        };
        let mut march = SemigroupMarch::new(m, p, phi)?;
        let mut commutation: f64 = 0.0;
        for mt in 1..=steps {
            march.advance();
            let growth = (mal.lambda0 * mt as f64 * m.grid.da()).exp();
            let lhs = proj.apply(&march.density())?;
            let err = lhs.sub(&p_phi.scale(growth)).norm() / (growth * scale);
            commutation = commutation.max(err);
        }
        Ok(ProjectionSample {
            idempotency,
            collinearity,
            commutation,
        })
    });
    let samples = results.into_iter().collect::<Result<Vec<_>>>()?;
    let max = |f: fn(&ProjectionSample) -> f64| samples.iter().map(f).fold(0.0, f64::max);
    Ok(ProjectionReport {
        max_idempotency: max(|s| s.idempotency),
        max_collinearity: max(|s| s.collinearity),
        max_commutation: max(|s| s.commutation),
        samples,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum GrowthStatus {
    /// `e(t)` decays at the fitted rate.
    Converging,
    /// `e(t)` sits at the noise floor beyond the transient.
    AtNoiseFloor,
    /// No decay beyond the transient.
    NoDecay,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AsyncGrowthReport {
    pub lambda0: f64,
    pub times: Vec<f64>,
    /// `e(t_m) = ‖e^{-λ₀ t_m} S(t_m)φ − P_{λ₀}φ‖`.
    pub errors: Vec<f64>,
    pub fitted_rate: Option<f64>,
    /// First `t` with `e(t) < e(0)/2`.
    pub transient_cutoff: Option<f64>,
    pub status: GrowthStatus,
    pub phi_norm: f64,
}

impl AsyncGrowthReport {
    /// `e(t)` at the grid time closest to `t`.
    pub fn error_at(&self, t: f64) -> Option<f64> {
        let (idx, _) = self
            .times
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - t).abs().total_cmp(&(b.1 - t).abs()))?;
        Some(self.errors[idx])
    }
}

pub fn async_growth_verify(
    m: &ModelSpec,
    p: &Propagator,
    mal: &MalthusianResult,
    phi: &PopulationDensity,
    horizon: f64,
) -> Result<AsyncGrowthReport> {
    let phi_norm = phi.norm();
    if phi_norm == 0.0 {
        return Err(Error::Precondition("initial density is zero".into()));
    }
    let kernel = RenewalKernel::new(m, p);
    let r_q0 = spectral_report(&kernel, 0.0, 1e-14)?.r;
    if r_q0 < 1.0 - crate::spectral::DEFAULT_EPS_BAND {
        return Err(Error::Precondition(format!(
            "population is stable (r(Q_0) = {r_q0}); asynchronous growth needs r(Q_0) >= 1"
        )));
    }
    let proj = SpectralProjection::new(m, p, mal)?;
    let p_phi = proj.apply(phi)?;
    let steps = time_index(horizon, m.grid.da())?;
    let mut march = SemigroupMarch::new(m, p, phi)?;
    let mut times = Vec::with_capacity(steps + 1);
    let mut errors = Vec::with_capacity(steps + 1);
    for mt in 0..=steps {
        if mt > 0 {
            march.advance();
        }
        let t = mt as f64 * m.grid.da();
        let scaled = march.density().scale((-mal.lambda0 * t).exp());
        times.push(t);
        errors.push(scaled.sub(&p_phi).norm());
    }

    let floor = NOISE_FLOOR * phi_norm.max(1.0);
    let transient_cutoff = times
        .iter()
        .zip(&errors)
        .find(|(_, &e)| e < 0.5 * errors[0])
        .map(|(&t, _)| t);
    let start = transient_cutoff
        .map(|t| times.iter().position(|&x| x == t).unwrap())
        .unwrap_or(0);
    let above: Vec<(f64, f64)> = times[start..]
        .iter()
        .zip(&errors[start..])
        .filter(|(_, &e)| e > floor)
        .map(|(&t, &e)| (t, e.ln()))
        .collect();
    let tail = &above[above.len() / 2..];
    let (xs, ys): (Vec<f64>, Vec<f64>) = tail.iter().copied().unzip();
    let fitted_rate = if tail.len() >= 3 {
        linear_fit(&xs, &ys).map(|(slope, _)| -slope)
    } else {
        None
    };
    let status = match fitted_rate {
        None => GrowthStatus::AtNoiseFloor,
        Some(g) if g > 0.0 => GrowthStatus::Converging,
        Some(_) => GrowthStatus::NoDecay,
    };
    let report = AsyncGrowthReport {
        lambda0: mal.lambda0,
        times,
        errors,
        fitted_rate,
        transient_cutoff,
        status,
        phi_norm,
    };
    if status == GrowthStatus::NoDecay {
        return Err(Error::NoDecay(Box::new(report)));
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResidueEntry {
    pub delta: f64,
    /// `‖(λ − λ₀) w_λ φ − P_{λ₀}φ‖ / ‖P_{λ₀}φ‖`.
    pub relative_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidueReport {
    pub entries: Vec<ResidueEntry>,
    /// Offsets refused by the conditioning guard.
    pub refused: Vec<f64>,
    /// Errors decrease along the offsets.
    pub decreasing: bool,
}

impl ResidueReport {
    pub fn error_at(&self, delta: f64) -> Option<f64> {
        self.entries
            .iter()
            .find(|e| (e.delta - delta).abs() <= 1e-12 * delta.abs())
            .map(|e| e.relative_error)
    }
}

/// Compares `(λ − λ₀) Π_λ(·, 0)(1 − Q_λ)^{-1} H_λ φ` at `λ = λ₀ + δ` with
/// `P_{λ₀} φ` for a decreasing sequence of offsets `δ`.
pub fn residue_limit_check(
    m: &ModelSpec,
    p: &Propagator,
    mal: &MalthusianResult,
    phi: &PopulationDensity,
    deltas: &[f64],
) -> Result<ResidueReport> {
    let proj = SpectralProjection::new(m, p, mal)?;
    let target = proj.apply(phi)?;
    let target_norm = target.norm();
    if target_norm == 0.0 {
        return Err(Error::Precondition(
            "P_λ₀ φ vanishes; residue check undefined".into(),
        ));
    }
    let kernel = RenewalKernel::new(m, p);
    let mut entries = Vec::new();
    let mut refused = Vec::new();
    for &delta in deltas {
        let lambda = mal.lambda0 + delta;
        let solver = match renewal_solver(&kernel, lambda) {
            Ok(s) => s,
            Err(Error::NearEigenvalue { .. }) => {
                refused.push(delta);
                continue;
            }
            Err(e) => return Err(e),
        };
        let h = birth_quadrature(m, &v_part(m, p, lambda, phi));
        let w = twisted_profile(m, p, lambda, &solver.solve(&h));
        let err = w.scale(delta).sub(&target).norm() / target_norm;
        entries.push(ResidueEntry {
            delta,
            relative_error: err,
        });
    }
    let decreasing = entries
        .windows(2)
        .all(|w| w[1].relative_error <= w[0].relative_error);
    Ok(ResidueReport {
        entries,
        refused,
        decreasing,
    })
}
