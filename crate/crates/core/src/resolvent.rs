//! Resolvent `(λ + 𝔸)^{-1}` of the population generator in closed form,
//!
//! ```text
//! ψ(a) = ∫_0^a Π_λ(a, σ) φ(σ) dσ + Π_λ(a, 0) (1 − Q_λ)^{-1} ∫ b(s) ∫_0^s Π_λ(s, σ) φ(σ) dσ ds,
//! ```
//!
//! split as `ψ = v + w`, and an independent Laplace-transform route
//! `ψ = ∫_0^∞ e^{-λt} S(t)φ dt`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::evolution::Propagator;
use crate::linalg::{norm1, DenseSolve, Mat, Vector};
use crate::model::{trapezoid_weights, ModelSpec};
use crate::semigroup::{time_index, PopulationDensity, SemigroupMarch};
use crate::spectral::{backward_residual, RenewalKernel};

/// `(1 − Q_λ)` is refused when `(1 + ‖Q_λ‖₁)‖(1 − Q_λ)^{-1}‖₁` exceeds this.
pub const CONDITION_LIMIT: f64 = 1e12;

#[derive(Debug, Clone)]
pub struct Resolvent {
    pub psi: PopulationDensity,
    /// `v_λ φ(a) = ∫_0^a Π_λ(a, σ) φ(σ) dσ`.
    pub v: PopulationDensity,
    /// `w_λ φ(a) = Π_λ(a, 0) (1 − Q_λ)^{-1} H_λ φ`.
    pub w: PopulationDensity,
    pub condition: f64,
}

/// Trapezoid quadrature of `∫_0^{a_k} Π_λ(a_k, σ) φ(σ) dσ` at every node,
/// accumulated along the grid: with `z_k = Σ_{j<k} ω_j Π_λ(a_k, a_j) φ_j`,
/// `z_{k+1} = e^{-λΔa} S_k (z_k + ω_k φ_k)` and `v_k = z_k + (Δa/2) φ_k`.
pub fn v_part(
    m: &ModelSpec,
    p: &Propagator,
    lambda: f64,
    phi: &PopulationDensity,
) -> PopulationDensity {
    let da = m.grid.da();
    let twist = (-lambda * da).exp();
    let mut values = Vec::with_capacity(m.grid.len());
    values.push(Vector::zeros(m.dim()));
    let mut z = Vector::zeros(m.dim());
    for k in 0..m.grid.intervals() {
        let omega = if k == 0 { 0.5 * da } else { da };
        z = p.step(k) * (z + phi.at(k) * omega) * twist;
        values.push(&z + phi.at(k + 1) * (0.5 * da));
    }
    PopulationDensity::from_parts(&m.grid, values)
}

/// `Σ_k w_k b_k f(a_k)`.
pub(crate) fn birth_quadrature(m: &ModelSpec, f: &PopulationDensity) -> Vector {
    let w = m.grid.trapezoid_weights();
    let mut out = Vector::zeros(m.dim());
    for (k, wk) in w.iter().enumerate() {
        out += m.birth.at(k) * f.at(k) * *wk;
    }
    out
}

/// `(1 − Q_λ)` factorized, refusing near-singular systems.
pub(crate) fn renewal_solver(kernel: &RenewalKernel, lambda: f64) -> Result<DenseSolve> {
    let q = kernel.q(lambda)?;
    let n = q.nrows();
    // Conditioning relative to the data: (1 + ‖Q‖)‖(I − Q)^{-1}‖, which stays
    // meaningful for n = 1 where the plain condition number is always 1.
    let scale = 1.0 + norm1(&q);
    let lhs = Mat::identity(n, n) - q;
    match DenseSolve::new(&lhs) {
        Some(s) if scale * norm1(s.inverse()) <= CONDITION_LIMIT => Ok(s),
        Some(s) => Err(Error::NearEigenvalue {
            lambda,
            condition: scale * norm1(s.inverse()),
        }),
        None => Err(Error::NearEigenvalue {
            lambda,
            condition: f64::INFINITY,
        }),
    }
}

/// `Π_λ(a_k, 0) x` at every node.
pub(crate) fn twisted_profile(
    m: &ModelSpec,
    p: &Propagator,
    lambda: f64,
    x: &Vector,
) -> PopulationDensity {
    let values = (0..m.grid.len())
        .map(|k| p.prefix(k) * x * (-lambda * m.grid.node(k)).exp())
        .collect();
    PopulationDensity::from_parts(&m.grid, values)
}

pub fn resolvent_apply(
    m: &ModelSpec,
    p: &Propagator,
    lambda: f64,
    phi: &PopulationDensity,
) -> Result<Resolvent> {
    let kernel = RenewalKernel::new(m, p);
    resolvent_apply_with(m, p, &kernel, lambda, phi)
}

pub fn resolvent_apply_with(
    m: &ModelSpec,
    p: &Propagator,
    kernel: &RenewalKernel,
    lambda: f64,
    phi: &PopulationDensity,
) -> Result<Resolvent> {
    m.check_lambda(lambda)?;
    if !phi.grid().compatible(&m.grid) || phi.dim() != m.dim() {
        return Err(Error::GridMismatch("density does not match model".into()));
    }
    let solver = renewal_solver(kernel, lambda)?;
    let v = v_part(m, p, lambda, phi);
    let h = birth_quadrature(m, &v);
    let w = twisted_profile(m, p, lambda, &solver.solve(&h));
    let psi = v.axpy(1.0, &w);
    Ok(Resolvent {
        psi,
        v,
        w,
        condition: (1.0 + norm1(&kernel.q(lambda)?)) * norm1(solver.inverse()),
    })
}

/// Residuals of the generator characterization for `ψ = (λ + 𝔸)^{-1} φ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DomainResiduals {
    /// `max_k ‖(ψ_k − ψ_{k−1})/Δa + (λ + A_k) ψ_k − φ_k‖`.
    pub pde_residual: f64,
    /// `‖ψ(0) − Σ w_k b_k ψ(a_k)‖`.
    pub bc_residual: f64,
}

pub fn domain_check(
    m: &ModelSpec,
    lambda: f64,
    phi: &PopulationDensity,
    psi: &PopulationDensity,
) -> DomainResiduals {
    let pde_residual = backward_residual(m, lambda, psi, Some(phi));
    let bc_residual = (psi.at(0) - birth_quadrature(m, psi)).norm();
    DomainResiduals {
        pde_residual,
        bc_residual,
    }
}

/// `ψ̂ = ∫_0^T e^{-λt} S(t)φ dt` by the trapezoid rule on `t_m = m·Δa`.
///
/// At `t = a_k` the integrand jumps from `Π(a_k, 0) φ(0)` to
/// `Π(a_k, 0) B_φ(0)`; the quadrature is split there and uses the one-sided
/// value on each side.
pub fn laplace_oracle(
    m: &ModelSpec,
    p: &Propagator,
    lambda: f64,
    phi: &PopulationDensity,
    horizon: f64,
    quad_tol: f64,
) -> Result<PopulationDensity> {
    let da = m.grid.da();
    let steps = time_index(horizon, da)?;
    let k_int = m.grid.intervals();
    if steps <= k_int {
        return Err(Error::Precondition(format!(
            "Laplace horizon {horizon} must exceed the maximal age {}",
            m.grid.a_max()
        )));
    }
    let weights = trapezoid_weights(steps, da);
    let mut march = SemigroupMarch::new(m, p, phi)?;
    let mut acc: Vec<Vector> = vec![Vector::zeros(m.dim()); m.grid.len()];
    let mut integrand = Vec::with_capacity(steps + 1);
    let b0 = march.births()[0].clone();

    for mt in 0..=steps {
        if mt > 0 {
            march.advance();
        }
        let decay = (-lambda * mt as f64 * da).exp();
        let state = march.state();
        let mut norm_sq = 0.0;
        for (k, a) in acc.iter_mut().enumerate() {
            let u = &state[k];
            norm_sq += u.norm_squared();
            if k == mt {
                // Kink of the characteristics at t = a_k.
                let right = if mt == 0 {
                    b0.clone()
                } else {
                    march.front().clone()
                };
                if mt > 0 {
                    *a += u * (0.5 * da * decay);
                }
                *a += right * (0.5 * da * decay);
            } else {
                *a += u * (weights[mt] * decay);
            }
        }
        integrand.push(decay * norm_sq.sqrt());
    }

    let half = integrand[steps / 2];
    let end = integrand[steps];
    let peak = integrand.iter().copied().fold(0.0, f64::max);
    if end > 0.0 && half > 0.0 {
        let growth = (end / half).ln() / (horizon - (steps / 2) as f64 * da) + lambda;
        if end >= (-0.5f64).exp() * half {
            return Err(Error::DivergentIntegrand {
                lambda,
                growth_rate: growth,
            });
        }
    }
    if peak > 0.0 && end > quad_tol * peak {
        return Err(Error::Precondition(format!(
            "Laplace integrand tail {end:e} exceeds quad_tol · peak = {:e}; increase the horizon",
            quad_tol * peak
        )));
    }
    Ok(PopulationDensity::from_parts(&m.grid, acc))
}
