//! The renewal operator `Q_λ = ∫ b(a) e^{-λa} Π(a, 0) da`, its Perron data,
//! the Malthusian parameter `λ₀` with `r(Q_{λ₀}) = 1`, and the stability
//! classification built on them.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::evolution::Propagator;
use crate::linalg::{Mat, Vector};
use crate::model::ModelSpec;
use crate::par;
use crate::semigroup::PopulationDensity;

/// Default ε band around `r(Q_0) = 1` for [`classify_stability`].
pub const DEFAULT_EPS_BAND: f64 = 1e-6;
/// The Perron root counts as simple when the gap exceeds this times `r`.
pub const SIMPLICITY_THRESHOLD: f64 = 1e-8;
const POWER_MAX_ITER: usize = 100_000;
const BRACKET_EXPANSIONS: usize = 64;
/// `e^{-λ a}` must stay finite over the grid.
const MAX_EXPONENT: f64 = 700.0;

/// Quadrature kernel `C_k = w_k b_k Π(a_k, 0)` cached for repeated `Q_λ`.
#[derive(Debug, Clone)]
pub struct RenewalKernel {
    weighted: Vec<Mat>,
    nodes: Vec<f64>,
    lower_bound: Option<f64>,
}

impl RenewalKernel {
    pub fn new(m: &ModelSpec, p: &Propagator) -> Self {
        let w = m.grid.trapezoid_weights();
        let weighted = par::map_range(m.grid.len(), |k| m.birth.at(k) * p.prefix(k) * w[k]);
        Self {
            weighted,
            nodes: m.grid.nodes().to_vec(),
            lower_bound: m.lambda_lower_bound(),
        }
    }

    pub fn dim(&self) -> usize {
        self.weighted[0].nrows()
    }

    fn check(&self, lambda: f64) -> Result<()> {
        match self.lower_bound {
            Some(bound) if lambda <= bound => Err(Error::InadmissibleLambda { lambda, bound }),
            _ if !lambda.is_finite() => Err(Error::InadmissibleLambda {
                lambda,
                bound: f64::NEG_INFINITY,
            }),
            _ => Ok(()),
        }
    }

    fn moment(&self, lambda: f64, power: i32) -> Mat {
        let n = self.dim();
        let mut q = Mat::zeros(n, n);
        for (c, &a) in self.weighted.iter().zip(&self.nodes) {
            let f = (-lambda * a).exp() * a.powi(power);
            if f != 0.0 {
                q += c * f;
            }
        }
        q
    }

    /// `Q_λ`.
    pub fn q(&self, lambda: f64) -> Result<Mat> {
        self.check(lambda)?;
        Ok(self.moment(lambda, 0))
    }

    /// `∫ a b(a) Π_λ(a, 0) da`.
    pub fn first_moment(&self, lambda: f64) -> Result<Mat> {
        self.check(lambda)?;
        Ok(self.moment(lambda, 1))
    }

    /// Largest λ magnitude for which the weights stay finite.
    fn lambda_floor(&self) -> f64 {
        let a_max = *self.nodes.last().unwrap();
        -MAX_EXPONENT / a_max
    }

    pub fn spectral_radius(&self, lambda: f64, tol: f64) -> Result<f64> {
        Ok(perron_root(&self.q(lambda)?, tol)?.r)
    }
}

pub fn renewal_operator(m: &ModelSpec, p: &Propagator, lambda: f64) -> Result<Mat> {
    m.check_lambda(lambda)?;
    RenewalKernel::new(m, p).q(lambda)
}

/// Perron data of a nonnegative matrix.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectralReport {
    pub lambda: f64,
    #[serde(skip)]
    pub q: Mat,
    /// Spectral radius.
    pub r: f64,
    /// Primal Perron vector, entries summing to one.
    pub phi0: Vec<f64>,
    /// Dual Perron vector scaled so that `⟨wstar, phi0⟩ = 1`.
    pub wstar: Vec<f64>,
    /// `r` minus the second largest eigenvalue modulus.
    pub gap: f64,
    pub simple: bool,
    pub iterations: usize,
    pub residual: f64,
    pub dual_residual: f64,
}

impl SpectralReport {
    pub fn phi0_vec(&self) -> Vector {
        Vector::from_vec(self.phi0.clone())
    }

    pub fn wstar_vec(&self) -> Vector {
        Vector::from_vec(self.wstar.clone())
    }
}

struct PowerResult {
    vector: Vector,
    iterations: usize,
}

/// Power iteration from a strictly positive, non-uniform start; iterates are
/// kept at unit sum.
fn power_iterate(q: &Mat, tol: f64) -> Result<PowerResult> {
    let n = q.nrows();
    let floor = 8.0 * n as f64 * f64::EPSILON;
    let tol = tol.max(floor);
    let mut x = Vector::from_fn(n, |i, _| 1.0 + i as f64 / n as f64);
    x /= x.sum();
    let mut prev = x.clone();
    let (mut step_change, mut two_step_change) = (f64::INFINITY, f64::INFINITY);
    for it in 1..=POWER_MAX_ITER {
        let y = q * &x;
        let s = y.sum();
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::Degenerate(format!(
                "iterate collapsed after {it} power steps (Q is nilpotent on the start vector)"
            )));
        }
        let y = y / s;
        step_change = (&y - &x).lp_norm(1);
        two_step_change = (&y - &prev).lp_norm(1);
        prev = x;
        x = y;
        if step_change <= tol {
            return Ok(PowerResult {
                vector: x,
                iterations: it,
            });
        }
    }
    Err(Error::NotConverged {
        iterations: POWER_MAX_ITER,
        step_change,
        two_step_change,
        oscillating: two_step_change < 1e-3 * step_change,
    })
}

/// Modulus of the dominant eigenvalue of `q` restricted to the complement of
/// the Perron pair: subspace iteration on the spectrally deflated matrix
/// `Q − r φ₀ w*ᵀ`, with the modulus read off as a geometric-mean growth rate.
fn subdominant_modulus(q: &Mat, r: f64, phi0: &Vector, wstar: &Vector) -> f64 {
    let n = q.nrows();
    if n == 1 {
        return 0.0;
    }
    let deflated = q - phi0 * wstar.transpose() * r;
    let mut y = Vector::from_fn(
        n,
        |i, _| if i % 2 == 0 { 1.0 } else { -0.75 } + 0.01 * i as f64,
    );
    y /= y.norm();
    const WARMUP: usize = 64;
    const MEASURE: usize = 256;
    let mut log_growth = 0.0;
    for it in 0..WARMUP + MEASURE {
        let z = &deflated * &y;
        let g = z.norm();
        if !(g > 1e-300) || !g.is_finite() {
            return 0.0;
        }
        if it >= WARMUP {
            log_growth += g.ln();
        }
        y = z / g;
    }
    (log_growth / MEASURE as f64).exp()
}

pub fn perron_root(q: &Mat, tol: f64) -> Result<SpectralReport> {
    perron_root_at(q, tol, f64::NAN)
}

fn perron_root_at(q: &Mat, tol: f64, lambda: f64) -> Result<SpectralReport> {
    if !q.is_square() || q.nrows() == 0 {
        return Err(Error::Degenerate(
            "Perron root needs a nonempty square matrix".into(),
        ));
    }
    for j in 0..q.ncols() {
        for i in 0..q.nrows() {
            let x = q[(i, j)];
            if x < 0.0 || !x.is_finite() {
                return Err(Error::NegativeEntry {
                    row: i,
                    col: j,
                    value: x,
                });
            }
        }
    }
    if q.iter().all(|&x| x == 0.0) {
        return Err(Error::Degenerate("Perron root of the zero matrix".into()));
    }
    let primal = power_iterate(q, tol)?;
    let qt = q.transpose();
    let dual = power_iterate(&qt, tol)?;
    let phi0 = primal.vector;
    let pairing = dual.vector.dot(&phi0);
    if !(pairing > 0.0) {
        return Err(Error::Degenerate(
            "primal and dual Perron vectors are orthogonal".into(),
        ));
    }
    let wstar = dual.vector / pairing;
    // Two-sided Rayleigh quotient; ⟨w*, φ₀⟩ = 1.
    let r = wstar.dot(&(q * &phi0));
    let residual = (q * &phi0 - &phi0 * r).norm();
    let dual_residual = (&qt * &wstar - &wstar * r).norm();
    let second = subdominant_modulus(q, r, &phi0, &wstar);
    let gap = r - second;
    Ok(SpectralReport {
        lambda,
        q: q.clone(),
        r,
        phi0: phi0.iter().copied().collect(),
        wstar: wstar.iter().copied().collect(),
        gap,
        simple: gap > SIMPLICITY_THRESHOLD * r,
        iterations: primal.iterations + dual.iterations,
        residual,
        dual_residual,
    })
}

/// `Q_λ` and its Perron data.
pub fn spectral_report(kernel: &RenewalKernel, lambda: f64, tol: f64) -> Result<SpectralReport> {
    perron_root_at(&kernel.q(lambda)?, tol, lambda)
}

/// `(λ, r(Q_λ))` along a sorted λ list; fails if `r` is not strictly
/// decreasing.
pub fn spectral_radius_curve(
    m: &ModelSpec,
    p: &Propagator,
    lambdas: &[f64],
    tol: f64,
) -> Result<Vec<(f64, f64)>> {
    if lambdas.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Precondition("λ list must be sorted".into()));
    }
    let kernel = RenewalKernel::new(m, p);
    let radii = par::map_slice(lambdas, |&l| kernel.spectral_radius(l, tol));
    let mut curve = Vec::with_capacity(lambdas.len());
    for (&l, r) in lambdas.iter().zip(radii) {
        curve.push((l, r?));
    }
    for w in curve.windows(2) {
        let ((l0, r0), (l1, r1)) = (w[0], w[1]);
        if l1 > l0 && r1 >= r0 {
            return Err(Error::Precondition(format!(
                "r(Q_λ) not strictly decreasing: r({l0}) = {r0}, r({l1}) = {r1}"
            )));
        }
    }
    Ok(curve)
}

/// Root `λ₀` of `r(Q_λ) = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MalthusianResult {
    pub lambda0: f64,
    /// `|r(Q_{λ₀}) − 1|`.
    pub residual: f64,
    pub bracket: (f64, f64),
    pub evaluations: usize,
}

/// Geometric bracket expansion from `λ = 0`, then bisection on
/// `g(λ) = r(Q_λ) − 1` down to floating-point resolution.
pub fn find_lambda0(m: &ModelSpec, p: &Propagator, tol: f64) -> Result<MalthusianResult> {
    let kernel = RenewalKernel::new(m, p);
    find_lambda0_with(&kernel, tol)
}

pub fn find_lambda0_with(kernel: &RenewalKernel, tol: f64) -> Result<MalthusianResult> {
    let power_tol = (tol * 1e-3).max(1e-15);
    let mut evaluations = 0usize;
    let mut g = |lambda: f64| -> Result<f64> {
        evaluations += 1;
        Ok(kernel.spectral_radius(lambda, power_tol)? - 1.0)
    };

    let g0 = g(0.0)?;
    let (mut lo, mut hi);
    if g0 == 0.0 {
        lo = 0.0;
        hi = 0.0;
    } else if g0 > 0.0 {
        // λ₀ > 0: grow upward until r(Q_λ) < 1.
        lo = 0.0;
        let mut found = None;
        for j in 0..BRACKET_EXPANSIONS {
            let cand = 2f64.powi(j as i32);
            let gc = g(cand)?;
            if gc <= 0.0 {
                found = Some(cand);
                break;
            }
            lo = cand;
        }
        hi = found.ok_or(Error::NoMalthusianParameter {
            bound: f64::INFINITY,
            r_at_bound: g(lo)? + 1.0,
        })?;
    } else {
        // λ₀ < 0: grow downward, clipped to the admissible interval.
        hi = 0.0;
        let floor = match kernel.lower_bound {
            Some(b) => b.max(kernel.lambda_floor()),
            None => kernel.lambda_floor(),
        };
        let open_floor = kernel.lower_bound.is_some() && floor == kernel.lower_bound.unwrap();
        let mut found = None;
        let mut last = 0.0;
        for j in 0..BRACKET_EXPANSIONS {
            let mut cand = -(2f64.powi(j as i32));
            if cand <= floor {
                cand = if open_floor {
                    // Approach the open end -ϖ̂ geometrically.
                    floor + (hi.min(0.0) - floor) * 0.5f64.powi(j as i32 + 1)
                } else {
                    floor
                };
                if open_floor && cand <= floor {
                    break;
                }
            }
            last = cand;
            let gc = g(cand)?;
            if gc >= 0.0 {
                found = Some(cand);
                break;
            }
            hi = cand;
            if !open_floor && cand == floor {
                break;
            }
        }
        lo = match found {
            Some(l) => l,
            None => {
                return Err(Error::NoMalthusianParameter {
                    bound: last,
                    r_at_bound: g(last)? + 1.0,
                })
            }
        };
    }

    let mut lambda0 = 0.5 * (lo + hi);
    if lo != hi {
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            let gm = g(mid)?;
            if gm == 0.0 {
                lo = mid;
                hi = mid;
                break;
            }
            if gm > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lambda0 = 0.5 * (lo + hi);
        if lambda0 <= lo || lambda0 >= hi {
            // Adjacent floats: keep the endpoint with the smaller residual.
            lambda0 = if g(lo)?.abs() <= g(hi)?.abs() { lo } else { hi };
        }
    }
    let residual = g(lambda0)?.abs();
    if residual > tol {
        return Err(Error::Precondition(format!(
            "bisection stalled with |r(Q_λ₀) − 1| = {residual:e} > tol = {tol:e}"
        )));
    }
    let bracket = (
        if lambda0 <= lo {
            lambda0.next_down()
        } else {
            lo
        },
        if lambda0 >= hi { lambda0.next_up() } else { hi },
    );
    Ok(MalthusianResult {
        lambda0,
        residual,
        bracket,
        evaluations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Stability {
    Stable,
    Critical,
    AsynchronousGrowth,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StabilityVerdict {
    pub verdict: Stability,
    pub r_q0: f64,
}

/// Stable iff `r(Q_0) < 1 − ε`, asynchronous growth iff `r(Q_0) > 1 + ε`.
pub fn classify_stability(
    m: &ModelSpec,
    p: &Propagator,
    eps_band: f64,
) -> Result<StabilityVerdict> {
    let r_q0 = perron_root(&renewal_operator(m, p, 0.0)?, 1e-14)?.r;
    let verdict = if r_q0 < 1.0 - eps_band {
        Stability::Stable
    } else if r_q0 > 1.0 + eps_band {
        Stability::AsynchronousGrowth
    } else {
        Stability::Critical
    };
    Ok(StabilityVerdict { verdict, r_q0 })
}

/// Eigenfunction `φ(a) = Π_λ(a, 0) Φ₀` of the generator for `λ` with
/// `r(Q_λ) = 1`.
#[derive(Debug, Clone)]
pub struct Eigenfunction {
    pub phi: PopulationDensity,
    pub report: SpectralReport,
    /// `‖φ(0) − Σ w_k b_k φ(a_k)‖`.
    pub bc_residual: f64,
    /// Backward-difference residual of `∂_a φ + (λ + A) φ = 0`.
    pub pde_residual: f64,
}

pub fn generator_eigenfunction(
    m: &ModelSpec,
    p: &Propagator,
    lambda: f64,
    tol: f64,
) -> Result<Eigenfunction> {
    let kernel = RenewalKernel::new(m, p);
    let report = spectral_report(&kernel, lambda, 1e-15)?;
    if (report.r - 1.0).abs() > tol {
        return Err(Error::Precondition(format!(
            "r(Q_λ) = {} is not 1 within {tol:e} at λ = {lambda}",
            report.r
        )));
    }
    let phi0 = report.phi0_vec();
    let values: Vec<Vector> = (0..m.grid.len())
        .map(|k| p.prefix(k) * &phi0 * (-lambda * m.grid.node(k)).exp())
        .collect();
    let phi = PopulationDensity::from_parts(&m.grid, values);

    let w = m.grid.trapezoid_weights();
    let mut births = Vector::zeros(m.dim());
    for (k, wk) in w.iter().enumerate() {
        births += m.birth.at(k) * phi.at(k) * *wk;
    }
    let bc_residual = (phi.at(0) - births).norm();
    let pde_residual = backward_residual(m, lambda, &phi, None);
    Ok(Eigenfunction {
        phi,
        report,
        bc_residual,
        pde_residual,
    })
}

/// `max_k ‖(ψ_k − ψ_{k−1})/Δa + (λ + A_k) ψ_k − f_k‖` (with `f = 0` if absent).
pub(crate) fn backward_residual(
    m: &ModelSpec,
    lambda: f64,
    psi: &PopulationDensity,
    forcing: Option<&PopulationDensity>,
) -> f64 {
    let da = m.grid.da();
    (1..m.grid.len())
        .map(|k| {
            let mut r =
                (psi.at(k) - psi.at(k - 1)) / da + m.gen.at(k) * psi.at(k) + psi.at(k) * lambda;
            if let Some(f) = forcing {
                r -= f.at(k);
            }
            r.norm()
        })
        .fold(0.0, f64::max)
}
