//! Births `B_φ` from the renewal (Volterra) equation and the population
//! semigroup `S(t)` along characteristics.
//!
//! The time step equals the age step, so characteristics run through grid
//! nodes and `S(t_m)φ` needs no interpolation:
//!
//! ```text
//! [S(t)φ](a) = Π(a, a - t) φ(a - t)   for t <= a,
//!              Π(a, 0) B_φ(t - a)     for t > a.
//! ```

use serde::Serialize;

use crate::error::{Error, Result};
use crate::evolution::Propagator;
use crate::linalg::{DenseSolve, Mat, Vector};
use crate::model::{trapezoid_weights, AgeGrid, ModelSpec};
use crate::par;

/// Age-indexed family of state vectors `φ(a_k) ∈ R^n`.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationDensity {
    values: Vec<Vector>,
    grid: AgeGrid,
}

impl PopulationDensity {
    pub fn new(grid: &AgeGrid, values: Vec<Vector>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "density has {} nodes, grid has {}",
                values.len(),
                grid.len()
            )));
        }
        let n = values[0].len();
        if values.iter().any(|v| v.len() != n) {
            return Err(Error::GridMismatch(
                "density vectors differ in length".into(),
            ));
        }
        if values.iter().any(|v| v.iter().any(|x| !x.is_finite())) {
            return Err(Error::InvalidModel("density has non-finite entries".into()));
        }
        Ok(Self {
            values,
            grid: grid.clone(),
        })
    }

    pub fn from_fn(grid: &AgeGrid, f: impl Fn(f64) -> Vector) -> Result<Self> {
        Self::new(grid, grid.nodes().iter().map(|&a| f(a)).collect())
    }

    pub fn constant(grid: &AgeGrid, v: &Vector) -> Self {
        Self {
            values: vec![v.clone(); grid.len()],
            grid: grid.clone(),
        }
    }

    pub fn zeros(grid: &AgeGrid, n: usize) -> Self {
        Self::constant(grid, &Vector::zeros(n))
    }

    /// Internal constructor for values known to match the grid.
    pub(crate) fn from_parts(grid: &AgeGrid, values: Vec<Vector>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self {
            values,
            grid: grid.clone(),
        }
    }

    pub fn grid(&self) -> &AgeGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.values[0].len()
    }

    pub fn values(&self) -> &[Vector] {
        &self.values
    }

    pub fn at(&self, k: usize) -> &Vector {
        &self.values[k]
    }

    pub fn into_values(self) -> Vec<Vector> {
        self.values
    }

    /// Discrete `L_p(J, R^n)` norm with trapezoid weights and Euclidean
    /// pointwise norm.
    pub fn norm_p(&self, p: f64) -> f64 {
        let w = self.grid.trapezoid_weights();
        if p.is_infinite() {
            return self.values.iter().map(|v| v.norm()).fold(0.0, f64::max);
        }
        w.iter()
            .zip(&self.values)
            .map(|(wk, v)| wk * v.norm().powf(p))
            .sum::<f64>()
            .powf(1.0 / p)
    }

    pub fn norm(&self) -> f64 {
        let w = self.grid.trapezoid_weights();
        w.iter()
            .zip(&self.values)
            .map(|(wk, v)| wk * v.norm_squared())
            .sum::<f64>()
            .sqrt()
    }

    /// Weighted inner product matching [`Self::norm`].
    pub fn dot(&self, other: &Self) -> f64 {
        let w = self.grid.trapezoid_weights();
        w.iter()
            .zip(self.values.iter().zip(&other.values))
            .map(|(wk, (u, v))| wk * u.dot(v))
            .sum()
    }

    /// `Σ_k w_k 1ᵀ φ(a_k)`.
    pub fn total_population(&self) -> f64 {
        let w = self.grid.trapezoid_weights();
        w.iter().zip(&self.values).map(|(wk, v)| wk * v.sum()).sum()
    }

    pub fn min_entry(&self) -> f64 {
        self.values
            .iter()
            .flat_map(|v| v.iter().copied())
            .fold(f64::INFINITY, f64::min)
    }

    pub fn scale(&self, alpha: f64) -> Self {
        Self::from_parts(&self.grid, self.values.iter().map(|v| v * alpha).collect())
    }

    /// `alpha·self + other`.
    pub fn axpy(&self, alpha: f64, other: &Self) -> Self {
        Self::from_parts(
            &self.grid,
            self.values
                .iter()
                .zip(&other.values)
                .map(|(u, v)| u * alpha + v)
                .collect(),
        )
    }

    pub fn sub(&self, other: &Self) -> Self {
        other.axpy(-1.0, self).scale(-1.0)
    }

    fn check_against(&self, m: &ModelSpec) -> Result<()> {
        if !self.grid.compatible(&m.grid) {
            return Err(Error::GridMismatch(format!(
                "density grid (K = {}, a_max = {}) differs from model grid (K = {}, a_max = {})",
                self.grid.intervals(),
                self.grid.a_max(),
                m.grid.intervals(),
                m.grid.a_max()
            )));
        }
        if self.dim() != m.dim() {
            return Err(Error::GridMismatch(format!(
                "density dimension {} differs from model dimension {}",
                self.dim(),
                m.dim()
            )));
        }
        Ok(())
    }
}

/// `B_m ≈ B_φ(t_m)` on `t_m = m·Δa`.
#[derive(Debug, Clone, PartialEq)]
pub struct BirthTrajectory {
    da: f64,
    values: Vec<Vector>,
}

impl BirthTrajectory {
    pub fn da(&self) -> f64 {
        self.da
    }

    pub fn values(&self) -> &[Vector] {
        &self.values
    }

    pub fn at(&self, m: usize) -> &Vector {
        &self.values[m]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.values.len()).map(|m| m as f64 * self.da).collect()
    }
}

/// Grid time index of `t`, rejecting times off the `Δa` lattice.
pub fn time_index(t: f64, da: f64) -> Result<usize> {
    if !(t.is_finite() && t >= 0.0) {
        return Err(Error::Misaligned { t, da });
    }
    let m = (t / da).round();
    if (m * da - t).abs() > 1e-9 * t.max(1.0) {
        return Err(Error::Misaligned { t, da });
    }
    Ok(m as usize)
}

/// Time marching of `S(t_m)φ` together with the births.
///
/// Step `m → m+1` shifts the density one node along the characteristics,
/// `u(a_{k+1}) ← Π(a_{k+1}, a_k) u(a_k)`, and solves the trapezoid-discretized
/// renewal equation for the new boundary value `B_{m+1}`. The two integrals of
/// the renewal equation are discretized separately: `∫_0^{min(t, a_max)}`
/// uses the earlier births and `∫_0^{a_max - t}` the transported initial data,
/// each with its own trapezoid rule. The implicit `j = 0` term
/// `(Δa/2) b_0 B_{m+1}` is inverted exactly.
pub struct SemigroupMarch<'a> {
    model: &'a ModelSpec,
    prop: &'a Propagator,
    implicit: DenseSolve,
    state: Vec<Vector>,
    births: Vec<Vector>,
    /// `Π(a_m, 0) B_0`, the newborns of time 0 at age `t_m` (for `m <= K`).
    front: Vector,
    step: usize,
}

impl<'a> SemigroupMarch<'a> {
    pub fn new(
        model: &'a ModelSpec,
        prop: &'a Propagator,
        phi: &PopulationDensity,
    ) -> Result<Self> {
        phi.check_against(model)?;
        if prop.len() != model.grid.len() || prop.dim() != model.dim() {
            return Err(Error::GridMismatch(
                "propagator does not match model".into(),
            ));
        }
        let n = model.dim();
        let da = model.grid.da();
        let lhs = Mat::identity(n, n) - model.birth.at(0) * (0.5 * da);
        let implicit = DenseSolve::new(&lhs).ok_or(Error::SingularDiagonal { step: 1 })?;

        let w = model.grid.trapezoid_weights();
        let mut b0 = Vector::zeros(n);
        for (k, wk) in w.iter().enumerate() {
            b0 += model.birth.at(k) * phi.at(k) * *wk;
        }
        Ok(Self {
            model,
            prop,
            implicit,
            state: phi.values().to_vec(),
            front: b0.clone(),
            births: vec![b0],
            step: 0,
        })
    }

    pub fn time_index(&self) -> usize {
        self.step
    }

    pub fn time(&self) -> f64 {
        self.step as f64 * self.model.grid.da()
    }

    /// `S(t_m)φ` at the current step.
    pub fn state(&self) -> &[Vector] {
        &self.state
    }

    pub fn density(&self) -> PopulationDensity {
        PopulationDensity::from_parts(&self.model.grid, self.state.clone())
    }

    pub fn births(&self) -> &[Vector] {
        &self.births
    }

    /// `Π(a_m, 0) B_0`; meaningful while `t_m <= a_max`.
    pub fn front(&self) -> &Vector {
        &self.front
    }

    pub fn advance(&mut self) {
        let grid = &self.model.grid;
        let k_int = grid.intervals();
        let da = grid.da();
        let next_step = self.step + 1;

        let prev = &self.state;
        let prop = self.prop;
        let shifted = par::map_range(k_int, |k| prop.step(k) * &prev[k]);
        let mut state = Vec::with_capacity(k_int + 1);
        state.push(Vector::zeros(self.model.dim()));
        state.extend(shifted);
        if next_step <= k_int {
            self.front = prop.step(next_step - 1) * &self.front;
        }

        let birth = &self.model.birth;
        let mut rhs = Vector::zeros(self.model.dim());
        // ∫_0^{min(t, a_max)} b(a) Π(a, 0) B(t - a) da; node j = 0 is implicit.
        let upper = next_step.min(k_int);
        for (j, state_j) in state.iter().enumerate().take(upper).skip(1) {
            rhs += birth.at(j) * state_j * da;
        }
        let last = if next_step <= k_int {
            &self.front
        } else {
            &state[k_int]
        };
        rhs += birth.at(upper) * last * (0.5 * da);

        // ∫_0^{a_max - t} b(σ + t) Π(σ + t, σ) φ(σ) dσ from the transported data.
        if next_step < k_int {
            let w = trapezoid_weights(k_int - next_step, da);
            for (offset, wk) in w.iter().enumerate() {
                let k = next_step + offset;
                rhs += birth.at(k) * &state[k] * *wk;
            }
        }
        let b_new = self.implicit.solve(&rhs);
        state[0] = b_new.clone();
        self.births.push(b_new);
        self.state = state;
        self.step = next_step;
    }

    pub fn into_births(self) -> BirthTrajectory {
        BirthTrajectory {
            da: self.model.grid.da(),
            values: self.births,
        }
    }
}

/// Births on `t_m = m·Δa`, `m = 0..=T/Δa`.
pub fn solve_birth(
    m: &ModelSpec,
    p: &Propagator,
    phi: &PopulationDensity,
    horizon: f64,
) -> Result<BirthTrajectory> {
    let steps = time_index(horizon, m.grid.da())?;
    let mut march = SemigroupMarch::new(m, p, phi)?;
    for _ in 0..steps {
        march.advance();
    }
    Ok(march.into_births())
}

/// `S(t)φ` from the characteristics formula and a precomputed birth trajectory.
pub fn apply_semigroup(
    m: &ModelSpec,
    p: &Propagator,
    births: &BirthTrajectory,
    phi: &PopulationDensity,
    t: f64,
) -> Result<PopulationDensity> {
    phi.check_against(m)?;
    if (births.da() - m.grid.da()).abs() > 1e-12 * m.grid.da() {
        return Err(Error::GridMismatch(
            "birth trajectory step differs from age step".into(),
        ));
    }
    let mt = time_index(t, m.grid.da())?;
    if mt >= births.len() {
        return Err(Error::GridMismatch(format!(
            "time index {mt} beyond birth trajectory of length {}",
            births.len()
        )));
    }
    let values = par::map_range(m.grid.len(), |k| {
        if mt <= k {
            p.propagate_vec(k, k - mt, phi.at(k - mt))
                .expect("indices ordered by construction")
        } else {
            p.prefix(k) * births.at(mt - k)
        }
    });
    Ok(PopulationDensity::from_parts(&m.grid, values))
}

/// Densities `S(t_m)φ` for `m = 0..=T/Δa` and the births.
pub struct Trajectory {
    pub births: BirthTrajectory,
    pub states: Vec<PopulationDensity>,
}

impl Trajectory {
    pub fn times(&self) -> Vec<f64> {
        self.births.times()
    }
}

pub fn simulate(
    m: &ModelSpec,
    p: &Propagator,
    phi: &PopulationDensity,
    horizon: f64,
) -> Result<Trajectory> {
    let steps = time_index(horizon, m.grid.da())?;
    let mut march = SemigroupMarch::new(m, p, phi)?;
    let mut states = vec![march.density()];
    for _ in 0..steps {
        march.advance();
        states.push(march.density());
    }
    Ok(Trajectory {
        births: march.into_births(),
        states,
    })
}

/// `‖B_m − Σ_k w_k b_k [S(t_m)φ](a_k)‖`.
pub fn birth_consistency(
    m: &ModelSpec,
    p: &Propagator,
    births: &BirthTrajectory,
    phi: &PopulationDensity,
    t: f64,
) -> Result<f64> {
    let state = apply_semigroup(m, p, births, phi, t)?;
    let mt = time_index(t, m.grid.da())?;
    let w = m.grid.trapezoid_weights();
    let mut total = Vector::zeros(m.dim());
    for (k, wk) in w.iter().enumerate() {
        total += m.birth.at(k) * state.at(k) * *wk;
    }
    Ok((births.at(mt) - total).norm())
}

/// Exponential envelope of the births, `sup_m ‖B_m‖ e^{(ϖ̂ - ζ̂) t_m}` with
/// `ζ̂ = M̂ max_k ‖b_k‖`, over `[0, T]` and over `[0, 2T]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GrowthEnvelope {
    pub envelope: f64,
    pub envelope_doubled: f64,
    pub zeta_hat: f64,
    pub varpi_hat: f64,
    pub m_hat: f64,
    /// The supremum does not grow when the horizon is doubled.
    pub bounded: bool,
}

pub fn growth_envelope_check(
    m: &ModelSpec,
    p: &Propagator,
    phi: &PopulationDensity,
    horizon: f64,
) -> Result<GrowthEnvelope> {
    let decay = p.decay_estimate();
    let zeta_hat = decay.m_hat * m.birth.max_norm();
    let steps = time_index(horizon, m.grid.da())?;
    let births = solve_birth(m, p, phi, 2.0 * steps as f64 * m.grid.da())?;
    let rate = decay.varpi_hat - zeta_hat;
    let weighted: Vec<f64> = births
        .values()
        .iter()
        .zip(births.times())
        .map(|(b, t)| b.norm() * (rate * t).exp())
        .collect();
    let envelope = weighted[..=steps].iter().copied().fold(0.0, f64::max);
    let envelope_doubled = weighted.iter().copied().fold(0.0, f64::max);
    Ok(GrowthEnvelope {
        envelope,
        envelope_doubled,
        zeta_hat,
        varpi_hat: decay.varpi_hat,
        m_hat: decay.m_hat,
        bounded: envelope_doubled.is_finite() && envelope_doubled <= envelope * (1.0 + 1e-9),
    })
}
