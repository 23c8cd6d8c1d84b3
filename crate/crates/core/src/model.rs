//! Finite-dimensional model data: age grid, generator family `A(a)`, birth
//! kernel `b(a)`, plus the 1-D diffusion presets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evolution::{build_propagator, Propagator};
use crate::linalg::{Mat, Vector};

/// Default truncation tolerance `e^{-ϖ̂ a_max}` for unbounded maximal age.
pub const DEFAULT_TAIL_TOL: f64 = 1e-10;

/// Uniform age grid `a_k = k·Δa`, `k = 0..=K`, with `a_K = a_max` exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct AgeGrid {
    a_max: f64,
    k: usize,
    nodes: Vec<f64>,
}

impl AgeGrid {
    pub fn new(a_max: f64, k: usize) -> Result<Self> {
        if !(a_max.is_finite() && a_max > 0.0) {
            return Err(Error::InvalidModel(format!(
                "a_max must be positive and finite, got {a_max}"
            )));
        }
        if k == 0 {
            return Err(Error::InvalidModel("age grid needs K >= 1".into()));
        }
        let da = a_max / k as f64;
        let mut nodes: Vec<f64> = (0..=k).map(|i| i as f64 * da).collect();
        nodes[k] = a_max;
        Ok(Self { a_max, k, nodes })
    }

    pub fn a_max(&self) -> f64 {
        self.a_max
    }

    /// Number of intervals `K`.
    pub fn intervals(&self) -> usize {
        self.k
    }

    /// Number of nodes `K + 1`.
    pub fn len(&self) -> usize {
        self.k + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn da(&self) -> f64 {
        self.a_max / self.k as f64
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn node(&self, k: usize) -> f64 {
        self.nodes[k]
    }

    /// Composite trapezoid weights on the full grid.
    pub fn trapezoid_weights(&self) -> Vec<f64> {
        trapezoid_weights(self.k, self.da())
    }

    /// Same number of intervals and the same step.
    pub fn compatible(&self, other: &AgeGrid) -> bool {
        self.k == other.k && (self.a_max - other.a_max).abs() <= 1e-12 * self.a_max
    }
}

/// Trapezoid weights for `intervals` equal steps of size `h` (`intervals + 1`
/// nodes). Zero intervals yield a single zero weight.
pub fn trapezoid_weights(intervals: usize, h: f64) -> Vec<f64> {
    if intervals == 0 {
        return vec![0.0];
    }
    let mut w = vec![h; intervals + 1];
    w[0] = 0.5 * h;
    w[intervals] = 0.5 * h;
    w
}

/// User-facing grid description; resolves unbounded maximal age by truncation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgeGridSpec {
    pub a_max: f64,
    pub k: usize,
    /// The model represents `a_m = ∞`.
    pub infinite: bool,
    /// Declared exponential decay margin `ϖ̂ > 0` of the evolution operator
    /// (required when `infinite`).
    pub decay_margin: f64,
    pub tail_tol: f64,
}

impl AgeGridSpec {
    pub fn finite(a_max: f64, k: usize) -> Self {
        Self {
            a_max,
            k,
            infinite: false,
            decay_margin: 0.0,
            tail_tol: DEFAULT_TAIL_TOL,
        }
    }

    /// Unbounded maximal age truncated where `e^{-ϖ̂ a} <= tail_tol`; `a_max`
    /// acts as a lower bound on the truncation age.
    pub fn infinite(a_max: f64, k: usize, decay_margin: f64, tail_tol: f64) -> Self {
        Self {
            a_max,
            k,
            infinite: true,
            decay_margin,
            tail_tol,
        }
    }

    /// The grid and, for `a_m = ∞`, the decay margin carried by the model.
    pub fn resolve(&self) -> Result<(AgeGrid, Option<f64>)> {
        if !self.infinite {
            return Ok((AgeGrid::new(self.a_max, self.k)?, None));
        }
        if !(self.decay_margin.is_finite() && self.decay_margin > 0.0) {
            return Err(Error::InvalidModel(format!(
                "infinite maximal age needs decay_margin > 0, got {}",
                self.decay_margin
            )));
        }
        if !(self.tail_tol > 0.0 && self.tail_tol < 1.0) {
            return Err(Error::InvalidModel(format!(
                "tail_tol must lie in (0, 1), got {}",
                self.tail_tol
            )));
        }
        let needed = -self.tail_tol.ln() / self.decay_margin;
        let a_max = if self.a_max.is_finite() && self.a_max > needed {
            self.a_max
        } else {
            needed
        };
        Ok((AgeGrid::new(a_max, self.k)?, Some(self.decay_margin)))
    }
}

/// Piecewise-linear rate given by `(age, value)` breakpoints, held constant
/// outside the breakpoint range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseLinear {
    points: Vec<(f64, f64)>,
}

impl PiecewiseLinear {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidModel(
                "rate needs at least one breakpoint".into(),
            ));
        }
        if points.iter().any(|(a, v)| !a.is_finite() || !v.is_finite()) {
            return Err(Error::InvalidModel(
                "rate breakpoints must be finite".into(),
            ));
        }
        if points.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::InvalidModel(
                "rate breakpoint ages must be strictly increasing".into(),
            ));
        }
        Ok(Self { points })
    }

    pub fn constant(value: f64) -> Self {
        Self {
            points: vec![(0.0, value)],
        }
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn eval(&self, age: f64) -> f64 {
        let p = &self.points;
        if age <= p[0].0 {
            return p[0].1;
        }
        if age >= p[p.len() - 1].0 {
            return p[p.len() - 1].1;
        }
        let i = p.partition_point(|&(a, _)| a <= age);
        let (a0, v0) = p[i - 1];
        let (a1, v1) = p[i];
        v0 + (v1 - v0) * (age - a0) / (a1 - a0)
    }

    fn check_nonnegative(&self, rate: &'static str, grid: &AgeGrid) -> Result<Vec<f64>> {
        if let Some(&(age, value)) = self.points.iter().find(|(_, v)| *v < 0.0) {
            return Err(Error::NegativeRate { rate, age, value });
        }
        Ok(grid.nodes().iter().map(|&a| self.eval(a)).collect())
    }
}

/// `A(a_k) = A0(a_k) + μ(a_k)·I` sampled at the age nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorFamily {
    n: usize,
    a0: Vec<Mat>,
    mu: Vec<f64>,
    a: Vec<Mat>,
}

impl GeneratorFamily {
    pub fn new(a0: Vec<Mat>, mu: Vec<f64>) -> Result<Self> {
        let n = a0.first().map(|m| m.nrows()).unwrap_or(0);
        if n == 0 {
            return Err(Error::InvalidModel("generator family is empty".into()));
        }
        if a0.len() != mu.len() {
            return Err(Error::InvalidModel(format!(
                "{} generator samples but {} mortality samples",
                a0.len(),
                mu.len()
            )));
        }
        for (k, m) in a0.iter().enumerate() {
            if m.nrows() != n || m.ncols() != n {
                return Err(Error::InvalidModel(format!(
                    "generator at node {k} is {}x{}, expected {n}x{n}",
                    m.nrows(),
                    m.ncols()
                )));
            }
            if m.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidModel(format!(
                    "generator at node {k} has non-finite entries"
                )));
            }
        }
        if let Some(k) = mu.iter().position(|m| !m.is_finite()) {
            return Err(Error::InvalidModel(format!(
                "mortality at node {k} is not finite"
            )));
        }
        let a = a0
            .iter()
            .zip(&mu)
            .map(|(m, &mk)| m + Mat::identity(n, n) * mk)
            .collect();
        Ok(Self { n, a0, mu, a })
    }

    /// Generator given directly as `A(a_k)` (mortality folded in).
    pub fn from_matrices(a: Vec<Mat>) -> Result<Self> {
        let k = a.len();
        Self::new(a, vec![0.0; k])
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    pub fn at(&self, k: usize) -> &Mat {
        &self.a[k]
    }

    pub fn matrices(&self) -> &[Mat] {
        &self.a
    }

    pub fn spatial_part(&self, k: usize) -> &Mat {
        &self.a0[k]
    }

    pub fn mortality(&self) -> &[f64] {
        &self.mu
    }

    /// `A` at a fractional node position `s ∈ [0, K]` by linear interpolation
    /// between neighbouring nodes.
    pub fn interpolate(&self, s: f64) -> Mat {
        let last = self.a.len() - 1;
        let s = s.clamp(0.0, last as f64);
        let i = (s.floor() as usize).min(last.saturating_sub(1));
        let theta = s - i as f64;
        if last == 0 || theta == 0.0 {
            return self.a[i].clone();
        }
        if theta == 1.0 {
            return self.a[i + 1].clone();
        }
        &self.a[i] * (1.0 - theta) + &self.a[i + 1] * theta
    }

    /// Largest positive off-diagonal entry over all nodes, if any.
    fn worst_off_diagonal(&self) -> Option<(usize, usize, usize, f64)> {
        let mut worst: Option<(usize, usize, usize, f64)> = None;
        for (k, m) in self.a.iter().enumerate() {
            for i in 0..self.n {
                for j in 0..self.n {
                    let x = m[(i, j)];
                    if i != j && x > 0.0 && worst.is_none_or(|w| x > w.3) {
                        worst = Some((k, i, j, x));
                    }
                }
            }
        }
        worst
    }
}

/// Birth kernel `b(a_k)`, entrywise nonnegative.
#[derive(Debug, Clone, PartialEq)]
pub struct BirthKernel {
    b: Vec<Mat>,
}

impl BirthKernel {
    pub fn new(b: Vec<Mat>) -> Result<Self> {
        let n = b.first().map(|m| m.nrows()).unwrap_or(0);
        if n == 0 {
            return Err(Error::InvalidModel("birth kernel is empty".into()));
        }
        for (k, m) in b.iter().enumerate() {
            if m.nrows() != n || m.ncols() != n {
                return Err(Error::InvalidModel(format!(
                    "birth matrix at node {k} is {}x{}, expected {n}x{n}",
                    m.nrows(),
                    m.ncols()
                )));
            }
            if m.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidModel(format!(
                    "birth matrix at node {k} has non-finite entries"
                )));
            }
        }
        Ok(Self { b })
    }

    /// `b(a_k) = β(a_k)·I`.
    pub fn scalar(beta: &[f64], n: usize) -> Result<Self> {
        Self::new(beta.iter().map(|&v| Mat::identity(n, n) * v).collect())
    }

    pub fn at(&self, k: usize) -> &Mat {
        &self.b[k]
    }

    pub fn matrices(&self) -> &[Mat] {
        &self.b
    }

    pub fn dim(&self) -> usize {
        self.b[0].nrows()
    }

    pub fn len(&self) -> usize {
        self.b.len()
    }

    pub fn is_empty(&self) -> bool {
        self.b.is_empty()
    }

    pub fn is_zero(&self) -> bool {
        self.b.iter().all(|m| m.iter().all(|&x| x == 0.0))
    }

    pub fn max_norm(&self) -> f64 {
        self.b
            .iter()
            .map(crate::linalg::op_norm2)
            .fold(0.0, f64::max)
    }
}

/// A complete problem definition.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub grid: AgeGrid,
    pub gen: GeneratorFamily,
    pub birth: BirthKernel,
    /// `Some(ϖ̂)` when the model represents an unbounded maximal age.
    pub decay_margin: Option<f64>,
}

impl ModelSpec {
    pub fn new(
        grid: AgeGrid,
        gen: GeneratorFamily,
        birth: BirthKernel,
        decay_margin: Option<f64>,
    ) -> Result<Self> {
        if gen.len() != grid.len() || birth.len() != grid.len() {
            return Err(Error::InvalidModel(format!(
                "grid has {} nodes but generator has {} and birth kernel {}",
                grid.len(),
                gen.len(),
                birth.len()
            )));
        }
        if gen.dim() != birth.dim() {
            return Err(Error::InvalidModel(format!(
                "generator dimension {} differs from birth dimension {}",
                gen.dim(),
                birth.dim()
            )));
        }
        if let Some(m) = decay_margin {
            if !(m.is_finite() && m > 0.0) {
                return Err(Error::InvalidModel(format!(
                    "decay margin must be positive, got {m}"
                )));
            }
        }
        Ok(Self {
            grid,
            gen,
            birth,
            decay_margin,
        })
    }

    /// State dimension `n`.
    pub fn dim(&self) -> usize {
        self.gen.dim()
    }

    pub fn is_infinite(&self) -> bool {
        self.decay_margin.is_some()
    }

    /// Lower end of the admissible λ interval (`-ϖ̂` for `a_m = ∞`).
    pub fn lambda_lower_bound(&self) -> Option<f64> {
        self.decay_margin.map(|m| -m)
    }

    pub fn check_lambda(&self, lambda: f64) -> Result<()> {
        match self.lambda_lower_bound() {
            Some(bound) if lambda <= bound => Err(Error::InadmissibleLambda { lambda, bound }),
            _ if !lambda.is_finite() => Err(Error::InadmissibleLambda {
                lambda,
                bound: f64::NEG_INFINITY,
            }),
            _ => Ok(()),
        }
    }

    pub fn metzler_ok(&self) -> bool {
        self.gen.worst_off_diagonal().is_none()
    }

    pub fn birth_nonneg_ok(&self) -> bool {
        self.birth
            .matrices()
            .iter()
            .all(|m| m.iter().all(|&x| x >= 0.0))
    }

    /// Sign checks required before building a propagator.
    pub fn check_signs(&self) -> Result<()> {
        if let Some((k, i, j, x)) = self.gen.worst_off_diagonal() {
            return Err(Error::InvalidModel(format!(
                "A(a_{k}) has positive off-diagonal entry {x} at ({i}, {j})"
            )));
        }
        for (k, m) in self.birth.matrices().iter().enumerate() {
            if let Some((idx, &x)) = m.iter().enumerate().find(|(_, &x)| x < 0.0) {
                let (i, j) = (idx % m.nrows(), idx / m.nrows());
                return Err(Error::InvalidModel(format!(
                    "b(a_{k}) has negative entry {x} at ({i}, {j})"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    Dirichlet,
    Neumann,
}

/// 1-D spatial setting for [`build_diffusion_model`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpatialSpec {
    pub length: f64,
    pub n: usize,
    pub diffusivity: f64,
    pub boundary: Boundary,
}

impl SpatialSpec {
    /// The diffusion-free scalar setting.
    pub fn scalar() -> Self {
        Self {
            length: 1.0,
            n: 1,
            diffusivity: 0.0,
            boundary: Boundary::Dirichlet,
        }
    }

    /// Mesh width: `L/(n+1)` for Dirichlet (interior points), `L/n` for
    /// Neumann (cell centres).
    pub fn mesh_width(&self) -> f64 {
        match self.boundary {
            Boundary::Dirichlet => self.length / (self.n as f64 + 1.0),
            Boundary::Neumann => self.length / self.n as f64,
        }
    }

    pub fn points(&self) -> Vec<f64> {
        let h = self.mesh_width();
        (0..self.n)
            .map(|i| match self.boundary {
                Boundary::Dirichlet => (i as f64 + 1.0) * h,
                Boundary::Neumann => (i as f64 + 0.5) * h,
            })
            .collect()
    }

    /// `-D Δ_h` with the 3-point stencil.
    pub fn diffusion_matrix(&self) -> Mat {
        let n = self.n;
        let h = self.mesh_width();
        let c = self.diffusivity / (h * h);
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            let mut diag = 2.0 * c;
            if i > 0 {
                m[(i, i - 1)] = -c;
            } else if self.boundary == Boundary::Neumann {
                diag -= c;
            }
            if i + 1 < n {
                m[(i, i + 1)] = -c;
            } else if self.boundary == Boundary::Neumann {
                diag -= c;
            }
            m[(i, i)] = diag;
        }
        m
    }
}

/// `A0 = -D Δ_h`, `A_k = A0 + μ(a_k) I`, `b_k = β(a_k) I`.
pub fn build_diffusion_model(
    spatial: &SpatialSpec,
    mortality: &PiecewiseLinear,
    birth: &PiecewiseLinear,
    grid: &AgeGridSpec,
) -> Result<ModelSpec> {
    if !(spatial.length.is_finite() && spatial.length > 0.0) {
        return Err(Error::InvalidModel(format!(
            "interval length must be positive, got {}",
            spatial.length
        )));
    }
    if spatial.n == 0 {
        return Err(Error::InvalidModel(
            "need at least one spatial point".into(),
        ));
    }
    if !(spatial.diffusivity.is_finite() && spatial.diffusivity >= 0.0) {
        return Err(Error::InvalidModel(format!(
            "diffusivity must be nonnegative, got {}",
            spatial.diffusivity
        )));
    }
    let (age_grid, decay_margin) = grid.resolve()?;
    let mu = mortality.check_nonnegative("mortality", &age_grid)?;
    let beta = birth.check_nonnegative("birth", &age_grid)?;
    let a0 = spatial.diffusion_matrix();
    let gen = GeneratorFamily::new(vec![a0; age_grid.len()], mu)?;
    let birth = BirthKernel::scalar(&beta, spatial.n)?;
    ModelSpec::new(age_grid, gen, birth, decay_margin)
}

/// Scalar Lotka model with constant mortality and fertility on `[0, a_max]`.
pub fn scalar_model(mu: f64, beta: f64, a_max: f64, k: usize) -> Result<ModelSpec> {
    build_diffusion_model(
        &SpatialSpec::scalar(),
        &PiecewiseLinear::constant(mu),
        &PiecewiseLinear::constant(beta),
        &AgeGridSpec::finite(a_max, k),
    )
}

/// 1-D Dirichlet diffusion on `[0, 1]` with `n` interior points, `D = 0.05`,
/// mortality `0.2 + 0.3a` and a hump-shaped fertility on `[0, 1]`.
pub fn diffusion_preset(n: usize, k: usize) -> Result<ModelSpec> {
    build_diffusion_model(
        &SpatialSpec {
            length: 1.0,
            n,
            diffusivity: 0.05,
            boundary: Boundary::Dirichlet,
        },
        &PiecewiseLinear::new(vec![(0.0, 0.2), (1.0, 0.5)])?,
        &PiecewiseLinear::new(vec![(0.0, 0.5), (0.5, 3.0), (1.0, 1.0)])?,
        &AgeGridSpec::finite(1.0, k),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub metzler_ok: bool,
    pub birth_nonneg_ok: bool,
    pub irreducible_ok: bool,
    pub messages: Vec<String>,
}

impl ValidationReport {
    pub fn all_ok(&self) -> bool {
        self.metzler_ok && self.birth_nonneg_ok && self.irreducible_ok
    }
}

/// Checks sign structure and irreducibility of `Σ_k Δa·b_k·Π(a_k, 0)`.
pub fn validate_model(m: &ModelSpec) -> ValidationReport {
    validate_model_with(m, None)
}

/// As [`validate_model`], reusing an already built propagator.
pub fn validate_model_with(m: &ModelSpec, prop: Option<&Propagator>) -> ValidationReport {
    let mut messages = Vec::new();
    let metzler_ok = m.metzler_ok();
    if let Some((k, i, j, x)) = m.gen.worst_off_diagonal() {
        messages.push(format!(
            "A(a_{k}) has positive off-diagonal entry {x:e} at ({i}, {j})"
        ));
    }
    let birth_nonneg_ok = m.birth_nonneg_ok();
    if !birth_nonneg_ok {
        messages.push("birth kernel has negative entries".into());
    }

    let irreducible_ok = if metzler_ok && birth_nonneg_ok {
        let built;
        let prop = match prop {
            Some(p) => Some(p),
            None => match build_propagator(m, 1) {
                Ok(p) => {
                    built = p;
                    Some(&built)
                }
                Err(e) => {
                    messages.push(format!("propagator failed: {e}"));
                    None
                }
            },
        };
        match prop {
            Some(p) => {
                let da = m.grid.da();
                let n = m.dim();
                let mut sum = Mat::zeros(n, n);
                for k in 0..m.grid.len() {
                    sum += m.birth.at(k) * p.prefix(k) * da;
                }
                let ok = irreducibility_check(&sum).unwrap_or(false);
                if !ok {
                    messages.push("Σ Δa b(a_k) Π(a_k, 0) is reducible".into());
                }
                ok
            }
            None => false,
        }
    } else {
        messages.push("irreducibility not checked: sign conditions fail".into());
        false
    };

    ValidationReport {
        metzler_ok,
        birth_nonneg_ok,
        irreducible_ok,
        messages,
    }
}

/// Strong connectivity of the graph with an edge `i → j` whenever `m[(j, i)] > 0`.
pub fn irreducibility_check(m: &Mat) -> Result<bool> {
    if !m.is_square() {
        return Err(Error::InvalidModel(
            "irreducibility needs a square matrix".into(),
        ));
    }
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            let x = m[(i, j)];
            if x < 0.0 || x.is_nan() {
                return Err(Error::NegativeEntry {
                    row: i,
                    col: j,
                    value: x,
                });
            }
        }
    }
    let n = m.nrows();
    if n == 0 {
        return Ok(false);
    }
    if n == 1 {
        // The 1×1 zero matrix counts as reducible.
        return Ok(m[(0, 0)] > 0.0);
    }
    // Forward reachability follows i → j (m[(j, i)] > 0); backward the reverse.
    let reach = |forward: bool| {
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for j in 0..n {
                let edge = if forward { m[(j, i)] } else { m[(i, j)] };
                if edge > 0.0 && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    };
    Ok(reach(true) && reach(false))
}

/// Uniform vector of ones in `R^n`.
pub fn ones(n: usize) -> Vector {
    Vector::from_element(n, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn grid_nodes() {
        let g = AgeGrid::new(1.0, 3).unwrap();
        assert_eq!(g.nodes().len(), 4);
        assert_eq!(g.node(3), 1.0);
        assert!(g.nodes().windows(2).all(|w| w[1] > w[0]));
        let w = g.trapezoid_weights();
        assert_relative_eq!(w.iter().sum::<f64>(), 1.0, epsilon = 1e-15);
        assert!(AgeGrid::new(0.0, 3).is_err());
        assert!(AgeGrid::new(1.0, 0).is_err());
    }

    #[test]
    fn infinite_age_truncation() {
        let (g, margin) = AgeGridSpec::infinite(1.0, 100, 2.0, 1e-10)
            .resolve()
            .unwrap();
        assert_eq!(margin, Some(2.0));
        assert!((-2.0 * g.a_max()).exp() <= 1e-10 * (1.0 + 1e-12));
        assert!(AgeGridSpec::infinite(1.0, 100, 0.0, 1e-10)
            .resolve()
            .is_err());
    }

    #[test]
    fn piecewise_linear_interpolates() {
        let r = PiecewiseLinear::new(vec![(0.0, 0.0), (1.0, 2.0), (3.0, 2.0)]).unwrap();
        assert_relative_eq!(r.eval(0.5), 1.0);
        assert_relative_eq!(r.eval(2.0), 2.0);
        assert_relative_eq!(r.eval(-1.0), 0.0);
        assert_relative_eq!(r.eval(7.0), 2.0);
        assert!(PiecewiseLinear::new(vec![(1.0, 0.0), (1.0, 1.0)]).is_err());
    }

    #[test]
    fn scalar_reduction() {
        let m = scalar_model(0.0, 1.0, 1.0, 100).unwrap();
        assert_eq!(m.dim(), 1);
        assert!(m.gen.matrices().iter().all(|a| a[(0, 0)] == 0.0));
        assert!(m.birth.matrices().iter().all(|b| b[(0, 0)] == 1.0));
    }

    #[test]
    fn dirichlet_stencil() {
        let s = SpatialSpec {
            length: 1.0,
            n: 3,
            diffusivity: 1.0,
            boundary: Boundary::Dirichlet,
        };
        let m = build_diffusion_model(
            &s,
            &PiecewiseLinear::constant(0.0),
            &PiecewiseLinear::constant(1.0),
            &AgeGridSpec::finite(1.0, 10),
        )
        .unwrap();
        let a = m.gen.at(0);
        assert_relative_eq!(a[(0, 0)], 32.0);
        assert_relative_eq!(a[(0, 1)], -16.0);
        assert_eq!(a[(0, 2)], 0.0);
        assert!(m.metzler_ok());
    }

    #[test]
    fn dirichlet_smallest_eigenvalue() {
        let s = SpatialSpec {
            length: 1.0,
            n: 50,
            diffusivity: 1.0,
            boundary: Boundary::Dirichlet,
        };
        let a0 = s.diffusion_matrix();
        let h = s.mesh_width();
        let smallest = a0.symmetric_eigenvalues().min();
        let closed = 4.0 / (h * h) * (std::f64::consts::PI * h / 2.0).sin().powi(2);
        assert_relative_eq!(smallest, closed, max_relative = 1e-10);
        assert!((smallest / std::f64::consts::PI.powi(2) - 1.0).abs() < 0.005);
    }

    #[test]
    fn neumann_rows_sum_to_zero() {
        let s = SpatialSpec {
            length: 2.0,
            n: 6,
            diffusivity: 0.3,
            boundary: Boundary::Neumann,
        };
        let a0 = s.diffusion_matrix();
        for i in 0..6 {
            assert!(a0.row(i).sum().abs() < 1e-12);
        }
        let h = s.mesh_width();
        assert_relative_eq!(a0[(0, 0)], 0.3 / (h * h));
    }

    #[test]
    fn rejects_negative_inputs() {
        let bad = PiecewiseLinear::new(vec![(0.0, 1.0), (0.5, -0.2)]).unwrap();
        let err = build_diffusion_model(
            &SpatialSpec::scalar(),
            &bad,
            &PiecewiseLinear::constant(1.0),
            &AgeGridSpec::finite(1.0, 10),
        )
        .unwrap_err();
        assert!(matches!(err, Error::NegativeRate { rate: "mortality", age, .. } if age == 0.5));

        let mut s = SpatialSpec::scalar();
        s.diffusivity = -1.0;
        assert!(build_diffusion_model(
            &s,
            &PiecewiseLinear::constant(0.0),
            &PiecewiseLinear::constant(1.0),
            &AgeGridSpec::finite(1.0, 10),
        )
        .is_err());
    }

    #[test]
    fn validation_flags() {
        let ok = validate_model(&scalar_model(0.0, 1.0, 1.0, 50).unwrap());
        assert!(ok.all_ok(), "{:?}", ok.messages);
        let dead = validate_model(&scalar_model(0.0, 0.0, 1.0, 50).unwrap());
        assert!(dead.metzler_ok && dead.birth_nonneg_ok && !dead.irreducible_ok);
    }

    #[test]
    fn uncoupled_two_component_model_is_reducible() {
        let grid = AgeGrid::new(1.0, 20).unwrap();
        let a = Mat::from_diagonal(&Vector::from_vec(vec![1.0, 2.0]));
        let b = Mat::from_diagonal(&Vector::from_vec(vec![1.0, 3.0]));
        let m = ModelSpec::new(
            grid.clone(),
            GeneratorFamily::from_matrices(vec![a; 21]).unwrap(),
            BirthKernel::new(vec![b; 21]).unwrap(),
            None,
        )
        .unwrap();
        let r = validate_model(&m);
        assert!(r.metzler_ok && r.birth_nonneg_ok);
        assert!(!r.irreducible_ok);
    }

    #[test]
    fn irreducibility_examples() {
        assert!(!irreducibility_check(&Mat::identity(2, 2)).unwrap());
        assert!(irreducibility_check(&Mat::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0])).unwrap());
        assert!(irreducibility_check(&Mat::from_row_slice(1, 1, &[0.5])).unwrap());
        assert!(matches!(
            irreducibility_check(&Mat::from_row_slice(1, 1, &[-0.5])),
            Err(Error::NegativeEntry { .. })
        ));
        // A chain 0 → 1 → 2 without the way back.
        let chain = Mat::from_row_slice(3, 3, &[0., 0., 0., 1., 0., 0., 0., 1., 0.]);
        assert!(!irreducibility_check(&chain).unwrap());
    }

    #[test]
    fn exponential_of_metzler_tridiagonal_is_irreducible() {
        let m = Mat::from_fn(5, 5, |i, j| match i.abs_diff(j) {
            0 => -2.0,
            1 => 0.7,
            _ => 0.0,
        });
        let e = crate::linalg::metzler_expm(&m, 1.0);
        assert!(e.iter().all(|&x| x > 0.0));
        assert!(irreducibility_check(&e).unwrap());
    }

    #[test]
    fn validation_is_pure() {
        let m = scalar_model(0.3, 1.5, 2.0, 40).unwrap();
        assert_eq!(validate_model(&m), validate_model(&m));
    }
}
