//! Method-of-lines reference discretization.
//!
//! The age variable is discretized by first-order upwind differences on the
//! model grid. The state is `(u_1, …, u_K)`; the newborn value is eliminated
//! through the birth quadrature
//!
//! ```text
//! u_0 = R Σ_{k≥1} w_k b_k u_k,      R = (I − w_0 b_0)^{-1},
//! ```
//!
//! so `G` is a plain `nK × nK` ODE generator with rows
//! `du_k/dt = −(u_k − u_{k−1})/Δa − A_k u_k`. It shares no code with the
//! characteristics solver beyond the model data.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{DenseSolve, Mat, Vector};
use crate::model::ModelSpec;
use crate::par;
use crate::semigroup::PopulationDensity;
use crate::spectral::perron_root;

/// Largest state dimension for which a dense copy of `G` is formed.
pub const DENSE_LIMIT: usize = 2000;

/// Block representation of `G`.
#[derive(Debug, Clone)]
pub struct OracleMatrix {
    n: usize,
    da: f64,
    /// `−I/Δa − A_k`, `k = 1..K`.
    diag: Vec<Mat>,
    /// `R w_j b_j / Δa`, `j = 1..K`, acting on `u_j` in the `u_1` row.
    birth: Vec<Mat>,
    /// `R w_j b_j`, `j = 1..K`, reconstructs `u_0`.
    newborn: Vec<Mat>,
    a: Vec<Mat>,
    grid: crate::model::AgeGrid,
}

pub fn assemble_oracle(m: &ModelSpec) -> Result<OracleMatrix> {
    let n = m.dim();
    let k = m.grid.intervals();
    if k == 0 {
        return Err(Error::InvalidModel(
            "oracle needs at least one age interval".into(),
        ));
    }
    let da = m.grid.da();
    let w = m.grid.trapezoid_weights();
    let r = DenseSolve::new(&(Mat::identity(n, n) - m.birth.at(0) * w[0])).ok_or_else(|| {
        Error::Degenerate("I − w_0 b_0 is singular; newborn elimination impossible".into())
    })?;
    let newborn: Vec<Mat> = (1..=k)
        .map(|j| r.inverse() * m.birth.at(j) * w[j])
        .collect();
    let birth = newborn.iter().map(|l| l / da).collect();
    let diag = (1..=k)
        .map(|j| -Mat::identity(n, n) / da - m.gen.at(j))
        .collect();
    Ok(OracleMatrix {
        n,
        da,
        diag,
        birth,
        newborn,
        a: (1..=k).map(|j| m.gen.at(j).clone()).collect(),
        grid: m.grid.clone(),
    })
}

impl OracleMatrix {
    /// Total state dimension `nK`.
    pub fn size(&self) -> usize {
        self.n * self.diag.len()
    }

    pub fn blocks(&self) -> usize {
        self.diag.len()
    }

    pub fn da(&self) -> f64 {
        self.da
    }

    /// `y = G x` on block vectors.
    pub fn apply(&self, x: &[Vector]) -> Vec<Vector> {
        let inv = 1.0 / self.da;
        let mut y = par::map_range(self.blocks(), |k| {
            let mut yk = &self.diag[k] * &x[k];
            if k > 0 {
                yk.axpy(inv, &x[k - 1], 1.0);
            }
            yk
        });
        let inflow = par::map_range(self.blocks(), |j| &self.birth[j] * &x[j])
            .into_iter()
            .fold(Vector::zeros(self.n), |acc, v| acc + v);
        y[0] += inflow;
        y
    }

    /// `u_0` implied by the state.
    pub fn newborn(&self, x: &[Vector]) -> Vector {
        self.newborn
            .iter()
            .zip(x)
            .fold(Vector::zeros(self.n), |acc, (l, v)| acc + l * v)
    }

    /// `c ≥ 0` with `G + cI` entrywise nonnegative.
    pub fn shift(&self) -> f64 {
        self.diag
            .iter()
            .flat_map(|d| d.diagonal().iter().copied().collect::<Vec<_>>())
            .fold(0.0, |acc: f64, v| acc.max(-v))
    }

    /// Dense copy of `G`; refused above [`DENSE_LIMIT`].
    pub fn to_dense(&self) -> Result<Mat> {
        let size = self.size();
        if size > DENSE_LIMIT {
            return Err(Error::Precondition(format!(
                "dense oracle limited to N <= {DENSE_LIMIT}, got {size}"
            )));
        }
        let n = self.n;
        let mut g = DMatrix::zeros(size, size);
        for (k, d) in self.diag.iter().enumerate() {
            g.view_mut((k * n, k * n), (n, n)).copy_from(d);
            if k > 0 {
                for i in 0..n {
                    g[(k * n + i, (k - 1) * n + i)] += 1.0 / self.da;
                }
            }
        }
        for (j, l) in self.birth.iter().enumerate() {
            let mut blk = g.view_mut((0, j * n), (n, n));
            blk += l;
        }
        Ok(g)
    }

    /// Rightmost eigenvalue (largest real part) of the dense `G`.
    pub fn rightmost_eigenvalue(&self) -> Result<f64> {
        let g = self.to_dense()?;
        let eig = g.complex_eigenvalues();
        eig.iter()
            .map(|z| z.re)
            .filter(|v| v.is_finite())
            .max_by(f64::total_cmp)
            .ok_or_else(|| Error::Degenerate("eigenvalue computation failed".into()))
    }

    /// Discrete renewal matrix of the upwind scheme at real `s`: an eigenvector
    /// of `G` for `s` exists iff `1 ∈ σ(Σ_k w_k b_k T_k(s))` with
    /// `T_k = ((1 + sΔa) I + Δa A_k)^{-1} T_{k−1}`, `T_0 = I`.
    fn discrete_renewal(&self, s: f64) -> Option<Mat> {
        let n = self.n;
        let mut t = Mat::identity(n, n);
        // Eliminating u_0 turns Σ_{j≥0} w_j b_j T_j = I into R Σ_{j≥1} w_j b_j T_j = I.
        let mut q = Mat::zeros(n, n);
        for (j, a) in self.a.iter().enumerate() {
            let step = Mat::identity(n, n) * (1.0 + s * self.da) + a * self.da;
            t = DenseSolve::new(&step)?.inverse() * &t;
            q += &self.newborn[j] * &t;
        }
        Some(q)
    }

    /// Principal (rightmost, real) eigenvalue of `G` via bisection on the
    /// Perron root of the discrete renewal matrix. Valid for any size.
    pub fn principal_eigenvalue(&self, tol: f64) -> Result<f64> {
        let radius = |s: f64| -> Result<f64> {
            let q = self
                .discrete_renewal(s)
                .ok_or_else(|| Error::Degenerate(format!("upwind step singular at s = {s}")))?;
            if q.iter().all(|&v| v == 0.0) {
                return Ok(0.0);
            }
            Ok(perron_root(&q, 1e-14)?.r)
        };
        // Below this the upwind steps lose their M-matrix structure.
        let floor = -1.0 / self.da
            - self
                .a
                .iter()
                .map(|a| a.diagonal().min())
                .fold(f64::INFINITY, f64::min)
            + 1e-9;
        let mut lo = (-1.0f64).max(floor);
        while radius(lo)? < 1.0 {
            if lo <= floor {
                return Err(Error::Degenerate(
                    "no principal eigenvalue above the upwind floor".into(),
                ));
            }
            lo = (2.0 * lo).max(floor);
        }
        let mut hi = 1.0;
        while radius(hi)? > 1.0 {
            hi *= 2.0;
            if hi > 1e8 {
                return Err(Error::Degenerate(
                    "principal eigenvalue bracket diverged".into(),
                ));
            }
        }
        while hi - lo > tol * (1.0 + hi.abs()) {
            let mid = 0.5 * (lo + hi);
            if radius(mid)? > 1.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    fn split(&self, phi: &PopulationDensity) -> Result<Vec<Vector>> {
        if !phi.grid().compatible(&self.grid) || phi.dim() != self.n {
            return Err(Error::GridMismatch(
                "density does not match oracle grid".into(),
            ));
        }
        Ok(phi.values()[1..].to_vec())
    }

    fn assemble(&self, x: Vec<Vector>) -> PopulationDensity {
        let mut values = Vec::with_capacity(x.len() + 1);
        values.push(self.newborn(&x));
        values.extend(x);
        PopulationDensity::from_parts(&self.grid, values)
    }
}

/// `e^{tG} φ` by uniformization: `e^{tG} = e^{−ct} e^{t(G + cI)}` with a
/// nonnegative Taylor series per substep, so no cancellation occurs.
pub fn oracle_evolve(
    g: &OracleMatrix,
    phi: &PopulationDensity,
    t: f64,
) -> Result<PopulationDensity> {
    Ok(oracle_evolve_many(g, phi, &[t])?.pop().unwrap())
}

/// Evolves to each of the sorted times in turn.
pub fn oracle_evolve_many(
    g: &OracleMatrix,
    phi: &PopulationDensity,
    times: &[f64],
) -> Result<Vec<PopulationDensity>> {
    if times.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
        return Err(Error::Precondition(
            "oracle times must be finite and nonnegative".into(),
        ));
    }
    if times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Precondition("oracle times must be sorted".into()));
    }
    let mut x = g.split(phi)?;
    let c = g.shift();
    let mut now = 0.0;
    let mut out = Vec::with_capacity(times.len());
    for &t in times {
        x = uniformized_step(g, c, x, t - now);
        now = t;
        out.push(g.assemble(x.clone()));
    }
    Ok(out)
}

fn uniformized_step(g: &OracleMatrix, c: f64, mut x: Vec<Vector>, dt: f64) -> Vec<Vector> {
    if dt == 0.0 {
        return x;
    }
    let substeps = ((dt * c / 20.0).ceil() as usize).max(1);
    let delta = dt / substeps as f64;
    let damp = (-c * delta).exp();
    for _ in 0..substeps {
        let mut term = x.clone();
        let mut sum = x.clone();
        for j in 1..1000 {
            let gt = g.apply(&term);
            let factor = delta / j as f64;
            term = gt
                .into_iter()
                .zip(&term)
                .map(|(gk, xk)| (gk + xk * c) * factor)
                .collect();
            let mut tn = 0.0f64;
            let mut sn = 0.0f64;
            for (s, tk) in sum.iter_mut().zip(&term) {
                *s += tk;
                tn = tn.max(tk.amax());
                sn = sn.max(s.amax());
            }
            if tn <= 1e-17 * sn || sn == 0.0 {
                break;
            }
        }
        for v in sum.iter_mut() {
            *v *= damp;
        }
        x = sum;
    }
    x
}
