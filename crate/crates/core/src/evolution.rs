//! The evolution operator `Π(a, σ)` of `dφ/da = -A(a) φ` on the age grid.
//!
//! Each grid interval is advanced by midpoint-Magnus substeps
//! `exp(-h·A(a_mid))`. Because `-A(a_mid)` is Metzler, every factor is
//! entrywise nonnegative, so discrete positivity of `Π` holds exactly.

use nalgebra::Complex;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{linear_fit, metzler_expm, op_norm2, Mat, Vector};
use crate::model::ModelSpec;
use crate::par;

#[derive(Debug, Clone)]
pub struct Propagator {
    /// `steps[k] ≈ Π(a_{k+1}, a_k)`.
    steps: Vec<Mat>,
    /// `prefix[k] = Π(a_k, 0)`, `prefix[0] = I`.
    prefix: Vec<Mat>,
    nodes: Vec<f64>,
    da: f64,
    substeps: usize,
}

/// Operator-norm decay `‖Π(a, 0)‖ <= M̂ e^{-ϖ̂ a}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecayEstimate {
    pub m_hat: f64,
    pub varpi_hat: f64,
}

pub fn build_propagator(m: &ModelSpec, substeps: usize) -> Result<Propagator> {
    Propagator::build(m, substeps)
}

impl Propagator {
    pub fn build(m: &ModelSpec, substeps: usize) -> Result<Self> {
        if substeps == 0 {
            return Err(Error::InvalidModel("substeps must be >= 1".into()));
        }
        m.check_signs()?;
        let k_int = m.grid.intervals();
        let da = m.grid.da();
        let h = da / substeps as f64;

        // Midpoint generators in age order; consecutive duplicates (age-constant
        // stretches) share one exponential.
        let mids: Vec<Mat> = (0..k_int * substeps)
            .map(|idx| {
                let s = (idx as f64 + 0.5) / substeps as f64;
                m.gen.interpolate(s)
            })
            .collect();
        let mut unique: Vec<usize> = Vec::with_capacity(mids.len());
        let mut slot = Vec::with_capacity(mids.len());
        for (idx, a) in mids.iter().enumerate() {
            match unique.last() {
                Some(&u) if mids[u] == *a => {}
                _ => unique.push(idx),
            }
            slot.push(unique.len() - 1);
        }
        let exps = par::map_slice(&unique, |&idx| metzler_expm(&(-&mids[idx]), h));

        let steps = par::map_range(k_int, |k| {
            let base = k * substeps;
            let mut s = exps[slot[base]].clone();
            for j in 1..substeps {
                s = &exps[slot[base + j]] * &s;
            }
            s
        });
        if let Some(k) = steps.iter().position(|s| s.iter().any(|x| !x.is_finite())) {
            return Err(Error::NonFiniteExponential {
                lo: m.grid.node(k),
                hi: m.grid.node(k + 1),
            });
        }

        let n = m.dim();
        let mut prefix = Vec::with_capacity(k_int + 1);
        prefix.push(Mat::identity(n, n));
        for s in &steps {
            let next = s * prefix.last().unwrap();
            prefix.push(next);
        }
        Ok(Self {
            steps,
            prefix,
            nodes: m.grid.nodes().to_vec(),
            da,
            substeps,
        })
    }

    pub fn da(&self) -> f64 {
        self.da
    }

    pub fn substeps(&self) -> usize {
        self.substeps
    }

    pub fn dim(&self) -> usize {
        self.prefix[0].nrows()
    }

    /// Number of age nodes `K + 1`.
    pub fn len(&self) -> usize {
        self.prefix.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// `Π(a_{k+1}, a_k)`.
    pub fn step(&self, k: usize) -> &Mat {
        &self.steps[k]
    }

    pub fn steps(&self) -> &[Mat] {
        &self.steps
    }

    /// `Π(a_k, 0)`.
    pub fn prefix(&self, k: usize) -> &Mat {
        &self.prefix[k]
    }

    pub fn prefixes(&self) -> &[Mat] {
        &self.prefix
    }

    fn check_pair(&self, j: usize, i: usize) -> Result<()> {
        if j >= self.len() {
            return Err(Error::IndexRange {
                index: j,
                len: self.len(),
            });
        }
        if i > j {
            return Err(Error::IndexOrder { i, j });
        }
        Ok(())
    }

    /// `Π(a_j, a_i) = S_{j-1} ⋯ S_i`, built from the step product.
    pub fn propagate(&self, j: usize, i: usize) -> Result<Mat> {
        self.check_pair(j, i)?;
        if i == 0 {
            return Ok(self.prefix[j].clone());
        }
        let n = self.dim();
        let mut out = Mat::identity(n, n);
        for k in i..j {
            out = &self.steps[k] * out;
        }
        Ok(out)
    }

    /// `Π(a_j, a_i) v` as a chain of matrix-vector products.
    pub fn propagate_vec(&self, j: usize, i: usize, v: &Vector) -> Result<Vector> {
        self.check_pair(j, i)?;
        let mut out = v.clone();
        for k in i..j {
            out = &self.steps[k] * out;
        }
        Ok(out)
    }

    /// `Π_λ(a_j, a_i) = e^{-λ(a_j - a_i)} Π(a_j, a_i)`.
    pub fn twisted_propagate(&self, lambda: f64, j: usize, i: usize) -> Result<Mat> {
        let p = self.propagate(j, i)?;
        Ok(p * (-lambda * (self.nodes[j] - self.nodes[i])).exp())
    }

    /// Complex twist; `Π` itself stays real, only the scalar factor is complex.
    pub fn twisted_propagate_complex(
        &self,
        lambda: Complex<f64>,
        j: usize,
        i: usize,
    ) -> Result<nalgebra::DMatrix<Complex<f64>>> {
        let p = self.propagate(j, i)?;
        let factor = (-lambda * (self.nodes[j] - self.nodes[i])).exp();
        Ok(p.map(|x| factor * x))
    }

    /// Least-squares decay rate of `‖Π(a_k, 0)‖` over the tail half of the
    /// grid and the smallest constant making the bound hold at every node.
    pub fn decay_estimate(&self) -> DecayEstimate {
        let norms = par::map_slice(&self.prefix, op_norm2);
        let k_int = self.len() - 1;
        let (mut xs, mut ys) = (Vec::new(), Vec::new());
        for k in (k_int / 2)..=k_int {
            if norms[k] > 0.0 && norms[k].is_finite() {
                xs.push(self.nodes[k]);
                ys.push(-norms[k].ln());
            }
        }
        let varpi_hat = linear_fit(&xs, &ys).map(|(s, _)| s).unwrap_or(0.0);
        let m_hat = norms
            .iter()
            .zip(&self.nodes)
            .map(|(&nk, &a)| nk * (varpi_hat * a).exp())
            .filter(|x| x.is_finite())
            .fold(1.0, f64::max);
        DecayEstimate { m_hat, varpi_hat }
    }
}
