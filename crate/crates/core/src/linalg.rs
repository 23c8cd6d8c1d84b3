//! Dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Truncation threshold for the Taylor core, relative to the accumulated sum.
const TAYLOR_EPS: f64 = 1e-17;
const TAYLOR_MAX_TERMS: usize = 60;
/// Scaling target: the scaled nonnegative part has 1-norm at most this.
const SCALED_NORM: f64 = 0.5;

/// Matrix 1-norm (maximum absolute column sum).
pub fn norm1(m: &Mat) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Spectral norm (largest singular value).
pub fn op_norm2(m: &Mat) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    if m.nrows() == 1 && m.ncols() == 1 {
        return m[(0, 0)].abs();
    }
    m.singular_values().max()
}

/// True when every off-diagonal entry is `>= 0`.
pub fn is_metzler(m: &Mat) -> bool {
    m.row_iter()
        .enumerate()
        .all(|(i, row)| row.iter().enumerate().all(|(j, &x)| i == j || x >= 0.0))
}

pub fn min_entry(m: &Mat) -> f64 {
    m.iter().copied().fold(f64::INFINITY, f64::min)
}

/// `exp(t·m)` for a Metzler matrix `m` and `t >= 0`.
///
/// The diagonal is shifted so that `m + cI` is entrywise nonnegative; then
/// `exp(t·m) = (e^{-δc} exp(δ(m + cI)))^{2^s}` with `δ = t / 2^s`. The inner
/// exponential is a Taylor sum of nonnegative terms and the squarings multiply
/// nonnegative matrices, so the result is entrywise nonnegative without any
/// cancellation.
pub fn metzler_expm(m: &Mat, t: f64) -> Mat {
    assert!(m.is_square(), "metzler_expm needs a square matrix");
    assert!(t >= 0.0, "metzler_expm needs t >= 0");
    let n = m.nrows();
    if t == 0.0 || n == 0 {
        return Mat::identity(n, n);
    }
    debug_assert!(is_metzler(m), "metzler_expm called on a non-Metzler matrix");

    let shift = (0..n).map(|i| -m[(i, i)]).fold(0.0, f64::max);
    let mut nonneg = m.clone();
    for i in 0..n {
        nonneg[(i, i)] += shift;
    }
    // Rounding can leave -0.0 or -1e-300 on the shifted diagonal.
    nonneg.iter_mut().for_each(|x| *x = x.max(0.0));

    let norm = t * norm1(&nonneg);
    let squarings = if norm > SCALED_NORM {
        (norm / SCALED_NORM).log2().ceil() as i32
    } else {
        0
    };
    let delta = t / 2f64.powi(squarings);
    let scaled = nonneg * delta;

    let mut sum = Mat::identity(n, n);
    let mut term = Mat::identity(n, n);
    for k in 1..TAYLOR_MAX_TERMS {
        term = &term * &scaled / k as f64;
        sum += &term;
        if norm1(&term) <= TAYLOR_EPS * norm1(&sum) {
            break;
        }
    }
    let mut result = sum * (-delta * shift).exp();
    for _ in 0..squarings {
        result = &result * &result;
    }
    result
}

/// LU solve of `m x = rhs` together with a 1-norm condition estimate
/// `‖m‖₁ ‖m⁻¹‖₁` (exact for the small dense systems used here).
pub struct DenseSolve {
    inverse: Mat,
    pub condition: f64,
}

impl DenseSolve {
    pub fn new(m: &Mat) -> Option<Self> {
        let inverse = m.clone().lu().try_inverse()?;
        if inverse.iter().any(|x| !x.is_finite()) {
            return None;
        }
        let condition = norm1(m) * norm1(&inverse);
        Some(Self { inverse, condition })
    }

    pub fn solve(&self, rhs: &Vector) -> Vector {
        &self.inverse * rhs
    }

    pub fn inverse(&self) -> &Mat {
        &self.inverse
    }
}

/// Least-squares slope and intercept of `y` against `x`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Option<(f64, f64)> {
    let n = x.len();
    if n < 2 || n != y.len() {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let sxx: f64 = x.iter().map(|xi| (xi - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(xi, yi)| (xi - mx) * (yi - my)).sum();
    let slope = sxy / sxx;
    Some((slope, my - slope * mx))
}
