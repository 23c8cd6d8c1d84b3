//! Helpers shared by the integration tests.
#![allow(dead_code)]

use agepop::linalg::Mat;
use agepop::{AgeGrid, BirthKernel, GeneratorFamily, ModelSpec, PopulationDensity, Vector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// `f + h₁ c₁ + h₂ c₂` with `c₁, c₂` chosen so that the renewal condition and
/// its first time derivative hold at `t = 0`; a mismatch in either puts a
/// jump or a kink on the characteristic `a = t`.
pub fn compatible(m: &ModelSpec, f: impl Fn(f64) -> Vector) -> PopulationDensity {
    let n = m.dim();
    let w = m.grid.trapezoid_weights();
    let a_max = m.grid.a_max();
    let h1 = |a: f64| (1.0 - a / a_max).powi(2);
    let dh1 = |a: f64| -2.0 * (1.0 - a / a_max) / a_max;
    let h2 = |a: f64| a * (1.0 - a / a_max).powi(2);
    let dh2 = |a: f64| (1.0 - a / a_max).powi(2) - 2.0 * a * (1.0 - a / a_max) / a_max;
    let eps = 1e-6;
    let df = |a: f64| (f(a + eps) - f(a - eps)) / (2.0 * eps);
    // Rows: value condition, then derivative condition (∂_t u = −∂_a u − A u).
    let mut lhs = Mat::zeros(2 * n, 2 * n);
    let mut rhs = Vector::zeros(2 * n);
    let eye = Mat::identity(n, n);
    let a0 = m.gen.at(0);
    let set = |lhs: &mut Mat, row: usize, col: usize, blk: &Mat| {
        let mut v = lhs.view_mut((row, col), (n, n));
        v += blk;
    };
    set(&mut lhs, 0, 0, &(&eye * h1(0.0)));
    set(&mut lhs, 0, n, &(&eye * h2(0.0)));
    set(&mut lhs, n, 0, &(&eye * dh1(0.0) + a0 * h1(0.0)));
    set(&mut lhs, n, n, &(&eye * dh2(0.0) + a0 * h2(0.0)));
    let mut r0 = -f(0.0);
    let mut r1 = -(df(0.0) + a0 * f(0.0));
    for (k, &a) in m.grid.nodes().iter().enumerate() {
        let wb = m.birth.at(k) * w[k];
        let ak = m.gen.at(k);
        set(&mut lhs, 0, 0, &(-&wb * h1(a)));
        set(&mut lhs, 0, n, &(-&wb * h2(a)));
        set(&mut lhs, n, 0, &(-&wb * (&eye * dh1(a) + ak * h1(a))));
        set(&mut lhs, n, n, &(-&wb * (&eye * dh2(a) + ak * h2(a))));
        r0 += &wb * f(a);
        r1 += &wb * (df(a) + ak * f(a));
    }
    rhs.rows_mut(0, n).copy_from(&r0);
    rhs.rows_mut(n, n).copy_from(&r1);
    let c = lhs.lu().solve(&rhs).expect("compatibility system solvable");
    let (c1, c2) = (c.rows(0, n).into_owned(), c.rows(n, n).into_owned());
    PopulationDensity::from_fn(&m.grid, |a| f(a) + &c1 * h1(a) + &c2 * h2(a)).unwrap()
}

/// Random model: `A_k = −(off-diagonal ≥ 0 part) + diagonal`, smooth in age;
/// `b_k ≥ 0` with a strictly positive first row and column band so that
/// the renewal matrix is irreducible.
pub fn random_model(rng: &mut ChaCha8Rng, k: usize) -> ModelSpec {
    let n = rng.random_range(1..=4);
    let grid = AgeGrid::new(rng.random_range(0.5..2.0), k).unwrap();
    let off0 = Mat::from_fn(n, n, |i, j| {
        if i == j {
            0.0
        } else {
            rng.random_range(0.0..1.0)
        }
    });
    let off1 = Mat::from_fn(n, n, |i, j| {
        if i == j {
            0.0
        } else {
            rng.random_range(0.0..1.0)
        }
    });
    let diag: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..2.0)).collect();
    let bmat = Mat::from_fn(n, n, |_, _| rng.random_range(0.1..2.0));
    let a_max = grid.a_max();
    let mut a = Vec::new();
    let mut b = Vec::new();
    for &age in grid.nodes() {
        let s = age / a_max;
        let off = &off0 * (1.0 - s) + &off1 * s;
        let mut ak = -off.clone();
        for i in 0..n {
            ak[(i, i)] = off.column(i).sum() + diag[i] * (1.0 + s);
        }
        a.push(ak);
        b.push(&bmat * (4.0 * s * (1.0 - s) + 0.05));
    }
    ModelSpec::new(
        grid,
        GeneratorFamily::from_matrices(a).unwrap(),
        BirthKernel::new(b).unwrap(),
        None,
    )
    .unwrap()
}
