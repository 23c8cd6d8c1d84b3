//! Acceptance battery. Runs every criterion, prints one PASS/FAIL line each
//! and exits nonzero if any fails.

use std::process::ExitCode;
use std::time::Instant;

use agepop::model::{diffusion_preset, ones, scalar_model};
use agepop::oracle::oracle_evolve_many;
use agepop::{
    assemble_oracle, async_growth_verify, build_diffusion_model, build_propagator,
    classify_stability, domain_check, find_lambda0, laplace_oracle, projection_apply,
    resolvent_apply, spectral_radius_curve, AgeGridSpec, Boundary, ModelSpec, PiecewiseLinear,
    PopulationDensity, SemigroupMarch, SpatialSpec, SpectralProjection, Stability, Vector,
};
use rand::{Rng, SeedableRng};

mod common;
use common::{compatible, random_model};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Bisection on the closed-form renewal function `β(1 − e^{−s a})/s = 1`
/// in `s = λ + κ`, carried far below double precision needs.
fn closed_form_root(beta: f64, a_max: f64, shift: f64) -> f64 {
    let f = |l: f64| {
        let s = l + shift;
        if s.abs() < 1e-14 {
            beta * a_max - 1.0
        } else {
            beta * (-(-s * a_max).exp_m1()) / s - 1.0
        }
    };
    let (mut lo, mut hi) = (-shift - 50.0, 50.0);
    for _ in 0..300 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn scalar(beta: f64, k: usize) -> (ModelSpec, agepop::Propagator) {
    let m = scalar_model(0.0, beta, 1.0, k).unwrap();
    let p = build_propagator(&m, 1).unwrap();
    (m, p)
}

fn c1_euler_lotka() -> Outcome {
    let start = Instant::now();
    let (m, p) = scalar(2.0, 200);
    let l0 = find_lambda0(&m, &p, 1e-12)
        .map_err(|e| e.to_string())?
        .lambda0;
    let secs = start.elapsed().as_secs_f64();
    let exact = closed_form_root(2.0, 1.0, 0.0);
    let err = (l0 - exact).abs();
    check(
        err <= 1e-4 && (l0 - 1.5936).abs() <= 1e-4 && secs < 1.0,
        format!("λ₀ = {l0:.8}, bisection root {exact:.8}, |Δ| = {err:.2e}, {secs:.3} s"),
    )
}

fn c2_subcritical() -> Outcome {
    let start = Instant::now();
    let (m, p) = scalar(0.5, 200);
    let verdict = classify_stability(&m, &p, 1e-6).map_err(|e| e.to_string())?;
    let phi = PopulationDensity::constant(&m.grid, &ones(1));
    let mut march = SemigroupMarch::new(&m, &p, &phi).map_err(|e| e.to_string())?;
    let (mut ts, mut logs) = (Vec::new(), Vec::new());
    while march.time() < 10.0 - 1e-9 {
        march.advance();
        if march.time() >= 5.0 - 1e-9 {
            ts.push(march.time());
            logs.push(march.density().norm().ln());
        }
    }
    let (slope, _) = agepop::linalg::linear_fit(&ts, &logs).ok_or("degenerate fit")?;
    let secs = start.elapsed().as_secs_f64();
    let exact = closed_form_root(0.5, 1.0, 0.0);
    check(
        verdict.verdict == Stability::Stable
            && (slope - (-1.2564)).abs() <= 0.01
            && (exact - (-1.2564)).abs() <= 1e-4
            && secs < 5.0,
        format!(
            "verdict {:?} (r(Q_0) = {:.6}), fitted rate {slope:.5} on t ∈ [5, 10], root {exact:.5}, {secs:.3} s",
            verdict.verdict, verdict.r_q0
        ),
    )
}

fn c3_critical() -> Outcome {
    let (m, p) = scalar(1.0, 200);
    let l0 = find_lambda0(&m, &p, 1e-12)
        .map_err(|e| e.to_string())?
        .lambda0;
    let one = PopulationDensity::constant(&m.grid, &ones(1));
    let mut march = SemigroupMarch::new(&m, &p, &one).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    while march.time() < 10.0 - 1e-9 {
        march.advance();
        worst = worst.max(march.density().sub(&one).norm());
    }
    check(
        l0.abs() <= 1e-6 && worst <= 1e-6,
        format!("λ₀ = {l0:.2e}, max_t≤10 ‖S(t)1 − 1‖ = {worst:.2e}"),
    )
}

fn c4_async_growth() -> Outcome {
    let start = Instant::now();
    let (m, p) = scalar(2.0, 200);
    let mal = find_lambda0(&m, &p, 1e-12).map_err(|e| e.to_string())?;
    let phi = PopulationDensity::constant(&m.grid, &ones(1));
    let report = async_growth_verify(&m, &p, &mal, &phi, 5.0).map_err(|e| e.to_string())?;
    let e5 = report.error_at(5.0).ok_or("no sample at t = 5")?;
    let secs = start.elapsed().as_secs_f64();
    check(
        e5 <= 1e-3 * phi.norm() && secs < 10.0,
        format!(
            "e(5) = {e5:.3e} (‖φ‖ = {:.3}), fitted rate {:?}, status {:?}, {secs:.3} s",
            phi.norm(),
            report.fitted_rate,
            report.status
        ),
    )
}

fn c5_projection() -> Outcome {
    let (m, p) = scalar(1.0, 200);
    let mal = find_lambda0(&m, &p, 1e-12).map_err(|e| e.to_string())?;
    let proj = SpectralProjection::new(&m, &p, &mal).map_err(|e| e.to_string())?;
    let one = PopulationDensity::constant(&m.grid, &ones(1));
    let lin = PopulationDensity::from_fn(&m.grid, |a| Vector::from_element(1, a)).unwrap();
    let p1 = proj.apply(&one).map_err(|e| e.to_string())?;
    let plin = proj.apply(&lin).map_err(|e| e.to_string())?;
    let dev1 = p1
        .values()
        .iter()
        .map(|v| (v[0] - 1.0).abs())
        .fold(0.0, f64::max);
    let devlin = plin
        .values()
        .iter()
        .map(|v| (v[0] - 1.0 / 3.0).abs())
        .fold(0.0, f64::max);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut idem: f64 = 0.0;
    for _ in 0..20 {
        let values = (0..m.grid.len())
            .map(|_| Vector::from_element(1, rng.random::<f64>()))
            .collect();
        let phi = PopulationDensity::new(&m.grid, values).unwrap();
        let once = proj.apply(&phi).map_err(|e| e.to_string())?;
        let twice = proj.apply(&once).map_err(|e| e.to_string())?;
        idem = idem.max(twice.sub(&once).norm() / once.norm());
    }
    let via_fn = projection_apply(&m, &p, &mal, &one).map_err(|e| e.to_string())?;
    check(
        dev1 <= 1e-4 && devlin <= 1e-4 && idem <= 1e-10 && via_fn == p1,
        format!("max|P1 − 1| = {dev1:.2e}, max|P(a) − 1/3| = {devlin:.2e}, max rel ‖P²φ − Pφ‖ = {idem:.2e} over 20 φ"),
    )
}

fn c6_resolvent() -> Outcome {
    let mut details = Vec::new();
    let mut ok = true;
    // b ≡ 0: the integrand vanishes after t = a_max.
    let (m, p) = scalar(0.0, 200);
    let phi =
        PopulationDensity::from_fn(&m.grid, |a| Vector::from_element(1, 1.0 + a * a)).unwrap();
    let lambda = 1.0;
    let formula = resolvent_apply(&m, &p, lambda, &phi)
        .map_err(|e| e.to_string())?
        .psi;
    let oracle = laplace_oracle(&m, &p, lambda, &phi, 2.0, 1e-10).map_err(|e| e.to_string())?;
    let rel = formula.sub(&oracle).norm() / formula.norm();
    ok &= rel <= 1e-3;
    details.push(format!("b≡0, λ = 1: rel {rel:.2e}"));

    let (m, p) = scalar(2.0, 200);
    let l0 = find_lambda0(&m, &p, 1e-12)
        .map_err(|e| e.to_string())?
        .lambda0;
    let lambda = l0 + 1.0;
    let phi = PopulationDensity::constant(&m.grid, &ones(1));
    let formula = resolvent_apply(&m, &p, lambda, &phi)
        .map_err(|e| e.to_string())?
        .psi;
    let oracle = laplace_oracle(&m, &p, lambda, &phi, 40.0, 1e-12).map_err(|e| e.to_string())?;
    let rel = formula.sub(&oracle).norm() / formula.norm();
    ok &= rel <= 1e-3;
    details.push(format!("β = 2, λ = λ₀ + 1: rel {rel:.2e}"));
    check(ok, details.join("; "))
}

fn c7_domain() -> Outcome {
    let mut pde = Vec::new();
    let mut bc = Vec::new();
    for k in [100, 200, 400] {
        let m = diffusion_preset(20, k).unwrap();
        let p = build_propagator(&m, 1).unwrap();
        let xs = SpatialSpec {
            length: 1.0,
            n: 20,
            diffusivity: 0.05,
            boundary: Boundary::Dirichlet,
        }
        .points();
        let phi = PopulationDensity::from_fn(&m.grid, |a| {
            Vector::from_iterator(20, xs.iter().map(|x| x * (1.0 - x) * (1.0 + a * a)))
        })
        .unwrap();
        let res = resolvent_apply(&m, &p, 1.0, &phi).map_err(|e| e.to_string())?;
        let r = domain_check(&m, 1.0, &phi, &res.psi);
        pde.push(r.pde_residual);
        bc.push(r.bc_residual);
    }
    let ratios = [pde[0] / pde[1], pde[1] / pde[2]];
    let halves = ratios.iter().all(|r| (r - 2.0).abs() <= 0.4);
    let bc_exact = bc.iter().all(|&b| b <= 1e-10);
    check(
        halves && bc_exact,
        format!(
            "pde residuals {:.3e} / {:.3e} / {:.3e} (ratios {:.3}, {:.3}); bc residuals {:.1e} / {:.1e} / {:.1e} (exact by construction)",
            pde[0], pde[1], pde[2], ratios[0], ratios[1], bc[0], bc[1], bc[2]
        ),
    )
}

fn c8_monotone() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut violations = 0;
    let mut worst_step = f64::INFINITY;
    for _ in 0..25 {
        let m = random_model(&mut rng, 60);
        let p = build_propagator(&m, 1).unwrap();
        let mut lambdas: Vec<f64> = (0..10).map(|_| rng.random_range(-3.0..5.0)).collect();
        lambdas.sort_by(f64::total_cmp);
        lambdas.dedup();
        let curve = match spectral_radius_curve(&m, &p, &lambdas, 1e-13) {
            Ok(c) => c,
            Err(_) => {
                violations += 1;
                continue;
            }
        };
        for w in curve.windows(2) {
            if !(w[1].1 < w[0].1) {
                violations += 1;
            }
            worst_step = worst_step.min(w[0].1 - w[1].1);
        }
    }
    check(
        violations == 0,
        format!(
            "25 random models × 10 λ: {violations} violations, smallest decrease {worst_step:.2e}"
        ),
    )
}

/// Largest relative `‖oracle − characteristics‖ / (Δa ‖φ‖)` over `t ∈ {0.5, 1, 2}`.
fn oracle_constant(m: &ModelSpec, phi: &PopulationDensity) -> Result<f64, String> {
    let p = build_propagator(m, 1).map_err(|e| e.to_string())?;
    let g = assemble_oracle(m).map_err(|e| e.to_string())?;
    let times = [0.5, 1.0, 2.0];
    let oracle = oracle_evolve_many(&g, phi, &times).map_err(|e| e.to_string())?;
    let mut march = SemigroupMarch::new(m, &p, phi).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for (t, o) in times.iter().zip(&oracle) {
        while march.time() < t - 1e-9 {
            march.advance();
        }
        let err = march.density().sub(o).norm();
        worst = worst.max(err / (m.grid.da() * phi.norm()));
    }
    Ok(worst)
}

fn c9_oracle() -> Outcome {
    let mut ok = true;
    let mut details = Vec::new();
    let ks = [100, 200, 400];
    let cases: Vec<(&str, Box<dyn Fn(usize) -> ModelSpec>)> = vec![
        (
            "β=0.5",
            Box::new(|k| scalar_model(0.0, 0.5, 1.0, k).unwrap()),
        ),
        ("β=1", Box::new(|k| scalar_model(0.0, 1.0, 1.0, k).unwrap())),
        ("β=2", Box::new(|k| scalar_model(0.0, 2.0, 1.0, k).unwrap())),
        (
            "diffusion n=20",
            Box::new(|k| diffusion_preset(20, k).unwrap()),
        ),
    ];
    for (name, make) in &cases {
        let mut cs = Vec::new();
        let mut eig_err = Vec::new();
        for &k in &ks {
            let m = make(k);
            let n = m.dim();
            let phi = compatible(&m, |a| {
                Vector::from_fn(n, |i, _| {
                    let x = (i as f64 + 1.0) / (n as f64 + 1.0);
                    (1.0 + (3.0 * a).sin()) * (std::f64::consts::PI * x).sin().max(1e-3)
                })
            });
            cs.push(oracle_constant(&m, &phi)?);
            let p = build_propagator(&m, 1).map_err(|e| e.to_string())?;
            let l0 = find_lambda0(&m, &p, 1e-13)
                .map_err(|e| e.to_string())?
                .lambda0;
            let g = assemble_oracle(&m).map_err(|e| e.to_string())?;
            let eig = if g.size() <= agepop::oracle::DENSE_LIMIT {
                g.rightmost_eigenvalue()
            } else {
                g.principal_eigenvalue(1e-14)
            }
            .map_err(|e| e.to_string())?;
            eig_err.push((eig - l0).abs());
        }
        let spread = cs.iter().cloned().fold(0.0, f64::max)
            / cs.iter().cloned().fold(f64::INFINITY, f64::min);
        let stable = spread <= 2.0 || cs.iter().all(|&c| c * 0.0025 <= 1e-10);
        let first_order = if eig_err.iter().all(|&e| e <= 1e-10) {
            true
        } else {
            let r = [eig_err[0] / eig_err[1], eig_err[1] / eig_err[2]];
            r.iter().all(|x| (x - 2.0).abs() <= 0.5)
        };
        let scaled: Vec<f64> = eig_err
            .iter()
            .zip(&ks)
            .map(|(e, &k)| e * k as f64)
            .collect();
        ok &= stable && first_order;
        details.push(format!(
            "{name}: C = {:.3}/{:.3}/{:.3}, |eig − λ₀|/Δa = {:.3}/{:.3}/{:.3}",
            cs[0], cs[1], cs[2], scaled[0], scaled[1], scaled[2]
        ));
    }
    check(ok, details.join("; "))
}

fn c10_positivity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut min_birth = f64::INFINITY;
    let mut min_state = f64::INFINITY;
    let models: Vec<ModelSpec> = (0..10).map(|_| random_model(&mut rng, 40)).collect();
    let props: Vec<_> = models
        .iter()
        .map(|m| build_propagator(m, 1).unwrap())
        .collect();
    for trial in 0..100 {
        let m = &models[trial % models.len()];
        let p = &props[trial % models.len()];
        let n = m.dim();
        let values = (0..m.grid.len())
            .map(|_| {
                Vector::from_fn(n, |_, _| {
                    if rng.random_bool(0.3) {
                        0.0
                    } else {
                        rng.random_range(0.0..1.0)
                    }
                })
            })
            .collect();
        let phi = PopulationDensity::new(&m.grid, values).unwrap();
        let mut march = SemigroupMarch::new(m, p, &phi).map_err(|e| e.to_string())?;
        for _ in 0..(2 * m.grid.intervals()) {
            march.advance();
            min_state = min_state.min(march.density().min_entry());
        }
        for b in march.births() {
            min_birth = min_birth.min(b.min());
        }
    }
    check(
        min_birth >= 0.0 && min_state >= -1e-12,
        format!("100 random φ: min B_m = {min_birth:.3e}, min S(t)φ = {min_state:.3e}"),
    )
}

fn c11_modal() -> Outcome {
    let start = Instant::now();
    let beta = 2.0;
    let m = build_diffusion_model(
        &SpatialSpec {
            length: 1.0,
            n: 50,
            diffusivity: 1.0,
            boundary: Boundary::Dirichlet,
        },
        &PiecewiseLinear::constant(0.0),
        &PiecewiseLinear::constant(beta),
        &AgeGridSpec::finite(1.0, 1000),
    )
    .map_err(|e| e.to_string())?;
    let p = build_propagator(&m, 1).map_err(|e| e.to_string())?;
    let l0 = find_lambda0(&m, &p, 1e-13)
        .map_err(|e| e.to_string())?
        .lambda0;
    let secs = start.elapsed().as_secs_f64();
    let kappa1 = m.gen.at(0).clone().symmetric_eigen().eigenvalues.min();
    let exact = closed_form_root(beta, 1.0, kappa1);
    let err = (l0 - exact).abs();
    check(
        err <= 1e-6 && secs < 5.0,
        format!(
            "κ₁ = {kappa1:.6}, λ₀ = {l0:.9}, modal root {exact:.9}, |Δ| = {err:.2e}, {secs:.3} s"
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("Euler-Lotka regression", c1_euler_lotka),
        ("subcritical stability", c2_subcritical),
        ("criticality fixed point", c3_critical),
        ("asynchronous exponential growth", c4_async_growth),
        ("projection formula", c5_projection),
        ("resolvent two-route agreement", c6_resolvent),
        ("generator characterization", c7_domain),
        ("monotone spectral radius", c8_monotone),
        ("oracle equivalence", c9_oracle),
        ("positivity battery", c10_positivity),
        ("diffusion modal reduction", c11_modal),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|e| {
            Err(e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into()))
        });
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {detail}", i + 1);
            }
        }
    }
    println!("{} of 11 criteria passed", 11 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
