use agepop::model::{diffusion_preset, ones, scalar_model};
use agepop::oracle::oracle_evolve_many;
use agepop::{
    assemble_oracle, async_growth_verify, build_propagator, find_lambda0, generator_eigenfunction,
    laplace_oracle, oracle_evolve, resolvent_apply, GrowthStatus, PopulationDensity,
    SemigroupMarch, SpectralProjection, Vector,
};

mod common;
use common::compatible;

#[test]
fn eigenfunction_grows_at_lambda0() {
    for beta in [0.5, 2.0] {
        let m = scalar_model(0.0, beta, 1.0, 200).unwrap();
        let p = build_propagator(&m, 1).unwrap();
        let l0 = find_lambda0(&m, &p, 1e-13).unwrap().lambda0;
        let eig = generator_eigenfunction(&m, &p, l0, 1e-10).unwrap();
        assert!(eig.bc_residual <= 1e-6);
        let phi = eig.phi;
        let mut march = SemigroupMarch::new(&m, &p, &phi).unwrap();
        while march.time() < 3.0 - 1e-9 {
            march.advance();
            let growth = (l0 * march.time()).exp();
            let err = march.density().sub(&phi.scale(growth)).norm();
            assert!(
                err <= 5.0 * m.grid.da() * growth * phi.norm(),
                "β = {beta}: {err:e}"
            );
        }
    }
}

#[test]
fn eigenfunction_has_no_transient() {
    let m = scalar_model(0.0, 2.0, 1.0, 200).unwrap();
    let p = build_propagator(&m, 1).unwrap();
    let mal = find_lambda0(&m, &p, 1e-13).unwrap();
    let proj = SpectralProjection::new(&m, &p, &mal).unwrap();
    let phi = proj.profile().clone();
    let rep = async_growth_verify(&m, &p, &mal, &phi, 3.0).unwrap();
    let bound = m.grid.da() * phi.norm();
    assert!(
        rep.errors.iter().all(|&e| e <= bound),
        "{:?}",
        rep.errors.iter().cloned().fold(0.0, f64::max)
    );
    assert_ne!(rep.status, GrowthStatus::NoDecay);
}

#[test]
fn supercritical_decay_rate_is_reported() {
    let m = scalar_model(0.0, 2.0, 1.0, 200).unwrap();
    let p = build_propagator(&m, 1).unwrap();
    let mal = find_lambda0(&m, &p, 1e-13).unwrap();
    let phi =
        PopulationDensity::from_fn(&m.grid, |a| Vector::from_element(1, 1.0 + (4.0 * a).cos()))
            .unwrap();
    let rep = async_growth_verify(&m, &p, &mal, &phi, 4.0).unwrap();
    assert!(rep.transient_cutoff.is_some());
    assert!(rep.fitted_rate.unwrap() > 0.0);
    assert!(rep.error_at(4.0).unwrap() < rep.errors[0]);
}

#[test]
fn oracle_is_positive_and_tracks_characteristics() {
    let m = diffusion_preset(6, 100).unwrap();
    let p = build_propagator(&m, 1).unwrap();
    let g = assemble_oracle(&m).unwrap();
    let phi = compatible(&m, |a| Vector::from_fn(6, |i, _| 1.0 + 0.1 * i as f64 + a));
    let times = [0.5, 1.0, 2.0];
    let outs = oracle_evolve_many(&g, &phi, &times).unwrap();
    let mut march = SemigroupMarch::new(&m, &p, &phi).unwrap();
    for (t, o) in times.iter().zip(&outs) {
        assert!(o.min_entry() >= 0.0);
        while march.time() < t - 1e-9 {
            march.advance();
        }
        assert!(march.density().sub(o).norm() <= 10.0 * m.grid.da() * phi.norm());
    }
}

#[test]
fn oracle_critical_constant() {
    let m = scalar_model(0.0, 1.0, 1.0, 200).unwrap();
    let g = assemble_oracle(&m).unwrap();
    let one = PopulationDensity::constant(&m.grid, &ones(1));
    let out = oracle_evolve(&g, &one, 1.0).unwrap();
    assert!(out.sub(&one).norm() <= m.grid.da());
}

#[test]
fn resolvent_matches_laplace_on_diffusion_preset() {
    let m = diffusion_preset(8, 200).unwrap();
    let p = build_propagator(&m, 1).unwrap();
    let l0 = find_lambda0(&m, &p, 1e-12).unwrap().lambda0;
    let phi = PopulationDensity::from_fn(&m.grid, |a| Vector::from_element(8, 1.0 + a)).unwrap();
    for lambda in [l0 + 0.5, l0 + 20.0] {
        let horizon = (40.0 / (lambda - l0)).ceil().max(2.0);
        let formula = resolvent_apply(&m, &p, lambda, &phi).unwrap().psi;
        let oracle = laplace_oracle(&m, &p, lambda, &phi, horizon, 1e-12).unwrap();
        let rel = formula.sub(&oracle).norm() / formula.norm();
        assert!(rel <= 1e-3, "λ = {lambda}: {rel:e}");
    }
}
