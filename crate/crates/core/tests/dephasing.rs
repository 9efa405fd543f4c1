mod common;

use common::*;
use sln_me::bath::{build_kernels, discretize_spectral_density, BathSpectrum, Beta, Discretization, SpectralFamily};
use sln_me::reference::{solve_convolved, solve_tcl2};
use sln_me::series::DensityMatrixSeries;
use sln_me::sln::{ensemble_average, EnsembleConfig, Form};
use sln_me::TimeGrid;

const OMEGA0: f64 = 1.0;

fn ohmic(eta: f64, t_max: f64) -> BathSpectrum {
    discretize_spectral_density(&Discretization {
        family: SpectralFamily::Ohmic { eta, omega_c: 2.0 },
        n_modes: 100,
        omega_max: 20.0,
        beta: Beta::Finite(1.0),
        t_max: Some(t_max),
    })
    .unwrap()
}

fn coherence_error(series: &DensityMatrixSeries, spec: &BathSpectrum) -> f64 {
    series
        .states
        .iter()
        .enumerate()
        .map(|(k, s)| (s[(0, 1)] - dephasing_coherence(spec, OMEGA0, c(0.5, 0.0), series.grid.time(k))).norm())
        .fold(0.0, f64::max)
}

#[test]
fn tcl2_is_exact_for_commuting_coupling() {
    let spec = ohmic(0.01, 5.0);
    let grid = TimeGrid::from_t_max(0.01, 5.0).unwrap();
    let kernel = build_kernels(&spec, grid.dt, grid.n).unwrap();
    let tcl = solve_tcl2(&dephasing_model(OMEGA0), &kernel).unwrap();
    let final_coherence = tcl.last()[(0, 1)].norm();
    assert!(final_coherence < 0.35, "bath too weak to test anything: {final_coherence}");
    let err = coherence_error(&tcl, &spec);
    assert!(err < 2e-6, "{err}");
    for s in &tcl.states {
        assert!((s[(0, 0)].re - 0.5).abs() < 1e-12);
    }
}

#[test]
fn convolved_error_is_second_order_in_the_bath() {
    let grid = TimeGrid::from_t_max(0.005, 5.0).unwrap();
    let err = |eta: f64| {
        let spec = ohmic(eta, 5.0);
        let kernel = build_kernels(&spec, grid.dt, grid.n).unwrap();
        coherence_error(&solve_convolved(&dephasing_model(OMEGA0), &kernel).unwrap(), &spec)
    };
    let (e1, e2) = (err(0.004), err(0.002));
    let ratio = e1 / e2;
    assert!((ratio - 4.0).abs() < 0.3, "{e1} {e2} {ratio}");
}

#[test]
fn sln_ensemble_reproduces_dephasing() {
    let spec = ohmic(0.01, 5.0);
    let grid = TimeGrid::from_t_max(0.05, 5.0).unwrap();
    let config = EnsembleConfig { trajectories: 2000, master_seed: 11, form: Form::Density };
    let stats = ensemble_average(&dephasing_model(OMEGA0), &spec, grid, config).unwrap();
    assert!(stats.healthy());
    let se = stats.stderr();
    let mut worst: f64 = 0.0;
    for k in 0..=grid.n {
        let d = stats.mean.states[k][(0, 1)] - dephasing_coherence(&spec, OMEGA0, c(0.5, 0.0), grid.time(k));
        let s = se[k][(0, 1)];
        if k > 0 {
            worst = worst.max(d.re.abs() / s.re).max(d.im.abs() / s.im);
        }
        let p = stats.mean.states[k][(0, 0)] - c(0.5, 0.0);
        let sp = se[k][(0, 0)];
        if k > 0 {
            worst = worst.max(p.re.abs() / sp.re).max(p.im.abs() / sp.im);
        }
    }
    assert!(worst < 4.5, "max z {worst}");
}
