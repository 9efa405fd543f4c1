#![allow(dead_code)]

use sln_me::bath::{thermal_factor, BathSpectrum};
use sln_me::liouville::SystemModel;
use sln_me::{CMatrix, Complex64};

pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

pub fn sigma_x() -> CMatrix {
    CMatrix::from_row_slice(2, 2, &[c(0.0, 0.0), c(1.0, 0.0), c(1.0, 0.0), c(0.0, 0.0)])
}

pub fn sigma_z() -> CMatrix {
    CMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(-1.0, 0.0)])
}

pub fn plus_state() -> CMatrix {
    CMatrix::from_element(2, 2, c(0.5, 0.0))
}

/// `H = ½ω₀σ_z`, `X = σ_z`, starting in `|+⟩`.
pub fn dephasing_model(omega0: f64) -> SystemModel {
    SystemModel::new(sigma_z() * c(0.5 * omega0, 0.0), sigma_z(), plus_state()).unwrap()
}

/// Exact coherence of the pure-dephasing model for a discrete bath:
/// `ρ₀₁(t) = ρ₀₁(0) e^{−iω₀t} exp(−Σ 4ĝ² coth(βω/2)(1 − cos ωt)/ω²)`.
pub fn dephasing_coherence(spec: &BathSpectrum, omega0: f64, rho01: Complex64, t: f64) -> Complex64 {
    let decay: f64 = spec
        .modes()
        .iter()
        .map(|m| {
            let coth = thermal_factor(m.omega, spec.beta()).unwrap();
            4.0 * m.g_hat * m.g_hat * coth * (1.0 - (m.omega * t).cos()) / (m.omega * m.omega)
        })
        .sum();
    rho01 * Complex64::from_polar((-decay).exp(), -omega0 * t)
}

/// Bisection root of a continuous function with a sign change on `[a, b]`.
pub fn bisect<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64) -> f64 {
    let mut fa = f(a);
    assert!(fa * f(b) <= 0.0, "no sign change");
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        let fm = f(m);
        if fa * fm <= 0.0 {
            b = m;
        } else {
            a = m;
            fa = fm;
        }
    }
    0.5 * (a + b)
}

/// Decay rate of `|ρ₀₁|` between two grid indices.
pub fn coherence_rate(states: &[CMatrix], dt: f64, k0: usize, k1: usize) -> f64 {
    -(states[k1][(0, 1)].norm().ln() - states[k0][(0, 1)].norm().ln()) / ((k1 - k0) as f64 * dt)
}
