//! Harmonic bath: discrete modes, thermal weights and the correlation kernels
//! consumed by every solver.
//!
//! A bath is a list of modes `(ω_λ, ĝ_λ)` coupled through `Σ_λ ĝ_λ (a_λ + a_λ†) X`
//! plus an inverse temperature. Its correlation function is
//!
//! ```text
//! α(τ) = α_R(τ) + i α_I(τ) = Σ_λ ĝ_λ² [coth(βω_λ/2) cos(ω_λτ) − i sin(ω_λτ)]
//! ```
//!
//! The effective (thermal) coupling is `g_λ² = ĝ_λ² coth(βω_λ/2)`, normalized so
//! that `Σ_λ g_λ² cos(ω_λτ) = α_R(τ)` exactly.

use std::f64::consts::PI;

use crate::{c, Complex64, Error, Result, TimeGrid};

/// Inverse temperature. Zero temperature is an explicit variant so that
/// `coth(βω/2)` never has to be evaluated at overflowing arguments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Beta {
    Finite(f64),
    Infinite,
}

impl Beta {
    pub fn new(beta: f64) -> Result<Self> {
        if beta == f64::INFINITY {
            Ok(Beta::Infinite)
        } else if beta > 0.0 && beta.is_finite() {
            Ok(Beta::Finite(beta))
        } else {
            Err(Error::Domain(format!("inverse temperature must be > 0, got {beta}")))
        }
    }

    pub fn value(&self) -> f64 {
        match *self {
            Beta::Finite(b) => b,
            Beta::Infinite => f64::INFINITY,
        }
    }
}

/// Mean thermal occupation `N(ω) = 1/(exp(βω) − 1)`; zero at `β = ∞`.
pub fn thermal_occupation(omega: f64, beta: Beta) -> Result<f64> {
    if !(omega > 0.0) || !omega.is_finite() {
        return Err(Error::Domain(format!("thermal occupation needs a positive mode frequency, got {omega}")));
    }
    Ok(match beta {
        Beta::Infinite => 0.0,
        Beta::Finite(b) => 1.0 / (b * omega).exp_m1(),
    })
}

/// `coth(βω/2) = 1 + 2N(ω)`.
pub fn thermal_factor(omega: f64, beta: Beta) -> Result<f64> {
    Ok(1.0 + 2.0 * thermal_occupation(omega, beta)?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mode {
    pub omega: f64,
    pub g_hat: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BathSpectrum {
    modes: Vec<Mode>,
    beta: Beta,
}

impl BathSpectrum {
    /// Validates that frequencies are strictly positive and strictly
    /// increasing and that bare couplings are finite and non-negative.
    pub fn new(modes: Vec<Mode>, beta: Beta) -> Result<Self> {
        if modes.is_empty() {
            return Err(Error::Config("bath needs at least one mode".into()));
        }
        for (i, m) in modes.iter().enumerate() {
            if !(m.omega > 0.0) || !m.omega.is_finite() {
                return Err(Error::Domain(format!("mode {i}: frequency {} is not > 0", m.omega)));
            }
            if !(m.g_hat >= 0.0) || !m.g_hat.is_finite() {
                return Err(Error::Domain(format!("mode {i}: coupling {} is not >= 0", m.g_hat)));
            }
            if i > 0 && m.omega <= modes[i - 1].omega {
                return Err(Error::Config(format!("mode frequencies must be strictly increasing (mode {i})")));
            }
        }
        Ok(Self { modes, beta })
    }

    pub fn modes(&self) -> &[Mode] {
        &self.modes
    }

    pub fn beta(&self) -> Beta {
        self.beta
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn max_frequency(&self) -> f64 {
        self.modes.last().map_or(0.0, |m| m.omega)
    }

    /// Smallest spacing between neighbouring modes; `None` for a single mode.
    pub fn min_spacing(&self) -> Option<f64> {
        self.modes.windows(2).map(|w| w[1].omega - w[0].omega).min_by(|a, b| a.total_cmp(b))
    }

    /// Poincaré recurrence time `2π/Δω_min` of the discretized bath.
    pub fn recurrence_time(&self) -> f64 {
        self.min_spacing().map_or(f64::INFINITY, |d| 2.0 * PI / d)
    }

    /// Fails when the simulated window reaches the recurrence time.
    pub fn check_window(&self, t_max: f64) -> Result<()> {
        let tr = self.recurrence_time();
        if tr <= t_max {
            return Err(Error::Config(format!("bath recurrence time 2π/Δω = {tr:.4} does not exceed t_max = {t_max}")));
        }
        Ok(())
    }

    /// Squared effective coupling `g_λ² = ĝ_λ² coth(βω_λ/2)`.
    pub fn effective_coupling_sq(&self, index: usize) -> f64 {
        let m = self.modes[index];
        // ω > 0 is a constructor invariant
        m.g_hat * m.g_hat * thermal_factor(m.omega, self.beta).unwrap()
    }

    /// Same bath with every bare coupling multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        let modes = self.modes.iter().map(|m| Mode { omega: m.omega, g_hat: m.g_hat * factor.abs() }).collect();
        Self::new(modes, self.beta)
    }

    pub fn with_beta(&self, beta: Beta) -> Self {
        Self { modes: self.modes.clone(), beta }
    }
}

/// Built-in spectral-density families `J(ω) = η ω^s exp(−ω/ω_c)` and explicit tables.
#[derive(Debug, Clone, PartialEq)]
pub enum SpectralFamily {
    /// `s = 1`.
    Ohmic {
        eta: f64,
        omega_c: f64,
    },
    SuperOhmic {
        eta: f64,
        s: f64,
        omega_c: f64,
    },
    /// Explicit `(ω, ĝ)` pairs, passed through unchanged.
    Table(Vec<(f64, f64)>),
}

impl SpectralFamily {
    pub fn density(&self, omega: f64) -> Option<f64> {
        match *self {
            SpectralFamily::Ohmic { eta, omega_c } => Some(eta * omega * (-omega / omega_c).exp()),
            SpectralFamily::SuperOhmic { eta, s, omega_c } => Some(eta * omega.powf(s) * (-omega / omega_c).exp()),
            SpectralFamily::Table(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Discretization {
    pub family: SpectralFamily,
    pub n_modes: usize,
    pub omega_max: f64,
    pub beta: Beta,
    /// Simulation window the spectrum will be paired with; checked against
    /// the recurrence time when present.
    pub t_max: Option<f64>,
}

/// Mid-point discretization `ω_λ = (λ − ½)Δω`, `ĝ_λ² = J(ω_λ)Δω` with
/// `Δω = ω_max/n_modes`.
pub fn discretize_spectral_density(d: &Discretization) -> Result<BathSpectrum> {
    let spectrum = match &d.family {
        SpectralFamily::Table(pairs) => {
            let modes = pairs.iter().map(|&(omega, g_hat)| Mode { omega, g_hat }).collect();
            BathSpectrum::new(modes, d.beta)?
        }
        family => {
            if d.n_modes == 0 {
                return Err(Error::Config("n_modes must be >= 1".into()));
            }
            if !(d.omega_max > 0.0) {
                return Err(Error::Config(format!("omega_max must be > 0, got {}", d.omega_max)));
            }
            match *family {
                SpectralFamily::Ohmic { eta, omega_c } | SpectralFamily::SuperOhmic { eta, omega_c, .. } => {
                    if !(eta >= 0.0) {
                        return Err(Error::Config(format!("eta must be >= 0, got {eta}")));
                    }
                    if !(omega_c > 0.0) {
                        return Err(Error::Config(format!("omega_c must be > 0, got {omega_c}")));
                    }
                }
                SpectralFamily::Table(_) => unreachable!(),
            }
            let dw = d.omega_max / d.n_modes as f64;
            let modes = (1..=d.n_modes)
                .map(|l| {
                    let omega = (l as f64 - 0.5) * dw;
                    let j = family.density(omega).unwrap();
                    Mode { omega, g_hat: (j * dw).max(0.0).sqrt() }
                })
                .collect();
            BathSpectrum::new(modes, d.beta)?
        }
    };
    if let Some(t_max) = d.t_max {
        spectrum.check_window(t_max)?;
    }
    Ok(spectrum)
}

/// `α(τ) = Σ_λ ĝ_λ² [coth(βω_λ/2) cos(ω_λτ) − i sin(ω_λτ)]`.
pub fn correlation_function(spec: &BathSpectrum, tau: f64) -> Complex64 {
    spec.modes
        .iter()
        .map(|m| {
            let coth = thermal_factor(m.omega, spec.beta).unwrap();
            let (s, co) = (m.omega * tau).sin_cos();
            m.g_hat * m.g_hat * c(coth * co, -s)
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub enum KernelWarning {
    /// `dt · max ω_λ` exceeds 0.5; oscillations are under-resolved.
    CoarseGrid { dt_omega_max: f64 },
}

/// Correlation data sampled at lags `τ_k = k·dt`, `k = 0..=n`.
///
/// The four hierarchy kernels pair the noise families `j = 0` (real part of the
/// correlation) and `j = 1` (imaginary part, causal):
///
/// * `k00_0s[k] = ½ Σ_λ g_λ² e^{−iω_λ τ_k}`, `k00_s0 = conj(k00_0s)`,
/// * `k11_0s[k] = α_I(τ_k) θ(τ_k)`, `k11_s0[k] = α_I(−τ_k) θ(−τ_k)`,
///
/// with `θ(0) = ½`. Only `k00_0s + k00_s0 = α_R` enters the dynamics for `j = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationKernel {
    pub dt: f64,
    pub n: usize,
    pub alpha_r: Vec<f64>,
    pub alpha_i: Vec<f64>,
    pub k00_0s: Vec<Complex64>,
    pub k11_0s: Vec<Complex64>,
    pub k00_s0: Vec<Complex64>,
    pub k11_s0: Vec<Complex64>,
    pub warnings: Vec<KernelWarning>,
}

/// Symmetric Heaviside step, `θ(0) = ½`.
pub(crate) fn heaviside(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        0.0
    } else {
        0.5
    }
}

/// Samples all kernels of `spec` on `n + 1` lags spaced by `dt`.
pub fn build_kernels(spec: &BathSpectrum, dt: f64, n: usize) -> Result<CorrelationKernel> {
    let grid = TimeGrid::new(dt, n)?;
    spec.check_window(grid.t_max())?;
    let mut k00 = vec![Complex64::new(0.0, 0.0); n + 1];
    let mut alpha = vec![Complex64::new(0.0, 0.0); n + 1];
    for (idx, m) in spec.modes.iter().enumerate() {
        let g2 = spec.effective_coupling_sq(idx);
        let ghat2 = m.g_hat * m.g_hat;
        if g2 == 0.0 {
            continue;
        }
        let coth = thermal_factor(m.omega, spec.beta)?;
        for k in 0..=n {
            let (s, co) = (m.omega * grid.time(k)).sin_cos();
            k00[k] += 0.5 * g2 * c(co, -s);
            alpha[k] += ghat2 * c(coth * co, -s);
        }
    }
    let mut kernel = CorrelationKernel::assemble(dt, n, &alpha, Some(k00));
    let dt_omega_max = dt * spec.max_frequency();
    if dt_omega_max > 0.5 {
        kernel.warnings.push(KernelWarning::CoarseGrid { dt_omega_max });
    }
    Ok(kernel)
}

impl CorrelationKernel {
    fn assemble(dt: f64, n: usize, alpha: &[Complex64], k00: Option<Vec<Complex64>>) -> Self {
        let alpha_r: Vec<f64> = alpha.iter().map(|a| a.re).collect();
        let alpha_i: Vec<f64> = alpha.iter().map(|a| a.im).collect();
        let k00_0s = k00.unwrap_or_else(|| alpha_r.iter().map(|&a| c(0.5 * a, 0.0)).collect());
        let k00_s0 = k00_0s.iter().map(|z| z.conj()).collect();
        let k11_0s = (0..=n).map(|k| c(alpha_i[k] * heaviside(k as f64 * dt), 0.0)).collect();
        // α_I is odd, so α_I(−τ) = −α_I(τ)
        let k11_s0 = (0..=n).map(|k| c(-alpha_i[k] * heaviside(-(k as f64) * dt), 0.0)).collect();
        Self { dt, n, alpha_r, alpha_i, k00_0s, k11_0s, k00_s0, k11_s0, warnings: Vec::new() }
    }

    /// Kernels for an arbitrary correlation function given on `τ ≥ 0`
    /// (extended to `τ < 0` by `α(−τ) = α(τ)*`). The `j = 0` kernels are
    /// taken real, `k00_0s = k00_s0 = ½α_R`.
    pub fn from_correlation<F>(dt: f64, n: usize, alpha: F) -> Result<Self>
    where
        F: Fn(f64) -> Complex64,
    {
        let grid = TimeGrid::new(dt, n)?;
        let samples: Vec<Complex64> = (0..=n).map(|k| alpha(grid.time(k))).collect();
        if let Some(k) = samples.iter().position(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Domain(format!("correlation function is not finite at lag {k}")));
        }
        Ok(Self::assemble(dt, n, &samples, None))
    }

    /// Real exponential kernel `α(τ) = (Γ/τ_c) e^{−|τ|/τ_c}` whose one-sided
    /// integral is `Γ`; it tends to the Markovian `Γδ(τ)` limit as `τ_c → 0`.
    pub fn exponential(gamma: f64, tau_c: f64, dt: f64, n: usize) -> Result<Self> {
        if !(gamma >= 0.0) || !(tau_c > 0.0) {
            return Err(Error::Config(format!(
                "exponential kernel needs gamma >= 0 and tau_c > 0 (got {gamma}, {tau_c})"
            )));
        }
        Self::from_correlation(dt, n, |tau| c(gamma / tau_c * (-tau / tau_c).exp(), 0.0))
    }

    pub fn grid(&self) -> TimeGrid {
        TimeGrid { dt: self.dt, n: self.n }
    }

    /// `α(τ_k)` for `k ≥ 0`.
    pub fn alpha(&self, k: usize) -> Complex64 {
        c(self.alpha_r[k], self.alpha_i[k])
    }

    pub fn is_zero(&self) -> bool {
        self.alpha_r.iter().chain(&self.alpha_i).all(|&x| x == 0.0) && self.k00_0s.iter().all(|z| z.norm_sqr() == 0.0)
    }

    /// Same kernel on the first `n + 1` lags.
    pub fn truncated(&self, n: usize) -> Result<Self> {
        if n > self.n {
            return Err(Error::Precondition(format!("kernel has {} lags, {n} requested", self.n)));
        }
        Ok(Self {
            dt: self.dt,
            n,
            alpha_r: self.alpha_r[..=n].to_vec(),
            alpha_i: self.alpha_i[..=n].to_vec(),
            k00_0s: self.k00_0s[..=n].to_vec(),
            k11_0s: self.k11_0s[..=n].to_vec(),
            k00_s0: self.k00_s0[..=n].to_vec(),
            k11_s0: self.k11_s0[..=n].to_vec(),
            warnings: self.warnings.clone(),
        })
    }

    /// Multiplies every sample by `factor` (a `g → √factor·g` rescaling).
    pub fn scaled(&self, factor: f64) -> Self {
        let s = |v: &Vec<Complex64>| v.iter().map(|z| z * factor).collect();
        Self {
            dt: self.dt,
            n: self.n,
            alpha_r: self.alpha_r.iter().map(|x| x * factor).collect(),
            alpha_i: self.alpha_i.iter().map(|x| x * factor).collect(),
            k00_0s: s(&self.k00_0s),
            k11_0s: s(&self.k11_0s),
            k00_s0: s(&self.k00_s0),
            k11_s0: s(&self.k11_s0),
            warnings: self.warnings.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ohmic(eta: f64, beta: Beta) -> BathSpectrum {
        discretize_spectral_density(&Discretization {
            family: SpectralFamily::Ohmic { eta, omega_c: 5.0 },
            n_modes: 200,
            omega_max: 50.0,
            beta,
            t_max: None,
        })
        .unwrap()
    }

    #[test]
    fn occupation_limits() {
        assert_eq!(thermal_occupation(1.0, Beta::Infinite).unwrap(), 0.0);
        assert!(thermal_occupation(800.0, Beta::Finite(1.0)).unwrap() < 1e-300);
        let expected = 1.0 / (std::f64::consts::E - 1.0);
        assert!((thermal_occupation(1.0, Beta::Finite(1.0)).unwrap() - expected).abs() < 1e-15);
        assert!(matches!(thermal_occupation(0.0, Beta::Finite(1.0)), Err(Error::Domain(_))));
        assert!(matches!(thermal_occupation(-2.0, Beta::Infinite), Err(Error::Domain(_))));
    }

    #[test]
    fn beta_parsing() {
        assert_eq!(Beta::new(f64::INFINITY).unwrap(), Beta::Infinite);
        assert!(Beta::new(0.0).is_err());
        assert!(Beta::new(f64::NAN).is_err());
    }

    #[test]
    fn table_passes_through() {
        let spec = discretize_spectral_density(&Discretization {
            family: SpectralFamily::Table(vec![(2.0, 0.3)]),
            n_modes: 1,
            omega_max: 1.0,
            beta: Beta::Infinite,
            t_max: Some(100.0),
        })
        .unwrap();
        assert_eq!(spec.modes(), &[Mode { omega: 2.0, g_hat: 0.3 }]);
    }

    #[test]
    fn zero_eta_gives_zero_couplings() {
        let spec = ohmic(0.0, Beta::Infinite);
        assert!(spec.modes().iter().all(|m| m.g_hat == 0.0));
        let k = build_kernels(&spec, 0.01, 50).unwrap();
        assert!(k.is_zero());
        assert!(k.k11_0s.iter().chain(&k.k11_s0).all(|z| *z == c(0.0, 0.0)));
    }

    #[test]
    fn mode_sum_matches_ohmic_integral() {
        let spec = ohmic(0.1, Beta::Infinite);
        let sum: f64 = spec.modes().iter().map(|m| m.g_hat * m.g_hat).sum();
        // ∫ η ω e^{−ω/ω_c} dω = η ω_c²
        assert!((sum - 2.5).abs() / 2.5 < 0.01, "sum = {sum}");
    }

    #[test]
    fn recurrence_check() {
        let d = Discretization {
            family: SpectralFamily::Ohmic { eta: 0.1, omega_c: 5.0 },
            n_modes: 10,
            omega_max: 10.0,
            beta: Beta::Infinite,
            t_max: Some(7.0),
        };
        // Δω = 1, recurrence 2π < 7
        assert!(matches!(discretize_spectral_density(&d), Err(Error::Config(_))));
        let ok = Discretization { t_max: Some(6.0), ..d };
        assert!(discretize_spectral_density(&ok).is_ok());
    }

    #[test]
    fn invalid_modes_rejected() {
        let m = |omega, g_hat| Mode { omega, g_hat };
        assert!(BathSpectrum::new(vec![m(1.0, 0.1), m(1.0, 0.1)], Beta::Infinite).is_err());
        assert!(BathSpectrum::new(vec![m(0.0, 0.1)], Beta::Infinite).is_err());
        assert!(BathSpectrum::new(vec![m(1.0, -0.1)], Beta::Infinite).is_err());
    }

    #[test]
    fn single_mode_zero_temperature() {
        let spec = BathSpectrum::new(vec![Mode { omega: 1.3, g_hat: 0.4 }], Beta::Infinite).unwrap();
        for &tau in &[0.0, 0.7, -2.1, 5.0] {
            let expected = 0.16 * Complex64::from_polar(1.0, -1.3 * tau);
            assert!((correlation_function(&spec, tau) - expected).norm() < 1e-15);
        }
        let k = build_kernels(&spec, 0.1, 20).unwrap();
        for j in 0..=20 {
            // g² = ĝ² at zero temperature, so k00 = ½ĝ² e^{−iωτ}
            let expected = 0.08 * Complex64::from_polar(1.0, -1.3 * 0.1 * j as f64);
            assert!((k.k00_0s[j] - expected).norm() < 1e-15);
        }
    }

    #[test]
    fn kernel_identities() {
        let spec = ohmic(0.1, Beta::Finite(2.0));
        let k = build_kernels(&spec, 0.01, 300).unwrap();
        for j in 0..=300 {
            let direct = correlation_function(&spec, j as f64 * 0.01);
            assert!((k.alpha(j) - direct).norm() < 1e-12);
            assert!((2.0 * k.k00_0s[j].re - k.alpha_r[j]).abs() < 1e-12);
            assert_eq!(k.k00_s0[j], k.k00_0s[j].conj());
            assert_eq!(k.k11_s0[j], c(0.0, 0.0));
        }
        let at_zero: f64 =
            spec.modes().iter().map(|m| m.g_hat * m.g_hat * thermal_factor(m.omega, spec.beta()).unwrap()).sum();
        assert!((correlation_function(&spec, 0.0).re - at_zero).abs() < 1e-12);
        assert_eq!(correlation_function(&spec, 0.0).im, 0.0);
        assert!((2.0 * k.k00_0s[0].re - at_zero).abs() < 1e-12);
        assert!(k.warnings.is_empty());
    }

    #[test]
    fn correlation_conjugate_symmetry() {
        let spec = ohmic(0.2, Beta::Finite(0.5));
        for &tau in &[0.1, 1.0, 3.3] {
            let a = correlation_function(&spec, tau);
            let b = correlation_function(&spec, -tau);
            assert!((a - b.conj()).norm() < 1e-12);
        }
    }

    #[test]
    fn alpha_r_zero_decreases_with_beta() {
        let mut last = f64::INFINITY;
        for beta in [0.1, 0.5, 1.0, 4.0, 20.0] {
            let k = build_kernels(&ohmic(0.1, Beta::Finite(beta)), 0.01, 2).unwrap();
            assert!(k.alpha_r[0] <= last);
            last = k.alpha_r[0];
        }
        let k = build_kernels(&ohmic(0.1, Beta::Infinite), 0.01, 2).unwrap();
        assert!(k.alpha_r[0] <= last);
    }

    #[test]
    fn coarse_grid_warns() {
        let k = build_kernels(&ohmic(0.1, Beta::Infinite), 0.05, 10).unwrap();
        assert!(matches!(k.warnings[..], [KernelWarning::CoarseGrid { .. }]));
    }

    #[test]
    fn exponential_kernel_is_real_and_normalized() {
        let k = CorrelationKernel::exponential(2.0, 0.1, 0.001, 2000).unwrap();
        assert!(k.alpha_i.iter().all(|&x| x == 0.0));
        let integral = crate::quadrature::trapezoid(&k.alpha_r, k.dt);
        assert!((integral - 2.0).abs() < 1e-3);
    }
}
