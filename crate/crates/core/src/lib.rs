//! Stochastic Liouville-von Neumann (SLN) trajectories for a system linearly
//! coupled to a harmonic bath, the hierarchically structured master equation
//! obtained by averaging them analytically, and the reference solvers used to
//! cross-check both.
//!
//! Conventions used throughout the crate:
//!
//! * `ħ = k_B = 1`.
//! * Matrices are `nalgebra::DMatrix<Complex64>`; Liouville-space vectors are
//!   column-major flattenings, which is also nalgebra's storage order.
//! * Time grids are uniform, `t_k = k·dt` for `k = 0..=n`.
//! * The bath correlation function is
//!   `α(τ) = Σ_λ ĝ_λ² [coth(βω_λ/2) cos(ω_λτ) − i sin(ω_λτ)]`.
//!
//! Module map:
//!
//! | module      | contents |
//! |-------------|----------|
//! | [`bath`]      | spectral densities, mode discretization, correlation kernels |
//! | [`noise`]     | correlated complex noise pair (ξ, ν) and its statistics |
//! | [`liouville`] | system model, flattening, superoperators |
//! | [`sln`]       | single trajectories and ensemble averages |
//! | [`hierarchy`] | truncated hierarchical master equation and term weights |
//! | [`reference`] | convolved, TCL2, Lindblad and brute-force oracle solvers |
//! | [`series`]    | density-matrix time series and their CSV format |

pub mod bath;
pub mod error;
pub mod hierarchy;
pub mod liouville;
pub mod noise;
pub mod reference;
pub mod series;
pub mod sln;

mod quadrature;

pub use error::{Error, Result};
pub use num_complex::Complex64;

/// Dense complex matrix used for system operators and superoperators.
pub type CMatrix = nalgebra::DMatrix<Complex64>;
/// Dense complex vector (flattened matrices, state vectors).
pub type CVector = nalgebra::DVector<Complex64>;

/// Uniform time grid `t_k = k·dt`, `k = 0..=n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub dt: f64,
    pub n: usize,
}

impl TimeGrid {
    pub fn new(dt: f64, n: usize) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::Config(format!("grid step dt must be positive, got {dt}")));
        }
        Ok(Self { dt, n })
    }

    /// Grid covering `[0, t_max]`; `t_max` must be an integer multiple of `dt`.
    pub fn from_t_max(dt: f64, t_max: f64) -> Result<Self> {
        if !(t_max >= 0.0) {
            return Err(Error::Config(format!("t_max must be non-negative, got {t_max}")));
        }
        let steps = t_max / dt;
        let n = steps.round();
        if (steps - n).abs() > 1e-9 * steps.max(1.0) {
            return Err(Error::Config(format!("t_max = {t_max} is not an integer multiple of dt = {dt}")));
        }
        Self::new(dt, n as usize)
    }

    #[inline]
    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    pub fn t_max(&self) -> f64 {
        self.time(self.n)
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.n).map(|k| self.time(k)).collect()
    }
}

pub(crate) const I: Complex64 = Complex64::new(0.0, 1.0);

#[inline]
pub(crate) fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}
