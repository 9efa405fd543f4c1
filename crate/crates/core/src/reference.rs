//! Reference solvers: the time-convolved second-order master equation, its
//! time-local (TCL2) counterpart, the Markovian Lindblad limit and a
//! brute-force propagation of system plus a few truncated bath oscillators.
//!
//! The perturbative solvers work in the interaction picture with the exact
//! rotation `X(t) = e^{iH_S t} X e^{−iH_S t}` and return Schrödinger-picture
//! series.

use crate::bath::{thermal_occupation, BathSpectrum, Beta, CorrelationKernel};
use crate::liouville::{flatten, hermitian_eigen, rotate_coupling, unflatten, SystemModel};
use crate::series::DensityMatrixSeries;
use crate::{c, CMatrix, Complex64, Error, Result, TimeGrid};

pub(crate) fn coupling_history(model: &SystemModel, grid: TimeGrid) -> Vec<CMatrix> {
    (0..=grid.n).map(|k| rotate_coupling(model, grid.time(k))).collect()
}

pub(crate) fn schrodinger_series(
    model: &SystemModel,
    grid: TimeGrid,
    interaction: Vec<CMatrix>,
) -> Result<DensityMatrixSeries> {
    let states = interaction.iter().enumerate().map(|(k, r)| model.to_schrodinger(r, grid.time(k))).collect();
    DensityMatrixSeries::new(grid, states)
}

/// Matrix of a linear map on `N×N` matrices in the flattened representation.
pub(crate) fn linear_map_matrix<F: Fn(&CMatrix) -> CMatrix>(n: usize, f: F) -> CMatrix {
    let mut out = CMatrix::zeros(n * n, n * n);
    for col in 0..n * n {
        let mut basis = CMatrix::zeros(n, n);
        basis.as_mut_slice()[col] = c(1.0, 0.0);
        out.set_column(col, &flatten(&f(&basis)));
    }
    out
}

/// Solves `(I − A) x = b` for flattened matrices.
pub(crate) fn implicit_solve(a: &CMatrix, b: &CMatrix, step: usize) -> Result<CMatrix> {
    let n2 = a.nrows();
    let system = CMatrix::identity(n2, n2) - a;
    let x = system.lu().solve(&flatten(b)).ok_or(Error::NonFinite { step })?;
    unflatten(&x)
}

fn check_finite(m: &CMatrix, step: usize) -> Result<()> {
    if m.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { step })
    }
}

/// Time-convolved second-order master equation,
///
/// ```text
/// dρ/dt = ∫₀ᵗ ds [−α(t−s) X_t X_s ρ(s) − α*(t−s) ρ(s) X_s X_t
///                 + α(t−s) X_s ρ(s) X_t + α*(t−s) X_t ρ(s) X_s]
/// ```
///
/// with trapezoid memory quadrature and implicit trapezoid time stepping.
pub fn solve_convolved(model: &SystemModel, kernel: &CorrelationKernel) -> Result<DensityMatrixSeries> {
    let grid = kernel.grid();
    let dt = grid.dt;
    let xs = coupling_history(model, grid);
    let n = model.dim();
    // The integrand collapses to [X_t, B − A] with
    // A = Σ w α X_s ρ_s and B = Σ w α* ρ_s X_s.
    let history = |k: usize, rho: &[CMatrix], include_end: bool| -> CMatrix {
        let mut a = CMatrix::zeros(n, n);
        let mut b = CMatrix::zeros(n, n);
        let last = if include_end { k + 1 } else { k };
        for m in 0..last {
            let w = crate::quadrature::weight(m, k, dt);
            let alpha = kernel.alpha(k - m) * w;
            a += &xs[m] * &rho[m] * alpha;
            b += &rho[m] * &xs[m] * alpha.conj();
        }
        let diff = b - a;
        &xs[k] * &diff - diff * &xs[k]
    };
    let alpha0 = kernel.alpha(0);
    let mut rho = vec![model.rho0().clone()];
    let mut f_prev = CMatrix::zeros(n, n);
    for k in 0..grid.n {
        let k1 = k + 1;
        let x = &xs[k1];
        let g = history(k1, &rho, false);
        let endpoint = linear_map_matrix(n, |r| {
            let diff = r * x * alpha0.conj() - x * r * alpha0;
            (x * &diff - diff * x) * c(0.25 * dt * dt, 0.0)
        });
        let rhs = &rho[k] + (&f_prev + &g) * c(0.5 * dt, 0.0);
        let next = implicit_solve(&endpoint, &rhs, k1)?;
        check_finite(&next, k1)?;
        rho.push(next);
        f_prev = history(k1, &rho, true);
    }
    schrodinger_series(model, grid, rho)
}

/// Time-local second-order master equation (TCL2),
///
/// ```text
/// dρ/dt = −X_t B ρ − ρ B† X_t + B ρ X_t + X_t ρ B†,   B(t) = ∫₀ᵗ α(t−s) X_s ds
/// ```
///
/// with trapezoid quadrature for `B` and Crank–Nicolson stepping.
pub fn solve_tcl2(model: &SystemModel, kernel: &CorrelationKernel) -> Result<DensityMatrixSeries> {
    let grid = kernel.grid();
    let dt = grid.dt;
    let n = model.dim();
    let xs = coupling_history(model, grid);
    let generator = |k: usize| -> CMatrix {
        let mut b = CMatrix::zeros(n, n);
        for m in 0..=k {
            b += &xs[m] * (kernel.alpha(k - m) * crate::quadrature::weight(m, k, dt));
        }
        let bd = b.adjoint();
        let x = &xs[k];
        linear_map_matrix(n, |r| -(x * &b * r) - r * &bd * x + &b * r * x + x * r * &bd)
    };
    let mut rho = vec![model.rho0().clone()];
    let mut g_prev = generator(0);
    for k in 0..grid.n {
        let g_next = generator(k + 1);
        let current = flatten(&rho[k]);
        let rhs = &current + (&g_prev * &current) * c(0.5 * dt, 0.0);
        let next = implicit_solve(&(&g_next * c(0.5 * dt, 0.0)), &unflatten(&rhs)?, k + 1)?;
        check_finite(&next, k + 1)?;
        rho.push(next);
        g_prev = g_next;
    }
    schrodinger_series(model, grid, rho)
}

/// Markovian limit `dρ/dt = −Γ(X_t X_t ρ + ρ X_t X_t − 2 X_t ρ X_t)` in the
/// interaction picture, integrated with RK4 and exact `X(t)` at every stage.
pub fn solve_lindblad(model: &SystemModel, gamma: f64, grid: TimeGrid) -> Result<DensityMatrixSeries> {
    if !(gamma >= 0.0) || !gamma.is_finite() {
        return Err(Error::Config(format!("Lindblad rate must be >= 0, got {gamma}")));
    }
    let dt = grid.dt;
    let rhs = |t: f64, r: &CMatrix| -> CMatrix {
        let x = rotate_coupling(model, t);
        let xx = &x * &x;
        (&xx * r + r * &xx - (&x * r * &x) * c(2.0, 0.0)) * c(-gamma, 0.0)
    };
    let mut rho = vec![model.rho0().clone()];
    for k in 0..grid.n {
        let t = grid.time(k);
        let r = &rho[k];
        let k1 = rhs(t, r);
        let k2 = rhs(t + 0.5 * dt, &(r + &k1 * c(0.5 * dt, 0.0)));
        let k3 = rhs(t + 0.5 * dt, &(r + &k2 * c(0.5 * dt, 0.0)));
        let k4 = rhs(t + dt, &(r + &k3 * c(dt, 0.0)));
        let next = r + (k1 + (k2 + k3) * c(2.0, 0.0) + k4) * c(dt / 6.0, 0.0);
        check_finite(&next, k + 1)?;
        rho.push(next);
    }
    schrodinger_series(model, grid, rho)
}

/// Largest product-space dimension the oracle accepts.
pub const ORACLE_MAX_DIM: usize = 4096;
/// Largest number of bath modes the oracle accepts.
pub const ORACLE_MAX_MODES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleConfig {
    /// Number of Fock levels kept per mode (`0..fock_cutoff`).
    pub fock_cutoff: usize,
    /// Rerun with one more level per mode and compare.
    pub check_convergence: bool,
    /// Largest entrywise change under `cutoff + 1` still counted as converged.
    pub tolerance: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self { fock_cutoff: 6, check_convergence: true, tolerance: 1e-6 }
    }
}

#[derive(Debug, Clone)]
pub struct OracleResult {
    pub series: DensityMatrixSeries,
    /// Max entrywise change when the cutoff is raised by one.
    pub cutoff_change: Option<f64>,
    pub converged: bool,
    pub dimension: usize,
    /// Largest deviation of any propagated state's norm from its initial norm.
    pub norm_drift: f64,
}

struct ProductSpace<'a> {
    model: &'a SystemModel,
    omegas: Vec<f64>,
    couplings: Vec<f64>,
    cutoff: usize,
    bath_dim: usize,
    /// Stride of mode `λ` in the bath index.
    strides: Vec<usize>,
}

impl<'a> ProductSpace<'a> {
    fn new(model: &'a SystemModel, spec: &BathSpectrum, cutoff: usize) -> Self {
        let omegas: Vec<f64> = spec.modes().iter().map(|m| m.omega).collect();
        let couplings = spec.modes().iter().map(|m| m.g_hat).collect();
        let mut strides = vec![1; omegas.len()];
        for l in (0..omegas.len().saturating_sub(1)).rev() {
            strides[l] = strides[l + 1] * cutoff;
        }
        let bath_dim = cutoff.pow(omegas.len() as u32);
        Self { model, omegas, couplings, cutoff, bath_dim, strides }
    }

    fn dim(&self) -> usize {
        self.model.dim() * self.bath_dim
    }

    fn occupation(&self, b: usize, l: usize) -> usize {
        (b / self.strides[l]) % self.cutoff
    }

    /// `H ψ` for `H = H_S ⊗ 1 + 1 ⊗ Σ ω a†a + X ⊗ Σ ĝ (a + a†)`.
    fn apply(&self, psi: &[Complex64], out: &mut [Complex64]) {
        let n = self.model.dim();
        let db = self.bath_dim;
        let hs = self.model.h_s();
        let x = self.model.x();
        out.iter_mut().for_each(|z| *z = c(0.0, 0.0));
        // displacement Σ ĝ (a + a†) acting on the bath factor, per system index
        let mut disp = vec![c(0.0, 0.0); n * db];
        for s in 0..n {
            let base = s * db;
            for b in 0..db {
                let amp = psi[base + b];
                if amp == c(0.0, 0.0) {
                    continue;
                }
                let mut energy = 0.0;
                for l in 0..self.omegas.len() {
                    let occ = self.occupation(b, l);
                    energy += self.omegas[l] * occ as f64;
                    let g = self.couplings[l];
                    if occ > 0 {
                        disp[base + b - self.strides[l]] += amp * (g * (occ as f64).sqrt());
                    }
                    if occ + 1 < self.cutoff {
                        disp[base + b + self.strides[l]] += amp * (g * ((occ + 1) as f64).sqrt());
                    }
                }
                out[base + b] += amp * energy;
            }
        }
        for r in 0..n {
            for s in 0..n {
                let h = hs[(r, s)];
                let xv = x[(r, s)];
                if h == c(0.0, 0.0) && xv == c(0.0, 0.0) {
                    continue;
                }
                for b in 0..db {
                    out[r * db + b] += h * psi[s * db + b] + xv * disp[s * db + b];
                }
            }
        }
    }

    fn norm_bound(&self) -> f64 {
        let spectral = crate::liouville::spectral_norm;
        let top = (self.cutoff - 1) as f64;
        let bath: f64 = self.omegas.iter().map(|w| w * top).sum();
        let coupling: f64 = self.couplings.iter().map(|g| 2.0 * g * top.sqrt()).sum();
        spectral(self.model.h_s()) + bath + spectral(self.model.x()) * coupling
    }

    /// `e^{−iHh} ψ` by a truncated Taylor series (`‖H‖h ≤ 1`).
    fn step(&self, psi: &mut [Complex64], h: f64, scratch: &mut [Complex64]) {
        let mut term = psi.to_vec();
        let norm0 = psi.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        for k in 1..60 {
            self.apply(&term, scratch);
            let factor = c(0.0, -h / k as f64);
            for (t, s) in term.iter_mut().zip(scratch.iter()) {
                *t = s * factor;
            }
            let tn = term.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            for (p, t) in psi.iter_mut().zip(&term) {
                *p += t;
            }
            if tn <= 1e-17 * norm0.max(1e-300) {
                break;
            }
        }
    }

    /// Reduced state `tr_B |ψ⟩⟨ψ|`.
    fn reduced(&self, psi: &[Complex64]) -> CMatrix {
        let n = self.model.dim();
        let db = self.bath_dim;
        CMatrix::from_fn(n, n, |r, s| (0..db).map(|b| psi[r * db + b] * psi[s * db + b].conj()).sum())
    }

    fn propagate(&self, initial: Vec<(f64, Vec<Complex64>)>, grid: TimeGrid) -> (Vec<CMatrix>, f64) {
        let n = self.model.dim();
        let substeps = (grid.dt * self.norm_bound()).ceil().max(1.0) as usize;
        let h = grid.dt / substeps as f64;
        let mut out = vec![CMatrix::zeros(n, n); grid.n + 1];
        let mut drift = 0.0f64;
        let mut scratch = vec![c(0.0, 0.0); self.dim()];
        for (weight, mut psi) in initial {
            let norm0: f64 = psi.iter().map(|z| z.norm_sqr()).sum();
            out[0] += self.reduced(&psi) * c(weight, 0.0);
            for k in 1..=grid.n {
                for _ in 0..substeps {
                    self.step(&mut psi, h, &mut scratch);
                }
                out[k] += self.reduced(&psi) * c(weight, 0.0);
            }
            let norm: f64 = psi.iter().map(|z| z.norm_sqr()).sum();
            drift = drift.max((norm - norm0).abs());
        }
        (out, drift)
    }
}

/// Fock configurations with their thermal probabilities (truncated and
/// renormalized to the kept levels), dropping those below `1e-12`.
fn thermal_configurations(space: &ProductSpace<'_>, beta: Beta) -> Result<Vec<(f64, usize)>> {
    let mut per_mode = Vec::with_capacity(space.omegas.len());
    for &w in &space.omegas {
        let nbar = thermal_occupation(w, beta)?;
        let ratio = if nbar == 0.0 { 0.0 } else { nbar / (1.0 + nbar) };
        let weights: Vec<f64> = (0..space.cutoff).map(|k| ratio.powi(k as i32)).collect();
        let total: f64 = weights.iter().sum();
        per_mode.push(weights.into_iter().map(|x| x / total).collect::<Vec<_>>());
    }
    let mut configs = Vec::new();
    for b in 0..space.bath_dim {
        let p: f64 = (0..space.omegas.len()).map(|l| per_mode[l][space.occupation(b, l)]).product();
        if p >= 1e-12 {
            configs.push((p, b));
        }
    }
    let total: f64 = configs.iter().map(|(p, _)| p).sum();
    Ok(configs.into_iter().map(|(p, b)| (p / total, b)).collect())
}

fn run_oracle(
    model: &SystemModel,
    spec: &BathSpectrum,
    grid: TimeGrid,
    cutoff: usize,
) -> Result<(Vec<CMatrix>, f64, usize)> {
    let space = ProductSpace::new(model, spec, cutoff);
    let dim = space.dim();
    let (probs, vecs) = hermitian_eigen(model.rho0());
    let configs = match spec.beta() {
        Beta::Infinite => vec![(1.0, 0usize)],
        beta => thermal_configurations(&space, beta)?,
    };
    let mut initial = Vec::new();
    for (i, &p) in probs.iter().enumerate() {
        if p < 1e-14 {
            continue;
        }
        for &(q, b) in &configs {
            let mut psi = vec![c(0.0, 0.0); dim];
            for s in 0..model.dim() {
                psi[s * space.bath_dim + b] = vecs[(s, i)];
            }
            initial.push((p * q, psi));
        }
    }
    if initial.len() * dim > 64 * ORACLE_MAX_DIM {
        return Err(Error::Config(format!(
            "thermal oracle needs {} propagations of dimension {dim}; lower the cutoff or temperature",
            initial.len()
        )));
    }
    let (states, drift) = space.propagate(initial, grid);
    Ok((states, drift, dim))
}

/// Propagates `ρ₀ ⊗ ρ_B` under the full system-plus-modes Hamiltonian in a
/// truncated Fock space and traces out the bath. A thermal bath is handled as
/// a mixture of Fock product states.
pub fn exact_oracle(
    model: &SystemModel,
    spec: &BathSpectrum,
    grid: TimeGrid,
    cfg: OracleConfig,
) -> Result<OracleResult> {
    if spec.len() > ORACLE_MAX_MODES {
        return Err(Error::Config(format!("oracle supports at most {ORACLE_MAX_MODES} modes, got {}", spec.len())));
    }
    if cfg.fock_cutoff < 2 {
        return Err(Error::Config(format!("fock_cutoff must be >= 2, got {}", cfg.fock_cutoff)));
    }
    let check_dim = |cutoff: usize| -> Result<()> {
        let dim = model.dim() * cutoff.pow(spec.len() as u32);
        if dim > ORACLE_MAX_DIM {
            return Err(Error::Config(format!("oracle dimension {dim} exceeds the limit of {ORACLE_MAX_DIM}")));
        }
        Ok(())
    };
    check_dim(cfg.fock_cutoff)?;
    let (states, drift, dimension) = run_oracle(model, spec, grid, cfg.fock_cutoff)?;
    let mut cutoff_change = None;
    let mut converged = true;
    if cfg.check_convergence {
        check_dim(cfg.fock_cutoff + 1)?;
        let (finer, _, _) = run_oracle(model, spec, grid, cfg.fock_cutoff + 1)?;
        let change = states
            .iter()
            .zip(&finer)
            .flat_map(|(a, b)| (a - b).iter().map(|z| z.norm()).collect::<Vec<_>>())
            .fold(0.0, f64::max);
        converged = change <= cfg.tolerance;
        cutoff_change = Some(change);
    }
    Ok(OracleResult {
        series: DensityMatrixSeries::new(grid, states)?,
        cutoff_change,
        converged,
        dimension,
        norm_drift: drift,
    })
}
