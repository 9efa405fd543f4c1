//! SLN trajectories and their ensemble average.
//!
//! A trajectory evolves the stochastic projector `P` in the Schrödinger picture,
//!
//! ```text
//! dP/dt = −i[H_S, P] + i ξ(t) [X, P] − i ν(t) {X, P}
//! ```
//!
//! with the noise pair of [`crate::noise`]. Under that module's normalization,
//! `M[ξ(t)ν(t′)] = −iα_I(t−t′)θ(t−t′)`, the anticommutator coefficient `−iν`
//! is the one whose noise average reproduces the dissipative half of the
//! second-order memory kernel. The paired-wavevector form evolves
//!
//! ```text
//! dψ¹/dt = (−iH_S + iξX − iνX) ψ¹,   dψ²/dt = (−iH_S + iξ*X + iν*X) ψ²
//! ```
//!
//! and reconstructs `P = |ψ¹⟩⟨ψ²|`. Both use classical RK4 with the noise taken
//! exactly at the stage times.

use rayon::prelude::*;

use crate::bath::BathSpectrum;
use crate::liouville::{hermiticity_deviation, SystemModel};
use crate::noise::{NoiseFactors, NoisePath, NoiseTable};
use crate::series::DensityMatrixSeries;
use crate::{c, CMatrix, CVector, Complex64, Error, Result, TimeGrid, I};

/// Fraction of divergent trajectories above which an ensemble is unhealthy.
pub const DIVERGENCE_TOLERANCE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Form {
    Density,
    Pair,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub grid: TimeGrid,
    /// `P` at every grid point; shorter than `grid.n + 1` when divergent.
    pub states: Vec<CMatrix>,
    pub seed: u64,
    pub stream: u64,
    pub divergent: bool,
}

/// Left and right generators at one instant: `dP/dt = L P + P R`.
fn generators(model: &SystemModel, xi: Complex64, nu: Complex64) -> (CMatrix, CMatrix) {
    let h = model.h_s();
    let x = model.x();
    let left = h * (-I) + x * (I * xi - I * nu);
    let right = h * I + x * (-I * xi - I * nu);
    (left, right)
}

fn check_table(grid: TimeGrid, table: &NoiseTable) -> Result<()> {
    if table.len() < 2 * grid.n + 1 || (2.0 * table.step - grid.dt).abs() > 1e-12 * grid.dt {
        return Err(Error::GridMismatch(format!(
            "noise table ({} nodes, step {}) does not cover grid (dt={}, n={})",
            table.len(),
            table.step,
            grid.dt,
            grid.n
        )));
    }
    Ok(())
}

fn finite(m: &CMatrix) -> bool {
    m.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

/// RK4 for `dP/dt = L(t) P + P R(t)` with generators on the half-step nodes.
fn rk4_density(model: &SystemModel, grid: TimeGrid, table: &NoiseTable) -> (Vec<CMatrix>, bool) {
    let dt = grid.dt;
    let mut states = Vec::with_capacity(grid.n + 1);
    let mut p = model.rho0().clone();
    states.push(p.clone());
    let gens: Vec<(CMatrix, CMatrix)> = (0..=2 * grid.n).map(|m| generators(model, table.xi[m], table.nu[m])).collect();
    let f = |g: &(CMatrix, CMatrix), p: &CMatrix| &g.0 * p + p * &g.1;
    for k in 0..grid.n {
        let (g0, gh, g1) = (&gens[2 * k], &gens[2 * k + 1], &gens[2 * k + 2]);
        let k1 = f(g0, &p);
        let k2 = f(gh, &(&p + &k1 * c(0.5 * dt, 0.0)));
        let k3 = f(gh, &(&p + &k2 * c(0.5 * dt, 0.0)));
        let k4 = f(g1, &(&p + &k3 * c(dt, 0.0)));
        p += (k1 + (k2 + k3) * c(2.0, 0.0) + k4) * c(dt / 6.0, 0.0);
        if !finite(&p) {
            return (states, true);
        }
        states.push(p.clone());
    }
    (states, false)
}

fn rk4_vector(grid: TimeGrid, gens: &[CMatrix], psi0: &CVector) -> (Vec<CVector>, bool) {
    let dt = grid.dt;
    let mut psi = psi0.clone();
    let mut out = vec![psi.clone()];
    for k in 0..grid.n {
        let (g0, gh, g1) = (&gens[2 * k], &gens[2 * k + 1], &gens[2 * k + 2]);
        let k1 = g0 * &psi;
        let k2 = gh * (&psi + &k1 * c(0.5 * dt, 0.0));
        let k3 = gh * (&psi + &k2 * c(0.5 * dt, 0.0));
        let k4 = g1 * (&psi + &k3 * c(dt, 0.0));
        psi += (k1 + (k2 + k3) * c(2.0, 0.0) + k4) * c(dt / 6.0, 0.0);
        if psi.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return (out, true);
        }
        out.push(psi.clone());
    }
    (out, false)
}

/// Dominant eigenvector of `rho0` if it is a pure state.
fn pure_state(model: &SystemModel) -> Result<CVector> {
    let rho = model.rho0();
    let purity = (rho * rho).trace().re;
    if (purity - 1.0).abs() > 1e-10 {
        return Err(Error::Precondition(format!(
            "paired-wavevector form needs a pure initial state (purity {purity})"
        )));
    }
    let (_, vecs) = crate::liouville::hermitian_eigen(rho);
    let n = model.dim();
    Ok(vecs.column(n - 1).into_owned())
}

/// Density form on noise pre-sampled at the half-step nodes of `grid`.
pub fn integrate_density_table(model: &SystemModel, grid: TimeGrid, table: &NoiseTable) -> Result<Trajectory> {
    check_table(grid, table)?;
    let (states, divergent) = rk4_density(model, grid, table);
    Ok(Trajectory { grid, states, seed: 0, stream: 0, divergent })
}

/// Paired-wavevector form on noise pre-sampled at the half-step nodes.
pub fn integrate_pair_table(model: &SystemModel, grid: TimeGrid, table: &NoiseTable) -> Result<Trajectory> {
    check_table(grid, table)?;
    let psi0 = pure_state(model)?;
    let h = model.h_s();
    let x = model.x();
    let (g1, g2): (Vec<CMatrix>, Vec<CMatrix>) = (0..=2 * grid.n)
        .map(|m| {
            let (xi, nu) = (table.xi[m], table.nu[m]);
            (h * (-I) + x * (I * xi - I * nu), h * (-I) + x * (I * xi.conj() + I * nu.conj()))
        })
        .unzip();
    let (psi1, d1) = rk4_vector(grid, &g1, &psi0);
    let (psi2, d2) = rk4_vector(grid, &g2, &psi0);
    let states: Vec<CMatrix> = psi1.iter().zip(&psi2).map(|(a, b)| a * b.adjoint()).collect();
    Ok(Trajectory { grid, states, seed: 0, stream: 0, divergent: d1 || d2 })
}

fn with_origin(mut traj: Trajectory, path: &NoisePath<'_>) -> Trajectory {
    traj.seed = path.amplitudes().seed;
    traj.stream = path.amplitudes().stream;
    traj
}

/// Integrates one trajectory of the density form along `path`.
pub fn integrate_density(model: &SystemModel, path: &NoisePath<'_>, grid: TimeGrid) -> Result<Trajectory> {
    let table = path.tabulate();
    Ok(with_origin(integrate_density_table(model, grid, &table)?, path))
}

/// Integrates one trajectory of the paired-wavevector form along `path`.
pub fn integrate_pair(model: &SystemModel, path: &NoisePath<'_>, grid: TimeGrid) -> Result<Trajectory> {
    let table = path.tabulate();
    Ok(with_origin(integrate_pair_table(model, grid, &table)?, path))
}

/// Trajectory `stream` of `master_seed` in the requested form.
pub fn sample_trajectory(
    model: &SystemModel,
    factors: &NoiseFactors,
    master_seed: u64,
    stream: u64,
    form: Form,
) -> Result<Trajectory> {
    let path = NoisePath::sample(factors, master_seed, stream);
    let grid = factors.grid();
    match form {
        Form::Density => integrate_density(model, &path, grid),
        Form::Pair => integrate_pair(model, &path, grid),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnsembleConfig {
    pub trajectories: usize,
    pub master_seed: u64,
    pub form: Form,
}

#[derive(Debug, Clone)]
pub struct EnsembleStats {
    /// Mean with per-entry standard errors attached.
    pub mean: DensityMatrixSeries,
    pub trace_dev: Vec<f64>,
    pub hermiticity_dev: Vec<f64>,
    pub trajectories: usize,
    pub divergent: usize,
    pub master_seed: u64,
}

impl EnsembleStats {
    pub fn stderr(&self) -> &[CMatrix] {
        self.mean.stderr.as_deref().unwrap_or(&[])
    }

    pub fn healthy(&self) -> bool {
        (self.divergent as f64) <= DIVERGENCE_TOLERANCE * self.trajectories as f64 && self.divergent < self.trajectories
    }

    /// Median over times and entries of the standard error of the real and
    /// imaginary parts.
    pub fn median_stderr(&self) -> f64 {
        let mut v: Vec<f64> = self
            .stderr()
            .iter()
            .flat_map(|m| m.iter().flat_map(|z| [z.re, z.im]).collect::<Vec<_>>())
            .filter(|x| *x > 0.0)
            .collect();
        if v.is_empty() {
            return 0.0;
        }
        v.sort_by(f64::total_cmp);
        v[v.len() / 2]
    }
}

/// Running mean and sum of squared deviations (real and imaginary parts
/// separately) of every entry at every time.
#[derive(Debug, Clone)]
struct Accumulator {
    count: usize,
    divergent: usize,
    mean: Vec<CMatrix>,
    m2: Vec<CMatrix>,
}

impl Accumulator {
    fn new(steps: usize, dim: usize) -> Self {
        Self {
            count: 0,
            divergent: 0,
            mean: vec![CMatrix::zeros(dim, dim); steps],
            m2: vec![CMatrix::zeros(dim, dim); steps],
        }
    }

    fn push(&mut self, states: &[CMatrix]) {
        self.count += 1;
        let n = self.count as f64;
        for ((mean, m2), x) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(states) {
            for ((mu, q), v) in mean.iter_mut().zip(m2.iter_mut()).zip(x.iter()) {
                let d = v - *mu;
                *mu += d / n;
                let d2 = v - *mu;
                q.re += d.re * d2.re;
                q.im += d.im * d2.im;
            }
        }
    }

    /// Chan et al. pairwise merge.
    fn merge(mut self, other: &Accumulator) -> Self {
        self.divergent += other.divergent;
        if other.count == 0 {
            return self;
        }
        if self.count == 0 {
            let divergent = self.divergent;
            let mut out = other.clone();
            out.divergent = divergent;
            return out;
        }
        let (na, nb) = (self.count as f64, other.count as f64);
        let n = na + nb;
        for k in 0..self.mean.len() {
            for (idx, mu) in self.mean[k].iter_mut().enumerate() {
                let mb = other.mean[k].as_slice()[idx];
                let d = mb - *mu;
                *mu += d * (nb / n);
                let q = &mut self.m2[k].as_mut_slice()[idx];
                let qb = other.m2[k].as_slice()[idx];
                q.re += qb.re + d.re * d.re * na * nb / n;
                q.im += qb.im + d.im * d.im * na * nb / n;
            }
        }
        self.count += other.count;
        self
    }
}

const CHUNK: usize = 64;

/// Averages `config.trajectories` independent trajectories. Trajectory `i`
/// uses stream `i` of the master seed; trajectories are grouped into fixed
/// chunks that are merged in index order, so the result does not depend on
/// the number of worker threads.
pub fn ensemble_average(
    model: &SystemModel,
    spec: &BathSpectrum,
    grid: TimeGrid,
    config: EnsembleConfig,
) -> Result<EnsembleStats> {
    if config.trajectories == 0 {
        return Err(Error::Config("trajectory count must be at least 1".into()));
    }
    if config.form == Form::Pair {
        pure_state(model)?;
    }
    let factors = NoiseFactors::new(spec, grid)?;
    let steps = grid.n + 1;
    let dim = model.dim();
    let chunks = config.trajectories.div_ceil(CHUNK);
    let partial: Vec<Result<Accumulator>> = (0..chunks)
        .into_par_iter()
        .map(|ch| {
            let mut acc = Accumulator::new(steps, dim);
            for idx in ch * CHUNK..((ch + 1) * CHUNK).min(config.trajectories) {
                let traj = sample_trajectory(model, &factors, config.master_seed, idx as u64, config.form)?;
                if traj.divergent {
                    acc.divergent += 1;
                } else {
                    acc.push(&traj.states);
                }
            }
            Ok(acc)
        })
        .collect();
    let mut total = Accumulator::new(steps, dim);
    for p in partial {
        total = total.merge(&p?);
    }
    let m = total.count as f64;
    let stderr: Vec<CMatrix> = total
        .m2
        .iter()
        .map(|q| {
            q.map(|z| {
                if total.count < 2 {
                    c(f64::INFINITY, f64::INFINITY)
                } else {
                    c((z.re / (m - 1.0) / m).sqrt(), (z.im / (m - 1.0) / m).sqrt())
                }
            })
        })
        .collect();
    let mean = DensityMatrixSeries::new(grid, total.mean)?.with_stderr(stderr)?;
    let trace_dev = mean.trace_deviation();
    let hermiticity_dev = mean.states.iter().map(hermiticity_deviation).collect();
    Ok(EnsembleStats {
        mean,
        trace_dev,
        hermiticity_dev,
        trajectories: config.trajectories,
        divergent: total.divergent,
        master_seed: config.master_seed,
    })
}
