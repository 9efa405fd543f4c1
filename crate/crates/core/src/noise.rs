//! The correlated complex noise pair `(ξ, ν)` driving SLN trajectories.
//!
//! Both noises are built from two independent families of circular complex
//! Gaussian amplitudes:
//!
//! ```text
//! ξ(t) = z₀(t) + z₀*(t) + 2 z₁(t),      ν(t) = i z₁*(t)
//! z₀(t) = Σ_λ (g_λ/√2) z₀λ e^{−iω_λ t}
//! z₁(t) = Σ_k f_k z₁k e^{−iω_k t},        z₁*(t) = Σ_k h_k* z₁k* e^{iω_k t}
//! ```
//!
//! The `z₀` family lives on the bath modes and reproduces
//! `M[ξ(t)ξ(t′)] = α_R(t − t′)`. The `z₁` family lives on an auxiliary grid of
//! paired positive and negative frequencies whose coefficients are chosen so
//! that `2 Σ_k f_k h_k* e^{−iω_k τ} = −α_I(τ) θ(τ)`, which gives the causal
//! cross-correlation `M[ξ(t)ν(t′)] = −i α_I(t − t′) θ(t − t′)` and
//! `M[ν ν] = 0`.
//!
//! The auxiliary grid is the discrete Fourier dual of the half-step time grid
//! `τ_m = m·dt/2`, so the causal target is matched exactly at every pair of
//! half-step nodes, which are the only times an RK4 integrator samples.

use std::f64::consts::{PI, SQRT_2};
use std::io::Write;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};

use crate::bath::{heaviside, BathSpectrum, CorrelationKernel};
use crate::{c, Complex64, Error, Result, TimeGrid, I};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Deterministic per-trajectory generator: the master seed selects the key,
/// the trajectory index selects the ChaCha stream.
pub fn trajectory_rng(master_seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(stream);
    rng
}

/// Circular complex Gaussian with `M[z z*] = 1`, `M[z z] = 0`.
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    c(re, im) / SQRT_2
}

/// Spectral factors shared by every path of an ensemble: bath-mode weights for
/// the `z₀` family and the auxiliary `(ω_k, f_k, h_k)` grid for `z₁`.
#[derive(Clone)]
pub struct NoiseFactors {
    grid: TimeGrid,
    bath_omega: Vec<f64>,
    /// `g_λ/√2`.
    bath_coef: Vec<f64>,
    aux_omega: Vec<f64>,
    f: Vec<f64>,
    h: Vec<Complex64>,
    /// `e^{−iω_λ τ_m}` on the half-step nodes, row-major `[λ][m]`.
    bath_phase: Vec<Complex64>,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for NoiseFactors {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("NoiseFactors")
            .field("grid", &self.grid)
            .field("n_bath", &self.bath_omega.len())
            .field("n_aux", &self.aux_omega.len())
            .finish()
    }
}

impl NoiseFactors {
    pub fn new(spec: &BathSpectrum, grid: TimeGrid) -> Result<Self> {
        spec.check_window(grid.t_max())?;
        let bath_omega: Vec<f64> = spec.modes().iter().map(|m| m.omega).collect();
        let bath_coef: Vec<f64> = (0..spec.len()).map(|i| (0.5 * spec.effective_coupling_sq(i)).sqrt()).collect();

        let step = 0.5 * grid.dt;
        let half = 2 * grid.n;
        let n_fft = (2 * half + 1).next_power_of_two();
        let fft = FftPlanner::new().plan_fft_forward(n_fft);

        // Causal target C̃(τ_m) = −½ α_I(τ_m) θ(τ_m) for |m| ≤ half, zero elsewhere
        // on the periodic grid; its inverse DFT gives c_k = f_k h_k*.
        let mut target = vec![ZERO; n_fft];
        for m in 0..=half {
            let tau = m as f64 * step;
            let alpha_i = -spec.modes().iter().map(|md| md.g_hat * md.g_hat * (md.omega * tau).sin()).sum::<f64>();
            target[m] = c(-0.5 * alpha_i * heaviside(tau), 0.0);
        }
        // Inverse DFT via the forward transform: c_k = conj(FFT(conj C̃))_k / N.
        let mut buf: Vec<Complex64> = target.iter().map(|z| z.conj()).collect();
        fft.process(&mut buf);
        let coeffs: Vec<Complex64> = buf.iter().map(|z| z.conj() / n_fft as f64).collect();

        let aux_omega = (0..n_fft)
            .map(|k| {
                let signed = if k < n_fft / 2 { k as f64 } else { k as f64 - n_fft as f64 };
                2.0 * PI * signed / (n_fft as f64 * step)
            })
            .collect();
        let mut f = Vec::with_capacity(n_fft);
        let mut h = Vec::with_capacity(n_fft);
        for ck in &coeffs {
            let r = ck.norm();
            if r > 0.0 {
                let root = r.sqrt();
                f.push(root);
                // h_k* = c_k / √|c_k|
                h.push((ck / root).conj());
            } else {
                f.push(0.0);
                h.push(ZERO);
            }
        }

        let nodes = half + 1;
        let mut bath_phase = Vec::with_capacity(bath_omega.len() * nodes);
        for &w in &bath_omega {
            bath_phase.extend((0..nodes).map(|m| Complex64::from_polar(1.0, -w * m as f64 * step)));
        }

        Ok(Self { grid, bath_omega, bath_coef, aux_omega, f, h, bath_phase, fft })
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn n_bath(&self) -> usize {
        self.bath_omega.len()
    }

    pub fn n_aux(&self) -> usize {
        self.aux_omega.len()
    }

    pub fn aux_frequencies(&self) -> &[f64] {
        &self.aux_omega
    }

    pub fn f(&self) -> &[f64] {
        &self.f
    }

    pub fn h(&self) -> &[Complex64] {
        &self.h
    }

    /// Spacing of the tabulation nodes, `dt/2`.
    pub fn node_step(&self) -> f64 {
        0.5 * self.grid.dt
    }

    /// `M[ξ(t)ν(t′)]` implied by the factors, `2i Σ_k f_k h_k* e^{−iω_k(t−t′)}`.
    pub fn expected_cross(&self, tau: f64) -> Complex64 {
        let sum: Complex64 = self
            .aux_omega
            .iter()
            .zip(&self.f)
            .zip(&self.h)
            .map(|((&w, &f), h)| f * h.conj() * Complex64::from_polar(1.0, -w * tau))
            .sum();
        2.0 * I * sum
    }
}

/// Random amplitudes of one noise realization.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseAmplitudes {
    pub seed: u64,
    pub stream: u64,
    /// One draw per bath mode.
    pub z0: Vec<Complex64>,
    /// One draw per auxiliary mode.
    pub z1: Vec<Complex64>,
}

impl NoiseAmplitudes {
    pub fn zeros(factors: &NoiseFactors) -> Self {
        Self { seed: 0, stream: 0, z0: vec![ZERO; factors.n_bath()], z1: vec![ZERO; factors.n_aux()] }
    }
}

/// Draws `z₀` (bath modes) then `z₁` (auxiliary modes) from stream `stream`
/// of `seed`.
pub fn sample_amplitudes(factors: &NoiseFactors, seed: u64, stream: u64) -> NoiseAmplitudes {
    let mut rng = trajectory_rng(seed, stream);
    let z0 = (0..factors.n_bath()).map(|_| complex_normal(&mut rng)).collect();
    let z1 = (0..factors.n_aux()).map(|_| complex_normal(&mut rng)).collect();
    NoiseAmplitudes { seed, stream, z0, z1 }
}

/// A single noise realization `(ξ(t), ν(t))` on `[0, t_max]`.
#[derive(Debug, Clone)]
pub struct NoisePath<'a> {
    factors: &'a NoiseFactors,
    amplitudes: NoiseAmplitudes,
}

impl<'a> NoisePath<'a> {
    pub fn new(factors: &'a NoiseFactors, amplitudes: NoiseAmplitudes) -> Result<Self> {
        if amplitudes.z0.len() != factors.n_bath() {
            return Err(Error::Dimension { expected: factors.n_bath(), got: amplitudes.z0.len() });
        }
        if amplitudes.z1.len() != factors.n_aux() {
            return Err(Error::Dimension { expected: factors.n_aux(), got: amplitudes.z1.len() });
        }
        Ok(Self { factors, amplitudes })
    }

    pub fn sample(factors: &'a NoiseFactors, seed: u64, stream: u64) -> Self {
        Self { factors, amplitudes: sample_amplitudes(factors, seed, stream) }
    }

    pub fn zero(factors: &'a NoiseFactors) -> Self {
        Self { factors, amplitudes: NoiseAmplitudes::zeros(factors) }
    }

    pub fn amplitudes(&self) -> &NoiseAmplitudes {
        &self.amplitudes
    }

    pub fn factors(&self) -> &NoiseFactors {
        self.factors
    }

    /// Exact mode sum at time `t`.
    pub fn evaluate(&self, t: f64) -> Result<(Complex64, Complex64)> {
        let t_max = self.factors.grid.t_max();
        if !(t >= 0.0 && t <= t_max * (1.0 + 1e-12)) {
            return Err(Error::Domain(format!("noise evaluated at t = {t} outside [0, {t_max}]")));
        }
        let f = self.factors;
        let mut z0 = ZERO;
        for ((&w, &a), z) in f.bath_omega.iter().zip(&f.bath_coef).zip(&self.amplitudes.z0) {
            z0 += a * z * Complex64::from_polar(1.0, -w * t);
        }
        let mut z1 = ZERO;
        let mut z1_star = ZERO;
        for (k, z) in self.amplitudes.z1.iter().enumerate() {
            if f.f[k] == 0.0 {
                continue;
            }
            let phase = Complex64::from_polar(1.0, -f.aux_omega[k] * t);
            z1 += f.f[k] * z * phase;
            z1_star += f.h[k].conj() * z.conj() * phase.conj();
        }
        let xi = c(2.0 * z0.re, 0.0) + 2.0 * z1;
        Ok((xi, I * z1_star))
    }

    /// `(ξ, ν)` on every half-step node `τ_m = m·dt/2`, `m = 0..=2n`.
    pub fn tabulate(&self) -> NoiseTable {
        let f = self.factors;
        let nodes = 2 * f.grid.n + 1;
        let n_fft = f.n_aux();
        let mut z1: Vec<Complex64> = (0..n_fft).map(|k| f.f[k] * self.amplitudes.z1[k]).collect();
        let mut hz: Vec<Complex64> = (0..n_fft).map(|k| f.h[k] * self.amplitudes.z1[k]).collect();
        f.fft.process(&mut z1);
        f.fft.process(&mut hz);

        let mut xi: Vec<Complex64> = (0..nodes).map(|m| 2.0 * z1[m]).collect();
        for (lam, (&a, z)) in f.bath_coef.iter().zip(&self.amplitudes.z0).enumerate() {
            if a == 0.0 {
                continue;
            }
            let az = a * z;
            let row = &f.bath_phase[lam * nodes..(lam + 1) * nodes];
            for (x, p) in xi.iter_mut().zip(row) {
                x.re += 2.0 * (az * p).re;
            }
        }
        let nu = (0..nodes).map(|m| I * hz[m].conj()).collect();
        NoiseTable { step: f.node_step(), xi, nu }
    }
}

/// `evaluate_noise(path, t) = (ξ(t), ν(t))`.
pub fn evaluate_noise(path: &NoisePath<'_>, t: f64) -> Result<(Complex64, Complex64)> {
    path.evaluate(t)
}

/// Noise values on the half-step nodes of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseTable {
    pub step: f64,
    pub xi: Vec<Complex64>,
    pub nu: Vec<Complex64>,
}

impl NoiseTable {
    pub fn zeros(grid: TimeGrid) -> Self {
        let nodes = 2 * grid.n + 1;
        Self { step: 0.5 * grid.dt, xi: vec![ZERO; nodes], nu: vec![ZERO; nodes] }
    }

    /// Constant noise on every node.
    pub fn constant(grid: TimeGrid, xi: Complex64, nu: Complex64) -> Self {
        let nodes = 2 * grid.n + 1;
        Self { step: 0.5 * grid.dt, xi: vec![xi; nodes], nu: vec![nu; nodes] }
    }

    /// Samples arbitrary functions on the nodes.
    pub fn from_fn<F: Fn(f64) -> (Complex64, Complex64)>(grid: TimeGrid, noise: F) -> Self {
        let nodes = 2 * grid.n + 1;
        let (xi, nu) = (0..nodes).map(|m| noise(m as f64 * 0.5 * grid.dt)).unzip();
        Self { step: 0.5 * grid.dt, xi, nu }
    }

    pub fn len(&self) -> usize {
        self.xi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xi.is_empty()
    }

    /// Values at full grid point `k`.
    pub fn at_grid(&self, k: usize) -> (Complex64, Complex64) {
        (self.xi[2 * k], self.nu[2 * k])
    }

    /// CSV dump with columns `t, re_xi, im_xi, re_nu, im_nu` on the full grid.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "re_xi", "im_xi", "re_nu", "im_nu"])?;
        for k in 0..self.len().div_ceil(2) {
            let (xi, nu) = self.at_grid(k);
            let t = 2.0 * k as f64 * self.step;
            w.write_record([t, xi.re, xi.im, nu.re, nu.im].map(|x| x.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Empirical second moment compared against its target on all grid pairs.
#[derive(Debug, Clone)]
pub struct MomentComparison {
    pub name: &'static str,
    /// Row-major over `(i, j)`, `i, j = 0..=n`.
    pub empirical: Vec<Complex64>,
    pub target: Vec<Complex64>,
    pub stderr_re: Vec<f64>,
    pub stderr_im: Vec<f64>,
}

impl MomentComparison {
    pub fn max_abs_deviation(&self) -> f64 {
        self.empirical.iter().zip(&self.target).map(|(e, t)| (e - t).norm()).fold(0.0, f64::max)
    }

    /// Largest deviation in units of the standard error, real and imaginary
    /// parts separately. Entries with zero variance and zero deviation count as 0.
    pub fn max_z_score(&self) -> f64 {
        (0..self.empirical.len())
            .map(|k| {
                let d = self.empirical[k] - self.target[k];
                z_score(d.re, self.stderr_re[k]).max(z_score(d.im, self.stderr_im[k]))
            })
            .fold(0.0, f64::max)
    }

    pub fn flagged(&self, sigmas: f64) -> usize {
        (0..self.empirical.len())
            .filter(|&k| {
                let d = self.empirical[k] - self.target[k];
                z_score(d.re, self.stderr_re[k]) > sigmas || z_score(d.im, self.stderr_im[k]) > sigmas
            })
            .count()
    }
}

fn z_score(dev: f64, se: f64) -> f64 {
    let tiny = 1e-13;
    if dev.abs() <= tiny {
        0.0
    } else if se > 0.0 {
        dev.abs() / se
    } else {
        f64::INFINITY
    }
}

/// Outcome of comparing an ensemble of paths against the target statistics.
#[derive(Debug, Clone)]
pub struct StatisticsReport {
    pub samples: usize,
    pub times: Vec<f64>,
    pub xi_xi: MomentComparison,
    pub xi_nu: MomentComparison,
    pub nu_nu: MomentComparison,
    /// Threshold, in standard errors, used for `flagged`.
    pub sigmas: f64,
}

impl StatisticsReport {
    pub fn moments(&self) -> [&MomentComparison; 3] {
        [&self.xi_xi, &self.xi_nu, &self.nu_nu]
    }

    pub fn max_abs_deviation(&self) -> f64 {
        self.moments().iter().map(|m| m.max_abs_deviation()).fold(0.0, f64::max)
    }

    pub fn max_z_score(&self) -> f64 {
        self.moments().iter().map(|m| m.max_z_score()).fold(0.0, f64::max)
    }

    pub fn flagged(&self) -> usize {
        self.moments().iter().map(|m| m.flagged(self.sigmas)).sum()
    }

    pub fn passed(&self) -> bool {
        self.flagged() == 0
    }

    /// Columns: `moment, i, j, t_i, t_j, re_emp, im_emp, re_target, im_target,
    /// se_re, se_im`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "moment",
            "i",
            "j",
            "t_i",
            "t_j",
            "re_emp",
            "im_emp",
            "re_target",
            "im_target",
            "se_re",
            "se_im",
        ])?;
        let p = self.times.len();
        for m in self.moments() {
            for i in 0..p {
                for j in 0..p {
                    let k = i * p + j;
                    w.write_record([
                        m.name.to_string(),
                        i.to_string(),
                        j.to_string(),
                        self.times[i].to_string(),
                        self.times[j].to_string(),
                        m.empirical[k].re.to_string(),
                        m.empirical[k].im.to_string(),
                        m.target[k].re.to_string(),
                        m.target[k].im.to_string(),
                        m.stderr_re[k].to_string(),
                        m.stderr_im[k].to_string(),
                    ])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Running sums of products and squared products on all grid pairs.
#[derive(Debug, Clone)]
struct MomentSums {
    points: usize,
    count: usize,
    sum: [Vec<Complex64>; 3],
    sq_re: [Vec<f64>; 3],
    sq_im: [Vec<f64>; 3],
}

impl MomentSums {
    fn new(points: usize) -> Self {
        let z = || vec![ZERO; points * points];
        let r = || vec![0.0; points * points];
        Self { points, count: 0, sum: [z(), z(), z()], sq_re: [r(), r(), r()], sq_im: [r(), r(), r()] }
    }

    fn add(&mut self, xi: &[Complex64], nu: &[Complex64]) {
        let p = self.points;
        for i in 0..p {
            for j in 0..p {
                let k = i * p + j;
                let prods = [xi[i] * xi[j], xi[i] * nu[j], nu[i] * nu[j]];
                for (m, v) in prods.iter().enumerate() {
                    self.sum[m][k] += v;
                    self.sq_re[m][k] += v.re * v.re;
                    self.sq_im[m][k] += v.im * v.im;
                }
            }
        }
        self.count += 1;
    }

    fn merge(mut self, other: &MomentSums) -> Self {
        for m in 0..3 {
            for k in 0..self.sum[m].len() {
                self.sum[m][k] += other.sum[m][k];
                self.sq_re[m][k] += other.sq_re[m][k];
                self.sq_im[m][k] += other.sq_im[m][k];
            }
        }
        self.count += other.count;
        self
    }
}

fn moment_targets(kernel: &CorrelationKernel, points: usize) -> [Vec<Complex64>; 3] {
    let mut xx = Vec::with_capacity(points * points);
    let mut xn = Vec::with_capacity(points * points);
    for i in 0..points {
        for j in 0..points {
            let lag = i.abs_diff(j);
            xx.push(c(kernel.alpha_r[lag], 0.0));
            // α_I is odd in the lag
            let sign = if i >= j { 1.0 } else { -1.0 };
            let theta = heaviside(i as f64 - j as f64);
            xn.push(-I * (sign * kernel.alpha_i[lag] * theta));
        }
    }
    [xx, xn, vec![ZERO; points * points]]
}

fn report_from_sums(sums: &MomentSums, kernel: &CorrelationKernel, sigmas: f64) -> StatisticsReport {
    let m = sums.count as f64;
    let targets = moment_targets(kernel, sums.points);
    let names = ["xi_xi", "xi_nu", "nu_nu"];
    let build = |idx: usize| {
        let empirical: Vec<Complex64> = sums.sum[idx].iter().map(|s| s / m).collect();
        let se = |sq: &Vec<f64>, part: fn(&Complex64) -> f64| -> Vec<f64> {
            sq.iter()
                .zip(&empirical)
                .map(|(&q, e)| {
                    if sums.count < 2 {
                        return f64::INFINITY;
                    }
                    let mean = part(e);
                    let var = ((q - m * mean * mean) / (m - 1.0)).max(0.0);
                    (var / m).sqrt()
                })
                .collect()
        };
        let stderr_re = se(&sums.sq_re[idx], |z| z.re);
        let stderr_im = se(&sums.sq_im[idx], |z| z.im);
        MomentComparison { name: names[idx], empirical, target: targets[idx].clone(), stderr_re, stderr_im }
    };
    StatisticsReport {
        samples: sums.count,
        times: kernel.grid().times(),
        xi_xi: build(0),
        xi_nu: build(1),
        nu_nu: build(2),
        sigmas,
    }
}

/// Flags deviations beyond this many standard errors.
pub const DEFAULT_SIGMAS: f64 = 5.0;

/// Empirical `M[ξξ]`, `M[ξν]`, `M[νν]` over `paths` at the kernel's grid
/// points, compared with `α_R`, `−iα_Iθ` and `0`.
pub fn validate_statistics<'a, I>(paths: I, kernel: &CorrelationKernel) -> Result<StatisticsReport>
where
    I: IntoIterator<Item = NoisePath<'a>>,
{
    let points = kernel.n + 1;
    let mut sums = MomentSums::new(points);
    for path in paths {
        let (xi, nu) = grid_values(&path, kernel)?;
        sums.add(&xi, &nu);
    }
    if sums.count < 100 {
        return Err(Error::Precondition(format!("noise validation needs at least 100 paths, got {}", sums.count)));
    }
    Ok(report_from_sums(&sums, kernel, DEFAULT_SIGMAS))
}

fn grid_values(path: &NoisePath<'_>, kernel: &CorrelationKernel) -> Result<(Vec<Complex64>, Vec<Complex64>)> {
    let grid = path.factors.grid;
    if (grid.dt - kernel.dt).abs() > 1e-12 * grid.dt || grid.n < kernel.n {
        return Err(Error::GridMismatch(format!(
            "noise grid (dt={}, n={}) does not cover kernel grid (dt={}, n={})",
            grid.dt, grid.n, kernel.dt, kernel.n
        )));
    }
    let table = path.tabulate();
    Ok((0..=kernel.n).map(|k| table.at_grid(k)).unzip())
}

/// Parallel, deterministic version of [`validate_statistics`] over paths
/// `0..count` of `master_seed`.
pub fn validate_ensemble(
    factors: &NoiseFactors,
    kernel: &CorrelationKernel,
    master_seed: u64,
    count: usize,
) -> Result<StatisticsReport> {
    if count < 100 {
        return Err(Error::Precondition(format!("noise validation needs at least 100 paths, got {count}")));
    }
    const CHUNK: usize = 512;
    let points = kernel.n + 1;
    let chunks = count.div_ceil(CHUNK);
    let partial: Vec<Result<MomentSums>> = (0..chunks)
        .into_par_iter()
        .map(|ch| {
            let mut sums = MomentSums::new(points);
            for idx in ch * CHUNK..((ch + 1) * CHUNK).min(count) {
                let path = NoisePath::sample(factors, master_seed, idx as u64);
                let (xi, nu) = grid_values(&path, kernel)?;
                sums.add(&xi, &nu);
            }
            Ok(sums)
        })
        .collect();
    let mut total = MomentSums::new(points);
    for p in partial {
        total = total.merge(&p?);
    }
    Ok(report_from_sums(&total, kernel, DEFAULT_SIGMAS))
}
