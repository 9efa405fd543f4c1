//! The hierarchically structured master equation obtained by averaging the SLN
//! equation analytically, truncated after its second term class.
//!
//! In the interaction picture every contribution is built from *channels*
//! `p = (K_p, L_p, R_p)`: a kernel `K_p(τ)`, a superoperator `L_p(t)` acting at
//! the later time of a correlation pair and `R_p(s)` acting at the earlier one.
//! From the four kernels of [`CorrelationKernel`] and the family superoperators
//! `ℒ_0^0 = ℒ_0^* = ℒ_M`, `ℒ_1^0 = 2ℒ_M`, `ℒ_1^* = ℒ^c_M` the channels are
//!
//! | kernel                 | `L_p`   | `R_p`   |
//! |------------------------|---------|---------|
//! | `k00_0s + k00_s0`      | `ℒ_M`   | `ℒ_M`   |
//! | `k11_0s`               | `2ℒ_M`  | `ℒ^c_M` |
//! | `k11_s0`               | `ℒ^c_M` | `2ℒ_M`  |
//!
//! (identically vanishing kernels are dropped, so the last row never appears
//! for baths built from modes). The two retained term classes are
//!
//! ```text
//! class 1:  Σ_p L_p(t) ∫₀ᵗ ds K_p(t−s) R_p(s) ρ(s)
//! class 2:  Σ_pq L_p(t) ∫₀ᵗ ds L_q(s) ∫₀ˢ ds′ ∫₀^{s′} ds″
//!             [ K_p(t−s′) K_q(s−s″) R_p(s′) R_q(s″)          (crossing)
//!             + K_q(s−s′) K_p(t−s″) R_q(s′) R_p(s″) ] ρ(s″)   (nested)
//! ```
//!
//! Class 1 is the time-convolved second-order master equation; class 2 holds
//! the two irreducible fourth-order pairings. With [`Pairing::Tied`] only
//! channel pairs of the same family (`p, q` both from `k00` or both from
//! `k11`) enter class 2; [`Pairing::Independent`] sums all pairs and so keeps
//! every fourth-order term, leaving an `O(g⁶)` truncation error instead of
//! `O(g⁴)`. All integrals use the trapezoid
//! rule; the triple integral optionally runs on a coarser node set
//! `{0, S, 2S, …} ∪ {t}` with stride `S`.

use crate::bath::CorrelationKernel;
use crate::liouville::{
    anticommutator_superop, commutator_superop, flatten, spectral_norm, unflatten, Family, SystemModel,
};
use crate::quadrature::{node_weight, weight};
use crate::reference::{coupling_history, implicit_solve, schrodinger_series};
use crate::series::DensityMatrixSeries;
use crate::{c, CMatrix, CVector, Complex64, Error, Result, TimeGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Truncation {
    Class1,
    Class2,
}

/// Which channel pairs `(p, q)` contribute to class 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Pairing {
    /// Both channels carry the same family index.
    #[default]
    Tied,
    /// Family indices summed independently.
    Independent,
}

impl Pairing {
    fn admits(self, a: Family, b: Family) -> bool {
        match self {
            Pairing::Tied => a == b,
            Pairing::Independent => true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HierarchyConfig {
    pub truncation: Truncation,
    /// Node spacing (in grid steps) of the triple-integral quadrature.
    pub stride: usize,
    pub pairing: Pairing,
}

impl HierarchyConfig {
    pub fn class1() -> Self {
        Self { truncation: Truncation::Class1, stride: 1, pairing: Pairing::Tied }
    }

    pub fn class2(stride: usize) -> Self {
        Self { truncation: Truncation::Class2, stride, pairing: Pairing::Tied }
    }

    pub fn with_pairing(self, pairing: Pairing) -> Self {
        Self { pairing, ..self }
    }

    pub fn validate(&self, grid: TimeGrid) -> Result<()> {
        if self.stride == 0 {
            return Err(Error::Config("stride must be >= 1".into()));
        }
        if !grid.n.is_multiple_of(self.stride) {
            return Err(Error::Config(format!(
                "stride {} does not divide the number of steps {}",
                self.stride, grid.n
            )));
        }
        Ok(())
    }
}

struct Channel {
    family: Family,
    kernel: Vec<Complex64>,
    left: Vec<CMatrix>,
    right: Vec<CMatrix>,
}

#[derive(Clone, Copy)]
enum Side {
    Commutator(f64),
    Anticommutator,
}

fn superop(side: Side, x: &CMatrix) -> CMatrix {
    match side {
        Side::Commutator(f) => commutator_superop(x).expect("square coupling").0 * c(f, 0.0),
        Side::Anticommutator => anticommutator_superop(x).expect("square coupling").0,
    }
}

fn build_channels(kernel: &CorrelationKernel, xs: &[CMatrix]) -> Vec<Channel> {
    let k00: Vec<Complex64> = kernel.k00_0s.iter().zip(&kernel.k00_s0).map(|(a, b)| a + b).collect();
    let specs = [
        (Family::Zero, k00, Side::Commutator(1.0), Side::Commutator(1.0)),
        (Family::One, kernel.k11_0s.clone(), Side::Commutator(2.0), Side::Anticommutator),
        (Family::One, kernel.k11_s0.clone(), Side::Anticommutator, Side::Commutator(2.0)),
    ];
    specs
        .into_iter()
        .filter(|(_, k, _, _)| k.iter().any(|z| z.norm_sqr() > 0.0))
        .map(|(family, k, l, r)| Channel {
            family,
            kernel: k,
            left: xs.iter().map(|x| superop(l, x)).collect(),
            right: xs.iter().map(|x| superop(r, x)).collect(),
        })
        .collect()
}

/// Quadrature nodes `{0, S, 2S, …} ∪ {k}`.
fn nodes(k: usize, stride: usize) -> Vec<usize> {
    let mut v: Vec<usize> = (0..=k).step_by(stride).collect();
    if !k.is_multiple_of(stride) {
        v.push(k);
    }
    v
}

fn zeros(len: usize) -> CVector {
    CVector::zeros(len)
}

/// Incremental evaluator of both term classes over a growing history.
struct Engine {
    dt: f64,
    stride: usize,
    class2: bool,
    pairing: Pairing,
    len: usize,
    channels: Vec<Channel>,
    /// `R_p(m) ρ(m)`, indexed `[p][m]`.
    rv: Vec<Vec<CVector>>,
    /// Crossing rows `Y_pq(i, ·)` at node positions of `nodes(i)`, indexed
    /// `[i][p·P + q]`; kept only for stride multiples and the latest step.
    rows: Vec<Option<Vec<Vec<CVector>>>>,
    states: usize,
}

impl Engine {
    fn new(model: &SystemModel, kernel: &CorrelationKernel, config: HierarchyConfig) -> Self {
        let grid = kernel.grid();
        let xs = coupling_history(model, grid);
        let channels = build_channels(kernel, &xs);
        let n2 = model.dim() * model.dim();
        Self {
            dt: grid.dt,
            stride: config.stride,
            class2: config.truncation == Truncation::Class2,
            pairing: config.pairing,
            len: n2,
            rv: vec![Vec::new(); channels.len()],
            channels,
            rows: vec![None; grid.n + 1],
            states: 0,
        }
    }

    /// Sets `ρ(t_k)`, appending (`k == states`) or replacing the latest state.
    fn set_state(&mut self, k: usize, rho: &CVector) {
        assert!(k == self.states || k + 1 == self.states, "states must be set in order");
        if k == self.states {
            self.states += 1;
            for rv in &mut self.rv {
                rv.push(zeros(self.len));
            }
            if k > 0 && !(k - 1).is_multiple_of(self.stride) {
                self.rows[k - 1] = None;
            }
        }
        for (p, ch) in self.channels.iter().enumerate() {
            self.rv[p][k] = &ch.right[k] * rho;
        }
        if self.class2 {
            self.rows[k] = Some(self.crossing_row(k));
        }
    }

    /// `Y_pq(i, j_b) = R_p(j_b) Σ_{a ≤ b} w K_q(i − l_a) R_q(l_a) ρ(l_a)`.
    fn crossing_row(&self, i: usize) -> Vec<Vec<CVector>> {
        let list = nodes(i, self.stride);
        let np = self.channels.len();
        let mut out = Vec::with_capacity(np * np);
        let mut cumulative: Vec<Vec<CVector>> = Vec::with_capacity(np);
        for (q, ch) in self.channels.iter().enumerate() {
            let f = |a: usize| &self.rv[q][list[a]] * ch.kernel[i - list[a]];
            let mut w = vec![zeros(self.len)];
            for b in 1..list.len() {
                let h = 0.5 * self.dt * (list[b] - list[b - 1]) as f64;
                let next = &w[b - 1] + (f(b - 1) + f(b)) * c(h, 0.0);
                w.push(next);
            }
            cumulative.push(w);
        }
        for p in 0..np {
            for w in &cumulative {
                out.push(list.iter().zip(w).map(|(&j, v)| &self.channels[p].right[j] * v).collect());
            }
        }
        out
    }

    fn class1(&self, k: usize) -> CVector {
        let mut total = zeros(self.len);
        for (p, ch) in self.channels.iter().enumerate() {
            let mut acc = zeros(self.len);
            for m in 0..=k {
                let w = weight(m, k, self.dt);
                if w != 0.0 {
                    acc += &self.rv[p][m] * (ch.kernel[k - m] * w);
                }
            }
            total += &ch.left[k] * acc;
        }
        total
    }

    fn class2(&self, k: usize) -> CVector {
        let mut total = zeros(self.len);
        if !self.class2 || k == 0 {
            return total;
        }
        let list = nodes(k, self.stride);
        let r = list.len() - 1;
        let np = self.channels.len();
        let nw = |a: usize, b: usize| node_weight(&list, a, b, self.dt);
        for (p, chp) in self.channels.iter().enumerate() {
            let mut acc = zeros(self.len);
            // crossing pairing
            for (q, chq) in self.channels.iter().enumerate() {
                if !self.pairing.admits(chp.family, chq.family) {
                    continue;
                }
                for bi in 1..=r {
                    let i = list[bi];
                    let row = &self.rows[i].as_ref().expect("crossing row cached")[p * np + q];
                    let mut inner = zeros(self.len);
                    for a in 0..=bi {
                        inner += &row[a] * (chp.kernel[k - list[a]] * nw(a, bi));
                    }
                    acc += &chq.left[i] * inner * c(nw(bi, r), 0.0);
                }
            }
            // nested pairing
            let f = |a: usize| &self.rv[p][list[a]] * chp.kernel[k - list[a]];
            let mut v = vec![zeros(self.len)];
            for b in 1..=r {
                let h = 0.5 * self.dt * (list[b] - list[b - 1]) as f64;
                let next = &v[b - 1] + (f(b - 1) + f(b)) * c(h, 0.0);
                v.push(next);
            }
            for chq in self.channels.iter().filter(|q| self.pairing.admits(chp.family, q.family)) {
                let qv: Vec<CVector> = (0..=r).map(|b| &chq.right[list[b]] * &v[b]).collect();
                for bi in 1..=r {
                    let i = list[bi];
                    let mut z = zeros(self.len);
                    for a in 1..=bi {
                        z += &qv[a] * (chq.kernel[i - list[a]] * nw(a, bi));
                    }
                    acc += &chq.left[i] * z * c(nw(bi, r), 0.0);
                }
            }
            total += &chp.left[k] * acc;
        }
        total
    }

    /// Linear maps carrying the `ρ(t_k)` dependence of each class at `t_k`.
    fn endpoints(&self, k: usize) -> (CMatrix, CMatrix) {
        let mut e1 = CMatrix::zeros(self.len, self.len);
        let mut e2 = CMatrix::zeros(self.len, self.len);
        if k == 0 {
            return (e1, e2);
        }
        let w = weight(k, k, self.dt);
        for ch in &self.channels {
            e1 += &ch.left[k] * &ch.right[k] * (ch.kernel[0] * w);
        }
        if self.class2 {
            let list = nodes(k, self.stride);
            let r = list.len() - 1;
            let wl = node_weight(&list, r, r, self.dt);
            for p in &self.channels {
                for q in self.channels.iter().filter(|q| self.pairing.admits(p.family, q.family)) {
                    let lead = &p.left[k] * &q.left[k];
                    let tail = &p.right[k] * &q.right[k] + &q.right[k] * &p.right[k];
                    e2 += lead * tail * (p.kernel[0] * q.kernel[0] * wl * wl * wl);
                }
            }
        }
        (e1, e2)
    }
}

fn check_history(k: usize, history: &[CMatrix], kernel: &CorrelationKernel, model: &SystemModel) -> Result<()> {
    if history.len() < k + 1 {
        return Err(Error::Precondition(format!("history covers {} steps, step {k} requested", history.len())));
    }
    if k > kernel.n {
        return Err(Error::Precondition(format!("kernel has {} lags, step {k} requested", kernel.n)));
    }
    if let Some(bad) = history.iter().find(|h| h.nrows() != model.dim() || h.ncols() != model.dim()) {
        return Err(Error::Dimension { expected: model.dim(), got: bad.nrows() });
    }
    Ok(())
}

fn loaded_engine(
    k: usize,
    history: &[CMatrix],
    kernel: &CorrelationKernel,
    model: &SystemModel,
    config: HierarchyConfig,
) -> Result<Engine> {
    check_history(k, history, kernel, model)?;
    let kernel = kernel.truncated(kernel.n.max(k))?;
    let mut engine = Engine::new(model, &kernel, config);
    for (m, h) in history.iter().take(k + 1).enumerate() {
        engine.set_state(m, &flatten(h));
    }
    Ok(engine)
}

/// Class-1 contribution to `dρ/dt` at `t_k` from an interaction-picture history
/// `ρ(t_0..=t_k)`.
pub fn class1_rhs(k: usize, history: &[CMatrix], kernel: &CorrelationKernel, model: &SystemModel) -> Result<CVector> {
    Ok(loaded_engine(k, history, kernel, model, HierarchyConfig::class1())?.class1(k))
}

/// Class-2 contribution to `dρ/dt` at `t_k` from an interaction-picture history.
pub fn class2_rhs(
    k: usize,
    history: &[CMatrix],
    kernel: &CorrelationKernel,
    model: &SystemModel,
    stride: usize,
    pairing: Pairing,
) -> Result<CVector> {
    if stride == 0 {
        return Err(Error::Config("stride must be >= 1".into()));
    }
    let config = HierarchyConfig::class2(stride).with_pairing(pairing);
    Ok(loaded_engine(k, history, kernel, model, config)?.class2(k))
}

/// Norms of the class-1 and class-2 contributions to `dρ/dt` at every step.
#[derive(Debug, Clone, PartialEq)]
pub struct TermWeights {
    pub grid: TimeGrid,
    pub w1: Vec<f64>,
    pub w2: Vec<f64>,
    /// `W2/W1`; `None` where `W1` vanishes.
    pub ratio: Vec<Option<f64>>,
}

impl TermWeights {
    fn from_norms(grid: TimeGrid, w1: Vec<f64>, w2: Vec<f64>) -> Self {
        let scale = w1.iter().cloned().fold(0.0, f64::max);
        let ratio =
            w1.iter().zip(&w2).map(|(&a, &b)| if a > 1e-12 * scale && a > 0.0 { Some(b / a) } else { None }).collect();
        Self { grid, w1, w2, ratio }
    }

    /// CSV with columns `t, W1, W2, ratio` (`ratio` empty where undefined).
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "W1", "W2", "ratio"])?;
        for k in 0..self.w1.len() {
            w.write_record([
                self.grid.time(k).to_string(),
                self.w1[k].to_string(),
                self.w2[k].to_string(),
                self.ratio[k].map_or(String::new(), |r| r.to_string()),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct HierarchySolution {
    /// Schrödinger-picture density matrices.
    pub series: DensityMatrixSeries,
    pub weights: TermWeights,
    /// `max_k |tr ρ_k − 1|`.
    pub max_trace_dev: f64,
    /// Smallest eigenvalue seen over the run (negative values mean lost
    /// positivity).
    pub min_eigenvalue: f64,
}

/// Trace deviation above which a hierarchy run is flagged.
pub const TRACE_TOLERANCE: f64 = 1e-6;

impl HierarchySolution {
    pub fn trace_flagged(&self) -> bool {
        self.max_trace_dev > TRACE_TOLERANCE
    }
}

/// Steps `ρ` forward with the retained term classes using the implicit
/// trapezoid rule and records the term weights.
pub fn solve(model: &SystemModel, kernel: &CorrelationKernel, config: HierarchyConfig) -> Result<HierarchySolution> {
    let grid = kernel.grid();
    config.validate(grid)?;
    let dt = grid.dt;
    let mut engine = Engine::new(model, kernel, config);
    let len = engine.len;
    let mut rho = vec![flatten(model.rho0())];
    engine.set_state(0, &rho[0]);
    let mut w1 = vec![0.0];
    let mut w2 = vec![0.0];
    let mut f_prev = zeros(len);
    for k in 1..=grid.n {
        engine.set_state(k, &zeros(len));
        let g1 = engine.class1(k);
        let g2 = engine.class2(k);
        let (e1, e2) = engine.endpoints(k);
        let a = (&e1 + &e2) * c(0.5 * dt, 0.0);
        let rhs = &rho[k - 1] + (&f_prev + &g1 + &g2) * c(0.5 * dt, 0.0);
        let next = flatten(&implicit_solve(&a, &unflatten(&rhs)?, k)?);
        if next.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NonFinite { step: k });
        }
        engine.set_state(k, &next);
        let f1 = g1 + &e1 * &next;
        let f2 = g2 + &e2 * &next;
        w1.push(spectral_norm(&unflatten(&f1)?));
        w2.push(spectral_norm(&unflatten(&f2)?));
        f_prev = f1 + f2;
        rho.push(next);
    }
    let states = rho.iter().map(unflatten).collect::<Result<Vec<_>>>()?;
    let series = schrodinger_series(model, grid, states)?;
    let max_trace_dev = series.trace_deviation().into_iter().fold(0.0, f64::max);
    let min_eigenvalue = series.min_eigenvalues().into_iter().fold(f64::INFINITY, f64::min);
    Ok(HierarchySolution { series, weights: TermWeights::from_norms(grid, w1, w2), max_trace_dev, min_eigenvalue })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    TruncationValid,
    TruncationInvalid,
    Indeterminate,
}

impl Verdict {
    pub fn as_str(&self) -> &'static str {
        match self {
            Verdict::TruncationValid => "truncation-valid",
            Verdict::TruncationInvalid => "truncation-invalid",
            Verdict::Indeterminate => "indeterminate",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thresholds {
    /// Max ratio below which the truncation is accepted.
    pub valid_below: f64,
    /// Max ratio above which the truncation is rejected.
    pub invalid_above: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self { valid_below: 0.1, invalid_above: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TractabilityReport {
    pub verdict: Verdict,
    /// `max_k W2/W1` over steps where the ratio is defined.
    pub max_ratio: f64,
    pub max_ratio_time: Option<f64>,
    /// `∫ W2 dt`, the size of the last retained class over the run.
    pub error_estimate: f64,
    /// Steps where `W1` vanished and the ratio is undefined.
    pub undefined_steps: usize,
}

pub fn tractability_report(weights: &TermWeights, thresholds: Thresholds) -> TractabilityReport {
    let error_estimate = crate::quadrature::trapezoid(&weights.w2, weights.grid.dt);
    let undefined_steps = weights.ratio.iter().filter(|r| r.is_none()).count();
    let mut max_ratio = 0.0;
    let mut max_ratio_time = None;
    for (k, r) in weights.ratio.iter().enumerate() {
        if let Some(r) = *r {
            if r > max_ratio || max_ratio_time.is_none() {
                max_ratio = r;
                max_ratio_time = Some(weights.grid.time(k));
            }
        }
    }
    let verdict = if weights.w2.iter().all(|&w| w == 0.0) || max_ratio < thresholds.valid_below {
        Verdict::TruncationValid
    } else if max_ratio > thresholds.invalid_above {
        Verdict::TruncationInvalid
    } else {
        Verdict::Indeterminate
    };
    TractabilityReport { verdict, max_ratio, max_ratio_time, error_estimate, undefined_steps }
}

/// Scalar instance `dP/dt = Σ_λ g_λ(t) L(t) z_λ P` with `L(t) = e^{it}` and
/// `g_λ(t) = a_λ cos t + b_λ`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyInstance {
    pub z: Vec<Complex64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl ConsistencyInstance {
    pub fn two_mode() -> Self {
        Self { z: vec![c(0.3, -0.2), c(-0.1, 0.4)], a: vec![0.5, 0.0], b: vec![0.0, 0.3] }
    }

    fn drive(&self, t: f64, z: &[Complex64]) -> Complex64 {
        let l = Complex64::from_polar(1.0, t);
        (0..z.len()).map(|i| (self.a[i] * t.cos() + self.b[i]) * l * z[i]).sum()
    }

    fn coupling(&self, t: f64, mode: usize) -> Complex64 {
        Complex64::from_polar(self.a[mode] * t.cos() + self.b[mode], t)
    }
}

fn rk4_scalar(inst: &ConsistencyInstance, z: &[Complex64], dt: f64, n: usize) -> Vec<Complex64> {
    let mut p = c(1.0, 0.0);
    let mut out = vec![p];
    for k in 0..n {
        let t = k as f64 * dt;
        let f = |t: f64, p: Complex64| inst.drive(t, z) * p;
        let k1 = f(t, p);
        let k2 = f(t + 0.5 * dt, p + 0.5 * dt * k1);
        let k3 = f(t + 0.5 * dt, p + 0.5 * dt * k2);
        let k4 = f(t + dt, p + dt * k3);
        p += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        out.push(p);
    }
    out
}

/// Compares `∂P/∂z_mode` obtained by integrating the differentiated equation
/// (`dQ/dt = g L P + Σ g L z Q`) with a central finite difference of step `h`
/// applied to the integrated solution. Returns the largest discrepancy on the
/// grid.
pub fn appendix_consistency_check(inst: &ConsistencyInstance, mode: usize, dt: f64, n: usize, h: f64) -> f64 {
    let z = &inst.z;
    let mut p = c(1.0, 0.0);
    let mut q = c(0.0, 0.0);
    let mut derivative = vec![q];
    let f = |t: f64, p: Complex64, q: Complex64| {
        let d = inst.drive(t, z);
        (d * p, inst.coupling(t, mode) * p + d * q)
    };
    for k in 0..n {
        let t = k as f64 * dt;
        let (a1, b1) = f(t, p, q);
        let (a2, b2) = f(t + 0.5 * dt, p + 0.5 * dt * a1, q + 0.5 * dt * b1);
        let (a3, b3) = f(t + 0.5 * dt, p + 0.5 * dt * a2, q + 0.5 * dt * b2);
        let (a4, b4) = f(t + dt, p + dt * a3, q + dt * b3);
        p += dt / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4);
        q += dt / 6.0 * (b1 + 2.0 * b2 + 2.0 * b3 + b4);
        derivative.push(q);
    }
    let mut plus = z.clone();
    let mut minus = z.clone();
    plus[mode] += h;
    minus[mode] -= h;
    let pp = rk4_scalar(inst, &plus, dt, n);
    let pm = rk4_scalar(inst, &minus, dt, n);
    derivative.iter().zip(pp.iter().zip(&pm)).map(|(d, (a, b))| (d - (a - b) / (2.0 * h)).norm()).fold(0.0, f64::max)
}
