//! Time series of density matrices and their CSV representation.
//!
//! CSV layout: a header row, then one row per time with columns
//! `t, re_00, im_00, re_01, im_01, …` (entries in row-major order).

use std::io::{Read, Write};

use crate::liouville::{hermiticity_deviation, min_eigenvalue};
use crate::{c, CMatrix, Error, Result, TimeGrid};

#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrixSeries {
    pub grid: TimeGrid,
    pub states: Vec<CMatrix>,
    /// Per-entry standard errors, real and imaginary parts stored in the
    /// corresponding components.
    pub stderr: Option<Vec<CMatrix>>,
}

impl DensityMatrixSeries {
    pub fn new(grid: TimeGrid, states: Vec<CMatrix>) -> Result<Self> {
        if states.len() != grid.n + 1 {
            return Err(Error::Dimension { expected: grid.n + 1, got: states.len() });
        }
        let dim = states.first().map_or(0, |s| s.nrows());
        if let Some(bad) = states.iter().find(|s| s.nrows() != dim || s.ncols() != dim) {
            return Err(Error::Dimension { expected: dim, got: bad.nrows().max(bad.ncols()) });
        }
        Ok(Self { grid, states, stderr: None })
    }

    pub fn with_stderr(mut self, stderr: Vec<CMatrix>) -> Result<Self> {
        if stderr.len() != self.states.len() {
            return Err(Error::Dimension { expected: self.states.len(), got: stderr.len() });
        }
        self.stderr = Some(stderr);
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.states.first().map_or(0, |s| s.nrows())
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn times(&self) -> Vec<f64> {
        self.grid.times()
    }

    pub fn last(&self) -> &CMatrix {
        self.states.last().expect("series has at least one state")
    }

    /// `|tr ρ_k − 1|` per step.
    pub fn trace_deviation(&self) -> Vec<f64> {
        self.states.iter().map(|s| (s.trace() - c(1.0, 0.0)).norm()).collect()
    }

    /// `‖ρ_k − ρ_k†‖_F` per step.
    pub fn hermiticity_deviation(&self) -> Vec<f64> {
        self.states.iter().map(hermiticity_deviation).collect()
    }

    /// Smallest eigenvalue of the Hermitian part per step.
    pub fn min_eigenvalues(&self) -> Vec<f64> {
        self.states.iter().map(min_eigenvalue).collect()
    }

    pub fn map<F: Fn(f64, &CMatrix) -> CMatrix>(&self, f: F) -> Self {
        let states = self.states.iter().enumerate().map(|(k, s)| f(self.grid.time(k), s)).collect();
        Self { grid: self.grid, states, stderr: self.stderr.clone() }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        write_matrices(out, self.grid, &self.states)
    }

    /// Standard errors in the same layout; error if the series carries none.
    pub fn write_stderr_csv<W: Write>(&self, out: W) -> Result<()> {
        let se = self.stderr.as_ref().ok_or_else(|| Error::Precondition("series has no standard errors".into()))?;
        write_matrices(out, self.grid, se)
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let (grid, states) = read_matrices(input)?;
        Self::new(grid, states)
    }

    /// Attaches standard errors read from a CSV in series layout.
    pub fn read_stderr_csv<R: Read>(self, input: R) -> Result<Self> {
        let (grid, se) = read_matrices(input)?;
        check_grids(&self.grid, &grid)?;
        self.with_stderr(se)
    }
}

fn header(dim: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    for i in 0..dim {
        for j in 0..dim {
            h.push(format!("re_{i}{j}"));
            h.push(format!("im_{i}{j}"));
        }
    }
    h
}

fn write_matrices<W: Write>(out: W, grid: TimeGrid, states: &[CMatrix]) -> Result<()> {
    let dim = states.first().map_or(0, |s| s.nrows());
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header(dim))?;
    for (k, s) in states.iter().enumerate() {
        let mut row = Vec::with_capacity(1 + 2 * dim * dim);
        row.push(grid.time(k).to_string());
        for i in 0..dim {
            for j in 0..dim {
                row.push(s[(i, j)].re.to_string());
                row.push(s[(i, j)].im.to_string());
            }
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn read_matrices<R: Read>(input: R) -> Result<(TimeGrid, Vec<CMatrix>)> {
    let mut r = csv::Reader::from_reader(input);
    let width = r.headers()?.len();
    let dim = (((width.saturating_sub(1)) / 2) as f64).sqrt().round() as usize;
    if width < 3 || 1 + 2 * dim * dim != width {
        return Err(Error::Parse(format!("{width} columns do not describe a square matrix series")));
    }
    let mut times = Vec::new();
    let mut states = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let vals: Vec<f64> = rec
            .iter()
            .map(|f| f.trim().parse::<f64>().map_err(|e| Error::Parse(format!("'{f}': {e}"))))
            .collect::<Result<_>>()?;
        times.push(vals[0]);
        states.push(CMatrix::from_fn(dim, dim, |i, j| {
            let k = 1 + 2 * (i * dim + j);
            c(vals[k], vals[k + 1])
        }));
    }
    if times.is_empty() {
        return Err(Error::Parse("series has no rows".into()));
    }
    let n = times.len() - 1;
    let dt = if n == 0 { 1.0 } else { times[n] / n as f64 };
    for (k, &t) in times.iter().enumerate() {
        if (t - k as f64 * dt).abs() > 1e-9 * (1.0 + t.abs()) {
            return Err(Error::Parse(format!("time column is not uniform at row {k}")));
        }
    }
    Ok((TimeGrid::new(dt, n)?, states))
}

fn check_grids(a: &TimeGrid, b: &TimeGrid) -> Result<()> {
    if a.n != b.n || (a.dt - b.dt).abs() > 1e-12 * a.dt.max(b.dt) {
        return Err(Error::GridMismatch(format!("(dt={}, n={}) vs (dt={}, n={})", a.dt, a.n, b.dt, b.n)));
    }
    Ok(())
}

/// Entrywise distances between two series on a shared grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesDistance {
    /// `max_{k,i,j} |a_k[i,j] − b_k[i,j]|`.
    pub max: f64,
    /// Root mean square of `|a − b|` over all times and entries.
    pub l2: f64,
    /// Max distance restricted to diagonal entries.
    pub populations: f64,
    /// Max distance restricted to off-diagonal entries.
    pub coherences: f64,
    /// Root mean square of the deviation over the root mean square of the pooled
    /// standard error, when at least one side carries standard errors.
    pub pooled_se_ratio: Option<f64>,
    /// Largest per-component deviation in units of its pooled standard error.
    pub max_z: Option<f64>,
}

/// Compares `a` and `b`; errors if grids or dimensions differ.
pub fn compare_series(a: &DensityMatrixSeries, b: &DensityMatrixSeries) -> Result<SeriesDistance> {
    check_grids(&a.grid, &b.grid)?;
    if a.dim() != b.dim() {
        return Err(Error::Dimension { expected: a.dim(), got: b.dim() });
    }
    let dim = a.dim();
    let (mut max, mut sq, mut pops, mut cohs) = (0.0f64, 0.0, 0.0f64, 0.0f64);
    let mut count = 0usize;
    for (x, y) in a.states.iter().zip(&b.states) {
        for i in 0..dim {
            for j in 0..dim {
                let d = (x[(i, j)] - y[(i, j)]).norm();
                max = max.max(d);
                sq += d * d;
                count += 1;
                if i == j {
                    pops = pops.max(d);
                } else {
                    cohs = cohs.max(d);
                }
            }
        }
    }
    let l2 = if count > 0 { (sq / count as f64).sqrt() } else { 0.0 };

    let (pooled_se_ratio, max_z) = match (&a.stderr, &b.stderr) {
        (None, None) => (None, None),
        (sa, sb) => {
            let zero = CMatrix::zeros(dim, dim);
            let (mut dev2, mut se2, mut zmax) = (0.0, 0.0, 0.0f64);
            let mut parts = 0usize;
            for k in 0..a.len() {
                let ea = sa.as_ref().map_or(&zero, |s| &s[k]);
                let eb = sb.as_ref().map_or(&zero, |s| &s[k]);
                for i in 0..dim {
                    for j in 0..dim {
                        let d = a.states[k][(i, j)] - b.states[k][(i, j)];
                        let se_re = ea[(i, j)].re.hypot(eb[(i, j)].re);
                        let se_im = ea[(i, j)].im.hypot(eb[(i, j)].im);
                        for (dv, se) in [(d.re, se_re), (d.im, se_im)] {
                            if se > 0.0 && se.is_finite() {
                                dev2 += dv * dv;
                                se2 += se * se;
                                parts += 1;
                                zmax = zmax.max(dv.abs() / se);
                            }
                        }
                    }
                }
            }
            if parts == 0 {
                (None, None)
            } else {
                (Some((dev2 / se2).sqrt()), Some(zmax))
            }
        }
    };
    Ok(SeriesDistance { max, l2, populations: pops, coherences: cohs, pooled_se_ratio, max_z })
}
