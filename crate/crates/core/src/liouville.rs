//! System model and superoperator algebra on the flattened `N²`-dimensional
//! Liouville space.
//!
//! Flattening is column-major: entry `A[(i, j)]` sits at index `i + N·j`, which
//! is nalgebra's storage order. Under this convention `A ↦ L·A·R` is the
//! matrix `Rᵀ ⊗ L`.

use nalgebra::linalg::SymmetricEigen;

use crate::{c, CMatrix, CVector, Complex64, Error, Result, I};

const HERMITIAN_TOL: f64 = 1e-10;

pub(crate) fn hermiticity_deviation(m: &CMatrix) -> f64 {
    (m - m.adjoint()).norm()
}

/// Largest singular value.
pub fn spectral_norm(m: &CMatrix) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().singular_values().max()
}

/// Eigen-decomposition of a Hermitian matrix; ascending eigenvalues.
pub(crate) fn hermitian_eigen(m: &CMatrix) -> (Vec<f64>, CMatrix) {
    let sym = (m + m.adjoint()) * c(0.5, 0.0);
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vectors = CMatrix::from_fn(m.nrows(), m.ncols(), |r, col| eig.eigenvectors[(r, order[col])]);
    (values, vectors)
}

/// Smallest eigenvalue of the Hermitian part; negative values signal a loss
/// of positivity.
pub fn min_eigenvalue(m: &CMatrix) -> f64 {
    hermitian_eigen(m).0.first().copied().unwrap_or(0.0)
}

/// System Hamiltonian, Hermitian coupling operator and initial state, with the
/// eigenbasis of `H_S` cached for exact interaction-picture rotations.
#[derive(Debug, Clone)]
pub struct SystemModel {
    h_s: CMatrix,
    x: CMatrix,
    rho0: CMatrix,
    energies: Vec<f64>,
    basis: CMatrix,
    /// `X` in the energy eigenbasis.
    x_eigen: CMatrix,
}

impl SystemModel {
    pub fn new(h_s: CMatrix, x: CMatrix, rho0: CMatrix) -> Result<Self> {
        let n = h_s.nrows();
        for (name, m) in [("H_S", &h_s), ("X", &x), ("rho0", &rho0)] {
            if m.nrows() != n || m.ncols() != n {
                return Err(Error::Dimension { expected: n, got: m.nrows().max(m.ncols()) });
            }
            if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
                return Err(Error::Config(format!("{name} has non-finite entries")));
            }
            if hermiticity_deviation(m) > HERMITIAN_TOL {
                return Err(Error::Config(format!("{name} is not Hermitian")));
            }
        }
        if n == 0 {
            return Err(Error::Config("system dimension must be >= 1".into()));
        }
        let tr = rho0.trace();
        if (tr - c(1.0, 0.0)).norm() > HERMITIAN_TOL {
            return Err(Error::Config(format!("rho0 must have unit trace, got {tr}")));
        }
        if min_eigenvalue(&rho0) < -HERMITIAN_TOL {
            return Err(Error::Config("rho0 is not positive semidefinite".into()));
        }
        let (energies, basis) = hermitian_eigen(&h_s);
        let x_eigen = basis.adjoint() * &x * &basis;
        Ok(Self { h_s, x, rho0, energies, basis, x_eigen })
    }

    pub fn dim(&self) -> usize {
        self.h_s.nrows()
    }

    pub fn h_s(&self) -> &CMatrix {
        &self.h_s
    }

    pub fn x(&self) -> &CMatrix {
        &self.x
    }

    pub fn rho0(&self) -> &CMatrix {
        &self.rho0
    }

    pub fn with_rho0(&self, rho0: CMatrix) -> Result<Self> {
        Self::new(self.h_s.clone(), self.x.clone(), rho0)
    }

    pub fn with_coupling(&self, x: CMatrix) -> Result<Self> {
        Self::new(self.h_s.clone(), x, self.rho0.clone())
    }

    /// `U(t) = e^{−iH_S t}`.
    pub fn propagator(&self, t: f64) -> CMatrix {
        let mut scaled = self.basis.clone();
        for (col, &e) in self.energies.iter().enumerate() {
            let phase = Complex64::from_polar(1.0, -e * t);
            scaled.column_mut(col).iter_mut().for_each(|z| *z *= phase);
        }
        scaled * self.basis.adjoint()
    }

    /// `U(t) A U(t)†` (interaction picture to Schrödinger picture).
    pub fn to_schrodinger(&self, a: &CMatrix, t: f64) -> CMatrix {
        let u = self.propagator(t);
        &u * a * u.adjoint()
    }

    /// `U(t)† A U(t)` (Schrödinger picture to interaction picture).
    pub fn to_interaction(&self, a: &CMatrix, t: f64) -> CMatrix {
        let u = self.propagator(t);
        u.adjoint() * a * &u
    }

    /// Noise-free evolution `U(t) ρ₀ U(t)†`.
    pub fn unitary_evolution(&self, t: f64) -> CMatrix {
        self.to_schrodinger(&self.rho0, t)
    }
}

/// `X(t) = e^{iH_S t} X e^{−iH_S t}`, evaluated exactly in the energy eigenbasis.
pub fn rotate_coupling(model: &SystemModel, t: f64) -> CMatrix {
    let n = model.dim();
    let rotated = CMatrix::from_fn(n, n, |a, b| {
        model.x_eigen[(a, b)] * Complex64::from_polar(1.0, (model.energies[a] - model.energies[b]) * t)
    });
    &model.basis * rotated * model.basis.adjoint()
}

/// Column-major flattening.
pub fn flatten(a: &CMatrix) -> CVector {
    CVector::from_column_slice(a.as_slice())
}

pub fn unflatten(v: &CVector) -> Result<CMatrix> {
    let n = (v.len() as f64).sqrt().round() as usize;
    if n * n != v.len() {
        return Err(Error::Dimension { expected: n * n, got: v.len() });
    }
    Ok(CMatrix::from_column_slice(n, n, v.as_slice()))
}

/// Linear map on flattened `N×N` matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct Superoperator(pub CMatrix);

impl Superoperator {
    /// Superoperator of `A ↦ left·A·right`.
    pub fn sandwich(left: &CMatrix, right: &CMatrix) -> Self {
        Superoperator(right.transpose().kronecker(left))
    }

    pub fn identity(n: usize) -> Self {
        Superoperator(CMatrix::identity(n * n, n * n))
    }

    /// Dimension `N` of the matrices it acts on.
    pub fn system_dim(&self) -> usize {
        (self.0.nrows() as f64).sqrt().round() as usize
    }

    pub fn apply(&self, v: &CVector) -> Result<CVector> {
        if v.len() != self.0.ncols() {
            return Err(Error::Dimension { expected: self.0.ncols(), got: v.len() });
        }
        Ok(&self.0 * v)
    }

    pub fn apply_matrix(&self, a: &CMatrix) -> Result<CMatrix> {
        unflatten(&self.apply(&flatten(a))?)
    }

    /// `self ∘ other`.
    pub fn compose(&self, other: &Superoperator) -> Superoperator {
        Superoperator(&self.0 * &other.0)
    }

    pub fn scale(&self, factor: Complex64) -> Superoperator {
        Superoperator(&self.0 * factor)
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.0
    }
}

fn check_square(xt: &CMatrix) -> Result<()> {
    if xt.nrows() != xt.ncols() {
        return Err(Error::Dimension { expected: xt.nrows(), got: xt.ncols() });
    }
    Ok(())
}

/// `ℒ_M A = i[X_t, A]`.
pub fn commutator_superop(xt: &CMatrix) -> Result<Superoperator> {
    check_square(xt)?;
    let id = CMatrix::identity(xt.nrows(), xt.ncols());
    let left = Superoperator::sandwich(xt, &id);
    let right = Superoperator::sandwich(&id, xt);
    Ok(Superoperator((left.0 - right.0) * I))
}

/// `ℒ^c_M A = −½{X_t, A}`.
pub fn anticommutator_superop(xt: &CMatrix) -> Result<Superoperator> {
    check_square(xt)?;
    let id = CMatrix::identity(xt.nrows(), xt.ncols());
    let left = Superoperator::sandwich(xt, &id);
    let right = Superoperator::sandwich(&id, xt);
    Ok(Superoperator((left.0 + right.0) * c(-0.5, 0.0)))
}

/// Noise family: `j = 0` drives the real part of the correlation, `j = 1` the
/// causal imaginary part.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    Zero,
    One,
}

/// Whether the superoperator multiplies `z_{jλ}` (`Plain`) or `z*_{jλ}` (`Star`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Kind {
    Plain,
    Star,
}

impl Kind {
    pub fn other(self) -> Kind {
        match self {
            Kind::Plain => Kind::Star,
            Kind::Star => Kind::Plain,
        }
    }
}

/// `ℒ_0^0 = ℒ_0^* = ℒ_M`, `ℒ_1^0 = 2ℒ_M`, `ℒ_1^* = ℒ^c_M`.
pub fn family_superop(family: Family, kind: Kind, xt: &CMatrix) -> Result<Superoperator> {
    match (family, kind) {
        (Family::Zero, _) => commutator_superop(xt),
        (Family::One, Kind::Plain) => Ok(commutator_superop(xt)?.scale(c(2.0, 0.0))),
        (Family::One, Kind::Star) => anticommutator_superop(xt),
    }
}
