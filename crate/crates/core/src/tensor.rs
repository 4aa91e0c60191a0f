//! Small-tensor kernel: symmetric 3×3 tensors, their spectral calculus, and the
//! right polar decomposition of a deformation gradient.
//!
//! Symmetric tensors store six components in the order `[xx, yy, zz, xy, yz, xz]`.
//! Full 3×3 matrices (deformation gradients, rotations) use [`nalgebra::Matrix3`].

use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Eigenvalues at or below this are rejected by [`log_sym`].
pub const SPD_TOL: f64 = 1e-14;

const VOIGT_PAIRS: [(usize, usize); 6] = [(0, 0), (1, 1), (2, 2), (0, 1), (1, 2), (0, 2)];

/// Symmetric 3×3 tensor. Symmetry is structural: only six components exist.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SymTensor3(pub [f64; 6]);

impl SymTensor3 {
    pub const fn new(xx: f64, yy: f64, zz: f64, xy: f64, yz: f64, xz: f64) -> Self {
        Self([xx, yy, zz, xy, yz, xz])
    }

    pub const fn zero() -> Self {
        Self([0.0; 6])
    }

    pub const fn identity() -> Self {
        Self([1.0, 1.0, 1.0, 0.0, 0.0, 0.0])
    }

    pub const fn diag(a: f64, b: f64, c: f64) -> Self {
        Self([a, b, c, 0.0, 0.0, 0.0])
    }

    /// Spherical tensor `s·1`.
    pub const fn spherical(s: f64) -> Self {
        Self([s, s, s, 0.0, 0.0, 0.0])
    }

    /// Builds a symmetric tensor from the symmetric part of `m`.
    pub fn from_matrix(m: &Matrix3<f64>) -> Self {
        Self([
            m[(0, 0)],
            m[(1, 1)],
            m[(2, 2)],
            0.5 * (m[(0, 1)] + m[(1, 0)]),
            0.5 * (m[(1, 2)] + m[(2, 1)]),
            0.5 * (m[(0, 2)] + m[(2, 0)]),
        ])
    }

    pub fn to_matrix(&self) -> Matrix3<f64> {
        let [xx, yy, zz, xy, yz, xz] = self.0;
        Matrix3::new(xx, xy, xz, xy, yy, yz, xz, yz, zz)
    }

    /// Component `(i, j)`, zero-based.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (a, b) = if i <= j { (i, j) } else { (j, i) };
        match (a, b) {
            (0, 0) => self.0[0],
            (1, 1) => self.0[1],
            (2, 2) => self.0[2],
            (0, 1) => self.0[3],
            (1, 2) => self.0[4],
            (0, 2) => self.0[5],
            _ => panic!("index ({i}, {j}) out of range for a 3x3 tensor"),
        }
    }

    pub fn trace(&self) -> f64 {
        self.0[0] + self.0[1] + self.0[2]
    }

    /// Deviatoric part `a − (tr a / 3)·1`.
    pub fn dev(&self) -> Self {
        let m = self.trace() / 3.0;
        let [xx, yy, zz, xy, yz, xz] = self.0;
        Self([xx - m, yy - m, zz - m, xy, yz, xz])
    }

    /// Double contraction `a : b`.
    pub fn ddot(&self, other: &Self) -> f64 {
        let a = &self.0;
        let b = &other.0;
        a[0] * b[0] + a[1] * b[1] + a[2] * b[2] + 2.0 * (a[3] * b[3] + a[4] * b[4] + a[5] * b[5])
    }

    pub fn norm_squared(&self) -> f64 {
        self.ddot(self)
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        self.norm_squared().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn scale(&self, s: f64) -> Self {
        Self(self.0.map(|v| v * s))
    }

    /// `q · a · qᵀ`.
    pub fn rotate(&self, q: &Matrix3<f64>) -> Self {
        Self::from_matrix(&(q * self.to_matrix() * q.transpose()))
    }

    /// Symmetric product `f · a · fᵀ` for an arbitrary (not necessarily orthogonal) `f`.
    pub fn push_forward(&self, f: &Matrix3<f64>) -> Self {
        self.rotate(f)
    }

    /// Largest absolute component difference.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Iterates `((i, j), value)` over the six stored components.
    pub fn components(&self) -> impl Iterator<Item = ((usize, usize), f64)> + '_ {
        VOIGT_PAIRS.iter().copied().zip(self.0.iter().copied())
    }
}

impl Add for SymTensor3 {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        let mut out = self.0;
        for (o, r) in out.iter_mut().zip(rhs.0) {
            *o += r;
        }
        Self(out)
    }
}

impl AddAssign for SymTensor3 {
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

impl Sub for SymTensor3 {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        self + (-rhs)
    }
}

impl Neg for SymTensor3 {
    type Output = Self;
    fn neg(self) -> Self {
        Self(self.0.map(|v| -v))
    }
}

impl Mul<f64> for SymTensor3 {
    type Output = Self;
    fn mul(self, rhs: f64) -> Self {
        self.scale(rhs)
    }
}

impl Mul<SymTensor3> for f64 {
    type Output = SymTensor3;
    fn mul(self, rhs: SymTensor3) -> SymTensor3 {
        rhs.scale(self)
    }
}

/// Spectral decomposition of a symmetric tensor.
///
/// `values` are sorted descending; column `i` of `vectors` is the unit
/// eigenvector belonging to `values[i]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Spectral3 {
    pub values: [f64; 3],
    pub vectors: Matrix3<f64>,
}

impl Spectral3 {
    /// `Σ g(λᵢ) nᵢ ⊗ nᵢ`.
    pub fn map(&self, g: impl Fn(f64) -> f64) -> SymTensor3 {
        let d = Matrix3::from_diagonal(&nalgebra::Vector3::from(self.values.map(g)));
        SymTensor3::from_matrix(&(self.vectors * d * self.vectors.transpose()))
    }

    /// `Σ wᵢ nᵢ ⊗ nᵢ` for explicitly supplied principal values.
    pub fn compose(&self, principal: [f64; 3]) -> SymTensor3 {
        let d = Matrix3::from_diagonal(&nalgebra::Vector3::from(principal));
        SymTensor3::from_matrix(&(self.vectors * d * self.vectors.transpose()))
    }

    pub fn reconstruct(&self) -> SymTensor3 {
        self.map(|v| v)
    }
}

/// Spectral decomposition by cyclic Jacobi rotations.
///
/// Repeated eigenvalues are fine: any orthonormal basis of the eigenspace comes back.
pub fn eig_sym(a: &SymTensor3) -> Result<Spectral3> {
    if !a.is_finite() {
        return Err(Error::NonFinite("eig_sym"));
    }
    let scale = a.0.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return Ok(Spectral3 {
            values: [0.0; 3],
            vectors: Matrix3::identity(),
        });
    }
    let mut m = a.scale(1.0 / scale).to_matrix();
    let mut v = Matrix3::<f64>::identity();

    for _sweep in 0..64 {
        let off = m[(0, 1)].powi(2) + m[(0, 2)].powi(2) + m[(1, 2)].powi(2);
        if off < 1e-40 {
            break;
        }
        for (p, q) in [(0, 1), (0, 2), (1, 2)] {
            let apq = m[(p, q)];
            if apq.abs() < 1e-300 {
                continue;
            }
            let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
            let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
            let t = if theta == 0.0 { 1.0 } else { t };
            let c = 1.0 / (t * t + 1.0).sqrt();
            let s = t * c;
            let mut rot = Matrix3::<f64>::identity();
            rot[(p, p)] = c;
            rot[(q, q)] = c;
            rot[(p, q)] = s;
            rot[(q, p)] = -s;
            m = rot.transpose() * m * rot;
            m[(p, q)] = 0.0;
            m[(q, p)] = 0.0;
            v *= rot;
        }
    }

    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| m[(j, j)].total_cmp(&m[(i, i)]));
    let values = order.map(|i| m[(i, i)] * scale);
    let mut vectors = Matrix3::<f64>::zeros();
    for (col, &i) in order.iter().enumerate() {
        vectors.set_column(col, &v.column(i));
    }
    Ok(Spectral3 { values, vectors })
}

/// Tensor logarithm of a symmetric positive definite tensor.
pub fn log_sym(a: &SymTensor3) -> Result<SymTensor3> {
    let sp = eig_sym(a)?;
    if let Some(bad) = sp.values.iter().find(|&&v| v <= SPD_TOL) {
        return Err(Error::Domain(format!(
            "log_sym needs a positive definite argument, found eigenvalue {bad:e}"
        )));
    }
    Ok(sp.map(f64::ln))
}

/// Tensor exponential of a symmetric tensor.
pub fn exp_sym(a: &SymTensor3) -> Result<SymTensor3> {
    let out = eig_sym(a)?.map(f64::exp);
    if !out.is_finite() {
        return Err(Error::NonFinite("exp_sym (overflow)"));
    }
    Ok(out)
}

/// Deviatoric projection `a − (tr a / 3)·1`.
pub fn dev3(a: &SymTensor3) -> SymTensor3 {
    a.dev()
}

pub fn tr(a: &SymTensor3) -> f64 {
    a.trace()
}

/// Deformation gradient with positive determinant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DefGrad(Matrix3<f64>);

impl DefGrad {
    pub fn new(f: Matrix3<f64>) -> Result<Self> {
        if f.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("DefGrad"));
        }
        let det = f.determinant();
        if det <= 0.0 {
            return Err(Error::Domain(format!(
                "deformation gradient must have det F > 0, got {det:e}"
            )));
        }
        Ok(Self(f))
    }

    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    /// `F = 1 + γ e₁ ⊗ e₂`.
    pub fn simple_shear(gamma: f64) -> Self {
        let mut f = Matrix3::identity();
        f[(0, 1)] = gamma;
        Self(f)
    }

    /// Diagonal stretch from principal logarithmic strains.
    pub fn from_log_stretches(l1: f64, l2: f64, l3: f64) -> Self {
        Self(Matrix3::from_diagonal(&nalgebra::Vector3::new(
            l1.exp(),
            l2.exp(),
            l3.exp(),
        )))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn det(&self) -> f64 {
        self.0.determinant()
    }

    pub fn inverse(&self) -> Matrix3<f64> {
        self.0
            .try_inverse()
            .expect("det F > 0 is checked on construction")
    }

    /// Right Cauchy–Green tensor `FᵀF`.
    pub fn right_cauchy_green(&self) -> SymTensor3 {
        SymTensor3::from_matrix(&(self.0.transpose() * self.0))
    }

    /// Left Cauchy–Green (Finger) tensor `FFᵀ`.
    pub fn left_cauchy_green(&self) -> SymTensor3 {
        SymTensor3::from_matrix(&(self.0 * self.0.transpose()))
    }

    /// Material Hencky strain `log U = ½ log(FᵀF)`.
    pub fn log_right_stretch(&self) -> Result<SymTensor3> {
        Ok(log_sym(&self.right_cauchy_green())?.scale(0.5))
    }

    /// Spatial Hencky strain `log V = ½ log(FFᵀ)`.
    pub fn log_left_stretch(&self) -> Result<SymTensor3> {
        Ok(log_sym(&self.left_cauchy_green())?.scale(0.5))
    }

    /// `Q · F · Qᵀ`, the same deformation observed in a rotated frame.
    pub fn rotated(&self, q: &Matrix3<f64>) -> Self {
        Self(q * self.0 * q.transpose())
    }
}

/// Right polar decomposition `F = R·U`.
pub fn polar_right(f: &DefGrad) -> Result<(Matrix3<f64>, SymTensor3)> {
    let sp = eig_sym(&f.right_cauchy_green())?;
    if sp.values.iter().any(|&v| v <= SPD_TOL) {
        return Err(Error::Domain("singular deformation gradient".into()));
    }
    let u = sp.map(f64::sqrt);
    let u_inv = sp.map(|v| 1.0 / v.sqrt());
    let r = f.matrix() * u_inv.to_matrix();
    Ok((r, u))
}
