//! Small dense complex matrices (dimension 2 or 4) backing every state and
//! measurement operator in the crate.

use std::ops::{Add, Mul, Sub};

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

#[derive(Clone, Debug, PartialEq)]
pub struct ComplexMatrix(DMatrix<C64>);

impl ComplexMatrix {
    /// Builds a `dim`×`dim` matrix from row-major entries.
    pub fn new(dim: usize, entries: &[C64]) -> Result<Self> {
        if dim != 2 && dim != 4 {
            return Err(Error::domain(format!("unsupported dimension {dim}")));
        }
        if entries.len() != dim * dim {
            return Err(Error::Dimension {
                expected: dim * dim,
                found: entries.len(),
            });
        }
        if entries
            .iter()
            .any(|z| !z.re.is_finite() || !z.im.is_finite())
        {
            return Err(Error::domain("matrix entries must be finite"));
        }
        Ok(Self(DMatrix::from_row_slice(dim, dim, entries)))
    }

    pub fn from_real_rows(dim: usize, entries: &[f64]) -> Result<Self> {
        let c: Vec<C64> = entries.iter().map(|&x| C64::new(x, 0.0)).collect();
        Self::new(dim, &c)
    }

    pub fn zeros(dim: usize) -> Self {
        Self(DMatrix::zeros(dim, dim))
    }

    pub fn identity(dim: usize) -> Self {
        Self(DMatrix::identity(dim, dim))
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let d = diag.len();
        let mut m = DMatrix::zeros(d, d);
        for (k, &x) in diag.iter().enumerate() {
            m[(k, k)] = C64::new(x, 0.0);
        }
        Self(m)
    }

    /// `|v⟩⟨v|` for an (unnormalized) column vector.
    pub fn outer(v: &[C64]) -> Self {
        let d = v.len();
        Self(DMatrix::from_fn(d, d, |r, c| v[r] * v[c].conj()))
    }

    pub fn inner(&self) -> &DMatrix<C64> {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn get(&self, row: usize, col: usize) -> C64 {
        self.0[(row, col)]
    }

    pub fn set(&mut self, row: usize, col: usize, value: C64) {
        self.0[(row, col)] = value;
    }

    pub fn adjoint(&self) -> Self {
        Self(self.0.adjoint())
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    pub fn conj(&self) -> Self {
        Self(self.0.map(|z| z.conj()))
    }

    pub fn trace(&self) -> C64 {
        self.0.trace()
    }

    pub fn scale(&self, s: f64) -> Self {
        Self(self.0.map(|z| z * s))
    }

    /// `tr(self · other)` without forming the product.
    pub fn trace_product(&self, other: &Self) -> C64 {
        let d = self.dim();
        let mut acc = ZERO;
        for r in 0..d {
            for c in 0..d {
                acc += self.0[(r, c)] * other.0[(c, r)];
            }
        }
        acc
    }

    pub fn kron(&self, other: &Self) -> Self {
        Self(self.0.kronecker(&other.0))
    }

    /// Largest entrywise modulus of `A − A†`.
    pub fn hermiticity_error(&self) -> f64 {
        let d = self.dim();
        let mut worst = 0.0f64;
        for r in 0..d {
            for c in 0..d {
                worst = worst.max((self.0[(r, c)] - self.0[(c, r)].conj()).norm());
            }
        }
        worst
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn hermitian_part(&self) -> Self {
        Self((&self.0 + self.0.adjoint()) * C64::new(0.5, 0.0))
    }

    /// Eigen-decomposition of a Hermitian matrix, eigenvalues in ascending
    /// order; columns of the returned matrix are the eigenvectors.
    pub fn hermitian_eigen(&self) -> (Vec<f64>, Self) {
        let eig = self.hermitian_part().0.symmetric_eigen();
        let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let d = self.dim();
        let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
        let vectors = DMatrix::from_fn(d, d, |r, c| eig.eigenvectors[(r, order[c])]);
        (values, Self(vectors))
    }

    /// Rebuilds `V·diag(λ)·V†`.
    pub fn from_eigen(values: &[f64], vectors: &Self) -> Self {
        let d = values.len();
        let mut m = DMatrix::zeros(d, d);
        for (k, &lambda) in values.iter().enumerate() {
            if lambda == 0.0 {
                continue;
            }
            let v = vectors.0.column(k);
            m += (v * v.adjoint()) * C64::new(lambda, 0.0);
        }
        Self(m)
    }

    /// Square root of a positive-semidefinite Hermitian matrix; eigenvalues
    /// below zero are clipped.
    pub fn psd_sqrt(&self) -> Self {
        let (values, vectors) = self.hermitian_eigen();
        let roots: Vec<f64> = values.iter().map(|&l| l.max(0.0).sqrt()).collect();
        Self::from_eigen(&roots, &vectors)
    }

    pub fn entries_row_major(&self) -> Vec<C64> {
        let d = self.dim();
        let mut out = Vec::with_capacity(d * d);
        for r in 0..d {
            for c in 0..d {
                out.push(self.0[(r, c)]);
            }
        }
        out
    }
}

impl Add for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn add(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        ComplexMatrix(&self.0 + &rhs.0)
    }
}

impl Sub for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn sub(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        ComplexMatrix(&self.0 - &rhs.0)
    }
}

impl Mul for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn mul(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        ComplexMatrix(&self.0 * &rhs.0)
    }
}

/// Single-qubit Pauli operators in the order I, X, Y, Z.
pub fn paulis() -> [ComplexMatrix; 4] {
    [
        ComplexMatrix::identity(2),
        ComplexMatrix(DMatrix::from_row_slice(2, 2, &[ZERO, ONE, ONE, ZERO])),
        ComplexMatrix(DMatrix::from_row_slice(2, 2, &[ZERO, -I, I, ZERO])),
        ComplexMatrix(DMatrix::from_row_slice(2, 2, &[ONE, ZERO, ZERO, -ONE])),
    ]
}

/// The sixteen two-qubit Pauli products `σ_j ⊗ σ_k`, index `4j + k`.
pub fn two_qubit_paulis() -> Vec<ComplexMatrix> {
    let p = paulis();
    let mut out = Vec::with_capacity(16);
    for a in &p {
        for b in &p {
            out.push(a.kron(b));
        }
    }
    out
}

/// Partial trace over the first (idler) qubit of a 4×4 operator.
pub fn trace_out_first(m: &ComplexMatrix) -> ComplexMatrix {
    let mut out = ComplexMatrix::zeros(2);
    for s in 0..2 {
        for t in 0..2 {
            let v = m.get(s, t) + m.get(2 + s, 2 + t);
            out.set(s, t, v);
        }
    }
    out
}

/// Partial trace over the second (signal) qubit of a 4×4 operator.
pub fn trace_out_second(m: &ComplexMatrix) -> ComplexMatrix {
    let mut out = ComplexMatrix::zeros(2);
    for s in 0..2 {
        for t in 0..2 {
            let v = m.get(2 * s, 2 * t) + m.get(2 * s + 1, 2 * t + 1);
            out.set(s, t, v);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_dimensions() {
        assert!(ComplexMatrix::new(3, &[ZERO; 9]).is_err());
        assert!(ComplexMatrix::new(2, &[ZERO; 3]).is_err());
        assert!(ComplexMatrix::new(2, &[C64::new(f64::NAN, 0.0), ZERO, ZERO, ZERO]).is_err());
    }

    #[test]
    fn eigen_reconstructs() {
        let m = ComplexMatrix::new(
            2,
            &[
                C64::new(0.7, 0.0),
                C64::new(0.1, -0.2),
                C64::new(0.1, 0.2),
                C64::new(0.3, 0.0),
            ],
        )
        .unwrap();
        let (vals, vecs) = m.hermitian_eigen();
        assert!(vals[0] <= vals[1]);
        let back = ComplexMatrix::from_eigen(&vals, &vecs);
        assert!(back.max_abs_diff(&m) < 1e-12);
    }

    #[test]
    fn partial_traces_of_product() {
        let a = ComplexMatrix::from_diagonal(&[0.25, 0.75]);
        let b = ComplexMatrix::from_diagonal(&[0.4, 0.6]);
        let ab = a.kron(&b);
        assert!(trace_out_first(&ab).max_abs_diff(&b) < 1e-15);
        assert!(trace_out_second(&ab).max_abs_diff(&a) < 1e-15);
    }

    #[test]
    fn paulis_are_orthogonal() {
        let p = two_qubit_paulis();
        for (j, a) in p.iter().enumerate() {
            for (k, b) in p.iter().enumerate() {
                let t = a.trace_product(b);
                let expect = if j == k { 4.0 } else { 0.0 };
                assert!((t - C64::new(expect, 0.0)).norm() < 1e-14);
            }
        }
    }
}
