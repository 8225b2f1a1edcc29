//! Density matrices for one time-bin qubit and for idler–signal pairs.
//!
//! Two-qubit operators use the basis order `(e_i e_s, e_i l_s, l_i e_s, l_i l_s)`:
//! the idler is the first tensor factor.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::linalg::{ComplexMatrix, C64};

pub const HERMITIAN_TOL: f64 = 1e-10;
pub const TRACE_TOL: f64 = 1e-10;
pub const EIGEN_TOL: f64 = 1e-10;

/// Hermitian, unit-trace, positive-semidefinite operator of dimension 2 or 4.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    mat: ComplexMatrix,
}

impl DensityMatrix {
    pub fn new(mat: ComplexMatrix) -> Result<Self> {
        if !mat.is_finite() {
            return Err(Error::domain("density matrix has non-finite entries"));
        }
        let herm = mat.hermiticity_error();
        if herm > HERMITIAN_TOL {
            return Err(Error::domain(format!(
                "matrix is not Hermitian (error {herm:e})"
            )));
        }
        let tr = mat.trace();
        if (tr.re - 1.0).abs() > TRACE_TOL || tr.im.abs() > TRACE_TOL {
            return Err(Error::domain(format!("trace {} differs from 1", tr.re)));
        }
        let (vals, _) = mat.hermitian_eigen();
        if vals[0] < -EIGEN_TOL {
            return Err(Error::domain(format!("negative eigenvalue {:e}", vals[0])));
        }
        Ok(Self { mat })
    }

    pub fn maximally_mixed(dim: usize) -> Self {
        Self {
            mat: ComplexMatrix::identity(dim).scale(1.0 / dim as f64),
        }
    }

    /// Projector onto the normalized state vector `v`.
    pub fn pure(v: &[C64]) -> Result<Self> {
        let norm: f64 = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::domain("state vector must have nonzero finite norm"));
        }
        let unit: Vec<C64> = v.iter().map(|z| z / norm).collect();
        Self::new(ComplexMatrix::outer(&unit))
    }

    /// Qubit state from a Bloch vector (clipped to the unit ball).
    pub fn from_bloch(r: [f64; 3]) -> Self {
        let b = Bloch::new(r[0], r[1], r[2]).clipped();
        Self { mat: b.matrix() }
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.mat
    }

    pub fn dim(&self) -> usize {
        self.mat.dim()
    }

    pub fn bloch(&self) -> Option<[f64; 3]> {
        (self.dim() == 2).then(|| {
            let b = Bloch::from_matrix(&self.mat);
            [b.x, b.y, b.z]
        })
    }

    pub fn purity(&self) -> f64 {
        self.mat.trace_product(&self.mat).re
    }

    /// Mixes with the maximally mixed state: `(1−p)·ρ + p·I/d`.
    pub fn depolarize(&self, p: f64) -> Self {
        let d = self.dim();
        let mixed = ComplexMatrix::identity(d).scale(p / d as f64);
        Self {
            mat: &self.mat.scale(1.0 - p) + &mixed,
        }
    }

    /// Renders the structured text record: the dimension, then one
    /// `re im` line per entry in row-major order with 17 significant digits.
    pub fn to_text(&self) -> String {
        let mut out = format!("{}\n", self.dim());
        for z in self.mat.entries_row_major() {
            let _ = writeln!(out, "{:.16e} {:.16e}", z.re, z.im);
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let (ln, first) = lines
            .next()
            .ok_or_else(|| Error::Input("empty matrix record".into()))?;
        let dim: usize = first.trim().parse().map_err(|_| Error::Parse {
            line: ln + 1,
            column: 1,
            message: format!("expected dimension, found `{}`", first.trim()),
        })?;
        let mut entries = Vec::with_capacity(dim * dim);
        for (ln, line) in lines {
            let mut parts = line.split_whitespace();
            let mut next = |col: usize| -> Result<f64> {
                let tok = parts.next().ok_or(Error::Parse {
                    line: ln + 1,
                    column: col,
                    message: "expected `re im` pair".into(),
                })?;
                tok.parse().map_err(|_| Error::Parse {
                    line: ln + 1,
                    column: col,
                    message: format!("invalid number `{tok}`"),
                })
            };
            let re = next(1)?;
            let im = next(2)?;
            entries.push(C64::new(re, im));
        }
        Self::new(ComplexMatrix::new(dim, &entries)?)
    }
}

/// `|Φ⁺⟩⟨Φ⁺|` with `|Φ⁺⟩ = (|e_i e_s⟩ + |l_i l_s⟩)/√2`.
pub fn ket_phi_plus() -> DensityMatrix {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let v = [
        C64::new(h, 0.0),
        C64::new(0.0, 0.0),
        C64::new(0.0, 0.0),
        C64::new(h, 0.0),
    ];
    DensityMatrix {
        mat: ComplexMatrix::outer(&v),
    }
}

/// `V·|Φ⁺⟩⟨Φ⁺| + (1−V)·I/4`.
pub fn werner_state(visibility: f64) -> Result<DensityMatrix> {
    if !(0.0..=1.0).contains(&visibility) {
        return Err(Error::domain(format!(
            "visibility {visibility} outside [0, 1]"
        )));
    }
    Ok(ket_phi_plus().depolarize(1.0 - visibility))
}

/// Pair state with pump coherence `c`: populations ½ on `|ee⟩`, `|ll⟩` and
/// coherence `c/2` between them.
pub fn dephased_pair_state(coherence: f64) -> Result<DensityMatrix> {
    if !(0.0..=1.0).contains(&coherence) {
        return Err(Error::domain(format!(
            "coherence {coherence} outside [0, 1]"
        )));
    }
    let mut m = ComplexMatrix::zeros(4);
    m.set(0, 0, C64::new(0.5, 0.0));
    m.set(3, 3, C64::new(0.5, 0.0));
    m.set(0, 3, C64::new(0.5 * coherence, 0.0));
    m.set(3, 0, C64::new(0.5 * coherence, 0.0));
    Ok(DensityMatrix { mat: m })
}

/// Overlap `⟨ψ|ρ|ψ⟩` with the principal eigenvector of a rank-1 target.
pub fn fidelity(rho: &DensityMatrix, target_pure: &DensityMatrix) -> Result<f64> {
    if rho.dim() != target_pure.dim() {
        return Err(Error::Dimension {
            expected: target_pure.dim(),
            found: rho.dim(),
        });
    }
    let (vals, vecs) = target_pure.mat.hermitian_eigen();
    let top = *vals.last().unwrap();
    if top < 1.0 - 1e-8 {
        return Err(Error::domain(format!(
            "target state is not pure (largest eigenvalue {top})"
        )));
    }
    let d = rho.dim();
    let psi: Vec<C64> = (0..d).map(|r| vecs.get(r, d - 1)).collect();
    let mut acc = C64::new(0.0, 0.0);
    for r in 0..d {
        for c in 0..d {
            acc += psi[r].conj() * rho.mat.get(r, c) * psi[c];
        }
    }
    Ok(acc.re.clamp(0.0, 1.0))
}

/// Uhlmann fidelity `(tr √(√ρ σ √ρ))² = ‖√ρ √σ‖₁²`.
pub fn uhlmann_fidelity(a: &DensityMatrix, b: &DensityMatrix) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::Dimension {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    // singular values of √a·√b avoid amplifying round-off in rank-deficient cases
    let prod = &a.mat.psd_sqrt() * &b.mat.psd_sqrt();
    let root_sum: f64 = prod
        .inner()
        .clone()
        .svd(false, false)
        .singular_values
        .iter()
        .sum();
    Ok((root_sum * root_sum).clamp(0.0, 1.0))
}

/// Half the trace norm of `a − b`.
pub fn trace_distance(a: &DensityMatrix, b: &DensityMatrix) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::Dimension {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    let (vals, _) = (&a.mat - &b.mat).hermitian_eigen();
    Ok(0.5 * vals.iter().map(|l| l.abs()).sum::<f64>())
}

/// Nearest physical state under fixed-trace eigenvalue clipping.
///
/// The eigenvalues are first normalized to unit sum. Negative eigenvalues are
/// then zeroed starting from the most negative, and the accumulated deficit is
/// spread uniformly over the eigenvalues still kept, repeating until none is
/// negative.
pub fn project_to_physical(estimate: &ComplexMatrix) -> Result<DensityMatrix> {
    if !estimate.is_finite() {
        return Err(Error::domain("estimate has non-finite entries"));
    }
    let herm = estimate.hermiticity_error();
    if herm > 1e-8 {
        return Err(Error::domain(format!(
            "estimate is not Hermitian (error {herm:e})"
        )));
    }
    let (mut vals, vecs) = estimate.hermitian_eigen();
    let total: f64 = vals.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Reconstruction(format!(
            "estimate has non-positive trace {total}"
        )));
    }
    for v in &mut vals {
        *v /= total;
    }
    // ascending order: the most negative eigenvalues come first
    let d = vals.len();
    let mut deficit = 0.0;
    let mut kept = d;
    let mut k = 0;
    while k < d && vals[k] + deficit / (kept as f64) < 0.0 {
        deficit += vals[k];
        vals[k] = 0.0;
        kept -= 1;
        k += 1;
    }
    if kept > 0 {
        let share = deficit / kept as f64;
        for v in vals.iter_mut().skip(k) {
            *v += share;
        }
    }
    DensityMatrix::new(ComplexMatrix::from_eigen(&vals, &vecs).hermitian_part())
}

/// Qubit Bloch vector; `ρ = (I + xX + yY + zZ)/2` in the `(e, l)` basis.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Bloch {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Bloch {
    pub const MIXED: Bloch = Bloch {
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };
    pub const EARLY: Bloch = Bloch {
        x: 0.0,
        y: 0.0,
        z: 1.0,
    };
    pub const LATE: Bloch = Bloch {
        x: 0.0,
        y: 0.0,
        z: -1.0,
    };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn norm(&self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn clipped(self) -> Self {
        let n = self.norm();
        if n > 1.0 {
            self.scaled(1.0 / n)
        } else {
            self
        }
    }

    pub fn scaled(self, s: f64) -> Self {
        Self::new(self.x * s, self.y * s, self.z * s)
    }

    pub fn from_matrix(m: &ComplexMatrix) -> Self {
        let tr = m.trace().re;
        let r01 = m.get(0, 1);
        Self::new(
            2.0 * r01.re / tr,
            -2.0 * r01.im / tr,
            (m.get(0, 0).re - m.get(1, 1).re) / tr,
        )
    }

    pub fn matrix(&self) -> ComplexMatrix {
        let mut m = ComplexMatrix::zeros(2);
        m.set(0, 0, C64::new(0.5 * (1.0 + self.z), 0.0));
        m.set(1, 1, C64::new(0.5 * (1.0 - self.z), 0.0));
        m.set(0, 1, C64::new(0.5 * self.x, -0.5 * self.y));
        m.set(1, 0, C64::new(0.5 * self.x, 0.5 * self.y));
        m
    }
}
