use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::ComplexMatrix;
use crate::state::DensityMatrix;

pub const COMPLETENESS_TOL: f64 = 1e-9;

/// Arrival slot behind an unbalanced interferometer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Slot {
    Early,
    Central,
    Late,
}

impl Slot {
    pub const ALL: [Slot; 3] = [Slot::Early, Slot::Central, Slot::Late];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(k: usize) -> Option<Slot> {
        Self::ALL.get(k).copied()
    }

    /// Number of interferometer delays added to the arrival time.
    pub fn shift(self) -> f64 {
        self.index() as f64
    }

    pub fn name(self) -> &'static str {
        match self {
            Slot::Early => "early",
            Slot::Central => "central",
            Slot::Late => "late",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PovmElement {
    mat: ComplexMatrix,
    slot: Option<Slot>,
}

impl PovmElement {
    pub fn new(mat: ComplexMatrix, slot: Option<Slot>) -> Result<Self> {
        if mat.hermiticity_error() > 1e-10 {
            return Err(Error::domain("POVM element is not Hermitian"));
        }
        let (vals, _) = mat.hermitian_eigen();
        let lo = vals[0];
        let hi = *vals.last().unwrap();
        if lo < -1e-10 || hi > 1.0 + 1e-10 {
            return Err(Error::domain(format!(
                "POVM element eigenvalues [{lo}, {hi}] outside [0, 1]"
            )));
        }
        Ok(Self { mat, slot })
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.mat
    }

    /// `None` marks the no-click element.
    pub fn slot(&self) -> Option<Slot> {
        self.slot
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PovmSet {
    elements: Vec<PovmElement>,
    no_click: PovmElement,
}

impl PovmSet {
    /// Builds the set, deriving `no_click = I − ΣE`.
    pub fn complete(elements: Vec<PovmElement>) -> Result<Self> {
        let d = elements
            .first()
            .map(|e| e.mat.dim())
            .ok_or_else(|| Error::domain("POVM needs at least one element"))?;
        let mut rest = ComplexMatrix::identity(d);
        for e in &elements {
            if e.mat.dim() != d {
                return Err(Error::Dimension {
                    expected: d,
                    found: e.mat.dim(),
                });
            }
            rest = &rest - &e.mat;
        }
        let no_click = PovmElement::new(rest.hermitian_part(), None)?;
        Ok(Self { elements, no_click })
    }

    pub fn elements(&self) -> &[PovmElement] {
        &self.elements
    }

    pub fn no_click(&self) -> &PovmElement {
        &self.no_click
    }

    pub fn dim(&self) -> usize {
        self.no_click.mat.dim()
    }

    /// Largest entrywise deviation of `ΣE + no_click` from the identity.
    pub fn completeness_error(&self) -> f64 {
        let mut sum = self.no_click.mat.clone();
        for e in &self.elements {
            sum = &sum + &e.mat;
        }
        sum.max_abs_diff(&ComplexMatrix::identity(self.dim()))
    }

    /// Element for `slot`, if the set has one.
    pub fn element(&self, slot: Slot) -> Option<&PovmElement> {
        self.elements.iter().find(|e| e.slot == Some(slot))
    }
}

/// `tr(ρ·E)` for each element followed by the no-click probability.
pub fn born_probabilities(rho: &DensityMatrix, povm: &PovmSet) -> Result<Vec<f64>> {
    if rho.dim() != povm.dim() {
        return Err(Error::domain(format!(
            "state has dimension {} but POVM acts on {}",
            rho.dim(),
            povm.dim()
        )));
    }
    let mut out: Vec<f64> = povm
        .elements
        .iter()
        .chain(std::iter::once(&povm.no_click))
        .map(|e| rho.matrix().trace_product(&e.mat).re.clamp(0.0, 1.0))
        .collect();
    // absorb rounding so the list sums to one
    let total: f64 = out.iter().sum();
    let last = out.len() - 1;
    out[last] = (out[last] + 1.0 - total).clamp(0.0, 1.0);
    Ok(out)
}
