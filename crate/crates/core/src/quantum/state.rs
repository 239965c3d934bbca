use nalgebra::DVector;

use super::{Operator, C64};
use crate::{Error, Result};

/// Leakage weight above which a reduced Bloch vector is flagged.
pub const LEAKAGE_WARNING_THRESHOLD: f64 = 0.05;

/// State of the transmon pair, with `levels` levels per transmon and the
/// control transmon as the most significant index (`i = c·levels + t`).
#[derive(Debug, Clone, PartialEq)]
pub enum QubitState {
    Pure {
        levels: usize,
        amplitudes: DVector<C64>,
    },
    Mixed {
        levels: usize,
        density: Operator,
    },
}

impl QubitState {
    /// Product basis state `|control⟩ ⊗ |target⟩`.
    pub fn basis(levels: usize, control: usize, target: usize) -> Self {
        let mut amplitudes = DVector::zeros(levels * levels);
        amplitudes[control * levels + target] = C64::new(1.0, 0.0);
        QubitState::Pure { levels, amplitudes }
    }

    pub fn pure(levels: usize, amplitudes: DVector<C64>) -> Result<Self> {
        if amplitudes.len() != levels * levels {
            return Err(Error::DimensionMismatch {
                expected: levels * levels,
                found: amplitudes.len(),
            });
        }
        let norm = amplitudes.norm();
        if (norm - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(
                "amplitudes",
                format!("norm {norm} is not 1"),
            ));
        }
        Ok(QubitState::Pure { levels, amplitudes })
    }

    pub fn mixed(levels: usize, density: Operator) -> Result<Self> {
        let d = levels * levels;
        if density.nrows() != d || density.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: density.nrows(),
            });
        }
        let tr = density.trace();
        if (tr.re - 1.0).abs() > 1e-10 || tr.im.abs() > 1e-10 {
            return Err(Error::invalid("density", format!("trace {tr} is not 1")));
        }
        super::require_hermitian(&density)?;
        let (vals, _) = super::eigh(&density)?;
        if vals[0] < -1e-10 {
            return Err(Error::invalid(
                "density",
                format!("negative eigenvalue {}", vals[0]),
            ));
        }
        Ok(QubitState::Mixed { levels, density })
    }

    pub fn levels(&self) -> usize {
        match self {
            QubitState::Pure { levels, .. } | QubitState::Mixed { levels, .. } => *levels,
        }
    }

    pub fn density(&self) -> Operator {
        match self {
            QubitState::Pure { amplitudes, .. } => amplitudes * amplitudes.adjoint(),
            QubitState::Mixed { density, .. } => density.clone(),
        }
    }
}

/// Reduced target Bloch vector with the weight found outside the two-qubit
/// computational subspace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetBloch {
    pub vector: [f64; 3],
    pub leakage: f64,
    pub leakage_warning: bool,
}

/// `(⟨X⟩, ⟨Y⟩, ⟨Z⟩)` of the target after projecting onto the qubit subspace,
/// renormalizing and tracing out the control.
pub fn bloch_vector_of_target(state: &QubitState) -> Result<TargetBloch> {
    let levels = state.levels();
    if levels < 2 {
        return Err(Error::invalid(
            "levels",
            "need at least two levels per transmon",
        ));
    }
    let rho = state.density();
    let idx = |c: usize, t: usize| c * levels + t;
    let mut reduced = [[C64::new(0.0, 0.0); 2]; 2];
    let mut kept = 0.0;
    for c in 0..2 {
        for a in 0..2 {
            for b in 0..2 {
                reduced[a][b] += rho[(idx(c, a), idx(c, b))];
            }
            kept += rho[(idx(c, a), idx(c, a))].re;
        }
    }
    let leakage = (1.0 - kept).max(0.0);
    if kept <= 0.0 {
        return Err(Error::Degenerate(
            "state has no weight in the qubit subspace".into(),
        ));
    }
    let x = 2.0 * reduced[0][1].re / kept;
    let y = -2.0 * reduced[0][1].im / kept;
    let z = (reduced[0][0].re - reduced[1][1].re) / kept;
    Ok(TargetBloch {
        vector: [x, y, z],
        leakage,
        leakage_warning: leakage > LEAKAGE_WARNING_THRESHOLD,
    })
}
