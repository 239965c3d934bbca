//! Two-qubit Pauli decomposition.
//!
//! Convention: `H = Σ c_PQ · 2π · (P⊗Q) / 2` with `c_PQ` in MHz and `H` in
//! rad/ns, so `c_PQ = Tr[(P⊗Q) H] / 2` converted to MHz. The first factor acts
//! on the control qubit, the second on the target.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{kron, require_hermitian, Operator, C64, I, ONE, ZERO};
use crate::units::{angular_to_mhz, mhz_to_angular};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Pauli {
    I,
    X,
    Y,
    Z,
}

impl Pauli {
    pub const ALL: [Pauli; 4] = [Pauli::I, Pauli::X, Pauli::Y, Pauli::Z];

    pub fn matrix(self) -> Operator {
        let m = match self {
            Pauli::I => [ONE, ZERO, ZERO, ONE],
            Pauli::X => [ZERO, ONE, ONE, ZERO],
            Pauli::Y => [ZERO, -I, I, ZERO],
            Pauli::Z => [ONE, ZERO, ZERO, -ONE],
        };
        Operator::from_row_slice(2, 2, &m)
    }

    fn index(self) -> usize {
        self as usize
    }

    fn from_char(c: char) -> Option<Self> {
        match c {
            'I' => Some(Pauli::I),
            'X' => Some(Pauli::X),
            'Y' => Some(Pauli::Y),
            'Z' => Some(Pauli::Z),
            _ => None,
        }
    }
}

impl fmt::Display for Pauli {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = match self {
            Pauli::I => 'I',
            Pauli::X => 'X',
            Pauli::Y => 'Y',
            Pauli::Z => 'Z',
        };
        write!(f, "{c}")
    }
}

/// Two-letter label, control first: `ZX` is Z on the control, X on the target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PauliLabel(pub Pauli, pub Pauli);

impl PauliLabel {
    pub fn all() -> impl Iterator<Item = PauliLabel> {
        Pauli::ALL
            .into_iter()
            .flat_map(|p| Pauli::ALL.into_iter().map(move |q| PauliLabel(p, q)))
    }

    pub fn matrix(self) -> Operator {
        kron(&self.0.matrix(), &self.1.matrix())
    }
}

impl fmt::Display for PauliLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.0, self.1)
    }
}

impl FromStr for PauliLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut chars = s.chars();
        match (
            chars.next().and_then(Pauli::from_char),
            chars.next().and_then(Pauli::from_char),
            chars.next(),
        ) {
            (Some(p), Some(q), None) => Ok(PauliLabel(p, q)),
            _ => Err(Error::invalid(
                "pauli label",
                format!("`{s}` is not a two-letter Pauli label"),
            )),
        }
    }
}

/// Real rates, in MHz, of the sixteen two-qubit Pauli terms.
///
/// The `II` entry only shifts the global phase and is kept for completeness.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PauliCoefficients {
    values: [[f64; 4]; 4],
}

impl PauliCoefficients {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn get(&self, label: PauliLabel) -> f64 {
        self.values[label.0.index()][label.1.index()]
    }

    pub fn set(&mut self, label: PauliLabel, mhz: f64) {
        self.values[label.0.index()][label.1.index()] = mhz;
    }

    /// Lookup by string label such as `"ZX"`. Panics on a malformed label.
    pub fn rate(&self, label: &str) -> f64 {
        self.get(label.parse().expect("valid Pauli label"))
    }

    pub fn with(mut self, label: &str, mhz: f64) -> Self {
        self.set(label.parse().expect("valid Pauli label"), mhz);
        self
    }

    pub fn iter(&self) -> impl Iterator<Item = (PauliLabel, f64)> + '_ {
        PauliLabel::all().map(move |l| (l, self.get(l)))
    }

    /// `Σ c_PQ · 2π · (P⊗Q) / 2` in rad/ns.
    pub fn reconstruct(&self) -> Operator {
        let mut h = Operator::zeros(4, 4);
        for (label, c) in self.iter() {
            if c != 0.0 {
                h += label.matrix() * C64::new(mhz_to_angular(c) / 2.0, 0.0);
            }
        }
        h
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut out = *self;
        out.values.iter_mut().flatten().for_each(|v| *v *= s);
        out
    }

    /// Largest |difference| over all non-identity labels.
    pub fn max_diff(&self, other: &Self) -> f64 {
        self.iter()
            .filter(|(l, _)| *l != PauliLabel(Pauli::I, Pauli::I))
            .map(|(l, v)| (v - other.get(l)).abs())
            .fold(0.0, f64::max)
    }
}

impl Serialize for PauliCoefficients {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let map: BTreeMap<String, f64> = self.iter().map(|(l, v)| (l.to_string(), v)).collect();
        map.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for PauliCoefficients {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let map = BTreeMap::<String, f64>::deserialize(deserializer)?;
        let mut out = PauliCoefficients::zero();
        for (k, v) in map {
            let label: PauliLabel = k.parse().map_err(serde::de::Error::custom)?;
            out.set(label, v);
        }
        Ok(out)
    }
}

/// Decompose a 4×4 Hermitian operator (rad/ns) into Pauli rates (MHz).
pub fn pauli_decompose(h: &Operator) -> Result<PauliCoefficients> {
    if h.nrows() != 4 || h.ncols() != 4 {
        return Err(Error::DimensionMismatch {
            expected: 4,
            found: h.nrows().max(h.ncols()),
        });
    }
    require_hermitian(h)?;
    let mut out = PauliCoefficients::zero();
    for label in PauliLabel::all() {
        let tr = (label.matrix() * h).trace();
        out.set(label, angular_to_mhz(tr.re / 2.0));
    }
    Ok(out)
}
