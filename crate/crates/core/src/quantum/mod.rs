//! Dense complex linear algebra for the small Hilbert spaces of a transmon
//! pair: operators, Pauli decomposition, matrix exponential, fidelities and
//! reduced states.

mod expm;
mod fidelity;
mod pauli;
mod state;

pub use expm::{expm_hermitian, matrix_exp};
pub use fidelity::{
    average_gate_fidelity, channel_average_fidelity, subspace_average_fidelity, unitary_superop,
};
pub use pauli::{pauli_decompose, Pauli, PauliCoefficients, PauliLabel};
pub use state::{bloch_vector_of_target, QubitState, TargetBloch, LEAKAGE_WARNING_THRESHOLD};

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::{Error, Result};

pub type C64 = Complex64;

/// Dense square complex matrix. Hamiltonians are stored in rad/ns.
pub type Operator = DMatrix<C64>;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

pub fn identity(dim: usize) -> Operator {
    Operator::identity(dim, dim)
}

pub fn kron(a: &Operator, b: &Operator) -> Operator {
    a.kronecker(b)
}

pub fn commutator(a: &Operator, b: &Operator) -> Operator {
    a * b - b * a
}

/// Largest entry modulus of `a - b`.
pub fn max_abs_diff(a: &Operator, b: &Operator) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}

pub fn max_abs(a: &Operator) -> f64 {
    a.iter().map(|x| x.norm()).fold(0.0, f64::max)
}

/// ‖H − H†‖_max.
pub fn hermiticity_error(h: &Operator) -> f64 {
    max_abs_diff(h, &h.adjoint())
}

/// ‖U†U − I‖_max.
pub fn unitarity_error(u: &Operator) -> f64 {
    max_abs_diff(&(u.adjoint() * u), &identity(u.nrows()))
}

pub(crate) fn require_square(a: &Operator) -> Result<usize> {
    if a.nrows() != a.ncols() {
        return Err(Error::DimensionMismatch {
            expected: a.nrows(),
            found: a.ncols(),
        });
    }
    Ok(a.nrows())
}

pub(crate) fn require_hermitian(h: &Operator) -> Result<()> {
    require_square(h)?;
    let err = hermiticity_error(h);
    if err > 1e-9 * max_abs(h).max(1.0) {
        return Err(Error::NotHermitian(err));
    }
    Ok(())
}

/// Eigen-decomposition of a Hermitian matrix, eigenvalues ascending.
/// Column `k` of the returned matrix is the eigenvector of `values[k]`.
pub fn eigh(h: &Operator) -> Result<(Vec<f64>, Operator)> {
    require_hermitian(h)?;
    let n = h.nrows();
    // Symmetrize so tiny round-off asymmetry does not leak into the solver.
    let sym = (h + h.adjoint()) * C64::new(0.5, 0.0);
    let eig = sym.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[a]
            .partial_cmp(&eig.eigenvalues[b])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let mut vectors = Operator::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    Ok((values, vectors))
}

/// Random Hermitian matrix with standard-normal entries (GUE-like), used by
/// property tests and the acceptance suite.
pub fn random_hermitian<R: rand::Rng + ?Sized>(dim: usize, rng: &mut R) -> Operator {
    use rand_distr::{Distribution, StandardNormal};
    let mut h = Operator::zeros(dim, dim);
    for i in 0..dim {
        let d: f64 = StandardNormal.sample(rng);
        h[(i, i)] = C64::new(d, 0.0);
        for j in (i + 1)..dim {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            let z = C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2;
            h[(i, j)] = z;
            h[(j, i)] = z.conj();
        }
    }
    h
}

/// Haar-random unitary via QR of a complex Ginibre matrix with the phase fix.
pub fn random_unitary<R: rand::Rng + ?Sized>(dim: usize, rng: &mut R) -> Operator {
    use rand_distr::{Distribution, StandardNormal};
    let g = Operator::from_fn(dim, dim, |_, _| {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        C64::new(re, im)
    });
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..dim {
        let d = r[(j, j)];
        let phase = if d.norm() > 0.0 { d / d.norm() } else { ONE };
        for i in 0..dim {
            q[(i, j)] *= phase;
        }
    }
    q
}
