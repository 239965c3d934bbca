//! Effective CR Hamiltonian by least-action block diagonalization.
//!
//! The driven two-transmon Hamiltonian (rotating frame at the target
//! frequency, CR tone resonant with the target) is block-diagonalized with
//! the unitary closest to the identity, `T = X·X_BD†·(X_BD·X_BD†)^{-1/2}`,
//! where `X` holds the eigenvectors reordered into blocks and `X_BD` is its
//! block-diagonal part. The qubit-qubit block of `T†HT` is then expanded in
//! Pauli products.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::device::{Channel, DeviceModel, DeviceParams, DriveConfig};
use crate::quantum::{eigh, pauli_decompose, Operator, PauliCoefficients, C64, ZERO};
use crate::units::GHZ;
use crate::{Error, Result};

/// Partition of basis indices into ordered blocks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockSpec {
    blocks: Vec<Vec<usize>>,
    dim: usize,
}

impl BlockSpec {
    pub fn new(mut blocks: Vec<Vec<usize>>) -> Result<Self> {
        let dim: usize = blocks.iter().map(|b| b.len()).sum();
        let mut seen = vec![false; dim];
        for b in blocks.iter_mut() {
            if b.is_empty() {
                return Err(Error::invalid("blocks", "empty block"));
            }
            b.sort_unstable();
            for &i in b.iter() {
                if i >= dim || seen[i] {
                    return Err(Error::invalid(
                        "blocks",
                        format!("index {i} repeated or out of range"),
                    ));
                }
                seen[i] = true;
            }
        }
        Ok(Self { blocks, dim })
    }

    /// Control in |0⟩ with target in {0, 1}; control in |1⟩ with target in
    /// {0, 1}; everything else.
    pub fn cr_blocks(levels: usize) -> Self {
        let q0 = vec![0, 1];
        let q1 = vec![levels, levels + 1];
        let rest: Vec<usize> = (0..levels * levels)
            .filter(|i| !q0.contains(i) && !q1.contains(i))
            .collect();
        let mut blocks = vec![q0, q1];
        if !rest.is_empty() {
            blocks.push(rest);
        }
        Self::new(blocks).expect("valid partition")
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn block_of(&self) -> Vec<usize> {
        let mut out = vec![0; self.dim];
        for (b, idx) in self.blocks.iter().enumerate() {
            for &i in idx {
                out[i] = b;
            }
        }
        out
    }

    /// Zero every entry that couples different blocks.
    pub fn block_part(&self, m: &Operator) -> Operator {
        let of = self.block_of();
        Operator::from_fn(m.nrows(), m.ncols(), |i, j| {
            if of[i] == of[j] {
                m[(i, j)]
            } else {
                ZERO
            }
        })
    }
}

#[derive(Debug, Clone)]
pub struct BlockDiagonalization {
    pub t: Operator,
    pub h_bd: Operator,
}

/// Least-action block diagonalization of a Hermitian `h`.
///
/// Eigenvectors are assigned to blocks greedily by their weight inside each
/// block (largest weight first, ties broken by eigenvalue index, then block
/// index), respecting block sizes.
pub fn least_action_blockdiag(h: &Operator, blocks: &BlockSpec) -> Result<BlockDiagonalization> {
    let n = crate::quantum::require_square(h)?;
    if n != blocks.dim() {
        return Err(Error::DimensionMismatch {
            expected: blocks.dim(),
            found: n,
        });
    }
    let (_, x) = eigh(h)?;
    let nb = blocks.blocks().len();
    let weight = |k: usize, b: usize| -> f64 {
        blocks.blocks()[b]
            .iter()
            .map(|&i| x[(i, k)].norm_sqr())
            .sum()
    };
    let mut pairs: Vec<(f64, usize, usize)> = Vec::with_capacity(n * nb);
    for k in 0..n {
        for b in 0..nb {
            pairs.push((weight(k, b), k, b));
        }
    }
    pairs.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap()
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });
    let mut capacity: Vec<usize> = blocks.blocks().iter().map(|b| b.len()).collect();
    let mut assigned: Vec<Option<usize>> = vec![None; n];
    for (_, k, b) in pairs {
        if assigned[k].is_none() && capacity[b] > 0 {
            assigned[k] = Some(b);
            capacity[b] -= 1;
        }
    }
    // Place the eigenvectors of block b (ascending eigenvalue) at b's indices.
    let mut xr = Operator::zeros(n, n);
    let mut next = vec![0usize; nb];
    for (k, b) in assigned.iter().enumerate() {
        let b = b.expect("every eigenvector assigned");
        let col = blocks.blocks()[b][next[b]];
        next[b] += 1;
        xr.set_column(col, &x.column(k));
    }
    let x_bd = blocks.block_part(&xr);
    let gram = &x_bd * x_bd.adjoint();
    let (g_vals, g_vecs) = eigh(&gram)?;
    let min_sv = g_vals[0].max(0.0).sqrt();
    if min_sv < 1e-8 {
        let overlap = (0..n)
            .map(|k| (0..nb).map(|b| weight(k, b)).collect())
            .collect();
        return Err(Error::AmbiguousBlockAssignment {
            min_singular: min_sv,
            overlap,
        });
    }
    let inv_sqrt = Operator::from_diagonal(&nalgebra::DVector::from_iterator(
        n,
        g_vals.iter().map(|v| C64::new(1.0 / v.sqrt(), 0.0)),
    ));
    let gram_inv_sqrt = &g_vecs * inv_sqrt * g_vecs.adjoint();
    let t = &xr * x_bd.adjoint() * gram_inv_sqrt;
    let h_bd = t.adjoint() * h * &t;
    Ok(BlockDiagonalization { t, h_bd })
}

fn drive_hamiltonian(model: &DeviceModel, drives: &[DriveConfig]) -> Result<Operator> {
    let frame = model.params.f_target;
    let mut h = model.static_hamiltonian(frame);
    for d in drives {
        if (d.carrier_freq - frame).abs() > 1e-12 {
            return Err(Error::invalid(
                "carrier_freq",
                "effective rates need drives resonant with the target frame",
            ));
        }
        model.add_drive(
            &mut h,
            d.channel,
            d.carrier_freq,
            C64::from_polar(d.amplitude, d.phase),
            frame,
            0.0,
        );
    }
    Ok(h)
}

/// Pauli rates (MHz) of the effective qubit-qubit Hamiltonian under constant
/// target-frequency drives. Reported in the frame where each transmon rotates
/// at its bare frequency, so ZI holds only drive and coupling shifts.
pub fn effective_cr_coefficients(
    p: &DeviceParams,
    drives: &[DriveConfig],
) -> Result<PauliCoefficients> {
    let model = DeviceModel::new(p.clone())?;
    effective_coefficients_for(&model, drives)
}

fn effective_coefficients_for(
    model: &DeviceModel,
    drives: &[DriveConfig],
) -> Result<PauliCoefficients> {
    let l = model.levels();
    let h = drive_hamiltonian(model, drives)?;
    let bd = least_action_blockdiag(&h, &BlockSpec::cr_blocks(l))?;
    let idx = [0, 1, l, l + 1];
    let detuning = GHZ * (model.params.f_control - model.params.f_target);
    let q = Operator::from_fn(4, 4, |i, j| {
        let mut v = bd.h_bd[(idx[i], idx[j])];
        if i == j && i >= 2 {
            v -= C64::new(detuning, 0.0);
        }
        v
    });
    let q = (&q + q.adjoint()) * C64::new(0.5, 0.0);
    pauli_decompose(&q)
}

/// One row of an amplitude sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryPoint {
    /// MHz; negative values drive at `phase + π`.
    pub amplitude: f64,
    pub coefficients: PauliCoefficients,
}

/// Effective rates for a CR drive on the control line at each amplitude.
/// `amplitudes` must be monotone.
pub fn theory_curve_vs_amplitude(
    p: &DeviceParams,
    amplitudes: &[f64],
    phase: f64,
) -> Result<Vec<TheoryPoint>> {
    if amplitudes.is_empty() {
        return Err(Error::invalid("amplitudes", "empty list"));
    }
    let inc = amplitudes.windows(2).all(|w| w[1] >= w[0]);
    let dec = amplitudes.windows(2).all(|w| w[1] <= w[0]);
    if !(inc || dec) {
        return Err(Error::invalid("amplitudes", "must be monotone"));
    }
    let model = DeviceModel::new(p.clone())?;
    amplitudes
        .par_iter()
        .map(|&a| {
            let (amp, ph) = if a < 0.0 {
                (-a, phase + PI)
            } else {
                (a, phase)
            };
            let d = DriveConfig::new(Channel::ControlLine, p.f_target, amp, ph)?;
            Ok(TheoryPoint {
                amplitude: a,
                coefficients: effective_coefficients_for(&model, &[d])?,
            })
        })
        .collect()
}

pub const THEORY_CSV_HEADER: &str = "amplitude_mhz,IX,IY,IZ,ZX,ZY,ZZ,ZI";

/// CSV table of a theory sweep (rates in MHz).
pub fn theory_curve_csv(points: &[TheoryPoint]) -> String {
    let mut out = String::from(THEORY_CSV_HEADER);
    out.push('\n');
    for pt in points {
        let c = &pt.coefficients;
        let row: Vec<String> = std::iter::once(pt.amplitude)
            .chain(
                ["IX", "IY", "IZ", "ZX", "ZY", "ZZ", "ZI"]
                    .iter()
                    .map(|l| c.rate(l)),
            )
            .map(|v| format!("{v}"))
            .collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantum::{
        identity, max_abs, max_abs_diff, random_hermitian, random_unitary, unitarity_error,
    };
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn frob(m: &Operator) -> f64 {
        m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    fn two_blocks() -> BlockSpec {
        BlockSpec::new(vec![vec![0, 1], vec![2, 3]]).unwrap()
    }

    #[test]
    fn block_diagonal_input_is_untouched() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let h = two_blocks().block_part(&random_hermitian(4, &mut rng));
        let bd = least_action_blockdiag(&h, &two_blocks()).unwrap();
        assert!(max_abs_diff(&bd.t, &identity(4)) < 1e-10);
        assert!(max_abs_diff(&bd.h_bd, &h) < 1e-10);
    }

    #[test]
    fn perturbative_generator() {
        let eps = 1e-3;
        let e = [0.0, 1.0, 3.0, 4.5];
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let v = random_hermitian(4, &mut rng);
        let v_off = &v - two_blocks().block_part(&v);
        let h = Operator::from_diagonal(&nalgebra::DVector::from_iterator(
            4,
            e.iter().map(|&x| C64::new(x, 0.0)),
        )) + &v_off * C64::new(eps, 0.0);
        let bd = least_action_blockdiag(&h, &two_blocks()).unwrap();
        // First order: T ≈ I + S with S_ij = εV_ij/(E_j − E_i) off-block.
        let s = Operator::from_fn(4, 4, |i, j| {
            if v_off[(i, j)].norm() == 0.0 {
                ZERO
            } else {
                v_off[(i, j)] * eps / (e[j] - e[i])
            }
        });
        let dev = &bd.t - identity(4);
        assert!((frob(&dev) - frob(&s)).abs() < 0.01 * frob(&s));
        assert!(max_abs_diff(&dev, &s) < 1e-5);
    }

    #[test]
    fn least_action_dominates_block_gauges() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let blocks = BlockSpec::new(vec![vec![0, 1], vec![2, 3], vec![4, 5, 6]]).unwrap();
        let base = Operator::from_diagonal(&nalgebra::DVector::from_vec(
            [0.0, 0.4, 5.0, 5.5, 10.0, 10.3, 10.9]
                .map(|x| C64::new(x, 0.0))
                .to_vec(),
        ));
        let h = base + random_hermitian(7, &mut rng) * C64::new(0.3, 0.0);
        let bd = least_action_blockdiag(&h, &blocks).unwrap();
        let d0 = frob(&(&bd.t - identity(7)));
        for _ in 0..100 {
            let mut w = Operator::zeros(7, 7);
            for b in blocks.blocks() {
                let u = random_unitary(b.len(), &mut rng);
                for (a, &i) in b.iter().enumerate() {
                    for (c, &j) in b.iter().enumerate() {
                        w[(i, j)] = u[(a, c)];
                    }
                }
            }
            assert!(frob(&(&bd.t * w - identity(7))) >= d0 - 1e-12);
        }
    }

    #[test]
    fn structural_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let model = DeviceModel::new(DeviceParams::reference_with_crosstalk()).unwrap();
        let d = DriveConfig::new(Channel::ControlLine, 4.914, 50.0, 0.3).unwrap();
        let mut h = drive_hamiltonian(&model, &[d]).unwrap();
        h += random_hermitian(9, &mut rng) * C64::new(1e-3, 0.0);
        let blocks = BlockSpec::cr_blocks(3);
        let bd = least_action_blockdiag(&h, &blocks).unwrap();
        assert!(unitarity_error(&bd.t) < 1e-10);
        let off = &bd.h_bd - blocks.block_part(&bd.h_bd);
        assert!(max_abs(&off) < 1e-9 * max_abs(&h));
        let (a, _) = eigh(&h).unwrap();
        let (b, _) = eigh(&((&bd.h_bd + bd.h_bd.adjoint()) * C64::new(0.5, 0.0))).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn invalid_partitions() {
        assert!(BlockSpec::new(vec![vec![0, 1], vec![1, 2]]).is_err());
        assert!(BlockSpec::new(vec![vec![0, 3]]).is_err());
        let h = identity(3);
        assert!(least_action_blockdiag(&h, &two_blocks()).is_err());
    }

    #[test]
    fn zero_drive_static_rates() {
        let p = DeviceParams::reference();
        let c = effective_cr_coefficients(&p, &[]).unwrap();
        let zeta = DeviceModel::new(p).unwrap().static_zz().unwrap();
        assert!((c.rate("ZZ") - zeta / 2.0).abs() < 1e-9);
        for l in ["ZX", "IX", "IY", "ZY"] {
            assert!(c.rate(l).abs() < 1e-12, "{l}");
        }
    }

    #[test]
    fn zx_and_ix_similar_magnitude() {
        let p = DeviceParams::reference();
        let d = DriveConfig::new(Channel::ControlLine, p.f_target, 40.0, 0.0).unwrap();
        let c = effective_cr_coefficients(&p, &[d]).unwrap();
        let ratio = (c.rate("ZX") / c.rate("IX")).abs();
        assert!((0.3..=3.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn stark_shift_is_quadratic() {
        let p = DeviceParams::reference();
        let pts = theory_curve_vs_amplitude(&p, &[0.0, 1.0, 2.0, 4.0], 0.0).unwrap();
        let zi0 = pts[0].coefficients.rate("ZI");
        let y: Vec<f64> = pts[1..]
            .iter()
            .map(|q| (q.coefficients.rate("ZI") - zi0).abs().ln())
            .collect();
        let x: Vec<f64> = [1.0f64, 2.0, 4.0].iter().map(|v| v.ln()).collect();
        let fit = crate::fit::linear_fit(&x, &y).unwrap();
        assert!((fit.slope - 2.0).abs() < 0.1, "{}", fit.slope);
    }

    #[test]
    fn amplitude_sign_symmetry() {
        let p = DeviceParams::reference();
        let pts = theory_curve_vs_amplitude(&p, &[-30.0, 30.0], 0.2).unwrap();
        let (m, q) = (&pts[0].coefficients, &pts[1].coefficients);
        assert!((m.rate("ZX") + q.rate("ZX")).abs() < 1e-9);
        assert!((m.rate("ZZ") - q.rate("ZZ")).abs() < 1e-9);
        assert!(theory_curve_vs_amplitude(&p, &[1.0, 0.0, 2.0], 0.0).is_err());
    }

    #[test]
    fn single_amplitude_csv() {
        let pts = theory_curve_vs_amplitude(&DeviceParams::reference(), &[0.0], 0.0).unwrap();
        let csv = theory_curve_csv(&pts);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0], THEORY_CSV_HEADER);
        assert!(lines[1].starts_with("0,"));
    }
}
