//! Time evolution under piecewise-smooth Hamiltonians.
//!
//! Propagation uses the exponential midpoint rule on a grid aligned to the
//! schedule breakpoints. Intervals where the Hamiltonian is constant in some
//! rotating frame are exponentiated in one step. Each interval is stepped in
//! the frame of the carrier shared by its drives (so resonant tones are slowly
//! varying) and mapped back to the reporting frame with the diagonal
//! frame-change unitary `exp(−i(ω_s − ω_f)·N·t)`.

use std::f64::consts::PI;

use crate::device::{CoherenceParams, DeviceModel, DeviceParams, TransmonOperators};
use crate::pulse::PulseSchedule;
use crate::quantum::{
    expm_hermitian, identity, matrix_exp, max_abs_diff, Operator, Pauli, PauliLabel, QubitState,
    C64, ZERO,
};
use crate::units::{GHZ, MHZ};
use crate::{Error, Result};

/// Default step (ns).
pub const DEFAULT_DT: f64 = 0.5;

/// Richardson threshold above which [`evolve_unitary`] refuses the result.
pub const CONVERGENCE_LIMIT: f64 = 1e-3;

/// A time-dependent Hamiltonian on a transmon pair.
///
/// Frames are rotations by the total excitation number `N`: the Hamiltonian in
/// a frame rotating at `f` GHz is `H_lab − 2πf·N`. Systems that are not tied
/// to a lab frame keep the default hints, which never change frame.
pub trait DrivenSystem: Sync {
    fn levels(&self) -> usize;

    fn dim(&self) -> usize {
        self.levels() * self.levels()
    }

    /// ns
    fn duration(&self) -> f64;

    /// Reporting frame (GHz).
    fn frame(&self) -> f64 {
        0.0
    }

    /// H(t) in rad/ns, in the frame rotating at `frame_ghz`.
    fn hamiltonian(&self, t: f64, frame_ghz: f64) -> Operator;

    /// Sorted times where H(t) may have kinks, including 0 and the duration.
    fn breakpoints(&self) -> Vec<f64> {
        vec![0.0, self.duration()]
    }

    /// Frame in which to step `[a, b]`.
    fn step_frame(&self, _a: f64, _b: f64) -> f64 {
        self.frame()
    }

    /// Whether H is constant on `[a, b]` in the frame `frame_ghz`.
    fn constant_on(&self, _a: f64, _b: f64, _frame_ghz: f64) -> bool {
        false
    }
}

/// Diagonal of the total excitation number for `levels` per transmon.
pub fn number_diagonal(levels: usize) -> Vec<f64> {
    (0..levels * levels)
        .map(|i| (i / levels + i % levels) as f64)
        .collect()
}

/// A device driven by a pulse schedule.
#[derive(Debug, Clone)]
pub struct ScheduledDevice {
    pub model: DeviceModel,
    pub schedule: PulseSchedule,
    frame: f64,
}

impl ScheduledDevice {
    /// Reporting frame at the target frequency.
    pub fn new(params: DeviceParams, schedule: PulseSchedule) -> Result<Self> {
        let frame = params.f_target;
        Self::with_frame(DeviceModel::new(params)?, schedule, frame)
    }

    pub fn with_frame(model: DeviceModel, schedule: PulseSchedule, frame_ghz: f64) -> Result<Self> {
        schedule.validate()?;
        for s in &schedule.segments {
            model.check_carrier(s.carrier.frequency(&model.params), frame_ghz)?;
        }
        Ok(Self {
            model,
            schedule,
            frame: frame_ghz,
        })
    }
}

impl DrivenSystem for ScheduledDevice {
    fn levels(&self) -> usize {
        self.model.levels()
    }

    fn duration(&self) -> f64 {
        self.schedule.total_duration
    }

    fn frame(&self) -> f64 {
        self.frame
    }

    fn hamiltonian(&self, t: f64, frame_ghz: f64) -> Operator {
        let mut h = self.model.static_hamiltonian(frame_ghz);
        for s in self.schedule.active_at(t) {
            self.model.add_drive(
                &mut h,
                s.channel,
                s.carrier.frequency(&self.model.params),
                s.drive_at(t),
                frame_ghz,
                t,
            );
        }
        h
    }

    fn breakpoints(&self) -> Vec<f64> {
        self.schedule.breakpoints()
    }

    fn step_frame(&self, a: f64, b: f64) -> f64 {
        match self.schedule.carriers_on(a, b).as_slice() {
            [only] => only.frequency(&self.model.params),
            _ => self.frame,
        }
    }

    fn constant_on(&self, a: f64, b: f64, frame_ghz: f64) -> bool {
        self.schedule.constant_on(a, b)
            && self
                .schedule
                .carriers_on(a, b)
                .iter()
                .all(|c| c.frequency(&self.model.params) == frame_ghz)
    }
}

/// Constant Hamiltonians played back to back; `(duration, H)` pairs.
#[derive(Debug, Clone)]
pub struct PiecewiseConstant {
    pub levels: usize,
    pub pieces: Vec<(f64, Operator)>,
}

impl PiecewiseConstant {
    pub fn new(levels: usize, pieces: Vec<(f64, Operator)>) -> Result<Self> {
        for (d, h) in &pieces {
            if !(*d >= 0.0) {
                return Err(Error::invalid(
                    "duration",
                    "pieces have non-negative length",
                ));
            }
            if h.nrows() != levels * levels {
                return Err(Error::DimensionMismatch {
                    expected: levels * levels,
                    found: h.nrows(),
                });
            }
            crate::quantum::require_hermitian(h)?;
        }
        Ok(Self { levels, pieces })
    }

    /// Two-qubit echo of a constant CR Hamiltonian `h_plus` (rad/ns): the
    /// first half plays `h_plus`, an ideal control π follows (as an X
    /// rotation at `pi_rate_mhz` over `pi_duration` with buffers), and the
    /// second half plays `h_minus`.
    pub fn echo(
        h_plus: Operator,
        h_minus: Operator,
        half_width: f64,
        pi_duration: f64,
        buffer: f64,
    ) -> Result<Self> {
        let dim = h_plus.nrows();
        let zero = Operator::zeros(dim, dim);
        let pi = PauliLabel(Pauli::X, Pauli::I).matrix() * C64::new(PI / (2.0 * pi_duration), 0.0);
        Self::new(
            2,
            vec![
                (half_width, h_plus),
                (buffer, zero.clone()),
                (pi_duration, pi),
                (buffer, zero),
                (half_width, h_minus),
            ],
        )
    }

    /// Ideal echoed ZX gate: `±ZX` halves accruing a ZX90 in total.
    pub fn ideal_echoed_zx(half_width: f64, pi_duration: f64, buffer: f64) -> Result<Self> {
        let zx = PauliLabel(Pauli::Z, Pauli::X).matrix();
        // exp(−i θ ZX) with θ = π/8 per half.
        let rate = C64::new(PI / 8.0 / half_width, 0.0);
        Self::echo(&zx * rate, &zx * (-rate), half_width, pi_duration, buffer)
    }
}

impl DrivenSystem for PiecewiseConstant {
    fn levels(&self) -> usize {
        self.levels
    }

    fn duration(&self) -> f64 {
        self.pieces.iter().map(|p| p.0).sum()
    }

    fn hamiltonian(&self, t: f64, _frame_ghz: f64) -> Operator {
        let mut end = 0.0;
        for (d, h) in &self.pieces {
            end += d;
            if t < end {
                return h.clone();
            }
        }
        self.pieces
            .last()
            .map(|p| p.1.clone())
            .unwrap_or_else(|| Operator::zeros(self.dim(), self.dim()))
    }

    fn breakpoints(&self) -> Vec<f64> {
        let mut out = vec![0.0];
        let mut t = 0.0;
        for (d, _) in &self.pieces {
            t += d;
            out.push(t);
        }
        out.dedup();
        out
    }

    fn constant_on(&self, _a: f64, _b: f64, _frame_ghz: f64) -> bool {
        true
    }
}

/// `diag(exp(−i·ω·N·t))` with ω in rad/ns.
fn frame_phases(n_diag: &[f64], omega: f64, t: f64) -> Vec<C64> {
    n_diag
        .iter()
        .map(|&n| C64::from_polar(1.0, -omega * n * t))
        .collect()
}

/// `D_b · U · D_a†` for diagonal `D`.
fn conjugate_diagonal(u: &mut Operator, left: &[C64], right: &[C64]) {
    for j in 0..u.ncols() {
        for i in 0..u.nrows() {
            u[(i, j)] *= left[i] * right[j].conj();
        }
    }
}

/// Time grid: breakpoints plus `samples`, with substeps of at most `dt`.
struct Grid {
    /// Interval endpoints.
    edges: Vec<f64>,
}

impl Grid {
    fn new(sys: &dyn DrivenSystem, samples: &[f64]) -> Self {
        let mut edges = sys.breakpoints();
        edges.extend_from_slice(samples);
        edges.push(0.0);
        edges.push(sys.duration());
        edges.retain(|t| *t >= 0.0 && *t <= sys.duration() + 1e-9);
        edges.sort_by(|a, b| a.partial_cmp(b).unwrap());
        edges.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
        Self { edges }
    }
}

/// Propagator of one interval, in the frame `sf`.
fn interval_unitary(sys: &dyn DrivenSystem, a: f64, b: f64, dt: f64, sf: f64) -> Result<Operator> {
    let len = b - a;
    if sys.constant_on(a, b, sf) {
        return expm_hermitian(&sys.hamiltonian(0.5 * (a + b), sf), len);
    }
    let n = ((len / dt) - 1e-9).ceil().max(1.0) as usize;
    let h = len / n as f64;
    let mut u = identity(sys.dim());
    let mut cache: Option<(Operator, Operator)> = None;
    for k in 0..n {
        let ham = sys.hamiltonian(a + (k as f64 + 0.5) * h, sf);
        let step = match &cache {
            Some((prev, step)) if max_abs_diff(prev, &ham) == 0.0 => step.clone(),
            _ => {
                let step = expm_hermitian(&ham, h)?;
                cache = Some((ham, step.clone()));
                step
            }
        };
        u = step * u;
    }
    Ok(u)
}

/// Propagators `U(t_k, 0)` for each sample time (sorted ascending) in the
/// system's reporting frame, without a convergence check.
pub fn propagate_samples(
    sys: &dyn DrivenSystem,
    dt: f64,
    samples: &[f64],
) -> Result<Vec<Operator>> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::invalid("dt", "must be positive"));
    }
    for w in samples.windows(2) {
        if w[1] < w[0] {
            return Err(Error::invalid("samples", "times must be ascending"));
        }
    }
    let grid = Grid::new(sys, samples);
    let n_diag = number_diagonal(sys.levels());
    let frame = sys.frame();
    let mut u = identity(sys.dim());
    let mut out = Vec::with_capacity(samples.len());
    let mut next = 0;
    while next < samples.len() && samples[next] <= 1e-12 {
        out.push(u.clone());
        next += 1;
    }
    for w in grid.edges.windows(2) {
        let (a, b) = (w[0], w[1]);
        let sf = sys.step_frame(a, b);
        let mut step = interval_unitary(sys, a, b, dt, sf)?;
        if sf != frame {
            let omega = GHZ * (sf - frame);
            conjugate_diagonal(
                &mut step,
                &frame_phases(&n_diag, omega, b),
                &frame_phases(&n_diag, omega, a),
            );
        }
        u = step * u;
        while next < samples.len() && samples[next] <= b + 1e-9 {
            out.push(u.clone());
            next += 1;
        }
    }
    while out.len() < samples.len() {
        out.push(u.clone());
    }
    Ok(out)
}

/// Full propagator in the reporting frame, without a convergence check.
pub fn propagate(sys: &dyn DrivenSystem, dt: f64) -> Result<Operator> {
    let mut v = propagate_samples(sys, dt, &[sys.duration()])?;
    Ok(v.pop().expect("one sample"))
}

/// Full propagator at step `dt/2`, checked against the `dt` result.
pub fn evolve_unitary(sys: &dyn DrivenSystem, dt: f64) -> Result<Operator> {
    let coarse = propagate(sys, dt)?;
    let fine = propagate(sys, dt / 2.0)?;
    let change = max_abs_diff(&coarse, &fine);
    if change > CONVERGENCE_LIMIT {
        return Err(Error::StepNotConverged { change });
    }
    Ok(fine)
}

/// Map a target-frame propagator of duration `t` to the frame where each
/// transmon rotates at its own frequency.
pub fn to_qubit_frame(p: &DeviceParams, u: &Operator, t: f64) -> Operator {
    let l = p.levels_per_transmon;
    let omega = GHZ * (p.f_control - p.f_target);
    let mut out = u.clone();
    for i in 0..u.nrows() {
        let phase = C64::from_polar(1.0, omega * (i / l) as f64 * t);
        for j in 0..u.ncols() {
            out[(i, j)] *= phase;
        }
    }
    out
}

/// Rows/columns of the two-qubit computational subspace.
pub fn qubit_indices(levels: usize) -> [usize; 4] {
    [0, 1, levels, levels + 1]
}

/// 4×4 computational block of a propagator.
pub fn qubit_block(u: &Operator, levels: usize) -> Operator {
    let idx = qubit_indices(levels);
    Operator::from_fn(4, 4, |i, j| u[(idx[i], idx[j])])
}

/// Column-stacked Liouvillian of `H` with the given collapse operators.
pub fn liouvillian(h: &Operator, collapse: &[Operator]) -> Operator {
    let d = h.nrows();
    let id = identity(d);
    let mi = C64::new(0.0, -1.0);
    let mut l = (id.kronecker(h) - h.transpose().kronecker(&id)) * mi;
    for c in collapse {
        let cdc = c.adjoint() * c;
        l += c.map(|z| z.conj()).kronecker(c);
        l -= (id.kronecker(&cdc) + cdc.transpose().kronecker(&id)) * C64::new(0.5, 0.0);
    }
    l
}

/// Amplitude-damping and dephasing operators `√γ₁·a`, `√(2γ_φ)·n` per transmon.
pub fn collapse_operators(levels: usize, coh: &CoherenceParams) -> Vec<Operator> {
    let ops = TransmonOperators::new(levels);
    let [(g1c, gpc), (g1t, gpt)] = coh.rates();
    let mut out = Vec::new();
    for (g, op) in [
        (g1c, &ops.a_control),
        (g1t, &ops.a_target),
        (2.0 * gpc, &ops.n_control),
        (2.0 * gpt, &ops.n_target),
    ] {
        if g > 0.0 {
            out.push(op * C64::new(g.sqrt(), 0.0));
        }
    }
    out
}

/// Superoperator propagators at each sample time, on column-stacked density
/// matrices in the reporting frame.
pub fn lindblad_superop_samples(
    sys: &dyn DrivenSystem,
    coh: &CoherenceParams,
    dt: f64,
    samples: &[f64],
) -> Result<Vec<Operator>> {
    coh.validate()?;
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::invalid("dt", "must be positive"));
    }
    let collapse = collapse_operators(sys.levels(), coh);
    let d = sys.dim();
    let grid = Grid::new(sys, samples);
    let n_diag = number_diagonal(sys.levels());
    let frame = sys.frame();
    let mut s = identity(d * d);
    let mut out = Vec::with_capacity(samples.len());
    let mut next = 0;
    while next < samples.len() && samples[next] <= 1e-12 {
        out.push(s.clone());
        next += 1;
    }
    for w in grid.edges.windows(2) {
        let (a, b) = (w[0], w[1]);
        let sf = sys.step_frame(a, b);
        let len = b - a;
        let mut step = if sys.constant_on(a, b, sf) {
            matrix_exp(
                &liouvillian(&sys.hamiltonian(0.5 * (a + b), sf), &collapse),
                C64::new(len, 0.0),
            )?
        } else {
            let n = ((len / dt) - 1e-9).ceil().max(1.0) as usize;
            let h = len / n as f64;
            let mut acc = identity(d * d);
            let mut cache: Option<(Operator, Operator)> = None;
            for k in 0..n {
                let ham = sys.hamiltonian(a + (k as f64 + 0.5) * h, sf);
                let e = match &cache {
                    Some((prev, e)) if max_abs_diff(prev, &ham) == 0.0 => e.clone(),
                    _ => {
                        let e = matrix_exp(&liouvillian(&ham, &collapse), C64::new(h, 0.0))?;
                        cache = Some((ham, e.clone()));
                        e
                    }
                };
                acc = e * acc;
            }
            acc
        };
        if sf != frame {
            // ρ ↦ DρD† is conj(D)⊗D on vec(ρ).
            let omega = GHZ * (sf - frame);
            let lift = |t: f64| {
                let p = frame_phases(&n_diag, omega, t);
                let mut v = Vec::with_capacity(d * d);
                for j in 0..d {
                    for i in 0..d {
                        v.push(p[j].conj() * p[i]);
                    }
                }
                v
            };
            conjugate_diagonal(&mut step, &lift(b), &lift(a));
        }
        s = step * s;
        while next < samples.len() && samples[next] <= b + 1e-9 {
            out.push(s.clone());
            next += 1;
        }
    }
    while out.len() < samples.len() {
        out.push(s.clone());
    }
    Ok(out)
}

/// Full-duration Lindblad superoperator.
pub fn lindblad_superop(
    sys: &dyn DrivenSystem,
    coh: &CoherenceParams,
    dt: f64,
) -> Result<Operator> {
    let mut v = lindblad_superop_samples(sys, coh, dt, &[sys.duration()])?;
    Ok(v.pop().expect("one sample"))
}

fn apply_superop(s: &Operator, rho: &Operator) -> Operator {
    let d = rho.nrows();
    let v = nalgebra::DVector::from_iterator(d * d, rho.iter().copied());
    let out = s * v;
    Operator::from_iterator(d, d, out.iter().copied())
}

/// Density-matrix trajectory at the sample times (ascending).
pub fn evolve_lindblad(
    sys: &dyn DrivenSystem,
    coh: &CoherenceParams,
    rho0: &QubitState,
    dt: f64,
    samples: &[f64],
) -> Result<Vec<QubitState>> {
    if rho0.levels() != sys.levels() {
        return Err(Error::DimensionMismatch {
            expected: sys.levels(),
            found: rho0.levels(),
        });
    }
    let rho = rho0.density();
    lindblad_superop_samples(sys, coh, dt, samples)?
        .iter()
        .map(|s| {
            let mut r = apply_superop(s, &rho);
            // Remove round-off anti-Hermitian part.
            r = (&r + r.adjoint()) * C64::new(0.5, 0.0);
            Ok(QubitState::Mixed {
                levels: sys.levels(),
                density: r,
            })
        })
        .collect()
}

/// Superoperator restricted to the two-qubit subspace: embed a 4×4 density
/// matrix, apply `s`, and project back. Trace-decreasing if the evolution
/// leaks.
pub fn restrict_superop(s: &Operator, levels: usize) -> Operator {
    let d = levels * levels;
    let idx = qubit_indices(levels);
    Operator::from_fn(16, 16, |r, c| {
        let (ri, rj) = (r % 4, r / 4);
        let (ci, cj) = (c % 4, c / 4);
        s[(idx[ri] + idx[rj] * d, idx[ci] + idx[cj] * d)]
    })
}

/// Apply a unitary to a state.
pub fn apply_unitary(u: &Operator, state: &QubitState) -> QubitState {
    match state {
        QubitState::Pure { levels, amplitudes } => QubitState::Pure {
            levels: *levels,
            amplitudes: u * amplitudes,
        },
        QubitState::Mixed { levels, density } => QubitState::Mixed {
            levels: *levels,
            density: u * density * u.adjoint(),
        },
    }
}

/// Embed a 4×4 qubit operator in the `levels`-per-transmon space, acting
/// as the identity outside the computational subspace.
pub fn embed_qubit_operator(op: &Operator, levels: usize) -> Operator {
    let idx = qubit_indices(levels);
    let d = levels * levels;
    let mut out = identity(d);
    for &i in &idx {
        out[(i, i)] = ZERO;
    }
    for (a, &i) in idx.iter().enumerate() {
        for (b, &j) in idx.iter().enumerate() {
            out[(i, j)] = op[(a, b)];
        }
    }
    out
}

/// `exp(−i·θ·P)` for a two-qubit Pauli `P`.
pub fn pauli_rotation(label: PauliLabel, theta: f64) -> Operator {
    let p = label.matrix();
    identity(4) * C64::new(theta.cos(), 0.0) - p * C64::new(0.0, theta.sin())
}

/// Constant Hamiltonian with the given Pauli rates (MHz) on two qubits.
pub fn pauli_hamiltonian(terms: &[(PauliLabel, f64)]) -> Operator {
    let mut h = Operator::zeros(4, 4);
    for (label, mhz) in terms {
        h += label.matrix() * C64::new(MHZ * mhz / 2.0, 0.0);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::device::{Channel, Crosstalk};
    use crate::pulse::{
        build_echoed_cr_schedule, Carrier, CrParams, EchoConfig, Envelope, Segment,
    };
    use crate::quantum::{average_gate_fidelity, eigh, unitarity_error};

    fn zx() -> PauliLabel {
        PauliLabel(Pauli::Z, Pauli::X)
    }

    #[test]
    fn idle_uncoupled_is_identity_in_co_rotating_frame() {
        let p = DeviceParams {
            f_control: 5.0,
            f_target: 5.0 + 1e-12,
            anharm_control: 0.0,
            anharm_target: 0.0,
            coupling: 0.0,
            levels_per_transmon: 2,
            crosstalk: Crosstalk::none(),
        };
        let sys = ScheduledDevice::with_frame(
            DeviceModel::new(p).unwrap(),
            PulseSchedule::idle(250.0).unwrap(),
            5.0,
        )
        .unwrap();
        let u = evolve_unitary(&sys, DEFAULT_DT).unwrap();
        assert!(max_abs_diff(&u, &identity(4)) < 1e-8);
    }

    #[test]
    fn resonant_half_cycle_is_x_gate() {
        let p = DeviceParams::reference().with_levels(2).with_coupling(0.0);
        let unit = Envelope::flat_top(60.0, 1.0).unwrap();
        let env = Envelope::flat_top(60.0, 500.0 / unit.area()).unwrap();
        let mut s = PulseSchedule::idle(60.0).unwrap();
        s.push(Segment {
            start: 0.0,
            channel: Channel::TargetLine,
            carrier: Carrier::Target,
            envelope: env,
            phase: 0.0,
        })
        .unwrap();
        let sys = ScheduledDevice::new(p, s).unwrap();
        let u = evolve_unitary(&sys, DEFAULT_DT).unwrap();
        // Target frame: control idles with e^{−i2π·200MHz·t}; move to the qubit frame.
        let uq = to_qubit_frame(&sys.model.params, &u, 60.0);
        let target = PauliLabel(Pauli::I, Pauli::X).matrix();
        assert!(average_gate_fidelity(&target, &uq).unwrap() > 1.0 - 1e-6);
        assert!(unitarity_error(&u) < 1e-8);
    }

    #[test]
    fn static_evolution_matches_exact_diagonalization() {
        let p = DeviceParams::reference();
        let sys = ScheduledDevice::new(p.clone(), PulseSchedule::idle(1000.0).unwrap()).unwrap();
        let u = evolve_unitary(&sys, DEFAULT_DT).unwrap();
        let h = sys.model.static_hamiltonian(p.f_target);
        let (vals, vecs) = eigh(&h).unwrap();
        let phases = Operator::from_diagonal(&nalgebra::DVector::from_iterator(
            9,
            vals.iter().map(|e| C64::from_polar(1.0, -e * 1000.0)),
        ));
        let exact = &vecs * phases * vecs.adjoint();
        assert!(max_abs_diff(&u, &exact) < 1e-9);
    }

    #[test]
    fn frame_swap_agrees_with_plain_stepping() {
        // Same detuned-drive system stepped with and without frame changes.
        struct NoHints<'a>(&'a ScheduledDevice);
        impl DrivenSystem for NoHints<'_> {
            fn levels(&self) -> usize {
                self.0.levels()
            }
            fn duration(&self) -> f64 {
                self.0.duration()
            }
            fn frame(&self) -> f64 {
                self.0.frame()
            }
            fn hamiltonian(&self, t: f64, f: f64) -> Operator {
                self.0.hamiltonian(t, f)
            }
            fn breakpoints(&self) -> Vec<f64> {
                self.0.breakpoints()
            }
        }
        let p = DeviceParams::reference();
        let cr = CrParams::new(30.0, 0.4, 0.0, 0.0, 37.3);
        let echo = EchoConfig::for_device(&p).unwrap();
        let sched = build_echoed_cr_schedule(&cr, &echo).unwrap();
        let sys = ScheduledDevice::new(p, sched).unwrap();
        let fast = propagate(&sys, 0.05).unwrap();
        let slow = propagate(&NoHints(&sys), 0.0025).unwrap();
        assert!(
            max_abs_diff(&fast, &slow) < 2e-4,
            "{}",
            max_abs_diff(&fast, &slow)
        );
    }

    #[test]
    fn second_order_convergence() {
        let p = DeviceParams::reference();
        let sched = crate::pulse::build_cr_schedule(&CrParams::plain(50.0, 0.0, 40.0)).unwrap();
        let sys = ScheduledDevice::new(p, sched).unwrap();
        let reference = propagate(&sys, 0.01).unwrap();
        let errs: Vec<f64> = [1.0, 0.5, 0.25]
            .iter()
            .map(|&dt| max_abs_diff(&propagate(&sys, dt).unwrap(), &reference))
            .collect();
        let slope = ((errs[0] / errs[2]).ln()) / (4f64).ln();
        assert!((slope - 2.0).abs() < 0.3, "slope {slope}, errs {errs:?}");
    }

    #[test]
    fn richardson_rejects_coarse_steps() {
        let p = DeviceParams::reference();
        let sched = crate::pulse::build_cr_schedule(&CrParams::plain(80.0, 0.0, 40.0)).unwrap();
        let sys = ScheduledDevice::new(p, sched).unwrap();
        assert!(matches!(
            evolve_unitary(&sys, 8.0),
            Err(Error::StepNotConverged { .. })
        ));
    }

    #[test]
    fn ideal_echo_is_control_flip_times_zx90() {
        let sys = PiecewiseConstant::ideal_echoed_zx(60.0, 20.0, 10.0).unwrap();
        let u = propagate(&sys, DEFAULT_DT).unwrap();
        let target = PauliLabel(Pauli::X, Pauli::I).matrix() * pauli_rotation(zx(), PI / 4.0);
        assert!(average_gate_fidelity(&target, &u).unwrap() > 1.0 - 1e-12);
        assert!((sys.duration() - 160.0).abs() < 1e-12);
    }

    #[test]
    fn echo_refocuses_commuting_terms_but_not_iy() {
        let label = |s: &str| s.parse::<PauliLabel>().unwrap();
        let terms = |sign: f64, zz: f64, iy: f64| {
            pauli_hamiltonian(&[
                (label("ZX"), sign * 2.0),
                (label("IX"), sign * 1.3),
                (label("ZI"), -0.7),
                (label("ZZ"), zz),
                (label("IY"), sign * iy),
            ])
        };
        let infidelity = |zz: f64, iy: f64| {
            let sys =
                PiecewiseConstant::echo(terms(1.0, zz, iy), terms(-1.0, zz, iy), 60.0, 20.0, 0.0)
                    .unwrap();
            let pure = PiecewiseConstant::echo(
                pauli_hamiltonian(&[(label("ZX"), 2.0)]),
                pauli_hamiltonian(&[(label("ZX"), -2.0)]),
                60.0,
                20.0,
                0.0,
            )
            .unwrap();
            let u = propagate(&sys, 1.0).unwrap();
            let v = propagate(&pure, 1.0).unwrap();
            (
                max_abs_diff(&u, &v),
                1.0 - average_gate_fidelity(&v, &u).unwrap(),
            )
        };
        // IX and ZI commute with ZX and cancel exactly.
        assert!(infidelity(0.0, 0.0).0 < 1e-9);
        // ZZ anticommutes with ZX: first order cancels, residual is quadratic.
        let (_, a) = infidelity(0.05, 0.0);
        let (_, b) = infidelity(0.1, 0.0);
        assert!(a < 1e-4 && (b / a - 4.0).abs() < 0.2, "{a} {b}");
        // IY survives the echo.
        let (_, e1) = infidelity(0.0, 0.2);
        let (_, e2) = infidelity(0.0, 0.4);
        assert!(e1 > 1e-4 && e2 > 2.0 * e1, "{e1} {e2}");
    }

    #[test]
    fn lindblad_decay_rates() {
        let coh = CoherenceParams::new(20.0, 30.0, 25.0, 40.0).unwrap();
        let sys = PiecewiseConstant::new(2, vec![(5000.0, Operator::zeros(4, 4))]).unwrap();
        let times: Vec<f64> = (1..=5).map(|k| k as f64 * 1000.0).collect();
        // |0⟩_c|1⟩_t relaxes with T1 of the target.
        let excited = QubitState::basis(2, 0, 1);
        let traj = evolve_lindblad(&sys, &coh, &excited, DEFAULT_DT, &times).unwrap();
        for (t, s) in times.iter().zip(&traj) {
            let z = crate::quantum::bloch_vector_of_target(s).unwrap().vector[2];
            let expected = 1.0 - 2.0 * (-t / 30e3).exp();
            assert!((z - expected).abs() < 1e-4);
        }
        // |0⟩|+⟩ coherence decays with T2 of the target.
        let amp = nalgebra::DVector::from_vec(vec![
            C64::new(0.5f64.sqrt(), 0.0),
            C64::new(0.5f64.sqrt(), 0.0),
            ZERO,
            ZERO,
        ]);
        let plus = QubitState::pure(2, amp).unwrap();
        let traj = evolve_lindblad(&sys, &coh, &plus, DEFAULT_DT, &times).unwrap();
        for (t, s) in times.iter().zip(&traj) {
            let x = crate::quantum::bloch_vector_of_target(s).unwrap().vector[0];
            assert!((x - (-t / 40e3).exp()).abs() < 1e-4);
            let rho = s.density();
            assert!((rho.trace().re - 1.0).abs() < 1e-8);
            let (vals, _) = eigh(&rho).unwrap();
            assert!(vals[0] > -1e-8);
        }
    }

    #[test]
    fn infinite_coherence_matches_unitary() {
        let p = DeviceParams::reference_with_crosstalk();
        let sched = build_echoed_cr_schedule(
            &CrParams::new(40.0, 0.3, 2.0, 1.0, 45.0),
            &EchoConfig::for_device(&p).unwrap(),
        )
        .unwrap();
        let sys = ScheduledDevice::new(p, sched).unwrap();
        let u = propagate(&sys, DEFAULT_DT).unwrap();
        let rho0 = QubitState::basis(3, 1, 0);
        let rho = evolve_lindblad(
            &sys,
            &CoherenceParams::ideal(),
            &rho0,
            DEFAULT_DT,
            &[sys.duration()],
        )
        .unwrap()
        .pop()
        .unwrap()
        .density();
        let expected = apply_unitary(&u, &rho0).density();
        assert!(max_abs_diff(&rho, &expected) < 1e-6);
    }

    #[test]
    fn restricted_superop_of_unitary_matches_block() {
        let p = DeviceParams::reference();
        let sched = crate::pulse::build_cr_schedule(&CrParams::plain(30.0, 0.0, 40.0)).unwrap();
        let sys = ScheduledDevice::new(p, sched).unwrap();
        let u = propagate(&sys, DEFAULT_DT).unwrap();
        let s = crate::quantum::unitary_superop(&u);
        let r = restrict_superop(&s, 3);
        let b = qubit_block(&u, 3);
        assert!(max_abs_diff(&r, &crate::quantum::unitary_superop(&b)) < 1e-12);
    }
}
