//! Two-transmon model: Duffing oscillators with exchange coupling and
//! rotating-wave microwave drives.
//!
//! Basis ordering is `|control⟩ ⊗ |target⟩`, index `c·levels + t`. The drive
//! operator is the charge quadrature `a + a†`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::quantum::{eigh, identity, kron, Operator, C64};
use crate::units::{angular_to_mhz, wrap_phase, GHZ, MHZ};
use crate::{Error, Result};

/// Spurious drive on the target line induced by the control-line drive:
/// a control drive `Ω e^{iφ}` also drives the target with
/// `magnitude·Ω e^{i(φ + phase)}`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Crosstalk {
    pub magnitude: f64,
    /// radians
    pub phase: f64,
}

impl Crosstalk {
    pub fn new(magnitude: f64, phase: f64) -> Self {
        Self { magnitude, phase }
    }

    pub fn none() -> Self {
        Self::default()
    }

    pub fn as_complex(&self) -> C64 {
        C64::from_polar(self.magnitude, self.phase)
    }
}

/// Static device description. Frequencies in GHz, anharmonicities and
/// coupling in MHz (cyclic).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceParams {
    pub f_control: f64,
    pub f_target: f64,
    pub anharm_control: f64,
    pub anharm_target: f64,
    /// Effective exchange coupling J/2π.
    #[serde(rename = "J")]
    pub coupling: f64,
    pub levels_per_transmon: usize,
    #[serde(default)]
    pub crosstalk: Crosstalk,
}

impl DeviceParams {
    /// The measured device: 5.114 GHz control, 4.914 GHz target, −330 MHz
    /// anharmonicities, J/2π = 3.8 MHz, three levels per transmon and no
    /// crosstalk.
    pub fn reference() -> Self {
        Self {
            f_control: 5.114,
            f_target: 4.914,
            anharm_control: -330.0,
            anharm_target: -330.0,
            coupling: 3.8,
            levels_per_transmon: 3,
            crosstalk: Crosstalk::none(),
        }
    }

    /// [`DeviceParams::reference`] with the default classical crosstalk
    /// `0.05·e^{iπ/4}` used to exercise the cancellation tone.
    pub fn reference_with_crosstalk() -> Self {
        Self {
            crosstalk: Crosstalk::new(0.05, PI / 4.0),
            ..Self::reference()
        }
    }

    pub fn with_levels(mut self, levels: usize) -> Self {
        self.levels_per_transmon = levels;
        self
    }

    pub fn with_coupling(mut self, coupling_mhz: f64) -> Self {
        self.coupling = coupling_mhz;
        self
    }

    pub fn with_crosstalk(mut self, crosstalk: Crosstalk) -> Self {
        self.crosstalk = crosstalk;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            ("f_control", self.f_control),
            ("f_target", self.f_target),
            ("anharm_control", self.anharm_control),
            ("anharm_target", self.anharm_target),
            ("J", self.coupling),
            ("crosstalk.magnitude", self.crosstalk.magnitude),
            ("crosstalk.phase", self.crosstalk.phase),
        ];
        for (field, v) in finite {
            if !v.is_finite() {
                return Err(Error::invalid(field, "must be finite"));
            }
        }
        if !(2..=5).contains(&self.levels_per_transmon) {
            return Err(Error::invalid("levels_per_transmon", "must be in [2, 5]"));
        }
        if self.f_control <= 0.0 {
            return Err(Error::invalid("f_control", "must be positive"));
        }
        if self.f_target <= 0.0 {
            return Err(Error::invalid("f_target", "must be positive"));
        }
        if self.f_control == self.f_target {
            return Err(Error::invalid("f_target", "must differ from f_control"));
        }
        if self.coupling < 0.0 {
            return Err(Error::invalid("J", "must be non-negative"));
        }
        if self.anharm_control > 0.0 {
            return Err(Error::invalid(
                "anharm_control",
                "transmon anharmonicity is negative",
            ));
        }
        if self.anharm_target > 0.0 {
            return Err(Error::invalid(
                "anharm_target",
                "transmon anharmonicity is negative",
            ));
        }
        if self.crosstalk.magnitude < 0.0 {
            return Err(Error::invalid(
                "crosstalk.magnitude",
                "must be non-negative",
            ));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.levels_per_transmon * self.levels_per_transmon
    }

    /// Control–target detuning in MHz.
    pub fn detuning_mhz(&self) -> f64 {
        (self.f_control - self.f_target) * 1e3
    }

    /// Second-order estimate of the static ZZ rate ζ (MHz):
    /// `2J²[1/(Δ − δ_t) − 1/(Δ + δ_c)]`.
    pub fn perturbative_zz(&self) -> f64 {
        let d = self.detuning_mhz();
        2.0 * self.coupling.powi(2)
            * (1.0 / (d - self.anharm_target) - 1.0 / (d + self.anharm_control))
    }
}

/// Line a drive is applied to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    ControlLine,
    TargetLine,
}

/// One RWA drive tone. `amplitude` is the peak Rabi rate (MHz) the tone would
/// produce on a resonant two-level qubit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriveConfig {
    pub channel: Channel,
    /// GHz
    pub carrier_freq: f64,
    /// MHz
    pub amplitude: f64,
    /// radians, wrapped to (−π, π]
    pub phase: f64,
}

impl DriveConfig {
    pub fn new(channel: Channel, carrier_freq: f64, amplitude: f64, phase: f64) -> Result<Self> {
        if !(amplitude >= 0.0) || !amplitude.is_finite() {
            return Err(Error::invalid(
                "amplitude",
                "must be finite and non-negative",
            ));
        }
        if !carrier_freq.is_finite() || !phase.is_finite() {
            return Err(Error::invalid("drive", "carrier and phase must be finite"));
        }
        Ok(Self {
            channel,
            carrier_freq,
            amplitude,
            phase: wrap_phase(phase),
        })
    }
}

/// T1/T2 per transmon, in µs. `f64::INFINITY` disables a channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoherenceParams {
    pub t1_control: f64,
    pub t1_target: f64,
    pub t2_control: f64,
    pub t2_target: f64,
}

impl CoherenceParams {
    pub fn new(t1_control: f64, t1_target: f64, t2_control: f64, t2_target: f64) -> Result<Self> {
        let c = Self {
            t1_control,
            t1_target,
            t2_control,
            t2_target,
        };
        c.validate()?;
        Ok(c)
    }

    /// T1 = 38/41 µs and T2 = 50/61 µs for control/target.
    pub fn reference() -> Self {
        Self {
            t1_control: 38.0,
            t1_target: 41.0,
            t2_control: 50.0,
            t2_target: 61.0,
        }
    }

    pub fn ideal() -> Self {
        Self {
            t1_control: f64::INFINITY,
            t1_target: f64::INFINITY,
            t2_control: f64::INFINITY,
            t2_target: f64::INFINITY,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (field, t1, t2) in [
            ("t2_control", self.t1_control, self.t2_control),
            ("t2_target", self.t1_target, self.t2_target),
        ] {
            if !(t1 > 0.0) || !(t2 > 0.0) {
                return Err(Error::invalid(field, "coherence times must be positive"));
            }
            if t2 > 2.0 * t1 {
                return Err(Error::invalid(
                    field,
                    format!("T2 = {t2} µs exceeds 2·T1 = {} µs", 2.0 * t1),
                ));
            }
        }
        Ok(())
    }

    /// (amplitude damping, pure dephasing) rates in 1/ns for control and target.
    pub fn rates(&self) -> [(f64, f64); 2] {
        let rate = |t1: f64, t2: f64| {
            let gamma1 = 1.0 / (t1 * 1e3);
            let gamma_phi = (1.0 / (t2 * 1e3) - 0.5 * gamma1).max(0.0);
            (gamma1, gamma_phi)
        };
        [
            rate(self.t1_control, self.t2_control),
            rate(self.t1_target, self.t2_target),
        ]
    }
}

/// Ladder and number operators on the truncated product space.
#[derive(Debug, Clone)]
pub struct TransmonOperators {
    pub levels: usize,
    pub a_control: Operator,
    pub a_target: Operator,
    pub n_control: Operator,
    pub n_target: Operator,
}

impl TransmonOperators {
    pub fn new(levels: usize) -> Self {
        let mut a = Operator::zeros(levels, levels);
        for n in 1..levels {
            a[(n - 1, n)] = C64::new((n as f64).sqrt(), 0.0);
        }
        let id = identity(levels);
        let a_control = kron(&a, &id);
        let a_target = kron(&id, &a);
        let n_control = a_control.adjoint() * &a_control;
        let n_target = a_target.adjoint() * &a_target;
        Self {
            levels,
            a_control,
            a_target,
            n_control,
            n_target,
        }
    }

    pub fn total_number(&self) -> Operator {
        &self.n_control + &self.n_target
    }

    pub fn lowering(&self, channel: Channel) -> &Operator {
        match channel {
            Channel::ControlLine => &self.a_control,
            Channel::TargetLine => &self.a_target,
        }
    }
}

/// Device parameters with their operators built once.
#[derive(Debug, Clone)]
pub struct DeviceModel {
    pub params: DeviceParams,
    pub ops: TransmonOperators,
    lab_static: Operator,
}

impl DeviceModel {
    pub fn new(params: DeviceParams) -> Result<Self> {
        params.validate()?;
        let ops = TransmonOperators::new(params.levels_per_transmon);
        let lab_static = static_terms(&params, &ops, 0.0);
        Ok(Self {
            params,
            ops,
            lab_static,
        })
    }

    pub fn dim(&self) -> usize {
        self.params.dim()
    }

    pub fn levels(&self) -> usize {
        self.params.levels_per_transmon
    }

    /// Static Hamiltonian in the frame rotating at `frame_ghz` on both
    /// transmons: `H₀ − ω_frame·N`.
    pub fn static_hamiltonian(&self, frame_ghz: f64) -> Operator {
        if frame_ghz == 0.0 {
            return self.lab_static.clone();
        }
        let shift = C64::new(GHZ * frame_ghz, 0.0);
        &self.lab_static - (&self.ops.n_control + &self.ops.n_target) * shift
    }

    /// Half-width (GHz) of the band of transition frequencies around
    /// `frame_ghz` the truncated model can represent.
    pub fn bandwidth_ghz(&self, frame_ghz: f64) -> f64 {
        let p = &self.params;
        let l = p.levels_per_transmon as f64;
        let extremes = [
            p.f_control,
            p.f_target,
            p.f_control + (l - 2.0) * p.anharm_control * 1e-3,
            p.f_target + (l - 2.0) * p.anharm_target * 1e-3,
        ];
        extremes
            .iter()
            .map(|f| (f - frame_ghz).abs())
            .fold(0.0, f64::max)
            + 0.25
    }

    /// Add the RWA term of one tone with complex envelope `envelope_mhz`
    /// (already multiplied by the tone's carrier phase) on `channel` at time
    /// `t`, including crosstalk for control-line tones.
    pub(crate) fn add_drive(
        &self,
        h: &mut Operator,
        channel: Channel,
        carrier_ghz: f64,
        envelope_mhz: C64,
        frame_ghz: f64,
        t: f64,
    ) {
        if envelope_mhz == C64::new(0.0, 0.0) {
            return;
        }
        // Lab drive at ω_d appears as e^{-i(ω_d − ω_f)t} in the rotating frame.
        let rot = C64::from_polar(1.0, -GHZ * (carrier_ghz - frame_ghz) * t);
        let z = envelope_mhz * rot * (MHZ / 2.0);
        let mut add = |a: &Operator, z: C64| {
            // (z a† + z̄ a)
            let ad = a.adjoint();
            *h += ad * z + a * z.conj();
        };
        match channel {
            Channel::ControlLine => {
                add(&self.ops.a_control, z);
                let xt = self.params.crosstalk.as_complex();
                if xt != C64::new(0.0, 0.0) {
                    add(&self.ops.a_target, z * xt);
                }
            }
            Channel::TargetLine => add(&self.ops.a_target, z),
        }
    }

    pub fn check_carrier(&self, carrier_ghz: f64, frame_ghz: f64) -> Result<()> {
        let band = self.bandwidth_ghz(frame_ghz);
        if (carrier_ghz - frame_ghz).abs() > band {
            return Err(Error::invalid(
                "carrier_freq",
                format!(
                    "carrier {carrier_ghz} GHz is {:.3} GHz from the frame, beyond the {band:.3} GHz model bandwidth",
                    (carrier_ghz - frame_ghz).abs()
                ),
            ));
        }
        Ok(())
    }

    /// Exact-diagonalization static ZZ rate ζ = E₁₁ − E₁₀ − E₀₁ + E₀₀ (MHz),
    /// dressed states identified by maximum overlap with bare states.
    pub fn static_zz(&self) -> Result<f64> {
        let energies = self.dressed_energies()?;
        let l = self.levels();
        let e = |c: usize, t: usize| energies[c * l + t];
        Ok(angular_to_mhz(e(1, 1) - e(1, 0) - e(0, 1) + e(0, 0)))
    }

    /// Eigenvalues of the lab-frame H₀ indexed by the bare state they overlap
    /// most with (greedy, largest overlaps first).
    pub fn dressed_energies(&self) -> Result<Vec<f64>> {
        let (values, vectors) = eigh(&self.lab_static)?;
        let n = values.len();
        let mut pairs: Vec<(f64, usize, usize)> = Vec::with_capacity(n * n);
        for k in 0..n {
            for i in 0..n {
                pairs.push((vectors[(i, k)].norm_sqr(), i, k));
            }
        }
        pairs.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .unwrap()
                .then(a.1.cmp(&b.1))
                .then(a.2.cmp(&b.2))
        });
        let mut bare_taken = vec![false; n];
        let mut eig_taken = vec![false; n];
        let mut out = vec![0.0; n];
        for (_, i, k) in pairs {
            if !bare_taken[i] && !eig_taken[k] {
                bare_taken[i] = true;
                eig_taken[k] = true;
                out[i] = values[k];
            }
        }
        Ok(out)
    }
}

fn static_terms(p: &DeviceParams, ops: &TransmonOperators, frame_ghz: f64) -> Operator {
    let dim = p.dim();
    let mut h = Operator::zeros(dim, dim);
    for (n, f, anh) in [
        (&ops.n_control, p.f_control, p.anharm_control),
        (&ops.n_target, p.f_target, p.anharm_target),
    ] {
        for i in 0..dim {
            let k = n[(i, i)].re;
            h[(i, i)] += C64::new(
                GHZ * (f - frame_ghz) * k + MHZ * anh / 2.0 * k * (k - 1.0),
                0.0,
            );
        }
    }
    let j = C64::new(MHZ * p.coupling, 0.0);
    let exchange = ops.a_control.adjoint() * &ops.a_target;
    h += (&exchange + exchange.adjoint()) * j;
    h
}

/// Lab-frame static Hamiltonian `Σ_j [ω_j n_j + (δ_j/2) n_j(n_j − 1)] + J(a₁†a₂ + a₁a₂†)`
/// in rad/ns.
pub fn build_static_hamiltonian(p: &DeviceParams) -> Result<Operator> {
    p.validate()?;
    Ok(static_terms(
        p,
        &TransmonOperators::new(p.levels_per_transmon),
        0.0,
    ))
}

/// Drive Hamiltonian at time `t` (ns) in the frame rotating at `frame_ghz`,
/// under the rotating-wave approximation.
pub fn build_drive_hamiltonian(
    p: &DeviceParams,
    drives: &[DriveConfig],
    frame_ghz: f64,
    t: f64,
) -> Result<Operator> {
    if drives.is_empty() {
        return Err(Error::invalid("drives", "at least one drive is required"));
    }
    let model = DeviceModel::new(p.clone())?;
    let mut h = Operator::zeros(model.dim(), model.dim());
    for d in drives {
        model.check_carrier(d.carrier_freq, frame_ghz)?;
        let env = C64::from_polar(d.amplitude, d.phase);
        model.add_drive(&mut h, d.channel, d.carrier_freq, env, frame_ghz, t);
    }
    Ok(h)
}
