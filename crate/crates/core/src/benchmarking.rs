//! Two-qubit Clifford group, randomized benchmarking (RB) and interleaved RB
//! on simulated gate channels.
//!
//! Every Clifford is stored with a decomposition into single-qubit Clifford
//! layers and the echoed entangler `G = X_c·ZX90` (the ideal result of the
//! echoed CR sequence), so channels for all 11520 elements can be composed
//! from one simulated two-qubit gate.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::OnceLock;

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::echoed_target;
use crate::device::{CoherenceParams, DeviceParams};
use crate::fit::{levenberg_marquardt, LmOptions};
use crate::propagation::{lindblad_superop, qubit_block, restrict_superop, ScheduledDevice};
use crate::pulse::{build_echoed_cr_schedule, CrParams, EchoConfig};
use crate::quantum::{
    channel_average_fidelity, identity, kron, unitary_superop, Operator, Pauli, C64,
};
use crate::tomography::{point_rng, Shots};
use crate::units::GHZ;
use crate::{Error, Result, SCHEMA_VERSION};

/// Order of the two-qubit Clifford group modulo global phase.
pub const GROUP_ORDER: usize = 11520;

/// Hilbert-space dimension of two qubits.
const D: f64 = 4.0;

/// Hash key of a unitary modulo global phase.
fn canonical_key(u: &Operator) -> Vec<i64> {
    let pivot = u
        .iter()
        .find(|z| z.norm() > 0.1)
        .copied()
        .unwrap_or(C64::new(1.0, 0.0));
    let phase = pivot.conj() / pivot.norm();
    // Row-major traversal so the pivot choice does not depend on storage order.
    let mut key = Vec::with_capacity(2 * u.len());
    for i in 0..u.nrows() {
        for j in 0..u.ncols() {
            let z = u[(i, j)] * phase;
            key.push((z.re * 1e6).round() as i64);
            key.push((z.im * 1e6).round() as i64);
        }
    }
    key
}

/// One step of a compiled Clifford, in time order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Layer {
    /// Single-qubit Clifford indices (control, target) into [`CliffordGroup::single_qubit`].
    Local(u8, u8),
    /// The echoed entangler `X_c·ZX90`.
    Entangler,
}

#[derive(Debug, Clone)]
pub struct CliffordElement {
    pub index: usize,
    pub unitary: Operator,
    /// Time-ordered layers whose product equals `unitary` up to global phase.
    pub decomposition: Vec<Layer>,
}

impl CliffordElement {
    pub fn entangler_count(&self) -> usize {
        self.decomposition
            .iter()
            .filter(|l| **l == Layer::Entangler)
            .count()
    }
}

/// Two-qubit Clifford group with lookup by unitary.
#[derive(Debug, Clone)]
pub struct CliffordGroup {
    single: Vec<Operator>,
    single_lookup: HashMap<Vec<i64>, u8>,
    elements: Vec<CliffordElement>,
    lookup: HashMap<Vec<i64>, usize>,
    entangler: Operator,
}

/// Shared group instance, built on first use.
pub fn clifford_group_2q() -> &'static CliffordGroup {
    static GROUP: OnceLock<CliffordGroup> = OnceLock::new();
    GROUP.get_or_init(|| CliffordGroup::build().expect("two-qubit Clifford group self-check"))
}

/// Ideal echoed entangler `X_c·ZX90`.
pub fn entangler() -> Operator {
    echoed_target(false)
}

fn rot(p: Pauli, theta: f64) -> Operator {
    // exp(−iθ/2·P)
    identity(2) * C64::new((theta / 2.0).cos(), 0.0)
        - p.matrix() * C64::new(0.0, (theta / 2.0).sin())
}

#[derive(Clone)]
enum Step {
    Local(Operator, Operator),
    Entangler,
}

impl CliffordGroup {
    pub fn build() -> Result<Self> {
        let h = Operator::from_row_slice(
            2,
            2,
            &[
                C64::new(1.0, 0.0),
                C64::new(1.0, 0.0),
                C64::new(1.0, 0.0),
                C64::new(-1.0, 0.0),
            ],
        ) * C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        let s = Operator::from_diagonal(&nalgebra::DVector::from_vec(vec![
            C64::new(1.0, 0.0),
            C64::new(0.0, 1.0),
        ]));

        // Single-qubit Cliffords by breadth-first closure under {H, S}.
        let mut single = vec![identity(2)];
        let mut single_lookup = HashMap::from([(canonical_key(&identity(2)), 0u8)]);
        let mut k = 0;
        while k < single.len() {
            for g in [&h, &s] {
                let v = g * &single[k];
                let key = canonical_key(&v);
                if let std::collections::hash_map::Entry::Vacant(e) = single_lookup.entry(key) {
                    e.insert(single.len() as u8);
                    single.push(v);
                }
            }
            k += 1;
        }
        if single.len() != 24 {
            return Err(Error::Degenerate(format!(
                "{} single-qubit Cliffords, expected 24",
                single.len()
            )));
        }

        let i2 = identity(2);
        let x = Pauli::X.matrix();
        let r = &s * &h;
        let s1 = [i2.clone(), r.clone(), &r * &r];

        // CNOT ∝ [exp(−iπ/4 Z) ⊗ exp(−iπ/4 X)] · G · [X ⊗ I]
        let cnot = vec![
            Step::Local(x.clone(), i2.clone()),
            Step::Entangler,
            Step::Local(rot(Pauli::Z, PI / 2.0), rot(Pauli::X, PI / 2.0)),
        ];
        let hh = Step::Local(h.clone(), h.clone());
        let mut dcnot = cnot.clone();
        dcnot.push(hh.clone());
        dcnot.extend(cnot.iter().cloned());
        dcnot.push(hh.clone());
        let mut swap = dcnot.clone();
        swap.extend(cnot.iter().cloned());

        let mut group = Self {
            single,
            single_lookup,
            elements: Vec::with_capacity(GROUP_ORDER),
            lookup: HashMap::with_capacity(GROUP_ORDER),
            entangler: entangler(),
        };
        let n1 = group.single.len();
        for a in 0..n1 {
            for b in 0..n1 {
                let outer = Step::Local(group.single[a].clone(), group.single[b].clone());
                group.insert(vec![outer.clone()])?;
                for core in [&cnot, &dcnot] {
                    for p in &s1 {
                        for q in &s1 {
                            let mut steps = vec![Step::Local(p.clone(), q.clone())];
                            steps.extend(core.iter().cloned());
                            steps.push(outer.clone());
                            group.insert(steps)?;
                        }
                    }
                }
                let mut steps = swap.clone();
                steps.push(outer);
                group.insert(steps)?;
            }
        }
        if group.elements.len() != GROUP_ORDER {
            return Err(Error::Degenerate(format!(
                "Clifford enumeration produced {} elements, expected {GROUP_ORDER}",
                group.elements.len()
            )));
        }
        Ok(group)
    }

    /// Merge adjacent local steps, then store the element.
    fn insert(&mut self, steps: Vec<Step>) -> Result<()> {
        let mut merged: Vec<Step> = Vec::new();
        for st in steps {
            match (merged.last_mut(), st) {
                (Some(Step::Local(c, t)), Step::Local(c2, t2)) => {
                    *c = &c2 * &*c;
                    *t = &t2 * &*t;
                }
                (_, st) => merged.push(st),
            }
        }
        let mut decomposition = Vec::with_capacity(merged.len());
        for st in &merged {
            decomposition.push(match st {
                Step::Local(c, t) => {
                    let ic = self.single_index(c)?;
                    let it = self.single_index(t)?;
                    Layer::Local(ic, it)
                }
                Step::Entangler => Layer::Entangler,
            });
        }
        let unitary = self.decomposition_unitary(&decomposition);
        let key = canonical_key(&unitary);
        if self.lookup.contains_key(&key) {
            return Err(Error::Degenerate(
                "duplicate element in Clifford enumeration".into(),
            ));
        }
        let index = self.elements.len();
        self.lookup.insert(key, index);
        self.elements.push(CliffordElement {
            index,
            unitary,
            decomposition,
        });
        Ok(())
    }

    fn single_index(&self, u: &Operator) -> Result<u8> {
        self.single_lookup
            .get(&canonical_key(u))
            .copied()
            .ok_or_else(|| Error::Degenerate("local layer is not a single-qubit Clifford".into()))
    }

    /// Product of the layers with the ideal entangler.
    pub fn decomposition_unitary(&self, layers: &[Layer]) -> Operator {
        let mut u = identity(4);
        for l in layers {
            u = self.layer_unitary(*l) * u;
        }
        u
    }

    pub fn layer_unitary(&self, layer: Layer) -> Operator {
        match layer {
            Layer::Local(c, t) => kron(&self.single[c as usize], &self.single[t as usize]),
            Layer::Entangler => self.entangler.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn single_qubit(&self) -> &[Operator] {
        &self.single
    }

    pub fn element(&self, index: usize) -> &CliffordElement {
        &self.elements[index]
    }

    pub fn identity_index(&self) -> usize {
        self.lookup[&canonical_key(&identity(4))]
    }

    /// Index of a unitary (modulo global phase), if it is a Clifford.
    pub fn index_of(&self, u: &Operator) -> Option<usize> {
        self.lookup.get(&canonical_key(u)).copied()
    }

    /// Index of "`first`, then `second`".
    pub fn compose(&self, first: usize, second: usize) -> usize {
        let u = &self.elements[second].unitary * &self.elements[first].unitary;
        self.index_of(&u).expect("group is closed")
    }

    pub fn inverse(&self, index: usize) -> usize {
        self.index_of(&self.elements[index].unitary.adjoint())
            .expect("group is closed")
    }
}

/// Implemented channel of a single gate on two-qubit density matrices.
#[derive(Debug, Clone)]
pub enum GateChannel {
    Unitary(Operator),
    /// 16×16 superoperator on column-stacked density matrices.
    Superop(Operator),
}

impl GateChannel {
    pub fn apply(&self, rho: &Operator) -> Operator {
        match self {
            GateChannel::Unitary(u) => u * rho * u.adjoint(),
            GateChannel::Superop(s) => {
                let v = nalgebra::DVector::from_iterator(16, rho.iter().copied());
                Operator::from_iterator(4, 4, (s * v).iter().copied())
            }
        }
    }

    pub fn superop(&self) -> Operator {
        match self {
            GateChannel::Unitary(u) => unitary_superop(u),
            GateChannel::Superop(s) => s.clone(),
        }
    }

    /// Average fidelity to the unitary `target`.
    pub fn average_fidelity(&self, target: &Operator) -> Result<f64> {
        channel_average_fidelity(target, &self.superop())
    }
}

/// Maps each Clifford to the channel actually applied.
pub trait ChannelProvider: Sync {
    fn apply(&self, group: &CliffordGroup, index: usize, rho: &Operator) -> Operator;
}

/// Perfect Cliffords.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdealChannels;

impl ChannelProvider for IdealChannels {
    fn apply(&self, group: &CliffordGroup, index: usize, rho: &Operator) -> Operator {
        let u = &group.element(index).unitary;
        u * rho * u.adjoint()
    }
}

/// Perfect Clifford followed by `ρ ↦ p·ρ + (1−p)·Tr(ρ)·I/4`.
#[derive(Debug, Clone, Copy)]
pub struct DepolarizingChannels {
    pub p: f64,
}

fn depolarize(p: f64, rho: &Operator) -> Operator {
    let tr = rho.trace();
    rho * C64::new(p, 0.0) + identity(4) * (tr * ((1.0 - p) / D))
}

impl ChannelProvider for DepolarizingChannels {
    fn apply(&self, group: &CliffordGroup, index: usize, rho: &Operator) -> Operator {
        depolarize(self.p, &IdealChannels.apply(group, index, rho))
    }
}

/// Cliffords compiled into perfect single-qubit layers and a given
/// entangler channel.
#[derive(Debug, Clone)]
pub struct CompiledChannels {
    pub entangler: GateChannel,
}

impl ChannelProvider for CompiledChannels {
    fn apply(&self, group: &CliffordGroup, index: usize, rho: &Operator) -> Operator {
        let mut r = rho.clone();
        for l in &group.element(index).decomposition {
            r = match l {
                Layer::Entangler => self.entangler.apply(&r),
                local => {
                    let u = group.layer_unitary(*local);
                    &u * r * u.adjoint()
                }
            };
        }
        r
    }
}

/// Channel of the echoed CR gate on a device, in the qubit frame and
/// restricted to the computational subspace. Coherent if `coherence` is `None`.
pub fn device_gate_channel(
    p: &DeviceParams,
    cr: &CrParams,
    echo: &EchoConfig,
    coherence: Option<&CoherenceParams>,
    dt: f64,
) -> Result<GateChannel> {
    match coherence {
        None => {
            let u = crate::calibration::echoed_gate_unitary(p, cr, echo, dt)?;
            Ok(GateChannel::Superop(unitary_superop(&qubit_block(
                &u,
                p.levels_per_transmon,
            ))))
        }
        Some(coh) => {
            let schedule = build_echoed_cr_schedule(cr, echo)?;
            let total = schedule.total_duration;
            let sys = ScheduledDevice::new(p.clone(), schedule)?;
            let s = lindblad_superop(&sys, coh, dt)?;
            // Target-frequency frame to qubit frame: ρ ↦ DρD† with
            // D = diag(e^{iΔ·n_c·t}).
            let l = p.levels_per_transmon;
            let omega = GHZ * (p.f_control - p.f_target);
            let dphase: Vec<C64> = (0..l * l)
                .map(|i| C64::from_polar(1.0, omega * (i / l) as f64 * total))
                .collect();
            let d = l * l;
            let s = Operator::from_fn(d * d, d * d, |r, c| {
                let (i, j) = (r % d, r / d);
                s[(r, c)] * dphase[j].conj() * dphase[i]
            });
            Ok(GateChannel::Superop(restrict_superop(&s, l)))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RbOptions {
    /// Increasing sequence lengths (number of random Cliffords).
    pub lengths: Vec<usize>,
    pub n_seqs: usize,
    pub shots: Shots,
    pub seed: u64,
}

impl Default for RbOptions {
    fn default() -> Self {
        Self {
            lengths: vec![2, 4, 8, 16, 32, 64, 100],
            n_seqs: 35,
            shots: Shots::Exact,
            seed: 0,
        }
    }
}

impl RbOptions {
    fn validate(&self) -> Result<()> {
        if self.lengths.is_empty() || self.lengths.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid(
                "lengths",
                "must be non-empty and strictly increasing",
            ));
        }
        if self.lengths.len() < 3 {
            return Err(Error::invalid(
                "lengths",
                "need at least 3 lengths to fit A·α^m + B",
            ));
        }
        if self.n_seqs == 0 {
            return Err(Error::invalid("n_seqs", "must be positive"));
        }
        Ok(())
    }
}

/// Averaged survival decay and its fit `F(m) = A·α^m + B`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decay {
    pub lengths: Vec<usize>,
    pub mean_survival: Vec<f64>,
    pub stderr: Vec<f64>,
    pub a: f64,
    pub b: f64,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RbResult {
    pub schema_version: u32,
    pub reference: Decay,
    /// Error per Clifford `(d−1)(1−α)/d`.
    pub r: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interleaved: Option<Decay>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_gate: Option<f64>,
    /// Systematic bound `E` on `r_gate`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_gate_bound: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_gate_interval: Option<[f64; 2]>,
    pub warnings: Vec<String>,
}

impl RbResult {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// `length,mean,stderr`, plus `interleaved_mean,interleaved_stderr` for IRB.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("length,mean,stderr");
        if self.interleaved.is_some() {
            out.push_str(",interleaved_mean,interleaved_stderr");
        }
        out.push('\n');
        for (k, m) in self.reference.lengths.iter().enumerate() {
            out.push_str(&format!(
                "{m},{},{}",
                self.reference.mean_survival[k], self.reference.stderr[k]
            ));
            if let Some(i) = &self.interleaved {
                out.push_str(&format!(",{},{}", i.mean_survival[k], i.stderr[k]));
            }
            out.push('\n');
        }
        out
    }
}

/// Error per gate from a decay parameter.
pub fn error_per_gate(alpha: f64) -> f64 {
    (D - 1.0) * (1.0 - alpha) / D
}

fn fit_decay(lengths: &[usize], mean: &[f64]) -> Result<(f64, f64, f64)> {
    let b0 = 1.0 / D;
    let a0 = (mean[0] - b0).clamp(0.05, 1.2);
    let last = mean.len() - 1;
    let ratio = ((mean[last] - b0) / (mean[0] - b0)).clamp(1e-6, 1.0);
    let alpha0 = ratio
        .powf(1.0 / (lengths[last] - lengths[0]) as f64)
        .clamp(1e-3, 1.0);
    let opts = LmOptions {
        lower: Some(vec![0.0, 0.0, 0.0]),
        upper: Some(vec![1.2, 1.2, 1.0]),
        ..Default::default()
    };
    let res = levenberg_marquardt(
        |p, out| {
            for (k, m) in lengths.iter().enumerate() {
                out[k] = p[0] * p[2].powi(*m as i32) + p[1] - mean[k];
            }
        },
        lengths.len(),
        &[a0, b0, alpha0],
        &opts,
    );
    if !res.converged || res.params.iter().any(|v| !v.is_finite()) {
        return Err(Error::BenchmarkFit(format!(
            "F = A·α^m + B did not converge; lengths {lengths:?}, mean survival {mean:?}"
        )));
    }
    Ok((res.params[0], res.params[1], res.params[2]))
}

/// Survival of `|00⟩` for every (length, sequence) pair.
fn run_sequences(
    group: &CliffordGroup,
    provider: &dyn ChannelProvider,
    interleave: Option<(&GateChannel, usize)>,
    opts: &RbOptions,
    stream: u64,
) -> Vec<Vec<f64>> {
    let mut rho0 = Operator::zeros(4, 4);
    rho0[(0, 0)] = C64::new(1.0, 0.0);
    opts.lengths
        .par_iter()
        .enumerate()
        .map(|(li, &m)| {
            (0..opts.n_seqs)
                .into_par_iter()
                .map(|s| {
                    let mut rng =
                        point_rng(opts.seed, (stream << 56) | ((li as u64) << 32) | s as u64);
                    let mut rho = rho0.clone();
                    let mut net = group.identity_index();
                    for _ in 0..m {
                        let c = rng.random_range(0..group.len());
                        rho = provider.apply(group, c, &rho);
                        net = group.compose(net, c);
                        if let Some((gate, gi)) = interleave {
                            rho = gate.apply(&rho);
                            net = group.compose(net, gi);
                        }
                    }
                    rho = provider.apply(group, group.inverse(net), &rho);
                    let p = rho[(0, 0)].re.clamp(0.0, 1.0);
                    match opts.shots {
                        Shots::Exact => p,
                        Shots::Count(n) => {
                            let k = Binomial::new(n as u64, p)
                                .expect("p in [0, 1]")
                                .sample(&mut rng);
                            k as f64 / n as f64
                        }
                    }
                })
                .collect()
        })
        .collect()
}

fn decay_from(lengths: &[usize], raw: &[Vec<f64>]) -> Result<Decay> {
    let mut mean = Vec::with_capacity(raw.len());
    let mut stderr = Vec::with_capacity(raw.len());
    for v in raw {
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        let var = if v.len() > 1 {
            v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        mean.push(m);
        stderr.push((var / n).sqrt());
    }
    let (a, b, alpha) = fit_decay(lengths, &mean)?;
    Ok(Decay {
        lengths: lengths.to_vec(),
        mean_survival: mean,
        stderr,
        a,
        b,
        alpha,
    })
}

/// Standard RB: random Clifford sequences closed by their inverse.
pub fn rb_experiment(provider: &dyn ChannelProvider, opts: &RbOptions) -> Result<RbResult> {
    opts.validate()?;
    let group = clifford_group_2q();
    let raw = run_sequences(group, provider, None, opts, 0);
    let reference = decay_from(&opts.lengths, &raw)?;
    Ok(RbResult {
        schema_version: SCHEMA_VERSION,
        r: error_per_gate(reference.alpha),
        reference,
        interleaved: None,
        r_gate: None,
        r_gate_bound: None,
        r_gate_interval: None,
        warnings: Vec::new(),
    })
}

/// Systematic bound on the interleaved gate error for decay parameters of
/// the reference and interleaved experiments (two qubits).
pub fn irb_systematic_bound(alpha_ref: f64, alpha_int: f64) -> f64 {
    let d2 = D * D;
    let a = (D - 1.0) * ((alpha_ref - alpha_int / alpha_ref).abs() + (1.0 - alpha_ref)) / D;
    let b = 2.0 * (d2 - 1.0) * (1.0 - alpha_ref) / (alpha_ref * d2)
        + 4.0 * (1.0 - alpha_ref).max(0.0).sqrt() * (d2 - 1.0).sqrt() / alpha_ref;
    a.min(b)
}

/// Interleaved RB of `gate`, whose ideal unitary `target` must be a Clifford.
pub fn interleaved_rb(
    provider: &dyn ChannelProvider,
    gate: &GateChannel,
    target: &Operator,
    opts: &RbOptions,
) -> Result<RbResult> {
    opts.validate()?;
    let group = clifford_group_2q();
    let gi = group
        .index_of(target)
        .ok_or_else(|| Error::invalid("target", "interleaved gate is not a two-qubit Clifford"))?;
    let (raw_ref, raw_int) = rayon::join(
        || run_sequences(group, provider, None, opts, 0),
        || run_sequences(group, provider, Some((gate, gi)), opts, 1),
    );
    let reference = decay_from(&opts.lengths, &raw_ref)?;
    let interleaved = decay_from(&opts.lengths, &raw_int)?;
    let mut warnings = Vec::new();
    let ratio = if reference.alpha > 0.0 {
        interleaved.alpha / reference.alpha
    } else {
        return Err(Error::BenchmarkFit(
            "reference decay parameter is zero".into(),
        ));
    };
    let noise: f64 = reference
        .stderr
        .iter()
        .chain(&interleaved.stderr)
        .fold(0.0, |a, b| a.max(*b));
    if ratio > 1.0 + 1e-9 + noise {
        warnings.push("interleaved gate better than reference; check model".into());
    }
    let r_gate = (D - 1.0) * (1.0 - ratio) / D;
    let bound = irb_systematic_bound(reference.alpha, interleaved.alpha);
    Ok(RbResult {
        schema_version: SCHEMA_VERSION,
        r: error_per_gate(reference.alpha),
        reference,
        interleaved: Some(interleaved),
        r_gate: Some(r_gate),
        r_gate_bound: Some(bound),
        r_gate_interval: Some([r_gate - bound, r_gate + bound]),
        warnings,
    })
}
