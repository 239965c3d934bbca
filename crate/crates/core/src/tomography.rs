//! CR Hamiltonian tomography: conditional Rabi traces, Bloch-generator fits,
//! CR coefficients and the R-vector.
//!
//! The Bloch model is `r(t) = exp(A·t)·r(0)` with
//! `A = 2π·[[0, Δ, Ωy], [−Δ, 0, −Ωx], [−Ωy, Ωx, 0]]` (MHz, t in ns), i.e. a
//! rotation about `(Ωx, Ωy, −Δ)`. For a target Hamiltonian
//! `2π(aX + bY + cZ)/2` this gives `Ωx = a`, `Ωy = b` and `Δ = −c`.

use std::f64::consts::TAU;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::device::{DeviceModel, DeviceParams};
use crate::fit::{dominant_frequency, levenberg_marquardt, LmOptions};
use crate::propagation::{propagate, propagate_samples, DrivenSystem, ScheduledDevice};
use crate::pulse::{build_cr_schedule, CrParams, Envelope, DEFAULT_RISE};
use crate::quantum::{
    bloch_vector_of_target, eigh, expm_hermitian, Operator, PauliCoefficients, QubitState, C64,
};
use crate::units::MHZ;
use crate::{Error, Result, SCHEMA_VERSION};

/// Sampling of each expectation value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shots {
    Exact,
    Count(u32),
}

impl Serialize for Shots {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Shots::Exact => s.serialize_str("exact"),
            Shots::Count(n) => s.serialize_u32(*n),
        }
    }
}

impl<'de> Deserialize<'de> for Shots {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Count(u32),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Count(0) => Err(serde::de::Error::custom("shot count must be positive")),
            Raw::Count(n) => Ok(Shots::Count(n)),
            Raw::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

impl std::str::FromStr for Shots {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("exact") {
            return Ok(Shots::Exact);
        }
        match s.parse::<u32>() {
            Ok(n) if n > 0 => Ok(Shots::Count(n)),
            _ => Err(Error::invalid(
                "shots",
                format!("expected a positive integer or `exact`, got `{s}`"),
            )),
        }
    }
}

impl std::fmt::Display for Shots {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Shots::Exact => write!(f, "exact"),
            Shots::Count(n) => write!(f, "{n}"),
        }
    }
}

/// Target-qubit measurement axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];
}

/// One Rabi trace to acquire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceSpec {
    pub control: usize,
    pub target: usize,
    pub control_state: u8,
    pub axis: Axis,
}

/// Trace list for CR tomography of each (control, target) pair: two control
/// preparations times three target axes.
pub fn plan_tomography(pairs: &[(usize, usize)]) -> Vec<TraceSpec> {
    let mut out = Vec::with_capacity(6 * pairs.len());
    for &(control, target) in pairs {
        for control_state in 0..2u8 {
            for axis in Axis::ALL {
                out.push(TraceSpec {
                    control,
                    target,
                    control_state,
                    axis,
                });
            }
        }
    }
    out
}

/// Default Rabi duration grid: 0–1000 ns in 64 points.
pub fn default_durations() -> Vec<f64> {
    linspace(0.0, 1000.0, 64)
}

pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![a],
        _ => (0..n)
            .map(|k| a + (b - a) * k as f64 / (n - 1) as f64)
            .collect(),
    }
}

/// Conditional Rabi traces. `traces[c][axis][k]` is the target expectation
/// value for control state `c` after `durations[k]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TomographyDataset {
    #[serde(default = "schema_version")]
    pub schema_version: u32,
    pub durations: Vec<f64>,
    /// Times used by the generator fit: the flat-top-equivalent pulse
    /// lengths (area / peak amplitude). Equal to `durations` for square
    /// pulses and synthetic data.
    pub fit_times: Vec<f64>,
    pub traces: [[Vec<f64>; 3]; 2],
    pub shots: Shots,
}

fn schema_version() -> u32 {
    SCHEMA_VERSION
}

pub const DATASET_CSV_HEADER: &str = "duration_ns,c0_x,c0_y,c0_z,c1_x,c1_y,c1_z";

impl TomographyDataset {
    pub fn validate(&self) -> Result<()> {
        let n = self.durations.len();
        if n == 0 {
            return Err(Error::invalid("durations", "empty"));
        }
        if self.fit_times.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: self.fit_times.len(),
            });
        }
        for c in &self.traces {
            for tr in c {
                if tr.len() != n {
                    return Err(Error::DimensionMismatch {
                        expected: n,
                        found: tr.len(),
                    });
                }
                if tr.iter().any(|v| !v.is_finite() || v.abs() > 1.0 + 1e-9) {
                    return Err(Error::invalid(
                        "traces",
                        "expectation values must lie in [-1, 1]",
                    ));
                }
            }
        }
        Ok(())
    }

    /// Bloch vector of control state `c` at sample `k`.
    pub fn point(&self, c: usize, k: usize) -> [f64; 3] {
        [
            self.traces[c][0][k],
            self.traces[c][1][k],
            self.traces[c][2][k],
        ]
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(DATASET_CSV_HEADER);
        out.push('\n');
        for (k, d) in self.durations.iter().enumerate() {
            let mut row = vec![format!("{d}")];
            for c in 0..2 {
                for a in 0..3 {
                    row.push(format!("{}", self.traces[c][a][k]));
                }
            }
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Anything that can produce exact conditional Rabi expectation values.
pub trait RabiSource: Sync {
    /// Target Bloch vectors after each duration, control prepared in `control`.
    fn bloch_vectors(&self, control: u8, durations: &[f64]) -> Result<Vec<[f64; 3]>>;

    /// Fit time axis for the given durations.
    fn fit_times(&self, durations: &[f64]) -> Vec<f64> {
        durations.to_vec()
    }
}

/// Target Bloch vector (in the target's rotating frame) starting from
/// `|control⟩⊗|0⟩` under the propagator `u`.
fn target_bloch(u: &Operator, levels: usize, control: u8) -> Result<[f64; 3]> {
    let psi0 = QubitState::basis(levels, control as usize, 0);
    let psi = crate::propagation::apply_unitary(u, &psi0);
    Ok(bloch_vector_of_target(&psi)?.vector)
}

/// Flat-top CR pulse (with optional cancellation) of variable length on a
/// device. Pulses shorter than two rise times use `rise = duration/2`.
#[derive(Debug, Clone)]
pub struct DeviceRabi {
    pub model: DeviceModel,
    /// Pulse parameters; `width` is ignored.
    pub cr: CrParams,
    pub dt: f64,
    fast: Option<FastPath>,
}

#[derive(Debug, Clone)]
struct FastPath {
    rise: Operator,
    fall: Operator,
    vectors: Operator,
    energies: Vec<f64>,
}

impl DeviceRabi {
    pub fn new(params: DeviceParams, cr: CrParams, dt: f64) -> Result<Self> {
        let model = DeviceModel::new(params)?;
        let mut out = Self {
            model,
            cr,
            dt,
            fast: None,
        };
        out.fast = Some(out.build_fast_path()?);
        Ok(out)
    }

    fn system(&self, width: f64) -> Result<ScheduledDevice> {
        let rise = if width < 2.0 * self.cr.rise {
            width / 2.0
        } else {
            self.cr.rise
        };
        let cr = CrParams {
            width,
            rise,
            ..self.cr
        };
        let frame = self.model.params.f_target;
        ScheduledDevice::with_frame(self.model.clone(), build_cr_schedule(&cr)?, frame)
    }

    fn build_fast_path(&self) -> Result<FastPath> {
        let r = self.cr.rise;
        let w = 2.0 * r + 1.0;
        let sys = self.system(w)?;
        let us = propagate_samples(&sys, self.dt, &[r, w - r, w])?;
        let fall = &us[2] * us[1].adjoint();
        let h = sys.hamiltonian(0.5 * w, sys.frame());
        let (energies, vectors) = eigh(&h)?;
        Ok(FastPath {
            rise: us[0].clone(),
            fall,
            vectors,
            energies,
        })
    }

    /// Propagator of a pulse of total length `width`.
    pub fn unitary(&self, width: f64) -> Result<Operator> {
        if width <= 0.0 {
            return Ok(crate::quantum::identity(self.model.dim()));
        }
        let r = self.cr.rise;
        match &self.fast {
            Some(f) if width >= 2.0 * r => {
                let tau = width - 2.0 * r;
                let n = f.energies.len();
                let mut scaled = f.vectors.clone();
                for j in 0..n {
                    let p = C64::from_polar(1.0, -f.energies[j] * tau);
                    scaled.column_mut(j).iter_mut().for_each(|z| *z *= p);
                }
                let flat = scaled * f.vectors.adjoint();
                Ok(&f.fall * flat * &f.rise)
            }
            _ => propagate(&self.system(width)?, self.dt),
        }
    }

    fn effective_time(&self, width: f64) -> f64 {
        if width <= 0.0 {
            return 0.0;
        }
        let rise = if width < 2.0 * self.cr.rise {
            width / 2.0
        } else {
            self.cr.rise
        };
        Envelope::flat_top_with(width, 1.0, self.cr.sigma, rise)
            .map(|e| e.area())
            .unwrap_or(width)
    }
}

impl RabiSource for DeviceRabi {
    fn bloch_vectors(&self, control: u8, durations: &[f64]) -> Result<Vec<[f64; 3]>> {
        let l = self.model.levels();
        durations
            .par_iter()
            .map(|&d| target_bloch(&self.unitary(d)?, l, control))
            .collect()
    }

    fn fit_times(&self, durations: &[f64]) -> Vec<f64> {
        durations.iter().map(|&d| self.effective_time(d)).collect()
    }
}

/// Constant two-qubit Hamiltonian (rad/ns) with exact exponentials.
#[derive(Debug, Clone)]
pub struct HamiltonianRabi {
    pub h: Operator,
}

impl HamiltonianRabi {
    /// From Pauli rates in MHz.
    pub fn from_coefficients(c: &PauliCoefficients) -> Self {
        Self { h: c.reconstruct() }
    }
}

impl RabiSource for HamiltonianRabi {
    fn bloch_vectors(&self, control: u8, durations: &[f64]) -> Result<Vec<[f64; 3]>> {
        durations
            .iter()
            .map(|&t| target_bloch(&expm_hermitian(&self.h, t)?, 2, control))
            .collect()
    }
}

/// Forward Bloch model with the given generators per control state.
#[derive(Debug, Clone)]
pub struct SyntheticRabi {
    pub generators: [BlochGenerator; 2],
}

impl RabiSource for SyntheticRabi {
    fn bloch_vectors(&self, control: u8, durations: &[f64]) -> Result<Vec<[f64; 3]>> {
        let g = &self.generators[control as usize];
        Ok(durations.iter().map(|&t| g.evaluate(t)).collect())
    }
}

/// Binomial estimate of an expectation value.
fn sample_expectation(e: f64, shots: u32, rng: &mut ChaCha8Rng) -> f64 {
    let p = ((1.0 + e) / 2.0).clamp(0.0, 1.0);
    let k = Binomial::new(shots as u64, p)
        .expect("p in [0, 1]")
        .sample(rng);
    2.0 * k as f64 / shots as f64 - 1.0
}

/// Deterministic per-point stream derived from `(seed, index)`.
pub(crate) fn point_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Six conditional Rabi traces from `source`.
pub fn acquire_dataset(
    source: &dyn RabiSource,
    durations: &[f64],
    shots: Shots,
    seed: u64,
) -> Result<TomographyDataset> {
    if durations.is_empty() {
        return Err(Error::invalid("durations", "empty"));
    }
    if durations.windows(2).any(|w| w[1] <= w[0]) || durations[0] < 0.0 {
        return Err(Error::invalid(
            "durations",
            "must be non-negative and strictly increasing",
        ));
    }
    let mut traces: [[Vec<f64>; 3]; 2] = Default::default();
    for c in 0..2u8 {
        let vecs = source.bloch_vectors(c, durations)?;
        for (k, v) in vecs.iter().enumerate() {
            for a in 0..3 {
                let value = match shots {
                    Shots::Exact => v[a],
                    Shots::Count(n) => {
                        let idx = ((c as u64 * 3 + a as u64) << 32) | k as u64;
                        sample_expectation(v[a], n, &mut point_rng(seed, idx))
                    }
                };
                traces[c as usize][a].push(value);
            }
        }
    }
    let ds = TomographyDataset {
        schema_version: SCHEMA_VERSION,
        durations: durations.to_vec(),
        fit_times: source.fit_times(durations),
        traces,
        shots,
    };
    ds.validate()?;
    Ok(ds)
}

/// Conditional Rabi dataset for a flat-top CR (+cancellation) pulse of each
/// duration, starting from `|c⟩⊗|0⟩`.
pub fn simulate_rabi_dataset(
    p: &DeviceParams,
    cr: &CrParams,
    durations: &[f64],
    shots: Shots,
    seed: u64,
    dt: f64,
) -> Result<TomographyDataset> {
    let src = DeviceRabi::new(p.clone(), *cr, dt)?;
    acquire_dataset(&src, durations, shots, seed)
}

/// Fitted generator of the target Bloch dynamics for one control state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlochGenerator {
    /// MHz
    pub omega_x: f64,
    /// MHz
    pub omega_y: f64,
    /// MHz
    pub delta: f64,
    pub r0: [f64; 3],
    /// RMS error per trace point.
    pub residual: f64,
}

impl BlochGenerator {
    pub fn new(omega_x: f64, omega_y: f64, delta: f64) -> Self {
        Self {
            omega_x,
            omega_y,
            delta,
            r0: [0.0, 0.0, 1.0],
            residual: 0.0,
        }
    }

    /// Rotation axis scaled to rad/ns.
    fn axis(&self) -> [f64; 3] {
        [self.omega_x * MHZ, self.omega_y * MHZ, -self.delta * MHZ]
    }

    /// `exp(A t)·r0`.
    pub fn evaluate(&self, t: f64) -> [f64; 3] {
        rotate(self.axis(), self.r0, t)
    }

    /// The generator matrix A in rad/ns.
    pub fn matrix(&self) -> [[f64; 3]; 3] {
        let (x, y, d) = (self.omega_x * MHZ, self.omega_y * MHZ, self.delta * MHZ);
        [[0.0, d, y], [-d, 0.0, -x], [-y, x, 0.0]]
    }
}

/// Rodrigues rotation of `r` about `w` (rad/ns) for time `t`.
fn rotate(w: [f64; 3], r: [f64; 3], t: f64) -> [f64; 3] {
    let norm = (w[0] * w[0] + w[1] * w[1] + w[2] * w[2]).sqrt();
    if norm == 0.0 {
        return r;
    }
    let n = [w[0] / norm, w[1] / norm, w[2] / norm];
    let (s, c) = (norm * t).sin_cos();
    let dot = n[0] * r[0] + n[1] * r[1] + n[2] * r[2];
    let cross = [
        n[1] * r[2] - n[2] * r[1],
        n[2] * r[0] - n[0] * r[2],
        n[0] * r[1] - n[1] * r[0],
    ];
    [
        r[0] * c + cross[0] * s + n[0] * dot * (1.0 - c),
        r[1] * c + cross[1] * s + n[1] * dot * (1.0 - c),
        r[2] * c + cross[2] * s + n[2] * dot * (1.0 - c),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlochFitOptions {
    /// Fit the initial Bloch vector instead of fixing it to +z.
    pub free_r0: bool,
    /// Largest RMS residual accepted as converged.
    pub max_residual: f64,
}

impl Default for BlochFitOptions {
    fn default() -> Self {
        Self {
            free_r0: false,
            max_residual: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlochFit {
    pub generator: BlochGenerator,
    pub warnings: Vec<String>,
}

/// Least-squares fit of `r(t) = exp(A t) r0` to three traces sampled at `t`.
pub fn fit_bloch_generator(
    t: &[f64],
    traces: [&[f64]; 3],
    opts: &BlochFitOptions,
) -> Result<BlochFit> {
    let n = t.len();
    if traces.iter().any(|tr| tr.len() != n) {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: traces
                .iter()
                .map(|tr| tr.len())
                .find(|&l| l != n)
                .unwrap_or(n),
        });
    }
    if n < 12 {
        return Err(Error::InsufficientSampling(format!(
            "{n} time points, need at least 12"
        )));
    }
    if t.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("t", "times must be strictly increasing"));
    }
    let span = t[n - 1] - t[0];
    let mut warnings = Vec::new();

    let variation = traces
        .iter()
        .map(|tr| {
            let m = tr.iter().sum::<f64>() / n as f64;
            tr.iter().map(|v| (v - m).abs()).fold(0.0, f64::max)
        })
        .fold(0.0, f64::max);
    // Dominant frequency of the most oscillating trace (cycles/ns).
    let freq = if variation < 1e-9 {
        0.0
    } else {
        let best = (0..3)
            .max_by(|&a, &b| {
                let var = |tr: &[f64]| {
                    let m = tr.iter().sum::<f64>() / n as f64;
                    tr.iter().map(|v| (v - m).powi(2)).sum::<f64>()
                };
                var(traces[a]).partial_cmp(&var(traces[b])).unwrap()
            })
            .unwrap();
        dominant_frequency(t, traces[best])
    };
    let nyquist = 0.5 * (n - 1) as f64 / span;
    if freq > 0.8 * nyquist {
        warnings.push(format!(
            "dominant frequency {:.3} MHz is within 20% of the {:.3} MHz Nyquist limit; the fit may be aliased",
            freq * 1e3,
            nyquist * 1e3
        ));
    }

    // Seeds in (Ωx, Ωy, Δ) MHz.
    let omega = freq * 1e3;
    let mut seeds: Vec<[f64; 3]> = Vec::new();
    let k1 = 1.min(n - 1);
    let h = t[k1] - t[0];
    let mut push_split = |ox: f64, oy: f64| {
        let rest = (omega * omega - ox * ox - oy * oy).max(0.0).sqrt();
        seeds.push([ox, oy, rest]);
        seeds.push([ox, oy, -rest]);
    };
    if h > 0.0 {
        // ṙ(0) = ω'×z = (ω'_y, −ω'_x, 0).
        let ox = -(traces[1][k1] - traces[1][0]) / h / MHZ;
        let oy = (traces[0][k1] - traces[0][0]) / h / MHZ;
        let scale = if (ox * ox + oy * oy).sqrt() > omega && omega > 0.0 {
            omega / (ox * ox + oy * oy).sqrt()
        } else {
            1.0
        };
        push_split(ox * scale, oy * scale);
    }
    // Time average of a rotating vector is n(n·r0) = n_z n̂ for r0 = z.
    let mean: Vec<f64> = traces
        .iter()
        .map(|tr| tr.iter().sum::<f64>() / n as f64)
        .collect();
    if mean[2] > 0.0 {
        let nz = mean[2].sqrt();
        let nx = mean[0] / nz;
        let ny = mean[1] / nz;
        seeds.push([nx * omega, ny * omega, -nz * omega]);
        seeds.push([-nx * omega, -ny * omega, nz * omega]);
    }
    seeds.push([omega, 0.0, 0.0]);
    seeds.push([0.0, omega, 0.0]);
    let base = seeds[0];
    for k in 0..8 {
        let ang = TAU * k as f64 / 8.0;
        let s = 1.0 + 0.1 * ((k % 3) as f64 - 1.0);
        let (sa, ca) = ang.sin_cos();
        seeds.push([
            s * (base[0] * ca - base[1] * sa),
            s * (base[0] * sa + base[1] * ca),
            s * base[2] * if k % 2 == 0 { 1.0 } else { -1.0 },
        ]);
    }

    let model = |p: &[f64], tk: f64| -> [f64; 3] {
        let r0 = if opts.free_r0 {
            let (st, ct) = p[3].sin_cos();
            let (sp, cp) = p[4].sin_cos();
            [st * cp, st * sp, ct]
        } else {
            [0.0, 0.0, 1.0]
        };
        rotate([p[0] * MHZ, p[1] * MHZ, -p[2] * MHZ], r0, tk)
    };
    let residual = |p: &[f64], out: &mut [f64]| {
        for k in 0..n {
            let r = model(p, t[k]);
            for a in 0..3 {
                out[3 * k + a] = r[a] - traces[a][k];
            }
        }
    };
    let lm = LmOptions::default();
    let mut best: Option<crate::fit::LmResult> = None;
    let starts = seeds.len();
    for s in &seeds {
        let mut x0 = s.to_vec();
        if opts.free_r0 {
            x0.extend_from_slice(&[1e-3, 0.0]);
        }
        let res = levenberg_marquardt(residual, 3 * n, &x0, &lm);
        if best.as_ref().is_none_or(|b| res.cost < b.cost) {
            best = Some(res);
        }
        if best.as_ref().unwrap().cost < 1e-24 {
            break;
        }
    }
    let best = best.expect("at least one start");
    let rms = (best.cost / (3 * n) as f64).sqrt();
    if !rms.is_finite() || rms > opts.max_residual {
        return Err(Error::FitNotConverged {
            starts,
            best_residual: rms,
        });
    }
    let p = &best.params;
    let rate = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt() * 1e-3;
    if variation > 0.2 && rate * span < 0.5 {
        return Err(Error::InsufficientSampling(format!(
            "samples span {span:.1} ns, less than half of a {:.1} ns oscillation period",
            1.0 / rate
        )));
    }
    let r0 = if opts.free_r0 {
        model(p, 0.0)
    } else {
        [0.0, 0.0, 1.0]
    };
    Ok(BlochFit {
        generator: BlochGenerator {
            omega_x: p[0],
            omega_y: p[1],
            delta: p[2],
            r0,
            residual: rms,
        },
        warnings,
    })
}

/// Single- and two-qubit CR rates from the generators fitted with the control
/// in |0⟩ and |1⟩: I-type = (g₀ + g₁)/2, Z-type = (g₀ − g₁)/2, with
/// `(Ωx, Ωy, −Δ)` giving the X, Y and Z rates.
pub fn extract_cr_coefficients(g0: &BlochGenerator, g1: &BlochGenerator) -> PauliCoefficients {
    let v0 = [g0.omega_x, g0.omega_y, -g0.delta];
    let v1 = [g1.omega_x, g1.omega_y, -g1.delta];
    let mut c = PauliCoefficients::zero();
    for (a, axis) in ["X", "Y", "Z"].iter().enumerate() {
        c = c
            .with(&format!("I{axis}"), 0.5 * (v0[a] + v1[a]))
            .with(&format!("Z{axis}"), 0.5 * (v0[a] - v1[a]));
    }
    c
}

/// Norm of `R = (r₀ + r₁)/2` at each duration.
pub fn r_vector_trace(ds: &TomographyDataset) -> Vec<f64> {
    (0..ds.durations.len())
        .map(|k| {
            let a = ds.point(0, k);
            let b = ds.point(1, k);
            0.5 * ((a[0] + b[0]).powi(2) + (a[1] + b[1]).powi(2) + (a[2] + b[2]).powi(2)).sqrt()
        })
        .collect()
}

/// Threshold the R-vector must dip below to count as entangling.
pub const ENTANGLING_THRESHOLD: f64 = 0.1;

/// Time of the first local minimum of ‖R‖ below 0.1, refined by intersecting
/// the steeper neighbouring segment with zero (‖R‖ is V-shaped near a zero).
pub fn estimate_entangling_time(durations: &[f64], r: &[f64]) -> Result<f64> {
    let n = r.len();
    if durations.len() != n {
        return Err(Error::DimensionMismatch {
            expected: durations.len(),
            found: n,
        });
    }
    for k in 0..n {
        if r[k] >= ENTANGLING_THRESHOLD {
            continue;
        }
        let left_ok = k == 0 || r[k] <= r[k - 1];
        let right_ok = k + 1 == n || r[k] <= r[k + 1];
        if !(left_ok && right_ok) {
            continue;
        }
        let tk = durations[k];
        let sl = if k > 0 {
            (r[k] - r[k - 1]) / (tk - durations[k - 1])
        } else {
            0.0
        };
        let sr = if k + 1 < n {
            (r[k + 1] - r[k]) / (durations[k + 1] - tk)
        } else {
            0.0
        };
        let t0 = if sl.abs() >= sr.abs() && sl < 0.0 {
            (tk + r[k] / -sl).min(if k + 1 < n { durations[k + 1] } else { tk })
        } else if sr > 0.0 {
            (tk - r[k] / sr).max(if k > 0 { durations[k - 1] } else { tk })
        } else {
            tk
        };
        return Ok(t0);
    }
    Err(Error::NoEntanglingPoint)
}

/// Generators, coefficients and diagnostics of one tomography run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TomographyResult {
    pub schema_version: u32,
    pub generators: [BlochGenerator; 2],
    pub coefficients: PauliCoefficients,
    pub warnings: Vec<String>,
}

/// Fit both control states of a dataset and extract the CR rates.
pub fn analyze_dataset(ds: &TomographyDataset, opts: &BlochFitOptions) -> Result<TomographyResult> {
    ds.validate()?;
    let fit = |c: usize| {
        fit_bloch_generator(
            &ds.fit_times,
            [&ds.traces[c][0], &ds.traces[c][1], &ds.traces[c][2]],
            opts,
        )
    };
    let (f0, f1) = rayon::join(|| fit(0), || fit(1));
    let (f0, f1) = (f0?, f1?);
    let mut warnings = f0.warnings.clone();
    warnings.extend(f1.warnings.iter().cloned());
    Ok(TomographyResult {
        schema_version: SCHEMA_VERSION,
        coefficients: extract_cr_coefficients(&f0.generator, &f1.generator),
        generators: [f0.generator, f1.generator],
        warnings,
    })
}

/// Acquire and analyze in one step.
pub fn run_tomography(
    source: &dyn RabiSource,
    durations: &[f64],
    shots: Shots,
    seed: u64,
    opts: &BlochFitOptions,
) -> Result<(TomographyDataset, TomographyResult)> {
    let ds = acquire_dataset(source, durations, shots, seed)?;
    let res = analyze_dataset(&ds, opts)?;
    Ok((ds, res))
}

/// Default CR pulse shape for tomography.
pub fn tomography_pulse(cr_amp: f64, cr_phase: f64, can_amp: f64, can_phase: f64) -> CrParams {
    CrParams::new(cr_amp, cr_phase, can_amp, can_phase, 2.0 * DEFAULT_RISE)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::device::Channel;
    use crate::propagation::DEFAULT_DT;
    use crate::quantum::max_abs_diff;
    use rand::Rng;

    fn synthetic(g0: BlochGenerator, g1: BlochGenerator) -> SyntheticRabi {
        SyntheticRabi {
            generators: [g0, g1],
        }
    }

    fn fit_exact(g: BlochGenerator, t: &[f64]) -> BlochGenerator {
        let v: Vec<[f64; 3]> = t.iter().map(|&x| g.evaluate(x)).collect();
        let tr: Vec<Vec<f64>> = (0..3).map(|a| v.iter().map(|p| p[a]).collect()).collect();
        fit_bloch_generator(t, [&tr[0], &tr[1], &tr[2]], &BlochFitOptions::default())
            .unwrap()
            .generator
    }

    #[test]
    fn recovers_pure_x_generator() {
        let g = fit_exact(
            BlochGenerator::new(2.0, 0.0, 0.0),
            &linspace(0.0, 1000.0, 64),
        );
        assert!((g.omega_x - 2.0).abs() < 1e-6);
        assert!(g.omega_y.abs() < 1e-6 && g.delta.abs() < 1e-6);
    }

    #[test]
    fn constant_traces_give_zero_generator() {
        let t = linspace(0.0, 500.0, 20);
        let one = vec![1.0; 20];
        let zero = vec![0.0; 20];
        let f = fit_bloch_generator(&t, [&zero, &zero, &one], &BlochFitOptions::default()).unwrap();
        assert_eq!(f.generator.residual, 0.0);
        assert!(f.generator.omega_x.abs() < 1e-9 && f.generator.omega_y.abs() < 1e-9);
    }

    #[test]
    fn random_generators_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for _ in 0..100 {
            let mut rate = || {
                let m: f64 = rng.random_range(0.1..10.0);
                if rng.random_bool(0.5) {
                    m
                } else {
                    -m
                }
            };
            let g = BlochGenerator::new(rate(), rate(), rate());
            let w = (g.omega_x.powi(2) + g.omega_y.powi(2) + g.delta.powi(2)).sqrt();
            // At least three periods, at least 8 samples per period.
            let span = 3.0e3 / w;
            let n = 64.max((3.0 * 8.0) as usize);
            let f = fit_exact(g, &linspace(0.0, span, n));
            for (a, b) in [
                (f.omega_x, g.omega_x),
                (f.omega_y, g.omega_y),
                (f.delta, g.delta),
            ] {
                assert!((a - b).abs() < 1e-6 * b.abs().max(1.0), "{g:?} vs {f:?}");
            }
        }
    }

    #[test]
    fn free_initial_vector() {
        let mut g = BlochGenerator::new(1.0, 0.4, -0.3);
        g.r0 = [0.3, 0.0, (1.0f64 - 0.09).sqrt()];
        let t = linspace(0.0, 3000.0, 80);
        let v: Vec<[f64; 3]> = t.iter().map(|&x| g.evaluate(x)).collect();
        let tr: Vec<Vec<f64>> = (0..3).map(|a| v.iter().map(|p| p[a]).collect()).collect();
        let opts = BlochFitOptions {
            free_r0: true,
            ..Default::default()
        };
        let f = fit_bloch_generator(&t, [&tr[0], &tr[1], &tr[2]], &opts)
            .unwrap()
            .generator;
        assert!((f.omega_x - 1.0).abs() < 1e-6 && (f.delta + 0.3).abs() < 1e-6);
        assert!((f.r0[0] - 0.3).abs() < 1e-6);
    }

    #[test]
    fn model_preserves_bloch_norm() {
        let g = BlochGenerator::new(1.3, -0.7, 2.2);
        for k in 0..100 {
            let r = g.evaluate(k as f64 * 7.3);
            assert!(((r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt() - 1.0).abs() < 1e-9);
        }
        let a = g.matrix();
        for (i, row) in a.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                assert_eq!(*v, -a[j][i]);
            }
        }
    }

    #[test]
    fn sampling_errors_and_aliasing_warning() {
        let g = BlochGenerator::new(2.0, 0.0, 0.0);
        let few = linspace(0.0, 1000.0, 10);
        let v: Vec<f64> = vec![0.0; 10];
        assert!(matches!(
            fit_bloch_generator(&few, [&v, &v, &v], &BlochFitOptions::default()),
            Err(Error::InsufficientSampling(_))
        ));
        // 2 MHz over 100 ns is a fifth of a period.
        let short = linspace(0.0, 100.0, 20);
        let tr: Vec<Vec<f64>> = (0..3)
            .map(|a| short.iter().map(|&t| g.evaluate(t)[a]).collect())
            .collect();
        assert!(matches!(
            fit_bloch_generator(
                &short,
                [&tr[0], &tr[1], &tr[2]],
                &BlochFitOptions::default()
            ),
            Err(Error::InsufficientSampling(_))
        ));
        // 2 MHz sampled every 230 ns: Nyquist 2.17 MHz.
        let coarse = linspace(0.0, 230.0 * 40.0, 41);
        let tr: Vec<Vec<f64>> = (0..3)
            .map(|a| coarse.iter().map(|&t| g.evaluate(t)[a]).collect())
            .collect();
        let f = fit_bloch_generator(
            &coarse,
            [&tr[0], &tr[1], &tr[2]],
            &BlochFitOptions::default(),
        )
        .unwrap();
        assert!(!f.warnings.is_empty());
    }

    #[test]
    fn extraction_rules() {
        let g = BlochGenerator::new(1.0, 0.5, 0.3);
        let c = extract_cr_coefficients(&g, &g);
        for l in ["ZX", "ZY", "ZZ"] {
            assert_eq!(c.rate(l), 0.0);
        }
        let c = extract_cr_coefficients(
            &BlochGenerator::new(3.0, 0.0, 0.0),
            &BlochGenerator::new(-3.0, 0.0, 0.0),
        );
        assert_eq!(c.rate("ZX"), 3.0);
        assert_eq!(c.rate("IX"), 0.0);
        // Linearity.
        let (a, b) = (
            BlochGenerator::new(1.0, -2.0, 0.5),
            BlochGenerator::new(0.2, 0.7, -1.1),
        );
        let s = 2.5;
        let sa = BlochGenerator::new(s * a.omega_x, s * a.omega_y, s * a.delta);
        let sb = BlochGenerator::new(s * b.omega_x, s * b.omega_y, s * b.delta);
        let lhs = extract_cr_coefficients(&sa, &sb);
        let rhs = extract_cr_coefficients(&a, &b).scaled(s);
        assert!(lhs.max_diff(&rhs) < 1e-12);
    }

    #[test]
    fn full_pipeline_on_known_hamiltonian() {
        let truth = PauliCoefficients::zero()
            .with("ZX", 1.5)
            .with("IX", 0.8)
            .with("IY", 0.2);
        let src = HamiltonianRabi::from_coefficients(&truth);
        let (_, res) = run_tomography(
            &src,
            &default_durations(),
            Shots::Exact,
            0,
            &BlochFitOptions::default(),
        )
        .unwrap();
        for l in ["ZX", "IX", "IY", "ZY", "IZ", "ZZ"] {
            assert!(
                (res.coefficients.rate(l) - truth.rate(l)).abs() < 1e-3,
                "{l}"
            );
        }
    }

    #[test]
    fn shot_noise_recovery_within_bootstrap_spread() {
        let truth = BlochGenerator::new(1.0, 0.5, 0.3);
        let src = synthetic(truth, truth);
        let t = default_durations();
        let fit = |seed: u64| {
            let ds = acquire_dataset(&src, &t, Shots::Count(1024), seed).unwrap();
            fit_bloch_generator(
                &t,
                [&ds.traces[0][0], &ds.traces[0][1], &ds.traces[0][2]],
                &BlochFitOptions::default(),
            )
            .unwrap()
            .generator
        };
        let est = fit(1);
        // Parametric bootstrap: refit data resampled from the estimate.
        let boot_src = synthetic(est, est);
        let boots: Vec<BlochGenerator> = (100..140)
            .map(|s| {
                let ds = acquire_dataset(&boot_src, &t, Shots::Count(1024), s).unwrap();
                fit_bloch_generator(
                    &t,
                    [&ds.traces[0][0], &ds.traces[0][1], &ds.traces[0][2]],
                    &BlochFitOptions::default(),
                )
                .unwrap()
                .generator
            })
            .collect();
        for (get, want) in [
            (
                Box::new(|g: &BlochGenerator| g.omega_x) as Box<dyn Fn(&BlochGenerator) -> f64>,
                1.0,
            ),
            (Box::new(|g: &BlochGenerator| g.omega_y), 0.5),
            (Box::new(|g: &BlochGenerator| g.delta), 0.3),
        ] {
            let xs: Vec<f64> = boots.iter().map(&get).collect();
            let m = xs.iter().sum::<f64>() / xs.len() as f64;
            let sd =
                (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt();
            assert!(
                (get(&est) - want).abs() < 3.0 * sd,
                "est {} want {want} sd {sd}",
                get(&est)
            );
        }
    }

    #[test]
    fn noisy_datasets_are_seed_deterministic() {
        let truth = BlochGenerator::new(1.0, 0.5, 0.3);
        let src = synthetic(truth, truth);
        let t = default_durations();
        let a = acquire_dataset(&src, &t, Shots::Count(100), 7).unwrap();
        let b = acquire_dataset(&src, &t, Shots::Count(100), 7).unwrap();
        let c = acquire_dataset(&src, &t, Shots::Count(100), 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn pure_zx_traces_mirror() {
        let src = HamiltonianRabi::from_coefficients(&PauliCoefficients::zero().with("ZX", 2.0));
        let ds = acquire_dataset(&src, &default_durations(), Shots::Exact, 0).unwrap();
        for k in 0..ds.durations.len() {
            assert!((ds.traces[0][1][k] + ds.traces[1][1][k]).abs() < 1e-12);
            assert!((ds.traces[0][2][k] - ds.traces[1][2][k]).abs() < 1e-12);
        }
    }

    #[test]
    fn r_vector_limits_and_entangling_time() {
        let f_zx = 3.01;
        let src = HamiltonianRabi::from_coefficients(&PauliCoefficients::zero().with("ZX", f_zx));
        let t = linspace(0.0, 400.0, 201);
        let ds = acquire_dataset(&src, &t, Shots::Exact, 0).unwrap();
        let r = r_vector_trace(&ds);
        assert!((r[0] - 1.0).abs() < 1e-12);
        let expected = 1.0 / (4.0 * f_zx * 1e-3);
        let te = estimate_entangling_time(&t, &r).unwrap();
        assert!((te - expected).abs() < t[1] - t[0], "{te} vs {expected}");
        assert!((expected - 83.06).abs() < 0.01);

        // Identical evolution for both controls: R stays at 1.
        let same = HamiltonianRabi::from_coefficients(&PauliCoefficients::zero().with("IX", 2.0));
        let ds = acquire_dataset(&same, &t, Shots::Exact, 0).unwrap();
        assert!(r_vector_trace(&ds).iter().all(|v| (v - 1.0).abs() < 1e-12));
        assert!(matches!(
            estimate_entangling_time(&t, &r_vector_trace(&ds)),
            Err(Error::NoEntanglingPoint)
        ));
    }

    #[test]
    fn zero_drive_device_traces_stay_at_ground() {
        let p = DeviceParams::reference();
        let ds = simulate_rabi_dataset(
            &p,
            &tomography_pulse(0.0, 0.0, 0.0, 0.0),
            &default_durations(),
            Shots::Exact,
            0,
            DEFAULT_DT,
        )
        .unwrap();
        // Hybridization through J leaves a small exchange wiggle of order (J/Δ)².
        let bound = 8.4 * (p.coupling / p.detuning_mhz()).powi(2);
        for c in 0..2 {
            for k in 0..ds.durations.len() {
                assert!((ds.traces[c][2][k] - 1.0).abs() < bound);
                assert!(ds.traces[c][0][k].abs() < bound && ds.traces[c][1][k].abs() < bound);
            }
        }
    }

    #[test]
    fn fast_path_matches_generic_propagation() {
        let p = DeviceParams::reference_with_crosstalk();
        let cr = tomography_pulse(45.0, 0.4, 1.5, 0.9);
        let src = DeviceRabi::new(p.clone(), cr, DEFAULT_DT).unwrap();
        for width in [12.0, 30.0, 47.3, 180.0] {
            let fast = src.unitary(width).unwrap();
            let sys = src.system(width).unwrap();
            let slow = propagate(&sys, DEFAULT_DT).unwrap();
            assert!(max_abs_diff(&fast, &slow) < 1e-9, "width {width}");
        }
        // The schedule behind a width is a plain flat-top pair.
        let sys = src.system(100.0).unwrap();
        assert_eq!(sys.schedule.segments.len(), 2);
    }

    #[test]
    fn device_tomography_shows_conditional_frequencies() {
        let p = DeviceParams::reference();
        let cr = tomography_pulse(40.0, 0.0, 0.0, 0.0);
        let (_, res) = run_tomography(
            &DeviceRabi::new(p.clone(), cr, DEFAULT_DT).unwrap(),
            &default_durations(),
            Shots::Exact,
            0,
            &BlochFitOptions::default(),
        )
        .unwrap();
        let [g0, g1] = res.generators;
        let w =
            |g: &BlochGenerator| (g.omega_x.powi(2) + g.omega_y.powi(2) + g.delta.powi(2)).sqrt();
        assert!((w(&g0) - w(&g1)).abs() > 0.2);
        // Close to the block-diagonalization rates at the same amplitude.
        let d =
            crate::device::DriveConfig::new(Channel::ControlLine, p.f_target, 40.0, 0.0).unwrap();
        let theory = crate::effective::effective_cr_coefficients(&p, &[d]).unwrap();
        let rel = (res.coefficients.rate("ZX") - theory.rate("ZX")).abs() / theory.rate("ZX").abs();
        assert!(
            rel < 0.05,
            "tomography {} theory {}",
            res.coefficients.rate("ZX"),
            theory.rate("ZX")
        );
    }

    #[test]
    fn planner_emits_six_traces_per_pair() {
        assert_eq!(plan_tomography(&[(0, 1)]).len(), 6);
        assert_eq!(plan_tomography(&[(0, 1), (1, 2), (0, 2)]).len(), 18);
    }

    #[test]
    fn shots_parse_and_serde() {
        assert_eq!("exact".parse::<Shots>().unwrap(), Shots::Exact);
        assert_eq!("512".parse::<Shots>().unwrap(), Shots::Count(512));
        assert!("0".parse::<Shots>().is_err());
        assert!("many".parse::<Shots>().is_err());
        assert_eq!(serde_json::to_string(&Shots::Count(3)).unwrap(), "3");
        assert_eq!(
            serde_json::from_str::<Shots>("\"exact\"").unwrap(),
            Shots::Exact
        );
    }

    #[test]
    fn dataset_csv_layout() {
        let src = HamiltonianRabi::from_coefficients(&PauliCoefficients::zero().with("ZX", 1.0));
        let ds = acquire_dataset(&src, &linspace(0.0, 100.0, 5), Shots::Exact, 0).unwrap();
        let csv = ds.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], DATASET_CSV_HEADER);
        assert_eq!(lines.len(), 6);
        assert_eq!(lines[1].split(',').count(), 7);
        let back: TomographyDataset = serde_json::from_str(&ds.to_json().unwrap()).unwrap();
        assert_eq!(back, ds);
    }
}
