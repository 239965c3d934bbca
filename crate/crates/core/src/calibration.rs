//! Echoed ZX90 tune-up: CR phase sweep, cancellation-amplitude sweep and
//! assembly of the calibrated echoed gate.
//!
//! Calibration steps run against a [`CrExperiment`], which hides whether the
//! coefficients come from pulse-level simulation of a device or from a
//! synthetic Hamiltonian.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::device::{Channel, DeviceParams, DriveConfig};
use crate::effective::effective_cr_coefficients;
use crate::fit::{linear_fit, LinearFit};
use crate::propagation::{
    evolve_unitary, qubit_block, to_qubit_frame, PiecewiseConstant, ScheduledDevice, DEFAULT_DT,
};
use crate::pulse::{build_echoed_cr_schedule, CrParams, EchoConfig, Envelope};
use crate::quantum::{
    identity, kron, subspace_average_fidelity, Operator, Pauli, PauliCoefficients, PauliLabel, C64,
};
use crate::tomography::{
    default_durations, run_tomography, BlochFitOptions, DeviceRabi, HamiltonianRabi, Shots,
    TomographyResult,
};
use crate::units::wrap_phase;
use crate::{Error, Result, SCHEMA_VERSION};

/// Conditional or single-qubit drive amplitudes below this are treated as absent (MHz).
pub const NOISE_FLOOR_MHZ: f64 = 0.01;

/// Conditional rotation each echoed half must accrue, as ZX rate × time (MHz·ns).
/// `exp(−iπ/8·ZX)` per half gives `exp(−iπ/4·ZX)` in total.
pub const ZX_HALF_AREA: f64 = 125.0;

/// Largest fraction of failed points a sweep tolerates.
pub const MAX_FAILED_FRACTION: f64 = 0.25;

/// Average fidelity and leakage of a simulated gate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateReport {
    /// Average gate fidelity on the computational subspace.
    pub fidelity: f64,
    /// Mean population lost from the computational subspace.
    pub leakage: f64,
}

/// A CR drive that can be characterised by tomography and played as an
/// echoed gate.
pub trait CrExperiment: Sync {
    /// Hamiltonian tomography of a flat-top CR block with the given tones.
    fn tomography(&self, cr: &CrParams, seed: u64) -> Result<TomographyResult>;

    /// Predicted conditional rate √(ZX²+ZY²) (MHz) at drive amplitude `amp`.
    fn predicted_conditional_rate(&self, amp: f64) -> Result<f64>;

    /// Flat-top-equivalent length (ns) of a CR block of the given width.
    fn effective_time(&self, cr: &CrParams) -> f64;

    /// Largest CR amplitude the calibration may use (MHz).
    fn max_amplitude(&self) -> f64;

    /// Gate time spent outside the two CR halves (ns).
    fn echo_overhead(&self) -> f64;

    /// Simulate the echoed gate built from `cr` against `X_c·ZX90`.
    fn echoed_gate(&self, cr: &CrParams) -> Result<GateReport>;
}

/// `exp(−iπ/4·ZX)`
pub fn zx90() -> Operator {
    let zx = PauliLabel(Pauli::Z, Pauli::X).matrix();
    let c = (PI / 4.0).cos();
    let s = (PI / 4.0).sin();
    identity(4) * C64::new(c, 0.0) - zx * C64::new(0.0, s)
}

/// Ideal result of the echoed sequence: `X_c·ZX90`, or `ZX90` with a final π.
pub fn echoed_target(final_pi: bool) -> Operator {
    if final_pi {
        zx90()
    } else {
        kron(&Pauli::X.matrix(), &Pauli::I.matrix()) * zx90()
    }
}

/// Full propagator (qubit frame) of the echoed CR gate on a device.
pub fn echoed_gate_unitary(
    p: &DeviceParams,
    cr: &CrParams,
    echo: &EchoConfig,
    dt: f64,
) -> Result<Operator> {
    let schedule = build_echoed_cr_schedule(cr, echo)?;
    let total = schedule.total_duration;
    let sys = ScheduledDevice::new(p.clone(), schedule)?;
    let u = evolve_unitary(&sys, dt)?;
    Ok(to_qubit_frame(p, &u, total))
}

/// Fidelity and leakage of a full propagator against a 4×4 target.
pub fn gate_report(target: &Operator, u: &Operator, levels: usize) -> Result<GateReport> {
    let m = qubit_block(u, levels);
    let kept = (m.adjoint() * &m).trace().re / 4.0;
    Ok(GateReport {
        fidelity: subspace_average_fidelity(target, &m)?,
        leakage: (1.0 - kept).max(0.0),
    })
}

/// Pulse-level simulated device.
#[derive(Debug, Clone)]
pub struct DeviceExperiment {
    pub params: DeviceParams,
    pub echo: EchoConfig,
    pub durations: Vec<f64>,
    pub shots: Shots,
    pub dt: f64,
    pub fit: BlochFitOptions,
    /// MHz
    pub max_amplitude: f64,
}

impl DeviceExperiment {
    pub fn new(params: DeviceParams) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            echo: EchoConfig::for_device(&params)?,
            params,
            durations: default_durations(),
            shots: Shots::Exact,
            dt: DEFAULT_DT,
            fit: BlochFitOptions::default(),
            max_amplitude: 100.0,
        })
    }
}

impl CrExperiment for DeviceExperiment {
    fn tomography(&self, cr: &CrParams, seed: u64) -> Result<TomographyResult> {
        let src = DeviceRabi::new(self.params.clone(), *cr, self.dt)?;
        Ok(run_tomography(&src, &self.durations, self.shots, seed, &self.fit)?.1)
    }

    fn predicted_conditional_rate(&self, amp: f64) -> Result<f64> {
        let d = DriveConfig::new(Channel::ControlLine, self.params.f_target, amp, 0.0)?;
        let c = effective_cr_coefficients(&self.params, &[d])?;
        Ok(c.rate("ZX").hypot(c.rate("ZY")))
    }

    fn effective_time(&self, cr: &CrParams) -> f64 {
        Envelope::flat_top_with(cr.width, 1.0, cr.sigma, cr.rise)
            .map(|e| e.area())
            .unwrap_or(cr.width)
    }

    fn max_amplitude(&self) -> f64 {
        self.max_amplitude
    }

    fn echo_overhead(&self) -> f64 {
        self.echo.overhead()
    }

    fn echoed_gate(&self, cr: &CrParams) -> Result<GateReport> {
        let u = echoed_gate_unitary(&self.params, cr, &self.echo, self.dt)?;
        gate_report(
            &echoed_target(self.echo.final_pi),
            &u,
            self.params.levels_per_transmon,
        )
    }
}

/// Two-qubit model whose CR rates are linear in the drive tones.
///
/// A CR tone `a·e^{iφ}` produces `ZX + iZY = zx_per_mhz·a·e^{i(φ−phi0)}` and
/// `IX + iIY = crosstalk·a·e^{iφ}`; the cancellation tone subtracts
/// `can_amp·e^{i·can_phase}` from the latter. `extra` is added unchanged.
/// Halves are played for their flat-top-equivalent length with an ideal π.
#[derive(Debug, Clone)]
pub struct SyntheticExperiment {
    pub zx_per_mhz: f64,
    pub phi0: f64,
    pub crosstalk: C64,
    pub extra: PauliCoefficients,
    pub pi_duration: f64,
    pub buffer: f64,
    pub durations: Vec<f64>,
    pub max_amplitude: f64,
}

impl SyntheticExperiment {
    /// Pure ZX drive: no single-qubit terms at all.
    pub fn pure_zx(zx_per_mhz: f64) -> Self {
        Self {
            zx_per_mhz,
            phi0: 0.0,
            crosstalk: C64::new(0.0, 0.0),
            extra: PauliCoefficients::zero(),
            pi_duration: 20.0,
            buffer: 10.0,
            durations: default_durations(),
            max_amplitude: 100.0,
        }
    }

    pub fn coefficients(&self, cr: &CrParams) -> PauliCoefficients {
        let cond = C64::from_polar(self.zx_per_mhz * cr.cr_amp, cr.cr_phase - self.phi0);
        let single = self.crosstalk * C64::from_polar(cr.cr_amp, cr.cr_phase)
            - C64::from_polar(cr.can_amp, cr.can_phase);
        let mut c = self.extra;
        c.set(PauliLabel(Pauli::Z, Pauli::X), c.rate("ZX") + cond.re);
        c.set(PauliLabel(Pauli::Z, Pauli::Y), c.rate("ZY") + cond.im);
        c.set(PauliLabel(Pauli::I, Pauli::X), c.rate("IX") + single.re);
        c.set(PauliLabel(Pauli::I, Pauli::Y), c.rate("IY") + single.im);
        c
    }
}

impl CrExperiment for SyntheticExperiment {
    fn tomography(&self, cr: &CrParams, seed: u64) -> Result<TomographyResult> {
        let src = HamiltonianRabi::from_coefficients(&self.coefficients(cr));
        Ok(run_tomography(
            &src,
            &self.durations,
            Shots::Exact,
            seed,
            &BlochFitOptions::default(),
        )?
        .1)
    }

    fn predicted_conditional_rate(&self, amp: f64) -> Result<f64> {
        Ok(self.zx_per_mhz * amp)
    }

    fn effective_time(&self, cr: &CrParams) -> f64 {
        cr.width
    }

    fn max_amplitude(&self) -> f64 {
        self.max_amplitude
    }

    fn echo_overhead(&self) -> f64 {
        self.pi_duration + 2.0 * self.buffer
    }

    fn echoed_gate(&self, cr: &CrParams) -> Result<GateReport> {
        let plus = self.coefficients(cr).reconstruct();
        let minus = self.coefficients(&cr.flipped()).reconstruct();
        let sys = PiecewiseConstant::echo(plus, minus, cr.width, self.pi_duration, self.buffer)?;
        let u = crate::propagation::propagate(&sys, DEFAULT_DT)?;
        gate_report(&echoed_target(false), &u, 2)
    }
}

/// One sweep point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    /// Swept parameter name, e.g. `cr_phase` or `can_amp`.
    pub parameter: String,
    pub value: f64,
    /// `None` when the tomography fit failed.
    pub coefficients: Option<PauliCoefficients>,
    /// RMS Bloch-fit residuals for control in |0⟩ and |1⟩.
    pub fit_residuals: [f64; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl SweepRecord {
    fn from_result(parameter: &str, value: f64, r: Result<TomographyResult>) -> Self {
        match r {
            Ok(t) => Self {
                parameter: parameter.into(),
                value,
                coefficients: Some(t.coefficients),
                fit_residuals: [t.generators[0].residual, t.generators[1].residual],
                error: None,
            },
            Err(e) => Self {
                parameter: parameter.into(),
                value,
                coefficients: None,
                fit_residuals: [f64::NAN; 2],
                error: Some(e.to_string()),
            },
        }
    }
}

pub const SWEEP_CSV_COLUMNS: &str = "IX,IY,IZ,ZX,ZY,ZZ,ZI,residual_c0,residual_c1";

/// Sweep table with the swept value (units in the column name) first and
/// rates in MHz. Failed points have empty cells.
pub fn sweep_csv(value_column: &str, records: &[SweepRecord]) -> String {
    let mut out = format!("{value_column},{SWEEP_CSV_COLUMNS}\n");
    for r in records {
        out.push_str(&format!("{}", r.value));
        match &r.coefficients {
            Some(c) => {
                for l in ["IX", "IY", "IZ", "ZX", "ZY", "ZZ", "ZI"] {
                    out.push_str(&format!(",{}", c.rate(l)));
                }
                out.push_str(&format!(",{},{}\n", r.fit_residuals[0], r.fit_residuals[1]));
            }
            None => out.push_str(",,,,,,,,,\n"),
        }
    }
    out
}

fn point_seed(seed: u64, k: usize) -> u64 {
    seed.wrapping_add((k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn check_failures(records: &[SweepRecord]) -> Result<()> {
    let failed = records.iter().filter(|r| r.coefficients.is_none()).count();
    if failed as f64 > MAX_FAILED_FRACTION * records.len() as f64 {
        return Err(Error::SweepFailed {
            failed,
            total: records.len(),
        });
    }
    Ok(())
}

/// Tomography at each CR phase, without cancellation.
pub fn phase_sweep(
    exp: &dyn CrExperiment,
    cr_amp: f64,
    phases: &[f64],
    seed: u64,
) -> Result<Vec<SweepRecord>> {
    if phases.len() < 8 {
        return Err(Error::invalid("phases", "need at least 8 phase points"));
    }
    let mut sorted: Vec<f64> = phases.iter().map(|p| p.rem_euclid(TAU)).collect();
    sorted.sort_by(f64::total_cmp);
    let mut gap = TAU - (sorted[sorted.len() - 1] - sorted[0]);
    for w in sorted.windows(2) {
        gap = gap.max(w[1] - w[0]);
    }
    if gap > FRAC_PI_2 + 1e-12 {
        return Err(Error::invalid(
            "phases",
            "must cover the full 2π circle (largest gap ≤ π/2)",
        ));
    }
    let records: Vec<SweepRecord> = phases
        .par_iter()
        .enumerate()
        .map(|(k, &phi)| {
            let cr = CrParams::plain(cr_amp, phi, 0.0);
            SweepRecord::from_result("cr_phase", phi, exp.tomography(&cr, point_seed(seed, k)))
        })
        .collect();
    check_failures(&records)?;
    Ok(records)
}

/// `n` phases evenly spaced over `[0, 2π)`.
pub fn even_phases(n: usize) -> Vec<f64> {
    (0..n).map(|k| TAU * k as f64 / n as f64).collect()
}

/// Joint fit of `x(φ) = A·cos(φ−φc)`, `y(φ) = A·sin(φ−φc)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseFit {
    /// MHz
    pub amplitude: f64,
    /// Phase at which `y` crosses zero with `x > 0`, in (−π, π].
    pub phase: f64,
    /// Coefficient of determination over both curves.
    pub r_squared: f64,
}

impl PhaseFit {
    pub fn evaluate(&self, phi: f64) -> (f64, f64) {
        let a = phi - self.phase;
        (self.amplitude * a.cos(), self.amplitude * a.sin())
    }
}

/// Least-squares solution: `A·e^{−iφc}` is the mean of `(x + iy)·e^{−iφ}`.
fn fit_rotating(records: &[SweepRecord], x: &str, y: &str) -> Result<PhaseFit> {
    let pts: Vec<(f64, C64)> = records
        .iter()
        .filter_map(|r| {
            r.coefficients
                .map(|c| (r.value, C64::new(c.rate(x), c.rate(y))))
        })
        .collect();
    if pts.len() < 3 {
        return Err(Error::InsufficientSampling(format!(
            "{} usable phase points, need at least 3",
            pts.len()
        )));
    }
    let n = pts.len() as f64;
    let mean: C64 = pts
        .iter()
        .map(|(phi, z)| z * C64::from_polar(1.0, -phi))
        .sum::<C64>()
        / n;
    let amplitude = mean.norm();
    let phase = wrap_phase(-mean.arg());
    let avg: C64 = pts.iter().map(|p| p.1).sum::<C64>() / n;
    let ss_tot: f64 = pts
        .iter()
        .map(|(_, z)| (z.re - avg.re).powi(2) + (z.im - avg.im).powi(2))
        .sum();
    let ss_res: f64 = pts
        .iter()
        .map(|(phi, z)| (z - mean * C64::from_polar(1.0, *phi)).norm_sqr())
        .sum();
    let r_squared = if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else {
        1.0
    };
    Ok(PhaseFit {
        amplitude,
        phase,
        r_squared,
    })
}

/// Fit of the conditional (ZX, ZY) curves.
pub fn fit_conditional(records: &[SweepRecord]) -> Result<PhaseFit> {
    fit_rotating(records, "ZX", "ZY")
}

/// CR phase with ZY = 0 and ZX maximal.
pub fn find_phi0(records: &[SweepRecord]) -> Result<f64> {
    let f = fit_conditional(records)?;
    if f.amplitude < NOISE_FLOOR_MHZ {
        return Err(Error::NoConditionalDrive {
            amplitude: f.amplitude,
        });
    }
    Ok(f.phase)
}

/// Single-qubit (IX, IY) fit from a phase sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Phi1 {
    /// Phase where IY crosses zero with IX > 0.
    pub phi1: f64,
    /// √(IX²+IY²) (MHz); the cancellation amplitude target.
    pub amplitude: f64,
    pub r_squared: f64,
    /// Single-qubit drive below the noise floor: no cancellation needed.
    pub below_noise_floor: bool,
}

pub fn find_phi1(records: &[SweepRecord]) -> Result<Phi1> {
    let f = fit_rotating(records, "IX", "IY")?;
    let below = f.amplitude < NOISE_FLOOR_MHZ;
    Ok(Phi1 {
        phi1: if below { 0.0 } else { f.phase },
        amplitude: if below { 0.0 } else { f.amplitude },
        r_squared: f.r_squared,
        below_noise_floor: below,
    })
}

/// Cancellation tone phase for the given CR and single-qubit phases.
pub fn cancellation_phase(phi0: f64, phi1: f64) -> f64 {
    wrap_phase(phi0 - phi1)
}

/// Result of sweeping the cancellation amplitude.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CancellationSweep {
    pub records: Vec<SweepRecord>,
    pub ix_slope: f64,
    pub ix_intercept: f64,
    pub iy_slope: f64,
    pub iy_intercept: f64,
    /// Zero crossings (MHz); `None` when that component barely depends on
    /// the cancellation amplitude.
    pub a_ix: Option<f64>,
    pub a_iy: Option<f64>,
    /// Zero crossing of the component with the larger slope (MHz).
    pub optimum: f64,
    /// IX and IY vanish at amplitudes more than 5% apart: the tone phase is wrong.
    pub phase_error: bool,
}

/// A component whose slope is below this fraction of the larger slope is
/// not used for a zero crossing.
const MIN_SLOPE_FRACTION: f64 = 0.05;

/// Tomography at each cancellation amplitude with fixed CR and tone phases.
pub fn cancellation_amplitude_sweep(
    exp: &dyn CrExperiment,
    cr: &CrParams,
    amps: &[f64],
    seed: u64,
) -> Result<CancellationSweep> {
    if cr.cr_amp == 0.0 {
        return Err(Error::Degenerate(
            "CR amplitude is zero: nothing to cancel".into(),
        ));
    }
    if amps.len() < 3 {
        return Err(Error::invalid("amps", "need at least 3 amplitudes"));
    }
    if amps.iter().any(|a| !(*a >= 0.0)) {
        return Err(Error::invalid("amps", "must be non-negative"));
    }
    let records: Vec<SweepRecord> = amps
        .par_iter()
        .enumerate()
        .map(|(k, &a)| {
            let p = CrParams { can_amp: a, ..*cr };
            SweepRecord::from_result("can_amp", a, exp.tomography(&p, point_seed(seed, k)))
        })
        .collect();
    check_failures(&records)?;
    let (x, ix, iy): (Vec<f64>, Vec<f64>, Vec<f64>) = records
        .iter()
        .filter_map(|r| {
            r.coefficients
                .map(|c| (r.value, c.rate("IX"), c.rate("IY")))
        })
        .fold((vec![], vec![], vec![]), |mut acc, (a, b, c)| {
            acc.0.push(a);
            acc.1.push(b);
            acc.2.push(c);
            acc
        });
    let fx = linear_fit(&x, &ix)?;
    let fy = linear_fit(&x, &iy)?;
    let dominant = fx.slope.abs().max(fy.slope.abs());
    if dominant < 1e-9 {
        return Err(Error::Degenerate(
            "IX and IY do not depend on the cancellation amplitude".into(),
        ));
    }
    let root = |f: &LinearFit| {
        if f.slope.abs() >= MIN_SLOPE_FRACTION * dominant {
            f.root()
        } else {
            None
        }
    };
    let a_ix = root(&fx);
    let a_iy = root(&fy);
    let optimum = if fx.slope.abs() >= fy.slope.abs() {
        a_ix
    } else {
        a_iy
    }
    .expect("dominant slope has a root");
    let (lo, hi) = x
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| {
            (l.min(*v), h.max(*v))
        });
    if optimum < lo || optimum > hi {
        let centre = optimum.abs();
        return Err(Error::NotBracketed {
            suggested_low: 0.5 * centre,
            suggested_high: 1.5 * centre,
        });
    }
    let phase_error = match (a_ix, a_iy) {
        (Some(a), Some(b)) => (a - b).abs() > 0.05 * optimum.abs(),
        _ => false,
    };
    Ok(CancellationSweep {
        records,
        ix_slope: fx.slope,
        ix_intercept: fx.intercept,
        iy_slope: fy.slope,
        iy_intercept: fy.intercept,
        a_ix,
        a_iy,
        optimum,
        phase_error,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationOptions {
    pub phases: usize,
    pub cancel_points: usize,
    /// Half-width of the cancellation sweep relative to the predicted amplitude.
    pub cancel_span: f64,
    pub cancellation: bool,
    pub refine_iterations: usize,
    /// Relative ZX error accepted by the amplitude refinement.
    pub refine_tolerance: f64,
    pub seed: u64,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        Self {
            phases: 16,
            cancel_points: 9,
            cancel_span: 0.5,
            cancellation: true,
            refine_iterations: 6,
            refine_tolerance: 2e-3,
            seed: 0,
        }
    }
}

/// Calibrated echoed ZX90.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub schema_version: u32,
    /// rad
    pub phi0: f64,
    /// rad
    pub phi1: f64,
    /// rad; `phi0 − phi1` wrapped to (−π, π].
    pub cancel_phase: f64,
    /// MHz
    pub cancel_amp: f64,
    /// MHz
    pub cr_amp: f64,
    /// ns
    pub half_width: f64,
    /// Flat-top-equivalent length of each half (ns).
    pub effective_half_width: f64,
    /// ns
    pub gate_time: f64,
    /// MHz
    pub target_zx: f64,
    /// MHz
    pub achieved_zx: f64,
    pub cancellation_enabled: bool,
    /// Coefficients of one CR half at the calibrated settings.
    pub residual: PauliCoefficients,
    pub gate_fidelity_estimate: f64,
    pub leakage: f64,
    pub warnings: Vec<String>,
    pub phase_sweep: Vec<SweepRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cancellation_sweep: Option<CancellationSweep>,
}

impl CalibrationResult {
    /// CR block parameters of the calibrated first half.
    pub fn cr_params(&self) -> CrParams {
        CrParams::new(
            self.cr_amp,
            self.phi0,
            self.cancel_amp,
            self.cancel_phase,
            self.half_width,
        )
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Smallest amplitude in `[0, max]` whose predicted conditional rate reaches
/// `target`, by a coarse scan followed by bisection.
fn initial_amplitude(exp: &dyn CrExperiment, target: f64) -> Result<f64> {
    let max = exp.max_amplitude();
    let n = 40;
    let mut prev = (0.0, exp.predicted_conditional_rate(0.0)?);
    let mut best = prev.1;
    for k in 1..=n {
        let a = max * k as f64 / n as f64;
        let r = exp.predicted_conditional_rate(a)?;
        best = best.max(r);
        if r >= target {
            let (mut lo, mut hi) = (prev.0, a);
            for _ in 0..50 {
                let mid = 0.5 * (lo + hi);
                if exp.predicted_conditional_rate(mid)? >= target {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            return Ok(hi);
        }
        prev = (a, r);
    }
    Err(Error::Unreachable {
        required: target,
        max_achievable: best,
    })
}

/// Full tune-up of an echoed ZX90 of total length `gate_time` (ns).
pub fn calibrate_zx90(
    exp: &dyn CrExperiment,
    gate_time: f64,
    opts: &CalibrationOptions,
) -> Result<CalibrationResult> {
    let mut warnings = Vec::new();
    let template = CrParams::plain(0.0, 0.0, 0.0);
    let half_width = 0.5 * (gate_time - exp.echo_overhead());
    if !(half_width >= 2.0 * template.rise) {
        return Err(Error::invalid(
            "gate_time",
            format!(
                "{gate_time} ns leaves {half_width:.1} ns per CR half; need at least {} ns",
                2.0 * template.rise
            ),
        ));
    }
    let t_eff = exp.effective_time(&CrParams {
        width: half_width,
        ..template
    });
    let target_zx = ZX_HALF_AREA / t_eff;
    let mut amp = initial_amplitude(exp, target_zx)?;

    let records = phase_sweep(exp, amp, &even_phases(opts.phases), opts.seed)?;
    let cond = fit_conditional(&records)?;
    if cond.amplitude < NOISE_FLOOR_MHZ {
        return Err(Error::NoConditionalDrive {
            amplitude: cond.amplitude,
        });
    }
    if cond.r_squared < 0.99 {
        warnings.push(format!(
            "ZX/ZY phase dependence is not sinusoidal (R² = {:.4})",
            cond.r_squared
        ));
    }
    let phi0 = cond.phase;
    let p1 = find_phi1(&records)?;
    let cancel_phase = cancellation_phase(phi0, p1.phi1);

    let mut cancel_amp = 0.0;
    let mut cancellation_sweep = None;
    if opts.cancellation {
        if p1.below_noise_floor {
            warnings
                .push("single-qubit drive below noise floor; cancellation tone not needed".into());
        } else {
            let cr = CrParams::new(amp, phi0, 0.0, cancel_phase, 0.0);
            let amps: Vec<f64> = (0..opts.cancel_points)
                .map(|k| {
                    let f = k as f64 / (opts.cancel_points - 1).max(1) as f64;
                    p1.amplitude * (1.0 - opts.cancel_span + 2.0 * opts.cancel_span * f)
                })
                .collect();
            let sweep = cancellation_amplitude_sweep(exp, &cr, &amps, opts.seed ^ 0xCA)?;
            if sweep.phase_error {
                warnings.push("IX and IY vanish at different cancellation amplitudes: cancellation phase is off".into());
            }
            cancel_amp = sweep.optimum.max(0.0);
            cancellation_sweep = Some(sweep);
        }
    }

    // Single-qubit terms scale linearly with the CR tone to first order, so
    // the cancellation amplitude follows the CR amplitude.
    let mut achieved = 0.0;
    let mut residual = PauliCoefficients::zero();
    for it in 0..=opts.refine_iterations {
        let cr = CrParams::new(amp, phi0, cancel_amp, cancel_phase, 0.0);
        let tomo = exp.tomography(&cr, opts.seed ^ (0x5EF << 8) ^ it as u64)?;
        residual = tomo.coefficients;
        achieved = residual.rate("ZX");
        if !(achieved > 0.0) {
            return Err(Error::NoConditionalDrive {
                amplitude: achieved,
            });
        }
        let ratio = target_zx / achieved;
        if (ratio - 1.0).abs() <= opts.refine_tolerance || it == opts.refine_iterations {
            if (ratio - 1.0).abs() > opts.refine_tolerance {
                warnings.push(format!(
                    "ZX refinement stopped {:.2}% from target",
                    100.0 * (ratio - 1.0).abs()
                ));
            }
            break;
        }
        let next = amp * ratio;
        if next > exp.max_amplitude() {
            return Err(Error::Unreachable {
                required: target_zx,
                max_achievable: achieved * exp.max_amplitude() / amp,
            });
        }
        cancel_amp *= next / amp;
        amp = next;
    }

    let cr = CrParams::new(amp, phi0, cancel_amp, cancel_phase, half_width);
    let report = exp.echoed_gate(&cr)?;
    Ok(CalibrationResult {
        schema_version: SCHEMA_VERSION,
        phi0,
        phi1: p1.phi1,
        cancel_phase,
        cancel_amp,
        cr_amp: amp,
        half_width,
        effective_half_width: t_eff,
        gate_time: 2.0 * half_width + exp.echo_overhead(),
        target_zx,
        achieved_zx: achieved,
        cancellation_enabled: opts.cancellation && !p1.below_noise_floor,
        residual,
        gate_fidelity_estimate: report.fidelity,
        leakage: report.leakage,
        warnings,
        phase_sweep: records,
        cancellation_sweep,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(phi: f64, c: PauliCoefficients) -> SweepRecord {
        SweepRecord {
            parameter: "cr_phase".into(),
            value: phi,
            coefficients: Some(c),
            fit_residuals: [0.0; 2],
            error: None,
        }
    }

    fn synthetic_records(a: f64, phi0: f64, b: f64, phi1: f64, shift: f64) -> Vec<SweepRecord> {
        even_phases(16)
            .into_iter()
            .map(|phi| {
                let phi = phi + shift;
                let c = PauliCoefficients::zero()
                    .with("ZX", a * (phi - phi0).cos())
                    .with("ZY", a * (phi - phi0).sin())
                    .with("IX", b * (phi - phi1).cos())
                    .with("IY", b * (phi - phi1).sin())
                    .with("ZZ", 0.1);
                record(phi, c)
            })
            .collect()
    }

    #[test]
    fn phi0_forward_oracle_and_equivariance() {
        let recs = synthetic_records(3.0, 0.7, 1.0, -0.4, 0.0);
        let phi0 = find_phi0(&recs).unwrap();
        assert!((phi0 - 0.7).abs() < 0.01);
        let f = fit_conditional(&recs).unwrap();
        let (zx, zy) = f.evaluate(phi0);
        assert!(zx > 0.0 && zy.abs() < 0.05 * zx);
        assert!(f.r_squared > 0.99);

        let delta = 0.37;
        let rotated = synthetic_records(3.0, 0.7 + delta, 1.0, -0.4 + delta, 0.0);
        assert!((wrap_phase(find_phi0(&rotated).unwrap() - phi0 - delta)).abs() < 1e-12);
        let p1 = find_phi1(&recs).unwrap().phi1;
        let p1r = find_phi1(&rotated).unwrap().phi1;
        assert!((p1 + 0.4).abs() < 1e-12);
        assert!(wrap_phase(p1r - p1 - delta).abs() < 1e-12);
    }

    #[test]
    fn phi0_without_conditional_drive_is_an_error() {
        let recs = synthetic_records(0.0, 0.0, 1.0, 0.0, 0.0);
        assert!(matches!(
            find_phi0(&recs),
            Err(Error::NoConditionalDrive { .. })
        ));
    }

    #[test]
    fn phi1_flag_without_single_qubit_drive() {
        let recs = synthetic_records(3.0, 0.2, 0.0, 0.0, 0.1);
        let p1 = find_phi1(&recs).unwrap();
        assert!(p1.below_noise_floor);
        assert_eq!(p1.amplitude, 0.0);
    }

    #[test]
    fn phase_sweep_rejects_sparse_or_partial_coverage() {
        let exp = SyntheticExperiment::pure_zx(0.05);
        assert!(phase_sweep(&exp, 10.0, &even_phases(6), 0).is_err());
        let half: Vec<f64> = (0..10).map(|k| PI * k as f64 / 9.0).collect();
        assert!(phase_sweep(&exp, 10.0, &half, 0).is_err());
    }

    fn crosstalk_synthetic() -> SyntheticExperiment {
        SyntheticExperiment {
            phi0: 0.4,
            crosstalk: C64::from_polar(0.05, 1.1),
            extra: PauliCoefficients::zero().with("IZ", 0.0).with("ZI", 0.3),
            ..SyntheticExperiment::pure_zx(0.05)
        }
    }

    #[test]
    fn cancellation_sweep_finds_common_zero() {
        let exp = crosstalk_synthetic();
        let recs = phase_sweep(&exp, 40.0, &even_phases(16), 1).unwrap();
        let phi0 = find_phi0(&recs).unwrap();
        let p1 = find_phi1(&recs).unwrap();
        assert!((phi0 - 0.4).abs() < 1e-3);
        assert!((p1.amplitude - 2.0).abs() < 1e-3);
        let cr = CrParams::new(40.0, phi0, 0.0, cancellation_phase(phi0, p1.phi1), 0.0);
        let amps: Vec<f64> = (0..9)
            .map(|k| p1.amplitude * (0.5 + k as f64 / 8.0))
            .collect();
        let s = cancellation_amplitude_sweep(&exp, &cr, &amps, 2).unwrap();
        assert!(!s.phase_error);
        assert!((s.optimum - 2.0).abs() < 1e-3);

        let wrong = CrParams {
            can_phase: cr.can_phase + 0.3,
            ..cr
        };
        assert!(
            cancellation_amplitude_sweep(&exp, &wrong, &amps, 2)
                .unwrap()
                .phase_error
        );

        let far: Vec<f64> = (0..9).map(|k| 10.0 + k as f64).collect();
        assert!(matches!(
            cancellation_amplitude_sweep(&exp, &cr, &far, 2),
            Err(Error::NotBracketed { .. })
        ));
        let zero = CrParams { cr_amp: 0.0, ..cr };
        assert!(matches!(
            cancellation_amplitude_sweep(&exp, &zero, &amps, 2),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn pure_zx_calibration_is_exact() {
        let exp = SyntheticExperiment::pure_zx(0.05);
        let r = calibrate_zx90(&exp, 160.0, &CalibrationOptions::default()).unwrap();
        assert!(
            r.gate_fidelity_estimate > 1.0 - 1e-6,
            "{}",
            r.gate_fidelity_estimate
        );
        assert!(!r.cancellation_enabled);
        assert_eq!(r.cancel_phase, wrap_phase(r.phi0 - r.phi1));
    }

    #[test]
    fn synthetic_crosstalk_calibration() {
        let exp = crosstalk_synthetic();
        let on = calibrate_zx90(&exp, 160.0, &CalibrationOptions::default()).unwrap();
        let off = calibrate_zx90(
            &exp,
            160.0,
            &CalibrationOptions {
                cancellation: false,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(
            on.gate_fidelity_estimate > 1.0 - 1e-6,
            "{}",
            on.gate_fidelity_estimate
        );
        assert!(off.gate_fidelity_estimate < on.gate_fidelity_estimate);
        assert!(on.residual.rate("IX").abs() < 0.02 && on.residual.rate("IY").abs() < 0.02);
        assert_eq!(on.cancel_phase, wrap_phase(on.phi0 - on.phi1));
    }

    #[test]
    fn unreachable_rotation() {
        let exp = SyntheticExperiment {
            max_amplitude: 1.0,
            ..SyntheticExperiment::pure_zx(0.05)
        };
        assert!(matches!(
            calibrate_zx90(&exp, 160.0, &CalibrationOptions::default()),
            Err(Error::Unreachable { .. })
        ));
        assert!(calibrate_zx90(&exp, 50.0, &CalibrationOptions::default()).is_err());
    }

    #[test]
    fn sweep_csv_layout() {
        let recs = synthetic_records(1.0, 0.0, 0.0, 0.0, 0.0);
        let csv = sweep_csv("phase_rad", &recs);
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            format!("phase_rad,{SWEEP_CSV_COLUMNS}")
        );
        assert_eq!(lines.count(), 16);
        assert!(lines_have_columns(&csv, 10));
    }

    fn lines_have_columns(csv: &str, n: usize) -> bool {
        csv.lines().all(|l| l.split(',').count() == n)
    }

    #[test]
    fn echoed_target_is_unitary() {
        let t = echoed_target(false);
        assert!(crate::quantum::unitarity_error(&t) < 1e-14);
        let u = echoed_gate_unitary(
            &DeviceParams::reference().with_coupling(0.0),
            &CrParams::plain(0.0, 0.0, 60.0),
            &EchoConfig::for_device(&DeviceParams::reference()).unwrap(),
            DEFAULT_DT,
        )
        .unwrap();
        // No coupling: the sequence is a control π only.
        let xc = kron(&Pauli::X.matrix(), &identity(2));
        let r = gate_report(&xc, &u, DeviceParams::reference().levels_per_transmon).unwrap();
        assert!(r.fidelity > 0.999, "{r:?}");
    }
}
