//! Pulse envelopes and CR / echoed-CR schedules.
//!
//! A schedule is a list of segments, each an envelope played on one line at a
//! carrier tied to one of the transmon frequencies. The echo sign flip is a
//! `+π` carrier phase. Cancellation tones are emitted in anti-phase: a tone
//! with `can_phase = θ` and positive amplitude drives the target at carrier
//! phase `θ + π`, so it subtracts the spurious target drive whose phase is `θ`.

use std::f64::consts::{PI, SQRT_2};

use serde::{Deserialize, Serialize};

use crate::device::{Channel, DeviceParams};
use crate::quantum::C64;
use crate::units::{wrap_phase, MHZ};
use crate::{Error, Result};

/// Default Gaussian width of flat-top edges (ns).
pub const DEFAULT_SIGMA: f64 = 5.0;
/// Default flat-top rise time, 3σ (ns).
pub const DEFAULT_RISE: f64 = 15.0;
/// Default single-qubit π pulse length (ns).
pub const DEFAULT_PI_DURATION: f64 = 20.0;
/// Default delay around echo π pulses (ns).
pub const DEFAULT_BUFFER: f64 = 10.0;
/// Default DRAG coefficient.
pub const DEFAULT_DRAG_BETA: f64 = 0.5;
/// Quadrature area of a π rotation, MHz·ns (half a cycle).
pub const PI_AREA: f64 = 500.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvelopeKind {
    FlatTopGaussian,
    GaussianDrag,
    Delay,
}

/// Pulse envelope. For DRAG, the Gaussian has σ = `sigma` centered at
/// `duration/2` and the quadrature is `−β·G'(t)/δ` with δ the anharmonicity
/// in rad/ns (`anharmonicity` holds it in MHz).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Envelope {
    pub kind: EnvelopeKind,
    pub duration: f64,
    pub amplitude: f64,
    pub sigma: f64,
    pub rise: f64,
    #[serde(default)]
    pub drag_beta: f64,
    #[serde(default)]
    pub anharmonicity: f64,
}

impl Envelope {
    pub fn flat_top(duration: f64, amplitude: f64) -> Result<Self> {
        Self::flat_top_with(duration, amplitude, DEFAULT_SIGMA, DEFAULT_RISE)
    }

    pub fn flat_top_with(duration: f64, amplitude: f64, sigma: f64, rise: f64) -> Result<Self> {
        let e = Self {
            kind: EnvelopeKind::FlatTopGaussian,
            duration,
            amplitude,
            sigma,
            rise,
            drag_beta: 0.0,
            anharmonicity: 0.0,
        };
        e.validate()?;
        Ok(e)
    }

    /// DRAG Gaussian with σ = duration/4.
    pub fn drag(duration: f64, amplitude: f64, beta: f64, anharmonicity_mhz: f64) -> Result<Self> {
        let e = Self {
            kind: EnvelopeKind::GaussianDrag,
            duration,
            amplitude,
            sigma: duration / 4.0,
            rise: duration / 2.0,
            drag_beta: beta,
            anharmonicity: anharmonicity_mhz,
        };
        e.validate()?;
        Ok(e)
    }

    /// DRAG π pulse on a transmon with the given anharmonicity.
    pub fn drag_pi(duration: f64, beta: f64, anharmonicity_mhz: f64) -> Result<Self> {
        let unit = Self::drag(duration, 1.0, beta, anharmonicity_mhz)?;
        Self::drag(duration, PI_AREA / unit.area(), beta, anharmonicity_mhz)
    }

    pub fn delay(duration: f64) -> Result<Self> {
        let e = Self {
            kind: EnvelopeKind::Delay,
            duration,
            amplitude: 0.0,
            sigma: 0.0,
            rise: 0.0,
            drag_beta: 0.0,
            anharmonicity: 0.0,
        };
        e.validate()?;
        Ok(e)
    }

    pub fn with_amplitude(mut self, amplitude: f64) -> Result<Self> {
        self.amplitude = amplitude;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.duration,
            self.amplitude,
            self.sigma,
            self.rise,
            self.drag_beta,
            self.anharmonicity,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("envelope", "parameters must be finite"));
        }
        if self.duration <= 0.0 {
            return Err(Error::invalid("duration", "must be positive"));
        }
        if self.amplitude < 0.0 {
            return Err(Error::invalid("amplitude", "must be non-negative"));
        }
        match self.kind {
            EnvelopeKind::FlatTopGaussian => {
                if self.sigma <= 0.0 || self.rise <= 0.0 {
                    return Err(Error::invalid("sigma", "sigma and rise must be positive"));
                }
                if self.duration < 2.0 * self.rise - 1e-9 {
                    return Err(Error::invalid(
                        "duration",
                        format!(
                            "{} ns is shorter than twice the {} ns rise",
                            self.duration, self.rise
                        ),
                    ));
                }
            }
            EnvelopeKind::GaussianDrag => {
                if self.sigma <= 0.0 {
                    return Err(Error::invalid("sigma", "must be positive"));
                }
                if self.drag_beta != 0.0 && self.anharmonicity == 0.0 {
                    return Err(Error::invalid(
                        "anharmonicity",
                        "DRAG correction needs a nonzero anharmonicity",
                    ));
                }
            }
            EnvelopeKind::Delay => {
                if self.amplitude != 0.0 {
                    return Err(Error::invalid("amplitude", "a delay has zero amplitude"));
                }
            }
        }
        Ok(())
    }

    /// Complex envelope (MHz) at `t ∈ [0, duration]`.
    pub fn value(&self, t: f64) -> Result<C64> {
        if !(t >= 0.0 && t <= self.duration) {
            return Err(Error::invalid(
                "t",
                format!("{t} ns outside [0, {}] ns", self.duration),
            ));
        }
        Ok(self.value_unchecked(t))
    }

    /// [`Envelope::value`] without the range check; zero outside the pulse.
    pub fn value_unchecked(&self, t: f64) -> C64 {
        if t < 0.0 || t > self.duration {
            return C64::new(0.0, 0.0);
        }
        match self.kind {
            EnvelopeKind::Delay => C64::new(0.0, 0.0),
            EnvelopeKind::FlatTopGaussian => C64::new(self.amplitude * self.flat_top_shape(t), 0.0),
            EnvelopeKind::GaussianDrag => {
                let (g, dg) = self.drag_shape(t);
                let mut v = C64::new(self.amplitude * g, 0.0);
                if self.drag_beta != 0.0 {
                    v.im = -self.drag_beta * self.amplitude * dg / (MHZ * self.anharmonicity);
                }
                v
            }
        }
    }

    fn floor(&self) -> f64 {
        (-(self.rise * self.rise) / (2.0 * self.sigma * self.sigma)).exp()
    }

    fn flat_top_shape(&self, t: f64) -> f64 {
        let x = if t < self.rise {
            t - self.rise
        } else if t > self.duration - self.rise {
            t - (self.duration - self.rise)
        } else {
            return 1.0;
        };
        let floor = self.floor();
        ((-(x * x) / (2.0 * self.sigma * self.sigma)).exp() - floor) / (1.0 - floor)
    }

    /// Normalized Gaussian and its time derivative (1/ns).
    fn drag_shape(&self, t: f64) -> (f64, f64) {
        let c = self.duration / 2.0;
        let s2 = self.sigma * self.sigma;
        let floor = (-(c * c) / (2.0 * s2)).exp();
        let g = (-((t - c) * (t - c)) / (2.0 * s2)).exp();
        (
            (g - floor) / (1.0 - floor),
            -g * (t - c) / s2 / (1.0 - floor),
        )
    }

    /// Integral of the in-phase envelope over the pulse (MHz·ns).
    pub fn area(&self) -> f64 {
        let s = self.sigma;
        match self.kind {
            EnvelopeKind::Delay => 0.0,
            EnvelopeKind::FlatTopGaussian => {
                let floor = self.floor();
                let edge = (s * (PI / 2.0).sqrt() * libm::erf(self.rise / (s * SQRT_2))
                    - self.rise * floor)
                    / (1.0 - floor);
                self.amplitude * (self.duration - 2.0 * self.rise + 2.0 * edge)
            }
            EnvelopeKind::GaussianDrag => {
                let c = self.duration / 2.0;
                let floor = (-(c * c) / (2.0 * s * s)).exp();
                let full = s * (2.0 * PI).sqrt() * libm::erf(c / (s * SQRT_2));
                self.amplitude * (full - self.duration * floor) / (1.0 - floor)
            }
        }
    }

    /// Duration of a square pulse with the same peak and area.
    pub fn effective_duration(&self) -> f64 {
        if self.amplitude == 0.0 {
            let unit = Self {
                amplitude: 1.0,
                ..*self
            };
            return unit.area();
        }
        self.area() / self.amplitude
    }

    /// Interior times where the envelope has a kink or changes form.
    fn breakpoints(&self) -> Vec<f64> {
        match self.kind {
            EnvelopeKind::FlatTopGaussian => vec![self.rise, self.duration - self.rise],
            _ => Vec::new(),
        }
    }

    /// Whether the envelope is constant on the interior of `[a, b]`.
    fn constant_on(&self, a: f64, b: f64) -> bool {
        match self.kind {
            EnvelopeKind::Delay => true,
            EnvelopeKind::FlatTopGaussian => {
                a >= self.rise - 1e-12 && b <= self.duration - self.rise + 1e-12
            }
            EnvelopeKind::GaussianDrag => self.amplitude == 0.0,
        }
    }
}

/// Carrier frequency reference of a segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Carrier {
    Control,
    Target,
}

impl Carrier {
    pub fn frequency(self, p: &DeviceParams) -> f64 {
        match self {
            Carrier::Control => p.f_control,
            Carrier::Target => p.f_target,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Segment {
    pub start: f64,
    pub channel: Channel,
    pub carrier: Carrier,
    pub envelope: Envelope,
    /// radians
    pub phase: f64,
}

impl Segment {
    pub fn end(&self) -> f64 {
        self.start + self.envelope.duration
    }

    /// Complex drive (MHz) including the carrier phase at absolute time `t`.
    pub fn drive_at(&self, t: f64) -> C64 {
        self.envelope.value_unchecked(t - self.start) * C64::from_polar(1.0, self.phase)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PulseSchedule {
    pub segments: Vec<Segment>,
    pub total_duration: f64,
}

impl PulseSchedule {
    /// Free evolution for `duration` ns.
    pub fn idle(duration: f64) -> Result<Self> {
        if !(duration >= 0.0) || !duration.is_finite() {
            return Err(Error::invalid(
                "duration",
                "must be finite and non-negative",
            ));
        }
        Ok(Self {
            segments: Vec::new(),
            total_duration: duration,
        })
    }

    /// Append a segment, extending the total duration if needed.
    pub fn push(&mut self, seg: Segment) -> Result<()> {
        seg.envelope.validate()?;
        if !(seg.start >= 0.0) || !seg.phase.is_finite() {
            return Err(Error::invalid(
                "start",
                "segments start at t ≥ 0 with finite phase",
            ));
        }
        for other in self.segments.iter().filter(|s| s.channel == seg.channel) {
            if seg.start < other.end() - 1e-9 && other.start < seg.end() - 1e-9 {
                return Err(Error::invalid(
                    "segments",
                    format!(
                        "overlap on {:?}: [{}, {}] and [{}, {}]",
                        seg.channel,
                        other.start,
                        other.end(),
                        seg.start,
                        seg.end()
                    ),
                ));
            }
        }
        self.total_duration = self.total_duration.max(seg.end());
        self.segments.push(seg);
        self.segments
            .sort_by(|a, b| a.start.partial_cmp(&b.start).unwrap());
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let mut check = PulseSchedule::idle(self.total_duration)?;
        for s in &self.segments {
            check.push(*s)?;
        }
        if check.total_duration > self.total_duration + 1e-9 {
            return Err(Error::invalid(
                "total_duration",
                "shorter than the last segment",
            ));
        }
        Ok(())
    }

    /// Segments playing at `t` (half-open at the end).
    pub fn active_at(&self, t: f64) -> impl Iterator<Item = &Segment> {
        self.segments
            .iter()
            .filter(move |s| t >= s.start && t < s.end() && s.envelope.kind != EnvelopeKind::Delay)
    }

    /// Sorted times where any envelope starts, stops or changes form,
    /// including 0 and the total duration.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut pts = vec![0.0, self.total_duration];
        for s in &self.segments {
            pts.push(s.start);
            pts.push(s.end());
            pts.extend(s.envelope.breakpoints().into_iter().map(|b| s.start + b));
        }
        pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        pts.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
        pts.retain(|&t| t >= 0.0 && t <= self.total_duration + 1e-9);
        pts
    }

    /// Whether every segment overlapping `[a, b]` is constant on it.
    pub fn constant_on(&self, a: f64, b: f64) -> bool {
        self.segments
            .iter()
            .filter(|s| s.start < b && s.end() > a)
            .all(|s| s.envelope.constant_on(a - s.start, b - s.start))
    }

    /// Carriers of the non-delay segments overlapping `[a, b]`.
    pub fn carriers_on(&self, a: f64, b: f64) -> Vec<Carrier> {
        let mut out: Vec<Carrier> = Vec::new();
        for s in self
            .segments
            .iter()
            .filter(|s| s.start < b && s.end() > a && s.envelope.kind != EnvelopeKind::Delay)
        {
            if !out.contains(&s.carrier) {
                out.push(s.carrier);
            }
        }
        out
    }

    /// Integral of the in-phase (phase-rotated) drive on `channel`.
    pub fn channel_area(&self, channel: Channel) -> C64 {
        self.segments
            .iter()
            .filter(|s| s.channel == channel)
            .map(|s| C64::from_polar(s.envelope.area(), s.phase))
            .sum()
    }

    /// Copy of the schedule shifted by `offset` ns.
    pub fn shifted(&self, offset: f64) -> Self {
        Self {
            segments: self
                .segments
                .iter()
                .map(|s| Segment {
                    start: s.start + offset,
                    ..*s
                })
                .collect(),
            total_duration: self.total_duration + offset,
        }
    }

    /// Play `other` after this schedule.
    pub fn then(&self, other: &PulseSchedule) -> Result<Self> {
        let mut out = self.clone();
        let shifted = other.shifted(self.total_duration);
        for s in shifted.segments {
            out.push(s)?;
        }
        out.total_duration = shifted.total_duration;
        Ok(out)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// One CR block: a control-line tone at the target frequency with an optional
/// simultaneous cancellation tone on the target line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrParams {
    /// MHz
    pub cr_amp: f64,
    pub cr_phase: f64,
    /// MHz
    pub can_amp: f64,
    pub can_phase: f64,
    /// ns
    pub width: f64,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    #[serde(default = "default_rise")]
    pub rise: f64,
}

fn default_sigma() -> f64 {
    DEFAULT_SIGMA
}

fn default_rise() -> f64 {
    DEFAULT_RISE
}

impl CrParams {
    pub fn new(cr_amp: f64, cr_phase: f64, can_amp: f64, can_phase: f64, width: f64) -> Self {
        Self {
            cr_amp,
            cr_phase,
            can_amp,
            can_phase,
            width,
            sigma: DEFAULT_SIGMA,
            rise: DEFAULT_RISE,
        }
    }

    /// Plain CR drive without cancellation.
    pub fn plain(cr_amp: f64, cr_phase: f64, width: f64) -> Self {
        Self::new(cr_amp, cr_phase, 0.0, 0.0, width)
    }

    /// Same block with both tones shifted by π.
    pub fn flipped(&self) -> Self {
        Self {
            cr_phase: wrap_phase(self.cr_phase + PI),
            can_phase: wrap_phase(self.can_phase + PI),
            ..*self
        }
    }
}

/// CR block of length `width`.
pub fn build_cr_schedule(cr: &CrParams) -> Result<PulseSchedule> {
    let env = Envelope::flat_top_with(cr.width, cr.cr_amp, cr.sigma, cr.rise)?;
    let mut s = PulseSchedule::idle(cr.width)?;
    s.push(Segment {
        start: 0.0,
        channel: Channel::ControlLine,
        carrier: Carrier::Target,
        envelope: env,
        phase: wrap_phase(cr.cr_phase),
    })?;
    if cr.can_amp != 0.0 {
        if cr.can_amp < 0.0 {
            return Err(Error::invalid("can_amp", "must be non-negative"));
        }
        s.push(Segment {
            start: 0.0,
            channel: Channel::TargetLine,
            carrier: Carrier::Target,
            envelope: Envelope::flat_top_with(cr.width, cr.can_amp, cr.sigma, cr.rise)?,
            phase: wrap_phase(cr.can_phase + PI),
        })?;
    }
    Ok(s)
}

/// Echo structure around the two CR halves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EchoConfig {
    pub pi_pulse: Envelope,
    /// ns
    pub buffer: f64,
    /// Append a second buffered control π after the second CR half.
    #[serde(default)]
    pub final_pi: bool,
}

impl EchoConfig {
    /// 20 ns DRAG π with 10 ns buffers and a single echo pulse.
    pub fn for_device(p: &DeviceParams) -> Result<Self> {
        Ok(Self {
            pi_pulse: Envelope::drag_pi(DEFAULT_PI_DURATION, DEFAULT_DRAG_BETA, p.anharm_control)?,
            buffer: DEFAULT_BUFFER,
            final_pi: false,
        })
    }

    pub fn with_final_pi(mut self, on: bool) -> Self {
        self.final_pi = on;
        self
    }

    /// Time spent outside the CR halves.
    pub fn overhead(&self) -> f64 {
        let n = if self.final_pi { 2.0 } else { 1.0 };
        n * (self.pi_pulse.duration + 2.0 * self.buffer)
    }
}

/// `CR(+) | buffer | π | buffer | CR(−)` and, with `final_pi`, a further
/// `buffer | π | buffer`.
pub fn build_echoed_cr_schedule(cr: &CrParams, echo: &EchoConfig) -> Result<PulseSchedule> {
    if !(echo.buffer >= 0.0) {
        return Err(Error::invalid("buffer", "must be non-negative"));
    }
    echo.pi_pulse.validate()?;
    let pi_block = {
        let mut s = PulseSchedule::idle(echo.pi_pulse.duration + 2.0 * echo.buffer)?;
        s.push(Segment {
            start: echo.buffer,
            channel: Channel::ControlLine,
            carrier: Carrier::Control,
            envelope: echo.pi_pulse,
            phase: 0.0,
        })?;
        s
    };
    let mut s = build_cr_schedule(cr)?
        .then(&pi_block)?
        .then(&build_cr_schedule(&cr.flipped())?)?;
    if echo.final_pi {
        s = s.then(&pi_block)?;
    }
    Ok(s)
}
