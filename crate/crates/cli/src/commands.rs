use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crtune::benchmarking::{
    device_gate_channel, entangler, interleaved_rb, rb_experiment, ChannelProvider,
    CompiledChannels, DepolarizingChannels, GateChannel, IdealChannels, RbOptions,
};
use crtune::calibration::{
    calibrate_zx90, cancellation_amplitude_sweep, cancellation_phase, even_phases, find_phi1,
    fit_conditional, phase_sweep, sweep_csv, CalibrationOptions, CalibrationResult,
    DeviceExperiment, NOISE_FLOOR_MHZ,
};
use crtune::device::{Channel, CoherenceParams, DeviceParams, DriveConfig};
use crtune::effective::{
    effective_cr_coefficients, theory_curve_csv, theory_curve_vs_amplitude, TheoryPoint,
};
use crtune::pulse::CrParams;
use crtune::quantum::PauliCoefficients;
use crtune::tomography::{
    linspace, r_vector_trace, run_tomography, tomography_pulse, BlochFitOptions, DeviceRabi,
    TomographyDataset,
};
use crtune::SCHEMA_VERSION;

use crate::{Cli, Command, Durations, RbArgs, Tones};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ChannelKind {
    Ideal,
    Depolarizing,
    /// Single-qubit layers ideal, entangler from the simulated echoed gate.
    Compiled,
}

#[derive(Debug)]
pub enum CliError {
    Core(crtune::Error),
    Config {
        path: PathBuf,
        field: String,
        message: String,
    },
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Config {
                path,
                field,
                message,
            } => {
                write!(f, "{}: at `{field}`: {message}", path.display())
            }
            CliError::Io { path, source } => write!(f, "{}: {source}", path.display()),
        }
    }
}

impl From<crtune::Error> for CliError {
    fn from(e: crtune::Error) -> Self {
        CliError::Core(e)
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| CliError::Config {
        path: path.to_path_buf(),
        field: e.path().to_string(),
        message: e.inner().to_string(),
    })
}

fn load_device(cli: &Cli) -> Result<DeviceParams> {
    let p = match &cli.config {
        Some(path) => read_json::<DeviceParams>(path)?,
        None => DeviceParams::reference(),
    };
    if let Err(crtune::Error::InvalidParameter { field, reason }) = p.validate() {
        return Err(CliError::Config {
            path: cli.config.clone().unwrap_or_else(|| "<built-in>".into()),
            field,
            message: reason,
        });
    }
    Ok(p)
}

struct Writer {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl Writer {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|source| CliError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        Ok(Self {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    fn text(&mut self, name: &str, content: &str) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, content).map_err(|source| CliError::Io {
            path: path.clone(),
            source,
        })?;
        self.written.push(path);
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let s = serde_json::to_string_pretty(value).map_err(crtune::Error::from)?;
        self.text(name, &(s + "\n"))
    }
}

fn experiment(cli: &Cli, p: DeviceParams) -> Result<DeviceExperiment> {
    let mut exp = DeviceExperiment::new(p)?;
    exp.dt = cli.dt;
    exp.shots = cli.shots;
    Ok(exp)
}

fn durations(d: &Durations) -> Vec<f64> {
    linspace(0.0, d.t_max, d.points)
}

fn pulse(t: &Tones) -> CrParams {
    tomography_pulse(t.amp, t.phase, t.can_amp, t.can_phase)
}

const LABELS: [&str; 7] = ["IX", "IY", "IZ", "ZX", "ZY", "ZZ", "ZI"];

fn coefficient_cells(c: Option<&PauliCoefficients>) -> String {
    LABELS
        .iter()
        .map(|l| c.map(|c| c.rate(l).to_string()).unwrap_or_default())
        .collect::<Vec<_>>()
        .join(",")
}

#[derive(Serialize)]
struct PhaseSummary {
    schema_version: u32,
    cr_amp: f64,
    phi0: f64,
    phi1: f64,
    cancel_phase: f64,
    conditional_amplitude: f64,
    conditional_r_squared: f64,
    single_qubit_amplitude: f64,
    single_qubit_below_noise_floor: bool,
}

fn phase_summary(
    exp: &DeviceExperiment,
    amp: f64,
    phases: usize,
    seed: u64,
) -> Result<(PhaseSummary, String)> {
    let recs = phase_sweep(exp, amp, &even_phases(phases), seed)?;
    let cond = fit_conditional(&recs)?;
    if cond.amplitude < NOISE_FLOOR_MHZ {
        return Err(crtune::Error::NoConditionalDrive {
            amplitude: cond.amplitude,
        }
        .into());
    }
    let p1 = find_phi1(&recs)?;
    Ok((
        PhaseSummary {
            schema_version: SCHEMA_VERSION,
            cr_amp: amp,
            phi0: cond.phase,
            phi1: p1.phi1,
            cancel_phase: cancellation_phase(cond.phase, p1.phi1),
            conditional_amplitude: cond.amplitude,
            conditional_r_squared: cond.r_squared,
            single_qubit_amplitude: p1.amplitude,
            single_qubit_below_noise_floor: p1.below_noise_floor,
        },
        sweep_csv("phase_rad", &recs),
    ))
}

fn trajectory_csv(ds: &TomographyDataset) -> String {
    let r = r_vector_trace(ds);
    let mut out = String::from("duration_ns,c0_x,c0_y,c0_z,c1_x,c1_y,c1_z,r_norm\n");
    for (k, d) in ds.durations.iter().enumerate() {
        let a = ds.point(0, k);
        let b = ds.point(1, k);
        out.push_str(&format!(
            "{d},{},{},{},{},{},{},{}\n",
            a[0], a[1], a[2], b[0], b[1], b[2], r[k]
        ));
    }
    out
}

fn load_calibration(cli: &Cli, rb: &RbArgs, exp: &DeviceExperiment) -> Result<CalibrationResult> {
    match &rb.calibration {
        Some(path) => read_json(path),
        None => Ok(calibrate_zx90(
            exp,
            rb.gate_time,
            &CalibrationOptions {
                seed: cli.seed,
                ..Default::default()
            },
        )?),
    }
}

fn device_gate(cli: &Cli, rb: &RbArgs) -> Result<GateChannel> {
    let exp = experiment(cli, load_device(cli)?)?;
    let cal = load_calibration(cli, rb, &exp)?;
    let coherence = match &rb.coherence {
        Some(path) => {
            let c: CoherenceParams = read_json(path)?;
            c.validate()?;
            Some(c)
        }
        None => None,
    };
    Ok(device_gate_channel(
        &exp.params,
        &cal.cr_params(),
        &exp.echo,
        coherence.as_ref(),
        cli.dt,
    )?)
}

fn rb_options(cli: &Cli, rb: &RbArgs) -> RbOptions {
    RbOptions {
        lengths: rb.lengths.clone(),
        n_seqs: rb.n_seqs,
        shots: cli.shots,
        seed: cli.seed,
    }
}

enum Provider {
    Ideal(IdealChannels),
    Depolarizing(DepolarizingChannels),
    Compiled(CompiledChannels),
}

impl Provider {
    fn get(&self) -> &dyn ChannelProvider {
        match self {
            Provider::Ideal(p) => p,
            Provider::Depolarizing(p) => p,
            Provider::Compiled(p) => p,
        }
    }
}

fn provider(rb: &RbArgs, gate: Option<&GateChannel>) -> Result<Provider> {
    Ok(match rb.channel {
        ChannelKind::Ideal => Provider::Ideal(IdealChannels),
        ChannelKind::Depolarizing => {
            if !(0.0..=1.0).contains(&rb.p) {
                return Err(crtune::Error::invalid("p", "must lie in [0, 1]").into());
            }
            Provider::Depolarizing(DepolarizingChannels { p: rb.p })
        }
        ChannelKind::Compiled => Provider::Compiled(CompiledChannels {
            entangler: gate
                .expect("compiled channels need the device gate")
                .clone(),
        }),
    })
}

/// Execute the parsed command; returns the files written.
pub fn run(cli: &Cli) -> Result<Vec<PathBuf>> {
    let mut w = Writer::new(&cli.out)?;
    match &cli.command {
        Command::Tomo {
            tones,
            durations: d,
        } => {
            let p = load_device(cli)?;
            let src = DeviceRabi::new(p, pulse(tones), cli.dt)?;
            let (ds, res) = run_tomography(
                &src,
                &durations(d),
                cli.shots,
                cli.seed,
                &BlochFitOptions::default(),
            )?;
            w.text("tomo_dataset.csv", &ds.to_csv())?;
            w.json("tomo_result.json", &res)?;
        }
        Command::SweepAmp {
            amps,
            phase,
            durations: d,
        } => {
            let p = load_device(cli)?;
            let grid = durations(d);
            let mut sorted = amps.clone();
            sorted.sort_by(f64::total_cmp);
            let theory = theory_curve_vs_amplitude(&p, &sorted, *phase)?;
            let mut out = format!(
                "amplitude_mhz,{},{}\n",
                LABELS.join(","),
                LABELS
                    .iter()
                    .map(|l| format!("theory_{l}"))
                    .collect::<Vec<_>>()
                    .join(",")
            );
            for (k, &a) in sorted.iter().enumerate() {
                let measured =
                    DeviceRabi::new(p.clone(), tomography_pulse(a, *phase, 0.0, 0.0), cli.dt)
                        .and_then(|src| {
                            run_tomography(
                                &src,
                                &grid,
                                cli.shots,
                                cli.seed.wrapping_add(k as u64),
                                &BlochFitOptions::default(),
                            )
                        })
                        .ok()
                        .map(|(_, r)| r.coefficients);
                out.push_str(&format!(
                    "{a},{},{}\n",
                    coefficient_cells(measured.as_ref()),
                    coefficient_cells(Some(&theory[k].coefficients))
                ));
            }
            w.text("sweep_amp.csv", &out)?;
        }
        Command::SweepPhase { amp, phases } => {
            let exp = experiment(cli, load_device(cli)?)?;
            let (summary, csv) = phase_summary(&exp, *amp, *phases, cli.seed)?;
            w.text("sweep_phase.csv", &csv)?;
            w.json("sweep_phase.json", &summary)?;
        }
        Command::SweepCancel {
            amp,
            phases,
            points,
            span,
        } => {
            let exp = experiment(cli, load_device(cli)?)?;
            let (summary, csv) = phase_summary(&exp, *amp, *phases, cli.seed)?;
            if summary.single_qubit_below_noise_floor {
                return Err(crtune::Error::Degenerate(
                    "single-qubit drive below noise floor; nothing to cancel".into(),
                )
                .into());
            }
            let n = (*points).max(3);
            let amps: Vec<f64> = (0..n)
                .map(|k| {
                    summary.single_qubit_amplitude
                        * (1.0 - span + 2.0 * span * k as f64 / (n - 1) as f64)
                })
                .collect();
            let cr = CrParams::new(*amp, summary.phi0, 0.0, summary.cancel_phase, 0.0);
            let sweep = cancellation_amplitude_sweep(&exp, &cr, &amps, cli.seed ^ 0xCA)?;
            w.text("sweep_phase.csv", &csv)?;
            w.json("sweep_phase.json", &summary)?;
            w.text(
                "sweep_cancel.csv",
                &sweep_csv("cancel_amp_mhz", &sweep.records),
            )?;
            #[derive(Serialize)]
            struct CancelSummary<'a> {
                schema_version: u32,
                cr_amp: f64,
                cr_phase: f64,
                cancel_phase: f64,
                #[serde(flatten)]
                sweep: &'a crtune::calibration::CancellationSweep,
            }
            w.json(
                "sweep_cancel.json",
                &CancelSummary {
                    schema_version: SCHEMA_VERSION,
                    cr_amp: *amp,
                    cr_phase: summary.phi0,
                    cancel_phase: summary.cancel_phase,
                    sweep: &sweep,
                },
            )?;
        }
        Command::Calibrate {
            gate_time,
            no_cancellation,
        } => {
            let exp = experiment(cli, load_device(cli)?)?;
            let opts = CalibrationOptions {
                cancellation: !no_cancellation,
                seed: cli.seed,
                ..Default::default()
            };
            let res = calibrate_zx90(&exp, *gate_time, &opts)?;
            w.json("calibration.json", &res)?;
            w.text(
                "calibration_phase_sweep.csv",
                &sweep_csv("phase_rad", &res.phase_sweep),
            )?;
            if let Some(s) = &res.cancellation_sweep {
                w.text(
                    "calibration_cancel_sweep.csv",
                    &sweep_csv("cancel_amp_mhz", &s.records),
                )?;
            }
        }
        Command::Trajectory {
            tones,
            durations: d,
        } => {
            let p = load_device(cli)?;
            let src = DeviceRabi::new(p, pulse(tones), cli.dt)?;
            let ds = crtune::tomography::acquire_dataset(&src, &durations(d), cli.shots, cli.seed)?;
            w.text("trajectory.csv", &trajectory_csv(&ds))?;
        }
        Command::Rb { rb } => {
            let gate = match rb.channel {
                ChannelKind::Compiled => Some(device_gate(cli, rb)?),
                _ => None,
            };
            let prov = provider(rb, gate.as_ref())?;
            let res = rb_experiment(prov.get(), &rb_options(cli, rb))?;
            w.text("rb.csv", &res.to_csv())?;
            w.json("rb.json", &res)?;
        }
        Command::Irb { rb } => {
            let gate = device_gate(cli, rb)?;
            let prov = provider(rb, Some(&gate))?;
            let target = entangler();
            let mut res = interleaved_rb(prov.get(), &gate, &target, &rb_options(cli, rb))?;
            #[derive(Serialize)]
            struct IrbSummary<'a> {
                #[serde(flatten)]
                result: &'a crtune::benchmarking::RbResult,
                gate_average_infidelity: f64,
            }
            let infidelity = 1.0 - gate.average_fidelity(&target)?;
            res.warnings.sort();
            w.text("irb.csv", &res.to_csv())?;
            w.json(
                "irb.json",
                &IrbSummary {
                    result: &res,
                    gate_average_infidelity: infidelity,
                },
            )?;
        }
        Command::EffectiveH { amp, phase } => {
            let p = load_device(cli)?;
            let mut points = Vec::with_capacity(amp.len());
            for &a in amp {
                let ph = if a < 0.0 {
                    phase + std::f64::consts::PI
                } else {
                    *phase
                };
                let d = DriveConfig::new(Channel::ControlLine, p.f_target, a.abs(), ph)?;
                points.push(TheoryPoint {
                    amplitude: a,
                    coefficients: effective_cr_coefficients(&p, &[d])?,
                });
            }
            w.text("effective_h.csv", &theory_curve_csv(&points))?;
        }
    }
    Ok(w.written)
}
