//! `crtune`: simulate, characterise and calibrate the echoed CR gate.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use crtune::tomography::Shots;

#[derive(Debug, Parser)]
#[command(
    name = "crtune",
    version,
    about = "Echoed cross-resonance gate simulation and calibration"
)]
pub struct Cli {
    /// Device JSON (defaults to the built-in reference device).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Shots per expectation value, or `exact`.
    #[arg(long, global = true, default_value = "exact")]
    pub shots: Shots,
    /// Propagation step in ns.
    #[arg(long, global = true, default_value_t = crtune::propagation::DEFAULT_DT)]
    pub dt: f64,
    #[command(subcommand)]
    pub command: Command,
}

/// CR and cancellation tones. Amplitudes in MHz, phases in rad.
#[derive(Debug, Clone, Args)]
pub struct Tones {
    #[arg(long, default_value_t = 40.0)]
    pub amp: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub phase: f64,
    #[arg(long, default_value_t = 0.0)]
    pub can_amp: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub can_phase: f64,
}

/// Flat-top durations scanned by tomography.
#[derive(Debug, Clone, Args)]
pub struct Durations {
    /// ns
    #[arg(long, default_value_t = 1000.0)]
    pub t_max: f64,
    #[arg(long, default_value_t = 64)]
    pub points: usize,
}

#[derive(Debug, Clone, Args)]
pub struct RbArgs {
    /// Channel applied per Clifford.
    #[arg(long, value_enum, default_value = "compiled")]
    pub channel: commands::ChannelKind,
    /// Depolarizing parameter for `--channel depolarizing`.
    #[arg(long, default_value_t = 0.98)]
    pub p: f64,
    #[arg(long, value_delimiter = ',', default_values_t = vec![2usize, 4, 8, 16, 32, 64, 100])]
    pub lengths: Vec<usize>,
    #[arg(long, default_value_t = 35)]
    pub n_seqs: usize,
    /// Calibration JSON from `calibrate`; calibrates from scratch if absent.
    #[arg(long)]
    pub calibration: Option<PathBuf>,
    /// Gate time (ns) used when calibrating from scratch.
    #[arg(long, default_value_t = 160.0)]
    pub gate_time: f64,
    /// T1/T2 JSON (µs); the gate is simulated coherently if absent.
    #[arg(long)]
    pub coherence: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate conditional Rabi traces, fit them and report CR coefficients.
    Tomo {
        #[command(flatten)]
        tones: Tones,
        #[command(flatten)]
        durations: Durations,
    },
    /// Measured and effective-Hamiltonian coefficients against CR amplitude.
    SweepAmp {
        /// MHz
        #[arg(long, value_delimiter = ',', default_values_t = vec![10.0, 20.0, 30.0, 40.0, 50.0, 60.0, 70.0, 80.0])]
        amps: Vec<f64>,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        phase: f64,
        #[command(flatten)]
        durations: Durations,
    },
    /// Coefficients against CR phase; reports φ0 and φ1.
    SweepPhase {
        #[arg(long, default_value_t = 40.0)]
        amp: f64,
        #[arg(long, default_value_t = 16)]
        phases: usize,
    },
    /// Phase sweep followed by a cancellation-amplitude sweep.
    SweepCancel {
        #[arg(long, default_value_t = 40.0)]
        amp: f64,
        #[arg(long, default_value_t = 16)]
        phases: usize,
        #[arg(long, default_value_t = 9)]
        points: usize,
        /// Relative half-width of the amplitude sweep around the predicted optimum.
        #[arg(long, default_value_t = 0.5)]
        span: f64,
    },
    /// Full echoed ZX90 tune-up.
    Calibrate {
        /// ns
        #[arg(long, default_value_t = 160.0)]
        gate_time: f64,
        #[arg(long)]
        no_cancellation: bool,
    },
    /// Conditional target Bloch trajectories and ‖R‖.
    Trajectory {
        #[command(flatten)]
        tones: Tones,
        #[command(flatten)]
        durations: Durations,
    },
    /// Two-qubit randomized benchmarking.
    Rb {
        #[command(flatten)]
        rb: RbArgs,
    },
    /// Interleaved randomized benchmarking of the echoed CR gate.
    Irb {
        #[command(flatten)]
        rb: RbArgs,
    },
    /// Effective-Hamiltonian coefficients of a constant CR drive.
    EffectiveH {
        /// MHz
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.0])]
        amp: Vec<f64>,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        phase: f64,
    },
}

fn main() -> ExitCode {
    // Clap exits with status 2 on usage errors.
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(written) => {
            for path in written {
                println!("{}", path.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
