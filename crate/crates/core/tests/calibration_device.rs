//! Calibration steps on the pulse-simulated two-transmon device.

use std::f64::consts::FRAC_PI_4;

use crtune::calibration::{
    calibrate_zx90, cancellation_amplitude_sweep, cancellation_phase, even_phases, find_phi0,
    find_phi1, fit_conditional, phase_sweep, CalibrationOptions, DeviceExperiment, Phi1,
};
use crtune::device::{Crosstalk, DeviceParams};
use crtune::pulse::CrParams;
use crtune::quantum::C64;
use crtune::units::wrap_phase;

const AMP: f64 = 50.0;

fn single_qubit_vector(p: &Phi1) -> C64 {
    C64::from_polar(p.amplitude, -p.phi1)
}

#[test]
fn phase_sweep_rotates_the_conditional_vector() {
    let exp = DeviceExperiment::new(DeviceParams::reference_with_crosstalk()).unwrap();
    let recs = phase_sweep(&exp, AMP, &even_phases(16), 3).unwrap();
    let mags: Vec<f64> = recs
        .iter()
        .map(|r| {
            let c = r.coefficients.unwrap();
            c.rate("ZX").hypot(c.rate("ZY"))
        })
        .collect();
    let mean = mags.iter().sum::<f64>() / mags.len() as f64;
    assert!(
        mags.iter().all(|m| (m / mean - 1.0).abs() < 0.02),
        "{mags:?}"
    );
    assert!(fit_conditional(&recs).unwrap().r_squared > 0.99);

    let zz: Vec<f64> = recs
        .iter()
        .map(|r| r.coefficients.unwrap().rate("ZZ").abs())
        .collect();
    let m = zz.iter().sum::<f64>() / zz.len() as f64;
    let sd = (zz.iter().map(|v| (v - m).powi(2)).sum::<f64>() / zz.len() as f64).sqrt();
    assert!(sd / m < 0.2, "ZZ {zz:?}");

    let phi0 = find_phi0(&recs).unwrap();
    let (zx, zy) = fit_conditional(&recs).unwrap().evaluate(phi0);
    assert!(zx > 0.0 && zy.abs() < 0.05 * zx);
}

#[test]
fn injected_crosstalk_phase_is_recovered() {
    let with = DeviceExperiment::new(DeviceParams::reference_with_crosstalk()).unwrap();
    let without = DeviceExperiment::new(DeviceParams::reference()).unwrap();
    let ra = phase_sweep(&with, AMP, &even_phases(16), 4).unwrap();
    let rb = phase_sweep(&without, AMP, &even_phases(16), 4).unwrap();
    // The device's own IX/IY is present either way; the crosstalk adds
    // c·Ω·e^{iφ} on top of it.
    let extra = single_qubit_vector(&find_phi1(&ra).unwrap())
        - single_qubit_vector(&find_phi1(&rb).unwrap());
    assert!(
        wrap_phase(extra.arg() - FRAC_PI_4).abs() < 0.05,
        "{}",
        extra.arg()
    );
    assert!(
        (extra.norm() / (0.05 * AMP) - 1.0).abs() < 0.05,
        "{}",
        extra.norm()
    );
}

#[test]
fn cancellation_sweep_on_device() {
    let exp = DeviceExperiment::new(DeviceParams::reference_with_crosstalk()).unwrap();
    let recs = phase_sweep(&exp, AMP, &even_phases(16), 5).unwrap();
    let phi0 = find_phi0(&recs).unwrap();
    let p1 = find_phi1(&recs).unwrap();
    let cr = CrParams::new(AMP, phi0, 0.0, cancellation_phase(phi0, p1.phi1), 0.0);
    let amps: Vec<f64> = (0..9)
        .map(|k| p1.amplitude * (0.5 + k as f64 / 8.0))
        .collect();
    let s = cancellation_amplitude_sweep(&exp, &cr, &amps, 6).unwrap();
    assert!(!s.phase_error);
    if let (Some(a), Some(b)) = (s.a_ix, s.a_iy) {
        assert!((a - b).abs() / s.optimum < 0.05);
    }
    let at = crtune::calibration::CrExperiment::tomography(
        &exp,
        &CrParams {
            can_amp: s.optimum,
            ..cr
        },
        7,
    )
    .unwrap();
    assert!(
        at.coefficients.rate("IX").abs() < 0.02,
        "{:?}",
        at.coefficients
    );
    assert!(
        at.coefficients.rate("IY").abs() < 0.02,
        "{:?}",
        at.coefficients
    );

    let wrong = CrParams {
        can_phase: cr.can_phase + 0.3,
        ..cr
    };
    let w = cancellation_amplitude_sweep(&exp, &wrong, &amps, 6).unwrap();
    assert!(w.phase_error);
}

#[test]
fn cancellation_never_hurts_across_crosstalk() {
    for mag in [0.0, 0.05, 0.1] {
        let p = DeviceParams::reference().with_crosstalk(Crosstalk {
            magnitude: mag,
            phase: FRAC_PI_4,
        });
        let exp = DeviceExperiment::new(p).unwrap();
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
        assert_eq!(on.cancel_phase, wrap_phase(on.phi0 - on.phi1));
        assert!(
            on.gate_fidelity_estimate >= off.gate_fidelity_estimate,
            "crosstalk {mag}: {} < {}",
            on.gate_fidelity_estimate,
            off.gate_fidelity_estimate
        );
    }
}
