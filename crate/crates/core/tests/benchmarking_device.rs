//! Benchmarking on channels of the pulse-simulated echoed CR gate.

use crtune::benchmarking::{
    device_gate_channel, entangler, interleaved_rb, rb_experiment, CompiledChannels, GateChannel,
    RbOptions,
};
use crtune::calibration::{
    calibrate_zx90, CalibrationOptions, CalibrationResult, DeviceExperiment,
};
use crtune::device::{CoherenceParams, DeviceParams};
use crtune::propagation::DEFAULT_DT;
use crtune::quantum::max_abs_diff;

fn calibrated(cancellation: bool) -> (DeviceExperiment, CalibrationResult) {
    let exp = DeviceExperiment::new(DeviceParams::reference_with_crosstalk()).unwrap();
    let opts = CalibrationOptions {
        cancellation,
        ..Default::default()
    };
    let cal = calibrate_zx90(&exp, 160.0, &opts).unwrap();
    (exp, cal)
}

fn gate(exp: &DeviceExperiment, cal: &CalibrationResult) -> GateChannel {
    device_gate_channel(&exp.params, &cal.cr_params(), &exp.echo, None, DEFAULT_DT).unwrap()
}

#[test]
fn coherent_and_lindblad_channels_agree_without_decay() {
    let (exp, cal) = calibrated(true);
    let coherent = gate(&exp, &cal).superop();
    let lindblad = device_gate_channel(
        &exp.params,
        &cal.cr_params(),
        &exp.echo,
        Some(&CoherenceParams::ideal()),
        DEFAULT_DT,
    )
    .unwrap()
    .superop();
    assert!(max_abs_diff(&coherent, &lindblad) < 2e-3);
    let f = gate(&exp, &cal).average_fidelity(&entangler()).unwrap();
    assert!((f - cal.gate_fidelity_estimate).abs() < 1e-9);

    let noisy = device_gate_channel(
        &exp.params,
        &cal.cr_params(),
        &exp.echo,
        Some(&CoherenceParams::reference()),
        DEFAULT_DT,
    )
    .unwrap();
    assert!(noisy.average_fidelity(&entangler()).unwrap() < f);
}

#[test]
fn irb_matches_gate_infidelity_within_bound() {
    let (exp, cal) = calibrated(true);
    let g = gate(&exp, &cal);
    let provider = CompiledChannels {
        entangler: g.clone(),
    };
    let r = interleaved_rb(&provider, &g, &entangler(), &RbOptions::default()).unwrap();
    let infidelity = 1.0 - g.average_fidelity(&entangler()).unwrap();
    let [lo, hi] = r.r_gate_interval.unwrap();
    assert!(
        lo <= infidelity && infidelity <= hi,
        "{infidelity} not in [{lo}, {hi}]"
    );
}

#[test]
fn irb_orders_cancellation_on_and_off() {
    let (exp_on, on) = calibrated(true);
    let (exp_off, off) = calibrated(false);
    let run = |exp: &DeviceExperiment, cal: &CalibrationResult| {
        let g = gate(exp, cal);
        let provider = CompiledChannels {
            entangler: g.clone(),
        };
        interleaved_rb(&provider, &g, &entangler(), &RbOptions::default())
            .unwrap()
            .r_gate
            .unwrap()
    };
    assert!(on.gate_fidelity_estimate > off.gate_fidelity_estimate);
    assert!(run(&exp_on, &on) < run(&exp_off, &off));
}

#[test]
fn alpha_is_stable_under_reseeding() {
    let (exp, cal) = calibrated(true);
    let provider = CompiledChannels {
        entangler: gate(&exp, &cal),
    };
    let lengths: Vec<usize> = (1..=50).map(|k| 2 * k).collect();
    let alphas: Vec<f64> = (0..3)
        .map(|seed| {
            let opts = RbOptions {
                lengths: lengths.clone(),
                seed,
                ..Default::default()
            };
            rb_experiment(&provider, &opts).unwrap().reference.alpha
        })
        .collect();
    for a in &alphas {
        assert!((a / alphas[0] - 1.0).abs() < 0.002, "{alphas:?}");
    }
}
