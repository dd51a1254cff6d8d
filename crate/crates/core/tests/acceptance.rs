//! Acceptance criteria for the squeezing budget models.
//!
//! Runs every criterion, prints one PASS/FAIL line each and exits non-zero
//! when any criterion fails. Tolerances are fixed below.

use std::f64::consts::FRAC_PI_4;
use std::process::ExitCode;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sqbudget_core::estimate::{
    estimate_total_efficiency, fit_threshold, invert_phase_mix, resample_pipeline, GainPoint, Pipeline, Side,
    UncertainInput,
};
use sqbudget_core::montecarlo::{expected_mixed_pair, mc_mixed_pair, JitterDistribution, JitterSpec};
use sqbudget_core::opomodel::{
    generated_pair_raw, normalized_frequency, phase_mix, predict, predict_observed, pump_power_to_x,
    total_efficiency,
};
use sqbudget_core::optimize::{find_x_opt, sweep_surface, X_EDGE};
use sqbudget_core::quadmath::subtract_circuit_noise;
use sqbudget_core::{
    CircuitNoiseFloor, DetectionChain, FreqConvention, LossLine, LossMode, LossModel, OpoParams,
    OptimizerSettings, QuadraturePair,
};

const REFERENCE_POWERS_MW: [f64; 9] = [10.0, 20.0, 50.0, 65.0, 90.0, 100.0, 120.0, 130.0, 150.0];

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn floor() -> CircuitNoiseFloor {
    CircuitNoiseFloor::new(-21.7).unwrap()
}

fn reference_chain(theta_deg: f64, conv: FreqConvention) -> DetectionChain {
    DetectionChain::new(0.998, 0.988, 0.99, theta_deg.to_radians(), floor(), 1e6, conv).unwrap()
}

fn reference_fixed() -> OpoParams {
    OpoParams::new(0.123, 0.5, LossModel::Fixed(0.0038), Some(0.180)).unwrap()
}

fn reference_line() -> OpoParams {
    OpoParams::new(0.123, 0.5, LossModel::Line(LossLine::new(0.00249, 0.00222).unwrap()), Some(0.180)).unwrap()
}

fn x_100mw() -> f64 {
    pump_power_to_x(100.0, 180.0).unwrap()
}

fn corrected_pair() -> QuadraturePair {
    QuadraturePair::new(
        subtract_circuit_noise(QuadraturePair::from_db(-9.01, 15.12).unwrap().squeezed, floor()).unwrap(),
        subtract_circuit_noise(QuadraturePair::from_db(-9.01, 15.12).unwrap().antisqueezed, floor()).unwrap(),
    )
    .unwrap()
}

fn ac1_ideal_limit() -> Outcome {
    let lossless = OpoParams::new(0.123, 0.5, LossModel::Fixed(0.0), None).unwrap();
    let mut details = Vec::new();
    let mut ok = true;
    for (deg, expected) in [(1.5, -12.81), (3.9, -8.66)] {
        let theta = f64::to_radians(deg);
        let ideal = find_x_opt(&lossless, &DetectionChain::ideal(theta).unwrap()).map_err(|e| e.to_string())?;
        let best = ideal.squeezed_db();
        ok &= (best - expected).abs() <= 0.05;
        details.push(format!("θ̃={deg}°: {best:.3} dB (target {expected}±0.05)"));
        for conv in [FreqConvention::Angular, FreqConvention::Cyclic] {
            let chain = DetectionChain::new(1.0, 1.0, 1.0, theta, CircuitNoiseFloor::none(), 1e6, conv).unwrap();
            let with_omega = find_x_opt(&lossless, &chain).map_err(|e| e.to_string())?.squeezed_db();
            let shift = (with_omega - best).abs();
            ok &= shift < 0.05;
            details.push(format!("{conv} Ω shift {shift:.4} dB"));
        }
    }
    check(ok, details.join("; "))
}

fn ac2_circuit_noise() -> Outcome {
    let (sq, anti) = corrected_pair().db();
    check(
        (sq + 9.22).abs() <= 0.005 && (anti - 15.15).abs() <= 0.005,
        format!("corrected ({sq:.4}, {anti:.4}) dB, target (-9.22, +15.15)±0.005"),
    )
}

fn ac3_inversion() -> Outcome {
    let generated = invert_phase_mix(corrected_pair(), 1.5f64.to_radians()).map_err(|e| e.to_string())?;
    let (sq, anti) = generated.db();
    check(
        (sq + 10.12).abs() <= 0.02 && (anti - 15.15).abs() <= 0.02,
        format!("generated ({sq:.4}, {anti:.4}) dB, target (-10.12, +15.15)±0.02"),
    )
}

fn ac4_resampling() -> Outcome {
    let pipeline = Pipeline::InvertPhaseMix { theta_rms: 1.5f64.to_radians() };
    let inputs = [UncertainInput::new(-9.22, 0.15), UncertainInput::new(15.15, 0.14)];
    let out = resample_pipeline(&pipeline, &inputs, 50_000, 20_080_101).map_err(|e| e.to_string())?;
    let sigma = out[0].sigma;
    check((sigma - 0.18).abs() <= 0.04, format!("generated squeezing sigma {sigma:.4} dB, target 0.18±0.04"))
}

fn ac5_total_loss() -> Outcome {
    let x = x_100mw();
    let params = reference_fixed();
    let chain = reference_chain(1.5, FreqConvention::Angular);
    let omega = normalized_frequency(&params, &chain, x).map_err(|e| e.to_string())?;
    let generated = invert_phase_mix(corrected_pair(), 1.5f64.to_radians()).map_err(|e| e.to_string())?;
    let loss = 1.0
        - estimate_total_efficiency(generated, x, omega, Side::Squeezed)
            .map_err(|e| e.to_string())?
            .estimate;
    let product = 1.0 - total_efficiency(&params, &chain, x).map_err(|e| e.to_string())?;
    check(
        (loss - 0.0709).abs() <= 0.008 && (product - 0.0645).abs() < 5e-5,
        format!("squeezed-side loss {loss:.4} (0.0709±0.008), product 1−ρζξ²η {product:.5} (0.0645)"),
    )
}

fn ac6_forward() -> Outcome {
    let obs = predict_observed(&reference_fixed(), &reference_chain(1.5, FreqConvention::Angular), x_100mw())
        .map_err(|e| e.to_string())?;
    let (sq, anti) = obs.db();
    check(
        (sq + 9.01).abs() <= 0.5 && (anti - 15.12).abs() <= 0.5,
        format!("observed ({sq:.3}, {anti:.3}) dB, target (-9.01, +15.12)±0.5"),
    )
}

fn ac7_optimal_pump() -> Outcome {
    let params = reference_line();
    let chain = reference_chain(1.5, FreqConvention::Angular);
    let opt = find_x_opt(&params, &chain).map_err(|e| e.to_string())?;
    let Some(report) = opt.interior() else {
        return Err("optimum at the x → 1 boundary".into());
    };
    let x_opt = report.x_opt;
    let n = 200;
    let curve: Vec<f64> = (0..=n)
        .map(|k| x_opt + (X_EDGE - x_opt) * k as f64 / n as f64)
        .map(|x| predict(&params, &chain, x).map(|p| p.observed.squeezed.db()))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let monotone = curve.windows(2).all(|w| w[1] >= w[0]);
    check(
        (x_opt - 0.82).abs() <= 0.05 && monotone,
        format!(
            "x_opt {x_opt:.4} (target 0.82±0.05), best {:.3} dB, worsens monotonically above x_opt: {monotone}",
            report.best_squeezed_db
        ),
    )
}

fn ac8_threshold() -> Outcome {
    let pts: Vec<GainPoint> = REFERENCE_POWERS_MW
        .iter()
        .map(|&p| GainPoint::new(p, 1.0 / (1.0 - (p / 180.0).sqrt()).powi(2)))
        .collect();
    let fit = fit_threshold(&pts).map_err(|e| e.to_string())?;
    let rel = (fit.estimate - 180.0).abs() / 180.0;
    let single = fit_threshold(&[GainPoint::new(100.0, 18.7)]).map_err(|e| e.to_string())?.estimate;
    check(
        rel < 1e-3 && (single - 169.2).abs() <= 0.5,
        format!("synthetic P_th {:.6} mW (rel err {rel:.2e}), single point {single:.2} mW (169.2±0.5)", fit.estimate),
    )
}

fn ac9_surface_anchors() -> Outcome {
    let t = sweep_surface(
        &reference_line(),
        &reference_chain(1.5, FreqConvention::Angular),
        &[0.0, 1.5],
        &[0.0038],
        LossMode::FollowLine,
        &OptimizerSettings::default(),
    )
    .map_err(|e| e.to_string())?;
    let star = t.cell(&[1, 0]).unwrap().squeezed_db;
    let path_end = t.path[0].squeezed_db;
    check(
        star < -9.0 && path_end < -10.0,
        format!("cell (1.5°, 0.0038) {star:.3} dB (< -9), θ̃=0 end of loss-line path {path_end:.3} dB (< -10)"),
    )
}

fn ac10_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut worst_sum = 0f64;
    let mut worst_purity = 0f64;
    let mut worst_round_trip = 0f64;
    for _ in 0..2000 {
        let a = 10f64.powf(rng.random_range(-3.0..0.0));
        let b = 10f64.powf(rng.random_range(0.0..3.0));
        let theta = rng.random_range(0.0..40.0f64).to_radians();
        let pair = QuadraturePair::from_linear(a, b).unwrap();
        let mixed = phase_mix(pair, theta).unwrap();
        let (m, p) = mixed.values();
        worst_sum = worst_sum.max(((m + p) - (a + b)).abs() / (a + b));
        let back = invert_phase_mix(mixed, theta).unwrap().values();
        worst_round_trip = worst_round_trip.max(((back.1 - b) / b).abs());
        worst_round_trip = worst_round_trip.max(((back.0 - a) / a).abs() * (a / b).min(1.0));
        let x = rng.random_range(0.0..0.999);
        let (gm, gp) = generated_pair_raw(1.0, 0.0, x).unwrap().values();
        worst_purity = worst_purity.max((gm * gp - 1.0).abs() / gp.max(1.0));
    }
    let mut ok = worst_sum <= 4.0 * f64::EPSILON && worst_purity < 1e-12 && worst_round_trip < 1e-10;

    let mut worst_db = 0f64;
    for (deg, conv) in [(1.5, FreqConvention::Angular), (3.9, FreqConvention::Cyclic), (6.0, FreqConvention::Angular)] {
        let params = reference_line();
        let chain = reference_chain(deg, conv);
        let opt = find_x_opt(&params, &chain).unwrap();
        let brute = (0..100_001)
            .map(|k| predict(&params, &chain, X_EDGE * k as f64 / 100_000.0).unwrap().observed.squeezed.db())
            .fold(f64::INFINITY, f64::min);
        worst_db = worst_db.max((opt.squeezed_db() - brute).abs());
    }
    ok &= worst_db < 1e-3;

    let pair = QuadraturePair::from_linear(0.0973, 32.75).unwrap();
    let rms = 1.5f64.to_radians();
    let spec = JitterSpec::new(JitterDistribution::Gaussian, rms, 1_000_000, 1).unwrap();
    let mc = mc_mixed_pair(pair, &spec);
    let analytic = expected_mixed_pair(pair, rms, JitterDistribution::Gaussian).0;
    let z = (mc.squeezed.mean - analytic).abs() / mc.squeezed.std_error;
    ok &= z < 3.0;
    let again = mc_mixed_pair(pair, &spec);
    let bitwise = again.squeezed.mean.to_bits() == mc.squeezed.mean.to_bits()
        && again.antisqueezed.mean.to_bits() == mc.antisqueezed.mean.to_bits()
        && again.squeezed.std_error.to_bits() == mc.squeezed.std_error.to_bits();
    ok &= bitwise;
    ok &= invert_phase_mix(pair, FRAC_PI_4).is_err();

    check(
        ok,
        format!(
            "sum rel err {worst_sum:.1e}, purity {worst_purity:.1e}, round trip {worst_round_trip:.1e}, \
             optimizer vs brute {worst_db:.1e} dB, MC |z| {z:.2}, seed bit-exact {bitwise}"
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("AC1 ideal-limit squeezing", ac1_ideal_limit),
        ("AC2 circuit-noise correction", ac2_circuit_noise),
        ("AC3 phase-mix inversion", ac3_inversion),
        ("AC4 resampled uncertainty", ac4_resampling),
        ("AC5 total-loss estimate", ac5_total_loss),
        ("AC6 forward prediction", ac6_forward),
        ("AC7 optimal pump power", ac7_optimal_pump),
        ("AC8 threshold fit", ac8_threshold),
        ("AC9 surface anchors", ac9_surface_anchors),
        ("AC10 property suites", ac10_properties),
    ];
    let mut failures = 0;
    for (name, run) in criteria {
        match run() {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failures += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failures} failed", criteria.len() - failures);
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
