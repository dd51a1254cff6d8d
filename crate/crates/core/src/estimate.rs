//! Inverse problems: from observed levels back to generated levels and
//! efficiencies, threshold and loss-line fits, and Monte Carlo error bars.

use std::f64::consts::FRAC_PI_4;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::opomodel::{spectral_factors, LossLine, QuadraturePair};
use crate::quadmath::{db_to_linear, linear_to_db, subtract_circuit_noise, CircuitNoiseFloor, NoiseLevel};

/// A parametric gain measurement at one pump power.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainPoint {
    pub pump_power: f64,
    pub gain: f64,
    pub sigma_gain: Option<f64>,
}

impl GainPoint {
    pub fn new(pump_power: f64, gain: f64) -> Self {
        Self { pump_power, gain, sigma_gain: None }
    }

    pub fn with_sigma(pump_power: f64, gain: f64, sigma_gain: f64) -> Self {
        Self { pump_power, gain, sigma_gain: Some(sigma_gain) }
    }
}

/// An intracavity loss measurement at one normalized pump power.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossPoint {
    pub x: f64,
    pub loss: f64,
}

/// A scalar estimate with its 1-sigma uncertainty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitResult {
    pub estimate: f64,
    pub sigma: f64,
    /// Root-mean-square of the unweighted residuals.
    pub residual_norm: f64,
    pub n_points: usize,
}

/// Undoes [`phase_mix`](crate::opomodel::phase_mix).
///
/// `R± = (R'± cos²θ̃ − R'∓ sin²θ̃) / cos 2θ̃`. Sigmas, when both are present,
/// are propagated to first order assuming independent inputs.
pub fn invert_phase_mix(observed: QuadraturePair, theta_rms: f64) -> Result<QuadraturePair> {
    if theta_rms.is_nan() || theta_rms < 0.0 {
        return Err(Error::domain(format!("phase jitter rms must be ≥ 0, got {theta_rms}")));
    }
    if theta_rms >= FRAC_PI_4 {
        return Err(Error::SingularInversion(format!(
            "mixing is not invertible at θ̃ = {}° (≥ 45°)",
            theta_rms.to_degrees()
        )));
    }
    let (c, s) = (theta_rms.cos().powi(2), theta_rms.sin().powi(2));
    let det = (2.0 * theta_rms).cos();
    let (m, p) = observed.values();
    let minus = (m * c - p * s) / det;
    let plus = (p * c - m * s) / det;
    if !(minus > 0.0) {
        return Err(Error::InconsistentInputs(format!(
            "recovered squeezed variance {minus:.4e} is not positive; jitter {}° is too large for these levels",
            theta_rms.to_degrees()
        )));
    }
    let (sm, sp) = match (observed.squeezed.sigma(), observed.antisqueezed.sigma()) {
        (Some(a), Some(b)) => (
            Some((c * a).hypot(s * b) / det),
            Some((c * b).hypot(s * a) / det),
        ),
        _ => (None, None),
    };
    QuadraturePair::new(NoiseLevel::with_sigma(minus, sm)?, NoiseLevel::with_sigma(plus, sp)?)
}

/// Which generated quadrature(s) the efficiency is solved from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Side {
    #[default]
    Squeezed,
    Antisqueezed,
    Both,
}

impl std::str::FromStr for Side {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "squeezed" => Ok(Side::Squeezed),
            "antisqueezed" => Ok(Side::Antisqueezed),
            "both" => Ok(Side::Both),
            other => Err(Error::invalid(format!("unknown side `{other}`"))),
        }
    }
}

/// Solves the generated-spectrum relation for the total efficiency
/// `E = ηξ²ζρ`. The returned estimate is `E`; total loss is `1 − E`.
pub fn estimate_total_efficiency(
    generated: QuadraturePair,
    x: f64,
    omega: f64,
    side: Side,
) -> Result<FitResult> {
    if !(x > 0.0 && x < 1.0) {
        return Err(Error::domain(format!("normalized pump power must lie in (0, 1), got {x}")));
    }
    if !(omega >= 0.0) || !omega.is_finite() {
        return Err(Error::invalid(format!("normalized frequency must be ≥ 0, got {omega}")));
    }
    let (a_minus, a_plus) = spectral_factors(x, omega);
    let (r_minus, r_plus) = generated.values();
    let no_squeezing = || {
        Error::NoSqueezing(format!("generated squeezed level {r_minus} is not below shot noise"))
    };

    let fit = match side {
        Side::Squeezed => {
            if r_minus >= 1.0 {
                return Err(no_squeezing());
            }
            FitResult {
                estimate: (1.0 - r_minus) / a_minus,
                sigma: generated.squeezed.sigma().map_or(0.0, |s| s / a_minus),
                residual_norm: 0.0,
                n_points: 1,
            }
        }
        Side::Antisqueezed => {
            if r_plus <= 1.0 {
                return Err(Error::NoSqueezing(format!(
                    "generated antisqueezed level {r_plus} is not above shot noise"
                )));
            }
            FitResult {
                estimate: (r_plus - 1.0) / a_plus,
                sigma: generated.antisqueezed.sigma().map_or(0.0, |s| s / a_plus),
                residual_norm: 0.0,
                n_points: 1,
            }
        }
        Side::Both => {
            if r_minus >= 1.0 {
                return Err(no_squeezing());
            }
            // y_i = E·a_i with y = (1 − R−, R+ − 1)
            let ys = [1.0 - r_minus, r_plus - 1.0];
            let as_ = [a_minus, a_plus];
            let weights = match (generated.squeezed.sigma(), generated.antisqueezed.sigma()) {
                (Some(sm), Some(sp)) if sm > 0.0 && sp > 0.0 => Some([1.0 / (sm * sm), 1.0 / (sp * sp)]),
                _ => None,
            };
            let w = weights.unwrap_or([1.0, 1.0]);
            let saa: f64 = (0..2).map(|i| w[i] * as_[i] * as_[i]).sum();
            let say: f64 = (0..2).map(|i| w[i] * as_[i] * ys[i]).sum();
            let e = say / saa;
            let res = [ys[0] - e * as_[0], ys[1] - e * as_[1]];
            let residual_norm = ((res[0] * res[0] + res[1] * res[1]) / 2.0).sqrt();
            let sigma = if weights.is_some() {
                (1.0 / saa).sqrt()
            } else {
                let s2 = res[0] * res[0] + res[1] * res[1];
                (s2 / saa).sqrt()
            };
            FitResult { estimate: e, sigma, residual_norm, n_points: 2 }
        }
    };

    if !(fit.estimate > 0.0 && fit.estimate <= 1.0) {
        return Err(Error::InconsistentInputs(format!(
            "solved total efficiency {} lies outside (0, 1]",
            fit.estimate
        )));
    }
    Ok(fit)
}

const THRESHOLD_MAX_ITER: usize = 100;
const THRESHOLD_REL_STEP: f64 = 1e-10;

fn threshold_model(power: f64, threshold: f64) -> (f64, f64) {
    let s = (power / threshold).sqrt();
    let g = 1.0 / (1.0 - s).powi(2);
    let dg = -s / (threshold * (1.0 - s).powi(3));
    (g, dg)
}

fn closed_form_threshold(p: &GainPoint) -> f64 {
    p.pump_power / (1.0 - 1.0 / p.gain.sqrt()).powi(2)
}

/// Fits `G(P) = 1/(1 − √(P/P_th))²` for `P_th` (same unit as the powers).
///
/// Damped Gauss–Newton on the gain residuals, sigma-weighted when every point
/// carries a positive `sigma_gain`. A single informative point is solved in
/// closed form and reported with zero sigma.
pub fn fit_threshold(points: &[GainPoint]) -> Result<FitResult> {
    if points.is_empty() {
        return Err(Error::invalid("threshold fit needs at least one gain point"));
    }
    for p in points {
        if !(p.pump_power >= 0.0) || !p.pump_power.is_finite() {
            return Err(Error::domain(format!("pump power must be ≥ 0, got {}", p.pump_power)));
        }
        if !(p.gain >= 1.0) || !p.gain.is_finite() {
            return Err(Error::domain(format!("parametric gain must be ≥ 1, got {}", p.gain)));
        }
        if let Some(s) = p.sigma_gain {
            if !(s >= 0.0) || !s.is_finite() {
                return Err(Error::invalid(format!("gain sigma must be ≥ 0, got {s}")));
            }
        }
    }
    let mut powers: Vec<f64> = points.iter().map(|p| p.pump_power).collect();
    powers.sort_by(f64::total_cmp);
    if powers.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::invalid("pump powers in a threshold fit must be distinct"));
    }

    let informative: Vec<&GainPoint> =
        points.iter().filter(|p| p.pump_power > 0.0 && p.gain > 1.0).collect();
    let Some(seed) = informative.iter().max_by(|a, b| a.gain.total_cmp(&b.gain)) else {
        return Err(Error::Underdetermined(
            "no point with positive pump power and gain above 1; threshold is unidentifiable".into(),
        ));
    };
    let max_power = powers[powers.len() - 1];
    if points.iter().any(|p| p.pump_power > 0.0 && p.gain == 1.0) {
        return Err(Error::Underdetermined("unit gain at positive pump power implies infinite threshold".into()));
    }

    let residual_rms = |pth: f64| {
        let ss: f64 = points
            .iter()
            .map(|p| (p.gain - threshold_model(p.pump_power, pth).0).powi(2))
            .sum();
        (ss / points.len() as f64).sqrt()
    };

    if informative.len() == 1 {
        let pth = closed_form_threshold(seed);
        return Ok(FitResult { estimate: pth, sigma: 0.0, residual_norm: residual_rms(pth), n_points: points.len() });
    }

    let weighted = points.iter().all(|p| p.sigma_gain.is_some_and(|s| s > 0.0));
    let weight = |p: &GainPoint| if weighted { 1.0 / p.sigma_gain.unwrap().powi(2) } else { 1.0 };
    let cost = |pth: f64| -> f64 {
        points
            .iter()
            .map(|p| weight(p) * (p.gain - threshold_model(p.pump_power, pth).0).powi(2))
            .sum()
    };

    let mut pth = closed_form_threshold(seed);
    if pth <= max_power {
        pth = max_power * 1.01;
    }
    let mut current = cost(pth);
    let mut converged = false;
    let mut iterations = 0;
    while iterations < THRESHOLD_MAX_ITER {
        iterations += 1;
        let (mut jtj, mut jtr) = (0.0, 0.0);
        for p in points {
            let (g, dg) = threshold_model(p.pump_power, pth);
            let w = weight(p);
            jtj += w * dg * dg;
            jtr += w * dg * (p.gain - g);
        }
        if jtj == 0.0 {
            break;
        }
        let mut step = jtr / jtj;
        let mut accepted = false;
        for _ in 0..60 {
            let candidate = pth + step;
            if candidate > max_power {
                let c = cost(candidate);
                if c <= current {
                    pth = candidate;
                    current = c;
                    accepted = true;
                    break;
                }
            }
            step *= 0.5;
        }
        if !accepted || step.abs() <= THRESHOLD_REL_STEP * pth {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::FitFailure { last_estimate: pth, iterations });
    }

    let jtj: f64 = points
        .iter()
        .map(|p| weight(p) * threshold_model(p.pump_power, pth).1.powi(2))
        .sum();
    let sigma = if weighted {
        (1.0 / jtj).sqrt()
    } else {
        let dof = (points.len() - 1) as f64;
        (current / dof / jtj).sqrt()
    };
    Ok(FitResult { estimate: pth, sigma, residual_norm: residual_rms(pth), n_points: points.len() })
}

/// Ordinary least-squares loss line with coefficient uncertainties.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossLineFit {
    pub line: LossLine,
    pub intercept_sigma: f64,
    pub slope_sigma: f64,
    pub residual_norm: f64,
    pub n_points: usize,
}

pub fn fit_loss_line(points: &[LossPoint]) -> Result<LossLineFit> {
    for p in points {
        if !(0.0..=1.0).contains(&p.x) || !(0.0..1.0).contains(&p.loss) {
            return Err(Error::domain(format!(
                "loss point (x = {}, L = {}) outside x ∈ [0, 1], L ∈ [0, 1)",
                p.x, p.loss
            )));
        }
    }
    let n = points.len();
    let mut xs: Vec<f64> = points.iter().map(|p| p.x).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    if xs.len() < 2 {
        return Err(Error::Underdetermined(format!(
            "loss line needs at least two distinct x values, got {}",
            xs.len()
        )));
    }
    let nf = n as f64;
    let mx = points.iter().map(|p| p.x).sum::<f64>() / nf;
    let my = points.iter().map(|p| p.loss).sum::<f64>() / nf;
    let sxx: f64 = points.iter().map(|p| (p.x - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.x - mx) * (p.loss - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ssr: f64 = points
        .iter()
        .map(|p| (p.loss - intercept - slope * p.x).powi(2))
        .sum();
    let (intercept_sigma, slope_sigma) = if n > 2 {
        let s2 = ssr / (nf - 2.0);
        ((s2 * (1.0 / nf + mx * mx / sxx)).sqrt(), (s2 / sxx).sqrt())
    } else {
        (0.0, 0.0)
    };
    Ok(LossLineFit {
        line: LossLine::new(intercept, slope)?,
        intercept_sigma,
        slope_sigma,
        residual_norm: (ssr / nf).sqrt(),
        n_points: n,
    })
}

/// A pipeline input with its Gaussian 1-sigma uncertainty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UncertainInput {
    pub value: f64,
    pub sigma: f64,
}

impl UncertainInput {
    pub fn new(value: f64, sigma: f64) -> Self {
        Self { value, sigma }
    }
}

/// Fraction of failed samples above which resampling gives up.
pub const MAX_FAILURE_RATE: f64 = 0.2;

/// RNG behind every resampling draw; sample `i` uses stream `i` of the seed.
pub const RESAMPLE_RNG: &str = "ChaCha8 (rand_chacha), stream = sample index";

/// Propagates Gaussian input uncertainties through `pipeline` by resampling.
///
/// Every sample perturbs each input by `sigma · N(0, 1)` and evaluates the
/// pipeline. Sample `i` draws from its own ChaCha8 stream, so results do not
/// depend on how the samples are scheduled across threads. Reports the mean
/// and standard deviation of each output over the successful samples.
pub fn resample_uncertainty<F>(
    inputs: &[UncertainInput],
    pipeline: F,
    n_samples: usize,
    seed: u64,
) -> Result<Vec<FitResult>>
where
    F: Fn(&[f64]) -> Result<Vec<f64>> + Sync,
{
    if n_samples < 100 {
        return Err(Error::invalid(format!("resampling needs at least 100 samples, got {n_samples}")));
    }
    for inp in inputs {
        if !inp.value.is_finite() || !(inp.sigma >= 0.0) || !inp.sigma.is_finite() {
            return Err(Error::invalid(format!("bad uncertain input {inp:?}")));
        }
    }

    let samples: Vec<Option<Vec<f64>>> = (0..n_samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let perturbed: Vec<f64> = inputs
                .iter()
                .map(|inp| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    inp.value + inp.sigma * z
                })
                .collect();
            pipeline(&perturbed).ok().filter(|out| out.iter().all(|v| v.is_finite()))
        })
        .collect();

    let failed = samples.iter().filter(|s| s.is_none()).count();
    if failed as f64 > MAX_FAILURE_RATE * n_samples as f64 {
        return Err(Error::UnstableEstimate { failed, total: n_samples });
    }

    let mut stats: Vec<Welford> = Vec::new();
    for out in samples.iter().flatten() {
        if stats.is_empty() {
            stats = vec![Welford::default(); out.len()];
        }
        if out.len() != stats.len() {
            return Err(Error::invalid("pipeline returned a varying number of outputs"));
        }
        for (w, v) in stats.iter_mut().zip(out) {
            w.push(*v);
        }
    }
    Ok(stats
        .into_iter()
        .map(|w| FitResult {
            estimate: w.mean,
            sigma: w.std_dev(),
            residual_norm: 0.0,
            n_points: w.count,
        })
        .collect())
}

#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct Welford {
    pub count: usize,
    pub mean: f64,
    m2: f64,
}

impl Welford {
    pub fn push(&mut self, v: f64) {
        self.count += 1;
        let delta = v - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (v - self.mean);
    }

    /// Chan et al. pairwise combination.
    pub fn merge(&mut self, other: &Welford) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let n = (self.count + other.count) as f64;
        let delta = other.mean - self.mean;
        self.mean += delta * other.count as f64 / n;
        self.m2 += other.m2 + delta * delta * self.count as f64 * other.count as f64 / n;
        self.count += other.count;
    }

    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            self.m2 / (self.count - 1) as f64
        }
    }

    pub fn std_dev(&self) -> f64 {
        self.variance().sqrt()
    }
}

/// Named compositions used with [`resample_uncertainty`]. All inputs are
/// `[squeezed_db, antisqueezed_db]`; all level outputs are in dB.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Pipeline {
    /// Generated levels from floor-corrected levels.
    InvertPhaseMix { theta_rms: f64 },
    /// Corrected and generated levels from raw observed levels.
    CorrectAndInvert { floor: CircuitNoiseFloor, theta_rms: f64 },
    /// Corrected and generated levels plus total loss `1 − E` from the
    /// squeezed side, the antisqueezed side and the joint fit.
    TotalLoss { floor: CircuitNoiseFloor, theta_rms: f64, x: f64, omega: f64 },
}

impl Pipeline {
    pub fn output_names(&self) -> &'static [&'static str] {
        match self {
            Pipeline::InvertPhaseMix { .. } => &["generated_squeezed_db", "generated_antisqueezed_db"],
            Pipeline::CorrectAndInvert { .. } => &[
                "corrected_squeezed_db",
                "corrected_antisqueezed_db",
                "generated_squeezed_db",
                "generated_antisqueezed_db",
            ],
            Pipeline::TotalLoss { .. } => &[
                "corrected_squeezed_db",
                "corrected_antisqueezed_db",
                "generated_squeezed_db",
                "generated_antisqueezed_db",
                "total_loss_squeezed",
                "total_loss_antisqueezed",
                "total_loss_both",
            ],
        }
    }

    pub fn evaluate(&self, inputs: &[f64]) -> Result<Vec<f64>> {
        let [sq_db, anti_db] = inputs else {
            return Err(Error::invalid("pipeline expects [squeezed_db, antisqueezed_db]"));
        };
        let raw = QuadraturePair::new(
            NoiseLevel::new(db_to_linear(*sq_db)?)?,
            NoiseLevel::new(db_to_linear(*anti_db)?)?,
        )?;
        match *self {
            Pipeline::InvertPhaseMix { theta_rms } => {
                let (m, p) = invert_phase_mix(raw, theta_rms)?.values();
                Ok(vec![linear_to_db(m)?, linear_to_db(p)?])
            }
            Pipeline::CorrectAndInvert { floor, theta_rms } => {
                let corrected = correct_pair(raw, floor)?;
                let (m, p) = invert_phase_mix(corrected, theta_rms)?.values();
                let (cm, cp) = corrected.values();
                Ok(vec![linear_to_db(cm)?, linear_to_db(cp)?, linear_to_db(m)?, linear_to_db(p)?])
            }
            Pipeline::TotalLoss { floor, theta_rms, x, omega } => {
                let corrected = correct_pair(raw, floor)?;
                let generated = invert_phase_mix(corrected, theta_rms)?;
                let (cm, cp) = corrected.values();
                let (m, p) = generated.values();
                let mut out = vec![linear_to_db(cm)?, linear_to_db(cp)?, linear_to_db(m)?, linear_to_db(p)?];
                for side in [Side::Squeezed, Side::Antisqueezed, Side::Both] {
                    out.push(1.0 - estimate_total_efficiency(generated, x, omega, side)?.estimate);
                }
                Ok(out)
            }
        }
    }
}

fn correct_pair(raw: QuadraturePair, floor: CircuitNoiseFloor) -> Result<QuadraturePair> {
    QuadraturePair::new(
        subtract_circuit_noise(raw.squeezed, floor)?,
        subtract_circuit_noise(raw.antisqueezed, floor)?,
    )
}

/// Runs a named pipeline through [`resample_uncertainty`].
pub fn resample_pipeline(
    pipeline: &Pipeline,
    inputs: &[UncertainInput],
    n_samples: usize,
    seed: u64,
) -> Result<Vec<FitResult>> {
    resample_uncertainty(inputs, |v| pipeline.evaluate(v), n_samples, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::opomodel::{generated_pair_raw, phase_mix};
    use proptest::prelude::*;

    const REFERENCE_POWERS_MW: [f64; 9] = [10.0, 20.0, 50.0, 65.0, 90.0, 100.0, 120.0, 130.0, 150.0];

    fn synthetic_gains(pth: f64) -> Vec<GainPoint> {
        REFERENCE_POWERS_MW
            .iter()
            .map(|&p| GainPoint::new(p, 1.0 / (1.0 - (p / pth).sqrt()).powi(2)))
            .collect()
    }

    #[test]
    fn inversion_reproduces_generated_levels() {
        let corrected = QuadraturePair::from_db(-9.22, 15.15).unwrap();
        let (m, p) = invert_phase_mix(corrected, 1.5f64.to_radians()).unwrap().db();
        assert!((m + 10.12).abs() < 0.02, "{m}");
        assert!((p - 15.15).abs() < 0.02, "{p}");
    }

    #[test]
    fn inversion_identity_and_errors() {
        let pair = QuadraturePair::from_db(-9.22, 15.15).unwrap();
        assert_eq!(invert_phase_mix(pair, 0.0).unwrap().values(), pair.values());
        assert!(matches!(invert_phase_mix(pair, FRAC_PI_4), Err(Error::SingularInversion(_))));
        // 0.1 cos² − 30 sin² < 0 at 10°
        let bad = QuadraturePair::from_linear(0.1, 30.0).unwrap();
        assert!(matches!(
            invert_phase_mix(bad, 10f64.to_radians()),
            Err(Error::InconsistentInputs(_))
        ));
    }

    #[test]
    fn total_efficiency_from_reference_generated_level() {
        let x = (100.0f64 / 180.0).sqrt();
        let generated = QuadraturePair::from_db(-10.12, 15.15).unwrap();
        let fit = estimate_total_efficiency(generated, x, 0.08264, Side::Squeezed).unwrap();
        let loss = 1.0 - fit.estimate;
        assert!((loss - 0.0709).abs() < 0.0045, "{loss}");
        assert!((loss - 0.070).abs() < 0.001, "{loss}");
    }

    #[test]
    fn total_efficiency_round_trip_each_side() {
        for side in [Side::Squeezed, Side::Antisqueezed, Side::Both] {
            let g = generated_pair_raw(0.93, 0.05, 0.6).unwrap();
            let e = estimate_total_efficiency(g, 0.6, 0.05, side).unwrap().estimate;
            assert!(((e - 0.93) / 0.93).abs() < 1e-10, "{side:?}: {e}");
        }
    }

    #[test]
    fn total_efficiency_errors() {
        let flat = QuadraturePair::from_linear(1.0, 2.0).unwrap();
        assert!(matches!(
            estimate_total_efficiency(flat, 0.5, 0.0, Side::Squeezed),
            Err(Error::NoSqueezing(_))
        ));
        assert!(matches!(
            estimate_total_efficiency(flat, 0.0, 0.0, Side::Squeezed),
            Err(Error::Domain(_))
        ));
        // deeper squeezing than a lossless OPO allows at this pump
        let too_deep = QuadraturePair::from_linear(0.01, 2.0).unwrap();
        assert!(matches!(
            estimate_total_efficiency(too_deep, 0.3, 0.0, Side::Squeezed),
            Err(Error::InconsistentInputs(_))
        ));
    }

    #[test]
    fn weighted_joint_fit_follows_precise_side() {
        let x = 0.6;
        let g = generated_pair_raw(0.9, 0.0, x).unwrap();
        let (m, p) = g.values();
        // antisqueezed side disagrees; a tiny squeezed sigma pins the squeezed answer
        let pair = QuadraturePair::new(
            NoiseLevel::with_sigma(m, Some(1e-6)).unwrap(),
            NoiseLevel::with_sigma(p * 1.2, Some(10.0)).unwrap(),
        )
        .unwrap();
        let fit = estimate_total_efficiency(pair, x, 0.0, Side::Both).unwrap();
        assert!((fit.estimate - 0.9).abs() < 1e-6, "{}", fit.estimate);
        assert!(fit.residual_norm > 0.0);
    }

    #[test]
    fn threshold_single_point_closed_form() {
        let fit = fit_threshold(&[GainPoint::new(100.0, 18.7)]).unwrap();
        // 100 / (1 − 1/√18.7)²
        assert!((fit.estimate - 169.210_851_722_713_4).abs() < 1e-9, "{}", fit.estimate);
        assert_eq!(fit.sigma, 0.0);
        assert_eq!(fit.n_points, 1);
    }

    #[test]
    fn threshold_recovered_from_reference_powers() {
        let fit = fit_threshold(&synthetic_gains(180.0)).unwrap();
        assert!(((fit.estimate - 180.0) / 180.0).abs() < 1e-3);
        assert!(((fit.estimate - 180.0) / 180.0).abs() < 1e-9, "{}", fit.estimate);
        assert!(fit.residual_norm < 1e-8);
        assert_eq!(fit.n_points, 9);
    }

    #[test]
    fn threshold_with_noise_and_sigmas() {
        let pts: Vec<GainPoint> = synthetic_gains(180.0)
            .into_iter()
            .enumerate()
            .map(|(i, p)| {
                let jitter = if i % 2 == 0 { 1.01 } else { 0.99 };
                GainPoint::with_sigma(p.pump_power, 1.0 + (p.gain - 1.0) * jitter, 0.02 * p.gain)
            })
            .collect();
        let fit = fit_threshold(&pts).unwrap();
        assert!((fit.estimate - 180.0).abs() < 3.0, "{}", fit.estimate);
        assert!(fit.sigma > 0.0 && fit.sigma < 5.0, "{}", fit.sigma);
    }

    #[test]
    fn threshold_degenerate_inputs() {
        assert!(matches!(fit_threshold(&[]), Err(Error::InvalidArgument(_))));
        assert!(matches!(fit_threshold(&[GainPoint::new(0.0, 1.0)]), Err(Error::Underdetermined(_))));
        assert!(matches!(fit_threshold(&[GainPoint::new(10.0, 0.9)]), Err(Error::Domain(_))));
        assert!(matches!(
            fit_threshold(&[GainPoint::new(10.0, 1.2), GainPoint::new(10.0, 1.3)]),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn loss_line_examples() {
        let exact: Vec<LossPoint> = (0..7)
            .map(|i| {
                let x = i as f64 / 7.0;
                LossPoint { x, loss: 0.00249 + 0.00222 * x }
            })
            .collect();
        let fit = fit_loss_line(&exact).unwrap();
        assert!((fit.line.intercept() - 0.00249).abs() < 1e-12);
        assert!((fit.line.slope() - 0.00222).abs() < 1e-12);
        assert!(fit.residual_norm < 1e-15);

        let x = (100.0f64 / 180.0).sqrt();
        let two = fit_loss_line(&[LossPoint { x: 0.0, loss: 0.0020 }, LossPoint { x, loss: 0.0038 }]).unwrap();
        assert!((two.line.intercept() - 0.0020).abs() < 1e-12);
        assert!((two.line.slope() - 0.002415).abs() < 5e-7, "{}", two.line.slope());

        let flat = fit_loss_line(&[
            LossPoint { x: 0.1, loss: 0.003 },
            LossPoint { x: 0.5, loss: 0.003 },
            LossPoint { x: 0.9, loss: 0.003 },
        ])
        .unwrap();
        assert!(flat.line.slope().abs() < 1e-15);

        assert!(matches!(
            fit_loss_line(&[LossPoint { x: 0.3, loss: 0.01 }, LossPoint { x: 0.3, loss: 0.02 }]),
            Err(Error::Underdetermined(_))
        ));
    }

    #[test]
    fn resampled_sigma_of_generated_squeezing() {
        let pipeline = Pipeline::InvertPhaseMix { theta_rms: 1.5f64.to_radians() };
        let inputs = [UncertainInput::new(-9.22, 0.15), UncertainInput::new(15.15, 0.14)];
        let out = resample_pipeline(&pipeline, &inputs, 20_000, 7).unwrap();
        assert!((out[0].sigma - 0.18).abs() < 0.04, "{}", out[0].sigma);
        assert!((out[0].estimate + 10.12).abs() < 0.02);
    }

    #[test]
    fn resampling_zero_sigma_and_determinism() {
        let pipeline = Pipeline::InvertPhaseMix { theta_rms: 1.5f64.to_radians() };
        let fixed = [UncertainInput::new(-9.22, 0.0), UncertainInput::new(15.15, 0.0)];
        for r in resample_pipeline(&pipeline, &fixed, 500, 1).unwrap() {
            assert_eq!(r.sigma, 0.0);
        }
        let noisy = [UncertainInput::new(-9.22, 0.15), UncertainInput::new(15.15, 0.14)];
        let a = resample_pipeline(&pipeline, &noisy, 1000, 99).unwrap();
        let b = resample_pipeline(&pipeline, &noisy, 1000, 99).unwrap();
        assert_eq!(a, b);
        let c = resample_pipeline(&pipeline, &noisy, 1000, 100).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn resampling_rejects_unstable_pipelines() {
        let inputs = [UncertainInput::new(0.0, 1.0)];
        let err = resample_uncertainty(
            &inputs,
            |v| if v[0] > -0.5 { Err(Error::invalid("nope")) } else { Ok(vec![v[0]]) },
            1000,
            3,
        )
        .unwrap_err();
        assert!(matches!(err, Error::UnstableEstimate { .. }));
        assert!(resample_uncertainty(&inputs, |v| Ok(v.to_vec()), 99, 3).is_err());
    }

    #[test]
    fn welford_merge_matches_sequential() {
        let data: Vec<f64> = (0..1000).map(|i| ((i * 37) % 101) as f64 * 0.1).collect();
        let mut all = Welford::default();
        data.iter().for_each(|v| all.push(*v));
        let (mut a, mut b) = (Welford::default(), Welford::default());
        data[..313].iter().for_each(|v| a.push(*v));
        data[313..].iter().for_each(|v| b.push(*v));
        a.merge(&b);
        assert!((a.mean - all.mean).abs() < 1e-12);
        assert!((a.variance() - all.variance()).abs() < 1e-10);
    }

    proptest! {
        #[test]
        fn mix_invert_round_trip(a in 1e-3f64..1.0, b in 1.0f64..1e3, deg in 0.0f64..40.0) {
            let pair = QuadraturePair::from_linear(a, b).unwrap();
            let theta = deg.to_radians();
            let back = invert_phase_mix(phase_mix(pair, theta).unwrap(), theta).unwrap();
            prop_assert!(((back.squeezed.value() - a) / a).abs() < 1e-10 * (b / a).max(1.0));
            prop_assert!(((back.antisqueezed.value() - b) / b).abs() < 1e-10);
        }

        #[test]
        fn efficiency_round_trip(e in 0.5f64..=1.0, x in 0.05f64..0.95, omega in 0.0f64..0.2) {
            let g = generated_pair_raw(e, omega, x).unwrap();
            for side in [Side::Squeezed, Side::Antisqueezed, Side::Both] {
                let got = estimate_total_efficiency(g, x, omega, side).unwrap().estimate;
                prop_assert!(((got - e) / e).abs() < 1e-10);
            }
        }

        #[test]
        fn threshold_fit_is_scale_consistent(k in 0.01f64..100.0) {
            let base = fit_threshold(&synthetic_gains(180.0)).unwrap().estimate;
            let scaled: Vec<GainPoint> = synthetic_gains(180.0)
                .into_iter()
                .map(|p| GainPoint::new(p.pump_power * k, p.gain))
                .collect();
            let got = fit_threshold(&scaled).unwrap().estimate;
            prop_assert!(((got - k * base) / (k * base)).abs() < 1e-9);
        }

        #[test]
        fn collinear_loss_points_fit_exactly(l0 in 0.0f64..0.01, l1 in -0.002f64..0.01, n in 2usize..12) {
            prop_assume!(l0 + l1 >= 0.0);
            let pts: Vec<LossPoint> = (0..n).map(|i| {
                let x = i as f64 / n as f64;
                LossPoint { x, loss: l0 + l1 * x }
            }).collect();
            let fit = fit_loss_line(&pts).unwrap();
            prop_assert!(fit.residual_norm < 1e-16);
        }
    }
}
