//! Forward model of a subthreshold OPO seen through a homodyne detector.
//!
//! The chain is: generated spectrum `R±` at normalized pump `x`, then
//! phase-jitter mixing, then the detector circuit-noise floor.

use std::f64::consts::{FRAC_PI_4, PI};

use crate::error::{Error, Result};
use crate::quadmath::{add_circuit_noise, CircuitNoiseFloor, NoiseLevel};

/// Vacuum light speed in m/s.
pub const SPEED_OF_LIGHT: f64 = 2.997_924_58e8;

/// Pump-dependent intracavity loss `L(x) = intercept + slope * x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossLine {
    intercept: f64,
    slope: f64,
}

impl LossLine {
    /// The line must stay inside `[0, 1)` over the whole subthreshold range `x ∈ [0, 1]`.
    pub fn new(intercept: f64, slope: f64) -> Result<Self> {
        if !intercept.is_finite() || !slope.is_finite() {
            return Err(Error::InvalidModel("loss line coefficients must be finite".into()));
        }
        let end = intercept + slope;
        if !((0.0..1.0).contains(&intercept) && (0.0..1.0).contains(&end)) {
            return Err(Error::InvalidModel(format!(
                "loss line {intercept} + {slope}·x leaves [0, 1) on x ∈ [0, 1]"
            )));
        }
        Ok(Self { intercept, slope })
    }

    pub fn intercept(&self) -> f64 {
        self.intercept
    }

    pub fn slope(&self) -> f64 {
        self.slope
    }
}

/// Evaluates the loss line at normalized pump power `x`.
pub fn intracavity_loss(line: &LossLine, x: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::domain(format!("normalized pump power must lie in [0, 1], got {x}")));
    }
    let loss = line.intercept + line.slope * x;
    if !(0.0..1.0).contains(&loss) {
        return Err(Error::InvalidModel(format!("loss {loss} at x = {x} is outside [0, 1)")));
    }
    Ok(loss)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossModel {
    Fixed(f64),
    Line(LossLine),
}

impl LossModel {
    pub fn fixed(loss: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&loss) {
            return Err(Error::InvalidModel(format!("intracavity loss must lie in [0, 1), got {loss}")));
        }
        Ok(LossModel::Fixed(loss))
    }

    pub fn at(&self, x: f64) -> Result<f64> {
        match self {
            LossModel::Fixed(l) => Ok(*l),
            LossModel::Line(line) => intracavity_loss(line, x),
        }
    }
}

/// OPO cavity parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OpoParams {
    transmittance: f64,
    round_trip_length_m: f64,
    loss: LossModel,
    threshold_w: Option<f64>,
}

impl OpoParams {
    pub fn new(
        transmittance: f64,
        round_trip_length_m: f64,
        loss: LossModel,
        threshold_w: Option<f64>,
    ) -> Result<Self> {
        if !(transmittance > 0.0 && transmittance < 1.0) {
            return Err(Error::invalid(format!("transmittance must lie in (0, 1), got {transmittance}")));
        }
        if !(round_trip_length_m > 0.0) || !round_trip_length_m.is_finite() {
            return Err(Error::invalid(format!(
                "round-trip length must be positive, got {round_trip_length_m}"
            )));
        }
        if let LossModel::Fixed(l) = loss {
            LossModel::fixed(l)?;
        }
        if let Some(p) = threshold_w {
            if !(p > 0.0) || !p.is_finite() {
                return Err(Error::invalid(format!("threshold must be positive, got {p}")));
            }
        }
        Ok(Self { transmittance, round_trip_length_m, loss, threshold_w })
    }

    pub fn transmittance(&self) -> f64 {
        self.transmittance
    }

    pub fn round_trip_length_m(&self) -> f64 {
        self.round_trip_length_m
    }

    pub fn loss_model(&self) -> LossModel {
        self.loss
    }

    pub fn threshold_w(&self) -> Option<f64> {
        self.threshold_w
    }

    pub fn with_loss(self, loss: LossModel) -> Result<Self> {
        Self::new(self.transmittance, self.round_trip_length_m, loss, self.threshold_w)
    }

    pub fn with_threshold_w(self, threshold_w: Option<f64>) -> Result<Self> {
        Self::new(self.transmittance, self.round_trip_length_m, self.loss, threshold_w)
    }

    pub fn loss_at(&self, x: f64) -> Result<f64> {
        self.loss.at(x)
    }
}

/// How `Ω = f/γ` is read: `Angular` multiplies the spectrum-analyzer
/// frequency by 2π before dividing by the cavity decay rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FreqConvention {
    #[default]
    Angular,
    Cyclic,
}

impl FreqConvention {
    pub fn name(&self) -> &'static str {
        match self {
            FreqConvention::Angular => "angular",
            FreqConvention::Cyclic => "cyclic",
        }
    }
}

impl std::str::FromStr for FreqConvention {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "angular" => Ok(FreqConvention::Angular),
            "cyclic" => Ok(FreqConvention::Cyclic),
            other => Err(Error::invalid(format!(
                "frequency convention must be `angular` or `cyclic`, got `{other}`"
            ))),
        }
    }
}

impl std::fmt::Display for FreqConvention {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Homodyne detection chain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionChain {
    eta: f64,
    xi: f64,
    zeta: f64,
    theta_rms: f64,
    circuit_floor: CircuitNoiseFloor,
    measurement_freq_hz: f64,
    convention: FreqConvention,
}

impl DetectionChain {
    /// `theta_rms` is in radians. A zero measurement frequency is accepted and
    /// gives `Ω = 0`.
    pub fn new(
        eta: f64,
        xi: f64,
        zeta: f64,
        theta_rms: f64,
        circuit_floor: CircuitNoiseFloor,
        measurement_freq_hz: f64,
        convention: FreqConvention,
    ) -> Result<Self> {
        for (name, v) in [("eta", eta), ("xi", xi), ("zeta", zeta)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::invalid(format!("{name} must lie in (0, 1], got {v}")));
            }
        }
        check_theta(theta_rms)?;
        if !(measurement_freq_hz >= 0.0) || !measurement_freq_hz.is_finite() {
            return Err(Error::invalid(format!(
                "measurement frequency must be non-negative, got {measurement_freq_hz}"
            )));
        }
        Ok(Self { eta, xi, zeta, theta_rms, circuit_floor, measurement_freq_hz, convention })
    }

    /// Unit efficiencies, no circuit noise and `Ω = 0`.
    pub fn ideal(theta_rms: f64) -> Result<Self> {
        Self::new(1.0, 1.0, 1.0, theta_rms, CircuitNoiseFloor::none(), 0.0, FreqConvention::Angular)
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn xi(&self) -> f64 {
        self.xi
    }

    pub fn zeta(&self) -> f64 {
        self.zeta
    }

    pub fn theta_rms(&self) -> f64 {
        self.theta_rms
    }

    pub fn theta_rms_deg(&self) -> f64 {
        self.theta_rms.to_degrees()
    }

    pub fn circuit_floor(&self) -> CircuitNoiseFloor {
        self.circuit_floor
    }

    pub fn measurement_freq_hz(&self) -> f64 {
        self.measurement_freq_hz
    }

    pub fn convention(&self) -> FreqConvention {
        self.convention
    }

    /// `η·ξ²·ζ`, the detection part of the total efficiency.
    pub fn detection_efficiency(&self) -> f64 {
        self.eta * self.xi * self.xi * self.zeta
    }

    pub fn with_theta_rms(mut self, theta_rms: f64) -> Result<Self> {
        check_theta(theta_rms)?;
        self.theta_rms = theta_rms;
        Ok(self)
    }

    pub fn with_theta_deg(self, theta_deg: f64) -> Result<Self> {
        self.with_theta_rms(theta_deg.to_radians())
    }

    pub fn with_floor(mut self, floor: CircuitNoiseFloor) -> Self {
        self.circuit_floor = floor;
        self
    }

    pub fn with_convention(mut self, convention: FreqConvention) -> Self {
        self.convention = convention;
        self
    }

    pub fn with_measurement_freq(self, hz: f64) -> Result<Self> {
        Self::new(self.eta, self.xi, self.zeta, self.theta_rms, self.circuit_floor, hz, self.convention)
    }
}

fn check_theta(theta_rms: f64) -> Result<()> {
    if !(0.0..FRAC_PI_4).contains(&theta_rms) {
        return Err(Error::invalid(format!(
            "phase jitter rms must lie in [0°, 45°), got {}°",
            theta_rms.to_degrees()
        )));
    }
    Ok(())
}

/// Squeezed and antisqueezed quadrature variances.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraturePair {
    pub squeezed: NoiseLevel,
    pub antisqueezed: NoiseLevel,
}

impl QuadraturePair {
    pub fn new(squeezed: NoiseLevel, antisqueezed: NoiseLevel) -> Result<Self> {
        if squeezed.value() > antisqueezed.value() {
            return Err(Error::InconsistentInputs(format!(
                "squeezed level {} exceeds antisqueezed level {}",
                squeezed.value(),
                antisqueezed.value()
            )));
        }
        Ok(Self { squeezed, antisqueezed })
    }

    pub fn from_linear(squeezed: f64, antisqueezed: f64) -> Result<Self> {
        Self::new(NoiseLevel::new(squeezed)?, NoiseLevel::new(antisqueezed)?)
    }

    pub fn from_db(squeezed_db: f64, antisqueezed_db: f64) -> Result<Self> {
        Self::new(NoiseLevel::from_db(squeezed_db)?, NoiseLevel::from_db(antisqueezed_db)?)
    }

    pub fn values(&self) -> (f64, f64) {
        (self.squeezed.value(), self.antisqueezed.value())
    }

    pub fn db(&self) -> (f64, f64) {
        (self.squeezed.db(), self.antisqueezed.db())
    }
}

fn check_subthreshold(x: f64) -> Result<()> {
    if x.is_nan() {
        return Err(Error::invalid("normalized pump power is NaN"));
    }
    if x < 0.0 {
        return Err(Error::domain(format!("normalized pump power must be ≥ 0, got {x}")));
    }
    if x >= 1.0 {
        return Err(Error::AboveThreshold(format!(
            "normalized pump power {x} is at or above the oscillation threshold"
        )));
    }
    Ok(())
}

/// `ρ = T / (T + L(x))`.
pub fn escape_efficiency(params: &OpoParams, x: f64) -> Result<f64> {
    let t = params.transmittance;
    Ok(t / (t + params.loss_at(x)?))
}

/// Cavity decay rate `γ = c (T + L(x)) / l`, in 1/s.
pub fn cavity_decay_rate(params: &OpoParams, x: f64) -> Result<f64> {
    Ok(SPEED_OF_LIGHT * (params.transmittance + params.loss_at(x)?) / params.round_trip_length_m)
}

/// `Ω = f/γ` (cyclic) or `2πf/γ` (angular).
pub fn normalized_frequency(params: &OpoParams, chain: &DetectionChain, x: f64) -> Result<f64> {
    let gamma = cavity_decay_rate(params, x)?;
    let f = match chain.convention {
        FreqConvention::Angular => 2.0 * PI * chain.measurement_freq_hz,
        FreqConvention::Cyclic => chain.measurement_freq_hz,
    };
    Ok(f / gamma)
}

/// Total efficiency `E = η ξ² ζ ρ(x)`.
pub fn total_efficiency(params: &OpoParams, chain: &DetectionChain, x: f64) -> Result<f64> {
    Ok(chain.detection_efficiency() * escape_efficiency(params, x)?)
}

/// Lorentzian gain factors `(4x/((1+x)²+4Ω²), 4x/((1−x)²+4Ω²))` multiplying `E`
/// on the squeezed and antisqueezed sides.
pub fn spectral_factors(x: f64, omega: f64) -> (f64, f64) {
    let w = 4.0 * omega * omega;
    (4.0 * x / ((1.0 + x).powi(2) + w), 4.0 * x / ((1.0 - x).powi(2) + w))
}

/// Generated levels for a given total efficiency and normalized frequency:
/// `R± = 1 ± E·4x/((1∓x)² + 4Ω²)`.
pub fn generated_pair_raw(efficiency: f64, omega: f64, x: f64) -> Result<QuadraturePair> {
    check_subthreshold(x)?;
    if !(efficiency > 0.0 && efficiency <= 1.0) {
        return Err(Error::invalid(format!("total efficiency must lie in (0, 1], got {efficiency}")));
    }
    if !(omega >= 0.0) || !omega.is_finite() {
        return Err(Error::invalid(format!("normalized frequency must be ≥ 0, got {omega}")));
    }
    let (minus, plus) = spectral_factors(x, omega);
    QuadraturePair::from_linear(1.0 - efficiency * minus, 1.0 + efficiency * plus)
}

/// Generated (pre-jitter) squeezing and antisqueezing levels.
pub fn generated_pair(params: &OpoParams, chain: &DetectionChain, x: f64) -> Result<QuadraturePair> {
    check_subthreshold(x)?;
    let e = total_efficiency(params, chain, x)?;
    let omega = normalized_frequency(params, chain, x)?;
    generated_pair_raw(e, omega, x)
}

/// Mixes the quadratures with weights `cos²θ̃` and `sin²θ̃`.
pub fn phase_mix(generated: QuadraturePair, theta_rms: f64) -> Result<QuadraturePair> {
    if !(0.0..=FRAC_PI_4).contains(&theta_rms) {
        return Err(Error::domain(format!(
            "phase jitter rms must lie in [0°, 45°], got {}°",
            theta_rms.to_degrees()
        )));
    }
    let (c, s) = (theta_rms.cos().powi(2), theta_rms.sin().powi(2));
    let (minus, plus) = generated.values();
    QuadraturePair::new(
        NoiseLevel::new(minus * c + plus * s)?,
        NoiseLevel::new(plus * c + minus * s)?,
    )
}

/// Every intermediate of the forward chain at one pump power.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub x: f64,
    pub loss: f64,
    pub escape_efficiency: f64,
    pub decay_rate: f64,
    pub omega: f64,
    pub efficiency: f64,
    pub generated: QuadraturePair,
    pub mixed: QuadraturePair,
    pub observed: QuadraturePair,
}

pub fn predict(params: &OpoParams, chain: &DetectionChain, x: f64) -> Result<Prediction> {
    check_subthreshold(x)?;
    let loss = params.loss_at(x)?;
    let escape = escape_efficiency(params, x)?;
    let decay_rate = cavity_decay_rate(params, x)?;
    let omega = normalized_frequency(params, chain, x)?;
    let efficiency = chain.detection_efficiency() * escape;
    let generated = generated_pair_raw(efficiency, omega, x)?;
    let mixed = phase_mix(generated, chain.theta_rms)?;
    let floor = chain.circuit_floor;
    let observed = QuadraturePair::new(
        add_circuit_noise(mixed.squeezed, floor)?,
        add_circuit_noise(mixed.antisqueezed, floor)?,
    )?;
    Ok(Prediction {
        x,
        loss,
        escape_efficiency: escape,
        decay_rate,
        omega,
        efficiency,
        generated,
        mixed,
        observed,
    })
}

/// Levels as a spectrum analyzer normalized to shot noise would read them.
pub fn predict_observed(params: &OpoParams, chain: &DetectionChain, x: f64) -> Result<QuadraturePair> {
    predict(params, chain, x).map(|p| p.observed)
}

/// `x = √(P / P_th)`; powers in any common unit.
pub fn pump_power_to_x(power: f64, threshold: f64) -> Result<f64> {
    if !(threshold > 0.0) || !threshold.is_finite() {
        return Err(Error::invalid(format!("threshold must be positive, got {threshold}")));
    }
    if !(power >= 0.0) {
        return Err(Error::domain(format!("pump power must be ≥ 0, got {power}")));
    }
    if power >= threshold {
        return Err(Error::AboveThreshold(format!(
            "pump power {power} is at or above the threshold {threshold}"
        )));
    }
    Ok((power / threshold).sqrt())
}

/// `x = 1 − 1/√G` from the amplification factor `G = 1/(1 − x)²`.
pub fn gain_to_x(gain: f64) -> Result<f64> {
    if !(gain >= 1.0) || !gain.is_finite() {
        return Err(Error::domain(format!("parametric gain must be ≥ 1, got {gain}")));
    }
    Ok(1.0 - 1.0 / gain.sqrt())
}
