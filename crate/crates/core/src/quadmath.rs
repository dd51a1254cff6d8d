//! Noise-power algebra on shot-normalized quadrature variances.
//!
//! Every level in this crate is a linear variance normalized so that shot
//! noise (the vacuum) is exactly 1.0. Decibels appear only at I/O edges via
//! [`db_to_linear`] and [`linear_to_db`]; both use the power-ratio
//! convention `10 * log10(ratio)`.

use crate::error::{Error, Result};

/// Convert a power level in dB to a shot-normalized linear variance.
pub fn db_to_linear(level_db: f64) -> Result<f64> {
    if !level_db.is_finite() {
        return Err(Error::invalid(format!("dB level must be finite, got {level_db}")));
    }
    Ok(10f64.powf(level_db / 10.0))
}

/// Convert a shot-normalized linear variance to dB.
pub fn linear_to_db(ratio: f64) -> Result<f64> {
    if !(ratio > 0.0) || !ratio.is_finite() {
        return Err(Error::domain(format!(
            "variance ratio must be positive and finite, got {ratio}"
        )));
    }
    Ok(10.0 * ratio.log10())
}

/// A shot-normalized variance with an optional 1-sigma absolute uncertainty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseLevel {
    value: f64,
    sigma: Option<f64>,
}

impl NoiseLevel {
    pub fn new(value: f64) -> Result<Self> {
        Self::with_sigma(value, None)
    }

    pub fn with_sigma(value: f64, sigma: Option<f64>) -> Result<Self> {
        if !(value > 0.0) || !value.is_finite() {
            return Err(Error::invalid(format!(
                "noise level must be positive and finite, got {value}"
            )));
        }
        if let Some(s) = sigma {
            if !(s >= 0.0) || !s.is_finite() {
                return Err(Error::invalid(format!(
                    "noise level sigma must be non-negative and finite, got {s}"
                )));
            }
        }
        Ok(Self { value, sigma })
    }

    pub fn from_db(level_db: f64) -> Result<Self> {
        Self::new(db_to_linear(level_db)?)
    }

    /// Builds a level from a dB reading with a dB uncertainty. The sigma is
    /// mapped to linear units to first order: `sigma_lin = v * ln(10)/10 * sigma_db`.
    pub fn from_db_with_sigma(level_db: f64, sigma_db: f64) -> Result<Self> {
        let value = db_to_linear(level_db)?;
        if !(sigma_db >= 0.0) || !sigma_db.is_finite() {
            return Err(Error::invalid(format!(
                "dB sigma must be non-negative and finite, got {sigma_db}"
            )));
        }
        Self::with_sigma(value, Some(value * std::f64::consts::LN_10 / 10.0 * sigma_db))
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn sigma(&self) -> Option<f64> {
        self.sigma
    }

    pub fn db(&self) -> f64 {
        // value is validated positive and finite
        10.0 * self.value.log10()
    }

    /// Sigma expressed in dB, first order.
    pub fn sigma_db(&self) -> Option<f64> {
        self.sigma
            .map(|s| s / self.value * 10.0 / std::f64::consts::LN_10)
    }
}

/// Detector electronic (dark) noise relative to shot noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CircuitNoiseFloor {
    level_db: f64,
}

impl CircuitNoiseFloor {
    /// `level_db` must be strictly negative; `-inf` means no floor.
    pub fn new(level_db: f64) -> Result<Self> {
        if level_db.is_nan() || !(level_db < 0.0) {
            return Err(Error::invalid(format!(
                "circuit noise floor must lie below shot noise (< 0 dB), got {level_db}"
            )));
        }
        Ok(Self { level_db })
    }

    /// A floor of zero power.
    pub fn none() -> Self {
        Self { level_db: f64::NEG_INFINITY }
    }

    pub fn level_db(&self) -> f64 {
        self.level_db
    }

    /// Floor power as a fraction of shot noise; 0.0 for [`CircuitNoiseFloor::none`].
    pub fn linear(&self) -> f64 {
        10f64.powf(self.level_db / 10.0)
    }
}

/// Removes the detector floor from an observed level.
///
/// Both the signal trace and the shot-noise reference contain the floor, so
/// the true level is `(v - n_c) / (1 - n_c)`.
pub fn subtract_circuit_noise(observed: NoiseLevel, floor: CircuitNoiseFloor) -> Result<NoiseLevel> {
    let nc = floor.linear();
    if observed.value <= nc {
        return Err(Error::NonPhysical(format!(
            "observed level {:.4} dB is at or below the circuit noise floor {:.4} dB",
            observed.db(),
            floor.level_db
        )));
    }
    let scale = 1.0 - nc;
    NoiseLevel::with_sigma((observed.value - nc) / scale, observed.sigma.map(|s| s / scale))
}

/// Forward direction of [`subtract_circuit_noise`]: `v * (1 - n_c) + n_c`.
pub fn add_circuit_noise(true_level: NoiseLevel, floor: CircuitNoiseFloor) -> Result<NoiseLevel> {
    let nc = floor.linear();
    let scale = 1.0 - nc;
    NoiseLevel::with_sigma(true_level.value * scale + nc, true_level.sigma.map(|s| s * scale))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn floor_reference() -> CircuitNoiseFloor {
        CircuitNoiseFloor::new(-21.7).unwrap()
    }

    #[test]
    fn db_conversions() {
        assert_eq!(db_to_linear(0.0).unwrap(), 1.0);
        // 10^(-0.901), 10^(1.512) evaluated with mpmath
        assert!((db_to_linear(-9.01).unwrap() - 0.125_602_996_369_487_5).abs() < 1e-14);
        assert!((db_to_linear(15.12).unwrap() - 32.508_729_738_543_44).abs() < 1e-11);
        assert_eq!(linear_to_db(1.0).unwrap(), 0.0);
        assert!((linear_to_db(0.5).unwrap() + 3.010_299_956_639_812).abs() < 1e-12);
        assert!((linear_to_db(32.75).unwrap() - 15.152_113_043_278_02).abs() < 1e-12);
    }

    #[test]
    fn db_conversion_errors() {
        assert!(matches!(db_to_linear(f64::NAN), Err(Error::InvalidArgument(_))));
        assert!(matches!(db_to_linear(f64::INFINITY), Err(Error::InvalidArgument(_))));
        assert!(matches!(linear_to_db(0.0), Err(Error::Domain(_))));
        assert!(matches!(linear_to_db(-1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn circuit_noise_reproduces_corrected_levels() {
        let sq = subtract_circuit_noise(NoiseLevel::from_db(-9.01).unwrap(), floor_reference()).unwrap();
        let anti = subtract_circuit_noise(NoiseLevel::from_db(15.12).unwrap(), floor_reference()).unwrap();
        assert!((sq.db() + 9.22).abs() < 0.005, "{}", sq.db());
        assert!((anti.db() - 15.15).abs() < 0.005, "{}", anti.db());
    }

    #[test]
    fn zero_floor_is_identity() {
        let v = NoiseLevel::from_db(-7.3).unwrap();
        let out = subtract_circuit_noise(v, CircuitNoiseFloor::none()).unwrap();
        assert_eq!(out.value(), v.value());
        let out = add_circuit_noise(v, CircuitNoiseFloor::none()).unwrap();
        assert_eq!(out.value(), v.value());
    }

    #[test]
    fn add_circuit_noise_examples() {
        let obs = add_circuit_noise(NoiseLevel::from_db(-9.22).unwrap(), floor_reference()).unwrap();
        assert!((obs.db() + 9.01).abs() < 0.01, "{}", obs.db());
        let shot = add_circuit_noise(NoiseLevel::new(1.0).unwrap(), floor_reference()).unwrap();
        assert!((shot.value() - 1.0).abs() < 1e-15);
        // 0.001 * (1 - n_c) + n_c, n_c = 10^-2.17
        let deep = add_circuit_noise(NoiseLevel::from_db(-30.0).unwrap(), floor_reference()).unwrap();
        assert!((deep.value() - 0.007_754_069).abs() < 1e-8, "{}", deep.value());
        assert!((deep.db() + 21.1047).abs() < 1e-3, "{}", deep.db());
    }

    #[test]
    fn at_or_below_floor_is_rejected() {
        let floor = floor_reference();
        let at = NoiseLevel::new(floor.linear()).unwrap();
        assert!(matches!(subtract_circuit_noise(at, floor), Err(Error::NonPhysical(_))));
        let below = NoiseLevel::from_db(-25.0).unwrap();
        assert!(matches!(subtract_circuit_noise(below, floor), Err(Error::NonPhysical(_))));
    }

    #[test]
    fn floor_must_be_negative() {
        assert!(CircuitNoiseFloor::new(0.0).is_err());
        assert!(CircuitNoiseFloor::new(3.0).is_err());
        assert!(CircuitNoiseFloor::new(f64::NAN).is_err());
        assert_eq!(CircuitNoiseFloor::none().linear(), 0.0);
    }

    #[test]
    fn sigma_scales_with_floor_correction() {
        let v = NoiseLevel::from_db_with_sigma(-9.01, 0.14).unwrap();
        assert!((v.sigma_db().unwrap() - 0.14).abs() < 1e-12);
        let c = subtract_circuit_noise(v, floor_reference()).unwrap();
        assert!(c.sigma().unwrap() > v.sigma().unwrap());
    }

    proptest! {
        #[test]
        fn db_round_trip(d in -60.0f64..60.0) {
            let back = linear_to_db(db_to_linear(d).unwrap()).unwrap();
            prop_assert!((back - d).abs() < 1e-12);
        }

        #[test]
        fn floor_round_trip(floor_db in -40.0f64..-5.0, frac in 0.0f64..1.0, span in 0.0f64..4.0) {
            let floor = CircuitNoiseFloor::new(floor_db).unwrap();
            let nc = floor.linear();
            let v = nc * (1.0 + 1e-6) + frac * 10f64.powf(span);
            let level = NoiseLevel::new(v).unwrap();
            let back = add_circuit_noise(subtract_circuit_noise(level, floor).unwrap(), floor).unwrap();
            prop_assert!(((back.value() - v) / v).abs() < 1e-12);
        }

        #[test]
        fn subtraction_moves_away_from_shot_noise(floor_db in -40.0f64..-5.0, d in -20.0f64..20.0) {
            let floor = CircuitNoiseFloor::new(floor_db).unwrap();
            let v = db_to_linear(d).unwrap();
            prop_assume!(v > floor.linear());
            let out = subtract_circuit_noise(NoiseLevel::new(v).unwrap(), floor).unwrap().value();
            if v < 1.0 {
                prop_assert!(out < v);
            } else if v > 1.0 {
                prop_assert!(out > v);
            }
            // monotone
            let v2 = v * 1.01;
            let out2 = subtract_circuit_noise(NoiseLevel::new(v2).unwrap(), floor).unwrap().value();
            prop_assert!(out2 > out);
        }

        #[test]
        fn added_floor_bounds_level(floor_db in -40.0f64..-1.0, d in -80.0f64..40.0) {
            let floor = CircuitNoiseFloor::new(floor_db).unwrap();
            let out = add_circuit_noise(NoiseLevel::from_db(d).unwrap(), floor).unwrap();
            prop_assert!(out.value() >= floor.linear());
        }
    }
}
