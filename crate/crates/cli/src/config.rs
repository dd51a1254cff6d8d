//! Flat `key = value` experiment configuration.
//!
//! One entry per line, `#` starts a comment, keys are case-sensitive.
//! Powers are in mW, lengths in m, frequencies in Hz, angles in degrees.

use std::fmt::Write as _;

use sqbudget_core::estimate::fit_threshold;
use sqbudget_core::{
    CircuitNoiseFloor, DetectionChain, FreqConvention, GainPoint, LossLine, LossModel, OpoParams,
};

use crate::error::{CliError, CliResult};

pub const KEYS: [&str; 15] = [
    "transmittance",
    "round_trip_length_m",
    "loss_fixed",
    "loss_intercept",
    "loss_slope",
    "threshold_mw",
    "gain_at_power",
    "eta",
    "xi",
    "zeta",
    "circuit_noise_db",
    "phase_rms_deg",
    "measurement_freq_hz",
    "freq_convention",
    "label",
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossSpec {
    Fixed(f64),
    Line { intercept: f64, slope: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThresholdSpec {
    Unset,
    Mw(f64),
    /// Gain `gain` measured at `power_mw`; written `gain@power_mw`.
    GainAtPower { gain: f64, power_mw: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub label: Option<String>,
    pub transmittance: f64,
    pub round_trip_length_m: f64,
    pub loss: LossSpec,
    pub threshold: ThresholdSpec,
    pub eta: f64,
    pub xi: f64,
    pub zeta: f64,
    pub circuit_noise_db: Option<f64>,
    pub phase_rms_deg: f64,
    pub measurement_freq_hz: f64,
    pub freq_convention: FreqConvention,
}

/// Model objects built from a validated configuration.
#[derive(Debug, Clone, Copy)]
pub struct Resolved {
    pub params: OpoParams,
    pub chain: DetectionChain,
    pub threshold_mw: Option<f64>,
}

fn parse_f64(path: &str, line: usize, key: &str, value: &str) -> CliResult<f64> {
    value.parse::<f64>().map_err(|_| CliError::Parse {
        path: path.to_string(),
        line,
        msg: format!("key `{key}`: `{value}` is not a number"),
    })
}

impl ExperimentConfig {
    pub fn parse(text: &str, path: &str) -> CliResult<Self> {
        let mut entries: Vec<(&str, &str, usize)> = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::Parse {
                    path: path.to_string(),
                    line: line_no,
                    msg: format!("expected `key = value`, got `{line}`"),
                });
            };
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.contains(&key) {
                return Err(CliError::Parse {
                    path: path.to_string(),
                    line: line_no,
                    msg: format!("unknown key `{key}`"),
                });
            }
            if entries.iter().any(|(k, _, _)| *k == key) {
                return Err(CliError::Parse {
                    path: path.to_string(),
                    line: line_no,
                    msg: format!("duplicate key `{key}`"),
                });
            }
            entries.push((key, value, line_no));
        }

        let get = |key: &str| entries.iter().find(|(k, _, _)| *k == key).map(|(_, v, l)| (*v, *l));
        let number = |key: &str| -> CliResult<Option<f64>> {
            get(key).map(|(v, l)| parse_f64(path, l, key, v)).transpose()
        };
        let required = |key: &str| -> CliResult<f64> {
            number(key)?.ok_or_else(|| CliError::key(key, "missing required key"))
        };

        let loss = match (number("loss_fixed")?, number("loss_intercept")?, number("loss_slope")?) {
            (Some(l), None, None) => LossSpec::Fixed(l),
            (None, Some(intercept), Some(slope)) => LossSpec::Line { intercept, slope },
            (None, None, None) => {
                return Err(CliError::key("loss_fixed", "provide loss_fixed or loss_intercept + loss_slope"))
            }
            (Some(_), _, _) => {
                return Err(CliError::key("loss_fixed", "loss_fixed conflicts with loss_intercept/loss_slope"))
            }
            (None, Some(_), None) => return Err(CliError::key("loss_slope", "loss_intercept needs loss_slope")),
            (None, None, Some(_)) => return Err(CliError::key("loss_intercept", "loss_slope needs loss_intercept")),
        };

        let threshold = match (number("threshold_mw")?, get("gain_at_power")) {
            (Some(_), Some(_)) => {
                return Err(CliError::key("gain_at_power", "give either threshold_mw or gain_at_power, not both"))
            }
            (Some(p), None) => ThresholdSpec::Mw(p),
            (None, Some((v, l))) => {
                let Some((g, p)) = v.split_once('@') else {
                    return Err(CliError::Parse {
                        path: path.to_string(),
                        line: l,
                        msg: format!("key `gain_at_power`: expected `<gain>@<power_mw>`, got `{v}`"),
                    });
                };
                ThresholdSpec::GainAtPower {
                    gain: parse_f64(path, l, "gain_at_power", g.trim())?,
                    power_mw: parse_f64(path, l, "gain_at_power", p.trim())?,
                }
            }
            (None, None) => ThresholdSpec::Unset,
        };

        let freq_convention = match get("freq_convention") {
            Some((v, _)) => v.parse().map_err(|e| CliError::key("freq_convention", e))?,
            None => FreqConvention::default(),
        };

        let cfg = ExperimentConfig {
            label: get("label").map(|(v, _)| v.to_string()),
            transmittance: required("transmittance")?,
            round_trip_length_m: required("round_trip_length_m")?,
            loss,
            threshold,
            eta: required("eta")?,
            xi: required("xi")?,
            zeta: required("zeta")?,
            circuit_noise_db: number("circuit_noise_db")?,
            phase_rms_deg: required("phase_rms_deg")?,
            measurement_freq_hz: required("measurement_freq_hz")?,
            freq_convention,
        };
        cfg.resolve()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| CliError::Io { path: path.to_path_buf(), source })?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Validates every field against the model types, naming the offending key.
    pub fn resolve(&self) -> CliResult<Resolved> {
        let loss = match self.loss {
            LossSpec::Fixed(l) => LossModel::fixed(l).map_err(|e| CliError::key("loss_fixed", e))?,
            LossSpec::Line { intercept, slope } => LossModel::Line(
                LossLine::new(intercept, slope).map_err(|e| CliError::key("loss_intercept", e))?,
            ),
        };
        let threshold_mw = match self.threshold {
            ThresholdSpec::Unset => None,
            ThresholdSpec::Mw(p) => {
                if !(p > 0.0) || !p.is_finite() {
                    return Err(CliError::key("threshold_mw", format!("must be positive, got {p}")));
                }
                Some(p)
            }
            ThresholdSpec::GainAtPower { gain, power_mw } => {
                let fit = fit_threshold(&[GainPoint::new(power_mw, gain)])
                    .map_err(|e| CliError::key("gain_at_power", e))?;
                Some(fit.estimate)
            }
        };
        if !(self.transmittance > 0.0 && self.transmittance < 1.0) {
            return Err(CliError::key("transmittance", format!("must lie in (0, 1), got {}", self.transmittance)));
        }
        if !(self.round_trip_length_m > 0.0) || !self.round_trip_length_m.is_finite() {
            return Err(CliError::key(
                "round_trip_length_m",
                format!("must be positive, got {}", self.round_trip_length_m),
            ));
        }
        let params = OpoParams::new(self.transmittance, self.round_trip_length_m, loss, threshold_mw.map(|p| p * 1e-3))
            .map_err(|e| CliError::key("threshold_mw", e))?;

        for (key, v) in [("eta", self.eta), ("xi", self.xi), ("zeta", self.zeta)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(CliError::key(key, format!("must lie in (0, 1], got {v}")));
            }
        }
        if !(0.0..45.0).contains(&self.phase_rms_deg) {
            return Err(CliError::key("phase_rms_deg", format!("must lie in [0, 45), got {}", self.phase_rms_deg)));
        }
        if !(self.measurement_freq_hz >= 0.0) || !self.measurement_freq_hz.is_finite() {
            return Err(CliError::key(
                "measurement_freq_hz",
                format!("must be non-negative, got {}", self.measurement_freq_hz),
            ));
        }
        let floor = match self.circuit_noise_db {
            None => CircuitNoiseFloor::none(),
            Some(db) if db == f64::NEG_INFINITY => CircuitNoiseFloor::none(),
            Some(db) => CircuitNoiseFloor::new(db).map_err(|e| CliError::key("circuit_noise_db", e))?,
        };
        let chain = DetectionChain::new(
            self.eta,
            self.xi,
            self.zeta,
            self.phase_rms_deg.to_radians(),
            floor,
            self.measurement_freq_hz,
            self.freq_convention,
        )
        .map_err(|e| CliError::key("phase_rms_deg", e))?;
        Ok(Resolved { params, chain, threshold_mw })
    }

    /// Serializes to the same `key = value` format; [`ExperimentConfig::parse`]
    /// reads it back to an identical record.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        if let Some(label) = &self.label {
            put("label", label.clone());
        }
        put("transmittance", self.transmittance.to_string());
        put("round_trip_length_m", self.round_trip_length_m.to_string());
        match self.loss {
            LossSpec::Fixed(l) => put("loss_fixed", l.to_string()),
            LossSpec::Line { intercept, slope } => {
                put("loss_intercept", intercept.to_string());
                put("loss_slope", slope.to_string());
            }
        }
        match self.threshold {
            ThresholdSpec::Unset => {}
            ThresholdSpec::Mw(p) => put("threshold_mw", p.to_string()),
            ThresholdSpec::GainAtPower { gain, power_mw } => put("gain_at_power", format!("{gain}@{power_mw}")),
        }
        put("eta", self.eta.to_string());
        put("xi", self.xi.to_string());
        put("zeta", self.zeta.to_string());
        if let Some(db) = self.circuit_noise_db {
            put("circuit_noise_db", db.to_string());
        }
        put("phase_rms_deg", self.phase_rms_deg.to_string());
        put("measurement_freq_hz", self.measurement_freq_hz.to_string());
        put("freq_convention", self.freq_convention.to_string());
        out
    }
}
