//! Loss and phase-noise budget models for continuous-wave squeezed light
//! from a subthreshold optical parametric oscillator.
//!
//! - [`quadmath`]: dB conversions and detector circuit-noise correction.
//! - [`opomodel`]: forward prediction from cavity and detection parameters.
//! - [`estimate`]: inversions, threshold and loss-line fits, resampled error bars.
//! - [`optimize`]: optimal pump power, pump sweeps and best-squeezing surfaces.
//! - [`montecarlo`]: sampled phase-jitter averages against the closed-form mixing.

// `!(v >= 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod estimate;
pub mod montecarlo;
pub mod opomodel;
pub mod optimize;
pub mod quadmath;

pub use error::{Error, Result};
pub use estimate::{FitResult, GainPoint, LossLineFit, LossPoint, Pipeline, Side, UncertainInput};
pub use montecarlo::{JitterDistribution, JitterSpec, McEstimate, McPair};
pub use opomodel::{DetectionChain, FreqConvention, LossLine, LossModel, OpoParams, Prediction, QuadraturePair};
pub use optimize::{Axis, LossMode, Optimum, OptimumReport, OptimizerSettings, SweepCell, SweepTable, Target};
pub use quadmath::{CircuitNoiseFloor, NoiseLevel};
