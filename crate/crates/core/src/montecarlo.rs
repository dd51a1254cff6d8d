//! Direct averaging of the instantaneous quadrature variance over a sampled
//! phase-jitter distribution, and closed-form moments to compare against.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimate::Welford;
use crate::opomodel::QuadraturePair;
use crate::quadmath::linear_to_db;

/// Samples drawn from one RNG stream.
pub const BATCH_SIZE: usize = 1 << 16;

/// Recorded in output metadata so runs can be reproduced elsewhere.
pub const RNG_ALGORITHM: &str = "ChaCha8 (rand_chacha), seed_from_u64(seed), stream = batch index, 65536 samples per batch";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum JitterDistribution {
    #[default]
    Gaussian,
    /// Uniform on `[−√3·rms, +√3·rms]`.
    Uniform,
}

impl JitterDistribution {
    pub fn name(&self) -> &'static str {
        match self {
            JitterDistribution::Gaussian => "gaussian",
            JitterDistribution::Uniform => "uniform",
        }
    }
}

impl std::str::FromStr for JitterDistribution {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(JitterDistribution::Gaussian),
            "uniform" => Ok(JitterDistribution::Uniform),
            other => Err(Error::invalid(format!("unknown jitter distribution `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JitterSpec {
    distribution: JitterDistribution,
    rms: f64,
    n_samples: usize,
    seed: u64,
}

impl JitterSpec {
    pub fn new(distribution: JitterDistribution, rms: f64, n_samples: usize, seed: u64) -> Result<Self> {
        if !(rms >= 0.0) || !rms.is_finite() {
            return Err(Error::invalid(format!("jitter rms must be ≥ 0, got {rms}")));
        }
        if n_samples < 1000 {
            return Err(Error::invalid(format!("need at least 1000 jitter samples, got {n_samples}")));
        }
        Ok(Self { distribution, rms, n_samples, seed })
    }

    pub fn distribution(&self) -> JitterDistribution {
        self.distribution
    }

    pub fn rms(&self) -> f64 {
        self.rms
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McPair {
    pub squeezed: McEstimate,
    pub antisqueezed: McEstimate,
    pub n_samples: usize,
}

fn draw(rng: &mut ChaCha8Rng, dist: JitterDistribution, rms: f64) -> f64 {
    if rms == 0.0 {
        return 0.0;
    }
    match dist {
        JitterDistribution::Gaussian => {
            let z: f64 = StandardNormal.sample(rng);
            rms * z
        }
        JitterDistribution::Uniform => {
            let half = 3f64.sqrt() * rms;
            rng.random_range(-half..half)
        }
    }
}

/// Monte Carlo mean of `R−cos²θ + R+sin²θ` (and its mirror) over the jitter
/// distribution, with standard errors of the mean.
pub fn mc_mixed_pair(generated: QuadraturePair, spec: &JitterSpec) -> McPair {
    let (minus, plus) = generated.values();
    let n = spec.n_samples;
    let n_batches = n.div_ceil(BATCH_SIZE);
    let partials: Vec<(Welford, Welford)> = (0..n_batches)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(b as u64);
            let count = BATCH_SIZE.min(n - b * BATCH_SIZE);
            let (mut sq, mut anti) = (Welford::default(), Welford::default());
            for _ in 0..count {
                let theta = draw(&mut rng, spec.distribution, spec.rms);
                let (s, c) = theta.sin_cos();
                let (c2, s2) = (c * c, s * s);
                sq.push(minus * c2 + plus * s2);
                anti.push(plus * c2 + minus * s2);
            }
            (sq, anti)
        })
        .collect();

    let (mut sq, mut anti) = (Welford::default(), Welford::default());
    for (a, b) in &partials {
        sq.merge(a);
        anti.merge(b);
    }
    let se = |w: &Welford| (w.variance() / w.count as f64).sqrt();
    McPair {
        squeezed: McEstimate { mean: sq.mean, std_error: se(&sq) },
        antisqueezed: McEstimate { mean: anti.mean, std_error: se(&anti) },
        n_samples: n,
    }
}

/// `E[cos²θ]` for a zero-mean jitter with the given rms (radians).
pub fn expected_cos2(distribution: JitterDistribution, rms: f64) -> f64 {
    match distribution {
        JitterDistribution::Gaussian => 0.5 * (1.0 + (-2.0 * rms * rms).exp()),
        JitterDistribution::Uniform => {
            let z = 2.0 * 3f64.sqrt() * rms;
            let sinc = if z == 0.0 { 1.0 } else { z.sin() / z };
            0.5 * (1.0 + sinc)
        }
    }
}

/// Exact expectation of the mixed pair under the jitter distribution.
pub fn expected_mixed_pair(
    generated: QuadraturePair,
    rms: f64,
    distribution: JitterDistribution,
) -> (f64, f64) {
    let c2 = expected_cos2(distribution, rms);
    let s2 = 1.0 - c2;
    let (minus, plus) = generated.values();
    (minus * c2 + plus * s2, plus * c2 + minus * s2)
}

/// Squeezed-slot difference, in dB, between the distribution average and the
/// `cos²(θ̃)` small-jitter formula. Negative when averaging contaminates less.
pub fn approximation_gap(
    generated: QuadraturePair,
    theta_rms: f64,
    distribution: JitterDistribution,
) -> Result<f64> {
    if !(0.0..=20f64.to_radians()).contains(&theta_rms) {
        return Err(Error::domain(format!(
            "approximation gap is defined for θ̃ ∈ [0°, 20°], got {}°",
            theta_rms.to_degrees()
        )));
    }
    let (minus, plus) = generated.values();
    let literal = minus * theta_rms.cos().powi(2) + plus * theta_rms.sin().powi(2);
    let averaged = expected_mixed_pair(generated, theta_rms, distribution).0;
    Ok(linear_to_db(averaged)? - linear_to_db(literal)?)
}
