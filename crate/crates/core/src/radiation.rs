//! Simulated radiation environment and count-rate detector.
//!
//! Sources are unshielded isotropic points. A source of strength `S`
//! contributes `S / (4 pi r^2)` counts/s at range `r`, with `r` clamped below at
//! `clamp_epsilon_m` so overflights stay finite. A constant background is added
//! on top.

use crate::geodesy::LocalEnu;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

/// The simulation random stream: ChaCha with 8 rounds, seeded from a u64.
///
/// ChaCha output is specified bit-for-bit, so a seed reproduces the same
/// stream on every platform.
pub type SimRng = ChaCha8Rng;

/// Builds the stream `stream` of the generator seeded with `seed`.
pub fn sim_rng(seed: u64, stream: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub const DEFAULT_CLAMP_EPSILON_M: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RadiationError {
    #[error("negative or non-finite count rate {0}")]
    NegativeRate(f64),
    #[error("integration time must be positive, got {0}")]
    NonPositiveDt(f64),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointSource {
    pub position: LocalEnu,
    /// counts * m^2 / s; the rate at 1 m is `strength_s / (4 pi)`.
    pub strength_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadiationScenario {
    pub sources: Vec<PointSource>,
    pub background_b: f64,
    pub clamp_epsilon_m: f64,
}

impl Default for RadiationScenario {
    fn default() -> Self {
        Self { sources: Vec::new(), background_b: 0.0, clamp_epsilon_m: DEFAULT_CLAMP_EPSILON_M }
    }
}

impl RadiationScenario {
    pub fn validate(&self) -> Result<(), RadiationError> {
        if !(self.background_b.is_finite() && self.background_b >= 0.0) {
            return Err(RadiationError::InvalidScenario("background must be >= 0".into()));
        }
        if !(self.clamp_epsilon_m.is_finite() && self.clamp_epsilon_m > 0.0) {
            return Err(RadiationError::InvalidScenario("clamp_epsilon must be > 0".into()));
        }
        for (i, s) in self.sources.iter().enumerate() {
            if !(s.strength_s.is_finite() && s.strength_s > 0.0) {
                return Err(RadiationError::InvalidScenario(format!("source {i}: strength must be > 0")));
            }
            if !s.position.is_finite() {
                return Err(RadiationError::InvalidScenario(format!("source {i}: position must be finite")));
            }
        }
        Ok(())
    }

    /// Rate contributed by one source at `p`, background excluded.
    pub fn source_rate(&self, source: &PointSource, p: &LocalEnu) -> f64 {
        let r = p.distance(&source.position).max(self.clamp_epsilon_m);
        source.strength_s / (4.0 * PI * r * r)
    }

    /// Expected count rate in counts/s at `p`.
    pub fn expected_rate(&self, p: &LocalEnu) -> f64 {
        self.background_b + self.sources.iter().map(|s| self.source_rate(s, p)).sum::<f64>()
    }
}

/// A geolocated detector reading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadiationMeasurement {
    pub timestamp_s: f64,
    pub position: LocalEnu,
    pub counts: u64,
    pub integration_dt_s: f64,
}

impl RadiationMeasurement {
    pub fn is_valid(&self) -> bool {
        self.timestamp_s.is_finite()
            && self.position.is_finite()
            && self.integration_dt_s.is_finite()
            && self.integration_dt_s > 0.0
    }
}

/// Draws a Poisson count with mean `rate * dt`.
pub fn sample_counts(rate: f64, dt: f64, rng: &mut SimRng) -> Result<u64, RadiationError> {
    if !(rate.is_finite() && rate >= 0.0) {
        return Err(RadiationError::NegativeRate(rate));
    }
    if !(dt.is_finite() && dt > 0.0) {
        return Err(RadiationError::NonPositiveDt(dt));
    }
    let mean = rate * dt;
    if mean == 0.0 {
        return Ok(0);
    }
    let poisson = Poisson::new(mean).map_err(|_| RadiationError::NegativeRate(rate))?;
    Ok(poisson.sample(rng) as u64)
}

/// Integrates the detector for `dt` seconds at `true_position`, tagging the
/// reading with the position the vehicle believes it is at.
pub fn measure(
    scenario: &RadiationScenario,
    true_position: &LocalEnu,
    reported_position: LocalEnu,
    timestamp_s: f64,
    dt: f64,
    rng: &mut SimRng,
) -> Result<RadiationMeasurement, RadiationError> {
    let counts = sample_counts(scenario.expected_rate(true_position), dt, rng)?;
    Ok(RadiationMeasurement { timestamp_s, position: reported_position, counts, integration_dt_s: dt })
}
