//! Kinematic sUAS model.
//!
//! The vehicle is a point mass that steers its velocity toward a braking
//! profile aimed at the target: desired speed is
//! `min(cruise, sqrt(2 * a_max * d), d / dt)`, the velocity change per tick is
//! clamped to `a_max * dt`, the result is clamped to `max_speed`, and position
//! is integrated with explicit Euler.

use crate::geodesy::{GeoOrigin, GeodesyError, GeodeticCoordinate, LocalEnu};
use crate::radiation::SimRng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FlightError {
    #[error("time step must lie in (0, 1] s, got {0}")]
    NonPositiveDt(f64),
    #[error("invalid drone parameter `{field}`: {reason}")]
    InvalidParams { field: &'static str, reason: &'static str },
    #[error(transparent)]
    Geodesy(#[from] GeodesyError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DroneParams {
    pub max_speed_mps: f64,
    pub max_accel_mps2: f64,
    pub arrival_radius_m: f64,
    pub battery_drain_pct_per_s: f64,
    pub rtk_noise_sigma_m: f64,
    pub start_position: LocalEnu,
}

impl Default for DroneParams {
    fn default() -> Self {
        Self {
            max_speed_mps: 5.0,
            max_accel_mps2: 2.5,
            arrival_radius_m: 1.0,
            battery_drain_pct_per_s: 0.05,
            rtk_noise_sigma_m: 0.02,
            start_position: LocalEnu::ZERO,
        }
    }
}

impl DroneParams {
    pub fn validate(&self) -> Result<(), FlightError> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.max_speed_mps) {
            return Err(FlightError::InvalidParams { field: "max_speed_mps", reason: "must be > 0" });
        }
        if !positive(self.max_accel_mps2) {
            return Err(FlightError::InvalidParams { field: "max_accel_mps2", reason: "must be > 0" });
        }
        if !positive(self.arrival_radius_m) {
            return Err(FlightError::InvalidParams { field: "arrival_radius_m", reason: "must be > 0" });
        }
        if !positive(self.battery_drain_pct_per_s) {
            return Err(FlightError::InvalidParams { field: "battery_drain_pct_per_s", reason: "must be > 0" });
        }
        if !(self.rtk_noise_sigma_m.is_finite() && self.rtk_noise_sigma_m >= 0.0) {
            return Err(FlightError::InvalidParams { field: "rtk_noise_sigma_m", reason: "must be >= 0" });
        }
        if self.start_position.validate().is_err() {
            return Err(FlightError::InvalidParams { field: "start_position", reason: "must be finite and in range" });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum GpsQuality {
    RtkFixed,
    RtkFloat,
    GpsOnly,
    None,
}

impl GpsQuality {
    pub fn as_str(self) -> &'static str {
        match self {
            GpsQuality::RtkFixed => "RTK_FIXED",
            GpsQuality::RtkFloat => "RTK_FLOAT",
            GpsQuality::GpsOnly => "GPS_ONLY",
            GpsQuality::None => "NONE",
        }
    }

    /// Per-axis position noise for this fix type. RTK fixed uses the
    /// configured sigma; degraded fixes never report better than their
    /// nominal accuracy.
    pub fn noise_sigma_m(self, rtk_sigma_m: f64) -> f64 {
        match self {
            GpsQuality::RtkFixed => rtk_sigma_m,
            GpsQuality::RtkFloat => rtk_sigma_m.max(0.3),
            GpsQuality::GpsOnly => rtk_sigma_m.max(2.0),
            GpsQuality::None => rtk_sigma_m.max(5.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FlightMode {
    Grounded,
    Holding,
    Enroute,
    Returning,
    LandedFault,
}

impl FlightMode {
    pub fn as_str(self) -> &'static str {
        match self {
            FlightMode::Grounded => "GROUNDED",
            FlightMode::Holding => "HOLDING",
            FlightMode::Enroute => "ENROUTE",
            FlightMode::Returning => "RETURNING",
            FlightMode::LandedFault => "LANDED_FAULT",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DroneState {
    pub true_position: LocalEnu,
    pub velocity: LocalEnu,
    pub battery_pct: f64,
    pub gps_quality: GpsQuality,
    pub mode: FlightMode,
}

impl DroneState {
    pub fn at_rest(params: &DroneParams) -> Self {
        Self {
            true_position: params.start_position,
            velocity: LocalEnu::ZERO,
            battery_pct: 100.0,
            gps_quality: GpsQuality::RtkFixed,
            mode: FlightMode::Grounded,
        }
    }

    pub fn speed(&self) -> f64 {
        self.velocity.norm()
    }
}

/// Where the vehicle is heading and, optionally, a slower cruise speed for the leg.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Target {
    pub position: LocalEnu,
    pub speed_limit_mps: Option<f64>,
}

impl Target {
    pub fn at(position: LocalEnu) -> Self {
        Self { position, speed_limit_mps: None }
    }
}

/// Advances the vehicle by `dt` seconds.
pub fn step(state: &DroneState, params: &DroneParams, target: Option<&Target>, dt: f64) -> Result<DroneState, FlightError> {
    if !(dt.is_finite() && dt > 0.0 && dt <= 1.0) {
        return Err(FlightError::NonPositiveDt(dt));
    }
    let mut next = *state;
    if state.mode == FlightMode::LandedFault {
        next.velocity = LocalEnu::ZERO;
        return Ok(next);
    }

    next.battery_pct = (state.battery_pct - params.battery_drain_pct_per_s * dt).max(0.0);
    if next.battery_pct <= 0.0 {
        next.mode = FlightMode::LandedFault;
        next.velocity = LocalEnu::ZERO;
        return Ok(next);
    }

    let desired = match target {
        Some(t) => {
            let offset = t.position - state.true_position;
            let distance = offset.norm();
            let cruise = t.speed_limit_mps.map_or(params.max_speed_mps, |s| s.min(params.max_speed_mps));
            let speed = cruise.min((2.0 * params.max_accel_mps2 * distance).sqrt()).min(distance / dt);
            if distance > 0.0 {
                offset * (speed / distance)
            } else {
                LocalEnu::ZERO
            }
        }
        None => LocalEnu::ZERO,
    };

    let mut dv = desired - state.velocity;
    let max_dv = params.max_accel_mps2 * dt;
    let dv_norm = dv.norm();
    if dv_norm > max_dv {
        dv = dv * (max_dv / dv_norm);
    }
    let mut velocity = state.velocity + dv;
    let speed = velocity.norm();
    if speed > params.max_speed_mps {
        velocity = velocity * (params.max_speed_mps / speed);
    }
    next.velocity = velocity;
    next.true_position = state.true_position + velocity * dt;

    next.mode = match target {
        Some(t) if !arrived(&next, params, &t.position) => FlightMode::Enroute,
        Some(_) => FlightMode::Holding,
        None if state.mode == FlightMode::Grounded => FlightMode::Grounded,
        None => FlightMode::Holding,
    };
    Ok(next)
}

/// Closed ball test: a vehicle exactly `arrival_radius_m` away has arrived.
pub fn arrived(state: &DroneState, params: &DroneParams, target: &LocalEnu) -> bool {
    state.true_position.distance(target) <= params.arrival_radius_m
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Telemetry {
    pub timestamp_s: f64,
    pub reported_position: GeodeticCoordinate,
    /// The noisy position in the local frame, before conversion.
    pub reported_local: LocalEnu,
    pub battery_pct: f64,
    pub gps_quality: GpsQuality,
    pub mode: FlightMode,
    pub active_waypoint_id: Option<u64>,
}

/// Samples the position fix the vehicle would report right now.
pub fn noisy_position(state: &DroneState, params: &DroneParams, rng: &mut SimRng) -> LocalEnu {
    let sigma = state.gps_quality.noise_sigma_m(params.rtk_noise_sigma_m);
    if sigma == 0.0 {
        return state.true_position;
    }
    let normal = Normal::new(0.0, sigma).expect("sigma is finite and positive");
    let noise = LocalEnu::new(normal.sample(rng), normal.sample(rng), normal.sample(rng));
    state.true_position + noise
}

pub fn emit_telemetry(
    state: &DroneState,
    params: &DroneParams,
    origin: &GeoOrigin,
    timestamp_s: f64,
    active_waypoint_id: Option<u64>,
    rng: &mut SimRng,
) -> Result<Telemetry, FlightError> {
    let reported_local = noisy_position(state, params, rng);
    Ok(Telemetry {
        timestamp_s,
        reported_position: origin.to_geodetic(&reported_local)?,
        reported_local,
        battery_pct: state.battery_pct,
        gps_quality: state.gps_quality,
        mode: state.mode,
        active_waypoint_id,
    })
}
