//! Scenario files.
//!
//! ```toml
//! seed = 42
//! tick_dt_s = 0.1
//!
//! [origin]
//! lat = 37.875
//! lon = -122.259
//! alt = 0.0
//!
//! [drone]
//! max_speed_mps = 5.0
//! rtk_noise_sigma_m = 0.02
//!
//! [field]
//! background = 0.5
//! clamp_epsilon = 0.3
//!
//! [[field.source]]
//! east = 10.0
//! north = 0.0
//! up = 0.0
//! strength = 62831.85
//!
//! [mission]
//! autostart = true
//!
//! [[mission.waypoint]]
//! east = 10.0
//! north = 0.0
//! up = 10.0
//! hold_s = 2.0
//! ```

use crate::flight::{DroneParams, GpsQuality};
use crate::geodesy::{GeoOrigin, GeodeticCoordinate, LocalEnu};
use crate::radiation::{PointSource, RadiationScenario, DEFAULT_CLAMP_EPSILON_M};
use crate::voxel::{ColormapSpec, GridSpec};
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("invalid scenario at `{path}`: {message}")]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

impl ConfigError {
    fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self { path: path.into(), message: message.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OriginConfig {
    pub lat: f64,
    pub lon: f64,
    #[serde(default)]
    pub alt: f64,
}

impl Default for OriginConfig {
    fn default() -> Self {
        Self { lat: 37.875, lon: -122.259, alt: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceConfig {
    pub east: f64,
    pub north: f64,
    #[serde(default)]
    pub up: f64,
    pub strength: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FieldConfig {
    pub background: f64,
    pub clamp_epsilon: f64,
    pub source: Vec<SourceConfig>,
}

impl Default for FieldConfig {
    fn default() -> Self {
        Self { background: 0.5, clamp_epsilon: DEFAULT_CLAMP_EPSILON_M, source: Vec::new() }
    }
}

impl FieldConfig {
    pub fn scenario(&self) -> RadiationScenario {
        RadiationScenario {
            sources: self
                .source
                .iter()
                .map(|s| PointSource { position: LocalEnu::new(s.east, s.north, s.up), strength_s: s.strength })
                .collect(),
            background_b: self.background,
            clamp_epsilon_m: self.clamp_epsilon,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub resolution_m: f64,
    pub dims: [usize; 3],
    /// Min corner; when absent the grid is centered on the origin.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub origin: Option<[f64; 3]>,
    pub min_exposure_s: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { resolution_m: 2.0, dims: [100, 100, 30], origin: None, min_exposure_s: 0.0 }
    }
}

impl GridConfig {
    pub fn spec(&self) -> GridSpec {
        match self.origin {
            Some([e, n, u]) => GridSpec { origin_enu: LocalEnu::new(e, n, u), resolution_m: self.resolution_m, dims: self.dims },
            None => GridSpec::centered(self.resolution_m, self.dims),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ColormapConfig {
    pub rate_min: f64,
    pub rate_max: f64,
}

impl Default for ColormapConfig {
    fn default() -> Self {
        let d = ColormapSpec::default();
        Self { rate_min: d.rate_min, rate_max: d.rate_max }
    }
}

impl ColormapConfig {
    pub fn spec(&self) -> ColormapSpec {
        ColormapSpec { rate_min: self.rate_min, rate_max: self.rate_max, ..ColormapSpec::default() }
    }
}

/// A scripted GPS degradation over `[start_s, end_s)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GpsWindow {
    pub start_s: f64,
    pub end_s: f64,
    pub quality: GpsQuality,
}

/// A waypoint given either geodetically (`lat`/`lon`/`alt`) or in the local
/// frame (`east`/`north`/`up`).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptWaypoint {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lat: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub east: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub north: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub up: Option<f64>,
    #[serde(default)]
    pub hold_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speed_mps: Option<f64>,
}

impl ScriptWaypoint {
    pub fn local(east: f64, north: f64, up: f64) -> Self {
        Self { east: Some(east), north: Some(north), up: Some(up), ..Default::default() }
    }

    pub fn resolve(&self, origin: &GeoOrigin) -> Result<GeodeticCoordinate, String> {
        match (self.lat, self.lon, self.east, self.north) {
            (Some(lat), Some(lon), None, None) if self.up.is_none() => {
                let alt = self.alt.unwrap_or(origin.geodetic().altitude_m);
                GeodeticCoordinate::new(lat, lon, alt).map_err(|e| e.to_string())
            }
            (None, None, Some(e), Some(n)) if self.alt.is_none() => origin
                .to_geodetic(&LocalEnu::new(e, n, self.up.unwrap_or(0.0)))
                .map_err(|e| e.to_string()),
            _ => Err("give either lat/lon[/alt] or east/north[/up]".into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MissionScript {
    /// Start the mission at tick 0 without waiting for an operator.
    pub autostart: bool,
    pub waypoint: Vec<ScriptWaypoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub tick_dt_s: f64,
    pub telemetry_hz: f64,
    pub measurement_hz: f64,
    pub mesh_delta_hz: f64,
    pub origin: OriginConfig,
    pub drone: DroneParams,
    pub field: FieldConfig,
    pub grid: GridConfig,
    pub colormap: ColormapConfig,
    pub gps_window: Vec<GpsWindow>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mission: Option<MissionScript>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            tick_dt_s: 0.1,
            telemetry_hz: 10.0,
            measurement_hz: 2.0,
            mesh_delta_hz: 2.0,
            origin: OriginConfig::default(),
            drone: DroneParams::default(),
            field: FieldConfig::default(),
            grid: GridConfig::default(),
            colormap: ColormapConfig::default(),
            gps_window: Vec::new(),
            mission: None,
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::new("", e.message().to_string()))?;
        let config: ScenarioConfig = serde_path_to_error::deserialize(toml::Value::Table(table)).map_err(|e| {
            let path = e.path().to_string();
            ConfigError::new(if path == "." { String::new() } else { path }, e.inner().message().to_string())
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::new(path.display().to_string(), e.to_string()))?;
        Self::from_toml_str(&text)
    }

    pub fn geo_origin(&self) -> Result<GeoOrigin, ConfigError> {
        let o = self.origin;
        GeodeticCoordinate::new(o.lat, o.lon, o.alt)
            .and_then(GeoOrigin::new)
            .map_err(|e| ConfigError::new("origin", e.to_string()))
    }

    /// Ticks between emissions at `hz`.
    pub fn cadence_ticks(&self, hz: f64) -> u64 {
        ((1.0 / (hz * self.tick_dt_s)).round() as u64).max(1)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let origin = self.geo_origin()?;
        if !(self.tick_dt_s.is_finite() && self.tick_dt_s > 0.0 && self.tick_dt_s <= 1.0) {
            return Err(ConfigError::new("tick_dt_s", "must lie in (0, 1]"));
        }
        for (name, hz) in [
            ("telemetry_hz", self.telemetry_hz),
            ("measurement_hz", self.measurement_hz),
            ("mesh_delta_hz", self.mesh_delta_hz),
        ] {
            if !(hz.is_finite() && hz > 0.0) {
                return Err(ConfigError::new(name, "must be > 0"));
            }
            if hz > 1.0 / self.tick_dt_s + 1e-9 {
                return Err(ConfigError::new(name, "cannot exceed the tick rate 1/tick_dt_s"));
            }
        }
        self.drone.validate().map_err(|e| match e {
            crate::flight::FlightError::InvalidParams { field, reason } => ConfigError::new(format!("drone.{field}"), reason),
            other => ConfigError::new("drone", other.to_string()),
        })?;
        if !(self.field.background.is_finite() && self.field.background >= 0.0) {
            return Err(ConfigError::new("field.background", "must be >= 0"));
        }
        if !(self.field.clamp_epsilon.is_finite() && self.field.clamp_epsilon > 0.0) {
            return Err(ConfigError::new("field.clamp_epsilon", "must be > 0"));
        }
        for (i, s) in self.field.source.iter().enumerate() {
            if !(s.strength.is_finite() && s.strength > 0.0) {
                return Err(ConfigError::new(format!("field.source[{i}].strength"), "must be > 0"));
            }
            if !(s.east.is_finite() && s.north.is_finite() && s.up.is_finite()) {
                return Err(ConfigError::new(format!("field.source[{i}]"), "position must be finite"));
            }
        }
        self.grid.spec().validate().map_err(|e| ConfigError::new("grid", e.to_string()))?;
        if !(self.grid.min_exposure_s.is_finite() && self.grid.min_exposure_s >= 0.0) {
            return Err(ConfigError::new("grid.min_exposure_s", "must be >= 0"));
        }
        self.colormap.spec().validate().map_err(|e| ConfigError::new("colormap", e.to_string()))?;
        for (i, w) in self.gps_window.iter().enumerate() {
            if !(w.start_s.is_finite() && w.end_s.is_finite() && w.start_s <= w.end_s) {
                return Err(ConfigError::new(format!("gps_window[{i}]"), "need finite start_s <= end_s"));
            }
        }
        if let Some(m) = &self.mission {
            for (i, w) in m.waypoint.iter().enumerate() {
                w.resolve(&origin).map_err(|msg| ConfigError::new(format!("mission.waypoint[{i}]"), msg))?;
                if !(w.hold_s.is_finite() && w.hold_s >= 0.0) {
                    return Err(ConfigError::new(format!("mission.waypoint[{i}].hold_s"), "must be >= 0"));
                }
                if w.speed_mps.is_some_and(|s| !(s.is_finite() && s > 0.0)) {
                    return Err(ConfigError::new(format!("mission.waypoint[{i}].speed_mps"), "must be > 0"));
                }
            }
        }
        Ok(())
    }

    /// Scripted fix quality at time `t_s`; the last matching window wins.
    pub fn gps_quality_at(&self, t_s: f64) -> GpsQuality {
        self.gps_window
            .iter()
            .rev()
            .find(|w| t_s >= w.start_s && t_s < w.end_s)
            .map_or(GpsQuality::RtkFixed, |w| w.quality)
    }
}
