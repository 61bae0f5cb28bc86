//! WGS84 geodetic coordinates and the local east-north-up (ENU) frame.
//!
//! Every position that crosses the wire is geodetic (degrees, ellipsoidal
//! meters); every position the simulation and the voxel map work with is ENU
//! relative to a mission origin. [`GeoOrigin`] bridges the two through a full
//! ECEF transform, so there is no flat-earth approximation anywhere in the
//! pipeline.

use serde::{Deserialize, Serialize};
use std::ops::{Add, Mul, Sub};
use thiserror::Error;

/// WGS84 semi-major axis in meters.
pub const WGS84_A: f64 = 6_378_137.0;
/// WGS84 flattening.
pub const WGS84_F: f64 = 1.0 / 298.257_223_563;
/// WGS84 semi-minor axis in meters.
pub const WGS84_B: f64 = WGS84_A * (1.0 - WGS84_F);
/// First eccentricity squared.
pub const WGS84_E2: f64 = WGS84_F * (2.0 - WGS84_F);
/// Mean radius (2a + b) / 3, used for spherical ground distances.
pub const WGS84_MEAN_RADIUS: f64 = (2.0 * WGS84_A + WGS84_B) / 3.0;

/// Local positions farther than this from the origin are refused.
pub const TANGENT_RANGE_M: f64 = 100_000.0;

const GEODETIC_TOLERANCE_RAD: f64 = 1e-12;
const MAX_GEODETIC_ITERATIONS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum GeodesyError {
    #[error("invalid coordinate: {0}")]
    InvalidCoordinate(&'static str),
    #[error("point is {distance_m:.1} m from the origin, beyond the {limit_m} m tangent-plane range")]
    OutOfTangentRange { distance_m: f64, limit_m: f64 },
}

/// A WGS84 position: decimal degrees and meters above the ellipsoid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeodeticCoordinate {
    pub latitude_deg: f64,
    pub longitude_deg: f64,
    pub altitude_m: f64,
}

impl GeodeticCoordinate {
    /// Validates latitude and altitude and normalizes longitude into [-180, 180).
    pub fn new(latitude_deg: f64, longitude_deg: f64, altitude_m: f64) -> Result<Self, GeodesyError> {
        if !latitude_deg.is_finite() || !longitude_deg.is_finite() || !altitude_m.is_finite() {
            return Err(GeodesyError::InvalidCoordinate("non-finite component"));
        }
        if !(-90.0..=90.0).contains(&latitude_deg) {
            return Err(GeodesyError::InvalidCoordinate("latitude outside [-90, 90]"));
        }
        Ok(Self {
            latitude_deg,
            longitude_deg: normalize_longitude(longitude_deg),
            altitude_m,
        })
    }

    /// Checks the invariants of a value built field by field (e.g. from the wire).
    pub fn validate(&self) -> Result<(), GeodesyError> {
        let checked = Self::new(self.latitude_deg, self.longitude_deg, self.altitude_m)?;
        if checked.longitude_deg != self.longitude_deg {
            return Err(GeodesyError::InvalidCoordinate("longitude outside [-180, 180)"));
        }
        Ok(())
    }

    pub fn to_ecef(&self) -> [f64; 3] {
        let lat = self.latitude_deg.to_radians();
        let lon = self.longitude_deg.to_radians();
        let (sin_lat, cos_lat) = lat.sin_cos();
        let (sin_lon, cos_lon) = lon.sin_cos();
        let n = WGS84_A / (1.0 - WGS84_E2 * sin_lat * sin_lat).sqrt();
        let h = self.altitude_m;
        [
            (n + h) * cos_lat * cos_lon,
            (n + h) * cos_lat * sin_lon,
            (n * (1.0 - WGS84_E2) + h) * sin_lat,
        ]
    }

    /// Inverse of [`to_ecef`](Self::to_ecef), iterating latitude until it
    /// moves by less than 1e-12 rad.
    pub fn from_ecef(ecef: [f64; 3]) -> Result<Self, GeodesyError> {
        let [x, y, z] = ecef;
        if !(x.is_finite() && y.is_finite() && z.is_finite()) {
            return Err(GeodesyError::InvalidCoordinate("non-finite ECEF position"));
        }
        let p = x.hypot(y);
        let lon = y.atan2(x);

        // Polar axis: latitude is +-90 and height is measured along z.
        if p < 1e-9 {
            let lat = if z >= 0.0 { 90.0 } else { -90.0 };
            return Self::new(lat, lon.to_degrees(), z.abs() - WGS84_B);
        }

        let mut lat = z.atan2(p * (1.0 - WGS84_E2));
        for _ in 0..MAX_GEODETIC_ITERATIONS {
            let sin_lat = lat.sin();
            let n = WGS84_A / (1.0 - WGS84_E2 * sin_lat * sin_lat).sqrt();
            let h = p / lat.cos() - n;
            let next = z.atan2(p * (1.0 - WGS84_E2 * n / (n + h)));
            let delta = (next - lat).abs();
            lat = next;
            if delta < GEODETIC_TOLERANCE_RAD {
                break;
            }
        }
        // Recompute height with the converged latitude; this form stays
        // well conditioned near the poles where p / cos(lat) does not.
        let (sin_lat, cos_lat) = lat.sin_cos();
        let n = WGS84_A / (1.0 - WGS84_E2 * sin_lat * sin_lat).sqrt();
        let h = if cos_lat.abs() > 1e-3 { p / cos_lat - n } else { z / sin_lat - n * (1.0 - WGS84_E2) };
        Self::new(lat.to_degrees().clamp(-90.0, 90.0), lon.to_degrees(), h)
    }
}

/// Maps any finite longitude into [-180, 180).
pub fn normalize_longitude(lon_deg: f64) -> f64 {
    let wrapped = (lon_deg + 180.0).rem_euclid(360.0) - 180.0;
    // rem_euclid can round up to exactly 360 for tiny negative inputs.
    if wrapped >= 180.0 {
        wrapped - 360.0
    } else {
        wrapped
    }
}

/// Meters east, north and up of a mission origin.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LocalEnu {
    pub east_m: f64,
    pub north_m: f64,
    pub up_m: f64,
}

impl LocalEnu {
    pub const ZERO: LocalEnu = LocalEnu { east_m: 0.0, north_m: 0.0, up_m: 0.0 };

    pub const fn new(east_m: f64, north_m: f64, up_m: f64) -> Self {
        Self { east_m, north_m, up_m }
    }

    pub fn norm(&self) -> f64 {
        (self.east_m * self.east_m + self.north_m * self.north_m + self.up_m * self.up_m).sqrt()
    }

    pub fn horizontal_norm(&self) -> f64 {
        self.east_m.hypot(self.north_m)
    }

    pub fn distance(&self, other: &LocalEnu) -> f64 {
        (*self - *other).norm()
    }

    pub fn dot(&self, other: &LocalEnu) -> f64 {
        self.east_m * other.east_m + self.north_m * other.north_m + self.up_m * other.up_m
    }

    pub fn is_finite(&self) -> bool {
        self.east_m.is_finite() && self.north_m.is_finite() && self.up_m.is_finite()
    }

    /// Checks finiteness and the tangent-range guard.
    pub fn validate(&self) -> Result<(), GeodesyError> {
        if !self.is_finite() {
            return Err(GeodesyError::InvalidCoordinate("non-finite ENU component"));
        }
        let distance_m = self.norm();
        if distance_m >= TANGENT_RANGE_M {
            return Err(GeodesyError::OutOfTangentRange { distance_m, limit_m: TANGENT_RANGE_M });
        }
        Ok(())
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.east_m, self.north_m, self.up_m]
    }
}

impl Add for LocalEnu {
    type Output = LocalEnu;
    fn add(self, rhs: LocalEnu) -> LocalEnu {
        LocalEnu::new(self.east_m + rhs.east_m, self.north_m + rhs.north_m, self.up_m + rhs.up_m)
    }
}

impl Sub for LocalEnu {
    type Output = LocalEnu;
    fn sub(self, rhs: LocalEnu) -> LocalEnu {
        LocalEnu::new(self.east_m - rhs.east_m, self.north_m - rhs.north_m, self.up_m - rhs.up_m)
    }
}

impl Mul<f64> for LocalEnu {
    type Output = LocalEnu;
    fn mul(self, k: f64) -> LocalEnu {
        LocalEnu::new(self.east_m * k, self.north_m * k, self.up_m * k)
    }
}

/// A mission origin with its ECEF position and ENU rotation cached.
///
/// Rows of `basis` are the east, north and up unit vectors expressed in ECEF.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeoOrigin {
    origin: GeodeticCoordinate,
    ecef: [f64; 3],
    basis: [[f64; 3]; 3],
}

impl GeoOrigin {
    pub fn new(origin: GeodeticCoordinate) -> Result<Self, GeodesyError> {
        origin.validate()?;
        let lat = origin.latitude_deg.to_radians();
        let lon = origin.longitude_deg.to_radians();
        let (sin_lat, cos_lat) = lat.sin_cos();
        let (sin_lon, cos_lon) = lon.sin_cos();
        let basis = [
            [-sin_lon, cos_lon, 0.0],
            [-sin_lat * cos_lon, -sin_lat * sin_lon, cos_lat],
            [cos_lat * cos_lon, cos_lat * sin_lon, sin_lat],
        ];
        Ok(Self { origin, ecef: origin.to_ecef(), basis })
    }

    pub fn geodetic(&self) -> GeodeticCoordinate {
        self.origin
    }

    pub fn ecef(&self) -> [f64; 3] {
        self.ecef
    }

    pub fn basis(&self) -> [[f64; 3]; 3] {
        self.basis
    }

    /// Geodetic to ENU: geodetic -> ECEF, then rotate the ECEF offset into the
    /// origin's tangent frame.
    pub fn to_local(&self, g: &GeodeticCoordinate) -> Result<LocalEnu, GeodesyError> {
        g.validate()?;
        let distance_m = ground_distance(&self.origin, g)?;
        if distance_m >= TANGENT_RANGE_M {
            return Err(GeodesyError::OutOfTangentRange { distance_m, limit_m: TANGENT_RANGE_M });
        }
        let p = g.to_ecef();
        let d = [p[0] - self.ecef[0], p[1] - self.ecef[1], p[2] - self.ecef[2]];
        let [e, n, u] = self.basis.map(|row| row[0] * d[0] + row[1] * d[1] + row[2] * d[2]);
        Ok(LocalEnu::new(e, n, u))
    }

    /// ENU to geodetic, the inverse of [`to_local`](Self::to_local).
    pub fn to_geodetic(&self, p: &LocalEnu) -> Result<GeodeticCoordinate, GeodesyError> {
        p.validate()?;
        let [e, n, u] = p.to_array();
        let b = &self.basis;
        // Transpose of the rotation takes ENU back to an ECEF offset.
        let ecef = [
            self.ecef[0] + b[0][0] * e + b[1][0] * n + b[2][0] * u,
            self.ecef[1] + b[0][1] * e + b[1][1] * n + b[2][1] * u,
            self.ecef[2] + b[0][2] * e + b[1][2] * n + b[2][2] * u,
        ];
        GeodeticCoordinate::from_ecef(ecef)
    }
}

/// Haversine distance on the WGS84 mean-radius sphere, ignoring altitude.
pub fn ground_distance(a: &GeodeticCoordinate, b: &GeodeticCoordinate) -> Result<f64, GeodesyError> {
    a.validate()?;
    b.validate()?;
    let lat_a = a.latitude_deg.to_radians();
    let lat_b = b.latitude_deg.to_radians();
    let dlat = lat_b - lat_a;
    let dlon = (b.longitude_deg - a.longitude_deg).to_radians();
    let h = (dlat / 2.0).sin().powi(2) + lat_a.cos() * lat_b.cos() * (dlon / 2.0).sin().powi(2);
    Ok(2.0 * WGS84_MEAN_RADIUS * h.sqrt().min(1.0).asin())
}
