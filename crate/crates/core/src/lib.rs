//! Radiation-mapping waypoint missions for a single operator.
//!
//! A simulated sUAS carrying a count-rate detector flies geolocated waypoint
//! missions. Its readings are fused into a world-anchored voxel map that is
//! streamed, colorized, to operator consoles over a JSON protocol.
//!
//! - [`geodesy`]: WGS84 geodetic <-> local ENU conversion.
//! - [`radiation`]: point-source field and Poisson detector.
//! - [`flight`]: kinematic vehicle model and telemetry.
//! - [`mission`]: waypoint plans and the execution state machine.
//! - [`voxel`]: measurement fusion, colormap and mesh export.
//! - [`protocol`]: wire envelopes and sequence tracking.
//! - [`server`]: the ground-station loop, logging, replay and transport.

pub mod flight;
pub mod geodesy;
pub mod mission;
pub mod protocol;
pub mod radiation;
pub mod server;
pub mod voxel;

pub use flight::{DroneParams, DroneState, FlightMode, GpsQuality, Telemetry};
pub use geodesy::{GeoOrigin, GeodesyError, GeodeticCoordinate, LocalEnu};
pub use mission::{MissionError, MissionPhase, MissionPlan, MissionState, Waypoint};
pub use protocol::{Envelope, MessageKind, Payload, ProtocolError};
pub use radiation::{PointSource, RadiationMeasurement, RadiationScenario, SimRng};
pub use server::{Digest, ScenarioConfig};
pub use voxel::{ColoredMesh, ColormapSpec, GridSpec, VoxelGrid};
