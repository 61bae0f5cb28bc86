//! JSON wire protocol between the ground station and operator consoles.
//!
//! Every frame is one compact JSON object with the fields `v`, `seq`, `t`,
//! `ts` and `payload`, always in that order. Integers are written bare and
//! floats in their shortest round-trip form, so an envelope has exactly one
//! byte representation.
//!
//! Decoding is strict: unknown envelope or payload fields, a wrong version,
//! or an unknown `t` are all errors, and every error names where it happened.

use crate::flight::{FlightMode, GpsQuality};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub const PROTOCOL_VERSION: u64 = 1;
pub const DEFAULT_PORT: u16 = 8474;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProtocolError {
    #[error("malformed JSON at byte {offset}: {message}")]
    MalformedJson { offset: usize, message: String },
    #[error("unknown message type {0:?}")]
    UnknownType(String),
    #[error("schema violation at `{path}`: {message}")]
    SchemaViolation { path: String, message: String },
    #[error("cannot serialize non-finite value at `{0}`")]
    UnserializableValue(String),
}

impl ProtocolError {
    fn schema(path: impl Into<String>, message: impl Into<String>) -> Self {
        ProtocolError::SchemaViolation { path: path.into(), message: message.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MessageKind {
    Hello,
    Ack,
    Error,
    MissionUpload,
    WaypointAdd,
    WaypointUpdate,
    WaypointRemove,
    MissionStart,
    MissionAbort,
    Telemetry,
    RadMeasurement,
    MeshDelta,
    MissionStatus,
}

impl MessageKind {
    pub const ALL: [MessageKind; 13] = [
        MessageKind::Hello,
        MessageKind::Ack,
        MessageKind::Error,
        MessageKind::MissionUpload,
        MessageKind::WaypointAdd,
        MessageKind::WaypointUpdate,
        MessageKind::WaypointRemove,
        MessageKind::MissionStart,
        MessageKind::MissionAbort,
        MessageKind::Telemetry,
        MessageKind::RadMeasurement,
        MessageKind::MeshDelta,
        MessageKind::MissionStatus,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MessageKind::Hello => "hello",
            MessageKind::Ack => "ack",
            MessageKind::Error => "error",
            MessageKind::MissionUpload => "mission_upload",
            MessageKind::WaypointAdd => "waypoint_add",
            MessageKind::WaypointUpdate => "waypoint_update",
            MessageKind::WaypointRemove => "waypoint_remove",
            MessageKind::MissionStart => "mission_start",
            MessageKind::MissionAbort => "mission_abort",
            MessageKind::Telemetry => "telemetry",
            MessageKind::RadMeasurement => "rad_measurement",
            MessageKind::MeshDelta => "mesh_delta",
            MessageKind::MissionStatus => "mission_status",
        }
    }

    pub fn parse(t: &str) -> Option<MessageKind> {
        MessageKind::ALL.into_iter().find(|k| k.as_str() == t)
    }

    /// Kinds an operator may send to the ground station.
    pub fn is_command(self) -> bool {
        matches!(
            self,
            MessageKind::MissionUpload
                | MessageKind::WaypointAdd
                | MessageKind::WaypointUpdate
                | MessageKind::WaypointRemove
                | MessageKind::MissionStart
                | MessageKind::MissionAbort
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Operator,
    Drone,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hello {
    pub role: Role,
    pub name: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ack {
    pub acked_seq: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorPayload {
    pub code: String,
    pub detail: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cause_seq: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WireWaypoint {
    pub id: u64,
    pub lat: f64,
    pub lon: f64,
    pub alt: f64,
    pub hold_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speed_mps: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MissionUpload {
    pub revision: u64,
    pub waypoints: Vec<WireWaypoint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaypointAdd {
    pub revision: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub index: Option<u64>,
    pub waypoint: WireWaypoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaypointUpdate {
    pub revision: u64,
    pub waypoint: WireWaypoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaypointRemove {
    pub revision: u64,
    pub id: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MissionStart {
    pub revision: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MissionAbort {}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TelemetryMsg {
    pub lat: f64,
    pub lon: f64,
    pub alt: f64,
    pub battery_pct: f64,
    pub gps_quality: GpsQuality,
    pub mode: FlightMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub active_waypoint_id: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadMeasurementMsg {
    pub t_s: f64,
    pub lat: f64,
    pub lon: f64,
    pub alt: f64,
    pub counts: u64,
    pub dt_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WireVoxel {
    pub ix: u64,
    pub iy: u64,
    pub iz: u64,
    pub rate: f64,
    pub exposure_s: f64,
    pub rgba: [u8; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshDelta {
    pub grid_revision: u64,
    pub voxels: Vec<WireVoxel>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum WirePhase {
    Idle,
    Ready,
    Enroute,
    Holding,
    Completed,
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MissionStatus {
    pub phase: WirePhase,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub active_index: Option<u64>,
    pub visited_ids: Vec<u64>,
    pub revision: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Payload {
    Hello(Hello),
    Ack(Ack),
    Error(ErrorPayload),
    MissionUpload(MissionUpload),
    WaypointAdd(WaypointAdd),
    WaypointUpdate(WaypointUpdate),
    WaypointRemove(WaypointRemove),
    MissionStart(MissionStart),
    MissionAbort(MissionAbort),
    Telemetry(TelemetryMsg),
    RadMeasurement(RadMeasurementMsg),
    MeshDelta(MeshDelta),
    MissionStatus(MissionStatus),
}

impl Payload {
    pub fn kind(&self) -> MessageKind {
        match self {
            Payload::Hello(_) => MessageKind::Hello,
            Payload::Ack(_) => MessageKind::Ack,
            Payload::Error(_) => MessageKind::Error,
            Payload::MissionUpload(_) => MessageKind::MissionUpload,
            Payload::WaypointAdd(_) => MessageKind::WaypointAdd,
            Payload::WaypointUpdate(_) => MessageKind::WaypointUpdate,
            Payload::WaypointRemove(_) => MessageKind::WaypointRemove,
            Payload::MissionStart(_) => MessageKind::MissionStart,
            Payload::MissionAbort(_) => MessageKind::MissionAbort,
            Payload::Telemetry(_) => MessageKind::Telemetry,
            Payload::RadMeasurement(_) => MessageKind::RadMeasurement,
            Payload::MeshDelta(_) => MessageKind::MeshDelta,
            Payload::MissionStatus(_) => MessageKind::MissionStatus,
        }
    }

    /// Path of the first non-finite float, if any. serde_json would silently
    /// write such values as `null`.
    fn first_non_finite(&self) -> Option<String> {
        fn waypoint(prefix: &str, w: &WireWaypoint) -> Option<String> {
            let fields = [("lat", w.lat), ("lon", w.lon), ("alt", w.alt), ("hold_s", w.hold_s)];
            fields
                .into_iter()
                .chain(w.speed_mps.map(|s| ("speed_mps", s)))
                .find(|(_, v)| !v.is_finite())
                .map(|(name, _)| format!("{prefix}.{name}"))
        }
        fn check(fields: &[(&str, f64)]) -> Option<String> {
            fields.iter().find(|(_, v)| !v.is_finite()).map(|(name, _)| format!("payload.{name}"))
        }
        match self {
            Payload::Hello(_)
            | Payload::Ack(_)
            | Payload::Error(_)
            | Payload::WaypointRemove(_)
            | Payload::MissionStart(_)
            | Payload::MissionAbort(_)
            | Payload::MissionStatus(_) => None,
            Payload::MissionUpload(m) => m
                .waypoints
                .iter()
                .enumerate()
                .find_map(|(i, w)| waypoint(&format!("payload.waypoints[{i}]"), w)),
            Payload::WaypointAdd(m) => waypoint("payload.waypoint", &m.waypoint),
            Payload::WaypointUpdate(m) => waypoint("payload.waypoint", &m.waypoint),
            Payload::Telemetry(m) => {
                check(&[("lat", m.lat), ("lon", m.lon), ("alt", m.alt), ("battery_pct", m.battery_pct)])
            }
            Payload::RadMeasurement(m) => {
                check(&[("t_s", m.t_s), ("lat", m.lat), ("lon", m.lon), ("alt", m.alt), ("dt_s", m.dt_s)])
            }
            Payload::MeshDelta(m) => m.voxels.iter().enumerate().find_map(|(i, v)| {
                [("rate", v.rate), ("exposure_s", v.exposure_s)]
                    .into_iter()
                    .find(|(_, x)| !x.is_finite())
                    .map(|(name, _)| format!("payload.voxels[{i}].{name}"))
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    pub v: u64,
    pub seq: u64,
    pub ts: f64,
    pub payload: Payload,
}

#[derive(Serialize)]
struct WireEnvelope<'a> {
    v: u64,
    seq: u64,
    t: &'static str,
    ts: f64,
    payload: &'a Payload,
}

const ENVELOPE_FIELDS: [&str; 5] = ["v", "seq", "t", "ts", "payload"];

impl Envelope {
    pub fn new(seq: u64, ts: f64, payload: Payload) -> Self {
        Self { v: PROTOCOL_VERSION, seq, ts, payload }
    }

    pub fn kind(&self) -> MessageKind {
        self.payload.kind()
    }

    /// Canonical compact encoding.
    pub fn encode(&self) -> Result<Vec<u8>, ProtocolError> {
        if !self.ts.is_finite() {
            return Err(ProtocolError::UnserializableValue("ts".into()));
        }
        if let Some(path) = self.payload.first_non_finite() {
            return Err(ProtocolError::UnserializableValue(path));
        }
        let wire = WireEnvelope { v: self.v, seq: self.seq, t: self.kind().as_str(), ts: self.ts, payload: &self.payload };
        serde_json::to_vec(&wire).map_err(|e| ProtocolError::UnserializableValue(e.to_string()))
    }

    pub fn encode_string(&self) -> Result<String, ProtocolError> {
        self.encode().map(|b| String::from_utf8(b).expect("serde_json emits UTF-8"))
    }

    pub fn decode(bytes: &[u8]) -> Result<Envelope, ProtocolError> {
        let value: Value = serde_json::from_slice(bytes).map_err(|e| ProtocolError::MalformedJson {
            offset: byte_offset(bytes, e.line(), e.column()),
            message: e.to_string(),
        })?;
        let Value::Object(mut fields) = value else {
            return Err(ProtocolError::schema("", "envelope must be a JSON object"));
        };
        if let Some(unknown) = fields.keys().find(|k| !ENVELOPE_FIELDS.contains(&k.as_str())) {
            return Err(ProtocolError::schema(unknown.clone(), "unknown envelope field"));
        }
        let mut take = |name: &str| fields.remove(name).ok_or_else(|| ProtocolError::schema(name, "missing field"));
        let v = take("v")?;
        let seq = take("seq")?;
        let t = take("t")?;
        let ts = take("ts")?;
        let payload = take("payload")?;

        let v = v.as_u64().ok_or_else(|| ProtocolError::schema("v", "expected an unsigned integer"))?;
        if v != PROTOCOL_VERSION {
            return Err(ProtocolError::schema("v", format!("unsupported protocol version {v}")));
        }
        let seq = seq.as_u64().ok_or_else(|| ProtocolError::schema("seq", "expected an unsigned integer"))?;
        let Value::String(t) = t else {
            return Err(ProtocolError::schema("t", "expected a string"));
        };
        let kind = MessageKind::parse(&t).ok_or(ProtocolError::UnknownType(t))?;
        let ts = ts.as_f64().ok_or_else(|| ProtocolError::schema("ts", "expected a number"))?;

        let payload = match kind {
            MessageKind::Hello => Payload::Hello(payload_as(payload)?),
            MessageKind::Ack => Payload::Ack(payload_as(payload)?),
            MessageKind::Error => Payload::Error(payload_as(payload)?),
            MessageKind::MissionUpload => Payload::MissionUpload(payload_as(payload)?),
            MessageKind::WaypointAdd => Payload::WaypointAdd(payload_as(payload)?),
            MessageKind::WaypointUpdate => Payload::WaypointUpdate(payload_as(payload)?),
            MessageKind::WaypointRemove => Payload::WaypointRemove(payload_as(payload)?),
            MessageKind::MissionStart => Payload::MissionStart(payload_as(payload)?),
            MessageKind::MissionAbort => Payload::MissionAbort(payload_as(payload)?),
            MessageKind::Telemetry => Payload::Telemetry(payload_as(payload)?),
            MessageKind::RadMeasurement => Payload::RadMeasurement(payload_as(payload)?),
            MessageKind::MeshDelta => Payload::MeshDelta(payload_as(payload)?),
            MessageKind::MissionStatus => Payload::MissionStatus(payload_as(payload)?),
        };
        Ok(Envelope { v, seq, ts, payload })
    }
}

fn payload_as<T: DeserializeOwned>(value: Value) -> Result<T, ProtocolError> {
    serde_path_to_error::deserialize(value).map_err(|err| {
        let inner = err.path().to_string();
        let message = err.inner().to_string();
        let mut path = if inner == "." { "payload".to_string() } else { format!("payload.{inner}") };
        // Missing fields are reported against the parent object; name the field itself.
        if let Some(rest) = message.strip_prefix("missing field `") {
            if let Some(field) = rest.split('`').next() {
                path = format!("{path}.{field}");
            }
        }
        ProtocolError::SchemaViolation { path, message }
    })
}

/// serde_json reports 1-based line/column; convert to a byte offset.
fn byte_offset(bytes: &[u8], line: usize, column: usize) -> usize {
    if line <= 1 {
        return column.saturating_sub(1).min(bytes.len());
    }
    let line_start = bytes
        .iter()
        .enumerate()
        .filter(|(_, &b)| b == b'\n')
        .nth(line - 2)
        .map_or(bytes.len(), |(i, _)| i + 1);
    (line_start + column.saturating_sub(1)).min(bytes.len())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeqVerdict {
    Accept,
    Duplicate,
    /// Accepted, with `missing` sequence numbers skipped.
    Gap { missing: u64 },
}

/// Receive-side sequence tracking for one peer on one connection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Session {
    pub last_seq: u64,
    pub duplicates: u64,
    pub gap_count: u64,
}

impl Session {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn accept(&mut self, seq: u64) -> SeqVerdict {
        if seq <= self.last_seq {
            self.duplicates += 1;
            return SeqVerdict::Duplicate;
        }
        let missing = seq - self.last_seq - 1;
        self.last_seq = seq;
        if missing == 0 {
            SeqVerdict::Accept
        } else {
            self.gap_count += missing;
            SeqVerdict::Gap { missing }
        }
    }
}

/// Stamps outgoing envelopes with consecutive sequence numbers starting at 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SeqCounter {
    next: u64,
}

impl SeqCounter {
    pub fn new() -> Self {
        Self { next: 1 }
    }

    pub fn next_seq(&mut self) -> u64 {
        let seq = self.next.max(1);
        self.next = seq + 1;
        seq
    }
}
