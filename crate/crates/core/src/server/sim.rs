//! The deterministic ground-station loop: mission, vehicle, detector and map
//! advanced one fixed tick at a time.

use super::config::{ConfigError, ScenarioConfig};
use crate::flight::{self, DroneParams, DroneState, FlightMode, Target};
use crate::geodesy::{GeoOrigin, GeodeticCoordinate, LocalEnu};
use crate::mission::{MissionError, MissionPhase, MissionPlan, MissionState, Waypoint, WaypointEdit};
use crate::protocol::{
    Ack, Envelope, ErrorPayload, Hello, MeshDelta, MessageKind, MissionStatus, MissionUpload, Payload, RadMeasurementMsg,
    Role, SeqCounter, TelemetryMsg, WirePhase, WireVoxel, WireWaypoint, WaypointAdd,
};
use crate::radiation::{self, sim_rng, RadiationScenario, SimRng};
use crate::voxel::{ColormapSpec, VoxelGrid};
use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};
use std::collections::BTreeMap;

const NOISE_STREAM: u64 = 1;
const DETECTOR_STREAM: u64 = 2;

/// Which log category an emitted envelope belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogKind {
    CommandIn,
    Telemetry,
    Measurement,
    MeshDelta,
    StatusChange,
}

impl LogKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LogKind::CommandIn => "command_in",
            LogKind::Telemetry => "telemetry",
            LogKind::Measurement => "measurement",
            LogKind::MeshDelta => "mesh_delta",
            LogKind::StatusChange => "status_change",
        }
    }

    pub fn parse(s: &str) -> Option<LogKind> {
        [LogKind::CommandIn, LogKind::Telemetry, LogKind::Measurement, LogKind::MeshDelta, LogKind::StatusChange]
            .into_iter()
            .find(|k| k.as_str() == s)
    }
}

/// A broadcast produced by the loop.
#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub kind: LogKind,
    pub envelope: Envelope,
}

/// Reply to one operator command plus the broadcasts it caused.
#[derive(Debug, Clone, PartialEq)]
pub struct CommandOutcome {
    pub reply: Envelope,
    pub events: Vec<Event>,
}

impl CommandOutcome {
    pub fn accepted(&self) -> bool {
        self.reply.kind() == MessageKind::Ack
    }

    pub fn error_code(&self) -> Option<&str> {
        match &self.reply.payload {
            Payload::Error(e) => Some(&e.code),
            _ => None,
        }
    }
}

/// When the vehicle reached each waypoint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArrivalRecord {
    pub waypoint_id: u64,
    pub index: usize,
    pub time_s: f64,
    pub distance_m: f64,
}

/// End-of-run summary; equal digests mean equal runs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Digest {
    pub final_phase: String,
    pub visited_ids: Vec<u64>,
    pub plan_revision: u64,
    pub grid_revision: u64,
    pub observed_voxels: usize,
    pub grid_checksum: String,
    pub ticks: u64,
    pub message_counts: BTreeMap<String, u64>,
}

pub struct Simulation {
    config: ScenarioConfig,
    origin: GeoOrigin,
    params: DroneParams,
    field: RadiationScenario,
    colormap: ColormapSpec,
    drone: DroneState,
    plan: MissionPlan,
    mission: MissionState,
    grid: VoxelGrid,
    noise_rng: SimRng,
    detector_rng: SimRng,
    seq: SeqCounter,
    tick: u64,
    last_mesh_revision: u64,
    telemetry_every: u64,
    measurement_every: u64,
    mesh_every: u64,
    arrivals: Vec<ArrivalRecord>,
    mission_started_at: Option<f64>,
    mission_ended_at: Option<f64>,
}

impl Simulation {
    pub fn new(config: ScenarioConfig) -> Result<Self, ConfigError> {
        config.validate()?;
        let origin = config.geo_origin()?;
        let grid = VoxelGrid::new(config.grid.spec()).map_err(|e| ConfigError { path: "grid".into(), message: e.to_string() })?;
        let params = config.drone;
        Ok(Self {
            origin,
            params,
            field: config.field.scenario(),
            colormap: config.colormap.spec(),
            drone: DroneState::at_rest(&params),
            plan: MissionPlan::new(),
            mission: MissionState::new(),
            grid,
            noise_rng: sim_rng(config.seed, NOISE_STREAM),
            detector_rng: sim_rng(config.seed, DETECTOR_STREAM),
            seq: SeqCounter::new(),
            tick: 0,
            last_mesh_revision: 0,
            telemetry_every: config.cadence_ticks(config.telemetry_hz),
            measurement_every: config.cadence_ticks(config.measurement_hz),
            mesh_every: config.cadence_ticks(config.mesh_delta_hz),
            arrivals: Vec::new(),
            mission_started_at: None,
            mission_ended_at: None,
            config,
        })
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.config
    }

    pub fn origin(&self) -> &GeoOrigin {
        &self.origin
    }

    pub fn drone(&self) -> &DroneState {
        &self.drone
    }

    pub fn plan(&self) -> &MissionPlan {
        &self.plan
    }

    pub fn mission(&self) -> &MissionState {
        &self.mission
    }

    pub fn grid(&self) -> &VoxelGrid {
        &self.grid
    }

    pub fn colormap(&self) -> &ColormapSpec {
        &self.colormap
    }

    pub fn field(&self) -> &RadiationScenario {
        &self.field
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn time_s(&self) -> f64 {
        self.tick as f64 * self.config.tick_dt_s
    }

    pub fn arrivals(&self) -> &[ArrivalRecord] {
        &self.arrivals
    }

    /// Sim time of the successful start command and of reaching a terminal phase.
    pub fn mission_window(&self) -> (Option<f64>, Option<f64>) {
        (self.mission_started_at, self.mission_ended_at)
    }

    fn envelope(&mut self, payload: Payload) -> Envelope {
        Envelope::new(self.seq.next_seq(), self.time_s(), payload)
    }

    pub fn hello(&mut self) -> Envelope {
        self.envelope(Payload::Hello(Hello { role: Role::Drone, name: "radnav-sim".into() }))
    }

    pub fn error_reply(&mut self, code: &str, detail: String, cause_seq: Option<u64>) -> Envelope {
        self.envelope(Payload::Error(ErrorPayload { code: code.into(), detail, cause_seq }))
    }

    pub fn status_payload(&self) -> Payload {
        let phase = match self.mission.phase {
            MissionPhase::Idle => WirePhase::Idle,
            MissionPhase::Ready => WirePhase::Ready,
            MissionPhase::Enroute(_) => WirePhase::Enroute,
            MissionPhase::Holding { .. } => WirePhase::Holding,
            MissionPhase::Completed => WirePhase::Completed,
            MissionPhase::Aborted => WirePhase::Aborted,
        };
        Payload::MissionStatus(MissionStatus {
            phase,
            active_index: self.mission.cursor().map(|i| i as u64),
            visited_ids: self.mission.visit_order.clone(),
            revision: self.plan.revision(),
        })
    }

    pub fn status_event(&mut self) -> Event {
        let payload = self.status_payload();
        Event { kind: LogKind::StatusChange, envelope: self.envelope(payload) }
    }

    /// Applies one operator command atomically. Failed commands change nothing.
    pub fn handle_command(&mut self, env: &Envelope) -> CommandOutcome {
        match self.apply(&env.payload) {
            Ok(()) => {
                let reply = self.envelope(Payload::Ack(Ack { acked_seq: env.seq }));
                let status = self.status_event();
                CommandOutcome { reply, events: vec![status] }
            }
            Err((code, detail)) => CommandOutcome { reply: self.error_reply(code, detail, Some(env.seq)), events: Vec::new() },
        }
    }

    fn check_revision(&self, stated: u64) -> Result<(), (&'static str, String)> {
        if stated == self.plan.revision() {
            Ok(())
        } else {
            Err(("revision_conflict", format!("stated revision {stated}, current {}", self.plan.revision())))
        }
    }

    /// Decodes a wire waypoint and checks it is flyable from this origin.
    fn checked_waypoint(&self, w: &WireWaypoint) -> Result<Waypoint, (&'static str, String)> {
        let waypoint = domain_waypoint(w)?;
        self.origin.to_local(&waypoint.position).map_err(|e| ("invalid_position", e.to_string()))?;
        Ok(waypoint)
    }

    fn apply(&mut self, payload: &Payload) -> Result<(), (&'static str, String)> {
        let mission_err = |e: MissionError| (e.code(), e.to_string());
        match payload {
            Payload::MissionUpload(MissionUpload { revision, waypoints }) => {
                self.check_revision(*revision)?;
                let waypoints = waypoints.iter().map(|w| self.checked_waypoint(w)).collect::<Result<Vec<_>, _>>()?;
                let plan = self.plan.replace(&self.mission, waypoints).map_err(mission_err)?;
                self.mission = MissionState::fresh_for(&plan);
                self.plan = plan;
                self.mission_started_at = None;
                self.mission_ended_at = None;
            }
            Payload::WaypointAdd(WaypointAdd { revision, index, waypoint }) => {
                self.check_revision(*revision)?;
                let w = self.checked_waypoint(waypoint)?;
                let index = index.map(|i| usize::try_from(i).unwrap_or(usize::MAX));
                let plan = self
                    .plan
                    .add_waypoint(&self.mission, w.position, w.hold_time_s, w.speed_override_mps, index)
                    .map_err(mission_err)?;
                self.mission = self.mission.after_edit(&plan);
                self.plan = plan;
            }
            Payload::WaypointUpdate(u) => {
                self.check_revision(u.revision)?;
                let w = self.checked_waypoint(&u.waypoint)?;
                let edit = WaypointEdit {
                    position: Some(w.position),
                    hold_time_s: Some(w.hold_time_s),
                    speed_override_mps: Some(w.speed_override_mps),
                };
                self.plan = self.plan.update_waypoint(&self.mission, w.id, edit).map_err(mission_err)?;
            }
            Payload::WaypointRemove(r) => {
                self.check_revision(r.revision)?;
                let plan = self.plan.remove_waypoint(&self.mission, r.id).map_err(mission_err)?;
                self.mission = self.mission.after_edit(&plan);
                self.plan = plan;
            }
            Payload::MissionStart(s) => {
                self.check_revision(s.revision)?;
                self.mission = self.mission.start(&self.plan).map_err(mission_err)?;
                self.mission_started_at = Some(self.time_s());
            }
            Payload::MissionAbort(_) => {
                if !self.mission.is_terminal() {
                    self.mission_ended_at = Some(self.time_s());
                }
                self.mission = self.mission.abort();
            }
            other => {
                return Err(("bad_request", format!("{} is not an operator command", other.kind().as_str())));
            }
        }
        Ok(())
    }

    fn target(&self) -> Result<Option<Target>, MissionError> {
        let Some(w) = self.mission.active_waypoint(&self.plan) else {
            return Ok(None);
        };
        Ok(Some(Target { position: self.origin.to_local(&w.position)?, speed_limit_mps: w.speed_override_mps }))
    }

    /// Advances the world by one tick and returns the broadcasts it produced.
    pub fn advance(&mut self) -> Vec<Event> {
        let dt = self.config.tick_dt_s;
        let mut events = Vec::new();
        // Waypoints were validated against the tangent range on entry.
        let target = self.target().ok().flatten();
        self.drone = flight::step(&self.drone, &self.params, target.as_ref(), dt).expect("tick_dt_s validated in (0, 1]");
        self.tick += 1;
        let now = self.time_s();
        self.drone.gps_quality = self.config.gps_quality_at(now);

        let before = self.mission.clone();
        if self.drone.mode == FlightMode::LandedFault && self.mission.is_running() {
            self.mission = self.mission.abort();
        } else if let (MissionPhase::Enroute(index), Some(t)) = (self.mission.phase, target) {
            if flight::arrived(&self.drone, &self.params, &t.position) {
                self.arrivals.push(ArrivalRecord {
                    waypoint_id: self.plan.get(index).map_or(0, |w| w.id),
                    index,
                    time_s: now,
                    distance_m: self.drone.true_position.distance(&t.position),
                });
                self.mission = self.mission.on_arrival(&self.plan);
            }
        } else if matches!(self.mission.phase, MissionPhase::Holding { .. }) {
            self.mission = self.mission.advance_hold(&self.plan, dt);
        }
        if self.mission.phase != before.phase || self.mission.visited != before.visited {
            if self.mission.is_terminal() && self.mission_ended_at.is_none() {
                self.mission_ended_at = Some(now);
            }
            events.push(self.status_event());
        }

        if self.tick.is_multiple_of(self.measurement_every) {
            events.extend(self.measure(now));
        }
        if self.tick.is_multiple_of(self.telemetry_every) {
            events.extend(self.telemetry(now));
        }
        if self.tick.is_multiple_of(self.mesh_every) && self.grid.revision() > self.last_mesh_revision {
            events.push(self.mesh_delta());
        }
        events
    }

    fn measure(&mut self, now: f64) -> Option<Event> {
        let dt = self.measurement_every as f64 * self.config.tick_dt_s;
        let reported = flight::noisy_position(&self.drone, &self.params, &mut self.noise_rng);
        let m = radiation::measure(&self.field, &self.drone.true_position, reported, now, dt, &mut self.detector_rng)
            .expect("rates and cadence are validated");
        self.grid.insert_measurement(&m);
        let g = self.origin.to_geodetic(&m.position).ok()?;
        let payload = Payload::RadMeasurement(RadMeasurementMsg {
            t_s: m.timestamp_s,
            lat: g.latitude_deg,
            lon: g.longitude_deg,
            alt: g.altitude_m,
            counts: m.counts,
            dt_s: m.integration_dt_s,
        });
        Some(Event { kind: LogKind::Measurement, envelope: self.envelope(payload) })
    }

    fn telemetry(&mut self, now: f64) -> Option<Event> {
        let active = self.mission.active_waypoint(&self.plan).map(|w| w.id);
        let t = flight::emit_telemetry(&self.drone, &self.params, &self.origin, now, active, &mut self.noise_rng).ok()?;
        let payload = Payload::Telemetry(TelemetryMsg {
            lat: t.reported_position.latitude_deg,
            lon: t.reported_position.longitude_deg,
            alt: t.reported_position.altitude_m,
            battery_pct: t.battery_pct,
            gps_quality: t.gps_quality,
            mode: t.mode,
            active_waypoint_id: t.active_waypoint_id,
        });
        Some(Event { kind: LogKind::Telemetry, envelope: self.envelope(payload) })
    }

    fn mesh_delta(&mut self) -> Event {
        let deltas = self.grid.delta_since(self.last_mesh_revision).expect("last revision never exceeds the grid's");
        self.last_mesh_revision = self.grid.revision();
        let voxels = deltas
            .iter()
            .map(|d| WireVoxel {
                ix: d.index[0] as u64,
                iy: d.index[1] as u64,
                iz: d.index[2] as u64,
                rate: d.rate,
                exposure_s: d.exposure_s,
                rgba: self.colormap.colorize(d.rate),
            })
            .collect();
        let payload = Payload::MeshDelta(MeshDelta { grid_revision: self.grid.revision(), voxels });
        Event { kind: LogKind::MeshDelta, envelope: self.envelope(payload) }
    }

    /// SHA-256 over every observed voxel's (index, counts, exposure).
    pub fn grid_checksum(&self) -> String {
        let mut hasher = Sha256::new();
        for (flat, counts, exposure_ns) in self.grid.accumulator_table() {
            hasher.update((flat as u64).to_le_bytes());
            hasher.update(counts.to_le_bytes());
            hasher.update(exposure_ns.to_le_bytes());
        }
        hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn digest(&self, message_counts: BTreeMap<String, u64>) -> Digest {
        Digest {
            final_phase: self.mission.phase.name().to_string(),
            visited_ids: self.mission.visit_order.clone(),
            plan_revision: self.plan.revision(),
            grid_revision: self.grid.revision(),
            observed_voxels: self.grid.observed_count(),
            grid_checksum: self.grid_checksum(),
            ticks: self.tick,
            message_counts,
        }
    }

    /// Operator commands equivalent to the scenario's `[mission]` table.
    pub fn scripted_commands(&self) -> Vec<Envelope> {
        let Some(script) = &self.config.mission else {
            return Vec::new();
        };
        let waypoints: Vec<WireWaypoint> = script
            .waypoint
            .iter()
            .enumerate()
            .map(|(i, w)| {
                let g = w.resolve(&self.origin).expect("validated with the config");
                WireWaypoint {
                    id: i as u64 + 1,
                    lat: g.latitude_deg,
                    lon: g.longitude_deg,
                    alt: g.altitude_m,
                    hold_s: w.hold_s,
                    speed_mps: w.speed_mps,
                }
            })
            .collect();
        let mut seq = SeqCounter::new();
        let mut out = vec![Envelope::new(
            seq.next_seq(),
            0.0,
            Payload::MissionUpload(MissionUpload { revision: self.plan.revision(), waypoints }),
        )];
        if script.autostart {
            out.push(Envelope::new(
                seq.next_seq(),
                0.0,
                Payload::MissionStart(crate::protocol::MissionStart { revision: self.plan.revision() + 1 }),
            ));
        }
        out
    }
}

/// Wire waypoint to domain waypoint, rejecting invalid coordinates.
pub fn domain_waypoint(w: &WireWaypoint) -> Result<Waypoint, (&'static str, String)> {
    let position = GeodeticCoordinate { latitude_deg: w.lat, longitude_deg: w.lon, altitude_m: w.alt };
    position.validate().map_err(|e| ("invalid_position", e.to_string()))?;
    Ok(Waypoint { id: w.id, position, hold_time_s: w.hold_s, speed_override_mps: w.speed_mps })
}

pub fn wire_waypoint(w: &Waypoint) -> WireWaypoint {
    WireWaypoint {
        id: w.id,
        lat: w.position.latitude_deg,
        lon: w.position.longitude_deg,
        alt: w.position.altitude_m,
        hold_s: w.hold_time_s,
        speed_mps: w.speed_override_mps,
    }
}

/// ENU position of a waypoint, for callers that think in the local frame.
pub fn local_of(origin: &GeoOrigin, w: &Waypoint) -> Option<LocalEnu> {
    origin.to_local(&w.position).ok()
}
