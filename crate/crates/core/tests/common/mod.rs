#![allow(dead_code)]

use radnav_core::flight::{DroneParams, FlightMode, GpsQuality};
use radnav_core::geodesy::LocalEnu;
use radnav_core::protocol::*;
use radnav_core::server::config::{FieldConfig, MissionScript, ScriptWaypoint, SourceConfig};
use radnav_core::server::ScenarioConfig;
use rand::Rng;

/// Textbook WGS84 formulas written independently of the library: closed-form
/// ECEF -> geodetic (Heikkinen) and the explicit ENU rotation.
pub mod oracle {
    const A: f64 = 6_378_137.0;
    const INV_F: f64 = 298.257_223_563;

    fn b() -> f64 {
        A - A / INV_F
    }

    pub fn ecef(lat_deg: f64, lon_deg: f64, h: f64) -> [f64; 3] {
        let (lat, lon) = (lat_deg.to_radians(), lon_deg.to_radians());
        let b = b();
        let n = A * A / (A * A * lat.cos().powi(2) + b * b * lat.sin().powi(2)).sqrt();
        [
            (n + h) * lat.cos() * lon.cos(),
            (n + h) * lat.cos() * lon.sin(),
            (b * b / (A * A) * n + h) * lat.sin(),
        ]
    }

    pub fn geodetic(p: [f64; 3]) -> (f64, f64, f64) {
        let [x, y, z] = p;
        let b = b();
        let e2 = 1.0 - (b * b) / (A * A);
        let ep2 = (A * A) / (b * b) - 1.0;
        let r = x.hypot(y);
        let f = 54.0 * b * b * z * z;
        let g = r * r + (1.0 - e2) * z * z - e2 * (A * A - b * b);
        let c = e2 * e2 * f * r * r / (g * g * g);
        let s = (1.0 + c + (c * c + 2.0 * c).sqrt()).cbrt();
        let k = s + 1.0 + 1.0 / s;
        let pp = f / (3.0 * k * k * g * g);
        let q = (1.0 + 2.0 * e2 * e2 * pp).sqrt();
        let r0 = -(pp * e2 * r) / (1.0 + q)
            + (0.5 * A * A * (1.0 + 1.0 / q) - pp * (1.0 - e2) * z * z / (q * (1.0 + q)) - 0.5 * pp * r * r).sqrt();
        let u = ((r - e2 * r0).powi(2) + z * z).sqrt();
        let v = ((r - e2 * r0).powi(2) + (1.0 - e2) * z * z).sqrt();
        let z0 = b * b * z / (A * v);
        let h = u * (1.0 - b * b / (A * v));
        let lat = (z + ep2 * z0).atan2(r);
        let lon = y.atan2(x);
        (lat.to_degrees(), lon.to_degrees(), h)
    }

    /// ENU offset of `target` from `origin`, both geodetic.
    pub fn enu(origin: (f64, f64, f64), target: (f64, f64, f64)) -> [f64; 3] {
        let o = ecef(origin.0, origin.1, origin.2);
        let t = ecef(target.0, target.1, target.2);
        let (dx, dy, dz) = (t[0] - o[0], t[1] - o[1], t[2] - o[2]);
        let (lat, lon) = (origin.0.to_radians(), origin.1.to_radians());
        let e = -lon.sin() * dx + lon.cos() * dy;
        let n = -lat.sin() * lon.cos() * dx - lat.sin() * lon.sin() * dy + lat.cos() * dz;
        let u = lat.cos() * lon.cos() * dx + lat.cos() * lon.sin() * dy + lat.sin() * dz;
        [e, n, u]
    }

    pub fn distance(a: [f64; 3], b: [f64; 3]) -> f64 {
        ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
    }
}

/// Latitude, longitude (degrees) and altitude (m).
pub type Lla = (f64, f64, f64);

/// Twenty (origin, target) pairs spread over latitudes, hemispheres and the antimeridian.
pub const ORACLE_POINTS: [(Lla, Lla); 20] = [
    ((37.875, -122.259, 0.0), (37.876, -122.258, 10.0)),
    ((37.875, -122.259, 0.0), (37.8302, -122.31, 120.0)),
    ((0.0, 0.0, 0.0), (0.01, 0.01, 0.0)),
    ((0.0, 0.0, 0.0), (-0.02, 0.03, 500.0)),
    ((51.4779, -0.0015, 45.0), (51.5007, -0.1246, 30.0)),
    ((-33.8568, 151.2153, 5.0), (-33.8523, 151.2108, 134.0)),
    ((35.6586, 139.7454, 40.0), (35.7101, 139.8107, 600.0)),
    ((64.1466, -21.9426, 0.0), (64.2, -21.8, -20.0)),
    ((-77.846, 166.676, 10.0), (-77.9, 166.5, 300.0)),
    ((89.5, 0.0, 0.0), (89.6, 45.0, 100.0)),
    ((-89.9, 120.0, 2800.0), (-89.95, -60.0, 2830.0)),
    ((0.5, 179.99, 0.0), (0.52, -179.98, 15.0)),
    ((-12.0464, -77.0428, 150.0), (-12.1, -77.0, 80.0)),
    ((19.4326, -99.1332, 2240.0), (19.43, -99.2, 2300.0)),
    ((27.9881, 86.925, 8848.0), (28.0, 86.9, 5300.0)),
    ((-0.2299, -78.5249, 2850.0), (-0.25, -78.5, 2800.0)),
    ((60.1699, 24.9384, 20.0), (60.2, 25.05, 0.0)),
    ((1.3521, 103.8198, 15.0), (1.29, 103.85, 5.0)),
    ((-54.8019, -68.303, 10.0), (-54.75, -68.4, 400.0)),
    ((45.0, 90.0, -100.0), (45.3, 90.4, 1000.0)),
];

pub fn local(e: f64, n: f64, u: f64) -> LocalEnu {
    LocalEnu::new(e, n, u)
}

/// Lateral waypoints of a `rows` x `cols` lawnmower over a square centered on the origin.
pub fn lawnmower(side_m: f64, rows: usize, cols: usize, up: f64) -> Vec<(f64, f64, f64)> {
    let step = |n: usize, i: usize| -side_m / 2.0 + side_m * i as f64 / (n - 1) as f64;
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let north = step(rows, r);
        for c in 0..cols {
            let c = if r % 2 == 0 { c } else { cols - 1 - c };
            out.push((step(cols, c), north, up));
        }
    }
    out
}

/// Source-only count rate of 50/s at 10 m.
pub const LOCALIZATION_STRENGTH: f64 = 20_000.0 * std::f64::consts::PI;
/// On the middle lawnmower row, off the waypoint grid and mid-voxel.
pub const LOCALIZATION_SOURCE: [f64; 3] = [12.6, 0.0, 0.0];
/// Survey speed for the localization mission.
pub const SURVEY_SPEED_MPS: f64 = 0.25;

pub fn localization_config(seed: u64) -> ScenarioConfig {
    let waypoints = lawnmower(100.0, 5, 5, 10.0)
        .into_iter()
        .map(|(e, n, u)| ScriptWaypoint { speed_mps: Some(SURVEY_SPEED_MPS), ..ScriptWaypoint::local(e, n, u) })
        .collect();
    let [east, north, up] = LOCALIZATION_SOURCE;
    ScenarioConfig {
        seed,
        drone: DroneParams { battery_drain_pct_per_s: 0.02, start_position: local(-50.0, -50.0, 0.0), ..DroneParams::default() },
        field: FieldConfig {
            background: 0.5,
            source: vec![SourceConfig { east, north, up, strength: LOCALIZATION_STRENGTH }],
            ..FieldConfig::default()
        },
        mission: Some(MissionScript { autostart: true, waypoint: waypoints }),
        ..ScenarioConfig::default()
    }
}

/// A scenario flying `waypoints` (local frame) from the origin.
pub fn script_config(seed: u64, waypoints: Vec<ScriptWaypoint>) -> ScenarioConfig {
    ScenarioConfig {
        seed,
        mission: Some(MissionScript { autostart: true, waypoint: waypoints }),
        ..ScenarioConfig::default()
    }
}

/// Trapezoid-profile time bound for flying `legs` (distance, cruise speed) with accel `a`.
pub fn kinematic_bound_s(legs: &[(f64, f64)], accel: f64) -> f64 {
    legs.iter().map(|&(d, v)| d / v + v / accel).sum()
}

fn finite_f64<R: Rng>(rng: &mut R) -> f64 {
    match rng.random_range(0..5) {
        0 => 0.0,
        1 => rng.random_range(-1000..1000) as f64,
        2 => rng.random_range(-1e3..1e3),
        3 => rng.random_range(-1.0..1.0) * 10f64.powi(rng.random_range(-300..300)),
        _ => loop {
            let v = f64::from_bits(rng.random());
            if v.is_finite() {
                break v;
            }
        },
    }
}

fn any_string<R: Rng>(rng: &mut R) -> String {
    const ALPHABET: &[char] = &['a', 'Z', '0', ' ', '"', '\\', '/', '\n', '\t', '\u{1}', 'é', '∑', '🛰', '\u{7f}'];
    let len = rng.random_range(0..12);
    (0..len).map(|_| ALPHABET[rng.random_range(0..ALPHABET.len())]).collect()
}

fn any_u64<R: Rng>(rng: &mut R) -> u64 {
    match rng.random_range(0..3) {
        0 => rng.random_range(0..10),
        1 => rng.random(),
        _ => u64::MAX,
    }
}

fn any_waypoint<R: Rng>(rng: &mut R) -> WireWaypoint {
    WireWaypoint {
        id: any_u64(rng),
        lat: finite_f64(rng),
        lon: finite_f64(rng),
        alt: finite_f64(rng),
        hold_s: finite_f64(rng),
        speed_mps: rng.random_bool(0.5).then(|| finite_f64(rng)),
    }
}

fn pick<T: Copy, R: Rng>(rng: &mut R, options: &[T]) -> T {
    options[rng.random_range(0..options.len())]
}

pub fn random_payload<R: Rng>(rng: &mut R, kind: MessageKind) -> Payload {
    match kind {
        MessageKind::Hello => Payload::Hello(Hello { role: pick(rng, &[Role::Operator, Role::Drone]), name: any_string(rng) }),
        MessageKind::Ack => Payload::Ack(Ack { acked_seq: any_u64(rng) }),
        MessageKind::Error => Payload::Error(ErrorPayload {
            code: any_string(rng),
            detail: any_string(rng),
            cause_seq: rng.random_bool(0.5).then(|| any_u64(rng)),
        }),
        MessageKind::MissionUpload => Payload::MissionUpload(MissionUpload {
            revision: any_u64(rng),
            waypoints: (0..rng.random_range(0..5)).map(|_| any_waypoint(rng)).collect(),
        }),
        MessageKind::WaypointAdd => Payload::WaypointAdd(WaypointAdd {
            revision: any_u64(rng),
            index: rng.random_bool(0.5).then(|| any_u64(rng)),
            waypoint: any_waypoint(rng),
        }),
        MessageKind::WaypointUpdate => Payload::WaypointUpdate(WaypointUpdate { revision: any_u64(rng), waypoint: any_waypoint(rng) }),
        MessageKind::WaypointRemove => Payload::WaypointRemove(WaypointRemove { revision: any_u64(rng), id: any_u64(rng) }),
        MessageKind::MissionStart => Payload::MissionStart(MissionStart { revision: any_u64(rng) }),
        MessageKind::MissionAbort => Payload::MissionAbort(MissionAbort {}),
        MessageKind::Telemetry => Payload::Telemetry(TelemetryMsg {
            lat: finite_f64(rng),
            lon: finite_f64(rng),
            alt: finite_f64(rng),
            battery_pct: finite_f64(rng),
            gps_quality: pick(rng, &[GpsQuality::RtkFixed, GpsQuality::RtkFloat, GpsQuality::GpsOnly, GpsQuality::None]),
            mode: pick(
                rng,
                &[FlightMode::Grounded, FlightMode::Holding, FlightMode::Enroute, FlightMode::Returning, FlightMode::LandedFault],
            ),
            active_waypoint_id: rng.random_bool(0.5).then(|| any_u64(rng)),
        }),
        MessageKind::RadMeasurement => Payload::RadMeasurement(RadMeasurementMsg {
            t_s: finite_f64(rng),
            lat: finite_f64(rng),
            lon: finite_f64(rng),
            alt: finite_f64(rng),
            counts: any_u64(rng),
            dt_s: finite_f64(rng),
        }),
        MessageKind::MeshDelta => Payload::MeshDelta(MeshDelta {
            grid_revision: any_u64(rng),
            voxels: (0..rng.random_range(0..4))
                .map(|_| WireVoxel {
                    ix: any_u64(rng),
                    iy: any_u64(rng),
                    iz: any_u64(rng),
                    rate: finite_f64(rng),
                    exposure_s: finite_f64(rng),
                    rgba: rng.random(),
                })
                .collect(),
        }),
        MessageKind::MissionStatus => Payload::MissionStatus(MissionStatus {
            phase: pick(
                rng,
                &[WirePhase::Idle, WirePhase::Ready, WirePhase::Enroute, WirePhase::Holding, WirePhase::Completed, WirePhase::Aborted],
            ),
            active_index: rng.random_bool(0.5).then(|| any_u64(rng)),
            visited_ids: (0..rng.random_range(0..5)).map(|_| any_u64(rng)).collect(),
            revision: any_u64(rng),
        }),
    }
}

pub fn random_envelope<R: Rng>(rng: &mut R) -> Envelope {
    let kind = MessageKind::ALL[rng.random_range(0..MessageKind::ALL.len())];
    Envelope::new(any_u64(rng), finite_f64(rng), random_payload(rng, kind))
}

/// One representative envelope per message kind, as frozen in `tests/golden`.
pub fn golden_envelopes() -> Vec<(&'static str, Envelope)> {
    let wp = |id, lat, lon, alt, hold_s, speed_mps| WireWaypoint { id, lat, lon, alt, hold_s, speed_mps };
    vec![
        ("hello", Envelope::new(1, 0.0, Payload::Hello(Hello { role: Role::Operator, name: "console".into() }))),
        ("ack", Envelope::new(7, 12.3, Payload::Ack(Ack { acked_seq: 4 }))),
        (
            "error",
            Envelope::new(
                8,
                12.3,
                Payload::Error(ErrorPayload {
                    code: "revision_conflict".into(),
                    detail: "plan is at revision 3, command was for 2".into(),
                    cause_seq: Some(5),
                }),
            ),
        ),
        (
            "mission_upload",
            Envelope::new(
                2,
                0.5,
                Payload::MissionUpload(MissionUpload {
                    revision: 0,
                    waypoints: vec![
                        wp(1, 37.875, -122.259, 10.0, 0.0, None),
                        wp(2, 37.8751, -122.2588, 12.5, 5.0, Some(2.0)),
                    ],
                }),
            ),
        ),
        (
            "waypoint_add",
            Envelope::new(
                3,
                1.0,
                Payload::WaypointAdd(WaypointAdd {
                    revision: 1,
                    index: Some(1),
                    waypoint: wp(0, 37.87505, -122.25895, 10.0, 2.0, None),
                }),
            ),
        ),
        (
            "waypoint_update",
            Envelope::new(
                4,
                1.5,
                Payload::WaypointUpdate(WaypointUpdate {
                    revision: 2,
                    waypoint: wp(2, 37.8752, -122.2587, 15.0, 0.0, Some(1.5)),
                }),
            ),
        ),
        ("waypoint_remove", Envelope::new(5, 2.0, Payload::WaypointRemove(WaypointRemove { revision: 3, id: 3 }))),
        ("mission_start", Envelope::new(6, 2.5, Payload::MissionStart(MissionStart { revision: 4 }))),
        ("mission_abort", Envelope::new(9, 40.0, Payload::MissionAbort(MissionAbort {}))),
        (
            "telemetry",
            Envelope::new(
                120,
                12.0,
                Payload::Telemetry(TelemetryMsg {
                    lat: 37.875012345678,
                    lon: -122.258901234567,
                    alt: 9.987,
                    battery_pct: 99.4,
                    gps_quality: GpsQuality::RtkFixed,
                    mode: FlightMode::Enroute,
                    active_waypoint_id: Some(2),
                }),
            ),
        ),
        (
            "rad_measurement",
            Envelope::new(
                121,
                12.0,
                Payload::RadMeasurement(RadMeasurementMsg {
                    t_s: 12.0,
                    lat: 37.875012,
                    lon: -122.258901,
                    alt: 10.01,
                    counts: 27,
                    dt_s: 0.5,
                }),
            ),
        ),
        (
            "mesh_delta",
            Envelope::new(
                122,
                12.0,
                Payload::MeshDelta(MeshDelta {
                    grid_revision: 24,
                    voxels: vec![
                        WireVoxel { ix: 50, iy: 50, iz: 35, rate: 54.0, exposure_s: 0.5, rgba: [138, 255, 0, 200] },
                        WireVoxel { ix: 51, iy: 50, iz: 35, rate: 0.0, exposure_s: 1.0, rgba: [0, 0, 255, 200] },
                    ],
                }),
            ),
        ),
        (
            "mission_status",
            Envelope::new(
                123,
                12.1,
                Payload::MissionStatus(MissionStatus {
                    phase: WirePhase::Holding,
                    active_index: Some(1),
                    visited_ids: vec![1],
                    revision: 4,
                }),
            ),
        ),
    ]
}

/// One random corruption of `base`: noise, truncation, bit flips, splices or token swaps.
pub fn mutate_bytes<R: Rng>(rng: &mut R, base: &[u8]) -> Vec<u8> {
    let mut bytes = base.to_vec();
    match rng.random_range(0..6) {
        0 => {
            let len = rng.random_range(0..64);
            bytes = (0..len).map(|_| rng.random()).collect();
        }
        1 => bytes.truncate(rng.random_range(0..=bytes.len())),
        2 => {
            for _ in 0..rng.random_range(1..4) {
                if !bytes.is_empty() {
                    let i = rng.random_range(0..bytes.len());
                    bytes[i] ^= 1 << rng.random_range(0..8);
                }
            }
        }
        3 => {
            let i = rng.random_range(0..=bytes.len());
            let junk: &[u8] = [&b"{"[..], b"}", b"[", b"\"", b",", b":", b"null", b"1e999", b"-0", b"\\u0000", b"\xff"]
                [rng.random_range(0..11)];
            bytes.splice(i..i, junk.iter().copied());
        }
        4 => {
            if !bytes.is_empty() {
                let a = rng.random_range(0..bytes.len());
                let b = rng.random_range(a..=bytes.len());
                bytes.drain(a..b);
            }
        }
        _ => {
            let text = String::from_utf8_lossy(&bytes).into_owned();
            let swaps = [("1", "-1"), ("\"", "'"), ("true", "1"), ("0.5", "\"0.5\""), ("operator", "admin"), ("[", "{")];
            let (from, to) = swaps[rng.random_range(0..swaps.len())];
            bytes = text.replacen(from, to, 1).into_bytes();
        }
    }
    bytes
}

pub fn golden_dir() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

pub mod missions {
    use super::{kinematic_bound_s, script_config};
    use radnav_core::geodesy::LocalEnu;
    use radnav_core::mission::MissionPhase;
    use radnav_core::protocol::{Envelope, Payload, WaypointAdd, WaypointRemove, WaypointUpdate, WireWaypoint};
    use radnav_core::server::config::ScriptWaypoint;
    use radnav_core::server::sim::{local_of, wire_waypoint};
    use radnav_core::server::Simulation;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub const TICK_CAP: u64 = 50_000;

    pub fn started(seed: u64, waypoints: Vec<ScriptWaypoint>) -> Simulation {
        let mut sim = Simulation::new(script_config(seed, waypoints)).expect("valid scenario");
        for cmd in sim.scripted_commands() {
            let outcome = sim.handle_command(&cmd);
            assert!(outcome.accepted(), "scripted command rejected: {:?}", outcome.error_code());
        }
        sim
    }

    pub fn random_waypoints(rng: &mut ChaCha8Rng, n: usize) -> Vec<ScriptWaypoint> {
        (0..n)
            .map(|_| ScriptWaypoint {
                hold_s: if rng.random_bool(0.5) { 0.0 } else { rng.random_range(0.0..4.0) },
                speed_mps: rng.random_bool(0.3).then(|| rng.random_range(1.0..5.0)),
                ..ScriptWaypoint::local(rng.random_range(-80.0..80.0), rng.random_range(-80.0..80.0), rng.random_range(2.0..40.0))
            })
            .collect()
    }

    #[derive(Debug, Clone, PartialEq)]
    pub struct OrderedReport {
        pub completion_s: f64,
        pub bound_s: f64,
        pub worst_arrival_m: f64,
    }

    /// Flies a random 5-waypoint mission and checks order, arrival radius and time bound.
    pub fn ordered_mission(seed: u64) -> Result<OrderedReport, String> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let waypoints = random_waypoints(&mut rng, 5);
        let mut sim = started(seed, waypoints.clone());
        while !sim.mission().is_terminal() && sim.tick() < TICK_CAP {
            sim.advance();
        }
        let params = sim.config().drone;
        let ids: Vec<u64> = sim.plan().waypoints().iter().map(|w| w.id).collect();
        if sim.mission().phase != MissionPhase::Completed {
            return Err(format!("seed {seed}: ended in {:?}", sim.mission().phase));
        }
        if sim.mission().visit_order != ids {
            return Err(format!("seed {seed}: visited {:?}, plan {:?}", sim.mission().visit_order, ids));
        }
        let mut worst = 0.0f64;
        for a in sim.arrivals() {
            worst = worst.max(a.distance_m);
            if a.distance_m > params.arrival_radius_m {
                return Err(format!("seed {seed}: arrival {} m from waypoint {}", a.distance_m, a.waypoint_id));
            }
        }
        let mut legs = Vec::new();
        let mut from = params.start_position;
        for w in &waypoints {
            let to = LocalEnu::new(w.east.unwrap(), w.north.unwrap(), w.up.unwrap());
            let v = w.speed_mps.map_or(params.max_speed_mps, |s| s.min(params.max_speed_mps));
            legs.push((from.distance(&to), v));
            from = to;
        }
        let holds: f64 = waypoints.iter().map(|w| w.hold_s).sum();
        let bound_s = (kinematic_bound_s(&legs, params.max_accel_mps2) + holds) * 1.1;
        let (start, end) = sim.mission_window();
        let completion_s = end.unwrap() - start.unwrap();
        if completion_s > bound_s {
            return Err(format!("seed {seed}: took {completion_s} s, bound {bound_s} s"));
        }
        Ok(OrderedReport { completion_s, bound_s, worst_arrival_m: worst })
    }

    #[derive(Debug, Clone, Copy)]
    pub enum EditKind {
        Update,
        Remove,
        Add,
        StaleUpdate,
    }

    #[derive(Debug, Clone, Copy)]
    pub struct EditOp {
        pub delay_ticks: u32,
        pub kind: EditKind,
        pub pick: usize,
        pub to: LocalEnu,
    }

    pub fn random_ops(rng: &mut ChaCha8Rng, n: usize) -> Vec<EditOp> {
        (0..n)
            .map(|_| EditOp {
                delay_ticks: rng.random_range(0..80),
                kind: [EditKind::Update, EditKind::Remove, EditKind::Add, EditKind::StaleUpdate][rng.random_range(0..4)],
                pick: rng.random_range(0..16),
                to: LocalEnu::new(rng.random_range(-60.0..60.0), rng.random_range(-60.0..60.0), rng.random_range(2.0..30.0)),
            })
            .collect()
    }

    #[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
    pub struct EditStats {
        pub accepted: usize,
        pub rejected_behind_cursor: usize,
        pub rejected_stale: usize,
        pub arrivals_checked: usize,
    }

    /// Advances one tick, checking every new arrival against the plan as it is now.
    fn tick(sim: &mut Simulation, stats: &mut EditStats) -> Result<(), String> {
        let before = sim.arrivals().len();
        let was_terminal = sim.mission().is_terminal();
        sim.advance();
        let radius = sim.config().drone.arrival_radius_m;
        for a in &sim.arrivals()[before..] {
            let w = sim.plan().get(a.index).ok_or("arrival at a missing index")?;
            if w.id != a.waypoint_id {
                return Err(format!("arrived at id {} but plan has {} at index {}", a.waypoint_id, w.id, a.index));
            }
            let target = local_of(sim.origin(), w).unwrap();
            let d = sim.drone().true_position.distance(&target);
            if d > radius + 1e-9 {
                return Err(format!("arrival {d} m from the current position of waypoint {}", w.id));
            }
            stats.arrivals_checked += 1;
        }
        if !was_terminal && sim.mission().phase == MissionPhase::Completed {
            let ids: Vec<u64> = sim.plan().waypoints().iter().map(|w| w.id).collect();
            if sim.mission().visit_order != ids {
                return Err(format!("completed with visits {:?} but plan {:?}", sim.mission().visit_order, ids));
            }
        }
        Ok(())
    }

    fn wire_at(sim: &Simulation, id: u64, to: LocalEnu) -> WireWaypoint {
        let g = sim.origin().to_geodetic(&to).unwrap();
        WireWaypoint { id, lat: g.latitude_deg, lon: g.longitude_deg, alt: g.altitude_m, hold_s: 0.5, speed_mps: None }
    }

    /// Runs a 5-waypoint mission while applying `ops`, checking that edits at
    /// or behind the cursor are refused without side effects and that accepted
    /// edits are what the vehicle then flies.
    pub fn editing_scenario(seed: u64, ops: &[EditOp]) -> Result<EditStats, String> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sim = started(seed, random_waypoints(&mut rng, 5));
        let mut stats = EditStats::default();
        for (n, op) in ops.iter().enumerate() {
            for _ in 0..op.delay_ticks {
                tick(&mut sim, &mut stats)?;
            }
            let plan = sim.plan().clone();
            let state = sim.mission().clone();
            let revision = plan.revision();
            let cursor = state.cursor();
            let (payload, protected, stale) = match op.kind {
                EditKind::Add => {
                    let index = op.pick % (plan.len() + 1);
                    let p = Payload::WaypointAdd(WaypointAdd {
                        revision,
                        index: Some(index as u64),
                        waypoint: wire_at(&sim, 0, op.to),
                    });
                    (p, cursor.is_some_and(|c| index <= c), false)
                }
                kind => {
                    if plan.is_empty() {
                        continue;
                    }
                    let index = op.pick % plan.len();
                    let id = plan.waypoints()[index].id;
                    let protected = state.visited.contains(&id) || cursor.is_some_and(|c| index <= c);
                    match kind {
                        EditKind::Remove => (Payload::WaypointRemove(WaypointRemove { revision, id }), protected, false),
                        EditKind::StaleUpdate => (
                            Payload::WaypointUpdate(WaypointUpdate { revision: revision.wrapping_sub(1), waypoint: wire_at(&sim, id, op.to) }),
                            protected,
                            true,
                        ),
                        _ => (Payload::WaypointUpdate(WaypointUpdate { revision, waypoint: wire_at(&sim, id, op.to) }), protected, false),
                    }
                }
            };
            let cmd = Envelope::new(100 + n as u64, sim.time_s(), payload.clone());
            let outcome = sim.handle_command(&cmd);
            let unchanged = *sim.plan() == plan && *sim.mission() == state;
            let ctx = format!("seed {seed} op {n} {:?} at tick {}", op.kind, sim.tick());
            if stale {
                if outcome.error_code() != Some("revision_conflict") || !unchanged {
                    return Err(format!("{ctx}: stale edit got {:?}", outcome.error_code()));
                }
                stats.rejected_stale += 1;
            } else if protected {
                if outcome.error_code() != Some("edit_behind_cursor") || !unchanged {
                    return Err(format!("{ctx}: protected edit got {:?}, unchanged={unchanged}", outcome.error_code()));
                }
                stats.rejected_behind_cursor += 1;
            } else {
                if !outcome.accepted() {
                    return Err(format!("{ctx}: future edit refused with {:?}", outcome.error_code()));
                }
                if sim.plan().revision() != revision + 1 {
                    return Err(format!("{ctx}: revision did not advance"));
                }
                match &payload {
                    Payload::WaypointUpdate(u) => {
                        let w = sim.plan().waypoints().iter().find(|w| w.id == u.waypoint.id).unwrap();
                        if wire_waypoint(w) != u.waypoint {
                            return Err(format!("{ctx}: update not reflected"));
                        }
                    }
                    Payload::WaypointRemove(r) if sim.plan().index_of(r.id).is_some() => {
                        return Err(format!("{ctx}: removed waypoint still present"));
                    }
                    _ => {}
                }
                stats.accepted += 1;
            }
        }
        while !sim.mission().is_terminal() && sim.tick() < TICK_CAP {
            tick(&mut sim, &mut stats)?;
        }
        if sim.mission().phase != MissionPhase::Completed {
            return Err(format!("seed {seed}: mission ended in {:?}", sim.mission().phase));
        }
        Ok(stats)
    }
}
