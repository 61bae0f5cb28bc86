//! The ground-station process: a fixed-timestep simulation loop that applies
//! operator commands at tick boundaries, broadcasts telemetry, detector
//! readings and map deltas, and logs everything it sends.

pub mod config;
pub mod engine;
pub mod net;
pub mod sim;

pub use config::{ConfigError, ScenarioConfig};
pub use engine::{replay, replay_reader, Engine, LogError, ReplayReport, StepOutput};
pub use net::{ConnId, Inbound, Listener};
pub use sim::{ArrivalRecord, CommandOutcome, Digest, Event, LogKind, Simulation};

use crate::protocol::{Envelope, ErrorPayload, MessageKind, Payload};
use crossbeam_channel::Sender;
use log::info;
use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::time::{Duration, Instant};
use thiserror::Error;

/// Headless runs without a mission time limit stop after this much sim time.
pub const DEFAULT_HEADLESS_LIMIT_S: f64 = 3600.0;

#[derive(Debug, Error)]
pub enum ServerError {
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: String, source: io::Error },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Log(#[from] LogError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Run as fast as possible and stop once the mission ends.
    pub headless: bool,
    pub max_sim_s: Option<f64>,
    pub log_path: Option<PathBuf>,
}

impl RunOptions {
    fn limit_s(&self) -> Option<f64> {
        match (self.max_sim_s, self.headless) {
            (Some(limit), _) => Some(limit),
            (None, true) => Some(DEFAULT_HEADLESS_LIMIT_S),
            (None, false) => None,
        }
    }
}

fn should_stop(sim: &Simulation, options: &RunOptions) -> bool {
    if options.limit_s().is_some_and(|limit| sim.time_s() >= limit - 1e-9) {
        return true;
    }
    options.headless && sim.mission().is_terminal()
}

fn open_log(options: &RunOptions) -> io::Result<Option<Box<dyn Write + Send>>> {
    let Some(path) = &options.log_path else {
        return Ok(None);
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(Some(Box::new(BufWriter::new(File::create(path)?))))
}

/// Runs the loop with no network: scripted mission commands only.
pub fn run_headless(config: ScenarioConfig, options: &RunOptions) -> Result<(Digest, Engine), ServerError> {
    let options = RunOptions { headless: true, ..options.clone() };
    let sim = Simulation::new(config)?;
    let mut engine = Engine::new(sim, open_log(&options)?)?;
    let digest = drive(&mut engine, None, &options)?;
    Ok((digest, engine))
}

/// Binds `addr`, serves clients and runs the mission loop until it stops.
pub fn run(config: ScenarioConfig, addr: &str, options: &RunOptions) -> Result<Digest, ServerError> {
    let sim = Simulation::new(config)?;
    let listener = Listener::bind(addr).map_err(|source| ServerError::Bind { addr: addr.to_string(), source })?;
    info!("listening on {}", listener.local_addr());
    let mut engine = Engine::new(sim, open_log(options)?)?;
    drive(&mut engine, Some(&listener), options)
}

/// Runs with an already bound listener; used when the caller needs the port first.
pub fn run_with_listener(config: ScenarioConfig, listener: &Listener, options: &RunOptions) -> Result<Digest, ServerError> {
    let sim = Simulation::new(config)?;
    let mut engine = Engine::new(sim, open_log(options)?)?;
    drive(&mut engine, Some(listener), options)
}

/// Envelope for a single client that is not part of the logged stream.
fn unlogged(ts: f64, payload: Payload) -> Envelope {
    Envelope::new(0, ts, payload)
}

fn drive(engine: &mut Engine, listener: Option<&Listener>, options: &RunOptions) -> Result<Digest, ServerError> {
    let dt = engine.sim().config().tick_dt_s;
    let mut clients: BTreeMap<ConnId, Sender<Envelope>> = BTreeMap::new();
    let mut pending: Vec<(Option<ConnId>, Envelope)> =
        engine.sim().scripted_commands().into_iter().map(|e| (None, e)).collect();
    let wall_start = Instant::now();

    loop {
        if let Some(listener) = listener {
            for msg in listener.inbound().try_iter() {
                let ts = engine.sim().time_s();
                match msg {
                    Inbound::Connected { conn, outbox } => {
                        let hello = Payload::Hello(crate::protocol::Hello {
                            role: crate::protocol::Role::Drone,
                            name: "radnav-sim".into(),
                        });
                        let _ = outbox.send(unlogged(ts, hello));
                        let _ = outbox.send(unlogged(ts, engine.sim().status_payload()));
                        clients.insert(conn, outbox);
                    }
                    Inbound::Disconnected { conn } => {
                        clients.remove(&conn);
                    }
                    Inbound::Frame { conn, envelope } => {
                        let kind = envelope.kind();
                        if kind.is_command() {
                            pending.push((Some(conn), envelope));
                        } else if kind != MessageKind::Hello && kind != MessageKind::Ack {
                            if let Some(outbox) = clients.get(&conn) {
                                let err = Payload::Error(ErrorPayload {
                                    code: "bad_request".into(),
                                    detail: format!("{} is not accepted from operators", kind.as_str()),
                                    cause_seq: Some(envelope.seq),
                                });
                                let _ = outbox.send(unlogged(ts, err));
                            }
                        }
                    }
                }
            }
        }

        let (origins, commands): (Vec<_>, Vec<_>) = std::mem::take(&mut pending).into_iter().unzip();
        let out = engine.step(&commands)?;
        for (conn, reply) in origins.into_iter().zip(out.replies) {
            if let Some(outbox) = conn.and_then(|c| clients.get(&c)) {
                let _ = outbox.send(reply);
            }
        }
        broadcast(&mut clients, &out.broadcasts);

        if should_stop(engine.sim(), options) {
            break;
        }
        if !options.headless {
            engine.flush()?;
            let due = wall_start + Duration::from_secs_f64(engine.sim().tick() as f64 * dt);
            if let Some(wait) = due.checked_duration_since(Instant::now()) {
                std::thread::sleep(wait);
            }
        }
    }

    let (status, digest) = engine.finish()?;
    broadcast(&mut clients, &[status]);
    Ok(digest)
}

fn broadcast(clients: &mut BTreeMap<ConnId, Sender<Envelope>>, envelopes: &[Envelope]) {
    if envelopes.is_empty() {
        return;
    }
    clients.retain(|_, outbox| envelopes.iter().all(|e| outbox.send(e.clone()).is_ok()));
}
