//! Tick driver with the JSONL mission log, and log replay.
//!
//! The first log line carries the resolved scenario:
//!
//! ```text
//! {"tick":0,"kind":"config","config":{...}}
//! ```
//!
//! Every later line is one envelope:
//!
//! ```text
//! {"tick":12,"kind":"telemetry","env":{"v":1,"seq":40,...}}
//! ```
//!
//! The run always ends with a `status_change` record stamped with the final
//! tick count, which is how replay knows how long to run.

use super::config::{ConfigError, ScenarioConfig};
use super::sim::{Digest, Event, LogKind, Simulation};
use crate::protocol::{Envelope, ProtocolError};
use serde_json::Value;
use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LogError {
    #[error("corrupt log at line {line}: {reason}")]
    CorruptLog { line: usize, reason: String },
    #[error("log scenario is invalid: {0}")]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Output of one tick.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepOutput {
    /// One reply per input command, in input order.
    pub replies: Vec<Envelope>,
    /// Everything to send to all connected clients, in emission order.
    pub broadcasts: Vec<Envelope>,
}

pub struct Engine {
    sim: Simulation,
    log: Option<Box<dyn Write + Send>>,
    counts: BTreeMap<String, u64>,
}

impl Engine {
    /// Wraps a fresh simulation; writes the config header when logging.
    pub fn new(sim: Simulation, log: Option<Box<dyn Write + Send>>) -> io::Result<Self> {
        let mut engine = Self { sim, log, counts: BTreeMap::new() };
        if let Some(w) = engine.log.as_mut() {
            let config = serde_json::to_string(engine.sim.config()).map_err(io::Error::other)?;
            writeln!(w, "{{\"tick\":0,\"kind\":\"config\",\"config\":{config}}}")?;
        }
        Ok(engine)
    }

    pub fn sim(&self) -> &Simulation {
        &self.sim
    }

    pub fn sim_mut(&mut self) -> &mut Simulation {
        &mut self.sim
    }

    pub fn message_counts(&self) -> &BTreeMap<String, u64> {
        &self.counts
    }

    fn record(&mut self, tick: u64, kind: LogKind, env: &Envelope) -> io::Result<()> {
        *self.counts.entry(kind.as_str().to_string()).or_default() += 1;
        if let Some(w) = self.log.as_mut() {
            let body = env.encode_string().map_err(io::Error::other)?;
            writeln!(w, "{{\"tick\":{tick},\"kind\":\"{}\",\"env\":{body}}}", kind.as_str())?;
        }
        Ok(())
    }

    /// Applies `commands` in order, then advances one tick.
    pub fn step(&mut self, commands: &[Envelope]) -> io::Result<StepOutput> {
        let tick = self.sim.tick();
        let mut out = StepOutput::default();
        for cmd in commands {
            self.record(tick, LogKind::CommandIn, cmd)?;
            let outcome = self.sim.handle_command(cmd);
            out.replies.push(outcome.reply);
            self.emit(tick, outcome.events, &mut out)?;
        }
        let events = self.sim.advance();
        self.emit(tick, events, &mut out)?;
        Ok(out)
    }

    fn emit(&mut self, tick: u64, events: Vec<Event>, out: &mut StepOutput) -> io::Result<()> {
        for e in events {
            self.record(tick, e.kind, &e.envelope)?;
            out.broadcasts.push(e.envelope);
        }
        Ok(())
    }

    /// Emits the closing status record, flushes the log and digests the run.
    pub fn finish(&mut self) -> io::Result<(Envelope, Digest)> {
        let tick = self.sim.tick();
        let status = self.sim.status_event();
        self.record(tick, LogKind::StatusChange, &status.envelope)?;
        if let Some(w) = self.log.as_mut() {
            w.flush()?;
        }
        Ok((status.envelope, self.sim.digest(self.counts.clone())))
    }

    pub fn flush(&mut self) -> io::Result<()> {
        match self.log.as_mut() {
            Some(w) => w.flush(),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplayReport {
    pub digest: Digest,
    /// Number of records (excluding the header) in the original log.
    pub records: usize,
    /// Records whose regenerated bytes differ from the original log.
    pub divergent_records: usize,
}

struct ParsedLog {
    config: ScenarioConfig,
    commands: BTreeMap<u64, Vec<Envelope>>,
    final_tick: u64,
    lines: Vec<String>,
}

fn corrupt(line: usize, reason: impl Into<String>) -> LogError {
    LogError::CorruptLog { line, reason: reason.into() }
}

fn parse_log<R: BufRead>(reader: R) -> Result<ParsedLog, LogError> {
    let mut config = None;
    let mut commands: BTreeMap<u64, Vec<Envelope>> = BTreeMap::new();
    let mut last_tick = 0u64;
    let mut last_kind = None;
    let mut lines = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let n = i + 1;
        let line = line?;
        let value: Value = serde_json::from_str(&line).map_err(|e| corrupt(n, e.to_string()))?;
        let tick = value.get("tick").and_then(Value::as_u64).ok_or_else(|| corrupt(n, "missing tick"))?;
        let kind = value.get("kind").and_then(Value::as_str).ok_or_else(|| corrupt(n, "missing kind"))?;
        if n == 1 {
            if kind != "config" {
                return Err(corrupt(n, "first record must be the scenario config"));
            }
            let raw = value.get("config").cloned().ok_or_else(|| corrupt(n, "missing config"))?;
            let parsed: ScenarioConfig = serde_json::from_value(raw).map_err(|e| corrupt(n, e.to_string()))?;
            config = Some(parsed);
            lines.push(line);
            continue;
        }
        let kind = LogKind::parse(kind).ok_or_else(|| corrupt(n, format!("unknown record kind {kind:?}")))?;
        if tick < last_tick {
            return Err(corrupt(n, "tick went backwards"));
        }
        let env = value.get("env").ok_or_else(|| corrupt(n, "missing env"))?;
        let bytes = serde_json::to_vec(env).map_err(|e| corrupt(n, e.to_string()))?;
        let env = Envelope::decode(&bytes).map_err(|e: ProtocolError| corrupt(n, e.to_string()))?;
        if kind == LogKind::CommandIn {
            commands.entry(tick).or_default().push(env);
        }
        last_tick = tick;
        last_kind = Some(kind);
        lines.push(line);
    }
    let config = config.ok_or_else(|| corrupt(1, "empty log"))?;
    if last_kind != Some(LogKind::StatusChange) {
        return Err(corrupt(lines.len(), "log does not end with the closing status record"));
    }
    if commands.keys().next_back().is_some_and(|&t| t >= last_tick) {
        return Err(corrupt(lines.len(), "command recorded at or after the final tick"));
    }
    Ok(ParsedLog { config, commands, final_tick: last_tick, lines })
}

/// Shared sink so the regenerated log can be inspected after the engine is done.
#[derive(Clone, Default)]
struct SharedBuf(std::sync::Arc<std::sync::Mutex<Vec<u8>>>);

impl Write for SharedBuf {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.0.lock().expect("replay buffer lock").extend_from_slice(buf);
        Ok(buf.len())
    }
    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

/// Re-runs a logged mission from its recorded commands.
pub fn replay_reader<R: BufRead>(reader: R) -> Result<ReplayReport, LogError> {
    let parsed = parse_log(reader)?;
    let sim = Simulation::new(parsed.config)?;
    let buf = SharedBuf::default();
    let mut engine = Engine::new(sim, Some(Box::new(buf.clone())))?;
    let empty = Vec::new();
    for tick in 0..parsed.final_tick {
        let cmds = parsed.commands.get(&tick).unwrap_or(&empty);
        engine.step(cmds)?;
    }
    let (_, digest) = engine.finish()?;
    drop(engine);
    let regenerated = String::from_utf8(std::mem::take(&mut *buf.0.lock().expect("replay buffer lock")))
        .expect("log lines are UTF-8");
    let regenerated: Vec<&str> = regenerated.lines().collect();
    let mut divergent = parsed
        .lines
        .iter()
        .zip(&regenerated)
        .skip(1)
        .filter(|(a, b)| a.as_str() != **b)
        .count();
    divergent += parsed.lines.len().abs_diff(regenerated.len());
    Ok(ReplayReport { digest, records: parsed.lines.len() - 1, divergent_records: divergent })
}

pub fn replay(path: &Path) -> Result<ReplayReport, LogError> {
    let file = File::open(path)?;
    replay_reader(BufReader::new(file))
}
