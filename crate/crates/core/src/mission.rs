//! Waypoint plans and the mission execution state machine.
//!
//! Plans are values: every successful mutation returns a new plan with the
//! revision bumped, and a failed mutation leaves the caller's plan untouched.
//! While a mission runs, the waypoint at the active index and everything
//! before it are frozen; only later waypoints can be added, moved or removed.
//!
//! ```text
//! IDLE --add/upload--> READY --start--> ENROUTE(0) --arrive--> HOLDING(0, hold)
//!   HOLDING(i) --hold expires--> ENROUTE(i+1) | COMPLETED
//!   any --abort--> ABORTED
//! ```

use crate::geodesy::{GeoOrigin, GeodesyError, GeodeticCoordinate, LocalEnu};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use thiserror::Error;

const HOLD_EPSILON_S: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MissionError {
    #[error("waypoint at or behind the active cursor cannot be edited")]
    EditBehindCursor,
    #[error("unknown waypoint id {0}")]
    UnknownWaypoint(u64),
    #[error("invalid waypoint: {0}")]
    InvalidPosition(String),
    #[error("insert index {index} is past the end of a {len}-waypoint plan")]
    InvalidIndex { index: usize, len: usize },
    #[error("duplicate waypoint id {0}")]
    DuplicateId(u64),
    #[error("mission plan is empty")]
    EmptyPlan,
    #[error("mission is already running")]
    AlreadyRunning,
    #[error("mission has finished; upload a new plan to fly again")]
    MissionFinished,
    #[error("path needs at least 2 samples per segment, got {0}")]
    TooFewSamples(usize),
    #[error(transparent)]
    Geodesy(#[from] GeodesyError),
}

impl MissionError {
    /// Stable code used in protocol error envelopes.
    pub fn code(&self) -> &'static str {
        match self {
            MissionError::EditBehindCursor => "edit_behind_cursor",
            MissionError::UnknownWaypoint(_) => "unknown_waypoint",
            MissionError::InvalidPosition(_) | MissionError::Geodesy(_) => "invalid_position",
            MissionError::InvalidIndex { .. } => "invalid_index",
            MissionError::DuplicateId(_) => "duplicate_id",
            MissionError::EmptyPlan => "empty_plan",
            MissionError::AlreadyRunning => "already_running",
            MissionError::MissionFinished => "mission_finished",
            MissionError::TooFewSamples(_) => "bad_request",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub id: u64,
    pub position: GeodeticCoordinate,
    pub hold_time_s: f64,
    pub speed_override_mps: Option<f64>,
}

impl Waypoint {
    fn validate(&self) -> Result<(), MissionError> {
        self.position.validate().map_err(|e| MissionError::InvalidPosition(e.to_string()))?;
        if !(self.hold_time_s.is_finite() && self.hold_time_s >= 0.0) {
            return Err(MissionError::InvalidPosition("hold time must be >= 0".into()));
        }
        if let Some(s) = self.speed_override_mps {
            if !(s.is_finite() && s > 0.0) {
                return Err(MissionError::InvalidPosition("speed override must be > 0".into()));
            }
        }
        Ok(())
    }
}

/// Fields of a waypoint that an edit may replace.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct WaypointEdit {
    pub position: Option<GeodeticCoordinate>,
    pub hold_time_s: Option<f64>,
    pub speed_override_mps: Option<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MissionPlan {
    waypoints: Vec<Waypoint>,
    revision: u64,
    next_id: u64,
}

impl MissionPlan {
    pub fn new() -> Self {
        Self { waypoints: Vec::new(), revision: 0, next_id: 1 }
    }

    pub fn waypoints(&self) -> &[Waypoint] {
        &self.waypoints
    }

    pub fn revision(&self) -> u64 {
        self.revision
    }

    pub fn len(&self) -> usize {
        self.waypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.waypoints.is_empty()
    }

    pub fn get(&self, index: usize) -> Option<&Waypoint> {
        self.waypoints.get(index)
    }

    pub fn index_of(&self, id: u64) -> Option<usize> {
        self.waypoints.iter().position(|w| w.id == id)
    }

    /// Replaces the whole plan. Ids come from the caller and must be unique.
    pub fn replace(&self, state: &MissionState, waypoints: Vec<Waypoint>) -> Result<MissionPlan, MissionError> {
        if state.is_running() {
            return Err(MissionError::AlreadyRunning);
        }
        let mut seen = BTreeSet::new();
        for w in &waypoints {
            w.validate()?;
            if !seen.insert(w.id) {
                return Err(MissionError::DuplicateId(w.id));
            }
        }
        let max_id = seen.last().copied().unwrap_or(0);
        Ok(MissionPlan {
            waypoints,
            revision: self.revision + 1,
            next_id: self.next_id.max(max_id.saturating_add(1)),
        })
    }

    /// Inserts a waypoint with a freshly allocated id; appends when `index` is `None`.
    pub fn add_waypoint(
        &self,
        state: &MissionState,
        position: GeodeticCoordinate,
        hold_time_s: f64,
        speed_override_mps: Option<f64>,
        index: Option<usize>,
    ) -> Result<MissionPlan, MissionError> {
        let waypoint = Waypoint { id: self.next_id, position, hold_time_s, speed_override_mps };
        waypoint.validate()?;
        let index = index.unwrap_or(self.waypoints.len());
        if index > self.waypoints.len() {
            return Err(MissionError::InvalidIndex { index, len: self.waypoints.len() });
        }
        if let Some(active) = state.cursor() {
            if index <= active {
                return Err(MissionError::EditBehindCursor);
            }
        }
        let mut next = self.clone();
        next.waypoints.insert(index, waypoint);
        next.revision += 1;
        next.next_id += 1;
        Ok(next)
    }

    pub fn update_waypoint(&self, state: &MissionState, id: u64, edit: WaypointEdit) -> Result<MissionPlan, MissionError> {
        let index = self.editable_index(state, id)?;
        let mut updated = self.waypoints[index];
        if let Some(p) = edit.position {
            updated.position = p;
        }
        if let Some(h) = edit.hold_time_s {
            updated.hold_time_s = h;
        }
        if let Some(s) = edit.speed_override_mps {
            updated.speed_override_mps = s;
        }
        updated.validate()?;
        let mut next = self.clone();
        next.waypoints[index] = updated;
        next.revision += 1;
        Ok(next)
    }

    pub fn remove_waypoint(&self, state: &MissionState, id: u64) -> Result<MissionPlan, MissionError> {
        let index = self.editable_index(state, id)?;
        let mut next = self.clone();
        next.waypoints.remove(index);
        next.revision += 1;
        Ok(next)
    }

    fn editable_index(&self, state: &MissionState, id: u64) -> Result<usize, MissionError> {
        let index = self.index_of(id).ok_or(MissionError::UnknownWaypoint(id))?;
        if state.visited.contains(&id) {
            return Err(MissionError::EditBehindCursor);
        }
        if state.cursor().is_some_and(|active| index <= active) {
            return Err(MissionError::EditBehindCursor);
        }
        Ok(index)
    }

    /// Straight segments between consecutive waypoints, each sampled at
    /// `samples_per_segment` evenly spaced points. Shared segment endpoints
    /// appear once, and every waypoint lands exactly on its ENU image.
    pub fn interpolate_path(&self, origin: &GeoOrigin, samples_per_segment: usize) -> Result<Vec<LocalEnu>, MissionError> {
        if self.waypoints.is_empty() {
            return Err(MissionError::EmptyPlan);
        }
        if samples_per_segment < 2 {
            return Err(MissionError::TooFewSamples(samples_per_segment));
        }
        let corners = self
            .waypoints
            .iter()
            .map(|w| origin.to_local(&w.position))
            .collect::<Result<Vec<_>, _>>()?;
        let mut path = vec![corners[0]];
        for pair in corners.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            let last = samples_per_segment - 1;
            for k in 1..last {
                let t = k as f64 / last as f64;
                path.push(a + (b - a) * t);
            }
            path.push(b);
        }
        Ok(path)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum MissionPhase {
    Idle,
    Ready,
    Enroute(usize),
    Holding { index: usize, remaining_s: f64 },
    Completed,
    Aborted,
}

impl MissionPhase {
    pub fn name(&self) -> &'static str {
        match self {
            MissionPhase::Idle => "IDLE",
            MissionPhase::Ready => "READY",
            MissionPhase::Enroute(_) => "ENROUTE",
            MissionPhase::Holding { .. } => "HOLDING",
            MissionPhase::Completed => "COMPLETED",
            MissionPhase::Aborted => "ABORTED",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MissionState {
    pub phase: MissionPhase,
    pub visited: BTreeSet<u64>,
    /// Ids in the order their holds completed.
    pub visit_order: Vec<u64>,
}

impl Default for MissionState {
    fn default() -> Self {
        Self::new()
    }
}

impl MissionState {
    pub fn new() -> Self {
        Self { phase: MissionPhase::Idle, visited: BTreeSet::new(), visit_order: Vec::new() }
    }

    /// Index of the waypoint currently being flown to or held at.
    pub fn cursor(&self) -> Option<usize> {
        match self.phase {
            MissionPhase::Enroute(i) | MissionPhase::Holding { index: i, .. } => Some(i),
            _ => None,
        }
    }

    pub fn is_running(&self) -> bool {
        self.cursor().is_some()
    }

    pub fn is_terminal(&self) -> bool {
        matches!(self.phase, MissionPhase::Completed | MissionPhase::Aborted)
    }

    /// Phase after a plan edit outside of flight: READY when there is
    /// something to fly, IDLE otherwise.
    pub fn after_edit(&self, plan: &MissionPlan) -> MissionState {
        let mut next = self.clone();
        if matches!(self.phase, MissionPhase::Idle | MissionPhase::Ready) {
            next.phase = if plan.is_empty() { MissionPhase::Idle } else { MissionPhase::Ready };
        }
        next
    }

    /// State for a freshly uploaded plan.
    pub fn fresh_for(plan: &MissionPlan) -> MissionState {
        MissionState::new().after_edit(plan)
    }

    pub fn start(&self, plan: &MissionPlan) -> Result<MissionState, MissionError> {
        match self.phase {
            MissionPhase::Idle | MissionPhase::Ready => {}
            MissionPhase::Enroute(_) | MissionPhase::Holding { .. } => return Err(MissionError::AlreadyRunning),
            MissionPhase::Completed | MissionPhase::Aborted => return Err(MissionError::MissionFinished),
        }
        if plan.is_empty() {
            return Err(MissionError::EmptyPlan);
        }
        Ok(MissionState { phase: MissionPhase::Enroute(0), ..self.clone() })
    }

    /// The vehicle reached the active waypoint. Zero holds complete at once.
    pub fn on_arrival(&self, plan: &MissionPlan) -> MissionState {
        match self.phase {
            MissionPhase::Enroute(index) => {
                let hold = plan.get(index).map_or(0.0, |w| w.hold_time_s);
                let holding = MissionState { phase: MissionPhase::Holding { index, remaining_s: hold }, ..self.clone() };
                holding.advance_hold(plan, 0.0)
            }
            _ => self.clone(),
        }
    }

    /// Counts a hold down by `dt`; on expiry the waypoint is marked visited
    /// and the cursor moves on.
    pub fn advance_hold(&self, plan: &MissionPlan, dt: f64) -> MissionState {
        let MissionPhase::Holding { index, remaining_s } = self.phase else {
            return self.clone();
        };
        let remaining_s = remaining_s - dt;
        let mut next = self.clone();
        if remaining_s > HOLD_EPSILON_S {
            next.phase = MissionPhase::Holding { index, remaining_s };
            return next;
        }
        if let Some(w) = plan.get(index) {
            next.visited.insert(w.id);
            next.visit_order.push(w.id);
        }
        next.phase = if index + 1 < plan.len() { MissionPhase::Enroute(index + 1) } else { MissionPhase::Completed };
        next
    }

    /// Stops the mission. A mission that already ended keeps its outcome.
    pub fn abort(&self) -> MissionState {
        if self.is_terminal() {
            return self.clone();
        }
        MissionState { phase: MissionPhase::Aborted, ..self.clone() }
    }

    /// The waypoint the vehicle should be flying to, if any.
    pub fn active_waypoint<'a>(&self, plan: &'a MissionPlan) -> Option<&'a Waypoint> {
        self.cursor().and_then(|i| plan.get(i))
    }
}
