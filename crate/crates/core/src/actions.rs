//! Robot-dog action execution: table-driven commands, performability and
//! posture checks, and a tick-driven state machine.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::taxonomy::{ActionId, Taxonomy};

pub const DEFAULT_ACTION_TABLE: &str = include_str!("../config/action_table.toml");

/// Joint groups a motor parameter may address.
pub const JOINT_GROUPS: [&str; 10] = [
    "body_height",
    "body_pitch",
    "body_yaw",
    "head_pitch",
    "head_yaw",
    "head_roll",
    "left_fore",
    "right_fore",
    "left_hind",
    "right_hind",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Posture {
    Standing,
    Sitting,
    Lying,
    Crouching,
}

impl Posture {
    pub const ALL: [Posture; 4] = [Posture::Standing, Posture::Sitting, Posture::Lying, Posture::Crouching];

    pub fn name(self) -> &'static str {
        match self {
            Posture::Standing => "standing",
            Posture::Sitting => "sitting",
            Posture::Lying => "lying",
            Posture::Crouching => "crouching",
        }
    }
}

impl fmt::Display for Posture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub type Poses = BTreeMap<String, f64>;

#[derive(Debug, Error, PartialEq)]
pub enum ActionError {
    #[error("action table does not parse: {0}")]
    Parse(String),
    #[error("unsupported schema_version {0}")]
    SchemaVersion(u32),
    #[error("table entry for unknown action {0:?}")]
    UnknownAction(String),
    #[error("action id {0} is not in the taxonomy")]
    UnknownActionId(usize),
    #[error("table entry for non-performable action {0:?}")]
    NotPerformable(String),
    #[error("no table entry for performable action {0:?}")]
    Missing(String),
    #[error("duplicate table entry for {0:?}")]
    Duplicate(String),
    #[error("entry {action:?}: {reason}")]
    Invalid { action: String, reason: String },
    #[error("missing rest pose for posture {0}")]
    MissingRestPose(Posture),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    NotPerformable,
    PostureConflict,
    Busy,
}

impl RejectReason {
    pub fn code(self) -> &'static str {
        match self {
            RejectReason::NotPerformable => "not_performable",
            RejectReason::PostureConflict => "posture_conflict",
            RejectReason::Busy => "busy",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub action: String,
    pub reason: RejectReason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionCommand {
    pub action: String,
    #[serde(skip)]
    pub action_id: Option<ActionId>,
    pub duration_ticks: u32,
    pub motor_params: Poses,
    pub resulting_posture: Posture,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Dispatch {
    Command(ActionCommand),
    Rejected(Rejection),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningAction {
    pub action: String,
    pub remaining_ticks: u32,
    pub resulting_posture: Posture,
    pub rest_after: Poses,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DogState {
    pub posture: Posture,
    pub current_action: Option<RunningAction>,
    pub body_part_poses: Poses,
}

impl DogState {
    pub fn is_idle(&self) -> bool {
        self.current_action.is_none()
    }

    /// Starts executing an accepted command.
    pub fn begin(&self, cmd: &ActionCommand, table: &ActionTable) -> DogState {
        let mut poses = self.body_part_poses.clone();
        poses.extend(cmd.motor_params.iter().map(|(k, v)| (k.clone(), *v)));
        DogState {
            posture: self.posture,
            current_action: Some(RunningAction {
                action: cmd.action.clone(),
                remaining_ticks: cmd.duration_ticks,
                resulting_posture: cmd.resulting_posture,
                rest_after: table.rest_pose(cmd.resulting_posture).clone(),
            }),
            body_part_poses: poses,
        }
    }

    /// Advances the clock; a finished action applies its posture and clears.
    pub fn step(&self, ticks: u32) -> DogState {
        let mut next = self.clone();
        if let Some(run) = &mut next.current_action {
            if ticks >= run.remaining_ticks {
                next.posture = run.resulting_posture;
                next.body_part_poses = run.rest_after.clone();
                next.current_action = None;
            } else {
                run.remaining_ticks -= ticks;
            }
        }
        next
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    duration_ticks: u32,
    from_postures: Vec<Posture>,
    resulting_posture: Option<Posture>,
    motor: Poses,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTable {
    schema_version: u32,
    initial_posture: Posture,
    rest_poses: BTreeMap<Posture, Poses>,
    actions: Vec<RawEntry>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEntry {
    action: String,
    duration_ticks: u32,
    from_postures: Vec<Posture>,
    resulting_posture: Option<Posture>,
    #[serde(default)]
    motor: Poses,
}

/// Validated per-action parameters, one entry per performable action.
#[derive(Debug, Clone)]
pub struct ActionTable {
    taxonomy: Arc<Taxonomy>,
    entries: Vec<Option<Entry>>,
    initial: Posture,
    rest: BTreeMap<Posture, Poses>,
}

fn check_pose(action: &str, poses: &Poses) -> Result<(), ActionError> {
    for (k, v) in poses {
        if !JOINT_GROUPS.contains(&k.as_str()) {
            return Err(ActionError::Invalid {
                action: action.to_string(),
                reason: format!("unknown joint group {k:?}"),
            });
        }
        if !(v.is_finite() && v.abs() <= std::f64::consts::PI) {
            return Err(ActionError::Invalid {
                action: action.to_string(),
                reason: format!("{k} = {v} outside [-pi, pi]"),
            });
        }
    }
    Ok(())
}

impl ActionTable {
    pub fn load_default(taxonomy: Arc<Taxonomy>) -> Self {
        Self::from_toml(DEFAULT_ACTION_TABLE, taxonomy).expect("shipped action table is valid")
    }

    pub fn from_toml(text: &str, taxonomy: Arc<Taxonomy>) -> Result<Self, ActionError> {
        let raw: RawTable = toml::from_str(text).map_err(|e| ActionError::Parse(e.to_string()))?;
        if raw.schema_version != 1 {
            return Err(ActionError::SchemaVersion(raw.schema_version));
        }
        for p in Posture::ALL {
            let pose = raw.rest_poses.get(&p).ok_or(ActionError::MissingRestPose(p))?;
            check_pose(p.name(), pose)?;
        }
        let mut entries: Vec<Option<Entry>> = vec![None; taxonomy.actions().len()];
        for e in raw.actions {
            let id = taxonomy
                .action_by_name(&e.action)
                .ok_or_else(|| ActionError::UnknownAction(e.action.clone()))?;
            if !taxonomy.action(id).performable {
                return Err(ActionError::NotPerformable(e.action));
            }
            if entries[id.0].is_some() {
                return Err(ActionError::Duplicate(e.action));
            }
            let invalid = |reason: &str| ActionError::Invalid {
                action: e.action.clone(),
                reason: reason.to_string(),
            };
            if e.duration_ticks == 0 {
                return Err(invalid("duration_ticks must be at least 1"));
            }
            if e.from_postures.is_empty() {
                return Err(invalid("from_postures is empty"));
            }
            check_pose(&e.action, &e.motor)?;
            entries[id.0] = Some(Entry {
                duration_ticks: e.duration_ticks,
                from_postures: e.from_postures,
                resulting_posture: e.resulting_posture,
                motor: e.motor,
            });
        }
        if let Some(missing) = taxonomy
            .actions()
            .iter()
            .zip(&entries)
            .find(|(a, e)| a.performable && e.is_none())
        {
            return Err(ActionError::Missing(missing.0.name.clone()));
        }
        Ok(Self {
            taxonomy,
            entries,
            initial: raw.initial_posture,
            rest: raw.rest_poses,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.iter().filter(|e| e.is_some()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn taxonomy(&self) -> &Arc<Taxonomy> {
        &self.taxonomy
    }

    pub fn rest_pose(&self, posture: Posture) -> &Poses {
        &self.rest[&posture]
    }

    pub fn initial_state(&self) -> DogState {
        DogState {
            posture: self.initial,
            current_action: None,
            body_part_poses: self.rest_pose(self.initial).clone(),
        }
    }

    /// Postures an action may start from (empty for non-performable actions).
    pub fn allowed_postures(&self, action: ActionId) -> &[Posture] {
        self.entries
            .get(action.0)
            .and_then(Option::as_ref)
            .map_or(&[], |e| e.from_postures.as_slice())
    }

    pub fn dispatch(&self, state: &DogState, action: ActionId) -> Result<Dispatch, ActionError> {
        let word = self
            .taxonomy
            .actions()
            .get(action.0)
            .ok_or(ActionError::UnknownActionId(action.0))?;
        let reject = |reason| {
            Ok(Dispatch::Rejected(Rejection {
                action: word.name.clone(),
                reason,
            }))
        };
        if !state.is_idle() {
            return reject(RejectReason::Busy);
        }
        let Some(entry) = &self.entries[action.0] else {
            return reject(RejectReason::NotPerformable);
        };
        if !entry.from_postures.contains(&state.posture) {
            return reject(RejectReason::PostureConflict);
        }
        Ok(Dispatch::Command(ActionCommand {
            action: word.name.clone(),
            action_id: Some(action),
            duration_ticks: entry.duration_ticks,
            motor_params: entry.motor.clone(),
            resulting_posture: entry.resulting_posture.unwrap_or(state.posture),
        }))
    }

    pub fn dispatch_named(&self, state: &DogState, name: &str) -> Result<Dispatch, ActionError> {
        let id = self
            .taxonomy
            .action_by_name(name)
            .ok_or_else(|| ActionError::UnknownAction(name.to_string()))?;
        self.dispatch(state, id)
    }
}
