//! Ground-truth scenes, the deterministic world state machine and raw
//! observations.

mod generate;
mod gt;
mod search;
mod world;

pub use generate::{cabinet_event, generate_scenario, Family, GenerateConfig};
pub use gt::{
    derive_gt_graph, derive_need_to_explore, derive_viewpoints, gt_index, gt_minimal_action_count, GtIndex,
    INTERIOR_STANDOFF,
};
pub use search::{min_action_count, SearchLimits};
pub use world::{
    ActionOutcome, EventEffect, Location, OutcomeStatus, RawObservation, VisibleObject, World, WorldState,
    IDLE_DEPTH,
};

use crate::acsg::{ActionType, SceneGraph};
use crate::catalog::ObjectKind;
use crate::geometry::JointKind;
use crate::grid::{Aabb, Cell, Vec3};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use thiserror::Error;

pub const SCENARIO_SCHEMA: &str = "acsg-scenario/1";
pub const DEFAULT_GRID: [i32; 3] = [64, 64, 32];

/// SHA-256 of `bytes` as lowercase hex.
pub fn hex_digest(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    world::hex(&Sha256::digest(bytes))
}

/// The open and close primitives for a joint type.
pub fn open_close_actions(joint: JointKind) -> (ActionType, ActionType) {
    match joint {
        JointKind::Prismatic => (ActionType::OpenDrawer, ActionType::CloseDrawer),
        JointKind::Revolute => (ActionType::OpenDoor, ActionType::CloseDoor),
    }
}

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("scenario parse error: {0}")]
    Parse(String),
    #[error("scenario validation failed: {}", .0.join("; "))]
    Validation(Vec<String>),
    #[error("unknown viewpoint {0:?}")]
    UnknownViewpoint(String),
}

/// How a compartment's moving part is articulated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Articulation {
    pub joint: JointKind,
    pub axis: Vec3,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<Vec3>,
    /// Outward normal of the compartment front.
    pub open_dir: Cell,
}

/// One openable space of a container (a drawer or a door).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Compartment {
    pub articulation: Articulation,
    /// Free cells inside the compartment.
    pub interior: Aabb,
    /// Volume swept by the moving part while opening.
    pub blocking_region: Aabb,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Parent {
    Inside { container: u32, compartment: u32 },
    On { id: u32 },
    CoveredBy { id: u32 },
    NestedIn { id: u32 },
}

impl Parent {
    pub fn id(&self) -> u32 {
        match *self {
            Parent::Inside { container, .. } => container,
            Parent::On { id } | Parent::CoveredBy { id } | Parent::NestedIn { id } => id,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct HandleOf {
    pub container: u32,
    pub compartment: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundObject {
    pub id: u32,
    pub label: String,
    pub kind: ObjectKind,
    pub voxels: Vec<Cell>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub compartments: Vec<Compartment>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<Parent>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub handle_of: Option<HandleOf>,
}

impl GroundObject {
    pub fn movable(&self) -> bool {
        matches!(self.kind, ObjectKind::Rigid | ObjectKind::Cover)
    }

    pub fn bounds(&self) -> Aabb {
        Aabb::of(&self.voxels).unwrap_or(Aabb::new([0; 3], [-1; 3]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ViewKind {
    Overhead,
    Exterior,
    Interior { container: u32, compartment: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Viewpoint {
    pub name: String,
    pub kind: ViewKind,
    pub position: Vec3,
}

/// An annotated space that exploration is expected to observe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Region {
    Compartment { container: u32, compartment: u32 },
    Under { id: u32 },
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Region::Compartment { container, compartment } => write!(f, "compartment:{container}:{compartment}"),
            Region::Under { id } => write!(f, "under:{id}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Destination {
    IdleSpace,
    Place {
        #[serde(default)]
        parent: Option<Parent>,
        voxels: Vec<Cell>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EventEffectSpec {
    AddObject { object: GroundObject },
    RemoveObject { id: u32 },
    MoveObject { id: u32, destination: Destination },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionEvent {
    pub trigger_step: u32,
    pub effect: EventEffectSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioFamily {
    DrawerOnly,
    DoorOnly,
    DrawerDoor,
    Recursive,
    Occlusion,
    Custom,
}

impl ScenarioFamily {
    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioFamily::DrawerOnly => "drawer_only",
            ScenarioFamily::DoorOnly => "door_only",
            ScenarioFamily::DrawerDoor => "drawer_door",
            ScenarioFamily::Recursive => "recursive",
            ScenarioFamily::Occlusion => "occlusion",
            ScenarioFamily::Custom => "custom",
        }
    }
}

fn default_schema() -> String {
    SCENARIO_SCHEMA.to_string()
}

fn default_grid() -> [i32; 3] {
    DEFAULT_GRID
}

fn default_cell_size() -> f64 {
    1.0
}

fn default_family() -> ScenarioFamily {
    ScenarioFamily::Custom
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    #[serde(default = "default_schema")]
    pub schema: String,
    #[serde(default)]
    pub name: String,
    #[serde(default = "default_family")]
    pub family: ScenarioFamily,
    #[serde(default = "default_grid")]
    pub grid_dims: [i32; 3],
    #[serde(default = "default_cell_size")]
    pub cell_size_cm: f64,
    pub objects: Vec<GroundObject>,
    #[serde(default)]
    pub viewpoints: Vec<Viewpoint>,
    #[serde(default)]
    pub need_to_explore: Vec<Region>,
    #[serde(default)]
    pub events: Vec<InterventionEvent>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_graph: Option<SceneGraph>,
}

impl ScenarioSpec {
    pub fn object(&self, id: u32) -> Option<&GroundObject> {
        self.objects.iter().find(|o| o.id == id)
    }

    pub fn compartment(&self, container: u32, compartment: u32) -> Option<&Compartment> {
        self.object(container)?.compartments.get(compartment as usize)
    }

    /// Handle that opens the given compartment.
    pub fn handle_for(&self, container: u32, compartment: u32) -> Option<&GroundObject> {
        self.objects
            .iter()
            .find(|o| o.handle_of == Some(HandleOf { container, compartment }))
    }

    pub fn viewpoint(&self, name: &str) -> Option<&Viewpoint> {
        self.viewpoints.iter().find(|v| v.name == name)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serialization cannot fail")
    }

    /// Fills in derived fields that a hand-written file may omit.
    pub fn complete(&mut self) {
        if self.viewpoints.is_empty() {
            self.viewpoints = derive_viewpoints(self);
        }
        if self.need_to_explore.is_empty() {
            self.need_to_explore = derive_need_to_explore(self);
        }
        if self.gt_graph.is_none() {
            self.gt_graph = derive_gt_graph(self).ok();
        }
    }

    /// Every structural invariant of a scenario, reported together.
    pub fn validate(&self) -> Result<(), WorldError> {
        let mut errs = Vec::new();
        if self.schema != SCENARIO_SCHEMA {
            errs.push(format!("unsupported schema {:?}", self.schema));
        }
        if self.grid_dims.iter().any(|d| *d <= 0) {
            errs.push("grid dimensions must be positive".into());
        }
        let grid = Aabb::new([0; 3], [self.grid_dims[0] - 1, self.grid_dims[1] - 1, self.grid_dims[2] - 1]);
        let mut ids = BTreeSet::new();
        let by_id: BTreeMap<u32, &GroundObject> = self.objects.iter().map(|o| (o.id, o)).collect();
        let mut occupied: BTreeMap<Cell, u32> = BTreeMap::new();
        for o in &self.objects {
            if o.id == 0 {
                errs.push("object id 0 is reserved for the scene root".into());
            }
            if !ids.insert(o.id) {
                errs.push(format!("duplicate object id {}", o.id));
            }
            if o.voxels.is_empty() {
                errs.push(format!("object {} has no voxels", o.id));
            }
            let mut outside = false;
            let mut overlap = false;
            for c in &o.voxels {
                if !grid.contains(*c) {
                    if !outside {
                        errs.push(format!("object {} has voxel {:?} outside the grid", o.id, c));
                    }
                    outside = true;
                    continue;
                }
                if let Some(other) = occupied.insert(*c, o.id) {
                    if other != o.id && !overlap {
                        errs.push(format!("objects {} and {} overlap at {:?}", other, o.id, c));
                        overlap = true;
                    }
                }
            }
            match o.kind {
                ObjectKind::Handle => match o.handle_of {
                    None => errs.push(format!("handle {} lacks handle_of", o.id)),
                    Some(h) => {
                        if by_id.get(&h.container).and_then(|c| c.compartments.get(h.compartment as usize)).is_none()
                        {
                            errs.push(format!("handle {} refers to a missing compartment", o.id));
                        }
                    }
                },
                _ if o.handle_of.is_some() => errs.push(format!("non-handle {} has handle_of", o.id)),
                _ => {}
            }
            if o.kind != ObjectKind::Container && !o.compartments.is_empty() {
                errs.push(format!("non-container {} has compartments", o.id));
            }
            for (k, comp) in o.compartments.iter().enumerate() {
                let a = &comp.articulation;
                let n = crate::grid::norm(a.axis);
                if (n - 1.0).abs() > 1e-6 {
                    errs.push(format!("container {} compartment {} axis is not unit length", o.id, k));
                }
                if a.joint == JointKind::Revolute && a.origin.is_none() {
                    errs.push(format!("container {} compartment {} revolute joint lacks origin", o.id, k));
                }
                if !comp.interior.is_valid() || !comp.blocking_region.is_valid() {
                    errs.push(format!("container {} compartment {} has an empty box", o.id, k));
                }
                let handles = self
                    .objects
                    .iter()
                    .filter(|h| h.handle_of == Some(HandleOf { container: o.id, compartment: k as u32 }))
                    .count();
                if handles != 1 {
                    errs.push(format!("container {} compartment {} has {} handles", o.id, k, handles));
                }
            }
            if let Some(p) = o.parent {
                match (p, by_id.get(&p.id())) {
                    (_, None) => errs.push(format!("object {} has missing parent {}", o.id, p.id())),
                    (Parent::Inside { compartment, .. }, Some(c)) => {
                        if c.compartments.get(compartment as usize).is_none() {
                            errs.push(format!("object {} is inside a missing compartment", o.id));
                        }
                    }
                    (Parent::CoveredBy { .. }, Some(c)) if c.kind != ObjectKind::Cover => {
                        errs.push(format!("object {} is covered by non-cover {}", o.id, c.id))
                    }
                    (Parent::CoveredBy { .. } | Parent::NestedIn { .. }, Some(c)) if !c.movable() => {
                        errs.push(format!("object {} is concealed by immovable {}", o.id, c.id))
                    }
                    _ => {}
                }
            }
        }
        // Parent links must form a forest.
        for o in &self.objects {
            let mut seen = BTreeSet::from([o.id]);
            let mut cur = o.parent.map(|p| p.id());
            while let Some(p) = cur {
                if !seen.insert(p) {
                    errs.push(format!("parent chain of object {} has a cycle", o.id));
                    break;
                }
                cur = by_id.get(&p).and_then(|x| x.parent.map(|q| q.id()));
            }
        }
        let mut names = BTreeSet::new();
        for v in &self.viewpoints {
            if !names.insert(v.name.as_str()) {
                errs.push(format!("duplicate viewpoint {:?}", v.name));
            }
            if let ViewKind::Interior { container, compartment } = v.kind {
                if self.compartment(container, compartment).is_none() {
                    errs.push(format!("viewpoint {:?} refers to a missing compartment", v.name));
                }
            }
        }
        for r in &self.need_to_explore {
            let ok = match *r {
                Region::Compartment { container, compartment } => self.compartment(container, compartment).is_some(),
                Region::Under { id } => by_id.contains_key(&id),
            };
            if !ok {
                errs.push(format!("region {r} refers to a missing object"));
            }
        }
        if let Some(g) = &self.gt_graph {
            if let Err(e) = g.validate() {
                errs.push(format!("gt_graph: {e}"));
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(WorldError::Validation(errs))
        }
    }
}

/// Parses, completes and validates a scenario file.
pub fn load_scenario(bytes: &[u8]) -> Result<ScenarioSpec, WorldError> {
    let mut spec: ScenarioSpec = serde_json::from_slice(bytes).map_err(|e| WorldError::Parse(e.to_string()))?;
    spec.validate()?;
    spec.complete();
    spec.validate()?;
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "schema": "acsg-scenario/1",
        "objects": [
            {"id": 1, "label": "chair", "kind": "rigid", "voxels": [[5,5,0],[5,5,1],[5,6,0],[5,6,1]]},
            {"id": 2, "label": "apple", "kind": "rigid", "voxels": [[10,10,0],[10,11,0],[11,10,0],[11,11,0]]}
        ]
    }"#;

    #[test]
    fn minimal_file_loads() {
        let s = load_scenario(MINIMAL.as_bytes()).unwrap();
        assert_eq!(s.objects.len(), 2);
        assert!(s.gt_graph.is_some());
        assert_eq!(s.viewpoints.len(), 5);
    }

    #[test]
    fn handle_without_handle_of_is_rejected() {
        let bad = MINIMAL.replace(r#""label": "chair", "kind": "rigid""#, r#""label": "handle", "kind": "handle""#);
        match load_scenario(bad.as_bytes()) {
            Err(WorldError::Validation(v)) => assert!(v.iter().any(|m| m.contains("handle_of"))),
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn garbage_is_a_parse_error() {
        assert!(matches!(load_scenario(b"{"), Err(WorldError::Parse(_))));
    }

    #[test]
    fn out_of_grid_and_overlap_are_reported_together() {
        let bad = MINIMAL.replace("[10,10,0]", "[99,10,0]").replace("[11,11,0]", "[5,5,0]");
        match load_scenario(bad.as_bytes()) {
            Err(WorldError::Validation(v)) => assert!(v.len() >= 2, "{v:?}"),
            other => panic!("{other:?}"),
        }
    }
}
