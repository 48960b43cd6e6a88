use super::{
    derive_gt_graph, derive_need_to_explore, derive_viewpoints, Destination, EventEffectSpec, GroundObject,
    InterventionEvent, Parent, Region, ScenarioSpec, ViewKind, WorldError,
};
use crate::acsg::ActionType;
use crate::acsg::PrimitiveParams;
use crate::geometry::JointKind;
use crate::grid::{self, Aabb, Cell};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, BTreeSet};

/// Depth of the idle band along the back edge of the table.
pub const IDLE_DEPTH: i32 = 14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "at", rename_all = "snake_case")]
pub enum Location {
    Origin,
    Idle { offset: Cell },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct WorldState {
    /// Open flag per container compartment.
    pub open: BTreeMap<u32, Vec<bool>>,
    /// Location of every movable object.
    pub location: BTreeMap<u32, Location>,
    pub step: u32,
}

impl WorldState {
    /// Equal articulation and placement, ignoring the step counter.
    pub fn same_configuration(&self, other: &WorldState) -> bool {
        self.open == other.open && self.location == other.location
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum OutcomeStatus {
    Success,
    Blocked { blocker: u32 },
    InvalidTarget,
    NoEffect,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionOutcome {
    #[serde(flatten)]
    pub status: OutcomeStatus,
    /// Translation applied to a picked or returned object.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub displacement: Option<Cell>,
}

impl ActionOutcome {
    fn status(status: OutcomeStatus) -> Self {
        ActionOutcome { status, displacement: None }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VisibleObject {
    pub id: u32,
    pub label: String,
    pub voxels: Vec<Cell>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawObservation {
    pub viewpoint: String,
    pub step: u32,
    pub visible: Vec<VisibleObject>,
    /// Boxes the viewpoint cannot see into.
    pub hidden: Vec<Aabb>,
    pub grid_dims: [i32; 3],
    /// Annotated regions this view observes.
    pub observed_regions: Vec<Region>,
}

impl RawObservation {
    /// True when `c` is inside the grid and not concealed from this view.
    pub fn observes(&self, c: Cell) -> bool {
        (0..3).all(|k| c[k] >= 0 && c[k] < self.grid_dims[k]) && !self.hidden.iter().any(|b| b.contains(c))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EventEffect {
    pub changed: Vec<u32>,
    /// Cells where the intervention happened.
    pub disturbed: Vec<Cell>,
}

#[derive(Debug, Clone)]
pub struct World {
    spec: ScenarioSpec,
    state: WorldState,
    fired: BTreeSet<usize>,
}

impl World {
    pub fn new(spec: ScenarioSpec) -> World {
        let mut state = WorldState { open: BTreeMap::new(), location: BTreeMap::new(), step: 0 };
        for o in &spec.objects {
            init_state_for(&mut state, o);
        }
        World { spec, state, fired: BTreeSet::new() }
    }

    pub fn spec(&self) -> &ScenarioSpec {
        &self.spec
    }

    pub fn state(&self) -> &WorldState {
        &self.state
    }

    /// Replaces the articulation and placement state wholesale.
    pub fn set_state(&mut self, state: WorldState) {
        self.state = state;
    }

    pub fn set_step(&mut self, step: u32) {
        self.state.step = step;
    }

    pub fn digest(&self) -> String {
        let ids: Vec<u32> = self.spec.objects.iter().map(|o| o.id).collect();
        let doc = serde_json::json!({ "state": self.state, "objects": ids });
        hex(&Sha256::digest(doc.to_string().as_bytes()))
    }

    pub fn is_open(&self, container: u32, compartment: u32) -> bool {
        self.state
            .open
            .get(&container)
            .and_then(|v| v.get(compartment as usize))
            .copied()
            .unwrap_or(false)
    }

    pub fn location(&self, id: u32) -> Location {
        self.state.location.get(&id).copied().unwrap_or(Location::Origin)
    }

    fn at_origin(&self, id: u32) -> bool {
        self.spec.object(id).is_some() && self.location(id) == Location::Origin
    }

    /// Current cells of an object.
    pub fn current_voxels(&self, id: u32) -> Vec<Cell> {
        let Some(o) = self.spec.object(id) else { return Vec::new() };
        match self.location(id) {
            Location::Origin => o.voxels.clone(),
            Location::Idle { offset } => o.voxels.iter().map(|c| grid::add(*c, offset)).collect(),
        }
    }

    pub fn object_at(&self, cell: Cell) -> Option<u32> {
        self.spec
            .objects
            .iter()
            .find(|o| match self.location(o.id) {
                Location::Origin => o.voxels.contains(&cell),
                Location::Idle { offset } => o.voxels.contains(&grid::sub(cell, offset)),
            })
            .map(|o| o.id)
    }

    /// Whether the object's origin placement is exposed. `view = None`
    /// grants access to every compartment interior view.
    fn exposed_at_origin(&self, id: u32, view: Option<&ViewKind>) -> bool {
        let Some(o) = self.spec.object(id) else { return false };
        match o.parent {
            None => true,
            Some(Parent::On { id: p }) => self.visible_with(p, view),
            Some(Parent::Inside { container, compartment }) => {
                self.is_open(container, compartment)
                    && view.is_none_or(|v| *v == ViewKind::Interior { container, compartment })
                    && self.visible_with(container, view)
            }
            Some(Parent::CoveredBy { id: x } | Parent::NestedIn { id: x }) => {
                !self.at_origin(x) && self.exposed_at_origin(x, view)
            }
        }
    }

    fn visible_with(&self, id: u32, view: Option<&ViewKind>) -> bool {
        self.spec.object(id).is_some()
            && match self.location(id) {
                Location::Idle { .. } => true,
                Location::Origin => self.exposed_at_origin(id, view),
            }
    }

    /// Visible from the named kind of view.
    pub fn is_visible_from(&self, id: u32, view: &ViewKind) -> bool {
        self.visible_with(id, Some(view))
    }

    /// Visible from at least one viewpoint.
    pub fn is_accessible(&self, id: u32) -> bool {
        self.visible_with(id, None)
    }

    /// Not concealed by any cover or nesting object left at its origin.
    pub fn is_top_of_chain(&self, id: u32) -> bool {
        let mut cur = self.spec.object(id).and_then(|o| o.parent);
        while let Some(p) = cur {
            match p {
                Parent::CoveredBy { id: x } | Parent::NestedIn { id: x } => {
                    if self.at_origin(x) {
                        return false;
                    }
                    cur = self.spec.object(x).and_then(|o| o.parent);
                }
                Parent::On { id: x } | Parent::Inside { container: x, .. } => {
                    cur = self.spec.object(x).and_then(|o| o.parent);
                }
            }
        }
        true
    }

    pub fn render_observation(&self, viewpoint: &str) -> Result<RawObservation, WorldError> {
        let vp = self
            .spec
            .viewpoint(viewpoint)
            .ok_or_else(|| WorldError::UnknownViewpoint(viewpoint.to_string()))?;
        let view = vp.kind;
        let mut visible = Vec::new();
        for o in &self.spec.objects {
            if self.is_visible_from(o.id, &view) {
                let mut voxels = self.current_voxels(o.id);
                voxels.sort();
                visible.push(VisibleObject { id: o.id, label: o.label.clone(), voxels });
            }
        }
        let mut hidden = Vec::new();
        for o in &self.spec.objects {
            for (k, comp) in o.compartments.iter().enumerate() {
                let k = k as u32;
                let seen = self.is_open(o.id, k)
                    && view == (ViewKind::Interior { container: o.id, compartment: k })
                    && self.visible_with(o.id, Some(&view));
                if !seen {
                    hidden.push(comp.interior);
                }
            }
            let conceals = self.spec.objects.iter().any(|c| {
                matches!(c.parent, Some(Parent::CoveredBy { id } | Parent::NestedIn { id }) if id == o.id)
            });
            if conceals && self.at_origin(o.id) {
                let mut b = o.bounds();
                b.min[2] = 0;
                hidden.push(b);
            }
        }
        let observed_regions = self
            .spec
            .need_to_explore
            .iter()
            .copied()
            .filter(|r| self.region_observed(*r, &view))
            .collect();
        Ok(RawObservation {
            viewpoint: vp.name.clone(),
            step: self.state.step,
            visible,
            hidden,
            grid_dims: self.spec.grid_dims,
            observed_regions,
        })
    }

    fn region_observed(&self, r: Region, view: &ViewKind) -> bool {
        match r {
            Region::Compartment { container, compartment } => {
                self.is_open(container, compartment)
                    && *view == ViewKind::Interior { container, compartment }
                    && self.visible_with(container, Some(view))
            }
            Region::Under { id } => {
                matches!(view, ViewKind::Overhead | ViewKind::Exterior)
                    && !self.at_origin(id)
                    && self.exposed_at_origin(id, Some(view))
            }
        }
    }

    /// Lowest-id movable object currently intersecting the compartment's
    /// swept volume.
    pub fn blocker_of(&self, container: u32, compartment: u32) -> Option<u32> {
        let region = self.spec.compartment(container, compartment)?.blocking_region;
        self.spec
            .objects
            .iter()
            .filter(|o| o.movable())
            .find(|o| self.current_voxels(o.id).iter().any(|c| region.contains(*c)))
            .map(|o| o.id)
    }

    pub fn apply_action(&mut self, action: ActionType, target: u32, _params: &PrimitiveParams) -> ActionOutcome {
        use OutcomeStatus::*;
        let Some(obj) = self.spec.object(target) else { return ActionOutcome::status(InvalidTarget) };
        match action {
            ActionType::MoveCamera => ActionOutcome::status(Success),
            ActionType::OpenDoor | ActionType::OpenDrawer | ActionType::CloseDoor | ActionType::CloseDrawer => {
                let Some(h) = obj.handle_of else { return ActionOutcome::status(InvalidTarget) };
                let Some(comp) = self.spec.compartment(h.container, h.compartment) else {
                    return ActionOutcome::status(InvalidTarget);
                };
                let want = match action {
                    ActionType::OpenDoor | ActionType::CloseDoor => JointKind::Revolute,
                    _ => JointKind::Prismatic,
                };
                if comp.articulation.joint != want || !self.is_accessible(target) {
                    return ActionOutcome::status(InvalidTarget);
                }
                let open = self.is_open(h.container, h.compartment);
                if action.is_open() {
                    if open {
                        return ActionOutcome::status(NoEffect);
                    }
                    if let Some(b) = self.blocker_of(h.container, h.compartment) {
                        return ActionOutcome::status(Blocked { blocker: b });
                    }
                } else if !open {
                    return ActionOutcome::status(NoEffect);
                }
                self.state.open.get_mut(&h.container).expect("state tracks every container")
                    [h.compartment as usize] = action.is_open();
                ActionOutcome::status(Success)
            }
            ActionType::PickToIdle => {
                if !obj.movable() || !self.is_accessible(target) {
                    return ActionOutcome::status(InvalidTarget);
                }
                if self.location(target) != Location::Origin {
                    return ActionOutcome::status(NoEffect);
                }
                match self.idle_slot(target) {
                    Some(offset) => {
                        self.state.location.insert(target, Location::Idle { offset });
                        ActionOutcome { status: Success, displacement: Some(offset) }
                    }
                    None => ActionOutcome::status(InvalidTarget),
                }
            }
            ActionType::PickBack => {
                if !obj.movable() {
                    return ActionOutcome::status(InvalidTarget);
                }
                let Location::Idle { offset } = self.location(target) else {
                    return ActionOutcome::status(NoEffect);
                };
                let origin: BTreeSet<Cell> = obj.voxels.iter().copied().collect();
                let occupied = self
                    .spec
                    .objects
                    .iter()
                    .filter(|o| o.id != target)
                    .any(|o| self.current_voxels(o.id).iter().any(|c| origin.contains(c)));
                if occupied || !self.exposed_at_origin(target, None) {
                    return ActionOutcome::status(InvalidTarget);
                }
                self.state.location.insert(target, Location::Origin);
                ActionOutcome { status: Success, displacement: Some([-offset[0], -offset[1], -offset[2]]) }
            }
        }
    }

    /// First free slot in the idle band, scanning rows front to back and
    /// each row left to right, one cell apart from other parked objects.
    fn idle_slot(&self, id: u32) -> Option<Cell> {
        let b = self.spec.object(id)?.bounds();
        let [gx, gy, _] = self.spec.grid_dims;
        let (dx, dy) = (b.extent(0), b.extent(1));
        let parked: Vec<Aabb> = self
            .spec
            .objects
            .iter()
            .filter(|o| o.id != id && matches!(self.location(o.id), Location::Idle { .. }))
            .filter_map(|o| Aabb::of(&self.current_voxels(o.id)).map(|a| a.dilate(1)))
            .collect();
        for y in (gy - IDLE_DEPTH)..=(gy - dy) {
            for x in 1..=(gx - dx - 1) {
                let slot = Aabb::new([x, y, 0], [x + dx - 1, y + dy - 1, b.extent(2) - 1]);
                if !parked.iter().any(|p| p.intersects(&slot)) {
                    return Some(grid::sub(slot.min, b.min));
                }
            }
        }
        None
    }

    /// Events whose trigger step has passed and that have not fired yet.
    pub fn due_events(&self, step: u32, all: bool) -> Vec<usize> {
        self.spec
            .events
            .iter()
            .enumerate()
            .filter(|(i, e)| !self.fired.contains(i) && (all || e.trigger_step <= step))
            .map(|(i, _)| i)
            .collect()
    }

    /// Applies the scenario's own events `indices` as one batch and marks
    /// them fired.
    pub fn fire_events(&mut self, indices: &[usize]) -> Result<EventEffect, WorldError> {
        let mut evs = Vec::new();
        for &i in indices {
            let ev = self
                .spec
                .events
                .get(i)
                .cloned()
                .ok_or_else(|| WorldError::Validation(vec![format!("no event {i}")]))?;
            evs.push(ev);
        }
        let eff = self.apply_events(&evs)?;
        self.fired.extend(indices.iter().copied());
        Ok(eff)
    }

    pub fn apply_event(&mut self, event: &InterventionEvent) -> Result<EventEffect, WorldError> {
        self.apply_events(std::slice::from_ref(event))
    }

    /// Applies `events` in order and validates the result once. On error
    /// the world is left unchanged.
    pub fn apply_events(&mut self, events: &[InterventionEvent]) -> Result<EventEffect, WorldError> {
        let before = (self.spec.clone(), self.state.clone());
        let mut total = EventEffect { changed: Vec::new(), disturbed: Vec::new() };
        let mut res = Ok(());
        for ev in events {
            match self.apply_event_inner(ev) {
                Ok(e) => {
                    total.changed.extend(e.changed);
                    total.disturbed.extend(e.disturbed);
                }
                Err(e) => {
                    res = Err(e);
                    break;
                }
            }
        }
        if res.is_ok() {
            self.refresh_derived();
            res = self.spec.validate();
        }
        match res {
            Ok(()) => Ok(total),
            Err(e) => {
                self.spec = before.0;
                self.state = before.1;
                Err(e)
            }
        }
    }

    fn apply_event_inner(&mut self, event: &InterventionEvent) -> Result<EventEffect, WorldError> {
        let invalid = |m: String| Err(WorldError::Validation(vec![m]));
        let effect = match &event.effect {
            EventEffectSpec::AddObject { object } => {
                if self.spec.object(object.id).is_some() || object.id == 0 {
                    return invalid(format!("object id {} already in use", object.id));
                }
                if let Some(c) = object.voxels.iter().find(|c| self.object_at(**c).is_some()) {
                    return invalid(format!("added object {} overlaps the scene at {:?}", object.id, c));
                }
                self.spec.objects.push(object.clone());
                init_state_for(&mut self.state, object);
                EventEffect { changed: vec![object.id], disturbed: object.voxels.clone() }
            }
            EventEffectSpec::RemoveObject { id } => {
                if self.spec.object(*id).is_none() {
                    return invalid(format!("cannot remove missing object {id}"));
                }
                let disturbed = self.current_voxels(*id);
                self.spec.objects.retain(|o| o.id != *id);
                self.state.location.remove(id);
                self.state.open.remove(id);
                EventEffect { changed: vec![*id], disturbed }
            }
            EventEffectSpec::MoveObject { id, destination } => {
                let Some(obj) = self.spec.object(*id) else {
                    return invalid(format!("cannot move missing object {id}"));
                };
                if !obj.movable() {
                    return invalid(format!("object {id} is not movable"));
                }
                let mut disturbed = self.current_voxels(*id);
                match destination {
                    Destination::IdleSpace => {
                        let offset = self.idle_slot(*id).ok_or_else(|| {
                            WorldError::Validation(vec![format!("no idle space for object {id}")])
                        })?;
                        self.state.location.insert(*id, Location::Idle { offset });
                    }
                    Destination::Place { parent, voxels } => {
                        let o = self.spec.objects.iter_mut().find(|o| o.id == *id).expect("checked above");
                        o.voxels = voxels.clone();
                        o.parent = *parent;
                        self.state.location.insert(*id, Location::Origin);
                    }
                }
                disturbed.extend(self.current_voxels(*id));
                EventEffect { changed: vec![*id], disturbed }
            }
        };
        Ok(effect)
    }

    fn refresh_derived(&mut self) {
        let regions = derive_need_to_explore(&self.spec);
        let mut kept: Vec<Region> = self
            .spec
            .need_to_explore
            .iter()
            .copied()
            .filter(|r| regions.contains(r) || self.region_exists(*r))
            .collect();
        for r in regions {
            if !kept.contains(&r) {
                kept.push(r);
            }
        }
        self.spec.need_to_explore = kept;
        let mut vps = derive_viewpoints(&self.spec);
        vps.retain(|v| self.spec.viewpoint(&v.name).is_none());
        let live: BTreeSet<(u32, u32)> = self
            .spec
            .objects
            .iter()
            .flat_map(|o| (0..o.compartments.len() as u32).map(move |k| (o.id, k)))
            .collect();
        self.spec.viewpoints.retain(|v| match v.kind {
            ViewKind::Interior { container, compartment } => live.contains(&(container, compartment)),
            _ => true,
        });
        self.spec.viewpoints.extend(vps);
        if self.spec.gt_graph.is_some() {
            self.spec.gt_graph = derive_gt_graph(&self.spec).ok();
        }
    }

    fn region_exists(&self, r: Region) -> bool {
        match r {
            Region::Compartment { container, compartment } => self.spec.compartment(container, compartment).is_some(),
            Region::Under { id } => self.spec.object(id).is_some(),
        }
    }

    /// Regions observed from any viewpoint in the current state.
    pub fn observable_regions(&self) -> BTreeSet<Region> {
        let mut out = BTreeSet::new();
        for v in &self.spec.viewpoints {
            for r in &self.spec.need_to_explore {
                if self.region_observed(*r, &v.kind) {
                    out.insert(*r);
                }
            }
        }
        out
    }

    /// Objects visible from at least one viewpoint.
    pub fn accessible_objects(&self) -> BTreeSet<u32> {
        self.spec.objects.iter().map(|o| o.id).filter(|id| self.is_accessible(*id)).collect()
    }
}

fn init_state_for(state: &mut WorldState, o: &GroundObject) {
    if !o.compartments.is_empty() {
        state.open.insert(o.id, vec![false; o.compartments.len()]);
    }
    if o.movable() {
        state.location.insert(o.id, Location::Origin);
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
