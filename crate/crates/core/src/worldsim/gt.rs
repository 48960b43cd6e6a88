//! Quantities derived from a scene's declared structure: viewpoints,
//! annotated regions and the ground-truth graph.

use super::{Parent, Region, ScenarioSpec, ViewKind, Viewpoint, World};
use crate::acsg::{ActionType, EdgeKind, GraphError, NodeId, PhysicalState, PrimitiveParams, Relation, SceneGraph};
use crate::catalog::ObjectKind;
use crate::geometry::{self, JointKind, JointParams};
use crate::grid::{self, Cell};
use crate::percept::{prototype, FEATURE_DIM};
use std::collections::BTreeMap;

/// Distance of a compartment's interior viewpoint in front of its handle.
pub const INTERIOR_STANDOFF: f64 = 6.0;

pub fn derive_viewpoints(spec: &ScenarioSpec) -> Vec<Viewpoint> {
    let [gx, gy, gz] = spec.grid_dims.map(|d| d as f64);
    let mut out = vec![
        Viewpoint { name: "overhead".into(), kind: ViewKind::Overhead, position: [gx / 2.0, gy / 2.0, gz + 16.0] },
        Viewpoint { name: "exterior_front".into(), kind: ViewKind::Exterior, position: [gx / 2.0, -16.0, gz / 2.0] },
        Viewpoint { name: "exterior_right".into(), kind: ViewKind::Exterior, position: [gx + 16.0, gy / 2.0, gz / 2.0] },
        Viewpoint { name: "exterior_back".into(), kind: ViewKind::Exterior, position: [gx / 2.0, gy + 16.0, gz / 2.0] },
        Viewpoint { name: "exterior_left".into(), kind: ViewKind::Exterior, position: [-16.0, gy / 2.0, gz / 2.0] },
    ];
    for o in &spec.objects {
        for (k, comp) in o.compartments.iter().enumerate() {
            let k = k as u32;
            let anchor = spec
                .handle_for(o.id, k)
                .and_then(|h| grid::centroid(&h.voxels))
                .unwrap_or_else(|| {
                    let b = comp.interior;
                    grid::scale(grid::to_vec3(grid::add(b.min, b.max)), 0.5)
                });
            let d = grid::to_vec3(comp.articulation.open_dir);
            out.push(Viewpoint {
                name: format!("interior_{}_{}", o.id, k),
                kind: ViewKind::Interior { container: o.id, compartment: k },
                position: grid::vadd(anchor, grid::scale(d, INTERIOR_STANDOFF)),
            });
        }
    }
    out
}

fn conceals(spec: &ScenarioSpec, id: u32) -> bool {
    spec.objects
        .iter()
        .any(|c| matches!(c.parent, Some(Parent::CoveredBy { id: x } | Parent::NestedIn { id: x }) if x == id))
}

/// Every compartment interior plus the space under each concealing object.
pub fn derive_need_to_explore(spec: &ScenarioSpec) -> Vec<Region> {
    let mut out = Vec::new();
    for o in &spec.objects {
        for k in 0..o.compartments.len() {
            out.push(Region::Compartment { container: o.id, compartment: k as u32 });
        }
    }
    for o in &spec.objects {
        if conceals(spec, o.id) {
            out.push(Region::Under { id: o.id });
        }
    }
    out
}

/// Ground-truth graph together with the node of each scene object.
#[derive(Debug, Clone)]
pub struct GtIndex {
    pub graph: SceneGraph,
    pub node_of: BTreeMap<u32, NodeId>,
    pub ground_of: BTreeMap<NodeId, u32>,
}

pub fn derive_gt_graph(spec: &ScenarioSpec) -> Result<SceneGraph, GraphError> {
    gt_index(spec).map(|i| i.graph)
}

fn open_params(spec: &ScenarioSpec, container: u32, compartment: u32) -> (ActionType, PrimitiveParams) {
    let comp = &spec.objects.iter().find(|o| o.id == container).unwrap().compartments[compartment as usize];
    let a = &comp.articulation;
    let ty = match a.joint {
        JointKind::Prismatic => ActionType::OpenDrawer,
        JointKind::Revolute => ActionType::OpenDoor,
    };
    let grasp = spec
        .handle_for(container, compartment)
        .and_then(|h| geometry::pickup_point(&h.voxels))
        .unwrap_or(comp.interior.min);
    let params = PrimitiveParams {
        grasp,
        approach: grid::to_vec3(a.open_dir),
        joint: Some(JointParams { joint: a.joint, axis: a.axis, origin: a.origin }),
    };
    (ty, params)
}

fn pick_params(voxels: &[Cell]) -> PrimitiveParams {
    PrimitiveParams {
        grasp: geometry::pickup_point(voxels).unwrap_or([0; 3]),
        approach: [0.0, 0.0, -1.0],
        joint: None,
    }
}

pub fn gt_index(spec: &ScenarioSpec) -> Result<GtIndex, GraphError> {
    let mut g = SceneGraph::new(FEATURE_DIM);
    let mut node_of = BTreeMap::new();
    let mut objects: Vec<_> = spec.objects.iter().collect();
    objects.sort_by_key(|o| o.id);
    for o in &objects {
        let state = match o.kind {
            ObjectKind::Container => PhysicalState::Closed,
            _ => PhysicalState::AtOrigin,
        };
        let id = g.add_object_node(&o.label, prototype(&o.label, FEATURE_DIM), Some(o.id), state, 0);
        g.mark_explored(id);
        node_of.insert(o.id, id);
    }
    let n = |id: u32| node_of.get(&id).copied().ok_or(GraphError::UnknownTarget(NodeId(id)));

    let mut opens: BTreeMap<(u32, u32), NodeId> = BTreeMap::new();
    for o in &objects {
        for k in 0..o.compartments.len() as u32 {
            let (ty, params) = open_params(spec, o.id, k);
            let h = spec.handle_for(o.id, k).ok_or(GraphError::UnknownTarget(NodeId(o.id)))?;
            let a = g.add_action_node(ty, n(h.id)?, params, 0)?;
            g.add_edge(n(h.id)?, a, EdgeKind::ObjAct)?;
            opens.insert((o.id, k), a);
        }
    }
    let mut picks: BTreeMap<u32, NodeId> = BTreeMap::new();
    let mut pick_of = |g: &mut SceneGraph, id: u32| -> Result<NodeId, GraphError> {
        if let Some(a) = picks.get(&id) {
            return Ok(*a);
        }
        let voxels = &spec.object(id).ok_or(GraphError::UnknownTarget(NodeId(id)))?.voxels;
        let a = g.add_action_node(ActionType::PickToIdle, n(id)?, pick_params(voxels), 0)?;
        g.add_edge(n(id)?, a, EdgeKind::ObjAct)?;
        picks.insert(id, a);
        Ok(a)
    };
    for o in &objects {
        if conceals(spec, o.id) {
            pick_of(&mut g, o.id)?;
        }
    }
    let world = World::new(spec.clone());
    for ((c, k), open) in &opens {
        let region = spec.compartment(*c, *k).expect("compartment exists").blocking_region;
        for b in objects.iter().filter(|b| b.movable()) {
            if world.current_voxels(b.id).iter().any(|v| region.contains(*v)) {
                let p = pick_of(&mut g, b.id)?;
                g.add_edge(p, *open, EdgeKind::ActAct)?;
            }
        }
    }
    for o in &objects {
        let me = n(o.id)?;
        match o.parent {
            None => match o.handle_of {
                Some(h) => {
                    g.add_edge(n(h.container)?, me, EdgeKind::ObjObj(Relation::BelongsTo))?;
                }
                None => {
                    g.add_edge(g.root(), me, EdgeKind::ObjObj(Relation::On))?;
                }
            },
            Some(Parent::On { id }) => {
                g.add_edge(n(id)?, me, EdgeKind::ObjObj(Relation::On))?;
            }
            Some(Parent::Inside { container, compartment }) => {
                g.add_edge(n(container)?, me, EdgeKind::ObjObj(Relation::Inside))?;
                let open = opens
                    .get(&(container, compartment))
                    .copied()
                    .ok_or(GraphError::UnknownTarget(NodeId(container)))?;
                g.add_edge(open, me, EdgeKind::ActObj)?;
            }
            Some(Parent::CoveredBy { id } | Parent::NestedIn { id }) => {
                let p = pick_of(&mut g, id)?;
                g.add_edge(p, me, EdgeKind::ActObj)?;
            }
        }
    }
    let ids: Vec<NodeId> = g.actions().map(|a| a.id).collect();
    for a in ids {
        g.mark_explored(a);
    }
    g.validate()?;
    let ground_of = node_of.iter().map(|(k, v)| (*v, *k)).collect();
    Ok(GtIndex { graph: g, node_of, ground_of })
}

/// Exploratory actions in the ground-truth graph, each counted together
/// with the action that undoes it.
pub fn gt_minimal_action_count(spec: &ScenarioSpec) -> usize {
    derive_gt_graph(spec).map(|g| 2 * g.actions().count()).unwrap_or(0)
}
